"""Seeded synthetic ticket corpus with the same 1:6:3 Change/Problem/Request skew as real data.

Problem and Request tickets draw from their own keyword pools plus a shared,
Zipf-weighted background vocabulary (a few dozen common words and a long tail
of pseudo-words standing in for host names, product codes and the like).
Change tickets read like problem reports (same keyword pool) but carry two
markers from a small release/update pool; a single marker also leaks into a
fraction of Problem tickets. Every class stays learnable, but the minority
class hinges on a cue that an unweighted generative model discounts against
the class prior and against its noisy minority-class estimates.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from pathlib import Path

from doccat.corpus import Label, RawTicket

BACKGROUND = (
    "user users team office laptop desktop monitor printer email outlook calendar server network "
    "vpn wifi portal website application app database report reports dashboard file files folder "
    "drive share sharepoint teams zoom phone mobile account system systems service services tool "
    "tools client customer manager department finance hr sales warehouse branch site building floor "
    "morning afternoon yesterday today week monday friday urgent asap thanks regards hello hi kindly "
    "colleague colleagues project data backup storage cloud browser chrome firefox windows mac linux"
).split()

_SYLLABLES = "ka ri to mu sel bar den fin gol hap lin mor nex par qui ros tam vel wyn zor".split()


def _pseudo_words(n: int) -> list[str]:
    rng = random.Random(20240607)
    words = sorted({rng.choice(_SYLLABLES) + rng.choice(_SYLLABLES) + rng.choice(_SYLLABLES) for _ in range(3 * n)})
    return words[:n]


TAIL = _pseudo_words(1000)
VOCABULARY = BACKGROUND + TAIL
_ZIPF = [1.0 / (rank + 1) for rank in range(len(VOCABULARY))]

KEYWORDS = {
    Label.PROBLEM: (
        "crash crashes crashed error errors failure failed failing outage down broken freeze frozen "
        "timeout slow unresponsive disconnect disconnected corrupted bug glitch stopped hang hangs"
    ).split(),
    Label.REQUEST: (
        "request access permission install installation new license setup configure question "
        "advice help guidance information provide create onboarding order purchase training"
    ).split(),
    Label.CHANGE: "update upgrade patch release version rollout deployment migration".split(),
}


@dataclass(frozen=True)
class SynthConfig:
    n_docs: int = 1200
    ratios: tuple[int, int, int] = (1, 6, 3)
    min_len: int = 8
    max_len: int = 16
    keyword_rate: float = 0.4
    change_keyword_rate: float = 0.35
    change_markers: tuple[int, int] = (2, 2)
    marker_leak: float = 0.04
    seed: int = 0


def class_sizes(n_docs: int, ratios) -> list[int]:
    total = sum(ratios)
    sizes = [n_docs * r // total for r in ratios]
    sizes[1] += n_docs - sum(sizes)
    return sizes


def _draw(rng: random.Random, label: Label, cfg: SynthConfig) -> list[str]:
    n = rng.randint(cfg.min_len, cfg.max_len)
    if label == Label.CHANGE:
        pool, rate = KEYWORDS[Label.PROBLEM], cfg.change_keyword_rate
    else:
        pool, rate = KEYWORDS[label], cfg.keyword_rate
    words = [rng.choice(pool) if rng.random() < rate else rng.choices(VOCABULARY, _ZIPF)[0] for _ in range(n)]
    markers = 0
    if label == Label.CHANGE:
        markers = rng.randint(*cfg.change_markers)
    elif label == Label.PROBLEM and rng.random() < cfg.marker_leak:
        markers = 1
    for _ in range(markers):
        words.insert(rng.randrange(len(words) + 1), rng.choice(KEYWORDS[Label.CHANGE]))
    return words


def generate(cfg: SynthConfig = SynthConfig()) -> list[RawTicket]:
    rng = random.Random(cfg.seed)
    labels = [l for l, n in zip(Label, class_sizes(cfg.n_docs, cfg.ratios)) for _ in range(n)]
    rng.shuffle(labels)
    tickets = []
    for row, label in enumerate(labels, start=1):
        words = _draw(rng, label, cfg)
        cut = rng.randint(2, 4)
        subject = " ".join(words[:cut]).capitalize()
        body = " ".join(words[cut:]) + "."
        tickets.append(RawTicket(subject=subject, body=body, label_text=label.title, source_row=row))
    return tickets


def write_csv(tickets: list[RawTicket], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "body", "type"])
        for t in tickets:
            w.writerow([t.subject, t.body, t.label_text])
