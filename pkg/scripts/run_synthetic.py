"""Cross-validate every model on the synthetic ticket corpus and print accuracy and per-class recall.

    python3 scripts/run_synthetic.py --gen-seeds 0 1 2
"""

import argparse
import time

from doccat.corpus import build_dataset
from doccat.evaluate import run_cv
from doccat.models import make_spec
from doccat.synth import SynthConfig, generate

# the library BiLSTM defaults underfit a 1,200-document corpus; see README
BILSTM = {
    "hidden_sizes": "16",
    "embedding_dim": "16",
    "batch_size": "16",
    "learning_rate": "0.3",
    "max_len": "40",
    "patience": "4",
    "max_epochs": "30",
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gen-seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--models", nargs="+", default=["majority", "nb", "logreg", "bilstm"])
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--n-docs", type=int, default=1200)
    args = ap.parse_args()

    print(f"{'gen':>4} {'model':<9}{'acc':>8}{'std':>8}{'R Change':>10}{'R Problem':>10}{'R Request':>10}{'secs':>8}")
    for gs in args.gen_seeds:
        ds = build_dataset(generate(SynthConfig(n_docs=args.n_docs, seed=gs)))
        for name in args.models:
            spec = "majority" if name == "majority" else make_spec(name, BILSTM if name == "bilstm" else {})
            t0 = time.perf_counter()
            agg = run_cv(ds, spec, k=args.k, repeats=args.repeats, seed=0).aggregate()
            rec = [agg["per_class"][c]["recall"] for c in ("Change", "Problem", "Request")]
            print(
                f"{gs:>4} {name:<9}{agg['accuracy_mean']:>8.4f}{agg['accuracy_std']:>8.4f}"
                + "".join(f"{r:>10.3f}" for r in rec)
                + f"{time.perf_counter() - t0:>8.1f}",
                flush=True,
            )


if __name__ == "__main__":
    main()
