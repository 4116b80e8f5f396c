"""Drive a live ``doccat serve`` with synthetic tickets and report routing throughput.

    python3 scripts/soak.py --tickets 5000 --workers 4
"""

import argparse
import http.client
import json
import subprocess
import sys
import tempfile
import time
from collections import Counter
from pathlib import Path

from doccat.synth import SynthConfig, generate, write_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tickets", type=int, default=1000)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--model-type", default="nb", choices=["nb", "logreg"])
    ap.add_argument("--workdir", help="keep state here instead of a temp dir")
    args = ap.parse_args()

    work = Path(args.workdir or tempfile.mkdtemp(prefix="doccat-soak-"))
    work.mkdir(parents=True, exist_ok=True)
    tickets = generate(SynthConfig(n_docs=max(args.tickets, 1200), seed=3))
    write_csv(tickets, work / "train.csv")
    model = work / "model.bin"
    subprocess.run(
        [sys.executable, "-m", "doccat", "train", "--model", args.model_type, "--data", str(work / "train.csv"), "--out", str(model)],
        check=True,
        stdout=subprocess.DEVNULL,
    )
    conf = work / "router.conf"
    conf.write_text(
        f"listen = 127.0.0.1:0\npersistence = state/events.log\nsink_dir = state/sinks\n"
        f"worker_count = {args.workers}\nqueue_capacity = {args.tickets + 1}\n"
    )
    proc = subprocess.Popen([sys.executable, "-m", "doccat", "serve", "--model", str(model), "--config", str(conf)], stdout=subprocess.PIPE, text=True)
    try:
        port = int(proc.stdout.readline().split()[2].rsplit(":", 1)[1])
        conn = http.client.HTTPConnection("127.0.0.1", port)

        def call(method, path, body=None):
            conn.request(method, path, json.dumps(body) if body is not None else None, {"Content-Type": "application/json"})
            resp = conn.getresponse()
            return resp.status, json.loads(resp.read())

        t0 = time.perf_counter()
        statuses = Counter(call("POST", "/tickets", {"subject": t.subject, "body": t.body})[0] for t in tickets[: args.tickets])
        accepted_in = time.perf_counter() - t0
        while True:
            _, snap = call("GET", "/metrics")
            if snap["states"]["routed"] + snap["states"]["failed"] >= statuses[202]:
                break
            time.sleep(0.01)
        total = time.perf_counter() - t0
    finally:
        proc.terminate()
        proc.wait()

    sinks = {p.stem: sum(1 for _ in p.open()) for p in sorted((work / "state" / "sinks").glob("*.jsonl"))}
    print(f"submitted {args.tickets}: {dict(statuses)} in {accepted_in:.2f}s")
    print(f"all terminal after {total:.2f}s: {args.tickets / total:.0f} tickets/s")
    print(f"states {snap['states']}")
    print(f"workers {snap['workers']}")
    print(f"sink lines {sinks}")
    print(f"state kept in {work}")


if __name__ == "__main__":
    main()
