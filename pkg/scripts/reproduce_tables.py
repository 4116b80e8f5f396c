"""Full experiment run on a ticket CSV: CV tables for the sparse models, a BiLSTM
single-split run and a throughput table.

    python3 scripts/reproduce_tables.py --data tickets.csv --out results/

The BiLSTM step is slow on one CPU (tens of minutes); skip it with --no-bilstm.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from doccat.corpus import assign_folds, load_dataset
from doccat.envelope import save
from doccat.evaluate import bench, metrics, run_cv
from doccat.models import fit, make_spec, predict_docs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--out", default="results")
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--no-bilstm", action="store_true")
    ap.add_argument("--bilstm-lr", default="0.3")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ds = load_dataset(args.data)
    print(f"{len(ds)} documents, classes Change/Problem/Request = {ds.class_counts}, dropped {ds.dropped_count}")

    for name in ("majority", "nb", "logreg"):
        spec = "majority" if name == "majority" else make_spec(name)
        rep = run_cv(ds, spec, k=5, repeats=args.repeats, seed=0)
        (out / f"cv_{name}.json").write_text(rep.to_json())
        print(rep.render(), flush=True)

    models = [(n, fit(make_spec(n), ds.documents)) for n in ("nb", "logreg")]
    if not args.no_bilstm:
        folds = assign_folds(ds, 5, 0, 0)
        spec = make_spec("bilstm", {"hidden_sizes": "128", "batch_size": "64", "learning_rate": args.bilstm_lr, "patience": "4"})
        t0 = time.perf_counter()
        model = fit(spec, ds.subset(folds.train_ids(0)), log=print)
        test = ds.subset(folds.test_ids(0))
        preds, _ = predict_docs(model, test)
        truth = np.array([int(d.label) for d in test])
        m = np.zeros((3, 3), dtype=int)
        np.add.at(m, (truth, preds), 1)
        res = metrics(m)
        summary = {"accuracy": res.accuracy, "macro_f1": res.macro_f1, "matrix": m.tolist(), "seconds": time.perf_counter() - t0}
        (out / "bilstm_split.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(f"bilstm single split: accuracy {res.accuracy:.4f} macro-F1 {res.macro_f1:.4f} ({summary['seconds']:.0f}s)")
        save(model, out / "bilstm.model", ds.fingerprint())
        models.append(("bilstm", model))

    report = bench(models, list(ds.documents)[:2000], [1, 32, 64])
    (out / "throughput.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(report.render())


if __name__ == "__main__":
    main()
