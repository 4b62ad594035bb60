"""Run the pipeline on a real incubator corpus and compare with reference envelopes.

The corpus directory needs a ``labels.csv`` (project_id,label[,start,end])
and one sub-directory per project holding ``*.mbox`` archives and
``commits*.csv`` tables. Example::

    python3 scripts/corpus_replication.py --corpus /data/asfi --work /tmp/asfi --repeats 10

The script prints, for each of the 18 features, the corpus 5th/50th/95th
percentiles of whole-incubation values next to the reference 5%-95%
envelope, followed by the month-8 and final held-out accuracy.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ossustain import features as ft
from ossustain import pipeline as pl
from ossustain import seqmodel as sm
from ossustain.events import load_events

# 5th and 95th percentiles of project-level values on the ASFI incubator corpus
REFERENCE_ENVELOPES = {
    "num_files": (122.45, 5436.6),
    "num_emails": (262.65, 12463.6),
    "num_commits": (453.8, 36359.7),
    "num_act_devs": (25, 415.05),
    "c_interruption": (0.03, 0.60),
    "e_interruption": (0.01, 0.32),
    "top_c_fract": (0.38, 0.94),
    "top_e_fract": (0.49, 0.85),
    "c_nodes": (2, 49.9),
    "c_edges": (1, 531.5),
    "c_c_coef": (0, 1),
    "c_long_tail": (0, 33.85),
    "c_mean_degree": (1, 23.75),
    "e_nodes": (22, 408.15),
    "e_edges": (47.1, 1315.9),
    "e_c_coef": (0.28, 0.58),
    "e_long_tail": (3, 24.95),
    "e_mean_degree": (3.88, 9.62),
}


def summaries(out: Path, seqs: list[ft.FeatureSequence]) -> list[dict[str, float]]:
    index = {e["project_id"]: e for e in json.loads((out / "events" / "index.json").read_text())}
    rows = []
    for s in seqs:
        entry = index[s.project_id]
        start = tuple(int(v) for v in entry["start"].split("-"))
        events = load_events(out / "events" / s.project_id / "events.csv")
        rows.append(ft.project_summary(events, start, entry["months"], s))
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--work", type=Path, required=True, help="output directory for pipeline stages")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--month", type=int, default=8)
    args = p.parse_args(argv)

    pl.run_ingest(pl.PipelineManifest.from_corpus(args.corpus, args.work))
    seqs = pl.run_features(args.work)
    rows = summaries(args.work, seqs)
    inside = 0
    print(f"{'feature':<16}{'p5':>12}{'median':>12}{'p95':>12}   envelope")
    for name, (lo, hi) in REFERENCE_ENVELOPES.items():
        vals = np.array([r[name] for r in rows])
        q5, q50, q95 = np.percentile(vals, [5, 50, 95])
        ok = lo <= q50 <= hi
        inside += ok
        print(f"{name:<16}{q5:>12.3f}{q50:>12.3f}{q95:>12.3f}   [{lo}, {hi}] {'in' if ok else 'OUT'}")
    print(f"{inside}/18 medians inside their envelope")

    pl.run_train(args.work, sm.TrainConfig(seed=args.seed, repeats=args.repeats))
    sys.stdout.write(pl.month_table(args.work, args.month))
    print(f"final accuracy: {pl.final_accuracy(args.work):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
