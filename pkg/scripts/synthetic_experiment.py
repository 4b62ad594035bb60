"""Run the whole pipeline on a synthetic corpus and report held-out accuracy.

Example::

    python3 scripts/synthetic_experiment.py --signal 1.0 --projects 200 --work /tmp/synth1
    python3 scripts/synthetic_experiment.py --signal 0.0 --projects 200 --work /tmp/synth0

With ``--signal 0`` the labels carry no information, so accuracy should
stay near the label prior; the script reports a two-sided binomial test
of the deployed model's held-out predictions against that prior.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from scipy.stats import binomtest

from ossustain import pipeline as pl
from ossustain import seqmodel as sm
from ossustain import synth


@dataclass
class ExperimentResult:
    signal: float
    projects: int
    final_accuracy_mean: float
    final_accuracy_stderr: float
    deployed_correct: int
    deployed_tested: int
    binomial_p: float
    seconds: float


def run_experiment(
    work: Path,
    signal: float,
    projects: int = 200,
    seed: int = 0,
    repeats: int = 3,
    epochs: int = 50,
    label_prior: float = 0.79,
) -> ExperimentResult:
    t0 = time.perf_counter()
    corpus, out = work / "corpus", work / "out"
    synth.generate(synth.SynthConfig(n_projects=projects, signal=signal, seed=seed, label_prior=label_prior), corpus)
    pl.run_ingest(pl.PipelineManifest.from_corpus(corpus, out))
    pl.run_features(out)
    runs, report = pl.run_train(out, sm.TrainConfig(seed=seed, repeats=repeats, epochs=epochs))
    deployed = runs[0].final
    correct = int(round(deployed["accuracy"] * deployed["n"]))
    p = binomtest(correct, int(deployed["n"]), label_prior, alternative="two-sided").pvalue
    mean, se, _ = report.final["accuracy"]
    return ExperimentResult(signal, projects, mean, se, correct, int(deployed["n"]), float(p), time.perf_counter() - t0)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", required=True, help="scratch directory for corpus and pipeline output")
    ap.add_argument("--signal", type=float, default=1.0)
    ap.add_argument("--projects", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args(argv)
    res = run_experiment(Path(args.work), args.signal, args.projects, args.seed, args.repeats, args.epochs)
    print(json.dumps(res.__dict__, indent=1))
    return 0


if __name__ == "__main__":
    sys.exit(main())
