"""Command-line front end.

Exit codes: 0 success, 1 internal error, 2 user or input error.
Set OSSUSTAIN_LOG (DEBUG, INFO, WARNING, ...) to control verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import explain as ex
from . import features as ft
from . import monitor as mon
from . import pipeline as pl
from . import seqmodel as sm
from . import synth
from .ingest import IngestError

log = logging.getLogger("ossustain")


def parse_config(text: str) -> dict[str, dict]:
    """Parse ``[section]`` headers and ``key = value`` lines.

    Values are read as JSON when possible (numbers, booleans, quoted
    strings), otherwise kept as bare strings. Keys before any section
    header land in the "" section.
    """
    out: dict[str, dict] = {"": {}}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." in key and section == "":
            sec, key = key.split(".", 1)
            target = out.setdefault(sec, {})
        else:
            target = out[section]
        try:
            target[key] = json.loads(value.replace("'", '"'))
        except json.JSONDecodeError:
            target[key] = value
    return out


def _apply(cls, overrides: dict, **explicit):
    names = {f.name for f in fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(sorted(unknown))}")
    kwargs = {**overrides, **{k: v for k, v in explicit.items() if v is not None}}
    return cls(**kwargs)


def _config(args) -> dict[str, dict]:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise pl.StageError(f"config file not found: {path}")
        return parse_config(path.read_text(encoding="utf-8"))
    return {}


def cmd_synth(args, cfg) -> int:
    conf = _apply(synth.SynthConfig, cfg.get("synth", {}), n_projects=args.projects, signal=args.signal,
                  seed=args.seed, min_months=args.min_months, max_months=args.max_months)
    projects = synth.generate(conf, Path(args.out))
    print(f"wrote {len(projects)} projects to {args.out}")
    return 0


def cmd_ingest(args, cfg) -> int:
    if args.manifest:
        manifest = pl.PipelineManifest.from_json(Path(args.manifest))
        if args.out:
            manifest.output = Path(args.out)
    else:
        manifest = pl.PipelineManifest.from_corpus(Path(args.corpus), Path(args.out), args.labels)
    summary = pl.run_ingest(manifest)
    total = summary["total"]
    print(f"ingested {len(summary['projects'])} projects: {total['messages_parsed']} messages, "
          f"{total['commits_parsed']} commits")
    return 0


def cmd_features(args, cfg) -> int:
    fconf = _apply(ft.FeatureConfig, cfg.get("features", {}))
    lconf = _apply(ft.LassoConfig, cfg.get("lasso", {}), lam=args.lam)
    seqs = pl.run_features(Path(args.out), fconf, lconf, dump_graphs=args.dump_graphs)
    print(f"features for {len(seqs)} projects")
    return 0


def cmd_train(args, cfg) -> int:
    tconf = _apply(sm.TrainConfig, cfg.get("train", {}), seed=args.seed, repeats=args.repeats,
                   epochs=args.epochs, workers=args.workers)
    runs, report = pl.run_train(Path(args.out), tconf)
    acc = report.final["accuracy"]
    print(f"final accuracy: {acc[0]:.4f} +/- {acc[1]:.4f} over {acc[2]} repeats")
    return 0


def cmd_forecast(args, cfg) -> int:
    out = Path(args.out)
    trajectories = pl.run_forecast(out)
    print(f"trajectories for {len(trajectories)} projects")
    if args.month is not None:
        sys.stdout.write(pl.month_table(out, args.month))
    print(f"final accuracy: {pl.final_accuracy(out):.4f}")
    return 0


def cmd_explain(args, cfg) -> int:
    econf = _apply(ex.ExplainerConfig, cfg.get("explain", {}), seed=args.seed, num_samples=args.samples,
                   bucket_months=args.bucket)
    expls = pl.run_explain(Path(args.out), econf, args.project or None)
    print(f"explained {len(expls)} projects")
    return 0


def cmd_monitor(args, cfg) -> int:
    alerts = pl.run_monitor(
        Path(args.out),
        threshold=args.threshold,
        relative=args.relative,
        trajectories_path=Path(args.trajectories) if args.trajectories else None,
        action_table=Path(args.actions) if args.actions else None,
    )
    print(f"{len(alerts)} alerts")
    return 0


def cmd_report(args, cfg) -> int:
    rdir = pl.run_report(Path(args.out))
    print(f"report written to {rdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ossustain", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--out", required=out_required, help="pipeline output directory")
        sp.add_argument("--config", help="key = value config file with [section] headers")
        return sp

    sp = common(sub.add_parser("synth", help="generate a synthetic corpus"))
    sp.add_argument("--projects", type=int)
    sp.add_argument("--signal", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--min-months", type=int)
    sp.add_argument("--max-months", type=int)
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("ingest", help="parse archives into the event store"), out_required=False)
    sp.add_argument("--corpus", help="corpus root with <project>/ directories")
    sp.add_argument("--labels", help="labels CSV (default <corpus>/labels.csv)")
    sp.add_argument("--manifest", help="JSON pipeline manifest instead of --corpus")
    sp.set_defaults(func=cmd_ingest)

    sp = common(sub.add_parser("features", help="monthly feature sequences, group tests, lasso"))
    sp.add_argument("--lambda", dest="lam", type=float, default=0.001)
    sp.add_argument("--dump-graphs", action="store_true")
    sp.set_defaults(func=cmd_features)

    sp = common(sub.add_parser("train", help="train the LSTM over repeated splits"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--repeats", type=int, default=10)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_train)

    sp = common(sub.add_parser("forecast", help="graduation forecast trajectories"))
    sp.add_argument("--month", type=int, help="print the evaluation table for this month")
    sp.set_defaults(func=cmd_forecast)

    sp = common(sub.add_parser("explain", help="local surrogate coefficients per project"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--bucket", type=int)
    sp.add_argument("--project", action="append")
    sp.set_defaults(func=cmd_explain)

    sp = common(sub.add_parser("monitor", help="downturn alerts and bounce-up statistics"))
    sp.add_argument("--threshold", type=float, default=mon.DEFAULT_THRESHOLD)
    sp.add_argument("--relative", action="store_true", help="threshold is a relative drop")
    sp.add_argument("--trajectories", help="trajectory CSV (default <out>/forecast/trajectories.csv)")
    sp.add_argument("--actions", help="project-specific action table TSV")
    sp.set_defaults(func=cmd_monitor)

    sp = common(sub.add_parser("report", help="plot-ready CSV bundles"))
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("OSSUSTAIN_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "ingest" and not (args.corpus or args.manifest):
        parser.error("ingest needs --corpus or --manifest")
    if args.command == "ingest" and args.corpus and not args.out:
        parser.error("ingest --corpus needs --out")
    try:
        return args.func(args, _config(args))
    except (pl.StageError, IngestError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
