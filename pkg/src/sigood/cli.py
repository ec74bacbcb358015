"""``sigood`` command line: synth, train, detect, eval, bench, verify.

Exit codes: 0 success, 1 runtime or data error (message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, override
from .data import FAMILIES, MOTIFS, parse_tu_dataset, synth_dataset, write_tu_dataset
from .detector import ABLATIONS, MODES, read_scores_csv, run_detector, write_scores_csv, write_trace_csv
from .evaluation import (
    SYNTH_BENCHMARKS, auc, run_benchmark, sensitivity_sweep, synth_pair, write_reference_csv, write_sweep_csv,
)
from .gnn import READOUTS, load_model, pretrain, save_model
from .verification import closed_form_case, gradient_suite, reward_suite

log = logging.getLogger("sigood")


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return override(cfg, "root", seed=args.seed)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"missing {flag} (or set it in the config file)")
    return value


def _write_manifest(out_dir: Path, command: str, cfg: RunConfig, extra: dict | None = None) -> None:
    doc = {"command": command, "seed": cfg.seed, "version": __version__}
    doc.update(extra or {})
    (out_dir / "manifest.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


# -- subcommands ------------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    paths = override(cfg, "paths", data_dir=args.out, dataset=args.name).paths
    out = Path(_require(paths.data_dir, "--out"))
    cfg = cfg.seeded()
    if args.benchmark:
        data = synth_pair(args.benchmark, cfg.synth.seed)
        name = paths.dataset or args.benchmark
        write_tu_dataset(data.train, out, f"{name}_train")
        write_tu_dataset(data.test, out, f"{name}_test")
        print(f"wrote {name}_train ({len(data.train)} graphs) and {name}_test ({len(data.test)} graphs) to {out}")
        return 0
    spec = cfg.synth
    changes = {k: v for k, v in dict(family=args.family, n_graphs=args.n_graphs, edge_prob=args.edge_prob,
                                     motif=args.motif).items() if v is not None}
    if args.mean is not None or args.dim is not None:
        dim = args.dim if args.dim is not None else spec.feature_dim
        mean = args.mean if args.mean is not None else (spec.feature_mean[0] if spec.feature_mean else 0.0)
        changes["feature_mean"] = (mean,) * dim
    spec = spec.replace(**changes)
    ds = synth_dataset(spec)
    name = paths.dataset or spec.name
    write_tu_dataset(ds, out, name)
    print(f"wrote {name} ({len(ds)} graphs, d={ds.feature_dim}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "paths", data_dir=args.data_dir, dataset=args.dataset, checkpoint=args.checkpoint)
    cfg = override(cfg, "pretrain", epochs=args.epochs, lr=args.lr, hidden_dim=args.hidden_dim,
                   readout=args.readout, margin_weight=args.margin_weight, energy_margin=args.energy_margin)
    cfg = cfg.seeded()
    ds = parse_tu_dataset(_require(cfg.paths.data_dir, "--data-dir"), _require(cfg.paths.dataset, "--dataset"))
    model = pretrain(ds, cfg.pretrain)
    path = save_model(model, _require(cfg.paths.checkpoint, "--checkpoint"))
    print(f"saved checkpoint {path} (sha256 {model.checksum()[:16]})")
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "paths", data_dir=args.data_dir, dataset=args.dataset, checkpoint=args.checkpoint,
                   scores=args.scores, trace=args.trace)
    cfg = override(cfg, "detector", beta=args.beta, iterations=args.iterations, lr=args.lr, mode=args.mode,
                   pg_depth=args.pg_depth, tau=args.tau, ablation=args.ablation,
                   score_sign=-1 if args.flip_sign else None)
    cfg = cfg.seeded()
    model = load_model(_require(cfg.paths.checkpoint, "--checkpoint"))
    ds = parse_tu_dataset(_require(cfg.paths.data_dir, "--data-dir"), _require(cfg.paths.dataset, "--dataset"))
    results, _ = run_detector(ds, model, cfg.detector)
    scores_path = Path(_require(cfg.paths.scores, "--scores"))
    write_scores_csv(results, scores_path)
    if cfg.paths.trace:
        write_trace_csv(results, cfg.paths.trace)
    n_ood = sum(r.decision == "OOD" for r in results)
    print(f"scored {len(results)} graphs ({n_ood} flagged OOD at tau={cfg.detector.tau}) -> {scores_path}")
    return 0


def cmd_eval(args) -> int:
    scores, labels = read_scores_csv(args.scores)
    if args.labels:
        labels = np.loadtxt(args.labels, dtype=np.int64, ndmin=1)
    if labels is None:
        raise ValueError(f"{args.scores}: no label column; pass --labels")
    a = auc(scores, labels)
    print(f"auc={a:.6f} auc_flipped={1.0 - a:.6f} n={scores.size}")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    cfg = override(cfg, "paths", output_dir=args.output_dir)
    if args.methods:
        cfg = override(cfg, "benchmark", methods=tuple(args.methods))
    if args.seeds:
        cfg = override(cfg, "benchmark", seeds=tuple(args.seeds))
    if args.timing:
        cfg = override(cfg, "benchmark", timing=True)
    cfg = override(cfg, "detector", iterations=args.iterations, beta=args.beta)
    out = Path(_require(cfg.paths.output_dir, "--output-dir"))
    out.mkdir(parents=True, exist_ok=True)
    report = run_benchmark(cfg.benchmark_config())
    report.write_csv(out / "report.csv")
    report.write_aggregate_csv(out / "aggregate.csv")
    write_reference_csv(out / "reference.csv")
    files = ["report.csv", "aggregate.csv", "reference.csv"]
    if args.sweep:
        bench = cfg.benchmark_config()
        entry, seed = bench.datasets[0], bench.seeds[0]
        data = entry.load(seed)
        model = pretrain(data.train, replace(cfg.pretrain, seed=seed))
        rows = sensitivity_sweep(data, model, cfg.detector.replace(seed=seed), depths=(1, 2, 3))
        write_sweep_csv(rows, out / "sensitivity.csv")
        files.append("sensitivity.csv")
    _write_manifest(out, "bench", cfg, {"seeds": list(cfg.benchmark_config().seeds), "files": files})
    for a in report.aggregate():
        print(f"{a.dataset:20s} {a.method:12s} mean_auc={a.mean_auc:.4f} std={a.std_auc:.4f} (n={a.n_seeds})")
    return 0


def cmd_verify(args) -> int:
    ok = True
    grads = gradient_suite(args.instances, args.seed)
    for check in sorted({g.check for g in grads}):
        rows = [g for g in grads if g.check == check]
        worst = max(g.max_rel_error for g in rows)
        passed = all(g.passed for g in rows)
        ok &= passed
        print(f"grad {check:14s} {'PASS' if passed else 'FAIL'} max_rel_error={worst:.3e} over {len(rows)} instances")
    for case in reward_suite(10, args.seed):
        ok &= case.passed
        print(f"reward k={len(case.p)} #{case.instance} {'PASS' if case.passed else 'FAIL'} "
              f"distance={case.distance:.3e} (< {2 * case.grid_step:.3e})")
    cf = closed_form_case()
    ok &= cf.passed
    print(f"reward closed form q*={np.round(cf.q_grid, 4).tolist()} gibbs={np.round(cf.q_closed_form, 4).tolist()} "
          f"{'PASS' if cf.passed else 'FAIL'}")
    print("verify: all checks passed" if ok else "verify: FAILURES")
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sigood", description="Test-time graph OOD detection with energy-preference prompt optimization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="seed for every random component (overrides the config)")

    s = sub.add_parser("synth", help="write a synthetic TU-format dataset")
    common(s)
    s.add_argument("--out", help="output directory")
    s.add_argument("--name", help="dataset name (file prefix)")
    s.add_argument("--benchmark", choices=SYNTH_BENCHMARKS, help="write a <name>_train / <name>_test benchmark pair")
    s.add_argument("--family", choices=FAMILIES)
    s.add_argument("--n-graphs", type=int)
    s.add_argument("--edge-prob", type=float)
    s.add_argument("--motif", choices=MOTIFS)
    s.add_argument("--mean", type=float, help="feature mean (same value in every dimension)")
    s.add_argument("--dim", type=int, help="feature dimension")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="pretrain the encoder, classifier and scoring head")
    common(t)
    t.add_argument("--data-dir")
    t.add_argument("--dataset")
    t.add_argument("--checkpoint", help="output checkpoint path")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--hidden-dim", type=int)
    t.add_argument("--readout", choices=READOUTS)
    t.add_argument("--margin-weight", type=float)
    t.add_argument("--energy-margin", type=float)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="score a test set with a frozen checkpoint")
    common(d)
    d.add_argument("--checkpoint")
    d.add_argument("--data-dir")
    d.add_argument("--dataset")
    d.add_argument("--scores", help="output scores CSV")
    d.add_argument("--trace", help="optional per-iteration trace CSV")
    d.add_argument("--beta", type=float)
    d.add_argument("--iterations", type=int)
    d.add_argument("--lr", type=float)
    d.add_argument("--mode", choices=MODES)
    d.add_argument("--pg-depth", type=int, choices=(1, 2, 3))
    d.add_argument("--tau", type=float)
    d.add_argument("--ablation", choices=ABLATIONS)
    d.add_argument("--flip-sign", action="store_true", help="score with +loss instead of -loss")
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="AUC of a scores CSV")
    e.add_argument("--scores", required=True)
    e.add_argument("--labels", help="file with one 0/1 label per line (default: the CSV label column)")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="run the benchmark described by a config file")
    common(b)
    b.add_argument("--output-dir")
    b.add_argument("--methods", nargs="+")
    b.add_argument("--seeds", nargs="+", type=int)
    b.add_argument("--iterations", type=int)
    b.add_argument("--beta", type=float)
    b.add_argument("--timing", action="store_true", help="record runtimes (makes the report non-reproducible)")
    b.add_argument("--sweep", action="store_true", help="also run the beta / iteration / depth sensitivity sweep")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="gradient checks and the reward-derivation witness")
    v.add_argument("--instances", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sigood {args.command}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, ConfigError, FloatingPointError) as exc:
        print(f"sigood {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
