"""``frossl-lab`` command-line interface.

Exit codes: 0 success, 1 a check ran and failed, 2 usage or config error,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import bench as bn
from . import matrixlab as ml
from .datasets import DatasetHandle, load_idx, synth_gaussian_mixture
from .errors import (
    DegenerateInputError,
    FormatError,
    FrosslError,
    NumericalAbort,
    ParameterError,
)
from .gradients import grad_check
from .objectives import KINDS, ObjectiveSpec
from .plotting import save_trajectory_png, trajectory_svg
from .trainer import (
    REFERENCE_NOISE,
    REFERENCE_SPREAD,
    AugSpec,
    TrainConfig,
    TrajectoryRecord,
    save_checkpoint,
    train_run,
)
from .verify import SUITES, format_table, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "FROSSL_SEED"
TRAJECTORY_NAME = "trajectory.csv"
CHECKPOINT_NAME = "checkpoint.bin"
MANIFEST_NAME = "manifest.json"


class ConfigError(Exception):
    pass


# -- configuration -----------------------------------------------------------

# (type, default); None as default marks a required key
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "train": {
        "objective": (str, None),
        "views": (int, 2),
        "batch_size": (int, 256),
        "learning_rate": (float, 0.01),
        "steps": (int, 2000),
        "seed": (int, 0),
        "top_k": (int, 20),
        "record_every": (int, 10),
        "output_dim": (int, 20),
        "hidden_dims": (str, ""),
        "init_scale": (float, 1.0),
        "probe_enabled": (bool, False),
        "probe_lr": (float, 0.1),
        "eval_size": (int, 1000),
        "standardize_inputs": (bool, True),
    },
    "objective": {
        "gamma": (str, ""),
        "eps": (str, ""),
        "reduction": (str, ""),
        "lambda_bt": (str, ""),
        "normalization": (str, ""),
        "a2_sign": (str, ""),
        "var_weight": (str, ""),
        "cov_weight": (str, ""),
    },
    "augment": {
        "noise_std": (float, REFERENCE_NOISE),
        "dropout_prob": (float, 0.0),
        "shift_max": (int, 0),
    },
    "data": {
        "source": (str, "synthetic"),
        "classes": (int, 10),
        "dim": (int, 64),
        "per_class": (int, 500),
        "spread": (float, REFERENCE_SPREAD),
        "seed": (str, ""),
        "images": (str, ""),
        "labels": (str, ""),
        "features": (str, ""),
    },
}

_OBJECTIVE_PARAM_TYPES = {"eps": float, "reduction": str, "lambda_bt": float,
                          "normalization": str, "a2_sign": bool, "var_weight": float,
                          "cov_weight": float}


def _coerce(section: str, key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {typ.__name__}") from None


def parse_overrides(items: list[str]) -> list[tuple[str, str, str]]:
    out = []
    for item in items or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.append((section, name, value))
    return out


def resolve_config(path: str | None, overrides: list[str], env=None) -> dict:
    """Merge defaults, the INI file, ``--set`` overrides and ``FROSSL_SEED``."""
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    raw: dict[str, dict[str, str]] = {s: {} for s in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]; expected {sorted(SCHEMA)}")
        raw[section].update(parser.items(section))
    for section, key, value in parse_overrides(overrides):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section {section!r} in --set")
        raw[section][key] = value
    if env.get(SEED_ENV):
        raw["train"]["seed"] = env[SEED_ENV]
    resolved: dict[str, dict] = {}
    for section, fields in SCHEMA.items():
        unknown = set(raw[section]) - set(fields)
        if unknown:
            raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{section}]")
        resolved[section] = {}
        for key, (typ, default) in fields.items():
            if key in raw[section]:
                resolved[section][key] = _coerce(section, key, raw[section][key], typ)
            elif default is None:
                raise ConfigError(f"missing required field {section}.{key}")
            else:
                resolved[section][key] = default
    if resolved["train"]["objective"] not in KINDS:
        raise ConfigError(f"train.objective: unknown objective "
                          f"{resolved['train']['objective']!r}; expected one of {KINDS}")
    if resolved["data"]["seed"] == "":
        resolved["data"]["seed"] = resolved["train"]["seed"]
    else:
        resolved["data"]["seed"] = _coerce("data", "seed", str(resolved["data"]["seed"]), int)
    return resolved


def build_spec(cfg: dict) -> ObjectiveSpec:
    kind = cfg["train"]["objective"]
    sec = cfg["objective"]
    gamma = _coerce("objective", "gamma", sec["gamma"], float) if sec["gamma"] != "" else None
    params = {k: _coerce("objective", k, v, _OBJECTIVE_PARAM_TYPES[k])
              for k, v in sec.items() if k != "gamma" and v != ""}
    return ObjectiveSpec(kind, gamma, params)


def build_train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    hidden = tuple(int(x) for x in t.pop("hidden_dims").split(",") if x.strip())
    t.pop("objective")
    return TrainConfig(objective=build_spec(cfg), hidden_dims=hidden,
                       augmentation=AugSpec(**cfg["augment"]), **t)


def build_dataset(cfg: dict) -> DatasetHandle:
    d = cfg["data"]
    if d["source"] == "synthetic":
        return synth_gaussian_mixture(d["classes"], d["dim"], d["per_class"], d["spread"], d["seed"])
    if d["source"] == "idx":
        if not d["images"] or not d["labels"]:
            raise ConfigError("data.source=idx needs data.images and data.labels")
        return load_idx(d["images"], d["labels"])
    if d["source"] == "csv":
        if not d["features"] or not d["labels"]:
            raise ConfigError("data.source=csv needs data.features and data.labels")
        return load_csv_dataset(d["features"], d["labels"])
    raise ConfigError(f"data.source must be synthetic, idx or csv, got {d['source']!r}")


def load_csv_dataset(features_path, labels_path) -> DatasetHandle:
    X = ml.read_csv(features_path)
    y = np.loadtxt(labels_path, dtype=np.int64, ndmin=1)
    return DatasetHandle(X, y, int(y.max()) + 1 if y.size else 1, "csv")


# -- commands ------------------------------------------------------------------


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)


def cmd_train(args) -> int:
    if args.manifest:
        try:
            manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
            cfg = manifest["config"]
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot use manifest {args.manifest}: {exc}") from None
        out = Path(args.out) if args.out else Path(args.manifest).parent
    else:
        cfg = resolve_config(args.config, args.set)
        out = Path(args.out)
    train_cfg = build_train_config(cfg)
    data = build_dataset(cfg)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {"trajectory": TRAJECTORY_NAME, "checkpoint": CHECKPOINT_NAME}
    if args.figures:
        artifacts.update(svg="trajectory.svg", png="trajectory.png")
    manifest = {"tool": "frossl-lab", "version": __version__, "seed": cfg["train"]["seed"],
                "config": cfg, "artifacts": artifacts}
    _write_json(out / MANIFEST_NAME, manifest)
    result = train_run(train_cfg, data)
    result.trajectory.write_csv(out / TRAJECTORY_NAME)
    save_checkpoint(result.encoder, out / CHECKPOINT_NAME)
    if args.figures:
        title = f"{cfg['train']['objective']} seed {cfg['train']['seed']}"
        (out / "trajectory.svg").write_text(trajectory_svg(result.trajectory, args.log_y, title),
                                            encoding="utf-8")
        save_trajectory_png(result.trajectory, out / "trajectory.png", args.log_y, title)
    print(f"wrote {out / TRAJECTORY_NAME} ({len(result.trajectory)} rows) "
          f"and {out / CHECKPOINT_NAME}")
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite)
    print(format_table(checks))
    return EXIT_OK if all(c.passed for c in checks) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    kinds = KINDS if args.objective == "all" else (args.objective,)
    reports = [grad_check(ObjectiveSpec(k), trials=args.trials, seed=args.seed) for k in kinds]
    print(f"{'objective':<14} {'trials':>6} {'max_rel_err':>12} {'tol':>8}  result")
    for r in reports:
        print(f"{r['objective']:<14} {r['trials']:>6} {r['max_rel_err']:>12.3e} "
              f"{r['tolerance']:>8.0e}  {'PASS' if r['pass'] else 'FAIL'}")
    if args.json:
        _write_json(Path(args.json), {"reports": reports})
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_FAIL


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_bench(args) -> int:
    if args.mode == "d-sweep":
        report = bn.d_sweep(args.objective, args.N, args.grid, args.reps, args.warmup)
    else:
        report = bn.views_scaling(ObjectiveSpec(args.objective), args.N, args.D, args.grid,
                                  args.reps, args.warmup)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow([report.axis, "median_s", "mad_s"])
    for g, m, d in zip(report.grid, report.medians, report.mads):
        writer.writerow([g, f"{m:.6e}", f"{d:.6e}"])
    print(f"# slope={report.slope:.4f} r2={report.r2:.4f} pinned={report.pinned}")
    if args.json:
        _write_json(Path(args.json), report.to_dict())
    if args.figure:
        save_bench_figure(report, args.figure)
    return EXIT_OK


def save_bench_figure(report: bn.BenchReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.errorbar(report.grid, report.medians, yerr=report.mads, marker="o", capsize=3)
    if report.axis == "D":
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(report.axis)
    ax.set_ylabel("median time [s]")
    ax.set_title(f"{report.objective}: slope {report.slope:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def cmd_data_gen(args) -> int:
    ds = synth_gaussian_mixture(args.classes, args.dim, args.per_class, args.spread, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ml.write_csv(ds.features, out / "features.csv")
    (out / "labels.csv").write_text("\n".join(str(int(v)) for v in ds.labels) + "\n",
                                    encoding="utf-8")
    print(f"wrote {ds.n_samples} x {ds.dim} features and labels to {out}")
    return EXIT_OK


def cmd_data_inspect(args) -> int:
    if args.format == "idx":
        ds = load_idx(args.features, args.labels)
    else:
        ds = load_csv_dataset(args.features, args.labels)
    counts = np.bincount(ds.labels, minlength=ds.class_count)
    print(f"samples,{ds.n_samples}")
    print(f"dim,{ds.dim}")
    print(f"classes,{ds.class_count}")
    print(f"feature_min,{ds.features.min():.6g}")
    print(f"feature_max,{ds.features.max():.6g}")
    print(f"feature_mean,{ds.features.mean():.6g}")
    print("class_counts," + ",".join(str(int(c)) for c in counts))
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        text = Path(args.trajectory).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.trajectory}: {exc.strerror}") from None
    traj = TrajectoryRecord.from_csv(text)
    if not len(traj):
        raise FormatError(f"{args.trajectory}: trajectory has no data rows")
    Path(args.output).write_text(trajectory_svg(traj, args.log_y, args.title), encoding="utf-8")
    if args.png:
        save_trajectory_png(traj, args.png, args.log_y, args.title)
    print(f"wrote {args.output}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="frossl-lab", formatter_class=fmt,
                                description="Frobenius-norm SSL objectives lab")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", formatter_class=fmt,
                       help="train a linear/MLP encoder and record eigenvalue trajectories")
    t.add_argument("--config", default=None, help="INI config file")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    t.add_argument("--out", default=None, help="output directory (required unless --manifest)")
    t.add_argument("--manifest", default=None, help="re-run from a previous manifest.json")
    t.add_argument("--figures", action="store_true", help="also write trajectory SVG and PNG")
    t.add_argument("--log-y", action="store_true", help="log-scale y axis for figures")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", formatter_class=fmt, help="run identity/proposition/rotation checks")
    v.add_argument("suite", choices=SUITES, help="which suite to run")
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gradcheck", formatter_class=fmt,
                       help="compare analytic gradients with central differences")
    g.add_argument("--objective", default="all", choices=("all", *KINDS), help="objective to check")
    g.add_argument("--trials", type=int, default=20, help="random inputs per objective")
    g.add_argument("--seed", type=int, default=0, help="RNG seed")
    g.add_argument("--json", default=None, help="write the reports as JSON")
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", formatter_class=fmt, help="time loss evaluations")
    b.add_argument("--mode", choices=("d-sweep", "views"), default="d-sweep",
                   help="d-sweep: variance term vs D; views: full loss vs V")
    b.add_argument("--objective", default="frossl", help="objective (d-sweep: frossl, ivne or corinfomax)")
    b.add_argument("--N", type=int, default=4096, help="batch size")
    b.add_argument("--D", type=int, default=256, help="embedding width for --mode views")
    b.add_argument("--grid", type=_int_list, default=[256, 512, 1024, 2048],
                   help="comma-separated D (d-sweep) or V (views) values")
    b.add_argument("--reps", type=int, default=5, help="timed repetitions per point, at least 5")
    b.add_argument("--warmup", type=int, default=1, help="untimed warm-up calls per point")
    b.add_argument("--json", default=None, help="write the bench report as JSON")
    b.add_argument("--figure", default=None, help="write a matplotlib PNG of the sweep")
    b.set_defaults(func=cmd_bench)

    dg = sub.add_parser("data-gen", formatter_class=fmt,
                        help="write a synthetic Gaussian mixture as CSV")
    dg.add_argument("--out", required=True, help="output directory")
    dg.add_argument("--classes", type=int, default=10, help="number of clusters")
    dg.add_argument("--dim", type=int, default=64, help="feature dimension")
    dg.add_argument("--per-class", type=int, default=500, help="samples per cluster")
    dg.add_argument("--spread", type=float, default=REFERENCE_SPREAD, help="radius of the cluster means")
    dg.add_argument("--seed", type=int, default=0, help="RNG seed")
    dg.set_defaults(func=cmd_data_gen)

    di = sub.add_parser("data-inspect", formatter_class=fmt, help="summarize a dataset")
    di.add_argument("features", help="IDX image file or features CSV")
    di.add_argument("labels", help="IDX label file or labels CSV")
    di.add_argument("--format", choices=("idx", "csv"), default="idx", help="input format")
    di.set_defaults(func=cmd_data_inspect)

    pl = sub.add_parser("plot", formatter_class=fmt, help="render a trajectory CSV as SVG")
    pl.add_argument("trajectory", help="trajectory CSV written by train")
    pl.add_argument("output", help="SVG path")
    pl.add_argument("--log-y", action="store_true", help="log-scale y axis")
    pl.add_argument("--title", default=None, help="figure title")
    pl.add_argument("--png", default=None, help="also render a matplotlib PNG here")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "train" and not args.manifest and not args.out:
        parser.error("train needs --out unless --manifest is given")
    try:
        return args.func(args)
    except NumericalAbort as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DegenerateInputError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ParameterError, FormatError, FrosslError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
