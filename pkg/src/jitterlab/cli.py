"""Command-line harness for the full experiment pipeline.

Subcommands:

    synth          generate a synthetic dataset (PNGs + manifest)
    pretrain       train a gaze model on labeled source data
    adapt          run the unsupervised adaptation loop
    eval           evaluate a checkpoint on a dataset (JSON report)
    sweep          low-pass or noise sweep over a dataset (CSV)
    robustness     compare baseline vs adapted under test noise (JSON)
    retention      source-domain performance of both models (JSON)
    probe-triplet  original-vs-perturbed feature consistency probe (CSV)

All outputs are written atomically (temp file + rename) and are byte-stable:
rerunning a command with identical flags and seeds reproduces files exactly.
Wall-clock timing goes to stdout only, never into report files.  Exit codes:
0 success, 2 usage/config error, 3 numeric failure, 4 I/O failure.

Flag values may also come from a config file (``--config PATH``) holding
``key = value`` lines; explicit flags win over file values.  The environment
variable ``JITTERLAB_SEED`` provides a global seed fallback.
"""

import argparse
import csv
import io
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .adapt import AdaptConfig, adapt, evaluate, pretrain
from .attacks import AttackConfig, augment_batch
from .diffcore import NumericError
from .imageops import fourier_lowpass, gaussian_noise_batch, poisson_noise_batch
from .losses import LossWeights
from .metrics import MavConfig, triplet_probe
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .synthdata import DomainSpec, Dataset, generate_dataset, load_dataset, save_dataset

DEFAULT_SEED = 1234
GAUSSIAN_SWEEP_VARIANCES = (0.0, 0.005, 0.01, 0.02, 0.05)
POISSON_SWEEP_SCALES = (10.0, 15.0)
LOWPASS_SWEEP_FRACTIONS = tuple(round(0.1 * i, 1) for i in range(11))
ROBUSTNESS_SETTINGS = (
    ("gaussian", 0.01),
    ("gaussian", 0.05),
    ("poisson", 10.0),
    ("poisson", 15.0),
)
PROBE_MARGINS = (0.0, 1e-3)


class UsageError(Exception):
    """Configuration problem that maps to exit code 2."""


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("JITTERLAB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"JITTERLAB_SEED must be an integer, got {env!r}") from exc
    return DEFAULT_SEED


def _parse_config_file(path: str) -> dict:
    """Parse a flat key = value config file (strings, numbers, booleans)."""
    values = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, val = (part.strip() for part in line.split("=", 1))
                val = val.strip("\"'")
                if val.lower() in ("true", "false"):
                    parsed = val.lower() == "true"
                else:
                    try:
                        parsed = int(val)
                    except ValueError:
                        try:
                            parsed = float(val)
                        except ValueError:
                            parsed = val
                values[key.replace("-", "_")] = parsed
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return values


def _apply_config_file(args: argparse.Namespace, argv: list) -> None:
    if not getattr(args, "config", None):
        return
    file_values = _parse_config_file(args.config)
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, val in file_values.items():
        if key in explicit:
            continue
        if hasattr(args, key):
            setattr(args, key, val)


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    out_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(out_dir, exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    _atomic_write_bytes(path, text.encode("utf-8"))


def _write_csv(path: str, header: list, rows: list) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.9g}"


def _report_common(args, seed: int) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    cfg["resolved_seed"] = seed
    return {"code_version": __version__, "config": cfg}


def _eval_payload(report) -> dict:
    return {
        "mean_angular_error_deg": report.mean_angular_error_deg,
        "mav_deg": report.mav_deg,
        "mav_reason": report.mav_reason,
        "qualifying_pairs": report.qualifying_pairs,
        "candidates_scanned": report.candidates_scanned,
        "n_samples": report.n_samples,
    }


def _mav_cfg(args, seed: int) -> MavConfig:
    return MavConfig(alpha=args.alpha, beta_deg=args.beta, max_pairs=args.max_pairs,
                     seed=seed)


def _load_data(path: str) -> Dataset:
    if os.path.isdir(path):
        path = os.path.join(path, "manifest.csv")
    return load_dataset(path)


def _noised(dataset: Dataset, family: str, level: float, seed: int) -> Dataset:
    if level == 0:
        return dataset
    if family == "gaussian":
        return dataset.with_images(gaussian_noise_batch(dataset.images, level, seed))
    if family == "poisson":
        return dataset.with_images(poisson_noise_batch(dataset.images, level, seed))
    raise UsageError(f"unknown noise family {family!r}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    if args.domain == "source":
        spec = DomainSpec.source_default()
        if args.hfc_amp not in (None, 0.0):
            raise UsageError("source domain cannot carry an hfc grating")
    else:
        spec = DomainSpec.target_default()
        if args.hfc_amp is not None:
            spec = DomainSpec("target", hfc_amplitude=args.hfc_amp,
                              hfc_frequency=args.hfc_freq or spec.hfc_frequency,
                              brightness_shift=spec.brightness_shift,
                              contrast_scale=spec.contrast_scale,
                              sensor_noise_variance=spec.sensor_noise_variance)
        elif args.hfc_freq is not None:
            spec = DomainSpec("target", hfc_amplitude=spec.hfc_amplitude,
                              hfc_frequency=args.hfc_freq,
                              brightness_shift=spec.brightness_shift,
                              contrast_scale=spec.contrast_scale,
                              sensor_noise_variance=spec.sensor_noise_variance)
    try:
        ds = generate_dataset(args.n, spec, args.dup_groups, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest = save_dataset(ds, args.out)
    print(f"wrote {manifest} ({len(ds)} samples, domain={args.domain}, seed={seed})")
    return 0


def cmd_pretrain(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    data = _load_data(args.data)
    t0 = time.monotonic()
    model, trace = pretrain(data, epochs=args.epochs, seed=seed, lr=args.lr,
                            batch_size=args.batch)
    save_checkpoint(args.out, model, seed=seed, step=len(trace))
    print(f"wrote {args.out} (final loss {trace[-1]:.6f}, {time.monotonic()-t0:.1f}s)")
    return 0


def _adapt_config(args, seed: int) -> AdaptConfig:
    attack = AttackConfig(epsilon=args.epsilon, pgd_steps=args.pgd_steps,
                          pgd_step_size=args.pgd_step_size, seed=seed)
    weights = LossWeights(lambda1=args.lambda1, lambda2=args.lambda2, tau=args.tau)
    return AdaptConfig(iters=args.iters, batch=args.batch, weights=weights,
                       attack=attack, lr_g=args.lr_g, lr_d=args.lr_d,
                       n_source=args.n_source, n_target=args.n_target, seed=seed,
                       optimizer=args.optimizer)


def cmd_adapt(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    model, _ = load_checkpoint(args.model)
    d_source = _load_data(args.source)
    d_target = _load_data(args.target)
    try:
        cfg = _adapt_config(args, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t0 = time.monotonic()
    adapted, trace = adapt(model, d_source, d_target, cfg)
    save_checkpoint(args.out, adapted, seed=seed, step=cfg.iters)
    if args.trace_out:
        header = ["iter", "gaze", "con", "adv", "dis", "total"]
        rows = [[r["iter"]] + [_fmt(r[k]) for k in header[1:]] for r in trace.records]
        _write_csv(args.trace_out, header, rows)
    print(f"wrote {args.out} ({cfg.iters} iterations, {time.monotonic()-t0:.1f}s)")
    return 0


def cmd_eval(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    model, _ = load_checkpoint(args.model)
    data = _load_data(args.data)
    t0 = time.monotonic()
    report = evaluate(model, data, _mav_cfg(args, seed))
    payload = _report_common(args, seed)
    payload.update(_eval_payload(report))
    _write_json(args.out, payload)
    print(f"wrote {args.out} (err={report.mean_angular_error_deg:.4f} deg, "
          f"{time.monotonic()-t0:.1f}s)")
    return 0


def cmd_sweep(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    model, _ = load_checkpoint(args.model)
    data = _load_data(args.data)
    mav_cfg = _mav_cfg(args, seed)
    rows = []
    t0 = time.monotonic()
    if args.kind == "lowpass":
        param = "lowpass_fraction"
        for frac in LOWPASS_SWEEP_FRACTIONS:
            filtered = np.stack([fourier_lowpass(im, frac) for im in data.images])
            rep = evaluate(model, data.with_images(filtered), mav_cfg)
            rows.append([param, _fmt(frac), _fmt(rep.mean_angular_error_deg),
                         _fmt(rep.mav_deg), rep.qualifying_pairs or 0])
    else:
        if args.family == "gaussian":
            param, levels = "gaussian_variance", GAUSSIAN_SWEEP_VARIANCES
        else:
            param, levels = "poisson_scale", POISSON_SWEEP_SCALES
        for level in levels:
            rep = evaluate(model, _noised(data, args.family, level, seed), mav_cfg)
            rows.append([param, _fmt(level), _fmt(rep.mean_angular_error_deg),
                         _fmt(rep.mav_deg), rep.qualifying_pairs or 0])
    _write_csv(args.out, ["param", "value", "mean_angular_error_deg", "mav_deg",
                          "qualifying_pairs"], rows)
    print(f"wrote {args.out} ({len(rows)} rows, {time.monotonic()-t0:.1f}s)")
    return 0


def cmd_robustness(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    baseline, _ = load_checkpoint(args.baseline)
    adapted, _ = load_checkpoint(args.adapted)
    data = _load_data(args.data)
    mav_cfg = _mav_cfg(args, seed)
    t0 = time.monotonic()
    payload = _report_common(args, seed)
    payload["settings"] = []
    clean = {}
    for name, model in (("baseline", baseline), ("adapted", adapted)):
        clean[name] = evaluate(model, data, mav_cfg)
    payload["clean"] = {name: _eval_payload(rep) for name, rep in clean.items()}
    for family, level in ROBUSTNESS_SETTINGS:
        noisy = _noised(data, family, level, seed)
        entry = {"noise_family": family, "noise_level": level, "models": {}}
        for name, model in (("baseline", baseline), ("adapted", adapted)):
            rep = evaluate(model, noisy, mav_cfg)
            entry["models"][name] = _eval_payload(rep)
            entry["models"][name]["error_increase_deg"] = (
                rep.mean_angular_error_deg - clean[name].mean_angular_error_deg
            )
            if rep.mav_deg is not None and clean[name].mav_deg is not None:
                entry["models"][name]["mav_increase_deg"] = (
                    rep.mav_deg - clean[name].mav_deg
                )
            else:
                entry["models"][name]["mav_increase_deg"] = None
        payload["settings"].append(entry)
    _write_json(args.out, payload)
    print(f"wrote {args.out} ({time.monotonic()-t0:.1f}s)")
    return 0


def cmd_retention(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    baseline, _ = load_checkpoint(args.baseline)
    adapted, _ = load_checkpoint(args.adapted)
    data = _load_data(args.data)
    mav_cfg = _mav_cfg(args, seed)
    rb = evaluate(baseline, data, mav_cfg)
    ra = evaluate(adapted, data, mav_cfg)
    payload = _report_common(args, seed)
    payload["baseline"] = _eval_payload(rb)
    payload["adapted"] = _eval_payload(ra)
    payload["relative_error_increase"] = (
        ra.mean_angular_error_deg / rb.mean_angular_error_deg - 1.0
    )
    if rb.mav_deg is not None and ra.mav_deg is not None:
        payload["relative_mav_increase"] = ra.mav_deg / rb.mav_deg - 1.0
    else:
        payload["relative_mav_increase"] = None
    _write_json(args.out, payload)
    print(f"wrote {args.out}")
    return 0


def cmd_probe_triplet(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    data = _load_data(args.data)
    try:
        attack = AttackConfig(epsilon=args.epsilon, pgd_steps=args.pgd_steps,
                              pgd_step_size=args.pgd_step_size, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = []
    t0 = time.monotonic()
    for name, path in (("baseline", args.baseline), ("adapted", args.adapted)):
        if path is None:
            continue
        model, _ = load_checkpoint(path)
        # attack against the true labels: a model's own predictions would give
        # an exactly zero L1 residual, hence a zero gradient and no perturbation
        perturbed = augment_batch(model, data.images, data.labels, attack, seed)
        feats = model.extract(data.images)
        feats_adv = model.extract(perturbed)
        for margin in PROBE_MARGINS:
            val = triplet_probe(feats, feats_adv, margin, args.n_triples, seed)
            rows.append([name, _fmt(margin), _fmt(val)])
    if not rows:
        raise UsageError("need at least one of --baseline/--adapted")
    _write_csv(args.out, ["model", "margin", "triplet_loss"], rows)
    print(f"wrote {args.out} ({time.monotonic()-t0:.1f}s)")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def _add_mav_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.75,
                   help="ssim threshold for pair selection")
    p.add_argument("--beta", type=float, default=1.0,
                   help="label-angle threshold in degrees")
    p.add_argument("--max-pairs", type=int, default=0,
                   help="subsample cap on qualifying pairs (0 = exhaustive)")


def _add_attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=AttackConfig().epsilon,
                   help="L-inf attack radius")
    p.add_argument("--pgd-steps", type=int, default=4)
    p.add_argument("--pgd-step-size", type=float, default=-1.0,
                   help="per-step size (-1 = epsilon/2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jitterlab",
                                     description="gaze-jitter analysis benchmark")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--domain", choices=("source", "target"), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--dup-groups", type=int, default=60)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--hfc-amp", type=float, default=None)
    p.add_argument("--hfc-freq", type=float, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train a gaze model on source data")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="run unsupervised adaptation")
    p.add_argument("--model", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace-out", default=None)
    p.add_argument("--iters", type=int, default=AdaptConfig().iters)
    p.add_argument("--batch", type=int, default=AdaptConfig().batch)
    p.add_argument("--lambda1", type=float, default=LossWeights().lambda1)
    p.add_argument("--lambda2", type=float, default=LossWeights().lambda2)
    p.add_argument("--tau", type=float, default=LossWeights().tau)
    p.add_argument("--lr-g", type=float, default=AdaptConfig().lr_g)
    p.add_argument("--lr-d", type=float, default=AdaptConfig().lr_d)
    p.add_argument("--n-source", type=int, default=AdaptConfig().n_source)
    p.add_argument("--n-target", type=int, default=AdaptConfig().n_target)
    p.add_argument("--optimizer", choices=("sgd", "adam"),
                   default=AdaptConfig().optimizer)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_attack_flags(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_mav_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="low-pass or noise sweep")
    p.add_argument("--kind", choices=("lowpass", "noise"), required=True)
    p.add_argument("--family", choices=("gaussian", "poisson"), default="gaussian")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_mav_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("robustness", help="test-noise comparison of two models")
    p.add_argument("--baseline", required=True)
    p.add_argument("--adapted", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_mav_flags(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("retention", help="source performance after adaptation")
    p.add_argument("--baseline", required=True)
    p.add_argument("--adapted", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_mav_flags(p)
    p.set_defaults(func=cmd_retention)

    p = sub.add_parser("probe-triplet", help="feature-consistency probe")
    p.add_argument("--baseline", default=None)
    p.add_argument("--adapted", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-triples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    _add_attack_flags(p)
    p.set_defaults(func=cmd_probe_triplet)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, argv)
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, CheckpointError) as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
