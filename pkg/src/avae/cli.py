"""Command-line surface: train, eval, gradcheck, compare.

Config files are flat key=value text with '#' comments; unknown keys are a
hard error.  Exit codes: 0 success, 1 usage/config error, 2 numerical abort,
3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__, gradcheck, report, toy
from .trainer import (
    CheckpointError,
    ConfigError,
    TrainAbortError,
    TrainConfig,
    TrainState,
    load_checkpoint,
    train_run,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_GRADCHECK = 3

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_EVAL_SAMPLES_TRAIN = 2000
EvalFields = toy.EvalReport.FIELDS


def parse_config_text(text: str, source: str) -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        ftype = _CONFIG_FIELDS[key].type
        try:
            if ftype == "bool":
                if value.lower() in ("true", "1", "yes"):
                    values[key] = True
                elif value.lower() in ("false", "0", "no"):
                    values[key] = False
                else:
                    raise ValueError(f"not a boolean: {value!r}")
            elif ftype == "int":
                values[key] = int(value)
            elif ftype == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: field {key!r}: {exc}") from exc
    config = TrainConfig(**values)
    try:
        config.validate()
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return config


def parse_config_file(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def config_entries(config: TrainConfig):
    return [(f"config.{f.name}", getattr(config, f.name)) for f in dataclasses.fields(TrainConfig)]


def build_id() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        ).stdout.strip()
    except Exception:
        rev = "unknown"
    return f"avae-{__version__}+{rev}"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _eval_rngs(seed_material) -> tuple[np.random.Generator, np.random.Generator]:
    """(test-set stream, oracle/xi stream) derived from one seed sequence."""
    children = np.random.SeedSequence(seed_material).spawn(2)
    return tuple(np.random.Generator(np.random.PCG64(c)) for c in children)


def _write_eval_outputs(state: TrainState, n: int, seed_material, out: Path):
    """Shared eval path: eval.csv, sweep.csv and the manifold figure."""
    data_rng, oracle_rng = _eval_rngs(seed_material)
    batch = toy.generate_toy_batch(n, data_rng)
    recon_model = state.models.generator if state.algorithm == "avae" else state.models.decoder
    rep = toy.recon_eval(state.models.encoder, recon_model, batch, rng=oracle_rng)
    report.write_csv(out / "eval.csv", report.EVAL_HEADER, [report.eval_row(rep)])

    if recon_model.input_dim > state.config.dim_z:
        sweep = toy.manifold_sweep(recon_model, xi_policy="zero", dim_xi=state.config.dim_xi)
        sampled = toy.manifold_sweep(recon_model, xi_policy=4, dim_xi=state.config.dim_xi, rng=oracle_rng)
        sampled[:, 1] += 1.0
        sweep = np.concatenate([sweep, sampled], axis=0)
    else:
        sweep = toy.manifold_sweep(recon_model, xi_policy="none")
    report.write_csv(out / "sweep.csv", report.SWEEP_HEADER, sweep.tolist())
    report.save_manifold_figure(batch.x, sweep, out / "manifold.png")
    return rep


def cmd_train(args) -> int:
    config = parse_config_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    ckpt_path = out / "checkpoint.bin"
    records = []
    try:
        state, records = train_run(config, checkpoint_path=ckpt_path)
    except TrainAbortError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report.write_csv(out / "losses.csv", report.LOSSES_HEADER, report.losses_rows(records))
    report.save_losses_figure(records, out / "losses.png")
    rep = _write_eval_outputs(state, _EVAL_SAMPLES_TRAIN, (config.seed, 0xE7A1), out)
    entries = [
        ("command", "train"),
        ("build", build_id()),
        ("started", started),
        ("finished", _now()),
        *config_entries(config),
        ("output.losses_csv", out / "losses.csv"),
        ("output.losses_png", out / "losses.png"),
        ("output.checkpoint", ckpt_path),
        ("output.eval_csv", out / "eval.csv"),
        ("output.sweep_csv", out / "sweep.csv"),
        ("output.manifold_png", out / "manifold.png"),
        *[(f"eval.{k}", v) for k, v in zip(EvalFields, rep.values())],
    ]
    report.write_manifest(out / "manifest.txt", entries)
    return EXIT_OK


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    rep = _write_eval_outputs(state, args.n, args.seed, out)
    entries = [
        ("command", "eval"),
        ("build", build_id()),
        ("started", started),
        ("finished", _now()),
        ("checkpoint", args.ckpt),
        ("samples", args.n),
        ("seed", args.seed),
        ("output.eval_csv", out / "eval.csv"),
        ("output.sweep_csv", out / "sweep.csv"),
        ("output.manifold_png", out / "manifold.png"),
        *[(f"eval.{k}", v) for k, v in zip(EvalFields, rep.values())],
    ]
    report.write_manifest(out / "manifest.txt", entries)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = gradcheck.run_suite(args.seed)
    ok = True
    for name in gradcheck.LOSS_NAMES:
        err = errors[name]
        status = "ok" if err < gradcheck.REL_TOLERANCE else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} {status}")
        ok = ok and err < gradcheck.REL_TOLERANCE
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_compare(args) -> int:
    config = parse_config_file(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    vae_seed, avae_seed, eval_seed = (
        int(s) for s in np.random.SeedSequence(config.seed).generate_state(3)
    )
    runs = {}
    for label, algorithm, seed in (("vae", "vae", vae_seed), ("avae", "avae", avae_seed)):
        sub_out = out / label
        sub_out.mkdir(exist_ok=True)
        sub_config = dataclasses.replace(config, seed=seed)
        try:
            state, records = train_run(
                sub_config, algorithm=algorithm, checkpoint_path=sub_out / "checkpoint.bin"
            )
        except TrainAbortError as exc:
            print(f"numerical abort in {label} run: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        report.write_csv(sub_out / "losses.csv", report.LOSSES_HEADER, report.losses_rows(records))
        runs[label] = state

    data_rng, _ = _eval_rngs(eval_seed)
    batch = toy.generate_toy_batch(args.n, data_rng)
    reports = {}
    sweeps = {}
    for label, state in runs.items():
        _, oracle_rng = _eval_rngs(eval_seed)  # same oracle draws for both models
        recon_model = state.models.generator if state.algorithm == "avae" else state.models.decoder
        reports[label] = toy.recon_eval(state.models.encoder, recon_model, batch, rng=oracle_rng)
        policy = "zero" if recon_model.input_dim > state.config.dim_z else "none"
        sweeps[label] = toy.manifold_sweep(recon_model, xi_policy=policy, dim_xi=state.config.dim_xi)

    density_ratio = float(
        np.exp(reports["avae"].mean_log_density - reports["vae"].mean_log_density)
    )
    distance_margin = float(
        reports["vae"].mean_manifold_distance - reports["avae"].mean_manifold_distance
    )
    rows = [
        ("vae",) + reports["vae"].values() + ("", ""),
        ("avae",) + reports["avae"].values() + (density_ratio, distance_margin),
    ]
    report.write_csv(out / "compare.csv", report.COMPARE_HEADER, rows)
    report.save_compare_figure(batch.x, sweeps["vae"], sweeps["avae"], out / "compare.png")
    entries = [
        ("command", "compare"),
        ("build", build_id()),
        ("started", started),
        ("finished", _now()),
        *config_entries(config),
        ("output.compare_csv", out / "compare.csv"),
        ("output.compare_png", out / "compare.png"),
        ("output.vae_losses_csv", out / "vae" / "losses.csv"),
        ("output.avae_losses_csv", out / "avae" / "losses.csv"),
        ("density_ratio", density_ratio),
        ("distance_margin", distance_margin),
    ]
    report.write_manifest(out / "manifest.txt", entries)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an adversarial VAE on the toy data")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on fresh toy samples")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--n", type=int, default=10000)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_cmp = sub.add_parser("compare", help="train and evaluate a VAE and an AVAE side by side")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--out", required=True)
    p_cmp.add_argument("--n", type=int, default=10000)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainAbortError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
