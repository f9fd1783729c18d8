"""Command-line entry point: ``papez {train,separate,bench,gradcheck,synth}``.

Exit codes: 0 success, 2 configuration error, 3 input-format error,
4 numerical failure (a NaN or Inf was produced).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .audit import complexity_table, halting_report, write_points_csv, write_report_csv
from .autodiff.gradcheck import PRIMITIVE_TOL, run_primitive_checks
from .config import ConfigError, PapezConfig, TrainConfig, load_config_file, parse_kv, split_config
from .datagen import MixSpec, item_spec, synth_mixture, write_manifest
from .halting import survival_curve, write_survival_csv
from .model import Papez, separate
from .wavio import UnsupportedFormatError, read_wav, write_wav

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("papez")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--precision", choices=("f32", "f64"))
    parser.add_argument("--halting", choices=("overshoot", "clamped"))
    parser.add_argument("--p-th", dest="p_th", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="papez", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on synthetic mixtures")
    _common(p)
    p.add_argument("--outdir", type=Path, required=True)
    p.add_argument("--steps", type=int, help="override the configured number of steps")
    p.add_argument("--resume", type=Path, help="checkpoint directory to continue from")
    p.add_argument("--eval", action="store_true", help="report held-out SI-SNRi after training")

    p = sub.add_parser("separate", help="separate a mono 16-bit WAV mixture")
    _common(p)
    p.add_argument("--model", type=Path, required=True, help="checkpoint directory (or model.ckpt file)")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--outdir", type=Path, required=True)
    p.add_argument("--emit-trace", action="store_true", help="also write survival.csv")

    p = sub.add_parser("bench", help="measure attention MACs over a sweep")
    _common(p)
    p.add_argument("--sweep", choices=("N", "K", "M"), required=True)
    p.add_argument("--values", required=True, help="comma-separated sweep values")
    p.add_argument("--tokens", type=int, default=1500, help="sequence length for K and M sweeps")
    p.add_argument("--out", type=Path, help="CSV output path")
    p.add_argument("--table", action="store_true", help="print the closed-form complexity table")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    _common(p)
    p.add_argument("--end-to-end", action="store_true", help="also spot-check a tiny full model")

    p = sub.add_parser("synth", help="write synthetic mixtures as WAV files")
    _common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--outdir", type=Path, required=True)
    return parser


def resolve_config(args, need_seed: bool = False) -> tuple[PapezConfig, TrainConfig | None]:
    """Config file values overridden by command-line flags."""
    values: dict = {}
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"config file not found: {args.config}", key="config")
        values.update(parse_kv(args.config.read_text(encoding="utf-8")))
    for key in ("seed", "precision", "halting", "p_th"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    model_cfg, train_cfg = split_config(values)
    if need_seed and train_cfg is None:
        raise ConfigError("a seed is required (set seed= in the config or pass --seed)", key="seed")
    return model_cfg, train_cfg


def _parse_values(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated integers, got {text!r}", key="values") from exc
    if not values or min(values) < 1:
        raise ConfigError("--values must be positive integers", key="values")
    return values


def cmd_train(args) -> int:
    from .train import eval_template, evaluate, train

    if args.resume is not None:
        if not (args.resume / "state.txt").is_file():
            raise ConfigError(f"no checkpoint found in {args.resume}", key="resume")
        model_cfg, train_cfg = None, None
    else:
        model_cfg, train_cfg = resolve_config(args, need_seed=True)
    result = train(model_cfg, train_cfg, outdir=args.outdir, resume=args.resume, steps=args.steps)
    train_cfg = train_cfg or _saved_train_cfg(args.outdir)
    means = result.epoch_means(train_cfg.epoch_size)
    if means:
        print(f"steps {result.start_step}..{result.optimizer.state.step - 1}: "
              f"first epoch-mean loss {means[0]:.4f}, last {means[-1]:.4f}")
    if args.eval:
        ev = evaluate(result.model, eval_template(train_cfg), train_cfg.eval_items)
        print(f"held-out SI-SNRi mean {ev.mean_si_snr_i:.3f} dB, "
              f"{100 * ev.fraction_above(0.0):.1f}% of items above 0 dB")
    return EXIT_OK


def _saved_train_cfg(outdir: Path) -> TrainConfig:
    return load_config_file(outdir / "config.txt")[1]


def _load_model(path: Path, args) -> Papez:
    ckpt_dir = path if path.is_dir() else path.parent
    weights = ckpt_dir / "model.ckpt" if path.is_dir() else path
    cfg_path = args.config if args.config is not None else ckpt_dir / "config.txt"
    if not weights.is_file():
        raise ConfigError(f"model checkpoint not found: {weights}", key="model")
    if not cfg_path.is_file():
        raise ConfigError(f"model config not found: {cfg_path}", key="config")
    values = parse_kv(cfg_path.read_text(encoding="utf-8"))
    for key in ("halting", "p_th", "precision"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    model_cfg, train_cfg = split_config(values)
    with ad.precision(train_cfg.precision if train_cfg else "f32"):
        model = Papez(model_cfg)
    model.load(weights)
    return model


def cmd_separate(args) -> int:
    if not args.input.is_file():
        raise ConfigError(f"input file not found: {args.input}", key="input")
    model = _load_model(args.model, args)
    wave = read_wav(args.input)
    with ad.precision("f64" if model.dtype == np.float64 else "f32"):
        estimates, trace = separate(wave, model)
    args.outdir.mkdir(parents=True, exist_ok=True)
    for i, est in enumerate(estimates, 1):
        write_wav(args.outdir / f"spk{i}.wav", est)
    state = trace.state
    with open(args.outdir / "trace.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["token", "depth", "halt_step", "weight_sum"])
        for t, (d, hs, ws) in enumerate(zip(state.depth, state.halt_step, state.weight_sums())):
            writer.writerow([t, int(d), int(hs), f"{ws:.9f}"])
    if args.emit_trace:
        write_survival_csv(args.outdir / "survival.csv", survival_curve(state))
        write_report_csv(args.outdir / "halting_report.csv", halting_report([trace]))
    print(f"wrote {len(estimates)} sources to {args.outdir} (mean halting depth {trace.mean_depth:.3f})")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import SWEEP_HEADER, sweep, sweep_exponent

    model_cfg, _ = resolve_config(args)
    values = _parse_values(args.values)
    if args.sweep == "N" and len(values) < 4:
        raise ConfigError(f"an N sweep needs at least 4 points to fit an exponent, got {len(values)}",
                          key="values")
    if args.sweep == "N" and max(values) < 8 * min(values):
        raise ConfigError("an N sweep must span at least 8x", key="values")
    points = sweep(model_cfg, args.sweep, values, n_tokens=args.tokens)
    rows = [p.row() for p in points]
    if args.out is not None:
        write_points_csv(args.out, SWEEP_HEADER, rows)
    print(",".join(SWEEP_HEADER))
    for row in rows:
        print(",".join(str(v) for v in row))
    if args.sweep == "N":
        print(f"fitted exponent: {sweep_exponent(points):.4f}")
    if args.table:
        print(complexity_table(args.tokens, model_cfg.chunk_size, model_cfg.n_memory, model_cfg.hidden))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    worst = run_primitive_checks()
    ok = True
    for name, err in sorted(worst.items()):
        passed = err < PRIMITIVE_TOL
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name:<18} rel_err={err:.3e}")
    if args.end_to_end:
        from .bench import end_to_end_spot_checks

        cfg = PapezConfig(hidden=32, heads=4, n_memory=4, chunk_size=16, max_steps=3,
                          ffn_hidden=64, enc_channels=32)
        checks = end_to_end_spot_checks(cfg, seed=args.seed or 0)
        err = max(c.error for c in checks)
        passed = err < 1e-3
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} end_to_end         rel_err={err:.3e} ({len(checks)} coordinates)")
    return EXIT_OK if ok else 1


def cmd_synth(args) -> int:
    _, train_cfg = resolve_config(args, need_seed=True)
    if args.count < 1:
        raise ConfigError("--count must be >= 1", key="count")
    template = MixSpec(seed=train_cfg.seed, sample_rate=train_cfg.sample_rate, duration=train_cfg.duration)
    args.outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        mixture, sources = synth_mixture(item_spec(template, i))
        write_wav(args.outdir / f"mix_{i:04d}.wav", mixture)
        for s, src in enumerate(sources, 1):
            write_wav(args.outdir / f"mix_{i:04d}_s{s}.wav", src)
    write_manifest(args.outdir / "manifest.csv", template, args.count)
    print(f"wrote {args.count} mixtures to {args.outdir}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "separate": cmd_separate, "bench": cmd_bench,
            "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        where = f" [key: {exc.key}]" if exc.key else ""
        print(f"config error{where}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedFormatError as exc:
        print(f"unsupported input format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ad.NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
