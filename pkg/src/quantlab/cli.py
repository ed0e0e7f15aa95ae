"""Command-line entry point.

Subcommands:
  sweep        train the quantizer trade-off grid, write traces/report/charts
  quantize     turn a tensor file into a token-grid file under FSQ levels
  codec        compress / decompress / cost for token grids under a model
  selfcheck    fast invariant suite (bijections, gradients, codec roundtrips)

Exit codes: 0 ok, 1 selfcheck failure, 2 config error, 3 training error,
4 codec error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, bench, codec, fileio, fsq, tokenmodel
from .autodiff import Tensor, backward
from .rangecoder import CodecError

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_CODEC = 4


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# sweep

_SWEEP_KEYS = {
    "sizes": str, "quantizers": str, "seeds": str, "dataset": str,
    "steps": int, "batch_size": int, "hidden": int, "lr": float,
    "out": str, "workers": int, "eval_every": int, "n_train": int,
}

_SWEEP_DEFAULTS = {
    "sizes": "16,64,256,1024,4096",
    "quantizers": "fsq,vq",
    "seeds": "1,2,3",
    "dataset": "synthetic-textures",
    "steps": 20000,
    "batch_size": 256,
    "hidden": 128,
    "lr": 3e-4,
    "out": "quantlab_out",
    "workers": 0,
    "eval_every": 1000,
    "n_train": 20000,
}


def _read_config_file(path: str) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    unknown_sections = set(parser.sections()) - {"sweep"}
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    values = {}
    if parser.has_section("sweep"):
        for key, raw in parser.items("sweep"):
            if key not in _SWEEP_KEYS:
                raise ConfigError(f"unknown config key {key!r} in [sweep]")
            try:
                values[key] = _SWEEP_KEYS[key](raw)
            except ValueError:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return values


def _int_list(text: str, what: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise ConfigError(f"cannot parse {what} from {text!r}") from None


def cmd_sweep(args) -> int:
    settings = dict(_SWEEP_DEFAULTS)
    if args.config:
        settings.update(_read_config_file(args.config))
    for key in _SWEEP_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag

    sizes = _int_list(str(settings["sizes"]), "sizes")
    seeds = _int_list(str(settings["seeds"]), "seeds")
    quantizers = [q.strip() for q in str(settings["quantizers"]).split(",") if q.strip()]
    if not sizes or not seeds or not quantizers:
        raise ConfigError("sizes, quantizers, and seeds must be non-empty")
    for q in quantizers:
        if q not in ("fsq", "vq"):
            raise ConfigError(f"unknown quantizer {q!r}")

    base = bench.AutoencoderConfig(
        levels=(8, 5, 5, 5),
        dataset=str(settings["dataset"]),
        steps=int(settings["steps"]),
        batch_size=int(settings["batch_size"]),
        hidden=int(settings["hidden"]),
        lr=float(settings["lr"]),
        eval_every=int(settings["eval_every"]),
        n_train=int(settings["n_train"]),
    )
    workers = int(settings["workers"]) or None
    out_dir = Path(settings["out"])
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    results = bench.sweep(sizes, quantizers, seeds, base=base, workers=workers)
    for r in results:
        name = f"trace_{r.quantizer}_{r.codebook_size}_{r.seed}.csv"
        fileio.atomic_write_text(out_dir / name, r.trace.to_csv())
        print(f"{r.quantizer:>4} |C|={r.codebook_size:<6} seed={r.seed} "
              f"mse={r.final_mse:.5f} usage={r.usage:.3f} "
              f"cost={r.cost_bits_per_token:.3f} bits/token")
    rep = analysis.report(results)
    fileio.atomic_write_text(out_dir / "report.json", analysis.report_to_json(rep))
    for metric, ylabel in (("final_mse", "reconstruction MSE"),
                           ("usage", "codebook usage"),
                           ("cost_bits_per_token", "bits per token")):
        fileio.atomic_write_text(out_dir / f"series_{metric}.csv",
                                 analysis.series_to_csv(rep, metric))
        fileio.atomic_write_text(
            out_dir / f"chart_{metric}.svg",
            analysis.chart_from_report(rep, metric, f"{metric} vs codebook size", ylabel))
    print(f"sweep complete: {len(results)} runs in {time.perf_counter() - t0:.1f}s "
          f"-> {out_dir}")
    return EXIT_OK


# ----------------------------------------------------------------------
# quantize

def cmd_quantize(args) -> int:
    spec = fsq.LevelsSpec.from_text(args.levels)
    arr = fileio.read_tensor(args.input)
    if arr.ndim not in (2, 3) or arr.shape[-1] != spec.d:
        raise ConfigError(
            f"tensor shape {arr.shape} incompatible with {spec.d}-channel levels "
            f"{spec.to_text()} (need rank 2 or 3 with last dim {spec.d})")
    codes = fsq.quantize(arr, spec)
    tokens = fsq.codes_to_indexes(codes, spec)
    if arr.ndim == 2:
        grid = codec.TokenGrid(arr.shape[0], 1, tokens)
    else:
        grid = codec.TokenGrid(arr.shape[0], arr.shape[1], tokens)
    fileio.write_token_grid(args.output, grid)
    print(f"wrote {grid.height}x{grid.width} tokens (|C|={spec.codebook_size}) "
          f"to {args.output}")
    return EXIT_OK


# ----------------------------------------------------------------------
# codec

def _load_model(path: str):
    return tokenmodel.loads_model(Path(path).read_text())


def cmd_codec(args) -> int:
    needs = "bitstream" if args.mode == "decompress" else "tokens"
    if getattr(args, needs) is None:
        raise ConfigError(f"codec {args.mode} needs --{needs}")
    if args.mode in ("compress", "decompress") and args.out is None:
        raise ConfigError(f"codec {args.mode} needs --out")
    model = _load_model(args.model)
    if args.mode == "compress":
        grid = fileio.read_token_grid(args.tokens)
        sched = codec.deterministic_schedule(grid.height, grid.width, args.groups)
        bs = codec.compress(grid, model, sched)
        fileio.atomic_write_bytes(args.out, bs.to_bytes())
        print(f"compressed {bs.token_count} tokens to {bs.bits} payload bits "
              f"({bs.bits / bs.token_count:.3f} bits/token)")
        return EXIT_OK
    if args.mode == "decompress":
        bs = codec.Bitstream.from_bytes(Path(args.bitstream).read_bytes())
        if args.height is None or args.width is None:
            raise ConfigError("decompress needs --height and --width")
        sched = codec.deterministic_schedule(args.height, args.width, args.groups)
        grid = codec.decompress(bs, model, sched)
        fileio.write_token_grid(args.out, grid)
        print(f"decompressed {grid.height}x{grid.width} tokens to {args.out}")
        return EXIT_OK
    if args.mode == "cost":
        grid = fileio.read_token_grid(args.tokens)
        sched = codec.deterministic_schedule(grid.height, grid.width, args.groups)
        bits = codec.compression_cost(grid, model, sched)
        print(f"{bits:.6f} bits total, {bits / grid.tokens.size:.6f} bits/token")
        return EXIT_OK
    raise ConfigError(f"unknown codec mode {args.mode!r}")


# ----------------------------------------------------------------------
# selfcheck

def _check_bijections() -> None:
    for levels in fsq.RECOMMENDED_LEVELS.values():
        spec = fsq.LevelsSpec(levels)
        idx = np.arange(spec.codebook_size, dtype=np.uint64)
        roundtrip = fsq.codes_to_indexes(fsq.indexes_to_codes(idx, spec), spec)
        if not np.array_equal(roundtrip, idx):
            raise AssertionError(f"bijection broken for levels {levels}")


def _check_gradients() -> None:
    rng = np.random.default_rng(7)
    spec = fsq.LevelsSpec((8, 5, 5, 5))
    z = Tensor(rng.uniform(-2, 2, (64, 4)), requires_grad=True)
    loss = fsq.quantize(z, spec).sum()
    backward(loss)
    z2 = Tensor(z.data.copy(), requires_grad=True)
    ref = (fsq.bound(z2, spec) / Tensor(spec.half_width.astype(np.float64))).sum()
    backward(ref)
    if not np.array_equal(z.grad, z2.grad):
        raise AssertionError("straight-through gradient differs from bound/half_width")


def _check_codec_roundtrip() -> None:
    rng = np.random.default_rng(11)
    model = tokenmodel.UniformModel(64)
    sched = codec.deterministic_schedule(8, 8, 8)
    for _ in range(5):
        grid = codec.TokenGrid(8, 8, rng.integers(0, 64, 64))
        back = codec.decompress(codec.compress(grid, model, sched), model, sched)
        if not np.array_equal(back.tokens, grid.tokens):
            raise AssertionError("codec roundtrip mismatch")


def _check_masking_bound() -> None:
    rng = np.random.default_rng(3)
    for _ in range(10_000):
        r = codec.sample_masking_ratio(rng)
        if codec.cosine_mask_count(r, 256) < 116:
            raise AssertionError(f"masking bound violated at r={r}")


def _check_cfg() -> None:
    rng = np.random.default_rng(5)
    lc = rng.normal(size=(16, 32))
    ln = rng.normal(size=(16, 32))
    if not np.array_equal(codec.cfg_logits(lc, ln, 0.0), lc):
        raise AssertionError("cfg_logits(alpha=0) must return conditional logits")
    shifted = codec.cfg_logits(lc + 1.5, ln + 1.5, 0.7)
    if not np.array_equal(shifted.argmax(axis=1),
                          codec.cfg_logits(lc, ln, 0.7).argmax(axis=1)):
        raise AssertionError("cfg_logits argmax not shift-invariant")


def cmd_selfcheck(_args) -> int:
    checks = [
        ("fsq-bijections", _check_bijections),
        ("ste-gradients", _check_gradients),
        ("codec-roundtrip", _check_codec_roundtrip),
        ("masking-bound", _check_masking_bound),
        ("cfg-logits", _check_cfg),
    ]
    failures = 0
    for name, fn in checks:
        start = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except Exception as exc:  # report, keep going
            status = f"FAIL ({exc})"
            failures += 1
        print(f"{status:<6} {name:<18} {time.perf_counter() - start:6.2f}s")
    return EXIT_SELFCHECK if failures else EXIT_OK


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quantlab", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="train the trade-off grid and write reports")
    p.add_argument("--config", help="key-value config file with a [sweep] section")
    p.add_argument("--sizes", help="comma-separated codebook sizes")
    p.add_argument("--quantizers", help="comma-separated subset of fsq,vq")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--dataset", choices=("gaussian-mixture", "synthetic-textures",
                                         "binary-shapes"))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("quantize", help="tensor file -> token grid file under FSQ")
    p.add_argument("--levels", required=True, help='e.g. "8,5,5,5"')
    p.add_argument("--input", required=True, help="FSQT tensor file")
    p.add_argument("--output", required=True, help="token grid file to write")
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("codec", help="compress / decompress / cost")
    p.add_argument("mode", choices=("compress", "decompress", "cost"))
    p.add_argument("--tokens", help="token grid file (compress/cost)")
    p.add_argument("--bitstream", help="bitstream file (decompress)")
    p.add_argument("--model", required=True, help="token model JSON file")
    p.add_argument("--out", help="output file")
    p.add_argument("--groups", type=int, default=8, help="schedule reveal groups")
    p.add_argument("--height", type=int, help="grid height (decompress)")
    p.add_argument("--width", type=int, help="grid width (decompress)")
    p.set_defaults(fn=cmd_codec)

    p = sub.add_parser("selfcheck", help="run the fast invariant suite")
    p.set_defaults(fn=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, configparser.Error, ValueError) as exc:
        if isinstance(exc, CodecError):
            print(f"codec error: {exc}", file=sys.stderr)
            return EXIT_CODEC
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except bench.TrainingDiverged as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        print(f"config error: bad model file: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
