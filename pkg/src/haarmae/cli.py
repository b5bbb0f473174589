"""Command-line surface: dataset synthesis, wavelet transforms,
pretraining, geo-encoding evaluation, feature extraction, reconstruction
reports, and gradient checking.

Every subcommand writes a self-contained run directory holding run.json
(package version, subcommand, seed, resolved configuration with defaults
echoed) next to its outputs. Errors exit nonzero after printing one JSON
record {"error": {"category", "message"}} to stderr; usage problems exit
with status 2, everything else with 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .evaluation import (
    extract_features,
    gpe_embeddings_eval,
    gpe_pairs_eval,
    reconstruction_report,
    sample_pairs,
    sample_tuples,
)
from .model import (
    ModelState,
    gradcheck,
    model_config,
    random_mask_for,
)
from .msr import MsrError, read_msr, write_msr
from .rasters import Raster
from .training import (
    SynthSpec,
    TrainConfig,
    load_msr_dataset,
    pretrain,
    synth_dataset,
)
from .wavelet.transform import DecompositionSet, dwt_multi, idwt_multi

GRADCHECK_THRESHOLD = 1e-6

# CLI-level pretrain defaults keep a flagless run desk-sized; TrainConfig
# keeps its own (larger-model) defaults for library use.
PRETRAIN_FALLBACK = {
    "epochs": 2,
    "batch_size": 8,
    "seed": 0,
    "model_size": "tiny",
    "levels": 3,
}


def _build(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    return cls(**data)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Strict run configuration: a JSON document with optional "train"
    and "synth" blocks mirroring TrainConfig and SynthSpec. Unknown keys
    anywhere are rejected; the resolved echo spells out every default,
    including the encoder/decoder geometry implied by the model size."""

    train: TrainConfig
    synth: SynthSpec | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = sorted(set(data) - {"train", "synth"})
        if unknown:
            raise ValueError(f"run config: unknown keys {unknown}")
        train = _build(TrainConfig, data.get("train", {}), "train")
        synth = None
        if "synth" in data:
            synth = _build(SynthSpec, data["synth"], "synth")
        return cls(train=train, synth=synth)

    @classmethod
    def load(cls, path) -> "RunConfig":
        text = Path(path).read_text()
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("run config: top level must be a JSON object")
        return cls.from_dict(data)

    def resolved(self, channels: int, height: int, width: int) -> dict:
        cfg = model_config(
            self.train.model_size, channels, height, width,
            self.train.levels, self.train.base_patch, self.train.sh_degree,
        )
        out = {
            "train": dataclasses.asdict(self.train),
            "encoder": dataclasses.asdict(cfg.encoder),
            "decoder": dataclasses.asdict(cfg.decoder),
        }
        if self.synth is not None:
            out["synth"] = dataclasses.asdict(self.synth)
        return out


def _write_run_info(out_dir, command: str, seed, config: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
    }
    (out / "run.json").write_text(json.dumps(record, sort_keys=True, indent=2))


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2))


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _cmd_synth(args) -> int:
    spec = SynthSpec(
        count=args.count, channels=args.channels, height=args.height,
        width=args.width, seed=args.seed, geo_strength=args.geo_strength,
    )
    rasters = synth_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, r in enumerate(rasters):
        write_msr(r, out / f"r{i:05d}.msr")
    _write_run_info(out, "synth", args.seed, dataclasses.asdict(spec))
    print(json.dumps({"written": len(rasters), "dir": str(out)}))
    return 0


def _cmd_dwt(args) -> int:
    x = read_msr(args.input)
    s = dwt_multi(x, args.levels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = s.component_names()
    for name, arr in zip(names, s.to_ordered()):
        write_msr(Raster(np.asarray(arr, dtype=np.float32)),
                  out / f"component_{name}.msr")
    manifest = {
        "depth": s.depth,
        "components": names,
        "channels": x.channels,
        "height": x.height,
        "width": x.width,
        "source": str(args.input),
    }
    _write_json(out / "manifest.json", manifest)
    _write_run_info(out, "dwt", None, {"levels": args.levels})
    print(json.dumps({"components": len(names), "dir": str(out)}))
    return 0


def _cmd_idwt(args) -> int:
    src = Path(args.input)
    manifest = json.loads((src / "manifest.json").read_text())
    arrays = [
        read_msr(src / f"component_{name}.msr").values
        for name in manifest["components"]
    ]
    s = DecompositionSet.from_ordered(manifest["depth"], arrays)
    raster = idwt_multi(s)
    write_msr(raster, args.out)
    print(json.dumps({"written": str(args.out)}))
    return 0


def _resolve_pretrain_config(args) -> RunConfig:
    if args.config is not None:
        rc = RunConfig.load(args.config)
        train_kwargs = dataclasses.asdict(rc.train)
        synth = rc.synth
    else:
        train_kwargs = dict(PRETRAIN_FALLBACK)
        synth = None
    overrides = {
        "epochs": args.epochs, "batch_size": args.batch_size,
        "seed": args.seed, "lr": args.lr, "model_size": args.model_size,
        "levels": args.levels, "mask_ratio": args.mask_ratio,
        "dataset": args.dataset,
    }
    for key, value in overrides.items():
        if value is not None:
            train_kwargs[key] = value
    if args.config is None:
        for key, value in PRETRAIN_FALLBACK.items():
            train_kwargs.setdefault(key, value)
    return RunConfig(train=_build(TrainConfig, train_kwargs, "train"),
                     synth=synth)


def _cmd_pretrain(args) -> int:
    rc = _resolve_pretrain_config(args)
    cfg = rc.train
    if cfg.dataset is not None:
        dataset = load_msr_dataset(cfg.dataset)
    else:
        spec = rc.synth or SynthSpec(
            count=32, channels=4, height=64, width=64, seed=cfg.seed,
        )
        rc = dataclasses.replace(rc, synth=spec)
        dataset = synth_dataset(spec)
    shape = dataset[0].values.shape
    _write_run_info(args.out, "pretrain", cfg.seed,
                    rc.resolved(shape[0], shape[1], shape[2]))
    _, summary = pretrain(cfg, dataset=dataset, out_dir=args.out)
    print(json.dumps({
        "steps": summary["steps"],
        "final_epoch_loss": summary["final_epoch_loss"],
        "checkpoint": summary["checkpoint"],
    }))
    return 0


def _load_state(path) -> ModelState:
    state, _ = load_checkpoint(path)
    return state


def _cmd_eval_pairs(args) -> int:
    state = _load_state(args.checkpoint) if args.checkpoint else None
    if state is None and not args.raw:
        raise ValueError("projected evaluation needs --checkpoint; "
                         "pass --raw for identity projection")
    pairs = sample_pairs(args.count, args.seed)
    result = gpe_pairs_eval(state, pairs, projected=not args.raw,
                            degree=args.degree)
    _write_run_info(args.out, "eval-gpe-pairs", args.seed, {
        "count": args.count, "raw": args.raw, "degree": args.degree,
        "checkpoint": args.checkpoint,
    })
    _write_json(Path(args.out) / "pairs_eval.json", _json_safe(result))
    print(json.dumps(_json_safe(result)))
    return 0


def _cmd_eval_tuples(args) -> int:
    state = _load_state(args.checkpoint)
    dataset = load_msr_dataset(args.data)
    tuples = sample_tuples(dataset, args.count, args.seed)
    result = gpe_embeddings_eval(state, tuples, use_geo=not args.no_geo)
    _write_run_info(args.out, "eval-gpe-tuples", args.seed, {
        "count": args.count, "data": str(args.data),
        "use_geo": not args.no_geo, "checkpoint": args.checkpoint,
    })
    _write_json(Path(args.out) / "tuples_eval.json", _json_safe(result))
    brief = {k: result[k] for k in
             ("n_tuples", "dist_ap", "dist_an", "margin")}
    print(json.dumps(_json_safe(brief)))
    return 0


def _cmd_features(args) -> int:
    state = _load_state(args.checkpoint)
    x = read_msr(args.input)
    layers = None
    if args.layers:
        layers = sorted({int(t) for t in args.layers.split(",")})
    fmap = extract_features(state, x, layers=layers,
                            include_ape=not args.no_ape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "features.npy", fmap.astype(np.float32))
    meta = {
        "shape": list(fmap.shape),
        "layers": layers,
        "include_ape": not args.no_ape,
        "input": str(args.input),
    }
    _write_json(out / "features.json", meta)
    _write_run_info(out, "features", None, meta)
    print(json.dumps({"shape": list(fmap.shape), "dir": str(out)}))
    return 0


def _cmd_reconstruct(args) -> int:
    state = _load_state(args.checkpoint)
    x = read_msr(args.input)
    report = reconstruction_report(
        state, x, seed=args.seed, ratio=args.ratio,
        out_dir=args.out, dump=args.dump,
    )
    _write_run_info(args.out, "reconstruct", args.seed, {
        "ratio": args.ratio, "input": str(args.input),
        "checkpoint": args.checkpoint, "dump": args.dump,
    })
    brief = {
        "psnr_db": report["psnr_db"],
        "masked_pixels": report["masked_pixels"],
    }
    print(json.dumps(_json_safe(brief)))
    return 0


def _cmd_gradcheck(args) -> int:
    config = model_config("tiny", channels=2, height=32, width=32, levels=3,
                          sh_degree=7)
    state = ModelState.init(config, seed=args.seed)
    rng = np.random.default_rng(args.seed)
    x = Raster(rng.uniform(0.0, 0.1, size=(2, 32, 32)))
    mask = random_mask_for(config, 0.75, args.seed)
    result = gradcheck(state, x, mask, n_samples=args.samples,
                       h=args.step, seed=args.seed)
    passed = result["max_rel_err"] < args.threshold
    record = _json_safe({**result, "threshold": args.threshold,
                         "passed": passed})
    if args.out is not None:
        _write_run_info(args.out, "gradcheck", args.seed, {
            "samples": args.samples, "step": args.step,
            "threshold": args.threshold,
        })
        _write_json(Path(args.out) / "gradcheck.json", record)
    print(json.dumps(record))
    return 0 if passed else 1


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors emit the JSON error record."""

    def error(self, message):
        json.dump({"error": {"category": "usage", "message": message}},
                  sys.stderr)
        sys.stderr.write("\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="haarmae",
                     description="Wavelet-domain masked autoencoder toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic geo-tagged dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, default=32, help="number of rasters")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--geo-strength", type=float, default=0.5,
                   help="latitude-dependent signal strength in [0, 1]")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("dwt", help="decompose a raster file into components")
    p.add_argument("--input", required=True, help="input .msr file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--levels", type=int, default=3)
    p.set_defaults(func=_cmd_dwt)

    p = sub.add_parser("idwt", help="reassemble a raster from components")
    p.add_argument("--input", required=True,
                   help="directory written by the dwt subcommand")
    p.add_argument("--out", required=True, help="output .msr file")
    p.set_defaults(func=_cmd_idwt)

    p = sub.add_parser("pretrain", help="run masked-autoencoder pretraining")
    p.add_argument("--config", help="run config JSON (train/synth blocks)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--dataset", help="directory of .msr files")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--model-size", choices=("base", "small", "tiny"))
    p.add_argument("--levels", type=int)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("eval-gpe-pairs",
                       help="coordinate-pair similarity vs distance")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="checkpoint for the learned projection")
    p.add_argument("--count", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true",
                   help="compare raw harmonic vectors (identity projection)")
    p.add_argument("--degree", type=int, default=None,
                   help="harmonic degree cutoff (default: checkpoint's)")
    p.set_defaults(func=_cmd_eval_pairs)

    p = sub.add_parser("eval-gpe-tuples",
                       help="image-tuple embedding distances")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of .msr files")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-geo", action="store_true",
                   help="embed without geo conditioning")
    p.set_defaults(func=_cmd_eval_tuples)

    p = sub.add_parser("features", help="extract a dense feature map")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input .msr file")
    p.add_argument("--layers", help="comma-separated 1-based block indices")
    p.add_argument("--no-ape", action="store_true",
                   help="skip positional encoding (content-only features)")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("reconstruct", help="masked reconstruction report")
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="input .msr file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--dump", action="store_true",
                   help="also write reconstructed rasters/components")
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient check on a tiny model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--threshold", type=float, default=GRADCHECK_THRESHOLD)
    p.add_argument("--out", help="optional run directory")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def _error_category(exc: BaseException) -> str:
    if isinstance(exc, MsrError):
        return "format"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, json.JSONDecodeError):
        return "invalid-json"
    if isinstance(exc, FloatingPointError):
        return "numeric"
    if isinstance(exc, (ValueError, TypeError, KeyError)):
        return "invalid-config"
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except BaseException as exc:
        record = {"error": {"category": _error_category(exc),
                            "message": str(exc)}}
        json.dump(record, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
