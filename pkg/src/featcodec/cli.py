"""Command-line interface.

Every subcommand reads its inputs fully before writing anything, writes
outputs atomically, and drops a JSON run manifest next to its primary
output recording the resolved configuration, the input and output paths,
and the wall time. Usage errors exit with status 2 (argparse's own
convention); domain errors from the library exit with status 1 and a
single-line message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .binio import atomic_write_text
from .codec import (
    OPERATING_POINTS,
    TrainConfig,
    load_model,
    save_model,
    train_codec,
)
from .data import (
    FeatureSet,
    dim_stats,
    gen_pairs,
    gen_synthetic,
    read_features,
    read_pairs,
    write_dim_stats,
    write_features,
    write_pairs,
)
from .enhance import (
    load_enhancer,
    load_sqe,
    save_enhancer,
    save_sqe,
    train_enhancer,
    train_sqe,
)
from .entropy import (
    SymbolAlphabet,
    ac_decode,
    ac_encode,
    measure_rate,
    read_bitstream,
    write_bitstream,
)
from .errors import ConfigError, FeatcodecError
from .metrics import eer, kfold_accuracy, pair_scores, roc_auc
from .sq import QP_SWEEP_DEFAULT
from .sweep import (
    CodecPipeline,
    EnhancedCodecPipeline,
    SqEnhancedPipeline,
    SqPipeline,
    run_sweep,
)


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's output."""

    command: str
    config: dict
    seed: int
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    tool_version: str = __version__
    duration_seconds: float = 0.0


def _write_manifest(manifest: RunManifest, primary_output: str) -> None:
    path = primary_output + ".manifest.json"
    atomic_write_text(path, json.dumps(asdict(manifest), indent=2) + "\n")


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        lam=args.lam,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        r_clip=args.r_clip,
        noise_half_width=args.noise,
        seed=args.seed,
        latent_dim=args.latent_dim,
        hidden_dim=args.hidden_dim,
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="lam", type=float, default=1e-4,
                   help="rate weight in the training objective")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--latent-dim", type=int, default=32)
    p.add_argument("--hidden-dim", type=int, default=128)
    p.add_argument("--r-clip", type=float, default=20.0,
                   help="latent clip radius")
    p.add_argument("--noise", type=float, default=0.5,
                   help="training noise half width")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featcodec",
        description="Learned compression toolkit for fixed-length feature vectors",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a labeled synthetic feature set")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--identities", type=int, default=200)
    p.add_argument("--per-identity", type=int, default=50)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--sigma", type=float, default=0.15,
                   help="within-identity noise level")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pairs-out", default=None,
                   help="also sample verification pairs to this CSV")
    p.add_argument("--n-pos", type=int, default=500)
    p.add_argument("--n-neg", type=int, default=500)

    p = sub.add_parser("stats", help="per-dimension histograms and moments")
    p.add_argument("--features", required=True)
    p.add_argument("--dims", default="0",
                   help="comma-separated dimension indices")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True, help="CSV to write")
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("train-codec", help="train a rate-distortion codec")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--model-id", default=None,
                   help="identity string stored in the model (default: by lambda)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log", default=None, help="per-epoch training CSV")
    _add_train_flags(p)

    p = sub.add_parser("train-enhancer",
                       help="train a latent enhancer between two codecs")
    p.add_argument("--low", required=True, help="source (low-rate) model file")
    p.add_argument("--high", required=True, help="target (high-rate) model file")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="enhancer file to write")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log", default=None)
    _add_train_flags(p)

    p = sub.add_parser("train-sqe",
                       help="train a residual corrector for scalar quantization")
    p.add_argument("--features", required=True)
    p.add_argument("--qp", type=int, required=True)
    p.add_argument("--out", required=True, help="corrector file to write")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--log", default=None)
    _add_train_flags(p)

    p = sub.add_parser("compress", help="encode features to a bitstream")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="bitstream file to write")
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("decompress", help="reconstruct features from a bitstream")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("enhance",
                       help="decode a low-rate bitstream through an enhancer "
                            "and a high-rate decoder")
    p.add_argument("--bitstream", required=True)
    p.add_argument("--enhancer", required=True)
    p.add_argument("--high", required=True, help="target (high-rate) model file")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--seed", type=int, default=42)

    p = sub.add_parser("evaluate", help="verification quality of a feature set")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default=None, help="optional CSV to write")

    p = sub.add_parser("sweep", help="rate-accuracy table across pipelines")
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True, help="sweep CSV to write")
    p.add_argument("--models", nargs="*", default=[],
                   help="codec model files")
    p.add_argument("--enhancer", default=None,
                   help="latent enhancer file (needs its source and target "
                        "among --models)")
    p.add_argument("--sqe", default=None, help="SQ residual corrector file")
    p.add_argument("--qps", default=",".join(str(q) for q in QP_SWEEP_DEFAULT),
                   help="comma-separated scalar-quantization quality points "
                        "(empty string for none)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--streams-dir", default=None,
                   help="directory for per-pipeline bitstreams")
    return parser


def _cmd_gen_synthetic(args) -> tuple[list[str], list[str], dict]:
    features = gen_synthetic(
        n_identities=args.identities,
        per_identity=args.per_identity,
        dim=args.dim,
        within_sigma=args.sigma,
        seed=args.seed,
    )
    write_features(features, args.out)
    outputs = [args.out]
    if args.pairs_out:
        pairs = gen_pairs(features, args.n_pos, args.n_neg, seed=args.seed)
        write_pairs(pairs, args.pairs_out)
        outputs.append(args.pairs_out)
    config = {
        "identities": args.identities,
        "per_identity": args.per_identity,
        "dim": args.dim,
        "sigma": args.sigma,
        "n_pos": args.n_pos,
        "n_neg": args.n_neg,
    }
    return [], outputs, config


def _cmd_stats(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    try:
        dims = [int(v) for v in args.dims.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--dims must be comma-separated integers, got {args.dims!r}")
    stats = dim_stats(features, dims, bins=args.bins)
    write_dim_stats(stats, args.out)
    return [args.features], [args.out], {"dims": dims, "bins": args.bins}


def _cmd_train_codec(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    config = _config_from_args(args)
    model_id = args.model_id
    if model_id is None:
        by_lam = {lam: mid for mid, lam in OPERATING_POINTS.items()}
        model_id = by_lam.get(config.lam, f"lam{config.lam:g}")
    model = train_codec(features, config, model_id=model_id, log_path=args.log)
    save_model(model, args.out)
    outputs = [args.out] + ([args.log] if args.log else [])
    return [args.features], outputs, {"model_id": model_id, **asdict(config)}


def _cmd_train_enhancer(args) -> tuple[list[str], list[str], dict]:
    low = load_model(args.low)
    high = load_model(args.high)
    features = read_features(args.features)
    config = _config_from_args(args)
    enhancer = train_enhancer(low, high, features, config, log_path=args.log)
    save_enhancer(enhancer, args.out)
    outputs = [args.out] + ([args.log] if args.log else [])
    return [args.low, args.high, args.features], outputs, asdict(config)


def _cmd_train_sqe(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    config = _config_from_args(args)
    enhancer = train_sqe(features, args.qp, config, log_path=args.log)
    save_sqe(enhancer, args.out)
    outputs = [args.out] + ([args.log] if args.log else [])
    return [args.features], outputs, {"qp": args.qp, **asdict(config)}


def _cmd_compress(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    model = load_model(args.model)
    if features.dim != model.feature_dim:
        raise ConfigError(
            f"feature dimension {features.dim} does not match model "
            f"{model.feature_dim}"
        )
    codes = model.encode(features.data.astype(np.float64), mode="infer")
    alphabet = SymbolAlphabet.for_clip_range(model.r_clip)
    bitstream = ac_encode(codes, alphabet, model_id=model.model_id)
    write_bitstream(bitstream, args.out)
    rate = measure_rate(bitstream, features.dim)
    print(
        f"{bitstream.count} features -> {rate.payload_bits} bits "
        f"({rate.bits_per_feature:.3f} bits/feature, "
        f"{rate.bits_per_dim:.6f} bits/dimension)"
    )
    return [args.features, args.model], [args.out], {"model_id": model.model_id}


def _cmd_decompress(args) -> tuple[list[str], list[str], dict]:
    bitstream = read_bitstream(args.bitstream)
    model = load_model(args.model)
    if bitstream.model_id != model.model_id:
        raise ConfigError(
            f"bitstream was produced by model {bitstream.model_id!r}, "
            f"decoder is {model.model_id!r}"
        )
    codes = ac_decode(bitstream)
    recon = model.decode(codes)
    write_features(FeatureSet(recon, source=args.bitstream), args.out)
    return [args.bitstream, args.model], [args.out], {"model_id": model.model_id}


def _cmd_enhance(args) -> tuple[list[str], list[str], dict]:
    bitstream = read_bitstream(args.bitstream)
    enhancer = load_enhancer(args.enhancer)
    high = load_model(args.high)
    if bitstream.model_id != enhancer.source_model_id:
        raise ConfigError(
            f"bitstream was produced by model {bitstream.model_id!r}, "
            f"enhancer expects {enhancer.source_model_id!r}"
        )
    if enhancer.target_model_id != high.model_id:
        raise ConfigError(
            f"enhancer targets {enhancer.target_model_id!r}, "
            f"decoder is {high.model_id!r}"
        )
    codes = ac_decode(bitstream)
    enhanced = enhancer.enhance(codes.astype(np.float64))
    recon = high.decode(enhanced)
    write_features(FeatureSet(recon, source=args.bitstream), args.out)
    return (
        [args.bitstream, args.enhancer, args.high],
        [args.out],
        {"source": enhancer.source_model_id, "target": enhancer.target_model_id},
    )


def _cmd_evaluate(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    pairs = read_pairs(args.pairs)
    scores = pair_scores(features.data, pairs)
    result = kfold_accuracy(scores, pairs.same, k=args.folds, seed=args.seed)
    auc = roc_auc(scores, pairs.same)
    err = eer(scores, pairs.same)
    line = f"accuracy {result.accuracy:.6f}  auc {auc:.6f}  eer {err:.6f}"
    print(line)
    outputs = []
    if args.out:
        atomic_write_text(
            args.out,
            "accuracy,auc,eer\n"
            f"{result.accuracy:.6f},{auc:.6f},{err:.6f}\n",
        )
        outputs.append(args.out)
    return [args.features, args.pairs], outputs, {"folds": args.folds}


def _cmd_sweep(args) -> tuple[list[str], list[str], dict]:
    features = read_features(args.features)
    pairs = read_pairs(args.pairs)
    models = [load_model(path) for path in args.models]
    by_id = {m.model_id: m for m in models}
    if len(by_id) != len(models):
        raise ConfigError("codec model ids are not unique")

    pipelines: list = [CodecPipeline(m) for m in models]
    if args.enhancer:
        enhancer = load_enhancer(args.enhancer)
        for role, mid in (("source", enhancer.source_model_id),
                          ("target", enhancer.target_model_id)):
            if mid not in by_id:
                raise ConfigError(
                    f"enhancer {role} model {mid!r} is not among --models"
                )
        pipelines.append(
            EnhancedCodecPipeline(
                by_id[enhancer.source_model_id],
                enhancer,
                by_id[enhancer.target_model_id],
            )
        )
    try:
        qps = [int(v) for v in args.qps.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--qps must be comma-separated integers, got {args.qps!r}")
    pipelines.extend(SqPipeline(qp) for qp in qps)
    if args.sqe:
        pipelines.append(SqEnhancedPipeline(load_sqe(args.sqe)))

    points = run_sweep(
        features,
        pairs,
        pipelines,
        folds=args.folds,
        seed=args.seed,
        csv_path=args.out,
        streams_dir=args.streams_dir,
    )
    for p in points:
        print(
            f"{p.label:>24}  {p.bits_per_dim:>12.6f} bits/dim  "
            f"acc {p.accuracy:.4f}  auc {p.auc:.4f}  eer {p.eer:.4f}"
        )
    inputs = [args.features, args.pairs] + list(args.models)
    if args.enhancer:
        inputs.append(args.enhancer)
    if args.sqe:
        inputs.append(args.sqe)
    outputs = [args.out]
    if args.streams_dir:
        outputs.extend(
            f"{args.streams_dir}/{p.label}.fcb" for p in points if p.label != "raw"
        )
    return inputs, outputs, {"qps": qps, "folds": args.folds}


_HANDLERS = {
    "gen-synthetic": _cmd_gen_synthetic,
    "stats": _cmd_stats,
    "train-codec": _cmd_train_codec,
    "train-enhancer": _cmd_train_enhancer,
    "train-sqe": _cmd_train_sqe,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "enhance": _cmd_enhance,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.monotonic()
    try:
        inputs, outputs, config = _HANDLERS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename}", file=sys.stderr)
        return 1
    except FeatcodecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = RunManifest(
        command=args.command,
        config=config,
        seed=args.seed,
        inputs=inputs,
        outputs=outputs,
        duration_seconds=round(time.monotonic() - started, 3),
    )
    if outputs:
        _write_manifest(manifest, outputs[0])
    return 0


def entry() -> None:
    raise SystemExit(main())
