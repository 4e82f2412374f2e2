"""Post-hoc enhancement of compressed representations.

Two enhancers live here. The latent enhancer upgrades a low-rate codec's
quantized latents toward a high-rate codec's continuous latents, so a
stream encoded once at low rate can be decoded through the high-rate
decoder with better quality and unchanged bits. Training is
teacher-student: the student input is the low codec's rounded latent, the
teacher target is the high codec's continuous (clipped, pre-rounding)
latent, and the objective is

    || Enh(c_low) / r_clip - c_high / r_clip ||_2^2

with both sides normalized by the shared clip radius. The network itself
sees r_clip-normalized values: Enh(c) = r_clip * Net(c / r_clip), and the
deployed output is clipped back into [-r_clip, r_clip]. The loss is taken
on the unclipped product so gradients never die at the box edge.

The scalar-quantization enhancer is a residual corrector in feature space:
SQE(f) = f + Block(f) where Block is dense-GDN-dense at the feature width.
It trains to pull coarse scalar-quantized reconstructions back toward the
originals under plain squared error.

Enhancer files use the ``FCE1`` container, the same conventions as codec
files plus source and target model ids; SQ enhancer files use ``FCS1``
with the qp they were trained for.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .binio import ByteReader, ByteWriter, atomic_write_bytes, atomic_write_text
from .codec import FeatureCodec, TrainConfig, clip_latent
from .errors import ConfigError, FormatError, ShapeError, TrainingDivergenceError
from .nn import Adam, DenseLayer, GdnLayer, GradientTape, xavier_init
from .sq import sq_dequantize, sq_quantize


def _collect_params(model) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for layer_name, parts in model._BLOCKS:
        layer = getattr(model, layer_name)
        for part in parts:
            out[f"{layer_name}.{part}"] = layer.parameters()[part]
    return out


def _flatten_grads(model, tape_grads: dict) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for layer_name, parts in model._BLOCKS:
        layer = getattr(model, layer_name)
        got = tape_grads.get(layer, {})
        for part in parts:
            ref = layer.parameters()[part]
            out[f"{layer_name}.{part}"] = got.get(part, np.zeros_like(ref))
    return out


def _write_loss_log(losses: list[float], path: str) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss"])
    for epoch, loss in enumerate(losses):
        writer.writerow([epoch, "%.10g" % loss])
    atomic_write_text(path, out.getvalue())

ENHANCER_MAGIC = b"FCE1"
ENHANCER_VERSION = 1
SQE_MAGIC = b"FCS1"
SQE_VERSION = 1


class LatentEnhancer:
    """Maps one codec's quantized latents toward another codec's continuous
    latents at the same width."""

    def __init__(
        self,
        fc1: DenseLayer,
        gdn: GdnLayer,
        fc2: DenseLayer,
        r_clip: float,
        source_model_id: str,
        target_model_id: str,
    ):
        if gdn.inverse:
            raise ConfigError("enhancer GDN must be forward mode")
        if fc1.out_dim != gdn.width or gdn.width != fc2.in_dim:
            raise ShapeError(
                f"enhancer widths disagree: {fc1.out_dim}, {gdn.width}, {fc2.in_dim}"
            )
        if fc1.in_dim != fc2.out_dim:
            raise ShapeError(
                f"enhancer must map latents to latents, got {fc1.in_dim} in, "
                f"{fc2.out_dim} out"
            )
        if r_clip <= 0:
            raise ConfigError(f"r_clip must be positive, got {r_clip}")
        self.fc1 = fc1
        self.gdn = gdn
        self.fc2 = fc2
        self.r_clip = float(r_clip)
        self.source_model_id = str(source_model_id)
        self.target_model_id = str(target_model_id)

    @property
    def latent_dim(self) -> int:
        return self.fc1.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.fc1.out_dim

    @classmethod
    def build(
        cls,
        latent_dim: int,
        r_clip: float,
        source_model_id: str,
        target_model_id: str,
        seed: int,
        hidden_dim: int | None = None,
    ) -> "LatentEnhancer":
        """Fresh enhancer; the hidden width defaults to the latent width."""
        h = latent_dim if hidden_dim is None else hidden_dim
        seeds = np.random.SeedSequence(seed).spawn(2)
        return cls(
            fc1=xavier_init(latent_dim, h, np.random.default_rng(seeds[0])),
            gdn=GdnLayer.near_identity(h),
            fc2=xavier_init(h, latent_dim, np.random.default_rng(seeds[1])),
            r_clip=r_clip,
            source_model_id=source_model_id,
            target_model_id=target_model_id,
        )

    @classmethod
    def identity(
        cls,
        latent_dim: int,
        r_clip: float,
        source_model_id: str = "identity",
        target_model_id: str = "identity",
    ) -> "LatentEnhancer":
        """Enhancer whose network is the identity map.

        As a baseline its loss is exactly the rounding error; it is also the
        training start point, since a random net would first have to relearn
        the latent geometry it is supposed to refine.
        """
        eye = np.eye(latent_dim)
        zero = np.zeros(latent_dim)
        return cls(
            fc1=DenseLayer(eye, zero),
            gdn=GdnLayer(np.ones(latent_dim), np.zeros((latent_dim, latent_dim))),
            fc2=DenseLayer(eye.copy(), zero.copy()),
            r_clip=r_clip,
            source_model_id=source_model_id,
            target_model_id=target_model_id,
        )

    _BLOCKS = (
        ("fc1", ("weights", "bias")),
        ("gdn", ("beta", "gamma")),
        ("fc2", ("weights", "bias")),
    )

    def parameters(self) -> dict[str, np.ndarray]:
        return _collect_params(self)

    def flatten_grads(self, tape_grads: dict) -> dict[str, np.ndarray]:
        return _flatten_grads(self, tape_grads)

    def project(self) -> None:
        self.gdn.project()

    def net_forward(self, normalized, tape: GradientTape | None = None) -> np.ndarray:
        h = self.fc1.forward(normalized, tape)
        h = self.gdn.forward(h, tape)
        return self.fc2.forward(h, tape)

    def enhance(self, c_low) -> np.ndarray:
        """Enhanced continuous latent, clipped into [-r_clip, r_clip], ready
        for the target codec's decoder without re-quantization."""
        c = np.asarray(c_low, dtype=np.float64)
        out = self.r_clip * self.net_forward(c / self.r_clip)
        return clip_latent(out, self.r_clip)


def enhancer_loss(
    enhancer: LatentEnhancer, c_low, c_high
) -> tuple[float, dict[str, np.ndarray]]:
    """Normalized-latent squared error and analytic gradients.

    Computed as ||Net(c_low / r) - c_high / r||_2^2 per sample, mean over
    the batch; algebraically identical to ||Enh(c_low) - c_high||^2 / r^2
    for the pre-clip enhancer output.
    """
    c_low = np.asarray(c_low, dtype=np.float64)
    c_high = np.asarray(c_high, dtype=np.float64)
    if c_low.ndim == 1:
        c_low = c_low[np.newaxis, :]
        c_high = np.atleast_2d(c_high)
    if c_low.shape != c_high.shape:
        raise ShapeError(
            f"latent blocks disagree in shape: {c_low.shape} vs {c_high.shape}"
        )
    if c_low.shape[1] != enhancer.latent_dim:
        raise ShapeError(
            f"latent width {c_low.shape[1]} does not match enhancer "
            f"{enhancer.latent_dim}"
        )
    b = c_low.shape[0]
    r = enhancer.r_clip

    tape = GradientTape()
    out = enhancer.net_forward(c_low / r, tape)
    residual = out - c_high / r
    loss = float(np.mean(np.einsum("ij,ij->i", residual, residual)))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("enhancer loss became non-finite")
    tape_grads, _ = tape.backward((2.0 / b) * residual)
    return loss, enhancer.flatten_grads(tape_grads)


def train_enhancer(
    codec_low: FeatureCodec,
    codec_high: FeatureCodec,
    features,
    config: TrainConfig,
    log_path: str | None = None,
) -> LatentEnhancer:
    """Train a latent enhancer between two codecs on a feature block.

    The student inputs (rounded low-rate latents) and teacher targets
    (continuous high-rate latents) are deterministic given the codecs, so
    they are precomputed once; minibatch order then follows config.seed.
    """
    if codec_low.latent_dim != codec_high.latent_dim:
        raise ConfigError(
            f"codecs disagree in latent width: {codec_low.latent_dim} vs "
            f"{codec_high.latent_dim}"
        )
    if codec_low.r_clip != codec_high.r_clip:
        raise ConfigError(
            f"codecs disagree in clip radius: {codec_low.r_clip} vs "
            f"{codec_high.r_clip}"
        )
    data = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ShapeError("training features must be a non-empty (N, D) block")

    student = codec_low.encode(data, mode="infer").astype(np.float64)
    teacher = codec_high.encode(data, mode="continuous")

    # identity start: the initial loss is then just the rounding error, and
    # every optimizer step refines an already-sane latent map
    enhancer = LatentEnhancer.identity(
        codec_low.latent_dim,
        codec_low.r_clip,
        source_model_id=codec_low.model_id,
        target_model_id=codec_high.model_id,
    )
    optimizer = Adam(enhancer.parameters(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))

    n = data.shape[0]
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = enhancer_loss(enhancer, student[idx], teacher[idx])
            optimizer.step(grads)
            enhancer.project()
            loss_sum += loss * len(idx)
        losses.append(loss_sum / n)
    if log_path is not None:
        _write_loss_log(losses, log_path)
    return enhancer


class SqEnhancer:
    """Residual corrector for scalar-quantized reconstructions:
    SQE(f) = f + Block(f) with Block = dense, GDN, dense at feature width."""

    def __init__(self, fc1: DenseLayer, gdn: GdnLayer, fc2: DenseLayer, qp: int):
        if gdn.inverse:
            raise ConfigError("SQ enhancer GDN must be forward mode")
        if fc1.out_dim != gdn.width or gdn.width != fc2.in_dim:
            raise ShapeError(
                f"block widths disagree: {fc1.out_dim}, {gdn.width}, {fc2.in_dim}"
            )
        if fc1.in_dim != fc2.out_dim:
            raise ShapeError("residual block must preserve the feature width")
        self.fc1 = fc1
        self.gdn = gdn
        self.fc2 = fc2
        self.qp = int(qp)

    @property
    def feature_dim(self) -> int:
        return self.fc1.in_dim

    @classmethod
    def build(cls, feature_dim: int, qp: int, seed: int) -> "SqEnhancer":
        seeds = np.random.SeedSequence(seed).spawn(2)
        return cls(
            fc1=xavier_init(feature_dim, feature_dim, np.random.default_rng(seeds[0])),
            gdn=GdnLayer.near_identity(feature_dim),
            fc2=xavier_init(feature_dim, feature_dim, np.random.default_rng(seeds[1])),
            qp=qp,
        )

    _BLOCKS = (
        ("fc1", ("weights", "bias")),
        ("gdn", ("beta", "gamma")),
        ("fc2", ("weights", "bias")),
    )

    def parameters(self) -> dict[str, np.ndarray]:
        return _collect_params(self)

    def flatten_grads(self, tape_grads: dict) -> dict[str, np.ndarray]:
        return _flatten_grads(self, tape_grads)

    def project(self) -> None:
        self.gdn.project()

    def block_forward(self, f, tape: GradientTape | None = None) -> np.ndarray:
        h = self.fc1.forward(f, tape)
        h = self.gdn.forward(h, tape)
        return self.fc2.forward(h, tape)

    def apply(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        return f + self.block_forward(f)


def sqe_loss(
    enhancer: SqEnhancer, f_sq, f_raw
) -> tuple[float, dict[str, np.ndarray]]:
    """Squared error of the corrected reconstruction against the original,
    mean over the batch, with analytic gradients."""
    f_sq = np.atleast_2d(np.asarray(f_sq, dtype=np.float64))
    f_raw = np.atleast_2d(np.asarray(f_raw, dtype=np.float64))
    if f_sq.shape != f_raw.shape:
        raise ShapeError(f"blocks disagree in shape: {f_sq.shape} vs {f_raw.shape}")
    b = f_sq.shape[0]
    tape = GradientTape()
    corrected = f_sq + enhancer.block_forward(f_sq, tape)
    residual = corrected - f_raw
    loss = float(np.mean(np.einsum("ij,ij->i", residual, residual)))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("SQ enhancer loss became non-finite")
    tape_grads, _ = tape.backward((2.0 / b) * residual)
    return loss, enhancer.flatten_grads(tape_grads)


def train_sqe(
    features, qp: int, config: TrainConfig, log_path: str | None = None
) -> SqEnhancer:
    """Train a residual corrector for the scalar quantizer at one qp."""
    data = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ShapeError("training features must be a non-empty (N, D) block")
    f_sq = sq_dequantize(sq_quantize(data, qp), qp)

    enhancer = SqEnhancer.build(data.shape[1], qp, seed=config.seed)
    optimizer = Adam(enhancer.parameters(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 3]))

    n = data.shape[0]
    losses: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = sqe_loss(enhancer, f_sq[idx], data[idx])
            optimizer.step(grads)
            enhancer.project()
            loss_sum += loss * len(idx)
        losses.append(loss_sum / n)
    if log_path is not None:
        _write_loss_log(losses, log_path)
    return enhancer


def _write_block_params(w: ByteWriter, model) -> None:
    for param in model.parameters().values():
        w.array_f64(param)


def save_enhancer(enhancer: LatentEnhancer, path: str) -> None:
    w = ByteWriter()
    w.raw(ENHANCER_MAGIC)
    w.u16(ENHANCER_VERSION)
    w.u16(enhancer.latent_dim)
    w.u16(enhancer.hidden_dim)
    w.f64(enhancer.r_clip)
    w.short_str(enhancer.source_model_id)
    w.short_str(enhancer.target_model_id)
    _write_block_params(w, enhancer)
    atomic_write_bytes(path, w.getvalue())


def load_enhancer(path: str) -> LatentEnhancer:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = ByteReader(blob, source=path)
    r.expect_magic(ENHANCER_MAGIC)
    version = r.u16("version")
    if version != ENHANCER_VERSION:
        raise FormatError(
            f"unsupported enhancer version {version}", offset=4, source=path
        )
    m = r.u16("latent dim")
    h = r.u16("hidden dim")
    if min(m, h) == 0:
        raise r.fail("enhancer dimensions must be positive")
    r_clip = r.f64("r_clip")
    if not (np.isfinite(r_clip) and r_clip > 0):
        raise FormatError(f"invalid r_clip {r_clip}", source=path)
    source_id = r.short_str("source model id")
    target_id = r.short_str("target model id")
    fc1 = DenseLayer(r.array_f64((h, m), "fc1 weights"), r.array_f64((h,), "fc1 bias"))
    try:
        gdn = GdnLayer(r.array_f64((h,), "gdn beta"), r.array_f64((h, h), "gdn gamma"))
    except ConfigError as exc:
        raise FormatError(f"enhancer GDN: {exc}", source=path) from None
    fc2 = DenseLayer(r.array_f64((m, h), "fc2 weights"), r.array_f64((m,), "fc2 bias"))
    r.expect_end()
    return LatentEnhancer(fc1, gdn, fc2, r_clip, source_id, target_id)


def save_sqe(enhancer: SqEnhancer, path: str) -> None:
    w = ByteWriter()
    w.raw(SQE_MAGIC)
    w.u16(SQE_VERSION)
    w.u16(enhancer.feature_dim)
    w.u16(enhancer.gdn.width)
    w.i16(enhancer.qp)
    _write_block_params(w, enhancer)
    atomic_write_bytes(path, w.getvalue())


def load_sqe(path: str) -> SqEnhancer:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = ByteReader(blob, source=path)
    r.expect_magic(SQE_MAGIC)
    version = r.u16("version")
    if version != SQE_VERSION:
        raise FormatError(
            f"unsupported SQ-enhancer version {version}", offset=4, source=path
        )
    d = r.u16("feature dim")
    h = r.u16("hidden dim")
    if min(d, h) == 0:
        raise r.fail("SQ-enhancer dimensions must be positive")
    qp = r.i16("qp")
    fc1 = DenseLayer(r.array_f64((h, d), "fc1 weights"), r.array_f64((h,), "fc1 bias"))
    try:
        gdn = GdnLayer(r.array_f64((h,), "gdn beta"), r.array_f64((h, h), "gdn gamma"))
    except ConfigError as exc:
        raise FormatError(f"SQ-enhancer GDN: {exc}", source=path) from None
    fc2 = DenseLayer(r.array_f64((d, h), "fc2 weights"), r.array_f64((d,), "fc2 bias"))
    r.expect_end()
    return SqEnhancer(fc1, gdn, fc2, qp)
