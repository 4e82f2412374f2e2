"""End-to-end learned feature codec.

The encoder maps a feature vector through a dense layer, GDN, and a second
dense layer down to a compact latent; the decoder mirrors it with inverse
GDN. Training optimizes the rate-distortion objective

    L = ||f - f_rec||_2^2 + lambda * ||c||_1

per feature (mean over a batch), where c is the train-time latent: the
encoder output clipped to [-r_clip, r_clip] with uniform noise in
[-noise_half_width, +noise_half_width] added to stand in for rounding. At
inference the latent is clipped and rounded half away from zero, which
makes it directly entropy-codable.

Smaller lambda buys lower distortion at a higher rate; the conventional
operating points span lambda = 1e-4 down to 1e-7 with ids "L0".."L3".

Model files use the ``FCM1`` container: little-endian header followed by
float64 parameter blocks in a fixed order (encoder dense 1, encoder GDN,
encoder dense 2, decoder dense 1, decoder IGDN, decoder dense 2, weights
before biases, beta before gamma).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

from .binio import ByteReader, ByteWriter, atomic_write_bytes
from .errors import ConfigError, FormatError, ShapeError, TrainingDivergenceError
from .nn import Adam, DenseLayer, GdnLayer, GradientTape, xavier_init

MODEL_MAGIC = b"FCM1"
MODEL_VERSION = 1

OPERATING_POINTS = {"L0": 1e-4, "L1": 1e-5, "L2": 1e-6, "L3": 1e-7}


@dataclass
class TrainConfig:
    """Hyperparameters for codec, enhancer, and residual trainings.

    Defaults are the conventional values: Adam at learning rate 1e-4,
    batches of 32, 40 epochs, clip radius 20.0, rounding-noise half width
    0.5, latent width 32, hidden width 128.
    """

    lam: float = 1e-4
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 40
    r_clip: float = 20.0
    noise_half_width: float = 0.5
    seed: int = 42
    latent_dim: int = 32
    hidden_dim: int = 128

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.r_clip <= 0:
            raise ConfigError(f"r_clip must be positive, got {self.r_clip}")
        if self.noise_half_width < 0:
            raise ConfigError(f"noise_half_width must be >= 0, got {self.noise_half_width}")
        if self.latent_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("latent_dim and hidden_dim must be >= 1")

    def with_lam(self, lam: float) -> "TrainConfig":
        return replace(self, lam=lam)


def clip_latent(c, r_clip: float) -> np.ndarray:
    """Clamp latent values into [-r_clip, r_clip]."""
    if r_clip <= 0:
        raise ConfigError(f"r_clip must be positive, got {r_clip}")
    return np.clip(np.asarray(c, dtype=np.float64), -r_clip, r_clip)


def train_noise(shape, half_width: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform rounding surrogate noise in [-half_width, +half_width]."""
    if half_width < 0:
        raise ConfigError(f"half_width must be >= 0, got {half_width}")
    return rng.uniform(-half_width, half_width, size=shape)


def quantize_latent(c) -> np.ndarray:
    """Round to the nearest integer with ties away from zero, so 0.5 -> 1
    and -1.5 -> -2 (numpy's round would send ties to even)."""
    c = np.asarray(c, dtype=np.float64)
    return np.copysign(np.floor(np.abs(c) + 0.5), c).astype(np.int64)


class FeatureCodec:
    """Encoder-decoder pair with fixed operating point and identity string."""

    def __init__(
        self,
        enc_fc1: DenseLayer,
        enc_gdn: GdnLayer,
        enc_fc2: DenseLayer,
        dec_fc1: DenseLayer,
        dec_igdn: GdnLayer,
        dec_fc2: DenseLayer,
        lam: float,
        r_clip: float,
        model_id: str,
    ):
        if enc_gdn.inverse or not dec_igdn.inverse:
            raise ConfigError("encoder GDN must be forward mode, decoder inverse mode")
        chain = [
            (enc_fc1.out_dim, enc_gdn.width, "encoder dense 1 -> GDN"),
            (enc_gdn.width, enc_fc2.in_dim, "encoder GDN -> dense 2"),
            (enc_fc2.out_dim, dec_fc1.in_dim, "latent width"),
            (dec_fc1.out_dim, dec_igdn.width, "decoder dense 1 -> IGDN"),
            (dec_igdn.width, dec_fc2.in_dim, "decoder IGDN -> dense 2"),
            (dec_fc2.out_dim, enc_fc1.in_dim, "reconstruction width"),
        ]
        for a, b, what in chain:
            if a != b:
                raise ShapeError(f"layer widths disagree at {what}: {a} vs {b}")
        if lam <= 0 or r_clip <= 0:
            raise ConfigError("lam and r_clip must be positive")
        self.enc_fc1 = enc_fc1
        self.enc_gdn = enc_gdn
        self.enc_fc2 = enc_fc2
        self.dec_fc1 = dec_fc1
        self.dec_igdn = dec_igdn
        self.dec_fc2 = dec_fc2
        self.lam = float(lam)
        self.r_clip = float(r_clip)
        self.model_id = str(model_id)

    @property
    def feature_dim(self) -> int:
        return self.enc_fc1.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.enc_fc1.out_dim

    @property
    def latent_dim(self) -> int:
        return self.enc_fc2.out_dim

    @classmethod
    def build(cls, feature_dim: int, config: TrainConfig, model_id: str) -> "FeatureCodec":
        """Fresh codec with Glorot-uniform dense layers and near-identity
        normalization, deterministic in config.seed."""
        if feature_dim < 1:
            raise ShapeError(f"feature_dim must be >= 1, got {feature_dim}")
        d, h, m = feature_dim, config.hidden_dim, config.latent_dim
        seeds = np.random.SeedSequence(config.seed).spawn(4)
        return cls(
            enc_fc1=xavier_init(d, h, np.random.default_rng(seeds[0])),
            enc_gdn=GdnLayer.near_identity(h),
            enc_fc2=xavier_init(h, m, np.random.default_rng(seeds[1])),
            dec_fc1=xavier_init(m, h, np.random.default_rng(seeds[2])),
            dec_igdn=GdnLayer.near_identity(h, inverse=True),
            dec_fc2=xavier_init(h, d, np.random.default_rng(seeds[3])),
            lam=config.lam,
            r_clip=config.r_clip,
            model_id=model_id,
        )

    _BLOCKS = (
        ("enc_fc1", ("weights", "bias")),
        ("enc_gdn", ("beta", "gamma")),
        ("enc_fc2", ("weights", "bias")),
        ("dec_fc1", ("weights", "bias")),
        ("dec_igdn", ("beta", "gamma")),
        ("dec_fc2", ("weights", "bias")),
    )

    def parameters(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed "layer.block", in serialization order."""
        out: dict[str, np.ndarray] = {}
        for layer_name, parts in self._BLOCKS:
            layer = getattr(self, layer_name)
            for part in parts:
                out[f"{layer_name}.{part}"] = layer.parameters()[part]
        return out

    def flatten_grads(self, tape_grads: dict) -> dict[str, np.ndarray]:
        """Rekey tape gradients by block name, zero-filling blocks the pass
        never touched."""
        out: dict[str, np.ndarray] = {}
        for layer_name, parts in self._BLOCKS:
            layer = getattr(self, layer_name)
            got = tape_grads.get(layer, {})
            for part in parts:
                ref = layer.parameters()[part]
                out[f"{layer_name}.{part}"] = got.get(part, np.zeros_like(ref))
        return out

    def project(self) -> None:
        self.enc_gdn.project()
        self.dec_igdn.project()

    def encoder_forward(self, f, tape: GradientTape | None = None) -> np.ndarray:
        h = self.enc_fc1.forward(f, tape)
        h = self.enc_gdn.forward(h, tape)
        return self.enc_fc2.forward(h, tape)

    def decoder_forward(self, c, tape: GradientTape | None = None) -> np.ndarray:
        h = self.dec_fc1.forward(c, tape)
        h = self.dec_igdn.forward(h, tape)
        return self.dec_fc2.forward(h, tape)

    def encode(
        self,
        f,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
        noise_half_width: float = 0.5,
    ):
        """Encode features to a latent.

        mode "infer" returns integer codes (clip then round half away from
        zero); mode "continuous" returns the clipped continuous latent; mode
        "train" additionally adds uniform rounding noise and needs ``rng``.
        """
        c = clip_latent(self.encoder_forward(f), self.r_clip)
        if mode == "infer":
            return quantize_latent(c)
        if mode == "continuous":
            return c
        if mode == "train":
            if rng is None:
                raise ConfigError("train-mode encoding needs an rng for the noise draw")
            return c + train_noise(c.shape, noise_half_width, rng)
        raise ConfigError(f"unknown encode mode {mode!r}")

    def decode(self, c) -> np.ndarray:
        """Reconstruct features from integer or continuous latents."""
        return self.decoder_forward(np.asarray(c, dtype=np.float64))


def rd_loss(
    model: FeatureCodec, batch, noise
) -> tuple[float, dict[str, np.ndarray], float, float]:
    """Rate-distortion loss and analytic gradients for one batch.

    ``noise`` is the already-drawn rounding surrogate, shaped like the
    latent block, so the loss is a deterministic function of (parameters,
    batch, noise) and finite differences can probe it. Returns
    (loss, grads, mean squared error, mean latent L1), each averaged over
    the batch.
    """
    f = np.asarray(batch, dtype=np.float64)
    if f.ndim == 1:
        f = f[np.newaxis, :]
    if f.ndim != 2 or f.shape[1] != model.feature_dim:
        raise ShapeError(
            f"batch must be (B, {model.feature_dim}), got shape {f.shape}"
        )
    b = f.shape[0]
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != (b, model.latent_dim):
        raise ShapeError(
            f"noise must be shaped ({b}, {model.latent_dim}), got {noise.shape}"
        )

    enc_tape = GradientTape()
    c_pre = model.encoder_forward(f, enc_tape)
    inside = np.abs(c_pre) <= model.r_clip
    c_train = np.clip(c_pre, -model.r_clip, model.r_clip) + noise

    dec_tape = GradientTape()
    f_rec = model.decoder_forward(c_train, dec_tape)

    residual = f_rec - f
    mse_terms = np.einsum("ij,ij->i", residual, residual)
    l1_terms = np.abs(c_train).sum(axis=1)
    loss = float(np.mean(mse_terms + model.lam * l1_terms))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("rate-distortion loss became non-finite")

    grad_rec = (2.0 / b) * residual
    dec_grads, grad_latent = dec_tape.backward(grad_rec)
    grad_latent = grad_latent + (model.lam / b) * np.sign(c_train)
    grad_c_pre = grad_latent * inside
    enc_grads, _ = enc_tape.backward(grad_c_pre)

    merged = dict(dec_grads)
    merged.update(enc_grads)
    grads = model.flatten_grads(merged)
    return loss, grads, float(np.mean(mse_terms)), float(np.mean(l1_terms))


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    mean_mse: float
    mean_l1: float


def train_codec(
    features,
    config: TrainConfig,
    model_id: str = "L0",
    log_path: str | None = None,
) -> FeatureCodec:
    """Train a codec on a feature block with seeded minibatch Adam.

    Every stochastic choice (initial weights, epoch shuffles, noise draws)
    derives from config.seed, so identical inputs give a bit-identical
    model. Per-epoch mean loss, squared error, and latent L1 are returned
    via the optional CSV log.
    """
    data = np.asarray(getattr(features, "data", features), dtype=np.float64)
    if data.ndim != 2:
        raise ShapeError(f"training features must be (N, D), got ndim={data.ndim}")
    n = data.shape[0]
    if n < 1:
        raise ConfigError("cannot train on an empty feature set")

    model = FeatureCodec.build(data.shape[1], config, model_id)
    optimizer = Adam(model.parameters(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))

    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        loss_sum = mse_sum = l1_sum = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = data[idx]
            noise = train_noise(
                (len(idx), model.latent_dim), config.noise_half_width, rng
            )
            try:
                loss, grads, mse, l1 = rd_loss(model, batch, noise)
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(
                    f"{exc} (epoch {epoch}, step {start // config.batch_size})"
                ) from None
            optimizer.step(grads)
            model.project()
            loss_sum += loss * len(idx)
            mse_sum += mse * len(idx)
            l1_sum += l1 * len(idx)
        history.append(
            EpochStats(epoch, loss_sum / n, mse_sum / n, l1_sum / n)
        )
    if log_path is not None:
        write_training_log(history, log_path)
    return model


def write_training_log(history: list[EpochStats], path: str) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "mean_loss", "mean_mse", "mean_l1"])
    for row in history:
        writer.writerow(
            [row.epoch, "%.10g" % row.mean_loss, "%.10g" % row.mean_mse, "%.10g" % row.mean_l1]
        )
    atomic_write_bytes(path, out.getvalue().encode("utf-8"))


def save_model(model: FeatureCodec, path: str) -> None:
    """Serialize to the FCM1 container."""
    w = ByteWriter()
    w.raw(MODEL_MAGIC)
    w.u16(MODEL_VERSION)
    w.u16(model.feature_dim)
    w.u16(model.latent_dim)
    w.u16(model.hidden_dim)
    w.f64(model.r_clip)
    w.f64(model.lam)
    w.short_str(model.model_id)
    for param in model.parameters().values():
        w.array_f64(param)
    atomic_write_bytes(path, w.getvalue())


def load_model(path: str) -> FeatureCodec:
    """Parse an FCM1 container; truncation, bad magic, or an unsupported
    version raise FormatError with the failing byte offset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = ByteReader(blob, source=path)
    r.expect_magic(MODEL_MAGIC)
    version = r.u16("version")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}", offset=4, source=path)
    d = r.u16("feature dim")
    m = r.u16("latent dim")
    h = r.u16("hidden dim")
    if min(d, m, h) == 0:
        raise r.fail("model dimensions must be positive")
    r_clip = r.f64("r_clip")
    lam = r.f64("lambda")
    if not (np.isfinite(r_clip) and r_clip > 0):
        raise FormatError(f"invalid r_clip {r_clip}", source=path)
    if not (np.isfinite(lam) and lam > 0):
        raise FormatError(f"invalid lambda {lam}", source=path)
    model_id = r.short_str("model id")

    def dense(n_in, n_out, what):
        weights = r.array_f64((n_out, n_in), f"{what} weights")
        bias = r.array_f64((n_out,), f"{what} bias")
        return DenseLayer(weights, bias)

    def gdn(width, inverse, what):
        beta = r.array_f64((width,), f"{what} beta")
        gamma = r.array_f64((width, width), f"{what} gamma")
        try:
            return GdnLayer(beta, gamma, inverse=inverse)
        except ConfigError as exc:
            raise FormatError(f"{what}: {exc}", source=path) from None

    enc_fc1 = dense(d, h, "encoder dense 1")
    enc_gdn = gdn(h, False, "encoder GDN")
    enc_fc2 = dense(h, m, "encoder dense 2")
    dec_fc1 = dense(m, h, "decoder dense 1")
    dec_igdn = gdn(h, True, "decoder IGDN")
    dec_fc2 = dense(h, d, "decoder dense 2")
    r.expect_end()
    return FeatureCodec(
        enc_fc1, enc_gdn, enc_fc2, dec_fc1, dec_igdn, dec_fc2,
        lam=lam, r_clip=r_clip, model_id=model_id,
    )
