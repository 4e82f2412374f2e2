"""Dense-network substrate shared by every trained model in the package.

All layers operate on float64 row vectors or batches of rows, and every
forward pass can record itself onto a GradientTape. Replaying the tape in
reverse yields analytic gradients for each parameter the pass touched plus
the gradient with respect to the pass input. Training code pairs the tape
with the Adam optimizer below; grad_check is the central-difference oracle
that keeps every backward rule honest.

The normalization layer is generalized divisive normalization (GDN),

    y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2)

with a multiplicative inverse form (IGDN) used on the decoder side,

    y_i = x_i * sqrt(beta_i + sum_j gamma_ij * x_j^2).

Both forms share the constraint that beta stays at or above a small floor
and gamma stays elementwise non-negative; optimizers must call project()
after every step to re-establish the constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TrainingDivergenceError

Array = np.ndarray

GDN_BETA_FLOOR = 1e-6
GDN_GAMMA_INIT = 1e-3


def _as_batch(x, width: int, what: str) -> tuple[Array, bool]:
    """Coerce a vector or batch to a float64 2-D array of the given width.

    Returns the batch and a flag telling whether the input was a single
    vector, so callers can hand back results in the caller's own rank.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[np.newaxis, :]
        was_vector = True
    elif a.ndim == 2:
        was_vector = False
    else:
        raise ShapeError(f"{what}: expected a vector or a batch of rows, got ndim={a.ndim}")
    if a.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got {a.shape[1]}")
    return a, was_vector


class GradientTape:
    """Ordered record of one forward pass.

    Layers append (layer, cache) entries as they run. backward() walks the
    record in reverse once, chaining each layer's backward rule, and returns
    the accumulated parameter gradients together with the gradient at the
    pass input. A tape is single-use: recording after backward, or a second
    backward, raises.
    """

    def __init__(self):
        self._entries: list[tuple[object, dict]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, layer, cache: dict) -> None:
        if self._consumed:
            raise RuntimeError("GradientTape already replayed, record a fresh tape")
        self._entries.append((layer, cache))

    def backward(self, output_grad) -> tuple[dict, Array]:
        """Chain backward rules from the last recorded layer to the first.

        output_grad must match the output of the final recorded forward. The
        result is (param_grads, input_grad) where param_grads maps each layer
        object to a dict of gradient arrays named like its parameters.
        Gradients for a layer recorded more than once are summed.
        """
        if self._consumed:
            raise RuntimeError("GradientTape already replayed")
        if not self._entries:
            raise RuntimeError("GradientTape is empty, nothing to replay")
        self._consumed = True

        last_layer, last_cache = self._entries[-1]
        g, _ = _as_batch(output_grad, last_cache["out_width"], "output_grad")
        if g.shape[0] != last_cache["batch"]:
            raise ShapeError(
                f"output_grad batch {g.shape[0]} does not match forward batch "
                f"{last_cache['batch']}"
            )

        param_grads: dict[object, dict[str, Array]] = {}
        for layer, cache in reversed(self._entries):
            g, pg = layer.backward(cache, g)
            acc = param_grads.setdefault(layer, {})
            for name, val in pg.items():
                if name in acc:
                    acc[name] = acc[name] + val
                else:
                    acc[name] = val

        first_cache = self._entries[0][1]
        if first_cache["was_vector"]:
            g = g[0]
        return param_grads, g


class DenseLayer:
    """Affine map y = W x + b with W stored as (out_dim, in_dim)."""

    def __init__(self, weights, bias):
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if weights.ndim != 2:
            raise ShapeError(f"weights must be 2-D, got ndim={weights.ndim}")
        if bias.ndim != 1 or bias.shape[0] != weights.shape[0]:
            raise ShapeError(
                f"bias shape {bias.shape} does not match weight rows {weights.shape[0]}"
            )
        self.weights = weights
        self.bias = bias

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def parameters(self) -> dict[str, Array]:
        return {"weights": self.weights, "bias": self.bias}

    def project(self) -> None:
        """Dense layers are unconstrained; present for interface symmetry."""

    def forward(self, x, tape: GradientTape | None = None) -> Array:
        batch, was_vector = _as_batch(x, self.in_dim, "DenseLayer input")
        out = batch @ self.weights.T + self.bias
        if tape is not None:
            tape.record(
                self,
                {
                    "x": batch,
                    "batch": batch.shape[0],
                    "out_width": self.out_dim,
                    "was_vector": was_vector,
                },
            )
        return out[0] if was_vector else out

    def backward(self, cache: dict, grad_out: Array) -> tuple[Array, dict[str, Array]]:
        x = cache["x"]
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
        grad_in = grad_out @ self.weights
        return grad_in, {"weights": grad_w, "bias": grad_b}


def xavier_init(fan_in: int, fan_out: int, seed) -> DenseLayer:
    """Glorot-uniform DenseLayer: weights drawn from U[-a, a] with
    a = sqrt(6 / (fan_in + fan_out)), bias zero.

    ``seed`` may be an int or a numpy Generator; the draw is deterministic
    for a given seed.
    """
    if fan_in < 1 or fan_out < 1:
        raise ShapeError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    weights = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    return DenseLayer(weights, np.zeros(fan_out))


class GdnLayer:
    """Generalized divisive normalization over a fixed width.

    Forward mode divides each component by sqrt(beta_i + sum_j gamma_ij x_j^2);
    inverse mode multiplies by the same factor. beta and gamma are trainable;
    the constructor and project() enforce beta >= beta_floor and gamma >= 0.
    """

    def __init__(self, beta, gamma, inverse: bool = False, beta_floor: float = GDN_BETA_FLOOR):
        beta = np.asarray(beta, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        if beta.ndim != 1:
            raise ShapeError(f"beta must be 1-D, got ndim={beta.ndim}")
        if gamma.shape != (beta.shape[0], beta.shape[0]):
            raise ShapeError(
                f"gamma shape {gamma.shape} must be square of side {beta.shape[0]}"
            )
        if beta_floor <= 0:
            raise ConfigError(f"beta_floor must be positive, got {beta_floor}")
        if np.any(beta < beta_floor):
            raise ConfigError(f"beta must be >= beta_floor ({beta_floor})")
        if np.any(gamma < 0):
            raise ConfigError("gamma must be elementwise non-negative")
        self.beta = beta
        self.gamma = gamma
        self.inverse = bool(inverse)
        self.beta_floor = float(beta_floor)

    @classmethod
    def near_identity(cls, width: int, inverse: bool = False) -> "GdnLayer":
        """Standard initialization: beta = 1, gamma = 1e-3 on the diagonal."""
        if width < 1:
            raise ShapeError(f"width must be >= 1, got {width}")
        return cls(np.ones(width), GDN_GAMMA_INIT * np.eye(width), inverse=inverse)

    @property
    def width(self) -> int:
        return self.beta.shape[0]

    def parameters(self) -> dict[str, Array]:
        return {"beta": self.beta, "gamma": self.gamma}

    def project(self) -> None:
        """Clamp parameters back into their legal region. Call after every
        optimizer step; the backward rules assume the constraint holds."""
        np.maximum(self.beta, self.beta_floor, out=self.beta)
        np.maximum(self.gamma, 0.0, out=self.gamma)

    def forward(self, x, tape: GradientTape | None = None) -> Array:
        batch, was_vector = _as_batch(x, self.width, "GdnLayer input")
        # t_i = beta_i + sum_j gamma_ij x_j^2, s_i = sqrt(t_i)
        t = self.beta + np.square(batch) @ self.gamma.T
        s = np.sqrt(t)
        out = batch * s if self.inverse else batch / s
        if tape is not None:
            tape.record(
                self,
                {
                    "x": batch,
                    "s": s,
                    "t": t,
                    "batch": batch.shape[0],
                    "out_width": self.width,
                    "was_vector": was_vector,
                },
            )
        return out[0] if was_vector else out

    def backward(self, cache: dict, grad_out: Array) -> tuple[Array, dict[str, Array]]:
        x, s, t = cache["x"], cache["s"], cache["t"]
        if self.inverse:
            # y_i = x_i s_i: dy_i/dx_k = delta_ik s_i + x_i gamma_ik x_k / s_i
            v = grad_out * x / s
            grad_in = grad_out * s + x * (v @ self.gamma)
            grad_beta = 0.5 * v.sum(axis=0)
            grad_gamma = 0.5 * v.T @ np.square(x)
        else:
            # y_i = x_i / s_i: dy_i/dx_k = delta_ik / s_i - x_i gamma_ik x_k / s_i^3
            u = grad_out * x / (t * s)
            grad_in = grad_out / s - x * (u @ self.gamma)
            grad_beta = -0.5 * u.sum(axis=0)
            grad_gamma = -0.5 * u.T @ np.square(x)
        return grad_in, {"beta": grad_beta, "gamma": grad_gamma}


class Adam:
    """Adam with bias correction over a dict of named parameter arrays.

    The parameter arrays are updated in place so that the owning layers see
    every step. Hyperparameter defaults follow the common convention:
    beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    """

    def __init__(
        self,
        params: dict[str, Array],
        learning_rate: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if not params:
            raise ConfigError("Adam needs at least one parameter block")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if learning_rate <= 0 or epsilon <= 0:
            raise ConfigError("learning_rate and epsilon must be positive")
        self.params = params
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, Array]) -> None:
        """Apply one update. Raises TrainingDivergenceError, naming the
        offending block, if any gradient is non-finite."""
        missing = set(self.params) - set(grads)
        if missing:
            raise ConfigError(f"gradients missing for blocks: {sorted(missing)}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} shape {p.shape}"
                )
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(
                    f"non-finite gradient in parameter block {name!r} at step {self.t}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


@dataclass
class BlockCheck:
    """Finite-difference comparison summary for one parameter block."""

    name: str
    max_rel_error: float
    mean_rel_error: float
    checked: int


@dataclass
class GradCheckReport:
    blocks: list[BlockCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((b.max_rel_error for b in self.blocks), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance

    def __str__(self) -> str:
        lines = [
            f"{b.name}: max {b.max_rel_error:.3e} mean {b.mean_rel_error:.3e} "
            f"({b.checked} coords)"
            for b in self.blocks
        ]
        return "\n".join(lines)


def grad_check(
    loss_fn,
    params: dict[str, Array],
    h: float = 1e-5,
    max_coords_per_block: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``loss_fn`` takes no arguments and returns (loss, grads) evaluated at the
    current parameter values, with grads keyed like ``params``. The parameter
    arrays are perturbed in place coordinate by coordinate and restored
    exactly. When a block has more coordinates than max_coords_per_block, a
    seeded random subset is probed.

    The relative error for one coordinate is |analytic - numeric| divided by
    max(|analytic|, |numeric|, 1e-6); the floor keeps noise on near-zero
    gradients from registering as large relative error.
    """
    base_loss, analytic = loss_fn()
    if not np.isfinite(base_loss):
        raise TrainingDivergenceError("loss is non-finite at the probe point")
    rng = np.random.default_rng(seed)
    report = GradCheckReport()
    for name in params:
        p = params[name]
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != p.shape:
            raise ShapeError(
                f"analytic gradient shape {a.shape} does not match block "
                f"{name!r} shape {p.shape}"
            )
        size = p.size
        if max_coords_per_block is not None and size > max_coords_per_block:
            coords = rng.choice(size, size=max_coords_per_block, replace=False)
        else:
            coords = np.arange(size)
        flat = p.reshape(-1)
        errors = np.empty(len(coords))
        for k, idx in enumerate(coords):
            original = flat[idx]
            flat[idx] = original + h
            loss_plus, _ = loss_fn()
            flat[idx] = original - h
            loss_minus, _ = loss_fn()
            flat[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            ana = a.reshape(-1)[idx]
            scale = max(abs(ana), abs(numeric), 1e-6)
            errors[k] = abs(ana - numeric) / scale
        report.blocks.append(
            BlockCheck(
                name=name,
                max_rel_error=float(errors.max()) if len(errors) else 0.0,
                mean_rel_error=float(errors.mean()) if len(errors) else 0.0,
                checked=int(len(coords)),
            )
        )
    return report
