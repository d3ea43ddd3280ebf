"""Dense feed-forward networks with rectifier, tanh and dual-pathway units.

A network is a chain of affine layers ``z = a W^T + b`` followed by an
elementwise activation. Hidden layers carry the nonlinearity; the output
layer is normally linear. Batches are stored one sample per row.

The dual-pathway unit pairs a rectifier with a companion that has negated
input and output weights. Collapsing the pair gives a single unit with the
antisymmetric activation::

    g(z; t) = max(0, z + t) - max(0, t - z)

where the per-unit threshold ``t`` is trained alongside weights and biases.
:func:`expand_dual` and :func:`compact_dual` convert between the two forms.

Flattened parameter order
-------------------------
Layers in order; within a layer the weight matrix row-major (skipped for tied
layers, whose weight is the transpose of an earlier layer's), then the bias,
then the thresholds of dual-pathway layers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, NumericFailure, UnsupportedStructureError

__all__ = [
    "Activation",
    "ActivationKind",
    "LayerSpec",
    "NetworkParams",
    "ForwardCache",
    "activation_eval",
    "activation_grad",
    "forward",
    "backward",
    "mse_loss",
    "expand_dual",
    "compact_dual",
    "init_params",
    "params_equal",
    "PatchBatch",
]


class Activation(enum.Enum):
    LINEAR = "linear"
    TANH = "tanh"
    RECTIFIER = "rectifier"
    DUAL = "dual"


@dataclass
class ActivationKind:
    """Activation variant of a layer; dual-pathway layers also own their thresholds."""

    variant: Activation
    t: Optional[np.ndarray] = None

    def __post_init__(self):
        self.variant = Activation(self.variant)
        if self.variant is Activation.DUAL:
            if self.t is None:
                raise ContractError("dual-pathway activation requires thresholds t")
            self.t = np.asarray(self.t, dtype=np.float64)
            if self.t.ndim != 1:
                raise ContractError(f"thresholds must be a vector, got shape {self.t.shape}")
            if not np.all(np.isfinite(self.t)):
                raise ContractError("thresholds must be finite")
        elif self.t is not None:
            raise ContractError(f"{self.variant.value} activation takes no thresholds")

    @classmethod
    def linear(cls):
        return cls(Activation.LINEAR)

    @classmethod
    def tanh(cls):
        return cls(Activation.TANH)

    @classmethod
    def rectifier(cls):
        return cls(Activation.RECTIFIER)

    @classmethod
    def dual(cls, t):
        return cls(Activation.DUAL, np.asarray(t, dtype=np.float64))

    @property
    def is_dual(self) -> bool:
        return self.variant is Activation.DUAL


@dataclass
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: ActivationKind = field(default_factory=ActivationKind.linear)
    tied_to: Optional[int] = None

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ContractError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        t = self.activation.t
        if t is not None and t.shape[0] != self.out_dim:
            raise ContractError(
                f"threshold count {t.shape[0]} does not match layer width {self.out_dim}"
            )


class NetworkParams:
    """Layer structure plus weights and biases.

    Parameters
    ----------
    layers : sequence of LayerSpec
    weights : sequence of ndarray or None
        ``weights[l]`` has shape ``(out_dim, in_dim)``; ``None`` for tied layers.
    biases : sequence of ndarray
    """

    def __init__(self, layers: Sequence[LayerSpec], weights, biases):
        self.layers = list(layers)
        self.weights = [None if w is None else np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self._validate()

    def _validate(self):
        L = len(self.layers)
        if L == 0:
            raise ContractError("network needs at least one layer")
        if len(self.weights) != L or len(self.biases) != L:
            raise ContractError("weights/biases must have one entry per layer")
        for l, spec in enumerate(self.layers):
            if l > 0 and self.layers[l - 1].out_dim != spec.in_dim:
                raise ContractError(
                    f"layer {l - 1} outputs {self.layers[l - 1].out_dim} but layer {l} "
                    f"expects {spec.in_dim}"
                )
            if spec.tied_to is not None:
                j = spec.tied_to
                if not 0 <= j < l or self.layers[j].tied_to is not None:
                    raise ContractError(f"layer {l} tied to invalid layer {j}")
                partner = self.layers[j]
                if (partner.in_dim, partner.out_dim) != (spec.out_dim, spec.in_dim):
                    raise ContractError(f"tied layer {l} must have swapped dims of layer {j}")
                if self.weights[l] is not None:
                    raise ContractError(f"tied layer {l} cannot carry its own weight")
            else:
                w = self.weights[l]
                if w is None or w.shape != (spec.out_dim, spec.in_dim):
                    got = None if w is None else w.shape
                    raise ContractError(
                        f"layer {l} weight must be {(spec.out_dim, spec.in_dim)}, got {got}"
                    )
            if self.biases[l].shape != (spec.out_dim,):
                raise ContractError(f"layer {l} bias must have length {spec.out_dim}")

    @property
    def dims(self) -> list:
        return [self.layers[0].in_dim] + [s.out_dim for s in self.layers]

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def weight(self, l: int) -> np.ndarray:
        """Effective weight of layer ``l`` (the partner's transpose for tied layers)."""
        j = self.layers[l].tied_to
        return self.weights[l] if j is None else self.weights[j].T

    def thresholds(self, l: int) -> Optional[np.ndarray]:
        return self.layers[l].activation.t

    def layout(self):
        """Per-layer ``(weight, bias, thresholds)`` slices into the flat vector."""
        out = []
        pos = 0
        for spec in self.layers:
            if spec.tied_to is None:
                w = slice(pos, pos + spec.out_dim * spec.in_dim)
                pos = w.stop
            else:
                w = None
            b = slice(pos, pos + spec.out_dim)
            pos = b.stop
            if spec.activation.is_dual:
                t = slice(pos, pos + spec.out_dim)
                pos = t.stop
            else:
                t = None
            out.append((w, b, t))
        return out

    @property
    def n_params(self) -> int:
        _, bs, ts = self.layout()[-1]
        return (ts or bs).stop

    def flatten(self) -> np.ndarray:
        vec = np.empty(self.n_params)
        for l, (ws, bs, ts) in enumerate(self.layout()):
            if ws is not None:
                vec[ws] = self.weights[l].ravel()
            vec[bs] = self.biases[l]
            if ts is not None:
                vec[ts] = self.layers[l].activation.t
        return vec

    def with_vector(self, vec, copy: bool = True) -> "NetworkParams":
        """Same structure, parameters taken from a flat vector.

        With ``copy=False`` the new parameters are views into ``vec``.
        """
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} parameters, got shape {vec.shape}")
        if copy:
            vec = vec.copy()
        layers, weights, biases = [], [], []
        for spec, (ws, bs, ts) in zip(self.layers, self.layout()):
            act = ActivationKind(spec.activation.variant, None if ts is None else vec[ts])
            layers.append(LayerSpec(spec.in_dim, spec.out_dim, act, spec.tied_to))
            weights.append(None if ws is None else vec[ws].reshape(spec.out_dim, spec.in_dim))
            biases.append(vec[bs])
        return NetworkParams(layers, weights, biases)

    def copy(self) -> "NetworkParams":
        return self.with_vector(self.flatten())

    def describe(self) -> list:
        """JSON-friendly layer description (no parameter values)."""
        return [
            {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation.variant.value,
                "tied_to": s.tied_to,
            }
            for s in self.layers
        ]

    @classmethod
    def from_description(cls, desc, vec) -> "NetworkParams":
        layers, weights, biases = [], [], []
        for d in desc:
            variant = Activation(d["activation"])
            t = np.zeros(d["out_dim"]) if variant is Activation.DUAL else None
            layers.append(LayerSpec(int(d["in_dim"]), int(d["out_dim"]),
                                    ActivationKind(variant, t), d.get("tied_to")))
            weights.append(None if d.get("tied_to") is not None
                           else np.zeros((d["out_dim"], d["in_dim"])))
            biases.append(np.zeros(d["out_dim"]))
        return cls(layers, weights, biases).with_vector(vec)

    def __repr__(self):
        kinds = "-".join(s.activation.variant.value for s in self.layers)
        return f"NetworkParams(dims={self.dims}, activations={kinds}, n_params={self.n_params})"


@dataclass
class PatchBatch:
    """Training or inference patches, one per row.

    ``X`` holds DC-removed inputs, ``Y`` the matching targets and ``dc`` the
    per-patch mean that was subtracted. Arrays may be float32 on disk and in
    memory; the network promotes them to float64 batch by batch.
    """

    X: np.ndarray
    Y: np.ndarray
    dc: np.ndarray

    def __post_init__(self):
        n = self.X.shape[0]
        if n < 1:
            raise ContractError("a patch batch needs at least one row")
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.Y.shape[0] != n or self.dc.shape != (n,):
            raise ContractError(
                f"inconsistent batch shapes X{self.X.shape} Y{self.Y.shape} dc{self.dc.shape}"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "PatchBatch":
        return PatchBatch(self.X[idx], self.Y[idx], self.dc[idx])


def params_equal(a: NetworkParams, b: NetworkParams) -> bool:
    """Bitwise equality of structure and parameter values."""
    if a.describe() != b.describe():
        return False
    return a.flatten().tobytes() == b.flatten().tobytes()


def _check_units(kind: ActivationKind, z: np.ndarray):
    if kind.is_dual and z.shape[-1:] != kind.t.shape:
        raise ContractError(
            f"pre-activation width {z.shape[-1:]} does not match {kind.t.shape[0]} thresholds"
        )


def activation_eval(kind: ActivationKind, z) -> np.ndarray:
    """Apply an activation elementwise; ``t`` broadcasts along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    _check_units(kind, z)
    v = kind.variant
    if v is Activation.LINEAR:
        return z.copy()
    if v is Activation.TANH:
        return np.tanh(z)
    if v is Activation.RECTIFIER:
        return np.maximum(z, 0.0)
    t = kind.t
    return np.maximum(z + t, 0.0) - np.maximum(t - z, 0.0)


def activation_grad(kind: ActivationKind, z):
    """Derivatives of the activation w.r.t. its input and (dual only) its thresholds.

    The step function is taken as 1 at 0. Returns ``(dz, dt)`` with ``dt`` None
    unless the activation is dual-pathway; both are elementwise (not summed).
    """
    z = np.asarray(z, dtype=np.float64)
    _check_units(kind, z)
    v = kind.variant
    if v is Activation.LINEAR:
        return np.ones_like(z), None
    if v is Activation.TANH:
        return 1.0 - np.tanh(z) ** 2, None
    if v is Activation.RECTIFIER:
        return (z >= 0).astype(np.float64), None
    t = kind.t
    upper = (z + t >= 0).astype(np.float64)
    lower = (t - z >= 0).astype(np.float64)
    return upper + lower, upper - lower


@dataclass
class ForwardCache:
    params: NetworkParams
    inputs: list  # activation entering each layer
    pre: list  # affine outputs z of each layer


def forward(params: NetworkParams, X):
    """Run a batch (one sample per row) through the network.

    Returns
    -------
    Y_hat : ndarray, shape (n, out_dim)
    cache : ForwardCache
        Everything :func:`backward` needs.

    Raises
    ------
    NumericFailure
        If any intermediate value is non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise ContractError(f"input must have {params.in_dim} columns, got shape {X.shape}")
    a = X
    inputs, pre = [], []
    for l, spec in enumerate(params.layers):
        inputs.append(a)
        with np.errstate(invalid="ignore", over="ignore"):
            z = a @ params.weight(l).T
            z += params.biases[l]
        pre.append(z)
        a = activation_eval(spec.activation, z)
        if not np.isfinite(a).all():
            raise NumericFailure(f"non-finite activations in layer {l}")
    return a, ForwardCache(params, inputs, pre)


def backward(params: NetworkParams, cache: ForwardCache, dY) -> np.ndarray:
    """Gradient of a loss w.r.t. all free parameters, in flattened order.

    ``dY`` is the loss gradient w.r.t. the network output. Tied layers add
    their weight gradient (transposed) into the shared block.
    """
    if cache.params is not params:
        raise ContractError("cache was produced by a different parameter set")
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != cache.pre[-1].shape:
        raise ContractError(f"dY shape {dY.shape} does not match output {cache.pre[-1].shape}")
    grad = np.zeros(params.n_params)
    layout = params.layout()
    da = dY
    for l in range(len(params.layers) - 1, -1, -1):
        spec = params.layers[l]
        ws, bs, ts = layout[l]
        dz_dpre, dt = activation_grad(spec.activation, cache.pre[l])
        dz = da * dz_dpre
        if ts is not None:
            grad[ts] += np.sum(da * dt, axis=0)
        grad[bs] += dz.sum(axis=0)
        gw = dz.T @ cache.inputs[l]
        if spec.tied_to is None:
            grad[ws] += gw.ravel()
        else:
            partner = layout[spec.tied_to][0]
            grad[partner] += gw.T.ravel()
        if l > 0:
            da = dz @ params.weight(l)
    return grad


def mse_loss(Y_hat, Y):
    """Half the mean squared error over all entries: ``sum((Y_hat - Y)**2) / (2 N)``.

    ``N`` is the total number of entries (samples times outputs). Returns
    ``(loss, dY)`` with ``dY`` the gradient w.r.t. ``Y_hat``.
    """
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y_hat.shape != Y.shape:
        raise ContractError(f"shape mismatch: {Y_hat.shape} vs {Y.shape}")
    if Y.size == 0:
        raise ContractError("empty batch")
    r = Y_hat - Y
    return float(np.sum(r * r)) / (2 * Y.size), r / Y.size


def _tied_pattern_ok(params: NetworkParams, l: int, doubled) -> bool:
    j = params.layers[l].tied_to
    prev_l = doubled[l - 1] if l > 0 else False
    prev_j = doubled[j - 1] if j > 0 else False
    return prev_l == doubled[j] and doubled[l] == prev_j


def expand_dual(params: NetworkParams) -> NetworkParams:
    """Rewrite a compact dual-pathway network as a plain rectifier network.

    Each dual unit with weight row ``w``, bias ``c`` and threshold ``t`` becomes
    two rectifier units ``(w, c + t)`` and ``(-w, t - c)``; the consuming layer
    sees the pair through columns ``[V, -V]``.
    """
    L = len(params.layers)
    for l, spec in enumerate(params.layers[:-1]):
        if not spec.activation.is_dual:
            raise UnsupportedStructureError(f"hidden layer {l} is not dual-pathway")
    if params.layers[-1].activation.is_dual:
        raise UnsupportedStructureError("output layer cannot be dual-pathway")
    doubled = [l < L - 1 for l in range(L)]
    layers, weights, biases = [], [], []
    for l, spec in enumerate(params.layers):
        in_dim = spec.in_dim * (2 if l > 0 and doubled[l - 1] else 1)
        out_dim = spec.out_dim * (2 if doubled[l] else 1)
        if spec.tied_to is None:
            w = params.weights[l]
            if l > 0 and doubled[l - 1]:
                w = np.hstack([w, -w])
            if doubled[l]:
                w = np.vstack([w, -w])
        else:
            if not _tied_pattern_ok(params, l, doubled):
                raise UnsupportedStructureError(f"tied layer {l} cannot be expanded consistently")
            w = None
        c = params.biases[l]
        if doubled[l]:
            t = spec.activation.t
            b = np.concatenate([c + t, t - c])
            act = ActivationKind.rectifier()
        else:
            b = c.copy()
            act = ActivationKind(spec.activation.variant, spec.activation.t)
        layers.append(LayerSpec(in_dim, out_dim, act, spec.tied_to))
        weights.append(None if w is None else np.array(w))
        biases.append(b)
    return NetworkParams(layers, weights, biases)


def _split_pair(m: np.ndarray, axis: int, what: str):
    n = m.shape[axis]
    if n % 2:
        raise UnsupportedStructureError(f"{what}: odd size {n} cannot be paired")
    a, b = np.split(m, 2, axis=axis)
    if not np.array_equal(b, -a):
        raise UnsupportedStructureError(f"{what}: halves are not exact negations")
    return a


def compact_dual(params: NetworkParams) -> NetworkParams:
    """Inverse of :func:`expand_dual`.

    Every hidden layer must be a rectifier layer whose weight rows come in
    exact ``[W; -W]`` halves, consumed through ``[V, -V]`` columns. The paired
    biases ``b1, b1'`` become bias ``(b1 - b1') / 2`` and threshold ``(b1 + b1') / 2``.
    """
    L = len(params.layers)
    for l, spec in enumerate(params.layers[:-1]):
        if spec.activation.variant is not Activation.RECTIFIER:
            raise UnsupportedStructureError(f"hidden layer {l} is not a rectifier layer")
    doubled = [l < L - 1 for l in range(L)]
    layers, weights, biases = [], [], []
    for l, spec in enumerate(params.layers):
        in_dim = spec.in_dim // 2 if l > 0 and doubled[l - 1] else spec.in_dim
        if doubled[l] and spec.out_dim % 2:
            raise UnsupportedStructureError(f"layer {l} width {spec.out_dim} is odd")
        out_dim = spec.out_dim // 2 if doubled[l] else spec.out_dim
        if spec.tied_to is None:
            w = params.weights[l]
            if l > 0 and doubled[l - 1]:
                w = _split_pair(w, 1, f"layer {l} input columns")
            if doubled[l]:
                w = _split_pair(w, 0, f"layer {l} weight rows")
            w = np.array(w)
        else:
            if not _tied_pattern_ok(params, l, doubled):
                raise UnsupportedStructureError(f"tied layer {l} cannot be compacted consistently")
            w = None
        b = params.biases[l]
        if doubled[l]:
            b1, b1p = np.split(b, 2)
            act = ActivationKind.dual((b1 + b1p) / 2)
            b = (b1 - b1p) / 2
        else:
            act = ActivationKind(spec.activation.variant, spec.activation.t)
            b = b.copy()
        layers.append(LayerSpec(in_dim, out_dim, act, spec.tied_to))
        weights.append(w)
        biases.append(b)
    return NetworkParams(layers, weights, biases)


def _hidden_kind(activation, width: int) -> ActivationKind:
    v = Activation(activation)
    return ActivationKind(v, np.zeros(width) if v is Activation.DUAL else None)


def init_params(dims, hidden_activation="rectifier", rng=None, tied=False,
                output_activation="linear") -> NetworkParams:
    """Randomly initialized network with layer widths ``dims``.

    Weights are uniform in ``+-sqrt(6 / (fan_in + fan_out))``; biases and
    thresholds start at zero (``g`` is the identity at ``t = 0``).
    ``tied=True`` builds a single-hidden-layer autoencoder whose decoder is
    the encoder transposed; ``dims`` must then be ``[d, K, d]``.
    """
    rng = np.random.default_rng(rng)
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ContractError("need at least input and output dims")
    if tied and (len(dims) != 3 or dims[0] != dims[2]):
        raise ContractError(f"tied autoencoder needs dims [d, K, d], got {dims}")
    layers, weights, biases = [], [], []
    n_layers = len(dims) - 1
    for l in range(n_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        last = l == n_layers - 1
        kind = _hidden_kind(output_activation if last else hidden_activation, fan_out)
        tied_to = 0 if tied and last else None
        layers.append(LayerSpec(fan_in, fan_out, kind, tied_to))
        if tied_to is None:
            r = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        else:
            weights.append(None)
        biases.append(np.zeros(fan_out))
    return NetworkParams(layers, weights, biases)
