"""Feed-forward ReLU generators: activations, forward traces and weight I/O.

The network maps a latent vector ``z`` of length ``n_0`` to a signal of
length ``n``::

    x_1     = relu(W_0 z)
    x_{i+1} = relu(W_i x_i)          i = 1 .. L-1
    G(z)    = phi(W_L x_L)

``phi`` is an invertible, strictly increasing output nonlinearity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "ACTIVATION_KINDS",
    "ActivationSpec",
    "GeneratorNetwork",
    "ForwardTrace",
    "NetworkFormatError",
    "activation_eval",
    "activation_deriv",
    "activation_second_deriv",
    "activation_inverse",
    "forward",
    "make_rng",
    "random_network",
    "save_network",
    "load_network",
    "relu",
    "read_vector",
    "write_vector",
    "read_indices",
    "write_indices",
]

ACTIVATION_KINDS = ("identity", "tanh", "sigmoid", "piecewise_linear", "leaky_relu")

# clamp margin applied before inverting tanh / sigmoid
INVERSE_CLAMP = 1e-12

_TANH_SECOND_DERIV_MAX = 4.0 / (3.0 * math.sqrt(3.0))
_SIGMOID_SECOND_DERIV_MAX = 1.0 / (6.0 * math.sqrt(3.0))


class NetworkFormatError(ValueError):
    """Raised for malformed networks or weight manifests."""


def relu(v):
    return np.maximum(v, 0.0)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator for one substream of a master seed.

    The generator is Philox keyed through ``SeedSequence(seed, spawn_key=stream)``,
    so ``make_rng(s, a, b)`` is fully determined by ``(s, a, b)`` and distinct
    stream tuples give statistically independent draws.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ActivationSpec:
    """Output nonlinearity of the generator.

    Parameters
    ----------
    kind : str
        One of ``identity``, ``tanh``, ``sigmoid``, ``piecewise_linear``,
        ``leaky_relu``.
    alpha : float
        Outer slope for ``piecewise_linear`` and negative slope for
        ``leaky_relu``; must lie in ``(0, 1)``. Ignored otherwise.
    knee : float
        Half-width ``c`` of the unit-slope band of ``piecewise_linear``.
    """

    kind: str = "identity"
    alpha: float = 0.1
    knee: float = 1.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise NetworkFormatError(
                f"unknown activation kind {self.kind!r}; expected one of {ACTIVATION_KINDS}"
            )
        if self.kind in ("piecewise_linear", "leaky_relu") and not 0.0 < self.alpha < 1.0:
            raise NetworkFormatError(f"{self.kind} slope alpha must be in (0, 1), got {self.alpha}")
        if self.kind == "piecewise_linear" and not self.knee > 0.0:
            raise NetworkFormatError(f"piecewise_linear knee must be > 0, got {self.knee}")

    @property
    def params(self) -> dict:
        if self.kind == "piecewise_linear":
            return {"alpha": self.alpha, "knee": self.knee}
        if self.kind == "leaky_relu":
            return {"alpha": self.alpha}
        return {}

    @property
    def smoothness(self) -> float:
        """Lipschitz constant of the derivative (``inf`` for kinked kinds)."""
        return {
            "identity": 0.0,
            "tanh": _TANH_SECOND_DERIV_MAX,
            "sigmoid": _SIGMOID_SECOND_DERIV_MAX,
            "piecewise_linear": math.inf,
            "leaky_relu": math.inf,
        }[self.kind]

    @property
    def is_smooth(self) -> bool:
        return math.isfinite(self.smoothness)

    @property
    def max_slope(self) -> float:
        return 0.25 if self.kind == "sigmoid" else 1.0

    @property
    def inverse_lipschitz(self) -> float:
        """Global Lipschitz constant of the inverse (``inf`` if unbounded)."""
        if self.kind == "identity":
            return 1.0
        if self.kind in ("piecewise_linear", "leaky_relu"):
            return 1.0 / self.alpha
        return math.inf

    @property
    def domain(self) -> float:
        """Half-width of the interval on which the inverse is numerically exact."""
        return {"tanh": 5.0, "sigmoid": 10.0}.get(self.kind, 1e6)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def activation_eval(spec: ActivationSpec, v):
    v = np.asarray(v, dtype=float)
    kind = spec.kind
    if kind == "identity":
        return v.copy()
    if kind == "tanh":
        return np.tanh(v)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * v))
    if kind == "leaky_relu":
        return np.where(v >= 0.0, v, spec.alpha * v)
    a, c = spec.alpha, spec.knee
    return np.where(v > c, c + a * (v - c), np.where(v < -c, -c + a * (v + c), v))


def activation_deriv(spec: ActivationSpec, v):
    v = np.asarray(v, dtype=float)
    kind = spec.kind
    if kind == "identity":
        return np.ones_like(v)
    if kind == "tanh":
        t = np.tanh(v)
        return 1.0 - t * t
    if kind == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * v))
        return s * (1.0 - s)
    if kind == "leaky_relu":
        return np.where(v >= 0.0, 1.0, spec.alpha)
    return np.where(np.abs(v) > spec.knee, spec.alpha, 1.0)


def activation_second_deriv(spec: ActivationSpec, v):
    """Second derivative; zero almost everywhere for the piecewise-linear kinds."""
    v = np.asarray(v, dtype=float)
    if spec.kind == "tanh":
        t = np.tanh(v)
        return -2.0 * t * (1.0 - t * t)
    if spec.kind == "sigmoid":
        s = 0.5 * (1.0 + np.tanh(0.5 * v))
        return s * (1.0 - s) * (1.0 - 2.0 * s)
    return np.zeros_like(v)


def activation_inverse(spec: ActivationSpec, v):
    """Inverse of the activation, clamping tanh/sigmoid inputs into the open range."""
    v = np.asarray(v, dtype=float)
    kind = spec.kind
    if kind == "identity":
        return v.copy()
    if kind == "tanh":
        return np.arctanh(np.clip(v, -1.0 + INVERSE_CLAMP, 1.0 - INVERSE_CLAMP))
    if kind == "sigmoid":
        p = np.clip(v, INVERSE_CLAMP, 1.0 - INVERSE_CLAMP)
        return np.log(p) - np.log1p(-p)
    if kind == "leaky_relu":
        return np.where(v >= 0.0, v, v / spec.alpha)
    a, c = spec.alpha, spec.knee
    return np.where(v > c, c + (v - c) / a, np.where(v < -c, -c + (v + c) / a, v))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GeneratorNetwork:
    """Weights ``W_0 .. W_L`` plus the output activation.

    ``W_i`` has shape ``(n_{i+1}, n_i)`` and the last matrix maps ``x_L`` to
    the signal of length ``n``. Arrays are copied and made read-only.
    """

    weights: tuple
    activation: ActivationSpec = field(default_factory=ActivationSpec)

    def __post_init__(self):
        if len(self.weights) < 2:
            raise NetworkFormatError("a generator needs at least two weight matrices (L >= 1)")
        ws = tuple(_frozen(w) for w in self.weights)
        for i, w in enumerate(ws):
            if w.ndim != 2:
                raise NetworkFormatError(f"W_{i} must be 2-D, got shape {w.shape}")
            if not np.all(np.isfinite(w)):
                raise NetworkFormatError(f"W_{i} has non-finite entries")
            zero_cols = np.flatnonzero(~np.any(w != 0.0, axis=0))
            if zero_cols.size:
                raise NetworkFormatError(f"W_{i} has all-zero column(s) {zero_cols.tolist()}")
            if i > 0 and w.shape[1] != ws[i - 1].shape[0]:
                raise NetworkFormatError(
                    f"W_{i} has {w.shape[1]} columns but W_{i-1} outputs {ws[i - 1].shape[0]}"
                )
        object.__setattr__(self, "weights", ws)

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        """Number of hidden layers ``L``."""
        return len(self.weights) - 1

    @property
    def latent_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def __call__(self, z):
        return forward(self, z).output


@dataclass(frozen=True)
class ForwardTrace:
    z: np.ndarray
    hidden: tuple
    output: np.ndarray
    supports: tuple

    @property
    def cardinalities(self) -> list:
        return [int(s.size) for s in self.supports]


def forward(net: GeneratorNetwork, z) -> ForwardTrace:
    z = np.asarray(z, dtype=float)
    if z.shape != (net.latent_dim,):
        raise ValueError(f"latent vector must have shape ({net.latent_dim},), got {z.shape}")
    hidden = []
    x = z
    for w in net.weights[:-1]:
        x = relu(w @ x)
        hidden.append(x)
    output = activation_eval(net.activation, net.weights[-1] @ x)
    supports = tuple(np.flatnonzero(h > 0.0) for h in hidden)
    return ForwardTrace(z=z.copy(), hidden=tuple(hidden), output=output, supports=supports)


def random_network(
    dims: Sequence[int],
    activation: ActivationSpec | str = "tanh",
    rng: np.random.Generator | int | None = None,
) -> GeneratorNetwork:
    """Gaussian generator with ``W_i ~ N(0, 1/rows)`` entries.

    ``dims`` is ``[n_0, n_1, ..., n_L, n]``.
    """
    if isinstance(activation, str):
        activation = ActivationSpec(activation)
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(0 if rng is None else rng)
    dims = [int(d) for d in dims]
    if len(dims) < 3 or min(dims) < 1:
        raise ValueError(f"dims must list at least [n_0, n_1, n] positive sizes, got {dims}")
    weights = [
        rng.standard_normal((dims[i + 1], dims[i])) / math.sqrt(dims[i + 1])
        for i in range(len(dims) - 1)
    ]
    return GeneratorNetwork(tuple(weights), activation)


# ---------------------------------------------------------------------------
# weight manifest I/O

MANIFEST_NAME = "manifest.json"


def save_network(net: GeneratorNetwork, path, overwrite: bool = True) -> Path:
    """Write ``manifest.json`` plus one raw little-endian float64 file per layer.

    ``path`` is a directory (created if needed) or an explicit ``*.json``
    manifest path; layer binaries sit next to the manifest.
    """
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path / MANIFEST_NAME
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    if manifest_path.exists() and not overwrite:
        raise FileExistsError(f"{manifest_path} exists")
    layers = []
    for i, w in enumerate(net.weights):
        fname = f"W{i}.f64"
        w.astype("<f8").tofile(manifest_path.parent / fname)
        layers.append({"file": fname, "shape": list(w.shape)})
    manifest = {
        "dims": net.dims,
        "activation": net.activation.kind,
        "activation_params": net.activation.params,
        "layers": layers,
        "endianness": "little",
        "dtype": "f64le",
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_network(path) -> GeneratorNetwork:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME if path.is_dir() else path
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise NetworkFormatError(f"cannot read manifest {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{manifest_path} is not valid JSON: {exc}") from exc

    for key in ("dims", "activation", "layers", "dtype"):
        if key not in manifest:
            raise NetworkFormatError(f"{manifest_path}: missing field {key!r}")
    if manifest["dtype"] != "f64le" or manifest.get("endianness", "little") != "little":
        raise NetworkFormatError(f"{manifest_path}: only dtype f64le is supported")
    params = manifest.get("activation_params") or {}
    try:
        activation = ActivationSpec(manifest["activation"], **params)
    except TypeError as exc:
        raise NetworkFormatError(f"{manifest_path}: bad activation_params {params}") from exc

    dims = [int(d) for d in manifest["dims"]]
    layers = manifest["layers"]
    if len(layers) != len(dims) - 1:
        raise NetworkFormatError(
            f"{manifest_path}: {len(layers)} layer files for dims {dims}"
        )
    weights = []
    for i, layer in enumerate(layers):
        rows, cols = dims[i + 1], dims[i]
        fname = manifest_path.parent / layer["file"]
        try:
            raw = np.fromfile(fname, dtype="<f8")
        except OSError as exc:
            raise NetworkFormatError(f"cannot read layer file {fname}: {exc}") from exc
        if raw.size != rows * cols:
            raise NetworkFormatError(
                f"{fname}: expected {rows}x{cols}={rows * cols} entries, found {raw.size}"
            )
        if "shape" in layer and list(layer["shape"]) != [rows, cols]:
            raise NetworkFormatError(f"{fname}: shape {layer['shape']} disagrees with dims")
        weights.append(raw.reshape(rows, cols).astype(np.float64))
    return GeneratorNetwork(tuple(weights), activation)


def write_vector(path, v) -> None:
    """One value per line, repr precision (round-trips exactly)."""
    v = np.asarray(v).ravel()
    text = "".join(f"{float(x)!r}\n" for x in v)
    Path(path).write_text(text)


def read_vector(path) -> np.ndarray:
    vals = [float(tok) for tok in Path(path).read_text().split()]
    return np.array(vals, dtype=float)


def read_indices(path) -> np.ndarray:
    return np.array([int(tok) for tok in Path(path).read_text().split()], dtype=np.intp)


def write_indices(path, idx) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in np.asarray(idx).ravel()))

