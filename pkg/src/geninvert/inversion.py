"""End-to-end inversion drivers.

Every driver takes a :class:`~geninvert.model.GeneratorNetwork` and an
:class:`Observation` and returns an :class:`InversionResult`:

* :func:`oracle_end_to_end` / :func:`oracle_layered` -- least squares with
  the true supports known.
* :func:`layered_basis_pursuit` -- per-layer LASSO from the output backward.
* :func:`latent_pursuit` -- nonnegative projected descent on the last layer,
  then linearized ADMM with the ReLU zero-set inequalities on the rest.
* :func:`gradient_descent_invert` -- plain (momentum) gradient descent on
  the latent vector.

Missing output coordinates (inpainting) only restrict the rows of the last
weight matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ActivationSpec,
    ForwardTrace,
    GeneratorNetwork,
    activation_deriv,
    activation_eval,
    activation_inverse,
    forward,
    make_rng,
    relu,
)
from .solvers import (
    SolveReport,
    SolverConfig,
    accelerated_projected_descent,
    activation_fit_objective,
    lasso,
    linearized_admm,
)

__all__ = [
    "SUPPORT_TOL",
    "EPS_CONSTANT",
    "Observation",
    "InversionResult",
    "RecoveryError",
    "GDConfig",
    "support_of",
    "effective_matrix",
    "debias_objective",
    "debias",
    "oracle_end_to_end",
    "oracle_layered",
    "oracle_bounds",
    "layered_basis_pursuit",
    "latent_pursuit",
    "gradient_descent_invert",
    "eps_from_sigma",
    "snr_db",
    "relative_error",
]

SUPPORT_TOL = 1e-8
LAMBDA_FLOOR = 1e-8
# solver accuracy has to sit well below the support threshold
DRIVER_SOLVER = SolverConfig(tol_opt=1e-12, tol_feas=1e-11)
EPS_CONSTANT = 3.0 + math.sqrt(1.5)


class RecoveryError(RuntimeError):
    """A layer came back with an empty support, so nothing upstream is recoverable."""

    def __init__(self, layer: int, message: str | None = None):
        self.layer = layer
        super().__init__(message or f"empty recovered support at layer {layer}")


def eps_from_sigma(sigma: float, m: int) -> float:
    """High-probability bound on ``||e||`` for ``e ~ N(0, sigma^2 I_m)``."""
    return float(sigma) * math.sqrt(m + 4.0 * math.sqrt(m))


@dataclass(frozen=True)
class Observation:
    """Observed signal, optional index set of observed coordinates, noise level.

    ``eps`` bounds ``||e||_2``; when it is 0 and ``sigma`` is given the bound
    is derived from ``sigma``. A mask covering every coordinate is dropped,
    so masked and unmasked inputs behave identically.
    """

    y: np.ndarray
    mask: np.ndarray | None = None
    eps: float = 0.0
    sigma: float | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise ValueError("observation has non-finite entries")
        object.__setattr__(self, "y", y)
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.mask is not None:
            m = np.unique(np.asarray(self.mask, dtype=np.intp).ravel())
            if m.size == 0:
                raise ValueError("mask leaves no observed coordinates")
            if m[0] < 0 or m[-1] >= y.size:
                raise ValueError(f"mask indices must lie in [0, {y.size})")
            object.__setattr__(self, "mask", None if m.size == y.size else m)

    @property
    def rows(self):
        return slice(None) if self.mask is None else self.mask

    @property
    def observed(self) -> np.ndarray:
        return self.y if self.mask is None else self.y[self.mask]

    @property
    def n_observed(self) -> int:
        return self.observed.size

    @property
    def epsilon(self) -> float:
        if self.eps > 0 or not self.sigma:
            return float(self.eps)
        return eps_from_sigma(self.sigma, self.n_observed)


@dataclass
class InversionResult:
    method: str
    z: np.ndarray
    layers: list
    supports: list
    output: np.ndarray
    reports: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    eps_schedule: list | None = None
    lambdas: list | None = None
    data_fit: float = float("nan")
    pursuit_layers: list | None = None
    metrics: dict | None = None

    @property
    def converged(self) -> bool:
        return all(r.converged for r in self.reports.values())

    def attach_truth(self, trace: ForwardTrace) -> "InversionResult":
        """Fill per-layer relative errors and SNRs against a ground-truth trace."""
        pairs = [("z", trace.z, self.z)]
        pairs += [(f"x{i + 1}", t, e) for i, (t, e) in enumerate(zip(trace.hidden, self.layers))]
        pairs.append(("image", trace.output, self.output))
        self.metrics = {
            name: {"rel_err": relative_error(t, e), "snr_db": snr_db(t, e)} for name, t, e in pairs
        }
        return self

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "z": self.z.tolist(),
            "supports": [s.tolist() for s in self.supports],
            "layers": [x.tolist() for x in self.layers],
            "data_fit": self.data_fit,
            "converged": self.converged,
            "flags": list(self.flags),
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }
        if self.eps_schedule is not None:
            d["eps_schedule"] = list(self.eps_schedule)
        if self.lambdas is not None:
            d["lambdas"] = list(self.lambdas)
        if self.metrics is not None:
            d["metrics"] = self.metrics
        return d


def relative_error(truth, estimate) -> float:
    truth = np.asarray(truth, dtype=float)
    err = float(np.linalg.norm(truth - np.asarray(estimate, dtype=float)))
    nt = float(np.linalg.norm(truth))
    if nt == 0.0:
        return 0.0 if err == 0.0 else math.inf
    return err / nt


def snr_db(truth, estimate) -> float:
    """``10 log10(||t||^2 / ||t - e||^2)``; ``+inf`` for an exact estimate."""
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != estimate.shape:
        raise ValueError("truth and estimate differ in length")
    sig = float(truth @ truth)
    if sig == 0.0:
        raise ValueError("SNR is undefined for a zero reference signal")
    d = truth - estimate
    err = float(d @ d)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(sig / err)


def support_of(v, tau: float = SUPPORT_TOL) -> np.ndarray:
    """Indices with ``v_j > tau``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return np.flatnonzero(np.asarray(v) > tau)


# ---------------------------------------------------------------------------
# support-restricted compositions


def effective_matrix(net: GeneratorNetwork, supports, rows=slice(None)) -> np.ndarray:
    """``W_L[rows, S_L] W_{L-1}[S_L, S_{L-1}] ... W_0[S_1, :]``."""
    W = net.weights
    L = net.n_layers
    M = W[L][rows][:, supports[L - 1]]
    for i in range(L - 1, 0, -1):
        M = M @ W[i][np.ix_(supports[i], supports[i - 1])]
    return M @ W[0][supports[0]]


def _layers_on_supports(net: GeneratorNetwork, supports, z) -> list:
    """Hidden layers of the linear model with frozen supports."""
    out = []
    x = z
    for i, S in enumerate(supports):
        v = np.zeros(net.dims[i + 1])
        v[S] = net.weights[i][S] @ x
        out.append(v)
        x = v
    return out


def _output(net: GeneratorNetwork, x_last) -> np.ndarray:
    return activation_eval(net.activation, net.weights[-1] @ x_last)


def _data_fit(net, obs, output) -> float:
    r = output[obs.rows] - obs.observed
    return 0.5 * float(r @ r)


def debias_objective(net: GeneratorNetwork, obs: Observation, supports):
    """``z -> 1/2 ||y_obs - phi(M z)||^2`` with ``M`` the supported composition."""
    M = effective_matrix(net, supports, obs.rows)
    return activation_fit_objective(M, obs.observed, net.activation)


def _line_search_descent(objective, z0, max_iters: int, step0: float, grad_tol: float):
    """Gradient descent with Armijo backtracking; returns the best iterate."""
    z = np.array(z0, dtype=float, copy=True)
    f, g = objective.value_and_grad(z)
    f0 = f
    step = step0
    it = 0
    flags = []
    gn = float(np.linalg.norm(g))
    for it in range(1, max_iters + 1):
        if gn <= grad_tol or f == 0.0:
            break
        while True:
            z_new = z - step * g
            f_new, g_new = objective.value_and_grad(z_new)
            if np.isfinite(f_new) and f_new <= f - 1e-4 * step * gn * gn:
                break
            step *= 0.5
            if step < 1e-30:
                flags.append("line_search_failed")
                break
        if flags:
            break
        if f - f_new <= 1e-15 * max(f, 1e-300) and f_new > 0:
            z, f, g = z_new, f_new, g_new
            gn = float(np.linalg.norm(g))
            break
        z, f, g = z_new, f_new, g_new
        gn = float(np.linalg.norm(g))
        step *= 2.0
    if f > f0:
        # not reachable with the Armijo test; kept as a guard
        return np.array(z0, dtype=float), f0, gn, it, flags + ["diverged"]
    return z, f, gn, it, flags


def debias(
    net: GeneratorNetwork,
    obs: Observation,
    supports,
    z0,
    max_iters: int = 10000,
    step0: float = 0.1,
    grad_tol: float = 1e-12,
):
    """Refit ``z`` on frozen supports by backtracking gradient descent.

    Never increases the data-fit objective relative to ``z0``.

    Returns
    -------
    z : numpy.ndarray
    report : SolveReport
    """
    obj = debias_objective(net, obs, supports)
    z, f, gn, it, flags = _line_search_descent(obj, z0, max_iters, step0, grad_tol)
    return z, SolveReport(it, f, gn, converged=not flags and gn <= max(grad_tol, 1e-9), flags=flags)


def _finish(net, obs, method, z, layers, supports, reports, flags, **extra) -> InversionResult:
    output = _output(net, layers[-1])
    return InversionResult(
        method=method,
        z=np.asarray(z, dtype=float),
        layers=[np.asarray(x, dtype=float) for x in layers],
        supports=[np.asarray(s, dtype=np.intp) for s in supports],
        output=output,
        reports=reports,
        flags=flags,
        data_fit=_data_fit(net, obs, output),
        **extra,
    )


def _apply_debias(net, obs, result: InversionResult, **kw) -> InversionResult:
    z, rep = debias(net, obs, result.supports, result.z, **kw)
    layers = _layers_on_supports(net, result.supports, z)
    out = _finish(net, obs, result.method, z, layers, result.supports,
                  {**result.reports, "debias": rep}, list(result.flags),
                  eps_schedule=result.eps_schedule, lambdas=result.lambdas,
                  pursuit_layers=result.layers)
    if not rep.converged:
        out.flags.append("debias_not_converged")
    return out


# ---------------------------------------------------------------------------
# oracles


def _true_supports(net, true_supports):
    if isinstance(true_supports, ForwardTrace):
        true_supports = true_supports.supports
    supports = [np.asarray(s, dtype=np.intp) for s in true_supports]
    if len(supports) != net.n_layers:
        raise ValueError(f"expected {net.n_layers} supports, got {len(supports)}")
    return supports


def _full_column_rank(M) -> bool:
    if M.shape[0] < M.shape[1] or M.size == 0:
        return M.shape[1] == 0
    s = np.linalg.svd(M, compute_uv=False)
    return bool(s[-1] > 1e-10 * s[0])


def oracle_end_to_end(net: GeneratorNetwork, obs: Observation, true_supports, **debias_kw) -> InversionResult:
    """Fit ``z`` through the known supports.

    Least squares on ``phi^{-1}(y)`` gives the start point; backtracking
    gradient descent on the data-fit objective refines it.
    """
    supports = _true_supports(net, true_supports)
    M = effective_matrix(net, supports, obs.rows)
    flags = [] if _full_column_rank(M) else ["non_unique_oracle"]
    target = activation_inverse(net.activation, obs.observed)
    z0 = np.linalg.lstsq(M, target, rcond=None)[0]
    reports = {}
    z = z0
    if net.activation.kind != "identity":
        z, reports["refine"] = debias(net, obs, supports, z0, **debias_kw)
    layers = _layers_on_supports(net, supports, z)
    return _finish(net, obs, "oracle", z, layers, supports, reports, flags)


def _supported_blocks(net, supports, rows=slice(None)):
    """``[W0_bar, W1_bar, ..., WL_bar]`` restricted to rows and columns on the supports."""
    W = net.weights
    L = net.n_layers
    blocks = [W[0][supports[0]]]
    for i in range(1, L):
        blocks.append(W[i][np.ix_(supports[i], supports[i - 1])])
    blocks.append(W[L][rows][:, supports[L - 1]])
    return blocks


def oracle_layered(net: GeneratorNetwork, obs: Observation, true_supports) -> InversionResult:
    """Sequential supported least squares from the output layer backward."""
    supports = _true_supports(net, true_supports)
    L = net.n_layers
    blocks = _supported_blocks(net, supports, obs.rows)
    flags = []
    target = activation_inverse(net.activation, obs.observed)
    layers = [None] * L
    for i in range(L, 0, -1):
        Wb = blocks[i]
        if not _full_column_rank(Wb):
            flags.append(f"rank_deficient_layer_{i}")
        vals = np.linalg.lstsq(Wb, target, rcond=None)[0]
        x = np.zeros(net.dims[i])
        x[supports[i - 1]] = vals
        layers[i - 1] = x
        target = vals
    if not _full_column_rank(blocks[0]):
        flags.append("rank_deficient_layer_0")
    z = np.linalg.lstsq(blocks[0], target, rcond=None)[0]
    return _finish(net, obs, "oracle_layered", z, layers, supports, {}, flags)


@dataclass
class OracleBounds:
    """Expected squared-error interval ``(lower, upper)`` per layer name."""

    bounds: dict
    flags: list

    def to_dict(self) -> dict:
        return {"bounds": {k: {"lower": lo, "upper": hi} for k, (lo, hi) in self.bounds.items()},
                "flags": list(self.flags)}


def oracle_bounds(net: GeneratorNetwork, true_supports, sigma: float, mask=None) -> OracleBounds:
    """Bounds on the layered oracle's mean squared error under ``N(0, sigma^2)`` noise.

    For layer ``i`` (``0`` is the latent vector) with ``k_i`` unknowns the
    interval is ``sigma^2 k_i / prod_{j>=i} lam_max_j`` to
    ``sigma^2 k_i / prod_{j>=i} lam_min_j``, where ``lam_j`` are the extreme
    eigenvalues of ``Wbar_j' Wbar_j``.
    """
    supports = _true_supports(net, true_supports)
    rows = slice(None) if mask is None else np.asarray(mask, dtype=np.intp)
    blocks = _supported_blocks(net, supports, rows)
    ext = []
    flags = []
    for j, B in enumerate(blocks):
        ev = np.linalg.eigvalsh(B.T @ B) if B.shape[1] else np.array([1.0])
        lo, hi = float(ev[0]), float(ev[-1])
        if not _full_column_rank(B):
            flags.append(f"singular_block_{j}")
            lo = 0.0
        ext.append((lo, hi))
    L = net.n_layers
    sizes = [net.latent_dim] + [s.size for s in supports]
    s2 = float(sigma) ** 2
    out = {}
    for i in range(L + 1):
        pmax = math.prod(e[1] for e in ext[i:])
        pmin = math.prod(e[0] for e in ext[i:])
        lower = s2 * sizes[i] / pmax if pmax > 0 else math.inf
        upper = s2 * sizes[i] / pmin if pmin > 0 else math.inf
        out["z" if i == 0 else f"x{i}"] = (lower, upper)
    return OracleBounds(out, flags)


# ---------------------------------------------------------------------------
# layered basis pursuit


def _inverse_lipschitz(spec: ActivationSpec, y_obs):
    ell = spec.inverse_lipschitz
    if math.isfinite(ell):
        return ell, []
    d = activation_deriv(spec, activation_inverse(spec, y_obs))
    return float(1.0 / np.min(d)) if d.size else 1.0, ["surrogate_inverse_lipschitz"]


def layered_basis_pursuit(
    net: GeneratorNetwork,
    obs: Observation,
    sparsity: list | None = None,
    lambdas: list | None = None,
    lam_floor: float = LAMBDA_FLOOR,
    tau: float = SUPPORT_TOL,
    cfg: SolverConfig = DRIVER_SOLVER,
    do_debias: bool = False,
) -> InversionResult:
    """Per-layer LASSO from the output back to ``z``.

    Without explicit ``lambdas`` the last layer uses ``2 ell eps`` and layer
    ``i`` uses ``2 eps_{i+1}``, where::

        eps_{L+1} = ell * eps
        eps_i     = (3 + sqrt(1.5)) sqrt(s_i) / min_j ||w_j|| * eps_{i+1}

        ``w_j`` being the columns of the row-restricted matrix of the stage.
    Zero values fall back to ``lam_floor``. Explicit ``lambdas`` (index
    ``i-1`` for layer ``i``) are used verbatim, zero included. ``sparsity``
    overrides the recovered cardinalities in the schedule.

    Raises
    ------
    RecoveryError
        When a stage recovers an empty support.
    """
    L = net.n_layers
    W = net.weights
    y_obs = obs.observed
    ell, flags = _inverse_lipschitz(net.activation, y_obs)
    eps = obs.epsilon
    eps_next = ell * eps
    schedule = [None] * L
    used = [None] * L
    layers = [None] * L
    supports = [None] * L
    reports = {}
    A = W[L][obs.rows]
    b = activation_inverse(net.activation, y_obs)
    for i in range(L, 0, -1):
        if lambdas is not None:
            lam = float(lambdas[i - 1])
        else:
            lam = 2.0 * eps_next
            if lam == 0.0:
                lam = lam_floor
        x_sub, rep = lasso(A, b, lam, nonneg=True, cfg=cfg)
        S_sub = support_of(x_sub, tau)
        if S_sub.size == 0:
            raise RecoveryError(i)
        x, S = x_sub, S_sub
        layers[i - 1] = x
        supports[i - 1] = S
        reports[f"x{i}"] = rep
        s_i = len(S) if sparsity is None else int(sparsity[i - 1])
        col_min = float(np.min(np.linalg.norm(A, axis=0)))
        eps_i = EPS_CONSTANT * math.sqrt(s_i) / col_min * eps_next if col_min > 0 else math.inf
        schedule[i - 1] = eps_i
        used[i - 1] = lam
        eps_next = eps_i
        A = W[i - 1][S]
        b = x[S]
    z, *_ = np.linalg.lstsq(A, b, rcond=None)
    if not _full_column_rank(A):
        flags.append("rank_deficient_latent")
    res = _finish(net, obs, "layered-bp", z, layers, supports, reports, flags,
                  eps_schedule=schedule, lambdas=used)
    if do_debias:
        res = _apply_debias(net, obs, res)
    return res


# ---------------------------------------------------------------------------
# latent pursuit


def latent_pursuit(
    net: GeneratorNetwork,
    obs: Observation,
    lambdas: list | None = None,
    rho: float = 1e-2,
    gamma: float = 0.0,
    tau: float = SUPPORT_TOL,
    cfg: SolverConfig = DRIVER_SOLVER,
    do_debias: bool = False,
) -> InversionResult:
    """Layer-wise inversion enforcing nonnegativity and the ReLU zero sets.

    ``lambdas[i-1]`` is the l1 weight of layer ``i`` (default 0). A stage that
    runs out of iterations is flagged rather than raised.
    """
    L = net.n_layers
    W = net.weights
    lams = [0.0] * L if lambdas is None else [float(v) for v in lambdas]
    if len(lams) != L:
        raise ValueError(f"expected {L} lambdas")
    flags = []
    if not net.activation.is_smooth:
        flags.append("nonsmooth_activation")
    reports = {}
    layers = [None] * L
    supports = [None] * L

    obj = activation_fit_objective(W[L][obs.rows], obs.observed, net.activation)
    x, rep = accelerated_projected_descent(obj, np.zeros(net.dims[L]), relu, lams[L - 1], cfg)
    reports[f"x{L}"] = rep
    layers[L - 1] = x
    supports[L - 1] = support_of(x, tau)

    for i in range(L - 1, -1, -1):
        S = supports[i]
        mask = np.ones(W[i].shape[0], dtype=bool)
        mask[S] = False
        A, B, b = W[i][S], W[i][mask], layers[i][S]
        if i > 0:
            x, _, _, rep = linearized_admm(A, B, b, lams[i - 1], rho, 0.0, True, cfg)
            layers[i - 1] = x
            supports[i - 1] = support_of(x, tau)
            reports[f"x{i}"] = rep
        else:
            z, _, _, rep = linearized_admm(A, B, b, 0.0, rho, gamma, False, cfg)
            reports["z"] = rep
    for name, r in reports.items():
        if not r.converged:
            flags.append(f"not_converged_{name}")
    res = _finish(net, obs, "latent-pursuit", z, layers, supports, reports, flags, lambdas=lams)
    if do_debias:
        res = _apply_debias(net, obs, res)
    return res


# ---------------------------------------------------------------------------
# gradient descent baseline


@dataclass(frozen=True)
class GDConfig:
    """Baseline settings.

    ``protocol="sweep"`` tries each step in ascending order for ``max_iters``
    plain steps and keeps the smallest step whose gradient norm fell below
    ``grad_tol`` (else the lowest objective). ``protocol="momentum"`` runs
    heavy-ball descent with ``lr / (1 + k / decay)``.
    """

    protocol: str = "sweep"
    steps: tuple = (1e-1, 1e0, 1e1, 1e2, 1e3, 1e4)
    max_iters: int = 10000
    grad_tol: float = 1e-9
    momentum: float = 0.9
    lr: float = 0.1
    decay: float = 1000.0

    def __post_init__(self):
        if self.protocol not in ("sweep", "momentum"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def _gd_value_grad(net: GeneratorNetwork, obs: Observation, z):
    W = net.weights
    pre = []
    x = z
    for w in W[:-1]:
        v = w @ x
        pre.append(v)
        x = np.maximum(v, 0.0)
    v_out = W[-1][obs.rows] @ x
    r = activation_eval(net.activation, v_out) - obs.observed
    f = 0.5 * float(r @ r)
    g = W[-1][obs.rows].T @ (activation_deriv(net.activation, v_out) * r)
    for w, v in zip(reversed(W[:-1]), reversed(pre)):
        g = w.T @ (g * (v > 0.0))
    return f, g


def _gd_run(net, obs, z0, step, cfg: GDConfig, heavy_ball: bool):
    z = z0.copy()
    vel = np.zeros_like(z)
    best_f, best_z = math.inf, z.copy()
    gn = math.inf
    it = 0
    for it in range(1, cfg.max_iters + 1):
        f, g = _gd_value_grad(net, obs, z)
        if not math.isfinite(f):
            break
        if f < best_f:
            best_f, best_z = f, z.copy()
        gn = float(np.linalg.norm(g))
        if gn < cfg.grad_tol:
            break
        if heavy_ball:
            lr = cfg.lr / (1.0 + (it - 1) / cfg.decay)
            vel = cfg.momentum * vel - lr * g
            z = z + vel
        else:
            z = z - step * g
        if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > 1e150:
            break
    else:
        f, g = _gd_value_grad(net, obs, z)
        gn = float(np.linalg.norm(g))
        if f < best_f:
            best_f, best_z = f, z.copy()
    return best_z, best_f, gn, it


def gradient_descent_invert(
    net: GeneratorNetwork,
    obs: Observation,
    cfg: GDConfig = GDConfig(),
    seed: int = 0,
    z0=None,
    do_debias: bool = False,
) -> InversionResult:
    """Minimize ``1/2 ||y_obs - G(z)_obs||^2`` over ``z`` from a Gaussian start.

    The ReLU derivative at 0 is taken as 0. Hidden layers and supports are
    read off the forward pass at the final ``z``.
    """
    if z0 is None:
        z0 = make_rng(seed).standard_normal(net.latent_dim)
    z0 = np.asarray(z0, dtype=float)
    if cfg.protocol == "momentum":
        z, f, gn, it = _gd_run(net, obs, z0, cfg.lr, cfg, True)
        chosen = cfg.lr
        rep = SolveReport(it, f, gn, converged=gn < cfg.grad_tol)
    else:
        chosen, pick = None, None
        for step in sorted(cfg.steps):
            z, f, gn, it = _gd_run(net, obs, z0, step, cfg, False)
            if gn < cfg.grad_tol:
                chosen, pick = step, (z, f, gn, it)
                break
            if pick is None or f < pick[1]:
                chosen, pick = step, (z, f, gn, it)
        z, f, gn, it = pick
        rep = SolveReport(it, f, gn, converged=gn < cfg.grad_tol, flags=[f"step={chosen!r}"])
    trace = forward(net, z)
    res = _finish(net, obs, "gd", z, list(trace.hidden), list(trace.supports), {"gd": rep}, [])
    if do_debias:
        res = _apply_debias(net, obs, res)
    return res
