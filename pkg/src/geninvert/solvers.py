"""Convex kernels shared by the inversion drivers.

* :func:`accelerated_projected_descent` -- FISTA-style projected gradient
  on ``f(A x) + lam * sum(x)`` over a closed convex set.
* :func:`lasso` -- basis pursuit denoising, optionally nonnegative, solved
  with the kernel above.
* :func:`linearized_admm` -- proximal ADMM for
  ``min 1/2||b - A x||^2 + lam 1'x + gamma/2 ||x||^2  s.t. B x <= 0``
  (plus ``x >= 0`` for hidden layers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .model import ActivationSpec, activation_deriv, activation_eval, relu

__all__ = [
    "SolverConfig",
    "SolveReport",
    "SmoothComposite",
    "least_squares_objective",
    "activation_fit_objective",
    "accelerated_projected_descent",
    "fista_momentum",
    "soft_threshold",
    "lasso",
    "lasso_optimality_residual",
    "linearized_admm",
    "admm_kkt_residuals",
    "operator_norm_bound",
    "power_iteration",
]


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budget and tolerances.

    ``step_rule`` is ``"lipschitz"`` (step ``1 / (safety * L)`` from a power
    iteration bound) or ``"fixed"`` (use ``step``). ``restart`` enables
    gradient-based momentum restarts in the accelerated kernel.
    """

    max_iters: int = 20000
    tol_opt: float = 1e-9
    tol_feas: float = 1e-8
    step_rule: str = "lipschitz"
    step: float | None = None
    safety: float = 1.01
    restart: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.tol_opt > 0 and self.tol_feas > 0):
            raise ValueError("tolerances must be positive")
        if self.safety < 1.0:
            raise ValueError("safety factor must be >= 1")
        if self.step_rule not in ("lipschitz", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.step_rule == "fixed" and not (self.step and self.step > 0):
            raise ValueError("fixed step rule needs a positive step")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolveReport:
    iterations: int
    objective: float
    opt_residual: float
    feas_residual: float = 0.0
    converged: bool = False
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective": self.objective,
            "opt_residual": self.opt_residual,
            "feas_residual": self.feas_residual,
            "converged": self.converged,
            "flags": list(self.flags),
        }


@dataclass
class SmoothComposite:
    """Smooth objective ``f(x) = h(A x)``.

    ``outer(v)`` returns ``(h(v), grad h(v))``; ``forward``/``adjoint`` apply
    ``A`` and ``A^T``. ``lipschitz`` bounds the Lipschitz constant of
    ``grad f``. Keeping ``A x`` explicit lets the accelerated kernel reuse
    products across the extrapolation step.
    """

    forward: Callable
    adjoint: Callable
    outer: Callable
    lipschitz: float

    def value_and_grad(self, x):
        val, g = self.outer(self.forward(x))
        return val, self.adjoint(g)


def power_iteration(matvec: Callable, dim: int, max_iters: int = 2000, tol: float = 1e-12):
    """Largest eigenvalue of a symmetric PSD operator.

    Returns ``(estimate, converged)``; the start vector is deterministic.
    """
    v = np.cos(np.arange(1, dim + 1) * 0.7) + 1.0
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        w = matvec(v)
        lam_new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, True
        v = w / nrm
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-300):
            return max(lam_new, nrm), True
        lam = lam_new
    return lam, False


def operator_norm_bound(A, B=None, rho: float = 1.0, safety: float = 1.01):
    """Upper estimate of ``lambda_max(A^T A + rho B^T B)``.

    Returns ``(bound, flags)``. Falls back to the trace bound (sum of squared
    Frobenius norms) when the power iteration stagnates.
    """
    A = np.asarray(A, dtype=float)
    has_b = B is not None and np.asarray(B).size > 0
    B = np.asarray(B, dtype=float) if has_b else None
    dim = A.shape[1]

    def matvec(v):
        out = A.T @ (A @ v)
        if has_b:
            out = out + rho * (B.T @ (B @ v))
        return out

    est, ok = power_iteration(matvec, dim)
    if ok:
        return safety * est, []
    trace = float(np.sum(A * A)) + (rho * float(np.sum(B * B)) if has_b else 0.0)
    return trace, ["power_iteration_stagnated"]


def fista_momentum(t: float) -> float:
    return (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0


def soft_threshold(v, thresh):
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def accelerated_projected_descent(
    objective: SmoothComposite,
    x0,
    project: Callable = relu,
    lam: float = 0.0,
    cfg: SolverConfig = SolverConfig(),
    residual: Callable | None = None,
    prox: Callable | None = None,
    penalty: Callable | None = None,
):
    """Minimize ``f(x) + lam * sum(x)`` over a convex set by accelerated projection.

    Each iteration performs, with step ``mu``::

        g        = grad f(x_k)
        u_{k+1}  = P(x_k - mu (g + lam))
        t_{k+1}  = (1 + sqrt(1 + 4 t_k^2)) / 2
        x_{k+1}  = u_{k+1} + (t_k - 1) / t_{k+1} (u_{k+1} - u_k)

    starting from ``u_0 = x_0``, ``t_0 = 1``. With ``cfg.restart`` the
    momentum scalar is reset to 1 whenever the step ``u_{k+1} - u_k`` points
    uphill along the gradient mapping. When the gradient mapping at
    ``x_k`` falls below ``cfg.tol_opt`` the iterate ``u_{k+1}`` is certified
    with ``residual(u, grad f(u))`` (default: the gradient-mapping norm).

    A general proximal step ``u = prox(x - mu g, mu)`` with matching
    ``penalty(u)`` may replace the projected one.

    Returns
    -------
    x : numpy.ndarray
        The certified iterate, or the best-objective ``u`` iterate when the
        budget runs out.
    report : SolveReport
    """
    if cfg.step_rule == "fixed":
        mu = float(cfg.step)
        if objective.lipschitz > 0 and not 0.0 < mu < 2.0 / objective.lipschitz:
            raise ValueError(f"step {mu} outside (0, 2/L) for L={objective.lipschitz}")
    else:
        mu = 1.0 / (cfg.safety * max(objective.lipschitz, 1e-300))

    if prox is None:
        def prox(v, step):
            return project(v - step * lam) if lam else project(v)

        def penalty(v):
            return lam * float(v.sum()) if lam else 0.0
    elif penalty is None:
        raise ValueError("a custom prox needs its penalty")

    if residual is None:
        def residual(v, grad):
            return float(np.linalg.norm(v - prox(v - mu * grad, mu))) / mu

    u = np.array(x0, dtype=float, copy=True)
    x = u.copy()
    au = objective.forward(u)
    ax = au
    t = 1.0

    fu, _ = objective.outer(au)
    best_val, best = fu + penalty(u), u
    it = 0
    for it in range(1, cfg.max_iters + 1):
        _, gv = objective.outer(ax)
        u_new = prox(x - mu * objective.adjoint(gv), mu)
        au_new = objective.forward(u_new)
        if cfg.restart and float((x - u_new) @ (u_new - u)) > 0.0:
            t = 1.0
        t_new = fista_momentum(t)
        beta = (t - 1.0) / t_new
        x_next = u_new + beta * (u_new - u)
        ax_next = au_new + beta * (au_new - au)

        fu_new, gu = objective.outer(au_new)
        val = fu_new + penalty(u_new)
        if val <= best_val:
            best_val, best = val, u_new

        if np.linalg.norm(x - u_new) <= cfg.tol_opt * mu:
            res = residual(u_new, objective.adjoint(gu))
            if res <= cfg.tol_opt:
                return u_new, SolveReport(it, float(val), float(res), converged=True)

        u, au, t, x, ax = u_new, au_new, t_new, x_next, ax_next

    _, gb = objective.value_and_grad(best)
    res = residual(best, gb)
    return best, SolveReport(it, float(best_val), float(res), converged=bool(res <= cfg.tol_opt))


def least_squares_objective(W, y, lipschitz: float | None = None) -> SmoothComposite:
    """``1/2 ||W x - y||^2``."""
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)

    def outer(v):
        r = v - y
        return 0.5 * float(r @ r), r

    if lipschitz is None:
        lipschitz, _ = operator_norm_bound(W, safety=1.0)
    return SmoothComposite(lambda x: W @ x, lambda r: W.T @ r, outer, lipschitz)


def activation_fit_objective(W, y, spec: ActivationSpec) -> SmoothComposite:
    """``1/2 ||phi(W x) - y||^2`` with gradient ``W^T [phi'(Wx) o (phi(Wx) - y)]``.

    The Lipschitz bound is ``||W||^2 (max phi'^2 + max|phi''| * max|phi - y|)``,
    where the residual range uses the bounded image of tanh/sigmoid.
    """
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)

    def outer(v):
        p = activation_eval(spec, v)
        r = p - y
        return 0.5 * float(r @ r), activation_deriv(spec, v) * r

    norm2, _ = operator_norm_bound(W, safety=1.0)
    curv = spec.max_slope**2
    if spec.kind == "tanh":
        curv += spec.smoothness * (1.0 + float(np.max(np.abs(y), initial=0.0)))
    elif spec.kind == "sigmoid":
        curv += spec.smoothness * max(1.0, float(np.max(np.abs(y), initial=0.0)))
    return SmoothComposite(lambda x: W @ x, lambda r: W.T @ r, outer, norm2 * curv)


def lasso(W, y, lam: float, nonneg: bool = False, cfg: SolverConfig = SolverConfig(), x0=None):
    """Solve ``min 1/2 ||y - W x||^2 + lam ||x||_1`` (``x >= 0`` if ``nonneg``).

    Both variants run the accelerated kernel: the nonnegative one with the
    shifted projection ``relu(v - mu lam)``, the signed one with
    soft-thresholding. Convergence is certified on the coordinate-wise
    optimality conditions (:func:`lasso_optimality_residual`).

    Returns
    -------
    x : numpy.ndarray
    report : SolveReport
    """
    W = np.asarray(W, dtype=float)
    y = np.asarray(y, dtype=float)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    m, k = W.shape
    if y.shape != (m,):
        raise ValueError(f"y has shape {y.shape}, expected ({m},)")
    obj = least_squares_objective(W, y)
    start = np.zeros(k) if x0 is None else np.asarray(x0, dtype=float)

    def certify(v, _grad):
        return lasso_optimality_residual(W, y, lam, v, nonneg)

    if nonneg:
        x, rep = accelerated_projected_descent(obj, relu(start), relu, lam, cfg, residual=certify)
    else:
        x, rep = accelerated_projected_descent(
            obj, start, cfg=cfg, residual=certify,
            prox=lambda v, step: soft_threshold(v, step * lam),
            penalty=lambda v: lam * float(np.abs(v).sum()),
        )
    return x, rep


def lasso_optimality_residual(W, y, lam, x, nonneg=False) -> float:
    """Largest violation of the LASSO first-order conditions at ``x``.

    Signed: ``|g_j + lam sign(x_j)|`` on the support and
    ``max(|g_j| - lam, 0)`` off it, with ``g = W^T (W x - y)``.
    Nonnegative: ``|g_j + lam|`` where ``x_j > 0`` and ``max(-(g_j + lam), 0)``
    where ``x_j = 0``.
    """
    g = W.T @ (W @ x - y)
    on = x != 0
    if nonneg:
        viol = np.where(x > 0, np.abs(g + lam), np.maximum(-(g + lam), 0.0))
    else:
        viol = np.where(on, np.abs(g + lam * np.sign(x)), np.maximum(np.abs(g) - lam, 0.0))
    return float(np.max(viol, initial=0.0))


def linearized_admm(
    A,
    B,
    b,
    lam: float = 0.0,
    rho: float = 1e-2,
    gamma: float = 0.0,
    nonneg: bool = True,
    cfg: SolverConfig = SolverConfig(),
    x0=None,
    step_sum: float | None = None,
):
    """Linearized (proximal) ADMM for a ReLU layer inversion.

    Solves ::

        min_x 1/2 ||b - A x||^2 + lam 1'x + gamma/2 ||x||^2
        s.t.  B x <= 0,  and x >= 0 when ``nonneg``

    through the split ``a = B x``, ``a <= 0`` with scaled dual ``u``::

        x <- relu[x - (A^T(Ax - b) + rho B^T(Bx - a - u) + lam) / c]        (nonneg)
        x <- ((c) x - A^T(Ax - b) - rho B^T(Bx - a - u)) / (c + gamma)      (latent)
        a <- -relu(u - B x)
        u <- u + a - B x

    where ``c = alpha + beta >= lambda_max(A^T A + rho B^T B)``. Only the sum
    ``c`` enters the updates. Iteration stops when ``||a - Bx|| <= tol_feas``
    and both ``c ||x_{k+1} - x_k||`` and ``rho ||B^T(a_{k+1} - a_k)||`` are
    below ``tol_opt``.

    Returns
    -------
    x, a, u : numpy.ndarray
    report : SolveReport
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[1]
    B = np.zeros((0, n)) if B is None else np.asarray(B, dtype=float).reshape(-1, n)
    if rho <= 0:
        raise ValueError("rho must be > 0")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if b.shape != (A.shape[0],):
        raise ValueError(f"b has shape {b.shape}, expected ({A.shape[0]},)")
    if not nonneg and lam:
        raise ValueError("the latent step carries no l1 term; use lam=0 with nonneg=False")

    flags = []
    if step_sum is None:
        step_sum, flags = operator_norm_bound(A, B, rho, cfg.safety)
    c = float(step_sum)
    if c <= 0:
        c = 1.0

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float, copy=True)
    if nonneg:
        x = relu(x)
    m = B.shape[0]
    a = np.zeros(m)
    u = np.zeros(m)
    Bx = B @ x
    Atb = A.T @ b
    AtA = A.T @ A if A.shape[0] > n else None
    it = 0
    converged = False
    feas = opt = 0.0
    for it in range(1, cfg.max_iters + 1):
        if AtA is not None:
            grad = AtA @ x - Atb
        else:
            grad = A.T @ (A @ x) - Atb
        if m:
            grad = grad + rho * (B.T @ (Bx - a - u))
        if nonneg:
            x_new = relu(x - (grad + lam) / c)
        else:
            x_new = (c * x - grad) / (c + gamma)
        Bx = B @ x_new
        a_new = -relu(u - Bx)
        resid = a_new - Bx
        u = u + resid
        feas = float(np.linalg.norm(resid))
        dual = rho * float(np.linalg.norm(B.T @ (a_new - a))) if m else 0.0
        opt = max(c * float(np.linalg.norm(x_new - x)), dual)
        x, a = x_new, a_new
        if feas <= cfg.tol_feas and opt <= cfg.tol_opt:
            converged = True
            break

    r = A @ x - b
    objective = 0.5 * float(r @ r) + lam * float(x.sum()) + 0.5 * gamma * float(x @ x)
    return x, a, u, SolveReport(
        iterations=it,
        objective=objective,
        opt_residual=opt,
        feas_residual=feas,
        converged=converged,
        flags=flags,
    )


def admm_kkt_residuals(A, B, b, x, u, lam=0.0, rho=1e-2, gamma=0.0, nonneg=True) -> dict:
    """KKT residuals of the layer problem at ``(x, u)``.

    The inequality multiplier is recovered from the scaled dual as
    ``eta = -rho * u`` (nonnegative by construction of the a-step).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    B = np.zeros((0, n)) if B is None else np.asarray(B, dtype=float).reshape(-1, n)
    eta = np.maximum(-rho * np.asarray(u, dtype=float), 0.0)
    Bx = B @ x
    g = A.T @ (A @ x - b) + lam + gamma * x + B.T @ eta
    stationarity = np.linalg.norm(x - relu(x - g)) if nonneg else np.linalg.norm(g)
    return {
        "stationarity": float(stationarity),
        "primal": float(np.linalg.norm(relu(Bx))),
        "complementarity": float(np.max(np.abs(eta * Bx), initial=0.0)),
        "dual_sign": float(np.max(relu(rho * np.asarray(u)), initial=0.0)),
    }
