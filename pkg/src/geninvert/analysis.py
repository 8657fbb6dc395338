"""Coherence and spark quantities and the layer-wise uniqueness certificate.

Exact spark-type quantities need subset enumeration, which is exponential.
Every routine takes a :class:`SubsetBudget` that chooses between exhaustive
enumeration (refused above ``cap`` subsets), random sampling (reported as a
bound) and the closed forms that hold for generic (e.g. Gaussian) weights.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ForwardTrace, GeneratorNetwork, make_rng

__all__ = [
    "EnumerationCapError",
    "SubsetBudget",
    "SparkEvidence",
    "RankEvidence",
    "CoherenceValue",
    "LayerCondition",
    "UniquenessCertificate",
    "mutual_coherence",
    "mu_s",
    "matrix_rank",
    "spark",
    "subspark",
    "subrank",
    "certify_uniqueness",
]

RANK_RTOL = 1e-10
DEFAULT_CAP = 2_000_000


class EnumerationCapError(RuntimeError):
    """Exact enumeration would exceed the subset cap."""


@dataclass(frozen=True)
class SubsetBudget:
    """How to evaluate subset-extremal quantities.

    ``mode`` is ``"exact"`` (enumerate, refuse above ``cap`` subsets),
    ``"sampled"`` (``samples`` random subsets, flagged as a bound) or
    ``"generic"`` (closed forms for weights in general position).
    """

    mode: str = "exact"
    samples: int = 1000
    cap: int = DEFAULT_CAP
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "sampled", "generic"):
            raise ValueError(f"unknown budget mode {self.mode!r}")


@dataclass(frozen=True)
class SparkEvidence:
    """Spark value with provenance.

    ``mode``: ``exact``; ``assumed_generic``; ``lower_bound`` (enumeration
    stopped at the cap without finding a dependent set); ``upper_bound``
    (minimum over sampled row subsets).
    ``value == columns + 1`` means no dependent subset exists.
    """

    value: int
    mode: str
    columns: int
    witness: tuple | None = None
    rows: tuple | None = None

    @property
    def full(self) -> bool:
        return self.value == self.columns + 1

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "mode": self.mode,
            "witness": list(self.witness) if self.witness is not None else None,
            "rows": list(self.rows) if self.rows is not None else None,
        }


@dataclass(frozen=True)
class RankEvidence:
    value: int
    mode: str
    rows: tuple | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "mode": self.mode,
                "rows": list(self.rows) if self.rows is not None else None}


@dataclass(frozen=True)
class CoherenceValue:
    value: float
    mode: str
    rows: tuple | None = None


def _svals(M):
    if M.size == 0:
        return np.zeros(0)
    return np.linalg.svd(M, compute_uv=False)


def matrix_rank(M, rtol: float = RANK_RTOL) -> int:
    """Numerical rank: singular values above ``rtol * sigma_max``."""
    s = _svals(np.asarray(M, dtype=float))
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _dependent(M, rtol: float = RANK_RTOL) -> bool:
    """Columns of ``M`` are linearly dependent."""
    rows, cols = M.shape
    if cols > rows:
        return True
    s = _svals(M)
    if s[0] == 0.0:
        return True
    return bool(s[-1] < rtol * s[0])


def mutual_coherence(W) -> float:
    """Largest normalized inner product ``|w_i' w_j| / (||w_i|| ||w_j||)``, ``i != j``."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] < 2:
        raise ValueError("mutual coherence needs a matrix with at least two columns")
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0.0):
        raise ValueError(f"zero column(s) {np.flatnonzero(norms == 0.0).tolist()}")
    G = np.abs((W / norms).T @ (W / norms))
    np.fill_diagonal(G, 0.0)
    return float(min(G.max(), 1.0))


def _coherence_or_one(W) -> float:
    # a column vanishing on a row subset cannot be recovered: worst case
    if np.any(~np.any(W != 0.0, axis=0)):
        return 1.0
    return mutual_coherence(W)


def _check_s(W, s):
    if not 1 <= s <= W.shape[0]:
        raise ValueError(f"s={s} outside [1, {W.shape[0]}]")


def _row_subsets(W, s, budget: SubsetBudget, inner_cost: int = 1):
    """Yield row subsets and the mode they imply."""
    rows = W.shape[0]
    total = math.comb(rows, s)
    if budget.mode == "exact":
        if total * inner_cost > budget.cap:
            raise EnumerationCapError(
                f"{total} row subsets (x{inner_cost}) exceed the cap {budget.cap}; "
                "use a sampled or generic budget"
            )
        return itertools.combinations(range(rows), s), True
    if total <= budget.samples:
        return itertools.combinations(range(rows), s), True
    rng = make_rng(budget.seed, rows, s)
    picks = (tuple(sorted(rng.choice(rows, size=s, replace=False).tolist()))
             for _ in range(budget.samples))
    return picks, False


def mu_s(W, s: int, budget: SubsetBudget = SubsetBudget()) -> CoherenceValue:
    """Largest mutual coherence over all ``s``-row submatrices.

    A submatrix in which some column vanishes counts as coherence 1.
    Sampled budgets return a lower bound.
    """
    W = np.asarray(W, dtype=float)
    _check_s(W, s)
    if budget.mode == "generic":
        raise ValueError("mu_s has no generic closed form; use exact or sampled")
    subsets, exhaustive = _row_subsets(W, s, budget)
    best, arg = -1.0, None
    for rows in subsets:
        val = _coherence_or_one(W[list(rows)])
        if val > best:
            best, arg = val, rows
    return CoherenceValue(best, "exact" if exhaustive else "lower_bound", arg)


def _spark_enumeration_count(rows: int, cols: int) -> int:
    return sum(math.comb(cols, k) for k in range(1, min(rows + 1, cols) + 1))


def _generic_spark(rows: int, cols: int) -> int:
    return min(rows, cols) + 1


def spark(W, budget: SubsetBudget = SubsetBudget()) -> SparkEvidence:
    """Smallest number of linearly dependent columns.

    Exact mode enumerates column subsets by increasing size with an SVD
    dependence test (smallest singular value below ``1e-10`` times the
    largest). ``sampled`` mode enumerates sizes while the running count
    stays under the cap and reports a lower bound beyond that.
    """
    W = np.asarray(W, dtype=float)
    rows, cols = W.shape
    if budget.mode == "generic":
        return SparkEvidence(_generic_spark(rows, cols), "assumed_generic", cols)

    zero = np.flatnonzero(~np.any(W != 0.0, axis=0))
    if zero.size:
        return SparkEvidence(1, "exact", cols, witness=(int(zero[0]),))

    need = _spark_enumeration_count(rows, cols)
    if budget.mode == "exact" and need > budget.cap:
        raise EnumerationCapError(
            f"spark of a {rows}x{cols} matrix needs {need} subset tests (cap {budget.cap}); "
            "use a generic budget"
        )
    spent = 0
    for k in range(2, min(rows + 1, cols) + 1):
        batch = math.comb(cols, k)
        if spent + batch > budget.cap:
            return SparkEvidence(k, "lower_bound", cols)
        spent += batch
        if k > rows:
            # any rows+1 columns are dependent
            return SparkEvidence(k, "exact", cols, witness=tuple(range(k)))
        for cset in itertools.combinations(range(cols), k):
            if _dependent(W[:, cset]):
                return SparkEvidence(k, "exact", cols, witness=cset)
    return SparkEvidence(cols + 1, "exact", cols)


def subspark(W, s: int, budget: SubsetBudget = SubsetBudget()) -> SparkEvidence:
    """Smallest spark over all ``s``-row submatrices (an upper bound when sampled)."""
    W = np.asarray(W, dtype=float)
    _check_s(W, s)
    rows, cols = W.shape
    if budget.mode == "generic":
        return SparkEvidence(_generic_spark(s, cols), "assumed_generic", cols)
    inner = _spark_enumeration_count(s, cols)
    subsets, exhaustive = _row_subsets(W, s, budget, inner)
    inner_budget = SubsetBudget("exact", cap=budget.cap)
    best = None
    for rsub in subsets:
        ev = spark(W[list(rsub)], inner_budget)
        if best is None or ev.value < best.value:
            best = SparkEvidence(ev.value, ev.mode, cols, ev.witness, tuple(rsub))
            if best.value == 1:
                break
    mode = "exact" if exhaustive else "upper_bound"
    return SparkEvidence(best.value, mode, cols, best.witness, best.rows)


def subrank(W, s: int, budget: SubsetBudget = SubsetBudget()) -> RankEvidence:
    """Smallest rank over all ``s``-row submatrices (an upper bound when sampled)."""
    W = np.asarray(W, dtype=float)
    _check_s(W, s)
    if budget.mode == "generic":
        return RankEvidence(min(s, W.shape[1]), "assumed_generic")
    subsets, exhaustive = _row_subsets(W, s, budget)
    best, arg = None, None
    for rsub in subsets:
        r = matrix_rank(W[list(rsub)])
        if best is None or r < best:
            best, arg = r, rsub
            if r == 0:
                break
    return RankEvidence(best, "exact" if exhaustive else "upper_bound", tuple(arg))


# ---------------------------------------------------------------------------
# certificate


@dataclass
class LayerCondition:
    """One inequality checked by the uniqueness certificate.

    ``status`` is ``met``, ``violated`` or ``unknown`` (a bound was too
    loose to decide).
    """

    layer: int
    name: str
    cardinality: int
    threshold: float
    status: str
    evidence: dict

    @property
    def condition_met(self) -> bool:
        return self.status == "met"

    def to_dict(self) -> dict:
        return {
            "layer": self.layer,
            "condition": self.name,
            "cardinality": self.cardinality,
            "threshold": self.threshold,
            "status": self.status,
            "condition_met": self.condition_met,
            "evidence": self.evidence,
        }


@dataclass
class UniquenessCertificate:
    conditions: list
    verdict: str
    policy: str
    flags: list = field(default_factory=list)

    @property
    def unique(self) -> bool:
        return self.verdict == "unique"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "policy": self.policy,
            "flags": list(self.flags),
            "conditions": [c.to_dict() for c in self.conditions],
        }

    def table(self) -> str:
        w = max([9] + [len(c.name) for c in self.conditions])
        lines = [f"verdict: {self.verdict}   policy: {self.policy}   flags: {','.join(self.flags) or '-'}",
                 f"{'layer':>5}  {'condition':<{w}} {'s_i':>5} {'threshold':>10}  {'status':<8} mode"]
        for c in self.conditions:
            lines.append(
                f"{c.layer:>5}  {c.name:<{w}} {c.cardinality:>5} {c.threshold:>10.4g}  "
                f"{c.status:<8} {c.evidence.get('mode', '')}"
            )
        return "\n".join(lines)


def _half_spark_condition(layer, name, s_card, ev: SparkEvidence) -> LayerCondition:
    threshold = ev.value / 2.0
    holds = s_card < threshold
    if ev.mode in ("exact", "assumed_generic"):
        status = "met" if holds else "violated"
    elif ev.mode == "lower_bound":
        # true spark >= value
        status = "met" if holds else "unknown"
    else:
        # upper bound: true spark <= value
        status = "unknown" if holds else "violated"
    return LayerCondition(layer, name, s_card, threshold, status, ev.to_dict())


def certify_uniqueness(
    net: GeneratorNetwork,
    trace: ForwardTrace,
    policy: str = "generic",
    budget: SubsetBudget | None = None,
) -> UniquenessCertificate:
    """Check the layer-wise uniqueness conditions for ``trace``.

    With ``s_i = |supp x_i|``:

    * last layer:  ``s_L < spark(W_L) / 2``
    * mid layers:  ``s_i < subspark(W_i, s_{i+1}) / 2``
    * latent:      ``subrank(W_0, s_1) = n_0 <= s_1``

    ``policy`` is ``exact`` (raises :class:`EnumerationCapError` when
    infeasible), ``sampled`` or ``generic`` (weights in general position:
    ``spark = min(rows, cols) + 1``, ``subrank = min(s, n_0)``).
    """
    if budget is None:
        budget = SubsetBudget(policy)
    elif budget.mode != policy:
        budget = SubsetBudget(policy, budget.samples, budget.cap, budget.seed)
    W = net.weights
    L = net.n_layers
    s = trace.cardinalities
    n0 = net.latent_dim
    flags = []
    if policy == "generic":
        flags.append("generic_weights_assumed")
    conditions = []

    ev = spark(W[L], budget)
    conditions.append(_half_spark_condition(L, "s_L < spark(W_L)/2", s[L - 1], ev))

    for i in range(L - 1, 0, -1):
        s_next = s[i]
        if s_next == 0:
            conditions.append(LayerCondition(i, "s_i < subspark/2", s[i - 1], 0.0, "violated",
                                             {"mode": "degenerate", "value": 0}))
            flags.append(f"empty_support_layer_{i + 1}")
            continue
        ev = subspark(W[i], s_next, budget)
        conditions.append(_half_spark_condition(i, "s_i < subspark(W_i)/2", s[i - 1], ev))

    s1 = s[0]
    if s1 == 0:
        flags.append("degenerate_empty_first_layer")
        conditions.append(LayerCondition(0, "subrank(W_0,s_1)=n_0<=s_1", 0, float(n0),
                                         "violated", {"mode": "degenerate", "value": 0}))
    else:
        rk = subrank(W[0], s1, budget)
        if n0 > s1:
            status = "violated"
        elif rk.mode == "upper_bound":
            status = "violated" if rk.value < n0 else "unknown"
        else:
            status = "met" if rk.value == n0 else "violated"
        conditions.append(LayerCondition(0, "subrank(W_0,s_1)=n_0<=s_1", s1, float(n0),
                                         status, rk.to_dict()))

    statuses = {c.status for c in conditions}
    if statuses == {"met"}:
        verdict = "unique"
    elif "violated" in statuses:
        verdict = "violated"
    else:
        verdict = "not_certified"
    return UniquenessCertificate(conditions, verdict, policy, flags)
