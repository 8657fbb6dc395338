"""Seeded Monte Carlo harness: phase-transition sweeps and inpainting runs.

A :class:`ExperimentPlan` fixes everything a run needs. Each trial is a pure
function of ``(plan, sweep value, trial index)``: the network, latent
vector, noise, mask and baseline start are drawn from independent
counter-based streams keyed on those values, so trials can run in any order
or in parallel and still produce identical records.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import certify_uniqueness
from .inversion import (
    GDConfig,
    InversionResult,
    Observation,
    RecoveryError,
    gradient_descent_invert,
    latent_pursuit,
    layered_basis_pursuit,
    oracle_end_to_end,
    relative_error,
    snr_db,
)
from .model import ActivationSpec, GeneratorNetwork, forward, load_network, make_rng, random_network

__all__ = [
    "METHODS",
    "CSV_COLUMNS",
    "SUMMARY_COLUMNS",
    "QUANTILES",
    "ExperimentPlan",
    "TrialRecord",
    "desk_phase_plan",
    "full_phase_plan",
    "inpainting_plan",
    "make_mask",
    "run_trial",
    "run_plan",
    "run_phase_transition",
    "run_inpainting",
    "quantile",
    "summarize",
    "emit_csv",
    "read_csv",
    "emit_summary",
    "snr_db",
]

log = logging.getLogger(__name__)

METHODS = ("gd", "layered-bp", "latent-pursuit", "oracle")
CSV_COLUMNS = ("sweep_var", "sweep_value", "trial", "method", "layer",
               "snr_db", "rel_err", "wall_ms", "converged", "cert_verdict")
QUANTILES = (0.10, 0.25, 0.50, 0.75, 0.90)
SUMMARY_COLUMNS = ("sweep_var", "sweep_value", "method", "layer", "metric", "count",
                   "q10", "q25", "q50", "q75", "q90")
LAMBDA_SWEEP = (1e-5, 7e-6, 3e-6, 1e-6, 0.0)
# a fit this small cannot be improved on in double precision
PERFECT_FIT = 1e-24
SELECTION_CRITERION = "lowest final data-fit objective"

_STREAM_NET, _STREAM_Z, _STREAM_MASK, _STREAM_NOISE, _STREAM_GD = range(5)


@dataclass
class ExperimentPlan:
    """Complete description of a run.

    ``kind="phase"`` sweeps a layer width: ``dims`` is the template and
    ``sweep_var`` names the entry that takes each ``sweep_values`` item
    (``"n1"`` is ``dims[1]``). ``kind="inpaint"`` sweeps the mask size:
    the concealed fraction for ``mask_kind="random"`` or the number of
    concealed top rows for ``mask_kind="top_rows"``.
    """

    kind: str = "phase"
    dims: list = field(default_factory=lambda: [8, 16, 196])
    activation: str = "tanh"
    weights: str | None = None
    sweep_var: str = "n1"
    sweep_values: list = field(default_factory=lambda: list(range(16, 161, 8)))
    trials: int = 64
    methods: list = field(default_factory=lambda: ["gd", "layered-bp", "latent-pursuit"])
    sigma: float = 0.0
    mask_kind: str = "none"
    image_height: int | None = None
    lambda_sweep: list | None = field(default_factory=lambda: list(LAMBDA_SWEEP))
    debias: dict = field(default_factory=lambda: {
        "gd": False, "layered-bp": True, "latent-pursuit": True, "oracle": False})
    rho: float = 1e-2
    gamma: float = 0.0
    gd: dict = field(default_factory=dict)
    seed: int = 0
    timing: bool = False
    selection: str = SELECTION_CRITERION

    def __post_init__(self):
        if self.kind not in ("phase", "inpaint"):
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.sweep_values:
            raise ValueError("the sweep grid is empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ValueError(f"unknown or missing methods {unknown}; choose from {list(METHODS)}")
        if self.mask_kind not in ("none", "random", "top_rows"):
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if self.kind == "inpaint" and self.mask_kind == "none":
            raise ValueError("an inpainting plan needs a mask kind")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        ActivationSpec(self.activation)
        GDConfig(**self.gd)
        self.sweep_values = list(self.sweep_values)
        self.dims = [int(d) for d in self.dims]
        self.methods = list(self.methods)
        self.debias = {m: bool(self.debias.get(m, False)) for m in METHODS}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown plan fields {sorted(extra)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def desk_phase_plan(n0: int = 8, trials: int = 64, **kw) -> ExperimentPlan:
    """Phase-transition sweep at n = 196, n_1 = 16, 24, ..., 160."""
    return ExperimentPlan(kind="phase", dims=[n0, 16, 196], trials=trials, **kw)


def full_phase_plan(n0: int = 100, trials: int = 512, **kw) -> ExperimentPlan:
    """Full-size sweep: n = 625, n_1 = 50 .. 1000."""
    return ExperimentPlan(kind="phase", dims=[n0, 50, 625], trials=trials,
                          sweep_values=list(range(50, 1001, 50)), **kw)


def inpainting_plan(weights: str | None, mask_kind: str, sweep_values, **kw) -> ExperimentPlan:
    return ExperimentPlan(kind="inpaint", weights=weights, mask_kind=mask_kind,
                          sweep_var="concealed" if mask_kind == "random" else "top_rows",
                          sweep_values=list(sweep_values), **kw)


@dataclass
class TrialRecord:
    """Metrics of one method on one trial; ``layers`` maps layer name to
    ``{"snr_db": ..., "rel_err": ...}`` (``z``, ``x1`` .. ``xL``, ``image``)."""

    sweep_var: str
    sweep_value: object
    trial: int
    method: str
    layers: dict
    wall_ms: float | None
    converged: bool
    cert_verdict: str

    def rows(self):
        for name, m in self.layers.items():
            yield {
                "sweep_var": self.sweep_var,
                "sweep_value": _fmt(self.sweep_value),
                "trial": str(self.trial),
                "method": self.method,
                "layer": name,
                "snr_db": _fmt(m["snr_db"]),
                "rel_err": _fmt(m["rel_err"]),
                "wall_ms": "" if self.wall_ms is None else _fmt(self.wall_ms),
                "converged": "1" if self.converged else "0",
                "cert_verdict": self.cert_verdict,
            }


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _parse_number(s: str):
    try:
        return int(s)
    except ValueError:
        return float(s)


def _stream_key(value) -> int:
    v = float(value)
    if v.is_integer():
        return int(v)
    return int(round(v * 1_000_000))


# ---------------------------------------------------------------------------
# masks


def make_mask(kind: str, n: int, amount, rng=None, image_height: int | None = None):
    """Observed coordinates after concealing part of a length-``n`` signal.

    ``random``: conceal ``round(amount * n)`` uniformly chosen entries.
    ``top_rows``: conceal the first ``amount`` rows of a row-major image of
    ``image_height`` rows (square when not given). Returns ``None`` when
    nothing is concealed.
    """
    if kind == "none":
        return None
    if kind == "random":
        if not 0.0 <= float(amount) < 1.0:
            raise ValueError("concealed fraction must lie in [0, 1)")
        k = int(round(float(amount) * n))
        if k == 0:
            return None
        hidden = rng.choice(n, size=k, replace=False)
        observed = np.setdiff1d(np.arange(n), hidden)
    elif kind == "top_rows":
        h = image_height or math.isqrt(n)
        if h * (n // h) != n:
            raise ValueError(f"signal length {n} is not a {h}-row image")
        width = n // h
        k = int(amount)
        if not 0 <= k < h:
            raise ValueError(f"can conceal between 0 and {h - 1} rows")
        if k == 0:
            return None
        observed = np.arange(k * width, n)
    else:
        raise ValueError(f"unknown mask kind {kind!r}")
    if observed.size < 1:
        raise ValueError("mask leaves no observed coordinates")
    return observed


# ---------------------------------------------------------------------------
# trials


def _network(plan: ExperimentPlan, value) -> GeneratorNetwork | None:
    if plan.weights:
        return load_network(plan.weights)
    dims = list(plan.dims)
    if plan.kind == "phase":
        if not plan.sweep_var.startswith("n") or not plan.sweep_var[1:].isdigit():
            raise ValueError(f"cannot sweep {plan.sweep_var!r}; use n<layer index>")
        idx = int(plan.sweep_var[1:])
        if not 0 <= idx < len(dims):
            raise ValueError(f"{plan.sweep_var} is outside dims {dims}")
        dims[idx] = int(value)
        if dims[idx] < 1 or int(value) != value:
            return None
        key = _stream_key(value)
    else:
        key = 0
    return random_network(dims, ActivationSpec(plan.activation),
                          make_rng(plan.seed, _STREAM_NET, key))


def _zero_result(net: GeneratorNetwork, method: str) -> InversionResult:
    L = net.n_layers
    z = np.zeros(net.latent_dim)
    layers = [np.zeros(d) for d in net.dims[1:L + 1]]
    out = np.zeros(net.output_dim)
    return InversionResult(method, z, layers, [np.zeros(0, dtype=np.intp)] * L, out,
                           flags=["recovery_failed"])


def _layered_bp_best(net, obs, plan: ExperimentPlan) -> InversionResult:
    lams = [None] if plan.lambda_sweep is None else plan.lambda_sweep
    best = None
    for lam in lams:
        try:
            r = layered_basis_pursuit(net, obs, lambdas=None if lam is None else [lam] * net.n_layers,
                                      do_debias=plan.debias["layered-bp"])
        except RecoveryError:
            continue
        if best is None or r.data_fit < best.data_fit:
            best = r
        if best.data_fit <= PERFECT_FIT:
            break
    return best if best is not None else _zero_result(net, "layered-bp")


def _invert(method, net, obs, trace, plan: ExperimentPlan, key, trial) -> InversionResult:
    if method == "layered-bp":
        return _layered_bp_best(net, obs, plan)
    if method == "latent-pursuit":
        return latent_pursuit(net, obs, rho=plan.rho, gamma=plan.gamma,
                              do_debias=plan.debias["latent-pursuit"])
    if method == "gd":
        z0 = make_rng(plan.seed, _STREAM_GD, key, trial).standard_normal(net.latent_dim)
        return gradient_descent_invert(net, obs, GDConfig(**plan.gd), z0=z0,
                                       do_debias=plan.debias["gd"])
    return oracle_end_to_end(net, obs, trace)


def _metrics(trace, res: InversionResult) -> dict:
    pairs = [("z", trace.z, res.z)]
    pairs += [(f"x{i + 1}", t, e) for i, (t, e) in enumerate(zip(trace.hidden, res.layers))]
    pairs.append(("image", trace.output, res.output))
    out = {}
    for name, t, e in pairs:
        if not np.any(t):
            out[name] = {"snr_db": math.nan, "rel_err": math.nan}
        else:
            out[name] = {"snr_db": snr_db(t, e), "rel_err": relative_error(t, e)}
    return out


def run_trial(plan: ExperimentPlan, value, trial: int, net: GeneratorNetwork | None = None) -> list:
    """All method records for one ``(sweep value, trial)`` pair."""
    if net is None:
        net = _network(plan, value)
    key = _stream_key(value)
    z = make_rng(plan.seed, _STREAM_Z, key, trial).standard_normal(net.latent_dim)
    trace = forward(net, z)
    y = trace.output
    if plan.sigma > 0:
        y = y + plan.sigma * make_rng(plan.seed, _STREAM_NOISE, key, trial).standard_normal(y.size)
    mask = None
    if plan.kind == "inpaint":
        mask = make_mask(plan.mask_kind, net.output_dim, value,
                         make_rng(plan.seed, _STREAM_MASK, key, trial), plan.image_height)
    obs = Observation(y, mask, sigma=plan.sigma or None)
    verdict = certify_uniqueness(net, trace, "generic").verdict
    records = []
    for method in plan.methods:
        t0 = time.perf_counter()
        res = _invert(method, net, obs, trace, plan, key, trial)
        wall = (time.perf_counter() - t0) * 1e3 if plan.timing else None
        records.append(TrialRecord(plan.sweep_var, value, trial, method, _metrics(trace, res),
                                   wall, res.converged and "recovery_failed" not in res.flags,
                                   verdict))
    return records


def _grid_task(args):
    plan, value, trial = args
    return run_trial(plan, value, trial)


def run_plan(plan: ExperimentPlan, jobs: int = 1) -> list:
    """Run every grid point and trial; records come back in (sweep, trial, method) order."""
    if plan.kind == "inpaint" and not plan.weights:
        log.info("no weight manifest given; using a seeded random network with dims %s", plan.dims)
    tasks = []
    for value in plan.sweep_values:
        try:
            net = _network(plan, value)
        except ValueError as exc:
            log.warning("skipping %s=%r: %s", plan.sweep_var, value, exc)
            continue
        if net is None:
            log.warning("skipping %s=%r: inconsistent dimensions", plan.sweep_var, value)
            continue
        if plan.kind == "inpaint":
            # reject masks that leave nothing observed before any work starts
            make_mask(plan.mask_kind, net.output_dim, value, make_rng(0), plan.image_height)
        tasks.extend((plan, value, t) for t in range(plan.trials))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_grid_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = []
        last = None
        for task in tasks:
            if task[1] != last:
                log.info("%s=%r", plan.sweep_var, task[1])
                last = task[1]
            chunks.append(_grid_task(task))
    order = {v: i for i, v in enumerate(plan.sweep_values)}
    mrank = {m: i for i, m in enumerate(plan.methods)}
    records = [r for chunk in chunks for r in chunk]
    records.sort(key=lambda r: (order[r.sweep_value], r.trial, mrank[r.method]))
    return records


def run_phase_transition(plan: ExperimentPlan, jobs: int = 1) -> list:
    if plan.kind != "phase":
        raise ValueError("expected a phase-transition plan")
    return run_plan(plan, jobs)


def run_inpainting(plan: ExperimentPlan, jobs: int = 1) -> list:
    if plan.kind != "inpaint":
        raise ValueError("expected an inpainting plan")
    return run_plan(plan, jobs)


# ---------------------------------------------------------------------------
# aggregation and files


def quantile(values, q: float) -> float:
    """Linear-interpolation quantile that tolerates infinite entries."""
    v = sorted(float(x) for x in values)
    if not v:
        return math.nan
    pos = q * (len(v) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(v) - 1)
    frac = pos - lo
    if frac == 0.0 or v[lo] == v[hi]:
        return v[lo]
    return v[lo] + (v[hi] - v[lo]) * frac


def summarize(records) -> list:
    """Per (sweep value, method, layer, metric) quantile rows, NaNs dropped."""
    groups = {}
    order = []
    for r in records:
        for name, m in r.layers.items():
            for metric in ("rel_err", "snr_db"):
                k = (r.sweep_var, r.sweep_value, r.method, name, metric)
                if k not in groups:
                    groups[k] = []
                    order.append(k)
                if not math.isnan(m[metric]):
                    groups[k].append(m[metric])
    order.sort(key=lambda k: (k[0], _sort_value(k[1]), k[2], k[3], k[4]))
    rows = []
    for k in order:
        vals = groups[k]
        rows.append({
            "sweep_var": k[0], "sweep_value": _fmt(k[1]), "method": k[2], "layer": k[3],
            "metric": k[4], "count": str(len(vals)),
            **{f"q{round(q * 100)}": _fmt(quantile(vals, q)) for q in QUANTILES},
        })
    return rows


def _sort_value(v):
    return (0, float(v), "") if isinstance(v, (int, float, np.number)) else (1, 0.0, str(v))


def _write_rows(path, columns, rows) -> None:
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_csv(records, path) -> None:
    """One row per (sweep value, trial, method, layer); header always written."""
    _write_rows(path, CSV_COLUMNS, (row for r in records for row in r.rows()))


def emit_summary(records, path) -> None:
    _write_rows(path, SUMMARY_COLUMNS, summarize(records))


def read_csv(path) -> list:
    """Inverse of :func:`emit_csv`."""
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    records = []
    index = {}
    for row in rows:
        value = _parse_number(row["sweep_value"])
        key = (row["sweep_var"], value, int(row["trial"]), row["method"])
        if key not in index:
            rec = TrialRecord(row["sweep_var"], value, int(row["trial"]), row["method"], {},
                              float(row["wall_ms"]) if row["wall_ms"] else None,
                              row["converged"] == "1", row["cert_verdict"])
            index[key] = rec
            records.append(rec)
        index[key].layers[row["layer"]] = {"snr_db": float(row["snr_db"]),
                                           "rel_err": float(row["rel_err"])}
    return records
