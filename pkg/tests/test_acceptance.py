"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the lines are also
repeated in the terminal summary.
"""

import itertools
import math
import os
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
import sympy

from builders import FIXTURES, cd_lasso, lasso_value, low_coherence_dictionary, net_activating, sparse_vector
from conftest import ACCEPTANCE_LINES
from geninvert.analysis import SubsetBudget, mu_s, mutual_coherence, spark, subrank, subspark
from geninvert.experiments import (
    _STREAM_Z,
    ExperimentPlan,
    _stream_key,
    inpainting_plan,
    quantile,
    run_plan,
)
from geninvert.inversion import (
    EPS_CONSTANT,
    Observation,
    RecoveryError,
    debias_objective,
    layered_basis_pursuit,
    oracle_bounds,
    oracle_layered,
)
from geninvert.model import ActivationSpec, forward, load_network, make_rng, random_network, relu
from geninvert.solvers import admm_kkt_residuals, lasso, linearized_admm

IDENTITY = ActivationSpec("identity")
JOBS = os.cpu_count() or 1


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


# ---------------------------------------------------------------------------
# 1. phase transition


NARROW_GRID = [6, 8, 10, 12, 14]
WIDE_GRID = [32, 48, 64, 80, 96]


@pytest.fixture(scope="module")
def phase_runs():
    t0 = time.perf_counter()
    narrow = run_plan(ExperimentPlan(kind="phase", dims=[8, 16, 196], sweep_values=NARROW_GRID,
                                     trials=64, methods=["gd", "layered-bp", "latent-pursuit"],
                                     seed=1), jobs=JOBS)
    wide = run_plan(ExperimentPlan(kind="phase", dims=[8, 16, 196], sweep_values=WIDE_GRID,
                                   trials=64, methods=["layered-bp", "latent-pursuit"], seed=1),
                    jobs=JOBS)
    return narrow, wide, time.perf_counter() - t0


def _by_point(records, layer, metric):
    out = {}
    for r in records:
        out.setdefault((r.sweep_value, r.method), []).append(r.layers[layer][metric])
    return out


def test_criterion_1a_narrow_layer_fails(phase_runs):
    narrow, _, _ = phase_runs
    errs = _by_point(narrow, "z", "rel_err")
    parts, ok = [], True
    for n1 in NARROW_GRID:
        meds = {m: quantile(errs[(n1, m)], 0.5) for m in ("gd", "layered-bp", "latent-pursuit")}
        good = all(v > 0.5 for v in meds.values())
        ok &= good
        parts.append(f"n1={n1} " + "/".join(f"{v:.3f}" for v in meds.values()) + ("" if good else " (<=0.5)"))
    report("1a", ok, "median z rel err gd/bp/lp > 0.5: " + "; ".join(parts))
    assert ok


def test_criterion_1b_wide_layer_recovers(phase_runs):
    _, wide, _ = phase_runs
    errs = _by_point(wide, "z", "rel_err")
    parts, ok = [], True
    for n1 in WIDE_GRID:
        fr = {m: float(np.mean(np.array(errs[(n1, m)]) <= 1e-4)) for m in ("layered-bp", "latent-pursuit")}
        ok &= all(v >= 0.9 for v in fr.values())
        parts.append(f"n1={n1} " + "/".join(f"{v:.0%}" for v in fr.values()))
    report("1b", ok, "fraction z rel err <= 1e-4 bp/lp >= 90%: " + "; ".join(parts))
    assert ok


def test_criterion_1c_hidden_layer_recovered(phase_runs):
    narrow, _, elapsed = phase_runs
    snr = _by_point(narrow, "x1", "snr_db")
    parts, ok = [], True
    for n1 in NARROW_GRID:
        fr = {m: float(np.mean(np.array(snr[(n1, m)]) >= 40)) for m in ("layered-bp", "latent-pursuit")}
        ok &= all(v >= 0.9 for v in fr.values())
        parts.append(f"n1={n1} " + "/".join(f"{v:.0%}" for v in fr.values()))
    in_budget = elapsed < 600
    report("1c", ok and in_budget,
           "fraction x1 snr >= 40 dB bp/lp >= 90%: " + "; ".join(parts)
           + f"; criterion-1 runtime {elapsed:.0f} s (< 600 s)")
    assert ok and in_budget


# ---------------------------------------------------------------------------
# 2. single-layer stability on unit-column Gaussian matrices


def test_criterion_2_stability_gaussian():
    t0 = time.perf_counter()
    eps = 0.01
    met = held = 0
    mus = []
    for k in range(100):
        rng = make_rng(200, k)
        W = rng.standard_normal((64, 128))
        W /= np.linalg.norm(W, axis=0)
        mu = mutual_coherence(W)
        mus.append(mu)
        s = math.floor(1 / (3 * mu))
        if s < 1:
            continue
        met += 1
        x_star = sparse_vector(128, s, rng)
        e = rng.standard_normal(64)
        e *= eps / np.linalg.norm(e)
        x, rep = lasso(W, W @ x_star + e, 2 * eps)
        nested = set(np.flatnonzero(x)) <= set(np.flatnonzero(x_star))
        if rep.converged and nested and np.max(np.abs(x - x_star)) < EPS_CONSTANT * eps:
            held += 1
    elapsed = time.perf_counter() - t0
    ok = held == 100 and elapsed < 60
    report("2", ok, f"s = floor(1/(3 mu)) >= 1 in {met}/100 instances "
                    f"(mu in [{min(mus):.3f}, {max(mus):.3f}]); nesting and sup-error bound held in "
                    f"{held}/100; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 3. support nesting of layered basis pursuit


def test_criterion_3_support_nesting():
    sigma = 1e-3
    nested = pre = covered = 0
    for k in range(50):
        rng = make_rng(300, k)
        W1 = low_coherence_dictionary(64, rng)
        net, z = net_activating(W1, 2, 2, rng, IDENTITY)
        tr = forward(net, z)
        s1 = tr.cardinalities[0]
        if s1 < 1 / (3 * mu_s(W1, 64, SubsetBudget("exact")).value):
            pre += 1
        e = sigma * rng.standard_normal(64)
        obs = Observation(tr.output + e, sigma=sigma)
        covered += np.linalg.norm(e) <= obs.epsilon
        try:
            res = layered_basis_pursuit(net, obs)
        except RecoveryError:
            continue
        if all(set(Sh) <= set(S) for Sh, S in zip(res.supports, tr.supports)):
            nested += 1
    ok = nested == 50 and pre == 50
    report("3", ok, f"sparsity condition met in {pre}/50 nets; recovered supports nested in "
                    f"true supports at every layer in {nested}/50 (noise inside the eps bound in {covered}/50)")
    assert ok


# ---------------------------------------------------------------------------
# 4. oracle error bounds


def test_criterion_4_oracle_bounds():
    t0 = time.perf_counter()
    sigma, trials = 0.01, 1000
    net = random_network([8, 64, 196], IDENTITY, make_rng(400))
    tr = forward(net, make_rng(401).standard_normal(8))
    truth = {"z": tr.z, "x1": tr.hidden[0]}
    sq = {k: 0.0 for k in truth}
    for t in range(trials):
        y = tr.output + sigma * make_rng(402, t).standard_normal(196)
        res = oracle_layered(net, Observation(y, sigma=sigma), tr)
        sq["z"] += float(np.sum((res.z - truth["z"]) ** 2))
        sq["x1"] += float(np.sum((res.layers[0] - truth["x1"]) ** 2))
    bounds = oracle_bounds(net, tr, sigma).bounds
    parts, ok = [], True
    for k in truth:
        mse = sq[k] / trials
        lo, hi = bounds[k]
        inside = 0.8 * lo <= mse <= 1.2 * hi
        ok &= inside
        parts.append(f"{k}: {mse:.3e} in [{0.8 * lo:.3e}, {1.2 * hi:.3e}]")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120
    report("4", ok, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------------------
# 5. exhaustive exact enumerator on small integer matrices


def _ref_rank(M) -> int:
    return sympy.Matrix(M).rank() if M.size else 0


def _ref_spark(M) -> int:
    cols = M.shape[1]
    for k in range(1, cols + 1):
        for c in itertools.combinations(range(cols), k):
            if _ref_rank(M[:, c]) < k:
                return k
    return cols + 1


def _ref_coherence_sq(M) -> Fraction:
    best = Fraction(0)
    cols = [[int(v) for v in M[:, j]] for j in range(M.shape[1])]
    for a, b in itertools.combinations(cols, 2):
        na, nb = sum(v * v for v in a), sum(v * v for v in b)
        if na == 0 or nb == 0:
            return Fraction(1)
        best = max(best, Fraction(sum(p * q for p, q in zip(a, b)) ** 2, na * nb))
    return best


def _ref_row_subsets(M, s, fn, pick):
    return pick(fn(M[list(r), :]) for r in itertools.combinations(range(M.shape[0]), s))


def test_criterion_5_exact_modes_match_enumerator():
    ex = SubsetBudget("exact")
    mismatches = []
    for k in range(50):
        M = make_rng(500, k).integers(-3, 4, size=(4, 6))
        W = M.astype(float)
        if spark(W, ex).value != _ref_spark(M):
            mismatches.append((k, "spark"))
        for s in range(1, 5):
            if subspark(W, s, ex).value != _ref_row_subsets(M, s, _ref_spark, min):
                mismatches.append((k, f"subspark{s}"))
            if subrank(W, s, ex).value != _ref_row_subsets(M, s, _ref_rank, min):
                mismatches.append((k, f"subrank{s}"))
            ref_mu = math.sqrt(_ref_row_subsets(M, s, _ref_coherence_sq, max))
            got = mu_s(W, s, ex).value
            if abs(got - ref_mu) > 4 * np.finfo(float).eps * max(ref_mu, 1.0):
                mismatches.append((k, f"mu_s{s}"))
    ok = not mismatches
    report("5", ok, f"50 matrices x (spark, subspark, subrank, mu_s for s = 1..4): "
                    f"{len(mismatches)} mismatches {mismatches[:5]}")
    assert ok


# ---------------------------------------------------------------------------
# 6. solver correctness


def test_criterion_6a_lasso_vs_coordinate_descent():
    worst = 0.0
    for k in range(20):
        rng = make_rng(610, k)
        W = rng.standard_normal((20, 40)) / math.sqrt(20)
        y = W @ sparse_vector(40, 4, rng, nonneg=k % 2 == 0) + 0.01 * rng.standard_normal(20)
        lam = 0.05
        nonneg = k % 2 == 0
        x, rep = lasso(W, y, lam, nonneg=nonneg)
        ref = cd_lasso(W, y, lam, nonneg=nonneg, tol=1e-12)
        worst = max(worst, abs(lasso_value(W, y, lam, x) - lasso_value(W, y, lam, ref)))
    ok = worst <= 1e-6
    report("6a", ok, f"20 instances, max objective gap vs coordinate descent {worst:.2e} (<= 1e-6)")
    assert ok


def _admm_instance(k, n=30, rows=80, s=40):
    rng = make_rng(620, k)
    W = rng.standard_normal((rows, n)) / math.sqrt(rows)
    x = relu(rng.standard_normal(n))
    if not x.any():
        x[0] = 1.0
    want = -np.ones(rows)
    want[rng.choice(rows, size=s, replace=False)] = 1.0
    sign = np.sign(W @ x)
    sign[sign == 0] = 1.0
    W *= (want * sign)[:, None]
    v = W @ x
    S = v > 0
    return W[S], W[~S], v[S]


def test_criterion_6b_admm_kkt():
    good = 0
    iters = []
    for k in range(100):
        A, B, b = _admm_instance(k)
        assert A.shape == (40, 30)
        x, a, u, rep = linearized_admm(A, B, b, lam=0.0, rho=1e-2)
        kkt = admm_kkt_residuals(A, B, b, x, u, 0.0, 1e-2)
        feas = float(np.linalg.norm(a - B @ x))
        iters.append(rep.iterations)
        if rep.converged and rep.iterations <= 20000 and max(kkt.values()) <= 1e-6 and feas <= 1e-6:
            good += 1
    ok = good >= 99
    report("6b", ok, f"KKT and feasibility <= 1e-6 within 20000 iterations in {good}/100 "
                     f"(median {int(np.median(iters))} iterations)")
    assert ok


def test_criterion_6c_debias_gradient():
    worst = 0.0
    for k in range(5):
        net = random_network([5, 20, 30, 40], "tanh", make_rng(630, k))
        tr = forward(net, make_rng(631, k).standard_normal(5))
        obj = debias_objective(net, Observation(tr.output + 0.1 * make_rng(632, k).standard_normal(40)),
                               tr.supports)
        for j in range(10):
            z = make_rng(633, k, j).standard_normal(5)
            _, g = obj.value_and_grad(z)
            h = 1e-6
            fd = np.array([(obj.value_and_grad(z + h * e)[0] - obj.value_and_grad(z - h * e)[0]) / (2 * h)
                           for e in np.eye(5)])
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    ok = worst < 1e-5
    report("6c", ok, f"50 points on 5 nets, max relative gradient error {worst:.2e} (< 1e-5)")
    assert ok


# ---------------------------------------------------------------------------
# 7. determinism of the command line


CLI_RUNS = [
    ["gen-random", "--dims", "6,40,120", "--seed", "4", "--out", "net"],
    ["certify", "--weights", "net", "--seed", "2", "--out", "cert.json"],
    ["invert", "--weights", str(FIXTURES / "mid_net"), "--observation", str(FIXTURES / "mid_clean.txt"),
     "--latent", str(FIXTURES / "mid_latent.txt"), "--method", "latent-pursuit", "--out", "lp.json"],
    ["invert", "--weights", str(FIXTURES / "mid_net"), "--observation", str(FIXTURES / "mid_clean.txt"),
     "--method", "gd", "--seed", "3", "--out", "gd.json"],
    ["invert", "--weights", str(FIXTURES / "mid_net"), "--observation", str(FIXTURES / "mid_clean.txt"),
     "--method", "layered-bp", "--debias", "on", "--out", "bp.json"],
    ["oracle", "--weights", str(FIXTURES / "mid_net"), "--observation", str(FIXTURES / "mid_clean.txt"),
     "--latent", str(FIXTURES / "mid_latent.txt"), "--sigma", "0.01", "--out", "oracle.json"],
    ["phase", "--n0", "4", "--n", "60", "--grid", "8,24", "--trials", "3", "--sigma", "0.001",
     "--out", "phase.csv", "--summary", "phase_summary.csv"],
    ["inpaint", "--weights", str(FIXTURES / "desk_net"), "--amount", "0.45", "--trials", "3",
     "--methods", "latent-pursuit,gd", "--out", "inpaint.csv", "--summary", "inpaint_summary.csv"],
]


def _cli_session(root):
    root.mkdir()
    outs = []
    for argv in CLI_RUNS:
        proc = subprocess.run([sys.executable, "-m", "geninvert", *argv], cwd=root,
                              capture_output=True)
        assert proc.returncode in (0, 2), proc.stderr.decode()
        outs.append(proc.stdout)
    files = {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}
    return outs, files


def test_criterion_7_cli_determinism(tmp_path):
    out_a, files_a = _cli_session(tmp_path / "a")
    out_b, files_b = _cli_session(tmp_path / "b")
    differing = sorted(str(k) for k in files_a if files_a[k] != files_b.get(k))
    ok = files_a.keys() == files_b.keys() and not differing and out_a == out_b
    report("7", ok, f"{len(CLI_RUNS)} commands run twice, {len(files_a)} output files, "
                    f"differing: {differing or 'none'}; stdout identical: {out_a == out_b}")
    assert ok


# ---------------------------------------------------------------------------
# 8. inpainting


def test_criterion_8_inpainting():
    desk = str(FIXTURES / "desk_net")
    net = load_network(desk)
    common = dict(trials=64, methods=["latent-pursuit"], seed=8)
    rand_plan = inpainting_plan(desk, "random", [0.45], **common)
    rows_plan = inpainting_plan(desk, "top_rows", [6], **common)
    rand = run_plan(rand_plan, jobs=JOBS)
    rows = run_plan(rows_plan, jobs=JOBS)
    observed = 196 - round(0.45 * 196)
    key = _stream_key(0.45)
    s_last = [forward(net, make_rng(8, _STREAM_Z, key, t).standard_normal(8)).cardinalities[-1]
              for t in range(64)]
    enough = sum(observed > 2 * s for s in s_last)
    snr_r = [r.layers["image"]["snr_db"] for r in rand]
    snr_t = [r.layers["image"]["snr_db"] for r in rows]
    frac = float(np.mean(np.array(snr_r) >= 40))
    band_r = (quantile(snr_r, 0.25), quantile(snr_r, 0.75))
    band_t = (quantile(snr_t, 0.25), quantile(snr_t, 0.75))
    overlap = band_r[0] <= band_t[1] and band_t[0] <= band_r[1]
    ok = frac >= 0.9 and overlap
    report("8", ok, f"random 45% mask: {frac:.0%} of 64 trials >= 40 dB "
                    f"(observed {observed} > 2 s_L in {enough}/64, max s_L {max(s_last)}); "
                    f"25-75% bands random [{band_r[0]:.1f}, {band_r[1]:.1f}] dB, "
                    f"top 6 rows [{band_t[0]:.1f}, {band_t[1]:.1f}] dB, overlap {overlap}")
    assert ok
