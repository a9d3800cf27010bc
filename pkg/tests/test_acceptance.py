"""End-to-end acceptance checks, one test (or pair) per criterion.

Every test records a PASS/FAIL line that is repeated in the terminal summary.
The studies behind criteria 3-6 are computed once per session; the full
``table1`` profile dominates the runtime (roughly half an hour on one core).
"""

from __future__ import annotations

import json
import time
from dataclasses import replace

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from dcma.cli import main
from dcma.config import resolve_config
from dcma.estimands import PipelineConfig
from dcma.genmodel import es_loss_arrays
from dcma.metrics import (
    FunctionalSpec,
    count_modes,
    empirical_quantile,
    energy_distance,
    energy_score_mc,
    wasserstein1_1d,
)
from dcma.numcore import RngStream, init_mlp, mlp_backward, mlp_forward
from dcma.scenarios import METHODS, ScenarioSpec, oracle_truth, run_replication_study, true_samplers
from dcma.simulate import Y00, Y10, Y11, error_decomposition_diag

MAIN_FUNCS = (FunctionalSpec("mean"), FunctionalSpec("ed"))
QTE_TAUS = tuple(round(t, 2) for t in np.linspace(0.1, 0.9, 9))


def _oracle_via_cli(tmp_path, scenario_id):
    out = tmp_path / f"oracle_{scenario_id}"
    cfg = tmp_path / f"oracle_{scenario_id}.json"
    cfg.write_text(json.dumps({"scenario": {"id": scenario_id}, "out": str(out),
                               "oracle": {"n_oracle": 100_000, "B_oracle": 200}}))
    start = time.perf_counter()
    assert main(["oracle", "--config", str(cfg), "--seed", "0"]) == 0
    elapsed = time.perf_counter() - start
    doc = json.loads((out / "oracle.json").read_text())
    values = {(e["effect"], e["functional"]): e["point"] for e in doc["effects"]}
    return values, elapsed


def test_criterion_1_oracle_truth(tmp_path, criterion):
    s1, t1 = _oracle_via_cli(tmp_path, "S1")
    s2, t2 = _oracle_via_cli(tmp_path, "S2")
    targets = [(s1, "ITE", 0.498, 0.02), (s1, "IDE", -0.002, 0.02), (s1, "IPSE1", 0.500, 0.02),
               (s2, "IDE", 0.599, 0.03), (s2, "ITE", 1.170, 0.04)]
    checks = [abs(v[(e, "mean")] - target) <= tol for v, e, target, tol in targets]
    detail = (f"S1 ITE={s1['ITE', 'mean']:.4f} IDE={s1['IDE', 'mean']:.4f} IPSE1={s1['IPSE1', 'mean']:.4f}; "
              f"S2 IDE={s2['IDE', 'mean']:.4f} ITE={s2['ITE', 'mean']:.4f}; {t1:.0f}s/{t2:.0f}s")
    ok = all(checks) and max(t1, t2) < 300
    assert criterion(1, ok, detail), detail


@pytest.fixture(scope="session")
def truths():
    return {sid: oracle_truth(ScenarioSpec(sid), 100_000, 200, MAIN_FUNCS, seed=0) for sid in ("S1", "S2")}


def test_criterion_2_headline_contrast(truths, criterion):
    mean_ide = truths["S1"].value("IDE", "mean")
    ed_ide = truths["S1"].value("IDE", "ed")
    ok = -0.03 < mean_ide < 0.03 and abs(ed_ide - 0.281) <= 0.08
    detail = f"mean IDE={mean_ide:.4f}, ED IDE={ed_ide:.4f}"
    assert criterion(2, ok, detail), detail


def _run_studies(profile, truths, with_extras):
    cfg = resolve_config("simulate", {}, profile)
    modes = {}

    def shapes(rep, method, samples):
        if rep == 0 and method == "dcma_es":
            modes.update({str(label): count_modes(samples[label].pooled()) for label in (Y00, Y10, Y11)})

    start = time.perf_counter()
    s1 = run_replication_study(
        ScenarioSpec("S1", n=cfg.scenario.n), METHODS if with_extras else "dcma_es", cfg.reps,
        PipelineConfig(cfg.train, cfg.sim, MAIN_FUNCS), truths["S1"], callback=shapes)
    s2_funcs = MAIN_FUNCS + ((FunctionalSpec("qte_curve", taus=QTE_TAUS),) if with_extras else ())
    s2 = run_replication_study(ScenarioSpec("S2", n=cfg.scenario.n), "dcma_es", cfg.reps,
                               PipelineConfig(cfg.train, cfg.sim, s2_funcs), truths["S2"])
    return {"S1": s1, "S2": s2, "modes": modes, "seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def table1_studies(truths):
    return _run_studies("table1", truths, with_extras=True)


@pytest.fixture(scope="session")
def quick_studies(truths):
    return _run_studies("quick", truths, with_extras=False)


def _worst_bias(studies):
    worst = {}
    for sid in ("S1", "S2"):
        for row in studies[sid].summary_rows():
            if row["method"] == "dcma_es" and row["metric"] == "bias":
                key = (sid, row["functional"], row["effect"])
                worst[key] = row["value"]
    return worst


@pytest.mark.parametrize("profile, tol, budget", [("table1", 0.10, 3600), ("quick", 0.15, 600)])
def test_criterion_3_bias(profile, tol, budget, request, criterion):
    studies = request.getfixturevalue(f"{profile}_studies")
    biases = _worst_bias(studies)
    key = max(biases, key=lambda k: abs(biases[k]))
    ok = all(abs(b) <= tol for b in biases.values()) and studies["seconds"] < budget
    detail = (f"{len(biases)} effects, worst |bias|={abs(biases[key]):.4f} at {'/'.join(key)} "
              f"(tol {tol}), {studies['seconds'] / 60:.1f} min")
    assert criterion(3, ok, detail, profile), detail


def test_criterion_4_regime_shapes(table1_studies, criterion):
    modes = table1_studies["modes"]
    n00, _ = modes[str(Y00)]
    n10, loc10 = modes[str(Y10)]
    n11, loc11 = modes[str(Y11)]
    sep10 = abs(loc10[0] - loc10[1]) if n10 >= 2 else 0.0
    sep11 = abs(loc11[0] - loc11[1]) if n11 >= 2 else 0.0
    ok = n00 == 1 and n10 == 2 and n11 == 2 and sep10 > 2 and sep11 > 2
    detail = f"modes Y(0,M0)={n00}, Y(1,M0)={n10} sep {sep10:.2f}, Y(1,M1)={n11} sep {sep11:.2f}"
    assert criterion(4, ok, detail), detail


def test_criterion_5_quantile_heterogeneity(table1_studies, criterion):
    study = table1_studies["S2"]
    # the estimated curve is the replication average
    spans = {s: float(np.ptp(study.values("dcma_es", f"IPSE{s}", "qte_curve").mean(axis=0)))
             for s in range(1, 6)}
    ok = spans[4] < 0.15 and spans[5] < 0.15 and spans[1] > 0.1
    detail = "ranges " + ", ".join(f"IPSE{s}={v:.3f}" for s, v in spans.items())
    assert criterion(5, ok, detail), detail


def test_criterion_6_ablation(table1_studies, criterion):
    study = table1_studies["S1"]
    rows = [r for r in study.regime_ed if r["rep"] < 10]
    ratios = {}
    for label in (Y00, Y10, Y11):
        mean_ed = {m: np.mean([r["ed"] for r in rows if r["method"] == m and r["regime"] == str(label)])
                   for m in METHODS}
        ratios[str(label)] = mean_ed["linear_gaussian_ablation"] / mean_ed["dcma_es"]
    ok = all(r >= 3.0 for r in ratios.values())
    detail = "ED ratio linear-Gaussian/ES " + ", ".join(f"{k}={v:.1f}" for k, v in ratios.items())
    assert criterion(6, ok, detail), detail


class _AffineMediator:
    def __init__(self, base, shift, scale):
        self.base, self.shift, self.scale = base, shift, scale
        self.noise_dim = base.noise_dim

    def sample_mediators(self, a, z, eps):
        return self.shift + self.scale * self.base.sample_mediators(a, z, eps)


class _AffineOutcome:
    def __init__(self, base, shift, scale, slope):
        self.base, self.shift, self.scale, self.slope = base, shift, scale, slope
        self.noise_dim = base.noise_dim

    def sample_outcome(self, a, m, z, eps):
        y = self.base.sample_outcome(a, m, z, eps)
        return self.shift + self.scale * y + self.slope * np.asarray(m).reshape(-1)


def test_criterion_7_error_decomposition(criterion):
    spec = ScenarioSpec("S1")
    fm, fy = true_samplers(spec)
    gen = np.random.default_rng(7)
    margins = []
    for case in range(20):
        pm = _AffineMediator(fm, gen.uniform(-0.5, 0.5), gen.uniform(0.7, 1.3))
        py = _AffineOutcome(fy, gen.uniform(-0.5, 0.5), gen.uniform(0.7, 1.3), gen.uniform(-0.3, 0.3))
        z = gen.normal()
        a_prime = float(gen.integers(0, 2))
        b, b1, b2 = error_decomposition_diag(pm, py, spec, [z], 1.0, a_prime, 2000, RngStream(case))
        margins.append(2 * (b1 + b2) + 0.05 - b)
    ok = min(margins) >= 0
    detail = f"20 perturbations, smallest slack {min(margins):.4f}"
    assert criterion(7, ok, detail), detail


def test_criterion_8_metric_properties(criterion):
    gen = np.random.default_rng(8)
    failures = []
    for d in (1, 3):
        x, y, w = (gen.normal(size=(300, d)), gen.normal(0.5, 1.2, size=(250, d)),
                   gen.normal(size=(200, d)))
        if abs(energy_distance(x, x)) > 1e-10:
            failures.append(f"ED identity d={d}")
        if abs(energy_distance(x, y) - energy_distance(y, x)) > 1e-10:
            failures.append(f"ED symmetry d={d}")
        if energy_distance(x, y) <= 0 or energy_distance(x, w) < 0:
            failures.append(f"ED positivity d={d}")
    x, y, w = gen.normal(size=400), gen.exponential(size=300), gen.uniform(-2, 2, size=350)
    if wasserstein1_1d(x, x) != 0 or abs(wasserstein1_1d(x, y) - wasserstein1_1d(y, x)) > 1e-12:
        failures.append("W1 identity/symmetry")
    if wasserstein1_1d(x, w) > wasserstein1_1d(x, y) + wasserstein1_1d(y, w) + 1e-12:
        failures.append("W1 triangle")
    if abs(wasserstein1_1d(x, x + 0.7) - 0.7) > 1e-12:
        failures.append("W1 translation")
    if np.any(np.diff([empirical_quantile(y, t) for t in np.linspace(0.01, 0.99, 50)]) < 0):
        failures.append("quantile monotonicity")
    obs = gen.normal(size=4000)
    base = gen.normal(size=(4000, 20))
    score = {mu: np.mean([energy_score_mc(base[i] + mu, obs[i]) for i in range(4000)])
             for mu in (-1.0, -0.5, 0.0, 0.5, 1.0)}
    if max(score, key=score.get) != 0.0:
        failures.append("ES propriety")
    u, v = gen.normal(size=(60, 2)), gen.normal(0.3, 1.5, size=(60, 2))
    k = len(u)
    duu = np.linalg.norm(u[:, None] - u[None], axis=2)
    dvv = np.linalg.norm(v[:, None] - v[None], axis=2)
    mean_es = np.mean([energy_score_mc(u, obs_v) for obs_v in v])
    v_u, u_u, v_v = duu.mean(), duu.sum() / (k * (k - 1)), dvv.mean()
    if abs(-2 * mean_es - v_v - v_u + u_u - energy_distance(u, v)) > 1e-9:
        failures.append("ES/ED consistency")
    ok = not failures
    detail = "all properties hold" if ok else "failed: " + ", ".join(failures)
    assert criterion(8, ok, detail), detail


def _relative_error(num, ana):
    return abs(num - ana) / max(1.0, abs(num), abs(ana))


def test_criterion_9_gradients(criterion):
    worst = 0.0
    h = 1e-5
    for seed in range(5):
        stream = RngStream(seed).split("acceptance")
        gen = stream.generator
        act = ("relu", "tanh")[seed % 2]
        sizes = [int(gen.integers(1, 5)), *gen.integers(2, 9, size=int(gen.integers(1, 3))), int(gen.integers(1, 3))]
        params = init_mlp(sizes, stream.split("params"), act)
        for b in params.biases:
            b += 0.1 * gen.standard_normal(b.shape)
        x = gen.standard_normal((5, sizes[0]))
        up = gen.standard_normal((5, sizes[-1]))
        grads = mlp_backward(params, x, up)
        for (_, arr), (_, g) in zip(params.arrays(), grads.arrays()):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                fp = float(np.sum(up * mlp_forward(params, x)))
                flat[j] = old - h
                fm = float(np.sum(up * mlp_forward(params, x)))
                flat[j] = old
                worst = max(worst, _relative_error((fp - fm) / (2 * h), gflat[j]))
        d = sizes[-1]
        cond = gen.standard_normal((6, sizes[0] - 1)) if sizes[0] > 1 else np.zeros((6, 0))
        noise = gen.standard_normal((6, 3, 1))
        target = gen.standard_normal((6, d))
        _, grads = es_loss_arrays(params, cond, target, noise)
        for (_, arr), (_, g) in zip(params.arrays(), grads.arrays()):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                lp, _ = es_loss_arrays(params, cond, target, noise, with_grad=False)
                flat[j] = old - h
                lm, _ = es_loss_arrays(params, cond, target, noise, with_grad=False)
                flat[j] = old
                worst = max(worst, _relative_error((lp - lm) / (2 * h), gflat[j]))
    ok = worst <= 1e-4
    detail = f"worst relative error {worst:.2e} over 5 random networks"
    assert criterion(9, ok, detail), detail


def _effects_bytes(tmp_path, name, n_jobs, threads):
    body = {"scenario": {"id": "S1", "n": 600}, "sim": {"B": 50, "n_jobs": n_jobs},
            "train": {"epochs": 30, "hidden": [16, 16]}, "out": str(tmp_path / name),
            "functionals": [{"kind": "mean"}, {"kind": "ed"}, {"kind": "quantile", "tau": 0.25}]}
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(body))
    with threadpool_limits(limits=threads):
        assert main(["simulate", "--config", str(cfg), "--seed", "11"]) == 0
    return (tmp_path / name / "effects.json").read_bytes()


def test_criterion_10_determinism(tmp_path, criterion):
    first = _effects_bytes(tmp_path, "run1", 1, 1)
    second = _effects_bytes(tmp_path, "run2", 1, 1)
    threaded = _effects_bytes(tmp_path, "run3", 4, None)
    ok = first == second == threaded
    detail = "effects.json identical across reruns and 1 vs 4 workers" if ok else "effects.json differs"
    assert criterion(10, ok, detail), detail
