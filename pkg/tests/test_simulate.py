from __future__ import annotations

import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcma.errors import ArgumentError, ConfigError, SimulationError, UnsupportedDimensionError
from dcma.genmodel import Dataset, TrainConfig, train_generator
from dcma.metrics import energy_distance
from dcma.numcore import RngStream
from dcma.scenarios import ScenarioSpec, true_samplers
from dcma.simulate import (
    CHUNK_OBS,
    Y00,
    Y10,
    Y11,
    NoiseLayout,
    RegimeLabel,
    SimConfig,
    build_hybrid_mediators,
    draw_counterfactual_mediators,
    error_decomposition_diag,
    forward_simulate,
    ipse_control,
    ipse_treated,
    observation_noise,
    observation_stream,
    write_regimes_csv,
)


class ShiftedMediator:
    """Wraps a mediator sampler and adds a constant shift."""

    def __init__(self, base, shift):
        self.base, self.shift = base, shift
        self.noise_dim = base.noise_dim
        self.output_dim = base.output_dim

    def sample_mediators(self, a, z, eps):
        return self.base.sample_mediators(a, z, eps) + self.shift


class AffineMediator:
    noise_dim = output_dim = 1

    def sample_mediators(self, a, z, eps):
        return 2.5 * np.asarray(a, dtype=float).reshape(-1, 1) + eps


def test_hybrid_single_mediator_reduces_to_arms():
    gen = np.random.default_rng(0)
    m0, m1 = gen.normal(size=(6, 1)), gen.normal(size=(6, 1))
    pi1, pi2 = gen.permutation(6), gen.permutation(6)
    treated, control = build_hybrid_mediators(m0, m1, 1, pi1, pi2)
    np.testing.assert_array_equal(treated, m1)
    np.testing.assert_array_equal(control, m0)


def test_hybrid_identity_permutations_splice_blocks():
    m0 = np.arange(12, dtype=float).reshape(4, 3)
    m1 = -np.arange(12, dtype=float).reshape(4, 3) - 100
    ident = np.arange(4)
    treated, control = build_hybrid_mediators(m0, m1, 2, ident, ident)
    np.testing.assert_array_equal(treated, np.column_stack([m0[:, 0], m1[:, 1], m1[:, 2]]))
    np.testing.assert_array_equal(control, np.column_stack([m0[:, 0], m0[:, 1], m1[:, 2]]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), b=st.integers(2, 30), n_med=st.integers(1, 6), data=st.data())
def test_hybrid_columns_are_permutations_of_sources(seed, b, n_med, data):
    s = data.draw(st.integers(1, n_med))
    gen = np.random.default_rng(seed)
    m0, m1 = gen.normal(size=(b, n_med)), gen.normal(size=(b, n_med))
    pi1, pi2 = gen.permutation(b), gen.permutation(b)
    treated, control = build_hybrid_mediators(m0, m1, s, pi1, pi2)
    for j in range(n_med):
        src_t = m0 if j < s - 1 else m1
        src_c = m0 if j <= s - 1 else m1
        np.testing.assert_array_equal(np.sort(treated[:, j]), np.sort(src_t[:, j]))
        np.testing.assert_array_equal(np.sort(control[:, j]), np.sort(src_c[:, j]))
    # treated and control share the flanking blocks row for row
    keep = [j for j in range(n_med) if j != s - 1]
    np.testing.assert_array_equal(treated[:, keep], control[:, keep])


def test_hybrid_batched_matches_per_observation():
    gen = np.random.default_rng(5)
    m0, m1 = gen.normal(size=(3, 7, 4)), gen.normal(size=(3, 7, 4))
    pi1 = np.stack([gen.permutation(7) for _ in range(3)])
    pi2 = np.stack([gen.permutation(7) for _ in range(3)])
    t, c = build_hybrid_mediators(m0, m1, 3, pi1, pi2)
    for i in range(3):
        ti, ci = build_hybrid_mediators(m0[i], m1[i], 3, pi1[i], pi2[i])
        np.testing.assert_array_equal(t[i], ti)
        np.testing.assert_array_equal(c[i], ci)


@pytest.mark.parametrize("s", [0, 4])
def test_hybrid_rejects_bad_path(s):
    m = np.zeros((3, 3))
    with pytest.raises(ArgumentError):
        build_hybrid_mediators(m, m, s, np.arange(3), np.arange(3))


@pytest.mark.parametrize("B", [0, 1])
def test_sim_config_rejects_small_B(B):
    with pytest.raises(ConfigError):
        SimConfig(B=B)


def test_sim_config_warns_at_two_draws():
    with pytest.warns(UserWarning):
        SimConfig(B=2)


def test_noise_streams_never_collide():
    layout = NoiseLayout(q_m=3, q_y=2, paths=(1, 2, 3))
    seen = {}
    for i in range(4):
        noise, perms = observation_noise(observation_stream(7, i), 50, layout)
        assert len(noise) == 5 + 2 * 3
        for role, block in noise.items():
            key = block.tobytes()
            assert key not in seen, (role, i, seen.get(key))
            seen[key] = (role, i)
        for pi1, pi2 in perms.values():
            assert sorted(pi1) == list(range(50)) and sorted(pi2) == list(range(50))
            assert not np.array_equal(pi1, pi2)
    # each block is a plain standard normal sample
    all_draws = np.concatenate([np.frombuffer(k) for k in seen])
    assert abs(all_draws.mean()) < 0.05 and abs(all_draws.std() - 1) < 0.05


def test_counterfactual_mediators_use_disjoint_streams():
    m0, m1 = draw_counterfactual_mediators(AffineMediator(), [0.0], 100, RngStream(1))
    assert not np.allclose(m1 - m0, 2.5)
    # forcing one stream for both arms leaves only the treatment input
    fm = AffineMediator()
    eps = RngStream(2).generator.standard_normal((100, 1))
    np.testing.assert_allclose(fm.sample_mediators(1.0, np.zeros((100, 1)), eps)
                               - fm.sample_mediators(0.0, np.zeros((100, 1)), eps), 2.5)


def test_counterfactual_mediators_require_two_draws():
    with pytest.raises(ConfigError):
        draw_counterfactual_mediators(AffineMediator(), [0.0], 1, RngStream(1))


def test_mediator_model_without_treatment_effect():
    gen = np.random.default_rng(0)
    n = 5000
    a = (gen.random(n) < 0.5).astype(float)
    z = gen.normal(size=(n, 1))
    m = 0.5 + 0.3 * z + 0.5 * gen.normal(size=(n, 1))
    fm = train_generator(Dataset(a, z, m, gen.normal(size=n)), "mediator", TrainConfig())
    m0, m1 = draw_counterfactual_mediators(fm, [0.0], 2000, RngStream(3))
    assert energy_distance(m0, m1) < 0.05


@pytest.fixture(scope="module")
def s1():
    return ScenarioSpec("S1", n=600)


def _covariates(n, seed=0):
    return np.random.default_rng(seed).normal(size=(n, 1))


def test_forward_simulate_shapes_and_labels(s1):
    fm, fy = true_samplers(s1)
    out = forward_simulate(fm, fy, _covariates(10), SimConfig(B=7), n_mediators=1)
    assert set(out) == {Y11, Y00, Y10, ipse_treated(1), ipse_control(1)}
    for label, smp in out.items():
        assert smp.regime == label
        assert smp.draws.shape == (10, 7)
        assert smp.pooled().shape == (70,)


def test_forward_simulate_parallel_is_bit_identical():
    spec = ScenarioSpec("S2", n=10)
    fm, fy = true_samplers(spec)
    z = _covariates(2 * CHUNK_OBS + 17)
    serial = forward_simulate(fm, fy, z, SimConfig(B=20, seed=3, n_jobs=1), 5)
    parallel = forward_simulate(fm, fy, z, SimConfig(B=20, seed=3, n_jobs=4), 5)
    assert serial.keys() == parallel.keys()
    for label in serial:
        assert serial[label].draws.tobytes() == parallel[label].draws.tobytes()


def test_forward_simulate_blocks_match_full_run():
    spec = ScenarioSpec("S1")
    fm, fy = true_samplers(spec)
    z = _covariates(300)
    cfg = SimConfig(B=10, seed=1)
    full = forward_simulate(fm, fy, z, cfg, 1)
    head = forward_simulate(fm, fy, z[:200], cfg, 1)
    tail = forward_simulate(fm, fy, z[200:], cfg, 1, index_offset=200)
    for label in full:
        np.testing.assert_array_equal(full[label].draws, np.vstack([head[label].draws, tail[label].draws]))


def test_single_mediator_ipse_matches_structural_regimes(s1):
    fm, fy = true_samplers(s1)
    out = forward_simulate(fm, fy, _covariates(500), SimConfig(B=200), 1)
    assert energy_distance(out[ipse_treated(1)].pooled(), out[Y11].pooled()) < 0.05
    assert energy_distance(out[ipse_control(1)].pooled(), out[Y10].pooled()) < 0.05


@pytest.mark.parametrize("sid", ["S1", "S2"])
def test_null_mechanism_gives_null_contrasts(sid):
    spec = ScenarioSpec(sid).null()
    fm, fy = true_samplers(spec)
    out = forward_simulate(fm, fy, _covariates(500, seed=4), SimConfig(B=200, seed=2), spec.n_mediators)
    pairs = [(Y11, Y00), (Y10, Y00)] + [(ipse_treated(s), ipse_control(s)) for s in range(1, spec.n_mediators + 1)]
    for t, c in pairs:
        assert abs(out[t].pooled().mean() - out[c].pooled().mean()) < 0.05


def test_constant_outcome_model_equalises_regimes():
    gen = np.random.default_rng(0)
    n = 2000
    a = (gen.random(n) < 0.5).astype(float)
    z = gen.normal(size=(n, 1))
    m = 0.5 + a[:, None] + 0.5 * gen.normal(size=(n, 1))
    data = Dataset(a, z, m, np.full(n, 3.0))
    cfg = TrainConfig(epochs=100, hidden=(32, 32), standardize=False)
    fm = train_generator(data, "mediator", cfg)
    fy = train_generator(data, "outcome", cfg)
    out = forward_simulate(fm, fy, z[:100], SimConfig(B=100), 1)
    for x, y in itertools.combinations(out.values(), 2):
        assert energy_distance(x.pooled(), y.pooled()) < 0.05


def test_non_finite_outcome_is_reported():
    class BrokenOutcome:
        noise_dim = 1

        def sample_outcome(self, a, m, z, eps):
            y = np.zeros(len(eps))
            y[13] = np.inf
            return y

    with pytest.raises(SimulationError, match=r"i=1, b=3"):
        forward_simulate(AffineMediator(), BrokenOutcome(), _covariates(4), SimConfig(B=10), 1)


def test_regime_label_text_round_trip():
    for label in (Y11, Y00, Y10, ipse_treated(3), ipse_control(12)):
        assert RegimeLabel.parse(str(label)) == label
    with pytest.raises(ArgumentError):
        RegimeLabel("IPSE_treated", 0)


def test_regimes_csv_layout(tmp_path, s1):
    fm, fy = true_samplers(s1)
    out = forward_simulate(fm, fy, _covariates(3), SimConfig(B=5), 1)
    write_regimes_csv(out, tmp_path / "r.csv", max_draws=4)
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["regime", "i", "b", "y"]
    assert len(rows) == 5 * 3 * 4
    first = next(r for r in rows if r["regime"] == "Y(0,M0)" and r["i"] == "2" and r["b"] == "1")
    assert float(first["y"]) == out[Y00].draws[2, 1]


def test_error_decomposition_with_true_models():
    spec = ScenarioSpec("S1")
    fm, fy = true_samplers(spec)
    b, b1, b2 = error_decomposition_diag(fm, fy, spec, [0.3], 1.0, 0.0, 5000, RngStream(1))
    assert max(b, b1, b2) < 0.02


def test_error_decomposition_isolates_mediator_error():
    spec = ScenarioSpec("S1")
    fm, fy = true_samplers(spec)
    b, b1, b2 = error_decomposition_diag(ShiftedMediator(fm, 1.0), fy, spec, [0.3], 1.0, 0.0, 5000, RngStream(2))
    assert b1 > 0.1
    assert b2 < 0.02
    assert b <= 2 * (b1 + b2) + 0.05


def test_error_decomposition_rejects_multiple_mediators():
    spec = ScenarioSpec("S2")
    fm, fy = true_samplers(spec)
    with pytest.raises(UnsupportedDimensionError):
        error_decomposition_diag(fm, fy, spec, [0.0], 1.0, 0.0, 100, RngStream(0))
