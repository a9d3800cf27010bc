"""Synthetic scenarios S1/S2, their true conditional samplers, the
ground-truth oracle and the bias/RMSE replication harness."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ArgumentError, ConfigError, DcmaError, SimulationError
from .estimands import EffectEstimate, PipelineConfig, compute_effect, effect_kinds, estimate_effects, regime_pair
from .genmodel import Dataset, fit_linear_gaussian, fit_pipeline_standardization, train_generator
from .metrics import FunctionalSpec, energy_distance
from .numcore import RngStream
from .simulate import Y00, Y10, Y11, InterventionalSamples, SimConfig, forward_simulate

log = logging.getLogger(__name__)

SCENARIO_IDS = ("S1", "S2")


@dataclass(frozen=True)
class S1Params:
    med_intercept: float = 0.5
    med_treat: float = 1.0
    med_z: float = 0.3
    med_sd: float = 0.5
    # (A=0 branch, A=1 & Z>0 class, A=1 & Z<=0 class)
    y_intercepts: tuple[float, float, float] = (4.3, 2.0, 6.0)
    y_treat: float = 0.3
    y_med: float = 0.5
    y_z: float = 0.2
    y_sd: float = 1.0


@dataclass(frozen=True)
class S2Params:
    med_intercept: float = 0.5
    b_a: tuple[float, ...] = (1.0, 0.8, 0.6, 0.4, 0.2)
    b_z: tuple[float, ...] = (0.3, 0.3, 0.2, 0.2, 0.1)
    rho: float = 0.6
    y_intercept: float = 1.0
    y_treat: float = 0.6
    y_med: float = 0.2
    y_z: float = 0.2
    y_sd: float = 1.0

    def sigma(self) -> np.ndarray:
        idx = np.arange(len(self.b_a))
        return self.rho ** np.abs(idx[:, None] - idx[None, :])


@dataclass(frozen=True)
class ScenarioSpec:
    id: str = "S1"
    n: int = 5000
    seed: int = 0
    p_treat: float = 0.5
    params: S1Params | S2Params | None = None

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ConfigError(f"id: unknown scenario {self.id!r}")
        if self.n < 1:
            raise ConfigError("n: must be >= 1")
        if not 0.0 < self.p_treat < 1.0:
            raise ConfigError("p_treat: must lie in (0, 1)")
        if self.params is None:
            object.__setattr__(self, "params", S1Params() if self.id == "S1" else S2Params())
        elif not isinstance(self.params, S1Params if self.id == "S1" else S2Params):
            raise ConfigError(f"params do not match scenario {self.id}")
        if self.id == "S2":
            p = self.params
            if len(p.b_a) != len(p.b_z):
                raise ConfigError("b_a and b_z must have equal length")
            try:
                np.linalg.cholesky(p.sigma())
            except np.linalg.LinAlgError as exc:
                raise ConfigError("mediator covariance is not positive definite") from exc

    @property
    def n_mediators(self) -> int:
        return 1 if self.id == "S1" else len(self.params.b_a)

    def null(self) -> ScenarioSpec:
        """Variant with every treatment pathway removed."""
        p = self.params
        if self.id == "S1":
            base = p.y_intercepts[0]
            q = replace(p, med_treat=0.0, y_treat=0.0, y_intercepts=(base, base, base))
        else:
            q = replace(p, b_a=tuple(0.0 for _ in p.b_a), y_treat=0.0)
        return replace(self, params=q)

    def to_dict(self) -> dict:
        return {"id": self.id, "n": self.n, "seed": self.seed, "p_treat": self.p_treat,
                "params": asdict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioSpec:
        d = dict(d)
        sid = d.get("id", "S1")
        params = d.pop("params", None)
        if params is not None:
            kind = S1Params if sid == "S1" else S2Params
            try:
                params = kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in params.items()})
            except TypeError as exc:
                raise ConfigError(f"params: {exc}") from exc
        unknown = set(d) - {"id", "n", "seed", "p_treat"}
        if unknown:
            raise ConfigError(f"scenario: unknown fields {sorted(unknown)}")
        return cls(params=params, **d)


class TrueMediatorSampler:
    """Known mediator mechanism, usable wherever a mediator generator is."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        p = spec.params
        if spec.id == "S1":
            self.intercept = np.array([p.med_intercept])
            self.b_a = np.array([p.med_treat])
            self.b_z = np.array([p.med_z])
            self.chol = np.array([[p.med_sd]])
        else:
            self.intercept = np.full(len(p.b_a), p.med_intercept)
            self.b_a = np.asarray(p.b_a, dtype=np.float64)
            self.b_z = np.asarray(p.b_z, dtype=np.float64)
            self.chol = np.linalg.cholesky(p.sigma())
        self.noise_dim = self.output_dim = len(self.intercept)

    def sample_mediators(self, a, z, eps) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, 1)
        a = np.asarray(a, dtype=np.float64).reshape(-1, 1)
        return self.intercept + a * self.b_a + z * self.b_z + eps @ self.chol.T


class TrueOutcomeSampler:
    """Known outcome mechanism; the S1 branch is chosen by the treatment
    value passed in, the latent class by the sign of Z."""

    noise_dim = 1

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec

    def sample_outcome(self, a, m, z, eps) -> np.ndarray:
        p = self.spec.params
        m = np.asarray(m, dtype=np.float64).reshape(-1, self.spec.n_mediators)
        n = m.shape[0]
        z = np.asarray(z, dtype=np.float64).reshape(n)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64).reshape(-1), (n,))
        e = p.y_sd * np.asarray(eps, dtype=np.float64).reshape(n, -1)[:, 0]
        if self.spec.id == "S1":
            c0, c_hi, c_lo = p.y_intercepts
            latent = np.where(z <= 0.0, c_lo, c_hi)
            intercept = np.where(a == 1.0, latent, c0)
            return intercept + p.y_treat * a + p.y_med * m[:, 0] + p.y_z * z + e
        return (p.y_intercept + p.y_treat * a + p.y_med * m.sum(axis=1)
                + np.sin(m[:, 0] * m[:, 1]) + p.y_z * z + e)


def true_samplers(spec: ScenarioSpec):
    return TrueMediatorSampler(spec), TrueOutcomeSampler(spec)


def sample_covariates(spec: ScenarioSpec, n: int, stream: RngStream) -> np.ndarray:
    return stream.generator.standard_normal((n, 1))


def generate_scenario(spec: ScenarioSpec) -> Dataset:
    root = RngStream(spec.seed).split("scenario").split(spec.id)
    n = spec.n
    a = (root.split("A").generator.random(n) < spec.p_treat).astype(np.float64)
    z = sample_covariates(spec, n, root.split("Z"))
    fm, fy = true_samplers(spec)
    m = fm.sample_mediators(a, z, root.split("eps_M").generator.standard_normal((n, fm.noise_dim)))
    y = fy.sample_outcome(a, m, z, root.split("eps_Y").generator.standard_normal((n, 1)))
    return Dataset(a, z, m, y, "A", ("Z",), tuple(f"M{j + 1}" for j in range(m.shape[1])), "Y")


DEFAULT_FUNCTIONALS = (FunctionalSpec("mean"), FunctionalSpec("ed"))
MAIN_REGIMES = (Y00, Y10, Y11)


@dataclass
class OracleTruth:
    """Ground-truth effects from forward simulation of the known mechanism.

    ``pools`` holds thinned pooled draws per regime (not serialized), used
    as reference samples when scoring estimated regime distributions.
    """

    scenario: ScenarioSpec
    effects: list[EffectEstimate]
    meta: dict
    pools: dict = field(default_factory=dict, repr=False)

    def value(self, effect: str, functional: str | FunctionalSpec):
        label = functional.label if isinstance(functional, FunctionalSpec) else functional
        for e in self.effects:
            if e.effect == effect and e.functional.label == label:
                return e.point
        raise KeyError((effect, label))

    def to_dict(self) -> dict:
        return {"scenario": self.scenario.to_dict(), "meta": self.meta,
                "effects": [e.to_dict() for e in self.effects]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def oracle_truth(spec: ScenarioSpec, n_oracle: int = 100_000, B_oracle: int = 200,
                 functionals=DEFAULT_FUNCTIONALS, seed: int = 0, max_pool: int = 2_000_000,
                 block: int = 10_000) -> OracleTruth:
    """True interventional effects via forward simulation with the known
    conditional samplers in place of learned generators.

    Mean effects use all ``n_oracle * B_oracle`` draws. Every other functional
    uses a pooled subset keeping the first ``max_pool // n_oracle`` draws of
    each observation, which bounds memory for large oracles.
    """
    if n_oracle < 1:
        raise ArgumentError("n_oracle must be >= 1")
    fm, fy = true_samplers(spec)
    root = RngStream(seed).split("oracle").split(spec.id)
    z = sample_covariates(spec, n_oracle, root.split("Z"))
    sim = SimConfig(B=B_oracle, seed=_derived_int(seed, 17))
    keep_b = max(1, min(B_oracle, max_pool // n_oracle))
    sums: dict = {}
    pools: dict = {}
    for start in range(0, n_oracle, block):
        part = forward_simulate(fm, fy, z[start : start + block], sim, spec.n_mediators, index_offset=start)
        for label, smp in part.items():
            sums[label] = sums.get(label, 0.0) + float(smp.draws.sum())
            pools.setdefault(label, []).append(smp.draws[:, :keep_b].reshape(-1))
        del part
    total = n_oracle * B_oracle
    pooled = {label: InterventionalSamples(label, np.concatenate(p)[:, None]) for label, p in pools.items()}
    effects = []
    for kind in effect_kinds(range(1, spec.n_mediators + 1)):
        treated, control = regime_pair(kind)
        for f in functionals:
            if f.kind == "mean":
                e = EffectEstimate(kind, f, (sums[treated] - sums[control]) / total)
            else:
                e = compute_effect(pooled, kind, f)
            effects.append(e)
    meta = {"n_oracle": n_oracle, "B_oracle": B_oracle, "seed": seed, "pool_draws_per_obs": keep_b}
    return OracleTruth(spec, effects, meta, {k: v.pooled() for k, v in pooled.items()})


def _derived_int(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


METHODS = ("dcma_es", "linear_gaussian_ablation")


@dataclass
class StudyResult:
    scenario: ScenarioSpec
    truth: OracleTruth
    estimates: list[dict]   # rep, method, effect, functional, value
    regime_ed: list[dict]   # rep, method, regime, ed
    failures: list[dict]
    meta: dict = field(default_factory=dict)

    def values(self, method: str, effect: str, functional: str) -> np.ndarray:
        return np.array([r["value"] for r in self.estimates
                         if r["method"] == method and r["effect"] == effect and r["functional"] == functional])

    def summary_rows(self) -> list[dict]:
        """Bias and RMSE per (method, functional, effect); scalar functionals only."""
        rows = []
        keys = dict.fromkeys((r["method"], r["functional"], r["effect"]) for r in self.estimates
                             if np.ndim(r["value"]) == 0)
        for method, func, effect in keys:
            vals = self.values(method, effect, func)
            truth = float(self.truth.value(effect, func))
            err = vals - truth
            rows.append({"method": method, "functional": func, "metric": "bias", "effect": effect,
                         "value": float(err.mean())})
            rows.append({"method": method, "functional": func, "metric": "rmse", "effect": effect,
                         "value": float(np.sqrt(np.mean(err ** 2)))})
        for e in self.truth.effects:
            if not e.is_curve:
                rows.append({"method": "truth", "functional": e.functional.label, "metric": "value",
                             "effect": e.effect, "value": float(e.point)})
        return rows

    def mean_regime_ed(self, method: str) -> dict:
        out = {}
        for label in MAIN_REGIMES:
            vals = [r["ed"] for r in self.regime_ed if r["method"] == method and r["regime"] == str(label)]
            out[str(label)] = float(np.mean(vals)) if vals else float("nan")
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["method", "functional", "metric", "effect", "value"])
            w.writeheader()
            for row in self.summary_rows():
                w.writerow({**row, "value": repr(row["value"])})

    def write_regime_ed_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["rep", "method", "regime", "ed"])
            w.writeheader()
            for row in self.regime_ed:
                w.writerow({**row, "ed": repr(row["ed"])})

    def to_json(self) -> str:
        doc = {"scenario": self.scenario.to_dict(), "truth": self.truth.to_dict(),
               "summary": self.summary_rows(), "regime_ed": self.regime_ed,
               "failures": self.failures, "meta": self.meta}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def run_replication_study(spec: ScenarioSpec, methods, reps: int, cfg: PipelineConfig,
                          truth: OracleTruth, callback=None, max_failure_rate: float = 0.1) -> StudyResult:
    """Repeat data generation, fitting and effect estimation ``reps`` times.

    ``methods`` is a subset of ``METHODS``; when both are requested the
    ablation reuses the replication's trained mediator generator. Per-regime
    energy distances to the oracle pools are recorded for every method.
    ``callback(rep, method, samples)`` sees each replication's samples.
    """
    methods = (methods,) if isinstance(methods, str) else tuple(methods)
    if reps < 1:
        raise ArgumentError("reps must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ArgumentError(f"unknown method {m!r}")
    estimates, regime_ed, failures = [], [], []
    for rep in range(reps):
        data = generate_scenario(replace(spec, seed=_derived_int(spec.seed, rep, 1)))
        rep_cfg = replace(cfg, train=replace(cfg.train, seed=_derived_int(cfg.train.seed, rep, 2)),
                          sim=replace(cfg.sim, seed=_derived_int(cfg.sim.seed, rep, 3)))
        fm = None
        for method in methods:
            try:
                if fm is None:
                    std = fit_pipeline_standardization(data, rep_cfg.train)
                    fm = train_generator(data, "mediator", rep_cfg.train, std)
                if method == "dcma_es":
                    fy = train_generator(data, "outcome", rep_cfg.train, std)
                else:
                    fy = fit_linear_gaussian(data)
                effects, samples, _ = estimate_effects(data, rep_cfg, models=(fm, fy))
            except DcmaError as exc:
                log.warning("replication %d (%s) failed: %s", rep, method, exc)
                failures.append({"rep": rep, "method": method, "error": str(exc)})
                continue
            for e in effects:
                value = e.point if np.ndim(e.point) == 0 else np.asarray(e.point)
                estimates.append({"rep": rep, "method": method, "effect": e.effect,
                                  "functional": e.functional.label, "value": value})
            for label in MAIN_REGIMES:
                regime_ed.append({"rep": rep, "method": method, "regime": str(label),
                                  "ed": energy_distance(samples[label].pooled(), truth.pools[label])})
            if callback is not None:
                callback(rep, method, samples)
            log.info("replication %d/%d (%s) done", rep + 1, reps, method)
    if len(failures) > max_failure_rate * reps * len(methods):
        raise SimulationError(f"{len(failures)} replications failed: {failures[:3]}")
    meta = {"reps": reps, "methods": list(methods), "n": spec.n, "B": cfg.sim.B}
    return StudyResult(spec, truth, estimates, regime_ed, failures, meta)
