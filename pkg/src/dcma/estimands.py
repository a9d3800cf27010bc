"""Effect assembly (ITE, IDE, IPSE_s under any functional), the end-to-end
estimation pipeline, and percentile-bootstrap intervals."""

from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ArgumentError, ConfigError, DcmaError, FitError
from .genmodel import Dataset, TrainConfig, fit_linear_gaussian, fit_pipeline_standardization, train_generator
from .metrics import FunctionalSpec, apply_functional_contrast, empirical_quantile
from .numcore import RngStream
from .simulate import Y00, Y10, Y11, SimConfig, forward_simulate, ipse_control, ipse_treated

log = logging.getLogger(__name__)

OUTCOME_MODELS = ("es", "linear_gaussian")
_IPSE = re.compile(r"IPSE(\d+)$")


def regime_pair(kind: str):
    """(treated member, control member) of an effect's regime pair."""
    if kind == "ITE":
        return Y11, Y00
    if kind == "IDE":
        return Y10, Y00
    m = _IPSE.match(kind)
    if m and int(m.group(1)) >= 1:
        s = int(m.group(1))
        return ipse_treated(s), ipse_control(s)
    raise ArgumentError(f"unknown effect kind {kind!r}")


def effect_kinds(mediators) -> list[str]:
    return ["ITE", "IDE"] + [f"IPSE{s}" for s in mediators]


@dataclass
class EffectEstimate:
    effect: str
    functional: FunctionalSpec
    point: float | np.ndarray
    lower: float | np.ndarray | None = None
    upper: float | np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def is_curve(self) -> bool:
        return self.functional.kind == "qte_curve"

    def to_dict(self) -> dict:
        out = {"effect": self.effect, "functional": self.functional.kind,
               "params": self.functional.params()}
        if self.is_curve:
            out.update(point=None, lower=None, upper=None)
            out["curve"] = {
                "taus": list(self.functional.taus),
                "point": _floats(self.point),
                "lower": _floats(self.lower),
                "upper": _floats(self.upper),
            }
        else:
            out.update(point=_float(self.point), lower=_float(self.lower), upper=_float(self.upper))
        out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, d: dict) -> EffectEstimate:
        fs = FunctionalSpec.from_dict({"kind": d["functional"], **d.get("params", {})})
        if "curve" in d and d["curve"] is not None:
            c = d["curve"]
            arr = lambda v: None if v is None else np.asarray(v, dtype=np.float64)
            return cls(d["effect"], fs, arr(c["point"]), arr(c["lower"]), arr(c["upper"]), d.get("meta", {}))
        return cls(d["effect"], fs, d["point"], d.get("lower"), d.get("upper"), d.get("meta", {}))


def _float(v):
    return None if v is None else float(v)


def _floats(v):
    return None if v is None else [float(x) for x in np.asarray(v)]


def compute_effect(samples: dict, kind: str, functional: FunctionalSpec) -> EffectEstimate:
    treated, control = regime_pair(kind)
    for label in (treated, control):
        if label not in samples:
            raise ArgumentError(f"regime {label} is missing from the simulated samples")
    value = apply_functional_contrast(functional, samples[treated].pooled(), samples[control].pooled())
    return EffectEstimate(kind, functional, value)


def quantile_effect_curve(samples: dict, kind: str, taus) -> EffectEstimate:
    taus = tuple(taus)
    if not taus:
        raise ArgumentError("empty quantile grid")
    return compute_effect(samples, kind, FunctionalSpec("qte_curve", taus=taus))


def compute_effects(samples: dict, kinds, functionals) -> list[EffectEstimate]:
    return [compute_effect(samples, k, f) for k in kinds for f in functionals]


@dataclass
class PipelineConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    functionals: tuple[FunctionalSpec, ...] = (FunctionalSpec("mean"), FunctionalSpec("ed"))
    outcome_model: str = "es"

    def __post_init__(self):
        self.functionals = tuple(self.functionals)
        if self.outcome_model not in OUTCOME_MODELS:
            raise ConfigError(f"outcome_model: must be one of {OUTCOME_MODELS}")


def fit_models(data: Dataset, cfg: PipelineConfig):
    """Train the mediator generator and the outcome model on ``data``."""
    std = fit_pipeline_standardization(data, cfg.train)
    fm = train_generator(data, "mediator", cfg.train, std)
    if cfg.outcome_model == "linear_gaussian":
        fy = fit_linear_gaussian(data)
    else:
        fy = train_generator(data, "outcome", cfg.train, std)
    return fm, fy


def estimate_effects(data: Dataset, cfg: PipelineConfig, models=None):
    """Run training (unless ``models`` is given), forward simulation and all
    requested functionals. Returns ``(effects, samples, (fm, fy))``."""
    fm, fy = models if models is not None else fit_models(data, cfg)
    mediators = cfg.sim.resolved_mediators(data.n_mediators)
    samples = forward_simulate(fm, fy, data, cfg.sim, n_mediators=data.n_mediators)
    effects = compute_effects(samples, effect_kinds(mediators), cfg.functionals)
    return effects, samples, (fm, fy)


@dataclass
class BootstrapConfig:
    resamples: int = 100
    refits: int = 1
    seed: int = 0
    level: float = 0.95
    n_jobs: int = 1
    max_failure_rate: float = 0.2

    def __post_init__(self):
        if self.resamples < 2:
            raise ConfigError("resamples: at least two bootstrap resamples are required")
        if self.refits < 1:
            raise ConfigError("refits: must be >= 1")
        if not 0.0 < self.level < 1.0:
            raise ConfigError("level: must lie in (0, 1)")


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _averaged_values(data: Dataset, cfg: PipelineConfig, refits: int, key) -> list:
    runs = []
    for j in range(refits):
        seed = _derived_seed(*key, j) if key else cfg.train.seed + j
        cfg_j = replace(cfg, train=replace(cfg.train, seed=seed),
                        sim=replace(cfg.sim, seed=_derived_seed(seed, 1)) if key else cfg.sim)
        effects, _, _ = estimate_effects(data, cfg_j)
        runs.append([np.asarray(e.point, dtype=np.float64) for e in effects])
    avg = [np.mean([r[i] for r in runs], axis=0) for i in range(len(runs[0]))]
    return effects, avg


def percentile_interval(values: np.ndarray, level: float):
    """Linear-interpolation percentile interval along axis 0."""
    alpha = 1.0 - level
    v = np.asarray(values, dtype=np.float64)
    lo = np.apply_along_axis(empirical_quantile, 0, v, alpha / 2) if v.ndim > 1 else empirical_quantile(v, alpha / 2)
    hi = np.apply_along_axis(empirical_quantile, 0, v, 1 - alpha / 2) if v.ndim > 1 else empirical_quantile(v, 1 - alpha / 2)
    return lo, hi


def bootstrap_effects(data: Dataset, cfg: PipelineConfig, boot: BootstrapConfig) -> list[EffectEstimate]:
    """Percentile-bootstrap intervals around original-sample point estimates.

    Each resample draws ``n`` rows with replacement and reruns the whole
    pipeline (standardization, training, simulation), averaging the effect
    values over ``boot.refits`` independently seeded refits.
    """
    template, point = _averaged_values(data, cfg, boot.refits, None)

    def one(r):
        idx = RngStream(boot.seed).split("bootstrap").split(r).generator.integers(0, data.n, data.n)
        try:
            return _averaged_values(data.take(idx), cfg, boot.refits, (boot.seed, r))[1]
        except (DcmaError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.warning("bootstrap resample %d failed: %s", r, exc)
            return None

    if boot.n_jobs > 1:
        with ThreadPoolExecutor(boot.n_jobs) as ex:
            results = list(ex.map(one, range(boot.resamples)))
    else:
        results = [one(r) for r in range(boot.resamples)]
    ok = [res for res in results if res is not None]
    failed = boot.resamples - len(ok)
    if failed > boot.max_failure_rate * boot.resamples or len(ok) < 2:
        raise FitError(f"{failed} of {boot.resamples} bootstrap resamples failed")

    out = []
    for i, est in enumerate(template):
        values = np.array([res[i] for res in ok])
        lo, hi = percentile_interval(values, boot.level)
        meta = {"resamples": boot.resamples, "failed": failed, "refits": boot.refits,
                "seed": boot.seed, "level": boot.level}
        p = point[i] if est.is_curve else float(point[i])
        lo = lo if est.is_curve else float(lo)
        hi = hi if est.is_curve else float(hi)
        out.append(EffectEstimate(est.effect, est.functional, p, lo, hi, meta))
    return out


def effects_to_json(effects, meta: dict | None = None) -> str:
    doc = {"effects": [e.to_dict() for e in effects], "meta": meta or {}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_effects_json(path, effects, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(effects_to_json(effects, meta))


def read_effects_json(path) -> list[EffectEstimate]:
    with open(path) as fh:
        doc = json.load(fh)
    return [EffectEstimate.from_dict(d) for d in doc["effects"]]


def write_effects_csv(path, effects) -> None:
    """Flat rows ``effect, functional, tau, point, lower, upper``; curves
    contribute one row per quantile level."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["effect", "functional", "tau", "point", "lower", "upper"])
        for e in effects:
            fmt = lambda v: "" if v is None else repr(float(v))
            if e.is_curve:
                for j, tau in enumerate(e.functional.taus):
                    pick = lambda arr: None if arr is None else arr[j]
                    w.writerow([e.effect, "qte_curve", repr(tau), fmt(e.point[j]), fmt(pick(e.lower)), fmt(pick(e.upper))])
            else:
                w.writerow([e.effect, e.functional.label, "", fmt(e.point), fmt(e.lower), fmt(e.upper)])


def format_effect_table(effects, digits: int = 3) -> str:
    """Effects as rows, functionals as columns, cells ``point [lower, upper]``."""
    scalar = [e for e in effects if not e.is_curve]
    rows = list(dict.fromkeys(e.effect for e in scalar))
    cols = list(dict.fromkeys(e.functional.label for e in scalar))
    cell = {(e.effect, e.functional.label): e for e in scalar}
    f = lambda v: f"{v:.{digits}f}"
    lines = ["\t".join(["Effect"] + cols)]
    for r in rows:
        parts = [r]
        for c in cols:
            e = cell.get((r, c))
            if e is None:
                parts.append("")
            elif e.lower is None:
                parts.append(f(e.point))
            else:
                parts.append(f"{f(e.point)} [{f(e.lower)}, {f(e.upper)}]")
        lines.append("\t".join(parts))
    return "\n".join(lines)
