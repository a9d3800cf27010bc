"""Forward simulation of interventional outcome distributions.

For every observation ``i`` and draw ``b`` the mediator generator is run
under both treatment arms, hybrid mediator vectors are spliced together for
each requested path ``s``, and the outcome generator is evaluated for every
regime with its own noise block.

Samplers are duck-typed: a mediator sampler exposes ``noise_dim`` and
``sample_mediators(a, z, eps)``; an outcome sampler exposes ``noise_dim`` and
``sample_outcome(a, m, z, eps)``. Trained generators and the scenarios' true
mechanisms both qualify.
"""

from __future__ import annotations

import csv
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigError, SimulationError, UnsupportedDimensionError
from .metrics import energy_distance
from .numcore import RngStream

CHUNK_OBS = 128


@dataclass(frozen=True, order=True)
class RegimeLabel:
    kind: str
    s: int = 0

    KINDS = ("Y(1,M1)", "Y(0,M0)", "Y(1,M0)", "IPSE_treated", "IPSE_control")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ArgumentError(f"unknown regime kind {self.kind!r}")
        if self.kind.startswith("IPSE") and self.s < 1:
            raise ArgumentError("IPSE regimes need a mediator index s >= 1")
        if not self.kind.startswith("IPSE") and self.s != 0:
            raise ArgumentError(f"{self.kind} takes no mediator index")

    def __str__(self):
        if self.kind.startswith("IPSE"):
            arm = self.kind.split("_")[1]
            return f"IPSE{self.s}_{arm}"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> RegimeLabel:
        if text.startswith("IPSE"):
            head, arm = text.split("_")
            return cls(f"IPSE_{arm}", int(head[4:]))
        return cls(text)


Y11 = RegimeLabel("Y(1,M1)")
Y00 = RegimeLabel("Y(0,M0)")
Y10 = RegimeLabel("Y(1,M0)")


def ipse_treated(s: int) -> RegimeLabel:
    return RegimeLabel("IPSE_treated", s)


def ipse_control(s: int) -> RegimeLabel:
    return RegimeLabel("IPSE_control", s)


@dataclass
class InterventionalSamples:
    regime: RegimeLabel
    draws: np.ndarray  # (n, B)
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.draws.shape[0]

    @property
    def B(self) -> int:
        return self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        return self.draws.reshape(-1)


@dataclass
class SimConfig:
    B: int = 200
    seed: int = 0
    mediators: tuple[int, ...] | None = None  # None: every mediator
    n_jobs: int = 1

    def __post_init__(self):
        if self.B < 2:
            raise ConfigError("B: at least two draws per observation are required")
        if self.B == 2:
            warnings.warn("B=2 gives only two possible permutations; hybrid mediators will be "
                          "weakly independent", stacklevel=2)
        if self.mediators is not None:
            self.mediators = tuple(int(s) for s in self.mediators)
        if self.n_jobs < 1:
            raise ConfigError("n_jobs: must be >= 1")

    def resolved_mediators(self, n_mediators: int) -> tuple[int, ...]:
        if self.mediators is None:
            return tuple(range(1, n_mediators + 1))
        for s in self.mediators:
            if not 1 <= s <= n_mediators:
                raise ConfigError(f"mediators: index {s} outside 1..{n_mediators}")
        return self.mediators


@dataclass(frozen=True)
class NoiseLayout:
    """Column blocks of the per-observation noise matrix."""

    q_m: int
    q_y: int
    paths: tuple[int, ...]

    def roles(self) -> list[tuple[str, int]]:
        out = [("M0", self.q_m), ("M1", self.q_m), ("Y11", self.q_y), ("Y00", self.q_y), ("Y10", self.q_y)]
        for s in self.paths:
            out += [(f"Y(s={s},1)", self.q_y), (f"Y(s={s},0)", self.q_y)]
        return out

    @property
    def width(self) -> int:
        return sum(w for _, w in self.roles())


def observation_stream(seed: int, i: int) -> RngStream:
    return RngStream(seed).split("forward").split(i)


def observation_noise(stream: RngStream, B: int, layout: NoiseLayout):
    """All randomness used for one observation.

    Returns ``(noise, perms)``: ``noise`` maps each role to its own disjoint
    ``(B, q)`` block; ``perms`` maps each path ``s`` to the permutation pair
    ``(pi1, pi2)``.
    """
    gen = stream.generator
    block = gen.standard_normal((B, layout.width))
    noise, col = {}, 0
    for role, w in layout.roles():
        noise[role] = block[:, col : col + w]
        col += w
    keys = gen.random((2 * len(layout.paths), B))
    order = np.argsort(keys, axis=1, kind="stable")
    perms = {s: (order[2 * j], order[2 * j + 1]) for j, s in enumerate(layout.paths)}
    return noise, perms


def draw_counterfactual_mediators(fm, z_i, B: int, stream: RngStream):
    """``(M0, M1)``, each ``(B, S)``, from disjoint noise sub-streams."""
    if B < 2:
        raise ConfigError("B: at least two draws per observation are required")
    z_rep = np.repeat(np.asarray(z_i, dtype=np.float64).reshape(1, -1), B, axis=0)
    e0 = stream.split("M0").generator.standard_normal((B, fm.noise_dim))
    e1 = stream.split("M1").generator.standard_normal((B, fm.noise_dim))
    return fm.sample_mediators(0.0, z_rep, e0), fm.sample_mediators(1.0, z_rep, e1)


def build_hybrid_mediators(m0: np.ndarray, m1: np.ndarray, s: int, pi1, pi2):
    """Splice hybrid mediator matrices for path ``s`` (1-based).

    Row ``b`` of ``treated`` is ``(m0[pi1[b], :s-1], m1[b, s-1], m1[pi2[b], s:])``;
    ``control`` is identical except that column ``s-1`` comes from ``m0[b]``.
    """
    n_med = m0.shape[-1]
    if not 1 <= s <= n_med:
        raise ArgumentError(f"mediator index s={s} outside 1..{n_med}")
    j = s - 1
    pi1 = np.asarray(pi1)
    pi2 = np.asarray(pi2)
    # leading axes (if any) index observations; permutations act on the B axis
    take = lambda arr, pi: np.take_along_axis(arr, pi[..., None], axis=-2) if arr.ndim == 3 else arr[pi]
    lower = take(m0[..., :j], pi1)
    upper = take(m1[..., j + 1 :], pi2)
    treated = np.concatenate([lower, m1[..., j : j + 1], upper], axis=-1)
    control = np.concatenate([lower, m0[..., j : j + 1], upper], axis=-1)
    return treated, control


def _simulate_chunk(fm, fy, z_chunk, idx, cfg: SimConfig, layout: NoiseLayout):
    c, B = len(idx), cfg.B
    noise = {role: np.empty((c, B, w)) for role, w in layout.roles()}
    perm1 = {s: np.empty((c, B), dtype=np.int64) for s in layout.paths}
    perm2 = {s: np.empty((c, B), dtype=np.int64) for s in layout.paths}
    for r, i in enumerate(idx):
        nz, pm = observation_noise(observation_stream(cfg.seed, int(i)), B, layout)
        for role in noise:
            noise[role][r] = nz[role]
        for s in layout.paths:
            perm1[s][r], perm2[s][r] = pm[s]

    flat = lambda arr: arr.reshape(c * B, arr.shape[-1])
    z_rep = np.repeat(z_chunk, B, axis=0)
    m0 = fm.sample_mediators(0.0, z_rep, flat(noise["M0"])).reshape(c, B, -1)
    m1 = fm.sample_mediators(1.0, z_rep, flat(noise["M1"])).reshape(c, B, -1)

    out = {}

    def outcome(label, a, med, role):
        y = fy.sample_outcome(a, flat(med), z_rep, flat(noise[role])).reshape(c, B)
        if not np.all(np.isfinite(y)):
            r, b = np.argwhere(~np.isfinite(y))[0]
            raise SimulationError(f"non-finite outcome at i={int(idx[r])}, b={int(b)}, regime {label}")
        out[label] = y

    outcome(Y11, 1.0, m1, "Y11")
    outcome(Y00, 0.0, m0, "Y00")
    outcome(Y10, 1.0, m0, "Y10")
    for s in layout.paths:
        treated, control = build_hybrid_mediators(m0, m1, s, perm1[s], perm2[s])
        outcome(ipse_treated(s), 1.0, treated, f"Y(s={s},1)")
        outcome(ipse_control(s), 1.0, control, f"Y(s={s},0)")
    return out


def _covariates(data_or_z) -> np.ndarray:
    z = getattr(data_or_z, "z", data_or_z)
    z = np.asarray(z, dtype=np.float64)
    return z.reshape(z.shape[0], -1)


def forward_simulate(fm, fy, data_or_z, cfg: SimConfig, n_mediators: int | None = None,
                     provenance: dict | None = None, index_offset: int = 0,
                     ) -> dict[RegimeLabel, InterventionalSamples]:
    """Interventional outcome draws for every regime, one ``(n, B)`` matrix each.

    Observation ``i`` draws all of its randomness from a stream keyed by
    ``(cfg.seed, i)`` and observations are batched in fixed chunks, so the
    result does not depend on ``cfg.n_jobs``. ``index_offset`` shifts the
    observation keys so a large covariate set can be simulated block by block.
    """
    z = _covariates(data_or_z)
    n = z.shape[0]
    if n < 1:
        raise ArgumentError("no observations to simulate")
    if n_mediators is None:
        n_mediators = getattr(fm, "output_dim", None) or getattr(fm, "m_dim")
    paths = cfg.resolved_mediators(n_mediators)
    layout = NoiseLayout(fm.noise_dim, fy.noise_dim, paths)
    starts = list(range(0, n, CHUNK_OBS))
    job = lambda st: _simulate_chunk(fm, fy, z[st : st + CHUNK_OBS], index_offset + np.arange(st, min(st + CHUNK_OBS, n)),
                                     cfg, layout)
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as ex:
            parts = list(ex.map(job, starts))
    else:
        parts = [job(st) for st in starts]
    prov = {"seed": cfg.seed, "B": cfg.B, "n": n, **(provenance or {})}
    return {label: InterventionalSamples(label, np.concatenate([p[label] for p in parts], axis=0), dict(prov))
            for label in parts[0]}


def write_regimes_csv(samples: dict, path, max_draws: int | None = None) -> None:
    """Long-format dump ``regime,i,b,y``; ``max_draws`` keeps the first draws per observation."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["regime", "i", "b", "y"])
        for label in sorted(samples):
            draws = samples[label].draws
            nb = draws.shape[1] if max_draws is None else min(max_draws, draws.shape[1])
            for i in range(draws.shape[0]):
                for b in range(nb):
                    w.writerow([str(label), i, b, repr(float(draws[i, b]))])


def error_decomposition_diag(fm, fy, scenario, z, a: float, a_prime: float, n_mc: int,
                             stream: RngStream):
    """Monte Carlo estimates of ``(B, B1, B2)`` at one covariate value.

    ``B = ED(R_hat, R)``, ``B1 = ED(R_hat, R_med)``, ``B2 = ED(R_med, R)``, where
    ``R`` uses the scenario's true mechanisms and ``R_med`` runs the learned
    outcome model on the true mediator law.
    """
    from .scenarios import true_samplers

    if scenario.n_mediators != 1:
        raise UnsupportedDimensionError("error decomposition is only defined for a single mediator")
    true_fm, true_fy = true_samplers(scenario)
    z_rep = np.repeat(np.asarray(z, dtype=np.float64).reshape(1, -1), n_mc, axis=0)

    def interventional(med, out, tag):
        st = stream.split(tag)
        m = med.sample_mediators(a_prime, z_rep, st.split("m").generator.standard_normal((n_mc, med.noise_dim)))
        return out.sample_outcome(a, m, z_rep, st.split("y").generator.standard_normal((n_mc, out.noise_dim)))

    r_hat = interventional(fm, fy, "hat")
    r_true = interventional(true_fm, true_fy, "true")
    r_med = interventional(true_fm, fy, "med")
    return energy_distance(r_hat, r_true), energy_distance(r_hat, r_med), energy_distance(r_med, r_true)
