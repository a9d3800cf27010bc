"""Noise-driven conditional generators trained with the energy score.

Two roles exist: ``mediator`` maps ``(a, z, eps)`` to the mediator vector and
``outcome`` maps ``(a, z, m, eps)`` to the scalar outcome. Networks operate in
standardized units; ``generate`` and the ``sample_*`` methods return draws in
original units. The treatment enters raw as 0/1.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FitError, ShapeError, TrainingError
from .numcore import AdamState, MlpParams, RngStream, _forward_trace, adam_step, init_mlp, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

ROLES = ("mediator", "outcome")


@dataclass
class Dataset:
    """Observed sample ``(A, Z, M, Y)``; ``z`` and ``m`` are 2-D."""

    a: np.ndarray
    z: np.ndarray
    m: np.ndarray
    y: np.ndarray
    a_name: str = "A"
    z_names: tuple[str, ...] = ()
    m_names: tuple[str, ...] = ()
    y_name: str = "Y"

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        n = self.a.shape[0]
        if n < 1:
            raise DataError("empty dataset")
        self.z = np.asarray(self.z, dtype=np.float64).reshape(n, -1)
        self.m = np.asarray(self.m, dtype=np.float64).reshape(n, -1)
        if self.y.shape[0] != n:
            raise DataError(f"outcome has {self.y.shape[0]} rows, treatment has {n}")
        if self.m.shape[1] < 1:
            raise DataError("at least one mediator is required")
        if not np.all((self.a == 0.0) | (self.a == 1.0)):
            bad = np.flatnonzero((self.a != 0.0) & (self.a != 1.0))[:5]
            raise DataError(f"treatment must be binary 0/1; offending rows {bad.tolist()}")
        for name, arr in (("Z", self.z), ("M", self.m), ("Y", self.y)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        if not self.z_names:
            self.z_names = tuple(f"Z{j + 1}" for j in range(self.z.shape[1]))
        if not self.m_names:
            self.m_names = tuple(f"M{j + 1}" for j in range(self.m.shape[1]))
        self.z_names = tuple(self.z_names)
        self.m_names = tuple(self.m_names)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def n_mediators(self) -> int:
        return self.m.shape[1]

    def take(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.a[idx], self.z[idx], self.m[idx], self.y[idx],
                       self.a_name, self.z_names, self.m_names, self.y_name)


@dataclass
class StandardizationParams:
    z_mean: np.ndarray
    z_sd: np.ndarray
    m_mean: np.ndarray
    m_sd: np.ndarray
    y_mean: float
    y_sd: float

    def to_dict(self) -> dict:
        return {k: np.asarray(v, dtype=np.float64).tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> StandardizationParams:
        return cls(np.asarray(d["z_mean"], dtype=np.float64), np.asarray(d["z_sd"], dtype=np.float64),
                   np.asarray(d["m_mean"], dtype=np.float64), np.asarray(d["m_sd"], dtype=np.float64),
                   float(d["y_mean"]), float(d["y_sd"]))

    def z(self, z):
        return (z - self.z_mean) / self.z_sd

    def m(self, m):
        return (m - self.m_mean) / self.m_sd

    def m_inv(self, m_std):
        return m_std * self.m_sd + self.m_mean

    def y(self, y):
        return (y - self.y_mean) / self.y_sd

    def y_inv(self, y_std):
        return y_std * self.y_sd + self.y_mean


def fit_standardization(data: Dataset) -> StandardizationParams:
    """Column means and population standard deviations of Z, M and Y."""
    if data.n < 2:
        raise ConfigError("standardization needs at least two rows")

    def stats(arr, names):
        mean = arr.mean(axis=0)
        sd = arr.std(axis=0)
        for j, s in enumerate(np.atleast_1d(sd)):
            if not s > 0:
                raise ConfigError(f"column {names[j]!r} has zero variance")
        return mean, sd

    z_mean, z_sd = stats(data.z, data.z_names)
    m_mean, m_sd = stats(data.m, data.m_names)
    y_mean, y_sd = stats(data.y[:, None], (data.y_name,))
    return StandardizationParams(z_mean, z_sd, m_mean, m_sd, float(y_mean[0]), float(y_sd[0]))


def identity_standardization(data: Dataset) -> StandardizationParams:
    """No-op scaling, for models fitted in original units."""
    z, s = data.z.shape[1], data.n_mediators
    return StandardizationParams(np.zeros(z), np.ones(z), np.zeros(s), np.ones(s), 0.0, 1.0)


@dataclass
class TrainConfig:
    k: int = 10
    epochs: int = 500
    batch_size: int = 256
    lr: float = 1e-3
    val_fraction: float = 0.2
    patience: int = 20
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    extra_noise_dims: int = 2
    standardize: bool = True  # False models original units (needed for constant columns)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.k < 2:
            raise ConfigError("k: at least two noise draws per observation are required")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError("val_fraction: must lie in (0, 0.5]")
        if self.batch_size < 2:
            raise ConfigError("batch_size: must be >= 2")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr: must be positive")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden: need at least one positive layer width")
        if self.extra_noise_dims < 0:
            raise ConfigError("extra_noise_dims: must be >= 0")


@dataclass
class GeneratorModel:
    role: str
    params: MlpParams
    noise_dim: int
    z_dim: int
    m_dim: int
    standardization: StandardizationParams
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ShapeError(f"unknown role {self.role!r}")
        if self.params.in_dim != self.input_width:
            raise ShapeError(f"network input width {self.params.in_dim} != layout width {self.input_width}")
        if self.params.out_dim != self.output_dim:
            raise ShapeError(f"network output width {self.params.out_dim} != {self.output_dim}")

    @property
    def cond_width(self) -> int:
        return 1 + self.z_dim + (self.m_dim if self.role == "outcome" else 0)

    @property
    def input_width(self) -> int:
        return self.cond_width + self.noise_dim

    @property
    def output_dim(self) -> int:
        return self.m_dim if self.role == "mediator" else 1

    @property
    def layout(self) -> dict:
        cols = ["a"] + [f"z{j}" for j in range(self.z_dim)]
        if self.role == "outcome":
            cols += [f"m{j}" for j in range(self.m_dim)]
        cols += [f"eps{j}" for j in range(self.noise_dim)]
        return {"role": self.role, "columns": cols, "output_dim": self.output_dim}

    def _condition(self, a, z, m=None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(-1, self.z_dim)
        n = z.shape[0]
        a = np.broadcast_to(np.asarray(a, dtype=np.float64).reshape(-1), (n,))
        parts = [a[:, None], self.standardization.z(z)]
        if self.role == "outcome":
            if m is None:
                raise ShapeError("outcome generator needs mediator values")
            m = np.asarray(m, dtype=np.float64).reshape(n, self.m_dim)
            parts.append(self.standardization.m(m))
        elif m is not None:
            raise ShapeError("mediator generator does not take mediator values")
        return np.concatenate(parts, axis=1)

    def _run(self, cond, eps) -> np.ndarray:
        eps = np.asarray(eps, dtype=np.float64)
        if eps.shape != (cond.shape[0], self.noise_dim):
            raise ShapeError(f"noise shape {eps.shape} != {(cond.shape[0], self.noise_dim)}")
        return mlp_forward(self.params, np.concatenate([cond, eps], axis=1))

    def sample_mediators(self, a, z, eps) -> np.ndarray:
        if self.role != "mediator":
            raise ShapeError("not a mediator generator")
        return self.standardization.m_inv(self._run(self._condition(a, z), eps))

    def sample_outcome(self, a, m, z, eps) -> np.ndarray:
        if self.role != "outcome":
            raise ShapeError("not an outcome generator")
        return self.standardization.y_inv(self._run(self._condition(a, z, m), eps)[:, 0])


def _design(data: Dataset, role: str, std: StandardizationParams):
    parts = [data.a[:, None], std.z(data.z)]
    if role == "outcome":
        parts.append(std.m(data.m))
        target = std.y(data.y)[:, None]
    else:
        target = std.m(data.m)
    return np.concatenate(parts, axis=1), target


def es_loss_arrays(params: MlpParams, cond: np.ndarray, target: np.ndarray, noise: np.ndarray,
                   with_grad: bool = True):
    """Negative mean Monte Carlo energy score and its parameter gradient.

    ``cond`` is ``(n, p)``, ``target`` is ``(n, d)`` and ``noise`` is
    ``(n, K, q)``; the network sees ``[cond, noise]`` rows.
    """
    n, k, q = noise.shape
    d = target.shape[1]
    x = np.concatenate([np.repeat(cond, k, axis=0), noise.reshape(n * k, q)], axis=1)
    inputs, out = _forward_trace(params, x)
    u = out.reshape(n, k, d)
    pair = u[:, :, None, :] - u[:, None, :, :]
    obs = u - target[:, None, :]
    if d == 1:
        pair_dist = np.abs(pair[..., 0])
        obs_dist = np.abs(obs[..., 0])
    else:
        pair_dist = np.sqrt(np.einsum("nijd,nijd->nij", pair, pair))
        obs_dist = np.sqrt(np.einsum("nkd,nkd->nk", obs, obs))
    es = pair_dist.sum(axis=(1, 2)) / (2.0 * k * (k - 1)) - obs_dist.mean(axis=1)
    loss = -float(es.mean())
    if not np.isfinite(loss):
        raise TrainingError("non-finite energy-score loss")
    if not with_grad:
        return loss, None
    if d == 1:
        unit_pair = np.sign(pair)
        unit_obs = np.sign(obs)
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            unit_pair = np.where(pair_dist[..., None] > 0, pair / pair_dist[..., None], 0.0)
            unit_obs = np.where(obs_dist[..., None] > 0, obs / obs_dist[..., None], 0.0)
    du = unit_obs / k - unit_pair.sum(axis=2) / (k * (k - 1))
    du /= n
    grads = mlp_backward(params, x, du.reshape(n * k, d), trace=inputs)
    return loss, grads


def es_loss_batch(model: GeneratorModel, batch: Dataset, k: int, stream: RngStream):
    """Energy-score loss of ``model`` on a data slice, in standardized units."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    cond, target = _design(batch, model.role, model.standardization)
    noise = stream.generator.standard_normal((batch.n, k, model.noise_dim))
    return es_loss_arrays(model.params, cond, target, noise)


def split_indices(n: int, val_fraction: float, stream: RngStream):
    n_val = int(round(n * val_fraction))
    if n_val < 2 or n - n_val < 2:
        raise ConfigError(f"n={n} is too small for a validation fraction of {val_fraction}")
    perm = stream.generator.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def fit_pipeline_standardization(data: Dataset, cfg: TrainConfig) -> StandardizationParams:
    if not cfg.standardize:
        return identity_standardization(data)
    train_idx, _ = split_indices(data.n, cfg.val_fraction, RngStream(cfg.seed).split("split"))
    return fit_standardization(data.take(train_idx))


def train_generator(data: Dataset, role: str, cfg: TrainConfig,
                    standardization: StandardizationParams | None = None) -> GeneratorModel:
    """Minibatch Adam on the energy-score loss with validation early stopping.

    The train/validation split and the standardization depend only on
    ``cfg.seed``, so both roles trained with one config share them.
    """
    if role not in ROLES:
        raise ConfigError(f"unknown role {role!r}")
    root = RngStream(cfg.seed)
    train_idx, val_idx = split_indices(data.n, cfg.val_fraction, root.split("split"))
    if standardization is not None:
        std = standardization
    elif cfg.standardize:
        std = fit_standardization(data.take(train_idx))
    else:
        std = identity_standardization(data)
    cond, target = _design(data, role, std)
    c_tr, t_tr = cond[train_idx], target[train_idx]
    c_va, t_va = cond[val_idx], target[val_idx]
    out_dim = target.shape[1]
    q = out_dim + cfg.extra_noise_dims
    stream = root.split(role)
    params = init_mlp([cond.shape[1] + q, *cfg.hidden, out_dim], stream.split("init"))
    opt = AdamState.for_params(params, lr=cfg.lr)
    val_noise = stream.split("val").generator.standard_normal((len(val_idx), cfg.k, q))

    best_loss, best_params, best_epoch, stale = np.inf, params.copy(), -1, 0
    n_tr = len(train_idx)
    bs = min(cfg.batch_size, n_tr)
    history = []
    epoch = -1
    for epoch in range(cfg.epochs):
        gen = stream.split("epoch").split(epoch).generator
        perm = gen.permutation(n_tr)
        for start in range(0, n_tr - bs + 1, bs):
            idx = perm[start : start + bs]
            noise = gen.standard_normal((bs, cfg.k, q))
            try:
                _, grads = es_loss_arrays(params, c_tr[idx], t_tr[idx], noise)
                adam_step(params, grads, opt)
            except TrainingError as exc:
                raise TrainingError(f"{role} generator, epoch {epoch}, batch {start // bs}: {exc}") from exc
        val_loss, _ = es_loss_arrays(params, c_va, t_va, val_noise, with_grad=False)
        history.append(val_loss)
        if val_loss < best_loss - 1e-12:
            best_loss, best_params, best_epoch, stale = val_loss, params.copy(), epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    log.debug("%s generator: best val loss %.5f at epoch %d", role, best_loss, best_epoch)
    meta = {"epochs_run": epoch + 1, "best_epoch": best_epoch, "val_loss": float(best_loss),
            "seed": cfg.seed, "k": cfg.k}
    return GeneratorModel(role, best_params, q, data.z.shape[1], data.m.shape[1], std, meta)


def generate(model: GeneratorModel, a: float, z, m=None, n_draws: int = 1,
             stream: RngStream | None = None) -> np.ndarray:
    """``n_draws`` conditional samples at a single ``(a, z[, m])``, original units."""
    if (m is None) != (model.role == "mediator"):
        raise ShapeError("mediator values must be given exactly when sampling the outcome")
    if n_draws == 0:
        return np.empty((0, model.output_dim))
    stream = stream or RngStream(0)
    eps = stream.generator.standard_normal((n_draws, model.noise_dim))
    z_rep = np.repeat(np.asarray(z, dtype=np.float64).reshape(1, model.z_dim), n_draws, axis=0)
    if model.role == "mediator":
        return model.sample_mediators(a, z_rep, eps)
    m_rep = np.repeat(np.asarray(m, dtype=np.float64).reshape(1, model.m_dim), n_draws, axis=0)
    return model.sample_outcome(a, m_rep, z_rep, eps)[:, None]


@dataclass
class LinearGaussianModel:
    """OLS outcome model ``y = [1, a, m, z] @ coef + sd * N(0, 1)``."""

    intercept: float
    coef: np.ndarray
    sd: float
    m_dim: int
    z_dim: int
    noise_dim: int = 1

    def sample_outcome(self, a, m, z, eps) -> np.ndarray:
        m = np.asarray(m, dtype=np.float64).reshape(-1, self.m_dim)
        n = m.shape[0]
        z = np.asarray(z, dtype=np.float64).reshape(n, self.z_dim)
        a = np.broadcast_to(np.asarray(a, dtype=np.float64).reshape(-1), (n,))
        x = np.column_stack([a, m, z])
        eps = np.asarray(eps, dtype=np.float64).reshape(n, -1)[:, 0]
        return self.intercept + x @ self.coef + self.sd * eps


def fit_linear_gaussian(data: Dataset) -> LinearGaussianModel:
    x = np.column_stack([np.ones(data.n), data.a, data.m, data.z])
    n, p = x.shape
    if n <= p or np.linalg.matrix_rank(x) < p:
        raise FitError("design matrix (1, A, M, Z) is rank deficient")
    beta, *_ = np.linalg.lstsq(x, data.y, rcond=None)
    resid = data.y - x @ beta
    sd = float(np.sqrt(resid @ resid / (n - p)))
    return LinearGaussianModel(float(beta[0]), beta[1:].copy(), sd, data.m.shape[1], data.z.shape[1])


CHECKPOINT_FORMAT = "dcma-generator/1"


def save_checkpoint(model: GeneratorModel, path) -> None:
    """Write an ``.npz`` checkpoint: float64 arrays plus a JSON header."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "role": model.role,
        "noise_dim": model.noise_dim,
        "z_dim": model.z_dim,
        "m_dim": model.m_dim,
        "activation": model.params.activation,
        "n_layers": len(model.params.weights),
        "layout": model.layout,
        "meta": model.meta,
    }
    arrays = {name: a for name, a in model.params.arrays()}
    for k, v in asdict(model.standardization).items():
        arrays[f"std.{k}"] = np.asarray(v, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)), **arrays)


def load_checkpoint(path) -> GeneratorModel:
    with np.load(Path(path), allow_pickle=False) as f:
        header = json.loads(str(f["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unrecognised checkpoint format {header.get('format')!r}")
        weights = [f[f"layers.{i}.weight"].copy() for i in range(header["n_layers"])]
        biases = [f[f"layers.{i}.bias"].copy() for i in range(header["n_layers"])]
        std = StandardizationParams(
            f["std.z_mean"].copy(), f["std.z_sd"].copy(), f["std.m_mean"].copy(), f["std.m_sd"].copy(),
            float(f["std.y_mean"]), float(f["std.y_sd"]),
        )
    params = MlpParams(weights, biases, header["activation"])
    return GeneratorModel(header["role"], params, header["noise_dim"], header["z_dim"],
                          header["m_dim"], std, header["meta"])
