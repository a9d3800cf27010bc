"""Command-line entry point: ``dcma {simulate,estimate,oracle,ablation}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from .config import PROFILES, RunConfig, resolve_config
from .dataio import read_csv_dataset, write_csv_dataset
from .errors import ConfigError, DataError
from .estimands import (
    PipelineConfig,
    bootstrap_effects,
    estimate_effects,
    format_effect_table,
    write_effects_csv,
    write_effects_json,
)
from .genmodel import save_checkpoint
from .scenarios import generate_scenario, oracle_truth, run_replication_study
from .simulate import write_regimes_csv

log = logging.getLogger("dcma")

LOCK_NAME = ".dcma.lock"


@contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out} is locked by another run (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _pipeline(cfg: RunConfig) -> PipelineConfig:
    return PipelineConfig(cfg.train, cfg.sim, cfg.functionals)


def _run_meta(cfg: RunConfig) -> dict:
    return {"seed": cfg.seed, "B": cfg.sim.B, "k": cfg.train.k, "profile": cfg.profile}


def _write_effects(out: Path, effects, cfg: RunConfig, extra: dict | None = None):
    meta = {**_run_meta(cfg), **(extra or {})}
    write_effects_json(out / "effects.json", effects, meta)
    write_effects_csv(out / "effects.csv", effects)
    print(format_effect_table(effects))


def _oracle(cfg: RunConfig):
    funcs = tuple(f for f in cfg.functionals)
    return oracle_truth(cfg.scenario, cfg.oracle.n_oracle, cfg.oracle.B_oracle, funcs, seed=cfg.seed)


def cmd_simulate(cfg: RunConfig) -> None:
    if cfg.scenario is None:
        raise ConfigError("simulate needs a scenario data source")
    out = Path(cfg.out)
    data = generate_scenario(cfg.scenario)
    write_csv_dataset(out / "data.csv", data)
    effects, samples, (fm, fy) = estimate_effects(data, _pipeline(cfg))
    save_checkpoint(fm, out / "fm.ckpt")
    save_checkpoint(fy, out / "fy.ckpt")
    _write_effects(out, effects, cfg, {"scenario": cfg.scenario.id, "n": data.n})
    write_regimes_csv(samples, out / "regimes.csv", cfg.output.regime_draws_per_obs)
    if cfg.reps > 1:
        truth = _oracle(cfg)
        (out / "oracle.json").write_text(truth.to_json())
        study = run_replication_study(cfg.scenario, "dcma_es", cfg.reps, _pipeline(cfg), truth)
        study.write_csv(out / "bias_rmse.csv")
        (out / "study.json").write_text(study.to_json())


def cmd_estimate(cfg: RunConfig) -> None:
    if cfg.csv is None:
        raise ConfigError("estimate needs a csv data source")
    out = Path(cfg.out)
    src = cfg.csv
    data = read_csv_dataset(src.path, src.treatment, src.mediators, src.outcome, src.covariates)
    effects, samples, (fm, fy) = estimate_effects(data, _pipeline(cfg))
    save_checkpoint(fm, out / "fm.ckpt")
    save_checkpoint(fy, out / "fy.ckpt")
    write_regimes_csv(samples, out / "regimes.csv", cfg.output.regime_draws_per_obs)
    if cfg.bootstrap is not None:
        effects = bootstrap_effects(data, _pipeline(cfg), cfg.bootstrap)
    _write_effects(out, effects, cfg, {"source": Path(src.path).name, "n": data.n})


def cmd_oracle(cfg: RunConfig) -> None:
    if cfg.scenario is None:
        raise ConfigError("oracle requires a known data-generating mechanism (scenario source)")
    truth = _oracle(cfg)
    Path(cfg.out, "oracle.json").write_text(truth.to_json())
    for e in truth.effects:
        if not e.is_curve:
            print(f"{e.effect}\t{e.functional.label}\t{e.point:.4f}")


def cmd_ablation(cfg: RunConfig) -> None:
    if cfg.scenario is None:
        raise ConfigError("ablation needs a scenario data source")
    out = Path(cfg.out)
    truth = _oracle(cfg)
    study = run_replication_study(cfg.scenario, cfg.methods, cfg.reps, _pipeline(cfg), truth)
    study.write_csv(out / "bias_rmse.csv")
    study.write_regime_ed_csv(out / "regime_ed.csv")
    summary = {m: study.mean_regime_ed(m) for m in cfg.methods}
    (out / "ablation.json").write_text(json.dumps({"mean_regime_ed": summary, "meta": study.meta},
                                                  indent=2, sort_keys=True) + "\n")
    for m, eds in summary.items():
        print(m, " ".join(f"{k}={v:.4f}" for k, v in eds.items()))


COMMAND_FUNCS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "oracle": cmd_oracle,
                 "ablation": cmd_ablation}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcma", description="Distributional causal mediation analysis")
    p.add_argument("command", choices=sorted(COMMAND_FUNCS))
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_dict = {}
        if args.config is not None:
            try:
                file_dict = json.loads(args.config.read_text())
            except FileNotFoundError:
                raise ConfigError(f"config file {args.config} not found") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        overrides = {k: v for k, v in (("seed", args.seed), ("out", args.out), ("reps", args.reps))
                     if v is not None}
        cfg = resolve_config(args.command, file_dict, args.profile, overrides)
        with _locked(Path(cfg.out)) as out:
            (out / "resolved_config.json").write_text(cfg.to_json())
            COMMAND_FUNCS[args.command](cfg)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 1
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
