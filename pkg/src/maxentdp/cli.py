"""Command-line entry point: ``maxentdp {train,eval,bench-estimators,check-likelihood}``."""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import rng as rngmod
from .checkpoint import CheckpointError
from .checkpoint import load as load_checkpoint
from .envs import GaussianMixture, MixtureQ, QuadraticQ, StandardNormalNoise, standard_normal_logpdf
from .likelihood import log_prob
from .netcore import EMBED_DIM
from .networks import NoisePredictionNet
from .qne import estimator_std, idem_target, qne_target, qsm_target
from .sac import Trainer, TrainingError, train, write_csv, write_jsonl

log = logging.getLogger("maxentdp")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_TRAINING = 0, 2, 3, 4

BENCH_COLUMNS = ("estimator", "t", "K", "beta", "sample_std", "abs_error")
BENCH_POINT_COLUMNS = (
    "estimator", "t", "K", "beta", "point_id", "coord", "mean_estimate", "oracle_value", "abs_error", "sample_std",
)
LIKELIHOOD_COLUMNS = ("x", "y", "logprob_estimate", "oracle_logprob")


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    return out


def run_train(cfg: cfgmod.RunConfig, resume=None) -> Trainer:
    out = _prepare_out(cfg.out)
    (out / "config.toml").write_text(cfgmod.dumps(cfg))
    return train(cfg, out, resume=resume)


def _checkpoint_step(path: Path) -> int | None:
    m = re.search(r"checkpoint_(\d+)\.bin$", path.name)
    return int(m.group(1)) if m else None


def run_eval(cfg: cfgmod.RunConfig, checkpoint):
    """Re-run the evaluation a checkpoint was taken at; same seed gives the same rollouts."""
    out = _prepare_out(cfg.out)
    path = Path(checkpoint)
    tr = Trainer(cfg)
    tr.load_checkpoint(path)
    if not path.with_suffix(".resume.npz").exists():
        tr.step = _checkpoint_step(path) or 0
    res = tr.evaluate()
    tr._record_eval(res)
    write_csv(out / "eval.csv", list(tr.evals[0]), tr.evals)
    write_jsonl(out / "eval_trajectories.jsonl", res.trajectories)
    return res


def _bench_problem(b: cfgmod.BenchConfig, cfg: cfgmod.RunConfig):
    """The Q-function and a mixture whose noised score is the exact target (-sqrt(n) * score)."""
    if b.q == "quadratic":
        # exp(-c||a||^2 / beta) is N(0, beta / (2c) I); the action box truncates it negligibly
        oracle = GaussianMixture(np.zeros((1, 2)), float(np.sqrt(b.beta / (2.0 * b.quadratic_c))), np.ones(1))
        return QuadraticQ(b.quadratic_c), oracle
    mix = cfg.env.mixture()
    return MixtureQ(b.beta, mix), mix


def run_bench_estimators(cfg: cfgmod.RunConfig):
    """Spread and accuracy of each target estimator over the configured (estimator, t, K) sweep.

    ``estimators.csv`` has one row per cell; ``estimator_points.csv`` one row per
    (cell, probe point, coordinate).  The gradient-only estimator is deterministic,
    so its spread is measured across small perturbations of the probe points.
    """
    out = _prepare_out(cfg.out)
    b, sched = cfg.bench, cfg.noise_schedule
    bounds = (cfg.sampler.low, cfg.sampler.high)
    Q, oracle = _bench_problem(b, cfg)
    rows, point_rows = [], []
    for ti, t in enumerate(b.t):
        pts = rngmod.stream(cfg.seed, "estimator", ti).uniform(*bounds, size=(b.points, 2))
        exact = -np.sqrt(sched.noise_var(t)) * oracle.score(pts, t, sched)
        for est in b.estimators:
            for K in b.K:
                if est == "qne":
                    fn = lambda a, tt, r, K=K: qne_target(Q, None, a, tt, K, b.beta, bounds, r, sched)
                elif est == "idem":
                    fn = lambda a, tt, r, K=K: idem_target(Q, None, a, tt, K, b.beta, bounds, r, sched)
                else:
                    fn = lambda a, tt, r: qsm_target(Q, None, a + b.perturb_std * r.standard_normal(a.shape), tt, b.beta, sched)
                rng = rngmod.stream(cfg.seed, "estimator", ti, ESTIMATOR_INDEX[est], K)
                rep = estimator_std(fn, pts, t, b.repeats, rng, est, K, b.beta)
                err = np.abs(rep.mean - exact)
                rows.append({"estimator": est, "t": t, "K": K, "beta": b.beta, "sample_std": float(rep.std.mean()),
                             "abs_error": float(err.mean())})
                for p in range(b.points):
                    for c in range(2):
                        point_rows.append({"estimator": est, "t": t, "K": K, "beta": b.beta, "point_id": p, "coord": c,
                                           "mean_estimate": float(rep.mean[p, c]), "oracle_value": float(exact[p, c]),
                                           "abs_error": float(err[p, c]), "sample_std": float(rep.point_std[p, c])})
                log.info("%s t=%.3g K=%d std=%.4g err=%.4g", est, t, K, rows[-1]["sample_std"], rows[-1]["abs_error"])
    write_csv(out / "estimators.csv", BENCH_COLUMNS, rows)
    write_csv(out / "estimator_points.csv", BENCH_POINT_COLUMNS, point_rows)
    return rows


ESTIMATOR_INDEX = {name: i for i, name in enumerate(cfgmod.ESTIMATORS)}


def _net_from_checkpoint(path):
    nets, _ = load_checkpoint(path)
    if "actor" not in nets:
        raise CheckpointError("checkpoint has no actor network")
    mlp = nets["actor"]
    action_dim = mlp.out_dim
    return NoisePredictionNet(action_dim, mlp.in_dim - action_dim - EMBED_DIM, mlp=mlp)


def run_check_likelihood(cfg: cfgmod.RunConfig, checkpoint=None) -> list[dict]:
    """Estimated log-density at probe points.

    Without a checkpoint the exact standard-normal noise predictor is used and the
    oracle columns are filled; with one, the checkpoint's actor is evaluated (at
    the zero state if it is state-conditioned) and the oracle columns stay empty.
    """
    out = _prepare_out(cfg.out)
    c = cfg.check
    if c.grid > 0:
        g = np.linspace(c.low, c.high, c.grid)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
    else:
        pts = rngmod.stream(cfg.seed, "likelihood", 0).standard_normal((c.points, 2))
    if checkpoint is None:
        net, oracle = StandardNormalNoise(cfg.noise_schedule, 2), standard_normal_logpdf(pts)
    else:
        net, oracle = _net_from_checkpoint(checkpoint), None
    s = np.zeros(net.state_dim) if net.state_dim else None
    est = log_prob(net, s, pts, cfg.likelihood, rngmod.stream(cfg.seed, "likelihood", 1), cfg.noise_schedule).value
    rows = []
    for i, p in enumerate(pts):
        row = {"x": float(p[0]), "y": float(p[1]), "logprob_estimate": float(est[i])}
        if oracle is not None:
            row["oracle_logprob"] = float(oracle[i])
        rows.append(row)
    write_csv(out / "likelihood.csv", LIKELIHOOD_COLUMNS, rows)
    if oracle is not None:
        log.info("mean absolute error %.4f nats over %d points", np.mean(np.abs(est - oracle)), len(pts))
    return rows


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maxentdp", description="Max-entropy RL with a diffusion policy.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("train", "train an agent (or the static mixture policy)"),
        ("eval", "evaluate a checkpoint"),
        ("bench-estimators", "target-noise spread of the QNE and gradient-based estimators"),
        ("check-likelihood", "log-probability estimates against the exact density"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", type=str, help="output directory (overrides the config)")
        if name == "train":
            sp.add_argument("--resume", type=Path, help="checkpoint to continue from")
        if name in ("eval", "check-likelihood"):
            sp.add_argument("--checkpoint", type=Path, required=name == "eval", help="checkpoint file")
    return p


def _setup_logging():
    level = os.environ.get("MAXENTDP_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.parse_config(args.config) if args.config else cfgmod.RunConfig()
        if args.seed is not None:
            if args.seed < 0:
                raise cfgmod.ConfigError("seed", "must be non-negative")
            cfg = cfg.replace(seed=args.seed)
        if args.out is not None:
            cfg = cfg.replace(out=args.out)
    except (cfgmod.ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "train":
            run_train(cfg, args.resume)
        elif args.command == "eval":
            res = run_eval(cfg, args.checkpoint)
            print(f"step {res.step}: mean return {res.mean_return:.4f}")
        elif args.command == "bench-estimators":
            run_bench_estimators(cfg)
        else:
            run_check_likelihood(cfg, args.checkpoint)
    except TrainingError as e:
        print(f"training aborted: {e} {e.diagnostics}", file=sys.stderr)
        return EXIT_TRAINING
    except (OSError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
