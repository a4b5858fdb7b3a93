"""Command-line entry points: train, prune, eval, gen-bas.

Config precedence: built-in defaults < config file (--config, JSON or TOML)
< environment variables (prefix RBMPRUNE_, e.g. RBMPRUNE_SEED=7) < flags.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure (non-finite parameter detected).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import core, data, objective, persist, pruning, sampling

ENV_PREFIX = "RBMPRUNE_"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class NumericalFailure(RuntimeError):
    """A parameter became non-finite during a run."""


@dataclass
class RunConfig:
    data: str = "bas:3"
    hidden: int = 30
    lr: float = 1e-2
    nu: float = 1e-2
    a: float = 3.0
    batch: int = 100
    pcd: int = 5
    beta1: float = 0.9
    temper_steps: int = 100
    ais_samples: int = 100
    ais_intervals: int = 10_000
    steps: int = 1000
    eval_every: int = 1000
    ckpt_every: int = 0
    seed: int = 0
    out: str = "."

    def config_hash(self) -> str:
        payload = json.dumps(self.__dict__, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


# per-dataset defaults from the experimental protocols
_BAS_TRAIN = {"batch": 100, "pcd": 5, "a": 3.0}
_BAS_PRUNE = {"batch": 1000, "pcd": 5, "a": 3.0}
_IDX_DEFAULTS = {"batch": 1000, "pcd": 1, "a": 1.0}


def _parse_dataset(spec: str, rng):
    """Return (kind, draw_batch, n_visible, exact_q_or_None, dataset_or_None)."""
    if spec.startswith("bas:"):
        side = int(spec.split(":", 1)[1])
        bas = data.BasSpec(side)
        q = data.bas_exact_distribution(bas) if bas.n_visible <= core.MAX_ENUM_VISIBLE else None

        def draw(r, size):
            return data.bas_batch(bas, r, size)

        return "bas", draw, bas.n_visible, q, None
    if spec.startswith("idx:"):
        path = spec.split(":", 1)[1]
        ds = data.load_idx(path)
        ds = data.binarize_stochastic(ds, rng)
        q = None
        if ds.n_visible <= core.MAX_ENUM_VISIBLE:
            q = core.DiscreteDistribution.from_samples(ds.items, ds.n_visible)
        return "idx", ds.sample, ds.n_visible, q, ds
    raise argparse.ArgumentTypeError(f"unrecognized dataset spec {spec!r} (use bas:A or idx:PATH)")


def _run_guarded(fn, *args, **kwargs):
    """Surface mid-run non-finite blowups as numerical failures (exit 3)."""
    try:
        return fn(*args, **kwargs)
    except ValueError as exc:
        if "non-finite" in str(exc):
            raise NumericalFailure(str(exc)) from exc
        raise


def _guard_finite(params):
    for arr in (params.visible_bias, params.hidden_bias, params.weights):
        if not np.all(np.isfinite(arr)):
            raise NumericalFailure("non-finite model parameter")
    return params


def _pool_snapshot(pool):
    return persist.PoolSnapshot(
        V=pool.V.astype(np.uint8),
        H=pool.H.astype(np.uint8),
        clamp=pool.clamp,
        rng_state=pool.rng.bit_generator.state,
    )


def _restore_pool(params, snap):
    pool = sampling.ChainPool(params, snap.V.shape[0], 0, clamp=snap.clamp)
    pool.V = snap.V.astype(np.float64)
    pool.H = snap.H.astype(np.float64)
    pool.rng = persist.generator_from_state(snap.rng_state)
    return pool


def train_run(cfg: RunConfig):
    """PCD gradient-descent training; returns (params, metrics path, ckpt path)."""
    os.makedirs(cfg.out, exist_ok=True)
    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    kind, draw, m, q, _ = _parse_dataset(cfg.data, data_rng)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7121]))
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1217]))
    params = core.RbmParams(
        np.zeros(m), np.zeros(cfg.hidden),
        0.01 * init_rng.standard_normal((m, cfg.hidden)),
    )
    pool = sampling.ChainPool(params, cfg.batch, cfg.seed + 1)

    metrics_path = os.path.join(cfg.out, "train_metrics.jsonl")
    ckpt_path = os.path.join(cfg.out, "train_checkpoint.rbmp")
    if os.path.exists(metrics_path):
        os.unlink(metrics_path)
    persist.append_metrics(metrics_path, {"config": cfg.__dict__, "phase": "train"})

    def log_metrics(step, params):
        rec = {"step": step, "phase": "train", "n_hidden": params.n_hidden}
        if q is not None and m <= core.MAX_ENUM_VISIBLE:
            rec["exact_kld"] = objective.exact_kld(q, params)
        rec["reconstruction_error"] = objective.reconstruction_error(draw(rng, cfg.batch), params)
        persist.append_metrics(metrics_path, rec)

    for step in range(cfg.steps):
        batch = draw(rng, cfg.batch)
        pool.advance(params, cfg.pcd)
        stats = objective.stochastic_kld_gradient(batch, pool, params)
        params = _guard_finite(_run_guarded(objective.learning_step, params, stats.mean, cfg.lr))
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            log_metrics(step + 1, params)

    ckpt = persist.Checkpoint(
        visible_bias=params.visible_bias,
        hidden_bias=params.hidden_bias,
        weights=params.weights,
        rng_state=rng.bit_generator.state,
        pools=[_pool_snapshot(pool)],
        meta={"phase": "train", "steps": cfg.steps, "config_hash": cfg.config_hash(),
              "data": cfg.data, "seed": cfg.seed},
    )
    persist.save_checkpoint(ckpt_path, ckpt)
    return params, metrics_path, ckpt_path


def prune_run_cmd(cfg: RunConfig, checkpoint_path, resume=False):
    """Algorithm-1 removal loop starting from a trained checkpoint."""
    os.makedirs(cfg.out, exist_ok=True)
    ckpt = persist.load_checkpoint(checkpoint_path)
    params = core.RbmParams(ckpt.visible_bias, ckpt.hidden_bias, ckpt.weights)
    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    kind, draw, m, q, _ = _parse_dataset(cfg.data, data_rng)

    start_step = 0
    unit_ids = None
    if resume:
        if ckpt.meta.get("phase") != "prune":
            raise persist.CheckpointError("can only resume from a prune checkpoint")
        start_step = ckpt.meta["steps"]
        unit_ids = list(ckpt.meta["unit_ids"])
        rng = persist.generator_from_state(ckpt.rng_state)
        pool = _restore_pool(params, ckpt.pools[0])
        clamped = _restore_pool(params, ckpt.pools[1])
    else:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9243]))
        if ckpt.pools and ckpt.pools[0].V.shape[0] == cfg.batch:
            pool = _restore_pool(params, ckpt.pools[0])
        else:
            # batch size differs from the training pool: fresh chains
            pool = sampling.ChainPool(params, cfg.batch, cfg.seed + 2)
            pool.advance(params, 50)
        clamped = sampling.ChainPool(params, cfg.batch, cfg.seed + 3)
        clamped.reseed_from(pool)

    pcfg = pruning.PruneConfig(
        a=cfg.a, nu=cfg.nu, samples_per_step=cfg.batch, pcd_steps=cfg.pcd,
        tempered=sampling.TemperedSchedule(cfg.beta1, cfg.temper_steps),
        max_steps=cfg.steps, rng_seed=cfg.seed,
    )

    metrics_path = os.path.join(cfg.out, "prune_metrics.jsonl")
    ckpt_path = os.path.join(cfg.out, "prune_checkpoint.rbmp")
    if not resume and os.path.exists(metrics_path):
        os.unlink(metrics_path)
    persist.append_metrics(metrics_path, {"config": cfg.__dict__, "phase": "prune",
                                          "start_step": start_step})

    def eval_hook(step, params):
        if not cfg.eval_every or (step + 1) % cfg.eval_every != 0:
            return None
        # seeded per step so a resumed run logs the same eval values
        eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE7A1, step]))
        rec = {"n_hidden": params.n_hidden}
        if q is not None and m <= core.MAX_ENUM_VISIBLE:
            rec["exact_kld"] = objective.exact_kld(q, params)
        rec["reconstruction_error"] = objective.reconstruction_error(
            draw(eval_rng, min(cfg.batch, 256)), params)
        # append as the run goes so long runs stay observable
        persist.append_metrics(metrics_path, {"phase": "prune", "step": step, **rec})
        return None

    def save_state(step, params, pool, clamped, rng, unit_ids):
        persist.save_checkpoint(ckpt_path, persist.Checkpoint(
            visible_bias=params.visible_bias,
            hidden_bias=params.hidden_bias,
            weights=params.weights,
            rng_state=rng.bit_generator.state,
            pools=[_pool_snapshot(pool), _pool_snapshot(clamped)],
            meta={"phase": "prune", "steps": step + 1, "unit_ids": list(unit_ids),
                  "config_hash": cfg.config_hash(), "data": cfg.data, "seed": cfg.seed},
        ))

    def checkpoint_hook(step, params, pool, clamped, rng, unit_ids):
        if cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            save_state(step, params, pool, clamped, rng, unit_ids)

    params, trace = _run_guarded(
        pruning.prune_run,
        params, draw, pcfg, pool, clamped, rng=rng, unit_ids=unit_ids,
        eval_hook=eval_hook, checkpoint_hook=checkpoint_hook, start_step=start_step,
    )
    _guard_finite(params)

    for rec in trace.removals:
        persist.append_metrics(metrics_path, {"phase": "prune", "event": "removal", **rec})
    for note in trace.notes:
        persist.append_metrics(metrics_path, {"phase": "prune", "note": note})
    # full per-step trace; subsampled for very long runs to keep files sane
    trace_path = os.path.join(cfg.out, "prune_trace.jsonl")
    if not resume and os.path.exists(trace_path):
        os.unlink(trace_path)
    stride = 1 if trace.steps_run <= 20_000 else 100
    persist.append_metrics_many(
        trace_path,
        (rec for i, rec in enumerate(trace.records()) if i % stride == 0),
    )
    save_state(start_step + max(trace.steps_run, 1) - 1, params, pool, clamped, rng,
               trace.unit_ids)
    return params, trace, metrics_path, ckpt_path


def eval_run(checkpoint_path, dataset_spec, mode, cfg: RunConfig):
    ckpt = persist.load_checkpoint(checkpoint_path)
    params = core.RbmParams(ckpt.visible_bias, ckpt.hidden_bias, ckpt.weights)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE7A1]))
    kind, draw, m, q, ds = _parse_dataset(dataset_spec, rng)
    report = {"mode": mode, "m": m, "n_hidden": params.n_hidden}
    if mode == "exact":
        if m > core.MAX_ENUM_VISIBLE:
            raise ValueError(f"exact mode needs M <= {core.MAX_ENUM_VISIBLE}, model has {m}")
        if q is None:
            raise ValueError("exact mode needs an enumerable data distribution")
        report["exact_kld"] = objective.exact_kld(q, params)
        report["exact_log_partition"] = core.exact_log_partition(params)
    elif mode == "ais":
        ais_cfg = sampling.AisConfig(cfg.ais_samples, cfg.ais_intervals, cfg.seed)
        ln_z, ln_z_std = sampling.ais_log_partition(params, ais_cfg)
        q_d = q if q is not None else draw(rng, min(10_000, cfg.batch * 10))
        dt, nll = objective.d_tilde(q_d, params, ln_z)
        report.update(ln_z=ln_z, ln_z_std=ln_z_std, d_tilde=dt, nll=nll)
    elif mode == "recon":
        report["reconstruction_error"] = objective.reconstruction_error(
            draw(rng, cfg.batch), params)
    else:
        raise ValueError(f"unknown eval mode {mode!r}")
    return report


def gen_bas(side, count, out, seed):
    os.makedirs(out, exist_ok=True)
    spec = data.BasSpec(side)
    rng = np.random.default_rng(seed)
    samples = data.bas_batch(spec, rng, count)
    sample_path = os.path.join(out, f"bas{side}_samples.idx")
    data.write_idx(sample_path, (samples * 255).astype(np.uint8), side, side)
    dist_path = None
    if spec.n_visible <= core.MAX_ENUM_VISIBLE:
        q = data.bas_exact_distribution(spec)
        dist_path = os.path.join(out, f"bas{side}_distribution.json")
        support = {int(i): float(p) for i, p in enumerate(q.probabilities) if p > 0}
        with open(dist_path, "w", encoding="utf-8") as f:
            json.dump({"side": side, "probabilities": support}, f)
    return sample_path, dist_path


def _build_parser():
    parser = argparse.ArgumentParser(prog="rbmprune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON or TOML config file")
        p.add_argument("--data", default=None)
        p.add_argument("--hidden", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--nu", type=float, default=None)
        p.add_argument("--a", type=float, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--pcd", type=int, default=None)
        p.add_argument("--beta1", type=float, default=None)
        p.add_argument("--temper-steps", type=int, default=None)
        p.add_argument("--ais-samples", type=int, default=None)
        p.add_argument("--ais-intervals", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--eval-every", type=int, default=None)
        p.add_argument("--ckpt-every", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    add_common(sub.add_parser("train", help="PCD training run"))
    p_prune = sub.add_parser("prune", help="hidden-unit removal run")
    add_common(p_prune)
    p_prune.add_argument("checkpoint", help="trained-model checkpoint")
    p_prune.add_argument("--resume", action="store_true",
                         help="continue a prune run from its own checkpoint")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p_eval)
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--mode", choices=("exact", "ais", "recon"), default="exact")
    p_bas = sub.add_parser("gen-bas", help="write Bars-and-Stripes samples")
    p_bas.add_argument("--side", type=int, default=3)
    p_bas.add_argument("--count", type=int, default=10_000)
    p_bas.add_argument("--seed", type=int, default=0)
    p_bas.add_argument("--out", default=".")
    return parser


def _load_config_file(path):
    with open(path, "rb") as f:
        raw = f.read()
    if path.endswith(".toml"):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw.decode("utf-8"))


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig()
    fields = list(RunConfig().__dict__)
    if getattr(args, "config", None):
        file_cfg = _load_config_file(args.config)
        for key, val in file_cfg.items():
            key = key.replace("-", "_")
            if key not in fields:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, val)
    for key in fields:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            current = getattr(cfg, key)
            setattr(cfg, key, type(current)(env))
    for key in fields:
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    # dataset-dependent defaults for flags the user left unset
    explicit = {k for k in fields if getattr(args, k, None) is not None}
    if cfg.data.startswith("idx:"):
        table = _IDX_DEFAULTS
    else:
        table = _BAS_TRAIN if getattr(args, "command", "") == "train" else _BAS_PRUNE
    for key, val in table.items():
        if key not in explicit and os.environ.get(ENV_PREFIX + key.upper()) is None:
            setattr(cfg, key, val)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-bas":
            sample_path, dist_path = gen_bas(args.side, args.count, args.out, args.seed)
            print(json.dumps({"samples": sample_path, "distribution": dist_path}))
            return EXIT_OK
        cfg = _resolve_config(args)
        if args.command == "train":
            _, metrics_path, ckpt_path = train_run(cfg)
            print(json.dumps({"metrics": metrics_path, "checkpoint": ckpt_path}))
        elif args.command == "prune":
            _, trace, metrics_path, ckpt_path = prune_run_cmd(
                cfg, args.checkpoint, resume=args.resume)
            print(json.dumps({
                "metrics": metrics_path, "checkpoint": ckpt_path,
                "removals": len(trace.removals), "steps": trace.steps_run,
            }))
        elif args.command == "eval":
            report = eval_run(args.checkpoint, cfg.data, args.mode, cfg)
            print(json.dumps(report))
        return EXIT_OK
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (data.IdxFormatError, persist.CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, argparse.ArgumentTypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
