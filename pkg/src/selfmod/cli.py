"""Experiment orchestration: gen, train, adapt, eval, plot, bench.

A run directory is self-describing: the config copy plus the seed reproduce
every artifact bit for bit. Artifacts: checkpoint.smod, metrics.csv (per-step
losses and wall time), results.json (in-domain and out-of-distribution query
MSE, mean and population std across environments), predictions.csv, and the
SVG plots emitted by `plot`.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .context import FINITE, FUNCTIONAL
from .errors import CompatError, ConfigError, SelfModError, TrainingAborted
from .models import ContextSetup, ContextualRegressor, ControlledLinearSystem, NeuralDynamics
from .nn import MlpSpec, read_checkpoint, write_checkpoint
from .taylor import candidate_set, ensemble_stats
from .context import Context, ContextPool, select_pool
from .tasks import GENERATORS, MetaDataset, read_dataset, write_dataset
from .trainers import (
    TrainerConfig,
    adapt,
    init_state,
    state_from_sections,
    state_to_sections,
    train,
)
from .autodiff import value_of

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["family", "seed", "out_dir", "model", "trainer"],
    "additionalProperties": False,
    "properties": {
        "family": {"enum": list(GENERATORS.keys())},
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
        "dataset_path": {"type": ["string", "null"]},
        "generator": {"type": "object"},
        "eval_cadence": {"type": "integer", "minimum": 1},
        "model": {
            "type": "object",
            "required": ["hidden", "context"],
            "additionalProperties": False,
            "properties": {
                "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "activation": {"enum": ["swish", "softplus", "relu", "tanh"]},
                "final_activation": {
                    "enum": ["swish", "softplus", "relu", "tanh", "identity", None]
                },
                "context": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["csm", "icsm"]},
                        "dim": {"type": "integer", "minimum": 0},
                        "hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                        "embed": {"type": "integer", "minimum": 1},
                    },
                },
                "pre_embedding": {
                    "type": ["array", "null"],
                    "items": {"type": "integer", "minimum": 1},
                },
                "include_time": {"type": "boolean"},
                "ode": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "method": {"enum": ["rk4", "dopri5"]},
                        "dt": {"type": "number", "exclusiveMinimum": 0},
                        "rtol": {"type": "number", "exclusiveMinimum": 0},
                        "atol": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "trainer": {
            "type": "object",
            "required": ["name", "q_max"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["ncf", "ncf_star", "flashcavia"]},
                "q_max": {"type": "integer", "minimum": 1},
                "inner_steps": {"type": "integer", "minimum": 1},
                "H": {"type": "integer", "minimum": 0},
                "eta_theta": {"type": "number", "minimum": 0},
                "eta_xi": {"type": "number", "minimum": 0},
                "beta": {"type": "number", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "pool_size": {"type": "integer", "minimum": 1},
                "taylor_order": {"type": "integer", "minimum": 0, "maximum": 8},
                "base": {"enum": ["mse", "mae"]},
                "optimizer_theta": {"enum": ["adam", "sgd"]},
                "optimizer_xi": {"enum": ["adam", "sgd"]},
                "inner_optimizer": {"enum": ["adam", "sgd"]},
                "schedule_factor": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "time_budget": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "adapt": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "optimizer": {"enum": ["adam", "sgd"]},
                "lr": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

_FAMILY_DIMS = {
    # family: (x_dim, out_dim) for static tasks; dynamics use state dims
    "sine": (1, 1),
    "image_completion": (2, 3),
    "optimal_control": (2, 2),
    "forced_pendulum": (2, 2),
    "lotka_volterra": (2, 2),
    "divergent_series": (1, 1),
}

_STATIC_FAMILIES = ("sine", "image_completion")
_DYNAMICS_FAMILIES = ("forced_pendulum", "lotka_volterra", "divergent_series")


def _find_line(text, key):
    for i, line in enumerate(text.splitlines(), start=1):
        if f'"{key}"' in line:
            return i
    return None


def load_config(path):
    """Parse and schema-validate a config file; errors carry a line hint."""
    import jsonschema

    text = Path(path).read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: {e.msg}") from e
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        key = str(e.absolute_path[-1]) if e.absolute_path else "<root>"
        line = _find_line(text, key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: at '{'/'.join(str(p) for p in e.absolute_path)}': {e.message}")
    _cross_check(cfg)
    return cfg


def _cross_check(cfg):
    ctx = cfg["model"]["context"]
    if ctx["kind"] == "csm" and "dim" not in ctx:
        raise ConfigError("csm context needs 'dim'")
    if ctx["kind"] == "icsm" and ("hidden" not in ctx or "embed" not in ctx):
        raise ConfigError("icsm context needs 'hidden' and 'embed'")
    if cfg["family"] == "image_completion":
        gen = cfg.get("generator", {})
        if "image_dir" not in gen:
            raise ConfigError("image_completion needs generator.image_dir")


def build_dataset(cfg) -> MetaDataset:
    if cfg.get("dataset_path"):
        ds = read_dataset(cfg["dataset_path"])
        if ds.family != cfg["family"]:
            raise CompatError(
                f"dataset family '{ds.family}' does not match config '{cfg['family']}'"
            )
        return ds
    gen = dict(cfg.get("generator", {}))
    gen["seed"] = cfg["seed"]
    return GENERATORS[cfg["family"]](**gen)


def _context_setup(cfg, family):
    ctx = cfg["model"]["context"]
    if ctx["kind"] == "csm":
        return ContextSetup(kind=FINITE, dim=ctx["dim"])
    aux = "t" if family in _DYNAMICS_FAMILIES or family == "optimal_control" else "x"
    aux_dim = 1 if aux == "t" else _FAMILY_DIMS[family][0]
    fn_spec = MlpSpec(
        (aux_dim, *ctx["hidden"], ctx["embed"]),
        activation=cfg["model"].get("activation", "swish"),
    )
    return ContextSetup(kind=FUNCTIONAL, fn_spec=fn_spec, aux_input=aux)


def build_model(cfg, dataset: MetaDataset):
    family = cfg["family"]
    mc = cfg["model"]
    activation = mc.get("activation", "swish")
    final = mc.get("final_activation")
    setup = _context_setup(cfg, family)
    x_dim, out_dim = _FAMILY_DIMS[family]
    pre = mc.get("pre_embedding")
    pre_spec = None
    embed = setup.embed_dim
    if pre:
        pre_spec = MlpSpec((setup.dim, *pre[:-1], pre[-1]), activation=activation)
        embed = pre_spec.out_dim
    if family in _STATIC_FAMILIES:
        main = MlpSpec((x_dim + embed, *mc["hidden"], out_dim),
                       activation=activation, final_activation=final)
        return ContextualRegressor(main, setup, pre_spec=pre_spec)
    ode = mc.get("ode", {})
    if family == "optimal_control":
        control = MlpSpec((2 + 1 + embed, *mc["hidden"], 1), activation=activation)
        return ControlledLinearSystem(
            control, setup,
            horizon=dataset.meta.get("horizon", 1.0),
            dt=ode.get("dt", 0.05),
            method=ode.get("method", "rk4"),
        )
    include_time = mc.get("include_time", False)
    t_grid = np.asarray(dataset.meta["t_grid"])
    vf_in = x_dim + embed + (1 if include_time else 0)
    vf = MlpSpec((vf_in, *mc["hidden"], out_dim), activation=activation)
    return NeuralDynamics(
        vf, setup, t_grid,
        method=ode.get("method", "rk4"),
        dt=ode.get("dt"),
        rtol=ode.get("rtol", 1e-6),
        atol=ode.get("atol", 1e-8),
        include_time=include_time,
    )


def trainer_config(cfg) -> TrainerConfig:
    tc = dict(cfg["trainer"])
    tc["trainer"] = tc.pop("name")
    return TrainerConfig(**tc)


def _query_mse_per_env(model, theta, contexts, envs):
    """Direct-prediction query MSE for each environment (no candidates)."""
    out = {}
    for env in envs:
        ctx = contexts[env.env_id]
        values = ctx.values if isinstance(ctx, Context) else ctx
        pred = value_of(model.apply(env.x_te, theta.data, values))
        out[env.env_id] = float(np.mean(np.square(pred - env.y_te)))
    return out


def _aggregate(per_env):
    vals = np.array(list(per_env.values()))
    return {
        "per_env_mse": {str(k): v for k, v in sorted(per_env.items())},
        "mean_mse": float(vals.mean()),
        "std_mse": float(vals.std()),
        "n_envs": int(vals.size),
    }


def evaluate(checkpoint_path, dataset: MetaDataset, split: str):
    """Query MSE for one split; the ood split adapts contexts first."""
    if split not in ("ind", "ood"):
        raise ConfigError(f"unknown split '{split}'")
    sections, meta = read_checkpoint(checkpoint_path)
    run_cfg = meta.get("run_config")
    if run_cfg is None:
        raise CompatError("checkpoint does not carry its run config")
    if run_cfg["family"] != dataset.family:
        raise CompatError(
            f"checkpoint family '{run_cfg['family']}' vs dataset '{dataset.family}'"
        )
    model = build_model(run_cfg, dataset)
    state = state_from_sections(model, sections, meta)
    if split == "ind":
        contexts = {c.env_id: c for c in state.contexts}
        per_env = _query_mse_per_env(model, state.theta, contexts, dataset.train_envs)
    else:
        ad = run_cfg.get("adapt", {})
        supports = {e.env_id: e.support() for e in dataset.adapt_envs}
        ctx_values, _ = adapt(
            model, state.theta, supports,
            steps=ad.get("steps", 500),
            optimizer=ad.get("optimizer", "adam"),
            lr=ad.get("lr", 1e-3),
        )
        per_env = _query_mse_per_env(model, state.theta, ctx_values, dataset.adapt_envs)
    fragment = _aggregate(per_env)
    fragment["split"] = split
    return fragment


class _MetricsWriter:
    def __init__(self, path, n_envs, resume=False):
        self.per_env = n_envs <= 32
        self.n_envs = n_envs
        exists = Path(path).exists() and resume
        self.fh = open(path, "a" if exists else "w", newline="")
        self.writer = csv.writer(self.fh)
        if not exists:
            cols = ["step", "wall_time_s", "train_mse"]
            if self.per_env:
                cols += [f"env_{e}" for e in range(n_envs)]
            self.writer.writerow(cols)

    def row(self, payload, env_losses=None):
        row = [payload["step"], f"{payload['wall_time_s']:.3f}", repr(payload["train_loss"])]
        if self.per_env:
            if env_losses is None:
                row += [""] * self.n_envs
            else:
                row += [repr(v) for v in env_losses]
        self.writer.writerow(row)

    def close(self):
        self.fh.close()


def run_experiment(config_path, resume=False) -> int:
    """Train, adapt, evaluate; returns a process exit code."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out_dir = Path(os.environ.get("SELFMOD_OUT_DIR", cfg["out_dir"]))
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))

    dataset = build_dataset(cfg)
    model = build_model(cfg, dataset)
    tcfg = trainer_config(cfg)
    ckpt_path = out_dir / "checkpoint.smod"

    if resume:
        sections, meta = read_checkpoint(ckpt_path)
        state = state_from_sections(model, sections, meta)
    else:
        state = init_state(model, len(dataset.train_envs), cfg["seed"])

    supports = dataset.support_pairs("train")
    cadence = cfg.get("eval_cadence", 50)
    metrics = _MetricsWriter(out_dir / "metrics.csv", len(dataset.train_envs), resume)
    started_steps = len(state.loss_trace)

    def metrics_cb(payload):
        payload = dict(payload)
        payload["step"] = len(state.loss_trace)
        env_losses = None
        if metrics.per_env and payload["step"] % cadence == 0:
            contexts = {c.env_id: c for c in state.contexts}
            per = _query_mse_per_env(model, state.theta, contexts, dataset.train_envs)
            env_losses = [per[e] for e in sorted(per)]
        metrics.row(payload, env_losses)

    code = 0
    try:
        state = train(model, state, supports, tcfg,
                      metrics_cb=metrics_cb, checkpoint_path=str(ckpt_path))
    except TrainingAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        metrics.close()
        return 3
    metrics.close()

    sections, meta = state_to_sections(state, tcfg)
    meta["run_config"] = cfg
    write_checkpoint(ckpt_path, sections, meta)

    results = {
        "config": str(config_path),
        "seed": cfg["seed"],
        "steps": len(state.loss_trace),
        "resumed_at": started_steps if resume else None,
        "ind": evaluate(ckpt_path, dataset, "ind"),
        "ood": evaluate(ckpt_path, dataset, "ood"),
    }
    (out_dir / "results.json").write_text(
        json.dumps(results, indent=2, sort_keys=True) + "\n"
    )
    _write_predictions(out_dir, cfg, model, state, dataset)
    print(
        f"done: ind {results['ind']['mean_mse']:.6g} "
        f"+/- {results['ind']['std_mse']:.6g} | "
        f"ood {results['ood']['mean_mse']:.6g} +/- {results['ood']['std_mse']:.6g}"
    )
    return code


def _write_predictions(out_dir, cfg, model, state, dataset):
    """Probe rows for plotting: truth vs direct prediction per query point."""
    rows = []
    contexts = {c.env_id: c for c in state.contexts}
    for env in dataset.train_envs[:4]:
        ctx = contexts[env.env_id]
        pred = value_of(model.apply(env.x_te, state.theta.data, ctx.values))
        truth = env.y_te
        if truth.ndim == 3:  # trajectories: first query IC over time
            t_grid = dataset.meta.get("t_grid", list(range(truth.shape[1])))
            for ti in range(truth.shape[1]):
                rows.append(
                    ["train", env.env_id, ti, t_grid[ti]]
                    + list(truth[0, ti]) + list(pred[0, ti])
                )
        else:
            for mi in range(truth.shape[0]):
                rows.append(
                    ["train", env.env_id, mi, ""]
                    + list(env.x_te[mi]) + list(truth[mi]) + list(pred[mi])
                )
    with open(out_dir / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "env_id", "index", "t", "values..."])
        w.writerows(rows)


# ---------------------------------------------------------------------------
# plotting (minimal deterministic SVG, no plotting dependency)
# ---------------------------------------------------------------------------


def _svg_line_plot(path, series, title):
    """One polyline per (name, ys) series on a 640x360 canvas."""
    w, h, pad = 640, 360, 40
    all_y = [y for _, ys in series for y in ys if np.isfinite(y)]
    if not all_y:
        all_y = [0.0, 1.0]
    y_min, y_max = min(all_y), max(all_y)
    if y_max <= y_min:
        y_max = y_min + 1.0
    n = max(len(ys) for _, ys in series)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<text x="{w//2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{w-2*pad}" height="{h-2*pad}" '
        'fill="none" stroke="#888"/>',
    ]
    for ci, (name, ys) in enumerate(series):
        pts = []
        for i, y in enumerate(ys):
            if not np.isfinite(y):
                continue
            px = pad + (w - 2 * pad) * (i / max(1, n - 1))
            py = h - pad - (h - 2 * pad) * ((y - y_min) / (y_max - y_min))
            pts.append(f"{px:.2f},{py:.2f}")
        color = colors[ci % len(colors)]
        parts.append(
            f'<polyline points="{" ".join(pts)}" fill="none" stroke="{color}"/>'
        )
        parts.append(
            f'<text x="{pad+4}" y="{pad+16+14*ci}" font-size="11" '
            f'fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def emit_plot_data(run_dir) -> int:
    """Derive plot CSVs and SVGs from a completed run directory."""
    run_dir = Path(run_dir)
    metrics_path = run_dir / "metrics.csv"
    if not metrics_path.exists():
        print("missing metrics.csv; run training first", file=sys.stderr)
        return 4
    steps, losses = [], []
    with open(metrics_path) as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            losses.append(float(row["train_mse"]))
    with open(run_dir / "loss_vs_step.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_mse"])
        w.writerows(zip(steps, losses))
    _svg_line_plot(run_dir / "loss_vs_step.svg", [("train_mse", losses)], "training loss")

    # candidate-prediction spread on the first training environment
    cfg = json.loads((run_dir / "config.json").read_text())
    ckpt = run_dir / "checkpoint.smod"
    if ckpt.exists():
        dataset = build_dataset(cfg)
        model = build_model(cfg, dataset)
        sections, meta = read_checkpoint(ckpt)
        state = state_from_sections(model, sections, meta)
        env = dataset.train_envs[0]
        p = min(max(2, cfg["trainer"].get("pool_size", 2)), len(state.contexts))
        pool = select_pool(state.contexts[env.env_id], state.contexts, p)
        cs = candidate_set(
            model, state.theta.data, env.x_te, state.contexts[env.env_id],
            pool, cfg["trainer"].get("taylor_order", 1) or 1,
        )
        mean, var = ensemble_stats(cs)
        flat_var = var.reshape(var.shape[0], -1).mean(axis=1)
        with open(run_dir / "candidate_variance.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "mean_prediction", "variance"])
            flat_mean = mean.reshape(mean.shape[0], -1).mean(axis=1)
            w.writerows(zip(range(len(flat_var)), flat_mean, flat_var))
        _svg_line_plot(
            run_dir / "candidate_variance.svg",
            [("variance", list(flat_var))],
            "candidate-prediction variance",
        )

    pred_path = run_dir / "predictions.csv"
    if pred_path.exists():
        with open(pred_path) as fh:
            rows = list(csv.reader(fh))[1:]
        if rows:
            by_env = {}
            for r in rows:
                by_env.setdefault(r[1], []).append(float(r[4]))
            series = [(f"env {k}", v) for k, v in sorted(by_env.items())[:4]]
            _svg_line_plot(run_dir / "predictions.svg", series, "query truth (first value)")
    return 0


# ---------------------------------------------------------------------------
# bench: a deterministic mini-suite whose results.json must be byte-stable
# ---------------------------------------------------------------------------


def run_bench(out_dir, seed=0) -> int:
    from . import bench

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = bench.run_suite(seed)
    payload = json.dumps(results, indent=2, sort_keys=True) + "\n"
    (out_dir / "results.json").write_text(payload)
    ok = all(v.get("passed", False) for v in results.values())
    for name, res in sorted(results.items()):
        print(f"{'PASS' if res.get('passed') else 'FAIL'} {name}")
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="selfmod", description="contextual meta-learning experiments"
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (exported to OMP/OpenBLAS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a dataset file")
    p_gen.add_argument("--family", required=True, choices=list(GENERATORS.keys()))
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--opts", default="{}", help="JSON dict of generator options")

    p_train = sub.add_parser("train", help="run an experiment end to end")
    p_train.add_argument("config")
    p_train.add_argument("--resume", action="store_true")

    p_adapt = sub.add_parser("adapt", help="adapt a checkpoint to a dataset's adapt split")
    p_adapt.add_argument("checkpoint")
    p_adapt.add_argument("dataset")
    p_adapt.add_argument("--steps", type=int, default=500)
    p_adapt.add_argument("--lr", type=float, default=1e-3)
    p_adapt.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--split", choices=["ind", "ood"], default="ind")

    p_plot = sub.add_parser("plot", help="emit plot CSV/SVG files for a run")
    p_plot.add_argument("run_dir")

    p_bench = sub.add_parser("bench", help="run the deterministic acceptance mini-suite")
    p_bench.add_argument("--out", default="bench_out")
    p_bench.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    if args.threads is not None:
        threads = str(int(os.environ.get("SELFMOD_THREADS", args.threads)))
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = threads

    try:
        if args.command == "gen":
            opts = json.loads(args.opts)
            ds = GENERATORS[args.family](seed=args.seed, **opts)
            write_dataset(args.out, ds)
            print(f"wrote {args.out}: {len(ds.train_envs)} train / "
                  f"{len(ds.adapt_envs)} adapt environments")
            return 0
        if args.command == "train":
            return run_experiment(args.config, resume=args.resume)
        if args.command == "adapt":
            dataset = read_dataset(args.dataset)
            sections, meta = read_checkpoint(args.checkpoint)
            run_cfg = meta.get("run_config")
            if run_cfg is None or run_cfg["family"] != dataset.family:
                raise CompatError("checkpoint/dataset families do not match")
            model = build_model(run_cfg, dataset)
            state = state_from_sections(model, sections, meta)
            supports = dataset.support_pairs("adapt")
            ctxs, trace = adapt(model, state.theta, supports, steps=args.steps,
                                optimizer=args.optimizer, lr=args.lr)
            print(json.dumps({
                "final_support_loss": trace[-1] if trace else None,
                "envs": sorted(ctxs.keys()),
            }))
            return 0
        if args.command == "eval":
            dataset = read_dataset(args.dataset)
            fragment = evaluate(args.checkpoint, dataset, args.split)
            print(json.dumps(fragment, indent=2, sort_keys=True))
            return 0
        if args.command == "plot":
            return emit_plot_data(args.run_dir)
        if args.command == "bench":
            return run_bench(args.out, args.seed)
    except TrainingAborted as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 3
    except (ConfigError, CompatError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SelfModError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
