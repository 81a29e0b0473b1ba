"""Benchmark task generators and the portable dataset file format.

Every generator is deterministic per seed and emits a MetaDataset: a list of
training environments and a list of adaptation environments, each with its
support and query split, plus family metadata (time grids, physical
constants). Dynamical families integrate their ground-truth fields with the
same RK4 the models train against.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, FormatError
from .ode import IvpSpec, rk4_solve

FAMILIES = (
    "sine",
    "optimal_control",
    "forced_pendulum",
    "lotka_volterra",
    "divergent_series",
    "image_completion",
)


@dataclass
class EnvDataset:
    env_id: int
    params: dict
    x_tr: np.ndarray
    y_tr: np.ndarray
    x_te: np.ndarray
    y_te: np.ndarray

    def support(self):
        return self.x_tr, self.y_tr

    def query(self):
        return self.x_te, self.y_te


@dataclass
class MetaDataset:
    family: str
    train_envs: list
    adapt_envs: list
    meta: dict = field(default_factory=dict)
    seed: int = 0

    def support_pairs(self, split="train"):
        envs = self.train_envs if split == "train" else self.adapt_envs
        return {e.env_id: e.support() for e in envs}

    def query_pairs(self, split="train"):
        envs = self.train_envs if split == "train" else self.adapt_envs
        return {e.env_id: e.query() for e in envs}


# ---------------------------------------------------------------------------
# sine regression
# ---------------------------------------------------------------------------


def gen_sine(n_envs, m_tr, m_te, seed, n_adapt=25, x_range=(-5.0, 5.0)) -> MetaDataset:
    """y = A sin(x - alpha), A ~ U(0.1, 0.5), alpha ~ U(0, pi).

    The same parameter distributions serve training and adaptation.
    """
    rng = np.random.default_rng(seed)

    def make(env_id):
        amp = rng.uniform(0.1, 0.5)
        phase = rng.uniform(0.0, np.pi)
        x_tr = rng.uniform(*x_range, size=(m_tr, 1))
        x_te = rng.uniform(*x_range, size=(m_te, 1))
        return EnvDataset(
            env_id=env_id,
            params={"amplitude": amp, "phase": phase},
            x_tr=x_tr,
            y_tr=amp * np.sin(x_tr - phase),
            x_te=x_te,
            y_te=amp * np.sin(x_te - phase),
        )

    train = [make(e) for e in range(n_envs)]
    adapt = [make(e) for e in range(n_adapt)]
    return MetaDataset(
        family="sine",
        train_envs=train,
        adapt_envs=adapt,
        meta={"x_range": list(x_range), "m_tr": m_tr, "m_te": m_te},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# optimal control of a 2-d linear system
# ---------------------------------------------------------------------------


def gen_optimal_control(seed, n_train=10, n_adapt=16, m_tr=12, m_te=32,
                        horizon=1.0) -> MetaDataset:
    """Per-environment target states; labels are the targets themselves.

    Training targets come from U(-1,1)^2, adaptation targets from U(-2,2)^2
    (out-of-distribution by construction). All environments share the same
    initial-condition sets: m_tr for training support, 1 for adaptation
    support, m_te for queries.
    """
    rng = np.random.default_rng(seed)
    x0_tr = rng.uniform(-1.0, 1.0, size=(m_tr, 2))
    x0_adapt = rng.uniform(-1.0, 1.0, size=(1, 2))
    x0_te = rng.uniform(-1.0, 1.0, size=(m_te, 2))
    targets_tr = rng.uniform(-1.0, 1.0, size=(n_train, 2))
    targets_ad = rng.uniform(-2.0, 2.0, size=(n_adapt, 2))

    def make(env_id, target, support_x0):
        return EnvDataset(
            env_id=env_id,
            params={"target": target.tolist()},
            x_tr=support_x0.copy(),
            y_tr=np.broadcast_to(target, (support_x0.shape[0], 2)).copy(),
            x_te=x0_te.copy(),
            y_te=np.broadcast_to(target, (m_te, 2)).copy(),
        )

    train = [make(e, targets_tr[e], x0_tr) for e in range(n_train)]
    adapt = [make(e, targets_ad[e], x0_adapt) for e in range(n_adapt)]
    return MetaDataset(
        family="optimal_control",
        train_envs=train,
        adapt_envs=adapt,
        meta={"horizon": horizon, "m_tr": m_tr, "m_te": m_te},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# forced pendulum
# ---------------------------------------------------------------------------

_TRAIN_FORCINGS = (
    ("sin(t)", lambda t: np.sin(t)),
    ("cos(t)", lambda t: np.cos(t)),
    ("sin(t)+cos(t)", lambda t: np.sin(t) + np.cos(t)),
    ("exp(cos(t))", lambda t: np.exp(np.cos(t))),
    ("sin(cos(t))", lambda t: np.sin(np.cos(t))),
    ("sin(sin(t)+cos(t))", lambda t: np.sin(np.sin(t) + np.cos(t))),
    ("sinh(sin(t)+cos(t))", lambda t: np.sinh(np.sin(t) + np.cos(t))),
    ("sinh(sin(t))", lambda t: np.sinh(np.sin(t))),
)

_ADAPT_FORCINGS = (
    ("sinh(cos(t))", lambda t: np.sinh(np.cos(t))),
    ("tanh(cos(t))", lambda t: np.tanh(np.cos(t))),
    ("sin(t)*exp(0.01t)", lambda t: np.sin(t) * np.exp(0.01 * t)),
    ("cos(t)*log(t/10+1)", lambda t: np.cos(t) * np.log(t / 10.0 + 1.0)),
    ("sin(t)+t/10", lambda t: np.sin(t) + t / 10.0),
    ("sin(t)*(1+0.02t)", lambda t: np.sin(t) * (1.0 + 0.02 * t)),
)


def _pendulum_field(forcing, omega, mu):
    def field(t, y, theta, ctx):
        x, v = y[..., 0:1], y[..., 1:2]
        dv = -2.0 * mu * omega * v - omega**2 * x + forcing(t)
        return np.concatenate([v, dv], axis=-1)

    return field


def _integrate_truth(field, x0s, t_grid, dt):
    spec = IvpSpec(
        vector_field=field,
        t_span=(float(t_grid[0]), float(t_grid[-1])),
        save_times=t_grid,
        dt=dt,
    )
    return rk4_solve(spec, x0s).states


def gen_forced_pendulum(seed, omega=1.0, mu=0.1, dt=0.1,
                        m_tr=4, m_te=32) -> MetaDataset:
    """Damped driven pendulum; each forcing term is one environment.

    8 oscillating training forcings, 6 adaptation forcings with growing
    amplitude. Trajectories run over [0, 6*pi] at dt=0.1 (the grid ends at
    18.8: dt wins over the irrational endpoint). Initial conditions come from
    U(0,1)^2: m_tr of them for training support, one for adaptation support.
    """
    rng = np.random.default_rng(seed)
    n_steps = int(np.floor(6.0 * np.pi / dt))
    t_grid = np.round(np.arange(n_steps + 1) * dt, 12)

    def make(env_id, name, forcing, n_support):
        x0_sup = rng.uniform(0.0, 1.0, size=(n_support, 2))
        x0_query = rng.uniform(0.0, 1.0, size=(m_te, 2))
        field = _pendulum_field(forcing, omega, mu)
        return EnvDataset(
            env_id=env_id,
            params={"forcing": name, "omega": omega, "mu": mu},
            x_tr=x0_sup,
            y_tr=_integrate_truth(field, x0_sup, t_grid, dt),
            x_te=x0_query,
            y_te=_integrate_truth(field, x0_query, t_grid, dt),
        )

    train = [make(e, name, f, m_tr) for e, (name, f) in enumerate(_TRAIN_FORCINGS)]
    adapt = [make(e, name, f, 1) for e, (name, f) in enumerate(_ADAPT_FORCINGS)]
    return MetaDataset(
        family="forced_pendulum",
        train_envs=train,
        adapt_envs=adapt,
        meta={"t_grid": t_grid.tolist(), "dt": dt, "omega": omega, "mu": mu},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Lotka-Volterra
# ---------------------------------------------------------------------------


def _lv_field(alpha, beta, gamma, delta):
    def field(t, y, theta, ctx):
        x, yy = y[..., 0:1], y[..., 1:2]
        return np.concatenate(
            [alpha * x - beta * x * yy, delta * x * yy - gamma * yy], axis=-1
        )

    return field


def gen_lotka_volterra(seed, alpha=0.5, gamma=0.5, dt=0.1, horizon=10.0,
                       m_tr=4, m_te=32) -> MetaDataset:
    """Prey-predator dynamics over a (beta, delta) parameter grid.

    9 training environments on {0.5, 0.75, 1.0}^2 and 4 adaptation
    environments on {0.625, 1.125}^2; alpha and gamma stay fixed.
    """
    rng = np.random.default_rng(seed)
    t_grid = np.round(np.arange(int(round(horizon / dt)) + 1) * dt, 12)
    train_grid = [(b, d) for b in (0.5, 0.75, 1.0) for d in (0.5, 0.75, 1.0)]
    adapt_grid = [(b, d) for b in (0.625, 1.125) for d in (0.625, 1.125)]

    def make(env_id, beta, delta, n_support):
        x0_sup = rng.uniform(1.0, 3.0, size=(n_support, 2))
        x0_query = rng.uniform(1.0, 3.0, size=(m_te, 2))
        f = _lv_field(alpha, beta, gamma, delta)
        return EnvDataset(
            env_id=env_id,
            params={"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta},
            x_tr=x0_sup,
            y_tr=_integrate_truth(f, x0_sup, t_grid, dt),
            x_te=x0_query,
            y_te=_integrate_truth(f, x0_query, t_grid, dt),
        )

    train = [make(e, b, d, m_tr) for e, (b, d) in enumerate(train_grid)]
    adapt = [make(e, b, d, 1) for e, (b, d) in enumerate(adapt_grid)]
    return MetaDataset(
        family="lotka_volterra",
        train_envs=train,
        adapt_envs=adapt,
        meta={"t_grid": t_grid.tolist(), "dt": dt, "alpha": alpha, "gamma": gamma},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# divergent power series fields
# ---------------------------------------------------------------------------


def gen_divergent_series(seed, variant="ode1", dt=0.1, horizon=2.0,
                         m_tr=4, m_te=32) -> MetaDataset:
    """Scalar fields whose dependence on c outruns its series radius.

    ode1: dx/dt = x / (1 - c); ode2: dx/dt = x / (1 + (c x)^2).
    Training uses 7 values of c spaced 1.25 starting at 1.25; adaptation uses
    15 values on the same spacing (overlapping the training grid, as the
    construction demands).
    """
    if variant not in ("ode1", "ode2"):
        raise ConfigError(f"unknown divergent-series variant '{variant}'")
    rng = np.random.default_rng(seed)
    t_grid = np.round(np.arange(int(round(horizon / dt)) + 1) * dt, 12)
    train_c = [1.25 * (i + 1) for i in range(7)]
    adapt_c = [1.25 * (i + 1) for i in range(15)]

    def field_for(c):
        if variant == "ode1":
            return lambda t, y, th, cx: y / (1.0 - c)
        return lambda t, y, th, cx: y / (1.0 + np.square(c * y))

    def make(env_id, c, n_support):
        x0_sup = rng.uniform(0.5, 1.5, size=(n_support, 1))
        x0_query = rng.uniform(0.5, 1.5, size=(m_te, 1))
        f = field_for(c)
        return EnvDataset(
            env_id=env_id,
            params={"c": c, "variant": variant},
            x_tr=x0_sup,
            y_tr=_integrate_truth(f, x0_sup, t_grid, dt),
            x_te=x0_query,
            y_te=_integrate_truth(f, x0_query, t_grid, dt),
        )

    train = [make(e, c, m_tr) for e, c in enumerate(train_c)]
    adapt = [make(e, c, 1) for e, c in enumerate(adapt_c)]
    return MetaDataset(
        family="divergent_series",
        train_envs=train,
        adapt_envs=adapt,
        meta={"t_grid": t_grid.tolist(), "dt": dt, "variant": variant},
        seed=seed,
    )


# ---------------------------------------------------------------------------
# image completion
# ---------------------------------------------------------------------------


def _pixel_grid(size=32):
    centers = (np.arange(size) + 0.5) / size
    xx, yy = np.meshgrid(centers, centers, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


def _decode_image(path):
    from PIL import Image

    with Image.open(path) as img:
        rgb = img.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr


def gen_image_completion(image_dir, k_shots, seed) -> MetaDataset:
    """Pixel-coordinate regression: one 32x32 RGB image per environment.

    Inputs are pixel centers scaled to [0,1]^2; labels are RGB in [0,1]^3.
    The support set is k_shots distinct pixels sampled uniformly; the query
    set is all 1024 pixels. Undecodable or wrongly sized files are skipped
    with a warning.
    """
    from pathlib import Path

    if k_shots > 1024:
        raise ConfigError(f"k_shots={k_shots} exceeds the 1024 pixels of a 32x32 image")
    rng = np.random.default_rng(seed)
    grid = _pixel_grid(32)
    envs = []
    paths = sorted(Path(image_dir).iterdir())
    for path in paths:
        if not path.is_file():
            continue
        try:
            arr = _decode_image(path)
        except Exception as exc:  # undecodable file
            warnings.warn(f"skipping {path.name}: {exc}")
            continue
        if arr.shape != (32, 32, 3):
            warnings.warn(f"skipping {path.name}: shape {arr.shape} is not 32x32 RGB")
            continue
        labels = arr.reshape(-1, 3)
        idx = rng.choice(1024, size=k_shots, replace=False)
        envs.append(
            EnvDataset(
                env_id=len(envs),
                params={"file": path.name},
                x_tr=grid[idx].copy(),
                y_tr=labels[idx].copy(),
                x_te=grid.copy(),
                y_te=labels.copy(),
            )
        )
    if not envs:
        raise DataError(f"no decodable 32x32 images under {image_dir}")
    split = max(1, int(round(len(envs) * 0.8))) if len(envs) > 1 else 1
    train, adapt = envs[:split], envs[split:]
    for i, e in enumerate(adapt):
        e.env_id = i
    return MetaDataset(
        family="image_completion",
        train_envs=train,
        adapt_envs=adapt,
        meta={"k_shots": k_shots, "image_size": 32},
        seed=seed,
    )


GENERATORS = {
    "sine": gen_sine,
    "optimal_control": gen_optimal_control,
    "forced_pendulum": gen_forced_pendulum,
    "lotka_volterra": gen_lotka_volterra,
    "divergent_series": gen_divergent_series,
    "image_completion": gen_image_completion,
}


# ---------------------------------------------------------------------------
# dataset file format: "GDYN" magic, u32 version, length-prefixed JSON header,
# little-endian float64 payload
# ---------------------------------------------------------------------------

DATASET_MAGIC = b"GDYN"
DATASET_VERSION = 1
_ARRAY_FIELDS = ("x_tr", "y_tr", "x_te", "y_te")


def write_dataset(path, ds: MetaDataset):
    header_envs = []
    payload = []
    offset = 0
    for split, envs in (("train", ds.train_envs), ("adapt", ds.adapt_envs)):
        for env in envs:
            arrays = {}
            for name in _ARRAY_FIELDS:
                arr = np.ascontiguousarray(getattr(env, name), dtype=np.float64)
                arrays[name] = {"shape": list(arr.shape), "offset": offset}
                offset += arr.size
                payload.append(arr.reshape(-1))
            header_envs.append(
                {
                    "split": split,
                    "env_id": env.env_id,
                    "params": env.params,
                    "arrays": arrays,
                }
            )
    header = {
        "family": ds.family,
        "seed": ds.seed,
        "meta": ds.meta,
        "envs": header_envs,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if payload:
            fh.write(np.concatenate(payload).astype("<f8").tobytes())


def read_dataset(path) -> MetaDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != DATASET_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    (blob_len,) = struct.unpack("<I", raw[8:12])
    blob = raw[12 : 12 + blob_len]
    if len(blob) != blob_len:
        raise FormatError("truncated header")
    header = json.loads(blob.decode("utf-8"))
    if header["family"] not in FAMILIES:
        raise FormatError(f"unknown family '{header['family']}'")
    payload = np.frombuffer(raw[12 + blob_len :], dtype="<f8")
    total = sum(
        int(np.prod(spec["shape"]))
        for env in header["envs"]
        for spec in env["arrays"].values()
    )
    if payload.size != total:
        raise FormatError(f"payload has {payload.size} floats, header expects {total}")
    splits = {"train": [], "adapt": []}
    for env in header["envs"]:
        arrays = {}
        for name in _ARRAY_FIELDS:
            spec = env["arrays"][name]
            n = int(np.prod(spec["shape"]))
            arrays[name] = (
                payload[spec["offset"] : spec["offset"] + n]
                .reshape(spec["shape"])
                .copy()
            )
        splits[env["split"]].append(
            EnvDataset(env_id=env["env_id"], params=env["params"], **arrays)
        )
    return MetaDataset(
        family=header["family"],
        train_envs=splits["train"],
        adapt_envs=splits["adapt"],
        meta=header["meta"],
        seed=header["seed"],
    )
