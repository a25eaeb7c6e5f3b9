"""Seeded synthetic classification tasks with a known input-norm bound.

Generator (version 1): a splitmix64 counter stream gives 53-bit uniforms,
Box-Muller turns pairs of uniforms into standard normals. Class ``c`` has
mean ``separation * g_c / sqrt(d0)`` with ``g_c`` standard normal; sample
``i`` has label ``i mod K`` and is its class mean plus unit Gaussian noise.
If any sample norm exceeds ``M_x`` the whole set is scaled by
``M_x / max_norm``, so the largest norm is exactly ``M_x``.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

GENERATOR_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def splitmix64(seed, count, offset=0):
    """``count`` outputs of the splitmix64 stream seeded with ``seed``."""
    with np.errstate(over="ignore"):
        idx = np.arange(offset + 1, offset + count + 1, dtype=np.uint64)
        state = np.uint64(seed & _MASK) + idx * _GOLDEN
        return _mix(state)


def derive_seed(seed, index):
    """Independent child seed ``index`` of ``seed``."""
    return int(splitmix64(seed ^ 0x5DEECE66D, 1, offset=index)[0])


def uniforms(seed, count, offset=0):
    return (splitmix64(seed, count, offset) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def normals(seed, count, offset=0):
    pairs = (count + 1) // 2
    u = uniforms(seed, 2 * pairs, 2 * offset)
    u1 = 1.0 - u[0::2]  # (0, 1]
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return z[:count]


@dataclass(frozen=True, eq=False)
class TaskDataset:
    task_id: int
    inputs: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    m_x_bound: float
    num_classes: int
    seed: int = 0
    degenerate: bool = False

    def __post_init__(self):
        X = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError("inputs must be (n, d0) and labels (n,)")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]


def validate_task(task, tol=1e-12):
    """Raise ValueError if the dataset breaks its declared invariants."""
    if task.n < 1:
        raise ValueError(f"task {task.task_id}: empty dataset")
    if not np.all(np.isfinite(task.inputs)):
        raise ValueError(f"task {task.task_id}: non-finite inputs")
    norms = np.linalg.norm(task.inputs, axis=1)
    if norms.max() > task.m_x_bound * (1.0 + tol):
        raise ValueError(
            f"task {task.task_id}: max input norm {norms.max()!r} exceeds bound {task.m_x_bound!r}")
    if task.labels.min() < 0 or task.labels.max() >= task.num_classes:
        raise ValueError(f"task {task.task_id}: label out of range")
    counts = np.bincount(task.labels, minlength=task.num_classes)
    if not task.degenerate and np.any(counts == 0):
        raise ValueError(f"task {task.task_id}: missing class")
    return task


def make_task(seed, n_t, d0, K, M_x, separation, task_id=0):
    if K < 2:
        raise ValueError("K must be >= 2")
    if n_t < 1 or d0 < 1:
        raise ValueError("n_t and d0 must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    if not M_x > 0:
        raise ValueError("M_x must be positive")
    means = normals(seed, K * d0).reshape(K, d0) * (separation / math.sqrt(d0))
    noise = normals(seed, n_t * d0, offset=K * d0).reshape(n_t, d0)
    labels = np.arange(n_t) % K
    X = means[labels] + noise
    peak = float(np.linalg.norm(X, axis=1).max())
    if peak > M_x:
        X = X * (M_x / peak)
    task = TaskDataset(task_id, X, labels, float(M_x), K, seed=int(seed), degenerate=n_t < K)
    return validate_task(task)


def make_task_family(seed, T, n_t, d0, K, M_x, separation):
    if T < 1:
        raise ValueError("T must be >= 1")
    seeds = [seed] + [derive_seed(seed, t) for t in range(1, T)]
    return [make_task(s, n_t, d0, K, M_x, separation, task_id=t) for t, s in enumerate(seeds)]


def task_dict(task):
    return {
        "task_id": task.task_id,
        "m_x_bound": task.m_x_bound,
        "num_classes": task.num_classes,
        "seed": task.seed,
        "generator_version": GENERATOR_VERSION,
        "degenerate": task.degenerate,
        "inputs": task.inputs.tolist(),
        "labels": task.labels.tolist(),
    }


def task_from_dict(d):
    if d.get("generator_version") != GENERATOR_VERSION:
        raise ValueError(f"unsupported generator version {d.get('generator_version')!r}")
    task = TaskDataset(d["task_id"], d["inputs"], d["labels"], d["m_x_bound"],
                       d["num_classes"], d.get("seed", 0), d.get("degenerate", False))
    return validate_task(task)


def save_task(task, path):
    with open(path, "w") as fh:
        json.dump(task_dict(task), fh, allow_nan=False)
        fh.write("\n")


def load_task(path):
    with open(path) as fh:
        return task_from_dict(json.load(fh))
