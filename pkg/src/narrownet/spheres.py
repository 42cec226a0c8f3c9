"""Concentric-sphere classification and a small numpy MLP trainer.

Class 0 is the inner sphere, class 1 the outer one.  Networks have a two-way
softmax head trained with cross entropy and Adam.  Every run owns a
``numpy.random.Generator`` seeded from its own seed, so runs can execute in any
order or in parallel and still reproduce exactly.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InputError, PreconditionError
from .net_core import RELU, ActivationKind, Layer, Network, decide_batch


@dataclass(frozen=True)
class SphereDatasetConfig:
    d_in: int = 2
    r_inner: float | None = None
    r_outer: float | None = None
    n_train_per_class: int = 10_000
    n_test_per_class: int = 2_000
    seed: int = 0

    def __post_init__(self):
        if self.d_in < 2:
            raise InputError("spheres need d_in >= 2")
        # radii follow the dataset figure: (d-1)/2 and d-1
        if self.r_inner is None:
            object.__setattr__(self, "r_inner", (self.d_in - 1) / 2)
        if self.r_outer is None:
            object.__setattr__(self, "r_outer", float(self.d_in - 1))
        if not 0 < self.r_inner < self.r_outer:
            raise InputError("need 0 < r_inner < r_outer")


@dataclass
class SphereDataset:
    config: SphereDatasetConfig
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def to_csv(self, split: str = "train") -> str:
        x = self.x_train if split == "train" else self.x_test
        y = self.y_train if split == "train" else self.y_test
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(x.shape[1])] + ["label"])
        for row, label in zip(x, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
        return buf.getvalue()


@dataclass
class TrainConfig:
    layer_widths: list
    activation: ActivationKind = RELU
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    stop_at_100: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise InputError("batch_size and epochs must be positive")


@dataclass
class RunRecord:
    dataset: SphereDatasetConfig
    train: TrainConfig
    max_test_accuracy: float = 0.0
    reached_100: bool = False
    epochs_run: int = 0
    wall_time_s: float = 0.0
    diverged: bool = False
    output_head: str = "softmax2"
    meta: dict = field(default_factory=dict)


def sample_sphere(d: int, r: float, n: int, rng) -> np.ndarray:
    """``n`` points uniform on the radius-``r`` sphere in R^d (normalized Gaussians)."""
    if d < 2 or not r > 0 or n < 1:
        raise InputError("need d >= 2, r > 0, n >= 1")
    g = rng.standard_normal((n, d))
    return r * g / np.linalg.norm(g, axis=1, keepdims=True)


def make_dataset(cfg: SphereDatasetConfig) -> SphereDataset:
    rng = np.random.default_rng(cfg.seed)

    def split(n):
        x = np.vstack([sample_sphere(cfg.d_in, cfg.r_inner, n, rng),
                       sample_sphere(cfg.d_in, cfg.r_outer, n, rng)])
        y = np.repeat([0, 1], n)
        return x, y

    x_tr, y_tr = split(cfg.n_train_per_class)
    x_te, y_te = split(cfg.n_test_per_class)
    return SphereDataset(cfg, x_tr, y_tr, x_te, y_te)


def init_mlp(widths, activation: ActivationKind = RELU, seed: int = 0) -> Network:
    """He-normal weights (std ``sqrt(2 / fan_in)``), zero biases."""
    widths = list(widths)
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise InputError(f"invalid layer widths {widths}")
    rng = np.random.default_rng(seed)
    layers = [Layer(rng.standard_normal((fo, fi)) * np.sqrt(2.0 / fi), np.zeros(fo))
              for fi, fo in zip(widths[:-1], widths[1:])]
    return Network(tuple(layers[:-1]), layers[-1], activation)


# --- loss and backprop -------------------------------------------------------

def _params(net: Network):
    return [(np.array(l.weights), np.array(l.bias)) for l in net.layers]


def _network(params, activation) -> Network:
    layers = [Layer(w, b) for w, b in params]
    return Network(tuple(layers[:-1]), layers[-1], activation)


def loss_and_grads(params, activation: ActivationKind, x, y):
    """Mean softmax cross entropy and its gradient for every ``(W, b)``."""
    acts, pres = [x], []
    a = x
    for w, b in params[:-1]:
        z = a @ w.T + b
        pres.append(z)
        a = activation(z)
        acts.append(a)
    w, b = params[-1]
    logits = a @ w.T + b
    shift = logits - logits.max(axis=1, keepdims=True)
    expo = np.exp(shift)
    denom = expo.sum(axis=1, keepdims=True)
    n = x.shape[0]
    loss = float(np.mean(np.log(denom[:, 0]) - shift[np.arange(n), y]))
    delta = expo / denom
    delta[np.arange(n), y] -= 1.0
    delta /= n
    grads = [None] * len(params)
    for j in range(len(params) - 1, -1, -1):
        w = params[j][0]
        grads[j] = (delta.T @ acts[j], delta.sum(axis=0))
        if j:
            delta = (delta @ w) * activation.derivative(pres[j - 1])
    return loss, grads


def grad_check(net: Network, x, y, h: float = 1e-6, floor: float = 1e-3) -> float:
    """Largest relative gap between backprop and central differences.

    Relative error is ``|g - n| / max(|g|, |n|, floor * max|g|)`` per
    parameter, so components far below the gradient scale are judged on that
    scale rather than on their own (where finite-difference roundoff
    dominates).  For relu/leaky nets every hidden preactivation must be at
    least ``10 h`` away from the kink.
    """
    if not h > 0:
        raise PreconditionError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    params = _params(net)
    act = net.activation
    if act.piecewise_linear:
        a = x
        for w, b in params[:-1]:
            z = a @ w.T + b
            if np.min(np.abs(z)) < 10 * h:
                raise PreconditionError("a hidden preactivation is within 10*h of the ReLU kink")
            a = act(z)
    _, grads = loss_and_grads(params, act, x, y)
    scale = floor * max(float(np.max(np.abs(g))) for pair in grads for g in pair)
    worst = 0.0
    for j, (w, b) in enumerate(params):
        for arr, g in ((w, grads[j][0]), (b, grads[j][1])):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_and_grads(params, act, x, y)[0]
                arr[idx] = old - h
                down = loss_and_grads(params, act, x, y)[0]
                arr[idx] = old
                num = (up - down) / (2 * h)
                err = abs(num - g[idx]) / max(abs(num), abs(g[idx]), scale, 1e-300)
                worst = max(worst, err)
    return worst


def grad_abs_error(net: Network, x, y, h: float = 1e-6) -> float:
    """Largest absolute gap between backprop and central differences."""
    params = _params(net)
    act = net.activation
    _, grads = loss_and_grads(params, act, x, y)
    worst = 0.0
    for j, (w, b) in enumerate(params):
        for arr, g in ((w, grads[j][0]), (b, grads[j][1])):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                up = loss_and_grads(params, act, x, y)[0]
                arr[idx] = old - h
                down = loss_and_grads(params, act, x, y)[0]
                arr[idx] = old
                worst = max(worst, abs((up - down) / (2 * h) - g[idx]))
    return worst


# --- training ----------------------------------------------------------------

def accuracy(net: Network, x, y) -> float:
    """Fraction of points whose strict-argmax class equals the label; ties count as wrong."""
    return float(np.mean(decide_batch(net, x) == y))


def train(net: Network, dataset: SphereDataset, cfg: TrainConfig):
    """Minibatch Adam on softmax cross entropy; returns ``(final_net, RunRecord)``."""
    if net.d_out != 2:
        raise PreconditionError("the sphere task needs a two-output network")
    x, y = dataset.x_train, dataset.y_train
    if not set(np.unique(y).tolist()) <= {0, 1}:
        raise PreconditionError("labels must be 0 or 1")
    n = x.shape[0]
    batch = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    params = _params(net)
    m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_eps
    record = RunRecord(dataset.config, cfg)
    step = 0
    start = time.perf_counter()
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for s in range(0, n, batch):
                sel = order[s:s + batch]
                loss, grads = loss_and_grads(params, net.activation, x[sel], y[sel])
                if not np.isfinite(loss):
                    record.diverged = True
                    break
                step += 1
                c1, c2 = 1 - b1 ** step, 1 - b2 ** step
                for j, (gw, gb) in enumerate(grads):
                    new = []
                    for k, g in enumerate((gw, gb)):
                        m[j][k][...] = b1 * m[j][k] + (1 - b1) * g
                        v[j][k][...] = b2 * v[j][k] + (1 - b2) * g * g
                        new.append(params[j][k] - lr * (m[j][k] / c1) / (np.sqrt(v[j][k] / c2) + eps))
                    params[j] = tuple(new)
            record.epochs_run = epoch + 1
            if record.diverged or not all(np.all(np.isfinite(w)) for w, _ in params):
                record.diverged = True
                break
            current = _network(params, net.activation)
            acc = accuracy(current, dataset.x_test, dataset.y_test)
            record.max_test_accuracy = max(record.max_test_accuracy, acc)
            if acc == 1.0:
                record.reached_100 = True
                if cfg.stop_at_100:
                    break
    record.wall_time_s = time.perf_counter() - start
    final = net if record.diverged else _network(params, net.activation)
    return final, record


# --- width sweep -------------------------------------------------------------

CSV_HEADER = ["d_in", "depth", "width", "repeat", "seed", "max_test_acc", "reached_100",
              "epochs_run", "wall_time_s"]


@dataclass(frozen=True)
class RunSpec:
    index: int
    d_in: int
    depth: int
    width: int
    repeat: int
    seed: int


def plan_sweep(dims, depths, width_offsets, repeats: int, base_seed: int = 0) -> list[RunSpec]:
    if repeats < 1:
        raise InputError("repeats must be at least 1")
    runs = []
    for d in dims:
        for depth in depths:
            for off in width_offsets:
                for r in range(repeats):
                    i = len(runs)
                    runs.append(RunSpec(i, d, depth, d + off, r, base_seed ^ i))
    return runs


def dataset_seed(base_seed: int, d_in: int) -> int:
    return int(np.random.SeedSequence([base_seed, d_in]).generate_state(1)[0])


def _run_one(args):
    spec, data_cfg, train_cfg = args
    data = make_dataset(replace(data_cfg, d_in=spec.d_in, r_inner=None, r_outer=None,
                                seed=dataset_seed(data_cfg.seed, spec.d_in)))
    widths = [spec.d_in] + [spec.width] * spec.depth + [2]
    cfg = replace(train_cfg, layer_widths=widths, seed=spec.seed)
    net, rec = train(init_mlp(widths, cfg.activation, spec.seed), data, cfg)
    rec.meta = asdict(spec)
    return net, rec


def sweep(dims=(2, 3), depths=(1, 2), width_offsets=(0, 1), repeats: int = 10, base_seed: int = 0,
          data_cfg: SphereDatasetConfig | None = None, train_cfg: TrainConfig | None = None,
          workers: int = 1, keep_nets: bool = False):
    """Train one network per (dim, depth, width offset, repeat).

    Returns the list of RunRecords (and the trained nets when ``keep_nets``).
    Run ``i`` uses seed ``base_seed ^ i``; each dimension's dataset is seeded
    from ``(data_cfg.seed, d_in)`` and shared by its runs.
    """
    data_cfg = data_cfg or SphereDatasetConfig(seed=base_seed)
    train_cfg = train_cfg or TrainConfig(layer_widths=[])
    jobs = [(spec, data_cfg, train_cfg) for spec in plan_sweep(dims, depths, width_offsets, repeats, base_seed)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    records = [rec for _, rec in results]
    if keep_nets:
        return records, [net for net, _ in results]
    return records


def aggregate(records) -> list[dict]:
    """Success rate per (d_in, depth, width) setting, in first-seen order."""
    table = {}
    for rec in records:
        key = (rec.meta["d_in"], rec.meta["depth"], rec.meta["width"])
        row = table.setdefault(key, {"d_in": key[0], "depth": key[1], "width": key[2],
                                     "runs": 0, "successes": 0, "best_test_acc": 0.0})
        row["runs"] += 1
        row["successes"] += int(rec.reached_100)
        row["best_test_acc"] = max(row["best_test_acc"], rec.max_test_accuracy)
    for row in table.values():
        row["success_rate"] = row["successes"] / row["runs"]
    return list(table.values())


def records_csv(records, record_time: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        m = rec.meta
        w.writerow([m["d_in"], m["depth"], m["width"], m["repeat"], m["seed"],
                    repr(rec.max_test_accuracy), int(rec.reached_100), rec.epochs_run,
                    f"{rec.wall_time_s:.3f}" if record_time else "0.000"])
    return buf.getvalue()


def inner_region_touches_boundary(net: Network, cfg: SphereDatasetConfig, resolution: int = 128,
                                  escalate: bool = True) -> bool:
    """Whether every inner-class (code 0) grid component reaches the edge of the data box.

    As in the boundary-touch suite, a miss is re-checked once at double resolution.
    """
    from .regions import analyze

    r = 1.1 * cfg.r_outer
    for res in (resolution, 2 * resolution) if escalate else (resolution,):
        if all(c.touches_boundary for c in analyze(net, (-r, r), res).components_of(0)):
            return True
    return False
