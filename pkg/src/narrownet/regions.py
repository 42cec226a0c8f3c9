"""Grid-based decision-region topology.

Cells of a uniform grid over a box are classified at their centers, then
face-adjacent cells of equal class are merged with a vectorized union-find.
Component ids are the flat (C-order) index of the component's smallest cell,
so labels do not depend on traversal order or on how classification was
chunked.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, PreconditionError, UnsupportedError
from .geometry import rank
from .invertible import Box
from .net_core import ActivationKind, Layer, Network, RELU, decide_batch, leaky, random_network

MAX_LABEL_DIM = 4
CHUNK = 1 << 20


@dataclass
class Component:
    id: int
    cls: object
    cell_count: int
    touches_boundary: bool
    seed_cell: tuple

    def to_dict(self) -> dict:
        return {"id": self.id, "cells": self.cell_count, "touches_boundary": self.touches_boundary,
                "seed_cell": list(self.seed_cell)}


@dataclass
class LabeledGrid:
    box: Box
    resolution: int
    labels: list                     # class label for each code
    cell_class: np.ndarray           # code per cell, -1 on ties
    cell_component: np.ndarray | None = None
    components: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.box.dim

    def components_of(self, cls) -> list:
        return [c for c in self.components if c.cls == cls]

    def component_counts(self) -> dict:
        return {label: len(self.components_of(label)) for label in self.labels}

    def cell_centers(self, index) -> np.ndarray:
        step = (self.box.hi - self.box.lo) / self.resolution
        return self.box.lo + (np.asarray(index) + 0.5) * step

    def report(self) -> dict:
        classes = {}
        for label in self.labels:
            comps = self.components_of(label)
            classes[str(label)] = {"components": [c.to_dict() for c in comps]}
        return {"box": self.box.to_dict(), "resolution": self.resolution, "classes": classes}


def _as_box(box, dim) -> Box:
    if isinstance(box, Box):
        return box
    lo, hi = box
    return Box.cube(lo, hi, dim)


def _threads(threads):
    if threads is None or threads <= 0:
        import os
        return os.cpu_count() or 1
    return threads


def classify_grid(net: Network, box, resolution: int, threads: int = 1) -> LabeledGrid:
    """Class code of every cell center; ties get code ``-1``."""
    box = _as_box(box, net.d_in)
    if resolution < 2:
        raise InputError("resolution must be at least 2")
    if box.dim != net.d_in:
        raise InputError(f"box has dimension {box.dim}, network input {net.d_in}")
    if box.dim > MAX_LABEL_DIM:
        raise UnsupportedError(f"grid labeling supports at most {MAX_LABEL_DIM} input dimensions")
    d = box.dim
    shape = (resolution,) * d
    n = resolution ** d
    axes = [box.lo[k] + (np.arange(resolution) + 0.5) * (box.hi[k] - box.lo[k]) / resolution
            for k in range(d)]
    codes = np.empty(n, dtype=np.int8 if net.d_out < 127 else np.int32)

    def work(start):
        stop = min(start + CHUNK, n)
        idx = np.unravel_index(np.arange(start, stop), shape)
        pts = np.stack([axes[k][idx[k]] for k in range(d)], axis=1)
        codes[start:stop] = decide_batch(net, pts)

    starts = range(0, n, CHUNK)
    workers = _threads(threads)
    if workers > 1 and n > CHUNK:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, starts))
    else:
        for s in starts:
            work(s)
    return LabeledGrid(box, resolution, net.class_labels(), codes.reshape(shape))


def _compress(parent):
    while True:
        grand = parent[parent]
        if np.array_equal(grand, parent):
            return parent
        parent = grand


def union_find_labels(codes: np.ndarray) -> np.ndarray:
    """Root (smallest flat index) of each cell's equal-code face-connected set.

    Cells with a negative code get ``-1``.  Roots are hooked onto the smaller
    root across every unsettled edge, then paths are fully compressed; repeat
    until every edge joins cells with the same root.
    """
    shape = codes.shape
    flat = codes.ravel()
    n = flat.size
    idx = np.arange(n).reshape(shape)
    parent = np.arange(n)
    # runs along the last (contiguous) axis: link each cell straight to its left neighbour
    left, right = idx[..., :-1].ravel(), idx[..., 1:].ravel()
    same = (flat[left] == flat[right]) & (flat[left] >= 0)
    parent[right[same]] = left[same]
    us, vs = [], []
    for axis in range(codes.ndim - 1):
        a = np.take(idx, np.arange(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, np.arange(1, shape[axis]), axis=axis).ravel()
        keep = (flat[a] == flat[b]) & (flat[a] >= 0)
        us.append(a[keep])
        vs.append(b[keep])
    u = np.concatenate(us) if us else np.zeros(0, dtype=np.int64)
    v = np.concatenate(vs) if vs else np.zeros(0, dtype=np.int64)
    parent = _compress(parent)
    while u.size:
        pu, pv = parent[u], parent[v]
        open_ = pu != pv
        u, v, pu, pv = u[open_], v[open_], pu[open_], pv[open_]
        if not u.size:
            break
        np.minimum.at(parent, np.maximum(pu, pv), np.minimum(pu, pv))
        parent = _compress(parent)
    return np.where(flat >= 0, parent, -1).reshape(shape)


def boundary_mask(shape) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for axis in range(len(shape)):
        sl = [slice(None)] * len(shape)
        sl[axis] = 0
        mask[tuple(sl)] = True
        sl[axis] = -1
        mask[tuple(sl)] = True
    return mask


def label_components(grid: LabeledGrid) -> LabeledGrid:
    roots = union_find_labels(grid.cell_class)
    flat_roots = roots.ravel()
    labeled = flat_roots >= 0
    ids, counts = np.unique(flat_roots[labeled], return_counts=True)
    touching = set(np.unique(roots[boundary_mask(roots.shape) & (roots >= 0)]).tolist())
    flat_class = grid.cell_class.ravel()
    comps = []
    for cid, count in zip(ids.tolist(), counts.tolist()):
        comps.append(Component(
            id=cid,
            cls=grid.labels[int(flat_class[cid])],
            cell_count=count,
            touches_boundary=cid in touching,
            seed_cell=tuple(int(i) for i in np.unravel_index(cid, roots.shape)),
        ))
    grid.cell_component = roots
    grid.components = comps
    return grid


def analyze(net: Network, box, resolution: int, threads: int = 1) -> LabeledGrid:
    return label_components(classify_grid(net, box, resolution, threads))


# --- the two hand-built networks ---------------------------------------------

EXAMPLE_IDS = ("1", "2-literal", "2-corrected")


def build_example_net(example_id) -> Network:
    """The hand-built ReLU networks with disconnected negative regions.

    ``"1"``: 2 -> 2 -> 1, first layer a rotation by -pi/4.
    ``"2-literal"``: 2 -> 2 -> 2 -> 1 as printed, final bias +1/4.
    ``"2-corrected"``: same with final bias -1/4.
    Surds are stored as their closest doubles.
    """
    example_id = str(example_id)
    s = math.sqrt(2) / 2     # cos(pi/4) = 1/sqrt(2)
    r2 = math.sqrt(2)
    head = Layer([[s, -2 * r2]], [0.0])  # (1, -4) / sqrt(2)
    if example_id == "1":
        first = Layer([[s, s], [-s, s]], [r2, -s])
        return Network((first,), Layer(head.weights, [-0.25]), RELU)
    if example_id in ("2-literal", "2-corrected"):
        first = Layer(np.eye(2), [0.0, 0.0])
        second = Layer([[-s, s], [-s, -s]], [r2, s])
        b3 = 0.25 if example_id == "2-literal" else -0.25
        return Network((first, second), Layer(head.weights, [b3]), RELU)
    raise InputError(f"unknown example id {example_id!r}; expected one of {EXAMPLE_IDS}")


def bump_net() -> Network:
    """Width-3 ReLU net on R^2 whose negative region is a bounded island around 0.

    Three units along directions 120 degrees apart; their sum exceeds ``|x|``
    everywhere, so ``F = sum - 1/2`` is negative only inside a disc-like hexagon.
    """
    angles = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
    first = Layer(np.stack([np.cos(angles), np.sin(angles)], axis=1), np.zeros(3))
    return Network((first,), Layer([[1.0, 1.0, 1.0]], [-0.5]), RELU)


def example2_discrepancy(box=(-4.0, 4.0), resolution: int = 512) -> dict:
    """Negative-class component counts for both readings of the second example's final bias."""
    out = {}
    for variant in ("2-literal", "2-corrected"):
        grid = analyze(build_example_net(variant), box, resolution)
        neg = grid.components_of("neg")
        out[variant] = {
            "final_bias": float(build_example_net(variant).output.bias[0]),
            "neg_components": len(neg),
            "all_touch_boundary": all(c.touches_boundary for c in neg),
            "cells": [c.cell_count for c in neg],
        }
    matching = [v for v, r in out.items() if r["neg_components"] == 2 and r["all_touch_boundary"]]
    out["disconnected_variant"] = matching[0] if len(matching) == 1 else matching
    return out


# --- random corpora ---------------------------------------------------------

def random_narrow_net(rng, d_in: int, activation: ActivationKind = RELU, max_layers: int = 5,
                      bias_scale=0.5) -> Network:
    """Random net with 2..max_layers layers and every width at most ``d_in``."""
    depth = int(rng.integers(2, max_layers + 1))
    dims = [d_in] + [int(rng.integers(1, d_in + 1)) for _ in range(depth)]
    return random_network(rng, dims, activation, bias_scale=bias_scale)


def random_monotone_net(rng, d_in: int, activation: ActivationKind | None = None,
                        max_layers: int = 4, bias_scale=0.5) -> Network:
    """Random full-rank net with ``d_in = d_1 >= d_2 >= ... >= d_out >= 1``."""
    activation = activation or leaky(float(rng.uniform(0.05, 0.5)))
    depth = int(rng.integers(2, max_layers + 1))
    dims = [d_in, d_in]
    for _ in range(depth - 1):
        dims.append(int(rng.integers(1, dims[-1] + 1)))
    while True:
        net = random_network(rng, dims, activation, bias_scale=bias_scale)
        if all(rank(l.weights) == min(l.weights.shape) for l in net.layers):
            return net


# --- property suites ---------------------------------------------------------

@dataclass
class TouchReport:
    index: int
    resolution: int
    components: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"index": self.index, "resolution": self.resolution,
                "components": self.components, "violations": self.violations}


def _violations(grid: LabeledGrid) -> list:
    return [{"class": c.cls, "seed_cell": list(c.seed_cell), "cells": c.cell_count}
            for c in grid.components if not c.touches_boundary]


def boundary_touch_suite(nets, box, resolution: int, escalate: bool = True,
                         threads: int = 1) -> list[TouchReport]:
    """Flag every grid component that never reaches the outer cell layer.

    A net with violations is re-gridded once at double resolution before its
    violations are reported, since sub-cell channels can hide a boundary contact.
    """
    reports = []
    for i, net in enumerate(nets):
        if net.activation.kind not in ("relu", "leaky_relu", "tanh"):
            raise PreconditionError("activation must be relu, leaky_relu or tanh")
        res = resolution
        grid = analyze(net, _as_box(box, net.d_in), res, threads)
        bad = _violations(grid)
        if bad and escalate:
            res = 2 * resolution
            grid = analyze(net, _as_box(box, net.d_in), res, threads)
            bad = _violations(grid)
        reports.append(TouchReport(i, res, len(grid.components), bad))
    return reports


def check_monotone_hypotheses(net: Network) -> None:
    """Raise unless widths are nonincreasing from d_in, weights full rank, activation a bijection."""
    dims = net.dims
    if dims[1] != dims[0] or any(a < b for a, b in zip(dims[1:], dims[2:])):
        raise PreconditionError(f"widths must satisfy d_in = d_1 >= d_2 >= ... >= d_L, got {dims}")
    for j, layer in enumerate(net.layers):
        if rank(layer.weights) != min(layer.weights.shape):
            raise PreconditionError(f"layer {j} weight matrix is not full rank")
    if not (net.activation.strictly_increasing and net.activation.surjective):
        raise PreconditionError(
            f"activation {net.activation.kind} is not strictly increasing and surjective")


def connectivity_check_monotonic(net: Network, box, resolution: int, threads: int = 1,
                                 escalate: bool = True) -> bool:
    """True iff every class has at most one grid component.

    A split class triggers one re-grid at double resolution, as in the
    boundary-touch suite.  Note that this checks connectivity of the region
    clipped to ``box``, which can fail even when the region is connected.
    """
    check_monotone_hypotheses(net)
    box = _as_box(box, net.d_in)
    grid = analyze(net, box, resolution, threads)
    ok = all(n <= 1 for n in grid.component_counts().values())
    if not ok and escalate:
        grid = analyze(net, box, 2 * resolution, threads)
        ok = all(n <= 1 for n in grid.component_counts().values())
    return ok
