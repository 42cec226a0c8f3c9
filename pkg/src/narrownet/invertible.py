"""Replace the hidden weights of a narrow network by nearby invertible ones.

``invertibilize_network`` pads every hidden layer to ``d_in x d_in``, then
perturbs each singular matrix by a multiple of the identity.  The per-layer
perturbation budget is derived from the Lipschitz constant of the activation,
the operator norms of the downstream layers and the sampled size of the
activations entering the layer; the sup error on the box is then measured on a
quasi-random point set and budgets are halved until it is below target.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import ConvergenceError, InputError, PreconditionError, UnsupportedError
from .geometry import lu_factor, op_norm
from .net_core import Layer, Network, forward, width

MAX_HALVINGS = 8


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=np.float64).reshape(-1)
        hi = np.array(self.hi, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise InputError("box bounds must be non-empty vectors of equal length")
        if not np.all(lo < hi):
            raise InputError("box needs lo < hi on every axis")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, dim: int) -> "Box":
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def corners(self) -> np.ndarray:
        bits = (np.arange(2 ** self.dim)[:, None] >> np.arange(self.dim)) & 1
        return np.where(bits == 1, self.hi, self.lo)

    def sample_points(self, n: int) -> np.ndarray:
        """``n`` Halton points plus all corners, deterministic."""
        lattice = qmc.Halton(self.dim, scramble=False).random(n)
        pts = self.lo + lattice * (self.hi - self.lo)
        return np.vstack([self.corners(), pts])

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass
class PerturbationReport:
    per_layer_budget: list = field(default_factory=list)
    per_layer_op_distance: list = field(default_factory=list)
    min_singular_values: list = field(default_factory=list)
    measured_sup_error: float = 0.0
    sample_count: int = 0
    target_eps: float = 0.0
    attempts: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def _min_singular(W) -> float:
    return float(np.linalg.svd(W, compute_uv=False)[-1])


def _invertible(W) -> bool:
    if not lu_factor(W).ok:
        return False
    s = np.linalg.svd(W, compute_uv=False)
    return s[-1] > 1e-12 * s[0]


def perturb_invertible(W, delta: float) -> np.ndarray:
    """Nearest-to-hand invertible matrix within operator distance ``delta``.

    Invertible input is returned unchanged; otherwise ``W + t I`` for the first
    ``t`` in ``delta/2, delta/4, ...`` that passes the pivot test.  ``W + t I``
    is singular only when ``-t`` is an eigenvalue, so the search ends quickly.
    """
    W = np.array(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InputError(f"perturb_invertible needs a square matrix, got {W.shape}")
    if not delta > 0:
        raise PreconditionError("delta must be positive")
    if _invertible(W):
        return W
    eye = np.eye(W.shape[0])
    t = delta / 2
    for _ in range(200):
        candidate = W + t * eye
        if _invertible(candidate):
            return candidate
        t /= 2
    raise ConvergenceError("no invertible shift found")  # pragma: no cover


def pad_square(net: Network) -> Network:
    """Zero-pad every hidden layer to ``d_in x d_in``; outputs are unchanged bit for bit."""
    d = net.d_in
    if width(net) > d:
        raise UnsupportedError(f"width {width(net)} exceeds input dimension {d}")
    hidden = []
    for layer in net.hidden:
        w = np.zeros((d, d))
        w[:layer.d_out, :layer.d_in] = layer.weights
        b = np.zeros(d)
        b[:layer.d_out] = layer.bias
        hidden.append(Layer(w, b))
    out = net.output
    if net.hidden:
        w = np.zeros((out.d_out, d))
        w[:, :out.d_in] = out.weights
        out = Layer(w, out.bias)
    return Network(tuple(hidden), out, net.activation)


def _layer_budgets(net: Network, pts, eps):
    """Per-layer perturbation budgets for a padded network."""
    lip = net.activation.lipschitz
    norms = [op_norm(layer.weights) for layer in net.layers]
    radii = []
    a = pts
    for layer in net.hidden:
        radii.append(1.0 + float(np.max(np.linalg.norm(a, axis=1))))
        a = net.activation(layer.apply(a))
    h = len(net.hidden)
    budgets = []
    for l in range(h):
        downstream = np.prod([max(1.0, lip * n) for n in norms[l + 1:]])
        budgets.append(eps / (h * downstream * radii[l]))
    return np.array(budgets)


def invertibilize_network(net: Network, box: Box, eps: float, sample_budget: int = 10_000):
    """Return ``(net_tilde, report)`` with invertible square hidden weights.

    ``max ||F_tilde(x) - F(x)||`` over the box sample set is below ``eps``. The
    output layer is only zero-padded, never perturbed.
    """
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if box.dim != net.d_in:
        raise InputError("box dimension must equal the network input dimension")
    padded = pad_square(net)
    pts = box.sample_points(sample_budget)
    reference = forward(net, pts)
    report = PerturbationReport(sample_count=len(pts), target_eps=float(eps))
    if not padded.hidden:
        return padded, report
    budgets = _layer_budgets(padded, pts, eps)
    for attempt in range(MAX_HALVINGS + 1):
        hidden = [Layer(perturb_invertible(layer.weights, float(delta)), layer.bias)
                  for layer, delta in zip(padded.hidden, budgets)]
        candidate = Network(tuple(hidden), padded.output, padded.activation)
        err = float(np.max(np.linalg.norm(forward(candidate, pts) - reference, axis=1)))
        report.per_layer_budget = budgets.tolist()
        report.per_layer_op_distance = [op_norm(new.weights - old.weights)
                                        for new, old in zip(hidden, padded.hidden)]
        report.min_singular_values = [_min_singular(layer.weights) for layer in hidden]
        report.measured_sup_error = err
        report.attempts = attempt + 1
        if err < eps:
            return candidate, report
        budgets = budgets / 2
    raise ConvergenceError(f"sup error {err:.3g} still >= {eps:g} after {MAX_HALVINGS} halvings", report)


def shift_output_bias(net: Network, component: int, eps: float) -> Network:
    """Lower output component ``component`` by ``eps / 2`` everywhere.

    Shrinks that class's decision region while staying within ``eps / 2`` of
    the original function.
    """
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if isinstance(component, bool) or not isinstance(component, (int, np.integer)) \
            or not 0 <= component < net.d_out:
        raise InputError(f"output component must be in 0..{net.d_out - 1}, got {component!r}")
    b = net.output.bias.copy()
    b[component] -= eps / 2
    return Network(net.hidden, Layer(net.output.weights, b), net.activation)
