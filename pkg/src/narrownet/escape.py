"""Escape certificates: a polyline plus terminal ray inside one decision region.

For ReLU networks with invertible square hidden weights the construction
alternates two moves:

* some hidden unit is non-positive: take the lowest layer ``l`` that has one
  and push that unit's preactivation further down.  ReLU clamps it to zero, so
  every later layer, and hence ``F``, is unchanged.  The move is pulled back to
  input space through the (active, hence affine and invertible) layers below
  ``l`` until one of their units hits zero, which becomes the next pivot.
* all hidden units are active: the hidden map is affine and invertible, so a
  recession direction of the output-layer polyhedron is pulled back until some
  unit hits zero.

Each pivot sits in a strictly lower layer than the last, so a ReLU certificate
has at most ``L`` segments.  For leaky ReLU the hidden map is a piecewise-affine
bijection and the recession ray is pulled back piece by piece.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (DegeneratePatternError, IncompleteCertificateError, MalformedCertificateError,
                     PreconditionError, SchemaError, UnsupportedError)
from .geometry import Polyhedron, lu_factor, lu_solve, omega_polyhedron, unbounded_direction
from .net_core import Network, decide, decide_batch, forward_trace, hidden_output

ZERO_TOL = 1e-9


@dataclass
class AffinePiece:
    matrix: np.ndarray
    offset: np.ndarray
    validity: Polyhedron

    def __call__(self, x):
        return np.asarray(x) @ self.matrix.T + self.offset


def affine_collapse(net: Network, x0) -> AffinePiece:
    """The affine map that agrees with ``F`` on the activation region of ``x0``."""
    if not net.activation.piecewise_linear:
        raise UnsupportedError("affine collapse needs relu or leaky_relu")
    x0 = np.asarray(x0, dtype=np.float64)
    trace = forward_trace(net, x0)
    A = np.eye(net.d_in)
    c = np.zeros(net.d_in)
    rows, offs = [], []
    for j, (layer, z) in enumerate(zip(net.hidden, trace.preactivations)):
        if np.any(z == 0):
            raise DegeneratePatternError(f"hidden layer {j} has a zero preactivation at x0")
        Az = layer.weights @ A
        cz = layer.weights @ c + layer.bias
        active = z > 0
        s = np.where(active, 1.0, -1.0)
        rows.append(-s[:, None] * Az)
        offs.append(s * cz)
        slope = net.activation.slopes(active)
        A, c = slope[:, None] * Az, slope * cz
    M = net.output.weights @ A
    off = net.output.weights @ c + net.output.bias
    validity = Polyhedron(np.vstack(rows), np.concatenate(offs)) if rows else Polyhedron.whole_space(net.d_in)
    return AffinePiece(M, off, validity)


@dataclass
class EscapeCertificate:
    cls: object
    vertices: list
    direction: np.ndarray
    analytic_terminal: bool = False
    verified_radius: float = 0.0
    segment_count: int = 0
    pivots: list = field(default_factory=list)  # (layer, unit) at each internal vertex and the terminal

    @property
    def terminal(self) -> np.ndarray:
        return self.vertices[-1]

    def to_dict(self) -> dict:
        return {
            "class": self.cls,
            "vertices": [np.asarray(v).tolist() for v in self.vertices],
            "direction": np.asarray(self.direction).tolist(),
            "analytic_terminal": self.analytic_terminal,
            "verified_radius": self.verified_radius,
            "segment_count": self.segment_count,
            "pivots": [list(p) if p is not None else None for p in self.pivots],
        }

    @classmethod
    def from_dict(cls, doc) -> "EscapeCertificate":
        try:
            return cls(
                cls=doc["class"],
                vertices=[np.asarray(v, dtype=np.float64) for v in doc["vertices"]],
                direction=np.asarray(doc["direction"], dtype=np.float64),
                analytic_terminal=bool(doc.get("analytic_terminal", False)),
                verified_radius=float(doc.get("verified_radius", 0.0)),
                segment_count=int(doc.get("segment_count", len(doc["vertices"]))),
                pivots=[tuple(p) if p is not None else None for p in doc.get("pivots", [])],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError("certificate", f"malformed document ({exc})") from None

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def deserialize(cls, text: str) -> "EscapeCertificate":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SchemaError("certificate", f"not valid JSON ({exc.msg})") from None


@dataclass
class VerificationReport:
    constant_class: bool
    max_radius_checked: float
    violations: int

    def to_dict(self) -> dict:
        return {"constant_class": self.constant_class,
                "max_radius_checked": self.max_radius_checked,
                "violations": self.violations}


def _first_crossing(values, rates):
    """Smallest ``t > 0`` at which some ``value + t * rate`` reaches zero from above."""
    best, arg = np.inf, None
    for j, (z, r) in enumerate(zip(values, rates)):
        hit = (z > 0) & (r < 0)
        if np.any(hit):
            t = np.where(hit, z / np.where(hit, -r, 1.0), np.inf)
            i = int(np.argmin(t))
            if t[i] < best:
                best, arg = float(t[i]), (j, i)
    return best, arg


def _relu_escape(net, x0, cls, omega, factors, max_segments):
    x = x0
    vertices, pivots = [x0], []
    pivot = None
    n_hidden = len(net.hidden)
    for _ in range(max_segments):
        zs = forward_trace(net, x).preactivations[:n_hidden]
        low = None
        for j, z in enumerate(zs):
            tol = ZERO_TOL * (1.0 + float(np.max(np.abs(z))))
            if np.any(z <= tol):
                low = j
                break
        if low is not None:
            z = zs[low]
            if pivot is not None and pivot[0] == low:
                k = pivot[1]
            else:
                k = int(np.argmin(z))  # most negative; argmin breaks ties by lowest index
            top = -np.eye(len(z))[k]
            rates, dx = _pull_back_below(factors, top, low)
            t, hit = _first_crossing(zs[:low], rates)
            pivots.append((low, k))
        else:
            y = hidden_output(net, x)
            u = unbounded_direction(omega, y)
            rates, dx = _pull_back_below(factors, u, n_hidden)
            t, hit = _first_crossing(zs, rates)
            pivots.append(None)
        if not np.isfinite(t):
            return vertices, dx, pivots
        x = x + t * dx
        vertices.append(x)
        pivot = hit
    raise IncompleteCertificateError(f"no terminal ray within {max_segments} segments", vertices)


def _pull_back_below(factors, top_rate, layer):
    """Input-space rate when the preactivation of hidden layer ``layer`` moves at ``top_rate``.

    ``layer == len(factors)`` means the rate is given for the last hidden
    activation.  Layers below ``layer`` are assumed active (identity regime).
    Returns their preactivation rates and the input rate.
    """
    rates = [None] * layer
    if layer < len(factors):
        g = lu_solve(factors[layer], top_rate)
    else:
        g = np.asarray(top_rate, dtype=np.float64)
    for m in range(layer - 1, -1, -1):
        rates[m] = g
        g = lu_solve(factors[m], g)
    return rates, g


def _extend(times, values, t):
    """Values of a piecewise-linear path at ``t``; linear extrapolation past the last time."""
    if t <= times[-1]:
        return np.array([np.interp(t, times, values[:, i]) for i in range(values.shape[1])])
    slope = (values[-1] - values[-2]) / (times[-1] - times[-2])
    return values[-1] + (t - times[-1]) * slope


def _leaky_escape(net, x0, cls, omega, factors, max_segments):
    """Pull the straight output-space ray back through the (bijective) hidden layers.

    Each layer's path is tracked by its values at the breakpoint parameters
    plus one probe past the last breakpoint; the path is linear between them.
    Zero crossings of a layer's activation are new breakpoints for every layer
    below.  Vertices are computed from the top at each breakpoint, so rounding
    does not accumulate along the polyline.
    """
    beta = net.activation.beta
    y0 = hidden_output(net, x0)
    u = unbounded_direction(omega, y0)
    times = np.array([0.0, 1.0])
    values = np.vstack([y0, y0 + u])
    for m in range(len(net.hidden) - 1, -1, -1):
        cross = []
        for k in range(len(times) - 1):
            a, b = values[k], values[k + 1]
            hit = (a * b < 0)
            cross.extend(times[k] + (times[k + 1] - times[k]) * a[hit] / (a[hit] - b[hit]))
        a, b = values[-2], values[-1]
        later = (b != a) & (b * (b - a) < 0)  # still heading towards zero after the probe
        cross.extend(times[-1] + b[later] / (a[later] - b[later]) * (times[-1] - times[-2]))
        knots = np.unique(np.concatenate([times[:-1], cross]))
        if len(knots) > max_segments:
            raise IncompleteCertificateError(f"more than {max_segments} breakpoints on the pulled-back ray",
                                             [x0])
        grid = np.append(knots, knots[-1] + 1.0)
        values = np.vstack([_extend(times, values, t) for t in grid])
        times = grid
        z = np.where(values >= 0, values, values / beta)
        layer = net.hidden[m]
        values = np.vstack([lu_solve(factors[m], row - layer.bias) for row in z])
    vertices = [x0] + [v for v in values[1:-1]]
    return vertices, values[-1] - values[-2], [None] * len(vertices)


def escape_certificate(net: Network, x0, R_max: float = 1e3, max_segments: int = 32,
                       samples_per_segment: int = 64) -> EscapeCertificate:
    """Build and verify a certificate that the decision-region component of ``x0`` is unbounded."""
    act = net.activation
    if not act.piecewise_linear:
        raise UnsupportedError("escape certificates need relu or leaky_relu activation")
    x0 = np.array(x0, dtype=np.float64)
    if x0.shape != (net.d_in,):
        raise PreconditionError(f"seed must have length {net.d_in}")
    factors = []
    for j, layer in enumerate(net.hidden):
        if layer.d_out != layer.d_in or layer.d_in != net.d_in:
            raise PreconditionError(f"hidden layer {j} is not {net.d_in}x{net.d_in}; pad and invertibilize first")
        f = lu_factor(layer.weights)
        if not f.ok:
            raise PreconditionError(f"hidden layer {j} weight matrix is not invertible")
        factors.append(f)
    cls = decide(net, x0)
    if cls is None:
        raise PreconditionError("seed point lies on a decision boundary (tie)")
    omega = omega_polyhedron(net.output, cls)
    if act.kind == "relu":
        vertices, dx, pivots = _relu_escape(net, x0, cls, omega, factors, max_segments)
    else:
        vertices, dx, pivots = _leaky_escape(net, x0, cls, omega, factors, max_segments)
    norm = np.linalg.norm(dx)
    if norm == 0:
        raise IncompleteCertificateError("terminal direction vanished", vertices)
    cert = EscapeCertificate(cls=cls, vertices=vertices, direction=dx / norm,
                             segment_count=len(vertices), pivots=pivots)
    cert.analytic_terminal = _terminal_is_analytic(net, cert, omega)
    report = verify_certificate(net, cert, samples_per_segment, R_max)
    if not report.constant_class:
        raise IncompleteCertificateError(
            f"certificate failed verification with {report.violations} violations", vertices)
    cert.verified_radius = report.max_radius_checked
    return cert


def _terminal_is_analytic(net, cert, omega) -> bool:
    """Whether the activation pattern and winning margins are fixed along the whole ray.

    Propagates the ray direction through the pattern at the terminal vertex:
    active units must not decrease, inactive units must not increase, and the
    output-polyhedron rows must not grow.  Together these make the class
    constant for every ``t >= 0``.
    """
    zs = forward_trace(net, cert.terminal).preactivations
    da = np.asarray(cert.direction, dtype=np.float64)
    for layer, z in zip(net.hidden, zs):
        dz = layer.weights @ da
        ztol = ZERO_TOL * (1.0 + float(np.max(np.abs(z))))
        dtol = ZERO_TOL * (1.0 + float(np.max(np.abs(dz))))
        active = z > ztol
        if np.any(active & (dz < -dtol)) or np.any(~active & (dz > dtol)):
            return False
        da = net.activation.slopes(active) * dz
    margin = omega.rows @ da
    return bool(np.all(margin <= ZERO_TOL * (1.0 + float(np.max(np.abs(da), initial=0.0)))))


def ray_points(cert: EscapeCertificate, samples: int, R_max: float):
    """Terminal-ray sample points at geometrically growing distances."""
    base = cert.terminal
    reach = R_max * (1.0 + float(np.linalg.norm(base)))
    lam = np.concatenate([[0.0], np.geomspace(1e-6, reach, max(samples, 2))])
    return base + lam[:, None] * cert.direction


def verify_certificate(net: Network, cert: EscapeCertificate, samples: int = 64,
                       R_max: float = 1e3) -> VerificationReport:
    """Re-evaluate the class along every segment and far out along the terminal ray."""
    if not cert.vertices:
        raise MalformedCertificateError("certificate has no vertices")
    direction = np.asarray(cert.direction, dtype=np.float64)
    if direction.shape != (net.d_in,) or not np.any(direction):
        raise MalformedCertificateError("terminal direction must be a nonzero vector of input dimension")
    code = net.class_code(cert.cls)
    pts = [np.asarray(cert.vertices[0], dtype=np.float64)[None, :]]
    s = np.linspace(0.0, 1.0, max(samples, 2))[:, None]
    for a, b in zip(cert.vertices[:-1], cert.vertices[1:]):
        pts.append(np.asarray(a) + s * (np.asarray(b) - np.asarray(a)))
    unit = EscapeCertificate(cert.cls, cert.vertices, direction / np.linalg.norm(direction))
    ray = ray_points(unit, samples, R_max)
    pts.append(ray)
    pts = np.vstack(pts)
    codes = decide_batch(net, pts)
    violations = int(np.sum(codes != code))
    return VerificationReport(violations == 0, float(np.max(np.linalg.norm(ray, axis=1))), violations)


def forward_exact(net: Network, x) -> list[Fraction]:
    """``F(x)`` in exact rational arithmetic on the stored doubles (relu / leaky only)."""
    if not net.activation.piecewise_linear:
        raise UnsupportedError("exact evaluation needs a piecewise-linear activation")
    beta = Fraction(net.activation.beta) if net.activation.kind == "leaky_relu" else Fraction(0)

    def affine(layer, a):
        W = [[Fraction(float(w)) for w in row] for row in layer.weights]
        b = [Fraction(float(v)) for v in layer.bias]
        return [sum((wi * ai for wi, ai in zip(row, a)), Fraction(0)) + bi for row, bi in zip(W, b)]

    a = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in x]
    for layer in net.hidden:
        a = [z if z > 0 else beta * z for z in affine(layer, a)]
    return affine(net.output, a)
