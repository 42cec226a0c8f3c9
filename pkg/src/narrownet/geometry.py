"""Dense linear algebra on small matrices and open polyhedra ``{x : Mx < c}``.

Rank decisions use Gaussian elimination with partial pivoting and a pivot
threshold relative to the largest matrix entry, so the same matrix always gets
the same verdict regardless of the LAPACK build.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, PreconditionError, UnsupportedError

DEFAULT_TOL = 1e-10


def _matrix(M) -> np.ndarray:
    M = np.array(M, dtype=np.float64)
    if M.ndim != 2:
        raise InputError(f"expected a matrix, got shape {M.shape}")
    return M


def op_norm(M) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass
class LUFactor:
    lu: np.ndarray
    perm: np.ndarray
    ok: bool  # every pivot cleared the threshold


def lu_factor(M, tol: float = DEFAULT_TOL) -> LUFactor:
    """Doolittle LU with partial pivoting: ``M[perm] = L @ U``."""
    A = _matrix(M)
    n = A.shape[0]
    if A.shape[1] != n:
        raise InputError(f"LU needs a square matrix, got {A.shape}")
    perm = np.arange(n)
    scale = np.max(np.abs(A)) if A.size else 0.0
    thresh = tol * scale
    ok = scale > 0
    for k in range(n):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) <= thresh:
            ok = False
            break
        if p != k:
            A[[k, p]] = A[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        A[k + 1:, k] /= A[k, k]
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return LUFactor(A, perm, ok)


def lu_solve(f: LUFactor, b) -> np.ndarray:
    if not f.ok:
        raise PreconditionError("matrix is numerically singular")
    lu = f.lu
    n = lu.shape[0]
    y = np.array(b, dtype=np.float64)[f.perm]
    for i in range(n):
        y[i] -= lu[i, :i] @ y[:i]
    for i in range(n - 1, -1, -1):
        y[i] = (y[i] - lu[i, i + 1:] @ y[i + 1:]) / lu[i, i]
    return y


def is_invertible(M, tol: float = DEFAULT_TOL) -> bool:
    M = _matrix(M)
    return M.shape[0] == M.shape[1] and lu_factor(M, tol).ok


def solve(M, b, tol: float = DEFAULT_TOL) -> np.ndarray:
    return lu_solve(lu_factor(M, tol), b)


def row_reduce(M, tol: float = DEFAULT_TOL):
    """Reduced row echelon form and the list of pivot columns."""
    A = _matrix(M)
    n, d = A.shape
    thresh = tol * (np.max(np.abs(A)) if A.size else 0.0)
    pivots = []
    r = 0
    for c in range(d):
        if r == n:
            break
        p = r + int(np.argmax(np.abs(A[r:, c])))
        if abs(A[p, c]) <= thresh:
            A[r:, c] = 0.0
            continue
        if p != r:
            A[[r, p]] = A[[p, r]]
        A[r] /= A[r, c]
        others = np.arange(n) != r
        A[others] -= np.outer(A[others, c], A[r])
        A[others, c] = 0.0
        pivots.append(c)
        r += 1
    return A, pivots


def rank(M, tol: float = DEFAULT_TOL) -> int:
    M = _matrix(M)
    if M.size == 0 or not np.any(M):
        return 0
    return len(row_reduce(M, tol)[1])


def nullspace(M, tol: float = DEFAULT_TOL) -> list[np.ndarray]:
    """Orthonormal basis of ``{v : Mv = 0}`` at numerical rank ``tol``."""
    M = _matrix(M)
    d = M.shape[1]
    if M.shape[0] == 0 or not np.any(M):
        return list(np.eye(d))
    R, pivots = row_reduce(M, tol)
    free = [c for c in range(d) if c not in pivots]
    if not free:
        return []
    B = np.zeros((d, len(free)))
    for j, f in enumerate(free):
        B[f, j] = 1.0
        for i, p in enumerate(pivots):
            B[p, j] = -R[i, f]
    Q = np.linalg.qr(B)[0]
    return [Q[:, j].copy() for j in range(Q.shape[1])]


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """The open set ``{x : rows @ x < offsets}``; no rows means all of R^d."""

    rows: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        offsets = np.array(self.offsets, dtype=np.float64).reshape(-1)
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise InputError(f"rows must be n x d with d >= 1, got {rows.shape}")
        if rows.shape[0] != offsets.shape[0]:
            raise InputError("one offset per row is required")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @classmethod
    def whole_space(cls, d: int) -> "Polyhedron":
        return cls(np.zeros((0, d)), np.zeros(0))


def contains(poly: Polyhedron, y) -> bool | np.ndarray:
    """Strict membership; ``y`` may be a point or a batch of row vectors."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != poly.dim:
        raise InputError(f"point has dimension {y.shape[-1]}, polyhedron {poly.dim}")
    if poly.rows.shape[0] == 0:
        return True if y.ndim == 1 else np.ones(y.shape[0], dtype=bool)
    inside = np.all(y @ poly.rows.T < poly.offsets, axis=-1)
    return bool(inside) if y.ndim == 1 else inside


def unbounded_direction(poly: Polyhedron, x) -> np.ndarray:
    """A nonzero ``v`` with ``rows @ v <= 0``, so ``x + t v`` stays inside for ``t >= 0``.

    With as many rows as dimensions and an invertible row matrix, ``v = x - w``
    where ``w`` solves ``rows @ w = offsets``; otherwise ``v`` is a kernel vector
    of the rows.
    """
    M, c = poly.rows, poly.offsets
    n, d = M.shape
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (d,):
        raise InputError(f"point must have length {d}")
    if n > d:
        raise UnsupportedError(f"{n} constraints in dimension {d}: a bounded cell is possible")
    if not contains(poly, x):
        raise PreconditionError("point is not strictly inside the polyhedron")
    if n == 0:
        return np.eye(d)[0]
    if n == d:
        f = lu_factor(M)
        if f.ok:
            w = lu_solve(f, c)
            return x - w
    basis = nullspace(M)
    if basis:
        return basis[0]
    # pivot threshold and elimination disagreed at the margin; take the weakest direction
    return np.linalg.svd(M)[2][-1]


def omega_polyhedron(output_layer, cls) -> Polyhedron:
    """Region of the last hidden space where output class ``cls`` wins.

    For vector outputs ``cls`` is the 0-based component index; for scalar
    output it is ``"neg"`` (``W y + b < 0``) or ``"pos"``.
    """
    W, b = output_layer.weights, output_layer.bias
    m = W.shape[0]
    if m == 1:
        if cls == "neg":
            return Polyhedron(W.copy(), -b)
        if cls == "pos":
            return Polyhedron(-W, b.copy())
        raise InputError(f"scalar-output class must be 'neg' or 'pos', got {cls!r}")
    if isinstance(cls, bool) or not isinstance(cls, (int, np.integer)) or not 0 <= cls < m:
        raise InputError(f"class index must be in 0..{m - 1}, got {cls!r}")
    others = [k for k in range(m) if k != cls]
    return Polyhedron(W[others] - W[cls], b[cls] - b[others])
