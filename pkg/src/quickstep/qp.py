"""Standard-form convex QP containers, KKT residuals, and text serialization.

The canonical problem shared by every solver in this package is

    minimize    0.5 * z' W z + g' z
    subject to  A z  = b
                P z <= f

with W symmetric positive definite.  ``CostStructure`` optionally records the
block/low-rank shape of W (a dense-plus-rank-2 first block and a diagonal
second block) that the active-set solver exploits.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

SYMMETRY_RTOL = 1e-12
KKT_TOL_DEFAULT = 1e-8


class SolveStatus(enum.Enum):
    OPTIMAL = "optimal"
    ITER_LIMIT = "iter_limit"
    SINGULAR_KKT = "singular_kkt"
    INFEASIBLE = "infeasible"


def _as_array(x, name: str, ndim: int) -> np.ndarray:
    a = np.array(x, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CostStructure:
    """Block/low-rank shape of the cost matrix W.

    The first ``split`` variables carry ``w_qdd * I + U' Qy U``; the remaining
    variables carry ``diag(d22)``.  Off-diagonal blocks are zero.
    """

    split: int
    w_qdd: float
    U: np.ndarray      # (2, split)
    Qy: np.ndarray     # (2, 2) symmetric positive definite
    d22: np.ndarray    # (n - split,) positive diagonal of the second block

    def __post_init__(self):
        object.__setattr__(self, "U", _as_array(self.U, "U", 2))
        object.__setattr__(self, "Qy", _as_array(self.Qy, "Qy", 2))
        object.__setattr__(self, "d22", _as_array(self.d22, "d22", 1))
        if self.split < 0 or self.U.shape != (2, self.split):
            raise ValueError(f"U must be (2, {self.split}), got {self.U.shape}")
        if self.Qy.shape != (2, 2):
            raise ValueError(f"Qy must be 2x2, got {self.Qy.shape}")
        if self.w_qdd <= 0.0:
            raise ValueError("w_qdd must be positive")
        if np.max(np.abs(self.Qy - self.Qy.T)) > SYMMETRY_RTOL * max(1.0, np.max(np.abs(self.Qy))):
            raise ValueError("Qy must be symmetric")
        if np.linalg.eigvalsh(self.Qy)[0] <= 0.0:
            raise ValueError("Qy must be positive definite")
        if np.any(self.d22 <= 0.0):
            raise ValueError("d22 entries must be positive")

    @property
    def n(self) -> int:
        return self.split + self.d22.size

    def materialize(self) -> np.ndarray:
        """Dense W implied by the structure."""
        n1 = self.split
        W = np.zeros((self.n, self.n))
        W[:n1, :n1] = self.w_qdd * np.eye(n1) + self.U.T @ self.Qy @ self.U
        W[n1:, n1:] = np.diag(self.d22)
        return W


@dataclass(frozen=True)
class ActiveSet:
    """Strictly increasing inequality-row indices assumed active."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if any(i < 0 for i in idx):
            raise ValueError("active-set indices must be nonnegative")
        if len(set(idx)) != len(idx):
            raise ValueError("active-set indices must be unique")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i: int) -> bool:
        return i in set(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=int)

    def restricted(self, m_ineq: int) -> "ActiveSet":
        """Drop indices that do not exist in a problem with m_ineq rows."""
        return ActiveSet(tuple(i for i in self.indices if i < m_ineq))


@dataclass(frozen=True)
class StandardQP:
    W: np.ndarray
    g: np.ndarray
    A: np.ndarray
    b: np.ndarray
    P: np.ndarray
    f: np.ndarray
    structure: CostStructure | None = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        W = _as_array(self.W, "W", 2)
        g = _as_array(self.g, "g", 1)
        n = g.size
        A = _as_array(self.A if self.A is not None else np.zeros((0, n)), "A", 2)
        b = _as_array(self.b if self.b is not None else np.zeros(0), "b", 1)
        P = _as_array(self.P if self.P is not None else np.zeros((0, n)), "P", 2)
        f = _as_array(self.f if self.f is not None else np.zeros(0), "f", 1)
        if W.shape != (n, n):
            raise ValueError(f"W must be ({n}, {n}) to match g, got {W.shape}")
        if A.shape != (b.size, n):
            raise ValueError(f"A must be ({b.size}, {n}) to match b, got {A.shape}")
        if P.shape != (f.size, n):
            raise ValueError(f"P must be ({f.size}, {n}) to match f, got {P.shape}")
        for name, val in (("W", W), ("g", g), ("A", A), ("b", b), ("P", P), ("f", f)):
            object.__setattr__(self, name, val)
        if self.check:
            bad = validate_qp(self)
            if bad:
                raise ValueError("invalid QP: " + "; ".join(bad))

    @property
    def n(self) -> int:
        return self.g.size

    @property
    def m_eq(self) -> int:
        return self.b.size

    @property
    def m_ineq(self) -> int:
        return self.f.size

    def objective(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.W @ z + self.g @ z)

    def without_structure(self) -> "StandardQP":
        return StandardQP(self.W, self.g, self.A, self.b, self.P, self.f,
                          structure=None, check=False)


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    gamma: np.ndarray       # inequality multipliers, zero off the active set
    alpha_eq: np.ndarray    # equality multipliers
    active_set: ActiveSet
    iterations: int
    status: SolveStatus


def validate_qp(qp: StandardQP) -> list[str]:
    """Check StandardQP invariants; returns one message per violation."""
    bad: list[str] = []
    W = qp.W
    scale = max(1.0, float(np.max(np.abs(W))) if W.size else 1.0)
    asym = float(np.max(np.abs(W - W.T))) if W.size else 0.0
    if asym > SYMMETRY_RTOL * scale:
        bad.append(f"W not symmetric: max|W - W'| = {asym:.3e}")
    else:
        eigmin = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0]) if W.size else 1.0
        if eigmin <= 0.0:
            bad.append(f"W not positive definite: min eigenvalue = {eigmin:.3e}")
    if qp.structure is not None:
        s = qp.structure
        if s.n != qp.n:
            bad.append(f"structure dimension {s.n} != n {qp.n}")
        else:
            dev = float(np.max(np.abs(s.materialize() - W)))
            if dev > SYMMETRY_RTOL * scale:
                bad.append(f"structure does not materialize W: max dev = {dev:.3e}")
    return bad


@dataclass(frozen=True)
class KktResidual:
    """Infinity-norm residuals of the five first-order optimality blocks."""

    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    dual_feas: float

    def max_violation(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq,
                   self.complementarity, self.dual_feas)

    def as_dict(self) -> dict[str, float]:
        return {
            "stationarity": self.stationarity,
            "primal_eq": self.primal_eq,
            "primal_ineq": self.primal_ineq,
            "complementarity": self.complementarity,
            "dual_feas": self.dual_feas,
        }


def kkt_residual(qp: StandardQP, sol: QpSolution) -> KktResidual:
    """First-order optimality residuals of (z, gamma, alpha_eq) for qp."""
    z, gamma, alpha = sol.z, sol.gamma, sol.alpha_eq
    if z.shape != (qp.n,):
        raise ValueError(f"z has shape {z.shape}, expected ({qp.n},)")
    if gamma.shape != (qp.m_ineq,):
        raise ValueError(f"gamma has shape {gamma.shape}, expected ({qp.m_ineq},)")
    if alpha.shape != (qp.m_eq,):
        raise ValueError(f"alpha_eq has shape {alpha.shape}, expected ({qp.m_eq},)")

    grad = qp.W @ z + qp.g
    if qp.m_eq:
        grad = grad + qp.A.T @ alpha
    if qp.m_ineq:
        grad = grad + qp.P.T @ gamma
    stationarity = float(np.max(np.abs(grad))) if grad.size else 0.0
    primal_eq = float(np.max(np.abs(qp.A @ z - qp.b))) if qp.m_eq else 0.0
    if qp.m_ineq:
        slack = qp.P @ z - qp.f
        primal_ineq = float(max(0.0, np.max(slack)))
        complementarity = float(np.max(np.abs(gamma * slack)))
        dual_feas = float(max(0.0, -np.min(gamma)))
    else:
        primal_ineq = complementarity = dual_feas = 0.0
    return KktResidual(stationarity, primal_eq, primal_ineq, complementarity, dual_feas)


# ---------------------------------------------------------------------------
# Plain-text serialization (dimension header, then row-major decimal entries).
# Used by the harness to dump failing QPs for offline reproduction.
# ---------------------------------------------------------------------------

def _write_matrix(out: io.StringIO, name: str, M: np.ndarray) -> None:
    out.write(name + "\n")
    for row in np.atleast_2d(M) if M.ndim == 2 else [M]:
        out.write(" ".join(repr(float(v)) for v in row) + "\n")


def dump_qp(qp: StandardQP) -> str:
    out = io.StringIO()
    out.write("standard-qp v1\n")
    out.write(f"n {qp.n} m_eq {qp.m_eq} m_ineq {qp.m_ineq} "
              f"structured {1 if qp.structure is not None else 0}\n")
    _write_matrix(out, "W", qp.W)
    _write_matrix(out, "g", qp.g)
    _write_matrix(out, "A", qp.A)
    _write_matrix(out, "b", qp.b)
    _write_matrix(out, "P", qp.P)
    _write_matrix(out, "f", qp.f)
    if qp.structure is not None:
        s = qp.structure
        out.write(f"structure split {s.split} w_qdd {s.w_qdd!r}\n")
        _write_matrix(out, "U", s.U)
        _write_matrix(out, "Qy", s.Qy)
        _write_matrix(out, "d22", s.d22)
    return out.getvalue()


class _LineReader:
    def __init__(self, text: str):
        self.lines = [ln for ln in text.splitlines()]
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise ValueError("unexpected end of QP text")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def matrix(self, name: str, rows: int, cols: int) -> np.ndarray:
        header = self.next().strip()
        if header != name:
            raise ValueError(f"expected section {name!r}, got {header!r}")
        data = np.zeros((rows, cols))
        for r in range(rows):
            vals = [float(v) for v in self.next().split()]
            if len(vals) != cols:
                raise ValueError(f"section {name}: row {r} has {len(vals)} entries, expected {cols}")
            data[r] = vals
        return data

    def vector(self, name: str, size: int) -> np.ndarray:
        header = self.next().strip()
        if header != name:
            raise ValueError(f"expected section {name!r}, got {header!r}")
        vals = [float(v) for v in self.next().split()]
        if len(vals) != size:
            raise ValueError(f"section {name}: got {len(vals)} entries, expected {size}")
        return np.asarray(vals, dtype=float)


def parse_qp(text: str, check: bool = True) -> StandardQP:
    rd = _LineReader(text)
    magic = rd.next().strip()
    if magic != "standard-qp v1":
        raise ValueError(f"unrecognized QP header {magic!r}")
    toks = rd.next().split()
    dims = {toks[i]: int(toks[i + 1]) for i in range(0, len(toks), 2)}
    n, me, mi = dims["n"], dims["m_eq"], dims["m_ineq"]
    W = rd.matrix("W", n, n)
    g = rd.vector("g", n)
    A = rd.matrix("A", me, n)
    b = rd.vector("b", me)
    P = rd.matrix("P", mi, n)
    f = rd.vector("f", mi)
    structure = None
    if dims.get("structured"):
        toks = rd.next().split()
        split = int(toks[2])
        w_qdd = float(toks[4])
        U = rd.matrix("U", 2, split)
        Qy = rd.matrix("Qy", 2, 2)
        d22 = rd.vector("d22", n - split)
        structure = CostStructure(split, w_qdd, U, Qy, d22)
    return StandardQP(W, g, A, b, P, f, structure=structure, check=check)


def save_qp(qp: StandardQP, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_qp(qp))


def load_qp(path, check: bool = True) -> StandardQP:
    with open(path) as fh:
        return parse_qp(fh.read(), check=check)
