"""Exact finite-state analogs of the four kernels and their covariance ordering.

States are the cells of a 1-d or 2-d grid (flattened in C order) carrying
positive weights ``rho_i``; the stationary law is ``pi_i = rho_i / sum(rho)``.
All kernels are built natively reversible, so inequalities between quadratic
forms hold to machine precision rather than up to quadrature error.

The discrete Metropolis proposal is the uniform axis step: pick one of the
``d`` axes and an offset in ``{-w..-1, 1..w}`` along it, each of the ``2dw``
moves with equal probability. With ``boundary="periodic"`` the grid lines are
cycles; with ``boundary="hold"`` moves leaving the grid are rejected.
"""
from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstructionError, NumericalError

BUILD_TOL = 1e-12
ORDER_SLACK = 1e-10
EXACT_CONDUCTANCE_MAX = 16


@dataclass(frozen=True)
class GridSpec:
    """``n`` cells per axis in ``dimension`` axes, with positive weights."""

    dimension: int
    n: int
    centers: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError("grids must be 1- or 2-dimensional")
        if self.n < 2:
            raise ValueError("need at least two points per axis")
        N = self.n**self.dimension
        w = np.asarray(self.weights, dtype=float).ravel()
        c = np.asarray(self.centers, dtype=float).reshape(N, self.dimension)
        if w.size != N:
            raise ValueError(f"expected {N} weights, got {w.size}")
        if not np.all(w > 0) or not np.all(np.isfinite(w)):
            raise ValueError("grid weights must be finite and positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "centers", c)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def pi(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    @classmethod
    def from_weights(cls, weights, centers=None):
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1:
            d, n = 1, w.size
        elif w.ndim == 2 and w.shape[0] == w.shape[1]:
            d, n = 2, w.shape[0]
        else:
            raise ValueError("weights must be a vector or a square array")
        if centers is None:
            axis = np.arange(n, dtype=float)
            centers = axis[:, None] if d == 1 else np.stack(np.meshgrid(axis, axis, indexing="ij"), -1)
        return cls(d, n, centers, w)

    @classmethod
    def from_target(cls, target, n: int, lo=None, hi=None):
        """Evaluate ``target`` at the cell centers of an ``n``-per-axis grid.

        The grid covers ``[lo, hi]`` (default: the target's bounding box).
        """
        d = target.dim
        lo = target.bbox.lo if lo is None else np.broadcast_to(np.asarray(lo, float), (d,))
        hi = target.bbox.hi if hi is None else np.broadcast_to(np.asarray(hi, float), (d,))
        axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(n) + 0.5) / n for i in range(d)]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
        weights = target.density(centers)
        if not np.all(weights > 0):
            raise ValueError(f"target {target.name!r} vanishes at some cell centers; shrink the grid box")
        return cls(d, n, centers, weights)

    def lines(self, axis: int) -> list:
        """Index arrays of the grid lines parallel to ``axis``, in order along the line."""
        idx = np.arange(self.size).reshape((self.n,) * self.dimension)
        if self.dimension == 1:
            return [idx]
        return [idx[:, j] for j in range(self.n)] if axis == 0 else [idx[i, :] for i in range(self.n)]


@dataclass(frozen=True)
class DiscreteKernel:
    """Row-stochastic matrix ``P`` reversible with respect to ``pi``.

    Invariants are checked at construction unless ``check=False`` (used for
    deliberately broken fixtures).
    """

    P: np.ndarray
    pi: np.ndarray
    label: str
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1] or pi.shape != (P.shape[0],):
            raise ConstructionError(f"{self.label}: shape mismatch {P.shape} vs {pi.shape}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "pi", pi)
        if not self.check:
            return
        if P.min() < 0:
            i, j = np.unravel_index(np.argmin(P), P.shape)
            raise ConstructionError(f"{self.label}: negative entry P[{i},{j}]={P[i, j]}")
        rows = np.abs(P.sum(axis=1) - 1)
        if rows.max() > BUILD_TOL:
            i = int(np.argmax(rows))
            raise ConstructionError(f"{self.label}: row {i} sums to {P[i].sum()!r}")
        res = self.balance_matrix()
        if res.max() > BUILD_TOL:
            i, j = np.unravel_index(np.argmax(res), res.shape)
            raise ConstructionError(f"{self.label}: detailed balance fails at ({i},{j}) by {res[i, j]:.3e}")

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def balance_matrix(self) -> np.ndarray:
        flow = self.pi[:, None] * self.P
        return np.abs(flow - flow.T)

    def detailed_balance_residual(self) -> float:
        return float(self.balance_matrix().max())

    def relabel(self, label: str) -> "DiscreteKernel":
        return DiscreteKernel(self.P, self.pi, label, check=False)


# ---------------------------------------------------------------------------
# building blocks


def level_table(weights):
    """Distinct levels ``v_1 < ... < v_L`` of ``weights`` with gaps and level-set sizes.

    On ``t`` in ``[v_{l-1}, v_l)`` (``v_0 = 0``) the level set ``{rho > t}``
    is exactly ``{rho >= v_l}``; ``gaps[l]`` is the length of that interval
    and ``counts[l]`` the size of the set.
    """
    w = np.asarray(weights, dtype=float)
    levels = np.unique(w)
    gaps = np.diff(np.concatenate([[0.0], levels]))
    counts = w.size - np.searchsorted(np.sort(w), levels, side="left")
    return levels, gaps, counts


def slice_matrix(weights) -> np.ndarray:
    """Simple slice sampler on a finite set with counting measure.

    ``P_ij = (1/rho_i) * sum over levels below min(rho_i, rho_j) of gap / count``.
    """
    w = np.asarray(weights, dtype=float)
    levels, gaps, counts = level_table(w)
    G = np.cumsum(gaps / counts)
    rank = np.searchsorted(levels, w)
    return G[np.minimum.outer(rank, rank)] / w[:, None]


def line_conditional(weights) -> np.ndarray:
    """Every row equal to the normalized weights."""
    w = np.asarray(weights, dtype=float)
    return np.tile(w / w.sum(), (w.size, 1))


def _axis_average(grid: GridSpec, block) -> np.ndarray:
    """Average over axes of ``block(line weights)`` embedded along each grid line."""
    N = grid.size
    out = np.zeros((N, N))
    for axis in range(grid.dimension):
        part = np.zeros((N, N))
        for line in grid.lines(axis):
            part[np.ix_(line, line)] = block(grid.weights[line])
        out += part
    return out / grid.dimension if grid.dimension > 1 else out


def axis_step_offsets(n: int, w: int, boundary: str):
    """Map ``position -> list of reachable positions`` for the 1-d axis step."""
    if boundary not in ("periodic", "hold"):
        raise ValueError("boundary must be 'periodic' or 'hold'")
    moves = []
    for p in range(n):
        targets = []
        for k in itertools.chain(range(-w, 0), range(1, w + 1)):
            q = p + k
            if boundary == "periodic":
                targets.append(q % n)
            elif 0 <= q < n:
                targets.append(q)
        moves.append(targets)
    return moves


def line_metropolis_offdiag(weights, w: int, boundary: str, scale: float) -> np.ndarray:
    """Off-diagonal part ``scale * count(i->j) * min(1, rho_j/rho_i)`` along one line."""
    wt = np.asarray(weights, dtype=float)
    n = wt.size
    out = np.zeros((n, n))
    for i, targets in enumerate(axis_step_offsets(n, w, boundary)):
        for j in targets:
            if j != i:
                out[i, j] += scale * min(1.0, wt[j] / wt[i])
    return out


def metropolis_matrix(grid: GridSpec, w: int, boundary: str = "periodic") -> np.ndarray:
    """Lazy Metropolis with the uniform axis-step proposal of half-width ``w``."""
    if w < 1:
        raise ValueError("proposal radius must be a positive integer")
    N = grid.size
    P = np.zeros((N, N))
    scale = 0.5 / (2 * grid.dimension * w)
    for axis in range(grid.dimension):
        for line in grid.lines(axis):
            P[np.ix_(line, line)] += line_metropolis_offdiag(grid.weights[line], w, boundary, scale)
    P[np.diag_indices(N)] = 1.0 - P.sum(axis=1)
    return P


def build_discrete_kernels(grid: GridSpec, proposal_radius: int = 1,
                           boundary: str = "periodic") -> dict:
    """Discrete M, U, H, S and the iid kernel on ``grid``, keyed by label."""
    pi = grid.pi
    kernels = {
        "Pi_iid": DiscreteKernel(np.tile(pi, (grid.size, 1)), pi, "Pi_iid"),
        "S": DiscreteKernel(slice_matrix(grid.weights), pi, "S"),
        "U": DiscreteKernel(_axis_average(grid, slice_matrix), pi, "U"),
        "H": DiscreteKernel(_axis_average(grid, line_conditional), pi, "H"),
        "M": DiscreteKernel(metropolis_matrix(grid, proposal_radius, boundary), pi, "M"),
    }
    M = kernels["M"].P
    if np.diag(M).min() < 0.5 - BUILD_TOL:
        i = int(np.argmin(np.diag(M)))
        raise ConstructionError(f"M: holding probability {M[i, i]} < 1/2 at state {i}")
    return kernels


# ---------------------------------------------------------------------------
# quadratic forms and ordering


def quadratic_form(P, f) -> float:
    """``<Pf, f>_pi = sum_i pi_i f_i (Pf)_i``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (P.size,):
        raise ValueError(f"test function has length {f.size}, kernel has {P.size} states")
    return float(np.dot(P.pi * f, P.P @ f))


def _forms(P: DiscreteKernel, F: np.ndarray) -> np.ndarray:
    return np.einsum("i,ik,ik->k", P.pi, F, P.P @ F)


ORDER_PAIRS = (("M", "U"), ("U", "H"), ("U", "S"))
QF_COLUMNS = ("qf_M", "qf_U", "qf_H", "qf_S")


@dataclass
class ComparisonReport:
    """Per-test-function quadratic forms and the margins of the ordering chains.

    ``rows`` hold ``f_id``, the four forms, the three margins
    ``higher - lower`` and, for Monte Carlo reports, ``stderr_*`` columns and
    per-pair verdicts. ``summary`` carries gaps, conductances and headers.
    """

    rows: list
    summary: dict = field(default_factory=dict)
    slack: float = ORDER_SLACK
    columns: tuple = ("f_id",) + QF_COLUMNS + ("margin_MU", "margin_UH", "margin_US")
    pairs: tuple = ORDER_PAIRS

    def row_verdict(self, row) -> str:
        if "verdict" in row:
            return row["verdict"]
        ok = all(row[f"margin_{hi}{lo}"] >= -self.slack for hi, lo in self.pairs)
        return "PASS" if ok else "FAIL"

    @property
    def verdicts(self) -> list:
        return [self.row_verdict(r) for r in self.rows]

    @property
    def passed(self) -> bool:
        return all(v != "FAIL" for v in self.verdicts)

    @property
    def overall(self) -> str:
        v = self.verdicts
        return "FAIL" if "FAIL" in v else "INCONCLUSIVE" if "INCONCLUSIVE" in v else "PASS"

    @property
    def min_margins(self) -> dict:
        out = {}
        for hi, lo in self.pairs:
            vals = [r[f"margin_{hi}{lo}"] for r in self.rows if f"margin_{hi}{lo}" in r]
            if vals:
                out[f"{hi}{lo}"] = min(vals)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        cols = list(self.columns) + ["verdict"]
        w.writerow(cols)
        for row in self.rows:
            out = []
            for c in cols:
                v = self.row_verdict(row) if c == "verdict" else row.get(c, "")
                out.append(format(v, ".17g") if isinstance(v, float) else v)
            w.writerow(out)
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "summary": self.summary,
            "min_margins": self.min_margins,
            "verdict": self.overall,
            "counts": {v: self.verdicts.count(v) for v in ("PASS", "FAIL", "INCONCLUSIVE")},
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


def function_bank(grid: GridSpec, num_f: int, rng):
    """Random Gaussian vectors, every cell indicator and the coordinate functions."""
    ids = [f"rand_{k}" for k in range(num_f)]
    F = [rng.standard_normal((grid.size, num_f))]
    ids += [f"ind_{i}" for i in range(grid.size)]
    F.append(np.eye(grid.size))
    ids += [f"coord_{i + 1}" for i in range(grid.dimension)]
    F.append(grid.centers)
    return ids, np.hstack(F)


def verify_ordering(kernels: dict, num_f: int, rng, grid: Optional[GridSpec] = None,
                    functions=None) -> ComparisonReport:
    """Check ``<Mf,f> >= <Uf,f> >= <Hf,f>`` and ``<Uf,f> >= <Sf,f>`` on a bank of f.

    The bank is :func:`function_bank` when ``grid`` is given, otherwise
    ``num_f`` random vectors plus cell indicators. ``functions`` may supply
    an explicit ``(ids, F)`` pair instead.
    """
    K = {lab: kernels[lab] for lab in ("M", "U", "H", "S")}
    pi = K["M"].pi
    for lab, P in K.items():
        if P.size != pi.size or np.max(np.abs(P.pi - pi)) > BUILD_TOL:
            raise ValueError(f"kernel {lab} does not share the stationary law of M")
    if functions is not None:
        ids, F = functions
    elif grid is not None:
        ids, F = function_bank(grid, num_f, rng)
    else:
        ids = [f"rand_{k}" for k in range(num_f)] + [f"ind_{i}" for i in range(pi.size)]
        F = np.hstack([rng.standard_normal((pi.size, num_f)), np.eye(pi.size)])
    qf = {lab: _forms(P, F) for lab, P in K.items()}
    rows = []
    for k, fid in enumerate(ids):
        row = {"f_id": fid}
        for lab in ("M", "U", "H", "S"):
            row[f"qf_{lab}"] = float(qf[lab][k])
        for hi, lo in ORDER_PAIRS:
            row[f"margin_{hi}{lo}"] = row[f"qf_{hi}"] - row[f"qf_{lo}"]
        rows.append(row)
    return ComparisonReport(rows, {"num_f": len(ids)})


# ---------------------------------------------------------------------------
# spectral gap and conductance


def _symmetrized(P: DiscreteKernel) -> np.ndarray:
    r = np.sqrt(P.pi)
    A = r[:, None] * P.P / r[None, :]
    asym = np.max(np.abs(A - A.T))
    if asym > ORDER_SLACK:
        raise ConstructionError(f"{P.label}: symmetrization residual {asym:.3e}; kernel is not reversible")
    return 0.5 * (A + A.T)


def spectrum(P: DiscreteKernel) -> np.ndarray:
    """Eigenvalues of the symmetrized kernel, in decreasing order."""
    try:
        return np.linalg.eigvalsh(_symmetrized(P))[::-1]
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"eigensolver failed for {P.label}: {err}") from err


def spectral_gap(P: DiscreteKernel) -> float:
    """``1 - lambda_2`` of the symmetrized kernel."""
    return float(1.0 - spectrum(P)[1])


def _subset_conductance(P: DiscreteKernel, B: np.ndarray) -> float:
    flow = P.pi[:, None] * P.P
    mass = B @ P.pi
    ok = (mass > 0) & (mass <= 0.5 + 1e-12)
    if not ok.any():
        raise ValueError("no admissible set with 0 < pi(A) <= 1/2")
    B = B[ok]
    inner = ((B @ flow) * B).sum(axis=1)
    return float(np.min(1.0 - inner / mass[ok]))


def _grid_shape(N):
    n = int(round(np.sqrt(N)))
    return (n, n) if n * n == N and N > 16 else (N,)


def conductance(P: DiscreteKernel, mode: str = "exact_subsets", shape=None) -> float:
    """``min_A 1 - <P 1_A, 1_A>_pi / pi(A)`` over sets with ``pi(A) <= 1/2``.

    ``exact_subsets`` enumerates every subset (at most 16 states).
    ``contiguous`` restricts to intervals, or to rectangles when ``shape`` is
    a 2-tuple, and is only an upper bound.
    """
    N = P.size
    if mode == "exact_subsets":
        if N > EXACT_CONDUCTANCE_MAX:
            raise ValueError(f"exact conductance needs at most {EXACT_CONDUCTANCE_MAX} states, got {N}")
        codes = np.arange(1, 2**N)
        B = ((codes[:, None] >> np.arange(N)) & 1).astype(float)
        return _subset_conductance(P, B)
    if mode != "contiguous":
        raise ValueError(f"unknown conductance mode {mode!r}")
    shape = _grid_shape(N) if shape is None else tuple(shape)
    if len(shape) == 1:
        spans = [(i, j) for i in range(N) for j in range(i + 1, N + 1)]
        B = np.zeros((len(spans), N))
        for k, (i, j) in enumerate(spans):
            B[k, i:j] = 1
        return _subset_conductance(P, B)
    n0, n1 = shape
    rects = [(a, b, c, e) for a in range(n0) for b in range(a + 1, n0 + 1)
             for c in range(n1) for e in range(c + 1, n1 + 1)]
    B = np.zeros((len(rects), n0, n1))
    for k, (a, b, c, e) in enumerate(rects):
        B[k, a:b, c:e] = 1
    return _subset_conductance(P, B.reshape(len(rects), N))


@dataclass
class ConsequenceReport:
    gaps: dict
    conductances: dict
    conductance_mode: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c["verdict"] == "PASS" for c in self.checks)

    def to_json(self) -> str:
        body = {
            "gaps": self.gaps,
            "conductances": self.conductances,
            "conductance_mode": self.conductance_mode,
            "conductance_note": ("exact minimum over all subsets" if self.conductance_mode == "exact_subsets"
                                 else "upper bound over contiguous sets; ordering not asserted"),
            "checks": self.checks,
            "verdict": "PASS" if self.passed else "FAIL",
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"


def ordering_consequences(kernels: dict, conductance_mode: Optional[str] = None,
                          shape=None) -> ConsequenceReport:
    """Spectral gap and conductance must increase along ``M -> U -> H`` and ``U -> S``.

    Conductance ordering is only asserted when it is computed exactly.
    """
    labels = ("M", "U", "H", "S")
    N = kernels["M"].size
    if conductance_mode is None:
        conductance_mode = "exact_subsets" if N <= EXACT_CONDUCTANCE_MAX else "contiguous"
    gaps = {lab: spectral_gap(kernels[lab]) for lab in labels}
    conds = {lab: conductance(kernels[lab], conductance_mode, shape) for lab in labels}
    checks = []
    quantities = [("gap", gaps)]
    if conductance_mode == "exact_subsets":
        quantities.append(("conductance", conds))
    for name, vals in quantities:
        for hi, lo in ORDER_PAIRS:
            # the larger operator has the smaller constant
            margin = vals[lo] - vals[hi]
            checks.append({
                "quantity": name,
                "relation": f"{name}({hi}) <= {name}({lo})",
                "margin": margin,
                "verdict": "PASS" if margin >= -ORDER_SLACK else "FAIL",
            })
    return ConsequenceReport(gaps, conds, conductance_mode, checks)
