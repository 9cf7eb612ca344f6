"""Two-step representations of grid kernels and the comparison hypotheses.

A transition from ``x`` first draws an index ``a`` with probability
``s(x, a) * lam[a]`` and then moves with a fiber kernel ``P_a`` that never
leaves the equivalence class of ``x`` under ``a``. Two kernels written over
the same index set, weights and fibers are ordered whenever the fiber kernels
are reversible with respect to the induced measures ``pi_a``, the first is
positive, and ``P1_a @ P2_a == P2_a``.

Index sets on a grid:

* directions: ``{+e_k, -e_k}`` for each axis, uniform weights;
* levels: the distinct grid weights ``v_1 < ... < v_L``, with ``lam`` equal
  to the gap ``v_l - v_{l-1}`` so sums over levels reproduce the continuous
  integral over ``t`` exactly;
* direction-level pairs for the Metropolis comparison.

States outside a level set are their own singleton class with an identity
fiber kernel; they carry zero weight there, so they never affect a mixture.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConstructionError
from .lab import (DiscreteKernel, GridSpec, axis_step_offsets, level_table,
                  line_conditional, slice_matrix)

CHECK_TOL = 1e-10
COMPOSE_TOL = 1e-9
PAIRS = ("har_vs_hybrid", "simple_vs_hybrid", "rwm_vs_hybrid")
_MAX_ENTRIES = 5 * 10**7


@dataclass(frozen=True)
class FiberMeasure:
    """``pi_a`` as a normalized vector together with its normalizer ``C_a``."""

    weights: np.ndarray
    normalizer: float


@dataclass(frozen=True)
class TwoStepRepresentation:
    label: str
    pi: np.ndarray
    lam: np.ndarray
    weights: np.ndarray
    fibers: np.ndarray
    kernels: np.ndarray
    index_names: tuple = ()
    pair: str = ""
    grid_info: dict = field(default_factory=dict)

    def __post_init__(self):
        N, A = self.weights.shape
        if self.kernels.shape != (A, N, N) or self.fibers.shape != (A, N) or self.lam.shape != (A,):
            raise ConstructionError(f"{self.label}: inconsistent shapes")
        total = self.weights @ self.lam
        bad = np.abs(total - 1.0)
        if bad.max() > CHECK_TOL:
            x = int(np.argmax(bad))
            raise ConstructionError(f"{self.label}: s(x, .) at state {x} integrates to {total[x]!r}")
        same = self.fibers[:, :, None] == self.fibers[:, None, :]
        leak = np.abs(np.where(same, 0.0, self.kernels)).max(initial=0.0)
        if leak > 0:
            raise ConstructionError(f"{self.label}: fiber kernel puts mass {leak} outside the fiber")

    @property
    def size(self) -> int:
        return self.pi.size

    @property
    def index_count(self) -> int:
        return self.lam.size

    def fiber_weight(self, x: int, a: int) -> float:
        return float(self.weights[x, a])

    def fiber_of(self, x: int, a: int) -> int:
        return int(self.fibers[a, x])

    def fiber_kernel(self, a: int) -> np.ndarray:
        return self.kernels[a]

    def fiber_measure(self, a: int) -> FiberMeasure:
        mass = self.weights[:, a] * self.pi
        C = float(mass.sum())
        return FiberMeasure(mass / C, C)

    def index_sampler(self, x: int, rng) -> int:
        p = self.weights[x] * self.lam
        return int(rng.choice(self.index_count, p=p / p.sum()))


@dataclass
class CheckReport:
    check: str
    per_fiber_residuals: list
    verdict: str
    pair: str = ""
    grid: dict = field(default_factory=dict)
    tolerance: float = CHECK_TOL

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    @property
    def worst(self) -> float:
        r = self.per_fiber_residuals
        if not r:
            return float("nan")
        return min(r) if self.check == "positivity" else max(r)

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "grid": self.grid,
            "check": self.check,
            "per_fiber_residuals": self.per_fiber_residuals,
            "verdict": self.verdict,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# checks


def compose(rep: TwoStepRepresentation) -> DiscreteKernel:
    """Mixture kernel ``sum_a s(x, a) lam_a P_a(x, .)``."""
    mix = rep.weights * rep.lam
    P = np.einsum("xa,axy->xy", mix, rep.kernels)
    rows = np.abs(P.sum(axis=1) - 1.0)
    if rows.max() > COMPOSE_TOL:
        x = int(np.argmax(rows))
        raise ConstructionError(f"{rep.label}: composed row {x} sums to {P[x].sum()!r}")
    return DiscreteKernel(P, rep.pi, rep.label, check=False)


def _reversibility_residuals(rep):
    out = []
    for a in range(rep.index_count):
        pa = rep.fiber_measure(a).weights
        flow = pa[:, None] * rep.kernels[a]
        out.append(float(np.abs(flow - flow.T).max()))
    return out


def check_fiber_reversibility(rep: TwoStepRepresentation) -> CheckReport:
    """Largest detailed-balance defect of each ``P_a`` against ``pi_a``."""
    res = _reversibility_residuals(rep)
    verdict = "PASS" if max(res) <= CHECK_TOL else "FAIL"
    return CheckReport("reversibility", res, verdict, rep.pair, rep.grid_info)


def check_fiber_positivity(rep: TwoStepRepresentation) -> CheckReport:
    """Smallest eigenvalue of each ``P_a`` as an operator on ``L2(pi_a)``."""
    if max(_reversibility_residuals(rep)) > CHECK_TOL:
        raise ValueError(f"{rep.label}: fiber kernels are not reversible; "
                         "see check_fiber_reversibility before testing positivity")
    mins = []
    for a in range(rep.index_count):
        pa = rep.fiber_measure(a).weights
        on = pa > 0
        r = np.sqrt(pa[on])
        B = r[:, None] * rep.kernels[a][np.ix_(on, on)] / r[None, :]
        mins.append(float(np.linalg.eigvalsh(0.5 * (B + B.T)).min()))
    verdict = "PASS" if min(mins) >= -CHECK_TOL else "FAIL"
    return CheckReport("positivity", mins, verdict, rep.pair, rep.grid_info)


def check_interweaving(rep1: TwoStepRepresentation, rep2: TwoStepRepresentation) -> CheckReport:
    """Max-norm of ``P1_a P2_a - P2_a`` for each index ``a``."""
    if (rep1.kernels.shape != rep2.kernels.shape or not np.array_equal(rep1.fibers, rep2.fibers)
            or not np.allclose(rep1.weights, rep2.weights, rtol=0, atol=1e-14)
            or not np.allclose(rep1.lam, rep2.lam, rtol=0, atol=1e-14)):
        raise ValueError("representations do not share index set, weights and fibers")
    res = [float(np.abs(rep1.kernels[a] @ rep2.kernels[a] - rep2.kernels[a]).max())
           for a in range(rep1.index_count)]
    verdict = "PASS" if max(res) <= CHECK_TOL else "FAIL"
    return CheckReport("interweaving", res, verdict, rep1.pair or rep2.pair, rep1.grid_info)


def check_all(rep1, rep2) -> list:
    """Reversibility of both, positivity of the first, interweaving."""
    reports = [check_fiber_reversibility(rep1), check_fiber_reversibility(rep2)]
    reports[0].check = f"reversibility[{rep1.label}]"
    reports[1].check = f"reversibility[{rep2.label}]"
    if reports[0].passed:
        reports.append(check_fiber_positivity(rep1))
    else:
        reports.append(CheckReport("positivity", [], "FAIL", rep1.pair, rep1.grid_info))
    reports.append(check_interweaving(rep1, rep2))
    return reports


# ---------------------------------------------------------------------------
# construction


def single_index_representation(P, pi, label="P") -> TwoStepRepresentation:
    """Trivial representation: one index, one fiber, ``P_a = P``."""
    P = np.asarray(P, dtype=float)
    N = P.shape[0]
    return TwoStepRepresentation(label, np.asarray(pi, float), np.ones(1), np.ones((N, 1)),
                                 np.zeros((1, N), dtype=int), P[None].copy(), ("all",))


def corrupt_representation(rep: TwoStepRepresentation, eps: float = 0.05) -> TwoStepRepresentation:
    """Negative-control copy: one row of one fiber kernel is tilted towards a neighbor."""
    kernels = rep.kernels.copy()
    for a in range(rep.index_count):
        pa = rep.fiber_measure(a).weights
        for x in np.flatnonzero(pa > 0):
            mates = np.flatnonzero((rep.fibers[a] == rep.fibers[a, x]) & (pa > 0))
            mates = mates[mates != x]
            if mates.size:
                row = kernels[a, x]
                kernels[a, x] = (1 - eps) * row
                kernels[a, x, mates[0]] += eps
                return replace(rep, kernels=kernels, label=rep.label + "*")
    raise ValueError("no fiber with two states to corrupt")


def _directions(grid: GridSpec):
    names = []
    for k in range(grid.dimension):
        names += [f"+e{k + 1}", f"-e{k + 1}"]
    axes = [k for k in range(grid.dimension) for _ in (0, 1)]
    return names, axes


def _line_ids(grid: GridSpec, axis: int) -> np.ndarray:
    ids = np.empty(grid.size, dtype=int)
    for k, line in enumerate(grid.lines(axis)):
        ids[line] = k
    return ids


def _guard(A, N):
    if A * N * N > _MAX_ENTRIES:
        raise ValueError(f"dense representation with {A} indices over {N} states is too large")


def _line_metropolis_fiber(weights_on_fiber, positions, n, w, boundary):
    """Lazy axis-step walk restricted to the fiber points at ``positions`` of a line."""
    m = len(positions)
    where = {p: k for k, p in enumerate(positions)}
    moves = axis_step_offsets(n, w, boundary)
    K = np.zeros((m, m))
    for k, p in enumerate(positions):
        for q in moves[p]:
            if q != p and q in where:
                K[k, where[q]] += 0.5 / (2 * w)
    K[np.diag_indices(m)] = 1.0 - K.sum(axis=1)
    return K


def build_representation(pair: str, grid: GridSpec, proposal_radius: int = 1,
                         boundary: str = "periodic"):
    """Common representations ``(rep1, rep2)`` with ``rep1 >= rep2`` expected.

    ``har_vs_hybrid`` gives ``(U, H)``, ``simple_vs_hybrid`` gives ``(U, S)``
    and ``rwm_vs_hybrid`` gives ``(M, U)``.
    """
    if pair not in PAIRS:
        raise ValueError(f"unknown pair {pair!r}; choose from {PAIRS}")
    if grid.dimension not in (1, 2):
        raise ValueError("representations are built for 1- and 2-dimensional grids")
    N = grid.size
    pi = grid.pi
    rho = grid.weights
    dir_names, dir_axes = _directions(grid)
    levels, gaps, _ = level_table(rho)
    info = {"dimension": grid.dimension, "n": grid.n}
    if pair != "har_vs_hybrid":
        level_weights = (rho[:, None] >= levels[None, :]) / rho[:, None]

    if pair == "har_vs_hybrid":
        A = len(dir_names)
        _guard(A, N)
        lam = np.full(A, 1.0 / A)
        weights = np.ones((N, A))
        fibers = np.empty((A, N), dtype=int)
        KU = np.zeros((A, N, N))
        KH = np.zeros((A, N, N))
        for a, axis in enumerate(dir_axes):
            fibers[a] = _line_ids(grid, axis)
            for line in grid.lines(axis):
                KU[a][np.ix_(line, line)] = slice_matrix(rho[line])
                KH[a][np.ix_(line, line)] = line_conditional(rho[line])
        names = tuple(dir_names)
        rep1 = TwoStepRepresentation("U", pi, lam, weights, fibers, KU, names, pair, info)
        rep2 = TwoStepRepresentation("H", pi, lam, weights, fibers, KH, names, pair, info)
        return rep1, rep2

    if pair == "simple_vs_hybrid":
        A = levels.size
        _guard(A, N)
        lam = gaps.copy()
        fibers = np.empty((A, N), dtype=int)
        KU = np.zeros((A, N, N))
        KS = np.zeros((A, N, N))
        for a, v in enumerate(levels):
            inside = rho >= v
            fibers[a] = np.where(inside, -1, np.arange(N))
            out = np.flatnonzero(~inside)
            KU[a, out, out] = 1.0
            KS[a, out, out] = 1.0
            members = np.flatnonzero(inside)
            KS[a][np.ix_(members, members)] = 1.0 / members.size
            for axis in range(grid.dimension):
                for line in grid.lines(axis):
                    on = line[inside[line]]
                    if on.size:
                        KU[a][np.ix_(on, on)] += 1.0 / (on.size * grid.dimension)
        names = tuple(f"t>={v:.17g}" for v in levels)
        rep1 = TwoStepRepresentation("U", pi, lam, level_weights, fibers, KU, names, pair, info)
        rep2 = TwoStepRepresentation("S", pi, lam, level_weights, fibers, KS, names, pair, info)
        return rep1, rep2

    # rwm_vs_hybrid
    A = len(dir_names) * levels.size
    _guard(A, N)
    lam = np.empty(A)
    weights = np.empty((N, A))
    fibers = np.empty((A, N), dtype=int)
    KM = np.zeros((A, N, N))
    KU = np.zeros((A, N, N))
    names = []
    a = 0
    for dname, axis in zip(dir_names, dir_axes):
        line_id = _line_ids(grid, axis)
        for l, v in enumerate(levels):
            lam[a] = gaps[l] / len(dir_names)
            weights[:, a] = level_weights[:, l]
            inside = rho >= v
            fibers[a] = np.where(inside, line_id, N + np.arange(N))
            out = np.flatnonzero(~inside)
            KM[a, out, out] = 1.0
            KU[a, out, out] = 1.0
            for line in grid.lines(axis):
                positions = np.flatnonzero(inside[line])
                on = line[positions]
                if not on.size:
                    continue
                KU[a][np.ix_(on, on)] = 1.0 / on.size
                KM[a][np.ix_(on, on)] = _line_metropolis_fiber(rho[on], list(positions), grid.n,
                                                               proposal_radius, boundary)
            names.append(f"{dname},t>={v:.17g}")
            a += 1
    rep1 = TwoStepRepresentation("M", pi, lam, weights, fibers, KM, tuple(names), pair, info)
    rep2 = TwoStepRepresentation("U", pi, lam, weights, fibers, KU, tuple(names), pair, info)
    return rep1, rep2
