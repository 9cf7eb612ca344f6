"""One-transition implementations of hit-and-run, simple slice, hybrid slice
and lazy random-walk Metropolis.

Every kernel has a vectorized form (:func:`step_many`) that advances each row
of a state array independently; the single-state functions are thin wrappers
around it, so the chain runner and the Monte Carlo diagnostics share one
implementation per kernel.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, EfficiencyError, NumericalError
from .targets import (DEFAULT_ATTEMPT_CAP, TargetDensity, Chord, box_chords,
                      level_intervals, _as_point)

KINDS = ("hit_and_run", "simple_slice", "hybrid_slice", "rwm")
LABELS = {"rwm": "M", "hybrid_slice": "U", "hit_and_run": "H", "simple_slice": "S"}
DEFAULT_INNER_GRID = 4096
_CHUNK_CELLS = 2**16


@dataclass(frozen=True)
class ProposalSpec:
    """Rotation-invariant random-walk increment: ``ball_walk`` or ``gaussian``."""

    kind: str
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ball_walk", "gaussian"):
            raise ValueError(f"unknown proposal kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("proposal scale must be positive")

    def density(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        d = Z.shape[-1]
        r2 = np.sum(Z**2, axis=-1)
        if self.kind == "ball_walk":
            kappa = np.pi ** (d / 2) / special.gamma(d / 2 + 1)
            return np.where(r2 <= self.delta**2, 1.0 / (self.delta**d * kappa), 0.0)
        return np.exp(-0.5 * r2 / self.delta**2) / (2 * np.pi * self.delta**2) ** (d / 2)

    def sample(self, rng, n: int, d: int) -> np.ndarray:
        if self.kind == "gaussian":
            return self.delta * rng.standard_normal((n, d))
        radius = self.delta * rng.random(n) ** (1.0 / d)
        return radius[:, None] * sample_directions(rng, n, d)


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    proposal: Optional[ProposalSpec] = None
    inner_grid: Optional[int] = None
    attempt_cap: int = DEFAULT_ATTEMPT_CAP

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; choose from {KINDS}")
        if (self.proposal is not None) != (self.kind == "rwm"):
            raise ValueError("a proposal is required for rwm and only for rwm")
        if (self.inner_grid is not None) != (self.kind == "hit_and_run"):
            raise ValueError("inner_grid is required for hit_and_run and only for hit_and_run")
        if self.inner_grid is not None and self.inner_grid < 2:
            raise ValueError("inner_grid needs at least two nodes")
        if self.attempt_cap < 1:
            raise ValueError("attempt_cap must be positive")

    @property
    def label(self) -> str:
        return LABELS[self.kind]

    @classmethod
    def hit_and_run(cls, inner_grid=DEFAULT_INNER_GRID, **kw):
        return cls("hit_and_run", inner_grid=inner_grid, **kw)

    @classmethod
    def simple_slice(cls, **kw):
        return cls("simple_slice", **kw)

    @classmethod
    def hybrid_slice(cls, **kw):
        return cls("hybrid_slice", **kw)

    @classmethod
    def rwm(cls, proposal: ProposalSpec, **kw):
        return cls("rwm", proposal=proposal, **kw)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "attempt_cap": self.attempt_cap}
        if self.proposal is not None:
            out["proposal"] = {"kind": self.proposal.kind, "delta": self.proposal.delta}
        if self.inner_grid is not None:
            out["inner_grid"] = self.inner_grid
        return out


@dataclass
class ChainTrace:
    """States ``x_0..x_n`` plus per-step acceptance flags and rejection counts."""

    states: np.ndarray
    kernel: KernelSpec
    target: str
    seed: Optional[int] = None
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    rejections: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self):
        return self.states.shape[0]

    def to_csv(self) -> str:
        """RFC 4180 text, one row per state; the initial row leaves ``accepted`` empty."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        d = self.states.shape[1]
        w.writerow(["step"] + [f"x_{i + 1}" for i in range(d)] + ["accepted"])
        for k, x in enumerate(self.states):
            flag = "" if k == 0 else str(int(self.accepted[k - 1]))
            w.writerow([k] + [format(v, ".17g") for v in x] + [flag])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# random primitives


def _open_uniform(rng, n) -> np.ndarray:
    """Uniform draws on the open interval (0, 1)."""
    u = rng.random(n)
    zero = u == 0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0
    return u


def sample_directions(rng, n: int, d: int) -> np.ndarray:
    """``n`` independent uniform points on the unit sphere in ``R^d``."""
    G = rng.standard_normal((n, d))
    norms = np.linalg.norm(G, axis=1)
    small = norms < 1e-300
    while small.any():
        G[small] = rng.standard_normal((int(small.sum()), d))
        norms = np.linalg.norm(G, axis=1)
        small = norms < 1e-300
    return G / norms[:, None]


def sample_direction(rng, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError("dimension must be at least 1")
    return sample_directions(rng, 1, d)[0]


# ---------------------------------------------------------------------------
# vectorized kernels


def _support_chords(target, X, Theta):
    s_lo, s_hi = box_chords(target.bbox, X, Theta)
    if target.quasi_concave:
        return level_intervals(target, X, Theta, 0.0, s_lo, s_hi)
    return s_lo, s_hi


def _chord_inverse_cdf(target, X, Theta, a, b, m, rng):
    """Draw ``s`` on ``[a, b]`` with density proportional to ``rho(X + s*Theta)``.

    Trapezoid cell masses on ``m`` equispaced nodes; the tabulated CDF is
    linearly interpolated inside the chosen cell.
    """
    n, d = X.shape
    S = np.empty(n)
    rows = max(1, _CHUNK_CELLS // m)
    grid = np.linspace(0.0, 1.0, m)
    for start in range(0, n, rows):
        sl = slice(start, min(n, start + rows))
        r = sl.stop - sl.start
        span = b[sl] - a[sl]
        nodes = np.multiply.outer(span, grid)
        nodes += a[sl, None]
        pts = np.empty((r, m, d))
        for i in range(d):
            np.multiply(nodes, Theta[sl, i, None], out=pts[..., i])
            pts[..., i] += X[sl, i, None]
        vals = target.density(pts)
        h = span / (m - 1)
        cells = vals[:, 1:] + vals[:, :-1]  # twice the trapezoid mass over h
        cdf = np.cumsum(cells, axis=1)
        total = cdf[:, -1]
        if np.any(0.5 * h * total < 1e-300):
            raise NumericalError("chord mass vanishes; the anchor is not in the support")
        level = _open_uniform(rng, r) * total
        k = np.array([np.searchsorted(cdf[j], level[j]) for j in range(r)])
        k = np.minimum(k, m - 2)
        idx = np.arange(r)
        before = np.where(k > 0, cdf[idx, k - 1], 0.0)
        S[sl] = nodes[idx, k] + h * (level - before) / cells[idx, k]
    return S


def _hit_and_run_many(target, kernel, X, rng):
    n, d = X.shape
    Theta = sample_directions(rng, n, d)
    a, b = _support_chords(target, X, Theta)
    S = _chord_inverse_cdf(target, X, Theta, a, b, kernel.inner_grid, rng)
    Y = X + S[:, None] * Theta
    # non-quasi-concave supports may leave a cell straddling a zero of rho
    bad = target.density(Y) <= 0
    tries = 0
    while bad.any():
        tries += 1
        if tries > kernel.attempt_cap:
            raise EfficiencyError("hit-and-run could not land inside the support")
        idx = np.flatnonzero(bad)
        S[idx] = _chord_inverse_cdf(target, X[idx], Theta[idx], a[idx], b[idx],
                                    kernel.inner_grid, rng)
        Y[idx] = X[idx] + S[idx, None] * Theta[idx]
        bad = target.density(Y) <= 0
    return Y, np.ones(n, dtype=bool), np.zeros(n, dtype=int)


def _rejection_rounds(propose, accept, n, cap, levels, what):
    """Sequential rejection run in blocks: the first accepted proposal per row wins.

    ``propose(rows, k)`` returns ``k`` candidates per row, shaped
    ``(len(rows), k, ...)``; ``accept(rows, cand)`` returns a boolean
    ``(len(rows), k)`` mask.
    """
    out = None
    attempts = np.zeros(n, dtype=int)
    pending = np.arange(n)
    while pending.size:
        k = int(min(cap - attempts[pending].max(), max(8, 2**18 // pending.size)))
        cand = propose(pending, k)
        ok = accept(pending, cand)
        budget = cap - attempts[pending]
        ok &= np.arange(k)[None, :] < budget[:, None]
        hit = ok.any(axis=1)
        first = ok.argmax(axis=1)
        if out is None:
            out = np.empty((n,) + cand.shape[2:])
        out[pending[hit]] = cand[hit, first[hit]]
        attempts[pending] += np.where(hit, first + 1, np.minimum(k, budget))
        pending = pending[~hit]
        if pending.size and np.any(attempts[pending] >= cap):
            row = pending[np.argmax(attempts[pending])]
            raise EfficiencyError(f"{what} exceeded {cap} attempts at level t={levels[row]!r}",
                                  level=float(levels[row]))
    return out, attempts


def _simple_slice_many(target, kernel, X, rng):
    n, d = X.shape
    t = target.density(X) * _open_uniform(rng, n)

    def propose(rows, k):
        return target.bbox.uniform(rng, rows.size * k).reshape(rows.size, k, d)

    def accept(rows, cand):
        return target.density(cand) > t[rows, None]

    Y, attempts = _rejection_rounds(propose, accept, n, kernel.attempt_cap, t, "simple slice step")
    return Y, np.ones(n, dtype=bool), attempts - 1


def _hybrid_slice_many(target, kernel, X, rng):
    n, d = X.shape
    t = target.density(X) * _open_uniform(rng, n)
    Theta = sample_directions(rng, n, d)
    s_lo, s_hi = box_chords(target.bbox, X, Theta)
    if target.quasi_concave:
        a, b = level_intervals(target, X, Theta, t, s_lo, s_hi)
        S = a + (b - a) * rng.random(n)
        return X + S[:, None] * Theta, np.ones(n, dtype=bool), np.zeros(n, dtype=int)

    def propose(rows, k):
        span = (s_hi - s_lo)[rows, None]
        return s_lo[rows, None] + span * rng.random((rows.size, k))

    def accept(rows, cand):
        pts = X[rows, None, :] + cand[..., None] * Theta[rows, None, :]
        return target.density(pts) > t[rows, None]

    S, attempts = _rejection_rounds(propose, accept, n, kernel.attempt_cap, t, "hybrid slice step")
    return X + S[:, None] * Theta, np.ones(n, dtype=bool), attempts - 1


def _rwm_many(target, kernel, X, rng):
    n, d = X.shape
    Z = kernel.proposal.sample(rng, n, d)
    u1 = rng.random(n)
    u2 = rng.random(n)
    prop = X + Z
    rho_x = target.density(X)
    rho_y = target.density(prop)
    accept = (u1 <= 0.5) & (rho_y > 0) & (u2 < rho_y / rho_x)
    Y = np.where(accept[:, None], prop, X)
    return Y, accept, np.zeros(n, dtype=int)


_STEPPERS = {
    "hit_and_run": _hit_and_run_many,
    "simple_slice": _simple_slice_many,
    "hybrid_slice": _hybrid_slice_many,
    "rwm": _rwm_many,
}


def step_many_with_info(target: TargetDensity, kernel: KernelSpec, X, rng):
    """Advance every row of ``X`` one step; also return acceptance flags and rejection counts."""
    X = np.asarray(X, dtype=float).reshape(-1, target.dim)
    if X.shape[0] == 0:
        return X.copy(), np.zeros(0, dtype=bool), np.zeros(0, dtype=int)
    if not np.all(target.support(X)):
        raise DomainError("every starting state must lie in the support")
    return _STEPPERS[kernel.kind](target, kernel, X, rng)


def step_many(target: TargetDensity, kernel: KernelSpec, X, rng) -> np.ndarray:
    return step_many_with_info(target, kernel, X, rng)[0]


# ---------------------------------------------------------------------------
# single-state API


def _one(target, kernel, x, rng):
    x = _as_point(target, x)
    if not target.support_test(x):
        raise DomainError(f"{x} is outside the support of {target.name}")
    return step_many(target, kernel, x[None], rng)[0]


def sample_on_chord(target: TargetDensity, chord: Chord, rng,
                    inner_grid: int = DEFAULT_INNER_GRID) -> np.ndarray:
    """Draw from ``rho`` restricted to the line of ``chord``."""
    x = chord.anchor
    if not target.support_test(x):
        raise DomainError("chord anchor is outside the support")
    X, Theta = x[None], chord.direction[None]
    a, b = np.array([chord.s_lo]), np.array([chord.s_hi])
    if target.quasi_concave:
        a, b = level_intervals(target, X, Theta, 0.0, a, b)
    while True:
        s = _chord_inverse_cdf(target, X, Theta, a, b, inner_grid, rng)[0]
        y = x + s * chord.direction
        if target.density(y) > 0:
            return y


def hit_and_run_step(target, x, rng, inner_grid: int = DEFAULT_INNER_GRID) -> np.ndarray:
    return _one(target, KernelSpec.hit_and_run(inner_grid), x, rng)


def simple_slice_step(target, x, rng, attempt_cap: int = DEFAULT_ATTEMPT_CAP) -> np.ndarray:
    return _one(target, KernelSpec.simple_slice(attempt_cap=attempt_cap), x, rng)


def hybrid_slice_step(target, x, rng, attempt_cap: int = DEFAULT_ATTEMPT_CAP) -> np.ndarray:
    return _one(target, KernelSpec.hybrid_slice(attempt_cap=attempt_cap), x, rng)


def rwm_step(target, proposal: ProposalSpec, x, rng) -> np.ndarray:
    return _one(target, KernelSpec.rwm(proposal), x, rng)


def run_chain(target: TargetDensity, kernel: KernelSpec, x0, n: int, rng,
              seed: Optional[int] = None) -> ChainTrace:
    """Iterate one kernel ``n`` times from ``x0``.

    ``rng`` may be a seed, in which case it is also recorded on the trace.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not isinstance(rng, np.random.Generator):
        seed = int(rng) if seed is None else seed
        rng = np.random.default_rng(rng)
    x = _as_point(target, x0)
    if not target.support_test(x):
        raise DomainError(f"x0={x} is outside the support of {target.name}")
    states = np.empty((n + 1, target.dim))
    states[0] = x
    accepted = np.zeros(n, dtype=bool)
    rejections = np.zeros(n, dtype=int)
    for k in range(n):
        try:
            y, acc, rej = step_many_with_info(target, kernel, states[k][None], rng)
        except EfficiencyError as err:
            raise EfficiencyError(f"step {k + 1}: {err}", level=err.level, step=k + 1) from err
        states[k + 1] = y[0]
        accepted[k] = acc[0]
        rejections[k] = rej[0]
    return ChainTrace(states, kernel, target.name, seed, accepted, rejections)
