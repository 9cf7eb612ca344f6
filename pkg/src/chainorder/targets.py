"""Unnormalized target densities and the geometric queries samplers need.

Densities are vectorized over the trailing axis: ``rho(X)`` accepts an array
of shape ``(..., d)`` and returns shape ``(...)``. The normalized measure is
never materialized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np
from scipy import special, stats

from .errors import DomainError, EfficiencyError

DEFAULT_ATTEMPT_CAP = 10**6
BISECTION_RTOL = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d arrays of equal length")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate bounding box: lo={lo}, hi={hi}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        ok = (X[..., 0] >= self.lo[0]) & (X[..., 0] <= self.hi[0])
        for i in range(1, self.dim):
            ok &= (X[..., i] >= self.lo[i]) & (X[..., i] <= self.hi[i])
        return ok

    def uniform(self, rng, size) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((size, self.dim))


@dataclass(frozen=True)
class TargetDensity:
    """An unnormalized density ``rho`` on a support ``K`` inside ``bbox``.

    ``support`` is a vectorized membership predicate for ``K``; ``rho`` must
    be strictly positive exactly on ``K`` and zero elsewhere. ``sup_rho`` is
    an upper bound of ``rho`` used by rejection steps. ``exact_moments`` maps
    test-function ids (see :mod:`chainorder.diagnostics`) to ``(mean, var)``
    pairs where ``var`` may be ``None``.
    """

    name: str
    dim: int
    rho: Callable[[np.ndarray], np.ndarray]
    support: Callable[[np.ndarray], np.ndarray]
    bbox: BoundingBox
    sup_rho: float
    quasi_concave: bool
    exact_moments: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.bbox.dim != self.dim:
            raise ValueError("bounding box dimension does not match target")
        if not self.sup_rho > 0:
            raise ValueError("sup_rho must be positive")

    def support_test(self, x) -> bool:
        return bool(self.support(_as_point(self, x)))

    def density(self, X) -> np.ndarray:
        """Vectorized ``rho`` that is exactly zero off the support."""
        X = np.asarray(X, dtype=float)
        inside = self.support(X)
        with np.errstate(all="ignore"):
            values = np.asarray(self.rho(X), dtype=float)
        return np.where(inside, values, 0.0)


@dataclass(frozen=True)
class Chord:
    anchor: np.ndarray
    direction: np.ndarray
    s_lo: float
    s_hi: float

    @property
    def length(self) -> float:
        return self.s_hi - self.s_lo

    def point(self, s) -> np.ndarray:
        return self.anchor + np.multiply.outer(s, self.direction)


@dataclass(frozen=True)
class IntervalSet:
    """Disjoint open intervals of the chord parameter.

    ``rejection_only`` is set when the target is not quasi-concave: the
    intervals are then located by a grid scan and samplers must not rely on
    them, using rejection on the full chord instead.
    """

    intervals: tuple
    rejection_only: bool = False

    def __post_init__(self):
        prev = -np.inf
        for a, b in self.intervals:
            if not a < b or a < prev:
                raise ValueError(f"intervals must be ordered and disjoint: {self.intervals}")
            prev = b

    @property
    def length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def contains(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros(s.shape, dtype=bool)
        for a, b in self.intervals:
            out |= (s > a) & (s < b)
        return out


def _sqnorm(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return np.einsum("...i,...i->...", X, X)


def _as_point(target, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 and target.dim == 1:
        x = x.reshape(1)
    if x.shape != (target.dim,):
        raise ValueError(f"expected a point of dimension {target.dim}, got shape {x.shape}")
    return x


def _as_direction(theta, dim) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 0 and dim == 1:
        theta = theta.reshape(1)
    if theta.shape != (dim,):
        raise ValueError(f"expected a direction of dimension {dim}, got shape {theta.shape}")
    norm = np.linalg.norm(theta)
    if norm == 0:
        raise ValueError("zero direction")
    return theta / norm


def eval_density(target: TargetDensity, x) -> float:
    """Return ``rho(x)``, exactly zero off the support."""
    return float(target.density(_as_point(target, x)))


# ---------------------------------------------------------------------------
# chords


def box_chords(bbox: BoundingBox, X: np.ndarray, Theta: np.ndarray):
    """Parameter ranges of the lines ``X + s*Theta`` clipped to ``bbox``.

    Rows of ``X`` must lie inside the box; rows of ``Theta`` are unit vectors.
    """
    X = np.atleast_2d(X)
    Theta = np.atleast_2d(Theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (bbox.lo - X) / Theta
        b = (bbox.hi - X) / Theta
    moving = Theta != 0
    lo = np.where(moving, np.minimum(a, b), -np.inf)
    hi = np.where(moving, np.maximum(a, b), np.inf)
    s_lo = np.minimum(lo.max(axis=1), 0.0)
    s_hi = np.maximum(hi.min(axis=1), 0.0)
    return s_lo, s_hi


def chord_segment(target: TargetDensity, x, theta) -> Chord:
    """Range of ``s`` for which ``x + s*theta`` stays inside the bounding box."""
    x = _as_point(target, x)
    theta = _as_direction(theta, target.dim)
    if not target.support_test(x):
        raise DomainError(f"{x} is outside the support of {target.name}")
    s_lo, s_hi = box_chords(target.bbox, x[None], theta[None])
    return Chord(x, theta, float(s_lo[0]), float(s_hi[0]))


def _bisect_edges(target, X, Theta, t, good, bad, tol):
    """Shrink ``[good, bad]`` brackets until they are ``tol`` wide.

    ``rho > t`` holds at ``good`` and fails at ``bad``; the returned values
    are the last good parameters, so the edge itself is never overshot.
    """
    good = good.copy()
    bad = bad.copy()
    while True:
        active = np.abs(bad - good) > tol
        if not active.any():
            return good
        mid = 0.5 * (good[active] + bad[active])
        pts = X[active] + mid[:, None] * Theta[active]
        inside = target.density(pts) > t[active]
        g = good[active]
        b = bad[active]
        g[inside] = mid[inside]
        b[~inside] = mid[~inside]
        good[active] = g
        bad[active] = b


def level_intervals(target, X, Theta, t, s_lo, s_hi):
    """Vectorized level-chord endpoints for a quasi-concave target.

    Returns arrays ``(a, b)`` with ``rho(X + s*Theta) > t`` on ``[a, b]``.
    Callers guarantee ``rho(X) > t`` row by row.
    """
    X = np.atleast_2d(X)
    Theta = np.atleast_2d(Theta)
    t = np.broadcast_to(np.asarray(t, dtype=float), (X.shape[0],))
    tol = BISECTION_RTOL * (s_hi - s_lo)
    zero = np.zeros_like(s_lo)
    ends = []
    for edge in (s_hi, s_lo):
        at_edge = target.density(X + edge[:, None] * Theta) > t
        e = np.where(at_edge, edge, zero)
        todo = ~at_edge
        if todo.any():
            e[todo] = _bisect_edges(target, X[todo], Theta[todo], t[todo],
                                    zero[todo], edge[todo], tol[todo])
        ends.append(e)
    b, a = ends
    return a, b


def _scan_intervals(target, x, theta, t, s_lo, s_hi, cells=1024):
    """Grid scan plus bisection for level sets of arbitrary shape."""
    grid = np.union1d(np.linspace(s_lo, s_hi, cells + 1), [0.0])
    above = target.density(x + grid[:, None] * theta) > t
    tol = BISECTION_RTOL * (s_hi - s_lo)
    intervals = []
    k = 0
    while k < grid.size:
        if not above[k]:
            k += 1
            continue
        start = k
        while k + 1 < grid.size and above[k + 1]:
            k += 1
        lo_edge, hi_edge = grid[start], grid[k]
        one = np.ones((1, 1)) * x
        th = theta[None]
        if start > 0:
            lo_edge = _bisect_edges(target, one, th, np.array([t]), np.array([lo_edge]),
                                    np.array([grid[start - 1]]), tol)[0]
        if k + 1 < grid.size:
            hi_edge = _bisect_edges(target, one, th, np.array([t]), np.array([hi_edge]),
                                    np.array([grid[k + 1]]), tol)[0]
        if hi_edge > lo_edge:
            intervals.append((float(lo_edge), float(hi_edge)))
        k += 1
    return intervals


def level_chord(target: TargetDensity, x, theta, t) -> IntervalSet:
    """The set ``{s : rho(x + s*theta) > t}`` within the bounding-box chord.

    Quasi-concave targets give a single interval whose endpoints are located
    by bisection. Other targets are scanned on a grid and the result is
    flagged ``rejection_only``.
    """
    chord = chord_segment(target, x, theta)
    rho_x = eval_density(target, chord.anchor)
    if not 0 <= t < rho_x:
        raise ValueError(f"level t={t} must lie in [0, rho(x)) = [0, {rho_x})")
    if target.quasi_concave:
        a, b = level_intervals(target, chord.anchor[None], chord.direction[None], t,
                               np.array([chord.s_lo]), np.array([chord.s_hi]))
        return IntervalSet(((float(a[0]), float(b[0])),))
    intervals = _scan_intervals(target, chord.anchor, chord.direction, t, chord.s_lo, chord.s_hi)
    return IntervalSet(tuple(intervals), rejection_only=True)


# ---------------------------------------------------------------------------
# exact draws


def sample_pi(target: TargetDensity, rng, attempt_cap: int = DEFAULT_ATTEMPT_CAP) -> np.ndarray:
    """One exact draw from the normalized target by bounding-box rejection."""
    for _ in range(attempt_cap):
        x = target.bbox.uniform(rng, 1)
        if rng.random() * target.sup_rho < target.density(x)[0]:
            return x[0]
    raise EfficiencyError(f"sample_pi exceeded {attempt_cap} attempts for target {target.name!r}")


def sample_pi_many(target: TargetDensity, n: int, rng,
                   attempt_cap: int = DEFAULT_ATTEMPT_CAP) -> np.ndarray:
    """``n`` independent exact draws, proposed in vectorized blocks."""
    out = np.empty((n, target.dim))
    filled = 0
    proposals = 0
    block = max(64, n)
    while filled < n:
        X = target.bbox.uniform(rng, block)
        u = rng.random(block)
        keep = X[u * target.sup_rho < target.density(X)]
        take = min(keep.shape[0], n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
        proposals += block
        if proposals > attempt_cap * max(filled, 1):
            raise EfficiencyError(
                f"sample_pi exceeded {attempt_cap} attempts per draw for target {target.name!r}")
        if keep.shape[0]:
            block = int(min(4 * n, max(64, 1.2 * (n - filled) * block / keep.shape[0])))
        else:
            block = min(4 * block, 10**7)
    return out


def density_ratio_audit(target: TargetDensity, points) -> float:
    """Largest observed ``rho / sup_rho`` over ``points``; above 1 means the bound is wrong."""
    return float(np.max(target.density(np.atleast_2d(points))) / target.sup_rho)


# ---------------------------------------------------------------------------
# catalog


def uniform_box(lo, hi) -> TargetDensity:
    bbox = BoundingBox(lo, hi)
    lo, hi = bbox.lo, bbox.hi
    d = bbox.dim

    def support(X):
        return bbox.contains(X)

    def rho(X):
        return np.ones(np.shape(X)[:-1])

    center = (lo + hi) / 2
    var = (hi - lo) ** 2 / 12
    second = (lo**2 + lo * hi + hi**2) / 3
    moments = {f"x{i + 1}": (float(center[i]), float(var[i])) for i in range(d)}
    moments["sqnorm"] = (float(second.sum()), None)
    moments["half_x1"] = (float(np.clip(hi[0], 0, None) - np.clip(lo[0], 0, None)) / float(hi[0] - lo[0]),
                          None)
    return TargetDensity("uniform_box", d, rho, support, bbox, 1.0, True, moments)


def uniform_ball(dim: int, radius: float = 1.0) -> TargetDensity:
    bbox = BoundingBox(-radius * np.ones(dim), radius * np.ones(dim))

    def support(X):
        return _sqnorm(X) <= radius**2

    def rho(X):
        return np.ones(np.shape(X)[:-1])

    r2 = dim * radius**2 / (dim + 2)
    moments = {f"x{i + 1}": (0.0, r2 / dim) for i in range(dim)}
    moments["sqnorm"] = (r2, None)
    moments["half_x1"] = (0.5, 0.25)
    return TargetDensity("uniform_ball", dim, rho, support, bbox, 1.0, True, moments)


def gaussian_box(dim: int, half_width: float = 3.0) -> TargetDensity:
    """Standard Gaussian shape ``exp(-|x|^2/2)`` truncated to ``[-h, h]^d``."""
    bbox = BoundingBox(-half_width * np.ones(dim), half_width * np.ones(dim))

    def support(X):
        return bbox.contains(X)

    def rho(X):
        return np.exp(-0.5 * _sqnorm(X))

    var = float(stats.truncnorm.var(-half_width, half_width))
    moments = {f"x{i + 1}": (0.0, var) for i in range(dim)}
    moments["sqnorm"] = (dim * var, None)
    moments["half_x1"] = (0.5, 0.25)
    return TargetDensity("gaussian_box", dim, rho, support, bbox, 1.0, True, moments)


def cone(dim: int) -> TargetDensity:
    """``rho(x) = 1 - |x|`` on the open unit ball."""
    bbox = BoundingBox(-np.ones(dim), np.ones(dim))

    def support(X):
        return _sqnorm(X) < 1.0

    def rho(X):
        return 1.0 - np.sqrt(_sqnorm(X))

    # radial density r^(d-1) (1 - r): E|x|^2 = B(d+2, 2) / B(d, 2)
    r2 = float(special.beta(dim + 2, 2) / special.beta(dim, 2))
    moments = {f"x{i + 1}": (0.0, r2 / dim) for i in range(dim)}
    moments["sqnorm"] = (r2, None)
    moments["half_x1"] = (0.5, 0.25)
    return TargetDensity("cone", dim, rho, support, bbox, 1.0, True, moments)


def bimodal(separation: float = 1.5, scale: float = 0.5, half_width: float = 4.0) -> TargetDensity:
    """Equal mixture of two Gaussian bumps on ``[-h, h]``; not quasi-concave."""
    bbox = BoundingBox([-half_width], [half_width])

    def support(X):
        return bbox.contains(X)

    def rho(X):
        x = np.asarray(X)[..., 0]
        return (np.exp(-0.5 * ((x - separation) / scale) ** 2)
                + np.exp(-0.5 * ((x + separation) / scale) ** 2))

    peak = 1.0 + np.exp(-2.0 * (separation / scale) ** 2)
    return TargetDensity("bimodal", 1, rho, support, bbox, float(peak) * (1 + 1e-9), False,
                         {"x1": (0.0, None), "half_x1": (0.5, 0.25)})


CATALOG = {
    "uniform_box": uniform_box,
    "uniform_ball": uniform_ball,
    "gaussian_box": gaussian_box,
    "cone": cone,
    "bimodal": bimodal,
}


def make_target(name: str, **params) -> TargetDensity:
    """Build a catalog target by name.

    ``uniform_box`` accepts ``lo``/``hi`` or ``dim`` (giving ``[-1, 1]^dim``).
    """
    if name not in CATALOG:
        raise KeyError(f"unknown target {name!r}; choose from {sorted(CATALOG)}")
    if name == "uniform_box" and "dim" in params:
        d = params.pop("dim")
        params.setdefault("lo", -np.ones(d))
        params.setdefault("hi", np.ones(d))
    return CATALOG[name](**params)
