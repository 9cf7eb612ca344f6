"""Monte Carlo checks of the ordering for the continuous samplers.

Everything here estimates a stationary quantity: the one-step form
``E f(X0) f(X1)`` with ``X0 ~ pi``, the mean square error of ergodic averages
started at ``pi``, and the asymptotic variance through batch means. Finite
matrices (:class:`~chainorder.lab.DiscreteKernel`) run through the same code
paths with integer states, which is how the estimators are checked against
closed forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from .kernels import KernelSpec, ChainTrace, ProposalSpec, step_many
from .lab import DiscreteKernel, ComparisonReport
from .targets import TargetDensity, sample_pi_many

SIMPSON_NODES = 10**6 + 1
MIDPOINT_CELLS = 4096
SE_RULE = 3.0
DEFAULT_BATCHES = 32
LABEL_ORDER = ("M", "U", "H", "S")
FORM_PAIRS = (("M", "U"), ("U", "H"), ("U", "S"))
MSE_PAIRS = (("M", "U"), ("U", "H"))


@dataclass(frozen=True)
class TestFunction:
    """A vectorized ``f``: maps an ``(n, d)`` array (or integer states) to ``(n,)``."""

    __test__ = False

    id: str
    fn: Callable
    known_mean: Optional[float] = None

    def __call__(self, X) -> np.ndarray:
        return np.asarray(self.fn(X), dtype=float)


@dataclass(frozen=True)
class EstimateWithError:
    value: float
    stderr: float
    replications: int
    mean_f: Optional[float] = None


def coordinate(i: int) -> Callable:
    return lambda X: np.asarray(X, dtype=float)[:, i]


def _sqnorm(X):
    X = np.asarray(X, dtype=float)
    return np.einsum("ij,ij->i", X, X)


def _half_x1(X):
    return (np.asarray(X, dtype=float)[:, 0] > 0).astype(float)


_FUNCTIONS = {"sqnorm": _sqnorm, "half_x1": _half_x1}


def quadrature_mean(target: TargetDensity, fn: Callable) -> float:
    """``E_pi f`` by composite Simpson with 10^6 nodes (d=1) or a 4096^2 midpoint rule (d=2)."""
    lo, hi = target.bbox.lo, target.bbox.hi
    if target.dim == 1:
        # split at the origin, where catalog densities and test functions have
        # their kinks and jumps; each piece is evaluated on its open side
        cuts = [lo[0], hi[0]] if not lo[0] < 0 < hi[0] else [lo[0], 0.0, hi[0]]
        num = den = 0.0
        for a, b in zip(cuts[:-1], cuts[1:]):
            m = 2 * int(SIMPSON_NODES * (b - a) / (hi[0] - lo[0]) / 2) + 1
            x = np.linspace(a, b, m)
            x[0], x[-1] = np.nextafter(a, b), np.nextafter(b, a)
            X = x[:, None]
            w = target.density(X)
            num += integrate.simpson(w * fn(X), x=x)
            den += integrate.simpson(w, x=x)
        return float(num / den)
    if target.dim == 2:
        m = MIDPOINT_CELLS
        gx = lo[0] + (np.arange(m) + 0.5) * (hi[0] - lo[0]) / m
        gy = lo[1] + (np.arange(m) + 0.5) * (hi[1] - lo[1]) / m
        num = den = 0.0
        for rows in np.array_split(np.arange(m), 16):
            X = np.column_stack([np.repeat(gx[rows], m), np.tile(gy, rows.size)])
            w = target.density(X)
            num += math.fsum(w * fn(X))
            den += math.fsum(w)
        return num / den
    raise ValueError("quadrature means are available for d <= 2 only")


def test_function(target: TargetDensity, fid: str) -> TestFunction:
    """Catalog function ``x<i>``, ``sqnorm`` or ``half_x1`` with its mean under ``target``."""
    if fid in _FUNCTIONS:
        fn = _FUNCTIONS[fid]
    elif fid.startswith("x") and fid[1:].isdigit() and 1 <= int(fid[1:]) <= target.dim:
        fn = coordinate(int(fid[1:]) - 1)
    else:
        raise ValueError(f"unknown test function {fid!r}")
    if fid in target.exact_moments:
        mean = float(target.exact_moments[fid][0])
    else:
        mean = quadrature_mean(target, fn)
    return TestFunction(fid, fn, mean)


test_function.__test__ = False


def discrete_function(g, pi, fid: str = "g") -> TestFunction:
    """Test function on the states ``0..N-1`` of a finite kernel."""
    g = np.asarray(g, dtype=float)
    return TestFunction(fid, lambda idx: g[np.asarray(idx, dtype=int)], float(np.dot(pi, g)))


# ---------------------------------------------------------------------------
# stepping through continuous targets and finite matrices alike


def _draw_stationary(target, kernel, n, rng):
    if isinstance(kernel, DiscreteKernel):
        return rng.choice(kernel.size, size=n, p=kernel.pi)
    return sample_pi_many(target, n, rng)


def _advance(target, kernel, X, rng):
    if isinstance(kernel, DiscreteKernel):
        cum = np.cumsum(kernel.P, axis=1)
        u = rng.random(X.shape[0]) * cum[X, -1]
        nxt = (cum[X] <= u[:, None]).sum(axis=1)
        return np.minimum(nxt, kernel.size - 1)
    return step_many(target, kernel, X, rng)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    if n and np.all(values == values[0]):
        return float(values[0]), 0.0
    mean = math.fsum(values) / n
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return mean, se


def one_step_pairs(target, kernel, n_pairs: int, rng, x0=None):
    """Stationary pairs ``(X0, X1)``; ``x0`` supplies a shared pool of starts."""
    X0 = _draw_stationary(target, kernel, n_pairs, rng) if x0 is None else x0
    return X0, _advance(target, kernel, X0, rng)


def _form_from_pairs(f, X0, X1):
    f0, f1 = f(X0), f(X1)
    value, se = _mean_se(f0 * f1)
    mean_f = 0.5 * (math.fsum(f0) + math.fsum(f1)) / f0.size
    return EstimateWithError(value, se, f0.size, mean_f), f0 * f1


def one_step_form(target, kernel, f: TestFunction, n_pairs: int, rng, x0=None) -> EstimateWithError:
    """Estimate ``<Pf, f>_pi = E f(X0) f(X1)`` from ``n_pairs`` stationary starts."""
    X0, X1 = one_step_pairs(target, kernel, n_pairs, rng, x0)
    return _form_from_pairs(f, X0, X1)[0]


def _squared_errors(target, kernel, f, n, X, rng):
    """``|S_n f - Ef|^2`` for chains started at the rows of ``X``."""
    total = f(X).astype(float)
    for _ in range(n - 1):
        X = _advance(target, kernel, X, rng)
        total = total + f(X)
    return (total / n - f.known_mean) ** 2


def mse_of_average(target, kernel, f: TestFunction, n: int, replications: int, rng,
                   x0=None) -> EstimateWithError:
    """Mean and standard error of ``|S_n(f) - Ef|^2`` over stationary-started chains."""
    if f.known_mean is None:
        raise ValueError(f"test function {f.id!r} has no known mean")
    if n < 1 or replications < 1:
        raise ValueError("chain length and replications must be positive")
    X = _draw_stationary(target, kernel, replications, rng) if x0 is None else x0
    err = _squared_errors(target, kernel, f, n, X, rng)
    value, se = _mean_se(err)
    return EstimateWithError(value, se, replications)


def batch_means_variance(trace, f: TestFunction, batches: int = DEFAULT_BATCHES) -> EstimateWithError:
    """Batch-means estimate ``L * Var(batch means)`` of the asymptotic variance.

    ``L`` is the batch length. The standard error is the delete-one-batch
    jackknife.
    """
    states = trace.states if isinstance(trace, ChainTrace) else np.asarray(trace)
    if batches < 8:
        raise ValueError("use at least 8 batches")
    total = len(states)
    if total < 2 * batches:
        raise ValueError(f"trace of length {total} is too short for {batches} batches")
    if total % batches:
        raise ValueError(f"trace length {total} is not divisible by {batches}")
    L = total // batches
    values = f(states)
    means = values.reshape(batches, L).mean(axis=1)
    est = L * float(np.var(means, ddof=1))
    if est == 0.0:
        return EstimateWithError(0.0, 0.0, batches)
    keep = ~np.eye(batches, dtype=bool)
    loo = np.array([L * np.var(means[k], ddof=1) for k in keep])
    se = math.sqrt((batches - 1) / batches * float(np.sum((loo - loo.mean()) ** 2)))
    return EstimateWithError(est, se, batches)


def run_discrete_chain(kernel: DiscreteKernel, x0: int, n: int, rng) -> np.ndarray:
    """Integer trace ``x0, X_1, ..., X_n`` of a finite kernel."""
    cum = np.cumsum(kernel.P, axis=1)
    cum[:, -1] = np.inf
    u = rng.random(n)
    out = np.empty(n + 1, dtype=int)
    out[0] = x = int(x0)
    for k in range(n):
        x = int(np.searchsorted(cum[x], u[k], side="right"))
        out[k + 1] = x
    return out


# ---------------------------------------------------------------------------
# closed forms on finite kernels


def _centered(P: DiscreteKernel, g):
    g = np.asarray(g, dtype=float)
    return g - np.dot(P.pi, g)


def mse_closed_form(P: DiscreteKernel, g, n: int) -> float:
    """``(1/n)<g,g> + (2/n^2) sum_{k<n} (n-k) <P^k g, g>`` for centered ``g``."""
    g = _centered(P, g)
    total = float(np.dot(P.pi, g * g)) / n
    h = g.copy()
    for k in range(1, n):
        h = P.P @ h
        total += 2.0 * (n - k) * float(np.dot(P.pi, h * g)) / n**2
    return total


def asymptotic_variance(P: DiscreteKernel, g) -> float:
    """``Var(g) + 2 sum_{k>=1} <P^k g, g>`` summed through the spectrum."""
    g = _centered(P, g)
    r = np.sqrt(P.pi)
    A = r[:, None] * P.P / r[None, :]
    vals, vecs = np.linalg.eigh(0.5 * (A + A.T))
    c = vecs.T @ (r * g)
    keep = np.abs(c) > 1e-14
    if np.any(vals[keep] >= 1 - 1e-12):
        raise ValueError("g has weight on an eigenvalue equal to 1")
    return float(np.sum(c[keep] ** 2 * (1 + vals[keep]) / (1 - vals[keep])))


# ---------------------------------------------------------------------------
# paired comparison


def default_kernels(target: TargetDensity, delta: Optional[float] = None) -> dict:
    """The four samplers keyed by label; the walk radius defaults to a fifth of the box."""
    if delta is None:
        delta = 0.2 * float(np.min(target.bbox.hi - target.bbox.lo))
    specs = [KernelSpec.rwm(ProposalSpec("ball_walk", delta)), KernelSpec.hybrid_slice(),
             KernelSpec.hit_and_run(), KernelSpec.simple_slice()]
    return {s.label: s for s in specs}


def _pair_verdict(diff, se, strict):
    if diff < -SE_RULE * se:
        return "FAIL"
    if strict and not diff > SE_RULE * se:
        return "INCONCLUSIVE"
    return "PASS"


def _worst(verdicts):
    for v in ("FAIL", "INCONCLUSIVE"):
        if v in verdicts:
            return v
    return "PASS"


def compare_kernels(target, f_list, n_pairs: int, rng, kernels: Optional[dict] = None,
                    pairs=None, mse_n: int = 100, mse_reps: int = 500, mse_pairs=None,
                    strict: bool = False) -> ComparisonReport:
    """Paired estimates of the one-step forms and of the MSE for every ``f``.

    All kernels start from one shared pool of stationary draws and each
    kernel advances it with its own child stream. For every ordered pair
    ``(hi, lo)`` the verdict is PASS when ``lo <= hi + 3 * se`` where ``se``
    is the standard error of the paired difference. With ``strict`` the
    ordering must be resolved: PASS needs ``hi > lo + 3 * se`` and anything in
    between is INCONCLUSIVE. Set ``mse_reps=0`` to skip the MSE rows.
    """
    kernels = default_kernels(target) if kernels is None else dict(kernels)
    labels = [lab for lab in LABEL_ORDER if lab in kernels] + \
             [lab for lab in kernels if lab not in LABEL_ORDER]
    if pairs is None:
        pairs = FORM_PAIRS
    if mse_pairs is None:
        mse_pairs = MSE_PAIRS
    mse_pairs = [p for p in mse_pairs if p[0] in kernels and p[1] in kernels]
    for hi, lo in list(pairs) + list(mse_pairs):
        if hi not in kernels or lo not in kernels:
            raise ValueError(f"pair ({hi}, {lo}) refers to a kernel that is not configured")

    pool = sample_pi_many(target, n_pairs, rng)
    streams = dict(zip(labels, rng.spawn(len(labels))))
    moved = {lab: step_many(target, kernels[lab], pool, streams[lab]) for lab in labels}

    rows = []
    for f in f_list:
        row = {"f_id": f.id}
        prods = {}
        for lab in labels:
            est, prods[lab] = _form_from_pairs(f, pool, moved[lab])
            row[f"qf_{lab}"] = est.value
            row[f"stderr_{lab}"] = est.stderr
        verdicts = []
        for hi, lo in pairs:
            diff, se = _mean_se(prods[hi] - prods[lo])
            row[f"margin_{hi}{lo}"] = diff
            row[f"stderr_{hi}{lo}"] = se
            verdicts.append(_pair_verdict(diff, se, strict))
        row["verdict"] = _worst(verdicts)
        rows.append(row)

    if mse_reps and mse_pairs:
        starts = sample_pi_many(target, mse_reps, rng)
        mse_labels = sorted({lab for p in mse_pairs for lab in p}, key=labels.index)
        mse_streams = dict(zip(mse_labels, rng.spawn(len(mse_labels))))
        for f in f_list:
            errs = {}
            row = {"f_id": f"mse[{f.id}]"}
            for lab in mse_labels:
                errs[lab] = _squared_errors(target, kernels[lab], f, mse_n, starts,
                                            mse_streams[lab])
                row[f"qf_{lab}"], row[f"stderr_{lab}"] = _mean_se(errs[lab])
            verdicts = []
            for hi, lo in mse_pairs:
                diff, se = _mean_se(errs[hi] - errs[lo])
                row[f"margin_{hi}{lo}"] = diff
                row[f"stderr_{hi}{lo}"] = se
                verdicts.append(_pair_verdict(diff, se, strict))
            row["verdict"] = _worst(verdicts)
            rows.append(row)

    columns = ["f_id"]
    columns += [f"qf_{lab}" for lab in labels] + [f"stderr_{lab}" for lab in labels]
    for hi, lo in dict.fromkeys(list(pairs) + list(mse_pairs)):
        columns += [f"margin_{hi}{lo}", f"stderr_{hi}{lo}"]
    summary = {"target": target.name, "n_pairs": n_pairs, "mse_n": mse_n,
               "mse_replications": mse_reps, "strict": strict,
               "kernels": {lab: kernels[lab].to_dict() for lab in labels}}
    return ComparisonReport(rows, summary, columns=tuple(columns),
                            pairs=tuple(dict.fromkeys(list(pairs) + list(mse_pairs))))


# ---------------------------------------------------------------------------
# reversibility


def _joint_bins(X, edges):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    k = len(edges[0]) + 1
    cell = np.zeros(len(X), dtype=int)
    for j in range(X.shape[1]):
        cell = cell * k + np.searchsorted(edges[j], X[:, j], side="right")
    return cell, k ** X.shape[1]


def exchangeability_test(X0, X1, bins_per_axis: int = 6):
    """Bowker symmetry test of the binned pair ``(X0, X1)`` against ``(X1, X0)``.

    Bins are marginal quantiles of the pooled sample. Returns ``(statistic,
    df, p_value)``.
    """
    X0 = np.asarray(X0, dtype=float).reshape(len(X0), -1)
    X1 = np.asarray(X1, dtype=float).reshape(len(X1), -1)
    both = np.vstack([X0, X1])
    q = np.linspace(0, 1, bins_per_axis + 1)[1:-1]
    edges = [np.unique(np.quantile(both[:, j], q)) for j in range(both.shape[1])]
    k = max(len(e) for e in edges) + 1
    edges = [np.pad(e, (0, k - 1 - len(e)), constant_values=np.inf) for e in edges]
    c0, m = _joint_bins(X0, edges)
    c1, _ = _joint_bins(X1, edges)
    table = np.zeros((m, m))
    np.add.at(table, (c0, c1), 1.0)
    upper = np.triu_indices(m, 1)
    a, b = table[upper], table.T[upper]
    used = (a + b) > 0
    stat = float(np.sum((a[used] - b[used]) ** 2 / (a[used] + b[used])))
    df = int(used.sum())
    return stat, df, float(stats.chi2.sf(stat, df)) if df else 1.0
