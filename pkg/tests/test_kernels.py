import csv
import io

import numpy as np
import pytest
from scipy import integrate, stats

from chainorder.errors import DomainError, EfficiencyError
from chainorder.kernels import (ChainTrace, KernelSpec, ProposalSpec, hit_and_run_step,
                                hybrid_slice_step, run_chain, rwm_step, sample_direction,
                                sample_directions, sample_on_chord, simple_slice_step, step_many,
                                step_many_with_info)
from chainorder.targets import (TargetDensity, BoundingBox, bimodal, chord_segment, cone,
                                gaussian_box, sample_pi_many, uniform_ball, uniform_box)

from conftest import chisq_pvalue, cone_cdf

WALK = ProposalSpec("ball_walk", 0.5)
SPECS = [KernelSpec.hit_and_run(), KernelSpec.simple_slice(), KernelSpec.hybrid_slice(),
         KernelSpec.rwm(WALK)]
TARGETS_1D = [cone(1), gaussian_box(1), bimodal(), uniform_box([-1], [1])]
TARGETS_2D = [cone(2), gaussian_box(2), uniform_ball(2), uniform_box([-1, -1], [1, 1])]


def _cell_masses(target, edges):
    f = lambda s: target.density(np.array([[s]]))[0]
    mass = np.array([integrate.quad(f, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])])
    return mass / mass.sum()


def _angle_pvalue(V, bins=16):
    ang = np.arctan2(V[:, 1], V[:, 0])
    counts, _ = np.histogram(ang, np.linspace(-np.pi, np.pi, bins + 1))
    return chisq_pvalue(counts, np.full(bins, 1 / bins))


# ---------------------------------------------------------------------------
# directions and proposals


def test_direction_d1_is_a_fair_sign(rng):
    V = sample_directions(rng, 10000, 1)[:, 0]
    assert set(np.unique(V)) == {-1.0, 1.0}
    assert abs(np.mean(V > 0) - 0.5) <= 0.01 + 3 * 0.005


def test_direction_d2_angle_uniform(rng):
    assert _angle_pvalue(sample_directions(rng, 100000, 2)) > 1e-3


@pytest.mark.parametrize("d", [1, 2, 3, 7])
def test_direction_unit_norm(rng, d):
    V = sample_directions(rng, 1000, d)
    assert np.max(np.abs(np.linalg.norm(V, axis=1) - 1)) < 1e-12
    assert abs(np.linalg.norm(sample_direction(rng, d)) - 1) < 1e-12


@pytest.mark.parametrize("kind", ["ball_walk", "gaussian"])
def test_proposal_rotation_invariant(rng, kind):
    q = ProposalSpec(kind, 0.7)
    for d in (1, 2, 3):
        r = rng.random(50) * 1.0
        a, b = sample_directions(rng, 50, d), sample_directions(rng, 50, d)
        assert np.allclose(q.density(r[:, None] * a), q.density(r[:, None] * b), rtol=1e-12, atol=0)


@pytest.mark.parametrize("kind", ["ball_walk", "gaussian"])
def test_proposal_integrates_to_one_d1(kind):
    q = ProposalSpec(kind, 0.7)
    val, _ = integrate.quad(lambda z: q.density(np.array([[z]]))[0], -10, 10, points=[-0.7, 0.7])
    assert val == pytest.approx(1.0, abs=1e-8)


def test_ball_walk_increments_inside_ball(rng):
    Z = ProposalSpec("ball_walk", 0.3).sample(rng, 10000, 3)
    assert np.linalg.norm(Z, axis=1).max() <= 0.3


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("gibbs")
    with pytest.raises(ValueError):
        KernelSpec("rwm")
    with pytest.raises(ValueError):
        KernelSpec("simple_slice", proposal=WALK)
    with pytest.raises(ValueError):
        KernelSpec("hit_and_run")
    with pytest.raises(ValueError):
        ProposalSpec("ball_walk", 0.0)
    assert [s.label for s in SPECS] == ["H", "S", "U", "M"]


# ---------------------------------------------------------------------------
# chord sampling and hit-and-run


def test_sample_on_chord_uniform_is_uniform(rng):
    box = uniform_box([-1, -1], [1, 1])
    x = np.array([0.3, -0.4])
    theta = np.array([0.6, 0.8])
    c = chord_segment(box, x, theta)
    s = np.array([(sample_on_chord(box, c, rng) - x) @ theta for _ in range(3000)])
    assert stats.kstest(s, stats.uniform(c.s_lo, c.s_hi - c.s_lo).cdf).pvalue > 1e-3


def test_chord_law_cone_matches_analytic_cdf(rng):
    t = cone(1)
    X = np.full((100000, 1), 0.4)
    Y = step_many(t, KernelSpec.hit_and_run(), X, rng)[:, 0]
    assert stats.kstest(Y, cone_cdf).pvalue > 1e-3


def test_chord_grid_refinement_consistent(rng):
    t = gaussian_box(1, half_width=3.0)
    X = np.zeros((100000, 1))
    a = step_many(t, KernelSpec.hit_and_run(inner_grid=2**12), X, rng)[:, 0]
    b = step_many(t, KernelSpec.hit_and_run(inner_grid=2**13), X, rng)[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_hit_and_run_d1_samples_pi_from_any_start(rng):
    t = bimodal()
    Y = step_many(t, KernelSpec.hit_and_run(), np.full((20000, 1), -3.9), rng)[:, 0]
    Z = sample_pi_many(t, 20000, rng)[:, 0]
    assert stats.ks_2samp(Y, Z).pvalue > 1e-3


def test_hit_and_run_ball_center_direction_uniform(rng):
    t = uniform_ball(2)
    Y = step_many(t, KernelSpec.hit_and_run(), np.zeros((20000, 2)), rng)
    assert _angle_pvalue(Y) > 1e-3


def test_hit_and_run_single_step_wrapper(rng):
    y = hit_and_run_step(cone(2), [0.1, 0.2], rng)
    assert cone(2).support_test(y)
    with pytest.raises(DomainError):
        hit_and_run_step(cone(2), [2.0, 0.0], rng)


# ---------------------------------------------------------------------------
# slice samplers


def test_simple_slice_uniform_target_exact_in_one_step(rng):
    t = uniform_box([-1, -1], [1, 1])
    Y = step_many(t, KernelSpec.simple_slice(), np.full((20000, 2), 0.9), rng)
    for j in range(2):
        assert stats.kstest(Y[:, j], stats.uniform(-1, 2).cdf).pvalue > 1e-3


def _slice_law_from_zero(edges):
    """One-step law of the simple slice sampler from 0 for the cone on [-1, 1].

    With t uniform on (0, 1) the output is uniform on (t - 1, 1 - t); the
    density of y is -log|y|, whose cell masses come from quadrature.
    """
    dens = lambda y: -np.log(abs(y)) / 2
    return np.array([integrate.quad(dens, a, b, points=[0.0] if a < 0 < b else None)[0]
                     for a, b in zip(edges[:-1], edges[1:])])


def test_simple_slice_cone_from_zero_matches_quadrature(rng):
    edges = np.linspace(-1, 1, 33)
    probs = _slice_law_from_zero(edges)
    assert probs.sum() == pytest.approx(1.0, abs=1e-10)
    Y = step_many(cone(1), KernelSpec.simple_slice(), np.zeros((100000, 1)), rng)[:, 0]
    counts, _ = np.histogram(Y, edges)
    assert chisq_pvalue(counts, probs) > 1e-3


def test_simple_slice_efficiency_error_carries_level(rng):
    t = uniform_ball(3)
    with pytest.raises(EfficiencyError) as info:
        step_many(t, KernelSpec.simple_slice(attempt_cap=1), np.zeros((400, 3)), rng)
    assert info.value.level is not None and 0 <= info.value.level < 1


def test_hybrid_equals_simple_in_d1(rng):
    t = cone(1)
    X = np.full((100000, 1), 0.3)
    a = step_many(t, KernelSpec.simple_slice(), X, rng)[:, 0]
    b = step_many(t, KernelSpec.hybrid_slice(), X, rng)[:, 0]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_hybrid_uniform_target_uniform_on_chord(rng):
    t = uniform_box([-1], [2])
    Y = step_many(t, KernelSpec.hybrid_slice(), np.full((20000, 1), 1.5), rng)[:, 0]
    assert stats.kstest(Y, stats.uniform(-1, 3).cdf).pvalue > 1e-3


def test_hybrid_single_step_wrapper(rng):
    for target in (cone(2), bimodal()):
        x = sample_pi_many(target, 1, rng)[0]
        assert target.support_test(hybrid_slice_step(target, x, rng))
        assert target.support_test(simple_slice_step(target, x, rng))


# ---------------------------------------------------------------------------
# random walk Metropolis


def test_rwm_uniform_target_accepts_every_interior_proposal(rng):
    t = uniform_box([-1, -1], [1, 1])
    X = np.zeros((100000, 2))
    Y, acc, _ = step_many_with_info(t, KernelSpec.rwm(ProposalSpec("ball_walk", 0.5)), X, rng)
    moved = np.any(Y != X, axis=1)
    assert np.array_equal(moved, acc)
    assert abs(moved.mean() - 0.5) <= 3 * 0.5 / np.sqrt(X.shape[0])


def _step_target():
    """rho = 2 left of the origin and 1 right of it, on [-1, 1]."""
    rho = lambda X: np.where(X[:, 0] < 0, 2.0, 1.0)
    support = lambda X: np.all((X >= -1) & (X <= 1), axis=-1)
    return TargetDensity("step", 1, rho, support, BoundingBox(np.array([-1.0]), np.array([1.0])),
                         2.0, False)


def test_rwm_acceptance_ratio_half(rng):
    t = _step_target()
    n = 200000
    X = np.full((n, 1), -1e-12)
    Y = step_many(t, KernelSpec.rwm(ProposalSpec("ball_walk", 1e-3)), X, rng)[:, 0]
    # proposals land right of 0 half the time and pass the ratio test half the time
    p = np.mean(Y > 0)
    assert abs(p - 0.125) <= 3 * np.sqrt(0.125 * 0.875 / n)


@pytest.mark.parametrize("target", TARGETS_1D + TARGETS_2D, ids=lambda t: f"{t.name}{t.dim}")
def test_rwm_lazy_and_local(rng, target):
    n = 100000
    X = sample_pi_many(target, n, rng)
    q = ProposalSpec("ball_walk", 0.6)
    Y = step_many(target, KernelSpec.rwm(q), X, rng)
    held = np.all(Y == X, axis=1)
    assert held.mean() >= 0.5 - 3 * 0.5 / np.sqrt(n)
    assert np.linalg.norm(Y - X, axis=1).max() <= 0.6 + 1e-12
    assert np.all(target.support(Y))


def test_rwm_step_wrapper_stays_in_support(rng):
    t = uniform_ball(2)
    x = np.array([0.99, 0.0])
    for _ in range(200):
        x = rwm_step(t, ProposalSpec("gaussian", 0.5), x, rng)
        assert t.support_test(x)


# ---------------------------------------------------------------------------
# every kernel


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
@pytest.mark.parametrize("target", TARGETS_1D, ids=lambda t: t.name)
def test_stationarity_preserved_1d(rng, spec, target):
    edges = np.linspace(target.bbox.lo[0], target.bbox.hi[0], 33)
    X = sample_pi_many(target, 20000, rng)
    Y = step_many(target, spec, X, rng)[:, 0]
    counts, _ = np.histogram(Y, edges)
    assert chisq_pvalue(counts, _cell_masses(target, edges)) > 1e-3


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
@pytest.mark.parametrize("target", TARGETS_2D, ids=lambda t: t.name)
def test_outputs_stay_in_support_2d(rng, spec, target):
    X = sample_pi_many(target, 3000, rng)
    Y = step_many(target, spec, X, rng)
    assert np.all(target.support(Y))
    # 32 parameter combinations x 2 margins: Bonferroni-adjusted level
    for j in range(2):
        assert stats.ks_2samp(Y[:, j], sample_pi_many(target, 3000, rng)[:, j]).pvalue > 1e-3 / 64


def test_step_many_rejects_points_outside_support(rng):
    with pytest.raises(DomainError):
        step_many(cone(1), KernelSpec.simple_slice(), np.array([[1.5]]), rng)


# ---------------------------------------------------------------------------
# chains and traces


def test_run_chain_zero_steps():
    tr = run_chain(cone(2), KernelSpec.hybrid_slice(), [0.1, 0.1], 0, 1)
    assert tr.states.shape == (1, 2) and np.array_equal(tr.states[0], [0.1, 0.1])


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind)
def test_run_chain_deterministic(spec):
    a = run_chain(gaussian_box(2), spec, [0.0, 0.5], 50, 123)
    b = run_chain(gaussian_box(2), spec, [0.0, 0.5], 50, 123)
    assert np.array_equal(a.states, b.states) and a.to_csv() == b.to_csv()
    assert a.seed == 123


def test_run_chain_hit_and_run_d1_uncorrelated():
    tr = run_chain(cone(1), KernelSpec.hit_and_run(), [0.0], 1000, 9)
    x = tr.states[1:, 0]
    r1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(r1) <= 4 / np.sqrt(x.size)


def test_run_chain_step_index_on_efficiency_error():
    with pytest.raises(EfficiencyError) as info:
        run_chain(uniform_ball(3), KernelSpec.simple_slice(attempt_cap=1), np.zeros(3), 500, 4)
    assert info.value.step is not None and info.value.step >= 1
    assert f"step {info.value.step}" in str(info.value)


def test_rwm_trace_moves_within_proposal_support():
    tr = run_chain(cone(2), KernelSpec.rwm(ProposalSpec("ball_walk", 0.25)), [0.0, 0.0], 500, 6)
    jumps = np.linalg.norm(np.diff(tr.states, axis=0), axis=1)
    assert np.all(jumps <= 0.25 + 1e-12)
    assert np.array_equal(jumps > 0, tr.accepted)


def test_trace_csv_format():
    tr = run_chain(cone(2), KernelSpec.hybrid_slice(), [0.1, -0.2], 3, 5)
    text = tr.to_csv()
    assert text.count("\r\n") == 5 and "\n" not in text.replace("\r\n", "")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["step", "x_1", "x_2", "accepted"]
    assert rows[1][3] == "" and all(r[3] in ("0", "1") for r in rows[2:])
    back = np.array([[float(v) for v in r[1:3]] for r in rows[1:]])
    assert np.array_equal(back, tr.states)
