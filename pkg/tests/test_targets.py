import numpy as np
import pytest
from scipy import integrate, stats

from chainorder.errors import DomainError, EfficiencyError
from chainorder.targets import (CATALOG, BoundingBox, TargetDensity, bimodal, chord_segment, cone,
                                density_ratio_audit, eval_density, gaussian_box, level_chord,
                                make_target, sample_pi, sample_pi_many, uniform_ball, uniform_box)

from conftest import chisq_pvalue, cone_cdf

ALL_TARGETS = [uniform_box([-1, -1], [1, 1]), uniform_ball(2), gaussian_box(1), gaussian_box(2),
               cone(1), cone(2), bimodal(), uniform_ball(3)]
ONE_D = [uniform_box([-1], [1]), gaussian_box(1), cone(1), bimodal()]


def _ids(targets):
    return [f"{t.name}-{t.dim}" for t in targets]


def test_eval_density_examples():
    assert eval_density(uniform_box([-1, -1], [1, 1]), [0, 0]) == 1.0
    assert eval_density(gaussian_box(2), [0, 0]) == 1.0
    assert eval_density(cone(1), [0.25]) == 0.75


def test_eval_density_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_density(cone(1), [0.0, 0.0])


@pytest.mark.parametrize("target", ALL_TARGETS, ids=_ids(ALL_TARGETS))
def test_density_zero_exactly_off_support(target, rng):
    X = target.bbox.uniform(rng, 4000) * 1.3
    rho = target.density(X)
    inside = np.array([target.support_test(x) for x in X])
    assert np.all((rho > 0) == inside)
    assert np.all(rho[~inside] == 0.0)


@pytest.mark.parametrize("target", ALL_TARGETS, ids=_ids(ALL_TARGETS))
def test_sup_rho_bounds_density(target, rng):
    X = target.bbox.uniform(rng, 20000)
    assert density_ratio_audit(target, X) <= 1.0


def test_bounding_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        BoundingBox(np.array([0.0]), np.array([0.0]))


def test_chord_segment_examples():
    box = uniform_box([-1, -1], [1, 1])
    c = chord_segment(box, [0, 0], [1, 0])
    assert (c.s_lo, c.s_hi) == (-1.0, 1.0)
    c = chord_segment(box, [0.5, 0], [1, 0])
    assert c.s_lo == pytest.approx(-1.5, abs=1e-15) and c.s_hi == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        chord_segment(box, [2, 0], [1, 0])
    with pytest.raises(ValueError):
        chord_segment(box, [0, 0], [0, 0])


@pytest.mark.parametrize("target", ALL_TARGETS, ids=_ids(ALL_TARGETS))
def test_chord_segment_symmetry(target, rng):
    for x in sample_pi_many(target, 50, rng):
        theta = rng.standard_normal(target.dim)
        theta /= np.linalg.norm(theta)
        a, b = chord_segment(target, x, theta), chord_segment(target, x, -theta)
        assert a.s_hi == pytest.approx(-b.s_lo, abs=1e-12)
        assert a.s_lo <= 0 <= a.s_hi
        assert abs(np.linalg.norm(a.direction) - 1) < 1e-12


def test_level_chord_cone_example():
    iv = level_chord(cone(1), [0.0], [1.0], 0.25)
    (a, b), = iv.intervals
    assert a == pytest.approx(-0.75, abs=1e-11) and b == pytest.approx(0.75, abs=1e-11)
    assert iv.length == pytest.approx(1.5, abs=1e-11)


def test_level_chord_uniform_zero_level_is_full_chord():
    box = uniform_box([-1, -1], [1, 1])
    iv = level_chord(box, [0.2, -0.3], [0.6, 0.8], 0.0)
    c = chord_segment(box, [0.2, -0.3], [0.6, 0.8])
    (a, b), = iv.intervals
    assert a == pytest.approx(c.s_lo, abs=1e-11) and b == pytest.approx(c.s_hi, abs=1e-11)


@pytest.mark.parametrize("target", [gaussian_box(2), cone(2), cone(1)], ids=["gauss", "cone2", "cone1"])
def test_level_chord_near_top_level_shrinks_around_anchor(target):
    x = np.zeros(target.dim)
    theta = np.ones(target.dim) / np.sqrt(target.dim)
    iv = level_chord(target, x, theta, eval_density(target, x) * (1 - 1e-6))
    (a, b), = iv.intervals
    assert a < 0 < b and 0 < iv.length < 1e-2


def test_level_chord_rejects_level_at_density():
    with pytest.raises(ValueError):
        level_chord(cone(1), [0.5], [1.0], 0.5)


def test_level_chord_non_quasi_concave_reports_rejection_only():
    iv = level_chord(bimodal(), [1.5], [1.0], 0.1)
    assert iv.rejection_only
    assert len(iv.intervals) == 2


@pytest.mark.parametrize("target", ALL_TARGETS, ids=_ids(ALL_TARGETS))
def test_level_chord_probes_strictly_above_level(target, rng):
    X = sample_pi_many(target, 100, rng)
    for x in X:
        theta = rng.standard_normal(target.dim)
        theta /= np.linalg.norm(theta)
        t = rng.random() * eval_density(target, x)
        iv = level_chord(target, x, theta, t)
        assert iv.contains(np.array([0.0]))[0]
        for a, b in iv.intervals:
            s = np.linspace(a, b, 1002)[1:-1]
            assert np.all(target.density(x + s[:, None] * theta) > t)


def test_sample_pi_uniform_returns_first_proposal():
    box = uniform_box([-1, -1], [1, 1])
    x = sample_pi(box, np.random.default_rng(3))
    u = np.random.default_rng(3)
    first = box.bbox.uniform(u, 1)[0]
    assert np.array_equal(x, first)


def test_sample_pi_cone_mean_zero(rng):
    X = sample_pi_many(cone(1), 100000, rng)[:, 0]
    assert abs(X.mean()) <= 3 * X.std() / np.sqrt(X.size)


def test_sample_pi_many_matches_single_draw_stream():
    t = cone(2)
    a = sample_pi_many(t, 1, np.random.default_rng(5))
    assert a.shape == (1, 2) and t.support_test(a[0])


def test_understated_sup_rho_fails_audit(rng):
    good = gaussian_box(1)
    bad = TargetDensity("bad", 1, good.rho, good.support, good.bbox, good.sup_rho / 10, True)
    X = sample_pi_many(bad, 2000, rng)
    assert density_ratio_audit(bad, X) > 1.0


def test_attempt_cap_names_target(rng):
    tiny = uniform_ball(3, 1.0)
    narrow = TargetDensity("needle", 3, tiny.rho, lambda X: np.zeros(len(X), bool),
                           tiny.bbox, 1.0, True)
    with pytest.raises(EfficiencyError, match="needle"):
        sample_pi(narrow, rng, attempt_cap=100)


def _cell_masses(target, edges):
    mass = np.array([integrate.quad(lambda s: target.density(np.array([[s]]))[0], a, b,
                                    limit=200, points=[0.0] if a < 0 < b else None)[0]
                     for a, b in zip(edges[:-1], edges[1:])])
    return mass / mass.sum()


@pytest.mark.parametrize("target", ONE_D, ids=_ids(ONE_D))
def test_sample_pi_goodness_of_fit(target, rng):
    edges = np.linspace(target.bbox.lo[0], target.bbox.hi[0], 33)
    X = sample_pi_many(target, 50000, rng)[:, 0]
    counts, _ = np.histogram(X, edges)
    assert chisq_pvalue(counts, _cell_masses(target, edges)) > 1e-3


def test_cone_sample_against_analytic_cdf(rng):
    X = sample_pi_many(cone(1), 20000, rng)[:, 0]
    assert stats.kstest(X, cone_cdf).pvalue > 1e-3


@pytest.mark.parametrize("target", ALL_TARGETS, ids=_ids(ALL_TARGETS))
def test_exact_moments_against_quadrature_or_sampling(target, rng):
    X = sample_pi_many(target, 100000, rng)
    for fid, (mean, var) in target.exact_moments.items():
        if fid[0] == "x":
            v = X[:, int(fid[1:]) - 1]
        elif fid == "sqnorm":
            v = np.sum(X**2, axis=1)
        else:
            v = (X[:, 0] > 0).astype(float)
        assert abs(v.mean() - mean) <= 4 * v.std() / np.sqrt(v.size), fid
        if var is not None:
            assert var == pytest.approx(v.var(), rel=0.03), fid


def test_make_target_catalog():
    assert set(CATALOG) == {"uniform_box", "uniform_ball", "gaussian_box", "cone", "bimodal"}
    assert make_target("uniform_box", dim=3).dim == 3
    with pytest.raises(KeyError):
        make_target("banana")
