from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stringsgs.densify import DensifyPlan, densify_counts, densify_text, split_gaussian
from stringsgs.gaussians import Region
from stringsgs.render import render

from conftest import identity_pose, pinhole, random_scene


def counts_oracle(c, n_max):
    """Exact rational evaluation of the normalized inverse-visibility formula."""
    inv = [Fraction(1, int(x)) for x in c]
    lo, hi = min(inv), max(inv)
    if lo == hi:
        return [1] * len(c)
    # Python's round() on a Fraction rounds half to even
    return [round((v - lo) / (hi - lo) * (n_max - 1) + 1) for v in inv]


def test_hand_example():
    assert list(densify_counts([1, 2, 4], 15).counts) == [15, 6, 1]


def test_all_equal_gives_one():
    for n_max in (1, 15, 25):
        assert list(densify_counts([7, 7, 7], n_max).counts) == [1, 1, 1]


def test_n_max_one_collapses():
    assert list(densify_counts([1, 10], 1).counts) == [1, 1]


def test_half_way_rounds_to_even():
    # c = [2, 1, 3]: value for c=2 is (1/2-1/3)/(2/3)*(n_max-1)+1 = (n_max-1)/4 + 1
    assert list(densify_counts([2, 1, 3], 3).counts) == [2, 3, 1]  # 1.5 -> 2
    assert list(densify_counts([2, 1, 3], 11).counts) == [4, 11, 1]  # 3.5 -> 4
    assert list(densify_counts([2, 1, 3], 7).counts) == [2, 7, 1]  # 2.5 -> 2


def test_errors():
    with pytest.raises(ValueError):
        densify_counts([], 5)
    with pytest.raises(ValueError):
        densify_counts([0, 2], 5)


def test_matches_oracle_random(rng):
    for _ in range(300):
        c = rng.integers(1, 201, size=rng.integers(1, 500))
        n_max = int(rng.choice([1, 15, 25]))
        assert list(densify_counts(c, n_max).counts) == counts_oracle(c, n_max)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 200), min_size=1, max_size=60), st.integers(1, 30))
def test_counts_bounded_and_monotone(c, n_max):
    n = densify_counts(c, n_max).counts
    assert n.min() >= 1 and n.max() <= n_max
    order = np.argsort(c, kind="stable")
    # larger visibility never gets more copies
    assert np.all(np.diff(n[order]) <= 0)


def _one(rng, region=Region.TEXT):
    g = random_scene(rng, n=1)[0]
    g.region = region
    return g


def test_split_identity(rng):
    g = _one(rng)
    assert split_gaussian(g, 1, rng) == [g]


def test_split_parameter_contract(rng):
    g = _one(rng)
    kids = split_gaussian(g, 5, rng)
    assert len(kids) == 5
    for k in kids:
        assert np.allclose(k.scale, g.scale / 1.6, rtol=1e-12)
        assert k.region == g.region and k.opacity_logit == g.opacity_logit
        assert np.array_equal(k.sh, g.sh) and np.array_equal(k.rotation, g.rotation)


def test_split_statistics(rng):
    g = _one(rng)
    g.log_scale = np.log([0.10, 0.11, 0.12])
    kids = split_gaussian(g, 10000, rng)
    pos = np.array([k.position for k in kids])
    cov = g.covariance()
    sig = np.sqrt(np.diag(cov))
    assert np.all(np.abs(pos.mean(axis=0) - g.position) <= 3 * sig / np.sqrt(10000))
    emp = np.cov(pos.T)
    assert np.all(np.abs(np.diag(emp) - np.diag(cov)) <= 0.1 * np.diag(cov))
    assert np.linalg.norm(emp - cov) <= 0.1 * np.linalg.norm(cov)


def test_densify_identity_plan(rng):
    s = random_scene(rng, n=8)
    plan = DensifyPlan(np.ones(int(s.text_mask.sum()), np.int64), 5)
    assert densify_text(s, plan).equals(s)


def test_densify_counts_and_isolation(rng):
    s = random_scene(rng, n=8)
    s.region[:] = Region.NON_TEXT
    s.region[[1, 4, 6]] = Region.TEXT
    out = densify_text(s, DensifyPlan(np.array([2, 3, 4]), 5), seed=9)
    assert out.text_mask.sum() == 9
    assert len(np.unique(out.ids)) == len(out)
    before, after = s.select(Region.NON_TEXT), out.select(Region.NON_TEXT)
    assert after.equals(before)


def test_densify_plan_mismatch(rng):
    s = random_scene(rng, n=6)
    with pytest.raises(ValueError, match="plan"):
        densify_text(s, DensifyPlan(np.ones(int(s.text_mask.sum()) + 1, np.int64), 3))


def test_densify_order_independent(rng):
    s = random_scene(rng, n=6, text_frac=1.0)
    plan = DensifyPlan(np.array([3, 1, 2, 4, 1, 2]), 4)
    a = densify_text(s, plan, seed=4)
    perm = np.array([5, 3, 1, 0, 2, 4])
    b = densify_text(s.subset(perm), DensifyPlan(plan.counts[perm], 4), seed=4)
    # children come from per-Gaussian streams, so the set of positions is the same
    assert sorted(map(tuple, a.means)) == sorted(map(tuple, b.means))


def test_split_preserves_render_roughly(rng):
    s = random_scene(rng, n=6, log_scale=(-2.5, -2.0), text_frac=1.0, sh_degree=0)
    out = densify_text(s, DensifyPlan(np.full(6, 4), 4), seed=1)
    intr, pose = pinhole(64, 64, 80.0), identity_pose()
    diff = np.abs(render(s, intr, pose, sh_degree=0) - render(out, intr, pose, sh_degree=0)).mean()
    assert diff < 0.1
