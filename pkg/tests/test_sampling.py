import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from projnbv.geometry import ViewPose
from projnbv.sampling import (DegenerateAzimuth, PartitionState, SamplingParam, admissible_candidates,
                              admissible_partitions, largest_remainder, partition_of, sample_candidates)

BOX = (np.array([-0.1, -0.05, 0.0]), np.array([0.1, 0.05, 0.2]))


def azimuth(p, c):
    return math.atan2(p[1] - c[1], p[0] - c[0]) % (2 * math.pi)


def pose_at(azimuth_deg, elevation_deg=30.0, center=(0.0, 0.0, 0.0), radius=1.0):
    a, e = math.radians(azimuth_deg), math.radians(elevation_deg)
    c = np.asarray(center, dtype=float)
    return ViewPose.look_at(c + radius * np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)]), c)


def test_single_parallel():
    param = SamplingParam(alpha=1, N=8)
    poses = sample_candidates(BOX, param)
    center = 0.5 * (BOX[0] + BOX[1])
    az = sorted(math.degrees(azimuth(p.position, center)) for p in poses)
    assert len(poses) == 8
    assert np.allclose(np.diff(az), 45.0)
    assert len({round(p.position[2], 12) for p in poses}) == 1


def test_look_at_and_radius_contract():
    param = SamplingParam()
    poses = sample_candidates(BOX, param)
    center = 0.5 * (BOX[0] + BOX[1])
    R = param.d_c + 0.5 * np.linalg.norm(BOX[1] - BOX[0])
    assert len(poses) == 400
    for p in poses:
        d = center - p.position
        assert np.allclose(d / np.linalg.norm(d), p.optical_axis, atol=1e-9)
        assert abs(np.linalg.norm(d) - R) < 1e-9
        assert p.is_valid()


def test_allocation_proportional_to_circumference():
    elev = np.radians([20.0, 45.0, 70.0])
    param = SamplingParam(alpha=3, N=100, elevation_range=(elev[0], elev[-1]))
    poses = sample_candidates(BOX, param)
    center = 0.5 * (BOX[0] + BOX[1])
    rel = [round(math.degrees(math.asin((p.position[2] - center[2]) / np.linalg.norm(p.position - center))), 6)
           for p in poses]
    counts = [rel.count(20.0), rel.count(45.0), rel.count(70.0)]
    # largest-remainder oracle computed by hand
    quota = 100 * np.cos(elev) / np.cos(elev).sum()
    floor = np.floor(quota).astype(int)
    left = 100 - floor.sum()
    floor[np.argsort(floor - quota)[:left]] += 1
    assert counts == floor.tolist()
    assert sum(counts) == 100


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 10.0), min_size=1, max_size=12), st.integers(1, 1000))
def test_largest_remainder_properties(w, total):
    c = largest_remainder(w, total)
    quota = total * np.array(w) / sum(w)
    assert c.sum() == total
    assert np.all(np.abs(c - quota) < 1.0 + 1e-9)


def test_degenerate_box():
    with pytest.raises(ValueError):
        sample_candidates((np.zeros(3), np.array([1.0, 0.0, 1.0])), SamplingParam())


def test_invalid_params():
    for kw in ({"alpha": 0}, {"N": 2, "alpha": 3}, {"beta": 1}, {"elevation_range": (0.5, 0.2)}):
        with pytest.raises(ValueError):
            SamplingParam(**kw)


def test_partition_examples():
    assert partition_of(pose_at(10), np.zeros(3), 4) == 0
    assert partition_of(pose_at(90), np.zeros(3), 4) == 1
    assert partition_of(pose_at(359.9), np.zeros(3), 4) == 3


def test_partition_matches_atan2_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = rng.normal(size=3)
        beta = int(rng.integers(2, 9))
        pose = ViewPose.look_at(c + rng.normal(size=3), c)
        d = pose.position - c
        deg = math.degrees(math.atan2(d[1], d[0]))
        if deg < 0:
            deg += 360.0
        expect = int(deg // (360.0 / beta)) % beta
        assert partition_of(pose, c, beta) == expect


def test_pole_warns_and_gives_zero():
    pose = ViewPose.look_at([0, 0, 1.0], [0, 0, 0], up=[0, 1, 0])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert partition_of(pose, np.zeros(3), 4) == 0
    assert any(issubclass(x.category, DegenerateAzimuth) for x in w)


def test_admissible_partitions_examples():
    assert admissible_partitions(PartitionState(4, {0})) == {1, 3}
    assert admissible_partitions(PartitionState(4, {0, 1, 2, 3})) == {0, 1, 2, 3}
    assert admissible_partitions(PartitionState(4, {0, 2})) == {1, 3}
    assert admissible_partitions(PartitionState(6, {0, 1})) == {2, 5}


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.data())
def test_admissible_set_algebra(beta, data):
    scanned = data.draw(st.sets(st.integers(0, beta - 1), min_size=1))
    got = admissible_partitions(PartitionState(beta, set(scanned)))
    if len(scanned) == beta:
        assert got == set(range(beta))
    else:
        expect = {p for p in range(beta) if p not in scanned
                  and ((p - 1) % beta in scanned or (p + 1) % beta in scanned)}
        assert got == expect and got


def test_admissible_candidates_filter_and_completion():
    center = 0.5 * (BOX[0] + BOX[1])
    poses = sample_candidates(BOX, SamplingParam())
    idx = admissible_candidates(poses, PartitionState(4, {0}), center)
    assert idx and {partition_of(poses[i], center, 4) for i in idx} == {1, 3}
    assert admissible_candidates(poses, PartitionState(4, {0, 1, 2, 3}), center) == list(range(400))


def test_admissible_fallback_to_any_unscanned():
    c = np.zeros(3)
    poses = [pose_at(10), pose_at(190)]   # partitions 0 and 2 only
    assert admissible_candidates(poses, PartitionState(4, {0}), c) == [1]


def test_admissible_requires_seed_partition():
    with pytest.raises(ValueError):
        admissible_candidates([pose_at(10)], PartitionState(4, set()), np.zeros(3))
