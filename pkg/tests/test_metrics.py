import numpy as np
import pytest
from shapely.geometry import box

from parcelpop.metrics import (
    MetricError,
    SimilarityConfig,
    area_overlap_ratio,
    pearson,
    similarity_index,
    subregion_distribution,
)
from parcelpop.synthesize import Agent, AgentSet


def _agent(aid, parcel, tam=100.0, **overrides):
    values = {"AGE": 30, "SEX": "male", "MARRIAGE": "married",
              "EDUCATION": "basic", "JOB": "worker", "INCOME": 2000,
              "FAMILYN": "two_plus"}
    values.update(overrides)
    return Agent(aid=aid, values=values, parcel_id=parcel, tam=tam)


# ---------------------------------------------------------------------------
# similarity index


def test_identical_sets_score_one():
    a = AgentSet(agents=[_agent(1, 1), _agent(2, 2, AGE=55)])
    b = AgentSet(agents=[_agent(9, 1), _agent(8, 2, AGE=55)])  # ids differ only
    assert similarity_index(a, b) == 1.0


def test_fully_different_nominals_score_zero_on_those_attributes():
    a = AgentSet(agents=[_agent(1, 1)])
    b = AgentSet(agents=[_agent(1, 1, SEX="female", MARRIAGE="unmarried",
                                EDUCATION="higher", JOB="none",
                                FAMILYN="one")])
    # 9 attributes, 5 nominal/ordinal mismatches -> 4/9
    assert similarity_index(a, b) == pytest.approx(4.0 / 9.0)


def test_three_agent_toy_matches_hand_computation():
    a = AgentSet(agents=[
        _agent(1, 1, AGE=20),
        _agent(2, 1, AGE=40, SEX="female"),
        _agent(3, 2, AGE=60),
    ])
    b = AgentSet(agents=[
        _agent(10, 1, AGE=20),                     # matches first exactly
        _agent(11, 1, AGE=41, SEX="female"),       # age off by one
        _agent(12, 2, AGE=60, JOB="none"),         # job differs
    ])
    # oracle: brute-force alignment and attribute comparison
    def key(ag):
        v = ag.values
        return (ag.parcel_id, v["AGE"], v["SEX"], v["MARRIAGE"], v["EDUCATION"],
                v["JOB"], v["INCOME"], v["FAMILYN"], ag.tam)

    sa = sorted(a.agents, key=key)
    sb = sorted(b.agents, key=key)
    total = 0.0
    for x, y in zip(sa, sb):
        m = 0
        for attr in ("AGE", "SEX", "MARRIAGE", "EDUCATION", "JOB",
                     "INCOME", "FAMILYN"):
            m += int(x.values[attr] == y.values[attr])
        m += int(x.parcel_id == y.parcel_id)
        m += int(x.tam == y.tam)
        total += m / 9.0
    expected = total / 3.0
    assert similarity_index(a, b) == pytest.approx(expected)
    assert expected == pytest.approx((9 + 8 + 8) / 9.0 / 3.0)


def test_ratio_band_tolerance():
    a = AgentSet(agents=[_agent(1, 1, AGE=30)])
    b = AgentSet(agents=[_agent(1, 1, AGE=33)])
    strict = similarity_index(a, b)
    banded = similarity_index(a, b, config=SimilarityConfig(
        ratio_tolerances={"AGE": 5.0, "INCOME": 0.0, "TAM": 0.0}))
    assert strict == pytest.approx(8.0 / 9.0)
    assert banded == 1.0


def test_symmetry_and_id_invariance():
    gen = np.random.default_rng(4)
    def rand_set(seed_offset):
        g = np.random.default_rng(400 + seed_offset)
        return AgentSet(agents=[
            _agent(int(g.integers(1, 1e6)), int(g.integers(1, 4)),
                   AGE=int(g.integers(0, 90)),
                   SEX="male" if g.random() < 0.5 else "female")
            for _ in range(25)
        ])
    a, b = rand_set(1), rand_set(2)
    assert similarity_index(a, b) == pytest.approx(similarity_index(b, a))
    relabeled = AgentSet(agents=[
        Agent(aid=i + 1000, values=x.values, parcel_id=x.parcel_id, tam=x.tam)
        for i, x in enumerate(a.agents)
    ])
    assert similarity_index(relabeled, b) == pytest.approx(similarity_index(a, b))


def test_size_mismatch_raises():
    with pytest.raises(MetricError):
        similarity_index(AgentSet(agents=[_agent(1, 1)]), AgentSet(agents=[]))


# ---------------------------------------------------------------------------
# overlap ratio


class _P:
    def __init__(self, geom):
        self.geometry = geom


def test_overlap_identical_is_one():
    a = [_P(box(0, 0, 10, 10)), _P(box(20, 0, 30, 10))]
    assert area_overlap_ratio(a, a) == pytest.approx(1.0, abs=1e-9)


def test_overlap_disjoint_is_zero():
    assert area_overlap_ratio([_P(box(0, 0, 1, 1))], [_P(box(5, 5, 6, 6))]) == 0.0


def test_offset_unit_squares_overlap_half():
    # oracle: closed-form rectangle intersection, 0.5 x 1 over 1 x 1
    a = [_P(box(0, 0, 1, 1))]
    b = [_P(box(0.5, 0, 1.5, 1))]
    assert area_overlap_ratio(a, b) == pytest.approx(0.5, rel=1e-12)


def test_zero_area_first_set_raises():
    from shapely.geometry import Polygon

    with pytest.raises(MetricError):
        area_overlap_ratio([_P(Polygon())], [_P(box(0, 0, 1, 1))])


# ---------------------------------------------------------------------------
# pearson


def test_perfect_positive():
    x = np.arange(10.0)
    assert pearson(x, 2 * x + 1) == pytest.approx(1.0, abs=1e-12)


def test_perfect_negative():
    x = np.arange(10.0)
    assert pearson(x, -x) == pytest.approx(-1.0, abs=1e-12)


def test_matches_direct_formula_oracle():
    gen = np.random.default_rng(6)
    x = gen.normal(size=10)
    y = 0.3 * x + gen.normal(size=10)
    # oracle: independent summation without numpy vector tricks
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = (sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y)) ** 0.5
    assert pearson(x, y) == pytest.approx(num / den, abs=1e-12)


def test_affine_invariance():
    gen = np.random.default_rng(7)
    x = gen.normal(size=50)
    y = gen.normal(size=50)
    r = pearson(x, y)
    assert abs(pearson(3.5 * x + 11, y) - r) < 1e-12
    assert abs(pearson(x, 0.01 * y - 4) - r) < 1e-12


def test_constant_vector_raises():
    with pytest.raises(MetricError):
        pearson(np.ones(5), np.arange(5.0))


# ---------------------------------------------------------------------------
# subregion distribution


def test_all_parcels_in_one_region():
    parcels = [_P(box(0, 0, 10, 10)), _P(box(20, 20, 30, 30))]
    regions = {1: box(0, 0, 100, 100), 2: box(100, 0, 200, 100)}
    dist = subregion_distribution(parcels, regions)
    assert dist[1] == pytest.approx(200.0)
    assert dist[2] == 0.0


def test_parcel_split_between_regions():
    # oracle: the parcel straddles the boundary symmetrically, half each
    parcels = [_P(box(90, 0, 110, 10))]
    regions = {1: box(0, 0, 100, 100), 2: box(100, 0, 200, 100)}
    dist = subregion_distribution(parcels, regions)
    assert dist[1] == pytest.approx(100.0, rel=1e-12)
    assert dist[2] == pytest.approx(100.0, rel=1e-12)
