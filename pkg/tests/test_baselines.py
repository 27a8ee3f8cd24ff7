import numpy as np
import pytest

from sadm import baselines as B
from sadm import vrp
from sadm.vrp import Instance, Tour

from test_augment import random_feasible_tour


def test_clarke_wright_single_customer():
    inst = vrp.generate(1, seed=0)
    tour = B.clarke_wright(inst)
    assert tour.routes == [[1]]
    assert vrp.validate(inst, tour) == []


def test_clarke_wright_merges_profitable_pair():
    inst = Instance(
        n=2, depot=[0.0, 0.0], coords=[[1.0, 0.0], [1.0, 0.1]],
        demands=[5, 5], capacity=30, seed=0,
    )
    tour = B.clarke_wright(inst)
    assert len(tour.routes) == 1  # merging saves nearly two unit legs


def test_clarke_wright_respects_capacity():
    inst = Instance(
        n=2, depot=[0.0, 0.0], coords=[[1.0, 0.0], [1.0, 0.1]],
        demands=[20, 20], capacity=30, seed=0,
    )
    tour = B.clarke_wright(inst)
    assert len(tour.routes) == 2  # merged load 40 > 30


def test_clarke_wright_always_valid_and_beats_singletons():
    rng = np.random.default_rng(0)
    for seed in range(30):
        inst = vrp.generate(int(rng.integers(2, 30)), seed=seed)
        tour = B.clarke_wright(inst)
        assert vrp.validate(inst, tour) == []
        singleton = vrp.tour_cost(inst, Tour([[c] for c in range(1, inst.n + 1)]))
        assert vrp.tour_cost(inst, tour) <= singleton + 1e-12


def test_clarke_wright_deterministic():
    inst = vrp.generate(25, seed=5)
    assert B.clarke_wright(inst).routes == B.clarke_wright(inst).routes


def test_brute_force_single_customer():
    inst = vrp.generate(1, seed=1)
    tour, cost = B.brute_force_optimal(inst)
    assert tour.routes == [[1]]
    assert cost == pytest.approx(2 * inst.dist(0, 1))


def test_brute_force_two_customers_picks_cheaper_split():
    inst = Instance(
        n=2, depot=[0.0, 0.0], coords=[[1.0, 0.0], [1.0, 0.2]],
        demands=[5, 5], capacity=30, seed=0,
    )
    tour, cost = B.brute_force_optimal(inst)
    merged = vrp.tour_cost(inst, Tour([[1, 2]]))
    split = vrp.tour_cost(inst, Tour([[1], [2]]))
    assert cost == pytest.approx(min(merged, split))


def test_brute_force_size_limit():
    with pytest.raises(B.SizeLimitError, match="n <= 8"):
        B.brute_force_optimal(vrp.generate(9, seed=2))


def test_brute_force_beats_random_tours_fuzz():
    rng = np.random.default_rng(3)
    inst = vrp.generate(6, seed=4)
    tour, cost = B.brute_force_optimal(inst)
    assert vrp.validate(inst, tour) == []
    assert cost == pytest.approx(vrp.tour_cost(inst, tour))
    for _ in range(10_000):
        rand = random_feasible_tour(inst, rng)
        assert vrp.tour_cost(inst, rand) >= cost - 1e-9


def test_brute_force_lower_bounds_clarke_wright():
    gaps = []
    for seed in range(20):
        inst = vrp.generate(7, seed=seed)
        _, opt = B.brute_force_optimal(inst)
        cw = vrp.tour_cost(inst, B.clarke_wright(inst))
        assert cw >= opt - 1e-9
        gaps.append(cw / opt - 1.0)
    # savings construction lands near the optimum on tiny instances
    assert np.median(gaps) < 0.15


def test_gap_report_zero_when_equal():
    rep = B.gap_report([5.0, 7.0], [5.0, 7.0])
    assert rep.mean_gap == 0.0
    assert all(g == 0.0 for _, _, _, g in rep.rows)


def test_gap_report_hand_arithmetic():
    rep = B.gap_report([11.0, 11.0], [10.0, 10.0])
    assert rep.mean_gap == pytest.approx(0.10)
    assert rep.mean_cost == pytest.approx(11.0)


def test_gap_report_published_row_format():
    # 16.28 against a 15.65 reference reads as a 4.03% gap
    rep = B.gap_report([16.28], [15.65])
    assert round(100 * rep.mean_gap, 2) == 4.03


def test_gap_report_contract_errors():
    with pytest.raises(ValueError, match="positive"):
        B.gap_report([1.0], [0.0])
    with pytest.raises(ValueError, match="method costs"):
        B.gap_report([1.0, 2.0], [1.0])


def test_gap_report_serialization():
    rep = B.gap_report([2.0], [1.6], labels=[42])
    csv_text = rep.to_csv()
    assert csv_text.splitlines()[0] == "instance_seed,cost,reference,gap"
    assert csv_text.splitlines()[1].startswith("42,2.000000,1.600000,0.25")
    import json

    data = json.loads(rep.to_json())
    assert data["instances"][0]["instance_seed"] == 42
    assert data["mean_gap"] == pytest.approx(0.25)
