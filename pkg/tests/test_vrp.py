import numpy as np
import pytest

from sadm import vrp
from sadm.vrp import Instance, Tour, ValidationError


def test_capacity_anchors():
    assert vrp.capacity_for(20) == 30
    assert vrp.capacity_for(50) == 40
    assert vrp.capacity_for(100) == 50
    assert vrp.capacity_for(5) == 30
    assert vrp.capacity_for(1000) == 50
    assert vrp.capacity_for(35) == 35
    assert vrp.capacity_for(75) == 45


def test_generate_deterministic():
    a = vrp.generate(20, seed=7)
    b = vrp.generate(20, seed=7)
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.demands, b.demands)
    assert np.array_equal(a.depot, b.depot)
    assert a.capacity == 30


def test_generate_ranges():
    inst = vrp.generate(100, seed=1)
    assert inst.capacity == 50
    assert np.all((inst.coords >= 0) & (inst.coords <= 1))
    assert np.all((inst.demands >= 1) & (inst.demands <= 9))


def test_generate_rejects_nonpositive_n():
    with pytest.raises(ValueError):
        vrp.generate(0, seed=0)


def _single_customer_instance():
    return Instance(
        n=1, depot=[0.5, 0.5], coords=[[0.5, 0.8]], demands=[3], capacity=30, seed=0
    )


def test_tour_cost_out_and_back():
    inst = _single_customer_instance()
    assert abs(vrp.tour_cost(inst, Tour([[1]])) - 0.6) < 1e-12


def test_tour_cost_merge_savings_geometry():
    # depot and two customers on a line: merging saves one leg back and forth
    inst = Instance(
        n=2, depot=[0.0, 0.0], coords=[[0.1, 0.0], [0.2, 0.0]],
        demands=[1, 1], capacity=30, seed=0,
    )
    singles = vrp.tour_cost(inst, Tour([[1], [2]]))
    merged = vrp.tour_cost(inst, Tour([[1, 2]]))
    # savings = d(0,1) + d(0,2) - d(1,2) = 0.1 + 0.2 - 0.1
    assert abs((singles - merged) - 0.2) < 1e-12


def test_tour_cost_route_order_invariant():
    inst = vrp.generate(8, seed=3)
    routes = [[1, 2, 3], [4, 5], [6, 7, 8]]
    c1 = vrp.tour_cost(inst, Tour(routes))
    c2 = vrp.tour_cost(inst, Tour(list(reversed(routes))))
    assert c1 == pytest.approx(c2, abs=1e-12)


def test_tour_cost_route_reversal_invariant():
    inst = vrp.generate(6, seed=9)
    base = [[1, 2, 3], [4, 5, 6]]
    c1 = vrp.tour_cost(inst, Tour(base))
    c2 = vrp.tour_cost(inst, Tour([[3, 2, 1], [4, 5, 6]]))
    assert c1 == pytest.approx(c2, abs=1e-9)


def test_validate_ok_and_violations():
    inst = vrp.generate(4, seed=2)
    ok = Tour([[1, 2], [3, 4]])
    assert vrp.validate(inst, ok) == []

    dup = vrp.validate(inst, Tour([[1, 2, 2], [3, 4]]))
    assert any("customer 2" in v and "2 times" in v for v in dup)

    missing = vrp.validate(inst, Tour([[1, 2], [4]]))
    assert any("customer 3" in v for v in missing)


def test_validate_capacity_boundary():
    inst = Instance(
        n=2, depot=[0, 0], coords=[[0.1, 0], [0.2, 0]], demands=[15, 15],
        capacity=30, seed=0,
    )
    # demand sum == capacity exactly is feasible
    assert vrp.validate(inst, Tour([[1, 2]])) == []
    over = Instance(
        n=2, depot=[0, 0], coords=[[0.1, 0], [0.2, 0]], demands=[16, 15],
        capacity=30, seed=0,
    )
    report = vrp.validate(over, Tour([[1, 2]]))
    assert any("exceeds capacity" in v for v in report)


def test_tour_cost_invalid_raises_naming_constraint():
    inst = vrp.generate(3, seed=4)
    with pytest.raises(ValidationError, match="customer 3"):
        vrp.tour_cost(inst, Tour([[1, 2]]))


def test_canonical_drops_empty_routes():
    t = Tour([[1, 2], [], [3]])
    assert t.canonical().routes == [[1, 2], [3]]


def test_normalize():
    inst = vrp.generate(10, seed=5)
    ninst = vrp.normalize(inst)
    assert np.allclose(ninst.demands_hat, inst.demands / inst.capacity)
    assert np.all(ninst.demands_hat > 0) and np.all(ninst.demands_hat <= 1)


def test_instance_file_roundtrip(tmp_path):
    instances = [vrp.generate(6, seed=s) for s in range(3)]
    path = tmp_path / "inst.jsonl"
    vrp.write_instances(path, instances)
    back = vrp.read_instances(path)
    for a, b in zip(instances, back):
        assert a.n == b.n and a.seed == b.seed and a.capacity == b.capacity
        assert np.array_equal(a.coords, b.coords)
        assert np.array_equal(a.demands, b.demands)
        assert np.array_equal(a.depot, b.depot)


def test_tour_file_roundtrip(tmp_path):
    inst = vrp.generate(4, seed=11)
    tour = Tour([[1, 3], [2, 4]])
    cost = vrp.tour_cost(inst, tour)
    path = tmp_path / "tours.jsonl"
    with open(path, "w") as fh:
        fh.write(vrp.tour_to_json(inst, tour, cost) + "\n")
    seed, tour2, cost2 = vrp.read_tours(path)[0]
    assert seed == 11 and tour2.routes == tour.routes and cost2 == cost
