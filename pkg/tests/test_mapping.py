import numpy as np
import pytest
from hypothesis import given, strategies as st

from fronsim.mapping import (
    FREE,
    OBSTACLE,
    UNKNOWN,
    BeliefMap,
    ValueMap,
    cluster_frontiers,
    extract_frontiers,
    heat_ramp,
    integrate_observation,
    read_ppm,
    render_snapshot,
    to_ppm,
    update_value_map,
    view_confidence,
)
from fronsim.sensing import AgentPose, SensorConfig, sense
from fronsim.world import Scene, SceneParams, generate_scene
from oracles import components8, frontier_scan

SCENE = generate_scene(4, SceneParams(24, 24, 3, 0.03))


def random_belief(rng, w=32, h=32):
    b = BeliefMap(w, h)
    b.grid[:] = rng.choice([UNKNOWN, FREE, OBSTACLE], size=(h, w), p=[0.4, 0.45, 0.15])
    return b


def test_integrate_empty_and_idempotent():
    b = BeliefMap.like(SCENE)
    obs = sense(SCENE, AgentPose(SCENE.free_cells()[0], 0), SensorConfig(range=0))
    integrate_observation(b, obs)
    assert b.known_count() == 1
    obs = sense(SCENE, AgentPose(SCENE.free_cells()[5], 0), SensorConfig())
    integrate_observation(b, obs)
    once = b.grid.copy()
    integrate_observation(b, obs)
    assert np.array_equal(once, b.grid)
    for (x, y), t in obs.visible.items():
        assert b.grid[y, x] == int(t)


def test_full_sweep_reveals_truth():
    s = generate_scene(1, SceneParams(12, 12, 1, 0.0))
    b = BeliefMap.like(s)
    for c in s.free_cells():
        integrate_observation(b, sense(s, AgentPose(c, 0), SensorConfig(fov=360, range=20)))
    # the four grid corners hide behind a diagonal pinch of border cells
    corners = {(0, 0), (0, 11), (11, 0), (11, 11)}
    known = b.grid != UNKNOWN
    assert {(x, y) for y, x in zip(*np.nonzero(~known))} == corners
    assert np.array_equal(b.grid[known], s.truth.astype(np.int8)[known])


def test_frontier_trivial():
    b = BeliefMap(5, 5)
    b.grid[:] = FREE
    assert extract_frontiers(b) == set()
    b = BeliefMap(5, 5)
    b.grid[2, 3] = FREE
    assert extract_frontiers(b) == {(3, 2)}


def test_frontiers_match_definition_on_random_maps():
    rng = np.random.default_rng(0)
    for _ in range(100):
        b = random_belief(rng)
        assert extract_frontiers(b) == frontier_scan(b.grid)


def test_cluster_trivial():
    vm = ValueMap(8, 8)
    assert cluster_frontiers([], vm) == []
    (w,) = cluster_frontiers([(3, 4)], vm)
    assert w.cell == (3, 4) and w.cluster_size == 1


def test_cluster_two_components():
    vm = ValueMap(12, 12)
    a = [(1, 1), (2, 1), (3, 1)]
    b = [(7, 5), (7, 6), (8, 7), (8, 8), (8, 9)]  # diagonal step keeps it one 8-component
    vm.value[9, 8] = 0.7
    out = cluster_frontiers(a + b, vm)
    assert sorted(w.cluster_size for w in out) == [3, 5]
    assert out[0].cluster_size == 5 and out[0].value == 0.7
    assert out[1].cell == (2, 1)
    assert len(components8(set(a + b))) == 2


def test_cluster_against_oracle():
    rng = np.random.default_rng(9)
    for _ in range(40):
        b = random_belief(rng, 20, 20)
        vm = ValueMap(20, 20)
        vm.value[:] = rng.random((20, 20))
        cells = extract_frontiers(b)
        out = cluster_frontiers(cells, vm)
        comps = components8(cells)
        assert sorted(w.cluster_size for w in out) == sorted(len(c) for c in comps)
        for w in out:
            comp = next(c for c in comps if w.cell in c)
            cx = sum(x for x, _ in comp) / len(comp)
            cy = sum(y for _, y in comp) / len(comp)
            best = min(comp, key=lambda c: ((c[0] - cx) ** 2 + (c[1] - cy) ** 2, c[1], c[0]))
            assert w.cell == best
            x, y = w.cell
            window = [vm.value[j, i] for j in range(20) for i in range(20) if (i - x) ** 2 + (j - y) ** 2 <= 4]
            assert w.value == max(window)
        keys = [(-w.value, w.cell[1], w.cell[0]) for w in out]
        assert keys == sorted(keys)


def test_value_map_identity_and_average():
    s = generate_scene(1, SceneParams(16, 16, 1, 0.0))
    pose = AgentPose((7, 7), 0)
    cfg = SensorConfig()
    obs = sense(s, pose, cfg)
    vm = ValueMap.like(s)
    update_value_map(vm, obs, 0.6, pose, cfg)
    assert vm.value[7, 10] == pytest.approx(0.6) and vm.confidence[7, 10] == pytest.approx(1.0)
    update_value_map(vm, obs, 0.2, pose, cfg)
    assert vm.value[7, 10] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        update_value_map(vm, obs, 1.2, pose, cfg)


def test_view_confidence_cos_squared():
    s = generate_scene(1, SceneParams(16, 16, 1, 0.0))
    pose = AgentPose((7, 7), 0)
    obs = sense(s, pose, SensorConfig())
    c = view_confidence(obs, pose, SensorConfig())
    i = [k for k, (x, y) in enumerate(zip(obs.xs, obs.ys)) if (x, y) == (10, 7)][0]
    j = [k for k, (x, y) in enumerate(zip(obs.xs, obs.ys)) if (x, y) == (10, 4)][0]  # 45 degrees off axis
    assert c[i] == pytest.approx(1.0)
    assert c[j] == pytest.approx(0.0, abs=1e-12)


POSES = [AgentPose(c, h) for c in SCENE.free_cells()[::9] for h in (0, 135, 270)]


@given(
    seq=st.lists(st.tuples(st.integers(0, len(POSES) - 1), st.floats(0, 1)), min_size=1, max_size=8)
)
def test_fusion_bounded_within_scores(seq):
    cfg = SensorConfig()
    vm = ValueMap.like(SCENE)
    seen: dict = {}
    for i, score in seq:
        pose = POSES[i]
        obs = sense(SCENE, pose, cfg)
        c = view_confidence(obs, pose, cfg)
        update_value_map(vm, obs, score, pose, cfg)
        for x, y, o, ck in zip(obs.xs, obs.ys, obs.obstacle, c):
            if not o and ck > 0:
                seen.setdefault((x, y), []).append(score)
    assert ((vm.value >= 0) & (vm.value <= 1)).all()
    assert ((vm.confidence >= 0) & (vm.confidence <= 1)).all()
    for (x, y), scores in seen.items():
        assert min(scores) - 1e-9 <= vm.value[y, x] <= max(scores) + 1e-9
    assert ((vm.confidence > 0) <= np.isin(np.arange(vm.value.size).reshape(vm.value.shape),
                                           [y * SCENE.width + x for x, y in seen])).all()


@given(a=st.floats(0, 1), b=st.floats(0, 1))
def test_fusion_order_symmetric_at_equal_confidence(a, b):
    cfg = SensorConfig()
    pose = POSES[0]
    obs = sense(SCENE, pose, cfg)
    m1, m2 = ValueMap.like(SCENE), ValueMap.like(SCENE)
    for vm, order in ((m1, (a, b)), (m2, (b, a))):
        for s in order:
            update_value_map(vm, obs, s, pose, cfg)
    assert np.allclose(m1.value, m2.value) and np.allclose(m1.confidence, m2.confidence)


def test_snapshot_ppm():
    b = BeliefMap(6, 4)
    b.grid[1:3, 1:5] = FREE
    b.grid[0] = OBSTACLE
    vm = ValueMap(6, 4)
    vm.value[1, 1], vm.confidence[1, 1] = 1.0, 1.0
    img = render_snapshot(b, vm)
    assert img.shape == (4, 13, 3)
    assert tuple(img[3, 0]) == (128, 128, 128)
    assert tuple(img[0, 0]) == (0, 0, 0)
    assert tuple(img[1, 7 + 1]) == tuple(heat_ramp(np.array(1.0)))
    marked = render_snapshot(b, vm, cluster_frontiers(extract_frontiers(b), vm), AgentPose((4, 2), 0), None)
    assert tuple(marked[2, 4]) == (220, 0, 220) and tuple(marked[2, 7 + 4]) == (220, 0, 220)
    data = to_ppm(img)
    assert data.startswith(b"P6\n13 4\n255\n")
    assert np.array_equal(read_ppm(data), img)


def test_heat_ramp_levels():
    levels = heat_ramp(np.linspace(0, 1, 256))
    assert len({tuple(v) for v in levels}) == 256
    assert tuple(levels[0]) == (0, 0, 0) and tuple(levels[-1]) == (255, 255, 0)
