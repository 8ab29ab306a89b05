"""D* Lite planning, path extraction and incremental repair."""

import math

import numpy as np
import pytest

from core.costmap import inflate
from core.errors import LethalEndpoint, NoPath, NotNeighbors
from core.planner import (edge_cost, extract_path, key_less, octile, path_cost, plan,
                          update_cells)
from tests.conftest import dijkstra, make_field, make_grid, random_field

SQRT2 = math.sqrt(2.0)


def _free_cell(rng, field) -> tuple[int, int]:
    free = np.argwhere(~field.lethal)
    return tuple(int(x) for x in free[rng.integers(len(free))])


def _connected_instance(rng, h: int, w: int):
    """Random field with a reachable start/goal pair at least two cells apart."""
    while True:
        field = random_field(rng, h, w)
        start, goal = _free_cell(rng, field), _free_cell(rng, field)
        if octile(start, goal) >= 2 and dijkstra(field, start, goal) < math.inf:
            return field, start, goal


def _random_batch(rng, field, keep, count: int = 40):
    changes = []
    for cell in rng.choice(field.height * field.width, size=count, replace=False):
        r, c = divmod(int(cell), field.width)
        if (r, c) in keep:
            continue
        changes.append(((r, c), bool(rng.random() < 0.2), float(rng.random())))
    return changes


def _assert_matches_fresh(state, field, start, goal) -> None:
    try:
        fresh, _ = plan(field, start, goal)
    except NoPath:
        assert state.g_of(start) == math.inf
        with pytest.raises(NoPath):
            extract_path(state)
        return
    assert state.g_of(start) == pytest.approx(fresh.cost, abs=1e-9)
    assert extract_path(state).cost == pytest.approx(fresh.cost, abs=1e-9)


def _assert_queue_discipline(state) -> None:
    queued = state.queued()
    start_key = state.calculate_key(state.start)
    assert state.g_of(state.start) == state.rhs_of(state.start)
    for r in range(state.field.height):
        for c in range(state.field.width):
            v = (r, c)
            if state.g_of(v) != state.rhs_of(v):
                assert v in queued
                assert not key_less(state.calculate_key(v), start_key)


def _assert_valid(field, path) -> None:
    for u, v in zip(path.vertices, path.vertices[1:]):
        assert max(abs(u[0] - v[0]), abs(u[1] - v[1])) == 1
    assert not any(field.lethal[v] for v in path.vertices)
    assert path.cost == pytest.approx(path_cost(field, path.vertices), abs=1e-9)


# ── Edge costs ───────────────────────────────────────────────────────────

class TestEdgeCost:
    def test_free_moves(self):
        field = make_field(np.zeros((3, 3), dtype=bool))
        assert edge_cost(field, (1, 1), (1, 2)) == 1.0
        assert edge_cost(field, (1, 1), (2, 2)) == pytest.approx(1.4142136, abs=1e-7)

    def test_penalized_move(self):
        penalty = np.zeros((3, 3))
        penalty[1, 1] = math.exp(-0.5)
        field = make_field(np.zeros((3, 3), dtype=bool), penalty)
        assert edge_cost(field, (1, 1), (1, 2)) == pytest.approx(1.3032654, abs=1e-7)

    def test_lethal_endpoint_and_corner_cut(self):
        lethal = np.zeros((3, 3), dtype=bool)
        lethal[1, 2] = True
        field = make_field(lethal)
        assert edge_cost(field, (1, 1), (1, 2)) == math.inf
        assert edge_cost(field, (0, 1), (1, 2)) == math.inf
        assert edge_cost(field, (0, 2), (1, 1)) == math.inf

    def test_not_neighbors(self):
        field = make_field(np.zeros((3, 3), dtype=bool))
        with pytest.raises(NotNeighbors):
            edge_cost(field, (0, 0), (0, 2))
        with pytest.raises(NotNeighbors):
            edge_cost(field, (0, 0), (0, 0))

    def test_octile(self):
        assert octile((0, 0), (3, 5)) == pytest.approx(5 + 3 * (SQRT2 - 1))

    def test_octile_never_overestimates(self, rng):
        for _ in range(10):
            field = random_field(rng, 30, 30)
            for _ in range(5):
                a, b = _free_cell(rng, field), _free_cell(rng, field)
                assert octile(a, b) <= dijkstra(field, a, b) + 1e-9


# ── Key order ────────────────────────────────────────────────────────────

class TestKeyLess:
    def test_lexicographic(self):
        assert key_less((1.0, 5.0), (2.0, 0.0))
        assert key_less((1.0, 0.0), (1.0, 1.0))
        assert not key_less((1.0, 1.0), (1.0, 1.0))

    def test_rounding_in_first_component_falls_through(self):
        a = 81.3847763108502
        b = math.nextafter(a, math.inf)
        assert key_less((b, 61.73), (a, 81.38))
        assert not key_less((a, 81.38), (b, 61.73))

    def test_infinite_keys(self):
        assert key_less((5.0, 5.0), (math.inf, math.inf))
        assert not key_less((math.inf, math.inf), (5.0, 5.0))
        assert not key_less((math.inf, math.inf), (math.inf, math.inf))


# ── plan ─────────────────────────────────────────────────────────────────

class TestPlan:
    def test_straight_line(self):
        field = make_field(np.zeros((5, 5), dtype=bool))
        path, _ = plan(field, (0, 0), (0, 4))
        assert path.vertices == [(0, i) for i in range(5)]
        assert path.cost == pytest.approx(4.0)

    def test_pure_diagonal(self):
        field = make_field(np.zeros((5, 5), dtype=bool))
        path, _ = plan(field, (0, 0), (4, 4))
        assert path.vertices == [(i, i) for i in range(5)]
        assert path.cost == pytest.approx(5.6568542, abs=1e-7)

    def test_large_empty_grid(self):
        field = make_field(np.zeros((100, 100), dtype=bool))
        path, state = plan(field, (0, 0), (99, 99))
        assert path.cost == pytest.approx(99 * SQRT2, abs=1e-9)
        assert state.g_of((0, 0)) == pytest.approx(99 * SQRT2, abs=1e-9)

    def test_matches_dijkstra_on_random_fields(self, rng):
        for _ in range(100):
            field = random_field(rng, 50, 50)
            free = np.argwhere(~field.lethal)
            start, goal = (tuple(int(x) for x in free[i]) for i in rng.choice(len(free), 2, replace=False))
            expected = dijkstra(field, start, goal)
            if expected == math.inf:
                with pytest.raises(NoPath):
                    plan(field, start, goal)
                continue
            path, state = plan(field, start, goal)
            assert path.cost == pytest.approx(expected, abs=1e-9)
            assert path.cost == pytest.approx(state.g_of(start), abs=1e-9)
            assert path.vertices[0] == start and path.vertices[-1] == goal
            _assert_valid(field, path)

    def test_queue_discipline_after_search(self, rng):
        for _ in range(10):
            field, start, goal = _connected_instance(rng, 30, 30)
            _, state = plan(field, start, goal)
            _assert_queue_discipline(state)

    def test_heuristic_bounds_every_settled_cost(self, rng):
        for _ in range(10):
            field, start, goal = _connected_instance(rng, 30, 30)
            _, state = plan(field, start, goal)
            for r in range(30):
                for c in range(30):
                    g = state.g_of((r, c))
                    if g < math.inf:
                        assert octile((r, c), goal) <= g + 1e-9

    def test_walled_goal(self):
        lethal = np.zeros((7, 7), dtype=bool)
        lethal[2:5, 2] = lethal[2:5, 4] = True
        lethal[2, 2:5] = lethal[4, 2:5] = True
        with pytest.raises(NoPath):
            plan(make_field(lethal), (0, 0), (3, 3))

    def test_lethal_endpoint(self):
        lethal = np.zeros((3, 3), dtype=bool)
        lethal[2, 2] = True
        with pytest.raises(LethalEndpoint):
            plan(make_field(lethal), (0, 0), (2, 2))

    def test_out_of_bounds_endpoint(self):
        with pytest.raises(ValueError):
            plan(make_field(np.zeros((3, 3), dtype=bool)), (0, 0), (5, 5))

    def test_start_equals_goal(self):
        path, _ = plan(make_field(np.zeros((3, 3), dtype=bool)), (1, 1), (1, 1))
        assert path.vertices == [(1, 1)]
        assert path.cost == 0.0

    def test_three_by_three_corner(self):
        field = make_field(np.zeros((3, 3), dtype=bool))
        path, state = plan(field, (0, 0), (2, 2))
        assert extract_path(state, field).vertices == [(0, 0), (1, 1), (2, 2)]
        assert path.vertices == [(0, 0), (1, 1), (2, 2)]

    def test_penalties_push_the_path_away(self):
        lethal = np.zeros((21, 40), dtype=bool)
        lethal[10, 15:25] = True
        field = inflate(make_grid(lethal), 3)
        bare = field.without_penalties()
        start, goal = (9, 2), (9, 37)
        short, _ = plan(bare, start, goal)
        safe, _ = plan(field, start, goal)
        assert len(short.vertices) <= len(safe.vertices)
        assert path_cost(bare, short.vertices) <= path_cost(bare, safe.vertices)
        def summed(p):
            return sum(field.penalty[v] for v in p.vertices)

        assert summed(safe) < summed(short)


# ── update_cells ─────────────────────────────────────────────────────────

def _maze() -> np.ndarray:
    lethal = np.zeros((20, 20), dtype=bool)
    lethal[5, :18] = True
    lethal[10, 2:] = True
    lethal[15, :18] = True
    return lethal


class TestUpdateCells:
    def test_no_changes_keeps_the_plan(self):
        field = make_field(_maze())
        path, state = plan(field, (0, 0), (19, 0))
        update_cells(state, field, [])
        again = extract_path(state)
        assert again.vertices == path.vertices
        assert again.cost == path.cost

    def test_opening_a_shortcut_matches_fresh_plan(self):
        field = make_field(_maze())
        _, state = plan(field, (0, 0), (19, 0))
        changes = [((5, 0), False, 0.0), ((10, 5), False, 0.0), ((15, 0), False, 0.0)]
        update_cells(state, field, changes)
        repaired = extract_path(state)
        fresh, _ = plan(field.with_changes(changes), (0, 0), (19, 0))
        assert repaired.cost == pytest.approx(fresh.cost, abs=1e-9)
        assert repaired.cost < plan(field, (0, 0), (19, 0))[0].cost

    def test_severing_the_corridor(self):
        field = make_field(_maze())
        _, state = plan(field, (0, 0), (19, 0))
        update_cells(state, field, [((5, 18), True, 0.0), ((5, 19), True, 0.0)])
        with pytest.raises(NoPath):
            extract_path(state)

    def test_random_changes_with_moving_start(self, rng):
        field = random_field(rng, 25, 25, lethal_fraction=0.1)
        field = field.with_changes([((0, 0), False, 0.0), ((24, 24), False, 0.0), ((3, 3), False, 0.0)])
        try:
            _, state = plan(field, (0, 0), (24, 24))
        except NoPath:
            pytest.skip("random field disconnected")
        current = field
        for _ in range(5):
            cells = rng.choice(25 * 25, size=15, replace=False)
            changes = []
            for cell in cells:
                r, c = divmod(int(cell), 25)
                if (r, c) in ((24, 24), (3, 3)):
                    continue
                changes.append(((r, c), bool(rng.random() < 0.3), float(rng.random())))
            update_cells(state, current, changes, start=(3, 3))
            current = current.with_changes(changes)
            expected = dijkstra(current, (3, 3), (24, 24))
            if expected == math.inf:
                with pytest.raises(NoPath):
                    extract_path(state)
                continue
            assert state.g_of((3, 3)) == pytest.approx(expected, abs=1e-9)
            assert extract_path(state).cost == pytest.approx(expected, abs=1e-9)

    def test_repairs_match_fresh_plans(self, rng):
        for _ in range(10):
            current, start, goal = _connected_instance(rng, 50, 50)
            _, state = plan(current, start, goal)
            for _ in range(20):
                changes = _random_batch(rng, current, keep={goal, start})
                moved = current.with_changes(changes)
                start = _free_cell(rng, moved)
                update_cells(state, current, changes, start=start)
                current = moved
                _assert_matches_fresh(state, current, start, goal)
                _assert_queue_discipline(state)

    def test_walling_in_the_goal_then_reopening(self, rng):
        for _ in range(10):
            field, start, goal = _connected_instance(rng, 30, 30)
            _, state = plan(field, start, goal)
            ring = list(state.neighbors(goal))
            walls = [(v, True, 0.0) for v in ring]
            update_cells(state, field, walls)
            assert state.g_of(start) == math.inf
            with pytest.raises(NoPath):
                extract_path(state)

            walled = field.with_changes(walls)
            opening = [(ring[0], False, 0.0)]
            update_cells(state, walled, opening)
            _assert_matches_fresh(state, walled.with_changes(opening), start, goal)
