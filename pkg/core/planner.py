"""
core/planner.py
D* Lite over the 8-connected cost grid.

Search runs backward from the goal; g/rhs values are path costs to the
goal. Edge cost between neighbors u, v is L·(1 + (p(u) + p(v))/2) with
L = 1 (axial) or √2 (diagonal); lethal endpoints, and diagonal moves
that would cut the corner of a lethal cell, are impassable. The octile
heuristic stays admissible because every edge costs at least its length.
"""

import heapq
import math
import dataclasses
from dataclasses import dataclass
from typing import Iterable, Optional

from config.settings import log
from core.costmap import LETHAL, CostField
from core.errors import InconsistentState, LethalEndpoint, NoPath, NotNeighbors

GridVertex = tuple[int, int]
Key = tuple[float, float]

INF = math.inf
SQRT2 = math.sqrt(2.0)
KEY_RTOL = 1e-9

# N, NE, E, SE, S, SW, W, NW (N = row − 1)
NEIGHBORS: tuple[GridVertex, ...] = (
    (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1),
)


@dataclass
class GridPath:
    vertices: list[GridVertex]
    cost: float

    def __len__(self) -> int:
        return len(self.vertices)


# ── Costs and heuristic ───────────────────────────────────────────────────────

def octile(a: GridVertex, b: GridVertex) -> float:
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def edge_cost(field: CostField, u: GridVertex, v: GridVertex) -> float:
    dr, dc = v[0] - u[0], v[1] - u[1]
    if (dr, dc) == (0, 0) or abs(dr) > 1 or abs(dc) > 1:
        raise NotNeighbors(f"{u} and {v} are not 8-neighbors")
    lethal = field.lethal
    if lethal[u] or lethal[v]:
        return LETHAL
    if dr and dc:
        if lethal[u[0], v[1]] or lethal[v[0], u[1]]:
            return LETHAL
        length = SQRT2
    else:
        length = 1.0
    return length * (1.0 + (field.penalty[u] + field.penalty[v]) / 2.0)


def key_less(a: Key, b: Key) -> bool:
    """Lexicographic key order with first components within KEY_RTOL
    treated as equal, so rounding in g + h + km never decides the order."""
    if a[0] != b[0]:
        if math.isinf(a[0]) or math.isinf(b[0]):
            return a[0] < b[0]
        if abs(a[0] - b[0]) > KEY_RTOL * max(1.0, abs(a[0]), abs(b[0])):
            return a[0] < b[0]
    return a[1] < b[1]


def path_cost(field: CostField, vertices: list[GridVertex]) -> float:
    total = 0.0
    for u, v in zip(vertices, vertices[1:]):
        total += edge_cost(field, u, v)
    return total


# ── Planner state ─────────────────────────────────────────────────────────────

@dataclass
class PlannerState:
    field: CostField
    start: GridVertex
    goal: GridVertex
    g: list[float] = dataclasses.field(default_factory=list)
    rhs: list[float] = dataclasses.field(default_factory=list)
    km: float = 0.0
    last_start: Optional[GridVertex] = None
    expansions: int = 0
    _heap: list[tuple[float, float, int]] = dataclasses.field(default_factory=list)
    _queued: dict[int, Key] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        n = self.field.height * self.field.width
        if not self.g:
            self.g = [INF] * n
            self.rhs = [INF] * n
        if self.last_start is None:
            self.last_start = self.start
        self.refresh_costs()

    def refresh_costs(self) -> None:
        """Cache the cost layers as flat lists for the search inner loop."""
        self._lethal = self.field.lethal.ravel().tolist()
        self._penalty = self.field.penalty.ravel().tolist()

    def _cost(self, i: int, j: int, dr: int, dc: int) -> float:
        """edge_cost for neighbor ids i → j = i + dr·W + dc."""
        lethal = self._lethal
        if lethal[i] or lethal[j]:
            return INF
        if dr and dc:
            if lethal[i + dc] or lethal[i + dr * self.field.width]:
                return INF
            return SQRT2 * (1.0 + (self._penalty[i] + self._penalty[j]) / 2.0)
        return 1.0 + (self._penalty[i] + self._penalty[j]) / 2.0

    def successors(self, i: int) -> Iterable[tuple[int, float]]:
        """(neighbor id, edge cost) in scan order, finite costs only."""
        w, h = self.field.width, self.field.height
        r, c = divmod(i, w)
        for dr, dc in NEIGHBORS:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                j = i + dr * w + dc
                cost = self._cost(i, j, dr, dc)
                if cost != INF:
                    yield j, cost

    # ── Indexing ─────────────────────────────────────────────────────────────

    def _id(self, v: GridVertex) -> int:
        return v[0] * self.field.width + v[1]

    def _vertex(self, i: int) -> GridVertex:
        return divmod(i, self.field.width)

    def neighbors(self, v: GridVertex) -> Iterable[GridVertex]:
        h, w = self.field.height, self.field.width
        for dr, dc in NEIGHBORS:
            r, c = v[0] + dr, v[1] + dc
            if 0 <= r < h and 0 <= c < w:
                yield (r, c)

    def g_of(self, v: GridVertex) -> float:
        return self.g[self._id(v)]

    def rhs_of(self, v: GridVertex) -> float:
        return self.rhs[self._id(v)]

    # ── Queue ────────────────────────────────────────────────────────────────

    def calculate_key(self, v: GridVertex) -> Key:
        i = self._id(v)
        m = min(self.g[i], self.rhs[i])
        if m == INF:
            return (INF, INF)
        return (m + octile(self.start, v) + self.km, m)

    def _push(self, i: int, key: Key) -> None:
        self._queued[i] = key
        heapq.heappush(self._heap, (key[0], key[1], i))

    def _discard_stale(self) -> None:
        heap = self._heap
        while heap and self._queued.get(heap[0][2]) != (heap[0][0], heap[0][1]):
            heapq.heappop(heap)

    def top_key(self) -> Key:
        self._discard_stale()
        if not self._heap:
            return (INF, INF)
        return (self._heap[0][0], self._heap[0][1])

    def queued(self) -> dict[GridVertex, Key]:
        return {self._vertex(i): k for i, k in self._queued.items()}

    # ── D* Lite core ─────────────────────────────────────────────────────────

    def initialize(self) -> None:
        gi = self._id(self.goal)
        self.rhs[gi] = 0.0
        self._push(gi, self.calculate_key(self.goal))

    def _key_of(self, i: int) -> Key:
        m = min(self.g[i], self.rhs[i])
        if m == INF:
            return (INF, INF)
        return (m + octile(self.start, self._vertex(i)) + self.km, m)

    def _update(self, i: int, goal_i: int) -> None:
        if i != goal_i:
            best = INF
            g = self.g
            for j, c in self.successors(i):
                gs = g[j]
                if gs != INF and c + gs < best:
                    best = c + gs
            self.rhs[i] = best
        self._queued.pop(i, None)
        if self.g[i] != self.rhs[i]:
            self._push(i, self._key_of(i))

    def update_vertex(self, u: GridVertex) -> None:
        self._update(self._id(u), self._id(self.goal))

    def _neighbor_ids(self, i: int) -> list[int]:
        w, h = self.field.width, self.field.height
        r, c = divmod(i, w)
        return [i + dr * w + dc for dr, dc in NEIGHBORS
                if 0 <= r + dr < h and 0 <= c + dc < w]

    def compute_shortest_path(self) -> None:
        start_i = self._id(self.start)
        goal_i = self._id(self.goal)
        while True:
            top = self.top_key()
            if not (key_less(top, self._key_of(start_i)) or self.rhs[start_i] != self.g[start_i]):
                break
            if top == (INF, INF):
                break
            _, _, i = heapq.heappop(self._heap)
            del self._queued[i]
            self.expansions += 1
            new_key = self._key_of(i)
            if key_less(top, new_key):
                self._push(i, new_key)
            elif self.g[i] > self.rhs[i]:
                self.g[i] = self.rhs[i]
                for j in self._neighbor_ids(i):
                    self._update(j, goal_i)
            else:
                self.g[i] = INF
                self._update(i, goal_i)
                for j in self._neighbor_ids(i):
                    self._update(j, goal_i)

# ── Public operations ─────────────────────────────────────────────────────────

def _check_endpoint(field: CostField, v: GridVertex, name: str) -> None:
    if not field.in_bounds(*v):
        raise ValueError(f"{name} {v} outside {field.height}x{field.width} grid")
    if field.lethal[v]:
        raise LethalEndpoint(f"{name} {v} is a lethal cell")


def extract_path(state: PlannerState, field: Optional[CostField] = None) -> GridPath:
    """Greedy descent from start: at each vertex take the neighbor minimizing
    c(u, s') + g(s'), first in scan order on ties."""
    field = field if field is not None else state.field
    if state.g_of(state.start) == INF:
        raise NoPath(f"goal {state.goal} unreachable from {state.start}")

    u = state.start
    vertices = [u]
    total = 0.0
    bound = field.height * field.width
    while u != state.goal:
        if len(vertices) > bound:
            raise InconsistentState("path descent exceeded the vertex count")
        best, best_v, best_c = INF, None, INF
        for s in state.neighbors(u):
            c = edge_cost(field, u, s)
            if c == INF:
                continue
            gs = state.g_of(s)
            if gs == INF:
                continue
            if c + gs < best:
                best, best_v, best_c = c + gs, s, c
        if best_v is None:
            raise NoPath(f"dead end at {u}")
        total += best_c
        u = best_v
        vertices.append(u)
    return GridPath(vertices, total)


def plan(field: CostField, start: GridVertex, goal: GridVertex) -> tuple[GridPath, PlannerState]:
    """From-scratch D* Lite search (km = 0) and the extracted path."""
    start, goal = tuple(start), tuple(goal)
    _check_endpoint(field, start, "start")
    _check_endpoint(field, goal, "goal")
    state = PlannerState(field, start, goal)
    state.initialize()
    state.compute_shortest_path()
    log.info(f"[Planner] {field.height}x{field.width} grid, {start}→{goal}: "
             f"g(start)={state.g_of(start):.4f}, {state.expansions} expansions")
    path = extract_path(state)
    return path, state


def update_cells(state: PlannerState, field: CostField,
                 changes: Iterable[tuple[GridVertex, bool, float]],
                 start: Optional[GridVertex] = None) -> PlannerState:
    """Apply cell changes on top of `field`, move the start if given, and
    repair the search incrementally. Returns the same (mutated) state."""
    changes = list(changes)
    new_field = field.with_changes(changes) if changes else field
    if start is not None:
        start = tuple(start)
        _check_endpoint(new_field, start, "start")
    _check_endpoint(new_field, state.goal, "goal")

    if start is not None and start != state.start:
        state.km += octile(state.last_start, start)
        state.last_start = start
        state.start = start
    state.field = new_field
    state.refresh_costs()

    touched: set[GridVertex] = set()
    for (row, col), _, _ in changes:
        touched.add((row, col))
        touched.update(state.neighbors((row, col)))
    for v in sorted(touched):
        state.update_vertex(v)

    before = state.expansions
    state.compute_shortest_path()
    log.info(f"[Planner] repaired {len(changes)} cell changes ({len(touched)} vertices) "
             f"with {state.expansions - before} expansions; g(start)={state.g_of(state.start):.4f}")
    return state
