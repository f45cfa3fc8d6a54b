"""Desk-scale maze environments: a discrete gridworld and a continuous point mass.

Both share text layouts ('#' wall, '.' open, 'S' start, 'G' goal). The discrete
maze converts exactly to a :class:`~bcdp.mdp.TabularMDP`; the continuous maze
uses semi-implicit Euler integration with per-axis wall collisions. Rewards are
evaluated at the post-step state; in sparse mode the goal pays 1 and, for the
discrete maze, absorbs.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NoPathError, ValidationError
from .mdp import TabularMDP

# Discrete action set; BFS tie order is up < down < left < right.
UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), STAY: (0, 0)}
N_ACTIONS = 5

BUILTIN_LAYOUTS = {
    "corridor": "S.G",
    "umaze": (
        "#######\n"
        "#.....#\n"
        "#.###.#\n"
        "#.#G..#\n"
        "#.#####\n"
        "#....S#\n"
        "#######"
    ),
    "medium": (
        "##########\n"
        "#S..#...S#\n"
        "#.#.#.##.#\n"
        "#.#....#.#\n"
        "#S##.#...#\n"
        "#..#.##.S#\n"
        "#.#....#.#\n"
        "#S#.##...#\n"
        "#...#.S#G#\n"
        "##########"
    ),
    "large": (
        "##############\n"
        "#S...#....#.S#\n"
        "#.##.#.##.#..#\n"
        "#.#..#..#.##.#\n"
        "#.#.##..#....#\n"
        "#...#.#.###..#\n"
        "#.#.#.#...#.##\n"
        "#S#...##.....#\n"
        "#.##.#..##.#.#\n"
        "#..#.#.#...#S#\n"
        "#.#..#.#.##..#\n"
        "#S...#.#..#.G#\n"
        "#.#.......#..#\n"
        "##############"
    ),
}


@dataclass(frozen=True)
class MazeLayout:
    walls: np.ndarray                 # (h, w) bool, True = blocked
    start_cells: tuple[tuple[int, int], ...]
    goal_cell: tuple[int, int]

    def __post_init__(self):
        walls = np.asarray(self.walls, dtype=bool)
        walls.setflags(write=False)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "start_cells", tuple(tuple(c) for c in self.start_cells))
        object.__setattr__(self, "goal_cell", tuple(self.goal_cell))
        if walls.ndim != 2 or walls.size == 0:
            raise ValidationError("grid must be a nonempty 2-D array")
        if not self.start_cells:
            raise ValidationError("need at least one start cell")
        for cell in (*self.start_cells, self.goal_cell):
            if not self.is_open(cell):
                raise ValidationError(f"cell {cell} must be open and inside the grid")

    @property
    def height(self) -> int:
        return self.walls.shape[0]

    @property
    def width(self) -> int:
        return self.walls.shape[1]

    def is_open(self, cell) -> bool:
        r, c = int(cell[0]), int(cell[1])
        if not (0 <= r < self.height and 0 <= c < self.width):
            return False
        return not self.walls[r, c]

    @property
    def open_cells(self) -> tuple[tuple[int, int], ...]:
        """Open cells in row-major order; fixes the tabular state indexing."""
        h, w = self.walls.shape
        return tuple((r, c) for r in range(h) for c in range(w) if not self.walls[r, c])


def parse_layout(text: str) -> MazeLayout:
    """Parse the one-character-per-cell text format."""
    rows = [line for line in text.strip("\n").split("\n")]
    if not rows or not rows[0]:
        raise ValidationError("empty layout text")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValidationError("layout rows must all have the same length")
    starts, goals = [], []
    walls = np.zeros((len(rows), width), dtype=bool)
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls[r, c] = True
            elif ch == "S":
                starts.append((r, c))
            elif ch == "G":
                goals.append((r, c))
            elif ch != ".":
                raise ValidationError(f"unknown layout character {ch!r} at ({r}, {c})")
    if len(goals) != 1:
        raise ValidationError(f"layout must contain exactly one goal, found {len(goals)}")
    return MazeLayout(walls=walls, start_cells=tuple(starts), goal_cell=goals[0])


def layout_to_text(layout: MazeLayout) -> str:
    rows = []
    starts = set(layout.start_cells)
    for r in range(layout.height):
        line = []
        for c in range(layout.width):
            if layout.walls[r, c]:
                line.append("#")
            elif (r, c) == layout.goal_cell:
                line.append("G")
            elif (r, c) in starts:
                line.append("S")
            else:
                line.append(".")
        rows.append("".join(line))
    return "\n".join(rows)


def bfs_distances(layout: MazeLayout) -> np.ndarray:
    """Shortest-path step counts from every open cell to the goal (-1 if cut off)."""
    dist = np.full(layout.walls.shape, -1, dtype=int)
    gr, gc = layout.goal_cell
    dist[gr, gc] = 0
    queue = deque([layout.goal_cell])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if layout.is_open((nr, nc)) and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


def cell_center(cell) -> np.ndarray:
    """(x, y) center of a cell; x tracks the column, y the row."""
    return np.array([cell[1] + 0.5, cell[0] + 0.5])


@dataclass(frozen=True)
class EnvStep:
    next_state: np.ndarray
    reward: float
    done: bool


def _as_cell(state) -> tuple[int, int]:
    arr = np.asarray(state)
    if arr.shape != (2,):
        raise ValidationError(f"discrete state must have 2 entries, got shape {arr.shape}")
    return int(arr[0]), int(arr[1])


@dataclass(frozen=True)
class DiscreteMazeEnv:
    """Gridworld maze with 5 actions; sparse goal absorbs with sustained reward 1."""

    layout: MazeLayout
    reward_mode: str = "sparse"
    horizon: int = 100
    gamma: float = 0.99
    dense_scale: float = 1.0
    env_id: str = "grid-custom"

    def __post_init__(self):
        if self.reward_mode not in ("sparse", "dense"):
            raise ValidationError(f"unknown reward_mode {self.reward_mode!r}")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.dense_scale <= 0:
            raise ValidationError("dense_scale must be positive")
        object.__setattr__(self, "_dist", bfs_distances(self.layout))

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def reward_at(self, cell) -> float:
        if self.reward_mode == "sparse":
            return 1.0 if tuple(cell) == self.layout.goal_cell else 0.0
        gr, gc = self.layout.goal_cell
        d = abs(cell[0] - gr) + abs(cell[1] - gc)
        return float(np.exp(-d / self.dense_scale))

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        cell = self.layout.start_cells[rng.integers(len(self.layout.start_cells))]
        return np.array(cell, dtype=int)

    def step(self, state, action: int) -> EnvStep:
        cell = _as_cell(state)
        if not self.layout.is_open(cell):
            raise ValidationError(f"state {cell} is not an open cell")
        if self.reward_mode == "sparse" and cell == self.layout.goal_cell:
            nxt = cell  # absorbing goal
        else:
            dr, dc = MOVES[int(action)]
            cand = (cell[0] + dr, cell[1] + dc)
            nxt = cand if self.layout.is_open(cand) else cell
        done = self.reward_mode == "sparse" and nxt == self.layout.goal_cell
        return EnvStep(np.array(nxt, dtype=int), self.reward_at(nxt), done)

    def expert_action(self, state) -> int:
        cell = _as_cell(state)
        if cell == self.layout.goal_cell:
            return STAY
        d = self._dist[cell]
        if d < 0:
            raise NoPathError(f"goal unreachable from {cell}")
        for action in (UP, DOWN, LEFT, RIGHT):
            dr, dc = MOVES[action]
            cand = (cell[0] + dr, cell[1] + dc)
            if self.layout.is_open(cand) and self._dist[cand] == d - 1:
                return action
        raise NoPathError(f"no descending neighbor from {cell}")  # unreachable

    def random_action(self, rng: np.random.Generator) -> int:
        return int(rng.integers(N_ACTIONS))

    def cell_index(self, cell) -> int:
        return self.layout.open_cells.index(tuple(cell))

    def to_tabular(self) -> TabularMDP:
        """Exact MDP twin: one state per open cell, deterministic transitions."""
        cells = self.layout.open_cells
        index = {cell: i for i, cell in enumerate(cells)}
        n = len(cells)
        transition = np.zeros((n, N_ACTIONS, n))
        reward = np.zeros((n, N_ACTIONS))
        for i, cell in enumerate(cells):
            for a in range(N_ACTIONS):
                out = self.step(np.array(cell), a)
                j = index[_as_cell(out.next_state)]
                transition[i, a, j] = 1.0
                reward[i, a] = out.reward
        initial = np.zeros(n)
        for cell in self.layout.start_cells:
            initial[index[cell]] = 1.0 / len(self.layout.start_cells)
        return TabularMDP(transition=transition, reward=reward,
                          initial_dist=initial, gamma=self.gamma)


_POS_EPS = 1e-9


@dataclass(frozen=True)
class ContinuousMazeEnv:
    """Point mass in the same layouts; unit cells, reflecting wall constraints.

    State is (x, y, vx, vy). A step clips the force to the action box, applies
    v <- (1 - damping) v + dt a, then moves one axis at a time, zeroing the
    velocity component that would enter a wall cell.
    """

    layout: MazeLayout
    dt: float = 0.1
    damping: float = 0.2
    max_force: float = 1.0
    goal_radius: float = 0.3
    reward_mode: str = "sparse"
    horizon: int = 300
    dense_scale: float = 1.0
    kp: float = 5.0
    kd: float = 1.0
    env_id: str = "point-custom"

    def __post_init__(self):
        if self.reward_mode not in ("sparse", "dense"):
            raise ValidationError(f"unknown reward_mode {self.reward_mode!r}")
        if not (0.0 <= self.damping < 1.0):
            raise ValidationError("damping must lie in [0, 1)")
        if self.dt <= 0 or self.max_force <= 0 or self.goal_radius <= 0:
            raise ValidationError("dt, max_force and goal_radius must be positive")
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        object.__setattr__(self, "_dist", bfs_distances(self.layout))

    @property
    def goal_center(self) -> np.ndarray:
        return cell_center(self.layout.goal_cell)

    def reward_at(self, position) -> float:
        d = float(np.linalg.norm(np.asarray(position) - self.goal_center))
        if self.reward_mode == "sparse":
            return 1.0 if d <= self.goal_radius else 0.0
        return float(np.exp(-d / self.dense_scale))

    def cell_of(self, position) -> tuple[int, int]:
        return int(np.floor(position[1])), int(np.floor(position[0]))

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        cell = self.layout.start_cells[rng.integers(len(self.layout.start_cells))]
        pos = cell_center(cell) + rng.uniform(-0.1, 0.1, size=2)
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def _slide(self, pos: float, delta: float, other: float, axis: int) -> tuple[float, bool]:
        """Move one coordinate cell by cell, clamping at the first wall boundary."""
        if delta == 0.0:
            return pos, False
        target = pos + delta
        step = 1 if delta > 0 else -1
        cell = int(np.floor(pos))
        other_cell = int(np.floor(other))
        while True:
            boundary = float(cell + 1) if step > 0 else float(cell)
            if (target < boundary) if step > 0 else (target > boundary):
                return target, False
            nxt = cell + step
            cand = (other_cell, nxt) if axis == 0 else (nxt, other_cell)
            if not self.layout.is_open(cand):
                return boundary - _POS_EPS * step, True
            cell = nxt

    def step(self, state, action) -> EnvStep:
        s = np.asarray(state, dtype=float)
        if s.shape != (4,):
            raise ValidationError(f"continuous state must have 4 entries, got {s.shape}")
        a = np.clip(np.asarray(action, dtype=float), -self.max_force, self.max_force)
        if a.shape != (2,):
            raise ValidationError(f"action must have 2 entries, got {a.shape}")
        x, y, vx, vy = s
        vx = (1.0 - self.damping) * vx + self.dt * a[0]
        vy = (1.0 - self.damping) * vy + self.dt * a[1]
        x, hit = self._slide(x, self.dt * vx, y, axis=0)
        if hit:
            vx = 0.0
        y, hit = self._slide(y, self.dt * vy, x, axis=1)
        if hit:
            vy = 0.0
        nxt = np.array([x, y, vx, vy])
        reward = self.reward_at(nxt[:2])
        done = self.reward_mode == "sparse" and reward > 0.0
        return EnvStep(nxt, reward, done)

    def expert_action(self, state) -> np.ndarray:
        """PD control toward the next shortest-path cell center."""
        s = np.asarray(state, dtype=float)
        pos, vel = s[:2], s[2:4]
        cell = self.cell_of(pos)
        if not self.layout.is_open(cell):
            raise ValidationError(f"position {pos} is inside a wall")
        if cell == self.layout.goal_cell:
            waypoint = self.goal_center
        else:
            d = self._dist[cell]
            if d < 0:
                raise NoPathError(f"goal unreachable from cell {cell}")
            waypoint = None
            for action in (UP, DOWN, LEFT, RIGHT):
                dr, dc = MOVES[action]
                cand = (cell[0] + dr, cell[1] + dc)
                if self.layout.is_open(cand) and self._dist[cand] == d - 1:
                    waypoint = cell_center(cand)
                    break
        return np.clip(self.kp * (waypoint - pos) - self.kd * vel,
                       -self.max_force, self.max_force)

    def random_action(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.max_force, self.max_force, size=2)


def make_env(env_id: str, layout_text: str | None = None, **overrides):
    """Build an environment from an id of the form ``{grid|point}-{name}-{sparse|dense}``.

    ``layout_text`` replaces the named builtin layout when given; the name part
    of the id is then only a label.
    """
    parts = env_id.split("-")
    if len(parts) != 3:
        raise ValidationError(
            f"env id must look like 'grid-umaze-sparse', got {env_id!r}")
    kind, name, mode = parts
    if layout_text is None:
        if name not in BUILTIN_LAYOUTS:
            raise ValidationError(
                f"unknown layout {name!r}; builtins: {sorted(BUILTIN_LAYOUTS)}")
        layout_text = BUILTIN_LAYOUTS[name]
    layout = parse_layout(layout_text)
    if kind == "grid":
        return DiscreteMazeEnv(layout=layout, reward_mode=mode, env_id=env_id, **overrides)
    if kind == "point":
        return ContinuousMazeEnv(layout=layout, reward_mode=mode, env_id=env_id, **overrides)
    raise ValidationError(f"unknown env kind {kind!r} (use 'grid' or 'point')")
