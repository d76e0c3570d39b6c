"""Agents moving along sidewalk walking lines and road lanes.

Agents travel on axis-aligned lines derived from the map layout.  Nodes sit
where lines intersect; at nodes the class policy either continues, executes
a forced turn, or samples among options (a *branch decision*).  Motion is
exact between nodes so that every future is a deterministic function of the
decisions taken.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..geometry import BBox
from .maps import (CROSSING, OFF_MAP, PEDESTRIAN, ROAD, ROAD_WIDTH, SIDEWALK,
                   SIDEWALK_WIDTH, VEHICLE, MapLayout, SemanticGrid, junctions)

EPS = 1e-9
INF = math.inf

WALKING, CROSSING_STATE, STOPPED, TURNING = "walking", "crossing", "stopped", "turning"
POLICY_STATES = (WALKING, CROSSING_STATE, STOPPED, TURNING)

LEGAL_CELLS = {
    PEDESTRIAN: (SIDEWALK, CROSSING, OFF_MAP),
    VEHICLE: (ROAD, CROSSING, OFF_MAP),
}


class SimulationError(RuntimeError):
    """Raised when an agent violates the map contract (a simulator bug)."""


@dataclass(frozen=True)
class PolicyConfig:
    p_cross: float = 0.4
    p_continue: float = 0.5
    p_wait: float = 0.1
    wait_steps: int = 4
    p_straight: float = 0.5
    p_left: float = 0.25
    p_right: float = 0.25
    ped_max_speed: float = 1.2
    veh_max_speed: float = 2.0


@dataclass(frozen=True)
class Plan:
    junction: tuple[int, int]
    turn_at: tuple[float, float] | None
    heading: tuple[int, int] | None


@dataclass(frozen=True)
class Agent:
    id: int
    class_id: int
    x: float
    y: float
    heading: tuple[int, int]
    speed: float
    size: tuple[float, float]  # (along-heading length, across width) for vehicles; (w, h) for pedestrians
    policy_state: str = WALKING
    rng_stream: int = 0
    plan: Plan | None = None
    pending: tuple[int, int] | None = None  # crossing heading while stopped
    wait_left: int = 0

    @property
    def velocity(self) -> tuple[float, float]:
        if self.policy_state == STOPPED:
            return (0.0, 0.0)
        return (self.heading[0] * self.speed, self.heading[1] * self.speed)

    @property
    def box(self) -> BBox:
        """World-frame box."""
        a, b = self.size
        if self.class_id == VEHICLE and self.heading[1] != 0:
            a, b = b, a
        return BBox(self.x, self.y, a, b)


@dataclass(frozen=True)
class BranchDecision:
    agent_id: int
    step: int
    options: tuple[str, ...]
    probs: tuple[float, ...]
    chosen: int

    def to_dict(self):
        return {"agent": self.agent_id, "step": self.step, "options": list(self.options),
                "probs": list(self.probs), "chosen": self.chosen}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["agent"]), int(d["step"]), tuple(d["options"]),
                   tuple(float(p) for p in d["probs"]), int(d["chosen"]))


def right_of(h):
    return (-h[1], h[0])


def left_of(h):
    return (h[1], -h[0])


@dataclass
class _Line:
    coord: float          # fixed coordinate (y for horizontal, x for vertical)
    lo: float             # extent along the line
    hi: float
    nodes: list[float]    # sorted node positions along the line


class RouteNetwork:
    """Walking lines (pedestrians) or lanes (vehicles) with their nodes."""

    def __init__(self, layout: MapLayout, class_id: int):
        self.layout = layout
        self.class_id = class_id
        self.hlines: dict[float, _Line] = {}
        self.vlines: dict[float, _Line] = {}
        self.lane_heading: dict[tuple[str, float], tuple[int, int]] = {}
        self.junction_of: dict[tuple[float, float], tuple[int, int]] = {}
        H = layout.height
        hidx = {h.y0: i for i, h in enumerate(layout.hroads)}
        half = SIDEWALK_WIDTH // 2
        if class_id == PEDESTRIAN:
            for h in layout.hroads:
                for y in (h.y0 - half, h.y0 + ROAD_WIDTH + half):
                    self.hlines[float(y)] = _Line(float(y), -INF, INF, [])
            for v in layout.vroads:
                lo = -INF if v.ys == 0 else float(v.ys + half)
                hi = INF if v.ye == H else float(v.ye - half)
                for x in (v.x0 - half, v.x0 + ROAD_WIDTH + half):
                    self.vlines[float(x)] = _Line(float(x), lo, hi, [])
        else:
            q = ROAD_WIDTH // 4
            for h in layout.hroads:
                self.hlines[float(h.y0 + 3 * q)] = _Line(float(h.y0 + 3 * q), -INF, INF, [])
                self.lane_heading[("h", float(h.y0 + 3 * q))] = (1, 0)
                self.hlines[float(h.y0 + q)] = _Line(float(h.y0 + q), -INF, INF, [])
                self.lane_heading[("h", float(h.y0 + q))] = (-1, 0)
            for v in layout.vroads:
                lo = -INF if v.ys == 0 else float(v.ys - ROAD_WIDTH + q)
                hi = INF if v.ye == H else float(v.ye + 3 * q)
                self.vlines[float(v.x0 + q)] = _Line(float(v.x0 + q), lo, hi, [])
                self.lane_heading[("v", float(v.x0 + q))] = (0, 1)
                self.vlines[float(v.x0 + 3 * q)] = _Line(float(v.x0 + 3 * q), lo, hi, [])
                self.lane_heading[("v", float(v.x0 + 3 * q))] = (0, -1)
        for y, hl in self.hlines.items():
            for x, vl in self.vlines.items():
                if vl.lo <= y <= vl.hi:
                    hl.nodes.append(x)
                    vl.nodes.append(y)
        for ln in list(self.hlines.values()) + list(self.vlines.values()):
            ln.nodes.sort()
        if class_id == VEHICLE:
            for hr, vr, _n, _s in junctions(layout):
                j = (hidx[hr.y0], layout.vroads.index(vr))
                for y in (hr.y0 + q, hr.y0 + 3 * q):
                    for x in (vr.x0 + q, vr.x0 + 3 * q):
                        self.junction_of[(float(x), float(y))] = j
        self.grid = None

    # -- line queries -----------------------------------------------------
    def line(self, x, y, heading) -> _Line:
        if heading[1] == 0:
            ln = self.hlines.get(y)
        else:
            ln = self.vlines.get(x)
        if ln is None:
            raise SimulationError(f"agent at ({x}, {y}) heading {heading} is off every route line")
        return ln

    @staticmethod
    def _along(x, y, heading):
        return x if heading[1] == 0 else y

    def next_node(self, x, y, heading):
        """Distance and position of the next node strictly ahead, or None."""
        ln = self.line(x, y, heading)
        s = self._along(x, y, heading)
        sign = heading[0] + heading[1]
        best = None
        for n in (ln.nodes if sign > 0 else reversed(ln.nodes)):
            d = (n - s) * sign
            if d > EPS:
                best = (d, n)
                break
        if best is None:
            return None
        d, n = best
        pos = (n, y) if heading[1] == 0 else (x, n)
        return d, pos

    def extends(self, x, y, heading) -> bool:
        """Whether the line through ``(x, y)`` along ``heading`` continues past this point."""
        try:
            ln = self.line(x, y, heading)
        except SimulationError:
            return False
        s = self._along(x, y, heading)
        sign = heading[0] + heading[1]
        return (ln.hi - s > EPS) if sign > 0 else (s - ln.lo > EPS)

    def segment_kind(self, x, y, heading, grid: SemanticGrid) -> str | None:
        """'cross' / 'walk' for the segment leaving ``(x, y)``; None if unavailable."""
        if not self.extends(x, y, heading):
            return None
        nxt = self.next_node(x, y, heading)
        if nxt is None:
            return "walk"
        _, (nx, ny) = nxt
        mx, my = (x + nx) / 2, (y + ny) / 2
        return "cross" if grid.label_at(mx, my) == CROSSING else "walk"


_NETWORKS: dict[tuple[int, int], RouteNetwork] = {}


def route_network(grid: SemanticGrid, class_id: int) -> RouteNetwork:
    if grid.layout is None:
        raise SimulationError("agents need a grid generated with a road layout")
    key = (id(grid.layout), class_id)
    net = _NETWORKS.get(key)
    if net is None or net.layout is not grid.layout:
        if len(_NETWORKS) > 256:
            _NETWORKS.clear()
        net = RouteNetwork(grid.layout, class_id)
        _NETWORKS[key] = net
    return net


Chooser = Callable[[Agent, Sequence[str], Sequence[float]], int]


def _normalise(opts):
    opts = [(lab, p, act) for lab, p, act in opts if p > 0]
    tot = sum(p for _, p, _ in opts)
    return [(lab, p / tot, act) for lab, p, act in opts]


def _pedestrian_node(agent, node, grid, net, cfg, choose, decisions):
    x, y = node
    h = agent.heading
    straight = net.segment_kind(x, y, h, grid)
    perp = [(d, net.segment_kind(x, y, d, grid)) for d in (left_of(h), right_of(h))]
    walks = [d for d, k in perp if k == "walk"]
    if straight == "walk":
        return agent
    if straight == "cross":
        opts = [("cross", cfg.p_cross, ("go", h))]
        if walks:
            opts.append(("continue", cfg.p_continue, ("go", walks[0])))
        opts.append(("wait", cfg.p_wait, ("wait", h)))
        opts = _normalise(opts)
    elif len(walks) == 1:
        return replace(agent, heading=walks[0])
    elif len(walks) == 2:
        opts = [("left", 0.5, ("go", walks[0])), ("right", 0.5, ("go", walks[1]))]
    else:
        crosses = [d for d, k in perp if k == "cross"]
        return replace(agent, heading=crosses[0] if crosses else (-h[0], -h[1]))
    if len(opts) == 1:
        idx = 0
    else:
        labels = tuple(o[0] for o in opts)
        probs = tuple(o[1] for o in opts)
        idx = choose(agent, labels, probs)
        decisions.append((labels, probs, idx))
    kind, d = opts[idx][2]
    if kind == "wait":
        return replace(agent, policy_state=STOPPED, pending=d, wait_left=cfg.wait_steps)
    return replace(agent, heading=d)


def _leaves_junction(net, x, y, h, j) -> bool:
    """Whether the lane through ``(x, y)`` along ``h`` continues beyond junction ``j``."""
    while True:
        nxt = net.next_node(x, y, h)
        if nxt is None or net.junction_of.get(nxt[1]) != j:
            return net.extends(x, y, h)
        x, y = nxt[1]


def _vehicle_node(agent, node, grid, net, cfg, choose, decisions):
    x, y = node
    h = agent.heading
    j = net.junction_of.get((x, y))
    plan = agent.plan
    if plan is not None and plan.junction == j:
        if plan.turn_at == (x, y):
            return replace(agent, heading=plan.heading, plan=Plan(j, None, None))
        return agent
    if j is None:
        return replace(agent, plan=None)
    # scan this junction's nodes ahead (including the current one)
    cand = [(x, y)]
    px, py = x, y
    while True:
        nxt = net.next_node(px, py, h)
        if nxt is None or net.junction_of.get(nxt[1]) != j:
            break
        px, py = nxt[1]
        cand.append((px, py))
    right_at = left_at = None
    for (cx, cy) in cand:
        lane_key = ("v", cx) if h[1] == 0 else ("h", cy)
        lh = net.lane_heading.get(lane_key)
        if lh is None:
            continue
        if lh == right_of(h) and right_at is None and _leaves_junction(net, cx, cy, lh, j):
            right_at = (cx, cy)
        if lh == left_of(h) and left_at is None and _leaves_junction(net, cx, cy, lh, j):
            left_at = (cx, cy)
    opts = []
    if net.extends(px, py, h):
        opts.append(("straight", cfg.p_straight, Plan(j, None, None)))
    if left_at is not None:
        opts.append(("left", cfg.p_left, Plan(j, left_at, left_of(h))))
    if right_at is not None:
        opts.append(("right", cfg.p_right, Plan(j, right_at, right_of(h))))
    opts = _normalise(opts)
    if not opts:
        raise SimulationError(f"vehicle {agent.id} reached a dead end at {node}")
    if len(opts) == 1:
        idx = 0
    else:
        labels = tuple(o[0] for o in opts)
        probs = tuple(o[1] for o in opts)
        idx = choose(agent, labels, probs)
        decisions.append((labels, probs, idx))
    chosen = opts[idx][2]
    agent = replace(agent, plan=chosen)
    if chosen.turn_at == (x, y):
        return replace(agent, heading=chosen.heading, plan=Plan(j, None, None))
    return agent


def _settle_state(agent, grid):
    if agent.policy_state == STOPPED:
        return agent
    if agent.class_id == VEHICLE:
        st = TURNING if (agent.plan is not None and agent.plan.turn_at is not None) else WALKING
    else:
        st = CROSSING_STATE if grid.label_at(agent.x, agent.y) == CROSSING else WALKING
    return agent if st == agent.policy_state else replace(agent, policy_state=st)


def check_legal(agent: Agent, grid: SemanticGrid):
    lab = grid.label_at(agent.x, agent.y)
    if lab not in LEGAL_CELLS[agent.class_id]:
        raise SimulationError(
            f"agent {agent.id} (class {agent.class_id}) on illegal cell class {lab} at ({agent.x}, {agent.y})")


def advance(agent: Agent, grid: SemanticGrid, cfg: PolicyConfig, choose: Chooser):
    """Move one agent by one step. Returns ``(agent, [(labels, probs, chosen), ...])``."""
    check_legal(agent, grid)
    net = route_network(grid, agent.class_id)
    decisions: list = []
    if agent.policy_state == STOPPED:
        left = agent.wait_left - 1
        if left > 0:
            return replace(agent, wait_left=left), decisions
        agent = replace(agent, policy_state=WALKING, heading=agent.pending, pending=None, wait_left=0)
    remaining = agent.speed
    handler = _pedestrian_node if agent.class_id == PEDESTRIAN else _vehicle_node
    guard = 0
    while remaining > EPS:
        guard += 1
        if guard > 64:
            raise SimulationError(f"agent {agent.id} stuck resolving nodes")
        nxt = net.next_node(agent.x, agent.y, agent.heading)
        if nxt is None or nxt[0] > remaining + EPS:
            agent = replace(agent, x=agent.x + agent.heading[0] * remaining,
                            y=agent.y + agent.heading[1] * remaining)
            break
        d, (nx, ny) = nxt
        remaining -= d
        agent = replace(agent, x=nx, y=ny)
        agent = handler(agent, (nx, ny), grid, net, cfg, choose, decisions)
        if agent.policy_state == STOPPED:
            break
    agent = _settle_state(agent, grid)
    check_legal(agent, grid)
    return agent, decisions


def rng_chooser(seed_step) -> Chooser:
    """Chooser drawing from a per-(step, agent stream) generator.

    ``seed_step`` is an int or a tuple of ints identifying the step.
    """
    cache: dict[int, np.random.Generator] = {}
    key = list(seed_step) if isinstance(seed_step, (tuple, list)) else [seed_step]

    def choose(agent, labels, probs):
        g = cache.get(agent.rng_stream)
        if g is None:
            g = np.random.default_rng(key + [agent.rng_stream])
            cache[agent.rng_stream] = g
        u = g.random()
        c = np.cumsum(probs)
        return int(min(np.searchsorted(c, u, side="right"), len(probs) - 1))

    return choose


def step_agents(grid: SemanticGrid, agents: Sequence[Agent], seed_step,
                cfg: PolicyConfig | None = None, step: int | None = None):
    """Advance every agent by one step.

    Randomness is drawn per agent from ``(seed_step, agent.rng_stream)``.
    Returns the new agents and the :class:`BranchDecision` list; decisions
    are stamped with ``step`` (defaults to ``seed_step`` when it is an int).
    """
    cfg = cfg or PolicyConfig()
    choose = rng_chooser(seed_step)
    stamp = step if step is not None else (seed_step if isinstance(seed_step, int) else -1)
    out, log = [], []
    for a in agents:
        na, decs = advance(a, grid, cfg, choose)
        out.append(na)
        for labels, probs, idx in decs:
            log.append(BranchDecision(a.id, stamp, labels, probs, idx))
    return out, log


def spawn_points(grid: SemanticGrid, class_id: int):
    """Map-border entry points ``(x, y, heading)`` for a class."""
    net = route_network(grid, class_id)
    W, H = grid.width, grid.height
    pts = []
    for y, ln in sorted(net.hlines.items()):
        hs = [(1, 0), (-1, 0)] if class_id == PEDESTRIAN else [net.lane_heading[("h", y)]]
        for hd in hs:
            pts.append((0.5 if hd[0] > 0 else W - 0.5, y, hd))
    for x, ln in sorted(net.vlines.items()):
        hs = [(0, 1), (0, -1)] if class_id == PEDESTRIAN else [net.lane_heading[("v", x)]]
        for hd in hs:
            if hd[1] > 0 and ln.lo == -INF:
                pts.append((x, 0.5, hd))
            elif hd[1] < 0 and ln.hi == INF:
                pts.append((x, H - 0.5, hd))
    return pts


def random_line_position(grid: SemanticGrid, class_id: int, rng: np.random.Generator):
    """Uniform-ish random legal spawn position on the class's route lines."""
    net = route_network(grid, class_id)
    W, H = grid.width, grid.height
    lines = [("h", k) for k in sorted(net.hlines)] + [("v", k) for k in sorted(net.vlines)]
    wanted = (SIDEWALK, CROSSING) if class_id == PEDESTRIAN else (ROAD,)
    for _ in range(200):
        kind, key = lines[int(rng.integers(len(lines)))]
        ln = net.hlines[key] if kind == "h" else net.vlines[key]
        lim = W if kind == "h" else H
        lo, hi = max(ln.lo, 1.0), min(ln.hi, lim - 1.0)
        if hi <= lo:
            continue
        s = float(rng.uniform(lo, hi))
        if any(abs(s - n) < 0.5 for n in ln.nodes):
            continue
        x, y = (s, key) if kind == "h" else (key, s)
        if grid.label_at(x, y) not in wanted:
            continue
        if class_id == PEDESTRIAN:
            sign = 1 if rng.random() < 0.5 else -1
            hd = (sign, 0) if kind == "h" else (0, sign)
        else:
            hd = net.lane_heading[(kind, key)]
        return x, y, hd
    raise SimulationError("could not find a legal spawn position")
