"""Episode generation, exact future enumeration and emergence events."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import BBox, Egomotion, compose, visible_fraction
from .agents import (Agent, BranchDecision, PolicyConfig, advance, random_line_position,
                     spawn_points, step_agents)
from .maps import (PEDESTRIAN, ROAD_WIDTH, SIDEWALK_WIDTH, MIN_BLOCK, VEHICLE, SemanticGrid,
                   generate_map)


class BranchCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    map_size: int = 96
    frame_size: int = 64
    downsample: int = 4
    length: int = 40
    n_pedestrians: int = 14
    n_vehicles: int = 6
    spawn_ped_rate: float = 0.25
    spawn_veh_rate: float = 0.1
    ped_speed_min: float = 0.8
    ped_speed_max: float = 1.2
    veh_speed_min: float = 1.5
    veh_speed_max: float = 2.0
    ped_size_min: float = 2.5
    ped_size_max: float = 3.5
    veh_length: float = 6.0
    veh_width: float = 3.5
    p_cross: float = 0.4
    p_continue: float = 0.5
    p_wait: float = 0.1
    wait_steps: int = 4
    p_straight: float = 0.5
    p_left: float = 0.25
    p_right: float = 0.25
    ego_offset: float = 6.0
    ego_speed_max: float = 0.5
    ego_zoom_min: float = 1.0
    ego_zoom_max: float = 1.008
    ego_rot_max: float = 0.004
    obs_noise_pos: float = 0.0
    obs_noise_size: float = 0.0
    visibility: float = 0.25
    branch_cap: int = 64

    @property
    def policy(self) -> PolicyConfig:
        return PolicyConfig(self.p_cross, self.p_continue, self.p_wait, self.wait_steps,
                            self.p_straight, self.p_left, self.p_right,
                            self.ped_speed_max, self.veh_speed_max)


def outcome_bound(cfg: WorldConfig, horizon: int) -> int:
    """Upper bound on enumerated outcomes of one agent over ``horizon`` steps."""
    bound = 1
    gaps = {PEDESTRIAN: (cfg.ped_speed_max, ROAD_WIDTH + SIDEWALK_WIDTH,
                         sum(p > 0 for p in (cfg.p_cross, cfg.p_continue, cfg.p_wait))),
            VEHICLE: (cfg.veh_speed_max, ROAD_WIDTH + 2 * SIDEWALK_WIDTH + MIN_BLOCK,
                      sum(p > 0 for p in (cfg.p_straight, cfg.p_left, cfg.p_right)))}
    for speed, gap, n_opt in gaps.values():
        depth = int(math.floor(horizon * speed / gap)) + 1
        bound = max(bound, max(n_opt, 1) ** depth)
    return bound


def camera_poses(cfg: WorldConfig, seed: int) -> list[Egomotion]:
    """World -> frame similarity per step for a smoothly moving observer."""
    rng = np.random.default_rng([seed, 0xCA3E])
    M, F = cfg.map_size, cfg.frame_size
    c0 = np.array([M / 2, M / 2]) + rng.uniform(-cfg.ego_offset, cfg.ego_offset, size=2)
    ang = rng.uniform(-math.pi, math.pi)
    speed = rng.uniform(0, cfg.ego_speed_max)
    vel = speed * np.array([math.cos(ang), math.sin(ang)])
    zoom = rng.uniform(cfg.ego_zoom_min, cfg.ego_zoom_max)
    rot = rng.uniform(-cfg.ego_rot_max, cfg.ego_rot_max)
    m = np.array([F / 2, F / 2])
    poses = []
    for t in range(cfg.length):
        c = c0 + t * vel
        s = zoom ** t
        A = Egomotion(0, 0, math.remainder(rot * t, 2 * math.pi), s).matrix()
        poses.append(Egomotion.from_affine(A, m - A @ c))
    return poses


def world_to_frame(pose: Egomotion, box: BBox) -> BBox:
    p = pose.apply_points(np.array([box.x, box.y]))
    return BBox(float(p[0]), float(p[1]), box.w * pose.scale, box.h * pose.scale)


@dataclass
class Frame:
    index: int
    full: SemanticGrid
    static: SemanticGrid
    boxes: dict[int, dict[int, BBox]]     # class_id -> {agent_id: observed box}
    egomotion: Egomotion | None           # to the next frame


@dataclass
class Episode:
    seed: int
    config: WorldConfig
    world: SemanticGrid
    poses: list[Egomotion]
    states: list[dict[int, Agent]]        # per step: agent_id -> world-frame agent
    observed: list[dict[int, BBox]]       # per step: agent_id -> observed frame box
    branch_log: list[BranchDecision]
    _frames: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def length(self) -> int:
        return len(self.states)

    def egomotion(self, t: int, t2: int) -> Egomotion:
        """Image-plane transform from frame ``t`` to frame ``t2``."""
        return compose(self.poses[t].inverse(), self.poses[t2])

    def true_box(self, agent_id: int, t: int) -> BBox:
        return world_to_frame(self.poses[t], self.states[t][agent_id].box)

    def visible(self, agent_id: int, t: int) -> float:
        b = self.observed[t].get(agent_id)
        if b is None:
            return 0.0
        F = self.config.frame_size
        return visible_fraction(b, F, F)

    def frame(self, t: int) -> Frame:
        fr = self._frames.get(t)
        if fr is None:
            from .render import render_frame
            fr = render_frame(self, t)
            self._frames[t] = fr
        return fr

    @property
    def frames(self) -> list[Frame]:
        return [self.frame(t) for t in range(self.length)]


def _observe(cfg: WorldConfig, seed: int, t: int, pose: Egomotion, agents: dict[int, Agent]):
    out = {}
    for aid, a in agents.items():
        b = world_to_frame(pose, a.box)
        if cfg.obs_noise_pos > 0 or cfg.obs_noise_size > 0:
            r = np.random.default_rng([seed, t, aid, 0x0B5])
            n = r.normal(size=4)
            b = BBox(b.x + cfg.obs_noise_pos * n[0], b.y + cfg.obs_noise_pos * n[1],
                     max(b.w + cfg.obs_noise_size * n[2], 0.25 * b.w),
                     max(b.h + cfg.obs_noise_size * n[3], 0.25 * b.h))
        out[aid] = b
    return out


def _new_agent(cfg, rng, aid, class_id, x, y, heading):
    if class_id == PEDESTRIAN:
        speed = float(rng.uniform(cfg.ped_speed_min, cfg.ped_speed_max))
        size = (float(rng.uniform(cfg.ped_size_min, cfg.ped_size_max)),
                float(rng.uniform(cfg.ped_size_min, cfg.ped_size_max)))
    else:
        speed = float(rng.uniform(cfg.veh_speed_min, cfg.veh_speed_max))
        size = (cfg.veh_length, cfg.veh_width)
    return Agent(aid, class_id, float(x), float(y), tuple(heading), speed, size, rng_stream=aid)


def step_seed(seed: int, t: int) -> tuple[int, int]:
    return (seed, t)


def generate_episode(seed: int, cfg: WorldConfig | None = None) -> Episode:
    """Simulate one episode; a pure function of ``(seed, cfg)``."""
    cfg = cfg or WorldConfig()
    world = generate_map(seed, cfg.map_size, cfg.map_size)
    poses = camera_poses(cfg, seed)
    rng = np.random.default_rng([seed, 0xA6E7])
    pol = cfg.policy
    agents: dict[int, Agent] = {}
    next_id = 0
    for class_id, n in ((PEDESTRIAN, cfg.n_pedestrians), (VEHICLE, cfg.n_vehicles)):
        for _ in range(n):
            x, y, hd = random_line_position(world, class_id, rng)
            agents[next_id] = _new_agent(cfg, rng, next_id, class_id, x, y, hd)
            next_id += 1
    entries = {c: spawn_points(world, c) for c in (PEDESTRIAN, VEHICLE)}
    states = [dict(agents)]
    observed = [_observe(cfg, seed, 0, poses[0], agents)]
    log: list[BranchDecision] = []
    M = cfg.map_size
    for t in range(1, cfg.length):
        moved, decs = step_agents(world, list(agents.values()), step_seed(seed, t), pol, step=t)
        log.extend(decs)
        agents = {a.id: a for a in moved if -4 <= a.x <= M + 4 and -4 <= a.y <= M + 4}
        for class_id, rate in ((PEDESTRIAN, cfg.spawn_ped_rate), (VEHICLE, cfg.spawn_veh_rate)):
            if entries[class_id] and rng.random() < rate:
                x, y, hd = entries[class_id][int(rng.integers(len(entries[class_id])))]
                agents[next_id] = _new_agent(cfg, rng, next_id, class_id, x, y, hd)
                next_id += 1
        states.append(dict(agents))
        observed.append(_observe(cfg, seed, t, poses[t], agents))
    return Episode(seed, cfg, world, poses, states, observed, log)


@dataclass
class FutureDistribution:
    agent_id: int
    outcomes: list[tuple[BBox, float]]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p for _, p in self.outcomes])

    def boxes(self) -> np.ndarray:
        return np.array([b.as_array() for b, _ in self.outcomes])


class _Fork(Exception):
    def __init__(self, probs):
        self.probs = probs


def _scripted(prefix):
    it = iter(prefix)

    def choose(agent, labels, probs):
        try:
            return next(it)
        except StopIteration:
            raise _Fork(probs) from None

    return choose


def rollout(world: SemanticGrid, agent: Agent, cfg: PolicyConfig, steps: int, choose) -> Agent:
    for _ in range(steps):
        agent, _ = advance(agent, world, cfg, choose)
    return agent


def enumerate_future(episode: Episode, agent_id: int, t: int, dt: int,
                     require_visible: bool = True) -> FutureDistribution:
    """Exhaustively expand every branch decision of one agent in ``(t, t+dt]``.

    Outcome boxes are noise-free and expressed in the frame of ``t + dt``.
    """
    if t < 0 or t + dt >= episode.length:
        raise ValueError(f"window ({t}, {t + dt}] outside episode of length {episode.length}")
    start = episode.states[t].get(agent_id)
    if start is None:
        raise ValueError(f"agent {agent_id} not present at step {t}")
    if require_visible and episode.visible(agent_id, t) < episode.config.visibility:
        raise ValueError(f"agent {agent_id} not visible at step {t}")
    cfg = episode.config
    pol = cfg.policy
    pending = [((), 1.0)]
    finals: list[tuple[Agent, float]] = []
    while pending:
        prefix, p = pending.pop(0)
        try:
            end = rollout(episode.world, start, pol, dt, _scripted(prefix))
            finals.append((end, p))
        except _Fork as fork:
            for i, q in enumerate(fork.probs):
                pending.append((prefix + (i,), p * q))
        if len(finals) + len(pending) > cfg.branch_cap:
            raise BranchCapExceeded(
                f"agent {agent_id}: more than {cfg.branch_cap} outcomes in ({t}, {t + dt}]")
    pose = episode.poses[t + dt]
    merged: list[list] = []
    for a, p in finals:
        b = world_to_frame(pose, a.box)
        for m in merged:
            if np.allclose(m[0].as_array(), b.as_array(), rtol=0, atol=1e-9):
                m[1] += p
                break
        else:
            merged.append([b, p])
    return FutureDistribution(agent_id, [(b, p) for b, p in merged])


def decisions_in_window(episode: Episode, agent_id: int, t: int, dt: int) -> list[BranchDecision]:
    return [d for d in episode.branch_log if d.agent_id == agent_id and t < d.step <= t + dt]


def replay(episode: Episode, agent_id: int, t: int, dt: int) -> BBox:
    """Re-simulate the logged decisions of one agent; noise-free box at ``t + dt``."""
    chosen = [d.chosen for d in decisions_in_window(episode, agent_id, t, dt)]
    end = rollout(episode.world, episode.states[t][agent_id], episode.config.policy, dt,
                  _scripted(chosen))
    return world_to_frame(episode.poses[t + dt], end.box)


def emergence_events(episode: Episode, t: int, dt: int, class_id: int) -> list[BBox]:
    """Observed boxes at ``t + dt`` of agents that become visible during the window."""
    if t < 0 or t + dt >= episode.length:
        raise ValueError("window outside episode")
    thr = episode.config.visibility
    out = []
    for aid, a in sorted(episode.states[t + dt].items()):
        if a.class_id != class_id:
            continue
        if episode.visible(aid, t + dt) >= thr and episode.visible(aid, t) < thr:
            out.append(episode.observed[t + dt][aid])
    return out
