"""MPLAB-EP v1 episode files: a header line, then one JSON object per line.

Line 2 is the episode record (seed, world config, static world map, camera
poses).  Every following line is a frame record holding the frame index,
the run-length-encoded full frame grid, agent states, observed boxes, the
egomotion to the next frame and the branch decisions taken on that step.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields
from pathlib import Path

from ..geometry import BBox, Egomotion
from .agents import Agent, BranchDecision, Plan
from .episode import Episode, WorldConfig
from .maps import SemanticGrid, generate_layout, rle_decode, rle_encode

HEADER = "MPLAB-EP v1"


class EpisodeFormatError(ValueError):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _agent_to_dict(a: Agent) -> dict:
    d = asdict(a)
    d["heading"] = list(a.heading)
    d["size"] = list(a.size)
    return d


def _agent_from_dict(d: dict) -> Agent:
    plan = d.get("plan")
    if plan is not None:
        plan = Plan(tuple(plan["junction"]),
                    None if plan["turn_at"] is None else tuple(plan["turn_at"]),
                    None if plan["heading"] is None else tuple(plan["heading"]))
    return Agent(int(d["id"]), int(d["class_id"]), float(d["x"]), float(d["y"]),
                 tuple(d["heading"]), float(d["speed"]), tuple(d["size"]),
                 d["policy_state"], int(d["rng_stream"]), plan,
                 None if d["pending"] is None else tuple(d["pending"]), int(d["wait_left"]))


def episode_lines(ep: Episode) -> list[str]:
    lines = [HEADER]
    lines.append(_dumps({
        "kind": "episode", "seed": ep.seed, "length": ep.length,
        "config": asdict(ep.config),
        "world": {"width": ep.world.width, "height": ep.world.height,
                  "rle": rle_encode(ep.world.labels)},
        "poses": [list(p.as_array()) for p in ep.poses],
    }))
    by_step: dict[int, list] = {}
    for d in ep.branch_log:
        by_step.setdefault(d.step, []).append(d.to_dict())
    for t in range(ep.length):
        fr = ep.frame(t)
        lines.append(_dumps({
            "kind": "frame", "frame": t,
            "grid": rle_encode(fr.full.labels),
            "agents": [_agent_to_dict(a) for _, a in sorted(ep.states[t].items())],
            "observed": [[aid, list(b.as_array())] for aid, b in sorted(ep.observed[t].items())],
            "egomotion": None if fr.egomotion is None else list(fr.egomotion.as_array()),
            "branches": by_step.get(t, []),
        }))
    return lines


def write_episode(ep: Episode, path) -> None:
    Path(path).write_text("\n".join(episode_lines(ep)) + "\n", encoding="utf-8")


def read_episode(path) -> Episode:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != HEADER:
        raise EpisodeFormatError(f"{path}: missing '{HEADER}' header")
    try:
        recs = [json.loads(s) for s in text[1:] if s.strip()]
    except json.JSONDecodeError as exc:
        raise EpisodeFormatError(f"{path}: {exc}") from exc
    if not recs or recs[0].get("kind") != "episode":
        raise EpisodeFormatError(f"{path}: first record must describe the episode")
    meta, frames = recs[0], recs[1:]
    known = {f.name for f in fields(WorldConfig)}
    cfg = WorldConfig(**{k: v for k, v in meta["config"].items() if k in known})
    w = meta["world"]
    layout = generate_layout(meta["seed"], w["width"], w["height"])
    world = SemanticGrid(w["width"], w["height"], rle_decode(w["rle"], w["width"], w["height"]),
                         layout)
    poses = [Egomotion(*p) for p in meta["poses"]]
    if len(frames) != meta["length"]:
        raise EpisodeFormatError(f"{path}: expected {meta['length']} frames, found {len(frames)}")
    states, observed, log = [], [], []
    for i, fr in enumerate(frames):
        if fr.get("frame") != i:
            raise EpisodeFormatError(f"{path}: frame records out of order at {i}")
        states.append({a["id"]: _agent_from_dict(a) for a in fr["agents"]})
        observed.append({int(aid): BBox(*b) for aid, b in fr["observed"]})
        log.extend(BranchDecision.from_dict(d) for d in fr["branches"])
    return Episode(int(meta["seed"]), cfg, world, poses, states, observed, log)
