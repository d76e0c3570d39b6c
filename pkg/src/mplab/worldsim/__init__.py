"""Deterministic synthetic egocentric traffic world."""

from .agents import (Agent, BranchDecision, PolicyConfig, SimulationError, advance,
                     check_legal, rng_chooser, step_agents)
from .episode import (BranchCapExceeded, Episode, Frame, FutureDistribution, WorldConfig,
                      emergence_events, enumerate_future, generate_episode, outcome_bound,
                      replay)
from .io import read_episode, write_episode
from .maps import (ALL_CLASSES, BUILDING, CLASS_NAMES, CROSSING, OBSTRUCTION, OFF_MAP,
                   PEDESTRIAN, ROAD, SIDEWALK, STATIC_CLASSES, VEHICLE, SemanticGrid,
                   generate_map)
from .render import render_inputs, static_features
