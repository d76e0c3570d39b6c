"""Reachability prior (RPN), reachability transfer (RTN), future localization
(FLN) and emergence prediction (EPN) networks with their training loops."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ewta import EwtaSchedule, ewta_loss_and_grad, index_l1_and_grad, stage_for_step
from ..geometry import BBox
from ..mixture import GaussianMixture, denormalise, head_nll_and_grad, head_to_mixture
from ..tinynet import (AdamState, Network, TrainingDivergence, adam_step, backward, forward,
                       init_network)
from ..worldsim.episode import emergence_events
from ..worldsim.maps import PEDESTRIAN
from .features import (FrameTable, agent_masks, build_frame_table, cv_anchor, frame_anchor,
                       frame_scale, from_heading_frame, heading_index, local_patch,
                       observed_track, slot_centres, slot_windows, to_heading_frame,
                       track_vector, visible_through)

RPN_SCALE = np.array([8.0, 8.0, 2.0, 2.0])
RTN_SCALE = np.array([8.0, 8.0, 2.0, 2.0])
FLN_SCALE = np.array([16.0, 16.0, 2.0, 2.0])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 32
    hidden: int = 256
    layers: int = 3
    schedule: EwtaSchedule = EwtaSchedule()
    fit_steps: int = 2000
    fit_hidden: int = 500
    fit_dropout: float = 0.2
    rtn_steps: int = 4000
    log_every: int = 50

    @property
    def n(self) -> int:
        return self.schedule.n

    def sampler_sizes(self, n_in: int, n_out: int) -> list[int]:
        return [n_in] + [self.hidden] * self.layers + [n_out]


def _dropout_seed(seed: int, step: int) -> int:
    return (seed * 1_000_003 + step) % (2 ** 63)


def optimise(net: Network, n_items: int, steps: int, tc: TrainConfig, seed: int, step_fn,
             stage=None, name: str = "net") -> list[tuple[int, int, float]]:
    """Adam over shuffled mini-batches.

    ``step_fn(step, idx)`` returns ``(X, loss_grad)`` where
    ``loss_grad(out) -> (loss, d loss / d out)``.  Returns the training log
    ``[(step, k, mean loss), ...]``; ``stage(step)`` supplies ``k``.
    """
    if n_items <= 0:
        raise ValueError(f"{name}: empty training set")
    rng = np.random.default_rng([seed, 0xBA7C])
    batch = min(tc.batch, n_items)
    perm, pos = rng.permutation(n_items), 0
    state = AdamState.fresh(net)
    log, acc = [], []
    for step in range(steps):
        if pos + batch > n_items:
            perm, pos = rng.permutation(n_items), 0
        idx = np.sort(perm[pos:pos + batch])
        pos += batch
        k = stage(step) if stage else 0
        X, loss_grad = step_fn(step, idx)
        out = forward(net, X, "train", seed=_dropout_seed(seed, step))
        loss, g = loss_grad(out)
        if not np.isfinite(loss):
            raise TrainingDivergence(f"{name}: loss {loss} at step {step} (k={k})")
        adam_step(net, backward(net, g), state, tc.lr)
        acc.append(loss)
        boundary = stage is not None and step + 1 < steps and stage(step + 1) != k
        if (step + 1) % tc.log_every == 0 or step == steps - 1 or boundary:
            log.append((step, k, float(np.mean(acc))))
            acc = []
    return log


def _ewta_step(H_of_out, G, valid, k):
    def loss_grad(out):
        H, back = H_of_out(out)
        loss, gH = ewta_loss_and_grad(H, G, k, valid)
        return loss, back(gH)
    return loss_grad


def _pad_targets(targets) -> tuple[np.ndarray, np.ndarray]:
    M = max(len(t) for t in targets)
    G = np.zeros((len(targets), M, 4))
    valid = np.zeros((len(targets), M), bool)
    for i, t in enumerate(targets):
        G[i, :len(t)] = t
        valid[i, :len(t)] = True
    return G, valid


# reachability prior ------------------------------------------------------

@dataclass
class RpnDataset:
    keys: list[tuple[int, int]]
    static: np.ndarray                 # (S, D) float32
    targets: list[np.ndarray]          # per sample (m, 4)
    frame_size: int
    class_id: int


def visible_boxes(ep, t: int, class_id: int) -> list[BBox]:
    boxes = ep.frame(t).boxes.get(class_id, {})
    return [b for aid, b in sorted(boxes.items()) if ep.visible(aid, t) >= ep.config.visibility]


def build_rpn_dataset(episodes, class_id: int, t_stride: int = 1) -> RpnDataset:
    """One sample per frame holding at least one visible agent of ``class_id``."""
    if not episodes:
        raise ValueError("no episodes")
    keys, targets = [], []
    for ei, ep in enumerate(episodes):
        for t in range(0, ep.length, t_stride):
            boxes = visible_boxes(ep, t, class_id)
            if boxes:
                keys.append((ei, t))
                targets.append(np.array([b.as_array() for b in boxes]))
    table = build_frame_table(episodes, keys, 0)
    return RpnDataset(keys, table.static, targets, episodes[0].config.frame_size, class_id)


@dataclass
class RpnModel:
    """One shared network over N slots.

    Slot ``j`` sits at a fixed point of a regular grid over the frame and
    regresses its box offset from the static-grid window around that point.
    """

    net: Network
    class_id: int
    frame_size: int
    n: int
    log: list = field(default_factory=list)

    def anchors(self) -> np.ndarray:
        w, h = frame_anchor(self.frame_size, self.class_id)[2:]
        c = slot_centres(self.n, self.frame_size)
        return np.column_stack([c, np.full(self.n, w), np.full(self.n, h)])

    def inputs(self, static) -> np.ndarray:
        """Slot rows ``(B * n, D)`` for static-grid encodings ``(B, D_static)``."""
        w = slot_windows(static, self.n, self.frame_size)
        return w.reshape(-1, w.shape[-1])

    def boxes(self, out) -> np.ndarray:
        return self.anchors() + out.reshape(-1, self.n, 4) * RPN_SCALE

    def hypotheses(self, static) -> np.ndarray:
        """``(B, N, 4)`` hypothesis boxes for static-grid encodings ``(B, D)``."""
        return self.boxes(forward(self.net, self.inputs(static), "eval", mc=False))


def train_rpn(dataset: RpnDataset, seed: int, sched: EwtaSchedule | None = None,
              tc: TrainConfig | None = None) -> RpnModel:
    tc = tc or TrainConfig()
    sched = sched or tc.schedule
    N = sched.n
    model = RpnModel(None, dataset.class_id, dataset.frame_size, N)
    n_in = model.inputs(dataset.static[:1]).shape[1]
    model.net = net = init_network(tc.sampler_sizes(n_in, 4), seed)
    G, valid = _pad_targets(dataset.targets)

    def H_of_out(out):
        return model.boxes(out), lambda gH: (gH * RPN_SCALE).reshape(-1, 4)

    def step_fn(step, idx):
        return (model.inputs(dataset.static[idx]),
                _ewta_step(H_of_out, G[idx], valid[idx], stage_for_step(sched, step)))

    model.log = optimise(net, len(dataset.keys), sched.total_steps, tc, seed, step_fn,
                         stage=lambda s: stage_for_step(sched, s), name="rpn")
    return model


def rtn_targets(rpn: RpnModel, episode, t: int, dt: int) -> np.ndarray:
    """RPN hypotheses on the static grid of frame ``t + dt``: ``(N, 4)``."""
    if t < 0 or t + dt >= episode.length:
        raise ValueError("t + dt outside episode")
    table = build_frame_table([episode], [(0, t + dt)], 0)
    return rpn.hypotheses(table.static)[0]


# reachability transfer ----------------------------------------------------

@dataclass
class RtnModel:
    net: Network
    rpn: RpnModel
    log: list = field(default_factory=list)

    @property
    def class_id(self) -> int:
        return self.rpn.class_id

    @property
    def frame_size(self) -> int:
        return self.rpn.frame_size

    def inputs(self, rpn_boxes, ego_enc, static) -> np.ndarray:
        """Slot rows ``(B * N, D)``: static window, box relative to the slot anchor, egomotion."""
        boxes = np.asarray(rpn_boxes, float)
        B, N = boxes.shape[:2]
        win = slot_windows(static, N, self.frame_size)
        rel = (boxes - self.rpn.anchors()) / RPN_SCALE
        ego = np.repeat(np.asarray(ego_enc, float).reshape(B, 1, -1), N, axis=1)
        return np.concatenate([win, rel, ego], axis=2).reshape(B * N, -1)

    def transfer(self, rpn_boxes, egos, ego_enc, static) -> np.ndarray:
        """Predicted reachability boxes in the future frame: ``(B, N, 4)``.

        Each slot regresses a residual over its current box, since RPN
        slots are tied to frame positions rather than to the map.
        """
        base = np.asarray(rpn_boxes, float)
        out = forward(self.net, self.inputs(base, ego_enc, static), "eval", mc=False)
        return base + out.reshape(base.shape) * RTN_SCALE

    def prior_for(self, table: FrameTable) -> np.ndarray:
        rpn_boxes = self.rpn.hypotheses(table.static)
        return self.transfer(rpn_boxes, table.egos, table.ego, table.static)


@dataclass
class RtnDataset:
    rpn_now: np.ndarray      # (S, N, 4)
    target: np.ndarray       # (S, N, 4)
    egos: list
    ego: np.ndarray          # (S, 4)
    static: np.ndarray       # (S, D)


def build_rtn_dataset(rpn: RpnModel, episodes, horizons=(15, 5), t_stride: int = 1) -> RtnDataset:
    from ..worldsim.render import encode_egomotion
    keys = [(ei, t) for ei, ep in enumerate(episodes) for t in range(ep.length)]
    table = build_frame_table(episodes, keys, 0)
    boxes = rpn.hypotheses(table.static)
    now, tgt, egos, enc, stat = [], [], [], [], []
    for dt in horizons:
        for ei, ep in enumerate(episodes):
            for t in range(0, ep.length - dt, t_stride):
                i, j = table.index[(ei, t)], table.index[(ei, t + dt)]
                e = ep.egomotion(t, t + dt)
                now.append(boxes[i])
                tgt.append(boxes[j])
                egos.append(e)
                enc.append(encode_egomotion(e))
                stat.append(i)
    return RtnDataset(np.array(now), np.array(tgt), egos, np.array(enc), table.static[stat])


def train_rtn(rpn: RpnModel, episodes, seed: int, tc: TrainConfig | None = None,
              horizons=(15, 5), dataset: RtnDataset | None = None) -> RtnModel:
    """Self-supervised regression onto RPN outputs of the future static grid (index-matched L1)."""
    tc = tc or TrainConfig()
    ds = dataset or build_rtn_dataset(rpn, episodes, horizons)
    N = rpn.n
    model = RtnModel(None, rpn)
    n_in = model.inputs(ds.rpn_now[:1], ds.ego[:1], ds.static[:1]).shape[1]
    model.net = net = init_network(tc.sampler_sizes(n_in, 4), seed)

    def step_fn(step, idx):
        X = model.inputs(ds.rpn_now[idx], ds.ego[idx], ds.static[idx])

        def loss_grad(out):
            H = ds.rpn_now[idx] + out.reshape(len(idx), N, 4) * RTN_SCALE
            loss, gH = index_l1_and_grad(H, ds.target[idx])
            return loss, (gH * RTN_SCALE).reshape(-1, 4)
        return X, loss_grad

    model.log = optimise(net, len(ds.egos), tc.rtn_steps, tc, seed, step_fn, name="rtn")
    return model


# future localization / emergence ----------------------------------------

@dataclass
class AgentDataset:
    """Agent-centred samples: one per (episode, t, agent)."""

    table: FrameTable
    frame: np.ndarray          # (n,) row into table
    masks: np.ndarray          # (n, observe * cells) uint8
    track: np.ndarray          # (n, 4 * observe)
    patch: np.ndarray          # (n, P) agent-centred static patch, float32
    rot: np.ndarray            # (n,) heading-frame rotation index
    anchor: np.ndarray         # (n, 4) constant-velocity anchor in frame t + horizon
    target: np.ndarray         # (n, 4) realized observed box at t + horizon (nan if unseen)
    meta: list                 # (episode index, t, agent id)
    observe: int
    skipped: int = 0

    def __len__(self):
        return len(self.meta)


def agent_sample_keys(episodes, class_id: int, observe: int, horizon: int, t_stride: int = 1):
    """Candidate ``(ei, t, aid)`` plus the count skipped for poor visibility."""
    keys, skipped = [], 0
    for ei, ep in enumerate(episodes):
        for t in range(observe, ep.length - horizon, t_stride):
            for aid, a in sorted(ep.states[t].items()):
                if a.class_id != class_id or aid not in ep.states[t + horizon]:
                    continue
                if not all(aid in ep.observed[s] for s in range(t - observe + 1, t + 1)):
                    continue
                if not visible_through(ep, aid, t - observe + 1, t):
                    skipped += 1
                    continue
                keys.append((ei, t, aid))
    return keys, skipped


def build_agent_dataset(episodes, keys, observe: int, horizon: int, skipped: int = 0) -> AgentDataset:
    frames = sorted({(ei, t) for ei, t, _ in keys})
    table = build_frame_table(episodes, frames, horizon)
    fr, masks, tracks, patches, rots, anchors, targets = [], [], [], [], [], [], []
    for ei, t, aid in keys:
        ep = episodes[ei]
        trk = observed_track(ep, aid, t, observe)
        fr.append(table.index[(ei, t)])
        masks.append(agent_masks(ep, aid, t, observe))
        r = heading_index(trk)
        rots.append(r)
        tracks.append(track_vector(trk, ep.config.frame_size, r))
        patches.append(local_patch(ep, t, trk[-1, :2], r))
        anchors.append(cv_anchor(trk, horizon, ep.egomotion(t, t + horizon)))
        g = ep.observed[t + horizon].get(aid)
        targets.append(g.as_array() if g is not None else np.full(4, np.nan))
    return AgentDataset(table, np.array(fr, int), np.array(masks, np.uint8).reshape(len(keys), -1),
                        np.array(tracks).reshape(len(keys), -1),
                        np.array(patches, np.float32).reshape(len(keys), -1),
                        np.array(rots, int),
                        np.array(anchors).reshape(-1, 4),
                        np.array(targets).reshape(-1, 4), list(keys), observe, skipped)


def build_fln_dataset(episodes, class_id: int = PEDESTRIAN, observe: int = 5, horizon: int = 15,
                      t_stride: int = 1) -> AgentDataset:
    keys, skipped = agent_sample_keys(episodes, class_id, observe, horizon, t_stride)
    return build_agent_dataset(episodes, keys, observe, horizon, skipped)


@dataclass
class EventDataset:
    """Frames with at least one emergence event in ``(t, t + horizon]``."""

    table: FrameTable
    targets: list[np.ndarray]
    meta: list

    def __len__(self):
        return len(self.meta)


def build_epn_dataset(episodes, class_id: int = PEDESTRIAN, horizon: int = 5, observe: int = 1,
                      t_stride: int = 1) -> EventDataset:
    keys, targets = [], []
    for ei, ep in enumerate(episodes):
        for t in range(observe, ep.length - horizon, t_stride):
            ev = emergence_events(ep, t, horizon, class_id)
            if ev:
                keys.append((ei, t))
                targets.append(np.array([b.as_array() for b in ev]))
    if not keys:
        raise ValueError("no emergence events in the episodes; generate more episodes or "
                         "increase world.ego_speed_max / world.spawn_ped_rate")
    return EventDataset(build_frame_table(episodes, keys, horizon), targets, keys)


@dataclass
class SceneInput:
    """Prepared feature rows with their output anchors.

    Network outputs are offsets from ``anchor`` in the heading frame given
    by ``rot`` (all zero for frame-level predictors).
    """

    X: np.ndarray        # (B, D)
    anchor: np.ndarray   # (B, 4)
    rot: np.ndarray | None = None

    def __post_init__(self):
        if self.rot is None:
            self.rot = np.zeros(len(self.anchor), dtype=int)

    def row(self, i: int) -> "SceneInput":
        return SceneInput(self.X[i:i + 1], self.anchor[i:i + 1], self.rot[i:i + 1])

    def to_boxes(self, offsets) -> np.ndarray:
        """Scaled heading-frame offsets ``(B, ..., 4)`` to frame boxes."""
        off = np.asarray(offsets, dtype=float)
        extra = (1,) * (off.ndim - 2)
        rot = self.rot.reshape(-1, *extra)
        return self.anchor.reshape(len(self.anchor), *extra, 4) + from_heading_frame(off, rot)

    def to_offsets(self, boxes) -> np.ndarray:
        """Inverse of :meth:`to_boxes` for one box per row."""
        return to_heading_frame(np.asarray(boxes, float) - self.anchor, self.rot)


@dataclass
class FuturePredictor:
    """Sampling head plus fitting head over a shared feature layout.

    ``kind`` is ``"fln"`` (agent-conditioned) or ``"epn"`` (emergence).  A
    Bayesian predictor has a single-Gaussian sampling net run with dropout
    at inference and no fitting head.
    """

    kind: str
    sampler: Network
    fitter: Network | None
    class_id: int
    observe: int
    horizon: int
    K: int
    frame_size: int
    with_prior: bool
    rtn: RtnModel | None
    bayesian: bool = False
    log: list = field(default_factory=list)
    fit_log: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.sampler.sizes[-1] // 4 if not self.bayesian else 1

    @property
    def scale(self) -> np.ndarray:
        return FLN_SCALE if self.kind == "fln" else frame_scale(self.frame_size)

    def ensure_prior(self, table: FrameTable):
        if self.with_prior and table.prior is None:
            table.prior = self.rtn.prior_for(table)

    def features(self, ds, idx) -> SceneInput:
        idx = np.asarray(idx)
        if self.kind == "fln":
            f = ds.frame[idx]
            anchor = ds.anchor[idx]
            rot = ds.rot[idx]
            parts = [ds.table.grid[f].astype(float), ds.masks[idx].astype(float),
                     ds.table.ego[f], ds.track[idx], ds.patch[idx].astype(float)]
        else:
            f = idx
            anchor = np.tile(frame_anchor(self.frame_size, self.class_id), (len(idx), 1))
            rot = np.zeros(len(idx), dtype=int)
            parts = [ds.table.grid[f].astype(float), ds.table.ego[f]]
        if self.with_prior:
            pr = to_heading_frame(ds.table.prior[f] - anchor[:, None, :], rot[:, None]) / self.scale
            parts.append(pr.reshape(len(idx), -1))
        return SceneInput(np.hstack(parts), anchor, rot)

    def raw_hypotheses(self, X) -> np.ndarray:
        return forward(self.sampler, X, "eval", mc=False)

    def hypotheses(self, inp: SceneInput) -> np.ndarray:
        out = self.raw_hypotheses(inp.X)
        return inp.to_boxes(out.reshape(len(out), -1, 4) * self.scale)

    def mixtures(self, inp: SceneInput) -> list[GaussianMixture]:
        raw = forward(self.fitter, self.raw_hypotheses(inp.X), "eval", mc=False)
        out = []
        for i, r in enumerate(raw):
            m = denormalise(head_to_mixture(r, self.K), np.zeros(4), self.scale)
            mu = inp.row(i).to_boxes(m.mu[None])[0]
            sigma = m.sigma[:, [1, 0, 3, 2]] if inp.rot[i] % 2 else m.sigma
            out.append(GaussianMixture(m.pi, mu, sigma))
        return out

    def mc_samples(self, inp: SceneInput, n: int = 20, seed: int = 0) -> np.ndarray:
        """``n`` dropout passes over the first row of ``inp``: ``(n, 4)`` boxes."""
        X = np.repeat(inp.X[:1], n, axis=0)
        out = forward(self.sampler, X, "eval", seed=seed, mc=True)
        return inp.row(0).to_boxes(out[None, :, 1:5] * self.scale)[0]


def predict(model: FuturePredictor, inputs: SceneInput):
    """Hypotheses and fitted mixture for the first row of ``inputs``."""
    if model.bayesian:
        raise ValueError("use baselines.bayesian_predict for Bayesian models")
    if inputs.X.shape[-1] != model.sampler.sizes[0]:
        raise ValueError(f"input width {inputs.X.shape[-1]} != model input {model.sampler.sizes[0]}")
    row = inputs.row(0)
    hyps = [BBox.from_array(b) for b in model.hypotheses(row)[0]]
    return hyps, model.mixtures(row)[0]


def _feature_width(ds, model: FuturePredictor) -> int:
    return model.features(ds, [0]).X.shape[1]


def _targets_of(ds, kind):
    if kind == "fln":
        return [t[None] for t in ds.target]
    return ds.targets


def _train_two_stage(model: FuturePredictor, ds, seed: int, tc: TrainConfig):
    model.ensure_prior(ds.table)
    N = tc.n
    sched = tc.schedule
    width = _feature_width(ds, model)
    model.sampler = init_network(tc.sampler_sizes(width, 4 * N), seed)
    G, valid = _pad_targets(_targets_of(ds, model.kind))
    sc = model.scale

    def step_fn(step, idx):
        inp = model.features(ds, idx)

        def H_of_out(out):
            return (inp.to_boxes(out.reshape(len(out), N, 4) * sc),
                    lambda gH: (to_heading_frame(gH, inp.rot[:, None]) * sc).reshape(len(out), -1))
        return inp.X, _ewta_step(H_of_out, G[idx], valid[idx], stage_for_step(sched, step))

    model.log = optimise(model.sampler, len(ds), sched.total_steps, tc, seed, step_fn,
                         stage=lambda s: stage_for_step(sched, s), name=model.kind)
    # fitting head on frozen hypotheses, one row per (sample, target)
    inp = _chunked_features(model, ds)
    Z = model.raw_hypotheses(inp.X)
    rows, tg = [], []
    for i, t in enumerate(_targets_of(ds, model.kind)):
        for g in t:
            rows.append(i)
            tg.append(inp.row(i).to_offsets(g[None])[0] / sc)
    rows, tg = np.array(rows), np.array(tg)
    model.fitter = init_network([4 * N, tc.fit_hidden, tc.fit_hidden, 9 * model.K], seed + 1,
                                dropout=tc.fit_dropout)

    def fit_step(step, idx):
        def loss_grad(out):
            v, g = head_nll_and_grad(out, tg[idx], model.K)
            return float(v.mean()), g
        return Z[rows[idx]], loss_grad

    model.fit_log = optimise(model.fitter, len(rows), tc.fit_steps, tc, seed + 1, fit_step,
                             name=f"{model.kind}-fit")
    return model


def _chunked_features(model, ds, chunk: int = 512) -> SceneInput:
    parts = [model.features(ds, np.arange(i, min(i + chunk, len(ds))))
             for i in range(0, len(ds), chunk)]
    return SceneInput(np.vstack([p.X for p in parts]), np.vstack([p.anchor for p in parts]),
                      np.concatenate([p.rot for p in parts]))


def train_fln(rtn: RtnModel | None, dataset: AgentDataset, seed: int, K: int = 4,
              tc: TrainConfig | None = None, with_prior: bool = True, horizon: int = 15) -> FuturePredictor:
    """EWTA sampling head on agent features, then an NLL fitting head (``K`` components)."""
    tc = tc or TrainConfig()
    if with_prior and rtn is None:
        raise ValueError("train_fln with prior inputs requires: rtn")
    class_id = rtn.class_id if rtn is not None else PEDESTRIAN
    model = FuturePredictor("fln", None, None, class_id, dataset.observe, horizon, K,
                            dataset.table.frame_size, with_prior, rtn)
    return _train_two_stage(model, dataset, seed, tc)


def train_epn(rtn: RtnModel | None, dataset: EventDataset, seed: int, K: int = 8,
              tc: TrainConfig | None = None, with_prior: bool = True, horizon: int = 5) -> FuturePredictor:
    tc = tc or TrainConfig()
    if with_prior and rtn is None:
        raise ValueError("train_epn with prior inputs requires: rtn")
    if len(dataset) == 0:
        raise ValueError("no emergence events in dataset")
    class_id = rtn.class_id if rtn is not None else PEDESTRIAN
    model = FuturePredictor("epn", None, None, class_id, 0, horizon, K, dataset.table.frame_size,
                            with_prior, rtn)
    return _train_two_stage(model, dataset, seed, tc)


def train_bayesian(rtn: RtnModel | None, dataset: AgentDataset, seed: int,
                   tc: TrainConfig | None = None, dropout: float = 0.2, K: int = 4,
                   with_prior: bool = True, horizon: int = 15) -> FuturePredictor:
    """FLN-input network with dropout on every hidden layer and a Gaussian NLL head."""
    tc = tc or TrainConfig()
    class_id = rtn.class_id if rtn is not None else PEDESTRIAN
    model = FuturePredictor("fln", None, None, class_id, dataset.observe, horizon, K,
                            dataset.table.frame_size, with_prior, rtn, bayesian=True)
    model.ensure_prior(dataset.table)
    width = _feature_width(dataset, model)
    model.sampler = init_network(tc.sampler_sizes(width, 9), seed, dropout=dropout, bayesian=True)
    sc = model.scale

    def step_fn(step, idx):
        inp = model.features(dataset, idx)
        tg = inp.to_offsets(dataset.target[idx]) / sc

        def loss_grad(out):
            v, g = head_nll_and_grad(out, tg, 1)
            return float(v.mean()), g
        return inp.X, loss_grad

    model.log = optimise(model.sampler, len(dataset), tc.schedule.total_steps, tc, seed, step_fn,
                         name="bayesian")
    return model
