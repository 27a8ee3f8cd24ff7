"""Attention encoder/decoder policy for CVRP construction.

The encoder projects node features into d_h-dimensional embeddings and
refines them with multi-head self-attention layers (skip connections plus
batch normalization). The decoder builds a context from the mean graph
embedding, the last visited node and the remaining capacity, runs one
multi-head glimpse over the nodes, and scores actions with a clipped
single-head layer. Whenever a route closes, the remaining customers plus the
depot are re-encoded as a fresh subproblem.

Both the internal attention normalization and the output distribution can be
softmax or 1.5-entmax, independently.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .sparse import SparseDist, entmax15, tsallis_entropy
from .tensor import MASK_SENTINEL, RunningStats, Value
from .vrp import Instance, NormalizedInstance, Tour, normalize

CAP_EPS = 1e-12  # a demand exactly equal to the remaining capacity is feasible

ACTIVATION_PRESETS = {
    "softmax": ("softmax", "softmax"),
    "entmax-reg": ("entmax15", "softmax"),
    "entmax-both": ("entmax15", "entmax15"),
}


class RunawayDecodeError(RuntimeError):
    """Decoding exceeded its step budget; indicates a masking bug."""


class CheckpointError(RuntimeError):
    """Checkpoint file and model definition disagree."""


@dataclass(frozen=True)
class ModelConfig:
    d_h: int = 128
    n_layers: int = 3
    n_heads: int = 8
    ff_dim: int = 512
    attn_activation: str = "softmax"
    out_activation: str = "softmax"
    clip: float = 10.0

    def __post_init__(self):
        if self.d_h % self.n_heads != 0:
            raise ValueError(f"d_h={self.d_h} not divisible by n_heads={self.n_heads}")
        for name in (self.attn_activation, self.out_activation):
            if name not in ("softmax", "entmax15"):
                raise ValueError(f"unknown activation {name!r}")

    @classmethod
    def from_preset(cls, preset: str, **kw) -> "ModelConfig":
        attn, out = ACTIVATION_PRESETS[preset]
        return cls(attn_activation=attn, out_activation=out, **kw)


class ModelParams:
    """All learnable weights plus batch-norm running statistics."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.values: dict[str, Value] = {}
        self.stats: dict[str, RunningStats] = {}
        rng = np.random.default_rng(seed)
        d, ff = cfg.d_h, cfg.ff_dim

        def weight(name, shape):
            bound = 1.0 / np.sqrt(shape[0])
            self.values[name] = Value(rng.uniform(-bound, bound, shape), requires_grad=True)

        def bias(name, dim):
            self.values[name] = Value(np.zeros(dim), requires_grad=True)

        weight("embed.cust.w", (3, d))
        bias("embed.cust.b", d)
        weight("embed.depot.w", (3, d))
        bias("embed.depot.b", d)
        for l in range(cfg.n_layers):
            for nm in ("wq", "wk", "wv", "wo"):
                weight(f"enc{l}.attn.{nm}", (d, d))
            weight(f"enc{l}.ff.w1", (d, ff))
            bias(f"enc{l}.ff.b1", ff)
            weight(f"enc{l}.ff.w2", (ff, d))
            bias(f"enc{l}.ff.b2", d)
            for bn in ("bn1", "bn2"):
                self.values[f"enc{l}.{bn}.gamma"] = Value(np.ones(d), requires_grad=True)
                self.values[f"enc{l}.{bn}.beta"] = Value(np.zeros(d), requires_grad=True)
                self.stats[f"enc{l}.{bn}"] = RunningStats(d)
        weight("dec.glimpse.wq", (2 * d + 1, d))
        for nm in ("wk", "wv", "wo"):
            weight(f"dec.glimpse.{nm}", (d, d))
        weight("dec.final.wq", (d, d))
        weight("dec.final.wk", (d, d))

    def __getitem__(self, name: str) -> Value:
        return self.values[name]

    def trainable(self):
        return [(name, v) for name, v in sorted(self.values.items())]

    def zero_grad(self):
        for v in self.values.values():
            v.zero_grad()

    def copy(self) -> "ModelParams":
        dup = ModelParams.__new__(ModelParams)
        dup.cfg = self.cfg
        dup.values = {
            k: Value(v.data.copy(), requires_grad=v.requires_grad)
            for k, v in self.values.items()
        }
        dup.stats = {k: s.copy() for k, s in self.stats.items()}
        return dup


@dataclass
class Embeddings:
    """Encoder output over the active subgraph of one instance."""

    node_emb: np.ndarray          # [m, d_h]
    graph_emb: np.ndarray         # [d_h], mean of node_emb
    index_map: np.ndarray         # active position -> original node index; [0] == depot
    nodes_value: Value = None     # graph handles, shape [1, m, d_h]
    graph_value: Value = None     # [1, 1, d_h]


@dataclass
class DecodeState:
    """Rollout state for one instance."""

    visited: np.ndarray           # bool over original nodes 0..n (index 0 unused)
    remaining_cap: float
    last_node: int
    t: int
    routes: list = field(default_factory=list)   # closed routes
    current: list = field(default_factory=list)  # route under construction

    @classmethod
    def initial(cls, n: int) -> "DecodeState":
        return cls(np.zeros(n + 1, dtype=bool), 1.0, 0, 1)

    def all_visited(self) -> bool:
        return bool(self.visited[1:].all())

    def unvisited(self) -> list:
        return [i for i in range(1, len(self.visited)) if not self.visited[i]]

    def partial_tour(self) -> Tour:
        routes = [list(r) for r in self.routes]
        if self.current:
            routes.append(list(self.current))
        return Tour(routes)


def _activation(name: str, v: Value, axis: int = -1) -> Value:
    return T.softmax(v, axis=axis) if name == "softmax" else entmax15(v, axis=axis)


def _affine(x: Value, w: Value, b: Value) -> Value:
    return T.add(T.matmul(x, w), b)


def _split_heads(x: Value, n_heads: int) -> Value:
    """[G, m, d] -> [G, heads, m, d/heads]."""
    g, m, d = x.shape
    return T.swapaxes(T.reshape(x, (g, m, n_heads, d // n_heads)), 1, 2)


def _merge_heads(x: Value) -> Value:
    g, h, m, dk = x.shape
    return T.reshape(T.swapaxes(x, 1, 2), (g, m, h * dk))


def _self_attention(params: ModelParams, h: Value, layer: int) -> Value:
    cfg = params.cfg
    dk = cfg.d_h // cfg.n_heads
    q = _split_heads(T.matmul(h, params[f"enc{layer}.attn.wq"]), cfg.n_heads)
    k = _split_heads(T.matmul(h, params[f"enc{layer}.attn.wk"]), cfg.n_heads)
    v = _split_heads(T.matmul(h, params[f"enc{layer}.attn.wv"]), cfg.n_heads)
    scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dk))
    attn = _activation(cfg.attn_activation, scores, axis=-1)
    return T.matmul(_merge_heads(T.matmul(attn, v)), params[f"enc{layer}.attn.wo"])


def _batch_norm_3d(params: ModelParams, x: Value, key: str, mode: str) -> Value:
    g, m, d = x.shape
    flat = T.batch_norm(
        T.reshape(x, (g * m, d)),
        params[f"{key}.gamma"],
        params[f"{key}.beta"],
        params.stats[key],
        mode,
    )
    return T.reshape(flat, (g, m, d))


def _encode_stack(params: ModelParams, feats: np.ndarray, mode: str) -> tuple[Value, Value]:
    """Encode stacked features [G, m, 3] (row 0 of each is the depot).

    Returns (node embeddings [G, m, d], graph embeddings [G, 1, d])."""
    g, m, _ = feats.shape
    depot = _affine(Value(feats[:, :1, :]), params["embed.depot.w"], params["embed.depot.b"])
    if m > 1:
        cust = _affine(Value(feats[:, 1:, :]), params["embed.cust.w"], params["embed.cust.b"])
        h = T.concat([depot, cust], axis=1)
    else:
        h = depot
    for l in range(params.cfg.n_layers):
        h = _batch_norm_3d(params, T.add(h, _self_attention(params, h, l)), f"enc{l}.bn1", mode)
        ff = _affine(
            T.relu(_affine(h, params[f"enc{l}.ff.w1"], params[f"enc{l}.ff.b1"])),
            params[f"enc{l}.ff.w2"],
            params[f"enc{l}.ff.b2"],
        )
        h = _batch_norm_3d(params, T.add(h, ff), f"enc{l}.bn2", mode)
    return h, T.mean_axis(h, axis=1, keepdims=True)


def _subgraph_features(ninst: NormalizedInstance, active: list) -> np.ndarray:
    """Features [m, 3] = [x, y, normalized demand] for depot + active customers."""
    base = ninst.base
    feats = np.zeros((len(active) + 1, 3))
    feats[0, :2] = base.depot
    for pos, c in enumerate(active, start=1):
        feats[pos, :2] = base.coords[c - 1]
        feats[pos, 2] = ninst.demands_hat[c - 1]
    return feats


def encode(params: ModelParams, ninst: NormalizedInstance, mode: str = "eval",
           active: list | None = None) -> Embeddings:
    """Encode the subgraph of the depot plus `active` customers (default all)."""
    if active is None:
        active = list(range(1, ninst.base.n + 1))
    feats = _subgraph_features(ninst, active)[None, :, :]
    nodes, graph = _encode_stack(params, feats, mode)
    return Embeddings(
        node_emb=nodes.data[0],
        graph_emb=graph.data[0, 0],
        index_map=np.array([0] + list(active)),
        nodes_value=nodes,
        graph_value=graph,
    )


def maybe_reencode(params: ModelParams, ninst: NormalizedInstance, state: DecodeState,
                   emb: Embeddings, mode: str = "eval") -> Embeddings:
    """Re-encode the remaining subproblem after a route closes.

    A depot action with customers left triggers a fresh encode; any other
    action (and the terminal depot) returns `emb` unchanged."""
    if state.t == 1 or state.last_node != 0:
        return emb
    remaining = state.unvisited()
    if not remaining:
        return emb
    return encode(params, ninst, mode, active=remaining)


def _feasibility_mask(state: DecodeState, ninst: NormalizedInstance,
                      index_map: np.ndarray) -> np.ndarray:
    """Additive mask row over active positions (0 feasible, sentinel not)."""
    mask = np.zeros(len(index_map))
    depot_ok = state.all_visited() or (state.t > 1 and state.last_node != 0)
    if not depot_ok:
        mask[0] = MASK_SENTINEL
    for pos in range(1, len(index_map)):
        c = int(index_map[pos])
        if state.visited[c] or ninst.demands_hat[c - 1] > state.remaining_cap + CAP_EPS:
            mask[pos] = MASK_SENTINEL
    return mask


def _decode_scores(params: ModelParams, nodes: Value, graph: Value,
                   last_pos: np.ndarray, caps: np.ndarray, mask: np.ndarray) -> Value:
    """Clipped action scores [A, m] before masking, for stacked rows."""
    cfg = params.cfg
    dk = cfg.d_h // cfg.n_heads
    a, m, d = nodes.shape

    last_emb = T.gather_nodes(nodes, last_pos)                      # [A, 1, d]
    ctx = T.concat([graph, last_emb, Value(caps[:, None, None])], axis=2)

    q = _split_heads(T.matmul(ctx, params["dec.glimpse.wq"]), cfg.n_heads)  # [A,H,1,dk]
    k = _split_heads(T.matmul(nodes, params["dec.glimpse.wk"]), cfg.n_heads)
    v = _split_heads(T.matmul(nodes, params["dec.glimpse.wv"]), cfg.n_heads)
    g_scores = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(dk))
    g_scores = T.add(g_scores, Value(mask[:, None, None, :]))
    attn = _activation(cfg.attn_activation, g_scores, axis=-1)
    hc = T.matmul(_merge_heads(T.matmul(attn, v)), params["dec.glimpse.wo"])  # [A,1,d]

    qf = T.matmul(hc, params["dec.final.wq"])                       # [A, 1, d]
    kf = T.matmul(nodes, params["dec.final.wk"])                    # [A, m, d]
    logits = T.scale(T.matmul(qf, T.swapaxes(kf, -1, -2)), 1.0 / np.sqrt(d))
    return T.reshape(T.scale(T.tanh(logits), cfg.clip), (a, m))


def _decode_probs(params: ModelParams, nodes: Value, graph: Value,
                  last_pos: np.ndarray, caps: np.ndarray,
                  mask: np.ndarray) -> tuple[Value, np.ndarray]:
    scores = _decode_scores(params, nodes, graph, last_pos, caps, mask)
    probs = _activation(params.cfg.out_activation, T.add(scores, Value(mask)), axis=-1)
    # infeasible actions must carry exactly zero probability
    assert not np.any(probs.data[mask < 0.0] != 0.0), "masked action received mass"
    return probs, scores.data


def decode_step(params: ModelParams, emb: Embeddings, state: DecodeState,
                ninst: NormalizedInstance, return_scores: bool = False):
    """Action distribution over the active subgraph for one instance."""
    mask = _feasibility_mask(state, ninst, emb.index_map)[None, :]
    if np.all(mask < 0.0):
        raise T.InfeasibleActionError("no feasible action at decode step")
    last_pos = np.flatnonzero(emb.index_map == state.last_node)
    probs, scores = _decode_probs(
        params, emb.nodes_value, emb.graph_value,
        np.array([int(last_pos[0])]), np.array([state.remaining_cap]), mask,
    )
    alpha = 1.5 if params.cfg.out_activation == "entmax15" else 1.0
    dist = SparseDist(probs.data[0], alpha)
    if return_scores:
        return dist, scores[0]
    return dist


def _element(vec: Value, i: int) -> Value:
    return T.reshape(T.take_rows(vec, np.array([i])), ())


class RolloutResult:
    """Everything one instance produced during a (batched) rollout."""

    __slots__ = ("tour", "logp", "entropy", "trace", "n_decisions",
                 "support_fracs", "emb_records")

    def __init__(self):
        self.tour = None
        self.logp = None
        self.entropy = None
        self.trace = []
        self.n_decisions = 0
        self.support_fracs = []
        self.emb_records = []


class _InstanceRun:
    __slots__ = ("state", "result", "waiting", "finished", "group", "row", "forced")

    def __init__(self, n: int, forced=None):
        self.state = DecodeState.initial(n)
        self.result = RolloutResult()
        self.waiting = False
        self.finished = False
        self.group = None
        self.row = None
        self.forced = list(forced) if forced is not None else None


class _Group:
    """Instances whose active subgraphs share a node count, encoded together."""

    __slots__ = ("members", "nodes", "graph", "index_maps")

    def __init__(self, members, nodes, graph, index_maps):
        self.members = members
        self.nodes = nodes
        self.graph = graph
        self.index_maps = index_maps


def _encode_groups(params, ninsts, runs, members, mode, record):
    """Group unfinished instances by active-subgraph size and encode each group."""
    by_size: dict[int, list[int]] = {}
    for b in members:
        active = runs[b].state.unvisited()
        by_size.setdefault(len(active), []).append(b)
    for size in sorted(by_size):
        idxs = by_size[size]
        feats = np.stack([
            _subgraph_features(ninsts[b], runs[b].state.unvisited()) for b in idxs
        ])
        nodes, graph = _encode_stack(params, feats, mode)
        index_maps = np.stack([
            np.array([0] + runs[b].state.unvisited()) for b in idxs
        ])
        group = _Group(idxs, nodes, graph, index_maps)
        for row, b in enumerate(idxs):
            runs[b].group = group
            runs[b].row = row
            if record:
                runs[b].result.emb_records.append(
                    (list(runs[b].state.unvisited()), nodes.data[row].copy())
                )


def rollout_batch(params: ModelParams, instances: list, mode: str = "sample",
                  rng: np.random.Generator | None = None, bn_mode: str = "eval",
                  forced_actions: list | None = None,
                  record_embeddings: bool = False) -> list:
    """Construct tours for a same-size batch in lock step.

    Each global step, every instance mid-route decodes one action; instances
    whose route just closed are forced to stay at the depot (no probability,
    no gradient) until every open route closes, after which the remaining
    subproblems are re-encoded in one pass. Returns one RolloutResult per
    instance with canonical tours (forced depot padding stripped).
    """
    if mode not in ("sample", "greedy"):
        raise ValueError(f"rollout mode must be sample or greedy, got {mode!r}")
    if mode == "sample" and rng is None and forced_actions is None:
        raise ValueError("sample mode needs an rng")
    sizes = {inst.n for inst in instances}
    if len(sizes) != 1:
        raise ValueError(f"rollout batch must share one instance size, got {sorted(sizes)}")
    n = sizes.pop()
    B = len(instances)
    ninsts = [normalize(inst) for inst in instances]
    runs = [
        _InstanceRun(n, forced_actions[b] if forced_actions is not None else None)
        for b in range(B)
    ]
    out_alpha = 1.5 if params.cfg.out_activation == "entmax15" else 1.0

    _encode_groups(params, ninsts, runs, list(range(B)), bn_mode, record_embeddings)

    step_records = []  # (logprob Value [A], entropy Value [A], acting ids)
    max_decisions = 6 * n + 4
    max_global = B * (2 * n + 2) + 8
    global_steps = 0
    while not all(r.finished for r in runs):
        global_steps += 1
        if global_steps > max_global:
            raise RunawayDecodeError(
                f"batch decoding exceeded {max_global} global steps (n={n}, B={B})"
            )
        unfinished = [b for b in range(B) if not runs[b].finished]
        if all(runs[b].waiting for b in unfinished):
            # every open route is closed: one re-encode for the whole batch
            _encode_groups(params, ninsts, runs, unfinished, bn_mode, record_embeddings)
            for b in unfinished:
                runs[b].waiting = False
            global_steps -= 1
            continue

        # instances already holding at the depot emit forced visits this step
        holding = [b for b in range(B) if runs[b].finished or runs[b].waiting]

        # stacked decode per group over the rows still acting this step
        groups = []
        for b in unfinished:
            if not runs[b].waiting and runs[b].group not in groups:
                groups.append(runs[b].group)
        for group in groups:
            acting = [b for b in group.members
                      if not runs[b].finished and not runs[b].waiting]
            if not acting:
                continue
            rows = np.array([runs[b].row for b in acting])
            mask = np.stack([
                _feasibility_mask(runs[b].state, ninsts[b], group.index_maps[runs[b].row])
                for b in acting
            ])
            last_pos = np.array([
                int(np.flatnonzero(group.index_maps[runs[b].row] == runs[b].state.last_node)[0])
                for b in acting
            ])
            caps = np.array([runs[b].state.remaining_cap for b in acting])
            nodes = T.take_rows(group.nodes, rows)
            graph = T.take_rows(group.graph, rows)
            probs, _ = _decode_probs(params, nodes, graph, last_pos, caps, mask)

            positions = _choose(probs.data, mask, mode, rng, runs, acting,
                                group.index_maps, rows)
            p_chosen = T.log(T.pick(probs, positions))
            step_entropy = tsallis_entropy(probs, out_alpha, axis=-1)
            step_records.append((p_chosen, step_entropy, list(acting)))

            for i, b in enumerate(acting):
                run = runs[b]
                pos = int(positions[i])
                node = int(group.index_maps[run.row][pos])
                feasible = int(np.sum(mask[i] == 0.0))
                run.result.support_fracs.append(
                    np.sum(probs.data[i] > 0.0) / feasible
                )
                run.result.n_decisions += 1
                if run.result.n_decisions > max_decisions:
                    raise RunawayDecodeError(
                        f"instance exceeded {max_decisions} decisions (n={n})"
                    )
                _apply_action(run, ninsts[b], node)

        # forced depot visits carry no probability mass and no gradient
        for b in holding:
            runs[b].result.trace.append(0)

    # per-instance differentiable sums assembled from the per-step vectors
    logp_vec = None
    ent_vec = None
    for lp, ent, acting in step_records:
        lp_full = T.scatter_rows(lp, acting, B)
        ent_full = T.scatter_rows(ent, acting, B)
        logp_vec = lp_full if logp_vec is None else T.add(logp_vec, lp_full)
        ent_vec = ent_full if ent_vec is None else T.add(ent_vec, ent_full)
    for b, run in enumerate(runs):
        run.result.logp = _element(logp_vec, b)
        run.result.entropy = _element(ent_vec, b)
        run.result.tour = Tour([list(r) for r in run.state.routes]).canonical()
    return [run.result for run in runs]


def _choose(probs: np.ndarray, mask: np.ndarray, mode: str, rng,
            runs, acting, index_maps, rows) -> np.ndarray:
    forced = runs[acting[0]].forced is not None if acting else False
    if forced:
        positions = []
        for i, b in enumerate(acting):
            node = runs[b].forced.pop(0)
            positions.append(int(np.flatnonzero(index_maps[rows[i]] == node)[0]))
        return np.array(positions)
    if mode == "greedy":
        return np.argmax(probs, axis=-1)
    cdf = np.cumsum(probs, axis=-1)
    cdf /= cdf[:, -1:]  # guard against rounding; zero-probability entries stay unreachable
    u = rng.random(len(acting))
    return np.array(
        [np.searchsorted(cdf[i], u[i], side="right") for i in range(len(acting))]
    )


def _apply_action(run: _InstanceRun, ninst: NormalizedInstance, node: int):
    state = run.state
    run.result.trace.append(node)
    state.t += 1
    if node == 0:
        if state.current:
            state.routes.append(state.current)
            state.current = []
        state.remaining_cap = 1.0
        state.last_node = 0
        if state.all_visited():
            run.finished = True
        else:
            run.waiting = True
    else:
        state.visited[node] = True
        state.remaining_cap -= float(ninst.demands_hat[node - 1])
        state.last_node = node
        state.current.append(node)


def rollout(params: ModelParams, inst: Instance, mode: str = "greedy",
            rng: np.random.Generator | None = None, bn_mode: str = "eval",
            forced_actions: list | None = None):
    """Roll out one instance; returns (tour, sum_logprob, sum_entropy)."""
    forced = [forced_actions] if forced_actions is not None else None
    res = rollout_batch(params, [inst], mode, rng, bn_mode, forced)[0]
    return res.tour, res.logp, res.entropy


# ---------------------------------------------------------------------------
# checkpoints: JSON manifest + little-endian float64 blob

CHECKPOINT_VERSION = 1


def _blob_path(path: str) -> str:
    return path[:-5] + ".bin" if path.endswith(".json") else path + ".bin"


def save_checkpoint(params: ModelParams, path: str):
    cfg = params.cfg
    entries = []
    offset = 0
    chunks = []

    def push(name, arr, trainable):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "offset": offset, "trainable": trainable}
        )
        chunks.append(raw)
        offset += len(raw)

    for name, v in sorted(params.values.items()):
        push(name, v.data, True)
    for name, s in sorted(params.stats.items()):
        push(name + ".running_mean", s.mean, False)
        push(name + ".running_var", s.var, False)

    manifest = {
        "version": CHECKPOINT_VERSION,
        "d_h": cfg.d_h,
        "n_layers": cfg.n_layers,
        "n_heads": cfg.n_heads,
        "ff_dim": cfg.ff_dim,
        "clip": cfg.clip,
        "activations": {"attention": cfg.attn_activation, "output": cfg.out_activation},
        "blob": os.path.basename(_blob_path(path)),
        "params": entries,
    }
    with open(_blob_path(path), "wb") as fh:
        fh.write(b"".join(chunks))
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)


def load_checkpoint(path: str) -> ModelParams:
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}"
        )
    cfg = ModelConfig(
        d_h=manifest["d_h"],
        n_layers=manifest["n_layers"],
        n_heads=manifest["n_heads"],
        ff_dim=manifest["ff_dim"],
        attn_activation=manifest["activations"]["attention"],
        out_activation=manifest["activations"]["output"],
        clip=manifest["clip"],
    )
    params = ModelParams(cfg, seed=0)
    blob_file = os.path.join(os.path.dirname(path) or ".", manifest["blob"])
    with open(blob_file, "rb") as fh:
        blob = fh.read()

    arrays = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64)

    for name, v in params.values.items():
        if name not in arrays:
            raise CheckpointError(f"{path}: parameter {name} missing from manifest")
        if arrays[name].shape != v.data.shape:
            raise CheckpointError(
                f"{path}: parameter {name} has shape {arrays[name].shape}, "
                f"model expects {v.data.shape}"
            )
        v.data = arrays[name]
    for name, s in params.stats.items():
        s.mean = arrays[name + ".running_mean"].copy()
        s.var = arrays[name + ".running_var"].copy()
    return params
