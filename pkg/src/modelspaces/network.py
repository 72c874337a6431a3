"""Layer-wise aggregation for two-layer MLPs.

Hidden layers are aggregated neuron by neuron: each node publishes a ball of
acceptable weight vectors per hidden neuron, the coordinator clusters the
balls, greedily merges tuples that intersect across nodes, and passes the
rest through verbatim. Nodes then retrain their output layer on the shared
hidden layer, whose weights are aggregated with the convex machinery.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, replace

import numpy as np

from .data import NodeData
from .geometry import (BallSearchConfig, IntersectConfig, ModelSpace,
                       construct_space, intersect)
from .models import (Dataset, MlpModel, TrainConfig, accuracy_gate,
                     fit_softmax_head, neuron_gate, train_mlp)

_ENUM_LIMIT = 100_000  # full tuple enumeration only below this product size


@dataclass(frozen=True)
class ClusterConfig:
    m_eps: int = 100
    kmeans_iters: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.m_eps < 1:
            raise ValueError("m_eps must be >= 1")


@dataclass(frozen=True)
class NeuronSpace:
    """A hidden neuron's acceptable-weight ball plus its identity and targets."""

    ball: ModelSpace
    node_id: int
    layer_index: int
    neuron_index: int
    targets: np.ndarray  # node-local cache; never serialized into messages

    def to_bytes(self) -> bytes:
        header = struct.pack("<iII", self.node_id, self.layer_index, self.neuron_index)
        return header + self.ball.to_bytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "NeuronSpace":
        node_id, layer_index, neuron_index = struct.unpack_from("<iII", raw, 0)
        ball = ModelSpace.from_bytes(raw[12:])
        return cls(ball, node_id, layer_index, neuron_index,
                   targets=np.empty(0))


@dataclass(frozen=True)
class AggregateLayer:
    """Merged hidden layer: matched intersection points first, then pass-throughs."""

    neurons: np.ndarray  # [width, fan_in + 1]; bias in the last column
    provenance: tuple  # per neuron, frozenset of (node_id, neuron_index)

    def __post_init__(self):
        neurons = np.ascontiguousarray(self.neurons, dtype=np.float64)
        provenance = tuple(frozenset(p) for p in self.provenance)
        if len(provenance) != len(neurons):
            raise ValueError("one provenance set per aggregate neuron")
        seen = set()
        for p in provenance:
            if p & seen:
                raise ValueError("a source neuron is covered twice")
            seen |= p
        neurons.flags.writeable = False
        object.__setattr__(self, "neurons", neurons)
        object.__setattr__(self, "provenance", provenance)

    @property
    def width(self) -> int:
        return len(self.neurons)

    def covered(self) -> frozenset:
        return frozenset().union(*self.provenance) if self.provenance else frozenset()

    def to_bytes(self) -> bytes:
        width, vec = self.neurons.shape
        out = [struct.pack("<II", width, vec), self.neurons.astype("<f8").tobytes()]
        for p in self.provenance:
            out.append(struct.pack("<I", len(p)))
            for node_id, idx in sorted(p):
                out.append(struct.pack("<iI", node_id, idx))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "AggregateLayer":
        width, vec = struct.unpack_from("<II", raw, 0)
        off = 8
        neurons = np.frombuffer(raw, dtype="<f8", count=width * vec,
                                offset=off).reshape(width, vec).copy()
        off += 8 * width * vec
        provenance = []
        for _ in range(width):
            (count,) = struct.unpack_from("<I", raw, off)
            off += 4
            members = set()
            for _ in range(count):
                node_id, idx = struct.unpack_from("<iI", raw, off)
                members.add((node_id, idx))
                off += 8
            provenance.append(frozenset(members))
        return cls(neurons, tuple(provenance))


def _neuron_vector(model: MlpModel, l: int) -> np.ndarray:
    return np.concatenate([model.W1[:, l], [model.b1[l]]])


def neuron_spaces(model: MlpModel, data: Dataset, eps_hidden: float,
                  cfg: BallSearchConfig, node_id: int = 0,
                  layer_index: int = 0) -> list:
    """One acceptable-weight ball per hidden neuron, against its own activations."""
    if len(data) == 0:
        raise ValueError("neuron_spaces needs a nonempty dataset")
    inputs = data.features
    spaces = []
    for l in range(model.hidden_size):
        w_star = _neuron_vector(model, l)
        # same arithmetic path as the gate, so the center passes at any
        # tolerance including zero (batched matmul rounds differently)
        targets = np.maximum(inputs @ w_star[:-1] + w_star[-1], 0.0)
        seed = int(np.random.SeedSequence(
            [cfg.seed, max(node_id, 0), layer_index, l]).generate_state(1)[0])
        ball = construct_space(
            w_star,
            lambda w, t=targets: neuron_gate(w, inputs, t, eps_hidden),
            scales=None,
            cfg=replace(cfg, seed=seed),
            node_id=node_id,
        )
        spaces.append(NeuronSpace(ball, node_id, layer_index, l, targets))
    return spaces


def kmeans(X: np.ndarray, m: int, iters: int, seed: int):
    """Lloyd's algorithm with seeded distinct-point initialization.

    Returns (centroids, labels, wcss trace). Clusters may end up empty; their
    centroid is then left where it was.
    """
    rng = np.random.default_rng(seed)
    n = len(X)
    m = min(m, n)
    centroids = X[rng.choice(n, size=m, replace=False)].copy()
    labels = np.zeros(n, dtype=np.int64)
    trace = []
    for _ in range(iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(n), new_labels].sum()))
        for j in range(m):
            mask = new_labels == j
            if np.any(mask):
                centroids[j] = X[mask].mean(axis=0)
        if np.array_equal(new_labels, labels) and len(trace) > 1:
            labels = new_labels
            break
        labels = new_labels
    return centroids, labels, trace


def cluster_neurons(all_spaces: list, cfg: ClusterConfig) -> list:
    """Partition neuron balls into at most m_eps clusters by center distance."""
    if not all_spaces:
        raise ValueError("nothing to cluster")
    X = np.stack([s.ball.center for s in all_spaces])
    m = min(cfg.m_eps, len(all_spaces))
    _, labels, _ = kmeans(X, m, cfg.kmeans_iters, cfg.seed)
    clusters = [[] for _ in range(m)]
    for space, lab in zip(all_spaces, labels):
        clusters[lab].append(space)
    return clusters


def _sort_key(space: NeuronSpace):
    return (space.node_id, space.neuron_index)


def _candidate_tuples(cluster: list, cap: int):
    """Cross-node tuples (>= 2 members, <= 1 per node), widest first."""
    by_node = {}
    for i, s in enumerate(cluster):
        by_node.setdefault(s.node_id, []).append(i)
    node_groups = [by_node[k] for k in sorted(by_node)]
    if len(node_groups) < 2:
        return []
    centers = np.stack([s.ball.center for s in cluster])
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))

    def cost(members):
        return sum(dist[a, b] for a, b in itertools.combinations(members, 2))

    product_size = 1
    for g in node_groups:
        product_size *= len(g) + 1

    candidates = []
    if product_size <= _ENUM_LIMIT:
        for combo in itertools.product(*[[None] + g for g in node_groups]):
            members = tuple(i for i in combo if i is not None)
            if len(members) >= 2:
                candidates.append(members)
    else:
        # Too many tuples: seed from cheapest cross-node pairs and grow each
        # pair greedily one node at a time, keeping every intermediate size.
        pairs = sorted(
            ((dist[a, b], (a, b))
             for ga, gb in itertools.combinations(node_groups, 2)
             for a in ga for b in gb),
            key=lambda t: t[0],
        )
        seen = set()
        for _, pair in pairs[: cap * 2]:
            members = list(pair)
            seen.add(tuple(sorted(members)))
            used_nodes = {cluster[i].node_id for i in members}
            for g in node_groups:
                node = cluster[g[0]].node_id
                if node in used_nodes:
                    continue
                best = min(g, key=lambda i: sum(dist[i, j] for j in members))
                members.append(best)
                used_nodes.add(node)
                seen.add(tuple(sorted(members)))
        candidates = [tuple(m) for m in seen]

    # Maximal tuples first: attempting the widest merge before its subsets is
    # what collapses K copies of one neuron into a single aggregate neuron;
    # within a size, cheapest spread first.
    candidates.sort(key=lambda members: (
        -len(members), cost(members),
        tuple(_sort_key(cluster[i]) for i in members)))
    return [tuple(cluster[i] for i in members) for members in candidates]


def greedy_intersect_layer(clusters: list, k: int,
                           opts: IntersectConfig | None = None,
                           attempts_per_neuron: int = 10) -> AggregateLayer:
    """Merge intersecting neuron tuples within clusters; pass the rest through.

    Within each cluster, candidate tuples (one neuron per node, two or more
    nodes) are attempted widest-first then cheapest-spread-first, capped at
    attempts_per_neuron times the cluster size. Every neuron left uncovered
    is copied verbatim, so the result covers each source neuron exactly once.
    """
    merged, merged_prov = [], []
    passthrough = []
    for cluster in clusters:
        if not cluster:
            continue
        if any(s.node_id >= k for s in cluster):
            raise ValueError("cluster contains a node id outside [0, k)")
        covered = set()
        attempts = 0
        cap = attempts_per_neuron * len(cluster)
        for tup in _candidate_tuples(cluster, cap):
            if attempts >= cap:
                break
            keys = {(s.node_id, s.neuron_index) for s in tup}
            if keys & covered:
                continue
            w, found = intersect([s.ball for s in tup], opts)
            attempts += 1
            if found:
                merged.append(w)
                merged_prov.append(frozenset(keys))
                covered |= keys
        for s in sorted(cluster, key=_sort_key):
            if (s.node_id, s.neuron_index) not in covered:
                passthrough.append(s)

    neurons = merged + [s.ball.center for s in sorted(passthrough, key=_sort_key)]
    provenance = merged_prov + [
        frozenset({(s.node_id, s.neuron_index)})
        for s in sorted(passthrough, key=_sort_key)
    ]
    if not neurons:
        raise ValueError("no neurons to aggregate")
    return AggregateLayer(np.stack(neurons), tuple(provenance))


def hidden_from_layer(agg: AggregateLayer):
    """Split aggregate neuron vectors into the (W1, b1) blocks of an MLP."""
    W1 = agg.neurons[:, :-1].T.copy()
    b1 = agg.neurons[:, -1].copy()
    return W1, b1


def insert_and_retrain(node: NodeData, local: MlpModel, agg: AggregateLayer,
                       cfg: TrainConfig) -> MlpModel:
    """Swap in the aggregate hidden layer (frozen) and refit the output layer.

    The output layer is re-initialized because the hidden width may change;
    it is fit as a softmax head on the frozen hidden activations.
    """
    W1, b1 = hidden_from_layer(agg)
    if W1.shape[0] != local.n_features:
        raise ValueError("aggregate layer input width does not match the model")
    acts = np.maximum(node.train.features @ W1 + b1, 0.0)
    W2, b2 = fit_softmax_head(acts, node.train.labels, node.train.n_classes, cfg)
    return MlpModel(W1, b1, W2, b2, dropout_rate=local.dropout_rate)


@dataclass(frozen=True)
class Message:
    phase: str
    sender: str
    receiver: str
    n_bytes: int


@dataclass
class MlpAggregationResult:
    model: MlpModel
    found_output: bool
    local_models: list
    retrained_models: list
    layer: AggregateLayer
    messages: list


def aggregate_mlp(nodes: list, hidden_size: int, train_cfg: TrainConfig,
                  eps_hidden: float, eps_final, cluster_cfg: ClusterConfig,
                  search_cfg: BallSearchConfig,
                  dropout_rate: float = 0.5,
                  intersect_opts: IntersectConfig | None = None,
                  local_models: list | None = None) -> MlpAggregationResult:
    """Full layer-wise aggregation across nodes; one upstream round per layer.

    eps_final may be a scalar or a per-node sequence. Pre-trained local models
    may be supplied to skip step one (they must match the node order).
    """
    if len(nodes) < 2:
        raise ValueError("need at least two nodes")
    k = len(nodes)
    eps_final = np.broadcast_to(np.asarray(eps_final, dtype=float), (k,))
    messages = []

    if local_models is None:
        local_models = [
            train_mlp(node.train, hidden_size,
                      replace(train_cfg, seed=train_cfg.seed + node.node_id),
                      dropout_rate=dropout_rate)
            for node in nodes
        ]

    all_spaces = []
    for node, model in zip(nodes, local_models):
        spaces = neuron_spaces(model, node.validation, eps_hidden, search_cfg,
                               node_id=node.node_id)
        all_spaces.extend(spaces)
        messages.append(Message("hidden-spaces", f"node{node.node_id}",
                                "coordinator",
                                sum(len(s.to_bytes()) for s in spaces)))

    clusters = cluster_neurons(all_spaces, cluster_cfg)
    agg_layer = greedy_intersect_layer(clusters, k, intersect_opts)
    messages.append(Message("hidden-broadcast", "coordinator", "all",
                            len(agg_layer.to_bytes())))

    retrained = [
        insert_and_retrain(node, model, agg_layer,
                           replace(train_cfg, seed=train_cfg.seed + node.node_id))
        for node, model in zip(nodes, local_models)
    ]

    output_spaces = []
    for node, model, eps in zip(nodes, retrained, eps_final):
        flat = np.concatenate([model.W2.ravel(), model.b2])

        def evalfn(w, _model=model, _node=node, _eps=eps):
            candidate = MlpModel(_model.W1, _model.b1,
                                 w[:-_model.n_classes].reshape(_model.hidden_size,
                                                               _model.n_classes),
                                 w[-_model.n_classes:],
                                 dropout_rate=_model.dropout_rate)
            return accuracy_gate(candidate, _node.validation, _eps)

        seed = int(np.random.SeedSequence(
            [search_cfg.seed, max(node.node_id, 0), 1 << 16]).generate_state(1)[0])
        space = construct_space(flat, evalfn, scales=None,
                                cfg=replace(search_cfg, seed=seed),
                                node_id=node.node_id)
        output_spaces.append(space)
        messages.append(Message("output-spaces", f"node{node.node_id}",
                                "coordinator", len(space.to_bytes())))

    w_out, found = intersect(output_spaces, intersect_opts)
    base = retrained[0]
    W2 = w_out[: -base.n_classes].reshape(base.hidden_size, base.n_classes)
    b2 = w_out[-base.n_classes:]
    model = MlpModel(base.W1, base.b1, W2, b2, dropout_rate=dropout_rate)
    return MlpAggregationResult(model, found, local_models, retrained,
                                agg_layer, messages)
