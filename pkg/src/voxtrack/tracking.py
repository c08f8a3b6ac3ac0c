"""Long-term multi-person tracking as node-disjoint path optimization.

Each step extends every live trajectory from frame t-1 through frame t+n on
a layered graph of candidate detections; per-trajectory constant-velocity
prediction nodes stand in for missed detections so a feasible extension
always exists. The joint extension is found optimally by reducing to
min-cost flow with unit node capacities (every node split into an in/out
pair) and solving with successive shortest augmenting paths under Johnson
potentials.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .detection import Candidate


@dataclass(frozen=True)
class TrackParams:
    lookahead: int = 3            # n: future frames in the graph
    gate_radius: float = 8.0      # d_L, voxel columns per frame
    w_prob: float = 1.0
    w_dist: float = 1.0
    w_vol: float = 1.0
    traj_cost_base: float = 1.0   # c0; trajectory node cost = c0 / length
    prediction_node_cost: float = 0.0
    prediction_prob: float = 0.3  # pseudo-probability of a missed detection
    score_lambda: float = 0.3     # people score update rate
    drop_threshold: float = 0.5   # trajectories below this score are removed


@dataclass
class Trajectory:
    """One tracked person: identity, column history and liveness score."""

    id: int
    history: list  # (frame, m, n) floats, contiguous frames
    people_score: float
    last_crop: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.history)

    @property
    def position(self) -> np.ndarray:
        return np.array(self.history[-1][1:], np.float64)

    def velocity(self, gate_radius: float) -> np.ndarray:
        """Per-frame column velocity from the last two positions, clamped to
        the gating radius so prediction chains always stay feasible."""
        if len(self.history) < 2:
            return np.zeros(2)
        v = self.position - np.array(self.history[-2][1:], np.float64)
        norm = float(np.linalg.norm(v))
        if norm > gate_radius:
            v *= gate_radius / norm
        return v


@dataclass
class TrackNode:
    """Graph node: an existing trajectory, a detection, or a prediction."""

    kind: str                    # trajectory | candidate | prediction
    layer: int                   # -1 for trajectory nodes, else 0..n
    position: np.ndarray         # (m, n) column coordinates
    node_cost: float = 0.0
    prob: float | None = None
    crop: np.ndarray | None = None
    traj_id: int | None = None
    candidate: Candidate | None = None


@dataclass
class TrackingGraph:
    """Layered DAG with gated edges between consecutive layers only."""

    nodes: list[TrackNode]
    trajectory_nodes: list[int]            # indices into nodes, by trajectory order
    layers: list[list[int]]                # frame layers 0..n -> node indices
    edges: list[list[tuple[int, float]]]   # adjacency: node -> [(node, cost)]
    params: TrackParams


def volume_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean volumes (1.0 when both empty)."""
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def edge_cost(a: TrackNode, b: TrackNode, params: TrackParams) -> float:
    """Linking cost between gated nodes in consecutive layers.

    Weighted sum of the person-probability difference, the normalized column
    distance, and the volume dissimilarity (1 - IoU). A term whose payload is
    missing on either side (prediction nodes) contributes its neutral
    midpoint 0.5 * weight.
    """
    dist = float(np.linalg.norm(a.position - b.position))
    if dist > params.gate_radius:
        raise ValueError(f"edge between {a.kind} and {b.kind} violates the "
                         f"gate ({dist:.3f} > {params.gate_radius})")
    if a.prob is None or b.prob is None:
        prob_term = 0.5 * params.w_prob
    else:
        prob_term = params.w_prob * abs(a.prob - b.prob)
    dist_term = params.w_dist * dist / params.gate_radius
    if a.crop is None or b.crop is None:
        vol_term = 0.5 * params.w_vol
    else:
        vol_term = params.w_vol * (1.0 - volume_iou(a.crop, b.crop))
    return prob_term + dist_term + vol_term


def build_graph(trajectories: list[Trajectory],
                candidate_layers: list[list[Candidate]],
                params: TrackParams) -> TrackingGraph:
    """Assemble the layered graph for frames t .. t+len(layers)-1.

    Layer -1 holds one node per live trajectory (cost c0/length). Every frame
    layer holds its candidates plus one constant-velocity prediction node per
    trajectory, so each trajectory always has a gated route to the last
    layer. All edges respect the gating radius.
    """
    if not candidate_layers:
        raise ValueError("need at least one candidate layer (the current frame)")
    nodes: list[TrackNode] = []
    traj_nodes = []
    for traj in trajectories:
        nodes.append(TrackNode(
            kind="trajectory", layer=-1, position=traj.position,
            node_cost=params.traj_cost_base / max(traj.length, 1),
            prob=traj.people_score, crop=traj.last_crop, traj_id=traj.id))
        traj_nodes.append(len(nodes) - 1)

    layers = []
    for layer, cands in enumerate(candidate_layers):
        ids = []
        for cand in cands:
            nodes.append(TrackNode(
                kind="candidate", layer=layer,
                position=np.asarray(cand.column, np.float64),
                prob=cand.person_prob, crop=cand.crop, candidate=cand))
            ids.append(len(nodes) - 1)
        for traj in trajectories:
            pred = traj.position + (layer + 1) * traj.velocity(params.gate_radius)
            nodes.append(TrackNode(
                kind="prediction", layer=layer, position=pred,
                node_cost=params.prediction_node_cost, traj_id=traj.id))
            ids.append(len(nodes) - 1)
        layers.append(ids)

    edges: list[list[tuple[int, float]]] = [[] for _ in nodes]
    prev = traj_nodes
    for ids in layers:
        for a in prev:
            for b in ids:
                if np.linalg.norm(nodes[a].position - nodes[b].position) <= params.gate_radius:
                    edges[a].append((b, edge_cost(nodes[a], nodes[b], params)))
        prev = ids
    return TrackingGraph(nodes=nodes, trajectory_nodes=traj_nodes,
                         layers=layers, edges=edges, params=params)


class _Flow:
    """Min-cost flow on a residual adjacency list (unit capacities here)."""

    def __init__(self, n):
        self.adj = [[] for _ in range(n)]  # [to, cap, cost, rev_index]

    def add_edge(self, u, v, cap, cost):
        self.adj[u].append([v, cap, cost, len(self.adj[v])])
        self.adj[v].append([u, 0, -cost, len(self.adj[u]) - 1])

    def send(self, source, sink, amount):
        """Successive shortest paths with Johnson potentials; nonnegative
        input costs keep every Dijkstra pass valid. Returns total cost, or
        None if the requested amount cannot be routed."""
        n = len(self.adj)
        potential = [0.0] * n
        total = 0.0
        for _ in range(amount):
            dist = [np.inf] * n
            parent: list[tuple[int, int] | None] = [None] * n
            dist[source] = 0.0
            heap = [(0.0, source)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u]:
                    continue
                for ei, (v, cap, cost, _) in enumerate(self.adj[u]):
                    if cap <= 0:
                        continue
                    nd = d + cost + potential[u] - potential[v]
                    if nd < dist[v]:
                        dist[v] = nd
                        parent[v] = (u, ei)
                        heapq.heappush(heap, (nd, v))
            if not np.isfinite(dist[sink]):
                return None
            for v in range(n):
                potential[v] += min(dist[v], dist[sink])
            v = sink
            while v != source:
                u, ei = parent[v]
                edge = self.adj[u][ei]
                edge[1] -= 1
                self.adj[v][edge[3]][1] += 1
                total += edge[2]
                v = u
        return total


def solve_disjoint_paths(graph: TrackingGraph) -> tuple[list[list[int]], float]:
    """Optimal node-disjoint extension of every trajectory to the last layer.

    Returns (paths, total_cost): one path of node indices per trajectory node
    (trajectory first, one node per layer after it), minimizing the summed
    node and edge costs. Raises RuntimeError if the graph cannot route every
    trajectory (impossible for graphs built by build_graph).
    """
    if not graph.trajectory_nodes:
        return [], 0.0
    n = len(graph.nodes)
    source, sink = 2 * n, 2 * n + 1
    flow = _Flow(2 * n + 2)
    for u, node in enumerate(graph.nodes):
        flow.add_edge(2 * u, 2 * u + 1, 1, node.node_cost)
    for u in graph.trajectory_nodes:
        flow.add_edge(source, 2 * u, 1, 0.0)
    for u in graph.layers[-1]:
        flow.add_edge(2 * u + 1, sink, 1, 0.0)
    for u, out in enumerate(graph.edges):
        for v, cost in out:
            flow.add_edge(2 * u + 1, 2 * v, 1, cost)

    total = flow.send(source, sink, len(graph.trajectory_nodes))
    if total is None:
        raise RuntimeError("tracking graph is infeasible; prediction chains "
                           "should make this impossible")

    paths = []
    for start in graph.trajectory_nodes:
        path, u = [start], start
        while u is not None:
            nxt = None
            for v, cap, _, _ in flow.adj[2 * u + 1]:
                if cap == 0 and v != 2 * u and v != sink and v % 2 == 0:
                    # saturated forward edge out of u's exit half
                    nxt = v // 2
                    break
                if cap == 0 and v == sink:
                    break
            if nxt is not None:
                path.append(nxt)
            u = nxt
        paths.append(path)
    return paths, float(total)


@dataclass
class TrackStep:
    """What happened to each trajectory at the tracked frame."""

    extended: list  # (trajectory, node) pairs, node is the layer-0 TrackNode
    spawned: list[Trajectory]
    dropped: list[Trajectory]
    total_cost: float


def advance(trajectories: list[Trajectory], graph: TrackingGraph,
            paths: list[list[int]], frame: int, params: TrackParams,
            next_id: int) -> tuple[list[Trajectory], int, TrackStep]:
    """Apply a solved step: extend every trajectory by its layer-0 node,
    update people scores, drop low-score trajectories, and spawn new ones
    from unclaimed current-frame candidates."""
    used = set()
    survivors, extended, dropped = [], [], []
    for traj, path in zip(trajectories, paths):
        node = graph.nodes[path[1]]
        if node.kind == "candidate":
            p_t = node.prob
            traj.last_crop = node.crop if node.crop is not None else traj.last_crop
            used.add(path[1])
        else:
            p_t = params.prediction_prob
        traj.history.append((frame, float(node.position[0]), float(node.position[1])))
        traj.people_score = params.score_lambda * p_t + \
            (1 - params.score_lambda) * traj.people_score
        extended.append((traj, node))
        if traj.people_score < params.drop_threshold:
            dropped.append(traj)
        else:
            survivors.append(traj)

    spawned = []
    for idx in graph.layers[0]:
        node = graph.nodes[idx]
        if node.kind == "candidate" and idx not in used:
            spawned.append(Trajectory(
                id=next_id,
                history=[(frame, float(node.position[0]), float(node.position[1]))],
                people_score=node.prob,
                last_crop=node.crop))
            next_id += 1
    return survivors + spawned, next_id, TrackStep(extended, spawned, dropped, 0.0)


class Tracker:
    """Sequential per-scene tracking state machine."""

    def __init__(self, params: TrackParams | None = None):
        self.params = params or TrackParams()
        self.trajectories: list[Trajectory] = []
        self.frame = 0
        self._next_id = 0

    def step(self, candidate_layers: list[list[Candidate]]) -> TrackStep:
        """Advance one frame given candidates for frames t .. t+n."""
        graph = build_graph(self.trajectories, candidate_layers, self.params)
        paths, total = solve_disjoint_paths(graph)
        self.trajectories, self._next_id, result = advance(
            self.trajectories, graph, paths, self.frame, self.params, self._next_id)
        result.total_cost = total
        self.frame += 1
        return result
