"""Topological object maps, random-walk descriptors and map-to-map matching.

A map is a graph whose nodes are parameterized objects and whose edges join
each object to its nearest neighbours. Every node is described by ``j``
random walks of depth at most ``i``; each step of a walk records the label,
volume, distance and bearing of the visited object as seen from the walk's
origin. Two maps are matched by comparing descriptors, estimating the scale
between them, and fitting a gravity-aligned similarity transform
(``p2 = rho * R(yaw) @ p1 + t``) with RANSAC.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MatchFailed

HALF_PI = math.pi / 2


@dataclass
class TopoConfig:
    k_nn: int = 4
    d_max: float = 5.0
    depth: int = 4  # i
    walks: int = 20  # j
    sigma_d: float = 0.3
    sigma_alpha: float = 0.3
    sigma_s: float = 0.7
    inlier_ratio: float = 0.2  # eps_in = inlier_ratio * rho
    ransac_iters: int = 4000
    candidates_per_node: int = 3
    scale_window: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class TopoNode:
    id: int
    label: str
    t: np.ndarray
    yaw: float
    s: np.ndarray
    kind: str = "cube"

    @property
    def volume(self) -> float:
        return float(8 * np.prod(self.s))

    @classmethod
    def from_object(cls, obj) -> "TopoNode":
        """Accepts anything with ``id``, ``label`` and either a ``model`` or ``t/yaw/s``."""
        src = getattr(obj, "model", obj)
        kind = getattr(src, "kind", getattr(obj, "kind", "cube"))
        return cls(int(obj.id), str(obj.label), np.asarray(src.t, dtype=float),
                   float(getattr(src, "yaw", 0.0)), np.asarray(src.s, dtype=float), kind)


@dataclass(frozen=True)
class TopoEdge:
    a: int
    b: int
    d: float
    alpha: float


def relative_bearing(origin: TopoNode, p) -> float:
    """Horizontal bearing of ``p`` seen from ``origin``, relative to its yaw axis.

    Folded into [0, pi/2) because a box's yaw is only defined up to its
    extent symmetry. NaN for quadrics, whose yaw carries no information.
    """
    if origin.kind == "quadric":
        return math.nan
    v = np.asarray(p) - origin.t
    if math.hypot(v[0], v[1]) < 1e-12:
        return math.nan
    return (math.atan2(v[1], v[0]) - origin.yaw) % HALF_PI


class TopoMap:
    def __init__(self, nodes: list[TopoNode], edges: list[TopoEdge]):
        self.nodes = sorted(nodes, key=lambda n: n.id)
        self.index = {n.id: k for k, n in enumerate(self.nodes)}
        self.edges = edges
        self.adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for e in edges:
            self.adj[e.a].append(e.b)
            self.adj[e.b].append(e.a)
        for k in self.adj:
            self.adj[k].sort()

    def __len__(self):
        return len(self.nodes)

    def node(self, node_id: int) -> TopoNode:
        return self.nodes[self.index[node_id]]

    @property
    def centroids(self) -> np.ndarray:
        return np.array([n.t for n in self.nodes]).reshape(-1, 3)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"id": n.id, "label": n.label, "kind": n.kind, "t": n.t.tolist(),
                       "yaw": n.yaw, "s": n.s.tolist()} for n in self.nodes],
            "edges": [{"a": e.a, "b": e.b, "d": e.d, "alpha": e.alpha} for e in self.edges],
        }


def build_topo_map(objects, k_nn: int = 4, d_max: float = 5.0) -> TopoMap:
    """Nodes for every object; each joins its ``k_nn`` nearest neighbours within ``d_max``."""
    nodes = [o if isinstance(o, TopoNode) else TopoNode.from_object(o) for o in objects]
    nodes.sort(key=lambda n: n.id)
    if len({n.id for n in nodes}) != len(nodes):
        raise ValueError("duplicate node ids")
    P = np.array([n.t for n in nodes]).reshape(-1, 3)
    D = np.linalg.norm(P[:, None] - P[None], axis=-1)
    pairs = set()
    for a in range(len(nodes)):
        order = np.lexsort((np.arange(len(nodes)), D[a]))
        picked = 0
        for b in order:
            if b == a:
                continue
            if picked >= k_nn or D[a, b] > d_max:
                break
            if D[a, b] <= 0:
                continue
            pairs.add((min(a, b), max(a, b)))
            picked += 1
    edges = []
    for a, b in sorted(pairs):
        na, nb = nodes[a], nodes[b]
        edges.append(TopoEdge(na.id, nb.id, float(D[a, b]), relative_bearing(na, nb.t)))
    return TopoMap(nodes, edges)


@dataclass
class Descriptor:
    origin: int
    labels: np.ndarray  # (j, i) object array, "" past the end of a walk
    volume: np.ndarray  # (j, i)
    dist: np.ndarray  # (j, i)
    alpha: np.ndarray  # (j, i), NaN when undefined
    length: np.ndarray  # (j,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def rows(self) -> list[list[tuple]]:
        return [
            [(self.labels[r, c], float(self.volume[r, c]), float(self.dist[r, c]), float(self.alpha[r, c]))
             for c in range(self.length[r])]
            for r in range(len(self.length))
        ]


def _walks(adj: list[list[int]], origin: int, i: int, j: int, rng) -> np.ndarray:
    """(j, i) node indices of self-avoiding walks, -1 past a dead end."""
    out = np.full((j, i), -1, dtype=np.int64)
    u = rng.random((j, i))
    for r in range(j):
        seen = {origin}
        cur = origin
        for c in range(i):
            nbrs = [n for n in adj[cur] if n not in seen]
            if not nbrs:
                break
            cur = nbrs[int(u[r, c] * len(nbrs))]
            seen.add(cur)
            out[r, c] = cur
    return out


def _node_tables(graph: TopoMap):
    idx_adj = [[graph.index[m] for m in graph.adj[n.id]] for n in graph.nodes]
    labels = np.array([n.label for n in graph.nodes] + [""], dtype=object)
    vol = np.array([n.volume for n in graph.nodes] + [0.0])
    return idx_adj, labels, vol


def _descriptor_from_walks(graph: TopoMap, k: int, W: np.ndarray, labels, vol) -> Descriptor:
    o = graph.nodes[k]
    P = graph.centroids
    dist = np.append(np.linalg.norm(P - o.t, axis=1), 0.0)
    bearing = np.array([relative_bearing(o, p) if m != k else math.nan for m, p in enumerate(P)] + [math.nan])
    pad = W < 0
    Wi = np.where(pad, len(graph.nodes), W)
    return Descriptor(
        o.id,
        labels[Wi],
        np.where(pad, 0.0, vol[Wi]),
        np.where(pad, 0.0, dist[Wi]),
        np.where(pad, np.nan, bearing[Wi]),
        (~pad).sum(axis=1),
    )


def random_walk_descriptor(graph: TopoMap, origin: int, i: int = 4, j: int = 20, seed=0) -> Descriptor:
    """``j`` self-avoiding random walks of at most ``i`` steps from ``origin``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx_adj, labels, vol = _node_tables(graph)
    k = graph.index[origin]
    return _descriptor_from_walks(graph, k, _walks(idx_adj, k, i, j, rng), labels, vol)


def map_descriptors(graph: TopoMap, i: int, j: int, rng) -> list[Descriptor]:
    """Descriptors of every node, drawn in node order from one generator."""
    idx_adj, labels, vol = _node_tables(graph)
    return [_descriptor_from_walks(graph, k, _walks(idx_adj, k, i, j, rng), labels, vol)
            for k in range(len(graph.nodes))]


def _codes(descs: list[Descriptor], vocab: dict, pad: int) -> np.ndarray:
    out = np.full((len(descs),) + (descs[0].shape if descs else (0, 0)), pad, dtype=np.int64)
    for k, d in enumerate(descs):
        for r in range(d.shape[0]):
            for c in range(d.length[r]):
                out[k, r, c] = vocab.setdefault(d.labels[r, c], len(vocab))
    return out


def _stack(descs: list[Descriptor], vocab: dict, pad: int):
    return (
        _codes(descs, vocab, pad),
        np.stack([d.volume for d in descs]),
        np.stack([d.dist for d in descs]),
        np.stack([d.alpha for d in descs]),
        np.stack([d.length for d in descs]),
    )


def _similarity_matrix(A, B, rho: float, cfg: TopoConfig, metric: bool = True, mask=None) -> np.ndarray:
    """Symmetrised best-row similarity for (descriptor in A, descriptor in B) pairs.

    ``A`` and ``B`` are stacks from ``_stack``; the result has shape (nA, nB)
    and is only evaluated where ``mask`` is set (everywhere by default).
    With ``metric`` off only labels and bearings are compared.
    """
    la, va, da, aa, na = A
    lb, vb, db, ab, nb = B
    out = np.zeros((len(la), len(lb)))
    if mask is None:
        mask = np.ones(out.shape, dtype=bool)
    pa, pb = np.nonzero(mask)
    if not len(pa):
        return out
    # entries broadcast to (pairs, ja, jb, i)
    L = la[pa][:, :, None, :] == lb[pb][:, None, :, :]
    dalpha = np.abs(aa[pa][:, :, None, :] - ab[pb][:, None, :, :]) % HALF_PI
    dalpha = np.minimum(dalpha, HALF_PI - dalpha)
    expo = np.where(np.isnan(dalpha), 0.0, dalpha / cfg.sigma_alpha)
    if metric:
        expo = expo + np.abs(rho * da[pa][:, :, None, :] - db[pb][:, None, :, :]) / (cfg.sigma_d * math.sqrt(rho))
        with np.errstate(divide="ignore"):
            lva = np.log(np.where(va > 0, va, 1.0)) + 3 * math.log(rho)
            lvb = np.log(np.where(vb > 0, vb, 1.0))
        expo = expo + np.abs(lva[pa][:, :, None, :] - lvb[pb][:, None, :, :]) / cfg.sigma_s
    score = np.where(L, np.exp(-expo), 0.0)
    longest = np.maximum(na[pa][:, :, None], nb[pb][:, None, :])
    rows = score.sum(-1) / np.maximum(longest, 1)  # (pairs, ja, jb)
    valid_a = na[pa] > 0
    valid_b = nb[pb] > 0
    fwd = (rows.max(axis=2) * valid_a).sum(-1) / np.maximum(valid_a.sum(-1), 1)
    bwd = (rows.max(axis=1) * valid_b).sum(-1) / np.maximum(valid_b.sum(-1), 1)
    out[pa, pb] = 0.5 * (fwd + bwd)
    return out


def descriptor_similarity(a: Descriptor, b: Descriptor, rho: float = 1.0, cfg: TopoConfig | None = None) -> float:
    """Agreement of two descriptors when ``b``'s map is ``rho`` times ``a``'s scale.

    Each row is paired with its best-scoring row on the other side; the two
    directions are averaged. Entries agree only when labels match, and decay
    exponentially with distance, bearing and log-volume mismatch.
    """
    cfg = cfg or TopoConfig()
    vocab: dict = {}
    A = _stack([a], vocab, -1)
    B = _stack([b], vocab, -2)
    return float(_similarity_matrix(A, B, rho, cfg)[0, 0])


def greedy_assign(S: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one pairs by descending score; ties fall to the lower indices."""
    pairs = []
    if S.size == 0:
        return pairs
    flat = np.argsort(-S, axis=None, kind="stable")
    used_r, used_c = set(), set()
    for f in flat:
        r, c = divmod(int(f), S.shape[1])
        if S[r, c] <= 0:
            break
        if r in used_r or c in used_c:
            continue
        pairs.append((r, c))
        used_r.add(r)
        used_c.add(c)
    return pairs


def yaw_similarity(P, Q):
    """Least-squares ``Q ~ rho R(yaw) P + t`` with rotation about z only.

    Works on stacked problems: ``P``/``Q`` of shape (..., n, 3). Returns
    ``(rho, yaw, t)``; rho is NaN for degenerate configurations.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    mp = P.mean(axis=-2, keepdims=True)
    mq = Q.mean(axis=-2, keepdims=True)
    a = P - mp
    b = Q - mq
    # planar Procrustes: the rotation angle has a closed form
    sin_sum = (a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]).sum(-1)
    cos_sum = (a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]).sum(-1)
    yaw = np.arctan2(sin_sum, cos_sum)
    c, s = np.cos(yaw), np.sin(yaw)
    ra = np.stack([c[..., None] * a[..., 0] - s[..., None] * a[..., 1],
                   s[..., None] * a[..., 0] + c[..., None] * a[..., 1], a[..., 2]], axis=-1)
    den = (a**2).sum(axis=(-1, -2))
    num = (ra * b).sum(axis=(-1, -2))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(den > 1e-18, num / den, np.nan)
    rho = np.where(rho > 0, rho, np.nan)
    Rmp = np.stack([c * mp[..., 0, 0] - s * mp[..., 0, 1], s * mp[..., 0, 0] + c * mp[..., 0, 1], mp[..., 0, 2]], axis=-1)
    t = mq[..., 0, :] - rho[..., None] * Rmp
    return rho, yaw, t


def apply_similarity(rho: float, yaw: float, t, P) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return rho * np.asarray(P, dtype=float) @ R.T + np.asarray(t)


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (id in g1, id in g2)
    rho: float = math.nan
    yaw: float = math.nan
    translation: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    inliers: list[tuple[int, int]] = field(default_factory=list)
    residual: float = math.nan
    scale_guess: float = math.nan

    @property
    def has_transform(self) -> bool:
        return len(self.inliers) >= 3 and math.isfinite(self.rho)

    def apply(self, P) -> np.ndarray:
        return apply_similarity(self.rho, self.yaw, self.translation, P)

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "inliers": [list(p) for p in self.inliers],
            "has_transform": self.has_transform,
            "rho": self.rho,
            "yaw": self.yaw,
            "translation": list(map(float, self.translation)),
            "residual": self.residual,
        }


def _scale_from_pairs(P1, P2, pairs, window: float = 0.05) -> float:
    """Scale between maps from the distance ratios of all couples of matched pairs.

    Wrong provisional pairs give scattered ratios while correct ones agree,
    so the ratios are averaged inside the densest window of relative width
    ``window`` (in log space) rather than over all couples.
    """
    ratios = []
    for (a1, b1), (a2, b2) in itertools.combinations(pairs, 2):
        d1 = np.linalg.norm(P1[a1] - P1[a2])
        d2 = np.linalg.norm(P2[b1] - P2[b2])
        if d1 > 1e-9 and d2 > 1e-9:
            ratios.append(d2 / d1)
    if not ratios:
        return 1.0
    lr = np.log(np.sort(ratios))
    hi = np.searchsorted(lr, lr + window, side="right")
    k = int(np.argmax(hi - np.arange(len(lr))))
    return float(np.exp(lr[k:hi[k]]).mean())


def _triples(n: int, iters: int, rng) -> np.ndarray:
    total = math.comb(n, 3)
    if total <= iters:
        return np.array(list(itertools.combinations(range(n), 3)), dtype=int).reshape(-1, 3)
    # three distinct indices per row: the smallest of n random keys
    keys = rng.random((iters, n))
    return np.sort(np.argpartition(keys, 3, axis=1)[:, :3], axis=1)


def _candidates(S: np.ndarray, greedy: list, per_node: int) -> list[tuple[int, int]]:
    """Greedy pairs first, then each row's next best label-compatible columns."""
    out = list(greedy)
    seen = set(out)
    for a in range(S.shape[0]):
        order = np.argsort(-S[a], kind="stable")[:per_node]
        for b in order:
            if S[a, b] > 0 and (a, int(b)) not in seen:
                out.append((a, int(b)))
                seen.add((a, int(b)))
    return out


def _one_to_one(res: np.ndarray, ca: np.ndarray, cb: np.ndarray, eps: float) -> np.ndarray:
    """Inlier candidates, keeping the lowest-residual one per node on either side."""
    keep = np.zeros(len(res), dtype=bool)
    used_a, used_b = set(), set()
    for k in np.argsort(res, kind="stable"):
        if res[k] >= eps:
            break
        if ca[k] in used_a or cb[k] in used_b:
            continue
        keep[k] = True
        used_a.add(ca[k])
        used_b.add(cb[k])
    return keep


def _ransac(P, Q, ca, cb, eps: float, iters: int, rng):
    """Inlier mask of the best triple hypothesis (most one-to-one inliers, then lowest residual)."""
    tri = _triples(len(P), iters, rng)
    distinct = (
        (ca[tri[:, 0]] != ca[tri[:, 1]]) & (ca[tri[:, 0]] != ca[tri[:, 2]]) & (ca[tri[:, 1]] != ca[tri[:, 2]])
        & (cb[tri[:, 0]] != cb[tri[:, 1]]) & (cb[tri[:, 0]] != cb[tri[:, 2]]) & (cb[tri[:, 1]] != cb[tri[:, 2]])
    )
    tri = tri[distinct]
    if not len(tri):
        return None
    rho, yaw, t = yaw_similarity(P[tri], Q[tri])
    ok = np.isfinite(rho)
    if not ok.any():
        return None
    rho, yaw, t = rho[ok], yaw[ok], t[ok]
    c, s = np.cos(yaw), np.sin(yaw)
    X = np.stack([c[:, None] * P[:, 0] - s[:, None] * P[:, 1],
                  s[:, None] * P[:, 0] + c[:, None] * P[:, 1],
                  np.broadcast_to(P[:, 2], (len(yaw), len(P)))], axis=-1)
    res = np.linalg.norm(rho[:, None, None] * X + t[:, None, :] - Q[None], axis=-1)
    inl = res < eps
    count = inl.sum(axis=1)
    mean_res = np.where(inl, res, 0.0).sum(axis=1) / np.maximum(count, 1)
    order = np.lexsort((mean_res, -count))
    # the raw count can include two candidates for one node; re-rank the leaders one-to-one
    best, best_key = None, None
    for h in order[:16]:
        m = _one_to_one(res[h], ca, cb, eps)
        key = (-int(m.sum()), float(res[h][m].mean()) if m.any() else math.inf)
        if best_key is None or key < best_key:
            best, best_key = m, key
    if best is None or best.sum() < 3:
        return None
    return best


def match_maps(g1: TopoMap, g2: TopoMap, i: int | None = None, j: int | None = None,
               seed: int | None = None, cfg: TopoConfig | None = None) -> MatchResult:
    """Object pairs between two maps and the similarity taking ``g1`` onto ``g2``."""
    cfg = cfg or TopoConfig()
    i = cfg.depth if i is None else i
    j = cfg.walks if j is None else j
    seed = cfg.seed if seed is None else seed
    if not len(g1) or not len(g2):
        return MatchResult([])
    rng1 = np.random.default_rng([seed, 1])
    rng2 = np.random.default_rng([seed, 2])
    D1 = map_descriptors(g1, i, j, rng1)
    D2 = map_descriptors(g2, i, j, rng2)
    vocab: dict = {}
    A = _stack(D1, vocab, -1)
    B = _stack(D2, vocab, -2)
    lab1 = np.array([n.label for n in g1.nodes], dtype=object)
    lab2 = np.array([n.label for n in g2.nodes], dtype=object)
    gate = lab1[:, None] == lab2[None, :]
    P1, P2 = g1.centroids, g2.centroids

    # labels and bearings only, then scale from the provisional pairs
    S0 = _similarity_matrix(A, B, 1.0, cfg, metric=False, mask=gate)
    rho0 = _scale_from_pairs(P1, P2, greedy_assign(S0), cfg.scale_window)

    v1 = np.array([n.volume for n in g1.nodes])
    v2 = np.array([n.volume for n in g2.nodes])
    size = np.exp(-np.abs(np.log(rho0**3 * v1[:, None] / v2[None, :])) / cfg.sigma_s)
    S = _similarity_matrix(A, B, rho0, cfg, mask=gate) * size
    idx_pairs = greedy_assign(S)
    id_pairs = [(g1.nodes[a].id, g2.nodes[b].id) for a, b in idx_pairs]
    result = MatchResult(id_pairs, scale_guess=rho0)
    cand = _candidates(S, idx_pairs, cfg.candidates_per_node)
    if len(cand) < 3:
        return result

    ca = np.array([a for a, _ in cand])
    cb = np.array([b for _, b in cand])
    Pa, Qb = P1[ca], P2[cb]
    eps = cfg.inlier_ratio * rho0
    mask = _ransac(Pa, Qb, ca, cb, eps, cfg.ransac_iters, np.random.default_rng([seed, 3]))
    if mask is None:
        return result
    # refit on inliers until the set stops changing
    for _ in range(10):
        rho, yaw, t = yaw_similarity(Pa[mask], Qb[mask])
        rho, yaw, t = float(rho), float(yaw), np.asarray(t, dtype=float)
        if not math.isfinite(rho):
            return result
        res = np.linalg.norm(apply_similarity(rho, yaw, t, Pa) - Qb, axis=1)
        new = _one_to_one(res, ca, cb, eps)
        if new.sum() < 3 or np.array_equal(new, mask):
            break
        mask = new
    if mask.sum() < 3:
        return result
    rho, yaw, t = yaw_similarity(Pa[mask], Qb[mask])
    rho, yaw, t = float(rho), float(yaw), np.asarray(t, dtype=float)
    res = np.linalg.norm(apply_similarity(rho, yaw, t, Pa) - Qb, axis=1)
    final = mask & (res < eps)
    if final.sum() < 3 or not math.isfinite(rho):
        return result
    result.rho, result.yaw, result.translation = rho, yaw, t
    result.inliers = sorted((g1.nodes[a].id, g2.nodes[b].id) for a, b in zip(ca[final], cb[final]))
    result.residual = float(np.sqrt((res[final] ** 2).mean()))
    return result


def relocalize(prior: TopoMap, query_objects, cfg: TopoConfig | None = None) -> MatchResult:
    """Similarity taking query-frame coordinates into the prior map's frame."""
    cfg = cfg or TopoConfig()
    objs = list(query_objects)
    if not objs:
        raise MatchFailed("query has no objects")
    q = build_topo_map(objs, cfg.k_nn, cfg.d_max)
    res = match_maps(q, prior, cfg=cfg)
    if not res.has_transform:
        raise MatchFailed(f"no consistent transform ({len(res.pairs)} candidate pairs)")
    return res
