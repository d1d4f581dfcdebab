"""Binary vessel mask -> measurable graph.

Pipeline: 2-subcycle thinning to a 1-px skeleton, exact Euclidean distance
transform for calibers (width = 2*dt at a skeleton point), node/edge tracing,
cycle breaking, spur pruning, and rooted Strahler/level assignment.

Conventions that keep tree metrics well-defined on choroidal networks, which
have no anatomical root in a 2-D mask:

* cycles are broken by dropping the minimum-mean-caliber edge of every cycle
  (anastomoses are thin relative to trunks), computed as a maximum-caliber
  spanning forest;
* the per-component root is the smaller-degree end node of the fattest edge,
  a proxy for the feeding vessel;
* leaf spurs shorter than 3 px and thinner than their parent's caliber are
  thinning artifacts and are deleted;
* an isolated loop keeps one synthetic node after its cycle edge is removed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _thin

from .raster import Mask

GRAPH_SCHEMA = "vgraph/1"

_N8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_STRUCT8 = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class Skeleton:
    """1-px medial axis plus the exact EDT of the source mask."""

    bits: np.ndarray
    dt: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]


@dataclass
class GraphNode:
    id: int
    x: int
    y: int
    degree: int = 0
    kind: str = "endpoint"


@dataclass
class GraphEdge:
    id: int
    node_a: int
    node_b: int
    polyline: np.ndarray   # (N, 2) as (x, y)
    calibers: np.ndarray   # (N,), 2*dt per polyline point
    strahler: int = 1
    level: int = 0
    component: int = 0

    def arc_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.polyline, axis=0), axis=1).sum())

    def mean_caliber(self) -> float:
        c = segment_calibers(self)
        return float(np.mean(c))


@dataclass
class VesselGraph:
    nodes: list[GraphNode] = field(default_factory=list)
    edges: list[GraphEdge] = field(default_factory=list)
    components: list[dict] = field(default_factory=list)  # {"id", "root_node"}

    def node_edges(self, node_id: int) -> list[GraphEdge]:
        return [e for e in self.edges if node_id in (e.node_a, e.node_b)]

    def root_of(self, component: int) -> int:
        return self.components[component]["root_node"]

    def junction_ids(self) -> list[int]:
        return [n.id for n in self.nodes if n.kind == "junction"]

    def terminal_ids(self) -> list[int]:
        """Degree-1 nodes excluding each component's root (the feeding end)."""
        roots = {c["root_node"] for c in self.components}
        return [n.id for n in self.nodes if n.degree <= 1 and n.id not in roots]


def skeletonize(mask: Mask) -> Skeleton:
    """Thin to a 1-px medial axis; dt is the exact EDT of the mask."""
    fg = mask.bits.astype(bool)
    sk = _thin(fg).astype(np.uint8)
    dt = ndimage.distance_transform_edt(fg)
    return Skeleton(bits=sk, dt=dt)


def segment_calibers(edge: GraphEdge, trim: int = 2) -> np.ndarray:
    """Per-point widths with `trim` points dropped at each node end.

    Junction blobs inflate the distance transform; trimming suppresses them.
    Short polylines (length <= 2*trim) are returned untrimmed.
    """
    c = np.asarray(edge.calibers, dtype=float)
    if len(c) > 2 * trim:
        return c[trim:len(c) - trim]
    return c


def build_graph(sk: Skeleton, prune_len: float = 3.0) -> VesselGraph:
    """Trace nodes/edges from a skeleton and assign topology attributes."""
    bits = sk.bits.astype(bool)
    h, w = bits.shape
    if not bits.any():
        return VesselGraph()

    ncount = ndimage.convolve(bits.astype(np.uint8), _STRUCT8, mode="constant") - bits
    ncount = np.where(bits, ncount, 0)

    node_px = bits & (ncount != 2)
    # pure cycles have no degree!=2 pixel; give each one synthetic node pixel
    lab, nlab = ndimage.label(bits, structure=_STRUCT8)
    for comp in range(1, nlab + 1):
        m = lab == comp
        if not node_px[m].any():
            ys, xs = np.nonzero(m)
            k = np.lexsort((xs, ys))[0]
            node_px[ys[k], xs[k]] = True

    clab, nclusters = ndimage.label(node_px, structure=_STRUCT8)
    reps = {}
    for c in range(1, nclusters + 1):
        ys, xs = np.nonzero(clab == c)
        cy, cx = ys.mean(), xs.mean()
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        order = np.lexsort((xs, ys, d2))
        reps[c] = (int(ys[order[0]]), int(xs[order[0]]))

    deg2 = bits & ~node_px
    visited = np.zeros_like(bits)
    raw_edges = []  # (cluster_a, cluster_b, pixel path [(y,x), ...])
    direct = set()

    def neighbors(y, x):
        for dy, dx in _N8:
            ny, nx = y + dy, x + dx
            if 0 <= ny < h and 0 <= nx < w and bits[ny, nx]:
                yield ny, nx

    cluster_pixels = {}
    ys_all, xs_all = np.nonzero(node_px)
    for y, x in zip(ys_all.tolist(), xs_all.tolist()):
        cluster_pixels.setdefault(clab[y, x], []).append((y, x))

    for c in sorted(cluster_pixels):
        for (y, x) in sorted(cluster_pixels[c]):
            for ny, nx in neighbors(y, x):
                if node_px[ny, nx]:
                    oc = clab[ny, nx]
                    if oc != c:
                        key = tuple(sorted([(y, x), (ny, nx)]))
                        if key not in direct:
                            direct.add(key)
                            raw_edges.append((c, oc, [(y, x), (ny, nx)]))
                    continue
                if visited[ny, nx]:
                    continue
                # walk the degree-2 chain
                path = [(y, x), (ny, nx)]
                visited[ny, nx] = True
                prev, cur = (y, x), (ny, nx)
                while True:
                    nxt = None
                    for my, mx in neighbors(*cur):
                        if (my, mx) != prev:
                            nxt = (my, mx)
                            break
                    if nxt is None:  # dead end inside a chain (shouldn't occur)
                        break
                    path.append(nxt)
                    if node_px[nxt]:
                        break
                    visited[nxt] = True
                    prev, cur = cur, nxt
                if node_px[path[-1]]:
                    raw_edges.append((c, int(clab[path[-1]]), path))

    # materialize nodes and edges
    node_ids = {c: i for i, c in enumerate(sorted(reps))}
    nodes = [GraphNode(id=node_ids[c], x=reps[c][1], y=reps[c][0]) for c in sorted(reps)]
    edges = []
    for (ca, cb, path) in raw_edges:
        ra, rb = reps[ca], reps[cb]
        pts = list(path)
        if pts[0] != ra:
            pts.insert(0, ra)
        if pts[-1] != rb:
            pts.append(rb)
        poly = np.array([(x, y) for (y, x) in pts], dtype=float)
        cal = 2.0 * sk.dt[[p[0] for p in pts], [p[1] for p in pts]]
        edges.append(GraphEdge(id=len(edges), node_a=node_ids[ca], node_b=node_ids[cb],
                               polyline=poly, calibers=np.asarray(cal, float)))

    edges = _break_cycles(len(nodes), edges)
    edges = _prune_spurs(nodes, edges, prune_len)
    nodes, edges = _dissolve_degree2(nodes, edges)
    graph = _assemble(nodes, edges)
    return graph


def _mean_caliber_untrimmed(e: GraphEdge) -> float:
    return float(np.mean(segment_calibers(e)))


def _break_cycles(n_nodes: int, edges: list[GraphEdge]) -> list[GraphEdge]:
    """Maximum-mean-caliber spanning forest == repeatedly deleting the
    thinnest edge of every cycle (self-loops and parallels included)."""
    parent = list(range(n_nodes))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    keep = []
    order = sorted(edges, key=lambda e: (-_mean_caliber_untrimmed(e), e.id))
    for e in order:
        ra, rb = find(e.node_a), find(e.node_b)
        if ra == rb:
            continue  # would close a cycle; this is the thinnest such edge
        parent[ra] = rb
        keep.append(e)
    return sorted(keep, key=lambda e: e.id)


def _prune_spurs(nodes, edges, prune_len):
    """Drop leaf stubs shorter than prune_len and thinner than their parent."""
    changed = True
    while changed:
        changed = False
        deg = {n.id: 0 for n in nodes}
        for e in edges:
            deg[e.node_a] += 1
            deg[e.node_b] += 1
        for e in list(edges):
            a_leaf = deg[e.node_a] == 1
            b_leaf = deg[e.node_b] == 1
            if a_leaf == b_leaf:
                continue  # isolated segment or interior edge
            attach = e.node_b if a_leaf else e.node_a
            others = [o for o in edges if o.id != e.id and attach in (o.node_a, o.node_b)]
            if not others:
                continue
            parent_cal = max(_mean_caliber_untrimmed(o) for o in others)
            if e.arc_length() < prune_len and e.arc_length() < parent_cal:
                edges.remove(e)
                changed = True
    return edges


def _dissolve_degree2(nodes, edges):
    """Merge edge pairs through degree-2 nodes left by breaking/pruning."""
    while True:
        deg = {n.id: [] for n in nodes}
        for e in edges:
            deg[e.node_a].append(e)
            deg[e.node_b].append(e)
        target = next((nid for nid, es in deg.items()
                       if len(es) == 2 and es[0].id != es[1].id), None)
        if target is None:
            break
        e1, e2 = deg[target]
        p1 = e1.polyline if e1.node_b == target else e1.polyline[::-1]
        c1 = e1.calibers if e1.node_b == target else e1.calibers[::-1]
        far1 = e1.node_a if e1.node_b == target else e1.node_b
        p2 = e2.polyline if e2.node_a == target else e2.polyline[::-1]
        c2 = e2.calibers if e2.node_a == target else e2.calibers[::-1]
        far2 = e2.node_b if e2.node_a == target else e2.node_a
        merged = GraphEdge(id=e1.id, node_a=far1, node_b=far2,
                           polyline=np.vstack([p1, p2[1:]]),
                           calibers=np.concatenate([c1, c2[1:]]))
        edges = [e for e in edges if e.id not in (e1.id, e2.id)] + [merged]
        nodes = [n for n in nodes if n.id != target]
    return nodes, sorted(edges, key=lambda e: e.id)


def _assemble(nodes, edges) -> VesselGraph:
    """Renumber, orient polylines, compute components/roots/levels/Strahler."""
    node_map = {n.id: i for i, n in enumerate(sorted(nodes, key=lambda n: n.id))}
    new_nodes = [GraphNode(id=node_map[n.id], x=n.x, y=n.y)
                 for n in sorted(nodes, key=lambda n: n.id)]
    new_edges = []
    for i, e in enumerate(sorted(edges, key=lambda e: e.id)):
        new_edges.append(GraphEdge(id=i, node_a=node_map[e.node_a],
                                   node_b=node_map[e.node_b],
                                   polyline=e.polyline, calibers=e.calibers))
    degree = {n.id: 0 for n in new_nodes}
    for e in new_edges:
        degree[e.node_a] += 1
        degree[e.node_b] += 1
    for n in new_nodes:
        n.degree = degree[n.id]
        n.kind = "junction" if n.degree >= 3 else "endpoint"

    # components
    parent = {n.id: n.id for n in new_nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in new_edges:
        parent[find(e.node_a)] = find(e.node_b)
    comp_of = {}
    comp_ids = {}
    for n in new_nodes:
        r = find(n.id)
        if r not in comp_ids:
            comp_ids[r] = len(comp_ids)
        comp_of[n.id] = comp_ids[r]

    incident = {n.id: [] for n in new_nodes}
    for e in new_edges:
        incident[e.node_a].append(e)
        incident[e.node_b].append(e)

    components = []
    for comp in range(len(comp_ids)):
        members = [n for n in new_nodes if comp_of[n.id] == comp]
        comp_edges = [e for e in new_edges if comp_of[e.node_a] == comp]
        if comp_edges:
            fattest = max(comp_edges, key=lambda e: (_mean_caliber_untrimmed(e), -e.id))
            a, b = fattest.node_a, fattest.node_b
            da, db = degree[a], degree[b]
            root = a if (da, a) <= (db, b) else b
        else:
            root = min(m.id for m in members)
        components.append({"id": comp, "root_node": root})
        # levels by BFS from root; each edge knows its parent-side node
        lvl = {}
        eparent = {}
        seen_nodes = {root}
        frontier = [(root, 0)]
        ordered = []
        while frontier:
            nid, depth = frontier.pop(0)
            for e in incident[nid]:
                if e.id in lvl:
                    continue
                lvl[e.id] = depth
                other = e.node_b if e.node_a == nid else e.node_a
                eparent[e.id] = nid
                ordered.append((e, other))
                if other not in seen_nodes:
                    seen_nodes.add(other)
                    frontier.append((other, depth + 1))
        for e, _far in ordered:
            e.level = lvl[e.id]
            e.component = comp
        # Strahler leaf-up: children of e hang off its far node
        for e, far in reversed(ordered):
            kids = [k for k in incident[far] if k.id != e.id and lvl.get(k.id, -1) == e.level + 1]
            if not kids:
                e.strahler = 1
            else:
                orders = sorted((k.strahler for k in kids), reverse=True)
                e.strahler = orders[0] + 1 if len(orders) >= 2 and orders[0] == orders[1] \
                    else orders[0]

    # orient polylines from node_a
    pos = {n.id: (n.x, n.y) for n in new_nodes}
    for e in new_edges:
        ax, ay = pos[e.node_a]
        if not (e.polyline[0][0] == ax and e.polyline[0][1] == ay):
            e.polyline = e.polyline[::-1].copy()
            e.calibers = e.calibers[::-1].copy()

    return VesselGraph(nodes=new_nodes, edges=new_edges, components=components)


def graph_to_dict(g: VesselGraph) -> dict:
    return {
        "schema": GRAPH_SCHEMA,
        "nodes": [{"id": n.id, "x": n.x, "y": n.y, "degree": n.degree,
                   "kind": n.kind} for n in g.nodes],
        "edges": [{"id": e.id, "node_a": e.node_a, "node_b": e.node_b,
                   "polyline": e.polyline.tolist(),
                   "calibers": e.calibers.tolist(),
                   "strahler": e.strahler, "level": e.level,
                   "component": e.component} for e in g.edges],
        "components": g.components,
    }


def graph_to_json(g: VesselGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1)


def graph_from_dict(doc: dict) -> VesselGraph:
    if doc.get("schema") != GRAPH_SCHEMA:
        raise ValueError(f"unsupported graph schema {doc.get('schema')!r}")
    g = VesselGraph()
    for n in doc["nodes"]:
        g.nodes.append(GraphNode(id=n["id"], x=n["x"], y=n["y"],
                                 degree=n["degree"], kind=n["kind"]))
    for e in doc["edges"]:
        g.edges.append(GraphEdge(id=e["id"], node_a=e["node_a"], node_b=e["node_b"],
                                 polyline=np.asarray(e["polyline"], float),
                                 calibers=np.asarray(e["calibers"], float),
                                 strahler=e["strahler"], level=e["level"],
                                 component=e["component"]))
    g.components = doc["components"]
    return g
