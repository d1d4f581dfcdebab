import json

import numpy as np
import pytest
from scipy import ndimage

from chorovessel.raster import Mask
from chorovessel.synth import TreeSpec, generate, stamp_tube
from chorovessel.vesselgraph import (
    GraphEdge,
    build_graph,
    graph_from_dict,
    graph_to_dict,
    graph_to_json,
    segment_calibers,
    skeletonize,
)


def capsule_bar(length=50.0, width=7.0, canvas=(24, 80), x0=12.0):
    """Round-capped horizontal bar; ground-truth length between cap centers."""
    bits = np.zeros(canvas, dtype=np.uint8)
    y = canvas[0] / 2.0
    pts = np.array([[x0, y], [x0 + length, y]])
    stamp_tube(bits, pts, width, width)
    return Mask(bits)


def make_y_mask(trunk_w=9.0, leg_w=6.0):
    bits = np.zeros((128, 144), dtype=np.uint8)
    stamp_tube(bits, np.array([[15.0, 64.0], [60.0, 64.0]]), trunk_w, trunk_w)
    stamp_tube(bits, np.array([[60.0, 64.0], [95.0, 99.0]]), leg_w, leg_w)
    stamp_tube(bits, np.array([[60.0, 64.0], [95.0, 29.0]]), leg_w, leg_w)
    return Mask(bits)


def random_blob_mask(rng, size=48):
    field = ndimage.gaussian_filter(rng.random((size, size)), 2.5)
    m = field > np.quantile(field, 0.75)
    return Mask(m.astype(np.uint8))


def brute_force_edt(bits: np.ndarray) -> np.ndarray:
    """O(n^2) nearest-background search; exact oracle for small grids."""
    h, w = bits.shape
    fy, fx = np.nonzero(bits)
    by, bx = np.nonzero(bits == 0)
    out = np.zeros((h, w))
    if by.size == 0:
        out[:, :] = np.inf
        return out
    for y, x in zip(fy, fx):
        out[y, x] = np.sqrt(((by - y) ** 2 + (bx - x) ** 2).min())
    return out


class TestSkeletonize:
    def test_bar_gives_single_path_of_expected_length(self):
        mask = capsule_bar()
        sk = skeletonize(mask)
        g = build_graph(sk)
        assert len(g.edges) == 1
        assert len(g.nodes) == 2
        arc = g.edges[0].arc_length()
        assert abs(arc - 50.0) <= 2.0
        # dt along the centerline of a 7-wide bar
        ys, xs = np.nonzero(sk.bits)
        mid = (xs > 20) & (xs < 55)
        assert np.all(np.abs(sk.dt[ys[mid], xs[mid]] - 3.5) <= 0.5)

    def test_empty_mask(self):
        sk = skeletonize(Mask(np.zeros((16, 16), np.uint8)))
        assert sk.bits.sum() == 0
        g = build_graph(sk)
        assert g.nodes == [] and g.edges == []

    def test_isolated_pixel_retained(self):
        bits = np.zeros((9, 9), np.uint8)
        bits[4, 4] = 1
        sk = skeletonize(Mask(bits))
        assert sk.bits[4, 4] == 1
        g = build_graph(sk)
        assert len(g.nodes) == 1 and len(g.edges) == 0
        assert g.components[0]["root_node"] == g.nodes[0].id

    def test_skeleton_subset_and_components_preserved(self):
        rng = np.random.default_rng(0)
        s8 = np.ones((3, 3), int)
        for _ in range(25):
            mask = random_blob_mask(rng)
            sk = skeletonize(mask)
            assert not np.any(sk.bits & ~mask.bits)
            _, n_before = ndimage.label(mask.bits, structure=s8)
            _, n_after = ndimage.label(sk.bits, structure=s8)
            assert n_before == n_after

    def test_dt_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            mask = random_blob_mask(rng, size=32)
            sk = skeletonize(mask)
            oracle = brute_force_edt(mask.bits)
            np.testing.assert_allclose(sk.dt[mask.bits == 1],
                                       oracle[mask.bits == 1], atol=1e-9)


class TestBuildGraph:
    def test_single_path(self):
        g = build_graph(skeletonize(capsule_bar()))
        assert len(g.edges) == 1
        e = g.edges[0]
        assert e.strahler == 1 and e.level == 0
        assert all(n.kind == "endpoint" for n in g.nodes)
        # polyline starts/ends at node coordinates
        pos = {n.id: (n.x, n.y) for n in g.nodes}
        assert tuple(e.polyline[0]) == pos[e.node_a]
        assert tuple(e.polyline[-1]) == pos[e.node_b]

    def test_symmetric_y(self):
        g = build_graph(skeletonize(make_y_mask()))
        assert len(g.edges) == 3
        junctions = [n for n in g.nodes if n.kind == "junction"]
        assert len(junctions) == 1 and junctions[0].degree == 3
        by_strahler = sorted(e.strahler for e in g.edges)
        assert by_strahler == [1, 1, 2]
        trunk = max(g.edges, key=lambda e: np.mean(segment_calibers(e)))
        assert trunk.strahler == 2
        # root sits at the trunk's free end, so the two leg tips are terminals
        assert len(g.terminal_ids()) == 2
        assert len([n for n in g.nodes if n.degree == 1]) == 3

    def test_three_generation_tree(self):
        spec = TreeSpec(width=512, height=512, root=(50.0, 256.0),
                        generations=3, length_range=(110.0, 110.0),
                        branch_angles_deg=(35.0, -35.0), root_width=12.0,
                        taper=0.7, seed=5)
        mask, _, gt = generate(spec)
        g = build_graph(skeletonize(mask))
        assert len([n for n in g.nodes if n.kind == "junction"]) == gt.junction_count == 3
        assert len(g.terminal_ids()) == gt.terminal_count == 4
        root_edge = max(g.edges, key=lambda e: np.mean(segment_calibers(e)))
        assert root_edge.strahler == 3
        assert sorted(set(e.level for e in g.edges)) == [0, 1, 2]

    def test_euler_property_on_fuzzed_masks(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            mask = random_blob_mask(rng, size=40)
            g = build_graph(skeletonize(mask))
            assert len(g.edges) == len(g.nodes) - len(g.components)

    def test_strahler_bounded_by_terminals(self):
        rng = np.random.default_rng(8)
        for _ in range(60):
            mask = random_blob_mask(rng, size=56)
            g = build_graph(skeletonize(mask))
            terms = g.terminal_ids()
            for e in g.edges:
                t = sum(1 for nid in terms
                        if any(nid in (k.node_a, k.node_b) for k in g.edges
                               if k.component == e.component))
                t = max(t, 1)
                assert e.strahler <= int(np.ceil(np.log2(t))) + 1

    def test_degrees_match_incidences(self):
        g = build_graph(skeletonize(make_y_mask()))
        for n in g.nodes:
            assert n.degree == len(g.node_edges(n.id))


class TestSegmentCalibers:
    def test_constant_width_bar(self):
        g = build_graph(skeletonize(capsule_bar(length=60.0, width=7.0,
                                                canvas=(24, 90))))
        cal = segment_calibers(g.edges[0])
        assert np.all(np.abs(cal - 7.0) <= 1.0)

    def test_two_point_edge_returns_untrimmed(self):
        e = GraphEdge(id=0, node_a=0, node_b=1,
                      polyline=np.array([[0.0, 0.0], [1.0, 0.0]]),
                      calibers=np.array([4.0, 4.0]))
        assert segment_calibers(e, trim=2).tolist() == [4.0, 4.0]

    def test_tapered_edge(self):
        bits = np.zeros((40, 160), np.uint8)
        stamp_tube(bits, np.array([[15.0, 20.0], [145.0, 20.0]]), 9.0, 3.0)
        g = build_graph(skeletonize(Mask(bits)))
        assert len(g.edges) == 1
        cal = segment_calibers(g.edges[0])
        assert abs(cal.min() - 3.0) <= 1.0
        assert abs(cal.max() - 9.0) <= 1.0


class TestExport:
    def test_json_round_trip(self):
        g = build_graph(skeletonize(make_y_mask()))
        doc = json.loads(graph_to_json(g))
        assert doc["schema"] == "vgraph/1"
        g2 = graph_from_dict(doc)
        assert len(g2.edges) == len(g.edges)
        for a, b in zip(g.edges, g2.edges):
            assert a.strahler == b.strahler and a.level == b.level
            np.testing.assert_allclose(a.polyline, b.polyline)

    def test_bad_schema_rejected(self):
        with pytest.raises(ValueError, match="schema"):
            graph_from_dict({"schema": "vgraph/9", "nodes": [], "edges": [],
                             "components": []})
