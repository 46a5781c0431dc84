"""Scene primitives: intentions, semantic-map rasters, region and graph."""

import numpy as np
import pytest

from intentsim.kinematics import ControlInput, Pose2, VehicleState
from intentsim.scene import (
    AgentState,
    Intention,
    RasterConfig,
    RegionConfig,
    SemanticMap,
    build_graph,
    condition_on_ego,
    in_degree,
    rasterize_map,
    select_local_agents,
)
from tests.conftest import make_agent


class TestIntention:
    def test_uniform_sums_to_one(self):
        q = Intention.uniform(81)
        assert q.count == 81
        np.testing.assert_allclose(q.p.sum(), 1.0, atol=1e-12)
        assert np.all(q.p == q.p[0])

    def test_one_hot(self):
        q = Intention.one_hot(9, 4)
        assert q.p[4] == 1.0 and q.p.sum() == 1.0

    def test_negative_mass_rejected(self):
        p = np.full(4, 0.25)
        p[0] = -0.05
        p[1] = 0.55
        with pytest.raises(ValueError):
            Intention(p)

    def test_wrong_total_rejected(self):
        with pytest.raises(ValueError):
            Intention(np.full(4, 0.3))

    def test_slightly_off_total_tolerated(self):
        p = np.full(5, 0.2)
        p[0] += 5e-10  # within the 1e-9 budget
        Intention(p)


class TestAgentState:
    def test_pedestrian_must_hold_center_one_hot(self):
        with pytest.raises(ValueError):
            AgentState(agent_id="p1", kind="pedestrian",
                       state=VehicleState(0, 0, 0, 1.0),
                       intention=Intention.uniform(81))
        ok = make_agent("p1", 0, 0, 0, 1.0, kind="pedestrian")
        assert ok.intention.p[40] == 1.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            AgentState(agent_id="x", kind="bicycle",
                       state=VehicleState(0, 0, 0, 0),
                       intention=Intention.uniform(81))


class TestSemanticMap:
    def test_from_geometry_computes_lane_headings(self):
        m = SemanticMap.from_geometry(
            [[[0, 0], [10, 0], [10, 10], [0, 10]]],
            [[[0.0, 0.0], [4.0, 0.0], [4.0, 3.0]]])
        pts, headings = m.lanes[0]
        assert pts.shape == (3, 2)
        assert headings[0] == pytest.approx(0.0)
        assert headings[1] == pytest.approx(np.pi / 2)

    def test_transformed_moves_geometry(self):
        m = SemanticMap.from_geometry([[[0, 0], [1, 0], [1, 1], [0, 1]]],
                                      [[[0.0, 0.0], [1.0, 0.0]]])
        t = m.transformed(Pose2(5.0, 0.0, 0.0))
        np.testing.assert_allclose(t.drivable[0][:, 0],
                                   m.drivable[0][:, 0] + 5.0)

    def test_degenerate_polygon_rejected(self):
        with pytest.raises(ValueError):
            SemanticMap.from_geometry([[[0, 0], [1, 0]]], [])


class TestRaster:
    def test_shape_and_binary_channels(self, straight_map, traster):
        r = rasterize_map(straight_map, Pose2(0.0, 0.0, 0.0), traster)
        assert r.shape == (3, 24, 24)
        assert set(np.unique(r[0])) <= {0.0, 1.0}
        assert set(np.unique(r[1])) <= {0.0, 1.0}

    def test_drivable_strip_along_y(self, straight_map, traster):
        """Road is |y| <= 5; cell centers sit at +-0.25, +-0.75, ..."""
        r = rasterize_map(straight_map, Pose2(0.0, 0.0, 0.0), traster)
        _, cy = traster.cell_centers()
        np.testing.assert_array_equal(r[0], (np.abs(cy) < 5.0).astype(float))

    def test_lane_occupancy_half_width(self, straight_map, traster):
        """Lane runs along y = 0 with half width 1.75; the center row at
        |y| = 1.75 is exactly on the boundary and counts as occupied."""
        r = rasterize_map(straight_map, Pose2(0.0, 0.0, 0.0), traster)
        _, cy = traster.cell_centers()
        np.testing.assert_array_equal(r[1], (np.abs(cy) <= 1.75).astype(float))

    def test_heading_channel_is_cos_relative_heading(self, straight_map, traster):
        r0 = rasterize_map(straight_map, Pose2(0.0, 0.0, 0.0), traster)
        assert np.all(r0[2][r0[1] == 1.0] == pytest.approx(1.0))
        # facing 90 degrees off the lane: cos(-pi/2) ~ 0
        r90 = rasterize_map(straight_map, Pose2(0.0, 0.0, np.pi / 2), traster)
        occupied = r90[1] == 1.0
        assert occupied.any()
        assert np.max(np.abs(r90[2][occupied])) < 1e-9

    def test_heading_alignment_rotates_view(self, straight_map, traster):
        """Facing +y, the road's extent shows up along the raster's forward
        axis instead of its lateral axis."""
        r = rasterize_map(straight_map, Pose2(0.0, 0.0, np.pi / 2), traster)
        cx, _ = traster.cell_centers()
        np.testing.assert_array_equal(r[0], (np.abs(cx) < 5.0).astype(float))

    def test_off_map_view_is_empty(self, straight_map, traster):
        r = rasterize_map(straight_map, Pose2(0.0, 500.0, 0.0), traster)
        assert r.sum() == 0.0

    def test_translation_equivariance_along_road(self, straight_map, traster):
        a = rasterize_map(straight_map, Pose2(0.0, 0.0, 0.0), traster)
        b = rasterize_map(straight_map, Pose2(30.0, 0.0, 0.0), traster)
        np.testing.assert_array_equal(a, b)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RasterConfig(size=1)
        with pytest.raises(ValueError):
            RasterConfig(resolution=0.0)


class TestRegionSelection:
    def agents_at(self, prims_count, coords):
        out = [make_agent("ego", 0.0, 0.0, 0.0, 5.0, kind="ego",
                          count=prims_count)]
        for i, (x, y) in enumerate(coords):
            out.append(make_agent(f"a{i}", x, y, 0.0, 5.0, count=prims_count))
        return out

    def test_rectangle_is_inclusive(self, tprims):
        agents = self.agents_at(tprims.count, [
            (40.0, 0.0), (-10.0, 0.0), (0.0, 25.0), (0.0, -25.0),
            (40.0 + 1e-6, 0.0), (-10.0 - 1e-6, 0.0), (0.0, 25.0 + 1e-6),
        ])
        kept = select_local_agents(agents, "ego", RegionConfig())
        ids = [a.agent_id for a in kept]
        assert ids == ["ego", "a0", "a1", "a2", "a3"]

    def test_region_follows_ego_heading(self, tprims):
        """With the ego facing +y, 'ahead' means larger world y."""
        ego = make_agent("ego", 0.0, 0.0, np.pi / 2, 5.0, kind="ego",
                         count=tprims.count)
        ahead = make_agent("up", 0.0, 35.0, 0.0, 5.0, count=tprims.count)
        behind = make_agent("down", 0.0, -15.0, 0.0, 5.0, count=tprims.count)
        kept = select_local_agents([ego, ahead, behind], "ego", RegionConfig())
        assert [a.agent_id for a in kept] == ["ego", "up"]

    def test_missing_ego_raises(self, tprims):
        with pytest.raises(ValueError):
            select_local_agents(self.agents_at(tprims.count, [])[1:], "ego")


class TestGraph:
    def test_edges_sorted_by_target_then_source(self, tprims, straight_map,
                                                traster):
        agents = [
            make_agent("ego", 0.0, 0.0, 0.0, 5.0, kind="ego", count=tprims.count),
            make_agent("a", -8.0, 0.0, 0.0, 5.0, count=tprims.count),
            make_agent("b", 8.0, 0.0, 0.0, 5.0, count=tprims.count),
        ]
        g = build_graph(agents, tprims, straight_map, raster_config=traster)
        assert g.edges == ((1, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2))
        assert g.ego_index == 0
        assert in_degree(g, 0) == 2

    def test_radius_boundary_is_inclusive(self, tprims, straight_map, traster):
        agents = [
            make_agent("ego", 0.0, 0.0, 0.0, 5.0, kind="ego", count=tprims.count),
            make_agent("edge", 25.0, 0.0, 0.0, 5.0, count=tprims.count),
            make_agent("far", 51.0, 0.0, 0.0, 5.0, count=tprims.count),
        ]
        g = build_graph(agents, tprims, straight_map, raster_config=traster)
        assert (1, 0) in g.edges and (0, 1) in g.edges
        assert not any(2 in e for e in g.edges)

    def test_single_agent_graph_has_no_edges(self, tprims, straight_map,
                                             traster):
        g = build_graph([make_agent("ego", 0, 0, 0, 5.0, kind="ego",
                                    count=tprims.count)],
                        tprims, straight_map, raster_config=traster)
        assert g.edges == ()
        assert len(g.nodes) == 1

    def test_duplicate_ids_rejected(self, tprims, straight_map, traster):
        agents = [make_agent("x", 0, 0, 0, 1.0, count=tprims.count),
                  make_agent("x", 5, 0, 0, 1.0, count=tprims.count)]
        with pytest.raises(ValueError):
            build_graph(agents, tprims, straight_map, raster_config=traster)

    def test_two_egos_rejected(self, tprims, straight_map, traster):
        agents = [make_agent("e1", 0, 0, 0, 1.0, kind="ego", count=tprims.count),
                  make_agent("e2", 5, 0, 0, 1.0, kind="ego", count=tprims.count)]
        with pytest.raises(ValueError):
            build_graph(agents, tprims, straight_map, raster_config=traster)

    def test_precomputed_rasters_are_used(self, tprims, straight_map, traster):
        agents = [make_agent("ego", 0, 0, 0, 5.0, kind="ego", count=tprims.count)]
        marker = np.zeros((3, traster.size, traster.size))
        marker[0, 0, 0] = 42.0
        g = build_graph(agents, tprims, straight_map, raster_config=traster,
                        rasters=[marker])
        assert g.nodes[0].raster[0, 0, 0] == 42.0

    def test_nodes_carry_future_state_grids(self, tgraph, tprims):
        assert tgraph.nodes[0].future.x.shape == (tprims.side, tprims.side)


class TestConditioning:
    def test_condition_removes_only_ego_in_edges(self, tgraph):
        ego = tgraph.ego_index
        before = set(tgraph.edges)
        gc = condition_on_ego(tgraph, ControlInput(-4.0, 0.0))
        after = set(gc.edges)
        assert in_degree(gc, ego) == 0
        assert before - after == {e for e in before if e[1] == ego}

    def test_conditioned_intention_is_snapped_one_hot(self, tgraph, tprims):
        gc = condition_on_ego(tgraph, ControlInput(-3.9, 0.01))
        q = gc.nodes[gc.ego_index].agent.intention.p
        want = tprims.nearest_index(ControlInput(-3.9, 0.01))
        assert q[want] == 1.0 and q.sum() == 1.0
        assert gc.ego_conditioned
        assert gc.ego_control == ControlInput(-3.9, 0.01)

    def test_other_nodes_untouched(self, tgraph):
        gc = condition_on_ego(tgraph, ControlInput(0.0, 0.0))
        for i, node in enumerate(gc.nodes):
            if i != gc.ego_index:
                assert node is tgraph.nodes[i]

    def test_no_ego_graph_cannot_be_conditioned(self, tprims, straight_map,
                                                traster):
        g = build_graph([make_agent("a", 0, 0, 0, 5.0, count=tprims.count)],
                        tprims, straight_map, raster_config=traster)
        with pytest.raises(ValueError):
            condition_on_ego(g, ControlInput(0.0, 0.0))
