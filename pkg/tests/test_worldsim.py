from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from src.errors import DomainError, GenerationError, WorldFormatError
from src.models import CaveParams, SensorModel
from src.raycast import first_hit, pack_cells, unpack_cells, walk_cells
from src.worldsim import (
    DUST_INTENSITY_MAX,
    GroundTruthWorld,
    collision_free_segment,
    generate_cave,
    sensor_directions,
    simulate_scan,
    spawn_point,
    world_statistics,
)

SMALL_CAVE = CaveParams(tunnel_count=2, tunnel_width=2.0, tunnel_length_mean=10.0,
                        tunnel_length_std=0.0, dome_count=0, resolution=0.4)


# ── Worlds ────────────────────────────────────────────────────────────────────

def test_room_geometry(room) -> None:
    lo, hi = room.extents
    assert np.allclose(lo, -3.0) and np.allclose(hi, 3.0)
    assert room.free_count == 20 ** 3
    assert room.free_volume == pytest.approx(64.0)
    assert room.is_free(np.array([1.9, 1.9, 1.9]))
    assert not room.is_free(np.array([2.05, 0.0, 0.0]))


def test_outside_extents_is_rock(room) -> None:
    assert room.occupied_at(np.array([[10.0, 0.0, 0.0]]))[0]
    assert not room.in_extents(np.array([10.0, 0.0, 0.0]))


def test_corridor_base_and_spawns(corridor) -> None:
    assert np.allclose(corridor.base_station, [1.1, 0.1, 0.1])
    assert np.allclose(corridor.spawn_points[:, 0], [2.1, 3.1, 4.1])
    assert np.allclose(spawn_point(corridor, 4), corridor.spawn_points[1])


def test_from_occupancy_defaults_base_to_first_free_voxel() -> None:
    occ = np.ones((4, 4, 4), dtype=bool)
    occ[2, 1, 3] = False
    world = GroundTruthWorld.from_occupancy(occ, 0.5, origin_index=(-2, 0, 0))
    assert np.allclose(world.base_station, [0.25, 0.75, 1.75])
    assert np.allclose(world.spawn_points, [world.base_station])


def test_base_in_rock_rejected() -> None:
    occ = np.ones((3, 3, 3), dtype=bool)
    occ[1, 1, 1] = False
    with pytest.raises(WorldFormatError) as info:
        GroundTruthWorld.from_occupancy(occ, 1.0, base_station=np.array([0.5, 0.5, 0.5]))
    assert info.value.field == "base_station"


def test_rock_distance_in_room(room) -> None:
    d = room.rock_distance(np.array([[0.1, 0.1, 0.1]]))
    assert d[0] == pytest.approx(2.0)


def test_collision_free_segment(room) -> None:
    a, b = np.array([-1.0, 0.1, 0.1]), np.array([1.0, 0.1, 0.1])
    assert collision_free_segment(room, a, b, clearance=0.5)
    assert collision_free_segment(room, b, a, clearance=0.5)
    assert not collision_free_segment(room, a, b, clearance=1.2)
    assert not collision_free_segment(room, np.zeros(3), np.array([3.0, 0.0, 0.0]), clearance=0.0)


def test_lattice_faces_count_as_rock() -> None:
    open_box = GroundTruthWorld.from_occupancy(np.zeros((10, 10, 10), dtype=bool), 0.2)
    d = open_box.rock_distance(np.array([[0.1, 0.9, 0.9], [1.1, 0.9, 0.9], [-0.1, 1.0, 1.0]]))
    assert d[0] == pytest.approx(0.2)
    assert d[1] == pytest.approx(1.0)
    assert d[2] == 0.0

    hugging = np.array([0.5, 0.1, 1.0]), np.array([1.5, 0.1, 1.0])
    assert not collision_free_segment(open_box, *hugging, clearance=0.3)
    assert collision_free_segment(open_box, *hugging, clearance=0.15)
    assert collision_free_segment(open_box, np.array([0.5, 1.0, 1.0]), np.array([1.5, 1.0, 1.0]), clearance=0.5)


def test_world_statistics(room) -> None:
    stats = world_statistics(room, bin_width=0.5)
    assert stats.free_cells == 8000
    assert stats.free_volume == pytest.approx(64.0)
    assert stats.width_counts.sum() > 0
    assert all(hi > lo for lo, hi, _ in stats.histogram_rows())


# ── Generation ────────────────────────────────────────────────────────────────

def test_generation_is_deterministic() -> None:
    assert generate_cave(7, SMALL_CAVE) == generate_cave(7, SMALL_CAVE)


def test_generated_cave_is_connected_and_bounded() -> None:
    world = generate_cave(3, SMALL_CAVE)
    free = ~world.occupancy
    labels, count = ndimage.label(free, structure=np.ones((3, 3, 3)))
    assert count == 1
    assert world.is_free(world.base_station)
    assert world.occupancy[0].all() and world.occupancy[-1].all()
    assert world.occupancy[:, :, 0].all() and world.occupancy[:, :, -1].all()
    assert world.free_volume > 0


def test_generation_rejects_narrow_tunnels() -> None:
    with pytest.raises(GenerationError):
        generate_cave(1, CaveParams(tunnel_width=0.3, resolution=0.2))


def test_generation_needs_a_junction() -> None:
    with pytest.raises(GenerationError):
        generate_cave(1, CaveParams(tunnel_count=1))


# ── Sensing ───────────────────────────────────────────────────────────────────

def test_sensor_directions_are_unit_and_start_at_heading() -> None:
    model = SensorModel(horizontal_rays=8, vertical_rays=3, vfov=30.0)
    dirs = sensor_directions(model, heading=np.pi / 2)
    assert dirs.shape == (24, 3)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
    middle = dirs[8]                       # elevation 0, first azimuth
    assert np.allclose(middle, [0.0, 1.0, 0.0], atol=1e-12)


def test_scan_ranges_to_walls(wall_world) -> None:
    model = SensorModel(horizontal_rays=4, vertical_rays=1, max_range=50.0)
    scan = simulate_scan(wall_world, np.array([0.1, 0.1, 0.1]), 0.0, model, rng_seed=1)
    assert len(scan) == 4
    assert np.allclose(scan.ranges, [4.9, 1.7, 0.9, 1.9], atol=1e-9)
    assert scan.endpoints[0, 0] == pytest.approx(5.0)
    assert np.allclose(scan.intensities, 1.0 - scan.ranges / 50.0)


def test_scan_short_range_records_misses(wall_world) -> None:
    model = SensorModel(horizontal_rays=4, vertical_rays=1, max_range=3.0)
    scan = simulate_scan(wall_world, np.array([0.1, 0.1, 0.1]), 0.0, model, rng_seed=1)
    assert len(scan) == 3
    assert np.allclose(scan.miss_directions, [[1.0, 0.0, 0.0]])
    assert np.allclose(scan.miss_ranges, [3.0])


def test_scan_dust_is_deterministic_and_dim(room) -> None:
    model = SensorModel(horizontal_rays=36, vertical_rays=4, dust_rate=20.0, dust_range_max=1.5)
    a = simulate_scan(room, np.zeros(3), 0.0, model, rng_seed=42)
    b = simulate_scan(room, np.zeros(3), 0.0, model, rng_seed=42)
    assert np.array_equal(a.ranges, b.ranges)
    surface = 36 * 4
    dust = a.intensities[surface:]
    assert len(dust) > 0
    assert (dust < DUST_INTENSITY_MAX).all()
    assert (a.ranges[surface:] <= 1.5).all()


def test_scan_outside_world_is_domain_error(room) -> None:
    with pytest.raises(DomainError):
        simulate_scan(room, np.array([10.0, 0.0, 0.0]), 0.0, SensorModel(), rng_seed=0)


# ── Ray marching ──────────────────────────────────────────────────────────────

def test_walk_cells_includes_start_and_end_cells() -> None:
    ids, cells = walk_cells(np.array([0.1, 0.1, 0.1]), np.array([[1.0, 0.0, 0.0]]),
                            np.array([1.0]), 0.2)
    assert (ids == 0).all()
    assert cells[:, 0].tolist() == [0, 1, 2, 3, 4, 5]
    assert (cells[:, 1:] == 0).all()


def test_first_hit_never_reports_origin_cell() -> None:
    occ = np.ones((3, 3, 3), dtype=bool)
    hit, distance = first_hit(occ, np.zeros(3, dtype=np.int64), np.array([1.5, 1.5, 1.5]),
                              np.array([[1.0, 0.0, 0.0]]), 10.0, 1.0)
    assert hit[0]
    assert distance[0] == pytest.approx(0.5)


def test_cell_keys_preserve_negative_indices() -> None:
    cells = np.array([[-3, 0, 7], [12, -40, -1]])
    assert np.array_equal(unpack_cells(pack_cells(cells)), cells)
