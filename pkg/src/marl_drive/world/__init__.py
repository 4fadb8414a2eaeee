"""Scenario geometry: maps, ray casting, collisions, lanes and checkpoints."""
from .geometry import Footprint, collide_vehicles, rect_corners, rects_overlap
from .intersection import (
    ARMS,
    ROUTES,
    ConfigError,
    IntersectionConfig,
    IntersectionMap,
    build_intersection,
    lane_violation,
    route_goal_arm,
)
from .maps import (
    MapParseError,
    OccupancyGrid,
    SegmentMap,
    contours,
    grid_to_segments,
    load_occupancy_grid,
    raycast,
    read_pgm,
    save_occupancy_grid,
    write_pgm,
)
from .track import (
    GATE_LABELS,
    N_GATES,
    LapProgress,
    NotATrack,
    RaceTrack,
    bundled_grid,
    bundled_track,
    checkpoint_crossing,
    load_track,
    make_stadium_grid,
    save_track,
    track_from_grid,
)


def collide_wall(fp: Footprint, world) -> bool:
    """True iff the footprint touches a wall segment or an occupied cell."""
    return bool(world.collides(fp.corners()))
