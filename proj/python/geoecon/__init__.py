"""Economic-activity estimation from paired satellite and street-view imagery."""

from ._core import (
    GeoEconError,
    Model,
    Store,
    align,
    haversine_km,
    latlon_to_tile,
    point_in_polygon,
    r_squared,
    run_task,
    synth,
    tile_bbox,
    tile_center,
    train,
)

__all__ = [
    "GeoEconError",
    "Model",
    "Store",
    "align",
    "haversine_km",
    "latlon_to_tile",
    "point_in_polygon",
    "r_squared",
    "run_task",
    "synth",
    "tile_bbox",
    "tile_center",
    "train",
]
