"""Ingestion, map persistence, evaluation and the CLI entry point in one namespace.

The implementations live in io, mapping, metrics and cli; this module gathers
the pipeline-level API.
"""

from .cli import main as cli
from .io import Frame, MapObject, ObjectMapFile, iter_frames, read_frames, read_map, write_frames, write_map
from .mapping import Mapper, MappingConfig, run_mapping
from .metrics import eval_map, iou_2d, iou_3d, match_objects, yaw_error_deg

ingest = iter_frames

__all__ = [
    "Frame", "MapObject", "ObjectMapFile", "Mapper", "MappingConfig",
    "ingest", "iter_frames", "read_frames", "write_frames", "read_map", "write_map",
    "run_mapping", "eval_map", "match_objects", "iou_2d", "iou_3d", "yaw_error_deg", "cli",
]
