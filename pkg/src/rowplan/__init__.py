"""Traffic-optimal partitioning and row-plane tiling for CNN inference.

Plans how to split a convolutional stack across on-chip-resident spans so
that off-chip transfers are minimized for a given memory capacity, models
the resulting multi-chip pipeline, and validates the analytic transfer
model with a desk-scale tiled executor.
"""

from .closure import Span, ClosureFootprint, max_tile_rows, rows_required, span_footprint
from .netspec import (
    NetworkError,
    NetworkSpec,
    ShapedNetwork,
    infer_shapes,
    load_network,
    parse_network,
    total_resident_footprint,
)
from .partitioner import (
    PartitionPlan,
    brute_force_partition,
    optimal_partition,
    validate_plan,
)

__all__ = [
    "Span",
    "ClosureFootprint",
    "NetworkError",
    "NetworkSpec",
    "ShapedNetwork",
    "PartitionPlan",
    "parse_network",
    "load_network",
    "infer_shapes",
    "total_resident_footprint",
    "rows_required",
    "span_footprint",
    "max_tile_rows",
    "optimal_partition",
    "brute_force_partition",
    "validate_plan",
]
