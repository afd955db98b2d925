"""Row-plane footprints for contiguous layer ranges.

Producing a band of T output row-planes at the end of a layer range
requires a band of rows in every earlier feature map of the range: a
layer with kernel height k and stride s maps r output rows back to
(r - 1) * s + k input rows, and stacking layers compounds the band.
These functions compute that per-map band (steady-state, clipped to each
map's height), the on-chip element count it occupies together with the
range's weights, and the largest tile height whose footprint stays under
a capacity budget.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .netspec import ShapedNetwork


@dataclass(frozen=True)
class Span:
    """A contiguous layer range: layers start..end-1, feature maps start..end."""

    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    @property
    def num_layers(self) -> int:
        return self.end - self.start

    def maps(self):
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class ClosureFootprint:
    """On-chip footprint of a span executed at a given tile height.

    ``closure_elems`` counts one image's live rows across all maps of the
    span (including the T in-flight output rows); ``total_elems`` is
    ``batch * closure_elems + weight_elems``. The capacity test is strict:
    a footprint equal to the capacity does not fit.
    """

    span: Span
    tile_rows: int
    batch: int
    rows_per_map: tuple[int, ...]
    closure_elems: int
    weight_elems: int
    total_elems: int

    def fits(self, capacity_elems: int) -> bool:
        return self.total_elems < capacity_elems


def _check_span(net: ShapedNetwork, span: Span) -> None:
    if span.end > net.num_layers:
        raise ValueError(f"span {span} exceeds network with {net.num_layers} layers")


def rows_required(net: ShapedNetwork, span: Span, tile_rows: int) -> list[int]:
    """Per-map row counts needed to produce tile_rows output rows of the span.

    Backward recurrence from the span output; each count is clipped to its
    map's height, so oversized tile requests saturate instead of failing.
    Boundary truncation from padding is deliberately ignored: this is the
    widest position of the sliding band, which is what a capacity bound
    must cover.
    """
    _check_span(net, span)
    if tile_rows < 1:
        raise ValueError("tile_rows must be >= 1")
    rows = [min(tile_rows, net.map_height(span.end))]
    for i in range(span.end - 1, span.start - 1, -1):
        layer = net.layer(i)
        needed = (rows[-1] - 1) * layer.stride + layer.kernel_h
        rows.append(min(net.map_height(i), needed))
    rows.reverse()
    return rows


def closure_elems(net: ShapedNetwork, span: Span, tile_rows: int) -> int:
    """Elements of one image's live rows across the span's maps.

    Counts rows_required rows for maps start..end-1 plus the tile_rows
    in-flight output rows of map end. Residual edges inside the span add
    nothing; their source rows are already counted.
    """
    rows = rows_required(net, span, tile_rows)
    total = 0
    for m, r in zip(span.maps(), rows):
        _, w, c = net.map_dims[m]
        total += r * w * c
    return total


def span_weight_elems(net: ShapedNetwork, span: Span) -> int:
    return sum(net.weight_elems[span.start:span.end])


def span_footprint(net: ShapedNetwork, span: Span, tile_rows: int, batch: int = 1) -> ClosureFootprint:
    """Full footprint of a span at a tile height: batched closure plus weights.

    Feature rows scale with the batch; weights are shared across the batch.
    """
    if batch < 1:
        raise ValueError("batch must be >= 1")
    rows = rows_required(net, span, tile_rows)
    closure = 0
    for m, r in zip(span.maps(), rows):
        _, w, c = net.map_dims[m]
        closure += r * w * c
    weights = span_weight_elems(net, span)
    return ClosureFootprint(
        span=span,
        tile_rows=tile_rows,
        batch=batch,
        rows_per_map=tuple(rows),
        closure_elems=closure,
        weight_elems=weights,
        total_elems=batch * closure + weights,
    )


def max_tile_rows(net: ShapedNetwork, span: Span, capacity_elems: int, batch: int = 1) -> int | None:
    """Largest tile height whose span footprint fits the capacity, or None.

    The footprint is monotone non-decreasing in the tile height, so a
    binary search over [1, output map height] finds the largest fitting
    value. None means even a single row-plane does not fit.
    """
    if capacity_elems < 1:
        raise ValueError("capacity_elems must be >= 1")
    _check_span(net, span)
    if not span_footprint(net, span, 1, batch).fits(capacity_elems):
        return None
    lo, hi = 1, net.map_height(span.end)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if span_footprint(net, span, mid, batch).fits(capacity_elems):
            lo = mid
        else:
            hi = mid - 1
    return lo
