"""Analytic off-chip traffic and energy models.

Three transfer schemes are modeled, all in elements:

* baseline: layer-by-layer execution. Every map is written out and read
  back by the next layer; each skip edge adds one read of its source map.
  Filters are reloaded per image by default since only one layer's filters
  are held at a time.
* occam: the partition plan's transfers. Each resident span reads its
  input and writes its output once per image; filters stay chip-resident
  and amortize to zero. Internal boundary transfers travel chip-to-chip.
* square_tile: the same partitions executed with the largest square output
  tile that fits instead of full row-planes. Neighboring tiles' input
  regions overlap, so the overlap is refetched (no on-chip carryover
  between tiles), and overlapping intermediate rows are recomputed.

Energy folds transfer bytes and MAC counts through per-operation and
per-byte constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closure import Span, span_weight_elems
from .netspec import ShapedNetwork, layer_macs
from .partitioner import PartitionPlan

SCHEME_BASELINE = "baseline"
SCHEME_OCCAM = "occam"
SCHEME_SQUARE_TILE = "square_tile"


@dataclass(frozen=True)
class TrafficEstimate:
    scheme: str
    feature_map_elems: int
    weight_elems: int
    boundary_link_elems: int = 0
    recompute_elems: int = 0

    @property
    def total_elems(self) -> int:
        return self.feature_map_elems + self.weight_elems

    @property
    def dram_elems(self) -> int:
        # Link transfers move chip-to-chip instead of through memory.
        return self.total_elems - self.boundary_link_elems

    def total_bytes(self, element_bytes: int) -> int:
        return self.total_elems * element_bytes


@dataclass(frozen=True)
class EnergyConstants:
    pj_per_op: float = 0.43
    pj_per_dram_byte: float = 48.0
    pj_per_link_byte: float = 48.0


@dataclass(frozen=True)
class EnergyEstimate:
    compute_J: float
    dram_J: float
    link_J: float
    constants: EnergyConstants

    @property
    def total_J(self) -> float:
        return self.compute_J + self.dram_J + self.link_J


def span_macs(net: ShapedNetwork, span: Span) -> int:
    return sum(layer_macs(net, i) for i in range(span.start, span.end))


def mac_count(net: ShapedNetwork) -> int:
    """Total MACs for one image; identical across all three schemes."""
    return span_macs(net, Span(0, net.num_layers))


def baseline_traffic(net: ShapedNetwork, batch: int = 1,
                     reload_filters_per_image: bool = True) -> TrafficEstimate:
    """Layer-by-layer transfers: every map out and back in, plus skip reads."""
    feature = 0
    for i in range(net.num_layers):
        feature += net.map_elems[i] + net.map_elems[i + 1]
    feature += sum(net.map_elems[e.source] for e in net.spec.residuals)
    feature *= batch
    weights = sum(net.weight_elems)
    if reload_filters_per_image:
        weights *= batch
    return TrafficEstimate(SCHEME_BASELINE, feature, weights, boundary_link_elems=0)


def plan_traffic(plan: PartitionPlan) -> TrafficEstimate:
    """Transfers of a partition plan, split into feature, weight, and link parts.

    feature_map_elems covers span inputs/outputs and skip read-back
    penalties; weight_elems is nonzero only for non-resident fallback
    spans, whose filters cannot stay on-chip. feature + weight equals the
    plan's total transfer count. Link elements are the internal boundary
    transfers (everything except the first read and the last write).
    """
    fallback_weights = plan.fallback_weight_elems
    feature = plan.total_transfers - fallback_weights
    link = 2 * plan.batch * sum(s.output_elems for s in plan.spans[:-1])
    return TrafficEstimate(SCHEME_OCCAM, feature, fallback_weights,
                           boundary_link_elems=link)


@dataclass(frozen=True)
class SquareTileSpan:
    span: Span
    tile: int | None  # square output tile side; None when not resident
    resident: bool
    halo_elems: int  # extra input reads from overlapping tile closures
    recompute_elems: int  # overlapping intermediate rows computed again


@dataclass(frozen=True)
class SquareTileReport:
    estimate: TrafficEstimate
    spans: tuple[SquareTileSpan, ...]


def _band(lo: int, hi: int, kernel: int, stride: int, padding: int,
          size: int) -> tuple[int, int]:
    """Input interval feeding output positions [lo, hi], with exact clipping."""
    return (max(0, lo * stride - padding),
            min(size - 1, hi * stride - padding + kernel - 1))


def _tile_closure_regions(net: ShapedNetwork, span: Span, r0: int, r1: int,
                          c0: int, c1: int) -> list[tuple[int, int, int, int]]:
    """Exact (row_lo, row_hi, col_lo, col_hi) per map feeding an output tile."""
    regions = [(r0, r1, c0, c1)]
    rows, cols = (r0, r1), (c0, c1)
    for i in range(span.end - 1, span.start - 1, -1):
        layer = net.layer(i)
        h, w, _ = net.map_dims[i]
        rows = _band(rows[0], rows[1], layer.kernel_h, layer.stride, layer.padding, h)
        cols = _band(cols[0], cols[1], layer.kernel_w, layer.stride, layer.padding, w)
        regions.append((rows[0], rows[1], cols[0], cols[1]))
    regions.reverse()
    return regions


def _square_closure_elems(net: ShapedNetwork, span: Span, tile: int) -> int:
    """Steady-state elements held for a tile x tile output block of the span."""
    oh, ow, oc = net.map_dims[span.end]
    rows = min(tile, oh)
    cols = min(tile, ow)
    total = rows * cols * oc
    for i in range(span.end - 1, span.start - 1, -1):
        layer = net.layer(i)
        h, w, c = net.map_dims[i]
        rows = min(h, (rows - 1) * layer.stride + layer.kernel_h)
        cols = min(w, (cols - 1) * layer.stride + layer.kernel_w)
        total += rows * cols * c
    return total


def _max_square_tile(net: ShapedNetwork, span: Span, capacity_elems: int,
                     batch: int) -> int | None:
    weights = span_weight_elems(net, span)

    def fits(t: int) -> bool:
        return batch * _square_closure_elems(net, span, t) + weights < capacity_elems

    if not fits(1):
        return None
    oh, ow, _ = net.map_dims[span.end]
    lo, hi = 1, max(oh, ow)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid - 1
    return lo


def square_tile_comparison(net: ShapedNetwork, boundaries: tuple[int, ...],
                           capacity_elems: int, batch: int = 1) -> SquareTileReport:
    """Traffic for square-tile execution over an existing partition's spans.

    Per span: the base input read and output write, plus a halo refetch
    equal to the input-map cells covered by more than one tile's closure
    (counted once per extra covering tile). Overlap in intermediate maps is
    reported as recompute_elems but charged as compute, not traffic.
    """
    feature = 0
    weights = 0
    halo_total = 0
    recompute_total = 0
    details = []
    for a, b in zip(boundaries, boundaries[1:]):
        span = Span(a, b)
        feature += batch * (net.map_elems[a] + net.map_elems[b])
        tile = _max_square_tile(net, span, capacity_elems, batch)
        if tile is None:
            if b - a != 1:
                raise ValueError(f"square tiling cannot cover multi-layer span ({a}, {b})")
            weights += span_weight_elems(net, span)
            details.append(SquareTileSpan(span, None, False, 0, 0))
            continue
        oh, ow, _ = net.map_dims[b]
        coverage = [np.zeros(net.map_dims[m][:2], dtype=np.int32)
                    for m in range(a, b + 1)]
        for r0 in range(0, oh, tile):
            for c0 in range(0, ow, tile):
                regions = _tile_closure_regions(
                    net, span, r0, min(r0 + tile, oh) - 1, c0, min(c0 + tile, ow) - 1)
                for cov, (rl, rh, cl, ch) in zip(coverage, regions):
                    cov[rl:rh + 1, cl:ch + 1] += 1
        halo = int(np.maximum(coverage[0] - 1, 0).sum()) * net.map_dims[a][2] * batch
        recompute = 0
        for m, cov in enumerate(coverage[1:-1], start=a + 1):
            recompute += int(np.maximum(cov - 1, 0).sum()) * net.map_dims[m][2] * batch
        feature += halo
        halo_total += halo
        recompute_total += recompute
        details.append(SquareTileSpan(span, tile, True, halo, recompute))
    for e in _separated(boundaries, net):
        feature += 2 * batch * net.map_elems[e.source]
    link = 2 * batch * sum(net.map_elems[p] for p in boundaries[1:-1])
    estimate = TrafficEstimate(SCHEME_SQUARE_TILE, feature, weights,
                               boundary_link_elems=link, recompute_elems=recompute_total)
    return SquareTileReport(estimate, tuple(details))


def _separated(boundaries, net: ShapedNetwork):
    internal = boundaries[1:-1]
    return [e for e in net.spec.residuals
            if any(e.source < p <= e.dest for p in internal)]


def estimate_energy(traffic: TrafficEstimate, mac_count: int, element_bytes: int,
                    constants: EnergyConstants | None = None) -> EnergyEstimate:
    """Joules for a traffic estimate plus its compute."""
    k = constants or EnergyConstants()
    dram_bytes = traffic.dram_elems * element_bytes
    link_bytes = traffic.boundary_link_elems * element_bytes
    return EnergyEstimate(
        compute_J=mac_count * k.pj_per_op * 1e-12,
        dram_J=dram_bytes * k.pj_per_dram_byte * 1e-12,
        link_J=link_bytes * k.pj_per_link_byte * 1e-12,
        constants=k,
    )
