"""Capacity-constrained partitioning of a layer chain into resident spans.

Finds the boundary set that minimizes off-chip element transfers subject
to every span's on-chip footprint (closure rows plus weights) fitting the
capacity. A span that fits transfers only its input and output maps, batch
scaled; filters are chip-resident and amortize to zero over the image
stream. Splitting a range at p costs the two sub-ranges' transfers plus a
read-back penalty for every skip edge separated by p. The optimum over
all boundary sets is computed by an O(n^3) dynamic program; an
exponential enumeration oracle over all 2^(n-1) boundary sets provides an
independent cross-check for small chains.

A single layer whose footprint exceeds the capacity even at one output
row cannot be chip-resident. It becomes its own span, flagged
``resident=False``, and is charged a lower-bound transfer cost that
includes its weights.
"""

from __future__ import annotations

from dataclasses import dataclass

from .closure import ClosureFootprint, Span, max_tile_rows, span_footprint
from .netspec import ShapedNetwork, layer_macs


def _span_macs(net: ShapedNetwork, a: int, b: int) -> int:
    return sum(layer_macs(net, i) for i in range(a, b))

BRUTE_FORCE_MAX_LAYERS = 16


class OracleSizeError(ValueError):
    """Raised when brute_force_partition is asked to enumerate too large a chain."""


class PlanIntegrityError(RuntimeError):
    """Internal invariant violation while assembling a plan."""


@dataclass(frozen=True)
class OPCell:
    """One memo cell: optimal transfers for a span and its split point.

    ``split`` is None when the span fits on-chip unsplit (or is a
    single-layer fallback); otherwise start < split < end.
    """

    transfers: int
    split: int | None
    resident: bool


class OPTable:
    """Upper-triangular memo over all spans (i, j), 0 <= i < j <= n."""

    def __init__(self, n: int):
        self.n = n
        self._cells: dict[tuple[int, int], OPCell] = {}

    def __getitem__(self, key: tuple[int, int]) -> OPCell:
        return self._cells[key]

    def __setitem__(self, key: tuple[int, int], cell: OPCell) -> None:
        i, j = key
        if not 0 <= i < j <= self.n:
            raise KeyError(key)
        self._cells[key] = cell

    def __contains__(self, key) -> bool:
        return key in self._cells


@dataclass(frozen=True)
class SpanPlan:
    """One planned span with its tile height, footprint, and transfer cost."""

    span: Span
    tile_rows: int | None  # None when not resident
    footprint: ClosureFootprint
    resident: bool
    input_elems: int  # |L_start| per image
    output_elems: int  # |L_end| per image
    weight_elems: int
    mac_count: int  # multiply-accumulates per image
    transfer_elems: int  # batch * (in + out), plus weights when not resident


@dataclass(frozen=True)
class ResidualCrossing:
    """A skip edge separated by the boundary set; costs an extra write + read."""

    source: int
    dest: int
    penalty_elems: int  # 2 * batch * |L_source|


@dataclass(frozen=True)
class PartitionPlan:
    network: str
    boundaries: tuple[int, ...]
    spans: tuple[SpanPlan, ...]
    crossings: tuple[ResidualCrossing, ...]
    total_transfers: int
    batch: int
    capacity_elems: int
    element_bytes: int

    @property
    def residual_penalty_elems(self) -> int:
        return sum(c.penalty_elems for c in self.crossings)

    @property
    def fully_resident(self) -> bool:
        return all(s.resident for s in self.spans)

    @property
    def fallback_weight_elems(self) -> int:
        return sum(s.weight_elems for s in self.spans if not s.resident)


def _fit_table(net: ShapedNetwork, capacity_elems: int, batch: int) -> list[list[bool]]:
    """fits[i][j]: does SPAN(i, j) at one output row satisfy the capacity?

    Computed with one backward sweep per j, accumulating the closure
    incrementally, so the whole table costs O(n^2).
    """
    n = net.num_layers
    wprefix = [0]
    for w in net.weight_elems:
        wprefix.append(wprefix[-1] + w)
    heights = [d[0] for d in net.map_dims]
    row_elems = [d[1] * d[2] for d in net.map_dims]
    fits = [[False] * (n + 1) for _ in range(n + 1)]
    for j in range(1, n + 1):
        rows = 1
        closure = row_elems[j]
        for i in range(j - 1, -1, -1):
            layer = net.layer(i)
            rows = min(heights[i], (rows - 1) * layer.stride + layer.kernel_h)
            closure += rows * row_elems[i]
            total = batch * closure + (wprefix[j] - wprefix[i])
            fits[i][j] = total < capacity_elems
    return fits


def _separated_edges(boundaries, residuals):
    """Skip edges (s, d) with some internal boundary p satisfying s < p <= d."""
    internal = boundaries[1:-1]
    out = []
    for edge in residuals:
        if any(edge.source < p <= edge.dest for p in internal):
            out.append(edge)
    return out


def plan_from_boundaries(net: ShapedNetwork, boundaries: tuple[int, ...],
                          capacity_elems: int, batch: int,
                          fits: list[list[bool]] | None = None) -> PartitionPlan:
    """Assemble a PartitionPlan (tiles, footprints, costs) for given boundaries.

    Useful for evaluating a hand-chosen boundary set under the same fit,
    fallback, and skip-edge rules the optimizer applies.
    """
    spans = []
    total = 0
    for a, b in zip(boundaries, boundaries[1:]):
        span = Span(a, b)
        resident = (fits[a][b] if fits is not None
                    else span_footprint(net, span, 1, batch).fits(capacity_elems))
        tile = max_tile_rows(net, span, capacity_elems, batch) if resident else None
        footprint = span_footprint(net, span, tile if tile else 1, batch)
        weights = footprint.weight_elems
        transfers = batch * (net.map_elems[a] + net.map_elems[b])
        if not resident:
            if b - a != 1:
                raise PlanIntegrityError(f"non-resident span ({a}, {b}) wider than one layer")
            transfers += weights
        spans.append(SpanPlan(
            span=span, tile_rows=tile, footprint=footprint, resident=resident,
            input_elems=net.map_elems[a], output_elems=net.map_elems[b],
            weight_elems=weights, mac_count=_span_macs(net, a, b),
            transfer_elems=transfers))
        total += transfers
    crossings = tuple(
        ResidualCrossing(e.source, e.dest, 2 * batch * net.map_elems[e.source])
        for e in _separated_edges(boundaries, net.spec.residuals))
    total += sum(c.penalty_elems for c in crossings)
    return PartitionPlan(
        network=net.name, boundaries=boundaries, spans=tuple(spans),
        crossings=crossings, total_transfers=total, batch=batch,
        capacity_elems=capacity_elems, element_bytes=net.element_bytes)


def optimal_partition(net: ShapedNetwork, capacity_elems: int,
                      batch: int = 1) -> tuple[PartitionPlan, OPTable]:
    """Transfer-optimal partition of the chain for the given capacity.

    Bottom-up over span length: a fitting span costs batch * (|L_in| +
    |L_out|) unsplit; a non-fitting multi-layer span takes the cheapest
    split point, charging each skip edge's read-back penalty at the level
    where the split first separates it (each separated edge is charged
    exactly once across the recursion). Ties pick the smallest split point.
    """
    if capacity_elems < 1:
        raise ValueError("capacity_elems must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    n = net.num_layers
    elems = net.map_elems
    fits = _fit_table(net, capacity_elems, batch)
    table = OPTable(n)
    residuals = net.spec.residuals
    xs = [[0] * (n + 1) for _ in range(n + 1)]
    splits: list[list[int | None]] = [[None] * (n + 1) for _ in range(n + 1)]
    for length in range(1, n + 1):
        for i in range(0, n - length + 1):
            j = i + length
            if fits[i][j]:
                xs[i][j] = batch * (elems[i] + elems[j])
                table[i, j] = OPCell(xs[i][j], None, True)
                continue
            if length == 1:
                xs[i][j] = batch * (elems[i] + elems[j]) + net.weight_elems[i]
                table[i, j] = OPCell(xs[i][j], None, False)
                continue
            # Read-back penalty by split point, for edges inside this span.
            penalty = [0] * (j + 1)
            if residuals:
                delta = [0] * (j + 2)
                for e in residuals:
                    if e.source >= i and e.dest <= j - 1:
                        cost = 2 * batch * elems[e.source]
                        delta[e.source + 1] += cost
                        delta[e.dest + 1] -= cost
                acc = 0
                for p in range(1, j + 1):
                    acc += delta[p]
                    penalty[p] = acc
            row_i = xs[i]
            best_x = None
            best_p = None
            for p in range(i + 1, j):
                x = row_i[p] + xs[p][j] + penalty[p]
                if best_x is None or x < best_x:
                    best_x = x
                    best_p = p
            xs[i][j] = best_x
            splits[i][j] = best_p
            table[i, j] = OPCell(best_x, best_p, False)
    boundaries = [0]
    _walk_splits(splits, 0, n, boundaries)
    boundaries.append(n)
    plan = plan_from_boundaries(net, tuple(boundaries), capacity_elems, batch, fits)
    if plan.total_transfers != xs[0][n]:
        raise PlanIntegrityError(
            f"reconstructed transfers {plan.total_transfers} != table optimum {xs[0][n]}")
    return plan, table


def _walk_splits(splits, i: int, j: int, out: list[int]) -> None:
    p = splits[i][j]
    if p is None:
        return
    _walk_splits(splits, i, p, out)
    out.append(p)
    _walk_splits(splits, p, j, out)


def brute_force_partition(net: ShapedNetwork, capacity_elems: int, batch: int = 1,
                          max_layers: int = BRUTE_FORCE_MAX_LAYERS) -> PartitionPlan:
    """Enumerate every boundary set and return the cheapest valid plan.

    Applies the same fit, fallback, and skip-edge rules as the DP but by
    direct evaluation of each candidate boundary set, so it serves as an
    optimality oracle. Ties pick the lexicographically smallest boundary
    tuple. Capped at 2^(max_layers - 1) candidates.
    """
    n = net.num_layers
    if n > max_layers:
        raise OracleSizeError(f"{n} layers exceeds enumeration cap of {max_layers}")
    if capacity_elems < 1:
        raise ValueError("capacity_elems must be >= 1")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    elems = net.map_elems
    fit_cache: dict[tuple[int, int], bool] = {}

    def fits(a: int, b: int) -> bool:
        key = (a, b)
        if key not in fit_cache:
            fit_cache[key] = span_footprint(net, Span(a, b), 1, batch).fits(capacity_elems)
        return fit_cache[key]

    best: tuple[int, tuple[int, ...]] | None = None
    for mask in range(1 << (n - 1)):
        boundaries = [0]
        boundaries.extend(p for p in range(1, n) if mask & (1 << (p - 1)))
        boundaries.append(n)
        cost = 0
        valid = True
        for a, b in zip(boundaries, boundaries[1:]):
            if fits(a, b):
                cost += batch * (elems[a] + elems[b])
            elif b - a == 1:
                cost += batch * (elems[a] + elems[b]) + net.weight_elems[a]
            else:
                valid = False
                break
        if not valid:
            continue
        for e in _separated_edges(boundaries, net.spec.residuals):
            cost += 2 * batch * elems[e.source]
        key = (cost, tuple(boundaries))
        if best is None or key < best:
            best = key
    assert best is not None  # the all-singletons set is always valid
    plan = plan_from_boundaries(net, best[1], capacity_elems, batch)
    if plan.total_transfers != best[0]:
        raise PlanIntegrityError(
            f"plan assembly produced {plan.total_transfers}, enumeration found {best[0]}")
    return plan


def validate_plan(net: ShapedNetwork, plan: PartitionPlan, capacity_elems: int) -> list[str]:
    """Re-check a plan against the capacity rule and re-derive its transfers.

    Returns a list of violation strings; an empty list means the plan is
    internally consistent and every resident span strictly fits.
    """
    violations = []
    n = net.num_layers
    bounds = plan.boundaries
    if len(bounds) < 2 or any(a >= b for a, b in zip(bounds, bounds[1:])):
        violations.append("boundaries not strictly increasing")
        return violations
    if bounds[0] != 0 or bounds[-1] != n:
        violations.append(f"boundaries do not cover [0, {n}]")
        return violations
    if len(plan.spans) != len(bounds) - 1:
        violations.append("span list does not match boundaries")
        return violations
    rederived = 0
    for sp, (a, b) in zip(plan.spans, zip(bounds, bounds[1:])):
        if (sp.span.start, sp.span.end) != (a, b):
            violations.append(f"span ({sp.span.start}, {sp.span.end}) does not match boundary pair ({a}, {b})")
            continue
        if sp.resident:
            footprint = span_footprint(net, sp.span, sp.tile_rows or 1, plan.batch)
            if not footprint.fits(capacity_elems):
                violations.append(
                    f"capacity (strict): span ({a}, {b}) footprint {footprint.total_elems} "
                    f">= {capacity_elems}")
            rederived += plan.batch * (net.map_elems[a] + net.map_elems[b])
        else:
            if b - a != 1:
                violations.append(f"non-resident span ({a}, {b}) wider than one layer")
            rederived += plan.batch * (net.map_elems[a] + net.map_elems[b]) + net.weight_elems[a]
    for e in _separated_edges(bounds, net.spec.residuals):
        rederived += 2 * plan.batch * net.map_elems[e.source]
    if rederived != plan.total_transfers:
        violations.append(
            f"transfer total mismatch: plan says {plan.total_transfers}, "
            f"boundaries re-derive to {rederived}")
    return violations
