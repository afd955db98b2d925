"""Desk-scale reference execution of partition plans on integer tensors.

Two executors over the same integer arithmetic:

* run_naive materializes every feature map in full, layer by layer. It is
  the correctness oracle.
* run_tiled executes a partition plan span by span with per-map circular
  row buffers, producing tile_rows output rows per step and retiring input
  rows as the dependence band slides past them. Every element crossing the
  instrumented off-chip boundary is counted: each span streams its input
  map in once and its output map out once, and a skip edge separated by a
  partition boundary pays one extra write of its source map (spilled by
  the producing span) and one extra read (by the consuming span).

All arithmetic is int64, so tiled-vs-naive equivalence checks are exact
bit comparisons, not tolerances. Maps are expected to stay desk-scale
(tens of rows, few channels); this is a model validator, not a kernel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closure import Span, rows_required
from .netspec import ShapedNetwork
from .partitioner import PartitionPlan, _separated_edges

_POOL_SENTINEL = np.iinfo(np.int64).min // 4


class ExecutorError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpanTransfers:
    span: Span
    reads: int
    writes: int


@dataclass(frozen=True)
class TransferLedger:
    offchip_reads: int
    offchip_writes: int
    per_span: tuple[SpanTransfers, ...]

    @property
    def total(self) -> int:
        return self.offchip_reads + self.offchip_writes


@dataclass(frozen=True)
class TiledRun:
    outputs: np.ndarray  # (batch, h, w, c)
    ledger: TransferLedger
    peak_elems: int
    span_peaks: tuple[int, ...]


def peak_buffer_elems(run: TiledRun) -> int:
    """Largest number of simultaneously live buffered elements observed."""
    return run.peak_elems


def _check_weights(net: ShapedNetwork, weights) -> None:
    if len(weights) != net.num_layers:
        raise ExecutorError(f"expected {net.num_layers} weight entries, got {len(weights)}")
    for i, layer in enumerate(net.spec.layers):
        if not layer.has_weights:
            if weights[i] is not None:
                raise ExecutorError(f"layer {i} is a pool layer; weights must be None")
            continue
        want = (layer.kernel_h, layer.kernel_w, net.map_dims[i][2], net.map_dims[i + 1][2])
        got = getattr(weights[i], "shape", None)
        if got != want:
            raise ExecutorError(f"layer {i} weight shape {got} != expected {want}")


def _conv_full(x: np.ndarray, layer, w: np.ndarray) -> np.ndarray:
    h, wid, c = x.shape
    p, s = layer.padding, layer.stride
    oh = (h + 2 * p - layer.kernel_h) // s + 1
    ow = (wid + 2 * p - layer.kernel_w) // s + 1
    xp = np.zeros((h + 2 * p, wid + 2 * p, c), dtype=np.int64)
    xp[p:p + h, p:p + wid, :] = x
    out = np.zeros((oh, ow, w.shape[3]), dtype=np.int64)
    for u in range(layer.kernel_h):
        for v in range(layer.kernel_w):
            patch = xp[u:u + s * (oh - 1) + 1:s, v:v + s * (ow - 1) + 1:s, :]
            out += np.tensordot(patch, w[u, v], axes=([2], [0]))
    return out


def _pool_full(x: np.ndarray, layer) -> np.ndarray:
    # Max over in-bounds window cells; padded cells never win.
    h, wid, c = x.shape
    p, s = layer.padding, layer.stride
    oh = (h + 2 * p - layer.kernel_h) // s + 1
    ow = (wid + 2 * p - layer.kernel_w) // s + 1
    xp = np.full((h + 2 * p, wid + 2 * p, c), _POOL_SENTINEL, dtype=np.int64)
    xp[p:p + h, p:p + wid, :] = x
    out = np.full((oh, ow, c), _POOL_SENTINEL, dtype=np.int64)
    for u in range(layer.kernel_h):
        for v in range(layer.kernel_w):
            patch = xp[u:u + s * (oh - 1) + 1:s, v:v + s * (ow - 1) + 1:s, :]
            np.maximum(out, patch, out=out)
    return out


def run_naive(net: ShapedNetwork, weights, image: np.ndarray) -> np.ndarray:
    """Full-map layer-by-layer execution; the bit-exact oracle."""
    _check_weights(net, weights)
    x = np.asarray(image, dtype=np.int64)
    if x.shape != net.map_dims[0]:
        raise ExecutorError(f"input shape {x.shape} != {net.map_dims[0]}")
    maps = [x]
    by_dest = {e.dest: e.source for e in net.spec.residuals}
    for i, layer in enumerate(net.spec.layers):
        if layer.has_weights:
            out = _conv_full(maps[i], layer, np.asarray(weights[i], dtype=np.int64))
        else:
            out = _pool_full(maps[i], layer)
        if i in by_dest:
            src = maps[by_dest[i]]
            if src.shape != out.shape:
                raise ExecutorError(
                    f"residual source map {by_dest[i]} shape {src.shape} does not match "
                    f"layer {i} output {out.shape}")
            out = out + src
        maps.append(out)
    return maps[-1]


class _RowBuffer:
    """Circular store of the most recent rows of one feature map."""

    def __init__(self, capacity_rows: int, width: int, channels: int):
        self.capacity = capacity_rows
        self.data = np.zeros((capacity_rows, width, channels), dtype=np.int64)
        self.slot_row = [-1] * capacity_rows

    def put(self, r: int, row: np.ndarray) -> None:
        slot = r % self.capacity
        self.data[slot] = row
        self.slot_row[slot] = r

    def get(self, r: int) -> np.ndarray:
        slot = r % self.capacity
        if self.slot_row[slot] != r:
            raise ExecutorError(f"row {r} not resident (buffer holds {self.slot_row[slot]})")
        return self.data[slot]

    def live_rows(self, min_row: int) -> int:
        return sum(1 for r in self.slot_row if r >= min_row)

    def reset(self) -> None:
        self.slot_row = [-1] * self.capacity


def _needed_bands(net: ShapedNetwork, span: Span, t0: int, t1: int) -> dict[int, tuple[int, int]]:
    """Exact per-map row interval feeding output rows [t0, t1) of the span."""
    need = {span.end: (t0, t1 - 1)}
    lo, hi = t0, t1 - 1
    for i in range(span.end - 1, span.start - 1, -1):
        layer = net.layer(i)
        h = net.map_height(i)
        lo = max(0, lo * layer.stride - layer.padding)
        hi = min(h - 1, hi * layer.stride - layer.padding + layer.kernel_h - 1)
        need[i] = (lo, hi)
    return need


def _conv_row(buf: _RowBuffer, layer, w: np.ndarray, r_out: int, in_dims, out_w: int) -> np.ndarray:
    h_in, w_in, c_in = in_dims
    p, s = layer.padding, layer.stride
    block = np.zeros((layer.kernel_h, w_in + 2 * p, c_in), dtype=np.int64)
    for u in range(layer.kernel_h):
        rr = r_out * s - p + u
        if 0 <= rr < h_in:
            block[u, p:p + w_in, :] = buf.get(rr)
    out = np.zeros((out_w, w.shape[3]), dtype=np.int64)
    for u in range(layer.kernel_h):
        for v in range(layer.kernel_w):
            out += block[u, v:v + s * (out_w - 1) + 1:s, :] @ w[u, v]
    return out


def _pool_row(buf: _RowBuffer, layer, r_out: int, in_dims, out_w: int) -> np.ndarray:
    h_in, w_in, c = in_dims
    p, s = layer.padding, layer.stride
    block = np.full((layer.kernel_h, w_in + 2 * p, c), _POOL_SENTINEL, dtype=np.int64)
    for u in range(layer.kernel_h):
        rr = r_out * s - p + u
        if 0 <= rr < h_in:
            block[u, p:p + w_in, :] = buf.get(rr)
    out = np.full((out_w, c), _POOL_SENTINEL, dtype=np.int64)
    for u in range(layer.kernel_h):
        for v in range(layer.kernel_w):
            np.maximum(out, block[u, v:v + s * (out_w - 1) + 1:s, :], out=out)
    return out


class _SpanRunner:
    """Executes one span for a stream of images, counting off-chip traffic.

    ``spill_maps`` are interior maps whose rows must additionally be
    written off-chip because a separated skip edge reads them later;
    ``external_edges`` maps a dest layer to the off-chip source map it
    reads row-by-row. Both are charged to this span's ledger entry.
    """

    def __init__(self, net: ShapedNetwork, span: Span, tile_rows: int, weights,
                 spill_counts, external_edges, internal_edges):
        self.net = net
        self.span = span
        self.tile_rows = tile_rows
        self.weights = weights
        # map index -> number of separated edges reading it (each pays a write)
        self.spill_counts = dict(spill_counts)
        self.external_by_dest = dict(external_edges)
        self.internal_by_dest = dict(internal_edges)
        caps = rows_required(net, span, tile_rows)
        self.bufs = {}
        for m, cap in zip(span.maps(), caps):
            _, w, c = net.map_dims[m]
            self.bufs[m] = _RowBuffer(cap, w, c)
        self.reads = 0
        self.writes = 0
        self.peak = 0

    def run_image(self, store: dict[int, np.ndarray]) -> None:
        net, span = self.net, self.span
        source = store[span.start]
        h_out = net.map_height(span.end)
        out_dims = net.map_dims[span.end]
        store[span.end] = np.zeros(out_dims, dtype=np.int64)
        for m in self.spill_counts:
            if m not in store:
                store[m] = np.zeros(net.map_dims[m], dtype=np.int64)
        for buf in self.bufs.values():
            buf.reset()
        produced = {m: 0 for m in span.maps()}
        fetched = 0
        in_h, in_w, in_c = net.map_dims[span.start]
        # A separated skip source that is the raw input has no producing
        # span; its extra spill write is charged here instead.
        for s in self.external_by_dest.values():
            if s == 0:
                self.writes += net.map_elems[0]
        for t0 in range(0, h_out, self.tile_rows):
            t1 = min(h_out, t0 + self.tile_rows)
            need = _needed_bands(net, span, t0, t1)
            # Stream input rows in order up to the band's end; rows below the
            # band (possible when stride exceeds kernel) are read and dropped.
            lo, hi = need[span.start]
            while fetched <= hi:
                self.reads += in_w * in_c
                if fetched >= lo:
                    self.bufs[span.start].put(fetched, source[fetched])
                fetched += 1
            for i in range(span.start, span.end):
                m = i + 1
                layer = net.layer(i)
                mlo, mhi = need[m]
                _, out_w, _ = net.map_dims[m]
                for r in range(max(produced[m], mlo), mhi + 1):
                    if layer.has_weights:
                        row = _conv_row(self.bufs[i], layer, self.weights[i], r,
                                        net.map_dims[i], out_w)
                    else:
                        row = _pool_row(self.bufs[i], layer, r, net.map_dims[i], out_w)
                    if i in self.internal_by_dest:
                        row = row + self.bufs[self.internal_by_dest[i]].get(r)
                    if i in self.external_by_dest:
                        src = self.external_by_dest[i]
                        row = row + store[src][r]
                        self.reads += net.map_dims[src][1] * net.map_dims[src][2]
                    self.bufs[m].put(r, row)
                    produced[m] = r + 1
                    if m == span.end:
                        store[span.end][r] = row
                        self.writes += out_w * net.map_dims[m][2]
                    if m in self.spill_counts:
                        store[m][r] = row
                        self.writes += self.spill_counts[m] * net.map_dims[m][1] * net.map_dims[m][2]
            live = 0
            for m in span.maps():
                _, w, c = net.map_dims[m]
                live += self.bufs[m].live_rows(need[m][0]) * w * c
            self.peak = max(self.peak, live)
        # Stream any trailing never-consumed input rows; the transfer model
        # charges the full input map.
        while fetched < in_h:
            self.reads += in_w * in_c
            fetched += 1


def run_tiled(net: ShapedNetwork, plan: PartitionPlan, weights, images) -> TiledRun:
    """Execute a fully resident plan span by span with circular row buffers.

    ``images`` is one (h, w, c) tensor or a (batch, h, w, c) stack matching
    the plan's batch. Images pass sequentially through each span's resident
    state; the ledger accumulates across images. Raises ExecutorError for
    plans with non-resident spans.
    """
    _check_weights(net, weights)
    for sp in plan.spans:
        if not sp.resident or sp.tile_rows is None:
            raise ExecutorError(
                f"span ({sp.span.start}, {sp.span.end}) is not resident; "
                "the tiled executor only validates resident plans")
    if plan.boundaries[-1] != net.num_layers:
        raise ExecutorError("plan does not cover this network")
    x = np.asarray(images, dtype=np.int64)
    if x.ndim == 3:
        x = x[np.newaxis]
    if x.shape[0] != plan.batch:
        raise ExecutorError(f"plan batch {plan.batch} != {x.shape[0]} images")
    if x.shape[1:] != net.map_dims[0]:
        raise ExecutorError(f"input shape {x.shape[1:]} != {net.map_dims[0]}")
    weights = [None if w is None else np.asarray(w, dtype=np.int64) for w in weights]
    for e in net.spec.residuals:
        if net.map_dims[e.source] != net.map_dims[e.dest + 1]:
            raise ExecutorError(
                f"residual source map {e.source} {net.map_dims[e.source]} does not match "
                f"layer {e.dest} output {net.map_dims[e.dest + 1]}")

    separated = _separated_edges(plan.boundaries, net.spec.residuals)
    span_of_layer = {}
    for sp in plan.spans:
        for i in range(sp.span.start, sp.span.end):
            span_of_layer[i] = sp.span
    runners = []
    for sp in plan.spans:
        span = sp.span
        spills: dict[int, int] = {}
        for e in separated:
            if e.source != 0 and span.start < e.source <= span.end:
                spills[e.source] = spills.get(e.source, 0) + 1
        external = [(e.dest, e.source) for e in separated if span_of_layer[e.dest] == span]
        internal = [(e.dest, e.source) for e in net.spec.residuals
                    if e not in separated and span_of_layer[e.dest] == span]
        runners.append(_SpanRunner(net, span, sp.tile_rows, weights,
                                   spills, external, internal))

    outputs = np.zeros((plan.batch,) + net.map_dims[net.num_layers], dtype=np.int64)
    for b in range(plan.batch):
        store = {0: x[b]}
        for runner in runners:
            runner.run_image(store)
        outputs[b] = store[net.num_layers]
    per_span = tuple(SpanTransfers(r.span, r.reads, r.writes) for r in runners)
    ledger = TransferLedger(
        offchip_reads=sum(t.reads for t in per_span),
        offchip_writes=sum(t.writes for t in per_span),
        per_span=per_span)
    return TiledRun(
        outputs=outputs,
        ledger=ledger,
        peak_elems=max(r.peak for r in runners),
        span_peaks=tuple(r.peak for r in runners))


def seeded_tensors(net: ShapedNetwork, seed: int, weight_span: int = 3,
                   input_span: int = 7):
    """Deterministic integer input and weights for a shaped network.

    Weights are drawn from [-weight_span, weight_span], the input from
    [0, input_span]. Raises if worst-case value growth through the chain
    could overflow the int64 accumulators.
    """
    if value_growth_bound(net, weight_span, input_span) >= 2 ** 62:
        raise ExecutorError("network too deep/wide for exact int64 execution at these ranges")
    rng = np.random.default_rng(seed)
    image = rng.integers(0, input_span + 1, size=net.map_dims[0], dtype=np.int64)
    weights = []
    for i, layer in enumerate(net.spec.layers):
        if layer.has_weights:
            shape = (layer.kernel_h, layer.kernel_w,
                     net.map_dims[i][2], net.map_dims[i + 1][2])
            weights.append(rng.integers(-weight_span, weight_span + 1, size=shape,
                                        dtype=np.int64))
        else:
            weights.append(None)
    return image, weights


def value_growth_bound(net: ShapedNetwork, weight_span: int, input_span: int) -> int:
    """Worst-case absolute value reachable at the final map."""
    bounds = [input_span]
    by_dest = {e.dest: e.source for e in net.spec.residuals}
    for i, layer in enumerate(net.spec.layers):
        if layer.has_weights:
            ic = net.map_dims[i][2]
            b = bounds[i] * layer.kernel_h * layer.kernel_w * ic * weight_span
        else:
            b = bounds[i]
        if i in by_dest:
            b += bounds[by_dest[i]]
        bounds.append(b)
    return max(bounds)


def tensor_sha256(t: np.ndarray) -> str:
    """Hash of the canonical little-endian int32 encoding of a tensor."""
    t = np.asarray(t)
    if t.max(initial=0) > np.iinfo(np.int32).max or t.min(initial=0) < np.iinfo(np.int32).min:
        raise ExecutorError("tensor values exceed int32 fixture range")
    return hashlib.sha256(np.ascontiguousarray(t.astype("<i4")).tobytes()).hexdigest()


def save_fixture(directory: str | Path, net: ShapedNetwork, image: np.ndarray,
                 weights, golden: np.ndarray, seed: int | None = None) -> Path:
    """Write flat binary tensors plus a manifest with dims and golden hash."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    def dump(name: str, t: np.ndarray) -> str:
        (directory / name).write_bytes(np.ascontiguousarray(np.asarray(t).astype("<i4")).tobytes())
        return name

    manifest = {
        "network": net.name,
        "seed": seed,
        "input": {"dims": list(net.map_dims[0]), "file": dump("input.bin", image)},
        "weights": [],
        "golden": {"dims": list(golden.shape), "sha256": tensor_sha256(golden)},
    }
    for i, w in enumerate(weights):
        if w is None:
            manifest["weights"].append(None)
        else:
            manifest["weights"].append({
                "layer": i,
                "dims": list(np.asarray(w).shape),
                "file": dump(f"w{i}.bin", w),
            })
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_fixture(directory: str | Path):
    """Read a fixture directory; returns (image, weights, manifest)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())

    def slurp(entry) -> np.ndarray:
        raw = (directory / entry["file"]).read_bytes()
        return np.frombuffer(raw, dtype="<i4").reshape(entry["dims"]).astype(np.int64)

    image = slurp(manifest["input"])
    weights = [None if w is None else slurp(w) for w in manifest["weights"]]
    return image, weights, manifest
