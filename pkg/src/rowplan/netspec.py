"""Network description files, shape propagation, and element accounting.

A network file is a JSON document describing the convolutional stack of a
CNN: input dimensions, an ordered list of conv/pool layers, and optional
skip (residual) edges. Only shapes are described, never weight values.
All sizes are tracked in elements; byte conversion happens in reports via
``element_bytes``.

Document format::

    {
      "name": "tinynet",
      "input": {"h": 8, "w": 8, "c": 1},
      "element_bytes": 1,
      "layers": [
        {"kind": "conv", "kernel": 3, "stride": 1, "padding": 1, "out_channels": 2},
        {"kind": "pool", "kernel": {"h": 2, "w": 2}, "stride": 2}
      ],
      "residuals": [{"source": 0, "dest": 1}]
    }

``kernel`` is a single integer for square kernels or ``{"h":..,"w":..}``.
``stride`` defaults to 1 and ``padding`` (symmetric) to 0. ``out_channels``
is required for conv layers and must be absent for pool layers. A residual
edge feeds feature map ``source`` into the output of layer ``dest``.
Unknown fields anywhere are rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class NetworkError(ValueError):
    """Base class for network document and shape errors."""


class NetworkSyntaxError(NetworkError):
    """Malformed JSON; the message carries the line/column position."""


class NetworkSemanticError(NetworkError):
    """Well-formed JSON violating the document schema; names the field."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class ShapeCollapseError(NetworkError):
    """A propagated feature map dimension fell below 1."""


@dataclass(frozen=True)
class LayerSpec:
    """One conv or pool layer; pool layers preserve channels and carry no weights."""

    kind: str  # "conv" | "pool"
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    out_channels: int | None = None  # conv only

    def __post_init__(self):
        if self.kind not in ("conv", "pool"):
            raise NetworkSemanticError("kind", f"unsupported layer kind {self.kind!r}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise NetworkSemanticError("kernel", "kernel dimensions must be >= 1")
        if self.stride < 1:
            raise NetworkSemanticError("stride", "stride must be >= 1")
        if self.padding < 0:
            raise NetworkSemanticError("padding", "padding must be >= 0")
        if self.kind == "conv" and (self.out_channels is None or self.out_channels < 1):
            raise NetworkSemanticError("out_channels", "conv layers need out_channels >= 1")
        if self.kind == "pool" and self.out_channels is not None:
            raise NetworkSemanticError("out_channels", "pool layers preserve channels; omit out_channels")

    @property
    def has_weights(self) -> bool:
        return self.kind == "conv"


@dataclass(frozen=True)
class ResidualEdge:
    """Skip connection: map ``source`` is aggregated into layer ``dest``'s output."""

    source: int
    dest: int


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    input_h: int
    input_w: int
    input_c: int
    layers: tuple[LayerSpec, ...]
    residuals: tuple[ResidualEdge, ...] = ()
    element_bytes: int = 1

    def __post_init__(self):
        if min(self.input_h, self.input_w, self.input_c) < 1:
            raise NetworkSemanticError("input", "input dimensions must be >= 1")
        if not self.layers:
            raise NetworkSemanticError("layers", "at least one layer required")
        if self.element_bytes < 1:
            raise NetworkSemanticError("element_bytes", "element_bytes must be >= 1")
        n = len(self.layers)
        seen_dests = set()
        for k, edge in enumerate(self.residuals):
            where = f"residuals[{k}]"
            if not 0 <= edge.dest <= n - 1:
                raise NetworkSemanticError(
                    f"{where}.dest", f"dest out of range: layers indexed 0..{n - 1}")
            if not 0 <= edge.source < edge.dest:
                raise NetworkSemanticError(
                    f"{where}.source", "source map index must satisfy 0 <= source < dest")
            if edge.dest in seen_dests:
                raise NetworkSemanticError(f"{where}.dest", "duplicate residual dest layer")
            seen_dests.add(edge.dest)

    def to_document(self) -> dict:
        """Canonical JSON-serializable form; parse(to_json()) is a fixed point."""
        layers = []
        for layer in self.layers:
            entry: dict = {"kind": layer.kind}
            if layer.kernel_h == layer.kernel_w:
                entry["kernel"] = layer.kernel_h
            else:
                entry["kernel"] = {"h": layer.kernel_h, "w": layer.kernel_w}
            entry["stride"] = layer.stride
            entry["padding"] = layer.padding
            if layer.kind == "conv":
                entry["out_channels"] = layer.out_channels
            layers.append(entry)
        return {
            "name": self.name,
            "input": {"h": self.input_h, "w": self.input_w, "c": self.input_c},
            "element_bytes": self.element_bytes,
            "layers": layers,
            "residuals": [{"source": e.source, "dest": e.dest} for e in self.residuals],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_document(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ShapedNetwork:
    """A NetworkSpec with propagated feature-map shapes and element counts.

    ``map_dims`` has one (h, w, c) entry per feature map, n+1 entries for n
    layers; map 0 is the network input, map i+1 the output of layer i.
    """

    spec: NetworkSpec
    map_dims: tuple[tuple[int, int, int], ...]
    map_elems: tuple[int, ...]
    weight_elems: tuple[int, ...]

    @property
    def num_layers(self) -> int:
        return len(self.spec.layers)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def element_bytes(self) -> int:
        return self.spec.element_bytes

    def layer(self, i: int) -> LayerSpec:
        return self.spec.layers[i]

    def map_height(self, i: int) -> int:
        return self.map_dims[i][0]


def _out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


_TOP_KEYS = {"name", "input", "element_bytes", "layers", "residuals"}
_INPUT_KEYS = {"h", "w", "c"}
_LAYER_KEYS = {"kind", "kernel", "stride", "padding", "out_channels"}
_RESIDUAL_KEYS = {"source", "dest"}


def _require_int(value, where: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise NetworkSemanticError(where, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise NetworkSemanticError(where, f"must be >= {minimum}, got {value}")
    return value


def _reject_unknown(obj: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise NetworkSemanticError(f"{where}.{unknown[0]}", "unknown field")


def _parse_kernel(value, where: str) -> tuple[int, int]:
    if isinstance(value, dict):
        _reject_unknown(value, {"h", "w"}, where)
        return (_require_int(value.get("h"), f"{where}.h", 1),
                _require_int(value.get("w"), f"{where}.w", 1))
    return (_require_int(value, where, 1),) * 2


def _parse_layer(obj, idx: int) -> LayerSpec:
    where = f"layers[{idx}]"
    if not isinstance(obj, dict):
        raise NetworkSemanticError(where, "each layer must be an object")
    _reject_unknown(obj, _LAYER_KEYS, where)
    kind = obj.get("kind")
    if kind == "fc":
        raise NetworkSemanticError(
            f"{where}.kind", "fully-connected layers are not modeled; describe the conv stack only")
    if kind not in ("conv", "pool"):
        raise NetworkSemanticError(f"{where}.kind", f"must be 'conv' or 'pool', got {kind!r}")
    if "kernel" not in obj:
        raise NetworkSemanticError(f"{where}.kernel", "missing kernel")
    kh, kw = _parse_kernel(obj["kernel"], f"{where}.kernel")
    stride = _require_int(obj.get("stride", 1), f"{where}.stride", 1)
    padding = _require_int(obj.get("padding", 0), f"{where}.padding", 0)
    out_channels = None
    if kind == "conv":
        if "out_channels" not in obj:
            raise NetworkSemanticError(f"{where}.out_channels", "conv layers need out_channels")
        out_channels = _require_int(obj["out_channels"], f"{where}.out_channels", 1)
    elif "out_channels" in obj:
        raise NetworkSemanticError(
            f"{where}.out_channels", "pool layers preserve channels; omit out_channels")
    try:
        return LayerSpec(kind, kh, kw, stride, padding, out_channels)
    except NetworkSemanticError as err:
        raise NetworkSemanticError(f"{where}.{err.field_path}", str(err)) from None


def parse_network(text: str) -> NetworkSpec:
    """Parse a network description document into a validated NetworkSpec."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise NetworkSyntaxError(
            f"invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    if not isinstance(doc, dict):
        raise NetworkSemanticError("$", "top level must be an object")
    _reject_unknown(doc, _TOP_KEYS, "$")
    if "name" not in doc or not isinstance(doc["name"], str):
        raise NetworkSemanticError("name", "a string name is required")
    inp = doc.get("input")
    if not isinstance(inp, dict):
        raise NetworkSemanticError("input", "expected an object {h, w, c}")
    _reject_unknown(inp, _INPUT_KEYS, "input")
    h = _require_int(inp.get("h"), "input.h", 1)
    w = _require_int(inp.get("w"), "input.w", 1)
    c = _require_int(inp.get("c"), "input.c", 1)
    element_bytes = _require_int(doc.get("element_bytes", 1), "element_bytes", 1)
    raw_layers = doc.get("layers")
    if not isinstance(raw_layers, list) or not raw_layers:
        raise NetworkSemanticError("layers", "a non-empty layer list is required")
    layers = tuple(_parse_layer(obj, i) for i, obj in enumerate(raw_layers))
    residuals = []
    raw_residuals = doc.get("residuals", [])
    if not isinstance(raw_residuals, list):
        raise NetworkSemanticError("residuals", "expected a list")
    for k, obj in enumerate(raw_residuals):
        where = f"residuals[{k}]"
        if not isinstance(obj, dict):
            raise NetworkSemanticError(where, "each residual must be an object {source, dest}")
        _reject_unknown(obj, _RESIDUAL_KEYS, where)
        residuals.append(ResidualEdge(
            _require_int(obj.get("source"), f"{where}.source", 0),
            _require_int(obj.get("dest"), f"{where}.dest", 0)))
    return NetworkSpec(doc["name"], h, w, c, layers, tuple(residuals), element_bytes)


def load_network(path: str | Path) -> NetworkSpec:
    return parse_network(Path(path).read_text())


def infer_shapes(spec: NetworkSpec) -> ShapedNetwork:
    """Propagate (h, w, c) through the layer chain and count elements.

    Raises ShapeCollapseError if any computed dimension drops below 1.
    """
    dims = [(spec.input_h, spec.input_w, spec.input_c)]
    weight_elems = []
    for i, layer in enumerate(spec.layers):
        h, w, c = dims[-1]
        oh = _out_size(h, layer.kernel_h, layer.stride, layer.padding)
        ow = _out_size(w, layer.kernel_w, layer.stride, layer.padding)
        oc = layer.out_channels if layer.kind == "conv" else c
        if oh < 1 or ow < 1:
            raise ShapeCollapseError(
                f"layers[{i}]: output shape {oh}x{ow} collapsed (input {h}x{w}, "
                f"kernel {layer.kernel_h}x{layer.kernel_w}, stride {layer.stride}, "
                f"padding {layer.padding})")
        dims.append((oh, ow, oc))
        if layer.kind == "conv":
            weight_elems.append(layer.kernel_h * layer.kernel_w * c * oc)
        else:
            weight_elems.append(0)
    map_elems = tuple(h * w * c for h, w, c in dims)
    return ShapedNetwork(spec, tuple(dims), map_elems, tuple(weight_elems))


def shape_network(text_or_spec) -> ShapedNetwork:
    if isinstance(text_or_spec, NetworkSpec):
        return infer_shapes(text_or_spec)
    return infer_shapes(parse_network(text_or_spec))


def layer_macs(net: ShapedNetwork, i: int) -> int:
    """Multiply-accumulates of layer i for one image; pooling costs none."""
    layer = net.layer(i)
    if not layer.has_weights:
        return 0
    oh, ow, oc = net.map_dims[i + 1]
    ic = net.map_dims[i][2]
    return oh * ow * oc * layer.kernel_h * layer.kernel_w * ic


def total_resident_footprint(net: ShapedNetwork) -> int:
    """On-chip elements needed to run the whole chain without partitioning.

    Sum of all weights plus the full-chain closure footprint for one output
    row-plane. If this is below the capacity, a single span suffices.
    """
    from .closure import Span, span_footprint

    n = net.num_layers
    return span_footprint(net, Span(0, n), 1).total_elems


_NETWORKS_DIR = Path(__file__).resolve().parent / "networks"


def bundled_networks() -> list[str]:
    """Names of network documents shipped with the package."""
    return sorted(p.stem for p in _NETWORKS_DIR.glob("*.json"))


def bundled_network_path(name: str) -> Path:
    path = _NETWORKS_DIR / f"{name}.json"
    if not path.exists():
        raise FileNotFoundError(
            f"no bundled network {name!r}; available: {', '.join(bundled_networks())}")
    return path
