#!/usr/bin/env python3
"""Regenerate the bundled network description documents.

Transcribes the canonical published convolutional stacks (classifier heads
excluded) into the JSON network format. Skip edges are included only where
the source and destination maps have identical shapes (identity shortcuts);
projection shortcuts around downsampling blocks change shape and are not
representable as element-wise aggregation.
"""

import json
from pathlib import Path

OUT_DIR = Path(__file__).resolve().parent.parent / "src" / "rowplan" / "networks"


def conv(kernel, out_channels, stride=1, padding=0):
    return {"kind": "conv", "kernel": kernel, "stride": stride,
            "padding": padding, "out_channels": out_channels}


def pool(kernel, stride, padding=0):
    return {"kind": "pool", "kernel": kernel, "stride": stride, "padding": padding}


def doc(name, layers, residuals=()):
    return {
        "name": name,
        "input": {"h": 224, "w": 224, "c": 3},
        "element_bytes": 1,
        "layers": layers,
        "residuals": list(residuals),
    }


def alexnet():
    # Single-group variant (the widely reproduced one): 5 conv + 3 pool.
    layers = [
        conv(11, 64, stride=4, padding=2),
        pool(3, 2),
        conv(5, 192, padding=2),
        pool(3, 2),
        conv(3, 384, padding=1),
        conv(3, 256, padding=1),
        conv(3, 256, padding=1),
        pool(3, 2),
    ]
    return doc("alexnet", layers)


def zfnet():
    layers = [
        conv(7, 96, stride=2, padding=1),
        pool(3, 2),
        conv(5, 256, stride=2),
        pool(3, 2),
        conv(3, 384, padding=1),
        conv(3, 384, padding=1),
        conv(3, 256, padding=1),
        pool(3, 2),
    ]
    return doc("zfnet", layers)


def vgg19():
    layers = []
    for block, (count, ch) in enumerate([(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)]):
        for _ in range(count):
            layers.append(conv(3, ch, padding=1))
        layers.append(pool(2, 2))
    return doc("vgg19", layers)


def resnet_basic(name, blocks_per_stage):
    # Two 3x3 convs per block; stages at widths 64/128/256/512, stride-2
    # entry for stages 2..4. Identity shortcuts only.
    layers = [conv(7, 64, stride=2, padding=3), pool(3, 2, padding=1)]
    residuals = []
    for stage, (count, ch) in enumerate(zip(blocks_per_stage, [64, 128, 256, 512])):
        for block in range(count):
            downsample = stage > 0 and block == 0
            entry = len(layers)
            layers.append(conv(3, ch, stride=2 if downsample else 1, padding=1))
            layers.append(conv(3, ch, padding=1))
            if not downsample:
                residuals.append({"source": entry, "dest": entry + 1})
    return doc(name, layers, residuals)


def resnet_bottleneck(name, blocks_per_stage):
    # 1x1 reduce, 3x3, 1x1 expand (4x) per block. The first block of every
    # stage uses a projection shortcut (channel change), so only later
    # blocks carry identity skip edges.
    layers = [conv(7, 64, stride=2, padding=3), pool(3, 2, padding=1)]
    residuals = []
    for stage, (count, ch) in enumerate(zip(blocks_per_stage, [64, 128, 256, 512])):
        for block in range(count):
            downsample = stage > 0 and block == 0
            entry = len(layers)
            layers.append(conv(1, ch, stride=2 if downsample else 1))
            layers.append(conv(3, ch, padding=1))
            layers.append(conv(1, ch * 4))
            if block > 0:
                residuals.append({"source": entry, "dest": entry + 2})
    return doc(name, layers, residuals)


def main():
    docs = [
        alexnet(),
        zfnet(),
        vgg19(),
        resnet_basic("resnet18", [2, 2, 2, 2]),
        resnet_basic("resnet34", [3, 4, 6, 3]),
        resnet_bottleneck("resnet50", [3, 4, 6, 3]),
        resnet_bottleneck("resnet101", [3, 4, 23, 3]),
        resnet_bottleneck("resnet152", [3, 8, 36, 3]),
    ]
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    for d in docs:
        path = OUT_DIR / f"{d['name']}.json"
        path.write_text(json.dumps(d, indent=2) + "\n")
        print(f"wrote {path} ({len(d['layers'])} layers, {len(d['residuals'])} skip edges)")


if __name__ == "__main__":
    main()
