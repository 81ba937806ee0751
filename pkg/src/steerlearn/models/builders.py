"""The three steering networks.

``build_nvidia``      five-conv + four-dense baseline on 120x320x3 frames.
``build_conv3d_lstm`` 3D-conv feature extractor with residual blocks and batch
                      norm, applied to each of five 5-frame clips, then two
                      LSTM layers over the clips and a dense head.
``build_transfer``    ResNet50-style bottleneck trunk (old Keras layer layout,
                      175 layers at full depth) with a 512/256/64/1 dense head;
                      the first ``freeze_layers`` layers are not trained.
"""

from __future__ import annotations

import json
from importlib import resources

from .graph import GraphBuilder, ModelGraph

# Frozen after the first build of each default configuration.
NVIDIA_PARAM_COUNT = 1_826_619
CONV3D_LSTM_PARAM_COUNT = 543_131
TRANSFER_PARAM_COUNT = 24_731_521
TRANSFER_PARAM_COUNT_WITH_BN_STATS = 24_784_641

RESNET50_STAGES = (3, 4, 6, 3)


def load_conv3d_lstm_config(version: int = 1) -> dict:
    text = resources.files("steerlearn").joinpath(f"data/conv3d_lstm.v{version}.json").read_text()
    return json.loads(text)


def build_nvidia(input_shape=(120, 320, 3), seed: int = 0, precision: str = "single") -> ModelGraph:
    b = GraphBuilder("nvidia", input_shape, seed, precision)
    for i, (f, k, s) in enumerate([(24, 5, 2), (36, 5, 2), (48, 5, 2), (64, 3, 1), (64, 3, 1)], start=1):
        b.conv(f"conv{i}", f, (k, k), stride=s, activation="relu")
    b.flatten("flatten")
    for i, units in enumerate([100, 50, 10], start=1):
        b.dense(f"fc{i}", units, activation="relu")
    b.dense("fc_out", 1)
    b.squeeze()
    return b.finish(builder="nvidia", input_shape=list(input_shape), seed=seed, precision=precision)


def build_conv3d_lstm(
    input_shape=(5, 5, 120, 320, 3), config: dict | None = None, seed: int = 0, precision: str = "single"
) -> ModelGraph:
    """Input is ``(clips, frames, H, W, 3)``; every conv is followed by batch norm and ReLU."""
    cfg = load_conv3d_lstm_config() if config is None else config
    b = GraphBuilder("conv3d_lstm", input_shape, seed, precision)

    def conv_bn(name, spec, relu=True):
        b.conv(name, spec["filters"], spec["kernel"], spec.get("stride", 1), spec.get("padding", 0))
        b.bn(f"{name}_bn")
        if relu:
            b.relu(f"{name}_relu")
        return b.last

    for i, spec in enumerate(cfg["shrink_in"], start=1):
        conv_bn(f"shrink_in{i}", spec)
    filters = b.shape[-1]
    k = cfg["residual_kernel"]
    same = {"filters": filters, "kernel": k, "padding": [n // 2 for n in k]}
    for i in range(1, cfg["residual_blocks"] + 1):
        entry = b.last
        conv_bn(f"res{i}_a", same)
        inner = conv_bn(f"res{i}_b", same, relu=False)
        b.add(f"res{i}_add", inner, entry)
        b.relu(f"res{i}_relu")
    for i, spec in enumerate(cfg["shrink_out"], start=1):
        conv_bn(f"shrink_out{i}", spec)
    b.flatten_steps("flatten_steps")
    n_lstm = len(cfg["lstm"])
    for i, hidden in enumerate(cfg["lstm"], start=1):
        b.lstm(f"lstm{i}", hidden, return_sequences=i < n_lstm)
    for i, units in enumerate(cfg["dense"], start=1):
        b.dense(f"fc{i}", units, activation="relu")
    b.dense("fc_out", 1)
    b.squeeze()
    return b.finish(builder="conv3d_lstm", input_shape=list(input_shape), config=cfg, seed=seed, precision=precision)


def _bottleneck(b: GraphBuilder, stage: int, block: str, filters, stride: int, project: bool):
    f1, f2, f3 = filters
    base = f"{stage}{block}"
    entry = b.last
    b.conv(f"res{base}_branch2a", f1, (1, 1), stride=stride)
    b.bn(f"bn{base}_branch2a")
    b.relu(f"res{base}_relu2a")
    b.conv(f"res{base}_branch2b", f2, (3, 3), padding=1)
    b.bn(f"bn{base}_branch2b")
    b.relu(f"res{base}_relu2b")
    b.conv(f"res{base}_branch2c", f3, (1, 1))
    inner = b.bn(f"bn{base}_branch2c")
    short = entry
    if project:
        b.conv(f"res{base}_branch1", f3, (1, 1), stride=stride, src=entry)
        short = b.bn(f"bn{base}_branch1")
    b.add(f"res{base}_add", inner, short)
    b.relu(f"res{base}_out")


def build_transfer(
    input_shape=(224, 224, 3),
    freeze_layers: int = 45,
    trunk_depth: int | None = None,
    width: int = 64,
    seed: int = 0,
    precision: str = "single",
) -> ModelGraph:
    """ResNet50-layout trunk plus dense head.

    ``trunk_depth`` caps the number of bottleneck blocks per stage (full depth
    is 3, 4, 6, 3); ``width`` is the stem filter count (64 at full size, the
    stage filters scale with it). Both exist so tests can train a desk-scale
    trunk. Layers are counted like a Keras model's ``layers`` list, input layer
    included, so the full trunk has 175 layers.
    """
    b = GraphBuilder("transfer", input_shape, seed, precision)
    b.zeropad("conv1_pad", 3)
    b.conv("conv1", width, (7, 7), stride=2)
    b.bn("bn_conv1")
    b.relu("conv1_relu")
    b.maxpool("pool1", 3, 2)
    for stage, n_blocks in enumerate(RESNET50_STAGES, start=2):
        if trunk_depth is not None:
            n_blocks = min(n_blocks, trunk_depth)
        scale = 2 ** (stage - 2)
        filters = (width * scale, width * scale, 4 * width * scale)
        for j in range(n_blocks):
            stride = 1 if stage == 2 or j > 0 else 2
            _bottleneck(b, stage, "abcdef"[j], filters, stride, project=j == 0)
    b.gap("avg_pool")
    trunk_layers = len(b.g.layers)
    for i, units in enumerate([512, 256, 64], start=1):
        b.dense(f"fc{i}", units, activation="relu")
    b.dense("fc_out", 1)
    b.squeeze()
    g = b.finish(
        builder="transfer",
        input_shape=list(input_shape),
        freeze_layers=freeze_layers,
        trunk_depth=trunk_depth,
        width=width,
        seed=seed,
        precision=precision,
    )
    g.build_args["trunk_layers"] = trunk_layers
    if freeze_layers > trunk_layers:
        raise ValueError(f"freeze_layers={freeze_layers} exceeds the {trunk_layers} trunk layers")
    g.freeze(freeze_layers)
    return g


BUILDERS = {"nvidia": build_nvidia, "conv3d_lstm": build_conv3d_lstm, "transfer": build_transfer}


def rebuild(build_args: dict) -> ModelGraph:
    """Rebuild a model from the ``build_args`` it recorded (e.g. from a checkpoint)."""
    args = {k: v for k, v in build_args.items() if k not in ("builder", "trunk_layers")}
    if "input_shape" in args:
        args["input_shape"] = tuple(args["input_shape"])
    return BUILDERS[build_args["builder"]](**args)
