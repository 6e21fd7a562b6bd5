"""Built-in architectures.

Paper-scale entries follow the published layer tables; ``desk-*`` entries
keep the same layer structure with filter and unit counts divided by four
and inputs sized for the desk profiles.
"""

from __future__ import annotations

from dataclasses import replace

from .spec import NetworkSpec, LayerSpec, conv, max_pool, min_pool, dense, dropout, concat


def _convs(n: int, filters: int):
    return [conv(filters) for _ in range(n)]


def _blocks(plan, pool_after=True):
    layers = []
    for n, f in plan:
        layers += _convs(n, f)
        if pool_after:
            layers.append(max_pool(2))
    return layers


def synthetic_stage1(w=1.0, input_shape=(32, 32, 1)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(1, f(16)), (1, f(32)), (2, f(48)), (2, f(64)), (2, f(128))])
    layers += [dense(f(400)), dropout(0.5), dense(f(400)), dropout(0.5), dense(1, "linear")]
    return NetworkSpec(input_shape, layers, "mae")


def synthetic_stage2(w=1.0, input_shape=(10, 10, 400)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(2, f(16)), (2, f(32)), (2, f(64))])
    layers += [dense(f(400)), dropout(0.5), dense(f(400), "tanh"), dropout(0.5), dense(1, "linear")]
    return NetworkSpec(input_shape, layers, "mae")


def iqa_stage1(w=1.0, input_shape=(32, 32, 3)):
    f = lambda n: max(1, int(n * w))
    layers = [
        conv(f(50), 7, 1, activation="linear", name="Conv1"),
        # centred 26x26 window over the 32x32 same-conv map (= the valid-conv region)
        max_pool(26, 26, center=True, inputs=["Conv1"], name="MaxPool"),
        min_pool(26, 26, center=True, inputs=["Conv1"], name="MinPool"),
        concat("MinPool", "MaxPool", name="Concat"),
        dense(f(800), name="FC1"),
        dense(f(800), name="FC2"),
        dense(1, "linear", name="output"),
    ]
    return NetworkSpec(input_shape, layers, "mae")


def _stage2_tail(units, act_out="linear"):
    return [dense(units), dropout(0.5), dense(units, "tanh"), dropout(0.5), dense(1, act_out)]


def live_stage2(w=1.0, input_shape=(24, 23, 800)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(2, f(32)), (2, f(48)), (2, f(64)), (2, f(128))]) + _stage2_tail(f(500))
    return NetworkSpec(input_shape, layers, "mae")


def tid_stage2(w=1.0, input_shape=(23, 31, 800)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(2, f(64)), (2, f(64)), (2, f(128)), (2, f(128))]) + _stage2_tail(f(500))
    return NetworkSpec(input_shape, layers, "mae")


def shallow_e2e(w=1.0, input_shape=(384, 512, 3)):
    f = lambda n: max(1, int(n * w))
    layers = [conv(f(32), 7, 2), max_pool(2), conv(f(64), 7, 1), max_pool(2)]
    layers += [conv(f(128)), max_pool(2)] * 2
    layers += [conv(f(256)), conv(f(256)), max_pool(2)]
    layers += [dense(f(400)), dropout(0.25), dense(f(400), "tanh"), dropout(0.25), dense(1, "linear")]
    return NetworkSpec(input_shape, layers, "mae")


def deep_e2e(w=1.0, input_shape=(384, 512, 3)):
    f = lambda n: max(1, int(n * w))
    layers = [conv(f(32)), max_pool(2), conv(f(64)), max_pool(2)]
    layers += [conv(f(128)), max_pool(2)] * 2
    layers += [conv(f(256)), conv(f(256)), max_pool(2)] * 2
    layers += [conv(f(512)), conv(f(512)), max_pool(2)] * 2
    layers += [dense(f(400)), dropout(0.25), dense(f(400), "tanh"), dropout(0.25), dense(1, "linear")]
    return NetworkSpec(input_shape, layers, "mae")


def forgery_channel(w=1.0, input_shape=(64, 64, 3)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(2, f(64)), (2, f(128)), (2, f(128)), (2, f(256))])
    layers += [dense(f(500)), dropout(0.5), dense(f(500)), dropout(0.5)]
    return NetworkSpec(input_shape, layers, "pairwise-rank")


def forgery_rank_head(w=1.0, input_shape=None):
    d = max(1, int(500 * w))
    # w1 -> ReLU -> w2 applied to the channel difference C1 - C2
    return NetworkSpec(input_shape or (d,), [dense(d, "relu"), dense(1, "linear")], "pairwise-rank")


def forgery_stage2(w=1.0, input_shape=(15, 15, 500)):
    f = lambda n: max(1, int(n * w))
    layers = _blocks([(3, f(64)), (3, f(128)), (3, f(256))])
    layers += [dense(f(800)), dropout(0.5), dense(f(800)), dropout(0.5), dense(1, "sigmoid")]
    return NetworkSpec(input_shape, layers, "bce")


def forgery_e2e(w=1.0, input_shape=(256, 384, 3)):
    f = lambda n: max(1, int(n * w))
    layers = [conv(f(32)), max_pool(2), conv(f(64)), max_pool(2)]
    layers += _blocks([(2, f(64)), (2, f(128)), (2, f(128)), (2, f(256))])
    layers += [dense(f(500)), dropout(0.5), dense(f(500)), dropout(0.5), dense(1, "sigmoid")]
    return NetworkSpec(input_shape, layers, "bce")


DESK = 0.25

_FACTORIES = {
    "synthetic-stage-1": lambda: synthetic_stage1(),
    "synthetic-stage-2": lambda: synthetic_stage2(),
    "live-stage-1": lambda: iqa_stage1(input_shape=(32, 32, 1)),
    "tid-stage-1": lambda: iqa_stage1(input_shape=(32, 32, 3)),
    "live-stage-2": lambda: live_stage2(),
    "tid-stage-2": lambda: tid_stage2(),
    "tid-shallow-e2e": lambda: shallow_e2e(),
    "tid-deep-e2e": lambda: deep_e2e(),
    "forgery-channel": lambda: forgery_channel(),
    "forgery-rank-head": lambda: forgery_rank_head(),
    "forgery-stage-2": lambda: forgery_stage2(),
    "forgery-e2e": lambda: forgery_e2e(),
    # desk profile: synthetic 10x10 grid, 16x16 IQA grid, 8x8 forgery grid
    "desk-synthetic-stage-1": lambda: synthetic_stage1(DESK),
    "desk-synthetic-stage-2": lambda: synthetic_stage2(DESK, (10, 10, 100)),
    "desk-synthetic-e2e": lambda: shallow_e2e(DESK, (128, 128, 1)),
    "desk-live-stage-1": lambda: iqa_stage1(DESK, (32, 32, 1)),
    "desk-live-stage-2": lambda: live_stage2(DESK, (16, 16, 200)),
    "desk-tid-shallow-e2e": lambda: shallow_e2e(DESK, (128, 128, 1)),
    "desk-tid-deep-e2e": lambda: deep_e2e(DESK, (256, 256, 1)),
    "desk-forgery-channel": lambda: forgery_channel(DESK, (16, 16, 3)),
    "desk-forgery-rank-head": lambda: forgery_rank_head(DESK),
    "desk-forgery-stage-2": lambda: forgery_stage2(DESK, (8, 8, 125)),
    "desk-forgery-e2e": lambda: forgery_e2e(DESK, (64, 64, 3)),
}


def spec_names() -> list[str]:
    return sorted(_FACTORIES)


def get_spec(name: str) -> NetworkSpec:
    try:
        spec = _FACTORIES[name]()
    except KeyError:
        raise KeyError(f"unknown network spec id {name!r}") from None
    return replace(spec, name=name)


def shrink(spec: NetworkSpec, filters: int = 3, units: int = 4, channels: int | None = None,
           input_shape=None) -> NetworkSpec:
    """Same topology at toy width (for finite-difference checks)."""
    layers = []
    last = len(spec.layers) - 1
    for i, layer in enumerate(spec.layers):
        if layer.kind == "conv-same":
            layer = replace(layer, filters=min(layer.filters, filters))
        elif layer.kind == "dense" and i != last:
            layer = replace(layer, units=min(layer.units, units))
        layers.append(layer)
    shape = tuple(input_shape or spec.input_shape)
    if channels is not None:
        shape = shape[:-1] + (min(shape[-1], channels),)
    return replace(spec, layers=tuple(layers), input_shape=shape)
