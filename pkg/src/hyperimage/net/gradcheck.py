from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import build_network, forward, backward
from .losses import compute_loss
from .spec import NetworkSpec


@dataclass
class GradCheckReport:
    max_rel_error: dict
    tolerance: float
    checked: int
    # probes whose +/- step switched a ReLU, pool winner or loss branch
    skipped: int = 0
    # probes with a non-negligible analytic gradient
    informative: int = 0

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _random_target(spec, out_shape, rng):
    if spec.loss == "bce":
        return rng.integers(0, 2, size=out_shape).astype(float)
    if spec.loss == "pairwise-rank":
        return rng.choice([-1.0, 1.0], size=out_shape)
    return rng.normal(size=out_shape)


def _pattern(spec, trace, target):
    parts = []
    for layer, out, cache in zip(spec.layers, trace.outputs, trace.caches):
        if layer.kind in ("max-pool", "min-pool"):
            parts.append(cache[0])
        elif layer.activation == "relu":
            parts.append(out > 0)
    pred = trace.outputs[-1]
    if spec.loss == "mae":
        parts.append(pred > target)
    elif spec.loss == "pairwise-rank":
        parts.append(spec.delta - target * pred > 0)
    return parts


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def rel_error(a, n, floor=1e-6):
    # the floor keeps exactly-zero gradients from amplifying ~1e-12 roundoff
    return np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)


def gradient_check(spec: NetworkSpec, seed: int = 0, tolerance: float = 1e-4, batch: int = 2,
                   step: float = 1e-4, max_entries: int | None = None, backward_fn=backward) -> GradCheckReport:
    """Compare analytic gradients against central differences on random data.

    Dropout masks are frozen by re-seeding the rng on every evaluation.
    ``max_entries`` caps the number of probed entries per tensor.
    """
    rng = np.random.default_rng(seed)
    params = build_network(spec, seed)
    # positive biases keep narrow ReLU stacks alive so the check is not vacuous
    for p in params:
        if "b" in p:
            p["b"] = rng.uniform(0.05, 0.2, size=p["b"].shape)
    x = rng.normal(size=(batch,) + spec.input_shape)
    mask_seed = int(rng.integers(2**31))

    def run(prm, inp):
        return forward(spec, prm, inp, mode="train", rng=np.random.default_rng(mask_seed))

    trace = run(params, x)
    target = _random_target(spec, trace.outputs[-1].shape, rng)

    def loss_of(prm, inp):
        tr = run(prm, inp)
        return compute_loss(spec.loss, tr.outputs[-1], target, delta=spec.delta)[0], _pattern(spec, tr, target)

    _, g = compute_loss(spec.loss, trace.outputs[-1], target, delta=spec.delta)
    grads, dx = backward_fn(spec, params, trace, g, need_input_grad=True)

    def probe(arr, analytic, evaluate):
        flat = arr.reshape(-1)
        an = analytic.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        worst, skipped, informative = 0.0, 0, 0
        for j in idx:
            old = flat[j]
            flat[j] = old + step
            fp, pp = evaluate()
            flat[j] = old - step
            fm, pm = evaluate()
            flat[j] = old
            if not (_same(pp, base_pattern) and _same(pm, base_pattern)):
                skipped += 1
                continue
            num = (fp - fm) / (2 * step)
            informative += abs(an[j]) > 1e-10
            worst = max(worst, float(rel_error(an[j], num)))
        counts[0] += len(idx) - skipped
        counts[1] += skipped
        counts[2] += informative
        return worst

    base_pattern = _pattern(spec, trace, target)
    counts = [0, 0, 0]
    errors = {}
    names = spec.layer_names()
    for i, p in enumerate(params):
        if not p:
            continue
        worst = 0.0
        for k in ("W", "b"):
            worst = max(worst, probe(p[k], grads[i][k], lambda: loss_of(params, x)))
        errors[names[i]] = worst
    errors["input"] = probe(x, dx, lambda: loss_of(params, x))
    return GradCheckReport(errors, tolerance, counts[0], counts[1], counts[2])
