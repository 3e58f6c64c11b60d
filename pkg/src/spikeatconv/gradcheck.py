"""Central finite-difference checks for analytic gradients.

All checks run in float64. Ops are checked on every input coordinate; models
are spot-checked on a few sampled coordinates per parameter tensor with spike
nonlinearities in smooth mode (see :func:`spikeatconv.neuron.smooth_spikes`),
since a Heaviside forward has no finite-difference derivative to compare with.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40s} err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, index, eps: float) -> float:
    old = arr[index]
    arr[index] = old + eps
    fp = fn()
    arr[index] = old - eps
    fm = fn()
    arr[index] = old
    return (fp - fm) / (2 * eps)


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                   eps: float = 1e-3, atol: float = 1e-4, seed: int = 0) -> CheckResult:
    """Compare analytic and central-difference gradients of ``sum(w * fn(*inputs))``.

    A fixed random weighting ``w`` makes every output coordinate contribute.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    # Tensors own copies; point them back at the arrays so perturbations are seen.
    for t, a in zip(ts, arrays):
        t.data = a
    out = fn(*ts)
    weights = np.random.default_rng(seed).standard_normal(out.shape)

    def scalar() -> float:
        with tn.no_grad():
            return float((fn(*ts).data * weights).sum())

    loss = tn.sum(tn.mul_const(out, weights))
    tn.backward(loss)
    worst = 0.0
    for t, a in zip(ts, arrays):
        analytic = t.grad if t.grad is not None else np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            worst = max(worst, abs(numeric_grad(scalar, a, idx, eps) - analytic[idx]))
    return CheckResult(name, worst, atol, worst <= atol)


def op_suite(seed: int = 0) -> list[CheckResult]:
    """Finite-difference check of every differentiable tensor op."""
    from . import neuron

    rng = np.random.default_rng(seed)
    r = rng.standard_normal
    results = [
        check_function("matmul", tn.matmul, [r((3, 4)), r((4, 2))]),
        check_function("matmul/batched", tn.matmul, [r((2, 3, 4)), r((4, 2))]),
        check_function("add/broadcast", tn.add, [r((2, 3)), r((3,))]),
        check_function("mul", tn.mul, [r((2, 3)), r((2, 3))]),
        check_function("scale", lambda x: tn.scale(x, -1.7), [r((4,))]),
        check_function("sum/axis", lambda x: tn.sum(x, axis=1), [r((2, 3, 2))]),
        check_function("mean", lambda x: tn.mean(x, axis=(0, 2), keepdims=True), [r((2, 3, 2))]),
        check_function("reshape+permute", lambda x: tn.permute(tn.reshape(x, (3, 2, 2)), (2, 0, 1)),
                       [r((2, 6))]),
        check_function("concat", lambda a, b: tn.concat([a, b], axis=1), [r((2, 1, 3)), r((2, 2, 3))]),
        check_function("split", lambda x: tn.mul(*tn.split(x, [2, 2], axis=-1)), [r((3, 4))]),
        check_function("linear", tn.linear, [r((2, 3, 4)), r((5, 4)), r((5,))]),
        check_function("conv2d/k3s2p1", lambda x, w, b: tn.conv2d(x, w, b, stride=2, padding=1),
                       [r((2, 3, 8, 8)), r((4, 3, 3, 3)), r((4,))]),
        check_function("conv2d/k5p2", lambda x, w: tn.conv2d(x, w, padding=2),
                       [r((1, 2, 6, 6)), r((2, 2, 5, 5))]),
        check_function("conv2d/pointwise", tn.conv2d, [r((2, 3, 4, 4)), r((5, 3, 1, 1))]),
        check_function("conv2d/depthwise7", lambda x, w: tn.conv2d(x, w, padding=3, groups=3),
                       [r((2, 3, 8, 8)), r((3, 1, 7, 7))]),
        check_function("layernorm/last", lambda x, g, b: tn.layernorm(x, g, b, axis=-1),
                       [r((3, 5)), r((5,)), r((5,))]),
        check_function("layernorm/channel", lambda x, g, b: tn.layernorm(x, g, b, axis=1),
                       [r((2, 4, 3, 3)), r((4,)), r((4,))]),
        check_function("global_avg_pool", tn.global_avg_pool, [r((2, 3, 4, 4))]),
        check_function("softmax", tn.softmax, [r((2, 5))]),
        check_function("log_softmax", tn.log_softmax, [r((2, 5))]),
        check_function("gelu", tn.gelu, [r((3, 4))]),
        check_function("stack_repeat", lambda x: tn.stack_repeat(x, 3), [r((2, 3))]),
    ]
    for kind in neuron.SURROGATES:
        params = neuron.LIFParams(tau=2.0, v_threshold=0.5, surrogate=kind, detach_reset=False)
        with neuron.smooth_spikes():
            results.append(check_function(
                f"lif_sequence/smooth/{kind}", lambda x: neuron.lif_sequence(params, x),
                [r((4, 3, 2))]))
    return results


def spot_check(name: str, loss_fn: Callable[[], Tensor], named_params, coords: int = 5, eps: float = 1e-4,
               rtol: float = 1e-2, floor: float = 1e-6, seed: int = 0) -> list[CheckResult]:
    """Relative-error check on ``coords`` random coordinates of every parameter tensor.

    The error is ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``;
    ``floor`` keeps coordinates whose true gradient is ~0 from dividing by noise.
    """
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    tn.backward(loss_fn())
    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in named_params}

    def scalar() -> float:
        with tn.no_grad():
            return float(loss_fn().data)

    rng = np.random.default_rng(seed)
    results = []
    for pname, p in named_params:
        flat = rng.choice(p.size, size=min(coords, p.size), replace=False)
        worst = 0.0
        for f in flat:
            idx = np.unravel_index(f, p.shape)
            num = numeric_grad(scalar, p.data, idx, eps)
            ana = float(analytic[pname][idx])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
        results.append(CheckResult(f"{name}:{pname}", worst, rtol, worst <= rtol))
    return results


def _as_float64(module):
    module.to(np.float64)
    return module


def block_suite(seed: int = 0, coords: int = 5) -> list[CheckResult]:
    """Spot-check every SPK variant, both attention blocks, ConvNeXt and a full SpikeAtConv block."""
    from . import attention, blocks, neuron, spk

    rng = np.random.default_rng(seed)
    lif = dict(detach_reset=False)
    results = []
    x_sp = rng.standard_normal((2, 2, 4, 4, 4))
    x_tok = rng.standard_normal((2, 2, 4, 8))

    def run(name, module, x):
        xt = Tensor(x, requires_grad=True)
        w = np.random.default_rng(seed + 1).standard_normal(module(xt).shape)

        def loss():
            return tn.sum(tn.mul_const(module(xt), w))

        results.extend(spot_check(name, loss, list(module.named_parameters()) + [("input", xt)], coords,
                                  seed=seed))

    with neuron.smooth_spikes():
        for variant in spk.VARIANTS:
            cfg = spk.make_config(variant, 4, thresholds=(0.2, 1.0, 2.0) if variant == "mbpl" else None, **lif)
            run(f"spk/{variant}", _as_float64(spk.SpkBlock(cfg, rng, spatial=True)), x_sp)
        site = spk.make_config("sl", 8, **lif)
        for variant in attention.ATTENTION_VARIANTS:
            acfg = attention.AttentionConfig(variant, 2, 4, site)
            run(f"attn/{variant}", _as_float64(attention.build(acfg, rng, zero_init=False)), x_tok)
        acfg = attention.AttentionConfig("sisa", 2, 2, spk.make_config("sl", 4, **lif))
        p = blocks.BlockParams(4, spk.make_config("mbpl", 4, thresholds=(0.5, 1.0), **lif), acfg, 2, 2,
                               zero_init_residual=False)
        run("convnext", _as_float64(blocks.ConvNeXt(p, rng)), x_sp)
        run("spikeatconv_block", _as_float64(blocks.SpikeAtConvBlock(p, rng)), x_sp)
    return results


def model_suite(seed: int = 0, coords: int = 5, batch: int = 2, config=None) -> list[CheckResult]:
    """Spot-check every parameter tensor of a float64 Nano model (T=1, smooth spikes)."""
    from . import model, neuron, train

    cfg = config if config is not None else model.ModelConfig(T=1, zero_init_residual=False, seed=seed)
    net = _as_float64(model.build(cfg))
    rng = np.random.default_rng(seed)
    images = Tensor(rng.standard_normal((batch, cfg.in_channels, cfg.resolution, cfg.resolution)))
    labels = rng.integers(0, cfg.classes, batch)

    def loss():
        return train.smoothed_ce(net(images), labels, 0.1)

    with neuron.smooth_spikes():
        return spot_check("model", loss, net.named_parameters(), coords, seed=seed)


def summarize(results: Sequence[CheckResult], name: str) -> CheckResult:
    worst = max(results, key=lambda r: r.max_error / r.tolerance)
    return CheckResult(f"{name} ({len(results)} checks, worst {worst.name})", worst.max_error, worst.tolerance,
                       all(r.passed for r in results))
