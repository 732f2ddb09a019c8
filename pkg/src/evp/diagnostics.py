"""Finite-difference gradient suite over every differentiable operation.

Each entry builds one random float64 case from a generator: a function and
the tensors it should be differentiated against. Small primitives are
checked on every coordinate; composed stacks probe a random subset of
coordinates per input so the whole suite stays fast.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .autodiff.gradcheck import GradcheckResult, check_gradients
from .backbone import CrossAttentionParams, LatentStats, StubParams, cross_attention, encode_latent
from .backbone import extract_pyramid, normalize_latent
from .blocks import AttentionParams, ConvBlockParams, MultiAttentionParams, channel_attention, conv_block
from .blocks import multi_attention, spatial_attention
from .depth_head import DecoderParams, decode, depth_from_bins, predict_bins, silog_loss
from .imafr import FeaturePyramid, ImafrParams, imafr_forward
from .params import parameters
from .text import AdapterParams, adapt

F64 = "float64"


@dataclass
class Case:
    fn: Callable[..., Tensor]
    inputs: list[Tensor]
    max_coords: int | None = None


def _t(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + margin, x - margin)


def _shape(rng, rank=None):
    rank = int(rng.integers(1, 4)) if rank is None else rank
    return tuple(int(v) for v in rng.integers(1, 5, size=rank))


def _binary(op):
    def build(rng):
        shape = _shape(rng)
        # broadcast the second operand along a random subset of axes
        other = tuple(1 if rng.random() < 0.4 else s for s in shape)
        b = _away_from_zero(rng, other, 0.5) if op is ad.div else rng.standard_normal(other)
        return Case(op, [_t(rng.standard_normal(shape)), _t(b)])

    return build


def _unary(op, positive=False, kink=False):
    def build(rng):
        shape = _shape(rng)
        if positive:
            x = rng.uniform(0.2, 3.0, shape)
        elif kink:
            x = _away_from_zero(rng, shape)
        else:
            x = rng.standard_normal(shape)
        return Case(op, [_t(x)])

    return build


def _reduce(op):
    def build(rng):
        shape = _shape(rng, 3)
        axis = [None, 0, 1, 2, (0, 2)][int(rng.integers(0, 5))]
        keep = bool(rng.integers(0, 2))
        return Case(lambda x: op(x, axis=axis, keepdims=keep), [_t(rng.standard_normal(shape))])

    return build


def _reshape(rng):
    shape = _shape(rng, 3)
    return Case(lambda x: ad.reshape(x, (-1,) + shape[2:]), [_t(rng.standard_normal(shape))])


def _transpose(rng):
    shape = _shape(rng, 3)
    axes = tuple(int(a) for a in rng.permutation(3))
    return Case(lambda x: ad.transpose(x, axes), [_t(rng.standard_normal(shape))])


def _matmul(rng):
    m, k, n = (int(v) for v in rng.integers(1, 5, size=3))
    batch = (int(rng.integers(1, 3)),) if rng.random() < 0.5 else ()
    b_batch = batch if rng.random() < 0.5 else ()
    a = _t(rng.standard_normal(batch + (m, k)))
    b = _t(rng.standard_normal(b_batch + (k, n)))
    return Case(ad.matmul, [a, b])


def _masked_select(rng):
    shape = _shape(rng, 3)
    mask = rng.random(shape) < 0.6
    mask.flat[0] = True
    return Case(lambda x: ad.masked_select(x, mask), [_t(rng.standard_normal(shape))])


def _cumsum(rng):
    shape = _shape(rng, 2)
    axis = int(rng.integers(0, 2))
    return Case(lambda x: ad.cumsum(x, axis), [_t(rng.standard_normal(shape))])


def _linear(rng):
    lead = _shape(rng, int(rng.integers(1, 3)))
    i, o = (int(v) for v in rng.integers(1, 6, size=2))
    args = [_t(rng.standard_normal(lead + (i,))), _t(rng.standard_normal((o, i))), _t(rng.standard_normal(o))]
    return Case(ad.linear, args)


def _conv2d(rng):
    k = int(rng.choice([1, 3, 5]))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, k // 2 + 1))
    n, cin, cout = (int(v) for v in rng.integers(1, 4, size=3))
    # pick an extent that tiles exactly with the chosen stride
    h = k - 2 * pad + stride * int(rng.integers(1, 4))
    h = max(h, 1)
    while (h + 2 * pad - k) % stride or h + 2 * pad < k:
        h += 1
    x = _t(rng.standard_normal((n, cin, h, h + stride)))
    w = _t(rng.standard_normal((cout, cin, k, k)))
    b = _t(rng.standard_normal(cout))
    return Case(lambda x, w, b: ad.conv2d(x, w, b, stride, pad), [x, w, b])


def _group_norm(rng):
    groups = int(rng.integers(1, 4))
    c = groups * int(rng.integers(1, 3))
    x = _t(rng.standard_normal((2, c, 3, 4)))
    return Case(lambda x, g, b: ad.group_norm(x, groups, g, b), [x, _t(rng.standard_normal(c)), _t(rng.standard_normal(c))])


def _softmax(rng):
    shape = _shape(rng, 3)
    axis = int(rng.integers(-3, 3))
    return Case(lambda x: ad.softmax(x, axis), [_t(rng.standard_normal(shape) * 2)])


def _pool(kind):
    def build(rng):
        mode = ["global", "window", "channel"][int(rng.integers(0, 3))]
        if mode == "window":
            k = int(rng.integers(1, 3))
            x = rng.standard_normal((2, 3, 2 * k, 3 * k))
            return Case(lambda x: ad.pool(x, kind, (k, k)), [_t(x)])
        x = rng.standard_normal((2, 3, 3, 4))
        axis_mode = "channel" if mode == "channel" else "spatial"
        return Case(lambda x: ad.pool(x, kind, "global", axis_mode), [_t(x)])

    return build


def _resize(rng):
    h, w = (int(v) for v in rng.integers(1, 6, size=2))
    oh, ow = (int(v) for v in rng.integers(1, 9, size=2))
    return Case(lambda x: ad.resize_bilinear(x, oh, ow), [_t(rng.standard_normal((2, 2, h, w)))])


def _concat(rng):
    cs = [int(v) for v in rng.integers(1, 4, size=int(rng.integers(2, 4)))]
    xs = [_t(rng.standard_normal((2, c, 3, 3))) for c in cs]
    return Case(lambda *xs: ad.concat_channels(xs), xs)


def _broadcast_to(rng):
    shape = _shape(rng, 3)
    src = tuple(1 if rng.random() < 0.5 else s for s in shape)
    return Case(lambda x: ad.broadcast_to(x, shape), [_t(rng.standard_normal(src))])


def _params_case(forward, params, x, max_coords=24):
    ps = parameters(params)
    return Case(lambda x, *_: forward(x), [x, *ps], max_coords)


def _spatial_attention(rng):
    c = int(rng.integers(1, 5))
    p = AttentionParams.init(c, rng, kernel=3, reduction=2, channel=False, dtype=F64)
    return _params_case(lambda x: spatial_attention(x, p), p, _t(rng.standard_normal((2, c, 5, 6))))


def _channel_attention(rng):
    c = int(rng.integers(2, 7))
    p = AttentionParams.init(c, rng, kernel=3, reduction=2, dtype=F64)
    return _params_case(lambda x: channel_attention(x, p), p, _t(rng.standard_normal((2, c, 4, 4))))


def _conv_block(rng):
    cin, cout = 3, 4
    p = ConvBlockParams.init(cin, cout, rng, groups=2, dtype=F64)
    return _params_case(lambda x: conv_block(x, p), p, _t(rng.standard_normal((2, cin, 4, 5))))


def _multi_attention(rng):
    c = 4
    p = MultiAttentionParams.init(c, rng, kernel=3, reduction=2, groups=2, dtype=F64)
    fn = lambda x: multi_attention(x, p.attention, p.cb1, p.cb2)
    return _params_case(fn, p, _t(rng.standard_normal((1, c, 6, 6))))


def _cross_attention(rng):
    c, d, k = 3, 5, 4
    p = CrossAttentionParams.init(c, d, rng, dtype=F64)
    emb = _t(rng.standard_normal((k, d)))
    ps = parameters(p)

    def fn(x, e, *_):
        out, maps = cross_attention(x, e, p)
        return ad.concat_channels([out, maps])

    return Case(fn, [_t(rng.standard_normal((2, c, 3, 3))), emb, *ps], 24)


def _adapter(rng):
    p = AdapterParams.init(6, rng, hidden=5, dtype=F64)
    return _params_case(lambda x: adapt(x, p), p, _t(_away_from_zero(rng, (4, 6))))


def _imafr(rng):
    channels = [4, 4]
    p = ImafrParams.init(channels, rng, kernel=3, reduction=2, groups=2, dtype=F64)
    f1, f2 = _t(rng.standard_normal((1, 4, 4, 4))), _t(rng.standard_normal((1, 4, 8, 8)))

    def fn(a, b, *_):
        out = imafr_forward(FeaturePyramid([a, b]), p)
        return ad.concat([ad.reshape(t, (1, -1)) for t in out], axis=1)

    return Case(fn, [f1, f2, *parameters(p)], 24)


def _predict_bins(rng):
    d_min, d_max = 1e-3, float(rng.choice([10.0, 80.0]))
    logits = _t(rng.standard_normal((2, int(rng.integers(2, 9)))))
    return Case(lambda z: predict_bins(z, d_min, d_max).centers, [logits])


def _depth_from_bins(rng):
    n, b = 2, int(rng.integers(2, 6))
    probs = _t(rng.random((n, b, 3, 3)))
    logits = _t(rng.standard_normal((n, b)))
    return Case(lambda pr, z: depth_from_bins(pr, predict_bins(z, 1e-3, 10.0)), [probs, logits])


def _decoder_margin(feats, maps, p: DecoderParams) -> float:
    """Smallest |pre-activation| over the decoder's per-level ReLUs."""
    margin = np.inf
    for f, a, block in zip(feats, maps, p.levels):
        pre = ad.group_norm(ad.conv2d(ad.concat_channels([f, a]), block.weight), block.groups, block.gn_gamma, block.gn_beta)
        margin = min(margin, float(np.abs(pre.data).min()))
    return margin


def _decode(rng):
    bins = bool(rng.integers(0, 2))
    channels, k = [3, 3, 2, 2], 2
    sizes = [2, 4, 8, 16]
    while True:
        p = DecoderParams.init(channels, k, rng, bins_enabled=bins, num_bins=4, hidden=4, groups=2, dtype=F64)
        feats = [_t(rng.standard_normal((1, c, s, s))) for c, s in zip(channels, sizes)]
        maps = [Tensor(rng.random((1, k, s, s))) for s in sizes]
        if _decoder_margin(feats, maps, p) > 1e-3:
            break

    def fn(a, b, c, d, *_):
        return ad.mean(decode(FeaturePyramid([a, b, c, d]), maps, p, out_size=(32, 32)).depth)

    return Case(fn, [*feats, *parameters(p)], 24)


def _silog(rng):
    shape = (2, 1, 4, 4)
    pred = _t(rng.uniform(0.5, 5.0, shape))
    gt = rng.uniform(0.5, 5.0, shape)
    mask = rng.random(shape) < 0.8
    mask.flat[0] = True
    lam, alpha = float(rng.uniform(0.0, 0.9)), float(rng.uniform(1.0, 10.0))
    return Case(lambda p: silog_loss(p, gt, mask, lam, alpha), [pred])


def _relu_margin(x: Tensor, stats: LatentStats, stub: StubParams, emb: Tensor) -> float:
    """Smallest |pre-activation| over the stub's ReLUs for this input."""
    h = normalize_latent(encode_latent(x, stub), stats)
    margin = np.inf
    for i, stage in enumerate(stub.stages):
        if i > 0:
            h = ad.pool(h, "avg", (2, 2))
        pre = ad.conv2d(h, stage.weight, stage.bias, padding=1)
        margin = min(margin, float(np.abs(pre.data).min()))
        h, _ = cross_attention(ad.relu(pre), emb, stage.attn)
    return margin


def _cross_entropy_chain(rng):
    """conv2d -> group_norm -> relu -> softmax -> cross-entropy against one-hot targets."""
    n, c, classes = 2, 2, 4
    x = _t(rng.standard_normal((n, c, 5, 5)))
    w = _t(rng.standard_normal((classes, c, 3, 3)))
    b = _t(rng.standard_normal(classes))
    gamma, beta = _t(rng.uniform(0.5, 1.5, classes)), _t(rng.standard_normal(classes))
    onehot = np.eye(classes)[rng.integers(0, classes, (n, 5, 5))].transpose(0, 3, 1, 2)

    def fn(x, w, b, gamma, beta):
        z = ad.relu(ad.group_norm(ad.conv2d(x, w, b, padding=1), 2, gamma, beta))
        return ad.neg(ad.mean(ad.mul(ad.log(ad.softmax(z, axis=1)), onehot)))

    return Case(fn, [x, w, b, gamma, beta])


def _pyramid(rng):
    # redraw until no ReLU input sits close enough to 0 for a probe to cross it
    while True:
        stub = StubParams.init(rng, [4, 4, 3, 3], embed_dim=5, latent_channels=2, dtype=F64)
        x = Tensor(rng.random((1, 3, 32, 32)))
        emb = _t(rng.standard_normal((3, 5)))
        stats = LatentStats(rng.uniform(0.5, 2.0, 2))
        if _relu_margin(x, stats, stub, emb) > 1e-3:
            break

    def fn(e, *_):
        feats, maps = extract_pyramid(x, e, stats, stub)
        return ad.concat([ad.reshape(t, (1, -1)) for t in [*feats, *maps]], axis=1)

    return Case(fn, [emb, *parameters(stub)], 16)


SUITE: dict[str, Callable[[np.random.Generator], Case]] = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div),
    "neg": _unary(ad.neg),
    "relu": _unary(ad.relu, kink=True),
    "sigmoid": _unary(ad.sigmoid),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, positive=True),
    "sqrt": _unary(ad.sqrt, positive=True),
    "square": _unary(ad.square),
    "sum": _reduce(ad.sum_),
    "mean": _reduce(ad.mean),
    "reshape": _reshape,
    "transpose": _transpose,
    "matmul": _matmul,
    "masked_select": _masked_select,
    "cumsum": _cumsum,
    "linear": _linear,
    "conv2d": _conv2d,
    "group_norm": _group_norm,
    "softmax": _softmax,
    "avg_pool": _pool("avg"),
    "max_pool": _pool("max"),
    "resize_bilinear": _resize,
    "concat": _concat,
    "broadcast_to": _broadcast_to,
    "spatial_attention": _spatial_attention,
    "channel_attention": _channel_attention,
    "conv_block": _conv_block,
    "multi_attention": _multi_attention,
    "cross_attention": _cross_attention,
    "text_adapter": _adapter,
    "imafr_forward": _imafr,
    "predict_bins": _predict_bins,
    "depth_from_bins": _depth_from_bins,
    "decode": _decode,
    "silog_loss": _silog,
    "extract_pyramid": _pyramid,
    "cross_entropy_chain": _cross_entropy_chain,
}


def run_case(name: str, rng: np.random.Generator, eps: float = 1e-5, seed: int = 0) -> list[float]:
    case = SUITE[name](rng)
    return check_gradients(case.fn, case.inputs, eps=eps, seed=seed, max_coords=case.max_coords)


def run_suite(
    cases: int = 20,
    seed: int = 0,
    eps: float = 1e-5,
    names=None,
    tolerance: float = 1e-4,
) -> tuple[list[GradcheckResult], float]:
    """Check every entry of ``SUITE`` on ``cases`` random instances.

    Returns the per-operation results and the elapsed wall time in seconds.
    """
    start = time.perf_counter()
    results = []
    for op_index, name in enumerate(names or SUITE):
        if name not in SUITE:
            raise KeyError(f"no gradient case named {name!r}")
        result = GradcheckResult(name, tolerance=tolerance)
        for i in range(cases):
            rng = np.random.default_rng([seed, op_index, i])
            result.errors.extend(run_case(name, rng, eps, seed=i))
        results.append(result)
    return results, time.perf_counter() - start
