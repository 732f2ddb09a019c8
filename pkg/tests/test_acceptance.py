"""Top-level acceptance criteria, one test each.

Every test prints a single PASS/FAIL line (visible even without ``-s``) and
then asserts, so ``pytest tests/test_acceptance.py`` doubles as a report.
"""

import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

import oracles
from builders import as_numpy, imafr_setup, perturbed
from evp import evpt
from evp.autodiff import Tensor, conv2d, linear, pool, resize_bilinear, softmax
from evp.depth_head import DecoderParams, decode, depth_from_bins, predict_bins
from evp.diagnostics import run_suite
from evp.errors import BadMagicError, BadVersionError, TruncatedError
from evp.harness import ABLATION_ROWS, RunConfig, ablation_config, evaluate, gen_boxworld, train
from evp.imafr import FeaturePyramid, imafr_forward
from evp.metrics import REPORT_KEYS, MetricsReport, depth_metrics, overall_iou
from evp.params import named_parameters
from evp.text import EmbeddingSet, aggregate


def emit(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def test_gradient_suite(capsys):
    results, elapsed = run_suite(cases=20, seed=0)
    names = {r.name for r in results}
    required = {"multi_attention", "imafr_forward", "decode", "silog_loss"}
    worst = max(results, key=lambda r: r.max_error)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and required <= names and worst.max_error < 1e-4 and elapsed < 60
    emit(capsys, "gradient-suite", ok, f"{len(results)} ops x 20 cases, worst {worst.name} {worst.max_error:.2e}, {elapsed:.1f}s, failed={failed}")


def _oracle_cases(kind, rng):
    if kind == "linear":
        x, w, b = rng.standard_normal((3, 5)), rng.standard_normal((4, 5)), rng.standard_normal(4)
        return linear(T(x), T(w), T(b)).data, oracles.linear(x, w, b)
    if kind == "conv2d":
        stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        x, w, b = rng.standard_normal((2, 2, 7, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
        return conv2d(T(x), T(w), T(b), stride, padding).data, oracles.conv2d(x, w, b, stride, padding)
    if kind == "pool":
        x = rng.standard_normal((2, 3, 6, 6))
        kind_ = str(rng.choice(["avg", "max"]))
        scope, mode = [("global", "spatial"), ("global", "channel"), ((2, 2), "spatial"), ((3, 1), "spatial")][int(rng.integers(0, 4))]
        return pool(T(x), kind_, scope, mode).data, oracles.pool(x, kind_, scope, mode)
    if kind == "softmax":
        x = rng.standard_normal((2, 3, 4)) * 3
        axis = int(rng.integers(0, 3))
        return softmax(T(x), axis).data, oracles.softmax(x, axis)
    if kind == "resize":
        x = rng.standard_normal((1, 2, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        oh, ow = (int(v) for v in rng.integers(1, 10, size=2))
        return resize_bilinear(T(x), oh, ow).data, oracles.resize_bilinear(x, oh, ow)
    if kind == "depth_metrics":
        pred, gt = rng.uniform(0.1, 10, (6, 6)), rng.uniform(0.1, 10, (6, 6))
        mask = rng.random((6, 6)) > 0.3
        mask[0, 0] = True
        got, ref = depth_metrics(pred, gt, mask).as_dict(), oracles.depth_metrics(pred, gt, mask)
        return np.array([got[k] for k in ref]), np.array(list(ref.values()))
    preds = [rng.random((4, 5)) > 0.5 for _ in range(5)]
    gts = [rng.random((4, 5)) > 0.5 for _ in range(5)]
    gts[0][0, 0] = True
    return np.array([overall_iou(preds, gts)]), np.array([oracles.overall_iou(preds, gts)])


def test_oracle_suite(capsys):
    kinds = ["conv2d", "linear", "pool", "softmax", "resize", "depth_metrics", "overall_iou"]
    worst = {}
    for j, kind in enumerate(kinds):
        err = 0.0
        for i in range(100):
            got, ref = _oracle_cases(kind, np.random.default_rng([j, i]))
            assert got.shape == ref.shape
            err = max(err, float(np.max(np.abs(got - ref))))
        worst[kind] = err
    ok = all(e <= 1e-12 for e in worst.values())
    emit(capsys, "oracle-suite", ok, "100 instances each, max err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_imafr_contract(capsys):
    shapes_ok = True
    for i in range(100):
        F, p = imafr_setup(np.random.default_rng([10, i]))
        shapes_ok &= imafr_forward(F, p).shapes == F.shapes
    coarse_isolated = fine_reaches = True
    for i in range(100):
        rng = np.random.default_rng([11, i])
        F, p = imafr_setup(rng, levels=4)
        base = as_numpy(imafr_forward(F, p))
        moved = as_numpy(imafr_forward(perturbed(F, 0, rng), p))
        coarse_isolated &= all(np.array_equal(a, b) for a, b in zip(base[1:], moved[1:]))
        fine_reaches &= not np.array_equal(base[0], as_numpy(imafr_forward(perturbed(F, 3, rng), p))[0])
    ok = shapes_ok and coarse_isolated and fine_reaches
    emit(capsys, "imafr-contract", ok, f"shapes={shapes_ok} f1-isolated={coarse_isolated} f4-reaches-fe1={fine_reaches} (100 configs)")


def test_bins_contract(capsys):
    lo, hi = 1e-3, 10.0
    increasing = inside = sums = depth_ok = True
    for i in range(1000):
        rng = np.random.default_rng([20, i])
        nb = int(rng.integers(2, 65))
        bins = predict_bins(T(rng.standard_normal((2, nb)) * rng.uniform(0.1, 5)), lo, hi)
        c = bins.centers.data
        increasing &= bool(np.all(np.diff(c, axis=1) > 0))
        inside &= bool(np.all(c > lo) and np.all(c < hi))
        probs = softmax(T(rng.standard_normal((2, nb, 3, 3)) * 4), axis=1)
        sums &= bool(np.max(np.abs(probs.data.sum(axis=1) - 1)) <= 1e-6)
        d = depth_from_bins(probs, bins).data
        depth_ok &= bool(np.all(d >= lo) and np.all(d <= hi))
    for i in range(100):
        rng = np.random.default_rng([21, i])
        chans, sizes = [4, 4, 2, 2], [1, 2, 4, 8]
        F = FeaturePyramid([T(rng.standard_normal((1, c, s, s)) * 3) for c, s in zip(chans, sizes)])
        attn = [T(rng.random((1, 2, s, s))) for s in sizes]
        p = DecoderParams.init(chans, 2, rng, num_bins=int(rng.integers(2, 17)), hidden=4, d_min=lo, d_max=hi, dtype="float64")
        out = decode(F, attn, p, out_size=(16, 16))
        sums &= bool(np.max(np.abs(out.probs.data.sum(axis=1) - 1)) <= 1e-6)
        depth_ok &= bool(np.all(out.depth.data >= lo) and np.all(out.depth.data <= hi))
    exact = True
    for d_max in (10.0, 80.0):
        for nb in range(2, 257):
            k = np.arange(1, nb + 1)
            centers = predict_bins(T(np.zeros((1, nb))), lo, d_max).centers.data[0]
            exact &= np.array_equal(centers, lo + (d_max - lo) * (k - 0.5) / nb)
    ok = increasing and inside and sums and depth_ok and exact
    emit(capsys, "bins-contract", ok, f"increasing={increasing} inside={inside} probs-sum={sums} depth-range={depth_ok} uniform-exact={exact}")


def test_aggregation_algebra(capsys):
    perm_exact = vd_close = True
    vd_err = 0.0
    for i in range(200):
        rng = np.random.default_rng([30, i])
        n = int(rng.integers(1, 10))
        sets = [EmbeddingSet(T(rng.standard_normal((5, 8))), f"s{j}") for j in range(n)]
        shuffled = [sets[j] for j in rng.permutation(n)]
        perm_exact &= np.array_equal(aggregate(sets, "d")[0].values, aggregate(shuffled, "d")[0].values)
        vd_err = max(vd_err, float(np.max(np.abs(aggregate(sets, "vd")[0].values - aggregate(aggregate(sets, "v"), "d")[0].values))))
    vd_close = vd_err <= 1e-12
    rng = np.random.default_rng(31)
    one = [EmbeddingSet(T(rng.standard_normal((40, 768))), "only")]
    identity = np.array_equal(aggregate(one, "d")[0].values, one[0].values)
    sets = [EmbeddingSet(rng.standard_normal((40, 768)).astype(np.float32), f"s{j}") for j in range(6)]
    shapes = [(s.k, s.d) for s in aggregate(sets, "i")] == [(40, 768)] * 6
    shapes &= [(s.k, s.d) for s in aggregate(sets, "vd")] == [(1, 768)]
    ok = perm_exact and vd_close and identity and shapes
    emit(capsys, "aggregation-algebra", ok, f"d-perm-exact={perm_exact} vd-vs-v-then-d={vd_err:.1e} single-d-identity={identity} shapes={shapes}")


def test_metrics_boundary(capsys):
    gt = np.random.default_rng(40).uniform(0.1, 10, (16, 16))
    r = depth_metrics(1.25 * gt, gt)
    ok = r.delta1 == 0.0 and abs(r.rel - 0.25) <= 1e-12
    emit(capsys, "metrics-boundary", ok, f"delta1={r.delta1} rel-0.25={r.rel - 0.25:.1e}")


@pytest.fixture(scope="module")
def toy_runs():
    cfg = RunConfig()
    with threadpool_limits(1):
        data = gen_boxworld(cfg, "train")
        start = time.perf_counter()
        first = train(cfg, data=data)
        elapsed = time.perf_counter() - start
        second = train(cfg, data=data)
        eval_data = gen_boxworld(cfg, "eval")
        model = evaluate((cfg, first.model), eval_data)
        median = evaluate((cfg, first.model), eval_data, "median")
    return first, second, elapsed, model, median


def test_toy_training(capsys, toy_runs):
    first, second, elapsed, model, median = toy_runs
    losses = np.asarray(first.losses)
    ratio = losses[-10:].mean() / losses[:10].mean()
    same_log = first.log_text() == second.log_text()
    same_params = all(
        a.data.tobytes() == b.data.tobytes()
        for (_, a), (_, b) in zip(named_parameters(first.model, include_frozen=True), named_parameters(second.model, include_frozen=True))
    )
    ok = len(losses) == 500 and ratio <= 0.5 and model.rmse < median.rmse and elapsed < 600 and same_log and same_params
    emit(
        capsys,
        "toy-training",
        ok,
        f"loss ratio {ratio:.3f}, rmse {model.rmse:.4f} vs median {median.rmse:.4f}, {elapsed:.1f}s, reproducible={same_log and same_params}",
    )


def test_ablation_plumbing(capsys, tmp_path):
    base = RunConfig().replace(steps=50)
    data, eval_data = gen_boxworld(base, "train"), gen_boxworld(base, "eval")
    rows = {}
    for row in sorted(ABLATION_ROWS):
        cfg = ablation_config(row, base)
        result = train(cfg, data=data)
        path = tmp_path / f"row{row}.txt"
        report = evaluate((cfg, result.model), eval_data, report_path=path)
        text = MetricsReport.from_text(path.read_text())
        js = MetricsReport.from_json(path.with_suffix(".json").read_text())
        values = [getattr(report, k) for k in REPORT_KEYS if k != "iou"]
        rows[row] = (
            cfg.toggles == ABLATION_ROWS[row]
            and len(result.losses) == 50
            and text == js == report
            and all(np.isfinite(values))
        )
    ok = sorted(rows) == [1, 2, 4, 9, 10, 11, 12] and all(rows.values())
    emit(capsys, "ablation-plumbing", ok, " ".join(f"row{r}={'ok' if v else 'bad'}" for r, v in rows.items()))


def test_format_conformance(capsys, tmp_path):
    round_trip = True
    for i in range(50):
        rng = np.random.default_rng([50, i])
        shape = tuple(int(v) for v in rng.integers(1, 6, size=int(rng.integers(0, 4))))
        a = rng.standard_normal(shape).astype(rng.choice([np.float32, np.float64]))
        blob = evpt.encode(a)
        back = evpt.decode(blob)
        round_trip &= back.dtype == a.dtype and back.tobytes() == a.tobytes() and evpt.encode(back) == blob
    evpt.save(tmp_path / "e.evpt", np.zeros((40, 768), np.float32))
    size = (tmp_path / "e.evpt").stat().st_size
    blob = evpt.encode(np.ones((2, 2), np.float32))
    raised = []
    for bad in (b"XXXX" + blob[4:], blob[:4] + b"\x09" + blob[5:], blob[:-3]):
        try:
            evpt.decode(bad)
            raised.append(None)
        except (BadMagicError, BadVersionError, TruncatedError) as exc:
            raised.append(type(exc))
    distinct = raised == [BadMagicError, BadVersionError, TruncatedError]
    ok = round_trip and size == 122904 and distinct
    emit(capsys, "format-conformance", ok, f"round-trip={round_trip} size={size} distinct-errors={distinct}")
