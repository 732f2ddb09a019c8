import sys

import numpy as np
import pytest

from evp.errors import ConfigError, NumericalError, ShapeError
from evp.harness import (
    ABLATION_ROWS,
    AdamState,
    BoxWorld,
    RunConfig,
    ablation_config,
    adam_step,
    evaluate,
    gen_boxworld,
    load_checkpoint,
    train,
)
from evp.harness.data import render_sample
from evp.metrics import MetricsReport

# the package re-exports ``train`` the function under the submodule's name
train_mod = sys.modules["evp.harness.train"]

SMALL = {
    "steps": 6,
    "batch_size": 2,
    "backbone": {"channels": [16, 16, 8, 8]},
    "head": {"num_bins": 8, "hidden": 8},
    "data": {"image_size": 32, "train_size": 8, "eval_size": 4, "embed_k": 4, "embed_dim": 16},
}


@pytest.fixture(scope="module")
def small():
    return RunConfig.from_dict(SMALL)


# -- config -------------------------------------------------------------------

def test_config_json_round_trip():
    cfg = RunConfig.from_dict({**SMALL, "loss": {"lambda": 0.5}, "preset": "outdoor"})
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg and again.loss.lam == 0.5 and again.d_max == 80.0
    assert '"lambda": 0.5' in cfg.to_json()


def test_defaults():
    cfg = RunConfig()
    assert (cfg.steps, cfg.batch_size, cfg.data.image_size) == (500, 4, 64)
    assert cfg.toggles == (True, True, True, "i")


@pytest.mark.parametrize(
    "raw",
    [
        {"preset": "space"},
        {"reg_strategy": "x"},
        {"imafr": {"kernel": 4}},
        {"data": {"image_size": 48}},
        {"bogus": 1},
        {"head": {"bogus": 1}},
        {"head": {"d_min": 20.0}},
        {"optim": {"lr": 0.0}},
        {"backbone": {"channels": [1, 2, 3]}},
        {"imafr": 3},
    ],
)
def test_invalid_configs_raise(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_bad_json():
    with pytest.raises(ConfigError):
        RunConfig.from_json("{not json")
    with pytest.raises(ConfigError):
        RunConfig.from_json("[1]")


def test_ablation_rows_set_the_toggles():
    for row, toggles in ABLATION_ROWS.items():
        assert ablation_config(row).toggles == toggles
    with pytest.raises(ConfigError):
        ablation_config(3)


# -- data -----------------------------------------------------------------------

def test_boxworld_is_deterministic(small):
    a, b = gen_boxworld(small, "train", 3), gen_boxworld(small, "train", 3)
    assert a.images.tobytes() == b.images.tobytes() and a.depth.tobytes() == b.depth.tobytes()
    assert np.array_equal(a.embedding_stack(), b.embedding_stack())
    assert not np.array_equal(gen_boxworld(small, "eval", 3).images, a.images)


def test_boxworld_shapes_and_depth_range(small):
    w = gen_boxworld(small, "train", 5)
    assert w.images.shape == (5, 3, 32, 32) and w.depth.shape == w.mask.shape == (5, 1, 32, 32)
    assert w.images.dtype == np.float32 and w.mask.dtype == bool
    assert np.all(w.depth > 0) and np.all(w.depth <= w.d_max)
    assert w.embedding_stack().shape == (5, 4, 16)
    assert [e.source_id for e in w.embeddings] == [d.image_id for d in w.descriptors]


def test_object_coverage_is_balanced():
    cfg = RunConfig()
    cover = [np.mean(render_sample(cfg, "train", i)[1] < cfg.d_max) for i in range(1000)]
    assert 0.05 < np.mean(cover) < 0.95


def test_boxworld_save_load(small, tmp_path):
    w = gen_boxworld(small, "eval")
    w.save(tmp_path / "d")
    back = BoxWorld.load(tmp_path / "d")
    assert back.images.tobytes() == w.images.tobytes() and np.array_equal(back.mask, w.mask)
    assert back.descriptors == w.descriptors and back.preset == w.preset


def test_boxworld_errors(small):
    with pytest.raises(ConfigError):
        gen_boxworld(small, "test")


# -- optimizer --------------------------------------------------------------------

def test_first_adam_step_moves_by_lr():
    p, g = np.array([1.0, -2.0, 3.0]), np.array([0.5, -4.0, 1e-3])
    (new,), state = adam_step([p], [g], AdamState(), lr=0.1, eps=0.0)
    assert np.allclose(new, p - 0.1 * np.sign(g), rtol=0, atol=1e-15)
    assert state.step == 1 and p[0] == 1.0


def test_zero_gradient_leaves_params():
    p = np.array([1.0, 2.0])
    (new,), _ = adam_step([p], [np.zeros(2)], AdamState())
    assert np.array_equal(new, p)


def test_adam_matches_a_scalar_reference_on_a_quadratic():
    x = np.array([2.0, -1.0])
    state = AdamState()
    ref = [2.0, -1.0]
    m, v = [0.0, 0.0], [0.0, 0.0]
    lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
    for t in range(1, 11):
        (x,), state = adam_step([x], [2 * x], state, lr, b1, b2, eps)
        for i in range(2):
            g = 2 * ref[i]
            m[i] = b1 * m[i] + (1 - b1) * g
            v[i] = b2 * v[i] + (1 - b2) * g * g
            ref[i] -= lr * (m[i] / (1 - b1**t)) / ((v[i] / (1 - b2**t)) ** 0.5 + eps)
        assert np.max(np.abs(x - ref)) <= 1e-12


def test_adam_errors():
    with pytest.raises(ShapeError):
        adam_step([np.ones(2)], [np.ones(3)], AdamState())
    with pytest.raises(ValueError):
        adam_step([np.ones(2)], [np.ones(2)], AdamState(), lr=0)


# -- training and evaluation -------------------------------------------------------

@pytest.fixture(scope="module")
def trained(small, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt")
    data = gen_boxworld(small, "train")
    return train(small, out, data), out, gen_boxworld(small, "eval")


def test_training_writes_a_checkpoint(trained):
    result, out, _ = trained
    assert len(result.losses) == 6 and all(np.isfinite(result.losses))
    assert (out / "config.json").is_file() and (out / "train_log.tsv").read_text() == result.log_text()


def test_checkpoint_reproduces_the_report_bitwise(trained, tmp_path):
    result, out, eval_data = trained
    direct = evaluate((result.config, result.model), eval_data)
    reloaded = evaluate(out, eval_data, report_path=tmp_path / "r.txt")
    assert direct == reloaded
    assert MetricsReport.from_text((tmp_path / "r.txt").read_text()) == direct
    assert MetricsReport.from_json((tmp_path / "r.json").read_text()) == direct


def test_ground_truth_predictor_is_perfect(trained):
    _, out, eval_data = trained
    r = evaluate(out, eval_data, "ground_truth")
    assert r.rel == r.rmse == r.rmse_log == 0.0 and r.delta1 == 1.0


def test_median_predictor_matches_an_independent_loop(trained):
    _, out, eval_data = trained
    r = evaluate(out, eval_data, "median")
    valid = sorted(float(v) for v, m in zip(eval_data.depth.ravel(), eval_data.mask.ravel()) if m)
    n = len(valid)
    med = valid[n // 2] if n % 2 else 0.5 * (valid[n // 2 - 1] + valid[n // 2])
    rmse = (sum((med - g) ** 2 for g in valid) / n) ** 0.5
    rel = sum(abs(med - g) / g for g in valid) / n
    assert abs(r.rmse - rmse) <= 1e-9 and abs(r.rel - rel) <= 1e-9 and r.pixel_count == n


def test_preset_mismatch_rejected(trained, small):
    _, out, _ = trained
    outdoor = gen_boxworld(small.replace(preset="outdoor"), "eval", 2)
    with pytest.raises(ConfigError):
        evaluate(out, outdoor)
    with pytest.raises(ConfigError):
        train(small, data=outdoor)
    with pytest.raises(ValueError):
        evaluate(out, gen_boxworld(small, "eval", 2), "oracle")


def test_missing_checkpoint(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)


def test_nan_abort_names_the_step(small, monkeypatch):
    real = train_mod.silog_loss
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NumericalError("log of non-positive value")
        return real(*args, **kwargs)

    monkeypatch.setattr(train_mod, "silog_loss", flaky)
    with pytest.raises(NumericalError, match="step 3"):
        train(small, data=gen_boxworld(small, "train"))


def test_training_is_bitwise_reproducible(small, tmp_path):
    data = gen_boxworld(small, "train")
    a = train(small, tmp_path / "a", data)
    b = train(small, tmp_path / "b", data)
    assert a.log_text() == b.log_text()
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("row", sorted(ABLATION_ROWS))
def test_every_ablation_row_trains(small, row):
    cfg = ablation_config(row, small).replace(steps=2)
    result = train(cfg, data=gen_boxworld(cfg, "train"))
    assert len(result.losses) == 2 and all(np.isfinite(result.losses))
