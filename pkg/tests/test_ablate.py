import numpy as np
import pytest

from vrwkv.ablate import IMAGE_TOKEN_LADDER, run_ablation
from vrwkv.data import gen_synthetic
from vrwkv.model import ModelConfig, init_model
from vrwkv.train import DataConfig, TrainConfig


@pytest.fixture(scope="module")
def setup():
    cfg = ModelConfig(d_model=16, n_layers=2, n_heads=2, head_dim=8, d_ffn=32,
                      d_vision=6, patch=2, lora_rank=2, scan_mode="bi", prompt="sandwich")
    model = init_model(cfg, seed=0)
    tcfg = TrainConfig(seed=3, batch_size=8, epochs_stage1=0, epochs_stage2=1)
    dcfg = DataConfig(grid=2, palette=3, n_train=32, n_eval=12, img_px=4)
    eval_set = gen_synthetic(4, 12, 2, 3, 4)
    return model, tcfg, dcfg, eval_set


def test_prompt_axis_exactly_three_rows(setup):
    model, tcfg, dcfg, eval_set = setup
    rows = run_ablation("prompt", model, tcfg, dcfg, eval_set=eval_set)
    assert [r["axis_value"] for r in rows] == ["first", "last", "sandwich"]
    for r in rows:
        assert 0.0 <= r["accuracy"] <= 1.0
        assert r["n"] == len(eval_set)


def test_scan_axis_restores_mode(setup):
    model, tcfg, dcfg, eval_set = setup
    before = model.cfg.scan_mode
    rows = run_ablation("scan", model, tcfg, dcfg, eval_set=eval_set)
    assert [r["axis_value"] for r in rows] == ["uni", "bi", "multi"]
    assert model.cfg.scan_mode == before


def test_image_tokens_ladder(setup):
    model, tcfg, dcfg, eval_set = setup
    rows = run_ablation("image_tokens", model, tcfg, dcfg, eval_set=eval_set)
    assert [r["axis_value"] for r in rows] == [str(v) for v in IMAGE_TOKEN_LADDER]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)


def test_reduction_axis_does_not_mutate_model(setup):
    model, tcfg, dcfg, eval_set = setup
    from vrwkv.model import param_dict
    before = {n: a.copy() for n, a in param_dict(model).items()}
    rows = run_ablation("reduction", model, tcfg, dcfg, eval_set=eval_set,
                        train_set=gen_synthetic(5, 16, 2, 3, 4), finetune_updates=1)
    assert [r["axis_value"] for r in rows] == ["sample", "batch"]
    after = param_dict(model)
    for n in before:
        np.testing.assert_array_equal(before[n], after[n], err_msg=n)


def test_unknown_axis(setup):
    model, tcfg, dcfg, eval_set = setup
    with pytest.raises(ValueError):
        run_ablation("dropout", model, tcfg, dcfg, eval_set=eval_set)
