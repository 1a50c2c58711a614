"""Ablation sweeps over a trained checkpoint.

Each axis evaluates held-out accuracy while one knob varies; results are
reported, never asserted against any expected ordering. The reduction axis
is the only training-time knob, so it briefly re-finetunes a copy of the
checkpoint under each reduction mode before evaluating.
"""

from __future__ import annotations

import copy

from .data import gen_synthetic
from .model import Model
from .prompting import PromptStrategy
from .train import DataConfig, TrainConfig, evaluate, run_training

PROMPT_AXIS = ["first", "last", "sandwich"]
SCAN_AXIS = ["uni", "bi", "multi"]
REDUCTION_AXIS = ["sample", "batch"]
IMAGE_TOKEN_LADDER = [1, 5, 10, 17, 37, 65, 145, "full"]
AXES = ("prompt", "scan", "reduction", "image_tokens")


def run_ablation(kind: str, model: Model, tcfg: TrainConfig, dcfg: DataConfig,
                 eval_set=None, train_set=None, finetune_updates: int = 40, log=None):
    """Returns a list of {axis_value, accuracy, n} dicts for one axis."""
    if kind not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {kind!r}")
    if eval_set is None:
        eval_set = gen_synthetic(tcfg.seed + 1, dcfg.n_eval, dcfg.grid, dcfg.palette, dcfg.img_px)
    n = len(eval_set)
    default_strategy = PromptStrategy(model.cfg.prompt)
    rows = []

    if kind == "prompt":
        for value in PROMPT_AXIS:
            acc = evaluate(model, eval_set, PromptStrategy(value))
            rows.append({"axis_value": value, "accuracy": acc, "n": n})
    elif kind == "scan":
        original = model.cfg.scan_mode
        try:
            for value in SCAN_AXIS:
                model.cfg.scan_mode = value
                rows.append({"axis_value": value,
                             "accuracy": evaluate(model, eval_set, default_strategy), "n": n})
        finally:
            model.cfg.scan_mode = original
    elif kind == "reduction":
        if train_set is None:
            train_set = gen_synthetic(tcfg.seed, dcfg.n_train, dcfg.grid, dcfg.palette, dcfg.img_px)
        group = tcfg.batch_size * tcfg.grad_accum
        budget = min(len(train_set), max(group, finetune_updates * group))
        for value in REDUCTION_AXIS:
            clone = copy.deepcopy(model)
            ft = copy.deepcopy(tcfg)
            ft.reduction = value
            ft.epochs_stage1 = 0
            ft.epochs_stage2 = 1
            run_training(clone, ft, dcfg, train_set=train_set[:budget], eval_set=eval_set[:1])
            rows.append({"axis_value": value,
                         "accuracy": evaluate(clone, eval_set, default_strategy), "n": n})
    else:
        sample = eval_set[0]
        grid_tokens = ((sample.image.shape[0] // model.cfg.patch)
                       * (sample.image.shape[1] // model.cfg.patch))
        for value in IMAGE_TOKEN_LADDER:
            # ladder entries above the actual grid clamp to the full span
            used = grid_tokens if value == "full" else min(int(value), grid_tokens)
            acc = evaluate(model, eval_set, default_strategy, image_tokens=used)
            rows.append({"axis_value": str(value), "accuracy": acc, "n": n})

    if log:
        for row in rows:
            log(f"{kind}={row['axis_value']}: accuracy {row['accuracy']:.3f}")
    return rows
