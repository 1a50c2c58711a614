"""Command-line surface: data generation, training, inference, benchmarks,
ablations, and the built-in selftest.

Exit codes: 0 success, 1 validation failure, 2 usage error. Thread pinning
happens before numpy loads so `--threads 1` really is single-threaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class UsageFault(Exception):
    """Bad invocation (missing files, malformed config): exit code 2."""


_POOL_LIMIT = None


def _pin_threads(argv):
    n = None
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            n = argv[i + 1]
        elif a.startswith("--threads="):
            n = a.split("=", 1)[1]
    explicit = n is not None
    n = n or "1"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        if explicit:
            os.environ[var] = n
        else:
            os.environ.setdefault(var, n)
    # env vars only matter before the BLAS library loads; if numpy is already
    # in the process (programmatic use), clamp the live pools when possible
    global _POOL_LIMIT
    try:
        import threadpoolctl

        _POOL_LIMIT = threadpoolctl.threadpool_limits(int(n))
    except Exception:
        pass


def build_parser():
    p = argparse.ArgumentParser(prog="vrwkv",
                                description="Desk-scale visual RWKV harness")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS/OpenMP threads (default 1: deterministic)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint=False):
        sp.add_argument("--config", help="JSON config (model/train/data sections)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="model checkpoint path")

    sp = sub.add_parser("gen-data", help="write a synthetic visual-QA dataset")
    common(sp)
    sp.add_argument("--out", default="dataset.npz")
    sp.add_argument("-n", type=int, help="sample count (default: data.n_train)")

    sp = sub.add_parser("train", help="two-stage training run")
    common(sp)
    sp.add_argument("--out", default="model.vrwk", help="checkpoint output path")

    sp = sub.add_parser("infer", help="stream a greedy answer for one image")
    common(sp, checkpoint=True)
    sp.add_argument("--image", required=True, help=".npy image, (h, w, 3) float in [0,1]")
    sp.add_argument("--instruction", default="what color is cell (0,0)?")
    sp.add_argument("--max-new", type=int, default=16)

    sp = sub.add_parser("bench", help="latency/memory sweep")
    common(sp)
    sp.add_argument("--model", choices=["rwkv", "attention"], default="rwkv")
    sp.add_argument("--max-len", type=int, default=24576)
    sp.add_argument("--out", help="CSV path (default bench-<model>.csv)")

    sp = sub.add_parser("ablate", help="evaluate a checkpoint along one axis")
    common(sp, checkpoint=True)
    sp.add_argument("--axis", required=True,
                    choices=["prompt", "scan", "reduction", "image_tokens"])
    sp.add_argument("--out", help="JSON path (default ablate-<axis>.json)")

    sub.add_parser("selftest", help="run the built-in oracle suite")
    return p


def load_configs(path):
    from .model import ModelConfig
    from .train import DataConfig, TrainConfig
    from .errors import ConfigError

    raw = {}
    if path is not None:
        if not os.path.isfile(path):
            raise UsageFault(f"config file not found: {path}")
        try:
            with open(path) as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageFault(f"config is not valid JSON: {e}")
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise UsageFault(f"unknown config sections: {sorted(unknown)}")
    try:
        mcfg = ModelConfig.from_dict(raw.get("model", {}))
        tcfg = TrainConfig(**raw.get("train", {}))
        dcfg = DataConfig(**raw.get("data", {}))
    except (ConfigError, TypeError) as e:
        raise UsageFault(f"bad config: {e}")
    if tcfg.schedule != "cosine":
        raise UsageFault(f"unsupported schedule {tcfg.schedule!r}")
    return mcfg, tcfg, dcfg


def _load_checkpoint(path):
    from . import checkpoint as ck

    if not os.path.isfile(path):
        raise UsageFault(f"checkpoint not found: {path}")
    return ck.load_checkpoint(path)


def cmd_gen_data(args):
    import numpy as np
    from .data import gen_synthetic

    _, tcfg, dcfg = load_configs(args.config)
    seed = args.seed if args.seed is not None else tcfg.seed
    n = args.n if args.n is not None else dcfg.n_train
    samples = gen_synthetic(seed, n, dcfg.grid, dcfg.palette, dcfg.img_px)
    np.savez(args.out,
             images=np.stack([s.image for s in samples]) if samples else np.zeros((0,)),
             instructions=np.array([s.instruction for s in samples]),
             answers=np.array([s.answer for s in samples]),
             seed=np.array([seed]))
    print(f"wrote {n} samples (grid {dcfg.grid}, palette {dcfg.palette}) to {args.out}")
    return 0


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .model import init_model
    from .train import run_training

    mcfg, tcfg, dcfg = load_configs(args.config)
    if args.seed is not None:
        tcfg.seed = args.seed
    model = init_model(mcfg, seed=tcfg.seed)
    metrics = run_training(model, tcfg, dcfg, log=print)
    save_checkpoint(args.out, model)
    metrics_path = args.out + ".metrics.json"
    with open(metrics_path, "w") as f:
        json.dump({"stage1_losses": metrics["stage_losses"][1],
                   "stage2_losses": metrics["stage_losses"][2],
                   "accuracy": metrics["accuracy"]}, f, indent=1)
    print(f"checkpoint: {args.out}")
    print(f"metrics: {metrics_path}")
    print(f"accuracy: {metrics['accuracy']:.4f}")
    return 0


def cmd_infer(args):
    import numpy as np
    from . import model as md
    from .prompting import BOS, EOS, PromptStrategy, assemble_prompt, tokenize
    from .train import visual_tokens

    model, cfg = _load_checkpoint(args.checkpoint)
    if not os.path.isfile(args.image):
        raise UsageFault(f"image not found: {args.image}")
    image = np.load(args.image)
    if image.ndim != 3 or image.shape[2] != cfg.image_channels:
        raise UsageFault(f"image must be (h, w, {cfg.image_channels}), got {image.shape}")
    vis, grid_hw, _ = visual_tokens(model, image[None].astype(np.float32))
    instr_ids = [BOS] + tokenize(args.instruction)
    layout = assemble_prompt(PromptStrategy(cfg.prompt), model.embed[instr_ids], vis[0],
                             np.zeros((0, cfg.d_model), model.dtype))
    layout.grid_hw = grid_hw

    state = md.new_recurrent_state(model)
    s, e = layout.image_span
    logits = None
    if s > 0:
        logits, state = md.forward_chunk(layout.embeddings[:s], state, model)
    logits, state = md.forward_chunk(layout.embeddings[s:e], state, model, grid_hw=grid_hw)
    if e < len(layout):
        logits, state = md.forward_chunk(layout.embeddings[e:], state, model)

    out = []
    tok = int(logits[-1].argmax())
    for _ in range(args.max_new):
        if tok == EOS:
            break
        out.append(tok)
        sys.stdout.write(bytes([tok]).decode("utf-8", errors="replace") if tok < 256 else "")
        sys.stdout.flush()
        step_logits, state = md.forward_step(tok, state, model)
        tok = int(step_logits.argmax())
    sys.stdout.write("\n")
    return 0


def cmd_bench(args):
    from .bench import DEFAULT_LENGTHS, bench_sweep, write_csv

    mcfg, tcfg, _ = load_configs(args.config)
    seed = args.seed if args.seed is not None else tcfg.seed
    lengths = [l for l in DEFAULT_LENGTHS if l <= args.max_len]
    if not lengths or lengths[-1] != args.max_len:
        lengths.append(args.max_len)
    records = bench_sweep(args.model, lengths, mcfg, seed=seed, log=print)
    out = args.out or f"bench-{args.model}.csv"
    write_csv(records, out)
    print(f"wrote {len(records)} rows to {out}")
    return 0


def cmd_ablate(args):
    from .ablate import run_ablation
    from .data import gen_synthetic
    from .train import DataConfig

    model, _ = _load_checkpoint(args.checkpoint)
    _, tcfg, dcfg = load_configs(args.config)
    if args.seed is not None:
        tcfg.seed = args.seed
    eval_set = gen_synthetic(tcfg.seed + 1, dcfg.n_eval, dcfg.grid, dcfg.palette, dcfg.img_px)
    rows = run_ablation(args.axis, model, tcfg, dcfg, eval_set=eval_set, log=print)
    out = args.out or f"ablate-{args.axis}.json"
    with open(out, "w") as f:
        json.dump(rows, f, indent=1)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_selftest(args):
    from .selftest import run_all

    failures = run_all(log=print)
    if failures:
        print(f"{failures} check(s) failed")
        return 1
    print("all checks passed")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "bench": cmd_bench,
    "ablate": cmd_ablate,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    from .errors import VrwkvError
    try:
        return COMMANDS[args.command](args)
    except UsageFault as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except VrwkvError as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
