"""Train a toy reference model and report dev exact-match accuracy.

    python scripts/train_toy_copy.py --logdir /tmp/copy
    python scripts/train_toy_copy.py --logdir /tmp/copy_async --mode train_async --workers 2 --steps 5000
"""

import argparse
import sys
import time

import seqframe.model_imports  # noqa: F401
from seqframe.registry import get_model_params
from seqframe.runners import checkpoint as ckpt_lib
from seqframe.runners import jobs
from seqframe.runners.hosts import build_model
from seqframe.trainer import main as trainer_main


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--logdir", required=True)
    ap.add_argument("--model", default="toy.copy.CopyLstm")
    ap.add_argument("--mode", default="train_local", choices=["train_local", "train_sync", "train_async"])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--steps", type=int, default=None, help="Override max_steps.")
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    key = "task.train.max_steps" if "copy" in args.model else "train.max_steps"
    overrides = f"{key}={args.steps}" if args.steps else ""
    start = time.monotonic()
    code = trainer_main(
        [
            f"--model={args.model}",
            f"--logdir={args.logdir}",
            f"--mode={args.mode}",
            f"--workers={args.workers}",
            "--job=controller,trainer",
            "--checkpoint_every_steps=500",
            f"--model_params_override={overrides}",
        ]
    )
    if code:
        return code
    path = ckpt_lib.latest_checkpoint(args.logdir)
    model = build_model(get_model_params(args.model, "Dev", overrides), is_eval=True)
    ckpt = ckpt_lib.restore_checkpoint(path)
    model.load(ckpt.values)
    acc = jobs.decode_accuracy(model)
    print(f"step {ckpt.step}: " + ", ".join(f"{k}={v:.4f}" for k, v in sorted(acc.items())))
    print(f"wall time {time.monotonic() - start:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
