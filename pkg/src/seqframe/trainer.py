"""Command-line trainer.

    python -m seqframe --model=toy.copy.CopyLstm --logdir=/tmp/copy --mode=train_local

Exit codes: 0 on clean completion, 1 on configuration errors, 2 when a job
fails at runtime.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading

from seqframe import tensor as tn
from seqframe.hyperparams import ParamsError, apply_overrides
from seqframe.registry import RegistryError, default_registry
from seqframe.runners.cluster import ClusterSpec
from seqframe.runners.jobs import ALL_JOBS, run_cluster

log = logging.getLogger("seqframe.trainer")

MODES = {"train_local": "local", "train_sync": "sync", "train_async": "async"}
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="seqframe", description="Train a registered model.")
    ap.add_argument("--model", help="Registered model key, e.g. toy.copy.CopyLstm.")
    ap.add_argument("--logdir", help="Directory for checkpoints and summaries.")
    ap.add_argument("--mode", default="train_local", choices=sorted(MODES))
    ap.add_argument("--job", default="all", help="all, or a comma list of controller,trainer,evaler,decoder.")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--ps", type=int, default=None, help="Parameter servers (async only; default 1).")
    ap.add_argument("--model_params_override", default="", help="'path=value;path=value' assignments.")
    ap.add_argument("--model_params_file_override", default="", help="File with one assignment per line.")
    ap.add_argument("--enable_asserts", type=_bool, default=True)
    ap.add_argument("--enable_check_numerics", type=_bool, default=True)
    ap.add_argument("--checkpoint_every_steps", type=int, default=100)
    ap.add_argument("--eval_datasets", default=None, help="Comma list (default: dev when registered).")
    ap.add_argument("--poll_interval", type=float, default=0.1, help="Evaler/decoder poll interval, seconds.")
    ap.add_argument("--list_models", action="store_true")
    ap.add_argument("--log_level", default="INFO")
    return ap


def _jobs(text: str) -> tuple:
    names = [j.strip() for j in text.split(",") if j.strip()]
    if not names:
        raise UsageError("--job is empty")
    if "all" in names:
        return ALL_JOBS
    bad = [j for j in names if j not in ALL_JOBS]
    if bad:
        raise UsageError(f"unknown job(s) {bad}; choose from all,{','.join(ALL_JOBS)}")
    return tuple(names)


def _overrides(args) -> str:
    parts = []
    if args.model_params_file_override:
        with open(args.model_params_file_override, encoding="utf-8") as f:
            parts += [ln for ln in f.read().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if args.model_params_override:
        parts.append(args.model_params_override)
    return "\n".join(parts)


def _resolve(args):
    reg = default_registry()
    overrides = _overrides(args)
    entry = reg.entry(args.model)
    params = apply_overrides(reg.get_model_params(args.model, "Train"), overrides)
    if args.eval_datasets is None:
        datasets = ["dev"] if "Dev" in entry.builders else []
    else:
        datasets = [d.strip().lower() for d in args.eval_datasets.split(",") if d.strip()]
    eval_params = {ds: apply_overrides(reg.get_model_params(args.model, ds), overrides) for ds in datasets}
    return params, eval_params, datasets


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(threadName)s %(levelname)s %(message)s")

    import seqframe.model_imports  # noqa: F401  (registers bundled models)

    if args.list_models:
        print("\n".join(default_registry().list_models()))
        return EXIT_OK
    try:
        if not args.model or not args.logdir:
            raise UsageError("--model and --logdir are required")
        jobs = _jobs(args.job)
        params, eval_params, datasets = _resolve(args)
        mode = MODES[args.mode]
        num_ps = args.ps if args.ps is not None else (1 if mode == "async" else 0)
        spec = ClusterSpec(
            mode=mode,
            num_workers=args.workers,
            num_ps=num_ps,
            logdir=args.logdir,
            checkpoint_every_steps=args.checkpoint_every_steps,
            eval_datasets=datasets,
            poll_interval=args.poll_interval,
        )
    except (UsageError, ParamsError, RegistryError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    saved_flags = (tn.FLAGS.enable_asserts, tn.FLAGS.enable_check_numerics)
    tn.set_flags(enable_asserts=args.enable_asserts, enable_check_numerics=args.enable_check_numerics)
    stop = threading.Event()
    previous = _install_signal_handlers(stop)
    try:
        result = run_cluster(spec, params, eval_params, jobs, stop=stop)
    except (ParamsError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        log.exception("run failed")
        return EXIT_RUNTIME
    finally:
        for sig, h in previous.items():
            signal.signal(sig, h)
        tn.set_flags(*saved_flags)
    for name, err in result.failures:
        print(f"job {name} failed: {type(err).__name__}: {err}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _install_signal_handlers(stop: threading.Event) -> dict:
    """SIGTERM/SIGINT ask the jobs to stop; the controller then saves a final checkpoint.

    Returns the previous handlers.
    """
    if threading.current_thread() is not threading.main_thread():
        return {}

    def handler(signum, frame):
        log.warning("signal %d: stopping after a final checkpoint", signum)
        stop.set()

    previous = {}
    for sig in (signal.SIGTERM, signal.SIGINT):
        previous[sig] = signal.signal(sig, handler)
    return previous


if __name__ == "__main__":
    sys.exit(main())
