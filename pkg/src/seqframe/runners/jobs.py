"""Runner jobs and the in-process cluster that wires them together.

Jobs only coordinate through the checkpoint directory and through requests to
the variable host. The Controller restores or initializes variables, writes
``params.txt`` and checkpoints; trainers update the host; the Evaler and
Decoder follow ``checkpoints.txt`` and append one line per checkpoint step.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from dataclasses import dataclass, field

from seqframe.base_model import BaseModel, MultiTaskModel, apply_init_rules, metric_mean
from seqframe.hyperparams import Params, instantiate
from seqframe.runners import checkpoint as ckpt_lib
from seqframe.runners.cluster import ClusterSpec
from seqframe.runners.hosts import (
    AsyncHost,
    LocalHost,
    TrainerClient,
    async_train_step,
    build_model,
    split_batch,
    sync_train_step,
)

log = logging.getLogger(__name__)

ALL_JOBS = ("controller", "trainer", "evaler", "decoder")


def _append(path: str, lines) -> None:
    if lines:
        with open(path, "a", encoding="utf-8") as f:
            f.writelines(lines)


def _steps_in(path: str) -> set[int]:
    """Steps already recorded in a summary file (makes restarts idempotent)."""
    try:
        with open(path, encoding="utf-8") as f:
            return {int(line.split("\t", 1)[0]) for line in f if line.strip()}
    except FileNotFoundError:
        return set()


def make_input(input_params: Params, worker_id: int = 0, for_eval: bool = False):
    p = input_params.copy()
    if for_eval:
        p.repeat = False
        p.shuffle_seed = -1
    elif worker_id and p.shuffle_seed >= 0:
        p.shuffle_seed = p.shuffle_seed + 7919 * worker_id
    return instantiate(p)


def train_params_of(model_params: Params) -> Params:
    """Training params of a single-task (``task.train``) or multi-task model."""
    if "task" in model_params:
        return model_params.task.train
    return model_params.train


def initial_values(model_params: Params) -> dict:
    """Freshly initialized variables with init-from-checkpoint rules applied."""
    model = build_model(model_params)
    for task in model.tasks.values():
        rules = list(task.params.train.init_from_checkpoint_rules)
        if isinstance(model, MultiTaskModel):
            rules = list(model.params.train.init_from_checkpoint_rules) + rules
        if rules:
            log.info("applied init rules to %s", apply_init_rules(task, rules))
    return model.snapshot()


def restore_or_init(host, logdir: str, model_params: Params) -> tuple[int, bool]:
    """Loads the latest checkpoint into ``host`` or initializes it.

    Returns ``(step, restored)``.
    """
    path = ckpt_lib.latest_checkpoint(logdir)
    if path is not None:
        ck = ckpt_lib.restore_checkpoint(path)
        host.load(ck.step, ck.values)
        log.info("restored %s at step %d", path, ck.step)
        return ck.step, True
    host.load(0, initial_values(model_params))
    return 0, False


@dataclass
class JobContext:
    """State shared by the jobs of one in-process run."""

    spec: ClusterSpec
    model_params: Params
    host: object
    stop: threading.Event = field(default_factory=threading.Event)
    ready: threading.Event = field(default_factory=threading.Event)
    trainers_done: threading.Event = field(default_factory=threading.Event)
    controller_done: threading.Event = field(default_factory=threading.Event)
    summaries: queue.Queue = field(default_factory=queue.Queue)
    has_controller: bool = True
    start_time: float = field(default_factory=time.time)

    @property
    def max_steps(self) -> int:
        return train_params_of(self.model_params).max_steps


def controller_loop(ctx: JobContext) -> int:
    """Returns the step of the last checkpoint written."""
    spec = ctx.spec
    os.makedirs(spec.logdir, exist_ok=True)
    with open(os.path.join(spec.logdir, "params.txt"), "w", encoding="utf-8") as f:
        f.write(ctx.model_params.to_text())
    try:
        step, restored = restore_or_init(ctx.host, spec.logdir, ctx.model_params)
        if not restored:
            ckpt_lib.save_checkpoint(spec.logdir, *ctx.host.snapshot())
        ctx.ready.set()
        last = step
        summaries_path = os.path.join(spec.logdir, "train_summaries.txt")
        while True:
            lines = []
            while True:
                try:
                    s, name, value = ctx.summaries.get_nowait()
                except queue.Empty:
                    break
                lines.append(f"{s}\t{name}\t{value!r}\n")
            _append(summaries_path, lines)
            done = ctx.trainers_done.is_set()
            step = ctx.host.global_step()
            if step >= last + spec.checkpoint_every_steps or step >= ctx.max_steps or (done and step > last):
                step, values = ctx.host.snapshot()
                if step > last:
                    ckpt_lib.save_checkpoint(spec.logdir, step, values)
                    log.info("checkpoint at step %d", step)
                    last = step
            if last >= ctx.max_steps or (done and ctx.summaries.empty()):
                return last
            time.sleep(min(spec.poll_interval, 0.02))
    finally:
        ctx.ready.set()
        ctx.controller_done.set()


def _wait_ready(ctx: JobContext) -> bool:
    while not ctx.ready.wait(0.05):
        if ctx.stop.is_set():
            return False
    return True


def _batch_source(model: BaseModel, worker_id: int):
    inputs = {}

    def batch_for(task_name):
        if task_name not in inputs:
            inputs[task_name] = make_input(model.input_params(task_name), worker_id)
        return inputs[task_name].get_next()

    def close():
        for g in inputs.values():
            g.close()

    return batch_for, close


def _summarize(ctx: JobContext, result) -> None:
    step, task_name, metrics = result
    loss = metric_mean(metrics)
    ctx.summaries.put((step, "loss", loss))
    if "task_params" in ctx.model_params:
        ctx.summaries.put((step, f"loss/{task_name}", loss))
    ctx.summaries.put((step, "wall_time", round(time.time() - ctx.start_time, 3)))


def local_trainer_loop(ctx: JobContext) -> None:
    if not _wait_ready(ctx):
        return
    batch_for, close = _batch_source(ctx.host.model, 0)
    try:
        while not ctx.stop.is_set():
            result = ctx.host.train_step(batch_for, ctx.max_steps)
            if result is None:
                return
            _summarize(ctx, result)
    finally:
        close()


def async_trainer_loop(ctx: JobContext, worker_id: int) -> None:
    if not _wait_ready(ctx):
        return
    model = build_model(ctx.model_params)
    batch_for, close = _batch_source(model, worker_id)
    try:
        while not ctx.stop.is_set():
            result = async_train_step(ctx.host, model, batch_for, worker_id)
            if result is None:
                return
            _summarize(ctx, result)
    finally:
        close()


def sync_trainer_loop(ctx: JobContext) -> None:
    if not _wait_ready(ctx):
        return
    client: TrainerClient = ctx.host
    batch_for, close = _batch_source(client.model, 0)
    k = len(client.workers)
    try:
        while not ctx.stop.is_set() and client.step < ctx.max_steps:
            task_name = client.model.sample_task(client.step)
            metrics = sync_train_step(client, split_batch(batch_for(task_name), k), task_name)
            _summarize(ctx, (client.step, task_name, metrics))
    finally:
        close()


def evaluate(model: BaseModel) -> dict[str, float]:
    """Teacher-forced mean loss per task and pooled over all tasks."""
    out, total, weight = {}, 0.0, 0.0
    for name, task in model.tasks.items():
        t_sum, w_sum = 0.0, 0.0
        gen = make_input(model.input_params(name), for_eval=True)
        for batch in gen.batches():
            t, w = task.eval_metrics(batch).loss
            t_sum += t
            w_sum += w
        out[name] = t_sum / w_sum if w_sum else 0.0
        total += t_sum
        weight += w_sum
    out["loss"] = total / weight if weight else 0.0
    return out


def decode_accuracy(model: BaseModel) -> dict[str, float]:
    """Exact-sequence accuracy of free-running decoding per task and pooled."""
    out, hits, count = {}, 0, 0
    for name, task in model.tasks.items():
        h, c = 0, 0
        theta = task.get_theta(0)
        gen = make_input(model.input_params(name), for_eval=True)
        for batch in gen.batches():
            for hyp, ref in zip(task.decode(theta, batch), task.references(batch)):
                h += int(list(hyp) == list(ref))
                c += 1
        out[name] = h / c if c else 0.0
        hits += h
        count += c
    out["exact_match"] = hits / count if count else 0.0
    return out


def _follow_checkpoints(ctx: JobContext, eval_params: Params, path: str, compute, metric: str) -> None:
    model = build_model(eval_params, is_eval=True)
    multi = len(model.tasks) > 1
    done = _steps_in(path)
    while True:
        controller_finished = ctx.controller_done.is_set()
        for step, ckpt_path in ckpt_lib.read_index(ctx.spec.logdir):
            if step in done:
                continue
            ck = ckpt_lib.restore_checkpoint(ckpt_path)
            model.load(ck.values)
            result = compute(model)
            lines = [f"{step}\t{metric}\t{result[metric]!r}\n"]
            if multi:
                lines += [f"{step}\t{metric}/{n}\t{result[n]!r}\n" for n in model.tasks]
            _append(path, lines)
            done.add(step)
        if done and max(done) >= ctx.max_steps:
            return
        if ctx.stop.is_set() or (ctx.has_controller and controller_finished):
            return
        time.sleep(ctx.spec.poll_interval)


def evaler_loop(ctx: JobContext, eval_params: Params, dataset: str) -> None:
    path = os.path.join(ctx.spec.logdir, f"eval_{dataset}.txt")
    _follow_checkpoints(ctx, eval_params, path, evaluate, "loss")


def decoder_loop(ctx: JobContext, eval_params: Params, dataset: str) -> None:
    path = os.path.join(ctx.spec.logdir, f"decode_{dataset}.txt")
    _follow_checkpoints(ctx, eval_params, path, decode_accuracy, "exact_match")


def make_host(spec: ClusterSpec, model_params: Params):
    if spec.mode == "local":
        return LocalHost(model_params)
    if spec.mode == "async":
        return AsyncHost(model_params, spec.num_ps)
    return TrainerClient(model_params, spec.num_workers)


@dataclass
class RunResult:
    failures: list = field(default_factory=list)
    last_checkpoint: int | None = None


def run_cluster(
    spec: ClusterSpec,
    model_params: Params,
    eval_params: dict | None = None,
    jobs=ALL_JOBS,
    stop: threading.Event | None = None,
) -> RunResult:
    """Runs the requested jobs as threads and waits for all of them.

    ``eval_params`` maps dataset name -> model params whose inputs read that
    dataset; it is required for the evaler and decoder jobs.
    """
    jobs = set(jobs)
    unknown = jobs - set(ALL_JOBS)
    if unknown:
        raise ValueError(f"unknown jobs {sorted(unknown)}")
    eval_params = eval_params or {}
    os.makedirs(spec.logdir, exist_ok=True)
    host = make_host(spec, model_params) if jobs & {"controller", "trainer"} else None
    ctx = JobContext(spec, model_params, host, has_controller="controller" in jobs)
    if stop is not None:
        ctx.stop = stop
    result = RunResult()
    lock = threading.Lock()

    def guarded(name, fn, *args):
        def run():
            try:
                out = fn(ctx, *args)
                if name == "controller":
                    result.last_checkpoint = out
            except BaseException as e:
                log.exception("job %s failed", name)
                with lock:
                    result.failures.append((name, e))
        return threading.Thread(target=run, name=name, daemon=True)

    trainers = []
    if "trainer" in jobs:
        if spec.mode == "local":
            trainers.append(guarded("trainer", local_trainer_loop))
        elif spec.mode == "async":
            trainers += [guarded(f"trainer{i}", async_trainer_loop, i) for i in range(spec.num_workers)]
        else:
            trainers.append(guarded("trainer", sync_trainer_loop))
    others = []
    if "controller" in jobs:
        others.append(guarded("controller", controller_loop))
    elif host is not None:
        restore_or_init(host, spec.logdir, model_params)
        ctx.ready.set()
    for ds in spec.eval_datasets:
        if ("evaler" in jobs or "decoder" in jobs) and ds not in eval_params:
            raise ValueError(f"no eval params for dataset {ds!r}")
        if "evaler" in jobs:
            others.append(guarded(f"evaler_{ds}", evaler_loop, eval_params[ds], ds))
        if "decoder" in jobs:
            others.append(guarded(f"decoder_{ds}", decoder_loop, eval_params[ds], ds))
    if not trainers:
        ctx.trainers_done.set()
    threads = trainers + others
    for t in threads:
        t.start()
    try:
        while any(t.is_alive() for t in trainers):
            for t in trainers:
                t.join(0.05)
        ctx.trainers_done.set()
        for t in others:
            while t.is_alive():
                t.join(0.05)
    finally:
        ctx.trainers_done.set()
        if host is not None:
            host.close()
    return result
