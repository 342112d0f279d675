"""Variable hosts: where the authoritative variable values live.

``LocalHost`` keeps them in one model. ``AsyncHost`` spreads them over
parameter-server shards that apply gradient updates sent by trainers.
``TrainerClient`` drives sync training over workers that compute gradients
and also hold the variable shards.

Servers are threads that own their state and serve requests from a queue one
at a time, so every shard update is atomic with respect to other requests.
"""

from __future__ import annotations

import logging
import queue
import threading
import time

import numpy as np

from seqframe.base_model import BaseModel, apply_gradients, finalize_gradients, normalize_gradients
from seqframe.hyperparams import Params, instantiate
from seqframe.nested_map import NestedMap
from seqframe.optimizer import Optimizer, split_state
from seqframe.runners.cluster import PlacementState
from seqframe.tensor import NumericsError

log = logging.getLogger(__name__)


class UnavailablePsError(RuntimeError):
    pass


class WorkerFailure(RuntimeError):
    pass


def build_model(model_params: Params, is_eval: bool = False) -> BaseModel:
    p = model_params.copy()
    p.is_eval = is_eval
    return instantiate(p)


class _Server:
    """Request loop over a queue; subclasses implement ``op_<name>`` methods."""

    def __init__(self, name: str):
        self.name = name
        self._requests: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._loop, name=name, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            req = self._requests.get()
            if req is None:
                return
            op, args, reply = req
            try:
                reply.put((True, getattr(self, "op_" + op)(*args)))
            except BaseException as e:  # returned to the caller
                reply.put((False, e))

    @property
    def alive(self) -> bool:
        return self._thread.is_alive()

    def submit(self, op: str, *args) -> queue.Queue:
        reply: queue.Queue = queue.Queue(maxsize=1)
        self._requests.put((op, args, reply))
        return reply

    def stop(self):
        self._requests.put(None)
        self._thread.join(timeout=5)


def _wait(server: _Server, reply: queue.Queue, timeout: float, error=UnavailablePsError):
    deadline = time.monotonic() + timeout
    while True:
        try:
            ok, value = reply.get(timeout=0.05)
            break
        except queue.Empty:
            if not server.alive or time.monotonic() > deadline:
                raise error(f"{server.name} did not answer") from None
    if not ok:
        raise value
    return value


def _call(server: _Server, op: str, *args, retries: int = 3, backoff: float = 0.05, timeout: float = 60.0):
    """Sends a request, retrying with exponential backoff while the server is down."""
    for attempt in range(retries + 1):
        if server.alive:
            return _wait(server, server.submit(op, *args), timeout)
        if attempt < retries:
            delay = backoff * 2**attempt
            log.warning("%s unavailable; retrying in %.2fs", server.name, delay)
            time.sleep(delay)
    raise UnavailablePsError(f"{server.name} unavailable after {retries} retries")


class LocalHost:
    """All variables in one in-process model guarded by a lock."""

    def __init__(self, model_params: Params):
        self.model = build_model(model_params)
        self.lock = threading.Lock()
        self.step = 0

    def global_step(self) -> int:
        return self.step

    def snapshot(self) -> tuple[int, dict]:
        with self.lock:
            values = self.model.snapshot()
            values.update(self.model.optimizer.export_state())
            return self.step, values

    def load(self, step: int, values: dict) -> None:
        variables, slots = split_state(values)
        with self.lock:
            self.model.load(variables)
            self.model._optimizer = None
            self.model.optimizer.import_state(slots)
            self.step = step

    def train_step(self, batch_for, max_steps: int):
        """One local update; ``batch_for(task_name)`` supplies the batch."""
        with self.lock:
            step = self.step
            if step >= max_steps:
                return None
            task = self.model.sample_task(step)
            metrics = self.model.train_step(task, batch_for(task), step)
            self.step = step + 1
            return self.step, task, metrics

    def close(self):
        pass


class ParameterServer(_Server):
    """Holds a variable shard plus its optimizer slots. Shard 0 owns the global step."""

    def __init__(self, shard_id: int, train_p: Params):
        self.shard_id = shard_id
        self.values: dict[str, np.ndarray] = {}
        self.optimizer = Optimizer(train_p)
        self.step = 0
        super().__init__(f"ps{shard_id}")

    def op_get(self, names):
        return {n: self.values[n].copy() for n in names}, self.step

    def op_step(self):
        return self.step

    def op_claim(self, max_steps: int):
        """Reserves the next global step, or None once training is done."""
        if self.step >= max_steps:
            return None
        s = self.step
        self.step += 1
        return s

    def op_apply(self, grads: dict, global_step: int):
        for name in sorted(grads):
            self.values[name] = self.optimizer.apply(name, self.values[name], grads[name], global_step)

    def op_load(self, values: dict, slots: dict, step: int):
        self.values = {k: np.array(v) for k, v in values.items()}
        self.optimizer = Optimizer(self.optimizer.p)
        self.optimizer.import_state(slots, names=set(values))
        self.step = step

    def op_snapshot(self):
        values = {k: v.copy() for k, v in self.values.items()}
        values.update(self.optimizer.export_state())
        return values, self.step


def place_cells(model: BaseModel, num_shards: int) -> PlacementState:
    state = PlacementState(num_shards)
    for name, cell in model.cells().items():
        state.place(name, cell.nbytes)
    return state


class AsyncHost:
    """Parameter-server shards; trainers pull values and push gradients."""

    def __init__(self, model_params: Params, num_ps: int, retries: int = 3, backoff: float = 0.05):
        template = build_model(model_params)
        self.train_p = template.train_params
        self.placement = place_cells(template, num_ps)
        self.servers = [ParameterServer(i, self.train_p) for i in range(num_ps)]
        self.retries, self.backoff = retries, backoff
        self.load(0, template.snapshot())

    def _call(self, shard: int, op: str, *args):
        return _call(self.servers[shard], op, *args, retries=self.retries, backoff=self.backoff)

    def _by_shard(self, names) -> dict[int, list]:
        out: dict[int, list] = {}
        for n in names:
            out.setdefault(self.placement.assignment[n], []).append(n)
        return out

    def global_step(self) -> int:
        return self._call(0, "step")

    def pull(self, names) -> tuple[dict, int]:
        """Current values of ``names`` and the global step seen by shard 0."""
        values, step = {}, None
        groups = self._by_shard(names)
        groups.setdefault(0, [])
        for shard in sorted(groups):
            v, s = self._call(shard, "get", groups[shard])
            values.update(v)
            if shard == 0:
                step = s
        return values, step

    def push(self, grads: dict, max_steps: int):
        """Claims a global step and sends each shard its gradients.

        Returns the claimed step, or None when max_steps was already reached.
        """
        step = self._call(0, "claim", max_steps)
        if step is None:
            return None
        for shard, names in sorted(self._by_shard(grads).items()):
            self._call(shard, "apply", {n: grads[n] for n in names}, step)
        return step

    def snapshot(self) -> tuple[int, dict]:
        values, step = {}, 0
        for i in range(len(self.servers)):
            v, s = self._call(i, "snapshot")
            values.update(v)
            if i == 0:
                step = s
        return step, values

    def load(self, step: int, values: dict) -> None:
        variables, slots = split_state(values)
        for shard, names in self._by_shard(variables).items():
            mine = {n: variables[n] for n in names}
            self._call(shard, "load", mine, slots, step if shard == 0 else 0)
        for shard in range(len(self.servers)):
            if not any(self.placement.assignment[n] == shard for n in variables):
                self._call(shard, "load", {}, {}, step if shard == 0 else 0)

    def close(self):
        for s in self.servers:
            if s.alive:
                s.stop()


def async_train_step(host: AsyncHost, model: BaseModel, batch_for, worker_id: int = 0):
    """One async iteration on a worker replica.

    Returns ``(claimed step, task name, metrics)`` or None when training is over.
    """
    names = list(model.cells())
    values, step = host.pull(names)
    max_steps = model.train_params.max_steps
    if step >= max_steps:
        return None
    model.load(values)
    task_name = model.sample_task(step)
    task = model.tasks[task_name]
    metrics, grad_sums, weight = task.compute_gradients(batch_for(task_name), step)
    grads, _ = finalize_gradients(normalize_gradients(grad_sums, weight), model.train_params)
    claimed = host.push(grads, max_steps)
    if claimed is None:
        return None
    return claimed + 1, task_name, metrics


class SyncWorker(_Server):
    """Model replica that computes gradients and serves its variable shard."""

    def __init__(self, worker_id: int, model_params: Params):
        self.worker_id = worker_id
        self.model = build_model(model_params)
        self._cells = self.model.cells()
        super().__init__(f"worker{worker_id}")

    def op_compute(self, task_name: str, batch: NestedMap, step: int):
        return self.model.tasks[task_name].compute_gradients(batch, step)

    def op_get(self, names):
        return {n: self._cells[n].value.copy() for n in names}

    def op_set(self, values: dict):
        for n, v in values.items():
            self._cells[n].assign(v)


def split_batch(batch: NestedMap, k: int) -> list[NestedMap]:
    """Splits every leaf along the leading (example) axis into ``k`` parts."""
    n = len(next(iter(batch.flatten())))
    bounds = np.linspace(0, n, k + 1).round().astype(int)
    return [batch.transform(lambda x, a=a, b=b: np.asarray(x)[a:b]) for a, b in zip(bounds, bounds[1:])]


class TrainerClient:
    """Sync-mode coordinator. Optimizer slots live here; variables live on workers."""

    def __init__(self, model_params: Params, num_workers: int, timeout: float = 300.0):
        self.workers = [SyncWorker(i, model_params) for i in range(num_workers)]
        self.model = self.workers[0].model  # read only: params, task sampling
        self.train_p = self.model.train_params
        self.placement = place_cells(self.model, num_workers)
        self.optimizer = Optimizer(self.train_p)
        self.step = 0
        self.timeout = timeout
        self.lock = threading.Lock()

    def _call(self, i: int, op: str, *args):
        w = self.workers[i]
        if not w.alive:
            raise WorkerFailure(f"{w.name} is down")
        return _wait(w, w.submit(op, *args), self.timeout, WorkerFailure)

    def global_step(self) -> int:
        return self.step

    def _owned_values(self, names) -> dict:
        groups: dict[int, list] = {}
        for n in names:
            groups.setdefault(self.placement.assignment[n], []).append(n)
        out = {}
        for i, group in sorted(groups.items()):
            out.update(self._call(i, "get", group))
        return out

    def snapshot(self) -> tuple[int, dict]:
        with self.lock:
            values = self._owned_values(list(self.model.cells()))
            values.update(self.optimizer.export_state())
            return self.step, values

    def load(self, step: int, values: dict) -> None:
        variables, slots = split_state(values)
        with self.lock:
            mine = {n: variables[n] for n in self.model.cells()}
            for i in range(len(self.workers)):
                self._call(i, "set", mine)
            self.optimizer = Optimizer(self.train_p)
            self.optimizer.import_state(slots)
            self.step = step

    def close(self):
        for w in self.workers:
            if w.alive:
                w.stop()


def sync_train_step(client: TrainerClient, batch_parts: list, task_name: str | None = None) -> NestedMap:
    """One synchronous update from one batch part per worker.

    Workers return gradient sums and loss weights; the client forms the
    weight-weighted mean gradient, applies one optimizer update, and sends the
    new values to every worker. On any failure the step is aborted with the
    variables and optimizer state unchanged.
    """
    with client.lock:
        step = client.step
        task_name = task_name or client.model.sample_task(step)
        pending = []
        for i, part in enumerate(batch_parts):
            if part is None or len(next(iter(part.flatten()))) == 0:
                continue
            if i >= len(client.workers):
                raise ValueError("more batch parts than workers")
            w = client.workers[i]
            pending.append((i, w.submit("compute", task_name, part, step) if w.alive else None))
        results = []
        for i, reply in pending:
            if reply is None:
                raise WorkerFailure(f"worker{i} is down")
            try:
                results.append(_wait(client.workers[i], reply, client.timeout, WorkerFailure))
            except (NumericsError, WorkerFailure):
                raise
            except Exception as e:
                raise WorkerFailure(f"worker{i} failed: {e}") from e
        if not results:
            raise ValueError("no non-empty batch parts")
        metrics = NestedMap({k: list(v) for k, v in results[0][0].items()})
        grad_sums = {k: g.copy() for k, g in results[0][1].items()}
        weight = results[0][2]
        for m, g, w in results[1:]:
            for k, (v, wt) in m.items():
                metrics[k][0] += v
                metrics[k][1] += wt
            for k in grad_sums:
                grad_sums[k] += g[k]
            weight += w
        grads, _ = finalize_gradients(normalize_gradients(grad_sums, weight), client.train_p)
        current = client._owned_values(sorted(grads))
        opt_backup = client.optimizer.export_state()
        updated = []
        try:
            cells = {n: _Cell(v) for n, v in current.items()}
            apply_gradients(cells, grads, client.optimizer, step)
            new_values = {n: c.value for n, c in cells.items()}
            for i in range(len(client.workers)):
                client._call(i, "set", new_values)
                updated.append(i)
        except BaseException:
            client.optimizer = Optimizer(client.train_p)
            client.optimizer.import_state(opt_backup)
            for i in updated:
                if client.workers[i].alive:
                    client._call(i, "set", current)
            raise
        client.step = step + 1
        return NestedMap({k: tuple(v) for k, v in metrics.items()})


class _Cell:
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value
