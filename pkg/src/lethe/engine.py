"""Sequential orchestrator for interleaved learn and unlearn requests.

A request either teaches the student a task (cross-entropy on the task
plus buffer-replay distillation against the momentum teacher) or removes
one (per-sample KL toward a freshly spawned random network on the
forgotten data, KL toward the teacher on replayed data). The teacher
trails the student through a Bernoulli-gated momentum update after every
student step, which is what ends up holding the consolidated knowledge;
evaluation downstream reads the teacher, not the student.

All randomness flows from one Philox generator seeded per run, so equal
config and seed reproduce every batch order, reservoir draw, gate flip,
and spawned network exactly.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import model
from .buffer import ReplayBuffer, class_histogram, purge_classes, reservoir_insert, sample_batch, write_snapshot
from .errors import ContractError, DivergenceError, RequestError, ShapeError
from .losses import (
    LossWeights,
    MODES,
    combined_objective,
    contrastive_distillation_loss,
    cross_entropy_loss,
    kl_divergence,
    online_distillation_loss,
    supervised_contrastive_loss,
    unlearning_loss,
)
from .model import NetConfig, TriNet
from .tape import Tensor, backward, mul, no_grad

MOMENTUM_SCHEDULES = ("step", "epoch")


@dataclass(frozen=True)
class HyperParams:
    """Training knobs for one engine run.

    Defaults are tuned for the bundled Gaussian stream: a slow teacher
    (m=0.9) anchors retained classes while 64 epochs give the student
    enough steps to squash forgotten logits down to the random net's
    scale. Runs in a couple of seconds per request on 2-D data.
    """

    weights: LossWeights = LossWeights()
    m: float = 0.9
    p: float = 0.5
    eta: float = 0.15
    er_weight: float = 1.0
    batch_size: int = 32
    buffer_batch_size: int = 64
    epochs_per_task: int = 64
    objective_mode: str = "paper_eq11"
    momentum_every: str = "step"

    def __post_init__(self):
        if not 0.0 <= self.m <= 1.0:
            raise ContractError("momentum coefficient m must be in [0, 1]")
        if not 0.0 <= self.p <= 1.0:
            raise ContractError("gate probability p must be in [0, 1]")
        if self.eta <= 0:
            raise ContractError("learning rate eta must be positive")
        if self.er_weight < 0:
            raise ContractError("er_weight must be nonnegative")
        if self.batch_size < 1 or self.buffer_batch_size < 1 or self.epochs_per_task < 1:
            raise ContractError("batch sizes and epochs_per_task must be positive")
        if self.objective_mode not in MODES:
            raise ContractError(f"objective_mode must be one of {MODES}")
        if self.momentum_every not in MOMENTUM_SCHEDULES:
            raise ContractError(f"momentum_every must be one of {MOMENTUM_SCHEDULES}")


@dataclass(frozen=True)
class TaskRequest:
    task_id: str
    data: tuple  # (x: (n, d) array, y: (n,) int array)
    ulabel: int
    classes: tuple[int, ...]

    def __post_init__(self):
        x, y = self.data
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],) or x.shape[0] == 0:
            raise RequestError(f"request {self.task_id}: data must be a nonempty labeled batch")
        if self.ulabel not in (0, 1):
            raise RequestError(f"request {self.task_id}: ulabel must be 0 or 1")
        object.__setattr__(self, "data", (x, y))
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))

    @property
    def x(self) -> np.ndarray:
        return self.data[0]

    @property
    def y(self) -> np.ndarray:
        return self.data[1]


@dataclass
class RequestRecord:
    task_id: str
    ulabel: int
    classes: tuple[int, ...]
    loss_trace: tuple[float, ...]
    steps: int


@dataclass
class EngineState:
    student: TriNet
    teacher: TriNet
    buffer: ReplayBuffer
    hyper: HyperParams
    rng: np.random.Generator
    bad_teacher: TriNet | None = None
    request_log: list[RequestRecord] = field(default_factory=list)


def init_state(
    net_config: NetConfig,
    hyper: HyperParams,
    buffer_capacity: int,
    seed: int,
    decrement_seen_on_purge: bool = False,
) -> EngineState:
    """Student and teacher start parameter-identical; the net's init seed
    and the run generator both derive from `seed` so the whole trajectory
    is a function of (config, seed)."""
    root = np.random.SeedSequence(seed)
    net_ss, run_ss = root.spawn(2)
    init_seed = int(net_ss.generate_state(1, dtype=np.uint64)[0])
    student = model.init(dataclasses.replace(net_config, init_seed=init_seed))
    return EngineState(
        student=student,
        teacher=model.clone(student),
        buffer=ReplayBuffer(buffer_capacity, decrement_seen_on_purge=decrement_seen_on_purge),
        hyper=hyper,
        rng=np.random.Generator(np.random.Philox(run_ss)),
    )


def sample_bernoulli(p: float, rng: np.random.Generator) -> int:
    if not 0.0 <= p <= 1.0:
        raise ContractError("p must be in [0, 1]")
    return int(rng.random() < p)


def momentum_update(teacher: TriNet, student: TriNet, m: float, x_gate: int) -> TriNet:
    """theta_T <- m*theta_T + (1-m)*[(1-X)*theta_T + X*theta_s] on every
    parameter of trunk, classifier, and projector alike."""
    if x_gate not in (0, 1):
        raise ContractError("gate X must be 0 or 1")
    if not 0.0 <= m <= 1.0:
        raise ContractError("momentum coefficient m must be in [0, 1]")
    t_params = teacher.parameters()
    s_params = student.parameters()
    if len(t_params) != len(s_params) or any(
        tp.data.shape != sp.data.shape for tp, sp in zip(t_params, s_params)
    ):
        raise ShapeError(
            f"architecture mismatch: teacher {[p.data.shape for p in t_params]} "
            f"vs student {[p.data.shape for p in s_params]}"
        )
    if x_gate == 0:
        return teacher
    for tp, sp in zip(t_params, s_params):
        tp.data *= m
        tp.data += (1.0 - m) * sp.data
    return teacher


def spawn_bad_teacher(config: NetConfig, rng: np.random.Generator) -> TriNet:
    """Fresh random network, never trained; the forgetting target."""
    seed = int(rng.integers(0, np.iinfo(np.int64).max))
    return model.init(dataclasses.replace(config, init_seed=seed))


def _split_batch(batch: list) -> tuple[np.ndarray, np.ndarray]:
    xs = np.stack([item[0] for item in batch])
    ys = np.asarray([item[1] for item in batch], dtype=np.int64)
    return xs, ys


def _apply_step(state: EngineState, loss) -> float:
    value = float(loss.data)
    if not np.isfinite(value):
        raise DivergenceError(len(state.request_log), f"loss became {value}")
    grads = backward(loss)
    eta = state.hyper.eta
    for param in state.student.parameters():
        g = grads.get(param)
        if g is not None:
            param.data -= eta * g
    return value


def _buffer_components(state: EngineState, buffer_batch: list) -> dict:
    """Distillation terms on a replayed batch, er_weight-scaled; zeros
    when there is nothing to replay."""
    if not buffer_batch:
        zero = Tensor(0.0)
        return {"od": zero, "cd": zero, "scd": zero}
    bx, by = _split_batch(buffer_batch)
    w = state.hyper.weights
    with no_grad():
        t_logits, t_z = model.outputs(state.teacher, bx)
    s_logits, s_z = model.outputs(state.student, bx)
    od = online_distillation_loss(t_logits, s_logits, by, w.rho)
    cd = contrastive_distillation_loss(s_z, t_z, by, w.tau)
    scd = supervised_contrastive_loss(s_z, by, w.tau)
    er = state.hyper.er_weight
    return {"od": mul(od, er), "cd": mul(cd, er), "scd": mul(scd, er)}


def learn_step(state: EngineState, task_batch: tuple, buffer_batch: list) -> float:
    """One SGD step on cross-entropy over task plus replayed samples,
    with the distillation terms computed on the replayed samples only."""
    tx, ty = task_batch
    if tx.shape[0] == 0:
        raise ContractError("learn_step needs a nonempty task batch")
    if buffer_batch:
        bx, by = _split_batch(buffer_batch)
        ce_x = np.vstack([tx, bx])
        ce_y = np.concatenate([ty, by])
    else:
        ce_x, ce_y = tx, ty
    components = _buffer_components(state, buffer_batch)
    components["ce"] = cross_entropy_loss(model.classify(state.student, ce_x), ce_y)
    loss = combined_objective(state.hyper.objective_mode, 1, components, state.hyper.weights)
    return _apply_step(state, loss)


def unlearn_step(state: EngineState, forget_batch: tuple, buffer_batch: list) -> float:
    """One SGD step pushing the student toward the random network on the
    forgotten samples while pinning it to the teacher on replayed ones."""
    if state.bad_teacher is None:
        raise ContractError("unlearn_step requires a spawned bad teacher")
    fx, fy = forget_batch
    if fx.shape[0] == 0:
        raise ContractError("unlearn_step needs a nonempty forget batch")
    mode = state.hyper.objective_mode
    if mode == "paper_eq11":
        if buffer_batch:
            bx, _ = _split_batch(buffer_batch)
            all_x = np.vstack([fx, bx])
            flags = np.concatenate([np.ones(fx.shape[0]), np.zeros(bx.shape[0])])
        else:
            all_x, flags = fx, np.ones(fx.shape[0])
        with no_grad():
            t_logits = model.classify(state.teacher, all_x)
            b_logits = model.classify(state.bad_teacher, all_x)
        s_logits = model.classify(state.student, all_x)
        components = {"unlearn": unlearning_loss(t_logits, b_logits, s_logits, flags)}
    else:
        with no_grad():
            b_logits = model.classify(state.bad_teacher, fx)
        s_logits = model.classify(state.student, fx)
        components = _buffer_components(state, buffer_batch)
        components["kl_bad"] = kl_divergence(b_logits, s_logits)
    loss = combined_objective(mode, 0, components, state.hyper.weights)
    return _apply_step(state, loss)


def _active_tasks(state: EngineState) -> set[str]:
    active: set[str] = set()
    for rec in state.request_log:
        if rec.ulabel == 1:
            active.add(rec.task_id)
        else:
            active.discard(rec.task_id)
    return active


def forgotten_classes(state: EngineState) -> set[int]:
    """Classes whose task is currently unlearned (not re-learned since)."""
    gone: set[int] = set()
    for rec in state.request_log:
        if rec.ulabel == 1:
            gone -= set(rec.classes)
        else:
            gone |= set(rec.classes)
    return gone


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _maybe_momentum(state: EngineState) -> None:
    gate = sample_bernoulli(state.hyper.p, state.rng)
    momentum_update(state.teacher, state.student, state.hyper.m, gate)


def process_request(state: EngineState, request: TaskRequest) -> list[float]:
    """Run one request to completion and append it to the log; returns
    the per-epoch mean loss trace."""
    num_classes = state.student.config.num_classes
    if any(not 0 <= c < num_classes for c in request.classes):
        raise RequestError(
            f"request {request.task_id}: classes {request.classes} exceed head width {num_classes}"
        )
    active = _active_tasks(state)
    if request.ulabel == 0 and request.task_id not in active:
        raise RequestError(f"cannot unlearn task {request.task_id}: not currently learned")
    if request.ulabel == 1 and request.task_id in active:
        raise RequestError(f"task {request.task_id} is already learned")

    hyper = state.hyper
    x, y = request.x, request.y
    trace: list[float] = []
    steps = 0

    if request.ulabel == 0:
        state.bad_teacher = spawn_bad_teacher(state.student.config, state.rng)
        purge_classes(state.buffer, request.classes)
    try:
        for epoch in range(hyper.epochs_per_task):
            losses = []
            for picks in _minibatches(x.shape[0], hyper.batch_size, state.rng):
                xb, yb = x[picks], y[picks]
                replayed = sample_batch(state.buffer, hyper.buffer_batch_size, state.rng)
                if request.ulabel == 1:
                    loss = learn_step(state, (xb, yb), replayed)
                    if epoch == 0:
                        for xi, yi in zip(xb, yb):
                            reservoir_insert(state.buffer, (xi, yi), state.rng)
                else:
                    loss = unlearn_step(state, (xb, yb), replayed)
                if hyper.momentum_every == "step":
                    _maybe_momentum(state)
                losses.append(loss)
                steps += 1
            if hyper.momentum_every == "epoch":
                _maybe_momentum(state)
            trace.append(float(np.mean(losses)))
    finally:
        state.bad_teacher = None

    state.request_log.append(
        RequestRecord(
            task_id=request.task_id,
            ulabel=request.ulabel,
            classes=request.classes,
            loss_trace=tuple(trace),
            steps=steps,
        )
    )
    return trace


def request_for(task, ulabel: int) -> TaskRequest:
    """Request over a task's training data; unlearning targets the same
    samples the task was learned from."""
    return TaskRequest(
        task_id=task.task_id,
        data=(task.train_x, task.train_y),
        ulabel=ulabel,
        classes=task.classes,
    )


def run_script(state: EngineState, tasks, script) -> EngineState:
    """Drive every script line through process_request, in order."""
    by_id = {t.task_id: t for t in tasks}
    for verb, task_id in script.requests:
        if task_id not in by_id:
            raise RequestError(f"script names unknown task {task_id}")
        process_request(state, request_for(by_id[task_id], 1 if verb == "LEARN" else 0))
    return state


def checkpoint(state: EngineState, out_dir) -> None:
    """Teacher parameters, buffer snapshot, and the request log; all
    three files are deterministic byte-for-byte given equal state."""
    os.makedirs(out_dir, exist_ok=True)
    model.save(state.teacher, os.path.join(out_dir, "teacher.tensors"))
    write_snapshot(state.buffer, os.path.join(out_dir, "buffer.txt"))
    log = [
        {
            "task_id": rec.task_id,
            "ulabel": rec.ulabel,
            "classes": list(rec.classes),
            "loss_trace": list(rec.loss_trace),
            "steps": rec.steps,
        }
        for rec in state.request_log
    ]
    payload = {
        "requests": log,
        "buffer": {"size": len(state.buffer), "n_seen": state.buffer.n_seen,
                   "histogram": {str(k): v for k, v in sorted(class_histogram(state.buffer).items())}},
    }
    with open(os.path.join(out_dir, "request_log.json"), "w", encoding="ascii", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
