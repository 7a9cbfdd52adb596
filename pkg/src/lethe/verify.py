"""Self-check suites: gradient correctness, loss fixed points, critic
range, reservoir uniformity, momentum algebra, and run determinism.

Each suite is a callable that returns a human-readable detail string on
success and raises VerifyFailure with a diagnosis otherwise. The CLI
wraps them in a report; the test suite reuses the same entry points at
larger instance counts. Loss functions are always reached through the
module object, never imported names, so a corrupted implementation
cannot hide behind a stale local binding.
"""

from __future__ import annotations

import io
import math
import os
import tempfile

import numpy as np

from . import buffer as buffer_mod
from . import engine as engine_mod
from . import losses
from . import model
from . import streams
from .errors import LetheError
from .tape import Tensor, grad_check, l2_normalize


class VerifyFailure(LetheError):
    pass


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _unit_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    raw = rng.normal(size=(n, k))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# gradient checks

def _loss_closures(rng: np.random.Generator):
    """One (name, f, params) triple per differentiable objective; raw
    embedding parameters are normalized inside the closure so the
    central-difference probe never violates the unit-norm contract."""
    n, c, k = 4, 3, 4
    y = rng.integers(0, c, size=n)
    flags = rng.integers(0, 2, size=n).astype(np.float64)
    if not flags.any():
        flags[0] = 1.0
    w = losses.LossWeights(alpha1=0.7, alpha2=1.3, alpha3=0.9, rho=2.0, tau=0.5)
    t_logits = rng.normal(size=(n, c))
    b_logits = rng.normal(size=(n, c))
    t_z = _unit_rows(rng, n, k)

    s_logits = Tensor(rng.normal(size=(n, c)), requires_grad=True)
    s_raw = Tensor(rng.normal(size=(n, k)), requires_grad=True)
    va = Tensor(rng.normal(size=k), requires_grad=True)
    vb = Tensor(rng.normal(size=k), requires_grad=True)

    def full(logits, raw):
        parts = (
            losses.cross_entropy_loss(logits, y),
            losses.online_distillation_loss(t_logits, logits, y, w.rho),
            losses.contrastive_distillation_loss(l2_normalize(raw), t_z, y, w.tau),
            losses.supervised_contrastive_loss(l2_normalize(raw), y, w.tau),
        )
        return losses.cl_total_loss(parts, w)

    def combined_ul(logits, raw):
        components = {
            "kl_bad": losses.kl_divergence(b_logits, logits),
            "od": losses.online_distillation_loss(t_logits, logits, y, w.rho),
            "cd": losses.contrastive_distillation_loss(l2_normalize(raw), t_z, y, w.tau),
            "scd": losses.supervised_contrastive_loss(l2_normalize(raw), y, w.tau),
        }
        return losses.combined_objective("algorithm1", 0, components, w)

    return [
        ("cross_entropy_loss", lambda sl: losses.cross_entropy_loss(sl, y), [s_logits]),
        (
            "online_distillation_loss",
            lambda sl: losses.online_distillation_loss(t_logits, sl, y, w.rho),
            [s_logits],
        ),
        (
            "critic_h",
            lambda a, b: losses.critic_h(l2_normalize(a), l2_normalize(b), w.tau),
            [va, vb],
        ),
        (
            "contrastive_distillation_loss",
            lambda raw: losses.contrastive_distillation_loss(l2_normalize(raw), t_z, y, w.tau),
            [s_raw],
        ),
        (
            "supervised_contrastive_loss",
            lambda raw: losses.supervised_contrastive_loss(l2_normalize(raw), y, w.tau),
            [s_raw],
        ),
        ("kl_divergence", lambda sl: losses.kl_divergence(t_logits, sl), [s_logits]),
        (
            "unlearning_loss",
            lambda sl: losses.unlearning_loss(t_logits, b_logits, sl, flags),
            [s_logits],
        ),
        ("cl_total_loss", full, [s_logits, s_raw]),
        ("combined_objective", combined_ul, [s_logits, s_raw]),
    ]


def gradient_suite(instances: int = 8, tol: float = 1e-4, seed: int = 7) -> dict[str, float]:
    """Worst grad_check relative error per loss over fresh random
    instances; raises on any breach of `tol`."""
    rng = _rng(seed)
    worst: dict[str, float] = {}
    for _ in range(instances):
        for name, f, params in _loss_closures(rng):
            err = grad_check(f, params)
            worst[name] = max(worst.get(name, 0.0), err)
            if err >= tol:
                raise VerifyFailure(f"{name}: grad_check error {err:.3e} >= {tol:.1e}")
    return worst


def check_gradients(instances: int = 8) -> str:
    worst = gradient_suite(instances=instances)
    top = max(worst.values())
    return f"{len(worst)} losses x {instances} instances, worst rel err {top:.2e}"


# ---------------------------------------------------------------------------
# fixed points and ranges

def check_fixed_points(seed: int = 11) -> str:
    rng = _rng(seed)
    n, c = 6, 5
    logits = rng.normal(size=(n, c))
    y = rng.integers(0, c, size=n)
    od = float(losses.online_distillation_loss(logits, logits.copy(), y, 2.0).data)
    kl = float(losses.kl_divergence(logits, logits.copy()).data)
    flags = rng.integers(0, 2, size=n).astype(np.float64)
    bad = rng.normal(size=(n, c))
    mixed = np.where(flags[:, None] == 1.0, bad, logits)
    ul = float(losses.unlearning_loss(logits, bad, mixed, flags).data)
    for name, value in (("L_od", od), ("KL", kl), ("unlearning_loss", ul)):
        if abs(value) > 1e-12:
            raise VerifyFailure(f"{name} at its fixed point is {value:.3e}, not 0")
    return "L_od, KL, unlearning_loss all 0 at their fixed points"


def check_kl_nonnegative(pairs: int = 1000, seed: int = 13) -> str:
    rng = _rng(seed)
    low = 0.0
    for _ in range(pairs):
        n, c = int(rng.integers(1, 6)), int(rng.integers(2, 8))
        p = rng.normal(scale=3.0, size=(n, c))
        q = rng.normal(scale=3.0, size=(n, c))
        v = float(losses.kl_divergence(p, q).data)
        low = min(low, v)
        if v < -1e-12:
            raise VerifyFailure(f"KL({p.tolist()}, {q.tolist()}) = {v:.3e} < 0")
    return f"{pairs} random pairs, min value {low:.3e}"


def check_critic_range(pairs: int = 1000, tau: float = 0.5, seed: int = 17) -> str:
    rng = _rng(seed)
    lo_bound = math.exp(-2.0 / tau)
    lo_seen, hi_seen = 1.0, 0.0
    for _ in range(pairs):
        k = int(rng.integers(2, 9))
        a, b = _unit_rows(rng, 2, k)
        h = float(losses.critic_h(a, b, tau).data)
        lo_seen, hi_seen = min(lo_seen, h), max(hi_seen, h)
        if not lo_bound <= h <= 1.0:
            raise VerifyFailure(f"critic_h = {h!r} outside [{lo_bound!r}, 1]")
    a = _unit_rows(rng, 1, 5)[0]
    same = float(losses.critic_h(a, a, tau).data)
    if same != 1.0:
        raise VerifyFailure(f"critic_h(z, z) = {same!r}, expected exactly 1")
    return f"{pairs} unit pairs in [{lo_bound:.4f}, 1], observed [{lo_seen:.4f}, {hi_seen:.4f}]"


# ---------------------------------------------------------------------------
# reservoir uniformity

def reservoir_frequencies(
    capacity: int, stream: int, trials: int, seed: int = 23
) -> np.ndarray:
    rng = _rng(seed)
    hits = np.zeros(stream)
    x = np.zeros(1)
    for _ in range(trials):
        buf = buffer_mod.ReplayBuffer(capacity)
        for item in range(stream):
            buffer_mod.reservoir_insert(buf, (x, item), rng)
        for _, y in buf.items:
            hits[y] += 1
    return hits / trials


def check_reservoir(capacity: int = 10, stream: int = 100, trials: int = 4000, seed: int = 23) -> str:
    freq = reservoir_frequencies(capacity, stream, trials, seed)
    p = capacity / stream
    se = math.sqrt(p * (1.0 - p) / trials)
    worst = float(np.max(np.abs(freq - p)))
    if worst > 3.0 * se:
        idx = int(np.argmax(np.abs(freq - p)))
        raise VerifyFailure(
            f"item {idx} frequency {freq[idx]:.4f} deviates {worst / se:.2f} SE from {p}"
        )
    return f"{stream} items x {trials} trials, worst deviation {worst / se:.2f} SE (bound 3)"


# ---------------------------------------------------------------------------
# momentum and determinism

def check_momentum(seed: int = 29) -> str:
    cfg = model.NetConfig(input_dim=3, hidden_dims=(6,), num_classes=3, embed_dim=4, init_seed=1)
    student = model.init(cfg)
    teacher = model.init(model.NetConfig(3, (6,), 3, 4, init_seed=2))
    before = [p.data.copy() for p in teacher.parameters()]
    engine_mod.momentum_update(teacher, student, m=0.9, x_gate=0)
    if any(not np.array_equal(b, p.data) for b, p in zip(before, teacher.parameters())):
        raise VerifyFailure("X=0 changed the teacher")
    engine_mod.momentum_update(teacher, student, m=0.9, x_gate=1)
    for b, tp, sp in zip(before, teacher.parameters(), student.parameters()):
        drift = np.abs(tp.data - b)
        bound = (1.0 - 0.9) * np.abs(sp.data - b)
        if np.any(drift > bound + 1e-12):
            raise VerifyFailure("teacher drift exceeded (1-m)*|student - teacher|")
    engine_mod.momentum_update(teacher, student, m=0.0, x_gate=1)
    for tp, sp in zip(teacher.parameters(), student.parameters()):
        if not np.array_equal(tp.data, sp.data):
            raise VerifyFailure("m=0, X=1 did not copy the student")
    return "X=0 no-op, drift bound, m=0 copy all hold"


def _micro_run(seed: int) -> tuple[bytes, bytes]:
    """Tiny two-task learn/unlearn run; returns (teacher bytes, matrix bytes)."""
    from . import evaluate

    rng = _rng(1000 + seed)
    tasks = streams.make_gaussian_tasks(
        streams.task_distribution(4, 2), samples_per_class=12, test_per_class=6,
        spread=0.05, rng=rng,
    )
    cfg = model.NetConfig(input_dim=2, hidden_dims=(8,), num_classes=4, embed_dim=4)
    hyper = engine_mod.HyperParams(batch_size=8, buffer_batch_size=8, epochs_per_task=2)
    state = engine_mod.init_state(cfg, hyper, buffer_capacity=20, seed=seed)
    script = streams.parse_script("LEARN T1\nLEARN T2\nUNLEARN T2\n")
    matrix = evaluate.AccuracyMatrix(num_classes=4)
    tests = {c: np.vstack([t.test_x[t.test_y == c] for t in tasks]) for c in range(4)}
    ever: set[int] = set()
    by_id = {t.task_id: t for t in tasks}
    for verb, tid in script.requests:
        task = by_id[tid]
        engine_mod.process_request(state, engine_mod.request_for(task, 1 if verb == "LEARN" else 0))
        if verb == "LEARN":
            ever |= set(task.classes)
        evaluate.record_row(
            matrix,
            f"{verb.title()} {tid}",
            evaluate.evaluation_row(state.teacher, tests, ever, 4),
        )
    with tempfile.TemporaryDirectory() as tmp:
        tpath = os.path.join(tmp, "teacher.tensors")
        mpath = os.path.join(tmp, "matrix.csv")
        model.save(state.teacher, tpath)
        evaluate.write_matrix_csv(matrix, mpath)
        with open(tpath, "rb") as fh:
            tb = fh.read()
        with open(mpath, "rb") as fh:
            mb = fh.read()
    return tb, mb


def check_determinism(seed: int = 5) -> str:
    a = _micro_run(seed)
    b = _micro_run(seed)
    if a[0] != b[0]:
        raise VerifyFailure("same seed produced different teacher parameters")
    if a[1] != b[1]:
        raise VerifyFailure("same seed produced different accuracy tables")
    return "two identical micro-runs: teacher and matrix byte-identical"


SUITES = (
    ("gradient_checks", check_gradients),
    ("loss_fixed_points", check_fixed_points),
    ("kl_nonnegative", check_kl_nonnegative),
    ("critic_range", check_critic_range),
    ("reservoir_uniformity", check_reservoir),
    ("momentum_teacher", check_momentum),
    ("run_determinism", check_determinism),
)


def run_suites(out=None) -> bool:
    """Run every suite, print one line each; True iff all passed."""
    stream = out or io.StringIO()
    all_ok = True
    for name, fn in SUITES:
        try:
            detail = fn()
            stream.write(f"PASS {name}: {detail}\n")
        except LetheError as exc:
            stream.write(f"FAIL {name}: {exc}\n")
            all_ok = False
    if out is None:
        print(stream.getvalue(), end="")
    return all_ok
