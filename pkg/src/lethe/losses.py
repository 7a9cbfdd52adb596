"""Objectives for joint continual learning and unlearning.

The learning side combines classification, teacher-logit distillation
weighted by the teacher's confidence on the true label, and two
contrastive terms over projector embeddings. The unlearning side is a
per-sample switch between matching the momentum teacher (retain) and
matching a randomly initialized network (forget), both as KL on softmax
outputs.

Teacher-side inputs are detached inside each function: only the student
receives gradients, everything else is a fixed target for that step.
Batch reductions are arithmetic means over the full batch; contrastive
anchors without positives contribute zero to the sum but stay in the
divisor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError
from .tape import (
    Tensor,
    add,
    clip,
    gather_labels,
    log_softmax,
    matmul_nt,
    mul,
    neg,
    sub,
    texp,
    tlog,
    tmean,
    tsum,
)

MODES = ("paper_eq11", "algorithm1")


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    rho: float = 2.0
    tau: float = 0.5

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha3 < 0:
            raise ContractError("loss coefficients must be nonnegative")
        if self.rho <= 0 or self.tau <= 0:
            raise ContractError("temperatures must be positive")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _as_const(x) -> Tensor:
    return x.detach() if isinstance(x, Tensor) else Tensor(x)


def _labels_array(labels, n: int, c: int) -> np.ndarray:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch size {n}")
    if lab.size and (lab.min() < 0 or lab.max() >= c):
        bad = int(lab[(lab < 0) | (lab >= c)][0])
        raise ContractError(f"label {bad} outside [0, {c})")
    return lab


def _zero() -> Tensor:
    return Tensor(0.0)


def cross_entropy_loss(logits, labels) -> Tensor:
    """Mean negative log-likelihood of the true labels."""
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be a matrix, got shape {logits.data.shape}")
    return neg(tmean(gather_labels(log_softmax(logits), labels)))


def _softmax_rows(data: np.ndarray, scale: float = 1.0) -> np.ndarray:
    z = data / scale
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def distill_weight(teacher_logits, y: int, rho: float) -> float:
    """Teacher's tempered softmax probability of the true label."""
    if rho <= 0:
        raise ContractError("rho must be positive")
    tl = np.asarray(_as_const(teacher_logits).data, dtype=np.float64).reshape(-1)
    c = tl.shape[0]
    if not 0 <= int(y) < c:
        raise ContractError(f"label {int(y)} outside [0, {c})")
    probs = _softmax_rows(tl.reshape(1, -1), scale=rho)[0]
    return float(probs[int(y)])


def _distill_weights(teacher_data: np.ndarray, labels: np.ndarray, rho: float) -> np.ndarray:
    probs = _softmax_rows(teacher_data, scale=rho)
    return probs[np.arange(teacher_data.shape[0]), labels]


def online_distillation_loss(teacher_logits, student_logits, labels, rho: float) -> Tensor:
    """Mean of omega(x_i) * ||teacher_i - student_i||^2 over the batch.

    omega is the teacher's tempered confidence on the true label, so
    samples the teacher is unsure about contribute less. The teacher side
    is a constant target.
    """
    if rho <= 0:
        raise ContractError("rho must be positive")
    teacher = _as_const(teacher_logits)
    student = _as_tensor(student_logits)
    if teacher.data.shape != student.data.shape:
        raise ShapeError(
            f"teacher shape {teacher.data.shape} differs from student {student.data.shape}"
        )
    n, c = student.data.shape
    lab = _labels_array(labels, n, c)
    if n == 0:
        return _zero()
    omega = _distill_weights(teacher.data, lab, rho)
    diff = sub(student, teacher)
    sq_norms = tsum(mul(diff, diff), axis=1)
    return tmean(mul(sq_norms, Tensor(omega)))


def _unit_rows(z: Tensor, who: str, tol: float = 1e-6) -> None:
    data = z.data.reshape(1, -1) if z.data.ndim == 1 else z.data
    norms = np.sqrt((data * data).sum(axis=1))
    if norms.size and np.max(np.abs(norms - 1.0)) > tol:
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ContractError(f"{who}: embeddings must be unit-norm, worst deviation {worst:.3g}")


def critic_h(z_i, z_j, tau: float) -> Tensor:
    """exp((cos - 1)/tau): 1 at parallel, exp(-2/tau) at antiparallel.

    The cosine is clipped to [-1, 1] before the exponent; unit inputs can
    land a few ulps outside from rounding and the critic's range contract
    is closed at both ends.
    """
    if tau <= 0:
        raise ContractError("tau must be positive")
    a, b = _as_tensor(z_i), _as_tensor(z_j)
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"critic_h wants two equal-length vectors, got {a.data.shape} and {b.data.shape}")
    _unit_rows(a, "critic_h")
    _unit_rows(b, "critic_h")
    cos = tsum(mul(a, b))
    return texp(mul(add(clip(cos, -1.0, 1.0), -1.0), 1.0 / tau))


def _positive_weights(labels: np.ndarray, exclude_diag: bool) -> tuple[np.ndarray, np.ndarray]:
    """W[i,j] = 1/(n*|P(i)|) over positives, plus the per-anchor row mass
    rw[i] = 1/n (anchors with no positives get zero in both)."""
    n = labels.shape[0]
    same = labels[:, None] == labels[None, :]
    if exclude_diag:
        np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    w = np.zeros((n, n))
    has = counts > 0
    if np.any(has):
        w[has] = same[has] / (n * counts[has, None])
    rw = np.where(has, 1.0 / n, 0.0)
    return w, rw


def _contrastive(sim: Tensor, labels: np.ndarray, tau: float, exclude_diag: bool) -> Tensor:
    """-(1/n) sum_i (1/|P(i)|) sum_{j in P(i)} [T_ij - log sum_k exp(T_ik)]
    with T = (sim - 1)/tau, the log of the critic. The shift by -1/tau
    cancels between numerator and denominator and keeps every exp <= ~1."""
    n = labels.shape[0]
    w, rw = _positive_weights(labels, exclude_diag)
    if not rw.any():
        return _zero()
    t = mul(add(sim, -1.0), 1.0 / tau)
    h = texp(t)
    denom = tsum(h, axis=1)
    if exclude_diag:
        diag = tsum(mul(h, Tensor(np.eye(n))), axis=1)
        denom = sub(denom, diag)
    hits = neg(tsum(mul(t, Tensor(w))))
    pulls = tsum(mul(tlog(denom), Tensor(rw)))
    return add(hits, pulls)


def contrastive_distillation_loss(student_z, teacher_z, labels, tau: float) -> Tensor:
    """Anchors are student embeddings; positives and negatives are the
    teacher's embeddings of the same batch (the anchor's own teacher twin
    counts as a positive). Gradient reaches only the student side."""
    if tau <= 0:
        raise ContractError("tau must be positive")
    s = _as_tensor(student_z)
    t = _as_const(teacher_z)
    if s.data.ndim != 2 or s.data.shape != t.data.shape:
        raise ShapeError(
            f"student shape {s.data.shape} differs from teacher {t.data.shape}"
        )
    n = s.data.shape[0]
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch size {n}")
    if n == 0:
        return _zero()
    _unit_rows(s, "contrastive_distillation_loss")
    _unit_rows(t, "contrastive_distillation_loss")
    return _contrastive(matmul_nt(s, t), lab, tau, exclude_diag=False)


def supervised_contrastive_loss(student_z, labels, tau: float) -> Tensor:
    """Student-only contrastive pull between same-label embeddings; the
    anchor is excluded from its own positives and from the denominator."""
    if tau <= 0:
        raise ContractError("tau must be positive")
    s = _as_tensor(student_z)
    if s.data.ndim != 2:
        raise ShapeError(f"embeddings must be a matrix, got shape {s.data.shape}")
    n = s.data.shape[0]
    lab = np.asarray(labels, dtype=np.int64)
    if lab.shape != (n,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch size {n}")
    if n == 0:
        return _zero()
    _unit_rows(s, "supervised_contrastive_loss")
    return _contrastive(matmul_nt(s, s), lab, tau, exclude_diag=True)


def cl_total_loss(parts, weights: LossWeights) -> Tensor:
    """L_ce + alpha1*L_od + alpha2*L_cd + alpha3*L_scd."""
    if len(parts) != 4:
        raise ContractError("parts must be (L_ce, L_od, L_cd, L_scd)")
    ce, od, cd, scd = (_as_tensor(p) for p in parts)
    out = add(ce, mul(od, weights.alpha1))
    out = add(out, mul(cd, weights.alpha2))
    return add(out, mul(scd, weights.alpha3))


def _kl_rows(p_logits, q_logits) -> Tensor:
    """Per-row KL(p || q) from logits; p is a constant, the gradient
    flows into q only. Underflowed p entries contribute exactly 0."""
    p = _as_const(p_logits)
    q = _as_tensor(q_logits)
    if p.data.shape != q.data.shape or p.data.ndim != 2:
        raise ShapeError(f"p shape {p.data.shape} differs from q {q.data.shape}")
    log_p = _log_softmax_np(p.data)
    probs = np.exp(log_p)
    log_q = log_softmax(q)
    gap = sub(Tensor(log_p), log_q)
    return tsum(mul(gap, Tensor(probs)), axis=1)


def _log_softmax_np(data: np.ndarray) -> np.ndarray:
    z = data - data.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def kl_divergence(p_logits, q_logits) -> Tensor:
    """Mean KL(softmax(p_logits) || softmax(q_logits)) over the batch."""
    return tmean(_kl_rows(p_logits, q_logits))


def unlearning_loss(teacher_logits, bad_logits, student_logits, l_u) -> Tensor:
    """Per-sample switch: flagged samples chase the random network's
    outputs, the rest stay with the momentum teacher."""
    student = _as_tensor(student_logits)
    if student.data.ndim != 2:
        raise ShapeError(f"logits must be a matrix, got shape {student.data.shape}")
    n = student.data.shape[0]
    flags = np.asarray(l_u, dtype=np.float64).reshape(-1)
    if flags.shape != (n,):
        raise ShapeError(f"flag vector shape {flags.shape} does not match batch size {n}")
    if flags.size and not np.all((flags == 0.0) | (flags == 1.0)):
        raise ContractError("unlearning flags must be 0 or 1")
    if n == 0:
        return _zero()
    keep_rows = _kl_rows(teacher_logits, student)
    wipe_rows = _kl_rows(bad_logits, student)
    mixed = add(mul(keep_rows, Tensor(1.0 - flags)), mul(wipe_rows, Tensor(flags)))
    return tmean(mixed)


def combined_objective(mode: str, ulabel: int, components: dict, weights: LossWeights) -> Tensor:
    """Single switch between the two published step objectives.

    paper_eq11 picks one side whole: the full learning loss when
    ulabel=1, the unlearning loss otherwise. algorithm1 applies the
    buffer distillation terms unconditionally and swaps only the branch
    term (CE on the task when learning, KL to the random network when
    forgetting).

    `components` carries the precomputed scalars; which keys are read
    depends on mode and ulabel: ce/od/cd/scd for the learning side,
    unlearn for paper_eq11's forgetting side, kl_bad for algorithm1's.
    """
    if mode not in MODES:
        raise ContractError(f"unknown objective mode {mode!r}, expected one of {MODES}")
    if ulabel not in (0, 1):
        raise ContractError("ulabel must be 0 or 1")

    def grab(key: str) -> Tensor:
        if key not in components:
            raise ContractError(f"mode {mode!r} with ulabel={ulabel} needs component {key!r}")
        return _as_tensor(components[key])

    if mode == "paper_eq11":
        if ulabel == 1:
            return cl_total_loss(
                (grab("ce"), grab("od"), grab("cd"), grab("scd")), weights
            )
        return grab("unlearn")
    branch = grab("ce") if ulabel == 1 else grab("kl_bad")
    out = add(branch, mul(grab("od"), weights.alpha1))
    out = add(out, mul(grab("cd"), weights.alpha2))
    return add(out, mul(grab("scd"), weights.alpha3))
