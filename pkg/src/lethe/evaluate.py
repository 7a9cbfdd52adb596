"""Accuracy tables, the retrain baseline, and the capacity trade-off fit.

Accuracy is tabulated the way the experiment tables read: one row per
processed request, one column per class, percentages at one decimal.
Classes the run has never learned report 0.0 by convention; a class
whose test set is empty reports an absent cell rather than a number.

The retrain baseline answers "what would a model that never saw the
forgotten tasks look like": the same script with the forgotten tasks'
learn requests deleted, run under the same seed, returning its teacher.

The trade-off model scores buffer capacity N as alpha*ln(N)*(1 - beta/N)
and is fitted to measured points by a fixed-schedule refined grid over
beta (alpha is closed-form at fixed beta), so equal inputs always
produce the same fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import engine, model
from .errors import ContractError
from .streams import StreamScript
from .tape import no_grad


# ---------------------------------------------------------------------------
# per-class accuracy and the request-by-request matrix

def masked_predictions(net: model.TriNet, x: np.ndarray, banned=()) -> np.ndarray:
    """Argmax class ids, optionally with some classes' logits removed
    from the running (the evaluation-time mask; off by default)."""
    with no_grad():
        logits = model.classify(net, x).data.copy()
    for c in banned:
        logits[:, int(c)] = -np.inf
    return np.argmax(logits, axis=1)


def per_class_accuracy(net: model.TriNet, tests: dict, banned=()) -> dict[int, float]:
    """Percent accuracy per class from a class -> inputs mapping; classes
    with no test rows are left out of the result entirely."""
    out: dict[int, float] = {}
    for c, x in tests.items():
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            continue
        preds = masked_predictions(net, x, banned)
        out[int(c)] = 100.0 * float(np.mean(preds == int(c)))
    return out


@dataclass
class AccuracyMatrix:
    num_classes: int
    rows: list[tuple[str, tuple]] = field(default_factory=list)


def record_row(matrix: AccuracyMatrix, label: str, accuracies) -> AccuracyMatrix:
    """Append one request's row; `accuracies` is a full-width sequence
    (None marks an absent cell) or a class -> percent mapping."""
    c = matrix.num_classes
    if isinstance(accuracies, dict):
        cells = tuple(accuracies.get(i) for i in range(c))
    else:
        cells = tuple(accuracies)
        if len(cells) != c:
            raise ContractError(f"row has {len(cells)} cells, expected {c}")
    for v in cells:
        if v is not None and not 0.0 <= float(v) <= 100.0:
            raise ContractError(f"accuracy {v} outside [0, 100]")
    matrix.rows.append((str(label), cells))
    return matrix


def evaluation_row(
    net: model.TriNet,
    tests: dict,
    ever_learned,
    num_classes: int,
    banned=(),
) -> list:
    """Full-width row under the table conventions: never-learned classes
    pin to 0.0, measured classes report their percentage, empty test
    sets stay absent."""
    measured = per_class_accuracy(net, tests, banned)
    learned = {int(c) for c in ever_learned}
    row: list = []
    for c in range(num_classes):
        if c not in learned:
            row.append(0.0)
        elif c in measured:
            row.append(measured[c])
        else:
            row.append(None)
    return row


def write_matrix_csv(matrix: AccuracyMatrix, path) -> None:
    """Header of class ids, then one row per request, one decimal per
    cell, absent cells empty."""
    lines = ["request," + ",".join(str(c) for c in range(matrix.num_classes))]
    for label, cells in matrix.rows:
        rendered = ",".join("" if v is None else f"{float(v):.1f}" for v in cells)
        lines.append(f"{label},{rendered}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_matrix_csv(path) -> AccuracyMatrix:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("request,"):
        raise ContractError(f"{path}: not an accuracy table")
    num_classes = len(lines[0].split(",")) - 1
    matrix = AccuracyMatrix(num_classes=num_classes)
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split(",")
        cells = tuple(None if v == "" else float(v) for v in parts[1:])
        record_row(matrix, parts[0], cells)
    return matrix


# ---------------------------------------------------------------------------
# retrain baseline

def oracle_script(script: StreamScript) -> StreamScript:
    """The equivalent learn-only script: tasks forgotten by the end lose
    all their lines, everything else keeps its last LEARN, original
    order preserved."""
    last_learn: dict[str, int] = {}
    active: set[str] = set()
    for i, (verb, task_id) in enumerate(script.requests):
        if verb == "LEARN":
            last_learn[task_id] = i
            active.add(task_id)
        else:
            active.discard(task_id)
    keep = sorted(active, key=lambda t: last_learn[t])
    return StreamScript(requests=tuple(("LEARN", t) for t in keep))


def retrain_oracle(
    net_config: model.NetConfig,
    hyper: engine.HyperParams,
    buffer_capacity: int,
    seed: int,
    tasks,
    script: StreamScript,
) -> model.TriNet:
    """Teacher of a fresh run, same seed, that simply never learns the
    forgotten tasks."""
    state = engine.init_state(net_config, hyper, buffer_capacity, seed)
    engine.run_script(state, tasks, oracle_script(script))
    return state.teacher


# ---------------------------------------------------------------------------
# capacity trade-off model

@dataclass(frozen=True)
class TradeoffModel:
    alpha: float
    beta: float
    degenerate: bool = False

    def __post_init__(self):
        if not self.degenerate and (self.alpha <= 0 or self.beta <= 0):
            raise ContractError("trade-off parameters must be positive")
        if self.degenerate and self.beta <= 0:
            raise ContractError("beta must be positive")


def p_cl(n: float, alpha: float) -> float:
    """Learning performance alpha*ln(N)."""
    if n < 1:
        raise ContractError("buffer capacity N must be at least 1")
    return alpha * math.log(n)


def e_ul(n: float, beta: float) -> float:
    """Unlearning effectiveness 1 - beta/N."""
    if n <= 0:
        raise ContractError("buffer capacity N must be positive")
    return 1.0 - beta / n


def total_performance(n: float, m: TradeoffModel) -> float:
    if n < 1:
        raise ContractError("buffer capacity N must be at least 1")
    return p_cl(n, m.alpha) * e_ul(n, m.beta)


def _shape(n: np.ndarray, beta: float) -> np.ndarray:
    return np.log(n) * (1.0 - beta / n)


def _best_alpha(n: np.ndarray, y: np.ndarray, beta: float) -> tuple[float, float]:
    """Closed-form least-squares alpha at fixed beta, with the residual."""
    g = _shape(n, beta)
    gg = float(g @ g)
    if gg == 0.0:
        return 0.0, float(y @ y)
    alpha = float(y @ g) / gg
    r = alpha * g - y
    return alpha, float(r @ r)


def fit_tradeoff(points) -> TradeoffModel:
    """Deterministic (alpha, beta) fit of capacity/score pairs.

    Outer search over beta on a refined grid with a fixed schedule; inner
    alpha is exact. Flat measurements, or data demanding a nonpositive
    alpha, come back flagged degenerate instead of pretending the model
    shape fits.
    """
    pts = [(float(n), float(y)) for n, y in points]
    ns = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if len(set(ns.tolist())) < 3:
        raise ContractError("fit_tradeoff needs at least 3 distinct capacities")
    if np.any(ns < 1):
        raise ContractError("capacities must be at least 1")
    if float(np.max(ys) - np.min(ys)) <= 1e-12:
        return TradeoffModel(alpha=0.0, beta=1.0, degenerate=True)

    lo, hi = 1e-3, 2.0 * float(np.max(ns))
    best_beta, best_alpha, best_sse = lo, 0.0, np.inf
    for _ in range(6):
        grid = np.linspace(lo, hi, 200)
        for beta in grid:
            alpha, sse = _best_alpha(ns, ys, float(beta))
            if sse < best_sse:
                best_sse, best_beta, best_alpha = sse, float(beta), alpha
        step = (hi - lo) / 199.0
        lo = max(1e-6, best_beta - 2.0 * step)
        hi = best_beta + 2.0 * step
    if best_alpha <= 0:
        return TradeoffModel(alpha=0.0, beta=max(best_beta, 1e-6), degenerate=True)
    return TradeoffModel(alpha=best_alpha, beta=best_beta)


def tradeoff_stationary_point(m: TradeoffModel) -> float:
    """The unique N where d/dN [alpha*ln(N)*(1-beta/N)] vanishes: the
    root of N - beta + beta*ln(N) = 0, found by bisection."""
    beta = m.beta

    def g(n: float) -> float:
        return n - beta + beta * math.log(n)

    lo, hi = 1e-12, beta + 1.0
    if g(lo) > 0 or g(hi) < 0:
        raise ContractError("no stationary point bracket for this beta")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def write_tradeoff_series(path, m: TradeoffModel, capacities) -> None:
    """Plot-ready CSV of (N, total_performance), full float precision."""
    lines = ["N,total_performance"]
    for n in capacities:
        lines.append(f"{float(n)!r},{total_performance(float(n), m)!r}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
