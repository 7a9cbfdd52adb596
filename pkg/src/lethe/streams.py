"""Task construction and the learn/unlearn script format.

Tasks partition the class set into consecutive blocks; each class is an
isotropic Gaussian blob whose mean sits on the unit circle embedded in
the first two input dimensions. At the default spread the blobs are
linearly separable, so any accuracy loss observed downstream comes from
the training protocol, not from class overlap.

Scripts are line-based: `LEARN <id>` or `UNLEARN <id>`, `#` comments.
Parsing enforces that UNLEARN targets a currently learned task and that
LEARN is not repeated while the task is active; errors carry the
offending line number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ScriptError

DEFAULT_TOTAL_CLASSES = 10
DEFAULT_CLASSES_PER_TASK = 2
DEFAULT_TRAIN_PER_CLASS = 200
DEFAULT_TEST_PER_CLASS = 100
DEFAULT_INPUT_DIM = 2
DEFAULT_SPREAD = 0.06

VERBS = ("LEARN", "UNLEARN")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    classes: tuple[int, ...]
    train_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    train_y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    test_y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class StreamScript:
    requests: tuple[tuple[str, str], ...]

    def __len__(self) -> int:
        return len(self.requests)


def task_distribution(total_classes: int, classes_per_task: int) -> list[TaskSpec]:
    """Skeletons T1..Tk over consecutive class blocks: (10, 2) gives
    five tasks {0,1},{2,3},...,{8,9}."""
    if total_classes < 1 or classes_per_task < 1:
        raise ContractError("class counts must be positive")
    if total_classes % classes_per_task != 0:
        raise ContractError(
            f"classes_per_task {classes_per_task} does not divide total_classes {total_classes}"
        )
    tasks = []
    for i in range(total_classes // classes_per_task):
        block = tuple(range(i * classes_per_task, (i + 1) * classes_per_task))
        tasks.append(TaskSpec(task_id=f"T{i + 1}", classes=block))
    return tasks


def class_means(total_classes: int, dim: int) -> np.ndarray:
    """Unit-circle means in the first two coordinates, zero elsewhere."""
    angles = 2.0 * np.pi * np.arange(total_classes) / total_classes
    means = np.zeros((total_classes, dim))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    return means


def make_gaussian_tasks(
    distribution: list[TaskSpec],
    samples_per_class: int,
    test_per_class: int,
    spread: float,
    rng: np.random.Generator,
    dim: int = DEFAULT_INPUT_DIM,
) -> list[TaskSpec]:
    if spread <= 0:
        raise ContractError("spread must be positive")
    if not 2 <= dim <= 8:
        raise ContractError("input dimension must be between 2 and 8")
    if samples_per_class < 1 or test_per_class < 1:
        raise ContractError("per-class sample counts must be positive")
    total = sum(len(t.classes) for t in distribution)
    means = class_means(total, dim)
    filled = []
    for task in distribution:
        train_parts, test_parts = [], []
        for c in task.classes:
            train_parts.append(rng.normal(means[c], spread, size=(samples_per_class, dim)))
            test_parts.append(rng.normal(means[c], spread, size=(test_per_class, dim)))
        train_y = np.repeat(np.asarray(task.classes, dtype=np.int64), samples_per_class)
        test_y = np.repeat(np.asarray(task.classes, dtype=np.int64), test_per_class)
        filled.append(
            TaskSpec(
                task_id=task.task_id,
                classes=task.classes,
                train_x=np.vstack(train_parts),
                train_y=train_y,
                test_x=np.vstack(test_parts),
                test_y=test_y,
            )
        )
    return filled


def parse_script(text: str, known_ids=None) -> StreamScript:
    """Validates grammar and ordering; `known_ids`, when given, is the
    universe of task ids a script may mention."""
    known = None if known_ids is None else {str(t) for t in known_ids}
    requests: list[tuple[str, str]] = []
    active: set[str] = set()
    ever_learned: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ScriptError(f"expected 'LEARN <id>' or 'UNLEARN <id>', got {line!r}", lineno)
        verb, task_id = parts
        if verb not in VERBS:
            raise ScriptError(f"unknown verb {verb!r}", lineno)
        if known is not None and task_id not in known:
            raise ScriptError(f"unknown task id {task_id!r}", lineno)
        if verb == "LEARN":
            if task_id in active:
                raise ScriptError(f"task {task_id} is already learned", lineno)
            active.add(task_id)
            ever_learned.add(task_id)
        else:
            if task_id not in active:
                if task_id in ever_learned:
                    raise ScriptError(f"repeated UNLEARN of task {task_id}", lineno)
                raise ScriptError(f"UNLEARN of task {task_id} before it was learned", lineno)
            active.remove(task_id)
        requests.append((verb, task_id))
    return StreamScript(requests=tuple(requests))


def render_script(script: StreamScript) -> str:
    return "".join(f"{verb} {task_id}\n" for verb, task_id in script.requests)


def write_dataset(tasks: list[TaskSpec], path) -> None:
    """One sample per line: task id, split, class id, coordinates as hex
    floats. Inspection format; `read_dataset` round-trips it exactly."""
    lines = []
    for task in tasks:
        for split, xs, ys in (("train", task.train_x, task.train_y), ("test", task.test_x, task.test_y)):
            for x, y in zip(xs, ys):
                coords = " ".join(v.hex() for v in np.asarray(x, dtype=np.float64).tolist())
                lines.append(f"{task.task_id} {split} {int(y)} {coords}")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_dataset(path) -> list[tuple[str, str, int, np.ndarray]]:
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh.read().splitlines(), start=1):
            if not line:
                continue
            parts = line.split(" ")
            try:
                task_id, split, y = parts[0], parts[1], int(parts[2])
                x = np.array([float.fromhex(v) for v in parts[3:]], dtype=np.float64)
            except (IndexError, ValueError) as exc:
                raise ContractError(f"{path}: malformed dataset record at line {lineno}") from exc
            out.append((task_id, split, y, x))
    return out
