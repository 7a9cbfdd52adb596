"""Task streams: blob geometry, the script grammar, and dataset files."""

import numpy as np
import pytest

from lethe import streams
from lethe.errors import ContractError, ScriptError
from lethe.streams import (
    StreamScript,
    class_means,
    make_gaussian_tasks,
    parse_script,
    read_dataset,
    render_script,
    task_distribution,
    write_dataset,
)


def test_task_distribution_blocks():
    skel = task_distribution(10, 2)
    assert [t.task_id for t in skel] == ["T1", "T2", "T3", "T4", "T5"]
    assert [t.classes for t in skel] == [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)]


def test_task_distribution_rejects_non_divisor():
    with pytest.raises(ContractError):
        task_distribution(10, 3)


def test_class_means_on_unit_circle():
    means = class_means(10, 2)
    np.testing.assert_allclose(np.linalg.norm(means, axis=1), np.ones(10), atol=1e-12)
    # distinct directions
    assert len({tuple(np.round(m, 6)) for m in means}) == 10


def test_class_means_higher_dim_pads_zeros():
    means = class_means(4, 5)
    np.testing.assert_array_equal(means[:, 2:], np.zeros((4, 3)))


def test_make_gaussian_tasks_shapes(rng):
    tasks = make_gaussian_tasks(task_distribution(4, 2), 30, 10, 0.06, rng)
    assert len(tasks) == 2
    for t in tasks:
        assert t.train_x.shape == (60, 2)
        assert t.test_x.shape == (20, 2)
        assert sorted(set(t.train_y.tolist())) == list(t.classes)
    # spread 0.06 on unit circle keeps blobs separated: a nearest-mean
    # classifier should be essentially perfect
    means = class_means(4, 2)
    for t in tasks:
        d = np.linalg.norm(t.train_x[:, None, :] - means[None, :, :], axis=2)
        assert (d.argmin(axis=1) == t.train_y).mean() > 0.99


def test_make_gaussian_tasks_dim_bounds(rng):
    with pytest.raises(ContractError):
        make_gaussian_tasks(task_distribution(4, 2), 10, 5, 0.06, rng, dim=1)
    tasks = make_gaussian_tasks(task_distribution(4, 2), 10, 5, 0.06, rng, dim=8)
    assert tasks[0].train_x.shape[1] == 8


def test_parse_and_render_roundtrip():
    text = "LEARN T1\nLEARN T2\nUNLEARN T2\nLEARN T2\n"
    script = parse_script(text)
    assert script.requests == (
        ("LEARN", "T1"),
        ("LEARN", "T2"),
        ("UNLEARN", "T2"),
        ("LEARN", "T2"),
    )
    assert parse_script(render_script(script)) == script


def test_parse_ignores_comments_and_blanks():
    script = parse_script("# warmup\n\nLEARN T1  # first task\n")
    assert script.requests == (("LEARN", "T1"),)


@pytest.mark.parametrize(
    "text,fragment,line",
    [
        ("LEARN", "expected", 1),
        ("DESTROY T1", "unknown verb", 1),
        ("LEARN T1\nLEARN T1", "already learned", 2),
        ("UNLEARN T1", "before it was learned", 1),
        ("LEARN T1\nUNLEARN T1\nUNLEARN T1", "repeated UNLEARN", 3),
    ],
)
def test_parse_errors_carry_line_numbers(text, fragment, line):
    with pytest.raises(ScriptError) as err:
        parse_script(text)
    assert fragment in str(err.value)
    assert f"line {line}" in str(err.value)


def test_parse_unknown_task_id():
    with pytest.raises(ScriptError, match="unknown task id"):
        parse_script("LEARN T9", known_ids=["T1", "T2"])
    parse_script("LEARN T2", known_ids=["T1", "T2"])  # known id is fine


def test_relearn_after_unlearn_allowed():
    script = parse_script("LEARN T1\nUNLEARN T1\nLEARN T1")
    assert len(script.requests) == 3


def test_dataset_roundtrip(tmp_path, rng):
    tasks = make_gaussian_tasks(task_distribution(4, 2), 6, 3, 0.06, rng)
    path = tmp_path / "data.txt"
    write_dataset(tasks, path)
    rows = read_dataset(path)
    # one record per (task, split) sample
    assert len(rows) == sum(t.train_x.shape[0] + t.test_x.shape[0] for t in tasks)
    by_task_split = {}
    for task_id, split, y, x in rows:
        by_task_split.setdefault((task_id, split), []).append((y, x))
    train_back = by_task_split[("T1", "train")]
    t1 = tasks[0]
    got = sorted((y, x.tobytes()) for y, x in train_back)
    want = sorted((int(y), x.tobytes()) for x, y in zip(t1.train_x, t1.train_y))
    assert got == want  # bit-exact payloads, order-free
