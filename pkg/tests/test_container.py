"""Array container: bit-exact round trips and strict parsing."""

import numpy as np
import pytest

from lethe.container import read_arrays, write_arrays
from lethe.errors import ContractError


def test_roundtrip_bit_exact(tmp_path, rng):
    path = tmp_path / "a.tensors"
    arrays = {
        "w": rng.standard_normal((3, 4)),
        "b": np.array([-0.0, 1e-308, 1e308, np.pi]),
        "s": np.array(2.5),
    }
    write_arrays(path, arrays)
    back = read_arrays(path)
    assert set(back) == set(arrays)
    for name, arr in arrays.items():
        assert back[name].shape == arr.shape
        # bit equality, not approximate: hex floats carry every bit
        assert np.array_equal(
            back[name].view(np.uint64), np.asarray(arr, dtype=np.float64).view(np.uint64)
        )


def test_key_order_does_not_change_bytes(tmp_path, rng):
    a = rng.standard_normal(5)
    b = rng.standard_normal((2, 2))
    p1, p2 = tmp_path / "1", tmp_path / "2"
    write_arrays(p1, {"a": a, "b": b})
    write_arrays(p2, {"b": b, "a": a})
    assert p1.read_bytes() == p2.read_bytes()


def test_rejects_non_finite(tmp_path):
    with pytest.raises(ContractError):
        write_arrays(tmp_path / "x", {"a": np.array([1.0, np.nan])})
    with pytest.raises(ContractError):
        write_arrays(tmp_path / "x", {"a": np.array([np.inf])})


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad"
    path.write_text("something 1\n")
    with pytest.raises(ContractError):
        read_arrays(path)


def test_rejects_wrong_value_count(tmp_path):
    good = tmp_path / "good"
    write_arrays(good, {"a": np.ones(3)})
    lines = good.read_text().splitlines()
    truncated = lines[1].rsplit(" ", 1)[0]
    bad = tmp_path / "bad"
    bad.write_text(lines[0] + "\n" + truncated + "\n")
    with pytest.raises(ContractError):
        read_arrays(bad)
