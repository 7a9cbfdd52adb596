"""End-to-end command line runs on a small two-task configuration, plus
the verify subcommand and its failure modes."""

import json
import textwrap

import numpy as np
import pytest

from lethe import losses, verify
from lethe.cli import main
from lethe.tape import _node


def write_quick_config(tmp_path, *, seed=0, extra_hyper=""):
    stream = tmp_path / "two_task.stream"
    stream.write_text("LEARN T1\nLEARN T2\nUNLEARN T2\n")
    ini = tmp_path / "exp.ini"
    ini.write_text(
        textwrap.dedent(
            f"""\
            [net]
            input_dim = 2
            hidden_dims = 8,8
            num_classes = 4
            embed_dim = 4

            [hyper]
            epochs_per_task = 2
            batch_size = 16
            buffer_batch_size = 16
            {extra_hyper}

            [data]
            train_per_class = 15
            test_per_class = 5

            [buffer]
            capacity = 40

            [run]
            seed = {seed}
            stream = {stream}
            output_dir = {tmp_path / "out"}
            """
        )
    )
    return ini


def test_run_writes_audit_trail(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    assert main(["run", "--config", str(ini)]) == 0
    out = tmp_path / "out"
    assert (out / "matrix.csv").exists()
    assert (out / "checkpoints" / "00_learn_T1" / "teacher.tensors").exists()
    assert (out / "checkpoints" / "02_unlearn_T2" / "buffer.txt").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["final"]["forgotten_classes"] == [2, 3]
    assert summary["final"]["retained_classes"] == [0, 1]
    assert len(summary["requests"]) == 3
    assert "retain mean" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "b")]) == 0
    for name in ("matrix.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    ckpt = ("checkpoints", "02_unlearn_T2", "teacher.tensors")
    assert (tmp_path / "a").joinpath(*ckpt).read_bytes() == (tmp_path / "b").joinpath(*ckpt).read_bytes()


def test_seed_flag_changes_the_run(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    assert main(["run", "--config", str(ini), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(ini), "--seed", "1", "--out", str(tmp_path / "b")]) == 0
    ckpt = ("checkpoints", "00_learn_T1", "teacher.tensors")
    assert (tmp_path / "a").joinpath(*ckpt).read_bytes() != (tmp_path / "b").joinpath(*ckpt).read_bytes()


def test_env_var_relocates_output(tmp_path, capsys, monkeypatch):
    ini = write_quick_config(tmp_path)
    monkeypatch.setenv("LETHE_OUT", str(tmp_path / "env_out"))
    assert main(["run", "--config", str(ini)]) == 0
    assert (tmp_path / "env_out" / "matrix.csv").exists()


def test_missing_config_is_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.ini")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_config_key_is_exit_2(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    ini.write_text(ini.read_text() + "typo_key = 3\n")
    assert main(["run", "--config", str(ini)]) == 2
    assert "typo_key" in capsys.readouterr().err


def test_bad_flags_raise_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--config", "x", "--bogus"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["run", "--config", "x", "--mode", "nonsense"])
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_sweep_fits_and_reports(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    rc = main(
        ["sweep", "--config", str(ini), "--capacities", "10,20,40", "--out", str(tmp_path / "sw")]
    )
    assert rc == 0
    lines = (tmp_path / "sw" / "sweep_fit.csv").read_text().splitlines()
    assert lines[0] == "N,measured,fitted"
    assert [int(line.split(",")[0]) for line in lines[1:]] == [10, 20, 40]
    payload = json.loads((tmp_path / "sw" / "sweep_summary.json").read_text())
    assert set(payload["fit"]) == {"alpha", "beta", "degenerate"}
    assert len(payload["runs"]) == 15  # 3 capacities x 5 seeds
    assert (tmp_path / "sw" / "cap10" / "seed0" / "matrix.csv").exists()


def test_sweep_needs_three_capacities(tmp_path, capsys):
    ini = write_quick_config(tmp_path)
    assert main(["sweep", "--config", str(ini), "--capacities", "10,20"]) == 2
    assert main(["sweep", "--config", str(ini), "--capacities", "ten"]) == 2


def test_verify_subcommand_passes(capsys):
    assert main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS ") == len(verify.SUITES)
    assert "FAIL" not in out


# ---------------------------------------------------------------------------
# the checker actually checks: corrupt a loss, watch the right suite fail

def test_verify_catches_negated_kl(monkeypatch):
    orig = losses.kl_divergence
    monkeypatch.setattr(losses, "kl_divergence", lambda p, q: -orig(p, q))
    with pytest.raises(verify.VerifyFailure, match="< 0"):
        verify.check_kl_nonnegative(pairs=50)


def test_verify_catches_wrong_gradient(monkeypatch):
    orig = losses.cross_entropy_loss

    def stale_gradient(logits, y):
        real = orig(logits, y)
        return _node(real.data, (logits,), lambda g: (np.zeros_like(logits.data),))

    monkeypatch.setattr(losses, "cross_entropy_loss", stale_gradient)
    with pytest.raises(verify.VerifyFailure, match="cross_entropy_loss"):
        verify.gradient_suite(instances=1)


def test_run_suites_reports_failure(monkeypatch):
    import io

    orig = losses.kl_divergence
    monkeypatch.setattr(losses, "kl_divergence", lambda p, q: -orig(p, q))
    buf = io.StringIO()
    assert verify.run_suites(out=buf) is False
    assert "FAIL kl_nonnegative" in buf.getvalue()
