import click
import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from pahs.cli import cli
from pahs.sequence.frames_io import list_frames, load_sequence, save_sequence
from pahs.tensorcore.tensor4 import load_pt4

COMMANDS = ["synth", "train", "infer", "eval", "ablate", "gradcheck", "dump"]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def trained(runner, tmp_path):
    """A tiny bidirectional checkpoint trained for one step on synthetic data"""
    data = tmp_path / "data"
    ckpt = tmp_path / "tiny.ckpt"
    result = runner.invoke(
        cli,
        ["synth", "--out", str(data), "--height", "16", "--width", "16",
         "--length", "5"],
    )
    assert result.exit_code == 0, result.output
    result = runner.invoke(
        cli,
        ["train", "--data", str(data), "--ckpt", str(ckpt), "--preset", "tiny",
         "--patch", "16", "--iterations", "1"],
    )
    assert result.exit_code == 0, result.output
    return data, ckpt


def _pt4_frames(directory, count=5):
    rng = np.random.default_rng(0)
    shape = (1, 3, 16, 16)
    frames = [rng.uniform(0, 1, shape).astype(np.float32) for _ in range(count)]
    save_sequence(directory, frames, [f"{i:06d}" for i in range(count)], ".pt4")


def test_help_lists_every_command(runner):
    result = runner.invoke(cli, ["--help"])

    assert result.exit_code == 0
    for command in COMMANDS:
        assert command in result.output
        assert runner.invoke(cli, [command, "--help"]).exit_code == 0


@pytest.mark.parametrize("command", [None] + COMMANDS)
def test_help_documents_every_flag(runner, command):
    """Test that --help shows every declared flag and none lacks a description"""
    target = cli if command is None else cli.commands[command]
    args = ["--help"] if command is None else [command, "--help"]

    result = runner.invoke(cli, args)

    assert result.exit_code == 0
    for param in target.params:
        assert isinstance(param, click.Option), param.name
        assert param.help and not param.hidden, param.name
        for flag in param.opts + param.secondary_opts:
            assert flag in result.output, flag


def test_unknown_flag_is_a_usage_error(runner):
    result = runner.invoke(cli, ["eval", "--bogus"])
    assert result.exit_code == 1


def test_empty_directory_exits_with_contract_code(runner, tmp_path):
    """Test that evaluating an empty directory exits 2 with a clear message"""
    empty = tmp_path / "empty"
    empty.mkdir()

    result = runner.invoke(cli, ["eval", "--pred", str(empty), "--gt", str(empty)])

    assert result.exit_code == 2
    assert "no frames found" in result.output


def test_missing_checkpoint_exits_with_io_code(runner, tmp_path):
    _pt4_frames(tmp_path / "in", 1)
    result = runner.invoke(
        cli,
        ["infer", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "out"),
         "--ckpt", str(tmp_path / "missing.ckpt")],
    )
    assert result.exit_code == 3


def test_eval_identical_directories(runner, tmp_path):
    """Test that a directory scored against itself prints infinite PSNR and SSIM 1"""
    _pt4_frames(tmp_path / "frames", 2)

    result = runner.invoke(
        cli,
        ["eval", "--pred", str(tmp_path / "frames"), "--gt", str(tmp_path / "frames")],
    )

    assert result.exit_code == 0, result.output
    assert result.output.strip().splitlines()[-1] == "psnr=inf ssim=1.000000"


def test_synth_is_reproducible(runner, tmp_path):
    """Test that two synth runs with one seed write byte-identical files"""
    for name in ("a", "b"):
        result = runner.invoke(
            cli,
            ["synth", "--out", str(tmp_path / name), "--height", "16", "--width",
             "16", "--length", "3", "--seed", "7"],
        )
        assert result.exit_code == 0, result.output

    first, second = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(first) for p in first.rglob("*.ppm"))
    assert len(files) == 6
    for rel in files:
        assert (first / rel).read_bytes() == (second / rel).read_bytes()


def test_infer_mirrors_input_names(runner, tmp_path, trained):
    _, ckpt = trained
    _pt4_frames(tmp_path / "in")

    result = runner.invoke(
        cli,
        ["infer", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "out"),
         "--ckpt", str(ckpt)],
    )

    assert result.exit_code == 0, result.output
    names = [p.name for p in list_frames(tmp_path / "out")]
    assert names == [f"{i:06d}.pt4" for i in range(5)]
    restored = load_sequence(tmp_path / "out")
    assert all(f.min() >= 0 and f.max() <= 1 for f in restored.frames)


def test_future_window_changes_bidirectional_output(runner, tmp_path, trained):
    """Test that widening the future window changes the restored frames"""
    _, ckpt = trained
    _pt4_frames(tmp_path / "in")
    outputs = {}
    for window in ("0", "3"):
        out = tmp_path / f"out{window}"
        result = runner.invoke(
            cli,
            ["infer", "--in", str(tmp_path / "in"), "--out", str(out),
             "--ckpt", str(ckpt), "--bidir", "--window", window],
        )
        assert result.exit_code == 0, result.output
        outputs[window] = load_sequence(out).frames

    assert not np.array_equal(outputs["0"][0], outputs["3"][0])


def test_infer_rejects_incompatible_width(runner, tmp_path, trained):
    _, ckpt = trained
    _pt4_frames(tmp_path / "in", 1)
    result = runner.invoke(
        cli,
        ["infer", "--in", str(tmp_path / "in"), "--out", str(tmp_path / "out"),
         "--ckpt", str(ckpt), "--c", "24"],
    )
    assert result.exit_code == 2


def test_train_writes_loss_log(runner, tmp_path, trained):
    data, _ = trained
    log = tmp_path / "loss.csv"
    result = runner.invoke(
        cli,
        ["train", "--data", str(data), "--ckpt", str(tmp_path / "again.ckpt"),
         "--preset", "tiny", "--no-bidir", "--patch", "16", "--iterations", "2",
         "--log", str(log)],
    )

    assert result.exit_code == 0, result.output
    frame = pd.read_csv(log)
    assert list(frame.columns) == ["iter", "loss", "lr"]
    assert len(frame) == 2


def test_dump_writes_tensors(runner, tmp_path, trained):
    _, ckpt = trained
    _pt4_frames(tmp_path / "in", 2)

    result = runner.invoke(
        cli,
        ["dump", "--in", str(tmp_path / "in"), "--ckpt", str(ckpt), "--frame", "1",
         "--out", str(tmp_path / "dump")],
    )

    assert result.exit_code == 0, result.output
    s_nl = load_pt4(tmp_path / "dump" / "S_NL.pt4")
    np.testing.assert_allclose(s_nl.sum(axis=-1), 1.0, atol=1e-12)


def test_ablate_writes_report(runner, tmp_path):
    out = tmp_path / "report.csv"
    result = runner.invoke(
        cli,
        ["ablate", "--out", str(out), "--variants", "n0", "--variants", "n1",
         "--preset", "tiny", "--size", "16", "--length", "2",
         "--histogram", str(tmp_path / "hist.csv")],
    )

    assert result.exit_code == 0, result.output
    report = pd.read_csv(out)
    assert list(report["variant"]) == ["n0", "n1"]
    assert (tmp_path / "hist.csv").is_file()


def test_unknown_ablation_variant_exits_2(runner, tmp_path):
    result = runner.invoke(
        cli,
        ["ablate", "--out", str(tmp_path / "r.csv"), "--variants", "n9",
         "--preset", "tiny", "--size", "16", "--length", "2"],
    )
    assert result.exit_code == 2


def test_gradcheck_command(runner):
    result = runner.invoke(cli, ["gradcheck", "--seeds", "1", "--cell-seeds", "1"])

    assert result.exit_code == 0, result.output
    assert "checks passed" in result.output
    rows = [x for x in result.output.splitlines() if x.endswith(" ok")]
    assert [x.split()[1] for x in rows if x.startswith("cell_step")] == ["directional"]
    assert all(x.split()[1] == "elementwise" for x in rows if "cell_step" not in x)


def test_config_file_supplies_defaults(runner, tmp_path):
    """Test that a config file sets option defaults for subcommands"""
    _pt4_frames(tmp_path / "frames", 4)
    config = tmp_path / "run.conf"
    config.write_text("stride = 2\n")

    result = runner.invoke(
        cli,
        ["--config", str(config), "eval", "--pred", str(tmp_path / "frames"),
         "--gt", str(tmp_path / "frames")],
    )

    assert result.exit_code == 0, result.output
    assert "psnr=inf" in result.output


def test_bad_config_key_exits_2(runner, tmp_path):
    config = tmp_path / "run.conf"
    config.write_text("colour = blue\n")
    result = runner.invoke(cli, ["--config", str(config), "gradcheck", "--help"])
    assert result.exit_code == 2
