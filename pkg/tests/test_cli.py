import numpy as np
import pytest

from avae import tensor
from avae.cli import main, parse_config_text
from avae.trainer import ConfigError, TrainConfig

BASE_CFG = """\
# toy run
dim_z = 1
hidden_width = 16
batch_size = 16
iterations = 30
seed = 5
"""


def write_cfg(tmp_path, text=BASE_CFG, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfigParsing:
    def test_defaults_and_overrides(self):
        cfg = parse_config_text("iterations = 12\nuse_xi = false\n", "inline")
        assert cfg == TrainConfig(iterations=12, use_xi=False)

    def test_unknown_key_is_hard_error_with_line(self):
        with pytest.raises(ConfigError, match="inline:2.*iterationz"):
            parse_config_text("seed = 1\niterationz = 5\n", "inline")

    def test_bad_value_names_field(self):
        with pytest.raises(ConfigError, match="batch_size"):
            parse_config_text("batch_size = many\n", "inline")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n", "inline")

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config_text("\n# comment\nseed = 3  # trailing\n\n", "inline")
        assert cfg.seed == 3

    def test_constraint_violations_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("learning_rate = 0\n", "inline")


class TestTrainCommand:
    def test_missing_config_exits_one_naming_path(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "absent.cfg"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "absent.cfg" in capsys.readouterr().err

    def test_outputs_and_row_count(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "losses.csv").read_text().splitlines()
        assert lines[0] == "iteration,l_vae,l_recon,l_kl,l_g,l_z,l_m,l_c"
        assert len(lines) == 1 + 30
        for name in ("checkpoint.bin", "losses.png", "manifest.txt", "eval.csv", "sweep.csv", "manifold.png"):
            assert (out / name).exists()

    def test_manifest_lists_existing_outputs_and_replayable_config(self, tmp_path):
        cfg = write_cfg(tmp_path)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out)])
        manifest = dict(
            line.split("=", 1) for line in (out / "manifest.txt").read_text().splitlines()
        )
        from pathlib import Path

        for key, value in manifest.items():
            if key.startswith("output."):
                assert Path(value).exists(), key
        replay = "\n".join(
            f"{k.removeprefix('config.')} = {v}" for k, v in manifest.items() if k.startswith("config.")
        )
        assert parse_config_text(replay, "replay") == parse_config_text(cfg.read_text(), "orig")

    def test_same_seed_gives_identical_losses_bytes(self, tmp_path):
        cfg = write_cfg(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        main(["train", "--config", str(cfg), "--out", str(a)])
        main(["train", "--config", str(cfg), "--out", str(b)])
        assert (a / "losses.csv").read_bytes() == (b / "losses.csv").read_bytes()

    def test_numerical_abort_exits_two(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path, BASE_CFG.replace("iterations = 30", "iterations = 200") + "learning_rate = 1e12\n"
        )
        code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "abort" in capsys.readouterr().err


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ckpt")
    cfg = write_cfg(tmp)
    out = tmp / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out / "checkpoint.bin"


class TestEvalCommand:

    def test_headers_and_row_counts(self, checkpoint, tmp_path):
        out = tmp_path / "ev"
        code = main(["eval", "--ckpt", str(checkpoint), "--n", "3000", "--seed", "2", "--out", str(out)])
        assert code == 0
        sweep = (out / "sweep.csv").read_text().splitlines()
        assert sweep[0] == "z,xi_index,x1,x2"
        ev = (out / "eval.csv").read_text().splitlines()
        assert len(ev) == 2  # header plus a single report row
        assert ev[0] == "mean_manifold_distance,mean_log_density,recon_mse,branch_coverage,sample_count"

    def test_eval_is_deterministic(self, checkpoint, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            main(["eval", "--ckpt", str(checkpoint), "--n", "3000", "--seed", "2", "--out", str(out)])
            outs.append(out)
        assert (outs[0] / "eval.csv").read_bytes() == (outs[1] / "eval.csv").read_bytes()
        assert (outs[0] / "sweep.csv").read_bytes() == (outs[1] / "sweep.csv").read_bytes()

    def test_missing_checkpoint_exits_one(self, tmp_path, capsys):
        code = main(["eval", "--ckpt", str(tmp_path / "nope.bin"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "nope.bin" in capsys.readouterr().err

    def test_corrupt_checkpoint_exits_one(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"AVAE" + b"\xff" * 20)
        assert main(["eval", "--ckpt", str(bad), "--out", str(tmp_path / "o")]) == 1


class TestGradcheckCommand:
    def test_fresh_build_passes_and_lists_losses(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        out = capsys.readouterr().out
        for name in ("l_vae", "l_kl", "l_recon", "l_c", "l_m", "l_z_a", "l_z_b"):
            assert f"{name}:" in out

    def test_corrupted_derivative_rule_exits_three(self, capsys, monkeypatch):
        good = tensor.UNARY_RULES["tanh"]
        monkeypatch.setitem(
            tensor.UNARY_RULES,
            "tanh",
            tensor.UNARY_RULES["tanh"]._replace(
                gradient=lambda x, y, g, a: 1.01 * good.gradient(x, y, g, a)
            ),
        )
        assert main(["gradcheck", "--seed", "0"]) == 3
        assert "FAIL" in capsys.readouterr().out


class TestCompareCommand:
    def test_rows_labeled_and_margins_present(self, tmp_path):
        cfg = write_cfg(tmp_path, BASE_CFG.replace("iterations = 30", "iterations = 40"))
        out = tmp_path / "cmp"
        assert main(["compare", "--config", str(cfg), "--out", str(out), "--n", "3000"]) == 0
        lines = (out / "compare.csv").read_text().splitlines()
        assert lines[0].startswith("model,")
        assert lines[1].startswith("vae,")
        assert lines[2].startswith("avae,")
        fields = lines[2].split(",")
        density_ratio = float(fields[-2])
        assert np.isfinite(density_ratio)
        assert (out / "vae" / "losses.csv").exists()
        assert (out / "avae" / "losses.csv").exists()
        assert (out / "compare.png").exists()

    def test_vae_subrun_reproducible_independently(self, tmp_path):
        # the vae losses must not depend on the avae run: separate streams
        cfg = write_cfg(tmp_path, BASE_CFG.replace("iterations = 30", "iterations = 25"))
        a, b = tmp_path / "c1", tmp_path / "c2"
        main(["compare", "--config", str(cfg), "--out", str(a), "--n", "3000"])
        main(["compare", "--config", str(cfg), "--out", str(b), "--n", "3000"])
        assert (a / "vae" / "losses.csv").read_bytes() == (b / "vae" / "losses.csv").read_bytes()


class TestUsage:
    def test_unknown_command_exits_one(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag_exits_one(self):
        assert main(["train", "--config", "x"]) == 1


class TestCsvFormat:
    def test_floats_round_trip_exactly(self):
        from avae.report import fmt_value

        rng = np.random.default_rng(17)
        for v in [1e-300, 1.0 / 3.0, -2.5e17, np.pi, *rng.standard_normal(50)]:
            assert float(fmt_value(float(v))) == float(v)
        assert fmt_value(True) == "true"
        assert fmt_value(7) == "7"
