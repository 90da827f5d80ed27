import csv

import numpy as np
import pytest

from haanet.cli import main
from haanet.imageio import load_ppm, read_manifest, save_ppm
from haanet.net import NetConfig, NetWeights
from haanet.physics import invert_exact
from haanet.train import save_network


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--seed", "7", "--count", "3", "--size", "24", "--out-dir", str(out)]) == 0
    return out


@pytest.fixture
def identity_ckpt(tmp_path):
    net = NetWeights.create(NetConfig.desk(), seed=0)
    net.head.weight.data[:] = 0
    path = tmp_path / "identity.haan"
    save_network(path, net)
    return path


class TestSynth:
    def test_byte_identical_reruns(self, tmp_path):
        for d in ("a", "b"):
            assert main(["synth", "--seed", "7", "--count", "2", "--size", "16", "--out-dir", str(tmp_path / d)]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(names) == 7  # two triplets and the manifest
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_hazy_between_clean_and_airlight(self, dataset):
        for row in read_manifest(dataset / "manifest.txt"):
            f = row.files()
            clean, hazy = load_ppm(dataset / f["clean"]), load_ppm(dataset / f["hazy"])
            a = np.array(row.airlight)[:, None, None]
            q = 1 / 255 + 1e-12  # each side quantized independently
            assert np.all(hazy >= np.minimum(clean, a) - q) and np.all(hazy <= np.maximum(clean, a) + q)

    def test_manifest_inversion_round_trip(self, dataset):
        errors = []
        for row in read_manifest(dataset / "manifest.txt"):
            f = row.files()
            clean, hazy = load_ppm(dataset / f["clean"]), load_ppm(dataset / f["hazy"])
            t = load_ppm(dataset / f["trans"])[0]
            ok = t >= 0.2
            j = invert_exact(hazy, t, row.airlight)
            errors.append(np.abs(j - clean)[:, ok].mean())
        assert max(errors) < 1e-2

    def test_size_must_divide(self, tmp_path, capsys):
        assert main(["synth", "--size", "30", "--out-dir", str(tmp_path)]) == 2
        assert "multiple of 4" in capsys.readouterr().err

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert main(["synth", "--count", "1", "--size", "16", "--out-dir", str(blocker / "sub")]) == 1
        assert "cannot write" in capsys.readouterr().err


class TestTrain:
    def test_defaults_echoed_and_artifacts_written(self, tmp_path, dataset):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("total_steps = 2\nbatch_size = 2\ncrop = 16\nn_val = 2\nscene_size = 24\n")
        out = tmp_path / "run"
        assert main(["train", "--config", str(cfg), "--data-dir", str(dataset), "--out", str(out)]) == 0
        echo = (out / "config_used.txt").read_text()
        assert "lr_max = 0.00015" in echo and "total_steps = 2" in echo and "base_channels = 16" in echo
        assert (out / "checkpoint.haan").exists() and (out / "metrics.csv").exists()

    def test_crop_not_divisible(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("crop = 63\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "divisible by 4" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate = 1\n")
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "learning_rate" in capsys.readouterr().err


class TestDehaze:
    def test_identity_checkpoint(self, tmp_path, dataset, identity_ckpt):
        src = dataset / "pair0000_hazy.ppm"
        out, panel = tmp_path / "out.ppm", tmp_path / "panel.ppm"
        assert main(["dehaze", "--checkpoint", str(identity_ckpt), "--in", str(src),
                     "--out", str(out), "--panel", str(panel)]) == 0
        assert out.read_bytes() == src.read_bytes()
        assert load_ppm(panel).shape == (3, 24, 48)

    def test_indivisible_input_padded(self, tmp_path, identity_ckpt, capsys):
        img = np.random.default_rng(0).random((3, 13, 10))
        save_ppm(tmp_path / "odd.ppm", img)
        assert main(["dehaze", "--checkpoint", str(identity_ckpt), "--in", str(tmp_path / "odd.ppm"),
                     "--out", str(tmp_path / "o.ppm")]) == 0
        assert load_ppm(tmp_path / "o.ppm").shape == (3, 13, 10)
        assert (tmp_path / "o.ppm").read_bytes() == (tmp_path / "odd.ppm").read_bytes()
        assert "reflect-padded" in capsys.readouterr().err

    def test_shape_mismatch_reported(self, tmp_path, dataset, capsys):
        net = NetWeights.create(NetConfig.desk(), seed=0)
        path = tmp_path / "bad.haan"
        from haanet import checkpoint
        state = net.state()
        state["stem.weight"] = np.zeros((4, 3, 3, 3), np.float32)
        checkpoint.save(path, state, {"net.base_channels": "16", "net.num_haab": "2"})
        assert main(["dehaze", "--checkpoint", str(path), "--in", str(dataset / "pair0000_hazy.ppm"),
                     "--out", str(tmp_path / "o.ppm")]) == 1
        err = capsys.readouterr().err
        assert "stem.weight" in err and "(8, 3, 3, 3)" in err and "(4, 3, 3, 3)" in err


class TestEval:
    def test_identity_metrics_and_mean_row(self, tmp_path, dataset, identity_ckpt):
        out = tmp_path / "eval.csv"
        assert main(["eval", "--checkpoint", str(identity_ckpt), "--data-dir", str(dataset), "--csv", str(out)]) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 + 1 and rows[-1]["pair_id"] == "mean"
        for r in rows:
            assert r["psnr_pred"] == r["psnr_hazy"] and r["ssim_pred"] == r["ssim_hazy"]
        recomputed = np.mean([float(r["psnr_hazy"]) for r in rows[:-1]])
        assert float(rows[-1]["psnr_hazy"]) == pytest.approx(recomputed, rel=1e-15)

    def test_missing_pair_listed(self, tmp_path, dataset, identity_ckpt, capsys):
        (dataset / "pair0001_hazy.ppm").unlink()
        out = tmp_path / "eval.csv"
        assert main(["eval", "--checkpoint", str(identity_ckpt), "--data-dir", str(dataset), "--csv", str(out)]) == 0
        assert "pair0001" in capsys.readouterr().err
        assert len(out.read_text().strip().splitlines()) == 1 + 2 + 1


class TestGradcheck:
    @pytest.mark.parametrize("module", ["mfem", "haam", "loss"])
    def test_modules_pass(self, module, capsys):
        assert main(["gradcheck", "--module", module]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "groups passed" in out

    def test_mfem_identity_reported(self, capsys):
        main(["gradcheck", "--module", "mfem"])
        assert "identity_at_init" in capsys.readouterr().out
