import json

import numpy as np
import pytest
from PIL import Image

from biq.autoencoder import Checkpoint
from biq.cli import main
from biq.distortions import Manifest
from biq.imageio import read_image, write_png
from biq.natural_model import NaturalModel

SMALL = ["channels=4", "patch_size=32", "epochs=2", "patches_per_image=8", "batch_size=8", "lr=0.001"]


def sets(pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


def scene(seed, size=64):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    img = 0.5 + 0.3 * np.sin(xx / (4.0 + seed)) * np.cos(yy / 6.0) + 0.03 * rng.standard_normal((size, size))
    return np.clip(img, 0, 1)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    pristine = root / "pristine"
    pristine.mkdir()
    for i in range(3):
        write_png(pristine / f"s{i}.png", scene(i))
    # an 8-bit colour PPM is accepted too
    rgb = (np.stack([scene(5)] * 3, axis=-1) * 255).astype(np.uint8)
    Image.fromarray(rgb).save(pristine / "colour.ppm")
    ckpt = root / "net.ckpt"
    model = root / "natural.model"
    assert main(["train", "--images", str(pristine), "--out", str(ckpt)] + sets(SMALL)) == 0
    assert main(["build-model", "--images", str(pristine), "--ckpt", str(ckpt), "--out", str(model)]) == 0
    return root, pristine, ckpt, model


class TestTrain:
    def test_checkpoint_written(self, workspace, capsys):
        _, _, ckpt, _ = workspace
        ck = Checkpoint.from_bytes(ckpt.read_bytes())
        assert ck.config.channels == 4 and ck.epochs_run == 2

    def test_prints_epoch_losses_and_repeats(self, workspace, tmp_path, capsys):
        _, pristine, ckpt, _ = workspace
        out = tmp_path / "again.ckpt"
        assert main(["train", "--images", str(pristine), "--out", str(out)] + sets(SMALL)) == 0
        text = capsys.readouterr().out
        assert "epoch 1/2 loss" in text and "epoch 2/2 loss" in text
        assert out.read_bytes() == ckpt.read_bytes()

    def test_config_file(self, workspace, tmp_path):
        _, pristine, ckpt, _ = workspace
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# small run\n" + "\n".join(p.replace("=", " = ") for p in SMALL) + "\n")
        out = tmp_path / "cfg.ckpt"
        assert main(["train", "--images", str(pristine), "--out", str(out), "--config", str(cfg)]) == 0
        assert out.read_bytes() == ckpt.read_bytes()

    def test_empty_folder(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code = main(["train", "--images", str(tmp_path / "empty"), "--out", str(tmp_path / "x.ckpt")])
        assert code != 0
        assert "no usable images" in capsys.readouterr().err
        assert not (tmp_path / "x.ckpt").exists()

    def test_undecodable_image(self, tmp_path, capsys):
        d = tmp_path / "bad"
        d.mkdir()
        (d / "broken.png").write_bytes(b"not a png")
        assert main(["train", "--images", str(d), "--out", str(tmp_path / "x.ckpt")]) != 0
        err = capsys.readouterr().err
        assert err.startswith("error:") and len(err.strip().splitlines()) == 1

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        _, pristine, _, _ = workspace
        assert main(["train", "--images", str(pristine), "--out", str(tmp_path / "x"), "--set", "bogus=1"]) == 2
        assert "bogus" in capsys.readouterr().err


class TestBuildModel:
    def test_model_matches_checkpoint(self, workspace):
        _, _, ckpt, model = workspace
        m = NaturalModel.from_bytes(model.read_bytes())
        assert len(m.channels) == 4
        assert m.fingerprint == Checkpoint.from_bytes(ckpt.read_bytes()).fingerprint()

    def test_rebuild_identical(self, workspace, tmp_path):
        _, pristine, ckpt, model = workspace
        out = tmp_path / "m2"
        assert main(["build-model", "--images", str(pristine), "--ckpt", str(ckpt), "--out", str(out)]) == 0
        assert out.read_bytes() == model.read_bytes()

    def test_bad_checkpoint(self, workspace, tmp_path, capsys):
        _, pristine, _, _ = workspace
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"garbage")
        assert main(["build-model", "--images", str(pristine), "--ckpt", str(junk), "--out", str(tmp_path / "m")]) == 2
        assert "magic" in capsys.readouterr().err


class TestScore:
    def test_single_image(self, workspace, capsys):
        _, pristine, ckpt, model = workspace
        args = ["score", "--model", str(model), "--ckpt", str(ckpt), "--input", str(pristine / "s0.png")]
        assert main(args) == 0
        first = capsys.readouterr().out
        assert main(args) == 0
        assert capsys.readouterr().out == first
        assert float(first) >= -1e-9

    def test_other_checkpoint_rejected(self, workspace, tmp_path, capsys):
        _, pristine, _, model = workspace
        other = tmp_path / "other.ckpt"
        main(["train", "--images", str(pristine), "--out", str(other)] + sets(SMALL + ["seed=1"]))
        capsys.readouterr()
        code = main(["score", "--model", str(model), "--ckpt", str(other), "--input", str(pristine / "s0.png")])
        assert code == 2
        assert "fingerprint" in capsys.readouterr().err

    def test_missing_input(self, workspace, tmp_path, capsys):
        _, _, ckpt, model = workspace
        assert main(["score", "--model", str(model), "--ckpt", str(ckpt), "--input", str(tmp_path / "nope.png")]) == 2

    def test_undersized_input(self, workspace, tmp_path, capsys):
        _, _, ckpt, model = workspace
        write_png(tmp_path / "small.png", np.full((16, 40), 0.5))
        assert main(["score", "--model", str(model), "--ckpt", str(ckpt), "--input", str(tmp_path / "small.png")]) == 2


@pytest.fixture(scope="module")
def corpus(workspace):
    root, pristine, _, _ = workspace
    out = root / "corpus"
    assert main(["distort", "--images", str(pristine), "--out", str(out), "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def scored(workspace, corpus):
    _, _, ckpt, model = workspace
    path = corpus / "scored.csv"
    args = ["score", "--model", str(model), "--ckpt", str(ckpt), "--input", str(corpus / "manifest.csv"), "--out", str(path)]
    assert main(args) == 0
    return path, args


class TestDistortEvaluate:
    def test_files_and_rows(self, corpus):
        m = Manifest.read(corpus / "manifest.csv")
        assert len(m) == 4 * 16
        assert all((corpus / r.path).is_file() for r in m.rows)
        assert all(r.score is None for r in m.rows)
        assert any(c.startswith("config: ") for c in m.comments)

    def test_single_image_folder(self, tmp_path):
        src = tmp_path / "one"
        src.mkdir()
        write_png(src / "only.png", scene(9))
        assert main(["distort", "--images", str(src), "--out", str(tmp_path / "c")]) == 0
        assert len(list((tmp_path / "c").glob("*.png"))) == 16

    def test_deterministic(self, workspace, corpus, tmp_path):
        _, pristine, _, _ = workspace
        assert main(["distort", "--images", str(pristine), "--out", str(tmp_path / "c"), "--seed", "3"]) == 0
        for f in corpus.iterdir():
            if f.suffix in (".png", ".csv") and not f.name.startswith("scored"):
                assert f.read_bytes() == (tmp_path / "c" / f.name).read_bytes()

    def test_score_evaluate(self, scored, tmp_path, capsys):
        path, args = scored
        m = Manifest.read(path)
        assert all(r.score is not None for r in m.rows)
        timing = json.loads(path.with_name("scored.csv.timing.json").read_text())
        assert timing["rows"] == 64 and timing["mean_seconds"] > 0

        # scoring again gives identical manifest bytes
        first = path.read_bytes()
        assert main(args) == 0
        assert path.read_bytes() == first

        report = tmp_path / "report.csv"
        capsys.readouterr()
        assert main(["evaluate", "--manifest", str(path), "--out", str(report)]) == 0
        summary = capsys.readouterr().out
        assert "time_sec/image" in summary and "groups evaluated: 12" in summary
        text = report.read_text()
        assert text.startswith("# distortions:")
        assert "grand_mean" in text

    def test_pristine_below_heavy_noise(self, scored):
        scores = {(r.image_id, r.family, r.level): r.score for r in Manifest.read(scored[0]).rows}
        # every source image here was also part of the natural model
        for iid in ("s0", "s1", "s2"):
            assert scores[(iid, "pristine", 0)] < scores[(iid, "awgn", 5)]

    def test_missing_scores_fail(self, corpus, capsys):
        assert main(["evaluate", "--manifest", str(corpus / "manifest.csv")]) == 1
        err = capsys.readouterr().err
        assert "incomplete groups" in err and "missing level(s) 0 1 2 3 4 5" in err

    def test_monotone_scores(self, corpus, tmp_path, capsys):
        m = Manifest.read(corpus / "manifest.csv")
        for r in m.rows:
            r.score = r.level * 1.5 + 0.1
        m.write(tmp_path / "mono.csv")
        assert main(["evaluate", "--manifest", str(tmp_path / "mono.csv")]) == 0
        line = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("overall")][0]
        assert line.split()[1:4] == ["1.0000", "1.0000", "1.0000"]
        assert "time_sec/image: n/a" in line


def test_read_image_formats(tmp_path):
    gray16 = (scene(0, 20) * 65535).astype(np.uint16)
    Image.fromarray(gray16).save(tmp_path / "g16.png")
    np.testing.assert_allclose(read_image(tmp_path / "g16.png"), gray16 / 65535.0)
    gray8 = (scene(1, 20) * 255).astype(np.uint8)
    Image.fromarray(gray8).save(tmp_path / "g8.pgm")
    np.testing.assert_allclose(read_image(tmp_path / "g8.pgm"), gray8 / 255.0)
    rgb = np.zeros((4, 4, 3), np.uint8)
    rgb[..., 1] = 255
    Image.fromarray(rgb).save(tmp_path / "c.png")
    np.testing.assert_allclose(read_image(tmp_path / "c.png"), 0.587)


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
