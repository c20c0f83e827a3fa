import csv
import hashlib
import subprocess
import sys

import numpy as np
import pytest

from edms import nets
from edms.cli import EXIT_FORMAT, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, main
from edms.imageio import read_ppm, write_ppm

from conftest import random_weights


def dir_digest(path):
    h = hashlib.sha256()
    for f in sorted(path.iterdir()):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def wfile(tmp_path_factory):
    path = tmp_path_factory.mktemp("w") / "w.edmw"
    nets.save_weights(random_weights(), path)
    return path


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--seed", "1", "--count", "4", "--size", "16", "--out", str(out)]) == 0
    return out


def train_args(stage, data, out, *extra):
    return ["train", "--stage", stage, "--data", str(data), "--epochs", "1", "--batch", "4",
            "--width", "1", "--smap-width", "2", "--weights-out", str(out), *extra]


class TestGenData:
    def test_files_and_determinism(self, dataset, tmp_path):
        assert sorted(f.name for f in dataset.iterdir()) == [
            f"{i:04d}.{ext}" for i in range(4) for ext in ("pgm", "ppm")]
        again = tmp_path / "again"
        main(["gen-data", "--seed", "1", "--count", "4", "--size", "16", "--out", str(again)])
        assert dir_digest(again) == dir_digest(dataset)

    def test_count_zero(self, tmp_path):
        assert main(["gen-data", "--count", "0", "--out", str(tmp_path / "e")]) == EXIT_OK
        assert list((tmp_path / "e").iterdir()) == []


class TestTrain:
    def test_stage_order_and_determinism(self, dataset, tmp_path, capsys):
        seg, base, full = tmp_path / "seg.edmw", tmp_path / "base.edmw", tmp_path / "full.edmw"
        assert main(train_args("segmenter", dataset, seg)) == EXIT_OK
        assert main(train_args("base", dataset, base, "--weights-in", str(seg))) == EXIT_OK
        log = tmp_path / "loss.csv"
        assert main(train_args("smapnet", dataset, full, "--weights-in", str(base),
                               "--loss-log", str(log))) == EXIT_OK
        w = nets.load_weights(full)
        assert all(w.has_network(n) for n in ("segmenter", "compnet", "finenet", "smapnet"))
        rows = list(csv.reader(log.open()))
        assert rows[0] == ["epoch", "stage", "loss"] and rows[1][:2] == ["1", "smapnet"]

        again = tmp_path / "seg2.edmw"
        main(train_args("segmenter", dataset, again))
        assert again.read_bytes() == seg.read_bytes()

    def test_smapnet_needs_base(self, dataset, tmp_path, capsys):
        assert main(train_args("smapnet", dataset, tmp_path / "x.edmw")) == EXIT_USAGE
        assert "needs trained" in capsys.readouterr().err
        assert not (tmp_path / "x.edmw").exists()

    def test_unknown_stage(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(train_args("gan", dataset, tmp_path / "x.edmw"))
        assert exc.value.code == EXIT_USAGE


class TestCodecCommands:
    @pytest.fixture
    def img_file(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, (19, 23, 3), dtype=np.uint8)
        path = tmp_path / "in.ppm"
        write_ppm(path, img)
        return path

    def test_lossless_round_trip(self, img_file, wfile, tmp_path, capsys):
        box, out = tmp_path / "c.edms", tmp_path / "out.ppm"
        assert main(["encode", "--input", str(img_file), "--weights", str(wfile), "--q", "1",
                     "--out", str(box)]) == EXIT_OK
        header, row = capsys.readouterr().out.strip().splitlines()
        stats = dict(zip(header.split(","), row.split(",")))
        assert float(stats["bpp"]) == pytest.approx(8 * box.stat().st_size / (19 * 23))
        assert stats["psnr"] == "inf"
        assert main(["decode", "--input", str(box), "--weights", str(wfile), "--out", str(out)]) == EXIT_OK
        assert out.read_bytes() == img_file.read_bytes()

    def test_verify(self, img_file, wfile, tmp_path, capsys):
        box = tmp_path / "c.edms"
        main(["encode", "--input", str(img_file), "--weights", str(wfile), "--q", "6",
              "--embed-synth-hash", "--no-enhance", "--out", str(box)])
        capsys.readouterr()
        assert main(["verify", "--input", str(box), "--weights", str(wfile)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("match")
        bad = bytearray(box.read_bytes())
        bad[-1] ^= 1
        box.write_bytes(bytes(bad))
        assert main(["verify", "--input", str(box), "--weights", str(wfile)]) == EXIT_MISMATCH
        assert capsys.readouterr().out.startswith("mismatch")
        assert main(["decode", "--input", str(box), "--weights", str(wfile),
                     "--out", str(tmp_path / "o.ppm")]) == EXIT_MISMATCH

    def test_wrong_weights(self, img_file, wfile, tmp_path):
        box = tmp_path / "c.edms"
        main(["encode", "--input", str(img_file), "--weights", str(wfile), "--out", str(box)])
        other = tmp_path / "other.edmw"
        nets.save_weights(random_weights(seed=9), other)
        assert main(["decode", "--input", str(box), "--weights", str(other),
                     "--out", str(tmp_path / "o.ppm")]) == EXIT_FORMAT

    def test_corrupt_weight_file(self, img_file, wfile, tmp_path):
        bad = tmp_path / "bad.edmw"
        raw = bytearray(wfile.read_bytes())
        raw[50] ^= 0xFF
        bad.write_bytes(bytes(raw))
        assert main(["encode", "--input", str(img_file), "--weights", str(bad),
                     "--out", str(tmp_path / "c")]) == EXIT_FORMAT

    @pytest.mark.parametrize("q", ["0", "65"])
    def test_q_out_of_range(self, img_file, wfile, tmp_path, q):
        with pytest.raises(SystemExit) as exc:
            main(["encode", "--input", str(img_file), "--weights", str(wfile), "--q", q,
                  "--out", str(tmp_path / "c")])
        assert exc.value.code == EXIT_USAGE

    def test_missing_input(self, wfile, tmp_path):
        assert main(["encode", "--input", str(tmp_path / "nope.ppm"), "--weights", str(wfile),
                     "--out", str(tmp_path / "c")]) == EXIT_USAGE


class TestEval:
    def test_eval_lossless_inf(self, dataset, wfile, tmp_path):
        out = tmp_path / "rows.csv"
        assert main(["eval", "--data", str(dataset), "--weights", str(wfile), "--q-list", "1",
                     "--csv", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert list(rows[0]) == ["image", "variant", "q", "bpp", "psnr_db", "ms_ssim", "enc_s",
                                 "dec_s", "synth_hash8"]
        assert len(rows) == 4 and all(r["psnr_db"] == "inf" for r in rows)
        assert all(len(r["synth_hash8"]) == 16 for r in rows)

    def test_rd_curve_both_variants(self, dataset, wfile, tmp_path, capsys):
        out = tmp_path / "rd.csv"
        assert main(["rd-curve", "--data", str(dataset), "--weights", str(wfile), "--q-list", "1,4,16",
                     "--variants", "both", "--workers", "2", "--csv", str(out)]) == EXIT_OK
        rows = list(csv.DictReader(out.open()))
        assert {r["variant"] for r in rows} == {"with-enhancement", "without-enhancement"}
        for variant in ("with-enhancement", "without-enhancement"):
            bpp = [float(r["bpp"]) for r in rows if r["variant"] == variant]
            assert len(bpp) == 3 and bpp == sorted(bpp, reverse=True)
        assert capsys.readouterr().out == out.read_text()

    def test_rerun_overwrites(self, dataset, wfile, tmp_path):
        out = tmp_path / "rows.csv"
        for _ in range(2):
            main(["eval", "--data", str(dataset), "--weights", str(wfile), "--q-list", "2", "--csv", str(out)])
        assert len(out.read_text().splitlines()) == 5

    @pytest.mark.parametrize("flag,value", [("--q-list", "0,2"), ("--q-list", "a"), ("--variants", "sideways")])
    def test_bad_lists(self, dataset, wfile, tmp_path, flag, value):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--data", str(dataset), "--weights", str(wfile), flag, value,
                  "--csv", str(tmp_path / "x.csv")])
        assert exc.value.code == EXIT_USAGE


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "edms", "gen-data", "--count", "1", "--size", "8",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert read_ppm(tmp_path / "0000.ppm").shape == (8, 8, 3)
