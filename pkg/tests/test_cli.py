import json
import subprocess
import sys

import numpy as np
import pytest

from lfcodec import lfio, metrics
from lfcodec.cli import EXIT_ARGS, EXIT_DECODE, EXIT_FAIL, EXIT_FORMAT, EXIT_IO, EXIT_OK, main
from lfcodec.train import synth_dataset


@pytest.fixture(scope="module")
def lf_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    lf = synth_dataset(1, 2, 32, 32, seed=77)[0]
    lfio.write_sai_dir(root / "lf", lf, ".npy")
    return root, lf


def run(argv):
    return main([str(a) for a in argv])


def report(path):
    return json.loads(path.read_text())


def test_encode_decode_round_trip(toy_checkpoint, lf_dir, tmp_path):
    ckpt, model, h = toy_checkpoint
    root, lf = lf_dir
    bits, rep = tmp_path / "x.lfb", tmp_path / "enc.json"
    assert run(["encode", "--checkpoint", ckpt, "--input", root / "lf", "--output", bits, "--report", rep]) == EXIT_OK
    enc = report(rep)
    assert enc["bpp"] == metrics.bpp(bits) and enc["layout"] == "sai"
    assert enc["model_hash"] == f"{h:016x}" and enc["ablations"] == []
    drep = tmp_path / "dec.json"
    assert run(["decode", "--checkpoint", ckpt, "--input", bits, "--output", tmp_path / "out",
                "--lossless-output", "--reference", root / "lf", "--report", drep]) == EXIT_OK
    dec = report(drep)
    back = lfio.read_sai_dir(tmp_path / "out")
    assert back.samples.shape == lf.samples.shape
    assert dec["psnr"] == pytest.approx(metrics.psnr(lf.samples, back.samples).db, abs=1e-9)
    again = tmp_path / "y.lfb"
    run(["encode", "--checkpoint", ckpt, "--input", root / "lf", "--output", again, "--report", tmp_path / "r2.json"])
    assert again.read_bytes() == bits.read_bytes()


def test_macpi_layout_is_restored(toy_checkpoint, lf_dir, tmp_path):
    ckpt = toy_checkpoint[0]
    _, lf = lf_dir
    lfio.write_macpi(tmp_path / "m.npy", lf)
    run(["encode", "--checkpoint", ckpt, "--input", tmp_path / "m.npy", "--output", tmp_path / "m.lfb",
         "--report", tmp_path / "e.json"])
    assert report(tmp_path / "e.json")["layout"] == "macpi"
    run(["decode", "--checkpoint", ckpt, "--input", tmp_path / "m.lfb", "--output", tmp_path / "d.png",
         "--report", tmp_path / "d.json"])
    assert report(tmp_path / "d.json")["layout"] == "macpi"
    assert (tmp_path / "d.png").is_file()


def test_exit_codes(toy_checkpoint, lf_dir, tmp_path):
    ckpt = toy_checkpoint[0]
    root, _ = lf_dir
    assert run(["encode", "--bogus"]) == EXIT_ARGS
    assert run(["encode", "--checkpoint", ckpt, "--input", tmp_path / "missing", "--output", tmp_path / "o"]) == EXIT_IO
    assert run(["encode", "--checkpoint", tmp_path / "none.lft", "--input", root / "lf", "--output", tmp_path / "o"]) == EXIT_IO
    (tmp_path / "junk.lfb").write_bytes(b"nope" * 20)
    assert run(["decode", "--checkpoint", ckpt, "--input", tmp_path / "junk.lfb", "--output", tmp_path / "o"]) == EXIT_DECODE
    run(["encode", "--checkpoint", ckpt, "--input", root / "lf", "--output", tmp_path / "g.lfb", "--report", tmp_path / "r.json"])
    data = bytearray((tmp_path / "g.lfb").read_bytes())
    data[-1] ^= 0x40
    (tmp_path / "bad.lfb").write_bytes(bytes(data))
    assert run(["decode", "--checkpoint", ckpt, "--input", tmp_path / "bad.lfb", "--output", tmp_path / "o"]) == EXIT_DECODE
    lfio.write_sai_dir(tmp_path / "a3", synth_dataset(1, 3, 32, 32, seed=0)[0], ".npy")
    assert run(["encode", "--checkpoint", ckpt, "--input", tmp_path / "a3", "--output", tmp_path / "o"]) == EXIT_FORMAT


def test_requested_flags_must_match_checkpoint(toy_checkpoint, lf_dir, tmp_path):
    ckpt = toy_checkpoint[0]
    root, _ = lf_dir
    assert run(["encode", "--checkpoint", ckpt, "--input", root / "lf", "--output", tmp_path / "o",
                "--ablate", "no_fdm"]) == EXIT_ARGS
    assert run(["encode", "--checkpoint", ckpt, "--input", root / "lf", "--output", tmp_path / "o",
                "--lambda", "0.5"]) == EXIT_ARGS


def test_config_file_and_flag_precedence(toy_checkpoint, lf_dir, tmp_path):
    ckpt = toy_checkpoint[0]
    root, _ = lf_dir
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# comment\ncheckpoint = {ckpt}\ninput = {root / 'lf'}\noutput = {tmp_path / 'c.lfb'}\n"
                   f"report = {tmp_path / 'c.json'}\n")
    assert run(["--config", cfg, "encode"]) == EXIT_OK
    assert (tmp_path / "c.lfb").is_file()
    assert run(["--config", cfg, "encode", "--output", tmp_path / "flag.lfb"]) == EXIT_OK
    assert (tmp_path / "flag.lfb").read_bytes() == (tmp_path / "c.lfb").read_bytes()


def test_evaluate_and_rdsweep(toy_checkpoint, tmp_path):
    ckpt = toy_checkpoint[0]
    assert run(["evaluate", "--checkpoint", ckpt, "--synthetic", 2, "--report", tmp_path / "ev.json"]) == EXIT_OK
    ev = report(tmp_path / "ev.json")
    assert len(ev["images"]) == 2 and all(r["latents_exact"] for r in ev["images"])
    assert run(["rdsweep", "--checkpoint", ckpt, "--synthetic", 1, "--output-dir", tmp_path / "sw",
                "--report", tmp_path / "sw.json"]) == EXIT_OK
    assert (tmp_path / "sw" / "rd.csv").is_file() and (tmp_path / "sw" / "rd.png").stat().st_size > 0
    assert run(["rdsweep", "--checkpoint", tmp_path / "absent.lft", "--synthetic", 1,
                "--output-dir", tmp_path / "sw2"]) == EXIT_IO


def test_selftest_fault_injection(capsys):
    assert run(["selftest", "--suite", "representation"]) == EXIT_OK
    first = capsys.readouterr().out
    assert run(["selftest", "--suite", "representation"]) == EXIT_OK
    second = capsys.readouterr().out
    strip = lambda s: [line.rsplit(",", 1)[0] for line in s.splitlines()]  # noqa: E731
    assert strip(first) == strip(second)
    assert run(["selftest", "--suite", "gradients", "--inject-fault", "conv2d_weight"]) == EXIT_FAIL
    assert "FAIL" in capsys.readouterr().out
    assert run(["selftest", "--suite", "gradients"]) == EXIT_OK


def test_synth_writes_files(tmp_path):
    assert run(["synth", "--count", 2, "--layout", "macpi", "--output-dir", tmp_path]) == EXIT_OK
    assert sorted(p.name for p in tmp_path.glob("*.png")) == ["lf00.png", "lf01.png"]
    back = lfio.read_lf(tmp_path / "lf00.png")
    assert back.A == 2 and np.isfinite(back.samples).all()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lfcodec", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("lfcodec ")


def test_rdsweep_from_logs_identical_baseline(tmp_path):
    rows = [(img, 0.05 * k, 20.0 + 3 * k + j) for j, img in enumerate(("Bikes", "Fountain")) for k in range(1, 6)]
    metrics.write_rd_csv(tmp_path / "pro.csv", rows)
    metrics.write_rd_csv(tmp_path / "same.csv", rows)
    assert run(["rdsweep", "--proposed", tmp_path / "pro.csv", "--baseline", f"SAME={tmp_path / 'same.csv'}",
                "--output-dir", tmp_path / "out", "--report", tmp_path / "r.json"]) == EXIT_OK
    with open(tmp_path / "out" / "bd.csv") as fh:
        body = [line.split(",") for line in fh.read().splitlines()[1:]]
    assert [r[0] for r in body] == ["Bikes", "Fountain", "Average"]
    assert all(float(r[2]) == 0.0 and float(r[3]) == 0.0 for r in body)
    assert "Pro. vs. SAME" in (tmp_path / "out" / "bd.txt").read_text()
    assert run(["rdsweep", "--proposed", tmp_path / "pro.csv", "--checkpoint", "x.lft",
                "--output-dir", tmp_path / "o2"]) == EXIT_ARGS
