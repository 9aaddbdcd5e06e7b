import hashlib

import numpy as np
import pytest

from physprior.cli import main


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--investigation", "parametric", "--n-per-class", "6",
                 "--seed", "3", "--out", str(d / "train.padm")]) == 0
    assert main(["gen-data", "--investigation", "parametric", "--n-per-class", "4",
                 "--seed", "4", "--out", str(d / "test.padm")]) == 0
    fast = d / "fast.ini"
    fast.write_text("[sampler]\nn_steps = 16\n[selection]\nrepeats = 2\n")
    return d


def run_twice(data, argv, out_name):
    outs = []
    for k in range(2):
        out = data / f"{k}_{out_name}"
        assert main(argv + ["--out", str(out)]) == 0
        outs.append(out)
    return outs


def test_gen_data_byte_identical(data, tmp_path):
    out = tmp_path / "again.padm"
    assert main(["gen-data", "--investigation", "parametric", "--n-per-class", "6",
                 "--seed", "3", "--out", str(out)]) == 0
    assert sha(out) == sha(data / "train.padm")


@pytest.mark.parametrize("task,extra", [("forward", []), ("inverse-state", []),
                                        ("infer-params", []),
                                        ("partial-params", ["--known", "ax"]),
                                        ("ood-joint", [])])
def test_infer_csv_deterministic(data, task, extra):
    cls = "advection_diffusion" if task == "partial-params" else "advection"
    argv = ["infer", "--dataset", str(data / "train.padm"), "--config", str(data / "fast.ini"),
            "--task", task, "--class", cls, "--instances", "2", "--fraction", "0.3",
            "--test-dataset", str(data / "test.padm")] + extra
    a, b = run_twice(data, argv, f"{task}.csv")
    assert a.read_bytes() == b.read_bytes()
    head = a.read_text().splitlines()[0]
    assert head == "metric,name,class,task,fraction,value,seed,config_hash"


def test_infer_pgm_output(data, tmp_path):
    argv = ["infer", "--dataset", str(data / "train.padm"), "--config", str(data / "fast.ini"),
            "--task", "forward", "--class", "diffusion", "--instances", "1",
            "--pgm-dir", str(tmp_path / "img"), "--out", str(tmp_path / "f.csv")]
    assert main(argv) == 0
    pgms = list((tmp_path / "img").glob("*.pgm"))
    assert len(pgms) == 1
    raw = pgms[0].read_bytes()
    assert raw.startswith(b"P5\n# value = ")
    lines = raw.split(b"\n")
    dims = next(l for l in lines[1:] if not l.startswith(b"#"))
    w, h = map(int, dims.split())
    assert (w, h) == (3 * 32 + 2, 32)
    assert len(raw.split(b"\n255\n", 1)[1]) == w * h


def test_write_pgm_mapping(tmp_path):
    from physprior.cli import write_pgm

    a = np.array([[0.0, 1.0], [2.0, np.nan]])
    lo, hi = write_pgm(tmp_path / "a.pgm", [a])
    assert (lo, hi) == (0.0, 2.0)
    raw = (tmp_path / "a.pgm").read_bytes()
    pix = np.frombuffer(raw[-4:], dtype=np.uint8).reshape(2, 2)
    # rows flipped so the first row is drawn at the bottom; NaN is black
    np.testing.assert_array_equal(pix, [[255, 0], [0, 128]])


def test_calibrate_and_coverage_deterministic(data):
    base = ["--dataset", str(data / "train.padm"), "--config", str(data / "fast.ini")]
    recs = run_twice(data, ["calibrate"] + base + ["--task", "forward", "--class", "diffusion",
                                                   "--n-cal", "3", "--M", "3",
                                                   "--cal-dataset", str(data / "test.padm")],
                     "cal.txt")
    assert recs[0].read_bytes() == recs[1].read_bytes()
    assert "q_hat=" in recs[0].read_text()
    covs = run_twice(data, ["evaluate-coverage"] + base + ["--record", str(recs[0]),
                                                           "--instances", "2"], "cov.csv")
    assert covs[0].read_bytes() == covs[1].read_bytes()


def test_select_model_deterministic(data):
    argv = ["select-model", "--dataset", str(data / "train.padm"), "--config",
            str(data / "fast.ini"), "--true-class", "diffusion", "--instances", "2",
            "--candidates", "diffusion,advection"]
    a, b = run_twice(data, argv, "sel.csv")
    assert a.read_bytes() == b.read_bytes()
    summary = a.with_suffix(".txt").read_text()
    assert "True PDE:" in summary and "Sampled PDE:" in summary


def test_parallel_jobs_match_serial(data):
    argv = ["infer", "--dataset", str(data / "train.padm"), "--config", str(data / "fast.ini"),
            "--task", "forward", "--class", "advection", "--instances", "3", "--fraction", "0.3"]
    assert main(argv + ["--jobs", "1", "--out", str(data / "j1.csv")]) == 0
    assert main(argv + ["--jobs", "2", "--out", str(data / "j2.csv")]) == 0
    assert (data / "j1.csv").read_bytes() == (data / "j2.csv").read_bytes()


def test_exit_codes(data, tmp_path):
    out = str(tmp_path / "x")
    assert main(["infer", "--dataset", str(data / "train.padm"), "--task", "teleport",
                 "--class", "diffusion", "--out", out]) == 2
    assert main(["gen-data", "--n-per-class", "0", "--out", out]) == 2
    bad_cfg = tmp_path / "bad.ini"
    bad_cfg.write_text("[sampler]\nwarp = 9\n")
    assert main(["gen-data", "--config", str(bad_cfg), "--out", out]) == 2
    junk = tmp_path / "junk.padm"
    junk.write_bytes(b"NOPE" + bytes(20))
    assert main(["infer", "--dataset", str(junk), "--task", "forward", "--class", "diffusion",
                 "--out", out]) == 3
    assert main(["infer", "--dataset", str(tmp_path / "missing.padm"), "--task", "forward",
                 "--class", "diffusion", "--out", out]) == 3
    assert main(["infer", "--dataset", str(data / "train.padm"), "--task", "forward",
                 "--class", "burgers_u", "--out", out]) == 2
