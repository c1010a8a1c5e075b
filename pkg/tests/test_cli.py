import json

import numpy as np
import pytest

from nnd.cli import main
from nnd.denoise import NeuralDenoiser
from nnd.latent import Field, read_nndf, write_nndf
from nnd.mip import read_pgm

MIX = json.dumps({"kind": "mixture", "weights": [0.5, 0.5], "means": [-2, 0], "stds": [0.5, 0.5]})
FAST = ["--override", "schedule.T=100", "--override", "schedule.sigma_T=5",
        "--override", "dims=[4,4,4]", "--override", 'channels=["x"]', "--override", f"denoiser={MIX}"]


def test_generate_twice_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["generate", "--seed", "7", "--out", str(tmp_path / d)] + FAST) == 0
    a = (tmp_path / "a" / "sample_000.nndf").read_bytes()
    assert a == (tmp_path / "b" / "sample_000.nndf").read_bytes()
    assert (tmp_path / "a" / "trace_000.csv").read_bytes() == (tmp_path / "b" / "trace_000.csv").read_bytes()


def test_echoed_config_reproduces(tmp_path):
    assert main(["generate", "--seed", "3", "--out", str(tmp_path / "a"), "--count", "2"] + FAST) == 0
    echoed = tmp_path / "a" / "resolved_config.json"
    assert json.loads(echoed.read_text())["seed"] == 3
    assert main(["generate", "--config", str(echoed), "--out", str(tmp_path / "b")]) == 0
    for k in (0, 1):
        name = f"sample_{k:03d}.nndf"
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_count_with_threads_matches_serial(tmp_path, monkeypatch):
    assert main(["generate", "--out", str(tmp_path / "s"), "--count", "3"] + FAST) == 0
    monkeypatch.setenv("NND_THREADS", "3")
    assert main(["generate", "--out", str(tmp_path / "p"), "--count", "3"] + FAST) == 0
    for k in range(3):
        name = f"sample_{k:03d}.nndf"
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_generated_field_positive(tmp_path):
    main(["generate", "--out", str(tmp_path)] + FAST)
    f = read_nndf(tmp_path / "sample_000.nndf")
    assert isinstance(f, Field) and f.values.min() > 0


def test_validation_exit_code(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--override", "init=direct"] + FAST) == 2
    assert main(["generate", "--out", str(tmp_path)] + FAST + ["--override", "schedule.T=3"]) == 2


def test_divergence_exit_code(tmp_path):
    # a run too short to contract the sigma_T = 100 initial spread overflows exp
    args = ["generate", "--out", str(tmp_path), "--override", "schedule.T=10",
            "--override", 'channels=["x"]', "--override", "dims=[4,4,4]",
            "--override", f"denoiser={MIX}", "--override", "divergence_bound=50"]
    assert main(args) == 3


def test_model_eps_mismatch_is_error(tmp_path):
    net = NeuralDenoiser(("x",), seed=0, eps=1e-3)
    net.save(tmp_path / "m.nndm")
    common = ["generate", "--out", str(tmp_path / "o"), "--override", "schedule.T=100", "--override", "schedule.sigma_T=1",
              "--override", "dims=[4,4,4]",
              "--override", f"denoiser={json.dumps({'kind': 'neural', 'model': str(tmp_path / 'm.nndm')})}"]
    assert main(common + ["--override", "eps=0.01"]) == 2
    assert main(common + ["--override", 'channels=["y"]']) == 2
    # when not given explicitly, eps and channels come from the model
    assert main(common) == 0
    echoed = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
    assert echoed["eps"] == 1e-3 and echoed["channels"] == ["x"]


def test_make_dataset_and_train(tmp_path):
    ds = tmp_path / "ds"
    assert main(["make-dataset", "--out", str(ds), "--override", "dataset.n_scenes=6",
                 "--override", "dims=[4,4,4]"]) == 0
    assert (ds / "manifest.json").exists() and (ds / "resolved_config.json").exists()
    out = tmp_path / "tr"
    assert main(["train", "--out", str(out), "--override", f"dataset.path={json.dumps(str(ds))}",
                 "--override", "train.steps=4", "--override", "train.batch=2",
                 "--override", "train.val_scenes=2", "--override", "train.eval_every=2"]) == 0
    net = NeuralDenoiser.load(out / "model.nndm")
    assert net.channel_names == ("lwc", "re")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 4 and "1.0" in summary["mse_over_identity"]


def test_invert_from_truth(tmp_path):
    truth = tmp_path / "truth.nndf"
    write_nndf(truth, Field(np.full((4, 4, 4, 1), 0.5), ("x",)))
    out = tmp_path / "inv"
    assert main(["invert", "--out", str(out), "--override", f"measurement.truth={json.dumps(str(truth))}",
                 "--override", 'forward={"kind": "projection", "axis": "z"}'] + FAST) == 0
    assert (out / "measurement.json").exists() and (out / "measurement.f64").exists()
    assert read_nndf(out / "sample_000.nndf").values.min() > 0


def test_invert_without_measurement(tmp_path):
    assert main(["invert", "--out", str(tmp_path)] + FAST) == 2


def test_render_mip(tmp_path):
    v = np.zeros((3, 3, 3, 1))
    v[1, 2, 0, 0] = 4.0
    write_nndf(tmp_path / "f.nndf", Field(v, ("lwc",)))
    assert main(["render-mip", str(tmp_path / "f.nndf"), "--out", str(tmp_path / "m")]) == 0
    img = read_pgm(tmp_path / "m" / "f_lwc_z.pgm")
    assert img[2, 0] == 65535 and np.count_nonzero(img) == 1
    side = json.loads((tmp_path / "m" / "f_lwc_z.json").read_text())
    assert side["max"] == 4.0


def test_render_mip_errors(tmp_path):
    write_nndf(tmp_path / "f.nndf", Field(np.ones((2, 2, 2, 1)), ("lwc",)))
    assert main(["render-mip", str(tmp_path / "f.nndf"), "--out", str(tmp_path), "--override", "mip.axis=w"]) == 2
    assert main(["render-mip", str(tmp_path / "f.nndf"), "--out", str(tmp_path),
                 "--override", 'mip.channels=["re"]']) == 2
    (tmp_path / "bad.nndf").write_bytes(b"garbage")
    assert main(["render-mip", str(tmp_path / "bad.nndf"), "--out", str(tmp_path)]) == 2


def test_trace_plot(tmp_path):
    main(["generate", "--out", str(tmp_path / "g")] + FAST)
    assert main(["trace-plot", str(tmp_path / "g" / "trace_000.csv"), "--out", str(tmp_path / "p")]) == 0
    lines = (tmp_path / "p" / "trace_000_long.csv").read_text().splitlines()
    assert lines[0] == "t,series,value"
    assert any(line.startswith("100,log10_sigma,") for line in lines)


def test_oracle_check_passes(tmp_path, capsys):
    assert main(["oracle-check", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    assert (tmp_path / "oracle_check.csv").exists()
