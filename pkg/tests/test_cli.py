import json

import numpy as np
import pytest

from dinat_ir.checkpoint import save_checkpoint
from dinat_ir.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from dinat_ir.data import load_image, save_image
from dinat_ir.model import ModelConfig, build_model


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(d), "--count", "2", "--size", "16", "--seed", "3"]) == EXIT_OK
    return d


@pytest.fixture
def identity_ckpt(tmp_path):
    m = build_model(ModelConfig.micro(), seed=0)
    m.output.weight.data[:] = 0
    path = tmp_path / "id.ckpt"
    save_checkpoint(m, path)
    return path


def test_gen_data_files(dataset):
    assert len(list(dataset.glob("*.png"))) == 4
    assert (dataset / "manifest.json").exists()


def test_gen_data_replay(tmp_path, dataset):
    main(["gen-data", "--out", str(tmp_path), "--count", "2", "--size", "16", "--seed", "3"])
    for f in dataset.iterdir():
        assert f.read_bytes() == (tmp_path / f.name).read_bytes()


def test_gen_data_bad_size(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--size", "20"]) == EXIT_USAGE


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as e:
        main(["param-count", "--bogus"])
    assert e.value.code == 2


def test_resolved_config_echoed(capsys):
    main(["param-count", "--preset", "micro"])
    assert "[param-count]" in capsys.readouterr().err


def test_train_and_eval(tmp_path, dataset, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": {"preset": "micro"},
                               "train": {"iters": 4, "batch": 1, "patch_size": 16, "eval_every": 2}}))
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", "--data", str(dataset), "--config", str(cfg), "--out", str(ckpt), "--lr", "1e-3"]) == EXIT_OK
    err = capsys.readouterr().err
    assert '"lr_init": 0.001' in err
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert rows[0] == "iter,lr,loss,eval_psnr" and len(rows) == 5
    outs = []
    for _ in range(2):
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(dataset), "--json"]) == EXIT_OK
        outs.append(json.loads(capsys.readouterr().out))
    assert outs[0] == outs[1] and set(outs[0]) == {"psnr", "ssim", "n"}


def test_train_missing_manifest(tmp_path):
    rc = main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "m.ckpt"), "--iters", "1", "--patch", "16"])
    assert rc == EXIT_DATA


def test_eval_identity_is_baseline(identity_ckpt, dataset, capsys):
    from dinat_ir.data import load_pairs
    from dinat_ir.train import baseline_psnr
    main(["eval", "--ckpt", str(identity_ckpt), "--data", str(dataset), "--json"])
    res = json.loads(capsys.readouterr().out)
    assert res["psnr"] == pytest.approx(baseline_psnr(load_pairs(dataset)), abs=1e-4)


def test_eval_empty_set(identity_ckpt, tmp_path):
    (tmp_path / "manifest.json").write_text('{"pairs": []}')
    assert main(["eval", "--ckpt", str(identity_ckpt), "--data", str(tmp_path)]) == EXIT_DATA


def test_infer(identity_ckpt, tmp_path):
    src = tmp_path / "in.png"
    save_image(np.random.default_rng(0).random((3, 13, 22)), src)
    outs = []
    for name in ("a.png", "b.png"):
        assert main(["infer", "--ckpt", str(identity_ckpt), "--input", str(src), "--output", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert load_image(tmp_path / "a.png").shape == (3, 13, 22)


def test_infer_non_png(identity_ckpt, tmp_path):
    bad = tmp_path / "in.jpg"
    bad.write_bytes(b"\xff\xd8\xff\xe0 not a png")
    assert main(["infer", "--ckpt", str(identity_ckpt), "--input", str(bad), "--output", str(tmp_path / "o.png")]) == EXIT_DATA


def test_grad_check_and_oracle(capsys):
    assert main(["grad-check", "--target", "ops", "--seed", "0"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "conv2d" in out and "max_rel_err" in out
    assert main(["oracle-check", "--seed", "0"]) == EXIT_OK


def test_grad_check_failure_exit(monkeypatch):
    from dinat_ir import verify
    from dinat_ir.gradcheck import GradCheckReport
    monkeypatch.setitem(verify.SUITES, "ops", lambda seed: {"broken": GradCheckReport(1e-5, {"x": 0.5}, {"x": 1})})
    assert main(["grad-check", "--target", "ops"]) == EXIT_NUMERIC


def test_param_count_json(capsys):
    assert main(["param-count", "--preset", "ablation", "--json"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["params"] == 2_999_848 and abs(out["deviation_pct"]) < 15


def test_param_count_full_reports_deviation(capsys):
    main(["param-count", "--preset", "full"])
    assert "25972720" in capsys.readouterr().out


def test_bench_runs(capsys):
    assert main(["bench", "--op", "dina", "--size", "16x16", "--k", "3", "--dilation", "2", "--iters", "2"]) == EXIT_OK
    assert "median" in capsys.readouterr().out


def test_bad_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    assert main(["param-count", "--config", str(p)]) == EXIT_USAGE
