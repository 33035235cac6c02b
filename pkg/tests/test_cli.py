import json

import pytest

from chaintrace import cli
from chaintrace.jpeg_meta import ANNEX_K_LUMA, QuantTable, dqt_segment
from chaintrace.labels import SYNTHETIC_TAXONOMY


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> make-patches -> train-stage1 -> train-stage2 on a tiny budget."""
    root = tmp_path_factory.mktemp("cli")
    assert cli.main(["simulate", "--out", str(root / "data"), "--images", "6", "--size", "96",
                     "--seed", "3"]) == 0
    cfg = {"taxonomy": "synthetic", "patch_size": 64, "train_patches": 8, "test_patches": 4,
           "test_fraction": 0.34, "stage1": {"total_epochs": 1}, "stage2": {"total_epochs": 1},
           "forest": {"n_trees": 10}, "bn_recalibration_samples": 32,
           "paths": {"manifest": "data/manifest.csv", "train_cache": "train.pset",
                     "test_cache": "test.pset", "bundle": "m.bundle", "out_dir": "report"}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert cli.main(["make-patches", "--config", str(root / "cfg.json")]) == 0
    assert cli.main(["train-stage1", "--config", str(root / "cfg.json")]) == 0
    assert cli.main(["train-stage2", "--config", str(root / "cfg.json"), "--primary", "C"]) == 0
    return root


def test_parse_dqt(capsys, tmp_path):
    stream = b"\xff\xd8" + dqt_segment([QuantTable(0, 8, ANNEX_K_LUMA)]).to_bytes() + \
        b"\xff\xda\x00\x08\x01\x01\x00\x00\x3f\x00\xff\xd9"
    (tmp_path / "a.jpg").write_bytes(stream)
    code, out, _ = run(capsys, "parse-dqt", tmp_path / "a.jpg", "--compact")
    assert code == 0
    doc = json.loads(out)
    assert doc["q_feature"] == [11, 12, 14, 12, 10, 16, 14, 13, 14]
    assert doc["tables"][0]["values"][0] == [16, 11, 10, 16, 24, 40, 51, 61]


def test_parse_dqt_data_error(capsys, tmp_path):
    (tmp_path / "b.jpg").write_bytes(b"not a jpeg")
    code, _, err = run(capsys, "parse-dqt", tmp_path / "b.jpg")
    assert code == 2 and "data error" in err
    code, _, _ = run(capsys, "parse-dqt", tmp_path / "missing.jpg")
    assert code == 2


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "simulate")[0] == 1
    assert run(capsys, "classify", "--bundle", "x")[0] == 1


def test_simulate_outputs(pipeline):
    data = pipeline / "data"
    lines = (data / "manifest.csv").read_text().splitlines()
    assert lines[0] == "id,pixels,jpeg,chain,group"
    assert len(lines) == 1 + 6 * len(SYNTHETIC_TAXONOMY.valid_chains)
    assert json.loads((data / "taxonomy.json").read_text())["name"] == "synthetic"
    assert set(json.loads((data / "profiles.json").read_text())) == {"A", "B", "C"}


def test_simulate_rejects_unknown_chain(capsys, tmp_path):
    code, _, _ = run(capsys, "simulate", "--out", tmp_path, "--images", "1", "--chains", "xQ")
    assert code == 2


def test_train_stage2_without_head(capsys, pipeline):
    code, _, err = run(capsys, "train-stage2", "--config", pipeline / "cfg.json", "--primary", "A")
    assert code == 3 and "model error" in err


def test_missing_bundle_is_data_error(capsys, tmp_path):
    code, _, _ = run(capsys, "classify", "--bundle", tmp_path / "none.bundle", "x.pgm")
    assert code == 2


def test_corrupt_bundle_is_model_error(capsys, tmp_path):
    (tmp_path / "bad.bundle").write_bytes(b"PMSI\x09\x00\x00\x00")
    code, _, _ = run(capsys, "classify", "--bundle", tmp_path / "bad.bundle", "x.pgm")
    assert code == 3


def test_missing_cache(capsys, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"paths": {"train_cache": "nope.pset",
                                                             "manifest": "m.csv", "bundle": "b"}}))
    code, _, err = run(capsys, "train-stage1", "--config", tmp_path / "cfg.json")
    assert code == 2 and "make-patches" in err


def test_invalid_config(capsys, tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "train-stage1", "--config", tmp_path / "cfg.json")[0] == 1


def test_bundle_sidecar_log(pipeline):
    log = (pipeline / "m.bundle.log").read_text().splitlines()
    assert "train-stage1" in log[0] and "train-stage2 C" in log[1]


def test_evaluate(capsys, pipeline):
    code, out, _ = run(capsys, "evaluate", "--config", pipeline / "cfg.json")
    assert code == 0
    summary = json.loads(out)
    assert abs(summary["accuracy"] - summary["accuracy_weighted_recall"]) < 1e-9
    assert (pipeline / "report" / "table4_confusion.csv").exists()
    code, out, _ = run(capsys, "evaluate", "--config", pipeline / "cfg.json", "--balance", "primary",
                       "--out", pipeline / "report2")
    assert code == 0 and json.loads(out)["balance"] == "primary"


def test_classify(capsys, pipeline):
    images = sorted((pipeline / "data" / "images").glob("scene0000*_aC.pgm"))[:2]
    code, out, err = run(capsys, "classify", "--bundle", pipeline / "m.bundle", "--patches", "4",
                         *images)
    assert code == 0
    lines = [json.loads(x) for x in out.splitlines()]
    assert [x["id"] for x in lines] == [p.stem for p in images]
    for x in lines:
        assert x["chain"] in SYNTHETIC_TAXONOMY.valid_chains
        assert 0 < x["confidence"] <= 1 and x["patches"] == 4
        assert "status" not in x


def test_classify_without_metadata(capsys, pipeline, tmp_path):
    src = next((pipeline / "data" / "images").glob("*_natB.pgm"))
    (tmp_path / "lonely.pgm").write_bytes(src.read_bytes())
    code, out, err = run(capsys, "classify", "--bundle", pipeline / "m.bundle", "--patches", "2",
                         tmp_path / "lonely.pgm")
    assert code == 0
    line = json.loads(out)
    assert line["status"] == "no-metadata" and line["chain"] in SYNTHETIC_TAXONOMY.valid_chains
    assert "warning" in err


def test_classify_by_manifest_id(capsys, pipeline):
    code, out, _ = run(capsys, "classify", "--bundle", pipeline / "m.bundle", "--patches", "2",
                       "--manifest", pipeline / "data" / "manifest.csv", "scene00001_bC")
    assert code == 0 and json.loads(out)["id"] == "scene00001_bC"


def test_classify_too_small(capsys, pipeline, tmp_path):
    from chaintrace.chain_sim import write_pgm
    import numpy as np
    write_pgm(tmp_path / "tiny.pgm", np.zeros((20, 20), np.uint8))
    code, out, _ = run(capsys, "classify", "--bundle", pipeline / "m.bundle", tmp_path / "tiny.pgm")
    assert code == 0 and json.loads(out)["status"] == "error"
