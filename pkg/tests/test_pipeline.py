"""End-to-end pipeline behavior at smoke scale: outputs, determinism,
persistence round trips and the CLI surface."""

import json
import os

import numpy as np
import pytest

from seguq import cli, persist
from seguq.config import DEFAULT_CONFIG, load_config, validate
from seguq.errors import ConfigError, StageError
from seguq.laplace import fit
from seguq.network import build_unet
from seguq.pipeline import run_pipeline

SMOKE_OVERRIDES = {
    "seed": 99,
    "data": {"n": 12},
    "train": {"epochs": 2, "batch_size": 4, "logit_samples": 4},
    "laplace": {"posterior_samples": 6, "logit_samples": 4},
    "eval": {"ensemble_size": 2, "heatmaps": 1},
}


def smoke_config(tmp_path, **extra):
    path = tmp_path / "cfg.json"
    cfg = json.loads(json.dumps(SMOKE_OVERRIDES))
    for key, value in extra.items():
        cfg.setdefault(key, {}).update(value)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("smoke")
    cfg_path = smoke_config(tmp)
    out = str(tmp / "run")
    rc = cli.main(["all", "--config", cfg_path, "--out", out])
    assert rc == 0
    return out


class TestPipelineOutputs:
    def test_expected_files_exist(self, smoke_run):
        for name in ("dataset.npz", "results.csv", "summary.json",
                     "ratios.json", "manifest.json", "dice.json",
                     "training_losses.json"):
            assert os.path.exists(os.path.join(smoke_run, name)), name
        assert os.path.isdir(os.path.join(smoke_run, "models"))
        assert os.path.isdir(os.path.join(smoke_run, "posteriors"))

    def test_at_least_one_auroc_per_measure(self, smoke_run):
        summary = persist.read_json(os.path.join(smoke_run, "summary.json"))
        measures = {"predictive_entropy", "expected_entropy",
                    "mutual_information", "pixel_variance", "epkl"}
        seen = set()
        for model, per_measure in summary["auroc"].items():
            for measure, per_agg in per_measure.items():
                for agg, entry in per_agg.items():
                    if isinstance(entry, dict) and "pooled" in entry:
                        seen.add(measure)
        assert measures <= seen

    def test_unet_epkl_undefined_not_zero(self, smoke_run):
        records = persist.read_results_csv(
            os.path.join(smoke_run, "results.csv"))
        unet_epkl = [r for r in records
                     if r.model == "unet_laplace" and r.measure == "epkl"]
        assert unet_epkl
        assert all(r.score is None for r in unet_epkl)
        summary = persist.read_json(os.path.join(smoke_run, "summary.json"))
        assert summary["auroc"]["unet_laplace"]["epkl"]["none"] == "undefined"
        ratios = persist.read_json(os.path.join(smoke_run, "ratios.json"))
        assert ratios["unet_laplace"] == "undefined"

    def test_other_models_have_defined_epkl(self, smoke_run):
        records = persist.read_results_csv(
            os.path.join(smoke_run, "results.csv"))
        lsn_epkl = [r for r in records
                    if r.model == "lsn" and r.measure == "epkl"]
        assert lsn_epkl and all(r.score is not None for r in lsn_epkl)
        assert all(r.aggregation == "none" for r in lsn_epkl)

    def test_heatmaps_written_with_sidecars(self, smoke_run):
        heat = os.path.join(smoke_run, "heatmaps")
        pgms = sorted(f for f in os.listdir(heat) if f.endswith(".pgm"))
        assert pgms
        for name in pgms:
            sidecar = os.path.join(heat, name + ".json")
            assert os.path.exists(sidecar)
            meta = persist.read_json(sidecar)
            assert set(meta) == {"min", "max"}
            with open(os.path.join(heat, name), "rb") as fh:
                assert fh.readline() == b"P5\n"

    def test_manifest_records_config_seed_version_and_status(self, smoke_run):
        manifest = persist.read_json(os.path.join(smoke_run, "manifest.json"))
        assert manifest["seed"] == 99
        assert manifest["status"] == "complete"
        assert manifest["version"]
        assert manifest["config"]["data"]["n"] == 12

    def test_split_names_cover_id_and_all_ood_kinds(self, smoke_run):
        records = persist.read_results_csv(
            os.path.join(smoke_run, "results.csv"))
        splits = {r.split for r in records}
        assert "ID" in splits
        for kind in ("noise", "blur", "spike", "ghosting"):
            assert any(s.startswith(f"OOD:{kind}:") for s in splits)


class TestDeterminism:
    def test_rerun_reproduces_results_csv_byte_identically(self, tmp_path):
        cfg_path = smoke_config(tmp_path)
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert cli.main(["all", "--config", cfg_path, "--out", out1]) == 0
        assert cli.main(["all", "--config", cfg_path, "--out", out2]) == 0
        with open(os.path.join(out1, "results.csv"), "rb") as fh:
            data1 = fh.read()
        with open(os.path.join(out2, "results.csv"), "rb") as fh:
            data2 = fh.read()
        assert data1 == data2


class TestPersistence:
    def test_model_checkpoint_round_trip(self, tmp_path):
        net = build_unet([2, 4], rank=1, image_hw=(8, 8), seed=7)
        arch = {"channels": [2, 4], "rank": 1, "in_channels": 1,
                "image_hw": [8, 8], "variance_head": True}
        path = str(tmp_path / "model.npz")
        persist.save_model(path, net, arch, seed=7)
        loaded, manifest = persist.load_model(path)
        np.testing.assert_array_equal(loaded.theta, net.theta)
        assert manifest["arch_hash"] == persist.arch_hash(arch)
        assert manifest["seed"] == 7
        x = np.random.default_rng(0).random((1, 8, 8))
        np.testing.assert_array_equal(loaded.forward(x)[-1],
                                      net.forward(x)[-1])

    def test_posterior_round_trip(self, tmp_path):
        net = build_unet([2, 4], rank=1, image_hw=(8, 8), seed=8)
        images = np.random.default_rng(1).random((3, 1, 8, 8))
        post = fit(net, images, 0.05)
        path = str(tmp_path / "post.npz")
        persist.save_posterior(path, post, {"channels": [2, 4]}, seed=8)
        loaded, manifest = persist.load_posterior(path)
        np.testing.assert_array_equal(loaded.map_weights, post.map_weights)
        np.testing.assert_array_equal(loaded.precision, post.precision)
        assert loaded.prior_precision == 0.05

    def test_pgm_linear_scaling(self, tmp_path):
        m = np.array([[0.0, 1.0], [2.0, 4.0]])
        path = str(tmp_path / "map.pgm")
        persist.write_pgm(path, m)
        with open(path, "rb") as fh:
            assert fh.readline() == b"P5\n"
            assert fh.readline() == b"2 2\n"
            assert fh.readline() == b"255\n"
            pixels = np.frombuffer(fh.read(), dtype=np.uint8)
        np.testing.assert_array_equal(pixels, [0, 64, 128, 255])
        meta = persist.read_json(path + ".json")
        assert meta == {"min": 0.0, "max": 4.0}

    def test_undefined_score_round_trips_through_csv(self, tmp_path):
        path = str(tmp_path / "r.csv")
        records = [persist.EvalRecord("img_000", "ID", "m", "epkl", "none",
                                      None),
                   persist.EvalRecord("img_001", "ID", "m", "epkl", "none",
                                      1.25)]
        persist.write_results_csv(path, records)
        loaded = persist.read_results_csv(path)
        assert loaded[0].score is None
        assert loaded[1].score == 1.25


class TestConfig:
    def test_defaults_are_valid(self):
        validate(json.loads(json.dumps(DEFAULT_CONFIG)))

    def test_seed_override(self, tmp_path):
        cfg_path = smoke_config(tmp_path)
        cfg = load_config(cfg_path, seed=123)
        assert cfg["seed"] == 123

    def test_unknown_corruption_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"eval": {"ood": {"fog": 1.0}}}))
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_unknown_model_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"eval": {"models": ["mc_dropout"]}}))
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_small_dataset_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"data": {"n": 5}}))
        with pytest.raises(ConfigError):
            load_config(str(path))


class TestStageErrors:
    def test_failure_names_stage_and_flushes_manifest(self, tmp_path):
        cfg = load_config(None)
        cfg["data"]["n"] = 12
        cfg["data"]["image_size"] = 30    # not divisible by 4 -> train fails
        cfg["train"]["epochs"] = 1
        out = str(tmp_path / "fail")
        with pytest.raises(StageError) as exc:
            run_pipeline(cfg, out)
        assert exc.value.stage == "train"
        manifest = persist.read_json(os.path.join(out, "manifest.json"))
        assert manifest["status"] == "failed:train"
        # the generate stage's partial results stay on disk
        assert os.path.exists(os.path.join(out, "dataset.npz"))


class TestCli:
    def test_stagewise_invocation_matches_all(self, tmp_path):
        cfg_path = smoke_config(tmp_path)
        out = str(tmp_path / "staged")
        for command in ("generate", "train", "fit-laplace", "evaluate",
                        "report"):
            assert cli.main([command, "--config", cfg_path,
                             "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "summary.json"))

    def test_bench_hessian_cli_writes_json(self, tmp_path):
        out = str(tmp_path / "bench")
        rc = cli.main(["bench-hessian", "--sizes", "8,16", "--out", out])
        assert rc == 0
        data = persist.read_json(os.path.join(out, "bench.json"))
        assert [row["size"] for row in data["rows"]] == [8, 16]
        assert "ratios" in data
