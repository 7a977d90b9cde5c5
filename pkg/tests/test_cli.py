import json
import os

import numpy as np
import pytest

import srflvm.cli as cli
from srflvm.errors import NumericDegeneracyError


def write_config(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh)
    return str(path)


def generate_config(out, **data):
    base = {"type": "scurve", "n_obs": 20, "n_dims": 4, "seed": 1,
            "output_dir": str(out)}
    base.update(data)
    return {"data": base}


def fit_config(out, y_path, **extra):
    cfg = {
        "data": {"y": str(y_path), "output_dir": str(out)},
        "model": {"n_latent": 2, "n_features": 8, "n_clusters": 2},
        "optimizer": {"outer_iters": 2, "likelihood_block_steps": 2,
                      "z_block_steps": 1, "mc_samples": 2,
                      "convergence_tol": 0.0, "seed": 0},
    }
    for section, values in extra.items():
        cfg.setdefault(section, {}).update(values)
    return cfg


def run(*args):
    return cli.main(list(args))


@pytest.fixture
def generated(tmp_path):
    cfg = write_config(tmp_path / "gen.json",
                       generate_config(tmp_path, mask_fraction=0.2))
    assert run("generate", "--config", cfg) == 0
    return tmp_path


class TestGenerate:
    def test_scurve_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", generate_config(tmp_path))
        assert run("generate", "--config", cfg) == 0
        for name in ("X_true.csv", "Y.csv", "K_true.csv"):
            assert (tmp_path / name).exists()
        assert not (tmp_path / "mask.csv").exists()

    def test_mask_written_when_requested(self, generated):
        mask = np.loadtxt(generated / "mask.csv", delimiter=",")
        assert set(np.unique(mask)) <= {0.0, 1.0}
        assert int((mask == 0).sum()) == int(np.floor(0.2 * 20 * 4))

    def test_clusters_write_labels(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", generate_config(
            tmp_path, type="clusters", n_clusters=2, family="bernoulli"))
        assert run("generate", "--config", cfg) == 0
        labels = np.loadtxt(tmp_path / "labels.csv", delimiter=",")
        assert set(np.unique(labels)) == {0.0, 1.0}

    def test_unknown_data_type(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", generate_config(
            tmp_path, type="spiral"))
        assert run("generate", "--config", cfg) == 2

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            cfg = write_config(tmp_path / f"gen_{out.name}.json",
                               generate_config(out))
            assert run("generate", "--config", cfg) == 0
        assert (a / "Y.csv").read_bytes() == (b / "Y.csv").read_bytes()


class TestConfigErrors:
    def test_unknown_top_level_key(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"daat": {}})
        assert run("generate", "--config", cfg) == 2

    def test_unknown_section_key(self, tmp_path):
        cfg = write_config(tmp_path / "c.json",
                           {"model": {"n_latent": 2, "n_laten": 3}})
        assert run("fit", "--config", cfg) == 2

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        assert run("generate", "--config", str(path)) == 2

    def test_missing_config_file(self, tmp_path):
        assert run("generate", "--config", str(tmp_path / "nope.json")) == 2

    def test_non_object_root(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("[1, 2]")
        assert run("generate", "--config", str(cfg)) == 2

    def test_fit_requires_y(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"data": {}})
        assert run("fit", "--config", cfg) == 2

    def test_bad_seed_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SRFLVM_SEED", "not-a-number")
        cfg = write_config(tmp_path / "gen.json", generate_config(tmp_path))
        assert run("generate", "--config", cfg) == 2


class TestFit:
    def test_outputs_and_stream(self, generated, capsys):
        cfg = write_config(generated / "fit.json",
                           fit_config(generated, generated / "Y.csv"))
        assert run("fit", "--config", cfg) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l]
        assert len(lines) == 2
        for i, line in enumerate(lines):
            it, elbo, sec = line.split(",")
            assert int(it) == i
            assert np.isfinite(float(elbo))
            assert float(sec) >= 0.0
        for name in ("latents.csv", "state.json", "report.json"):
            assert (generated / name).exists()
        report = json.loads((generated / "report.json").read_text())
        assert len(report["elbo_trace"]) == 2
        latents = np.loadtxt(generated / "latents.csv", delimiter=",")
        assert latents.shape == (20, 2)

    def test_worker_count_does_not_change_bytes(self, generated):
        outs = {}
        for workers in ("1", "4"):
            out = generated / f"w{workers}"
            cfg = write_config(generated / f"fit{workers}.json",
                               fit_config(out, generated / "Y.csv"))
            assert run("fit", "--config", cfg, "--workers", workers) == 0
            outs[workers] = (out / "latents.csv").read_bytes()
        assert outs["1"] == outs["4"]

    def test_seed_env_override_changes_result(self, generated, monkeypatch):
        out_a, out_b = generated / "sa", generated / "sb"
        cfg_a = write_config(generated / "fa.json",
                             fit_config(out_a, generated / "Y.csv"))
        assert run("fit", "--config", cfg_a) == 0
        monkeypatch.setenv("SRFLVM_SEED", "123")
        cfg_b = write_config(generated / "fb.json",
                             fit_config(out_b, generated / "Y.csv"))
        assert run("fit", "--config", cfg_b) == 0
        assert (out_a / "latents.csv").read_bytes() \
            != (out_b / "latents.csv").read_bytes()

    def test_checkpoint_resume_matches_straight_run(self, generated):
        y = generated / "Y.csv"
        straight = generated / "straight"
        cfg = write_config(generated / "f1.json", fit_config(
            straight, y, optimizer={"outer_iters": 4}))
        assert run("fit", "--config", cfg) == 0

        resumed = generated / "resumed"
        ck = str(generated / "ck.json")
        cfg_short = write_config(generated / "f2.json", fit_config(
            resumed, y, optimizer={"outer_iters": 2}))
        assert run("fit", "--config", cfg_short, "--checkpoint", ck) == 0
        cfg_long = write_config(generated / "f3.json", fit_config(
            resumed, y, optimizer={"outer_iters": 4}))
        assert run("fit", "--config", cfg_long, "--checkpoint", ck) == 0
        assert (straight / "latents.csv").read_bytes() \
            == (resumed / "latents.csv").read_bytes()

    def test_mask_shape_mismatch(self, generated, tmp_path):
        bad_mask = tmp_path / "m.csv"
        np.savetxt(bad_mask, np.ones((3, 3)), delimiter=",")
        cfg = write_config(generated / "f.json", fit_config(
            generated, generated / "Y.csv", data={"mask": str(bad_mask)}))
        assert run("fit", "--config", cfg) == 2


class TestImpute:
    def fit_masked(self, root):
        cfg = write_config(root / "fit.json", fit_config(
            root, root / "Y.csv", data={"mask": str(root / "mask.csv")}))
        assert run("fit", "--config", cfg) == 0

    def test_fill_and_mse(self, generated):
        self.fit_masked(generated)
        cfg = write_config(generated / "imp.json", {
            "data": {"y": str(generated / "Y.csv"),
                     "mask": str(generated / "mask.csv"),
                     "state": str(generated / "state.json"),
                     "y_true": str(generated / "Y.csv"),
                     "output_dir": str(generated)},
            "model": {"n_latent": 2, "n_features": 8, "n_clusters": 2},
        })
        assert run("impute", "--config", cfg) == 0
        imputed = np.loadtxt(generated / "Y_imputed.csv", delimiter=",")
        y = np.loadtxt(generated / "Y.csv", delimiter=",")
        mask = np.loadtxt(generated / "mask.csv", delimiter=",") > 0.5
        assert np.array_equal(imputed[mask], y[mask])
        assert not np.array_equal(imputed[~mask], y[~mask])
        mse = json.loads((generated / "mse.json").read_text())
        assert np.isfinite(mse["imputation_mse"])

    def test_fully_observed_is_identity_without_state(self, generated):
        cfg = write_config(generated / "imp.json", {
            "data": {"y": str(generated / "Y.csv"),
                     "output_dir": str(generated / "full")},
        })
        assert run("impute", "--config", cfg) == 0
        imputed = np.loadtxt(generated / "full" / "Y_imputed.csv", delimiter=",")
        assert np.allclose(imputed, np.loadtxt(generated / "Y.csv", delimiter=","))

    def test_masked_data_requires_state(self, generated):
        cfg = write_config(generated / "imp.json", {
            "data": {"y": str(generated / "Y.csv"),
                     "mask": str(generated / "mask.csv"),
                     "output_dir": str(generated)},
        })
        assert run("impute", "--config", cfg) == 2


class TestEval:
    def fit_plain(self, root):
        cfg = write_config(root / "fit.json",
                           fit_config(root, root / "Y.csv"))
        assert run("fit", "--config", cfg) == 0

    def test_procrustes_and_kernel_metrics(self, generated):
        self.fit_plain(generated)
        cfg = write_config(generated / "eval.json_cfg", {
            "data": {"latents": str(generated / "latents.csv"),
                     "x_true": str(generated / "X_true.csv"),
                     "k_true": str(generated / "K_true.csv"),
                     "state": str(generated / "state.json"),
                     "output_dir": str(generated)},
            "model": {"n_latent": 2, "n_features": 8, "n_clusters": 2},
        })
        assert run("eval", "--config", cfg) == 0
        report = json.loads((generated / "eval.json").read_text())
        assert 0.0 <= report["procrustes_disparity"] <= 1.0
        assert report["kernel_frobenius_rel_err"] > 0.0
        assert report["imputation_mse"] is None

    def test_knn_metric_with_labels(self, tmp_path):
        cfg = write_config(tmp_path / "gen.json", generate_config(
            tmp_path, type="clusters", n_obs=40, n_clusters=2,
            family="bernoulli"))
        assert run("generate", "--config", cfg) == 0
        cfg = write_config(tmp_path / "ev.json", {
            "data": {"latents": str(tmp_path / "X_true.csv"),
                     "labels": str(tmp_path / "labels.csv"),
                     "output_dir": str(tmp_path)},
            "eval": {"knn_k": [1, 3], "folds": 4, "metrics": ["knn"]},
        })
        assert run("eval", "--config", cfg) == 0
        report = json.loads((tmp_path / "eval.json").read_text())
        assert set(report["knn_accuracy"]) == {"1", "3"}
        assert report["knn_accuracy"]["1"]["mean"] > 0.8

    def test_requested_knn_without_labels(self, generated):
        cfg = write_config(generated / "ev.json", {
            "data": {"latents": str(generated / "X_true.csv"),
                     "output_dir": str(generated)},
            "eval": {"metrics": ["knn"]},
        })
        assert run("eval", "--config", cfg) == 2

    def test_requires_latents(self, generated):
        cfg = write_config(generated / "ev.json",
                           {"data": {"output_dir": str(generated)}})
        assert run("eval", "--config", cfg) == 2


class TestExitCodes:
    def test_numeric_degeneracy_maps_to_three(self, tmp_path, monkeypatch):
        def boom(config, args):
            raise NumericDegeneracyError("synthetic failure")
        monkeypatch.setitem(cli._COMMANDS, "fit", boom)
        cfg = write_config(tmp_path / "c.json", {})
        assert run("fit", "--config", cfg) == 3
