"""File formats and the command-line surface."""

import json
from pathlib import Path

import numpy as np
import pytest

from lcirt import DataFormatError, build_constraints, generate
from lcirt import io as lio
from lcirt.cli import main
from conftest import make_params


DESIGN = {
    "schema": "lcirt-design/v1",
    "latent": {"n_dim_u": 1, "n_dim_v": 1, "n_class_u": 2, "n_class_v": 2},
    "items": [
        {"name": "alg_a", "categories": 3, "dim_u": 1, "dim_v": 1, "group": "algebra", "anchor_u": True, "anchor_v": True},
        {"name": "alg_b", "categories": 3, "dim_u": 1, "dim_v": 1, "group": "algebra"},
        {"name": "geo_a", "categories": 3, "dim_u": 1, "dim_v": 1, "group": "geometry"},
        {"name": "geo_b", "categories": 3, "dim_u": 1, "dim_v": 1, "group": "geometry"},
    ],
    "covariates": [{"name": "female", "kind": "numeric", "simulate": {"dist": "bernoulli", "p": 0.5}}],
}


@pytest.fixture
def design_path(tmp_path):
    path = tmp_path / "design.json"
    path.write_text(json.dumps(DESIGN))
    return path


@pytest.fixture
def sim_inputs(tmp_path, design_path):
    df = lio.load_design(design_path)
    scheme = build_constraints(df.design, df.config, 1)
    true = scheme.apply(make_params(df.design, df.config, n_covariates=1, seed=5))
    params_path = tmp_path / "params.json"
    lio.save_params(params_path, true)
    return design_path, params_path, df, true


class TestDesignFile:
    def test_round_trip(self, design_path, tmp_path):
        df = lio.load_design(design_path)
        assert df.design.n_items == 4
        assert df.design.item_names == ("alg_a", "alg_b", "geo_a", "geo_b")
        assert df.design.groups == {"algebra": (0, 1), "geometry": (2, 3)}
        assert df.config.n_class_u == 2
        out = tmp_path / "copy.json"
        lio.save_design(out, df)
        again = lio.load_design(out)
        assert again.design.item_names == df.design.item_names
        np.testing.assert_array_equal(again.design.loads_u, df.design.loads_u)
        assert again.covariates == df.covariates

    def test_parse_error_positions(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"schema": "lcirt-design/v1", "latent": {}}')
        with pytest.raises(DataFormatError, match="latent"):
            lio.load_design(bad)
        bad.write_text("{not json")
        with pytest.raises(DataFormatError, match="line 1"):
            lio.load_design(bad)
        broken = dict(DESIGN, items=[dict(DESIGN["items"][0])])
        del broken["items"][0]["categories"]
        bad.write_text(json.dumps(broken))
        with pytest.raises(DataFormatError, match=r"items\[0\]"):
            lio.load_design(bad)

    def test_default_anchor_is_first_loader(self, tmp_path):
        raw = json.loads(json.dumps(DESIGN))
        for item in raw["items"]:
            item.pop("anchor_u", None)
            item.pop("anchor_v", None)
        path = tmp_path / "d.json"
        path.write_text(json.dumps(raw))
        df = lio.load_design(path)
        assert df.design.anchor_items_u.tolist() == [0]
        assert df.design.anchor_items_v.tolist() == [0]

    def test_categorical_coding(self, tmp_path):
        raw = json.loads(json.dumps(DESIGN))
        raw["covariates"] = [
            {"name": "hs", "kind": "categorical", "levels": ["tech", "sci", "hum"], "reference": "tech"}
        ]
        path = tmp_path / "d.json"
        path.write_text(json.dumps(raw))
        df = lio.load_design(path)
        assert df.expanded_covariate_names() == ["hs=sci", "hs=hum"]


class TestDatasetCsv:
    def test_round_trip_byte_identical(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data = generate(true, df.design, df.config, n=40, seed=9)
        import dataclasses

        data = dataclasses.replace(
            data, covariate_names=("female",), meta={"origin": "test", "seed": 9}
        )
        f1 = tmp_path / "d1.csv"
        lio.write_dataset(f1, data, df.design)
        loaded = lio.read_dataset(f1, df)
        assert loaded.meta == {"origin": "test", "seed": 9}
        f2 = tmp_path / "d2.csv"
        lio.write_dataset(f2, loaded, df.design)
        assert f1.read_bytes() == f2.read_bytes()

    def test_legal_and_illegal_patterns(self, design_path, tmp_path, sim_inputs):
        df = lio.load_design(design_path)
        header = ",".join(lio.expected_header(df))
        good = tmp_path / "good.csv"
        good.write_text(f"{header}\ns1,1.0,NA,NA,1,3,0,NA,1,2\n")
        data = lio.read_dataset(good, df)
        assert data.indicators.tolist() == [[-1, 1, 0, 1]]
        assert data.responses.tolist() == [[0, 3, 0, 2]]

        bad = tmp_path / "bad.csv"
        bad.write_text(f"{header}\ns1,1.0,0,2,1,3,NA,NA,1,1\n")
        with pytest.raises(DataFormatError, match="Y_alg_a"):
            lio.read_dataset(bad, df)

        bad.write_text(f"{header}\ns1,1.0,1,NA,NA,NA,NA,NA,1,1\n")
        with pytest.raises(DataFormatError, match="answered but response is NA"):
            lio.read_dataset(bad, df)

        bad.write_text(f"{header}\ns1,1.0,NA,NA,NA,NA,NA,NA,NA,NA\n")
        with pytest.raises(DataFormatError, match="no due items at lines: 2"):
            lio.read_dataset(bad, df)

        bad.write_text(f"{header}\ns1,oops,1,2,NA,NA,NA,NA,1,1\n")
        with pytest.raises(DataFormatError, match="female"):
            lio.read_dataset(bad, df)

        bad.write_text("subject,wrong\ns1,1\n")
        with pytest.raises(DataFormatError, match="header mismatch"):
            lio.read_dataset(bad, df)

    def test_out_of_range_category(self, design_path, tmp_path):
        df = lio.load_design(design_path)
        header = ",".join(lio.expected_header(df))
        bad = tmp_path / "bad.csv"
        bad.write_text(f"{header}\ns1,0.0,1,9,NA,NA,NA,NA,NA,NA\n")
        with pytest.raises(DataFormatError, match="outside 1..3"):
            lio.read_dataset(bad, df)


class TestParamsFile:
    def test_round_trip(self, sim_inputs, tmp_path):
        _, params_path, df, true = sim_inputs
        loaded = lio.load_params(params_path)
        np.testing.assert_allclose(loaded.support_u, true.support_u)
        np.testing.assert_allclose(loaded.thresholds, true.thresholds)
        np.testing.assert_allclose(loaded.memb_coef_v, true.memb_coef_v)
        assert loaded.attempt_slope_v is not None

    def test_schema_checked(self, tmp_path):
        p = tmp_path / "p.json"
        p.write_text('{"schema": "other"}')
        with pytest.raises(DataFormatError, match="schema"):
            lio.load_params(p)


class TestCli:
    def _simulate(self, tmp_path, design_path, params_path, n=180, seed=7):
        data_path = tmp_path / "data.csv"
        rc = main([
            "simulate", "--design", str(design_path), "--params", str(params_path),
            "--n", str(n), "--seed", str(seed), "--out", str(data_path),
        ])
        assert rc == 0
        return data_path

    def test_simulate_deterministic(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        a = self._simulate(tmp_path, design_path, params_path)
        content = a.read_bytes()
        b_path = tmp_path / "data2.csv"
        rc = main([
            "simulate", "--design", str(design_path), "--params", str(params_path),
            "--n", "180", "--seed", "7", "--out", str(b_path),
        ])
        assert rc == 0
        assert content == b_path.read_bytes()

    def test_fit_outputs_verify_and_repeat_identically(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        fit1 = tmp_path / "fit1.json"
        fit2 = tmp_path / "fit2.json"
        args = [
            "fit", "--design", str(design_path), "--data", str(data_path),
            "--restarts", "2", "--seed", "3", "--max-iter", "250", "--tol", "1e-6",
        ]
        assert main(args + ["--out", str(fit1)]) == 0
        assert main(args + ["--out", str(fit2)]) == 0
        assert fit1.read_bytes() == fit2.read_bytes()
        payload = lio.load_fit(fit1)
        assert payload["schema"] == "lcirt-fit/v1"
        assert payload["options"]["seed"] == 3
        assert payload["n_par"] == 28
        assert "se_raw" in payload and "params_std" in payload
        # loglik recomputes from the stored raw parameters
        params = lio.params_from_dict(payload["params_raw"])
        data = lio.read_dataset(data_path, df)
        from lcirt import marginal_loglik

        assert marginal_loglik(params, df.design, data) == pytest.approx(payload["loglik"], abs=1e-9)

    def test_fit_json_self_check_detects_tampering(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        fit_path = tmp_path / "fit.json"
        assert main([
            "fit", "--design", str(design_path), "--data", str(data_path),
            "--restarts", "1", "--seed", "3", "--max-iter", "150", "--tol", "1e-6",
            "--no-se", "--out", str(fit_path),
        ]) == 0
        payload = json.loads(fit_path.read_text())
        payload["loglik"] = payload["loglik"] + 5.0
        fit_path.write_text(json.dumps(payload))
        rc = main(["predict", "--fit", str(fit_path), "--out", str(tmp_path / "t.csv")])
        assert rc == 1  # BIC self-check fails on load

    def test_classify_self_check_and_output(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        fit_path = tmp_path / "fit.json"
        assert main([
            "fit", "--design", str(design_path), "--data", str(data_path),
            "--restarts", "1", "--seed", "3", "--max-iter", "200", "--tol", "1e-6",
            "--no-se", "--out", str(fit_path),
        ]) == 0
        out = tmp_path / "classes.csv"
        assert main(["classify", "--fit", str(fit_path), "--data", str(data_path), "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "subject,map_u,map_v,pu_1,pu_2,pv_1,pv_2"
        assert len(lines) == 181
        first = lines[1].split(",")
        assert first[1] in ("1", "2") and first[2] in ("1", "2")

    def test_predict_layout(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        fit_path = tmp_path / "fit.json"
        assert main([
            "fit", "--design", str(design_path), "--data", str(data_path),
            "--restarts", "1", "--seed", "3", "--max-iter", "150", "--tol", "1e-6",
            "--no-se", "--out", str(fit_path),
        ]) == 0
        out = tmp_path / "tables.csv"
        assert main(["predict", "--fit", str(fit_path), "--u", "-1,0,1", "--v", "-1,0,1", "--out", str(out)]) == 0
        header = out.read_text().splitlines()[0].split(",")
        assert header[:2] == ["item", "group"]
        assert "pass_at_u-1" in header and "pass_range" in header
        assert "attempt_range_u" in header and "attempt_range_v" in header
        assert len(out.read_text().strip().splitlines()) == 5

    def test_select_grid_layout_and_flag(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        out = tmp_path / "grid.csv"
        rc = main([
            "select", "--design", str(design_path), "--data", str(data_path),
            "--ku", "1..2", "--kv", "1,2", "--restarts", "1", "--max-iter", "120",
            "--tol", "1e-5", "--out", str(out),
        ])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("# lcirt-select/v1 ")
        assert lines[1] == "k_u,k_v,loglik,n_par,bic,selected"
        rows = [line.split(",") for line in lines[2:]]
        assert [(r[0], r[1]) for r in rows] == [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]
        assert sum(int(r[5]) for r in rows) == 1
        bics = [float(r[4]) for r in rows]
        flagged = next(i for i, r in enumerate(rows) if r[5] == "1")
        assert bics[flagged] == min(bics)

    def test_test_commands_write_reports(self, sim_inputs, tmp_path):
        design_path, params_path, df, true = sim_inputs
        data_path = self._simulate(tmp_path, design_path, params_path)
        ign = tmp_path / "ign.json"
        rc = main([
            "test-ignorability", "--design", str(design_path), "--data", str(data_path),
            "--restarts", "1", "--max-iter", "150", "--tol", "1e-5", "--out", str(ign),
        ])
        assert rc == 0
        report = json.loads(ign.read_text())
        assert report["schema"] == "lcirt-report/v1"
        assert report["df"] == 4
        assert report["statistic"] >= -1e-6
        hom = tmp_path / "hom.json"
        rc = main([
            "test-homogeneity", "--design", str(design_path), "--data", str(data_path),
            "--block", "algebra", "--restarts", "1", "--max-iter", "150", "--tol", "1e-5",
            "--out", str(hom),
        ])
        assert rc == 0
        report = json.loads(hom.read_text())
        assert report["block"] == "algebra"
        assert report["df"] == 6

    def test_exit_codes(self, sim_inputs, tmp_path, capsys):
        design_path, params_path, df, true = sim_inputs
        rc = main(["fit", "--design", str(design_path), "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.json")])
        assert rc == 1
        err = capsys.readouterr().err
        assert json.loads(err.strip().splitlines()[-1])["error"]["type"] == "UsageError"
        # malformed data file -> user error with informative message
        bad = tmp_path / "bad.csv"
        bad.write_text("subject,female\n")
        rc = main(["fit", "--design", str(design_path), "--data", str(bad), "--out", str(tmp_path / "x.json")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "header mismatch" in err
        rc = main(["test-homogeneity", "--design", str(design_path), "--data", str(bad), "--block", "algebra", "--out", str(tmp_path / "x.json")])
        assert rc == 1
