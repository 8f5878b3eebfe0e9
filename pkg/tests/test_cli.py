"""CLI contract tests: exit codes, error JSON, determinism, outputs.

Commands run in-process through main(argv) against a small demo
workspace (3 receivers x 2 sources, 3 short utterances) built once per
module.  The ray tracer is shrunk to 2000 rays to keep this quick.
"""

import json
import math
import os
import shutil

import pytest

from roomsim.cli import main
from roomsim.manifest import load_manifest
from roomsim.results import load_results

GEN = [
    "gen-demo", "--seed", "5", "--n-utterances", "3", "--n-receivers", "3",
    "--utterance-seconds", "1.0",
]


def _shrink_rt(config_path):
    with open(config_path) as f:
        data = json.load(f)
    data["rt"] = {"n_rays": 2000, "max_time": 0.4}
    with open(config_path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ws")
    out = str(root / "demo")
    assert main(GEN + ["--out", out]) == 0
    config = os.path.join(out, "config.json")
    _shrink_rt(config)
    assert main(["simulate", "--config", config, "--engine", "ism"]) == 0
    assert main(["simulate", "--config", config, "--engine", "rt"]) == 0
    ism_csv = os.path.join(out, "results", "ism.csv")
    assert main(
        ["evaluate", "--config", config, "--engine", "ism", "--out", ism_csv]
    ) == 0
    return {"dir": out, "config": config, "ism_csv": ism_csv}


def _stderr_error(capsys) -> dict:
    err = capsys.readouterr().err
    line = [l for l in err.strip().splitlines() if l.startswith("{")][-1]
    return json.loads(line)["error"]


class TestGenDemo:
    def test_workspace_files(self, ws):
        for name in ("scene.json", "config.json", "run_demo.sh", "corpus"):
            assert os.path.exists(os.path.join(ws["dir"], name))

    def test_same_seed_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert main(GEN + ["--out", str(tmp_path / sub)]) == 0
        for name in ("scene.json", "config.json", "corpus/utt00.wav"):
            with open(tmp_path / "a" / name, "rb") as f:
                a = f.read()
            with open(tmp_path / "b" / name, "rb") as f:
                b = f.read()
            assert a == b, name


class TestSimulate:
    def test_manifest_both_engines(self, ws):
        manifest = load_manifest(os.path.join(ws["dir"], "manifest.json"))
        assert len(manifest) == 12  # 2 engines x 2 sources x 3 receivers
        assert sorted(manifest.engines()) == ["ism", "rt"]

    def test_rir_files_with_sidecars(self, ws):
        rir_dir = os.path.join(ws["dir"], "rirs", "ism")
        wavs = sorted(n for n in os.listdir(rir_dir) if n.endswith(".wav"))
        assert len(wavs) == 6
        for w in wavs:
            assert os.path.exists(os.path.join(rir_dir, w + ".json"))

    def test_sidecar_provenance(self, ws):
        path = os.path.join(ws["dir"], "rirs", "ism", "s0_r0.wav.json")
        with open(path) as f:
            side = json.load(f)
        prov = side["provenance"]
        assert prov["seed"] == 5
        assert "config_hash" in prov and "tool_version" in prov

    def test_rerun_byte_identical(self, ws, tmp_path):
        first = {}
        rir_dir = os.path.join(ws["dir"], "rirs", "ism")
        for name in sorted(os.listdir(rir_dir)):
            with open(os.path.join(rir_dir, name), "rb") as f:
                first[name] = f.read()
        assert main(
            ["simulate", "--config", ws["config"], "--engine", "ism"]
        ) == 0
        for name, blob in first.items():
            with open(os.path.join(rir_dir, name), "rb") as f:
                assert f.read() == blob, name

    def test_band_limit_recorded(self, ws):
        path = os.path.join(ws["dir"], "rirs", "rt", "s1_r2.wav.json")
        with open(path) as f:
            side = json.load(f)
        assert side["band_limit_hz"] == 7000.0

    def test_unknown_engine_rejected_by_parser(self, ws):
        with pytest.raises(SystemExit):
            main(["simulate", "--config", ws["config"], "--engine", "dgfem"])


class TestEvaluate:
    def test_row_count_and_schema(self, ws):
        rows = load_results(ws["ism_csv"])
        # 6 mains x {estoi, si_sdr}
        assert len(rows) == 12
        assert {r.engine for r in rows} == {"ism"}
        assert {r.metric for r in rows} == {"estoi", "si_sdr"}
        assert {r.algorithm for r in rows} == {"wpe"}

    def test_threads_do_not_change_results(self, ws, tmp_path):
        out = str(tmp_path / "t2.csv")
        assert main(
            ["evaluate", "--config", ws["config"], "--engine", "ism",
             "--out", out, "--threads", "2"]
        ) == 0
        with open(ws["ism_csv"], "rb") as f:
            base = f.read()
        with open(out, "rb") as f:
            assert f.read() == base

    def test_self_check_identities(self, ws, tmp_path):
        out = str(tmp_path / "self.csv")
        assert main(
            ["evaluate", "--config", ws["config"], "--engine", "ism",
             "--out", out, "--self-check"]
        ) == 0
        rows = load_results(out)
        for r in rows:
            assert r.algorithm == "self_check"
            if r.metric == "estoi":
                assert r.value == pytest.approx(1.0, abs=1e-9)
            else:
                assert math.isinf(r.value)

    def test_missing_corpus_exit_2(self, ws, tmp_path, capsys):
        broken = tmp_path / "broken"
        shutil.copytree(ws["dir"], broken)
        shutil.rmtree(broken / "corpus")
        code = main(
            ["evaluate", "--config", str(broken / "config.json"),
             "--engine", "ism", "--out", str(broken / "r.csv")]
        )
        assert code == 2
        err = _stderr_error(capsys)
        assert err["kind"] == "corpus_not_found"

    def test_missing_manifest_exit_2(self, tmp_path, capsys):
        out = str(tmp_path / "fresh")
        assert main(GEN + ["--out", out]) == 0
        code = main(
            ["evaluate", "--config", os.path.join(out, "config.json"),
             "--out", os.path.join(out, "r.csv")]
        )
        assert code == 2
        assert _stderr_error(capsys)["kind"] == "manifest_not_found"

    def test_unregistered_metric_exit_3(self, ws, tmp_path, capsys):
        # paths resolve relative to the config file, so keep it in-tree
        broken = os.path.join(ws["dir"], "cfg_pesq.json")
        with open(ws["config"]) as f:
            data = json.load(f)
        data["metrics"] = ["pesq"]
        with open(broken, "w") as f:
            json.dump(data, f)
        code = main(
            ["evaluate", "--config", broken, "--engine", "ism",
             "--out", str(tmp_path / "r.csv")]
        )
        assert code == 3
        assert _stderr_error(capsys)["kind"] == "invalid_value"


class TestCompare:
    def test_self_identity(self, ws, tmp_path, capsys):
        out = str(tmp_path / "rep")
        code = main(
            ["compare", ws["ism_csv"], ws["ism_csv"], "--out", out]
        )
        assert code == 0
        with open(os.path.join(out, "report.json")) as f:
            rep = json.load(f)
        assert rep["pooled"] is True
        for row in rep["rows"]:
            assert row["rho"] == pytest.approx(1.0, abs=1e-12)
            assert row["rmse"] == 0.0
        assert "1.000" in capsys.readouterr().out

    def test_empty_candidate_exit_3(self, ws, tmp_path, capsys):
        empty = tmp_path / "empty.csv"
        with open(ws["ism_csv"]) as f:
            header = f.readline()
        with open(empty, "w") as f:
            f.write(header)
        code = main(
            ["compare", ws["ism_csv"], str(empty),
             "--out", str(tmp_path / "rep")]
        )
        assert code == 3
        assert _stderr_error(capsys)["kind"] == "degenerate_data"

    def test_missing_candidate_exit_2(self, ws, tmp_path, capsys):
        code = main(
            ["compare", ws["ism_csv"], str(tmp_path / "nope.csv"),
             "--out", str(tmp_path / "rep")]
        )
        assert code == 2
        assert _stderr_error(capsys)["kind"] == "results_not_found"

    def test_per_dataset_mode(self, ws, tmp_path):
        out = str(tmp_path / "rep")
        assert main(
            ["compare", ws["ism_csv"], ws["ism_csv"], "--out", out,
             "--per-dataset"]
        ) == 0
        with open(os.path.join(out, "report.json")) as f:
            rep = json.load(f)
        assert rep["pooled"] is False
        assert {r["dataset"] for r in rep["rows"]} == {"demo_lab"}

    def test_scatter_and_svg_outputs(self, ws, tmp_path):
        out = str(tmp_path / "rep")
        assert main(
            ["compare", ws["ism_csv"], ws["ism_csv"], "--out", out, "--svg"]
        ) == 0
        names = sorted(os.listdir(out))
        csvs = [n for n in names if n.startswith("scatter") and n.endswith(".csv")]
        svgs = [n for n in names if n.endswith(".svg")]
        assert len(csvs) == 2 and len(svgs) == 2
        with open(os.path.join(out, csvs[0])) as f:
            first = f.readline()
        assert "reference line: y = x" in first

    def test_report_roundtrip(self, ws, tmp_path, capsys):
        out = str(tmp_path / "rep")
        assert main(
            ["compare", ws["ism_csv"], ws["ism_csv"], "--out", out]
        ) == 0
        capsys.readouterr()
        assert main(["report", os.path.join(out, "report.json")]) == 0
        printed = capsys.readouterr().out
        with open(os.path.join(out, "report.txt")) as f:
            stored = f.read()
        assert printed.strip() == stored.strip()


class TestConvolveDereverb:
    def test_convolve_writes_wet_files(self, ws, tmp_path):
        out = str(tmp_path / "wetdir")
        assert main(
            ["convolve", "--config", ws["config"], "--engine", "ism",
             "--out", out]
        ) == 0
        wet = os.listdir(os.path.join(out, "wet", "ism"))
        assert len(wet) == 6

    def test_dereverb_writes_processed(self, ws, tmp_path):
        out = str(tmp_path / "procdir")
        assert main(
            ["dereverb", "--config", ws["config"], "--engine", "ism",
             "--out", out]
        ) == 0
        proc = os.listdir(os.path.join(out, "processed", "ism"))
        assert len(proc) == 6


class TestErrorsAndMisc:
    def test_ism_with_boxes_engine_error_verbatim(self, ws, tmp_path, capsys):
        broken = tmp_path / "boxed"
        shutil.copytree(ws["dir"], broken)
        scene_path = broken / "scene.json"
        with open(scene_path) as f:
            scene = json.load(f)
        scene["boxes"] = [
            {"min": [3.0, 2.0, 0.0], "max": [3.5, 2.5, 1.0],
             "material": "demo_wall"}
        ]
        with open(scene_path, "w") as f:
            json.dump(scene, f)
        code = main(
            ["simulate", "--config", str(broken / "config.json"),
             "--engine", "ism"]
        )
        assert code == 4
        err = _stderr_error(capsys)
        assert err["kind"] == "engine_error"
        assert "shoebox" in err["message"]

    def test_malformed_scene_exit_3(self, ws, tmp_path, capsys):
        broken = tmp_path / "bad"
        shutil.copytree(ws["dir"], broken)
        with open(broken / "scene.json") as f:
            scene = json.load(f)
        del scene["dims"]
        with open(broken / "scene.json", "w") as f:
            json.dump(scene, f)
        code = main(
            ["simulate", "--config", str(broken / "config.json"),
             "--engine", "ism"]
        )
        assert code == 3
        assert _stderr_error(capsys)["kind"] == "scene_error"

    def test_missing_config_exit_2(self, tmp_path, capsys):
        code = main(
            ["simulate", "--config", str(tmp_path / "no.json"),
             "--engine", "ism"]
        )
        assert code == 2
        assert _stderr_error(capsys)["kind"] == "config_not_found"

    def test_unknown_config_field_exit_3(self, ws, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        with open(ws["config"]) as f:
            data = json.load(f)
        data["bogus_knob"] = 1
        with open(bad, "w") as f:
            json.dump(data, f)
        code = main(
            ["simulate", "--config", str(bad), "--engine", "ism"]
        )
        assert code == 3
        assert _stderr_error(capsys)["kind"] == "invalid_value"

    def test_seed_flag_overrides_config(self, ws, tmp_path):
        out_a = str(tmp_path / "a.csv")
        out_b = str(tmp_path / "b.csv")
        assert main(
            ["evaluate", "--config", ws["config"], "--engine", "ism",
             "--out", out_a, "--seed", "5"]
        ) == 0
        assert main(
            ["evaluate", "--config", ws["config"], "--engine", "ism",
             "--out", out_b, "--seed", "6"]
        ) == 0
        with open(ws["ism_csv"], "rb") as f:
            base = f.read()
        with open(out_a, "rb") as f:
            assert f.read() == base  # config seed was already 5
        with open(out_b, "rb") as f:
            assert f.read() != base

    def test_grid_positions_inside_room(self, ws, capsys):
        code = main(
            ["grid", "--scene", os.path.join(ws["dir"], "scene.json"),
             "--spacing", "2.0", "--height", "1.2"]
        )
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["n"] == len(data["positions"]) > 0
        for x, y, z in data["positions"]:
            assert 0 < x < 7.0 and 0 < y < 4.5 and z == 1.2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "roomsim" in capsys.readouterr().out
