import json
import shutil
import subprocess
import sys

import pytest

from shift_audit.cli import main
from shift_audit.divergence import Kernel, mmd_squared
from shift_audit.files import SCHEMA, RunManifest, read_samples


def run(*argv):
    return main([str(a) for a in argv])


def load(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("generate", "example1", "--resolution", 20, "--out", d / "e1.json") == 0
    assert run("sample", d / "e1.json", "--domain", "source", "--n", 400, "--seed", 0, "--out", d / "src.csv") == 0
    assert run("sample", d / "e1.json", "--domain", "target", "--n", 400, "--seed", 0, "--out", d / "tgt.csv") == 0
    phi1 = {
        "representation": {"kind": "variable-selection", "indices": [0]},
        "predictor": {"kind": "threshold", "axis": 0, "cutoff": 0.0, "orientation": -1},
    }
    (d / "phi1.json").write_text(json.dumps(phi1))
    return d


class TestGenerateAndSample:
    def test_schema_field(self, workdir):
        assert load(workdir / "e1.json")["schema"] == SCHEMA

    def test_sample_file(self, workdir):
        raw = (workdir / "src.csv").read_bytes()
        assert b"\r" not in raw
        assert raw.splitlines()[0] == b"x0,x1,y,domain"
        s = read_samples(workdir / "src.csv")
        assert s.n == 400 and s.labeled and s.domain == "source"

    def test_deterministic(self, workdir, tmp_path):
        run("sample", workdir / "e1.json", "--domain", "source", "--n", 400, "--seed", 0, "--out", tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == (workdir / "src.csv").read_bytes()

    def test_seed_required(self, workdir, tmp_path):
        with pytest.raises(SystemExit) as e:
            run("sample", workdir / "e1.json", "--domain", "source", "--n", 10, "--out", tmp_path / "x.csv")
        assert e.value.code == 2

    @pytest.mark.parametrize("scenario", ["overlap-a", "overlap-b", "labelshift"])
    def test_other_scenarios(self, scenario, tmp_path):
        extra = ["--removed", "1,3"] if scenario == "labelshift" else []
        assert run("generate", scenario, "--out", tmp_path / "p.json", *extra) == 0
        assert load(tmp_path / "p.json")["problem"]["generator"] in ("overlap", "labelshift")


class TestDiagnose:
    def test_same_file_twice(self, workdir, tmp_path):
        out = tmp_path / "d.json"
        assert run("diagnose", workdir / "src.csv", workdir / "src.csv", "--out", out) == 0
        rep = load(out)["report"]
        for key in ("d_supp", "kernel_support", "mmd_squared_v", "hinge_support"):
            assert key in rep
        assert rep["d_supp"]["value"] <= 1e-9
        assert rep["kernel_support"]["value"] <= 1e-9
        assert rep["mmd_squared_v"]["value"] <= 1e-9
        assert rep["mmd_squared_u"]["value"] <= 1e-9

    def test_manifest_verifies(self, workdir, tmp_path):
        out = tmp_path / "d.json"
        run("diagnose", workdir / "src.csv", workdir / "tgt.csv", "--eps", 0.1, "--kernel-sigma", 1.0, "--out", out)
        doc = load(out)
        m = RunManifest.from_dict(doc["manifest"])
        assert m.verify()
        assert m.config["eps"] == 0.1
        copy = tmp_path / "src.csv"
        shutil.copy(workdir / "src.csv", copy)
        m2 = RunManifest.for_inputs("diagnose", [copy], {})
        copy.write_text(copy.read_text() + "0.1,0.1,0,source\n")
        assert not m2.verify()

    def test_overlap_problems(self, tmp_path):
        for which, check in (("a", lambda v: v < 0.02), ("b", lambda v: abs(v - 1 / 3) <= 0.05)):
            run("generate", f"overlap-{which}", "--out", tmp_path / "p.json")
            for dom in ("source", "target"):
                run("sample", tmp_path / "p.json", "--domain", dom, "--n", 5000, "--seed", 1, "--out", tmp_path / f"{dom}.csv")
            assert run("diagnose", tmp_path / "source.csv", tmp_path / "target.csv", "--out", tmp_path / "d.json") == 0
            rep = load(tmp_path / "d.json")["report"]
            assert check(rep["d_supp"]["value"])
            assert rep["mmd_squared_v"]["value"] > 0

    def test_histogram_estimator(self, workdir, tmp_path):
        assert run("diagnose", workdir / "src.csv", workdir / "tgt.csv", "--estimator", "hist", "--bins", 10,
                   "--out", tmp_path / "d.json") == 0

    def test_dimension_mismatch(self, workdir, tmp_path):
        (tmp_path / "one.csv").write_text("x0\n0.1\n0.2\n")
        assert run("diagnose", workdir / "src.csv", tmp_path / "one.csv") == 3

    def test_parse_error_location(self, workdir, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("x0,x1\n0.1,abc\n")
        assert run("diagnose", workdir / "src.csv", tmp_path / "bad.csv") == 2
        assert "row 2, column 2" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "text", ["", "a,b\n1,2\n", "x0,x1\n1\n", "x0\nnan\n", "x0,y\n1,2\n", "x0,domain\n1,source\n2,target\n", "x0\n"]
    )
    def test_bad_files(self, workdir, tmp_path, text):
        (tmp_path / "bad.csv").write_text(text)
        assert run("diagnose", workdir / "src.csv", tmp_path / "bad.csv") in (2, 3)

    def test_missing_file(self, workdir, tmp_path):
        assert run("diagnose", workdir / "src.csv", tmp_path / "missing.csv") == 2


class TestBound:
    def test_theorem2_exact_eta(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json",
                   "--eta", workdir / "e1.json", "--eps", 0.2, "--exact", "--out", out) == 0
        rep = load(out)["report"]
        assert rep["total"] == pytest.approx(1.0, abs=1e-12)
        assert rep["eta_term"] == pytest.approx(1.0, abs=1e-12)
        assert rep["total_kind"] == "full"

    def test_theorem2_from_samples(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json",
                   "--eta", workdir / "e1.json", "--eps", 0.2, "--out", out) == 0
        rep = load(out)["report"]
        assert rep["total"] == pytest.approx(1.0, abs=0.05)

    def test_unobservable_is_partial(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json", "--eps", 0.2, "--out", out) == 0
        rep = load(out)["report"]
        assert rep["eta_term"] == "unobservable"
        assert rep["total_kind"].startswith("observable-part-only")

    def test_theorem1(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json", "--theorem", 1,
                   "--eta", workdir / "e1.json", "--out", out) == 0
        assert load(out)["report"]["total"] == pytest.approx(1.0, abs=1e-12)
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json", "--theorem", 1) == 2

    def test_theorem3_large_eps(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json", "--theorem", 3,
                   "--eta", workdir / "e1.json", "--eps", 100, "--kernel-sigma", 1.0, "--out", out) == 0
        zs = read_samples(workdir / "src.csv").points[:, :1]
        zt = read_samples(workdir / "tgt.csv").points[:, :1]
        expected = mmd_squared(zs, zt, Kernel(1.0)).value ** 0.5
        assert load(out)["report"]["support_term"] == pytest.approx(expected, rel=1e-10)

    def test_identical_domains(self, workdir, tmp_path):
        out = tmp_path / "b.json"
        assert run("bound", workdir / "src.csv", workdir / "src.csv", workdir / "phi1.json", "--eps", 0.05, "--out", out) == 0
        rep = load(out)["report"]
        assert rep["total"] == pytest.approx(rep["weighted_risk_term"], abs=1e-12)

    def test_unlabelled_source(self, workdir):
        assert run("bound", workdir / "tgt.csv", workdir / "tgt.csv", workdir / "phi1.json") == 2

    def test_unknown_theorem(self, workdir):
        with pytest.raises(SystemExit):
            run("bound", workdir / "src.csv", workdir / "tgt.csv", workdir / "phi1.json", "--theorem", 4)


class TestTrain:
    def test_model_and_trace(self, workdir, tmp_path):
        assert run("train", workdir / "src.csv", workdir / "tgt.csv", "--seed", 0, "--max-iters", 50,
                   "--out-model", tmp_path / "m.json", "--out-trace", tmp_path / "t.csv") == 0
        doc = load(tmp_path / "m.json")
        assert doc["representation"]["kind"] == "linear-projection"
        assert RunManifest.from_dict(doc["manifest"]).verify()
        assert (tmp_path / "t.csv").read_text().startswith("iter,risk_term,penalty_term,total\n")
        # the model file feeds straight into bound
        assert run("bound", workdir / "src.csv", workdir / "tgt.csv", tmp_path / "m.json", "--eps", 0.2) == 0

    def test_erm_separable(self, tmp_path):
        rows = ["x0,x1,y"] + [f"{-2 - i * 0.01},{i * 0.01},0" for i in range(50)] + [f"{2 + i * 0.01},{i * 0.01},1" for i in range(50)]
        (tmp_path / "s.csv").write_text("\n".join(rows) + "\n")
        assert run("train", tmp_path / "s.csv", tmp_path / "s.csv", "--alpha", 0, "--seed", 0,
                   "--out-model", tmp_path / "m.json", "--out-trace", tmp_path / "t.csv") == 0
        last = (tmp_path / "t.csv").read_text().splitlines()[-1].split(",")
        assert float(last[1]) < 0.05

    def test_tune_on_target(self, workdir, tmp_path):
        run("sample", workdir / "e1.json", "--domain", "target", "--n", 200, "--seed", 0, "--labels",
            "--out", tmp_path / "tl.csv")
        assert run("train", workdir / "src.csv", workdir / "tgt.csv", "--seed", 0, "--max-iters", 20,
                   "--tune-on-target", tmp_path / "tl.csv", "--out-model", tmp_path / "m.json") == 0
        assert load(tmp_path / "m.json")["config"]["alpha"] == 0.0

    def test_seed_required(self, workdir, tmp_path):
        with pytest.raises(SystemExit):
            run("train", workdir / "src.csv", workdir / "tgt.csv", "--out-model", tmp_path / "m.json")


class TestReplicate:
    def test_example1(self, tmp_path):
        assert run("replicate", "example1", "--out", tmp_path, "--resolution", 20) == 0
        lines = (tmp_path / "compare_bounds.csv").read_text().splitlines()
        assert lines[0].startswith("hypothesis,epsilon,sigma,source_risk,target_risk")
        summary = load(tmp_path / "summary.json")
        rows = {r["hypothesis"]: r for r in summary["rows"]}
        assert rows["phi1"]["target_risk"] == pytest.approx(1.0) and rows["phi2"]["target_risk"] == pytest.approx(0.0)
        assert rows["phi1"]["invariance_objective"] == pytest.approx(rows["phi2"]["invariance_objective"])

    def test_overlap(self, tmp_path):
        assert run("replicate", "overlap", "--out", tmp_path) == 0
        summary = load(tmp_path / "summary.json")
        assert all(r["d_supp_a"] == 0 and r["d_supp_b"] > 0 for r in summary["rows"])
        assert 0.25 in summary["mmd_a_exceeds_b_at"]

    def test_labelshift_needs_seed(self, tmp_path):
        assert run("replicate", "labelshift", "--out", tmp_path) == 2

    def test_labelshift_small(self, tmp_path):
        assert run("replicate", "labelshift", "--out", tmp_path, "--seed", 0, "--removed", "0", "--sweep", "0",
                   "--n", 60) == 0
        lines = (tmp_path / "labelshift_sweep.csv").read_text().splitlines()
        assert lines[0] == "n_removed,alpha,seed,source_risk,target_risk,final_objective"
        assert len(lines) == 2

    def test_unknown_scenario(self, tmp_path):
        with pytest.raises(SystemExit):
            run("replicate", "mnist", "--out", tmp_path)


def test_console_script(tmp_path):
    exe = shutil.which("shift-audit")
    cmd = [exe] if exe else [sys.executable, "-m", "shift_audit.cli"]
    res = subprocess.run(cmd + ["generate", "example1", "--resolution", "4", "--out", str(tmp_path / "p.json")],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert load(tmp_path / "p.json")["problem"]["generator"] == "example1"
