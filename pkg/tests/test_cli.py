import json

import pytest

from revenant.cli import main
from revenant.forge import forge_repo, overflow_poc_bytes

CVE = "CVE-2021-9999"


@pytest.fixture(scope="module")
def fixture(tmp_path_factory):
    return forge_repo(tmp_path_factory.mktemp("forge"), ["C1"])


def write_case(tmp_path, fx, **overrides):
    case = {
        "cve": CVE,
        "project": "pack",
        "repo": str(fx.repo),
        "fix_commits": [fx.fix],
        "target": fx.target,
        "tiers": {"reference": fx.fix, "latest": fx.target},
        "build": {"steps": list(fx.recipe.steps), "artifacts": list(fx.recipe.artifact_paths), "timeout": 120},
        "poc": {
            "command": fx.poc.command,
            "input": str(fx.poc_file),
            "expected_detector": fx.poc.expected_detector,
            "run_timeout": 10,
        },
        "workspace": str(tmp_path / "ws"),
    }
    case.update(overrides)
    path = tmp_path / "case.json"
    path.write_text(json.dumps(case))
    return path


def summary(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return dict(
        pair.split("=", 1) for pair in out[-1].split()[1:] if "=" in pair
    )


class TestPort:
    def test_port_at_fix_triggers(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["port", "--config", str(case), "--ref", fixture.fix])
        fields = summary(capsys)
        assert rc == 0
        assert fields["status"] == "triggered"
        assert fields["detector"] == "heap-buffer-overflow"
        payload = json.loads((tmp_path / "ws" / CVE / "port.json").read_text())
        assert payload["status"] == "triggered"

    def test_port_past_breaker_conflicts(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["port", "--config", str(case), "--tier", "latest"])
        assert rc == 3
        assert summary(capsys)["status"] == "port-conflict"

    def test_unknown_tier_is_config_error(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["port", "--config", str(case), "--tier", "nightly"])
        assert rc == 5
        assert "nightly" in capsys.readouterr().err


class TestTiers:
    def test_tiers_writes_matrix_cells(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["tiers", "--config", str(case)])
        assert rc == 0
        fields = summary(capsys)
        assert fields["reference"] == "triggered"
        assert fields["latest"] == "port-conflict"
        payload = json.loads((tmp_path / "ws" / CVE / "tiers.json").read_text())
        assert payload["tiers"]["reference"]["status"] == "triggered"
        assert payload["tiers"]["latest"]["status"] == "port-conflict"


class TestBisect:
    def test_finds_planted_breaker(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["bisect", "--config", str(case), fixture.fix, fixture.target])
        assert rc == 0
        fields = summary(capsys)
        assert fields["breaking"] == fixture.breakers[0]["id"]
        payload = json.loads((tmp_path / "ws" / CVE / "bisect.json").read_text())
        assert payload["breaking_commit"] == fixture.breakers[0]["id"]


class TestReviveAndManifest:
    def test_revive_then_manifest(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["revive", "--config", str(case)])
        fields = summary(capsys)
        assert rc == 0
        assert fields["final"] == "Revived"
        assert fields["stack"] == "1"
        record = json.loads((tmp_path / "ws" / CVE / "revival_record.json").read_text())
        assert record["revert_stack"] == [fixture.breakers[0]["id"]]

        rc = main(["manifest", "--config", str(case), "--policy", "max-subset"])
        fields = summary(capsys)
        assert rc == 0
        assert fields["included"] == "1"
        manifest = json.loads((tmp_path / "ws" / "manifest.json").read_text())
        assert manifest["included"][0]["cve"] == CVE
        assert manifest["included"][0]["revert_stack"] == [fixture.breakers[0]["id"]]
        assert manifest["schema"] == "benchmark-manifest/1"

    def test_manifest_without_record_is_precondition(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["manifest", "--config", str(case)])
        assert rc == 4
        assert "run revive first" in capsys.readouterr().err

    def test_aborted_revive_exits_3(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["revive", "--config", str(case), "--limit-commits", "0"])
        fields = summary(capsys)
        assert rc == 3
        assert fields["final"] == "Aborted"
        assert fields["abort"] == "Complexity"

    def test_origin_failure_exits_4(self, tmp_path, fixture, capsys):
        dud = tmp_path / "dud.bin"
        dud.write_bytes(b"\x02\x00ab")
        case = write_case(tmp_path, fixture)
        data = json.loads(case.read_text())
        data["poc"]["input"] = str(dud)
        case.write_text(json.dumps(data))
        rc = main(["revive", "--config", str(case)])
        assert rc == 4
        assert "does not trigger at the fix commit" in capsys.readouterr().err


class TestCategorize:
    def test_by_repo_flag(self, fixture, capsys):
        breaker = fixture.breakers[0]["id"]
        rc = main(["categorize", "--repo", str(fixture.repo), breaker])
        assert rc == 0
        fields = summary(capsys)
        assert fields["category"] == "C1"

    def test_with_config_writes_artifact(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        breaker = fixture.breakers[0]["id"]
        rc = main(["categorize", "--config", str(case), breaker, fixture.fix])
        assert rc == 0
        rows = json.loads((tmp_path / "ws" / CVE / "categories.json").read_text())
        assert len(rows) == 2
        assert rows[0]["category"] == "C1"

    def test_needs_repo_or_config(self, capsys):
        rc = main(["categorize", "abc123"])
        assert rc == 5


class TestActivity:
    def test_emits_csv_and_svg(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        rc = main(["activity", "--config", str(case)])
        assert rc == 0
        fields = summary(capsys)
        csv_text = (tmp_path / "ws" / CVE / "activity.csv").read_text()
        assert csv_text.splitlines()[0] == "bucket_start,total_commits,cve_related_commits"
        rows = csv_text.splitlines()[1:]
        assert sum(int(r.split(",")[1]) for r in rows) == int(fields["commits"])
        svg_text = (tmp_path / "ws" / CVE / "activity.svg").read_text()
        assert svg_text.startswith("<svg")
        assert CVE in svg_text

    def test_markers_follow_revive(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        assert main(["revive", "--config", str(case)]) == 0
        assert main(["activity", "--config", str(case)]) == 0
        svg_text = (tmp_path / "ws" / CVE / "activity.svg").read_text()
        assert svg_text.count("<polygon") == 1


class TestReport:
    def test_bundled_report_renders_all_sections(self, capsys):
        rc = main(["report", "--bundled"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PoC outcomes by tier" in out
        assert "revival outcomes" in out
        assert "breaking commit categories" in out

    def test_report_over_workspace_artifacts(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture)
        assert main(["tiers", "--config", str(case)]) == 0
        assert main(["revive", "--config", str(case)]) == 0
        capsys.readouterr()
        rc = main([
            "report",
            str(tmp_path / "ws" / CVE / "tiers.json"),
            str(tmp_path / "ws" / CVE / "revival_record.json"),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "port-conflict" in out
        assert "revival records" in out
        header = next(ln for ln in out.splitlines() if ln.startswith("project"))
        assert header.split() == ["project", "cve", "reference", "latest"]

    def test_report_needs_input(self, capsys):
        assert main(["report"]) == 5

    def test_out_file(self, tmp_path, capsys):
        out_file = tmp_path / "report.txt"
        rc = main(["report", "--bundled", "--paper-style", "--out", str(out_file)])
        assert rc == 0
        text = out_file.read_text()
        assert "poc-incompat" not in text
        assert "✓" in text


class TestConfigErrors:
    def test_unknown_key_exits_5(self, tmp_path, fixture, capsys):
        case = write_case(tmp_path, fixture, surprise=True)
        rc = main(["port", "--config", str(case)])
        assert rc == 5
        assert "unknown keys" in capsys.readouterr().err

    def test_env_workspace_fallback(self, tmp_path, fixture, capsys, monkeypatch):
        monkeypatch.setenv("REVENANT_WORKSPACE", str(tmp_path / "env-ws"))
        case = write_case(tmp_path, fixture)
        data = json.loads(case.read_text())
        del data["workspace"]
        case.write_text(json.dumps(data))
        rc = main(["port", "--config", str(case), "--ref", fixture.fix])
        assert rc == 0
        assert (tmp_path / "env-ws" / CVE / "port.json").exists()
