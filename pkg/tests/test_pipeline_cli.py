import json
import shutil

import pytest

from acps import cli, pipeline
from acps.backends import MockBackend, MockEmbedder
from acps.config import RunConfig, config_from_dict, load_config
from acps.demos import load_demos
from acps.errors import ConfigError
from acps.harness import DatasetRecord, load_dataset
from acps.pipeline import Pipeline, derive_seed, run_pipeline
from acps.router import FixedRouter

from conftest import GOLDEN, write_jsonl


class TestConfig:
    def test_defaults(self):
        c = RunConfig().validate()
        assert len(c.pipeline.temperatures) == 9 and c.pipeline.temperatures[-1] == 2.0
        assert (c.pipeline.K, c.pipeline.S, c.pipeline.L) == (4, 3, 2)
        assert (c.pipeline.top_p, c.pipeline.max_tokens, c.pipeline.answer_temperature) == (0.9, 500, 0.7)
        assert c.router.fallback == "CS"

    def test_relative_paths_resolve_against_config_dir(self, tmp_path):
        c = config_from_dict({"paths": {"dataset": "d.jsonl"}}, tmp_path)
        assert c.paths.dataset == str((tmp_path / "d.jsonl").resolve())

    @pytest.mark.parametrize(
        "data",
        [
            {"extra": {}},
            {"pipeline": {"KK": 3}},
            {"pipeline": {"K": 0}},
            {"pipeline": {"temperatures": [0.5, 0.25]}},
            {"pipeline": {"top_p": 0}},
            {"backend": {"kind": "replay"}},
            {"backend": {"kind": "remote"}},
            {"backend": {"kind": "carrier-pigeon"}},
            {"router": {"fallback": "XX"}},
            {"router": {"kind": "fixed"}},
            {"router": {"kind": "remote"}},
        ],
    )
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")
        (tmp_path / "bad.json").write_text("[1]")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.json")


def test_derive_seed_stable_and_distinct():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert len({derive_seed(0, "a"), derive_seed(1, "a"), derive_seed(0, "b")}) == 3


def _golden_config(tmp_path, case="commonsenseqa"):
    dst = tmp_path / case
    shutil.copytree(GOLDEN / case, dst)
    return dst


class TestRun:
    def test_golden_replay_no_network(self, tmp_path, no_network):
        cfg = load_config(GOLDEN / "commonsenseqa" / "config.json")
        result = run_pipeline(cfg, tmp_path / "run")
        assert result.exit_code == 0 and not no_network
        rec = result.report.records[0]
        assert rec.pred == "D" and rec.em == 1 and rec.paradigm == "CC"
        assert rec.adjustment == "standard_front_door"

    def test_manifest_contents(self, tmp_path):
        cfg = load_config(GOLDEN / "hotpotqa" / "config.json")
        run_dir = run_pipeline(cfg, tmp_path / "run").run_dir
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["artifact_version"]
        assert manifest["seeds"]["run"] == 0
        assert set(manifest["seeds"]["per_record"]) == {"hotpot-backflip-driver"}
        assert manifest["backends"]["completion"].startswith("replay")
        assert all(len(v) == 64 for k, v in manifest["input_digests"].items() if v)
        assert manifest["started_at"] and manifest["finished_at"]
        assert manifest["config"]["pipeline"]["K"] == 4

    def test_partial_failure_exit_1(self, tmp_path, capsys):
        case = _golden_config(tmp_path)
        rows = [json.loads(line) for line in (case / "dataset.jsonl").read_text().splitlines()]
        rows.append(dict(rows[0], id="unseen", question="A question with no fixture?"))
        write_jsonl(case / "dataset.jsonl", rows)
        code = cli.main(["run", "--config", str(case / "config.json"), "--out", str(tmp_path / "out")])
        assert code == 1
        assert "failed: unseen" in capsys.readouterr().err
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        failed = [r for r in report["records"] if r["error"]]
        assert [r["id"] for r in failed] == ["unseen"] and "FixtureMiss" in failed[0]["error"]
        assert report["aggregates"]["accuracy"] == 0.5

    def test_missing_demo_bank_fails_before_backends(self, mock_demo, tmp_path, monkeypatch):
        (mock_demo / "demos.jsonl").unlink()

        def explode(config):
            raise AssertionError("backend constructed")

        monkeypatch.setattr(pipeline, "build_backends", explode)
        code = cli.main(["run", "--config", str(mock_demo / "config.json"), "--out", str(tmp_path / "o")])
        assert code == 2 and not (tmp_path / "o").exists()

    def test_bank_smaller_than_L_is_a_config_error(self, mock_demo, tmp_path):
        lines = (mock_demo / "demos.jsonl").read_text().splitlines()
        (mock_demo / "demos.jsonl").write_text(lines[0] + "\n")
        assert cli.main(["run", "--config", str(mock_demo / "config.json"), "--out", str(tmp_path / "o")]) == 2

    def test_mock_runs_are_byte_identical(self, mock_demo, tmp_path, no_network):
        outs = []
        for name, jobs in (("a", 1), ("b", 4)):
            out = tmp_path / name
            assert cli.main(["run", "--config", str(mock_demo / "config.json"), "--out", str(out),
                             "--jobs", str(jobs)]) == 0
            outs.append(out)
        for rel in ("report.json", "report.csv", "logs/queries.jsonl"):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel

    def test_seed_override_changes_run(self, mock_demo, tmp_path):
        cfg = str(mock_demo / "config.json")
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
        a = json.loads((tmp_path / "a" / "report.json").read_text())
        b = json.loads((tmp_path / "b" / "report.json").read_text())
        assert a["seeds"]["run"] == 1 and b["seeds"]["run"] == 2

    def test_report_subcommand_reaggregates(self, tmp_path, capsys):
        cfg = GOLDEN / "hotpotqa" / "config.json"
        out = tmp_path / "run"
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 0
        before = (out / "report.json").read_bytes()
        (out / "report.json").unlink()
        capsys.readouterr()
        assert cli.main(["report", "--out", str(out)]) == 0
        assert (out / "report.json").read_bytes() == before
        assert json.loads(capsys.readouterr().out)["accuracy"] == 1.0

    def test_report_on_missing_dir(self, tmp_path):
        assert cli.main(["report", "--out", str(tmp_path / "nothing")]) == 2


def test_cluster_without_parseable_answer_is_dropped_and_weights_renormalized(tmp_path):
    demos = write_jsonl(tmp_path / "demos.jsonl", [
        {"id": "d", "question": "q?", "wrong_trace": "w", "correct_trace": "c", "answer": "a"}])
    embedder = MockEmbedder(dim=16)

    def responder(req):
        if "The improved reasoning process is:" not in req.prompt:
            return f"<think>\n#t{int(req.temperature * 4)}\n</think>\n\\boxed{{x}}"
        rep = req.prompt.rsplit("The provided reasoning process is: ", 1)[1]
        return "no answer here" if "#t0\n" in rep else "\\boxed{yes}"

    config = config_from_dict({"pipeline": {"L": 1}})
    pipe = Pipeline(config, MockBackend(responder), embedder, FixedRouter("CS"), load_demos(demos, embedder))
    outcome = pipe.run_query(DatasetRecord("r", "Is it?", "yes", "yes_no"), seed=0)
    log = outcome.log
    assert len(log["dropped_clusters"]) == 1
    weights = [c["weight"] for c in log["estimate"]["per_cluster"]]
    assert sum(weights) == pytest.approx(1.0, abs=1e-12)
    assert log["estimate"]["scores"] == {"yes": pytest.approx(1.0, abs=1e-12)}
    assert outcome.result.pred == "yes" and outcome.result.em == 1


class TestOtherCommands:
    def test_classify_question(self, capsys):
        assert cli.main(["classify", "--question", "How many legs do 3 spiders have?"]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["chosen"] == "CS" and out["adjustment"] == "standard_front_door"

    def test_classify_dataset(self, mock_demo, capsys):
        assert cli.main(["classify", "--config", str(mock_demo / "config.json"),
                         "--dataset", str(mock_demo / "dataset.jsonl")]) == 0
        lines = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(lines) == 5
        assert {line["adjustment"] for line in lines if line["id"] == "yn-2"} == {"conditional_front_door"}

    @pytest.mark.parametrize("mode", ["inject", "shuffle"])
    def test_perturb(self, mock_demo, tmp_path, mode):
        args = ["perturb", "--mode", mode, "--seed", "3", "--dataset", str(mock_demo / "dataset.jsonl"),
                "--pool", str(mock_demo / "distractors.txt")]
        assert cli.main(args + ["--out", str(tmp_path / "a.jsonl")]) == 0
        assert cli.main(args + ["--out", str(tmp_path / "b.jsonl")]) == 0
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        before = load_dataset(mock_demo / "dataset.jsonl")
        after = load_dataset(tmp_path / "a.jsonl")
        assert [r.id for r in after] == [r.id for r in before]
        for old, new in zip(before, after):
            assert len(new.evidence) == len(old.evidence)
            if mode == "shuffle":
                assert sorted(new.evidence) == sorted(old.evidence)

    def test_perturb_inject_without_pool(self, mock_demo, tmp_path):
        code = cli.main(["perturb", "--mode", "inject", "--seed", "1", "--dataset",
                         str(mock_demo / "dataset.jsonl"), "--out", str(tmp_path / "x.jsonl")])
        assert code == 2

    def test_eval(self, tmp_path, capsys):
        gold = write_jsonl(tmp_path / "gold.jsonl", [
            {"id": "1", "question": "q", "answer": "Kyle Busch"},
            {"id": "2", "question": "q", "answer": "edwards"},
            {"id": "3", "question": "q", "answer": "D", "task_kind": "multiple_choice",
             "choices": {"C": "home", "D": "office"}},
        ])
        preds = write_jsonl(tmp_path / "preds.jsonl", [
            {"id": "1", "pred": "kyle busch."}, {"id": "2", "pred": "Carl Edwards"}, {"id": "3", "pred": "Office"}])
        assert cli.main(["eval", "--predictions", str(preds), "--dataset", str(gold),
                         "--out", str(tmp_path / "m.json")]) == 0
        metrics = json.loads(capsys.readouterr().out)
        assert metrics["exact_match"] == pytest.approx(2 / 3)
        assert metrics["f1"] == pytest.approx((1 + 2 / 3 + 1) / 3)
        assert json.loads((tmp_path / "m.json").read_text())["rows"][1]["f1"] == pytest.approx(2 / 3)

    def test_bad_config_exit_2(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text('{"pipeline": {"K": -1}}')
        assert cli.main(["run", "--config", str(tmp_path / "c.json")]) == 2
        assert "error:" in capsys.readouterr().err
