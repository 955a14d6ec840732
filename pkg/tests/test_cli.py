import csv
import io
import json

import pytest

from tau_toolkit.cli import main, summary_csv
from tau_toolkit.core import save_manifest


@pytest.fixture
def manifest_path(tmp_path, test_manifest):
    path = tmp_path / "manifest.jsonl"
    save_manifest(test_manifest, path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_no_subcommand(capsys):
    code, _, err = run(capsys)
    assert code == 2 and "subcommand" in err


def test_bad_flag(capsys):
    assert run(capsys, "stats", "--nope")[0] == 2


def test_help_lists_config_defaults(capsys):
    code, out, _ = run(capsys, "--help")
    assert code == 0
    assert "grpo.beta = 0.04" in out and "TAU_JUDGE_API_KEY" in out


def test_reward_check(capsys):
    code, out, _ = run(capsys, "reward-check")
    assert code == 0
    lines = out.splitlines()
    assert lines[-1] == "OK"
    assert lines[1].split() == ["A", "1.50", "-1.50", "-1.50", "-1.50"]
    assert lines[5].split() == ["Invalid", "-2.00", "-2.00", "-2.00", "-2.00"]


def test_stats(capsys, manifest_path):
    code, out, _ = run(capsys, "stats", "--manifest", manifest_path)
    assert code == 0
    doc = json.loads(out)
    assert doc["total_clips"] == 42
    assert doc["class_counts"] == {"A": 8, "B": 12, "C": 12, "D": 10}


def test_missing_manifest(capsys, tmp_path):
    code, _, err = run(capsys, "stats", "--manifest", tmp_path / "absent.jsonl")
    assert code == 1 and err.startswith("tau:")


def test_split(capsys, manifest_path, tmp_path):
    out_path = tmp_path / "split.json"
    assert run(capsys, "split", "--manifest", manifest_path, "--test-count", 10, "--seed", 3,
               "--out", out_path)[0] == 0
    doc = json.loads(out_path.read_text())
    assert len(doc["test"]) == 10 and len(doc["train"]) == 32


def test_plan_byte_stable(capsys):
    first = run(capsys, "plan", "--role", "classifier")[1]
    second = run(capsys, "plan", "--role", "classifier")[1]
    assert first == second
    assert json.loads(first)["stages"][-1]["method"] == "GRPO"


def test_train_grpo_toy(capsys, tmp_path):
    curve = tmp_path / "curve.csv"
    code, out, _ = run(capsys, "train-grpo-toy", "--iters", 5, "--seed", 1, "--contexts", 50, "--out", curve)
    assert code == 0
    rows = list(csv.reader(curve.open()))
    assert rows[0] == ["iteration", "mean_reward", "fn_rate", "fp_rate"]
    assert len(rows) == 6
    assert json.loads(out)["iterations"] == 5


def test_train_grpo_bad_mix(capsys):
    assert run(capsys, "train-grpo-toy", "--class-mix", "1:1")[0] == 1


def test_config_file(capsys, tmp_path):
    cfg = tmp_path / "tau.ini"
    cfg.write_text("[grpo]\niterations = 3\n")
    code, out, _ = run(capsys, "--config", cfg, "train-grpo-toy", "--contexts", 20)
    assert code == 0 and json.loads(out)["iterations"] == 3
    cfg.write_text("[grpo]\nmystery = 1\n")
    assert run(capsys, "--config", cfg, "reward-check")[0] == 1


def test_eval_classify_predictions(capsys, tmp_path):
    preds = tmp_path / "preds.jsonl"
    rows = [{"clip_id": "a", "gt": "A", "pred": "A"}, {"clip_id": "b", "gt": "B", "pred": "Invalid"},
            {"clip_id": "c", "gt": "C", "pred": "(C)"}]
    preds.write_text("".join(json.dumps(r) + "\n" for r in rows))
    code, out, _ = run(capsys, "eval-classify", "--predictions", preds)
    assert code == 0
    doc = json.loads(out)
    assert doc["accuracy_4"] == pytest.approx(2 / 3)
    assert doc["fn"] == 1 and doc["invalid"] == [0, 1, 0, 0]


def _rule_predictions(path, manifest):
    with path.open("w") as f:
        for c in manifest.clips:
            if c.label.is_abnormal:
                ann = manifest.annotations[c.clip_id]
                f.write(json.dumps({"clip_id": c.clip_id, "summary": ann.summary,
                                    "annotation": ann.to_dict()}) + "\n")


def test_eval_summarize_rule_and_replay(capsys, tmp_path, manifest_path, test_manifest):
    preds = tmp_path / "summaries.jsonl"
    _rule_predictions(preds, test_manifest)
    verdicts = tmp_path / "verdicts.jsonl"
    code, out, _ = run(capsys, "eval-summarize", "--manifest", manifest_path, "--predictions", preds,
                       "--judge", "rule", "--save-verdicts", verdicts)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 35 and rows[-1]["clip_id"] == "mean"
    assert float(rows[-1]["bleu"]) == pytest.approx(1.0)
    code, replay_out, _ = run(capsys, "eval-summarize", "--manifest", manifest_path, "--predictions", preds,
                              "--judge", "replay", "--verdicts", verdicts)
    assert code == 0 and replay_out == out


def test_eval_summarize_replay_needs_file(capsys, manifest_path, tmp_path):
    preds = tmp_path / "p.jsonl"
    preds.write_text("")
    assert run(capsys, "eval-summarize", "--manifest", manifest_path, "--predictions", preds,
               "--judge", "replay")[0] == 2


def test_summary_csv_skips_missing_verdicts():
    text = summary_csv([
        {"clip_id": "a", "bleu": 1.0, "rouge_l": 1.0, "meteor": 0.5, "g_score": 8.0},
        {"clip_id": "b", "bleu": 0.0, "rouge_l": 0.0, "meteor": 0.0, "g_score": None},
    ])
    lines = text.splitlines()
    assert lines[2] == "b,0.000000,0.000000,0.000000,"
    assert lines[3] == "mean,0.500000,0.500000,0.250000,8.000000"


def test_run_pipeline_and_profile(capsys, tmp_path, manifest_path):
    script = tmp_path / "mock.json"
    script.write_text(json.dumps({"classifier": {"perfect": True}, "summarizer": {"default": "summary"}}))
    report = tmp_path / "report.json"
    code, _, _ = run(capsys, "run-pipeline", "--manifest", manifest_path, "--mock-script", script, "--out", report)
    assert code == 0
    doc = json.loads(report.read_text())
    assert doc["aggregates"]["routed"] == 34 and doc["aggregates"]["errors"] == 0

    code, out, _ = run(capsys, "eval-classify", "--report", report)
    assert code == 0 and json.loads(out)["accuracy_4"] == 1.0

    twin = tmp_path / "profile.json"
    code, out, _ = run(capsys, "profile", "--report", report, "--json-out", twin)
    assert code == 0
    assert out.splitlines()[0].split() == ["Metric", "Classifier", "Summarizer", "End-to-End"]
    prof = json.loads(twin.read_text())
    assert prof["classifier"]["clip_count"] == 42 and prof["summarizer"]["clip_count"] == 34


def test_run_pipeline_without_backends(capsys, manifest_path):
    assert run(capsys, "run-pipeline", "--manifest", manifest_path)[0] == 1
