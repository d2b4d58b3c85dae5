import json

import pytest

from medaid.cli import main
from medaid.corpus import read_jsonl
from medaid.evalkit import AnnotationMatrix, Scale, write_annotation_file


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestDispatch:
    def test_unknown_subcommand_exits_1(self, capsys):
        code, _out, err = run(capsys, "nosuch")
        assert code == 1
        assert "No such command" in err or "Usage" in err

    def test_help_exits_0(self, capsys):
        code, out, _ = run(capsys, "--help")
        assert code == 0
        assert "generate" in out and "serve" in out

    def test_missing_required_option_exits_1(self, capsys):
        code, _, err = run(capsys, "stats")
        assert code == 1
        assert "--in" in err

    def test_missing_file_exits_1(self, capsys):
        code, _, err = run(capsys, "stats", "--in", "/nonexistent/file.json")
        assert code == 1


class TestStats:
    def test_table_output(self, capsys, fixture_corpus_path):
        code, out, _ = run(capsys, "stats", "--in", str(fixture_corpus_path))
        assert code == 0
        assert "Avg Turns" in out and "Total" in out
        assert "50" in out

    def test_json_output(self, capsys, fixture_corpus_path):
        code, out, _ = run(capsys, "stats", "--in", str(fixture_corpus_path), "--json")
        assert code == 0
        data = json.loads(out)
        assert data["total_dialogues"] == 50
        assert data["min_turns"] <= data["avg_turns"] <= data["max_turns"]


class TestFormat:
    def test_line_count_matches(self, capsys, tmp_path, fixture_corpus_path):
        out_path = tmp_path / "sg.jsonl"
        code, _, _ = run(
            capsys, "format", "--in", str(fixture_corpus_path), "--out", str(out_path)
        )
        assert code == 0
        lines = [json.loads(l) for l in out_path.read_text().splitlines() if l.strip()]
        assert len(lines) == 50
        for line in lines:
            conv = line["conversations"]
            assert conv[0]["from"] == "system"
            assert conv[-1]["from"] == "gpt"
            assert line["gold"]  # fixture dialogues all end in a diagnosis


class TestPipeline:
    def test_generate_filter_format(self, capsys, tmp_path):
        out = tmp_path / "syn.jsonl"
        code, stdout, _ = run(
            capsys, "generate", "--count", "6", "--out", str(out),
            "--checkpoint", str(tmp_path / "ckpt.json"), "--seed", "3", "--mock",
        )
        assert code == 0
        assert "accepted 6" in stdout
        assert len(read_jsonl(out)) == 6

        filtered = tmp_path / "filtered.jsonl"
        report = tmp_path / "report.json"
        code, stdout, _ = run(
            capsys, "filter", "--in", str(out), "--out", str(filtered),
            "--report", str(report),
        )
        assert code == 0
        assert report.exists()
        payload = json.loads(report.read_text())
        assert payload["input"] == 6
        assert payload["kept"] == len(read_jsonl(filtered))

        formatted = tmp_path / "sg.jsonl"
        code, _, _ = run(capsys, "format", "--in", str(filtered), "--out", str(formatted))
        assert code == 0
        assert len(formatted.read_text().splitlines()) == payload["kept"]

    def test_generate_resume_cli(self, capsys, tmp_path):
        out = tmp_path / "syn.jsonl"
        args = [
            "generate", "--count", "4", "--out", str(out),
            "--checkpoint", str(tmp_path / "c.json"), "--seed", "5", "--mock",
        ]
        assert main(args) == 0
        first = out.read_bytes()
        assert main(args) == 0  # resume finds nothing to do
        assert out.read_bytes() == first
        capsys.readouterr()

    def test_translate_identity(self, capsys, tmp_path, fixture_corpus_path):
        corpus = tmp_path / "en.jsonl"
        run(capsys, "format", "--in", str(fixture_corpus_path), "--out", tmp_path / "x")
        # build a small English corpus via generate --mock
        run(
            capsys, "generate", "--count", "2", "--out", str(corpus),
            "--checkpoint", str(tmp_path / "c2.json"), "--seed", "8", "--mock",
        )
        out = tmp_path / "parallel.jsonl"
        code, stdout, _ = run(
            capsys, "translate", "--in", str(corpus), "--out", str(out),
            "--langs", "hi,ar", "--identity-mock",
        )
        assert code == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 2
        assert set(lines[0]["translations"]) == {"en", "hi", "ar"}


class TestEval:
    def test_accuracy_and_per_disease(self, capsys, table5_log_path):
        code, out, _ = run(capsys, "eval", "accuracy", "--in", str(table5_log_path), "--json")
        assert code == 0
        assert json.loads(out)["records"] == 235

        code, out, _ = run(capsys, "eval", "per-disease", "--in", str(table5_log_path))
        assert code == 0
        assert "Rhinitis" in out and "100.0%" in out
        assert "Pneumonia" in out and "60.0%" in out

    def test_confusion(self, capsys, table5_log_path):
        code, out, _ = run(
            capsys, "eval", "confusion", "--in", str(table5_log_path), "--top-k", "2"
        )
        assert code == 0
        lines = [l for l in out.splitlines() if l.strip()]
        assert "Pneumonia" in lines[1] and "Asthma" in lines[1] and "3" in lines[1]
        assert "Esophagitis" in lines[2] and "Enteritis" in lines[2]

    def test_alpha_and_safety(self, capsys, tmp_path):
        likert = AnnotationMatrix(
            units=["u1", "u2"],
            raters=["a", "b"],
            cells={("u1", "a"): 4, ("u1", "b"): 4, ("u2", "a"): 2, ("u2", "b"): 2},
            scale=Scale.LIKERT,
        )
        likert_path = tmp_path / "likert.json"
        write_annotation_file(likert, likert_path)
        code, out, _ = run(capsys, "eval", "alpha", "--in", str(likert_path), "--json")
        assert code == 0
        assert json.loads(out)["alpha"] == 1.0

        cells = {}
        for rater, passes in (("e1", 96), ("e2", 94), ("e3", 96)):
            for unit in range(100):
                cells[(f"u{unit}", rater)] = 1 if unit < passes else 0
        safety = AnnotationMatrix(
            units=[f"u{i}" for i in range(100)],
            raters=["e1", "e2", "e3"],
            cells=cells,
            scale=Scale.PASS_FAIL,
        )
        safety_path = tmp_path / "safety.json"
        write_annotation_file(safety, safety_path)
        code, out, _ = run(capsys, "eval", "safety", "--in", str(safety_path))
        assert code == 0
        assert "95.3%" in out

    def test_reward_and_score_rewards(self, capsys, tmp_path):
        corpus = tmp_path / "syn.jsonl"
        run(
            capsys, "generate", "--count", "3", "--out", str(corpus),
            "--checkpoint", str(tmp_path / "c.json"), "--seed", "4", "--mock",
        )
        sharegpt = tmp_path / "sg.jsonl"
        run(capsys, "format", "--in", str(corpus), "--out", str(sharegpt))
        code, out, _ = run(capsys, "eval", "reward", "--in", str(sharegpt), "--json")
        assert code == 0
        data = json.loads(out)
        assert data["transcripts"] == 3
        assert 0.0 <= data["total"] <= 1.75

        scored = tmp_path / "scores.jsonl"
        code, out, _ = run(
            capsys, "score-rewards", "--in", str(sharegpt), "--out", str(scored)
        )
        assert code == 0
        assert "scored 3 transcripts" in out
        assert len(scored.read_text().splitlines()) == 3

    def test_reward_requires_gold(self, capsys, tmp_path):
        path = tmp_path / "nogold.jsonl"
        path.write_text(json.dumps({"conversations": [
            {"from": "system", "value": "s"},
            {"from": "human", "value": "h"},
            {"from": "gpt", "value": "[PREDICT] Asthma"},
        ]}) + "\n")
        code, _, err = run(capsys, "eval", "reward", "--in", str(path))
        assert code == 1
        assert "gold" in err
