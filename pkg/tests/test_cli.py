import json

import pytest

from slatelab.cli import main


@pytest.fixture
def sim_files(tmp_path):
    sim_config = {
        "seed": 3, "n_courses": 40, "n_subcategories": 5, "n_visitors": 50,
        "n_days": 5,
    }
    experiment = {
        "experiment_id": "cli-exp", "name": "cli", "salt": "cli-salt",
        "traffic_fraction": 1.0,
        "variants": [
            {"variant_tag": "control", "weight": 0.5,
             "ranker_mode": "baseline", "is_control": True},
            {"variant_tag": "test", "weight": 0.5, "ranker_mode": "baseline"},
        ],
        "start_date": "2024-01-01", "end_date": "2024-01-05",
    }
    sim_path = tmp_path / "sim.json"
    exp_path = tmp_path / "exp.json"
    sim_path.write_text(json.dumps(sim_config), encoding="utf-8")
    exp_path.write_text(json.dumps(experiment), encoding="utf-8")
    return sim_path, exp_path


def run(data_dir, *argv):
    return main(["--data-dir", str(data_dir), *map(str, argv)])


class TestEndToEndCli:
    def test_full_workflow(self, tmp_path, sim_files, capsys):
        sim_path, exp_path = sim_files
        data = tmp_path / "data"
        events = tmp_path / "events.ndjson"

        assert run(data, "sim", "run", "--config", sim_path,
                   "--experiment", exp_path, "--out", events,
                   "--register") == 0
        out = capsys.readouterr().out
        assert "wrote" in out and "ingested" in out

        assert run(data, "experiment", "list") == 0
        assert "cli-exp" in capsys.readouterr().out

        assert run(data, "scan", "--limit", 3,
                   "--filter", "page_context=featured") == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["page_context"] == "featured"

        assert run(data, "features", "build") == 0
        assert "aggregates" in capsys.readouterr().out
        assert (data / "features").exists()

        assert run(data, "features", "vector", "--visitor", "v000001",
                   "--course", 1) == 0
        vector = json.loads(capsys.readouterr().out)
        assert "epmi" in vector and "page_context" in vector

        assert run(data, "model", "train", "--target", "epmi",
                   "--min-leaf-weight", 20) == 0
        out = capsys.readouterr().out
        assert "saved epmi_tree v1" in out and "[active]" in out
        assert "holdout" in out

        assert run(data, "model", "list") == 0
        assert "*active*" in capsys.readouterr().out

        assert run(data, "score", "one", "--visitor", "v000001",
                   "--course", 1, "--preset", "enrollment") == 0
        scored = json.loads(capsys.readouterr().out)
        assert scored["score"] >= 0

        assert run(data, "score", "batch", "--preset", "enrollment",
                   "--limit-visitors", 10, "--partitions", 2) == 0
        assert "scored 10 visitors" in capsys.readouterr().out

        assert run(data, "cube", "build", "--experiment", "cli-exp") == 0
        assert "analytics rows" in capsys.readouterr().out

        assert run(data, "cube", "query", "--experiment", "cli-exp",
                   "--numerator", "_overall", "--measure", "clicks") == 0
        rows = [json.loads(line) for line in
                capsys.readouterr().out.strip().splitlines()]
        assert rows and rows[0]["measure"] == "clicks"
        assert "significant_95" in rows[0]

    def test_dimension_register_and_dimension_filtered_scan(self, tmp_path,
                                                            capsys):
        data = tmp_path / "data"
        events = tmp_path / "in.ndjson"
        events.write_text(
            '{"visitor_id": "v1", "course_id": 1, "date": "2024-01-01", '
            '"impressions": 2}\n'
            '{"visitor_id": "v1", "course_id": 2, "date": "2024-01-01", '
            '"impressions": 1}\n', encoding="utf-8")
        run(data, "ingest", events)
        dim_csv = tmp_path / "course.csv"
        dim_csv.write_text(
            "course_id,subcategory_id,category_id,price,published_date\n"
            "1,10,2,19.99,2023-05-01\n2,11,3,0.0,2023-06-01\n",
            encoding="utf-8")
        capsys.readouterr()
        assert run(data, "dimension", "register", "course",
                   "--keys", "course_id", "--csv", dim_csv) == 0
        assert "registered dimension course (2 rows)" in \
            capsys.readouterr().out
        assert run(data, "scan", "--filter", "course.subcategory_id=11") == 0
        rows = [json.loads(line) for line in
                capsys.readouterr().out.strip().splitlines()]
        assert [r["course_id"] for r in rows] == [2]

    def test_ingest_and_compact_commands(self, tmp_path, capsys):
        data = tmp_path / "data"
        events = tmp_path / "in.ndjson"
        events.write_text(
            '{"visitor_id": "v1", "course_id": 1, "date": "2024-01-01", '
            '"impressions": 2}\n', encoding="utf-8")
        assert run(data, "ingest", events) == 0
        out = capsys.readouterr().out
        assert "created=1" in out and "compacted snapshot 1" in out

    def test_ingest_reports_rejects_with_exit_code(self, tmp_path, capsys):
        data = tmp_path / "data"
        events = tmp_path / "bad.ndjson"
        events.write_text("{oops\n", encoding="utf-8")
        assert run(data, "ingest", events) == 1
        err = capsys.readouterr().err
        assert "line 1" in err

    def test_model_activate_roundtrip(self, tmp_path, sim_files, capsys):
        sim_path, exp_path = sim_files
        data = tmp_path / "data"
        run(data, "sim", "run", "--config", sim_path, "--experiment",
            exp_path, "--out", tmp_path / "e.ndjson", "--register")
        run(data, "model", "train", "--target", "epmi",
            "--min-leaf-weight", 20)
        run(data, "model", "train", "--target", "epmi",
            "--min-leaf-weight", 50)
        capsys.readouterr()
        assert run(data, "model", "activate", "--model-id", "epmi_tree",
                   "--version", 2) == 0
        assert "activated epmi_tree v2" in capsys.readouterr().out
