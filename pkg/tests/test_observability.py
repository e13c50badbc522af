import json

import pytest
from loguru import logger

from latgp.observability import configure_logging, log_stage


@pytest.fixture
def records():
    captured = []
    sink = logger.add(lambda message: captured.append(message.record), level="DEBUG")
    yield captured
    logger.remove(sink)


def test_log_stage_reports_completion_with_context(records):
    with log_stage("method_evaluation", method="linreg"):
        pass

    record = records[-1]
    assert record["message"] == "method_evaluation_completed"
    assert record["extra"]["method"] == "linreg"
    assert record["extra"]["elapsed_ms"] >= 0


def test_log_stage_reports_failure_and_reraises(records):
    with pytest.raises(ValueError):
        with log_stage("command", command="fit"):
            raise ValueError("bad data")

    assert records[-1]["message"] == "command_failed"
    assert records[-1]["level"].name == "ERROR"


def test_log_dir_receives_json_lines(tmp_path, monkeypatch):
    monkeypatch.setenv("LATGP_LOG_DIR", str(tmp_path))
    configure_logging()

    logger.bind(event="dataset_loaded", sample_count=3).info("dataset_loaded")
    logger.complete()
    monkeypatch.delenv("LATGP_LOG_DIR")
    configure_logging()

    line = (tmp_path / "latgp.jsonl").read_text().splitlines()[-1]
    assert json.loads(line)["record"]["extra"]["sample_count"] == 3
