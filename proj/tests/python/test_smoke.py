import json
import os
from pathlib import Path

import pytest

import codeccap

FIXTURES = Path(os.environ.get("CODECCAP_FIXTURES", Path(__file__).resolve().parents[1] / "fixtures"))
CORPUS = FIXTURES / "corpus"


def test_gap_statistics_and_mode():
    assert codeccap.gap_cv([0, 2, 4, 6]) == 0.0
    assert codeccap.gap_cv([0, 1, 4]) == pytest.approx(0.5)
    assert codeccap.select_mode([0, 2, 4, 6]) == "content_primary"
    assert codeccap.select_mode([0, 1, 4], tau_gop=0.5) == "iframe_primary"


def test_plan_tiles_the_video():
    segs = codeccap.plan_segments("v", 31.0, [0, 2, 4, 6, 8], cuts=[3.0, 21.0, 25.0])
    assert segs[0]["start_s"] == 0.0
    assert segs[-1]["end_s"] == 31.0
    for a, b in zip(segs, segs[1:]):
        assert a["end_s"] == b["start_s"]


def test_bad_config_raises_input_error():
    with pytest.raises(codeccap.InputError):
        codeccap.plan_segments("v", 10.0, [0], max_segment_s=4.0, min_segment_s=3.0)


def test_golden_document_round_trip():
    golden = (CORPUS / "golden" / "news_clip_document.json").read_text()
    codeccap.validate_document(golden)
    assert codeccap.aggregate_document(golden) == golden
    with pytest.raises(codeccap.InputError):
        codeccap.validate_document('{"video": {}}')


def test_stats_and_redundancy():
    golden = (CORPUS / "golden" / "news_clip_document.json").read_text()
    stats = json.loads(codeccap.compute_stats([golden]))
    assert stats["median_segments"] == 4
    baseline = (CORPUS / "videos" / "news_clip" / "baseline.json").read_text()
    report = json.loads(codeccap.redundancy_report(golden, baseline))
    assert report["baseline_tokens"] > report["codec_tokens"]
    assert report["duplicate_times"] == [1, 2, 22, 23, 24]


def test_qa_helpers():
    names = codeccap.capability_names()
    assert len(names) == 14 and names == sorted(names)
    assert codeccap.phase_a_classify(0, [0, 0, 1]) == "normal"
    assert codeccap.phase_b_classify([True, True, True]) == "consensus_hard"
    assert codeccap.relabel_capability(["speed", "speed", "counting", "unknown"]) == "speed"
    alloc = codeccap.allocate_budget({n: (41 if n == "trajectory" else 300) for n in names}, 1000)
    assert sum(alloc.values()) == 1000
    assert alloc["trajectory"] == 41
    assert list(codeccap.largest_remainder(74)) == [22, 26, 19, 7]


def test_cli_in_process():
    rc, out, _ = codeccap.run_cli(["--help"])
    assert rc == 0 and "forge" in out
    rc, _, err = codeccap.run_cli(["nonsense"])
    assert rc == 1
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 1
