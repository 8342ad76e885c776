import json

import pytest

from wallplan import reference_mission_path
from wallplan.cli import main
from wallplan.mission import dump_mission, mission_to_json
from wallplan.oracle import random_mission
from wallplan.schedule import load_schedule

REF = str(reference_mission_path())


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def counts(text):
    return {l.split()[1]: int(l.split()[2]) for l in text.splitlines() if l.startswith("tasks ")}


def test_plan_default(capsys, tmp_path):
    out_file = tmp_path / "s.json"
    code, out, _ = run(capsys, "plan", REF, "--alpha", "0.5", "--beta", "0.35", "--gamma", "0.15", "--out", str(out_file))
    assert code == 0
    assert counts(out)["ugv1"] == 0
    assert "makespan" in out and "cost" in out and "quality" in out
    assert load_schedule(out_file).entries


def test_plan_cost_only(capsys, reference_spec):
    code, out, _ = run(capsys, "plan", REF, "--alpha", "0", "--beta", "0", "--gamma", "1")
    assert code == 0
    n_red_green = sum(b.color.value in ("Red", "Green") for b in reference_spec.bricks)
    assert counts(out)["ugv1"] == n_red_green


def test_plan_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert run(capsys, "plan", str(bad))[0] == 2
    assert run(capsys, "plan", str(tmp_path / "missing.json"))[0] == 2
    code, _, err = run(capsys, "plan", REF, "--alpha", "0.9", "--beta", "0.9", "--gamma", "0")
    assert code == 3 and "sum to 1" in err
    assert run(capsys, "plan", REF, "--delta", "0.2")[0] == 3


def test_plan_failure_exit_code(capsys, tmp_path):
    spec = random_mission(1, 3, 1)
    doc = json.loads(json.dumps(mission_to_json(spec)))
    doc["agents"] = [{"id": "ugv1", "kind": "UGV", "speed": 0.5, "cost_rate": 0.2}]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "plan", str(path))
    assert code == 4 and err


def test_parse_error_exit():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_gen_and_validate(capsys, tmp_path):
    path = tmp_path / "m.json"
    assert run(capsys, "gen", "--seed", "1", "--bricks", "5", "--out", str(path))[0] == 0
    first = path.read_text()
    run(capsys, "gen", "--seed", "1", "--bricks", "5", "--out", str(path))
    assert path.read_text() == first
    code, out, _ = run(capsys, "validate", str(path))
    assert code == 0 and out.strip() == "ok"
    assert run(capsys, "gen", "--bricks", "0")[0] == 3


def test_validate_reports_problems(capsys, tmp_path):
    doc = json.loads(reference_mission_path().read_text())
    doc["bricks"][0]["length"] = 5.0
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "validate", str(path))
    assert code == 2 and "length" in out


def test_validate_schedule(capsys, tmp_path):
    s = tmp_path / "s.json"
    run(capsys, "plan", REF, "--out", str(s))
    assert run(capsys, "validate", REF, "--schedule", str(s))[0] == 0
    doc = json.loads(s.read_text())
    doc["entries"][0]["end"] += 50
    s.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "validate", REF, "--schedule", str(s))
    assert code == 4 and "Violation" in out


def test_render(capsys, tmp_path):
    s = tmp_path / "s.json"
    run(capsys, "plan", REF, "--out", str(s))
    svg = tmp_path / "g.svg"
    assert run(capsys, "render", str(s), "--out", str(svg))[0] == 0
    assert svg.read_text().count('class="seg"') == 32
    code, out, _ = run(capsys, "render", str(s), "--format", "text")
    assert code == 0 and out.startswith("makespan")
    junk = tmp_path / "junk.json"
    junk.write_text("[1, 2")
    assert run(capsys, "render", str(junk))[0] == 2


def test_coordinate_replay(capsys, tmp_path):
    trace = tmp_path / "t.ndjson"
    assert run(capsys, "coordinate", REF, "--seed", "4", "--trace", str(trace))[0] == 0
    code, out, _ = run(capsys, "coordinate", REF, "--seed", "4", "--replay", str(trace))
    assert code == 0 and "replay matches" in out
    assert run(capsys, "coordinate", REF, "--seed", "5", "--replay", str(trace))[0] == 4


def _corpus(tmp_path, n=2, bricks=3):
    folder = tmp_path / "corpus"
    folder.mkdir()
    for seed in range(1, n + 1):
        dump_mission(random_mission(seed, bricks, 3), folder / f"m{seed:02d}.json")
    return folder


def test_compare(capsys, tmp_path):
    folder = _corpus(tmp_path, n=1)
    out_file = tmp_path / "r.json"
    code, out, _ = run(capsys, "compare", str(folder), "--out", str(out_file))
    assert code == 0
    assert len(out.splitlines()) == 6
    rep = json.loads(out_file.read_text())
    assert all(r["method"]["std_gap"] == 0 for r in rep["rows"])


def test_compare_errors(capsys, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(capsys, "compare", str(empty))[0] == 5
    folder = _corpus(tmp_path, n=1, bricks=7)
    assert run(capsys, "compare", str(folder))[0] == 5
    assert run(capsys, "compare", str(folder), "--criteria-set", "1,1,1")[0] == 3


def test_custom_criteria_rows(capsys, tmp_path):
    folder = _corpus(tmp_path, n=1)
    code, out, _ = run(capsys, "compare", str(folder), "--criteria-set", "1,0,0;0,0,1", "--no-baseline")
    assert code == 0 and len(out.splitlines()) == 3
