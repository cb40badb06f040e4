import io
from pathlib import Path

import pytest

from darsim.cli import main
from darsim.scenario import CSV_HEADER, ParseError, parse_scenario, parse_sweep, run_sweep

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


def call(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_all_honest_exits_clean(tmp_path):
    tr, mt = tmp_path / "t.jsonl", tmp_path / "m.csv"
    code, out = call("run", str(SCEN / "all_honest.scn"), "--trace", str(tr), "--metrics", str(mt))
    assert code == 0
    assert tr.read_text().strip()
    assert mt.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    assert "status clean" in out


def test_backward_sim_template_breaches(tmp_path):
    tr = tmp_path / "t.jsonl"
    code, out = call("run", str(SCEN / "template_backsim.scn"), "--trace", str(tr), "--quiet")
    assert code == 2
    assert out == ""
    assert '"kind":"breach"' in tr.read_text()


def test_signoff_template_is_neutralized(tmp_path):
    code, _ = call("run", str(SCEN / "template_signoff.scn"), "--trace", str(tmp_path / "t"), "--quiet")
    assert code == 0


def test_check_reports_witnesses():
    code, out = call("check", str(SCEN / "template_signoff.scn"))
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "HM holds"
    assert lines[1].startswith("SR-HM violated_at(")
    assert lines[2] == "SR-HM-signoff holds"
    _, honest = call("check", str(SCEN / "all_honest.scn"))
    assert honest.splitlines()[:2] == ["HM holds", "SR-HM holds"]


def test_attack_exit_codes(tmp_path):
    code, out = call("attack", str(SCEN / "template_backsim.scn"))
    assert code == 2 and "violated-in X" in out
    code, _ = call("attack", str(SCEN / "all_honest.scn"), "--quiet")
    assert code == 1  # SR-HM holds, so there is no plan


def test_usage_and_parse_errors(tmp_path, capsys):
    assert call("bogus", "x")[0] == 1
    assert call("run")[0] == 1
    assert call("run", str(tmp_path / "missing.scn"))[0] == 1
    bad = tmp_path / "bad.scn"
    bad.write_text("darsim-scenario 1\nname x\ngadget dar\nfoo 3\n")
    assert call("run", str(bad))[0] == 1
    assert "bad.scn:4:1: unknown key 'foo'" in capsys.readouterr().err


def test_scenario_parser_strictness():
    base = "darsim-scenario 1\nname x\n"
    gen = "generate universe_size=10 epochs=2\n"
    assert parse_scenario(base + gen).generator.universe_size == 10
    for extra, where in [
        ("gadget maybe\n", 3),
        ("latency two\n", 3),
        ("generate colour=3\n", 3),
        ("generate universe_size=ten\n", 3),
    ]:
        with pytest.raises(ParseError) as exc:
            parse_scenario(base + extra)
        assert exc.value.line == where
    with pytest.raises(ParseError):
        parse_scenario(base)  # no schedule source
    with pytest.raises(ParseError):
        parse_scenario(base + gen + "schedule inline\ndarsim-schedule 1\n")  # no end
    with pytest.raises(ParseError):
        parse_scenario(base + gen + "name y\n")
    with pytest.raises(ParseError):
        parse_scenario("darsim-sweep 1\n")


def test_inline_schedule_error_positions():
    text = (SCEN / "all_honest.scn").read_text().replace("horizon 12", "horizon twelve")
    with pytest.raises(ParseError) as exc:
        parse_scenario(text)
    assert exc.value.line == text.splitlines().index("horizon twelve") + 1


def test_scenario_schedule_file(tmp_path):
    from darsim.schedule import dump, from_epochs

    dump(from_epochs(4, 3, [{0, 1, 2}] * 2, [{0, 1}, {0, 1, 2}], {}), tmp_path / "k.sched")
    (tmp_path / "x.scn").write_text("darsim-scenario 1\nname file\ntrace off\nschedule k.sched\n")
    code, out = call("run", str(tmp_path / "x.scn"))
    assert code == 0 and "boots=1" in out
    (tmp_path / "y.scn").write_text("darsim-scenario 1\nname file\nschedule nope.sched\n")
    assert call("run", str(tmp_path / "y.scn"))[0] == 1


def test_empty_sweep_writes_header_only(tmp_path):
    sweep_file = tmp_path / "e.sweep"
    sweep_file.write_text("darsim-sweep 1\nname empty\ngenerate universe_size=10\nfractions\n")
    out = tmp_path / "e.csv"
    assert call("sweep", str(sweep_file), "--metrics", str(out))[0] == 0
    assert out.read_text() == ",".join(CSV_HEADER) + "\n"


def test_sweep_rows_and_fallback_frequency():
    sw = parse_sweep(
        "darsim-sweep 1\nname ds\n"
        "generate universe_size=18 epoch_len=4 epochs=5 members=5 mode=signoff adversary_budget=6 corrupt_prob=1.0\n"
        "fractions 0 0.2\nseeds 3\ngadgets darso\nstrategy hidden-spend\ndouble_rate 1.0\nhidden_rate 0\nworkers 3\n"
    )
    res = run_sweep(sw)
    rows = res.rows()
    assert len(rows) == 2 * 3 + 2
    assert [r[1] for r in rows[-2:]] == ["mean", "mean"]
    for o in res.outcomes:
        assert not o.breached
        assert o.problems.get("fallback") == []


def test_sweep_is_deterministic_across_worker_counts(tmp_path):
    sweep_file = SCEN / "efficiency.sweep"
    text = sweep_file.read_text().replace("epochs=20", "epochs=4").replace("members=50", "members=8").replace("universe_size=80", "universe_size=20")
    a = parse_sweep(text)
    from dataclasses import replace

    assert run_sweep(a).csv() == run_sweep(replace(a, workers=1)).csv()
