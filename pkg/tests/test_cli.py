import json
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from gibbslab import cli
from gibbslab.cli import ConfigError, ExperimentConfig, config_hash, emit_config, parse_config

configs = st.builds(
    ExperimentConfig,
    experiment=st.sampled_from(cli.SUBCOMMANDS),
    beta=st.floats(0, 5, allow_nan=False),
    n=st.lists(st.integers(0, 50), min_size=1, max_size=4).map(tuple),
    pattern=st.sampled_from(["single-minus", "all-plus", "sampled", "file:/tmp/x.txt"]),
    replicas=st.integers(0, 10 ** 6),
    cap=st.one_of(st.none(), st.integers(1, 4096)),
    seed=st.integers(0, 2 ** 63),
    params=st.dictionaries(st.sampled_from(["q", "width", "t", "side", "eps"]),
                           st.text("abc0123456789.,:-", min_size=1, max_size=8)),
)


@given(configs)
def test_config_round_trip(cfg):
    back = parse_config(emit_config(cfg))
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


@pytest.mark.parametrize("text,field", [
    ("[experiment]\nid = nope\n", "experiment"),
    ("[experiment]\nid = occurrence\nbeta = -1\n", "beta"),
    ("[experiment]\nid = occurrence\nreplicas = many\n", "replicas"),
    ("[experiment]\nid = occurrence\ncolour = red\n", "unknown keys"),
    ("[params]\nq = 1\n", "experiment"),
])
def test_invalid_configs(tmp_path, capsys, text, field):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    code = cli.main(["occurrence", "--config", str(path), "--out", str(tmp_path)])
    assert code == 2
    assert field in capsys.readouterr().err


def test_invalid_flag_value(tmp_path, capsys):
    assert cli.main(["pressure", "--beta", "-0.5", "--out", str(tmp_path)]) == 2
    assert "beta" in capsys.readouterr().err


def test_config_file_drives_run(tmp_path):
    cfg = ExperimentConfig("pressure", beta=0.5, params={"q": "-1,0,1", "width": "6"})
    path = tmp_path / "run.ini"
    path.write_text(emit_config(cfg))
    assert cli.main(["pressure", "--config", str(path), "--out", str(tmp_path), "--quiet"]) == 0
    run = tmp_path / f"pressure-{config_hash(cfg)[:12]}"
    text = (run / "summary.csv").read_text()
    # the config is echoed verbatim at the top of every output file
    assert text.startswith("".join(f"# {x}\n" for x in emit_config(cfg).splitlines()))
    man = json.loads((run / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(cfg) and man["status"] == "complete"
    assert {"numpy", "scipy", "numba", "gibbslab"} <= set(man["versions"])


def test_occurrence_example_writes_records_and_reports(tmp_path):
    argv = ["occurrence", "--beta", "1.0", "--n", "2", "--replicas", "600", "--seed", "7",
            "--out", str(tmp_path), "--quiet"]
    assert cli.main(argv) == 0
    run = next(tmp_path.glob("occurrence-*"))
    lines = (run / "records.jsonl").read_text().splitlines()
    head = json.loads(lines[0])["header"]
    assert head["operation"] == "occurrence" and head["module"] == "gibbslab"
    assert len(head["config_hash"]) == 64
    assert len(lines) == 601
    rep = json.loads((run / "reports.jsonl").read_text().splitlines()[1])
    assert rep["law"] == "exponential_occurrence"
    assert set(("statistic", "threshold", "verdict", "sample_size")) <= set(rep)


def test_same_command_twice_is_identical(tmp_path):
    argv = ["matching", "--beta", "0.6", "--n", "1", "--replicas", "40", "--cap", "24", "--seed", "2", "--quiet"]
    assert cli.main(argv + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(argv + ["--out", str(tmp_path / "b")]) == 0
    da, db = cli.payload_digests(tmp_path / "a"), cli.payload_digests(tmp_path / "b")
    assert da and da == db


def test_threads_do_not_change_bytes(tmp_path):
    argv = ["return", "--beta", "1.0", "--n", "1", "--replicas", "250", "--cap", "40", "--seed", "3", "--quiet"]
    assert cli.main(argv + ["--out", str(tmp_path / "one")]) == 0
    assert cli.main(argv + ["--out", str(tmp_path / "four"), "--threads", "4"]) == 0
    assert cli.payload_digests(tmp_path / "one") == cli.payload_digests(tmp_path / "four")


def test_partial_run_resumes_from_manifest(tmp_path, capsys):
    argv = ["occurrence", "--beta", "1.0", "--replicas", "450", "--cap", "32", "--seed", "4", "--quiet"]
    assert cli.main(argv + ["--out", str(tmp_path / "full")]) == 0
    assert cli.main(argv + ["--out", str(tmp_path / "cut")]) == 0
    run = next((tmp_path / "cut").glob("occurrence-*"))
    rec = run / "records.jsonl"
    lines = rec.read_text().splitlines()
    rec.write_text("\n".join(lines[:201]) + "\n")
    man = json.loads((run / "manifest.json").read_text())
    man.update(status="partial", completed_replicas=200)
    (run / "manifest.json").write_text(json.dumps(man))
    for f in ("reports.jsonl", "summary.csv"):
        (run / f).unlink()
    capsys.readouterr()
    assert cli.main([a for a in argv if a != "--quiet"] + ["--out", str(tmp_path / "cut")]) == 0
    assert "resuming after 200" in capsys.readouterr().out
    assert cli.payload_digests(tmp_path / "full") == cli.payload_digests(tmp_path / "cut")


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["ldp", "--beta", "0.4", "--q=-1,0", "--width", "6", "--quiet"]) == 0
    assert list((tmp_path / "envroot").glob("ldp-*/summary.csv"))


def test_pattern_sources(tmp_path):
    from gibbslab.lattice import Pattern, format_pattern
    import numpy as np
    f = tmp_path / "p.txt"
    f.write_text(format_pattern(Pattern.from_array(np.array([[1, -1], [-1, -1]]))))
    cfg = ExperimentConfig("occurrence", pattern=f"file:{f}")
    assert cli.resolve_pattern(cfg).as_array().tolist() == [[1, -1], [-1, -1]]
    sampled = cli.resolve_pattern(ExperimentConfig("occurrence", n=(3,), pattern="sampled"))
    assert sampled.box_shape() == (4, 4)
    assert cli.resolve_pattern(ExperimentConfig("occurrence", n=(2,))).as_array()[0, 0] == -1
    with pytest.raises(ConfigError):
        cli.resolve_pattern(ExperimentConfig("occurrence", pattern="mystery"))


def test_suite_subcommand_parses():
    args = cli.build_parser().parse_args(["suite", "acceptance", "--criteria", "9,10"])
    cfg = cli.config_from_args(args)
    assert cfg.experiment == "suite" and cfg.params["criteria"] == "9,10"


def test_print_config(capsys):
    assert cli.main(["entropy", "--beta", "1", "--n", "4,6", "--print-config"]) == 0
    assert parse_config(capsys.readouterr().out).n == (4, 6)
