import csv
import io
import json

import numpy as np
import pytest

from combphase.errors import WaveformFormatError
from combphase.expcli import cli
from combphase.expcli.runner import CSV_COLUMNS, expand_points, format_csv, run_scenario
from combphase.expcli.scenario import ScenarioError, build_scenario, load_scenario
from combphase.expcli.waveio import HEADER_SIZE, export_waveform, import_waveform
from combphase.sigcore import Frame

SMALL = {
    "run": {"seed": 2, "n_symbols": 8192},
    "channels": {"lines": [0, 1], "preamble_symbols": 1024},
    "experiment": {"discard_symbols": 1024},
    "dsp": {"modes": ["independent"], "cma_preconv_symbols": 4096},
}


def _small(**sections):
    data = json.loads(json.dumps(SMALL))
    for name, fields in sections.items():
        data.setdefault(name, {}).update(fields)
    return build_scenario(data)


def _toml(d: dict) -> str:
    lines = []
    for sec, fields in d.items():
        lines.append(f"[{sec}]")
        for k, v in fields.items():
            lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# --------------------------------------------------------------------------
# scenario validation and identity


def test_bundled_scenarios_validate():
    for name in ("launch_power", "master_separation", "all_modes"):
        scn = load_scenario(f"scenarios/{name}.toml")
        assert len(scn.digest()) == 64


def test_validation_lists_every_offending_field():
    with pytest.raises(ScenarioError) as info:
        build_scenario({"run": {"n_symbols": 10, "sede": 3},
                        "channels": {"rolloff": 2.0}})
    fields = info.value.fields
    assert "run.n_symbols" in fields and "run.sede" in fields and "channels.rolloff" in fields


def test_cross_checks():
    with pytest.raises(ScenarioError, match="not present in both combs"):
        _small(channels={"lines": [0, 30]})
    with pytest.raises(ScenarioError, match="cma_preconv_symbols"):
        _small(dsp={"cma_preconv_symbols": 16384})
    with pytest.raises(ScenarioError, match="separations"):
        _small(experiment={"kind": "master_separation", "separations": []})


def test_hash_is_canonical():
    a = _small()
    b = _small(run={"output_dir": "elsewhere", "threads": 4})
    c = _small(link={"snr_db": 21.0})
    assert a.digest() == b.digest() != c.digest()
    # key order in the source file does not matter
    d = build_scenario(dict(reversed(list(json.loads(json.dumps(SMALL)).items()))))
    assert d.digest() == a.digest()


def test_override_rejects_unknown_key():
    with pytest.raises(ScenarioError):
        _small().with_override("link.snr", 3)
    assert _small().with_override("link.snr_db", 3).link.snr_db == 3


# --------------------------------------------------------------------------
# waveform files


def _frame(npol=2, n=1000):
    rng = np.random.default_rng(npol)
    pols = [(rng.standard_normal(n) + 1j * rng.standard_normal(n)).astype(np.complex64)
            .astype(complex) for _ in range(npol)]
    return Frame(pols[0], pols[1] if npol == 2 else None, 40e9 * (1 + 1e-9), 1.25e-9)


@pytest.mark.parametrize("npol", [1, 2])
def test_waveform_round_trip_bit_identical(tmp_path, npol):
    fr = _frame(npol)
    path = tmp_path / "w.cpwf"
    export_waveform(fr, path)
    back = import_waveform(path)
    assert back.npol == npol
    assert back.sample_rate == fr.sample_rate and back.t0 == fr.t0
    for a, b in zip(back.pols, fr.pols):
        assert np.array_equal(a, b)
    assert path.stat().st_size == HEADER_SIZE + npol * len(fr) * 8


def test_waveform_truncation_reports_offset(tmp_path):
    path = tmp_path / "w.cpwf"
    export_waveform(_frame(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(WaveformFormatError, match=f"offset {len(raw) - 5}"):
        import_waveform(path)
    path.write_bytes(raw[:20])
    with pytest.raises(WaveformFormatError, match="header truncated at byte offset 20"):
        import_waveform(path)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(WaveformFormatError, match="offset 0"):
        import_waveform(path)


# --------------------------------------------------------------------------
# runs and CSV


def test_csv_formatting_and_column_order():
    row = {c: "" for c in CSV_COLUMNS}
    row.update(point=0, mode="joint", channel=1, gmi_bits_per_4d=1 / 3, tracking_failed=True)
    text = format_csv([row])
    head, body = text.splitlines()
    assert head == ",".join(CSV_COLUMNS)
    assert "0.333333333" in body and body.split(",")[CSV_COLUMNS.index("tracking_failed")] == "1"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    scn = _small(dsp={"modes": ["independent", "master_slave", "joint"]})
    out = tmp_path_factory.mktemp("run")
    return scn, out, run_scenario(scn, out)


def test_run_writes_rows_per_mode_and_channel(small_run):
    scn, out, (record, text) = small_run
    rows = _rows(text)
    assert [(r["mode"], r["channel"]) for r in rows] == [
        ("independent", "0"), ("independent", "1"), ("joint", "0"), ("joint", "1"),
        ("master_slave", "0"), ("master_slave", "1")]
    assert all(float(r["gmi_bits_per_4d"]) > 9 for r in rows)
    assert (out / "results.csv").read_text() == text
    rec = json.loads((out / "run_record.json").read_text())
    assert rec["scenario_hash"] == scn.digest() and rec["failures"] == 0
    ms = rec["points"][0]["modes"]["master_slave"]["bps_evals"]
    assert ms["(1, 0)"] == ms["(1, 1)"] == 0 and ms["(0, 0)"] > 0


def test_same_seed_byte_identical_across_threads(small_run):
    scn, _, (_, text) = small_run
    sweep = scn.with_override("link.snr_db", 20.0)
    assert run_scenario(scn, threads=1)[1] == text
    from combphase.expcli.runner import expand_override, run_points
    pts = expand_override(scn, "link.snr_db", [18.0, 22.0])
    one = run_points(pts, scn.run.seed, threads=1)[1]
    two = run_points(expand_override(scn, "link.snr_db", [18.0, 22.0]), scn.run.seed,
                     threads=2)[1]
    assert one == two
    assert sweep.digest() == scn.digest()


def test_master_separation_rows():
    scn = _small(experiment={"kind": "master_separation", "separations": [-12, -1, 1, 12],
                             "discard_symbols": 1024},
                 dsp={"modes": ["independent", "master_slave"]},
                 signal_comb={"jitter_linewidth_khz": 0.0},
                 lo_comb={"jitter_linewidth_khz": 0.0})
    assert [p.lines for p in expand_points(scn)] == [[0, -12], [0, -1], [0, 1], [0, 12]]
    rows = _rows(run_scenario(scn)[1])
    got = sorted((int(r["master_separation"]), r["mode"]) for r in rows)
    assert got == sorted((s, m) for s in (-12, -1, 1, 12) for m in ("independent", "master_slave"))
    assert all(r["channel"] == "0" for r in rows)


def test_launch_power_rows():
    scn = _small(experiment={"kind": "launch_power", "launch_powers_dbm": [0.0, 4.0],
                             "discard_symbols": 1024},
                 dsp={"modes": ["independent", "joint"]},
                 nl_proxy={"enabled": True, "variance_at_ref_rad2": 1e-3})
    rows = _rows(run_scenario(scn)[1])
    assert sorted({(float(r["launch_power_dbm"]), r["mode"]) for r in rows}) == [
        (0.0, "independent"), (0.0, "joint"), (4.0, "independent"), (4.0, "joint")]
    assert len(rows) == 8
    assert all(r["group"] == "4" for r in rows if r["mode"] == "joint")


# --------------------------------------------------------------------------
# command line


def test_cli_validate_prints_hash(tmp_path, capsys):
    path = tmp_path / "s.toml"
    path.write_text(_toml(SMALL))
    assert cli.main(["validate", str(path)]) == 0
    assert capsys.readouterr().out.strip() == f"ok {_small().digest()}"


def test_cli_invalid_scenario_exit_1(tmp_path, capsys):
    bad = json.loads(json.dumps(SMALL))
    bad["run"]["n_symbols"] = 5
    path = tmp_path / "s.toml"
    path.write_text(_toml(bad))
    assert cli.main(["run", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "run.n_symbols" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.toml")]) == 1
    path.write_text("[run\n")
    assert cli.main(["validate", str(path)]) == 1


def test_cli_dsp_failure_exit_2_keeps_partial_results(tmp_path):
    data = json.loads(json.dumps(SMALL))
    data["dsp"]["cma_step"] = 5.0
    path = tmp_path / "s.toml"
    path.write_text(_toml(data))
    out = tmp_path / "o"
    assert cli.main(["run", str(path), "--out", str(out)]) == 2
    rows = _rows((out / "results.csv").read_text())
    assert rows and all(r["status"] == "ConvergenceError" for r in rows)


def test_cli_sweep(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text(_toml(SMALL))
    out = tmp_path / "o"
    assert cli.main(["sweep", str(path), "--param", "link.snr_db", "--values", "18,24",
                     "--out", str(out), "--threads", "2"]) == 0
    rows = _rows((out / "results.csv").read_text())
    assert sorted({r["sweep_value"] for r in rows}) == ["18", "24"]
    g = {v: np.mean([float(r["gmi_bits_per_4d"]) for r in rows if r["sweep_value"] == v])
         for v in ("18", "24")}
    assert g["24"] > g["18"]
    assert cli.main(["sweep", str(path), "--param", "link.nope", "--values", "1",
                     "--out", str(out)]) == 1
