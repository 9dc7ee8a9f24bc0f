import json
import math

import numpy as np
import pytest

from lfpp.cli import main
from lfpp.manifest import load_manifest


def _fixture_args(scales=(3, 4, 5, 6)):
    lams = ",".join(repr(2.0 ** (-n / 6.0)) for n in scales)
    return [f"--fixture_scales={','.join(str(s) for s in scales)}",
            f"--fixture_lambdas={lams}"]


# ------------------------------------------------------------- help, errors

def test_help_exits_zero(capsys):
    assert main([]) == 0
    assert "Subcommands" in capsys.readouterr().out
    assert main(["--help"]) == 0
    assert main(["exponent", "--help"]) == 0
    assert "fixture_scales" in capsys.readouterr().out


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 1


def test_unknown_key(tmp_path):
    assert main(["exponent", f"--out={tmp_path}", "--bogus=1"]) == 1


def test_bad_value(tmp_path):
    assert main(["quantiles", f"--out={tmp_path}", "--replicas=abc"]) == 1


def test_replicas_below_minimum(tmp_path):
    assert main(["crossing-mc", f"--out={tmp_path}", "--replicas=5"]) == 1


def test_budget_refusal(tmp_path):
    code = main(["crossing-mc", f"--out={tmp_path}", "--scales=3",
                 "--replicas=16", "--budget=10"])
    assert code == 4
    assert not list(tmp_path.glob("crossing-mc-*/crossings.csv"))


def test_positional_argument_rejected(tmp_path):
    assert main(["exponent", str(tmp_path)]) == 1


# ------------------------------------------------------------- fixture run

def test_exponent_fixture_run(tmp_path):
    code = main(["exponent", f"--out={tmp_path}", *_fixture_args(),
                 "--gamma=" + repr(math.sqrt(8.0 / 3.0)), "--d_gamma=4"])
    assert code == 0
    (outdir,) = tmp_path.glob("exponent-*")
    doc = json.loads((outdir / "exponent.json").read_text())
    assert doc["slope"] == pytest.approx(1.0 / 6.0, abs=1e-9)
    assert doc["target"] == pytest.approx(1.0 / 6.0, abs=1e-12)
    assert abs(doc["discrepancy"]) < 1e-9
    man = load_manifest(outdir / "manifest.json")
    assert man["subcommand"] == "exponent"
    assert "exponent.json" in man["outputs"]
    assert main(["verify", str(outdir)]) == 0


def test_out_falls_back_to_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LFPP_OUT", str(tmp_path / "envroot"))
    assert main(["exponent", *_fixture_args()]) == 0
    assert list((tmp_path / "envroot").glob("exponent-*"))


def test_outdir_keyed_by_config_not_out(tmp_path):
    assert main(["exponent", f"--out={tmp_path}/a", *_fixture_args()]) == 0
    assert main(["exponent", f"--out={tmp_path}/b", *_fixture_args()]) == 0
    (da,) = (tmp_path / "a").glob("exponent-*")
    (db,) = (tmp_path / "b").glob("exponent-*")
    assert da.name == db.name
    assert main(["exponent", f"--out={tmp_path}/a", "--seed=9",
                 *_fixture_args()]) == 0
    names = {p.name for p in (tmp_path / "a").glob("exponent-*")}
    assert len(names) == 2             # seed participates in the digest


# ------------------------------------------------------------- verify cycle

def test_crossing_run_and_verify_cycle(tmp_path):
    args = ["crossing-mc", f"--out={tmp_path}", "--scales=2",
            "--replicas=16", "--xi=0.3"]
    assert main(args) == 0
    (outdir,) = tmp_path.glob("crossing-mc-*")
    csv_path = outdir / "crossings.csv"
    raw = csv_path.read_bytes()
    assert b"\r\n" in raw              # RFC 4180 line endings

    assert main(["verify", str(outdir)]) == 0
    assert main(["verify", str(outdir / "manifest.json")]) == 0
    assert main(["verify", str(outdir), "--rerun"]) == 0
    assert not (outdir.parent / (outdir.name + ".recheck")).exists()

    # reruns land in the same directory with byte-identical outputs
    assert main(args) == 0
    assert csv_path.read_bytes() == raw

    csv_path.write_bytes(raw + b"tampered")
    assert main(["verify", str(outdir)]) == 3
    csv_path.write_bytes(raw)
    assert main(["verify", str(outdir)]) == 0
    csv_path.unlink()
    assert main(["verify", str(outdir)]) == 3
    assert main(["verify", str(tmp_path / "nowhere")]) == 3


def test_verify_rerun_catches_seed_dependence(tmp_path):
    args = ["crossing-mc", f"--out={tmp_path}", "--scales=2",
            "--replicas=16", "--xi=0.3", "--seed=4"]
    assert main(args) == 0
    (outdir,) = tmp_path.glob("crossing-mc-*")
    # splice a different seed into the stored manifest: the rerun must differ
    man = json.loads((outdir / "manifest.json").read_text())
    man["config"]["seed"] = 5
    (outdir / "manifest.json").write_text(json.dumps(man))
    assert main(["verify", str(outdir), "--rerun"]) == 3


# ------------------------------------------------------------- config files

def test_config_file_sections(tmp_path):
    lams = ",".join(repr(2.0 ** (-n / 6.0)) for n in (3, 4, 5, 6))
    cfgfile = tmp_path / "run.ini"
    cfgfile.write_text(
        "[common]\n"
        f"out = {tmp_path}\n"
        "seed = 11\n"
        "[exponent]\n"
        "fixture_scales = 3,4,5,6\n"
        f"fixture_lambdas = {lams}\n"
    )
    assert main(["exponent", "--config", str(cfgfile)]) == 0
    (outdir,) = tmp_path.glob("exponent-*")
    assert load_manifest(outdir / "manifest.json")["config"]["seed"] == 11

    # command line overrides the file
    assert main(["exponent", "--config", str(cfgfile), "--seed=12"]) == 0
    assert len(list(tmp_path.glob("exponent-*"))) == 2


def test_config_file_rejections(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nonsense]\nx = 1\n")
    assert main(["exponent", "--config", str(bad), f"--out={tmp_path}"]) == 1
    bad.write_text("[exponent]\nbogus = 1\n")
    assert main(["exponent", "--config", str(bad), f"--out={tmp_path}"]) == 1
    assert main(["exponent", "--config", str(tmp_path / "nope.ini")]) == 1


# ------------------------------------------------------------- quadrature

def test_conformal_quadrature_failure(tmp_path):
    code = main(["conformal", f"--out={tmp_path}", "--map=quadratic",
                 "--terms=first", "--lags=0.25", "--nt=8", "--q=3",
                 "--tol=1e-12"])
    assert code == 2
    # a run that died before writing anything must not leave its directory
    assert list(tmp_path.iterdir()) == []


def test_conformal_affine_first_term(tmp_path):
    code = main(["conformal", f"--out={tmp_path}", "--map=affine",
                 "--terms=first", "--lags=0.25", "--nt=8", "--q=3"])
    assert code == 0
    (outdir,) = tmp_path.glob("conformal-*")
    text = (outdir / "conformal.csv").read_text()
    assert "first" in text


# ------------------------------------------------------------- output hygiene

def test_json_is_strict(tmp_path):
    assert main(["exponent", f"--out={tmp_path}", *_fixture_args()]) == 0
    (outdir,) = tmp_path.glob("exponent-*")
    text = (outdir / "exponent.json").read_text()
    assert "NaN" not in text and "Infinity" not in text
    doc = json.loads(text)             # parses under the strict grammar
    assert doc["target"] is None or isinstance(doc["target"], float)
    man = json.loads((outdir / "manifest.json").read_text())
    assert man["schema"] == "lfpp-manifest/1"
    assert "out" not in man["config"]
