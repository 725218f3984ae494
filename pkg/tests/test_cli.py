import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from strokelab.cli import main
from strokelab.extractor import StrokeDecomposition, write_decompositions
from strokelab.lognormal import LognormalComponent
from strokelab.plotting import RAMP_END, RAMP_START, reconstruction_svg, speed_color, trajectory_svg


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    m = json.loads(open(str(path) + ".manifest.json").read())
    m.pop("wall_time_s")
    return m


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("chain")
    assert run("synth-cohort", "--users", 2, "--days", 8, "--seed", 1, "--out", d / "co") == 0
    assert run("extract", "--in", d / "co/traces.csv", "--out", d / "dec.jsonl") == 0
    assert run("features", "--decomp", d / "dec.jsonl", "--out", d / "feat.csv") == 0
    assert run("label", "--sleep", d / "co/sleep.csv", "--out", d / "labels.csv") == 0
    assert run("evaluate", "--features", d / "feat.csv", "--labels", d / "labels.csv", "--n-trees", 20,
               "--slice", "both", "--out", d / "pred.jsonl") == 0
    assert run("stats", "--predictions", d / "pred.jsonl", "--out", d / "stats.json") == 0
    return d


def test_chain_outputs(chain, capsys):
    stats = json.loads((chain / "stats.json").read_text())
    assert len(stats["table2"]) == 8 and all({"p", "q"} <= set(r) for r in stats["table2"])
    assert len(stats["table3"]) == 16
    assert (chain / "stats.txt").read_text().startswith("Wilcoxon")
    assert (chain / "labels.rules.json").exists()
    m = json.loads((chain / "co/manifest.json").read_text())
    assert m["command"] == "synth-cohort" and set(m["outputs"]) >= {str(chain / "co/traces.csv")}
    for name in ("dec.jsonl", "feat.csv", "labels.csv", "pred.jsonl", "stats.json"):
        m = json.loads((chain / (name + ".manifest.json")).read_text())
        assert {"command", "config", "inputs", "outputs", "wall_time_s", "version"} <= set(m)


def test_extract_summary_line(chain, capsys):
    run("extract", "--in", chain / "co/traces.csv", "--out", chain / "dec2.jsonl")
    line = capsys.readouterr().out.strip()
    n, snr = line.split()[0], float(line.split("=")[2].split()[0])
    assert n.startswith("strokes=") and snr >= 20


def test_idempotent(chain):
    assert run("evaluate", "--features", chain / "feat.csv", "--labels", chain / "labels.csv", "--n-trees", 20,
               "--slice", "both", "--out", chain / "pred2.jsonl") == 0
    assert (chain / "pred.jsonl").read_bytes() == (chain / "pred2.jsonl").read_bytes()
    assert (chain / "dec.jsonl").read_bytes() == (chain / "dec2.jsonl").read_bytes()
    a, b = manifest(chain / "pred.jsonl"), manifest(chain / "pred2.jsonl")
    assert a["inputs"] == b["inputs"] and list(a["outputs"].values()) == list(b["outputs"].values())


def test_repeated_synth_same_hashes(tmp_path):
    for name in ("a", "b"):
        assert run("synth-cohort", "--users", 1, "--days", 2, "--seed", 9, "--out", tmp_path / name) == 0
    ma = json.loads((tmp_path / "a/manifest.json").read_text())
    mb = json.loads((tmp_path / "b/manifest.json").read_text())
    assert list(ma["outputs"].values()) == list(mb["outputs"].values())


def test_single_target(chain):
    assert run("stats", "--predictions", chain / "pred.jsonl", "--target", "avg_hrv",
               "--out", chain / "one.json") == 0
    rows = json.loads((chain / "one.json").read_text())["table2"]
    assert len(rows) == 2
    p = sorted(r["p"] for r in rows)
    assert sorted(r["q"] for r in rows)[0] == pytest.approx(min(1.0, min(p[0] * 2, p[1])))


def test_evaluate_with_sleep(chain):
    assert run("evaluate", "--features", chain / "feat.csv", "--sleep", chain / "co/sleep.csv", "--target",
               "avg_hr", "--n-trees", 5, "--mode", "pooled", "--out", chain / "pooled.jsonl") == 0


def test_mismatched_users(chain, tmp_path, capsys):
    text = (chain / "co/sleep.csv").read_text().replace("u02,", "u07,")
    (tmp_path / "sleep.csv").write_text(text)
    assert run("evaluate", "--features", chain / "feat.csv", "--sleep", tmp_path / "sleep.csv",
               "--out", tmp_path / "p.jsonl") == 1
    assert "users differ" in capsys.readouterr().err


def test_missing_artifact(tmp_path, capsys):
    assert run("features", "--decomp", tmp_path / "nope.jsonl", "--out", tmp_path / "f.csv") == 1
    assert "nope.jsonl" in capsys.readouterr().err
    assert run("evaluate", "--features", tmp_path / "nope.csv", "--out", tmp_path / "p.jsonl") == 1


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("synth-cohort", "--users", 0, "--out", tmp_path)
    assert exc.value.code == 2 and "usage" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("evaluate", "--features", "x", "--slice", "hour", "--out", "y")
    assert exc.value.code == 2


def test_empty_and_bad_inputs(tmp_path, capsys):
    (tmp_path / "empty.csv").write_text("")
    assert run("extract", "--in", tmp_path / "empty.csv", "--out", tmp_path / "d.jsonl") == 1
    assert "no traces" in capsys.readouterr().err
    (tmp_path / "bad.csv").write_text("source_id,stroke,t,x,y,pressure\ns,0,1,0,0,1\ns,0,0,1,1,1\n")
    assert run("extract", "--in", tmp_path / "bad.csv", "--out", tmp_path / "d.jsonl") == 1
    assert "s#0" in capsys.readouterr().err


def test_extract_inkml(tmp_path, capsys):
    from _synth import separated_components, stroke_of

    st = stroke_of(separated_components(np.random.default_rng(0), 2), fs=480.0)
    pts = ", ".join(f"{x:.6f} {y:.6f}" for x, y in zip(st.x, st.y))
    (tmp_path / "a.inkml").write_text(f'<ink xmlns="http://www.w3.org/2003/InkML"><trace>{pts}</trace></ink>')
    assert run("extract", "--in", tmp_path / "a.inkml", "--format", "inkml", "--out", tmp_path / "d.jsonl") == 0
    assert capsys.readouterr().out.startswith("strokes=1 ")


def test_higher_snr_target_not_fewer(chain, tmp_path):
    lines = (chain / "co/traces.csv").read_text().splitlines()
    keep = [lines[0]] + [ln for ln in lines[1:] if ln.startswith(("u01/1/wake/", "u01/2/bed/"))]
    (tmp_path / "t.csv").write_text("\n".join(keep) + "\n")
    run("extract", "--in", tmp_path / "t.csv", "--out", tmp_path / "lo.jsonl")
    run("extract", "--in", tmp_path / "t.csv", "--snr-target", 35, "--out", tmp_path / "hi.jsonl")
    lo = [json.loads(s)["nblog"] for s in (tmp_path / "lo.jsonl").read_text().splitlines()]
    hi = [json.loads(s)["nblog"] for s in (tmp_path / "hi.jsonl").read_text().splitlines()]
    assert len(lo) == len(hi) and all(b >= a for a, b in zip(lo, hi))


def test_plot_commands(chain, capsys):
    sid = json.loads((chain / "dec.jsonl").read_text().splitlines()[0])["stroke_id"]
    assert run("plot", "--decomp", chain / "dec.jsonl", "--traces", chain / "co/traces.csv",
               "--stroke-id", sid, "--out", chain / "r.svg") == 0
    root = ET.parse(chain / "r.svg").getroot()
    curves = [e for e in root.iter() if "curve" in e.get("class", "")]
    nblog = json.loads((chain / "dec.jsonl").read_text().splitlines()[0])["nblog"]
    assert len(curves) == nblog + 2
    assert run("plot", "--traces", chain / "co/traces.csv", "--stroke-id", sid, "--out", chain / "t.svg") == 0
    ET.parse(chain / "t.svg")
    assert run("plot", "--decomp", chain / "dec.jsonl", "--stroke-id", sid, "--out", chain / "d.svg") == 0
    assert run("plot", "--decomp", chain / "dec.jsonl", "--stroke-id", "nope", "--out", chain / "x.svg") == 1
    assert "unknown stroke id" in capsys.readouterr().err


# -- SVG helpers -----------------------------------------------------------------------

def test_reconstruction_curve_count():
    comps = [LognormalComponent(5, 0.05 + 0.2 * i, -1.7, 0.25, 0.0, 0.5) for i in range(3)]
    dec = StrokeDecomposition(comps, 27.0, "s#0")
    t = np.linspace(0, 1, 200)
    root = ET.fromstring(reconstruction_svg(t, dec, speed=np.ones(200)))
    kinds = [e.get("class") for e in root.iter() if "curve" in e.get("class", "")]
    assert kinds.count("curve component") == 3 and len(kinds) == 5
    observed = next(e for e in root.iter() if e.get("class") == "curve observed")
    assert observed.get("stroke") == "black"
    assert next(e for e in root.iter() if e.get("class") == "curve sum").get("stroke-dasharray")


def test_speed_ramp():
    assert speed_color(0) == "#{:02x}{:02x}{:02x}".format(*RAMP_START) == "#0000ff"
    assert speed_color(300) == "#{:02x}{:02x}{:02x}".format(*RAMP_END) == "#ff0000"
    assert speed_color(1e4) == speed_color(300) and speed_color(-5) == speed_color(0)
    assert speed_color(150) == "#800080"


def test_trajectory_svg():
    x = np.linspace(0, 10, 50)
    svg = trajectory_svg(x, np.sin(x), np.linspace(0, 400, 50), title="a<b")
    root = ET.fromstring(svg)
    segs = [e for e in root.iter() if e.get("class") == "segment"]
    assert len(segs) == 49 and segs[-1].get("stroke") == "#ff0000"
    assert any(e.get("class") == "legend" for e in root.iter())


def test_decomposition_file_plot_without_traces(tmp_path):
    dec = StrokeDecomposition([LognormalComponent(5, 0.0, -1.7, 0.25, 0.0, 0.5)], 30.0, "s#0")
    with open(tmp_path / "d.jsonl", "w") as fh:
        write_decompositions([dec], fh)
    assert run("plot", "--decomp", tmp_path / "d.jsonl", "--stroke-id", "s#0", "--view", "trajectory",
               "--out", tmp_path / "x.svg") == 1
