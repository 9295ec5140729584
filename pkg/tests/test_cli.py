import json

import numpy as np
import pytest

from nfcouple.cli import main
from nfcouple.formats import read_histogram, read_tags

FAST = ["--set", "emitter.duration_s=20", "--set", "powers_mw=[1,4,10]",
        "--set", "efficiency.mc_draws=2000"]


def files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    out = {}
    for threads in (1, 2):
        d = tmp_path_factory.mktemp(f"pipe{threads}")
        assert main(["pipeline", "--out", str(d), "--threads", str(threads)] + FAST) == 0
        out[threads] = d
    return out


def test_pipeline_outputs(pipeline_runs):
    d = pipeline_runs[1]
    names = files(d)
    for f in ("report.json", "efficiency.json", "replication_table.csv",
              "figures/g2_confocal.png", "figures/g2_fiber.png", "figures/saturation.png",
              "figures/lifetime.png", "histograms/p01_4mW_fiber.csv"):
        assert f in names
    rep = json.loads(names["report.json"])
    assert rep["complete"] and not rep["errors"]
    assert len(rep["per_power"]) == 3


def test_pipeline_thread_independent_and_deterministic(pipeline_runs):
    a, b = files(pipeline_runs[1]), files(pipeline_runs[2])
    assert a.keys() == b.keys()
    for k in a:
        if k in ("report.json", "efficiency.json"):
            ja, jb = json.loads(a[k]), json.loads(b[k])
            ja["config"].pop("output_dir")
            jb["config"].pop("output_dir")
            assert ja == jb, k
        else:
            assert a[k] == b[k], k


def test_pipeline_figures_are_png(pipeline_runs):
    png = (pipeline_runs[1] / "figures" / "lifetime.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    assert b"Software" not in png


def test_no_figures_flag(tmp_path):
    assert main(["pipeline", "--out", str(tmp_path), "--no-figures"] + FAST) == 0
    assert not (tmp_path / "figures").exists()


def test_step_by_step_matches_pipeline(tmp_path, pipeline_runs, capsys):
    args = ["--out", str(tmp_path)] + FAST
    assert main(["simulate", "--power-index", "1"] + args) == 0
    tags = tmp_path / "tags"
    (tag_file,) = list(tags.iterdir())
    assert main(["correlate", str(tag_file), "--pair", "2", "3"] + args) == 0
    (hist_file,) = list((tmp_path / "histograms").glob("*.csv"))
    ref = read_histogram(pipeline_runs[1] / "histograms" / "p01_4mW_fiber.csv")
    np.testing.assert_array_equal(read_histogram(hist_file).counts, ref.counts)
    assert main(["fit", str(hist_file)] + args) == 0
    fit = json.loads(next((tmp_path / "fits").glob("*.json")).read_text())
    report = json.loads((pipeline_runs[1] / "report.json").read_text())
    ref_fit = report["per_power"][1]["fiber"]["fit"]["params"]
    for k, v in ref_fit.items():
        assert fit["fit"]["params"][k] == pytest.approx(v, rel=1e-9)
    out = capsys.readouterr().out
    assert "p_f\tp_f_sigma" in out


def test_simulate_formats_agree(tmp_path):
    args = ["--out", str(tmp_path), "--power-index", "0"] + FAST[:2]
    assert main(["simulate"] + args) == 0
    assert main(["simulate", "--format", "csv"] + args) == 0
    (a,) = (tmp_path / "tags").glob("*.ttg1")
    (b,) = (tmp_path / "tags").glob("*.csv")
    for x, y in zip(read_tags(a), read_tags(b, duration=20.0)):
        np.testing.assert_array_equal(x.tags, y.tags)


def test_simulate_bytes_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--out", str(tmp_path / d), "--power-index", "2"] + FAST[:2]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_analyze_from_config_and_fits(tmp_path, pipeline_runs, capsys):
    assert main(["analyze", "--out", str(tmp_path / "a")]) == 0
    eff = json.loads((tmp_path / "a" / "efficiency.json").read_text())["efficiency"]
    assert eff["gamma_nf_per_s"] == pytest.approx(1.94e5, rel=0.01)
    assert main(["analyze", "--out", str(tmp_path / "b"),
                 "--fits", str(pipeline_runs[1] / "report.json")]) == 0
    eff = json.loads((tmp_path / "b" / "efficiency.json").read_text())
    assert eff["source"] == "fits"
    assert "beta_low" in capsys.readouterr().out


def test_modes_and_couple(tmp_path):
    assert main(["modes", "--out", str(tmp_path)]) == 0
    modes = json.loads((tmp_path / "modes.json").read_text())
    assert 1.0 < modes["mode"]["n_eff"] < 1.4563
    assert (tmp_path / "mode_profile.csv").exists()
    assert main(["couple", "--out", str(tmp_path), "--no-figures",
                 "--set", "dipole.sweep_points=5",
                 "--set", "dipole.distance_sweep_nm=[10, 50]"]) == 0
    cp = json.loads((tmp_path / "coupling.json").read_text())["coupling"]
    assert cp["orientations"]["radial"]["beta"] > cp["orientations"]["tangential"]["beta"]


@pytest.mark.parametrize("argv, code", [
    (["modes", "--set", "fiber.radius_nm=-5"], 2),
    (["modes", "--set", "fiber.bogus=1"], 2),
    (["modes", "--threads", "0"], 2),
    (["modes", "--config", "/nonexistent/cfg.json"], 4),
    (["fit", "/nonexistent/h.csv"], 4),
    (["analyze", "--fits", "/nonexistent/report.json"], 4),
    (["couple", "--set", "dipole.spectrum=/nonexistent/s.csv"], 4),
])
def test_exit_codes(tmp_path, argv, code):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_bad_magic_exit_code(tmp_path):
    bad = tmp_path / "bad.ttg1"
    bad.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNK")
    assert main(["correlate", str(bad), "--out", str(tmp_path)]) == 4


def test_empty_channel_is_flagged(tmp_path):
    from nfcouple.emitter_dynamics import TimeTagStream
    from nfcouple.formats import write_ttg1
    p = tmp_path / "e.ttg1"
    write_ttg1(p, [TimeTagStream(0, np.array([100, 5000]), 1e-6, 77),
                   TimeTagStream(1, np.array([], dtype=np.int64), 1e-6, 77)])
    assert main(["correlate", str(p), "--pair", "0", "1", "--out", str(tmp_path)]) == 0
    meta = json.loads(next((tmp_path / "histograms").glob("*.json")).read_text())
    assert meta["empty"]
    h = next((tmp_path / "histograms").glob("*.csv"))
    assert main(["fit", str(h), "--out", str(tmp_path)]) == 2


def test_numerical_failure_exit_code(tmp_path):
    # two powers cannot constrain a lifetime extrapolation and a saturation curve
    # when every tag stream is empty: fits fail and the pipeline reports exit 3
    code = main(["pipeline", "--out", str(tmp_path), "--no-figures",
                 "--set", "emitter.duration_s=0.001", "--set", "powers_mw=[1,2]"])
    assert code == 3
    assert (tmp_path / "report.json").exists()
