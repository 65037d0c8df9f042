import csv
import json
import time

import numpy as np
import pytest

from cli_helpers import artifact_bytes, run, small_simulation_config, tiny_config
from conftest import DATA
from dlnm_lps.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main
from dlnm_lps.panel import write_panel_csv
from dlnm_lps.simgen import ScenarioSpec, generate_panel


@pytest.fixture(scope="module")
def tiny_fit(tmp_path_factory):
    work = tmp_path_factory.mktemp("fit")
    t0 = time.perf_counter()
    code, out = run("fit", tiny_config(), work)
    return code, out, time.perf_counter() - t0, work


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_fit_writes_all_artifacts(tiny_fit):
    code, out, elapsed, _ = tiny_fit
    assert code == EXIT_OK
    assert elapsed < 10
    names = {p.name for p in out.iterdir()}
    assert {"fit.json", "timing.json", "xi.csv", "fit.npz", "rr_grid.csv", "rrr.csv", "exceedance.csv",
            "af.json"} <= names
    summary = json.loads((out / "fit.json").read_text())
    assert summary["converged"] is True
    assert 0 < summary["p_D"] < summary["n_xi"]
    assert summary["meta"]["seed"] == 3
    assert (out / "xi.csv").read_text().startswith("# config_hash=")


def test_fit_artifacts_are_consistent(tiny_fit):
    _, out, _, _ = tiny_fit
    rows = read_rows(out / "rr_grid.csv")
    at_ref = [r for r in rows if float(r["x"]) == 5.0]
    assert at_ref and all(float(r["estimate"]) == 0.0 for r in at_ref)
    for r in rows:
        assert float(r["lo"]) <= float(r["estimate"]) <= float(r["hi"])
    af = json.loads((out / "af.json").read_text())
    assert [r["area"] for r in af["rows"]] == ["A1", "A2", "A3", "A4", "all"]
    assert all("cf_AF" in r for r in af["rows"])


def test_fit_is_byte_deterministic(tiny_fit):
    _, out, _, work = tiny_fit
    code, again = run("fit", tiny_config(), work, name="again")
    assert code == EXIT_OK
    assert artifact_bytes(out) == artifact_bytes(again)


def test_report_regenerates_inference_from_stored_fit(tiny_fit):
    _, out, _, work = tiny_fit
    cfg = tiny_config(fit_state=str(out / "fit.npz"))
    code, rep = run("report", cfg, work, name="report")
    assert code == EXIT_OK
    for f in ("rr_grid.csv", "rrr.csv", "exceedance.csv"):
        body = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("#")]
        assert body(rep / f) == body(out / f)


def test_report_needs_fit_state(tmp_path):
    assert run("report", tiny_config(), tmp_path)[0] == EXIT_CONFIG


def test_seed_flag_overrides_config(tmp_path):
    cfg = tiny_config()
    cfg["inference"] = {"x": [2.0, 8.0], "n_draws": 100}
    _, a = run("fit", cfg, tmp_path, name="a", extra=("--seed", "7"))
    assert json.loads((a / "fit.json").read_text())["meta"]["seed"] == 7


@pytest.mark.parametrize("mutate,expected", [
    (lambda c: c["model"].update(modifier="smooth", main_effect_z="dummy"), EXIT_CONFIG),
    (lambda c: c["model"].update(colour="blue"), EXIT_CONFIG),
    (lambda c: c["model"].update(family="binomial"), EXIT_CONFIG),
    (lambda c: c["data"].update(panel="/nonexistent/panel.csv"), EXIT_CONFIG),
    (lambda c: c["inference"].update(x=[50.0]), EXIT_DATA),
])
def test_exit_codes(tmp_path, mutate, expected):
    cfg = tiny_config()
    mutate(cfg)
    assert run("fit", cfg, tmp_path)[0] == expected


def test_bad_panel_row_is_a_data_error(tmp_path, capsys):
    lines = (DATA / "tiny_panel.csv").read_text().splitlines()
    lines[5] = lines[5].replace(lines[5].split(",")[2], "-4", 1)
    bad = tmp_path / "bad.csv"
    bad.write_text("\n".join(lines) + "\n")
    cfg = tiny_config()
    cfg["data"]["panel"] = str(bad)
    assert run("fit", cfg, tmp_path)[0] == EXIT_DATA
    assert ":6:" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["fit", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_outer_budget_exhaustion_exits_numerical(tmp_path):
    code, out = run("fit", tiny_config(maxfun=1), tmp_path)
    summary = json.loads((out / "fit.json").read_text())
    assert summary["converged"] is False
    assert code == EXIT_NUMERICAL


def test_trend_and_percentile_options(tmp_path):
    cfg = tiny_config()
    cfg["data"].update(trend_df_per_year=12, exposure_percentiles=True)
    cfg["inference"] = {"x": [0.2, 0.8], "x0": 0.5, "n_draws": 100}
    code, out = run("fit", cfg, tmp_path)
    assert code == EXIT_OK
    names = [r["name"] for r in read_rows(out / "xi.csv")]
    assert sum(n.startswith("trend_") for n in names) == 2  # ceil(12 * 60 / 365.25)
    assert sum(n.startswith("dow[") for n in names) == 6


# ---------------------------------------------------------------- compare

def test_compare_identical_models_tie(tmp_path):
    m = tiny_config()["model"]
    cfg = tiny_config(models=[{"name": "a", "model": m}, {"name": "b", "model": m}])
    code, out = run("compare", cfg, tmp_path)
    assert code == EXIT_OK
    res = json.loads((out / "compare.json").read_text())
    assert [r["delta_DIC"] for r in res["models"]] == [0.0, 0.0]


def test_compare_single_model(tmp_path):
    cfg = tiny_config(models=[{"name": "only", "model": tiny_config()["model"]}])
    code, out = run("compare", cfg, tmp_path)
    assert code == EXIT_OK
    assert json.loads((out / "compare.json").read_text())["table"] == {"only": {"only": 0.0}}


def test_compare_prefers_modifier_when_modification_exists(tmp_path):
    sim = generate_panel(ScenarioSpec("linear_em", "large", J=10, T=200, L_true=3, seed=5))
    write_panel_csv(sim.panel, tmp_path / "panel.csv")
    base = {"spatial": "leroux", "v_x": 5, "v_l": 4, "max_lag": 3}
    cfg = {
        "data": {"panel": str(tmp_path / "panel.csv")},
        "models": [
            {"name": "common", "row": "LPS", "column": "common",
             "model": {**base, "modifier": "none", "main_effect_z": "linear"}},
            {"name": "linear", "row": "LPS", "column": "linear", "model": {**base, "modifier": "linear"}},
        ],
    }
    code, out = run("compare", cfg, tmp_path)
    assert code == EXIT_OK
    table = json.loads((out / "compare.json").read_text())["table"]["LPS"]
    assert table["linear"] == 0.0 and table["common"] > 0.0


# ---------------------------------------------------------------- simulate / score

@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    work = tmp_path_factory.mktemp("sim")
    code, out = run("simulate", small_simulation_config(), work)
    return code, out, work


def test_simulate_smoke(simulated):
    code, out, _ = simulated
    assert code == EXIT_OK
    scores = json.loads((out / "scores.json").read_text())["scores"]
    for row in scores.values():
        assert row["failed"] == 0.0
        assert np.isfinite(row["RMSE RR overall"]) and 0 <= row["cov RR overall"] <= 1
    assert set(json.loads((out / "timing.json").read_text())["time"]) == set(scores)
    assert sorted(p.name for p in (out / "panels").iterdir()) == ["replicate_000.csv", "replicate_001.csv"]
    assert len(list(out.glob("grid_LPS_linear_*.csv"))) == 2


def test_simulate_workers_do_not_change_results(simulated):
    _, out, work = simulated
    code, par = run("simulate", small_simulation_config(), work, name="par", extra=("--threads", "2"))
    assert code == EXIT_OK
    assert artifact_bytes(out) == artifact_bytes(par)


def test_score_of_the_truth_is_perfect(simulated):
    _, out, work = simulated
    cfg = small_simulation_config(estimates={"truth": [str(out / "truth_grid.csv")] * 2,
                                             "linear": sorted(str(p) for p in out.glob("grid_LPS_linear_*.csv"))})
    code, sc = run("score", cfg, work, name="score")
    assert code == EXIT_OK
    scores = json.loads((sc / "scores.json").read_text())["scores"]
    t = scores["truth"]
    assert (t["RMSE RR"], t["RMSE RR overall"], t["cov RR"], t["cov RR overall"]) == (0.0, 0.0, 1.0, 1.0)
    sim_scores = json.loads((out / "scores.json").read_text())["scores"]["LPS linear"]
    assert scores["linear"]["RMSE RR overall"] == sim_scores["RMSE RR overall"]


def test_score_rejects_incomplete_grids(simulated, tmp_path):
    _, out, _ = simulated
    lines = (out / "truth_grid.csv").read_text().splitlines()
    short = tmp_path / "short.csv"
    short.write_text("\n".join(lines[:-5]) + "\n")
    cfg = small_simulation_config(estimates={"short": [str(short)]})
    assert run("score", cfg, tmp_path)[0] == EXIT_DATA


def test_simulate_needs_variants(tmp_path):
    cfg = small_simulation_config()
    del cfg["variants"]
    assert run("simulate", cfg, tmp_path)[0] == EXIT_CONFIG


def test_median_counterfactual_needs_a_modifier(tmp_path):
    lines = (DATA / "tiny_panel.csv").read_text().splitlines()
    stripped = tmp_path / "no_z.csv"
    stripped.write_text("\n".join(line.rsplit(",", 1)[0] for line in lines) + "\n")
    cfg = tiny_config()
    cfg["data"]["panel"] = str(stripped)
    cfg["model"].update(modifier="none", main_effect_z="none")
    cfg["inference"] = {"x": [2.0, 8.0], "n_draws": 50, "af": {"counterfactual_z": "median"}}
    assert run("fit", cfg, tmp_path)[0] == EXIT_CONFIG
