import csv
import json
import logging
from dataclasses import fields

import numpy as np
import pytest

from sfeec.convergence import (ConvergenceConfig, ConvergenceRecord, detect_saturation,
                               emit_results, fit_power_law, parse_config, run_convergence,
                               summarize)

TINY = dict(bases=("P1-",), patterns=("diagonal", "m1"), modes=(1,), vertices=(64, 128, 256),
            seeds=(0,))


@pytest.fixture(scope="module")
def tiny_run():
    cfg = ConvergenceConfig(**TINY)
    return cfg, run_convergence(cfg)


def test_fit_recovers_square_law():
    cpw = np.array([2.0, 4.0, 8.0, 16.0, 32.0])
    fit = fit_power_law(np.stack([cpw, 3.0 / cpw ** 2], axis=1))
    assert fit.exponent == pytest.approx(2.0, abs=1e-12)
    assert fit.intercept == pytest.approx(np.log(3.0), abs=1e-12)
    assert fit.r2 == pytest.approx(1.0) and fit.n_points == 5


def test_fit_constant_error_has_zero_exponent():
    fit = fit_power_law([(3.0, 0.1), (6.0, 0.1), (12.0, 0.1)])
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_window_and_point_count():
    pts = [(c, c ** -1.0) for c in (2.0, 4.0, 8.0, 16.0)]
    with pytest.raises(ValueError):
        fit_power_law(pts[:2])
    with pytest.raises(ValueError):
        fit_power_law(pts, window=(3.0, 10.0))
    assert fit_power_law(pts, window=(3.0, 20.0)).n_points == 3


def test_fit_rejects_mixed_series():
    recs = [ConvergenceRecord("P1-", p, 64, 0.1, 5.0, 0.1, 0, 1) for p in ("m1", "dense")]
    with pytest.raises(ValueError):
        fit_power_law(recs)


def test_saturation_none_for_monotone_decay():
    cpw = 2.0 ** np.arange(1, 7)
    assert detect_saturation(cpw, cpw ** -2.0) is None


def test_saturation_finds_knee():
    cpw = np.array([2.0, 3.0, 4.5, 6.0, 9.0, 12.0, 18.0])
    err = np.where(cpw < 6.0, 0.5 * cpw ** -2.0, 0.5 * 6.0 ** -2.0)
    assert detect_saturation(cpw, err) == 6.0


def test_saturation_from_records():
    recs = [ConvergenceRecord("P1-", "diagonal", n, 1.0 / c, c, max(c ** -1.0, 0.2), 0, 1)
            for n, c in zip((64, 128, 256, 512), (2.0, 4.0, 8.0, 16.0))]
    assert detect_saturation(recs) == 8.0


def test_emit_empty_is_header_only(tmp_path):
    csv_path, json_path = emit_results([], [], tmp_path)
    assert csv_path.read_text() == ",".join(f.name for f in fields(ConvergenceRecord)) + "\n"
    assert json.loads(json_path.read_text()) == []


def test_emit_one_record(tmp_path):
    r = ConvergenceRecord("P2-", "m1sq", 128, 0.1234567890123, 8.1, 3.0e-4, 2, 1)
    csv_path, _ = emit_results([r], [], tmp_path)
    rows = list(csv.reader(csv_path.open()))
    assert len(rows) == 2
    back = dict(zip(rows[0], rows[1]))
    assert back["basis"] == "P2-" and back["pattern"] == "m1sq"
    assert int(back["n_vertices"]) == 128 and int(back["seed"]) == 2
    assert float(back["h"]) == r.h and float(back["relative_error"]) == r.relative_error


def test_pipeline_is_deterministic(tiny_run, tmp_path):
    cfg, recs = tiny_run
    emit_results(recs, summarize(recs, cfg), tmp_path / "a")
    again = run_convergence(cfg)
    emit_results(again, summarize(again, cfg), tmp_path / "b")
    for name in ("records.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_record_count_and_order(tiny_run):
    cfg, recs = tiny_run
    assert len(recs) == 2 * 3
    assert [r.pattern for r in recs] == ["diagonal"] * 3 + ["m1"] * 3
    assert all(r.relative_error > 0 for r in recs)


def test_summary_fields(tiny_run):
    cfg, recs = tiny_run
    summary = summarize(recs, cfg)
    assert {(s["basis"], s["pattern"]) for s in summary} == {("P1-", "diagonal"), ("P1-", "m1")}
    for s in summary:
        assert {"exponent", "r2", "saturation"} <= set(s)


def test_zero_mode_skipped_with_warning(caplog):
    cfg = ConvergenceConfig(bases=("P1-",), patterns=("diagonal",), modes=(0, 1), vertices=(64,),
                            seeds=(0,))
    with caplog.at_level(logging.WARNING, logger="sfeec.convergence"):
        recs = run_convergence(cfg)
    assert [r.mode for r in recs] == [1]
    assert any("n=0" in m for m in caplog.messages)


def test_worker_pool_matches_serial(tiny_run):
    cfg, recs = tiny_run
    pooled = run_convergence(ConvergenceConfig(**TINY, workers=2))
    assert pooled == recs


def test_pattern_errors_ordered_on_one_mesh():
    cfg = ConvergenceConfig(bases=("P1-", "P2-"), modes=(1,), vertices=(256,), seeds=(0,))
    err = {(r.basis, r.pattern): r.relative_error for r in run_convergence(cfg)}
    for basis in ("P1-", "P2-"):
        assert err[(basis, "dense")] <= err[(basis, "m1sq")] * 1.02
        assert err[(basis, "m1sq")] <= err[(basis, "m1")] * 1.02
        assert err[(basis, "m1")] < err[(basis, "diagonal")]


def test_parse_config_and_overrides():
    text = "# sweep\nvertices = 64, 128\nmodes=1,2\nfit_window = 2, 10\n\n"
    cfg = parse_config(text, {"seeds": "4", "bases": "P2-"})
    assert cfg.vertices == (64, 128) and cfg.modes == (1, 2)
    assert cfg.fit_window == (2.0, 10.0) and cfg.seeds == (4,) and cfg.bases == ("P2-",)
    assert parse_config() == ConvergenceConfig()


@pytest.mark.parametrize("text", ["vertices 64", "colour = red", "bases = Q1-", "vertices = 128,64",
                                  "fit_window = 5,3", "Lx = -1"])
def test_parse_config_errors(text):
    with pytest.raises(ValueError):
        parse_config(text)


def test_sweep_errors_carry_context():
    cfg = ConvergenceConfig(bases=("P1-",), patterns=("diagonal",), vertices=(2,), seeds=(7,))
    with pytest.raises(RuntimeError, match="n_vertices=2 seed=7"):
        run_convergence(cfg)
