import json
import math
import os

import pytest

import cuspflow as cf


@pytest.fixture(scope="module")
def gauss_disc():
    par = cf.DiscretizationParams()
    par.nodes = 400
    par.delta_hint = 1.0
    return cf.discretize_gauss(200, par)


def test_gauss_delta(gauss_disc):
    opt = cf.DeltaOptions()
    opt.a_lo, opt.a_hi = 0.55, 1.49
    delta = cf.estimate_delta(gauss_disc, opt)
    assert abs(delta - 1.0) < 2e-3


def test_two_branch_uni_certificate():
    sys = cf.gauss_system(1, 2)
    cert = cf.uni_search(sys, 1)
    assert cert.ok
    assert abs(cert.epsilon0 - 1.0 / 3.0) < 1e-6


def test_spectral_report_masses(gauss_disc):
    opt = cf.DeltaOptions()
    opt.a_lo, opt.a_hi = 0.55, 1.49
    rep = cf.spectral_report(gauss_disc, cf.estimate_delta(gauss_disc, opt))
    assert abs(sum(rep.mass) - 1.0) < 1e-9
    assert min(rep.f) > 0


def test_tail_partial_sums_monotone():
    rep = cf.tail_report(cf.gauss_system(1, 4096), 1.0, 0.4)
    assert all(b >= a for a, b in zip(rep.partial_sums, rep.partial_sums[1:]))
    assert rep.extrapolated_total >= rep.partial_sums[-1]


def test_flow_correlation_deterministic(gauss_disc):
    opt = cf.DeltaOptions()
    opt.a_lo, opt.a_hi = 0.55, 1.49
    rep = cf.spectral_report(gauss_disc, cf.estimate_delta(gauss_disc, opt))
    flow = cf.make_flow_system(gauss_disc, rep)
    assert flow.r_bar > 0
    times = [0.0, 0.5, 1.0]
    a = cf.coordinate_correlation(flow, times, 4000, seed=7, threads=2)
    b = cf.coordinate_correlation(flow, times, 4000, seed=7, threads=1)
    assert a.rho == b.rho  # byte-deterministic across thread counts
    assert a.rho[0] > 0


def test_run_command_roundtrip(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "system": {"kind": "gauss_subset", "alphabet": [1, 2]},
        "discretization": {"nodes": 150},
        "spectral": {"a_lo": -0.25, "a_hi": 1.49},
    }))
    out = tmp_path / "out"
    assert cf.run_command("delta-estimate", str(cfg), str(out)) == 0
    rep = json.loads((out / "delta_estimate.json").read_text())
    assert 0.4 < rep["delta_estimate"] < 0.65

    ok, messages = cf.validate_config(str(cfg))
    assert ok and messages == []


def test_validation_failure_is_reported(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"system": {"kind": "gauss"}, "nonsense": 1}')
    ok, messages = cf.validate_config(str(cfg))
    assert not ok
    assert "nonsense" in messages[0]
