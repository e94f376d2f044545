import csv
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from superpnc import harness
from superpnc.cli import main
from superpnc.drive import super_paper
from superpnc.dynamics import CSV_COLUMNS, propagate
from superpnc.harness import (
    SWEEP_COLUMNS,
    ConfigError,
    RunConfig,
    SweepResult,
    SweepSpec,
    apply_overrides,
    config_to_text,
    load_config,
    optimize_re_area,
    parse_config_text,
    parse_number,
    phonon_comparison,
    run_point,
    sweep,
    theta_grid,
)
from superpnc.observables import integrate_metrics
from superpnc.phonons.process_tensor import CompressionConfig

# phonon-free, short tail: cheap points for plumbing tests
QUICK = apply_overrides(RunConfig(), {"solver.tail": 30}).with_phonons(False)
# coarse bath grid for tests that only need phonons to act
COARSE_BATH = replace(apply_overrides(RunConfig(), {"solver.tail": 30}),
                      dt_pt=0.05, n_c=160, compression=CompressionConfig(1e-8))


# ---- config parsing --------------------------------------------------------------------

@pytest.mark.parametrize("text, value", [
    ("30pi", 30 * math.pi), ("15.95 pi", 15.95 * math.pi), ("pi", math.pi),
    ("-0.5pi", -0.5 * math.pi), ("2*pi", 2 * math.pi), ("1e-3", 1e-3), ("  4.2 ", 4.2),
])
def test_parse_number(text, value):
    assert parse_number(text) == pytest.approx(value, rel=1e-15)


def test_parse_number_rejects_garbage():
    with pytest.raises(ValueError):
        parse_number("twelve")


def test_config_text_round_trip_is_exact(tmp_path):
    cfg = apply_overrides(RunConfig(), {"drive.pulse2.area_pi": "20", "losses.kappa": "0.123456789",
                                        "phonons.temperature": "0", "compression.threshold": "1e-10"})
    path = tmp_path / "run.cfg"
    path.write_text(config_to_text(cfg))
    assert load_config(path) == cfg


def test_config_keys_applied(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\npreset = re-paper\ndrive.pulse1.area_pi = 3\n"
                    "cavity.g = 0.02  # trailing\nphonons.enabled = off\nphonons.dt_pt = 0.025\n")
    cfg = load_config(path)
    assert cfg.drive.pulses[0].area == pytest.approx(3 * math.pi)
    assert len(cfg.drive.pulses) == 1
    assert cfg.cavity.g == 0.02
    assert not cfg.phonons.enabled
    assert cfg.dt_pt == 0.025


@pytest.mark.parametrize("text, key", [
    ("cavity.bogus = 1", "cavity.bogus"),
    ("nonsense = 1", "nonsense"),
    ("drive.pulse1.sigma = -2", "drive.pulse1.sigma"),
    ("losses.kappa = abc", "losses.kappa"),
    ("preset = other", "preset"),
    ("phonons.n_c = 2.5", "phonons.n_c"),
    ("drive.pulse4.area_pi = 1", "drive.pulse4"),
])
def test_invalid_config_names_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        apply_overrides(RunConfig(), parse_config_text(text))


def test_duplicate_and_malformed_lines_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("cavity.g = 1\ncavity.g = 2")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("cavity.g 1")


def test_deterministic_flag_cannot_be_disabled():
    with pytest.raises(ConfigError, match="deterministic"):
        apply_overrides(RunConfig(), {"deterministic": "false"})


def test_new_pulse_needs_area_and_sigma():
    with pytest.raises(ConfigError, match="sigma"):
        apply_overrides(RunConfig(), {"drive.pulse3.area_pi": "1"})
    cfg = apply_overrides(RunConfig(), {"drive.pulse3.area_pi": "1", "drive.pulse3.sigma": "3"})
    assert len(cfg.drive.pulses) == 3


# ---- sweeps ----------------------------------------------------------------------------

def test_sweep_spec_validation():
    with pytest.raises(ValueError, match="empty"):
        SweepSpec("theta2", (), QUICK)
    with pytest.raises(ValueError, match="increasing"):
        SweepSpec("theta2", (1.0, 1.0), QUICK)
    with pytest.raises(ValueError, match="cannot sweep"):
        SweepSpec("no.such.key", (1.0,), QUICK)


def test_single_point_sweep_equals_direct_run():
    value = 20 * math.pi
    res = sweep(SweepSpec("theta2", (value,), QUICK, phonons=False), workers=1)
    drive = replace(super_paper(), pulses=(super_paper().pulses[0],
                                           replace(super_paper().pulses[1], area=value)))
    direct = integrate_metrics(propagate(drive, QUICK.cavity, QUICK.losses, QUICK.solver), warn=False)
    assert res.rows[0].metrics == direct
    assert res.rows[0].value == value


def test_sweep_rows_deterministic_and_ordered():
    spec = SweepSpec("theta2", theta_grid(0, 30 * math.pi, 4), QUICK, phonons=False)
    a = sweep(spec, workers=1)
    b = sweep(spec, workers=2)
    assert np.array_equal(a.table(), b.table())
    assert list(a.values) == list(spec.grid)


def test_generic_parameter_path():
    res = sweep(SweepSpec("cavity.g", (0.03, 0.05), QUICK, phonons=False, snapshot=False), workers=1)
    assert res.rows[0].metrics.rho11_int != res.rows[1].metrics.rho11_int
    assert math.isnan(res.rows[0].snapshot_rho_xx)


def test_point_failure_recorded_per_row(monkeypatch):
    real = harness.run_point

    def flaky(cfg, snapshot=True):
        if cfg.drive.pulses[1].area > 10:
            raise RuntimeError("boom")
        return real(cfg, snapshot)

    monkeypatch.setattr(harness, "run_point", flaky)
    res = sweep(SweepSpec("theta2", (1.0, 6.0, 20.0), QUICK, phonons=False), workers=1)
    assert [r.ok for r in res.rows] == [True, True, False]
    assert "boom" in res.rows[2].error
    assert np.isnan(res.table()[2, 1:]).all()


def test_sweep_csv_round_trip(tmp_path):
    res = sweep(SweepSpec("theta2", (0.0, 20 * math.pi), QUICK, phonons=False), workers=1)
    path = tmp_path / "sweep.csv"
    res.write_csv(path)
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == SWEEP_COLUMNS
    back = SweepResult.read_csv(path)
    assert np.array_equal(back.table(), res.table())


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e3, 1e3), st.lists(st.floats(0, 1e6), min_size=7, max_size=7))
def test_sweep_csv_round_trip_property(tmp_path_factory, value, vals):
    from superpnc.observables import MetricsRecord
    row = harness.SweepRow(value, MetricsRecord(*vals[:5], ratio_22_11=0.0), vals[5], vals[6])
    path = tmp_path_factory.mktemp("csv") / "s.csv"
    SweepResult(None, [row]).write_csv(path)
    assert np.array_equal(SweepResult.read_csv(path).table(), SweepResult(None, [row]).table())


def test_theta_zero_gives_nonzero_occupation():
    res = sweep(SweepSpec("theta2", (0.0,), QUICK, phonons=False), workers=1)
    assert res.rows[0].metrics.rhoXX_int > 1e-3


# ---- RE optimiser ----------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_optimum():
    # bad cavity, no radiative loss: the field follows the dot adiabatically
    base = apply_overrides(RunConfig(), {"preset": "re-paper", "drive.pulse1.sigma": 0.5, "cavity.g": 0.005,
                                         "losses.gamma": 0, "losses.kappa": 1.5, "solver.tail": 100})
    grid = theta_grid(0.2 * math.pi, 3.8 * math.pi, 10)
    return grid, optimize_re_area(base, grid, phonons=False, workers=1)


def test_optimizer_toy_lands_on_odd_multiple_of_pi(toy_optimum):
    _, opt = toy_optimum
    k = opt.theta / math.pi
    assert round(k) % 2 == 1
    assert abs(k - round(k)) <= 0.01


def test_optimizer_argmin_contract(toy_optimum):
    grid, opt = toy_optimum
    grid_values = [v for t, v in opt.evaluations[:len(grid)]]
    assert opt.objective <= min(grid_values)
    assert opt.objective == min(v for _, v in opt.evaluations)


def test_optimizer_refines_non_grid_minimum():
    base = apply_overrides(QUICK, {"preset": "re-paper"})
    grid = theta_grid(0.5 * math.pi, 1.5 * math.pi, 3)
    opt = optimize_re_area(base, grid, phonons=False, workers=1)
    assert len(opt.evaluations) > len(grid)
    assert opt.objective <= min(v for _, v in opt.evaluations[:len(grid)])


def test_optimizer_empty_grid():
    with pytest.raises(ValueError, match="empty"):
        optimize_re_area(QUICK, (), phonons=False)


# ---- phonon comparison -----------------------------------------------------------------

def test_phonon_comparison(tmp_path, monkeypatch):
    monkeypatch.setenv("SUPERPNC_CACHE_DIR", str(tmp_path))
    spec = SweepSpec("theta2", (10 * math.pi, 15 * math.pi), COARSE_BATH)
    comp = phonon_comparison(spec, workers=1)
    plain = sweep(replace(spec, phonons=False), workers=1)
    assert np.array_equal(comp.without_phonons.table(), plain.table())
    assert list(comp.with_phonons.values) == list(comp.without_phonons.values)
    assert np.all(comp.reduction("snapshot_rhoXX_10ps") < 1)
    assert np.all(comp.reduction("snapshot_absGX_10ps") < 1)
    assert 0 <= comp.relative_spread() < 1


# ---- CLI -------------------------------------------------------------------------------

def test_cli_simulate_writes_trajectory(tmp_path, capsys):
    out = tmp_path / "out.csv"
    assert main(["simulate", "--preset", "super-paper", "--no-phonons", "-o", str(out),
                 "--set", "solver.tail=30"]) == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) > 100
    assert "rho01_int" in capsys.readouterr().out


def test_cli_validate_config_negative_sigma(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("drive.pulse1.sigma = -3\n")
    assert main(["validate-config", str(bad)]) == 1
    assert "sigma" in capsys.readouterr().err


def test_cli_validate_config_ok(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("preset = super-paper\n")
    assert main(["validate-config", str(good)]) == 0
    assert "OK" in capsys.readouterr().out


def test_cli_unknown_flag_and_key(tmp_path, capsys):
    assert main(["simulate", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err
    assert main(["simulate", "--no-phonons", "--set", "cavity.frob=1"]) == 1
    assert "cavity.frob" in capsys.readouterr().err


def test_cli_sweep_121_rows(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--no-phonons", "--param", "theta2", "--from", "0", "--to", "30pi",
                 "--points", "121", "--workers", "1", "--set", "solver.tail=30", "-o", str(out)]) == 0
    res = SweepResult.read_csv(out)
    assert len(res.rows) == 121
    assert res.values[-1] == pytest.approx(30 * math.pi)


def test_cli_numerical_failure_exit_code(tmp_path, capsys):
    # a tiny bond budget cannot hold the process tensor
    code = main(["simulate", "--set", "compression.max_bond=2", "--set", "phonons.dt_pt=0.05",
                 "--set", "phonons.n_c=40", "--set", "solver.tail=30"])
    assert code == 2
    assert "numerical failure" in capsys.readouterr().err


def test_cli_compare_phonons_writes_both(tmp_path, monkeypatch):
    monkeypatch.setenv("SUPERPNC_CACHE_DIR", str(tmp_path))
    out = tmp_path / "cmp.csv"
    code = main(["compare-phonons", "--param", "theta2", "--from", "10pi", "--to", "20pi", "--points", "2",
                 "--workers", "1", "--set", "solver.tail=30", "--set", "phonons.dt_pt=0.05",
                 "--set", "phonons.n_c=160", "--set", "compression.threshold=1e-8", "-o", str(out)])
    assert code == 0
    assert len(SweepResult.read_csv(tmp_path / "cmp_phonons.csv").rows) == 2
    assert len(SweepResult.read_csv(tmp_path / "cmp_no_phonons.csv").rows) == 2
