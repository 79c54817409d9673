import math

import numpy as np
import pytest

from cutiga.experiments import (ExperimentReport, Verdict, excluded_cell, gate_verdicts,
                                lower_envelope_slope, run_rayleigh_table, run_rod_spectrum,
                                run_timestep_scaling, table_exponent)
from cutiga.forms import FormulationSpec


def same_rows(a, b):
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.keys() == rb.keys()
        for k in ra:
            x, y = ra[k], rb[k]
            if isinstance(x, float) and math.isnan(x):
                assert isinstance(y, float) and math.isnan(y), k
            else:
                assert x == y, k


@pytest.mark.parametrize("args, q", [
    ((2, "neumann", "lumped", "corner1", 2, 1), 0),
    ((2, "neumann", "consistent", "corner1", 2, 1), -2),
    ((2, "nitsche_ghost", "lumped", "sliver1", 1, 1), -2),
    ((2, "nitsche_ghost", "lumped+gm", "sliver1", 2, 1), 0),
    ((4, "nitsche_ghost", "consistent+gm", "corner1", 2, 2), 0),
    ((2, "neumann", "lumped", "sliver1", 1, 1), -1),
    ((2, "neumann", "lumped+gm", "sliver1", 1, 1), 1),
    ((2, "neumann", "lumped", "sliver2", 2, 1), 0),
    ((2, "nitsche_local", "lumped", "sliver2", 2, 1), -1),
])
def test_table_exponent_examples(args, q):
    assert table_exponent(*args) == q


def test_only_one_cell_excluded():
    assert excluded_cell(4, "nitsche_phi", "corner1", 1, 2)
    assert excluded_cell(4, "nitsche_phi", "corner1", 2, 2) is None
    assert excluded_cell(2, "nitsche_phi", "corner1", 1, 2) is None


def test_rayleigh_table_reports_rejected_cells():
    rep = run_rayleigh_table(order=4, formulation="nitsche_phi", mass="lumped", probe="sliver1",
                             p=2, d=1)
    assert not rep.rows and len(rep.rejected) == 1


def test_envelope_slope_of_exact_power_law():
    chi = np.logspace(-5, 0, 40)
    dt = 3.0 * chi ** 0.5
    slope, pts = lower_envelope_slope(chi, dt)
    assert slope == pytest.approx(0.5, abs=0.02)
    assert len(pts) == 6


def test_envelope_takes_bin_minimum():
    chi = [0.5, 0.2, 0.05, 0.02]
    dt = [1.0, 2.0, 0.1, 5.0]
    slope, pts = lower_envelope_slope(chi, dt)
    assert pts == [(0.05, 0.1), (0.5, 1.0)]
    assert slope == pytest.approx(1.0)


def test_envelope_single_bin_is_nan():
    assert math.isnan(lower_envelope_slope([0.2, 0.3], [1.0, 2.0])[0])


def small_scaling(jobs):
    forms = [FormulationSpec(), FormulationSpec(ghost_mass=True),
             FormulationSpec(boundary="nitsche_ghost", ghost_mass=True)]
    return run_timestep_scaling(formulations=forms, n_perturbations=3, n_elements=8, jobs=jobs)


def test_scaling_rows_deterministic_across_workers():
    a, b = small_scaling(1), small_scaling(2)
    same_rows(a.rows, b.rows)
    assert [r["perturbation"] for r in a.rows] == [0, 0, 0, 1, 1, 1, 2, 2, 2]


def test_scaling_gate_admits_nitsche_runs():
    rep = small_scaling(1)
    label = next(r["formulation"] for r in rep.rows if "nitsche" in r["formulation"])
    gate, spread = gate_verdicts(rep, label)
    assert gate.passed and spread.passed
    assert all(r["dt_crit"] > 0 for r in rep.rows)


def test_rod_uncut_lumped_not_stiffer_than_consistent():
    rep = run_rod_spectrum(chis=[1.0])
    top = {m: max(r["eigenvalue"] for r in rep.rows if r["mass"] == m)
           for m in ("consistent", "lumped")}
    assert sum(r["mass"] == "lumped" for r in rep.rows) == 6
    assert top["lumped"] <= top["consistent"]
    assert rep.verdict("lumped_bounded").passed


def test_report_lookup_and_pass_flag():
    rep = ExperimentReport("x", {}, rows=[{"a": 1}, {"b": 2, "a": 3}],
                           verdicts=[Verdict("one", True, 1.0, ""), Verdict("two", False, 0.0, "")])
    assert rep.columns() == ["a", "b"]
    assert not rep.passed
    assert rep.verdict("two").value == 0.0
    with pytest.raises(KeyError):
        rep.verdict("three")
