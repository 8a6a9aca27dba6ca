import pytest

from thinpde.harness import (
    EXIT_CERTIFICATE,
    EXIT_OK,
    EXIT_VALIDATION,
    ExperimentPlan,
    convergence_experiment,
    manufactured_solution_test,
    run_pipeline,
)
from thinpde.presets import _entry, reference_problem


def test_plan_requires_decreasing_eps(reference):
    with pytest.raises(ValueError):
        ExperimentPlan(problem=reference, eps_list=(0.1, 0.2))
    ExperimentPlan(problem=reference, eps_list=(0.2, 0.1))


def test_manufactured_rates():
    pure = manufactured_solution_test(nx_list=(32, 64, 128))
    assert pure.passed and pure.rate >= 1.7
    drift = manufactured_solution_test(nx_list=(32, 64, 128), drift=1.0)
    assert drift.passed and 0.9 <= drift.rate <= 2.1
    linear = manufactured_solution_test(nx_list=(16, 32), target="linear")
    assert linear.passed and all(e <= 1e-12 for e in linear.errors)
    linear_drift = manufactured_solution_test(nx_list=(16, 32), target="linear", drift=1.0)
    assert linear_drift.passed


@pytest.fixture(scope="module")
def ref_table(reference):
    plan = ExperimentPlan(problem=reference, nx=32, ny=16, limit_resolution=32)
    return convergence_experiment(plan)


def test_convergence_reference(ref_table):
    table = ref_table
    assert table.strictly_decreasing
    assert table.final_within_tolerance
    assert table.passed
    errs = [r.sup_error for r in table.rows]
    assert errs == sorted(errs, reverse=True)
    # sandwich holds at every eps, certified or not
    for row in table.rows:
        assert row.sandwich_lower_margin > 0
        assert row.sandwich_upper_margin > 0


def test_single_eps_plan(reference):
    plan = ExperimentPlan(problem=reference, eps_list=(0.1,), nx=16, ny=8, limit_resolution=16)
    table = convergence_experiment(plan, with_barriers=False)
    assert len(table.rows) == 1
    assert not table.strictly_decreasing  # no monotonicity verdict from one row


def test_slice_exact_gap_below_discretization(slice_exact):
    plan = ExperimentPlan(problem=slice_exact, nx=32, ny=16, limit_resolution=32)
    table = convergence_experiment(plan, with_barriers=False)
    for row in table.rows:
        assert row.sup_error <= table.disc_error_estimate
    # machine-zero gaps are not held to strict monotonicity
    assert table.within_noise_floor
    assert table.passed


def test_csv_deterministic(reference):
    plan = ExperimentPlan(problem=reference, eps_list=(0.1, 0.05), nx=16, ny=8, limit_resolution=16)
    a = convergence_experiment(plan).to_csv()
    b = convergence_experiment(plan).to_csv()
    assert a == b
    assert a.splitlines()[0].startswith("eps,")


def test_verdict_invariant_under_s_shift():
    base = reference_problem(s="x1")
    shifted = reference_problem(s="x1 + 1")
    shifted.bdata.s_candidate.expr.register_derivative("x1", "1")
    shifted.bdata.s_candidate.expr.register_derivative(("x1", "x1"), "0")
    plan_a = ExperimentPlan(problem=base, eps_list=(0.1, 0.05), nx=16, ny=8, limit_resolution=16)
    plan_b = ExperimentPlan(problem=shifted, eps_list=(0.1, 0.05), nx=16, ny=8, limit_resolution=16)
    ta = convergence_experiment(plan_a)
    tb = convergence_experiment(plan_b)
    assert ta.passed == tb.passed
    for ra, rb in zip(ta.rows, tb.rows):
        assert ra.sup_error == pytest.approx(rb.sup_error, abs=1e-14)


def test_pipeline_reference(reference, tmp_path):
    result = run_pipeline(reference, eps_list=(0.1, 0.05), nx=16, ny=8, limit_resolution=16, out_dir=str(tmp_path))
    assert result.exit_code == EXIT_OK
    assert (tmp_path / "pipeline_report.txt").exists()
    assert (tmp_path / "convergence.csv").exists()


def test_pipeline_stops_at_validation():
    result = run_pipeline(reference_problem(c="-1"))
    assert result.exit_code == EXIT_VALIDATION
    assert result.stage == "validate"


def test_pipeline_slice_exact_passes(slice_exact):
    result = run_pipeline(slice_exact, eps_list=(0.1, 0.05), nx=16, ny=8, limit_resolution=16)
    assert result.exit_code == EXIT_OK


def test_pipeline_distorted_flags_converge_stage(distorted):
    # first-order thin-to-limit gap: the final threshold is out of reach at
    # desk-scale grids, so the pipeline must stop at converge with its table
    result = run_pipeline(distorted, eps_list=(0.1, 0.05), nx=32, ny=16, limit_resolution=32)
    assert result.exit_code == 1
    assert result.stage == "converge"
    assert result.table is not None
    assert result.table.strictly_decreasing


def test_pipeline_stops_at_certificate():
    broken = reference_problem()
    broken.coeffs.entries[("1", "1")] = _entry(1, [["0", "0"], ["0", "1"]], ["0", "0"], "0", "0")
    result = run_pipeline(broken)
    assert result.exit_code == EXIT_CERTIFICATE
    assert result.stage == "certify"
