"""Acceptance gate: every criterion at its stated tolerance, one line each.

Heavy artifacts (particle runs, reference solves) are shared through a
session-scoped context so the suite runs each expensive simulation once.
"""

import pytest

from rslv_lab import acceptance


@pytest.fixture(scope="session")
def ctx():
    return acceptance.AcceptanceContext()


def _run(name, ctx):
    result = acceptance.CRITERIA[name](ctx)
    print(acceptance.format_result(result))
    for rep in result.reports:
        assert rep.passed, (f"{name}: {rep.description}: "
                            f"{rep.statistic:.6g} vs {rep.threshold:.6g}")
    return result


def test_c01_figure_grid_reproduction(ctx):
    _run("c01", ctx)


def test_c02_d3_exactness(ctx):
    _run("c02", ctx)


def test_c03_matrix_field_identities(ctx):
    _run("c03", ctx)


def test_c04_coercivity_certificate(ctx):
    _run("c04", ctx)


def test_c05_fbm_solver_vs_heat_kernel(ctx):
    _run("c05", ctx)


def test_c06_rslv_solver_closure(ctx):
    _run("c06", ctx)


def test_c07_aronson_decay(ctx):
    _run("c07", ctx)


def test_c08_fake_bm_marginals(ctx):
    _run("c08", ctx)


def test_c09_quadratic_variation_signature(ctx):
    _run("c09", ctx)


def test_c10_particle_pde_cross_validation(ctx):
    _run("c10", ctx)


def test_c11_rslv_calibration(ctx):
    _run("c11", ctx)


def test_c12_jump_fake_bm(ctx):
    _run("c12", ctx)
