import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipcert.errors import ContractViolation, DomainError, NoCertificate
from slipcert.fdi import Multipliers, check_fdi
from slipcert.linear_part import make_pll_example, make_rational_model
from slipcert.nonlinearity import make_sine_minus_beta, period_integral
from slipcert.slip_bounds import (
    SearchBudget,
    certificate_from_dict,
    certificate_to_dict,
    certify,
    example_bound,
    example_q,
    example_r0,
    is_positive_definite,
    matrix_Tj,
    pd_margin,
    q0_singular,
    q_general,
    r_coefficients,
    t1_gap,
    verify_certificate,
)

NL = make_sine_minus_beta(0.9)
mults = st.builds(
    Multipliers,
    theta=st.floats(0.1, 5), eps=st.floats(1e-3, 5), delta=st.floats(1e-3, 5), tau=st.floats(1e-3, 5), a=st.floats(0, 1),
)


def test_r_coefficients_x_zero():
    rc = r_coefficients(NL, 1, 1.0, 1.0, 0.1, 0.0)
    closed = -math.pi * 0.9 / (2 * (0.9 * math.asin(0.9) + math.sqrt(1 - 0.81)))
    assert rc.r1 == rc.r2 == pytest.approx(closed, rel=1e-10)


def test_r_coefficients_large_k():
    rc = r_coefficients(NL, 10**9, 1.0, 1.0, 0.1, 0.2)
    assert rc.r2 == pytest.approx(rc.r1, abs=1e-9)


def test_r2_worked_value():
    rc = r_coefficients(NL, 1, 1.0, 1.0, 0.0, 0.204384)
    assert rc.r2 == pytest.approx((-5.654867 + 0.204384) / 5.774727, abs=1e-6)
    assert rc.r2 == pytest.approx(-0.943851, abs=1e-6)


def test_r1j_reduces_to_rj():
    rc = r_coefficients(NL, 3, 1.0, 1.0, 0.0, 0.5)
    assert abs(rc.r11 - rc.r1) < 1e-12 and abs(rc.r12 - rc.r2) < 1e-12


def test_matrix_structure():
    m = Multipliers(2.0, 0.5, 0.7, 0.9, a=0.25)
    M = matrix_Tj(m, -0.4, -0.8)
    assert np.allclose(np.diag(M), [0.5, 0.7, 0.9])
    assert M[0, 2] == 0 and M[0, 1] == pytest.approx(0.25 * 2 * -0.4 / 2) and M[1, 2] == pytest.approx(0.75 * 2 * -0.8 / 2)
    np.testing.assert_array_equal(matrix_Tj(m, 0, 0), np.diag([0.5, 0.7, 0.9]))


def test_pd_examples():
    assert is_positive_definite(np.eye(3))
    assert not is_positive_definite(np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ContractViolation):
        is_positive_definite(np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ContractViolation):
        is_positive_definite(np.eye(2))


@given(m=mults, rj=st.floats(-3, 3), r0j=st.floats(-3, 3))
@settings(max_examples=200, deadline=None)
def test_a_equal_one_reduces_to_minor(m, rj, r0j):
    m1 = Multipliers(m.theta, m.eps, m.delta, m.tau, 1.0)
    pd = is_positive_definite(matrix_Tj(m1, rj, r0j))
    lhs, rhs = m1.eps * m1.delta, (m1.theta * rj / 2) ** 2
    if abs(lhs - rhs) > 1e-12 * max(lhs, rhs, 1e-300):
        assert pd == (lhs > rhs)
    # structural zeros
    assert pd == is_positive_definite(matrix_Tj(m1, rj, 0.0))
    m0 = Multipliers(m.theta, m.eps, m.delta, m.tau, 0.0)
    assert is_positive_definite(matrix_Tj(m0, rj, r0j)) == is_positive_definite(matrix_Tj(m0, 0.0, r0j))


def test_pd_monotone_in_k():
    for delta in (0.22, 0.23, 0.3):
        m = Multipliers(1.0, 4.0, delta, 0.5, 0.6)
        verdicts = [pd_margin(NL, k, m, 0.6) > 0 for k in range(1, 21)]
        assert all(b or not a for a, b in zip(verdicts, verdicts[1:]))
        assert verdicts[-1]
    assert not pd_margin(NL, 1, Multipliers(1.0, 4.0, 0.22, 0.5, 0.6), 0.6) > 0


def test_example_q_values():
    A, B, C = 3.5 * 0.81 + 3, 3 * 0.6 * 1.9 * 3.7, 1.5 * 0.36 * 1.9**2
    assert (A, B, C) == pytest.approx((5.835, 12.654, 1.9494))
    assert example_q(0.1, 0.4, 0.9, 1.0) == pytest.approx(0.204384, abs=1e-12)
    assert example_q(0.1, 0.4, 0.9, 0.0) == pytest.approx(0.01 * A)


@pytest.mark.parametrize("beta, r0", [(0.9, 1), (0.92, 2), (0.95, 5)])
def test_example_r0(beta, r0):
    assert example_r0(0.1, 0.4, beta, 1.0) == r0


def test_heavily_biased_has_no_bound():
    with pytest.raises(NoCertificate):
        example_bound(0.1, 0.4, 1.0, 1.0)


def test_q_monotone_on_grid():
    Ts = np.linspace(0.02, 0.5, 9)
    betas = np.linspace(0.05, 1.0, 9)
    h0s = np.linspace(0.0, 2.0, 9)
    for beta in betas:
        for h0 in h0s:
            assert np.all(np.diff([example_q(T, 0.4, beta, h0) for T in Ts]) > 0)
    for T in Ts:
        for h0 in h0s:
            assert np.all(np.diff([example_q(T, 0.4, beta, h0) for beta in betas]) > 0)
        for beta in betas:
            assert np.all(np.diff([example_q(T, 0.4, beta, h0) for h0 in h0s]) > 0)


def test_q_general_limits():
    m = make_pll_example(0.1, 0.4, 0.9, 1.0)
    tiny = Multipliers(1.0, 1e-300, 1.0, 1e-300)
    assert q_general(m, tiny) == pytest.approx(m.decay_M * 1.9 / m.decay_r)
    mult = Multipliers(1.0, 5.0, 0.05, 0.001)
    from dataclasses import replace

    doubled = replace(m, decay_M=2 * m.decay_M)
    assert q_general(doubled, mult) > 2 * q_general(m, mult)


def test_q0_limits():
    nl = make_sine_minus_beta(0.5)
    mult = Multipliers(1.0, 1.0, 0.1, 0.1)
    no_rho = make_rational_model([((1.0,), (1.0, 1.0), 0.0)], nl)
    assert q0_singular(no_rho, mult) == pytest.approx(q_general(no_rho, mult))
    no_h = make_rational_model([((1.0,), (1.0, 1.0), 0.0)], nl, rho=0.3, h=0.0)
    assert q0_singular(no_h, mult) == pytest.approx(q_general(no_h, mult))
    ex = make_pll_example(0.1, 0.4, 0.9, 1.0)
    assert q0_singular(ex, mult) > q_general(ex, mult)
    with pytest.raises(DomainError):
        q0_singular(ex, mult, reading="other")


def test_certify_example_matches_r0():
    m = make_pll_example(0.1, 0.4, 0.9, 1.0)
    cert = certify(m, "T3")
    assert cert.k_bound <= example_r0(0.1, 0.4, 0.9, 1.0) + 1
    assert cert.q_source == "example" and cert.fdi_method == "minorant"
    assert verify_certificate(m, cert).valid
    assert certificate_from_dict(certificate_to_dict(cert)) == cert


def test_certify_off_root_adds_one():
    m = make_pll_example(0.1, 0.4, 0.9, 1.0)
    a = certify(m, "T3")
    b = certify(m, "T3", root_start=False)
    assert b.k_bound == a.k_bound + 1 and b.k_plus_one_applied


def test_certify_deterministic_seed():
    m = make_pll_example(0.1, 0.4, 0.92, 1.0)
    a = certify(m, "T3", SearchBudget(seed=3))
    b = certify(m, "T3", SearchBudget(seed=3))
    assert certificate_to_dict(a) == certificate_to_dict(b)


def test_certify_t4_flags():
    m = make_pll_example(0.1, 0.4, 0.9, 1.0)
    cert = certify(m, "T4")
    assert cert.theorem_used == "T4" and cert.requires_root_start
    assert any("mu0" in n for n in cert.notes)
    assert "q0_split_reading" in cert.margins
    assert verify_certificate(m, cert).valid


def test_certify_t1_t2_with_user_q():
    m = make_pll_example(0.1, 0.4, 0.9, 1.0)
    c2 = certify(m, "T2", q=0.3)
    c1 = certify(m, "T1", q=0.3)
    assert c2.q_source == "user" and c1.q_source == "user"
    assert verify_certificate(m, c2).valid and verify_certificate(m, c1).valid


def test_unbiased_limit_trivially_certifies():
    # beta -> 0+: int phi = 0 and with x = 0 every T_j is diagonal
    nl = make_sine_minus_beta(1e-12)
    assert abs(period_integral(nl, "phi")) < 1e-9
    m = Multipliers(1.0, 1.0, 0.1, 0.1, 0.5)
    assert pd_margin(nl, 1, m, 0.0) > 0


def test_t1_never_stronger_than_t2_on_example_family():
    for beta in np.linspace(0.5, 0.95, 10):
        nl = make_sine_minus_beta(beta)
        for k in (1, 2, 5):
            m = Multipliers(1.0, 1.0, 0.3, 1e-9, 1.0)
            # with eps = 1 and tiny tau, r_1j ~ r_j; T1 passing implies the a = 1 minor passes
            if t1_gap(nl, k, m, 0.2) > 1e-6:
                assert pd_margin(nl, k, m, 0.2) > 0


def test_certify_general_brute_force_oracle():
    # delay-free stable second-order filter; brute force over a multiplier grid
    nl = make_sine_minus_beta(0.3)
    model = make_rational_model([((1.0, 2.0), (1.0, 3.0, 2.0), 0.0)], nl)
    cert = certify(model, "T2", SearchBudget(k_max=30), q=0.5)
    grid = np.logspace(-2, 1, 7)
    best = math.inf
    for eps in grid:
        for delta in grid:
            for tau in grid:
                m = Multipliers(1.0, eps, delta, tau, 1.0)
                if not check_fdi(model.transfer, nl, m, points=512).holds:
                    continue
                for k in range(1, 31):
                    if pd_margin(nl, k, m, 0.5) > 0:
                        best = min(best, k)
                        break
    assert cert.k_bound <= best


def test_fixed_t3_no_certificate_budget():
    m = make_pll_example(0.1, 0.4, 0.95, 1.0)
    with pytest.raises(NoCertificate) as exc:
        certify(m, "T3", SearchBudget(k_max=2))
    assert "objective" in exc.value.best
