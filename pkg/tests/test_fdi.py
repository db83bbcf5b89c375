import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slipcert.errors import DomainError, IndeterminateTail
from slipcert.fdi import (
    Multipliers,
    _tail_bound_frequency,
    check_fdi,
    check_fdi_minorant,
    dump_csv,
    even_quartic_min,
    fdi_value,
    omega_exact,
    omega_poly_lower_bound,
)
from slipcert.linear_part import DelayRationalTransfer, RationalTerm, eval_freq, perturb_singular, pll_transfer
from slipcert.nonlinearity import make_sine_minus_beta
from slipcert.slip_bounds import example_gamma0, example_recipe

T, S, H0 = 0.1, 0.4, 1.0
H = H0 * T
NL = make_sine_minus_beta(0.9)
TF = pll_transfer(T, S, H)
RECIPE = example_recipe(T, S, 0.9, H0)


def test_multiplier_validation():
    with pytest.raises(DomainError):
        Multipliers(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        Multipliers(1.0, 1.0, 1.0, 1.0, a=1.5)
    assert Multipliers(1, 1, 1, 1, 0.25).a0 == 0.75


def test_gamma0_and_recipe_values():
    assert example_gamma0(S, H0) == pytest.approx(1.28)
    assert RECIPE.eps == pytest.approx(0.5 * (1 - 1.28e-4) / T)
    assert RECIPE.delta == pytest.approx(0.5 * (1 - 1.28e-4) * T)
    assert RECIPE.tau == pytest.approx(1.28e-3)


def test_value_at_zero():
    m = Multipliers(1.3, 0.7, 0.02, 0.4)
    expected = m.theta * T - (m.eps + m.tau) * T**2 - m.delta
    assert fdi_value(TF, NL, m, 0.0) == pytest.approx(expected, abs=1e-15)


def test_popov_free_form():
    m = Multipliers(1.0, 1e-300, 0.01, 1e-300)
    w = np.linspace(0, 100, 33)
    np.testing.assert_allclose(fdi_value(TF, NL, m, w), np.real(eval_freq(TF, w)) - 0.01, atol=1e-14)


def test_matches_polynomial_form():
    w = np.linspace(0, 200, 50)
    m = Multipliers(1.0, 3.0, 0.04, 0.002)
    np.testing.assert_allclose((1 + T**2 * w**2) * fdi_value(TF, NL, m, w), omega_exact(T, S, H, m, w), rtol=1e-10, atol=1e-12)


def test_minorant_coefficients():
    c4, c2, c0 = omega_poly_lower_bound(T, S, H, RECIPE)
    assert c0 == pytest.approx(T - (RECIPE.eps + RECIPE.tau) * T**2 - RECIPE.delta, abs=1e-15)
    assert c4 == pytest.approx(RECIPE.tau * T**2 - 0.5 * T**3 * S * H0**2 * T**2)
    assert c4 >= 0


def test_minorant_below_exact():
    rng = np.random.default_rng(1)
    w = rng.uniform(0, 10 / T, 100)
    c4, c2, c0 = omega_poly_lower_bound(T, S, H, RECIPE)
    assert np.all(c4 * w**4 + c2 * w**2 + c0 <= omega_exact(T, S, H, RECIPE, w) + 1e-15)


def test_recipe_holds_numerically_and_by_minorant():
    assert check_fdi(TF, NL, RECIPE).holds
    assert check_fdi_minorant(T, S, H, RECIPE).holds


def test_large_delta_fails_at_zero():
    m = Multipliers(1.0, 1e-6, 10 * abs(eval_freq(TF, 0.0)) + 1, 1e-6)
    rep = check_fdi(TF, NL, m)
    assert not rep.holds
    # negative already at omega = 0; the minimum sits where Re K is smallest
    assert fdi_value(TF, NL, m, 0.0) < 0
    assert rep.min_margin <= fdi_value(TF, NL, m, 0.0)


def test_flipped_quartic_tail():
    tau = 0.25 * T * S * H**2  # below T s h^2 / 2
    m = Multipliers(1.0, 1.0, 0.01, tau)
    rep = check_fdi_minorant(T, S, H, m)
    assert not rep.tail_ok and not rep.holds


def test_indeterminate_tail():
    m = Multipliers(1.0, 1.0, 0.01, 1e-14)
    with pytest.raises(IndeterminateTail):
        _tail_bound_frequency(TF, NL, m, 1000.0)


def test_even_quartic_min():
    assert even_quartic_min(1.0, -2.0, 3.0) == pytest.approx((2.0, 1.0))
    assert even_quartic_min(1.0, 2.0, 3.0) == (3.0, 0.0)
    assert even_quartic_min(-1.0, 2.0, 3.0)[0] == -math.inf


def test_shrinking_delta_keeps_validity():
    m = Multipliers(1.0, 4.0, 0.04, 0.002)
    rep = check_fdi(TF, NL, m)
    assert rep.holds and rep.min_margin > 0
    shrunk = Multipliers(1.0, 4.0, 0.04 - rep.min_margin / 2, 0.002)
    rep2 = check_fdi(TF, NL, shrunk)
    assert rep2.holds
    assert rep2.min_margin == pytest.approx(rep.min_margin * 1.5, rel=1e-6)


@given(
    theta=st.floats(0.1, 10), eps=st.floats(1e-3, 10), delta=st.floats(1e-4, 1), tau=st.floats(1e-4, 1),
    w=st.floats(0, 1e3), dd=st.floats(0, 1),
)
@settings(max_examples=60, deadline=None)
def test_value_decreases_one_for_one_in_delta(theta, eps, delta, tau, w, dd):
    a = fdi_value(TF, NL, Multipliers(theta, eps, delta, tau), w)
    b = fdi_value(TF, NL, Multipliers(theta, eps, delta + dd, tau), w)
    assert a - b == pytest.approx(dd, abs=1e-9 * max(1.0, abs(a)))


def test_perturbed_margins_converge():
    m = Multipliers(1.0, 0.5, 0.01, 0.0005)  # minimum away from omega = 0
    base = check_fdi(TF, NL, m).min_margin
    diffs = [abs(check_fdi(perturb_singular(TF, mu), NL, m).min_margin - base) for mu in (1e-2, 1e-3, 1e-4)]
    assert diffs[0] > diffs[1] > diffs[2]


def test_general_transfer_check():
    tf = DelayRationalTransfer((RationalTerm((1.0,), (1.0, 3.0, 2.0)),))
    rep = check_fdi(tf, NL, Multipliers(1.0, 0.1, 0.05, 0.05))
    assert rep.tail_ok
    assert rep.grid_spec["points"] == 4096


def test_dump_csv(tmp_path):
    rep = check_fdi(TF, NL, RECIPE, points=64, keep_samples=True)
    path = tmp_path / "fdi.csv"
    dump_csv(rep, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "omega,fdi_value"
    assert len(lines) - 1 == rep.omega.size
    with pytest.raises(DomainError):
        dump_csv(check_fdi(TF, NL, RECIPE, points=64), path)
