import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stickylab.funcspec import parse
from stickylab.model import (
    HTable,
    HypothesisError,
    Origin,
    SingularTransformError,
    build_model,
    negate_coefficients,
    negate_transform,
    read_htable_csv,
    write_htable_csv,
)


def sticky(**kw):
    cfg = dict(x=0, T=1, alpha="0", rho="1")
    cfg.update(kw)
    return build_model(cfg)


def test_sticky_case_is_valid():
    m = sticky()
    assert m.alpha_cap == 0.0 and m.rho_floor == 1.0 and m.rho_lipschitz == 0.0


def test_alpha_above_half_is_rejected():
    with pytest.raises(HypothesisError, match="1/2"):
        sticky(alpha="0.6")


def test_rejection_names_the_first_bad_time():
    with pytest.raises(HypothesisError, match=r"t=0\.700"):
        build_model(dict(x=0, T=1, alpha="max(0, t-0.2)", rho="1"))


def test_negative_alpha_is_rejected():
    with pytest.raises(HypothesisError, match="negative"):
        sticky(alpha="-0.1")


def test_rho_vanishing_at_zero_is_rejected():
    with pytest.raises(HypothesisError, match="u=0"):
        sticky(rho="u")


def test_rho_undefined_is_rejected():
    with pytest.raises(HypothesisError):
        sticky(rho="1/(u-0.5)")


def test_missing_and_bad_fields():
    with pytest.raises(KeyError):
        build_model(dict(x=0, T=1, alpha="0"))
    with pytest.raises(ValueError):
        sticky(T=0)


def test_expression_objects_are_accepted():
    m = build_model(dict(x=0, T=1, alpha=parse("0.25", "t"), rho=parse("1/(1+u)", "u")))
    assert m.rho(1.0) == 0.5
    with pytest.raises(ValueError):
        build_model(dict(x=0, T=1, alpha=parse("0.25", "u"), rho="1"))


def test_build_is_deterministic():
    cfg = dict(x=0.5, T=2, alpha="0.5*min(1, t)", rho="1-u/2")
    a, b = build_model(cfg), build_model(cfg)
    assert a == b and a.digest() == b.digest()
    assert a.rho_lipschitz == pytest.approx(0.5)


def test_htable_invariants():
    with pytest.raises(ValueError):
        HTable(dt=0.1, values=np.array([1.0, 1.2]), residuals=np.zeros(2))
    with pytest.raises(ValueError):
        HTable(dt=0.1, values=np.array([1.0, 0.5]), residuals=np.zeros(3))
    h = HTable(dt=0.1, values=np.array([1.0, 0.5]), residuals=np.zeros(2))
    h.check_initial(0.0)
    with pytest.raises(ValueError):
        h.check_initial(1.0)
    with pytest.raises(ValueError):
        h.values[0] = 0.3


def test_htable_csv_round_trip(tmp_path):
    vals = np.array([1.0, 0.7, 0.612345678901234567, 0.5])
    h = HTable(dt=0.25, values=vals, residuals=np.array([0.0, 1e-13, -2e-14, 3e-15]))
    path = tmp_path / "h.csv"
    text = write_htable_csv(h, path)
    assert text.splitlines()[0] == "t,h,residual"
    back = read_htable_csv(path)
    assert back.origin == Origin.EXTERNAL
    assert np.array_equal(back.values, h.values)
    assert np.array_equal(back.residuals, h.residuals)
    assert back.dt == h.dt


def _table(values):
    v = np.asarray(values, dtype=float)
    return HTable(dt=0.5, values=v, residuals=np.zeros(v.size))


def test_negation_identity_case():
    m = sticky(rho="1/(1+u)")
    h = _table([1.0, 0.6, 0.5])
    neg = negate_transform(m, h)
    assert np.all(neg.alpha == 0.0)
    assert np.array_equal(neg.varrho, 1.0 / (1.0 + h.values))


def test_negation_quarter():
    m = sticky(alpha="0.25", rho="1/(1+u)")
    h = _table([1.0, 0.6, 0.5])
    neg = negate_transform(m, h)
    assert np.all(neg.alpha == -0.5)
    assert np.allclose(neg.varrho, 2.0 / (1.0 + h.values), rtol=0, atol=1e-15)


def test_negation_singular_at_half():
    m = sticky(alpha="0.5")
    with pytest.raises(SingularTransformError):
        negate_transform(m, _table([1.0, 0.5]))


@settings(max_examples=300, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=0.5 - 1e-3),
    st.floats(min_value=1e-3, max_value=1e3),
)
def test_negation_is_an_involution(alpha, varrho):
    a1, r1 = negate_coefficients(alpha, varrho)
    assert a1 <= 0
    a2, r2 = negate_coefficients(a1, r1)
    assert abs(a2 - alpha) <= 1e-14
    assert abs(r2 - varrho) <= 1e-14 * max(1.0, varrho)
