"""Smoke test for the dilequiv extension module.

Build and install first:

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/dilequiv-*.whl

Then run with ``python python/smoke_test.py`` or ``pytest python/smoke_test.py``.
"""

import math

import numpy as np
import pytest

import dilequiv

COUNTER = ([[2, 2], [0, 2]], [[2, 4], [0, 2]])
SPLIT = ([[3, 0], [0, 2]], [[3, 0], [1, 2]])


def test_verdicts():
    v = dilequiv.classify(*SPLIT)
    assert (v.hom_besov_equal, v.inhom_besov_equal, v.hardy_equal) == (False, True, False)
    report = v.to_dict()
    assert report["schema"] == 1
    assert report["normal_form_A"]["matrix"]

    v = dilequiv.classify(*COUNTER)
    assert not (v.hom_besov_equal or v.inhom_besov_equal or v.hardy_equal)
    assert v.epsilon == pytest.approx(1.0)


def test_normal_form():
    rng = np.random.default_rng(0)
    c = rng.normal(size=(3, 3))
    a = c @ np.array([[3.0, 1.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 1.5]]) @ np.linalg.inv(c)
    nf = dilequiv.normal_form(a.tolist())
    m = np.array(nf.matrix)
    assert np.linalg.det(m) == pytest.approx(2.0, abs=1e-9)
    assert all(e > 1 for e in nf.eigenvalues)
    cubed = dilequiv.normal_form(np.linalg.matrix_power(a, 3).tolist())
    assert np.abs(np.array(cubed.matrix) - m).max() < 1e-6
    assert nf.distance(cubed) < 1e-6


def test_probe_matches_shear_norm():
    p = dilequiv.probe(*COUNTER, k_max=100)
    row = p["ks"].index(100)
    expected = math.log((100 + math.sqrt(100**2 + 4)) / 2)
    assert p["log_norms"][row] == pytest.approx(expected, abs=1e-9)
    assert p["label"].startswith("polynomial")


def test_quasi_norm_homogeneity():
    a = [[2.0, 1.0], [0.0, 2.0]]
    q = dilequiv.QuasiNorm(a)
    x = [0.3, -0.7]
    ax = (np.array(a) @ np.array(x)).tolist()
    assert q.shell(ax) == q.shell(x) + 1
    assert q(ax) == pytest.approx(q.det * q(x))
    assert q([0.0, 0.0]) == 0.0
    assert math.isfinite(q.triangle_constant(500))


def test_covering_indicators():
    counts = dilequiv.weak_counts(*COUNTER, r=10.0, range=50)
    assert counts["max_count"] > 0
    same = [[2, 1], [0, 3]]
    checks = dilequiv.covering_checks(same, same, directions=200)
    assert all(checks[k]["bounded"] for k in ("weak_counts", "subordination", "quasi_norm_orbits"))


def test_growth_and_roundtrip():
    g = dilequiv.growth_exponents([[2, 1, 0], [0, 2, 1], [0, 0, 2]], [0, 0, 1], k_min=10, k_max=200)
    assert g["polynomial_degree"] == 2 and abs(g["rate"] - 2) < 0.02
    a = [[2.0, 0.5], [0.0, 3.0]]
    back = dilequiv.matrix_exp(dilequiv.matrix_log(a))
    assert np.abs(np.array(back) - np.array(a)).max() < 1e-12


def test_errors():
    with pytest.raises(ValueError):
        dilequiv.classify([[0.5, 0], [0, 2]], [[2, 0], [0, 2]])
    with pytest.raises(ValueError):
        dilequiv.classify([[2, 0], [0, 2]], [[2]])
    assert issubclass(dilequiv.NumericalError, ArithmeticError)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
