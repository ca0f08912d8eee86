from __future__ import annotations

import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lassodoa.class_estimator import solve_class
from lassodoa.manifold import UlaManifold
from lassodoa.perturbation import build_expansion
from lassodoa.textio import expansion_record, read_matrices, solution_record, write_matrices

from conftest import twice_rayleigh_truth

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=5), elements=finite),
    hnp.arrays(np.complex128, hnp.array_shapes(min_dims=2, max_dims=2, max_side=5), elements=st.complex_numbers(allow_nan=False, allow_infinity=False)),
)
def test_round_trip_is_exact(R, C):
    text = write_matrices(None, {"m": 3, "note": "x y"}, {"R": R, "C": C})
    head, mats = read_matrices(text)
    assert head == {"m": "3", "note": "x y"}
    np.testing.assert_array_equal(mats["R"], R)
    np.testing.assert_array_equal(mats["C"], C)
    assert mats["R"].dtype == float and mats["C"].dtype == complex


def test_vectors_become_columns_and_targets(tmp_path):
    p = tmp_path / "v.txt"
    write_matrices(p, {}, {"v": np.array([1.0, 2.0])})
    _, mats = read_matrices(p)
    assert mats["v"].shape == (2, 1)
    buf = io.StringIO()
    write_matrices(buf, {"k": 1}, {})
    buf.seek(0)
    assert read_matrices(buf)[0] == {"k": "1"}


def test_malformed_input():
    with pytest.raises(ValueError):
        read_matrices("[A] 1 2 real\n1.0\n")
    with pytest.raises(ValueError):
        read_matrices("[A] 1 1 quaternion\n1\n")
    with pytest.raises(ValueError):
        read_matrices("nonsense line\n")
    with pytest.raises(ValueError):
        write_matrices(None, {"a=b": 1}, {})


def test_solution_and_expansion_records():
    man = UlaManifold(10)
    truth = twice_rayleigh_truth(10)
    sol = solve_class(truth.synthesize(man), man, 0.3)
    head, mats = read_matrices(write_matrices(None, *solution_record(sol)))
    assert head["kind"] == "class_solution" and head["certified"] == "true"
    assert float(head["lambda"]) == sol.lam
    np.testing.assert_array_equal(mats["thetas"][:, 0], sol.thetas)
    np.testing.assert_array_equal(mats["amplitudes"], sol.amplitudes)
    exp = build_expansion(man, truth)
    head, mats = read_matrices(write_matrices(None, *expansion_record(exp)))
    assert head["n"] == "2"
    np.testing.assert_array_equal(mats["R"], exp.R)
    np.testing.assert_array_equal(mats["beta"][:, 0], exp.beta)
    np.testing.assert_array_equal(mats["Xi"], exp.Xi)
