import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshgrow.conditions import (
    ClinicalCondition,
    Sex,
    encode_age,
    encode_condition,
    encode_interval,
    encode_sex,
)
from meshgrow.errors import ContractError


def hamming(a, b):
    return int(np.sum(a != b))


def test_interval_plus_three_matches_figure():
    v = encode_interval(3)
    # 1-based positions 1..53 are zero, 54..100 are one
    assert (v[:53] == 0).all() and (v[53:] == 1).all()


def test_interval_zero_splits_in_half():
    v = encode_interval(0)
    assert v.tolist() == [0] * 50 + [1] * 50


def test_interval_minus_three():
    v = encode_interval(-3)
    assert (v[:47] == 0).all() and (v[47:] == 1).all()


@pytest.mark.parametrize("delta", [-50, 50, 100])
def test_interval_out_of_range(delta):
    with pytest.raises(ContractError):
        encode_interval(delta)


def test_interval_is_step_vector():
    for d in range(-49, 50):
        v = encode_interval(d)
        assert (np.diff(v) >= 0).all()
        assert v.sum() == 50 - d


def test_interval_hamming_law_exhaustive():
    codes = {d: encode_interval(d) for d in range(-49, 50)}
    for d1, d2 in itertools.combinations(range(-49, 50), 2):
        assert hamming(codes[d1], codes[d2]) == abs(d1 - d2)
        assert (codes[d1] >= codes[d2]).all()


def test_age_boundaries():
    assert encode_age(0).sum() == 0
    v = encode_age(99)
    assert v.sum() == 99 and v[-1] == 0
    with pytest.raises(ContractError):
        encode_age(100)
    with pytest.raises(ContractError):
        encode_age(-1)


def test_age_hamming():
    assert hamming(encode_age(64), encode_age(67)) == 3
    for a, b in itertools.combinations(range(0, 100, 7), 2):
        assert hamming(encode_age(a), encode_age(b)) == abs(a - b)


def test_sex_codes():
    assert encode_sex("male").sum() == 0
    assert encode_sex(Sex.FEMALE).sum() == 100
    assert hamming(encode_sex("male"), encode_sex("female")) == 100
    with pytest.raises(ContractError):
        encode_sex("other")


def test_condition_layout():
    v = encode_condition(ClinicalCondition(64, "male", 3))
    assert v.shape == (300,)
    np.testing.assert_array_equal(v[:100], [1] * 64 + [0] * 36)
    np.testing.assert_array_equal(v[100:200], 0)
    np.testing.assert_array_equal(v[200:], encode_interval(3))


def test_condition_boundary():
    v = encode_condition(ClinicalCondition(0, "male", -49))
    np.testing.assert_array_equal(v[:200], 0)
    assert v[200] == 0 and (v[201:] == 1).all()


def test_condition_validates_ranges():
    with pytest.raises(ContractError):
        ClinicalCondition(64, "male", 60)
    with pytest.raises(ContractError):
        ClinicalCondition(120, "female", 0)


conditions = st.builds(
    ClinicalCondition,
    st.integers(0, 99),
    st.sampled_from([Sex.MALE, Sex.FEMALE]),
    st.integers(-49, 49),
)


@given(conditions, conditions)
def test_encoding_is_injective(a, b):
    same_code = np.array_equal(encode_condition(a), encode_condition(b))
    assert same_code == (a == b)
