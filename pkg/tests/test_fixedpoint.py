import numpy as np
import pytest
from hypothesis import given, strategies as st

from egru import fixedpoint as fp

q15 = st.integers(fp.Q15_MIN, fp.Q15_MAX)
acc = st.integers(-fp.ACC_CLIP, fp.ACC_CLIP)


def test_constants():
    assert fp.Q15_ONE == 32768
    assert fp.ACC_CLIP == 2 ** 21 - 1
    # the softsign numerator must fit a signed 32-bit register
    assert fp.ACC_CLIP << 10 < 2 ** 31


@pytest.mark.parametrize("a, b, want", [(16384, 8192, 24576), (32767, 1, 32767), (-32768, -32768, -32768)])
def test_sat_add(a, b, want):
    assert fp.sat_add(a, b) == want


@pytest.mark.parametrize("a, b, want", [(16384, 16384, 8192), (-32768, -32768, 32767), (12345, 0, 0)])
def test_q15_mul(a, b, want):
    assert fp.q15_mul(a, b) == want


@pytest.mark.parametrize("a, b, want", [(8192, 16384, 16384), (16384, -32768, -16384), (5000, 5000, 32767)])
def test_q15_div(a, b, want):
    assert fp.q15_div(a, b) == want


def test_q15_div_by_zero():
    with pytest.raises(ZeroDivisionError):
        fp.q15_div(1, 0)


def test_tdiv_truncates_toward_zero():
    assert fp.tdiv(-7, 2) == -3
    assert fp.tdiv(7, -2) == -3
    assert fp.tdiv(-7, -2) == 3
    np.testing.assert_array_equal(fp.tdiv(np.array([-7, 7]), 2), [-3, 3])


@pytest.mark.parametrize("x, want", [(0, 0), (2 ** 30, 2097151), (-2097151, -2097151), (-2 ** 31, -2097151)])
def test_clip_acc(x, want):
    assert fp.clip_acc(x) == want


@pytest.mark.parametrize("x, want", [(0, 0), (32768, 16384), (98304, 24576), (-32768, -16384), (-98304, -24576)])
def test_softsign_exact_points(x, want):
    assert fp.softsign_q15(x) == want


def test_softsign_strided_sweep_against_double():
    x = np.arange(-fp.ACC_CLIP, fp.ACC_CLIP + 1, 17)
    got = np.asarray(fp.softsign_q15(x)) / 32768.0
    ref = (x / 32768.0) / (1.0 + np.abs(x / 32768.0))
    assert np.max(np.abs(got - ref)) <= 2.0 ** -11


@given(acc)
def test_softsign_is_odd_and_bounded(x):
    y = fp.softsign_q15(x)
    assert fp.softsign_q15(-x) == -y
    assert -32768 < y < 32768


@given(acc, acc)
def test_softsign_monotone(a, b):
    if a <= b:
        assert fp.softsign_q15(a) <= fp.softsign_q15(b)


@pytest.mark.parametrize("x, want", [(0, 16384), (32768, 24576), (-32768, 8192)])
def test_gate_softsign(x, want):
    assert fp.gate_softsign_q15(x) == want


@given(acc)
def test_gate_range(x):
    assert 0 <= fp.gate_softsign_q15(x) <= 32767


@pytest.mark.parametrize("x, want", [(-5, 0), (0, 0), (12345, 12345)])
def test_relu(x, want):
    assert fp.relu_q15(x) == want


@given(q15)
def test_real_round_trip(raw):
    assert fp.to_q15(fp.to_real(raw)) == raw


def test_to_q15_saturates():
    assert fp.to_q15(1.0) == 32767
    assert fp.to_q15(-2.0) == -32768
    np.testing.assert_array_equal(fp.to_q15([0.5, -0.25]), [16384, -8192])


@given(q15, q15)
def test_mul_matches_real_product(a, b):
    want = np.clip(np.floor(a * b / 32768), -32768, 32767)
    assert fp.q15_mul(a, b) == want


def test_vectorized_matches_scalar(rng):
    a = rng.integers(-32768, 32768, 200)
    b = rng.integers(-32768, 32768, 200)
    vec = fp.sat_add(a, b)
    assert [fp.sat_add(int(x), int(y)) for x, y in zip(a, b)] == vec.tolist()
