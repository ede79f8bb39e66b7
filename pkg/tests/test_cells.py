import numpy as np
import pytest

from egru import cells, quantizer as qz
from egru._kernels import BACKENDS


def zero_egru(n_in=3, hidden=1):
    return cells.EgruLayerParams(np.zeros((hidden, hidden + n_in)), np.zeros(hidden),
                                 np.zeros((hidden, hidden + n_in)), np.zeros(hidden))


def test_q15_zero_params_halves_state():
    p = zero_egru().deploy()
    for x in ([0, 0, 0], [32767, -32768, 5]):
        np.testing.assert_array_equal(cells.egru_step_q15(p, np.array(x), np.array([16384])), [8192])


def test_q15_positive_gate_bias():
    p = zero_egru()
    p.bz[:] = 1.0
    dep = p.deploy()
    h = cells.egru_step_q15(dep, np.array([0, 0, 0]), np.array([16384]))
    # float oracle with the same levels: z = (softsign(1) + 1) / 2 = 0.75
    ref = cells.egru_step_float(p, np.zeros(3), np.array([0.5]))
    np.testing.assert_allclose(ref, [0.125])
    assert abs(int(h[0]) - 0.125 * 32768) <= 2


def test_float_zero_params():
    np.testing.assert_allclose(cells.egru_step_float(zero_egru(), np.zeros(3), np.array([0.5])), [0.25])
    g = cells.init_layer("gru", 3, 1, np.random.default_rng(0)).map(np.zeros_like)
    np.testing.assert_allclose(cells.gru_step_float(g, np.zeros(3), np.array([0.5])), [0.25])
    r = cells.init_layer("rnn", 3, 2, np.random.default_rng(0)).map(np.zeros_like)
    h = np.zeros(2)
    for _ in range(10):
        h = cells.rnn_step_float(r, np.ones(3), h)
    np.testing.assert_array_equal(h, 0.0)


def test_gru_saturated_gate_takes_candidate(rng):
    p = cells.init_layer("gru", 3, 2, rng)
    p.bz[:] = 50.0
    x, h = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 2)
    out = cells.gru_step_float(p, x, h)
    p.Wz[:] = 0
    _, cache = cells.gru_forward(p, x, h)
    np.testing.assert_allclose(out, cache[10], atol=1e-12)


def test_rnn_small_weights_nearly_linear():
    p = cells.RnnLayerParams(np.eye(2, 4) * 1e-3, np.zeros(2))
    x = np.array([1e-3, -2e-3])
    out = cells.rnn_step_float(p, x, np.zeros(2))
    np.testing.assert_allclose(out, p.W @ np.r_[np.zeros(2), x], rtol=1e-6)


def test_quantize_in_forward_is_noop_for_septenary(rng):
    p = cells.init_layer("egru", 4, 3, rng, min_range=0.8).deploy().decode()
    x, h = rng.uniform(0, 1, 4), rng.uniform(-1, 1, 3)
    np.testing.assert_array_equal(cells.egru_step_float(p, x, h, quantize_in_forward=True),
                                  cells.egru_step_float(p, x, h))


def test_interpolation_forms_agree(rng):
    p = cells.init_layer("egru", 4, 3, rng, min_range=0.8)
    x, h = rng.uniform(0, 1, (5, 4)), rng.uniform(-1, 1, (5, 3))
    out, cache = cells.egru_forward(p, x, h)
    z, ht = cache[5], cache[6]
    np.testing.assert_allclose(out, h + z * (ht - h), atol=1e-15)


def test_training_clip_bounds_preactivations(rng):
    p = cells.init_layer("egru", 4, 3, rng).map(lambda a: a * 0 + 1.0)
    _, cache = cells.egru_forward(p, np.ones((2, 4)), np.ones((2, 3)), clip=1.0)
    assert cache[1].max() <= 1.0 and cache[3].max() <= 1.0
    assert not cache[2].any()  # every pre-activation was clipped, so no gradient passes


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_step_shape_errors(kind, rng):
    p = cells.init_layer(kind, 4, 3, rng)
    step = {"egru": cells.egru_step_float, "gru": cells.gru_step_float, "rnn": cells.rnn_step_float}[kind]
    with pytest.raises(cells.ShapeError):
        step(p, np.zeros(5), np.zeros(3))
    with pytest.raises(cells.ShapeError):
        step(p, np.zeros(4), np.zeros(2))


def test_q15_step_requires_deployed(rng):
    with pytest.raises(TypeError):
        cells.egru_step_q15(cells.init_layer("egru", 2, 2, rng), np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
@pytest.mark.parametrize("activation", cells.ACTIVATIONS)
def test_cell_gradients_match_finite_differences(kind, activation, rng):
    """Single-layer BPTT through 4 steps against central differences."""
    p = cells.init_layer(kind, 3, 2, rng).map(lambda a: rng.normal(0, 0.7, a.shape))
    xs = rng.uniform(-1, 1, (4, 2, 3))
    w_out = rng.normal(size=2)
    fwd, bwd = cells.FORWARD[kind], cells.BACKWARD[kind]

    def loss(q):
        h = np.zeros((2, 2))
        for x in xs:
            h, _ = fwd(q, x, h, None, activation)
        return float(np.sum(h @ w_out))

    h = np.zeros((2, 2))
    caches = []
    for x in xs:
        h, c = fwd(p, x, h, None, activation)
        caches.append(c)
    grads = {n: np.zeros_like(a) for n, a in p.tensors()}
    dh = np.tile(w_out, (2, 1))
    for c in reversed(caches):
        dh, _ = bwd(p, c, dh, grads)
    eps = 1e-6
    for name, a in p.tensors():
        for idx in np.ndindex(a.shape):
            plus, minus = p.map(np.array), p.map(np.array)
            getattr(plus, name)[idx] += eps
            getattr(minus, name)[idx] -= eps
            fd = (loss(plus) - loss(minus)) / (2 * eps)
            g = grads[name][idx]
            assert abs(fd - g) <= 1e-4 * max(1e-6, abs(fd) + abs(g)), (name, idx, fd, g)


def test_q15_sequence_tracks_float_for_100_steps(rng):
    """Random-walk input; integer states stay within 0.005 of the float cell."""
    p = cells.init_layer("egru", 8, 6, rng, min_range=0.5).deploy()
    steps = np.cumsum(rng.normal(0, 0.05, (100, 8)), axis=0)
    x = np.clip(steps, -1, 32767 / 32768)
    xq = np.rint(x * 32768).astype(np.int16)
    out = cells.egru_sequence_q15(p, xq[None])[0] / 32768.0
    ref_p = p.decode()
    h = np.zeros(6)
    for t in range(100):
        h = cells.egru_step_float(ref_p, xq[t] / 32768.0, h)
        assert np.max(np.abs(out[t] - h)) <= 0.005


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_step_q15_single_and_batch(name, rng):
    p = cells.init_layer("egru", 4, 3, rng, min_range=0.6).deploy()
    x = rng.integers(0, 32768, (5, 4)).astype(np.int16)
    h = rng.integers(-32768, 32768, (5, 3)).astype(np.int16)
    batch = cells.egru_step_q15(p, x, h, kernel=BACKENDS[name])
    for i in range(5):
        np.testing.assert_array_equal(cells.egru_step_q15(p, x[i], h[i], kernel=BACKENDS[name]), batch[i])


def test_deploy_round_trip(rng):
    p = cells.init_layer("gru", 4, 3, rng, min_range=1.0)
    dep = p.deploy()
    assert dep.deployed
    for (_, a), (_, b) in zip(dep.decode().tensors(), p.tensors()):
        np.testing.assert_array_equal(a, qz.quantize(b))
