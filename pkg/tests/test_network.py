import numpy as np
import pytest

from egru import cells, network
from egru._kernels import BACKENDS

TINY = network.ModelConfig(input_bins=6, recurrent_sizes=(4, 3), dense_size=5, num_classes=3)


def random_septenary(config, rng, scale=0.5):
    return network.init_params(config, rng).map(lambda a: rng.uniform(-scale, scale, a.shape)).deploy()


def test_cough_parameter_count():
    assert network.param_count(network.COUGH_CONFIG) == 2 * 30 * 95 + 2 * 20 * 51 + 16 * 21 + 3 * 17 == 8127
    params = network.init_params(network.COUGH_CONFIG, np.random.default_rng(0))
    assert sum(a.size for a in params.arrays()) == 8127


@pytest.mark.parametrize("kind", cells.CELL_KINDS)
def test_param_count_matches_arrays(kind):
    cfg = network.ModelConfig(cell_kind=kind, num_classes=10)
    params = network.init_params(cfg, np.random.default_rng(0))
    assert network.param_count(cfg) == sum(a.size for a in params.arrays())


def test_config_validation():
    with pytest.raises(ValueError):
        network.ModelConfig(num_classes=1)
    with pytest.raises(ValueError):
        network.ModelConfig(cell_kind="lstm")
    cfg = network.ModelConfig(cell_kind="gru", activation="softsign")
    assert network.ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_everything_gives_uniform_probabilities():
    params = network.zero_params(TINY)
    _, probs = network.forward_float(params, TINY, np.zeros((6, 9)))
    np.testing.assert_allclose(probs, 1 / 3)
    assert network.forward_q15(params.deploy(), TINY, np.zeros((6, 9), dtype=np.int16)) == 0


def test_single_step_is_one_cell_step_per_layer(rng):
    params = network.init_params(TINY, rng, min_range=0.5)
    x = rng.uniform(0, 1, (6, 1))
    _, _, states = network.forward_float(params, TINY, x, return_states=True)
    h1 = cells.egru_step_float(params.layers[0], x[:, 0], np.zeros(4))
    h2 = cells.egru_step_float(params.layers[1], h1, np.zeros(3))
    np.testing.assert_allclose(states[0][0], h1)
    np.testing.assert_allclose(states[1][0], h2)


def test_batch_matches_single(rng):
    params = network.init_params(TINY, rng, min_range=0.5)
    X = rng.uniform(0, 1, (4, 6, 7))
    logits, _ = network.forward_float(params, TINY, X)
    for i in range(4):
        np.testing.assert_allclose(network.forward_float(params, TINY, X[i])[0], logits[i])


def test_q15_matches_float_reference(rng):
    cfg = network.COUGH_CONFIG
    params = random_septenary(cfg, rng)
    X = network.quantize_input(rng.uniform(0, 0.2, (50, 64, 40)))
    lq, sq = network.forward_q15_logits(params, cfg, X, return_states=True)
    lf, _, sf = network.forward_float(params, cfg, X / 32768.0, quantize_in_forward=True,
                                      emulate_q15=True, return_states=True)
    for a, b in zip(sq, sf):
        assert np.max(np.abs(a / 32768.0 - b)) <= 0.005
    assert np.max(np.abs(lq / 32768.0 - lf)) <= 0.01
    assert np.mean(lq.argmax(1) == lf.argmax(1)) >= 0.99


def test_q15_backends_identical(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension not built")
    params = random_septenary(network.COUGH_CONFIG, rng, scale=1.0)
    X = network.quantize_input(rng.uniform(0, 1, (8, 64, 30)))
    a = network.forward_q15_logits(params, network.COUGH_CONFIG, X, kernel=BACKENDS["compiled"])
    b = network.forward_q15_logits(params, network.COUGH_CONFIG, X, kernel=BACKENDS["python"])
    np.testing.assert_array_equal(a, b)


def test_q15_rejects_bad_inputs(rng):
    params = random_septenary(TINY, rng)
    with pytest.raises(TypeError):
        network.forward_q15(params, TINY, np.zeros((6, 3)))  # float input
    with pytest.raises(TypeError):
        network.forward_q15(params.decode(), TINY, np.zeros((6, 3), dtype=np.int16))
    with pytest.raises(cells.ShapeError):
        network.forward_q15(params, TINY, np.zeros((5, 3), dtype=np.int16))
    gru = network.with_config(TINY, cell_kind="gru", activation="standard")
    with pytest.raises(ValueError):
        network.forward_q15(network.init_params(gru, rng).deploy(), gru, np.zeros((6, 3), dtype=np.int16))


def test_check_params_rejects_mismatch(rng):
    params = network.init_params(TINY, rng)
    with pytest.raises(cells.ShapeError):
        network.check_params(params, network.with_config(TINY, dense_size=6))


def test_quantize_input_range():
    q = network.quantize_input(np.array([[0.0, 0.5, 0.99999999, 1.5]]))
    np.testing.assert_array_equal(q, [[0, 16384, 32767, 32767]])
    assert q.dtype == np.int16


def test_named_tensor_order():
    names = [n for n, _ in network.zero_params(TINY).named_tensors()]
    assert names == ["layer1.Wz", "layer1.bz", "layer1.Wh", "layer1.bh",
                     "layer2.Wz", "layer2.bz", "layer2.Wh", "layer2.bh",
                     "dense.W", "dense.b", "classifier.W", "classifier.b"]
