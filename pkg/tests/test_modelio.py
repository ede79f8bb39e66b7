import numpy as np
import pytest

from egru import modelio, network, quantizer

COUGH = network.COUGH_CONFIG


def random_model(config=COUGH, seed=0):
    rng = np.random.default_rng(seed)
    return network.init_params(config, rng).map(lambda a: rng.uniform(-1.2, 1.2, a.shape)).deploy()


def test_round_trip_bit_identical():
    params = random_model()
    back, config = modelio.load(modelio.save(params, COUGH))
    assert config == COUGH
    for a, b in zip(params.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)
        assert b.dtype == np.uint8


def test_cough_size_formula():
    data = modelio.save(random_model(), COUGH)
    tensors = [a.size for a in network.zero_params(COUGH).arrays()]
    assert len(data) == 16 + sum((3 * n + 7) // 8 for n in tensors) + 4 == 3072
    assert len(data) <= 3500
    assert (3 * 8127 + 7) // 8 <= len(data) - 20 <= (3 * 8127 + 7) // 8 + len(tensors)


def test_header_layout():
    data = modelio.save(random_model(), COUGH)
    assert data[:4] == b"EGRU" and data[4] == 1 and data[5] == 0
    assert data[6:16] == np.array([64, 30, 20, 16, 3], dtype="<u2").tobytes()


@pytest.mark.parametrize("kind", ["gru", "rnn"])
def test_other_cells_round_trip(kind):
    cfg = network.ModelConfig(cell_kind=kind, num_classes=4)
    params = random_model(cfg)
    back, config = modelio.load(modelio.save(params, cfg))
    assert config == cfg
    assert all(np.array_equal(a, b) for a, b in zip(params.arrays(), back.arrays()))


def test_activation_flag_round_trip():
    cfg = network.ModelConfig(cell_kind="gru", activation="softsign")
    _, config = modelio.load(modelio.save(random_model(cfg), cfg))
    assert config.activation == "softsign"


def test_every_flipped_byte_detected():
    data = modelio.save(random_model(network.ModelConfig(recurrent_sizes=(3, 2), dense_size=2, input_bins=4)),
                        network.ModelConfig(recurrent_sizes=(3, 2), dense_size=2, input_bins=4))
    for i in range(len(data)):
        bad = bytearray(data)
        bad[i] ^= 0x5A
        with pytest.raises(modelio.ModelFormatError):
            modelio.load(bytes(bad))


def test_specific_errors():
    data = modelio.save(random_model(), COUGH)
    with pytest.raises(modelio.BadMagicError):
        modelio.load(b"XXXX" + data[4:])
    with pytest.raises(modelio.BadVersionError):
        modelio.load(data[:4] + b"\x02" + data[5:])
    with pytest.raises(modelio.ChecksumError):
        modelio.load(data[:100] + bytes([data[100] ^ 1]) + data[101:])
    with pytest.raises(modelio.LengthError):
        modelio.load(data[:10])
    # a consistent CRC over a truncated payload still fails the length check
    import zlib
    body = data[:-5]
    with pytest.raises(modelio.LengthError):
        modelio.load(body + zlib.crc32(body).to_bytes(4, "little"))


def test_save_requires_deployed():
    params = network.init_params(COUGH, np.random.default_rng(0))
    with pytest.raises(modelio.ModelMismatchError):
        modelio.save(params, COUGH)
    with pytest.raises(modelio.ModelMismatchError):
        modelio.save(params.deploy(), network.with_config(COUGH, num_classes=4))


def test_float_sidecar_round_trip():
    params = network.init_params(COUGH, np.random.default_rng(1))
    data = modelio.save_float(params, COUGH, {"epoch": 7})
    back, config, meta = modelio.load_float(data)
    assert config == COUGH and meta == {"epoch": 7}
    for a, b in zip(params.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)
    assert modelio.read_any(data)[2] == {"epoch": 7}
    bad = bytearray(data)
    bad[-20] ^= 1
    with pytest.raises(modelio.ChecksumError):
        modelio.load_float(bytes(bad))


def test_serialization_injective():
    a = random_model(seed=1)
    b = a.copy()
    b.cls_b[0] = (b.cls_b[0] + 1) % 3  # 0 -> 1 -> 2, all valid codes
    assert modelio.save(a, COUGH) != modelio.save(b, COUGH)


def test_loaded_model_predicts_identically():
    params = random_model()
    back, cfg = modelio.load(modelio.save(params, COUGH))
    X = network.quantize_input(np.random.default_rng(2).uniform(0, 0.3, (5, 64, 24)))
    np.testing.assert_array_equal(network.forward_q15_logits(params, COUGH, X),
                                  network.forward_q15_logits(back, cfg, X))
    assert quantizer.CODE_ZERO in np.concatenate([a.ravel() for a in back.arrays()])
