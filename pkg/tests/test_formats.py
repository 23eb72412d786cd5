import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matdnn.features import Waveform
from matdnn.formats import (FormatError, dumps_matf, fmt_float, loads_matf, read_csv, read_feature_dir,
                            read_wav, write_csv, write_feature_dir, write_wav)
from matdnn.mdnn import MdnnConfig, init_mdnn
from matdnn.model_io import dumps_matm, dumps_matn, loads_matm, loads_matn
from matdnn.tokenizer import HyperParams, TokenSetModel

from conftest import make_seq


class TestMatf:
    @settings(max_examples=30, deadline=None)
    @given(T=st.integers(1, 6), D=st.integers(1, 5), uid=st.text(min_size=1, max_size=8),
           seed=st.integers(0, 1000))
    def test_round_trip(self, T, D, uid, seed):
        x = np.random.default_rng(seed).normal(size=(T, D)).astype(np.float32)
        f = make_seq(x, uid=uid, spk="spk")
        g = loads_matf(dumps_matf(f))
        assert (g.utterance_id, g.speaker_id, g.frame_shift) == (uid, "spk", 10)
        assert np.array_equal(g.frames, x.astype(np.float64))

    @pytest.mark.parametrize("mutate, msg", [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:4] + b"\x09\x00\x00\x00" + b[8:], "version"),
        (lambda b: b[:-3], "truncated"),
        (lambda b: b + b"\x00", "trailing"),
    ])
    def test_corruption_detected(self, mutate, msg):
        data = dumps_matf(make_seq(np.ones((2, 2))))
        with pytest.raises(FormatError, match=msg):
            loads_matf(mutate(data))

    def test_directory_round_trip(self, tmp_path):
        seqs = [make_seq(np.full((3, 2), i), uid=f"u{i}") for i in range(3)]
        write_feature_dir(tmp_path, seqs)
        back = read_feature_dir(tmp_path)
        assert [s.utterance_id for s in back] == ["u0", "u1", "u2"]

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_feature_dir(tmp_path)


class TestMatm:
    def test_round_trip_exact(self, rng):
        n, m, D = 3, 2, 4
        lm = rng.dirichlet(np.ones(n))
        model = TokenSetModel(HyperParams(m, n), rng.normal(size=(n, m, D)), rng.uniform(0.1, 2, (n, m, D)),
                              rng.uniform(0.1, 0.9, (n, m)), lm, 0.7)
        back = loads_matm(dumps_matm(model))
        for a in ("means", "variances", "self_loop", "token_lm"):
            assert np.array_equal(getattr(back, a), getattr(model, a))
        assert back.psi == model.psi and back.lm_weight == 0.7

    def test_bad_lm_rejected(self, rng):
        model = TokenSetModel(HyperParams(1, 2), np.zeros((2, 1, 1)), np.ones((2, 1, 1)),
                              np.full((2, 1), 0.5), np.array([0.5, 0.6]))
        with pytest.raises(FormatError):
            loads_matm(dumps_matm(model))


class TestMatn:
    @pytest.mark.parametrize("activation", ["logistic", "tanh"])
    def test_round_trip_float32(self, activation):
        net = init_mdnn(MdnnConfig([5, 4, 3], [2, 3], activation=activation))
        back = loads_matn(dumps_matn(net))
        assert back.config.layer_dims == [5, 4, 3] and back.config.heads == [2, 3]
        assert back.config.activation == activation
        for a, b in zip(net.params(), back.params()):
            assert np.array_equal(a.astype(np.float32), b)
        assert dumps_matn(back) == dumps_matn(net)


class TestWavCsv:
    def test_wav_round_trip(self, tmp_path):
        s = np.round(np.sin(np.arange(800) / 7) * 1000) / 32768
        write_wav(tmp_path / "spk_a.wav", Waveform("a", s, 8000))
        w = read_wav(tmp_path / "spk_a.wav")
        assert w.utterance_id == "spk_a" and w.sample_rate == 8000
        assert np.array_equal(w.samples, s)

    def test_csv_header_checked(self, tmp_path):
        write_csv(tmp_path / "x.csv", ["a", "b"], [(1, 2)])
        assert read_csv(tmp_path / "x.csv", ["a", "b"]) == [["1", "2"]]
        with pytest.raises(FormatError):
            read_csv(tmp_path / "x.csv", ["a", "c"])

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_fmt_float_round_trips(self, x):
        assert float(fmt_float(x)) == x
