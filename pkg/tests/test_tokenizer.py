import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from matdnn.synth import SynthConfig, generate_corpus
from matdnn.tokenizer import (HyperParams, Segment, TokenLabeling, TokenSetModel, decode, decode_utterance,
                              estimate_models, initialize_labels, joint_loglik, label_change, train_layer,
                              variance_floor)

from conftest import make_seq
from oracles import all_labelings, best_labeling, best_two_partition, segment_score


def random_model(rng, m, n, D):
    return TokenSetModel(
        HyperParams(m, n),
        rng.normal(size=(n, m, D)) * 1.5,
        rng.uniform(0.3, 2.0, size=(n, m, D)),
        rng.uniform(0.05, 0.95, size=(n, m)),
        rng.dirichlet(np.ones(n)),
        float(rng.uniform(0.5, 2.0)),
    )


class TestHyperParams:
    @pytest.mark.parametrize("m, n", [(0, 2), (3, 1)])
    def test_invalid(self, m, n):
        with pytest.raises(ValueError):
            HyperParams(m, n)

    def test_ordering(self):
        assert sorted([HyperParams(5, 4), HyperParams(3, 8), HyperParams(3, 4)])[0] == HyperParams(3, 4)


class TestLabeling:
    def test_frame_tokens(self):
        lab = TokenLabeling({"u": [(1, 0, 3), (0, 3, 5)]})
        assert lab.frame_tokens("u").tolist() == [1, 1, 1, 0, 0]

    @pytest.mark.parametrize("segs, msg", [
        ([(0, 0, 3), (1, 4, 6)], "gap"),
        ([(0, 0, 2), (1, 2, 6)], "shorter"),
        ([(0, 0, 3), (5, 3, 6)], "range"),
        ([(0, 0, 5)], "span"),
    ])
    def test_invariants(self, segs, msg):
        with pytest.raises(ValueError, match=msg):
            TokenLabeling({"u": segs}).validate({"u": 6}, 3, 2)

    def test_short_utterance_single_segment_allowed(self):
        TokenLabeling({"u": [(0, 0, 2)]}).validate({"u": 2}, 3, 2)


class TestInitialize:
    def test_fixed_cuts(self):
        f = make_seq(np.r_[np.zeros((10, 1)), np.ones((10, 1)), np.zeros((10, 1))])
        lab = initialize_labels([f], HyperParams(3, 2), seg_len=10)
        assert [(s.start, s.end) for s in lab["u0"]] == [(0, 10), (10, 20), (20, 30)]
        assert {s.token_id for s in lab["u0"]} <= {0, 1}

    def test_short_utterance(self):
        corpus = [make_seq(np.zeros((2, 1)), uid="a"), make_seq(np.ones((20, 1)), uid="b")]
        lab = initialize_labels(corpus, HyperParams(3, 2))
        assert lab["a"] == [Segment(lab["a"][0].token_id, 0, 2)]

    def test_too_few_segments(self):
        with pytest.raises(ValueError, match="at least n=4"):
            initialize_labels([make_seq(np.zeros((25, 1)))], HyperParams(3, 4))

    @pytest.mark.parametrize("seed", range(5))
    def test_two_clouds_match_exhaustive_partition(self, seed):
        rng = np.random.default_rng(seed)
        N = int(rng.integers(6, 13))
        side = rng.integers(2, size=N)
        side[:2] = [0, 1]
        corpus = []
        for i in range(N):
            centre = np.array([6.0, -6.0])[side[i]]
            corpus.append(make_seq(centre + 0.3 * rng.normal(size=(10, 2)), uid=f"u{i:02d}"))
        lab = initialize_labels(corpus, HyperParams(3, 2), seed=seed)
        got = np.array([lab[f.utterance_id][0].token_id for f in corpus])
        want = best_two_partition(np.array([f.frames.mean(axis=0) for f in corpus]))
        assert np.array_equal(got, want) or np.array_equal(got, 1 - want)


class TestEstimate:
    def test_constant_segments(self):
        c = np.array([2.0, -1.0])
        corpus = [make_seq(np.tile(c, (6, 1)), uid="a"), make_seq(np.random.default_rng(0).normal(size=(6, 2)), uid="b")]
        lab = TokenLabeling({"a": [(0, 0, 6)], "b": [(1, 0, 6)]})
        floor = variance_floor(corpus)
        model = estimate_models(corpus, lab, HyperParams(3, 2), floor=floor)
        assert np.allclose(model.means[0], c)
        assert np.allclose(model.variances[0], floor)

    def test_add_one_lm(self):
        x = np.random.default_rng(0).normal(size=(12, 1))
        lab = TokenLabeling({"u": [(0, 0, 3), (0, 3, 6), (1, 6, 9), (0, 9, 12)]})
        model = estimate_models([make_seq(x, uid="u")], lab, HyperParams(3, 2))
        assert np.allclose(model.token_lm, [4 / 6, 2 / 6])

    def test_empty_token_rescued(self):
        x = np.random.default_rng(0).normal(size=(12, 1))
        lab = TokenLabeling({"u": [(0, 0, 6), (0, 6, 12)]})
        model = estimate_models([make_seq(x, uid="u")], lab, HyperParams(3, 3), seed=1)
        assert model.rescued == [1, 2]
        assert not np.allclose(model.means[1], model.means[0])
        assert np.allclose(model.variances[1], model.variances[0])

    def test_reestimation_does_not_decrease(self, small_corpus):
        corpus = small_corpus.features[:5]
        psi = HyperParams(3, 4)
        lab = initialize_labels(corpus, psi)
        m0 = estimate_models(corpus, lab, psi)
        lab1 = decode(corpus, m0)
        m1 = estimate_models(corpus, lab1, psi, prev=m0)
        assert joint_loglik(corpus, m1, lab1) >= joint_loglik(corpus, m0, lab1) - 1e-9


class TestJointLoglik:
    def test_empty_corpus(self):
        model = random_model(np.random.default_rng(0), 2, 2, 1)
        assert joint_loglik([], model, TokenLabeling()) == 0

    def test_single_state_closed_form(self):
        D = 3
        mean = np.array([0.5, -1.0, 2.0])
        model = TokenSetModel(HyperParams(1, 2), np.stack([mean[None], mean[None] + 5]), np.ones((2, 1, D)),
                              np.full((2, 1), 0.25), np.array([0.6, 0.4]))
        x = np.tile(mean, (4, 1))
        got = joint_loglik([make_seq(x, uid="u")], model, TokenLabeling({"u": [(0, 0, 4)]}))
        want = 4 * (-D / 2 * np.log(2 * np.pi)) + 3 * np.log(0.25) + np.log(0.75) + np.log(0.6)
        assert got == pytest.approx(want, abs=1e-10)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_segment_score_matches_duration_enumeration(self, m):
        rng = np.random.default_rng(m)
        model = random_model(rng, m, 2, 2)
        x = rng.normal(size=(7, 2))
        lab = TokenLabeling({"u": [(1, 0, 7)]})
        want = segment_score(x, model.means[1], model.variances[1], model.self_loop[1])
        want += model.lm_weight * np.log(model.token_lm[1])
        assert joint_loglik([make_seq(x, uid="u")], model, lab) == pytest.approx(want, abs=1e-9)


class TestDecode:
    @pytest.mark.parametrize("seed", range(12))
    def test_matches_exhaustive_search(self, seed):
        rng = np.random.default_rng(100 + seed)
        m, D = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        T = int(rng.integers(m, 11))
        model = random_model(rng, m, 2, D)
        x = rng.normal(size=(T, D)) * 1.5
        score, segs = decode_utterance(x, model)
        want, arg = best_labeling(x, model)
        assert score == pytest.approx(want, abs=1e-8)
        corpus = [make_seq(x, uid="u")]
        assert joint_loglik(corpus, model, TokenLabeling({"u": segs})) == pytest.approx(want, abs=1e-8)

    def test_decoded_beats_every_alternative(self):
        rng = np.random.default_rng(7)
        model = random_model(rng, 2, 2, 1)
        x = rng.normal(size=(12, 1))
        corpus = [make_seq(x, uid="u")]
        best = joint_loglik(corpus, model, decode(corpus, model))
        for segs in all_labelings(12, 2, 2):
            assert joint_loglik(corpus, model, TokenLabeling({"u": segs})) <= best + 1e-9

    def test_sign_flips(self):
        x = np.repeat(np.array([1.0, -1.0, 1.0, -1.0]), 10)[:, None]
        model = TokenSetModel(HyperParams(3, 2), np.array([[[1.0]] * 3, [[-1.0]] * 3]), np.full((2, 3, 1), 0.01),
                              np.full((2, 3), 0.7), np.array([0.5, 0.5]))
        segs = decode_utterance(x, model)[1]
        starts = [s.start for s in segs[1:]]
        assert len(starts) == 3
        assert all(abs(a - b) <= 1 for a, b in zip(starts, [10, 20, 30]))

    def test_short_utterance_single_segment(self):
        model = random_model(np.random.default_rng(0), 3, 2, 1)
        _, segs = decode_utterance(np.zeros((2, 1)), model)
        assert len(segs) == 1 and segs[0][1:] == (0, 2)

    def test_dim_mismatch(self):
        model = random_model(np.random.default_rng(0), 2, 2, 3)
        with pytest.raises(ValueError):
            decode([make_seq(np.zeros((5, 2)))], model)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10**6), m=st.integers(1, 4), T=st.integers(1, 40))
    def test_output_is_valid_and_deterministic(self, seed, m, T):
        rng = np.random.default_rng(seed)
        model = random_model(rng, m, 3, 2)
        corpus = [make_seq(rng.normal(size=(T, 2)), uid="u")]
        a, b = decode(corpus, model), decode(corpus, model)
        assert a == b
        a.validate({"u": T}, m, 3)


class TestTrainLayer:
    def test_zero_iterations_returns_initial(self, small_corpus):
        corpus = small_corpus.features
        psi = HyperParams(3, 4)
        model, lab = train_layer(corpus, psi, max_iters=0)
        assert lab == initialize_labels(corpus, psi)
        assert np.allclose(model.means, estimate_models(corpus, lab, psi).means)

    @pytest.mark.parametrize("psi", [HyperParams(3, 4), HyperParams(5, 8)])
    def test_history_monotone(self, small_corpus, psi):
        hist = []
        _, lab = train_layer(small_corpus.features, psi, history=hist)
        values = [v for _, _, v in hist]
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(values, values[1:]))
        lab.validate({f.utterance_id: f.num_frames for f in small_corpus.features}, psi.m, psi.n)

    def test_deterministic(self, small_corpus):
        a = train_layer(small_corpus.features, HyperParams(3, 4), seed=5)[1]
        b = train_layer(small_corpus.features, HyperParams(3, 4), seed=5)[1]
        assert a == b

    def test_label_change(self):
        corpus = [make_seq(np.zeros((4, 1)), uid="u")]
        a = TokenLabeling({"u": [(0, 0, 4)]})
        b = TokenLabeling({"u": [(0, 0, 2), (1, 2, 4)]})
        assert label_change(corpus, a, b) == 0.5

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            train_layer([], HyperParams(3, 2))

    def test_recovers_noiseless_phones(self):
        c = generate_corpus(SynthConfig(num_speakers=1, phone_noise_std=0.0, num_utterances=30, seed=0))
        _, lab = train_layer(c.features, HyperParams(3, 8))
        hits = total = 0
        for uid, segs in lab.items():
            gold = {a for a, _, _ in c.gold.phones[uid][1:]}
            found = {s.start for s in segs[1:]}
            hits += sum(any(abs(f - g) <= 2 for g in gold) for f in found)
            total += len(found)
        assert hits / total > 0.8
