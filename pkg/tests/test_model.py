import numpy as np
import pytest
from scipy.special import expit

from vidground.errors import DimensionError, EmptyInputError, FormatError, VocabMismatchError
from vidground.model import (
    GatedUnitParams,
    ModelConfig,
    embed_text,
    embed_visual,
    gated_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    similarity,
    similarity_matrix,
)


def small_model(seed=0, vocab=30, dim=6, d_word=5, d_joint=4, **kw):
    cfg = ModelConfig(feature_dim=dim, vocab_size=vocab, d_word=d_word, d_joint=d_joint, **kw)
    return init_model(cfg, seed=seed)


class TestGatedForward:
    def test_zero_gate_weights_halve_h(self):
        rng = np.random.default_rng(0)
        p = GatedUnitParams(
            W1=rng.normal(size=(3, 2)), b1=rng.normal(size=2),
            W2=np.zeros((2, 2)), b2=np.zeros(2),
        )
        x = rng.normal(size=3)
        h = x @ p.W1 + p.b1
        np.testing.assert_allclose(gated_forward(x, p), 0.5 * h, rtol=1e-12)

    def test_zero_input_zero_output(self):
        rng = np.random.default_rng(1)
        p = GatedUnitParams(
            W1=rng.normal(size=(3, 2)), b1=np.zeros(2),
            W2=rng.normal(size=(2, 2)), b2=rng.normal(size=2),
        )
        np.testing.assert_array_equal(gated_forward(np.zeros(3), p), np.zeros(2))

    def test_hand_computed_3_to_2(self):
        W1 = np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6]])
        b1 = np.array([0.05, -0.05])
        W2 = np.array([[0.2, -0.1], [0.0, 0.3]])
        b2 = np.array([-0.2, 0.1])
        x = np.array([1.0, 2.0, -1.0])
        h = np.array([
            1.0 * 0.1 + 2.0 * 0.3 + (-1.0) * (-0.5) + 0.05,
            1.0 * (-0.2) + 2.0 * 0.4 + (-1.0) * 0.6 - 0.05,
        ])
        z = np.array([h[0] * 0.2 + h[1] * 0.0 - 0.2, h[0] * (-0.1) + h[1] * 0.3 + 0.1])
        expected = h / (1.0 + np.exp(-z)) * 1.0  # h * sigmoid(z)
        got = gated_forward(x, GatedUnitParams(W1, b1, W2, b2))
        np.testing.assert_allclose(got, expected, atol=1e-6)

    def test_dimension_mismatch(self):
        p = GatedUnitParams(np.zeros((3, 2)), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(DimensionError):
            gated_forward(np.zeros(4), p)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        p = GatedUnitParams(
            W1=rng.normal(size=(4, 3)), b1=rng.normal(size=3),
            W2=rng.normal(size=(3, 3)), b2=rng.normal(size=3),
        )
        x = rng.normal(size=4)
        eps = 1e-4
        # analytic d y / d x
        h = x @ p.W1 + p.b1
        g = expit(h @ p.W2 + p.b2)
        dgdz = g * (1 - g)
        jac = np.zeros((3, 4))
        for i in range(3):
            dy_dh = np.zeros(3)
            dy_dh[i] = g[i]
            dy_dh += h[i] * dgdz[i] * p.W2[:, i]
            jac[i] = p.W1 @ dy_dh
        for j in range(4):
            xp, xm = x.copy(), x.copy()
            xp[j] += eps
            xm[j] -= eps
            num = (gated_forward(xp, p) - gated_forward(xm, p)) / (2 * eps)
            np.testing.assert_allclose(jac[:, j], num, rtol=1e-4, atol=1e-8)


class TestEmbeddings:
    def test_unit_norm(self):
        m = small_model()
        e = embed_text(m, [1, 2, 3])
        assert abs(np.linalg.norm(e) - 1.0) < 1e-6
        e = embed_visual(m, np.random.default_rng(0).normal(size=(5, 6)).astype(np.float32))
        assert abs(np.linalg.norm(e) - 1.0) < 1e-6

    def test_single_token_pools_to_its_row(self):
        m = small_model()
        view = m.view()
        np.testing.assert_array_equal(view.embed_text([4]), view.embed_text([4, 4]))

    def test_duplicate_and_permutation_invariance(self):
        m = small_model()
        base = embed_text(m, [1, 5, 9])
        np.testing.assert_array_equal(base, embed_text(m, [9, 1, 5]))
        np.testing.assert_array_equal(base, embed_text(m, [1, 1, 5, 9, 9]))

    def test_empty_inputs_rejected(self):
        m = small_model()
        with pytest.raises(EmptyInputError):
            embed_text(m, [])
        with pytest.raises(EmptyInputError):
            embed_visual(m, np.zeros((0, 6), dtype=np.float32))

    def test_visual_pooling_rows(self):
        m = small_model()
        view = m.view()
        row = np.random.default_rng(1).normal(size=(1, 6)).astype(np.float32)
        np.testing.assert_array_equal(view.embed_visual(row), view.embed_visual(np.vstack([row, row])))
        # two-row fixture pools to the elementwise max
        two = np.array([[1, -2, 3, 0, 5, -1], [0, 4, -3, 2, 1, 6]], dtype=np.float32)
        pooled_direct = view.embed_visual(two)
        pooled_manual = view.embed_visual(np.maximum(two[0], two[1])[None, :])
        np.testing.assert_array_equal(pooled_direct, pooled_manual)


class TestSimilarity:
    def test_identical_orthogonal_opposite(self):
        v = np.array([1.0, 0.0])
        w = np.array([0.0, 1.0])
        assert similarity(v, v) == 1.0
        assert similarity(v, w) == 0.0
        assert similarity(v, -v) == -1.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a = rng.normal(size=8)
            a /= np.linalg.norm(a)
            b = rng.normal(size=8)
            b /= np.linalg.norm(b)
            assert similarity(a, b) == similarity(b, a)
            assert -1.0 - 1e-12 <= similarity(a, b) <= 1.0 + 1e-12

    def test_matrix_matches_pairwise_calls(self):
        m = small_model(seed=7)
        rng = np.random.default_rng(3)
        windows = [rng.normal(size=(5, 6)).astype(np.float32) for _ in range(4)]
        ids = [[1, 2], [3], [4, 5, 6], [7, 8]]
        sim = similarity_matrix(m, windows, ids)
        view = m.view()
        for i in range(4):
            for j in range(4):
                expected = similarity(view.embed_visual(windows[i]), view.embed_text(ids[j]))
                assert sim[i, j] == pytest.approx(expected, abs=1e-12)

    def test_constant_model_constant_matrix(self):
        m = small_model()
        m.word_table[:] = 1.0  # every caption pools to the same vector
        windows = [np.full((5, 6), 2.0, dtype=np.float32)] * 3
        sim = similarity_matrix(m, windows, [[1], [2], [3]])
        assert np.all(sim == sim[0, 0])


class TestCheckpoints:
    def test_round_trip_preserves_similarities_bitwise(self, tmp_path):
        m = small_model(seed=9, vocab_hash="h1")
        # nudge parameters off the f32 grid, as after f64 training
        for _, a in m.named_parameters():
            a += 1e-9 * np.pi
        rng = np.random.default_rng(4)
        windows = [rng.normal(size=(5, 6)).astype(np.float32) for _ in range(3)]
        ids = [[1], [2, 3], [4]]
        before = similarity_matrix(m, windows, ids)
        save_checkpoint(m, tmp_path / "m.gck")
        back = load_checkpoint(tmp_path / "m.gck")
        np.testing.assert_array_equal(before, similarity_matrix(back, windows, ids))

    def test_vocab_hash_checked(self, tmp_path):
        m = small_model(vocab_hash="expected")
        save_checkpoint(m, tmp_path / "m.gck")
        load_checkpoint(tmp_path / "m.gck", expected_vocab_hash="expected")
        with pytest.raises(VocabMismatchError):
            load_checkpoint(tmp_path / "m.gck", expected_vocab_hash="other")

    def test_truncated_file(self, tmp_path):
        m = small_model()
        save_checkpoint(m, tmp_path / "m.gck")
        raw = (tmp_path / "m.gck").read_bytes()
        (tmp_path / "bad.gck").write_bytes(raw[: len(raw) - 5])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad.gck")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.gck").write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad.gck")

    def test_step_count_and_config_round_trip(self, tmp_path):
        m = small_model(seed=1, vocab_hash="vh", window_len_s=10.0)
        m.step_count = 123
        save_checkpoint(m, tmp_path / "m.gck")
        back = load_checkpoint(tmp_path / "m.gck")
        assert back.step_count == 123
        assert back.config.window_len_s == 10.0
        assert back.config.vocab_hash == "vh"
