"""VQ baseline tests: nearest-neighbor lookup against a brute-force scan,
straight-through gradients, EMA recursion against a hand-rolled oracle, and
codebook splitting postconditions."""

import numpy as np
import pytest

from quantlab.autodiff import Tensor, backward
from quantlab.vq import (VqCodebook, VqLossWeights, ema_update,
                         split_codebook, vq_losses, vq_quantize)

RNG = np.random.default_rng(99)


def brute_force_nearest(z: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    out = np.empty(z.shape[0], dtype=np.int64)
    for i, row in enumerate(z):
        out[i] = int(np.argmin([np.sum((row - c) ** 2) for c in vectors]))
    return out


class TestQuantize:
    def test_two_codeword_example(self):
        cb = VqCodebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
        q, idx = vq_quantize(np.array([[0.2, 0.1]]), cb)
        assert np.array_equal(q, [[0.0, 0.0]])
        assert idx.tolist() == [0]

    def test_exact_codeword_has_zero_error(self):
        cb = VqCodebook(RNG.normal(size=(8, 3)))
        z = cb.vectors.data[5:6].copy()
        q, idx = vq_quantize(z, cb)
        assert idx.tolist() == [5]
        assert np.array_equal(q, z)

    def test_matches_exhaustive_scan(self):
        cb = VqCodebook(RNG.normal(size=(64, 4)))
        z = RNG.normal(size=(100, 4))
        _, idx = vq_quantize(z, cb)
        assert np.array_equal(idx, brute_force_nearest(z, cb.vectors.data))

    def test_forward_is_codebook_row(self):
        cb = VqCodebook(RNG.normal(size=(16, 4)))
        z = Tensor(RNG.normal(size=(32, 4)))
        q, idx = vq_quantize(z, cb)
        assert np.array_equal(q.data, cb.vectors.data[idx])

    def test_ste_gradient_equals_identity_graph(self):
        cb = VqCodebook(RNG.normal(size=(16, 4)))
        z0 = RNG.normal(size=(32, 4))
        scale = RNG.uniform(0.5, 2.0, (4,))
        z = Tensor(z0, requires_grad=True)
        q, _ = vq_quantize(z, cb)
        backward((q * Tensor(scale)).sum())
        z_ref = Tensor(z0, requires_grad=True)
        backward((z_ref * Tensor(scale)).sum())
        assert np.array_equal(z.grad, z_ref.grad)

    def test_dim_mismatch_and_batched_shapes(self):
        cb = VqCodebook(RNG.normal(size=(8, 4)))
        with pytest.raises(ValueError):
            vq_quantize(np.zeros((3, 5)), cb)
        q, idx = vq_quantize(RNG.normal(size=(2, 3, 4)), cb)
        assert q.shape == (2, 3, 4) and idx.shape == (2, 3)


class TestLosses:
    def test_zero_when_on_codewords(self):
        cb = VqCodebook(RNG.normal(size=(8, 3)))
        idx = np.array([0, 3, 5])
        z = Tensor(cb.vectors.data[idx].copy(), requires_grad=True)
        q, assign = vq_quantize(z, cb)
        loss = vq_losses(z, q, assign, cb, VqLossWeights(0.25, 1.0, 0.0))
        assert loss.item() == 0.0

    def test_zero_weights_give_zero_loss(self):
        cb = VqCodebook(RNG.normal(size=(8, 3)))
        z = Tensor(RNG.normal(size=(6, 3)), requires_grad=True)
        q, assign = vq_quantize(z, cb)
        assert vq_losses(z, q, assign, cb, VqLossWeights(0.0, 0.0, 0.0)).item() == 0.0

    def test_collapsed_batch_has_larger_entropy_term_than_spread(self):
        # Two codes at (0,0) and (1,1).  A batch glued to code 0 concentrates
        # the mean affinity (low mean entropy), a spread batch balances it;
        # the loss = E[H(p_i)] - H(mean p) must be strictly larger collapsed.
        cb = VqCodebook(np.array([[0.0, 0.0], [1.0, 1.0]]))
        w = VqLossWeights(0.0, 0.0, 1.0)
        collapsed = Tensor(np.zeros((4, 2)), requires_grad=True)
        spread = Tensor(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]]),
                        requires_grad=True)
        losses = {}
        for name, z in (("collapsed", collapsed), ("spread", spread)):
            q, assign = vq_quantize(z, cb)
            losses[name] = vq_losses(z, q, assign, cb, w).item()
        assert losses["collapsed"] > losses["spread"]

        # analytic oracle: affinity rows are softmax(-d^2) with d^2 in {0, 2}
        p_hi = 1.0 / (1.0 + np.exp(-2.0))
        row_entropy = -(p_hi * np.log(p_hi) + (1 - p_hi) * np.log(1 - p_hi))
        assert np.isclose(losses["collapsed"], row_entropy - row_entropy)
        assert np.isclose(losses["spread"], row_entropy - np.log(2.0))

    def test_commitment_pulls_encoder_toward_codes(self):
        cb = VqCodebook(np.array([[1.0, 1.0]]))
        z = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        q, assign = vq_quantize(z, cb)
        loss = vq_losses(z, q, assign, cb, VqLossWeights(1.0, 0.0, 0.0))
        backward(loss)
        assert np.all(z.grad < 0)          # push z up toward (1, 1)
        assert cb.vectors.grad is None

    def test_codebook_term_trains_codebook_only(self):
        cb = VqCodebook(np.array([[1.0, 1.0], [5.0, 5.0]]))
        z = Tensor(np.array([[0.0, 0.0]]), requires_grad=True)
        q, assign = vq_quantize(z, cb)
        loss = vq_losses(z, q, assign, cb, VqLossWeights(0.0, 1.0, 0.0))
        backward(loss)
        assert z.grad is None or np.array_equal(z.grad, np.zeros((1, 2)))
        assert np.all(cb.vectors.grad[0] > 0)          # pulled toward z
        assert np.array_equal(cb.vectors.grad[1], [0.0, 0.0])


class TestEma:
    def test_decay_zero_gives_batch_mean(self):
        cb = VqCodebook(RNG.normal(size=(4, 2)))
        z = RNG.normal(size=(10, 2))
        assign = np.zeros(10, dtype=np.int64)
        ema_update(cb, z, assign, decay=0.0)
        assert np.allclose(cb.vectors.data[0], z.mean(axis=0), atol=1e-4)

    def test_unassigned_code_nearly_unchanged(self):
        vectors = RNG.normal(size=(4, 2))
        cb = VqCodebook(vectors.copy())
        z = RNG.normal(size=(10, 2))
        ema_update(cb, z, np.zeros(10, dtype=np.int64), decay=0.9)
        assert np.allclose(cb.vectors.data[3], vectors[3], atol=1e-4)

    def test_two_steps_match_hand_rolled_recursion(self):
        cb = VqCodebook(RNG.normal(size=(3, 2)))
        counts = np.ones(3)
        sums = cb.vectors.data.copy()
        decay = 0.8
        for step in range(2):
            z = RNG.normal(size=(6, 2))
            assign = RNG.integers(0, 3, size=6)
            ema_update(cb, z, assign, decay=decay)
            batch_counts = np.bincount(assign, minlength=3)
            batch_sums = np.zeros((3, 2))
            np.add.at(batch_sums, assign, z)
            counts = decay * counts + (1 - decay) * batch_counts
            sums = decay * sums + (1 - decay) * batch_sums
        assert np.allclose(cb.ema_counts, counts, rtol=0, atol=1e-15)
        assert np.allclose(cb.vectors.data, sums / (counts + 1e-5)[:, None],
                           rtol=0, atol=1e-15)

    def test_counts_stay_nonnegative_and_vectors_finite(self):
        cb = VqCodebook(RNG.normal(size=(8, 2)))
        for _ in range(20):
            z = RNG.normal(size=(16, 2)) * 10
            assign = RNG.integers(0, 8, size=16)
            ema_update(cb, z, assign, decay=0.97)
        assert np.all(cb.ema_counts >= 0)
        assert np.all(np.isfinite(cb.vectors.data))

    def test_invalid_decay(self):
        cb = VqCodebook(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ema_update(cb, np.ones((1, 2)), np.array([0]), decay=1.5)


class TestSplit:
    def test_no_unused_codes_leaves_codebook_unchanged(self):
        vectors = RNG.normal(size=(4, 2))
        cb = VqCodebook(vectors.copy())
        split_codebook(cb, usage_counts=np.array([3, 1, 2, 9]))
        assert np.array_equal(cb.vectors.data, vectors)

    def test_one_unused_code_gets_filled(self):
        cb = VqCodebook(RNG.normal(size=(4, 2)))
        split_codebook(cb, usage_counts=np.array([5, 0, 2, 1]),
                       rng=np.random.default_rng(1))
        # every code now sits near a previously used one; donor was code 0
        assert np.linalg.norm(cb.vectors.data[1] - cb.vectors.data[0]) < 0.1

    def test_zero_noise_copies_donor_exactly(self):
        vectors = RNG.normal(size=(4, 2))
        cb = VqCodebook(vectors.copy())
        split_codebook(cb, usage_counts=np.array([1, 0, 0, 7]), noise_scale=0.0)
        assert np.array_equal(cb.vectors.data[1], vectors[3])
        assert np.array_equal(cb.vectors.data[2], vectors[3])

    def test_unused_count_drops_to_zero_in_one_call(self):
        for trial in range(5):
            rng = np.random.default_rng(trial)
            cb = VqCodebook(rng.normal(size=(32, 3)))
            usage = rng.integers(0, 3, size=32)
            if not np.any(usage > 0):
                usage[0] = 1
            before = int((usage == 0).sum())
            assert before > 0
            split_codebook(cb, usage_counts=usage, rng=rng)
            # re-derive usage by assigning a dense sample: every code should
            # be reachable, i.e. all vectors are distinct and finite
            assert np.all(np.isfinite(cb.vectors.data))
            assert np.unique(cb.vectors.data, axis=0).shape[0] == 32

    def test_all_unused_raises(self):
        cb = VqCodebook(np.ones((3, 2)))
        with pytest.raises(ValueError):
            split_codebook(cb, usage_counts=np.zeros(3))

    def test_greedy_donor_rotation(self):
        # With several dead codes, successive donors follow the halved usage
        # ranking rather than all cloning the single most-used code.
        cb = VqCodebook(np.diag([1.0, 2.0, 3.0, 4.0]))
        split_codebook(cb, usage_counts=np.array([0, 0, 8, 6]), noise_scale=0.0)
        assert np.array_equal(cb.vectors.data[0], np.diag([1.0, 2.0, 3.0, 4.0])[2])
        assert np.array_equal(cb.vectors.data[1], np.diag([1.0, 2.0, 3.0, 4.0])[3])


class TestCodebookObject:
    def test_parameter_count_4096_by_512(self):
        cb = VqCodebook(np.zeros((4096, 512)))
        assert cb.parameter_count() == 2_097_152

    def test_checkpoint_roundtrip(self):
        cb = VqCodebook(RNG.normal(size=(17, 5)))
        blob = cb.to_bytes()
        back = VqCodebook.from_bytes(blob)
        assert np.array_equal(back.vectors.data, cb.vectors.data)

    def test_checkpoint_file_roundtrip(self, tmp_path):
        cb = VqCodebook(RNG.normal(size=(9, 3)))
        cb.save(tmp_path / "cb.vqcb")
        back = VqCodebook.load(tmp_path / "cb.vqcb")
        assert np.array_equal(back.vectors.data, cb.vectors.data)

    def test_checkpoint_rejects_bad_magic_and_size(self):
        cb = VqCodebook(np.ones((2, 2)))
        blob = cb.to_bytes()
        with pytest.raises(ValueError):
            VqCodebook.from_bytes(b"XXXX" + blob[4:])
        with pytest.raises(ValueError):
            VqCodebook.from_bytes(blob[:-8])

    def test_rejects_non_finite_and_empty(self):
        with pytest.raises(ValueError):
            VqCodebook(np.array([[np.nan, 1.0]]))
        with pytest.raises(ValueError):
            VqCodebook(np.zeros((0, 3)))

    def test_usage_recording(self):
        cb = VqCodebook(np.ones((4, 2)))
        cb.record_usage(np.array([0, 0, 3]))
        assert cb.usage_counts.tolist() == [2, 0, 0, 1]
        cb.reset_usage()
        assert cb.usage_counts.tolist() == [0, 0, 0, 0]

    def test_loss_weights_validate(self):
        with pytest.raises(ValueError):
            VqLossWeights(-0.1, 1.0, 0.1)
