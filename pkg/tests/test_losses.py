"""
Tests for CTC, attention, contrastive, L2 and joint losses
"""

import itertools
import math

import numpy as np
import pytest

from unified_asr.common import (
    BRIDGE_CONTRASTIVE, BRIDGE_L2, BRIDGE_NONE, ContrastiveConfig, NumericError, ValidationError,
)
from unified_asr.core.losses import (
    aed_loss, batch_aed_loss, batch_bridge_loss, batch_ctc_loss, bridge_loss, contrastive_frame_loss,
    contrastive_loss, ctc_loss, joint_loss, l2_bridge_loss, sample_distractors, smoothed_targets,
)
from unified_asr.core.tensor import Tensor, grad_check, log_softmax

GRAD_TOLERANCE = 1e-4
GRAD_SEEDS = range(20)


def _log(probs):
    return Tensor(np.log(np.asarray(probs, dtype=np.float64)))


def _collapse(path, blank):
    out = []
    previous = None
    for symbol in path:
        if symbol != previous and symbol != blank:
            out.append(symbol)
        previous = symbol
    return tuple(out)


def brute_force_ctc(probs, target):
    """−log Σ over every frame labelling that collapses to target"""
    frames, classes = probs.shape
    blank = classes - 1
    total = 0.0
    for path in itertools.product(range(classes), repeat=frames):
        if _collapse(path, blank) == tuple(target):
            total += np.prod(probs[np.arange(frames), path])
    return -math.log(total)


def direct_frame_loss(h_s, h_ns, distractors, temperature):
    def cos(a, b):
        return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    positive = math.exp(cos(h_s, h_ns) / temperature)
    denominator = positive + sum(math.exp(cos(h_s, k) / temperature) for k in distractors)
    return -math.log(positive / denominator)


def _random_feasible_target(rng, frames, vocab):
    for _ in range(100):
        target = list(rng.integers(0, vocab, size=int(rng.integers(0, 4))))
        repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
        if len(target) + repeats <= frames:
            return [int(t) for t in target]
    return []


@pytest.mark.unit
class TestCTCLoss:
    """Log-space CTC forward-backward"""

    def test_single_alignment(self, float64):
        loss = ctc_loss(_log([[0.4, 0.3, 0.3]]), [0])
        assert loss.item() == pytest.approx(-math.log(0.4), abs=1e-12)

    def test_all_blank_path(self, float64):
        loss = ctc_loss(_log([[0.2, 0.2, 0.6], [0.2, 0.2, 0.6]]), [])
        assert loss.item() == pytest.approx(-math.log(0.36), abs=1e-12)

    def test_three_alignments(self, float64):
        uniform = np.full((2, 3), 1.0 / 3.0)
        loss = ctc_loss(_log(uniform), [0])
        assert loss.item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_matches_exhaustive_enumeration(self, float64):
        rng = np.random.default_rng(0)
        for _ in range(40):
            frames = int(rng.integers(1, 7))
            vocab = int(rng.integers(1, 5))
            if (vocab + 1) ** frames > 20000:
                frames = 4
            probs = rng.dirichlet(np.ones(vocab + 1), size=frames)
            target = _random_feasible_target(rng, frames, vocab)
            loss = ctc_loss(_log(probs), target).item()
            assert loss == pytest.approx(brute_force_ctc(probs, target), abs=1e-8)

    def test_repeats_need_a_separating_blank(self, float64):
        probs = np.full((3, 3), 1.0 / 3.0)
        # Only "a ∅ a" collapses to [a, a] in three frames
        assert ctc_loss(_log(probs), [0, 0]).item() == pytest.approx(3 * math.log(3.0), abs=1e-12)
        with pytest.raises(ValidationError, match="CTC infeasible"):
            ctc_loss(_log(probs[:2]), [0, 0])

    def test_infeasible_target(self, float64):
        with pytest.raises(ValidationError, match="CTC infeasible"):
            ctc_loss(_log([[0.4, 0.3, 0.3]]), [0, 1])

    def test_blank_in_target_rejected(self, float64):
        with pytest.raises(ValidationError):
            ctc_loss(_log([[0.4, 0.3, 0.3]] * 3), [2])

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        frames = int(rng.integers(3, 7))
        logits = rng.normal(size=(frames, 4))
        target = _random_feasible_target(rng, frames, 3)
        error = grad_check(lambda x: ctc_loss(log_softmax(x), target), logits)
        assert error < GRAD_TOLERANCE, f"target {target}: relative error {error}"

    def test_batched_mean_excludes_padding(self, float64):
        rng = np.random.default_rng(1)
        first = np.log(rng.dirichlet(np.ones(3), size=4))
        second = np.log(rng.dirichlet(np.ones(3), size=2))
        padded = np.zeros((2, 4, 3))
        padded[0] = first
        padded[1, :2] = second
        padded[1, 2:] = np.log(1.0 / 3.0)
        batched = batch_ctc_loss(Tensor(padded), [4, 2], [[0, 1], [1]]).item()
        expected = (ctc_loss(Tensor(first), [0, 1]).item() + ctc_loss(Tensor(second), [1]).item()) / 2
        assert batched == pytest.approx(expected, abs=1e-12)


@pytest.mark.unit
class TestAEDLoss:
    """Label-smoothed KL"""

    def test_perfect_prediction(self, float64):
        logits = np.full((3, 5), -20.0)
        logits[np.arange(3), [1, 2, 4]] = 20.0
        assert aed_loss(Tensor(logits), [1, 2, 4], 0.0).item() <= 1e-6

    def test_uniform_prediction(self, float64):
        vocab_size = 4
        logits = Tensor(np.zeros((3, vocab_size + 2)))
        assert aed_loss(logits, [0, 1, 5], 0.0).item() == pytest.approx(math.log(vocab_size + 2), abs=1e-12)

    def test_smoothed_single_position(self, float64):
        logits = np.array([[0.5, -1.0, 2.0, 0.0, 1.0]])
        epsilon = 0.1
        target = [2]
        probs = np.exp(logits[0] - np.log(np.exp(logits[0]).sum()))
        smooth = np.full(5, epsilon / 4)
        smooth[2] = 1.0 - epsilon
        expected = float(np.sum(smooth * (np.log(smooth) - np.log(probs))))
        assert aed_loss(Tensor(logits), target, epsilon).item() == pytest.approx(expected, abs=1e-12)

    def test_smoothed_targets_sum_to_one(self):
        dist = smoothed_targets([0, 3], 6, 0.1)
        np.testing.assert_allclose(dist.sum(axis=1), 1.0)
        assert dist[0, 0] == pytest.approx(0.9)
        assert dist[0, 1] == pytest.approx(0.02)

    def test_length_mismatch(self, float64):
        with pytest.raises(ValidationError):
            aed_loss(Tensor(np.zeros((3, 6))), [1, 2], 0.1)

    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(100 + seed)
        positions = int(rng.integers(1, 6))
        logits = rng.normal(size=(positions, 6))
        target = [int(t) for t in rng.integers(0, 6, size=positions)]
        smoothing = float(rng.choice([0.0, 0.1, 0.2]))
        error = grad_check(lambda x: aed_loss(x, target, smoothing), logits)
        assert error < GRAD_TOLERANCE, f"target {target}: relative error {error}"

    def test_batched_loss_averages_own_positions(self, float64):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(2, 3, 6))
        targets = [[1, 2, 5], [4, 5]]
        batched = batch_aed_loss(Tensor(logits), targets, 0.1).item()
        expected = (aed_loss(Tensor(logits[0]), targets[0], 0.1).item()
                    + aed_loss(Tensor(logits[1, :2]), targets[1], 0.1).item()) / 2
        assert batched == pytest.approx(expected, abs=1e-12)


@pytest.mark.unit
class TestContrastiveLoss:
    """Frame-level contrastive bridge"""

    def test_orthogonal_distractors(self, float64):
        h = Tensor([1.0, 0.0, 0.0])
        distractors = Tensor([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        loss = contrastive_frame_loss(h, h, distractors, 0.4).item()
        assert loss == pytest.approx(math.log(1 + 2 * math.exp(-2.5)), abs=1e-9)
        assert loss == pytest.approx(0.1514, abs=1e-4)

    def test_identical_candidates(self, float64):
        h = Tensor([0.3, -1.2, 0.7])
        loss = contrastive_frame_loss(h, h, Tensor([[0.3, -1.2, 0.7]] * 2), 0.4).item()
        assert loss == pytest.approx(math.log(3.0), abs=1e-9)

    def test_matches_direct_evaluation(self, float64):
        rng = np.random.default_rng(5)
        for _ in range(10):
            h_s, h_ns = rng.normal(size=8), rng.normal(size=8)
            distractors = rng.normal(size=(4, 8))
            loss = contrastive_frame_loss(Tensor(h_s), Tensor(h_ns), Tensor(distractors), 0.6).item()
            assert loss == pytest.approx(direct_frame_loss(h_s, h_ns, distractors, 0.6), abs=1e-10)
            assert loss >= 0.0

    def test_zero_vector_is_degenerate(self, float64):
        with pytest.raises(NumericError, match="degenerate representation"):
            contrastive_frame_loss(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]), Tensor([[0.0, 1.0]]), 0.4)

    def test_two_frames_forced_distractors(self, float64):
        rng = np.random.default_rng(6)
        h_s, h_ns = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
        cfg = ContrastiveConfig(num_distractors=1, temperature=0.4)
        loss = contrastive_loss(Tensor(h_s), Tensor(h_ns), cfg, rng).item()
        expected = (direct_frame_loss(h_s[0], h_ns[0], [h_ns[1]], 0.4)
                    + direct_frame_loss(h_s[1], h_ns[1], [h_ns[0]], 0.4)) / 2
        assert loss == pytest.approx(expected, abs=1e-10)

    def test_orthogonal_frames_share_one_value(self, float64):
        frames = Tensor(np.eye(5))
        cfg = ContrastiveConfig(num_distractors=4, temperature=0.4)
        loss = contrastive_loss(frames, frames, cfg, np.random.default_rng(0)).item()
        assert loss == pytest.approx(math.log(1 + 4 * math.exp(-2.5)), abs=1e-9)

    def test_invariant_to_frame_permutation(self, float64):
        rng = np.random.default_rng(7)
        h_s, h_ns = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        distractors = sample_distractors(4, 2, np.random.default_rng(1))
        cfg = ContrastiveConfig(num_distractors=2)
        base = contrastive_loss(Tensor(h_s), Tensor(h_ns), cfg, distractors=distractors).item()
        order = np.array([2, 0, 3, 1])
        inverse = np.argsort(order)
        relabelled = inverse[distractors[order]]
        permuted = contrastive_loss(Tensor(h_s[order]), Tensor(h_ns[order]), cfg, distractors=relabelled).item()
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_invariant_to_positive_rescaling(self, float64):
        rng = np.random.default_rng(8)
        h_s, h_ns = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        distractors = sample_distractors(5, 3, np.random.default_rng(2))
        cfg = ContrastiveConfig(num_distractors=3)
        base = contrastive_loss(Tensor(h_s), Tensor(h_ns), cfg, distractors=distractors).item()
        scale = rng.uniform(0.1, 10.0, size=(5, 1))
        scaled = contrastive_loss(Tensor(h_s * scale), Tensor(h_ns * scale[::-1]), cfg,
                                  distractors=distractors).item()
        assert abs(scaled - base) < 1e-9

    def test_single_frame_has_no_negatives(self, float64):
        cfg = ContrastiveConfig()
        with pytest.raises(ValidationError, match="no negatives available"):
            contrastive_loss(Tensor([[1.0, 0.0]]), Tensor([[1.0, 0.0]]), cfg, np.random.default_rng(0))

    def test_own_frame_rejected_as_distractor(self, float64):
        cfg = ContrastiveConfig(num_distractors=1)
        frames = Tensor(np.eye(2))
        with pytest.raises(ValidationError, match="own distractor"):
            contrastive_loss(frames, frames, cfg, distractors=np.array([[0], [0]]))

    def test_sampling_excludes_own_frame(self):
        picks = sample_distractors(6, 16, np.random.default_rng(0))
        assert picks.shape == (6, 5)
        for row, indices in enumerate(picks):
            assert row not in indices
            assert len(set(indices)) == len(indices)
        assert sample_distractors(10, 3, np.random.default_rng(0)).shape == (10, 3)

    @pytest.mark.parametrize("stop_gradient", [False, True])
    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradient(self, seed, stop_gradient):
        rng = np.random.default_rng(200 + seed)
        h_s, h_ns = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
        cfg = ContrastiveConfig(num_distractors=3, temperature=float(rng.uniform(0.2, 1.0)),
                                stop_gradient=stop_gradient)
        # One draw shared by every evaluation inside grad_check
        distractors = sample_distractors(4, cfg.num_distractors, rng)

        streaming = grad_check(lambda x: contrastive_loss(x, Tensor(h_ns), cfg, distractors=distractors), h_s)
        assert streaming < GRAD_TOLERANCE
        if not stop_gradient:
            full = grad_check(lambda x: contrastive_loss(Tensor(h_s), x, cfg, distractors=distractors), h_ns)
            assert full < GRAD_TOLERANCE

    def test_stop_gradient_option(self, float64):
        rng = np.random.default_rng(10)
        h_s = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        h_ns = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        cfg = ContrastiveConfig(num_distractors=2, stop_gradient=True)
        contrastive_loss(h_s, h_ns, cfg, np.random.default_rng(0)).backward()
        assert h_s.grad is not None
        assert h_ns.grad is None


@pytest.mark.unit
class TestL2Bridge:
    """Euclidean bridge"""

    def test_identical_inputs(self, float64):
        h = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        assert l2_bridge_loss(h, h).item() == 0.0

    def test_unit_difference(self, float64):
        h_ns = np.random.default_rng(0).normal(size=(3, 4))
        assert l2_bridge_loss(Tensor(h_ns + 1.0), Tensor(h_ns)).item() == pytest.approx(4.0)

    def test_matches_double_loop(self, float64):
        rng = np.random.default_rng(1)
        h_s, h_ns = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        expected = sum(sum((h_s[i, j] - h_ns[i, j]) ** 2 for j in range(3)) for i in range(5)) / 5
        assert l2_bridge_loss(Tensor(h_s), Tensor(h_ns)).item() == pytest.approx(expected, abs=1e-12)

    def test_gradient_stops_on_full_context_side(self, float64):
        rng = np.random.default_rng(2)
        h_s = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        h_ns = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        l2_bridge_loss(h_s, h_ns).backward()
        np.testing.assert_allclose(h_s.grad, 2.0 * (h_s.values - h_ns.values) / 3)
        assert h_ns.grad is None

    @pytest.mark.parametrize("stop_gradient", [True, False])
    @pytest.mark.parametrize("seed", GRAD_SEEDS)
    def test_gradient(self, seed, stop_gradient):
        rng = np.random.default_rng(300 + seed)
        frames = int(rng.integers(1, 6))
        h_s, h_ns = rng.normal(size=(frames, 4)), rng.normal(size=(frames, 4))

        streaming = grad_check(lambda x: l2_bridge_loss(x, Tensor(h_ns), stop_gradient), h_s)
        assert streaming < GRAD_TOLERANCE
        full = grad_check(lambda x: l2_bridge_loss(Tensor(h_s), x, stop_gradient), h_ns)
        if stop_gradient:
            # Detached side: analytic gradient is zero while the value still moves
            assert full == pytest.approx(1.0)
        else:
            assert full < GRAD_TOLERANCE

    def test_bridge_dispatch(self, float64):
        h = Tensor(np.eye(3))
        assert bridge_loss(h, h, ContrastiveConfig(bridge=BRIDGE_NONE)) is None
        assert bridge_loss(h, h, ContrastiveConfig(bridge=BRIDGE_L2)).item() == 0.0
        contrastive = bridge_loss(h, h, ContrastiveConfig(bridge=BRIDGE_CONTRASTIVE, num_distractors=2),
                                  np.random.default_rng(0))
        assert contrastive.item() == pytest.approx(math.log(1 + 2 * math.exp(-2.5)), abs=1e-9)

    def test_batched_bridge_excludes_padding(self, float64):
        h_s = np.zeros((2, 3, 2))
        h_ns = np.zeros((2, 3, 2))
        h_s[0] = 1.0
        h_s[1, :2] = 2.0
        h_s[1, 2] = 100.0
        cfg = ContrastiveConfig(bridge=BRIDGE_L2)
        loss = batch_bridge_loss(Tensor(h_s), Tensor(h_ns), [3, 2], cfg).item()
        assert loss == pytest.approx((2.0 + 8.0) / 2)
        assert batch_bridge_loss(Tensor(h_s), Tensor(h_ns), [3, 2], ContrastiveConfig(bridge=BRIDGE_NONE)) is None


@pytest.mark.unit
class TestJointLoss:
    """Combined objective"""

    def test_streaming_branch_weighting(self):
        breakdown = joint_loss(1.0, 2.0, 0.0, 0.0, None, 0.3)
        assert breakdown.total == pytest.approx(1.7)

    def test_symmetric_branches_double(self):
        breakdown = joint_loss(1.0, 2.0, 1.0, 2.0, 5.0, 0.3, bridge_kind=BRIDGE_NONE)
        assert breakdown.total == pytest.approx(3.4)
        assert breakdown.bridge == 0.0

    def test_ctc_only(self):
        breakdown = joint_loss(1.0, 100.0, 2.0, 200.0, None, 1.0)
        assert breakdown.total == pytest.approx(3.0)

    def test_bridge_weight(self):
        breakdown = joint_loss(1.0, 1.0, 1.0, 1.0, 0.5, 0.3, bridge_kind=BRIDGE_L2, ctl_weight=2.0)
        assert breakdown.total == pytest.approx(3.0)
        assert breakdown.recompute_total(0.3, 2.0) == pytest.approx(breakdown.total)

    def test_identical_branches_keep_contrastive_term(self, float64):
        frames = Tensor(np.eye(3))
        cfg = ContrastiveConfig(num_distractors=2)
        bridge = contrastive_loss(frames, frames, cfg, np.random.default_rng(0))
        breakdown = joint_loss(1.0, 1.0, 1.0, 1.0, bridge, 0.3, bridge_kind=BRIDGE_CONTRASTIVE)
        assert breakdown.bridge == pytest.approx(math.log(1 + 2 * math.exp(-2.5)), abs=1e-9)
        assert breakdown.total == pytest.approx(2.0 + breakdown.bridge)

    def test_weight_out_of_range(self):
        with pytest.raises(ValidationError):
            joint_loss(1.0, 1.0, 1.0, 1.0, None, 1.5)
