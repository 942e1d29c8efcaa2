import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lens.config import LossWeights
from lens.objectives import (attention_loss, bce_mask_loss, ciou, dice_loss,
                             giou, seg_loss, total_loss)


def t(x):
    return torch.as_tensor(x, dtype=torch.float64)


class TestBce:
    def test_half_prediction_is_ln2(self):
        # -log(0.5) regardless of the target value
        loss = attention_loss(t([[0.5, 0.5]]), t([[1.0, 0.0]]))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_hand_computed_mixed(self):
        # -(log 0.8 + log 0.7) / 2
        loss = bce_mask_loss(t([0.8, 0.3]), t([1.0, 0.0]))
        expected = -(math.log(0.8) + math.log(0.7)) / 2.0
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_clamp_keeps_finite(self):
        loss = attention_loss(t([0.0, 1.0]), t([1.0, 0.0]))
        assert math.isfinite(loss.item())
        assert loss.item() == pytest.approx(-math.log(1e-7), rel=1e-6)

    def test_perfect_prediction_near_zero(self):
        loss = attention_loss(t([1.0, 0.0]), t([1.0, 0.0]))
        assert loss.item() < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            attention_loss(t([0.5]), t([[0.5]]))


class TestDice:
    def test_perfect_overlap_zero(self):
        m = t([[1.0, 0.0], [0.0, 1.0]])
        assert dice_loss(m, m).item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_computed(self):
        # inter = 1, sums = 2 + 1: 1 - (2 + 1)/(3 + 1) = 1/4
        loss = dice_loss(t([1.0, 1.0]), t([1.0, 0.0]))
        assert loss.item() == pytest.approx(0.25, abs=1e-12)

    def test_disjoint(self):
        # 1 - 1/(2 + 1) = 2/3
        loss = dice_loss(t([1.0, 0.0]), t([0.0, 1.0]))
        assert loss.item() == pytest.approx(2.0 / 3.0, abs=1e-12)

    def test_empty_both_zero(self):
        # smooth term alone: 1 - 1/1 = 0
        loss = dice_loss(t([0.0, 0.0]), t([0.0, 0.0]))
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_bounded(self, seed):
        rng = np.random.default_rng(seed)
        p = t(rng.uniform(size=(6, 6)))
        m = t((rng.uniform(size=(6, 6)) > 0.5).astype(float))
        v = dice_loss(p, m).item()
        assert 0.0 <= v <= 1.0


class TestComposite:
    def test_seg_loss_weighting(self):
        w = LossWeights()
        p = t([0.8, 0.3])
        m = t([1.0, 0.0])
        expected = (w.lambda_dice * dice_loss(p, m)
                    + w.lambda_bce * bce_mask_loss(p, m)).item()
        assert seg_loss(p, m, w).item() == pytest.approx(expected, abs=1e-12)

    def test_total_hand_value(self):
        """Fully worked scalar case: p = [0.8, 0.3], m = [1, 0],
        a = [[0.6]], m_small = [[1]].
        dice = 1 - (2*0.8 + 1)/(1.1 + 1 + 1) = 1 - 2.6/3.1
        bce = -(ln 0.8 + ln 0.7)/2, attn = -ln 0.6
        total = 2*dice + 4*bce + attn."""
        w = LossWeights()
        dice = 1.0 - 2.6 / 3.1
        bce = -(math.log(0.8) + math.log(0.7)) / 2.0
        attn = -math.log(0.6)
        expected = 2.0 * dice + 4.0 * bce + attn
        got = total_loss(t([0.8, 0.3]), t([1.0, 0.0]), t([[0.6]]), t([[1.0]]), w)
        assert got.item() == pytest.approx(expected, abs=1e-12)


class TestIoU:
    def test_giou_hand_value(self):
        # sample 1: IoU 1/2, sample 2: IoU 1 -> mean 0.75
        a = (np.array([[1, 1]]), np.array([[1, 0]]))
        b = (np.array([[0, 1]]), np.array([[0, 1]]))
        assert giou([a, b]) == pytest.approx(0.75)

    def test_ciou_hand_value(self):
        # intersections 1 + 1 = 2, unions 2 + 1 = 3
        a = (np.array([[1, 1]]), np.array([[1, 0]]))
        b = (np.array([[0, 1]]), np.array([[0, 1]]))
        assert ciou([a, b]) == pytest.approx(2.0 / 3.0)

    def test_soft_masks_binarized(self):
        a = (np.array([[0.6, 0.4]]), np.array([[0.9, 0.1]]))
        assert giou([a]) == pytest.approx(1.0)

    def test_empty_masks_vacuous(self):
        z = np.zeros((3, 3))
        assert giou([(z, z)]) == pytest.approx(1.0)
        assert ciou([(z, z)]) == pytest.approx(1.0)

    def test_empty_list_raises(self):
        with pytest.raises(ValueError):
            giou([])
        with pytest.raises(ValueError):
            ciou([])

    def test_tensor_inputs(self):
        a = (torch.ones(2, 2), torch.ones(2, 2))
        assert giou([a]) == pytest.approx(1.0)
