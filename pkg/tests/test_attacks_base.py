import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from demiguise import imaging
from demiguise.attacks import DistanceKind, f_margin, scalar_distance, tanh_decode, tanh_encode
from demiguise.attacks.base import AttackConfig, f_margin_t, make_distance_fn
from demiguise.perceptual import ChannelWeights

from conftest import random_image, stub_perceptual_net


class TestFMargin:
    def test_targeted_hand_case(self):
        assert f_margin(np.array([2.0, 5.0, 1.0]), 0, targeted=True) == 3.0

    def test_targeted_success_clamps_to_zero(self):
        assert f_margin(np.array([9.0, 1.0, 0.0]), 0, targeted=True) == 0.0

    def test_non_targeted_hand_case(self):
        assert f_margin(np.array([2.0, 5.0, 1.0]), 1, targeted=False) == 3.0

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="label"):
            f_margin(np.array([1.0, 2.0]), 5, targeted=False)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-50, 50, allow_nan=False), min_size=2, max_size=8),
        st.booleans(),
        st.data(),
    )
    def test_zero_iff_goal_met(self, logits, targeted, data):
        z = np.array(logits)
        label = data.draw(st.integers(0, len(logits) - 1))
        value = f_margin(z, label, targeted)
        assert value >= 0.0
        pred = int(np.argmax(z))
        if targeted:
            goal = pred == label and z[label] > np.delete(z, label).max()
        else:
            goal = np.delete(z, label).max() > z[label]
        # strict goal (no ties) implies zero margin; positive margin implies no goal
        if goal:
            assert value == 0.0
        if value > 0.0:
            if targeted:
                assert np.delete(z, label).max() >= z[label]
            else:
                assert z[label] >= np.delete(z, label).max()

    def test_torch_twin_matches(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            z = rng.normal(size=6)
            label = int(rng.integers(0, 6))
            for targeted in (False, True):
                a = f_margin(z, label, targeted)
                b = float(f_margin_t(torch.as_tensor(z), label, targeted))
                assert abs(a - b) < 1e-12


class TestTanhCodec:
    def test_decode_zero_is_half(self):
        assert np.all(tanh_decode(np.zeros((3, 4, 4))) == 0.5)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        x = 0.01 + 0.98 * rng.random((3, 8, 8))
        assert np.abs(tanh_decode(tanh_encode(x)) - x).max() <= 1e-5

    def test_encode_finite_at_bounds(self):
        u = tanh_encode(np.array([0.0, 1.0]))
        assert np.all(np.isfinite(u))

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 1.0, allow_nan=False))
    def test_decode_stays_in_unit_interval(self, v):
        x = tanh_decode(tanh_encode(np.array([v])))
        assert 0.0 <= x[0] <= 1.0


class TestDistanceKinds:
    def _pairs(self):
        rng = np.random.default_rng(2)
        return rng.random((3, 16, 16)), rng.random((3, 16, 16))

    def test_all_kinds_zero_at_identity_and_positive_otherwise(self):
        net = stub_perceptual_net(size=16)
        w = ChannelWeights.ones_for(net)
        a, b = self._pairs()
        for kind in DistanceKind:
            zero = scalar_distance(kind, net, w, a, a)
            assert zero == pytest.approx(0.0, abs=1e-9), kind
            assert scalar_distance(kind, net, w, a, b) > 0.0, kind

    def test_torch_matches_scalar(self):
        net = stub_perceptual_net(size=16)
        w = ChannelWeights.ones_for(net)
        a, b = self._pairs()
        at = torch.as_tensor(a[None].astype(np.float64))
        bt = torch.as_tensor(b[None].astype(np.float64))
        for kind in DistanceKind:
            fn = make_distance_fn(kind, net, w)
            graph_value = float(fn(bt, at))
            scalar_value = scalar_distance(kind, net, w, a, b)
            assert graph_value == pytest.approx(scalar_value, abs=1e-9), kind

    def test_neg_psnr_tracks_psnr_for_large_mse(self):
        a, b = self._pairs()
        value = scalar_distance(DistanceKind.NEG_PSNR, None, None, a, b)
        # for mse >> floor the penalty approaches 60 dB minus the PSNR
        assert value == pytest.approx(60.0 - imaging.psnr(a, b), abs=0.1)

    def test_one_minus_ssim_range(self):
        a, b = self._pairs()
        value = scalar_distance(DistanceKind.ONE_MINUS_SSIM, None, None, a, b)
        assert 0.0 < value <= 2.0

    def test_perceptual_requires_net(self):
        with pytest.raises(ValueError, match="perceptual"):
            make_distance_fn(DistanceKind.PERCEPTUAL, None, None)


class TestAttackConfig:
    def test_targeted_requires_target(self):
        with pytest.raises(ValueError, match="target"):
            AttackConfig(targeted=True).validate()

    def test_target_must_differ_from_label(self):
        with pytest.raises(ValueError, match="original label"):
            AttackConfig(targeted=True, target=3).validate(original_label=3)

    def test_rejects_negative_budgets(self):
        for bad in (dict(lam=-1.0), dict(epsilon=-0.1), dict(max_iters=-1),
                    dict(di_probability=1.5)):
            with pytest.raises(ValueError):
                AttackConfig(**bad).validate()
