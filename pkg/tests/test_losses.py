"""Loss values against hand evaluation and independent oracles, plus
gradient checks."""

import numpy as np
import pytest

from docrestore import Tape, Tensor, backward, finite_diff_grad, ops
from docrestore.losses import (FocalParams, GPConfig, LossWeights, color_loss,
                               focal_loss, freq_loss, gan_generator_loss,
                               gradient_penalty, l1_loss, prior_loss,
                               restoration_loss, wgan_d_loss, wgan_g_loss)
from docrestore.tensor import ShapeError


def t64(rng, shape, lo=0.0, hi=1.0, grad=False):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=grad, dtype=np.float64)


def rel_err(a, b):
    return np.abs(a - b).max() / (np.abs(b).max() + 1e-12)


class TestL1:
    def test_identical_is_zero(self, rng):
        x = t64(rng, (3, 5, 5))
        assert l1_loss(x, x).item() == 0.0

    def test_constant_offset(self, rng):
        x = t64(rng, (3, 4, 4))
        y = Tensor(x.data + 0.5, dtype=np.float64)
        assert abs(l1_loss(y, x).item() - 0.5) < 1e-12

    def test_matches_elementwise_oracle(self, rng):
        a, b = t64(rng, (3, 6, 6)), t64(rng, (3, 6, 6))
        oracle = np.abs(a.data - b.data).sum() / a.data.size
        assert abs(l1_loss(a, b).item() - oracle) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            l1_loss(t64(rng, (3, 4, 4)), t64(rng, (3, 4, 5)))


class TestColor:
    def test_identical_is_zero(self, rng):
        x = t64(rng, (3, 5, 5), lo=0.1, hi=0.9)
        assert color_loss(x, x).item() < 1e-12

    def test_brightness_scale_invariance(self, rng):
        x = t64(rng, (3, 5, 5), lo=0.1, hi=0.45)
        doubled = Tensor(2.0 * x.data, dtype=np.float64)
        assert abs(color_loss(doubled, x).item()) < 1e-6

    def test_orthogonal_hues(self):
        red = np.zeros((3, 2, 2))
        red[0] = 1.0
        green = np.zeros((3, 2, 2))
        green[1] = 1.0
        loss = color_loss(Tensor(red, dtype=np.float64), Tensor(green, dtype=np.float64))
        assert abs(loss.item() - 1.0) < 1e-12

    def test_zero_pixels_contribute_nothing(self, rng):
        pred = np.zeros((3, 2, 2))
        target = np.zeros((3, 2, 2))
        pred[:, 0, 0] = [1.0, 0.0, 0.0]
        target[:, 0, 0] = [0.0, 1.0, 0.0]  # only this pixel counts
        loss = color_loss(Tensor(pred, dtype=np.float64), Tensor(target, dtype=np.float64))
        assert abs(loss.item() - 1.0 / 4.0) < 1e-12


def naive_dft_l1(a, b):
    """Brute-force O(N^2)-per-bin DFT comparison over real+imag parts."""
    total = 0.0
    count = 0
    for c in range(a.shape[0]):
        h, w = a.shape[1:]
        for part in range(2):
            for u in range(h):
                for v in range(w):
                    sa = sum(a[c, i, j] * (np.cos(-2 * np.pi * (u * i / h + v * j / w))
                                           if part == 0 else
                                           np.sin(-2 * np.pi * (u * i / h + v * j / w)))
                             for i in range(h) for j in range(w))
                    sb = sum(b[c, i, j] * (np.cos(-2 * np.pi * (u * i / h + v * j / w))
                                           if part == 0 else
                                           np.sin(-2 * np.pi * (u * i / h + v * j / w)))
                             for i in range(h) for j in range(w))
                    total += abs(sa - sb)
                    count += 1
    return total / count


class TestFreq:
    def test_identical_is_zero(self, rng):
        x = t64(rng, (3, 4, 4))
        assert freq_loss(x, x).item() == 0.0

    def test_constant_offset_hits_only_dc(self, rng):
        x = t64(rng, (1, 8, 8))
        c = 0.3
        y = Tensor(x.data + c, dtype=np.float64)
        h, w = 8, 8
        expected = c * h * w / (h * w * 2)  # single DC bin over all bins, 2 parts
        assert abs(freq_loss(y, x).item() - expected) < 1e-9

    def test_matches_naive_dft_oracle(self, rng):
        a = rng.uniform(0, 1, (1, 8, 8))
        b = rng.uniform(0, 1, (1, 8, 8))
        got = freq_loss(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64)).item()
        assert abs(got - naive_dft_l1(a, b)) < 1e-5


class TestFocal:
    def test_perfect_prediction_is_zero(self):
        p = Tensor(np.ones((1, 4, 4)), dtype=np.float64)
        y = Tensor(np.ones((1, 4, 4)), dtype=np.float64)
        assert focal_loss(p, y).item() < 1e-10

    def test_hand_value(self):
        p = Tensor(np.full((1, 2, 2), 0.5), dtype=np.float64)
        y = Tensor(np.ones((1, 2, 2)), dtype=np.float64)
        expected = 0.25 * np.log(2.0)
        assert abs(focal_loss(p, y, gamma=2.0, alpha=1.0).item() - expected) < 1e-4

    def test_reduces_to_bce(self, rng):
        p = rng.uniform(0.05, 0.95, (2, 5, 5))
        y = (rng.uniform(size=(2, 5, 5)) > 0.5).astype(float)
        got = focal_loss(Tensor(p, dtype=np.float64), Tensor(y, dtype=np.float64),
                         gamma=0.0, alpha=1.0).item()
        bce = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
        assert abs(got - bce) < 1e-6

    def test_nonbinary_target_rejected(self, rng):
        p = Tensor(rng.uniform(0.1, 0.9, (1, 3, 3)), dtype=np.float64)
        with pytest.raises(ValueError):
            focal_loss(p, Tensor(np.full((1, 3, 3), 0.5), dtype=np.float64))


class TestPriorLoss:
    def test_perfect_predictions_zero(self):
        maps = Tensor(np.ones((3, 4, 4)), dtype=np.float64)
        assert prior_loss(maps, maps).item() < 1e-9

    def test_weight_composition_is_six_f(self, rng):
        # equal focal value per channel under uniform per-type settings
        params = FocalParams(shadow=(1, 2, 1.0), wrinkle=(2, 2, 1.0), bleed=(3, 2, 1.0))
        p = np.tile(rng.uniform(0.2, 0.8, (1, 4, 4)), (3, 1, 1))
        y = np.tile((rng.uniform(size=(1, 4, 4)) > 0.5).astype(float), (3, 1, 1))
        f = focal_loss(Tensor(p[:1], dtype=np.float64), Tensor(y[:1], dtype=np.float64),
                       gamma=2.0, alpha=1.0).item()
        total = prior_loss(Tensor(p, dtype=np.float64), Tensor(y, dtype=np.float64),
                           params).item()
        assert abs(total - 6.0 * f) < 1e-9

    def test_only_bleed_channel_wrong_gives_three_f(self, rng):
        p = np.ones((3, 4, 4))
        y = np.ones((3, 4, 4))
        p[2] = rng.uniform(0.2, 0.8, (4, 4))  # bleed channel mispredicted
        f = focal_loss(Tensor(p[2:3], dtype=np.float64), Tensor(y[2:3], dtype=np.float64),
                       gamma=2.0, alpha=0.94).item()
        total = prior_loss(Tensor(p, dtype=np.float64), Tensor(y, dtype=np.float64)).item()
        assert abs(total - 3.0 * f) < 1e-9

    def test_channel_count_enforced(self, rng):
        p = t64(rng, (2, 4, 4))
        with pytest.raises(ShapeError):
            prior_loss(p, p)

    def test_intensity_maps_binarized(self, rng):
        # targets may carry intensity; the objective sees them thresholded
        p = Tensor(np.full((3, 2, 2), 0.7), dtype=np.float64)
        soft = Tensor(np.full((3, 2, 2), 0.8), dtype=np.float64)
        hard = Tensor(np.ones((3, 2, 2)), dtype=np.float64)
        assert abs(prior_loss(p, soft).item() - prior_loss(p, hard).item()) < 1e-12


class TestWGAN:
    def test_constant_critic_zero_gap(self):
        real = [Tensor(np.array(3.0), dtype=np.float64)] * 4
        fake = [Tensor(np.array(3.0), dtype=np.float64)] * 4
        assert abs(wgan_d_loss(real, fake, None).item()) < 1e-12

    def test_hand_arithmetic(self):
        real = [Tensor(np.array(v), dtype=np.float64) for v in (1.5, 2.5)]
        fake = [Tensor(np.array(v), dtype=np.float64) for v in (0.5, 1.5)]
        assert abs(wgan_d_loss(real, fake, None).item() - (-1.0)) < 1e-12

    def test_generator_loss_values(self):
        zeros = [Tensor(np.array(0.0), dtype=np.float64)] * 3
        assert wgan_g_loss(zeros).item() == 0.0
        scores = [Tensor(np.array(1.0), dtype=np.float64),
                  Tensor(np.array(3.0), dtype=np.float64)]
        assert abs(wgan_g_loss(scores).item() - (-2.0)) < 1e-12

    def test_generator_loss_sign(self):
        low = wgan_g_loss([Tensor(np.array(0.1), dtype=np.float64)])
        high = wgan_g_loss([Tensor(np.array(5.0), dtype=np.float64)])
        assert high.item() < low.item()  # raising scores lowers the loss


def linear_critic(w):
    """Critic D(x) = <w, x>; gradient norm is |w| everywhere."""
    def critic(x):
        return ops.tsum(ops.mul(w, x))
    return critic


class TestGradientPenalty:
    def test_unit_norm_linear_critic(self, rng):
        w = np.zeros((1, 2, 2))
        w[0, 0, 0] = 1.0
        critic = linear_critic(Tensor(w, dtype=np.float64))
        real = [t64(rng, (1, 2, 2))]
        fake = [t64(rng, (1, 2, 2))]
        with Tape() as tape:
            gp = gradient_penalty(critic, real, fake, tape, np.random.default_rng(0))
        assert abs(gp.item()) < 1e-6

    def test_norm_three_gives_four(self, rng):
        w = np.zeros((1, 2, 2))
        w[0, :, 0] = [3.0, 0.0]
        critic = linear_critic(Tensor(w, dtype=np.float64))
        with Tape() as tape:
            gp = gradient_penalty(critic, [t64(rng, (1, 2, 2))], [t64(rng, (1, 2, 2))],
                                  tape, np.random.default_rng(0))
        assert abs(gp.item() - 4.0) < 1e-4

    def test_constant_critic_gives_one(self, rng):
        def critic(x):
            return ops.mul(ops.tsum(ops.mul(x, ops.const(0.0, np.float64))),
                           ops.const(1.0, np.float64))
        with Tape() as tape:
            gp = gradient_penalty(critic, [t64(rng, (1, 2, 2))], [t64(rng, (1, 2, 2))],
                                  tape, np.random.default_rng(0))
        assert abs(gp.item() - 1.0) < 1e-4

    @pytest.mark.parametrize("seed", range(5))
    def test_closed_form_for_linear_critic(self, seed):
        rng = np.random.default_rng(seed)
        wdata = rng.standard_normal((1, 3, 3))
        critic = linear_critic(Tensor(wdata, dtype=np.float64))
        with Tape() as tape:
            gp = gradient_penalty(critic, [t64(rng, (1, 3, 3))], [t64(rng, (1, 3, 3))],
                                  tape, rng)
        expected = (np.linalg.norm(wdata) - 1.0) ** 2
        assert abs(gp.item() - expected) < 1e-5

    def test_full_d_loss_with_linear_critic(self, rng):
        wdata = rng.standard_normal((1, 2, 2))
        w = Tensor(wdata, dtype=np.float64)
        critic = linear_critic(w)
        real = [t64(rng, (1, 2, 2)) for _ in range(3)]
        fake = [t64(rng, (1, 2, 2)) for _ in range(3)]
        with Tape() as tape:
            gp = gradient_penalty(critic, real, fake, tape, np.random.default_rng(1))
            loss = wgan_d_loss([critic(r) for r in real], [critic(f) for f in fake], gp)
        means = (np.mean([critic(f).item() for f in fake])
                 - np.mean([critic(r).item() for r in real]))
        expected = means + 10.0 * (np.linalg.norm(wdata) - 1.0) ** 2
        assert abs(loss.item() - expected) < 1e-8


class TestComposites:
    def _random_pair(self, rng):
        pred = t64(rng, (3, 8, 8), lo=0.05, hi=0.95)
        gt = t64(rng, (3, 8, 8), lo=0.05, hi=0.95)
        pp = t64(rng, (3, 8, 8), lo=0.1, hi=0.9)
        pg = Tensor((rng.uniform(size=(3, 8, 8)) > 0.5).astype(np.float64))
        return pred, gt, pp, pg

    def test_perfect_prediction_zero(self, rng):
        x = t64(rng, (3, 8, 8), lo=0.1, hi=0.9)
        maps = Tensor(np.ones((3, 8, 8)), dtype=np.float64)
        loss = restoration_loss(x, x, maps, maps)
        assert loss.item() < 1e-8

    def test_weighted_composition_oracle(self, rng):
        pred, gt, pp, pg = self._random_pair(rng)
        total = restoration_loss(pred, gt, pp, pg).item()
        oracle = (0.1 * freq_loss(pred, gt).item()
                  + color_loss(pred, gt).item()
                  + l1_loss(pred, gt).item()
                  + prior_loss(pp, pg).item())
        assert abs(total - oracle) < 1e-9

    def test_lambda1_scales_freq_term(self, rng):
        pred, gt, pp, pg = self._random_pair(rng)
        w = LossWeights(freq=0.1, color=0.0, l1=0.0, priors=0.0)
        total = restoration_loss(pred, gt, pp, pg, w).item()
        assert abs(total - 0.1 * freq_loss(pred, gt).item()) < 1e-10

    def test_l1_only_passes_through(self, rng):
        pred, gt, pp, pg = self._random_pair(rng)
        w = LossWeights(freq=0.0, color=0.0, l1=1.0, priors=0.0)
        total = restoration_loss(pred, gt, pp, pg, w).item()
        assert abs(total - l1_loss(pred, gt).item()) < 1e-10

    def test_gan_generator_scaling(self):
        assert abs(gan_generator_loss(Tensor(np.array(100.0), dtype=np.float64),
                                      Tensor(np.array(0.0), dtype=np.float64)).item()
                   - 0.1) < 1e-9
        assert gan_generator_loss(Tensor(np.array(0.0), dtype=np.float64),
                                  Tensor(np.array(0.0), dtype=np.float64)).item() == 0.0

    def test_gan_generator_linearity(self, rng):
        r1, a1 = 7.0, -2.0
        base = gan_generator_loss(Tensor(np.array(r1), dtype=np.float64),
                                  Tensor(np.array(a1), dtype=np.float64)).item()
        doubled = gan_generator_loss(Tensor(np.array(2 * r1), dtype=np.float64),
                                     Tensor(np.array(2 * a1), dtype=np.float64)).item()
        assert abs(doubled - 2 * base) < 1e-12


class TestLossGradients:
    """Every loss against finite differences (double precision)."""

    @pytest.mark.parametrize("seed", range(10))
    def test_l1(self, seed):
        rng = np.random.default_rng(seed)
        x = t64(rng, (2, 4, 4), lo=0.0, hi=0.4, grad=True)
        gt = t64(rng, (2, 4, 4), lo=0.6, hi=1.0)  # keeps |diff| away from 0
        with Tape() as tape:
            loss = l1_loss(x, gt)
        backward(loss, tape)
        fd = finite_diff_grad(lambda t: l1_loss(t, gt), x)
        assert rel_err(x.grad, fd) < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_color(self, seed):
        rng = np.random.default_rng(seed)
        x = t64(rng, (3, 3, 3), lo=0.2, hi=0.9, grad=True)
        gt = t64(rng, (3, 3, 3), lo=0.2, hi=0.9)
        with Tape() as tape:
            loss = color_loss(x, gt)
        backward(loss, tape)
        fd = finite_diff_grad(lambda t: color_loss(t, gt), x)
        assert rel_err(x.grad, fd) < 1e-6

    @pytest.mark.parametrize("seed", range(10))
    def test_freq(self, seed):
        rng = np.random.default_rng(seed)
        x = t64(rng, (2, 4, 4), grad=True)
        gt = t64(rng, (2, 4, 4), lo=2.0, hi=3.0)  # spectra never coincide
        with Tape() as tape:
            loss = freq_loss(x, gt)
        backward(loss, tape)
        fd = finite_diff_grad(lambda t: freq_loss(t, gt), x)
        assert rel_err(x.grad, fd) < 1e-5

    @pytest.mark.parametrize("seed", range(10))
    def test_focal_and_prior(self, seed):
        rng = np.random.default_rng(seed)
        x = t64(rng, (3, 4, 4), lo=0.15, hi=0.85, grad=True)
        y = Tensor((rng.uniform(size=(3, 4, 4)) > 0.5).astype(np.float64))
        with Tape() as tape:
            loss = prior_loss(x, y)
        backward(loss, tape)
        fd = finite_diff_grad(lambda t: prior_loss(t, y), x)
        assert rel_err(x.grad, fd) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_penalty_double_backward(self, seed):
        # d(gp)/d(critic params) against finite differences
        rng = np.random.default_rng(seed)
        w = t64(rng, (1, 3, 3), lo=0.5, hi=1.5, grad=True)
        real = [t64(rng, (1, 3, 3))]
        fake = [t64(rng, (1, 3, 3))]

        def gp_value(wt):
            with Tape() as tape:
                val = gradient_penalty(linear_critic(wt), real, fake, tape,
                                       np.random.default_rng(seed + 100))
            return val

        with Tape() as tape:
            gp = gradient_penalty(linear_critic(w), real, fake, tape,
                                  np.random.default_rng(seed + 100))
        backward(gp, tape)
        fd = finite_diff_grad(gp_value, w)
        assert rel_err(w.grad, fd) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_restoration_composite(self, seed):
        rng = np.random.default_rng(seed)
        pred = t64(rng, (3, 4, 4), lo=0.1, hi=0.45, grad=True)
        gt = t64(rng, (3, 4, 4), lo=0.55, hi=0.9)
        pp = t64(rng, (3, 4, 4), lo=0.2, hi=0.8, grad=True)
        pg = Tensor((rng.uniform(size=(3, 4, 4)) > 0.5).astype(np.float64))
        with Tape() as tape:
            loss = restoration_loss(pred, gt, pp, pg)
        backward(loss, tape)
        fd_pred = finite_diff_grad(lambda t: restoration_loss(t, gt, pp.detach(), pg), pred)
        fd_pp = finite_diff_grad(lambda t: restoration_loss(pred.detach(), gt, t, pg), pp)
        assert rel_err(pred.grad, fd_pred) < 1e-5
        assert rel_err(pp.grad, fd_pp) < 1e-5


def test_gp_config_validation():
    with pytest.raises(ValueError):
        GPConfig(penalty_coeff=-1.0)
