"""Training objectives.

Reconstruction side: L1, a cosine color term, an L1 term between 2-D DFT
spectra, and per-type focal losses over the degradation priors, combined
into the weighted composite used for joint training.  Adversarial side:
WGAN critic/generator objectives with a gradient penalty on interpolates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor, backward

# probability clamp applied before logs in the focal loss
FOCAL_EPS = 1e-7


@dataclass
class FocalParams:
    """Per-degradation-type focal settings: (weight, gamma, alpha).

    alpha balances classes: positives weigh alpha, negatives 1 - alpha.
    alpha = 1.0 is the documented sentinel that disables balancing
    entirely (both classes weigh 1), which recovers plain binary
    cross-entropy at gamma = 0.
    """
    shadow: Tuple[float, float, float] = (1.0, 2.0, 0.72)
    wrinkle: Tuple[float, float, float] = (2.0, 2.0, 0.96)
    bleed: Tuple[float, float, float] = (3.0, 2.0, 0.94)

    def per_type(self):
        return (self.shadow, self.wrinkle, self.bleed)


@dataclass
class LossWeights:
    freq: float = 0.1      # lambda_1
    color: float = 1.0     # lambda_2
    l1: float = 1.0        # lambda_3
    priors: float = 1.0    # lambda_4
    recon_in_gan: float = 0.001  # lambda_5
    adversarial: float = 1.0     # lambda_6


@dataclass
class GPConfig:
    penalty_coeff: float = 10.0

    def __post_init__(self):
        if self.penalty_coeff < 0:
            raise ValueError("penalty coefficient must be nonnegative")


def _check_same_shape(pred, target, what):
    if pred.shape != target.shape:
        raise ShapeError(f"{what}: shape mismatch {pred.shape} vs {target.shape}")


def l1_loss(pred, target):
    """Mean absolute difference."""
    _check_same_shape(pred, target, "l1_loss")
    return ops.tmean(ops.tabs(ops.sub(pred, target)))


def color_loss(pred, target):
    """Mean over pixels of (1 - cosine similarity between RGB vectors).

    Expects (3, H, W).  Pixels where either vector is all-zero contribute
    nothing (hue is undefined there).
    """
    _check_same_shape(pred, target, "color_loss")
    if pred.shape[0] != 3:
        raise ShapeError("color_loss expects 3-channel images")
    dot = ops.tsum(ops.mul(pred, target), axis=0)
    np_norm = ops.tsqrt(ops.tsum(ops.mul(pred, pred), axis=0))
    nt_norm = ops.tsqrt(ops.tsum(ops.mul(target, target), axis=0))
    denom = ops.mul(np_norm, nt_norm)
    # mask is constant w.r.t. the inputs: zero-norm pixels stay excluded
    valid = Tensor((denom.data > 0).astype(pred.dtype))
    cos = ops.div(ops.mul(dot, valid), ops.maximum_scalar(denom, 1e-12))
    return ops.tmean(ops.mul(valid, ops.sub(ops.const(1.0, pred.dtype), cos)))


def freq_loss(pred, target):
    """Mean absolute difference between unnormalized 2-D DFT spectra.

    Real and imaginary parts are compared separately, per channel.
    """
    _check_same_shape(pred, target, "freq_loss")
    pr, pi = ops.dft2(pred)
    tr, ti = ops.dft2(target)
    re_term = ops.tmean(ops.tabs(ops.sub(pr, tr)))
    im_term = ops.tmean(ops.tabs(ops.sub(pi, ti)))
    return ops.mul(ops.add(re_term, im_term), ops.const(0.5, pred.dtype))


def focal_loss(pred_prob, target, gamma=2.0, alpha=1.0):
    """Focal loss for binary targets: mean of alpha_t (1-p_t)^gamma (-log p_t).

    p_t is the probability assigned to the true class.  alpha weighs the
    positive class and (1 - alpha) the negative class; alpha = 1.0
    disables balancing so that gamma = 0 reduces exactly to binary
    cross-entropy.
    """
    _check_same_shape(pred_prob, target, "focal_loss")
    tdata = target.data
    if not np.all((tdata == 0) | (tdata == 1)):
        raise ValueError("focal_loss targets must be binary {0,1}")
    p = ops.clamp(pred_prob, FOCAL_EPS, 1.0 - FOCAL_EPS)
    y = Tensor(tdata.astype(pred_prob.dtype))
    one = ops.const(1.0, pred_prob.dtype)
    p_t = ops.add(ops.mul(p, y), ops.mul(ops.sub(one, p), ops.sub(one, y)))
    if alpha == 1.0:
        alpha_t = one
    else:
        a = ops.const(alpha, pred_prob.dtype)
        alpha_t = ops.add(ops.mul(a, y), ops.mul(ops.sub(one, a), ops.sub(one, y)))
    focus = ops.power(ops.sub(one, p_t), gamma) if gamma else one
    return ops.tmean(ops.mul(alpha_t, ops.mul(focus, ops.neg(ops.tlog(p_t)))))


def prior_loss(priors_pred, priors_gt, params: FocalParams = FocalParams()):
    """Weighted sum of per-type focal losses over the prior channels.

    Both inputs are (T, H, W) with T = 3 (shadow, wrinkle, bleed).
    Ground-truth maps are binarized at 0.5: the focal objective is defined
    on binary targets, while prior maps may carry intensity.
    """
    per_type = params.per_type()
    if priors_pred.shape[0] != len(per_type):
        raise ShapeError(f"expected {len(per_type)} prior channels, "
                         f"got {priors_pred.shape[0]}")
    _check_same_shape(priors_pred, priors_gt, "prior_loss")
    binary = Tensor((priors_gt.data > 0.5).astype(priors_pred.dtype))
    total = None
    for t, (weight, gamma, alpha) in enumerate(per_type):
        pred_t = ops.narrow(priors_pred, 0, t, 1)
        gt_t = ops.narrow(binary, 0, t, 1)
        term = ops.mul(focal_loss(pred_t, gt_t, gamma=gamma, alpha=alpha),
                       ops.const(weight, priors_pred.dtype))
        total = term if total is None else ops.add(total, term)
    return total


def stack_scores(scores: Sequence[Tensor]):
    """Scalar critic scores -> a single 1-D tensor."""
    return ops.concat([ops.reshape(s, (1,)) for s in scores], axis=0)


def wgan_d_loss(d_real_scores, d_fake_scores, gp, penalty_coeff=10.0):
    """Critic minimization objective: mean(fake) - mean(real) + coeff * gp."""
    real = stack_scores(d_real_scores) if isinstance(d_real_scores, (list, tuple)) \
        else d_real_scores
    fake = stack_scores(d_fake_scores) if isinstance(d_fake_scores, (list, tuple)) \
        else d_fake_scores
    loss = ops.sub(ops.tmean(fake), ops.tmean(real))
    if gp is not None:
        loss = ops.add(loss, ops.mul(ops.const(penalty_coeff, loss.dtype),
                                     gp if isinstance(gp, Tensor) else ops.const(gp, loss.dtype)))
    return loss


def wgan_g_loss(d_fake_scores):
    """Generator objective: -mean(critic score on generated images)."""
    fake = stack_scores(d_fake_scores) if isinstance(d_fake_scores, (list, tuple)) \
        else d_fake_scores
    return ops.neg(ops.tmean(fake))


def gradient_penalty(critic_fn, real, fake, tape, rng):
    """Mean (|grad_xhat critic(xhat)|_2 - 1)^2 over per-pair interpolates.

    critic_fn maps an image tensor to a scalar score.  Must run inside the
    given active tape; the returned penalty stays differentiable w.r.t.
    whatever parameters the critic used (double backward).
    """
    if not isinstance(real, (list, tuple)):
        real, fake = [real], [fake]
    if len(real) != len(fake):
        raise ShapeError("gradient penalty needs matching real/fake batches")
    terms = []
    for r, f in zip(real, fake):
        _check_same_shape(r, f, "gradient_penalty")
        u = float(rng.uniform())
        xhat = Tensor(u * r.data + (1.0 - u) * f.data, requires_grad=True,
                      dtype=r.dtype)
        score = critic_fn(xhat)
        (g,) = backward(score, tape, wrt=[xhat], create_graph=True)
        sq = ops.tsum(ops.mul(g, g))
        norm = ops.tsqrt(ops.add(sq, ops.const(1e-12, sq.dtype)))
        gap = ops.sub(norm, ops.const(1.0, sq.dtype))
        terms.append(ops.mul(gap, gap))
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.mul(total, ops.const(1.0 / len(terms), total.dtype))


def restoration_loss(pred, gt, priors_pred, priors_gt,
                     weights: LossWeights = LossWeights(),
                     focal_params: FocalParams = FocalParams()):
    """Weighted composite: freq + color + L1 + prior terms."""
    dt = pred.dtype
    total = ops.mul(freq_loss(pred, gt), ops.const(weights.freq, dt))
    total = ops.add(total, ops.mul(color_loss(pred, gt), ops.const(weights.color, dt)))
    total = ops.add(total, ops.mul(l1_loss(pred, gt), ops.const(weights.l1, dt)))
    total = ops.add(total, ops.mul(prior_loss(priors_pred, priors_gt, focal_params),
                                   ops.const(weights.priors, dt)))
    return total


def gan_generator_loss(recon_loss, adversarial_term,
                       weights: LossWeights = LossWeights()):
    """Adversarial-phase generator objective.

    recon_loss is the reconstruction composite; adversarial_term is the
    generator's critic term (-mean score on generated images).  The
    gradient penalty regularizes only the critic, so it does not appear
    here.
    """
    recon = recon_loss if isinstance(recon_loss, Tensor) else ops.const(float(recon_loss))
    adv = adversarial_term if isinstance(adversarial_term, Tensor) \
        else ops.const(float(adversarial_term), recon.dtype)
    return ops.add(ops.mul(recon, ops.const(weights.recon_in_gan, recon.dtype)),
                   ops.mul(adv, ops.const(weights.adversarial, recon.dtype)))
