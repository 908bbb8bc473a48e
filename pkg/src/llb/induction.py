"""Online few-shot learner for the linear target model.

The target model is a K x K convolution ``tau`` mapping C-channel backbone
features to D-channel target encodings. ``tau`` uses the torch convolution
weight layout ``(D, C, K, K)``; a leading batch axis ``(B, D, C, K, K)``
holds one independent model per object/sequence.

The learner minimises the weighted ridge objective

    L(tau) = 1/2 * sum_i || w_i * (T_tau(m_i) - g_i) ||^2 + lambda/2 * ||tau||^2

by steepest descent with an exact line search. Since T_tau is linear, L is
a quadratic whose Hessian-vector product needs one extra forward/transpose
pass. Everything is written with plain differentiable tensor ops, so the
unrolled iterations can be backpropagated into the features, labels,
weights and lambda.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .datamodel import InputError, MemoryBank


class NumericFault(FloatingPointError):
    pass


def _check_kernel(tau: torch.Tensor) -> int:
    k = tau.shape[-1]
    if tau.shape[-2] != k or k % 2 == 0:
        raise InputError(f"target model kernel must be square with odd size, got {tuple(tau.shape[-2:])}")
    return k


def target_model_apply(tau: torch.Tensor, feature: torch.Tensor) -> torch.Tensor:
    """Convolve features with the target model, zero padding keeps H x W.

    tau (D,C,K,K) with feature (C,H,W) or (N,C,H,W); or batched
    tau (B,D,C,K,K) with feature (B,C,H,W) or (B,N,C,H,W).
    """
    k = _check_kernel(tau)
    if tau.dim() == 4:
        squeeze = feature.dim() == 3
        x = feature.unsqueeze(0) if squeeze else feature
        if x.shape[1] != tau.shape[1]:
            raise InputError(f"feature has {x.shape[1]} channels, target model expects {tau.shape[1]}")
        out = F.conv2d(x, tau, padding=k // 2)
        return out[0] if squeeze else out

    b, d, c = tau.shape[:3]
    single = feature.dim() == 4
    x = feature.unsqueeze(1) if single else feature
    if x.shape[0] != b or x.shape[2] != c:
        raise InputError(f"feature shape {tuple(feature.shape)} incompatible with tau {tuple(tau.shape)}")
    n, h, w = x.shape[1], x.shape[3], x.shape[4]
    # grouped conv: one group per batch element
    x = x.transpose(0, 1).reshape(n, b * c, h, w)
    out = F.conv2d(x, tau.reshape(b * d, c, k, k), padding=k // 2, groups=b)
    out = out.reshape(n, b, d, h, w).transpose(0, 1)
    return out[:, 0] if single else out


infer_e2star = target_model_apply


@dataclass
class LearnerSamples:
    """Batched training samples: features (B,N,C,H,W), labels/weights (B,N,D,H,W)."""

    features: torch.Tensor
    labels: torch.Tensor
    weights: torch.Tensor

    def __post_init__(self):
        if self.features.dim() == 4:
            self.features = self.features.unsqueeze(0)
            self.labels = self.labels.unsqueeze(0)
            self.weights = self.weights.unsqueeze(0)
        f, g, w = self.features, self.labels, self.weights
        if f.shape[1] == 0:
            raise InputError("learner needs at least one sample")
        if g.shape != w.shape or f.shape[:2] != g.shape[:2] or f.shape[-2:] != g.shape[-2:]:
            raise InputError(
                f"sample shapes disagree: features {tuple(f.shape)}, labels {tuple(g.shape)}, "
                f"weights {tuple(w.shape)}")

    @classmethod
    def from_memory(cls, bank: MemoryBank) -> "LearnerSamples":
        if len(bank) == 0:
            raise InputError("memory bank is empty")
        return cls(bank.stacked("feature"), bank.stacked("e2"), bank.stacked("weights"))


class RidgeProblem:
    """The quadratic objective in matrix form, built once per learner call.

    Rows of the design matrix are the K x K x C patches around every sample
    position (im2col with zero padding), so ``X @ tau_mat`` is exactly the
    convolution output.
    """

    def __init__(self, samples: LearnerSamples, kernel_size: int, lam):
        f = samples.features
        b, n, c, h, w = f.shape
        k = kernel_size
        if k % 2 == 0:
            raise InputError("kernel_size must be odd")
        cols = F.unfold(f.reshape(b * n, c, h, w), k, padding=k // 2)  # (BN, CKK, HW)
        self.X = cols.reshape(b, n, c * k * k, h * w).permute(0, 1, 3, 2).reshape(b, n * h * w, c * k * k)
        d = samples.labels.shape[2]
        self.G = samples.labels.permute(0, 1, 3, 4, 2).reshape(b, n * h * w, d)
        self.W2 = samples.weights.permute(0, 1, 3, 4, 2).reshape(b, n * h * w, d) ** 2
        self.shape = (b, d, c, k, k)
        self.lam = torch.as_tensor(lam, dtype=f.dtype, device=f.device)

    def to_mat(self, tau: torch.Tensor) -> torch.Tensor:
        b, d = self.shape[:2]
        return tau.reshape(b, d, -1).transpose(1, 2)

    def from_mat(self, mat: torch.Tensor) -> torch.Tensor:
        return mat.transpose(1, 2).reshape(self.shape)

    def loss(self, tau_mat: torch.Tensor) -> torch.Tensor:
        r = self.X @ tau_mat - self.G
        data = 0.5 * (self.W2 * r * r).sum(dim=(1, 2))
        return data + 0.5 * self.lam * (tau_mat * tau_mat).sum(dim=(1, 2))

    def step(self, tau_mat: torch.Tensor, eps: float = 1e-10):
        r = self.X @ tau_mat - self.G
        loss = 0.5 * (self.W2 * r * r).sum(dim=(1, 2)) + 0.5 * self.lam * (tau_mat * tau_mat).sum(dim=(1, 2))
        # residual weighted by w^2: w sits inside the squared norm
        grad = self.X.transpose(1, 2) @ (self.W2 * r) + self.lam * tau_mat
        xg = self.X @ grad
        gg = (grad * grad).sum(dim=(1, 2))
        # <g, A g> = ||w * X g||^2 + lambda ||g||^2
        gag = (self.W2 * xg * xg).sum(dim=(1, 2)) + self.lam * gg
        if not torch.isfinite(gg).all() or not torch.isfinite(gag).all():
            raise NumericFault("non-finite gradient in steepest descent step")
        ok = (gag > eps) & (gg > 0)
        alpha = torch.where(ok, gg / torch.where(ok, gag, torch.ones_like(gag)), torch.zeros_like(gg))
        return tau_mat - alpha[:, None, None] * grad, loss, alpha


def _batched(tau: torch.Tensor) -> tuple[torch.Tensor, bool]:
    return (tau.unsqueeze(0), True) if tau.dim() == 4 else (tau, False)


def loss_eval(tau: torch.Tensor, samples: LearnerSamples, lam) -> torch.Tensor:
    """Exact ridge objective; one value per batch element (scalar if unbatched)."""
    tau_b, squeeze = _batched(tau)
    prob = RidgeProblem(samples, _check_kernel(tau), lam)
    if tuple(tau_b.shape) != prob.shape:
        raise InputError(f"tau shape {tuple(tau.shape)} does not match samples {prob.shape}")
    out = prob.loss(prob.to_mat(tau_b))
    return out[0] if squeeze else out


def sd_step(tau: torch.Tensor, samples: LearnerSamples, lam, eps: float = 1e-10):
    """One steepest descent step with exact line search.

    Returns ``(tau_new, loss_before, alpha)``.
    """
    tau_b, squeeze = _batched(tau)
    prob = RidgeProblem(samples, _check_kernel(tau), lam)
    new, loss, alpha = prob.step(prob.to_mat(tau_b), eps)
    new = prob.from_mat(new)
    if squeeze:
        return new[0], loss[0], alpha[0]
    return new, loss, alpha


def learn(memory, tau_init: torch.Tensor | None, n_iters: int, lam, kernel_size: int | None = None,
          eps: float = 1e-10, return_losses: bool = False):
    """Run ``n_iters`` unrolled steepest descent steps starting from ``tau_init``.

    ``memory`` is a MemoryBank (entries carry feature, e2 label and weights) or
    LearnerSamples. ``tau_init=None`` means zero initialisation.
    """
    samples = LearnerSamples.from_memory(memory) if isinstance(memory, MemoryBank) else memory
    if n_iters < 0:
        raise InputError("n_iters must be >= 0")
    if tau_init is None:
        if kernel_size is None:
            raise InputError("kernel_size is required when tau_init is None")
        b, _, c = samples.features.shape[:3]
        d = samples.labels.shape[2]
        tau_init = samples.features.new_zeros(b, d, c, kernel_size, kernel_size)
    losses = []
    if n_iters == 0:
        return (tau_init, losses) if return_losses else tau_init
    tau_b, squeeze = _batched(tau_init)
    prob = RidgeProblem(samples, _check_kernel(tau_b), lam)
    if tuple(tau_b.shape) != prob.shape:
        raise InputError(f"tau shape {tuple(tau_b.shape)} does not match samples {prob.shape}")
    mat = prob.to_mat(tau_b)
    for _ in range(n_iters):
        mat, loss, _ = prob.step(mat, eps)
        losses.append(loss)
    if return_losses:
        losses.append(prob.loss(mat))
    out = prob.from_mat(mat)
    out = out[0] if squeeze else out
    return (out, losses) if return_losses else out
