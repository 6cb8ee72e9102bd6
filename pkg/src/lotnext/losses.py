"""Loss components: cross-entropy, frequency-aware logit offsets, adaptive
sample weighting, the adjusted classification loss, auxiliary time
regression, and the learnable joint combination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import N_TIME_SLOTS, FrequencyTable


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.2
    epsilon: float = 1e-10
    adjust_at_inference: bool = False
    lambda_mode: str = "uncertainty"  # or "fixed"
    lambda_ce: float = 1.0
    lambda_lta: float = 1.0
    lambda_aux: float = 1.0
    detach_weights: bool = True  # treat phi and its baseline as constants in backprop

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.lambda_mode not in ("uncertainty", "fixed"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")


@dataclass
class LossBreakdown:
    """Scalar losses plus the per-batch adjustment state, for logging."""

    ce: float
    lta: float
    aux: float
    joint: float
    phi: np.ndarray
    alpha: np.ndarray
    xi_bar: float

    def record(self) -> dict:
        return {
            "ce": self.ce,
            "lta": self.lta,
            "aux": self.aux,
            "joint": self.joint,
            "xi_bar": self.xi_bar,
            "phi_max": float(self.phi.max()) if self.phi.size else 1.0,
        }


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood under a stabilized softmax."""
    if logits.dim() != 2 or labels.dim() != 1 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits must be (N, P) with labels (N,)")
    logp = F.log_softmax(logits, dim=-1)
    return -logp.gather(1, labels.unsqueeze(1)).squeeze(1).mean()


def logit_adjustment_factors(freq, tau: float, epsilon: float = 1e-10) -> np.ndarray:
    """Per-class additive offsets, larger for rarer classes.

    ``tau * (1 - log(freq_i + eps) / log(freq_max + eps))``. The most
    frequent class gets 0; classes absent from training get the largest
    offset.
    """
    counts = freq.counts if isinstance(freq, FrequencyTable) else np.asarray(freq)
    counts = counts.astype(np.float64)
    if counts.size == 0 or counts.max() < 1:
        raise ValueError("frequency table is empty; cannot derive adjustment factors")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    fmax = counts.max()
    return tau * (1.0 - np.log(counts + epsilon) / np.log(fmax + epsilon))


def adaptive_sample_weights(
    hidden: torch.Tensor,
    class_weights: torch.Tensor,
    labels: torch.Tensor,
    epsilon: float = 1e-10,
    detach: bool = True,
):
    """Per-sample weights from each sample's alignment with its class row.

    The cosine between a sample's hidden vector and its label's weight row
    maps to a magnitude xi in [1, 2] (1 when aligned, 1 - cos otherwise).
    Samples whose xi exceeds the batch geometric mean get weight
    ``1 + xi - mean``; everyone else gets 1.

    Returns ``(phi, xi, xi_bar)``.
    """
    if hidden.shape[0] != labels.shape[0]:
        raise ValueError("hidden rows must match labels")
    if class_weights.shape[1] != hidden.shape[1]:
        raise ValueError("class weight width must match hidden width")
    w_y = class_weights[labels]
    cos = (hidden * w_y).sum(dim=-1) / (
        hidden.norm(dim=-1) * w_y.norm(dim=-1) + epsilon
    )
    one = torch.ones_like(cos)
    xi = torch.where(cos > 0, one, 1.0 - cos)
    xi_bar = torch.exp(torch.log(xi + epsilon).mean())
    phi = torch.where(xi <= xi_bar, one, 1.0 + xi - xi_bar)
    if detach:
        phi, xi, xi_bar = phi.detach(), xi.detach(), xi_bar.detach()
    return phi, xi, xi_bar


def lta_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    alpha: torch.Tensor,
    phi: torch.Tensor,
) -> torch.Tensor:
    """Weighted cross-entropy over per-class-shifted logits.

    With ``alpha`` identically zero and ``phi`` identically one this reduces
    exactly to :func:`cross_entropy`.
    """
    if alpha.shape[-1] != logits.shape[-1]:
        raise ValueError("alpha must have one entry per class")
    logp = F.log_softmax(logits + alpha, dim=-1)
    nll = -logp.gather(1, labels.unsqueeze(1)).squeeze(1)
    return (phi * nll).mean()


def aux_time_loss(time_pred: torch.Tensor, slots: torch.Tensor) -> torch.Tensor:
    """MSE between the predicted fraction of the week and slot / 168."""
    if time_pred.shape != slots.shape:
        raise ValueError("time predictions must align with slots")
    target = slots.to(time_pred.dtype) / N_TIME_SLOTS
    return ((time_pred - target) ** 2).mean()


class JointLossWeights(nn.Module):
    """Combine the three losses with fixed or learnable weights.

    ``uncertainty`` mode learns log-inverse weights ``s`` and computes
    ``sum(exp(-s_i) * L_i + s_i)``, reporting ``lambda_i = exp(-s_i)``;
    ``fixed`` mode is the literal weighted sum.
    """

    def __init__(self, mode: str = "uncertainty", fixed=(1.0, 1.0, 1.0)):
        super().__init__()
        if mode not in ("uncertainty", "fixed"):
            raise ValueError(f"unknown lambda mode {mode!r}")
        self.mode = mode
        if mode == "uncertainty":
            self.s = nn.Parameter(torch.zeros(3))
        else:
            self.register_buffer("fixed", torch.tensor(fixed, dtype=torch.get_default_dtype()))

    def forward(self, ce: torch.Tensor, lta: torch.Tensor, aux: torch.Tensor) -> torch.Tensor:
        parts = torch.stack([ce, lta, aux])
        if self.mode == "uncertainty":
            return (torch.exp(-self.s) * parts).sum() + self.s.sum()
        return (self.fixed.to(parts.dtype) * parts).sum()

    def lambdas(self) -> np.ndarray:
        if self.mode == "uncertainty":
            return torch.exp(-self.s).detach().cpu().numpy()
        return self.fixed.cpu().numpy()
