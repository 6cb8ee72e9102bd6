"""Shared fixtures and numerical helpers for the test suite."""

import numpy as np
import pytest
import torch

from lotnext.data import SequenceWindow


def make_window(user, pois, slots=None):
    """Window from an explicit POI visit sequence (labels shifted by one)."""
    pois = list(pois)
    if len(pois) < 2:
        raise ValueError("need at least two visits")
    if slots is None:
        slots = [i % 168 for i in range(len(pois))]
    return SequenceWindow(
        user=user,
        input_pois=tuple(pois[:-1]),
        input_slots=tuple(slots[:-1]),
        label_pois=tuple(pois[1:]),
        label_slots=tuple(slots[1:]),
    )


def fd_grad(f, tensor, h=1e-6, entries=None):
    """Central finite differences of the scalar f() w.r.t. ``tensor``.

    Returns (indices, grads) over ``entries`` flat positions (all when None).
    ``tensor`` is modified in place and restored.
    """
    flat = tensor.data.view(-1)
    if entries is None:
        entries = range(flat.numel())
    idx, grads = [], []
    for i in entries:
        orig = flat[i].item()
        flat[i] = orig + h
        fp = float(f())
        flat[i] = orig - h
        fm = float(f())
        flat[i] = orig
        idx.append(i)
        grads.append((fp - fm) / (2.0 * h))
    return np.asarray(idx), np.asarray(grads)


def rel_err(analytic, numeric):
    """Norm-wise relative disagreement between two gradient vectors."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_grad_against_fd(loss_fn, tensor, rng, max_entries=10, h=1e-6, tol=1e-4):
    """Compare autograd and central differences on a sample of entries."""
    loss = loss_fn()
    grad = torch.autograd.grad(loss, tensor, retain_graph=False)[0]
    n = tensor.numel()
    if n <= max_entries:
        entries = list(range(n))
    else:
        entries = sorted(rng.choice(n, size=max_entries, replace=False).tolist())
    idx, fd = fd_grad(lambda: loss_fn().item(), tensor, h=h, entries=entries)
    an = grad.detach().view(-1).numpy()[idx]
    err = rel_err(an, fd)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} on {len(idx)} entries"
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
