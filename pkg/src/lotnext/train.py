"""Joint training loop: per-batch graph adjustment, forward pass, three-part
loss, clipped parameter updates, per-epoch logging, and checkpointing.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import Dataset
from .evaluate import compute_metrics
from .graphs import GraphAdjustment, build_interaction_graph, build_transition_graph
from .losses import (
    JointLossWeights,
    LossConfig,
    adaptive_sample_weights,
    aux_time_loss,
    cross_entropy,
    logit_adjustment_factors,
    lta_loss,
)
from .model import LoTNextNet, ModelConfig
from .spatial import SpatialParams

CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """The joint loss became non-finite; carries a batch diagnostic."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or incompatible."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    seed: int = 42
    gradient_clip_norm: float = 5.0
    delta: float = 0.5
    graph_mode: str = "denoise"  # denoise | raw | off
    gradient_gate: str = "score-scaled"  # score-scaled | hard
    denoiser_hidden: int = 10
    early_stop_patience: int = 0  # 0 disables early stopping
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    spatial: SpatialParams = field(default_factory=SpatialParams)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0 or self.gradient_clip_norm <= 0:
            raise ValueError("weight_decay must be >= 0 and gradient_clip_norm > 0")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must be in [0, 1)")
        if self.graph_mode not in ("denoise", "raw", "off"):
            raise ValueError(f"unknown graph_mode {self.graph_mode!r}")
        if self.graph_mode != "off" and self.model.d_poi != self.model.d_user:
            raise ValueError("graph modes using the interaction graph need d_poi == d_user")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["model"] = ModelConfig(**d["model"])
        d["loss"] = LossConfig(**d["loss"])
        d["spatial"] = SpatialParams(**d["spatial"])
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    ce: float
    lta: float
    aux: float
    joint: float
    lambdas: tuple
    acc1: float
    acc5: float
    acc10: float
    mrr: float

    def line(self) -> str:
        lam = " ".join(f"lambda{i + 1}={v:.6f}" for i, v in enumerate(self.lambdas))
        return (
            f"epoch={self.epoch} ce={self.ce:.6f} lta={self.lta:.6f} aux={self.aux:.6f} "
            f"joint={self.joint:.6f} {lam} acc1={self.acc1:.6f} acc5={self.acc5:.6f} "
            f"acc10={self.acc10:.6f} mrr={self.mrr:.6f}"
        )


@dataclass
class TrainReport:
    records: list

    def write_log(self, path) -> None:
        Path(path).write_text(
            "\n".join(r.line() for r in self.records) + "\n", encoding="utf-8"
        )


@dataclass
class Batch:
    poi: torch.Tensor         # (B, n) long
    slot: torch.Tensor        # (B, n) long
    lat: torch.Tensor         # (B, n)
    lon: torch.Tensor         # (B, n)
    user: torch.Tensor        # (B,) long
    label_poi: torch.Tensor   # (B, n) long
    label_slot: torch.Tensor  # (B, n) long
    mask: torch.Tensor        # (B, n) bool, True at real (unpadded) steps


def windows_to_batch(windows, coords: np.ndarray, dtype=torch.float32) -> Batch:
    """Right-pad a list of windows to a dense batch.

    Padded steps use index 0 and are excluded by ``mask``; the causal model
    never lets them influence real steps.
    """
    b = len(windows)
    n = max(w.n for w in windows)
    poi = torch.zeros(b, n, dtype=torch.long)
    slot = torch.zeros(b, n, dtype=torch.long)
    lpoi = torch.zeros(b, n, dtype=torch.long)
    lslot = torch.zeros(b, n, dtype=torch.long)
    mask = torch.zeros(b, n, dtype=torch.bool)
    user = torch.zeros(b, dtype=torch.long)
    for i, w in enumerate(windows):
        m = w.n
        poi[i, :m] = torch.tensor(w.input_pois)
        slot[i, :m] = torch.tensor(w.input_slots)
        lpoi[i, :m] = torch.tensor(w.label_pois)
        lslot[i, :m] = torch.tensor(w.label_slots)
        mask[i, :m] = True
        user[i] = w.user
    coord = torch.as_tensor(coords, dtype=dtype)
    return Batch(
        poi=poi,
        slot=slot,
        lat=coord[poi, 0],
        lon=coord[poi, 1],
        user=user,
        label_poi=lpoi,
        label_slot=lslot,
        mask=mask,
    )


def build_modules(n_users: int, n_pois: int, cfg: TrainConfig, train_windows=None):
    """Construct the network, optional graph module, and loss weights.

    ``train_windows`` is required unless ``graph_mode`` is ``off``.
    """
    net = LoTNextNet(n_users, n_pois, cfg.model, cfg.spatial)
    adj = None
    if cfg.graph_mode != "off":
        if not train_windows:
            raise ValueError("graph modes need training windows to build graphs")
        interaction = build_interaction_graph(train_windows, n_users, n_pois)
        transition = build_transition_graph(train_windows, n_pois)
        adj = GraphAdjustment(
            interaction,
            transition,
            dim=cfg.model.d_poi,
            denoiser_hidden=cfg.denoiser_hidden,
            delta=cfg.delta,
            gradient_gate=cfg.gradient_gate,
            mode=cfg.graph_mode,
        )
    joint = JointLossWeights(
        mode=cfg.loss.lambda_mode,
        fixed=(cfg.loss.lambda_ce, cfg.loss.lambda_lta, cfg.loss.lambda_aux),
    )
    return net, adj, joint


def _poi_table(net: LoTNextNet, adj):
    if adj is None:
        return net.poi_emb
    return adj(net.user_emb, net.poi_emb)[0]


def _flatten(out, batch: Batch):
    flat = batch.mask.reshape(-1)
    n_classes = out.logits.shape[-1]
    return (
        out.logits.reshape(-1, n_classes)[flat],
        out.time_pred.reshape(-1)[flat],
        out.hidden.reshape(-1, out.hidden.shape[-1])[flat],
        batch.label_poi.reshape(-1)[flat],
        batch.label_slot.reshape(-1)[flat],
    )


def score_windows(net: LoTNextNet, adj, windows, dataset: Dataset, loss_cfg: LossConfig,
                  batch_size: int = 256, alpha: np.ndarray = None):
    """Score every step of every window; returns (scores, labels) numpy arrays.

    When ``loss_cfg.adjust_at_inference`` is set, the frequency-derived
    offsets are added to the logits before ranking.
    """
    was_training = net.training
    net.eval()
    if adj is not None:
        adj.eval()
    dtype = next(net.parameters()).dtype
    all_scores, all_labels = [], []
    with torch.no_grad():
        table = _poi_table(net, adj)
        for start in range(0, len(windows), batch_size):
            chunk = windows[start : start + batch_size]
            batch = windows_to_batch(chunk, dataset.coords, dtype=dtype)
            out = net(batch.poi, batch.slot, batch.lat, batch.lon, batch.user, table)
            logits, _, _, labels, _ = _flatten(out, batch)
            all_scores.append(logits.cpu().numpy())
            all_labels.append(labels.cpu().numpy())
    if was_training:
        net.train()
        if adj is not None:
            adj.train()
    scores = np.concatenate(all_scores, axis=0)
    labels = np.concatenate(all_labels, axis=0)
    if loss_cfg.adjust_at_inference:
        if alpha is None:
            alpha = logit_adjustment_factors(dataset.freq, loss_cfg.tau, loss_cfg.epsilon)
        scores = scores + alpha[None, :]
    return scores, labels


def _batch_diagnostic(epoch, step, windows_idx, losses) -> str:
    parts = ", ".join(f"{k}={v}" for k, v in losses.items())
    return (
        f"non-finite loss at epoch {epoch} step {step} ({parts}); "
        f"window indices: {list(windows_idx)[:16]}"
    )


def train(dataset: Dataset, cfg: TrainConfig):
    """Run the full joint training loop; returns (Checkpoint, TrainReport)."""
    if not dataset.train_windows:
        raise ValueError("dataset has no training windows")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    net, adj, joint = build_modules(
        dataset.n_users, dataset.n_pois, cfg, dataset.train_windows
    )
    params = list(net.parameters()) + list(joint.parameters())
    if adj is not None:
        params += list(adj.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    alpha_np = logit_adjustment_factors(dataset.freq, cfg.loss.tau, cfg.loss.epsilon)
    dtype = next(net.parameters()).dtype
    alpha_t = torch.as_tensor(alpha_np, dtype=dtype)

    eval_windows = dataset.test_windows or dataset.train_windows
    windows = dataset.train_windows
    records = []
    best_joint, stale = float("inf"), 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(windows))
        sums = {"ce": 0.0, "lta": 0.0, "aux": 0.0, "joint": 0.0}
        n_batches = 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            batch = windows_to_batch([windows[i] for i in idx], dataset.coords, dtype=dtype)
            opt.zero_grad()
            table = _poi_table(net, adj)
            out = net(batch.poi, batch.slot, batch.lat, batch.lon, batch.user, table)
            logits, time_pred, hidden, labels, label_slots = _flatten(out, batch)

            ce = cross_entropy(logits, labels)
            phi, _, _ = adaptive_sample_weights(
                hidden, net.head.weight, labels,
                epsilon=cfg.loss.epsilon, detach=cfg.loss.detach_weights,
            )
            lta = lta_loss(logits, labels, alpha_t, phi)
            aux = aux_time_loss(time_pred, label_slots)
            total = joint(ce, lta, aux)
            if not torch.isfinite(total):
                raise TrainingDivergedError(
                    _batch_diagnostic(
                        epoch, step, idx,
                        {"ce": ce.item(), "lta": lta.item(), "aux": aux.item(),
                         "joint": total.item()},
                    )
                )
            total.backward()
            nn.utils.clip_grad_norm_(params, cfg.gradient_clip_norm)
            opt.step()

            sums["ce"] += ce.item()
            sums["lta"] += lta.item()
            sums["aux"] += aux.item()
            sums["joint"] += total.item()
            n_batches += 1

        scores, labels_np = score_windows(
            net, adj, eval_windows, dataset, cfg.loss, alpha=alpha_np
        )
        met = compute_metrics(scores, labels_np)
        rec = EpochRecord(
            epoch=epoch,
            ce=sums["ce"] / n_batches,
            lta=sums["lta"] / n_batches,
            aux=sums["aux"] / n_batches,
            joint=sums["joint"] / n_batches,
            lambdas=tuple(float(v) for v in joint.lambdas()),
            acc1=met.acc1,
            acc5=met.acc5,
            acc10=met.acc10,
            mrr=met.mrr,
        )
        records.append(rec)

        if cfg.early_stop_patience > 0:
            if rec.joint < best_joint - 1e-9:
                best_joint, stale = rec.joint, 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break

    ckpt = Checkpoint.from_modules(net, adj, joint, cfg, dataset, epoch=records[-1].epoch)
    return ckpt, TrainReport(records)


class Checkpoint:
    """Named parameter arrays plus config and vocabulary digests."""

    def __init__(self, arrays: dict, meta: dict):
        self.arrays = arrays
        self.meta = meta

    @classmethod
    def from_modules(cls, net, adj, joint, cfg: TrainConfig, dataset: Dataset, epoch: int):
        arrays = {}
        for prefix, module in (("net", net), ("adj", adj), ("joint", joint)):
            if module is None:
                continue
            for name, tensor in module.state_dict().items():
                arrays[f"{prefix}.{name}"] = tensor.detach().cpu().numpy()
        meta = {
            "version": CHECKPOINT_VERSION,
            "epoch": epoch,
            "config": cfg.to_dict(),
            "n_users": dataset.n_users,
            "n_pois": dataset.n_pois,
            "user_digest": dataset.user_digest(),
            "poi_digest": dataset.poi_digest(),
        }
        return cls(arrays, meta)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        np.savez_compressed(buf, __meta__=np.frombuffer(
            json.dumps(self.meta).encode("utf-8"), dtype=np.uint8
        ), **self.arrays)
        path.write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path, dataset: Dataset = None) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            with np.load(path) as data:
                if "__meta__" not in data:
                    raise CheckpointError(f"not a checkpoint file: {path}")
                meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
                arrays = {k: data[k] for k in data.files if k != "__meta__"}
        except (OSError, ValueError, KeyError) as exc:
            raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {meta.get('version')} != supported {CHECKPOINT_VERSION}"
            )
        ckpt = cls(arrays, meta)
        if dataset is not None:
            ckpt.verify_vocab(dataset)
        return ckpt

    def verify_vocab(self, dataset: Dataset) -> None:
        if (self.meta["user_digest"] != dataset.user_digest()
                or self.meta["poi_digest"] != dataset.poi_digest()):
            raise CheckpointError("checkpoint vocabulary digests do not match the dataset")

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.meta["config"])

    def restore(self, dataset: Dataset):
        """Rebuild (net, adj, joint) with the stored parameter values."""
        self.verify_vocab(dataset)
        cfg = self.config
        net, adj, joint = build_modules(
            self.meta["n_users"], self.meta["n_pois"], cfg, dataset.train_windows
        )
        for prefix, module in (("net", net), ("adj", adj), ("joint", joint)):
            if module is None:
                continue
            state = {
                k[len(prefix) + 1 :]: torch.as_tensor(v)
                for k, v in self.arrays.items()
                if k.startswith(prefix + ".")
            }
            module.load_state_dict(state)
        return net, adj, joint
