"""Scikit-learn style estimator wrapping the full pipeline.

``fit`` accepts either a prepared :class:`~lotnext.data.Dataset` or a raw
list of :class:`~lotnext.data.CheckIn` records (which are preprocessed with
this estimator's data parameters). ``predict`` returns the dense index of
the most likely next POI after each given window; ``predict_scores``
returns the full final-step score matrix. Hyperparameters follow the
sklearn convention, so ``get_params`` / ``set_params`` / ``clone`` work.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator

from ._validation import check_fitted, check_windows
from .data import Dataset, preprocess
from .evaluate import accuracy_at_k, compute_metrics, stratified_metrics
from .losses import LossConfig, logit_adjustment_factors
from .model import ModelConfig
from .spatial import SpatialParams
from .train import TrainConfig, train, windows_to_batch


class LoTNextEstimator(BaseEstimator):
    """Next-POI classifier with long-tail adjusted training."""

    def __init__(
        self,
        epochs=20,
        batch_size=64,
        learning_rate=1e-3,
        weight_decay=1e-5,
        seed=42,
        gradient_clip_norm=5.0,
        delta=0.5,
        graph_mode="denoise",
        gradient_gate="score-scaled",
        denoiser_hidden=10,
        tau=1.2,
        loss_epsilon=1e-10,
        adjust_at_inference=False,
        lambda_mode="uncertainty",
        lambda_ce=1.0,
        lambda_lta=1.0,
        lambda_aux=1.0,
        detach_weights=True,
        d_poi=10,
        d_user=10,
        d_time=6,
        n_heads=2,
        n_blocks=2,
        window_len=20,
        ffn_hidden=0,
        dropout=0.0,
        ffn_block="norm-add",
        beta=1.0,
        spatial_epsilon=1e-10,
        min_checkins=100,
        train_frac=0.8,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.seed = seed
        self.gradient_clip_norm = gradient_clip_norm
        self.delta = delta
        self.graph_mode = graph_mode
        self.gradient_gate = gradient_gate
        self.denoiser_hidden = denoiser_hidden
        self.tau = tau
        self.loss_epsilon = loss_epsilon
        self.adjust_at_inference = adjust_at_inference
        self.lambda_mode = lambda_mode
        self.lambda_ce = lambda_ce
        self.lambda_lta = lambda_lta
        self.lambda_aux = lambda_aux
        self.detach_weights = detach_weights
        self.d_poi = d_poi
        self.d_user = d_user
        self.d_time = d_time
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.window_len = window_len
        self.ffn_hidden = ffn_hidden
        self.dropout = dropout
        self.ffn_block = ffn_block
        self.beta = beta
        self.spatial_epsilon = spatial_epsilon
        self.min_checkins = min_checkins
        self.train_frac = train_frac

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            seed=self.seed,
            gradient_clip_norm=self.gradient_clip_norm,
            delta=self.delta,
            graph_mode=self.graph_mode,
            gradient_gate=self.gradient_gate,
            denoiser_hidden=self.denoiser_hidden,
            model=ModelConfig(
                d_poi=self.d_poi,
                d_user=self.d_user,
                d_time=self.d_time,
                n_heads=self.n_heads,
                n_blocks=self.n_blocks,
                window_len=self.window_len,
                ffn_hidden=self.ffn_hidden,
                dropout=self.dropout,
                ffn_block=self.ffn_block,
            ),
            loss=LossConfig(
                tau=self.tau,
                epsilon=self.loss_epsilon,
                adjust_at_inference=self.adjust_at_inference,
                lambda_mode=self.lambda_mode,
                lambda_ce=self.lambda_ce,
                lambda_lta=self.lambda_lta,
                lambda_aux=self.lambda_aux,
                detach_weights=self.detach_weights,
            ),
            spatial=SpatialParams(beta=self.beta, epsilon=self.spatial_epsilon),
        )

    def fit(self, X, y=None):
        """Train on a Dataset or a raw list of check-ins. Returns self."""
        if isinstance(X, Dataset):
            dataset = X
        else:
            dataset = preprocess(
                list(X),
                min_checkins=self.min_checkins,
                train_frac=self.train_frac,
                window_len=self.window_len,
            )
        cfg = self._train_config()
        self.checkpoint_, self.report_ = train(dataset, cfg)
        self.dataset_ = dataset
        self.net_, self.adj_, self.joint_ = self.checkpoint_.restore(dataset)
        self.poi_ids_ = list(dataset.poi_ids)
        self.n_pois_ = dataset.n_pois
        return self

    def _poi_table(self):
        if self.adj_ is None:
            return self.net_.poi_emb
        return self.adj_(self.net_.user_emb, self.net_.poi_emb)[0]

    def _score_steps(self, windows, final_only: bool):
        check_fitted(self, ("checkpoint_", "net_"))
        windows = check_windows(windows)
        self.net_.eval()
        dtype = next(self.net_.parameters()).dtype
        rows, labels = [], []
        with torch.no_grad():
            table = self._poi_table()
            for start in range(0, len(windows), 256):
                chunk = windows[start : start + 256]
                batch = windows_to_batch(chunk, self.dataset_.coords, dtype=dtype)
                out = self.net_(
                    batch.poi, batch.slot, batch.lat, batch.lon, batch.user, table
                )
                logits = out.logits.cpu().numpy()
                lab = batch.label_poi.cpu().numpy()
                for i, w in enumerate(chunk):
                    steps = [w.n - 1] if final_only else range(w.n)
                    for k in steps:
                        rows.append(logits[i, k])
                        labels.append(lab[i, k])
        scores = np.asarray(rows, dtype=np.float64)
        if self.adjust_at_inference:
            alpha = logit_adjustment_factors(
                self.dataset_.freq, self.tau, self.loss_epsilon
            )
            scores = scores + alpha[None, :]
        return scores, np.asarray(labels, dtype=np.int64)

    def predict_scores(self, X) -> np.ndarray:
        """Final-step score matrix, one row per window: (len(X), n_pois)."""
        scores, _ = self._score_steps(X, final_only=True)
        return scores

    def predict(self, X) -> np.ndarray:
        """Dense index of the top-scoring next POI after each window."""
        return self.predict_scores(X).argmax(axis=1)

    def score(self, X, y=None) -> float:
        """Top-1 accuracy over every step of the given windows."""
        scores, labels = self._score_steps(X, final_only=False)
        return accuracy_at_k(scores, labels, 1)

    def evaluate(self, X, tail_threshold: int = 100):
        """Overall and head/tail-stratified metrics over every step."""
        scores, labels = self._score_steps(X, final_only=False)
        overall = compute_metrics(scores, labels)
        strat = stratified_metrics(scores, labels, self.dataset_.freq, tail_threshold)
        return overall, strat
