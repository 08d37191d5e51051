"""Snapshot dimension reduction: linear PCA and a deep autoencoder.

Both reducers share the transformer interface: fit on a snapshot matrix
(rows = fields, columns = grid values), transform to a d-dimensional latent
space, inverse_transform back. Input and output snapshots of a trajectory
dataset are pooled into one matrix so a single basis serves both ends of the
operator pipeline.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tape, Tensor
from .datagen import FieldDataset
from .linalg import truncated_svd
from .nn import Adam, Chain, Dense, check_finite_loss, iterate_minibatches, mse_loss, parameter_count
from .rng import Rng


def assemble_snapshots(dataset: FieldDataset, split: str = "train") -> np.ndarray:
    """Stack input fields and all output snapshots into one (rows, D) matrix.

    Row order: the n chosen inputs, then the n*m_t outputs in sample-major
    order. A dataset with n=2, m_t=3 therefore yields 8 rows.
    """
    if split == "train":
        ins, outs = dataset.train_inputs(), dataset.train_outputs()
    elif split == "test":
        ins, outs = dataset.test_inputs(), dataset.test_outputs()
    elif split == "all":
        ins, outs = dataset.inputs, dataset.outputs
    else:
        raise ValueError(f"split must be 'train', 'test' or 'all', got '{split}'")
    return np.vstack([ins, outs.reshape(-1, ins.shape[1])])


def _check_snapshot_matrix(x, name="X") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D (rows, features), got shape {x.shape}")
    if x.shape[0] == 0 or x.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def reconstruction_mse(reducer, x: np.ndarray) -> float:
    """Mean squared error of encode-decode over all entries of x."""
    x = np.asarray(x, dtype=np.float64)
    rec = reducer.inverse_transform(reducer.transform(x))
    return float(np.mean((rec - x) ** 2))


class PCAReducer(TransformerMixin, BaseEstimator):
    """Truncated-SVD principal subspace of mean-centered snapshots."""

    def __init__(self, d: int = 64):
        self.d = d

    def fit(self, x, y=None):
        x = _check_snapshot_matrix(x)
        if not 1 <= self.d <= min(x.shape):
            raise ValueError(f"d={self.d} outside valid range [1, {min(x.shape)}] for shape {x.shape}")
        self.mean_ = x.mean(axis=0)
        res = truncated_svd(x - self.mean_, self.d)
        self.components_ = res.vt.T  # (features, d), orthonormal columns
        self.singular_values_ = res.s
        self.n_features_in_ = x.shape[1]
        return self

    def transform(self, x) -> np.ndarray:
        check_is_fitted(self, "components_")
        x = _check_snapshot_matrix(x)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {x.shape[1]}")
        return (x - self.mean_) @ self.components_

    def inverse_transform(self, latents) -> np.ndarray:
        check_is_fitted(self, "components_")
        latents = _check_snapshot_matrix(latents, "latents")
        if latents.shape[1] != self.d:
            raise ValueError(f"latent width {latents.shape[1]} does not match d={self.d}")
        return latents @ self.components_.T + self.mean_


def autoencoder_widths(n_features: int, d: int, n_hidden: int = 3) -> list:
    """Geometric interpolation between the feature count and the bottleneck."""
    if d >= n_features:
        raise ValueError(f"bottleneck d={d} must be smaller than the feature count {n_features}")
    steps = n_hidden + 1
    widths = [
        int(round(n_features ** (1.0 - i / steps) * d ** (i / steps))) for i in range(1, steps)
    ]
    return widths


class MLAEReducer(TransformerMixin, BaseEstimator):
    """Multi-layer autoencoder on [0, 1]-normalized snapshots.

    Encoder widths interpolate geometrically from the feature count down to
    d; the decoder mirrors them. Every layer is relu except the final
    reconstruction layer, which is sigmoid (hence the [0, 1] input contract).
    """

    def __init__(self, d: int = 64, hidden_widths=None, epochs: int = 40, batch_size: int = 64,
                 lr: float = 1e-3, seed: int = 0, verbose: bool = False):
        self.d = d
        self.hidden_widths = hidden_widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.verbose = verbose

    def _build(self, n_features: int):
        widths = list(self.hidden_widths) if self.hidden_widths else autoencoder_widths(n_features, self.d)
        init = Rng(self.seed, stream=0)
        enc_sizes = [n_features, *widths, self.d]
        dec_sizes = [self.d, *widths[::-1], n_features]
        encoder, decoder = [], []
        for i in range(len(enc_sizes) - 1):
            encoder.append(Dense(enc_sizes[i], enc_sizes[i + 1], "relu", rng=init, name=f"enc{i}"))
        for i in range(len(dec_sizes) - 1):
            act = "sigmoid" if i == len(dec_sizes) - 2 else "relu"
            decoder.append(Dense(dec_sizes[i], dec_sizes[i + 1], act, rng=init, name=f"dec{i}"))
        self.encoder_ = Chain(encoder)
        self.decoder_ = Chain(decoder)
        self.widths_ = widths

    def fit(self, x, y=None):
        x = _check_snapshot_matrix(x)
        if x.min() < -1e-12 or x.max() > 1.0 + 1e-12:
            raise ValueError(
                "autoencoder training input must lie in [0, 1] (sigmoid reconstruction range); "
                f"got range [{x.min():.3g}, {x.max():.3g}]"
            )
        if not 1 <= self.d < x.shape[1]:
            raise ValueError(f"d={self.d} outside valid range [1, {x.shape[1] - 1}]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        self._build(x.shape[1])
        params = self.encoder_.parameters() + self.decoder_.parameters()
        opt = Adam(params, lr=self.lr)
        log = []
        for epoch in range(self.epochs):
            shuffle = Rng(self.seed, stream=epoch + 1)
            losses = []
            for idx in iterate_minibatches(x.shape[0], self.batch_size, shuffle):
                tape = Tape()
                for p in params:
                    tape.watch(p)
                batch = Tensor(x[idx])
                loss = mse_loss(self.decoder_(self.encoder_(batch)), x[idx])
                value = loss.item()
                check_finite_loss(value, f"autoencoder epoch {epoch}")
                opt.step(tape.backward(loss))
                losses.append(value)
            log.append(float(np.mean(losses)))
            if self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs} loss {log[-1]:.6e}")
        for p in params:
            p.node = None
        self.training_log_ = log
        self.n_features_in_ = x.shape[1]
        return self

    def transform(self, x) -> np.ndarray:
        check_is_fitted(self, "encoder_")
        x = _check_snapshot_matrix(x)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {x.shape[1]}")
        return self.encoder_(Tensor(x)).data

    def inverse_transform(self, latents) -> np.ndarray:
        check_is_fitted(self, "decoder_")
        latents = _check_snapshot_matrix(latents, "latents")
        if latents.shape[1] != self.d:
            raise ValueError(f"latent width {latents.shape[1]} does not match d={self.d}")
        return self.decoder_(Tensor(latents)).data

    def parameter_count(self) -> int:
        check_is_fitted(self, "encoder_")
        return parameter_count(self.encoder_.parameters() + self.decoder_.parameters())
