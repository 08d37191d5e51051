"""Operator networks: branch-trunk models on full or reduced fields, and a
Fourier neural operator for autoregressive time stepping.

All models consume normalized snapshot data (rows in [0, 1] scaling comes
from the dataset) and predict trajectories sampled at normalized times
zeta in (0, 1]. Predictions are plain arrays; training happens on a fresh
gradient tape per minibatch with Adam updates.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .datagen import FieldDataset
from .dimred import assemble_snapshots
from .nn import (
    Adam,
    Chain,
    ChannelNorm,
    Conv2D,
    Dense,
    Flatten,
    Parameter,
    check_finite_loss,
    iterate_minibatches,
    mse_loss,
    parameter_count,
)
from .rng import Rng


def evaluate_mse(pred, target) -> float:
    """Mean squared error over all entries of two same-shaped arrays."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: predictions {pred.shape} vs targets {target.shape}")
    return float(np.mean((pred - target) ** 2))


def _check_matrix(x, name="x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def _check_zeta(zeta) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim != 1 or zeta.size == 0:
        raise ValueError(f"zeta must be a non-empty 1-D array, got shape {zeta.shape}")
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta contains non-finite values")
    return zeta


def _square_grid(n_features: int):
    side = math.isqrt(n_features)
    return (side, side) if side * side == n_features else None


class DeepONet(BaseEstimator):
    """Branch-trunk network mapping an input vector to its trajectory.

    The branch embeds the input field (latent or full), the trunk embeds the
    scalar normalized time, and the prediction at each time is the dot
    product of p paired features plus a shared bias. The same architecture
    serves latent and full-field operators; only the input width changes.
    """

    def __init__(self, p: int = 5, width: int = 100, branch: str = "dense",
                 epochs: int = 80, batch_size: int = 64, lr: float = 1e-3,
                 seed: int = 0, grid=None, verbose: bool = False):
        self.p = p
        self.width = width
        self.branch = branch
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.grid = grid
        self.verbose = verbose

    def _build(self, q: int):
        if self.branch not in ("dense", "conv"):
            raise ValueError(f"branch must be 'dense' or 'conv', got '{self.branch}'")
        kind = self.branch
        grid = tuple(self.grid) if self.grid is not None else _square_grid(q)
        if kind == "conv" and grid is None:
            warnings.warn(
                f"input width {q} is not a square grid and no grid was given;"
                " using a dense branch instead", stacklevel=3)
            kind = "dense"
        if kind == "conv" and grid[0] * grid[1] != q:
            raise ValueError(f"grid {grid} does not match input width {q}")
        init = Rng(self.seed, stream=0)
        w = self.width
        if kind == "dense":
            branch = Chain([
                Dense(q, w, "sine", rng=init, name="branch0"),
                Dense(w, w, "sine", rng=init, name="branch1"),
                Dense(w, q * self.p, None, rng=init, name="branch2"),
            ])
        else:
            branch = Chain([
                Conv2D(1, 32, 3, "sine", rng=init, name="branch_conv0"),
                ChannelNorm(32),
                Conv2D(32, 16, 3, "sine", rng=init, name="branch_conv1"),
                ChannelNorm(16),
                Conv2D(16, 16, 3, "sine", rng=init, name="branch_conv2"),
                Flatten(),
                Dense(16 * q, q * self.p, None, rng=init, name="branch_out"),
            ])
        trunk = Chain([
            Dense(1, w, "sine", rng=init, name="trunk0"),
            Dense(w, w, "sine", rng=init, name="trunk1"),
            Dense(w, self.p, "sine", rng=init, name="trunk2"),
        ])
        self.branch_ = branch
        self.trunk_ = trunk
        self.bias_ = Parameter(np.zeros(()), name="bias0")
        self.branch_kind_ = kind
        self.grid_ = grid

    def _parameters(self):
        return self.branch_.parameters() + self.trunk_.parameters() + [self.bias_]

    def _forward(self, x: np.ndarray, zeta: np.ndarray) -> Tensor:
        n, q = x.shape
        inp = Tensor(x)
        if self.branch_kind_ == "conv":
            inp = ad.reshape(inp, (n, 1, *self.grid_))
        br = ad.reshape(self.branch_(inp), (n, q, self.p))
        tr = self.trunk_(Tensor(zeta.reshape(-1, 1)))
        out = ad.transpose(ad.matmul(br, ad.transpose(tr)), (0, 2, 1))
        return ad.add(out, self.bias_)

    def fit(self, x, y, zeta):
        x = _check_matrix(x)
        y = np.asarray(y, dtype=np.float64)
        zeta = _check_zeta(zeta)
        if y.ndim != 3 or y.shape != (x.shape[0], zeta.size, x.shape[1]):
            raise ValueError(
                f"y must have shape (n, {zeta.size}, {x.shape[1]}) to match x and zeta,"
                f" got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        if zeta.min() <= 0.0 or zeta.max() > 1.0:
            raise ValueError(f"training zeta must lie in (0, 1], got range"
                             f" [{zeta.min():.3g}, {zeta.max():.3g}]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        self._build(x.shape[1])
        params = self._parameters()
        self.branch_.train(True)
        opt = Adam(params, lr=self.lr)
        log = []
        for epoch in range(self.epochs):
            shuffle = Rng(self.seed, stream=epoch + 1)
            losses = []
            for idx in iterate_minibatches(x.shape[0], self.batch_size, shuffle):
                tape = Tape()
                for p in params:
                    tape.watch(p)
                loss = mse_loss(self._forward(x[idx], zeta), y[idx])
                value = loss.item()
                check_finite_loss(value, f"operator epoch {epoch}")
                opt.step(tape.backward(loss))
                losses.append(value)
            log.append(float(np.mean(losses)))
            if self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs} loss {log[-1]:.6e}")
        self.branch_.train(False)
        for p in params:
            p.node = None
        self.training_log_ = log
        self.zeta_ = zeta.copy()
        self.n_features_in_ = x.shape[1]
        return self

    def predict(self, x, zeta=None) -> np.ndarray:
        check_is_fitted(self, "branch_")
        x = _check_matrix(x)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {x.shape[1]}")
        zeta = self.zeta_ if zeta is None else _check_zeta(zeta)
        if zeta.min() < 0.0 or zeta.max() > 1.0:
            raise ValueError(f"zeta values must lie in [0, 1], got range"
                             f" [{zeta.min():.3g}, {zeta.max():.3g}]")
        lo, hi = self.zeta_.min(), self.zeta_.max()
        if zeta.min() < lo or zeta.max() > hi:
            warnings.warn(
                f"zeta range [{zeta.min():.3g}, {zeta.max():.3g}] extends beyond the"
                f" training interval [{lo:.3g}, {hi:.3g}]; extrapolating", stacklevel=2)
        return self._forward(x, zeta).data

    def parameter_count(self) -> int:
        check_is_fitted(self, "branch_")
        return parameter_count(self._parameters())


class LatentDeepONet(BaseEstimator):
    """Reduce fields, learn trajectory dynamics in latent space, decode back.

    fit consumes a FieldDataset: the reducer is fit on pooled training
    snapshots (skipped when a pre-fitted reducer is supplied), training
    trajectories are encoded, and the operator trains on latent targets.
    """

    def __init__(self, reducer=None, operator=None):
        self.reducer = reducer
        self.operator = operator

    def fit(self, dataset: FieldDataset):
        if self.reducer is None or self.operator is None:
            raise ValueError("both a reducer and an operator must be provided")
        try:
            check_is_fitted(self.reducer)
            reducer = self.reducer
        except NotFittedError:
            reducer = clone(self.reducer).fit(assemble_snapshots(dataset, "train"))
        n, m_t, width = dataset.train_outputs().shape
        lat_in = reducer.transform(dataset.train_inputs())
        lat_out = reducer.transform(
            dataset.train_outputs().reshape(n * m_t, width)).reshape(n, m_t, -1)
        operator = clone(self.operator).fit(lat_in, lat_out, dataset.zeta)
        self.reducer_ = reducer
        self.operator_ = operator
        self.grid_ = dataset.grid
        self.zeta_ = dataset.zeta.copy()
        self.input_range_ = dataset.input_range
        self.output_range_ = dataset.output_range
        self.n_features_in_ = width
        return self

    def predict_normalized(self, x, zeta=None) -> np.ndarray:
        """Trajectories in normalized field space from normalized inputs."""
        check_is_fitted(self, "operator_")
        x = _check_matrix(x)
        lat = self.operator_.predict(self.reducer_.transform(x), zeta)
        n, k, d = lat.shape
        return self.reducer_.inverse_transform(lat.reshape(n * k, d)).reshape(n, k, -1)

    def predict(self, fields, zeta=None) -> np.ndarray:
        """Raw-scale trajectories (n, k, nx, ny) from raw input fields."""
        check_is_fitted(self, "operator_")
        fields = np.asarray(fields, dtype=np.float64)
        if fields.ndim == 3:
            fields = fields.reshape(fields.shape[0], -1)
        lo, hi = self.input_range_
        norm = self.predict_normalized((fields - lo) / (hi - lo), zeta)
        lo, hi = self.output_range_
        return (lo + norm * (hi - lo)).reshape(norm.shape[0], norm.shape[1], *self.grid_)

    def parameter_count(self) -> int:
        check_is_fitted(self, "operator_")
        return self.operator_.parameter_count()


class FNO2d(BaseEstimator):
    """Fourier neural operator learning the one-step map between snapshots.

    Channels hold the field plus the two grid coordinates. Each of the
    n_layers blocks adds a pointwise channel mix and a spectral convolution
    over the retained low modes, with relu between blocks. Trajectories are
    produced by rolling the learned step forward from the input field.
    """

    def __init__(self, d_v: int = 16, k_max: int = 8, n_layers: int = 4,
                 epochs: int = 12, batch_size: int = 8, lr: float = 1e-3,
                 seed: int = 0, grid=None, verbose: bool = False):
        self.d_v = d_v
        self.k_max = k_max
        self.n_layers = n_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.grid = grid
        self.verbose = verbose

    def _resolve_grid(self, width: int):
        grid = tuple(self.grid) if self.grid is not None else _square_grid(width)
        if grid is None or grid[0] * grid[1] != width:
            raise ValueError(f"field width {width} does not form a square grid; pass grid=")
        if grid[0] != grid[1]:
            raise ValueError(f"spectral layers need a square grid, got {grid}")
        return grid

    def _build(self, size: int):
        if self.n_layers < 1:
            raise ValueError("n_layers must be positive")
        init = Rng(self.seed, stream=0)
        n_modes = int(ad.spectral_mask(size, self.k_max).sum())
        self.lift_ = Dense(3, self.d_v, None, rng=init, name="lift")
        self.mixes_, self.spectral_ = [], []
        scale = 1.0 / (self.d_v * self.d_v)
        for t in range(self.n_layers):
            self.mixes_.append(Dense(self.d_v, self.d_v, None, rng=init, name=f"mix{t}"))
            re = Parameter(scale * init.uniform((self.d_v, self.d_v, n_modes)), name=f"spec{t}_re")
            im = Parameter(scale * init.uniform((self.d_v, self.d_v, n_modes)), name=f"spec{t}_im")
            self.spectral_.append((re, im))
        self.proj_ = Dense(self.d_v, 1, None, rng=init, name="proj")

    def _parameters(self):
        params = list(self.lift_.parameters())
        for mix, (re, im) in zip(self.mixes_, self.spectral_):
            params.extend(mix.parameters())
            params.extend([re, im])
        params.extend(self.proj_.parameters())
        return params

    def _step(self, u: np.ndarray) -> Tensor:
        """One learned time step from fields (n, size, size)."""
        n, size = u.shape[0], u.shape[1]
        coords = (np.arange(size) + 0.5) / size
        cx, cy = np.meshgrid(coords, coords, indexing="ij")
        inp = np.stack([u, np.broadcast_to(cx, u.shape), np.broadcast_to(cy, u.shape)], axis=-1)
        v = self.lift_(Tensor(inp))
        for t, (mix, (re, im)) in enumerate(zip(self.mixes_, self.spectral_)):
            spec = ad.transpose(v, (0, 3, 1, 2))
            spec = ad.spectral_conv2d(spec, re, im, k_max=self.k_max)
            spec = ad.transpose(spec, (0, 2, 3, 1))
            v = ad.add(mix(v), spec)
            if t < self.n_layers - 1:
                v = ad.relu(v)
        return ad.reshape(self.proj_(v), (n, size, size))

    def fit(self, x, y, zeta=None):
        x = _check_matrix(x)
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 3 or y.shape[0] != x.shape[0] or y.shape[2] != x.shape[1]:
            raise ValueError(f"y must have shape (n, steps, {x.shape[1]}), got {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("y contains non-finite values")
        n, m_t, width = y.shape
        if zeta is not None:
            zeta = _check_zeta(zeta)
            uniform = np.arange(1, m_t + 1) * zeta[0]
            if zeta.size != m_t or not np.allclose(zeta, uniform, atol=1e-9):
                raise ValueError("the one-step map needs uniformly spaced zeta starting"
                                 " one step after zero")
        grid = self._resolve_grid(width)
        self._build(grid[0])
        # Teacher forcing: every consecutive snapshot pair is one sample.
        states = np.concatenate([x[:, None, :], y[:, :-1, :]], axis=1)
        pairs_in = states.reshape(n * m_t, *grid)
        pairs_out = y.reshape(n * m_t, *grid)
        params = self._parameters()
        opt = Adam(params, lr=self.lr)
        log = []
        for epoch in range(self.epochs):
            shuffle = Rng(self.seed, stream=epoch + 1)
            losses = []
            for idx in iterate_minibatches(n * m_t, self.batch_size, shuffle):
                tape = Tape()
                for p in params:
                    tape.watch(p)
                loss = mse_loss(self._step(pairs_in[idx]), pairs_out[idx])
                value = loss.item()
                check_finite_loss(value, f"fno epoch {epoch}")
                opt.step(tape.backward(loss))
                losses.append(value)
            log.append(float(np.mean(losses)))
            if self.verbose:
                print(f"epoch {epoch + 1}/{self.epochs} loss {log[-1]:.6e}")
        for p in params:
            p.node = None
        self.training_log_ = log
        self.n_steps_ = m_t
        self.grid_ = grid
        self.n_features_in_ = width
        return self

    def predict(self, x, zeta=None, n_steps=None) -> np.ndarray:
        """Roll the one-step map forward; returns (n, steps, width) fields."""
        check_is_fitted(self, "lift_")
        x = _check_matrix(x)
        if x.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {x.shape[1]}")
        if zeta is not None:
            zeta = _check_zeta(zeta)
            uniform = np.arange(1, zeta.size + 1) * zeta[0]
            if not np.allclose(zeta, uniform, atol=1e-9):
                raise ValueError("rollout needs uniformly spaced zeta")
            n_steps = zeta.size
        steps = self.n_steps_ if n_steps is None else int(n_steps)
        if steps < 1:
            raise ValueError("need at least one rollout step")
        u = x.reshape(x.shape[0], *self.grid_)
        out = np.empty((x.shape[0], steps, self.n_features_in_))
        for k in range(steps):
            u = self._step(u).data
            out[:, k] = u.reshape(x.shape[0], -1)
        return out

    def parameter_count(self) -> int:
        check_is_fitted(self, "lift_")
        return parameter_count(self._parameters())
