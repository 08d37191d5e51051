"""Synthetic field datasets: analytic initial conditions and PDE trajectories.

Three analytic constructions mirror classic benchmark setups: a smooth
compactly-supported zonal jet with a geostrophically balanced height field on
the sphere, a localized Gaussian height perturbation, and a phase-field
strain-history band around a horizontal crack segment. The trainable dataset
is a 2-D diffusion-reaction rollout from Gaussian random field initial
conditions on the periodic unit square.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .containers import read_container, write_container
from .linalg import gauss_legendre
from .random_fields import GrfConfig, build_kle, sample_fields
from .rng import Rng

EARTH_RADIUS = 6.37122e6
GRAVITY = 9.80616
EARTH_ANGULAR_VELOCITY = 7.292e-5
MEAN_LAYER_DEPTH = 1.0e4

ALPHA_SUPPORT = (1.0 / 9.0, 0.5)
BETA_SUPPORT = (1.0 / 30.0, 0.2)
CRACK_CENTER_SUPPORT = (0.3, 0.7)
CRACK_LENGTH_SUPPORT = (0.4, 0.6)

CRACK_MOBILITY = 1.0e3
CRACK_ENERGY_RELEASE = 2.7e-3
CRACK_REG_LENGTH = 0.0125


@dataclass(frozen=True)
class JetParams:
    """Compact zonal jet profile between latitudes phi0 and phi1."""

    u_max: float = 80.0
    phi0: float = np.pi / 7.0
    phi1: float = np.pi / 2.0 - np.pi / 7.0

    def __post_init__(self):
        if self.u_max < 0:
            raise ValueError(f"u_max must be non-negative, got {self.u_max}")
        if not -np.pi / 2 < self.phi0 < self.phi1 < np.pi / 2:
            raise ValueError(f"need -pi/2 < phi0 < phi1 < pi/2, got ({self.phi0}, {self.phi1})")

    @property
    def normalizer(self) -> float:
        """exp(-4 / (phi1 - phi0)^2); makes the jet peak exactly u_max."""
        return float(np.exp(-4.0 / (self.phi1 - self.phi0) ** 2))


def zonal_jet_u(phi, params: JetParams = JetParams()) -> np.ndarray:
    """Jet velocity profile; zero outside (phi0, phi1), u_max at the midpoint.

    The bump exp(1/((phi-phi0)(phi-phi1))) vanishes with all derivatives at
    both edges, so the profile is smooth everywhere.
    """
    phi = np.asarray(phi, dtype=np.float64)
    out = np.zeros_like(phi)
    inside = (phi > params.phi0) & (phi < params.phi1)
    if np.any(inside):
        p = phi[inside]
        out[inside] = (params.u_max / params.normalizer) * np.exp(
            1.0 / ((p - params.phi0) * (p - params.phi1))
        )
    return out


@dataclass(frozen=True)
class PerturbParams:
    """Localized height bump centered at longitude 0, latitude phi2."""

    alpha: float
    beta: float
    h_hat: float = 120.0
    phi2: float = np.pi / 4.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"alpha and beta must be positive, got ({self.alpha}, {self.beta})")


def sample_perturb_params(rng: Rng) -> PerturbParams:
    """Draw (alpha, beta) from their uniform supports."""
    alpha = float(rng.uniform(low=ALPHA_SUPPORT[0], high=ALPHA_SUPPORT[1]))
    beta = float(rng.uniform(low=BETA_SUPPORT[0], high=BETA_SUPPORT[1]))
    return PerturbParams(alpha=alpha, beta=beta)


def height_perturbation(lam, phi, params: PerturbParams) -> np.ndarray:
    """2-D perturbation field h_hat*cos(phi)*exp(-(lam/a)^2 - ((phi2-phi)/b)^2).

    lam and phi are 1-D grids; the result has shape (len(lam), len(phi)).
    """
    lam = np.asarray(lam, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if lam.ndim != 1 or phi.ndim != 1:
        raise ValueError(f"expected 1-D grids, got shapes {lam.shape} and {phi.shape}")
    ll, pp = np.meshgrid(lam, phi, indexing="ij")
    return (
        params.h_hat
        * np.cos(pp)
        * np.exp(-((ll / params.alpha) ** 2))
        * np.exp(-(((params.phi2 - pp) / params.beta) ** 2))
    )


def balanced_height(phi, params: JetParams = JetParams(), mean_depth: float = MEAN_LAYER_DEPTH,
                    n_quad: int = 16) -> np.ndarray:
    """Height profile in gradient balance with the zonal jet.

    g*h(phi) = g*h0 - integral from -pi/2 to phi of
    a*u*(2*Omega*sin(p) + tan(p)*u/a) dp; h0 is set so the cos-weighted mean
    of the returned grid values equals mean_depth. The integrand vanishes
    outside the jet band, so the cumulative integral only accumulates there.
    """
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 1 or phi.size < 2:
        raise ValueError(f"expected a 1-D latitude grid with >= 2 points, got shape {phi.shape}")
    if np.any(np.diff(phi) <= 0):
        raise ValueError("latitude grid must be strictly increasing")
    if phi[0] < -np.pi / 2 - 1e-12 or phi[-1] > np.pi / 2 + 1e-12:
        raise ValueError("latitude grid must lie within [-pi/2, pi/2]")

    def integrand(p):
        u = zonal_jet_u(p, params)
        f = 2.0 * EARTH_ANGULAR_VELOCITY * np.sin(p)
        return EARTH_RADIUS * u * (f + np.tan(p) * u / EARTH_RADIUS)

    integral = np.zeros_like(phi)
    acc = 0.0
    cursor = params.phi0
    for k, p in enumerate(phi):
        upper = min(p, params.phi1)
        if upper > cursor:
            acc += gauss_legendre(integrand, cursor, upper, n_quad)
            cursor = upper
        integral[k] = acc

    h = -integral / GRAVITY
    weights = np.cos(phi)
    wsum = weights.sum()
    if wsum <= 0:
        raise ValueError("latitude grid has no positive-area points")
    h += mean_depth - float((h * weights).sum() / wsum)
    return h


@dataclass(frozen=True)
class CrackParams:
    """Horizontal crack segment centered at x=0.5: y=y_c, length l_c."""

    y_c: float
    l_c: float
    reg_length: float = CRACK_REG_LENGTH

    def __post_init__(self):
        lo, hi = CRACK_CENTER_SUPPORT
        if not lo <= self.y_c <= hi:
            raise ValueError(f"crack height {self.y_c} outside support [{lo}, {hi}]")
        lo, hi = CRACK_LENGTH_SUPPORT
        if not lo <= self.l_c <= hi:
            raise ValueError(f"crack length {self.l_c} outside support [{lo}, {hi}]")
        if self.reg_length <= 0:
            raise ValueError(f"regularization length must be positive, got {self.reg_length}")


def sample_crack_params(rng: Rng) -> CrackParams:
    y_c = float(rng.uniform(low=CRACK_CENTER_SUPPORT[0], high=CRACK_CENTER_SUPPORT[1]))
    l_c = float(rng.uniform(low=CRACK_LENGTH_SUPPORT[0], high=CRACK_LENGTH_SUPPORT[1]))
    return CrackParams(y_c=y_c, l_c=l_c)


def strain_history(x, y, params: CrackParams) -> np.ndarray:
    """Initial strain-history field on the unit square, shape (len(x), len(y)).

    H = B*Gc/(2*l0) * (1 - 2*d/l0) within distance l0/2 of the crack segment
    and exactly zero beyond; on the segment H = 108.0 with the default
    constants.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError(f"expected 1-D grids, got shapes {x.shape} and {y.shape}")
    l0 = params.reg_length
    half = params.l_c / 2.0
    dx = np.maximum(np.abs(x - 0.5) - half, 0.0)
    dist = np.hypot(dx[:, None], (y - params.y_c)[None, :])
    amp = CRACK_MOBILITY * CRACK_ENERGY_RELEASE / (2.0 * l0)
    return np.where(dist <= l0 / 2.0, amp * (1.0 - 2.0 * dist / l0), 0.0)


def _laplacian_periodic(u: np.ndarray, dx: float, dy: float) -> np.ndarray:
    return (np.roll(u, 1, axis=-2) + np.roll(u, -1, axis=-2) - 2.0 * u) / dx**2 + (
        np.roll(u, 1, axis=-1) + np.roll(u, -1, axis=-1) - 2.0 * u
    ) / dy**2


def integrate_diffusion(fields: np.ndarray, m_t: int, diffusivity: float, reaction_rate: float,
                        t_final: float = 1.0, dt: float | None = None) -> np.ndarray:
    """Explicit diffusion with exact exponential reaction decay per step.

    fields: (n, nx, ny) initial conditions on the periodic unit square.
    Returns (n, m_t, nx, ny) snapshots at times k*t_final/m_t, k=1..m_t.
    The linear reaction commutes with diffusion, so applying exp(-r*dt) as an
    integrating factor each step adds no splitting error.
    """
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim != 3:
        raise ValueError(f"expected (n, nx, ny) initial conditions, got shape {fields.shape}")
    if m_t < 1:
        raise ValueError(f"snapshot count must be positive, got {m_t}")
    if diffusivity < 0 or reaction_rate < 0:
        raise ValueError(
            f"diffusivity and reaction rate must be non-negative, got ({diffusivity}, {reaction_rate})"
        )
    if t_final <= 0:
        raise ValueError(f"final time must be positive, got {t_final}")
    n, nx, ny = fields.shape
    dx, dy = 1.0 / nx, 1.0 / ny
    spacing = min(dx, dy)
    interval = t_final / m_t
    if dt is None:
        if diffusivity == 0.0:
            steps_per = 1
        else:
            steps_per = max(1, int(np.ceil(interval * diffusivity / (0.2 * spacing**2))))
        dt = interval / steps_per
    else:
        steps_per = interval / dt
        if abs(steps_per - round(steps_per)) > 1e-9 or dt <= 0:
            raise ValueError(f"dt={dt} does not evenly divide the snapshot interval {interval}")
        steps_per = int(round(steps_per))
    ratio = diffusivity * dt / spacing**2
    if ratio > 0.2 + 1e-12:
        raise ValueError(f"explicit step unstable: diffusivity*dt/dx^2 = {ratio:.4f} exceeds 0.2")

    decay = np.exp(-reaction_rate * dt)
    u = fields.copy()
    out = np.empty((n, m_t, nx, ny))
    for k in range(m_t):
        for _ in range(steps_per):
            u += dt * diffusivity * _laplacian_periodic(u, dx, dy)
            u *= decay
        out[:, k] = u
    return out


@dataclass
class FieldDataset:
    """Normalized input/output field pairs with their scaling metadata.

    inputs: (n, nx*ny) initial conditions; outputs: (n, m_t, nx*ny) snapshot
    trajectories; both min-max normalized with constants taken from the first
    n_train rows only. zeta is the normalized snapshot time grid k/m_t.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    zeta: np.ndarray
    grid: tuple
    n_train: int
    input_range: tuple
    output_range: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]

    @property
    def m_t(self) -> int:
        return self.outputs.shape[1]

    def validate(self):
        n, d = self.inputs.shape
        nx, ny = self.grid
        if d != nx * ny:
            raise ValueError(f"input width {d} does not match grid {self.grid}")
        if self.outputs.shape != (n, self.zeta.size, d):
            raise ValueError(
                f"outputs shape {self.outputs.shape} inconsistent with inputs {self.inputs.shape}"
            )
        if not 1 <= self.n_train <= n:
            raise ValueError(f"n_train={self.n_train} outside [1, {n}]")
        if np.any(self.zeta <= 0) or np.any(self.zeta > 1) or np.any(np.diff(self.zeta) <= 0):
            raise ValueError("zeta must be strictly increasing within (0, 1]")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValueError("dataset contains non-finite values")
        eps = 1e-12
        tr_in = self.inputs[: self.n_train]
        tr_out = self.outputs[: self.n_train]
        if tr_in.min() < -eps or tr_in.max() > 1 + eps or tr_out.min() < -eps or tr_out.max() > 1 + eps:
            raise ValueError("training rows must be normalized to [0, 1]")

    def train_inputs(self) -> np.ndarray:
        return self.inputs[: self.n_train]

    def train_outputs(self) -> np.ndarray:
        return self.outputs[: self.n_train]

    def test_inputs(self) -> np.ndarray:
        return self.inputs[self.n_train :]

    def test_outputs(self) -> np.ndarray:
        return self.outputs[self.n_train :]

    def denormalize_outputs(self, arr: np.ndarray) -> np.ndarray:
        lo, hi = self.output_range
        return lo + (hi - lo) * arr

    def denormalize_inputs(self, arr: np.ndarray) -> np.ndarray:
        lo, hi = self.input_range
        return lo + (hi - lo) * arr

    def save(self, path):
        manifest = {
            "kind": "dataset",
            "grid": f"{self.grid[0]}x{self.grid[1]}",
            "n_train": str(self.n_train),
            "input_lo": repr(self.input_range[0]),
            "input_hi": repr(self.input_range[1]),
            "output_lo": repr(self.output_range[0]),
            "output_hi": repr(self.output_range[1]),
        }
        manifest.update({k: str(v) for k, v in self.meta.items()})
        write_container(
            path,
            {"inputs": self.inputs, "outputs": self.outputs, "zeta": self.zeta},
            manifest,
        )

    @classmethod
    def load(cls, path) -> "FieldDataset":
        tensors, manifest = read_container(path)
        if manifest.get("kind") != "dataset":
            raise ValueError(f"container at {path} is not a dataset (kind={manifest.get('kind')})")
        nx, ny = (int(v) for v in manifest["grid"].split("x"))
        known = {"kind", "grid", "n_train", "input_lo", "input_hi", "output_lo", "output_hi"}
        meta = {k: v for k, v in manifest.items() if k not in known}
        return cls(
            inputs=tensors["inputs"],
            outputs=tensors["outputs"],
            zeta=tensors["zeta"],
            grid=(nx, ny),
            n_train=int(manifest["n_train"]),
            input_range=(float(manifest["input_lo"]), float(manifest["input_hi"])),
            output_range=(float(manifest["output_lo"]), float(manifest["output_hi"])),
            meta=meta,
        )


def _minmax_normalize(train_part: np.ndarray, full: np.ndarray):
    lo = float(train_part.min())
    hi = float(train_part.max())
    span = hi - lo
    if span == 0.0:
        span = 1.0
    return (full - lo) / span, (lo, lo + span)


def generate_diffusion_dataset(grf: GrfConfig, n_samples: int, m_t: int, diffusivity: float = 0.01,
                               reaction_rate: float = 1.0, t_final: float = 1.0,
                               train_fraction: float = 0.9, dt: float | None = None) -> FieldDataset:
    """Sample GRF initial conditions, roll them out, normalize, and split."""
    if n_samples < 2:
        raise ValueError(f"need at least 2 samples, got {n_samples}")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    basis = build_kle(grf)
    ics = sample_fields(basis, n_samples)
    traj = integrate_diffusion(ics, m_t, diffusivity, reaction_rate, t_final, dt)
    n_train = min(max(int(round(train_fraction * n_samples)), 1), n_samples - 1)
    inputs = ics.reshape(n_samples, -1)
    outputs = traj.reshape(n_samples, m_t, -1)
    inputs, input_range = _minmax_normalize(inputs[:n_train], inputs)
    outputs, output_range = _minmax_normalize(outputs[:n_train], outputs)
    zeta = np.arange(1, m_t + 1) / m_t
    meta = {
        "diffusivity": repr(diffusivity),
        "reaction_rate": repr(reaction_rate),
        "t_final": repr(t_final),
        "grf_seed": str(grf.seed),
    }
    return FieldDataset(
        inputs=inputs,
        outputs=outputs,
        zeta=zeta,
        grid=grf.grid,
        n_train=n_train,
        input_range=input_range,
        output_range=output_range,
        meta=meta,
    )
