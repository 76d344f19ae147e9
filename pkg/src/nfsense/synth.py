"""Scene generation: blockage patterns, per-antenna amplitudes, noisy observations.

Complex Gaussian convention: CN(mu, v) has total variance v split evenly
between real and imaginary parts.  Every random quantity is drawn from an
explicit ``numpy.random.Generator`` so realizations are reproducible and
independent trials can be seeded separately.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    StackedModel,
    build_stacked_model,
    gain_vector,
    model_prediction,
    response_field,
    stack_observations,
)

BlockedRanges = list[tuple[int, int]]


@dataclass(frozen=True)
class SceneConfig:
    """Full physical scenario: array, numerology, paths, blockage, variances.

    ``blockage[l]`` lists 1-based inclusive antenna index ranges that are
    obstructed for path l.  ``visible_variance`` is the width of the
    near-Dirac amplitude spread for unobstructed antennas and must not
    exceed ``blocked_variance``.
    """

    geom: ArrayGeometry
    ofdm: OfdmConfig
    paths: tuple[PathParams, ...]
    blockage: tuple[BlockedRanges, ...]
    noise_variance: float
    blocked_variance: float = 0.01
    visible_variance: float = 1.0e-4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        object.__setattr__(self, "blockage", tuple(list(r) for r in self.blockage))
        if len(self.blockage) != len(self.paths):
            raise ValueError("need one blockage range list per path")
        if not self.paths:
            raise ValueError("scene must contain at least one path")
        for l, ranges in enumerate(self.blockage):
            for lo, hi in ranges:
                if not (1 <= lo <= hi <= self.geom.n_antennas):
                    raise ValueError(f"path {l}: blocked range ({lo}, {hi}) outside 1..{self.geom.n_antennas}")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be >= 0")
        if self.blocked_variance <= 0 or self.visible_variance <= 0:
            raise ValueError("amplitude variances must be positive")
        if self.visible_variance > self.blocked_variance:
            raise ValueError("visible_variance must not exceed blocked_variance")

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def dims(self) -> tuple[int, int, int]:
        """(N, K, T)."""
        return (self.geom.n_antennas, self.ofdm.n_subcarriers, self.ofdm.n_snapshots)


@dataclass(frozen=True)
class VRIndicator:
    """Per-path binary visibility matrix, shape (N, L), plus snapshot count."""

    b: np.ndarray
    n_snapshots: int

    def __post_init__(self):
        b = np.asarray(self.b)
        if not np.all((b == 0) | (b == 1)):
            raise ValueError("visibility entries must be 0 or 1")
        object.__setattr__(self, "b", b.astype(float))

    @property
    def expanded(self) -> np.ndarray:
        """1_T kron [b^(0); ...; b^(L-1)], length N*L*T."""
        return np.tile(self.b.T.reshape(-1), self.n_snapshots)

    def blocked_indices(self, path: int) -> np.ndarray:
        """1-based antenna indices obstructed for the given path."""
        return np.flatnonzero(self.b[:, path] == 0) + 1


@dataclass(frozen=True)
class SnSField:
    """Per-antenna stochastic amplitude tensor, shape (N, L, T)."""

    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=complex))
        if self.alpha.ndim != 3:
            raise ValueError("amplitude field must be (N, L, T)")


@dataclass(frozen=True)
class ObservationSet:
    """Raw observation tensor plus the ground truth that produced it."""

    y: np.ndarray
    scene: SceneConfig
    sns: SnSField
    vr: VRIndicator
    noise: np.ndarray

    def vector(self, tag: str) -> np.ndarray:
        """Flattened observation view in the given stacking order."""
        return stack_observations(self.y, tag)

    def stacked(self, tag: str) -> StackedModel:
        """Stacked linear model built from the ground-truth scene quantities."""
        return build_stacked_model(tag, self.scene.paths, self.sns, self.scene.geom,
                                   self.scene.ofdm, y=self.y)


def realize_vr(scene: SceneConfig) -> VRIndicator:
    """Deterministic visibility indicator from the configured blocked ranges."""
    n = scene.geom.n_antennas
    b = np.ones((n, scene.n_paths))
    for l, ranges in enumerate(scene.blockage):
        for lo, hi in ranges:
            b[lo - 1:hi, l] = 0.0
    return VRIndicator(b=b, n_snapshots=scene.ofdm.n_snapshots)


def _complex_normal(rng: np.random.Generator, mean, variance, size) -> np.ndarray:
    scale = np.sqrt(np.broadcast_to(variance, size) / 2.0)
    return mean + rng.normal(0.0, 1.0, size) * scale + 1j * rng.normal(0.0, 1.0, size) * scale


def realize_sns(scene: SceneConfig, vr: VRIndicator, rng: np.random.Generator) -> SnSField:
    """Draw amplitudes: CN(1, visible_variance) in the VR, CN(0, blocked_variance) outside.

    Draws are independent across antennas, paths, and snapshots; the
    visibility indicator itself is constant over snapshots.
    """
    n, k, t = scene.dims
    l = scene.n_paths
    mask = vr.b[:, :, None]  # (N, L, 1) broadcast over snapshots
    variance = np.where(mask == 1.0, scene.visible_variance, scene.blocked_variance)
    alpha = _complex_normal(rng, mask, variance, (n, l, t))
    return SnSField(alpha=alpha)


def synthesize(scene: SceneConfig, rng: np.random.Generator | None = None) -> ObservationSet:
    """Generate one observation realization with its retained ground truth."""
    if rng is None:
        rng = np.random.default_rng(scene.seed)
    n, k, t = scene.dims
    vr = realize_vr(scene)
    sns = realize_sns(scene, vr, rng)
    h = response_field(scene.geom, scene.ofdm, scene.paths)
    g = gain_vector(scene.paths)
    signal = model_prediction(g, sns.alpha, h)
    noise = _complex_normal(rng, 0.0, scene.noise_variance, (n, k, t))
    return ObservationSet(y=signal + noise, scene=scene, sns=sns, vr=vr, noise=noise)


def mean_signal_power(scene: SceneConfig) -> float:
    """Mean per-sample noiseless signal power with amplitudes at their conditional means.

    Amplitudes are replaced by the visibility indicator (1 in the VR, 0
    outside), which makes the reference power a deterministic function of
    the scene; the result is averaged over all N*K*T samples.
    """
    vr = realize_vr(scene)
    h = response_field(scene.geom, scene.ofdm, scene.paths)
    g = gain_vector(scene.paths)
    signal = np.einsum("l,nl,nlk->nk", g, vr.b, h)
    return float(np.mean(np.abs(signal) ** 2))


def set_snr(scene: SceneConfig, snr_db: float) -> SceneConfig:
    """Return a copy of the scene with noise variance set for the target SNR.

    SNR is defined per complex sample: noise_variance = mean_signal_power /
    10^(snr_db / 10).
    """
    if not np.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    power = mean_signal_power(scene)
    if power <= 0:
        raise ValueError("scene has zero mean signal power; SNR undefined")
    return dataclasses.replace(scene, noise_variance=power / 10.0 ** (snr_db / 10.0))
