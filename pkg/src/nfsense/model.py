"""Deterministic channel geometry, steering vectors, and stacked linear models.

Geometry convention: the uplink array is a uniform linear array along the
y-axis with its reference (phase center) at the origin.  Antenna n (1-based,
n = 1..N) sits at (0, offset_n * spacing) with offset_n = (2n - N - 1) / 2,
so offsets are symmetric around zero in half-spacing units.  A source at
distance d and angle-of-arrival theta (radians, measured from the x-axis)
is located at (d*cos(theta), d*sin(theta)).

All lengths are meters, frequencies Hz, angles radians.  Subcarrier k runs
1..K with f_k = carrier + k * spacing; the pilot symbol is fixed to 1.

Internal tensor layouts:
    observations  y      -- (N, K, T) complex
    amplitude     alpha  -- (N, L, T) complex
    per-path resp h      -- (N, L, K) complex
    visibility    b      -- (N, L)    {0, 1}

The three flattened views of the same N*K*T observation scalars:
    alpha-form: index t*(K*N) + k*N + n   (snapshot slowest, antenna fastest)
    h-form:     index k*(T*N) + t*N + n
    g-form:     identical ordering to the h-form
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s, matches the half-wavelength spacing 0.005 m at 30 GHz

STACKING_TAGS = ("alpha-form", "h-form", "g-form")


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array: element count and spacing in meters."""

    n_antennas: int
    spacing: float

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError(f"need at least 2 antennas, got {self.n_antennas}")
        if self.spacing <= 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")

    @property
    def offsets(self) -> np.ndarray:
        """Centered element offsets (2n - N - 1)/2 for n = 1..N, dimensionless."""
        n = np.arange(1, self.n_antennas + 1)
        return (2 * n - self.n_antennas - 1) / 2.0

    @property
    def aperture(self) -> float:
        """Physical aperture D = (N - 1) * spacing in meters."""
        return (self.n_antennas - 1) * self.spacing

    def fraunhofer_distance(self, wavelength: float) -> float:
        """Near/far-field boundary 2 D^2 / wavelength in meters."""
        return 2.0 * self.aperture**2 / wavelength


@dataclass(frozen=True)
class OfdmConfig:
    """Pilot numerology: carrier, K subcarriers, T snapshots."""

    carrier_hz: float
    n_subcarriers: int
    subcarrier_spacing_hz: float
    n_snapshots: int
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ValueError("carrier frequency must be positive")
        if self.n_subcarriers < 1 or self.n_snapshots < 1:
            raise ValueError("need at least one subcarrier and one snapshot")
        if self.subcarrier_spacing_hz <= 0:
            raise ValueError("subcarrier spacing must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        """Subcarrier frequencies f_k = carrier + k * spacing, k = 1..K."""
        k = np.arange(1, self.n_subcarriers + 1)
        return self.carrier_hz + k * self.subcarrier_spacing_hz

    @property
    def wavelength(self) -> float:
        return self.speed_of_light / self.carrier_hz


@dataclass(frozen=True)
class PathParams:
    """One propagation path: complex gain and source geometry.

    ``distance`` is scatterer-to-reference distance d (the direct source for
    the line-of-sight path), ``ue_distance`` the UE-to-scatterer leg, zero
    for line of sight.
    """

    index: int
    gain: complex
    distance: float
    aoa: float
    ue_distance: float = 0.0

    def __post_init__(self):
        if self.distance <= 0:
            raise ValueError(f"path {self.index}: distance must be positive")
        if not -np.pi / 2 < self.aoa < np.pi / 2:
            raise ValueError(f"path {self.index}: AoA must lie in (-pi/2, pi/2)")
        if self.ue_distance < 0:
            raise ValueError(f"path {self.index}: ue_distance must be >= 0")
        if self.index == 0 and self.ue_distance != 0.0:
            raise ValueError("line-of-sight path (index 0) must have ue_distance 0")

    def position(self) -> tuple[float, float]:
        """Scatterer Cartesian coordinates (x, y) in meters."""
        return (self.distance * np.cos(self.aoa), self.distance * np.sin(self.aoa))


@dataclass
class StackedModel:
    """One of the three equivalent linear-model stackings.

    ``matrix`` multiplies the parameter vector of the corresponding block
    (amplitudes, per-path responses, or gains); ``observation`` is the
    matching flattened view of the N*K*T observation scalars when supplied.
    """

    tag: str
    matrix: np.ndarray
    observation: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in STACKING_TAGS:
            raise ValueError(f"unknown stacking tag {self.tag!r}")


def antenna_distance(geom: ArrayGeometry, distance: float, aoa: float, n) -> float | np.ndarray:
    """Source-to-antenna-n distance, n 1-based (scalar or array of indices).

    Evaluates sqrt(d^2 - 2 d delta_n spacing sin(aoa) + delta_n^2 spacing^2).
    """
    if distance <= 0:
        raise ValueError("source distance must be positive")
    n = np.asarray(n)
    if np.any(n < 1) or np.any(n > geom.n_antennas):
        raise ValueError("antenna index out of range")
    delta = (2 * n - geom.n_antennas - 1) / 2.0
    off = delta * geom.spacing
    return np.sqrt(distance**2 - 2.0 * distance * off * np.sin(aoa) + off**2)


def antenna_distances(geom: ArrayGeometry, distance: float, aoa: float) -> np.ndarray:
    """Distances from a source at (distance, aoa) to every antenna, shape (N,)."""
    return antenna_distance(geom, distance, aoa, np.arange(1, geom.n_antennas + 1))


def steering_vector(geom: ArrayGeometry, ofdm: OfdmConfig, path: PathParams, k: int) -> np.ndarray:
    """Per-path array response at subcarrier k (1-based), shape (N,).

    Entry n is exp(-j 2 pi f_k ue_distance / c) * (d / d_n)
    * exp(-j 2 pi f_k d_n / c).
    """
    if not 1 <= k <= ofdm.n_subcarriers:
        raise ValueError(f"subcarrier index {k} outside 1..{ofdm.n_subcarriers}")
    f_k = ofdm.carrier_hz + k * ofdm.subcarrier_spacing_hz
    d_n = antenna_distances(geom, path.distance, path.aoa)
    phase = -2.0 * np.pi * f_k * (d_n + path.ue_distance) / ofdm.speed_of_light
    return (path.distance / d_n) * np.exp(1j * phase)


def path_response(geom: ArrayGeometry, ofdm: OfdmConfig, path: PathParams) -> np.ndarray:
    """Array response for all subcarriers at once, shape (N, K)."""
    d_n = antenna_distances(geom, path.distance, path.aoa)
    freqs = ofdm.frequencies
    phase = -2.0 * np.pi * np.outer(d_n + path.ue_distance, freqs) / ofdm.speed_of_light
    return (path.distance / d_n)[:, None] * np.exp(1j * phase)


def response_field(geom: ArrayGeometry, ofdm: OfdmConfig, paths) -> np.ndarray:
    """Stack per-path responses into the (N, L, K) tensor."""
    return np.stack([path_response(geom, ofdm, p) for p in paths], axis=1)


def response_bank(geom: ArrayGeometry, ofdm: OfdmConfig, aoas, distances,
                  dtype=np.complex128) -> np.ndarray:
    """Array responses on an (aoa, distance) grid with zero UE leg.

    Returns shape (len(aoas), len(distances), N, K).  Used for matched-filter
    scans and likelihood grids; the UE-leg phase factor is a per-subcarrier
    scalar and is applied separately where needed.
    """
    aoas = np.asarray(aoas, dtype=float)
    distances = np.asarray(distances, dtype=float)
    off = geom.offsets * geom.spacing
    freqs = ofdm.frequencies
    out = np.empty((aoas.size, distances.size, geom.n_antennas, freqs.size), dtype=dtype)
    for i, theta in enumerate(aoas):
        d = distances[:, None]
        d_n = np.sqrt(d**2 - 2.0 * d * off[None, :] * np.sin(theta) + off[None, :] ** 2)
        phase = -2.0 * np.pi / ofdm.speed_of_light * d_n[:, :, None] * freqs[None, None, :]
        out[i] = ((d / d_n)[:, :, None] * np.exp(1j * phase)).astype(dtype)
    return out


def gain_vector(paths) -> np.ndarray:
    return np.array([p.gain for p in paths], dtype=complex)


def model_prediction(g: np.ndarray, alpha: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Noiseless observation tensor sum_l g_l * alpha[:, l, t] * h[:, l, k], shape (N, K, T)."""
    return np.einsum("l,nlt,nlk->nkt", g, alpha, h)


# --- flattened views -------------------------------------------------------

def stack_observations(y: np.ndarray, tag: str) -> np.ndarray:
    """Flatten the (N, K, T) observation tensor in the given stacking order."""
    if tag == "alpha-form":
        return y.transpose(2, 1, 0).reshape(-1)
    if tag in ("h-form", "g-form"):
        return y.transpose(1, 2, 0).reshape(-1)
    raise ValueError(f"unknown stacking tag {tag!r}")


def stack_amplitudes(alpha: np.ndarray) -> np.ndarray:
    """Flatten the (N, L, T) amplitude tensor into the alpha-form parameter vector."""
    return alpha.transpose(2, 1, 0).reshape(-1)


def unstack_amplitudes(vec: np.ndarray, n_antennas: int, n_paths: int, n_snapshots: int) -> np.ndarray:
    """Inverse of :func:`stack_amplitudes`, back to (N, L, T)."""
    return vec.reshape(n_snapshots, n_paths, n_antennas).transpose(2, 1, 0)


def stack_responses(h: np.ndarray) -> np.ndarray:
    """Flatten the (N, L, K) response tensor into the h-form parameter vector."""
    return h.transpose(2, 1, 0).reshape(-1)


def unstack_responses(vec: np.ndarray, n_antennas: int, n_paths: int, n_subcarriers: int) -> np.ndarray:
    """Inverse of :func:`stack_responses`, back to (N, L, K)."""
    return vec.reshape(n_subcarriers, n_paths, n_antennas).transpose(2, 1, 0)


# --- stacked regressor matrices -------------------------------------------

def build_stacked_model(tag: str, paths, sns_field, geom: ArrayGeometry, ofdm: OfdmConfig,
                        y: np.ndarray | None = None) -> StackedModel:
    """Assemble one of the three stacked linear models from scene quantities.

    ``sns_field`` is any object with an (N, L, T) complex attribute ``alpha``
    or the bare tensor itself.  The alpha-form regressor maps the amplitude
    vector, the h-form the response vector, and the g-form the gain vector
    onto the flattened observations.
    """
    alpha = getattr(sns_field, "alpha", sns_field)
    alpha = np.asarray(alpha, dtype=complex)
    n_ant, n_paths, n_snap = alpha.shape
    if n_ant != geom.n_antennas or n_snap != ofdm.n_snapshots or n_paths != len(paths):
        raise ValueError(
            f"amplitude field shape {alpha.shape} inconsistent with "
            f"N={geom.n_antennas}, L={len(paths)}, T={ofdm.n_snapshots}")
    h = response_field(geom, ofdm, paths)
    g = gain_vector(paths)
    matrix = _stacked_matrix(tag, g, alpha, h)
    obs = stack_observations(np.asarray(y, dtype=complex), tag) if y is not None else None
    return StackedModel(tag=tag, matrix=matrix, observation=obs)


def _stacked_matrix(tag: str, g: np.ndarray, alpha: np.ndarray, h: np.ndarray) -> np.ndarray:
    n_ant, n_paths, n_snap = alpha.shape
    n_sub = h.shape[2]
    n_obs = n_ant * n_sub * n_snap
    if tag == "alpha-form":
        # I_T kron ([h_1..h_K]^T khatri-rao (g^T kron I_N)): entry
        # (t*K*N + k*N + n, t*L*N + l*N + n) = g_l h[n,l,k]
        mat = np.zeros((n_obs, n_ant * n_paths * n_snap), dtype=complex)
        rows = np.arange(n_ant)
        for t in range(n_snap):
            for k in range(n_sub):
                for l in range(n_paths):
                    r = t * n_sub * n_ant + k * n_ant + rows
                    c = t * n_paths * n_ant + l * n_ant + rows
                    mat[r, c] = g[l] * h[:, l, k]
        return mat
    if tag == "h-form":
        # I_K kron ([alpha_1..alpha_T]^T khatri-rao (g^T kron I_N)): entry
        # (k*T*N + t*N + n, k*L*N + l*N + n) = g_l alpha[n,l,t]
        mat = np.zeros((n_obs, n_ant * n_paths * n_sub), dtype=complex)
        rows = np.arange(n_ant)
        for k in range(n_sub):
            for t in range(n_snap):
                for l in range(n_paths):
                    r = k * n_snap * n_ant + t * n_ant + rows
                    c = k * n_paths * n_ant + l * n_ant + rows
                    mat[r, c] = g[l] * alpha[:, l, t]
        return mat
    if tag == "g-form":
        # rows (k*T*N + t*N + n, l) = alpha[n,l,t] * h[n,l,k]
        blocks = np.einsum("nlt,nlk->ktnl", alpha, h)
        return blocks.reshape(n_obs, n_paths)
    raise ValueError(f"unknown stacking tag {tag!r}")


def permutation_between_stackings(tag_a: str, tag_b: str, dims) -> np.ndarray:
    """Index permutation p such that stack_b = stack_a[p].

    ``dims`` is (N, K, T).  The permutation only reorders the shared N*K*T
    scalars; composing a->b with b->a gives the identity.
    """
    n_ant, n_sub, n_snap = dims
    for tag in (tag_a, tag_b):
        if tag not in STACKING_TAGS:
            raise ValueError(f"unknown stacking tag {tag!r}")

    def flat_index(tag, t, k, n):
        if tag == "alpha-form":
            return t * n_sub * n_ant + k * n_ant + n
        return k * n_snap * n_ant + t * n_ant + n

    size = n_ant * n_sub * n_snap
    perm = np.empty(size, dtype=np.intp)
    for t in range(n_snap):
        for k in range(n_sub):
            base_a = flat_index(tag_a, t, k, 0)
            base_b = flat_index(tag_b, t, k, 0)
            perm[base_b + np.arange(n_ant)] = base_a + np.arange(n_ant)
    return perm
