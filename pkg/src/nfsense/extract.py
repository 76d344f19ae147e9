"""Per-path parameter extraction: unpacking, response fitting, and positions.

The distance/angle fit minimizes sum_k || h_hat_k - h_k(d_ue, d, theta) ||^2
over a coarse grid followed by coordinate-wise golden-section polish.  The
UE-leg distance enters only through a per-subcarrier scalar phase, so the
grid factorizes: per (theta, d) cell the d_ue sweep needs only K inner
products.  Any residual common phase left after fitting is folded into the
per-path complex gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ArrayGeometry, OfdmConfig, PathParams, path_response, response_bank

_BANK_CACHE: dict = {}


@dataclass(frozen=True)
class MleGrid:
    """Search ranges for the (aoa, distance, ue-distance) likelihood fit."""

    theta_min_deg: float = -60.0
    theta_max_deg: float = 60.0
    theta_step_deg: float = 1.0
    d_min: float = 1.0
    d_max: float = 60.0
    d_points: int = 200
    due_min: float = 0.0
    due_max: float = 20.0
    due_step: float = 0.25
    polish_sweeps: int = 3
    polish_iters: int = 32

    def __post_init__(self):
        if self.theta_max_deg <= self.theta_min_deg or self.theta_step_deg <= 0:
            raise ValueError("empty aoa range")
        if self.d_max <= self.d_min or self.d_min <= 0 or self.d_points < 2:
            raise ValueError("empty distance range")
        if self.due_max < self.due_min or self.due_min < 0 or self.due_step <= 0:
            raise ValueError("empty ue-distance range")

    @property
    def thetas(self) -> np.ndarray:
        deg = np.arange(self.theta_min_deg, self.theta_max_deg + self.theta_step_deg / 2,
                        self.theta_step_deg)
        return np.deg2rad(deg)

    @property
    def distances(self) -> np.ndarray:
        """Log-spaced distance grid."""
        return np.geomspace(self.d_min, self.d_max, self.d_points)

    @property
    def due_values(self) -> np.ndarray:
        return np.arange(self.due_min, self.due_max + self.due_step / 2, self.due_step)


@dataclass
class PathEstimate:
    """Fitted parameters of one path."""

    aoa: float
    distance: float
    ue_distance: float
    gain: complex
    fit_residual: float
    visibility: np.ndarray | None = None  # (N,) binary, estimators that detect it
    amplitudes: np.ndarray | None = None  # (N, T) complex

    @property
    def position(self) -> tuple[float, float]:
        return (self.distance * math.cos(self.aoa), self.distance * math.sin(self.aoa))


@dataclass
class EstimationResult:
    """Per-path estimates plus run metadata."""

    paths: list
    method: str = "proposed"
    converged: bool | None = None
    iterations: int | None = None

    def positions_xy(self) -> np.ndarray:
        return np.array([p.position for p in self.paths])

    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths])


@dataclass
class UnpackedEstimates:
    """Raw per-path slices of the stacked iterate vectors."""

    h: np.ndarray       # (N, L, K)
    alpha: np.ndarray   # (N, L, T)
    b: np.ndarray       # (N, L) binary, first snapshot replication
    g: np.ndarray       # (L,)


def unpack(ao, dims) -> UnpackedEstimates:
    """Slice per-path blocks out of an AO state's stacked vectors.

    ``dims`` is (N, L, K, T); the response vector slices as
    h[(k-1)*N*L + l*N : ...], amplitudes per snapshot analogously, and the
    indicator comes from the first of its T identical replications.
    """
    n_ant, n_paths, n_sub, n_snap = dims
    h_vec = ao.h_vector
    a_vec = ao.alpha_vector
    b_vec = ao.b_rounded_vector
    if h_vec.size != n_ant * n_paths * n_sub:
        raise ValueError("response vector length does not match dims")
    if a_vec.size != n_ant * n_paths * n_snap:
        raise ValueError("amplitude vector length does not match dims")
    if b_vec.size != n_ant * n_paths * n_snap:
        raise ValueError("indicator vector length does not match dims")
    h = np.empty((n_ant, n_paths, n_sub), dtype=complex)
    for k in range(n_sub):
        for l in range(n_paths):
            h[:, l, k] = h_vec[(k * n_paths + l) * n_ant:(k * n_paths + l + 1) * n_ant]
    alpha = np.empty((n_ant, n_paths, n_snap), dtype=complex)
    for t in range(n_snap):
        for l in range(n_paths):
            alpha[:, l, t] = a_vec[(t * n_paths + l) * n_ant:(t * n_paths + l + 1) * n_ant]
    b = np.empty((n_ant, n_paths))
    for l in range(n_paths):
        b[:, l] = b_vec[l * n_ant:(l + 1) * n_ant].real
    return UnpackedEstimates(h=h, alpha=alpha, b=b, g=ao.g.copy())


# --- likelihood fit ---------------------------------------------------------

def _grid_bank(geom: ArrayGeometry, ofdm: OfdmConfig, grid: MleGrid):
    """Cached single-precision conjugated response bank plus per-cell power sums."""
    key = (geom.n_antennas, geom.spacing, ofdm.carrier_hz, ofdm.n_subcarriers,
           ofdm.subcarrier_spacing_hz, ofdm.speed_of_light,
           grid.theta_min_deg, grid.theta_max_deg, grid.theta_step_deg,
           grid.d_min, grid.d_max, grid.d_points)
    if key not in _BANK_CACHE:
        if len(_BANK_CACHE) >= 2:
            _BANK_CACHE.pop(next(iter(_BANK_CACHE)))
        bank = response_bank(geom, ofdm, grid.thetas, grid.distances, dtype=np.complex64)
        power = np.sum(np.abs(bank) ** 2, axis=2).sum(axis=-1)  # (n_theta, n_d)
        np.conjugate(bank, out=bank)
        _BANK_CACHE[key] = (bank, power)
    return _BANK_CACHE[key]


def _fit_objective(h_hat: np.ndarray, geom: ArrayGeometry, ofdm: OfdmConfig,
                   due: float, d: float, theta: float) -> float:
    """Phase-folded fit mismatch sum_k ||h_hat_k - e^{j psi} h_k(due, d, theta)||^2.

    The common phase psi is the analytic minimizer (it belongs to the path
    gain, which is refit afterwards); without the fold the mismatch would
    oscillate with the carrier phase at millimeter scale in d and be
    unsearchable on any practical grid.
    """
    model = path_response(geom, ofdm, PathParams(index=1, gain=1.0, distance=d,
                                                 aoa=theta, ue_distance=due))
    cross = complex(np.vdot(model, h_hat))
    value = float(np.vdot(h_hat, h_hat).real + np.vdot(model, model).real
                  - 2.0 * abs(cross))
    return max(value, 0.0)


def _golden_min(fun, lo: float, hi: float, n_iter: int):
    """Golden-section minimization on [lo, hi]; returns the best point seen."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    best_x, best_f = (c, fc) if fc <= fd else (d, fd)
    for _ in range(n_iter):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        if fc < best_f:
            best_x, best_f = c, fc
        if fd < best_f:
            best_x, best_f = d, fd
    return best_x, best_f


def _polish(h_hat, geom, ofdm, grid: MleGrid, due, d, theta, value):
    """Coordinate-wise golden-section refinement around a grid winner."""
    d_ratio = (grid.d_max / grid.d_min) ** (1.0 / (grid.d_points - 1))
    theta_cell = math.radians(grid.theta_step_deg)
    for _ in range(grid.polish_sweeps):
        lo = max(grid.due_min, due - grid.due_step)
        hi = min(grid.due_max, due + grid.due_step)
        x, f = _golden_min(lambda u: _fit_objective(h_hat, geom, ofdm, u, d, theta),
                           lo, hi, grid.polish_iters)
        if f < value:
            due, value = x, f
        lo, hi = d / d_ratio, min(grid.d_max, d * d_ratio)
        lo = max(grid.d_min, lo)
        x, f = _golden_min(lambda dd: _fit_objective(h_hat, geom, ofdm, due, dd, theta),
                           lo, hi, grid.polish_iters)
        if f < value:
            d, value = x, f
        lo = max(math.radians(grid.theta_min_deg), theta - theta_cell)
        hi = min(math.radians(grid.theta_max_deg), theta + theta_cell)
        x, f = _golden_min(lambda th: _fit_objective(h_hat, geom, ofdm, due, d, th),
                           lo, hi, grid.polish_iters)
        if f < value:
            theta, value = x, f
    return due, d, theta, value


def _snap_total_phase(h_hat, geom, ofdm, due, d, theta):
    """Align the model's carrier phase to the estimate within one wavelength.

    The phase-folded fit leaves the total propagation length undetermined
    modulo a wavelength; shifting the UE leg by the sub-wavelength offset
    that minimizes the unfolded mismatch pins the absolute phase, so the
    subsequently refit complex gain carries a meaningful phase (an integer
    wavelength of residual length error rotates the gain by a full turn).
    """
    lam = ofdm.speed_of_light / ofdm.carrier_hz

    def raw(u):
        model = path_response(geom, ofdm, PathParams(index=1, gain=1.0, distance=d,
                                                     aoa=theta, ue_distance=u))
        diff = h_hat - model
        return float(np.vdot(diff, diff).real)

    lo = max(0.0, due - lam / 2)
    x, _ = _golden_min(raw, lo, lo + lam, 40)
    return x


def fit_path(h_hat: np.ndarray, geom: ArrayGeometry, ofdm: OfdmConfig,
             grid: MleGrid) -> tuple[float, float, float, float]:
    """Fit (ue_distance, distance, aoa) to a per-path response estimate.

    ``h_hat`` has shape (N, K).  Returns (due, d, theta, residual) where the
    residual is the exact objective at the returned point; it never exceeds
    the best coarse-grid value.
    """
    h_hat = np.asarray(h_hat, dtype=complex)
    if h_hat.shape != (geom.n_antennas, ofdm.n_subcarriers):
        raise ValueError(f"response estimate must be (N, K), got {h_hat.shape}")
    bank_conj, power = _grid_bank(geom, ofdm, grid)
    thetas, distances, dues = grid.thetas, grid.distances, grid.due_values
    n_cells = thetas.size * distances.size

    h32 = h_hat.astype(np.complex64)
    corr = np.empty((n_cells, ofdm.n_subcarriers), dtype=np.complex64)
    flat_bank = bank_conj.reshape(n_cells, geom.n_antennas, ofdm.n_subcarriers)
    for k in range(ofdm.n_subcarriers):
        corr[:, k] = flat_bank[:, :, k] @ h32[:, k]
    h_power = float(np.vdot(h_hat, h_hat).real)
    phase = np.exp(2j * np.pi / ofdm.speed_of_light
                   * np.outer(dues, ofdm.frequencies)).astype(np.complex64)
    cross = np.abs(corr @ phase.T)  # (n_theta*n_d, n_due), phase-folded
    obj = (h_power + power.reshape(-1, 1)) - 2.0 * cross
    flat = int(np.argmin(obj))
    cell, iu = divmod(flat, dues.size)
    it, idx = divmod(cell, distances.size)
    due, d, theta = float(dues[iu]), float(distances[idx]), float(thetas[it])
    value = _fit_objective(h_hat, geom, ofdm, due, d, theta)
    due, d, theta, value = _polish(h_hat, geom, ofdm, grid, due, d, theta, value)
    due = _snap_total_phase(h_hat, geom, ofdm, due, d, theta)
    value = _fit_objective(h_hat, geom, ofdm, due, d, theta)
    return due, d, theta, value


def positions(result: EstimationResult) -> list:
    """Cartesian scatterer positions (x, y) = (d cos aoa, d sin aoa) per path."""
    return [p.position for p in result.paths]


# --- shared fitting engine --------------------------------------------------

def estimate_path_response(y: np.ndarray, coeff: np.ndarray,
                           ridge: float) -> np.ndarray:
    """Per-entry scalar LS of the path response given its amplitude coefficients.

    ``y`` is the (N, K, T) path residual, ``coeff`` the (N, T) per-antenna
    gain*amplitude coefficients; ``ridge`` (a noise-power scale) shrinks
    entries with little information toward zero instead of dividing by
    near-zeros.
    """
    num = np.einsum("nt,nkt->nk", coeff.conj(), y)
    den = np.sum(np.abs(coeff) ** 2, axis=1) + ridge
    return num / den[:, None]


def fit_scene_paths(y: np.ndarray, alpha: np.ndarray, geom: ArrayGeometry,
                    ofdm: OfdmConfig, grid: MleGrid, noise_variance: float,
                    rounds: int = 2):
    """Successive per-path response estimation and likelihood fitting.

    Given assumed (or estimated) amplitudes, alternately cancels the other
    paths, re-estimates each path's per-antenna response by scalar least
    squares, fits (d_ue, d, aoa), and refits the complex gain.  Returns
    (fits, gains, h_hats) with fits a list of (due, d, theta, residual).
    """
    n_ant, n_paths, n_snap = alpha.shape
    n_sub = ofdm.n_subcarriers
    ridge = max(noise_variance, 1e-12 * float(np.mean(np.abs(y) ** 2)))
    models = np.zeros((n_ant, n_paths, n_sub), dtype=complex)
    gains = np.zeros(n_paths, dtype=complex)
    fits = [None] * n_paths
    h_hats = np.zeros((n_ant, n_paths, n_sub), dtype=complex)
    for _ in range(rounds):
        for l in range(n_paths):
            others = np.einsum("l,nlt,nlk->nkt", gains, alpha, models) \
                - np.einsum("nt,nk->nkt", gains[l] * alpha[:, l, :], models[:, l, :])
            res = y - others
            coeff = gains[l] * alpha[:, l, :] if gains[l] != 0 else alpha[:, l, :]
            h_hat = estimate_path_response(res, coeff, ridge)
            due, d, theta, value = fit_path(h_hat, geom, ofdm, grid)
            model = path_response(geom, ofdm, PathParams(index=1, gain=1.0, distance=d,
                                                         aoa=theta, ue_distance=due))
            c = np.einsum("nt,nk->nkt", alpha[:, l, :], model)
            den = float(np.vdot(c, c).real)
            gains[l] = complex(np.vdot(c, res) / den) if den > 0 else 0.0
            models[:, l, :] = model
            fits[l] = (due, d, theta, value)
            h_hats[:, l, :] = h_hat
    return fits, gains, h_hats


def extract_result(y: np.ndarray, ao, geom: ArrayGeometry, ofdm: OfdmConfig,
                   grid: MleGrid, noise_variance: float, rounds: int = 2) -> EstimationResult:
    """Turn a finished alternating-optimization state into per-path estimates.

    Uses the estimated amplitudes for path cancellation; the final gains are
    refit against the fitted parametric responses, which folds any residual
    common phase into the gain.
    """
    n_ant, n_paths, n_snap = ao.alpha.shape
    dims = (n_ant, n_paths, ao.h.shape[2], n_snap)
    unpacked = unpack(ao, dims)
    fits, gains, _ = fit_scene_paths(y, unpacked.alpha, geom, ofdm, grid,
                                     noise_variance, rounds=rounds)
    paths = []
    for l in range(n_paths):
        due, d, theta, value = fits[l]
        paths.append(PathEstimate(aoa=theta, distance=d, ue_distance=due,
                                  gain=gains[l], fit_residual=value,
                                  visibility=unpacked.b[:, l].copy(),
                                  amplitudes=unpacked.alpha[:, l, :].copy()))
    return EstimationResult(paths=paths, method="proposed",
                            converged=ao.converged, iterations=ao.iterations)
