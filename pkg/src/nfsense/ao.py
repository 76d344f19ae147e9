"""Alternating-optimization estimator for gains, responses, amplitudes, and visibility.

One cycle updates, in order: gains by least squares on the g-form stacking,
per-path responses by least squares on the h-form stacking, amplitudes by
the LMMSE (posterior-mean) rule on the alpha-form stacking, and the
visibility indicator by a box-relaxed binary quadratic program.  The total
objective is

    f1 + f2 + f3 = ||y - R w||^2 / noise_var + ||Q^{-1/2}(alpha - b)||^2
                   + ising_energy(b)

evaluated with f1 in the alpha-form stacking; the loop stops when the
relative objective change falls below the tolerance.

The public ``step_*`` functions operate on explicit stacked matrices.  The
driver uses structured equivalents that solve the same normal equations
block by block (the stackings are block-diagonal per antenna and snapshot),
which is exact and far cheaper at full scene scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ising import IsingParams, ising_energy
from .model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    path_response,
    stack_amplitudes,
    stack_observations,
    stack_responses,
)
from .synth import ObservationSet, SceneConfig


class SingularSystemError(np.linalg.LinAlgError):
    """Normal equations are numerically singular and no ridge is allowed."""


@dataclass
class AOConfig:
    """Iteration budget, tolerances, and binary-QP settings."""

    max_iterations: int = 50
    tolerance: float = 1.0e-4
    ridge: float = 1.0e-8
    eta: float = 0.05
    rounding_threshold: float = 0.5
    qp_max_inner: int = 300
    qp_rounds: int = 12
    qp_step_tol: float = 1.0e-10
    noise_floor_rel: float = 1.0e-8
    rcond_threshold: float = 1.0e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("need at least one iteration")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if np.any(eta < 0) or np.any(eta > 0.25):
            raise ValueError("eta entries must lie in [0, 0.25]")


@dataclass(frozen=True)
class KnownConstants:
    """Scene quantities the estimator is allowed to know."""

    geom: ArrayGeometry
    ofdm: OfdmConfig
    n_paths: int
    noise_variance: float
    blocked_variance: float
    visible_variance: float

    @classmethod
    def from_scene(cls, scene: SceneConfig) -> "KnownConstants":
        return cls(geom=scene.geom, ofdm=scene.ofdm, n_paths=scene.n_paths,
                   noise_variance=scene.noise_variance,
                   blocked_variance=scene.blocked_variance,
                   visible_variance=scene.visible_variance)


@dataclass
class ObjectiveValue:
    f1: float
    f2: float
    f3: float

    @property
    def total(self) -> float:
        return self.f1 + self.f2 + self.f3

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.f1, self.f2, self.f3, self.total)


@dataclass
class AOState:
    """Current iterates and the objective history of a run.

    Tensor layouts follow :mod:`nfsense.model`; ``b`` holds the relaxed
    box-constrained indicator (tied across snapshots, shape (N, L)) and
    ``b_rounded`` its thresholded binary copy.
    """

    g: np.ndarray
    h: np.ndarray
    alpha: np.ndarray
    b: np.ndarray
    b_rounded: np.ndarray
    objective_history: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    b_step_increases: list = field(default_factory=list)
    ridge_events: list = field(default_factory=list)
    qp_warnings: int = 0
    init_scores: np.ndarray | None = None

    @property
    def n_snapshots(self) -> int:
        return self.alpha.shape[2]

    @property
    def h_vector(self) -> np.ndarray:
        return stack_responses(self.h)

    @property
    def alpha_vector(self) -> np.ndarray:
        return stack_amplitudes(self.alpha)

    @property
    def b_vector(self) -> np.ndarray:
        """Relaxed indicator expanded to length NLT."""
        return np.tile(self.b.T.reshape(-1), self.n_snapshots)

    @property
    def b_rounded_vector(self) -> np.ndarray:
        return np.tile(self.b_rounded.T.reshape(-1), self.n_snapshots)


# --- objective --------------------------------------------------------------

def objective(y: np.ndarray, state: AOState, constants: KnownConstants,
              ising: IsingParams) -> ObjectiveValue:
    """Evaluate (f1, f2, f3) at the current iterates, f1 in the alpha-form."""
    pred = np.einsum("l,nlt,nlk->nkt", state.g, state.alpha, state.h)
    resid = stack_observations(y, "alpha-form") - stack_observations(pred, "alpha-form")
    f1 = float(np.vdot(resid, resid).real) / constants.noise_variance
    b_exp = state.b_vector
    q = constants.blocked_variance * (1.0 - b_exp) + constants.visible_variance * b_exp
    diff = state.alpha_vector - b_exp
    f2 = float(np.sum(np.abs(diff) ** 2 / q))
    f3 = ising_energy(ising, b_exp)
    return ObjectiveValue(f1=f1, f2=f2, f3=f3)


# --- least-squares blocks ---------------------------------------------------

def _hermitian_solve(a: np.ndarray, rhs: np.ndarray, ridge: float, rcond: float,
                     label: str, events: list | None = None):
    """Solve the normal equations A x = rhs with ridge fallback on ill-conditioning.

    A must be Hermitian positive semidefinite.  Returns the solution; raises
    :class:`SingularSystemError` when A is numerically singular and ridge is
    zero.
    """
    w = np.linalg.eigvalsh(a)
    wmax = float(w[-1])
    ill = wmax <= 0 or float(w[0]) <= wmax * rcond
    if not ill:
        return np.linalg.solve(a, rhs)
    if ridge <= 0 or wmax <= 0:
        raise SingularSystemError(f"{label}: singular normal equations (min/max eig "
                                  f"{w[0]:.3e}/{wmax:.3e}) and no ridge configured")
    if events is not None:
        events.append(label)
    scale = ridge * np.trace(a).real / a.shape[0]
    return np.linalg.solve(a + scale * np.eye(a.shape[0]), rhs)


def step_g(y_bar: np.ndarray, r_bar: np.ndarray, ridge: float = 0.0,
           rcond: float = 1.0e-10) -> np.ndarray:
    """Least-squares gain update g = (R^H R)^-1 R^H y on the g-form stacking."""
    a = r_bar.conj().T @ r_bar
    rhs = r_bar.conj().T @ y_bar
    return _hermitian_solve(a, rhs, ridge, rcond, "step_g")


def step_h(y_tilde: np.ndarray, r_tilde: np.ndarray, ridge: float = 0.0,
           rcond: float = 1.0e-10) -> np.ndarray:
    """Least-squares response update on the h-form stacking."""
    a = r_tilde.conj().T @ r_tilde
    rhs = r_tilde.conj().T @ y_tilde
    return _hermitian_solve(a, rhs, ridge, rcond, "step_h")


def step_alpha(y_breve: np.ndarray, r_breve: np.ndarray, b_expanded: np.ndarray,
               noise_variance: float, blocked_variance: float,
               visible_variance: float) -> np.ndarray:
    """LMMSE amplitude update: posterior mean under the conditional Gaussian prior.

    Prior mean is the expanded indicator, prior covariance the diagonal
    blocked/visible variance mix; the inner matrix is positive definite for
    any positive noise variance.
    """
    b = np.asarray(b_expanded, dtype=float)
    sig = blocked_variance * (1.0 - b) + visible_variance * b
    mu = b.astype(complex)
    innovation = y_breve - r_breve @ mu
    m = (r_breve * sig) @ r_breve.conj().T
    m[np.diag_indices_from(m)] += noise_variance
    return mu + sig * (r_breve.conj().T @ np.linalg.solve(m, innovation))


# --- structured equivalents (block solves of the same normal equations) -----

def _step_g_fast(y, alpha, h, ridge, rcond, events=None):
    p = np.einsum("nlt,nlk->nktl", alpha, h)
    cols = p.reshape(-1, p.shape[-1])
    a = cols.conj().T @ cols
    rhs = cols.conj().T @ y.transpose(0, 2, 1).reshape(-1)
    # rows above are (n, t, k); any consistent order gives the same normal eqs
    return _hermitian_solve(a, rhs, ridge, rcond, "step_g", events)


def _step_h_fast(y, g, alpha, ridge, rcond, events=None):
    """Per-antenna T x L solves: exact h-form least squares."""
    c = np.einsum("l,nlt->ntl", g, alpha)
    gram = np.einsum("ntl,ntm->nlm", c.conj(), c)
    rhs = np.einsum("ntl,nkt->nlk", c.conj(), y)
    w = np.linalg.eigvalsh(gram)
    wmax = float(w.max())
    ill = wmax <= 0 or float(w.min()) <= wmax * rcond
    if ill:
        if ridge <= 0 or wmax <= 0:
            raise SingularSystemError("step_h: singular per-antenna normal equations "
                                      "and no ridge configured")
        if events is not None:
            events.append("step_h")
        n_ant, n_paths = gram.shape[0], gram.shape[1]
        scale = ridge * float(np.trace(gram, axis1=1, axis2=2).sum().real) / (n_ant * n_paths)
        gram = gram + scale * np.eye(n_paths)
    return np.linalg.solve(gram, rhs)


def _step_alpha_fast(y, g, h, b, noise_variance, blocked_variance, visible_variance):
    """Per-antenna K x K LMMSE solves: exact alpha-form posterior mean."""
    n_ant, n_paths, n_sub = h.shape
    c = np.einsum("l,nlk->nkl", g, h)
    sig = blocked_variance * (1.0 - b) + visible_variance * b  # (N, L)
    mu = b.astype(complex)
    m = np.einsum("nkl,nl,nml->nkm", c, sig, c.conj())
    m = m + noise_variance * np.eye(n_sub)
    innovation = y - np.einsum("nkl,nl->nk", c, mu)[:, :, None]
    x = np.linalg.solve(m, innovation)  # (N, K, T)
    corr = np.einsum("nl,nkl,nkt->nlt", sig, c.conj(), x)
    return mu[:, :, None] + corr


# --- visibility QP ----------------------------------------------------------

@dataclass
class QpProblem:
    """Box-relaxed binary QP over the expanded indicator: min 2 b^T E b + r^T b.

    ``r`` decomposes into the amplitude evidence r1, the coupling constant
    r2 = -2 E^T 1, and the bias term r3 = 2 gamma; the near-binary slack
    ``eta`` bounds b_i (1 - b_i) entrywise.
    """

    ising: IsingParams
    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    eta: np.ndarray

    @classmethod
    def from_amplitudes(cls, alpha_vec: np.ndarray, ising: IsingParams,
                        blocked_variance: float, visible_variance: float,
                        eta=0.05) -> "QpProblem":
        alpha_vec = np.asarray(alpha_vec).reshape(-1)
        if alpha_vec.size != ising.size:
            raise ValueError("amplitude vector length does not match N*L*T")
        r1 = (np.abs(alpha_vec - 1.0) ** 2 / visible_variance
              - np.abs(alpha_vec) ** 2 / blocked_variance)
        ones = np.ones(ising.n_antennas * ising.n_paths)
        r2 = np.tile(-2.0 * ising.block_matvec(ones), ising.n_snapshots)
        r3 = 2.0 * ising.bias
        eta_vec = np.broadcast_to(np.asarray(eta, dtype=float), (ising.size,)).copy()
        return cls(ising=ising, r1=r1, r2=r2, r3=r3, eta=eta_vec)

    @property
    def r(self) -> np.ndarray:
        return self.r1 + self.r2 + self.r3

    @property
    def quadratic(self) -> np.ndarray:
        """Assembled E matrix (NLT x NLT)."""
        return self.ising.matrix

    def binary_objective(self, b_vec: np.ndarray) -> float:
        """2 b^T E b + r^T b for an expanded (length NLT) indicator."""
        b_vec = np.asarray(b_vec, dtype=float).reshape(-1)
        chunks = b_vec.reshape(self.ising.n_snapshots, -1)
        quad = sum(2.0 * chunk @ self.ising.block_matvec(chunk) for chunk in chunks)
        return float(quad + self.r @ b_vec)


@dataclass
class QpResult:
    relaxed: np.ndarray
    rounded: np.ndarray
    converged: bool
    objective: float


def _project_eta_band(c: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Push entries out of the forbidden mid-band so c (1 - c) <= eta holds."""
    lo = 0.5 * (1.0 - np.sqrt(np.maximum(1.0 - 4.0 * eta, 0.0)))
    hi = 1.0 - lo
    out = c.copy()
    mid = (out > lo) & (out < hi)
    out[mid] = np.where(out[mid] < 0.5, lo[mid], hi[mid])
    return out


def step_b(qp: QpProblem, config: AOConfig, start: np.ndarray | None = None) -> QpResult:
    """Approximately solve the visibility QP, tied across snapshots.

    Projected gradient on the box with a doubling continuation penalty on
    b (1 - b) enforces near-binariness; the surrogate objective is
    non-increasing within every inner loop (backtracking step size).  Runs
    from a few deterministic starts and keeps the best rounded candidate.
    """
    ising = qp.ising
    n_tied = ising.n_antennas * ising.n_paths
    t = ising.n_snapshots
    r_red = qp.r.reshape(t, n_tied).sum(axis=0)
    eta_red = qp.eta.reshape(t, n_tied).min(axis=0)

    def reduced_objective(c):
        return 2.0 * t * (c @ ising.block_matvec(c)) + r_red @ c

    def reduced_grad(c, mu):
        return 4.0 * t * ising.block_matvec(c) + r_red + mu * t * (1.0 - 2.0 * c)

    # spectral bound on the quadratic part via the max absolute row sum
    row_sum = np.abs(ising.single_snapshot_matrix).sum(axis=1).max()
    lip_quad = 4.0 * t * max(row_sum, 1.0e-12)

    mu_final = 2.0 * (np.abs(r_red).max() / max(t, 1) + 4.0 * row_sum) + 1.0
    mus = [mu_final * 2.0 ** (k - config.qp_rounds + 1) for k in range(config.qp_rounds)]

    starts = [np.zeros(n_tied), np.ones(n_tied), (r_red < 0).astype(float)]
    if start is not None:
        starts.insert(0, np.asarray(start, dtype=float).reshape(-1)[:n_tied].copy())

    best = None
    all_converged = True
    for c0 in starts:
        c = np.clip(c0, 0.0, 1.0)
        converged = True
        for mu in mus:
            step = 1.0 / (lip_quad + 2.0 * mu * t)
            f_cur = reduced_objective(c) + mu * t * np.sum(c * (1.0 - c))
            inner_ok = False
            for _ in range(config.qp_max_inner):
                grad = reduced_grad(c, mu)
                step_k = step
                for _ in range(40):
                    c_new = np.clip(c - step_k * grad, 0.0, 1.0)
                    f_new = reduced_objective(c_new) + mu * t * np.sum(c_new * (1.0 - c_new))
                    if f_new <= f_cur + 1.0e-12 * max(1.0, abs(f_cur)):
                        break
                    step_k *= 0.5
                move = np.abs(c_new - c).max()
                c, f_cur = c_new, min(f_new, f_cur)
                if move < config.qp_step_tol:
                    inner_ok = True
                    break
            converged = converged and inner_ok
        c = _project_eta_band(c, eta_red)
        rounded_red = (c >= config.rounding_threshold).astype(float)
        rounded = np.tile(rounded_red, t)
        obj = qp.binary_objective(rounded)
        if best is None or obj < best.objective - 1.0e-12:
            best = QpResult(relaxed=np.tile(c, t), rounded=rounded,
                            converged=converged, objective=obj)
        all_converged = all_converged and converged
    best.converged = all_converged
    return best


# --- initialization ---------------------------------------------------------

def default_init(obs: ObservationSet | np.ndarray, constants: KnownConstants,
                 ising: IsingParams, config: AOConfig, grid=None) -> AOState:
    """Data-driven starting point for the alternating loop.

    One successive-cancellation pass of the likelihood fit (all antennas
    assumed visible) locates each path and sets the parametric response and
    gain initializers; slots are ordered by detected strength so path
    indices stay stable.  The visibility start comes from a per-antenna
    joint pattern test (see :func:`_blockage_evidence`) smoothed by one QP
    pass, and the amplitude start is that indicator.
    """
    from .extract import MleGrid, fit_scene_paths

    if constants.n_paths < 1:
        raise ValueError("need at least one path")
    y = obs.y if isinstance(obs, ObservationSet) else np.asarray(obs)
    geom, ofdm = constants.geom, constants.ofdm
    n_ant, n_paths = geom.n_antennas, constants.n_paths
    n_sub, n_snap = ofdm.n_subcarriers, ofdm.n_snapshots
    if grid is None:
        grid = MleGrid()
    noise_var = max(constants.noise_variance,
                    config.noise_floor_rel * float(np.mean(np.abs(y) ** 2)), 1e-300)

    alpha_ones = np.ones((n_ant, n_paths, n_snap), dtype=complex)
    fits, gains, _ = fit_scene_paths(y, alpha_ones, geom, ofdm, grid,
                                     noise_var, rounds=1)
    order = np.argsort(-np.abs(gains))  # strongest first, for stable path association
    h0 = np.zeros((n_ant, n_paths, n_sub), dtype=complex)
    scores = np.zeros(n_paths)
    for slot, l in enumerate(order):
        due, d, theta, _ = fits[l]
        h0[:, slot, :] = path_response(geom, ofdm, PathParams(
            index=1, gain=1.0, distance=d, aoa=theta, ue_distance=due))
        scores[slot] = abs(gains[l])

    g0 = _step_g_fast(y, alpha_ones, h0, config.ridge, config.rcond_threshold)

    r_evidence = _blockage_evidence(y, g0, h0, noise_var,
                                    constants.blocked_variance,
                                    constants.visible_variance)
    qp = QpProblem(ising=ising, r1=np.tile(r_evidence.T.reshape(-1), n_snap) / n_snap,
                   r2=np.tile(-2.0 * ising.block_matvec(
                       np.ones(n_ant * n_paths)), n_snap),
                   r3=2.0 * ising.bias,
                   eta=np.broadcast_to(np.asarray(config.eta, dtype=float),
                                       (ising.size,)).copy())
    qp_res = step_b(qp, config)
    b_cur = qp_res.rounded[:n_ant * n_paths].reshape(n_paths, n_ant).T.copy()
    for l in range(n_paths):  # an all-blocked path would zero its regressor
        if not b_cur[:, l].any():
            b_cur[:, l] = 1.0

    alpha0 = np.repeat(b_cur.astype(complex)[:, :, None], n_snap, axis=2)
    return AOState(g=g0, h=h0, alpha=alpha0, b=b_cur.copy(),
                   b_rounded=b_cur.copy(), init_scores=scores)


def _blockage_evidence(y, g, h, noise_var, blocked_var, visible_var):
    """Per-antenna visibility evidence from a joint pattern likelihood test.

    For every antenna, evaluates the marginal negative log-likelihood of
    each of the 2^L on/off path patterns (a blocked path contributes its
    amplitude spread to the effective noise rather than a unit mean) and
    returns, per path, the gap between the best pattern with that path
    blocked and the best with it visible.  Positive entries favor blocked.
    The result feeds the linear term of the visibility QP.
    """
    n_ant, n_paths, n_sub = h.shape
    n_snap = y.shape[2]
    patterns = np.array(np.meshgrid(*([[0.0, 1.0]] * n_paths), indexing="ij"))
    patterns = patterns.reshape(n_paths, -1).T  # (2^L, L)
    pred = np.einsum("pl,l,nlk->pnk", patterns, g, h)
    err = np.sum(np.abs(y[None] - pred[:, :, :, None]) ** 2, axis=(2, 3))  # (2^L, N)
    gain_pow = np.abs(g[None, :] * np.mean(np.abs(h), axis=2)) ** 2  # (N, L) avg taper
    spread = blocked_var * (1.0 - patterns) + visible_var * patterns  # (2^L, L)
    eff_var = noise_var + np.einsum("pl,nl->pn", spread, gain_pow)
    loglik = err / eff_var + n_sub * n_snap * np.log(eff_var)  # (2^L, N)
    evidence = np.zeros((n_ant, n_paths))
    for l in range(n_paths):
        vis = patterns[:, l] == 1.0
        evidence[:, l] = loglik[vis].min(axis=0) - loglik[~vis].min(axis=0)
    return evidence


# --- driver -----------------------------------------------------------------

def run_ao(obs: ObservationSet | np.ndarray, constants: KnownConstants,
           ising: IsingParams, config: AOConfig,
           init: AOState | None = None) -> AOState:
    """Run the alternating loop until the relative-objective test or the budget.

    The noise variance used by the estimator is floored at
    ``noise_floor_rel`` times the mean observed sample power so that
    noise-free scenes stay numerically well posed.
    """
    y = obs.y if isinstance(obs, ObservationSet) else np.asarray(obs)
    floor = config.noise_floor_rel * float(np.mean(np.abs(y) ** 2))
    constants_eff = KnownConstants(
        geom=constants.geom, ofdm=constants.ofdm, n_paths=constants.n_paths,
        noise_variance=max(constants.noise_variance, floor, 1e-300),
        blocked_variance=constants.blocked_variance,
        visible_variance=constants.visible_variance)

    state = init if init is not None else default_init(obs, constants_eff, ising, config)
    n_ant, n_paths = state.b.shape

    def record(iteration, stage):
        val = objective(y, state, constants_eff, ising)
        state.trace.append((iteration, stage, *val.as_tuple()))
        return val

    prev = record(0, "init")
    state.objective_history = [(prev.f1, prev.f2, prev.f3)]

    for i in range(1, config.max_iterations + 1):
        state.g = _step_g_fast(y, state.alpha, state.h, config.ridge,
                               config.rcond_threshold, state.ridge_events)
        record(i, "g")
        state.h = _step_h_fast(y, state.g, state.alpha, config.ridge,
                               config.rcond_threshold, state.ridge_events)
        record(i, "h")
        state.alpha = _step_alpha_fast(y, state.g, state.h, state.b,
                                       constants_eff.noise_variance,
                                       constants_eff.blocked_variance,
                                       constants_eff.visible_variance)
        after_alpha = record(i, "alpha")

        qp = QpProblem.from_amplitudes(state.alpha_vector, ising,
                                       constants_eff.blocked_variance,
                                       constants_eff.visible_variance, config.eta)
        qp_res = step_b(qp, config, start=state.b.T.reshape(-1))
        if not qp_res.converged:
            state.qp_warnings += 1
        state.b = qp_res.relaxed[:n_ant * n_paths].reshape(n_paths, n_ant).T.copy()
        state.b_rounded = qp_res.rounded[:n_ant * n_paths].reshape(n_paths, n_ant).T.copy()
        cur = record(i, "b")
        if cur.total > after_alpha.total + 1e-9 * abs(after_alpha.total):
            state.b_step_increases.append(i)

        state.objective_history.append((cur.f1, cur.f2, cur.f3))
        state.iterations = i
        rel = abs(cur.total - prev.total) / max(abs(prev.total), 1e-300)
        prev = cur
        if rel <= config.tolerance:
            state.converged = True
            break
    return state
