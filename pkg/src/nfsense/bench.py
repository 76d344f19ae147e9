"""Monte-Carlo harness: proposed estimator vs. fixed-amplitude baselines.

All methods inside one trial consume the identical observation realization;
trials are seeded independently so runs are reproducible and aggregation is
order-free.  Baselines skip the alternating loop entirely: they fix the
amplitudes (all-visible, a random visibility guess, or the ground truth)
and run the same least-squares + likelihood-fit pipeline.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .ao import AOConfig, KnownConstants, default_init, run_ao
from .extract import EstimationResult, MleGrid, PathEstimate, extract_result, fit_scene_paths
from .ising import IsingParams
from .synth import ObservationSet, SceneConfig, set_snr, synthesize

BASELINE_KINDS = ("no-sns", "random-sns", "known-sns")
ALL_METHODS = ("proposed",) + BASELINE_KINDS

CSV_HEADER = "snr_db,method,metric,value,trials"


def run_baseline(kind: str, obs: ObservationSet, constants: KnownConstants,
                 grid: MleGrid, rng: np.random.Generator | None = None,
                 rounds: int = 2) -> EstimationResult:
    """Least-squares + likelihood-fit estimate with fixed amplitudes.

    ``no-sns`` assumes every antenna visible, ``random-sns`` guesses an iid
    fair-coin visibility per antenna/path and uses the conditional means
    (1 visible, 0 blocked), ``known-sns`` uses the ground-truth amplitude
    realization.  No visibility estimation is performed.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}")
    n_ant = constants.geom.n_antennas
    n_paths, n_snap = constants.n_paths, constants.ofdm.n_snapshots
    if kind == "no-sns":
        alpha = np.ones((n_ant, n_paths, n_snap), dtype=complex)
    elif kind == "random-sns":
        if rng is None:
            rng = np.random.default_rng(obs.scene.seed)
        guess = rng.integers(0, 2, size=(n_ant, n_paths)).astype(float)
        alpha = np.repeat(guess[:, :, None], n_snap, axis=2).astype(complex)
    else:
        alpha = obs.sns.alpha
    fits, gains, _ = fit_scene_paths(obs.y, alpha, constants.geom, constants.ofdm,
                                     grid, constants.noise_variance, rounds=rounds)
    paths = [PathEstimate(aoa=f[2], distance=f[1], ue_distance=f[0], gain=gains[l],
                          fit_residual=f[3]) for l, f in enumerate(fits)]
    return EstimationResult(paths=paths, method=kind)


def run_proposed(obs: ObservationSet, constants: KnownConstants, ising: IsingParams,
                 ao_config: AOConfig, grid: MleGrid, rounds: int = 2):
    """Full pipeline: init, alternating optimization, parameter extraction."""
    state = run_ao(obs, constants, ising, ao_config)
    result = extract_result(obs.y, state, constants.geom, constants.ofdm, grid,
                            constants.noise_variance, rounds=rounds)
    return result, state


def vr_metrics(b_hat: np.ndarray, b_true: np.ndarray) -> tuple[float, float]:
    """(detection rate, false-alarm rate) of a visibility estimate.

    Detection is the fraction of truly blocked antennas reported blocked;
    false alarm the fraction of truly visible antennas reported blocked.
    Vacuous cases (no blocked / no visible entries) count as 1.0 / 0.0.
    """
    b_hat = np.asarray(b_hat)
    b_true = np.asarray(b_true)
    if b_hat.shape != b_true.shape:
        raise ValueError("visibility arrays must have identical shape")
    blocked = b_true == 0
    visible = ~blocked
    detection = float(np.mean(b_hat[blocked] == 0)) if blocked.any() else 1.0
    false_alarm = float(np.mean(b_hat[visible] == 0)) if visible.any() else 0.0
    return detection, false_alarm


def rmse(estimates: np.ndarray, truth: np.ndarray, quantity: str) -> float:
    """Root-mean-square error over trials and paths, associated by path index.

    ``location``: estimates (n_trials, L, 2) Cartesian positions against
    truth (L, 2), error is the Euclidean position offset.  ``gain``:
    estimates (n_trials, L) complex against truth (L,).
    """
    estimates = np.asarray(estimates)
    truth = np.asarray(truth)
    if estimates.shape[0] < 1:
        raise ValueError("need at least one trial")
    if quantity == "location":
        sq = np.sum(np.abs(estimates - truth[None]) ** 2, axis=-1)
    elif quantity == "gain":
        sq = np.abs(estimates - truth[None]) ** 2
    else:
        raise ValueError(f"unknown quantity {quantity!r}")
    return float(np.sqrt(np.mean(sq)))


def _rmse_standard_error(sq_per_trial: np.ndarray, value: float) -> float:
    """Delta-method standard error of an RMSE from per-trial mean squared errors."""
    n = sq_per_trial.shape[0]
    if n < 2 or value == 0:
        return 0.0
    se_mean = float(np.std(sq_per_trial, ddof=1)) / np.sqrt(n)
    return se_mean / (2.0 * value)


@dataclass
class MCReport:
    """Flat metric table: one (snr, method, metric, value, trials) row each."""

    rows: list = field(default_factory=list)
    seeds: list = field(default_factory=list)

    def add(self, snr_db: float, method: str, metric: str, value: float, trials: int):
        self.rows.append((float(snr_db), str(method), str(metric), float(value), int(trials)))

    def value(self, snr_db: float, method: str, metric: str) -> float:
        for row in self.rows:
            if row[0] == snr_db and row[1] == method and row[2] == metric:
                return row[3]
        raise KeyError((snr_db, method, metric))

    def methods(self) -> list:
        seen = []
        for row in self.rows:
            if row[1] not in seen:
                seen.append(row[1])
        return seen

    def snr_points(self) -> list:
        seen = []
        for row in self.rows:
            if row[0] not in seen:
                seen.append(row[0])
        return seen

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for snr, method, metric, value, trials in self.rows:
            buf.write(f"{snr:.10g},{method},{metric},{value:.17g},{trials}\n")
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def from_csv(cls, path) -> "MCReport":
        report = cls()
        with open(path) as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ValueError(f"unexpected report header {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                snr, method, metric, value, trials = line.split(",")
                report.add(float(snr), method, metric, float(value), int(trials))
        return report

    def summary_text(self) -> str:
        lines = [f"trials={self.rows[0][4] if self.rows else 0}"]
        lines.append("seeds=" + ",".join(str(s) for s in self.seeds))
        for snr, method, metric, value, trials in self.rows:
            lines.append(f"{method}.{metric}.snr_{snr:g}={value:.17g}")
        return "\n".join(lines) + "\n"


def trial_seeds(master_seed: int, trials: int) -> list:
    """Independent per-trial seeds derived from one master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(trials)]


def run_campaign(scene: SceneConfig, snr_grid, trials: int, methods, seeds,
                 ising: IsingParams, ao_config: AOConfig, grid: MleGrid,
                 rounds: int = 2, progress=None) -> MCReport:
    """Paired Monte-Carlo sweep over SNR points.

    ``seeds`` is either a master integer or a per-trial seed list of length
    ``trials``.  Within one (snr, trial) cell every method consumes the same
    observation set; the random-visibility baseline draws its guess from a
    stream derived from the trial seed so reruns are byte-identical.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    methods = list(methods)
    for m in methods:
        if m not in ALL_METHODS:
            raise ValueError(f"unknown method {m!r}")
    seed_list = list(seeds) if np.iterable(seeds) else trial_seeds(int(seeds), trials)
    if len(seed_list) != trials:
        raise ValueError("need one seed per trial")

    truth_pos = np.array([p.position() for p in scene.paths])
    truth_gain = np.array([p.gain for p in scene.paths])
    report = MCReport(seeds=list(seed_list))

    for i_snr, snr_db in enumerate(snr_grid):
        scene_snr = set_snr(scene, snr_db)
        constants = KnownConstants.from_scene(scene_snr)
        pos = {m: np.zeros((trials, scene.n_paths, 2)) for m in methods}
        gain = {m: np.zeros((trials, scene.n_paths), dtype=complex) for m in methods}
        det = np.zeros(trials)
        fa = np.zeros(trials)
        iters = np.zeros(trials)
        conv = np.zeros(trials)
        for i_trial in range(trials):
            rng = np.random.default_rng([seed_list[i_trial], i_snr])
            obs = synthesize(scene_snr, rng)
            for method in methods:
                if method == "proposed":
                    result, state = run_proposed(obs, constants, ising, ao_config, grid,
                                                 rounds=rounds)
                    b_hat = np.stack([p.visibility for p in result.paths], axis=1)
                    det[i_trial], fa[i_trial] = vr_metrics(b_hat, obs.vr.b)
                    iters[i_trial] = state.iterations
                    conv[i_trial] = float(state.converged)
                else:
                    rng_b = np.random.default_rng([seed_list[i_trial], i_snr, 7,
                                                   BASELINE_KINDS.index(method)])
                    result = run_baseline(method, obs, constants, grid, rng=rng_b,
                                          rounds=rounds)
                pos[method][i_trial] = result.positions_xy()
                gain[method][i_trial] = result.gains()
            if progress is not None:
                progress(snr_db, i_trial)
        for method in methods:
            loc_sq = np.sum(np.abs(pos[method] - truth_pos[None]) ** 2, axis=-1).mean(axis=1)
            g_sq = (np.abs(gain[method] - truth_gain[None]) ** 2).mean(axis=1)
            loc_rmse = rmse(pos[method], truth_pos, "location")
            g_rmse = rmse(gain[method], truth_gain, "gain")
            report.add(snr_db, method, "location_rmse", loc_rmse, trials)
            report.add(snr_db, method, "location_rmse_se",
                       _rmse_standard_error(loc_sq, loc_rmse), trials)
            report.add(snr_db, method, "gain_rmse", g_rmse, trials)
            report.add(snr_db, method, "gain_rmse_se",
                       _rmse_standard_error(g_sq, g_rmse), trials)
            if method == "proposed":
                report.add(snr_db, method, "vr_detection", float(det.mean()), trials)
                report.add(snr_db, method, "vr_false_alarm", float(fa.mean()), trials)
                report.add(snr_db, method, "ao_iterations_mean", float(iters.mean()), trials)
                report.add(snr_db, method, "ao_converged_rate", float(conv.mean()), trials)
    return report
