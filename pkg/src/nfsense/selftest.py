"""Built-in oracle checks for the CLI selftest mode.

Each check recomputes its expected answer with an independent method
(brute-force enumeration, direct scalar evaluation, or an alternative
closed form) and compares against the library path.
"""

from __future__ import annotations

import itertools

import numpy as np

from .ao import AOConfig, QpProblem, step_alpha, step_b
from .config import parse_config_text, DEFAULT_CONFIG
from .ising import IsingParams, default_chain_params, ising_energy
from .model import (
    ArrayGeometry,
    OfdmConfig,
    PathParams,
    antenna_distance,
    build_stacked_model,
    gain_vector,
    permutation_between_stackings,
    stack_amplitudes,
    stack_observations,
    stack_responses,
    steering_vector,
)
from .synth import SnSField


def _random_scene(rng, n_ant=5, n_sub=3, n_snap=2, n_paths=2):
    geom = ArrayGeometry(n_antennas=n_ant, spacing=0.005)
    ofdm = OfdmConfig(carrier_hz=30e9, n_subcarriers=n_sub,
                      subcarrier_spacing_hz=720e3, n_snapshots=n_snap)
    paths = []
    for l in range(n_paths):
        paths.append(PathParams(index=l, gain=complex(rng.normal(), rng.normal()),
                                distance=float(rng.uniform(3, 20)),
                                aoa=float(rng.uniform(-1.0, 1.0)),
                                ue_distance=0.0 if l == 0 else float(rng.uniform(0, 10))))
    alpha = rng.normal(size=(n_ant, n_paths, n_snap)) + 1j * rng.normal(size=(n_ant, n_paths, n_snap))
    return geom, ofdm, paths, SnSField(alpha=alpha)


def check_antenna_distance() -> tuple[str, bool, str]:
    geom = ArrayGeometry(n_antennas=100, spacing=0.005)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        d = float(rng.uniform(1, 50))
        theta = float(rng.uniform(-1.2, 1.2))
        n = int(rng.integers(1, 101))
        src = np.array([d * np.cos(theta), d * np.sin(theta)])
        ant = np.array([0.0, (2 * n - 101) / 2 * 0.005])
        oracle = float(np.hypot(*(src - ant)))
        got = float(antenna_distance(geom, d, theta, n))
        worst = max(worst, abs(got - oracle) / oracle)
    return ("antenna_distance vs Cartesian oracle", worst < 1e-12, f"max rel err {worst:.2e}")


def check_stackings() -> tuple[str, bool, str]:
    rng = np.random.default_rng(11)
    geom, ofdm, paths, sns = _random_scene(rng)
    n_ant, n_sub, n_snap = geom.n_antennas, ofdm.n_subcarriers, ofdm.n_snapshots
    y = np.zeros((n_ant, n_sub, n_snap), dtype=complex)
    for k in range(n_sub):
        for t in range(n_snap):
            for l, p in enumerate(paths):
                y[:, k, t] += p.gain * sns.alpha[:, l, t] * steering_vector(geom, ofdm, p, k + 1)
    h_field = np.stack([np.stack([steering_vector(geom, ofdm, p, k + 1) for p in paths], axis=0).T
                        for k in range(n_sub)], axis=2)
    worst = 0.0
    scale = float(np.abs(y).max())
    for tag, vec in (("alpha-form", stack_amplitudes(sns.alpha)),
                     ("h-form", stack_responses(h_field)),
                     ("g-form", gain_vector(paths))):
        sm = build_stacked_model(tag, paths, sns, geom, ofdm, y=y)
        worst = max(worst, float(np.abs(sm.matrix @ vec - sm.observation).max()) / scale)
    perm = permutation_between_stackings("alpha-form", "h-form", (n_ant, n_sub, n_snap))
    perm_ok = np.array_equal(stack_observations(y, "alpha-form")[perm],
                             stack_observations(y, "h-form"))
    ok = worst < 1e-12 and perm_ok
    return ("stacked models reproduce the direct observation sum", ok,
            f"max rel err {worst:.2e}, permutation exact: {perm_ok}")


def check_lmmse() -> tuple[str, bool, str]:
    rng = np.random.default_rng(23)
    worst = 0.0
    for _ in range(5):
        m, n = 12, 8
        r = rng.normal(size=(m, n)) + 1j * rng.normal(size=(m, n))
        b = rng.integers(0, 2, size=n).astype(float)
        y = rng.normal(size=m) + 1j * rng.normal(size=m)
        s_n, s_b, s_v = 0.3, 0.02, 1e-3
        got = step_alpha(y, r, b, s_n, s_b, s_v)
        # independent information-form posterior mean
        sig = s_b * (1 - b) + s_v * b
        prec = np.diag(1.0 / sig) + r.conj().T @ r / s_n
        oracle = b + np.linalg.solve(prec, r.conj().T @ (y - r @ b.astype(complex)) / s_n)
        worst = max(worst, float(np.abs(got - oracle).max() / np.abs(oracle).max()))
    return ("LMMSE equals information-form posterior mean", worst < 1e-8,
            f"max rel err {worst:.2e}")


def check_qp() -> tuple[str, bool, str]:
    rng = np.random.default_rng(31)
    config = AOConfig()
    geom4 = ArrayGeometry(n_antennas=4, spacing=0.005)
    ising = default_chain_params(geom4, 1, 1, coupling=0.5, bias=0.0)
    qp = QpProblem.from_amplitudes(np.array([1.0, 1.0, 0.05, 0.02], dtype=complex),
                                   ising, 0.01, 1e-4, config.eta)
    res = step_b(qp, config)
    fixed_ok = np.array_equal(res.rounded, np.array([1.0, 1.0, 0.0, 0.0]))
    gaps = []
    for _ in range(10):
        n = int(rng.integers(4, 13))
        g = ArrayGeometry(n_antennas=n, spacing=0.005)
        prior = default_chain_params(g, 1, 1, coupling=float(rng.uniform(0.2, 2.0)),
                                     bias=float(rng.uniform(-0.5, 0.5)))
        alpha = rng.normal(size=n) + 1j * rng.normal(size=n)
        problem = QpProblem.from_amplitudes(alpha, prior, 0.01, 1e-3, config.eta)
        best = min(problem.binary_objective(np.array(bits, dtype=float))
                   for bits in itertools.product((0.0, 1.0), repeat=n))
        got = step_b(problem, config).objective
        gaps.append(got - best if best == 0 else (got - best) / abs(best))
    worst = max(gaps)
    ok = fixed_ok and worst <= 0.05
    return ("visibility QP matches exhaustive search", ok,
            f"fixed example exact: {fixed_ok}, worst gap {worst:.2%}")


def check_ising() -> tuple[str, bool, str]:
    geom = ArrayGeometry(n_antennas=6, spacing=0.005)
    params = default_chain_params(geom, 1, 1, coupling=1.3, bias=0.4)
    worst = 0.0
    for bits in itertools.product((0.0, 1.0), repeat=6):
        b = np.array(bits)
        s = 2 * b - 1
        edge_sum = sum(-1.3 * s[i] * s[i + 1] for i in range(5)) + 0.4 * s.sum()
        worst = max(worst, abs(ising_energy(params, b) - edge_sum))
    geom10 = ArrayGeometry(n_antennas=10, spacing=0.005)
    params10 = default_chain_params(geom10, 1, 1, coupling=0.7, bias=0.0)
    energies = {bits: ising_energy(params10, np.array(bits))
                for bits in itertools.product((0.0, 1.0), repeat=10)}
    emin = min(energies.values())
    minimizers = {bits for bits, e in energies.items() if abs(e - emin) < 1e-12}
    clustering_ok = minimizers == {(0.0,) * 10, (1.0,) * 10}
    ok = worst < 1e-12 and clustering_ok
    return ("Ising quadratic form equals edge sum; uniform minimizers", ok,
            f"max |diff| {worst:.2e}, minimizers all-zero/all-one: {clustering_ok}")


def check_fraunhofer() -> tuple[str, bool, str]:
    scene, *_ = parse_config_text(DEFAULT_CONFIG)
    value = scene.geom.fraunhofer_distance(scene.ofdm.wavelength)
    ok = abs(value - 49.005) < 1e-6 and all(p.distance < value for p in scene.paths)
    return ("default scene is near-field (Fraunhofer ~ 49 m)", ok, f"2D^2/lambda = {value:.3f} m")


ALL_CHECKS = (check_antenna_distance, check_stackings, check_lmmse, check_qp,
              check_ising, check_fraunhofer)


def run_selftests() -> list:
    """Run every oracle check; returns a list of (name, passed, detail)."""
    return [check() for check in ALL_CHECKS]
