"""Ising prior over visibility indicators: clustered-sparsity energy.

The energy of an indicator vector b in {0,1}^(N*L*T) (snapshot-replicated,
path-blocked layout, antenna index fastest) is

    f3(b) = 1/2 s^T E s + gamma^T s,   s = 2 b - 1,

with E = I_T kron blkdiag(E^(0), ..., E^(L-1)) assembled symmetrically so
that the quadratic form equals the unordered edge-sum
sum_{(n,m) in edges} beta_nm s_n s_m within every path block.  Negative
couplings favor equal neighbors, which is what makes blocked/visible runs
contiguous; negative biases favor visibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ArrayGeometry


@dataclass
class IsingParams:
    """Interaction matrices and biases for N antennas, L paths, T snapshots.

    ``couplings`` has shape (L, N, N), symmetric with zero diagonal;
    ``biases`` has shape (L, N).
    """

    couplings: np.ndarray
    biases: np.ndarray
    n_snapshots: int

    def __post_init__(self):
        self.couplings = np.asarray(self.couplings, dtype=float)
        self.biases = np.asarray(self.biases, dtype=float)
        if self.couplings.ndim != 3 or self.couplings.shape[1] != self.couplings.shape[2]:
            raise ValueError("couplings must be (L, N, N)")
        if self.biases.shape != self.couplings.shape[:2]:
            raise ValueError("biases must be (L, N)")
        if np.any(np.diagonal(self.couplings, axis1=1, axis2=2) != 0):
            raise ValueError("coupling matrices must have zero diagonal")
        if not np.allclose(self.couplings, self.couplings.transpose(0, 2, 1)):
            raise ValueError("coupling matrices must be symmetric")
        self._edge_cache = None

    @property
    def n_paths(self) -> int:
        return self.couplings.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.couplings.shape[1]

    @property
    def size(self) -> int:
        """Total indicator length N * L * T."""
        return self.n_antennas * self.n_paths * self.n_snapshots

    @property
    def single_snapshot_matrix(self) -> np.ndarray:
        """blkdiag(E^(0), ..., E^(L-1)), shape (N*L, N*L)."""
        n, l = self.n_antennas, self.n_paths
        out = np.zeros((n * l, n * l))
        for i in range(l):
            out[i * n:(i + 1) * n, i * n:(i + 1) * n] = self.couplings[i]
        return out

    @property
    def single_snapshot_bias(self) -> np.ndarray:
        """Concatenated per-path biases, shape (N*L,)."""
        return self.biases.reshape(-1)

    @property
    def matrix(self) -> np.ndarray:
        """Full assembled E = I_T kron blkdiag(...), shape (NLT, NLT)."""
        return np.kron(np.eye(self.n_snapshots), self.single_snapshot_matrix)

    @property
    def bias(self) -> np.ndarray:
        """Full assembled bias vector, length NLT."""
        return np.tile(self.single_snapshot_bias, self.n_snapshots)

    def _edges(self):
        """Directed edge arrays (gi, gj, w) over the N*L single-snapshot layout."""
        if self._edge_cache is None:
            n = self.n_antennas
            gi, gj, w = [], [], []
            for l in range(self.n_paths):
                ii, jj = np.nonzero(self.couplings[l])
                gi.append(ii + l * n)
                gj.append(jj + l * n)
                w.append(self.couplings[l][ii, jj])
            self._edge_cache = (np.concatenate(gi), np.concatenate(gj), np.concatenate(w))
        return self._edge_cache

    def block_matvec(self, c: np.ndarray) -> np.ndarray:
        """blkdiag(E^(l)) @ c for a length-(N*L) vector, via edge lists."""
        gi, gj, w = self._edges()
        out = np.zeros_like(c, dtype=float)
        np.add.at(out, gi, w * c[gj])
        return out


def default_chain_params(geom: ArrayGeometry, n_paths: int, n_snapshots: int,
                         coupling: float = 1.0, bias: float = -0.2) -> IsingParams:
    """Nearest-neighbor chain prior for a uniform linear array.

    Adjacent antennas (|n - m| = 1) interact with strength -coupling
    (coupling > 0, so equal neighbors are favored); every antenna carries
    the uniform bias value.  The same graph is used for every path.
    """
    if coupling <= 0:
        raise ValueError("coupling strength must be positive")
    n = geom.n_antennas
    block = np.zeros((n, n))
    idx = np.arange(n - 1)
    block[idx, idx + 1] = -coupling
    block[idx + 1, idx] = -coupling
    couplings = np.repeat(block[None, :, :], n_paths, axis=0)
    biases = np.full((n_paths, n), float(bias))
    return IsingParams(couplings=couplings, biases=biases, n_snapshots=n_snapshots)


def ising_energy(params: IsingParams, b) -> float:
    """Energy 1/2 s^T E s + gamma^T s with s = 2 b - 1, b of length N*L*T.

    Accepts binary indicators or relaxed values in [0, 1] for intermediate
    evaluation.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size != params.size:
        raise ValueError(f"indicator length {b.size} != N*L*T = {params.size}")
    s = 2.0 * b - 1.0
    chunks = s.reshape(params.n_snapshots, -1)
    quad = 0.0
    for chunk in chunks:
        quad += 0.5 * chunk @ params.block_matvec(chunk)
    return float(quad + params.bias @ s)


def energy_gap(params: IsingParams, b, flip_index: int) -> float:
    """Energy change from flipping one entry of b (0-based index into NLT layout).

    Equals ising_energy(b with entry flipped to 1 - b_i) - ising_energy(b),
    evaluated in O(degree) of the flipped antenna.
    """
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size != params.size:
        raise ValueError(f"indicator length {b.size} != N*L*T = {params.size}")
    if not 0 <= flip_index < b.size:
        raise ValueError("flip index out of range")
    nl = params.n_antennas * params.n_paths
    t, rest = divmod(flip_index, nl)
    l, n = divmod(rest, params.n_antennas)
    s = 2.0 * b - 1.0
    chunk = s[t * nl:(t + 1) * nl]
    row = params.couplings[l][n]  # couplings touch only the same path block
    neighbor_term = row @ chunk[l * params.n_antennas:(l + 1) * params.n_antennas]
    gamma_i = params.biases[l, n]
    return float(-2.0 * s[flip_index] * (neighbor_term + gamma_i))
