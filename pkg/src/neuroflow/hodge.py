"""Orthogonal split of edge flows into gradient and rotational parts.

The gradient part lives in the range of the transposed incidence matrix
(flows explained by a node potential); the rotational part is its
orthogonal complement, the divergence-free cycle space.  The gradient
subspace is spanned by N-1 orthonormal edge modes built from Laplacian
eigenpairs; their divergence norms are sqrt(eigenvalue), which orders the
modes from smooth (low divergence) to high-frequency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .topology import GraphTopology, divergence, node_laplacian

_ZERO_EIG_TOL = 1e-9


class HodgeError(ValueError):
    """Decomposition preconditions violated."""


@dataclass(frozen=True)
class GradientModeBasis:
    """Laplacian eigenpairs and the induced orthonormal edge modes.

    eigenvalues: (N-1,) ascending, the zero eigenvalue dropped
    node_modes:  (N, N-1), orthonormal eigenvectors v_i
    edge_modes:  (E, N-1), u_i = grad(v_i) / sqrt(eigenvalue_i)
    """

    eigenvalues: np.ndarray
    node_modes: np.ndarray
    edge_modes: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True)
class HodgeDecomposition:
    flow: np.ndarray               # original edge signal
    gradient_part: np.ndarray      # projection onto range(grad)
    rotational_part: np.ndarray    # flow - gradient_part, divergence-free
    potential: np.ndarray          # zero-mean p with grad(p) = gradient_part
    mode_coefficients: np.ndarray  # <flow, u_i> per gradient mode


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """First significantly-nonzero component of each column made positive."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def gradient_mode_basis(topology: GraphTopology) -> GradientModeBasis:
    """Eigendecompose the node Laplacian and lift eigenvectors to edge modes."""
    n = topology.n_nodes
    if n < 2:
        raise HodgeError("mode basis needs at least 2 nodes")
    lap = node_laplacian(topology)
    eigenvalues, vectors = scipy.linalg.eigh(lap)
    n_zero = int(np.sum(eigenvalues < _ZERO_EIG_TOL * max(1.0, eigenvalues[-1])))
    if n_zero != 1:
        raise HodgeError(
            f"expected exactly one zero Laplacian eigenvalue, found {n_zero} "
            "(graph disconnected?)"
        )
    eigenvalues = eigenvalues[1:]
    vectors = _fix_signs(vectors[:, 1:])
    grads = vectors[topology.heads, :] - vectors[topology.tails, :]
    edge_modes = grads / np.sqrt(eigenvalues)[None, :]
    eigenvalues.setflags(write=False)
    vectors.setflags(write=False)
    edge_modes.setflags(write=False)
    return GradientModeBasis(eigenvalues, vectors, edge_modes)


def hodge_decompose(topology: GraphTopology, flow,
                    basis: GradientModeBasis | None = None) -> HodgeDecomposition:
    """Split an edge flow into gradient and rotational components.

    The basis is a one-time cost per topology; pass it in when decomposing
    many flows on the same graph.
    """
    f = np.asarray(flow, dtype=np.float64).ravel()
    if f.shape != (topology.n_edges,):
        raise HodgeError(
            f"flow has shape {f.shape}, expected ({topology.n_edges},)"
        )
    if basis is None:
        basis = gradient_mode_basis(topology)
    coeffs = basis.edge_modes.T @ f
    gradient_part = basis.edge_modes @ coeffs
    rotational_part = f - gradient_part
    potential = basis.node_modes @ (coeffs / np.sqrt(basis.eigenvalues))
    potential = potential - potential.mean()
    return HodgeDecomposition(f, gradient_part, rotational_part, potential, coeffs)


def lowpass_gradient(decomp: HodgeDecomposition, basis: GradientModeBasis,
                     cutoff) -> np.ndarray:
    """Low-pass filtered gradient flow.

    cutoff: int c keeps the c smoothest modes (ideal filter; 0 blocks all,
    n_modes passes all).  A (lambda_c, order) pair applies the smooth
    response h(l) = (1 + (l/lambda_c)^(2*order))^(-1/2), which is -3 dB at
    lambda_c.
    """
    if isinstance(cutoff, (int, np.integer)):
        c = int(cutoff)
        if not 0 <= c <= basis.n_modes:
            raise HodgeError(
                f"cutoff index {c} outside 0..{basis.n_modes}"
            )
        gains = np.zeros(basis.n_modes)
        gains[:c] = 1.0
    else:
        lambda_c, order = cutoff
        if lambda_c <= 0 or order < 1:
            raise HodgeError("smooth cutoff needs lambda_c > 0 and order >= 1")
        gains = 1.0 / np.sqrt(1.0 + (basis.eigenvalues / lambda_c) ** (2 * order))
    return basis.edge_modes @ (gains * decomp.mode_coefficients)


def reconstruct_potential(decomp: HodgeDecomposition) -> np.ndarray:
    """Zero-mean node potential generating the gradient part."""
    return decomp.potential - decomp.potential.mean()


def divergence_norms(topology: GraphTopology, basis: GradientModeBasis) -> np.ndarray:
    """Norm of each edge mode's divergence; equals sqrt(eigenvalue)."""
    return np.array(
        [np.linalg.norm(divergence(topology, basis.edge_modes[:, i]))
         for i in range(basis.n_modes)]
    )
