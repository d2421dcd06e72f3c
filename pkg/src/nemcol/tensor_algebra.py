"""Pointwise Q-tensor algebra for the co-rotational Beris-Edwards model.

A Q-tensor (3x3 real, symmetric, traceless) is stored as 5 independent
components in a leading axis of length 5, ordered

    q[0] = Q_11,  q[1] = Q_22,  q[2] = Q_12,  q[3] = Q_13,  q[4] = Q_23,

with Q_33 = -(Q_11 + Q_22) reconstructed on demand.  Tracelessness and
symmetry are therefore structural and cannot drift.  General 3x3 matrices
(velocity gradients, stresses) use shape (3, 3, ...).  All functions
broadcast over trailing axes, so a single call handles one tensor or a
whole grid of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NQ = 5  # independent components of a symmetric traceless 3x3 matrix


@dataclass(frozen=True)
class MaterialConstants:
    """Bulk coefficients a, b, c and the mobilities of the model.

    c, gamma (rotational mobility) and mu (viscosity) must be positive;
    a and b may have either sign.
    """

    a: float
    b: float
    c: float
    gamma: float
    mu: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError(f"c > 0 required, got c = {self.c}")
        if self.gamma <= 0:
            raise ValueError(f"gamma > 0 required, got gamma = {self.gamma}")
        if self.mu <= 0:
            raise ValueError(f"mu > 0 required, got mu = {self.mu}")


def qten_to_mat(q: np.ndarray) -> np.ndarray:
    """Reconstruct the full 3x3 matrix, shape (3, 3, ...)."""
    q = np.asarray(q, dtype=float)
    out = np.zeros((3, 3) + q.shape[1:])
    out[0, 0] = q[0]
    out[1, 1] = q[1]
    out[2, 2] = -q[0] - q[1]
    out[0, 1] = out[1, 0] = q[2]
    out[0, 2] = out[2, 0] = q[3]
    out[1, 2] = out[2, 1] = q[4]
    return out


def mat_to_qten(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Extract the 5 components from a symmetric traceless matrix.

    Raises if m is not symmetric traceless within tol (relative to its
    magnitude), since silently projecting would hide upstream bugs.
    """
    m = np.asarray(m, dtype=float)
    scale = np.abs(m).max() + 1e-300
    asym = np.abs(m - np.swapaxes(m, 0, 1)).max()
    tr = np.abs(m[0, 0] + m[1, 1] + m[2, 2]).max()
    if asym > tol * scale or tr > tol * scale:
        raise ValueError(
            f"matrix is not symmetric traceless: asym={asym:.3e} trace={tr:.3e}"
        )
    return np.stack([m[0, 0], m[1, 1], m[0, 1], m[0, 2], m[1, 2]])


def qdot(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Frobenius inner product P:Q of two Q-tensors (= tr(PQ))."""
    return (
        p[0] * q[0]
        + p[1] * q[1]
        + (p[0] + p[1]) * (q[0] + q[1])
        + 2.0 * (p[2] * q[2] + p[3] * q[3] + p[4] * q[4])
    )


def qnormsq(q: np.ndarray) -> np.ndarray:
    """|Q|^2 = tr(Q^2)."""
    return qdot(q, q)


def qten_square(q: np.ndarray) -> np.ndarray:
    """Q^2 as a full 3x3 matrix (symmetric but generally not traceless)."""
    m = qten_to_mat(q)
    return np.einsum("ik...,kj...->ij...", m, m)


def matdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Frobenius inner product A:B of two general matrices."""
    return np.einsum("ij...,ij...->...", a, b)


def sym_antisym(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a matrix into (D, Sigma): symmetric and antisymmetric parts."""
    gt = np.swapaxes(g, 0, 1)
    return 0.5 * (g + gt), 0.5 * (g - gt)


def bulk_energy(q: np.ndarray, mc: MaterialConstants) -> np.ndarray:
    """Landau-de Gennes bulk density
    f_b(Q) = a/2 tr(Q^2) - b/3 tr(Q^3) + c/4 (tr(Q^2))^2.
    """
    tr2 = qnormsq(q)
    m2 = qten_square(q)
    # tr(Q^3) = Q^2 : Q, cheaper than a third matmul
    tr3 = matdot(m2, qten_to_mat(q))
    return 0.5 * mc.a * tr2 - mc.b / 3.0 * tr3 + 0.25 * mc.c * tr2 * tr2


def bulk_derivative(q: np.ndarray, mc: MaterialConstants) -> np.ndarray:
    """Gradient of f_b on the symmetric-traceless subspace:

    df_b/dQ = a Q - b (Q^2 - tr(Q^2)/3 I) + c Q tr(Q^2).
    """
    tr2 = qnormsq(q)
    m2 = qten_square(q)
    dev2 = np.stack(
        [m2[0, 0] - tr2 / 3.0, m2[1, 1] - tr2 / 3.0, m2[0, 1], m2[0, 2], m2[1, 2]]
    )
    return (mc.a + mc.c * tr2) * q - mc.b * dev2


def molecular_field(
    lapl_q: np.ndarray, q: np.ndarray, penalty: np.ndarray | float, mc: MaterialConstants
) -> np.ndarray:
    """H = lapl(Q) - df_b/dQ - penalty * Q, with penalty = n*phi >= 0."""
    return lapl_q - bulk_derivative(q, mc) - penalty * q


def corotation(sig: np.ndarray, q: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Co-rotational coupling Sigma Q - Q Sigma for antisymmetric Sigma.

    The commutator of an antisymmetric matrix with a symmetric traceless
    one is again symmetric traceless, so the result is a Q-tensor.
    """
    scale = np.abs(sig).max() + 1e-300
    asym = np.abs(sig + np.swapaxes(sig, 0, 1)).max()
    if asym > tol * scale:
        raise ValueError(f"Sigma is not antisymmetric: |Sig+Sig^T| = {asym:.3e}")
    m = qten_to_mat(q)
    c = np.einsum("ik...,kj...->ij...", sig, m)
    c = c - np.einsum("ik...,kj...->ij...", m, sig)
    # structurally symmetric traceless; read off components directly
    return np.stack([c[0, 0], c[1, 1], c[0, 1], c[0, 2], c[1, 2]])


def ericksen_stress(grad_q: np.ndarray) -> np.ndarray:
    """tau = -(grad Q odot grad Q), entries tau_ij = -(d_i Q : d_j Q).

    grad_q has shape (ndir, 5, ...): one Q-tensor per spatial direction.
    The result, shape (ndir, ndir, ...), is symmetric negative
    semidefinite by construction (-G^T G structure).
    """
    ndir = grad_q.shape[0]
    out = np.empty((ndir, ndir) + grad_q.shape[2:])
    for i in range(ndir):
        for j in range(i, ndir):
            out[i, j] = -qdot(grad_q[i], grad_q[j])
            out[j, i] = out[i, j]
    return out


def antisym_stress(q: np.ndarray, h: np.ndarray) -> np.ndarray:
    """sigma = QH - HQ, antisymmetric 3x3."""
    mq = qten_to_mat(q)
    mh = qten_to_mat(h)
    c = np.einsum("ik...,kj...->ij...", mq, mh)
    return c - np.swapaxes(c, 0, 1)


def cancellation_residual(q: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    """-(Q Sigma - Sigma Q):H + (QH - HQ):G with Sigma the antisymmetric
    part of G.  Identically zero for symmetric traceless Q, H; exposed so
    the cancellation the energy estimate relies on can be checked in
    floating point.
    """
    _, sig = sym_antisym(g)
    mq = qten_to_mat(q)
    comm = np.einsum("ik...,kj...->ij...", mq, sig)
    comm = comm - np.einsum("ik...,kj...->ij...", sig, mq)  # Q Sig - Sig Q
    return -matdot(comm, qten_to_mat(h)) + matdot(antisym_stress(q, h), g)


def uniaxial(s: np.ndarray | float, director: np.ndarray) -> np.ndarray:
    """Uniaxial ansatz s (n x n - I/3) for a unit director n, as components.

    s may broadcast against the trailing shape; director is a 3-vector.
    """
    n = np.asarray(director, dtype=float)
    n = n / np.linalg.norm(n)
    base = np.array(
        [
            n[0] * n[0] - 1.0 / 3.0,
            n[1] * n[1] - 1.0 / 3.0,
            n[0] * n[1],
            n[0] * n[2],
            n[1] * n[2],
        ]
    )
    s = np.asarray(s, dtype=float)
    return base.reshape((NQ,) + (1,) * s.ndim) * s


def random_qten(rng: np.random.Generator, shape: tuple[int, ...] = ()) -> np.ndarray:
    """Standard-normal components; handy for property tests."""
    return rng.standard_normal((NQ,) + shape)
