"""Vector and trace-free tensor harmonics on the round sphere.

Tangent fields and symmetric 2-tensors are stored in chart components over
the colatitude/longitude chart.  Vector fields carry contravariant indices
(V^theta, V^phi); tensors carry covariant indices (T_ij).  All families are
orthonormal for the round metric and its volume element.

Vector families, defined for degree l >= 1:

    grad: grad_0 Y_lm / sqrt(l(l+1))
    curl: the 90-degree rotation of grad (divergence-free)

Tensor families, defined for degree l >= 2 (lower degrees vanish):

    even: trace-free Hessian, Hess_0 Y_lm + (l(l+1)/2) g_0 Y_lm
    odd:  symmetrized covariant derivative of the curl field

scaled to unit L2 norm by quadrature.  The exact norm of the unscaled even
family is sqrt(l(l+1)(l(l+1)-2)/2), which the tests use as an oracle.
"""

from dataclasses import dataclass

import numpy as np

from .spectral import SphereGrid, coeff_degrees, coeff_index

__all__ = [
    "VectorBasis",
    "TensorBasis",
    "vector_basis",
    "tensor_basis",
    "round_tensor_inner",
]


def _chart_gradients(g: SphereGrid) -> tuple[np.ndarray, np.ndarray]:
    """Contravariant round-gradient components of every basis function.

    Returns (G_theta, G_phi) with shape (n, n_coeffs): grad_0 Y = G_theta d_th
    + G_phi d_ph, using g0^{theta theta} = 1 and g0^{phi phi} = 1/sin^2.
    """
    s = np.sin(g.theta)[:, None]
    return g.node_matrix(1, 0), g.node_matrix(0, 1) / s**2


@dataclass(frozen=True)
class VectorBasis:
    """Orthonormal tangent-field basis: all grad modes, then all curl modes.

    dfields, when requested, holds chart derivatives of the components,
    dfields[n, i, k, b] = d_i V^k of basis field b; exact analytic values,
    needed by Lie-derivative formulas in the assembled linearization.
    """

    grid: SphereGrid
    fields: np.ndarray          # (n, 2, n_vec) contravariant chart components
    labels: list                # (family, l, m)
    dfields: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.fields.shape[2]


def vector_basis(g: SphereGrid, derivatives: bool = False) -> VectorBasis:
    ls, ms = coeff_degrees(g.L)
    sel = ls >= 1
    ll = (ls * (ls + 1.0))[sel]
    Gt, Gp = _chart_gradients(g)
    Gt, Gp = Gt[:, sel], Gp[:, sel]
    scale = 1.0 / np.sqrt(ll)
    n = g.n_nodes
    k = int(sel.sum())
    fields = np.empty((n, 2, 2 * k))
    fields[:, 0, :k] = Gt * scale
    fields[:, 1, :k] = Gp * scale
    # rotation J: orthonormal components (a, b) -> (-b, a); in chart
    # components (V^th, V^ph) -> (-sin(th) V^ph, V^th / sin(th))
    s = np.sin(g.theta)[:, None]
    fields[:, 0, k:] = -s * Gp * scale
    fields[:, 1, k:] = Gt * scale / s
    labels = [("grad", int(l), int(m)) for l, m in zip(ls[sel], ms[sel])]
    labels += [("curl", int(l), int(m)) for l, m in zip(ls[sel], ms[sel])]

    dfields = None
    if derivatives:
        c = np.cos(g.theta)[:, None]
        Yt, Yp = g.node_matrix(1, 0)[:, sel], g.node_matrix(0, 1)[:, sel]
        Ytt = g.node_matrix(2, 0)[:, sel]
        Ytp = g.node_matrix(1, 1)[:, sel]
        Ypp = g.node_matrix(0, 2)[:, sel]
        dfields = np.empty((n, 2, 2, 2 * k))
        dfields[:, 0, 0, :k] = Ytt * scale
        dfields[:, 1, 0, :k] = Ytp * scale
        dfields[:, 0, 1, :k] = (Ytp - 2.0 * (c / s) * Yp) / s**2 * scale
        dfields[:, 1, 1, :k] = Ypp / s**2 * scale
        dfields[:, 0, 0, k:] = (-Ytp / s + c * Yp / s**2) * scale
        dfields[:, 1, 0, k:] = -Ypp / s * scale
        dfields[:, 0, 1, k:] = (Ytt / s - c * Yt / s**2) * scale
        dfields[:, 1, 1, k:] = Ytp / s * scale
    return VectorBasis(g, fields, labels, dfields)


def _round_hessians(g: SphereGrid) -> np.ndarray:
    """Covariant round Hessian of every basis function, (n, 2, 2, nc)."""
    s, c = np.sin(g.theta)[:, None], np.cos(g.theta)[:, None]
    Yt, Yp = g.node_matrix(1, 0), g.node_matrix(0, 1)
    H = np.empty((g.n_nodes, 2, 2, g.n_coeffs))
    # Gamma0: ^th_phph = -s c, ^ph_thph = c/s
    H[:, 0, 0] = g.node_matrix(2, 0)
    H[:, 0, 1] = H[:, 1, 0] = g.node_matrix(1, 1) - (c / s) * Yp
    H[:, 1, 1] = g.node_matrix(0, 2) + s * c * Yt
    return H


@dataclass(frozen=True)
class TensorBasis:
    """Orthonormal trace-free symmetric 2-tensor basis on the round sphere."""

    grid: SphereGrid
    fields: np.ndarray          # (n, 2, 2, n_ten) covariant chart components
    labels: list                # (family, l, m)

    @property
    def size(self) -> int:
        return self.fields.shape[3]


def round_tensor_inner(g: SphereGrid, B: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Pointwise round inner product g0^{ik} g0^{jl} B_ij T_kl of covariant tensors.

    B, T may carry trailing batch axes; broadcasting follows numpy rules with
    the node and index axes leading.
    """
    s2 = np.sin(g.theta) ** 2
    s2 = s2.reshape((-1,) + (1,) * (B.ndim - 3))

    Bu = np.empty_like(B)
    Bu[:, 0, 0] = B[:, 0, 0]
    Bu[:, 0, 1] = B[:, 0, 1] / s2
    Bu[:, 1, 0] = B[:, 1, 0] / s2
    Bu[:, 1, 1] = B[:, 1, 1] / s2**2
    return (Bu[:, 0, 0] * T[:, 0, 0] + Bu[:, 0, 1] * T[:, 0, 1]
            + Bu[:, 1, 0] * T[:, 1, 0] + Bu[:, 1, 1] * T[:, 1, 1])


def tensor_basis(g: SphereGrid) -> TensorBasis:
    ls, ms = coeff_degrees(g.L)
    sel = ls >= 2
    ll = (ls * (ls + 1.0))[sel]
    n, k = g.n_nodes, int(sel.sum())
    s = np.sin(g.theta)[:, None]
    c = np.cos(g.theta)[:, None]
    s2 = s * s

    hess = _round_hessians(g)[..., sel]
    Y = g.node_matrix(0, 0)[:, sel]
    even = hess.copy()
    even[:, 0, 0] += 0.5 * ll * Y
    even[:, 1, 1] += 0.5 * ll * (s2 * Y)

    # odd family: J applied to the first index of the even tensor, (JT)_ij =
    # J^k_i T_kj with J^ph_th = 1/s, J^th_ph = -s (same rotation as the curl
    # fields).  J is parallel, so this equals Sym grad(J grad Y) up to the
    # normalization; trace-freeness of T keeps JT symmetric.
    odd = np.empty_like(even)
    odd[:, 0, 0] = even[:, 0, 1] / s
    odd[:, 0, 1] = odd[:, 1, 0] = -even[:, 0, 0] * s
    odd[:, 1, 1] = -even[:, 0, 1] * s

    fields = np.concatenate([even, odd], axis=3)
    norms = np.sqrt(np.sum(
        g.weights[:, None] * round_tensor_inner(g, fields, fields), axis=0))
    fields = fields / norms
    labels = [("even", int(l), int(m)) for l, m in zip(ls[sel], ms[sel])]
    labels += [("odd", int(l), int(m)) for l, m in zip(ls[sel], ms[sel])]
    return TensorBasis(g, fields, labels)
