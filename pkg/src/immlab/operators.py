"""The regularized data map and its linearization.

For an immersion F with induced metric gamma = lambda^2 gamma_0 (gamma_0 the
round representative of the conformal class) and mean curvature H, the map
assembled here sends F to the pair

    ( class rep of gamma,  (1 - eps) lambda^2 + eps H )        additive
    ( class rep of gamma,  lambda^(2(1-eps)) H^(-eps) )        multiplicative

for eps in [0, 1].  The blend mixes length^2 and 1/length; it is treated
formally at unit scale (all bundled experiments run at diameter ~ 2), and
EpsilonData records that convention.  At eps = 1 the additive blend is H and
the multiplicative blend is 1/H; the conformal factor drops out and no
Liouville solve is performed.

The linearization is assembled column by column from the first-variation
formulas evaluated on closed-form basis fields: the metric variation is the
Lie derivative 2 delta*(X^T) + 2 nu A (exact nodal values, since the basis
fields and their chart derivatives are analytic), the mean-curvature
variation is -Delta nu - |A|^2 nu + X^T(H) with a Galerkin Laplacian, and
the conformal-factor variation reuses the prefactored linearized Liouville
solve with the integrated-by-parts curvature variation.  Columns live over
an explicit variation basis (gradient and curl vector harmonics for the
tangential part, scalar harmonics for the normal speed); rows pair the
class slot against trace-free tensor harmonics and analyze the blended slot
in scalar harmonics, both with round quadrature weights.  With degrees up to
L this gives 3(L+1)^2 - 2 domain modes and 3(L+1)^2 - 8 codomain slots; the
structural difference 6 mirrors the continuum index.

Finite differences of apply_phi probe coefficient perturbations of the
immersion, so they see a basis field only through its degree-L ambient
analysis.  A field of degree l pushed through dF and N has ambient degree
l + deg(F); consistency checks therefore probe directions of low enough
degree to be exactly representable (the analysis is then lossless and the
columns match finite differences to truncation error).  Top-degree modes
are beyond coefficient-space resolution -- the pair grad Y_Lm, Y_Lm N even
analyzes to parallel coefficient vectors -- which is why the columns are
evaluated on the fields themselves rather than on their truncations.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky

from .bases import TensorBasis, tensor_basis, vector_basis
from .errors import DegreeMismatchError, ImmersionRegularityError
from .geometry import ImmersionMap, SurfaceGeometry
from .spectral import HarmonicField, SphereGrid, coeff_degrees
from .uniformize import (ConformalData, LinearizedLiouville, MetricData,
                         conformal_class, solve_liouville)

__all__ = [
    "EpsilonData",
    "VariationField",
    "VariationBlocks",
    "OperatorMatrix",
    "apply_phi",
    "delta_star",
    "mean_curvature_prime",
    "metric_strain",
    "immersion_variation",
    "assemble_linearization",
    "principal_symbol",
]


@dataclass(frozen=True)
class EpsilonData:
    """The blended data of an immersion at a fixed eps.

    lambda2 and conformal are None at eps = 1, where the blend does not
    involve the conformal factor.  formal_units documents that the additive
    blend adds length^2 to 1/length at unit scale.
    """

    epsilon: float
    variant: str
    class_rep: np.ndarray      # (n, 2, 2), det = 1 per node
    blended: np.ndarray        # (n,)
    H: np.ndarray              # (n,)
    lambda2: np.ndarray | None
    conformal: ConformalData | None
    formal_units: str = "unit-scale blend"


def apply_phi(F: ImmersionMap, epsilon: float, variant: str = "additive",
              *, liouville_tol: float | None = 1e-9) -> EpsilonData:
    """Evaluate the blended data map at an immersion.

    The multiplicative variant requires H > 0 at every node.  Liouville
    non-convergence propagates from the uniformization solve; liouville_tol
    is the strong-residual certificate (None skips it, see solve_liouville).
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    if variant not in ("additive", "multiplicative"):
        raise ValueError(f"unknown variant {variant!r}")
    geo = F.geometry
    H = geo.H
    if variant == "multiplicative" and np.any(H <= 0.0):
        raise ImmersionRegularityError(
            "multiplicative blend needs H > 0 everywhere; "
            f"min H = {H.min():.3e}")
    class_rep = conformal_class(geo.gamma)
    if epsilon == 1.0:
        blended = H if variant == "additive" else 1.0 / H
        return EpsilonData(epsilon, variant, class_rep, blended, H, None, None)
    conf = solve_liouville(MetricData.from_immersion(F), tol=liouville_tol)
    l2 = conf.lambda2
    if variant == "additive":
        blended = (1.0 - epsilon) * l2 + epsilon * H
    else:
        blended = l2 ** (1.0 - epsilon) * H ** (-epsilon)
    return EpsilonData(epsilon, variant, class_rep, blended, H, l2, conf)


@dataclass(frozen=True)
class VariationField:
    """An ambient variation split as X = X^T + nu N along an immersion.

    XT holds contravariant chart components (V^theta, V^phi) of the
    tangential part; nu is the normal speed.
    """

    XT: np.ndarray             # (n, 2)
    nu: HarmonicField

    @classmethod
    def from_ambient(cls, F: ImmersionMap, X: np.ndarray) -> "VariationField":
        geo = F.geometry
        X = np.asarray(X, dtype=float)
        if X.shape != (F.grid.n_nodes, 3):
            raise DegreeMismatchError(f"ambient field shape {X.shape}")
        cov = np.einsum("nm,nim->ni", X, geo.dF)
        XT = np.einsum("nij,nj->ni", geo.inv_gamma, cov)
        nu = HarmonicField.from_samples(F.grid, np.einsum("nm,nm->n", X, geo.normal))
        return cls(XT, nu)

    def to_ambient(self, F: ImmersionMap) -> np.ndarray:
        geo = F.geometry
        return (np.einsum("ni,nim->nm", self.XT, geo.dF)
                + self.nu.samples[:, None] * geo.normal)


def metric_strain(F: ImmersionMap, X: np.ndarray) -> np.ndarray:
    """Half the metric variation (1/2) d/ds [ (F + sX)^* g_Eucl ] at s = 0.

    X is an ambient field given at the nodes; it is analyzed to coefficients
    so the chart derivatives are exact for band-limited fields.  The result
    equals the tangential symmetrized strain of X^T plus nu A.
    """
    g = F.grid
    geo = F.geometry
    Xc = np.stack([g.analyze(np.asarray(X, dtype=float)[:, mu]) for mu in range(3)])
    dX = np.stack([g.node_matrix(1, 0) @ Xc.T, g.node_matrix(0, 1) @ Xc.T], axis=1)
    gp = (np.einsum("nim,njm->nij", dX, geo.dF)
          + np.einsum("nim,njm->nij", geo.dF, dX))
    return 0.5 * gp


def delta_star(F: ImmersionMap, V: VariationField
               ) -> tuple[np.ndarray, np.ndarray]:
    """Tangential symmetrized strain of a variation, plus its normal bookkeeping.

    Returns ((delta* X)^T, d nu): the (n, 2, 2) tensor equal to half the
    induced-metric variation, and the (n, 2) chart gradient of the normal
    speed (the normal-valued part of the full ambient strain).
    """
    strain = metric_strain(F, V.to_ambient(F))
    dnu = np.stack([V.nu.deriv(1, 0), V.nu.deriv(0, 1)], axis=1)
    return strain, dnu


def mean_curvature_prime(F: ImmersionMap, V: VariationField) -> np.ndarray:
    """Mean-curvature variation by the first-variation formula.

    Evaluates -Delta_gamma nu - |A|^2 nu + X^T(H) at the nodes.  The
    Laplacian is Galerkin (mass-matrix solve), and H is analyzed before
    differentiation, so the result carries the spectral truncation of H;
    exact derivatives of the discrete pipeline (immersion_variation) agree
    with this to truncation error.
    """
    g = F.grid
    geo = F.geometry
    lap = _GalerkinLaplacian(F)
    lap_nu = lap.apply(V.nu.coeffs[:, None])[:, 0]
    advect = np.einsum("ni,ni->n", V.XT, _analyzed_gradient(g, geo.H))
    return -lap_nu - geo.norm_A_sq * V.nu.samples + advect


class _GalerkinLaplacian:
    """Weak induced-metric Laplacian over harmonic coefficients.

    apply maps coefficient columns (nc, B) to nodal Delta_gamma values
    (n, B) through a mass-matrix solve; exact for band-limited inputs when
    the metric is round.
    """

    def __init__(self, F: ImmersionMap):
        g = F.grid
        metric = MetricData.from_immersion(F)
        q = metric.vol_weights
        Y = g.node_matrix(0, 0)
        dY = (g.node_matrix(1, 0), g.node_matrix(0, 1))
        S = np.zeros((g.n_coeffs, g.n_coeffs))
        for i in range(2):
            for j in range(2):
                S += dY[i].T @ ((q * metric.inv_gamma[:, i, j])[:, None] * dY[j])
        self._Y = Y
        self._S = S
        self._mass = cho_factor(Y.T @ (q[:, None] * Y))

    def apply(self, nu_coeffs: np.ndarray) -> np.ndarray:
        return self._Y @ cho_solve(self._mass, -(self._S @ nu_coeffs))


def _analyzed_gradient(g: SphereGrid, f: np.ndarray) -> np.ndarray:
    """Chart gradient (n, 2) of a nodal scalar via harmonic analysis."""
    c = g.analyze(f)
    return np.stack([g.synthesize(c, 1, 0), g.synthesize(c, 0, 1)], axis=1)


@dataclass(frozen=True)
class VariationBlocks:
    """Exact derivatives of the discrete geometry along ambient directions.

    Each field carries a trailing batch axis, one slot per variation.
    """

    gamma_prime: np.ndarray      # (n, 2, 2, B)
    normal_prime: np.ndarray     # (n, 3, B)
    second_prime: np.ndarray     # (n, 2, 2, B)
    H_prime: np.ndarray          # (n, B)
    K_prime: np.ndarray          # (n, B)
    class_rep_prime: np.ndarray  # (n, 2, 2, B)


def _variation_blocks(geo: SurfaceGeometry, X, Xt, Xp, Xtt, Xtp, Xpp
                      ) -> VariationBlocks:
    """Core variation engine: inputs are nodal derivative stacks (n, 3, B)."""
    dF, d2F = geo.dF, geo.d2F
    N = geo.normal
    dX = (Xt, Xp)
    d2X = ((Xtt, Xtp), (Xtp, Xpp))

    n, _, B = Xt.shape
    gp = np.empty((n, 2, 2, B))
    for i in range(2):
        for j in range(2):
            gp[:, i, j] = (np.einsum("nmb,nm->nb", dX[i], dF[:, j])
                           + np.einsum("nm,nmb->nb", dF[:, i], dX[j]))

    # normal: n_vec = dF_th x dF_ph, N = n_vec / sqrt(det gamma)
    nvec_p = (np.cross(Xt, dF[:, 1][:, None, :], axisa=1, axisb=2).transpose(0, 2, 1)
              + np.cross(dF[:, 0][:, None, :], Xp, axisa=2, axisb=1).transpose(0, 2, 1))
    along = np.einsum("nmb,nm->nb", nvec_p, N)
    Np = (nvec_p - along[:, None, :] * N[:, :, None]) / np.sqrt(
        geo.det_gamma)[:, None, None]

    Ap = np.empty_like(gp)
    for i in range(2):
        for j in range(2):
            Ap[:, i, j] = -(np.einsum("nmb,nm->nb", d2X[i][j], N)
                            + np.einsum("nm,nmb->nb", d2F[:, i, j], Np))

    inv = geo.inv_gamma
    # H' = tr(inv A') - tr(inv g' inv A)
    Hp = (np.einsum("nij,njib->nb", inv, Ap)
          - np.einsum("nij,njkb,nkl,nli->nb", inv, gp, inv, geo.second))
    # K' from determinant derivatives: K = det A / det gamma
    adjA = _adjugate(geo.second)
    adjg = _adjugate(geo.gamma)
    Kp = (np.einsum("nij,njib->nb", adjA, Ap)
          - geo.K[:, None] * np.einsum("nij,njib->nb", adjg, gp)
          ) / geo.det_gamma[:, None]
    # class rep' = (g' - (tr_gamma g'/2) gamma) / sqrt(det gamma)
    trg = np.einsum("nij,nijb->nb", inv, gp)
    crp = (gp - 0.5 * trg[:, None, None, :] * geo.gamma[..., None]
           ) / np.sqrt(geo.det_gamma)[:, None, None, None]
    return VariationBlocks(gp, Np, Ap, Hp, Kp, crp)


def _adjugate(M: np.ndarray) -> np.ndarray:
    out = np.empty_like(M)
    out[:, 0, 0] = M[:, 1, 1]
    out[:, 1, 1] = M[:, 0, 0]
    out[:, 0, 1] = -M[:, 0, 1]
    out[:, 1, 0] = -M[:, 1, 0]
    return out


def immersion_variation(F: ImmersionMap, Xcoeffs: np.ndarray) -> VariationBlocks:
    """Exact geometric derivatives along one ambient coefficient direction.

    Xcoeffs has shape (3, n_coeffs) (or (3, n_coeffs, B) for a batch): the
    harmonic coefficients of the ambient variation's Cartesian components.
    """
    g = F.grid
    Xc = np.asarray(Xcoeffs, dtype=float)
    single = Xc.ndim == 2
    if single:
        Xc = Xc[..., None]
    if Xc.shape[:2] != (3, g.n_coeffs):
        raise DegreeMismatchError(f"variation coefficients shape {Xc.shape}")

    def nodal(dth, dph):
        M = g.node_matrix(dth, dph)
        return np.einsum("nc,mcb->nmb", M, Xc)

    blocks = _variation_blocks(F.geometry, nodal(0, 0), nodal(1, 0),
                               nodal(0, 1), nodal(2, 0), nodal(1, 1),
                               nodal(0, 2))
    return blocks


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense linearization over labeled domain and codomain bases.

    Domain labels: ("grad", l, m) and ("curl", l, m) for the tangential
    vector-harmonic modes (l >= 1), ("normal", l, m) for normal-speed scalar
    modes (all l).  Codomain labels: ("even"/"odd", l, m) for the trace-free
    tensor slots of the class row block (l >= 2), ("scalar", l, m) for the
    blended rows.  adn_weights records the mixed-order bookkeeping: order 1
    for class rows, order 2 for blended rows.
    """

    matrix: np.ndarray
    epsilon: float
    variant: str
    domain_basis: list
    codomain_basis: list
    F: ImmersionMap
    adn_weights: dict = field(default_factory=lambda: {"class": 1, "blended": 2})

    @property
    def row_orders(self) -> np.ndarray:
        return np.array([self.adn_weights["blended"] if lab[0] == "scalar"
                         else self.adn_weights["class"]
                         for lab in self.codomain_basis])

    @property
    def structural_index(self) -> int:
        return self.matrix.shape[1] - self.matrix.shape[0]


def domain_labels(g: SphereGrid) -> list:
    ls, ms = coeff_degrees(g.L)
    return vector_basis(g).labels + [("normal", int(l), int(m))
                                     for l, m in zip(ls, ms)]


def project_codomain(g: SphereGrid, tb: TensorBasis, class_part: np.ndarray,
                     blended_part: np.ndarray) -> np.ndarray:
    """Pair a (class tensor, blended scalar) pair into codomain coordinates.

    class_part: (n, 2, 2) or (n, 2, 2, B); blended_part: (n,) or (n, B).
    Rows use the round inner product and quadrature weights.
    """
    single = class_part.ndim == 3
    if single:
        class_part = class_part[..., None]
        blended_part = blended_part[..., None]
    s2 = np.sin(g.theta) ** 2
    up = np.empty_like(class_part)
    up[:, 0, 0] = class_part[:, 0, 0]
    up[:, 0, 1] = class_part[:, 0, 1] / s2[:, None]
    up[:, 1, 0] = class_part[:, 1, 0] / s2[:, None]
    up[:, 1, 1] = class_part[:, 1, 1] / s2[:, None] ** 2
    wT = (g.weights[:, None, None, None] * tb.fields).reshape(-1, tb.size)
    rows_class = wT.T @ up.reshape(-1, up.shape[-1])
    rows_scalar = g.node_matrix(0, 0).T @ (g.weights[:, None] * blended_part)
    out = np.vstack([rows_class, rows_scalar])
    return out[:, 0] if single else out


def _blended_prime(data: EpsilonData, lin: LinearizedLiouville | None,
                   gamma_prime: np.ndarray, H_prime: np.ndarray,
                   K_prime: np.ndarray | None = None) -> np.ndarray:
    """Blended-slot variation from batched metric and H variations.

    K_prime, when given, feeds the linearized Liouville solve the nodal
    curvature variation; omitted, the solve falls back to the weak
    integrated-by-parts form generated from gamma_prime alone.
    """
    eps, variant = data.epsilon, data.variant
    if eps == 1.0:
        if variant == "additive":
            return H_prime
        return -H_prime / data.H[:, None] ** 2
    _, l2p = lin.solve_batch(gamma_prime, K_prime)
    if variant == "additive":
        return (1.0 - eps) * l2p + eps * H_prime
    log_prime = ((1.0 - eps) * l2p / data.lambda2[:, None]
                 - eps * H_prime / data.H[:, None])
    return data.blended[:, None] * log_prime


def _metric_gradient(geo: SurfaceGeometry) -> np.ndarray:
    """Chart derivatives of the induced metric, (n, 2, 2, 2) = d_k gamma_ij."""
    return (np.einsum("nkia,nja->nkij", geo.d2F, geo.dF)
            + np.einsum("nia,nkja->nkij", geo.dF, geo.d2F))


def assemble_linearization(F: ImmersionMap, epsilon: float,
                           variant: str = "additive", *,
                           liouville_tol: float | None = 1e-9
                           ) -> OperatorMatrix:
    """Assemble the dense linearization of apply_phi at an immersion.

    Column j is the first-variation image of basis field j: the class rows
    pair the trace-free unit-determinant part of the metric variation
    2 delta*(X^T) + 2 nu A against tensor harmonics, the blended rows
    analyze (1 - eps) (lambda^2)' + eps H' (log-composed derivative for the
    multiplicative variant).  All nodal ingredients are exact on the basis
    fields; see the module docstring for how this relates to coefficient-
    space finite differences.
    """
    g = F.grid
    geo = F.geometry
    data = apply_phi(F, epsilon, variant, liouville_tol=liouville_tol)
    lin = None
    if data.conformal is not None:
        lin = LinearizedLiouville(MetricData.from_immersion(F), data.conformal)

    vb = vector_basis(g, derivatives=True)
    tb = tensor_basis(g)
    nc = g.n_coeffs
    n_dom = vb.size + nc
    gp = np.empty((g.n_nodes, 2, 2, n_dom))
    Hp = np.empty((g.n_nodes, n_dom))

    # tangential block: Lie-derivative metric variation, advected H
    dgam = _metric_gradient(geo)
    mixed = np.einsum("nkj,nikb->nijb", geo.gamma, vb.dfields)
    gp[..., :vb.size] = (np.einsum("nkb,nkij->nijb", vb.fields, dgam)
                         + mixed + mixed.transpose(0, 2, 1, 3))
    Hp[:, :vb.size] = np.einsum("nkb,nk->nb", vb.fields,
                                _analyzed_gradient(g, geo.H))

    # normal block: gamma' = 2 nu A, H' = -Delta nu - |A|^2 nu
    Y = g.node_matrix(0, 0)
    gp[..., vb.size:] = 2.0 * geo.second[..., None] * Y[:, None, None, :]
    Hp[:, vb.size:] = (-_GalerkinLaplacian(F).apply(np.eye(nc))
                       - geo.norm_A_sq[:, None] * Y)

    trg = np.einsum("nij,nijb->nb", geo.inv_gamma, gp)
    crp = (gp - 0.5 * trg[:, None, None, :] * geo.gamma[..., None]
           ) / np.sqrt(geo.det_gamma)[:, None, None, None]
    bp = _blended_prime(data, lin, gp, Hp)

    labels_cod = tb.labels + _scalar_labels(g)
    return OperatorMatrix(project_codomain(g, tb, crp, bp), epsilon, variant,
                          domain_labels(g), labels_cod, F)


def _scalar_labels(g: SphereGrid) -> list:
    ls, ms = coeff_degrees(g.L)
    return [("scalar", int(l), int(m)) for l, m in zip(ls, ms)]


def principal_symbol(F: ImmersionMap, node: int, xi: np.ndarray,
                     epsilon: float, variant: str = "additive",
                     data: EpsilonData | None = None
                     ) -> tuple[np.ndarray, float]:
    """Mixed-order principal symbol at one node and covector direction.

    Rows: two trace-free class components (order 1) and the blended slot
    (order 2 in nu); columns: tangential components of X in the gamma-
    orthonormal frame, then nu.  xi is normalized to unit gamma-length, so
    each row is evaluated at its own leading order on the unit covector.
    The nu column of the blended row carries the factor eps: at eps = 0 the
    whole nu column vanishes and the symbol is singular in every direction
    (the blended row then reduces to the first-order conformal-factor part).
    Returns the 3x3 matrix and its smallest singular value.

    The multiplicative variant needs blended data (pass data to avoid
    re-solving Liouville per call).
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (2,) or not np.any(xi != 0.0):
        raise ValueError("xi must be a nonzero 2-covector")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    gamma = F.geometry.gamma[node]
    Lc = cholesky(gamma, lower=True)
    xhat = np.linalg.solve(Lc, xi)
    xhat = xhat / np.linalg.norm(xhat)

    S = np.zeros((3, 3))
    S[0, 0], S[0, 1] = xhat[0], -xhat[1]
    S[1, 0], S[1, 1] = xhat[1], xhat[0]
    S[:2] /= np.sqrt(2.0)
    if variant == "additive":
        S[2, 0] = (1.0 - epsilon) * xhat[0]
        S[2, 1] = (1.0 - epsilon) * xhat[1]
        S[2, 2] = epsilon
    elif variant == "multiplicative":
        if epsilon == 1.0:
            H = F.geometry.H[node]
            S[2, 2] = -epsilon / H
        else:
            if data is None:
                data = apply_phi(F, epsilon, variant)
            b = data.blended[node]
            l2 = data.lambda2[node]
            S[2, 0] = (1.0 - epsilon) * (b / l2) * xhat[0]
            S[2, 1] = (1.0 - epsilon) * (b / l2) * xhat[1]
            S[2, 2] = -epsilon * b / F.geometry.H[node]
    else:
        raise ValueError(f"unknown variant {variant!r}")
    smin = float(np.linalg.svd(S, compute_uv=False)[-1])
    return S, smin
