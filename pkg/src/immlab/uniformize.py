"""Conformal uniformization of smooth metrics on the sphere.

Any smooth metric gamma on S^2 splits uniquely as gamma = lambda^2 gamma_0
where gamma_0 = e^{2 phi} gamma has Gauss curvature one and lambda^2 =
e^{-2 phi}.  The factor phi solves the Liouville equation

    Delta_gamma phi = K_gamma - e^{2 phi},

which this module discretizes in weak (Galerkin) form against the spherical
harmonic basis.  The weak form never touches Christoffel symbols or chart
components of gamma near the poles: the stiffness form integrates
gamma^{ij} d_i phi d_j psi against the metric volume element, and every
integrand that appears is a smooth scalar times sin(theta) from the volume
factor, so Gauss-Legendre quadrature applies cleanly.

Solutions are unique only up to the Moebius group; the gauge adopted here
pins the three degree-one coefficients of phi to zero.  The reduced
Gauss-Newton system drops those columns and solves the remaining rectangular
system in the least-squares sense.

The linearization solver differentiates the discrete residual exactly in the
metric, so finite-difference checks of lambda^2 along metric paths converge
at second order down to roundoff.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import qr, solve_triangular

from .errors import ConvergenceError, DegreeMismatchError
from .geometry import ImmersionMap
from .spectral import HarmonicField, SphereGrid

__all__ = [
    "MetricData",
    "ConformalData",
    "LinearizedLiouville",
    "conformal_class",
    "linearized_conformal_factor",
    "solve_liouville",
]


def conformal_class(gamma: np.ndarray) -> np.ndarray:
    """Pointwise representative gamma / sqrt(det gamma) of the conformal class."""
    gamma = np.asarray(gamma, dtype=float)
    det = gamma[..., 0, 0] * gamma[..., 1, 1] - gamma[..., 0, 1] * gamma[..., 1, 0]
    if np.any(det <= 0.0) or np.any(gamma[..., 0, 0] <= 0.0):
        raise ValueError("metric must be positive definite at every node")
    return gamma / np.sqrt(det)[..., None, None]


def _round_christoffels(g: SphereGrid) -> np.ndarray:
    # scale invariant: same symbols for every radius
    n = g.n_nodes
    s, c = np.sin(g.theta), np.cos(g.theta)
    gam = np.zeros((n, 2, 2, 2))
    gam[:, 0, 1, 1] = -s * c
    gam[:, 1, 0, 1] = gam[:, 1, 1, 0] = c / s
    return gam


@dataclass(frozen=True)
class MetricData:
    """A metric on the grid with the derived quantities the solvers need.

    vol_weights are quadrature weights for the metric volume element:
    w_n sqrt(det gamma_n) / sin(theta_n), so sum(vol_weights * f) integrates
    f dv_gamma.
    """

    grid: SphereGrid
    gamma: np.ndarray        # (n, 2, 2)
    inv_gamma: np.ndarray    # (n, 2, 2)
    det_gamma: np.ndarray    # (n,)
    christoffel: np.ndarray  # (n, 2, 2, 2) Gamma^k_ij, index order [k, i, j]
    K: np.ndarray            # (n,) Gauss curvature

    @cached_property
    def vol_weights(self) -> np.ndarray:
        g = self.grid
        return g.weights * np.sqrt(self.det_gamma) / np.sin(g.theta)

    @classmethod
    def from_immersion(cls, F: ImmersionMap) -> "MetricData":
        geo = F.geometry
        return cls(F.grid, geo.gamma, geo.inv_gamma, geo.det_gamma,
                   geo.christoffel, geo.K)

    @classmethod
    def round(cls, g: SphereGrid, radius: float = 1.0) -> "MetricData":
        n = g.n_nodes
        s2 = np.sin(g.theta) ** 2
        gamma = np.zeros((n, 2, 2))
        gamma[:, 0, 0] = radius**2
        gamma[:, 1, 1] = radius**2 * s2
        inv = np.zeros_like(gamma)
        inv[:, 0, 0] = 1.0 / radius**2
        inv[:, 1, 1] = 1.0 / (radius**2 * s2)
        det = radius**4 * s2
        K = np.full(n, 1.0 / radius**2)
        return cls(g, gamma, inv, det, _round_christoffels(g), K)

    @classmethod
    def conformal_round(cls, u: HarmonicField) -> "MetricData":
        """The metric e^{2u} g_round for a band-limited conformal factor u."""
        g = u.grid
        base = cls.round(g)
        e2u = np.exp(2.0 * u.samples)
        gamma = base.gamma * e2u[:, None, None]
        inv = base.inv_gamma / e2u[:, None, None]
        det = base.det_gamma * e2u**2
        # Gamma^k_ij = Gamma0^k_ij + d_i u delta^k_j + d_j u delta^k_i
        #              - g0^{kl} d_l u g0_ij
        du = np.stack([u.deriv(1, 0), u.deriv(0, 1)], axis=1)
        gradu = np.einsum("nkl,nl->nk", base.inv_gamma, du)
        gam = _round_christoffels(g).copy()
        eye = np.eye(2)
        gam += np.einsum("ni,kj->nkij", du, eye)
        gam += np.einsum("nj,ki->nkij", du, eye)
        gam -= np.einsum("nk,nij->nkij", gradu, base.gamma)
        lap0 = g.synthesize(g.laplace_beltrami_round(u.coeffs))
        K = np.exp(-2.0 * u.samples) * (1.0 - lap0)
        return cls(g, gamma, inv, det, gam, K)

    def laplacian(self, f_coeffs: np.ndarray) -> np.ndarray:
        """Strong Laplace-Beltrami of a band-limited field at the nodes.

        Uses the chart formula gamma^{ij} (d2_ij f - Gamma^k_ij d_k f); near
        the poles the two terms cancel to the smooth limit, which costs a few
        digits but is only used for reporting strong residuals.
        """
        g = self.grid
        d = [[g.synthesize(f_coeffs, 2, 0), g.synthesize(f_coeffs, 1, 1)],
             [None, g.synthesize(f_coeffs, 0, 2)]]
        d[1][0] = d[0][1]
        hess = np.empty((g.n_nodes, 2, 2))
        for i in range(2):
            for j in range(2):
                hess[:, i, j] = d[i][j]
        du = np.stack([g.synthesize(f_coeffs, 1, 0),
                       g.synthesize(f_coeffs, 0, 1)], axis=1)
        hess -= np.einsum("nkij,nk->nij", self.christoffel, du)
        return np.einsum("nij,nij->n", self.inv_gamma, hess)


@dataclass(frozen=True)
class ConformalData:
    """Result of uniformizing a metric: gamma = lambda2 * round_rep.

    round_rep = e^{2 phi} gamma has Gauss curvature one; lambda2 = e^{-2 phi}
    holds at the nodes; class_rep is the pointwise unimodular representative.
    gauge records the Moebius normalization: the first three entries are the
    (pinned-to-zero) degree-one coefficients of phi, the last three the
    rotation parameters, which are not fixed (rotations are treated as an
    equivalence in comparisons, so they are recorded as zero).
    residual_history holds the weak residual norm per Newton iterate.
    """

    metric: MetricData
    phi: HarmonicField
    lambda2: np.ndarray        # (n,)
    class_rep: np.ndarray      # (n, 2, 2)
    strong_residual: float
    iterations: int
    gauge: np.ndarray = field(default_factory=lambda: np.zeros(6))
    residual_history: tuple = ()

    @property
    def round_rep(self) -> np.ndarray:
        e2p = np.exp(2.0 * self.phi.samples)
        return self.metric.gamma * e2p[:, None, None]

    @property
    def lambda2_field(self) -> HarmonicField:
        return HarmonicField.from_samples(self.metric.grid, self.lambda2)


def _degree_one_mask(g: SphereGrid) -> np.ndarray:
    keep = np.ones(g.n_coeffs, dtype=bool)
    keep[1:4] = False
    return keep


class _WeakForms:
    """Shared Galerkin matrices for a fixed metric."""

    def __init__(self, metric: MetricData):
        g = metric.grid
        self.metric = metric
        self.q = metric.vol_weights
        self.Y = g.node_matrix(0, 0)
        self.dY = (g.node_matrix(1, 0), g.node_matrix(0, 1))
        # stiffness S[k, c] = int gamma^{ij} d_i Y_c d_j Y_k dv
        S = np.zeros((g.n_coeffs, g.n_coeffs))
        for i in range(2):
            for j in range(2):
                S += self.dY[i].T @ (
                    (self.q * metric.inv_gamma[:, i, j])[:, None] * self.dY[j])
        self.S = S

    def mass(self, density: np.ndarray) -> np.ndarray:
        return self.Y.T @ ((self.q * density)[:, None] * self.Y)

    def residual(self, phi_coeffs: np.ndarray) -> np.ndarray:
        # weak form of Delta phi - K + e^{2 phi} = 0 tested against Y_k:
        # r_k = -(S phi)_k + int (e^{2 phi} - K) Y_k dv
        m = self.metric
        e2p = np.exp(2.0 * (self.Y @ phi_coeffs))
        return self.Y.T @ (self.q * (e2p - m.K)) - self.S @ phi_coeffs

    def jacobian(self, phi_coeffs: np.ndarray) -> np.ndarray:
        e2p = np.exp(2.0 * (self.Y @ phi_coeffs))
        return -self.S + self.mass(2.0 * e2p)


def solve_liouville(metric: MetricData, *, tol: float | None = 1e-9,
                    max_iter: int = 40,
                    initial: np.ndarray | None = None) -> ConformalData:
    """Uniformize a metric by damped Gauss-Newton on the weak Liouville system.

    The default initial guess -(1/4) log(det gamma / det round) is exact for
    metrics conformal to the round one; pass explicit coefficients (e.g.
    zeros) to exercise the iteration.  Raises ConvergenceError if the
    converged solution fails the strong residual bound
    max |Delta_gamma phi - K + e^{2 phi}| <= tol (a coarse grid can converge
    in the weak sense yet carry a truncation tail above tol; raising is the
    honest report in that case), or if the gauge-reduced Jacobian degenerates.
    tol=None skips the strong certificate (the residual is still recorded);
    finite-difference probes of the discrete solution map use that mode,
    since the weak solve is smooth in the metric regardless of the tail.
    """
    g = metric.grid
    forms = _WeakForms(metric)
    keep = _degree_one_mask(g)

    if initial is None:
        # determinant-based guess: exact for conformal-to-round metrics
        phi0 = -0.25 * np.log(metric.det_gamma / np.sin(g.theta) ** 2)
        coeffs = g.analyze(phi0)
    else:
        coeffs = np.array(initial, dtype=float)
    coeffs[~keep] = 0.0

    r = forms.residual(coeffs)
    rnorm = np.linalg.norm(r)
    history = [rnorm]
    floor = 1e-13 * max(1.0, np.linalg.norm(forms.Y.T @ (forms.q * metric.K)))
    iterations = 0
    for _ in range(max_iter):
        if rnorm <= floor:
            break
        J = forms.jacobian(coeffs)[:, keep]
        step, _, rank, _ = np.linalg.lstsq(J, -r, rcond=1e-12)
        if rank < J.shape[1]:
            raise ConvergenceError(
                "gauge projection failed: reduced Liouville Jacobian is "
                f"rank-deficient (rank {rank} of {J.shape[1]})")
        t, improved = 1.0, False
        for _ in range(30):
            trial = coeffs.copy()
            trial[keep] += t * step
            r_trial = forms.residual(trial)
            if np.linalg.norm(r_trial) < rnorm:
                improved = True
                break
            t *= 0.5
        if not improved:
            break  # least-squares stationary point; strong check decides below
        coeffs, r = trial, r_trial
        rnorm = np.linalg.norm(r)
        history.append(rnorm)
        iterations += 1

    strong = metric.laplacian(coeffs) - metric.K + np.exp(2.0 * g.synthesize(coeffs))
    strong_residual = float(np.max(np.abs(strong)))
    if tol is not None and strong_residual > tol:
        raise ConvergenceError(
            f"uniformization residual {strong_residual:.3e} exceeds {tol:.1e}; "
            "increase the band limit")
    phi = HarmonicField(g, coeffs)
    lambda2 = np.exp(-2.0 * phi.samples)
    return ConformalData(metric, phi, lambda2, conformal_class(metric.gamma),
                         strong_residual, iterations,
                         residual_history=tuple(history))


@dataclass
class LinearizedLiouville:
    """Derivative of the uniformization map at a solved base point.

    For a metric path gamma(s) with gamma'(0) = h the solved conformal factor
    moves by phi' = -J_red^+ (d_gamma r)(h) where r is the discrete weak
    residual and J_red its Jacobian in the gauge-reduced coefficients; then
    (lambda^2)' = -2 e^{-2 phi} phi'.  Both the h-derivative and the
    phi-Jacobian are exact derivatives of the discrete residual, so the map
    composes with exact immersion linearizations without consistency loss.

    The curvature derivative K' along the path may be supplied at the nodes
    (for immersion paths, where it is computed extrinsically); if omitted it
    is generated in weak form by integrating by parts:

        int K' psi dv = int [ <h, Hess psi> - tr h (Delta psi) / 2
                              - K tr h psi / 2 ] dv / ... (see _kprime_weak)
    """

    metric: MetricData
    conformal: ConformalData
    _forms: _WeakForms = field(init=False, repr=False)
    _keep: np.ndarray = field(init=False, repr=False)
    _qr: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self._forms = _WeakForms(self.metric)
        self._keep = _degree_one_mask(self.metric.grid)
        J = self._forms.jacobian(self.conformal.phi.coeffs)[:, self._keep]
        Q, R = qr(J, mode="economic")
        self._qr = (Q, R)

    def _kprime_weak(self, h: np.ndarray) -> np.ndarray:
        """Weak vector int K'(h) Y_k dv from the intrinsic curvature variation.

        2 K' = div div h - Delta (tr h) - K tr h; integrating the derivative
        terms by parts against Y_k leaves only first and second derivatives of
        the (band-limited) test functions, all evaluated exactly:

        int K' psi dv = 1/2 int [ <h, Hess psi>_gamma - tr h Delta psi
                                  - K tr h psi ] dv
        """
        m, f = self.metric, self._forms
        g = m.grid
        q = f.q
        hup = np.einsum("nik,nkl,njl->nij", m.inv_gamma, h, m.inv_gamma)
        trh = np.einsum("nij,nij->n", m.inv_gamma, h)
        # Hessian of every basis function, contracted with h^{ij} on the fly
        second = (
            hup[:, 0, 0] * g.node_matrix(2, 0).T
            + 2.0 * hup[:, 0, 1] * g.node_matrix(1, 1).T
            + hup[:, 1, 1] * g.node_matrix(0, 2).T
        )  # (nc, n) rows already weighted by h^{ij}
        gamma_h = np.einsum("nkij,nij->nk", m.christoffel, hup)
        first = gamma_h[:, 0] * f.dY[0].T + gamma_h[:, 1] * f.dY[1].T
        hess_pair = (second - first) @ q
        lap = np.einsum("nkij,nij->nk", m.christoffel, m.inv_gamma)
        lap_pair = (
            m.inv_gamma[:, 0, 0] * g.node_matrix(2, 0).T
            + 2.0 * m.inv_gamma[:, 0, 1] * g.node_matrix(1, 1).T
            + m.inv_gamma[:, 1, 1] * g.node_matrix(0, 2).T
            - lap[:, 0] * f.dY[0].T - lap[:, 1] * f.dY[1].T
        )
        lap_pair = (lap_pair * (q * trh)).sum(axis=1)
        zero_pair = f.Y.T @ (q * m.K * trh)
        return 0.5 * (hess_pair - lap_pair - zero_pair)

    def _dresidual(self, h: np.ndarray, kprime: np.ndarray | None) -> np.ndarray:
        """Exact h-derivative of the discrete weak residual at the base phi."""
        m, f = self.metric, self._forms
        g = m.grid
        phi_c = self.conformal.phi.coeffs
        trh = np.einsum("nij,nij->n", m.inv_gamma, h)
        hup = np.einsum("nik,nkl,njl->nij", m.inv_gamma, h, m.inv_gamma)
        dphi = np.stack([g.synthesize(phi_c, 1, 0),
                         g.synthesize(phi_c, 0, 1)], axis=1)
        # stiffness term: d_h [q gamma^{ij}] = q [trh/2 gamma^{ij} - h^{ij}]
        flux = np.einsum("nij,nj->ni", 0.5 * trh[:, None, None] * m.inv_gamma - hup,
                         dphi)
        d_stiff = f.dY[0].T @ (f.q * flux[:, 0]) + f.dY[1].T @ (f.q * flux[:, 1])
        e2p = np.exp(2.0 * f.Y @ phi_c)
        d_load = f.Y.T @ (f.q * 0.5 * trh * (e2p - m.K))
        if kprime is not None:
            d_load -= f.Y.T @ (f.q * kprime)
        else:
            d_load -= self._kprime_weak(h)
        return -d_stiff + d_load

    def solve(self, h: np.ndarray, kprime: np.ndarray | None = None
              ) -> tuple[HarmonicField, np.ndarray]:
        """phi' and (lambda^2)' at the nodes for a metric variation h (n,2,2)."""
        phic, l2p = self.solve_batch(h[..., None],
                                     None if kprime is None else kprime[:, None])
        return HarmonicField(self.metric.grid, phic[:, 0]), l2p[:, 0]

    def solve_batch(self, h: np.ndarray, kprime: np.ndarray | None = None
                    ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized solve over a batch: h is (n, 2, 2, B), kprime (n, B)."""
        g = self.metric.grid
        if h.shape[:3] != (g.n_nodes, 2, 2):
            raise DegreeMismatchError(f"bad variation batch shape {h.shape}")
        B = h.shape[3]
        rhs = np.empty((g.n_coeffs, B))
        for b in range(B):
            kb = None if kprime is None else kprime[:, b]
            rhs[:, b] = self._dresidual(h[..., b], kb)
        Q, R = self._qr
        sol = solve_triangular(R, Q.T @ (-rhs))
        phi_prime = np.zeros((g.n_coeffs, B))
        phi_prime[self._keep] = sol
        l2 = self.conformal.lambda2
        lambda2_prime = -2.0 * l2[:, None] * (self._forms.Y @ phi_prime)
        return phi_prime, lambda2_prime


def linearized_conformal_factor(conformal: ConformalData, h: np.ndarray,
                                kprime: np.ndarray | None = None) -> np.ndarray:
    """(lambda^2)' at the nodes for a single metric variation h (n, 2, 2).

    Convenience wrapper over LinearizedLiouville; assembling many variations
    at one base point should construct that class once instead.
    """
    lin = LinearizedLiouville(conformal.metric, conformal)
    _, l2p = lin.solve(h, kprime)
    return l2p
