"""Real spherical-harmonic basis, quadrature grid, and spectral derivatives.

Conventions
-----------
Basis functions are the fully normalized real spherical harmonics on the
unit sphere, without the Condon-Shortley phase:

    Y_{l,0}  = N_{l,0} P_l(cos th)
    Y_{l,m}  = sqrt(2) N_{l,m} P_l^m(cos th) cos(m ph)     (m > 0)
    Y_{l,-m} = sqrt(2) N_{l,m} P_l^m(cos th) sin(m ph)     (m > 0)

with N_{l,m} = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!) and P_l^m the unsigned
associated Legendre functions.  They are orthonormal in L2(S^2, dOmega),
so the constant field 1 has the single coefficient sqrt(4 pi) on Y_{0,0},
and the ambient coordinates x, y, z are positive multiples of Y_{1,1},
Y_{1,-1}, Y_{1,0}.

Coefficients are stored in (l, m) lexicographic order, m = -l .. l, so a
band limit L gives (L+1)^2 coefficients and ``coeff_index(l, m) = l*l+l+m``.

The quadrature grid is Gauss-Legendre in cos th with L+1 colatitude nodes
and uniform in ph with 2L+2 nodes.  There are no nodes at the poles, the
weights sum to 4 pi, and products Y_a * Y_b with a + b <= 2L are integrated
exactly.  Analysis of a sampled field returns its L2 projection onto the
basis; for fields band-limited at L the round trip is exact to rounding.

Colatitude derivatives of basis functions are evaluated analytically from
the Legendre recurrences (orders 0, 1, 2), and ph derivatives act on the
coefficient vector by the exact +-m mode swap, so all chart derivatives of
a band-limited field are exact at the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import assoc_legendre_p_all, roots_legendre

from .errors import DegreeMismatchError

__all__ = [
    "SphereGrid",
    "HarmonicField",
    "coeff_index",
    "coeff_degrees",
    "basis_matrix",
    "grid",
]


def coeff_index(l: int, m: int) -> int:
    """Position of the (l, m) coefficient in lexicographic storage."""
    if abs(m) > l:
        raise ValueError(f"invalid mode (l={l}, m={m})")
    return l * l + l + m


def coeff_degrees(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays of l and m for every coefficient slot up to band limit L."""
    ls = np.concatenate([np.full(2 * l + 1, l) for l in range(L + 1)])
    ms = np.concatenate([np.arange(-l, l + 1) for l in range(L + 1)])
    return ls, ms


def _legendre_theta_blocks(L: int, theta: np.ndarray) -> np.ndarray:
    """Normalized associated Legendre data on a colatitude list.

    Returns an array of shape (3, L+1, L+1, len(theta)) holding the theta
    amplitude of each (l, m >= 0) basis function and its first and second
    derivatives with respect to theta.  The sqrt(2) factor for m > 0 is
    included here.
    """
    x = np.cos(theta)
    s = np.sin(theta)
    # (drv, l, m-wrapped, node); derivatives are with respect to x
    P = assoc_legendre_p_all(L, L, x, diff_n=2)
    P0 = P[0][:, : L + 1]
    P1 = P[1][:, : L + 1]
    P2 = P[2][:, : L + 1]

    ls = np.arange(L + 1)[:, None]
    ms = np.arange(L + 1)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        lognorm = 0.5 * (
            np.log(2 * ls + 1.0)
            - np.log(4 * np.pi)
            + _log_factorial(ls - ms)
            - _log_factorial(ls + ms)
        )
    norm = np.where(ms <= ls, np.exp(lognorm), 0.0)
    norm = norm * np.where(ms > 0, np.sqrt(2.0), 1.0)
    # strip the Condon-Shortley phase carried by scipy
    norm = norm * np.where(ms % 2 == 1, -1.0, 1.0)
    norm = norm[:, :, None]

    val = norm * P0
    # chain rule x = cos(theta)
    dth = norm * (-s * P1)
    dthth = norm * (s * s * P2 - x * P1)
    return np.stack([val, dth, dthth])


def _log_factorial(n: np.ndarray) -> np.ndarray:
    from scipy.special import gammaln

    return gammaln(np.maximum(n, 0) + 1.0)


def basis_matrix(L: int, theta: np.ndarray, phi: np.ndarray, dtheta: int = 0) -> np.ndarray:
    """Dense synthesis matrix at scattered points.

    Parameters
    ----------
    L : band limit.
    theta, phi : 1-D arrays of equal length with colatitude/longitude of
        each evaluation point.
    dtheta : order of the theta derivative baked into the matrix (0..2).

    Returns
    -------
    ndarray of shape (len(theta), (L+1)**2) mapping coefficient vectors to
    point values of the requested theta derivative.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    if theta.shape != phi.shape:
        raise ValueError("theta and phi must have equal shapes")
    if dtheta not in (0, 1, 2):
        raise ValueError("dtheta must be 0, 1 or 2")
    blocks = _legendre_theta_blocks(L, theta)[dtheta]  # (L+1, L+1, npts)
    npts = theta.size
    nc = (L + 1) ** 2
    M = np.empty((npts, nc))
    for l in range(L + 1):
        for m in range(-l, l + 1):
            am = blocks[l, abs(m)]
            trig = np.cos(m * phi) if m >= 0 else np.sin(-m * phi)
            M[:, coeff_index(l, m)] = am * trig
    return M


@dataclass
class SphereGrid:
    """Gauss-Legendre x uniform longitude quadrature grid with transforms.

    Attributes
    ----------
    L : band limit (L >= 4).
    theta, phi : flattened node coordinates, theta-major ordering with
        n_theta = L+1 rows of n_phi = 2L+2 nodes each.
    weights : quadrature weights per node, summing to 4 pi.
    """

    L: int
    theta_nodes: np.ndarray = field(repr=False)
    phi_nodes: np.ndarray = field(repr=False)
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    _mats: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, L: int) -> "SphereGrid":
        if L < 4:
            raise ValueError("band limit must be at least 4")
        x, w = roots_legendre(L + 1)
        theta_nodes = np.arccos(x[::-1])  # increasing colatitude
        w_theta = w[::-1]
        n_phi = 2 * L + 2
        phi_nodes = 2.0 * np.pi * np.arange(n_phi) / n_phi
        th, ph = np.meshgrid(theta_nodes, phi_nodes, indexing="ij")
        weights = np.repeat(w_theta * (2.0 * np.pi / n_phi), n_phi)
        return cls(L, theta_nodes, phi_nodes, th.ravel(), ph.ravel(), weights)

    # -- basic sizes -----------------------------------------------------
    @property
    def n_theta(self) -> int:
        return self.L + 1

    @property
    def n_phi(self) -> int:
        return 2 * self.L + 2

    @property
    def n_nodes(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def n_coeffs(self) -> int:
        return (self.L + 1) ** 2

    @property
    def sin_theta(self) -> np.ndarray:
        return np.sin(self.theta)

    # -- synthesis matrices (built lazily, cached) -----------------------
    def _matrix(self, dtheta: int) -> np.ndarray:
        if dtheta not in self._mats:
            self._mats[dtheta] = basis_matrix(self.L, self.theta, self.phi, dtheta)
        return self._mats[dtheta]

    def _dphi_tables(self) -> tuple[np.ndarray, np.ndarray]:
        if "dphi" not in self._mats:
            ls, ms = coeff_degrees(self.L)
            target = (ls * ls + ls - ms).astype(int)  # slot of (l, -m)
            factor = np.where(ms > 0, -ms, -ms).astype(float)
            # d/dphi cos(m ph) = -m sin(m ph): slot (l,m>0) -> (l,-m), factor -m
            # d/dphi sin(|m| ph) = |m| cos: slot (l,m<0) -> (l,|m|), factor |m| = -m
            self._mats["dphi"] = (target, factor)
        return self._mats["dphi"]

    def dphi_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Exact longitude derivative acting on a coefficient vector."""
        target, factor = self._dphi_tables()
        out = np.zeros_like(coeffs)
        out[target] = factor * coeffs
        return out

    def node_matrix(self, dth: int = 0, dph: int = 0) -> np.ndarray:
        """Node values of the (dth, dph) chart derivative of every basis function."""
        key = (dth, dph)
        if key not in self._mats:
            if dph == 0:
                M = self._matrix(dth)
            else:
                target, factor = self._dphi_tables()
                M = self.node_matrix(dth, dph - 1)[:, target] * factor[None, :]
            self._mats[key] = M
        return self._mats[key]

    def _check(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_coeffs,):
            raise DegreeMismatchError(
                f"expected {self.n_coeffs} coefficients, got shape {coeffs.shape}"
            )
        return coeffs

    # -- transforms ------------------------------------------------------
    def synthesize(self, coeffs: np.ndarray, dth: int = 0, dph: int = 0) -> np.ndarray:
        """Evaluate a mixed chart derivative of a band-limited field at the nodes."""
        c = self._check(coeffs)
        for _ in range(dph):
            c = self.dphi_coeffs(c)
        return self._matrix(dth) @ c

    def analyze(self, samples: np.ndarray) -> np.ndarray:
        """Quadrature L2 projection of node samples onto the basis."""
        samples = np.asarray(samples, dtype=float)
        if samples.shape != (self.n_nodes,):
            raise DegreeMismatchError(
                f"expected {self.n_nodes} samples, got shape {samples.shape}"
            )
        return self._matrix(0).T @ (self.weights * samples)

    def integrate(self, samples: np.ndarray) -> float:
        """Quadrature integral over the round sphere."""
        return float(self.weights @ np.asarray(samples, dtype=float))

    def grad_sphere(self, coeffs: np.ndarray) -> np.ndarray:
        """Round-metric gradient in the orthonormal frame (e_th, e_ph).

        Returns (n_nodes, 2) samples (d_th f, d_ph f / sin th).  The grid has
        no pole nodes, so the frame is defined at every node.
        """
        c = self._check(coeffs)
        gt = self._matrix(1) @ c
        gp = (self._matrix(0) @ self.dphi_coeffs(c)) / self.sin_theta
        return np.stack([gt, gp], axis=-1)

    def laplace_beltrami_round(self, coeffs: np.ndarray) -> np.ndarray:
        """Round-sphere Laplacian (div grad sign, spectrum -l(l+1))."""
        c = self._check(coeffs)
        ls, _ = coeff_degrees(self.L)
        return -ls * (ls + 1.0) * c


@lru_cache(maxsize=16)
def grid(L: int) -> SphereGrid:
    """Shared immutable grid instance for a band limit."""
    return SphereGrid.build(L)


@dataclass
class HarmonicField:
    """A scalar field represented by its harmonic coefficients.

    Samples and coefficients stay consistent because instances are treated
    as immutable; any arithmetic returns a new field.
    """

    grid: SphereGrid
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.grid.n_coeffs,):
            raise DegreeMismatchError(
                f"expected {self.grid.n_coeffs} coefficients, got {self.coeffs.shape}"
            )

    @classmethod
    def from_samples(cls, g: SphereGrid, samples: np.ndarray) -> "HarmonicField":
        return cls(g, g.analyze(samples))

    @property
    def samples(self) -> np.ndarray:
        if not hasattr(self, "_samples"):
            self._samples = self.grid.synthesize(self.coeffs)
        return self._samples

    def deriv(self, dth: int = 0, dph: int = 0) -> np.ndarray:
        return self.grid.synthesize(self.coeffs, dth=dth, dph=dph)

    def coefficient(self, l: int, m: int) -> float:
        return float(self.coeffs[coeff_index(l, m)])

    def degree_slice(self, l: int) -> np.ndarray:
        return self.coeffs[l * l : (l + 1) * (l + 1)]

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        return HarmonicField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "HarmonicField") -> "HarmonicField":
        return HarmonicField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, a: float) -> "HarmonicField":
        return HarmonicField(self.grid, self.coeffs * float(a))

    __rmul__ = __mul__
