"""The blended data map, its linearization, and the ADN principal symbol."""

import numpy as np
import numpy.testing as npt
import pytest

from immlab.bases import tensor_basis, vector_basis
from immlab.errors import ImmersionRegularityError
from immlab.fredholm import killing_modes
from immlab.geometry import ImmersionMap
from immlab.operators import (VariationField, apply_phi,
                              assemble_linearization, delta_star,
                              domain_labels, mean_curvature_prime,
                              principal_symbol, project_codomain)
from immlab.shapes import (ellipsoid_immersion, perturbed_sphere_immersion,
                           sphere_immersion)
from immlab.spectral import HarmonicField, coeff_index, grid


def normal_field(g, l, m, amp=1.0):
    c = np.zeros(g.n_coeffs)
    c[coeff_index(l, m)] = amp
    return VariationField(np.zeros((g.n_nodes, 2)), HarmonicField(g, c))


def test_apply_phi_sphere_values():
    g = grid(8)
    F = sphere_immersion(g)
    data = apply_phi(F, 0.5)
    s = np.sin(g.theta)
    npt.assert_allclose(data.class_rep[:, 0, 0], 1.0 / s, atol=1e-11)
    npt.assert_allclose(data.class_rep[:, 1, 1], s, atol=1e-11)
    npt.assert_allclose(data.blended, 1.5, atol=1e-11)
    npt.assert_allclose(apply_phi(F, 1.0).blended, 2.0, atol=1e-11)
    npt.assert_allclose(apply_phi(sphere_immersion(g, 1.7), 0.0).blended,
                        1.7**2, atol=1e-10)


def test_apply_phi_multiplicative_values():
    g = grid(8)
    F = sphere_immersion(g)
    npt.assert_allclose(apply_phi(F, 0.5, "multiplicative").blended,
                        2.0**-0.5, atol=1e-11)
    npt.assert_allclose(apply_phi(F, 1.0, "multiplicative").blended, 0.5,
                        atol=1e-11)


def test_apply_phi_endpoint_identities():
    g = grid(12)
    F = perturbed_sphere_immersion(g, 1.0, [(2, 1, 0.05)])
    d0 = apply_phi(F, 0.0, liouville_tol=None)
    npt.assert_allclose(d0.blended, d0.lambda2, atol=0)
    d1 = apply_phi(F, 1.0)
    npt.assert_allclose(d1.blended, F.geometry.H, atol=0)
    d0m = apply_phi(F, 0.0, "multiplicative", liouville_tol=None)
    npt.assert_allclose(d0m.blended, d0m.lambda2, atol=1e-13)


def test_apply_phi_input_validation():
    g = grid(8)
    F = sphere_immersion(g)
    with pytest.raises(ValueError):
        apply_phi(F, 1.5)
    with pytest.raises(ValueError):
        apply_phi(F, -0.1)
    with pytest.raises(ValueError):
        apply_phi(F, 0.5, "geometric")


def test_apply_phi_multiplicative_needs_positive_H():
    g = grid(12)
    F = perturbed_sphere_immersion(g, 1.0, [(3, 0, 0.3)])
    assert F.geometry.H.min() < 0.0
    with pytest.raises(ImmersionRegularityError):
        apply_phi(F, 1.0, "multiplicative")


def test_apply_phi_rigid_motion_invariance():
    g = grid(12)
    F = ellipsoid_immersion(g, 1.0, 1.1, 0.9)
    rng = np.random.default_rng(0)
    R = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    G = F.rotated(R).translated(np.array([0.4, -1.0, 0.2]))
    dF = apply_phi(F, 0.3, liouville_tol=None)
    dG = apply_phi(G, 0.3, liouville_tol=None)
    npt.assert_array_less(np.abs(dF.blended - dG.blended).max(), 1e-9)
    npt.assert_array_less(np.abs(dF.class_rep - dG.class_rep).max(), 1e-9)


def test_variation_field_roundtrip():
    g = grid(12)
    F = sphere_immersion(g)
    rng = np.random.default_rng(2)
    Xc = np.zeros((3, g.n_coeffs))
    Xc[:, :16] = rng.standard_normal((3, 16))
    X = np.stack([g.synthesize(Xc[mu]) for mu in range(3)], axis=-1)
    V = VariationField.from_ambient(F, X)
    npt.assert_array_less(np.abs(V.to_ambient(F) - X).max(), 1e-12)


def test_delta_star_killing_fields():
    g = grid(12)
    F = sphere_immersion(g)
    rot = VariationField.from_ambient(
        F, np.cross(np.array([0.0, 0.0, 1.0]), F.positions))
    strain, _ = delta_star(F, rot)
    npt.assert_array_less(np.abs(strain).max(), 1e-10)
    assert np.abs(rot.nu.samples).max() <= 1e-10

    trans = VariationField.from_ambient(
        F, np.tile(np.array([0.3, -0.2, 0.9]), (g.n_nodes, 1)))
    strain, _ = delta_star(F, trans)
    npt.assert_array_less(np.abs(strain).max(), 1e-10)


def test_delta_star_normal_on_sphere():
    g = grid(12)
    F = sphere_immersion(g)
    V = normal_field(g, 2, 0)
    strain, dnu = delta_star(F, V)
    # A = gamma on the unit sphere, so the strain is nu * gamma
    ref = V.nu.samples[:, None, None] * F.geometry.gamma
    npt.assert_array_less(np.abs(strain - ref).max(), 1e-10)
    npt.assert_allclose(dnu[:, 0], V.nu.deriv(1, 0), atol=1e-13)


def test_mean_curvature_prime_sphere():
    g = grid(12)
    F = sphere_immersion(g)
    for m in (-1, 0, 1):
        Hp = mean_curvature_prime(F, normal_field(g, 1, m))
        npt.assert_array_less(np.abs(Hp).max(), 1e-10)
    const = normal_field(g, 0, 0, amp=0.35 * np.sqrt(4.0 * np.pi))
    Hp = mean_curvature_prime(F, const)
    npt.assert_allclose(Hp, -2.0 * 0.35, atol=1e-11)


def _low_degree_direction(g, seed, max_idx=9, scale=0.4):
    rng = np.random.default_rng(seed)
    Xc = np.zeros((3, g.n_coeffs))
    Xc[:, :max_idx] = scale * rng.standard_normal((3, max_idx))
    return Xc


def test_mean_curvature_prime_finite_difference():
    g = grid(16)
    F = sphere_immersion(g)
    Xc = _low_degree_direction(g, 5)
    X = np.stack([g.synthesize(Xc[mu]) for mu in range(3)], axis=-1)
    Hp = mean_curvature_prime(F, VariationField.from_ambient(F, X))
    errs = {}
    for s in (1e-3, 1e-4):
        Hpl = ImmersionMap(g, F.coeffs + s * Xc).geometry.H
        Hmi = ImmersionMap(g, F.coeffs - s * Xc).geometry.H
        errs[s] = np.abs((Hpl - Hmi) / (2.0 * s) - Hp).max()
    assert errs[1e-3] <= 1e-4
    assert errs[1e-4] <= errs[1e-3] / 50.0

    # non-band-limited shape: the formula carries the truncation of H,
    # so finite differences only agree to that floor
    E = ellipsoid_immersion(g, 1.0, 1.1, 0.9)
    Hp = mean_curvature_prime(E, VariationField.from_ambient(E, X))
    Hpl = ImmersionMap(g, E.coeffs + 1e-4 * Xc).geometry.H
    Hmi = ImmersionMap(g, E.coeffs - 1e-4 * Xc).geometry.H
    assert np.abs((Hpl - Hmi) / 2e-4 - Hp).max() <= 1e-4


def test_linearization_kills_ambient_isometries():
    g = grid(12)
    M = assemble_linearization(sphere_immersion(g), 1.0)
    cols = M.matrix @ killing_modes(M.domain_basis)
    npt.assert_array_less(np.linalg.norm(cols, axis=0), 1e-9)


def test_linearization_nine_dim_kernel_span():
    g = grid(12)
    M = assemble_linearization(sphere_immersion(g), 1.0)
    norms = []
    for i, (kind, l, m) in enumerate(M.domain_basis):
        if l == 1 and kind in ("grad", "curl", "normal"):
            v = np.zeros(M.matrix.shape[1])
            v[i] = 1.0
            norms.append(np.linalg.norm(M.matrix @ v))
    assert len(norms) == 9
    npt.assert_array_less(np.array(norms), 1e-8)


def _domain_direction(g, labels, seed):
    rng = np.random.default_rng(seed)
    v = np.zeros(len(labels))
    low = [i for i, (kind, l, m) in enumerate(labels) if l <= 3]
    v[low] = rng.standard_normal(len(low))
    return v


def _fd_column(F, eps, variant, Xc, s, tb):
    g = F.grid

    def at(sv):
        d = apply_phi(ImmersionMap(g, F.coeffs + sv * Xc), eps, variant,
                      liouville_tol=None)
        return project_codomain(g, tb, d.class_rep, d.blended)

    return (at(s) - at(-s)) / (2.0 * s)


@pytest.mark.parametrize("eps,variant", [
    (1.0, "additive"),
    (0.3, "additive"),
    (0.3, "multiplicative"),
])
def test_linearization_matches_finite_differences(eps, variant):
    g = grid(12)
    F = sphere_immersion(g)
    tb = tensor_basis(g)
    vb = vector_basis(g)
    M = assemble_linearization(F, eps, variant, liouville_tol=None)
    v = _domain_direction(g, M.domain_basis, 11)
    X = np.einsum("nik,nim,k->nm", vb.fields, F.geometry.dF, v[:vb.size])
    X += F.geometry.normal * (g.node_matrix(0, 0) @ v[vb.size:])[:, None]
    Xc = np.stack([g.analyze(X[:, mu]) for mu in range(3)])
    col = M.matrix @ v
    err = {s: np.linalg.norm(_fd_column(F, eps, variant, Xc, s, tb) - col)
           / np.linalg.norm(col) for s in (1e-3, 5e-4)}
    assert err[1e-3] <= 1e-4
    # clean O(s^2): halving s quarters the error
    assert 3.0 <= err[1e-3] / err[5e-4] <= 5.0


def test_linearization_affine_in_epsilon_additive():
    g = grid(8)
    F = ellipsoid_immersion(g, 1.0, 1.1, 0.9)
    M0 = assemble_linearization(F, 0.0, liouville_tol=None)
    M1 = assemble_linearization(F, 1.0, liouville_tol=None)
    M3 = assemble_linearization(F, 0.3, liouville_tol=None)
    blend = 0.7 * M0.matrix + 0.3 * M1.matrix
    npt.assert_array_less(np.abs(M3.matrix - blend).max(), 1e-10)


def test_linearization_epsilon_lipschitz_multiplicative():
    g = grid(8)
    F = sphere_immersion(g)
    Ms = {e: assemble_linearization(F, e, "multiplicative",
                                    liouville_tol=None) for e in
          (0.4, 0.5, 0.6)}
    d1 = np.linalg.norm(Ms[0.5].matrix - Ms[0.4].matrix)
    d2 = np.linalg.norm(Ms[0.6].matrix - Ms[0.5].matrix)
    scale = max(np.linalg.norm(Ms[0.5].matrix), 1.0)
    assert d1 <= scale and d2 <= scale
    # comparable increments for equal eps steps
    assert 0.2 <= d1 / d2 <= 5.0


def test_operator_matrix_metadata():
    g = grid(8)
    M = assemble_linearization(sphere_immersion(g), 0.5, liouville_tol=None)
    n_cod, n_dom = M.matrix.shape
    assert n_dom == len(M.domain_basis) == 3 * g.n_coeffs - 2
    assert n_cod == len(M.codomain_basis) == 3 * g.n_coeffs - 8
    assert M.structural_index == 6
    orders = M.row_orders
    assert set(orders.tolist()) == {1, 2}
    assert (orders == 2).sum() == g.n_coeffs


def test_symbol_elliptic_for_positive_epsilon():
    g = grid(8)
    F = ellipsoid_immersion(g, 1.0, 1.2, 0.8)
    rng = np.random.default_rng(4)
    nodes = rng.integers(0, g.n_nodes, size=6)
    angles = 2.0 * np.pi * np.arange(36) / 36.0
    for eps in (0.1, 0.25, 0.5, 1.0):
        data = apply_phi(F, eps, liouville_tol=None)
        smin = min(principal_symbol(F, int(n), np.array([np.cos(a), np.sin(a)]),
                                    eps, data=data)[1]
                   for n in nodes for a in angles)
        assert smin > 1e-3


def test_symbol_characteristic_at_epsilon_zero():
    g = grid(8)
    F = ellipsoid_immersion(g, 1.0, 1.2, 0.8)
    angles = 2.0 * np.pi * np.arange(36) / 36.0
    data = apply_phi(F, 0.0, liouville_tol=None)
    smax = max(principal_symbol(F, n, np.array([np.cos(a), np.sin(a)]),
                                0.0, data=data)[1]
               for n in range(0, g.n_nodes, 7) for a in angles)
    assert smax <= 1e-12


def test_symbol_linear_in_epsilon():
    g = grid(8)
    F = sphere_immersion(g)
    xi = np.array([0.7, 0.4])
    s1 = principal_symbol(F, 100, xi, 0.01)[1]
    s2 = principal_symbol(F, 100, xi, 0.02)[1]
    assert abs(s2 / s1 - 2.0) <= 0.05


def test_symbol_rejects_zero_covector():
    g = grid(8)
    F = sphere_immersion(g)
    with pytest.raises(ValueError):
        principal_symbol(F, 0, np.zeros(2), 0.5)


def test_symbol_multiplicative_endpoint():
    g = grid(8)
    F = sphere_immersion(g)
    S, smin = principal_symbol(F, 50, np.array([1.0, 0.0]), 1.0,
                               "multiplicative")
    npt.assert_allclose(S[2, 2], -0.5, atol=1e-12)
    assert smin > 0.0
