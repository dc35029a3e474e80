"""Acceptance suite: the nine headline criteria, one test (and one
pass/fail line under ``pytest -v``) per criterion, each asserted at its
stated tolerance and time budget."""

import time

import numpy as np
import pytest
import scipy.linalg

from cmcquad import tess
from cmcquad.flow import ConstraintSet, FlowState, geometric_targets, run_flow
from cmcquad.loops import (Loop, ScalarLoop, birkhoff_scalar_positive,
                           circle_samples, iwasawa, loop_mul, loop_star)
from cmcquad.monodromy import (Arc, MonodromySet, brute_force_unitarizer,
                               closing_condition_residual, halftrace_pairs,
                               local_monodromies, transfer_matrix,
                               unitarizability, unitarizer_diagonal)
from cmcquad.potential import (circle_arc, classify_vertex,
                               delaunay_eigenvalue, spin_along,
                               spin_of_winding)
from cmcquad.seed import ThetaContext, build_seed
from cmcquad.surface import (R3Target, build_disk_mesh,
                             discrete_mean_curvature, fit_plane,
                             fit_rotation_axis)


class _Budget:
    def __init__(self, seconds):
        self.limit = seconds
        self.start = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.start
        assert elapsed < self.limit, \
            "runtime %.1f s exceeds the %.0f s budget" % (elapsed, self.limit)


@pytest.fixture(scope="module")
def seed():
    return build_seed(ThetaContext(1.2j))


# -- criterion 1 -------------------------------------------------------------


def test_criterion_1_tessellation_tables():
    budget = _Budget(1.0)
    table_b = {(2, 2): "S3", (2, 3): "S3", (2, 4): "S3", (2, 5): "S3",
               (3, 3): "S3", (3, 4): "S3", (3, 5): "S3",
               (4, 4): "R3", (4, 5): "H3", (5, 5): "H3"}
    for (a, b), sf in table_b.items():
        assert tess.gram_signature(tess.family_b(a, b)) == sf, ("B", a, b)
    table_c = {2: "S3", 3: "S3", 4: "R3", 5: "H3"}
    for a, sf in table_c.items():
        assert tess.gram_signature(tess.family_c(a)) == sf, ("C", a)
    table_d = {(2, 2): "S3", (2, 3): "S3", (2, 4): "S3", (2, 5): "H3",
               (3, 3): "R3", (3, 4): "H3", (3, 5): "H3",
               (4, 4): "H3", (4, 5): "H3", (5, 5): "H3"}
    for (a, b), sf in table_d.items():
        assert tess.gram_signature(tess.family_d(a, b)) == sf, ("D", a, b)
    for a in range(2, 9):
        for b in range(a, 9):
            assert tess.gram_signature(tess.family_a(a, b)) == "S3"
    r3 = tess.enumerate_tetrahedra(max_n=8, klass="compact", spaceform="R3")
    assert sorted(t.family for t in r3) == sorted(("B44", "C4", "D33"))
    s3 = tess.enumerate_tetrahedra(max_n=5, klass="compact", spaceform="S3")
    sporadics = sorted(t.family for t in s3 if not t.family.startswith("A"))
    assert sporadics == sorted(("B23", "B24", "B25", "B33", "B34", "B35",
                                "D24"))
    assert len(sporadics) == 7
    budget.check()


# -- criterion 2 -------------------------------------------------------------


def _random_sl2_loop(n, decay, rng):
    """det == 1 exactly: product of unipotent elementary loops."""
    const = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    const /= np.sqrt(const[0, 0] * const[1, 1] - const[0, 1] * const[1, 0])
    phi = Loop(const[None, :, :])
    deg_pos = deg_neg = 0
    upper = True
    while deg_pos < n or deg_neg < n:
        d = int(rng.integers(1, 4))
        a = (rng.standard_normal() + 1j * rng.standard_normal()) * decay ** d
        if upper and deg_pos + d <= n:
            e = Loop.from_coeff_map({0: np.eye(2), d: [[0, a], [0, 0]]})
            deg_pos += d
        elif (not upper) and deg_neg + d <= n:
            e = Loop.from_coeff_map({0: np.eye(2), -d: [[0, 0], [a, 0]]})
            deg_neg += d
        else:
            upper = not upper
            continue
        upper = not upper
        phi = loop_mul(phi, e, n_out=phi.n + e.n)
    return phi.truncate(n)


def test_criterion_2_loop_factorization_suite():
    budget = _Budget(30.0)
    rng = np.random.default_rng(20240819)
    for _ in range(200):
        phi = _random_sl2_loop(32, 0.5, rng)
        res = iwasawa(phi)
        assert res.residual <= 1e-8
        assert res.unitarity_defect <= 1e-8
        assert res.b_minus_mass <= 1e-8
    # scalar Birkhoff on random positive symbols q = y* y
    for _ in range(20):
        coeffs = (0.5 ** np.arange(9)) * rng.standard_normal(9)
        coeffs[0] += 2.0
        y = ScalarLoop.taylor(coeffs)
        q = loop_mul(loop_star(y), y)
        assert birkhoff_scalar_positive(q).residual <= 1e-10
    # exact recovery: q = 5 + 2 lam + 2/lam factors as (2 + lam)* (2 + lam)
    out = birkhoff_scalar_positive(
        ScalarLoop.from_coeff_map({-1: 2.0, 0: 5.0, 1: 2.0}))
    assert abs(out.y.coeff(0) - 2.0) <= 1e-12
    assert abs(out.y.coeff(1) - 1.0) <= 1e-12
    budget.check()


# -- criterion 3 -------------------------------------------------------------


class _DiagonalPotential:
    def __init__(self, nu):
        self.nu = nu
        self.poles = np.array([0.0 + 0.0j])

    def xi(self, z, lam):
        out = np.zeros((np.asarray(lam).size, 2, 2), dtype=complex)
        out[:, 0, 0] = self.nu / z
        out[:, 1, 1] = -self.nu / z
        return out


def test_criterion_3_monodromy_exponential_oracle():
    budget = _Budget(5.0)
    lam = circle_samples(16)
    for nu in (0.1, 0.25, 0.4):
        t = transfer_matrix(_DiagonalPotential(nu),
                            [Arc(0.0, 1.0, 0.0, 2.0 * np.pi)], lam, 1e-12)
        expect = np.diag([np.exp(2j * np.pi * nu), np.exp(-2j * np.pi * nu)])
        assert np.max(np.abs(t - expect)) <= 1e-8
    budget.check()


# -- criterion 4 -------------------------------------------------------------


def _random_su2(rng, shape=()):
    v = rng.standard_normal(shape + (4,))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    m = np.zeros(shape + (2, 2), dtype=complex)
    m[..., 0, 0] = v[..., 0] + 1j * v[..., 1]
    m[..., 0, 1] = v[..., 2] + 1j * v[..., 3]
    m[..., 1, 0] = -v[..., 2] + 1j * v[..., 3]
    m[..., 1, 1] = v[..., 0] - 1j * v[..., 1]
    return m


def _random_sl2r(rng, shape=()):
    out = np.zeros(shape + (2, 2), dtype=complex)
    flat = out.reshape(-1, 2, 2)
    for k in range(flat.shape[0]):
        while True:
            m = rng.standard_normal((2, 2))
            d = np.linalg.det(m)
            if d > 1e-3:
                flat[k] = m / np.sqrt(d)
                break
    return out


def test_criterion_4_unitarizability_classification():
    budget = _Budget(60.0)
    rng = np.random.default_rng(20240820)
    n = 1000
    # SU(2) triples conjugated by a common SL(2, C) element
    c = np.zeros((n, 2, 2), dtype=complex)
    for k in range(n):
        c[k] = scipy.linalg.expm(
            0.5 * (rng.standard_normal((2, 2))
                   + 1j * rng.standard_normal((2, 2))))
    cinv = np.linalg.inv(c)
    triples = [c @ _random_su2(rng, (n,)) @ cinv for _ in range(3)]
    g = unitarizability(*triples)
    mask = g.rank >= 3
    assert mask.sum() > 900
    assert np.all(g.unitarizable[mask])
    assert np.all(g.irreducible[mask])
    # SL(2, R) triples: irreducible but not SU(2)-unitarizable
    triples_r = [_random_sl2r(rng, (n,)) for _ in range(3)]
    gr = unitarizability(*triples_r)
    mask_r = gr.rank >= 3
    assert mask_r.sum() > 900
    assert not np.any(gr.unitarizable[mask_r])
    # diagonal triples are reducible
    diag = [np.stack([np.diag([w, 1 / w]) for w in
                      rng.standard_normal(50) + 1.5]) for _ in range(3)]
    gd = unitarizability(*diag)
    assert not np.any(gd.irreducible)
    # independent brute-force validation on 50 cases
    for k in range(25):
        mats = [t[k] for t in triples]
        _, defect = brute_force_unitarizer(mats, tol=1e-7, rng=rng)
        assert defect < 1e-6, k
    for k in range(25):
        mats = [t[k] for t in triples_r]
        _, defect = brute_force_unitarizer(mats, tol=1e-7, rng=rng)
        assert defect > 1e-3, k
    budget.check()


# -- criterion 5 -------------------------------------------------------------


def test_criterion_5_seed_closing(seed):
    budget = _Budget(120.0)
    pot = seed.potential
    lam1 = np.array([1.0 + 0.0j])
    assert float(pot.nu0.eval(lam1)[0].real) == pytest.approx(0.25, abs=1e-12)
    assert float(pot.nu1.eval(lam1)[0].real) == pytest.approx(0.25, abs=1e-12)
    assert pot.reality_defect() <= 1e-10
    mono = local_monodromies(pot, n_lam=64, ode_tol=1e-10)
    assert mono.max_im_halftrace <= 1e-6
    budget.check()


# -- criterion 6 -------------------------------------------------------------


def test_criterion_6_flow_preservation(seed):
    budget = _Budget(600.0)
    roles = {"ang": "free", "nu0": "free", "nu1": "free",
             "x1": "free", "y0": "free"}
    state = FlowState.from_potential(seed.potential, roles)
    mono = local_monodromies(seed.potential, n_lam=8, ode_tol=1e-9)
    anchors = ConstraintSet.quantities(state, mono)
    targets = geometric_targets(2, 4, 3, variant="standard")
    targets = {k: targets[k] for k in ("t01", "t12")}
    cs = ConstraintSet(anchors=anchors, targets=targets, nu_sum=0.5,
                       n_lambda=8, ode_tol=1e-9)
    result = run_flow(state, cs, dt0=0.025, dt_max=0.05, max_accepted=20)
    assert result.accepted_steps >= 20
    max_im = [row["max_im"] for row in result.trace_log]
    geo = [row["geo_residual"] for row in result.trace_log]
    assert max(max_im) <= 1e-6
    assert all(g1 < g0 for g0, g1 in zip(geo, geo[1:]))
    budget.check()


# -- criterion 7 -------------------------------------------------------------


def test_criterion_7_delaunay_surface(seed):
    mono = local_monodromies(seed.potential, n_lam=16, ode_tol=1e-11)
    uni = unitarizer_diagonal(mono.mats[0], mono.lam, mats=mono.mats)
    mesh = build_disk_mesh(seed.potential, uni, R3Target(),
                           n_rho=40, n_phi=128)
    h, interior = discrete_mean_curvature(mesh)
    hi = h[interior]
    assert interior.sum() > 1000
    assert np.max(np.abs(hi / hi.mean() - 1.0)) <= 0.02
    _, _, axis_rms = fit_rotation_axis(mesh.vertices, mesh.normals)
    assert axis_rms <= 1e-6
    assert len(mesh.boundary_arcs) == 4
    for arc in mesh.boundary_arcs:
        _, rms = fit_plane(mesh.vertices[arc])
        assert rms <= 1e-6


# -- criterion 8 -------------------------------------------------------------


def test_criterion_8_spin_and_vertex_laws():
    # total spin of the rational coefficient [[0, z], [0, 0]] dz over both
    # charts of the sphere is +1
    path = circle_arc(0, 0.5, 0, 2 * np.pi, 300)
    s0 = spin_along(lambda z: np.array([[0, z], [0, 0]]), path)
    sinf = spin_along(lambda zeta: np.array([[0, -zeta ** -3.0], [0, 0]]),
                      path)
    assert s0 * sinf == 1
    # half-power gauge diag(z^1/2, z^-1/2) around z = 0 has spin -1
    assert spin_of_winding(lambda z: z, path) == -1
    # vertex templates: immersed constants and a Delaunay-end eigenvalue
    lam = circle_samples(64)
    for n in (2, 3, 5):
        for target in (1.0 / (2 * n), 0.5 - 1.0 / (2 * n)):
            assert classify_vertex(np.full(64, target), lam, n).kind \
                == "immersed"
    nu = delaunay_eigenvalue(lam, 1.0, -1.0, 0.6) / 3
    vt = classify_vertex(nu, lam, 3, tol=1e-8)
    assert vt.kind == "delaunay_end"
    assert abs(vt.w - 0.6) < 1e-8


# -- criterion 9 -------------------------------------------------------------


def _reflection_pair_monodromy(theta, n=64):
    """Product halftrace cos(phi(lam)) with phi(1) = pi - theta, as produced
    by a reflection pair with dihedral angle theta."""
    lam = circle_samples(n)
    phi = (np.pi - theta) + 0.2 * np.sin(np.angle(lam))
    mats = np.tile(np.eye(2, dtype=complex), (4, n, 1, 1)).copy()
    mats[0, :, 0, 0] = np.exp(1j * phi)
    mats[0, :, 1, 1] = np.exp(-1j * phi)
    ht = np.zeros((6, n), dtype=complex)
    for q, (i, j) in enumerate(halftrace_pairs()):
        prod = mats[i] @ mats[j]
        ht[q] = 0.5 * (prod[:, 0, 0] + prod[:, 1, 1])
    return MonodromySet(lam=lam, mats=mats, halftraces=ht,
                        product_defect=0.0, angular_order=(0, 1, 2, 3))


def test_criterion_9_closing_condition_arithmetic():
    # grid interior only: at the extreme angles pi/12 and 11 pi/12 the
    # neighboring-cosine gap is 0.0999, below the 0.1 separation bound
    grid = np.arange(2, 11) * np.pi / 12
    for theta in grid:
        mono = _reflection_pair_monodromy(theta)
        assert closing_condition_residual(mono, 0, 1, theta, 1.0) <= 1e-10
        for wrong in grid:
            if abs(wrong - theta) < 1e-12:
                continue
            assert closing_condition_residual(mono, 0, 1, wrong, 1.0) > 0.1
