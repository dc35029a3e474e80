import numpy as np
import pytest

from cmcquad.errors import BranchAmbiguity, LiftBreakdown, NotAdapted
from cmcquad.loops import ScalarLoop, circle_samples
from cmcquad.potential import (
    ConstantNu,
    DelaunayNu,
    GaugeLoop,
    SymmetricFuchsian,
    apply_gauge,
    check_reflection_symmetry,
    classify_vertex,
    circle_arc,
    delaunay_eigenvalue,
    hopf_differential,
    spin_along,
    spin_of_winding,
)


def make_potential(z0=np.exp(0.35j), nu=0.25):
    return SymmetricFuchsian(
        z0=z0,
        nu0=ConstantNu(nu),
        nu1=ConstantNu(nu),
        x=ScalarLoop.taylor([0.3, 0.12, -0.04]),
        y=ScalarLoop.taylor([0.2, 0.05]),
        p=ScalarLoop.taylor([1.0]),
    )


class TestSymmetricFuchsian:
    def test_residue_eigenvalues(self):
        pot = make_potential()
        lam = circle_samples(32)
        res = pot.residue_samples(lam)
        for k, nu in ((0, 0.25), (1, 0.25), (2, 0.25), (3, 0.25)):
            eig = np.linalg.eigvals(res[k])
            eig = np.sort_complex(eig)
            assert np.max(np.abs(np.abs(eig) - nu)) < 1e-12
            assert np.max(np.abs(eig.sum(axis=-1) if eig.ndim > 1 else
                                 res[k].trace(axis1=-2, axis2=-1))) < 1e-12

    def test_residues_sum_to_zero(self):
        # no pole at infinity
        pot = make_potential()
        checks = check_reflection_symmetry(pot)
        assert checks["residue_sum"] < 1e-13
        assert checks["sigma_pair_01"] == 0.0
        assert checks["sigma_pair_23"] == 0.0
        assert checks["reality"] == 0.0
        assert checks["plus"] == 0.0

    def test_poles_layout(self):
        pot = make_potential()
        z = pot.poles
        assert abs(z[1] + z[0]) < 1e-15
        assert abs(z[3] + z[2]) < 1e-15
        assert np.max(np.abs(np.abs(z) - 1.0)) < 1e-12

    def test_invalid_permutation_rejected(self):
        with pytest.raises(ValueError):
            SymmetricFuchsian(
                z0=np.exp(0.3j), nu0=ConstantNu(0.25), nu1=ConstantNu(0.25),
                x=ScalarLoop.taylor([0.3]), y=ScalarLoop.taylor([0.2]),
                p=ScalarLoop.taylor([1.0]),
                permutation=("1/z0", "-z0", "-1/z0"))

    def test_z0_off_circle_rejected(self):
        with pytest.raises(ValueError):
            SymmetricFuchsian(
                z0=1.1 * np.exp(0.3j), nu0=ConstantNu(0.25),
                nu1=ConstantNu(0.25), x=ScalarLoop.taylor([0.3]),
                y=ScalarLoop.taylor([0.2]), p=ScalarLoop.taylor([1.0]))

    def test_json_round_trip(self):
        pot = make_potential()
        back = SymmetricFuchsian.from_json(pot.to_json())
        assert abs(back.z0 - pot.z0) < 1e-15
        lam = circle_samples(16)
        assert np.max(np.abs(back.residue_samples(lam)
                             - pot.residue_samples(lam))) < 1e-14

    def test_json_round_trip_delaunay_nu(self):
        pot = make_potential()
        pot = SymmetricFuchsian(
            z0=pot.z0, nu0=DelaunayNu(w=0.7, scale=0.5), nu1=ConstantNu(0.25),
            x=pot.x, y=pot.y, p=pot.p)
        back = SymmetricFuchsian.from_json(pot.to_json())
        lam = circle_samples(16)
        assert np.max(np.abs(back.nu0.eval(lam) - pot.nu0.eval(lam))) < 1e-14

    def test_xi_lambda_coeff_upper_triangular(self):
        # the lam^-1 coefficient of the symmetric potential is adapted
        pot = make_potential()
        c = pot.xi_lambda_coeff(0.2 + 0.1j, -1)
        assert abs(c[1, 0]) < 1e-12
        assert abs(c[0, 0]) < 1e-12 and abs(c[1, 1]) < 1e-12


class TestDelaunayEigenvalue:
    def test_unduloid_form(self):
        # nu = 1/2 sqrt(1 + w/4 lam^-1 (lam-1)^2) at lam0 = lam1 = 1
        lam = circle_samples(64)
        for w in (0.25, 1.0):
            nu = delaunay_eigenvalue(lam, 1.0, 1.0, w / 4.0)
            theta = np.angle(lam)
            direct = 0.5 * np.sqrt(1.0 - w * np.sin(theta / 2) ** 2)
            assert np.max(np.abs(nu - direct)) < 1e-12

    def test_value_at_lambda0(self):
        # at a root of the quadratic the eigenvalue is 1/2
        assert abs(delaunay_eigenvalue(1.0, 1.0, -1.0, 0.8) - 0.5) < 1e-14

    def test_continuation_tracks_branch(self):
        # branch points are the zeros of 1 + lam^-1 (lam-l0)(lam-l1) w;
        # encircling one of them flips the sign of the square root
        l0, l1, w = 0.3, -1.0, 1.0
        roots = np.roots([w, 1.0 - w * (l0 + l1), w * l0 * l1])
        bp = roots[np.argmin(np.abs(roots - 0.2))]
        path = bp + 0.05 * np.exp(1j * np.linspace(0, 2 * np.pi, 800))
        val = delaunay_eigenvalue(path[0], l0, l1, w)
        for z in path[1:]:
            val = delaunay_eigenvalue(z, l0, l1, w, prev=val)
        first = delaunay_eigenvalue(path[0], l0, l1, w)
        assert abs(val + first) < 1e-10  # sign flipped after one loop


class TestClassifyVertex:
    def test_immersed_constant(self):
        lam = circle_samples(32)
        for n in (2, 3, 5):
            for target in (1.0 / (2 * n), 0.5 - 1.0 / (2 * n)):
                vt = classify_vertex(np.full(32, target), lam, n)
                assert vt.kind == "immersed"

    def test_delaunay_end_recovery(self):
        lam = circle_samples(64)
        n = 3
        w, l0, l1 = 0.6, 1.0, -1.0
        nu = delaunay_eigenvalue(lam, l0, l1, w) / n
        vt = classify_vertex(nu, lam, n, tol=1e-8)
        assert vt.kind == "delaunay_end"
        assert abs(vt.w - w) < 1e-8
        assert abs(vt.lambda0 * vt.lambda1 - l0 * l1) < 1e-8
        assert abs(vt.lambda0 + vt.lambda1 - (l0 + l1)) < 1e-8

    def test_rejects_garbage(self):
        lam = circle_samples(32)
        rng = np.random.default_rng(0)
        with pytest.raises(BranchAmbiguity):
            classify_vertex(0.25 + 0.1 * rng.standard_normal(32), lam, 2,
                            tol=1e-8)


class TestSpin:
    def test_odd_vanishing_gives_minus_one(self):
        path = circle_arc(0, 0.5, 0, 2 * np.pi, 200)
        spin = spin_along(lambda z: np.array([[0, z], [0, 0]]), path)
        assert spin == -1

    def test_even_vanishing_gives_plus_one(self):
        path = circle_arc(0, 0.5, 0, 2 * np.pi, 200)
        spin = spin_along(lambda z: np.array([[0, z ** 2], [0, 0]]), path)
        assert spin == 1

    def test_total_spin_on_sphere_is_plus_one(self):
        # xi_{-1} = [[0, z],[0,0]] dz: local spins at 0 and infinity multiply
        # to +1 (in the chart at infinity the coefficient is -zeta^-3 e12)
        path0 = circle_arc(0, 0.5, 0, 2 * np.pi, 200)
        s0 = spin_along(lambda z: np.array([[0, z], [0, 0]]), path0)
        pathinf = circle_arc(0, 0.5, 0, 2 * np.pi, 200)
        sinf = spin_along(
            lambda zeta: np.array([[0, -zeta ** -3.0], [0, 0]]), pathinf)
        assert s0 * sinf == 1

    def test_multiplicative_under_gauge(self):
        # gauge diag(sqrt z, 1/sqrt z) has spin -1 around 0
        path = circle_arc(0, 0.5, 0, 2 * np.pi, 300)
        assert spin_of_winding(lambda z: z, path) == -1
        # and leaves spin of the potential multiplied by -1:
        # xi_{-1} = [[0,z],[0,0]] gauged by diag(sqrt z, 1/sqrt z) has
        # lam^-1 coefficient [[0, z * (1/z)], [0,0]] -> spin +1 = (-1)*(-1)
        gauged = lambda z: np.array([[0, 1.0], [0, 0]])
        assert spin_along(gauged, path) == 1
        assert spin_along(lambda z: np.array([[0, z], [0, 0]]), path) \
            * spin_of_winding(lambda z: z, path) == 1

    def test_winding_zero_outside(self):
        path = circle_arc(3.0, 0.5, 0, 2 * np.pi, 200)
        assert spin_of_winding(lambda z: z, path) == 1

    def test_non_rank1_raises(self):
        path = circle_arc(0, 0.5, 0, 2 * np.pi, 50)
        with pytest.raises(LiftBreakdown):
            spin_along(lambda z: np.eye(2), path)


class _ConePotential:
    """xi = n A dz/z with A = [[1/(2n), lam^-1],[0, -1/(2n)]]."""

    def __init__(self, n):
        self.n = n

    def xi(self, z, lam):
        lam = np.asarray(lam, dtype=complex)
        a = np.zeros((lam.size, 2, 2), dtype=complex)
        a[:, 0, 0] = 0.5
        a[:, 1, 1] = -0.5
        a[:, 0, 1] = self.n / lam
        return a / z

    def xi_lambda_coeff(self, z, k, n_lam=64):
        lam = np.exp(2j * np.pi * np.arange(n_lam) / n_lam)
        c = np.fft.fft(self.xi(z, lam), axis=0) / n_lam
        return c[k % n_lam]


class TestGauge:
    def test_vertex_normalizing_gauge(self):
        # half-power gauge removes the cone pole: result [[0, n lam^-1],[0,0]]
        n = 3
        pot = _ConePotential(n)
        gauge = GaugeLoop(
            fn=lambda z, lam: np.tile(
                np.diag([z ** -0.5, z ** 0.5]), (len(np.atleast_1d(lam)), 1, 1)),
            dfn=lambda z, lam: np.tile(
                np.diag([-0.5 * z ** -1.5, 0.5 * z ** -0.5]),
                (len(np.atleast_1d(lam)), 1, 1)))
        gauged = apply_gauge(pot, gauge)
        lam = circle_samples(16)
        for z in (0.4, 0.2 + 0.1j):
            xi = gauged.xi(z, lam)
            expect = np.zeros_like(xi)
            expect[:, 0, 1] = n / lam
            assert np.max(np.abs(xi - expect)) < 1e-9

    def test_cauchy_derivative_matches_analytic(self):
        gauge_num = GaugeLoop(
            fn=lambda z, lam: np.tile(
                np.array([[np.exp(z), z ** 2], [0.0, np.exp(-z)]]),
                (len(np.atleast_1d(lam)), 1, 1)))
        lam = circle_samples(4)
        z = 0.3 + 0.2j
        d = gauge_num.derivative(z, lam)[0]
        expect = np.array([[np.exp(z), 2 * z], [0.0, -np.exp(-z)]])
        assert np.max(np.abs(d - expect)) < 1e-9

    def test_identity_gauge_fixes_potential(self):
        pot = make_potential()
        gauge = GaugeLoop(fn=lambda z, lam: np.tile(
            np.eye(2), (len(np.atleast_1d(lam)), 1, 1)))
        gauged = apply_gauge(pot, gauge)
        lam = circle_samples(16)
        z = 0.3 + 0.2j
        assert np.max(np.abs(gauged.xi(z, lam) - pot.xi(z, lam))) < 1e-9


class TestHopf:
    def test_quadratic_invariant(self):
        pot = make_potential()
        z = 0.25 + 0.15j
        q = hopf_differential(pot, z)
        # oracle: Q = -1/2 tr(xi_{-1} xi_0) computed from explicit coefficients
        xm1 = pot.xi_lambda_coeff(z, -1)
        x0 = pot.xi_lambda_coeff(z, 0)
        assert abs(q - (-0.5) * np.trace(xm1 @ x0)) < 1e-14

    def test_not_adapted_raises(self):
        pot = _ConePotential(2)

        class Lower:
            def xi_lambda_coeff(self, z, k, n_lam=64):
                c = pot.xi_lambda_coeff(z, k, n_lam)
                return c.T  # transpose: lower triangular now

        with pytest.raises(NotAdapted):
            hopf_differential(Lower(), 0.4)
