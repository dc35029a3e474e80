import numpy as np
import pytest
import scipy.linalg

from cmcquad.errors import (
    NotUnitarizableInput,
    PoleTooClose,
    ZeroOnCircle,
    ZeroPatternMismatch,
)
from cmcquad.loops import ScalarLoop, circle_samples
from cmcquad.monodromy import (
    Arc,
    Line,
    MonodromySet,
    brute_force_unitarizer,
    bulge_count,
    closing_condition_residual,
    halftrace_pairs,
    keyhole_segments,
    lambda_derivative,
    local_monodromies,
    transfer_matrix,
    translational_residual,
    unitarizability,
    unitarizer_diagonal,
)
from cmcquad.potential import ConstantNu, SymmetricFuchsian


def make_potential(z0=np.exp(0.35j), nu=0.25):
    return SymmetricFuchsian(
        z0=z0,
        nu0=ConstantNu(nu),
        nu1=ConstantNu(nu),
        x=ScalarLoop.taylor([0.3, 0.12, -0.04]),
        y=ScalarLoop.taylor([0.2, 0.05]),
        p=ScalarLoop.taylor([1.0]),
    )


class SinglePole:
    """xi = A dz/z with a lambda-independent residue A."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=complex)

    def xi(self, z, lam):
        return np.tile(self.a / z, (len(lam), 1, 1))


class FakeFuchsian:
    """Arbitrary poles with lambda-independent residues, for path tests."""

    def __init__(self, poles, residues):
        self.poles = list(poles)
        self._res = [np.asarray(r, dtype=complex) for r in residues]

    def residue_samples(self, lam):
        return np.stack([np.tile(r, (len(lam), 1, 1)) for r in self._res])


class TestTransfer:
    @pytest.mark.parametrize("nu", [0.1, 0.25, 0.4])
    def test_single_pole_exponential(self, nu):
        # for a constant residue A the full-circle transfer is exp(2 pi i A)
        y = 0.17
        a = np.array([[y, 1.0], [nu ** 2 - y ** 2, -y]])
        pot = SinglePole(a)
        lam = circle_samples(4)
        circle = [Arc(0.0, 1.0, 0.0, 2 * np.pi)]
        t = transfer_matrix(pot, circle, lam)
        expected = scipy.linalg.expm(2j * np.pi * a)
        assert np.max(np.abs(t - expected)) < 1e-8

    def test_path_reversal_inverts(self):
        a = np.array([[0.2, 1.0], [0.3, -0.2]])
        pot = SinglePole(a)
        lam = circle_samples(2)
        seg = Line(1.0, 2.0 + 1.0j)
        fwd = transfer_matrix(pot, [seg], lam)
        bwd = transfer_matrix(pot, [seg.reversed()], lam)
        assert np.max(np.abs(fwd @ bwd - np.eye(2))) < 1e-9

    def test_concatenation(self):
        a = np.array([[0.2, 1.0], [0.3, -0.2]])
        pot = SinglePole(a)
        lam = circle_samples(2)
        s1 = Line(1.0, 2.0)
        s2 = Line(2.0, 2.0 + 1.0j)
        whole = transfer_matrix(pot, [s1, s2], lam)
        parts = transfer_matrix(pot, [s1], lam) @ transfer_matrix(
            pot, [s2], lam)
        assert np.max(np.abs(whole - parts)) < 1e-9


class TestLocalMonodromies:
    def test_traces_and_product(self):
        pot = make_potential()
        mono = local_monodromies(pot, n_lam=8)
        # local exponents +-1/4: tr M_k = 2 cos(pi/2) = 0 at every lambda
        for k in range(4):
            tr = mono.mats[k, :, 0, 0] + mono.mats[k, :, 1, 1]
            assert np.max(np.abs(tr)) < 1e-7
        assert mono.product_defect < 1e-7
        assert sorted(mono.angular_order) == [0, 1, 2, 3]

    def test_halftrace_layout(self):
        pot = make_potential()
        mono = local_monodromies(pot, n_lam=8)
        for q, (i, j) in enumerate(halftrace_pairs()):
            prod = mono.mats[i] @ mono.mats[j]
            tr = 0.5 * (prod[:, 0, 0] + prod[:, 1, 1])
            assert np.max(np.abs(mono.halftraces[q] - tr)) < 1e-12
            assert np.max(np.abs(mono.halftrace(i, j) - tr)) < 1e-12
            assert np.max(np.abs(mono.halftrace(j, i) - tr)) < 1e-12

    def test_json_round_trip(self):
        pot = make_potential()
        mono = local_monodromies(pot, n_lam=4)
        back = MonodromySet.from_json(mono.to_json())
        assert np.max(np.abs(back.mats - mono.mats)) == 0.0
        assert np.max(np.abs(back.lam - mono.lam)) == 0.0
        assert back.product_defect == mono.product_defect
        assert back.angular_order == mono.angular_order

    def test_halftrace_csv(self):
        pot = make_potential()
        mono = local_monodromies(pot, n_lam=4)
        lines = mono.halftrace_csv().strip().splitlines()
        assert len(lines) == 1 + 4
        assert lines[0].split(",")[:3] == ["theta", "lam_re", "lam_im"]
        row = lines[1].split(",")
        assert len(row) == 3 + 12
        assert abs(float(row[3]) - mono.halftraces[0, 0].real) < 1e-12

    def test_keyhole_clearance(self):
        # the ring arc of the first keyhole grazes an interior pole
        a = np.array([[0.1, 1.0], [0.0, -0.1]])
        pot = FakeFuchsian([np.exp(2.0j), 0.8 * np.exp(1.0j)], [a, -a])
        with pytest.raises(PoleTooClose):
            local_monodromies(pot, n_lam=2)

    def test_keyhole_segments_geometry(self):
        poles = np.exp(1j * np.array([0.3, 1.2, 3.0, 4.5]))
        approach, circle = keyhole_segments(poles, 1, 0.1)
        assert abs(approach[0].point(0) - 1.0) < 1e-14
        assert abs(abs(approach[1].point(1.0)) - 0.9) < 1e-14
        assert abs(circle[0].point(0.0) - circle[0].point(1.0)) < 1e-14
        assert abs(abs(circle[0].point(0.37) - poles[1]) - 0.1) < 1e-14


class TestLambdaCalculus:
    def test_lambda_derivative(self):
        lam = circle_samples(32)
        vals = lam ** 2 + 3.0 / lam
        d = lambda_derivative(vals, lam)
        assert np.max(np.abs(d - (2 * lam - 3.0 / lam ** 2))) < 1e-10

    def test_lambda_derivative_matrix(self):
        lam = circle_samples(16)
        vals = np.zeros((16, 2, 2), dtype=complex)
        vals[:, 0, 0] = lam
        vals[:, 1, 1] = 1.0 / lam
        d = lambda_derivative(vals, lam)
        assert np.max(np.abs(d[:, 0, 0] - 1.0)) < 1e-12
        assert np.max(np.abs(d[:, 1, 1] + 1.0 / lam ** 2)) < 1e-12


def _synthetic_monodromy(theta, n=64):
    """M0 M1 has halftrace cos(phi(lam)) with phi(1) = pi - theta."""
    lam = circle_samples(n)
    ang = np.angle(lam)
    phi = (np.pi - theta) + 0.2 * np.sin(ang)
    mats = np.tile(np.eye(2, dtype=complex), (4, n, 1, 1)).copy()
    mats[0, :, 0, 0] = np.exp(1j * phi)
    mats[0, :, 1, 1] = np.exp(-1j * phi)
    ht = np.zeros((6, n), dtype=complex)
    for q, (i, j) in enumerate(halftrace_pairs()):
        prod = mats[i] @ mats[j]
        ht[q] = 0.5 * (prod[:, 0, 0] + prod[:, 1, 1])
    return MonodromySet(lam=lam, mats=mats, halftraces=ht,
                        product_defect=0.0, angular_order=(0, 1, 2, 3))


class TestClosingResiduals:
    @pytest.mark.parametrize("theta", [np.pi / 3, np.pi / 2, 7 * np.pi / 12])
    def test_correct_angle_closes(self, theta):
        mono = _synthetic_monodromy(theta)
        # cos(pi - theta) + cos(theta) = 0 at lam0 = 1
        assert closing_condition_residual(mono, 0, 1, theta, 1.0) < 1e-10

    def test_wrong_angle_fails(self):
        theta = np.pi / 2
        mono = _synthetic_monodromy(theta)
        for wrong in (theta - np.pi / 12, theta + np.pi / 12):
            assert closing_condition_residual(mono, 0, 1, wrong, 1.0) > 0.1

    def test_spin_flips_sign(self):
        theta = np.pi / 3
        mono = _synthetic_monodromy(theta)
        good = closing_condition_residual(mono, 0, 1, theta, 1.0, spin=1)
        flipped = closing_condition_residual(mono, 0, 1, np.pi - theta, 1.0,
                                             spin=-1)
        assert good < 1e-10 and flipped < 1e-10

    def test_translational_residual(self):
        mono = _synthetic_monodromy(np.pi / 3)
        # M2 M3 = I is lambda-independent; M0 M1 is not
        assert translational_residual(mono, 2, 3, 1.0) < 1e-12
        assert translational_residual(mono, 0, 1, 1.0) > 0.05


def random_su2(rng):
    a, b = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    norm = np.sqrt(abs(a) ** 2 + abs(b) ** 2)
    a, b = a / norm, b / norm
    return np.array([[a, b], [-np.conj(b), np.conj(a)]])


def random_sl2(rng):
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    return m / np.sqrt(np.linalg.det(m))


class TestUnitarizability:
    def test_conjugated_su2_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = scipy.linalg.expm(rng.standard_normal((2, 2))
                                  + 1j * rng.standard_normal((2, 2)))
            cinv = np.linalg.inv(c)
            p1, p2, p3 = (c @ random_su2(rng) @ cinv for _ in range(3))
            g = unitarizability(p1, p2, p3)
            assert g.irreducible
            assert g.unitarizable

    def test_generic_sl2_triples_rejected(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            p1, p2, p3 = (random_sl2(rng) for _ in range(3))
            g = unitarizability(p1, p2, p3)
            assert g.irreducible
            assert not g.unitarizable

    def test_vectorized_batch(self):
        rng = np.random.default_rng(3)
        c = scipy.linalg.expm(0.4 * (rng.standard_normal((2, 2))
                                     + 1j * rng.standard_normal((2, 2))))
        cinv = np.linalg.inv(c)
        good = [tuple(c @ random_su2(rng) @ cinv for _ in range(3))
                for _ in range(5)]
        bad = [tuple(random_sl2(rng) for _ in range(3)) for _ in range(5)]
        trips = good + bad
        p1 = np.stack([t[0] for t in trips])
        p2 = np.stack([t[1] for t in trips])
        p3 = np.stack([t[2] for t in trips])
        g = unitarizability(p1, p2, p3)
        assert g.unitarizable.shape == (10,)
        assert np.all(g.unitarizable[:5])
        assert not np.any(g.unitarizable[5:])

    def test_brute_force_agrees(self):
        rng = np.random.default_rng(5)
        c = scipy.linalg.expm(0.5 * np.array([[0.3, 0.2 + 0.1j],
                                              [0.2 - 0.1j, -0.3]]))
        cinv = np.linalg.inv(c)
        mats = [c @ random_su2(rng) @ cinv for _ in range(3)]
        found, defect = brute_force_unitarizer(mats, tol=1e-7, rng=rng)
        assert defect < 1e-7
        bad = [random_sl2(rng) for _ in range(3)]
        _, bad_defect = brute_force_unitarizer(bad, tol=1e-7, rng=rng)
        assert bad_defect > 1e-3


class TestBulgeCount:
    def test_zero_counts(self):
        assert bulge_count(ScalarLoop.taylor([2.0, 0.5])) == 0
        assert bulge_count(ScalarLoop.taylor([0.5, 2.0])) == 1
        # (lam - 0.3)(lam - 0.2i): both roots inside the disk
        assert bulge_count(
            ScalarLoop.taylor([0.06j, -0.3 - 0.2j, 1.0])) == 2

    def test_zero_on_circle_rejected(self):
        with pytest.raises(ZeroOnCircle):
            bulge_count(ScalarLoop.taylor([1.0, 1.0]))


def _unitary_loop_samples(lam, shift=0.0):
    """Pointwise SU(2) samples, analytic in theta, off-diagonal nonzero."""
    ang = np.angle(lam)
    out = np.zeros((lam.size, 2, 2), dtype=complex)
    for s, th in enumerate(ang):
        h = np.array([[0.3 * np.cos(th + shift), 0.1 + 0.2 * np.exp(1j * th)],
                      [0.1 + 0.2 * np.exp(-1j * th), -0.3 * np.cos(th + shift)]])
        out[s] = scipy.linalg.expm(1j * h)
    return out


class TestDiagonalUnitarizer:
    def test_recovers_construction(self):
        lam = circle_samples(64)
        x_true = 2.0 + 0.5 * lam
        d = np.zeros((64, 2, 2), dtype=complex)
        d[:, 0, 0] = 1.0 / np.sqrt(x_true)
        d[:, 1, 1] = np.sqrt(x_true)
        dinv = np.zeros_like(d)
        dinv[:, 0, 0] = np.sqrt(x_true)
        dinv[:, 1, 1] = 1.0 / np.sqrt(x_true)
        mats = np.stack([d @ _unitary_loop_samples(lam, sh) @ dinv
                         for sh in (0.0, 0.7, 1.4)])
        res = unitarizer_diagonal(mats[0], lam, mats=mats)
        assert abs(res.x.coeff(0) - 2.0) < 1e-8
        assert abs(res.x.coeff(1) - 0.5) < 1e-8
        assert res.unitarity_defect < 1e-7
        assert res.bulges == 0
        assert np.max(np.abs(res.sqrt_x_samples ** 2 - x_true)) < 1e-7

    def test_zero_free_factor_of_modulus_squared(self):
        # real positive diagonal x_true = |lam - 0.4|^2: here p = x_true^2
        # and the recovered factor is the zero-free representative
        # (1 - 0.4 lam)^2 with |x| = x_true on the circle
        lam = circle_samples(64)
        x_true = (lam - 0.4) * (np.conj(lam) - 0.4)
        assert np.max(np.abs(x_true.imag)) < 1e-12
        d = np.zeros((64, 2, 2), dtype=complex)
        d[:, 0, 0] = 1.0 / np.sqrt(x_true + 0j)
        d[:, 1, 1] = np.sqrt(x_true + 0j)
        dinv = np.zeros_like(d)
        dinv[:, 0, 0] = d[:, 1, 1]
        dinv[:, 1, 1] = d[:, 0, 0]
        m0 = d @ _unitary_loop_samples(lam) @ dinv
        res = unitarizer_diagonal(m0, lam)
        assert abs(res.x.coeff(0) - 1.0) < 1e-8
        assert abs(res.x.coeff(1) + 0.8) < 1e-8
        assert abs(res.x.coeff(2) - 0.16) < 1e-8
        assert np.max(np.abs(np.abs(res.x.eval(lam)) - np.abs(x_true))) < 1e-8
        assert res.bulges == 0

    def test_rejects_complex_p(self):
        rng = np.random.default_rng(1)
        m0 = rng.standard_normal((16, 2, 2)) + 1j * rng.standard_normal(
            (16, 2, 2))
        with pytest.raises(NotUnitarizableInput):
            unitarizer_diagonal(m0, circle_samples(16))

    def test_rejects_sign_change(self):
        lam = circle_samples(32)
        p = np.cos(np.angle(lam))  # real, changes sign
        m0 = np.zeros((32, 2, 2), dtype=complex)
        m0[:, 0, 1] = 1.0
        m0[:, 1, 0] = -p
        with pytest.raises(ZeroPatternMismatch):
            unitarizer_diagonal(m0, lam)
