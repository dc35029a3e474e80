"""Monodromy of Fuchsian frame equations and unitarizability tests.

The frame Phi solves d Phi = Phi xi along paths in the z-plane, sampled over
a grid of lambda points on the unit circle (one independent 2x2 ODE per
sample).  Local monodromies around the poles are computed along keyhole
paths from the basepoint z = 1; halftraces t_ij = 1/2 tr(M_i M_j) are the
intrinsic closing data.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.integrate import solve_ivp

from .errors import (
    NotUnitarizableInput,
    PoleTooClose,
    ZeroOnCircle,
    ZeroPatternMismatch,
)
from .loops import ScalarLoop, birkhoff_scalar_positive, circle_samples

__all__ = [
    "Line",
    "Arc",
    "transfer_matrix",
    "keyhole_segments",
    "local_monodromies",
    "MonodromySet",
    "halftrace_pairs",
    "lambda_derivative",
    "closing_condition_residual",
    "translational_residual",
    "GramData",
    "unitarizability",
    "brute_force_unitarizer",
    "unitarizer_diagonal",
    "DiagonalUnitarizer",
    "bulge_count",
]


class Line:
    def __init__(self, z0, z1):
        self.z0, self.z1 = complex(z0), complex(z1)

    def point(self, t):
        return self.z0 + (self.z1 - self.z0) * t

    def dpoint(self, t):
        return self.z1 - self.z0

    def reversed(self):
        return Line(self.z1, self.z0)


class Arc:
    def __init__(self, center, radius, ang0, ang1):
        self.center, self.radius = complex(center), float(radius)
        self.ang0, self.ang1 = float(ang0), float(ang1)

    def point(self, t):
        a = self.ang0 + (self.ang1 - self.ang0) * t
        return self.center + self.radius * np.exp(1j * a)

    def dpoint(self, t):
        a = self.ang0 + (self.ang1 - self.ang0) * t
        return 1j * (self.ang1 - self.ang0) * self.radius * np.exp(1j * a)

    def reversed(self):
        return Arc(self.center, self.radius, self.ang1, self.ang0)


def _xi_closure(potential, lam: np.ndarray):
    """Return xi_at(z) -> (nlam,2,2) with residues precomputed if Fuchsian."""
    if hasattr(potential, "residue_samples") and hasattr(potential, "poles"):
        res = potential.residue_samples(lam)
        poles = np.asarray(potential.poles)

        def xi_at(z):
            out = res[0] / (z - poles[0])
            for k in range(1, len(poles)):
                out = out + res[k] / (z - poles[k])
            return out

        return xi_at
    return lambda z: potential.xi(z, lam)


def transfer_matrix(potential, segments, lam: np.ndarray,
                    ode_tol: float = 1e-11) -> np.ndarray:
    """T with Phi(end) = Phi(start) T along the path, per lambda sample.

    Determinant drift is renormalized after each segment (T has det 1
    whenever xi is trace free).
    """
    lam = np.asarray(lam, dtype=complex)
    nl = lam.size
    xi_at = _xi_closure(potential, lam)
    t = np.tile(np.eye(2, dtype=complex), (nl, 1, 1))

    for seg in segments:
        def rhs(s, yflat):
            y = yflat.reshape(nl, 2, 2)
            w = xi_at(seg.point(s)) * seg.dpoint(s)
            return (y @ w).reshape(-1)

        sol = solve_ivp(rhs, (0.0, 1.0), t.reshape(-1), method="DOP853",
                        rtol=ode_tol, atol=ode_tol)
        if not sol.success:  # pragma: no cover - scipy failure
            raise RuntimeError("frame integration failed: %s" % sol.message)
        t = sol.y[:, -1].reshape(nl, 2, 2)
        det = t[:, 0, 0] * t[:, 1, 1] - t[:, 0, 1] * t[:, 1, 0]
        t = t / np.sqrt(det)[:, None, None]
    return t


def keyhole_segments(poles: np.ndarray, k: int, r_loc: float,
                     base: complex = 1.0 + 0.0j):
    """(approach, circle) segments of the keyhole path around pole k.

    The approach runs radially inward from the basepoint to the ring of
    radius 1 - r_loc, along the ring to the pole angle, ending on the circle
    of radius r_loc around the pole; the circle is traversed once
    counterclockwise.
    """
    phi = float(np.angle(poles[k])) % (2 * np.pi)
    rho = 1.0 - r_loc
    approach = [Line(base, rho * base / abs(base)),
                Arc(0.0, rho, np.angle(base), np.angle(base) + phi)]
    circle = [Arc(poles[k], r_loc, phi + np.pi, phi + 3 * np.pi)]
    return approach, circle


def _check_clearance(segments, poles, r_min, skip=None):
    ts = np.linspace(0, 1, 64)
    for seg in segments:
        pts = np.array([seg.point(t) for t in ts])
        for j, p in enumerate(poles):
            if skip is not None and j == skip:
                continue
            if np.min(np.abs(pts - p)) < r_min:
                raise PoleTooClose(
                    "path within %.3g of pole %d" % (r_min, j))


HALFTRACE_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def halftrace_pairs():
    return HALFTRACE_PAIRS


@dataclass
class MonodromySet:
    lam: np.ndarray                 # (nlam,) unit-circle samples
    mats: np.ndarray                # (4, nlam, 2, 2) local monodromies
    halftraces: np.ndarray          # (6, nlam), pair order HALFTRACE_PAIRS
    product_defect: float           # min over sign of |M_a3 M_a2 M_a1 M_a0 -+ I|
    angular_order: tuple            # pole indices sorted by angle

    @property
    def max_im_halftrace(self) -> float:
        return float(np.max(np.abs(self.halftraces.imag)))

    def halftrace(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self.halftraces[HALFTRACE_PAIRS.index((i, j))]

    def pair_product(self, i: int, j: int) -> np.ndarray:
        return self.mats[i] @ self.mats[j]

    def to_json(self) -> str:
        def arr(a):
            return [[float(v.real), float(v.imag)] for v in np.ravel(a)]
        return json.dumps({
            "lam": arr(self.lam),
            "mats": arr(self.mats),
            "halftraces": arr(self.halftraces),
            "product_defect": self.product_defect,
            "angular_order": list(self.angular_order),
        })

    @classmethod
    def from_json(cls, text: str) -> "MonodromySet":
        d = json.loads(text)

        def unarr(pairs, shape):
            flat = np.array([complex(re, im) for re, im in pairs])
            return flat.reshape(shape)

        nl = len(d["lam"])
        return cls(lam=unarr(d["lam"], (nl,)),
                   mats=unarr(d["mats"], (4, nl, 2, 2)),
                   halftraces=unarr(d["halftraces"], (6, nl)),
                   product_defect=float(d["product_defect"]),
                   angular_order=tuple(d["angular_order"]))

    def halftrace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        header = ["theta", "lam_re", "lam_im"]
        for i, j in HALFTRACE_PAIRS:
            header += ["t%d%d_re" % (i, j), "t%d%d_im" % (i, j)]
        w.writerow(header)
        for s in range(self.lam.size):
            row = [float(np.angle(self.lam[s])), self.lam[s].real,
                   self.lam[s].imag]
            for q in range(6):
                row += [self.halftraces[q, s].real, self.halftraces[q, s].imag]
            w.writerow(row)
        return buf.getvalue()


def local_monodromies(potential, n_lam: int = 64, ode_tol: float = 1e-11,
                      r_loc_factor: float = 0.25,
                      lam: np.ndarray | None = None) -> MonodromySet:
    """Local monodromies M_k around each pole, based at z = 1."""
    lam = circle_samples(n_lam) if lam is None else np.asarray(lam, complex)
    poles = np.asarray(potential.poles)
    npoles = len(poles)
    dists = [abs(poles[i] - poles[j])
             for i in range(npoles) for j in range(i + 1, npoles)]
    r_loc = r_loc_factor * min(dists)
    mats = np.zeros((npoles, lam.size, 2, 2), dtype=complex)
    for k in range(npoles):
        approach, circle = keyhole_segments(poles, k, r_loc)
        _check_clearance(approach + circle, poles, 0.9 * r_loc, skip=k)
        ta = transfer_matrix(potential, approach, lam, ode_tol)
        tc = transfer_matrix(potential, circle, lam, ode_tol)
        mats[k] = ta @ tc @ np.linalg.inv(ta)

    ht = np.zeros((6, lam.size), dtype=complex)
    for q, (i, j) in enumerate(HALFTRACE_PAIRS):
        prod = mats[i] @ mats[j]
        ht[q] = 0.5 * (prod[:, 0, 0] + prod[:, 1, 1])

    order = tuple(int(k) for k in np.argsort(np.angle(poles) % (2 * np.pi)))
    prod = np.tile(np.eye(2, dtype=complex), (lam.size, 1, 1))
    for k in order:
        prod = mats[k] @ prod
    eye = np.eye(2)
    defect = min(float(np.max(np.abs(prod - eye))),
                 float(np.max(np.abs(prod + eye))))
    return MonodromySet(lam=lam, mats=mats, halftraces=ht,
                        product_defect=defect, angular_order=order)


def lambda_derivative(values: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """d/d lambda of circle-sampled data via Fourier differentiation.

    values has the sample axis first and must come from the equally spaced
    grid circle_samples(n).
    """
    n = values.shape[0]
    c = np.fft.fft(values, axis=0) / n
    k = np.fft.fftfreq(n, d=1.0 / n)
    dtheta = np.fft.ifft((1j * k)[(...,) + (None,) * (values.ndim - 1)] * c * n,
                         axis=0)
    return dtheta / (1j * lam[(...,) + (None,) * (values.ndim - 1)])


def _eval_fourier(values: np.ndarray, lam_grid: np.ndarray, lam0: complex):
    n = values.shape[0]
    c = np.fft.fft(values, axis=0) / n
    k = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    powers = lam0 ** k
    return np.tensordot(powers, c, axes=([0], [0]))


def closing_condition_residual(mono: MonodromySet, i: int, j: int,
                               theta: float, lam0: complex,
                               spin: int = 1) -> float:
    """|1/2 tr(M_i M_j)(lam0) + spin cos(theta)|: zero iff the boundary-arc
    pair closes with dihedral angle theta (given the spin of the potential
    along the connecting curve)."""
    prod = mono.pair_product(i, j)
    tr = 0.5 * (prod[:, 0, 0] + prod[:, 1, 1])
    val = _eval_fourier(tr, mono.lam, complex(lam0))
    return float(np.abs(val + spin * np.cos(theta)))


def translational_residual(mono: MonodromySet, i: int, j: int,
                           lam0: complex) -> float:
    """|d(M_i M_j)/d lambda at lam0|: zero for translational (coincident
    parallel plane) pairs."""
    prod = mono.pair_product(i, j)
    dproq = lambda_derivative(prod, mono.lam)
    val = _eval_fourier(dproq, mono.lam, complex(lam0))
    return float(np.max(np.abs(val)))


# -- unitarizability ---------------------------------------------------------

# Basis (id, e0, e1, e2) identifying gl(2,C) with C^4; the bilinear pairing
# <x,y> = 1/2 tr(x adj(y)) is the standard symmetric form in coordinates.
_E0 = np.array([[1j, 0], [0, -1j]])
_E1 = np.array([[0, 1], [-1, 0]])
_E2 = np.array([[0, 1j], [1j, 0]])


def _gl2_coords(mats: np.ndarray) -> np.ndarray:
    """Coordinates in basis (id, e0, e1, e2); mats (..., 2, 2) -> (..., 4)."""
    a = mats[..., 0, 0]
    b = mats[..., 0, 1]
    c = mats[..., 1, 0]
    d = mats[..., 1, 1]
    return np.stack([(a + d) / 2, (a - d) / 2j, (b - c) / 2, (b + c) / 2j],
                    axis=-1)


@dataclass
class GramData:
    t: np.ndarray           # (..., 4, 4) complex symmetric Gram matrices
    rank: np.ndarray        # (...,) numerical rank
    irreducible: np.ndarray  # (...,) bool, rank >= 3
    real_defect: np.ndarray  # (...,) max |Im T|
    min_eig: np.ndarray     # (...,) smallest eigenvalue of Re T
    unitarizable: np.ndarray  # (...,) bool


def unitarizability(p1: np.ndarray, p2: np.ndarray, p3: np.ndarray,
                    rank_tol: float = 1e-8, psd_tol: float = 1e-8) -> GramData:
    """SU(2)-unitarizability of the group generated by p1, p2, p3.

    Columns (id, p1, p2, p3) in C^4 give T = P^T P; for irreducible groups
    (rank >= 3) the generators are simultaneously unitarizable iff T is real
    positive semidefinite.
    """
    p0 = np.broadcast_to(np.eye(2), np.shape(p1))
    cols = np.stack([_gl2_coords(np.asarray(p, dtype=complex))
                     for p in (p0, p1, p2, p3)], axis=-1)
    t = np.swapaxes(cols, -1, -2) @ cols
    sv = np.linalg.svd(cols, compute_uv=False)
    rank = np.sum(sv > rank_tol * sv[..., :1], axis=-1)
    irreducible = rank >= 3
    real_defect = np.max(np.abs(t.imag), axis=(-1, -2))
    eigs = np.linalg.eigvalsh((t.real + np.swapaxes(t.real, -1, -2)) / 2)
    min_eig = eigs[..., 0]
    unitarizable = irreducible & (real_defect <= psd_tol) & (min_eig >= -psd_tol)
    return GramData(t=t, rank=rank, irreducible=irreducible,
                    real_defect=real_defect, min_eig=min_eig,
                    unitarizable=unitarizable)


def brute_force_unitarizer(mats: list[np.ndarray], tol: float = 1e-8,
                           restarts: int = 6, rng=None):
    """Search C = exp(h), h Hermitian traceless, with C M C^-1 all unitary.

    Returns (C, defect); defect <= tol means a simultaneous unitarizer was
    found.  Independent oracle for the Gram-matrix test.
    """
    rng = np.random.default_rng(0) if rng is None else rng

    def unpack(v):
        h = np.array([[v[0], v[1] + 1j * v[2]],
                      [v[1] - 1j * v[2], -v[0]]])
        return scipy.linalg.expm(h)

    def cost(v):
        c = unpack(v)
        cinv = np.linalg.inv(c)
        total = 0.0
        for m in mats:
            u = c @ m @ cinv
            g = u @ np.conj(u.T) - np.eye(2)
            total += float(np.sum(np.abs(g) ** 2))
        return total

    best = (None, np.inf)
    starts = [np.zeros(3)] + [rng.standard_normal(3) for _ in range(restarts)]
    for v0 in starts:
        res = scipy.optimize.minimize(cost, v0, method="Nelder-Mead",
                                      options={"xatol": 1e-12, "fatol": 1e-16,
                                               "maxiter": 4000})
        if res.fun < best[1]:
            best = (res.x, res.fun)
        if best[1] < tol ** 2:
            break
    c = unpack(best[0])
    return c, float(np.sqrt(max(best[1], 0.0)))


@dataclass
class DiagonalUnitarizer:
    x: ScalarLoop                 # diagonal entry squared: D = diag(x^-1/2, x^1/2)
    sqrt_x_samples: np.ndarray    # x^{1/2} on the lambda grid
    lam: np.ndarray
    unitarity_defect: float       # worst defect of D^-1 M_k D over the grid
    bulges: int                   # zeros of x in the unit disk


def bulge_count(x: ScalarLoop, n_samples: int = 1024,
                zero_tol: float = 1e-9) -> int:
    """Number of zeros of x inside the unit disk (winding of x over S^1)."""
    s = x.samples(n_samples)
    if np.min(np.abs(s)) < zero_tol * np.max(np.abs(s)):
        raise ZeroOnCircle("x vanishes on the unit circle")
    dphi = np.angle(s[np.r_[1:n_samples, 0]] / s)
    winding = int(round(float(np.sum(dphi)) / (2 * np.pi)))
    # minus the pole order at 0 contributed by negative Fourier modes: x is
    # plus type here, so the winding counts disk zeros directly
    return winding


def unitarizer_diagonal(m0: np.ndarray, lam: np.ndarray,
                        mats: np.ndarray | None = None,
                        real_tol: float = 1e-8,
                        n_taylor: int = 24) -> DiagonalUnitarizer:
    """Diagonal unitarizer from the first local monodromy M0 = [[a,b],[c,a*]].

    p := -conj(c)/b is real positive on the circle for intrinsically closed
    monodromy; q = p is factored as q = x* x by the positive scalar Birkhoff
    factorization and D = diag(x^-1/2, x^1/2) conjugates the monodromy into
    SU(2).  (The general case divides out circle zero/pole pairs of p first;
    data with such zeros is rejected.)
    """
    lam = np.asarray(lam, dtype=complex)
    b = m0[:, 0, 1]
    c = m0[:, 1, 0]
    if np.min(np.abs(b)) < 1e-12 * np.max(np.abs(b)):
        raise ZeroPatternMismatch("M0 upper-right entry vanishes on the grid")
    p = -np.conj(c) / b
    scale = float(np.max(np.abs(p)))
    if float(np.max(np.abs(p.imag))) > real_tol * scale:
        raise NotUnitarizableInput(
            "p = -conj(c)/b is not real on the circle (defect %.2e)"
            % float(np.max(np.abs(p.imag))))
    if np.min(p.real) <= 0:
        raise ZeroPatternMismatch(
            "p changes sign on the circle; zero/pole pairing not implemented")
    n = lam.size
    q = ScalarLoop.from_samples(p, min(n_taylor, n // 2 - 1))
    bk = birkhoff_scalar_positive(q, tol=1e-9, n_samples=max(4 * n, 256))
    x = bk.y
    # x^{1/2} = exp(w/2) with x = exp(w), w plus
    m = bk.n_samples
    a = bk.log_coeffs
    placed = np.zeros(m, dtype=complex)
    placed[0] = a[0] / 4.0
    placed[1: m // 2] = a[1: m // 2] / 2.0
    w_half = np.fft.ifft(placed) * m
    sqrt_x_full = np.exp(w_half)
    # restrict to the requested lambda grid (m is a multiple of n)
    step = m // n
    sqrt_x = sqrt_x_full[::step] if m % n == 0 else \
        _eval_fourier(sqrt_x_full[:, None], circle_samples(m), 1.0)
    if m % n != 0:  # pragma: no cover - grids are powers of two
        sqrt_x = np.array([_eval_fourier(sqrt_x_full, circle_samples(m), l0)
                           for l0 in lam])
    defect = np.nan
    if mats is not None:
        d = np.zeros((n, 2, 2), dtype=complex)
        d[:, 0, 0] = 1.0 / sqrt_x
        d[:, 1, 1] = sqrt_x
        dinv = np.zeros_like(d)
        dinv[:, 0, 0] = sqrt_x
        dinv[:, 1, 1] = 1.0 / sqrt_x
        worst = 0.0
        for k in range(mats.shape[0]):
            u = dinv @ mats[k] @ d
            g = u @ np.conj(np.swapaxes(u, -1, -2)) - np.eye(2)
            worst = max(worst, float(np.max(np.abs(g))))
        defect = worst
    return DiagonalUnitarizer(x=x, sqrt_x_samples=sqrt_x, lam=lam,
                              unitarity_defect=float(defect),
                              bulges=bulge_count(x))
