"""DPW potentials on the 4-punctured sphere and their local structure.

The central object is the symmetric Fuchsian potential

    xi = sum_k A_k / (z - z_k) dz

with four simple poles on the unit circle at z0, z1 = -z0 and z2, z3 = -z2
(z2 in {1/z0, -1/z0}), residues

    A0 = [[y, p/lam], [lam (nu0^2 - y^2)/p, -y]],   A1 = sigma A0 sigma^-1,
    A2 = [[-y, (nu1^2 - y^2)/x], [x, y]],           A3 = sigma A2 sigma^-1,

sigma = diag(i, -i), where x, y are holomorphic functions of lam on the disk
with real Taylor coefficients and p is a real polynomial in lam.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    BranchAmbiguity,
    LiftBreakdown,
    NotAdapted,
    SingularGauge,
)
from .loops import Loop, ScalarLoop, circle_samples

__all__ = [
    "SIGMA",
    "ConstantNu",
    "DelaunayNu",
    "delaunay_eigenvalue",
    "SymmetricFuchsian",
    "GaugeLoop",
    "GaugedPotential",
    "apply_gauge",
    "hopf_differential",
    "spin_along",
    "spin_of_winding",
    "classify_vertex",
    "VertexType",
    "check_reflection_symmetry",
    "circle_arc",
]

SIGMA = np.diag([1j, -1j])


def _sigma_conj(mats: np.ndarray) -> np.ndarray:
    """sigma M sigma^-1 negates the off-diagonal entries."""
    out = mats.copy()
    out[..., 0, 1] *= -1
    out[..., 1, 0] *= -1
    return out


def delaunay_eigenvalue(lam, lambda0=1.0, lambda1=-1.0, w=1.0, prev=None):
    """nu(lam) = 1/2 sqrt(1 + lam^-1 (lam-lambda0)(lam-lambda1) w).

    Principal branch by default; with ``prev`` given, the branch nearest the
    previous value is chosen (continuation), and a near-orthogonal jump
    raises BranchAmbiguity.
    """
    lam = np.asarray(lam, dtype=complex)
    val = 0.5 * np.sqrt(1.0 + (lam - lambda0) * (lam - lambda1) * w / lam)
    if prev is not None:
        d_keep = np.abs(val - prev)
        d_flip = np.abs(val + prev)
        val = np.where(d_flip < d_keep, -val, val)
        close = np.abs(d_keep - d_flip) > 1e-3 * (np.abs(val) + np.abs(prev))
        if not np.all(close | (np.abs(val) < 1e-12)):
            raise BranchAmbiguity(
                "square-root branches equidistant from previous value")
    return val


class ConstantNu:
    """Constant residue eigenvalue function."""

    mode = "constant"

    def __init__(self, value: float):
        self.value = float(value)

    def eval(self, lam) -> np.ndarray:
        return np.full(np.shape(lam), self.value, dtype=complex)

    def to_jsonable(self):
        return {"mode": "constant", "value": self.value}


class DelaunayNu:
    """Residue eigenvalue scale * nu_Delaunay(lam; lambda0, lambda1, w)."""

    mode = "delaunay"

    def __init__(self, w: float, lambda0=1.0, lambda1=-1.0, scale: float = 1.0):
        self.w = float(w)
        self.lambda0 = complex(lambda0)
        self.lambda1 = complex(lambda1)
        self.scale = float(scale)

    def eval(self, lam) -> np.ndarray:
        return self.scale * delaunay_eigenvalue(
            lam, self.lambda0, self.lambda1, self.w)

    def to_jsonable(self):
        return {"mode": "delaunay", "w": self.w, "scale": self.scale,
                "lambda0": [self.lambda0.real, self.lambda0.imag],
                "lambda1": [self.lambda1.real, self.lambda1.imag]}


def _nu_from_jsonable(data) -> ConstantNu | DelaunayNu:
    if data["mode"] == "constant":
        return ConstantNu(data["value"])
    return DelaunayNu(w=data["w"], scale=data["scale"],
                      lambda0=complex(*data["lambda0"]),
                      lambda1=complex(*data["lambda1"]))


_VALID_PERMS = (("-z0", "-1/z0", "1/z0"), ("-z0", "1/z0", "-1/z0"))


@dataclass
class SymmetricFuchsian:
    """Symmetric 4-pole Fuchsian potential; see module docstring."""

    z0: complex
    nu0: ConstantNu | DelaunayNu
    nu1: ConstantNu | DelaunayNu
    x: ScalarLoop
    y: ScalarLoop
    p: ScalarLoop
    permutation: tuple = _VALID_PERMS[0]

    def __post_init__(self):
        if tuple(self.permutation) not in _VALID_PERMS:
            raise ValueError(
                "permutation %r breaks the sigma-symmetry pairing; "
                "allowed: %r" % (self.permutation, _VALID_PERMS))
        z0 = complex(self.z0)
        if not (abs(abs(z0) - 1.0) < 1e-9 and 0 < np.angle(z0) < np.pi / 2):
            raise ValueError("z0 must lie on S^1 in the open first quadrant")

    @property
    def poles(self) -> np.ndarray:
        z0 = complex(self.z0)
        lookup = {"-z0": -z0, "1/z0": 1.0 / z0, "-1/z0": -1.0 / z0}
        return np.array([z0] + [lookup[s] for s in self.permutation])

    def residue_samples(self, lam: np.ndarray) -> np.ndarray:
        """Residue matrices at the four poles; shape (4, nlam, 2, 2)."""
        lam = np.asarray(lam, dtype=complex)
        xs = self.x.eval(lam)
        ys = self.y.eval(lam)
        ps = self.p.eval(lam)
        n0 = self.nu0.eval(lam)
        n1 = self.nu1.eval(lam)
        a = np.zeros((4, lam.size, 2, 2), dtype=complex)
        a0 = np.zeros((lam.size, 2, 2), dtype=complex)
        a0[:, 0, 0] = ys
        a0[:, 0, 1] = ps / lam
        a0[:, 1, 0] = lam * (n0 ** 2 - ys ** 2) / ps
        a0[:, 1, 1] = -ys
        a2 = np.zeros((lam.size, 2, 2), dtype=complex)
        a2[:, 0, 0] = -ys
        a2[:, 0, 1] = (n1 ** 2 - ys ** 2) / xs
        a2[:, 1, 0] = xs
        a2[:, 1, 1] = ys
        a[0] = a0
        a[1] = _sigma_conj(a0)
        a[2] = a2
        a[3] = _sigma_conj(a2)
        return a

    def xi(self, z, lam: np.ndarray) -> np.ndarray:
        """xi(z, .) on the lam samples; shape (nlam, 2, 2)."""
        res = self.residue_samples(lam)
        poles = self.poles
        out = np.zeros_like(res[0])
        for k in range(4):
            out += res[k] / (z - poles[k])
        return out

    def xi_lambda_coeff(self, z, k: int, n_lam: int = 64) -> np.ndarray:
        """Coefficient of lam^k of xi(z, .) via Fourier fit."""
        lam = circle_samples(n_lam)
        vals = self.xi(z, lam)
        c = np.fft.fft(vals, axis=0) / n_lam
        return c[k % n_lam]

    def reality_defect(self) -> float:
        return max(self.x.reality_defect(), self.y.reality_defect(),
                   self.p.reality_defect())

    def plus_defect(self) -> float:
        return max(self.x.minus_mass(), self.y.minus_mass(),
                   self.p.minus_mass())

    def quotient_minus_mass(self, n_lam: int = 256) -> float:
        """Negative Fourier mass of (nu1^2-y^2)/x, zero iff plus type
        (meaningful when x does not vanish on the circle)."""
        lam = circle_samples(n_lam)
        q = (self.nu1.eval(lam) ** 2 - self.y.eval(lam) ** 2) / self.x.eval(lam)
        c = np.fft.fft(q) / n_lam
        return float(np.linalg.norm(c[n_lam // 2: n_lam - 1]))

    def to_json(self) -> str:
        def cplx(z):
            return [float(np.real(z)), float(np.imag(z))]
        return json.dumps({
            "z0": cplx(self.z0),
            "permutation": list(self.permutation),
            "nu0": self.nu0.to_jsonable(),
            "nu1": self.nu1.to_jsonable(),
            "x_taylor": [cplx(c) for c in self.x.taylor_coeffs()],
            "y_taylor": [cplx(c) for c in self.y.taylor_coeffs()],
            "p_coeffs": [float(c.real) for c in self.p.taylor_coeffs()],
        })

    @classmethod
    def from_json(cls, text: str) -> "SymmetricFuchsian":
        d = json.loads(text)
        return cls(
            z0=complex(*d["z0"]),
            permutation=tuple(d["permutation"]),
            nu0=_nu_from_jsonable(d["nu0"]),
            nu1=_nu_from_jsonable(d["nu1"]),
            x=ScalarLoop.taylor([complex(*c) for c in d["x_taylor"]]),
            y=ScalarLoop.taylor([complex(*c) for c in d["y_taylor"]]),
            p=ScalarLoop.taylor([float(c) for c in d["p_coeffs"]]),
        )


class GaugeLoop:
    """z-dependent gauge: a map z -> 2x2 loop, with Cauchy-integral z-derivative."""

    def __init__(self, fn, dfn=None, cauchy_radius: float = 1e-3,
                 cauchy_points: int = 16):
        self._fn = fn
        self._dfn = dfn
        self._r = cauchy_radius
        self._m = cauchy_points

    def __call__(self, z, lam: np.ndarray) -> np.ndarray:
        """Gauge values on lam samples; shape (nlam, 2, 2)."""
        return self._fn(z, np.asarray(lam, dtype=complex))

    def derivative(self, z, lam: np.ndarray) -> np.ndarray:
        if self._dfn is not None:
            return self._dfn(z, np.asarray(lam, dtype=complex))
        # g'(z) = (1/2 pi i) oint g(w)/(w-z)^2 dw on a small circle
        phases = circle_samples(self._m)
        acc = np.zeros(np.shape(self(z, lam)), dtype=complex)
        for ph in phases:
            acc += np.asarray(self(z + self._r * ph, lam), dtype=complex) / ph
        return acc / (self._m * self._r)


class GaugedPotential:
    """Pointwise evaluation of xi.g = g^-1 xi g + g^-1 dg."""

    def __init__(self, base, gauge: GaugeLoop, det_tol: float = 1e-12):
        self.base = base
        self.gauge = gauge
        self.det_tol = det_tol

    def xi(self, z, lam: np.ndarray) -> np.ndarray:
        g = self.gauge(z, lam)
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
        if np.min(np.abs(det)) < self.det_tol:
            raise SingularGauge("gauge determinant ~ 0 at z = %r" % (z,))
        ginv = np.linalg.inv(g)
        return ginv @ self.base.xi(z, lam) @ g \
            + ginv @ self.gauge.derivative(z, lam)

    def xi_lambda_coeff(self, z, k: int, n_lam: int = 64) -> np.ndarray:
        lam = circle_samples(n_lam)
        c = np.fft.fft(self.xi(z, lam), axis=0) / n_lam
        return c[k % n_lam]


def apply_gauge(potential, gauge: GaugeLoop) -> GaugedPotential:
    return GaugedPotential(potential, gauge)


def hopf_differential(potential, z, n_lam: int = 64,
                      adapted_tol: float = 1e-9) -> complex:
    """Q(z) = <xi_{-1}, xi_0> = -1/2 tr(xi_{-1} xi_0), for adapted xi."""
    xm1 = potential.xi_lambda_coeff(z, -1, n_lam)
    x0 = potential.xi_lambda_coeff(z, 0, n_lam)
    scale = max(float(np.max(np.abs(xm1))), 1e-30)
    low = max(abs(xm1[1, 0]), abs(xm1[0, 0]), abs(xm1[1, 1]))
    if low > adapted_tol * max(scale, 1.0):
        raise NotAdapted(
            "lam^-1 coefficient is not strictly upper triangular at z=%r" % (z,))
    prod = xm1 @ x0
    return -0.5 * (prod[0, 0] + prod[1, 1])


def circle_arc(center, radius, ang0, ang1, n: int) -> np.ndarray:
    t = np.linspace(ang0, ang1, n)
    return center + radius * np.exp(1j * t)


def _rank1_factor(mat, prev=None, det_tol=1e-8):
    """(u, v) with mat = (u,v)^T (-v, u); branch nearest prev."""
    scale = float(np.max(np.abs(mat)))
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    if scale > 0 and abs(det) > det_tol * scale ** 2:
        raise LiftBreakdown("matrix is not rank-1 nilpotent-type (det %.2e)"
                            % abs(det))
    usq = mat[0, 1]
    vsq = -mat[1, 0]
    if abs(usq) >= abs(vsq):
        u = np.sqrt(usq)
        v = -mat[0, 0] / u if abs(u) > 1e-150 else np.sqrt(vsq)
    else:
        v = np.sqrt(vsq)
        u = -mat[0, 0] / v if abs(v) > 1e-150 else np.sqrt(usq)
    if prev is not None:
        inner = u * np.conj(prev[0]) + v * np.conj(prev[1])
        if inner.real < 0:
            u, v = -u, -v
    return u, v


def spin_along(coeff_fn, path: np.ndarray, max_refine: int = 12) -> int:
    """Spin of a rank-1 lam^-1 coefficient field along a closed path.

    coeff_fn(z) returns the 2x2 rank-1 matrix (u,v)^T(-v,u); the continuous
    lift (u,v) is tracked around the path (step-halving on fast rotation)
    and compared with its start value: +1 if it returns, -1 if negated.
    """
    pts = list(np.asarray(path, dtype=complex))
    if abs(pts[0] - pts[-1]) > 1e-12:
        pts.append(pts[0])
    u0, v0 = _rank1_factor(coeff_fn(pts[0]))
    u, v = u0, v0
    i = 0
    segs = [(pts[j], pts[j + 1]) for j in range(len(pts) - 1)]
    while i < len(segs):
        za, zb = segs[i]
        un, vn = _rank1_factor(coeff_fn(zb), prev=(u, v))
        inner = un * np.conj(u) + vn * np.conj(v)
        norm = np.hypot(abs(un), abs(vn)) * np.hypot(abs(u), abs(v))
        if norm > 0 and abs(inner) < 0.5 * norm:
            if len(segs) > (1 << max_refine):
                raise LiftBreakdown("lift rotation too fast along path")
            zm = 0.5 * (za + zb)
            segs[i: i + 1] = [(za, zm), (zm, zb)]
            continue
        u, v = un, vn
        i += 1
    inner = u * np.conj(u0) + v * np.conj(v0)
    return 1 if inner.real > 0 else -1


def spin_of_winding(scalar_fn, path: np.ndarray) -> int:
    """Spin of a half-power gauge built from scalar_fn (e.g. diag(sqrt f, 1/sqrt f)):
    (-1)^winding of f along the closed path."""
    pts = np.asarray(path, dtype=complex)
    vals = np.array([scalar_fn(z) for z in pts])
    if abs(vals[0] - vals[-1]) > 1e-9 * max(1.0, abs(vals[0])):
        vals = np.append(vals, vals[0])
    dphi = np.angle(vals[1:] / vals[:-1])
    winding = int(round(float(np.sum(dphi)) / (2 * np.pi)))
    return -1 if winding % 2 else 1


@dataclass
class VertexType:
    kind: str             # "immersed" or "delaunay_end"
    n: int
    w: float = 0.0
    lambda0: complex = 0.0
    lambda1: complex = 0.0
    residual: float = 0.0


def classify_vertex(nu_samples: np.ndarray, lam: np.ndarray, n: int,
                    tol: float = 1e-6) -> VertexType:
    """Classify a cone point from its eigenvalue function on the circle.

    nu == 1/(2n) or 1/2 - 1/(2n) means an immersed vertex; otherwise fit
    nu = nu_Delaunay / n by linear least squares on (2 n nu)^2 - 1 =
    w lam - w(l0+l1) + w l0 l1 / lam.
    """
    nu_samples = np.asarray(nu_samples, dtype=complex)
    lam = np.asarray(lam, dtype=complex)
    for target in (1.0 / (2 * n), 0.5 - 1.0 / (2 * n)):
        if float(np.max(np.abs(nu_samples - target))) < tol:
            return VertexType(kind="immersed", n=n,
                              residual=float(np.max(np.abs(nu_samples - target))))
    rhs = (2 * n * nu_samples) ** 2 - 1.0
    basis = np.stack([lam, np.ones_like(lam), 1.0 / lam], axis=1)
    coef, *_ = np.linalg.lstsq(basis, rhs, rcond=None)
    c1, c0, cm1 = coef
    residual = float(np.max(np.abs(basis @ coef - rhs)))
    w = c1
    if abs(w) < tol:
        raise BranchAmbiguity("vertex eigenvalue is neither constant nor Delaunay")
    prod = cm1 / w
    s = -c0 / w
    disc = np.sqrt(s ** 2 - 4 * prod)
    l0, l1 = (s + disc) / 2, (s - disc) / 2
    if residual > tol:
        raise BranchAmbiguity(
            "Delaunay fit residual %.3e exceeds %.1e" % (residual, tol))
    return VertexType(kind="delaunay_end", n=n, w=float(w.real),
                      lambda0=complex(l0), lambda1=complex(l1),
                      residual=residual)


def check_reflection_symmetry(pot: SymmetricFuchsian, n_lam: int = 64) -> dict:
    """Residual norms of the structural symmetries of the potential."""
    lam = circle_samples(n_lam)
    res = pot.residue_samples(lam)
    return {
        "sigma_pair_01": float(np.max(np.abs(res[1] - _sigma_conj(res[0])))),
        "sigma_pair_23": float(np.max(np.abs(res[3] - _sigma_conj(res[2])))),
        "reality": pot.reality_defect(),
        "plus": pot.plus_defect(),
        "residue_sum": float(np.max(np.abs(res.sum(axis=0)))),
    }
