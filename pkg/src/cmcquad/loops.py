"""Truncated matrix Laurent loops on the unit circle and their factorizations.

A loop is a finite Laurent series sum_{k=-n}^{n} c_k lambda^k with 2x2 complex
matrix (or scalar) coefficients, understood as a map S^1 -> gl(2,C).  The two
factorizations provided here are

* ``iwasawa``: phi = F.B with F unitary on the circle and B extending
  holomorphically to the disk, B(0) upper triangular with positive diagonal,
  computed via Cholesky factorization of the block Toeplitz matrix of
  H = phi^* phi (Bauer's spectral factorization);
* ``birkhoff_scalar_positive``: q = y^* y for scalar q > 0 on the circle,
  computed by Fourier-splitting log q.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    FactorizationDiverged,
    NotDeterminantOne,
    NotPositiveOnCircle,
    TailOverflow,
)

__all__ = [
    "Loop",
    "ScalarLoop",
    "circle_samples",
    "loop_mul",
    "loop_star",
    "loop_inv",
    "iwasawa",
    "IwasawaResult",
    "birkhoff_scalar_positive",
    "BirkhoffResult",
]


def circle_samples(m: int) -> np.ndarray:
    """m equally spaced points exp(2*pi*i*j/m) on the unit circle."""
    return np.exp(2j * np.pi * np.arange(m) / m)


def _fft_size(min_size: int) -> int:
    m = 1
    while m < min_size:
        m *= 2
    return m


def _coeffs_to_samples(coeffs: np.ndarray, n: int, m: int) -> np.ndarray:
    """Evaluate sum c_k lambda^k on the m-point circle grid (axis 0 = k+n)."""
    if m < 2 * n + 1:
        raise ValueError("sample count %d too small for degree %d" % (m, n))
    placed = np.zeros((m,) + coeffs.shape[1:], dtype=complex)
    ks = np.arange(-n, n + 1)
    placed[ks % m] = coeffs
    return np.fft.ifft(placed, axis=0) * m


def _samples_to_coeffs(samples: np.ndarray, n: int) -> tuple[np.ndarray, float]:
    """Fourier-fit circle samples to degree n; returns (coeffs, dropped tail)."""
    m = samples.shape[0]
    if m < 2 * n + 1:
        raise ValueError("sample count %d too small for degree %d" % (m, n))
    c = np.fft.fft(samples, axis=0) / m
    ks = np.arange(-n, n + 1)
    coeffs = c[ks % m]
    mask = np.ones(m, dtype=bool)
    mask[ks % m] = False
    tail = float(np.linalg.norm(c[mask]))
    return coeffs, tail


class _BaseLoop:
    """Shared machinery for matrix- and scalar-coefficient loops."""

    _tail_shape: tuple[int, ...] = ()

    def __init__(self, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=complex)
        if coeffs.shape[0] % 2 != 1 or coeffs.shape[1:] != self._tail_shape:
            raise ValueError("bad coefficient array shape %r" % (coeffs.shape,))
        self._coeffs = coeffs.copy()
        self._coeffs.flags.writeable = False

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def n(self) -> int:
        return (self._coeffs.shape[0] - 1) // 2

    def coeff(self, k: int) -> np.ndarray:
        """Coefficient of lambda^k (zero outside the truncation window)."""
        if abs(k) > self.n:
            return np.zeros(self._tail_shape, dtype=complex)
        return self._coeffs[k + self.n]

    def samples(self, m: int) -> np.ndarray:
        return _coeffs_to_samples(self._coeffs, self.n, m)

    def eval(self, lam) -> np.ndarray:
        """Evaluate at arbitrary complex points (not restricted to S^1)."""
        lam = np.asarray(lam, dtype=complex)
        ks = np.arange(-self.n, self.n + 1)
        # 0 ** (k < 0) would poison the sum with NaN even when the
        # negative coefficients vanish; substitute 1 and discard those
        # columns at the origin instead.
        at_origin = lam == 0
        if np.any(at_origin):
            neg = self._coeffs[ks < 0]
            if neg.size and np.any(neg != 0):
                raise ZeroDivisionError(
                    "loop has negative Fourier support; evaluation at "
                    "lam = 0 is a pole")
            safe = np.where(at_origin[..., None], 1.0, lam[..., None])
            powers = safe ** ks
            powers = np.where(at_origin[..., None] & (ks != 0), 0.0, powers)
        else:
            powers = lam[..., None] ** ks  # (..., 2n+1)
        return np.tensordot(powers, self._coeffs, axes=([-1], [0]))

    @classmethod
    def from_samples(cls, samples: np.ndarray, n: int):
        coeffs, _ = _samples_to_coeffs(np.asarray(samples, dtype=complex), n)
        return cls(coeffs)

    def star(self):
        """Involution a*(lambda) = conj(a(1/conj(lambda))) (adjoint on S^1)."""
        c = np.conj(self._coeffs[::-1])
        if c.ndim == 3:
            c = np.transpose(c, (0, 2, 1))
        return type(self)(c)

    def truncate(self, n_out: int, tail_budget: float = np.inf):
        """Pad or restrict to |k| <= n_out; raise TailOverflow past budget."""
        if n_out >= self.n:
            pad = n_out - self.n
            c = np.pad(self._coeffs, [(pad, pad)] + [(0, 0)] * (self._coeffs.ndim - 1))
            return type(self)(c)
        drop = self.n - n_out
        tail = float(np.linalg.norm(self._coeffs[:drop])
                     + np.linalg.norm(self._coeffs[-drop:]))
        if tail > tail_budget:
            raise TailOverflow(
                "truncation tail %.3e exceeds budget %.3e" % (tail, tail_budget))
        return type(self)(self._coeffs[drop:-drop])

    def minus_mass(self) -> float:
        """l2 mass of the strictly negative Fourier coefficients."""
        return float(np.linalg.norm(self._coeffs[: self.n]))

    def norm(self) -> float:
        return float(np.linalg.norm(self._coeffs))

    def __add__(self, other):
        n = max(self.n, other.n)
        return type(self)(self.truncate(n).coeffs + other.truncate(n).coeffs)

    def __sub__(self, other):
        n = max(self.n, other.n)
        return type(self)(self.truncate(n).coeffs - other.truncate(n).coeffs)

    def scale(self, c: complex):
        return type(self)(self._coeffs * c)


class Loop(_BaseLoop):
    """Matrix loop: truncated Laurent series with 2x2 complex coefficients."""

    _tail_shape = (2, 2)

    @classmethod
    def identity(cls, n: int = 0) -> "Loop":
        c = np.zeros((2 * n + 1, 2, 2), dtype=complex)
        c[n] = np.eye(2)
        return cls(c)

    @classmethod
    def from_coeff_map(cls, entries: dict[int, np.ndarray]) -> "Loop":
        n = max(abs(k) for k in entries) if entries else 0
        c = np.zeros((2 * n + 1, 2, 2), dtype=complex)
        for k, mat in entries.items():
            c[k + n] = np.asarray(mat, dtype=complex)
        return cls(c)

    def det_samples(self, m: int) -> np.ndarray:
        s = self.samples(m)
        return s[:, 0, 0] * s[:, 1, 1] - s[:, 0, 1] * s[:, 1, 0]

    def unitarity_defect(self, m: int = 0) -> float:
        m = m or _fft_size(4 * self.n + 4)
        s = self.samples(m)
        g = np.conj(np.swapaxes(s, -1, -2)) @ s
        return float(np.max(np.abs(g - np.eye(2))))

    def to_json(self) -> str:
        entries = []
        for k in range(-self.n, self.n + 1):
            mat = self.coeff(k)
            flat = [[float(z.real), float(z.imag)] for z in mat.reshape(4)]
            entries.append([k, flat])
        return json.dumps({"n": self.n, "coeffs": entries})

    @classmethod
    def from_json(cls, text: str) -> "Loop":
        data = json.loads(text)
        n = int(data["n"])
        c = np.zeros((2 * n + 1, 2, 2), dtype=complex)
        for k, flat in data["coeffs"]:
            vals = np.array([complex(re, im) for re, im in flat])
            c[int(k) + n] = vals.reshape(2, 2)
        return cls(c)


class ScalarLoop(_BaseLoop):
    """Scalar loop: truncated Laurent series with complex coefficients."""

    _tail_shape = ()

    @classmethod
    def constant(cls, value: complex) -> "ScalarLoop":
        return cls(np.array([value], dtype=complex))

    @classmethod
    def from_coeff_map(cls, entries: dict[int, complex]) -> "ScalarLoop":
        n = max(abs(k) for k in entries) if entries else 0
        c = np.zeros(2 * n + 1, dtype=complex)
        for k, v in entries.items():
            c[k + n] = v
        return cls(c)

    @classmethod
    def taylor(cls, taylor_coeffs) -> "ScalarLoop":
        """Plus loop from Taylor coefficients (c_0, c_1, ..., c_d)."""
        t = np.asarray(taylor_coeffs, dtype=complex)
        n = len(t) - 1
        c = np.zeros(2 * n + 1, dtype=complex)
        c[n:] = t
        return cls(c)

    def taylor_coeffs(self) -> np.ndarray:
        """Coefficients (c_0 .. c_n); only valid for plus loops."""
        return self._coeffs[self.n:].copy()

    def reality_defect(self) -> float:
        """Deviation from the reality condition a(conj(lam)) = conj(a(lam)),
        i.e. from all coefficients being real."""
        return float(np.max(np.abs(self._coeffs.imag))) if self._coeffs.size else 0.0

    def to_json(self) -> str:
        entries = [[k, [float(self.coeff(k).real), float(self.coeff(k).imag)]]
                   for k in range(-self.n, self.n + 1)]
        return json.dumps({"n": self.n, "coeffs": entries})

    @classmethod
    def from_json(cls, text: str) -> "ScalarLoop":
        data = json.loads(text)
        n = int(data["n"])
        c = np.zeros(2 * n + 1, dtype=complex)
        for k, (re, im) in data["coeffs"]:
            c[int(k) + n] = complex(re, im)
        return cls(c)


def loop_mul(a, b, n_out: int | None = None, tail_budget: float = np.inf):
    """Product of two loops, exact to degree a.n + b.n, then truncated.

    The default output degree is max(a.n, b.n); the dropped tail mass is
    checked against ``tail_budget``.
    """
    n_full = a.n + b.n
    m = _fft_size(2 * n_full + 2)
    sa, sb = a.samples(m), b.samples(m)
    prod = sa @ sb if isinstance(a, Loop) else sa * sb
    full = type(a).from_samples(prod, n_full)
    n_out = max(a.n, b.n) if n_out is None else n_out
    return full.truncate(n_out, tail_budget)


def loop_star(a):
    return a.star()


def loop_inv(a, n_out: int | None = None, m: int | None = None):
    """Pointwise inverse on the circle, refit to degree n_out."""
    n_out = n_out if n_out is not None else max(2 * a.n, 1)
    m = m or _fft_size(max(4 * (a.n + n_out) + 4, 2 * n_out + 2))
    s = a.samples(m)
    if isinstance(a, Loop):
        inv = np.linalg.inv(s)
    else:
        inv = 1.0 / s
    return type(a).from_samples(inv, n_out)


@dataclass
class IwasawaResult:
    f: Loop              # unitary factor on the circle
    b: Loop              # plus factor, B(0) upper triangular positive diagonal
    residual: float      # max |phi - F B| over samples
    unitarity_defect: float
    b_minus_mass: float
    n_samples: int


def _bauer_block_factor(h_coeffs: np.ndarray, deg: int, depth: int) -> np.ndarray:
    """Spectral factor of Hermitian positive block Laurent series.

    h_coeffs holds H_k for k = -deg..deg (axis 0, 2x2 blocks).  Returns the
    coefficients B_0..B_deg of H = B^* B via Cholesky factorization of the
    block Toeplitz matrix M[i,j] = H_{j-i} with i,j = 0..nb-1; a block row at
    depth ``depth`` from the bottom edge is extracted, where the finite
    section has converged.
    """
    nb = deg + 1 + depth
    big = np.zeros((2 * nb, 2 * nb), dtype=complex)
    for d in range(-deg, deg + 1):
        blk = h_coeffs[d + deg]
        for i in range(max(0, -d), nb - max(0, d)):
            j = i + d
            big[2 * i: 2 * i + 2, 2 * j: 2 * j + 2] = blk
    u = scipy.linalg.cholesky(big, lower=False)  # big = u^H u
    i0 = nb - (deg + 1)
    bk = np.zeros((deg + 1, 2, 2), dtype=complex)
    for k in range(deg + 1):
        j = i0 + k
        bk[k] = u[2 * i0: 2 * i0 + 2, 2 * j: 2 * j + 2]
    return bk


def iwasawa(phi: Loop, tol: float = 1e-8, det_tol: float = 1e-6,
            n_samples: int | None = None) -> IwasawaResult:
    """Factor phi = F B with F unitary on S^1 and B plus, normalized at 0.

    Forms H = phi^* phi on the circle and spectral-factors H = B^* B by
    block-Toeplitz Cholesky; then F = phi B^{-1}.  Raises
    NotDeterminantOne / FactorizationDiverged on bad input or nonconvergence.
    """
    n = max(phi.n, 1)
    m = n_samples or _fft_size(max(4 * n + 4, 64))
    s = phi.samples(m)
    det = s[:, 0, 0] * s[:, 1, 1] - s[:, 0, 1] * s[:, 1, 0]
    det_err = float(np.max(np.abs(det - 1.0)))
    if det_err > det_tol:
        raise NotDeterminantOne("max |det phi - 1| = %.3e on circle" % det_err)

    h = np.conj(np.swapaxes(s, -1, -2)) @ s
    deg = 2 * n
    h_coeffs, _ = _samples_to_coeffs(h, deg)

    depth = max(2 * n + 2, 24)
    last_exc: Exception | None = None
    for _attempt in range(3):
        try:
            bk = _bauer_block_factor(h_coeffs, deg, depth)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - degenerate H
            last_exc = exc
            depth *= 2
            continue
        b = Loop(np.concatenate(
            [np.zeros((deg, 2, 2), dtype=complex), bk], axis=0))
        bs = b.samples(m)
        fs = s @ np.linalg.inv(bs)
        residual = float(np.max(np.abs(s - fs @ bs)))
        gram = np.conj(np.swapaxes(fs, -1, -2)) @ fs
        udef = float(np.max(np.abs(gram - np.eye(2))))
        # Forming F = phi B^{-1} loses accuracy when B is ill conditioned
        # (unitarity defect ~ eps * cond(B)^2).  Refine by factoring the
        # nearly-unitary F itself: F = F' B' with B' ~ I is perfectly
        # conditioned, and phi = F' (B' B) with B' B still plus.
        for _refine in range(2):
            if max(residual, udef) <= tol or residual > tol:
                break
            g_coeffs, _ = _samples_to_coeffs(gram, deg)
            try:
                b2k = _bauer_block_factor(g_coeffs, deg, depth)
            except np.linalg.LinAlgError as exc:
                last_exc = exc
                break
            b2 = Loop(np.concatenate(
                [np.zeros((deg, 2, 2), dtype=complex), b2k], axis=0))
            # b2 ~ I, so coefficients of b2 b beyond degree deg are negligible
            b = loop_mul(b2, b, n_out=b2.n + b.n).truncate(deg)
            bs = b.samples(m)
            fs = s @ np.linalg.inv(bs)
            residual = float(np.max(np.abs(s - fs @ bs)))
            gram = np.conj(np.swapaxes(fs, -1, -2)) @ fs
            udef = float(np.max(np.abs(gram - np.eye(2))))
        if max(residual, udef) <= tol:
            nf = min(2 * n, m // 2 - 1)
            f = Loop.from_samples(fs, nf)
            return IwasawaResult(f=f, b=b, residual=residual,
                                 unitarity_defect=udef,
                                 b_minus_mass=b.minus_mass(), n_samples=m)
        depth *= 2
    raise FactorizationDiverged(
        "iwasawa residual did not reach %.1e (last error: %s)" % (tol, last_exc))


@dataclass
class BirkhoffResult:
    y: ScalarLoop        # plus factor with y(0) > 0
    log_coeffs: np.ndarray  # Fourier coefficients of log q (length m)
    residual: float      # max |y^* y - q| over samples
    n_samples: int


def birkhoff_scalar_positive(q: ScalarLoop, tol: float = 1e-10,
                             n_samples: int | None = None,
                             n_out: int | None = None) -> BirkhoffResult:
    """Factor q = y^* y for scalar q real positive on the circle.

    Splits the Fourier series of log q; y = exp(a_0/2 + sum_{k>0} a_k l^k)
    is plus with y(0) = exp(a_0/2) > 0.
    """
    m = n_samples or _fft_size(max(8 * q.n + 8, 128))
    qs = q.samples(m)
    scale = float(np.max(np.abs(qs))) or 1.0
    if float(np.max(np.abs(qs.imag))) > 1e-10 * scale or np.min(qs.real) <= 0:
        raise NotPositiveOnCircle(
            "q not real positive on circle (min Re = %.3e, max |Im| = %.3e)"
            % (float(np.min(qs.real)), float(np.max(np.abs(qs.imag)))))
    a = np.fft.fft(np.log(qs.real)) / m
    placed = np.zeros(m, dtype=complex)
    placed[0] = a[0] / 2.0
    placed[1: m // 2] = a[1: m // 2]
    w = np.fft.ifft(placed) * m
    ys = np.exp(w)
    n_y = n_out if n_out is not None else min(max(4 * q.n, 8), m // 2 - 1)
    y = ScalarLoop.from_samples(ys, n_y)
    ys_fit = y.samples(m)
    residual = float(np.max(np.abs(np.conj(ys_fit) * ys_fit - qs)))
    if residual > tol:
        if n_samples is None and n_out is None:
            return birkhoff_scalar_positive(q, tol, 4 * m, m)
        raise FactorizationDiverged(
            "birkhoff residual %.3e exceeds %.1e" % (residual, tol))
    return BirkhoffResult(y=y, log_coeffs=a, residual=residual, n_samples=m)
