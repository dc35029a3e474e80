"""The unitary flow: constrained continuation of symmetric potentials.

The flow deforms a closed (unitary-monodromy) potential while keeping it
closed, driving a handful of geometric quantities — residue eigenvalues
and two halftraces — toward tessellation-prescribed targets.  The
residual vector stacks

* the intrinsic block: imaginary parts of all six halftraces at equally
  spaced points of the unit lambda-circle (these must stay at zero), and
* the geometric block: selected quantities minus their scheduled values,
  where each schedule interpolates linearly from the quantity's value at
  the starting potential (t = 0) to its target (t = 1).

One continuation step is an Euler predictor ``x <- x - dt *
pinv(dF/dx) dF/dt`` followed by a Gauss-Newton corrector; the driver
adapts the step size (halve on failure, grow after three clean steps)
and rejects steps that do not decrease the distance to the final
geometric target.  Everything is logged per accepted step.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (CorrectorDiverged, FlowStalled, JacobianRankDrop)
from .loops import ScalarLoop
from .monodromy import bulge_count, local_monodromies
from .potential import ConstantNu, DelaunayNu, SymmetricFuchsian

__all__ = [
    "FlowState",
    "ConstraintSet",
    "FlowResult",
    "geometric_targets",
    "residual",
    "step",
    "run_flow",
]

log = logging.getLogger(__name__)

ROLES = ("fixed", "linear", "free")
# Indices of the (0,1) and (1,2) pole pairs in the halftrace layout.
_PAIR01 = 0
_PAIR12 = 3
_ANG_MIN = 1e-3


@dataclass
class FlowState:
    """Packed parametrization of a symmetric potential along the flow.

    Variables (all real): the pole angle ``ang`` (conformal type), the
    residue eigenvalues ``nu0`` and ``nu1``, the end weight ``w0``, the
    Taylor coefficients of ``p``, ``x`` (order >= 1; the zero at the
    origin of the lambda-disk is structural) and ``y``.  Each variable
    carries a role: ``fixed`` (constant), ``linear`` (follows a linear
    t-schedule), or ``free`` (unknown of the continuation).  Fixed and
    linear variables are omitted from the packed unknown vector.
    """

    t: float
    ang: float
    nu0: float
    nu1: float
    w0: float
    p_coeffs: np.ndarray     # ascending real Taylor coefficients
    x_coeffs: np.ndarray     # ascending, x_coeffs[0] == 0 always
    y_coeffs: np.ndarray
    roles: dict = field(default_factory=dict)
    linear_schedules: dict = field(default_factory=dict)  # name -> (v0, v1)

    def __post_init__(self):
        self.p_coeffs = np.asarray(self.p_coeffs, dtype=float)
        self.x_coeffs = np.asarray(self.x_coeffs, dtype=float)
        self.y_coeffs = np.asarray(self.y_coeffs, dtype=float)
        if abs(self.x_coeffs[0]) > 0:
            raise ValueError("x must vanish at lambda = 0")
        for name, role in self.roles.items():
            if role not in ROLES:
                raise ValueError("unknown role %r for %r" % (role, name))
            if name not in self._all_names():
                raise ValueError("unknown variable %r" % name)
        for name in self.linear_schedules:
            if self.roles.get(name) != "linear":
                raise ValueError(
                    "schedule given for non-linear variable %r" % name)

    # -- variable catalogue ---------------------------------------------

    def _all_names(self) -> list:
        names = ["ang", "nu0", "nu1", "w0"]
        names += ["p%d" % k for k in range(self.p_coeffs.size)]
        names += ["x%d" % k for k in range(1, self.x_coeffs.size)]
        names += ["y%d" % k for k in range(self.y_coeffs.size)]
        return names

    def role(self, name: str) -> str:
        return self.roles.get(name, "fixed")

    def free_names(self) -> list:
        return [n for n in self._all_names() if self.role(n) == "free"]

    def get(self, name: str) -> float:
        if name in ("ang", "nu0", "nu1", "w0"):
            return float(getattr(self, name))
        k = int(name[1:])
        arr = {"p": self.p_coeffs, "x": self.x_coeffs,
               "y": self.y_coeffs}[name[0]]
        return float(arr[k])

    def _set(self, name: str, value: float) -> None:
        if name in ("ang", "nu0", "nu1", "w0"):
            setattr(self, name, float(value))
            return
        k = int(name[1:])
        arr = {"p": self.p_coeffs, "x": self.x_coeffs,
               "y": self.y_coeffs}[name[0]]
        arr[k] = float(value)

    # -- packing ----------------------------------------------------------

    def pack(self) -> np.ndarray:
        return np.array([self.get(n) for n in self.free_names()], dtype=float)

    def unpack(self, vec: np.ndarray, t: float | None = None) -> "FlowState":
        """Bijective inverse of :meth:`pack` (plus schedule application)."""
        out = FlowState(
            t=self.t if t is None else float(t),
            ang=self.ang, nu0=self.nu0, nu1=self.nu1, w0=self.w0,
            p_coeffs=self.p_coeffs.copy(), x_coeffs=self.x_coeffs.copy(),
            y_coeffs=self.y_coeffs.copy(), roles=dict(self.roles),
            linear_schedules=dict(self.linear_schedules))
        names = self.free_names()
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(names),):
            raise ValueError("packed vector has wrong length")
        for name, value in zip(names, vec):
            out._set(name, value)
        for name, (v0, v1) in self.linear_schedules.items():
            out._set(name, v0 + (v1 - v0) * out.t)
        return out

    # -- potential assembly ------------------------------------------------

    def assemble(self, lambda0: float = 1.0, lambda1: float = -1.0,
                 ) -> SymmetricFuchsian:
        ang = float(np.clip(self.ang, _ANG_MIN, np.pi / 2 - _ANG_MIN))
        if ang != self.ang:
            log.warning("pole angle %.6f clamped into (0, pi/2)", self.ang)
        if self.w0 == 0.0:
            nu0 = ConstantNu(self.nu0)
        else:
            # End weight deforms the first eigenvalue pair into the
            # Delaunay shape; w0 -> 0 recovers the constant value.
            nu0 = DelaunayNu(w=self.w0, lambda0=lambda0, lambda1=lambda1,
                             scale=2.0 * self.nu0)
        return SymmetricFuchsian(
            z0=np.exp(1j * ang),
            nu0=nu0, nu1=ConstantNu(self.nu1),
            x=ScalarLoop.taylor(self.x_coeffs),
            y=ScalarLoop.taylor(self.y_coeffs),
            p=ScalarLoop.taylor(self.p_coeffs))

    @classmethod
    def from_potential(cls, potential: SymmetricFuchsian, roles: dict,
                       t: float = 0.0, linear_schedules: dict | None = None,
                       ) -> "FlowState":
        if not isinstance(potential.nu0, ConstantNu):
            raise ValueError("flow starts from a constant-eigenvalue "
                             "potential (w0 = 0)")
        return cls(
            t=t,
            ang=float(np.angle(complex(potential.z0))),
            nu0=float(potential.nu0.value),
            nu1=float(potential.nu1.value),
            w0=0.0,
            p_coeffs=potential.p.taylor_coeffs().real,
            x_coeffs=potential.x.taylor_coeffs().real,
            y_coeffs=potential.y.taylor_coeffs().real,
            roles=dict(roles),
            linear_schedules=dict(linear_schedules or {}))


def geometric_targets(n0: int, r: int, s: int, n1: int | None = None,
                      variant: str = "standard") -> dict:
    """Target values of the four geometric quantities.

    ``standard``: nu0 -> 1/(2 n0), nu1 -> 1/2 - 1/(2 n1), halftrace of
    the (0,1) pole pair -> -cos(2 pi / r), of the (1,2) pair ->
    cos(pi / s).  ``special`` (for eigenvalue sum 1/2): nu1 ->
    1/2 - 1/(2 n0) and the last target becomes cos(2 pi / s).
    """
    if variant == "standard":
        out = {"nu0": 1.0 / (2 * n0),
               "t01": -np.cos(2 * np.pi / r),
               "t12": np.cos(np.pi / s)}
        if n1 is not None:
            out["nu1"] = 0.5 - 1.0 / (2 * n1)
        return out
    if variant == "special":
        return {"nu0": 1.0 / (2 * n0),
                "nu1": 0.5 - 1.0 / (2 * n0),
                "t01": -np.cos(2 * np.pi / r),
                "t12": np.cos(2 * np.pi / s)}
    raise ValueError("variant must be 'standard' or 'special'")


@dataclass
class ConstraintSet:
    """Residual definition: intrinsic closing plus scheduled geometry.

    ``targets`` maps quantity names (subset of ``nu0, nu1, t01, t12``)
    to their t = 1 values; ``anchors`` are the same quantities at the
    starting potential, so each scheduled value is ``(1 - t) * anchor +
    t * target``.  ``nu_sum`` optionally appends the time-independent
    constraint ``nu0 + nu1 = nu_sum``.  Halftraces are evaluated at the
    first point of the sample grid (lambda = 1).

    Residual ordering: the 6 x n_lambda intrinsic block (pair-major,
    matching the monodromy halftrace layout), then the scheduled
    quantities in sorted name order, then the nu-sum row.
    """

    anchors: dict
    targets: dict
    nu_sum: float | None = None
    n_lambda: int = 8
    ode_tol: float = 1e-10

    def __post_init__(self):
        known = {"nu0", "nu1", "t01", "t12"}
        for d in (self.anchors, self.targets):
            bad = set(d) - known
            if bad:
                raise ValueError("unknown geometric quantities %r" % bad)
        if set(self.targets) - set(self.anchors):
            raise ValueError("every target needs an anchor")
        self.names = sorted(self.targets)

    def scheduled(self, t: float) -> dict:
        return {n: (1.0 - t) * self.anchors[n] + t * self.targets[n]
                for n in self.names}

    @staticmethod
    def quantities(state: FlowState, mono) -> dict:
        return {"nu0": state.nu0, "nu1": state.nu1,
                "t01": float(mono.halftraces[_PAIR01, 0].real),
                "t12": float(mono.halftraces[_PAIR12, 0].real)}

    def evaluate(self, state: FlowState) -> tuple:
        """Full residual F(t, x) and a diagnostics dict."""
        potential = state.assemble()
        mono = local_monodromies(potential, n_lam=self.n_lambda,
                                 ode_tol=self.ode_tol)
        q = self.quantities(state, mono)
        sched = self.scheduled(state.t)
        rows = [mono.halftraces.imag.ravel()]
        rows.append(np.array([q[n] - sched[n] for n in self.names]))
        if self.nu_sum is not None:
            rows.append(np.array([state.nu0 + state.nu1 - self.nu_sum]))
        f = np.concatenate(rows)
        max_abs_t = float(np.max(np.abs(mono.halftraces.real)))
        info = {
            "max_im": mono.max_im_halftrace,
            "quantities": q,
            "geo_to_target": {n: q[n] - self.targets[n] for n in self.names},
            "max_abs_halftrace": max_abs_t,
        }
        return f, info


def residual(state: FlowState, cs: ConstraintSet) -> np.ndarray:
    """Residual vector F(t, x); see :meth:`ConstraintSet.evaluate`."""
    return cs.evaluate(state)[0]


def _jacobian(state: FlowState, cs: ConstraintSet, f0: np.ndarray,
              ) -> np.ndarray:
    v0 = state.pack()
    cols = []
    for i in range(v0.size):
        h = 1e-7 * (1.0 + abs(v0[i]))
        v = v0.copy()
        v[i] += h
        cols.append((residual(state.unpack(v), cs) - f0) / h)
    return np.array(cols).T


def _pinv_solve(j: np.ndarray, rhs: np.ndarray, rank_ratio: float = 1e-10,
                ) -> tuple:
    """Least-squares solve with threshold 1e-10 * sigma_1; returns
    (solution, rank, condition estimate)."""
    u, s, vt = np.linalg.svd(j, full_matrices=False)
    keep = s > rank_ratio * s[0]
    rank = int(np.count_nonzero(keep))
    inv = np.where(keep, 1.0 / np.where(keep, s, 1.0), 0.0)
    sol = vt.T @ (inv * (u.T @ rhs))
    cond = float(s[0] / s[keep][-1]) if rank else np.inf
    return sol, rank, cond


def step(state: FlowState, cs: ConstraintSet, dt: float,
         corrector_tol: float = 5e-7, max_corrector_iter: int = 40,
         predictor_cap: float = 0.1, rank_ratio: float = 1e-10) -> tuple:
    """One predictor-corrector continuation step.

    The Euler predictor displacement is capped at ``predictor_cap`` per
    variable: near fold points of the constraint variety (for example
    the start of the flow, where one halftrace departs quadratically)
    the tangent ``pinv(dF/dx) dF/dt`` blows up, and the corrector — a
    trust-region Gauss-Newton least-squares solve — is the reliable
    part of the step.

    Returns ``(new_state, diagnostics)``.  Raises
    :class:`JacobianRankDrop` if the finite-difference Jacobian in the
    free variables is rank-deficient (the flow direction is not
    determined — the path must be modified), and
    :class:`CorrectorDiverged` if the corrector fails to restore
    ``||F||_inf <= corrector_tol`` at the advanced time.
    """
    if dt == 0.0:
        f0, info = cs.evaluate(state)
        return state.unpack(state.pack()), {
            "cond": np.nan, "corrector_iters": 0, **info}
    f0 = residual(state, cs)
    jac = _jacobian(state, cs, f0)
    n_free = state.pack().size
    # dF/dt at frozen unknowns (schedules and linear variables only).
    h_t = 1e-7
    f_t = (residual(state.unpack(state.pack(), t=state.t + h_t), cs) - f0) / h_t
    dxdt, rank, cond = _pinv_solve(jac, f_t, rank_ratio=rank_ratio)
    if rank < n_free:
        raise JacobianRankDrop(
            "Jacobian rank %d < %d free variables at t = %.6f "
            "(singular-value ratio threshold %.0e)"
            % (rank, n_free, state.t, rank_ratio))
    t_new = state.t + dt
    dx = -dt * dxdt
    peak = float(np.max(np.abs(dx))) if dx.size else 0.0
    if peak > predictor_cap:
        dx *= predictor_cap / peak
    v = state.pack() + dx

    from scipy.optimize import least_squares

    def fun(w):
        return residual(state.unpack(w, t=t_new), cs)

    f_pred, info = cs.evaluate(state.unpack(v, t=t_new))
    if float(np.max(np.abs(f_pred))) <= corrector_tol:
        # Already within tolerance (e.g. a constant schedule): do not let
        # the least-squares iteration wander on finite-difference noise.
        info.update({"cond": cond, "corrector_iters": 0})
        return state.unpack(v, t=t_new), info
    sol = least_squares(fun, v, diff_step=1e-7, xtol=1e-10, ftol=1e-10,
                        gtol=1e-12,
                        max_nfev=max_corrector_iter * (n_free + 1))
    fmax = float(np.max(np.abs(sol.fun)))
    if fmax > corrector_tol:
        raise CorrectorDiverged(
            "corrector stalled at ||F||_inf = %.3e (target %.3e) at t = %.6f"
            % (fmax, corrector_tol, t_new))
    trial = state.unpack(sol.x, t=t_new)
    _, info = cs.evaluate(trial)
    info.update({"cond": cond, "corrector_iters": int(sol.nfev)})
    return trial, info


@dataclass
class FlowResult:
    potential: SymmetricFuchsian
    state: FlowState
    trace_log: list
    accepted_steps: int
    rejected_steps: int

    def trace_csv(self) -> str:
        buf = io.StringIO()
        cols = ["step", "t", "dt", "max_im", "geo_residual", "cond",
                "bulge_count", "max_abs_halftrace"]
        buf.write(",".join(cols) + "\n")
        for row in self.trace_log:
            buf.write(",".join("%.12g" % row[c] for c in cols) + "\n")
        return buf.getvalue()


def run_flow(state: FlowState, cs: ConstraintSet, dt0: float = 0.05,
             dt_min: float = 1e-6, dt_max: float = 0.25,
             corrector_tol: float = 5e-7, intrinsic_tol: float = 1e-6,
             trace_slack: float = 0.05, max_steps: int = 10000,
             max_accepted: int | None = None,
             rank_ratio: float = 1e-10,
             max_corrector_iter: int = 40) -> FlowResult:
    """Drive the flow from the state's current t to t = 1.

    Adaptive stepping: halve dt on corrector failure or when the
    distance to the final geometric target fails to decrease; grow dt by
    1.5 after three consecutive clean steps.  dt below ``dt_min`` raises
    :class:`FlowStalled` with the last diagnostics in the message.
    After every accepted step the intrinsic closing residual must be at
    most ``intrinsic_tol`` (this is the defining property of the flow)
    and |halftrace| > 1 + ``trace_slack`` is logged as a warning.
    """
    f0, info0 = cs.evaluate(state)
    geo_prev = _geo_norm(info0)
    trace = [_trace_row(0, state.t, 0.0, info0, state)]
    dt = float(dt0)
    clean = 0
    accepted = 0
    rejected = 0
    while state.t < 1.0 - 1e-12:
        if max_accepted is not None and accepted >= max_accepted:
            break
        if accepted + rejected >= max_steps:
            raise FlowStalled("step budget %d exhausted at t = %.6f"
                              % (max_steps, state.t))
        dt_try = min(dt, dt_max, 1.0 - state.t)
        try:
            new_state, info = step(state, cs, dt_try,
                                   corrector_tol=corrector_tol,
                                   rank_ratio=rank_ratio,
                                   max_corrector_iter=max_corrector_iter)
            geo_new = _geo_norm(info)
            ok = (info["max_im"] <= intrinsic_tol
                  and geo_new <= geo_prev + 1e-12)
        except CorrectorDiverged:
            ok = False
            info = None
        if not ok:
            rejected += 1
            clean = 0
            dt /= 2.0
            if dt < dt_min:
                raise FlowStalled(
                    "dt underflow (%.3e < %.0e) at t = %.6f; last geometric "
                    "distance %.3e, last diagnostics: %r"
                    % (dt, dt_min, state.t, geo_prev,
                       None if info is None else info["geo_to_target"]))
            continue
        state = new_state
        geo_prev = geo_new
        accepted += 1
        clean += 1
        if clean >= 3:
            dt *= 1.5
            clean = 0
        if info["max_abs_halftrace"] > 1.0 + trace_slack:
            log.warning("|halftrace| = %.6f exceeds 1 + %.2f at t = %.6f",
                        info["max_abs_halftrace"], trace_slack, state.t)
        trace.append(_trace_row(accepted, state.t, dt_try, info, state))
    return FlowResult(potential=state.assemble(), state=state,
                      trace_log=trace, accepted_steps=accepted,
                      rejected_steps=rejected)


def _geo_norm(info: dict) -> float:
    vals = list(info["geo_to_target"].values())
    return float(np.max(np.abs(vals))) if vals else 0.0


def _trace_row(step_no: int, t: float, dt: float, info: dict,
               state: FlowState) -> dict:
    return {
        "step": step_no,
        "t": t,
        "dt": dt,
        "max_im": info["max_im"],
        "geo_residual": _geo_norm(info),
        "cond": info.get("cond", np.nan),
        "bulge_count": bulge_count(ScalarLoop.taylor(state.x_coeffs))
        if np.any(state.x_coeffs) else 0,
        "max_abs_halftrace": info["max_abs_halftrace"],
    }
