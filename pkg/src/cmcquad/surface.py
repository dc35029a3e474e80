"""CMC immersions from unitarized holomorphic frames.

Pipeline: transport the holomorphic frame over a polar grid of the unit
disk (spanning tree of short segments), conjugate by the diagonal
unitarizer, Iwasawa-factor per grid point, and evaluate the immersion by
the Sym formulas.  The module also computes curvature-line direction
fields from the Hopf function, fits boundary planes and rotation axes,
assembles the full surface through its reflection group, estimates
discrete mean curvature, and exports meshes to OBJ.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (CellConsistencyFailure, NonPlanarBoundary,
                     NotUnitaryAtEvaluation, PlaneAlignmentFailed,
                     UmbilicOnGridPoint)
from .loops import Loop, circle_samples
from .monodromy import Line, transfer_matrix
from .potential import hopf_differential

__all__ = [
    "CellConsistencyFailure",
    "NotUnitaryAtEvaluation",
    "UmbilicOnGridPoint",
    "NonPlanarBoundary",
    "PlaneAlignmentFailed",
    "S3Target",
    "R3Target",
    "su2_to_r3",
    "su2_to_s3",
    "sym_point",
    "sym_normal",
    "FrameField",
    "frame_field",
    "polar_grid",
    "SurfaceMesh",
    "build_disk_mesh",
    "discrete_mean_curvature",
    "fit_rotation_axis",
    "Plane",
    "fit_plane",
    "reflection_from_plane",
    "reflect_mesh",
    "assemble",
    "hopf_function",
    "CurvatureLineField",
    "curvature_lines",
    "streamline",
    "write_obj",
]


# ---------------------------------------------------------------------------
# Sym evaluation
# ---------------------------------------------------------------------------

_E0 = np.array([[1j, 0.0], [0.0, -1j]])


@dataclass(frozen=True)
class S3Target:
    lambda0: complex = 1.0
    lambda1: complex = -1.0

    def __post_init__(self):
        for lam in (self.lambda0, self.lambda1):
            if abs(abs(complex(lam)) - 1.0) > 1e-12:
                raise ValueError("evaluation points must lie on S^1")


@dataclass(frozen=True)
class R3Target:
    lambda0: float = 1.0
    mean_curvature: float = 1.0

    def __post_init__(self):
        if self.lambda0 not in (1.0, -1.0, 1, -1):
            raise ValueError("lambda0 must be +1 or -1")
        if self.mean_curvature == 0:
            raise ValueError("mean curvature must be nonzero")


def su2_to_r3(m: np.ndarray) -> np.ndarray:
    """Coordinates of a trace-free anti-Hermitian matrix in the
    (e0, e1, e2) basis with e0 = diag(i, -i)."""
    return np.array([m[0, 0].imag, m[0, 1].real, m[0, 1].imag])


def su2_to_s3(m: np.ndarray) -> np.ndarray:
    """Unit-quaternion coordinates of an SU(2) matrix."""
    return np.array([m[0, 0].real, m[0, 0].imag, m[0, 1].real, m[0, 1].imag])


def _eval_at(f: Loop, lam0: complex) -> np.ndarray:
    return f.eval(np.asarray([lam0], dtype=complex))[0]


def _theta_derivative_at(f: Loop, lam0: complex) -> np.ndarray:
    """d/dtheta of the loop at lam0 = e^{i theta} (spectral differentiation)."""
    ks = np.arange(-f.n, f.n + 1)
    powers = np.asarray(lam0, dtype=complex) ** ks
    return np.tensordot(1j * ks * powers, f.coeffs, axes=([0], [0]))


def _check_unitary(m: np.ndarray, lam0: complex, tol: float):
    defect = float(np.max(np.abs(np.conj(m.T) @ m - np.eye(2))))
    if defect > tol:
        raise NotUnitaryAtEvaluation(
            "frame is not unitary at lam=%r (defect %.3e)" % (lam0, defect))


def sym_point(f: Loop, target, unitary_tol: float = 1e-8) -> np.ndarray:
    """Immersion point from the unitary frame loop.

    R3Target: -(2/H) * dF/dtheta * F^-1 at lambda0, returned in R^3
    coordinates.  S3Target: F(lambda0) F(lambda1)^-1, returned as a unit
    quaternion 4-vector.
    """
    if isinstance(target, R3Target):
        f1 = _eval_at(f, target.lambda0)
        _check_unitary(f1, target.lambda0, unitary_tol)
        fd = _theta_derivative_at(f, target.lambda0)
        m = -(2.0 / target.mean_curvature) * (fd @ np.linalg.inv(f1))
        return su2_to_r3(m)
    if isinstance(target, S3Target):
        f0 = _eval_at(f, target.lambda0)
        f1 = _eval_at(f, target.lambda1)
        _check_unitary(f0, target.lambda0, unitary_tol)
        _check_unitary(f1, target.lambda1, unitary_tol)
        return su2_to_s3(f0 @ np.linalg.inv(f1))
    raise TypeError("unknown target %r" % (target,))


def sym_normal(f: Loop, target, unitary_tol: float = 1e-8) -> np.ndarray:
    """Unit normal matching sym_point's coordinates."""
    if isinstance(target, R3Target):
        f1 = _eval_at(f, target.lambda0)
        _check_unitary(f1, target.lambda0, unitary_tol)
        n = su2_to_r3(f1 @ _E0 @ np.linalg.inv(f1))
        return n / np.linalg.norm(n)
    if isinstance(target, S3Target):
        f0 = _eval_at(f, target.lambda0)
        f1 = _eval_at(f, target.lambda1)
        n = su2_to_s3(f0 @ _E0 @ np.linalg.inv(f1))
        return n / np.linalg.norm(n)
    raise TypeError("unknown target %r" % (target,))


# ---------------------------------------------------------------------------
# Frame field on a grid
# ---------------------------------------------------------------------------

@dataclass
class FrameField:
    """Holomorphic frame, unitary factor and plus factor per grid point."""

    grid: np.ndarray                 # (nr, nc) complex z samples
    phi: list                        # nested lists of Loop
    f: list
    b: list
    lambda0: complex
    lambda1: complex
    closed: bool                     # column index wraps around
    cell_residual: float
    unitarity_defect: float


def _edge_transfer(potential, z0, z1, lam, ode_tol):
    return transfer_matrix(potential, [Line(z0, z1)], lam, ode_tol)


def frame_field(potential, grid, unitarizer=None, *, n_loop: int = 6,
                n_lam: int = 16, ode_tol: float = 1e-11,
                cell_tol: float = 1e-7, base: complex = 1.0 + 0.0j,
                closed: bool = False, lambda0: complex = 1.0,
                lambda1: complex = -1.0, check_cells: bool = True) -> FrameField:
    """Transport the frame over the grid and Iwasawa-factor per point.

    The frame is transported from the basepoint along a spanning tree
    (first row chained in the column direction, then each column chained
    in the row direction).  When check_cells is on, every grid cell is
    traversed both ways and the transfer mismatch must stay below
    cell_tol, which certifies path independence of the transport.
    """
    grid = np.asarray(grid, dtype=complex)
    if grid.ndim != 2:
        raise ValueError("grid must be a 2-D array of z samples")
    nr, nc = grid.shape
    if unitarizer is not None:
        lam = np.asarray(unitarizer.lam, dtype=complex)
        sx = np.asarray(unitarizer.sqrt_x_samples, dtype=complex)
    else:
        lam = circle_samples(n_lam)
        sx = np.ones(lam.size, dtype=complex)
    nl = lam.size
    dinv = np.zeros((nl, 2, 2), dtype=complex)
    dinv[:, 0, 0] = sx
    dinv[:, 1, 1] = 1.0 / sx

    ncol = nc if closed else nc - 1
    e_col = np.zeros((nr, max(ncol, 0), nl, 2, 2), dtype=complex)
    e_row = np.zeros((max(nr - 1, 0), nc, nl, 2, 2), dtype=complex)
    row_range = range(nr) if check_cells else range(1)
    for i in row_range:
        for j in range(ncol):
            e_col[i, j] = _edge_transfer(potential, grid[i, j],
                                         grid[i, (j + 1) % nc], lam, ode_tol)
    for i in range(nr - 1):
        for j in range(nc):
            e_row[i, j] = _edge_transfer(potential, grid[i, j],
                                         grid[i + 1, j], lam, ode_tol)

    t = np.zeros((nr, nc, nl, 2, 2), dtype=complex)
    t[0, 0] = _edge_transfer(potential, base, grid[0, 0], lam, ode_tol)
    for j in range(1, nc):
        t[0, j] = np.einsum("lab,lbc->lac", t[0, j - 1], e_col[0, j - 1])
    for i in range(1, nr):
        for j in range(nc):
            t[i, j] = np.einsum("lab,lbc->lac", t[i - 1, j], e_row[i - 1, j])

    cell_res = 0.0
    if check_cells and nr > 1 and ncol > 0:
        for i in range(nr - 1):
            for j in range(ncol):
                jp = (j + 1) % nc
                a = np.einsum("lab,lbc->lac", e_col[i, j], e_row[i, jp])
                bm = np.einsum("lab,lbc->lac", e_row[i, j], e_col[i + 1, j])
                scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(bm))), 1.0)
                cell_res = max(cell_res, float(np.max(np.abs(a - bm))) / scale)
        if cell_res > cell_tol:
            raise CellConsistencyFailure(
                "cell transfer mismatch %.3e exceeds %.3e" % (cell_res, cell_tol))

    phi_rows, f_rows, b_rows = [], [], []
    udef = 0.0
    for i in range(nr):
        phi_r, f_r, b_r = [], [], []
        for j in range(nc):
            samples = np.einsum("lab,lbc->lac", dinv, t[i, j])
            phi_loop = Loop.from_samples(samples, n_loop)
            res = _iwasawa(phi_loop)
            udef = max(udef, res.unitarity_defect)
            phi_r.append(phi_loop)
            f_r.append(res.f)
            b_r.append(res.b)
        phi_rows.append(phi_r)
        f_rows.append(f_r)
        b_rows.append(b_r)
    return FrameField(grid=grid, phi=phi_rows, f=f_rows, b=b_rows,
                      lambda0=lambda0, lambda1=lambda1, closed=closed,
                      cell_residual=cell_res, unitarity_defect=udef)


def _iwasawa(phi_loop):
    from .loops import iwasawa
    return iwasawa(phi_loop)


# ---------------------------------------------------------------------------
# Mesh construction
# ---------------------------------------------------------------------------

def polar_grid(n_rho: int, n_phi: int, rho_max: float = 1.0,
               cluster: bool = True) -> np.ndarray:
    """Polar grid over the disk of radius rho_max; rings cluster toward the
    outer boundary (where the corners sit) when cluster is on.  The center
    rho = 0 is not included (mesh builders add it as a fan apex)."""
    k = np.arange(1, n_rho + 1)
    if cluster:
        rho = rho_max * np.sin(0.5 * np.pi * k / n_rho)
    else:
        rho = rho_max * k / n_rho
    phi = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    return rho[:, None] * np.exp(1j * phi[None, :])


@dataclass
class SurfaceMesh:
    """Vertex/face mesh with normals and symmetry provenance.

    vertices are (n, 3) for R^3 or (n, 4) unit quaternions for S^3
    pre-projection.  faces is a list of index tuples (triangles or quads).
    boundary_arcs lists index arrays of the planar boundary curves.
    """

    vertices: np.ndarray
    faces: list
    normals: np.ndarray
    boundary_arcs: tuple = ()
    curvature_line_field: np.ndarray | None = None
    symmetry_elements: list = field(default_factory=list)
    provenance: str = ""


def _potential_hash(potential) -> str:
    try:
        payload = json.dumps({
            "z0": [potential.z0.real, potential.z0.imag],
            "perm": list(potential.permutation),
            "x": np.asarray(potential.x.coeffs).view(float).tolist(),
            "y": np.asarray(potential.y.coeffs).view(float).tolist(),
            "p": np.asarray(potential.p.coeffs).view(float).tolist(),
        }, sort_keys=True)
    except AttributeError:
        payload = repr(potential)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_disk_mesh(potential, unitarizer, target, *, n_rho: int = 40,
                    n_phi: int = 128, n_loop: int = 6,
                    ode_tol: float = 1e-11, cell_tol: float = 1e-7,
                    r_corner: float = 0.2, cluster: bool = True,
                    check_cells: bool = False,
                    unitary_tol: float = 1e-8) -> SurfaceMesh:
    """Mesh of the fundamental piece: image of the unit disk.

    The grid is polar with rings clustered toward the unit circle; the
    outermost ring lies on the circle, with vertices inside angular
    distance r_corner of a pole dropped.  The surviving outer-ring runs
    are the boundary arcs; each maps into a symmetry plane.
    """
    grid = polar_grid(n_rho, n_phi, 1.0, cluster)
    ff = frame_field(potential, grid, unitarizer, n_loop=n_loop,
                     ode_tol=ode_tol, cell_tol=cell_tol, closed=True,
                     check_cells=check_cells)
    lam = (np.asarray(unitarizer.lam) if unitarizer is not None
           else circle_samples(16))
    sx = (np.asarray(unitarizer.sqrt_x_samples) if unitarizer is not None
          else np.ones(lam.size, dtype=complex))
    dinv = np.zeros((lam.size, 2, 2), dtype=complex)
    dinv[:, 0, 0] = sx
    dinv[:, 1, 1] = 1.0 / sx
    t00 = _edge_transfer(potential, 1.0 + 0.0j, grid[0, 0], lam, ode_tol)
    tc = np.einsum("lab,lbc->lac", t00,
                   _edge_transfer(potential, grid[0, 0], 0.0j, lam, ode_tol))
    center_loop = _iwasawa(Loop.from_samples(
        np.einsum("lab,lbc->lac", dinv, tc), n_loop)).f

    dim = 3 if isinstance(target, R3Target) else 4
    nv = 1 + n_rho * n_phi
    verts = np.zeros((nv, dim))
    norms = np.zeros((nv, dim))
    verts[0] = sym_point(center_loop, target, unitary_tol)
    norms[0] = sym_normal(center_loop, target, unitary_tol)
    for i in range(n_rho):
        for j in range(n_phi):
            floop = ff.f[i][j]
            k = 1 + i * n_phi + j
            verts[k] = sym_point(floop, target, unitary_tol)
            norms[k] = sym_normal(floop, target, unitary_tol)

    pole_angles = np.angle(np.asarray(potential.poles, dtype=complex))
    phi = np.angle(grid[-1])
    keep_outer = np.ones(n_phi, dtype=bool)
    for j in range(n_phi):
        gap = np.abs(np.angle(np.exp(1j * (phi[j] - pole_angles))))
        if gap.min() < r_corner:
            keep_outer[j] = False

    idx = lambda i, j: 1 + i * n_phi + (j % n_phi)
    faces = [(0, idx(0, j), idx(0, j + 1)) for j in range(n_phi)]
    for i in range(n_rho - 1):
        for j in range(n_phi):
            quad = (idx(i, j), idx(i, j + 1), idx(i + 1, j + 1), idx(i + 1, j))
            if i == n_rho - 2:
                jn = (j + 1) % n_phi
                if not (keep_outer[j] and keep_outer[jn]):
                    continue
            faces.append(quad)

    # boundary arcs: maximal runs of kept outer-ring vertices (cyclic)
    arcs = []
    kept = [j for j in range(n_phi) if keep_outer[j]]
    if kept:
        start = kept[0]
        # rotate so a gap precedes the first run
        while keep_outer[(start - 1) % n_phi]:
            start = (start - 1) % n_phi
            if start == kept[0]:
                break
        run = []
        for off in range(n_phi):
            j = (start + off) % n_phi
            if keep_outer[j]:
                run.append(idx(n_rho - 1, j))
            elif run:
                arcs.append(np.array(run))
                run = []
        if run:
            arcs.append(np.array(run))

    return SurfaceMesh(vertices=verts, faces=faces, normals=norms,
                       boundary_arcs=tuple(arcs),
                       provenance=_potential_hash(potential))


# ---------------------------------------------------------------------------
# Discrete mean curvature
# ---------------------------------------------------------------------------

def _triangles(faces):
    tris = []
    for f in faces:
        for k in range(1, len(f) - 1):
            tris.append((f[0], f[k], f[k + 1]))
    return tris


def discrete_mean_curvature(mesh: SurfaceMesh, ring_margin: int = 1):
    """Per-vertex mean curvature (cotangent Laplacian, mixed Voronoi areas).

    Returns (h, interior) where interior marks vertices at graph distance
    > ring_margin from any boundary vertex; h is only meaningful there.
    """
    v = mesh.vertices
    if v.shape[1] != 3:
        raise ValueError("discrete mean curvature requires an R^3 mesh")
    tris = _triangles(mesh.faces)
    nv = len(v)
    lap = np.zeros((nv, 3))
    area = np.zeros(nv)
    edge_count = {}
    for (a, b, c) in tris:
        pa, pb, pc = v[a], v[b], v[c]

        def cot(u, w):
            return float(np.dot(u, w) / np.linalg.norm(np.cross(u, w)))

        ca = cot(pb - pa, pc - pa)
        cb = cot(pa - pb, pc - pb)
        cc = cot(pa - pc, pb - pc)
        lap[a] += cb * (pc - pa) + cc * (pb - pa)
        lap[b] += ca * (pc - pb) + cc * (pa - pb)
        lap[c] += ca * (pb - pc) + cb * (pa - pc)
        tri_area = 0.5 * np.linalg.norm(np.cross(pb - pa, pc - pa))
        cots = {a: ca, b: cb, c: cc}
        obtuse = [k for k, val in cots.items() if val < 0]
        if not obtuse:
            a2 = {a: (np.dot(pb - pa, pb - pa) * cc + np.dot(pc - pa, pc - pa) * cb),
                  b: (np.dot(pa - pb, pa - pb) * cc + np.dot(pc - pb, pc - pb) * ca),
                  c: (np.dot(pa - pc, pa - pc) * cb + np.dot(pb - pc, pb - pc) * ca)}
            for k in (a, b, c):
                area[k] += a2[k] / 8.0
        else:
            for k in (a, b, c):
                area[k] += tri_area / 2.0 if k in obtuse else tri_area / 4.0
        for e in ((a, b), (b, c), (c, a)):
            key = (min(e), max(e))
            edge_count[key] = edge_count.get(key, 0) + 1

    with np.errstate(invalid="ignore", divide="ignore"):
        h = np.einsum("ij,ij->i", lap, mesh.normals) / (4.0 * area)

    # quads triangulated by a diagonal: the diagonal is interior (count 2);
    # boundary edges belong to a single face
    quad_diag = set()
    for f in mesh.faces:
        if len(f) == 4:
            quad_diag.add((min(f[0], f[2]), max(f[0], f[2])))
    boundary = np.zeros(nv, dtype=bool)
    adj = [[] for _ in range(nv)]
    for (a, b), cnt in edge_count.items():
        adj[a].append(b)
        adj[b].append(a)
        if cnt == 1 and (a, b) not in quad_diag:
            boundary[a] = boundary[b] = True
    interior = ~boundary & (area > 0)
    for _ in range(ring_margin):
        nxt = interior.copy()
        for k in range(nv):
            if interior[k] and any(not interior[j] for j in adj[k]):
                nxt[k] = False
        interior = nxt
    return h, interior


# ---------------------------------------------------------------------------
# Rotation axis and plane fitting
# ---------------------------------------------------------------------------

def fit_rotation_axis(points: np.ndarray, normals: np.ndarray,
                      restarts: int = 6, seed: int = 0):
    """Fit the axis line minimizing its distance to every normal line.

    On a surface of revolution all normal lines meet the axis, so the
    residual (rms line-line distance) vanishes.  Returns
    (axis_point, axis_direction, residual_rms).
    """
    p = np.asarray(points, dtype=float)
    n = np.asarray(normals, dtype=float)
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)
    centroid = p.mean(axis=0)

    def unpack(params):
        a = params[:3]
        th, ph = params[3], params[4]
        u = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph),
                      np.cos(th)])
        return a, u

    def resid(params):
        a, u = unpack(params)
        cr = np.cross(np.broadcast_to(u, n.shape), n)
        denom = np.linalg.norm(cr, axis=1)
        diff = p - a
        out = np.empty(len(p))
        ok = denom > 1e-12
        out[ok] = np.einsum("ij,ij->i", diff[ok], cr[ok]) / denom[ok]
        if np.any(~ok):  # normal parallel to axis: point-line distance
            d = diff[~ok] - np.outer(diff[~ok] @ u, u)
            out[~ok] = np.linalg.norm(d, axis=1)
        return out

    # initial guesses: mean normal direction, coordinate axes, random
    inits = [np.concatenate([centroid, _dir_angles(n.mean(axis=0))])]
    for ax in np.eye(3):
        inits.append(np.concatenate([centroid, _dir_angles(ax)]))
    for _ in range(restarts):
        inits.append(np.concatenate(
            [centroid + 0.5 * rng.standard_normal(3),
             _dir_angles(rng.standard_normal(3))]))
    best = None
    for x0 in inits:
        sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        rms = float(np.sqrt(np.mean(sol.fun ** 2)))
        if best is None or rms < best[0]:
            best = (rms, sol.x)
    rms, params = best
    a, u = unpack(params)
    return a, u, rms


def _dir_angles(v):
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm < 1e-12:
        return np.array([0.5, 0.5])
    v = v / nrm
    return np.array([np.arccos(np.clip(v[2], -1, 1)),
                     np.arctan2(v[1], v[0])])


@dataclass(frozen=True)
class Plane:
    """Plane {x : normal . x = offset} with unit normal."""

    normal: tuple
    offset: float

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ np.asarray(self.normal) - self.offset

    def reflect(self, pts: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal)
        return np.asarray(pts) - 2.0 * np.outer(self.signed_distance(pts), n)

    def reflect_vectors(self, vecs: np.ndarray) -> np.ndarray:
        n = np.asarray(self.normal)
        return np.asarray(vecs) - 2.0 * np.outer(np.asarray(vecs) @ n, n)


def fit_plane(points: np.ndarray):
    """Total-least-squares plane; returns (Plane, rms)."""
    p = np.asarray(points, dtype=float)
    centroid = p.mean(axis=0)
    _, s, vt = np.linalg.svd(p - centroid)
    n = vt[-1]
    rms = float(s[-1] / np.sqrt(len(p)))
    return Plane(normal=tuple(n), offset=float(n @ centroid)), rms


def reflection_from_plane(plane: Plane):
    """Affine reflection (R, t): x -> R x + t."""
    n = np.asarray(plane.normal, dtype=float)
    r = np.eye(3) - 2.0 * np.outer(n, n)
    t = 2.0 * plane.offset * n
    return r, t


def reflect_mesh(mesh: SurfaceMesh, plane: Plane) -> SurfaceMesh:
    """Mirror image of the mesh across the plane (faces reversed to keep
    outward orientation)."""
    verts = plane.reflect(mesh.vertices)
    norms = plane.reflect_vectors(mesh.normals)
    faces = [tuple(reversed(f)) for f in mesh.faces]
    return SurfaceMesh(vertices=verts, faces=faces, normals=norms,
                       boundary_arcs=mesh.boundary_arcs,
                       curvature_line_field=mesh.curvature_line_field,
                       symmetry_elements=mesh.symmetry_elements
                       + [reflection_from_plane(plane)],
                       provenance=mesh.provenance)


def _compose(g, h):
    rg, tg = g
    rh, th = h
    return rg @ rh, rg @ th + tg


def _group_elements(generators, depth):
    eye = (np.eye(3), np.zeros(3))
    elems = [eye]

    def seen(g):
        return any(np.max(np.abs(g[0] - e[0])) < 1e-9
                   and np.max(np.abs(g[1] - e[1])) < 1e-9 for e in elems)

    frontier = [eye]
    for _ in range(depth):
        nxt = []
        for g in frontier:
            for gen in generators:
                h = _compose(gen, g)
                if not seen(h):
                    elems.append(h)
                    nxt.append(h)
        frontier = nxt
        if not frontier:
            break
    return elems


def assemble(mesh: SurfaceMesh, planes=None, depth: int = 1,
             plane_tol: float = 1e-6, weld_tol: float = 1e-8,
             standard_planes=None, align_tol: float = 1e-6) -> SurfaceMesh:
    """Apply the reflection group generated by the boundary planes.

    Planes default to total-least-squares fits of the mesh boundary arcs
    (NonPlanarBoundary if any fit exceeds plane_tol).  When
    standard_planes are given, the mesh is first moved by the rigid
    motion aligning the fitted planes with them (orthogonal Procrustes
    for the rotation, least squares for the translation;
    PlaneAlignmentFailed if the normals cannot be matched).  Group words
    up to the given depth are applied and coincident vertices welded.
    """
    verts = np.asarray(mesh.vertices, dtype=float)
    norms = np.asarray(mesh.normals, dtype=float)
    if verts.shape[1] != 3:
        raise ValueError("assembly requires an R^3 mesh")
    if planes is None:
        planes = []
        for arc in mesh.boundary_arcs:
            pl, rms = fit_plane(verts[arc])
            if rms > plane_tol:
                raise NonPlanarBoundary(
                    "boundary arc plane fit rms %.3e exceeds %.3e"
                    % (rms, plane_tol))
            planes.append(pl)
    planes = list(planes)

    if standard_planes is not None:
        if len(standard_planes) != len(planes):
            raise PlaneAlignmentFailed("plane count mismatch")
        nf = np.array([p.normal for p in planes], dtype=float)
        ns = np.array([p.normal for p in standard_planes], dtype=float)
        # sign of a fitted normal is arbitrary: orient toward the target
        u, _, vt = np.linalg.svd(ns.T @ nf)
        c = u @ np.diag([1, 1, np.sign(np.linalg.det(u @ vt))]) @ vt
        signs = np.sign(np.einsum("ij,ij->i", ns, nf @ c.T))
        signs[signs == 0] = 1.0
        u, _, vt = np.linalg.svd(ns.T @ (signs[:, None] * nf))
        c = u @ np.diag([1, 1, np.sign(np.linalg.det(u @ vt))]) @ vt
        resid = float(np.max(np.abs(ns - (signs[:, None] * nf) @ c.T)))
        if resid > align_tol:
            raise PlaneAlignmentFailed(
                "normal alignment residual %.3e exceeds %.3e"
                % (resid, align_tol))
        # translation: (C n_k) . t = d_std,k - s_k d_k
        a_mat = ns
        rhs = np.array([sp.offset - sg * p.offset for sp, sg, p
                        in zip(standard_planes, signs, planes)])
        t, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
        verts = verts @ c.T + t
        norms = norms @ c.T
        planes = list(standard_planes)

    gens = [reflection_from_plane(p) for p in planes]
    elems = _group_elements(gens, depth)

    all_verts, all_norms, all_faces = [], [], []
    offset = 0
    for (r, t) in elems:
        vv = verts @ r.T + t
        nn = norms @ r.T
        all_verts.append(vv)
        all_norms.append(nn)
        flip = np.linalg.det(r) < 0
        for f in mesh.faces:
            ff = tuple(reversed(f)) if flip else tuple(f)
            all_faces.append(tuple(k + offset for k in ff))
        offset += len(verts)
    big_v = np.vstack(all_verts)
    big_n = np.vstack(all_norms)

    # weld coincident vertices
    key = np.round(big_v / max(weld_tol, 1e-300)).astype(np.int64)
    uniq = {}
    remap = np.zeros(len(big_v), dtype=np.int64)
    keep = []
    for k in range(len(big_v)):
        tup = tuple(key[k])
        if tup in uniq:
            remap[k] = uniq[tup]
        else:
            uniq[tup] = len(keep)
            remap[k] = len(keep)
            keep.append(k)
    welded_v = big_v[keep]
    welded_n = big_n[keep]
    seen_faces, faces = set(), []
    for f in all_faces:
        g = tuple(int(remap[k]) for k in f)
        skey = frozenset(g)
        if len(skey) == len(g) and skey not in seen_faces:
            seen_faces.add(skey)
            faces.append(g)

    return SurfaceMesh(vertices=welded_v, faces=faces, normals=welded_n,
                       boundary_arcs=(),
                       symmetry_elements=elems,
                       provenance=mesh.provenance)


# ---------------------------------------------------------------------------
# Curvature lines
# ---------------------------------------------------------------------------

def hopf_function(potential, z, n_lam: int = 32) -> complex:
    """Hopf function q(z) of the immersion (Q = q dz^2).

    Pairs the lambda^-1 and lambda^0 coefficients of the potential in
    adapted form.  Symmetric Fuchsian potentials have q identically zero
    (their lambda^0 coefficient has no lower-left entry): the family is
    spherical and every point is umbilic.
    """
    return hopf_differential(potential, z, n_lam)


@dataclass
class CurvatureLineField:
    """Orthogonal unit direction pair of the curvature-line foliations."""

    grid: np.ndarray
    q: np.ndarray
    dir1: np.ndarray     # unit complex directions with q dz^2 > 0
    dir2: np.ndarray     # the orthogonal family
    umbilic: np.ndarray  # mask of grid points inside the umbilic cutoff


def curvature_lines(xi, grid, umbilic_tol: float = 1e-6,
                    n_lam: int = 32) -> CurvatureLineField:
    """Direction pair +-1/sqrt(q) on the grid.

    xi may be a potential or a callable q(z).  Grid points where q
    vanishes to machine precision raise UmbilicOnGridPoint (perturb the
    grid); points within umbilic_tol of the global scale are flagged in
    the umbilic mask and should not be meshed along curvature lines.
    """
    grid = np.asarray(grid, dtype=complex)
    if callable(xi) and not hasattr(xi, "xi"):
        q = np.array([xi(z) for z in grid.ravel()],
                     dtype=complex).reshape(grid.shape)
    else:
        q = np.array([hopf_function(xi, z, n_lam) for z in grid.ravel()],
                     dtype=complex).reshape(grid.shape)
    scale = float(np.max(np.abs(q)))
    if scale <= 1e-13 or np.any(np.abs(q) < 1e-13 * scale):
        raise UmbilicOnGridPoint(
            "hopf function vanishes on a grid point; perturb the grid")
    umbilic = np.abs(q) < umbilic_tol * scale
    d1 = 1.0 / np.sqrt(q)
    d1 = d1 / np.abs(d1)
    return CurvatureLineField(grid=grid, q=q, dir1=d1, dir2=1j * d1,
                              umbilic=umbilic)


def streamline(qfunc, z0: complex, direction: complex = 1.0,
               length: float = 1.0, n_points: int = 50,
               substeps: int = 4) -> np.ndarray:
    """Integrate dz/dv = direction/sqrt(q) (fixed-step RK4 with branch
    continuity); returns n_points + 1 samples of the curvature line."""
    pts = [complex(z0)]
    z = complex(z0)
    ref = np.sqrt(complex(qfunc(z)))

    def sq(w, r):
        s = np.sqrt(complex(qfunc(w)))
        return -s if abs(s - r) > abs(s + r) else s

    h = length / (n_points * substeps)
    for k in range(n_points * substeps):
        k1 = direction / sq(z, ref)
        k2 = direction / sq(z + 0.5 * h * k1, ref)
        k3 = direction / sq(z + 0.5 * h * k2, ref)
        k4 = direction / sq(z + h * k3, ref)
        z = z + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        ref = sq(z, ref)
        if (k + 1) % substeps == 0:
            pts.append(z)
    return np.array(pts)


# ---------------------------------------------------------------------------
# OBJ export
# ---------------------------------------------------------------------------

def _stereographic(v4: np.ndarray) -> np.ndarray:
    denom = 1.0 - v4[:, 0]
    denom = np.where(np.abs(denom) < 1e-12, 1e-12, denom)
    return v4[:, 1:] / denom[:, None]


def write_obj(mesh: SurfaceMesh, path: str, polylines=None,
              stereographic: bool = False):
    """OBJ export: v/vn/f records, curvature-line polylines as l records.

    4-component (S^3) vertices require stereographic=True and are
    projected from the pole (1, 0, 0, 0).
    """
    v = np.asarray(mesh.vertices, dtype=float)
    n = np.asarray(mesh.normals, dtype=float)
    if v.shape[1] == 4:
        if not stereographic:
            raise ValueError("S^3 mesh: pass stereographic=True to project")
        v = _stereographic(v)
        n = n[:, 1:]
        nrm = np.linalg.norm(n, axis=1, keepdims=True)
        n = n / np.where(nrm < 1e-12, 1.0, nrm)
    lines = []
    for p in v:
        lines.append("v %.17g %.17g %.17g" % tuple(p))
    for q in n:
        lines.append("vn %.17g %.17g %.17g" % tuple(q))
    for f in mesh.faces:
        lines.append("f " + " ".join("%d//%d" % (k + 1, k + 1) for k in f))
    extra = len(v)
    for poly in (polylines or []):
        poly = np.asarray(poly, dtype=float)
        for p in poly:
            lines.append("v %.17g %.17g %.17g" % tuple(p))
        lines.append("l " + " ".join(str(extra + k + 1)
                                     for k in range(len(poly))))
        extra += len(poly)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
