"""Discrete calculus on the Bolza surface.

The surface is the regular octagon with opposite sides glued.  Each of its
eight central triangles is split repeatedly into four at the hyperbolic
midpoints of its edges.  Points on the boundary are identified through the
side pairings, giving a closed triangulation of genus two.

Sections of the m-th power of the canonical bundle are stored by their
coefficient in the unit frame, one complex number per quotient vertex,
written in the chart of the vertex's canonical position.  A section moved by
a deck map picks up the phase ``exp(-i m arg g'(z))``.

Two families of operators live here:

* cochain operators (d, Hodge star, codifferential) on the quotient
  complex, used for harmonic 1-forms and the curvature Laplacian, and
* pointwise operators (ladder and twisted ladder operators, the
  Laplace-Beltrami operator) assembled from quartic least-squares fits on
  three-ring stars.  Curvature checks use a separate family of cubic fits
  on two-ring stars.

Kernels and compositions are evaluated on a smooth Galerkin space spanned by
the low eigensections of the connection Laplacian of each bundle.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CurvatureNotNegative, DimensionMismatch, NoSpectralGap
from .hyperbolic_core import bolza_group, from_klein, group_ball, klein, reduce_many

GAP_RATIO = 10.0


# -- small Mobius helpers on disk coefficients ------------------------------

def _apply(a, b, z):
    return (a * z + b) / (np.conj(b) * z + np.conj(a))


def _dlog_arg(a, b, z):
    """arg g'(z) for g = (a, b)."""
    return -2.0 * np.angle(np.conj(b) * z + np.conj(a))


def _compose(a1, b1, a2, b2):
    """Coefficients of g1 o g2."""
    return a1 * a2 + b1 * np.conj(b2), a1 * b2 + b1 * np.conj(a2)


def _inverse(a, b):
    return np.conj(a), -b


def _geodesic_midpoint(z1, z2):
    w = (z2 - z1) / (1 - np.conj(z1) * z2)
    r = np.abs(w)
    scale = np.where(r > 0, np.tanh(np.arctanh(np.minimum(r, 1 - 1e-16)) / 2) / np.where(r > 0, r, 1), 0.5)
    m = w * scale
    return (m + z1) / (1 + np.conj(z1) * m)


def _psi_hyp(z):
    return np.log(2.0 / (1.0 - np.abs(z) ** 2))


def _psi_hyp_dzbar(z):
    return z / (1.0 - np.abs(z) ** 2)


def _keys(z, scale=1e9):
    return np.round(np.column_stack([np.real(z), np.imag(z)]) * scale).astype(np.int64)


# -- fields -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))


@dataclass(frozen=True, eq=False)
class KSection:
    degree: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    def to_json(self):
        return {"degree": int(self.degree),
                "values": [[float(v.real), float(v.imag)] for v in self.values]}

    @classmethod
    def from_json(cls, data):
        vals = np.array([complex(r, i) for r, i in data["values"]])
        return cls(int(data["degree"]), vals)


@dataclass(frozen=True, eq=False)
class LinearOperator:
    """A sparse map between section spaces of the given degrees."""

    matrix: sp.csr_matrix
    source: int
    target: int
    mesh: object = field(default=None, repr=False)

    def __call__(self, s):
        vals = s.values if isinstance(s, KSection) else np.asarray(s)
        out = self.matrix @ vals
        return KSection(self.target, out) if isinstance(s, KSection) else out

    def __add__(self, other):
        if (self.source, self.target) != (other.source, other.target):
            raise ValueError("degree mismatch")
        return LinearOperator((self.matrix + other.matrix).tocsr(), self.source, self.target,
                              self.mesh)


# -- the mesh ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangulated fundamental octagon with boundary identifications.

    ``points`` are the canonical positions of the quotient vertices.  Faces
    are stored twice: ``faces`` by quotient index and ``face_local`` by
    index into ``local_points``, the unglued disk positions, each of which
    carries its quotient vertex ``local_vid`` and the angle
    ``local_angle = arg g'(q)`` of the deck map ``g`` with
    ``g(points[vid]) = local_points``.
    """

    group: object
    level: int
    points: np.ndarray
    faces: np.ndarray
    local_points: np.ndarray
    local_vid: np.ndarray
    local_deck: np.ndarray
    local_angle: np.ndarray
    face_local: np.ndarray
    edges: np.ndarray
    face_edges: np.ndarray
    face_edge_sign: np.ndarray
    u: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self):
        return len(self.points)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def psi_hyp(self):
        return _psi_hyp(self.points)

    @property
    def psi(self):
        """Log conformal factor of the current metric against |dz|^2."""
        return self.psi_hyp + self.u

    def with_conformal(self, u):
        """Same triangulation, metric exp(2u) times the hyperbolic one."""
        u = np.asarray(u.values if isinstance(u, ScalarField) else u, dtype=float)
        m = replace(self, u=u.copy(), _cache={})
        # metric-independent data can be shared
        for key, val in self._cache.items():
            if key == "h" or (isinstance(key, tuple) and key[0] in ("stencils", "ball")):
                m._cache[key] = val
        return m

    # geometry ------------------------------------------------------------
    def _local_psi(self):
        return _psi_hyp(self.local_points) + self.u[self.local_vid]

    def face_euclidean_areas(self):
        p = self.local_points[self.face_local]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (np.conj(e1) * e2).imag

    def face_hyperbolic_areas(self):
        """Exact areas of the geodesic triangles, pi minus the angle sum."""
        if "hyp_area" not in self._cache:
            p = self.local_points[self.face_local]
            total = np.zeros(len(p))
            for k in range(3):
                z0 = p[:, k]
                w1 = (p[:, (k + 1) % 3] - z0) / (1 - np.conj(z0) * p[:, (k + 1) % 3])
                w2 = (p[:, (k + 2) % 3] - z0) / (1 - np.conj(z0) * p[:, (k + 2) % 3])
                total += np.abs(np.angle(w2 / w1))
            self._cache["hyp_area"] = np.pi - total
        return self._cache["hyp_area"]

    def face_areas(self):
        """Metric face areas: hyperbolic area times the mean of exp(2u)."""
        w = np.exp(2 * self.u)[self.faces].mean(axis=1)
        return self.face_hyperbolic_areas() * w

    def vertex_areas(self):
        if "mass" not in self._cache:
            w = np.exp(2 * self.u)[self.faces]
            contrib = (self.face_hyperbolic_areas()[:, None] / 3.0) * w
            self._cache["mass"] = np.bincount(self.faces.ravel(), contrib.ravel(),
                                              minlength=self.n_vertices)
        return self._cache["mass"]

    def area(self):
        return float(self.face_areas().sum())

    @property
    def mesh_size(self):
        """Mean hyperbolic edge length."""
        if "h" not in self._cache:
            p = self.local_points[self.face_local]
            q = np.roll(p, -1, axis=1)
            w = np.abs((q - p) / (1 - np.conj(p) * q))
            self._cache["h"] = float(np.mean(2 * np.arctanh(w)))
        return self._cache["h"]

    def inner(self, s, t):
        """L2 pairing of two vertex fields under the metric area."""
        return complex(np.sum(self.vertex_areas() * np.conj(s) * t))

    def norm(self, s):
        return math.sqrt(max(self.inner(s, s).real, 0.0))

    # charts --------------------------------------------------------------
    def transport_phase(self, m):
        """exp(-i m arg g'(q)) for every local point."""
        return np.exp(-1j * m * self.local_angle)

    def to_json(self):
        return {
            "level": self.level,
            "vertices": [[float(z.real), float(z.imag)] for z in self.points],
            "faces": self.faces.tolist(),
            "local_vertices": [[float(z.real), float(z.imag)] for z in self.local_points],
            "local_faces": self.face_local.tolist(),
            "pairings": self.local_vid.tolist(),
            "psi": self.psi.tolist(),
        }


def build_bolza_mesh(refinement_level=3, group=None):
    """Triangulate the Bolza octagon.

    The eight central triangles are split ``refinement_level + 1`` times into
    four, at hyperbolic midpoints of their edges, so each level has four
    times the faces of the last.
    """
    if not 1 <= refinement_level <= 6:
        raise ValueError("refinement_level must be in 1..6")
    group = group or bolza_group()
    verts = group.fundamental_domain
    nsides = len(verts)
    local_points = np.r_[0.0j, verts]
    face_local = np.array([[0, 1 + j, 1 + (j + 1) % nsides] for j in range(nsides)])
    for _ in range(refinement_level + 1):
        local_points, face_local = _midpoint_refine(local_points, face_local)

    # glue the boundary
    q, _, ra, rb = reduce_many(group, local_points, np.zeros(len(local_points)), max_steps=4,
                               eps=1e-10, track=True)
    _, qfirst, vid = np.unique(_keys(q, 1e8), axis=0, return_index=True, return_inverse=True)
    vid = vid.ravel()
    points = q[qfirst]
    da, db = _inverse(ra, rb)          # deck maps canonical -> local
    angle = _dlog_arg(da, db, points[vid])

    mesh_faces = vid[face_local]
    edges, face_edges, signs = _quotient_edges(group, local_points, vid, face_local)
    return SurfaceMesh(
        group=group,
        level=refinement_level,
        points=points,
        faces=mesh_faces,
        local_points=local_points,
        local_vid=vid,
        local_deck=np.column_stack([da, db]),
        local_angle=angle,
        face_local=face_local,
        edges=edges,
        face_edges=face_edges,
        face_edge_sign=signs,
        u=np.zeros(len(points)),
    )


def _midpoint_refine(z, faces):
    """Split every triangle into four at the hyperbolic edge midpoints."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv = np.unique(es, axis=0, return_inverse=True)
    inv = inv.ravel()
    mids = _geodesic_midpoint(z[uniq[:, 0]], z[uniq[:, 1]])
    z = np.r_[z, mids]
    nf = len(faces)
    m01 = len(z) - len(uniq) + inv[:nf]
    m12 = len(z) - len(uniq) + inv[nf:2 * nf]
    m20 = len(z) - len(uniq) + inv[2 * nf:]
    a, b, c = faces.T
    new = np.vstack([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    return z, new


def _quotient_edges(group, zl, vid, face_local):
    """Quotient edges keyed by the reduced geodesic midpoint."""
    tails = face_local
    heads = np.roll(face_local, -1, axis=1)
    z1 = zl[tails].ravel()
    z2 = zl[heads].ravel()
    mid = _geodesic_midpoint(z1, z2)
    qm, _, ra, rb = reduce_many(group, mid, np.zeros(mid.size), max_steps=4, eps=1e-10, track=True)
    keys = _keys(qm, 1e8)
    _, first, eid = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    eid = eid.ravel()
    # orientation: compare reduced tail with the tail of the first occurrence
    rt = _apply(ra, rb, z1)
    sign = np.where(np.abs(rt - rt[first][eid]) < 1e-7, 1, -1)
    v1 = vid[tails].ravel()
    v2 = vid[heads].ravel()
    edges = np.column_stack([v1[first], v2[first]])
    nf = face_local.shape[0]
    return edges, eid.reshape(nf, 3), sign.reshape(nf, 3)


# -- cochain calculus -------------------------------------------------------

def _dec(mesh):
    if "dec" in mesh._cache:
        return mesh._cache["dec"]
    nv, ne, nf = mesh.n_vertices, mesh.n_edges, mesh.n_faces
    e = mesh.edges
    d0 = sp.csr_matrix((np.r_[-np.ones(ne), np.ones(ne)],
                        (np.r_[np.arange(ne), np.arange(ne)], np.r_[e[:, 0], e[:, 1]])),
                       shape=(ne, nv))
    rows = np.repeat(np.arange(nf), 3)
    d1 = sp.csr_matrix((mesh.face_edge_sign.ravel().astype(float),
                        (rows, mesh.face_edges.ravel())), shape=(nf, ne))
    # cotangent weights from the Euclidean corner angles of each local face
    p = mesh.local_points[mesh.face_local]
    cot = np.empty((nf, 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cot[:, k] = (np.conj(u) * v).real / (np.conj(u) * v).imag
    # edge (k, k+1) is opposite corner k+2
    w = np.zeros(ne)
    for k in range(3):
        np.add.at(w, mesh.face_edges[:, k], 0.5 * cot[:, (k + 2) % 3])
    star1 = w
    star2 = 1.0 / mesh.face_areas()
    star0 = mesh.vertex_areas()
    out = {"d0": d0, "d1": d1, "star0": star0, "star1": star1, "star2": star2}
    mesh._cache["dec"] = out
    return out


def exterior_derivative(mesh, degree):
    ops = _dec(mesh)
    return ops["d0"] if degree == 0 else ops["d1"]


def hodge_star(mesh, degree):
    """Diagonal Hodge star on k-cochains (k = 0, 1, 2)."""
    return _dec(mesh)["star%d" % degree]


def codifferential(mesh, degree):
    """delta = -star d star, built as the adjoint of d in the star inner products."""
    ops = _dec(mesh)
    if degree == 1:
        return sp.diags(1.0 / ops["star0"]) @ ops["d0"].T @ sp.diags(ops["star1"])
    return sp.diags(1.0 / ops["star1"]) @ ops["d1"].T @ sp.diags(ops["star2"])


def cotan_laplacian(mesh):
    """Stiffness matrix of the Dirichlet energy (positive semi-definite)."""
    ops = _dec(mesh)
    return (ops["d0"].T @ sp.diags(ops["star1"]) @ ops["d0"]).tocsr()


def harmonic_one_form_basis(mesh, rank_tol=None, n_probe=8, seed=0):
    """Basis of discrete harmonic 1-cochains (closed and co-closed).

    Random cochains are projected onto closed cochains and then stripped of
    their exact part in the cotangent inner product.  The numerical rank of
    the result is the first Betti number.  The basis is orthonormal in the
    cotangent inner product, which is positive on closed cochains.
    """
    if "harmonic" in mesh._cache:
        return mesh._cache["harmonic"]
    ops = _dec(mesh)
    d0, d1, s1 = ops["d0"], ops["d1"], ops["star1"]
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((mesh.n_edges, n_probe))
    F = mesh.n_faces
    DD = (d1 @ d1.T).tocsc() + sp.diags(np.r_[1.0, np.zeros(F - 1)])
    solve_f = spla.factorized(DD)
    L0 = (d0.T @ sp.diags(s1) @ d0).tocsc() + sp.diags(np.r_[1.0, np.zeros(mesh.n_vertices - 1)])
    solve_v = spla.factorized(L0)
    h = np.empty_like(c)
    for j in range(n_probe):
        x = c[:, j]
        x = x - d1.T @ solve_f(d1 @ x)
        x = x - d0 @ solve_v(d0.T @ (s1 * x))
        h[:, j] = x
    G = h.T @ (s1[:, None] * h)
    evals, evecs = np.linalg.eigh(G)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    sig = np.sqrt(np.maximum(evals, 0.0))
    tol = rank_tol if rank_tol is not None else 1e-6 * sig[0]
    rank = int(np.sum(sig > tol))
    mesh._cache["harmonic_sv"] = sig
    if rank != 4:
        raise DimensionMismatch(f"harmonic space has numerical dimension {rank}, expected 4")
    basis = h @ (evecs[:, :4] / sig[:4])
    basis = basis * np.sign(basis[np.argmax(np.abs(basis), axis=0), range(4)])
    mesh._cache["harmonic"] = basis
    return basis


def wedge_pairing(mesh, a, b):
    """Integral of a ^ b for closed 1-cochains (exact on each face)."""
    sign = mesh.face_edge_sign
    fe = mesh.face_edges
    if a.ndim > 1:
        sign = sign.reshape(sign.shape + (1,) * (a.ndim - 1))
    va = a[fe] * sign
    vb = b[fe] * sign
    a01, a02 = va[:, 0], -va[:, 2]
    b01, b02 = vb[:, 0], -vb[:, 2]
    return 0.5 * np.sum(a01 * b02 - a02 * b01, axis=0)


def intersection_matrix(mesh, basis=None):
    basis = harmonic_one_form_basis(mesh) if basis is None else basis
    return wedge_pairing(mesh, basis[:, :, None], basis[:, None, :])


def harmonic_star(mesh, basis=None):
    """Hodge star on the harmonic space, as a 4x4 matrix acting on coefficients.

    Defined by <a, b> = integral of a ^ star b, with the cotangent inner
    product on the left; it preserves the harmonic space by construction.
    """
    basis = harmonic_one_form_basis(mesh) if basis is None else basis
    s1 = hodge_star(mesh, 1)
    G = basis.T @ (s1[:, None] * basis)
    Q = intersection_matrix(mesh, basis)
    return np.linalg.solve(Q, G)


def one_form_coefficients(mesh, omega):
    """Complex vertex coefficients f with omega ~ Re(f dz), in canonical charts.

    Each face carries the constant form matching its three edge integrals;
    the vertex value is the metric-area weighted average of the incident
    faces, carried to the vertex chart.
    """
    omega = np.asarray(omega, dtype=float)
    p = mesh.local_points[mesh.face_local]
    vals = omega[mesh.face_edges] * mesh.face_edge_sign
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    # least squares for (alpha, beta) with alpha dx + beta dy integrating to vals
    A = np.stack([e.real, e.imag], axis=2)          # (F, 3, 2)
    AtA = np.einsum("fki,fkj->fij", A, A)
    Atb = np.einsum("fki,fk->fi", A, vals)
    coef = np.linalg.solve(AtA, Atb[..., None])[..., 0]
    fface = coef[:, 0] - 1j * coef[:, 1]             # omega = Re(f dz)
    # f dz is a degree-one object: f(g q) g'(q) = f(q)
    da, db = mesh.local_deck[:, 0], mesh.local_deck[:, 1]
    gprime = 1.0 / (np.conj(db) * mesh.points[mesh.local_vid] + np.conj(da)) ** 2
    weights = mesh.face_areas()
    out = np.zeros(mesh.n_vertices, dtype=complex)
    tot = np.zeros(mesh.n_vertices)
    for k in range(3):
        loc = mesh.face_local[:, k]
        np.add.at(out, mesh.local_vid[loc], weights * fface * gprime[loc])
        np.add.at(tot, mesh.local_vid[loc], weights)
    return out / tot


def cochain_from_coefficients(mesh, f):
    """Integrate Re(f dz) along every edge (trapezoid in the local chart)."""
    f = np.asarray(f, dtype=complex)
    da, db = mesh.local_deck[:, 0], mesh.local_deck[:, 1]
    gprime = 1.0 / (np.conj(db) * mesh.points[mesh.local_vid] + np.conj(da)) ** 2
    flocal = f[mesh.local_vid] / gprime
    out = np.zeros(mesh.n_edges)
    done = np.zeros(mesh.n_edges, dtype=bool)
    for k in range(3):
        i, j = mesh.face_local[:, k], mesh.face_local[:, (k + 1) % 3]
        dz = mesh.local_points[j] - mesh.local_points[i]
        val = (0.5 * (flocal[i] + flocal[j]) * dz).real * mesh.face_edge_sign[:, k]
        eid = mesh.face_edges[:, k]
        out[eid] = val
        done[eid] = True
    return out


# -- least-squares stencils -------------------------------------------------

STENCIL_RINGS = 3
STENCIL_ORDER = 4
MAX_DEGREE = 66


def _first_ring(mesh):
    fl = mesh.face_local
    pairs = np.concatenate([fl[:, [0, 1]], fl[:, [1, 2]], fl[:, [2, 0]],
                            fl[:, [1, 0]], fl[:, [2, 1]], fl[:, [0, 2]]])
    pairs = np.unique(pairs, axis=0)
    la, lb = pairs[:, 0], pairs[:, 1]
    da, db = mesh.local_deck[:, 0], mesh.local_deck[:, 1]
    ia, ib = _inverse(da[la], db[la])
    ga, gb = _compose(ia, ib, da[lb], db[lb])       # canonical(nbr) -> row chart
    return _dedupe(mesh, mesh.local_vid[la], mesh.local_vid[lb], ga, gb)


def _dedupe(mesh, row, col, ga, gb):
    pos = _apply(ga, gb, mesh.points[col])
    key = np.column_stack([row, _keys(pos, 1e8)])
    _, first = np.unique(key, axis=0, return_index=True)
    row, col, ga, gb = row[first], col[first], ga[first], gb[first]
    order = np.argsort(row, kind="stable")
    return row[order], col[order], ga[order], gb[order]


def _rings(mesh, n_rings):
    """n-ring stars of every quotient vertex, in the vertex's own chart.

    Returns (row, col, pos, angle): neighbour ``col`` of vertex ``row``
    sits at disk position ``pos`` in the row chart, reached from its
    canonical position by a deck map with ``arg g'(q_col) = angle``.
    """
    r1 = _first_ring(mesh)
    start = np.searchsorted(r1[0], np.arange(mesh.n_vertices + 1))
    row, col, ga, gb = r1
    for _ in range(n_rings - 1):
        # extend every star entry by the first ring of its vertex
        counts = start[col + 1] - start[col]
        e1 = np.repeat(np.arange(len(row)), counts)
        offs = np.arange(e1.size) - np.repeat(np.cumsum(counts) - counts, counts)
        e2 = start[col[e1]] + offs
        ta, tb = _compose(ga[e1], gb[e1], r1[2][e2], r1[3][e2])
        row, col, ga, gb = _dedupe(mesh, np.r_[row, row[e1]], np.r_[col, r1[1][e2]],
                                   np.r_[ga, ta], np.r_[gb, tb])
    pos = _apply(ga, gb, mesh.points[col])
    centre = np.abs(pos - mesh.points[row]) < 1e-10
    row, col, ga, gb, pos = row[~centre], col[~centre], ga[~centre], gb[~centre], pos[~centre]
    angle = _dlog_arg(ga, gb, mesh.points[col])
    return row, col, pos, angle


def _monomials(x, y, order):
    cols = []
    for total in range(1, order + 1):
        for i in range(total, -1, -1):
            cols.append(x ** i * y ** (total - i))
    return np.stack(cols, axis=-1)


def _stencils(mesh, rings=STENCIL_RINGS, order=STENCIL_ORDER):
    """Least-squares derivative weights on multi-ring stars.

    A polynomial of degree ``order`` through the centre value is fitted to
    the ``rings``-ring star; rows 0..4 of the returned weights give d/dx,
    d/dy, d2/dx2, d2/dxdy, d2/dy2 at the centre.
    """
    key = ("stencils", rings, order)
    if key in mesh._cache:
        return mesh._cache[key]
    row, col, pos, angle = _rings(mesh, rings)
    dz = pos - mesh.points[row]
    start = np.searchsorted(row, np.arange(mesh.n_vertices + 1))
    size = np.diff(start)
    w = np.zeros((len(row), 5))
    for k in np.unique(size):
        verts = np.nonzero(size == k)[0]
        idx = start[verts][:, None] + np.arange(k)[None, :]
        d = dz[idx]
        h = np.sqrt(np.mean(np.abs(d) ** 2, axis=1))[:, None]
        A = _monomials(d.real / h, d.imag / h, order)
        P = np.linalg.pinv(A)                      # (n, ncoef, k)
        out = np.stack([P[:, 0] / h, P[:, 1] / h, 2 * P[:, 2] / h ** 2,
                        P[:, 3] / h ** 2, 2 * P[:, 4] / h ** 2], axis=2)
        w[idx.ravel()] = out.reshape(-1, 5)
    st = {"row": row, "col": col, "angle": angle, "w": w}
    mesh._cache[key] = st
    return st


def _stencil_matrix(st, n, weights, m):
    """Sparse matrix applying a stencil to a degree-m section (centre included)."""
    vals = weights * np.exp(-1j * m * st["angle"])
    centre = -np.bincount(st["row"], weights, minlength=n)
    M = sp.csr_matrix((vals, (st["row"], st["col"])), shape=(n, n))
    return (M + sp.diags(centre)).tocsr()


def gradient_operators(mesh, m=0):
    """(d/dx, d/dy) of the unit-frame coefficient, in canonical charts."""
    st = _stencils(mesh)
    n = mesh.n_vertices
    return _stencil_matrix(st, n, st["w"][:, 0], m), _stencil_matrix(st, n, st["w"][:, 1], m)


def flat_laplacian(mesh, rings=STENCIL_RINGS, order=STENCIL_ORDER):
    """Chart Laplacian d^2/dx^2 + d^2/dy^2 of a scalar field."""
    st = _stencils(mesh, rings, order)
    return _stencil_matrix(st, mesh.n_vertices, st["w"][:, 2] + st["w"][:, 4], 0).real.tocsr()


def _psi_dzbar(mesh):
    if "psi_dzbar" not in mesh._cache:
        gx, gy = gradient_operators(mesh, 0)
        uzb = 0.5 * (gx @ mesh.u + 1j * (gy @ mesh.u))
        mesh._cache["psi_dzbar"] = _psi_hyp_dzbar(mesh.points) + uzb
    return mesh._cache["psi_dzbar"]


def dbar_operator(mesh, m):
    """Lowering ladder operator on degree-m sections (target degree m - 1).

    In the unit frame: s -> exp(-psi) (ds/dzbar + m psi_zbar s).
    """
    if abs(m) > MAX_DEGREE:
        raise ValueError("degree %d out of range" % m)
    key = ("eta-", m)
    if key not in mesh._cache:
        gx, gy = gradient_operators(mesh, m)
        e = np.exp(-mesh.psi)
        D = sp.diags(e) @ (0.5 * (gx + 1j * gy) + sp.diags(m * _psi_dzbar(mesh)))
        mesh._cache[key] = LinearOperator(D.tocsr(), m, m - 1, mesh)
    return mesh._cache[key]


def eta_plus_operator(mesh, m):
    """Raising ladder operator on degree-m sections (target degree m + 1).

    In the unit frame: s -> exp(-psi) (ds/dz - m psi_z s).
    """
    if abs(m) > MAX_DEGREE:
        raise ValueError("degree %d out of range" % m)
    key = ("eta+", m)
    if key not in mesh._cache:
        gx, gy = gradient_operators(mesh, m)
        e = np.exp(-mesh.psi)
        D = sp.diags(e) @ (0.5 * (gx - 1j * gy) - sp.diags(m * np.conj(_psi_dzbar(mesh))))
        mesh._cache[key] = LinearOperator(D.tocsr(), m, m + 1, mesh)
    return mesh._cache[key]


CHECK_RINGS = 2
CHECK_ORDER = 3


def laplace_beltrami(mesh, rings=STENCIL_RINGS, order=STENCIL_ORDER):
    """Pointwise Laplace-Beltrami operator of the hyperbolic metric."""
    return (sp.diags(np.exp(-2 * mesh.psi_hyp)) @ flat_laplacian(mesh, rings, order)).tocsr()


def curvature(mesh, u=None):
    """Gauss curvature of exp(2u) times the mesh metric.

    K = exp(-2u - 2w) (-1 - Lap0 (u + w)) with w the conformal factor
    already on the mesh and Lap0 the hyperbolic Laplace-Beltrami operator.
    The Hessians come from two-ring cubic fits, a stencil family that the
    ladder operators and the vortex solver do not use.
    """
    u = np.zeros(mesh.n_vertices) if u is None else np.asarray(
        u.values if isinstance(u, ScalarField) else u, dtype=float)
    total = u + mesh.u
    lap = laplace_beltrami(mesh, CHECK_RINGS, CHECK_ORDER)
    return ScalarField(np.exp(-2 * total) * (-1.0 - lap @ total))


# -- smooth test data -------------------------------------------------------

def smooth_test_section(mesh, m, seed=0, n_bumps=3, radius=1.2, points=None):
    """A smooth, genuinely periodic degree-m section built from bumps.

    Compactly supported bumps on the disk are summed over the group with
    the transformation phase, so the result is independent of the mesh.
    """
    rng = np.random.default_rng(seed)
    group = mesh.group
    q = mesh.points if points is None else np.asarray(points, dtype=complex)
    rc = group.circumradius
    cache_key = ("ball", round(rc + radius + 0.5, 6))
    if cache_key not in mesh._cache:
        A, B, _, _ = group_ball(group, 2 * rc + radius + 0.5)
        mesh._cache[cache_key] = (A, B)
    A, B = mesh._cache[cache_key]
    centres = 0.6 * np.sqrt(rng.uniform(0, 1, n_bumps)) * np.exp(2j * np.pi * rng.uniform(0, 1, n_bumps))
    amps = rng.standard_normal((n_bumps, 3)) + 1j * rng.standard_normal((n_bumps, 3))
    out = np.zeros(q.shape, dtype=complex)
    for c, amp in zip(centres, amps):
        for k in range(0, len(A), 256):
            a, b = A[k:k + 256, None], B[k:k + 256, None]
            gz = _apply(a, b, q[None, :])
            w = (gz - c) / (1 - np.conj(c) * gz)
            rho = 2 * np.arctanh(np.minimum(np.abs(w), 1 - 1e-16))
            t = np.clip(1 - (rho / radius) ** 2, 0, None)
            bump = t ** 6 * (amp[0] + amp[1] * w + amp[2] * np.conj(w) ** 2)
            out += np.sum(bump * np.exp(1j * m * _dlog_arg(a, b, q[None, :])), axis=0)
    return out


# -- connection Laplacian and the smooth Galerkin spaces ---------------------

_GAUSS = (np.array([0.1127016653792583, 0.5, 0.8872983346207417]),
          np.array([5 / 18, 8 / 18, 5 / 18]))


def _connection_form_integral(mesh, z0, z1, grad_u):
    """Integral of psi_y dx - psi_x dy along the chord z0 -> z1."""
    t, wt = _GAUSS
    dz = z1 - z0
    acc = np.zeros(np.shape(z0))
    for ti, wi in zip(t, wt):
        z = z0 + ti * dz
        g = 2 * z / (1 - np.abs(z) ** 2)
        acc += wi * (-(np.conj(g) * dz).imag)
    return acc - (np.conj(grad_u) * dz).imag


def connection_laplacian(mesh, k):
    """Bochner Laplacian of the degree-k bundle (positive semi-definite).

    Each face is gauge-fixed by parallel transport of its corner values to
    the centroid, after which the cotangent Dirichlet energy applies.
    """
    key = ("bochner", k)
    if key in mesh._cache:
        return mesh._cache[key]
    p = mesh.local_points[mesh.face_local]
    c = p.mean(axis=1)
    # P1 gradient of u on each face, as a complex number u_x + i u_y
    uf = mesh.u[mesh.faces]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    det = (np.conj(e1) * e2).imag
    du1, du2 = uf[:, 1] - uf[:, 0], uf[:, 2] - uf[:, 0]
    gu = -1j * (du1 * e2 - du2 * e1) / det
    alpha = np.empty(p.shape, dtype=complex)
    for j in range(3):
        phase = mesh.local_angle[mesh.face_local[:, j]]
        hol = _connection_form_integral(mesh, p[:, j], c, gu)
        alpha[:, j] = np.exp(-1j * k * (phase + hol))
    cot = np.empty((len(p), 3))
    for j in range(3):
        a = p[:, (j + 1) % 3] - p[:, j]
        b = p[:, (j + 2) % 3] - p[:, j]
        cot[:, j] = (np.conj(a) * b).real / (np.conj(a) * b).imag
    rows, cols, vals = [], [], []
    for j in range(3):
        i1, i2 = j, (j + 1) % 3
        w = 0.5 * cot[:, (j + 2) % 3]
        v1, v2 = mesh.faces[:, i1], mesh.faces[:, i2]
        a1, a2 = alpha[:, i1], alpha[:, i2]
        rows += [v1, v2, v1, v2]
        cols += [v1, v2, v2, v1]
        vals += [w + 0j, w + 0j, -w * np.conj(a1) * a2, -w * np.conj(a2) * a1]
    n = mesh.n_vertices
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    mesh._cache[key] = L
    return L


def default_basis_size(mesh):
    return int(min(120, mesh.n_vertices // 8))


def smooth_basis(mesh, k, n_basis=None):
    """Lowest eigensections of the degree-k connection Laplacian.

    Returns (eigenvalues, Phi) with Phi orthonormal in the metric mass.
    """
    if n_basis is None:
        n_basis = default_basis_size(mesh)
    key = ("basis", k)
    have = mesh._cache.get(key)
    if have is not None and have[1].shape[1] >= n_basis:
        return have[0][:n_basis], have[1][:, :n_basis]
    L = connection_laplacian(mesh, k)
    M = sp.diags(mesh.vertex_areas())
    n_basis = min(n_basis, mesh.n_vertices - 2)
    v0 = np.ones(mesh.n_vertices, dtype=complex)
    vals, vecs = spla.eigsh(L.astype(complex), k=n_basis, M=M.astype(complex), sigma=-1.0,
                            which="LM", v0=v0)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # fix the phase of every vector deterministically
    piv = np.argmax(np.abs(vecs), axis=0)
    vecs = vecs * (np.abs(vecs[piv, range(vecs.shape[1])]) / vecs[piv, range(vecs.shape[1])])
    mesh._cache[key] = (vals, vecs)
    return vals, vecs


@dataclass
class KernelResult:
    basis: list
    singular_values: np.ndarray
    dimension: int
    gap: float


def kernel_basis(op, rank_tol=None, dim=None, n_basis=None, gap_ratio=GAP_RATIO):
    """Numerical kernel of a ladder-type operator on its smooth Galerkin space.

    The operator is applied to the lowest ``n_basis`` eigensections of the
    source bundle and the singular values of the result (in the metric
    norm) are inspected.  Singular values below ``rank_tol`` (default the
    squared mesh size, well above the consistency error of the stencils)
    span the kernel unless ``dim`` fixes its size.  The first singular value
    outside the kernel must exceed the last one inside it (for a trivial
    kernel, ``rank_tol`` itself) by ``gap_ratio``, else NoSpectralGap.
    """
    mesh = op.mesh
    _, Phi = smooth_basis(mesh, op.source, n_basis)
    W = np.sqrt(mesh.vertex_areas())[:, None] * (op.matrix @ Phi)
    _, sig, vh = np.linalg.svd(W, full_matrices=False)
    sig, vh = sig[::-1], vh[::-1]
    if rank_tol is None:
        rank_tol = mesh.mesh_size ** 2
    if dim is None:
        dim = int(np.sum(sig < rank_tol))
    if dim == 0:
        gap = sig[0] / rank_tol
    else:
        gap = sig[dim] / max(sig[dim - 1], 1e-300)
    if gap < gap_ratio:
        raise NoSpectralGap(f"singular value gap {gap:.3g} at dimension {dim} is below {gap_ratio}")
    vecs = Phi @ np.conj(vh[:dim]).T
    basis = [KSection(op.source, vecs[:, j]) for j in range(dim)]
    return KernelResult(basis, sig, dim, float(gap))


# -- twisted ladder operators -----------------------------------------------

@dataclass(frozen=True, eq=False)
class MuOperators:
    """Twisted ladder operators built from a metric and a quadratic differential.

    ``lam2`` holds the degree-2 unit-frame values of the second Fourier mode
    of the twist; the operators are eta_- - 2i conj(lam2) eta_+ and
    eta_+ + 2i lam2 eta_-, and ``curvature`` is -1 + 4|lam2|^2.
    """

    mesh: SurfaceMesh
    lam2: np.ndarray
    curvature: np.ndarray

    def minus(self, m):
        key = ("mu-", m)
        if key not in self.mesh._cache:
            op = dbar_operator(self.mesh, m).matrix
            if np.any(self.lam2):
                twist = sp.diags(-2j * np.conj(self.lam2)) @ eta_plus_operator(self.mesh, m).matrix
                op = op + twist
            self.mesh._cache[key] = LinearOperator(op.tocsr(), m, m - 1, self.mesh)
        return self.mesh._cache[key]

    def plus(self, m):
        key = ("mu+", m)
        if key not in self.mesh._cache:
            op = eta_plus_operator(self.mesh, m).matrix
            if np.any(self.lam2):
                op = op + sp.diags(2j * self.lam2) @ dbar_operator(self.mesh, m).matrix
            self.mesh._cache[key] = LinearOperator(op.tocsr(), m, m + 1, self.mesh)
        return self.mesh._cache[key]


def mu_operators(mesh, u=None, lam2=None):
    """Twisted ladder operators for the metric exp(2u) times the mesh metric.

    Raises CurvatureNotNegative when -1 + 4|lam2|^2 is not negative
    everywhere, since the twisted operators are then no longer elliptic.
    """
    if u is not None:
        uv = np.asarray(u.values if isinstance(u, ScalarField) else u, dtype=float)
        if np.any(uv != mesh.u):
            mesh = mesh.with_conformal(uv)
    lam = np.zeros(mesh.n_vertices, dtype=complex) if lam2 is None else np.asarray(
        lam2.values if isinstance(lam2, KSection) else lam2, dtype=complex)
    if isinstance(lam2, KSection) and lam2.degree != 2:
        raise ValueError("the twist must be a degree-2 section")
    K = -1.0 + 4.0 * np.abs(lam) ** 2
    if np.max(K) >= 0:
        raise CurvatureNotNegative(f"max curvature {np.max(K):.3g} is not negative")
    return MuOperators(mesh, lam, K)


# -- identity diagnostics ---------------------------------------------------

def _relative(mesh, res, *terms):
    scale = sum(mesh.norm(t) for t in terms)
    return mesh.norm(res) / scale if scale > 0 else mesh.norm(res)


def eta_commutator_residual(mesh, k, f, curvature=None):
    """[eta_+, eta_-] f + (k/2) K f, relative to the size of its terms."""
    K = (curvature_values(mesh) if curvature is None else curvature)
    a = eta_plus_operator(mesh, k - 1).matrix @ (dbar_operator(mesh, k).matrix @ f)
    b = dbar_operator(mesh, k + 1).matrix @ (eta_plus_operator(mesh, k).matrix @ f)
    rhs = -0.5 * k * K * f
    return _relative(mesh, a - b - rhs, a, b, rhs)


def mu_commutator_residual(ops, k, f):
    """mu_-(mu_+ f / K) - mu_+(mu_- f / K) - (i/2) K V f, relative."""
    mesh, K = ops.mesh, ops.curvature
    a = ops.minus(k + 1).matrix @ ((ops.plus(k).matrix @ f) / K)
    b = ops.plus(k - 1).matrix @ ((ops.minus(k).matrix @ f) / K)
    rhs = -0.5 * k * K * f
    return _relative(mesh, a - b - rhs, a, b, rhs)


def curvature_values(mesh):
    if "K" not in mesh._cache:
        mesh._cache["K"] = curvature(mesh, np.zeros(mesh.n_vertices)).values
    return mesh._cache["K"]


def smooth_test_form(mesh, seed=0):
    """A smooth real 1-form Re(f dz) sampled two ways.

    Returns its degree-one Fourier mode at the vertices and its de Rham
    cochain, each edge integral taken by Gauss quadrature on the chord.
    """
    # the bumps give the hyperbolic unit-frame mode; the mesh frame differs by exp(-u)
    gamma1 = smooth_test_section(mesh, 1, seed=seed) * np.exp(-mesh.u)
    t, wt = _GAUSS
    out = np.zeros(mesh.n_edges)
    for k in range(3):
        a = mesh.local_points[mesh.face_local[:, k]]
        b = mesh.local_points[mesh.face_local[:, (k + 1) % 3]]
        acc = np.zeros(len(a))
        for ti, wi in zip(t, wt):
            z = a + ti * (b - a)
            g = smooth_test_section(mesh, 1, seed=seed, points=z)
            acc += wi * (2.0 * g * np.exp(_psi_hyp(z)) * (b - a)).real
        out[mesh.face_edges[:, k]] = acc * mesh.face_edge_sign[:, k]
    return gamma1, out


def x_minus_residual(mesh, gamma1, cochain):
    """X_- of a real 1-form against minus half its codifferential.

    ``gamma1`` is the degree-one Fourier mode of the lifted form and
    ``cochain`` its edge integrals.  The left side uses the ladder stencils,
    the right side the cotangent codifferential, so the two routes share no
    code.  The cotangent codifferential is only weakly consistent on an
    irregular mesh, so the difference is measured after projection onto the
    smooth scalar Galerkin space.
    """
    lhs = 2.0 * (dbar_operator(mesh, 1).matrix @ gamma1).real
    rhs = -0.5 * (codifferential(mesh, 1) @ cochain)
    _, Phi = smooth_basis(mesh, 0)
    r = Phi @ (Phi.conj().T @ (mesh.vertex_areas() * (lhs - rhs)))
    return _relative(mesh, r, lhs, rhs)


def vertical_star_residual(mesh):
    """V of a lifted harmonic form against minus the lift of its star.

    The star acts through the intersection form on the harmonic space while
    V acts pointwise on the degree-one mode, so this compares the discrete
    Hodge star with the complex structure of the charts.
    """
    basis = harmonic_one_form_basis(mesh)
    J = harmonic_star(mesh, basis)
    worst = 0.0
    e = np.exp(-mesh.psi)
    for j in range(basis.shape[1]):
        g1 = 0.5 * one_form_coefficients(mesh, basis[:, j]) * e
        s1 = 0.5 * one_form_coefficients(mesh, basis @ J[:, j]) * e
        worst = max(worst, _relative(mesh, 1j * g1 + s1, g1, s1))
    return worst


def operator_identity_residuals(mesh, u=None, lam2=None, degrees=(-2, -1, 0, 1, 2),
                                n_samples=2, seed=0):
    """Relative residuals of the frame and ladder identities on smooth data.

    Returns a dict with the worst residual over the sampled degrees and
    seeds for the eta commutator, the twisted commutator, the X_- identity
    and the vertical/star identity, plus the per-degree values.
    """
    ops = mu_operators(mesh, u, lam2)
    mesh = ops.mesh
    K = ops.curvature
    per = {"eta_commutator": {}, "mu_commutator": {}}
    for k in degrees:
        e = m = 0.0
        for j in range(n_samples):
            f = smooth_test_section(mesh, k, seed=seed + j)
            e = max(e, eta_commutator_residual(mesh, k, f, K))
            m = max(m, mu_commutator_residual(ops, k, f))
        per["eta_commutator"][k] = e
        per["mu_commutator"][k] = m
    xm = max(x_minus_residual(mesh, *smooth_test_form(mesh, seed=seed + 100 + j))
             for j in range(n_samples))
    out = {
        "eta_commutator": max(per["eta_commutator"].values()),
        "mu_commutator": max(per["mu_commutator"].values()),
        "x_minus": xm,
        "vertical_star": vertical_star_residual(mesh),
        "per_degree": per,
        "mesh_size": mesh.mesh_size,
        "level": mesh.level,
    }
    return out
