"""Thermostat flows on the unit tangent bundle of the Bolza surface.

A point of SM is (z, theta): a disk position and the angle of a unit
vector in the conformal frame of the current metric exp(2 psi)|dz|^2.  A
vector field a X + b H + c V moves it by

    z'     = exp(-psi) (a + i b) exp(i theta)
    theta' = exp(-psi) (a (-psi_x sin + psi_y cos) + b (-psi_x cos - psi_y sin)) + c.

The ingredients (conformal factor, the Fourier mode generating lambda, its
ladder images, harmonic forms) live on mesh vertices.  They are resampled
once onto a Cartesian grid covering the fundamental octagon, respecting
the deck phases, and evaluated with cubic B-splines, so the right-hand
side is smooth and the fixed-step RK4 keeps its order.  The hyperbolic
part of psi is analytic.

Ensembles draw one initial point per orbit from a counter-based generator
keyed by (seed, orbit), so results do not depend on batching or on the
number of worker processes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np
from scipy.ndimage import spline_filter
from scipy.interpolate import RBFInterpolator

from .errors import (BudgetExceeded, NonfiniteState, PointTooFar, RiccatiBlowup, StepFailure,
                     TailNotConverged)
from .hyperbolic_core import geodesic_point, group_ball, reduce_many
from .mesh_calculus import (ScalarField, curvature, dbar_operator, eta_plus_operator,
                            gradient_operators, harmonic_one_form_basis, one_form_coefficients)

GRID_SIZE = 401
GRID_RADIUS = 0.92
DT = 0.05
SRB_DT = 0.1
T_BURN = 20.0
T_DEFAULT = 2000.0
N_ORBITS = 256
CHUNK = 64
MAX_T = 1e5
WORKERS_ENV = "ANOSOVLAB_WORKERS"
RICCATI_BOUND = 10.0
# accuracy target for the a-function; its transport residual sits near 3e-6 at the default step
A_TOL = 1e-6


# -- specifications ---------------------------------------------------------

@dataclass(frozen=True)
class Geodesic:
    pass


@dataclass(frozen=True, eq=False)
class GaussianThermostat:
    """lambda = rho(v) for a closed 1-form rho given as a 1-cochain."""
    rho: np.ndarray


@dataclass(frozen=True, eq=False)
class HoloThermostat:
    """lambda = Im of the lifted holomorphic differential of a vortex solution."""
    solution: object


@dataclass(frozen=True, eq=False)
class XsFamily:
    """(1 - s star theta(v)) X - s theta(v) H + s theta(v) V for a harmonic theta."""
    theta: np.ndarray
    s: float


@dataclass(frozen=True, eq=False)
class Rescaled:
    """exp(f) X + (star d exp(f))(v) V, the geodesic field of exp(-2f) g seen from SM of g."""
    f: np.ndarray


@dataclass(frozen=True)
class TimeChange:
    """Multiplies the field by exp(amplitude * omega_i(v)) for harmonic basis form i."""
    amplitude: float
    form: int = 0


@dataclass(frozen=True, eq=False)
class VectorFieldSpec:
    mesh: object
    kind: object = field(default_factory=Geodesic)
    u: np.ndarray = None
    time_change: TimeChange = None
    grid_size: int = GRID_SIZE
    _compiled: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def conformal(self):
        if self.u is not None:
            return np.asarray(self.u, dtype=float)
        if isinstance(self.kind, HoloThermostat):
            return self.kind.solution.u.values
        return np.zeros(self.mesh.n_vertices)

    @property
    def is_thermostat(self):
        return isinstance(self.kind, (Geodesic, GaussianThermostat, HoloThermostat)) \
            and self.time_change is None

    @property
    def is_reversible(self):
        """Odd lambda, so the flip conjugates F with -F."""
        if not self.is_thermostat:
            return False
        if isinstance(self.kind, HoloThermostat):
            return self.kind.solution.m % 2 == 1
        return True

    def field(self):
        if "field" not in self._compiled:
            self._compiled["field"] = FlowField.build(self)
        return self._compiled["field"]


def holo_spec(solution, **kw):
    return VectorFieldSpec(solution.mesh, HoloThermostat(solution), **kw)


@dataclass(frozen=True)
class SMPoint:
    z: complex
    theta: float


@dataclass
class OrbitResult:
    times: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    deck: tuple
    diagnostics: dict

    @property
    def samples(self):
        return [(float(t), SMPoint(complex(z), float(th)))
                for t, z, th in zip(self.times, self.z, self.theta)]

    @property
    def end(self):
        return SMPoint(complex(self.z[-1]), float(self.theta[-1]))


@dataclass(frozen=True)
class BirkhoffEstimate:
    mean: float
    stderr: float
    n_orbits: int
    T: float
    seed: int

    def to_json(self):
        return {"mean": self.mean, "stderr": self.stderr, "n_orbits": self.n_orbits,
                "T": self.T, "seed": self.seed}

    def is_zero(self, k=3.0):
        return abs(self.mean) <= k * self.stderr


# -- resampling onto the chart grid -----------------------------------------

GHOST_MARGIN = 0.4


def ghosted_vertices(mesh, margin=GHOST_MARGIN):
    """Vertex copies covering the octagon plus a collar of hyperbolic width ``margin``.

    Returns disk positions, the quotient vertex of each copy, and
    arg g'(p) for the deck map g placing it.
    """
    group = mesh.group
    rc = group.circumradius
    A, B, _, _ = group_ball(group, 2 * rc + margin)
    p = mesh.points
    gz = (A[:, None] * p[None, :] + B[:, None]) / (np.conj(B)[:, None] * p[None, :] + np.conj(A)[:, None])
    dist = 2 * np.arctanh(np.minimum(np.abs(gz), 1 - 1e-16))
    # copies inside the octagon or in the collar around it
    keep = dist <= rc + margin
    gi, vi = np.nonzero(keep)
    pos = gz[gi, vi]
    sel = _octagon_distance(group, pos) <= margin
    gi, vi, pos = gi[sel], vi[sel], pos[sel]
    key = np.round(np.column_stack([pos.real, pos.imag]) * 1e9).astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    gi, vi, pos = gi[first], vi[first], pos[first]
    angle = -2.0 * np.angle(np.conj(B[gi]) * p[vi] + np.conj(A[gi]))
    return pos, vi, angle


DIRECT_MARGIN = 0.25


def _octagon_distance(group, q):
    """Lower bound for the hyperbolic distance from q to the fundamental polygon (0 inside).

    The larger of the distance beyond the farthest side geodesic and the
    distance from the origin minus the circumradius; the second takes over
    past the corners.
    """
    q = np.asarray(q, dtype=complex)
    R = group.side_radius
    gap = R * R - np.abs(q[..., None] - group.side_centers) ** 2
    w = R * (1.0 - np.abs(q) ** 2)[..., None]
    sides = np.arcsinh(np.maximum(gap, 0.0) / w).max(axis=-1)
    radial = 2 * np.arctanh(np.minimum(np.abs(q), 1 - 1e-16)) - group.circumradius
    return np.maximum(sides, radial)


class ChartGrid:
    """Cartesian grid over the octagon with every node reduced to the mesh.

    Vertex fields are interpolated by a quintic radial basis function
    through all vertex copies in and around the octagon.  Nodes inside the
    octagon or within DIRECT_MARGIN of it take the interpolant at the node
    itself, so the result is smooth across the glued sides.  Farther nodes
    take it at the reduced node, a degree-m field being carried back with
    the deck phase exp(i m arg rho'(q)), rho the reduction map.
    """

    def __init__(self, mesh, n=GRID_SIZE, radius=GRID_RADIUS):
        self.n, self.radius = n, radius
        self.step = 2 * radius / (n - 1)
        xs = np.linspace(-radius, radius, n)
        q = (xs[:, None] + 1j * xs[None, :]).ravel()
        self.inside = np.abs(q) < 0.97
        q = q[self.inside]
        z, _, ca, cb = reduce_many(mesh.group, q, np.zeros(q.size),
                                   max_steps=60, eps=1e-12, track=True)
        phase = -2.0 * np.angle(np.conj(cb) * q + np.conj(ca))
        # inside the data collar the interpolant is used as is, so it has no seam at the sides
        near = _octagon_distance(mesh.group, q) <= DIRECT_MARGIN
        self.z = np.where(near, q, z)
        self.phase = np.where(near, 0.0, phase)
        self.centres, self.vid, self.angle = ghosted_vertices(mesh)
        self.mesh = mesh

    def sample_many(self, items):
        """Grid arrays for a list of (vertex values, degree) pairs."""
        cols, layout = [], []
        for values, degree in items:
            v = np.asarray(values)[self.vid]
            if degree:
                v = v * np.exp(-1j * degree * self.angle)
            if np.iscomplexobj(v):
                cols += [v.real, v.imag]
                layout.append((degree, True))
            else:
                cols.append(v)
                layout.append((degree, False))
        xy = np.column_stack([self.centres.real, self.centres.imag])
        interp = RBFInterpolator(xy, np.column_stack(cols), kernel="quintic", degree=2)
        vals = interp(np.column_stack([self.z.real, self.z.imag]))
        out, k = [], 0
        for degree, cplx in layout:
            inner = vals[:, k] + 1j * vals[:, k + 1] if cplx else vals[:, k]
            k += 2 if cplx else 1
            if degree:
                inner = inner * np.exp(1j * degree * self.phase)
            g = np.zeros(self.n * self.n, dtype=inner.dtype)
            g[self.inside] = inner
            out.append(g.reshape(self.n, self.n))
        return out

    def sample(self, values, degree=0):
        return self.sample_many([(values, degree)])[0]


def chart_grid(mesh, n=GRID_SIZE):
    key = ("chart", n)
    if key not in mesh._cache:
        mesh._cache[key] = ChartGrid(mesh, n)
    return mesh._cache[key]


def _bspline_weights(t):
    t2, t3 = t * t, t * t * t
    return np.stack([(1 - t) ** 3, 3 * t3 - 6 * t2 + 4, -3 * t3 + 3 * t2 + 3 * t + 1, t3],
                    axis=-1) / 6.0


def spline_coefficients(grids):
    """Prefiltered cubic B-spline coefficients of n x n grids, point-major (n*n, n_grids)."""
    n = grids[0].shape[0]
    return np.stack([spline_filter(g, order=3, mode="mirror") for g in grids],
                    axis=-1).reshape(n * n, len(grids))


def spline_gather(coeffs, n, radius, z):
    """Evaluate point-major spline coefficients at disk points z, shape (n_grids, n_points)."""
    z = np.asarray(z, dtype=complex)
    step = 2 * radius / (n - 1)
    fx = (z.real + radius) / step
    fy = (z.imag + radius) / step
    ix, iy = np.floor(fx).astype(int), np.floor(fy).astype(int)
    if np.any(ix < 1) or np.any(iy < 1) or np.any(ix > n - 3) or np.any(iy > n - 3):
        raise PointTooFar("point left the sampling grid")
    wx, wy = _bspline_weights(fx - ix), _bspline_weights(fy - iy)
    off = np.arange(-1, 3)
    idx = ((ix[:, None] + off)[:, :, None] * n + (iy[:, None] + off)[:, None, :]).reshape(-1, 16)
    G = np.take(coeffs, idx, axis=0)                  # (points, 16, grids)
    W = (wx[:, :, None] * wy[:, None, :]).reshape(-1, 1, 16)
    return (W @ G)[:, 0, :].T


# -- compiled vector field ---------------------------------------------------

@dataclass
class FieldValues:
    """Everything the flow and the standard observables need at a batch of points."""
    psi: np.ndarray
    psi_x: np.ndarray
    psi_y: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    vlam: np.ndarray
    hlam: np.ndarray
    K: np.ndarray
    div: np.ndarray
    forms: np.ndarray
    stars: np.ndarray


class FlowField:
    """Spline representation of a VectorFieldSpec, cheap to pickle and evaluate."""

    def __init__(self, kind_name, degree, params, names, coeffs, grid_n, grid_radius, hyperbolic,
                 group, reversible):
        self.kind_name = kind_name
        self.degree = degree
        self.params = params
        self.index = {nm: i for i, nm in enumerate(names)}
        self.coeffs = coeffs
        self.grid_n = grid_n
        self.grid_radius = grid_radius
        self.step = 2 * grid_radius / (grid_n - 1)
        self.hyperbolic = hyperbolic
        self.group = group
        self.reversible = reversible

    @classmethod
    def build(cls, spec):
        mesh = spec.mesh
        if np.any(mesh.u != 0):
            raise ValueError("build the spec on the hyperbolic mesh and pass the conformal factor")
        grid = chart_grid(mesh, spec.grid_size)
        u = spec.conformal
        mg = mesh.with_conformal(u) if np.any(u != 0) else mesh
        psi_hyp = mesh.psi_hyp
        psi_g = psi_hyp + u
        gx, gy = gradient_operators(mesh, 0)
        pending = []

        def put(name, vals, deg=0):
            pending.append((name, vals, deg))

        hyperbolic = not np.any(u != 0)
        if not hyperbolic:
            ux, uy = (gx @ u).real, (gy @ u).real
            put("du", 0.5 * (ux - 1j * uy) * np.exp(-psi_hyp), 1)
            put("u", u)

        kind = spec.kind
        degree, params = 0, {}
        if isinstance(kind, GaussianThermostat):
            degree = 1
            ell = 0.5 * one_form_coefficients(mesh, kind.rho) * np.exp(-psi_g)
        elif isinstance(kind, HoloThermostat):
            sol = kind.solution
            degree = sol.m
            ell = sol.lam2 if sol.m == 2 else sol.A.values * np.exp(-sol.m * sol.u.values) / 2j
            put("K", sol.K.values)
        if degree:
            put("ell", ell, degree)
            put("P", eta_plus_operator(mg, degree).matrix @ ell, degree + 1)
            put("Q", dbar_operator(mg, degree).matrix @ ell, degree - 1)
        if not isinstance(kind, HoloThermostat) and not hyperbolic:
            put("K", curvature(mesh, u).values)
        if isinstance(kind, XsFamily):
            put("xs", 0.5 * one_form_coefficients(mesh, kind.theta) * np.exp(-psi_g), 1)
            params["s"] = float(kind.s)
        if isinstance(kind, Rescaled):
            f = np.asarray(kind.f, dtype=float)
            put("f", f)
            put("df", 0.5 * ((gx @ f).real - 1j * (gy @ f).real) * np.exp(-psi_g), 1)

        basis = harmonic_one_form_basis(mesh)
        for i in range(basis.shape[1]):
            put("h%d" % i, 0.5 * one_form_coefficients(mesh, basis[:, i]) * np.exp(-psi_g), 1)
        if spec.time_change is not None:
            params["tc_amp"] = float(spec.time_change.amplitude)
            params["tc_form"] = int(spec.time_change.form)

        fields = {}
        grids = grid.sample_many([(vals, deg) for _, vals, deg in pending])
        for (name, _, _), g in zip(pending, grids):
            if np.iscomplexobj(g):
                fields[name + ".re"], fields[name + ".im"] = g.real, g.imag
            else:
                fields[name] = g
        names = sorted(fields)
        # point-major layout: one gather fetches every field of a grid node
        coeffs = spline_coefficients([fields[nm] for nm in names])
        return cls(type(kind).__name__, degree, params, names, coeffs, grid.n, grid.radius,
                   hyperbolic, mesh.group, spec.is_reversible)

    # -- evaluation ----------------------------------------------------------
    def _spline(self, z):
        """All fields at the points z, shape (n_fields, n_points)."""
        return spline_gather(self.coeffs, self.grid_n, self.grid_radius, z)

    def _get(self, vals, name):
        return vals[self.index[name]]

    def _cget(self, vals, name):
        return vals[self.index[name + ".re"]] + 1j * vals[self.index[name + ".im"]]

    def evaluate(self, z, theta):
        z = np.asarray(z, dtype=complex)
        theta = np.asarray(theta, dtype=float)
        vals = self._spline(z)
        w = 1.0 - np.abs(z) ** 2
        psi = np.log(2.0 / w)
        psi_x, psi_y = 2 * z.real / w, 2 * z.imag / w
        zero = np.zeros(z.shape)
        if not self.hyperbolic:
            psi = psi + self._get(vals, "u")
            du = 2 * self._cget(vals, "du") * (2.0 / w)   # u_x - i u_y
            psi_x = psi_x + du.real
            psi_y = psi_y - du.imag
        eith = np.exp(1j * theta)
        forms = np.array([2 * (self._cget(vals, "h%d" % i) * eith).real for i in range(4)])
        stars = np.array([2 * (self._cget(vals, "h%d" % i) * eith).imag for i in range(4)])
        K = self._get(vals, "K") if "K" in self.index else zero - 1.0
        a, b, c = zero + 1.0, zero.copy(), zero.copy()
        lam, vlam, hlam, div = zero.copy(), zero.copy(), zero.copy(), zero.copy()
        m = self.degree
        if m:
            ell = self._cget(vals, "ell")
            w_m = ell * np.exp(1j * m * theta)
            lam = 2 * w_m.real
            vlam = -2 * m * w_m.imag
            P, Q = self._cget(vals, "P"), self._cget(vals, "Q")
            hlam = (-2 * (P * np.exp(1j * (m + 1) * theta)).imag
                    + 2 * (Q * np.exp(1j * (m - 1) * theta)).imag)
            c = lam
            div = vlam
        if self.kind_name == "XsFamily":
            s = self.params["s"]
            t = self._cget(vals, "xs") * eith
            form, star = 2 * t.real, 2 * t.imag
            a = 1 - s * star
            b = -s * form
            c = s * form
            div = -s * star
        elif self.kind_name == "Rescaled":
            ef = np.exp(self._get(vals, "f"))
            t = self._cget(vals, "df") * eith
            a = ef
            c = ef * 2 * t.imag          # (star d e^f)(v) = e^f (star df)(v)
            div = 2 * ef * 2 * t.real
        if "tc_amp" in self.params:
            fac = np.exp(self.params["tc_amp"] * forms[self.params["tc_form"]])
            a, b, c = a * fac, b * fac, c * fac
            div = np.full(z.shape, np.nan)
        return FieldValues(psi, psi_x, psi_y, a, b, c, lam, vlam, hlam, K, div, forms, stars)

    def rhs(self, z, theta, sign=1.0):
        v = self.evaluate(z, theta)
        return _motion(v, theta, sign), v

    def fiber_density(self, z):
        """exp(2 psi), the metric area density in the chart."""
        v = self._spline(np.asarray(z, dtype=complex))
        psi = np.log(2.0 / (1.0 - np.abs(z) ** 2))
        if not self.hyperbolic:
            psi = psi + self._get(v, "u")
        return np.exp(2 * psi)


def _motion(v, theta, sign):
    e = np.exp(-v.psi)
    s, co = np.sin(theta), np.cos(theta)
    zdot = e * (v.a + 1j * v.b) * np.exp(1j * theta)
    thdot = (v.a * e * (-v.psi_x * s + v.psi_y * co)
             + v.b * e * (-v.psi_x * co - v.psi_y * s) + v.c)
    return sign * zdot, sign * thdot


# -- observables ------------------------------------------------------------

def obs_one(v):
    return np.ones_like(v.a)


def obs_lambda(v):
    return v.lam


def obs_vlambda(v):
    return v.vlam


def obs_divergence(v):
    return v.div


def obs_ru(v):
    """Closed form of the unstable Riccati solution for quadratic differentials."""
    return 1.0 + 0.5 * v.vlam


class FormObservable:
    """Pullback pi_1^* of harmonic basis form i, or of its Hodge star."""

    def __init__(self, i, star=False):
        self.i, self.star = int(i), bool(star)

    def __call__(self, v):
        return v.stars[self.i] if self.star else v.forms[self.i]


class WindingObservable:
    """omega_i(F) = a pi_1^* omega_i - b pi_1^*(star omega_i)."""

    def __init__(self, i):
        self.i = int(i)

    def __call__(self, v):
        return v.a * v.forms[self.i] - v.b * v.stars[self.i]


class InverseFactor:
    """1 / f for a time change f; wraps another observable when given."""

    def __init__(self, amplitude, form=0, inner=None):
        self.amplitude, self.form, self.inner = float(amplitude), int(form), inner

    def __call__(self, v):
        w = np.exp(-self.amplitude * v.forms[self.form])
        return w if self.inner is None else w * self.inner(v)


NAMED_OBSERVABLES = {"one": obs_one, "lambda": obs_lambda, "vlambda": obs_vlambda,
                     "divergence": obs_divergence, "ru": obs_ru}


def resolve_observable(obs):
    if callable(obs):
        return obs
    if obs in NAMED_OBSERVABLES:
        return NAMED_OBSERVABLES[obs]
    kind, _, idx = str(obs).partition(":")
    if kind in ("form", "harmonic"):
        return FormObservable(idx)
    if kind == "star":
        return FormObservable(idx, star=True)
    if kind == "winding":
        return WindingObservable(idx)
    raise ValueError("unknown observable %r" % (obs,))


# -- integration -------------------------------------------------------------

def _reduce(ff, z, theta, track):
    try:
        return reduce_many(ff.group, z, theta, max_steps=8, eps=1e-12, track=track)
    except PointTooFar as exc:
        raise StepFailure(str(exc)) from exc


def _check(z, theta):
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(theta))):
        raise NonfiniteState("orbit state is not finite")
    if np.any(np.abs(z) >= 1):
        raise NonfiniteState("orbit left the disk")


def _rk4_step(ff, z, theta, dt, sign, observables=None):
    """One RK4 step; returns the new state and the RK4-weighted observable integrals."""
    (k1z, k1t), v1 = ff.rhs(z, theta, sign)
    (k2z, k2t), v2 = ff.rhs(z + 0.5 * dt * k1z, theta + 0.5 * dt * k1t, sign)
    (k3z, k3t), v3 = ff.rhs(z + 0.5 * dt * k2z, theta + 0.5 * dt * k2t, sign)
    (k4z, k4t), v4 = ff.rhs(z + dt * k3z, theta + dt * k3t, sign)
    zn = z + dt / 6 * (k1z + 2 * k2z + 2 * k3z + k4z)
    tn = theta + dt / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
    acc = None
    if observables:
        acc = [dt / 6 * (o(v1) + 2 * o(v2) + 2 * o(v3) + o(v4)) for o in observables]
    return zn, tn, acc, (v1, v2, v3, v4)


def integrate(spec, p0, T, dt=DT, sample_every=1):
    """Integrate the flow of ``spec`` from ``p0`` for time ``T`` (negative: backward)."""
    if abs(T) > MAX_T:
        raise BudgetExceeded(f"|T| = {abs(T)} exceeds {MAX_T}")
    ff = spec.field() if isinstance(spec, VectorFieldSpec) else spec
    z0 = np.array([complex(p0.z)])
    th0 = np.array([float(p0.theta)])
    z, theta, ca, cb = _reduce(ff, z0, th0, True)
    n = max(1, int(math.ceil(abs(T) / dt - 1e-9))) if T else 0
    h = abs(T) / n if n else 0.0
    sign = 1.0 if T >= 0 else -1.0
    times, zs, ths = [0.0], [z[0]], [theta[0]]
    for k in range(n):
        z, theta, _, _ = _rk4_step(ff, z, theta, h, sign)
        _check(z, theta)
        z, theta, ga, gb = _reduce(ff, z, theta, True)
        ca, cb = ga * ca + gb * np.conj(cb), ga * cb + gb * np.conj(ca)
        if (k + 1) % sample_every == 0 or k == n - 1:
            times.append(sign * (k + 1) * h)
            zs.append(z[0])
            ths.append(theta[0])
    return OrbitResult(np.array(times), np.array(zs), np.array(ths), (complex(ca[0]), complex(cb[0])),
                       {"steps": n, "dt": h})


def flow_many(ff, z, theta, T, dt=DT):
    """Push a batch of points by time T (either sign); returns reduced states."""
    z, theta = _reduce(ff, np.asarray(z, dtype=complex), np.asarray(theta, dtype=float), False)
    n = max(1, int(math.ceil(abs(T) / dt - 1e-9))) if T else 0
    h = abs(T) / n if n else 0.0
    sign = 1.0 if T >= 0 else -1.0
    for _ in range(n):
        z, theta, _, _ = _rk4_step(ff, z, theta, h, sign)
        _check(z, theta)
        z, theta = _reduce(ff, z, theta, False)
    return z, theta


def geodesic_closed_form(p0, T):
    """Exact hyperbolic geodesic in the disk, before any reduction."""
    return geodesic_point(complex(p0.z), float(p0.theta), T)


# -- ensembles ---------------------------------------------------------------

def orbit_rng(seed, i):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(i)])))


def _initial_point(ff, mesh_data, rng):
    """Draw (z, theta) from metric area times uniform fiber angle."""
    tri, cum, bound = mesh_data
    while True:
        f = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        f = min(f, len(tri) - 1)
        r1, r2 = rng.random(), rng.random()
        if r1 + r2 > 1:
            r1, r2 = 1 - r1, 1 - r2
        p = tri[f]
        z = p[0] + r1 * (p[1] - p[0]) + r2 * (p[2] - p[0])
        dens = float(ff.fiber_density(np.array([z]))[0])
        if rng.random() * bound[f] <= dens:
            return z, 2 * np.pi * rng.random()


def _sampling_data(spec):
    mesh = spec.mesh
    tri = mesh.local_points[mesh.face_local]
    ff = spec.field()
    dens = ff.fiber_density(tri.ravel()).reshape(tri.shape)
    bound = 1.25 * dens.max(axis=1)
    weights = mesh.face_euclidean_areas() * bound
    return tri, np.cumsum(weights), bound


def _run_chunk(args):
    ff, data, obs, seed, start, count, T, T_burn, dt, sign = args
    zs, ths = [], []
    for i in range(start, start + count):
        z, th = _initial_point(ff, data, orbit_rng(seed, i))
        zs.append(z)
        ths.append(th)
    z, theta = flow_many(ff, np.array(zs), np.array(ths), sign * T_burn, dt)
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / n
    acc = np.zeros((len(obs), count))
    clock = np.zeros(count)
    ones = [obs_one]
    for _ in range(n):
        z, theta, vals, _ = _rk4_step(ff, z, theta, h, sign, list(obs) + ones)
        _check(z, theta)
        z, theta = _reduce(ff, z, theta, False)
        for j in range(len(obs)):
            acc[j] += vals[j]
        clock += vals[-1]
    return acc / clock


def worker_count(workers=None):
    if workers is not None:
        return max(1, int(workers))
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


def orbit_averages(spec, observables, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, direction="forward",
                   T_burn=T_BURN, dt=SRB_DT, workers=None):
    """Per-orbit time averages, shape (n_observables, n_orbits).

    Orbits are split into contiguous blocks of whole chunks, one block per
    worker, each integrated as a single vectorised batch.  Every operation
    acts orbit by orbit, so the split does not change a single bit.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    if T <= 0 or T + T_burn > MAX_T:
        raise BudgetExceeded("T must be positive and at most %g" % MAX_T)
    ff = spec.field()
    data = _sampling_data(spec)
    obs = [resolve_observable(o) for o in observables]
    sign = 1.0 if direction == "forward" else -1.0
    workers = worker_count(workers)
    n_chunks = -(-n_orbits // CHUNK)
    per = -(-n_chunks // workers) * CHUNK
    starts = list(range(0, n_orbits, per))
    tasks = [(ff, data, obs, seed, s, min(per, n_orbits - s), T, T_burn, dt, sign) for s in starts]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, tasks))
    else:
        parts = [_run_chunk(t) for t in tasks]
    return np.concatenate(parts, axis=1)


def _estimate(samples, T, seed):
    n = len(samples)
    mean = float(np.mean(samples))
    std = float(np.std(samples, ddof=1)) if n > 1 else 0.0
    return BirkhoffEstimate(mean + 0.0, std / math.sqrt(n), n, float(T), int(seed))


def birkhoff(spec, observable, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, direction="forward", **kw):
    """SRB average of one observable, or a list of estimates for a list of them."""
    many = isinstance(observable, (list, tuple))
    obs = list(observable) if many else [observable]
    avg = orbit_averages(spec, obs, T, n_orbits, seed, direction, **kw)
    est = [_estimate(row, T, seed) for row in avg]
    return est if many else est[0]


def entropy_production(spec, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, **kw):
    """(e+, e-) with e+ = -<div F> forward and e- = <div F> backward."""
    if spec.time_change is not None:
        raise ValueError("entropy production is implemented for untimed fields")
    if isinstance(spec.kind, Geodesic):
        zero = BirkhoffEstimate(0.0, 0.0, n_orbits, float(T), int(seed))
        return zero, zero
    fwd = birkhoff(spec, obs_divergence, T, n_orbits, seed, "forward", **kw)
    bwd = birkhoff(spec, obs_divergence, T, n_orbits, seed, "backward", **kw)
    return (BirkhoffEstimate(-fwd.mean + 0.0, fwd.stderr, n_orbits, float(T), int(seed)), bwd)


def winding_cycles(spec, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, extra=(), **kw):
    """Forward and backward winding cycles on the harmonic basis.

    Returns (W+, W-, extras+, extras-) where the extras are estimates of any
    additional observables computed on the same orbits.
    """
    obs = [WindingObservable(i) for i in range(4)] + list(extra)
    fwd = birkhoff(spec, obs, T, n_orbits, seed, "forward", **kw)
    bwd = birkhoff(spec, obs, T, n_orbits, seed, "backward", **kw)
    return fwd[:4], bwd[:4], fwd[4:], bwd[4:]


def flip_equivariance(spec, observable, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, **kw):
    """Forward average of obs and backward average of obs composed with the flip."""
    obs = resolve_observable(observable)
    fwd = birkhoff(spec, obs, T, n_orbits, seed, "forward", **kw)
    bwd = birkhoff(spec, _Flipped(obs), T, n_orbits, seed, "backward", **kw)
    return fwd, bwd


class _Flipped:
    """obs composed with theta -> theta + pi, for observables built from Fourier data."""

    def __init__(self, obs):
        self.obs = obs

    def __call__(self, v):
        if isinstance(self.obs, FormObservable):
            return -self.obs(v)
        if self.obs in (obs_lambda, obs_divergence, obs_vlambda):
            return -self.obs(v)
        if self.obs is obs_one:
            return self.obs(v)
        raise ValueError("flip of this observable is not available")


def time_change_averages(spec, amplitude, observable, form=0, T=T_DEFAULT, n_orbits=N_ORBITS,
                         seed=0, **kw):
    """Average of obs under f F against the f^-1 weighted average under F."""
    obs = resolve_observable(observable)
    changed = VectorFieldSpec(spec.mesh, spec.kind, spec.u, TimeChange(amplitude, form),
                              spec.grid_size)
    direct = birkhoff(changed, obs, T, n_orbits, seed, **kw)
    num, den = birkhoff(spec, [InverseFactor(amplitude, form, obs), InverseFactor(amplitude, form)],
                        T, n_orbits, seed, **kw)
    return direct, num, den


# -- Riccati solutions -------------------------------------------------------

def _riccati_rhs(v, r):
    """F r solving F r + r^2 + K - H lambda + lambda^2 - V lambda r = 0."""
    return -r * r - v.K + v.hlam - v.lam ** 2 + v.vlam * r


def _recorded_path(ff, z, theta, T, h, sign):
    """Field values along sign * F at half steps h/2 for time T, starting at the given points."""
    z, theta = _reduce(ff, z, theta, False)
    n = int(math.ceil(T / h - 1e-9))
    half = T / n / 2
    path = [ff.evaluate(z, theta)]
    for _ in range(2 * n):
        z, theta, _, _ = _rk4_step(ff, z, theta, half, sign)
        _check(z, theta)
        z, theta = _reduce(ff, z, theta, False)
        path.append(ff.evaluate(z, theta))
    return path, 2 * half


def riccati_limits(spec, points, T_relax=20.0, dt=DT, initial=(1.0, 2.0), check_tol=1e-6):
    """Unstable and stable Riccati solutions at a batch of phase points.

    The orbit through each point is recorded backward (for r^u) and forward
    (for r^s) over T_relax; the Riccati equation is then integrated along
    the recorded path towards the point, where it is attracting.  Both
    solutions start from two initial values whose results must agree to
    ``check_tol``.  Returns (r_u, r_s) at exactly the given points.
    """
    if T_relax < 20.0:
        raise ValueError("T_relax must be at least 20")
    if not spec.is_thermostat:
        raise ValueError("Riccati limits need a thermostat")
    ff = spec.field()
    z0 = np.array([complex(p.z) for p in points])
    t0 = np.array([float(p.theta) for p in points])
    out = []
    for sign in (1.0, -1.0):
        path, h = _recorded_path(ff, z0, t0, T_relax, dt, -sign)
        path = path[::-1]
        r = np.array([sign * x for x in initial], dtype=float)[:, None] * np.ones(len(z0))
        for k in range(0, len(path) - 1, 2):
            v1, v2, v3 = path[k], path[k + 1], path[k + 2]
            k1 = sign * _riccati_rhs(v1, r)
            k2 = sign * _riccati_rhs(v2, r + 0.5 * h * k1)
            k3 = sign * _riccati_rhs(v2, r + 0.5 * h * k2)
            k4 = sign * _riccati_rhs(v3, r + h * k3)
            r = r + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if np.any(np.abs(r) > RICCATI_BOUND) or not np.all(np.isfinite(r)):
                raise RiccatiBlowup("Riccati solution left [-10, 10]")
        spread = float(np.max(np.abs(r - r[0])))
        if spread > check_tol:
            raise RiccatiBlowup(f"initial values still differ by {spread:.3g} after relaxation")
        out.append(r[0])
    return out[0], out[1]


def riccati_substitution_residual(spec, z, theta):
    """Riccati expression F r + r^2 + K - H lambda + lambda^2 - V lambda r at r = 1 + V lambda / 2.

    The flow derivative is a central difference along the orbit.
    """
    ff = spec.field()
    eps = 1e-4
    zp, tp = flow_many(ff, z, theta, eps, eps)
    zm, tm = flow_many(ff, z, theta, -eps, eps)
    v = ff.evaluate(z, theta)
    Fr = (obs_ru(ff.evaluate(zp, tp)) - obs_ru(ff.evaluate(zm, tm))) / (2 * eps)
    r = obs_ru(v)
    return Fr + r * r + v.K - v.hlam + v.lam ** 2 - v.vlam * r


# -- the a-function ------------------------------------------------------------

@dataclass
class AFunctionResult:
    values: np.ndarray
    tail_bound: float
    nu: float
    T_cut: float
    invariance_residual: float = float("nan")


def _backward_quadrature(ff, z, theta, T, dt, record=False):
    """Integrals I(t) = int r^u and J(t) = int exp(-I) lambda along phi_{-t}.

    Returns -J(T), the running-average rate nu, sup |lambda| seen, and (when
    ``record``) the arrays of I, J, r^u and lambda at every step point.
    """
    n = int(math.ceil(T / dt - 1e-9))
    h = T / n
    I = np.zeros(len(z))
    J = np.zeros(len(z))
    nu = np.inf
    sup_lam = 0.0
    trace = []

    def f(zz, tt, II):
        (dz, dth), v = ff.rhs(zz, tt, -1.0)
        return dz, dth, obs_ru(v), np.exp(-II) * v.lam, v

    for k in range(n):
        k1 = f(z, theta, I)
        if record:
            trace.append((I.copy(), J.copy(), k1[2], k1[4].lam))
        k2 = f(z + 0.5 * h * k1[0], theta + 0.5 * h * k1[1], I + 0.5 * h * k1[2])
        k3 = f(z + 0.5 * h * k2[0], theta + 0.5 * h * k2[1], I + 0.5 * h * k2[2])
        k4 = f(z + h * k3[0], theta + h * k3[1], I + h * k3[2])
        sup_lam = max(sup_lam, float(np.max(np.abs(k1[4].lam))))
        z = z + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        theta = theta + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        I = I + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        J = J + h / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        _check(z, theta)
        z, theta = _reduce(ff, z, theta, False)
        if (k + 1) * h >= 5.0:
            nu = min(nu, float(np.min(I / ((k + 1) * h))))
    if record:
        return -J, nu, sup_lam, trace, h
    return -J, nu, sup_lam


def a_function(spec, points, T=40.0, tol=A_TOL, dt=DT):
    """Solution of (F + r^u) a = -lambda by the backward resolvent quadrature.

    ``points`` is a sequence of SMPoint.  The tail beyond T is bounded by
    exp(-nu T) sup|lambda| / nu with nu the smallest running time average
    of r^u seen along the orbits; an empirical stand-in for the true
    minimal growth rate.
    """
    if not isinstance(spec.kind, HoloThermostat) or spec.kind.solution.m != 2:
        raise ValueError("the a-function is defined here for quadratic differentials")
    ff = spec.field()
    z = np.array([complex(p.z) for p in points])
    th = np.array([float(p.theta) for p in points])
    z, th = _reduce(ff, z, th, False)
    vals, nu, sup_lam = _backward_quadrature(ff, z, th, T, dt)
    if sup_lam == 0.0:
        return AFunctionResult(np.zeros(len(z)), 0.0, nu, T)
    if not nu > 0:
        raise TailNotConverged("running average of r^u is not positive")
    tail = math.exp(-nu * T) * sup_lam / nu
    if tail > tol:
        raise TailNotConverged(f"tail bound {tail:.3g} exceeds {tol:.3g}")
    return AFunctionResult(vals, tail, nu, T)


def a_function_invariance(spec, points, T=40.0, tol=A_TOL, dt=DT, offset=4):
    """Residual of (F + r^u) a + lambda by a five-point difference along the flow.

    The quadrature from p also yields a at every step point of the backward
    orbit, a(phi_{-s} p) = -exp(I(s)) (J(T) - J(s)), exactly the value a
    fresh quadrature started there on the same step grid would return.  The
    derivative along the flow is differenced at the point ``offset`` steps
    behind p, and the result describes that point.
    """
    ff = spec.field()
    z = np.array([complex(p.z) for p in points])
    th = np.array([float(p.theta) for p in points])
    z, th = _reduce(ff, z, th, False)
    base = a_function(spec, [SMPoint(a, b) for a, b in zip(z, th)], T, tol, dt)
    _, _, _, trace, h = _backward_quadrature(ff, z, th, T, dt, record=True)
    JT = -base.values
    a = [-np.exp(I) * (JT - J) for I, J, _, _ in trace[offset - 2:offset + 3]]
    # s runs backward in time, so d/ds a(phi_{-s} p) = -F a
    dads = (a[0] - 8 * a[1] + 8 * a[3] - a[4]) / (12 * h)
    _, _, ru, lam = trace[offset]
    res = -dads + ru * a[2] + lam
    base.invariance_residual = float(np.max(np.abs(res)))
    return base


def random_phase_points(spec, n, seed=0):
    """n points from the normalized Liouville measure, stream (seed, i) each."""
    ff = spec.field()
    data = _sampling_data(spec)
    pts = []
    for i in range(n):
        z, th = _initial_point(ff, data, orbit_rng(seed, i))
        pts.append(SMPoint(z, th))
    return pts


def rescaling_check(mesh, f, p0, T=3.0, dt=0.01):
    """Endpoints of the geodesic of exp(-2f) g_hyp and of the rescaled field on SM of g_hyp.

    Both orbits start at ``p0``; the identification of unit bundles only
    rescales vectors, so positions and angles should agree.
    """
    f = np.asarray(f.values if isinstance(f, ScalarField) else f, dtype=float)
    geo = VectorFieldSpec(mesh, Geodesic(), u=-f)
    res = VectorFieldSpec(mesh, Rescaled(f))
    a = integrate(geo, p0, T, dt).end
    b = integrate(res, p0, T, dt).end
    return a, b
