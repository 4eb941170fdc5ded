"""Resonant 1-forms at zero for quasi-Fuchsian flows, helicity and multiplicity bookkeeping.

A resonant 1-form is stored through the fiber Fourier modes h_k of one
coefficient function.  For the degree-2 thermostat of a vortex solution
(metric g, twist lambda with second mode lam2, curvature K < 0) the modes
are generated from a seed h_1 in the kernel of the twisted lowering
operator mu_- by

    h_k = 2 mu_+ h_{k-1} / ((k - 1) K),          k >= 2,

and must then satisfy 2 mu_- h_{k+1} = -(k + 1) K h_k, which is the
consistency check reported per mode.  Each new mode is projected onto the
lowest eigensections of the degree-k connection Laplacian before it is
used again, which keeps mesh-scale noise from being amplified k times.

The coefficient c = -h/2 multiplies the coframe combination
-lambda alpha - r^u beta + psi, with (alpha, beta, psi) dual to (X, H, V).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidCase, ResidualBlowup, WindingNotZero
from .mesh_calculus import (KSection, dbar_operator, eta_plus_operator, kernel_basis, mu_operators,
                            smooth_basis)
from .thermostat_dynamics import (A_TOL, N_ORBITS, T_DEFAULT, BirkhoffEstimate, Geodesic,
                                  HoloThermostat, a_function, chart_grid, flow_many, obs_divergence,
                                  random_phase_points, spline_coefficients, spline_gather,
                                  winding_cycles)

N_DEFAULT = 32
N_MAX = 64
RESIDUAL_THRESHOLD = 1e-2
MAX_BASIS = 400
SLOPE_RANGE = (8, None)


def basis_size(mesh, k):
    """Galerkin space size for degree k: grows like k^2, capped by the mesh."""
    return int(min(k * k + 80, MAX_BASIS, mesh.n_vertices - 2))


# -- Fourier fields ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FourierField:
    """Fiber Fourier modes of a function on SM, one vertex section per degree.

    With ``real`` set only nonnegative degrees are stored and the mode of
    degree -k is the conjugate of the mode of degree k.
    """

    modes: dict
    n_vertices: int
    N: int
    real: bool = True

    def __post_init__(self):
        for k, s in self.modes.items():
            if s.degree != k:
                raise ValueError(f"mode stored under {k} has degree {s.degree}")
            if self.real and k < 0:
                raise ValueError("a real field stores nonnegative degrees only")

    @property
    def degrees(self):
        return sorted(self.modes)

    @property
    def k_min(self):
        return -self.N if self.real else min(self.modes, default=0)

    @property
    def k_max(self):
        return max(self.modes, default=0)

    def component(self, k):
        if k in self.modes:
            return self.modes[k]
        if self.real and -k in self.modes:
            return KSection(k, np.conj(self.modes[-k].values))
        return KSection(k, np.zeros(self.n_vertices, dtype=complex))

    def scaled(self, factor):
        if self.real and np.iscomplexobj(factor) and np.imag(factor) != 0:
            raise ValueError("a real field can only be scaled by a real number")
        return FourierField({k: KSection(k, factor * s.values) for k, s in self.modes.items()},
                            self.n_vertices, self.N, self.real)

    def norms(self, mesh):
        return np.array([mesh.norm(self.component(k).values) for k in range(1, self.N + 1)])

    def is_zero(self):
        return all(not np.any(s.values) for s in self.modes.values())

    def to_json(self):
        return {"N": self.N, "real": self.real, "n_vertices": self.n_vertices,
                "modes": [self.modes[k].to_json() for k in self.degrees]}

    @classmethod
    def from_json(cls, data):
        modes = {}
        for item in data["modes"]:
            s = KSection.from_json(item)
            modes[s.degree] = s
        return cls(modes, int(data["n_vertices"]), int(data["N"]), bool(data["real"]))


@dataclass(frozen=True)
class ClassificationInput:
    w_plus_zero: bool
    w_minus_zero: bool
    helicity_zero: object = None
    b1: int = 4


# -- the recurrence --------------------------------------------------------------

@dataclass
class RecurrenceReport:
    residuals: np.ndarray          # lowering-relation residual for k = 1..N
    norms: np.ndarray              # ||h_k|| for k = 1..N
    Z: int
    growth_ok: np.ndarray          # bound ||h_k||^2 <= (k+Z)/(k-2) ||h_{k-1}||^2, k = 3..N
    slope: float
    slope_bound: float
    effective_N: int
    threshold: float
    n_basis: list = field(default_factory=list)
    min_abs_curvature: float = float("nan")

    def to_json(self):
        return {"residuals": self.residuals.tolist(), "norms": self.norms.tolist(), "Z": self.Z,
                "growth_ok": self.growth_ok.tolist(), "slope": self.slope,
                "slope_bound": self.slope_bound, "effective_N": self.effective_N,
                "threshold": self.threshold, "n_basis": list(self.n_basis),
                "min_abs_curvature": self.min_abs_curvature}


def _project(mesh, k, f, n_basis):
    _, Phi = smooth_basis(mesh, k, n_basis)
    return Phi @ (np.conj(Phi).T @ (mesh.vertex_areas() * f))


def growth_constant(ops):
    """Z = ceil(sup |mu_-(1/K)|^2), the exponent constant of the norm growth bound."""
    val = float(np.max(np.abs(ops.minus(0).matrix @ (1.0 / ops.curvature)) ** 2))
    return max(0, math.ceil(val - 1e-9))


def loglog_slope(norms, k_lo=8, k_hi=None):
    """Least-squares slope of log ||h_k|| against log k over [k_lo, k_hi]."""
    k_hi = len(norms) if k_hi is None else k_hi
    ks = np.arange(k_lo, k_hi + 1)
    vals = np.asarray(norms)[ks - 1]
    if len(ks) < 2 or np.any(vals <= 0):
        return float("nan")
    return float(np.polyfit(np.log(ks), np.log(vals), 1)[0])


def resonant_recurrence(h1, sol, N=N_DEFAULT, n_basis=None, threshold=RESIDUAL_THRESHOLD,
                        strict=True):
    """Modes h_1..h_{N+1} generated from a seed in ker mu_- on degree 1.

    ``sol`` is the vortex solution fixing the metric and the twist.  The
    lowering residual of mode k is ||2 mu_- h_{k+1} + (k+1) K h_k|| relative to
    ||(k+1) K h_k||.  With ``strict`` a residual above ``threshold`` raises
    ResidualBlowup carrying the full report.  Returns (FourierField, report).
    """
    if not 1 <= N <= N_MAX:
        raise ValueError(f"N must lie in [1, {N_MAX}]")
    if h1.degree != 1:
        raise ValueError("the seed must be a degree-1 section")
    if sol.m != 2:
        raise ValueError("the recurrence is set up for quadratic differentials")
    ops = mu_operators(sol.mesh, sol.u.values, sol.lam2)
    mesh, K = ops.mesh, ops.curvature
    size = (lambda k: basis_size(mesh, k)) if n_basis is None else (lambda k: int(n_basis))
    n_used = [size(k) for k in range(1, N + 2)]
    Z = growth_constant(ops)
    slope_bound = (Z + 2) / 2 + 0.5
    values = np.asarray(h1.values, dtype=complex)
    if not np.any(values):
        modes = {k: KSection(k, np.zeros(mesh.n_vertices, dtype=complex)) for k in range(1, N + 2)}
        report = RecurrenceReport(np.zeros(N), np.zeros(N), Z, np.ones(max(N - 2, 0), dtype=bool),
                                  float("nan"), slope_bound, N, threshold, n_used,
                                  float(np.min(np.abs(K))))
        return FourierField(modes, mesh.n_vertices, N), report

    hs = {1: _project(mesh, 1, values, n_used[0])}
    for k in range(2, N + 2):
        hk = 2 * (ops.plus(k - 1).matrix @ hs[k - 1]) / ((k - 1) * K)
        hs[k] = _project(mesh, k, hk, n_used[k - 1])

    res = np.zeros(N)
    for k in range(1, N + 1):
        rhs = -(k + 1) * K * hs[k]
        lhs = 2 * (ops.minus(k + 1).matrix @ hs[k + 1])
        res[k - 1] = mesh.norm(lhs - rhs) / mesh.norm(rhs)
    norms = np.array([mesh.norm(hs[k]) for k in range(1, N + 1)])
    growth = np.array([norms[k - 1] ** 2 <= (k + Z) / (k - 2) * norms[k - 2] ** 2 * (1 + 1e-12)
                       for k in range(3, N + 1)], dtype=bool)
    bad = np.nonzero(res > threshold)[0]
    effective = int(bad[0]) if bad.size else N
    slope = loglog_slope(norms, SLOPE_RANGE[0], N) if N >= SLOPE_RANGE[0] + 1 else float("nan")
    report = RecurrenceReport(res, norms, Z, growth, slope, slope_bound, effective, threshold,
                              n_used, float(np.min(np.abs(K))))
    modes = {k: KSection(k, hs[k]) for k in range(1, N + 2)}
    out = FourierField(modes, mesh.n_vertices, N)
    if strict and bad.size:
        k = int(bad[0]) + 1
        raise ResidualBlowup(f"lowering residual {res[k - 1]:.3g} at mode {k} exceeds {threshold:g}",
                             report)
    return out, report


def resonant_seeds(sol, **kw):
    """Complex basis of ker mu_- on degree 1 for the metric and twist of ``sol``."""
    ops = mu_operators(sol.mesh, sol.u.values, sol.lam2)
    return kernel_basis(ops.minus(1), **kw)


def resonant_family(sol, N=N_DEFAULT, strict=False, **kw):
    """Real resonant family: every complex seed h and i h, each run through the recurrence.

    Returns (fields, reports, kernel); the real dimension is twice the
    complex kernel dimension.
    """
    kernel = resonant_seeds(sol)
    fields, reports = [], []
    for seed in kernel.basis:
        h, rep = resonant_recurrence(seed, sol, N, strict=strict, **kw)
        fields += [h, FourierField({k: KSection(k, 1j * s.values) for k, s in h.modes.items()},
                                   h.n_vertices, h.N, h.real)]
        reports += [rep, rep]
    return fields, reports, kernel


# -- the resonant form -------------------------------------------------------------

@dataclass
class ResonantForm:
    """u = c (-lambda alpha - r^u beta + psi) with c = -h/2."""

    c: FourierField
    iota_F: np.ndarray
    iota_Yu: np.ndarray
    iota_Ys: np.ndarray
    horocyclic_A: np.ndarray
    horocyclic_B: np.ndarray
    recurrence: np.ndarray
    horocyclic_ok: bool
    orbit_check: dict = None

    def coframe(self, lam, vlam):
        """Coefficients of u against (alpha, beta, psi) per unit c."""
        return -lam, -(1.0 + 0.5 * vlam), np.ones_like(lam)

    def to_json(self):
        out = {"iota_F_max": float(np.max(np.abs(self.iota_F), initial=0.0)),
               "iota_Yu_max": float(np.max(np.abs(self.iota_Yu), initial=0.0)),
               "horocyclic_A": self.horocyclic_A.tolist(),
               "horocyclic_B": self.horocyclic_B.tolist(),
               "recurrence": self.recurrence.tolist(),
               "horocyclic_ok": self.horocyclic_ok}
        if self.orbit_check is not None:
            out["orbit_check"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                                  for k, v in self.orbit_check.items()}
        return out


def _spec_twist(spec):
    if isinstance(spec.kind, Geodesic):
        return np.zeros(spec.mesh.n_vertices), np.zeros(spec.mesh.n_vertices, dtype=complex)
    if isinstance(spec.kind, HoloThermostat) and spec.kind.solution.m == 2:
        sol = spec.kind.solution
        return sol.u.values, sol.lam2
    raise ValueError("resonant forms are built for the geodesic or degree-2 thermostats")


def horocyclic_residuals(h, spec):
    """Mode-wise residuals of the horocyclic system for the real field h.

    A_k: 2 eta_- h_{k+1} - (k+1) h_k + 2i (k+1) conj(lam2) h_{k+2}, relative to ||(k+1) h_k||
    B_k: 2 eta_+ h_{k-1} + (k-1) h_k + 2i (k-1) lam2 h_{k-2}, relative to ||(k-1) h_k||
    for k = 1..N-1 (A) and k = 2..N (B).
    """
    u, lam2 = _spec_twist(spec)
    mesh = spec.mesh.with_conformal(u) if np.any(u) else spec.mesh
    N = h.N
    A = np.zeros(max(N - 1, 0))
    B = np.zeros(max(N - 1, 0))
    for k in range(1, N):
        hk = h.component(k).values
        r = (2 * (dbar_operator(mesh, k + 1).matrix @ h.component(k + 1).values) - (k + 1) * hk
             + 2j * (k + 1) * np.conj(lam2) * h.component(k + 2).values)
        scale = mesh.norm((k + 1) * hk)
        A[k - 1] = mesh.norm(r) / scale if scale > 0 else mesh.norm(r)
    for k in range(2, N + 1):
        hk = h.component(k).values
        r = (2 * (eta_plus_operator(mesh, k - 1).matrix @ h.component(k - 1).values)
             + (k - 1) * hk + 2j * (k - 1) * lam2 * h.component(k - 2).values)
        scale = mesh.norm((k - 1) * hk)
        B[k - 2] = mesh.norm(r) / scale if scale > 0 else mesh.norm(r)
    return A, B


def reconstruct_resonant_form(h, spec, recurrence=None, points=None, orbit_check=False, **kw):
    """Resonant 1-form data from the Fourier field h.

    ``recurrence`` is the per-mode lowering residual from the recurrence; the
    horocyclic residuals must stay within ten times it.  The contractions
    with F, Y^u and Y^s are evaluated at ``points`` (default: 20 Liouville
    samples); the first two vanish identically by the choice of coframe.
    With ``orbit_check`` the flow equation (F + r^s) h = 0 is also tested
    by finite differences along orbits (see :func:`orbit_flow_residual`).
    """
    c = h.scaled(-0.5)
    ff = spec.field()
    if points is None:
        points = random_phase_points(spec, 20, seed=kw.get("seed", 0))
    z = np.array([complex(p.z) for p in points])
    th = np.array([float(p.theta) for p in points])
    v = ff.evaluate(z, th)
    ru, rs = 1.0 + 0.5 * v.vlam, -1.0 + 0.5 * v.vlam
    ca, cb, cp = -v.lam, -ru, np.ones_like(ru)
    # F = X + lambda V, Y^u = H + r^u V, Y^s = H + r^s V
    iota_F = ca * 1.0 + cp * v.lam
    iota_Yu = cb * 1.0 + cp * ru
    iota_Ys = cb * 1.0 + cp * rs
    A, B = horocyclic_residuals(h, spec)
    rec = np.zeros(h.N) if recurrence is None else np.asarray(recurrence)
    floor = 1e-12
    ok_A = all(A[k - 1] <= 10 * max(rec[k - 1], floor) for k in range(1, h.N))
    ok_B = all(B[k - 2] <= 10 * max(rec[k - 2], floor) for k in range(2, h.N + 1))
    check = None
    if orbit_check:
        check = orbit_flow_residual(h, spec, **kw)
    return ResonantForm(c, iota_F, iota_Yu, iota_Ys, A, B, rec, bool(ok_A and ok_B), check)


class ModeSpline:
    """Spline evaluation of a real Fourier field at phase points, modes 1..n_modes."""

    def __init__(self, h, spec, n_modes):
        grid = chart_grid(spec.mesh, spec.grid_size)
        grids = grid.sample_many([(h.component(k).values, k) for k in range(1, n_modes + 1)])
        cols = []
        for g in grids:
            cols += [g.real, g.imag]
        self.coeffs = spline_coefficients(cols)
        self.n, self.radius, self.n_modes = grid.n, grid.radius, n_modes

    def __call__(self, z, theta):
        vals = spline_gather(self.coeffs, self.n, self.radius, z)
        out = np.zeros(np.shape(z))
        for k in range(1, self.n_modes + 1):
            hk = vals[2 * k - 2] + 1j * vals[2 * k - 1]
            out += 2 * (hk * np.exp(1j * k * theta)).real
        return out


def orbit_flow_residual(h, spec, n_points=10, n_theta=64, n_modes=None, compared=2, eps=0.05,
                        seed=0):
    """(F + r^s) h along short orbit pieces, compared on low fiber modes.

    h is truncated to its first ``n_modes`` modes (default: all of them, at
    most 6).  At each of ``n_points`` base points the flow derivative is a
    five-point difference over orbits started at ``n_theta`` equally spaced
    angles.  Truncation only disturbs fiber modes of degree n_modes - 1 and
    up; residual and derivative term are compared on degrees |k| <=
    ``compared`` after an FFT in the angle, pooled over the base points.
    """
    n_modes = min(h.N, 6) if n_modes is None else int(n_modes)
    if not 0 <= compared <= n_modes - 2:
        raise ValueError("compared degrees must stay below n_modes - 1")
    ff = spec.field()
    hs = ModeSpline(h, spec, n_modes)
    base = random_phase_points(spec, n_points, seed)
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    z = np.repeat([complex(p.z) for p in base], n_theta)
    theta = np.tile(th, n_points)
    vals = {}
    for j in (-2, -1, 1, 2):
        zz, tt = flow_many(ff, z, theta, j * eps, eps)
        vals[j] = hs(zz, tt)
    Fh = (-vals[2] + 8 * vals[1] - 8 * vals[-1] + vals[-2]) / (12 * eps)
    v = ff.evaluate(z, theta)
    rs = -1.0 + 0.5 * v.vlam
    R = (Fh + rs * hs(z, theta)).reshape(n_points, n_theta)
    Fh = Fh.reshape(n_points, n_theta)
    idx = np.r_[0:compared + 1, n_theta - compared:n_theta]
    Rk = np.fft.fft(R, axis=1)[:, idx]
    Fk = np.fft.fft(Fh, axis=1)[:, idx]
    per_point = np.linalg.norm(Rk, axis=1) / np.maximum(np.linalg.norm(Fk, axis=1), 1e-300)
    pooled = float(np.linalg.norm(Rk) / max(np.linalg.norm(Fk), 1e-300))
    return {"relative": pooled, "per_point": per_point, "n_modes": n_modes,
            "compared_modes": compared, "eps": eps}


# -- helicity ----------------------------------------------------------------------

@dataclass(frozen=True)
class HelicityEstimate(BirkhoffEstimate):
    numerator: float = float("nan")
    denominator: float = float("nan")
    entropy_production: float = float("nan")
    volume: float = float("nan")
    a2_mean: float = float("nan")
    windings: tuple = ()

    def to_json(self):
        out = super().to_json()
        out.update({"numerator": self.numerator, "denominator": self.denominator,
                    "entropy_production": self.entropy_production, "volume": self.volume,
                    "a2_mean": self.a2_mean,
                    "windings": [[w.mean, w.stderr] for w in self.windings]})
        return out


def helicity(spec, T=T_DEFAULT, n_orbits=N_ORBITS, seed=0, n_a=256, a_T=40.0, a_tol=A_TOL,
             k=3.0, **kw):
    """Helicity (1 + e+/2) / (2 pi vol_g + int a^2 Omega) by Monte Carlo.

    Both winding cycles must vanish at ``k`` standard errors, else
    WindingNotZero.  e+ comes from the same forward orbits; int a^2 Omega
    is 2 pi vol_g times the Liouville mean of a^2 over ``n_a`` points.
    """
    if not isinstance(spec.kind, (Geodesic, HoloThermostat)) or (
            isinstance(spec.kind, HoloThermostat) and spec.kind.solution.m != 2):
        raise ValueError("helicity is available for the geodesic and degree-2 thermostats")
    wp, wm, ep, _ = winding_cycles(spec, T, n_orbits, seed, extra=[obs_divergence], **kw)
    for name, w in (("W+", wp), ("W-", wm)):
        for i, est in enumerate(w):
            if not est.is_zero(k):
                raise WindingNotZero(f"{name}[{i}] = {est.mean:.3g} +- {est.stderr:.2g}")
    if isinstance(spec.kind, Geodesic):
        e_plus, e_err = 0.0, 0.0
        a2, a2_err = 0.0, 0.0
    else:
        e_plus, e_err = -ep[0].mean, ep[0].stderr
        pts = random_phase_points(spec, n_a, seed)
        a = a_function(spec, pts, a_T, a_tol).values
        a2 = float(np.mean(a ** 2))
        a2_err = float(np.std(a ** 2, ddof=1) / math.sqrt(n_a)) if n_a > 1 else 0.0
    vol = float(spec.mesh.with_conformal(spec.conformal).area() if np.any(spec.conformal)
                else spec.mesh.area())
    num = 1.0 + 0.5 * e_plus
    den = 2 * math.pi * vol * (1.0 + a2)
    value = num / den
    rel = math.hypot(0.5 * e_err / num, a2_err / (1.0 + a2))
    return HelicityEstimate(value, abs(value) * rel, n_orbits, float(T), int(seed), num, den,
                            e_plus, vol, a2, tuple(wp) + tuple(wm))


# -- classification ----------------------------------------------------------------

# rows: (w+ nonzero, w- nonzero, helicity nonzero) ->
#       (d(Res_0^1) nontrivial, m10 - b1, d(Res^1) nontrivial, m1 - b1)
TABLE = {
    (True, True, None): (False, -1, False, 0),
    (True, False, None): (False, 0, False, 0),
    (False, True, None): (True, 0, True, 1),
    (False, False, True): (False, 0, True, 1),
    (False, False, False): (True, 1, True, 1),
}


def classify(case):
    """Multiplicities of resonant 1-forms at zero from the winding and helicity flags."""
    if not isinstance(case, ClassificationInput):
        case = ClassificationInput(**case)
    b1 = int(case.b1)
    if b1 < 0:
        raise InvalidCase("b1 must be nonnegative")
    wp, wm = not case.w_plus_zero, not case.w_minus_zero
    if (wp or wm) and case.helicity_zero is not None:
        raise InvalidCase("helicity is only defined when both winding cycles vanish")
    if not (wp or wm) and case.helicity_zero is None:
        raise InvalidCase("both winding cycles vanish, so the helicity flag is required")
    if (wp or wm) and b1 < 1:
        raise InvalidCase("a nonzero winding cycle needs b1 >= 1")
    hel = None if (wp or wm) else (not case.helicity_zero)
    d0, m10, d1, m1 = TABLE[(wp, wm, hel)]
    return {"res01_d_nontrivial": d0, "m10": b1 + m10, "res1_d_nontrivial": d1, "m1": b1 + m1}


def ruelle_order(m10_inf):
    """Order of vanishing of the Ruelle zeta function at zero, assuming semisimplicity."""
    return int(m10_inf) - 2


# -- pairing -----------------------------------------------------------------------

@dataclass
class GramSweep:
    """Abel-regularized pairing matrices over a sweep of rho (experimental)."""

    rhos: np.ndarray
    matrices: list
    singular_values: list
    ranks: list
    rank_tol: float
    trend: list = field(default_factory=list)

    def to_json(self):
        return {"experimental": True, "rhos": self.rhos.tolist(),
                "matrices": [[[[float(x.real), float(x.imag)] for x in row] for row in G]
                             for G in self.matrices],
                "singular_values": [s.tolist() for s in self.singular_values],
                "ranks": self.ranks, "rank_tol": self.rank_tol, "trend": self.trend}


def coresonant(h):
    """Coresonant partner by conjugation and the fiber flip theta -> theta + pi."""
    return FourierField({k: KSection(k, (-1) ** k * np.conj(s.values)) for k, s in h.modes.items()},
                        h.n_vertices, h.N, h.real)


def gram_pairing(h_list, h_star_list, mesh, abel_rho=0.9, sweep=(0.5, 0.7, 0.8, 0.9, 0.95, 0.99),
                 rank_tol=1e-8):
    """sum_k rho^|k| int c_k c*_{-k} dvol for resonant and coresonant families.

    c = -h/2 on both sides and the fiber integral contributes 2 pi.  The
    matrix at ``abel_rho`` is the first entry of the returned sweep.  The
    rank is counted against ``rank_tol`` times the largest singular value
    and is only reported.
    """
    rhos = np.array([abel_rho] + [r for r in sweep if r != abel_rho], dtype=float)
    if np.any((rhos <= 0) | (rhos >= 1)):
        raise ValueError("rho must lie in (0, 1)")
    w = mesh.vertex_areas()
    n, m = len(h_list), len(h_star_list)
    N = max([h.N for h in list(h_list) + list(h_star_list)], default=0)
    # per-degree pairings, then the Abel weights
    P = np.zeros((2 * N + 1, n, m), dtype=complex)
    for i, h in enumerate(h_list):
        for j, hs in enumerate(h_star_list):
            for k in range(-N, N + 1):
                if k == 0:
                    continue
                ck = -0.5 * h.component(k).values
                cs = -0.5 * hs.component(-k).values
                P[k + N, i, j] = 2 * math.pi * np.sum(w * ck * cs)
    mats, svals, ranks = [], [], []
    ks = np.abs(np.arange(-N, N + 1))
    for rho in rhos:
        G = np.tensordot(rho ** ks, P, axes=(0, 0)) if N else np.zeros((n, m), dtype=complex)
        s = np.linalg.svd(G, compute_uv=False) if G.size else np.zeros(0)
        mats.append(G)
        svals.append(s)
        ranks.append(int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0)
    order = np.argsort(rhos)
    norms = [float(np.linalg.norm(mats[i])) for i in order]
    trend = ["up" if b > a else "down" if b < a else "flat" for a, b in zip(norms, norms[1:])]
    return GramSweep(rhos, mats, svals, ranks, rank_tol, trend)
