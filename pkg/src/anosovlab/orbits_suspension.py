"""Closed orbits: cat-map suspensions, partial Ruelle zeta products, weighted orbit averages."""

from dataclasses import dataclass
from fractions import Fraction
import math

import numpy as np

from .errors import EmptyWindow, IncompleteClasses
from .resonance_helicity import ClassificationInput, classify, ruelle_order
from .thermostat_dynamics import (VectorFieldSpec, _check, _reduce, _rk4_step, obs_one,
                                  resolve_observable)

MAX_POWER = 30


@dataclass(frozen=True)
class CatMapSuspension:
    """Suspension of a hyperbolic toral automorphism with constant roof 1."""

    A: tuple

    def __post_init__(self):
        A = tuple(tuple(int(x) for x in row) for row in self.A)
        if len(A) != 2 or any(len(r) != 2 for r in A):
            raise ValueError("A must be a 2x2 integer matrix")
        det = A[0][0] * A[1][1] - A[0][1] * A[1][0]
        if det != 1:
            raise ValueError(f"det A = {det}, expected 1")
        if abs(A[0][0] + A[1][1]) <= 2:
            raise ValueError("A is not hyperbolic: |trace| <= 2")
        object.__setattr__(self, "A", A)

    @property
    def roof(self):
        return 1

    @classmethod
    def parse(cls, text):
        vals = [int(v) for v in text.replace(";", ",").split(",")]
        if len(vals) != 4:
            raise ValueError("expected four comma-separated integers")
        return cls(((vals[0], vals[1]), (vals[2], vals[3])))


def _matmul(a, b):
    return ((a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]),
            (a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]))


def matrix_power(A, n):
    out = ((1, 0), (0, 1))
    base = A
    while n:
        if n & 1:
            out = _matmul(out, base)
        base = _matmul(base, base)
        n >>= 1
    return out


def cat_fixed_count(susp, n):
    """Number of fixed points of A^n on the torus, |trace(A^n) - 2|, in exact integers."""
    if not 1 <= int(n) <= MAX_POWER:
        raise ValueError(f"n must lie in [1, {MAX_POWER}]")
    P = matrix_power(susp.A, int(n))
    return abs(P[0][0] + P[1][1] - 2)


def suspension_invariants(susp):
    """Resonance bookkeeping for the suspension flow, through the classification table.

    The flow preserves the product volume and the time form dt integrates
    to 1 against it, so both winding cycles are nonzero; b1 = 1 because A
    has no eigenvalue 1.
    """
    # dt(d/dt) = 1 integrated over a torus of area 1 times the roof
    volume = Fraction(1) * susp.roof
    winding_dt = (Fraction(1) * volume) / volume
    row = classify(ClassificationInput(w_plus_zero=False, w_minus_zero=False, b1=1))
    return {"b1": 1, "winding_nonzero": winding_dt != 0, "winding_dt": float(winding_dt),
            "m10": row["m10"], "m1": row["m1"], "ruelle_order": ruelle_order(row["m10"]),
            "semisimple_assumed": True}


# -- zeta products ---------------------------------------------------------------

def zeta_partial(classes, s, L, complete_to=None):
    """prod (1 - exp(-s T)) over the primitive orbits of length T <= L.

    ``complete_to`` is the length up to which ``classes`` is known to be
    complete (default: its longest length).
    """
    s = complex(s)
    if not classes:
        return complex(1.0)
    reach = max(c.length for c in classes) if complete_to is None else float(complete_to)
    if reach < L:
        raise IncompleteClasses(f"classes are complete up to {reach:.6g} < L = {L:.6g}")
    out = complex(1.0)
    for c in classes:
        if c.length <= L:
            out *= 1.0 - np.exp(-s * c.length)
    return out


def zeta_tail_differences(classes, s, Ls, complete_to=None):
    """|zeta_L(s) - zeta_L'(s)| for successive entries of Ls."""
    vals = [zeta_partial(classes, s, L, complete_to) for L in Ls]
    return [abs(b - a) for a, b in zip(vals, vals[1:])]


# -- weighted orbit averages ------------------------------------------------------

def homology_class(word, n_generators=8):
    """Abelianized word: generator k counts +1, its inverse k + n/2 counts -1."""
    half = n_generators // 2
    h = np.zeros(half, dtype=np.int64)
    for letter in word:
        if letter < half:
            h[letter] += 1
        else:
            h[letter - half] -= 1
    return h


def axis_start(cls):
    """Point on the axis of the representative nearest the origin, pointing to the attractor."""
    g = cls.representative
    w_minus, w_plus = g.fixed_points()
    mid = w_plus + w_minus
    if abs(mid) < 1e-14:
        z0 = 0.0j
    else:
        half = abs(np.angle(w_plus / w_minus)) / 2
        r = (1 - math.sin(half)) / math.cos(half)
        z0 = r * mid / abs(mid)
    theta0 = float(np.angle((w_plus - z0) / (1 - np.conj(z0) * w_plus)))
    return complex(z0), theta0


def orbit_means(spec, classes, observables, dt=0.005, starts=None):
    """Time averages of observables over one period of each closed geodesic.

    Returns an array of shape (n_observables, n_classes).
    """
    ff = spec.field()
    obs = [resolve_observable(o) for o in observables]
    if starts is None:
        starts = [axis_start(c) for c in classes]
    z = np.array([s[0] for s in starts], dtype=complex)
    theta = np.array([s[1] for s in starts], dtype=float)
    z, theta = _reduce(ff, z, theta, False)
    periods = np.array([c.length for c in classes])
    n_steps = np.maximum(1, np.ceil(periods / dt - 1e-9).astype(int))
    h = periods / n_steps
    acc = np.zeros((len(obs), len(classes)))
    clock = np.zeros(len(classes))
    for step in range(int(n_steps.max())):
        live = step < n_steps
        zs, ts, vals, _ = _rk4_step(ff, z[live], theta[live], h[live], 1.0, obs + [obs_one])
        _check(zs, ts)
        z[live], theta[live] = _reduce(ff, zs, ts, False)
        for j in range(len(obs)):
            acc[j, live] += vals[j]
        clock[live] += vals[-1]
    return acc / clock


@dataclass
class OrbitAverage:
    mean: float
    spread: float
    n_classes: int
    window: tuple
    weight: float

    def to_json(self):
        return {"mean": self.mean, "spread": self.spread, "n_classes": self.n_classes,
                "window": list(self.window), "weight": self.weight}


def weighted_orbit_average(classes, observable, psi_weight=-1.0, T=8.0, mesh=None, spec=None,
                           null_homologous=False, dt=0.005):
    """Average of an observable over closed geodesics of length in (T - 1, T].

    Orbit gamma carries the weight exp(psi_weight T_gamma) and contributes
    the time average of the observable over one period.  ``spread`` is the
    weighted standard deviation of the orbit averages.  With
    ``null_homologous`` only classes whose words abelianize to zero count.
    """
    if spec is None:
        if mesh is None:
            raise ValueError("pass a mesh or a geodesic spec")
        spec = VectorFieldSpec(mesh)
    window = [c for c in classes if T - 1 < c.length <= T]
    if null_homologous:
        window = [c for c in window if not np.any(homology_class(c.word))]
    if not window:
        raise EmptyWindow(f"no closed orbit with length in ({T - 1:g}, {T:g}]")
    vals = orbit_means(spec, window, [observable], dt)[0]
    lengths = np.array([c.length for c in window])
    w = np.exp(psi_weight * (lengths - lengths.max()))
    w = w / w.sum()
    mean = float(np.sum(w * vals))
    spread = float(math.sqrt(max(np.sum(w * (vals - mean) ** 2), 0.0)))
    return OrbitAverage(mean, spread, len(window), (T - 1, T), float(psi_weight))
