"""Hyperbolic geometry in the Poincare disk and the Bolza group.

Conventions
-----------
A :class:`MobiusMap` stores a real 2x2 matrix of determinant one acting on
the upper half plane.  Every map is used on the disk through the Cayley
transform ``z = (w - i) / (w + i)``; the disk form ``z -> (a z + b) /
(conj(b) z + conj(a))`` with ``|a|^2 - |b|^2 = 1`` is cached on
construction.  The metric on the disk is ``exp(2 psi) |dz|^2`` with
``psi = log(2 / (1 - |z|^2))``, curvature -1.

Fiber angles are Euclidean angles of unit tangent vectors in the disk
chart, so a deck map ``g`` carries ``(z, theta)`` to
``(g z, theta + arg g'(z))``.
"""

from dataclasses import dataclass, field
import itertools
import json
import math

import numpy as np

from .errors import BudgetExceeded, PointTooFar

SQRT2 = math.sqrt(2.0)
BOLZA_TRACE = 2.0 * (1.0 + SQRT2)
BOLZA_SYSTOLE = 2.0 * math.acosh(1.0 + SQRT2)

_C = np.array([[1.0, -1.0j], [1.0, 1.0j]])
_CINV = np.linalg.inv(_C)


class DiskPoint(complex):
    """A complex number strictly inside the unit disk."""

    def __new__(cls, z):
        z = complex(z)
        if not abs(z) < 1.0:
            raise ValueError(f"{z} is not inside the unit disk")
        return super().__new__(cls, z.real, z.imag)


@dataclass(frozen=True, eq=False)
class MobiusMap:
    matrix: np.ndarray
    a: complex = field(init=False, repr=False)
    b: complex = field(init=False, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(2, 2)
        det = np.linalg.det(m)
        if abs(det - 1.0) > 1e-9 * max(1.0, float(np.abs(m).max()) ** 2):
            raise ValueError(f"determinant {det} is not 1")
        m = m / math.sqrt(det)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        d = _C @ m @ _CINV
        object.__setattr__(self, "a", complex(d[0, 0]))
        object.__setattr__(self, "b", complex(d[0, 1]))

    @classmethod
    def from_disk(cls, a, b):
        """Build from the disk coefficients (needs |a|^2 - |b|^2 = 1)."""
        d = np.array([[a, b], [np.conj(b), np.conj(a)]], dtype=complex)
        m = _CINV @ d @ _C
        return cls(np.real_if_close(m, tol=1e6).real)

    @classmethod
    def identity(cls):
        return cls(np.eye(2))

    @classmethod
    def rotation(cls, phi):
        return cls.from_disk(np.exp(0.5j * phi), 0.0)

    @classmethod
    def translation(cls, length, direction=0.0):
        """Hyperbolic translation by ``length`` along the diameter at angle ``direction``."""
        t = cls.from_disk(math.cosh(length / 2), math.sinh(length / 2))
        if direction == 0.0:
            return t
        r = cls.rotation(direction)
        return r @ t @ r.inverse()

    def __matmul__(self, other):
        return MobiusMap(self.matrix @ other.matrix)

    def inverse(self):
        m = self.matrix
        return MobiusMap(np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]))

    def __call__(self, z):
        z = np.asarray(z)
        out = (self.a * z + self.b) / (np.conj(self.b) * z + np.conj(self.a))
        return complex(out) if out.ndim == 0 else out

    def derivative(self, z):
        z = np.asarray(z)
        out = 1.0 / (np.conj(self.b) * z + np.conj(self.a)) ** 2
        return complex(out) if out.ndim == 0 else out

    def angle_shift(self, z):
        return np.angle(self.derivative(z))

    @property
    def trace(self):
        return float(self.matrix[0, 0] + self.matrix[1, 1])

    @property
    def translation_length(self):
        t = abs(self.trace)
        return 2.0 * math.acosh(t / 2.0) if t > 2.0 else 0.0

    def fixed_points(self):
        """Repelling and attracting boundary fixed points of a hyperbolic map."""
        a, b = self.a, self.b
        c, d = np.conj(b), np.conj(a)
        # c z^2 + (d - a) z - b = 0
        roots = np.roots([c, d - a, -b]) if abs(c) > 1e-300 else np.array([np.inf, -np.inf])
        ders = [abs(self.derivative(r)) for r in roots]
        order = np.argsort(ders)[::-1]
        return complex(roots[order[0]]), complex(roots[order[1]])

    def is_close(self, other, tol=1e-10):
        m = self.matrix
        o = other.matrix
        return bool(min(np.abs(m - o).max(), np.abs(m + o).max()) < tol)

    def to_json(self):
        return [float(x) for x in self.matrix.ravel()]


def mobius_apply(g, p):
    return DiskPoint(g(complex(p)))


def mobius_angle_shift(g, p):
    return float(g.angle_shift(complex(p)))


def hyperbolic_distance(z1, z2):
    z1 = np.asarray(z1)
    z2 = np.asarray(z2)
    num = np.abs(z1 - z2) ** 2
    den = (1.0 - np.abs(z1) ** 2) * (1.0 - np.abs(z2) ** 2)
    return np.arccosh(1.0 + 2.0 * num / den)


def psi_hyp(z):
    return np.log(2.0 / (1.0 - np.abs(z) ** 2))


def psi_hyp_grad(z):
    """(d/dx, d/dy) of psi_hyp."""
    z = np.asarray(z)
    w = 1.0 - np.abs(z) ** 2
    return 2.0 * z.real / w, 2.0 * z.imag / w


def geodesic_point(z, theta, t):
    """Point and direction after unit-speed geodesic motion for time t."""
    w = np.tanh(np.asarray(t) / 2.0) * np.exp(1j * np.asarray(theta))
    zz = (w + z) / (1.0 + np.conj(z) * w)
    # derivative of w -> (w + z)/(1 + conj(z) w) is (1 - |z|^2)/(1 + conj(z) w)^2
    der = (1.0 - np.abs(z) ** 2) / (1.0 + np.conj(z) * w) ** 2
    return zz, np.asarray(theta) + np.angle(der)


def klein(z):
    z = np.asarray(z)
    return 2.0 * z / (1.0 + np.abs(z) ** 2)


def from_klein(k):
    k = np.asarray(k)
    return k / (1.0 + np.sqrt(np.maximum(0.0, 1.0 - np.abs(k) ** 2)))


@dataclass(frozen=True, eq=False)
class FuchsianGroup:
    """A cocompact Fuchsian group with a regular polygonal fundamental domain.

    ``generators[k]`` maps side ``k + n/2`` of the polygon onto side ``k``.
    Side ``k`` faces the direction ``2 pi k / n``.
    """

    generators: list
    relation_word: list
    fundamental_domain: np.ndarray
    side_centers: np.ndarray
    side_radius: float
    inradius: float
    circumradius: float
    owned_sides: tuple
    vertex_deck: list = field(repr=False)

    @property
    def n_sides(self):
        return len(self.generators)

    def side_generator(self, k):
        """Generator pushing a point that lies beyond side k back across it."""
        return (k + self.n_sides // 2) % self.n_sides

    def to_json(self):
        return {
            "generators": [g.to_json() for g in self.generators],
            "relation_word": list(self.relation_word),
            "fundamental_domain": [[float(v.real), float(v.imag)] for v in self.fundamental_domain],
        }


def _word_product(gens, word):
    m = MobiusMap.identity()
    for i in word:
        m = m @ gens[i]
    return m


def bolza_group():
    n = 8
    d = math.acosh(1.0 + SQRT2)          # center to side midpoint
    gens = [MobiusMap.translation(2 * d, 2 * math.pi * k / n) for k in range(n)]
    x0 = math.tanh(d / 2)                # Euclidean distance to side midpoint
    center = (1 + x0 * x0) / (2 * x0)
    radius = (1 - x0 * x0) / (2 * x0)
    centers = center * np.exp(2j * np.pi * np.arange(n) / n)
    rv = 2.0 ** -0.25                    # Euclidean radius of the vertices
    verts = rv * np.exp(1j * (np.pi / n + 2 * np.pi * np.arange(n) / n))
    relation = _find_relation(gens)
    # deck maps carrying the canonical vertex (index 0) to every vertex copy
    deck = [None] * n
    deck[0] = MobiusMap.identity()
    frontier = [(MobiusMap.identity(), 0)]
    while frontier and any(x is None for x in deck):
        nxt = []
        for g, _ in frontier:
            for h in gens:
                gh = h @ g
                w = gh(verts[0])
                j = int(np.argmin(np.abs(verts - w)))
                if abs(verts[j] - w) < 1e-9 and deck[j] is None:
                    deck[j] = gh
                    nxt.append((gh, j))
        frontier = nxt
    return FuchsianGroup(
        generators=gens,
        relation_word=relation,
        fundamental_domain=verts,
        side_centers=centers,
        side_radius=radius,
        inradius=d,
        circumradius=2 * math.atanh(rv),
        owned_sides=tuple(range(n // 2)),
        vertex_deck=deck,
    )


def _find_relation(gens):
    """Search for the surface relation: each generator used once in some order."""
    n = len(gens)
    ident = np.eye(2)
    half = n // 2
    for perm in itertools.permutations(range(1, n)):
        word = [0, *perm]
        # skip words that cancel freely (adjacent inverse letters, cyclically)
        if any((word[i] - word[i - 1]) % n == half for i in range(n)):
            continue
        m = _word_product(gens, word).matrix
        if min(np.abs(m - ident).max(), np.abs(m + ident).max()) < 1e-9:
            return word
    raise RuntimeError("no relation found")


def _outside_mask(group, z, k, eps):
    dist = np.abs(z - group.side_centers[k])
    if k in group.owned_sides:
        return dist < group.side_radius - eps
    return dist < group.side_radius + eps


def reduce_many(group, z, theta, max_steps=8, eps=1e-12, track=False):
    """Vectorised reduction into the fundamental domain.

    Returns the reduced points, angles, and (when ``track``) the disk
    coefficients (a, b) of the composite deck map applied to each point.
    """
    z = np.array(z, dtype=complex, copy=True)
    theta = np.array(theta, dtype=float, copy=True)
    ca = np.ones(z.shape, dtype=complex)
    cb = np.zeros(z.shape, dtype=complex)
    active = np.ones(z.shape, dtype=bool)
    for _ in range(max_steps + 1):
        moved = np.zeros(z.shape, dtype=bool)
        for k in range(group.n_sides):
            mask = active & ~moved & _outside_mask(group, z, k, eps)
            if not mask.any():
                continue
            g = group.generators[group.side_generator(k)]
            zi = z[mask]
            theta[mask] += g.angle_shift(zi)
            z[mask] = g(zi)
            if track:
                a0, b0 = ca[mask], cb[mask]
                ca[mask] = g.a * a0 + g.b * np.conj(b0)
                cb[mask] = g.a * b0 + g.b * np.conj(a0)
            moved |= mask
        if not moved.any():
            break
        active = moved
    else:
        raise PointTooFar(f"reduction needed more than {max_steps} deck steps")
    if np.any(moved):
        raise PointTooFar(f"reduction needed more than {max_steps} deck steps")
    # canonical vertex copy
    verts = group.fundamental_domain
    dv = np.abs(z[..., None] - verts)
    near = dv.min(axis=-1) < 1e-9
    if near.any():
        for idx in zip(*np.nonzero(near)):
            j = int(np.argmin(dv[idx]))
            if j == 0:
                continue
            g = group.vertex_deck[j].inverse()
            theta[idx] += g.angle_shift(z[idx])
            z[idx] = verts[0]
            if track:
                a0, b0 = ca[idx], cb[idx]
                ca[idx] = g.a * a0 + g.b * np.conj(b0)
                cb[idx] = g.a * b0 + g.b * np.conj(a0)
    theta = np.mod(theta, 2 * np.pi)
    if track:
        return z, theta, ca, cb
    return z, theta


def reduce(group, p, theta=0.0, max_steps=8):
    """Reduce (p, theta) into the fundamental domain.

    Returns ``(q, theta', word)`` with ``word`` the generator indices
    applied, in order.
    """
    z = complex(p)
    word = []
    th = float(theta)
    for _ in range(max_steps + 1):
        for k in range(group.n_sides):
            if _outside_mask(group, np.array(z), k, 1e-12):
                gi = group.side_generator(k)
                g = group.generators[gi]
                th += float(g.angle_shift(z))
                z = g(z)
                word.append(gi)
                break
        else:
            break
    else:
        raise PointTooFar(f"reduction needed more than {max_steps} deck steps")
    verts = group.fundamental_domain
    j = int(np.argmin(np.abs(verts - z)))
    if abs(verts[j] - z) < 1e-9 and j != 0:
        g = group.vertex_deck[j].inverse()
        th += float(g.angle_shift(z))
        z = complex(verts[0])
        word.append(("vertex", j))
    return DiskPoint(z), th % (2 * math.pi), word


def in_fundamental_domain(group, z, eps=1e-12):
    z = np.asarray(z)
    ok = np.ones(z.shape, dtype=bool)
    for k in range(group.n_sides):
        ok &= ~_outside_mask(group, z, k, eps)
    return ok


@dataclass(frozen=True, eq=False)
class ConjugacyClass:
    representative: MobiusMap
    word: list
    trace: float
    length: float
    crossings: np.ndarray = field(repr=False, default=None)

    def to_json(self):
        return {
            "matrix": self.representative.to_json(),
            "word": list(self.word),
            "trace": self.trace,
            "length": self.length,
        }


def _polygon_exit(group, z, w_plus, w_minus):
    """Hyperbolic distance from z to where the geodesic toward w_plus leaves the polygon."""
    # Klein model: convex clipping against the side lines
    kv = klein(group.fundamental_domain)
    p = complex(klein(z))
    dvec = w_plus - w_minus
    a = kv
    e = np.roll(kv, -1) - kv
    normal = -1j * e  # outward for counterclockwise vertices
    speed = (normal * np.conj(dvec)).real
    gap = (normal * np.conj(a - p)).real
    # sides parallel to the chord (a geodesic running along a side) never stop it
    out = speed > 1e-9 * np.abs(normal) * abs(dvec)
    if not out.any():
        return 0.0
    t = max(float(np.min(gap[out] / speed[out])), 0.0)
    return float(hyperbolic_distance(z, from_klein(p + t * dvec)))


def trace_closed_geodesic(group, g, step_past=1e-7):
    """Lifts of the closed geodesic of g that cross the fundamental domain.

    Walks once around the closed geodesic, recording the ideal endpoints
    (as angles, repelling then attracting) of the lift in use on each
    visit to the domain.  Returns the (n, 2) array of lifts and a flag
    telling whether a lift repeats, which happens exactly for proper powers.
    """
    ell = g.translation_length
    w_minus, w_plus = g.fixed_points()
    mid = w_plus + w_minus
    if abs(mid) < 1e-14:
        z0 = 0.0j
    else:
        half = abs(np.angle(w_plus / w_minus)) / 2
        r = (1 - math.sin(half)) / math.cos(half)
        z0 = r * mid / abs(mid)
    theta0 = float(np.angle((w_plus - z0) / (1 - np.conj(z0) * w_plus)))
    z, _, ca, cb = reduce_many(group, np.array([z0]), np.array([theta0]), max_steps=64, track=True)
    z = complex(z[0])
    ca, cb = complex(ca[0]), complex(cb[0])
    wp = (ca * w_plus + cb) / (np.conj(cb) * w_plus + np.conj(ca))
    wm = (ca * w_minus + cb) / (np.conj(cb) * w_minus + np.conj(ca))
    # the first partial segment only brings us to a side; count from there
    travelled = None
    lifts = []
    while travelled is None or travelled < ell - 1e-6:
        if travelled is not None:
            lifts.append((np.angle(wm) % (2 * math.pi), np.angle(wp) % (2 * math.pi)))
        dist = _polygon_exit(group, z, wp, wm)
        theta = float(np.angle((wp - z) / (1 - np.conj(z) * wp)))
        adv = dist + step_past
        z1, _ = geodesic_point(z, theta, adv)
        zr, _, ra, rb = reduce_many(group, np.array([z1]), np.array([0.0]), max_steps=16, track=True)
        z = complex(zr[0])
        ra, rb = complex(ra[0]), complex(rb[0])
        wp = (ra * wp + rb) / (np.conj(rb) * wp + np.conj(ra))
        wm = (ra * wm + rb) / (np.conj(rb) * wm + np.conj(ra))
        travelled = 0.0 if travelled is None else travelled + adv
    lifts = np.array(lifts)
    repeats = False
    if len(lifts) > 1:
        gap = _lift_gap(lifts[:, None, :], lifts[None, :, :])
        np.fill_diagonal(gap, np.inf)
        repeats = bool(gap.min() < 1e-7)
    return lifts, repeats


def _lift_gap(a, b):
    d = np.abs(np.angle(np.exp(1j * (a - b))))
    return d[..., 0] + d[..., 1]


def _share_lift(l1, l2, tol=1e-7):
    return bool(_lift_gap(l1[:, None, :], l2[None, :, :]).min() < tol)


def group_ball(group, radius, node_budget=2_000_000):
    """All group elements moving the origin by at most ``radius``.

    Returns disk coefficients ``(a, b)`` plus parent/letter arrays encoding a
    shortest word for each element (element i = element parent[i] followed
    by generator letter[i]).  Index 0 is the identity.
    """
    gens = group.generators
    ga = np.array([g.a for g in gens])
    gb = np.array([g.b for g in gens])
    all_a = [np.array([1.0 + 0j])]
    all_b = [np.array([0.0j])]
    parent = [-1]
    letter = [-1]
    seen = {(0, 0)}
    frontier = np.array([0])
    total = 1
    coshr = math.cosh(radius)
    while frontier.size:
        cat_a = np.concatenate(all_a)
        cat_b = np.concatenate(all_b)
        fa, fb = cat_a[frontier], cat_b[frontier]
        na = (fa[:, None] * ga[None, :] + fb[:, None] * np.conj(gb)[None, :]).ravel()
        nb = (fa[:, None] * gb[None, :] + fb[:, None] * np.conj(ga)[None, :]).ravel()
        par = np.repeat(frontier, len(gens))
        let = np.tile(np.arange(len(gens)), frontier.size)
        # cosh d(0, g0) = 2|a|^2 - 1
        keep = 2 * np.abs(na) ** 2 - 1 <= coshr
        na, nb, par, let = na[keep], nb[keep], par[keep], let[keep]
        img = nb / np.conj(na)
        keys = np.round(np.column_stack([img.real, img.imag]) * 1e8).astype(np.int64)
        new_idx = []
        for i, key in enumerate(map(tuple, keys)):
            if key not in seen:
                seen.add(key)
                new_idx.append(i)
        new_idx = np.array(new_idx, dtype=int)
        if total + new_idx.size > node_budget:
            raise BudgetExceeded(f"word search exceeded {node_budget} nodes")
        start = total
        all_a.append(na[new_idx])
        all_b.append(nb[new_idx])
        parent.extend(par[new_idx].tolist())
        letter.extend(let[new_idx].tolist())
        total += new_idx.size
        frontier = np.arange(start, total)
    return np.concatenate(all_a), np.concatenate(all_b), parent, letter


def enumerate_primitive_classes(group, max_length, node_budget=2_000_000):
    """One representative per primitive oriented closed geodesic of length <= max_length."""
    if max_length <= 0:
        return []
    rc = group.circumradius
    # an axis within rc of the origin moves the origin by at most this much
    reach = 2 * math.asinh(math.cosh(rc) * math.sinh(max_length / 2)) + rc
    tmax = 2 * math.cosh(max_length / 2) + 1e-9
    A, B, parent, letter = group_ball(group, reach, node_budget)
    tr = 2 * A.real
    cand = np.nonzero((np.abs(tr) > 2 + 1e-12) & (np.abs(tr) <= tmax))[0]

    def word_of(i):
        w = []
        while parent[i] >= 0:
            w.append(letter[i])
            i = parent[i]
        return w[::-1]

    classes = []
    buckets = {}
    for i in cand:
        g = MobiusMap.from_disk(A[i], B[i])
        length = g.translation_length
        if length > max_length + 1e-12:
            continue
        wm, wp = g.fixed_points()
        if _axis_distance(wm, wp) > rc + 1e-9:
            continue
        rec, repeats = trace_closed_geodesic(group, g)
        if repeats:
            continue
        bkey = round(abs(g.trace), 7)
        bucket = buckets.setdefault(bkey, [])
        if any(_share_lift(rec, c.crossings) for c in bucket):
            continue
        word = word_of(i)
        cls = ConjugacyClass(g, word, abs(g.trace), length, rec)
        bucket.append(cls)
        classes.append(cls)
    classes.sort(key=lambda c: (c.length, len(c.word), c.word))
    return classes


def _axis_distance(w1, w2):
    """Hyperbolic distance from the origin to the geodesic with ideal endpoints w1, w2."""
    half = abs(np.angle(w1 / w2)) / 2
    if half > math.pi / 2 - 1e-15:
        return 0.0
    r = (1 - math.sin(half)) / math.cos(half)
    return 2 * math.atanh(r)


def classes_to_json(classes):
    return json.dumps([c.to_json() for c in classes], indent=1)
