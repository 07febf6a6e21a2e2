"""Procedural idealised coronary geometries lofted into tagged surface meshes.

Two families are produced: single arteries with up to two eccentric stenoses
on a wavy planar centerline, and left-main bifurcations made of three
straight, tapering, slightly oval branches joined by a convex-hull junction
patch that is refined and relaxed into a saddle.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import ConvexHull, cKDTree

from meshwss.exceptions import LoftingError, SamplingError
from meshwss.mesh import BoundaryLoop, TriangleMesh, validate

SINGLE, BIFURCATING = "single", "bifurcating"

SINGLE_RADIUS_RANGE = (1.25, 2.0)
SEVERITY_RANGE = (0.2, 0.5)
ECCENTRICITY_RANGE = (0.0, 0.5)
STENOSIS_LENGTH_RANGE = (4.0, 8.0)
N_CONTROL_POINTS = 10
CONTROL_DX = 5.0
CONTROL_DY = 2.0

# (mean, std) of the atlas normals
BETA = (78.9, 23.1)
BETA_PRIME = (61.5, 21.5)
GAMMA = (9.5, 21.5)
R_PMV = (1.75, 0.4)
R_DMV = (1.6, 0.35)
R_SB = (1.5, 0.35)

# exponent that makes the law exact at the mean radii; tolerance on |delta| / d_PMV^a
BIFURCATION_EXPONENT = 5.83
BIFURCATION_TOLERANCE = 0.15
MIN_RADIUS = 0.5
MAX_DRAWS = 10_000
BRANCH_LENGTHS = (15.0, 20.0, 15.0)  # PMV, DMV, SB
TAPER_RANGE = (0.2, 0.35)
OVALITY_RANGE = (0.0, 0.1)

DEFAULT_EDGE_LENGTH = {SINGLE: 0.4, BIFURCATING: 0.2}


# ---------------------------------------------------------------------------
# centerlines


class Centerline:
    """Dense polyline with arclength parametrisation and rotation-minimising frames."""

    def __init__(self, points):
        points = np.asarray(points, dtype=np.float64)
        seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
        if len(points) < 2 or np.any(seg <= 0):
            raise LoftingError("centerline needs at least two distinct consecutive points")
        self.points = points
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        tangents = np.gradient(points, self.s, axis=0)
        self.tangents = tangents / np.linalg.norm(tangents, axis=1, keepdims=True)

    @classmethod
    def from_control_points(cls, control, step: float = 0.05) -> Centerline:
        control = np.asarray(control, dtype=np.float64)
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(control, axis=0), axis=1))])
        spline = CubicSpline(chord, control, axis=0, bc_type="natural")
        t = np.linspace(0.0, chord[-1], max(2, int(math.ceil(chord[-1] / step)) + 1))
        return cls(spline(t))

    @classmethod
    def straight(cls, start, direction, length: float) -> Centerline:
        direction = np.asarray(direction, dtype=np.float64)
        direction = direction / np.linalg.norm(direction)
        return cls(np.asarray(start, dtype=np.float64) + np.outer([0.0, length], direction))

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @functools.cached_property
    def _u(self) -> np.ndarray:
        # rotation-minimising normals by the double reflection method
        t = self.tangents
        u = np.empty_like(t)
        helper = np.eye(3)[np.argmin(np.abs(t[0]))]
        u0 = helper - (helper @ t[0]) * t[0]
        u[0] = u0 / np.linalg.norm(u0)
        for i in range(len(t) - 1):
            v1 = self.points[i + 1] - self.points[i]
            c1 = v1 @ v1
            r_l = u[i] - (2.0 / c1) * (v1 @ u[i]) * v1
            t_l = t[i] - (2.0 / c1) * (v1 @ t[i]) * v1
            v2 = t[i + 1] - t_l
            c2 = v2 @ v2
            r = r_l - (2.0 / c2) * (v2 @ r_l) * v2 if c2 > 1e-30 else r_l
            r = r - (r @ t[i + 1]) * t[i + 1]
            u[i + 1] = r / np.linalg.norm(r)
        return u

    def _interp(self, values, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        return np.stack([np.interp(s, self.s, values[:, k]) for k in range(3)], axis=-1)

    def point(self, s) -> np.ndarray:
        return self._interp(self.points, s)

    def tangent(self, s) -> np.ndarray:
        t = self._interp(self.tangents, s)
        return t / np.linalg.norm(t, axis=-1, keepdims=True)

    def frame(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(t, u, v)`` with ``u x v = t``."""
        t = self.tangent(s)
        u = self._interp(self._u, s)
        u = u - np.sum(u * t, axis=-1, keepdims=True) * t
        u = u / np.linalg.norm(u, axis=-1, keepdims=True)
        return t, u, np.cross(t, u)

    def transformed(self, rotation, translation=None) -> Centerline:
        pts = self.points @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            pts = pts + np.asarray(translation, dtype=np.float64)
        return Centerline(pts)


@dataclasses.dataclass(eq=False)
class Branch:
    """One vessel segment as seen by the flow surrogate.

    ``radius(s)`` is the effective (angular-mean) lumen radius in mm and
    ``flow`` the fraction of the inlet volume flow through the branch.
    """

    name: str
    centerline: Centerline
    radius: object
    flow: float
    lofted: tuple  # arclength interval covered by the tube


# ---------------------------------------------------------------------------
# specs


@dataclasses.dataclass(frozen=True)
class Stenosis:
    center: float  # arclength [mm]
    length: float  # [mm]
    severity: float  # fractional radius reduction
    eccentricity: float
    direction: float  # angle of the deepest indentation [rad]

    def profile(self, s) -> np.ndarray:
        x = (np.asarray(s, dtype=np.float64) - self.center) / self.length
        return np.where(np.abs(x) < 0.5, np.cos(np.pi * x) ** 2, 0.0)


@dataclasses.dataclass(frozen=True, eq=False)
class SingleArterySpec:
    control_points: np.ndarray
    radius: float
    stenoses: tuple = ()
    rotation: np.ndarray | None = None

    kind = SINGLE

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        object.__setattr__(self, "control_points", cp)
        if cp.ndim != 2 or cp.shape[1] != 3 or len(cp) < 2:
            raise ValueError("control points must be an (n >= 2, 3) array")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if len(self.stenoses) > 2:
            raise ValueError("at most two stenoses")
        for st in self.stenoses:
            if not 0 < st.severity <= 0.5:
                raise ValueError(f"stenosis severity {st.severity} outside (0, 0.5]")
        if self.rotation is not None:
            object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    def centerline(self) -> Centerline:
        line = Centerline.from_control_points(self.control_points)
        return line if self.rotation is None else line.transformed(self.rotation)

    def narrowing(self, s, phi=None) -> np.ndarray:
        """Fractional radius reduction; angular mean when ``phi`` is None."""
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros(np.broadcast_shapes(s.shape, () if phi is None else np.shape(phi)))
        for st in self.stenoses:
            w = st.severity * st.profile(s)
            if phi is not None:
                w = w * (1.0 + st.eccentricity * np.cos(np.asarray(phi) - st.direction))
            out = out + w
        return out

    def effective_radius(self, s) -> np.ndarray:
        return self.radius * (1.0 - self.narrowing(s))

    def branches(self) -> list[Branch]:
        line = self.centerline()
        return [Branch("main", line, self.effective_radius, 1.0, (0.0, line.length))]

    def rotated(self, rotation) -> SingleArterySpec:
        rotation = np.asarray(rotation, dtype=np.float64)
        total = rotation if self.rotation is None else rotation @ self.rotation
        return dataclasses.replace(self, rotation=total)

    def to_dict(self) -> dict:
        return {"kind": SINGLE, "control_points": self.control_points.tolist(), "radius": self.radius,
                "stenoses": [dataclasses.asdict(s) for s in self.stenoses],
                "rotation": None if self.rotation is None else self.rotation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> SingleArterySpec:
        return cls(np.array(d["control_points"]), d["radius"], tuple(Stenosis(**s) for s in d["stenoses"]),
                   None if d.get("rotation") is None else np.array(d["rotation"]))


@dataclasses.dataclass(frozen=True, eq=False)
class BifurcationSpec:
    """Angles in degrees, radii in mm at the junction.

    ``beta`` separates DMV and SB, ``beta_prime`` is the SB angle from the
    in-plane continuation of the PMV, ``gamma`` the PMV elevation over the
    bifurcation plane. ``delta`` is the bifurcation-law residual
    ``d_PMV^a - d_DMV^a - d_SB^a`` in mm^a.
    """

    beta: float
    beta_prime: float
    gamma: float
    r_pmv: float
    r_dmv: float
    r_sb: float
    exponent: float = BIFURCATION_EXPONENT
    orientations: tuple = (0.0, 0.0, 0.0)  # oval axis angle per branch [rad]
    ovality: tuple = (0.0, 0.0, 0.0)
    tapers: tuple = (0.0, 0.0, 0.0)
    lengths: tuple = BRANCH_LENGTHS
    rotation: np.ndarray | None = None

    kind = BIFURCATING

    def __post_init__(self):
        if min(self.r_pmv, self.r_dmv, self.r_sb) <= 0:
            raise ValueError("radii must be positive")
        if self.rotation is not None:
            object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))

    @property
    def radii(self) -> tuple[float, float, float]:
        return self.r_pmv, self.r_dmv, self.r_sb

    @property
    def delta(self) -> float:
        a = self.exponent
        return (2 * self.r_pmv) ** a - (2 * self.r_dmv) ** a - (2 * self.r_sb) ** a

    @property
    def relative_delta(self) -> float:
        return self.delta / (2 * self.r_pmv) ** self.exponent

    def directions(self) -> np.ndarray:
        """Unit axes (PMV flow direction into the junction, DMV, SB), before rotation."""
        b, bp, g = np.radians([self.beta, self.beta_prime, self.gamma])
        pmv = np.array([math.cos(g), 0.0, math.sin(g)])
        sb = np.array([math.cos(bp), math.sin(bp), 0.0])
        dmv = np.array([math.cos(bp - b), math.sin(bp - b), 0.0])
        return np.stack([pmv, dmv, sb])

    def contour_radius(self, branch: int, r, phi) -> np.ndarray:
        """Oval lumen contour; its angular mean equals ``r``."""
        return r * (1.0 + self.ovality[branch] * np.cos(2.0 * (np.asarray(phi) - self.orientations[branch])))

    def branch_radius(self, branch: int, s_tube) -> np.ndarray:
        """Effective radius along a branch tube, ``s_tube`` measured from the junction end.

        Sampled radii sit at the proximal end of each branch (the inlet for
        the PMV, the junction for the children) and shrink linearly downstream.
        """
        r0 = self.radii[branch]
        frac = np.clip(np.asarray(s_tube, dtype=np.float64) / self.lengths[branch], 0.0, 1.0)
        if branch == 0:
            frac = 1.0 - frac
        return r0 * (1.0 - self.tapers[branch] * frac)

    @property
    def junction_radii(self) -> tuple[float, float, float]:
        return tuple(float(self.branch_radius(i, 0.0)) for i in range(3))

    def junction_offsets(self) -> np.ndarray:
        """Distances from the junction point to the three tube ends.

        Grown until every end ring lies strictly behind the other rings'
        planes, which makes all rings faces of their joint convex hull.
        """
        dirs = self.directions()
        outward = np.stack([-dirs[0], dirs[1], dirs[2]])
        phi = np.linspace(0.0, 2 * np.pi, 96, endpoint=False)
        r_max = [r * (1 + e) for r, e in zip(self.junction_radii, self.ovality)]
        t = np.array([1.5 * r for r in r_max])
        for _ in range(200):
            rings = [self._ring_points(i, t[i], outward[i], phi) for i in range(3)]
            grown = False
            for i in range(3):
                c = t[i] * outward[i]
                margin = 0.05 * self.junction_radii[i]
                for j in range(3):
                    if j != i and np.max((rings[j] - c) @ outward[i]) > -margin:
                        t[i] *= 1.1
                        grown = True
                        break
            if not grown:
                return t
        raise LoftingError("could not separate the junction rings")

    def _ring_points(self, branch, offset, axis, phi, r=None, u=None):
        u, v = _perpendicular_pair(axis) if u is None else (u, np.cross(axis, u))
        r = self.junction_radii[branch] if r is None else r
        rho = self.contour_radius(branch, r, phi)
        return offset * axis + rho[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)

    def branches(self) -> list[Branch]:
        dirs = self.directions()
        t = self.junction_offsets()
        lp, ld, ls = self.lengths
        rot = np.eye(3) if self.rotation is None else self.rotation
        inlet = -(t[0] + lp) * dirs[0]
        pmv = Centerline.straight(inlet, dirs[0], t[0] + lp).transformed(rot)
        dmv = Centerline.straight(np.zeros(3), dirs[1], t[1] + ld).transformed(rot)
        sb = Centerline.straight(np.zeros(3), dirs[2], t[2] + ls).transformed(rot)
        a = 3.0
        dd, ds = (2 * self.r_dmv) ** a, (2 * self.r_sb) ** a
        q_d, q_s = dd / (dd + ds), ds / (dd + ds)
        return [
            Branch("pmv", pmv, lambda s: self.branch_radius(0, np.maximum(lp - np.asarray(s), 0.0)), 1.0,
                   (0.0, lp)),
            Branch("dmv", dmv, lambda s: self.branch_radius(1, np.maximum(np.asarray(s) - t[1], 0.0)), q_d,
                   (t[1], t[1] + ld)),
            Branch("sb", sb, lambda s: self.branch_radius(2, np.maximum(np.asarray(s) - t[2], 0.0)), q_s,
                   (t[2], t[2] + ls)),
        ]

    def rotated(self, rotation) -> BifurcationSpec:
        rotation = np.asarray(rotation, dtype=np.float64)
        total = rotation if self.rotation is None else rotation @ self.rotation
        return dataclasses.replace(self, rotation=total)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for key in ("orientations", "ovality", "tapers", "lengths"):
            d[key] = list(d[key])
        d["rotation"] = None if self.rotation is None else self.rotation.tolist()
        d["kind"] = BIFURCATING
        d["delta"] = self.delta
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BifurcationSpec:
        d = {k: v for k, v in d.items() if k not in ("kind", "delta")}
        for key in ("orientations", "ovality", "tapers", "lengths"):
            d[key] = tuple(d[key])
        if d.get("rotation") is not None:
            d["rotation"] = np.array(d["rotation"])
        return cls(**d)


def spec_from_dict(d: dict):
    return (SingleArterySpec if d["kind"] == SINGLE else BifurcationSpec).from_dict(d)


def _perpendicular_pair(axis) -> tuple[np.ndarray, np.ndarray]:
    axis = np.asarray(axis, dtype=np.float64)
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    u = helper - (helper @ axis) * axis
    u = u / np.linalg.norm(u)
    return u, np.cross(axis, u)


# ---------------------------------------------------------------------------
# sampling


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_single_artery(seed) -> SingleArterySpec:
    rng = _rng(seed)
    radius = float(rng.uniform(*SINGLE_RADIUS_RANGE))
    x = CONTROL_DX * np.arange(N_CONTROL_POINTS)
    y = np.concatenate([[0.0], np.cumsum(rng.uniform(-CONTROL_DY, CONTROL_DY, N_CONTROL_POINTS - 1))])
    control = np.stack([x, y, np.zeros(N_CONTROL_POINTS)], axis=1)
    length = Centerline.from_control_points(control).length
    n_stenoses = int(rng.integers(0, 3))
    halves = rng.permutation(2)[:n_stenoses]
    stenoses = []
    for half in sorted(halves.tolist()):
        st_len = float(rng.uniform(*STENOSIS_LENGTH_RANGE))
        lo = half * length / 2 + st_len / 2 + 1.0
        hi = (half + 1) * length / 2 - st_len / 2 - 1.0
        stenoses.append(Stenosis(center=float(rng.uniform(lo, hi)), length=st_len,
                                 severity=float(rng.uniform(*SEVERITY_RANGE)),
                                 eccentricity=float(rng.uniform(*ECCENTRICITY_RANGE)),
                                 direction=float(rng.uniform(0.0, 2 * np.pi))))
    return SingleArterySpec(control, radius, tuple(stenoses))


def _angles_feasible(beta, beta_prime, gamma) -> bool:
    return 20.0 <= beta <= 160.0 and abs(beta_prime) <= 120.0 and abs(beta - beta_prime) <= 120.0 \
        and abs(gamma) <= 60.0


def sample_bifurcation(seed, exponent: float = BIFURCATION_EXPONENT,
                       tolerance: float = BIFURCATION_TOLERANCE) -> BifurcationSpec:
    """Rejection sampling from the atlas normals.

    The three radii share one standard-normal draw so that each keeps its
    normal marginal while the bifurcation law stays close to exact; draws
    with a radius below 0.5 mm, a law residual above ``tolerance`` (relative
    to d_PMV^a) or a geometrically infeasible angle set are redrawn.
    """
    rng = _rng(seed)
    for _ in range(MAX_DRAWS):
        beta = rng.normal(*BETA)
        beta_prime = rng.normal(*BETA_PRIME)
        gamma = rng.normal(*GAMMA)
        z = rng.standard_normal()
        radii = [m + s * z for m, s in (R_PMV, R_DMV, R_SB)]
        orient = tuple(float(a) for a in rng.uniform(0.0, np.pi, 3))
        ovality = tuple(float(a) for a in rng.uniform(*OVALITY_RANGE, 3))
        tapers = tuple(float(a) for a in rng.uniform(*TAPER_RANGE, 3))
        if min(radii) <= MIN_RADIUS or not _angles_feasible(beta, beta_prime, gamma):
            continue
        spec = BifurcationSpec(float(beta), float(beta_prime), float(gamma), *map(float, radii),
                               exponent=exponent, orientations=orient, ovality=ovality, tapers=tapers)
        if abs(spec.relative_delta) <= tolerance:
            return spec
    raise SamplingError(f"no admissible bifurcation within {MAX_DRAWS} draws")


# ---------------------------------------------------------------------------
# lofting


def _ring_stations(length: float, h: float, radius_fn, r_ref: float) -> np.ndarray:
    """Ring arclengths with spacing proportional to the local radius."""
    s = [0.0]
    while s[-1] < length:
        s.append(s[-1] + h * max(float(radius_fn(s[-1])), 0.2 * r_ref) / r_ref)
    s = np.array(s)
    n = max(2, len(s) - 1 if (s[-1] - length) > 0.5 * (s[-1] - s[-2]) else len(s))
    s = s[:n]
    return s * (length / s[-1])


def _tube_triangles(n_rings: int, m: int, offset: int = 0) -> np.ndarray:
    k, j = np.meshgrid(np.arange(n_rings - 1), np.arange(m), indexing="ij")
    a = k * m + j
    b = k * m + (j + 1) % m
    c = (k + 1) * m + (j + 1) % m
    d = (k + 1) * m + j
    tris = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    return tris + offset


def _ring_count(radius: float, h: float) -> int:
    return max(8, int(round(2 * np.pi * radius / h)))


def loft_single(spec: SingleArterySpec, edge_length: float = DEFAULT_EDGE_LENGTH[SINGLE]) -> TriangleMesh:
    line = Centerline.from_control_points(spec.control_points)
    m = _ring_count(spec.radius, edge_length)
    stations = _ring_stations(line.length, edge_length, spec.effective_radius, spec.radius)
    phi = 2 * np.pi * np.arange(m) / m
    _, u, v = line.frame(stations)
    centers = line.point(stations)
    rho = spec.radius * (1.0 - spec.narrowing(stations[:, None], phi[None, :]))
    pos = centers[:, None, :] + rho[..., None] * (np.cos(phi)[None, :, None] * u[:, None, :]
                                                    + np.sin(phi)[None, :, None] * v[:, None, :])
    n_rings = len(stations)
    pos = pos.reshape(-1, 3)
    if spec.rotation is not None:
        pos = pos @ spec.rotation.T
    tris = _tube_triangles(n_rings, m)
    loops = (BoundaryLoop(tuple(range(m)), "inlet"),
             BoundaryLoop(tuple(range((n_rings - 1) * m, n_rings * m)), "outlet"))
    mesh = TriangleMesh(pos, tris, loops)
    _check(mesh, "single artery")
    return mesh


def loft_bifurcation(spec: BifurcationSpec, edge_length: float = DEFAULT_EDGE_LENGTH[BIFURCATING]) -> TriangleMesh:
    h = edge_length
    dirs = spec.directions()
    t = spec.junction_offsets()
    outward = np.stack([-dirs[0], dirs[1], dirs[2]])
    blocks, tris, junction_rings = [], [], []
    offset = 0
    inlet = None
    outlet_loops = []
    for i in range(3):
        r0 = spec.junction_radii[i]
        m = _ring_count(r0, h)
        length = spec.lengths[i]
        stations = _ring_stations(length, h, lambda s, i=i: spec.branch_radius(i, s), r0)
        u, v = _perpendicular_pair(outward[i])
        phi = 2 * np.pi * np.arange(m) / m
        if i == 0:
            phi = -phi  # keep u x v pointing downstream along the PMV
        rho = spec.contour_radius(i, spec.branch_radius(i, stations)[:, None], phi[None, :])
        centers = (t[i] + stations)[:, None] * outward[i]
        ring_dirs = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v
        pos = centers[:, None, :] + rho[..., None] * ring_dirs[None]
        n_rings = len(stations)
        if i == 0:
            # rings ordered from the inlet towards the junction
            pos = pos[::-1]
        blocks.append(pos.reshape(-1, 3))
        tris.append(_tube_triangles(n_rings, m, offset))
        first = tuple(range(offset, offset + m))
        last = tuple(range(offset + (n_rings - 1) * m, offset + n_rings * m))
        if i == 0:
            inlet, junction = first, last
        else:
            junction, out = first, last
            outlet_loops.append(out)
        junction_rings.append(np.array(junction))
        offset += n_rings * m
    positions = np.concatenate(blocks)
    patch = _hull_patch(positions, junction_rings)
    rims = {tuple(sorted((int(r[k]), int(r[(k + 1) % len(r)])))) for r in junction_rings for k in range(len(r))}
    positions, patch, new = _refine_long_edges(positions, patch, 1.4 * h, frozen=rims)
    faces = np.concatenate(tris + [patch])
    positions = _relax(positions, faces, new, iterations=10)
    rot = spec.rotation
    if rot is not None:
        positions = positions @ rot.T
    loops = (BoundaryLoop(inlet, "inlet"),) + tuple(BoundaryLoop(o, "outlet") for o in outlet_loops)
    mesh = TriangleMesh(positions, faces, loops)
    _check(mesh, "bifurcation")
    return mesh


def _hull_patch(positions: np.ndarray, rings: list[np.ndarray]) -> np.ndarray:
    """Triangles of the convex hull of the junction rings minus the ring caps, wound outward."""
    ids = np.concatenate(rings)
    owner = np.concatenate([np.full(len(r), k) for k, r in enumerate(rings)])
    pts = positions[ids]
    hull = ConvexHull(pts)
    if len(hull.vertices) != len(ids):
        raise LoftingError("junction rings are not all extreme points of their hull")
    simp = hull.simplices
    keep = ~((owner[simp[:, 0]] == owner[simp[:, 1]]) & (owner[simp[:, 1]] == owner[simp[:, 2]]))
    simp, normals = simp[keep], hull.equations[keep, :3]
    a, b, c = pts[simp[:, 0]], pts[simp[:, 1]], pts[simp[:, 2]]
    flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), normals) < 0
    simp[flip] = simp[flip][:, [0, 2, 1]]
    return ids[simp]


def _refine_long_edges(positions, faces, max_len, frozen=frozenset()):
    """Split edges longer than ``max_len`` at their midpoints, longest first.

    Edges in ``frozen`` are shared with triangles outside ``faces`` and are
    never split.
    """
    positions = [p for p in positions]
    faces = [tuple(f) for f in faces]
    new = []
    for _ in range(50):
        edge_faces: dict = {}
        for fi, f in enumerate(faces):
            for k in range(3):
                e = (min(f[k], f[(k + 1) % 3]), max(f[k], f[(k + 1) % 3]))
                edge_faces.setdefault(e, []).append(fi)
        pts = np.asarray(positions)
        edges = np.array(list(edge_faces.keys()))
        lengths = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
        order = np.argsort(-lengths, kind="stable")
        touched = set()
        splits = []
        for e_idx in order:
            if lengths[e_idx] <= max_len:
                break
            e = (int(edges[e_idx, 0]), int(edges[e_idx, 1]))
            fs = edge_faces[e]
            if e in frozen:
                continue
            if any(f in touched for f in fs):
                continue
            touched.update(fs)
            splits.append((e, fs))
        if not splits:
            break
        replaced = {}
        for (a, b), fs in splits:
            mid = len(positions)
            positions.append(0.5 * (pts[a] + pts[b]))
            new.append(mid)
            for fi in fs:
                f = faces[fi]
                k = [i for i in range(3) if {f[i], f[(i + 1) % 3]} == {a, b}][0]
                p, q, r = f[k], f[(k + 1) % 3], f[(k + 2) % 3]
                replaced[fi] = [(p, mid, r), (mid, q, r)]
        out = []
        for fi, f in enumerate(faces):
            out.extend(replaced.get(fi, [f]))
        faces = out
    return np.asarray(positions), np.asarray(faces, dtype=np.int64), np.asarray(new, dtype=np.int64)


def _relax(positions, faces, movable, iterations=10, weight=0.5):
    """Umbrella smoothing of the ``movable`` vertices; everything else stays fixed."""
    if len(movable) == 0:
        return positions
    n = len(positions)
    i = faces[:, [0, 1, 2, 1, 2, 0]].reshape(-1)
    j = faces[:, [1, 2, 0, 0, 1, 2]].reshape(-1)
    pairs = np.unique(np.stack([i, j], 1), axis=0)
    deg = np.bincount(pairs[:, 0], minlength=n).astype(np.float64)
    pos = positions.copy()
    mask = np.zeros(n, bool)
    mask[movable] = True
    for _ in range(iterations):
        acc = np.zeros_like(pos)
        np.add.at(acc, pairs[:, 0], pos[pairs[:, 1]])
        avg = acc / deg[:, None]
        pos[mask] += weight * (avg[mask] - pos[mask])
    return pos


def _check(mesh: TriangleMesh, what: str) -> None:
    report = validate(mesh)
    if not report.ok:
        raise LoftingError(f"{what} mesh failed validation: {report.summary()}")
    if self_intersects(mesh):
        raise LoftingError(f"{what} mesh intersects itself")


def loft_surface(spec, edge_length: float | None = None) -> TriangleMesh:
    """Triangulated lumen surface for either spec type, with tagged open rims."""
    if isinstance(spec, SingleArterySpec):
        return loft_single(spec, edge_length or DEFAULT_EDGE_LENGTH[SINGLE])
    return loft_bifurcation(spec, edge_length or DEFAULT_EDGE_LENGTH[BIFURCATING])


# ---------------------------------------------------------------------------
# self-intersection


def _segment_hits(p0, p1, a, b, c, eps=1e-12):
    """Vectorised Moller-Trumbore segment/triangle test (interior hits only)."""
    d = p1 - p0
    e1, e2 = b - a, c - a
    pv = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pv)
    ok = np.abs(det) > eps
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tv = p0 - a
    u = np.einsum("ij,ij->i", tv, pv) * inv
    qv = np.cross(tv, e1)
    v = np.einsum("ij,ij->i", d, qv) * inv
    t = np.einsum("ij,ij->i", e2, qv) * inv
    tol = 1e-9
    return ok & (u > tol) & (v > tol) & (u + v < 1 - tol) & (t > tol) & (t < 1 - tol)


def self_intersects(mesh: TriangleMesh) -> bool:
    """True if two triangles without a shared vertex cross each other.

    Candidate pairs come from overlapping bounding boxes around nearby
    centroids; each pair is tested edge-against-triangle both ways.
    """
    pos, tri = mesh.positions, mesh.triangles
    corners = pos[tri]
    centroid = corners.mean(axis=1)
    reach = np.max(np.linalg.norm(corners - centroid[:, None], axis=2))
    pairs = cKDTree(centroid).query_pairs(2 * reach, output_type="ndarray")
    if len(pairs) == 0:
        return False
    i, j = pairs[:, 0], pairs[:, 1]
    lo, hi = corners.min(axis=1), corners.max(axis=1)
    overlap = np.all((lo[i] <= hi[j]) & (lo[j] <= hi[i]), axis=1)
    shared = (tri[i][:, :, None] == tri[j][:, None, :]).any(axis=(1, 2))
    keep = overlap & ~shared
    i, j = i[keep], j[keep]
    for s, t in ((i, j), (j, i)):
        a, b, c = corners[t, 0], corners[t, 1], corners[t, 2]
        for k in range(3):
            p0, p1 = corners[s, k], corners[s, (k + 1) % 3]
            if np.any(_segment_hits(p0, p1, a, b, c)):
                return True
    return False
