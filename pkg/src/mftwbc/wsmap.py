"""Offline workspace map: grid the foot workspace, score it, fit a polytope.

The pipeline is

    grid_workspace -> mark_preferable -> fit_polyhedron_joint_space -> stack_legs

and its result is persisted with ``save_polyhedron``.  The polygon fit itself
is exposed as :class:`ConservativePolygonFitter`, a scikit-learn style
estimator over labelled 2-D samples, so it can be cross-validated or used in
pipelines like any other classifier.
"""
from __future__ import annotations

import enum
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull
from shapely.geometry import Point, Polygon
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import mft
from .exceptions import EmptyPreferable, InfeasibleFit, ModelHashMismatch, OutOfReach, SchemaMismatch
from .model import RobotModel, leg_inverse_config

SCHEMA_VERSION = 1
DEFAULT_RESOLUTION = 0.010
DEFAULT_A_MAX = 60.0
MEMBERSHIP_TOL = 1e-12


class Space(enum.Enum):
    FOOT_CARTESIAN = "FootCartesian"
    ACTUATED_JOINT = "ActuatedJoint"
    GENERALIZED_ACCEL = "GeneralizedAccel"


@dataclass(frozen=True)
class IndexBounds:
    lti_min: float = 0.7
    lti_max: float = 1.0
    raci_min: float = 0.0
    raci_max: float = math.inf

    def __post_init__(self):
        if self.lti_min > self.lti_max or self.raci_min > self.raci_max:
            raise ValueError("index bounds must be ordered")

    def as_dict(self) -> dict:
        return {"lti_min": self.lti_min, "lti_max": self.lti_max,
                "raci_min": self.raci_min, "raci_max": self.raci_max}


def calibrated_raci_max(model: RobotModel, leg: int = 0) -> float:
    """RACI level at which the worst-case hip torque for the design acceleration hits ``tau_max``."""
    return model.actuator.tau_max / math.sqrt(model.leg_masses[leg])


# -- gridded field -------------------------------------------------------------

@dataclass
class MftField:
    """Foot-space grid of one leg (base frame) with index values per cell.

    Arrays are indexed ``[iz, ix]``; cell centres sit at
    ``origin + (ix, iz) * resolution``.
    """

    origin: np.ndarray
    resolution: float
    reachable: np.ndarray
    lti: np.ndarray
    raci: np.ndarray
    hips: np.ndarray
    passive: np.ndarray
    preferable: np.ndarray
    a_max: float = DEFAULT_A_MAX
    leg: int = 0
    bounds: IndexBounds | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.reachable.shape

    def centers(self) -> np.ndarray:
        nz, nx = self.shape
        xs = self.origin[0] + self.resolution * np.arange(nx)
        zs = self.origin[1] + self.resolution * np.arange(nz)
        X, Z = np.meshgrid(xs, zs)
        return np.stack([X, Z], axis=-1)

    @property
    def reachable_area(self) -> float:
        return float(self.reachable.sum()) * self.resolution ** 2

    def joint_samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint-space images of all reachable cells and their preferable labels."""
        m = self.reachable
        return self.hips[m], self.preferable[m]

    def joint_grid_diagonal(self) -> float:
        """Median joint-space length of one grid diagonal over the preferable cells."""
        ok = self.reachable[:-1, :-1] & self.reachable[1:, 1:]
        ok &= self.preferable[:-1, :-1] if self.preferable.any() else ok
        d = np.linalg.norm(self.hips[1:, 1:] - self.hips[:-1, :-1], axis=-1)[ok]
        return float(np.median(d)) if d.size else math.nan


def _grid_axes(lo: float, hi: float, res: float) -> np.ndarray:
    # centres on integer multiples of the resolution so refined grids nest
    return res * np.arange(math.floor(lo / res), math.ceil(hi / res) + 1)


def grid_workspace(model: RobotModel, resolution: float = DEFAULT_RESOLUTION, leg: int = 0,
                   a_max: float = DEFAULT_A_MAX) -> MftField:
    """Test every cell centre for reachability and evaluate LTI and RACI on reachable ones."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    limbs = model.limbs[2 * leg:2 * leg + 2]
    reach = max(lp.proximal_length + lp.distal_length + math.hypot(*lp.hip_anchor) for lp in limbs)
    xs = _grid_axes(-reach, reach, resolution)
    zs = _grid_axes(-reach, reach, resolution)
    shape = (zs.size, xs.size)
    reachable = np.zeros(shape, dtype=bool)
    lti = np.full(shape, np.nan)
    raci = np.full(shape, np.nan)
    hips = np.full(shape + (2,), np.nan)
    passive = np.full(shape + (2,), np.nan)
    for iz, z in enumerate(zs):
        for ix, x in enumerate(xs):
            try:
                cfg = leg_inverse_config(model, (x, z), leg)
            except OutOfReach:
                continue
            reachable[iz, ix] = True
            hips[iz, ix] = cfg[[0, 2]]
            passive[iz, ix] = cfg[[1, 3]]
            ind = mft.indices(model, cfg, a_max, leg)
            lti[iz, ix] = ind.gamma_LTI
            raci[iz, ix] = ind.gamma_RACI
    return MftField(np.array([xs[0], zs[0]]), resolution, reachable, lti, raci, hips, passive,
                    np.zeros(shape, dtype=bool), a_max, leg)


def mark_preferable(field: MftField, bounds: IndexBounds) -> MftField:
    """Cells whose indices all lie inside ``bounds``."""
    with np.errstate(invalid="ignore"):
        pref = (field.reachable
                & (field.lti >= bounds.lti_min) & (field.lti <= bounds.lti_max)
                & (field.raci >= bounds.raci_min) & (field.raci <= bounds.raci_max))
    if not pref.any():
        warnings.warn("no grid cell satisfies the index bounds", EmptyPreferable, stacklevel=2)
    return replace(field, preferable=pref, bounds=bounds)


def passive_joint_bounds(field: MftField) -> tuple[np.ndarray, np.ndarray]:
    """Passive-joint range over the reachable grid (the reachable-space boundary)."""
    p = field.passive[field.reachable]
    return p.min(axis=0), p.max(axis=0)


# -- polyhedra -----------------------------------------------------------------

@dataclass
class Polyhedron:
    """Halfspace representation ``{x | A x <= b}`` with unit-norm rows."""

    A: np.ndarray
    b: np.ndarray
    space: Space
    witness: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        norms = np.linalg.norm(self.A, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero row in halfspace matrix")
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-14):
            self.A = self.A / norms[:, None]
            self.b = self.b / norms
        if self.witness is None:
            self.witness = chebyshev_center(self.A, self.b)[0]
        self.witness = np.asarray(self.witness, dtype=float)

    @property
    def n_faces(self) -> int:
        return self.A.shape[0]

    @property
    def dimension(self) -> int:
        return self.A.shape[1]

    def slack(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.b - x @ self.A.T

    def contains(self, x, tol: float = MEMBERSHIP_TOL) -> np.ndarray | bool:
        s = self.slack(x)
        return np.all(s >= -tol, axis=-1)

    def vertices_2d(self) -> np.ndarray:
        if self.dimension != 2:
            raise ValueError("only planar polygons have an ordered vertex list")
        return _halfplane_polygon(self.A, self.b)

    def to_shapely(self) -> Polygon:
        return Polygon(self.vertices_2d())


def chebyshev_center(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    n = A.shape[1]
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=b,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        raise InfeasibleFit("polyhedron has an empty interior")
    return res.x[:n], float(res.x[-1])


def stack_legs(polys) -> Polyhedron:
    """Block-diagonal stacking; membership holds iff every block holds."""
    polys = list(polys)
    if len({p.space for p in polys}) != 1:
        raise ValueError("cannot stack polyhedra from different spaces")
    rows = sum(p.n_faces for p in polys)
    cols = sum(p.dimension for p in polys)
    A = np.zeros((rows, cols))
    r = c = 0
    for p in polys:
        A[r:r + p.n_faces, c:c + p.dimension] = p.A
        r += p.n_faces
        c += p.dimension
    b = np.concatenate([p.b for p in polys])
    w = np.concatenate([p.witness for p in polys])
    meta = dict(polys[0].meta)
    return Polyhedron(A, b, polys[0].space, w, meta)


# -- planar polygon helpers ----------------------------------------------------

def _halfplane_polygon(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ordered vertices of the bounded intersection of halfplanes."""
    big = 1e3
    poly = Polygon([(-big, -big), (big, -big), (big, big), (-big, big)])
    for a, bb in zip(A, b):
        poly = poly.intersection(_halfplane(a, bb, big))
        if poly.is_empty:
            return np.zeros((0, 2))
    coords = np.asarray(poly.exterior.coords)[:-1]
    return coords


def _halfplane(a: np.ndarray, b: float, big: float = 1e3) -> Polygon:
    a = a / np.linalg.norm(a)
    t = np.array([-a[1], a[0]])
    p0 = a * b
    return Polygon([p0 + big * t, p0 - big * t, p0 - big * t - 2 * big * a, p0 + big * t - 2 * big * a])


def _edges_from_vertices(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Outward unit normals and offsets of a counter-clockwise convex polygon."""
    if Polygon(V).exterior.is_ccw is False:
        V = V[::-1]
    A, b = [], []
    for i in range(len(V)):
        p, q = V[i], V[(i + 1) % len(V)]
        e = q - p
        L = np.linalg.norm(e)
        if L < 1e-14:
            continue
        n = np.array([e[1], -e[0]]) / L
        A.append(n)
        b.append(n @ p)
    return np.array(A), np.array(b)


def _area(A: np.ndarray, b: np.ndarray) -> float:
    V = _halfplane_polygon(A, b)
    return Polygon(V).area if len(V) >= 3 else 0.0


def _inside(A: np.ndarray, b: np.ndarray, X: np.ndarray, tol: float = MEMBERSHIP_TOL) -> np.ndarray:
    return np.all(X @ A.T <= b + tol, axis=1)


def _simplify_halfplanes(A, b):
    """Drop redundant halfplanes (those not supporting an edge of the polygon)."""
    V = _halfplane_polygon(A, b)
    if len(V) < 3:
        return A, b
    return _edges_from_vertices(V)


def audit_conditions(poly: Polyhedron, X: np.ndarray, labels: np.ndarray, r_min: float) -> dict:
    """Exhaustive check of both approximation conditions over labelled samples.

    Condition 1: every sample inside the polytope is preferable.
    Condition 2: every preferable sample outside lies within ``r_min`` of its boundary.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    inside = poly.contains(X)
    cond1 = int(np.count_nonzero(inside & ~labels))
    outside = labels & ~inside
    dmax = 0.0
    if outside.any():
        if poly.dimension == 2:
            ring = poly.to_shapely().exterior
            d = np.array([ring.distance(Point(p)) for p in X[outside]])
        else:
            d = np.max(-poly.slack(X[outside]), axis=1)
        dmax = float(d.max())
        cond2 = int(np.count_nonzero(d > r_min + 1e-12))
    else:
        cond2 = 0
    return {"condition1_violations": cond1, "condition2_violations": cond2,
            "condition2_max_distance": dmax, "inside": int(inside.sum()),
            "preferable_outside": int(outside.sum()), "r_min": r_min}


class ConservativePolygonFitter(ClassifierMixin, BaseEstimator):
    """Largest convex polygon with at most ``max_faces`` edges holding only positive samples.

    ``fit(X, y)`` takes 2-D samples and boolean labels (``True`` for
    preferable).  The polygon starts as the convex hull of the positives, is
    cut until it contains no negative sample, simplified by edge merging to
    ``max_faces`` edges, and finally each edge is pushed halfway towards its
    nearest blocking negative.  Both approximation conditions are audited on
    the training samples; ``r_min=None`` skips the condition-2 requirement.
    """

    def __init__(self, max_faces: int = 6, r_min: float | None = None, n_directions: int = 180):
        self.max_faces = max_faces
        self.r_min = r_min
        self.n_directions = n_directions

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if X.shape[1] != 2:
            raise ValueError("ConservativePolygonFitter works on planar samples")
        y = y.astype(bool)
        if y.sum() < 3:
            raise InfeasibleFit("need at least three positive samples")
        self.classes_ = np.array([False, True])
        pos, neg = X[y], X[~y]
        hull = ConvexHull(pos)
        A, b = _edges_from_vertices(pos[hull.vertices])
        A, b = self._exclude_negatives(A, b, pos, neg)
        A, b = self._merge_edges(A, b, neg)
        A, b = self._expand(A, b, neg)
        if A.shape[0] > self.max_faces:
            raise InfeasibleFit(f"could not reduce the polygon to {self.max_faces} faces")
        self.polygon_ = Polyhedron(A, b, Space.ACTUATED_JOINT)
        r = math.inf if self.r_min is None else self.r_min
        self.audit_ = audit_conditions(self.polygon_, X, y, r)
        if self.audit_["condition1_violations"]:
            raise InfeasibleFit(f"condition 1 violated at {self.audit_['condition1_violations']} samples")
        if self.audit_["condition2_violations"]:
            raise InfeasibleFit(
                f"condition 2 violated: {self.audit_['condition2_violations']} preferable samples are "
                f"farther than r_min={r:.4g} (max {self.audit_['condition2_max_distance']:.4g})")
        return self

    # -- fitting stages --
    def _directions(self) -> np.ndarray:
        t = np.linspace(0, 2 * np.pi, self.n_directions, endpoint=False)
        return np.stack([np.cos(t), np.sin(t)], axis=1)

    def _exclude_negatives(self, A, b, pos, neg):
        dirs = self._directions()
        while True:
            bad = neg[_inside(A, b, neg)]
            if bad.size == 0:
                return A, b
            keep = _inside(A, b, pos)
            P = pos[keep]
            best = None
            for n in dirs:
                sp = np.sort(P @ n)
                sv = bad @ n
                kept = np.searchsorted(sp, sv, side="left")
                j = int(np.argmax(kept))
                if best is None or kept[j] > best[0]:
                    below = sp[kept[j] - 1] if kept[j] > 0 else sv[j] - 1e-9
                    best = (kept[j], n, 0.5 * (sv[j] + below))
            _, n, off = best
            A, b = _simplify_halfplanes(np.vstack([A, n]), np.append(b, off))

    def _merge_edges(self, A, b, neg):
        while A.shape[0] > self.max_faces:
            V = _halfplane_polygon(A, b)
            k = len(V)
            cands = []
            for i in range(k):
                # drop vertex i: chord between its neighbours (always conservative)
                W = np.delete(V, i, axis=0)
                if len(W) >= 3:
                    Ai, bi = _edges_from_vertices(W)
                    cands.append((Polygon(W).area, Ai, bi))
                # drop edge i by extending its neighbours (grows; must stay clean)
                Ai, bi = np.delete(A, i, axis=0), np.delete(b, i)
                Vi = _halfplane_polygon(Ai, bi)
                if len(Vi) >= 3 and Polygon(Vi).area < 1e5 and not _inside(Ai, bi, neg).any():
                    cands.append((Polygon(Vi).area, *_edges_from_vertices(Vi)))
            cands.sort(key=lambda c: -c[0])
            A, b = cands[0][1], cands[0][2]
        return A, b

    def _expand(self, A, b, neg):
        for i in range(A.shape[0]):
            others = np.delete(np.arange(A.shape[0]), i)
            cand = neg[_inside(A[others], b[others], neg)]
            s = cand @ A[i]
            s = s[s > b[i]]
            if s.size:
                b = b.copy()
                b[i] = 0.5 * (b[i] + s.min())
        return A, b

    # -- estimator surface --
    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "polygon_")
        X = check_array(X)
        return np.min(self.polygon_.slack(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X) >= -MEMBERSHIP_TOL


class MftIndexTransformer(TransformerMixin, BaseEstimator):
    """Maps base-frame foot points ``(N, 2)`` to ``[LTI, RACI]`` (NaN where unreachable)."""

    def __init__(self, model: RobotModel | None = None, a_max: float = DEFAULT_A_MAX, leg: int = 0):
        self.model = model
        self.a_max = a_max
        self.leg = leg

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("MftIndexTransformer needs a model")
        self.n_features_in_ = 2
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "n_features_in_")
        X = check_array(X)
        out = np.full((X.shape[0], 2), np.nan)
        for i, p in enumerate(X):
            try:
                cfg = leg_inverse_config(self.model, p, self.leg)
            except OutOfReach:
                continue
            ind = mft.indices(self.model, cfg, self.a_max, self.leg)
            out[i] = ind.gamma_LTI, ind.gamma_RACI
        return out


def default_r_min(field: MftField) -> float:
    return 2.0 * field.joint_grid_diagonal()


def fit_polyhedron_joint_space(field: MftField, model: RobotModel, max_faces: int = 6,
                               r_min: float | None = None) -> Polyhedron:
    """Per-leg polygon in ``(rear hip, fore hip)`` coordinates."""
    X, y = field.joint_samples()
    if not y.any():
        raise InfeasibleFit("empty preferable set")
    r = default_r_min(field) if r_min is None else r_min
    fitter = ConservativePolygonFitter(max_faces=max_faces, r_min=r).fit(X, y)
    poly = fitter.polygon_
    poly.meta.update({
        "model_hash": model.model_hash,
        "resolution": field.resolution,
        "r_min": r,
        "a_max": field.a_max,
        "bounds": (field.bounds or IndexBounds()).as_dict(),
        "audit": fitter.audit_,
    })
    return poly


@dataclass
class WorkspaceMap:
    field: MftField
    leg_polygon: Polyhedron
    polyhedron: Polyhedron
    q_passive_min: np.ndarray
    q_passive_max: np.ndarray


def build(model: RobotModel, resolution: float = DEFAULT_RESOLUTION, lti_min: float = 0.7,
          lti_max: float = 1.0, raci_max: float | None = None, a_max: float = DEFAULT_A_MAX,
          max_faces: int = 6, r_min: float | None = None) -> WorkspaceMap:
    """Whole offline pipeline for both legs of ``model``.

    The two legs share geometry in the planar model, so one grid and one
    polygon serve both; the polygon is placed on ``[q4, q6]`` and ``[q8, q10]``.
    """
    field = grid_workspace(model, resolution, 0, a_max)
    rmax = calibrated_raci_max(model) if raci_max is None else raci_max
    field = mark_preferable(field, IndexBounds(lti_min, lti_max, 0.0, rmax))
    poly = fit_polyhedron_joint_space(field, model, max_faces, r_min)
    stacked = stack_legs([poly, poly])
    stacked.meta = dict(poly.meta)
    lo, hi = passive_joint_bounds(field)
    return WorkspaceMap(field, poly, stacked, lo, hi)


# -- file format -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps_polyhedron(poly: Polyhedron) -> str:
    m = poly.meta
    bounds = m.get("bounds", {})
    out = io.StringIO()
    out.write("# MFT preferable polyhedron\n")
    out.write(f"schema_version: {SCHEMA_VERSION}\n")
    out.write(f"model_hash: {m.get('model_hash', '')}\n")
    out.write(f"space: {poly.space.value}\n")
    out.write(f"dimension: {poly.dimension}\n")
    out.write(f"faces: {poly.n_faces}\n")
    out.write(f"resolution: {_fmt(m.get('resolution', math.nan))}\n")
    out.write(f"r_min: {_fmt(m.get('r_min', math.nan))}\n")
    out.write(f"a_max: {_fmt(m.get('a_max', math.nan))}\n")
    out.write("bounds: " + " ".join(f"{k}={_fmt(bounds[k])}" for k in sorted(bounds)) + "\n")
    out.write("witness: " + " ".join(_fmt(v) for v in poly.witness) + "\n")
    out.write("rows:\n")
    for a, bb in zip(poly.A, poly.b):
        out.write(" ".join(_fmt(v) for v in a) + " | " + _fmt(bb) + "\n")
    out.write("end\n")
    return out.getvalue()


def loads_polyhedron(text: str, expected_model_hash: str | None = None) -> Polyhedron:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    try:
        header = {}
        i = 0
        while lines[i] != "rows:":
            key, _, val = lines[i].partition(":")
            if not _:
                raise SchemaMismatch(f"bad header line {lines[i]!r}")
            header[key.strip()] = val.strip()
            i += 1
        if header.get("schema_version") != str(SCHEMA_VERSION):
            raise SchemaMismatch(f"unsupported polyhedron schema {header.get('schema_version')!r}")
        dim = int(header["dimension"])
        faces = int(header["faces"])
        rows = lines[i + 1:i + 1 + faces]
        if len(rows) != faces or lines[i + 1 + faces] != "end":
            raise SchemaMismatch("row count does not match header")
        A = np.empty((faces, dim))
        b = np.empty(faces)
        for r, ln in enumerate(rows):
            lhs, sep, rhs = ln.partition("|")
            vals = [float(v) for v in lhs.split()]
            if not sep or len(vals) != dim:
                raise SchemaMismatch(f"malformed row {ln!r}")
            A[r] = vals
            b[r] = float(rhs)
        witness = np.array([float(v) for v in header["witness"].split()])
        if witness.size != dim:
            raise SchemaMismatch("witness dimension mismatch")
        bounds = {}
        for tok in header.get("bounds", "").split():
            k, _, v = tok.partition("=")
            bounds[k] = float(v)
        space = Space(header["space"])
        meta = {"model_hash": header["model_hash"], "resolution": float(header["resolution"]),
                "r_min": float(header["r_min"]), "a_max": float(header["a_max"]), "bounds": bounds}
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, SchemaMismatch):
            raise
        raise SchemaMismatch(f"corrupted polyhedron file: {exc}") from exc
    if expected_model_hash is not None and meta["model_hash"] != expected_model_hash:
        raise ModelHashMismatch("polyhedron was built for a different robot model")
    poly = Polyhedron.__new__(Polyhedron)
    poly.A, poly.b, poly.space, poly.witness, poly.meta = A, b, space, witness, meta
    return poly


def save_polyhedron(poly: Polyhedron, path: str | Path) -> None:
    Path(path).write_text(dumps_polyhedron(poly))


def load_polyhedron(path: str | Path, expected_model_hash: str | None = None) -> Polyhedron:
    return loads_polyhedron(Path(path).read_text(), expected_model_hash)
