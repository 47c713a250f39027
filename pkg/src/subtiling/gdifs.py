"""Graph-directed IFS built from an admissible substitution.

Vertices are the letters of the primitive bottom block, edges are the
occurrences of those letters inside the inflated prototiles, and every
map is the contraction x -> (x + u_e) / lambda.  On top of the graph:
a Markov path sampler, rigorous ball-measure brackets, and the two
average-density estimators (pointwise and Birkhoff-style).
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .spectral import admissibility_report, perron_vectors, snap_rational_eigenpair
from .substitution import Substitution

__all__ = [
    "Edge",
    "GdifsGraph",
    "MassVector",
    "PathPrefix",
    "MarkovSampler",
    "DensityEstimate",
    "BracketPrecisionError",
    "build_graph",
    "dimension",
    "mass_vector",
    "natural_projection",
    "cylinder_measure",
    "ball_measure_bracket",
    "ZoomCursor",
    "average_density_pointwise",
    "average_density_birkhoff",
]

_GEOM_TOL = 1e-9


class BracketPrecisionError(RuntimeError):
    """Raised when a bracket query exceeds its active-set budget."""


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    u: np.ndarray  # displacement in the inflated tile, shape (dim,)


@dataclass(eq=False)
class GdifsGraph:
    dim: int
    lam: float
    rho_B: float
    alpha: float
    letter_ids: tuple[int, ...]      # global letter id per vertex
    letter_names: tuple[str, ...]
    sup_half: np.ndarray             # (m, dim) half-extents of the prototile supports
    edges: list[Edge]
    edge_src: np.ndarray             # (E,)
    edge_dst: np.ndarray             # (E,)
    edge_u: np.ndarray               # (E, dim)
    out_edges: list[np.ndarray]      # per-vertex global edge ids, occurrence order
    B: np.ndarray                    # restriction of the substitution matrix
    overlap: bool
    exact_geometry: bool = False     # lambda and displacements exact in float64
    xi: np.ndarray | None = None     # full tile-length vector (dim 1 only)

    @property
    def n_vertices(self) -> int:
        return len(self.letter_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def vertex_of_letter(self, letter: int) -> int:
        return self.letter_ids.index(letter)

    @property
    def u_max(self) -> float:
        return float(np.abs(self.edge_u).max())


def build_graph(sub: Substitution, xi: np.ndarray | None = None) -> GdifsGraph:
    """Construct the contraction graph of an admissible substitution.

    Raises ValueError when the admissibility report has failures or when
    the child tiles do not fit the inflated prototile within 1e-9.
    Displacements are computed in exact rational arithmetic whenever the
    tile lengths snap to rationals satisfying the eigenvector identity;
    exact_geometry records whether they are also exact as float64.
    """
    rep = admissibility_report(sub)
    if not rep.admissible:
        raise ValueError("substitution is not admissible: " + "; ".join(rep.failures))
    b_letters = rep.b_letters
    local = {g: i for i, g in enumerate(b_letters)}
    m = len(b_letters)
    lam = rep.lam
    M = np.zeros((m, m), dtype=np.int64)

    xi_fr = None
    if sub.dim == 1:
        if xi is None:
            xi = perron_vectors(_substitution_matrix(sub), side="left", normalization="min").vec
        xi = np.asarray(xi, dtype=float)
        snapped = snap_rational_eigenpair(_substitution_matrix(sub), xi, lam)
        if snapped is not None:
            xi_fr, lam_fr = snapped
            xi = np.array([float(f) for f in xi_fr])
            lam = float(lam_fr)
        sup_half = np.array([[xi[g] / 2.0] for g in b_letters])
    else:
        xi = None
        sup_half = np.full((m, 2), 0.5)

    exact = sub.dim == 2 or xi_fr is not None
    edges: list[Edge] = []
    out_edges: list[list[int]] = [[] for _ in range(m)]
    for s_local, gs in enumerate(b_letters):
        if sub.dim == 1:
            img = sub.image(gs)
            if xi_fr is not None:
                run = Fraction(0)
                centers_fr = []
                for g in img:
                    centers_fr.append(run + xi_fr[g] / 2 - lam_fr * xi_fr[gs] / 2)
                    run += xi_fr[g]
                if run != lam_fr * xi_fr[gs]:
                    raise ValueError(
                        f"tile lengths for letter {sub.letters[gs]!r} sum to {run}, "
                        f"expected {lam_fr * xi_fr[gs]}"
                    )
                centers = [float(c) for c in centers_fr]
                exact = exact and all(
                    Fraction(c) == cf for c, cf in zip(centers, centers_fr)
                )
            else:
                lengths = xi[img]
                total = float(lengths.sum())
                if abs(total - lam * xi[gs]) > _GEOM_TOL * max(1.0, lam * xi[gs]):
                    raise ValueError(
                        f"tile lengths for letter {sub.letters[gs]!r} sum to {total}, "
                        f"expected {lam * xi[gs]}"
                    )
                centers = list(np.cumsum(lengths) - lengths / 2.0 - lam * xi[gs] / 2.0)
            for pos, g in enumerate(img):
                if int(g) in local:
                    r_local = local[int(g)]
                    u = np.array([centers[pos]])
                    if abs(u[0]) + xi[g] / 2.0 > lam * xi[gs] / 2.0 + _GEOM_TOL:
                        raise ValueError("child tile leaves the inflated prototile")
                    eid = len(edges)
                    edges.append(Edge(s_local, r_local, u))
                    out_edges[s_local].append(eid)
                    M[r_local, s_local] += 1
        else:
            grid = sub.grid(gs)
            q = sub.q
            for i in range(q):
                for j in range(q):
                    g = int(grid[i, j])
                    if g in local:
                        r_local = local[g]
                        u = np.array([j + 0.5 - q / 2.0, q / 2.0 - i - 0.5])
                        eid = len(edges)
                        edges.append(Edge(s_local, r_local, u))
                        out_edges[s_local].append(eid)
                        M[r_local, s_local] += 1

    edge_src = np.array([e.src for e in edges], dtype=np.int64)
    edge_dst = np.array([e.dst for e in edges], dtype=np.int64)
    edge_u = np.stack([e.u for e in edges]).astype(float)

    overlap = False
    for v in range(m):
        ids = out_edges[v]
        for a in range(len(ids)):
            for b in range(a + 1, len(ids)):
                ea, eb = edges[ids[a]], edges[ids[b]]
                ha = sup_half[ea.dst]
                hb = sup_half[eb.dst]
                if np.all(np.abs(ea.u - eb.u) < ha + hb - _GEOM_TOL):
                    overlap = True

    return GdifsGraph(
        dim=sub.dim,
        lam=lam,
        rho_B=rep.rho_B,
        alpha=rep.alpha,
        letter_ids=tuple(int(g) for g in b_letters),
        letter_names=tuple(sub.letters[g] for g in b_letters),
        sup_half=sup_half,
        edges=edges,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_u=edge_u,
        out_edges=[np.array(ids, dtype=np.int64) for ids in out_edges],
        B=M,
        overlap=overlap,
        exact_geometry=exact,
        xi=xi,
    )


def _substitution_matrix(sub: Substitution) -> np.ndarray:
    from .substitution import substitution_matrix

    return substitution_matrix(sub)


def dimension(graph: GdifsGraph) -> float:
    """Similarity dimension log(rho_B) / log(lambda) of the attractor family."""
    if graph.rho_B <= 1.0 + 1e-12:
        warnings.warn("graph spectral radius is 1; attractor is a point set of dimension 0")
        return 0.0
    return math.log(graph.rho_B) / math.log(graph.lam)


# ---------------------------------------------------------------------------
# masses and cylinder measures


@dataclass(frozen=True)
class MassVector:
    """Per-vertex masses h with the coupling sum(xi_tr * h) = 1."""

    h: np.ndarray

    @property
    def c0(self) -> float:
        return float(self.h.sum())


def mass_vector(graph: GdifsGraph, xi_tr: np.ndarray) -> MassVector:
    """Left Perron mass vector of B, scaled so sum(xi_tr * h) = 1."""
    xi_tr = np.asarray(xi_tr, dtype=float)
    if xi_tr.shape != (graph.n_vertices,) or np.any(xi_tr <= 0):
        raise ValueError("xi_tr must be a positive vector, one entry per vertex")
    raw = perron_vectors(graph.B, side="left", normalization="sum").vec
    return MassVector(h=raw / float(xi_tr @ raw))


@dataclass(frozen=True)
class PathPrefix:
    start: int
    edges: np.ndarray  # global edge ids, shape (L,)

    def __len__(self) -> int:
        return len(self.edges)


def _validate_path(graph: GdifsGraph, path: PathPrefix) -> None:
    if not 0 <= path.start < graph.n_vertices:
        raise ValueError(f"start vertex {path.start} out of range")
    if len(path.edges) == 0:
        return
    ids = np.asarray(path.edges)
    if ids.min() < 0 or ids.max() >= graph.n_edges:
        raise ValueError("edge id out of range")
    srcs = graph.edge_src[ids]
    if srcs[0] != path.start:
        raise ValueError("first edge does not start at the path's start vertex")
    if len(ids) > 1 and np.any(graph.edge_dst[ids[:-1]] != srcs[1:]):
        raise ValueError("edges do not compose")


def cylinder_measure(graph: GdifsGraph, mass: MassVector, path: PathPrefix) -> float:
    """Measure of the path cylinder: h at the final vertex over c0 * rho^len."""
    _validate_path(graph, path)
    n = len(path.edges)
    last = path.start if n == 0 else int(graph.edge_dst[path.edges[-1]])
    return float(mass.h[last]) / (mass.c0 * graph.rho_B**n)


def natural_projection(
    graph: GdifsGraph, path: PathPrefix, terms: int | None = None
) -> tuple[np.ndarray, float]:
    """Point of the attractor addressed by a path, plus a truncation bound.

    Sums lambda^-(n+1) * u_{e_n} over the first `terms` edges; the bound
    covers every infinite continuation of the truncated prefix.
    """
    _validate_path(graph, path)
    ids = np.asarray(path.edges, dtype=np.int64)
    if terms is not None:
        ids = ids[:terms]
    used = len(ids)
    weights = graph.lam ** (-np.arange(1, used + 1, dtype=float))
    point = weights @ graph.edge_u[ids] if used else np.zeros(graph.dim)
    bound = graph.lam ** (-used) * graph.u_max / (graph.lam - 1.0)
    return point, bound


# ---------------------------------------------------------------------------
# Markov sampling


class MarkovSampler:
    """Stationary-increment path sampler on the contraction graph.

    Start distribution h / sum(h); an edge s -> r is taken with
    probability h_r / (rho_B * h_s), which makes every path prefix of
    length n carry probability h_last / (c0 * rho^n).
    """

    def __init__(self, graph: GdifsGraph, mass: MassVector, seed) -> None:
        self.graph = graph
        self.mass = mass
        self.w = mass.h / mass.h.sum()
        self._rng = np.random.Generator(np.random.Philox(seed))
        self._start_cum = np.cumsum(self.w)
        self._edge_cum = []
        for v in range(graph.n_vertices):
            ids = graph.out_edges[v]
            p = mass.h[graph.edge_dst[ids]] / (graph.rho_B * mass.h[v])
            total = p.sum()
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"edge probabilities at vertex {v} sum to {total}")
            self._edge_cum.append(np.cumsum(p / total))

    def sample_paths(self, count: int, length: int) -> tuple[np.ndarray, np.ndarray]:
        starts = np.searchsorted(self._start_cum, self._rng.random(count), side="right")
        starts = np.minimum(starts, self.graph.n_vertices - 1).astype(np.int64)
        edges = np.empty((count, length), dtype=np.int64)
        state = starts.copy()
        for step in range(length):
            draw = self._rng.random(count)
            for v in range(self.graph.n_vertices):
                sel = state == v
                if not sel.any():
                    continue
                ids = self.graph.out_edges[v]
                pick = np.searchsorted(self._edge_cum[v], draw[sel], side="right")
                pick = np.minimum(pick, len(ids) - 1)
                edges[sel, step] = ids[pick]
            state = self.graph.edge_dst[edges[:, step]]
        return starts, edges

    def sample_path(self, length: int) -> PathPrefix:
        starts, edges = self.sample_paths(1, length)
        return PathPrefix(start=int(starts[0]), edges=edges[0])


# ---------------------------------------------------------------------------
# ball-measure brackets

_MAX_ACTIVE = 2_000_000


def _classify(taus, halfs, x, r, side):
    """Certificate masks (inside, outside) for boxes against a closed ball.

    side "two": Euclidean ball B_r(x).  side "right": interval [x, x+r].
    """
    if side == "two":
        diff = np.abs(taus - x)
        near = np.maximum(diff - halfs, 0.0)
        far = diff + halfs
        near2 = np.einsum("ij,ij->i", near, near)
        far2 = np.einsum("ij,ij->i", far, far)
        inside = far2 <= r * r
        outside = near2 > r * r
    else:
        lo = taus[:, 0] - halfs[:, 0]
        hi = taus[:, 0] + halfs[:, 0]
        inside = (lo >= x[0]) & (hi <= x[0] + r)
        outside = (hi < x[0]) | (lo > x[0] + r)
    return inside, outside


def _split(graph, vids, taus, scale_next):
    """Replace every piece by its children, one level deeper."""
    parts_v, parts_t = [], []
    for v in range(graph.n_vertices):
        sel = vids == v
        if not sel.any():
            continue
        ids = graph.out_edges[v]
        child_t = taus[sel][:, None, :] + scale_next * graph.edge_u[ids][None, :, :]
        parts_t.append(child_t.reshape(-1, graph.dim))
        parts_v.append(np.tile(graph.edge_dst[ids], int(sel.sum())))
    return np.concatenate(parts_v), np.concatenate(parts_t)


def _bracket_core(graph, mass, vids, taus, x, r, side, depth, rel_tol=0.0):
    """Shared BFS over path cylinders; returns (lower, upper) mass."""
    vids = np.asarray(vids, dtype=np.int64)
    taus = np.asarray(taus, dtype=float).reshape(len(vids), graph.dim)
    lo_acc = 0.0
    rho = graph.rho_B
    for level in range(depth + 1):
        if len(vids) == 0:
            return lo_acc, lo_acc
        if len(vids) > _MAX_ACTIVE:
            raise BracketPrecisionError(
                f"bracket query exceeded {_MAX_ACTIVE} active cylinders at depth {level}"
            )
        scale = graph.lam ** (-level)
        halfs = scale * graph.sup_half[vids]
        inside, outside = _classify(taus, halfs, x, r, side)
        masses = mass.h[vids] * rho ** (-level)
        lo_acc += float(masses[inside].sum())
        keep = ~(inside | outside)
        undecided = float(masses[keep].sum())
        if undecided == 0.0:
            return lo_acc, lo_acc
        if undecided <= rel_tol * (lo_acc + undecided) or level == depth:
            return lo_acc, lo_acc + undecided
        vids, taus = _split(graph, vids[keep], taus[keep], graph.lam ** (-(level + 1)))
    return lo_acc, lo_acc  # unreachable


def ball_measure_bracket(
    graph: GdifsGraph,
    mass: MassVector,
    vertex: int,
    x,
    r: float,
    depth: int = 30,
    side: str = "two",
    rel_tol: float = 0.0,
) -> tuple[float, float]:
    """Rigorous two-sided bracket for the vertex measure of a closed ball.

    The lower bound sums cylinders certified inside, the upper bound adds
    all cylinders still undecided at the stopping level.  Masses are in
    the h scale of `mass` (divide by c0 for the probability version).
    """
    if side not in ("two", "right"):
        raise ValueError("side must be 'two' or 'right'")
    if side == "right" and graph.dim != 1:
        raise ValueError("one-sided intervals need a one-dimensional graph")
    if r < 0:
        raise ValueError("radius must be nonnegative")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (graph.dim,):
        raise ValueError(f"query point must have shape ({graph.dim},)")
    vids = np.array([vertex], dtype=np.int64)
    taus = np.zeros((1, graph.dim))
    return _bracket_core(graph, mass, vids, taus, x, r, side, depth, rel_tol)


# ---------------------------------------------------------------------------
# zoom cursor: renormalized neighborhoods along a sampled path

_PRUNE_SLACK = 1e-6


class ZoomCursor:
    """Tracks the depth-m cylinders near the point addressed by a path.

    Offsets are kept as D = lam^m * tau - b_m with b_m the inflated
    partial projection.  When the graph geometry is exact in float64
    (integer inflation, dyadic displacements) the recursion
    D' = lam * D + u_e - u_{path[m]} is roundoff free at any depth; the
    offset of a piece relative to the point is D minus the freshly
    summed tail projection, so rounding stays at a single truncated sum
    per level.  For inexact geometries the recursion amplifies float
    error by lam per level, so the cursor tracks a drift bound and
    raises BracketPrecisionError once it could affect classifications.
    """

    def __init__(self, graph: GdifsGraph, path: PathPrefix, terms: int = 60) -> None:
        if len(path.edges) < terms:
            raise ValueError("path too short for the requested tail length")
        self.graph = graph
        self.path = path
        self.terms = terms
        self.level = 0
        self.vids = np.array([path.start], dtype=np.int64)
        self.D = np.zeros((1, graph.dim))
        self._tail_w = graph.lam ** (-np.arange(1, terms + 1, dtype=float))
        self._drift = 0.0

    def _tail(self) -> np.ndarray:
        ids = self.path.edges[self.level : self.level + self.terms]
        return self._tail_w[: len(ids)] @ self.graph.edge_u[ids]

    def deltas(self) -> np.ndarray:
        """Piece offsets relative to the path's point, at the current scale."""
        return self.D - self._tail()

    def descend(self) -> None:
        if self.level + self.terms >= len(self.path.edges):
            raise ValueError("path exhausted; sample a longer one")
        em_u = self.graph.edge_u[self.path.edges[self.level]]
        lam = self.graph.lam
        parts_v, parts_d = [], []
        for v in range(self.graph.n_vertices):
            sel = self.vids == v
            if not sel.any():
                continue
            ids = self.graph.out_edges[v]
            d = lam * self.D[sel][:, None, :] + (self.graph.edge_u[ids] - em_u)[None, :, :]
            parts_d.append(d.reshape(-1, self.graph.dim))
            parts_v.append(np.tile(self.graph.edge_dst[ids], int(sel.sum())))
        self.vids = np.concatenate(parts_v)
        self.D = np.concatenate(parts_d)
        self.level += 1
        # drop pieces that no ball of radius <= 1 around the point can reach
        delta = self.deltas()
        halfs = self.graph.sup_half[self.vids]
        near = np.maximum(np.abs(delta) - halfs, 0.0)
        keep = np.einsum("ij,ij->i", near, near) <= (1.0 + _PRUNE_SLACK) ** 2
        self.vids = self.vids[keep]
        self.D = self.D[keep]
        if len(self.vids) > 200_000:
            raise BracketPrecisionError("zoom cursor piece set exceeded 200000")
        if not self.graph.exact_geometry:
            span = float(np.abs(self.D).max()) if len(self.D) else 1.0
            self._drift = lam * self._drift + 8.0 * np.finfo(float).eps * (span + self.graph.u_max)
            if self._drift > 1e-9:
                raise BracketPrecisionError(
                    "offset recursion drift exceeds 1e-9 for this inexact geometry; "
                    "reduce k or use a substitution with rational tile lengths"
                )


# ---------------------------------------------------------------------------
# average density estimators


@dataclass(frozen=True)
class DensityEstimate:
    method: str
    c_hat: float
    stderr: float
    systematic_bound: float
    alpha: float
    k: int
    replicas: int
    step: float
    depth: int
    side: str
    seed: int
    per_replica: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "alpha": float(self.alpha),
            "c_hat": float(self.c_hat),
            "stderr": float(self.stderr),
            "systematic_bound": float(self.systematic_bound),
            "k": self.k,
            "replicas": self.replicas,
            "seed": self.seed,
        }


def _norm_factor(s: float, alpha: float, side: str) -> float:
    return (2.0 * s) ** alpha if side == "two" else s**alpha


def _default_side(graph: GdifsGraph) -> str:
    return "right" if graph.dim == 1 else "two"


def _default_depth(graph: GdifsGraph) -> int:
    return 26 if graph.dim == 1 else 7


def _replica_pointwise(graph, mass, seed, k, J, depth, side, terms):
    sampler = MarkovSampler(graph, mass, seed)
    path = sampler.sample_path(k + terms + 1)
    cursor = ZoomCursor(graph, path, terms=terms)
    lam, alpha = graph.lam, graph.alpha
    x0 = np.zeros(graph.dim)
    total = 0.0
    syst = 0.0
    n_pts = k * J + 1
    for m in range(k):
        delta = cursor.deltas()
        last = J if m == k - 1 else J - 1
        for j in range(last + 1):
            s = lam ** (-j / J)
            glob = m * J + j
            w = 0.5 if glob in (0, n_pts - 1) else 1.0
            lo, hi = _bracket_core(graph, mass, cursor.vids, delta, x0, s, side, depth)
            norm = _norm_factor(s, alpha, side)
            total += w * 0.5 * (lo + hi) / norm
            syst += w * 0.5 * (hi - lo) / norm
        if m < k - 1:
            cursor.descend()
    return total / (J * k), syst / (J * k)


def _measures_multiradius(graph, mass, vids, taus, radii, side, depth):
    """Measure brackets of nested balls around 0, one bracket per radius.

    Splits only the cylinders whose distance band contains a grid radius;
    everything else resolves by sorting the in-thresholds once.
    """
    n_r = len(radii)
    vids = np.asarray(vids, dtype=np.int64)
    taus = np.asarray(taus, dtype=float).reshape(len(vids), graph.dim)
    rin_done: list[np.ndarray] = []
    mass_done: list[np.ndarray] = []
    x0 = np.zeros(graph.dim)
    rho = graph.rho_B
    mids = np.zeros(n_r)
    halves = np.zeros(n_r)
    for level in range(depth + 1):
        if len(vids) == 0:
            break
        if len(vids) > _MAX_ACTIVE:
            raise BracketPrecisionError(
                f"multiradius query exceeded {_MAX_ACTIVE} active cylinders"
            )
        scale = graph.lam ** (-level)
        halfs = scale * graph.sup_half[vids]
        if side == "two":
            diff = np.abs(taus - x0)
            near = np.maximum(diff - halfs, 0.0)
            rout = np.sqrt(np.einsum("ij,ij->i", near, near))
            far = diff + halfs
            rin = np.sqrt(np.einsum("ij,ij->i", far, far))
        else:
            lo = taus[:, 0] - halfs[:, 0]
            hi = taus[:, 0] + halfs[:, 0]
            rout = np.where(lo >= 0, lo, np.where(hi < 0, np.inf, 0.0))
            rin = np.where(lo >= 0, hi, np.inf)
            rin[hi < 0] = np.inf
        masses = mass.h[vids] * rho ** (-level)
        # in for radius r iff r >= rin; out iff r < rout
        lo_idx = np.searchsorted(radii, rout, side="left")
        hi_idx = np.searchsorted(radii, rin, side="left")
        banded = lo_idx == hi_idx
        if banded.any():
            rin_done.append(rin[banded])
            mass_done.append(masses[banded])
        keep = ~banded
        if not keep.any():
            break
        if level == depth:
            r_in_u = rin[keep]
            r_out_u = rout[keep]
            m_u = masses[keep]
            for i, r in enumerate(radii):
                is_in = r >= r_in_u
                is_mid = (~is_in) & (r >= r_out_u)
                mid_mass = float(m_u[is_mid].sum())
                mids[i] += float(m_u[is_in].sum()) + 0.5 * mid_mass
                halves[i] += 0.5 * mid_mass
            break
        vids, taus = _split(graph, vids[keep], taus[keep], graph.lam ** (-(level + 1)))
    if rin_done:
        rin_all = np.concatenate(rin_done)
        m_all = np.concatenate(mass_done)
        order = np.argsort(rin_all)
        rin_all = rin_all[order]
        cum = np.concatenate([[0.0], np.cumsum(m_all[order])])
        mids += cum[np.searchsorted(rin_all, radii, side="right")]
    return mids, halves


def _replica_birkhoff(graph, mass, seed, k, J, depth, side, terms):
    sampler = MarkovSampler(graph, mass, seed)
    path = sampler.sample_path(k + terms + 1)
    cursor = ZoomCursor(graph, path, terms=terms)
    lam, alpha = graph.lam, graph.alpha
    radii = lam ** (-np.arange(J + 1, dtype=float) / J)  # descending 1 .. 1/lam
    order = np.argsort(radii)
    radii_sorted = radii[order]
    norms = np.array([_norm_factor(s, alpha, side) for s in radii])
    n_pts = k * J + 1
    total = 0.0
    syst = 0.0
    for m in range(k):
        delta = cursor.deltas()
        mids_s, halves_s = _measures_multiradius(
            graph, mass, cursor.vids, delta, radii_sorted, side, depth
        )
        mids = np.empty(J + 1)
        halves = np.empty(J + 1)
        mids[order] = mids_s
        halves[order] = halves_s
        for j in range(J + 1):
            glob = m * J + j
            w = 1.0
            if glob in (0, n_pts - 1):
                w = 0.5
            elif j in (0, J):
                w = 0.5  # interior integer t: half from this level, half from the neighbor
            total += w * mids[j] / norms[j]
            syst += w * halves[j] / norms[j]
        if m < k - 1:
            cursor.descend()
    return total / (J * k), syst / (J * k)


def _run_density(graph, mass, seed, k, replicas, step, depth, side, terms, threads, worker, name):
    if side is None:
        side = _default_side(graph)
    if side == "right" and graph.dim != 1:
        raise ValueError("one-sided densities need a one-dimensional graph")
    if depth is None:
        depth = _default_depth(graph)
    J = round(1.0 / step)
    if abs(J * step - 1.0) > 1e-12 or J < 1:
        raise ValueError("step must divide 1 exactly")
    streams = np.random.SeedSequence(seed).spawn(replicas)
    args = [(graph, mass, streams[r], k, J, depth, side, terms) for r in range(replicas)]
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: worker(*a), args))
    else:
        results = [worker(*a) for a in args]
    vals = np.array([v for v, _ in results])
    systs = np.array([s for _, s in results])
    c_hat = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else 0.0
    return DensityEstimate(
        method=name,
        c_hat=c_hat,
        stderr=stderr,
        systematic_bound=float(systs.mean()),
        alpha=graph.alpha,
        k=k,
        replicas=replicas,
        step=step,
        depth=depth,
        side=side,
        seed=seed,
        per_replica=vals,
    )


def average_density_pointwise(
    graph: GdifsGraph,
    mass: MassVector,
    seed: int,
    k: int = 40,
    replicas: int = 64,
    step: float = 1.0 / 32.0,
    depth: int | None = None,
    side: str | None = None,
    terms: int = 60,
    threads: int = 0,
) -> DensityEstimate:
    """Log-averaged density via fresh ball-measure brackets at each grid scale.

    Integrates the renormalized ball-mass ratio over t in [0, k] by the
    trapezoid rule with spacing `step`, averaging over `replicas`
    independently sampled typical points.
    """
    return _run_density(
        graph, mass, seed, k, replicas, step, depth, side, terms, threads,
        _replica_pointwise, "pointwise",
    )


def average_density_birkhoff(
    graph: GdifsGraph,
    mass: MassVector,
    seed: int,
    k: int = 40,
    replicas: int = 64,
    step: float = 1.0 / 32.0,
    depth: int | None = None,
    side: str | None = None,
    terms: int = 60,
    threads: int = 0,
) -> DensityEstimate:
    """Log-averaged density via one shared cylinder refinement per scale unit.

    Each unit interval of the log-time axis refines the neighborhood
    cylinders once and classifies all grid radii against the refined
    list, so the cost per level is shared across the grid.
    """
    return _run_density(
        graph, mass, seed, k, replicas, step, depth, side, terms, threads,
        _replica_birkhoff, "birkhoff",
    )
