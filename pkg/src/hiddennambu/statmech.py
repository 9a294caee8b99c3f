"""Canonical-ensemble partition functions in both descriptions.

``Z_H`` integrates ``exp(-beta H)`` over the canonical chart.  ``Z_N``
integrates ``exp(-beta H~)`` over the multiplet space against
``delta(G~)``; the delta function is resolved onto the solution branches
``z = z_a(x, y)`` of ``G~ = 0`` with weight ``|dG~/dz|^-1``.

Two estimators are available: tensor Gauss-Legendre quadrature and plain
Monte Carlo with a counter-based generator (Philox), keyed by seed and chunk
index so results do not depend on how chunks are scheduled.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from itertools import product
import json
import math
from typing import Callable, Optional

import numpy as np

__all__ = [
    "PartitionError",
    "PartitionConfig",
    "PartitionEstimate",
    "RegionChart",
    "BranchSolver",
    "NormalizationResult",
    "quadratic_triplet_branches",
    "graph_triplet_branches",
    "estimate_partition_hamiltonian",
    "estimate_partition_nambu",
    "normalization_factor",
]

_CHUNK = 1 << 16


class PartitionError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PartitionConfig:
    """Inverse temperature, domain and estimator settings.

    The domain is either explicit ``bounds`` (one ``(lo, hi)`` per chart
    coordinate) or a cutoff ``radius``.  For ``Z_H`` the radius gives the box
    ``[-R, R]`` per coordinate; branch solvers translate it into bounds on
    their own region charts.
    """

    beta: float
    radius: Optional[float] = 8.0
    bounds: Optional[tuple] = None
    estimator: str = "tensor-quadrature"
    samples: int = 1_000_000
    nodes: int = 96
    seed: int = 0
    workers: int = 1
    band: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.estimator not in ("tensor-quadrature", "monte-carlo"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "monte-carlo" and self.samples < 1000:
            raise ValueError("monte-carlo needs at least 1000 samples")
        if self.bounds is None and self.radius is None:
            raise ValueError("either bounds or radius is required")

    def box(self, dim):
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
            if b.shape[0] != dim:
                raise ValueError(f"need {dim} bounds, got {b.shape[0]}")
            return b
        return np.tile([-self.radius, self.radius], (dim, 1)).astype(float)


@dataclass(frozen=True)
class PartitionEstimate:
    value: float
    stderr: float
    method: str
    beta: float
    seed: Optional[int]
    excluded_mass_bound: float
    branch_count: Optional[int]
    flagged_nodes: int = 0

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass(frozen=True)
class RegionChart:
    """Parametrization ``u -> (x, y)`` of the admissible region.

    ``to_xy(u)`` takes ``u`` of shape ``(2, S)`` and returns ``(x, y, jac)``
    with ``jac = |d(x, y)/d(u)|``.  ``bounds(radius)`` gives the ``u`` box for a
    phase-space cutoff radius.  A chart that cancels the ``|dG/dz|^-1``
    singularity at branch merges lets both estimators converge quickly.
    """

    to_xy: Callable
    bounds: Callable


@dataclass(frozen=True)
class BranchSolver:
    """Solutions ``z_a(x, y)`` of ``G~(x, y, z) = 0`` for one multiplet.

    ``constraint`` is ``G~`` on the multiplet ``(x, y, z)`` (free axes first,
    solved axis last).  ``region(x, y)`` marks where the branches are real.
    ``preimages`` is the number of chart points ``(q, p)`` over a generic
    admissible ``(x, y)``; it is not used by the estimators, only by the
    predicted ratio.  ``band(x, y)`` measures distance to the branch-merge
    locus for the epsilon-band exclusion, and ``band_mass`` computes the
    mass lost to that exclusion.
    """

    branches: tuple
    constraint: object
    region: Callable
    chart: Optional[RegionChart] = None
    preimages: int = 1
    band: Optional[Callable] = None
    band_mass: Optional[Callable] = None

    @property
    def count(self):
        return len(self.branches)

    def weights(self, x, y):
        """``[(z_a, |dG/dz|^-1)]`` for every branch, vectorized over samples."""
        out = []
        for zf in self.branches:
            z = zf(x, y)
            g = self.constraint.grad_func(np.array([x, y, z]))
            out.append((z, 1.0 / np.abs(g[2])))
        return out

    def max_residual(self, x, y):
        """Max ``|G~(x, y, z_a(x, y))|`` over branches and admissible samples."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = self.region(x, y)
        worst = 0.0
        for zf in self.branches:
            z = zf(x[ok], y[ok])
            vals = self.constraint.func(np.array([x[ok], y[ok], z]))
            if np.size(vals):
                worst = max(worst, float(np.max(np.abs(vals))))
        return worst


def _field_from(func):
    from .fields import ScalarField
    return ScalarField.autodiff(3, func)


def quadratic_triplet_branches(n=1):
    """Branches ``z = +/- sqrt(y^2 - x^2)`` of ``(x^2 - y^2 + z^2)/2 = 0``.

    The region chart ``x = y sin(theta)`` makes ``dx dy / |z| = d(theta) dy``.
    Each admissible ``(x, y)`` has four ``(q, p)`` preimages.
    """
    def zp(x, y):
        return np.sqrt(np.maximum(y * y - x * x, 0.0))

    def zm(x, y):
        return -zp(x, y)

    def to_xy(u):
        theta, y = u
        return y * np.sin(theta), y, y * np.cos(theta)

    def bounds(radius):
        return np.array([[-0.5 * np.pi, 0.5 * np.pi], [0.0, 0.25 * radius ** 2]])

    def band_mass(eps, weight):
        # mass in {0 < y - |x| < eps}, computed on the theta chart where the
        # integrand is bounded: |sin(theta)| > 1 - eps / y
        from scipy import integrate

        def inner(y):
            if y <= 0:
                return 0.0
            t0 = math.asin(max(0.0, 1.0 - eps / y))
            f = lambda t: weight(y * math.sin(t), y) * y * math.cos(t)
            a = integrate.quad(f, t0, 0.5 * math.pi)[0]
            b = integrate.quad(f, -0.5 * math.pi, -t0)[0]
            return a + b
        return inner

    solver = BranchSolver(
        branches=(zp, zm),
        constraint=_field_from(lambda w: 0.5 * (w[0] ** 2 - w[1] ** 2 + w[2] ** 2)),
        region=lambda x, y: y > np.abs(x),
        chart=RegionChart(to_xy, bounds),
        preimages=4,
        band=lambda x, y: y - np.abs(x),
        band_mass=band_mass,
    )
    return (solver,) * n if n > 1 else solver


def graph_triplet_branches(z_of_xy):
    """Single branch ``z = z0(x, y)`` of ``G~ = z - z0(x, y)``."""
    return BranchSolver(
        branches=(lambda x, y: z_of_xy(x, y) + 0.0 * x,),
        constraint=_field_from(lambda w: w[2] - z_of_xy(w[0], w[1])),
        region=lambda x, y: np.ones(np.shape(x), dtype=bool),
        preimages=1,
    )


# ---------------------------------------------------------------------------
# generic integration machinery
# ---------------------------------------------------------------------------

def _gauss_legendre_box(integrand, box, nodes):
    """Tensor Gauss-Legendre over a box; integrand takes shape (dim, S)."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    pts, wts = [], []
    for lo, hi in box:
        half = 0.5 * (hi - lo)
        pts.append(lo + half * (xs + 1.0))
        wts.append(half * ws)
    grids = np.meshgrid(*pts, indexing="ij")
    wgrid = np.ones_like(grids[0])
    for k, wk in enumerate(np.meshgrid(*wts, indexing="ij")):
        wgrid = wgrid * wk
    U = np.array([g.ravel() for g in grids])
    vals, flagged = integrand(U)
    return float(np.sum(vals * wgrid.ravel())), flagged


def _quadrature(integrand, box, nodes):
    coarse, _ = _gauss_legendre_box(integrand, box, max(2, nodes // 2))
    fine, flagged = _gauss_legendre_box(integrand, box, nodes)
    return fine, abs(fine - coarse), flagged


def _chunk_sums(integrand, box, start, count, seed, stream):
    rng = np.random.Generator(np.random.Philox(key=seed + (stream << 64)))
    u = rng.random((box.shape[0], count))
    U = box[:, :1] + (box[:, 1:] - box[:, :1]) * u
    vals, flagged = integrand(U)
    return float(np.sum(vals)), float(np.sum(vals * vals)), flagged


def _monte_carlo(integrand, box, samples, seed, workers):
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    chunks = [(i, min(_CHUNK, samples - i * _CHUNK))
              for i in range(math.ceil(samples / _CHUNK))]
    task = lambda ch: _chunk_sums(integrand, box, ch[0] * _CHUNK, ch[1], seed, ch[0])
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(task, chunks))
    else:
        parts = [task(ch) for ch in chunks]
    s1 = np.sum([p[0] for p in parts])
    s2 = np.sum([p[1] for p in parts])
    flagged = int(sum(p[2] for p in parts))
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0) * samples / (samples - 1)
    return volume * mean, volume * math.sqrt(var / samples), flagged


def _estimate(integrand, box, cfg):
    if cfg.estimator == "tensor-quadrature":
        return _quadrature(integrand, box, cfg.nodes)
    return _monte_carlo(integrand, box, cfg.samples, cfg.seed, cfg.workers)


def _check_finite(vals, U):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise PartitionError(f"integrand overflow at {U[:, k].tolist()}")


# ---------------------------------------------------------------------------
# public estimators
# ---------------------------------------------------------------------------

def estimate_partition_hamiltonian(sys, cfg):
    """``Z_H = int prod dq dp exp(-beta H)`` over the configured box."""
    box = cfg.box(2 * sys.n)
    H = sys.H.func
    beta = cfg.beta

    def integrand(U):
        with np.errstate(over="ignore"):
            vals = np.exp(-beta * np.asarray(H(U), dtype=float)) * np.ones(U.shape[1])
        _check_finite(vals, U)
        return vals, 0

    value, err, _ = _estimate(integrand, box, cfg)
    tail = 0.0
    if cfg.bounds is None:
        tail = math.exp(-0.5 * beta * cfg.radius ** 2)
    return PartitionEstimate(value, err, cfg.estimator, beta,
                             cfg.seed if cfg.estimator == "monte-carlo" else None,
                             tail, None)


def _solvers(branches, n):
    if isinstance(branches, BranchSolver):
        return (branches,) * n
    branches = tuple(branches)
    if len(branches) != n:
        raise ValueError(f"need one branch solver per multiplet ({n})")
    return branches


def _multiplet_axes(nsys):
    # free axes (x, y) then the solved axis z, per multiplet
    return [tuple(b) for b in nsys.layout.blocks]


def estimate_partition_nambu(nsys, branches, cfg):
    """``Z_N = int prod dx dy dz delta(G~) exp(-beta H~)`` on the branches.

    Each multiplet must be a triplet ``(x, y, z)`` with ``z`` the solved
    coordinate.  When every solver has a region chart the integral runs on
    the charts; otherwise it runs on the ``(x, y)`` box given by
    ``cfg.bounds`` with the ``cfg.band`` exclusion around branch merges.
    """
    if nsys.arity != 3:
        raise ValueError("delta resolution is implemented for triplets")
    blocks = _multiplet_axes(nsys)
    n = len(blocks)
    solvers = _solvers(branches, n)
    beta = cfg.beta
    H = nsys.hamiltonian.func
    use_chart = all(s.chart is not None for s in solvers) and cfg.bounds is None

    if use_chart:
        box = np.concatenate([s.chart.bounds(cfg.radius) for s in solvers])
    else:
        box = cfg.box(2 * n)

    def integrand(U):
        S = U.shape[1]
        xs, ys, jac = [], [], np.ones(S)
        ok = np.ones(S, dtype=bool)
        for k, s in enumerate(solvers):
            u = U[2 * k:2 * k + 2]
            if use_chart:
                x, y, j = s.chart.to_xy(u)
                jac = jac * j
            else:
                x, y = u
            inside = s.region(x, y)
            if not use_chart and cfg.band > 0 and s.band is not None:
                inside = inside & (s.band(x, y) > cfg.band)
            ok &= inside
            xs.append(x)
            ys.append(y)
        # evaluate only admissible samples so branch roots stay real
        idx = np.flatnonzero(ok)
        total = np.zeros(S)
        flagged = 0
        if idx.size:
            per = [s.weights(xs[k][idx], ys[k][idx]) for k, s in enumerate(solvers)]
            W = np.zeros((nsys.dim, idx.size))
            for combo in product(*[range(s.count) for s in solvers]):
                weight = jac[idx].copy()
                for k, a in enumerate(combo):
                    z, wk = per[k][a]
                    bx, by, bz = blocks[k]
                    W[bx], W[by], W[bz] = xs[k][idx], ys[k][idx], z
                    weight = weight * wk
                vals = weight * np.exp(-beta * np.asarray(H(W), dtype=float))
                bad = ~np.isfinite(vals)
                flagged += int(np.count_nonzero(bad))
                vals[bad] = 0.0
                total[idx] += vals
        return total, flagged

    value, err, flagged = _estimate(integrand, box, cfg)
    excluded = 0.0
    if not use_chart and cfg.band > 0:
        excluded = _band_bound(solvers, nsys, cfg)
    elif use_chart and cfg.radius is not None:
        excluded = math.exp(-0.5 * beta * cfg.radius ** 2)
    count = int(np.prod([s.count for s in solvers]))
    return PartitionEstimate(value, err, cfg.estimator, beta,
                             cfg.seed if cfg.estimator == "monte-carlo" else None,
                             excluded, count, flagged)


def _band_bound(solvers, nsys, cfg):
    # single-multiplet systems only; product systems report nan
    if len(solvers) != 1 or solvers[0].band_mass is None:
        return float("nan")
    from scipy import integrate

    s = solvers[0]
    H = nsys.hamiltonian.func
    beta = cfg.beta

    def weight(x, y):
        total = 0.0
        for zf in s.branches:
            z = zf(np.array(x), np.array(y))
            g = s.constraint.grad_func(np.array([x, y, float(z)]))
            # the band integral works in chart measure; undo |dG/dz|^-1 there
            total += math.exp(-beta * float(H(np.array([x, y, float(z)])))) / abs(g[2]) \
                if abs(g[2]) > 0 else 0.0
        return total

    lo, hi = np.asarray(cfg.bounds, dtype=float).reshape(-1, 2)[1]
    inner = s.band_mass(cfg.band, weight)
    return integrate.quad(inner, max(lo, 0.0), hi, limit=200)[0]


@dataclass(frozen=True)
class NormalizationResult:
    ratio: float
    error: float
    branch_count: int
    predicted_ratio: float
    z_nambu: PartitionEstimate
    z_hamiltonian: PartitionEstimate

    def to_dict(self):
        d = asdict(self)
        return d


def normalization_factor(nsys, branches, sys, cfg, cfg_hamiltonian=None):
    """``Z_N / Z_H`` with propagated error.

    ``branch_count`` is the product of per-multiplet branch counts.
    ``predicted_ratio`` divides each count by the number of chart preimages
    of a generic ``(x, y)``, which is what the change of variables from
    ``(x, y)`` to ``(q, p)`` actually produces.
    """
    zn = estimate_partition_nambu(nsys, branches, cfg)
    zh = estimate_partition_hamiltonian(sys, cfg_hamiltonian or cfg)
    if zh.value == 0.0 or abs(zh.value) <= 3.0 * zh.stderr:
        raise PartitionError("degenerate denominator")
    ratio = zn.value / zh.value
    rel = math.hypot(zn.stderr / zn.value if zn.value else 0.0,
                     zh.stderr / zh.value)
    solvers = _solvers(branches, len(nsys.layout.blocks))
    predicted = float(np.prod([s.count / s.preimages for s in solvers]))
    return NormalizationResult(ratio, abs(ratio) * rel, zn.branch_count,
                               predicted, zn, zh)
