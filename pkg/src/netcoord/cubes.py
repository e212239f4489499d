"""Cube decomposition of torus lattices and percolation-style analysis.

The (M, m)-lattice is split into b x b node blocks ("small cubes") and
B x B blocks ("large cubes"), with b | B | M.  Per-cube statistics feed
the classification machinery:

* a cube is gamma-bad when its empirical threshold cdf exceeds the
  population P by more than gamma somewhere (exact decision: both are
  step functions of x, so the supremum is attained just right of a
  threshold or breakpoint);
* a cube is extraordinary when every agent in it has action 0 strictly
  dominant (threshold +inf);
* ``good_set_search`` looks for a connected set W of small cubes that
  covers a (1-gamma) fraction of the lattice, keeps node distance >= R
  from every bad cube, and contains a seed whose R-ball is entirely
  extraordinary;
* ``domination_check`` tests a(c) <= sigma(d(c, W) - R) + rho per cube.

Node distances are the torus Euclidean metric scaled by 1/m; set
distances are minima over node pairs, computed with an exact Euclidean
distance transform on a 3x3 tiling of the torus.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass
from io import StringIO

import numpy as np
from scipy import ndimage

from .contagion import ContagionWave
from .game import ShockProfile
from .network import LatticeSpec, lattice_ball_offsets
from .stepfn import StepFn

__all__ = [
    "CubePartition",
    "CubeReport",
    "GoodSet",
    "partition",
    "r_interior",
    "cube_empirical_cdf",
    "classify_bad",
    "extraordinary_cubes",
    "good_set_search",
    "domination_check",
    "cube_best_response_gap",
    "cube_means",
    "ball_fractions",
    "cube_report",
    "report_to_csv",
]


@dataclass(frozen=True)
class CubePartition:
    """Small/large cube decomposition of an (M, m)-lattice."""

    spec: LatticeSpec
    b: int
    B: int

    def __post_init__(self):
        M = self.spec.M
        if self.b < 1 or self.B % self.b != 0 or M % self.B != 0:
            raise ValueError("need the divisibility chain b | B | M")

    @property
    def M(self) -> int:
        return self.spec.M

    @property
    def m(self) -> int:
        return self.spec.m

    @property
    def small_side(self) -> int:
        return self.M // self.b

    @property
    def large_side(self) -> int:
        return self.M // self.B

    @property
    def k(self) -> int:
        return self.B // self.b

    @property
    def K(self) -> int:
        return self.M // self.B

    @property
    def n_small(self) -> int:
        return self.small_side**2

    @property
    def n_large(self) -> int:
        return self.large_side**2

    def node_grid(self, values: np.ndarray) -> np.ndarray:
        """View a per-node array (index x*M + y) as an (M, M) grid."""
        values = np.asarray(values)
        if values.size != self.M * self.M:
            raise ValueError("array size does not match the lattice")
        return values.reshape(self.M, self.M)

    def small_cube_of_node(self, node: int) -> int:
        x, y = divmod(int(node), self.M)
        return (x // self.b) * self.small_side + (y // self.b)

    def nodes_of_small(self, cube: int) -> np.ndarray:
        cx, cy = divmod(int(cube), self.small_side)
        xs = np.arange(cx * self.b, (cx + 1) * self.b)
        ys = np.arange(cy * self.b, (cy + 1) * self.b)
        return (xs[:, None] * self.M + ys[None, :]).ravel()

    def cube_grid(self, per_cube: np.ndarray) -> np.ndarray:
        per_cube = np.asarray(per_cube)
        return per_cube.reshape(self.small_side, self.small_side)


def partition(spec: LatticeSpec, b: int, B: int) -> CubePartition:
    """Exact partition; every node lies in one small and one large cube."""
    return CubePartition(spec=spec, b=b, B=B)


def cube_means(part: CubePartition, values: np.ndarray) -> np.ndarray:
    """Per-small-cube mean of a per-node array, cube-id order."""
    grid = part.node_grid(np.asarray(values, dtype=float))
    s, b = part.small_side, part.b
    return grid.reshape(s, b, s, b).mean(axis=(1, 3)).ravel()


def ball_fractions(part: CubePartition, a: np.ndarray) -> np.ndarray:
    """Per-node neighborhood fraction beta_i on the lattice, via a wrapped
    convolution with the radius-1 ball kernel (center excluded).

    Large kernels go through the FFT (exact circular convolution up to
    fp roundoff); small ones use direct convolution.
    """
    m, M = part.m, part.M
    grid = part.node_grid(np.asarray(a, dtype=float))
    offsets = lattice_ball_offsets(m)
    if m <= 8:
        size = 2 * m + 1
        kernel = np.zeros((size, size))
        for dx, dy in offsets:
            kernel[dx + m, dy + m] = 1.0
        summed = ndimage.convolve(grid, kernel, mode="wrap")
        return (summed / kernel.sum()).ravel()
    # The ball is symmetric under negation, so circular correlation
    # equals circular convolution with the same mask.
    kern = np.zeros((M, M))
    kern[offsets[:, 0] % M, offsets[:, 1] % M] = 1.0
    summed = np.fft.irfft2(np.fft.rfft2(grid) * np.fft.rfft2(kern), s=(M, M))
    return (summed / offsets.shape[0]).ravel()


def cube_empirical_cdf(part: CubePartition, shocks: ShockProfile, cube: int, x: float) -> float:
    """Strict-inequality empirical cdf (1/|c|) #{i in c : t_i < x}."""
    if not (0 <= cube < part.n_small):
        raise ValueError(f"invalid cube id {cube}")
    t = shocks.thresholds[part.nodes_of_small(cube)]
    return float(np.mean(t < x))


def _cube_bad_flag(t_sorted: np.ndarray, P: StepFn, gamma: float) -> bool:
    """Exact gamma-bad decision for one cube given sorted thresholds."""
    size = t_sorted.size
    finite = t_sorted[np.isfinite(t_sorted)]
    cand = np.unique(np.concatenate([finite, P.piece_positions, [0.0]]))
    cand = cand[(cand >= 0.0) & (cand < 1.0)]
    if cand.size:
        # Piece value just right of u: #{t <= u}/|c| - P(u).
        counts = np.searchsorted(t_sorted, cand, side="right")
        vals = counts / size - P.eval_array(cand)
        if np.max(vals) > gamma:
            return True
    # x = 1 is in the domain: #{t < 1}/|c| - P(1).
    at_one = np.searchsorted(t_sorted, 1.0, side="left") / size - P.top
    return bool(at_one > gamma)


def classify_bad(part: CubePartition, shocks: ShockProfile, P: StepFn, gamma: float) -> np.ndarray:
    """Per-small-cube gamma-bad flags (exact: sup over x attained at the
    cube's thresholds and P's breakpoints)."""
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    flags = np.zeros(part.n_small, dtype=bool)
    t = shocks.thresholds
    for c in range(part.n_small):
        tc = np.sort(t[part.nodes_of_small(c)])
        flags[c] = _cube_bad_flag(tc, P, gamma)
    return flags


def extraordinary_cubes(part: CubePartition, shocks: ShockProfile) -> np.ndarray:
    """Flags of cubes whose agents all have action 0 strictly dominant."""
    inf_grid = part.node_grid(np.isinf(shocks.thresholds))
    s, b = part.small_side, part.b
    return inf_grid.reshape(s, b, s, b).all(axis=(1, 3)).ravel()


# ---------------------------------------------------------- torus utilities


def _torus_edt(source_mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean node distance to the nearest True cell on the torus."""
    if not source_mask.any():
        return np.full(source_mask.shape, np.inf)
    tiled = np.tile(source_mask, (3, 3))
    dist = ndimage.distance_transform_edt(~tiled)
    M = source_mask.shape[0]
    return dist[M : 2 * M, M : 2 * M]


def _cube_min(part: CubePartition, node_grid: np.ndarray) -> np.ndarray:
    s, b = part.small_side, part.b
    return node_grid.reshape(s, b, s, b).min(axis=(1, 3)).ravel()


def _largest_component(mask_grid: np.ndarray) -> np.ndarray:
    """Largest 4-connected component on a torus grid of flags."""
    n = mask_grid.shape[0]
    seen = np.zeros_like(mask_grid, dtype=bool)
    best = np.zeros_like(mask_grid, dtype=bool)
    best_size = 0
    for sx in range(n):
        for sy in range(n):
            if not mask_grid[sx, sy] or seen[sx, sy]:
                continue
            comp = []
            queue = deque([(sx, sy)])
            seen[sx, sy] = True
            while queue:
                x, y = queue.popleft()
                comp.append((x, y))
                for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    nx, ny = (x + dx) % n, (y + dy) % n
                    if mask_grid[nx, ny] and not seen[nx, ny]:
                        seen[nx, ny] = True
                        queue.append((nx, ny))
            if len(comp) > best_size:
                best_size = len(comp)
                best = np.zeros_like(mask_grid, dtype=bool)
                for x, y in comp:
                    best[x, y] = True
    return best


def _is_connected(mask_grid: np.ndarray) -> bool:
    total = int(mask_grid.sum())
    if total == 0:
        return False
    return int(_largest_component(mask_grid).sum()) == total


@dataclass(frozen=True)
class GoodSet:
    """A (gamma, R)-good set: flags over small cubes plus the seed cube."""

    W: np.ndarray
    seed_cube: int
    conditions: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "found": True,
                "W_size": int(self.W.sum()),
                "seed_cube": int(self.seed_cube),
                "conditions": self.conditions,
            }
        )


def r_interior(part: CubePartition, U: np.ndarray, R: float) -> np.ndarray:
    """Small cubes at node distance > R from every node outside union(U).

    ``U`` flags large cubes, shape (K, K) or flat length K^2.
    """
    U = np.asarray(U, dtype=bool).reshape(part.large_side, part.large_side)
    outside_nodes = np.kron(~U, np.ones((part.B, part.B), dtype=bool))
    if outside_nodes.any():
        dist_out = _torus_edt(outside_nodes) / part.m
        cube_dist_out = _cube_min(part, dist_out)
    else:
        cube_dist_out = np.full(part.n_small, np.inf)
    return cube_dist_out > R


def good_set_search(
    part: CubePartition,
    shocks: ShockProfile,
    P: StepFn,
    gamma: float,
    R: float,
) -> GoodSet | None:
    """Search for a (gamma, R)-good set of small cubes.

    Marks large cubes clean (no gamma-bad small cube), takes the largest
    connected component U of clean large cubes, forms the R-interior
    W(U, R) of small cubes at node distance > R from everything outside
    U, and verifies the four conditions directly.  Absence is a value,
    not an error.
    """
    M, m = part.M, part.m
    bad = classify_bad(part, shocks, P, gamma)
    extra = extraordinary_cubes(part, shocks)
    s = part.small_side
    bad_grid = part.cube_grid(bad)
    # Large cube is clean iff no bad small cube inside.
    kk, Ks = part.k, part.large_side
    clean = ~bad_grid.reshape(Ks, kk, Ks, kk).any(axis=(1, 3))
    if not clean.any():
        return None
    U = _largest_component(clean)
    W = r_interior(part, U, R)
    if not W.any():
        return None
    conditions: dict[str, bool] = {}
    # (a) coverage.
    conditions["a"] = bool(W.sum() * part.b**2 >= (1.0 - gamma) * M * M)
    # (b) connectivity in the small-cube network.
    conditions["b"] = _is_connected(part.cube_grid(W))
    # (c) node distance from every bad cube to every W cube >= R.
    if bad.any():
        bad_nodes = np.zeros((M, M), dtype=bool)
        for c in np.nonzero(bad)[0]:
            cx, cy = divmod(int(c), s)
            bad_nodes[cx * part.b : (cx + 1) * part.b, cy * part.b : (cy + 1) * part.b] = True
        dist_bad = _torus_edt(bad_nodes) / m
        cube_dist_bad = _cube_min(part, dist_bad)
        conditions["c"] = bool(np.all(cube_dist_bad[W] >= R))
    else:
        conditions["c"] = True
    # (d) a seed c0 in W whose R-ball of cubes is entirely extraordinary.
    seed = -1
    if extra.any():
        nonextra_nodes = np.kron(part.cube_grid(~extra), np.ones((part.b, part.b), dtype=bool))
        if nonextra_nodes.any():
            dist_nonextra = _torus_edt(nonextra_nodes) / m
            cube_dist_ne = _cube_min(part, dist_nonextra)
        else:
            cube_dist_ne = np.full(part.n_small, np.inf)
        candidates = np.nonzero(W & (cube_dist_ne > R))[0]
        if candidates.size:
            seed = int(candidates[0])
    conditions["d"] = seed >= 0
    if all(conditions.values()):
        return GoodSet(W=W, seed_cube=seed, conditions=conditions)
    return None


def domination_check(
    part: CubePartition,
    a: np.ndarray,
    sigma: ContagionWave,
    W: np.ndarray,
    R: float,
    rho: float,
) -> tuple[bool, int | None]:
    """Check a(c) <= sigma(d(c, W) - R) + rho for every small cube.

    d(c, W) is the exact torus node metric between the cube and the
    union of W's cubes.  Returns (flag, first violating cube id).
    """
    W = np.asarray(W, dtype=bool)
    if W.size != part.n_small:
        raise ValueError("W must flag every small cube")
    if not W.any():
        raise ValueError("W must be nonempty")
    a_c = cube_means(part, a)
    w_nodes = np.kron(part.cube_grid(W), np.ones((part.b, part.b), dtype=bool))
    dist = _torus_edt(w_nodes) / part.m
    cube_dist = _cube_min(part, dist)
    sigma_vals = sigma.sigma_array(cube_dist - R)
    bad = a_c > sigma_vals + rho + 1e-12
    if bad.any():
        return False, int(np.nonzero(bad)[0][0])
    return True, None


def cube_best_response_gap(
    part: CubePartition,
    shocks: ShockProfile,
    P: StepFn,
    a: np.ndarray,
    gamma: float,
    rho: float,
    D: float = 4.0,
) -> np.ndarray:
    """Residual gamma + P(beta^a(c) + D rho) - a(c) per gamma-good cube.

    Bad cubes get NaN (the bound's scope is good cubes).  A negative
    residual on a good cube for generous D flags an inconsistency.
    """
    bad = classify_bad(part, shocks, P, gamma)
    a_c = cube_means(part, a)
    beta_c = cube_means(part, ball_fractions(part, a))
    arg = np.clip(beta_c + D * rho, 0.0, 1.0)
    res = gamma + P.eval_array(arg) - a_c
    res[bad] = np.nan
    return res


@dataclass(frozen=True)
class CubeReport:
    """Per-small-cube summary statistics."""

    part: CubePartition
    a_c: np.ndarray
    beta_c: np.ndarray
    bad: np.ndarray
    extraordinary: np.ndarray
    inf_share: np.ndarray
    median_threshold: np.ndarray


def cube_report(
    part: CubePartition,
    shocks: ShockProfile,
    P: StepFn,
    a: np.ndarray,
    gamma: float,
) -> CubeReport:
    t_grid = part.node_grid(shocks.thresholds)
    s, b = part.small_side, part.b
    blocks = t_grid.reshape(s, b, s, b).transpose(0, 2, 1, 3).reshape(s * s, b * b)
    finite = np.isfinite(blocks)
    inf_share = 1.0 - finite.mean(axis=1)
    med = np.full(blocks.shape[0], np.nan)
    rows = finite.any(axis=1)
    if rows.any():
        masked = np.where(finite[rows], blocks[rows], np.nan)
        med[rows] = np.nanmedian(masked, axis=1)
    return CubeReport(
        part=part,
        a_c=cube_means(part, a),
        beta_c=cube_means(part, ball_fractions(part, a)),
        bad=classify_bad(part, shocks, P, gamma),
        extraordinary=extraordinary_cubes(part, shocks),
        inf_share=inf_share,
        median_threshold=med,
    )


def report_to_csv(report: CubeReport) -> str:
    out = StringIO()
    writer = csv.writer(out)
    writer.writerow(["cube_x", "cube_y", "a_c", "beta_c", "bad", "extraordinary"])
    s = report.part.small_side
    for c in range(report.part.n_small):
        cx, cy = divmod(c, s)
        writer.writerow(
            [
                cx,
                cy,
                f"{report.a_c[c]:.12g}",
                f"{report.beta_c[c]:.12g}",
                int(report.bad[c]),
                int(report.extraordinary[c]),
            ]
        )
    return out.getvalue()
