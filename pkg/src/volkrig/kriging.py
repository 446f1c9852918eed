"""Universal kriging (kriging with external drift) over voxel neighborhoods.

A missing voxel is predicted as a weighted sum of known voxels from an
axis-aligned window around it. Weights come from the extended covariance
system: the covariance block is derived from a fitted variogram, the drift
block enforces unbiasedness constraints (sum of weights reproduces every
drift function at the target), and the solved vector carries both the
weights and the Lagrange multipliers.

Two facts shape the implementation:

* weights depend only on the geometry of the neighbor set relative to the
  target, never on the values, so solved systems are cached by the tuple of
  relative neighbor offsets and reused across the whole grid;
* when the missing voxels form whole planes between known slice planes
  (the production case), all interior voxels of one missing plane share a
  single stencil, which is applied with vectorized shifted-array sums.

Predictions read only originally-known voxels. This keeps the fill
order-independent and therefore safe to parallelize across any partition
of the missing set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import (DegenerateLags, InsufficientSamples, NoKnownNeighbors,
                     SingularSystem)
from .model import VolumeGrid

VARIOGRAM_KINDS = ("exponential", "gaussian", "spherical")

# Window growth schedule: (in-plane half-span source, z extent). The first
# entry is the base 4x4x4 window; widening extends reach in z first (known
# data lives in whole planes), then in-plane as a last resort.
_WINDOW_SCHEDULE = ((4, 4), (4, 8), (4, 16), (8, 16), (16, 16))
_CONSTRAINT_TOL = 1e-8


@dataclass
class VariogramModel:
    """Isotropic variogram: nugget + (sill - nugget) * shape(h / range)."""

    kind: str
    nugget: float
    sill: float
    range_len: float

    def __post_init__(self):
        if self.kind not in VARIOGRAM_KINDS:
            raise ValueError(f"kind must be one of {VARIOGRAM_KINDS}")
        if self.nugget < 0 or self.sill < self.nugget or self.range_len <= 0:
            raise ValueError("need 0 <= nugget <= sill and range_len > 0")

    def gamma(self, h):
        """Semivariance at lag h (gamma(0) = 0; the nugget is the h->0 limit)."""
        h = np.asarray(h, dtype=np.float64)
        psill = self.sill - self.nugget
        r = self.range_len
        if self.kind == "exponential":
            shape = 1.0 - np.exp(-3.0 * h / r)
        elif self.kind == "gaussian":
            shape = 1.0 - np.exp(-3.0 * (h / r) ** 2)
        else:  # spherical
            hr = np.minimum(h / r, 1.0)
            shape = 1.5 * hr - 0.5 * hr ** 3
        out = self.nugget + psill * shape
        return np.where(h == 0.0, 0.0, out)

    def covariance(self, h):
        """Stationary covariance C(h) = sill - gamma(h), so C(0) = sill.

        A degenerate all-zero model (constant field) is treated as unit
        white noise so the kriging system stays solvable; predictions then
        reduce to the drift fit, which reproduces the constant exactly.
        """
        h = np.asarray(h, dtype=np.float64)
        if self.sill <= 0.0:
            return np.where(h == 0.0, 1.0, 0.0)
        return self.sill - self.gamma(h)


def linear_drift(rel: np.ndarray) -> np.ndarray:
    """Drift design matrix {1, x, y, z} on target-relative coordinates."""
    n = len(rel)
    return np.column_stack([np.ones(n), rel[:, 0], rel[:, 1], rel[:, 2]])


def constant_drift(rel: np.ndarray) -> np.ndarray:
    return np.ones((len(rel), 1))


_DRIFTS = {"linear": linear_drift, "constant": constant_drift}


def resolve_drift(drift):
    if callable(drift):
        return drift
    try:
        return _DRIFTS[drift]
    except KeyError:
        raise ValueError(f"unknown drift {drift!r}") from None


@dataclass
class KrigingSystem:
    """One prediction system: neighbors, drift, extended matrix, solution.

    ``extended_matrix`` is the (n+p+1) x (n+p+1) symmetric block matrix
    [[C, Q], [Q^T, 0]] and ``rhs`` the stacked [c0, q0]. ``weights`` and
    ``lagrange`` are populated by :func:`solve_ked`.
    """

    neighbor_coords: np.ndarray
    neighbor_values: np.ndarray
    target: np.ndarray
    drift_at_neighbors: np.ndarray
    drift_at_target: np.ndarray
    extended_matrix: np.ndarray
    rhs: np.ndarray
    weights: np.ndarray | None = None
    lagrange: np.ndarray | None = None
    variance: float | None = None

    @property
    def n_neighbors(self) -> int:
        return len(self.neighbor_coords)

    def predict(self) -> float:
        if self.weights is None:
            raise ValueError("system not solved yet")
        return float(self.weights @ self.neighbor_values)

    def constraint_residual(self) -> float:
        if self.weights is None:
            raise ValueError("system not solved yet")
        r = self.drift_at_neighbors.T @ self.weights - self.drift_at_target
        return float(np.max(np.abs(r))) if len(r) else 0.0


def _independent_columns(Q: np.ndarray) -> list[int]:
    """Indices of drift columns to keep: the constant plus every column not
    (numerically) in the span of those already kept."""
    kept = [0]
    for j in range(1, Q.shape[1]):
        A = Q[:, kept]
        col = Q[:, j]
        coef, *_ = np.linalg.lstsq(A, col, rcond=None)
        resid = col - A @ coef
        if np.linalg.norm(resid) > 1e-9 * (np.linalg.norm(col) + 1.0):
            kept.append(j)
    return kept


def build_system(neighbor_coords, neighbor_values, target,
                 model: VariogramModel, drift="linear") -> KrigingSystem:
    """Assemble the extended covariance system for one target location.

    Drift functions are evaluated on coordinates relative to the target
    (better conditioning, same span). Columns that are linearly dependent
    on the ones before them are dropped; this happens e.g. when every known
    neighbor lies on a single slice plane, where a z-drift constraint would
    be infeasible.
    """
    coords = np.asarray(neighbor_coords, dtype=np.float64).reshape(-1, 3)
    values = np.asarray(neighbor_values, dtype=np.float64).reshape(-1)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    if len(coords) == 0:
        raise NoKnownNeighbors("cannot build a system with zero neighbors")
    drift_fn = resolve_drift(drift)

    rel = coords - target
    Q = np.asarray(drift_fn(rel), dtype=np.float64)
    if Q.ndim == 1:
        Q = Q[:, None]
    q0 = np.asarray(drift_fn(np.zeros((1, 3))), dtype=np.float64).reshape(-1)
    kept = _independent_columns(Q)
    Q = Q[:, kept]
    q0 = q0[kept]

    diff = rel[:, None, :] - rel[None, :, :]
    h = np.sqrt(np.sum(diff * diff, axis=-1))
    C = model.covariance(h)
    c0 = model.covariance(np.sqrt(np.sum(rel * rel, axis=-1)))

    n = len(coords)
    p1 = Q.shape[1]
    A = np.zeros((n + p1, n + p1))
    A[:n, :n] = C
    A[:n, n:] = Q
    A[n:, :n] = Q.T
    b = np.concatenate([c0, q0])
    return KrigingSystem(coords, values, target, Q, q0, A, b)


def solve_ked(system: KrigingSystem) -> KrigingSystem:
    """Solve for weights and Lagrange multipliers in place (and return it).

    On a singular or constraint-violating solve, a small ridge is added to
    the covariance block and the solve retried once before failing.
    """
    n = system.n_neighbors
    A = system.extended_matrix
    b = system.rhs

    def attempt(mat):
        try:
            sol = np.linalg.solve(mat, b)
        except np.linalg.LinAlgError:
            return None
        if not np.isfinite(sol).all():
            return None
        return sol

    sol = attempt(A)
    if sol is not None:
        system.weights = sol[:n]
        system.lagrange = sol[n:]
        if system.constraint_residual() > _CONSTRAINT_TOL:
            sol = None
    if sol is None:
        trace = np.trace(A[:n, :n])
        ridge = max(1e-10 * trace / n, 1e-12)
        A2 = A.copy()
        A2[:n, :n] += ridge * np.eye(n)
        sol = attempt(A2)
        if sol is None:
            raise SingularSystem("extended kriging matrix is singular")
        system.weights = sol[:n]
        system.lagrange = sol[n:]
        if system.constraint_residual() > _CONSTRAINT_TOL:
            raise SingularSystem(
                "unbiasedness constraints unsatisfiable "
                f"(residual {system.constraint_residual():.2e})")
    c0 = system.rhs[:n]
    q0 = system.rhs[n:]
    # C(0) equals the diagonal of the covariance block
    cov0 = float(A[0, 0])
    system.variance = float(
        cov0 - system.weights @ c0 - system.lagrange @ q0)
    return system


# --- variogram fitting --------------------------------------------------------


def _as_coord_value_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 2:
        coords, values = samples
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
    else:
        coords = np.asarray([s[0] for s in samples], dtype=np.float64)
        values = np.asarray([s[1] for s in samples], dtype=np.float64)
    if len(coords) != len(values):
        raise ValueError("coords and values must align")
    return coords, values


def fit_variogram(samples, kind: str = "exponential", n_bins: int = 15,
                  max_pairs: int = 100_000, seed: int = 0) -> VariogramModel:
    """Fit a variogram model to (coordinate, value) samples.

    Empirical semivariances are computed on at most ``n_bins`` equal-width
    lag bins (pairs subsampled deterministically above ``max_pairs``) and
    the model parameters fitted by count-weighted least squares.
    """
    coords, values = _as_coord_value_arrays(samples)
    m = len(values)
    if m * (m - 1) // 2 < 30:
        raise InsufficientSamples(
            f"{m} samples give {m * (m - 1) // 2} pairs; need >= 30")

    rng = np.random.default_rng(seed)
    total_pairs = m * (m - 1) // 2
    if total_pairs <= max_pairs:
        ii, jj = np.triu_indices(m, k=1)
    else:
        ii = rng.integers(0, m, size=max_pairs)
        jj = rng.integers(0, m, size=max_pairs)
        keep = ii != jj
        ii, jj = ii[keep], jj[keep]

    d = coords[ii] - coords[jj]
    lags = np.sqrt(np.sum(d * d, axis=-1))
    if not (lags > 0).any():
        raise DegenerateLags("all sample pairs are co-located")
    sq = 0.5 * (values[ii] - values[jj]) ** 2

    svar = float(values.var())
    if svar == 0.0:
        # constant field: documented degenerate model
        return VariogramModel(kind, 0.0, 0.0, max(float(lags.max()), 1.0))

    pos = lags > 0
    lags, sq = lags[pos], sq[pos]
    hmax = float(lags.max())
    edges = np.linspace(0.0, hmax, n_bins + 1)
    which = np.clip(np.digitize(lags, edges) - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    gamma_sum = np.bincount(which, weights=sq, minlength=n_bins)
    nz = counts > 0
    bin_h = 0.5 * (edges[:-1] + edges[1:])[nz]
    bin_gamma = gamma_sum[nz] / counts[nz]
    bin_w = np.sqrt(counts[nz].astype(np.float64))

    def gamma_of(params, h):
        nugget, psill, rng_len = params
        mdl = VariogramModel(kind, max(nugget, 0.0),
                             max(nugget, 0.0) + max(psill, 0.0),
                             max(rng_len, 1e-6))
        return mdl.gamma(h)

    def resid(params):
        return bin_w * (gamma_of(params, bin_h) - bin_gamma)

    x0 = np.array([0.0, svar, hmax / 3.0])
    bounds = ([0.0, 0.0, 1e-6], [2.0 * svar + 1e-12, 4.0 * svar + 1e-12,
                                 10.0 * hmax])
    fit = scipy.optimize.least_squares(resid, x0, bounds=bounds, method="trf")
    nugget, psill, rng_len = fit.x
    nugget = float(max(nugget, 0.0))
    return VariogramModel(kind, nugget, nugget + float(max(psill, 0.0)),
                          float(max(rng_len, 1e-6)))


# --- voxel interpolation ------------------------------------------------------


def _window_bounds(c: int, extent: int, size: int) -> tuple[int, int]:
    """Half-open clamped bounds of a window of ``extent`` voxels at ``c``.

    The window covers [c - (extent/2 - 1), c + extent/2], i.e. the target
    sits in the low-center cell.
    """
    lo = max(0, c - (extent // 2 - 1))
    hi = min(size, c + extent // 2 + 1)
    return lo, hi


def _gather_window(grid: VolumeGrid, x: int, y: int, z: int,
                   inplane: int, z_extent: int):
    dz, dy, dx = grid.data.shape
    x0, x1 = _window_bounds(x, inplane, dx)
    y0, y1 = _window_bounds(y, inplane, dy)
    z0, z1 = _window_bounds(z, z_extent, dz)
    sub_known = ~grid.missing_mask[z0:z1, y0:y1, x0:x1]
    if not sub_known.any():
        return None
    kz, ky, kx = np.nonzero(sub_known)
    coords = np.column_stack([kx + x0, ky + y0, kz + z0])
    values = grid.data[kz + z0, ky + y0, kx + x0].astype(np.float64)
    return coords, values


def _bracketed(coords_z: np.ndarray, z: int) -> bool:
    return bool((coords_z < z).any() and (coords_z > z).any())


class _WeightCache:
    """Solved weights keyed by the canonical relative-offset signature."""

    def __init__(self, model: VariogramModel, drift):
        self.model = model
        self.drift = drift
        self._store: dict[bytes, tuple[np.ndarray, float]] = {}

    def weights_for(self, rel: np.ndarray) -> tuple[np.ndarray, float]:
        key = rel.astype(np.int16).tobytes()
        hit = self._store.get(key)
        if hit is None:
            system = build_system(rel, np.zeros(len(rel)), (0.0, 0.0, 0.0),
                                  self.model, self.drift)
            solve_ked(system)
            hit = (system.weights, system.variance)
            self._store[key] = hit
        return hit


def interpolate_voxel(grid: VolumeGrid, target, model: VariogramModel,
                      drift="linear", inplane: int = 4, z_extent: int = 4,
                      clamp_range: tuple[float, float] | None = None) -> float:
    """Predict one missing voxel from the known voxels of its window.

    The base window is the 4x4x4 box whose low-center cell contains the
    target, clamped at the volume borders. The result is clamped to the
    grid's known-value range.
    """
    x, y, z = (int(v) for v in target)
    if not grid.missing_mask[z, y, x]:
        return float(grid.data[z, y, x])
    got = _gather_window(grid, x, y, z, inplane, z_extent)
    if got is None:
        raise NoKnownNeighbors(f"no known voxel near {(x, y, z)}")
    coords, values = got
    system = solve_ked(build_system(coords, values, (x, y, z), model, drift))
    pred = system.predict()
    if clamp_range is None:
        known = grid.data[~grid.missing_mask]
        clamp_range = (float(known.min()), float(known.max()))
    return float(np.clip(pred, clamp_range[0], clamp_range[1]))


def _predict_generic(grid: VolumeGrid, out: np.ndarray, cache: _WeightCache,
                     lo: float, hi: float, targets,
                     var_out: np.ndarray | None = None):
    """Per-voxel path: window schedule, cached weights, clamped prediction."""
    for (z, y, x) in targets:
        chosen = None
        for inplane, z_extent in _WINDOW_SCHEDULE:
            got = _gather_window(grid, x, y, z, inplane, z_extent)
            if got is None:
                continue
            coords, values = got
            # keep widening in z until the known set brackets the target
            if _bracketed(coords[:, 2], z) or z_extent == 16:
                chosen = (coords, values)
                break
        if chosen is None:
            raise NoKnownNeighbors(f"no known voxel near {(x, y, z)}")
        coords, values = chosen
        rel = coords - np.array([x, y, z])
        w, var = cache.weights_for(rel)
        pred = float(w @ values)
        out[z, y, x] = min(max(pred, lo), hi)
        if var_out is not None:
            var_out[z, y, x] = var


def _plane_structured(mask: np.ndarray) -> np.ndarray | None:
    """Per-plane missing flags if every z-plane is all-known or all-missing."""
    flat = mask.reshape(mask.shape[0], -1)
    any_missing = flat.any(axis=1)
    all_missing = flat.all(axis=1)
    if np.array_equal(any_missing, all_missing):
        return any_missing
    return None


def _choose_plane_window(z: int, known_zs: np.ndarray, dz_total: int):
    """Known planes used for one missing plane, following the z schedule."""
    best = None
    for _, z_extent in ((0, 4), (0, 8), (0, 16)):
        z0, z1 = _window_bounds(z, z_extent, dz_total)
        planes = known_zs[(known_zs >= z0) & (known_zs < z1)]
        if len(planes) == 0:
            continue
        best = planes
        if _bracketed(planes, z):
            break
    return best


def fill_missing(grid: VolumeGrid, model: VariogramModel, drift="linear",
                 return_variance: bool = False):
    """Fill every missing voxel of a grid by kriging from known voxels only.

    Known voxels pass through bit-exactly. Predictions never read other
    predictions, so the scan order is irrelevant to the values; a fixed
    raster order is used anyway for reproducible error reporting. Missing
    whole-plane grids (the production layout) take a vectorized stencil
    path; arbitrary masks fall back to the per-voxel path.
    """
    grid.validate()
    if grid.is_dense():
        out_grid = grid.copy()
        if return_variance:
            return out_grid, np.zeros_like(grid.data, dtype=np.float64)
        return out_grid

    known_vals = grid.data[~grid.missing_mask]
    if known_vals.size == 0:
        raise NoKnownNeighbors("grid has no known voxels at all")
    lo = float(known_vals.min())
    hi = float(known_vals.max())

    out = grid.data.copy()
    var_out = np.zeros_like(grid.data, dtype=np.float64) if return_variance else None
    cache = _WeightCache(model, drift)

    plane_missing = _plane_structured(grid.missing_mask)
    if plane_missing is not None:
        _fill_plane_structured(grid, out, plane_missing, cache, lo, hi, var_out)
    else:
        targets = np.argwhere(grid.missing_mask)
        _predict_generic(grid, out, cache, lo, hi, targets, var_out)

    out_grid = VolumeGrid(out, np.zeros_like(grid.missing_mask),
                          grid.origin_offset)
    if return_variance:
        return out_grid, var_out
    return out_grid


def _fill_plane_structured(grid: VolumeGrid, out: np.ndarray,
                           plane_missing: np.ndarray, cache: _WeightCache,
                           lo: float, hi: float,
                           var_out: np.ndarray | None):
    dz, dy, dx = grid.data.shape
    known_zs = np.nonzero(~plane_missing)[0]
    data = grid.data
    # (dz pattern, clamped in-plane offsets) -> solved weights; avoids
    # rebuilding the offset list for every border voxel
    border_cache: dict[tuple, tuple[np.ndarray, float]] = {}

    for z in np.nonzero(plane_missing)[0]:
        planes = _choose_plane_window(int(z), known_zs, dz)
        if planes is None:
            raise NoKnownNeighbors(f"no known plane within reach of z={z}")
        dzs = [int(p) - int(z) for p in planes]

        # interior stencil: in-plane offsets -1..2 stay in bounds
        if dx >= 4 and dy >= 4:
            rel = np.array([(ox, oy, oz)
                            for oz in dzs
                            for oy in range(-1, 3)
                            for ox in range(-1, 3)], dtype=np.int64)
            w, var = cache.weights_for(rel)
            acc = np.zeros((dy - 3, dx - 3), dtype=np.float64)
            for wi, (ox, oy, oz) in zip(w, rel):
                zp = z + oz
                acc += wi * data[zp, 1 + oy:dy - 2 + oy, 1 + ox:dx - 2 + ox]
            np.clip(acc, lo, hi, out=acc)
            out[z, 1:dy - 2, 1:dx - 2] = acc
            if var_out is not None:
                var_out[z, 1:dy - 2, 1:dx - 2] = var
            border = [(z, y, x)
                      for y in range(dy) for x in range(dx)
                      if not (1 <= y <= dy - 3 and 1 <= x <= dx - 3)]
        else:
            border = [(z, y, x) for y in range(dy) for x in range(dx)]

        # border voxels: clamped in-plane windows over the same known planes
        dz_key = tuple(dzs)
        for (zz, y, x) in border:
            x0, x1 = _window_bounds(x, 4, dx)
            y0, y1 = _window_bounds(y, 4, dy)
            key = (dz_key, x0 - x, x1 - x, y0 - y, y1 - y)
            hit = border_cache.get(key)
            if hit is None:
                rel = np.array([(ox - x, oy - y, oz)
                                for oz in dzs
                                for oy in range(y0, y1)
                                for ox in range(x0, x1)], dtype=np.int64)
                hit = cache.weights_for(rel)
                border_cache[key] = hit
            w, var = hit
            vals = np.concatenate(
                [data[zz + oz, y0:y1, x0:x1].ravel() for oz in dzs])
            pred = float(w @ vals)
            out[zz, y, x] = min(max(pred, lo), hi)
            if var_out is not None:
                var_out[zz, y, x] = var
