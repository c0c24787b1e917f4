"""Distance-regularized level-set evolution with a magnetic-barrier edge map.

The boundary refinement evolves a signed field phi (negative inside holes)
under three forces: a double-well distance regularizer that keeps phi close
to a signed distance function, an edge-attraction term driven by a stopping
function computed from the smoothed EUV gradient, and a balloon (area) term
whose sign sets growth (<0) or shrinkage (>0).  The stopping function is
zeroed along magnetic neutral lines, which blocks the front from crossing a
polarity boundary.

Grid topology: periodic in longitude, replicated edges (zero normal
derivative) at the latitude boundaries.  All derivatives are central
differences on that padding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalError
from .maps import Label, SegmentationMask, SynopticMap, label_components
from .geometry import GridSpec

SIGMA_BOUNDS = (0.2, 1.0)
ALPHA_BOUNDS = (-3.0, 3.0)


@dataclass(frozen=True)
class LevelSetParams:
    """Evolution parameters.

    ``timestep * mu`` must stay below 0.25 for the explicit regularizer
    update to remain stable.  ``alpha`` and ``sigma`` are the two tunable
    knobs (balloon weight and pre-smoothing width in pixels); both are kept
    inside the documented optimization bounds.
    """

    mu: float = 0.2
    lam: float = 5.0
    alpha: float = 0.8
    epsilon: float = 1.5
    sigma: float = 1.0
    timestep: float = 1.0
    n_iters: int = 300
    kernel: int = 15
    init_level: float = 2.0

    def __post_init__(self):
        if not (self.timestep > 0 and self.timestep * self.mu < 0.25):
            raise ValueError("require timestep > 0 and timestep * mu < 0.25")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (ALPHA_BOUNDS[0] <= self.alpha <= ALPHA_BOUNDS[1]):
            raise ValueError(f"alpha must lie in {ALPHA_BOUNDS}")
        if not (SIGMA_BOUNDS[0] <= self.sigma <= SIGMA_BOUNDS[1]):
            raise ValueError(f"sigma must lie in {SIGMA_BOUNDS}")
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ValueError("kernel must be an odd size >= 3")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")
        if self.init_level <= 0:
            raise ValueError("init_level must be positive")


@dataclass(frozen=True, eq=False)
class LevelSetField:
    phi: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        if self.phi.shape != self.grid.shape:
            raise ValueError("phi shape does not match grid")


# ---------------------------------------------------------------------------
# Stencils: periodic in longitude (axis 1), replicate in latitude (axis 0)
# ---------------------------------------------------------------------------


def _pad1(f: np.ndarray) -> np.ndarray:
    p = np.pad(f, ((1, 1), (0, 0)), mode="edge")
    return np.pad(p, ((0, 0), (1, 1)), mode="wrap")


def grad(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient (d/drow, d/dcol)."""
    p = _pad1(f)
    fy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    fx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    return fy, fx


def div(fy: np.ndarray, fx: np.ndarray) -> np.ndarray:
    py = _pad1(fy)
    px = _pad1(fx)
    return (py[2:, 1:-1] - py[:-2, 1:-1]) / 2.0 + (px[1:-1, 2:] - px[1:-1, :-2]) / 2.0


def laplacian(f: np.ndarray) -> np.ndarray:
    p = _pad1(f)
    return p[2:, 1:-1] + p[:-2, 1:-1] + p[1:-1, 2:] + p[1:-1, :-2] - 4.0 * f


def _gaussian_kernel_1d(sigma: float, size: int) -> np.ndarray:
    radius = size // 2
    xs = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-(xs**2) / (2.0 * sigma**2))
    return w / w.sum()


def gaussian_smooth(field: np.ndarray, sigma: float, kernel: int = 15) -> np.ndarray:
    """Separable truncated-Gaussian smoothing, unit-sum kernel.

    Equivalent to convolving with the kernel x kernel outer-product window
    normalized to one, with wrap padding in longitude and edge replication
    in latitude.
    """
    w = _gaussian_kernel_1d(sigma, kernel)
    radius = kernel // 2
    p = np.pad(field.astype(float), ((radius, radius), (0, 0)), mode="edge")
    out = np.zeros_like(field, dtype=float)
    for k, wk in enumerate(w):
        out += wk * p[k : k + field.shape[0], :]
    p = np.pad(out, ((0, 0), (radius, radius)), mode="wrap")
    out = np.zeros_like(field, dtype=float)
    for k, wk in enumerate(w):
        out += wk * p[:, k : k + field.shape[1]]
    return out


# ---------------------------------------------------------------------------
# Edge / barrier maps
# ---------------------------------------------------------------------------


def edge_function(euv: SynopticMap, sigma: float, kernel: int = 15) -> np.ndarray:
    """Gradient stopping function g = 1 / (1 + |grad(G * I)|^2), in (0, 1]."""
    if not (SIGMA_BOUNDS[0] <= sigma <= SIGMA_BOUNDS[1]):
        raise ValueError(f"sigma must lie in {SIGMA_BOUNDS}")
    smoothed = gaussian_smooth(euv.values, sigma, kernel)
    gy, gx = grad(smoothed)
    return 1.0 / (1.0 + gx**2 + gy**2)


def neutral_line_mask(mag: SynopticMap, smooth_sigma: float = 1.0, kernel: int = 15) -> np.ndarray:
    """Pixels adjacent to a sign change of the lightly smoothed flux.

    Both members of every 4-neighbor pair whose smoothed flux values have
    opposite signs are marked, making the barrier two pixels thick.  The
    neighborhood wraps in longitude, so a polarity reversal across the map
    seam is a neutral line like any other.  Unobserved pixels are unmarked.
    """
    s = gaussian_smooth(mag.values, smooth_sigma, kernel)
    p = np.zeros(s.shape, dtype=bool)
    cross_e = s * np.roll(s, -1, axis=1) < 0  # pixel and its eastern neighbor
    p |= cross_e
    p |= np.roll(cross_e, 1, axis=1)
    cross_s = s[:-1, :] * s[1:, :] < 0
    p[:-1, :] |= cross_s
    p[1:, :] |= cross_s
    p[~mag.observed] = False
    return p


def barrier_edge(g: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Zero the stopping function on neutral-line pixels: (1 - p) * g."""
    if g.shape != p.shape:
        raise ValueError("edge map and barrier mask must share a shape")
    return (1.0 - p.astype(float)) * g


# ---------------------------------------------------------------------------
# Evolution
# ---------------------------------------------------------------------------


def dirac(phi: np.ndarray, epsilon: float) -> np.ndarray:
    """Smoothed delta: (1/2e)(1 + cos(pi x / e)) inside |x| <= e, else 0."""
    band = np.abs(phi) <= epsilon
    return np.where(
        band, (1.0 / (2.0 * epsilon)) * (1.0 + np.cos(np.pi * phi / epsilon)), 0.0
    )


def distance_regularizer(phi: np.ndarray) -> np.ndarray:
    """div(d(|grad phi|) grad phi) for the double-well potential.

    The well at |grad phi| = 1 maintains a signed-distance profile near the
    front; the well at 0 keeps far-field regions flat.  Computed as
    div((d - 1) grad phi) + laplacian(phi) for stability.
    """
    fy, fx = grad(phi)
    s = np.sqrt(fx**2 + fy**2)
    small = s <= 1.0
    ps = np.where(small, np.sin(2.0 * np.pi * s) / (2.0 * np.pi), s - 1.0)
    dps = np.where(s == 0.0, 1.0, ps / np.where(s == 0.0, 1.0, s))
    return div((dps - 1.0) * fy, (dps - 1.0) * fx) + laplacian(phi)


def evolve(phi0: LevelSetField, pg: np.ndarray, params: LevelSetParams) -> LevelSetField:
    """Run n_iters explicit Euler steps of the full evolution equation."""
    if pg.shape != phi0.phi.shape:
        raise ValueError("pg shape does not match phi")
    if pg.min() < 0.0 or pg.max() > 1.0:
        raise ValueError("pg values must lie in [0, 1]")
    phi = phi0.phi.astype(float).copy()
    pg_y, pg_x = grad(pg)
    eps_norm = 1e-10
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(params.n_iters):
            fy, fx = grad(phi)
            s = np.sqrt(fx**2 + fy**2)
            nx = fx / (s + eps_norm)
            ny = fy / (s + eps_norm)
            curvature = div(ny, nx)
            delta = dirac(phi, params.epsilon)
            f_dist = distance_regularizer(phi)
            f_edge = delta * (pg_x * nx + pg_y * ny + pg * curvature)
            f_area = pg * delta
            phi = phi + params.timestep * (
                params.mu * f_dist + params.lam * f_edge + params.alpha * f_area
            )
            if not np.isfinite(phi).all():
                raise NumericalError(
                    f"level-set evolution produced non-finite values at iteration {it}"
                )
    return LevelSetField(phi=phi, grid=phi0.grid)


def init_phi(init: SegmentationMask, level: float = 2.0) -> LevelSetField:
    """Binary step initialization: -level inside hole pixels, +level outside."""
    phi = np.where(init.hole_mask(), -level, level).astype(float)
    return LevelSetField(phi=phi, grid=init.grid)


def segment(
    euv: SynopticMap,
    mag: SynopticMap,
    init: SegmentationMask,
    params: LevelSetParams,
) -> SegmentationMask:
    """Full boundary refinement of an initial mask.

    Builds the barrier edge map, evolves phi from the binary init, then
    labels phi < 0 pixels by component with the sign of the component's
    mean flux (zero-mean components are dropped as non-unipolar).
    Unobserved regions never enter the result.
    """
    if not (euv.grid == mag.grid == init.grid):
        raise ValueError("EUV, magnetic, and init grids must match")
    labels = np.full(euv.grid.shape, Label.BACKGROUND, dtype=np.uint8)
    labels[~euv.observed] = Label.NO_OBSERVATION
    if not init.hole_mask().any():
        return SegmentationMask(grid=euv.grid, labels=labels)
    g = edge_function(euv, params.sigma, params.kernel)
    p = neutral_line_mask(mag, kernel=params.kernel)
    pg = barrier_edge(g, p)
    field = evolve(init_phi(init, params.init_level), pg, params)
    hole = (field.phi < 0) & euv.observed
    comp, n = label_components(hole)
    for comp_id in range(1, n + 1):
        member = comp == comp_id
        mean_flux = float(mag.values[member].mean())
        if mean_flux == 0.0:
            continue
        labels[member] = Label.POSITIVE if mean_flux > 0 else Label.NEGATIVE
    return SegmentationMask(grid=euv.grid, labels=labels)


# ---------------------------------------------------------------------------
# Quality metric and parameter tuning
# ---------------------------------------------------------------------------


def sens_spec(result: SegmentationMask, truth: SegmentationMask) -> tuple[float, float, float]:
    """Pixel sensitivity/specificity and distance from the ideal (1, 1).

    Hole labels are polarity-agnostic; pixels unobserved in either mask are
    excluded.  Raises when the truth has no hole pixels (sensitivity would
    be undefined).
    """
    if result.grid != truth.grid:
        raise ValueError("masks must share a grid")
    valid = result.observed_mask() & truth.observed_mask()
    hole_r = result.hole_mask() & valid
    hole_t = truth.hole_mask() & valid
    if not hole_t.any():
        raise ValueError("sensitivity undefined: truth mask has no hole pixels")
    tp = int((hole_r & hole_t).sum())
    fn = int((~hole_r & hole_t).sum())
    fp = int((hole_r & ~hole_t).sum())
    tn = int((valid & ~hole_r & ~hole_t).sum())
    sens = tp / (tp + fn)
    spec = tn / (tn + fp)
    distance = float(np.hypot(1.0 - sens, 1.0 - spec))
    return sens, spec, distance


@dataclass(frozen=True)
class ImageTuneResult:
    alpha: float
    sigma: float
    objective: float
    initial_objective: float
    evaluations: int
    converged: bool


@dataclass(frozen=True)
class TuneResult:
    alpha: float
    sigma: float
    per_image: tuple
    warning: bool  # True when any per-image search exhausted its budget


def _compass_search(objective, x0, bounds, initial_step, min_step, max_evals):
    """Derivative-free compass search with monotone acceptance.

    Probes +/- step along each coordinate (clipped to bounds), moves to the
    best improving probe, halves the step when nothing improves, and stops
    when the step drops below min_step or the evaluation budget is spent.
    """
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    cache: dict[tuple, float] = {}
    evals = 0

    def f(pt):
        nonlocal evals
        key = (float(pt[0]), float(pt[1]))
        if key not in cache:
            cache[key] = objective(pt)
            evals += 1
        return cache[key]

    fx = f0 = f(x)
    step = initial_step
    while step >= min_step and evals < max_evals:
        best_pt, best_val = None, fx
        for axis in (0, 1):
            for direction in (1.0, -1.0):
                cand = x.copy()
                cand[axis] = np.clip(cand[axis] + direction * step, lo[axis], hi[axis])
                if cand[axis] == x[axis]:
                    continue
                if evals >= max_evals:
                    break
                val = f(cand)
                if val < best_val:
                    best_pt, best_val = cand, val
        if best_pt is not None:
            x, fx = best_pt, best_val
        else:
            step /= 2.0
    return x, fx, f0, evals, step < min_step


def tune(
    train_set: list[tuple[SynopticMap, SynopticMap, SegmentationMask, SegmentationMask]],
    params: LevelSetParams | None = None,
    alpha_bounds: tuple[float, float] = ALPHA_BOUNDS,
    sigma_bounds: tuple[float, float] = SIGMA_BOUNDS,
    initial: tuple[float, float] = (0.0, 0.5),
    initial_step: float = 0.5,
    min_step: float = 1e-2,
    max_evals: int = 50,
) -> TuneResult:
    """Per-image compass search over (alpha, sigma); returns the medians.

    Each training item is (euv, mag, init, consensus).  The per-image
    objective is the sens/spec distance of the segmentation against the
    consensus.  Every per-image optimum is no worse than the shared initial
    point by the monotone acceptance rule.
    """
    if not train_set:
        raise ValueError("tune needs at least one training image")
    base = params or LevelSetParams()
    per_image = []
    for euv, mag, init, consensus in train_set:

        def objective(pt):
            p = replace(base, alpha=float(pt[0]), sigma=float(pt[1]))
            out = segment(euv, mag, init, p)
            return sens_spec(out, consensus)[2]

        x, fx, f0, evals, converged = _compass_search(
            objective,
            initial,
            (alpha_bounds, sigma_bounds),
            initial_step,
            min_step,
            max_evals,
        )
        per_image.append(
            ImageTuneResult(
                alpha=float(x[0]),
                sigma=float(x[1]),
                objective=float(fx),
                initial_objective=float(f0),
                evaluations=evals,
                converged=converged,
            )
        )
    alphas = [r.alpha for r in per_image]
    sigmas = [r.sigma for r in per_image]
    return TuneResult(
        alpha=float(np.median(alphas)),
        sigma=float(np.median(sigmas)),
        per_image=tuple(per_image),
        warning=not all(r.converged for r in per_image),
    )
