"""L1-penalized least squares on bit planes, via the precomputed Gram system.

The fit minimizes ||y - B a||^2 + lam * ||a||_1 where B is the (M, D) 0/1
plane matrix and y the activations minus the clip floor. Since D <= 16 the
problem is carried entirely by G = B^T B, b = B^T y and y^T y; coordinate
descent runs on those, and an exact restricted solve on the detected support
polishes the result to a tight stationarity certificate. The same restricted
solve backs the exhaustive L0 reference search, so the two are comparable
bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .tensor_store import DatasetError

EPS_ZERO = 1e-8  # below this a coefficient is snapped to exact zero
CD_TOL = 1e-10  # relative coordinate-change stop for coordinate descent
CD_MAX_ITER = 100_000  # full sweeps
KKT_TOL = 1e-9  # stationarity target after polish
POLISH_ROUNDS = 20
GRID_POINTS = 32
GRID_RATIO = 1e-4  # smallest grid lambda as a fraction of lambda_max


@dataclass
class GramSystem:
    """Sufficient statistics of one least-squares fit."""

    gram: np.ndarray  # (D, D) B^T B, exact integer counts in float64
    bty: np.ndarray  # (D,) B^T y
    yty: float  # y^T y
    num_rows: int

    @property
    def num_planes(self) -> int:
        return self.bty.size


def build_gram_system(planes: np.ndarray, y: np.ndarray) -> GramSystem:
    """Accumulate G, B^T y and y^T y from a 0/1 plane matrix and targets."""
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    if planes.shape[0] != y.size:
        raise DatasetError(f"{planes.shape[0]} plane rows but {y.size} targets")
    if planes.shape[0] == 0:
        raise DatasetError("cannot build a Gram system from zero rows")
    # int64 matmul keeps the 0/1 inner products exact; uint8 would wrap.
    b64 = planes.astype(np.int64)
    gram = (b64.T @ b64).astype(np.float64)
    bty = b64.T.astype(np.float64) @ y
    return GramSystem(gram=gram, bty=bty, yty=float(y @ y), num_rows=int(y.size))


def merge_gram_systems(systems) -> GramSystem:
    """Sum per-sample systems; valid because all statistics are additive."""
    systems = list(systems)
    if not systems:
        raise DatasetError("cannot merge zero Gram systems")
    gram = sum(s.gram for s in systems)
    bty = sum(s.bty for s in systems)
    return GramSystem(gram=gram, bty=bty, yty=sum(s.yty for s in systems),
                      num_rows=sum(s.num_rows for s in systems))


@dataclass
class CoefficientVector:
    """A fitted coefficient vector with its support and residual energy."""

    alpha: np.ndarray  # (D,) float64, exact zeros off support
    support: tuple[int, ...]  # 1-based plane indices, ascending
    lam: float
    residual_sse: float

    @property
    def effective_rate(self) -> int:
        return len(self.support)


def objective(system: GramSystem, alpha: np.ndarray, lam: float) -> float:
    """||y - B a||^2 + lam ||a||_1 evaluated through the Gram statistics."""
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    sse = system.yty - 2.0 * float(a @ system.bty) + float(a @ system.gram @ a)
    return sse + lam * float(np.abs(a).sum())


def residual_sse(system: GramSystem, alpha: np.ndarray) -> float:
    """||y - B a||^2, floored at zero against roundoff."""
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    sse = system.yty - 2.0 * float(a @ system.bty) + float(a @ system.gram @ a)
    return max(0.0, sse)


def lambda_max(system: GramSystem) -> float:
    """Smallest penalty at which the all-zero vector is optimal."""
    return 2.0 * float(np.abs(system.bty).max()) if system.bty.size else 0.0


def lambda_grid(system: GramSystem, num: int = GRID_POINTS, ratio: float = GRID_RATIO,
                max_ratio: float = 1.0) -> np.ndarray:
    """Ascending geometric penalty grid between the two factors of lambda_max."""
    if not 0.0 < ratio <= max_ratio <= 1.0:
        raise DatasetError(f"penalty grid needs 0 < min factor <= max factor <= 1, "
                           f"got {ratio} and {max_ratio}")
    lmax = lambda_max(system)
    if lmax == 0.0:
        return np.array([0.0])
    if num == 1:
        return np.array([max_ratio * lmax])
    return np.geomspace(ratio * lmax, max_ratio * lmax, num)


def kkt_violation(system: GramSystem, alpha: np.ndarray, lam: float,
                  nonnegative: bool = False) -> float:
    """Largest stationarity violation of the penalized objective.

    Zero coordinates must satisfy |grad_j| <= lam (grad_j >= -lam when the
    fit is sign-constrained); active ones must sit exactly on the subgradient.
    Degenerate all-zero planes are excluded, their coefficient is pinned at 0.
    """
    a = np.ascontiguousarray(alpha, dtype=np.float64)
    grad = 2.0 * (system.gram @ a - system.bty)
    worst = 0.0
    for j in range(a.size):
        if system.gram[j, j] == 0.0:
            continue
        if a[j] == 0.0:
            if nonnegative:
                v = max(0.0, -grad[j] - lam)
            else:
                v = max(0.0, abs(grad[j]) - lam)
        else:
            v = abs(grad[j] + lam * np.sign(a[j]))
        worst = max(worst, v)
    return worst


def _soft(rho: float, thresh: float, nonnegative: bool) -> float:
    if nonnegative:
        return max(0.0, rho - thresh)
    if rho > thresh:
        return rho - thresh
    if rho < -thresh:
        return rho + thresh
    return 0.0


def _cd_sweeps(system: GramSystem, alpha: np.ndarray, lam: float, nonnegative: bool,
               tol: float, max_iter: int) -> None:
    """Cyclic coordinate descent in place until coordinate changes stall."""
    gram, bty = system.gram, system.bty
    d = alpha.size
    half = lam / 2.0
    for _ in range(max_iter):
        delta = 0.0
        for j in range(d):
            gjj = gram[j, j]
            if gjj == 0.0:
                alpha[j] = 0.0
                continue
            rho = bty[j] - float(gram[j] @ alpha) + gjj * alpha[j]
            new = _soft(rho, half, nonnegative) / gjj
            delta = max(delta, abs(new - alpha[j]))
            alpha[j] = new
        if delta < tol * (1.0 + float(np.abs(alpha).max(initial=0.0))):
            return


def _solve_psd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a small PSD system with iterative refinement; lstsq on singularity."""
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(mat, rhs, rcond=None)[0]
    for _ in range(3):
        r = rhs - mat @ sol
        if not np.any(r):
            break
        try:
            sol = sol + np.linalg.solve(mat, r)
        except np.linalg.LinAlgError:
            sol = sol + np.linalg.lstsq(mat, r, rcond=None)[0]
    return sol


def restricted_least_squares(system: GramSystem, support) -> tuple[np.ndarray, float]:
    """Exact least squares restricted to the given 1-based plane indices.

    Returns the full-length coefficient vector (zeros off support) and its
    residual sum of squares. Shared by the penalized path refits and the
    exhaustive reference search so their distortions are directly comparable.
    """
    d = system.num_planes
    alpha = np.zeros(d)
    support = tuple(sorted(int(j) for j in support))
    for j in support:
        if not 1 <= j <= d:
            raise DatasetError(f"support index {j} out of range 1..{d}")
    if support:
        ix = np.array([j - 1 for j in support])
        alpha[ix] = _solve_psd(system.gram[np.ix_(ix, ix)], system.bty[ix])
    return alpha, residual_sse(system, alpha)


def _polish(system: GramSystem, alpha: np.ndarray, lam: float, nonnegative: bool) -> np.ndarray:
    """Exact solve on the detected support, dropping sign-flipped coordinates."""
    d = alpha.size
    active = np.abs(alpha) > EPS_ZERO
    signs = np.where(alpha > 0, 1.0, -1.0)
    for _ in range(d + 1):
        out = np.zeros(d)
        ix = np.flatnonzero(active)
        if ix.size == 0:
            return out
        rhs = system.bty[ix] - (lam / 2.0) * signs[ix]
        out[ix] = _solve_psd(system.gram[np.ix_(ix, ix)], rhs)
        flipped = ix[(out[ix] * signs[ix]) <= EPS_ZERO]
        if flipped.size == 0:
            return out
        active[flipped] = False
    return out


def solve_lasso(system: GramSystem, lam: float, nonnegative: bool = False,
                warm_start: np.ndarray | None = None, tol: float = CD_TOL,
                max_iter: int = CD_MAX_ITER) -> CoefficientVector:
    """Minimize ||y - B a||^2 + lam ||a||_1, optionally with a >= 0.

    Coordinate descent finds the support, an exact restricted solve nails the
    coefficients on it, and the loop repeats until the stationarity
    certificate holds. Coefficients below EPS_ZERO come out as exact zeros.
    """
    if lam < 0.0 or not np.isfinite(lam):
        raise DatasetError(f"penalty must be finite and non-negative, got {lam}")
    d = system.num_planes
    if warm_start is not None:
        alpha = np.array(warm_start, dtype=np.float64, copy=True).reshape(-1)
        if alpha.size != d:
            raise DatasetError(f"warm start has {alpha.size} coefficients, system has {d}")
        if nonnegative:
            alpha = np.maximum(alpha, 0.0)
    else:
        alpha = np.zeros(d)
    if lam >= lambda_max(system):
        alpha = np.zeros(d)  # all-zero is optimal, skip the descent
    else:
        for _ in range(POLISH_ROUNDS):
            _cd_sweeps(system, alpha, lam, nonnegative, tol, max_iter)
            alpha[np.abs(alpha) <= EPS_ZERO] = 0.0
            alpha = _polish(system, alpha, lam, nonnegative)
            alpha[np.abs(alpha) <= EPS_ZERO] = 0.0
            if nonnegative:
                alpha = np.maximum(alpha, 0.0)
            if kkt_violation(system, alpha, lam, nonnegative) <= KKT_TOL:
                break
    alpha[np.abs(alpha) <= EPS_ZERO] = 0.0
    support = tuple(int(j) + 1 for j in np.flatnonzero(alpha))
    return CoefficientVector(alpha=alpha, support=support, lam=float(lam),
                             residual_sse=residual_sse(system, alpha))


def solve_path(system: GramSystem, lams=None, nonnegative: bool = False) -> list[CoefficientVector]:
    """Solve along an ascending penalty grid, warm-starting each step."""
    if lams is None:
        lams = lambda_grid(system)
    lams = np.ascontiguousarray(lams, dtype=np.float64)
    if lams.size and np.any(np.diff(lams) < 0):
        raise DatasetError("penalty grid must be ascending")
    out = []
    warm = None
    for lam in lams:
        sol = solve_lasso(system, float(lam), nonnegative=nonnegative, warm_start=warm)
        warm = sol.alpha
        out.append(sol)
    return out


def exact_l0_oracle(system: GramSystem, max_bits: int) -> CoefficientVector:
    """Best restricted least squares over all supports of size <= max_bits.

    Supports are visited smallest first, then lexicographically; only a
    strictly smaller residual displaces the incumbent, so ties resolve to
    the smallest, earliest support. Exhaustive, so only viable for D <= 16.
    """
    d = system.num_planes
    if not 0 <= max_bits <= d:
        raise DatasetError(f"max_bits must be in 0..{d}, got {max_bits}")
    best_alpha = np.zeros(d)
    best_sse = residual_sse(system, best_alpha)
    best_support: tuple[int, ...] = ()
    planes = range(1, d + 1)
    for size in range(1, max_bits + 1):
        for support in itertools.combinations(planes, size):
            alpha, sse = restricted_least_squares(system, support)
            if sse < best_sse:
                best_alpha, best_sse, best_support = alpha, sse, support
    return CoefficientVector(alpha=best_alpha, support=best_support, lam=0.0,
                             residual_sse=best_sse)
