"""Kernels, marginals, and feasibility checks for the Schrodinger system.

The solvable instance is a bounded positive kernel g(x, y) on a product of
quadrature grids plus two nonnegative unit-mass marginals (omega1, omega2).
This module validates the standing hypotheses (nonnegativity, boundedness,
row/column positivity, continuity smoke checks), evaluates the integrability
condition that gates the fixed-point existence argument, and screens
difference kernels U(x - y) for the monotone-tail property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import FeasibilityError, GridError
from .quadrature import GridFunction, QuadratureGrid, integrate

MASS_TOL = 1e-8
#: tail-slope above this (per unit |y|^2) flags the integrability estimate
#: as suspected-divergent; slopes within +/- the tolerance count as flat.
TAIL_SLOPE_TOL = 1e-8
#: minimum fraction of the profile span a monotone tail must cover before
#: we accept a truncated difference kernel as having monotone tails.
MIN_TAIL_FRACTION = 0.2


# --------------------------------------------------------------------------
# data types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityField:
    """Nonnegative sampled density on a grid.

    Marginals are renormalized to unit mass on construction (the helper
    `density_field` does it); intermediate products like interpolation
    marginals may carry renormalize=False and any mass.
    """

    grid: QuadratureGrid
    values: np.ndarray
    renormalized: bool = True

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise GridError("density values must match grid node count")
        if not np.all(np.isfinite(values)):
            raise GridError("density contains non-finite values")
        if np.any(values < 0):
            idx = int(np.flatnonzero(values < 0)[0])
            raise FeasibilityError(f"density negative at node {idx}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mass(self) -> float:
        return integrate(GridFunction(self.grid, self.values))

    def support_mask(self) -> np.ndarray:
        return self.values > 0


def density_field(grid: QuadratureGrid, values, renormalize: bool = True) -> DensityField:
    values = np.asarray(values, dtype=float)
    if renormalize:
        m = float(np.sum(grid.weights * values))
        if m <= 0:
            raise FeasibilityError("cannot renormalize a density with zero mass")
        values = values / m
    return DensityField(grid, values, renormalized=renormalize)


def gaussian_density(grid: QuadratureGrid, sigma) -> DensityField:
    """Centered Gaussian marginal, renormalized to unit quadrature mass."""
    if grid.dim == 1:
        s = float(sigma)
        if s <= 0:
            raise FeasibilityError("sigma must be positive")
        vals = np.exp(-grid.nodes ** 2 / (2.0 * s * s)) / math.sqrt(2.0 * math.pi * s * s)
    else:
        cov = np.atleast_2d(np.asarray(sigma, dtype=float))
        if cov.shape == (1, 1):
            cov = np.eye(grid.dim) * cov[0, 0]
        _require_spd(cov, "marginal covariance")
        prec = np.linalg.inv(cov)
        q = np.einsum("ni,ij,nj->n", grid.nodes, prec, grid.nodes)
        vals = np.exp(-0.5 * q) / math.sqrt((2.0 * math.pi) ** grid.dim * np.linalg.det(cov))
    return density_field(grid, vals, renormalize=True)


@dataclass(frozen=True)
class MarginalPair:
    omega1: DensityField
    omega2: DensityField


@dataclass(frozen=True)
class KernelOperator:
    """Discretized kernel g(x_i, y_j) with its uniform upper bound.

    provenance is "analytic-gaussian" (values computed pointwise from the
    formula, never tabulated) or "table".  params carries the construction
    parameters; is_difference marks kernels of the form U(x - y), which is
    what the monotone-tail screen and the heat-kernel interpolation need.
    """

    values: np.ndarray
    grid1: QuadratureGrid
    grid2: QuadratureGrid
    sigma_bound: float
    provenance: str
    params: Dict[str, object] = field(default_factory=dict)
    is_difference: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid1.n_nodes, self.grid2.n_nodes):
            raise GridError("kernel matrix shape must be (n1, n2)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def heat_sigma(self) -> Optional[float]:
        """Diffusion scale if this is an analytic 1-D heat kernel, else None."""
        if self.provenance == "analytic-gaussian" and self.grid1.dim == 1 \
                and "sigma" in self.params and not self.params.get("row_normalized"):
            return float(self.params["sigma"])  # type: ignore[arg-type]
        return None

    def swapped(self) -> "KernelOperator":
        return KernelOperator(self.values.T.copy(), self.grid2, self.grid1,
                              self.sigma_bound, self.provenance, dict(self.params),
                              self.is_difference)


def swapped_marginals(marginals: MarginalPair) -> MarginalPair:
    return MarginalPair(marginals.omega2, marginals.omega1)


def gaussian_kernel(grid1: QuadratureGrid, grid2: QuadratureGrid, sigma: float) -> KernelOperator:
    """Heat kernel g(x, y) = N(y - x; sigma^2) evaluated pointwise."""
    s = float(sigma)
    if s <= 0:
        raise FeasibilityError("kernel sigma must be positive")
    if grid1.dim != grid2.dim:
        raise GridError("kernel grids must share dimension")
    if grid1.dim == 1:
        diff2 = np.subtract.outer(grid1.nodes, grid2.nodes) ** 2
        peak = 1.0 / math.sqrt(2.0 * math.pi * s * s)
        vals = peak * np.exp(-diff2 / (2.0 * s * s))
    else:
        d = grid1.dim
        delta = grid1.nodes[:, None, :] - grid2.nodes[None, :, :]
        q = np.sum(delta * delta, axis=2)
        peak = 1.0 / math.sqrt((2.0 * math.pi * s * s) ** d)
        vals = peak * np.exp(-q / (2.0 * s * s))
    # strict upper bound: the sup is attained on the diagonal, so pad it
    bound = peak * (1.0 + 1e-9)
    return KernelOperator(vals, grid1, grid2, bound, "analytic-gaussian",
                          {"sigma": s}, is_difference=True)


def gaussian_multivariate_kernel(grid1: QuadratureGrid, grid2: QuadratureGrid,
                                 Sigma) -> KernelOperator:
    cov = np.atleast_2d(np.asarray(Sigma, dtype=float))
    _require_spd(cov, "kernel covariance")
    d = grid1.dim
    if cov.shape != (d, d):
        raise GridError("kernel covariance must be d x d")
    prec = np.linalg.inv(cov)
    delta = grid1.nodes[:, None, :] - grid2.nodes[None, :, :]
    q = np.einsum("nmi,ij,nmj->nm", delta, prec, delta)
    peak = 1.0 / math.sqrt((2.0 * math.pi) ** d * np.linalg.det(cov))
    vals = peak * np.exp(-0.5 * q)
    bound = peak * (1.0 + 1e-9)
    return KernelOperator(vals, grid1, grid2, bound, "analytic-gaussian",
                          {"Sigma": cov}, is_difference=True)


def table_kernel(grid1: QuadratureGrid, grid2: QuadratureGrid, values) -> KernelOperator:
    vals = np.asarray(values, dtype=float)
    vmax = float(vals.max()) if vals.size else 0.0
    bound = vmax * (1.0 + 1e-9) if vmax > 0 else 1.0
    return KernelOperator(vals, grid1, grid2, bound, "table", {},
                          is_difference=_detect_difference_structure(grid1, grid2, vals))


def pushforward(kernel: KernelOperator, omega1: DensityField) -> DensityField:
    """Kernel image of omega1: omega2(y) = sum_x w1(x) g(x, y) omega1(x).

    Grid-exact by construction: the solver's inner integral reproduces these
    values bitwise when started at the constant function, which is what makes
    the pushforward instance terminate immediately.
    """
    w1 = kernel.grid1.weights
    vals = kernel.values.T @ (w1 * omega1.values)
    return DensityField(kernel.grid2, vals, renormalized=False)


def transition_normalized(kernel: KernelOperator) -> KernelOperator:
    """Rescale each x-row so its quadrature mass over y equals exactly 1."""
    w2 = kernel.grid2.weights
    row_mass = kernel.values @ w2
    if np.any(row_mass <= 0):
        raise FeasibilityError("cannot row-normalize: a kernel row has zero mass")
    vals = kernel.values / row_mass[:, None]
    params = dict(kernel.params)
    params["row_normalized"] = True
    bound = float(vals.max()) * (1.0 + 1e-9)
    return KernelOperator(vals, kernel.grid1, kernel.grid2, bound,
                          kernel.provenance, params, is_difference=False)


# --------------------------------------------------------------------------
# hypothesis checks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    status: str          # "pass" | "fail" | "best-effort-pass" | "best-effort-fail" | "skipped"
    detail: str = ""
    offending_nodes: Tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status in ("pass", "best-effort-pass", "skipped")


@dataclass(frozen=True)
class ConditionStar:
    """Truncated-grid estimate of integral of omega2 / (g * omega1).

    The underlying condition is about an improper integral, which a finite
    grid cannot decide; the verdict is the estimate plus a tail-slope
    heuristic (log-integrand slope against |y|^2 over the outer 20% of the
    grid), never a proof.
    """

    estimate: float
    verdict: str              # "finite" | "suspected-divergent"
    tail_exponent: float
    zero_denominator_nodes: Tuple[int, ...] = ()


@dataclass(frozen=True)
class DifferenceKernelResult:
    status: str               # "pass" | "fail" | "not-applicable"
    condition: Optional[int] = None    # 1 = unimodal-type tails, 2 = mirrored
    T1: Optional[float] = None
    T2: Optional[float] = None
    detail: str = ""


@dataclass(frozen=True)
class FeasibilityReport:
    hypotheses: Dict[str, CheckResult]
    condition_star: Optional[ConditionStar] = None
    swap_recommended: bool = False
    difference_kernel: Optional[DifferenceKernelResult] = None

    @property
    def hard_checks_pass(self) -> bool:
        return all(r.ok for r in self.hypotheses.values())

    @property
    def solver_admissible(self) -> bool:
        if not self.hard_checks_pass:
            return False
        if self.condition_star is not None:
            return self.condition_star.verdict == "finite"
        return True


def _require_spd(mat: np.ndarray, what: str) -> None:
    if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T, atol=1e-12):
        raise FeasibilityError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(mat).min() <= 0:
        raise FeasibilityError(f"{what} must be positive definite")


def _smoothness_smoke(values: np.ndarray) -> CheckResult:
    """Crude first-difference screen: flags near-discontinuities only."""
    if values.ndim != 1:
        return CheckResult("skipped", "continuity smoke check is 1-D only")
    scale = float(np.max(np.abs(values)))
    if scale == 0:
        return CheckResult("best-effort-pass", "identically zero")
    jumps = np.abs(np.diff(values))
    worst = float(jumps.max()) / scale
    if worst > 0.5:
        idx = int(np.argmax(jumps))
        return CheckResult("best-effort-fail",
                           f"jump of {worst:.2g} x scale between nodes {idx} and {idx + 1}",
                           (idx,))
    return CheckResult("best-effort-pass", f"max relative jump {worst:.2g}")


def check_assumptions(kernel: KernelOperator, marginals: MarginalPair) -> FeasibilityReport:
    """Exact grid checks for the standing hypotheses; continuity best-effort.

    Never raises on a failed check: the report lists offending node indices
    and the caller decides (solvers refuse inadmissible instances unless
    forced).
    """
    checks: Dict[str, CheckResult] = {}
    g = kernel.values

    neg = np.argwhere(g < 0)
    checks["kernel_nonnegative"] = (
        CheckResult("pass") if neg.size == 0 else
        CheckResult("fail", f"{len(neg)} negative entries", tuple(int(i) for i in neg[0]))
    )
    over = np.argwhere(~(g < kernel.sigma_bound))
    checks["kernel_bounded"] = (
        CheckResult("pass", f"bound {kernel.sigma_bound:.6g}") if over.size == 0 else
        CheckResult("fail", f"entries reach the stated bound {kernel.sigma_bound:.6g}",
                    tuple(int(i) for i in over[0]))
    )

    for name, dens in (("marginal1", marginals.omega1), ("marginal2", marginals.omega2)):
        bad = np.flatnonzero(dens.values < 0)
        checks[f"{name}_nonnegative"] = (
            CheckResult("pass") if bad.size == 0 else
            CheckResult("fail", "negative density values", tuple(int(i) for i in bad[:8]))
        )
        m = dens.mass()
        checks[f"{name}_unit_mass"] = (
            CheckResult("pass", f"mass {m!r}") if abs(m - 1.0) <= MASS_TOL else
            CheckResult("fail", f"mass {m!r} deviates from 1 by {abs(m - 1.0):.3g}")
        )

    row_ok = np.any(g > 0, axis=1)
    col_ok = np.any(g > 0, axis=0)
    checks["kernel_rows_positive"] = (
        CheckResult("pass") if row_ok.all() else
        CheckResult("fail", "all-zero kernel rows",
                    tuple(int(i) for i in np.flatnonzero(~row_ok)[:8]))
    )
    checks["kernel_columns_positive"] = (
        CheckResult("pass") if col_ok.all() else
        CheckResult("fail", "all-zero kernel columns",
                    tuple(int(j) for j in np.flatnonzero(~col_ok)[:8]))
    )

    # best-effort smoke checks (full continuity is not grid-decidable)
    if kernel.grid1.dim == 1:
        checks["kernel_continuity"] = _smoothness_smoke(g[:, g.shape[1] // 2])
    else:
        checks["kernel_continuity"] = CheckResult("skipped", "dim > 1")
    checks["marginal1_continuity"] = _smoothness_smoke(marginals.omega1.values)
    checks["marginal2_continuity"] = _smoothness_smoke(marginals.omega2.values)

    return FeasibilityReport(hypotheses=checks)


def condition_star(kernel: KernelOperator, marginals: MarginalPair) -> ConditionStar:
    """Evaluate the integrability estimate and its tail-growth heuristic."""
    w1 = kernel.grid1.weights
    denom = kernel.values.T @ (w1 * marginals.omega1.values)
    om2 = marginals.omega2.values
    zero_nodes = tuple(int(j) for j in np.flatnonzero((denom == 0) & (om2 > 0)))
    if zero_nodes:
        return ConditionStar(math.inf, "suspected-divergent", math.inf, zero_nodes)

    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.where(om2 > 0, om2 / np.where(denom > 0, denom, 1.0), 0.0)
    estimate = float(np.sum(kernel.grid2.weights * integrand))

    # tail behavior: slope of log(integrand) against |y|^2 over the outer
    # 20% of the grid (by radius); positive slope means the truncated
    # integrand is still growing at the boundary.
    y = kernel.grid2.nodes
    r2 = y ** 2 if kernel.grid2.dim == 1 else np.sum(y * y, axis=1)
    rmax = float(np.max(np.sqrt(r2)))
    outer = (np.sqrt(r2) >= 0.8 * rmax) & (integrand > 0)
    if outer.sum() >= 3:
        logs = np.log(integrand[outer])
        slope = float(np.polyfit(r2[outer], logs, 1)[0])
    else:
        slope = math.inf  # integrand vanished in the tail region entirely
    if not math.isfinite(slope):
        # no positive tail samples: the integrand died before the boundary,
        # which is the opposite of divergence
        return ConditionStar(estimate, "finite", -math.inf)
    verdict = "suspected-divergent" if slope > TAIL_SLOPE_TOL else "finite"
    return ConditionStar(estimate, verdict, slope)


def bernstein_gaussian_condition(sigma: float, sigma1: float, sigma2: float) -> bool:
    """Scalar Gaussian existence condition: sigma^2 + sigma1^2 - sigma2^2 > 0.

    Strict inequality; the boundary case (exact free evolution of the
    variance) is excluded.
    """
    if min(sigma, sigma1, sigma2) <= 0:
        raise FeasibilityError("standard deviations must be positive")
    return sigma * sigma + sigma1 * sigma1 - sigma2 * sigma2 > 0


def bernstein_multivariate_condition(S, S1, S2) -> bool:
    """Matrix form: all eigenvalues of S2^{-1} - (S + S1)^{-1} positive."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    S1 = np.atleast_2d(np.asarray(S1, dtype=float))
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    for mat, what in ((S, "S"), (S1, "S1"), (S2, "S2")):
        _require_spd(mat, what)
    M = np.linalg.inv(S2) - np.linalg.inv(S + S1)
    return bool(np.linalg.eigvalsh((M + M.T) / 2.0).min() > 0)


# --------------------------------------------------------------------------
# difference-kernel monotone-tail screen
# --------------------------------------------------------------------------

def _detect_difference_structure(grid1: QuadratureGrid, grid2: QuadratureGrid,
                                 vals: np.ndarray) -> bool:
    if grid1.dim != 1 or grid2.dim != 1:
        return False
    dx = np.diff(grid1.nodes)
    dy = np.diff(grid2.nodes)
    if dx.size == 0 or dy.size == 0:
        return False
    if not (np.allclose(dx, dx[0], rtol=1e-9) and np.allclose(dy, dx[0], rtol=1e-9)):
        return False
    a = vals[1:, 1:]
    b = vals[:-1, :-1]
    scale = float(np.max(np.abs(vals))) or 1.0
    return bool(np.max(np.abs(a - b)) <= 1e-9 * scale)


def _difference_profile(kernel: KernelOperator) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Sampled (t, U(t)) with t ascending, or None if not a difference kernel."""
    if kernel.grid1.dim != 1:
        return None
    x = kernel.grid1.nodes
    y = kernel.grid2.nodes
    if kernel.provenance == "analytic-gaussian" and "sigma" in kernel.params \
            and not kernel.params.get("row_normalized"):
        s = float(kernel.params["sigma"])  # type: ignore[arg-type]
        span = float(x.max() - y.min())
        t = np.linspace(-span, span, 4 * max(len(x), len(y)) + 1)
        return t, np.exp(-t * t / (2 * s * s)) / math.sqrt(2 * math.pi * s * s)
    if kernel.is_difference:
        # uniform shared spacing: t-values from the first row and first column
        ts = np.concatenate([x[0] - y[::-1], x[1:] - y[0]])
        us = np.concatenate([kernel.values[0, ::-1], kernel.values[1:, 0]])
        order = np.argsort(ts)
        return ts[order], us[order]
    return None


def _monotone_prefix_end(u: np.ndarray, atol: float) -> int:
    """Last index of the maximal non-decreasing prefix (tolerance -atol)."""
    drops = np.flatnonzero(np.diff(u) < -atol)
    return int(drops[0]) if drops.size else len(u) - 1


def difference_kernel_tails(kernel: KernelOperator) -> DifferenceKernelResult:
    """Screen a difference kernel U(x - y) for monotone tails.

    Condition 1: U non-decreasing left of some T1 and non-increasing right of
    some T2 >= T1; condition 2 is the mirror image.  On a truncated grid the
    quantifiers degenerate, so we accept either a unimodal profile (the two
    monotone runs overlap) or monotone runs that each cover at least
    MIN_TAIL_FRACTION of the sampled span.
    """
    prof = _difference_profile(kernel)
    if prof is None:
        return DifferenceKernelResult("not-applicable", detail="kernel is not of difference form")
    t, u = prof
    atol = 1e-12 * (float(np.max(np.abs(u))) or 1.0)
    span = t[-1] - t[0]

    def tails(vals):
        """(prefix-end index, suffix-start index) for non-decr/non-incr runs."""
        i_star = _monotone_prefix_end(vals, atol)
        j_star = len(vals) - 1 - _monotone_prefix_end(vals[::-1], atol)
        return i_star, j_star

    # condition 1: rising left tail, falling right tail
    i1, j1 = tails(u)
    if i1 >= j1:
        # unimodal: pick the peak as the common threshold
        return DifferenceKernelResult("pass", 1, float(t[j1]), float(t[i1]) if t[i1] >= t[j1] else float(t[j1]),
                                      "unimodal profile")
    if (t[i1] - t[0]) >= MIN_TAIL_FRACTION * span and (t[-1] - t[j1]) >= MIN_TAIL_FRACTION * span:
        return DifferenceKernelResult("pass", 1, float(t[i1]), float(t[j1]),
                                      "monotone tails beyond the thresholds")
    # condition 2: falling left tail, rising right tail (mirror)
    i2, j2 = tails(-u)
    if i2 >= j2:
        return DifferenceKernelResult("pass", 2, float(t[j2]), float(t[i2]) if t[i2] >= t[j2] else float(t[j2]),
                                      "unimodal valley profile")
    if (t[i2] - t[0]) >= MIN_TAIL_FRACTION * span and (t[-1] - t[j2]) >= MIN_TAIL_FRACTION * span:
        return DifferenceKernelResult("pass", 2, float(t[i2]), float(t[j2]),
                                      "monotone tails beyond the thresholds (mirrored)")
    return DifferenceKernelResult("fail", detail="no monotone-tail pattern found "
                                                 "(oscillatory or too-short runs)")


def full_report(kernel: KernelOperator, marginals: MarginalPair) -> FeasibilityReport:
    """Hypothesis checks + integrability estimate + swap advice + tail screen."""
    base = check_assumptions(kernel, marginals)
    cs = condition_star(kernel, marginals)
    swap = False
    if cs.verdict == "suspected-divergent":
        cs_swapped = condition_star(kernel.swapped(), swapped_marginals(marginals))
        swap = cs_swapped.verdict == "finite"
    diff = difference_kernel_tails(kernel)
    return FeasibilityReport(hypotheses=base.hypotheses, condition_star=cs,
                             swap_recommended=swap, difference_kernel=diff)
