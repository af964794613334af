"""Fortet's fixed-point iteration for the reduced Schrodinger system.

The system to solve is

    phi(x) * Int g(x,y) psi(y) dy = omega1(x)
    psi(y) * Int g(x,y) phi(x) dx = omega2(y)

which reduces, through h = omega1/phi, to the scalar fixed-point equation
h = Omega(h) with

    Omega(h)(x) = Int g(x,y) omega2(y) / G(h, y) dy,
    G(h, y)     = Int g(z,y) omega1(z) / h(z) dz.

The truncated scheme iterates H_n = max(H''_{n-1}, 1/n), H'_n = Omega(H_n),
H''_n = min(1, H'_n) starting from H_1 = 1.  Two regimes terminate it:

* case 1 - at some finite n0 the iterate satisfies H'_{n0} <= 1 everywhere
  on the support of omega1; the limit is then reached by releasing the
  floor (p-doubling) and iterating the plain map to stationarity.
* case 2 - the iterate's sup stays above 1 but the underlying ray
  converges.  The scheme's own scale creep from the min(1, .) cap decays
  only algebraically, so no pointwise-change threshold can fire in
  reasonable time; instead we detect ray convergence with the
  scale-invariant Hilbert step, then close with the same floor-released
  iteration projected to sup = 1 on the support of omega1 (the scale the
  capped scheme approaches).  The closing iterates are genuine fixed
  points to machine precision, which the returned residuals certify.

The published argument proves convergence of the truncated scheme but gives
no stopping rule; the ray-convergence exit used here is an implementation
decision, recorded in the package docs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import (FeasibilityError, FortetBridgeError, KernelSupportError,
                     NonConvergenceError)
from .problem import (FeasibilityReport, KernelOperator, MarginalPair,
                      full_report)

#: refinement floors are never released below this; true fixed-point values
#: beneath it are not representable in float64 anyway (the iterate keeps
#: tracking the floor there, and the convergence mask ignores those nodes)
FLOOR_FREEZE = 1e-300


@dataclass(frozen=True)
class FortetOptions:
    tol: float = 1e-10
    max_iter: int = 10000
    case1_eps: float = 1e-12
    degenerate_eps: float = 1e-13
    #: Hilbert-step threshold at which the main loop hands over to the
    #: floor-released closing iteration (ray considered settled enough).
    ray_tol: float = 1e-2
    refine_max: int = 5000
    force: bool = False


@dataclass(frozen=True)
class IterationState:
    """One step of the truncated scheme (closing-phase steps reuse the same
    record with the released floor; `phase` tells them apart)."""

    n: int
    H: np.ndarray
    H_prime: np.ndarray
    H_dprime: np.ndarray
    G_of_H: np.ndarray
    J_mask: np.ndarray
    diagnostics: Dict[str, float] = field(default_factory=dict)
    phase: str = "scheme"          # "scheme" | "closing"

    def __post_init__(self):
        for name in ("H", "H_prime", "H_dprime", "G_of_H", "J_mask"):
            arr = getattr(self, name)
            arr.setflags(write=False)


@dataclass(frozen=True)
class PotentialPair:
    phi: np.ndarray
    psi: np.ndarray
    h: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FortetSolution:
    h: Optional[np.ndarray]
    case_tag: str                       # "case1" | "case2" | "degenerate"
    trigger_iteration: int              # scheme iteration where the case fired
    iterations: int                     # scheme iterations run (= trigger)
    refine_steps: int                   # closing-phase steps after the trigger
    phi: Optional[np.ndarray]
    psi: Optional[np.ndarray]
    residuals: Dict[str, float]
    warnings: Tuple[str, ...] = ()
    trace: Tuple[IterationState, ...] = ()

    def __post_init__(self):
        for name in ("h", "phi", "psi"):
            arr = getattr(self, name)
            if arr is not None:
                arr.setflags(write=False)


def _values(x) -> np.ndarray:
    # accept GridFunction or plain arrays
    return np.asarray(getattr(x, "values", x), dtype=float)


def _masked_hilbert_step(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    m = mask & (a > 0) & (b > 0) & np.isfinite(a) & np.isfinite(b)
    if not m.any():
        return math.inf
    r = a[m] / b[m]
    return float(np.log(r.max() / r.min()))


def omega_map(H, kernel: KernelOperator, marginals: MarginalPair):
    """One application of the fixed-point map; returns (H_prime, G_of_H).

    G is computed first for every y-node and reused; nodes where omega1 = 0
    contribute nothing to G no matter what H holds there, and nodes where
    omega2 = 0 contribute nothing to H_prime.
    """
    Hv = _values(H)
    om1 = marginals.omega1.values
    om2 = marginals.omega2.values
    A = om1 > 0
    if np.any(Hv[A] <= 0):
        raise FortetBridgeError("omega_map needs H > 0 wherever omega1 > 0")
    w1 = kernel.grid1.weights
    w2 = kernel.grid2.weights
    with np.errstate(over="ignore", under="ignore"):
        ratio1 = np.where(A, om1 / Hv, 0.0)
        G = kernel.values.T @ (w1 * ratio1)
        bad = (G == 0) & (om2 > 0)
        if np.any(bad):
            nodes = [int(j) for j in np.flatnonzero(bad)[:8]]
            raise KernelSupportError(
                f"inner integral G vanished at nodes {nodes} where omega2 > 0 "
                "(kernel columns lack support against omega1)")
        ratio2 = np.where(om2 > 0, om2 / np.where(G > 0, G, 1.0), 0.0)
        H_prime = kernel.values @ (w2 * ratio2)
    return H_prime, G


def fortet_step(state: Optional[IterationState], kernel: KernelOperator,
                marginals: MarginalPair,
                opts: FortetOptions = FortetOptions()) -> IterationState:
    """Advance the truncated scheme by one iteration (state None -> n = 1)."""
    om1 = marginals.omega1.values
    A = om1 > 0
    w1 = kernel.grid1.weights
    if state is None:
        n = 1
        H = np.ones(kernel.grid1.n_nodes)
    else:
        n = state.n + 1
        H = np.maximum(state.H_dprime, 1.0 / n)
    H_prime, G = omega_map(H, kernel, marginals)
    H_dprime = np.minimum(1.0, H_prime)
    J_mask = H_prime > 1.0

    with np.errstate(over="ignore", under="ignore"):
        ratio1 = np.where(A, om1 / H, 0.0)
    normalization = float(np.sum((w1 * ratio1) * H_prime))
    mass2 = float(np.sum(kernel.grid2.weights * marginals.omega2.values))
    diag = {
        "sup_change": math.nan,
        "hilbert_step": math.nan,
        "normalization_residual": abs(normalization - mass2),
        "case1_candidate": bool(np.all(H_prime[A] <= 1.0 + opts.case1_eps)),
    }
    if state is not None:
        diag["sup_change"] = float(np.max(np.abs(H_prime - state.H_prime)))
        diag["hilbert_step"] = _masked_hilbert_step(H_prime, state.H_prime, A)
    return IterationState(n, H, H_prime, H_dprime, G, J_mask, diag)


def _closing_iteration(K0: np.ndarray, kernel: KernelOperator, marginals: MarginalPair,
                       opts: FortetOptions, n0: int, normalize: bool,
                       trace: List[IterationState]) -> Tuple[np.ndarray, int]:
    """Floor-released fixed-point iteration from K0.

    The floor 1/p halves every step (p-doubling) instead of tracking 1/n,
    and is frozen at FLOOR_FREEZE; in the ray-converged regime the iterate
    is additionally rescaled to sup = 1 over the omega1 support each step.
    Convergence is judged by the Hilbert step over nodes clearly above the
    floor: nodes pinned at (or tracking) the floor hold values below float
    range in exact arithmetic and never stabilize bitwise.
    """
    A = marginals.omega1.values > 0
    K = K0.copy()
    if normalize:
        s = float(K[A].max())
        if s <= 0:
            raise NonConvergenceError("iterate collapsed to zero on the omega1 support",
                                      trace)
        K = K / s
    p = float(n0 + 1)
    for r in range(1, opts.refine_max + 1):
        p = min(p * 2.0, 1e300)
        floor = max(1.0 / p, FLOOR_FREEZE)
        Kf = np.maximum(K, floor)
        Kn, G = omega_map(Kf, kernel, marginals)
        if normalize:
            s = float(Kn[A].max())
            if s <= 0:
                raise NonConvergenceError("iterate collapsed to zero on the omega1 support",
                                          trace)
            Kn = Kn / s
        conv_mask = A & (Kn > 10.0 * floor) & (K > 10.0 * floor)
        step = _masked_hilbert_step(Kn, K, conv_mask)
        sup_change = float(np.max(np.abs(Kn - K)))
        om1 = marginals.omega1.values
        with np.errstate(over="ignore", under="ignore"):
            ratio1 = np.where(A, om1 / Kf, 0.0)
        norm_resid = abs(float(np.sum((kernel.grid1.weights * ratio1) * (Kn * s if normalize else Kn)))
                         - float(np.sum(kernel.grid2.weights * marginals.omega2.values)))
        trace.append(IterationState(
            n0 + r, Kf, Kn, np.minimum(1.0, Kn), G, Kn > 1.0,
            {"sup_change": sup_change, "hilbert_step": step,
             "normalization_residual": norm_resid, "case1_candidate": False},
            phase="closing"))
        K = Kn
        converged = step < opts.tol if normalize else (sup_change < opts.tol)
        if converged:
            return K, r
    raise NonConvergenceError(
        f"closing iteration did not stabilize within {opts.refine_max} steps", trace)


def run_fortet(kernel: KernelOperator, marginals: MarginalPair,
               opts: FortetOptions = FortetOptions(),
               feasibility: Optional[FeasibilityReport] = None) -> FortetSolution:
    """Run the truncated scheme to a tagged solution.

    Refuses instances whose feasibility report fails hard checks or whose
    integrability estimate looks divergent, unless opts.force is set.  The
    full per-step trace is attached to the solution (and to the
    NonConvergenceError when the iteration cap is hit).
    """
    if not opts.force:
        report = feasibility if feasibility is not None else full_report(kernel, marginals)
        failed = [k for k, v in report.hypotheses.items() if not v.ok]
        if failed:
            raise FeasibilityError(f"hypothesis checks failed: {', '.join(failed)} "
                                   "(pass force=True to run anyway)")
        if report.condition_star is not None \
                and report.condition_star.verdict != "finite":
            hint = "; swapping the marginals looks feasible" if report.swap_recommended else ""
            raise FeasibilityError("integrability estimate is suspected-divergent"
                                   + hint + " (pass force=True to run anyway)")

    A = marginals.omega1.values > 0
    if not A.any():
        raise FeasibilityError("omega1 has empty support")

    trace: List[IterationState] = []
    state: Optional[IterationState] = None
    mode = None
    n0 = 0
    for n in range(1, opts.max_iter + 1):
        state = fortet_step(state, kernel, marginals, opts)
        trace.append(state)
        if float(state.H_prime.max()) < opts.degenerate_eps:
            return _finish_degenerate(state, trace)
        if state.diagnostics["case1_candidate"]:
            mode, n0 = "case1", n
            break
        hs = state.diagnostics["hilbert_step"]
        sc = state.diagnostics["sup_change"]
        if n >= 2 and (hs < opts.ray_tol or sc < opts.tol):
            mode, n0 = "case2", n
            break
    if mode is None:
        raise NonConvergenceError(
            f"no termination case triggered within max_iter={opts.max_iter}", trace)

    K, refine_steps = _closing_iteration(state.H_prime, kernel, marginals, opts,
                                         n0, normalize=(mode == "case2"), trace=trace)
    warnings: List[str] = []
    over = float(K.max()) - 1.0
    if over > opts.case1_eps:
        warnings.append(f"fixed point exceeded 1 by {over:.3g} before clamping "
                        "(outside the omega1 support)")
    h = np.minimum(K, 1.0)
    n_zero = int(np.sum(A & (h == 0)))
    if n_zero:
        warnings.append(f"h underflowed to 0 at {n_zero} support nodes; the true "
                        "potential values there exceed float64 range")

    phi, psi, extract_warn = _extract_with_warnings(h, kernel, marginals)
    warnings.extend(extract_warn)
    residuals = _solution_residuals(phi, psi, kernel, marginals)
    return FortetSolution(h=h, case_tag=mode, trigger_iteration=n0,
                          iterations=n0, refine_steps=refine_steps,
                          phi=phi, psi=psi, residuals=residuals,
                          warnings=tuple(warnings), trace=tuple(trace))


def _finish_degenerate(state: IterationState, trace: List[IterationState]) -> FortetSolution:
    return FortetSolution(h=state.H_prime, case_tag="degenerate",
                          trigger_iteration=state.n, iterations=state.n,
                          refine_steps=0, phi=None, psi=None,
                          residuals={"s1_resid": math.nan, "s2_resid": math.nan,
                                     "marginal_resid": math.nan},
                          warnings=("iterate collapsed below the degeneracy "
                                    "threshold; no potentials extracted",),
                          trace=tuple(trace))


def _extract_with_warnings(h: np.ndarray, kernel: KernelOperator,
                           marginals: MarginalPair):
    om1 = marginals.omega1.values
    om2 = marginals.omega2.values
    A = om1 > 0
    warnings: List[str] = []
    with np.errstate(over="ignore", under="ignore"):
        raw = np.where(A & (h > 0), om1 / np.where(h > 0, h, 1.0), 0.0)
    # h can underflow to 0 (or to a denormal whose reciprocal overflows) when
    # the true potential exceeds float64 range; those nodes are dropped
    usable = np.isfinite(raw)
    phi = np.where(usable, raw, 0.0)
    if np.any(A & ~(usable & (h > 0))):
        warnings.append("potential phi set to 0 at support nodes where h "
                        "underflowed; residuals there are meaningless")
    G = kernel.values.T @ (kernel.grid1.weights * phi)
    bad = (G == 0) & (om2 > 0)
    if np.any(bad):
        nodes = [int(j) for j in np.flatnonzero(bad)[:8]]
        raise KernelSupportError(
            f"integral of g*phi vanished at nodes {nodes} where omega2 > 0")
    psi = np.where(om2 > 0, om2 / np.where(G > 0, G, 1.0), 0.0)
    return phi, psi, warnings


def extract_potentials(h, kernel: KernelOperator, marginals: MarginalPair) -> PotentialPair:
    """phi = omega1/h on the omega1 support (0 off it); psi = omega2 / (g*phi).

    Raises KernelSupportError when the psi denominator vanishes against a
    positive omega2 node.
    """
    hv = _values(h)
    A = marginals.omega1.values > 0
    if np.any(hv[A] <= 0):
        raise FortetBridgeError("extract_potentials needs h > 0 on the omega1 support")
    phi, psi, _ = _extract_with_warnings(hv, kernel, marginals)
    return PotentialPair(phi=phi, psi=psi, h=hv)


def verify_system(phi, psi, kernel: KernelOperator, marginals: MarginalPair) -> Dict[str, float]:
    """Sup-norm residuals of the two marginal equations; pure check."""
    phi = _values(phi)
    psi = _values(psi)
    w1 = kernel.grid1.weights
    w2 = kernel.grid2.weights
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        s1 = phi * (kernel.values @ (w2 * psi)) - marginals.omega1.values
        s2 = psi * (kernel.values.T @ (w1 * phi)) - marginals.omega2.values
    s1 = np.where(np.isnan(s1), math.inf, s1)
    s2 = np.where(np.isnan(s2), math.inf, s2)
    return {"s1_resid": float(np.max(np.abs(s1))),
            "s2_resid": float(np.max(np.abs(s2)))}


def _solution_residuals(phi, psi, kernel, marginals) -> Dict[str, float]:
    res = verify_system(phi, psi, kernel, marginals)
    w1 = kernel.grid1.weights
    w2 = kernel.grid2.weights
    with np.errstate(over="ignore", under="ignore"):
        total = float(np.sum((w1 * phi) * (kernel.values @ (w2 * psi))))
    mass1 = float(np.sum(w1 * marginals.omega1.values))
    res["marginal_resid"] = abs(total - mass1)
    return res


@dataclass(frozen=True)
class UniquenessReport:
    ratio_spread_phi: float
    ratio_spread_psi: float
    c_phi: float
    c_psi: float
    consistent: bool


def verify_uniqueness(solution_a, solution_b, marginals: MarginalPair,
                      support_threshold: float = 1e-12,
                      tol: float = 1e-8) -> UniquenessReport:
    """Compare two solutions of the same problem up to the ray rescaling.

    Solutions agree up to (phi, psi) -> (c*phi, psi/c), so phi_a/phi_b must
    be one constant on the omega1 support and psi_b/psi_a the same constant
    on the omega2 support; spreads are (max - min)/median of those ratios.
    """
    phi_a, psi_a = _values(solution_a.phi), _values(solution_a.psi)
    phi_b, psi_b = _values(solution_b.phi), _values(solution_b.psi)
    m1 = marginals.omega1.values > support_threshold
    m2 = marginals.omega2.values > support_threshold
    c = phi_a[m1] / phi_b[m1]
    c_rec = psi_b[m2] / psi_a[m2]
    c_phi = float(np.median(c))
    c_psi = float(np.median(c_rec))
    spread_phi = float((c.max() - c.min()) / c_phi)
    spread_psi = float((c_rec.max() - c_rec.min()) / c_psi)
    consistent = (spread_phi < tol and spread_psi < tol
                  and abs(c_phi * (1.0 / c_psi) - 1.0) < tol)
    return UniquenessReport(spread_phi, spread_psi, c_phi, c_psi, consistent)
