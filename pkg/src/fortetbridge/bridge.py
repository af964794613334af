"""Bridge-level outputs: coupling, KL objective, entropic interpolation,
and the closed-form Gaussian oracle used to validate the iterative solvers.

The coupling density pi(x, y) = phi(x) g(x, y) psi(y) is the static bridge;
its time marginals rho_t come from propagating phi forward and psi backward
with the heat kernel at the interpolated scale.  For centered Gaussian
marginals and a Gaussian difference kernel everything is solvable in closed
form (two coupled scalar equations), which pins the potentials up to the
usual ray rescaling and gives machine-checkable reference values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .errors import FortetBridgeError, InfeasibleParametersError
from .problem import KernelOperator, MarginalPair
from .quadrature import QuadratureGrid

#: interpolated densities whose raw quadrature mass drifts from 1 by more
#: than this indicate a too-small truncation radius and are refused
MASS_DRIFT_TOL = 1e-4


@dataclass(frozen=True)
class Coupling:
    pi: np.ndarray                    # (n1, n2), density against dx x dy
    grid1: QuadratureGrid
    grid2: QuadratureGrid
    row_marginal_resid: float         # sup | integral_y pi - omega1 |
    col_marginal_resid: float         # sup | integral_x pi - omega2 |
    mass: float

    def __post_init__(self):
        self.pi.setflags(write=False)


def build_coupling(phi, psi, kernel: KernelOperator,
                   marginals: MarginalPair) -> Coupling:
    """Assemble pi = phi * g * psi and report its marginal residuals."""
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    w1 = kernel.grid1.weights
    w2 = kernel.grid2.weights
    with np.errstate(over="ignore", under="ignore"):
        pi = phi[:, None] * kernel.values * psi[None, :]
        row = pi @ w2
        col = pi.T @ w1
        mass = float(w1 @ (pi @ w2))
    row_resid = float(np.max(np.abs(row - marginals.omega1.values)))
    col_resid = float(np.max(np.abs(col - marginals.omega2.values)))
    return Coupling(pi, kernel.grid1, kernel.grid2, row_resid, col_resid, mass)


def prior_coupling(kernel: KernelOperator, marginals: MarginalPair) -> np.ndarray:
    """Reference coupling omega1(x) g(x, y): the source marginal pushed
    through one kernel step.  The solved bridge minimizes KL against it."""
    return marginals.omega1.values[:, None] * kernel.values


@dataclass(frozen=True)
class KLObjective:
    value: float
    absolutely_continuous: bool       # False => pi charges a reference-null cell


def kl_objective(pi, reference, weights1=None, weights2=None) -> KLObjective:
    """Quadrature KL divergence sum w1 w2 pi log(pi/reference), 0 log 0 = 0.

    Mass is taken as given (no normalization); a positive pi cell over a
    zero reference cell makes the divergence +inf and clears the
    absolute-continuity flag.
    """
    pi = np.asarray(pi, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if pi.shape != ref.shape:
        raise FortetBridgeError("kl_objective needs same-shape arrays")
    w1 = np.ones(pi.shape[0]) if weights1 is None else np.asarray(weights1, dtype=float)
    w2 = np.ones(pi.shape[1]) if weights2 is None else np.asarray(weights2, dtype=float)
    if np.any((pi > 0) & (ref == 0)):
        return KLObjective(math.inf, False)
    mask = pi > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.zeros_like(pi)
        terms[mask] = pi[mask] * np.log(pi[mask] / ref[mask])
    value = float(w1 @ (terms @ w2))
    return KLObjective(value, True)


@dataclass(frozen=True)
class CostDecomposition:
    transport_cost: float             # integral of |x - y|^2 / 2 against pi
    entropy_term: float               # integral of pi log pi (0 log 0 = 0)


def entropic_cost_decomposition(coupling: Coupling) -> CostDecomposition:
    x = coupling.grid1.nodes
    y = coupling.grid2.nodes
    if coupling.grid1.dim == 1:
        cost = np.subtract.outer(x, y) ** 2 / 2.0
    else:
        delta = x[:, None, :] - y[None, :, :]
        cost = np.sum(delta * delta, axis=2) / 2.0
    w1 = coupling.grid1.weights
    w2 = coupling.grid2.weights
    pi = coupling.pi
    transport = float(w1 @ ((pi * cost) @ w2))
    mask = pi > 0
    ent = np.zeros_like(pi)
    ent[mask] = pi[mask] * np.log(pi[mask])
    entropy = float(w1 @ (ent @ w2))
    return CostDecomposition(transport, entropy)


@dataclass(frozen=True)
class Interpolation:
    times: Tuple[float, ...]
    densities: np.ndarray             # (n_times, n_nodes), renormalized
    masses: Tuple[float, ...]         # raw quadrature masses before renormalization
    grid: QuadratureGrid

    def __post_init__(self):
        self.densities.setflags(write=False)


def _heat_matrix(nodes: np.ndarray, variance: float) -> np.ndarray:
    d2 = np.subtract.outer(nodes, nodes) ** 2
    return np.exp(-d2 / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)


def entropic_interpolation(phi, psi, kernel: KernelOperator,
                           times: Sequence[float],
                           mass_drift_tol: float = MASS_DRIFT_TOL) -> Interpolation:
    """Time marginals rho_t = (heat_t * phi) x (heat_{1-t} * psi).

    Endpoints use the solved potentials directly (the t -> 0 and t -> 1
    heat kernels degenerate to point evaluation), so rho_0 and rho_1
    reproduce the marginal-equation products exactly.  Refuses kernels
    without an analytic heat scale and grids whose truncation lets the raw
    interpolant mass drift by more than mass_drift_tol.
    """
    sigma = kernel.heat_sigma
    if sigma is None:
        raise FortetBridgeError("interpolation needs an analytic Gaussian kernel "
                                "with a known heat scale")
    if not np.array_equal(kernel.grid1.nodes, kernel.grid2.nodes):
        raise FortetBridgeError("interpolation needs matching x and y grids")
    grid = kernel.grid1
    phi = np.asarray(getattr(phi, "values", phi), dtype=float)
    psi = np.asarray(getattr(psi, "values", psi), dtype=float)
    w = grid.weights
    nodes = grid.nodes
    var = sigma * sigma

    out = np.empty((len(times), grid.n_nodes))
    masses = []
    for k, t in enumerate(times):
        t = float(t)
        if not 0.0 <= t <= 1.0:
            raise FortetBridgeError("interpolation times must lie in [0, 1]")
        if t == 0.0:
            forward = phi
            backward = kernel.values @ (w * psi)
        elif t == 1.0:
            forward = kernel.values.T @ (w * phi)
            backward = psi
        else:
            forward = _heat_matrix(nodes, var * t) @ (w * phi)
            backward = _heat_matrix(nodes, var * (1.0 - t)) @ (w * psi)
        rho = forward * backward
        m = float(np.sum(w * rho))
        if abs(m - 1.0) > mass_drift_tol:
            raise FortetBridgeError(
                f"interpolant mass at t={t} drifted to {m!r}; enlarge the "
                "truncation radius")
        masses.append(m)
        out[k] = rho / m
    return Interpolation(tuple(float(t) for t in times), out, tuple(masses), grid)


# --------------------------------------------------------------------------
# closed-form Gaussian reference solution
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianBridgeSolution:
    """Exact potentials for centered Gaussian marginals and Gaussian kernel.

    phi(x) = c_phi exp(-a x^2 / 2), psi(y) = c_psi exp(-b y^2 / 2) with the
    ray fixed by c_psi = 1.  kappa = 1/sigma2^2 - 1/(sigma1^2 + sigma^2) is
    the tail margin of the fixed-point scheme's integrability condition in
    this orientation (negative: the scheme needs the swapped orientation,
    even though the system itself is solvable both ways).
    """

    sigma: float
    sigma1: float
    sigma2: float
    a: float
    b: float
    c_phi: float
    c_psi: float
    kappa: float
    scheme_feasible: bool
    swap_scheme_feasible: bool

    def log_phi(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return math.log(self.c_phi) - self.a * x * x / 2.0

    def log_psi(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return math.log(self.c_psi) - self.b * y * y / 2.0

    def phi(self, x) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_phi(x))

    def psi(self, y) -> np.ndarray:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(self.log_psi(y))


def _kappa(sigma: float, sigma1: float, sigma2: float) -> float:
    return 1.0 / sigma2 ** 2 - 1.0 / (sigma1 ** 2 + sigma ** 2)


def gaussian_oracle(sigma: float, sigma1: float, sigma2: float) -> GaussianBridgeSolution:
    """Solve the two-equation system for the Gaussian potential exponents.

    With A(b) = 1/sigma1^2 - b/(1 + sigma^2 b), the exponent b solves
    b + A(b)/(1 + sigma^2 A(b)) = 1/sigma2^2 on b > -1/sigma^2, where the
    left side increases from -1/sigma2^2-free limit to +inf, so a root
    always exists for admissible parameters; a is then A(b).  The scale
    convention c_psi = 1 makes c_phi = (1 + sigma^2 b)^(1/2) / sqrt(2 pi
    sigma1^2).
    """
    if min(sigma, sigma1, sigma2) <= 0:
        raise InfeasibleParametersError("sigma, sigma1, sigma2 must be positive")
    s2 = sigma * sigma

    def A(b: float) -> float:
        return 1.0 / sigma1 ** 2 - b / (1.0 + s2 * b)

    def F(b: float) -> float:
        a = A(b)
        return b + a / (1.0 + s2 * a) - 1.0 / sigma2 ** 2

    lo = -(1.0 - 1e-9) / s2
    hi = max(1.0, 2.0 / sigma2 ** 2)
    for _ in range(200):
        if F(hi) > 0:
            break
        hi *= 2.0
    else:
        raise InfeasibleParametersError("could not bracket the exponent equation")
    if F(lo) >= 0:
        # root pushed against the domain boundary: extreme parameter ratio
        raise InfeasibleParametersError("exponent equation has no admissible root")
    b = float(brentq(F, lo, hi, xtol=1e-15, rtol=8.9e-16, maxiter=200))
    a = float(A(b))
    if 1.0 + s2 * b <= 0 or 1.0 + s2 * a <= 0:
        raise InfeasibleParametersError("root violates the convolution domain")
    c_phi = math.sqrt(1.0 + s2 * b) / math.sqrt(2.0 * math.pi * sigma1 ** 2)
    kappa = _kappa(sigma, sigma1, sigma2)
    kappa_swapped = _kappa(sigma, sigma2, sigma1)
    return GaussianBridgeSolution(
        sigma=float(sigma), sigma1=float(sigma1), sigma2=float(sigma2),
        a=a, b=b, c_phi=c_phi, c_psi=1.0, kappa=kappa,
        scheme_feasible=kappa >= 0.0, swap_scheme_feasible=kappa_swapped >= 0.0)
