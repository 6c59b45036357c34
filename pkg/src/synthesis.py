"""
Offline parameter design.

Produces the feedback gain, the two exponential bound certificates, and every
constant the triggering rule and its guarantees depend on, packaged as a
DesignCertificate.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import eigvals, solve_continuous_are, solve_continuous_lyapunov

from .errors import (
    CertificateRejected,
    DegenerateEnvelopeError,
    GraphError,
    HurwitzError,
    RiccatiError,
    StabilizabilityError,
    SynthesisError,
    ToleranceError,
)
from .graph import has_spanning_tree, spectral
from .models import (
    AccessibilityGraph,
    AgentDynamics,
    BoundSource,
    DesignCertificate,
    ExpBoundCert,
    ExpSum,
    GainDesign,
    Spectrum,
    ThresholdParams,
)
from .numerics import FlowTable, eval_expsum

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-8
STRICT_TOL = 1e-10
STABLE_TOL = 1e-12
DEFECTIVE_MARGIN = 1e-6
MARGIN_STEPS = 6
KAPPA_LIMIT = 1e3
DIAGONALIZABLE_COND = 1e8
BISECTION_TOL = 1e-10
BOUND_MARGIN = 1e-9
VALIDATION_HORIZON = 20.0
VALIDATION_STEP = 1e-2
ETA_BAR_SAFETY = 1.001
ETA_GRID_FACTOR = 1e-3
ETA_GRID_SPAN = 50.0
DEGENERATE_DECAY = 1e-9

GAMMA_BRACKETING_NOTE = (
    "gamma_i uses the bracketing sum_j[(beta_i + 2 beta_j) eta_bar + 3 s0] that follows "
    "the sigma bound term by term; the shorter printed form groups 3 s0 and the "
    "kappa_theta beta_i eta_bar ||A|| term ambiguously"
)


# =============================================================================
# GAIN
# =============================================================================


def check_stabilizable(dyn: AgentDynamics) -> None:
    """PBH test on the eigenvalues of A that are not asymptotically stable."""
    n = dyn.n
    scale = max(1.0, float(np.linalg.norm(dyn.a)), float(np.linalg.norm(dyn.b)))
    for mode in eigvals(dyn.a):
        if mode.real < -STABLE_TOL:
            continue
        pencil = np.hstack([dyn.a - mode * np.eye(n), dyn.b.astype(complex)])
        if np.linalg.matrix_rank(pencil, tol=1e-9 * scale) < n:
            raise StabilizabilityError(
                f"mode {mode:.6g} of A is uncontrollable and not asymptotically stable"
            )


def solve_riccati(dyn: AgentDynamics, varrho: float) -> tuple[np.ndarray, float]:
    """
    Solve A^T P + P A - P B B^T P / varrho + I = 0.

    Returns P and the Frobenius norm of the equation residual. The equality
    solution is then re-checked as a strict solution of the Riccati inequality.
    """
    if varrho <= 0:
        raise RiccatiError(f"Riccati weight must be positive, got {varrho}")
    check_stabilizable(dyn)

    a, b = dyn.a, dyn.b
    try:
        p = solve_continuous_are(a, b, np.eye(dyn.n), varrho * np.eye(dyn.m))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RiccatiError(f"no stabilizing solution: {exc}") from exc
    p = 0.5 * (p + p.T)

    quadratic = p @ b @ b.T @ p / varrho
    residual = float(np.linalg.norm(a.T @ p + p @ a - quadratic + np.eye(dyn.n), "fro"))
    if residual > RICCATI_TOL * max(1.0, float(np.linalg.norm(p, "fro"))):
        raise RiccatiError(f"equation residual {residual:.2e} too large")
    if np.linalg.eigvalsh(p).min() <= 0:
        raise RiccatiError("solution is not positive definite")
    strict = np.linalg.eigvalsh(a.T @ p + p @ a - quadratic).max()
    if strict >= -STRICT_TOL:
        raise RiccatiError(f"inequality not strict (max eigenvalue {strict:.2e})")
    return p, residual


def min_riccati_weight(spectrum: Spectrum) -> float:
    """Smallest admissible varrho, 1 / (2 Re lambda_2); 1.0 for a single agent."""
    if spectrum.n_agents == 1:
        return 1.0
    return 1.0 / (2.0 * float(spectrum.eigenvalues[1:].real.min()))


def verify_hurwitz(dyn: AgentDynamics, f: ArrayLike, spectrum: Spectrum) -> list[float]:
    """Spectral abscissa of A - lambda_i B F for i = 2..N."""
    bf = dyn.b @ np.asarray(f, dtype=float)
    return [float(eigvals(dyn.a - lam * bf).real.max()) for lam in spectrum.eigenvalues[1:]]


def design_gain(
    dyn: AgentDynamics, p: ArrayLike, spectrum: Spectrum, varrho: float
) -> GainDesign:
    p = np.asarray(p, dtype=float)
    bound = min_riccati_weight(spectrum)
    if spectrum.n_agents > 1 and varrho < bound * (1.0 - 1e-12):
        raise HurwitzError(f"Riccati weight {varrho} is below 1/(2 Re lambda_2) = {bound:.6g}")

    f = dyn.b.T @ p
    abscissas = verify_hurwitz(dyn, f, spectrum)
    if abscissas and max(abscissas) >= 0:
        raise HurwitzError(f"A - lambda_i B F is not Hurwitz (abscissas {abscissas})")
    return GainDesign(f=f, p=p, rho=varrho)


def build_acheck(dyn: AgentDynamics, f: ArrayLike, spectrum: Spectrum) -> np.ndarray:
    """I_{N-1} (x) A - L_check (x) B F."""
    size = spectrum.n_agents - 1
    bf = dyn.b @ np.asarray(f, dtype=float)
    return np.kron(np.eye(size), dyn.a) - np.kron(spectrum.l_check, bf)


# =============================================================================
# EXPONENTIAL BOUNDS
# =============================================================================


def _lyapunov_witness(m: np.ndarray, rate: float) -> np.ndarray | None:
    """P > 0 with (M - rate I)^T P + P (M - rate I) = -I, if it exists."""
    shifted = m - rate * np.eye(m.shape[0])
    if eigvals(shifted).real.max() >= 0:
        return None
    try:
        p = solve_continuous_lyapunov(shifted.T, -np.eye(m.shape[0]))
    except (np.linalg.LinAlgError, ValueError):
        return None
    p = 0.5 * (p + p.T)
    if not np.all(np.isfinite(p)) or np.linalg.eigvalsh(p).min() <= 0:
        return None
    return p


def _bisect_rate(m: np.ndarray, abscissa: float) -> float:
    """Infimum of rates with a Lyapunov witness, by bisection."""
    low = abscissa - 1.0
    high = float(np.linalg.eigvalsh(0.5 * (m + m.T)).max()) + 1.0
    while high - low > BISECTION_TOL:
        mid = 0.5 * (low + high)
        if _lyapunov_witness(m, mid) is None:
            low = mid
        else:
            high = mid
    return high


def _grid_norms(m: np.ndarray, t_val: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample times and ||exp(M t)|| on {0, step, ..., t_val}."""
    count = int(math.ceil(t_val / step))
    times = step * np.arange(count + 1)
    norms = np.linalg.norm(
        FlowTable(m, np.zeros((m.shape[0], 0)), step).transitions(count), ord=2, axis=(1, 2)
    )
    return times, norms


def _slack(times: np.ndarray, norms: np.ndarray, kappa: float, rate: float) -> np.ndarray:
    return kappa * np.exp(rate * times) * (1.0 + BOUND_MARGIN) - norms


def validate_exp_bound(
    m: ArrayLike,
    kappa: float,
    rate: float,
    t_val: float = VALIDATION_HORIZON,
    step: float = VALIDATION_STEP,
    target: str = "M",
    source: BoundSource = BoundSource.SYNTHESIZED,
) -> ExpBoundCert:
    """Check ||exp(M t)|| <= kappa exp(rate t) on {0, step, ..., t_val}."""
    m = np.asarray(m, dtype=float)
    times, norms = _grid_norms(m, t_val, step)
    slack = _slack(times, norms, kappa, rate)
    worst = int(np.argmin(slack))
    if slack[worst] < 0:
        raise CertificateRejected(
            f"{target}: ||exp(M t)|| = {norms[worst]:.6g} exceeds {kappa:.6g} exp({rate:.6g} t) "
            f"at t = {times[worst]:.4g}"
        )
    return ExpBoundCert(
        kappa=kappa,
        rate=rate,
        target=target,
        source=source,
        validated_until=float(times[-1]),
        worst_margin=float(slack[worst]),
    )


def _kappa_candidates(
    m: np.ndarray, rate: float, eigen_condition: float | None
) -> list[float]:
    """kappa values certified at `rate` by the identity, eigenvector and Lyapunov witnesses."""
    candidates: list[float] = []
    if np.linalg.eigvalsh(0.5 * (m + m.T)).max() <= rate + STABLE_TOL:
        candidates.append(1.0)
    if eigen_condition is not None:
        candidates.append(eigen_condition)
    witness = _lyapunov_witness(m, rate)
    if witness is not None:
        spread = np.linalg.eigvalsh(witness)
        candidates.append(math.sqrt(spread.max() / spread.min()))
    return candidates


def exp_bound(
    m: ArrayLike,
    t_val: float = VALIDATION_HORIZON,
    step: float = VALIDATION_STEP,
    target: str = "M",
    *,
    kappa_limit: float = math.inf,
    max_rate: float = math.inf,
) -> ExpBoundCert:
    """
    Synthesize (kappa, rate) with ||exp(M t)|| <= kappa exp(rate t).

    Candidate rates are the spectral abscissa (diagonalizable M only) followed
    by the Lyapunov-feasible infimum plus margins DEFECTIVE_MARGIN * 10^k.
    At each rate kappa is the smallest valid witness: the identity (when the
    symmetric part is dominated by the rate), the eigenvector basis, or the
    Lyapunov solution. The first rate whose grid-validated kappa is at most
    `kappa_limit` wins; if none qualifies, the smallest kappa found does.
    Rates at or above `max_rate` are not considered.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise CertificateRejected(f"{target}: need a nonempty square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise CertificateRejected(f"{target}: matrix has non-finite entries")

    eigenvalues, vectors = np.linalg.eig(m)
    abscissa = float(eigenvalues.real.max())
    condition = float(np.linalg.cond(vectors))
    diagonalizable = math.isfinite(condition) and condition < DIAGONALIZABLE_COND
    base = abscissa if diagonalizable else _bisect_rate(m, abscissa)
    rates = [abscissa] if diagonalizable else []
    rates += [base + DEFECTIVE_MARGIN * 10.0**k for k in range(MARGIN_STEPS)]

    times, norms = _grid_norms(m, t_val, step)
    feasible: list[tuple[float, float]] = []
    for rate in rates:
        if rate >= max_rate:
            break
        candidates = _kappa_candidates(m, rate, condition if diagonalizable else None)
        if not candidates:
            logger.debug(f"{target}: no witness at rate {rate:.6g}")
            continue
        kappa = max(1.0, min(candidates))
        if _slack(times, norms, kappa, rate).min() < 0:
            logger.debug(f"{target}: kappa={kappa:.6g} at rate {rate:.6g} fails the grid")
            continue
        feasible.append((rate, kappa))
        if kappa <= kappa_limit:
            break
    if not feasible:
        raise CertificateRejected(
            f"{target}: no witness found for rates {rates[0]:.6g} to {rates[-1]:.6g}"
        )

    rate, kappa = feasible[-1]
    if kappa > kappa_limit:
        rate, kappa = min(feasible, key=lambda pair: pair[1])
    logger.debug(f"{target}: rate={rate:.6g} kappa={kappa:.6g} ({len(feasible)} feasible)")
    return validate_exp_bound(m, kappa, rate, t_val, step, target)


def contraction_bound(
    acheck: ArrayLike,
    t_val: float = VALIDATION_HORIZON,
    step: float = VALIDATION_STEP,
    kappa_limit: float = KAPPA_LIMIT,
) -> ExpBoundCert:
    """
    Certificate for the reduced closed loop; lambda is minus its rate.

    Margins above the spectral abscissa are traded against kappa, but the
    rate keeps at least half of the abscissa's decay.
    """
    acheck = np.asarray(acheck, dtype=float)
    if acheck.size == 0:
        # single agent: the disagreement subspace is {0}
        return ExpBoundCert(kappa=1.0, rate=-1.0, target="acheck")
    abscissa = float(eigvals(acheck).real.max())
    if abscissa >= 0:
        raise CertificateRejected(f"reduced closed loop is not Hurwitz (abscissa {abscissa:.6g})")
    cert = exp_bound(
        acheck, t_val, step, target="acheck", kappa_limit=kappa_limit, max_rate=0.5 * abscissa
    )
    if cert.rate >= 0:
        raise CertificateRejected(f"contraction rate {cert.rate:.6g} is not negative")
    return cert


# =============================================================================
# CONSTANTS
# =============================================================================


def compute_bprime_norm(spectrum: Spectrum, dyn: AgentDynamics) -> float:
    """||(I - 1 phi^T) (x) B|| = ||I - 1 phi^T|| ||B||."""
    n_agents = spectrum.n_agents
    projector = np.eye(n_agents) - np.outer(np.ones(n_agents), spectrum.phi)
    return float(np.linalg.norm(projector, 2) * np.linalg.norm(dyn.b, 2))


def beta_norms(spectrum: Spectrum, f: ArrayLike) -> list[float]:
    """Spectral norm of each agent's row block of L (x) F."""
    f = np.asarray(f, dtype=float)
    lap = spectrum.laplacian
    return [float(np.linalg.norm(np.kron(lap[i : i + 1], f), 2)) for i in range(lap.shape[0])]


def eta_envelope(
    kappa: float,
    decay: float,
    eta0: float,
    n_agents: int,
    b_prime_norm: float,
    threshold: ThresholdParams,
) -> tuple[ExpSum, float]:
    """
    Closed-form disagreement envelope eta(t) and a safe upper bound eta_bar.

    eta(t) = kappa eta0 e^{-lambda t} + c [s_inf/lambda (1 - e^{-lambda t})
             + (s0 - s_inf)/(lambda - lambda_s) (e^{-lambda_s t} - e^{-lambda t})]
    with c = kappa sqrt(N) ||B'||.
    """
    s0, s_inf, lambda_s = threshold.s0, threshold.s_inf, threshold.lambda_s
    c = kappa * math.sqrt(n_agents) * b_prime_norm
    terms = [(kappa * eta0, decay)]
    slowest = decay
    if c > 0:
        if abs(decay - lambda_s) < DEGENERATE_DECAY:
            raise DegenerateEnvelopeError(
                f"lambda = {decay:.6g} equals lambda_s = {lambda_s:.6g}: the closed-form eta(t) "
                "divides by lambda - lambda_s; perturb lambda_s"
            )
        d = (s0 - s_inf) / (decay - lambda_s)
        terms += [
            (c * s_inf / decay, 0.0),
            (-c * s_inf / decay, decay),
            (c * d, lambda_s),
            (-c * d, decay),
        ]
        slowest = min(decay, lambda_s)
    envelope = ExpSum(terms=tuple(terms))

    step = ETA_GRID_FACTOR / slowest
    grid = step * np.arange(int(ETA_GRID_SPAN / ETA_GRID_FACTOR) + 1)
    limit = c * s_inf / decay
    peak = max(float(np.max(eval_expsum(envelope, grid))), kappa * eta0, limit)
    return envelope, ETA_BAR_SAFETY * peak


def gamma_constants(
    graph: AccessibilityGraph,
    beta: Sequence[float],
    a_norm: float,
    b_norm: float,
    f_norm: float,
    kappa_theta: float,
    eta_bar: float,
    s0: float,
) -> list[float]:
    gammas = []
    for agent in graph.agents:
        own = beta[agent - 1]
        neighbor_sum = sum(
            (own + 2.0 * beta[j - 1]) * eta_bar + 3.0 * s0 for j in graph.neighbors(agent)
        )
        gammas.append(
            b_norm * f_norm * kappa_theta * neighbor_sum + kappa_theta * own * eta_bar * a_norm
        )
    return gammas


def tau_star(gamma: float, theta: float, s_inf: float) -> float:
    """Guaranteed minimum inter-access time; math.inf when the bound never binds."""
    if gamma < 0:
        raise SynthesisError(f"gamma must be nonnegative, got {gamma}")
    if gamma == 0:
        return math.inf
    ratio = s_inf / gamma
    if theta == 0:
        return ratio
    argument = theta * ratio
    if argument <= -1.0:
        return math.inf
    return math.log1p(argument) / theta


def tolerance_epsilon(
    kappa: float, n_agents: int, b_prime_norm: float, s_inf: float, decay: float
) -> float:
    if decay <= 0:
        raise ToleranceError(f"contraction rate lambda must be positive, got {decay}")
    return kappa * math.sqrt(n_agents) * b_prime_norm * s_inf / decay


def max_s_inf(
    kappa: float, n_agents: int, b_prime_norm: float, decay: float, epsilon: float
) -> float:
    """Largest s_inf meeting a requested tolerance epsilon."""
    scale = kappa * math.sqrt(n_agents) * b_prime_norm
    if scale == 0:
        return math.inf
    return decay * epsilon / scale


# =============================================================================
# PIPELINE
# =============================================================================


def _designer_bound(
    m: np.ndarray,
    choice: tuple[float, float],
    target: str,
    t_val: float,
    step: float,
) -> ExpBoundCert:
    kappa, rate = choice
    if kappa < 1.0:
        raise CertificateRejected(f"{target}: kappa must be at least 1, got {kappa}")
    logger.info(f"Validating designer bound for {target}: kappa={kappa}, rate={rate}")
    return validate_exp_bound(m, kappa, rate, t_val, step, target, BoundSource.DESIGNER)


def design_pipeline(
    dyn: AgentDynamics,
    graph: AccessibilityGraph,
    threshold: ThresholdParams,
    eta0: float,
    varrho: float | None = None,
    *,
    plant_bound: tuple[float, float] | None = None,
    contraction: tuple[float, float] | None = None,
    target_epsilon: float | None = None,
    scenario_hash: str = "",
    validation_horizon: float = VALIDATION_HORIZON,
    validation_step: float = VALIDATION_STEP,
) -> DesignCertificate:
    """Run every design step and assemble a checked certificate."""
    check_stabilizable(dyn)
    if not has_spanning_tree(graph):
        raise GraphError(
            "no directed spanning tree in the accessibility graph (connectivity assumption)"
        )
    spectrum = spectral(graph)
    n_agents = graph.n_agents
    logger.info(f"Laplacian eigenvalues: {np.round(spectrum.eigenvalues, 6).tolist()}")

    if varrho is None:
        varrho = min_riccati_weight(spectrum)
        logger.info(f"Using the smallest admissible Riccati weight {varrho:.6g}")
    p, residual = solve_riccati(dyn, varrho)
    gain = design_gain(dyn, p, spectrum, varrho)
    logger.info(f"Gain designed (Riccati residual {residual:.2e})")

    if plant_bound is None:
        plant = exp_bound(
            dyn.a, validation_horizon, validation_step, target="plant", kappa_limit=KAPPA_LIMIT
        )
    else:
        plant = _designer_bound(
            dyn.a, plant_bound, "plant", validation_horizon, validation_step
        )

    acheck = build_acheck(dyn, gain.f, spectrum)
    if contraction is None or acheck.size == 0:
        closed = contraction_bound(acheck, validation_horizon, validation_step)
    else:
        if contraction[1] >= 0:
            raise CertificateRejected(f"contraction rate {contraction[1]} is not negative")
        closed = _designer_bound(
            acheck, contraction, "acheck", validation_horizon, validation_step
        )
    decay = -closed.rate

    b_prime = compute_bprime_norm(spectrum, dyn)
    beta = beta_norms(spectrum, gain.f)
    if target_epsilon is not None:
        ceiling = max_s_inf(closed.kappa, n_agents, b_prime, decay, target_epsilon)
        if threshold.s_inf > ceiling:
            raise ToleranceError(
                f"s_inf = {threshold.s_inf} exceeds {ceiling:.6g}, the largest value meeting "
                f"epsilon = {target_epsilon}"
            )

    eta, eta_bar = eta_envelope(closed.kappa, decay, eta0, n_agents, b_prime, threshold)
    gamma = gamma_constants(
        graph,
        beta,
        a_norm=float(np.linalg.norm(dyn.a, 2)),
        b_norm=float(np.linalg.norm(dyn.b, 2)),
        f_norm=float(np.linalg.norm(gain.f, 2)),
        kappa_theta=plant.kappa,
        eta_bar=eta_bar,
        s0=threshold.s0,
    )
    logger.info(GAMMA_BRACKETING_NOTE)
    taus = [tau_star(g, plant.rate, threshold.s_inf) for g in gamma]
    epsilon = tolerance_epsilon(closed.kappa, n_agents, b_prime, threshold.s_inf, decay)

    notes = [GAMMA_BRACKETING_NOTE]
    for cert in (plant, closed):
        if cert.source is BoundSource.DESIGNER:
            notes.append(
                f"{cert.target} bound (kappa={cert.kappa}, rate={cert.rate}) supplied by the "
                f"designer and validated on [0, {cert.validated_until:g}] s"
            )

    certificate = DesignCertificate(
        scenario_hash=scenario_hash,
        n_agents=n_agents,
        gain=gain,
        plant_bound=plant,
        contraction=closed,
        b_prime_norm=b_prime,
        beta=beta,
        gamma=gamma,
        tau_star=taus,
        epsilon=epsilon,
        threshold=threshold,
        eta0=eta0,
        eta_bar=eta_bar,
        eta=eta,
        eigenvalues=spectrum.eigenvalues,
        phi=spectrum.phi,
        notes=notes,
    )
    logger.info(f"Certificate ready: epsilon={epsilon:.6g}, eta_bar={eta_bar:.6g}")
    return certificate
