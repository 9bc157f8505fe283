"""The sampling kernel: surrogate-based transition step and exact baseline.

Each step draws a proposal, possibly refines the surrogate at the current
point (when the local error indicator exceeds the level threshold, or the
poisedness constant exceeds its bound), then accepts or rejects using the
tail-corrected surrogate log-density.

RNG consumption contract (shared by the Python loop and the compiled
driver, which both advance the same generator):

    1. d standard normals for the proposal,
    2. per random-fallback refinement attempt: d standard normals plus one
       uniform (direction + radius of a uniform in-ball draw),
    3. one uniform for the accept/reject decision (always drawn, even when
       the proposal is rejected outright).

The level counter increases by at most one per step; for decay rates
gamma1 >= 0.5 it equals the closed-form level formula, while slower rates
(allowed only via the schedule override) make the counter lag, which is the
documented failure mode of slow threshold decay.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend, localpoly, schedule
from .basis import MultiIndexSet
from .errors import DegenerateBallError, DegenerateGeometryError
from .localpoly import ball_candidates
from .points import EvaluatedSet
from .schedule import RefinementSchedule

__all__ = [
    "ProposalSpec",
    "ProposalState",
    "KernelConfig",
    "ChainState",
    "Trace",
    "RunResult",
    "bootstrap",
    "check_and_refine",
    "refine_surrogate",
    "la_step",
    "exact_step",
    "run",
]

logger = logging.getLogger(__name__)

RW_GAUSSIAN = "random-walk-gaussian"
ADAPTIVE_METROPOLIS = "adaptive-metropolis"


@dataclass(frozen=True)
class ProposalSpec:
    """Gaussian random-walk proposal, optionally with Haario adaptation."""

    kind: str
    cov: np.ndarray
    adapt_scale: float = None
    adapt_eps: float = 1e-6
    adapt_start: int = 1000
    adapt_freeze: int = 0  # 0 = never freeze

    def __post_init__(self):
        if self.kind not in (RW_GAUSSIAN, ADAPTIVE_METROPOLIS):
            raise ValueError(f"unknown proposal kind: {self.kind!r}")
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "cov", cov)
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("proposal covariance must be positive definite") from exc
        d = cov.shape[0]
        if self.adapt_scale is None:
            object.__setattr__(self, "adapt_scale", 2.38**2 / d)

    @property
    def dim(self):
        return self.cov.shape[0]


class ProposalState:
    """Mutable proposal state: current Cholesky factor plus running moments."""

    def __init__(self, spec):
        self.spec = spec
        d = spec.dim
        self.chol = np.linalg.cholesky(spec.cov)
        self.mean = np.zeros(d)
        self.sq = np.zeros((d, d))  # sum of outer products of deviations
        self.count = 0

    def update(self, x, t):
        """Fold the new state into the empirical covariance (Haario)."""
        spec = self.spec
        if spec.kind != ADAPTIVE_METROPOLIS:
            return
        if spec.adapt_freeze > 0 and t >= spec.adapt_freeze:
            return
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.sq += np.outer(delta, x - self.mean)
        if t >= spec.adapt_start and self.count >= 2:
            d = spec.dim
            emp = self.sq / (self.count - 1)
            prop = spec.adapt_scale * emp + spec.adapt_eps * np.eye(d)
            self.chol = np.linalg.cholesky(prop)


@dataclass(frozen=True)
class KernelConfig:
    """Parameters of the surrogate-based transition kernel."""

    k: int
    basis: MultiIndexSet
    schedule: RefinementSchedule
    lambda_bar: float = math.inf
    init_radius: float = 1.0
    surrogate_target: str = "density"  # or "likelihood" (exact prior added)
    poisedness_budget: int = 1024

    def __post_init__(self):
        if self.k < self.basis.q:
            raise ValueError(
                f"k={self.k} is below the interpolation size q={self.basis.q}"
            )
        if not self.lambda_bar > 1.0:
            raise ValueError(f"lambda_bar must exceed 1, got {self.lambda_bar}")
        if self.init_radius <= 0.0:
            raise ValueError(f"init_radius must be positive, got {self.init_radius}")
        if self.surrogate_target not in ("density", "likelihood"):
            raise ValueError(f"unknown surrogate_target: {self.surrogate_target!r}")

    @property
    def degree(self):
        return self.basis.max_degree

    @property
    def bootstrap_size(self):
        return max(self.k, self.basis.q) + 2


@dataclass
class ChainState:
    """Current chain position plus counters."""

    t: int
    x: np.ndarray
    log_g_hat_x: float
    level: int
    rng: np.random.Generator
    n_accept: int = 0
    n_propose: int = 0
    n_refine: int = 0
    n_refine_poisedness: int = 0
    n_nonfinite: int = 0
    # fit/knn caches, valid while (x, store.version) are unchanged; never
    # serialized (deterministically recomputable on resume)
    cache_version: int = field(default=-1, repr=False)
    _knn: object = field(default=None, repr=False)
    _fit: object = field(default=None, repr=False)


@dataclass
class Trace:
    """Per-step records of one run."""

    accepted: np.ndarray
    refined: np.ndarray
    delta: np.ndarray
    gamma: np.ndarray
    level: np.ndarray
    n_refine: np.ndarray
    bootstrap_evals: int

    @classmethod
    def empty(cls, n, bootstrap_evals=0):
        return cls(
            accepted=np.zeros(n, dtype=np.uint8),
            refined=np.zeros(n, dtype=np.uint8),
            delta=np.full(n, np.nan),
            gamma=np.full(n, np.nan),
            level=np.zeros(n, dtype=np.int64),
            n_refine=np.zeros(n, dtype=np.int64),
            bootstrap_evals=bootstrap_evals,
        )


@dataclass
class RunResult:
    samples: np.ndarray
    trace: Trace
    state: ChainState
    store: EvaluatedSet
    proposal_state: ProposalState


def _uniform_in_ball(rng, center, radius):
    """Uniform draw in the closed ball; consumes d normals + 1 uniform."""
    d = center.shape[0]
    v = rng.standard_normal(d)
    u = rng.random()
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return center.copy()
    return center + radius * (u ** (1.0 / d)) * v / nv


def bootstrap(x0, config, model, backend=None):
    """Initial evaluated set: x0 plus quasi-random points in a ball.

    Evaluates the model at max(k, q) + 2 points so the first fit at x0 is
    well posed.  Deterministic (low-discrepancy design, no RNG use).
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    store = EvaluatedSet(x0.shape[0], backend=backend)
    store.insert(x0, model.eval(x0))
    target = config.bootstrap_size
    batch = target - 1
    while len(store) < target:
        for p in ball_candidates(x0, config.init_radius, x0.shape[0], batch):
            if len(store) >= target:
                break
            if store.find_duplicate(p) < 0:
                store.insert(p, model.eval(p))
        batch *= 2
    return store


def _neighbor_fit(x, store, config, knn_result=None):
    res = knn_result if knn_result is not None else store.knn(x, config.k)
    pts = store.points[res.indices]
    vals = store.values[res.indices]
    return localpoly.fit(
        x, pts, vals, config.basis, neighbor_indices=res.indices
    )


def surrogate_value(x, store, config):
    """Fit-and-evaluate the surrogate at x. Raises on degenerate geometry."""
    f = _neighbor_fit(x, store, config)
    return localpoly.evaluate(f, x)


# A refinement site closer than this fraction of the ball radius to an
# existing point counts as a collision: such a point adds no information to
# the local system and repeating it produces numerically singular fits.
SITE_COLLISION_FRAC = 1e-3


def refine_surrogate(x, store, model, config, rng, knn_result=None):
    """Add one true-model evaluation near x at the poisedness extremizer.

    Falls back to a uniform random point in the ball when the extremizer
    collides with an existing point (within a ball-relative tolerance); more
    than 8 collisions raise DegenerateBallError.
    """
    res = knn_result if knn_result is not None else store.knn(x, config.k)
    pts = store.points[res.indices]
    report = localpoly.poisedness(x, pts, config.basis, config.poisedness_budget)
    site = localpoly.refinement_site(report)
    site_tol = SITE_COLLISION_FRAC * res.radius
    if store.nearest_distance(site) > site_tol:
        store.insert(site, model.eval(site))
        return
    for _ in range(8):
        cand = _uniform_in_ball(rng, np.asarray(x, dtype=float), res.radius)
        if store.nearest_distance(cand) > site_tol:
            store.insert(cand, model.eval(cand))
            return
    raise DegenerateBallError(
        f"could not place a refinement point near {x} after 8 collisions"
    )


def _recover_degenerate(x, store, model, config, rng):
    """Insert random in-ball points until the fit at x becomes well posed.

    Returns (surrogate value, number of model evaluations spent).
    """
    last = None
    inserted = 0
    for _ in range(8):
        res = store.knn(x, config.k)
        cand = _uniform_in_ball(rng, np.asarray(x, dtype=float), res.radius)
        if store.find_duplicate(cand) < 0:
            store.insert(cand, model.eval(cand))
            inserted += 1
        try:
            return surrogate_value(x, store, config), inserted
        except DegenerateGeometryError as exc:
            last = exc
    raise DegenerateBallError(
        f"local geometry at {x} stayed degenerate after 8 random insertions "
        f"(condition estimate {last.condition_estimate:.3g})"
    )


def check_and_refine(x, state, store, model, config):
    """Refinement check at x for the current level; refines at most once.

    Returns (gamma_x, delta_x, refined_flag).  Triggers on the primary
    criterion delta^(p+1) > gamma(x) (strict), or on the poisedness bound
    when lambda_bar is finite.
    """
    sched = config.schedule
    res = store.knn(x, config.k)
    delta = res.radius
    gamma_x = schedule.threshold(x, state.level, sched)
    indicator = localpoly.error_indicator(delta, config.degree)
    trigger = indicator > gamma_x
    poise_trigger = False
    if not trigger and math.isfinite(config.lambda_bar):
        pts = store.points[res.indices]
        report = localpoly.poisedness(x, pts, config.basis, config.poisedness_budget)
        poise_trigger = report.lambda2 > config.lambda_bar
    if trigger or poise_trigger:
        refine_surrogate(x, store, model, config, state.rng, knn_result=res)
        state.n_refine += 1
        if poise_trigger:
            state.n_refine_poisedness += 1
    return gamma_x, delta, bool(trigger or poise_trigger)


def _cached_surrogate(state, store, model, config):
    if state.cache_version != store.version:
        try:
            state.log_g_hat_x = surrogate_value(state.x, store, config)
        except DegenerateGeometryError:
            value, inserted = _recover_degenerate(
                state.x, store, model, config, state.rng
            )
            state.log_g_hat_x = value
            state.n_refine += inserted
        state.cache_version = store.version
    return state.log_g_hat_x


def la_step(state, store, model, config, proposal_state, trace=None):
    """One surrogate-based transition; mutates state and possibly store."""
    rng = state.rng
    sched = config.schedule
    t = state.t + 1

    # 1. proposal draw
    z = rng.standard_normal(state.x.shape[0])
    x_prop = state.x + proposal_state.chol @ z

    # 2. level advances at most once per step
    if schedule.level(t, sched) > state.level:
        state.level += 1

    # 3. refinement check at the current point
    gamma_x, delta_x, refined = check_and_refine(state.x, state, store, model, config)

    # 4. surrogate values (current value cached across steps)
    lhat_x = _cached_surrogate(state, store, model, config)
    try:
        lhat_xp = surrogate_value(x_prop, store, config)
    except DegenerateGeometryError:
        lhat_xp = math.nan

    gamma_xp = schedule.threshold(x_prop, state.level, sched)
    qv = schedule.tail_correction(
        state.x, x_prop, gamma_x, gamma_xp, sched.eta, sched.lyapunov
    )

    log_ratio = (lhat_xp + qv) - lhat_x
    if config.surrogate_target == "likelihood":
        log_ratio += model.exact_addend(x_prop) - model.exact_addend(state.x)

    # 5. accept/reject; the uniform is always consumed
    u = rng.random()
    if not math.isfinite(lhat_xp):
        state.n_nonfinite += 1
        if state.n_nonfinite == 1:
            logger.warning(
                "non-finite surrogate value at proposal %s (step %d); rejecting",
                x_prop,
                t,
            )
        accepted = False
    else:
        accepted = math.log(u) < log_ratio

    if accepted:
        state.x = x_prop
        state.log_g_hat_x = lhat_xp
        state.cache_version = store.version
        state.n_accept += 1
    state.n_propose += 1
    state.t = t

    proposal_state.update(state.x, t)

    if trace is not None:
        i = t - 1
        trace.accepted[i] = accepted
        trace.refined[i] = refined
        trace.delta[i] = delta_x
        trace.gamma[i] = gamma_x
        trace.level[i] = state.level
        trace.n_refine[i] = state.n_refine
    return state


def exact_step(state, model, proposal_state, trace=None):
    """Standard Metropolis-Hastings step with exact target evaluations."""
    rng = state.rng
    t = state.t + 1
    z = rng.standard_normal(state.x.shape[0])
    x_prop = state.x + proposal_state.chol @ z
    log_pi_prop = model.log_density(x_prop)
    u = rng.random()
    accepted = math.log(u) < (log_pi_prop - state.log_g_hat_x)
    if accepted:
        state.x = x_prop
        state.log_g_hat_x = log_pi_prop
        state.n_accept += 1
    state.n_propose += 1
    state.t = t
    proposal_state.update(state.x, t)
    if trace is not None:
        i = t - 1
        trace.accepted[i] = accepted
        trace.level[i] = state.level
        trace.n_refine[i] = state.n_refine
    return state


def _init_la(x0, config, model, rng, backend=None):
    store = bootstrap(x0, config, model, backend=backend)
    state = ChainState(
        t=0,
        x=np.asarray(x0, dtype=float).reshape(-1).copy(),
        log_g_hat_x=math.nan,
        level=0,
        rng=rng,
    )
    _cached_surrogate(state, store, model, config)
    return state, store


def run(
    x0,
    T,
    config,
    model,
    proposal,
    seed=0,
    mode="la",
    backend=None,
    chunk_callback=None,
    chunk_size=0,
):
    """Run a chain for T steps; deterministic given the seed.

    ``config`` is the KernelConfig (ignored in exact mode except for trace
    shape), ``proposal`` a ProposalSpec.  ``chunk_callback(state, ...)`` runs
    every ``chunk_size`` steps (checkpoint hook).  Returns a RunResult with
    samples (T, d), per-step trace, final state, and the evaluated set.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if mode not in ("la", "exact"):
        raise ValueError(f"unknown mode: {mode!r}")
    backend_name = _backend.resolve(backend)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(
        np.random.PCG64(seed)
    )
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    d = x0.shape[0]
    if model.dim != d:
        raise ValueError(f"model dim {model.dim} does not match x0 dim {d}")

    proposal_state = ProposalState(proposal)
    samples = np.empty((T, d))

    if mode == "la":
        state, store = _init_la(x0, config, model, rng, backend=backend_name)
        trace = Trace.empty(T, bootstrap_evals=len(store))
    else:
        store = None
        state = ChainState(
            t=0, x=x0.copy(), log_g_hat_x=model.log_density(x0), level=0, rng=rng
        )
        trace = Trace.empty(T, bootstrap_evals=0)

    compiled = backend_name == "compiled" and _backend.HAVE_CORE
    if compiled:
        from . import _driver

        step_chunk = chunk_size if chunk_size > 0 else T
        while state.t < T:
            n = min(step_chunk, T - state.t)
            _driver.run_chunk(
                mode, state, store, model, config, proposal_state, samples, trace, n
            )
            if chunk_callback is not None and state.t < T:
                chunk_callback(state, store, proposal_state, samples, trace)
    else:
        next_cb = chunk_size if chunk_size > 0 else T + 1
        while state.t < T:
            if mode == "la":
                la_step(state, store, model, config, proposal_state, trace)
            else:
                exact_step(state, model, proposal_state, trace)
            samples[state.t - 1] = state.x
            if chunk_callback is not None and state.t % next_cb == 0 and state.t < T:
                chunk_callback(state, store, proposal_state, samples, trace)

    return RunResult(
        samples=samples,
        trace=trace,
        state=state,
        store=store,
        proposal_state=proposal_state,
    )
