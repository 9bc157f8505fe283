"""Bridge between the Python chain state and the compiled chunk drivers.

All persistent state lives in Python objects (ChainState, EvaluatedSet,
ProposalState); each call advances the compiled loop by one chunk and syncs
the scalars back, so checkpointing and resuming see exactly the same state
regardless of backend.
"""

import math

import numpy as np

from . import _core, chain, localpoly

_EMPTY_VEC = np.zeros(0)
_EMPTY_MAT = np.zeros((0, 0))


def _proposal_args(proposal_state):
    spec = proposal_state.spec
    kind = 1 if spec.kind == chain.ADAPTIVE_METROPOLIS else 0
    return (
        kind,
        proposal_state.chol,
        spec.adapt_scale,
        spec.adapt_eps,
        spec.adapt_start,
        spec.adapt_freeze,
        proposal_state.mean,
        proposal_state.sq,
        proposal_state.count,
    )


def _addend_args(model, config=None):
    use_addend = config is not None and config.surrogate_target == "likelihood"
    if use_addend:
        prior = getattr(model, "prior", None)
        if prior is None:
            raise ValueError(
                "surrogate_target='likelihood' needs a model with a Gaussian prior"
            )
        return 1, prior.mean, prior.precision
    return 0, _EMPTY_VEC, _EMPTY_MAT


def run_chunk(mode, state, store, model, config, proposal_state, samples, trace, nsteps):
    if mode == "la":
        _run_la(state, store, model, config, proposal_state, samples, trace, nsteps)
    else:
        _run_exact(state, model, proposal_state, samples, trace, nsteps)


def _run_la(state, store, model, config, proposal_state, samples, trace, nsteps):
    rng = state.rng
    had_nonfinite = state.n_nonfinite

    def values_getter():
        return store.values

    def refine_cb(x):
        chain.refine_surrogate(x, store, model, config, rng)

    def degen_cb(x):
        return chain._recover_degenerate(x, store, model, config, rng)

    def pois_cb(x):
        res = store.knn(x, config.k)
        report = localpoly.poisedness(
            x, store.points[res.indices], config.basis, config.poisedness_budget
        )
        return report.lambda2

    sched = config.schedule
    lyap = sched.lyapunov
    addend_code, add_mean, add_prec = _addend_args(model, config)
    lhat_valid = 1 if state.cache_version == store.version else 0
    lhat = state.log_g_hat_x if math.isfinite(state.log_g_hat_x) else 0.0

    out = _core.run_la_chunk(
        store._index,
        values_getter,
        refine_cb,
        degen_cb,
        pois_cb,
        rng,
        config.basis.indices,
        config.k,
        config.degree,
        sched.gamma0,
        sched.gamma1,
        sched.tau0,
        sched.eta,
        lyap.nu0,
        lyap.nu1,
        lyap.center,
        config.lambda_bar,
        addend_code,
        add_mean,
        add_prec,
        *_proposal_args(proposal_state),
        state.x,
        state.t,
        state.level,
        lhat,
        lhat_valid,
        state.n_accept,
        state.n_refine,
        state.n_refine_poisedness,
        state.n_nonfinite,
        samples,
        trace.accepted,
        trace.refined,
        trace.delta,
        trace.gamma,
        trace.level,
        trace.n_refine,
        nsteps,
    )
    (
        state.t,
        state.level,
        state.log_g_hat_x,
        _,
        state.n_accept,
        state.n_refine,
        state.n_refine_poisedness,
        state.n_nonfinite,
        proposal_state.count,
    ) = out
    state.n_propose = state.t
    state.cache_version = store.version
    if state.n_nonfinite > had_nonfinite and had_nonfinite == 0:
        chain.logger.warning(
            "non-finite surrogate values at %d proposals; rejected outright",
            state.n_nonfinite,
        )


def _run_exact(state, model, proposal_state, samples, trace, nsteps):
    rng = state.rng
    code = _core.TARGET_CODES.get(model.builtin_kind, 0)
    if code == 3:
        g_mean, g_prec = model.mean, model.precision
    else:
        g_mean, g_prec = _EMPTY_VEC, _EMPTY_MAT

    def target_cb(x):
        return model.log_density(x)

    addend_code, add_mean, add_prec = _addend_args(model)

    out = _core.run_exact_chunk(
        rng,
        code,
        target_cb,
        g_mean,
        g_prec,
        addend_code,
        add_mean,
        add_prec,
        *_proposal_args(proposal_state),
        state.x,
        state.t,
        state.log_g_hat_x,
        state.n_accept,
        samples,
        trace.accepted,
        nsteps,
    )
    state.t, state.log_g_hat_x, state.n_accept, n_eval_c, proposal_state.count = out
    state.n_propose = state.t
    if code != 0:
        model.n_evals += n_eval_c
