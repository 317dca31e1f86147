"""Per-batch refinement of the sparsity-prior approximation term.

Each network weight carries a Gaussian-times-Bernoulli approximation of its
spike-and-slab prior. Once per batch we run a standard expectation
propagation sweep over all weights: divide the term out of the posterior
(cavity), match moments against the exact mixture prior

    slab_prob * N(w | 0, sigma0_sq)  +  (1 - slab_prob) * delta(w)

with the selector weight taken from the cavity, replace the term by damped
division, and recompute the posterior as cavity times the damped term (with
damping 1 that is exactly the tilted moments). Guards: a non-positive cavity
precision skips the weight entirely; a non-positive divided term precision
keeps the old term and moves only the posterior, to the tilted moments.
Damping interpolates the term in natural parameters.

All integrals are closed-form: the spike is an exact point mass, so the
tilted normalizer mixes the two Gaussian heights N(0 | m_cav, v_cav +
sigma0_sq) and N(0 | m_cav, v_cav).

Embedding posteriors are never touched here. Weight updates within a sweep
are independent (cavity/tilt uses pre-sweep values only), so the sweep is
deterministic and could fan out across threads.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logit

from .posterior_store import (DEFAULT_V_FLOOR, Hyperparams, ModelState,
                              WeightPosterior)

# selector probabilities stay strictly inside (0, 1)
_RHO_LO = 1e-300
_RHO_HI = float(np.nextafter(1.0, 0.0))


def _log_normal_at_zero(mean, var):
    return -0.5 * (np.log(2.0 * math.pi * var) + mean * mean / var)


def _refine_arrays(mean, var, rho_post, term_mean, term_var, term_logit,
                   slab_var: float, damping: float, v_floor: float) -> dict:
    """Vectorized EP sweep over parallel arrays of weight sites.

    The posterior is recomputed as cavity times the damped term, so repeated
    sweeps on a fixed cavity contract geometrically instead of re-applying
    the prior; with damping 1 this equals assigning the tilted moments
    directly. When term division fails (non-positive precision) the old term
    is kept and only the posterior moves, to the tilted moments.
    """
    prec = 1.0 / var
    prec0 = 1.0 / term_var
    prec_cav = prec - prec0
    ok = np.isfinite(prec_cav) & (prec_cav > 0)
    # neutralize invalid sites so the vector math stays finite; results for
    # those sites are discarded below
    safe_prec_cav = np.where(ok, prec_cav, 1.0)
    v_cav = 1.0 / safe_prec_cav
    m_cav = v_cav * (mean * prec - term_mean * prec0)
    logit_cav = logit(np.clip(rho_post, _RHO_LO, _RHO_HI)) - term_logit

    log_slab = log_expit(logit_cav) + _log_normal_at_zero(m_cav, v_cav + slab_var)
    log_spike = log_expit(-logit_cav) + _log_normal_at_zero(m_cav, v_cav)
    delta = log_slab - log_spike
    log_norm = np.logaddexp(log_slab, log_spike)
    r1 = expit(delta)

    v_slab = 1.0 / (safe_prec_cav + 1.0 / slab_var)
    m_slab = v_slab * m_cav * safe_prec_cav
    e1 = r1 * m_slab
    e2 = r1 * (v_slab + m_slab * m_slab)
    # e2 - e1^2 in a cancellation-free form
    v_tilted = np.maximum(r1 * v_slab + r1 * (1.0 - r1) * m_slab * m_slab, v_floor)

    # term replacement by division, damped in natural parameters
    prec0_full = 1.0 / v_tilted - safe_prec_cav
    keep_term = ~np.isfinite(prec0_full) | (prec0_full <= 0)
    safe_prec0_full = np.where(keep_term, prec0, prec0_full)
    eta0_full = np.where(keep_term, term_mean * prec0,
                         e1 / v_tilted - m_cav * safe_prec_cav)
    prec0_new = (1.0 - damping) * prec0 + damping * safe_prec0_full
    eta0_new = (1.0 - damping) * term_mean * prec0 + damping * eta0_full
    logit_term_full = delta - logit_cav
    logit_term_new = (1.0 - damping) * term_logit + damping * logit_term_full

    # posterior = cavity * damped term; tilted moments directly when the
    # term had to be kept
    prec_post = safe_prec_cav + prec0_new
    post_var = np.where(keep_term, v_tilted, 1.0 / prec_post)
    post_mean = np.where(keep_term, e1,
                         (m_cav * safe_prec_cav + eta0_new) / prec_post)
    post_rho = expit(logit_cav + np.where(keep_term, term_logit, logit_term_new))

    new_mean = np.where(ok, post_mean, mean)
    new_var = np.where(ok, np.maximum(post_var, v_floor), var)
    new_rho = np.where(ok, np.clip(post_rho, _RHO_LO, _RHO_HI), rho_post)

    untouched = ~ok | keep_term
    new_term_var = np.where(untouched, term_var, 1.0 / prec0_new)
    new_term_mean = np.where(untouched, term_mean, eta0_new / prec0_new)
    new_term_logit = np.where(untouched, term_logit, logit_term_new)

    return {
        "mean": new_mean, "var": new_var, "rho_post": new_rho,
        "term_mean": new_term_mean, "term_var": new_term_var,
        "term_logit": new_term_logit,
        "tilted_norm": np.exp(log_norm), "tilted_mean": e1, "tilted_second": e2,
        "slab_prob": r1, "ok": ok, "term_kept": keep_term & ok,
    }


@dataclass(frozen=True)
class RefineResult:
    site: WeightPosterior
    tilted_norm: float
    tilted_mean: float
    tilted_second_moment: float
    slab_prob: float
    skipped: bool
    term_kept: bool


def refine_weight(wp: WeightPosterior, hyper: Hyperparams, damping: float = 0.5,
                  v_floor: float = DEFAULT_V_FLOOR) -> RefineResult:
    """Refine a single weight site; returns the new site plus the tilted
    normalizer and first two tilted moments (for verification)."""
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must be in (0, 1], got {damping}")
    arrays = _refine_arrays(
        np.array([wp.mean]), np.array([wp.var]), np.array([wp.rho_post]),
        np.array([wp.term_mean]), np.array([wp.term_var]), np.array([wp.term_logit]),
        slab_var=hyper.sigma0_sq, damping=damping, v_floor=v_floor,
    )
    skipped = not bool(arrays["ok"][0])
    site = WeightPosterior(
        mean=float(arrays["mean"][0]), var=float(arrays["var"][0]),
        rho_post=float(arrays["rho_post"][0]), term_mean=float(arrays["term_mean"][0]),
        term_var=float(arrays["term_var"][0]), term_logit=float(arrays["term_logit"][0]),
    )
    return RefineResult(
        site=site,
        tilted_norm=float(arrays["tilted_norm"][0]),
        tilted_mean=float(arrays["tilted_mean"][0]),
        tilted_second_moment=float(arrays["tilted_second"][0]),
        slab_prob=float(arrays["slab_prob"][0]),
        skipped=skipped,
        term_kept=bool(arrays["term_kept"][0]),
    )


@dataclass(frozen=True)
class EpDiagnostics:
    guard_skips: int
    term_kept: int
    inhibited: int  # weights with selector probability < 0.5 after the sweep


def refine_all(state: ModelState, damping: float = 0.5,
               v_floor: float = DEFAULT_V_FLOOR) -> EpDiagnostics:
    """Refine every network weight exactly once; embeddings are untouched."""
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must be in (0, 1], got {damping}")
    skips = kept = inhibited = 0
    for lay in state.weights:
        out = _refine_arrays(
            lay.mean, lay.var, lay.rho_post, lay.term_mean, lay.term_var,
            lay.term_logit, slab_var=state.hyper.sigma0_sq, damping=damping,
            v_floor=v_floor,
        )
        lay.mean[...] = out["mean"]
        lay.var[...] = out["var"]
        lay.rho_post[...] = out["rho_post"]
        lay.term_mean[...] = out["term_mean"]
        lay.term_var[...] = out["term_var"]
        lay.term_logit[...] = out["term_logit"]
        skips += int((~out["ok"]).sum())
        kept += int(out["term_kept"].sum())
        inhibited += int((lay.rho_post < 0.5).sum())
    return EpDiagnostics(guard_skips=skips, term_kept=kept, inhibited=inhibited)
