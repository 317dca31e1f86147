"""Self-verification: runs the independent oracles against the engine.

Exposed through the command line so a deployment can be sanity-checked in
the field; the test suite runs stricter, larger versions of the same checks.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc, expit, logit

from . import adf_engine, bnn, ep_prior, oracles, posterior_store, tensor_core
from .posterior_store import GammaPosterior, Hyperparams, WeightPosterior
from .seeding import make_rng
from .tensor_core import TensorShape, ValueKind


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _naive_forward(widths, activation, weights, x):
    """Straight-line reimplementation of the layer recursion (scalar loops)."""
    act = {"relu": lambda v: max(v, 0.0), "tanh": math.tanh,
           "identity": lambda v: v}[activation]
    h = [float(v) for v in x]
    m_total = len(widths) - 1
    for m in range(1, m_total + 1):
        prev = h + [1.0]
        scale = math.sqrt(len(prev))
        z = []
        for j in range(widths[m]):
            acc = 0.0
            for t, hv in enumerate(prev):
                acc += float(weights[m - 1][j][t]) * hv
            z.append(acc / scale)
        h = [act(v) for v in z] if m < m_total else z
    return h[0]


def _random_net(rng, activation="tanh", max_width=8, max_hidden_layers=2):
    v0 = int(rng.integers(2, 6))
    hidden = [int(rng.integers(2, max_width + 1))
              for _ in range(int(rng.integers(1, max_hidden_layers + 1)))]
    spec = bnn.NetworkSpec.for_factorization(v0, hidden, activation)
    weights = [rng.standard_normal(s) for s in spec.weight_shapes]
    x = rng.standard_normal(v0)
    return spec, weights, x


def check_gradient_fd(seed: int = 0, n_nets: int = 10) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_nets):
        spec, weights, x = _random_net(rng)
        layout = bnn.FlatParamLayout(spec)
        alpha, tape = bnn.forward_mean(spec, weights, x)
        g = bnn.backprop_gradient(spec, weights, x, tape)

        def f(vec):
            mats, xin = layout.unpack(vec)
            a, _ = bnn.forward_mean(spec, mats, xin)
            return a

        fd = oracles.fd_gradient(f, layout.pack(weights, x))
        err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)))
        worst = max(worst, err)
    passed = worst <= 1e-5
    return CheckResult("gradient-vs-finite-differences", passed,
                       f"max scaled error {worst:.3e} over {n_nets} nets (tol 1e-5)")


def check_output_moments_mc(seed: int = 1, n_nets: int = 3,
                            n_samples: int = 200_000) -> CheckResult:
    rng = make_rng(seed)
    details = []
    passed = True
    for _ in range(n_nets):
        spec, weights, x = _random_net(rng, max_width=4, max_hidden_layers=1)
        w_vars = [rng.uniform(1e-4, 1e-2, s) for s in spec.weight_shapes]
        x_vars = rng.uniform(1e-4, 1e-2, x.shape[0])
        om = bnn.output_moments(spec, weights, w_vars, x, x_vars)
        mc = oracles.mc_output_moments(spec, weights, w_vars, x, x_vars,
                                       n_samples, seed=int(rng.integers(2 ** 31)))
        tol = max(4.0 * mc.se_var, 0.15 * mc.var)
        ok = abs(om.beta - mc.var) <= tol
        passed &= ok
        details.append(f"|beta-mc|={abs(om.beta - mc.var):.2e} tol={tol:.2e}")
    return CheckResult("output-moments-vs-monte-carlo", passed, "; ".join(details))


def check_evidence_binary(seed: int = 2) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    cases = [(z, b, y) for z in np.linspace(-30, 30, 41) for b in (0.0, 2.0)
             for y in (0.0, 1.0)]
    cases += [(float(rng.uniform(-8, 8)), float(rng.uniform(0, 10)),
               float(rng.integers(0, 2))) for _ in range(200)]
    for z_target, beta, y in cases:
        sign = 2.0 * y - 1.0
        alpha = sign * z_target * math.sqrt(1.0 + beta)
        ev = adf_engine.evidence_binary(alpha, beta, y)
        ref = 0.5 * erfc(-z_target / math.sqrt(2.0))
        if not (0.0 < math.exp(ev.log_z) <= 1.0) or not math.isfinite(ev.log_z):
            return CheckResult("evidence-binary-vs-reference-cdf", False,
                               f"unstable at z={z_target}")
        if ref >= 1e-12:
            worst = max(worst, abs(math.exp(ev.log_z) - ref) / ref)
        worst = max(worst, abs(ev.log_z - math.log(ref)) /
                    max(1.0, abs(math.log(ref))))
    return CheckResult("evidence-binary-vs-reference-cdf", worst <= 1e-10,
                       f"max relative error {worst:.3e} (tol 1e-10)")


def check_evidence_continuous(seed: int = 3, n_cases: int = 200) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    h = 1e-6
    for _ in range(n_cases):
        alpha = float(rng.uniform(-3, 3))
        beta = float(rng.uniform(0.01, 5))
        y = float(rng.uniform(-4, 4))
        gp = GammaPosterior(float(rng.uniform(0.5, 4)), float(rng.uniform(0.5, 4)))
        ev = adf_engine.evidence_continuous(alpha, beta, y, gp)
        fd_a = (adf_engine.evidence_continuous(alpha + h, beta, y, gp).log_z
                - adf_engine.evidence_continuous(alpha - h, beta, y, gp).log_z) / (2 * h)
        fd_b = (adf_engine.evidence_continuous(alpha, beta + h, y, gp).log_z
                - adf_engine.evidence_continuous(alpha, beta - h, y, gp).log_z) / (2 * h)
        for got, want in ((ev.dalpha, fd_a), (ev.dbeta, fd_b)):
            worst = max(worst, abs(got - want) / max(abs(want), 1e-3))
    return CheckResult("evidence-continuous-partials-vs-fd", worst <= 1e-6,
                       f"max relative error {worst:.3e} (tol 1e-6)")


def _random_linear_state(rng):
    v0 = int(rng.integers(1, 5))
    net = bnn.NetworkSpec((v0, 1), "identity")
    hyper = Hyperparams(ranks=(v0,))
    state = posterior_store.init_state(TensorShape((4,)), ValueKind.CONTINUOUS,
                                       net, hyper, seed=int(rng.integers(2 ** 31)))
    state.embeddings[0].mean[...] = rng.standard_normal((4, v0))
    state.embeddings[0].var[...] = rng.uniform(0.05, 2.0, (4, v0))
    state.weights[0].mean[...] = rng.standard_normal((1, v0 + 1))
    state.weights[0].var[...] = rng.uniform(0.05, 2.0, (1, v0 + 1))
    state.gamma = GammaPosterior(float(rng.uniform(0.5, 4)), float(rng.uniform(0.5, 4)))
    return state, v0


def check_adf_conjugate(seed: int = 4, n_cases: int = 200) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        state, v0 = _random_linear_state(rng)
        idx = (int(rng.integers(0, 4)),)
        x_mean, x_var, _ = state.gather_entry(idx)
        w_row = state.weights[0].mean[0].copy()
        w_var_row = state.weights[0].var[0].copy()
        hb = np.append(x_mean, 1.0) / math.sqrt(v0 + 1.0)
        g = np.concatenate([hb, w_row[:v0] / math.sqrt(v0 + 1.0)])
        mu = np.concatenate([w_row, x_mean])
        var = np.concatenate([w_var_row, x_var])
        alpha = float(w_row @ hb)
        noise = state.gamma.b / state.gamma.a
        s = float((g * g) @ var) + noise
        y = alpha + float(rng.normal(0, math.sqrt(s)))
        adf_engine.adf_update_entry(state, tensor_core.ObservedEntry(idx, y))
        post_mu = np.concatenate([state.weights[0].mean[0],
                                  state.gather_entry(idx)[0]])
        post_var = np.concatenate([state.weights[0].var[0],
                                   state.gather_entry(idx)[1]])
        for j in range(mu.shape[0]):
            noise_eff = s - g[j] * g[j] * var[j]
            want_m, want_v = oracles.conjugate_linear_update(
                mu[j], var[j], g[j], y - (alpha - g[j] * mu[j]), noise_eff)
            worst = max(worst, abs(post_mu[j] - want_m), abs(post_var[j] - want_v))
    return CheckResult("adf-update-vs-conjugate-oracle", worst <= 1e-8,
                       f"max abs error {worst:.3e} over {n_cases} cases (tol 1e-8)")


def check_ep_tilted(seed: int = 5, n_cases: int = 200) -> CheckResult:
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        m_cav = float(rng.uniform(-3, 3))
        v_cav = float(rng.uniform(0.05, 3))
        s0sq = float(rng.uniform(0.3, 3))
        p_cav = float(rng.uniform(0.05, 0.95))
        v0 = float(rng.uniform(0.5, 3))
        mu0 = float(rng.normal(0, 1))
        logit0 = float(rng.normal(0, 1))
        v = 1.0 / (1.0 / v_cav + 1.0 / v0)
        site = WeightPosterior(
            mean=v * (m_cav / v_cav + mu0 / v0), var=v,
            rho_post=float(expit(logit(p_cav) + logit0)),
            term_mean=mu0, term_var=v0, term_logit=logit0,
        )
        res = ep_prior.refine_weight(site, Hyperparams(sigma0_sq=s0sq, ranks=(1,)))
        slab_norm = 1.0 / math.sqrt(2.0 * math.pi * s0sq)
        z_q, e1_q, e2_q = oracles.quad_tilted_moments(
            m_cav, v_cav,
            factor=lambda w: p_cav * slab_norm * math.exp(-0.5 * w * w / s0sq),
            atom_weight=1.0 - p_cav,
        )
        for got, want in ((res.tilted_norm, z_q), (res.tilted_mean, e1_q),
                          (res.tilted_second_moment, e2_q)):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    sym = ep_prior.refine_weight(
        WeightPosterior(mean=0.0, var=0.5, rho_post=0.5, term_mean=0.0,
                        term_var=1.0, term_logit=0.0),
        Hyperparams(sigma0_sq=1.0, ranks=(1,)))
    sym_ok = abs(sym.slab_prob - (math.sqrt(2.0) - 1.0)) <= 1e-5
    return CheckResult("ep-tilted-vs-quadrature", worst <= 1e-8 and sym_ok,
                       f"max error {worst:.3e} (tol 1e-8); symmetric slab prob "
                       f"{sym.slab_prob:.5f} (want 0.41421)")


def check_tau_recursion(seed: int = 6, n_entries: int = 30) -> CheckResult:
    rng = make_rng(seed)
    net = bnn.NetworkSpec.for_factorization(4, [3], "tanh")
    hyper = Hyperparams(ranks=(2, 2))
    state = posterior_store.init_state(TensorShape((5, 5)), ValueKind.CONTINUOUS,
                                       net, hyper, seed=seed)
    layout = bnn.FlatParamLayout(net)
    worst = 0.0
    for n in range(1, n_entries + 1):
        idx = (int(rng.integers(0, 5)), int(rng.integers(0, 5)))
        y = float(rng.normal(0, 1))
        x_mean, x_var, _ = state.gather_entry(idx)
        w_means = [lay.mean.copy() for lay in state.weights]
        w_vars = [lay.var.copy() for lay in state.weights]

        def f(vec):
            mats, xin = layout.unpack(vec)
            return _naive_forward(net.widths, net.activation, mats, xin)

        point = layout.pack(w_means, x_mean)
        alpha_ind = f(point)
        g_ind = oracles.fd_gradient(f, point)
        beta_ind = float((g_ind * g_ind) @ layout.pack(w_vars, x_var))
        a_prev, b_prev = state.gamma.a, state.gamma.b
        adf_engine.adf_update_entry(state, tensor_core.ObservedEntry(idx, y))
        if state.gamma.a != a_prev + 0.5:
            return CheckResult("tau-recursion", False,
                               f"shape not exactly a0 + n/2 at n={n}")
        want_incr = 0.5 * ((y - alpha_ind) ** 2 + beta_ind)
        got_incr = state.gamma.b - b_prev
        worst = max(worst, abs(got_incr - want_incr) / max(1.0, abs(want_incr)))
    passed = worst <= 1e-6 and state.gamma.a == hyper.a0 + n_entries / 2.0
    return CheckResult("tau-recursion", passed,
                       f"shape exact; max rate-increment error {worst:.3e} (tol 1e-6)")


ALL_CHECKS = (
    check_gradient_fd,
    check_output_moments_mc,
    check_evidence_binary,
    check_evidence_continuous,
    check_adf_conjugate,
    check_ep_tilted,
    check_tau_recursion,
)


def run_checks(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, check in enumerate(ALL_CHECKS):
        results.append(check(seed=seed + i))
    return results
