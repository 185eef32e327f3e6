"""Compiled single-chain sampler for the monotone effect curve posterior.

``delta`` is integrated out of the target analytically (its conditional
is normal), the remaining coordinates are updated one at a time by
random-walk Metropolis with an adaptive joint move on top, and ``delta`` is drawn exactly from its
conditional after every sweep. All randomness arrives pre-drawn so the
result depends only on the caller's streams.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _state(y, u, ls, lt, stats, c, prior, out_alpha):
    """Collapsed log target; also returns the delta conditional (mean, sd)."""
    A0, A2, ssw, K, J, I, N, const = stats[:8]
    dvar, sdvar, lo, hi = prior
    S = c.shape[0]
    b1 = stats[8:8 + S]
    b2 = stats[8 + S:8 + 2 * S]
    C1 = stats[8 + 2 * S:8 + 2 * S + S * S]
    C2 = stats[8 + 2 * S + S * S:8 + 2 * S + 2 * S * S]

    m = 0.0
    for t in range(S - 1):
        if y[t] > m:
            m = y[t]
    tot = math.exp(-m)
    for t in range(S - 1):
        tot += math.exp(y[t] - m)
    lse = m + math.log(tot)
    sum_log_alpha = 0.0
    conc_sum = 0.0
    log_dir = 0.0
    omega = lo + (hi - lo) / (1.0 + math.exp(-u))
    for t in range(S):
        la = (y[t] if t < S - 1 else 0.0) - lse
        out_alpha[t] = math.exp(la)
        sum_log_alpha += la
        conc = c[t] * omega
        conc_sum += conc
        log_dir += (conc - 1.0) * la - math.lgamma(conc)
    log_dir += math.lgamma(conc_sum)

    sigma2 = math.exp(2.0 * ls)
    tau2 = math.exp(2.0 * lt)
    a = tau2 / sigma2
    g = K * a / (1.0 + J * K * a)
    # H = cumsum(alpha)
    H = np.empty(S)
    acc = 0.0
    for t in range(S):
        acc += out_alpha[t]
        H[t] = acc
    b1H = 0.0
    b2H = 0.0
    H1H = 0.0
    H2H = 0.0
    for s in range(S):
        b1H += b1[s] * H[s]
        b2H += b2[s] * H[s]
        r1 = 0.0
        r2 = 0.0
        for t in range(S):
            r1 += C1[s * S + t] * H[t]
            r2 += C2[s * S + t] * H[t]
        H1H += H[s] * r1
        H2H += H[s] * r2
    prec = K * (H1H - g * H2H) / sigma2 + 1.0 / dvar
    lin = K * (b1H - g * b2H) / sigma2
    quad0 = K * (A0 - g * A2) + ssw
    ll = -0.5 * (const + (N - J) * 2.0 * ls + (I - 1.0) * math.log1p(J * K * a) + quad0 / sigma2)
    ll += 0.5 * lin * lin / prec - 0.5 * math.log(prec * dvar)
    lp = log_dir - 0.5 * (sigma2 + tau2) / sdvar
    s_u = 1.0 / (1.0 + math.exp(-u))
    log_jac = math.log(hi - lo) + math.log(s_u) + math.log1p(-s_u) + sum_log_alpha + ls + lt
    return ll + lp + log_jac, lin / prec, 1.0 / math.sqrt(prec), omega


@njit(cache=True)
def run_chain(stats, c, prior, z, logu, y0, u0, ls0, lt0, log_scale0,
              n_warmup, adapt_batch, target):
    """One chain of coordinate-wise updates plus a joint adaptive move.

    The joint move proposes all transformed coordinates at once with the
    covariance of the first half of warmup, scaled toward ``target``
    acceptance; it switches on halfway through warmup.
    """
    S = c.shape[0]
    n_iter = z.shape[0]
    nb = S + 2
    keep = n_iter - n_warmup
    d_out = np.empty(keep)
    o_out = np.empty(keep)
    s_out = np.empty(keep)
    t_out = np.empty(keep)
    a_out = np.empty((keep, S))
    accepted = np.zeros(nb + 1)
    batch = np.zeros(nb + 1)
    log_scale = np.empty(nb + 1)
    log_scale[:nb] = log_scale0
    log_scale[nb] = math.log(2.38 / math.sqrt(nb))
    x = np.empty(nb)
    x[:S - 1] = y0
    x[S - 1] = u0
    x[S] = ls0
    x[S + 1] = lt0
    prop_x = x.copy()
    alpha = np.empty(S)
    scratch = np.empty(S)
    cur, mean, sd, omega = _state(x[:S - 1], x[S - 1], x[S], x[S + 1], stats, c, prior, alpha)
    # running moments for the joint proposal
    n_mom = 0
    mom_mean = np.zeros(nb)
    mom_m2 = np.zeros((nb, nb))
    chol = np.eye(nb)
    joint_on = False
    start_mom = n_warmup // 4
    start_joint = n_warmup // 2
    n_batches = 0
    for it in range(n_iter):
        for b in range(nb):
            step = math.exp(log_scale[b]) * z[it, b]
            old = x[b]
            x[b] = old + step
            prop, pm, psd, pom = _state(x[:S - 1], x[S - 1], x[S], x[S + 1], stats, c, prior, scratch)
            ok = logu[it, b] < prop - cur
            if ok:
                cur, mean, sd, omega = prop, pm, psd, pom
                for t in range(S):
                    alpha[t] = scratch[t]
                if it < n_warmup:
                    batch[b] += 1.0
                else:
                    accepted[b] += 1.0
            else:
                x[b] = old
        if joint_on:
            lam = math.exp(log_scale[nb])
            for i in range(nb):
                acc = 0.0
                for j in range(i + 1):
                    acc += chol[i, j] * z[it, nb + 1 + j]
                prop_x[i] = x[i] + lam * acc
            prop, pm, psd, pom = _state(prop_x[:S - 1], prop_x[S - 1], prop_x[S], prop_x[S + 1],
                                        stats, c, prior, scratch)
            if logu[it, nb] < prop - cur:
                cur, mean, sd, omega = prop, pm, psd, pom
                for t in range(S):
                    alpha[t] = scratch[t]
                for i in range(nb):
                    x[i] = prop_x[i]
                if it < n_warmup:
                    batch[nb] += 1.0
                else:
                    accepted[nb] += 1.0
        if start_mom <= it < start_joint:
            n_mom += 1
            for i in range(nb):
                prop_x[i] = x[i] - mom_mean[i]
                mom_mean[i] += prop_x[i] / n_mom
            for i in range(nb):
                for j in range(nb):
                    mom_m2[i, j] += prop_x[i] * (x[j] - mom_mean[j])
        if it == start_joint - 1 and n_mom > nb + 1:
            cov = mom_m2 / (n_mom - 1)
            for i in range(nb):
                cov[i, i] += 1e-8
            chol = np.linalg.cholesky(cov)
            joint_on = True
        if it < n_warmup and (it + 1) % adapt_batch == 0:
            n_batches += 1
            eta = min(1.0, 3.0 / math.sqrt(n_batches))
            for b in range(nb + 1):
                log_scale[b] += (batch[b] / adapt_batch - target) * eta
                batch[b] = 0.0
        if it >= n_warmup:
            k = it - n_warmup
            d_out[k] = mean + sd * z[it, nb]
            o_out[k] = omega
            s_out[k] = math.exp(x[S])
            t_out[k] = math.exp(x[S + 1])
            for t in range(S):
                a_out[k, t] = alpha[t]
    return d_out, o_out, a_out, s_out, t_out, accepted / max(keep, 1)
