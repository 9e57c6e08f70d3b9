"""Numpy RSSM: forward pass, loss, and hand-written backpropagation through time.

Arrays are time-major inside this module: observations ``(T + 1, B, d_obs)``,
actions ``(T, B, d_act)``. Step 0 has ``h = 0``; for ``t >= 1`` the GRU reads
``[z_{t-1}, a_{t-1}]``. The posterior reads ``[o_t, h_t]``, the prior reads
``h_t`` and the decoder reads ``[h_t, z_t]``.

Only the encoder and GRU passes need to run inside the time loop; those two
sweeps are compiled. Decoder, prior and KL gradients are computed for all
steps at once.
"""

import numpy as np
from numba import njit

LOGSTD_MIN, LOGSTD_MAX = -5.0, 2.0


def param_shapes(d_obs, d_act, d_h, d_z, d_hidden):
    return {
        "gru_W": (d_z + d_act, 3 * d_h),
        "gru_U": (d_h, 2 * d_h),
        "gru_Un": (d_h, d_h),
        "gru_b": (3 * d_h,),
        "enc_W1": (d_obs + d_h, d_hidden),
        "enc_b1": (d_hidden,),
        "enc_W2": (d_hidden, 2 * d_z),
        "enc_b2": (2 * d_z,),
        "pri_W1": (d_h, d_hidden),
        "pri_b1": (d_hidden,),
        "pri_W2": (d_hidden, 2 * d_z),
        "pri_b2": (2 * d_z,),
        "dec_W1": (d_h + d_z, d_hidden),
        "dec_b1": (d_hidden,),
        "dec_W2": (d_hidden, d_obs),
        "dec_b2": (d_obs,),
    }


def init_params(shapes, rng, dtype=np.float64):
    """Glorot-uniform weights, zero biases."""
    params = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gaussian_head(out):
    """Split a head output into (mean, clamped logstd, in-range mask)."""
    d = out.shape[-1] // 2
    raw = out[..., d:]
    return out[..., :d], np.clip(raw, LOGSTD_MIN, LOGSTD_MAX), (raw > LOGSTD_MIN) & (raw < LOGSTD_MAX)


def gru_cell(p, h, x):
    d_h = h.shape[-1]
    gx = x @ p["gru_W"] + p["gru_b"]
    gh = h @ p["gru_U"]
    r = _sigmoid(gx[..., :d_h] + gh[..., :d_h])
    u = _sigmoid(gx[..., d_h : 2 * d_h] + gh[..., d_h:])
    rh = r * h
    n = np.tanh(gx[..., 2 * d_h :] + rh @ p["gru_Un"])
    return (1.0 - u) * n + u * h, (r, u, n, rh)


def mlp(p, prefix, x):
    a = np.tanh(x @ p[prefix + "_W1"] + p[prefix + "_b1"])
    return a @ p[prefix + "_W2"] + p[prefix + "_b2"], a


def posterior(p, o, h):
    out, _ = mlp(p, "enc", np.concatenate([o, h], axis=-1))
    return gaussian_head(out)[:2]


def prior(p, h):
    out, _ = mlp(p, "pri", h)
    return gaussian_head(out)[:2]


def decode(p, h, z):
    return mlp(p, "dec", np.concatenate([h, z], axis=-1))[0]


def kl_diag(mq, lq, mp, lp):
    """KL(q || p) for diagonal Gaussians, summed over the last axis."""
    vq, vp = np.exp(2 * lq), np.exp(2 * lp)
    return np.sum(lp - lq + (vq + (mq - mp) ** 2) / (2 * vp) - 0.5, axis=-1)


@njit(cache=True, fastmath=True)
def _forward_loop(obs, act, eps, Wz, Wa, gb, U, Un, W1o, W1h, b1, W2, b2):
    T1, B, _ = obs.shape
    d_h = Un.shape[0]
    d_z = eps.shape[2]
    h = np.zeros((T1, B, d_h))
    z = np.zeros((T1, B, d_z))
    mq = np.zeros((T1, B, d_z))
    lq = np.zeros((T1, B, d_z))
    mask_q = np.zeros((T1, B, d_z), dtype=np.bool_)
    enc_a = np.zeros((T1, B, W1o.shape[1]))
    r = np.zeros((T1, B, d_h))
    u = np.zeros((T1, B, d_h))
    n = np.zeros((T1, B, d_h))
    rh = np.zeros((T1, B, d_h))
    for t in range(T1):
        if t > 0:
            gx = np.dot(z[t - 1], Wz) + np.dot(act[t - 1], Wa) + gb
            gh = np.dot(h[t - 1], U)
            r[t] = 0.5 * (1.0 + np.tanh(0.5 * (gx[:, :d_h] + gh[:, :d_h])))
            u[t] = 0.5 * (1.0 + np.tanh(0.5 * (gx[:, d_h : 2 * d_h] + gh[:, d_h:])))
            rh[t] = r[t] * h[t - 1]
            n[t] = np.tanh(gx[:, 2 * d_h :] + np.dot(rh[t], Un))
            h[t] = (1.0 - u[t]) * n[t] + u[t] * h[t - 1]
        a = np.tanh(np.dot(obs[t], W1o) + np.dot(h[t], W1h) + b1)
        enc_a[t] = a
        out = np.dot(a, W2) + b2
        raw = out[:, d_z:]
        mq[t] = out[:, :d_z]
        lq[t] = np.minimum(np.maximum(raw, LOGSTD_MIN), LOGSTD_MAX)
        mask_q[t] = (raw > LOGSTD_MIN) & (raw < LOGSTD_MAX)
        z[t] = mq[t] + np.exp(lq[t]) * eps[t]
    return h, z, mq, lq, mask_q, enc_a, r, u, n, rh


def _c(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def forward(p, obs, act, eps):
    """Teacher-forced pass. Returns a cache dict with every intermediate.

    Gate arrays ``r, u, n, rh`` are indexed by step; their step 0 entries are unused.
    """
    obs, act, eps = _c(obs), _c(act), _c(eps)
    d_z = eps.shape[-1]
    d_obs = obs.shape[-1]
    W, W1 = p["gru_W"], p["enc_W1"]
    h, z, mq, lq, mask_q, enc_a, r, u, n, rh = _forward_loop(
        obs, act, eps, _c(W[:d_z]), _c(W[d_z:]), _c(p["gru_b"]), _c(p["gru_U"]), _c(p["gru_Un"]),
        _c(W1[:d_obs]), _c(W1[d_obs:]), _c(p["enc_b1"]), _c(p["enc_W2"]), _c(p["enc_b2"]),
    )
    pri_out, pri_a = mlp(p, "pri", h)
    mp, lp, mask_p = gaussian_head(pri_out)
    dec_in = np.concatenate([h, z], axis=-1)
    recon, dec_a = mlp(p, "dec", dec_in)
    return {
        "h": h, "z": z, "mq": mq, "lq": lq, "mask_q": mask_q,
        "mp": mp, "lp": lp, "mask_p": mask_p,
        "enc_in": np.concatenate([obs, h], axis=-1), "enc_a": enc_a,
        "pri_a": pri_a, "dec_in": dec_in, "dec_a": dec_a, "recon": recon,
        "r": r, "u": u, "n": n, "rh": rh, "act": act, "eps": eps, "obs": obs,
    }


def _kl_terms(kl, free_nats, skip_initial):
    """Per-step KL as it enters the total, and the mask of steps that carry gradient."""
    live = kl > free_nats
    if skip_initial:
        live[0] = False
    value = np.maximum(kl, free_nats)
    if skip_initial:
        value[0] = 0.0
    return value, live


def losses(cache, weights, stopgrad=None, free_nats=0.0, skip_initial_kl=False):
    """Loss terms. ``stopgrad`` optionally supplies frozen (mq, lq, mp, lp) for the sg() operands.

    Per-step KLs below ``free_nats`` are replaced by the constant ``free_nats``
    in the total, and ``skip_initial_kl`` drops the t = 0 step from both KL
    terms. The reported ``dyn`` and ``rep`` are the raw means.
    """
    sq, sp = _stopgrad_stats(cache, stopgrad)
    T1, B = cache["obs"].shape[:2]
    n = T1 * B
    pred = float(np.sum((cache["recon"] - cache["obs"]) ** 2) / n)
    kl_dyn = kl_diag(*sq, cache["mp"], cache["lp"])
    kl_rep = kl_diag(cache["mq"], cache["lq"], *sp)
    a_dyn, a_rep, a_pred = weights
    total = (
        a_dyn * _kl_terms(kl_dyn, free_nats, skip_initial_kl)[0].sum() / n
        + a_rep * _kl_terms(kl_rep, free_nats, skip_initial_kl)[0].sum() / n
        + a_pred * pred
    )
    return {"total": float(total), "dyn": float(kl_dyn.sum() / n), "rep": float(kl_rep.sum() / n), "pred": pred}


def _stopgrad_stats(cache, stopgrad):
    if stopgrad is None:
        return (cache["mq"], cache["lq"]), (cache["mp"], cache["lp"])
    mq, lq, mp, lp = stopgrad
    return (mq, lq), (mp, lp)


def _mlp_backward(p, prefix, x, a, dout, grads):
    """Accumulate weight grads for a batched MLP and return d(input)."""
    W2 = p[prefix + "_W2"]
    dpre = (dout @ W2.T) * (1.0 - a**2)
    grads[prefix + "_W2"] += _flat(a).T @ _flat(dout)
    grads[prefix + "_b2"] += _flat(dout).sum(axis=0)
    grads[prefix + "_W1"] += _flat(x).T @ _flat(dpre)
    grads[prefix + "_b1"] += _flat(dpre).sum(axis=0)
    return dpre @ p[prefix + "_W1"].T


def _flat(x):
    return x.reshape(-1, x.shape[-1])


def backward(p, cache, weights, stopgrad=None, free_nats=0.0, skip_initial_kl=False):
    """Gradients of ``losses(...)["total"]`` with respect to every parameter."""
    a_dyn, a_rep, a_pred = weights
    (sq_m, sq_l), (sp_m, sp_l) = _stopgrad_stats(cache, stopgrad)
    if free_nats > 0 or skip_initial_kl:
        # clipped or skipped steps contribute a constant
        kl_dyn = kl_diag(sq_m, sq_l, cache["mp"], cache["lp"])
        kl_rep = kl_diag(cache["mq"], cache["lq"], sp_m, sp_l)
        a_dyn = a_dyn * _kl_terms(kl_dyn, free_nats, skip_initial_kl)[1][..., None]
        a_rep = a_rep * _kl_terms(kl_rep, free_nats, skip_initial_kl)[1][..., None]
    obs, h, eps = cache["obs"], cache["h"], cache["eps"]
    T1, B, d_obs = obs.shape
    d_h = h.shape[-1]
    d_z = eps.shape[-1]
    n = T1 * B
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    # dyn term moves the prior toward sg(posterior)
    vp = np.exp(2 * cache["lp"])
    diff = sq_m - cache["mp"]
    d_mp = a_dyn * (-diff / vp) / n
    d_lp = a_dyn * (1.0 - (np.exp(2 * sq_l) + diff**2) / vp) / n
    d_lp = d_lp * cache["mask_p"]
    # rep term moves the posterior toward sg(prior)
    vsp = np.exp(2 * sp_l)
    d_mq_kl = a_rep * (cache["mq"] - sp_m) / vsp / n
    d_lq_kl = a_rep * (np.exp(2 * cache["lq"]) / vsp - 1.0) / n

    d_recon = 2.0 * a_pred * (cache["recon"] - obs) / n
    d_dec_in = _mlp_backward(p, "dec", cache["dec_in"], cache["dec_a"], d_recon, grads)
    dh_out = d_dec_in[..., :d_h]
    dz_dec = d_dec_in[..., d_h:]
    dh_out = dh_out + _mlp_backward(p, "pri", h, cache["pri_a"], np.concatenate([d_mp, d_lp], -1), grads)

    W = p["gru_W"]
    enc_dout, dgates, drh = _backward_loop(
        _c(dz_dec), _c(d_mq_kl), _c(d_lq_kl), _c(dh_out), cache["lq"], cache["mask_q"], eps,
        cache["enc_a"], h, cache["r"], cache["u"], cache["n"],
        _c(p["enc_W2"].T), _c(p["enc_W1"][d_obs:].T), _c(p["gru_Un"].T), _c(p["gru_U"].T), _c(W[:d_z].T),
    )
    _mlp_backward(p, "enc", cache["enc_in"], cache["enc_a"], enc_dout, grads)
    if T1 > 1:
        xs = np.concatenate([cache["z"][:-1], cache["act"]], axis=-1)
        grads["gru_W"] += _flat(xs).T @ _flat(dgates[1:])
        grads["gru_b"] += _flat(dgates[1:]).sum(axis=0)
        grads["gru_U"] += _flat(h[:-1]).T @ _flat(dgates[1:, :, : 2 * d_h])
        grads["gru_Un"] += _flat(cache["rh"][1:]).T @ _flat(drh[1:])
    return grads


@njit(cache=True, fastmath=True)
def _backward_loop(dz_dec, d_mq_kl, d_lq_kl, dh_out, lq, mask_q, eps, enc_a, h, r, u, n,
                   W2eT, W1hT, UnT, UT, WzT):
    """Reverse-time sweep through the encoder and GRU.

    Returns the encoder head gradient and the GRU pre-activation gradients
    (``dgates`` for ``[r, u, n]`` and ``drh`` for the candidate's recurrent input).
    """
    T1, B, d_z = dz_dec.shape
    d_h = h.shape[2]
    enc_dout = np.zeros((T1, B, 2 * d_z))
    dgates = np.zeros((T1, B, 3 * d_h))
    drh = np.zeros((T1, B, d_h))
    dz_next = np.zeros((B, d_z))
    dh_next = np.zeros((B, d_h))
    for t in range(T1 - 1, -1, -1):
        dz = dz_dec[t] + dz_next
        enc_dout[t, :, :d_z] = d_mq_kl[t] + dz
        enc_dout[t, :, d_z:] = (d_lq_kl[t] + dz * eps[t] * np.exp(lq[t])) * mask_q[t]
        a = enc_a[t]
        dh_enc = np.dot(np.dot(enc_dout[t], W2eT) * (1.0 - a * a), W1hT)
        dh = dh_out[t] + dh_enc + dh_next
        if t == 0:
            break
        rt, ut, nt, h_prev = r[t], u[t], n[t], h[t - 1]
        dn_pre = dh * (1.0 - ut) * (1.0 - nt * nt)
        du_pre = dh * (h_prev - nt) * ut * (1.0 - ut)
        d_rh = np.dot(dn_pre, UnT)
        dr_pre = d_rh * h_prev * rt * (1.0 - rt)
        dgates[t, :, :d_h] = dr_pre
        dgates[t, :, d_h : 2 * d_h] = du_pre
        dgates[t, :, 2 * d_h :] = dn_pre
        drh[t] = dn_pre
        dh_next = dh * ut + d_rh * rt + np.dot(np.ascontiguousarray(dgates[t, :, : 2 * d_h]), UT)
        dz_next = np.dot(np.ascontiguousarray(dgates[t]), WzT)
    return enc_dout, dgates, drh


def loss_and_grads(p, obs, act, eps, weights, stopgrad=None, free_nats=0.0, skip_initial_kl=False):
    cache = forward(p, obs, act, eps)
    return (
        losses(cache, weights, stopgrad, free_nats, skip_initial_kl),
        backward(p, cache, weights, stopgrad, free_nats, skip_initial_kl),
        cache,
    )


def stopgrad_from(cache):
    """Frozen copies of the stop-gradient operands at the current point."""
    return tuple(cache[k].copy() for k in ("mq", "lq", "mp", "lp"))
