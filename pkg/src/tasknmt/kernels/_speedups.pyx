# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the kernels in ``_python``.

Same signatures, same semantics; the loops are fused into single passes so
the per-call temporaries and repeated sweeps of the numpy lane disappear.
Internal math runs in double precision and rounds to the array dtype on
store, so float32 results can differ from the numpy lane in the last ulp.
"""

import numpy as np

cimport numpy as cnp
from cython cimport floating
from libc.math cimport exp, log, tanh as c_tanh
from libc.stdint cimport int64_t

cnp.import_array()


cdef inline object _dtype_of(bint single):
    return np.float32 if single else np.float64


def _sigmoid_1d(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating>(1.0 / (1.0 + exp(-<double>x[i])))


def sigmoid(x):
    out = np.empty_like(x)
    _sigmoid_1d(x.reshape(-1), out.reshape(-1))
    return out


def _sigmoid_grad_1d(floating[::1] y, floating[::1] g, floating[::1] out):
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        out[i] = <floating>(<double>g[i] * <double>y[i] * (1.0 - <double>y[i]))


def sigmoid_grad(y, g):
    out = np.empty_like(y)
    _sigmoid_grad_1d(y.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


def _tanh_1d(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = <floating>c_tanh(<double>x[i])


def tanh(x):
    out = np.empty_like(x)
    _tanh_1d(x.reshape(-1), out.reshape(-1))
    return out


def _tanh_grad_1d(floating[::1] y, floating[::1] g, floating[::1] out):
    cdef Py_ssize_t i, n = y.shape[0]
    for i in range(n):
        out[i] = <floating>(<double>g[i] * (1.0 - <double>y[i] * <double>y[i]))


def tanh_grad(y, g):
    out = np.empty_like(y)
    _tanh_grad_1d(y.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


def _gru_blend_1d(floating[::1] z, floating[::1] h, floating[::1] cand,
                  floating[::1] out):
    cdef Py_ssize_t i, n = z.shape[0]
    for i in range(n):
        out[i] = <floating>((1.0 - <double>z[i]) * <double>h[i]
                            + <double>z[i] * <double>cand[i])


def gru_blend(z, h, cand):
    out = np.empty_like(z)
    _gru_blend_1d(z.reshape(-1), h.reshape(-1), cand.reshape(-1),
                  out.reshape(-1))
    return out


def _gru_blend_grad_1d(floating[::1] z, floating[::1] h, floating[::1] cand,
                       floating[::1] g, floating[::1] dz, floating[::1] dh,
                       floating[::1] dcand):
    cdef Py_ssize_t i, n = z.shape[0]
    cdef double gi
    for i in range(n):
        gi = <double>g[i]
        dz[i] = <floating>(gi * (<double>cand[i] - <double>h[i]))
        dh[i] = <floating>(gi * (1.0 - <double>z[i]))
        dcand[i] = <floating>(gi * <double>z[i])


def gru_blend_grad(z, h, cand, g):
    dz = np.empty_like(z)
    dh = np.empty_like(z)
    dcand = np.empty_like(z)
    _gru_blend_grad_1d(z.reshape(-1), h.reshape(-1), cand.reshape(-1),
                       g.reshape(-1), dz.reshape(-1), dh.reshape(-1),
                       dcand.reshape(-1))
    return dz, dh, dcand


def _gru_gates_fwd_1d(floating[::1] az, floating[::1] ar, floating[::1] h,
                      floating[::1] z, floating[::1] r, floating[::1] rh):
    cdef Py_ssize_t i, n = az.shape[0]
    cdef double ri
    for i in range(n):
        z[i] = <floating>(1.0 / (1.0 + exp(-<double>az[i])))
        ri = 1.0 / (1.0 + exp(-<double>ar[i]))
        r[i] = <floating>ri
        rh[i] = <floating>(ri * <double>h[i])


def gru_gates_fwd(az, ar, h):
    z = np.empty_like(az)
    r = np.empty_like(az)
    rh = np.empty_like(az)
    _gru_gates_fwd_1d(az.reshape(-1), ar.reshape(-1), h.reshape(-1),
                      z.reshape(-1), r.reshape(-1), rh.reshape(-1))
    return z, r, rh


def _gru_out_fwd_1d(floating[::1] ac, floating[::1] z, floating[::1] h,
                    floating[::1] c, floating[::1] out):
    cdef Py_ssize_t i, n = ac.shape[0]
    cdef double ci, zi
    for i in range(n):
        ci = c_tanh(<double>ac[i])
        zi = <double>z[i]
        c[i] = <floating>ci
        out[i] = <floating>((1.0 - zi) * <double>h[i] + zi * ci)


def gru_out_fwd(ac, z, h):
    c = np.empty_like(ac)
    out = np.empty_like(ac)
    _gru_out_fwd_1d(ac.reshape(-1), z.reshape(-1), h.reshape(-1),
                    c.reshape(-1), out.reshape(-1))
    return c, out


def _gru_out_bwd_1d(floating[::1] g, floating[::1] z, floating[::1] c,
                    floating[::1] h, floating[::1] dz, floating[::1] dac,
                    floating[::1] dh):
    cdef Py_ssize_t i, n = g.shape[0]
    cdef floating gi, zi, ci
    for i in range(n):
        gi = g[i]
        zi = z[i]
        ci = c[i]
        dz[i] = gi * (ci - h[i])
        dac[i] = gi * zi * (1 - ci * ci)
        dh[i] = gi * (1 - zi)


def gru_out_bwd(g, z, c, h):
    dz = np.empty_like(g)
    dac = np.empty_like(g)
    dh = np.empty_like(g)
    _gru_out_bwd_1d(g.reshape(-1), z.reshape(-1), c.reshape(-1),
                    h.reshape(-1), dz.reshape(-1), dac.reshape(-1),
                    dh.reshape(-1))
    return dz, dac, dh


def _gru_gates_bwd_1d(floating[::1] drh, floating[::1] dz, floating[::1] z,
                      floating[::1] r, floating[::1] h, floating[::1] daz,
                      floating[::1] dar, floating[::1] dh):
    cdef Py_ssize_t i, n = drh.shape[0]
    cdef floating dri, ri, zi
    for i in range(n):
        ri = r[i]
        zi = z[i]
        dri = drh[i] * h[i]
        daz[i] = dz[i] * zi * (1 - zi)
        dar[i] = dri * ri * (1 - ri)
        dh[i] = drh[i] * ri


def gru_gates_bwd(drh, dz, z, r, h):
    daz = np.empty_like(drh)
    dar = np.empty_like(drh)
    dh = np.empty_like(drh)
    _gru_gates_bwd_1d(drh.reshape(-1), dz.reshape(-1), z.reshape(-1),
                      r.reshape(-1), h.reshape(-1), daz.reshape(-1),
                      dar.reshape(-1), dh.reshape(-1))
    return daz, dar, dh


def _softmax_columns_2d(floating[:, ::1] x, floating[:, ::1] out):
    cdef Py_ssize_t i, b, n = x.shape[0], cols = x.shape[1]
    cdef double m, s
    for b in range(cols):
        m = <double>x[0, b]
        for i in range(1, n):
            if <double>x[i, b] > m:
                m = <double>x[i, b]
        s = 0.0
        for i in range(n):
            s += exp(<double>x[i, b] - m)
        for i in range(n):
            out[i, b] = <floating>(exp(<double>x[i, b] - m) / s)


def softmax_columns(x):
    out = np.empty_like(x)
    _softmax_columns_2d(x, out)
    return out


def _softmax_columns_grad_2d(floating[:, ::1] y, floating[:, ::1] g,
                             floating[:, ::1] out):
    cdef Py_ssize_t i, b, n = y.shape[0], cols = y.shape[1]
    cdef double dot
    for b in range(cols):
        dot = 0.0
        for i in range(n):
            dot += <double>y[i, b] * <double>g[i, b]
        for i in range(n):
            out[i, b] = <floating>(<double>y[i, b] * (<double>g[i, b] - dot))


def softmax_columns_grad(y, g):
    out = np.empty_like(y)
    _softmax_columns_grad_2d(y, g, out)
    return out


def _softmax_xent_2d(floating[:, ::1] logits, int64_t[::1] targets,
                     floating[::1] mask, floating[:, ::1] probs):
    cdef Py_ssize_t i, b, v = logits.shape[0], cols = logits.shape[1]
    cdef double m, s, loss = 0.0
    for b in range(cols):
        m = <double>logits[0, b]
        for i in range(1, v):
            if <double>logits[i, b] > m:
                m = <double>logits[i, b]
        s = 0.0
        for i in range(v):
            s += exp(<double>logits[i, b] - m)
        for i in range(v):
            probs[i, b] = <floating>(exp(<double>logits[i, b] - m) / s)
        loss -= (<double>mask[b]
                 * ((<double>logits[targets[b], b] - m) - log(s)))
    return loss


def softmax_xent_columns(logits, targets, mask):
    probs = np.empty_like(logits)
    loss = _softmax_xent_2d(logits, targets, mask, probs)
    return np.asarray(loss, dtype=logits.dtype), probs


def _softmax_xent_grad_2d(floating[:, ::1] probs, int64_t[::1] targets,
                          floating[::1] mask, double gscale,
                          floating[:, ::1] out):
    cdef Py_ssize_t i, b, v = probs.shape[0], cols = probs.shape[1]
    cdef double scale
    for b in range(cols):
        scale = <double>mask[b] * gscale
        for i in range(v):
            out[i, b] = <floating>(<double>probs[i, b] * scale)
        out[targets[b], b] -= <floating>scale


def softmax_xent_columns_grad(probs, targets, mask, gscale):
    out = np.empty_like(probs)
    _softmax_xent_grad_2d(probs, targets, mask, float(gscale), out)
    return out


def _attention_energy_3d(floating[:, ::1] base, floating[:, :, ::1] proj,
                         floating[::1] v, floating[:, ::1] e,
                         floating[:, :, ::1] t):
    cdef Py_ssize_t i, j, b
    cdef Py_ssize_t l = proj.shape[0], d = proj.shape[1], cols = proj.shape[2]
    cdef double acc, tv
    for i in range(l):
        for b in range(cols):
            e[i, b] = 0
        for j in range(d):
            for b in range(cols):
                tv = c_tanh(<double>proj[i, j, b] + <double>base[j, b])
                t[i, j, b] = <floating>tv
                e[i, b] += <floating>(<double>v[j] * tv)


def attention_energy(base, proj, v):
    l, _, cols = proj.shape
    e = np.empty((l, cols), dtype=proj.dtype)
    t = np.empty_like(proj)
    _attention_energy_3d(base, proj, v, e, t)
    return e, t


def _attention_energy_grad_3d(floating[:, :, ::1] t, floating[::1] v,
                              floating[:, ::1] g, floating[:, ::1] dbase,
                              floating[:, :, ::1] dt, floating[::1] dv):
    cdef Py_ssize_t i, j, b
    cdef Py_ssize_t l = t.shape[0], d = t.shape[1], cols = t.shape[2]
    cdef double tv, dtv
    for j in range(d):
        dv[j] = 0
        for b in range(cols):
            dbase[j, b] = 0
    for i in range(l):
        for j in range(d):
            for b in range(cols):
                tv = <double>t[i, j, b]
                dtv = (1.0 - tv * tv) * <double>v[j] * <double>g[i, b]
                dt[i, j, b] = <floating>dtv
                dbase[j, b] += <floating>dtv
                dv[j] += <floating>(tv * <double>g[i, b])


def attention_energy_grad(tcache, v, g):
    dbase = np.empty(tcache.shape[1:], dtype=tcache.dtype)
    dt = np.empty_like(tcache)
    dv = np.empty_like(v)
    _attention_energy_grad_3d(tcache, v, g, dbase, dt, dv)
    return dbase, dt, dv


def _context_combine_3d(floating[:, ::1] alpha, floating[:, :, ::1] states,
                        floating[:, ::1] out):
    cdef Py_ssize_t i, j, b
    cdef Py_ssize_t l = states.shape[0], h = states.shape[1]
    cdef Py_ssize_t cols = states.shape[2]
    for j in range(h):
        for b in range(cols):
            out[j, b] = 0
    for i in range(l):
        for j in range(h):
            for b in range(cols):
                out[j, b] += <floating>(<double>alpha[i, b]
                                        * <double>states[i, j, b])


def context_combine(alpha, states):
    out = np.empty(states.shape[1:], dtype=states.dtype)
    _context_combine_3d(alpha, states, out)
    return out


def _context_combine_grad_3d(floating[:, ::1] alpha,
                             floating[:, :, ::1] states, floating[:, ::1] g,
                             floating[:, ::1] dalpha,
                             floating[:, :, ::1] dstates):
    cdef Py_ssize_t i, j, b
    cdef Py_ssize_t l = states.shape[0], h = states.shape[1]
    cdef Py_ssize_t cols = states.shape[2]
    cdef double acc
    for i in range(l):
        for b in range(cols):
            dalpha[i, b] = 0
        for j in range(h):
            for b in range(cols):
                dstates[i, j, b] = <floating>(<double>alpha[i, b]
                                              * <double>g[j, b])
                dalpha[i, b] += <floating>(<double>g[j, b]
                                           * <double>states[i, j, b])


def context_combine_grad(alpha, states, g):
    dalpha = np.empty_like(alpha)
    dstates = np.empty_like(states)
    _context_combine_grad_3d(alpha, states, g, dalpha, dstates)
    return dalpha, dstates


def _embedding_scatter_2d(floating[:, ::1] table_grad, int64_t[::1] ids,
                          floating[:, ::1] g):
    cdef Py_ssize_t j, b, d = g.shape[0], cols = g.shape[1]
    cdef int64_t row
    for b in range(cols):
        row = ids[b]
        for j in range(d):
            table_grad[row, j] += g[j, b]


def embedding_scatter_add(table_grad, ids, g):
    _embedding_scatter_2d(table_grad, ids, g)


from libc.math cimport pow as c_pow, sqrt as c_sqrt


def _adam_step_1d(floating[::1] param, floating[::1] grad, floating[::1] m,
                  floating[::1] v, double bc1, double bc2, double lr,
                  double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef floating mi, vi, gi
    cdef floating b1 = <floating>beta1, b2 = <floating>beta2
    cdef floating o1 = <floating>(1.0 - beta1), o2 = <floating>(1.0 - beta2)
    cdef floating c1 = <floating>(1.0 / bc1), c2 = <floating>(1.0 / bc2)
    cdef floating flr = <floating>lr, feps = <floating>eps
    for i in range(n):
        gi = grad[i]
        mi = b1 * m[i] + o1 * gi
        vi = b2 * v[i] + o2 * gi * gi
        m[i] = mi
        v[i] = vi
        param[i] -= flr * (mi * c1) / (<floating>c_sqrt(vi * c2) + feps)


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update, in place on param/m/v."""
    bc1 = 1.0 - c_pow(beta1, t)
    bc2 = 1.0 - c_pow(beta2, t)
    _adam_step_1d(param.reshape(-1), grad.reshape(-1), m.reshape(-1),
                  v.reshape(-1), bc1, bc2, lr, beta1, beta2, eps)
