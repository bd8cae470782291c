# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dual kernel: same semantics as kernel_py, loops in C."""

from libc.math cimport fabs, sqrt, pow, isfinite

import numpy as np

NAME = "cython"

cdef signed char PASS = 0
cdef signed char ZERO = 1
cdef signed char UNSTABLE = 2
cdef signed char SPLIT_ACT = 3
cdef signed char SPLIT_INACT = 4


cdef inline double _sign(double x) nogil:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


cdef class Kernel:
    cdef object pp
    cdef double[::1] w_flat, b_flat, slope, soff
    cdef signed char[::1] status
    cdef long[::1] aidx, bidx, w_off, n_off, rows, cols
    cdef double[:, ::1] a_y, a_z, b_y, b_z
    cdef double[::1] e_vec, h_vec, c_y, c_z, z_mu, z_sig
    cdef double eps
    cdef int K, n_in, n_y, n_alpha, n_beta, p_eq, q_in, n_z, total
    cdef double[::1] c_save, buf1, buf2, o_buf, q_buf, a_buf, gq_buf

    def __init__(self, pp):
        self.pp = pp
        self.w_flat = pp.w_flat
        self.b_flat = pp.b_flat
        self.slope = pp.slope
        self.soff = pp.soff
        self.status = pp.status
        self.aidx = np.ascontiguousarray(pp.aidx, dtype=np.int64)
        self.bidx = np.ascontiguousarray(pp.bidx, dtype=np.int64)
        self.w_off = np.ascontiguousarray(pp.w_off, dtype=np.int64)
        self.n_off = np.ascontiguousarray(pp.n_off, dtype=np.int64)
        self.rows = np.ascontiguousarray(pp.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(pp.cols, dtype=np.int64)
        self.a_y = pp.a_y
        self.a_z = pp.a_z
        self.b_y = pp.b_y
        self.b_z = pp.b_z
        self.e_vec = pp.e
        self.h_vec = pp.h
        self.c_y = pp.c_y
        self.c_z = pp.c_z
        self.z_mu = pp.z_mu
        self.z_sig = pp.z_sig
        self.eps = pp.eps
        self.K = pp.num_layers
        self.n_in = pp.n_in
        self.n_y = pp.n_y
        self.n_alpha = pp.n_alpha
        self.n_beta = pp.n_beta
        self.p_eq = pp.p_eq
        self.q_in = pp.q_in
        self.n_z = pp.n_z
        self.total = int(pp.n_off[-1])
        cdef int maxw = max(pp.n_in, pp.n_y)
        cdef int k
        for k in range(self.K):
            if self.rows[k] > maxw:
                maxw = self.rows[k]
            if self.cols[k] > maxw:
                maxw = self.cols[k]
        self.c_save = np.zeros(self.total)
        self.buf1 = np.zeros(maxw)
        self.buf2 = np.zeros(maxw)
        self.o_buf = np.zeros(self.n_y)
        self.q_buf = np.zeros(max(self.n_z, 1))
        self.a_buf = np.zeros(self.n_in)
        self.gq_buf = np.zeros(max(self.n_z, 1))

    cdef double _eval(
        self,
        double[::1] alpha,
        double[::1] beta,
        double[::1] lam,
        double[::1] mu,
        bint want_grad,
        double[::1] ga,
        double[::1] gb,
        double[::1] gl,
        double[::1] gm,
    ):
        cdef int i, j, k, r, c
        cdef long base, woff
        cdef double s, cj, ch, acc, val, dz, gch, gn
        cdef signed char st

        for j in range(self.n_y):
            s = self.c_y[j]
            for i in range(self.p_eq):
                s += self.a_y[i, j] * lam[i]
            for i in range(self.q_in):
                s += self.b_y[i, j] * mu[i]
            self.o_buf[j] = s
            self.buf1[j] = s

        acc = 0.0
        for k in range(self.K - 1, -1, -1):
            r = self.rows[k]
            c = self.cols[k]
            base = self.n_off[k]
            woff = self.w_off[k]
            for j in range(r):
                cj = self.buf1[j]
                self.c_save[base + j] = cj
                st = self.status[base + j]
                if st == PASS:
                    ch = cj
                elif st == ZERO:
                    ch = 0.0
                elif st == UNSTABLE:
                    if cj >= 0:
                        ch = cj * alpha[self.aidx[base + j]]
                    else:
                        ch = cj * self.slope[base + j]
                        acc += cj * self.soff[base + j]
                elif st == SPLIT_ACT:
                    ch = cj - beta[self.bidx[base + j]]
                else:
                    ch = beta[self.bidx[base + j]]
                acc += ch * self.b_flat[base + j]
                self.buf2[j] = ch
            for i in range(c):
                s = 0.0
                for j in range(r):
                    s += self.w_flat[woff + j * c + i] * self.buf2[j]
                self.buf1[i] = s

        val = acc
        for i in range(self.n_in):
            self.a_buf[i] = self.buf1[i]
            val -= self.eps * fabs(self.buf1[i])
        for i in range(self.n_z):
            s = self.c_z[i]
            for j in range(self.p_eq):
                s += self.a_z[j, i] * lam[j]
            for j in range(self.q_in):
                s += self.b_z[j, i] * mu[j]
            self.q_buf[i] = s
            dz = s * self.z_sig[i]
            val -= self.eps * fabs(dz)
            val += s * self.z_mu[i]
        for i in range(self.p_eq):
            val -= lam[i] * self.e_vec[i]
        for i in range(self.q_in):
            val -= mu[i] * self.h_vec[i]

        if not want_grad:
            return val

        for i in range(self.n_alpha):
            ga[i] = 0.0
        for i in range(self.n_beta):
            gb[i] = 0.0
        for i in range(self.n_in):
            self.buf1[i] = -self.eps * _sign(self.a_buf[i])
        for k in range(self.K):
            r = self.rows[k]
            c = self.cols[k]
            base = self.n_off[k]
            woff = self.w_off[k]
            for j in range(r):
                s = self.b_flat[base + j]
                for i in range(c):
                    s += self.w_flat[woff + j * c + i] * self.buf1[i]
                self.buf2[j] = s
            for j in range(r):
                cj = self.c_save[base + j]
                st = self.status[base + j]
                gch = self.buf2[j]
                if st == PASS:
                    gn = gch
                elif st == ZERO:
                    gn = 0.0
                elif st == UNSTABLE:
                    if cj >= 0:
                        gn = alpha[self.aidx[base + j]] * gch
                        ga[self.aidx[base + j]] += cj * gch
                    else:
                        gn = self.slope[base + j] * gch + self.soff[base + j]
                elif st == SPLIT_ACT:
                    gn = gch
                    gb[self.bidx[base + j]] -= gch
                else:
                    gn = 0.0
                    gb[self.bidx[base + j]] += gch
                self.buf1[j] = gn
        for i in range(self.n_z):
            self.gq_buf[i] = -self.eps * _sign(self.q_buf[i] * self.z_sig[i]) * self.z_sig[i] + self.z_mu[i]
        for i in range(self.p_eq):
            s = -self.e_vec[i]
            for j in range(self.n_y):
                s += self.a_y[i, j] * self.buf1[j]
            for j in range(self.n_z):
                s += self.a_z[i, j] * self.gq_buf[j]
            gl[i] = s
        for i in range(self.q_in):
            s = -self.h_vec[i]
            for j in range(self.n_y):
                s += self.b_y[i, j] * self.buf1[j]
            for j in range(self.n_z):
                s += self.b_z[i, j] * self.gq_buf[j]
            gm[i] = s
        return val

    def eval(self, alpha, beta, lam, mu, bint want_grad=False):
        cdef double[::1] av = np.ascontiguousarray(alpha, dtype=np.float64)
        cdef double[::1] bv = np.ascontiguousarray(beta, dtype=np.float64)
        cdef double[::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
        cdef double[::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
        if not want_grad:
            val = self._eval(av, bv, lv, mv, False, av[:0], bv[:0], lv[:0], mv[:0])
            return val, None, None, None, None
        ga = np.zeros(self.n_alpha)
        gb = np.zeros(self.n_beta)
        gl = np.zeros(self.p_eq)
        gm = np.zeros(self.q_in)
        val = self._eval(av, bv, lv, mv, True, ga, gb, gl, gm)
        return val, ga, gb, gl, gm

    def coeffs(self, alpha, beta, lam, mu):
        self.eval(alpha, beta, lam, mu, False)
        return np.asarray(self.c_save).copy()

    def run_adam(self, alpha, beta, lam, mu, cfg):
        cdef int na = self.n_alpha, nb = self.n_beta, nl = self.p_eq, nm = self.q_in
        cdef int tot = na + nb + nl + nm
        theta_np = np.concatenate(
            [
                np.asarray(alpha, dtype=np.float64).ravel(),
                np.asarray(beta, dtype=np.float64).ravel(),
                np.asarray(lam, dtype=np.float64).ravel(),
                np.asarray(mu, dtype=np.float64).ravel(),
            ]
        )
        cdef double[::1] theta = theta_np
        best_np = theta_np.copy()
        cdef double[::1] best_theta = best_np
        grad_np = np.zeros(tot)
        cdef double[::1] grad = grad_np
        m_np = np.zeros(tot)
        v_np = np.zeros(tot)
        step_np = np.zeros(tot)
        cdef double[::1] m_ = m_np
        cdef double[::1] v_ = v_np
        cdef double[::1] step = step_np
        cdef double lr = cfg.lr
        cdef double decay = cfg.decay
        cdef int decay_every = cfg.decay_every
        cdef double beta1 = cfg.beta1
        cdef double beta2 = cfg.beta2
        cdef double adam_eps = cfg.adam_eps
        cdef int iters = cfg.iters
        cdef double early_stop = cfg.early_stop
        cdef double lam_clip = cfg.lam_clip
        trace_np = np.empty(iters)
        cdef double[::1] trace = trace_np
        cdef double best = -np.inf
        cdef int crossed = -1
        cdef int t = 0, idx
        cdef double val, g, bc1, bc2, st_, nrm

        while t < iters:
            t += 1
            val = self._eval(
                theta[0:na],
                theta[na : na + nb],
                theta[na + nb : na + nb + nl],
                theta[na + nb + nl : tot],
                True,
                grad[0:na],
                grad[na : na + nb],
                grad[na + nb : na + nb + nl],
                grad[na + nb + nl : tot],
            )
            if not isfinite(val):
                raise FloatingPointError(f"non-finite dual value at iteration {t}")
            trace[t - 1] = val
            if val > best:
                best = val
                for idx in range(tot):
                    best_theta[idx] = theta[idx]
            if val >= early_stop:
                crossed = t - 1
                break
            if t == iters:
                break
            bc1 = 1.0 - pow(beta1, t)
            bc2 = 1.0 - pow(beta2, t)
            for idx in range(tot):
                g = grad[idx]
                m_[idx] = beta1 * m_[idx] + (1.0 - beta1) * g
                v_[idx] = beta2 * v_[idx] + (1.0 - beta2) * g * g
                step[idx] = lr * (m_[idx] / bc1) / (sqrt(v_[idx] / bc2) + adam_eps)
            if nl > 0:
                nrm = 0.0
                for idx in range(na + nb, na + nb + nl):
                    nrm += step[idx] * step[idx]
                nrm = sqrt(nrm)
                if nrm > lam_clip:
                    for idx in range(na + nb, na + nb + nl):
                        step[idx] *= lam_clip / nrm
            for idx in range(tot):
                theta[idx] += step[idx]
            for idx in range(na):
                if theta[idx] < 0.0:
                    theta[idx] = 0.0
                elif theta[idx] > 1.0:
                    theta[idx] = 1.0
            for idx in range(na, na + nb):
                if theta[idx] < 0.0:
                    theta[idx] = 0.0
            for idx in range(na + nb + nl, tot):
                if theta[idx] < 0.0:
                    theta[idx] = 0.0
            if t % decay_every == 0:
                lr *= decay

        final = (
            theta_np[0:na].copy(),
            theta_np[na : na + nb].copy(),
            theta_np[na + nb : na + nb + nl].copy(),
            theta_np[na + nb + nl : tot].copy(),
        )
        bt = (
            best_np[0:na].copy(),
            best_np[na : na + nb].copy(),
            best_np[na + nb : na + nb + nl].copy(),
            best_np[na + nb + nl : tot].copy(),
        )
        return best, bt, final, trace_np[:t].copy(), t, crossed
