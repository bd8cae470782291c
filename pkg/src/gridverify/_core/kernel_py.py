"""Pure-numpy dual kernel: fused bound value + gradient, and the Adam loop.

Semantics reference for the compiled backend; selected at import when the
extension is unavailable or GRIDVERIFY_PURE_PYTHON is set.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from . import codes
from .pack import AdamParams, PackedProblem

NAME = "python"


class Kernel:
    def __init__(self, pp: PackedProblem):
        self.pp = pp
        self._saves: Optional[list] = None

    # -- fused evaluation ---------------------------------------------------

    def _net_backward(self, o: np.ndarray, alpha: np.ndarray, beta: np.ndarray):
        pp = self.pp
        cur = o.astype(np.float64, copy=True)
        acc = 0.0
        saves = [None] * pp.num_layers
        for k in range(pp.num_layers - 1, -1, -1):
            w, b = pp.layer_view(k)
            st = pp.neuron_view(pp.status, k)
            saves[k] = cur
            ch = np.where(st == codes.PASS, cur, 0.0)
            un = st == codes.UNSTABLE
            if un.any():
                slope = pp.neuron_view(pp.slope, k)
                soff = pp.neuron_view(pp.soff, k)
                aidx = pp.neuron_view(pp.aidx, k)
                pos = un & (cur >= 0)
                neg = un & (cur < 0)
                if pos.any():
                    ch[pos] = cur[pos] * alpha[aidx[pos]]
                if neg.any():
                    ch[neg] = cur[neg] * slope[neg]
                    acc += float(cur[neg] @ soff[neg])
            sa = st == codes.SPLIT_ACT
            si = st == codes.SPLIT_INACT
            if sa.any() or si.any():
                bidx = pp.neuron_view(pp.bidx, k)
                if sa.any():
                    ch[sa] = cur[sa] - beta[bidx[sa]]
                if si.any():
                    ch[si] = beta[bidx[si]]
            acc += float(ch @ b)
            cur = w.T @ ch
        self._saves = saves
        return cur, acc

    def _net_adjoint(self, a: np.ndarray, alpha: np.ndarray):
        """Gradient of the concretized net bound w.r.t. (o, alpha, beta)."""
        pp = self.pp
        ga = np.zeros(pp.n_alpha)
        gb = np.zeros(pp.n_beta)
        g = -pp.eps * np.sign(a)
        for k in range(pp.num_layers):
            w, b = pp.layer_view(k)
            st = pp.neuron_view(pp.status, k)
            cur = self._saves[k]
            gch = w @ g + b
            gnew = np.where(st == codes.PASS, gch, 0.0)
            un = st == codes.UNSTABLE
            if un.any():
                slope = pp.neuron_view(pp.slope, k)
                soff = pp.neuron_view(pp.soff, k)
                aidx = pp.neuron_view(pp.aidx, k)
                pos = un & (cur >= 0)
                neg = un & (cur < 0)
                if pos.any():
                    gnew[pos] = alpha[aidx[pos]] * gch[pos]
                    np.add.at(ga, aidx[pos], cur[pos] * gch[pos])
                if neg.any():
                    gnew[neg] = slope[neg] * gch[neg] + soff[neg]
            sa = st == codes.SPLIT_ACT
            si = st == codes.SPLIT_INACT
            if sa.any() or si.any():
                bidx = pp.neuron_view(pp.bidx, k)
                if sa.any():
                    gnew[sa] = gch[sa]
                    np.add.at(gb, bidx[sa], -gch[sa])
                if si.any():
                    gnew[si] = 0.0
                    np.add.at(gb, bidx[si], gch[si])
            g = gnew
        return g, ga, gb

    def eval(
        self,
        alpha: np.ndarray,
        beta: np.ndarray,
        lam: np.ndarray,
        mu: np.ndarray,
        want_grad: bool = False,
    ):
        pp = self.pp
        o = pp.c_y + pp.a_y.T @ lam + pp.b_y.T @ mu
        a, acc = self._net_backward(o, alpha, beta)
        q = pp.c_z + pp.a_z.T @ lam + pp.b_z.T @ mu
        dz = q * pp.z_sig
        value = (
            -pp.eps * (np.abs(a).sum() + np.abs(dz).sum())
            + acc
            + float(q @ pp.z_mu)
            - float(lam @ pp.e)
            - float(mu @ pp.h)
        )
        if not want_grad:
            return value, None, None, None, None
        g_o, ga, gb = self._net_adjoint(a, alpha)
        gq = -pp.eps * np.sign(dz) * pp.z_sig + pp.z_mu
        gl = pp.a_y @ g_o + pp.a_z @ gq - pp.e
        gm = pp.b_y @ g_o + pp.b_z @ gq - pp.h
        return value, ga, gb, gl, gm

    def coeffs(self, alpha, beta, lam, mu) -> np.ndarray:
        """Per-neuron incoming coefficients of the last backward pass
        (flat, aligned with the packed neuron offsets)."""
        self.eval(alpha, beta, lam, mu, want_grad=False)
        return np.concatenate(self._saves)

    # -- projected Adam ascent ----------------------------------------------

    def run_adam(self, alpha, beta, lam, mu, cfg: AdamParams):
        pp = self.pp
        na, nb, nl, nm = pp.n_alpha, pp.n_beta, pp.p_eq, pp.q_in
        theta = np.concatenate([alpha, beta, lam, mu]).astype(np.float64)
        sl_a = slice(0, na)
        sl_b = slice(na, na + nb)
        sl_l = slice(na + nb, na + nb + nl)
        sl_m = slice(na + nb + nl, na + nb + nl + nm)
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        lr = cfg.lr
        trace = np.empty(cfg.iters)
        best = -np.inf
        best_theta = theta.copy()
        crossed = -1
        t = 0
        for t in range(1, cfg.iters + 1):
            val, ga, gb, gl, gm = self.eval(
                theta[sl_a], theta[sl_b], theta[sl_l], theta[sl_m], want_grad=True
            )
            if not np.isfinite(val):
                raise FloatingPointError(f"non-finite dual value at iteration {t}")
            trace[t - 1] = val
            if val > best:
                best = val
                best_theta = theta.copy()
            if val >= cfg.early_stop:
                crossed = t - 1
                break
            if t == cfg.iters:
                break
            g = np.concatenate([ga, gb, gl, gm])
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
            mh = m / (1.0 - cfg.beta1**t)
            vh = v / (1.0 - cfg.beta2**t)
            step = lr * mh / (np.sqrt(vh) + cfg.adam_eps)
            if nl:
                nrm = float(np.linalg.norm(step[sl_l]))
                if nrm > cfg.lam_clip:
                    step[sl_l] *= cfg.lam_clip / nrm
            theta = theta + step
            np.clip(theta[sl_a], 0.0, 1.0, out=theta[sl_a])
            np.maximum(theta[sl_b], 0.0, out=theta[sl_b])
            np.maximum(theta[sl_m], 0.0, out=theta[sl_m])
            if t % cfg.decay_every == 0:
                lr *= cfg.decay
        final = (theta[sl_a].copy(), theta[sl_b].copy(), theta[sl_l].copy(), theta[sl_m].copy())
        bt = (
            best_theta[sl_a].copy(),
            best_theta[sl_b].copy(),
            best_theta[sl_l].copy(),
            best_theta[sl_m].copy(),
        )
        return best, bt, final, trace[:t].copy(), t, crossed
