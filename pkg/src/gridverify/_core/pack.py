"""Flattened problem layout shared by the numpy and compiled kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from . import codes


@dataclass
class AdamParams:
    lr: float = 0.05
    decay: float = 0.98
    decay_every: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-12
    iters: int = 5000
    early_stop: float = 0.0
    lam_clip: float = 1e3


class PackedProblem:
    """Dual evaluation data in flat arrays.

    Layers are the normalized network (leading scale layer included); the
    constraint blocks follow min c_y.y + c_z.z s.t. A_y y + A_z z = e,
    B_y y + B_z z <= h, ||xhat||_inf <= eps, z in the (z_mu, z_sig) box.
    """

    def __init__(
        self,
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        statuses: Sequence[np.ndarray],
        lowers: Sequence[np.ndarray],
        uppers: Sequence[np.ndarray],
        a_y=None,
        a_z=None,
        e=None,
        b_y=None,
        b_z=None,
        h=None,
        c_y=None,
        c_z=None,
        z_mu=None,
        z_sig=None,
        eps: float = 1.0,
    ):
        k = len(weights)
        self.num_layers = k
        self.rows = np.array([w.shape[0] for w in weights], dtype=np.int64)
        self.cols = np.array([w.shape[1] for w in weights], dtype=np.int64)
        self.n_in = int(self.cols[0])
        self.n_y = int(self.rows[-1])
        self.w_off = np.zeros(k + 1, dtype=np.int64)
        self.n_off = np.zeros(k + 1, dtype=np.int64)
        for i in range(k):
            self.w_off[i + 1] = self.w_off[i] + self.rows[i] * self.cols[i]
            self.n_off[i + 1] = self.n_off[i] + self.rows[i]
        self.w_flat = np.concatenate([np.ascontiguousarray(w, dtype=np.float64).ravel() for w in weights])
        self.b_flat = np.concatenate([np.asarray(b, dtype=np.float64).ravel() for b in biases])
        self.status = np.concatenate([np.asarray(s, dtype=np.int8) for s in statuses])
        total = int(self.n_off[-1])
        self.slope = np.zeros(total)
        self.soff = np.zeros(total)
        self.aidx = np.full(total, -1, dtype=np.int64)
        self.bidx = np.full(total, -1, dtype=np.int64)
        na = nb = 0
        for i in range(k):
            lo = np.asarray(lowers[i], dtype=np.float64)
            up = np.asarray(uppers[i], dtype=np.float64)
            base = int(self.n_off[i])
            st = self.status[base : base + int(self.rows[i])]
            for j in range(int(self.rows[i])):
                s = st[j]
                if s == codes.UNSTABLE:
                    sl = up[j] / (up[j] - lo[j])
                    self.slope[base + j] = sl
                    self.soff[base + j] = -lo[j] * sl
                    self.aidx[base + j] = na
                    na += 1
                elif s in (codes.SPLIT_ACT, codes.SPLIT_INACT):
                    self.bidx[base + j] = nb
                    nb += 1
        self.n_alpha = na
        self.n_beta = nb

        def block(mat, rows_dim, cols_dim):
            if mat is None:
                return np.zeros((rows_dim, cols_dim))
            m = np.atleast_2d(np.asarray(mat, dtype=np.float64))
            return np.ascontiguousarray(m)

        def vec(v, dim):
            if v is None:
                return np.zeros(dim)
            return np.asarray(v, dtype=np.float64).reshape(-1).copy()

        self.c_y = vec(c_y, self.n_y)
        self.c_z = vec(c_z, 0) if c_z is None else vec(c_z, len(np.atleast_1d(c_z)))
        self.n_z = self.c_z.shape[0]
        p = 0 if e is None else np.asarray(e).reshape(-1).shape[0]
        q = 0 if h is None else np.asarray(h).reshape(-1).shape[0]
        self.a_y = block(a_y, p, self.n_y)
        self.a_z = block(a_z, p, self.n_z)
        self.e = vec(e, p)
        self.b_y = block(b_y, q, self.n_y)
        self.b_z = block(b_z, q, self.n_z)
        self.h = vec(h, q)
        self.z_mu = vec(z_mu, self.n_z)
        self.z_sig = vec(z_sig, self.n_z)
        self.eps = float(eps)
        self.p_eq = p
        self.q_in = q
        for name in ("a_y", "a_z", "b_y", "b_z"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=np.float64))

    def layer_view(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        w = self.w_flat[self.w_off[k] : self.w_off[k + 1]].reshape(self.rows[k], self.cols[k])
        b = self.b_flat[self.n_off[k] : self.n_off[k + 1]]
        return w, b

    def neuron_view(self, arr: np.ndarray, k: int) -> np.ndarray:
        return arr[self.n_off[k] : self.n_off[k + 1]]

    def zero_state(self):
        return (
            np.zeros(self.n_alpha),
            np.zeros(self.n_beta),
            np.zeros(self.p_eq),
            np.zeros(self.q_in),
        )
