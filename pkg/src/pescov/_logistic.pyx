# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Bernoulli-logit likelihood and logistic-normal quadrature kernels.

The linear predictor is ``eta[i] = X[i] @ theta + offset[group[i]]`` with X
in CSR form. Mirrors ``pescov._logistic_py`` exactly.
"""

from libc.math cimport exp, log, log1p


cdef inline double _softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double _loglik_resid(double y, double eta, double *resid) noexcept nogil:
    # one exp serves both log(1 + e^eta) and expit(eta)
    cdef double e
    if eta >= 0:
        e = exp(-eta)
        resid[0] = y - 1.0 / (1.0 + e)
        return y * eta - eta - log1p(e)
    e = exp(eta)
    resid[0] = y - e / (1.0 + e)
    return y * eta - log1p(e)


def loglik_grad(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                const double[::1] theta, const double[::1] offset, const int[::1] group,
                const double[::1] y, double[::1] grad_theta, double[::1] grad_offset):
    """Return the log-likelihood; write d/dtheta and per-group d/doffset into the outputs."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, k
    cdef double eta, r, total = 0.0
    with nogil:
        for k in range(grad_theta.shape[0]):
            grad_theta[k] = 0.0
        for k in range(grad_offset.shape[0]):
            grad_offset[k] = 0.0
        for i in range(n):
            eta = offset[group[i]]
            for k in range(indptr[i], indptr[i + 1]):
                eta = eta + data[k] * theta[indices[k]]
            total = total + _loglik_resid(y[i], eta, &r)
            grad_offset[group[i]] += r
            for k in range(indptr[i], indptr[i + 1]):
                grad_theta[indices[k]] += data[k] * r
    return total


def loglik(const int[::1] indptr, const int[::1] indices, const double[::1] data,
           const double[::1] theta, const double[::1] offset, const int[::1] group,
           const double[::1] y):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, k
    cdef double eta, total = 0.0
    with nogil:
        for i in range(n):
            eta = offset[group[i]]
            for k in range(indptr[i], indptr[i + 1]):
                eta = eta + data[k] * theta[indices[k]]
            total = total + y[i] * eta - _softplus(eta)
    return total


def loglik_pointwise(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                     const double[::1] theta, const double[::1] offset, const int[::1] group,
                     const double[::1] y, double[::1] out):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t i, k
    cdef double eta
    with nogil:
        for i in range(n):
            eta = offset[group[i]]
            for k in range(indptr[i], indptr[i + 1]):
                eta = eta + data[k] * theta[indices[k]]
            out[i] = y[i] * eta - _softplus(eta)


def normal_expit_mean(const double[::1] loc, const double[::1] sigma, const double[::1] z,
                      const double[::1] w, double[::1] out):
    """out[i] = sum_j w[j] expit(loc[i] + sigma[i] z[j])."""
    cdef Py_ssize_t n = loc.shape[0], m = z.shape[0]
    cdef Py_ssize_t i, j
    cdef double x, e, acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(m):
                x = loc[i] + sigma[i] * z[j]
                if x >= 0:
                    acc = acc + w[j] / (1.0 + exp(-x))
                else:
                    e = exp(x)
                    acc = acc + w[j] * (e / (1.0 + e))
            out[i] = acc


cdef double _LOG_2PI = 1.8378770664093453
cdef double _LOG_PI = 1.1447298858494002


cdef class HierarchicalPosterior:
    """Log posterior and gradient of the four-level non-centered logistic model.

    See ``pescov._logistic_py.HierarchicalPosterior`` for the reference
    implementation and argument conventions.
    """

    cdef int[::1] indptr, indices, group, psu_of_hh, stratum_of_psu
    cdef double[::1] data, y
    cdef double[:, ::1] x_hh, x_psu, x_ta, W
    cdef double[::1] g_theta, g_off, a_ta, a_st, a_psu, off, g_psu, g_st, g_ta
    cdef Py_ssize_t t0, n_theta, i_bhh, i_bpsu, i_bta, i_ls, i_zta, i_zst, i_zpsu, i_zhh
    cdef Py_ssize_t K_hh, K_psu, K_ta, T, S, P, H
    cdef bint natural
    cdef double mu_scale, beta_scale, sigma_scale, ta_df, ta_const

    def __init__(self, indptr, indices, data, y, group, psu_of_hh, stratum_of_psu,
                 x_hh, x_psu, x_ta, W, layout, bint natural, priors):
        self.indptr, self.indices, self.data = indptr, indices, data
        self.y, self.group = y, group
        self.psu_of_hh, self.stratum_of_psu = psu_of_hh, stratum_of_psu
        self.x_hh, self.x_psu, self.x_ta, self.W = x_hh, x_psu, x_ta, W
        (self.t0, self.n_theta, self.i_bhh, self.i_bpsu, self.i_bta, self.i_ls,
         self.i_zta, self.i_zst, self.i_zpsu, self.i_zhh) = layout
        self.K_hh = x_hh.shape[1]
        self.K_psu = self.i_bta - self.i_bpsu
        self.K_ta = x_ta.shape[1]
        self.S, self.T = W.shape[0], W.shape[1]
        self.P = x_psu.shape[0]
        self.H = x_hh.shape[0]
        self.natural = natural
        self.mu_scale, self.beta_scale, self.sigma_scale, self.ta_df, self.ta_const = priors
        import numpy as np
        self.g_theta = np.zeros(self.n_theta)
        self.g_off = np.zeros(self.H)
        self.off = np.zeros(self.H)
        self.a_ta = np.zeros(self.T)
        self.a_st = np.zeros(self.S)
        self.a_psu = np.zeros(self.P)
        self.g_psu = np.zeros(self.P)
        self.g_st = np.zeros(self.S)
        self.g_ta = np.zeros(self.T)

    def logp_grad(self, const double[::1] u, double[::1] grad):
        """Return the log posterior at ``u`` and write its gradient into ``grad``."""
        cdef Py_ssize_t i, j, k, n = self.y.shape[0]
        cdef double lp = 0.0, ll = 0.0, x, s2, c2, acc, r
        cdef double s_hh, s_psu, s_st, s_ta, mu
        cdef double gs_hh = 0.0, gs_psu = 0.0, gs_st = 0.0, gs_ta = 0.0
        cdef double nu = self.ta_df
        cdef double bs2 = self.beta_scale * self.beta_scale
        cdef Py_ssize_t dim = u.shape[0]
        with nogil:
            for i in range(dim):
                grad[i] = 0.0
            s_hh = exp(u[self.i_ls])
            s_psu = exp(u[self.i_ls + 1])
            s_st = exp(u[self.i_ls + 2])
            s_ta = exp(u[self.i_ls + 3])
            mu = u[0]

            # priors
            lp -= _LOG_PI + log(self.mu_scale) + log1p((mu / self.mu_scale) * (mu / self.mu_scale))
            grad[0] -= 2.0 * mu / (self.mu_scale * self.mu_scale + mu * mu)
            for i in range(1, self.i_ls):
                x = u[i]
                lp -= 0.5 * x * x / bs2 + 0.5 * _LOG_2PI + log(self.beta_scale)
                grad[i] -= x / bs2
            c2 = self.sigma_scale * self.sigma_scale
            for i in range(4):
                x = exp(u[self.i_ls + i])
                s2 = x * x
                lp += log(2.0) - _LOG_PI - log(self.sigma_scale) - log1p(s2 / c2) + u[self.i_ls + i]
                grad[self.i_ls + i] += 1.0 - 2.0 * s2 / (c2 + s2)
            for i in range(self.T):
                x = u[self.i_zta + i]
                lp += self.ta_const - 0.5 * (nu + 1.0) * log1p(x * x / nu)
                grad[self.i_zta + i] -= (nu + 1.0) * x / (nu + x * x)
            for i in range(self.i_zst, dim):
                x = u[i]
                lp -= 0.5 * x * x + 0.5 * _LOG_2PI
                grad[i] -= x

            # forward pass through the hierarchy
            for i in range(self.T):
                acc = s_ta * u[self.i_zta + i]
                for k in range(self.K_ta):
                    acc += self.x_ta[i, k] * u[self.i_bta + k]
                self.a_ta[i] = acc
            for i in range(self.S):
                acc = s_st * u[self.i_zst + i]
                for k in range(self.T):
                    acc += self.W[i, k] * self.a_ta[k]
                self.a_st[i] = acc
            for i in range(self.P):
                acc = self.a_st[self.stratum_of_psu[i]] + s_psu * u[self.i_zpsu + i]
                if self.natural:
                    for k in range(self.K_psu):
                        acc += self.x_psu[i, k] * u[self.i_bpsu + k]
                self.a_psu[i] = acc
            for i in range(self.H):
                acc = self.a_psu[self.psu_of_hh[i]] + s_hh * u[self.i_zhh + i]
                if self.natural:
                    acc += mu
                    for k in range(self.K_hh):
                        acc += self.x_hh[i, k] * u[self.i_bhh + k]
                self.off[i] = acc

            # likelihood
            for k in range(self.n_theta):
                self.g_theta[k] = 0.0
            for i in range(self.H):
                self.g_off[i] = 0.0
            for i in range(n):
                x = self.off[self.group[i]]
                for k in range(self.indptr[i], self.indptr[i + 1]):
                    x = x + self.data[k] * u[self.t0 + self.indices[k]]
                ll = ll + _loglik_resid(self.y[i], x, &r)
                self.g_off[self.group[i]] += r
                for k in range(self.indptr[i], self.indptr[i + 1]):
                    self.g_theta[self.indices[k]] += self.data[k] * r
            for k in range(self.n_theta):
                grad[self.t0 + k] += self.g_theta[k]

            # backward pass
            for i in range(self.P):
                self.g_psu[i] = 0.0
            for i in range(self.H):
                r = self.g_off[i]
                grad[self.i_zhh + i] += s_hh * r
                gs_hh += u[self.i_zhh + i] * r
                self.g_psu[self.psu_of_hh[i]] += r
                if self.natural:
                    grad[0] += r
                    for k in range(self.K_hh):
                        grad[self.i_bhh + k] += self.x_hh[i, k] * r
            for i in range(self.S):
                self.g_st[i] = 0.0
            for i in range(self.P):
                r = self.g_psu[i]
                grad[self.i_zpsu + i] += s_psu * r
                gs_psu += u[self.i_zpsu + i] * r
                self.g_st[self.stratum_of_psu[i]] += r
                if self.natural:
                    for k in range(self.K_psu):
                        grad[self.i_bpsu + k] += self.x_psu[i, k] * r
            for k in range(self.T):
                self.g_ta[k] = 0.0
            for i in range(self.S):
                r = self.g_st[i]
                grad[self.i_zst + i] += s_st * r
                gs_st += u[self.i_zst + i] * r
                for k in range(self.T):
                    self.g_ta[k] += self.W[i, k] * r
            for i in range(self.T):
                r = self.g_ta[i]
                grad[self.i_zta + i] += s_ta * r
                gs_ta += u[self.i_zta + i] * r
                for k in range(self.K_ta):
                    grad[self.i_bta + k] += self.x_ta[i, k] * r
            grad[self.i_ls] += s_hh * gs_hh
            grad[self.i_ls + 1] += s_psu * gs_psu
            grad[self.i_ls + 2] += s_st * gs_st
            grad[self.i_ls + 3] += s_ta * gs_ta
        return lp + ll, ll
