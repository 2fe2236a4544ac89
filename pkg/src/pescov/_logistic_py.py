"""Pure-NumPy fallback for the compiled likelihood kernels in ``_logistic.pyx``."""

import numpy as np
from scipy import sparse
from scipy.special import expit


def _design(indptr, indices, data, n_cols):
    n = len(indptr) - 1
    return sparse.csr_matrix((data, indices, indptr), shape=(n, n_cols))


def _eta(indptr, indices, data, theta, offset, group):
    X = _design(indptr, indices, data, len(theta))
    return X @ theta + offset[group], X


def loglik_grad(indptr, indices, data, theta, offset, group, y, grad_theta, grad_offset):
    eta, X = _eta(indptr, indices, data, theta, offset, group)
    r = y - expit(eta)
    grad_theta[:] = X.T @ r
    grad_offset[:] = np.bincount(group, weights=r, minlength=len(grad_offset))
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def loglik(indptr, indices, data, theta, offset, group, y):
    eta, _ = _eta(indptr, indices, data, theta, offset, group)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def loglik_pointwise(indptr, indices, data, theta, offset, group, y, out):
    eta, _ = _eta(indptr, indices, data, theta, offset, group)
    out[:] = y * eta - np.logaddexp(0.0, eta)


def normal_expit_mean(loc, sigma, z, w, out):
    step = max(1, 2_000_000 // len(z))
    for i in range(0, len(loc), step):
        sl = slice(i, i + step)
        vals = expit(loc[sl, None] + sigma[sl, None] * z[None, :])
        # row-wise reduction, so a value does not depend on the chunk it is in
        out[sl] = (vals * w).sum(axis=1)


_LOG_2PI = np.log(2 * np.pi)


class HierarchicalPosterior:
    """Log posterior and gradient of the four-level non-centered logistic model.

    Parameters
    ----------
    indptr, indices, data : arrays
        CSR person design whose columns multiply ``u[t0:t0 + n_theta]``.
    y, group : arrays
        Outcomes and the household index of each person.
    psu_of_hh, stratum_of_psu : int arrays
    x_hh, x_psu, x_ta, W : 2-D arrays
        Unit covariates and the stratum x TA share matrix. ``x_psu`` must have
        as many columns as the ``beta_psu`` block.
    layout : tuple
        ``(t0, n_theta, i_beta_hh, i_beta_psu, i_beta_ta, i_log_sigma,
        i_z_ta, i_z_strat, i_z_psu, i_z_hh)``.
    natural : bool
        If true, ``mu`` and the household/PSU covariates enter through the unit
        effects; otherwise they are columns of the CSR design.
    priors : tuple
        ``(mu_scale, beta_scale, sigma_scale, ta_df, ta_const)`` where ``ta_const``
        is the log normalizing constant of the standard t density.
    """

    def __init__(self, indptr, indices, data, y, group, psu_of_hh, stratum_of_psu,
                 x_hh, x_psu, x_ta, W, layout, natural, priors):
        self.csr = (indptr, indices, data)
        self.y, self.group = y, group
        self.psu_of_hh, self.stratum_of_psu = psu_of_hh, stratum_of_psu
        self.x_hh, self.x_psu, self.x_ta, self.W = x_hh, x_psu, x_ta, W
        (self.t0, self.n_theta, self.i_bhh, self.i_bpsu, self.i_bta, self.i_ls,
         self.i_zta, self.i_zst, self.i_zpsu, self.i_zhh) = layout
        self.natural = bool(natural)
        self.priors = priors
        self.X = _design(indptr, indices, data, self.n_theta)
        self.Xt = self.X.T.tocsr()
        self.H, self.P, self.S = x_hh.shape[0], x_psu.shape[0], W.shape[0]

    def _prior(self, u, grad):
        mu_scale, beta_scale, sigma_scale, nu, ta_const = self.priors
        mu = u[0]
        lp = -np.log(np.pi * mu_scale) - np.log1p((mu / mu_scale) ** 2)
        grad[0] -= 2.0 * mu / (mu_scale ** 2 + mu * mu)
        b = u[1:self.i_ls]
        lp += -0.5 * np.dot(b, b) / beta_scale ** 2 - b.size * (0.5 * _LOG_2PI + np.log(beta_scale))
        grad[1:self.i_ls] -= b / beta_scale ** 2
        ls = u[self.i_ls:self.i_ls + 4]
        s2 = np.exp(2 * ls)
        c2 = sigma_scale ** 2
        lp += np.sum(np.log(2.0 / (np.pi * sigma_scale)) - np.log1p(s2 / c2) + ls)
        grad[self.i_ls:self.i_ls + 4] += 1.0 - 2.0 * s2 / (c2 + s2)
        z = u[self.i_zta:self.i_zst]
        lp += z.size * ta_const - 0.5 * (nu + 1) * np.sum(np.log1p(z * z / nu))
        grad[self.i_zta:self.i_zst] -= (nu + 1) * z / (nu + z * z)
        z = u[self.i_zst:]
        lp += -0.5 * np.dot(z, z) - 0.5 * _LOG_2PI * z.size
        grad[self.i_zst:] -= z
        return lp

    def logp_grad(self, u, grad):
        grad[:] = 0.0
        lp = self._prior(u, grad)
        s_hh, s_psu, s_st, s_ta = np.exp(u[self.i_ls:self.i_ls + 4])
        z_ta = u[self.i_zta:self.i_zst]
        z_st = u[self.i_zst:self.i_zpsu]
        z_psu = u[self.i_zpsu:self.i_zhh]
        z_hh = u[self.i_zhh:]
        b_psu = u[self.i_bpsu:self.i_bta]
        b_hh = u[self.i_bhh:self.i_bpsu]
        a_ta = self.x_ta @ u[self.i_bta:self.i_ls] + s_ta * z_ta
        a_st = self.W @ a_ta + s_st * z_st
        a_psu = a_st[self.stratum_of_psu] + s_psu * z_psu
        if self.natural:
            a_psu = a_psu + self.x_psu @ b_psu
        off = a_psu[self.psu_of_hh] + s_hh * z_hh
        if self.natural:
            off = off + u[0] + self.x_hh @ b_hh
        theta = u[self.t0:self.t0 + self.n_theta]
        eta = self.X @ theta + off[self.group]
        ll = np.sum(self.y * eta - np.logaddexp(0.0, eta))
        r = self.y - expit(eta)
        grad[self.t0:self.t0 + self.n_theta] += self.Xt @ r
        g_off = np.bincount(self.group, weights=r, minlength=self.H)
        grad[self.i_zhh:] += s_hh * g_off
        g_psu = np.bincount(self.psu_of_hh, weights=g_off, minlength=self.P)
        grad[self.i_zpsu:self.i_zhh] += s_psu * g_psu
        g_st = np.bincount(self.stratum_of_psu, weights=g_psu, minlength=self.S)
        grad[self.i_zst:self.i_zpsu] += s_st * g_st
        g_ta = self.W.T @ g_st
        grad[self.i_zta:self.i_zst] += s_ta * g_ta
        grad[self.i_bta:self.i_ls] += self.x_ta.T @ g_ta
        if self.natural:
            grad[0] += g_off.sum()
            grad[self.i_bhh:self.i_bpsu] += self.x_hh.T @ g_off
            grad[self.i_bpsu:self.i_bta] += self.x_psu.T @ g_psu
        grad[self.i_ls:self.i_ls + 4] += np.array([
            s_hh * np.dot(z_hh, g_off), s_psu * np.dot(z_psu, g_psu),
            s_st * np.dot(z_st, g_st), s_ta * np.dot(z_ta, g_ta),
        ])
        return float(lp + ll), float(ll)
