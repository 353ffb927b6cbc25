"""Compiled inner loops for graph-constrained Wishart sampling and edge moves.

Everything here is plain float64 numpy written to compile under numba's
nopython mode; random variates are drawn by the caller and passed in so a
single np.random.Generator owns the stream.  If numba is unavailable the
same functions run as pure Python (slow but correct).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap


@njit(cache=True)
def _chol_inplace(a):
    """In-place lower Cholesky factor of a small SPD matrix (no LAPACK dispatch)."""
    m = a.shape[0]
    for k in range(m):
        s = a[k, k]
        for t in range(k):
            s -= a[k, t] * a[k, t]
        a[k, k] = np.sqrt(s)
        for r in range(k + 1, m):
            s = a[r, k]
            for t in range(k):
                s -= a[r, t] * a[k, t]
            a[r, k] = s / a[k, k]


@njit(cache=True)
def _chol_solve_cols(chol, b):
    """Solve (L L') x = b in place for every column of b, L lower triangular."""
    m = chol.shape[0]
    ncol = b.shape[1]
    for c in range(ncol):
        for r in range(m):
            s = b[r, c]
            for t in range(r):
                s -= chol[r, t] * b[t, c]
            b[r, c] = s / chol[r, r]
        for r in range(m - 1, -1, -1):
            s = b[r, c]
            for t in range(r + 1, m):
                s -= chol[t, r] * b[t, c]
            b[r, c] = s / chol[r, r]


@njit(cache=True)
def _spd_inverse(a):
    """Inverse of a small SPD matrix via Cholesky (no LAPACK dispatch)."""
    m = a.shape[0]
    fac = a.copy()
    _chol_inplace(fac)
    out = np.zeros((m, m))
    for r in range(m):
        out[r, r] = 1.0
    _chol_solve_cols(fac, out)
    for i in range(m):
        for j in range(i):
            v = 0.5 * (out[i, j] + out[j, i])
            out[i, j] = v
            out[j, i] = v
    return out


@njit(cache=True)
def _neighbor_table(adj):
    """CSR-style neighbor structure: (offsets, flat indices), per column."""
    p = adj.shape[0]
    off = np.zeros(p + 1, np.int64)
    for j in range(p):
        c = 0
        for k in range(p):
            if adj[k, j] != 0:
                c += 1
        off[j + 1] = off[j] + c
    idx = np.empty(off[p], np.int64)
    for j in range(p):
        t = off[j]
        for k in range(p):
            if adj[k, j] != 0:
                idx[t] = k
                t += 1
    return off, idx


@njit(cache=True)
def _complete_covariance_nb(work, sigma, off, idx, tol, max_sweeps, gram, beta):
    """Relax `work` (initialized at sigma) onto the graph constraint in place.

    Repeated column regressions keep edge and diagonal entries pinned at the
    values in sigma while the remaining entries converge to the unique
    completion whose inverse carries exact zeros at non-edges.  Returns the
    sweep count, or -1 if max_sweeps was reached without meeting tol.
    """
    p = work.shape[0]
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            lo = off[j]
            m = off[j + 1] - lo
            if m == 0:
                for k in range(p):
                    if k != j:
                        change = abs(work[k, j])
                        if change > max_change:
                            max_change = change
                        work[k, j] = 0.0
                        work[j, k] = 0.0
                continue
            for r in range(m):
                beta[r] = sigma[idx[lo + r], j]
                for c in range(m):
                    gram[r, c] = work[idx[lo + r], idx[lo + c]]
            _chol_inplace(gram[:m, :m])
            _solve_chol_vec(gram, beta, m)
            for k in range(p):
                if k == j:
                    continue
                val = 0.0
                for r in range(m):
                    val += work[k, idx[lo + r]] * beta[r]
                change = abs(val - work[k, j])
                if change > max_change:
                    max_change = change
                work[k, j] = val
                work[j, k] = val
        if max_change < tol:
            return sweep + 1
    return -1


@njit(cache=True)
def _solve_chol_vec(chol, b, m):
    """Solve (L L') x = b in place for the leading m entries."""
    for r in range(m):
        s = b[r]
        for t in range(r):
            s -= chol[r, t] * b[t]
        b[r] = s / chol[r, r]
    for r in range(m - 1, -1, -1):
        s = b[r]
        for t in range(r + 1, m):
            s -= chol[t, r] * b[t]
        b[r] = s / chol[r, r]


@njit(cache=True)
def _constrained_inverse_nb(work, off, idx, gram, beta):
    """Invert a completed covariance so non-edge entries are structurally zero."""
    p = work.shape[0]
    prec = np.zeros((p, p))
    for j in range(p):
        lo = off[j]
        m = off[j + 1] - lo
        if m == 0:
            prec[j, j] = 1.0 / work[j, j]
            continue
        for r in range(m):
            beta[r] = work[idx[lo + r], j]
            for c in range(m):
                gram[r, c] = work[idx[lo + r], idx[lo + c]]
        _chol_inplace(gram[:m, :m])
        _solve_chol_vec(gram, beta, m)
        dot = 0.0
        for r in range(m):
            dot += work[j, idx[lo + r]] * beta[r]
        kjj = 1.0 / (work[j, j] - dot)
        prec[j, j] = kjj
        for r in range(m):
            prec[idx[lo + r], j] = -beta[r] * kjj
    for i in range(p):
        for j in range(i + 1, p):
            v = 0.5 * (prec[i, j] + prec[j, i])
            prec[i, j] = v
            prec[j, i] = v
    return prec


@njit(cache=True)
def _complete_covariance(work, sigma, adj, tol, max_sweeps):
    """Convenience wrapper building the neighbor table and buffers."""
    p = work.shape[0]
    off, idx = _neighbor_table(adj)
    gram = np.empty((p, p))
    beta = np.empty(p)
    return _complete_covariance_nb(work, sigma, off, idx, tol, max_sweeps, gram, beta)


@njit(cache=True)
def _constrained_inverse(work, adj):
    p = work.shape[0]
    off, idx = _neighbor_table(adj)
    gram = np.empty((p, p))
    beta = np.empty(p)
    return _constrained_inverse_nb(work, off, idx, gram, beta)


@njit(cache=True)
def _bartlett_full(chol_scale, norms, chi_sqrt):
    """Full Wishart variate (chol_scale @ A)(chol_scale @ A)' without BLAS calls."""
    p = chol_scale.shape[0]
    root = np.zeros((p, p))
    for i in range(p):
        for j in range(i + 1):
            s = 0.0
            for k in range(j, i + 1):
                a_kj = chi_sqrt[k] if k == j else norms[k, j]
                s += chol_scale[i, k] * a_kj
            root[i, j] = s
    full = np.empty((p, p))
    for i in range(p):
        for j in range(i + 1):
            s = 0.0
            for k in range(j + 1):
                s += root[i, k] * root[j, k]
            full[i, j] = s
            full[j, i] = s
    return full


@njit(cache=True)
def _gwishart_draw(adj, chol_scale, norms, chi_sqrt, tol, max_sweeps):
    """One graph-constrained Wishart draw; returns (precision, sweeps).

    The completion runs on the correlation rescaling of the inverted full
    draw (it commutes with diagonal scaling), so the absolute tolerance is
    meaningful even when a near-singular draw inflates covariance entries.
    """
    p = adj.shape[0]
    full = _bartlett_full(chol_scale, norms, chi_sqrt)
    sigma = _spd_inverse(full)
    scale = np.sqrt(np.diag(sigma))
    corr = sigma / np.outer(scale, scale)
    work = corr.copy()
    sweeps = _complete_covariance(work, corr, adj, tol, max_sweeps)
    prec = _constrained_inverse(work, adj)
    prec /= np.outer(scale, scale)
    return prec, sweeps


@njit(cache=True)
def _gwishart_draw_batch(adjs, chol_scale, norms, chi_sqrts, tol, max_sweeps):
    n = adjs.shape[0]
    p = adjs.shape[1]
    out = np.empty((n, p, p))
    worst = 0
    for i in range(n):
        prec, sweeps = _gwishart_draw(adjs[i], chol_scale, norms[i], chi_sqrts[i], tol, max_sweeps)
        out[i] = prec
        if sweeps < 0:
            worst = -1
    return out, worst


@njit(cache=True)
def _edge_conditional_terms(mat, i, j):
    """(A, B, C) of the quadratic v' M^{-1} v in the (i, j) entry given the rest.

    M is mat with row/column j removed; v the j-th column restricted to the
    remaining indices with the (i, j) entry zeroed.  A is the i-th diagonal of
    M^{-1}, B the i-th component of M^{-1} v, C = v' M^{-1} v.
    """
    p = mat.shape[0]
    m = p - 1
    sub = np.empty((m, m))
    rhs = np.zeros((m, 2))
    pos_i = -1
    r = 0
    for k in range(p):
        if k == j:
            continue
        if k == i:
            pos_i = r
        c = 0
        for l in range(p):
            if l == j:
                continue
            sub[r, c] = mat[k, l]
            c += 1
        rhs[r, 1] = mat[k, j]
        r += 1
    rhs[pos_i, 0] = 1.0
    rhs[pos_i, 1] = 0.0
    _chol_inplace(sub)
    _chol_solve_cols(sub, rhs)
    sol = rhs
    a_term = sol[pos_i, 0]
    b_term = sol[pos_i, 1]
    c_term = 0.0
    r = 0
    for k in range(p):
        if k == j:
            continue
        if k != i:
            c_term += mat[k, j] * sol[r, 1]
        r += 1
    return a_term, b_term, c_term


@njit(cache=True)
def _log_cbf(scale, i, j, a_term, b_term):
    """Log conditional Bayes factor of edge (i, j) present vs absent given the rest."""
    a0 = scale[j, j] * a_term
    b0 = scale[j, j] * b_term + scale[i, j]
    return 0.5 * np.log(2.0 * np.pi / a0) + b0 * b0 / (2.0 * a0)


@njit(cache=True)
def _dmh_edge_sweep(
    omega,
    adj,
    post_scale,
    prior_scale,
    chol_prior_inv_scale,
    log_edge_odds,
    pairs,
    log_u,
    z_refresh,
    gamma_std,
    aux_norms,
    aux_chis,
    tol,
    max_sweeps,
):
    """Single-edge exchange moves on (graph, precision), mutating both in place.

    Each sub-step toggles one pair, draws an auxiliary prior variate under the
    proposed graph, and accepts on the ratio of conditional Bayes factors so
    the intractable normalizing constants cancel.  On acceptance the affected
    entry and diagonal are refreshed from their exact full conditional under
    the posterior scale.  Returns (accept count, status) with status -1 when
    an auxiliary completion failed to converge.
    """
    n_accept = 0
    status = 0
    for s in range(pairs.shape[0]):
        i = pairs[s, 0]
        j = pairs[s, 1]
        adding = adj[i, j] == 0
        new_val = 1 - adj[i, j]
        adj[i, j] = new_val
        adj[j, i] = new_val
        aux, sweeps = _gwishart_draw(
            adj, chol_prior_inv_scale, aux_norms[s], aux_chis[s], tol, max_sweeps
        )
        if sweeps < 0:
            status = -1
        a_dat, b_dat, c_dat = _edge_conditional_terms(omega, i, j)
        a_aux, b_aux, _ = _edge_conditional_terms(aux, i, j)
        log_cbf_data = _log_cbf(post_scale, i, j, a_dat, b_dat)
        log_cbf_aux = _log_cbf(prior_scale, i, j, a_aux, b_aux)
        if adding:
            log_alpha = log_edge_odds + log_cbf_data - log_cbf_aux
        else:
            log_alpha = -log_edge_odds - log_cbf_data + log_cbf_aux
        if log_u[s] < log_alpha:
            n_accept += 1
            if adding:
                a0 = post_scale[j, j] * a_dat
                b0 = post_scale[j, j] * b_dat + post_scale[i, j]
                entry = -b0 / a0 + z_refresh[s] / np.sqrt(a0)
            else:
                entry = 0.0
            schur = gamma_std[s] * 2.0 / post_scale[j, j]
            quad = c_dat + 2.0 * b_dat * entry + a_dat * entry * entry
            omega[i, j] = entry
            omega[j, i] = entry
            omega[j, j] = schur + quad
        else:
            adj[i, j] = 1 - new_val
            adj[j, i] = 1 - new_val
    return n_accept, status
