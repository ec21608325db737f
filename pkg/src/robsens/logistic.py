"""Weighted logistic regression for the observable propensity score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoConvergence, RankDeficient, Separation

GRAD_TOL = 1e-8
MAX_ITER = 100
SEPARATION_ETA = 30.0
_MAX_HALVINGS = 40


@dataclass(frozen=True, eq=False)
class PropensityFit:
    beta: np.ndarray
    fitted: np.ndarray
    linear: np.ndarray  # s(x)·beta for every row, including zero-weight rows
    loglik: float
    grad_norm: float
    iterations: int
    loglik_path: tuple = ()


def expit(eta):
    """Logistic CDF, evaluated without overflow."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def loglik(beta, S, z, k) -> float:
    eta = S @ beta
    return float(np.sum(k * (z * eta - np.logaddexp(0.0, eta))))


def score(beta, S, z, k) -> np.ndarray:
    return S.T @ (k * (z - expit(S @ beta)))


def fit_logistic(S, z, k=None, beta0=None, tol: float = GRAD_TOL, max_iter: int = MAX_ITER) -> PropensityFit:
    """Newton-Raphson with step halving on arrays.

    Rows with zero weight do not enter the likelihood but still receive a
    linear predictor and fitted value.
    """
    S = np.asarray(S, dtype=float)
    z = np.asarray(z, dtype=float)
    n, p = S.shape
    k = np.ones(n) if k is None else np.asarray(k, dtype=float)
    if z.shape != (n,) or k.shape != (n,):
        raise DimensionMismatch("design, treatment and weights disagree in length")
    used = k > 0
    Su = S[used]
    if Su.shape[0] < p or np.linalg.matrix_rank(Su * np.sqrt(k[used])[:, None]) < p:
        raise RankDeficient("weighted propensity design is rank deficient")
    zu, ku = z[used], k[used]

    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    ll = loglik(beta, Su, zu, ku)
    path = [ll]
    for it in range(max_iter + 1):
        eta = Su @ beta
        mu = expit(eta)
        grad = Su.T @ (ku * (zu - mu))
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol or it == max_iter:
            break
        w = ku * mu * (1.0 - mu)
        H = (Su * w[:, None]).T @ Su
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise NoConvergence("singular information matrix") from None
        if not np.all(np.isfinite(step)):
            raise NoConvergence("non-finite Newton step")
        t = 1.0
        slack = 1e-12 * (1.0 + abs(ll))
        for _ in range(_MAX_HALVINGS):
            cand = beta + t * step
            ll_new = loglik(cand, Su, zu, ku)
            if ll_new >= ll - slack:
                break
            t *= 0.5
        else:
            raise NoConvergence(f"step halving failed at iteration {it}, score norm {gnorm:.3g}")
        if np.max(np.abs(Su @ cand)) > SEPARATION_ETA and ll_new > ll:
            raise Separation("linear predictor diverges: the arms are (quasi-)separated by the design")
        beta, ll = cand, ll_new
        path.append(ll)
    if gnorm > tol:
        raise NoConvergence(f"no convergence in {max_iter} iterations (score norm {gnorm:.3g})")
    # one polishing step: the score test is loose next to the quadratic rate
    w = ku * mu * (1.0 - mu)
    try:
        cand = beta + np.linalg.solve((Su * w[:, None]).T @ Su, grad)
    except np.linalg.LinAlgError:
        cand = beta
    g_new = float(np.linalg.norm(score(cand, Su, zu, ku)))
    ll_new = loglik(cand, Su, zu, ku)
    if np.all(np.isfinite(cand)) and g_new <= gnorm and ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
        beta, ll, gnorm = cand, ll_new, g_new
    lin = S @ beta
    return PropensityFit(beta=beta, fitted=expit(lin), linear=lin, loglik=ll,
                         grad_norm=gnorm, iterations=it, loglik_path=tuple(path))


def fit_mle(dataset, weights=None, beta0=None) -> PropensityFit:
    """Fit the propensity model of ``dataset.s_design`` with multiplicities ``weights``."""
    if dataset.s_design is None:
        raise DimensionMismatch("dataset has no propensity design; call build_designs first")
    return fit_logistic(dataset.s_design, dataset.z, weights, beta0=beta0)


def predict(fit: PropensityFit, s_row) -> float:
    s_row = np.asarray(s_row, dtype=float)
    if s_row.shape != fit.beta.shape:
        raise DimensionMismatch(f"design row has length {s_row.size}, model has {fit.beta.size}")
    return float(expit(np.array([s_row @ fit.beta]))[0])
