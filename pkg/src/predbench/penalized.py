"""Binary logistic regression and the weighted elastic-net family.

All fits maximize the total (summed) log-likelihood minus the penalty

    lambda * (alpha * sum_j w_j |beta_j| + (1 - alpha)/2 * sum_j beta_j^2)

with covariates standardized internally and the intercept never penalized.
Coefficients are reported on the original scale; objectives, penalties and
the divergence heuristic live on the standardized scale. An L1 weight of
+inf excludes a variable outright.

The solver is an outer IRLS quadratic approximation with inner cyclic
coordinate descent (numba kernel), warm-started along a decreasing lambda
path. Tuning is 5-fold cross-validated binomial deviance with the
one-standard-error rule, applied per alpha and then across alphas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import expit

from .datagen import Dataset
from .forest import Forest, ForestParams, fit_random_forest, gini_importance, predict_forest
from .streams import RngStream

DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
_DIVERGENCE_NORM = 1e3  # separation heuristic, standardized scale
_PROB_CLIP = 1e-5  # IRLS working-weight floor
_DEV_CLIP = 1e-15


class ConvergenceError(RuntimeError):
    """A fit stage failed; carries the stage name for replication records."""

    def __init__(self, message: str, stage: str = "fit"):
        super().__init__(message)
        self.stage = stage


@dataclass
class PenaltySpec:
    """Elastic-net penalty: overall lambda, L1/L2 mix alpha, L1 weights."""

    lambda_: float
    alpha: float
    weights: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError("lambda must be nonnegative")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must lie in [0, 1]")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(np.isnan(w)) or np.any(w < 0):
            raise ValueError("weights must be nonnegative (inf allowed)")
        self.weights = w


@dataclass
class FittedModel:
    """A fitted linear-family model on the original covariate scale."""

    intercept: float
    coef: np.ndarray
    converged: bool
    iterations: int
    objective: float
    penalty: Optional[PenaltySpec] = None
    col_mean: Optional[np.ndarray] = None
    col_scale: Optional[np.ndarray] = None

    def standardized_coef(self) -> np.ndarray:
        if self.col_scale is None:
            return self.coef.copy()
        return self.coef * self.col_scale

    def standardized_intercept(self) -> float:
        if self.col_mean is None:
            return self.intercept
        return self.intercept + float(self.coef @ self.col_mean)


@dataclass
class CvSelection:
    """Cross-validation surface and the selected (alpha, lambda) pair."""

    alphas: tuple
    lambda_paths: list  # one decreasing array per alpha
    cv_mean: list  # per alpha: mean held-out deviance along its path
    cv_se: list  # per alpha: standard error over folds
    chosen_alpha: float
    chosen_lambda: float
    chosen_index: int
    rule: str
    failed: bool = False
    restricted: bool = False  # lambda choice was limited to all-folds-converged points


@dataclass
class FittedPredictor:
    """Any trained method, ready for probability prediction."""

    method_id: str
    model: object = None  # FittedModel or Forest
    cv: Optional[CvSelection] = None
    l1_weights: Optional[np.ndarray] = None
    converged: bool = True
    failure_stage: Optional[str] = None


@dataclass(frozen=True)
class MethodConfig:
    alphas: tuple = DEFAULT_ALPHAS
    n_lambda: int = 100
    cv_folds: int = 5
    rule: str = "one_se"
    gamma: float = 1.0
    forest: ForestParams = field(default_factory=ForestParams)
    lambda_min_ratio: Optional[float] = None
    max_outer: int = 50
    max_inner: int = 1000
    tol: float = 1e-7
    cv_tol: float = 1e-5  # fold fits only feed deviance curves; looser is fine


@dataclass
class MethodStreams:
    fold_split: RngStream
    forest: RngStream


METHOD_IDS = ("GLM", "EN", "AEN", "AINET", "RF")


def soft_threshold(z: float, t: float) -> float:
    """sign(z) * max(|z| - t, 0)."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


def _standardize(X: np.ndarray):
    """Column means/sds and the standardized matrix; constant columns get sd 1."""
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd == 0.0
    scale = np.where(const, 1.0, sd)
    Xs = (X - mean) / scale
    return np.ascontiguousarray(Xs), mean, scale, const


def _clipped_mean_logit(y: np.ndarray) -> float:
    ybar = min(max(float(np.mean(y)), 1e-12), 1.0 - 1e-12)
    return math.log(ybar / (1.0 - ybar))


def negative_log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def fit_logistic_irls(
    X: np.ndarray,
    y: np.ndarray,
    ridge_lambda: float = 0.0,
    offset: Optional[np.ndarray] = None,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> FittedModel:
    """Maximum likelihood (optionally ridge-penalized) logistic regression.

    Degenerate outcomes, separation (standardized coefficient norm above 1e3)
    and singular working equations all yield converged=False rather than an
    exception; the engine treats such fits as excluded replications.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-dimensional")
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be nonnegative")
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64).ravel()
        if len(offset) != n:
            raise ValueError("offset length mismatch")

    Xs, mean, scale, const = _standardize(X) if p else (np.zeros((n, 0)), np.zeros(0), np.ones(0), np.zeros(0, dtype=bool))
    keep = ~const
    Xk = Xs[:, keep]
    pk = Xk.shape[1]

    if y.min() == y.max():
        # single-class outcome: the MLE is at infinity
        return FittedModel(
            intercept=_clipped_mean_logit(y), coef=np.zeros(p), converged=False,
            iterations=0, objective=math.nan, col_mean=mean, col_scale=scale,
        )

    params = np.zeros(pk + 1)
    params[0] = _clipped_mean_logit(y)
    pen = np.concatenate(([0.0], np.full(pk, ridge_lambda)))
    A = np.concatenate([np.ones((n, 1)), Xk], axis=1)

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = A @ params
        if offset is not None:
            eta = eta + offset
        mu = np.clip(expit(eta), _PROB_CLIP, 1.0 - _PROB_CLIP)
        v = mu * (1.0 - mu)
        z = eta + (y - mu) / v
        if offset is not None:
            z = z - offset
        AtV = A.T * v
        H = AtV @ A + np.diag(pen)
        try:
            new = np.linalg.solve(H, AtV @ z)
        except np.linalg.LinAlgError:
            break  # singular working equations
        if not np.all(np.isfinite(new)):
            break
        delta = float(np.max(np.abs(new - params)))
        params = new
        if np.linalg.norm(params[1:]) > _DIVERGENCE_NORM or abs(params[0]) > _DIVERGENCE_NORM:
            converged = False
            break
        if delta < tol:
            converged = True
            break

    b0_std, coef = _unstandardize(params, keep, p, scale)
    intercept = b0_std - float(coef @ mean)
    eta_full = intercept + X @ coef
    if offset is not None:
        eta_full = eta_full + offset
    obj = negative_log_likelihood(eta_full, y) + 0.5 * ridge_lambda * float(np.sum(params[1:] ** 2))
    return FittedModel(
        intercept=intercept, coef=coef, converged=converged, iterations=it,
        objective=obj, col_mean=mean, col_scale=scale,
        penalty=PenaltySpec(ridge_lambda, 0.0, np.ones(p)) if ridge_lambda > 0 else None,
    )


def _unstandardize(params, keep, p, scale):
    coef = np.zeros(p)
    coef[keep] = params[1:] / scale[keep]
    return float(params[0]), coef


@njit(cache=True)
def _cd_cycle(A, Ab, c0, q, b0, beta, active_only, l1, l2, w):
    """One coordinate-descent cycle on the quadratic subproblem.

    Uses covariance updates: A = Xs'VXs, Ab = A @ beta, c0 = Xs'Vz, q = Xs'v.
    Returns the largest coefficient change of the cycle.
    """
    p = beta.shape[0]
    delta = 0.0
    for j in range(p):
        if np.isinf(w[j]):
            continue
        if active_only and beta[j] == 0.0:
            continue
        if A[j, j] <= 0.0:
            continue
        g = c0[j] - b0 * q[j] - Ab[j] + A[j, j] * beta[j]
        t = l1 * w[j]
        if g > t:
            bn = (g - t) / (A[j, j] + l2)
        elif g < -t:
            bn = (g + t) / (A[j, j] + l2)
        else:
            bn = 0.0
        diff = bn - beta[j]
        if diff != 0.0:
            for k in range(p):
                Ab[k] += A[k, j] * diff
            beta[j] = bn
            ad = abs(diff)
            if ad > delta:
                delta = ad
    return delta


@njit(cache=True)
def _cd_path_kernel(Xs, y, w, alpha, lambdas, max_outer, max_inner, tol, div_norm):
    """Warm-started IRLS + cyclic coordinate descent along a lambda path.

    The inner solver iterates over the active set between full sweeps, with
    covariance updates so each coordinate step is O(p) rather than O(n).
    """
    n, p = Xs.shape
    L = lambdas.shape[0]
    out_beta = np.zeros((L, p))
    out_b0 = np.zeros(L)
    out_conv = np.zeros(L, dtype=np.bool_)
    out_iter = np.zeros(L, dtype=np.int64)

    ybar = 0.0
    for i in range(n):
        ybar += y[i]
    ybar /= n
    if ybar < 1e-12:
        ybar = 1e-12
    if ybar > 1.0 - 1e-12:
        ybar = 1.0 - 1e-12

    beta = np.zeros(p)
    b0 = math.log(ybar / (1.0 - ybar))
    eta = np.full(n, b0)
    mu = np.empty(n)
    v = np.empty(n)
    z = np.empty(n)
    Xv = np.empty((n, p))
    A = np.zeros((p, p))
    c0 = np.zeros(p)
    q = np.zeros(p)
    sum_v = 1.0
    sum_vz = 0.0
    a_stale = True  # quadratic model must match the current eta
    good_beta = beta.copy()
    good_b0 = b0

    for l in range(L):
        lam = lambdas[l]
        l1 = lam * alpha
        l2 = lam * (1.0 - alpha)
        converged = False
        diverged = False
        total_iter = 0
        for outer in range(max_outer):
            if a_stale:
                # quadratic approximation at the current eta
                sum_v = 0.0
                sum_vz = 0.0
                for i in range(n):
                    m = 1.0 / (1.0 + math.exp(-eta[i]))
                    if m < 1e-5:
                        m = 1e-5
                    elif m > 1.0 - 1e-5:
                        m = 1.0 - 1e-5
                    mu[i] = m
                    vi = m * (1.0 - m)
                    v[i] = vi
                    sum_v += vi
                    zi = eta[i] + (y[i] - m) / vi
                    z[i] = zi
                    sum_vz += vi * zi
                    for j in range(p):
                        Xv[i, j] = Xs[i, j] * vi
                A = Xv.T @ Xs  # X' V X
                c0 = Xv.T @ z
                for j in range(p):
                    s = 0.0
                    for i in range(n):
                        s += Xv[i, j]
                    q[j] = s
                a_stale = False
            Ab = A @ beta

            beta_start = beta.copy()
            b0_start = b0
            budget = max_inner
            while budget > 0:
                # full sweep, then cheap active-set sweeps until stable
                delta = _cd_cycle(A, Ab, c0, q, b0, beta, False, l1, l2, w)
                qb = 0.0
                for j in range(p):
                    qb += q[j] * beta[j]
                b0_new = (sum_vz - qb) / sum_v
                if abs(b0_new - b0) > delta:
                    delta = abs(b0_new - b0)
                b0 = b0_new
                total_iter += 1
                budget -= 1
                if delta < tol:
                    break
                while budget > 0:
                    d_act = _cd_cycle(A, Ab, c0, q, b0, beta, True, l1, l2, w)
                    qb = 0.0
                    for j in range(p):
                        qb += q[j] * beta[j]
                    b0_new = (sum_vz - qb) / sum_v
                    if abs(b0_new - b0) > d_act:
                        d_act = abs(b0_new - b0)
                    b0 = b0_new
                    total_iter += 1
                    budget -= 1
                    if d_act < tol:
                        break

            max_outer_delta = abs(b0 - b0_start)
            for j in range(p):
                ad = abs(beta[j] - beta_start[j])
                if ad > max_outer_delta:
                    max_outer_delta = ad
            if max_outer_delta > 0.0:
                # refresh eta from the updated coefficients
                for i in range(n):
                    s = b0
                    for j in range(p):
                        if beta[j] != 0.0:
                            s += Xs[i, j] * beta[j]
                    eta[i] = s
                a_stale = True
            norm2 = 0.0
            for j in range(p):
                norm2 += beta[j] * beta[j]
            if math.sqrt(norm2) > div_norm or abs(b0) > div_norm:
                diverged = True
                break
            if max_outer_delta < tol:
                converged = True
                break

        out_iter[l] = total_iter
        if diverged:
            out_conv[l] = False
            # restore the last good state so later lambdas restart cleanly
            for j in range(p):
                beta[j] = good_beta[j]
            b0 = good_b0
            for i in range(n):
                s = b0
                for j in range(p):
                    if beta[j] != 0.0:
                        s += Xs[i, j] * beta[j]
                eta[i] = s
            a_stale = True
            out_beta[l, :] = np.nan
            out_b0[l] = np.nan
        else:
            out_conv[l] = converged
            for j in range(p):
                out_beta[l, j] = beta[j]
            out_b0[l] = b0
            if converged:
                for j in range(p):
                    good_beta[j] = beta[j]
                good_b0 = b0
    return out_beta, out_b0, out_conv, out_iter


def penalized_objective_std(Xs, y, b0, beta_std, lambda_, alpha, weights) -> float:
    """Penalized negative log-likelihood on the standardized scale."""
    eta = b0 + Xs @ beta_std
    nll = negative_log_likelihood(eta, y)
    finite = np.isfinite(weights)
    l1 = float(np.sum(weights[finite] * np.abs(beta_std[finite])))
    l2 = float(np.sum(beta_std**2))
    return nll + lambda_ * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)


def make_lambda_path(
    X: np.ndarray,
    y: np.ndarray,
    alpha: float,
    weights: np.ndarray,
    n_lambda: int = 100,
    min_ratio: Optional[float] = None,
) -> np.ndarray:
    """Log-spaced decreasing path from the null-model gradient bound.

    For alpha below 0.001 (including ridge) the bound is computed with the
    0.001 surrogate, as is conventional.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != p:
        raise ValueError("weights length mismatch")
    if np.all(np.isinf(w)):
        raise ValueError("all variables are excluded (infinite weights)")
    if min_ratio is None:
        min_ratio = 1e-2 if n < p else 1e-4
    if not (0.0 < min_ratio < 1.0):
        raise ValueError("min_ratio must lie in (0, 1)")
    if n_lambda < 1:
        raise ValueError("n_lambda must be positive")

    Xs, _, _, const = _standardize(X)
    alpha_eff = max(alpha, 1e-3)
    g = np.abs(Xs.T @ (y - y.mean()))
    usable = np.isfinite(w) & ~const
    positive = usable & (w > 0)
    if np.any(positive):
        lam_max = float(np.max(g[positive] / (alpha_eff * w[positive])))
    else:
        lam_max = float(np.max(g[usable])) / alpha_eff
    lam_max = max(lam_max, 1e-10)
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def _prepare_weights(weights: np.ndarray, const: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64).copy()
    w[const] = np.inf  # constant columns carry no information
    return w


def fit_weighted_elastic_net(
    X: np.ndarray,
    y: np.ndarray,
    penalty: PenaltySpec,
    max_outer: int = 80,
    max_inner: int = 400,
    tol: float = 1e-8,
    path_steps: int = 30,
) -> FittedModel:
    """Fit at one (lambda, alpha) point, warm-starting down a short path."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if len(y) != n:
        raise ValueError("X and y row counts differ")
    if len(penalty.weights) != p:
        raise ValueError("penalty weights length mismatch")
    Xs, mean, scale, const = _standardize(X)
    w = _prepare_weights(penalty.weights, const)
    if y.min() == y.max():
        return FittedModel(
            intercept=_clipped_mean_logit(y), coef=np.zeros(p), converged=False,
            iterations=0, objective=math.nan, penalty=penalty,
            col_mean=mean, col_scale=scale,
        )
    lam_max = make_lambda_path(X, y, penalty.alpha, w, n_lambda=1, min_ratio=0.5)[0]
    target = penalty.lambda_
    if target >= lam_max:
        lambdas = np.array([target])
    elif target > 0.0:
        lambdas = np.geomspace(lam_max, target, path_steps)
        lambdas[-1] = target
    else:
        # unpenalized endpoint still benefits from a warm-started descent
        lambdas = np.append(np.geomspace(lam_max, lam_max * 1e-8, path_steps), 0.0)
    betas, b0s, conv, iters = _cd_path_kernel(
        Xs, y, w, penalty.alpha, lambdas,
        max_outer, max_inner, tol, _DIVERGENCE_NORM,
    )
    beta_std = betas[-1]
    converged = bool(conv[-1])
    if not np.all(np.isfinite(beta_std)):
        beta_std = np.zeros(p)
        converged = False
    obj = penalized_objective_std(Xs, y, b0s[-1] if np.isfinite(b0s[-1]) else 0.0,
                                  beta_std, target, penalty.alpha, w)
    coef = beta_std / scale
    intercept = float(b0s[-1] - coef @ mean) if np.isfinite(b0s[-1]) else 0.0
    return FittedModel(
        intercept=intercept, coef=coef, converged=converged,
        iterations=int(np.sum(iters)), objective=obj, penalty=penalty,
        col_mean=mean, col_scale=scale,
    )


def stratified_folds(y: np.ndarray, k: int, stream: RngStream) -> np.ndarray:
    """Outcome-stratified fold labels, a pure function of the stream."""
    y = np.asarray(y).ravel()
    folds = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        perm = stream.gen.permutation(idx)
        folds[perm] = np.arange(len(perm)) % k
    return folds


def _binomial_deviance(y: np.ndarray, prob: np.ndarray) -> float:
    prob = np.clip(prob, _DEV_CLIP, 1.0 - _DEV_CLIP)
    return float(-2.0 * np.mean(y * np.log(prob) + (1.0 - y) * np.log(1.0 - prob)))


def _cv_fit(
    X: np.ndarray,
    y: np.ndarray,
    alphas: Sequence[float],
    weights: np.ndarray,
    fold_stream: RngStream,
    k: int = 5,
    rule: str = "one_se",
    n_lambda: int = 100,
    min_ratio: Optional[float] = None,
    max_outer: int = 50,
    max_inner: int = 1000,
    tol: float = 1e-7,
    cv_tol: float = 1e-5,
):
    """Cross-validate (alpha, lambda) and refit on the full data.

    Returns (CvSelection, FittedModel or None). Selection is restricted to
    lambda values at which every fold fit converged; if that leaves nothing,
    the selection is flagged failed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if rule not in ("one_se", "min"):
        raise ValueError("rule must be 'one_se' or 'min'")
    if n < 2 * k:
        raise ValueError(f"need at least {2 * k} rows for {k}-fold CV")
    alphas = tuple(float(a) for a in alphas)
    folds = stratified_folds(y, k, fold_stream)

    # standardize each training fold once, shared across the alpha grid
    fold_data = []
    for f in range(k):
        tr = folds != f
        va = ~tr
        ytr = y[tr]
        if ytr.min() == ytr.max():
            fold_data.append(None)  # degenerate training fold
            continue
        Xs_tr, m_tr, s_tr, const_tr = _standardize(X[tr])
        w_tr = _prepare_weights(weights, const_tr)
        if np.all(np.isinf(w_tr)):
            fold_data.append(None)
            continue
        Xs_va = (X[va] - m_tr) / s_tr
        fold_data.append((Xs_tr, ytr, w_tr, Xs_va, y[va]))

    lambda_paths, cv_means, cv_ses, valid_masks = [], [], [], []
    any_restricted = False
    for a in alphas:
        path = make_lambda_path(X, y, a, weights, n_lambda=n_lambda, min_ratio=min_ratio)
        dev = np.full((k, len(path)), np.nan)
        conv = np.zeros((k, len(path)), dtype=bool)
        for f in range(k):
            if fold_data[f] is None:
                continue
            Xs_tr, ytr, w_tr, Xs_va, yva = fold_data[f]
            betas, b0s, cflags, _ = _cd_path_kernel(
                Xs_tr, ytr, w_tr, a, path, max_outer, max_inner, cv_tol, _DIVERGENCE_NORM,
            )
            for l in range(len(path)):
                if not cflags[l]:
                    continue
                eta = b0s[l] + Xs_va @ betas[l]
                dev[f, l] = _binomial_deviance(yva, expit(eta))
                conv[f, l] = True
        all_ok = conv.all(axis=0)
        if all_ok.any() and not all_ok.all():
            any_restricted = True
        cv_mean = np.full(len(path), np.nan)
        cv_se = np.full(len(path), np.nan)
        for l in np.flatnonzero(all_ok):
            cv_mean[l] = dev[:, l].mean()
            cv_se[l] = dev[:, l].std(ddof=1) / math.sqrt(k)
        lambda_paths.append(path)
        cv_means.append(cv_mean)
        cv_ses.append(cv_se)
        valid_masks.append(all_ok)

    best = None  # (score, alpha_idx, lambda_idx)
    for ai, a in enumerate(alphas):
        mask = valid_masks[ai]
        if not mask.any():
            continue
        means = cv_means[ai]
        idx_valid = np.flatnonzero(mask)
        i_min = idx_valid[np.argmin(means[idx_valid])]
        if rule == "min":
            i_sel = int(i_min)
        else:
            bound = means[i_min] + cv_ses[ai][i_min]
            ok = idx_valid[means[idx_valid] <= bound]
            i_sel = int(ok.min())  # paths are decreasing: smallest index = largest lambda
        score = means[i_sel]
        if best is None or score < best[0] - 1e-15:
            best = (float(score), ai, i_sel)

    if best is None:
        sel = CvSelection(
            alphas=alphas, lambda_paths=lambda_paths, cv_mean=cv_means, cv_se=cv_ses,
            chosen_alpha=math.nan, chosen_lambda=math.nan, chosen_index=-1,
            rule=rule, failed=True, restricted=any_restricted,
        )
        return sel, None
    _, ai, li = best
    chosen_alpha = alphas[ai]
    chosen_lambda = float(lambda_paths[ai][li])
    sel = CvSelection(
        alphas=alphas, lambda_paths=lambda_paths, cv_mean=cv_means, cv_se=cv_ses,
        chosen_alpha=chosen_alpha, chosen_lambda=chosen_lambda, chosen_index=li,
        rule=rule, failed=False, restricted=any_restricted,
    )

    # final fit on the full data, warm-started down the chosen alpha's path
    Xs, mean, scale, const = _standardize(X)
    w_full = _prepare_weights(weights, const)
    path = lambda_paths[ai][: li + 1]
    betas, b0s, cflags, iters = _cd_path_kernel(
        Xs, y, w_full, chosen_alpha, path, max_outer, max_inner, tol, _DIVERGENCE_NORM,
    )
    beta_std = betas[-1]
    converged = bool(cflags[-1]) and bool(np.all(np.isfinite(beta_std)))
    if not converged:
        beta_std = np.where(np.isfinite(beta_std), beta_std, 0.0)
    obj = penalized_objective_std(Xs, y, b0s[-1] if np.isfinite(b0s[-1]) else 0.0,
                                  beta_std, chosen_lambda, chosen_alpha, w_full)
    coef = beta_std / scale
    intercept = float(b0s[-1] - coef @ mean) if np.isfinite(b0s[-1]) else 0.0
    model = FittedModel(
        intercept=intercept, coef=coef, converged=converged,
        iterations=int(np.sum(iters)), objective=obj,
        penalty=PenaltySpec(chosen_lambda, chosen_alpha, np.asarray(weights, dtype=float)),
        col_mean=mean, col_scale=scale,
    )
    return sel, model


def cross_validate_en(
    X: np.ndarray,
    y: np.ndarray,
    alphas: Sequence[float],
    weights: np.ndarray,
    fold_stream: RngStream,
    k: int = 5,
    rule: str = "one_se",
    **kwargs,
) -> CvSelection:
    sel, _ = _cv_fit(X, y, alphas, weights, fold_stream, k=k, rule=rule, **kwargs)
    return sel


def adaptive_weights_from_glm(glm_fit: FittedModel, gamma: float = 1.0) -> np.ndarray:
    """w_j = |theta_j|^(-gamma); a zero estimate excludes the variable."""
    if not glm_fit.converged:
        raise ConvergenceError("adaptive-weight source fit did not converge", stage="fit")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    theta = np.abs(glm_fit.coef)
    with np.errstate(divide="ignore"):
        return np.where(theta > 0, theta**-gamma, np.inf if gamma > 0 else 1.0)


def ainet_weights_from_importance(raw_importance: np.ndarray, gamma: float = 1.0) -> np.ndarray:
    """w_j = 1 - (IMP_j / sum IMP)^gamma with IMP clamped at zero.

    A zero importance total degrades gracefully to all-ones weights (plain
    elastic net) instead of failing.
    """
    raw = np.asarray(raw_importance, dtype=np.float64).ravel()
    if len(raw) < 1:
        raise ValueError("importance vector must be non-empty")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    imp = np.maximum(raw, 0.0)
    total = imp.sum()
    if total == 0.0:
        return np.ones(len(raw))
    return 1.0 - (imp / total) ** gamma


def fit_method(
    method_id: str,
    train: Dataset,
    streams: MethodStreams,
    config: Optional[MethodConfig] = None,
    forest_cache: Optional[Forest] = None,
) -> FittedPredictor:
    """Dispatch one protocol method on a training dataset.

    Any stage failure is captured as a non-converged predictor carrying the
    failure stage; nothing raises for data-dependent failures.
    """
    config = config or MethodConfig()
    if method_id not in METHOD_IDS:
        raise ValueError(f"unknown method {method_id!r}; expected one of {METHOD_IDS}")
    X, y = train.X, train.y
    n, p = X.shape
    cv_kwargs = dict(
        k=config.cv_folds, rule=config.rule, n_lambda=config.n_lambda,
        min_ratio=config.lambda_min_ratio, max_outer=config.max_outer,
        max_inner=config.max_inner, tol=config.tol, cv_tol=config.cv_tol,
    )
    try:
        if method_id == "GLM":
            if p < n:
                model = fit_logistic_irls(X, y)
                if not model.converged:
                    return FittedPredictor("GLM", model=model, converged=False, failure_stage="fit")
                return FittedPredictor("GLM", model=model)
            sel, model = _cv_fit(X, y, (0.0,), np.ones(p), streams.fold_split.child(0), **cv_kwargs)
            if sel.failed or model is None or not model.converged:
                return FittedPredictor("GLM", model=model, cv=sel, converged=False, failure_stage="cv")
            return FittedPredictor("GLM", model=model, cv=sel)

        if method_id == "RF":
            forest = forest_cache or fit_random_forest(X, y, streams.forest, config.forest)
            return FittedPredictor("RF", model=forest)

        if method_id == "EN":
            weights = np.ones(p)
        elif method_id == "AEN":
            if p > n:
                _, source = _cv_fit(X, y, (0.0,), np.ones(p), streams.fold_split.child(1), **cv_kwargs)
                if source is None or not source.converged:
                    return FittedPredictor("AEN", converged=False, failure_stage="fit")
            else:
                source = fit_logistic_irls(X, y)
                if not source.converged:
                    return FittedPredictor("AEN", converged=False, failure_stage="fit")
            weights = adaptive_weights_from_glm(source, config.gamma)
            if np.all(np.isinf(weights)):
                return FittedPredictor("AEN", converged=False, failure_stage="fit")
        else:  # AINET
            forest = forest_cache or fit_random_forest(X, y, streams.forest, config.forest)
            weights = ainet_weights_from_importance(gini_importance(forest).raw, config.gamma)

        sel, model = _cv_fit(X, y, config.alphas, weights, streams.fold_split.child(0), **cv_kwargs)
        if sel.failed or model is None or not model.converged:
            return FittedPredictor(method_id, model=model, cv=sel, l1_weights=weights,
                                   converged=False, failure_stage="cv")
        return FittedPredictor(method_id, model=model, cv=sel, l1_weights=weights)
    except ConvergenceError as exc:
        return FittedPredictor(method_id, converged=False, failure_stage=exc.stage)


def predict_proba(fitted: FittedPredictor, X_new: np.ndarray) -> np.ndarray:
    """Probability predictions for any fitted method."""
    if not fitted.converged:
        raise ConvergenceError(
            f"{fitted.method_id} predictor did not converge", stage="predict"
        )
    X_new = np.asarray(X_new, dtype=np.float64)
    if isinstance(fitted.model, Forest):
        return predict_forest(fitted.model, X_new)
    model = fitted.model
    if X_new.ndim != 2 or X_new.shape[1] != len(model.coef):
        raise ValueError(
            f"expected {len(model.coef)} columns, got {X_new.shape[1] if X_new.ndim == 2 else X_new.shape}"
        )
    return expit(model.intercept + X_new @ model.coef)


def kkt_residuals(model: FittedModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Stationarity residuals of the penalized objective (standardized scale)."""
    if model.penalty is None:
        raise ValueError("model carries no penalty specification")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    Xs = (X - model.col_mean) / model.col_scale
    beta = model.standardized_coef()
    b0 = model.standardized_intercept()
    mu = expit(b0 + Xs @ beta)
    grad = Xs.T @ (mu - y)
    lam, alpha = model.penalty.lambda_, model.penalty.alpha
    w = np.asarray(model.penalty.weights, dtype=np.float64)
    res = np.zeros(len(beta))
    for j in range(len(beta)):
        if np.isinf(w[j]):
            continue  # excluded variable, constraint beta_j = 0 holds by construction
        gj = grad[j] + lam * (1.0 - alpha) * beta[j]
        bound = lam * alpha * w[j]
        if beta[j] != 0.0:
            res[j] = abs(abs(gj) - bound)
        else:
            res[j] = max(0.0, abs(gj) - bound)
    return res
