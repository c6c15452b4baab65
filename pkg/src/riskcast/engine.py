"""Sequential backtest orchestration.

One pass over dates drives every equation pool through
evolve -> forecast -> select -> recouple -> optimize -> update.  Weights at
date t use information through t-1 only; the realized values of date t enter
afterwards via the Bayes updates.  The training window runs through the same
filter but records no metrics or weights.

Reduction order is fixed (by equation index, then pool-group index, then
ordering index), so multi-threaded runs are bit-identical to serial ones.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from . import benchmarks as bench
from . import portfolio as pf
from ._batch import PoolGroup, batched_asset_moments, recursive_factor_moments
from .data import ReturnPanel
from .errors import ParameterError, RiskcastError, WindowError
from .ordering import ORDERING_CAP, enumerate_orderings
from .portfolio import BacktestReport, ModelRow, TCResult

MODEL_NAME = "dfs-dlm"

DEFAULT_DELTA_GRID = (0.998, 0.999, 1.0)
DEFAULT_KAPPA_R_GRID = (0.99, 0.995, 1.0)
DEFAULT_KAPPA_F_GRID = (0.999, 1.0)


@dataclass(frozen=True)
class RunConfig:
    """Everything a backtest needs beyond the panel itself."""

    factor_set: tuple[int, ...] | None = None
    delta_grid: tuple[float, ...] = DEFAULT_DELTA_GRID
    kappa_r_grid: tuple[float, ...] = DEFAULT_KAPPA_R_GRID
    kappa_f_grid: tuple[float, ...] = DEFAULT_KAPPA_F_GRID
    alpha: float = 0.99
    alpha_ord: float = 0.99
    ordering: str = "learn"                 # "learn" | "fixed"
    ordering_cap: int = ORDERING_CAP
    sparsity: bool = True
    strategy: str = "mvp"                   # "mvp" | "gmv" | "constrained"
    max_weight: float | None = None
    tau_annual: float = 0.10
    tc_bps: tuple[float, ...] = (5.0,)
    gamma: tuple[float, ...] = (10.0,)
    mean_signal: str = "model"              # "model" | "momentum"
    benchmarks: tuple[str, ...] = ()
    fee_reference: str = "wdlm"
    train_len: int | None = None
    periods_per_year: int = 52
    seed: int = 0
    threads: int = 1
    dof_floor: float = 2.05
    cov_jitter: float = 1e-8
    ewma_window_init: bool = True
    wdlm_delta: float = 0.997
    wdlm_kappa: float = 0.99
    wdlm_s0: float = 0.1

    def __post_init__(self):
        if not self.delta_grid or not self.kappa_r_grid or not self.kappa_f_grid:
            raise ParameterError("discount grids must be non-empty")
        for g in (*self.delta_grid, *self.kappa_r_grid, *self.kappa_f_grid):
            if not 0 < g <= 1:
                raise ParameterError(f"discount {g} outside (0, 1]")
        if not 0 < self.alpha <= 1 or not 0 < self.alpha_ord <= 1:
            raise ParameterError("forgetting factors must lie in (0, 1]")
        if self.ordering not in ("learn", "fixed"):
            raise ParameterError(f"unknown ordering mode {self.ordering!r}")
        if self.strategy not in ("mvp", "gmv", "constrained"):
            raise ParameterError(f"unknown strategy {self.strategy!r}")
        if self.mean_signal not in ("model", "momentum"):
            raise ParameterError(f"unknown mean signal {self.mean_signal!r}")
        if any(tc < 0 for tc in self.tc_bps):
            raise ParameterError("transaction costs must be >= 0")
        if any(g <= 0 for g in self.gamma):
            raise ParameterError("risk aversions must be > 0")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")

    @property
    def tau_periodic(self) -> float:
        return self.tau_annual / self.periods_per_year

    @property
    def box_bound(self) -> float | None:
        if self.strategy == "constrained":
            return self.max_weight if self.max_weight is not None else 0.05
        return self.max_weight

    def header(self) -> dict:
        return {
            "model": MODEL_NAME,
            "strategy": self.strategy,
            "tau_annual": self.tau_annual,
            "tau_conversion": "annual/periods_per_year",
            "turnover_first_period": "excluded",
            "max_weight": self.box_bound,
            "alpha": self.alpha,
            "alpha_ord": self.alpha_ord,
            "ordering": self.ordering,
            "sparsity": self.sparsity,
            "mean_signal": self.mean_signal,
            "delta_grid": list(self.delta_grid),
            "kappa_r_grid": list(self.kappa_r_grid),
            "kappa_f_grid": list(self.kappa_f_grid),
            "tc_bps": list(self.tc_bps),
            "gamma": list(self.gamma),
            "periods_per_year": self.periods_per_year,
            "seed": self.seed,
            "threads": self.threads,
        }


@dataclass
class StatsResult:
    """Per-date diagnostics of a statistics-only run."""

    lpd: float
    acc: float
    lpd_series: np.ndarray          # (T_eval,)
    asset_mean: np.ndarray          # (T_eval, N)
    inclusion: np.ndarray           # (T_eval, N, K)
    ordering_log_probs: np.ndarray  # (T_eval, n_orderings)
    factor_mean: np.ndarray         # (T_eval, K)
    factor_cov: np.ndarray          # (T_eval, K, K)
    orderings: list[tuple[int, ...]]
    dates: tuple[str, ...]
    factors: tuple[str, ...]


def _ols_residual_variance(y: np.ndarray, X: np.ndarray) -> float:
    """Plain sample variance of OLS residuals, floored away from zero."""
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return max(float(resid.var()), 1e-12)


def _normalize_rows(lp: np.ndarray) -> np.ndarray:
    return lp - logsumexp(lp, axis=-1, keepdims=True)


class _DynamicFactorFilter:
    """Batched state of the full model: asset pools plus per-ordering factor pools."""

    def __init__(self, panel: ReturnPanel, config: RunConfig):
        self.config = config
        train = config.train_len if config.train_len is not None else panel.train_len
        if not 0 < train < panel.T:
            raise ParameterError(f"train_len must lie in (0, {panel.T}), got {train}")
        self.train_len = train
        fs = tuple(config.factor_set) if config.factor_set is not None else tuple(range(panel.n_factors))
        if any(i < 0 or i >= panel.n_factors for i in fs):
            raise ParameterError(f"factor_set {fs} outside the panel's {panel.n_factors} factors")
        self.factor_names = tuple(panel.factors[i] for i in fs)
        self.F = panel.F[:, list(fs)]
        self.R = panel.R
        self.K = len(fs)
        self.N = panel.n_assets
        if train < self.K + 2:
            raise ParameterError(f"train_len {train} too short for OLS priors over {self.K} factors")

        if config.ordering == "learn":
            perms = enumerate_orderings(self.K, config.ordering_cap)
        else:
            perms = [tuple(range(self.K))]
        self.perms = np.array(perms, dtype=int)
        self.n_ord = len(perms)
        self.ordering_log_probs = np.full(self.n_ord, -np.log(self.n_ord))

        # asset pools: one group per parent mask, shared spec layout across assets
        deltas_r = [d for d in config.delta_grid for _ in config.kappa_r_grid]
        kappas_r = [k for _ in config.delta_grid for k in config.kappa_r_grid]
        self.P_r = len(deltas_r)
        masks = list(range(1, 1 << self.K)) if config.sparsity else [(1 << self.K) - 1]
        self.masks = masks
        Xfull = np.column_stack([np.ones(train), self.F[:train]])
        s0_assets = np.array([_ols_residual_variance(self.R[:train, j], Xfull)
                              for j in range(self.N)])
        self.asset_groups = [
            PoolGroup([i for i in range(self.K) if (m >> i) & 1], self.N,
                      deltas_r, kappas_r, s0_assets)
            for m in masks
        ]
        n_specs = len(masks) * self.P_r
        self.asset_log_probs = np.full((self.N, n_specs), -np.log(n_specs))
        self.include_mask = np.zeros((n_specs, self.K))
        for gi, m in enumerate(masks):
            for i in range(self.K):
                if (m >> i) & 1:
                    self.include_mask[gi * self.P_r:(gi + 1) * self.P_r, i] = 1.0

        # factor pools: one group per position, batched across orderings
        deltas_f = [d for d in config.delta_grid for _ in config.kappa_f_grid]
        kappas_f = [k for _ in config.delta_grid for k in config.kappa_f_grid]
        self.P_f = len(deltas_f)
        self.factor_groups = []
        self.factor_log_probs = []
        for jj in range(self.K):
            s0 = np.empty(self.n_ord)
            for o, perm in enumerate(perms):
                X = np.column_stack([np.ones(train), self.F[:train][:, list(perm[:jj])]])
                s0[o] = _ols_residual_variance(self.F[:train, perm[jj]], X)
            self.factor_groups.append(PoolGroup(list(range(jj)), self.n_ord,
                                                deltas_f, kappas_f, s0))
            self.factor_log_probs.append(np.full((self.n_ord, self.P_f), -np.log(self.P_f)))

        self._executor = (ThreadPoolExecutor(max_workers=config.threads)
                          if config.threads > 1 else None)

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _map(self, fn: Callable, items: Sequence) -> list:
        if self._executor is None:
            return [fn(x) for x in items]
        return list(self._executor.map(fn, items))

    # ---- one step ----------------------------------------------------------

    def forecast_step(self):
        """Evolve everything and build the one-step predictive moments.

        Uses only information through the previous date.  Returns
        (asset mean, loading matrix, idiosyncratic variances,
        factor mixture mean, factor mixture covariance, selection record).
        """
        cfg = self.config
        self._map(lambda g: g.evolve(), self.asset_groups + self.factor_groups)

        # factor block: select per (ordering, position) on predicted probabilities
        a_sel, R_sel, r_sel, s_sel, sel_f = [], [], [], [], []
        rows = np.arange(self.n_ord)
        for jj in range(self.K):
            lp_pred = _normalize_rows(cfg.alpha * self.factor_log_probs[jj])
            sel = np.argmax(lp_pred, axis=1)
            sel_f.append(sel)
            grp = self.factor_groups[jj]
            a_sel.append(grp.a[rows, sel])
            R_sel.append(grp.R[rows, sel])
            r_sel.append(grp.r[sel])
            s_sel.append(grp.s_prev[rows, sel])
        lam_o, sig_o = recursive_factor_moments(self.perms, a_sel, R_sel, r_sel, s_sel,
                                                cfg.dof_floor)
        if np.any(np.concatenate([np.atleast_1d(r) for r in r_sel]) <= cfg.dof_floor):
            warnings.warn("factor equation degrees of freedom at the floor", RuntimeWarning)
        lp_ord_pred = self.ordering_log_probs * cfg.alpha_ord
        lp_ord_pred -= logsumexp(lp_ord_pred)
        p_ord = np.exp(lp_ord_pred)
        lam = p_ord @ lam_o
        second = np.einsum("o,oij->ij", p_ord, sig_o) + np.einsum("o,oi,oj->ij", p_ord, lam_o, lam_o)
        sig = second - np.outer(lam, lam)
        sig = (sig + sig.T) / 2.0

        # asset block: select per asset on predicted probabilities
        lp_pred_assets = _normalize_rows(cfg.alpha * self.asset_log_probs)
        sel_assets = np.argmax(lp_pred_assets, axis=1)
        mean, B, idio = batched_asset_moments(self.asset_groups, sel_assets, lam, sig,
                                              cfg.dof_floor)
        return mean, B, idio, lam, sig, (sel_assets, sel_f, lp_ord_pred)

    def update_step(self, t: int, selection) -> tuple[float, np.ndarray]:
        """Observe date t, update probabilities and states everywhere.

        Returns (asset-block log predictive density of the selected models,
        posterior inclusion probabilities (N, K)).
        """
        cfg = self.config
        sel_assets, sel_f, lp_ord_pred = selection
        yF = self.F[t]
        yR = self.R[t]

        # factor pools
        joint = np.zeros(self.n_ord)
        rows = np.arange(self.n_ord)
        for jj in range(self.K):
            grp = self.factor_groups[jj]
            if jj == 0:
                Freg = np.ones(1)
            else:
                Freg = np.column_stack([np.ones(self.n_ord), yF[self.perms[:, :jj]]])
            y = yF[self.perms[:, jj]]
            f, q = grp.forecast(Freg)
            dens = grp.log_densities(y, f, q)
            joint += dens[rows, sel_f[jj]]
            lp_pred = _normalize_rows(cfg.alpha * self.factor_log_probs[jj])
            self.factor_log_probs[jj] = _normalize_rows(lp_pred + dens)
            grp.update(y, Freg, f, q)
        self.ordering_log_probs = lp_ord_pred + joint
        self.ordering_log_probs -= logsumexp(self.ordering_log_probs)

        # asset pools
        def advance(item):
            gi, grp = item
            Freg = np.concatenate(([1.0], yF[grp.idx]))
            f, q = grp.forecast(Freg)
            dens = grp.log_densities(yR, f, q)
            grp.update(yR, Freg, f, q)
            return dens

        dens_groups = self._map(advance, list(enumerate(self.asset_groups)))
        dens_all = np.concatenate(dens_groups, axis=1)
        lp_pred = _normalize_rows(cfg.alpha * self.asset_log_probs)
        self.asset_log_probs = _normalize_rows(lp_pred + dens_all)
        lpd = float(dens_all[np.arange(self.N), sel_assets].sum())
        inclusion = np.exp(self.asset_log_probs) @ self.include_mask
        return lpd, inclusion


def _run_model(panel: ReturnPanel, config: RunConfig, collect_weights: bool):
    """Drive the filter over all dates; return diagnostics and optional weights."""
    flt = _DynamicFactorFilter(panel, config)
    try:
        train = flt.train_len
        T_eval = panel.T - train
        N, K = flt.N, flt.K
        lpd_series = np.zeros(T_eval)
        asset_mean = np.zeros((T_eval, N))
        inclusion = np.zeros((T_eval, N, K))
        ord_lp = np.zeros((T_eval, flt.n_ord))
        fac_mean = np.zeros((T_eval, K))
        fac_cov = np.zeros((T_eval, K, K))
        weights = np.zeros((T_eval, N)) if collect_weights else None
        bound = config.box_bound
        tau = config.tau_periodic

        for t in range(panel.T):
            evaluating = t >= train
            try:
                mean, B, idio, lam, sig, selection = flt.forecast_step()
                if evaluating:
                    i = t - train
                    asset_mean[i] = mean
                    fac_mean[i] = lam
                    fac_cov[i] = sig
                    if collect_weights:
                        cov = B @ sig @ B.T
                        cov[np.diag_indices(N)] += idio
                        cov = (cov + cov.T) / 2.0
                        if config.mean_signal == "momentum" and config.strategy != "gmv":
                            mu = pf.momentum_signal(flt.R, t)
                        else:
                            mu = mean
                        weights[i] = _solve_weights(config.strategy, mu, cov, tau, bound).w
                lpd_t, incl_t = flt.update_step(t, selection)
                if evaluating:
                    i = t - train
                    lpd_series[i] = lpd_t
                    inclusion[i] = incl_t
                    ord_lp[i] = flt.ordering_log_probs
            except RiskcastError as exc:
                raise type(exc)(f"date {panel.dates[t]}: {exc}") from exc
    finally:
        flt.close()

    realized = flt.R[train:]
    stats = StatsResult(
        lpd=float(lpd_series.sum()),
        acc=pf.hit_rate(asset_mean, realized),
        lpd_series=lpd_series,
        asset_mean=asset_mean,
        inclusion=inclusion,
        ordering_log_probs=ord_lp,
        factor_mean=fac_mean,
        factor_cov=fac_cov,
        orderings=[tuple(p) for p in flt.perms],
        dates=panel.dates[train:],
        factors=flt.factor_names,
    )
    return stats, weights, train


def _solve_weights(strategy: str, mean: np.ndarray, cov: np.ndarray, tau: float,
                   bound: float | None) -> pf.WeightVector:
    if strategy == "gmv":
        if bound is not None:
            return pf.constrained_weights(cov, bound)
        return pf.gmv_weights(cov)
    if bound is not None:
        return pf.constrained_weights(cov, bound, mean, tau)
    return pf.mvp_weights(mean, cov, tau)


def _gaussian_lpd(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    L, low = cho_factor(cov, lower=True)
    e = y - mean
    z = cho_solve((L, low), e)
    return float(-0.5 * (y.size * np.log(2.0 * np.pi)) - np.log(np.diag(L)).sum()
                 - 0.5 * e @ z)


def _jitter(cov: np.ndarray, rel: float) -> np.ndarray:
    n = cov.shape[0]
    return cov + (rel * np.trace(cov) / n) * np.eye(n)


def _run_covariance_benchmark(name: str, panel: ReturnPanel, config: RunConfig,
                              train: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Benchmark loop -> (weights, lpd_series, forecast means) over evaluation dates.

    EFM / LW / EWMA use the momentum signal as their mean predictor; the
    local-level models predict their own means.  Densities are Gaussian.
    """
    R, F = panel.R, panel.F
    N = panel.n_assets
    T_eval = panel.T - train
    weights = np.zeros((T_eval, N))
    lpd = np.zeros(T_eval)
    means = np.zeros((T_eval, N))
    bound = config.box_bound
    tau = config.tau_periodic
    needs_momentum = name in ("efm", "lw", "ewma97", "ewma99")
    if needs_momentum and train < 52:
        raise WindowError(f"benchmark {name} needs train_len >= 52 for the momentum signal")

    state = None
    if name == "wdlm":
        state = bench.initial_wishart_state(N, config.wdlm_s0, config.wdlm_delta,
                                            config.wdlm_kappa)
        for t in range(train):
            state, _, _ = bench.wishart_dlm_step(state, R[t])
    elif name == "factor-wdlm":
        Xfull = np.column_stack([np.ones(train), F[:train]])
        s0 = np.array([_ols_residual_variance(R[:train, j], Xfull) for j in range(N)])
        state = bench.FactorWishartDLM(N, panel.n_factors, s0, config.wdlm_delta,
                                       config.wdlm_kappa, config.wdlm_s0)
        for t in range(train):
            state.step(F[t], R[t])
    elif name in ("ewma97", "ewma99"):
        sigma = np.cov(R[:train].T, ddof=1).reshape(N, N)

    for t in range(train, panel.T):
        i = t - train
        if name == "efm":
            cov = bench.efm_cov(R[t - train:t], F[t - train:t])
            mu = pf.momentum_signal(R, t)
        elif name == "lw":
            cov = bench.lw_shrinkage(R[t - train:t])
            mu = pf.momentum_signal(R, t)
        elif name in ("ewma97", "ewma99"):
            cov = sigma
            mu = pf.momentum_signal(R, t)
        elif name == "wdlm":
            state, mu, cov = bench.wishart_dlm_step(state, R[t])
        elif name == "factor-wdlm":
            mu, cov = state.step(F[t], R[t])
        else:
            raise ParameterError(f"unknown benchmark {name!r}")
        cov = _jitter(cov, config.cov_jitter)
        weights[i] = _solve_weights(config.strategy, mu, cov, tau, bound).w
        lpd[i] = _gaussian_lpd(R[t], mu, cov)
        means[i] = mu
        if name in ("ewma97", "ewma99"):
            decay = 0.97 if name == "ewma97" else 0.99
            sigma = bench.ewma_cov(sigma, R[t], decay)
    return weights, lpd, means


def _build_row(name: str, weights: np.ndarray, realized: np.ndarray, config: RunConfig,
               lpd: float | None, acc: float | None) -> ModelRow:
    per_tc = []
    gross = None
    turnover = None
    for tc in config.tc_bps:
        g, net, to = pf.apply_costs(weights, realized, tc)
        stats = pf.performance(net, config.periods_per_year)
        per_tc.append(TCResult(tc, net, stats.mean, stats.sd, stats.sharpe))
        gross, turnover = g, to
    return ModelRow(name, turnover, gross, per_tc, lpd=lpd, acc=acc)


def run_backtest(panel: ReturnPanel, config: RunConfig) -> BacktestReport:
    """Full backtest of the dynamic factor model plus configured benchmarks."""
    stats, weights, train = _run_model(panel, config, collect_weights=True)
    realized = panel.R[train:]
    rows = [_build_row(MODEL_NAME, weights, realized, config, stats.lpd, stats.acc)]
    for name in config.benchmarks:
        if name == "ew":
            w = np.broadcast_to(np.full(panel.n_assets, 1.0 / panel.n_assets),
                                realized.shape).copy()
            rows.append(_build_row("ew", w, realized, config, None, None))
            continue
        bw, blpd, bmeans = _run_covariance_benchmark(name, panel, config, train)
        acc = pf.hit_rate(bmeans, realized)
        rows.append(_build_row(name, bw, realized, config, float(blpd.sum()), acc))

    ref = next((r for r in rows if r.name == config.fee_reference), None)
    if ref is not None:
        for row in rows:
            for cand, base in zip(row.per_tc, ref.per_tc):
                for g in config.gamma:
                    cand.fees_bps[g] = pf.management_fee(cand.net, base.net, g,
                                                         config.periods_per_year)
    header = config.header()
    header["train_len"] = train
    header["n_assets"] = panel.n_assets
    header["factors"] = list(stats.factors)
    header["fee_reference"] = config.fee_reference if ref is not None else None
    return BacktestReport(stats.dates, header, rows)


def run_statistics_only(panel: ReturnPanel, config: RunConfig) -> StatsResult:
    """Forecast-accuracy run: LPD and hit rate without portfolio construction."""
    stats, _, _ = _run_model(panel, config, collect_weights=False)
    return stats
