"""Forward simulation of the panel model and sampler validation harnesses."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .config import ModelSpec, PriorConfig, SamplerConfig, lag_multiplier
from .data import (
    DailyTable,
    HourlyTable,
    PanelDataset,
    align_and_preprocess,
    write_daily_csv,
    write_hourly_csv,
)
from .design import design_tensor
from .posterior import effective_sample_size
from .sampler import PanelModel, ParameterState, draw_prior, gibbs_sweep

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class StabilityWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# scenario and truth


@dataclass
class CovariateProcess:
    """Stationary AR(1) around ``mean`` with marginal sd ``sd``."""

    mean: float = 0.0
    sd: float = 1.0
    ar: float = 0.7


@dataclass
class ShockEpisode:
    """Multiplies ``covariate`` by ``multiplier`` for delivery days start..end.

    For daily covariates the settlement dates are moved back one day, so the
    regressor itself is elevated exactly on the episode days.
    """

    covariate: str
    start: date
    end: date
    multiplier: float = 3.0


@dataclass
class ScenarioConfig:
    n_days: int = 60
    start: date = date(2021, 1, 1)
    countries: list[str] | None = None
    processes: dict[str, CovariateProcess] = field(default_factory=dict)
    shock: ShockEpisode | None = None
    seed: int = 0
    burn_days: int = 14

    def process(self, name: str, freq: str) -> CovariateProcess:
        if name in self.processes:
            return self.processes[name]
        if freq == "high":
            return CovariateProcess(mean=100.0, sd=20.0, ar=0.7)
        return CovariateProcess(mean=50.0, sd=5.0, ar=0.95)

    def country_names(self, G: int) -> list[str]:
        names = self.countries or [f"C{g + 1}" for g in range(G)]
        if len(names) != G:
            raise ValueError(f"scenario lists {len(names)} countries, spec has {G}")
        return list(names)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "start" in d:
            d["start"] = date.fromisoformat(str(d["start"]))
        if "processes" in d:
            d["processes"] = {k: CovariateProcess(**v) for k, v in d["processes"].items()}
        if d.get("shock"):
            s = dict(d["shock"])
            s["start"] = date.fromisoformat(str(s["start"]))
            s["end"] = date.fromisoformat(str(s["end"]))
            d["shock"] = ShockEpisode(**s)
        return cls(**d)

    def to_dict(self) -> dict:
        d = {
            "n_days": self.n_days,
            "start": self.start.isoformat(),
            "countries": self.countries,
            "processes": {k: vars(v) for k, v in self.processes.items()},
            "seed": self.seed,
            "burn_days": self.burn_days,
        }
        if self.shock is not None:
            d["shock"] = {
                "covariate": self.shock.covariate,
                "start": self.shock.start.isoformat(),
                "end": self.shock.end.isoformat(),
                "multiplier": self.shock.multiplier,
            }
        return d


def ar_spectral_radius(spec: ModelSpec, truth: ParameterState) -> np.ndarray:
    """Companion-matrix spectral radius of the common+country AR polynomial, per country."""
    if not spec.ar_lags:
        return np.zeros(spec.G)
    p = max(spec.ar_lags)
    out = np.empty(spec.G)
    for g in range(spec.G):
        coef = np.zeros(p)
        for k, a in enumerate(spec.ar_lags, start=1):
            coef[a - 1] = truth.gamma[k] + truth.zeta[g, k]
        comp = np.zeros((p, p))
        comp[0] = coef
        comp[1:, :-1] = np.eye(p - 1)
        out[g] = np.max(np.abs(np.linalg.eigvals(comp)))
    return out


def check_truth(spec: ModelSpec, truth: ParameterState) -> None:
    L = spec.L
    if truth.gamma.shape != (L,) or truth.psi.shape != (spec.H, L) or truth.zeta.shape != (spec.G, L):
        raise ValueError("true parameters do not match the model dimensions")
    truth.check()
    rho = ar_spectral_radius(spec, truth)
    if np.any(rho >= 1.0):
        warnings.warn(f"true AR dynamics are explosive (spectral radius {rho.max():.3f})", StabilityWarning)


def default_truth(spec: ModelSpec, rng=None, sigma2: float = 4.0, q=(1.0, 0.0025, 0.25), r=(4.0, 0.0025, 0.25),
                  ar_total: float = 0.6, slopes=None) -> ParameterState:
    """A stable, moderately heterogeneous parameter set for simulation studies."""
    rng = np.random.default_rng(0) if rng is None else rng
    G, H, L = spec.G, spec.H, spec.L
    gamma = np.zeros(L)
    gamma[0] = 30.0
    A = len(spec.ar_lags)
    if A:
        w = 0.5 ** np.arange(A)
        gamma[1 : 1 + A] = ar_total * w / w.sum()
    pattern = [5.0, -3.0, 2.0, 4.0, -2.0, 3.0]
    pos = 1 + A
    for j, cov in enumerate(spec.covariates):
        for b in range(cov.max_lag + 1):
            value = slopes[j] if slopes is not None else pattern[j % len(pattern)]
            gamma[pos] = value / (1 + b)
            pos += 1
    block = np.asarray(spec.block_index())
    q, r = np.asarray(q, dtype=float), np.asarray(r, dtype=float)
    psi = rng.standard_normal((H, L)) * np.sqrt(q[block])
    zeta = rng.standard_normal((G, L)) * np.sqrt(r[block])
    lam = np.exp(0.3 * np.sin(2 * np.pi * np.arange(H) / H))
    chi = np.exp(np.linspace(-0.3, 0.3, G)) if G > 1 else np.ones(1)
    return ParameterState(gamma, psi, zeta, float(sigma2), lam, chi, q.copy(), r.copy())


def truth_to_dict(truth: ParameterState) -> dict:
    return {
        "gamma": truth.gamma.tolist(),
        "psi": truth.psi.tolist(),
        "zeta": truth.zeta.tolist(),
        "sigma2": truth.sigma2,
        "lambda": truth.lam.tolist(),
        "chi": truth.chi.tolist(),
        "q": truth.q.tolist(),
        "r": truth.r.tolist(),
    }


def truth_from_dict(d: dict) -> ParameterState:
    return ParameterState(
        gamma=np.asarray(d["gamma"], dtype=float),
        psi=np.asarray(d["psi"], dtype=float),
        zeta=np.asarray(d["zeta"], dtype=float),
        sigma2=float(d["sigma2"]),
        lam=np.asarray(d["lambda"], dtype=float),
        chi=np.asarray(d["chi"], dtype=float),
        q=np.asarray(d["q"], dtype=float),
        r=np.asarray(d["r"], dtype=float),
    )


# ---------------------------------------------------------------------------
# forward model


def simulate_outcome(spec: ModelSpec, truth: ParameterState, y: np.ndarray, x_high: np.ndarray, x_low: np.ndarray,
                     start_hour: int, rng) -> np.ndarray:
    """Fill ``y[:, start_hour:]`` recursively from the model; earlier hours are taken as given.

    ``x_low[g, d]`` is the (standardized, shifted) daily regressor of day ``d``.
    """
    G, H = spec.G, spec.H
    T = y.shape[1]
    if start_hour < spec.max_lag_hours:
        raise SimulationError("start_hour leaves no lag history")
    y = y.copy()
    hours = np.arange(T)
    h_of = hours % H
    coef = truth.gamma[None, None, :] + truth.psi[None, :, :] + truth.zeta[:, None, :]  # (G, H, L)
    c_t = coef[:, h_of, :]  # (G, T, L)
    # everything except the AR terms
    base = c_t[:, :, 0].copy()
    pos = 1 + len(spec.ar_lags)
    for j, cov in enumerate(spec.covariates, start=1):
        step = lag_multiplier(spec, j)
        for b in range(cov.max_lag + 1):
            idx = np.clip(hours - b * step, 0, T - 1)
            if j <= spec.n_high:
                col = x_high[:, idx, j - 1]
            else:
                col = x_low[:, idx // H, j - 1 - spec.n_high]
            base += c_t[:, :, pos] * col
            pos += 1
    sd = np.sqrt(truth.composite_variance())[:, h_of]  # (G, T)
    base += sd * rng.standard_normal((G, T))
    chunk = min(min(spec.ar_lags, default=T), T)
    i = start_hour
    while i < T:
        k = min(chunk, T - i)
        sl = slice(i, i + k)
        val = base[:, sl].copy()
        for m, a in enumerate(spec.ar_lags, start=1):
            val += c_t[:, sl, m] * y[:, i - a : i - a + k]
        y[:, sl] = val
        if not np.all(np.isfinite(val)) or np.max(np.abs(val)) > 1e12:
            raise SimulationError(f"simulated path exploded at hour {i} (|y| > 1e12)")
        i += k
    return y


@dataclass
class RawPanel:
    hourly: list[HourlyTable]
    daily: DailyTable | None

    def write(self, directory) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for tab in self.hourly:
            p = directory / f"hourly_{tab.country}.csv"
            write_hourly_csv(tab, p)
            paths.append(p)
        if self.daily is not None:
            p = directory / "daily.csv"
            write_daily_csv(self.daily, p)
            paths.append(p)
        return paths


def _ar1(n: int, proc: CovariateProcess, rng, size=()) -> np.ndarray:
    innov = proc.sd * np.sqrt(max(1.0 - proc.ar**2, 0.0)) if abs(proc.ar) < 1 else proc.sd
    out = np.empty(size + (n,))
    u = rng.standard_normal(size) * proc.sd
    for t in range(n):
        u = proc.ar * u + innov * rng.standard_normal(size) if t else u
        out[..., t] = u
    return proc.mean + out


def generate_panel(spec: ModelSpec, truth: ParameterState, scenario: ScenarioConfig, rng=None):
    """Simulate covariates and prices; returns ``(PanelDataset, RawPanel)``.

    The raw tables are exactly what :func:`prumidas.data.ingest_hourly` and
    :func:`prumidas.data.ingest_daily` would read back from the written CSVs,
    and the dataset is their preprocessed form.
    """
    rng = np.random.default_rng(scenario.seed) if rng is None else rng
    check_truth(spec, truth)
    G, H = spec.G, spec.H
    countries = scenario.country_names(G)
    B, W = scenario.burn_days, scenario.n_days
    if B < spec.presample_days:
        raise ValueError(f"burn_days={B} shorter than the lag history ({spec.presample_days} days)")
    n_all = B + W
    first_day = scenario.start - timedelta(days=B)
    step_min = 1440 // H

    high = [c for c in spec.covariates if c.freq == "high"]
    low = [c for c in spec.covariates if c.freq == "low"]
    raw_high = {c.name: _ar1(n_all * H, scenario.process(c.name, "high"), rng, (G,)) for c in high}
    # daily series shared by all countries, with one leading settlement day
    raw_low = {c.name: _ar1(n_all + 1, scenario.process(c.name, "low"), rng) for c in low}
    daily_dates = [first_day - timedelta(days=1) + timedelta(days=k) for k in range(n_all + 1)]
    all_dates = [first_day + timedelta(days=k) for k in range(n_all)]
    shock = scenario.shock
    if shock is not None:
        if shock.covariate in raw_low:
            hit = [(d >= shock.start - timedelta(days=1)) and (d <= shock.end - timedelta(days=1)) for d in daily_dates]
            raw_low[shock.covariate][np.array(hit)] *= shock.multiplier
        elif shock.covariate in raw_high:
            hit = np.repeat([(shock.start <= d <= shock.end) for d in all_dates], H)
            raw_high[shock.covariate][:, hit] *= shock.multiplier
        else:
            raise ValueError(f"shock covariate {shock.covariate!r} not in the model")

    def tables(y_all):
        w = slice(B * H, n_all * H)
        hourly = []
        for g, country in enumerate(countries):
            stamps = [
                datetime.combine(all_dates[B + i // H], datetime.min.time()) + timedelta(minutes=(i % H) * step_min)
                for i in range(W * H)
            ]
            cols = {"price": y_all[g, w].copy()}
            cols.update({c.name: raw_high[c.name][g, w].copy() for c in high})
            hourly.append(HourlyTable(country, stamps, cols, H=H))
        daily = None
        if low:
            daily = DailyTable(daily_dates[B:], {c.name: raw_low[c.name][B:].copy() for c in low})
        return hourly, daily

    # window scaling from the same preprocessing that ingestion will apply
    hourly0, daily0 = tables(np.zeros((G, n_all * H)))
    probe = align_and_preprocess(hourly0, daily0, spec)
    xh = np.empty((G, n_all * H, spec.n_high))
    xl = np.empty((G, n_all, spec.n_low))
    for g, country in enumerate(countries):
        for j, c in enumerate(high):
            m, s = probe.scaling[(country, c.name)]
            xh[g, :, j] = (raw_high[c.name][g] - m) / s
        for j, c in enumerate(low):
            m, s = probe.scaling[(country, c.name)]
            xl[g, :, j] = (raw_low[c.name][:-1] - m) / s  # day d carries settlement of d-1

    level = truth.gamma[0] / max(1.0 - truth.gamma[1 : 1 + len(spec.ar_lags)].sum(), 0.1)
    y0 = np.full((G, n_all * H), level)
    y_all = simulate_outcome(spec, truth, y0, xh, xl, spec.max_lag_hours, rng)
    hourly, daily = tables(y_all)
    data = align_and_preprocess(hourly, daily, spec)
    return data, RawPanel(hourly, daily)


def write_truth(path, spec: ModelSpec, truth: ParameterState, scenario: ScenarioConfig, countries) -> None:
    payload = {
        "spec": spec.to_dict(),
        "scenario": scenario.to_dict(),
        "countries": list(countries),
        "truth": truth_to_dict(truth),
        "composite_variance": truth.composite_variance().tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


# ---------------------------------------------------------------------------
# oracles


def conjugate_oracle(data, sigma2_gh: np.ndarray, prior: PriorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form Gaussian posterior of gamma when Q = R = 0 and the variances are known.

    ``data`` is a PanelDataset or a pair ``(X, Y)`` shaped (G, D, H, L), (G, D, H);
    ``sigma2_gh`` has shape (G, H).
    """
    X, Y = design_tensor(data) if isinstance(data, PanelDataset) else data
    L = X.shape[-1]
    prior_cov = np.full(L, prior.r0**2)
    prior_cov[0] = prior.s0**2
    A = np.diag(1.0 / prior_cov)
    b = np.zeros(L)
    G, D, H = Y.shape
    for g in range(G):
        for h in range(H):
            Z = X[g, :, h, :]
            A += Z.T @ Z / sigma2_gh[g, h]
            b += Z.T @ Y[g, :, h] / sigma2_gh[g, h]
    cov = np.linalg.inv(A)
    return cov @ b, cov


# ---------------------------------------------------------------------------
# getting-it-right test


TEST_FUNCTIONS = (
    "gamma[0]", "gamma[1]", "gamma[2]", "gamma[3]",
    "gamma[0]^2", "gamma[1]^2", "gamma[2]^2", "gamma[3]^2",
    "log sigma2", "log q_mu", "log q_alpha", "log q_beta", "log r_mu", "log r_alpha", "log r_beta",
    "log lambda[0]", "log lambda[1]", "log chi[0]", "log chi[1]", "log sigma2_00",
)


def geweke_functions(state: ParameterState) -> np.ndarray:
    g = state.gamma[:4]
    vals = list(g) + list(g**2)
    vals.append(np.log(state.sigma2))
    vals += list(np.log(state.q)) + list(np.log(state.r))
    vals += [np.log(state.lam[0]), np.log(state.lam[1]), np.log(state.chi[0]), np.log(state.chi[1])]
    vals.append(np.log(state.composite_variance()[0, 0]))
    return np.asarray(vals)


def geweke_spec() -> ModelSpec:
    """G=2, H=2, one daily AR lag, one high- and one low-frequency covariate (L=4)."""
    from .config import Covariate

    return ModelSpec(n_countries=2, freq_mismatch=2, ar_lags=(2,),
                     covariates=(Covariate("x_high", "high"), Covariate("x_low", "low")))


def geweke_prior() -> PriorConfig:
    """Proper, moderately informative priors keeping simulated AR paths tame."""
    return PriorConfig(s0=1.0, r0=0.3, n0=5.0, m0=0.1, v1=3.0, w1=2.0, v2=5.0, w2=4.0, v3=5.0, w3=4.0)


@dataclass
class GewekeResult:
    names: tuple[str, ...]
    mean_prior: np.ndarray
    mean_chain: np.ndarray
    z: np.ndarray
    ess_chain: np.ndarray

    def table(self) -> list[dict]:
        return [
            {"function": n, "prior_mean": float(a), "chain_mean": float(b), "z": float(z), "ess": float(e)}
            for n, a, b, z, e in zip(self.names, self.mean_prior, self.mean_chain, self.z, self.ess_chain)
        ]

    def fraction_within(self, bound: float = 4.0) -> float:
        return float(np.mean(np.abs(self.z) < bound))


def _geweke_base(spec: ModelSpec, T_tilde: int, rng) -> PanelDataset:
    G, H = spec.G, spec.H
    x_high = rng.standard_normal((G, T_tilde * H, spec.n_high))
    x_low = np.repeat(rng.standard_normal((1, T_tilde, spec.n_low)), G, axis=0)
    y = rng.standard_normal((G, T_tilde * H))
    start = date(2020, 1, 1)
    return PanelDataset(
        spec=spec,
        countries=[f"C{g + 1}" for g in range(G)],
        dates=[start + timedelta(days=k) for k in range(T_tilde)],
        y=y,
        x_high=x_high,
        x_low=x_low,
    )


def _redraw(base: PanelDataset, state: ParameterState, rng) -> PanelDataset:
    start = base.presample_days * base.spec.H
    y = simulate_outcome(base.spec, state, base.y, base.x_high, base.x_low, start, rng)
    return replace(base, y=y)


def _to_model_arrays(data: PanelDataset):
    X, Y = design_tensor(data)
    return X.transpose(0, 2, 1, 3), Y.transpose(0, 2, 1)


def geweke_test(spec: ModelSpec | None = None, prior: PriorConfig | None = None, T_tilde: int = 30,
                n_prior: int = 20000, n_chain: int = 20000, rng=None, gamma_step: str = "collapsed",
                variance_scheme: str = "gig", sigma2_rate_factor: float = 1.0) -> GewekeResult:
    """Compare marginal-conditional and successive-conditional simulators.

    Covariates and presample prices are held fixed. ``sigma2_rate_factor``
    corrupts the sigma2 update (mutation testing only).
    """
    spec = spec or geweke_spec()
    prior = prior or geweke_prior()
    rng = np.random.default_rng(0) if rng is None else rng
    base = _geweke_base(spec, T_tilde, rng)

    mc = np.empty((n_prior, len(TEST_FUNCTIONS)))
    for i in range(n_prior):
        theta = draw_prior(spec, prior, rng, variance_scheme)
        _redraw(base, theta, rng)
        mc[i] = geweke_functions(theta)

    theta = draw_prior(spec, prior, rng, variance_scheme)
    data = _redraw(base, theta, rng)
    model = PanelModel(spec, prior, *_to_model_arrays(data), gamma_step=gamma_step,
                       variance_scheme=variance_scheme)
    sc = np.empty((n_chain, len(TEST_FUNCTIONS)))
    for i in range(n_chain):
        theta = gibbs_sweep(model, theta, rng, sigma2_rate_factor=sigma2_rate_factor)
        data = _redraw(base, theta, rng)
        model.set_data(*_to_model_arrays(data))
        sc[i] = geweke_functions(theta)

    ess = np.array([effective_sample_size(sc[:, k]) for k in range(sc.shape[1])])
    se = np.sqrt(mc.var(axis=0, ddof=1) / n_prior + sc.var(axis=0, ddof=1) / ess)
    z = (mc.mean(axis=0) - sc.mean(axis=0)) / se
    return GewekeResult(TEST_FUNCTIONS, mc.mean(axis=0), sc.mean(axis=0), z, ess)


# ---------------------------------------------------------------------------
# recovery harness


def recovery_spec() -> ModelSpec:
    from .config import Covariate

    return ModelSpec(n_countries=3, freq_mismatch=6, ar_lags=(6, 12),
                     covariates=(Covariate("solar_fc", "high"), Covariate("gas", "low")))


@dataclass
class RecoveryResult:
    truth: ParameterState
    gamma_mean: np.ndarray
    gamma_sd: np.ndarray
    gamma_lo: np.ndarray
    gamma_hi: np.ndarray
    composite_mean: np.ndarray
    store: object = None

    @property
    def z(self) -> np.ndarray:
        return (self.gamma_mean - self.truth.gamma) / self.gamma_sd

    @property
    def covered(self) -> np.ndarray:
        return (self.gamma_lo <= self.truth.gamma) & (self.truth.gamma <= self.gamma_hi)

    @property
    def composite_rel_error(self) -> np.ndarray:
        true = self.truth.composite_variance()
        return np.abs(self.composite_mean - true) / true


def recovery_run(seed: int, spec: ModelSpec | None = None, T_tilde: int = 150, burn_in: int = 1000,
                 retained: int = 4000, prior: PriorConfig | None = None, gamma_step: str = "collapsed",
                 truth: ParameterState | None = None, keep_store: bool = False, **truth_kw) -> RecoveryResult:
    """Simulate a panel from a known truth and fit it; summarize gamma and the composite variances."""
    spec = spec or recovery_spec()
    prior = prior or PriorConfig()
    rng = np.random.default_rng(seed)
    truth = truth if truth is not None else default_truth(spec, rng, **truth_kw)
    scenario = ScenarioConfig(n_days=T_tilde, seed=seed)
    data, _ = generate_panel(spec, truth, scenario, rng)
    sampler = SamplerConfig(burn_in=burn_in, retained=retained, seed=seed, gamma_step=gamma_step,
                            store_random_effects=keep_store)
    from .sampler import run_chain

    model = PanelModel.from_dataset(data, prior, sampler)
    store = run_chain(model, sampler, rng=np.random.default_rng(seed + 10_000))
    g = store.gamma
    lo, hi = np.quantile(g, [0.05, 0.95], axis=0)
    return RecoveryResult(
        truth=truth,
        gamma_mean=g.mean(axis=0),
        gamma_sd=g.std(axis=0, ddof=1),
        gamma_lo=lo,
        gamma_hi=hi,
        composite_mean=store.composite_variance.mean(axis=0),
        store=store if keep_store else None,
    )

