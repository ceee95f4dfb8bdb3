"""Posterior summaries: country effects, volatility paths, chain diagnostics, export."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
GRID_POINTS = 512


class DiagnosticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# diagnostics


def autocorrelation(x: np.ndarray) -> np.ndarray:
    """Sample autocorrelation at all lags, via FFT."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    f = np.fft.rfft(xc, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    return acov / acov[0]


def effective_sample_size(x: np.ndarray) -> float:
    """ESS with the autocorrelation sum truncated at the first negative pair (Geyer).

    Capped at ``len(x)``.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        raise DiagnosticsError("too few draws for an ESS estimate")
    if np.ptp(x) == 0:
        raise DiagnosticsError("degenerate chain: all draws identical")
    rho = autocorrelation(x)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair < 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / n)
    return float(min(n, n / tau))


def geweke_z(x: np.ndarray, first: float = 0.1, last: float = 0.5) -> float:
    """Split-mean z-score comparing the first 10% with the last 50% of a chain."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    a = x[: int(first * n)]
    b = x[n - int(last * n) :]
    va = a.var(ddof=1) / effective_sample_size(a)
    vb = b.var(ddof=1) / effective_sample_size(b)
    return float((a.mean() - b.mean()) / np.sqrt(va + vb))


@dataclass
class Diagnostics:
    names: list[str]
    ess: np.ndarray
    geweke: np.ndarray
    n_draws: int
    trace: np.ndarray  # thinned draws for export, (n_trace, n_params)

    def rows(self) -> list[dict]:
        return [
            {"parameter": n, "ess": float(e), "geweke_z": float(z), "n_draws": self.n_draws}
            for n, e, z in zip(self.names, self.ess, self.geweke)
        ]


def diagnostics(store, params: str = "gamma", max_trace: int = 1000) -> Diagnostics:
    """ESS and Geweke z for the common coefficients (``params='gamma'``) or all scalar blocks (``'all'``)."""
    if store.n_draws < 100:
        raise DiagnosticsError(f"need at least 100 draws, got {store.n_draws}")
    labels = store.spec.coef_labels()
    cols = [store.gamma[:, k] for k in range(len(labels))]
    names = [f"gamma:{lab}" for lab in labels]
    if params == "all":
        cols.append(np.log(store.sigma2))
        names.append("log sigma2")
        comp = store.composite_variance.reshape(store.n_draws, -1)
        for k in range(comp.shape[1]):
            g, h = divmod(k, store.spec.H)
            cols.append(np.log(comp[:, k]))
            names.append(f"log sigma2_gh:{store.countries[g]}:{h}")
    mat = np.column_stack(cols)
    ess = np.array([effective_sample_size(c) for c in mat.T])
    gz = np.array([geweke_z(c) for c in mat.T])
    step = max(1, store.n_draws // max_trace)
    return Diagnostics(names, ess, gz, store.n_draws, mat[::step])


# ---------------------------------------------------------------------------
# country effects


@dataclass
class CountryEffectSummary:
    covariate: str
    country: str
    draws: np.ndarray
    quantiles: np.ndarray  # at QUANTILES
    grid: np.ndarray
    density: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.draws.mean())


def density_grid(draws: np.ndarray, n: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE (Silverman bandwidth) on ``n`` points spanning mean ± 4 sd."""
    m, s = draws.mean(), draws.std(ddof=1)
    if not s > 0:
        raise DiagnosticsError("cannot estimate a density from constant draws")
    grid = np.linspace(m - 4 * s, m + 4 * s, n)
    kde = stats.gaussian_kde(draws, bw_method="silverman")
    return grid, kde(grid)


def _country_index(store, g) -> int:
    if isinstance(g, str):
        try:
            return store.countries.index(g)
        except ValueError:
            raise KeyError(f"unknown country {g!r}") from None
    if not 0 <= g < store.spec.G:
        raise IndexError(f"country index {g} outside 0..{store.spec.G - 1}")
    return int(g)


def effect_draws(store, covariate, g, lag: int = 0) -> np.ndarray:
    """Per-draw overall effect beta_j + zeta_{beta,gj} of ``covariate`` in country ``g``."""
    pos = store.spec.slope_position(covariate, lag)
    gi = _country_index(store, g)
    return store.gamma[:, pos] + store.zeta[:, gi, pos]


def country_effect(store, covariate, g, lag: int = 0) -> CountryEffectSummary:
    """Quantiles and density of the overall country effect of a covariate.

    ``covariate`` is a name or 1-based index; ``g`` a country name or 0-based index.
    """
    draws = effect_draws(store, covariate, g, lag)
    name = covariate if isinstance(covariate, str) else store.spec.covariate_names[covariate - 1]
    grid, dens = density_grid(draws)
    return CountryEffectSummary(
        covariate=name,
        country=store.countries[_country_index(store, g)],
        draws=draws,
        quantiles=np.quantile(draws, QUANTILES),
        grid=grid,
        density=dens,
    )


# ---------------------------------------------------------------------------
# volatility


@dataclass
class VolatilityPath:
    country: str
    dates: list
    values: np.ndarray  # (D,) for daily, (D, H) for hourly
    aggregate: str


def plug_in_estimates(store, statistic: str = "mean") -> dict:
    """Posterior point estimates of the composite variances and effect variances."""
    f = np.mean if statistic == "mean" else np.median
    return {
        "sigma2_gh": f(store.composite_variance, axis=0),
        "q": f(store.q, axis=0),
        "r": f(store.r, axis=0),
    }


def normalized_multipliers(store) -> dict:
    """Rescale each draw so lambda and chi have geometric mean 1, moving the scale into sigma2.

    A reporting convenience only: the composite sigma2 / (lam chi) is unchanged.
    """
    gl = np.exp(np.log(store.lam).mean(axis=1))
    gc = np.exp(np.log(store.chi).mean(axis=1))
    return {
        "sigma2": store.sigma2 / (gl * gc),
        "lam": store.lam / gl[:, None],
        "chi": store.chi / gc[:, None],
    }


def volatility_from_parameters(X: np.ndarray, sigma2_gh: np.ndarray, q, r, block) -> np.ndarray:
    """sigma2_gh + z'(R+Q)z for every observation of a (G, D, H, L) design, shape (G, D, H)."""
    d = np.asarray(q, dtype=float)[block] + np.asarray(r, dtype=float)[block]
    return sigma2_gh[:, None, :] + np.einsum("gdhl,l->gdh", X**2, d)


def volatility_path(store, data, g, aggregate: str = "daily", statistic: str = "mean") -> VolatilityPath:
    """Time-varying variance path of country ``g`` using posterior point estimates.

    ``aggregate='daily'`` averages the hourly variances within each day.
    """
    from .design import design_tensor

    if aggregate not in ("daily", "hourly"):
        raise ValueError("aggregate must be 'daily' or 'hourly'")
    gi = _country_index(store, g)
    est = plug_in_estimates(store, statistic)
    X, _ = design_tensor(data)
    block = np.asarray(store.spec.block_index())
    vol = volatility_from_parameters(X[gi : gi + 1], est["sigma2_gh"][gi : gi + 1], est["q"], est["r"], block)[0]
    dates = data.dates[data.presample_days :]
    values = vol.mean(axis=1) if aggregate == "daily" else vol
    return VolatilityPath(store.countries[gi], dates, values, aggregate)


# ---------------------------------------------------------------------------
# export

BOXPLOT_COLUMNS = ["covariate", "country", "q05", "q25", "q50", "q75", "q95"]
DENSITY_COLUMNS = ["covariate", "country", "x", "density"]
DAILY_VOL_COLUMNS = ["country", "date", "variance"]
HOURLY_VOL_COLUMNS = ["country", "date", "hour", "variance"]

SCHEMAS = {
    "effects_boxplot.csv": {"columns": BOXPLOT_COLUMNS, "rows": "one per (covariate, country)"},
    "effects_density.csv": {"columns": DENSITY_COLUMNS, "rows": f"{GRID_POINTS} grid points per (covariate, country), mean ± 4 sd"},
    "volatility_daily.csv": {"columns": DAILY_VOL_COLUMNS, "rows": "one per estimation day per country",
                             "units": "variance; take the square root for standard deviations"},
    "volatility_hourly.csv": {"columns": HOURLY_VOL_COLUMNS, "rows": "one per estimation hour per country",
                              "units": "variance"},
    "diagnostics.csv": {"columns": ["parameter", "ess", "geweke_z", "n_draws"], "rows": "one per parameter"},
}


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def export(directory, *, effects=(), volatility=(), diag: Diagnostics | None = None, meta: dict | None = None) -> dict:
    """Write summary CSVs plus ``summary.json`` describing them; returns written paths by kind."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = {}
    effects = list(effects)
    if effects:
        p = directory / "effects_boxplot.csv"
        _write_csv(p, BOXPLOT_COLUMNS, [[e.covariate, e.country, *map(float, e.quantiles)] for e in effects])
        written["boxplot"] = p
        p = directory / "effects_density.csv"
        _write_csv(
            p,
            DENSITY_COLUMNS,
            [[e.covariate, e.country, float(x), float(d)] for e in effects for x, d in zip(e.grid, e.density)],
        )
        written["density"] = p
    volatility = list(volatility)
    daily = [v for v in volatility if v.aggregate == "daily"]
    hourly = [v for v in volatility if v.aggregate == "hourly"]
    if daily:
        p = directory / "volatility_daily.csv"
        _write_csv(p, DAILY_VOL_COLUMNS,
                   [[v.country, d.isoformat(), float(x)] for v in daily for d, x in zip(v.dates, v.values)])
        written["volatility_daily"] = p
    if hourly:
        p = directory / "volatility_hourly.csv"
        _write_csv(
            p,
            HOURLY_VOL_COLUMNS,
            [[v.country, d.isoformat(), h, float(x)] for v in hourly for d, row in zip(v.dates, v.values)
             for h, x in enumerate(row)],
        )
        written["volatility_hourly"] = p
    if diag is not None:
        p = directory / "diagnostics.csv"
        rows = diag.rows()
        _write_csv(p, list(rows[0]), [list(r.values()) for r in rows])
        written["diagnostics"] = p
    # keep entries written earlier into the same directory by other report commands
    files = {}
    prev = directory / "summary.json"
    if prev.exists():
        try:
            files = {k: v for k, v in json.loads(prev.read_text(encoding="utf-8")).get("files", {}).items()
                     if (directory / k).exists()}
        except (json.JSONDecodeError, AttributeError):
            files = {}
    files.update({p.name: SCHEMAS[p.name] for p in written.values()})
    summary = {**(meta or {}), "files": dict(sorted(files.items()))}
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, default=str), encoding="utf-8")
    return written
