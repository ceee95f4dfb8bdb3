"""Multi-move Gibbs sampler for the hierarchical mixed-frequency panel.

Observation model, with ``beta_gh = gamma + psi[h] + zeta[g]``::

    y[g, t, h] = z[g, t, h] . beta_gh + e,   e ~ N(0, sigma2 / (lam[h] * chi[g]))
    psi[h] ~ N(0, Q),   zeta[g] ~ N(0, R)

One sweep draws gamma with the random effects integrated out, then
(psi, zeta) jointly given gamma, then sigma2, lam, chi, and finally the
random-effect variances q and r.

Everything the coefficient steps need reduces to per-(country, hour) cross
products ``S[g, h] = sum_t z z'`` and ``c[g, h] = sum_t z y``, computed once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .config import AR, INTERCEPT, SLOPE, ModelSpec, PriorConfig, RunConfig, SamplerConfig
from .design import design_tensor
from .gig import gig_rvs

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-12
BLOCK_NAMES = ("mu", "alpha", "beta")


class SamplerError(RuntimeError):
    """Numerical failure inside a Gibbs step."""


@dataclass
class ParameterState:
    gamma: np.ndarray  # (L,)
    psi: np.ndarray  # (H, L)
    zeta: np.ndarray  # (G, L)
    sigma2: float
    lam: np.ndarray  # (H,)
    chi: np.ndarray  # (G,)
    q: np.ndarray  # (3,) mu, alpha, beta
    r: np.ndarray  # (3,)

    def copy(self) -> "ParameterState":
        return ParameterState(
            self.gamma.copy(),
            self.psi.copy(),
            self.zeta.copy(),
            float(self.sigma2),
            self.lam.copy(),
            self.chi.copy(),
            self.q.copy(),
            self.r.copy(),
        )

    def check(self) -> None:
        for name in ("sigma2", "lam", "chi", "q", "r"):
            v = np.asarray(getattr(self, name))
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise SamplerError(f"variance component {name} left the positive reals: {v}")

    def composite_variance(self) -> np.ndarray:
        """Identified error variances sigma2 / (lam[h] chi[g]), shape (G, H)."""
        return self.sigma2 / np.outer(self.chi, self.lam)


@dataclass(frozen=True)
class EffectCovariances:
    """Diagonals of Q (hourly effects) and R (country effects) in coefficient layout."""

    Q: np.ndarray
    R: np.ndarray

    @classmethod
    def build(cls, block: np.ndarray, q, r) -> "EffectCovariances":
        return cls(np.asarray(q, dtype=float)[block], np.asarray(r, dtype=float)[block])

    @property
    def Q_matrix(self) -> np.ndarray:
        return np.diag(self.Q)

    @property
    def R_matrix(self) -> np.ndarray:
        return np.diag(self.R)


def marginal_variance(z, sigma2_gh: float, Q, R) -> float:
    """Variance of ``y`` given gamma once both random effects are integrated out.

    ``Q``, ``R`` may be diagonals (1-D) or full matrices.
    """
    z = np.asarray(z, dtype=float)
    Q, R = np.asarray(Q, dtype=float), np.asarray(R, dtype=float)
    if not (np.all(np.isfinite(z)) and np.isfinite(sigma2_gh) and np.all(np.isfinite(Q)) and np.all(np.isfinite(R))):
        raise ValueError("marginal_variance: non-finite input")
    S = Q + R
    quad = z @ S @ z if S.ndim == 2 else float(np.sum(z * z * S))
    return float(sigma2_gh + quad)


def prior_precision_diag(L: int, prior: PriorConfig) -> np.ndarray:
    """Diagonal of the inverse prior covariance of gamma: 1/s0^2 for the intercept, 1/r0^2 otherwise."""
    d = np.full(L, 1.0 / prior.r0**2)
    d[0] = 1.0 / prior.s0**2
    return d


def _inv_gamma(shape: float, rate: float, rng) -> float:
    return rate / rng.gamma(shape)


def _floor(value, name: str):
    v = np.asarray(value, dtype=float)
    if np.any(v < VARIANCE_FLOOR):
        log.warning("%s draw below %.0e, flooring", name, VARIANCE_FLOOR)
        v = np.maximum(v, VARIANCE_FLOOR)
    return float(v) if v.ndim == 0 else v


def draw_from_precision(P: np.ndarray, rhs: np.ndarray, rng) -> np.ndarray:
    """Draw from N(P^{-1} rhs, P^{-1}) via a lower Cholesky factor of P.

    Retries once with a small diagonal jitter before giving up.
    """
    try:
        Lc = linalg.cholesky(P, lower=True, check_finite=False)
    except linalg.LinAlgError:
        jitter = 1e-10 * np.trace(P) / len(P)
        log.warning("precision not positive definite, adding jitter %.3g", jitter)
        try:
            Lc = linalg.cholesky(P + jitter * np.eye(len(P)), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SamplerError("precision matrix is not positive definite") from exc
    mean = linalg.cho_solve((Lc, True), rhs, check_finite=False)
    eps = rng.standard_normal(len(P))
    return mean + linalg.solve_triangular(Lc.T, eps, lower=False, check_finite=False)


class PanelModel:
    """Data-side state of the sampler: design tensor, cross products, priors.

    ``X`` has shape (G, H, D, L) and ``Y`` (G, H, D) with ``D`` estimation days.
    """

    def __init__(
        self,
        spec: ModelSpec,
        prior: PriorConfig,
        X: np.ndarray,
        Y: np.ndarray,
        gamma_step: str = "collapsed",
        variance_scheme: str = "gig",
    ):
        self.spec = spec
        self.prior = prior
        self.gamma_step = gamma_step
        self.variance_scheme = variance_scheme
        self.block = np.asarray(spec.block_index())
        self.P0 = prior_precision_diag(spec.L, prior)
        self.set_data(X, Y)

    @classmethod
    def from_dataset(cls, data, prior: PriorConfig, sampler: SamplerConfig | None = None) -> "PanelModel":
        sampler = sampler or SamplerConfig()
        X, Y = design_tensor(data)
        return cls(
            data.spec,
            prior,
            X.transpose(0, 2, 1, 3),
            Y.transpose(0, 2, 1),
            gamma_step=sampler.gamma_step,
            variance_scheme=sampler.variance_scheme,
        )

    def set_data(self, X: np.ndarray, Y: np.ndarray) -> None:
        G, H, L = self.spec.G, self.spec.H, self.spec.L
        if X.shape[:2] != (G, H) or X.shape[3] != L or Y.shape != X.shape[:3]:
            raise ValueError(f"design shapes {X.shape}, {Y.shape} inconsistent with G={G}, H={H}, L={L}")
        self.X = np.ascontiguousarray(X, dtype=float)
        self.Y = np.ascontiguousarray(Y, dtype=float)
        self.S = np.einsum("ghdl,ghdm->ghlm", self.X, self.X)
        self.c = np.einsum("ghdl,ghd->ghl", self.X, self.Y)
        self._X2 = self.X.reshape(-1, L)

    @property
    def D(self) -> int:
        return self.X.shape[2]

    @property
    def n_obs(self) -> int:
        return self.X.shape[0] * self.X.shape[1] * self.X.shape[2]

    def coefficients(self, state: ParameterState) -> np.ndarray:
        """Per-(g, h) coefficient vectors gamma + psi[h] + zeta[g], shape (G, H, L)."""
        return state.gamma[None, None, :] + state.psi[None, :, :] + state.zeta[:, None, :]

    def residuals(self, state: ParameterState) -> np.ndarray:
        return self.Y - np.einsum("ghdl,ghl->ghd", self.X, self.coefficients(state))

    def residual_ss(self, state: ParameterState) -> np.ndarray:
        e = self.residuals(state)
        return np.einsum("ghd,ghd->gh", e, e)

    def covariances(self, state: ParameterState) -> EffectCovariances:
        return EffectCovariances.build(self.block, state.q, state.r)

    # joint system over (gamma?, psi_0..psi_{H-1}, zeta_1..zeta_G)
    def _joint_system(self, state: ParameterState, with_gamma: bool, offset: np.ndarray | None):
        G, H, L = self.spec.G, self.spec.H, self.spec.L
        cov = self.covariances(state)
        tau = np.outer(state.chi, state.lam) / state.sigma2  # (G, H) precisions
        W = tau[:, :, None, None] * self.S
        if offset is None:
            b = tau[:, :, None] * self.c
        else:
            b = tau[:, :, None] * (self.c - np.einsum("ghlm,m->ghl", self.S, offset))
        n0 = L if with_gamma else 0
        K = n0 + (H + G) * L
        P = np.zeros((K, K))
        rhs = np.zeros(K)
        W_h = W.sum(axis=0)  # (H, L, L)
        W_g = W.sum(axis=1)  # (G, L, L)
        with np.errstate(divide="ignore"):
            q_prec = 1.0 / cov.Q
            r_prec = 1.0 / cov.R
        for h in range(H):
            s = n0 + h * L
            P[s : s + L, s : s + L] = W_h[h] + np.diag(np.where(np.isfinite(q_prec), q_prec, 0.0))
            rhs[s : s + L] = b[:, h].sum(axis=0)
        for g in range(G):
            s = n0 + (H + g) * L
            P[s : s + L, s : s + L] = W_g[g] + np.diag(np.where(np.isfinite(r_prec), r_prec, 0.0))
            rhs[s : s + L] = b[g].sum(axis=0)
            for h in range(H):
                t = n0 + h * L
                P[t : t + L, s : s + L] = W[g, h]
                P[s : s + L, t : t + L] = W[g, h]
        if with_gamma:
            P[:L, :L] = W.sum(axis=(0, 1)) + np.diag(self.P0)
            rhs[:L] = b.sum(axis=(0, 1))
            for h in range(H):
                s = L + h * L
                P[:L, s : s + L] = W_h[h]
                P[s : s + L, :L] = W_h[h]
            for g in range(G):
                s = L + (H + g) * L
                P[:L, s : s + L] = W_g[g]
                P[s : s + L, :L] = W_g[g]
        # coordinates with zero prior variance are pinned at zero
        active = np.concatenate(
            [np.ones(n0, dtype=bool), np.tile(cov.Q > 0, H), np.tile(cov.R > 0, G)]
        )
        return P, rhs, active


def draw_gamma(model: PanelModel, state: ParameterState, rng, step: str | None = None) -> np.ndarray:
    """Draw the common coefficients.

    ``collapsed``: exact draw from p(gamma | variances, y) with the random
    effects integrated out (marginal of the joint Gaussian over gamma, psi, zeta).
    ``diagonal``: weighted least squares with independent per-observation
    marginal variances ``sigma2_gh + z'(Q+R)z``.
    ``conditional``: draw given the current psi and zeta.
    """
    step = step or model.gamma_step
    L = model.spec.L
    if step == "collapsed":
        P, rhs, active = model._joint_system(state, with_gamma=True, offset=None)
        sub = draw_from_precision(P[np.ix_(active, active)], rhs[active], rng)
        return sub[:L]
    if step == "diagonal":
        cov = model.covariances(state)
        base = state.composite_variance()  # (G, H)
        v = base[:, :, None] + np.einsum("ghdl,l->ghd", model.X**2, cov.Q + cov.R)
        w = (1.0 / v).reshape(-1)
        X2 = model._X2
        P = np.diag(model.P0) + (X2 * w[:, None]).T @ X2
        rhs = X2.T @ (w * model.Y.reshape(-1))
        return draw_from_precision(P, rhs, rng)
    if step == "conditional":
        tau = np.outer(state.chi, state.lam) / state.sigma2
        P = np.diag(model.P0) + np.einsum("gh,ghlm->lm", tau, model.S)
        re = state.psi[None, :, :] + state.zeta[:, None, :]
        resid = model.c - np.einsum("ghlm,ghm->ghl", model.S, re)
        rhs = np.einsum("gh,ghl->l", tau, resid)
        return draw_from_precision(P, rhs, rng)
    raise ValueError(f"unknown gamma step {step!r}")


def draw_random_effects(model: PanelModel, state: ParameterState, rng) -> tuple[np.ndarray, np.ndarray]:
    """Joint draw of all hourly and country effects given gamma, shape (H, L) and (G, L)."""
    G, H, L = model.spec.G, model.spec.H, model.spec.L
    P, rhs, active = model._joint_system(state, with_gamma=False, offset=state.gamma)
    full = np.zeros((H + G) * L)
    if active.any():
        full[active] = draw_from_precision(P[np.ix_(active, active)], rhs[active], rng)
    return full[: H * L].reshape(H, L), full[H * L :].reshape(G, L)


def draw_q_r(model: PanelModel, state: ParameterState, rng) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate inverse-gamma updates of the hourly (q) and country (r) effect variances."""
    n0, m0 = model.prior.n0, model.prior.m0
    q = np.empty(3)
    r = np.empty(3)
    for k in (INTERCEPT, AR, SLOPE):
        idx = model.block == k
        ps = state.psi[:, idx]
        zs = state.zeta[:, idx]
        q[k] = _inv_gamma(n0 + ps.size / 2.0, m0 + 0.5 * np.sum(ps**2), rng)
        r[k] = _inv_gamma(n0 + zs.size / 2.0, m0 + 0.5 * np.sum(zs**2), rng)
    return _floor(q, "q"), _floor(r, "r")


def draw_sigma2(model: PanelModel, state: ParameterState, rng, rate_factor: float = 1.0) -> float:
    """Conjugate inverse-gamma draw of the common variance.

    ``rate_factor`` scales the posterior rate; it exists for mutation testing
    and must stay 1 in real use.
    """
    ss = model.residual_ss(state)
    weighted = float(np.sum(np.outer(state.chi, state.lam) * ss))
    shape = model.prior.v1 + model.n_obs / 2.0
    rate = (model.prior.w1 + 0.5 * weighted) * rate_factor
    return _floor(_inv_gamma(shape, rate, rng), "sigma2")


def _multiplier_draw(n: int, c: float, shape0: float, rate0: float, scheme: str, rng) -> float:
    """Full conditional of one hour/country precision multiplier.

    Likelihood kernel x^(n/2) exp(-c x); prior IG(shape0, rate0) gives
    GIG(n/2 - shape0, 2c, 2 rate0), prior Gamma(shape0, rate0) gives
    Gamma(shape0 + n/2, rate0 + c).
    """
    if scheme == "conjugate":
        return rng.gamma(shape0 + n / 2.0) / (rate0 + c)
    if n == 0 or c <= 0.0:
        if n > 0:
            log.warning("zero residual sum of squares, drawing multiplier from its prior")
        return _inv_gamma(shape0, rate0, rng)
    return gig_rvs(n / 2.0 - shape0, 2.0 * c, 2.0 * rate0, rng=rng)


def draw_lambda_chi(model: PanelModel, state: ParameterState, rng) -> tuple[np.ndarray, np.ndarray]:
    """Hourly multipliers first, then country multipliers given the new hourly ones."""
    G, H, D = model.spec.G, model.spec.H, model.D
    pr = model.prior
    ss = model.residual_ss(state) / (2.0 * state.sigma2)
    lam = np.empty(H)
    for h in range(H):
        c_h = float(np.sum(state.chi * ss[:, h]))
        lam[h] = _multiplier_draw(G * D, c_h, pr.v2, pr.w2, model.variance_scheme, rng)
    lam = _floor(lam, "lambda")
    chi = np.empty(G)
    for g in range(G):
        c_g = float(np.sum(lam * ss[g, :]))
        chi[g] = _multiplier_draw(H * D, c_g, pr.v3, pr.w3, model.variance_scheme, rng)
    return lam, _floor(chi, "chi")


def gibbs_sweep(model: PanelModel, state: ParameterState, rng, sigma2_rate_factor: float = 1.0) -> ParameterState:
    """One full Gibbs cycle; returns a new state."""
    new = state.copy()
    new.gamma = draw_gamma(model, new, rng)
    new.psi, new.zeta = draw_random_effects(model, new, rng)
    new.sigma2 = draw_sigma2(model, new, rng, rate_factor=sigma2_rate_factor)
    new.lam, new.chi = draw_lambda_chi(model, new, rng)
    new.q, new.r = draw_q_r(model, new, rng)
    new.check()
    return new


def initial_state(model: PanelModel, rng=None, jitter: float = 0.0) -> ParameterState:
    """Least-squares start: OLS gamma, zero effects, residual variance, unit multipliers.

    ``jitter > 0`` scales the start by random log-normal multipliers to give
    overdispersed starts for multiple chains.
    """
    G, H, L = model.spec.G, model.spec.H, model.spec.L
    X2, y = model._X2, model.Y.reshape(-1)
    if len(y) > L:
        gamma, *_ = np.linalg.lstsq(X2, y, rcond=None)
        resid = y - X2 @ gamma
        sigma2 = max(float(resid.var()), VARIANCE_FLOOR)
    else:
        gamma, sigma2 = np.zeros(L), 1.0
    state = ParameterState(
        gamma=gamma,
        psi=np.zeros((H, L)),
        zeta=np.zeros((G, L)),
        sigma2=sigma2,
        lam=np.ones(H),
        chi=np.ones(G),
        q=np.ones(3),
        r=np.ones(3),
    )
    if jitter > 0 and rng is not None:
        state.gamma = gamma + jitter * np.sqrt(sigma2) * rng.standard_normal(L)
        state.sigma2 = sigma2 * float(np.exp(jitter * rng.standard_normal()))
    return state


def draw_prior(spec: ModelSpec, prior: PriorConfig, rng, variance_scheme: str = "gig") -> ParameterState:
    """One draw of every parameter from its prior."""
    G, H, L = spec.G, spec.H, spec.L
    block = np.asarray(spec.block_index())
    gamma = rng.standard_normal(L) / np.sqrt(prior_precision_diag(L, prior))
    q = np.array([_inv_gamma(prior.n0, prior.m0, rng) for _ in range(3)])
    r = np.array([_inv_gamma(prior.n0, prior.m0, rng) for _ in range(3)])
    psi = rng.standard_normal((H, L)) * np.sqrt(q[block])
    zeta = rng.standard_normal((G, L)) * np.sqrt(r[block])
    sigma2 = _inv_gamma(prior.v1, prior.w1, rng)
    if variance_scheme == "conjugate":
        lam = rng.gamma(prior.v2, size=H) / prior.w2
        chi = rng.gamma(prior.v3, size=G) / prior.w3
    else:
        lam = prior.w2 / rng.gamma(prior.v2, size=H)
        chi = prior.w3 / rng.gamma(prior.v3, size=G)
    return ParameterState(gamma, psi, zeta, sigma2, lam, chi, q, r)


def run_chain(model: PanelModel, sampler: SamplerConfig, rng=None, writer=None, init: ParameterState | None = None,
              progress=None):
    """Run burn-in plus retained sweeps, keeping every ``thin``-th retained draw.

    Draws go to ``writer`` (a :class:`prumidas.store.DrawWriter`); when no
    writer is given an in-memory store is returned.
    """
    from .store import DrawWriter

    rng = np.random.default_rng(sampler.seed) if rng is None else rng
    own_writer = writer is None
    if own_writer:
        writer = DrawWriter(model.spec, store_random_effects=sampler.store_random_effects)
    run = RunConfig(model=model.spec, prior=model.prior, sampler=sampler)
    writer.meta.setdefault("seed", sampler.seed)
    writer.meta.setdefault("config_hash", run.config_hash())
    writer.meta.setdefault("burn_in", sampler.burn_in)
    writer.meta.setdefault("retained", sampler.retained)
    writer.meta.setdefault("thin", sampler.thin)
    writer.meta.setdefault("gamma_step", model.gamma_step)
    writer.meta.setdefault("variance_scheme", model.variance_scheme)
    state = init.copy() if init is not None else initial_state(model)
    total = sampler.n_sweeps
    for it in range(total):
        try:
            state = gibbs_sweep(model, state, rng)
        except (SamplerError, linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(f"sweep {it}: {exc}") from exc
        k = it - sampler.burn_in
        if k >= 0 and (k + 1) % sampler.thin == 0:
            writer.append(state)
        if progress is not None:
            progress(it + 1, total)
    return writer.finish()
