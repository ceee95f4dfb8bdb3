"""Model, prior and sampler configuration.

Also owns the mixed-frequency index arithmetic (lag multiplier, frequency
mismatch) and the coefficient layout shared by every coefficient vector in
the package: intercept, AR lags in ascending order, then covariates in
config order with their lags ascending.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import tomli
import tomli_w

SCHEMA_VERSION = 1

HIGH = "high"
LOW = "low"

# block ids used by the Q/R covariance layout
INTERCEPT, AR, SLOPE = 0, 1, 2


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class Covariate:
    name: str
    freq: str = HIGH
    max_lag: int = 0

    def __post_init__(self):
        if self.freq not in (HIGH, LOW):
            raise ConfigError(f"covariate {self.name!r}: freq must be 'high' or 'low', got {self.freq!r}")
        if self.max_lag < 0:
            raise ConfigError(f"covariate {self.name!r}: max_lag must be >= 0")


DEFAULT_COVARIATES = (
    Covariate("demand_fc", HIGH),
    Covariate("wind_fc", HIGH),
    Covariate("solar_fc", HIGH),
    Covariate("co2", LOW),
    Covariate("coal", LOW),
    Covariate("gas", LOW),
)


def daily_ar_lags(H: int = 24, days=(1, 2, 7)) -> tuple[int, ...]:
    """AR lag set of the electricity application: same hour 1, 2 and 7 days back."""
    return tuple(d * H for d in days)


@dataclass(frozen=True)
class ModelSpec:
    """Panel dimensions, lag structure and covariate frequency tags.

    High-frequency covariates must precede low-frequency ones, so covariate
    ``j`` (1-based) is high-frequency iff ``j <= n_high``.
    """

    n_countries: int = 9
    freq_mismatch: int = 24
    ar_lags: tuple[int, ...] = field(default_factory=daily_ar_lags)
    covariates: tuple[Covariate, ...] = DEFAULT_COVARIATES
    daily_ar: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ar_lags", tuple(sorted(int(a) for a in self.ar_lags)))
        object.__setattr__(
            self,
            "covariates",
            tuple(c if isinstance(c, Covariate) else Covariate(**c) for c in self.covariates),
        )
        if self.n_countries < 1:
            raise ConfigError("n_countries must be positive")
        if self.freq_mismatch < 1:
            raise ConfigError("freq_mismatch must be positive")
        if len(set(self.ar_lags)) != len(self.ar_lags) or any(a < 1 for a in self.ar_lags):
            raise ConfigError(f"ar_lags must be distinct positive integers, got {self.ar_lags}")
        if self.daily_ar and any(a % self.freq_mismatch for a in self.ar_lags):
            raise ConfigError("daily_ar requires every AR lag to be a multiple of freq_mismatch")
        names = [c.name for c in self.covariates]
        if len(set(names)) != len(names):
            raise ConfigError("covariate names must be unique")
        seen_low = False
        for c in self.covariates:
            if c.freq == LOW:
                seen_low = True
            elif seen_low:
                raise ConfigError("high-frequency covariates must precede low-frequency ones")

    @property
    def H(self) -> int:
        return self.freq_mismatch

    @property
    def G(self) -> int:
        return self.n_countries

    @property
    def n_high(self) -> int:
        return sum(c.freq == HIGH for c in self.covariates)

    @property
    def n_low(self) -> int:
        return len(self.covariates) - self.n_high

    @property
    def N(self) -> int:
        return len(self.covariates)

    @property
    def covariate_names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def L(self) -> int:
        return coefficient_dim(self)

    @property
    def max_lag_hours(self) -> int:
        """Longest look-back, in high-frequency periods, of any regressor."""
        lags = list(self.ar_lags) or [0]
        for j, c in enumerate(self.covariates, start=1):
            lags.append(c.max_lag * lag_multiplier(self, j))
        return max(lags)

    @property
    def presample_days(self) -> int:
        return -(-self.max_lag_hours // self.H)

    def layout(self) -> list[tuple[str, str, int]]:
        """Coefficient layout as ``(block, name, lag)`` triples, length L."""
        out = [("intercept", "const", 0)]
        out += [("ar", "y", a) for a in self.ar_lags]
        for c in self.covariates:
            out += [("slope", c.name, b) for b in range(c.max_lag + 1)]
        return out

    def block_index(self) -> list[int]:
        ids = {"intercept": INTERCEPT, "ar": AR, "slope": SLOPE}
        return [ids[b] for b, _, _ in self.layout()]

    def coef_labels(self) -> list[str]:
        labels = []
        for block, name, lag in self.layout():
            if block == "intercept":
                labels.append("mu")
            elif block == "ar":
                labels.append(f"alpha_{lag}")
            else:
                labels.append(f"beta_{name}" if lag == 0 else f"beta_{name}_lag{lag}")
        return labels

    def slope_position(self, covariate: str | int, lag: int = 0) -> int:
        """Layout position of covariate ``covariate`` (name or 1-based index) at ``lag``."""
        if isinstance(covariate, int):
            _check_covariate_index(self, covariate)
            covariate = self.covariates[covariate - 1].name
        for pos, (block, name, b) in enumerate(self.layout()):
            if block == "slope" and name == covariate and b == lag:
                return pos
        raise KeyError(f"no coefficient for covariate {covariate!r} at lag {lag}")

    def to_dict(self) -> dict:
        return {
            "n_countries": self.n_countries,
            "freq_mismatch": self.freq_mismatch,
            "ar_lags": list(self.ar_lags),
            "daily_ar": self.daily_ar,
            "covariates": [asdict(c) for c in self.covariates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        if "covariates" in d:
            d["covariates"] = tuple(Covariate(**c) for c in d["covariates"])
        if "ar_lags" in d:
            d["ar_lags"] = tuple(d["ar_lags"])
        return cls(**_known(cls, d))


def full_spec(n_countries: int = 9) -> ModelSpec:
    """The electricity application: H=24, AR lags {H, 2H, 7H}, 3 hourly + 3 daily covariates."""
    return ModelSpec(n_countries=n_countries, freq_mismatch=24, ar_lags=daily_ar_lags(24), daily_ar=True)


@dataclass(frozen=True)
class PriorConfig:
    s0: float = 10.0
    r0: float = 10.0
    n0: float = 0.1
    m0: float = 0.1
    v1: float = 0.1
    w1: float = 0.1
    v2: float = 0.1
    w2: float = 0.1
    v3: float = 0.1
    w3: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ConfigError(f"prior hyperparameter {f.name} must be strictly positive, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        return cls(**_known(cls, d))


GAMMA_STEPS = ("collapsed", "diagonal", "conditional")
VARIANCE_SCHEMES = ("gig", "conjugate")


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC run settings.

    ``gamma_step`` selects how the common coefficients are drawn:
    ``collapsed`` integrates the random effects out exactly (joint Gaussian),
    ``diagonal`` uses independent per-observation marginal variances,
    ``conditional`` draws them given the current random effects.
    ``variance_scheme='conjugate'`` swaps the inverse-gamma priors on the
    hour/country multipliers for gamma priors, making their updates conjugate.
    """

    burn_in: int = 3000
    retained: int = 10000
    thin: int = 1
    seed: int = 0
    store_random_effects: bool = True
    gamma_step: str = "collapsed"
    variance_scheme: str = "gig"

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("burn_in must be >= 0")
        if self.retained < 1:
            raise ConfigError("retained must be >= 1")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.gamma_step not in GAMMA_STEPS:
            raise ConfigError(f"gamma_step must be one of {GAMMA_STEPS}")
        if self.variance_scheme not in VARIANCE_SCHEMES:
            raise ConfigError(f"variance_scheme must be one of {VARIANCE_SCHEMES}")

    @property
    def n_sweeps(self) -> int:
        return self.burn_in + self.retained

    @property
    def n_stored(self) -> int:
        return self.retained // self.thin

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        return cls(**_known(cls, d))


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = field(default_factory=full_spec)
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "prior": self.prior.to_dict(),
            "sampler": self.sampler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version}")
        try:
            return cls(
                model=ModelSpec.from_dict(d.get("model", {})),
                prior=PriorConfig.from_dict(d.get("prior", {})),
                sampler=SamplerConfig.from_dict(d.get("sampler", {})),
            )
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        return config_hash(self.to_dict())

    def replace(self, **sections) -> "RunConfig":
        d = self.to_dict()
        for section, overrides in sections.items():
            d[section].update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)


def _known(cls, d: dict) -> dict:
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return d


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> RunConfig:
    """Read a run configuration from a ``.toml`` or ``.json`` file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        d = json.loads(text) if path.suffix == ".json" else tomli.loads(text)
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return RunConfig.from_dict(d)


def save_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    d = cfg.to_dict()
    if path.suffix == ".json":
        path.write_text(json.dumps(d, indent=2), encoding="utf-8")
    else:
        path.write_text(tomli_w.dumps(d), encoding="utf-8")


def _check_covariate_index(spec: ModelSpec, j: int) -> None:
    if not 1 <= j <= spec.N:
        raise IndexError(f"covariate index {j} outside 1..{spec.N}")


def lag_multiplier(spec: ModelSpec, j: int) -> int:
    """Step size applied to lags of covariate ``j`` (1-based): 1 if high-frequency, else H."""
    _check_covariate_index(spec, j)
    return 1 if j <= spec.n_high else spec.H


def frequency_mismatch(spec: ModelSpec, j: int, h: int) -> int:
    """Hour offset at which covariate ``j`` (1-based) enters the hour-``h`` equation."""
    _check_covariate_index(spec, j)
    if not 0 <= h < spec.H:
        raise IndexError(f"hour {h} outside 0..{spec.H - 1}")
    return h if j <= spec.n_high else 0


def coefficient_dim(spec: ModelSpec) -> int:
    return 1 + len(spec.ar_lags) + sum(1 + c.max_lag for c in spec.covariates)
