"""Retained posterior draws.

On disk a store is a directory holding ``draws.bin`` (row-major float64,
little-endian, one row per retained draw) and ``draws.json`` (column names,
coefficient layout, run metadata). Columns, in order::

    gamma[L], sigma2, lambda[H], chi[G], q[3], r[3], psi[H*L]?, zeta[G*L]?

The random-effect blocks are present only when ``store_random_effects`` is set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelSpec
from .sampler import BLOCK_NAMES, ParameterState

BIN_NAME = "draws.bin"
HEADER_NAME = "draws.json"
STORE_FORMAT = 1


def column_names(spec: ModelSpec, store_random_effects: bool, countries=None) -> list[str]:
    countries = list(countries) if countries is not None else [str(g) for g in range(spec.G)]
    labels = spec.coef_labels()
    cols = [f"gamma:{lab}" for lab in labels]
    cols.append("sigma2")
    cols += [f"lambda:{h}" for h in range(spec.H)]
    cols += [f"chi:{c}" for c in countries]
    cols += [f"q:{b}" for b in BLOCK_NAMES]
    cols += [f"r:{b}" for b in BLOCK_NAMES]
    if store_random_effects:
        cols += [f"psi:{h}:{lab}" for h in range(spec.H) for lab in labels]
        cols += [f"zeta:{c}:{lab}" for c in countries for lab in labels]
    return cols


def state_row(state: ParameterState, store_random_effects: bool) -> np.ndarray:
    parts = [
        state.gamma,
        [state.sigma2],
        state.lam,
        state.chi,
        state.q,
        state.r,
    ]
    if store_random_effects:
        parts += [state.psi.ravel(), state.zeta.ravel()]
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


@dataclass
class DrawStore:
    spec: ModelSpec
    matrix: np.ndarray  # (n_draws, n_columns)
    store_random_effects: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float).reshape(-1, self._width())

    def _width(self) -> int:
        s = self.spec
        w = s.L + 1 + s.H + s.G + 6
        return w + (s.H + s.G) * s.L if self.store_random_effects else w

    @property
    def n_draws(self) -> int:
        return self.matrix.shape[0]

    @property
    def countries(self) -> list[str]:
        return self.meta.get("countries") or [str(g) for g in range(self.spec.G)]

    def _slice(self, start: int, width: int) -> np.ndarray:
        return self.matrix[:, start : start + width]

    @property
    def gamma(self) -> np.ndarray:
        return self._slice(0, self.spec.L)

    @property
    def sigma2(self) -> np.ndarray:
        return self.matrix[:, self.spec.L]

    @property
    def lam(self) -> np.ndarray:
        return self._slice(self.spec.L + 1, self.spec.H)

    @property
    def chi(self) -> np.ndarray:
        s = self.spec
        return self._slice(s.L + 1 + s.H, s.G)

    @property
    def q(self) -> np.ndarray:
        s = self.spec
        return self._slice(s.L + 1 + s.H + s.G, 3)

    @property
    def r(self) -> np.ndarray:
        s = self.spec
        return self._slice(s.L + 4 + s.H + s.G, 3)

    def _require_effects(self, what: str):
        if not self.store_random_effects:
            raise ValueError(f"{what} draws were not stored (run with store_random_effects)")

    @property
    def psi(self) -> np.ndarray:
        self._require_effects("psi")
        s = self.spec
        return self._slice(s.L + 7 + s.H + s.G, s.H * s.L).reshape(-1, s.H, s.L)

    @property
    def zeta(self) -> np.ndarray:
        self._require_effects("zeta")
        s = self.spec
        start = s.L + 7 + s.H + s.G + s.H * s.L
        return self._slice(start, s.G * s.L).reshape(-1, s.G, s.L)

    @property
    def composite_variance(self) -> np.ndarray:
        """Per-draw identified error variances sigma2 / (lam[h] chi[g]), shape (n, G, H)."""
        return self.sigma2[:, None, None] / (self.chi[:, :, None] * self.lam[:, None, :])

    def columns(self) -> list[str]:
        return column_names(self.spec, self.store_random_effects, self.countries)

    def state(self, i: int) -> ParameterState:
        s = self.spec
        return ParameterState(
            gamma=self.gamma[i].copy(),
            psi=self.psi[i].copy() if self.store_random_effects else np.zeros((s.H, s.L)),
            zeta=self.zeta[i].copy() if self.store_random_effects else np.zeros((s.G, s.L)),
            sigma2=float(self.sigma2[i]),
            lam=self.lam[i].copy(),
            chi=self.chi[i].copy(),
            q=self.q[i].copy(),
            r=self.r[i].copy(),
        )

    def header(self) -> dict:
        return {
            "format": STORE_FORMAT,
            "dtype": "<f8",
            "n_draws": self.n_draws,
            "n_columns": self.matrix.shape[1],
            "store_random_effects": self.store_random_effects,
            "spec": self.spec.to_dict(),
            "layout": [list(x) for x in self.spec.layout()],
            "columns": self.columns(),
            **{k: v for k, v in self.meta.items() if k not in ("countries",)},
            "countries": self.countries,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.matrix.astype("<f8").tofile(directory / BIN_NAME)
        (directory / HEADER_NAME).write_text(json.dumps(self.header(), indent=2), encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory) -> "DrawStore":
        directory = Path(directory)
        hdr_path = directory / HEADER_NAME
        if not hdr_path.exists():
            raise FileNotFoundError(f"no draw store at {directory}")
        hdr = json.loads(hdr_path.read_text(encoding="utf-8"))
        if hdr.get("format") != STORE_FORMAT:
            raise ValueError(f"unsupported draw store format {hdr.get('format')}")
        raw = np.fromfile(directory / BIN_NAME, dtype="<f8")
        ncol = hdr["n_columns"]
        if raw.size != hdr["n_draws"] * ncol:
            raise ValueError(f"{directory}: draws.bin holds {raw.size} values, header expects {hdr['n_draws']}x{ncol}")
        meta = {k: v for k, v in hdr.items() if k not in ("format", "dtype", "n_draws", "n_columns", "spec",
                                                          "layout", "columns", "store_random_effects")}
        return cls(
            spec=ModelSpec.from_dict(hdr["spec"]),
            matrix=raw.reshape(hdr["n_draws"], ncol),
            store_random_effects=hdr["store_random_effects"],
            meta=meta,
        )


class DrawWriter:
    """Accumulates draws, optionally streaming them to ``directory`` as they arrive."""

    def __init__(self, spec: ModelSpec, store_random_effects: bool = True, directory=None, meta=None,
                 flush_every: int = 100):
        self.spec = spec
        self.store_random_effects = store_random_effects
        self.meta = dict(meta or {})
        self.rows: list[np.ndarray] = []
        self.directory = Path(directory) if directory is not None else None
        self.flush_every = flush_every
        self._pending: list[np.ndarray] = []
        self._fh = None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._fh = (self.directory / BIN_NAME).open("wb")

    def append(self, state: ParameterState) -> None:
        row = state_row(state, self.store_random_effects)
        self.rows.append(row)
        if self._fh is not None:
            self._pending.append(row)
            if len(self._pending) >= self.flush_every:
                self._flush()

    def _flush(self) -> None:
        if self._pending:
            np.asarray(self._pending, dtype="<f8").tofile(self._fh)
            self._fh.flush()
            self._pending = []

    def finish(self) -> DrawStore:
        width = len(column_names(self.spec, self.store_random_effects))
        matrix = np.asarray(self.rows, dtype=float).reshape(-1, width)
        store = DrawStore(self.spec, matrix, self.store_random_effects, self.meta)
        if self._fh is not None:
            self._flush()
            self._fh.close()
            self._fh = None
            (self.directory / HEADER_NAME).write_text(json.dumps(store.header(), indent=2), encoding="utf-8")
        return store
