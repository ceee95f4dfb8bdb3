"""Regressor vectors and per-day design blocks.

Row ``h`` of the block for country ``g`` on day ``t`` is the regressor of the
hour-``h`` observation: ``[1, y lags, covariates with their lags]`` in the
layout of :meth:`ModelSpec.layout`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .config import frequency_mismatch, lag_multiplier
from .data import PanelDataset


class HistoryError(IndexError):
    """Requested observation lacks the lag history its regressor needs."""


@dataclass(frozen=True)
class DesignBlock:
    g: int
    t: int
    Z: np.ndarray  # (H, L)
    y: np.ndarray  # (H,)


@dataclass(frozen=True)
class ObservationIndex:
    g: int
    t: int
    h: int
    offset: int


def build_regressor(data: PanelDataset, g: int, t: int, h: int) -> np.ndarray:
    """Regressor vector of observation ``y[g, t*H + h]`` (t is a 0-based day index)."""
    spec = data.spec
    H = spec.H
    if not (0 <= g < spec.G and 0 <= h < H and t < data.T_tilde):
        raise IndexError(f"observation (g={g}, t={t}, h={h}) outside the panel")
    now = t * H + h
    if now - spec.max_lag_hours < 0 or t < 0:
        raise HistoryError(f"observation (g={g}, t={t}, h={h}) has insufficient lag history")
    z = [1.0]
    z += [data.y[g, now - a] for a in spec.ar_lags]
    for j, cov in enumerate(spec.covariates, start=1):
        step = lag_multiplier(spec, j)
        offset = frequency_mismatch(spec, j, h)
        for b in range(cov.max_lag + 1):
            if j <= spec.n_high:
                z.append(data.x_high[g, t * H + offset - b * step, j - 1])
            else:
                # low-frequency series are indexed by day; offset is 0 and step is H
                z.append(data.x_low[g, (t * H + offset - b * step) // H, j - 1 - spec.n_high])
    return np.asarray(z, dtype=float)


def build_blocks(data: PanelDataset) -> Iterator[DesignBlock]:
    """Lazily yield the design block of every (country, estimation day)."""
    H = data.spec.H
    for g in range(data.spec.G):
        for t in range(data.presample_days, data.T_tilde):
            Z = np.stack([build_regressor(data, g, t, h) for h in range(H)])
            yield DesignBlock(g=g, t=t, Z=Z, y=data.y[g, t * H : (t + 1) * H].copy())


def observation_index(data: PanelDataset) -> Iterator[ObservationIndex]:
    """Enumerate estimation observations in (g, t, h) order with flat offsets."""
    offset = 0
    for g in range(data.spec.G):
        for t in range(data.presample_days, data.T_tilde):
            for h in range(data.spec.H):
                yield ObservationIndex(g, t, h, offset)
                offset += 1


def design_tensor(data: PanelDataset) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized design: ``X`` of shape (G, D, H, L) and ``Y`` of shape (G, D, H).

    ``D`` counts estimation days only; ``X[g, d]`` equals the block of day
    ``presample_days + d``.
    """
    spec = data.spec
    G, H, P = spec.G, spec.H, data.presample_days
    D = data.T_tilde - P
    now = (np.arange(P, data.T_tilde)[:, None] * H + np.arange(H)[None, :])  # (D, H) hour index
    cols = [np.ones((G, D, H))]
    for a in spec.ar_lags:
        cols.append(data.y[:, now - a])
    for j, cov in enumerate(spec.covariates, start=1):
        step = lag_multiplier(spec, j)
        for b in range(cov.max_lag + 1):
            if j <= spec.n_high:
                cols.append(data.x_high[:, now - b * step, j - 1])
            else:
                day = np.arange(P, data.T_tilde) - b
                col = data.x_low[:, day, j - 1 - spec.n_high]
                cols.append(np.broadcast_to(col[:, :, None], (G, D, H)))
    X = np.stack(cols, axis=-1)
    Y = data.y[:, P * H : data.T_tilde * H].reshape(G, D, H)
    return X, Y


def block_prediction(Z: np.ndarray, gamma: np.ndarray, zeta_g: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Stacked-form mean ``Z (gamma + zeta_g) + diag(Z psi')`` of one day block."""
    return Z @ (gamma + zeta_g) + np.einsum("hl,hl->h", Z, psi)


def export_block(block: DesignBlock, labels: list[str], path) -> None:
    """Write a block as CSV (debugging aid)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["hour", "y", *labels])
        for h, row in enumerate(block.Z):
            w.writerow([h, repr(float(block.y[h])), *(repr(float(v)) for v in row)])
