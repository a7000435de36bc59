"""Offline phase-shift codebooks and per-user online preselection.

The reflection codebook holds anomalous-reflection steering words on a
uniform angular grid: each word cancels the phase profile of the incident
BS link and re-steers toward one grid direction. A small wavefront codebook
of global phase offsets lets signals from different tiles combine
constructively. A combined codeword is a reflection word times a wavefront
phase, so its channel norm does not depend on the wavefront index; users
therefore rank reflection words only, and the online set is the union of
the per-user picks crossed with all wavefront phases.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSet, _steering_toward, _steering_uv, _unit, effective_tile_channel, grid_factor
from .scenario import ScenarioConfig

__all__ = [
    "Codebook",
    "build_reflection_codebook",
    "build_wavefront_codebook",
    "reflection_channel_table",
    "preselect_codewords",
    "prepare_codebook_and_channels",
    "export_codebook_csv",
]


@dataclass(frozen=True)
class Codebook:
    """Reflection words, wavefront phases, and the online selection state."""

    reflection_words: np.ndarray  # (M_T, Q) unit modulus
    wavefront_phases: np.ndarray  # (B0,) in [0, 2*pi)
    direction_grid: tuple[int, int]
    per_user_reflection: tuple[tuple[int, ...], ...] | None = None
    online_words: tuple[tuple[int, int], ...] | None = None  # (reflection, wavefront)

    @property
    def num_reflection(self) -> int:
        return self.reflection_words.shape[0]

    @property
    def num_wavefront(self) -> int:
        return self.wavefront_phases.shape[0]

    @property
    def num_online(self) -> int:
        if self.online_words is None:
            raise ValueError("preselection has not been run")
        return len(self.online_words)

    def combined_word(self, reflection_idx: int, wavefront_idx: int) -> np.ndarray:
        return self.reflection_words[reflection_idx] * np.exp(
            1j * self.wavefront_phases[wavefront_idx]
        )


def build_reflection_codebook(
    q_grid: tuple[int, int],
    m_t: int,
    incident_direction: np.ndarray,
    spacing: float = 0.5,
) -> tuple[np.ndarray, tuple[int, int]]:
    """Steering words over a uniform (u, v) = (sin az cos el, sin el) grid.

    Word m first cancels the incident phase profile, then steers the
    reflection toward grid direction m. Returns the (M_T, Q) array and the
    (M_y, M_z) direction grid actually used.
    """
    m_y, m_z = grid_factor(m_t)
    if m_z == 1 and m_t > 3:
        warnings.warn(
            f"reflection codebook size {m_t} only factors as {m_y}x{m_z}; "
            "directions degenerate to a line",
            stacklevel=2,
        )
    a_inc = _steering_toward(q_grid, spacing, np.asarray(incident_direction, dtype=float))
    u_axis = (2.0 * np.arange(m_y) + 1.0 - m_y) / m_y
    v_axis = (2.0 * np.arange(m_z) + 1.0 - m_z) / m_z
    words = np.empty((m_t, q_grid[0] * q_grid[1]), dtype=complex)
    m = 0
    for u in u_axis:
        for v in v_axis:
            words[m] = _steering_uv(q_grid, spacing, float(u), float(v)) * np.conj(a_inc)
            m += 1
    return words, (m_y, m_z)


def build_wavefront_codebook(b0: int) -> np.ndarray:
    """Uniformly quantized global phases {2*pi*i/B0}."""
    if b0 < 1:
        raise ValueError("wavefront codebook size must be >= 1")
    return 2.0 * math.pi * np.arange(b0) / b0


def reflection_channel_table(chs: ChannelSet, words: np.ndarray) -> np.ndarray:
    """Effective channels for every (tile, reflection word, user).

    Returns (T_bar, M_T, K, N_T); column convention of effective_tile_channel.
    """
    t_bar, k_users = chs.g.shape[0], chs.g.shape[1]
    m_t = words.shape[0]
    n_t = chs.F.shape[2]
    out = np.empty((t_bar, m_t, k_users, n_t), dtype=complex)
    for t in range(t_bar):
        # rows of (g^H Phi F) for all words and users at once
        rows = np.einsum("kq,mq,qn->mkn", np.conj(chs.g[t]), words, chs.F[t])
        out[t] = np.conj(rows)
    return out


def preselect_codewords(
    chs: ChannelSet,
    codebook: Codebook,
    m_s: int,
    aggregate: str = "sum",
) -> tuple[tuple[tuple[int, ...], ...], tuple[tuple[int, int], ...]]:
    """Pick the M_s strongest reflection words per user, form the online set.

    Strength of word m for user k is the squared channel norm aggregated
    over tiles ("sum" or "max"). Every tile's own argmax word for that user
    is force-included so the per-tile best option is never pruned; the list
    only exceeds M_s if the per-tile argmaxes alone do. The online set is
    the deduplicated union across users, crossed with all wavefront phases.
    """
    if aggregate not in ("sum", "max"):
        raise ValueError("aggregate must be 'sum' or 'max'")
    h_all = reflection_channel_table(chs, codebook.reflection_words)
    norms = np.sum(np.abs(h_all) ** 2, axis=3)  # (T_bar, M_T, K)
    score = norms.sum(axis=0) if aggregate == "sum" else norms.max(axis=0)  # (M_T, K)
    m_t, k_users = score.shape
    m_s_eff = min(m_s, m_t)
    per_user = []
    for k in range(k_users):
        forced = {int(np.argmax(norms[t, :, k])) for t in range(norms.shape[0])}
        ranked = np.argsort(-score[:, k], kind="stable")
        picks = sorted(forced)
        for m in ranked:
            if len(picks) >= max(m_s_eff, len(forced)):
                break
            if int(m) not in forced:
                picks.append(int(m))
        per_user.append(tuple(sorted(picks)))
    union = sorted({m for picks in per_user for m in picks})
    online = tuple(
        (r, w) for r in union for w in range(codebook.num_wavefront)
    )
    return tuple(per_user), online


def attach_effective_channels(chs: ChannelSet, codebook: Codebook) -> ChannelSet:
    """Fill the channel set with effective channels for the online words."""
    if codebook.online_words is None:
        raise ValueError("run preselection before attaching effective channels")
    h_all = reflection_channel_table(chs, codebook.reflection_words)
    cols = []
    for r, w in codebook.online_words:
        cols.append(h_all[:, r] * np.exp(-1j * codebook.wavefront_phases[w]))
    h_eff = np.stack(cols, axis=1)  # (T_bar, M, K, N_T)
    return chs.with_effective(h_eff, codebook.online_words)


def prepare_codebook_and_channels(
    cfg: ScenarioConfig, chs: ChannelSet
) -> tuple[Codebook, ChannelSet]:
    """Build codebooks, preselect per user, attach online effective channels."""
    bs = np.asarray(cfg.bs_position, dtype=float)
    # identical reflection codebooks for all tiles; incidence taken from the
    # first tile of the first IRS (tiles of one IRS see the BS almost alike)
    d_in, _ = _unit(chs.tile_positions[0], bs)
    words, grid = build_reflection_codebook(
        cfg.tile_grid, cfg.reflection_codebook_size, d_in, cfg.element_spacing
    )
    cb = Codebook(
        reflection_words=words,
        wavefront_phases=build_wavefront_codebook(cfg.wavefront_codebook_size),
        direction_grid=grid,
    )
    per_user, online = preselect_codewords(
        chs, cb, cfg.preselect_per_user, cfg.preselect_aggregate
    )
    cb = replace(cb, per_user_reflection=per_user, online_words=online)
    return cb, attach_effective_channels(chs, cb)


def export_codebook_csv(codebook: Codebook, path) -> None:
    """Reflection words as rows of phases, for offline inspection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        q = codebook.reflection_words.shape[1]
        writer.writerow(["index", "grid_y", "grid_z"] + [f"phase_{i}" for i in range(q)])
        m_y, m_z = codebook.direction_grid
        for m, word in enumerate(codebook.reflection_words):
            writer.writerow(
                [m, m // m_z, m % m_z] + [f"{p:.9f}" for p in np.angle(word)]
            )
