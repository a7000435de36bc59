"""Parametric geometric channel model.

One realization consists of the direct BS-user links, the BS-tile matrices,
and the tile-user vectors. IRS-side links are Rician (line-of-sight steering
component plus i.i.d. complex Gaussian scatter), the blocked direct links are
Rayleigh with an extra shadowing attenuation, and large-scale gain follows a
log-distance law referenced to free space at 1 m.

Conventions used repo-wide:
  * all planar arrays (BS and tiles) lie in the y-z plane with broadside +x;
    a unit propagation direction d gives steering phases
    2*pi*spacing*(p*d_y + q*d_z) for the element in row p, column q
    (equivalently u = sin(az)cos(el), v = sin(el));
  * elements are flattened row-major, index = p * n_z + q;
  * the effective per-tile channel is the column vector h = (g^H Phi F)^H.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .scenario import ScenarioConfig, derived_quantities, validate_config

__all__ = [
    "GeometryError",
    "ChannelSet",
    "grid_factor",
    "steering_vector",
    "path_gain",
    "synthesize_channels",
    "effective_tile_channel",
    "composite_channel",
    "save_channels",
    "load_channels",
]

SPEED_OF_LIGHT = 299_792_458.0


class GeometryError(ValueError):
    """Degenerate geometry (coincident nodes, zero distances)."""


def grid_factor(n: int) -> tuple[int, int]:
    """Factor n into the most square (n_y, n_z) grid with n_y >= n_z."""
    if n < 1:
        raise ValueError("grid size must be >= 1")
    best = (n, 1)
    for nz in range(1, int(math.isqrt(n)) + 1):
        if n % nz == 0:
            best = (n // nz, nz)
    return best


def _steering_uv(grid: tuple[int, int], spacing: float, u: float, v: float) -> np.ndarray:
    n_y, n_z = grid
    p = np.arange(n_y)[:, None]
    q = np.arange(n_z)[None, :]
    phase = 2.0 * math.pi * spacing * (p * u + q * v)
    return np.exp(1j * phase).ravel()


def steering_vector(grid: tuple[int, int], spacing: float, azimuth: float, elevation: float) -> np.ndarray:
    """Unit-modulus steering vector of a planar array toward (azimuth, elevation)."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    u = math.sin(azimuth) * math.cos(elevation)
    v = math.sin(elevation)
    return _steering_uv(grid, spacing, u, v)


def _steering_toward(grid: tuple[int, int], spacing: float, direction: np.ndarray) -> np.ndarray:
    """Steering vector along a unit direction (uses its y and z components)."""
    return _steering_uv(grid, spacing, float(direction[1]), float(direction[2]))


def path_gain(distance_m: float, f_c_hz: float, exponent: float, extra_atten_db: float = 0.0) -> float:
    """Amplitude gain of a log-distance pathloss referenced to 1 m free space."""
    if distance_m <= 0:
        raise GeometryError(f"distance must be positive, got {distance_m}")
    pl_ref = 20.0 * math.log10(4.0 * math.pi * f_c_hz / SPEED_OF_LIGHT)
    pl_db = pl_ref + 10.0 * exponent * math.log10(distance_m) + extra_atten_db
    return 10.0 ** (-pl_db / 20.0)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization.

    v[k]        direct BS-user vector, length N_T (includes blockage loss)
    F[t]        BS-tile matrix, Q x N_T
    g[t, k]     tile-user vector, length Q
    h_eff       optional (T_bar, M, K, N_T) effective channels for the
                preselected online codewords only
    h_eff_words the (reflection index, wavefront index) pair per online slot
    """

    v: np.ndarray
    F: np.ndarray
    g: np.ndarray
    tile_positions: np.ndarray
    user_traffic_type: tuple[str, ...]
    seed: int
    h_eff: np.ndarray | None = None
    h_eff_words: tuple[tuple[int, int], ...] | None = None

    @property
    def num_tiles(self) -> int:
        return self.F.shape[0]

    @property
    def num_users(self) -> int:
        return self.v.shape[0]

    @property
    def num_online_words(self) -> int:
        if self.h_eff is None:
            raise ValueError("effective channels have not been attached yet")
        return self.h_eff.shape[1]

    def with_effective(self, h_eff: np.ndarray, words: tuple[tuple[int, int], ...]) -> "ChannelSet":
        return replace(self, h_eff=h_eff, h_eff_words=tuple(words))


def _tile_positions(cfg: ScenarioConfig) -> np.ndarray:
    """Tile centers: each IRS lays its tiles side by side along the y axis."""
    lam = SPEED_OF_LIGHT / cfg.carrier_frequency_hz
    q_y = cfg.tile_grid[0]
    width = q_y * cfg.element_spacing * lam
    tiles = []
    for irs in cfg.irs_positions:
        base = np.asarray(irs, dtype=float)
        for t in range(cfg.tiles_per_irs):
            off = (t - (cfg.tiles_per_irs - 1) / 2.0) * width
            tiles.append(base + np.array([0.0, off, 0.0]))
    return np.asarray(tiles)


def _unit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    d = dst - src
    dist = float(np.linalg.norm(d))
    if dist < 1e-9:
        raise GeometryError(f"coincident positions {src} and {dst}")
    return d / dist, dist


def synthesize_channels(cfg: ScenarioConfig, seed: int) -> ChannelSet:
    """Draw one channel realization; deterministic for a given (cfg, seed)."""
    validate_config(cfg)
    rng = np.random.default_rng(seed)
    n_t = cfg.num_bs_antennas
    q = cfg.tile_elements
    k_users = cfg.num_users
    lam = SPEED_OF_LIGHT / cfg.carrier_frequency_hz
    kappa = 10.0 ** (cfg.rician_k_db / 10.0)
    los_w = math.sqrt(kappa / (1.0 + kappa))
    nlos_w = math.sqrt(1.0 / (1.0 + kappa))
    bs = np.asarray(cfg.bs_position, dtype=float)
    users = np.asarray(cfg.user_positions, dtype=float)
    tiles = _tile_positions(cfg)
    bs_grid = grid_factor(n_t)
    tile_grid = cfg.tile_grid

    def scatter(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

    # direct links: Rayleigh, blocked by the extra shadowing attenuation
    v = np.empty((k_users, n_t), dtype=complex)
    for k in range(k_users):
        _, dist = _unit(bs, users[k])
        amp = path_gain(dist, cfg.carrier_frequency_hz, cfg.pathloss_exponent_direct,
                        cfg.direct_attenuation_db)
        v[k] = amp * scatter(n_t)

    t_bar = tiles.shape[0]
    F = np.empty((t_bar, q, n_t), dtype=complex)
    g = np.empty((t_bar, k_users, q), dtype=complex)
    for t in range(t_bar):
        d_in, dist = _unit(tiles[t], bs)  # arrival direction at the tile
        d_out, _ = _unit(bs, tiles[t])  # departure direction at the BS
        amp = path_gain(dist, cfg.carrier_frequency_hz, cfg.pathloss_exponent_irs)
        los = np.outer(
            _steering_toward(tile_grid, cfg.element_spacing, d_in),
            _steering_toward(bs_grid, cfg.element_spacing, d_out).conj(),
        ) * np.exp(-2j * math.pi * dist / lam)
        F[t] = amp * (los_w * los + nlos_w * scatter(q, n_t))
        for k in range(k_users):
            d_u, dist_u = _unit(tiles[t], users[k])
            amp_u = path_gain(dist_u, cfg.carrier_frequency_hz, cfg.pathloss_exponent_irs)
            los_u = _steering_toward(tile_grid, cfg.element_spacing, d_u) \
                * np.exp(-2j * math.pi * dist_u / lam)
            g[t, k] = amp_u * (los_w * los_u + nlos_w * scatter(q))

    types = tuple(["embb"] * cfg.num_embb + ["urllc"] * cfg.num_urllc)
    return ChannelSet(v=v, F=F, g=g, tile_positions=tiles,
                      user_traffic_type=types, seed=int(seed))


def effective_tile_channel(g: np.ndarray, phi: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Effective channel column h = (g^H diag(phi) F)^H of one tile."""
    if g.shape[0] != phi.shape[0] or F.shape[0] != g.shape[0]:
        raise ValueError(
            f"dimension mismatch: g {g.shape}, phi {phi.shape}, F {F.shape}"
        )
    row = (np.conj(g) * phi) @ F  # g^H Phi F, shape (N_T,)
    return np.conj(row)


def composite_channel(v: np.ndarray, selection, h_eff: np.ndarray) -> np.ndarray:
    """Per-user composite channel v_k + sum_t h_eff[t, m_t, k] at a binary selection.

    The direct link enters exactly once. Requires one-hot selection rows;
    relaxed selections must go through the quadratic expansion instead.
    """
    b = np.asarray(selection.b if hasattr(selection, "b") else selection, dtype=float)
    t_bar = b.shape[0]
    if t_bar == 0:
        return v.copy()
    one_hot = (np.abs(b.sum(axis=1) - 1.0) < 1e-9) & (
        np.abs(b - np.rint(b)).max(axis=1) < 1e-9
    )
    if not bool(np.all(one_hot)):
        raise ValueError(
            "composite_channel requires one-hot selection rows; "
            "use the relaxed quadratic expansion for fractional selections"
        )
    chosen = np.argmax(b, axis=1)
    out = v.copy()
    for t in range(t_bar):
        out += h_eff[t, chosen[t]]
    return out


def save_channels(chs: ChannelSet, path) -> None:
    """Dump a realization so runs can be replayed without re-synthesis."""
    data = dict(v=chs.v, F=chs.F, g=chs.g, tile_positions=chs.tile_positions,
                traffic=np.array(chs.user_traffic_type), seed=np.array(chs.seed))
    if chs.h_eff is not None:
        data["h_eff"] = chs.h_eff
        data["h_eff_words"] = np.array(chs.h_eff_words, dtype=int)
    np.savez_compressed(path, **data)


def load_channels(path) -> ChannelSet:
    with np.load(path, allow_pickle=False) as z:
        h_eff = z["h_eff"] if "h_eff" in z.files else None
        words = (
            tuple((int(a), int(b)) for a, b in z["h_eff_words"])
            if "h_eff_words" in z.files
            else None
        )
        return ChannelSet(
            v=z["v"], F=z["F"], g=z["g"], tile_positions=z["tile_positions"],
            user_traffic_type=tuple(str(s) for s in z["traffic"]),
            seed=int(z["seed"]), h_eff=h_eff, h_eff_words=words,
        )
