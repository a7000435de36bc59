"""Scenario configuration and URLLC active-set bookkeeping.

Holds every physical, frame-timing, and algorithmic parameter of the
IRS-assisted eMBB/URLLC downlink, enumerates the possible sets of
simultaneously active URLLC users, and derives the secondary quantities
(noise power, blocklength, online codebook size) used by the optimization
modules. Configurations are immutable and safe to share across workers.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

__all__ = [
    "ConfigError",
    "CapacityError",
    "ScenarioConfig",
    "ActiveSetTable",
    "DerivedQuantities",
    "enumerate_active_sets",
    "active_sets_from_config",
    "derived_quantities",
    "validate_config",
    "load_config",
    "save_config",
    "desk_config",
    "table_config",
]


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class CapacityError(ValueError):
    """A requested enumeration or search exceeds the configured size cap."""


Position = tuple[float, float, float]


def _circle_positions(k: int, radius: float = 10.0, height: float = 1.5) -> tuple[Position, ...]:
    """Default user layout: evenly spaced on a circle around the origin."""
    if k == 1:
        return ((radius, 0.0, height),)
    ang = 2.0 * math.pi * np.arange(k) / k
    return tuple((radius * math.cos(a), radius * math.sin(a), height) for a in ang)


def _as_tuple3(p) -> Position:
    t = tuple(float(x) for x in p)
    if len(t) != 3:
        raise ConfigError(f"positions must be 3-D, got {p!r}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class ScenarioConfig:
    """All parameters of one downlink scenario.

    Fields default to the reference full-scale setup; ``desk_config()``
    returns the shrunk configuration used for fast validation runs.
    Frame-level fields (frame duration, slots per frame, mini-slots per
    slot) are bookkeeping only; allocation is computed once per time slot.
    """

    # array / population sizes
    num_bs_antennas: int = 6
    num_embb: int = 2
    num_urllc: int = 2
    num_irs: int = 2
    tiles_per_irs: int = 4
    tile_grid: tuple[int, int] = (12, 12)  # (Q_y, Q_z) elements per tile
    reflection_codebook_size: int = 144
    wavefront_codebook_size: int = 3
    preselect_per_user: int = 2

    # radio parameters
    carrier_frequency_hz: float = 3.75e9
    bandwidth_hz: float = 1.2e6
    noise_density_dbm_hz: float = -174.0
    max_power_w: float = 10.0 ** (-0.2)  # 28 dBm
    element_spacing: float = 0.5  # in wavelengths, d_y = d_z

    # frame timing
    minislot_duration_s: float = 70e-6
    timeslot_duration_s: float = 0.5e-3
    minislots_per_slot: int = 7
    frame_duration_s: float = 10e-3
    slots_per_frame: int = 20

    # URLLC traffic model
    urllc_bits: tuple[float, ...] | float = 180.0
    urllc_error_prob: tuple[float, ...] | float = 1e-6
    active_set_probabilities: str | tuple[float, ...] = "uniform"
    max_urllc_for_enumeration: int = 6

    # propagation model
    direct_attenuation_db: float = 25.0
    pathloss_exponent_direct: float = 3.0
    pathloss_exponent_irs: float = 2.0
    rician_k_db: float = 10.0
    bs_position: Position = (-50.0, 0.0, 2.0)
    irs_positions: tuple[Position, ...] = ((-30.0, 30.0, 6.0), (-30.0, -30.0, 6.0))
    user_positions: tuple[Position, ...] | None = None

    # algorithm knobs
    rng_seed: int = 0
    solver_tol: float = 1e-7
    sca_tol: float = 1e-4
    ao_tol: float = 1e-4
    i1_max: int = 25
    i2_max: int = 25
    a_max: int = 25
    preselect_aggregate: str = "sum"  # "sum" or "max" over tiles
    codeword_init: str = "strongest"  # or "random"
    outage_policy: str = "zero_when_any_feasible"

    def __post_init__(self):
        # normalize sequences to tuples so configs hash and pickle cleanly
        u = self.num_urllc
        bits = self.urllc_bits
        if not isinstance(bits, tuple):
            bits = (float(bits),) * u if not isinstance(bits, (list, np.ndarray)) else tuple(float(b) for b in bits)
        object.__setattr__(self, "urllc_bits", bits)
        eps = self.urllc_error_prob
        if not isinstance(eps, tuple):
            eps = (float(eps),) * u if not isinstance(eps, (list, np.ndarray)) else tuple(float(e) for e in eps)
        object.__setattr__(self, "urllc_error_prob", eps)
        probs = self.active_set_probabilities
        if not isinstance(probs, str) and not isinstance(probs, tuple):
            probs = tuple(float(p) for p in probs)
        object.__setattr__(self, "active_set_probabilities", probs)
        object.__setattr__(self, "tile_grid", tuple(int(x) for x in self.tile_grid))
        object.__setattr__(self, "bs_position", _as_tuple3(self.bs_position))
        object.__setattr__(self, "irs_positions", tuple(_as_tuple3(p) for p in self.irs_positions))
        users = self.user_positions
        if users is None:
            users = _circle_positions(self.num_embb + self.num_urllc)
        else:
            users = tuple(_as_tuple3(p) for p in users)
        object.__setattr__(self, "user_positions", users)

    # convenience views -------------------------------------------------
    @property
    def num_users(self) -> int:
        return self.num_embb + self.num_urllc

    @property
    def num_tiles_total(self) -> int:
        return self.num_irs * self.tiles_per_irs

    @property
    def tile_elements(self) -> int:
        return self.tile_grid[0] * self.tile_grid[1]

    def urllc_bits_list(self) -> tuple[float, ...]:
        return self.urllc_bits  # type: ignore[return-value]

    def urllc_error_prob_list(self) -> tuple[float, ...]:
        return self.urllc_error_prob  # type: ignore[return-value]


@dataclass(frozen=True)
class ActiveSetTable:
    """All combinations of simultaneously active URLLC users.

    Sets are 0-based index tuples in canonical order (by cardinality, then
    lexicographic); set 0 is always empty ("no URLLC user active").
    """

    sets: tuple[tuple[int, ...], ...]
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))

    @property
    def num_sets(self) -> int:
        return len(self.sets)

    def is_active(self, urllc_idx: int, set_idx: int) -> bool:
        return urllc_idx in self.sets[set_idx]


@dataclass(frozen=True)
class DerivedQuantities:
    """Secondary quantities derived from a configuration."""

    n: int  # symbols per mini-slot packet
    sigma2_w: float  # noise power over the full band, watts
    L: int  # number of active URLLC user sets
    T_bar: int  # total number of tiles over all IRSs
    M: int  # nominal online codebook size (upper bound before dedup)


def enumerate_active_sets(
    num_urllc: int,
    probs: str | tuple[float, ...] | list[float] | np.ndarray = "uniform",
    *,
    cap: int = 6,
) -> ActiveSetTable:
    """Enumerate all 2^U subsets of URLLC users with their probabilities.

    The enumeration is capped because every downstream stage scales with
    L = 2^U; exceeding the cap raises instead of truncating.
    """
    if num_urllc < 0:
        raise ConfigError("num_urllc must be nonnegative")
    if num_urllc > cap:
        raise CapacityError(
            f"enumerating 2^{num_urllc} active sets exceeds the cap of 2^{cap}; "
            f"raise max_urllc_for_enumeration explicitly if this is intended"
        )
    users = range(num_urllc)
    sets = []
    for size in range(num_urllc + 1):
        sets.extend(itertools.combinations(users, size))
    L = len(sets)
    if isinstance(probs, str):
        if probs != "uniform":
            raise ConfigError(f"unknown probability spec {probs!r}")
        p = np.full(L, 1.0 / L)
    else:
        p = np.asarray(probs, dtype=float)
        if p.shape != (L,):
            raise ConfigError(f"need {L} set probabilities, got {p.shape}")
        if np.any(p < 0):
            raise ConfigError("set probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ConfigError(f"set probabilities sum to {p.sum():.15f}, expected 1")
    return ActiveSetTable(sets=tuple(sets), probs=p)


def active_sets_from_config(cfg: ScenarioConfig) -> ActiveSetTable:
    return enumerate_active_sets(
        cfg.num_urllc, cfg.active_set_probabilities, cap=cfg.max_urllc_for_enumeration
    )


def derived_quantities(cfg: ScenarioConfig) -> DerivedQuantities:
    """Pure function of the config: blocklength, noise power, set/codebook sizes."""
    n = int(round(cfg.bandwidth_hz * cfg.minislot_duration_s))
    sigma2 = 10.0 ** (
        (cfg.noise_density_dbm_hz + 10.0 * math.log10(cfg.bandwidth_hz) - 30.0) / 10.0
    )
    return DerivedQuantities(
        n=n,
        sigma2_w=sigma2,
        L=2 ** cfg.num_urllc,
        T_bar=cfg.num_tiles_total,
        M=cfg.wavefront_codebook_size * cfg.num_users * cfg.preselect_per_user,
    )


def validate_config(cfg: ScenarioConfig) -> None:
    """Raise ConfigError on any violated invariant."""
    pos_counts = {
        "num_bs_antennas": cfg.num_bs_antennas,
        "num_irs": cfg.num_irs,
        "tiles_per_irs": cfg.tiles_per_irs,
        "reflection_codebook_size": cfg.reflection_codebook_size,
        "wavefront_codebook_size": cfg.wavefront_codebook_size,
        "preselect_per_user": cfg.preselect_per_user,
    }
    for name, val in pos_counts.items():
        if val < 1:
            raise ConfigError(f"{name} must be >= 1, got {val}")
    if cfg.tile_grid[0] < 1 or cfg.tile_grid[1] < 1:
        raise ConfigError(f"tile_grid entries must be >= 1, got {cfg.tile_grid}")
    if cfg.num_embb < 0 or cfg.num_urllc < 0 or cfg.num_users < 1:
        raise ConfigError("need num_embb, num_urllc >= 0 and at least one user")
    if cfg.num_urllc > cfg.max_urllc_for_enumeration:
        raise CapacityError(
            f"num_urllc={cfg.num_urllc} exceeds enumeration cap "
            f"{cfg.max_urllc_for_enumeration}"
        )
    if cfg.max_power_w <= 0:
        raise ConfigError("max_power_w must be positive")
    if cfg.bandwidth_hz <= 0 or cfg.minislot_duration_s <= 0:
        raise ConfigError("bandwidth and mini-slot duration must be positive")
    if derived_quantities(cfg).n < 1:
        raise ConfigError("bandwidth * minislot duration must give at least 1 symbol")
    if len(cfg.urllc_bits_list()) != cfg.num_urllc:
        raise ConfigError("urllc_bits length must match num_urllc")
    if len(cfg.urllc_error_prob_list()) != cfg.num_urllc:
        raise ConfigError("urllc_error_prob length must match num_urllc")
    for b in cfg.urllc_bits_list():
        if b < 0:
            raise ConfigError("urllc_bits must be nonnegative")
    for e in cfg.urllc_error_prob_list():
        if not (0.0 < e < 0.5):
            raise ConfigError(f"urllc_error_prob must lie in (0, 0.5), got {e}")
    if len(cfg.irs_positions) != cfg.num_irs:
        raise ConfigError(
            f"need {cfg.num_irs} IRS positions, got {len(cfg.irs_positions)}"
        )
    if len(cfg.user_positions) != cfg.num_users:  # type: ignore[arg-type]
        raise ConfigError(
            f"need {cfg.num_users} user positions, got {len(cfg.user_positions)}"  # type: ignore[arg-type]
        )
    if cfg.element_spacing <= 0:
        raise ConfigError("element_spacing must be positive")
    if cfg.preselect_aggregate not in ("sum", "max"):
        raise ConfigError("preselect_aggregate must be 'sum' or 'max'")
    if cfg.codeword_init not in ("strongest", "random"):
        raise ConfigError("codeword_init must be 'strongest' or 'random'")
    # probabilities are checked in full by the enumeration itself
    active_sets_from_config(cfg)


# config file handling ---------------------------------------------------

def _config_from_dict(data: dict) -> ScenarioConfig:
    known = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    coerced = dict(data)
    for key in ("irs_positions", "user_positions"):
        if coerced.get(key) is not None:
            coerced[key] = tuple(tuple(p) for p in coerced[key])
    for key in ("urllc_bits", "urllc_error_prob", "active_set_probabilities"):
        if key in coerced and isinstance(coerced[key], list):
            coerced[key] = tuple(coerced[key])
    if "tile_grid" in coerced:
        coerced["tile_grid"] = tuple(coerced["tile_grid"])
    cfg = ScenarioConfig(**coerced)
    validate_config(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    """Load a configuration from a JSON file; missing keys take defaults."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return _config_from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def desk_config(**overrides) -> ScenarioConfig:
    """Shrunk configuration for fast desk-scale runs (ships as desk.json)."""
    data = json.loads(
        resources.files("irsalloc.configs").joinpath("desk.json").read_text()
    )
    data.update(overrides)
    return _config_from_dict(data)


def table_config(**overrides) -> ScenarioConfig:
    """Full-scale reference configuration (the dataclass defaults)."""
    cfg = ScenarioConfig(**overrides)
    validate_config(cfg)
    return cfg
