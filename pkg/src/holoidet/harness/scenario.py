"""Scenario configuration and seed derivation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from holoidet.channel import SPEED_OF_LIGHT
from holoidet.errors import InvalidArgumentError

SCHEMES = ("proposed", "fpa", "rotation_only", "translation_only", "ls_sensing", "perfect_csi", "los_only")

_MASK64 = (1 << 64) - 1


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def splitmix64(x: int) -> int:
    """One step of the splitmix64 generator (finaliser on ``x + golden``)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trial_seed(master: int, trial: int) -> int:
    """Seed of trial ``trial``: ``splitmix64(splitmix64(master) ^ trial)``."""
    return splitmix64(splitmix64(master & _MASK64) ^ (trial & _MASK64))


@dataclass(frozen=True)
class Scenario:
    """All knobs of one simulated deployment.

    Powers are in dBm and EH constants in mW at this interface; the
    ``*_w`` properties convert to watts. ``None`` spacings default to half a
    wavelength.
    """

    carrier_hz: float = 30e9
    mx: int = 16
    my: int = 16
    spacing: float | None = None
    n_feeds: int = 1
    n_surfaces: int = 3
    n_slots: int = 20
    slot_radius: float = 1.0
    p_tx_dbm: float = 40.0
    rician_k_db: float = 10.0
    noise_dbm: float = -100.0
    cov_noise_dbm: float = -50.0
    n_nlos: int = 3
    path_loss_exponent: float = 2.0
    rx_radius_min: float = 5.0
    rx_radius_max: float = 25.0
    rx_height: float = -2.0
    mask_mode: str = "position"
    eta: float = 1.0
    refractive: float = 3.0
    feed_min_distance: float | None = None
    d_min: float = 0.25
    sense_nx: int = 32
    sense_ny: int = 32
    sense_spacing: float | None = None
    sense_power_dbm: float = 10.0
    sense_noise_dbm: float = -100.0
    ref_power_factor: float = 1e6
    sigma1: float = 0.5
    fft_pad: int = 4
    bin_mapping: str = "dft"
    ls_snapshots: int = 8
    ls_grid: int = 128
    eh_xi: float = 274.0
    eh_nu: float = 0.29
    eh_e0_mw: float = 0.064
    eh_em_mw: float = 24.0
    r0: float = 1.0
    trials: int = 50
    seed: int = 2026
    scheme: str = "proposed"
    rmse_injection: float | None = None
    csi_noise_var: float = 0.0
    apply_overhead: bool = False
    coherence_time: float = 120.0
    pilot_alpha: float = 0.32
    pilot_blocks: int | None = None
    align_mode: str = "max_gain"
    feed_mode: str = "optimized"
    search_coarse: int = 41
    search_restarts: int = 12
    search_step: float = 1e-3
    search_seed: int = 0
    eps: float = 1e-4
    max_outer: int = 20
    max_inner: int = 100

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgumentError(f"unknown scheme {self.scheme!r}; choose from {', '.join(SCHEMES)}")
        if self.n_surfaces < 1 or self.n_slots < self.n_surfaces:
            raise InvalidArgumentError("need at least one surface and one slot per surface")
        if self.mask_mode not in ("position", "normal"):
            raise InvalidArgumentError("mask_mode must be 'position' or 'normal'")
        if self.align_mode not in ("max_gain", "normal"):
            raise InvalidArgumentError("align_mode must be 'max_gain' or 'normal'")
        if self.feed_mode not in ("optimized", "center"):
            raise InvalidArgumentError("feed_mode must be 'optimized' or 'center'")
        if self.bin_mapping not in ("dft", "literal"):
            raise InvalidArgumentError("bin_mapping must be 'dft' or 'literal'")
        if self.trials < 1:
            raise InvalidArgumentError("trials must be positive")

    # derived quantities
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def element_spacing(self) -> float:
        return self.wavelength / 2.0 if self.spacing is None else self.spacing

    @property
    def sensing_spacing(self) -> float:
        return self.wavelength / 2.0 if self.sense_spacing is None else self.sense_spacing

    @property
    def n_receivers(self) -> int:
        return self.n_surfaces

    @property
    def p_tx_w(self) -> float:
        return dbm_to_watt(self.p_tx_dbm)

    @property
    def noise_w(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    @property
    def cov_noise_w(self) -> float:
        return dbm_to_watt(self.cov_noise_dbm)

    @property
    def sense_power_w(self) -> float:
        return dbm_to_watt(self.sense_power_dbm)

    @property
    def sense_noise_w(self) -> float:
        return dbm_to_watt(self.sense_noise_dbm)

    @property
    def paths_per_receiver(self) -> int:
        return 1 + self.n_nlos

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def full_scale(self) -> "Scenario":
        return self.replace(mx=32, my=32, n_slots=50)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in data:
                kwargs[f.name] = _coerce(f.name, data[f.name], f.default)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib as toml_reader
            except ImportError:  # Python < 3.11
                try:
                    import tomli as toml_reader
                except ImportError as exc:
                    raise InvalidArgumentError("TOML scenarios need Python 3.11+ or the tomli package") from exc
            data = toml_reader.loads(text)
        else:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"scenario file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidArgumentError("scenario file must hold a key-value mapping")
        return cls.from_dict(data)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_OPTIONAL_INTS = {"pilot_blocks"}


def _coerce(name, value, default):
    if value is None:
        return None
    if name in _OPTIONAL_INTS:
        default = 0
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidArgumentError(f"{name} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise InvalidArgumentError(f"{name} must be an integer")
        return int(value)
    if isinstance(default, float) or default is None:
        if isinstance(value, str):
            raise InvalidArgumentError(f"{name} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidArgumentError(f"{name} must be a string")
        return value
    return value
