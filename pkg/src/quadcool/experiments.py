"""Measurement protocols: fluorescence scans, reordering statistics, field scans."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.constants import e as E_CHARGE, hbar

from .atomic_model import ELECTRON_G, MU_B, P12_D32_BRANCHING, TWO_PI, LaserBeam, build_ca40_scheme, zeeman_lines
from .internal_dynamics import effective_decay_rate
from .mechanics import BeamGeometry, ForceProfile, beam_profile, force_profile
from .trap_md import CA40_MASS, NoiseModel, TrapConfig, detect_jumps, integrate, thermal_ions

L729, L854, L866, L397 = 729.347e-9, 854.444e-9, 866.452e-9, 396.959e-9
VIOLET = (393, 397)
BASELINE_KEY = 1 << 20
PRECOOL_START_T = 0.1
REGIME_MARGIN = 1.1


@dataclass(frozen=True)
class ScanConfig:
    """One measurement configuration, all quantities in SI base units.

    Frequencies are angular (rad/s); the 729 nm detuning grid is measured
    from the light-shifted resonance.  ``collision_rate`` is per ion.
    """

    geometry: str = "co"
    detuning_start: float = -TWO_PI * 8e6
    detuning_stop: float = TWO_PI * 4e6
    detuning_points: int = 25
    power_729: float = 0.25
    waist_729: float = 50e-6
    power_854: float = 1e-3
    waist_854: float = 280e-6
    detuning_854: float = -TWO_PI * 100e6
    power_866: float = 1e-3
    waist_866: float = 280e-6
    detuning_866: float = 0.0
    bfield: float = 0.0
    bfield_direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    bfield_list: tuple[float, ...] = (0.0, 0.4e-4, 0.8e-4, 1.2e-4, 3e-4)
    omega_z: float = TWO_PI * 0.40e6
    omega_r: float = TWO_PI * 0.95e6
    mass: float = CA40_MASS
    n_ions: int = 4
    dark_index: int | None = None
    dark_mass: float | None = None
    precool: str = "thermal"
    precool_temperature: float = 2e-3
    precool_time: float = 1e-3
    window: float = 0.2
    trials: int = 20
    efficiency: float = 3.6e-4
    seed: int = 0
    recoil: bool = True
    collision_rate: float = 0.05
    collision_energy: float = 0.1 * E_CHARGE
    heating_rate: float = 0.0
    profile_detuning: float | None = None
    p12_d32_branching: float = P12_D32_BRANCHING
    g_s: float = ELECTRON_G

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("efficiency must lie in (0, 1]")
        if self.detuning_points < 1:
            raise ValueError("detuning_points must be >= 1")
        if self.detuning_points > 1 and not self.detuning_stop > self.detuning_start:
            raise ValueError("detuning_stop must exceed detuning_start")
        if self.n_ions < 1:
            raise ValueError("n_ions must be >= 1")
        if self.dark_index is not None and not 0 <= self.dark_index < self.n_ions:
            raise ValueError("dark_index out of range")
        if self.dark_mass is not None and not self.dark_mass > 0:
            raise ValueError("dark_mass must be positive")
        if self.precool not in ("thermal", "397"):
            raise ValueError("precool must be 'thermal' or '397'")
        for name in ("power_729", "power_854", "power_866"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("waist_729", "waist_854", "waist_866", "mass", "omega_z", "omega_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.bfield < 0 or any(b < 0 for b in self.bfield_list):
            raise ValueError("field magnitudes must be non-negative")
        if self.precool_temperature < 0 or self.collision_rate < 0 or self.heating_rate < 0:
            raise ValueError("temperatures and rates must be non-negative")
        BeamGeometry.from_tag(self.geometry)

    @property
    def detunings(self) -> np.ndarray:
        if self.detuning_points == 1:
            return np.array([self.detuning_start])
        return np.linspace(self.detuning_start, self.detuning_stop, self.detuning_points)

    @property
    def trap(self) -> TrapConfig:
        return TrapConfig(self.omega_z, self.omega_r, self.mass)

    @property
    def noise(self) -> NoiseModel:
        return NoiseModel(self.recoil, self.collision_rate, self.collision_energy, self.heating_rate)

    def scheme(self):
        return build_ca40_scheme(self.p12_d32_branching, self.g_s)

    def beams(self) -> list[LaserBeam]:
        return [
            LaserBeam(L729, power=self.power_729, waist=self.waist_729),
            LaserBeam(L854, detuning=self.detuning_854, power=self.power_854, waist=self.waist_854),
            LaserBeam(L866, detuning=self.detuning_866, power=self.power_866, waist=self.waist_866),
        ]

    def bfield_vector(self, magnitude: float | None = None) -> np.ndarray:
        d = np.asarray(self.bfield_direction, dtype=float)
        d = d / np.linalg.norm(d)
        return (self.bfield if magnitude is None else magnitude) * d

    def gamma_eff(self) -> float:
        scheme = self.scheme()
        return effective_decay_rate(self.beams()[1], scheme).gamma

    def shortened(self, window: float) -> "ScanConfig":
        """Same protocol with a shorter window; the collision rate is scaled
        so that the expected number of collisions per window is unchanged."""
        return replace(self, window=window, collision_rate=self.collision_rate * self.window / window)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bfield_direction"] = list(self.bfield_direction)
        d["bfield_list"] = list(self.bfield_list)
        return d


@dataclass(frozen=True)
class ScanResult:
    """Per-detuning fluorescence statistics of one scan."""

    detunings: np.ndarray
    mean_rate: np.ndarray
    std_rate: np.ndarray
    trial_rates: np.ndarray  # (detunings, trials)
    inferred_force: np.ndarray
    jump_fraction: np.ndarray | None
    trial_jumps: np.ndarray | None
    n_bright: int
    efficiency: float
    geometry: str
    config: ScanConfig
    baseline: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.std_rate < 0):
            raise ValueError("std must be non-negative")
        if self.jump_fraction is not None and np.any((self.jump_fraction < 0) | (self.jump_fraction > 1)):
            raise ValueError("jump fraction outside [0, 1]")

    @property
    def peak_rate(self) -> float:
        return float(self.mean_rate.max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["detuning_MHz", "mean_counts_per_s", "std_counts_per_s", "jump_fraction", "inferred_force_N"])
        jf = self.jump_fraction if self.jump_fraction is not None else np.full(self.detunings.size, np.nan)
        for row in zip(self.detunings / TWO_PI / 1e6, self.mean_rate, self.std_rate, jf, self.inferred_force):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def manifest(self) -> dict:
        out = {"config": self.config.to_dict(), "seed": self.config.seed, "geometry": self.geometry,
               "n_bright": self.n_bright, "efficiency": self.efficiency}
        if self.baseline is not None:
            out["baseline"] = self.baseline
        out.update({k: v for k, v in self.metadata.items() if _jsonable(v)})
        return out


def _jsonable(v) -> bool:
    try:
        json.dumps(v)
    except TypeError:
        return False
    return True


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("QUADCOOL_THREADS", "1"))
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def effective_wavenumber(geometry: BeamGeometry) -> float:
    """|k_729 + k_854| for the geometry: momentum per cycle over hbar."""
    return float(np.linalg.norm(TWO_PI / L729 * geometry.k_cool + TWO_PI / L854 * geometry.k_assist))


def velocity_grid(cfg: ScanConfig, detuning: float) -> np.ndarray:
    """Uniform table grid resolving Gamma'/20k and reaching far into the wings."""
    scheme = cfg.scheme()
    beams = cfg.beams()
    eff = effective_decay_rate(beams[1], scheme, beams[0])
    k = TWO_PI / L729
    width = max(eff.gamma * math.sqrt(1.0 + eff.saturation), 1.0)
    zee = 3.0 * MU_B / hbar * max(cfg.bfield, max(cfg.bfield_list, default=0.0))
    span = max(40.0, (abs(detuning) + zee + 30.0 * width) / k)
    step = eff.gamma / (20.0 * k) if eff.gamma > 0 else span / 1000
    n = int(min(max(math.ceil(2 * span / step) + 1, 401), 20001))
    return np.linspace(-span, span, n)


def cooling_profile(cfg: ScanConfig, detuning: float, bfield: float | None = None) -> ForceProfile:
    """Force/rate table along the 729 nm wavevector used by the integrator."""
    geom = BeamGeometry.from_tag(cfg.geometry)
    b = cfg.bfield if bfield is None else bfield
    return force_profile(cfg.scheme(), cfg.beams(), geom, detuning, bfield=cfg.bfield_vector(b),
                         v_grid=velocity_grid(cfg, detuning), direction=geom.k_cool)


def precool_profile(cfg: ScanConfig) -> ForceProfile:
    """Doppler cooling on S1/2-P1/2 at -Gamma/2, beam along (1,1,1)/sqrt 3."""
    scheme = cfg.scheme()
    gamma = scheme.total_rate("P1/2")
    d = tuple(np.ones(3) / math.sqrt(3.0))
    beams = [LaserBeam(L397, detuning=-gamma / 2, rabi=gamma / 2, direction=d),
             LaserBeam(L866, rabi=gamma / 2, direction=(1.0, 0.0, 0.0))]
    span = 60.0
    return beam_profile(scheme, beams, np.linspace(-span, span, 2401), direction=d)


def _dark_ranks(cfg: ScanConfig) -> tuple[int, ...]:
    return () if cfg.dark_index is None else (cfg.dark_index,)


def _run_trial(cfg: ScanConfig, profile: ForceProfile | None, pre: ForceProfile | None,
               key: tuple[int, int], want_jumps: bool, backend: str | None) -> tuple[float, bool]:
    trap = cfg.trap
    ss = np.random.SeedSequence(cfg.seed, spawn_key=key)
    s_init, s_pre, s_main = ss.spawn(3)
    dark = _dark_ranks(cfg)
    rng = np.random.default_rng(s_init)
    if cfg.precool == "397":
        ions = thermal_ions(cfg.n_ions, trap, PRECOOL_START_T, rng, dark=dark, dark_mass=cfg.dark_mass)
        pt = integrate(ions, trap, pre, cfg.noise, t_end=cfg.precool_time, seed=s_pre,
                       sample_interval=cfg.precool_time, log_events=False, backend=backend)
        ions = [replace(ion, position=tuple(pt.positions[-1, i]), velocity=pt.velocities[-1, i])
                for i, ion in enumerate(ions)]
    else:
        ions = thermal_ions(cfg.n_ions, trap, cfg.precool_temperature, rng, dark=dark, dark_mass=cfg.dark_mass)
    period = TWO_PI / cfg.omega_z
    traj = integrate(ions, trap, profile, cfg.noise, t_end=cfg.window, seed=s_main,
                     sample_interval=period if want_jumps else cfg.window,
                     log_events=False, backend=backend)
    bright = [i for i in range(cfg.n_ions) if i not in dark]
    photons = float(traj.channel_counts(VIOLET, bright).sum())
    jumped = False
    if want_jumps:
        _, jumped = detect_jumps(traj, dark[0])
    return photons, jumped


def _run_grid(cfg: ScanConfig, profiles: list, want_jumps: bool, threads: int | None,
              backend: str | None, key0: int = 0):
    pre = precool_profile(cfg) if cfg.precool == "397" else None
    tasks = [(i, t) for i in range(len(profiles)) for t in range(cfg.trials)]

    def work(task):
        i, t = task
        return _run_trial(cfg, profiles[i], pre, (key0 + i, t), want_jumps, backend)

    n = _threads(threads)
    if n == 1:
        out = [work(t) for t in tasks]
    else:
        with ThreadPoolExecutor(n) as ex:
            out = list(ex.map(work, tasks))
    photons = np.array([o[0] for o in out]).reshape(len(profiles), cfg.trials)
    jumps = np.array([o[1] for o in out]).reshape(len(profiles), cfg.trials)
    return photons, jumps


def _result(cfg: ScanConfig, photons: np.ndarray, jumps: np.ndarray | None, **meta) -> ScanResult:
    rates = cfg.efficiency * photons / cfg.window
    n_bright = cfg.n_ions - len(_dark_ranks(cfg))
    std = rates.std(axis=1, ddof=1) if cfg.trials > 1 else np.zeros(rates.shape[0])
    k_eff = effective_wavenumber(BeamGeometry.from_tag(cfg.geometry))
    mean = rates.mean(axis=1)
    force = mean / cfg.efficiency / max(n_bright, 1) * hbar * k_eff
    return ScanResult(
        detunings=cfg.detunings, mean_rate=mean, std_rate=std, trial_rates=rates,
        inferred_force=force, jump_fraction=None if jumps is None else jumps.mean(axis=1),
        trial_jumps=jumps, n_bright=n_bright, efficiency=cfg.efficiency, geometry=cfg.geometry,
        config=cfg, metadata=dict(meta),
    )


def detuning_scan(cfg: ScanConfig, threads: int | None = None, backend: str | None = None) -> ScanResult:
    """Detected violet count rate against 729 nm detuning.

    Each trial starts from a freshly pre-cooled string and integrates the
    full window; detected counts are the emitted violet photons of the bright
    ions times the detection efficiency.
    """
    profiles = [cooling_profile(cfg, d) for d in cfg.detunings]
    want = cfg.dark_index is not None
    photons, jumps = _run_grid(cfg, profiles, want, threads, backend)
    return _result(cfg, photons, jumps if want else None, bfield=cfg.bfield)


def jump_fraction_scan(cfg: ScanConfig, threads: int | None = None, backend: str | None = None,
                       baseline: bool = True) -> ScanResult:
    """Fraction of windows in which the dark ion changed position.

    A baseline with every laser off (collisions still on) is run with the
    same number of trials and reported in ``result.baseline``.
    """
    if cfg.dark_index is None:
        raise ValueError("jump_fraction_scan needs a dark ion")
    if cfg.trials < 20:
        raise ValueError("jump_fraction_scan needs at least 20 trials")
    profiles = [cooling_profile(cfg, d) for d in cfg.detunings]
    photons, jumps = _run_grid(cfg, profiles, True, threads, backend)
    res = _result(cfg, photons, jumps, bfield=cfg.bfield)
    if baseline:
        res = replace(res, baseline=collision_baseline(cfg, threads=threads, backend=backend))
    return res


def collision_baseline(cfg: ScanConfig, trials: int | None = None, threads: int | None = None,
                       backend: str | None = None) -> dict:
    """Jump fraction with every laser off; collisions and heating stay on."""
    if cfg.dark_index is None:
        raise ValueError("collision_baseline needs a dark ion")
    c = cfg if trials is None else replace(cfg, trials=trials)
    _, bj = _run_grid(c, [None], True, threads, backend, key0=BASELINE_KEY)
    k = int(bj.sum())
    return {"jumps": k, "trials": c.trials, "R": k / c.trials, "bound": collision_bound(c)}


def collision_bound(cfg: ScanConfig) -> float:
    """Probability of at least one background collision in a window."""
    return 1.0 - math.exp(-cfg.n_ions * cfg.collision_rate * cfg.window)


def binomial_consistent(k1: int, n1: int, k2: int, n2: int, nsigma: float = 2.0) -> bool:
    """Two-sample binomial comparison with the pooled standard error."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    diff = abs(k1 / n1 - k2 / n2)
    return diff <= nsigma * se if se > 0 else diff == 0


def resonance_fwhm(detunings, rates) -> float:
    """Full width at half maximum by linear interpolation (rad/s).

    Returns nan when either half-maximum crossing lies outside the grid.
    """
    x = np.asarray(detunings, dtype=float)
    y = np.asarray(rates, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    if half <= 0:
        return math.nan
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i:] < half)[0]
    if left.size == 0 or right.size == 0:
        return math.nan
    a = left[-1]
    xl = np.interp(half, [y[a], y[a + 1]], [x[a], x[a + 1]])
    b = i + right[0]
    xr = np.interp(half, [y[b], y[b - 1]], [x[b], x[b - 1]])
    return float(xr - xl)


def line_centers(cfg: ScanConfig, bfield: float) -> np.ndarray:
    """Detunings of the Delta m = +-1 components of the 729 nm line (rad/s)."""
    scheme = cfg.scheme()
    tr = scheme.find_transition(L729)
    geom = BeamGeometry.from_tag(cfg.geometry)
    lines = zeeman_lines(scheme, tr, cfg.bfield_vector(1.0), geom.k_cool, (1.0, 0.0, 0.0))
    return np.sort([ln.shift_coefficient * MU_B * bfield / hbar for ln in lines if abs(ln.delta_m) == 1])


def bfield_scan(cfg: ScanConfig, b_list=None, threads: int | None = None,
                backend: str | None = None) -> list[ScanResult]:
    """One detuning scan per field magnitude, field along ``bfield_direction``.

    Each result's metadata carries the resonance FWHM, the peak rate and the
    four Delta m = +-1 line centres.
    """
    geom = BeamGeometry.from_tag(cfg.geometry)
    if not geom.axial:
        raise ValueError("bfield_scan needs an axial geometry")
    fields = cfg.bfield_list if b_list is None else tuple(float(b) for b in b_list)
    out = []
    for j, b in enumerate(fields):
        c = replace(cfg, bfield=b)
        profiles = [cooling_profile(c, d) for d in c.detunings]
        photons, _ = _run_grid(c, profiles, False, threads, backend, key0=j * len(profiles))
        res = _result(c, photons, None, bfield=b)
        res.metadata.update(fwhm=resonance_fwhm(res.detunings, res.mean_rate), peak_rate=res.peak_rate,
                            line_centers=line_centers(c, b).tolist())
        out.append(res)
    return out


def force_estimate(result: ScanResult, geometry: BeamGeometry | str | None = None) -> float:
    """Peak scattering force inferred from fluorescence.

    F = peak detected rate / efficiency / bright ions * hbar |k_eff|.
    """
    geom = geometry if isinstance(geometry, BeamGeometry) else BeamGeometry.from_tag(geometry or result.geometry)
    y = result.mean_rate
    if not np.any(y > 0):
        return 0.0
    i = int(np.argmax(y))
    if y.size < 3 or i in (0, y.size - 1):
        raise ValueError("peak not bracketed by the detuning grid")
    return float(y[i] / result.efficiency / max(result.n_bright, 1) * hbar * effective_wavenumber(geom))


@dataclass(frozen=True)
class RegimeReport:
    gamma_eff: float
    omega_z: float
    omega_r: float
    status: str
    message: str


def doppler_regime_check(cfg: ScanConfig) -> RegimeReport:
    """Compare Gamma' with the secular frequencies.

    ``pass`` when Gamma' exceeds the larger secular frequency by the margin,
    ``marginal`` within it, ``fail`` below (resolved-sideband regime, which
    this model does not describe).
    """
    g = cfg.gamma_eff()
    w = max(cfg.omega_z, cfg.omega_r)
    ratio = g / w
    if ratio > REGIME_MARGIN:
        status = "pass"
    elif ratio >= 1.0 - 1e-12:
        status = "marginal"
    else:
        status = "fail"
    msg = (f"Gamma'/2pi = {g / TWO_PI / 1e6:.4g} MHz, omega_z/2pi = {cfg.omega_z / TWO_PI / 1e6:.4g} MHz, "
           f"omega_r/2pi = {cfg.omega_r / TWO_PI / 1e6:.4g} MHz: {status}")
    if status == "fail":
        below = "omega_z" if g < cfg.omega_z else "omega_r"
        msg += f" (Gamma' < {below}; resolved-sideband regime is outside the model)"
    return RegimeReport(g, cfg.omega_z, cfg.omega_r, status, msg)
