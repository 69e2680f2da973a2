"""Stochastic molecular dynamics of ion strings in a linear Paul trap.

The trap is a static 3-D harmonic pseudopotential; ions interact through the
Coulomb force.  Addressed ions scatter photons at the steady-state rates
tabulated in a :class:`~quadcool.mechanics.ForceProfile`; every absorption
and spontaneous emission is a discrete momentum kick.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import e as E_CHARGE, epsilon_0, hbar, k as k_B

from . import _kernels
from .atomic_model import AMU
from .mechanics import ForceProfile

CA40_MASS = 39.96259098 * AMU  # ion mass, electron removed
DT_FACTOR = 50.0
DEBOUNCE_PERIODS = 10.0
EV = E_CHARGE


@dataclass(frozen=True)
class TrapConfig:
    """Secular frequencies (rad/s) of the pseudopotential for ``mass``."""

    omega_z: float
    omega_r: float
    mass: float = CA40_MASS
    charge: float = E_CHARGE

    def __post_init__(self):
        if not (self.omega_z > 0 and self.omega_r > 0):
            raise ValueError("secular frequencies must be positive")
        if not (self.mass > 0 and self.charge > 0):
            raise ValueError("mass and charge must be positive")

    @property
    def coulomb_constant(self) -> float:
        return self.charge**2 / (4.0 * math.pi * epsilon_0)

    @property
    def length_scale(self) -> float:
        """l = (q^2 / (4 pi eps0 m omega_z^2))^(1/3)."""
        return (self.coulomb_constant / (self.mass * self.omega_z**2)) ** (1.0 / 3.0)

    def spring_constants(self, masses) -> np.ndarray:
        """Per-ion (kx, ky, kz); the radial pseudopotential scales as 1/m."""
        m = np.asarray(masses, dtype=float)
        kz = self.mass * self.omega_z**2 * np.ones_like(m)
        kr = self.mass**2 * self.omega_r**2 / m
        return np.stack([kr, kr, kz], axis=1)

    def critical_ratio(self, n: int) -> float:
        """Smallest omega_r/omega_z for which an n-ion string is linear."""
        if n < 2:
            return 0.0
        z = _equilibrium_dimensionless(n)
        c = _coulomb_hessian(z)
        return math.sqrt(max(np.linalg.eigvalsh(c).max() / 2.0, 0.0))

    def is_string_stable(self, n: int, masses=None) -> bool:
        if n < 2:
            return True
        z = _equilibrium_dimensionless(n)
        kz = self.mass * self.omega_z**2
        kr = self.spring_constants(np.full(n, self.mass) if masses is None else masses)[:, 0] / kz
        radial = np.diag(kr) - _coulomb_hessian(z) / 2.0
        return bool(np.linalg.eigvalsh(radial).min() > 0)

    def check_string(self, n: int, masses=None) -> None:
        if not self.is_string_stable(n, masses):
            raise ValueError(
                f"{n} ions form a zigzag: omega_r/omega_z = {self.omega_r / self.omega_z:.3f} "
                f"is below the linear-string threshold {self.critical_ratio(n):.3f}"
            )


def _coulomb_hessian(z: np.ndarray) -> np.ndarray:
    """Axial Hessian of sum 1/|z_i - z_j| (dimensionless)."""
    d = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(d, np.inf)
    off = -2.0 / d**3
    h = off.copy()
    np.fill_diagonal(h, -off.sum(axis=1))
    return h


def _gradient(z: np.ndarray) -> np.ndarray:
    d = z[:, None] - z[None, :]
    np.fill_diagonal(d, np.inf)
    return z - np.sum(np.sign(d) / d**2, axis=1)


_EQ_CACHE: dict[int, np.ndarray] = {}


def _equilibrium_dimensionless(n: int) -> np.ndarray:
    if n in _EQ_CACHE:
        return _EQ_CACHE[n].copy()
    if n == 1:
        z = np.zeros(1)
    else:
        # start from the large-N asymptotic spacing, then Newton on U = sum z^2/2 + sum 1/r
        z = np.linspace(-1.0, 1.0, n) * (0.8 * n ** (2.0 / 3.0) if n > 2 else 0.63)
        for _ in range(200):
            g = _gradient(z)
            h = np.eye(n) + _coulomb_hessian(z)
            step = np.linalg.solve(h, g)
            # damp the step so that the ordering is preserved
            gap = np.diff(z).min()
            scale = min(1.0, 0.5 * gap / max(np.abs(step).max(), 1e-300))
            z = z - scale * step
            if np.abs(_gradient(z)).max() <= 1e-14 and scale == 1.0:
                break
        z = 0.5 * (z - z[::-1])
        for _ in range(3):
            z = z - np.linalg.solve(np.eye(n) + _coulomb_hessian(z), _gradient(z))
            z = 0.5 * (z - z[::-1])
    if np.abs(_gradient(z)).max() > 1e-12:
        raise RuntimeError("equilibrium search did not converge")
    _EQ_CACHE[n] = z.copy()
    return z


def equilibrium_positions(n: int, trap: TrapConfig, dimensionless: bool = False) -> np.ndarray:
    """Axial equilibrium positions of an ``n``-ion string, sorted ascending.

    Returned in metres, or in units of ``trap.length_scale`` with
    ``dimensionless=True``.  The residual force is below 1e-12 of the
    characteristic force q^2 / (4 pi eps0 l^2).
    """
    if not 1 <= n <= 32:
        raise ValueError("n must lie in 1..32")
    trap.check_string(n)
    z = _equilibrium_dimensionless(n)
    return z if dimensionless else z * trap.length_scale


@dataclass(frozen=True)
class IonState:
    position: np.ndarray
    velocity: np.ndarray
    species: str = "40Ca+"
    addressed: bool = True
    mass: float | None = None

    def __post_init__(self):
        for name in ("position", "velocity"):
            a = np.array(getattr(self, name), dtype=float).reshape(3)
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be finite")
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def thermal_ions(n: int, trap: TrapConfig, temperature: float, rng: np.random.Generator,
                 dark: tuple[int, ...] = (), dark_mass: float | None = None,
                 displace: bool = True) -> list[IonState]:
    """Thermal string: Maxwell-Boltzmann velocities and, with ``displace``,
    positions drawn from the harmonic (normal-mode) Boltzmann distribution
    about equilibrium.

    ``dark`` lists positions (ranks along +z) occupied by non-addressed ions.
    """
    z = equilibrium_positions(n, trap)
    masses = np.array([dark_mass if (i in dark and dark_mass is not None) else trap.mass
                       for i in range(n)])
    trap.check_string(n, masses)
    sig_v = np.sqrt(k_B * max(temperature, 0.0) / masses)
    vel = rng.normal(0.0, 1.0, (n, 3)) * sig_v[:, None]
    pos = np.zeros((n, 3))
    pos[:, 2] = z
    if displace and temperature > 0:
        kappa = trap.spring_constants(masses)
        kz = trap.mass * trap.omega_z**2
        c = _coulomb_hessian(z / trap.length_scale) if n > 1 else np.zeros((1, 1))
        hz = np.diag(kappa[:, 2]) + kz * c
        hr = np.diag(kappa[:, 0]) - kz * c / 2.0
        for axis, h in ((0, hr), (1, hr), (2, hz)):
            chol = np.linalg.cholesky(k_B * temperature * np.linalg.inv(h))
            pos[:, axis] += chol @ rng.normal(0.0, 1.0, n)
    return [
        IonState(tuple(pos[i]), vel[i], species="dark" if i in dark else "40Ca+",
                 addressed=i not in dark, mass=float(masses[i]))
        for i in range(n)
    ]


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic terms of the integrator.

    ``collision_rate`` is per ion (1/s); collisions deposit an exponentially
    distributed kinetic energy of mean ``collision_energy`` (J) in a random
    direction.  ``heating_rate`` is in motional quanta per second for every
    degree of freedom.  With ``recoil`` off the cooling force is the
    deterministic table mean.
    """

    recoil: bool = True
    collision_rate: float = 0.0
    collision_energy: float = 0.1 * EV
    heating_rate: float = 0.0

    def __post_init__(self):
        if self.collision_rate < 0 or self.collision_energy < 0 or self.heating_rate < 0:
            raise ValueError("noise parameters must be non-negative")


@dataclass(frozen=True)
class Trajectory:
    """Sampled ion states and photon bookkeeping of one integration."""

    times: np.ndarray
    positions: np.ndarray  # (samples, ions, 3)
    velocities: np.ndarray
    event_times: np.ndarray
    event_ions: np.ndarray
    event_channels: np.ndarray
    counts: np.ndarray  # (ions, event types) absorptions + emissions
    event_labels: tuple[str, ...]
    impulse: np.ndarray
    expected_impulse: np.ndarray
    impulse_variance: np.ndarray
    direction: np.ndarray
    collisions: np.ndarray  # (n, 3): time, ion, energy
    masses: np.ndarray
    addressed: np.ndarray
    seed: int | None
    dt: float
    t0: float
    t_end: float
    trap: TrapConfig
    backend: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")
        if self.event_times.size and (self.event_times.min() < self.t0 or self.event_times.max() > self.t_end):
            raise ValueError("event outside the integration window")

    @property
    def n_ions(self) -> int:
        return self.masses.size

    def channel_counts(self, channels=(393, 397), ions=None) -> np.ndarray:
        """Emitted photons per ion summed over the given wavelength channels."""
        cols = [i for i, lab in enumerate(self.event_labels) if lab.startswith("emit:")
                and int(lab.split(":")[1]) in channels]
        c = self.counts[:, cols].sum(axis=1)
        return c if ions is None else c[list(ions)]

    def states_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["t"]
        for i in range(self.n_ions):
            head += [f"x{i}", f"y{i}", f"z{i}", f"vx{i}", f"vy{i}", f"vz{i}"]
        w.writerow(head)
        for s in range(self.times.size):
            row = [repr(float(self.times[s]))]
            for i in range(self.n_ions):
                row += [repr(float(a)) for a in self.positions[s, i]]
                row += [repr(float(a)) for a in self.velocities[s, i]]
            w.writerow(row)
        return buf.getvalue()

    def events_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "ion", "channel_nm"])
        for t, i, c in zip(self.event_times, self.event_ions, self.event_channels):
            w.writerow([repr(float(t)), int(i), int(c)])
        return buf.getvalue()

    def manifest(self) -> str:
        return json.dumps({
            "seed": self.seed, "backend": self.backend, "dt": self.dt, "t0": self.t0,
            "t_end": self.t_end, "n_ions": self.n_ions, "samples": int(self.times.size),
            "events": int(self.event_times.size), "collisions": int(self.collisions.shape[0]),
            **{k: v for k, v in self.metadata.items() if isinstance(v, (int, float, str, bool))},
        }, indent=2, sort_keys=True)


def _tables(cooling: ForceProfile | None):
    """Flatten a force profile into kernel tables.

    Event types are the beams (absorption, signed net rate, kick hbar*k) then
    the decay channels (emission, isotropic kick of magnitude hbar*k).
    """
    if cooling is None:
        u = np.array([-1.0, 1.0])
        z2 = np.zeros((2, 1))
        return dict(u0=-1.0, du=2.0, rates=z2, kick=np.zeros((1, 3)), is_emission=np.zeros(1, np.bool_),
                    force_tab=np.zeros((2, 3)), diff_tab=np.zeros(2), lam_max=1.0, ehat=np.array([0.0, 0.0, 1.0]),
                    labels=("none",), channels=np.zeros(1, np.int64), grid=u)
    u = cooling.velocity
    du = np.diff(u)
    if not np.allclose(du, du[0], rtol=1e-9, atol=0):
        raise ValueError("force profile must use a uniform velocity grid")
    nb = cooling.absorption.shape[1]
    rates = np.hstack([cooling.absorption, cooling.emission])
    kick = np.zeros((rates.shape[1], 3))
    kick[:nb] = hbar * cooling.beam_k
    kick[nb:, 0] = hbar * cooling.emission_k
    is_em = np.zeros(rates.shape[1], np.bool_)
    is_em[nb:] = True
    # beams with no mechanical effect carry no information for the MD
    keep = np.ones(rates.shape[1], bool)
    keep[:nb] = np.any(kick[:nb] != 0, axis=1)
    labels = tuple([f"abs:{i}" for i in range(nb)] + [f"emit:{c}" for c in cooling.emission_nm])
    channels = np.array([0] * nb + list(cooling.emission_nm), np.int64)
    rates, kick, is_em = rates[:, keep], kick[keep], is_em[keep]
    labels = tuple(l for l, k in zip(labels, keep) if k)
    channels = channels[keep]
    lam = float(np.abs(rates).max(axis=0).sum())
    return dict(u0=float(u[0]), du=float(du[0]), rates=np.ascontiguousarray(rates), kick=kick,
                is_emission=is_em, force_tab=np.ascontiguousarray(cooling.force_vector),
                diff_tab=np.ascontiguousarray(cooling.diffusion), lam_max=max(lam, 1e-300),
                ehat=np.asarray(cooling.direction, float), labels=labels, channels=channels, grid=u)


def integrate(ions: list[IonState], trap: TrapConfig, cooling: ForceProfile | None = None,
              noise: NoiseModel | None = None, dt: float | None = None, t_end: float = 1e-3,
              seed: int | np.random.SeedSequence | None = 0, sample_interval: float | None = None,
              log_events: bool = True, t0: float = 0.0, backend: str | None = None,
              chunk_steps: int = 200_000) -> Trajectory:
    """Velocity-Verlet integration with Poissonian photon recoil.

    ``dt`` defaults to (and must not exceed) 1/(50 max(omega_z, omega_r)).
    Samples are taken every ``sample_interval`` (default: one axial period
    divided by 20, rounded to whole steps).
    """
    noise = noise or NoiseModel()
    wmax = max(trap.omega_z, trap.omega_r)
    dt_max = 1.0 / (DT_FACTOR * wmax)
    if dt is None:
        dt = dt_max
    if not 0 < dt <= dt_max * (1 + 1e-12):
        raise ValueError(f"dt must lie in (0, {dt_max:.3e}] s")
    if t_end <= t0:
        raise ValueError("t_end must exceed t0")
    backend = _kernels._check(backend)
    kernel = _kernels.get_chunk_kernel(backend)
    n = len(ions)
    masses = np.array([ion.mass if ion.mass is not None else trap.mass for ion in ions])
    trap.check_string(n, masses)
    addressed = np.array([ion.addressed for ion in ions], np.bool_)
    x = np.array([ion.position for ion in ions], dtype=float)
    v = np.array([ion.velocity for ion in ions], dtype=float)
    kappa = trap.spring_constants(masses)
    coul = trap.coulomb_constant
    inv_mass = 1.0 / masses

    nsteps = int(math.ceil((t_end - t0) / dt - 1e-9))
    if sample_interval is None:
        sample_interval = 2.0 * math.pi / trap.omega_z / 20.0
    sample_every = max(1, int(round(sample_interval / dt)))
    n_samples = nsteps // sample_every
    out_x = np.zeros((n_samples, n, 3))
    out_v = np.zeros((n_samples, n, 3))

    tab = _tables(cooling)
    ntypes = tab["rates"].shape[1]

    if isinstance(seed, np.random.SeedSequence):
        ss = seed
        seed_record = seed.entropy if isinstance(seed.entropy, int) else None
    else:
        ss = np.random.SeedSequence(seed)
        seed_record = seed
    rng_col, rng_pool, rng_heat = [np.random.default_rng(s) for s in ss.spawn(3)]

    # background collisions, pre-sampled per ion
    col = []
    if noise.collision_rate > 0:
        for i in range(n):
            k = rng_col.poisson(noise.collision_rate * (t_end - t0))
            ts = np.sort(rng_col.uniform(t0, t_end, k))
            en = rng_col.exponential(noise.collision_energy, k)
            d = rng_col.normal(size=(k, 3))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            for t, e_, di in zip(ts, en, d):
                col.append((t, i, e_, di * math.sqrt(2.0 * e_ / masses[i])))
    col.sort(key=lambda c: (c[0], c[1]))
    col_t = np.array([c[0] for c in col], float)
    col_ion = np.array([c[1] for c in col], np.int64)
    col_dv = np.array([c[3] for c in col], float).reshape(-1, 3)
    col_record = np.array([(c[0], c[1], c[2]) for c in col], float).reshape(-1, 3)

    omegas = np.array([trap.omega_r, trap.omega_r, trap.omega_z])
    heat_sigma = np.sqrt(2.0 * hbar * omegas[None, :] * noise.heating_rate * dt / masses[:, None])
    heat_sigma = np.ascontiguousarray(heat_sigma * np.ones((n, 3)))
    heating = noise.heating_rate > 0

    recoil = bool(noise.recoil and cooling is not None)
    lam = tab["lam_max"]
    expected_candidates = lam * min(chunk_steps, nsteps) * dt * n
    pool_size = int(max(4096, 6 * expected_candidates + _kernels.U_PER_STEP * n * 4))
    upool = rng_pool.random(pool_size)
    gsize = 3 * n * min(chunk_steps, nsteps) + 3 * n if heating else 1
    gpool = rng_heat.standard_normal(gsize) if heating else np.zeros(1)

    next_t = np.full(n, np.inf)
    state = np.zeros(6, np.int64)
    if recoil:
        for i in range(n):
            if addressed[i]:
                next_t[i] = t0 - math.log(1.0 - upool[state[_kernels.UPOS]]) / lam
                state[_kernels.UPOS] += 1

    log_size = int(max(1024, 2 * (lam * min(chunk_steps, nsteps) * dt + _kernels.LOG_MARGIN) * n)) \
        if (log_events and recoil) else (1 << 16) + _kernels.LOG_MARGIN * n
    ev_t = np.zeros(log_size)
    ev_ion = np.zeros(log_size, np.int64)
    ev_type = np.zeros(log_size, np.int64)
    logs: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []

    counts = np.zeros((n, ntypes), np.int64)
    impulse = np.zeros((n, 3))
    exp_impulse = np.zeros((n, 3))
    imp_var = np.zeros(n)
    f = np.zeros((n, 3))
    _kernels.get_force_kernel(backend)(x, kappa, coul, f)

    done = 0
    while done < nsteps:
        todo = min(chunk_steps, nsteps - done)
        state[_kernels.STATUS] = _kernels.OK
        k = kernel(
            x, v, f, inv_mass, kappa, coul, dt, t0, done, todo,
            addressed, tab["ehat"], tab["u0"], tab["du"], tab["rates"], tab["kick"], tab["is_emission"],
            tab["force_tab"], tab["diff_tab"], lam, recoil,
            next_t, upool, gpool, heat_sigma, col_t, col_ion, col_dv,
            sample_every, out_x, out_v, ev_t, ev_ion, ev_type,
            counts, impulse, exp_impulse, imp_var, state,
        )
        done += int(k)
        status = int(state[_kernels.STATUS])
        if status == _kernels.NONFINITE:
            raise FloatingPointError(f"non-finite ion state at t = {t0 + done * dt:.6e} s (step {done})")
        if status == _kernels.POOL_EMPTY:
            raise RuntimeError("random pool exhausted inside a step; raise chunk pool size")
        if status == _kernels.POOL_LOW or (status == _kernels.OK and done < nsteps):
            # refill: keep the unread tail so the stream stays contiguous
            up = int(state[_kernels.UPOS])
            upool = np.concatenate([upool[up:], rng_pool.random(pool_size)])
            state[_kernels.UPOS] = 0
            if heating:
                gp = int(state[_kernels.GPOS])
                gpool = np.concatenate([gpool[gp:], rng_heat.standard_normal(gsize)])
                state[_kernels.GPOS] = 0
        if status == _kernels.LOG_FULL or done >= nsteps or status == _kernels.POOL_LOW:
            e = int(state[_kernels.EPOS])
            if log_events and recoil and e:
                logs.append((ev_t[:e].copy(), ev_ion[:e].copy(), ev_type[:e].copy()))
            state[_kernels.EPOS] = 0

    if logs:
        et = np.concatenate([l[0] for l in logs])
        ei = np.concatenate([l[1] for l in logs])
        ek = np.concatenate([l[2] for l in logs])
        ec = tab["channels"][ek]
    else:
        et, ei, ec = np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    ns = int(state[_kernels.SPOS])
    times = t0 + dt * sample_every * np.arange(1, ns + 1)
    meta = {"omega_z": trap.omega_z, "omega_r": trap.omega_r, "recoil": recoil,
            "collision_rate": noise.collision_rate, "heating_rate": noise.heating_rate,
            "sample_every": sample_every}
    if cooling is not None:
        meta.update({k: v for k, v in cooling.metadata.items() if isinstance(v, (int, float, str, bool))})
    return Trajectory(
        times=times, positions=out_x[:ns], velocities=out_v[:ns],
        event_times=et, event_ions=ei, event_channels=ec,
        counts=counts, event_labels=tab["labels"], impulse=impulse, expected_impulse=exp_impulse,
        impulse_variance=imp_var, direction=tab["ehat"], collisions=col_record,
        masses=masses, addressed=addressed, seed=seed_record, dt=dt, t0=t0, t_end=t0 + nsteps * dt,
        trap=trap, backend=backend, metadata=meta,
    )


def total_energy(positions: np.ndarray, velocities: np.ndarray, masses, trap: TrapConfig) -> float:
    """Kinetic + harmonic + Coulomb energy of one configuration (J)."""
    m = np.asarray(masses, float)
    kin = 0.5 * float(np.sum(m[:, None] * velocities**2))
    return kin + _kernels.potential_energy(positions, trap.spring_constants(m), trap.coulomb_constant)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    order_before: tuple[int, ...]
    order_after: tuple[int, ...]
    dark_rank_before: int
    dark_rank_after: int


def detect_jumps(traj: Trajectory, dark_index: int, debounce: float | None = None
                 ) -> tuple[list[JumpEvent], bool]:
    """Persistent reorderings of the string and the window's jump flag.

    The axial order is the tuple of ion indices sorted by z.  A new order is
    accepted once it has persisted for ``debounce`` seconds (default ten
    axial periods).  The window is flagged when an accepted change moved the
    dark ion, or its instantaneous rank in the last sample differs from the
    first.
    """
    n = traj.n_ions
    if not 0 <= dark_index < n:
        raise IndexError("dark_index out of range")
    if traj.times.size == 0:
        return [], False
    if debounce is None:
        debounce = DEBOUNCE_PERIODS * 2.0 * math.pi / traj.trap.omega_z
    orders = np.argsort(traj.positions[:, :, 2], axis=1, kind="stable")
    stable = tuple(int(i) for i in orders[0])
    first = stable
    events: list[JumpEvent] = []
    cand, cand_t = None, 0.0
    for s in range(1, orders.shape[0]):
        cur = tuple(int(i) for i in orders[s])
        if cur == stable:
            cand = None
            continue
        if cur != cand:
            cand, cand_t = cur, traj.times[s]
        if traj.times[s] - cand_t >= debounce - 1e-15:
            events.append(JumpEvent(float(cand_t), stable, cand, stable.index(dark_index), cand.index(dark_index)))
            stable, cand = cand, None
    moved = any(ev.dark_rank_before != ev.dark_rank_after for ev in events)
    last = tuple(int(i) for i in orders[-1])
    flag = moved or last.index(dark_index) != first.index(dark_index)
    return events, bool(flag)


def temperature_estimate(traj: Trajectory, mode: str = "axial", window: tuple[float, float] | None = None,
                         ions=None) -> float:
    """Kinetic temperature m <v^2> / k_B of the axial or radial motion."""
    if mode not in ("axial", "radial"):
        raise ValueError("mode must be 'axial' or 'radial'")
    t = traj.times
    lo, hi = (t[0], t[-1]) if window is None else window
    omega = traj.trap.omega_z if mode == "axial" else traj.trap.omega_r
    if hi - lo < 10 * 2 * math.pi / omega * (1 - 1e-9):
        raise ValueError("window shorter than ten secular periods")
    sel = (t >= lo) & (t <= hi)
    if not sel.any():
        raise ValueError("window contains no samples")
    idx = np.arange(traj.n_ions) if ions is None else np.asarray(list(ions))
    vel = traj.velocities[sel][:, idx]
    m = traj.masses[idx][None, :]
    if mode == "axial":
        v2 = vel[:, :, 2] ** 2
    else:
        v2 = 0.5 * (vel[:, :, 0] ** 2 + vel[:, :, 1] ** 2)
    return float(np.mean(m * v2) / k_B)
