"""Radiative force, momentum diffusion and Doppler-cooling figures of merit.

Forces follow from steady-state flux balance: every net absorption from a
beam transfers hbar*k along that beam, spontaneous emission averages to zero
but contributes to momentum diffusion.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import hbar, k as k_B

from .atomic_model import ROTATING, LaserBeam, LevelScheme, TWO_PI
from .internal_dynamics import RateModel, effective_decay_rate

CO = "co_propagating_axial"
COUNTER = "counter_propagating_axial"
ANGLED = "angled_45_with_axial_assist"
GEOMETRY_TAGS = (CO, COUNTER, ANGLED)
EMISSION_XI = 1.0 / 3.0

_REQUIRED = (729, 854, 866)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("zero vector")
    return v / n


@dataclass(frozen=True)
class BeamGeometry:
    """Propagation directions of the cooling, assisting and repump beams.

    ``k_repump`` is None when the repumper's momentum is to be neglected.
    """

    tag: str
    k_cool: np.ndarray
    k_assist: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    pol_cool: object = ROTATING
    k_repump: np.ndarray | None = None

    def __post_init__(self):
        for name in ("k_cool", "k_assist", "axis"):
            object.__setattr__(self, name, _unit(getattr(self, name)))
        if self.k_repump is not None:
            object.__setattr__(self, "k_repump", _unit(self.k_repump))
        if self.tag not in GEOMETRY_TAGS:
            raise ValueError(f"unknown geometry tag {self.tag!r}")
        dot = float(self.k_cool @ self.k_assist)
        tol = 1e-9
        if self.tag == CO and abs(dot - 1) > tol:
            raise ValueError("co-propagating beams must be parallel")
        if self.tag == COUNTER and abs(dot + 1) > tol:
            raise ValueError("counter-propagating beams must be antiparallel")
        if self.tag == ANGLED:
            if abs(self.k_cool @ self.axis - math.cos(math.pi / 4)) > tol:
                raise ValueError("angled cooling beam must make 45 degrees with the axis")
            if abs(abs(self.k_assist @ self.axis) - 1) > tol:
                raise ValueError("assisting beam must be along the axis")

    @property
    def axial(self) -> bool:
        return self.tag in (CO, COUNTER)

    @classmethod
    def co_propagating(cls, axis=(0.0, 0.0, 1.0), **kw) -> "BeamGeometry":
        a = _unit(axis)
        return cls(CO, a, a, a, **kw)

    @classmethod
    def counter_propagating(cls, axis=(0.0, 0.0, 1.0), **kw) -> "BeamGeometry":
        a = _unit(axis)
        return cls(COUNTER, a, -a, a, **kw)

    @classmethod
    def angled_45(cls, axis=(0.0, 0.0, 1.0), **kw) -> "BeamGeometry":
        a = _unit(axis)
        # any direction perpendicular to the axis fixes the plane of the 729 beam
        trial = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        perp = _unit(trial - (trial @ a) * a)
        k = math.cos(math.pi / 4) * a + math.sin(math.pi / 4) * perp
        return cls(ANGLED, k, a, a, **kw)

    @classmethod
    def from_tag(cls, tag: str, axis=(0.0, 0.0, 1.0), **kw) -> "BeamGeometry":
        aliases = {"co": CO, "counter": COUNTER, "angled": ANGLED}
        tag = aliases.get(tag, tag)
        factory = {CO: cls.co_propagating, COUNTER: cls.counter_propagating, ANGLED: cls.angled_45}
        if tag not in factory:
            raise ValueError(f"unknown geometry {tag!r}")
        return factory[tag](axis, **kw)

    def apply(self, scheme: LevelScheme, beams) -> list[LaserBeam]:
        """Copy of ``beams`` with directions (and 729 polarisation) set."""
        out = []
        for b in beams:
            ch = scheme.find_transition(b.wavelength).channel
            if ch == 729:
                out.append(b.with_(direction=tuple(self.k_cool), polarization=self.pol_cool))
            elif ch == 854:
                out.append(b.with_(direction=tuple(self.k_assist)))
            elif ch == 866 and self.k_repump is not None:
                out.append(b.with_(direction=tuple(self.k_repump)))
            else:
                out.append(b)
        return out


def _channels(scheme: LevelScheme, beams) -> list[int]:
    chans = []
    for b in beams:
        chans.append(scheme.find_transition(b.wavelength).channel)
    return chans


def _check_beams(scheme, beams):
    chans = _channels(scheme, beams)
    missing = [c for c in _REQUIRED if c not in chans]
    if missing:
        raise ValueError(f"missing beam(s) at {missing} nm")
    return chans


def _mechanical_k(scheme, beams, geometry: BeamGeometry, model: RateModel) -> np.ndarray:
    k = model.beam_k.copy()
    for i, ch in enumerate(_channels(scheme, beams)):
        if ch == 866 and geometry.k_repump is None:
            k[i] = 0.0
    return k


@dataclass(frozen=True)
class ForceProfile:
    """Mean force and diffusion tabulated against velocity along ``direction``.

    ``absorption`` holds the net absorption flux per beam (1/s) and
    ``emission`` the spontaneous rate per decay channel, so stochastic
    integrators can rebuild both the mean force and its fluctuations.
    """

    velocity: np.ndarray
    force: np.ndarray
    diffusion: np.ndarray
    force_vector: np.ndarray
    absorption: np.ndarray
    emission: np.ndarray
    beam_k: np.ndarray
    emission_k: np.ndarray
    emission_nm: tuple[int, ...]
    direction: np.ndarray
    gamma_eff: float
    k_cool: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float)
        if v.ndim != 1 or v.size < 2 or not np.all(np.diff(v) > 0):
            raise ValueError("velocity grid must be strictly increasing")
        if not np.all(np.isfinite(self.force)):
            raise ValueError("force must be finite")

    def violet_rate(self) -> np.ndarray:
        idx = [i for i, c in enumerate(self.emission_nm) if c in (393, 397)]
        return self.emission[:, idx].sum(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["v[m/s]", "F[N]", "D[kg^2 m^2/s^3]"])
        for row in zip(self.velocity, self.force, self.diffusion):
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()


def _evaluate(scheme, beams, geometry, velocities, bfield, zeeman_resolved, xi, direction):
    _check_beams(scheme, beams)
    beams = geometry.apply(scheme, beams)
    bvec = np.asarray(bfield, dtype=float)
    if bvec.ndim == 0:
        bvec = float(bvec) * geometry.axis
    if zeeman_resolved is None:
        zeeman_resolved = bool(np.linalg.norm(bvec) > 0)
    model = RateModel(scheme, beams, bvec, zeeman_resolved)
    vel = np.atleast_2d(np.asarray(velocities, dtype=float))
    pops = model.steady_states(vel)
    absorb = model.absorption_flux(vel, pops)
    emit = model.emission_rates(pops)
    kmech = _mechanical_k(scheme, beams, geometry, model)
    fvec = hbar * absorb @ kmech
    emission_k = np.array([t.wavenumber for t in scheme.transitions])
    d = None
    if direction is not None:
        kproj = kmech @ direction
        d = hbar**2 * (np.abs(absorb) @ kproj**2 + xi * emit @ emission_k**2)
    return model, kmech, absorb, emit, fvec, emission_k, d


def mean_force(scheme: LevelScheme, beams, geometry: BeamGeometry, v, bfield=0.0,
               zeeman_resolved: bool | None = None) -> np.ndarray:
    """Steady-state radiative force vector (N) on an ion moving at ``v``."""
    *_, fvec, _, _ = _evaluate(scheme, beams, geometry, np.asarray(v, float)[None, :],
                               bfield, zeeman_resolved, EMISSION_XI, None)
    return fvec[0]


def momentum_kick_ratio(geometry_co: BeamGeometry | None = None,
                        geometry_counter: BeamGeometry | None = None,
                        wavelength_cool: float = 729.347e-9,
                        wavelength_assist: float = 854.444e-9) -> float:
    """Axial momentum per cycle, co-propagating over counter-propagating.

    Returns ``inf`` when the counter-propagating kicks cancel exactly.
    """
    geometry_co = geometry_co or BeamGeometry.co_propagating()
    geometry_counter = geometry_counter or BeamGeometry.counter_propagating()
    if not (geometry_co.axial and geometry_counter.axial):
        raise ValueError("both geometries must be axial")
    kc, ka = TWO_PI / wavelength_cool, TWO_PI / wavelength_assist

    def kick(g):
        return abs(kc * (g.k_cool @ g.axis) + ka * (g.k_assist @ g.axis))

    num, den = kick(geometry_co), kick(geometry_counter)
    if den <= 1e-12 * num:
        return math.inf
    return num / den


def force_profile(scheme: LevelScheme, beams, geometry: BeamGeometry, detuning_729: float,
                  bfield=0.0, v_grid=None, zeeman_resolved: bool | None = None,
                  xi: float = EMISSION_XI, direction=None) -> ForceProfile:
    """Tabulate force and diffusion along ``direction`` (default trap axis).

    ``detuning_729`` is measured from the light-shifted resonance (rad/s);
    the detuning already stored on the 729 nm beam is replaced.
    """
    chans = _check_beams(scheme, beams)
    assist = beams[chans.index(854)]
    shift = effective_decay_rate(assist, scheme).light_shift
    beams = [b.with_(detuning=detuning_729 + shift) if c == 729 else b for b, c in zip(beams, chans)]
    eff = effective_decay_rate(assist, scheme, beams[chans.index(729)])
    kc = TWO_PI / beams[chans.index(729)].wavelength
    if v_grid is None:
        span = 6.0 * eff.gamma * math.sqrt(1 + eff.saturation) / kc
        v_grid = np.linspace(-span, span, 401)
    u = np.asarray(v_grid, dtype=float)
    ehat = geometry.axis if direction is None else _unit(direction)
    model, kmech, absorb, emit, fvec, emission_k, d = _evaluate(
        scheme, beams, geometry, u[:, None] * ehat[None, :], bfield, zeeman_resolved, xi, ehat
    )
    bmag = float(np.linalg.norm(np.asarray(bfield, float)))
    return ForceProfile(
        velocity=u,
        force=fvec @ ehat,
        diffusion=d,
        force_vector=fvec,
        absorption=absorb,
        emission=emit,
        beam_k=kmech,
        emission_k=emission_k,
        emission_nm=model.channels,
        direction=ehat,
        gamma_eff=eff.gamma,
        k_cool=kc,
        metadata={"detuning": detuning_729, "bfield": bmag, "geometry": geometry.tag,
                  "zeeman_resolved": model.zeeman_resolved, "light_shift": shift},
    )


def beam_profile(scheme: LevelScheme, beams, v_grid, direction=(0.0, 0.0, 1.0),
                 xi: float = EMISSION_XI) -> ForceProfile:
    """Force table for an arbitrary beam set, every beam mechanically active.

    Used for auxiliary stages such as dipole-line pre-cooling. Detunings are
    taken as stored on the beams; no magnetic field.
    """
    ehat = _unit(direction)
    u = np.asarray(v_grid, dtype=float)
    model = RateModel(scheme, list(beams), np.zeros(3), False)
    vel = u[:, None] * ehat[None, :]
    pops = model.steady_states(vel)
    absorb = model.absorption_flux(vel, pops)
    emit = model.emission_rates(pops)
    kmech = np.asarray(model.beam_k, dtype=float)
    fvec = hbar * absorb @ kmech
    emission_k = np.array([t.wavenumber for t in scheme.transitions])
    d = hbar**2 * (np.abs(absorb) @ (kmech @ ehat) ** 2 + xi * emit @ emission_k**2)
    return ForceProfile(
        velocity=u, force=fvec @ ehat, diffusion=d, force_vector=fvec, absorption=absorb,
        emission=emit, beam_k=kmech, emission_k=emission_k, emission_nm=model.channels,
        direction=ehat, gamma_eff=math.nan, k_cool=float(np.linalg.norm(kmech, axis=1).max()),
        metadata={"geometry": "custom"},
    )


def friction_and_diffusion(profile: ForceProfile) -> tuple[float, float]:
    """Friction coefficient alpha = -dF/dv and diffusion D at v = 0."""
    v = profile.velocity
    if not (v[0] < 0 < v[-1]):
        raise ValueError("velocity grid must bracket zero")
    if not (np.any(profile.force) or np.any(profile.diffusion)):
        return 0.0, 0.0
    i = int(np.searchsorted(v, 0.0))
    if v[i] == 0.0:
        spacing = max(v[i] - v[i - 1], v[i + 1] - v[i])
        h = min(v[i] - v[i - 1], v[i + 1] - v[i])
    else:
        spacing = v[i] - v[i - 1]
        h = 0.5 * min(v[i], -v[i - 1])
    if spacing > profile.gamma_eff / (10.0 * profile.k_cool):
        raise ValueError("velocity grid too coarse near v = 0")
    f_p = np.interp(h, v, profile.force)
    f_m = np.interp(-h, v, profile.force)
    alpha = -(f_p - f_m) / (2.0 * h)
    d0 = float(np.interp(0.0, v, profile.diffusion))
    return float(alpha), d0


def doppler_limit_temperature(profile: ForceProfile) -> float:
    """Equilibrium temperature D / (2 alpha k_B); ``inf`` without friction."""
    alpha, d0 = friction_and_diffusion(profile)
    if alpha <= 0:
        return math.inf
    return d0 / (2.0 * alpha * k_B)


def capture_range(profile: ForceProfile, threshold_fraction: float = 0.5) -> tuple[float, float]:
    """Contiguous velocity interval around the force peak above threshold."""
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must lie in (0, 1)")
    mag = np.abs(profile.force)
    peak = int(np.argmax(mag))
    if mag[peak] <= 0:
        raise ValueError("profile has no force")
    cut = threshold_fraction * mag[peak]
    v = profile.velocity
    lo = peak
    while lo > 0 and mag[lo - 1] >= cut:
        lo -= 1
    hi = peak
    while hi < v.size - 1 and mag[hi + 1] >= cut:
        hi += 1
    # linear interpolation of the crossings where they lie inside the grid
    left = v[lo] if lo == 0 else np.interp(cut, [mag[lo - 1], mag[lo]], [v[lo - 1], v[lo]])
    right = v[hi] if hi == v.size - 1 else np.interp(cut, [mag[hi + 1], mag[hi]], [v[hi + 1], v[hi]])
    return float(left), float(right)


def force_extrema(profile: ForceProfile) -> np.ndarray:
    """Velocities of local maxima of |F|."""
    mag = np.abs(profile.force)
    inner = (mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])
    return profile.velocity[1:-1][inner]
