"""Rate-equation model of the internal state at fixed velocity and field.

The generator ``M`` follows the column convention ``dp/dt = M @ p``:
``M[i, j]`` is the rate from state ``j`` into state ``i``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.sparse.csgraph import connected_components

from .atomic_model import (
    MU_B,
    HBAR,
    LaserBeam,
    LevelScheme,
    Transition,
    clebsch_gordan,
    coupling_weights,
    format_m,
    rabi_from_power,
    shift_coefficient,
)

VIOLET_CHANNELS = (393, 397)
CONSERVATION_TOL = 1e-9


@dataclass(frozen=True)
class RateMatrix:
    states: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if m.shape != (len(self.states), len(self.states)):
            raise ValueError("matrix shape does not match state list")
        scale = max(np.abs(m).sum(axis=0).max(), 1.0)
        if np.abs(m.sum(axis=0)).max() > CONSERVATION_TOL * scale:
            raise ValueError("rate matrix columns do not sum to zero")
        off = m - np.diag(np.diag(m))
        if (off < 0).any() or (np.diag(m) > 0).any():
            raise ValueError("negative transfer rate")

    def to_csv(self) -> str:
        """State-label header followed by rows of rates in 1/s."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.states)
        for row in self.matrix:
            w.writerow([f"{x:.12g}" for x in row])
        return buf.getvalue()


@dataclass(frozen=True)
class PopulationVector:
    states: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (len(self.states),):
            raise ValueError("population length does not match state list")

    def level_populations(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for s, p in zip(self.states, self.values):
            lv = s.split("[")[0]
            out[lv] = out.get(lv, 0.0) + float(p)
        return out

    def __getitem__(self, state: str) -> float:
        return float(self.values[self.states.index(state)])


@dataclass(frozen=True)
class EffectiveTwoLevel:
    """S1/2-D5/2 line after adiabatic elimination of P3/2.

    ``detuning`` is the cooling-laser detuning from the light-shifted line
    (equal to ``-light_shift`` when no cooling beam is supplied) and
    ``saturation`` is 2 Omega^2 / gamma^2 for the cooling beam.
    """

    gamma: float
    light_shift: float
    detuning: float = 0.0
    saturation: float = 0.0

    def scattering_rate(self, detuning: float | np.ndarray | None = None):
        d = self.detuning if detuning is None else detuning
        s = self.saturation
        return 0.5 * self.gamma * s / (1.0 + s + 4.0 * np.square(d) / self.gamma**2)


# -- beam classification ------------------------------------------------------


def _transition_for(scheme: LevelScheme, beam: LaserBeam) -> Transition:
    try:
        return scheme.find_transition(beam.wavelength, tol=1e-9)
    except ValueError:
        raise ValueError(f"beam at {beam.wavelength * 1e9:.3f} nm matches no transition") from None


def _default_cooling(scheme: LevelScheme) -> Transition:
    quads = [t for t in scheme.transitions if t.kind == "quadrupole"]
    if not quads:
        raise ValueError("scheme has no quadrupole line")
    return next((t for t in quads if t.channel == 729), quads[0])


def _is_assist(tr: Transition, cooling: Transition) -> bool:
    # dipole line that empties the upper level of the cooling line
    return tr.kind == "dipole" and tr.lower == cooling.upper


def effective_decay_rate(assist_beam: LaserBeam | None, scheme: LevelScheme,
                         cooling_beam: LaserBeam | None = None) -> EffectiveTwoLevel:
    """Effective linewidth and light shift of the metastable D level.

    gamma' = gamma_D + beta * Gamma * Omega^2 / (Gamma^2 + 4 Delta^2 + 2 Omega^2)
    with beta the fraction of P decays that do not return to D; the D light
    shift is Delta * Omega^2 / (Gamma^2 + 4 Delta^2 + 2 Omega^2).
    """
    if cooling_beam is not None:
        cool_tr = _transition_for(scheme, cooling_beam)
        if cool_tr.kind != "quadrupole":
            raise ValueError("cooling beam must drive a quadrupole line")
    else:
        cool_tr = _default_cooling(scheme)
    if assist_beam is None:
        gamma_d = scheme.total_rate(cool_tr.upper)
        return _with_cooling(EffectiveTwoLevel(gamma_d, 0.0, 0.0), scheme, cooling_beam, cool_tr)
    tr = _transition_for(scheme, assist_beam)
    if not _is_assist(tr, cool_tr):
        raise ValueError(f"{assist_beam.wavelength * 1e9:.1f} nm beam does not drive an assisting transition")
    gamma_d = scheme.total_rate(tr.lower)
    big_gamma = scheme.total_rate(tr.upper)
    beta = 1.0 - tr.branching
    omega = rabi_from_power(assist_beam, tr)
    delta = assist_beam.detuning
    denom = big_gamma**2 + 4.0 * delta**2 + 2.0 * omega**2
    gamma_eff = gamma_d + beta * big_gamma * omega**2 / denom
    shift = delta * omega**2 / denom
    return _with_cooling(EffectiveTwoLevel(gamma_eff, shift), scheme, cooling_beam, cool_tr)


def _with_cooling(eff: EffectiveTwoLevel, scheme, cooling_beam, cool_tr) -> EffectiveTwoLevel:
    if cooling_beam is None:
        return EffectiveTwoLevel(eff.gamma, eff.light_shift, -eff.light_shift)
    omega = rabi_from_power(cooling_beam, cool_tr)
    return EffectiveTwoLevel(
        eff.gamma, eff.light_shift, cooling_beam.detuning - eff.light_shift, 2.0 * omega**2 / eff.gamma**2
    )


# -- compiled rate model ------------------------------------------------------


@dataclass(frozen=True)
class _Pump:
    lower: int
    upper: int
    strength: float  # Omega^2 of this component
    width: float  # Lorentzian FWHM
    detuning: float  # laser detuning from this component at rest
    beam: int


class RateModel:
    """Generator factory for one laser/field configuration.

    Velocity enters only through the Doppler shift of each pumped component,
    so the spontaneous part is assembled once and the stimulated part is
    evaluated in bulk for arrays of velocities.
    """

    def __init__(self, scheme: LevelScheme, beams, bfield=(0.0, 0.0, 0.0), zeeman_resolved: bool = False):
        self.scheme = scheme
        self.beams = tuple(beams)
        self.zeeman_resolved = bool(zeeman_resolved)
        b = np.asarray(bfield, dtype=float)
        bmag = float(np.linalg.norm(b))
        self.bfield = bmag
        self.bfield_dir = b / bmag if bmag > 0 else np.array([0.0, 0.0, 1.0])

        if self.zeeman_resolved:
            self.states = tuple(
                f"{lv.name}[{format_m(m)}]" for lv in scheme.levels for m in lv.sublevels
            )
            self._offset = {}
            i = 0
            for lv in scheme.levels:
                self._offset[lv.name] = i
                i += lv.multiplicity
        else:
            self.states = scheme.level_names
            self._offset = {lv.name: scheme.index(lv.name) for lv in scheme.levels}
        self.n = len(self.states)
        self.level_of_state = np.array(
            [scheme.index(s.split("[")[0]) for s in self.states], dtype=np.int64
        )

        self.beam_transitions = [_transition_for(scheme, beam) for beam in self.beams]
        cooling = next((b for b, t in zip(self.beams, self.beam_transitions) if t.kind == "quadrupole"), None)
        cool_tr = _transition_for(scheme, cooling) if cooling is not None else _default_cooling(scheme)
        assist = next((b for b, t in zip(self.beams, self.beam_transitions) if _is_assist(t, cool_tr)), None)
        self.effective = effective_decay_rate(assist, scheme, cooling)

        self.base = self._spontaneous()
        self.pumps = self._pumps()
        self._p_lo = np.array([p.lower for p in self.pumps], dtype=np.int64)
        self._p_up = np.array([p.upper for p in self.pumps], dtype=np.int64)
        self._p_s = np.array([p.strength for p in self.pumps])
        self._p_w = np.array([p.width for p in self.pumps])
        self._p_d = np.array([p.detuning for p in self.pumps])
        self._p_beam = np.array([p.beam for p in self.pumps], dtype=np.int64)
        self.beam_k = np.array([beam.k_vector for beam in self.beams]).reshape(-1, 3)
        self._p_k = self.beam_k[self._p_beam] if self.pumps else np.zeros((0, 3))
        self.channels = tuple(tr.channel for tr in scheme.transitions)

    # sublevel helpers
    def _idx(self, level: str, m: float | None = None) -> int:
        if not self.zeeman_resolved:
            return self._offset[level]
        lv = self.scheme.level(level)
        return self._offset[level] + int(round(m + lv.J))

    def _spontaneous(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        for tr in self.scheme.transitions:
            rate = tr.partial_width
            if rate == 0.0:
                continue
            if not self.zeeman_resolved:
                lo, up = self._offset[tr.lower], self._offset[tr.upper]
                m[lo, up] += rate
                m[up, up] -= rate
                continue
            lv_lo = self.scheme.level(tr.lower)
            lv_up = self.scheme.level(tr.upper)
            for mu in lv_up.sublevels:
                up = self._idx(tr.upper, mu)
                for ml in lv_lo.sublevels:
                    q = int(round(mu - ml))
                    if abs(q) > tr.rank:
                        continue
                    frac = clebsch_gordan(lv_lo.J, ml, tr.rank, q, lv_up.J, mu) ** 2
                    if frac == 0.0:
                        continue
                    lo = self._idx(tr.lower, ml)
                    m[lo, up] += rate * frac
                    m[up, up] -= rate * frac
        return m

    def _pumps(self) -> list[_Pump]:
        pumps: list[_Pump] = []
        eff = self.effective
        for ib, (beam, tr) in enumerate(zip(self.beams, self.beam_transitions)):
            omega2 = rabi_from_power(beam, tr) ** 2
            if tr.kind == "quadrupole":
                width = eff.gamma
                center = beam.detuning - eff.light_shift
            else:
                width = self.scheme.total_rate(tr.upper) + self.scheme.total_rate(tr.lower)
                center = beam.detuning
            if not self.zeeman_resolved:
                pumps.append(_Pump(self._offset[tr.lower], self._offset[tr.upper], omega2, width, center, ib))
                continue
            lv_lo = self.scheme.level(tr.lower)
            lv_up = self.scheme.level(tr.upper)
            weights = coupling_weights(tr.kind, self.bfield_dir, beam.direction, beam.polarization)
            nq = 2 * tr.rank + 1
            norm = nq * lv_lo.multiplicity / lv_up.multiplicity
            for ml in lv_lo.sublevels:
                for mu in lv_up.sublevels:
                    q = int(round(mu - ml))
                    if abs(q) > tr.rank or weights.get(q, 0.0) <= 1e-15:
                        continue
                    cg2 = clebsch_gordan(lv_lo.J, ml, tr.rank, q, lv_up.J, mu) ** 2
                    if cg2 == 0.0:
                        continue
                    shift = shift_coefficient(lv_lo, lv_up, ml, mu) * MU_B * self.bfield / HBAR
                    pumps.append(_Pump(
                        self._idx(tr.lower, ml), self._idx(tr.upper, mu),
                        omega2 * norm * weights[q] * cg2, width, center - shift, ib,
                    ))
        return pumps

    def pump_rates(self, velocities) -> np.ndarray:
        """Stimulated rates (n_v, n_pumps) with a Lorentzian of each line's width."""
        v = np.atleast_2d(np.asarray(velocities, dtype=float))
        if not self.pumps:
            return np.zeros((v.shape[0], 0))
        det = self._p_d[None, :] - v @ self._p_k.T
        w = self._p_w[None, :]
        return self._p_s[None, :] * w / (w**2 + 4.0 * det**2)

    def matrices(self, velocities) -> np.ndarray:
        v = np.atleast_2d(np.asarray(velocities, dtype=float))
        r = self.pump_rates(v)
        out = np.broadcast_to(self.base, (v.shape[0], self.n, self.n)).copy()
        for k in range(len(self.pumps)):
            lo, up = self._p_lo[k], self._p_up[k]
            rk = r[:, k]
            out[:, up, lo] += rk
            out[:, lo, lo] -= rk
            out[:, lo, up] += rk
            out[:, up, up] -= rk
        return out

    def rate_matrix(self, velocity=(0.0, 0.0, 0.0)) -> RateMatrix:
        return RateMatrix(self.states, self.matrices(np.asarray(velocity, dtype=float)[None, :])[0])

    def steady_states(self, velocities) -> np.ndarray:
        """Stationary populations (n_v, n) for each velocity row."""
        mats = self.matrices(velocities)
        _check_unique(mats[0])
        return _solve_stationary(mats)

    def absorption_flux(self, velocities, pops: np.ndarray) -> np.ndarray:
        """Net photon absorption rate (n_v, n_beams) for each beam."""
        r = self.pump_rates(velocities)
        out = np.zeros((r.shape[0], len(self.beams)))
        for k in range(len(self.pumps)):
            net = r[:, k] * (pops[:, self._p_lo[k]] - pops[:, self._p_up[k]])
            out[:, self._p_beam[k]] += net
        return out

    def emission_rates(self, pops: np.ndarray) -> np.ndarray:
        """Spontaneous photon rate (n_v, n_transitions) per decay channel."""
        lev = np.zeros((pops.shape[0], len(self.scheme.levels)))
        np.add.at(lev.T, self.level_of_state, pops.T)
        out = np.empty((pops.shape[0], len(self.scheme.transitions)))
        for c, tr in enumerate(self.scheme.transitions):
            out[:, c] = lev[:, self.scheme.index(tr.upper)] * tr.partial_width
        return out


def _check_unique(m: np.ndarray) -> None:
    adj = (np.abs(m) > 0).astype(int)
    np.fill_diagonal(adj, 0)
    ncomp, labels = connected_components(adj.T, directed=True, connection="strong")
    # closed classes: strongly connected components with no exit
    closed = 0
    for c in range(ncomp):
        members = labels == c
        exits = adj.T[np.ix_(members, ~members)].any()
        if not exits:
            closed += 1
    if closed != 1:
        raise ValueError(f"rate graph has {closed} closed classes; steady state is not unique")


def _solve_stationary(mats: np.ndarray) -> np.ndarray:
    n = mats.shape[-1]
    a = mats.copy()
    a[..., -1, :] = 1.0
    rhs = np.zeros(mats.shape[:-1])
    rhs[..., -1] = 1.0
    p = np.linalg.solve(a, rhs[..., None])[..., 0]
    # one step of iterative refinement against the augmented system
    resid = rhs - np.einsum("...ij,...j->...i", a, p)
    p = p + np.linalg.solve(a, resid[..., None])[..., 0]
    p = np.where(np.abs(p) < 1e-15, 0.0, p)
    p = np.clip(p, 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


# -- public operations --------------------------------------------------------


def build_rate_matrix(scheme: LevelScheme, beams, velocity=(0.0, 0.0, 0.0),
                      bfield=(0.0, 0.0, 0.0), zeeman_resolved: bool = False) -> RateMatrix:
    """Rate generator for ``beams`` acting on an ion moving at ``velocity``.

    With ``zeeman_resolved`` the state space is the full set of magnetic
    sublevels, quantised along ``bfield`` (or +z when the field is zero).
    """
    return RateModel(scheme, beams, bfield, zeeman_resolved).rate_matrix(velocity)


def steady_state(m: RateMatrix) -> PopulationVector:
    """Normalised null vector of the generator.

    Raises ``ValueError`` when the pump/decay graph has more than one closed
    class, i.e. the stationary state is not unique.
    """
    _check_unique(m.matrix)
    p = _solve_stationary(m.matrix[None, :, :])[0]
    return PopulationVector(m.states, p)


def evolve_populations(m: RateMatrix, p0: PopulationVector, t: float) -> PopulationVector:
    """Populations after time ``t``, exp(M t) p0 by scaling and squaring."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if tuple(p0.states) != tuple(m.states):
        raise ValueError("population and matrix use different state lists")
    if t == 0:
        return PopulationVector(m.states, p0.values.copy())
    p = linalg.expm(m.matrix * t) @ p0.values
    return PopulationVector(m.states, p)


def scattering_rates(p: PopulationVector, scheme: LevelScheme) -> dict[int, float]:
    """Spontaneous photon emission rate per channel (keyed by nm label)."""
    lev = p.level_populations()
    out: dict[int, float] = {}
    for tr in scheme.transitions:
        out[tr.channel] = out.get(tr.channel, 0.0) + lev.get(tr.upper, 0.0) * tr.partial_width
    return out


def violet_rate(rates: dict[int, float]) -> float:
    """Rate reaching a detector that rejects red and infrared light."""
    return float(sum(rates.get(c, 0.0) for c in VIOLET_CHANNELS))
