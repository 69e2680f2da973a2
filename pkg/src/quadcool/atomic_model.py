"""Level structure, transition constants and Zeeman/geometry factors for Ca+.

All frequencies and rates are angular (rad/s); wavelengths are vacuum values
in metres; magnetic fields are in tesla.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import constants as const

HBAR = const.hbar
MU_B = const.physical_constants["Bohr magneton"][0]
AMU = const.atomic_mass
TWO_PI = 2.0 * np.pi

# Literature values for the decay data the cooling experiment does not quote.
P12_D32_BRANCHING = 0.064
P12_LINEWIDTH = TWO_PI * 22.3e6
D32_LINEWIDTH = TWO_PI * 0.135
ELECTRON_G = 2.002

UNIT_TOL = 1e-9


def lande_g(L: int, S: float, J: float, g_s: float = 2.0, g_l: float = 1.0) -> float:
    """Landé g-factor of an LS-coupled fine-structure level.

    With ``g_s = 2`` this is ``1 + [J(J+1) + S(S+1) - L(L+1)] / [2J(J+1)]``.
    """
    jj = J * (J + 1.0)
    ss = S * (S + 1.0)
    ll = L * (L + 1.0)
    return g_l * (jj - ss + ll) / (2.0 * jj) + g_s * (jj + ss - ll) / (2.0 * jj)


def _half(x: float) -> Fraction:
    return Fraction(round(2 * x), 2)


def format_m(m: float) -> str:
    f = _half(m)
    sign = "+" if f >= 0 else "-"
    return f"{sign}{abs(f)}"


@dataclass(frozen=True)
class Level:
    name: str
    L: int
    S: float
    J: float
    g: float

    @property
    def sublevels(self) -> tuple[float, ...]:
        n = int(round(2 * self.J)) + 1
        return tuple(-self.J + i for i in range(n))

    @property
    def multiplicity(self) -> int:
        return int(round(2 * self.J)) + 1


@dataclass(frozen=True)
class Transition:
    """A radiative channel ``upper -> lower``.

    ``gamma_upper`` is the *total* spontaneous rate of the upper level and
    ``branching`` the fraction of those decays that go through this channel.
    """

    lower: str
    upper: str
    wavelength: float
    kind: str  # "dipole" | "quadrupole"
    gamma_upper: float
    branching: float

    def __post_init__(self):
        if self.kind not in ("dipole", "quadrupole"):
            raise ValueError(f"unknown multipole kind {self.kind!r}")
        if not 0.0 <= self.branching <= 1.0:
            raise ValueError("branching fraction must lie in [0, 1]")
        if self.wavelength <= 0 or self.gamma_upper < 0:
            raise ValueError("wavelength must be positive and gamma non-negative")

    @property
    def rank(self) -> int:
        return 1 if self.kind == "dipole" else 2

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def partial_width(self) -> float:
        return self.gamma_upper * self.branching

    @property
    def channel(self) -> int:
        """Nearest-nanometre label used for photon bookkeeping (e.g. 393)."""
        return int(round(self.wavelength * 1e9))


@dataclass(frozen=True)
class LevelScheme:
    species: str
    mass: float
    levels: tuple[Level, ...]
    transitions: tuple[Transition, ...]

    def __post_init__(self):
        names = [lv.name for lv in self.levels]
        if len(set(names)) != len(names):
            raise ValueError("duplicate level names")
        for tr in self.transitions:
            if tr.lower not in names or tr.upper not in names:
                raise ValueError(f"transition {tr.lower}-{tr.upper} names an unknown level")
            dj = abs(self.level(tr.upper).J - self.level(tr.lower).J)
            if dj > tr.rank:
                raise ValueError(f"{tr.lower}-{tr.upper}: |dJ| = {dj} exceeds rank {tr.rank}")
        for lv in self.levels:
            total = self.branching_sum(lv.name)
            if total and abs(total - 1.0) > 1e-12:
                raise ValueError(f"branching fractions out of {lv.name} sum to {total!r}")

    @property
    def level_names(self) -> tuple[str, ...]:
        return tuple(lv.name for lv in self.levels)

    def level(self, name: str) -> Level:
        for lv in self.levels:
            if lv.name == name:
                return lv
        raise KeyError(name)

    def index(self, name: str) -> int:
        return self.level_names.index(name)

    def transition(self, lower: str, upper: str) -> Transition:
        for tr in self.transitions:
            if tr.lower == lower and tr.upper == upper:
                return tr
        raise KeyError(f"{lower}-{upper}")

    def decays_from(self, name: str) -> list[Transition]:
        return [tr for tr in self.transitions if tr.upper == name]

    def branching_sum(self, name: str) -> float:
        return float(sum(tr.branching for tr in self.decays_from(name)))

    def total_rate(self, name: str) -> float:
        rates = {tr.gamma_upper for tr in self.decays_from(name)}
        if len(rates) > 1:
            raise ValueError(f"inconsistent total decay rate for {name}")
        return rates.pop() if rates else 0.0

    def find_transition(self, wavelength: float, tol: float = 1e-9) -> Transition:
        """Transition whose wavelength lies within ``tol`` metres of ``wavelength``."""
        cands = [tr for tr in self.transitions if abs(tr.wavelength - wavelength) <= tol]
        if not cands:
            raise ValueError(f"no transition at {wavelength * 1e9:.3f} nm")
        return min(cands, key=lambda tr: abs(tr.wavelength - wavelength))

    # -- structured export ---------------------------------------------------
    def to_dict(self) -> dict:
        def tr_dict(tr: Transition) -> dict:
            return {
                "lower": tr.lower,
                "upper": tr.upper,
                "wavelength_nm": tr.wavelength * 1e9,
                "kind": tr.kind,
                "linewidth_MHz": tr.gamma_upper / TWO_PI / 1e6,
                "branching": tr.branching,
            }

        return {
            "species": self.species,
            "mass_amu": self.mass / AMU,
            "levels": {lv.name: {"L": lv.L, "S": lv.S, "J": lv.J, "g": lv.g} for lv in self.levels},
            "transitions": [tr_dict(tr) for tr in self.transitions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LevelScheme":
        levels = tuple(
            Level(name, int(v["L"]), float(v["S"]), float(v["J"]), float(v["g"]))
            for name, v in data["levels"].items()
        )

        def tr(d: dict) -> Transition:
            return Transition(
                d["lower"], d["upper"], float(d["wavelength_nm"]) * 1e-9, d["kind"],
                float(d["linewidth_MHz"]) * 1e6 * TWO_PI, float(d["branching"]),
            )

        return cls(
            species=data["species"],
            mass=float(data["mass_amu"]) * AMU,
            levels=levels,
            transitions=tuple(tr(d) for d in data["transitions"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LevelScheme":
        return cls.from_dict(json.loads(text))


def build_ca40_scheme(p12_d32_branching: float = P12_D32_BRANCHING, g_s: float = ELECTRON_G) -> LevelScheme:
    """Five-level 40Ca+ scheme (S1/2, P1/2, P3/2, D3/2, D5/2).

    The S1/2-D3/2 quadrupole line at 733 nm is included as the D3/2 decay
    channel; no default beam drives it.
    """
    gamma_p32 = TWO_PI * 23e6
    gamma_d52 = TWO_PI * 0.14
    spec = [("S1/2", 0, 0.5, 0.5), ("P1/2", 1, 0.5, 0.5), ("P3/2", 1, 0.5, 1.5),
            ("D3/2", 2, 0.5, 1.5), ("D5/2", 2, 0.5, 2.5)]
    levels = tuple(Level(n, L, S, J, lande_g(L, S, J, g_s=g_s)) for n, L, S, J in spec)
    b_p32_d52, b_p32_d32 = 0.07, 0.008
    transitions = (
        Transition("S1/2", "D5/2", 729.347e-9, "quadrupole", gamma_d52, 1.0),
        Transition("D5/2", "P3/2", 854.444e-9, "dipole", gamma_p32, b_p32_d52),
        Transition("D3/2", "P3/2", 850.036e-9, "dipole", gamma_p32, b_p32_d32),
        Transition("S1/2", "P3/2", 393.478e-9, "dipole", gamma_p32, 1.0 - b_p32_d52 - b_p32_d32),
        Transition("D3/2", "P1/2", 866.452e-9, "dipole", P12_LINEWIDTH, p12_d32_branching),
        Transition("S1/2", "P1/2", 396.959e-9, "dipole", P12_LINEWIDTH, 1.0 - p12_d32_branching),
        Transition("S1/2", "D3/2", 732.591e-9, "quadrupole", D32_LINEWIDTH, 1.0),
    )
    return LevelScheme("40Ca+", 39.96205 * AMU, levels, transitions)


# -- lasers ---------------------------------------------------------------------

ROTATING = "rotating"


@dataclass(frozen=True)
class LaserBeam:
    """A single driving field.

    Exactly one of ``power``/``waist`` (1/e^2 intensity radius) or ``rabi`` sets
    the coupling. ``polarization`` is a linear axis (3-vector) or ``"rotating"``
    for a polarization rotated fast compared with optical pumping.
    """

    wavelength: float
    detuning: float = 0.0
    power: float | None = None
    waist: float | None = None
    rabi: float | None = None
    direction: tuple[float, float, float] = (0.0, 0.0, 1.0)
    polarization: tuple[float, float, float] | str = ROTATING

    def __post_init__(self):
        has_power = self.power is not None or self.waist is not None
        if has_power == (self.rabi is not None):
            raise ValueError("specify either power+waist or rabi, not both/neither")
        if has_power and (self.power is None or self.waist is None):
            raise ValueError("power and waist must be given together")
        if has_power and (self.power < 0 or self.waist <= 0):
            raise ValueError("power must be >= 0 and waist > 0")
        if self.rabi is not None and self.rabi < 0:
            raise ValueError("rabi frequency must be >= 0")
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if d.shape != (3,) or n == 0:
            raise ValueError("direction must be a non-zero 3-vector")
        object.__setattr__(self, "direction", tuple(float(x) for x in d / n))
        if not isinstance(self.polarization, str):
            p = np.asarray(self.polarization, dtype=float)
            p = p / np.linalg.norm(p)
            if abs(p @ np.asarray(self.direction)) > 1e-6:
                raise ValueError("linear polarization must be transverse to the beam")
            object.__setattr__(self, "polarization", tuple(float(x) for x in p))
        elif self.polarization != ROTATING:
            raise ValueError(f"unknown polarization {self.polarization!r}")

    @property
    def k_vector(self) -> np.ndarray:
        return TWO_PI / self.wavelength * np.asarray(self.direction)

    def with_(self, **changes) -> "LaserBeam":
        return replace(self, **changes)


def rabi_from_power(beam: LaserBeam, transition: Transition) -> float:
    """Peak-intensity resonant Rabi frequency of ``beam`` on ``transition``.

    Uses I = 2P/(pi w^2), I_sat = 2 pi^2 hbar c G / (3 lambda^3) and
    Omega^2 = (I/I_sat) G^2 / 2 with G the partial linewidth of the channel.
    A beam that already carries ``rabi`` returns it unchanged.
    """
    if abs(beam.wavelength - transition.wavelength) > 1e-9:
        raise ValueError(
            f"beam at {beam.wavelength * 1e9:.3f} nm does not drive the "
            f"{transition.wavelength * 1e9:.3f} nm line"
        )
    if beam.rabi is not None:
        return float(beam.rabi)
    gp = transition.partial_width
    intensity = 2.0 * beam.power / (np.pi * beam.waist**2)
    i_sat = 2.0 * np.pi**2 * HBAR * const.c * gp / (3.0 * transition.wavelength**3)
    return float(np.sqrt(intensity / i_sat * gp**2 / 2.0))


# -- Zeeman structure and geometric coupling ---------------------------------


@dataclass(frozen=True)
class ZeemanLine:
    m_lower: float
    m_upper: float
    shift_coefficient: float
    geometry_factor: float = 1.0

    @property
    def delta_m(self) -> int:
        return int(round(self.m_upper - self.m_lower))


def shift_coefficient(lower: Level, upper: Level, m_lower: float, m_upper: float) -> float:
    return upper.g * m_upper - lower.g * m_lower


def zeeman_shift(line: ZeemanLine, bfield: float) -> float:
    """Angular-frequency shift of a Zeeman component in a field ``bfield`` (T)."""
    if bfield < 0:
        raise ValueError("field magnitude must be non-negative")
    return line.shift_coefficient * MU_B * bfield / HBAR


def _check_unit(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,) or abs(np.linalg.norm(a) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit 3-vector")
    return a


def _frame(axis: np.ndarray) -> np.ndarray:
    """Rows are x', y', z' unit vectors with z' along ``axis``."""
    z = axis / np.linalg.norm(axis)
    trial = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = trial - (trial @ z) * z
    x /= np.linalg.norm(x)
    return np.vstack([x, np.cross(z, x), z])


def _quadrupole_components(bfield_dir, k_dir, pol_dir) -> dict[int, float]:
    rot = _frame(bfield_dir)
    e = rot @ pol_dir
    n = rot @ k_dir
    t = 0.5 * (np.outer(e, n) + np.outer(n, e))
    norm2 = float(np.sum(t * t))
    comps = {
        2: 0.5 * complex(t[0, 0] - t[1, 1], 2 * t[0, 1]),
        1: -complex(t[0, 2], t[1, 2]),
        0: np.sqrt(1.5) * t[2, 2],
        -1: complex(t[0, 2], -t[1, 2]),
        -2: 0.5 * complex(t[0, 0] - t[1, 1], -2 * t[0, 1]),
    }
    return {q: float(abs(c) ** 2 / norm2) for q, c in comps.items()}


def quadrupole_geometry_factor(bfield_dir, k_dir, pol_dir, delta_m: int) -> float:
    """Relative coupling amplitude of a Delta m = ``delta_m`` quadrupole component.

    The symmetric tensor sym(pol x k) is expressed in spherical components
    about the field axis and normalised so that the squared factors over the
    five Delta m channels sum to one.
    """
    b = _check_unit(bfield_dir, "bfield_dir")
    k = _check_unit(k_dir, "k_dir")
    e = _check_unit(pol_dir, "pol_dir")
    if abs(e @ k) > 1e-6:
        raise ValueError("polarization is not transverse to k")
    if abs(delta_m) > 2:
        raise ValueError("|delta_m| must be <= 2")
    return float(np.sqrt(_quadrupole_components(b, k, e)[int(delta_m)]))


def _transverse_pair(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    f = _frame(k)
    return f[0], f[1]


def coupling_weights(kind: str, bfield_dir, k_dir, polarization) -> dict[int, float]:
    """Squared Delta m weights (summing to one) for a beam of given polarization.

    A rotating polarization is the equal-weight average of two orthogonal
    linear polarizations transverse to ``k_dir``.
    """
    b = np.asarray(bfield_dir, dtype=float)
    k = np.asarray(k_dir, dtype=float)
    if isinstance(polarization, str):
        pols = _transverse_pair(k)
    else:
        pols = (np.asarray(polarization, dtype=float),)
    out: dict[int, float] = {}
    for e in pols:
        if kind == "quadrupole":
            w = _quadrupole_components(b, k, e)
        else:
            ep = _frame(b) @ e
            w = {0: ep[2] ** 2, 1: 0.5 * (ep[0] ** 2 + ep[1] ** 2), -1: 0.5 * (ep[0] ** 2 + ep[1] ** 2)}
        for q, val in w.items():
            out[q] = out.get(q, 0.0) + val / len(pols)
    return out


@lru_cache(maxsize=None)
def _cg_cached(j1: Fraction, m1: Fraction, j2: int, m2: int, j: Fraction, m: Fraction) -> float:
    from sympy import Rational
    from sympy.physics.wigner import clebsch_gordan

    r = lambda f: Rational(f.numerator, f.denominator)  # noqa: E731
    return float(clebsch_gordan(r(j1), j2, r(j), r(m1), m2, r(m)))


def clebsch_gordan(j1: float, m1: float, j2: int, m2: int, j: float, m: float) -> float:
    """<j1 m1; j2 m2 | j m> for half-integer angular momenta."""
    return _cg_cached(_half(j1), _half(m1), int(j2), int(m2), _half(j), _half(m))


def zeeman_lines(scheme: LevelScheme, transition: Transition, bfield_dir=(0.0, 0.0, 1.0),
                 k_dir=(0.0, 0.0, 1.0), polarization=(1.0, 0.0, 0.0)) -> list[ZeemanLine]:
    """All Zeeman components of ``transition`` allowed by its multipole rank.

    ``geometry_factor`` is the square root of the Delta m weight for the given
    beam geometry; for the 729 nm manifold there are ten components.
    """
    lo = scheme.level(transition.lower)
    up = scheme.level(transition.upper)
    w = coupling_weights(transition.kind, bfield_dir, k_dir, polarization)
    lines = []
    for ml in lo.sublevels:
        for mu in up.sublevels:
            dm = int(round(mu - ml))
            if abs(dm) > transition.rank:
                continue
            lines.append(ZeemanLine(ml, mu, shift_coefficient(lo, up, ml, mu), float(np.sqrt(w[dm]))))
    return lines
