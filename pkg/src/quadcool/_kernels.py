"""Hot loops of the molecular-dynamics integrator.

Two implementations of one algorithm: a scalar kernel compiled with numba
and a numpy version vectorised over ions.  ``QUADCOOL_BACKEND`` selects the
default (``numba`` unless numba is missing, or ``numpy``).  Both consume the
same pre-drawn random pools in the same order, so a seed fixes the noise
realisation independently of the backend.

Status codes returned in ``state[STATUS]``:
0 done, 1 random pool low, 2 event log full, 3 non-finite state,
4 pool exhausted inside a step.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
    _jit = njit(cache=True, nogil=True, error_model="numpy")
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def _jit(fn):
        return fn

UPOS, GPOS, CPOS, SPOS, EPOS, STATUS = range(6)
OK, POOL_LOW, LOG_FULL, NONFINITE, POOL_EMPTY = range(5)
# uniforms reserved per ion per step before a chunk returns for a refill
U_PER_STEP = 40
LOG_MARGIN = 64


def default_backend() -> str:
    name = os.environ.get("QUADCOOL_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"QUADCOOL_BACKEND must be 'numba' or 'numpy', not {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


# -- compiled scalar kernel ----------------------------------------------------


@_jit
def _coulomb(x, coul, out):
    n = x.shape[0]
    for i in range(n):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
        out[i, 2] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i, 0] - x[j, 0]
            dy = x[i, 1] - x[j, 1]
            dz = x[i, 2] - x[j, 2]
            r2 = dx * dx + dy * dy + dz * dz
            s = coul / (r2 * math.sqrt(r2))
            out[i, 0] += s * dx
            out[i, 1] += s * dy
            out[i, 2] += s * dz
            out[j, 0] -= s * dx
            out[j, 1] -= s * dy
            out[j, 2] -= s * dz


@_jit
def _forces(x, kappa, coul, out):
    _coulomb(x, coul, out)
    n = x.shape[0]
    for i in range(n):
        for a in range(3):
            out[i, a] -= kappa[i, a] * x[i, a]


@_jit
def md_chunk_numba(
    x, v, f, inv_mass, kappa, coul, dt, t0, step0, nsteps,
    addressed, ehat, u0, du, rates, kick, is_emission, force_tab, diff_tab, lam_max, recoil,
    next_t, upool, gpool, heat_sigma, col_t, col_ion, col_dv,
    sample_every, out_x, out_v, ev_t, ev_ion, ev_type,
    counts, impulse, exp_impulse, imp_var, state,
):
    n = x.shape[0]
    nu = rates.shape[0]
    ntypes = rates.shape[1]
    nupool = upool.shape[0]
    ngpool = gpool.shape[0]
    ncol = col_t.shape[0]
    heating = False
    for i in range(n):
        for a in range(3):
            if heat_sigma[i, a] > 0.0:
                heating = True
    frad = np.zeros((n, 3))
    rate_i = np.zeros(ntypes)
    inv_du = 1.0 / du
    since = (step0 % sample_every)
    for s in range(nsteps):
        step = step0 + s
        if state[UPOS] + U_PER_STEP * n > nupool:
            state[STATUS] = POOL_LOW
            return s
        if heating and state[GPOS] + 3 * n > ngpool:
            state[STATUS] = POOL_LOW
            return s
        if state[EPOS] + LOG_MARGIN * n > ev_t.shape[0]:
            state[STATUS] = LOG_FULL
            return s
        t_end = t0 + (step + 1) * dt

        # deterministic cooling force (recoil disabled)
        for i in range(n):
            frad[i, 0] = 0.0
            frad[i, 1] = 0.0
            frad[i, 2] = 0.0
        if not recoil:
            for i in range(n):
                if addressed[i]:
                    u = v[i, 0] * ehat[0] + v[i, 1] * ehat[1] + v[i, 2] * ehat[2]
                    g = (u - u0) * inv_du
                    if g <= 0.0:
                        j, w = 0, 0.0
                    elif g >= nu - 1:
                        j, w = nu - 2, 1.0
                    else:
                        j = int(g)
                        w = g - j
                    for a in range(3):
                        frad[i, a] = force_tab[j, a] * (1.0 - w) + force_tab[j + 1, a] * w
        # kick, drift, kick
        for i in range(n):
            for a in range(3):
                v[i, a] += 0.5 * dt * (f[i, a] + frad[i, a]) * inv_mass[i]
                x[i, a] += dt * v[i, a]
        _forces(x, kappa, coul, f)
        for i in range(n):
            if not recoil and addressed[i]:
                u = v[i, 0] * ehat[0] + v[i, 1] * ehat[1] + v[i, 2] * ehat[2]
                g = (u - u0) * inv_du
                if g <= 0.0:
                    j, w = 0, 0.0
                elif g >= nu - 1:
                    j, w = nu - 2, 1.0
                else:
                    j = int(g)
                    w = g - j
                for a in range(3):
                    frad[i, a] = force_tab[j, a] * (1.0 - w) + force_tab[j + 1, a] * w
            for a in range(3):
                v[i, a] += 0.5 * dt * (f[i, a] + frad[i, a]) * inv_mass[i]

        # radiation: expected impulse bookkeeping and Poisson events by thinning
        for i in range(n):
            if not addressed[i]:
                continue
            u = v[i, 0] * ehat[0] + v[i, 1] * ehat[1] + v[i, 2] * ehat[2]
            g = (u - u0) * inv_du
            if g <= 0.0:
                j, w = 0, 0.0
            elif g >= nu - 1:
                j, w = nu - 2, 1.0
            else:
                j = int(g)
                w = g - j
            for a in range(3):
                exp_impulse[i, a] += dt * (force_tab[j, a] * (1.0 - w) + force_tab[j + 1, a] * w)
            imp_var[i] += dt * (diff_tab[j] * (1.0 - w) + diff_tab[j + 1] * w)
            if not recoil:
                continue
            while next_t[i] <= t_end:
                if state[UPOS] + 5 > nupool:
                    state[STATUS] = POOL_EMPTY
                    return s
                uu = v[i, 0] * ehat[0] + v[i, 1] * ehat[1] + v[i, 2] * ehat[2]
                g = (uu - u0) * inv_du
                if g <= 0.0:
                    j, w = 0, 0.0
                elif g >= nu - 1:
                    j, w = nu - 2, 1.0
                else:
                    j = int(g)
                    w = g - j
                total = 0.0
                for k in range(ntypes):
                    rate_i[k] = rates[j, k] * (1.0 - w) + rates[j + 1, k] * w
                    total += abs(rate_i[k])
                r_acc = upool[state[UPOS]]
                state[UPOS] += 1
                if r_acc * lam_max < total:
                    target = upool[state[UPOS]] * total
                    state[UPOS] += 1
                    k = 0
                    acc = abs(rate_i[0])
                    while acc < target and k < ntypes - 1:
                        k += 1
                        acc += abs(rate_i[k])
                    if is_emission[k]:
                        cz = 2.0 * upool[state[UPOS]] - 1.0
                        phi = 2.0 * math.pi * upool[state[UPOS] + 1]
                        state[UPOS] += 2
                        sz = math.sqrt(max(0.0, 1.0 - cz * cz))
                        px = kick[k, 0] * sz * math.cos(phi)
                        py = kick[k, 0] * sz * math.sin(phi)
                        pz = kick[k, 0] * cz
                        e = state[EPOS]
                        ev_t[e] = next_t[i]
                        ev_ion[e] = i
                        ev_type[e] = k
                        state[EPOS] = e + 1
                    else:
                        sgn = 1.0 if rate_i[k] >= 0.0 else -1.0
                        px = sgn * kick[k, 0]
                        py = sgn * kick[k, 1]
                        pz = sgn * kick[k, 2]
                    v[i, 0] += px * inv_mass[i]
                    v[i, 1] += py * inv_mass[i]
                    v[i, 2] += pz * inv_mass[i]
                    impulse[i, 0] += px
                    impulse[i, 1] += py
                    impulse[i, 2] += pz
                    counts[i, k] += 1
                next_t[i] += -math.log(1.0 - upool[state[UPOS]]) / lam_max
                state[UPOS] += 1

        if heating:
            for i in range(n):
                for a in range(3):
                    v[i, a] += heat_sigma[i, a] * gpool[state[GPOS]]
                    state[GPOS] += 1
        while state[CPOS] < ncol and col_t[state[CPOS]] <= t_end:
            c = state[CPOS]
            for a in range(3):
                v[col_ion[c], a] += col_dv[c, a]
            state[CPOS] = c + 1

        if (s & 63) == 63 or s == nsteps - 1:
            acc_f = 0.0
            for i in range(n):
                for a in range(3):
                    acc_f += x[i, a] * 0.0 + v[i, a] * 0.0
            if acc_f != 0.0:
                state[STATUS] = NONFINITE
                return s + 1
        since += 1
        if since == sample_every:
            since = 0
            p = state[SPOS]
            if p < out_x.shape[0]:
                for i in range(n):
                    for a in range(3):
                        out_x[p, i, a] = x[i, a]
                        out_v[p, i, a] = v[i, a]
                state[SPOS] = p + 1
    state[STATUS] = OK
    return nsteps


# -- numpy implementation ------------------------------------------------------


def coulomb_forces_numpy(x, coul):
    d = x[:, None, :] - x[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, np.inf)
    return coul * np.einsum("ij,ijk->ik", r2**-1.5, d)


def _interp_rows(table, g, nu):
    j = np.clip(np.floor(g).astype(np.int64), 0, nu - 2)
    w = np.clip(g - j, 0.0, 1.0)
    w = np.where(g <= 0.0, 0.0, np.where(g >= nu - 1, 1.0, w))
    return j, w


def md_chunk_numpy(
    x, v, f, inv_mass, kappa, coul, dt, t0, step0, nsteps,
    addressed, ehat, u0, du, rates, kick, is_emission, force_tab, diff_tab, lam_max, recoil,
    next_t, upool, gpool, heat_sigma, col_t, col_ion, col_dv,
    sample_every, out_x, out_v, ev_t, ev_ion, ev_type,
    counts, impulse, exp_impulse, imp_var, state,
):
    n = x.shape[0]
    nu = rates.shape[0]
    ntypes = rates.shape[1]
    heating = bool(np.any(heat_sigma > 0))
    im = inv_mass[:, None]
    addr = addressed.astype(bool)
    addr_idx = np.nonzero(addr)[0]
    for s in range(nsteps):
        step = step0 + s
        if state[UPOS] + U_PER_STEP * n > upool.shape[0]:
            state[STATUS] = POOL_LOW
            return s
        if heating and state[GPOS] + 3 * n > gpool.shape[0]:
            state[STATUS] = POOL_LOW
            return s
        if state[EPOS] + LOG_MARGIN * n > ev_t.shape[0]:
            state[STATUS] = LOG_FULL
            return s
        t_end = t0 + (step + 1) * dt

        frad = np.zeros((n, 3))
        if not recoil:
            j, w = _interp_rows(force_tab, (v[addr] @ ehat - u0) / du, nu)
            frad[addr] = force_tab[j] * (1 - w)[:, None] + force_tab[j + 1] * w[:, None]
        v += 0.5 * dt * (f + frad) * im
        x += dt * v
        f[:] = coulomb_forces_numpy(x, coul) - kappa * x
        if not recoil:
            j, w = _interp_rows(force_tab, (v[addr] @ ehat - u0) / du, nu)
            frad[addr] = force_tab[j] * (1 - w)[:, None] + force_tab[j + 1] * w[:, None]
        v += 0.5 * dt * (f + frad) * im

        if addr_idx.size:
            j, w = _interp_rows(force_tab, (v[addr] @ ehat - u0) / du, nu)
            exp_impulse[addr] += dt * (force_tab[j] * (1 - w)[:, None] + force_tab[j + 1] * w[:, None])
            imp_var[addr] += dt * (diff_tab[j] * (1 - w) + diff_tab[j + 1] * w)
        if recoil:
            for i in addr_idx[next_t[addr_idx] <= t_end]:
                while next_t[i] <= t_end:
                    if state[UPOS] + 5 > upool.shape[0]:
                        state[STATUS] = POOL_EMPTY
                        return s
                    g = (v[i] @ ehat - u0) / du
                    if g <= 0.0:
                        jj, ww = 0, 0.0
                    elif g >= nu - 1:
                        jj, ww = nu - 2, 1.0
                    else:
                        jj = int(g)
                        ww = g - jj
                    rate_i = rates[jj] * (1.0 - ww) + rates[jj + 1] * ww
                    absr = np.abs(rate_i)
                    total = absr.sum()
                    r_acc = upool[state[UPOS]]
                    state[UPOS] += 1
                    if r_acc * lam_max < total:
                        target = upool[state[UPOS]] * total
                        state[UPOS] += 1
                        k = min(int(np.searchsorted(np.cumsum(absr), target)), ntypes - 1)
                        if is_emission[k]:
                            cz = 2.0 * upool[state[UPOS]] - 1.0
                            phi = 2.0 * math.pi * upool[state[UPOS] + 1]
                            state[UPOS] += 2
                            sz = math.sqrt(max(0.0, 1.0 - cz * cz))
                            p = kick[k, 0] * np.array([sz * math.cos(phi), sz * math.sin(phi), cz])
                            e = state[EPOS]
                            ev_t[e] = next_t[i]
                            ev_ion[e] = i
                            ev_type[e] = k
                            state[EPOS] = e + 1
                        else:
                            p = (1.0 if rate_i[k] >= 0.0 else -1.0) * kick[k]
                        v[i] += p * inv_mass[i]
                        impulse[i] += p
                        counts[i, k] += 1
                    next_t[i] += -math.log(1.0 - upool[state[UPOS]]) / lam_max
                    state[UPOS] += 1

        if heating:
            g0 = state[GPOS]
            v += heat_sigma * gpool[g0:g0 + 3 * n].reshape(n, 3)
            state[GPOS] = g0 + 3 * n
        while state[CPOS] < col_t.shape[0] and col_t[state[CPOS]] <= t_end:
            c = state[CPOS]
            v[col_ion[c]] += col_dv[c]
            state[CPOS] = c + 1

        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            state[STATUS] = NONFINITE
            return s + 1
        if (step + 1) % sample_every == 0 and state[SPOS] < out_x.shape[0]:
            out_x[state[SPOS]] = x
            out_v[state[SPOS]] = v
            state[SPOS] += 1
    state[STATUS] = OK
    return nsteps


# -- dispatch -------------------------------------------------------------------


def _check(backend: str | None) -> str:
    backend = backend or default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def get_chunk_kernel(backend: str | None = None):
    return md_chunk_numba if _check(backend) == "numba" else md_chunk_numpy


def _numpy_forces(x, kappa, coul, out):
    out[:] = coulomb_forces_numpy(x, coul) - kappa * x


def get_force_kernel(backend: str | None = None):
    """Total conservative force (harmonic + Coulomb) for the chosen backend."""
    return _forces if _check(backend) == "numba" else _numpy_forces


def potential_energy(x, kappa, coul) -> float:
    d = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", d, d))
    iu = np.triu_indices(x.shape[0], 1)
    return float(0.5 * np.sum(kappa * x * x) + coul * np.sum(1.0 / r[iu]))
