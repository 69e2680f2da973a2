"""Time the integrator and Coulomb kernels on both backends.

    python3 benchmarks/bench_kernels.py --ions 4 --steps 200000
"""

import argparse
import time

import numpy as np

from quadcool import _kernels
from quadcool.experiments import ScanConfig, cooling_profile
from quadcool.trap_md import NoiseModel, integrate, thermal_ions


def per_step(backend, ions, trap, prof, steps, repeat):
    dt = 1.0 / (50 * max(trap.omega_z, trap.omega_r))
    best = np.inf
    for r in range(repeat):
        t = time.perf_counter()
        integrate(ions, trap, prof, NoiseModel(), t_end=steps * dt, seed=r, log_events=False,
                  sample_interval=steps * dt, backend=backend)
        best = min(best, time.perf_counter() - t)
    return best / steps


def force_call(backend, ions, trap, calls):
    x = np.array([i.position for i in ions])
    m = np.full(len(ions), trap.mass)
    kappa = trap.spring_constants(m)
    f = np.zeros_like(x)
    kern = _kernels.get_force_kernel(backend)
    kern(x, kappa, trap.coulomb_constant, f)
    t = time.perf_counter()
    for _ in range(calls):
        kern(x, kappa, trap.coulomb_constant, f)
    return (time.perf_counter() - t) / calls


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ions", type=int, default=4)
    ap.add_argument("--steps", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    cfg = ScanConfig(n_ions=args.ions)
    trap = cfg.trap
    prof = cooling_profile(cfg, -0.5 * cfg.gamma_eff())
    ions = thermal_ions(args.ions, trap, 2e-3, np.random.default_rng(0))
    # compile outside the timed region
    per_step("numba", ions, trap, prof, 1000, 1)
    numpy_steps = max(args.steps // 200, 500)
    rows = [
        ("integrate step", per_step("numba", ions, trap, prof, args.steps, args.repeat),
         per_step("numpy", ions, trap, prof, numpy_steps, args.repeat)),
        ("force kernel", force_call("numba", ions, trap, 100_000), force_call("numpy", ions, trap, 2000)),
    ]
    print(f"{args.ions} ions")
    print(f"{'kernel':<16}{'numba':>12}{'numpy':>12}{'speed-up':>10}")
    for name, a, b in rows:
        print(f"{name:<16}{a * 1e9:>10.0f}ns{b * 1e9:>10.0f}ns{b / a:>10.0f}")


if __name__ == "__main__":
    main()
