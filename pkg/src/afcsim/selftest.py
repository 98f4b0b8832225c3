"""Invariant checks and oracle cross-checks run by ``afcsim selftest``."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .afc_memory import (
    CombSpec,
    DipoleEnsemble,
    analytic_efficiency,
    build_comb,
    dipole_sum_oracle,
    numeric_efficiency,
    propagate,
    pulse_for,
    transfer_function,
)
from .photon_statistics import (
    MemoryChannel,
    SourceConfig,
    build_histogram,
    g2_from_histogram,
    simulate_run,
)
from .spectral_dynamics import HoleDecayModel, LevelStructure, SpectralGrid, burn_hole, relax


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


class CheckFailed(Exception):
    pass


def _require(condition, message):
    if not condition:
        raise CheckFailed(message)


def check_passivity(rng) -> str:
    worst = -np.inf
    for _ in range(5):
        n = 2048
        od = np.abs(np.cumsum(rng.normal(0, 0.3, n))) + rng.random(n) * 2
        grid = SpectralGrid(np.linspace(-500, 500, n), od)
        h = transfer_function(grid)
        pulse = pulse_for(h, 2.0 + 2.0 * rng.random(), float(rng.uniform(-100, 100)))
        out = propagate(pulse, h)
        worst = max(worst, out.energy / pulse.energy)
        _require(out.energy <= pulse.energy * (1 + 1e-12), "output energy exceeds input")
        _require(np.all(h.amplitude <= 1.0), "|H| > 1 on a passive absorber")
    return f"max energy ratio {worst:.4f}"


def check_causality(rng) -> str:
    spec = CombSpec(delta=1000 / 48, finesse=2.0, bandwidth=2.0, peak_od=2.0, background_od=0.3)
    t, h = transfer_function(build_comb(spec)).impulse_response()
    mag = np.abs(h)
    dt = t[1] - t[0]
    pre = mag[t < -dt].max() / mag.max()
    _require(pre < 1e-6, f"acausal response {pre:.2e} of peak")
    return f"max |h(t<0)|/peak = {pre:.1e}"


def check_burn_conservation(rng) -> str:
    worst = 0.0
    for _ in range(5):
        field = float(rng.uniform(5_000, 20_000))
        grid = SpectralGrid.uniform(-150, 150, 0.1, float(rng.uniform(0.5, 3)))
        after = burn_hole(grid, float(rng.uniform(-20, 20)), pump_strength=float(rng.uniform(0.1, 10)),
                          levels=LevelStructure(field=field), spin_broadening=float(rng.choice([0, 50])))
        rel = abs(after.area() - grid.area()) / grid.area()
        worst = max(worst, rel)
        _require(rel < 1e-6, f"area changed by {rel:.2e}")
    return f"max relative area change {worst:.1e}"


def check_relax_contraction(rng) -> str:
    base = SpectralGrid.uniform(-50, 50, 0.1, 1.0)
    burned = burn_hole(base, 0.0, pump_strength=5.0)
    model = HoleDecayModel(0.06, 1.36, 0.5)
    prev = np.max(np.abs(burned.od - base.od))
    for delay in (0.01, 0.1, 1.0, 10.0):
        dev = np.max(np.abs(relax(burned, base, delay, model).od - base.od))
        _require(dev <= prev + 1e-15, "relaxation grew the deviation")
        prev = dev
    return f"deviation after 10 s: {prev:.2e}"


def check_histogram_conservation(rng) -> str:
    src = SourceConfig(mean_pairs=0.1, signal_path_efficiency=0.5, idler_path_efficiency=0.5,
                       dark_rate_signal=1e5, dark_rate_idler=1e5)
    rec = simulate_run(src, MemoryChannel(0.5, 0.2), 2e-4, seed=int(rng.integers(1 << 31)))
    max_offset = 60.0
    hist = build_histogram(rec, 0.1, max_offset)
    diff = rec.signal[:, None] - rec.idler[None, :]
    brute = int(np.count_nonzero(np.abs(diff) <= max_offset))
    _require(hist.total == brute, f"histogram holds {hist.total} pairs, brute force {brute}")
    return f"{brute} pairs counted"


def check_determinism(rng) -> str:
    src = SourceConfig(mean_pairs=0.05, signal_path_efficiency=0.3, idler_path_efficiency=0.3,
                       dark_rate_idler=1e4, spurious_mode_fraction=0.1)
    seed = int(rng.integers(1 << 31))
    a = simulate_run(src, MemoryChannel(0.3, 0.05), 5e-3, seed)
    b = simulate_run(src, MemoryChannel(0.3, 0.05), 5e-3, seed)
    c = simulate_run(src, MemoryChannel(0.3, 0.05), 5e-3, seed + 1)
    _require(np.array_equal(a.signal, b.signal) and np.array_equal(a.idler, b.idler), "same seed differs")
    _require(not np.array_equal(a.idler, c.idler), "different seeds agree")
    return f"{a.signal.size + a.idler.size} events reproduced"


def check_efficiency_triangle(rng) -> str:
    spec = CombSpec(delta=1000 / 48, finesse=3.0, bandwidth=2.0, peak_od=2.0, background_od=0.3)
    ana = analytic_efficiency(spec)
    num = numeric_efficiency(spec).efficiency(1)
    ens = DipoleEnsemble.from_grid(build_comb(spec), 50_000, rng, floor=spec.background_od)
    dt = spec.contrast / spec.finesse
    orc = dt ** 2 * math.exp(-dt - spec.background_od) * dipole_sum_oracle(ens, [spec.storage_time])[0]
    for name, val in (("numeric", num), ("oracle", orc)):
        _require(abs(val / ana - 1) < 0.05, f"{name} efficiency {val:.4f} vs analytic {ana:.4f}")
    return f"analytic {ana:.4f}, numeric {num:.4f}, oracle {orc:.4f}"


def check_thermal_g2(rng) -> str:
    mu = 0.05
    rec = simulate_run(SourceConfig(mean_pairs=mu), MemoryChannel(), 2e6 * 12.5e-9,
                       seed=int(rng.integers(1 << 31)))
    est = g2_from_histogram(build_histogram(rec))
    _require(abs(est.value - (1 + 1 / mu)) < 3 * est.std_error, f"g2 {est.value:.2f} +- {est.std_error:.2f}")
    return f"g2 = {est.value:.2f} +- {est.std_error:.2f} (expect {1 + 1 / mu:.0f})"


def check_linearity(rng) -> str:
    grid = build_comb(CombSpec(delta=50.0, finesse=2.0, bandwidth=1.0, peak_od=1.5, background_od=0.1))
    h = transfer_function(grid)
    p = pulse_for(h, 2.0)
    a = complex(rng.normal(), rng.normal())
    lhs = propagate(p.scaled(a), h).samples
    rhs = a * propagate(p, h).samples
    err = np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))
    _require(err < 1e-12, f"nonlinear response {err:.1e}")
    return f"relative error {err:.1e}"


CHECKS = [
    ("passivity", check_passivity),
    ("causality", check_causality),
    ("burn_conservation", check_burn_conservation),
    ("relax_contraction", check_relax_contraction),
    ("histogram_conservation", check_histogram_conservation),
    ("determinism", check_determinism),
    ("linearity", check_linearity),
    ("efficiency_triangle", check_efficiency_triangle),
    ("thermal_g2", check_thermal_g2),
]


def run_all(seed: int = 0) -> list[CheckResult]:
    results = []
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        try:
            detail = fn(rng)
            ok = True
        except CheckFailed as exc:
            detail, ok = str(exc), False
        results.append(CheckResult(name, ok, detail, time.perf_counter() - t0))
    return results
