"""Inhomogeneous line, superhyperfine level structure and spectral hole burning.

Units used throughout: detunings in MHz, magnetic field in gauss, coupling
slopes in kHz/G, times in seconds.  Optical depth follows the natural-log
convention, i.e. intensity transmission is ``exp(-od)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import DegenerateFitError, FitError, InvalidInputError

KHZ_PER_MHZ = 1000.0

#: Default hole lineshape FWHM (MHz) set by the burning-laser linewidth.
DEFAULT_HOLE_WIDTH = 3.0
#: Default spin-inhomogeneous FWHM (MHz) smearing the anti-holes.
DEFAULT_SPIN_BROADENING = 50.0
#: Minimum grid samples across the narrowest feature FWHM.
MIN_SAMPLES_PER_FEATURE = 10


# ---------------------------------------------------------------------------
# level structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinSpecies:
    """A host nucleus coupled to the erbium electron spin.

    ``slope_ground`` defaults to ``slope_excited`` when left as ``None``;
    only the excited-level slopes are resolved by hole burning.  ``weight``
    is the side-hole branching weight of the species (fraction of the
    pumped population that sees the cross transition).
    """

    name: str
    slope_excited: float
    slope_ground: float | None = None
    nuclear_spin: float = 0.5
    weight: float = 0.3

    def __post_init__(self):
        if self.slope_ground is None:
            object.__setattr__(self, "slope_ground", self.slope_excited)
        if self.slope_excited < 0 or self.slope_ground < 0:
            raise InvalidInputError(f"{self.name}: coupling slopes must be >= 0")
        twice = 2 * self.nuclear_spin
        if abs(twice - round(twice)) > 1e-9 or not 1 <= round(twice) <= 9:
            raise InvalidInputError(
                f"{self.name}: nuclear_spin must be one of 1/2, 1, ..., 9/2")
        if not 0.0 <= self.weight <= 1.0:
            raise InvalidInputError(f"{self.name}: weight must lie in [0, 1]")


NB93 = SpinSpecies("93Nb", slope_excited=1.15, nuclear_spin=4.5, weight=0.3)
LI7 = SpinSpecies("7Li", slope_excited=1.721, nuclear_spin=1.5, weight=0.3)
LI6 = SpinSpecies("6Li", slope_excited=0.572, nuclear_spin=1.0, weight=0.1)
DEFAULT_SPECIES = (NB93, LI7, LI6)


@dataclass(frozen=True)
class LevelStructure:
    """Electronic Zeeman slope (MHz/G), coupled nuclei, and applied field (G)."""

    species: tuple[SpinSpecies, ...] = DEFAULT_SPECIES
    field: float = 16500.0
    electronic_zeeman_slope: float = 1.6

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if self.field < 0:
            raise InvalidInputError("field must be >= 0")
        if self.electronic_zeeman_slope < 0:
            raise InvalidInputError("electronic_zeeman_slope must be >= 0")

    def with_field(self, field_gauss: float) -> "LevelStructure":
        return replace(self, field=field_gauss)

    @property
    def zeeman_splitting(self) -> float:
        """Ground-level electronic Zeeman splitting in MHz."""
        return self.electronic_zeeman_slope * self.field


def _khz_per_g_to_mhz(slope, field_gauss):
    return slope * field_gauss / KHZ_PER_MHZ


def _signed_pairs(entries):
    out = []
    for name, value in entries:
        out.append((name, -value))
        out.append((name, value))
    out.sort(key=lambda item: (abs(item[1]), item[1]))
    return out


def side_hole_detunings(levels: LevelStructure) -> list[tuple[str, float]]:
    """Side-hole positions ``(species, detuning_MHz)``, sorted by |detuning|."""
    return _signed_pairs(
        (sp.name, _khz_per_g_to_mhz(sp.slope_excited, levels.field))
        for sp in levels.species)


def anti_hole_detunings(levels: LevelStructure) -> list[tuple[str, float]]:
    """Anti-hole positions from excited/ground splitting differences and sums."""
    entries = []
    for sp in levels.species:
        entries.append((sp.name, _khz_per_g_to_mhz(abs(sp.slope_excited - sp.slope_ground), levels.field)))
        entries.append((sp.name, _khz_per_g_to_mhz(sp.slope_excited + sp.slope_ground, levels.field)))
    return _signed_pairs(entries)


# ---------------------------------------------------------------------------
# spectral grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Optical depth sampled on a uniform detuning axis (MHz)."""

    detuning: np.ndarray
    od: np.ndarray

    def __post_init__(self):
        det = np.array(self.detuning, dtype=float)
        od = np.array(self.od, dtype=float)
        if det.ndim != 1 or det.shape != od.shape or det.size < 2:
            raise InvalidInputError("detuning and od must be 1-D arrays of equal length >= 2")
        steps = np.diff(det)
        step = (det[-1] - det[0]) / (det.size - 1)
        if step <= 0 or np.any(steps <= 0):
            raise InvalidInputError("detuning axis must be strictly increasing")
        if np.max(np.abs(steps - step)) > 1e-6 * step + 1e-9 * np.max(np.abs(det)):
            raise InvalidInputError("detuning axis must be uniformly spaced")
        if not np.all(np.isfinite(od)):
            raise InvalidInputError("od must be finite")
        if od.min() < -1e-9:
            raise InvalidInputError("od must be >= 0 everywhere")
        od = np.clip(od, 0.0, None)
        det.flags.writeable = False
        od.flags.writeable = False
        object.__setattr__(self, "detuning", det)
        object.__setattr__(self, "od", od)

    @classmethod
    def uniform(cls, start: float, stop: float, step: float, od=0.0) -> "SpectralGrid":
        n = int(round((stop - start) / step)) + 1
        det = start + step * np.arange(n)
        return cls(det, np.broadcast_to(np.asarray(od, dtype=float), det.shape))

    @classmethod
    def flat(cls, span: float, step: float, od: float, center: float = 0.0) -> "SpectralGrid":
        """Flat line of constant optical depth spanning ``center ± span/2``."""
        return cls.uniform(center - span / 2, center + span / 2, step, od)

    @property
    def step(self) -> float:
        return (self.detuning[-1] - self.detuning[0]) / (self.detuning.size - 1)

    @property
    def span(self) -> float:
        return self.detuning[-1] - self.detuning[0]

    def __len__(self):
        return self.detuning.size

    def with_od(self, od) -> "SpectralGrid":
        return SpectralGrid(self.detuning, od)

    def same_axis(self, other: "SpectralGrid") -> bool:
        return (self.detuning.shape == other.detuning.shape
                and np.allclose(self.detuning, other.detuning, rtol=0, atol=1e-9 * self.step))

    def area(self) -> float:
        return float(self.od.sum() * self.step)

    def od_at(self, detuning):
        return np.interp(detuning, self.detuning, self.od)

    def contains(self, detuning: float) -> bool:
        return self.detuning[0] <= detuning <= self.detuning[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["detuning_MHz", "od"])
            for d, o in zip(self.detuning, self.od):
                writer.writerow([repr(float(d)), repr(float(o))])

    @classmethod
    def from_csv(cls, path) -> "SpectralGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or [c.strip() for c in rows[0]] != ["detuning_MHz", "od"]:
            raise InvalidInputError(f"{path}: expected header 'detuning_MHz,od'")
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
        return cls(data[:, 0], data[:, 1])


# ---------------------------------------------------------------------------
# hole dynamics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HoleDecayModel:
    """Multi-exponential relaxation of burned holes (lifetimes in s).

    The hole depth decays as ``w*exp(-t/fast) + (1-w)*exp(-t/slow)``.  A
    persistent component (the high-field superhyperfine trap) mixes in with
    ``weight_persistent``.  ``slow_lifetime=None`` means a single exponential.
    """

    fast_lifetime: float
    slow_lifetime: float | None = None
    weight_fast: float = 0.5
    persistent_lifetime: float | None = None
    weight_persistent: float = 0.0

    def __post_init__(self):
        if self.slow_lifetime is None:
            object.__setattr__(self, "weight_fast", 1.0)
        lifetimes = [t for t in (self.fast_lifetime, self.slow_lifetime, self.persistent_lifetime)
                     if t is not None]
        if any(not t > 0 for t in lifetimes):
            raise InvalidInputError("lifetimes must be > 0")
        if self.slow_lifetime is not None and not self.fast_lifetime < self.slow_lifetime:
            raise InvalidInputError("fast_lifetime must be shorter than slow_lifetime")
        if not 0.0 <= self.weight_fast <= 1.0:
            raise InvalidInputError("weight_fast must lie in [0, 1]")
        if not 0.0 <= self.weight_persistent <= 1.0:
            raise InvalidInputError("weight_persistent must lie in [0, 1]")
        if self.weight_persistent > 0 and self.persistent_lifetime is None:
            raise InvalidInputError("weight_persistent > 0 requires persistent_lifetime")

    def factor(self, delay):
        """Fraction of the initial hole depth remaining after ``delay`` seconds."""
        t = np.asarray(delay, dtype=float)
        out = self.weight_fast * np.exp(-t / self.fast_lifetime)
        if self.slow_lifetime is not None:
            out = out + (1.0 - self.weight_fast) * np.exp(-t / self.slow_lifetime)
        if self.persistent_lifetime is not None:
            out = (1.0 - self.weight_persistent) * out \
                + self.weight_persistent * np.exp(-t / self.persistent_lifetime)
        return out if out.ndim else float(out)


#: Slow lifetimes measured at the three low fields (G -> s); the fast 60 ms
#: component is field independent.
LOW_FIELD_SLOW_LIFETIMES = {350.0: 1.0, 600.0: 1.36, 800.0: 2.44}
FAST_HOLE_LIFETIME = 0.060
HIGH_FIELD_HOLE_LIFETIME = 600.0


def low_field_decay(field_gauss: float, weight_fast: float = 0.5) -> HoleDecayModel:
    try:
        slow = LOW_FIELD_SLOW_LIFETIMES[float(field_gauss)]
    except KeyError:
        raise InvalidInputError(
            f"no measured slow lifetime at {field_gauss} G; "
            f"known fields: {sorted(LOW_FIELD_SLOW_LIFETIMES)}") from None
    return HoleDecayModel(FAST_HOLE_LIFETIME, slow, weight_fast)


def high_field_decay() -> HoleDecayModel:
    """Superhyperfine population trap: a single 10 min lifetime."""
    return HoleDecayModel(FAST_HOLE_LIFETIME, persistent_lifetime=HIGH_FIELD_HOLE_LIFETIME,
                          weight_persistent=1.0)


@dataclass(frozen=True)
class HoleFeature:
    kind: str          # "central", "side" or "anti"
    detuning: float    # MHz from the burn frequency
    depth: float       # OD change, negative for holes
    width: float       # FWHM, MHz
    species: str | None = None

    def __post_init__(self):
        if self.kind not in ("central", "side", "anti"):
            raise InvalidInputError(f"unknown feature kind {self.kind!r}")
        if self.kind == "central" and self.detuning != 0:
            raise InvalidInputError("the central hole sits at zero detuning")


# ---------------------------------------------------------------------------
# hole burning
# ---------------------------------------------------------------------------

def lorentzian(x, fwhm):
    """Peak-normalised Lorentzian."""
    return 1.0 / (1.0 + (2.0 * np.asarray(x) / fwhm) ** 2)


def _check_resolution(grid, width, what):
    if width / grid.step < MIN_SAMPLES_PER_FEATURE:
        raise InvalidInputError(
            f"{what} of {width} MHz is resolved by only {width / grid.step:.1f} samples; "
            f"need >= {MIN_SAMPLES_PER_FEATURE} (grid step {grid.step} MHz)")


def _total_dose(dose: Callable, detuning, levels: LevelStructure):
    """Pump dose seen by ions whose main line sits at ``detuning``.

    Ions are also pumped through their superhyperfine cross transitions at
    ``± slope_excited * field``, weighted by the species branching weight.
    """
    total = dose(detuning)
    for sp in levels.species:
        shift = _khz_per_g_to_mhz(sp.slope_excited, levels.field)
        total = total + 0.5 * sp.weight * (dose(detuning + shift) + dose(detuning - shift))
    return total


def _deposit_positions(levels: LevelStructure):
    """Anti-hole offsets with population weights summing to one."""
    weights = np.array([sp.weight for sp in levels.species])
    if weights.sum() <= 0:
        z = levels.zeeman_splitting
        return [(-z, 0.5), (z, 0.5)]
    weights = weights / weights.sum()
    out = []
    for w, sp in zip(weights, levels.species):
        diff = _khz_per_g_to_mhz(abs(sp.slope_excited - sp.slope_ground), levels.field)
        total = _khz_per_g_to_mhz(sp.slope_excited + sp.slope_ground, levels.field)
        for pos in (-diff, diff, -total, total):
            out.append((pos, 0.25 * w))
    return out


def _circular_kernel(n, step, positions, spin_broadening):
    """Redistribution kernel on circular sample offsets.

    With ``spin_broadening == 0`` each position is a linear-interpolation tent
    (area preserving shift); otherwise a Lorentzian of that FWHM, wrapped and
    normalised to unit discrete sum.
    """
    offsets = np.fft.fftfreq(n, d=1.0 / n) * step   # 0, step, ..., -step
    kernel = np.zeros(n)
    for pos, weight in positions:
        if spin_broadening > 0:
            x = (offsets - pos + n * step / 2) % (n * step) - n * step / 2
            k = lorentzian(x, spin_broadening)
            kernel += weight * k / k.sum()
        else:
            frac, whole = math.modf(pos / step)
            i0 = int(whole)
            if frac < 0:
                frac += 1.0
                i0 -= 1
            kernel[i0 % n] += weight * (1.0 - frac)
            kernel[(i0 + 1) % n] += weight * frac
    return kernel


def _burn(grid: SpectralGrid, burned_fraction, positions, spin_broadening):
    """Remove ``od * burned_fraction`` and redeposit it as anti-holes.

    Population is bookkept on the grid as a closed circular window.  The
    deposited profile is weighted by ``1 - burned_fraction`` because ions
    shelved into a still-pumped frequency are pumped again; the result is
    renormalised so the redeposited area equals the retained removed area.
    """
    removed = grid.od * burned_fraction
    area = removed.sum()
    if area <= 0 or not positions:
        return grid.with_od(grid.od - removed)
    retained = sum(w for _, w in positions)
    kernel = _circular_kernel(len(grid), grid.step, positions, spin_broadening)
    spread = np.real(np.fft.ifft(np.fft.fft(removed) * np.fft.fft(kernel)))
    spread = np.clip(spread, 0.0, None)
    landing = spread * (1.0 - burned_fraction)
    norm = landing.sum()
    if norm <= 0:
        return grid.with_od(grid.od - removed)
    deposit = landing * (area * retained / norm)
    return grid.with_od(np.clip(grid.od - removed + deposit, 0.0, None))


def burn_hole(grid: SpectralGrid, pump_center: float, pump_width: float = DEFAULT_HOLE_WIDTH,
              pump_strength: float = 1.0, levels: LevelStructure | None = None,
              branching: float = 1.0, spin_broadening: float = DEFAULT_SPIN_BROADENING
              ) -> SpectralGrid:
    """Burn a spectral hole with a narrow-band CW pump.

    Steady-state saturation: ions whose (main or cross) transition overlaps
    the pump are shelved with probability
    ``branching * s*L / (1 + s*L)`` where ``L`` is the Lorentzian hole
    lineshape of FWHM ``pump_width`` and ``s`` is ``pump_strength``.  The
    shelved population reappears as anti-holes at
    :func:`anti_hole_detunings`, smeared by ``spin_broadening`` (FWHM, MHz;
    0 disables).
    """
    if levels is None:
        levels = LevelStructure()
    if pump_width <= 0:
        raise InvalidInputError("pump_width must be > 0")
    if pump_strength < 0:
        raise InvalidInputError("pump_strength must be >= 0")
    if not 0.0 <= branching <= 1.0:
        raise InvalidInputError("branching must lie in [0, 1]")
    if spin_broadening < 0:
        raise InvalidInputError("spin_broadening must be >= 0")
    if not grid.contains(pump_center):
        raise InvalidInputError(
            f"pump_center {pump_center} MHz outside grid "
            f"[{grid.detuning[0]}, {grid.detuning[-1]}]")
    _check_resolution(grid, pump_width, "pump_width")
    if spin_broadening > 0:
        _check_resolution(grid, spin_broadening, "spin_broadening")
    if pump_strength == 0 or branching == 0:
        return grid

    def dose(nu):
        return lorentzian(nu - pump_center, pump_width)

    if math.isinf(pump_strength):
        burned = np.full(len(grid), branching)
    else:
        r = pump_strength * _total_dose(dose, grid.detuning, levels)
        burned = branching * r / (1.0 + r)
    lo, hi = grid.detuning[0], grid.detuning[-1]
    positions = [(p, w) for p, w in _deposit_positions(levels) if lo <= pump_center + p <= hi]
    return _burn(grid, burned, positions, spin_broadening)


def relax(grid: SpectralGrid, baseline: SpectralGrid, delay: float,
          model: HoleDecayModel) -> SpectralGrid:
    """Let the deviation from ``baseline`` decay for ``delay`` seconds."""
    if delay < 0:
        raise InvalidInputError("delay must be >= 0")
    if not grid.same_axis(baseline):
        raise InvalidInputError("grid and baseline must share the same detuning axis")
    if delay == 0:
        return grid
    factor = model.factor(delay)
    return grid.with_od(np.clip(baseline.od + (grid.od - baseline.od) * factor, 0.0, None))


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

def locate_minimum(grid: SpectralGrid, guess: float, search: float = 2.0) -> float:
    """Sub-sample position of the OD minimum within ``guess ± search`` MHz."""
    mask = np.abs(grid.detuning - guess) <= search
    idx = np.flatnonzero(mask)
    if idx.size < 3:
        raise InvalidInputError(f"search window around {guess} MHz holds fewer than 3 samples")
    i = idx[np.argmin(grid.od[idx])]
    if i == 0 or i == len(grid) - 1:
        return float(grid.detuning[i])
    y0, y1, y2 = grid.od[i - 1:i + 2]
    curv = y0 - 2 * y1 + y2
    shift = 0.0 if curv <= 0 else 0.5 * (y0 - y2) / curv
    return float(grid.detuning[i] + shift * grid.step)


def hole_features(before: SpectralGrid, after: SpectralGrid, levels: LevelStructure,
                  pump_center: float = 0.0, pump_width: float = DEFAULT_HOLE_WIDTH,
                  spin_broadening: float = DEFAULT_SPIN_BROADENING) -> list[HoleFeature]:
    """Read the OD change at the predicted central, side- and anti-hole positions."""
    change = after.od - before.od

    def at(offset):
        return float(np.interp(pump_center + offset, after.detuning, change))

    feats = [HoleFeature("central", 0.0, at(0.0), pump_width)]
    for name, det in side_hole_detunings(levels):
        if after.contains(pump_center + det) and det != 0:
            feats.append(HoleFeature("side", det, at(det), pump_width, name))
    for name, det in anti_hole_detunings(levels):
        if after.contains(pump_center + det) and det != 0:
            feats.append(HoleFeature("anti", det, at(det), pump_width + spin_broadening, name))
    return feats


@dataclass(frozen=True)
class SideHoleFit:
    species: str
    negative: float     # MHz, fitted centre of the red-detuned side hole
    positive: float     # MHz, fitted centre of the blue-detuned side hole

    @property
    def detuning(self) -> float:
        """Mean magnitude of the two side-hole detunings."""
        return 0.5 * (abs(self.negative) + abs(self.positive))

    @property
    def uncertainty(self) -> float:
        """Half the mismatch between the two side-hole magnitudes."""
        return 0.5 * abs(abs(self.positive) - abs(self.negative))


def fit_side_holes(grid: SpectralGrid, levels: LevelStructure, pump_center: float = 0.0,
                   hole_width: float = DEFAULT_HOLE_WIDTH, search: float = 1.5,
                   background_spacing: float = 15.0) -> list[SideHoleFit]:
    """Locate every side-hole pair of a burned spectrum.

    The spectrum is modelled as a constant, a central Lorentzian hole, one
    Lorentzian per predicted side hole (free centre within ``search`` MHz,
    shared width) and a smooth background of broad Lorentzians on a fixed
    lattice that soaks up the anti-holes.  Amplitudes enter linearly and are
    projected out, so only centres and widths are iterated.
    """
    x = grid.detuning - pump_center
    y = grid.od
    sides = [(n, d) for n, d in side_hole_detunings(levels) if d != 0 and grid.contains(pump_center + d)]
    if not sides:
        raise DegenerateFitError("no side holes inside the grid")
    reach = max(abs(x[0]), abs(x[-1])) + 3 * background_spacing
    lattice = np.arange(-reach, reach + background_spacing / 2, background_spacing)
    n_s = len(sides)

    def design(q):
        cols = [np.ones_like(x), lorentzian(x, q[0])]
        cols += [lorentzian(x - c, q[1]) for c in q[3:]]
        cols += [lorentzian(x - c, q[2]) for c in lattice]
        return np.column_stack(cols)

    def residual(q):
        a = design(q)
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        return a @ coef - y

    centres = np.array([d for _, d in sides])
    q0 = np.r_[hole_width, hole_width, 2 * background_spacing, centres]
    lo = np.r_[hole_width / 6, hole_width / 6, background_spacing / 2, centres - search]
    hi = np.r_[6 * hole_width, 4 * hole_width, 6 * background_spacing, centres + search]
    res = optimize.least_squares(residual, q0, bounds=(lo, hi), x_scale="jac")
    if not res.success:
        raise FitError("side-hole fit did not converge", residual=float(np.sum(res.fun ** 2)))
    found: dict[str, dict[int, float]] = {}
    for (name, det), c in zip(sides, res.x[3:3 + n_s]):
        found.setdefault(name, {})[int(np.sign(det))] = float(c)
    return [SideHoleFit(name, v[-1], v[1]) for name, v in found.items() if -1 in v and 1 in v]


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------

def fit_side_hole_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares slope (kHz/G) of side-hole detuning vs field, with std error.

    ``points`` are ``(field_G, detuning_MHz)``.  The line has a free
    intercept.  With exactly two points the standard error is zero.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise DegenerateFitError("need at least two (field, detuning) points")
    x, y = pts[:, 0], pts[:, 1]
    xm = x.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx <= 1e-12 * max(1.0, np.sum(x ** 2)):
        raise DegenerateFitError("all field values are equal")
    slope = np.sum((x - xm) * (y - y.mean())) / sxx
    intercept = y.mean() - slope * xm
    n = x.size
    if n > 2:
        resid = y - (intercept + slope * x)
        stderr = math.sqrt(np.sum(resid ** 2) / (n - 2) / sxx)
    else:
        stderr = 0.0
    return float(slope * KHZ_PER_MHZ), float(stderr * KHZ_PER_MHZ)


def _nnls_amplitudes(basis, y):
    amps, rnorm = optimize.nnls(basis, y)
    return amps, rnorm ** 2


def _single_exp_fit(t, y):
    best = None
    span = t.max() - t.min() if t.max() > t.min() else t.max()
    for tau in np.geomspace(max(t.min(), span / 1e3) / 3, span * 1e3, 80):
        amps, ssr = _nnls_amplitudes(np.exp(-t / tau)[:, None], y)
        if best is None or ssr < best[0]:
            best = (ssr, tau, amps[0])
    _, tau0, a0 = best

    def resid(p):
        return p[0] * np.exp(-t * np.exp(-p[1])) - y

    res = optimize.least_squares(resid, [a0, math.log(tau0)], method="lm",
                                 x_scale="jac", max_nfev=2000)
    if not res.success:
        raise FitError("single-exponential fit did not converge",
                       residual=float(np.sum(res.fun ** 2)))
    return float(np.sum(res.fun ** 2)), math.exp(res.x[1]), res.x[0]


def _double_exp_fit(t, y):
    span = t.max()
    taus = np.geomspace(max(t[t > 0].min() if np.any(t > 0) else span / 100, span / 1e3) / 2,
                        span * 10, 36)
    best = None
    for i, tf in enumerate(taus):
        for ts in taus[i + 2:]:
            basis = np.column_stack([np.exp(-t / tf), np.exp(-t / ts)])
            amps, ssr = _nnls_amplitudes(basis, y)
            if best is None or ssr < best[0]:
                best = (ssr, tf, ts, amps)
    _, tf0, ts0, (af0, as0) = best

    def resid(p):
        af, as_, lf, ls = p
        return af * np.exp(-t * np.exp(-lf)) + as_ * np.exp(-t * np.exp(-ls)) - y

    res = optimize.least_squares(resid, [af0, as0, math.log(tf0), math.log(ts0)],
                                 method="lm", x_scale="jac", max_nfev=5000)
    if not res.success:
        raise FitError("double-exponential fit did not converge",
                       residual=float(np.sum(res.fun ** 2)))
    af, as_, lf, ls = res.x
    tf, ts = math.exp(lf), math.exp(ls)
    if tf > ts:
        af, as_, tf, ts = as_, af, ts, tf
    return float(np.sum(res.fun ** 2)), tf, ts, af, as_


def fit_hole_decay(samples: Sequence[tuple[float, float]], significance: float = 0.01
                   ) -> HoleDecayModel:
    """Fit hole depth vs delay with a single or double exponential.

    The double exponential is kept when an F-test prefers it over a single
    exponential at ``significance`` and both components are positive.
    Raises :class:`FitError` when no decay is resolved within the sampled
    delays (lifetime longer than 100x the sampled span) or when the
    optimiser fails.
    """
    data = np.asarray(samples, dtype=float)
    if data.ndim != 2 or data.shape[0] < 6:
        raise DegenerateFitError("need at least six (delay, depth) samples")
    t, y = data[:, 0], data[:, 1]
    if np.any(t < 0):
        raise InvalidInputError("delays must be >= 0")
    if np.ptp(t) <= 0:
        raise DegenerateFitError("all delays are equal")
    scale = np.max(np.abs(y))
    if scale == 0:
        raise FitError("all depths are zero", residual=0.0)
    y = y / scale
    n = t.size

    ssr1, tau1, amp1 = _single_exp_fit(t, y)
    two = None
    if n > 4:
        try:
            two = _double_exp_fit(t, y)
        except FitError:
            two = None

    use_two = False
    if two is not None:
        ssr2, tf, ts, af, as_ = two
        floor = 1e-24 * np.sum(y ** 2)
        if af > 0 and as_ > 0 and ts > 1.05 * tf:
            if ssr2 <= floor:
                use_two = ssr1 > 1e3 * floor
            else:
                fstat = ((ssr1 - ssr2) / 2) / (ssr2 / (n - 4))
                use_two = fstat > stats.f.ppf(1 - significance, 2, n - 4)

    horizon = 100 * t.max()
    if use_two:
        if ts > horizon:
            raise FitError(f"slow lifetime {ts:.3g} s not resolved by delays up to {t.max():.3g} s",
                           residual=ssr2 * scale ** 2)
        return HoleDecayModel(tf, ts, af / (af + as_))
    if tau1 > horizon or amp1 <= 0:
        raise FitError(f"no decay resolved (fitted lifetime {tau1:.3g} s)",
                       residual=ssr1 * scale ** 2)
    return HoleDecayModel(tau1)
