"""End-to-end runs: comb preparation, memory channel, photon counting, figure datasets."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .afc_memory import (
    PAPER_DELTA_MHZ,
    PAPER_FINESSE,
    PAPER_PEAK_OD,
    CombSpec,
    EchoResult,
    analytic_efficiency,
    build_comb,
    comb_from_pumping,
    echo_analysis,
    paper_comb,
    period_analysis,
    propagate,
    pulse_for,
    square_modulation,
    transfer_function,
)
from .errors import ConfigError, InvalidInputError
from .photon_statistics import (
    CoincidenceHistogram,
    DetectionRecord,
    G2Estimate,
    MemoryChannel,
    SourceConfig,
    build_histogram,
    echo_g2,
    g2_from_histogram,
    simulate_run,
)
from .spectral_dynamics import (
    DEFAULT_SPIN_BROADENING,
    HoleDecayModel,
    LevelStructure,
    SpectralGrid,
    burn_hole,
    fit_side_hole_slope,
    fit_side_holes,
    high_field_decay,
    hole_features,
    relax,
)

#: Photon spectrum behind the 6 GHz Fabry-Perot filter (Lorentzian FWHM, MHz).
DEFAULT_SPECTRUM_FWHM = 6000.0
FIGURES = ("2a", "2b", "3", "4")
#: Idler background (darks plus residual fluorescence) in Hz.
PAPER_IDLER_BACKGROUND = 16_000.0
#: Fibre-to-waveguide in-out coupling of the cryogenic memory.
PAPER_COUPLING = 0.20
#: Remaining idler losses (filters, fibre, detector) and the signal arm.
PAPER_IDLER_CHAIN = 0.25
PAPER_SIGNAL_EFFICIENCY = 0.05
#: Photon-counting time (s) whose echo-g2 error bar matches the published one.
G2_REPLICATE_RUN_S = 0.3


@dataclass(frozen=True)
class TimingSequence:
    """Pump / wait / store durations (ms) repeated ``cycles`` times."""

    pump_ms: float = 300.0
    wait_ms: float = 30.0
    store_ms: float = 200.0
    cycles: int = 1

    def __post_init__(self):
        for name in ("pump_ms", "wait_ms", "store_ms"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be > 0")
        if self.cycles < 0:
            raise InvalidInputError("cycles must be >= 0")

    @property
    def cycle_s(self) -> float:
        return (self.pump_ms + self.wait_ms + self.store_ms) / 1000.0


@dataclass(frozen=True)
class PumpingRecipe:
    """Comb burned into a flat line by an intensity-modulated frequency sweep."""

    line_od: float = PAPER_PEAK_OD
    sweep_bandwidth: float = 6.0          # GHz
    delta: float = PAPER_DELTA_MHZ        # modulation period, MHz
    finesse: float = PAPER_FINESSE
    pump_strength: float = 5.0
    pump_width: float = 3.0
    branching: float = 1.0
    spin_broadening: float = DEFAULT_SPIN_BROADENING
    margin: float = 100.0                 # MHz of unswept line on each side
    samples_per_period: int = 256

    def __post_init__(self):
        if not self.line_od >= 0:
            raise InvalidInputError("line_od must be >= 0")
        if not self.delta > 0 or not self.finesse > 1:
            raise InvalidInputError("need delta > 0 and finesse > 1")
        if not self.sweep_bandwidth * 1000.0 >= self.delta:
            raise InvalidInputError("sweep_bandwidth must cover at least one period")

    def line(self) -> SpectralGrid:
        periods = int(math.ceil((self.sweep_bandwidth * 1000.0 + 2 * self.margin) / self.delta))
        k = self.samples_per_period
        step = self.delta / k
        det = -periods * self.delta / 2 + (np.arange(periods * k) + 0.5) * step
        return SpectralGrid(det, np.full(det.size, float(self.line_od)))


def paper_source(**overrides) -> SourceConfig:
    """Pair source and detection chain calibrated to the stored-photon g2.

    The idler background rate (detector darks plus residual fluorescence)
    sets the retrieved-photon cross-correlation; its value makes the echo
    g2 land near the measured 7.1.
    """
    params = dict(
        rep_rate=80.0,
        mean_pairs=0.05,
        pair_distribution="thermal",
        spurious_mode_fraction=0.02,
        spurious_mode_delay=4.2,
        signal_path_efficiency=PAPER_SIGNAL_EFFICIENCY,
        idler_path_efficiency=PAPER_COUPLING * PAPER_IDLER_CHAIN,
        dark_rate_signal=100.0,
        dark_rate_idler=PAPER_IDLER_BACKGROUND,
        jitter_fwhm=70.0,
    )
    params.update(overrides)
    return SourceConfig(**params)


@dataclass(frozen=True)
class ExperimentConfig:
    levels: LevelStructure = field(default_factory=LevelStructure)
    comb: CombSpec | PumpingRecipe = field(default_factory=paper_comb)
    source: SourceConfig = field(default_factory=paper_source)
    timing: TimingSequence = field(default_factory=TimingSequence)
    decay: HoleDecayModel | None = field(default_factory=high_field_decay)
    seed: int = 0
    relax: bool = True
    repump: bool = True
    storage_time: float | None = None     # ns; checked against 1/delta when given
    spectrum_fwhm: float = DEFAULT_SPECTRUM_FWHM
    echo_pulse_fwhm: float = 0.3          # ns
    bin_width: float = 0.1                # ns
    max_offset: float = 150.0             # ns
    peak_window: float = 1.0              # ns

    @property
    def delta(self) -> float:
        return self.comb.delta

    @property
    def channel_storage_time(self) -> float:
        return 1000.0 / self.delta

    def check(self) -> None:
        if self.storage_time is not None and \
                abs(self.storage_time - self.channel_storage_time) > 1e-9 * self.channel_storage_time:
            raise ConfigError(
                f"storage_time {self.storage_time} ns inconsistent with 1/delta = "
                f"{self.channel_storage_time} ns", key="storage_time")
        if self.relax and self.decay is None:
            raise ConfigError("relax enabled but no decay model given", key="decay")


def paper_config(**overrides) -> ExperimentConfig:
    """Every default used to reproduce the published numbers, in one place."""
    params = dict(timing=TimingSequence(cycles=7), storage_time=48.0)
    params.update(overrides)
    return ExperimentConfig(**params)


def config_to_dict(obj):
    """Plain JSON-able view of a (nested) config dataclass."""
    if is_dataclass(obj):
        out = {"type": type(obj).__name__}
        out.update({k: config_to_dict(v) for k, v in asdict(obj).items()})
        return out
    if isinstance(obj, dict):
        return {k: config_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [config_to_dict(v) for v in obj]
    return obj


def config_hash(cfg) -> str:
    text = json.dumps(config_to_dict(cfg), sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# comb -> channel
# ---------------------------------------------------------------------------

def derive_channel(grid: SpectralGrid, delta: float, spectrum_fwhm: float = DEFAULT_SPECTRUM_FWHM,
                   center: float = 0.0) -> MemoryChannel:
    """Photon-level transmit and echo probabilities of a comb grid.

    Each comb period is treated as locally uniform: it transmits
    ``exp(-mean od)`` at t = 0 and re-emits its first-order echo
    efficiency at 1/delta.  Both are averaged over the grid with the
    Lorentzian photon spectrum as weight.
    """
    if not spectrum_fwhm > 0:
        raise InvalidInputError("spectrum_fwhm must be > 0")
    pa = period_analysis(grid, delta)
    w = 1.0 / (1.0 + (2.0 * (pa.centers - center) / spectrum_fwhm) ** 2)
    w = w / w.sum()
    transmit = float(w @ pa.transmission)
    echo = float(w @ pa.efficiency(1))
    return MemoryChannel(min(transmit, 1.0), min(echo, 1.0 - min(transmit, 1.0)), 1000.0 / delta)


def prepare_comb(cfg: ExperimentConfig) -> tuple[SpectralGrid, SpectralGrid]:
    """``(line, comb)`` at the end of the pump step (before any waiting)."""
    if isinstance(cfg.comb, CombSpec):
        comb = build_comb(cfg.comb)
        return comb.with_od(np.full(len(comb), cfg.comb.peak_od)), comb
    r = cfg.comb
    line = r.line()
    half = r.sweep_bandwidth * 500.0
    comb = comb_from_pumping(
        line, r.sweep_bandwidth, square_modulation(r.delta, r.finesse, offset=-half),
        cfg.levels, pump_strength=r.pump_strength, pump_width=r.pump_width,
        branching=r.branching, spin_broadening=r.spin_broadening)
    return line, comb


@dataclass
class RunBundle:
    line: SpectralGrid
    comb: SpectralGrid
    store_combs: list[SpectralGrid] = field(default_factory=list)
    channels: list[MemoryChannel] = field(default_factory=list)
    echo: EchoResult | None = None
    histogram: CoincidenceHistogram | None = None
    g2_source: G2Estimate | None = None
    g2_echo: G2Estimate | None = None
    pulses: int = 0
    records: list[DetectionRecord] = field(default_factory=list)


def echo_response(comb: SpectralGrid, delta: float, pulse_fwhm: float = 0.3) -> EchoResult:
    """Send a Gaussian pulse through ``comb`` and integrate the output windows."""
    h = transfer_function(comb)
    pulse = pulse_for(h, pulse_fwhm)
    return echo_analysis(propagate(pulse, h), delta, input_energy=pulse.energy)


def run_sequence(cfg: ExperimentConfig, keep_records: bool = False, with_echo: bool = True
                 ) -> RunBundle:
    """Pump, wait and store for ``cfg.timing.cycles`` cycles.

    The comb relaxes over pump + wait before the first store window.  When
    re-pumping is switched off, later cycles see the comb relax further for
    one full cycle each.  Cycle ``c`` draws photons from stream ``c`` of
    ``cfg.seed``.
    """
    cfg.check()
    line, comb = prepare_comb(cfg)
    bundle = RunBundle(line, comb)
    t = cfg.timing
    if t.cycles == 0:
        return bundle
    store = comb
    if cfg.relax:
        store = relax(comb, line, (t.pump_ms + t.wait_ms) / 1000.0, cfg.decay)
    if with_echo:
        bundle.echo = echo_response(store, cfg.delta, cfg.echo_pulse_fwhm)
    channel = None
    hist = None
    for c in range(t.cycles):
        if c > 0 and cfg.relax and not cfg.repump:
            store = relax(store, line, t.cycle_s, cfg.decay)
            channel = None
        if channel is None:
            channel = derive_channel(store, cfg.delta, cfg.spectrum_fwhm)
        bundle.store_combs.append(store)
        bundle.channels.append(channel)
        rec = simulate_cycle(cfg, channel, c)
        bundle.pulses += rec.pulses
        if keep_records:
            bundle.records.append(rec)
        h = build_histogram(rec, cfg.bin_width, cfg.max_offset)
        hist = h if hist is None else hist + h
    bundle.histogram = hist
    period = cfg.source.period
    bundle.g2_source = g2_from_histogram(hist, cfg.peak_window, center=0.0, period=period,
                                         exclude=(-channel.storage_time,))
    bundle.g2_echo = echo_g2(hist, channel.storage_time, period, cfg.peak_window)
    return bundle


def simulate_cycle(cfg: ExperimentConfig, channel: MemoryChannel, cycle: int) -> DetectionRecord:
    return simulate_run(cfg.source, channel, cfg.timing.store_ms / 1000.0, cfg.seed, stream=cycle)


# ---------------------------------------------------------------------------
# side-hole field scan
# ---------------------------------------------------------------------------

#: Relative frequency-axis error of each half of a laser sweep (1 sigma).
SWEEP_SCALE_ERROR = 3e-3
SCAN_FIELDS = tuple(float(b) for b in range(10_000, 20_001, 1_000))
#: 6Li side holes sit too close to the central hole below this field.
LI6_MIN_FIELD = 14_000.0


def scan_spectrum(levels: LevelStructure, rng, span: float = 100.0, step: float = 0.1,
                  pump_strength: float = 0.1, od: float = 1.0, od_noise: float = 1e-4,
                  sweep_error: float = SWEEP_SCALE_ERROR) -> SpectralGrid:
    """A burned-hole spectrum as recorded through an imperfect laser sweep.

    The blue and red halves of the recorded axis are each stretched by an
    independent random factor, so the two members of a side-hole pair
    disagree slightly; white OD noise is added on top.
    """
    half = span / 2
    fine = SpectralGrid.uniform(-half - 10, half + 10, step / 2, od)
    burned = burn_hole(fine, 0.0, pump_strength=pump_strength, levels=levels)
    x = np.arange(-half, half + step / 2, step)
    e_pos, e_neg = rng.normal(0.0, sweep_error, 2)
    true = np.where(x >= 0, x / (1 + e_pos), x / (1 + e_neg))
    y = np.interp(true, fine.detuning, burned.od) + rng.normal(0.0, od_noise, x.size)
    return SpectralGrid(x, np.clip(y, 0.0, None))


def side_hole_scan(seed: int, fields=SCAN_FIELDS, base: LevelStructure | None = None,
                   li6_min_field: float = LI6_MIN_FIELD, **spectrum_kw) -> dict:
    """Side-hole detuning vs field for every species, plus the slope fits.

    Returns ``{species: {"points": [(field, detuning, uncertainty)], "slope",
    "stderr", "true"}}``.
    """
    base = LevelStructure() if base is None else base
    rng = np.random.default_rng(seed)
    points: dict[str, list] = {sp.name: [] for sp in base.species}
    for b in fields:
        lv = base.with_field(b)
        spec = scan_spectrum(lv, rng, **spectrum_kw)
        for fit in fit_side_holes(spec, lv):
            if fit.species == "6Li" and b < li6_min_field:
                continue
            points[fit.species].append((b, fit.detuning, fit.uncertainty))
    out = {}
    for sp in base.species:
        pts = points[sp.name]
        slope, stderr = fit_side_hole_slope([(b, d) for b, d, _ in pts])
        out[sp.name] = {"points": pts, "slope": slope, "stderr": stderr, "true": sp.slope_excited}
    return out


# ---------------------------------------------------------------------------
# hole-decay scan
# ---------------------------------------------------------------------------

DECAY_SCAN_POINTS = 200
DECAY_SCAN_RANGE = (0.02, 4.5)      # s
DECAY_SCAN_NOISE = 0.02             # of the initial depth


def decay_scan(model: HoleDecayModel, rng, n: int = DECAY_SCAN_POINTS,
               delays=DECAY_SCAN_RANGE, noise: float = DECAY_SCAN_NOISE) -> np.ndarray:
    """Synthetic hole depth vs delay: ``(n, 2)`` array of ``(delay_s, depth)``.

    Delays are geometrically spaced; Gaussian noise is additive with a
    standard deviation of ``noise`` times the initial depth.
    """
    t = np.geomspace(delays[0], delays[1], n)
    depth = model.factor(t) + rng.normal(0.0, noise, n)
    return np.column_stack([t, depth])


# ---------------------------------------------------------------------------
# figure datasets
# ---------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _write_json(path: Path, data) -> Path:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(x):
    return f"{x:.10g}"


def comb_period(grid: SpectralGrid, oversample: int = 64) -> float:
    """Dominant OD modulation period (MHz) of a comb section."""
    y = grid.od - grid.od.mean()
    n = y.size * oversample
    spec = np.abs(np.fft.rfft(y * np.hanning(y.size), n))
    freqs = np.fft.rfftfreq(n, d=grid.step)
    i = int(np.argmax(spec[1:])) + 1
    if 0 < i < spec.size - 1:
        y0, y1, y2 = np.log(spec[i - 1:i + 2])
        i = i + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
    return float(1.0 / (i * (freqs[1] - freqs[0])))


def _figure_2a(out: Path, cfg: ExperimentConfig, seed: int) -> list[Path]:
    lv = cfg.levels.with_field(19_000.0)
    before = SpectralGrid.uniform(-50.0, 50.0, 0.05, 1.0)
    after = burn_hole(before, 0.0, pump_strength=1.0, levels=lv)
    rows = [(_fmt(d), _fmt(a), _fmt(b)) for d, a, b in zip(before.detuning, before.od, after.od)]
    f1 = _write_csv(out / "fig2a_spectrum.csv", ["detuning_MHz", "od_before", "od_after"], rows)
    feats = hole_features(before, after, lv)
    rows = [(f.kind, f.species or "", _fmt(f.detuning), _fmt(f.depth)) for f in feats]
    f2 = _write_csv(out / "fig2a_features.csv", ["kind", "species", "detuning_MHz", "delta_od"], rows)
    return [f1, f2]


def _figure_2b(out: Path, cfg: ExperimentConfig, seed: int) -> list[Path]:
    scan = side_hole_scan(seed, base=cfg.levels)
    rows = []
    for name, s in scan.items():
        rows += [(name, _fmt(b), _fmt(d), _fmt(u)) for b, d, u in s["points"]]
    f1 = _write_csv(out / "fig2b_side_holes.csv",
                    ["species", "field_G", "detuning_MHz", "uncertainty_MHz"], rows)
    fits = {name: {k: s[k] for k in ("slope", "stderr", "true")} for name, s in scan.items()}
    f2 = _write_json(out / "fig2b_fits.json", {"units": "kHz/G", "fits": fits})
    return [f1, f2]


def _figure_3(out: Path, cfg: ExperimentConfig, seed: int) -> list[Path]:
    _, comb = prepare_comb(cfg)
    mask = np.abs(comb.detuning) <= 100.0
    section = SpectralGrid(comb.detuning[mask], comb.od[mask])
    rows = [(_fmt(d), _fmt(o)) for d, o in zip(section.detuning, section.od)]
    f1 = _write_csv(out / "fig3_comb_section.csv", ["detuning_MHz", "od"], rows)
    channel = derive_channel(comb, cfg.delta, cfg.spectrum_fwhm)
    summary = {
        "period_MHz": comb_period(section),
        "storage_time_ns": channel.storage_time,
        "band_averaged_efficiency": channel.echo_prob,
        "transmission": channel.transmit_prob,
    }
    if isinstance(cfg.comb, CombSpec):
        summary["teeth"] = cfg.comb.n_teeth
        summary["analytic_peak_efficiency"] = analytic_efficiency(replace(cfg.comb, taper=0.0))
    f2 = _write_json(out / "fig3_summary.json", summary)
    return [f1, f2]


def _figure_4(out: Path, cfg: ExperimentConfig, seed: int) -> list[Path]:
    bundle = run_sequence(replace(cfg, seed=seed), with_echo=False)
    hist = bundle.histogram
    # plot convention: idler arrival after the signal is a positive delay
    order = np.argsort(-hist.offsets)
    rows = [(_fmt(-hist.offsets[i]), int(hist.counts[i])) for i in order]
    f1 = _write_csv(out / "fig4_histogram.csv", ["delay_ns", "counts"], rows)
    ch = bundle.channels[0]
    summary = {
        "pulses": bundle.pulses,
        "storage_time_ns": ch.storage_time,
        "transmit_prob": ch.transmit_prob,
        "echo_prob": ch.echo_prob,
        "transmitted_peak_counts": bundle.g2_source.peak_counts,
        "echo_peak_counts": bundle.g2_echo.peak_counts,
        "g2_source": asdict(bundle.g2_source),
        "g2_echo": asdict(bundle.g2_echo),
        "echo_delay_ns": ch.storage_time,
    }
    f2 = _write_json(out / "fig4_g2.json", summary)
    return [f1, f2]


_FIGURE_BUILDERS = {"2a": _figure_2a, "2b": _figure_2b, "3": _figure_3, "4": _figure_4}


def reproduce_figure(fig_id: str, out_dir, cfg: ExperimentConfig | None = None,
                     seed: int | None = None) -> list[Path]:
    """Write the dataset behind one figure plus a run manifest; returns the files."""
    if fig_id not in _FIGURE_BUILDERS:
        raise InvalidInputError(f"unknown figure {fig_id!r}; choose from {', '.join(FIGURES)}")
    cfg = paper_config() if cfg is None else cfg
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = _FIGURE_BUILDERS[fig_id](out, cfg, seed)
    write_manifest(out, cfg, seed, files, extra={"figure": fig_id})
    return files


def write_manifest(out_dir, cfg, seed: int, files, extra: dict | None = None) -> Path:
    """Record config hash, seed, library versions and file digests."""
    out = Path(out_dir)
    digests = {}
    for f in files:
        digests[Path(f).name] = hashlib.sha256(Path(f).read_bytes()).hexdigest()
    data = {
        "config_hash": config_hash(cfg),
        "seed": seed,
        "versions": {"afcsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": digests,
    }
    if extra:
        data.update(extra)
    return _write_json(out / "manifest.json", data)
