"""Command-line entry point: ``afcsim <subcommand> [options]``.

Every subcommand needs a seed, from ``--seed`` or from the config file.
Results go to ``--out``, else ``$AFCSIM_OUT``, else the config's
``output.dir``, else ``./afcsim-out``.  Failures print one line

    error: code=<CODE> exit=<N> msg=<text>

to stderr and exit with the matching status.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .afc_memory import (
    CombSpec,
    analytic_efficiency,
    echo_analysis,
    efficiency_sweep,
    optimal_efficiency_limit,
    period_analysis,
    propagate,
    pulse_for,
    transfer_function,
)
from .config import RunConfig, parse_config
from .errors import AfcSimError
from .experiment import (
    FIGURES,
    _fmt,
    _write_csv,
    _write_json,
    decay_scan,
    derive_channel,
    prepare_comb,
    reproduce_figure,
    run_sequence,
    write_manifest,
)
from .selftest import run_all
from .spectral_dynamics import (
    SpectralGrid,
    burn_hole,
    fit_hole_decay,
    fit_side_holes,
    hole_features,
    low_field_decay,
    relax,
)

OUT_ENV = "AFCSIM_OUT"
DEFAULT_OUT = "afcsim-out"

EXIT_USAGE = 64
EXIT_INTERNAL = 70
EXIT_SELFTEST = 1

#: Ideal-comb sweep: finesse high enough to approach the dephasing-free limit.
IDEAL_FINESSE = 50.0
IDEAL_BANDWIDTH = 2.0       # GHz
IDEAL_DELTA = 1000.0 / 48.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _fail(code: str, status: int, msg: str) -> int:
    msg = " ".join(str(msg).split())
    print(f"error: code={code} exit={status} msg={msg}", file=sys.stderr)
    return status


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", choices=["paper"], help="base values before the config file")
    common.add_argument("--seed", type=int, help="random seed (required unless set in the config)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress the summary")

    p = _Parser(prog="afcsim", description="Atomic frequency comb memory simulator")
    p.add_argument("--version", action="version", version=f"afcsim {__version__}")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    sub.add_parser("holeburn", parents=[common], help="burn a hole, fit side holes and the decay")

    c = sub.add_parser("comb", parents=[common], help="comb grid and efficiency report")
    c.add_argument("--ideal-sweep", action="store_true",
                   help=f"sweep the OD of a finesse-{IDEAL_FINESSE:g} comb without background")
    c.add_argument("--ods", type=float, nargs="+",
                   help="tooth contrasts for --ideal-sweep (default 60..140)")

    s = sub.add_parser("store", parents=[common], help="send a pulse through the prepared comb")
    s.add_argument("--pulse-fwhm", type=float, help="input pulse FWHM in ns")

    sub.add_parser("g2", parents=[common], help="photon-counting run: histogram and g2")

    f = sub.add_parser("figure", parents=[common], help="write figure datasets")
    f.add_argument("ids", nargs="+", choices=list(FIGURES) + ["all"], metavar="ID",
                   help=f"one of {', '.join(FIGURES)} or all")

    sub.add_parser("selftest", parents=[common], help="invariant suite and oracle cross-checks")
    return p


def _load(args) -> RunConfig:
    rc = parse_config(args.config, preset=args.preset)
    seed = args.seed if args.seed is not None else rc.seed
    if seed is None:
        raise UsageError("a seed is required: pass --seed or set 'seed' in the config")
    if seed < 0:
        raise UsageError("seed must be non-negative")
    exp = replace(rc.experiment, seed=seed)
    return replace(rc, experiment=exp, seed=seed)


def _out_dir(args, rc: RunConfig) -> Path:
    root = args.out or os.environ.get(OUT_ENV) or rc.out_dir or DEFAULT_OUT
    out = Path(root)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _say(args, text):
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_holeburn(args, rc: RunConfig, out: Path) -> int:
    hb = rc.holeburn
    levels = rc.experiment.levels.with_field(hb.field)
    before = SpectralGrid.flat(hb.span, hb.step, hb.od)
    after = burn_hole(before, 0.0, hb.pump_width, pump_strength=hb.pump_strength, levels=levels,
                      branching=hb.branching, spin_broadening=hb.spin_broadening)
    files = [_write_csv(out / "holeburn_spectrum.csv", ["detuning_MHz", "od_before", "od_after"],
                        [(_fmt(d), _fmt(a), _fmt(b))
                         for d, a, b in zip(before.detuning, before.od, after.od)])]
    feats = hole_features(before, after, levels, pump_width=hb.pump_width, spin_broadening=hb.spin_broadening)
    files.append(_write_csv(out / "holeburn_features.csv",
                            ["kind", "species", "detuning_MHz", "delta_od", "width_MHz"],
                            [(f.kind, f.species or "", _fmt(f.detuning), _fmt(f.depth), _fmt(f.width))
                             for f in feats]))
    fits = fit_side_holes(after, levels, hole_width=hb.pump_width)
    sides = {f.species: {"negative_MHz": f.negative, "positive_MHz": f.positive,
                         "detuning_MHz": f.detuning, "uncertainty_MHz": f.uncertainty}
             for f in fits}

    model = low_field_decay(hb.decay_field)
    rng = np.random.default_rng([rc.seed, 1])
    samples = decay_scan(model, rng)
    files.append(_write_csv(out / "holeburn_decay.csv", ["delay_s", "relative_depth"],
                            [(_fmt(t), _fmt(y)) for t, y in samples]))
    fitted = fit_hole_decay(samples)
    files.append(_write_json(out / "holeburn_fits.json", {
        "field_G": hb.field,
        "side_holes": sides,
        "decay": {"field_G": hb.decay_field, "true": asdict(model), "fitted": asdict(fitted)},
    }))
    write_manifest(out, rc.experiment, rc.seed, files, extra={"command": "holeburn"})
    for name, v in sides.items():
        _say(args, f"side hole {name}: {v['detuning_MHz']:.3f} MHz at {hb.field:g} G")
    slow = "-" if fitted.slow_lifetime is None else f"{fitted.slow_lifetime:.3g} s"
    _say(args, f"hole decay at {hb.decay_field:g} G: fast {fitted.fast_lifetime * 1e3:.3g} ms, slow {slow}")
    return 0


def _ideal_sweep(args, out: Path) -> list[Path]:
    ods = args.ods or list(np.arange(60.0, 141.0, 10.0))
    spec = CombSpec(delta=IDEAL_DELTA, finesse=IDEAL_FINESSE, bandwidth=IDEAL_BANDWIDTH,
                    peak_od=float(ods[0]), background_od=0.0)
    rows = efficiency_sweep(spec, ods)
    f = _write_csv(out / "comb_ideal_sweep.csv", ["peak_od", "numeric_efficiency", "analytic_efficiency"],
                   [(_fmt(d), _fmt(n), _fmt(a)) for d, n, a in rows])
    best = max(rows, key=lambda r: r[1])
    report = {"finesse": IDEAL_FINESSE, "background_od": 0.0, "max_numeric_efficiency": best[1],
              "at_peak_od": best[0], "analytic_at_max": best[2],
              "limit": optimal_efficiency_limit()}
    _say(args, f"ideal sweep: max eta = {best[1]:.4f} at d = {best[0]:g} "
               f"(limit {optimal_efficiency_limit():.4f})")
    return [f, _write_json(out / "comb_ideal_sweep.json", report)]


def cmd_comb(args, rc: RunConfig, out: Path) -> int:
    cfg = rc.experiment
    if args.ideal_sweep:
        files = _ideal_sweep(args, out)
        write_manifest(out, cfg, rc.seed, files, extra={"command": "comb --ideal-sweep"})
        return 0
    _, comb = prepare_comb(cfg)
    path = out / "comb.csv"
    comb.to_csv(path)
    h = transfer_function(comb)
    pulse = pulse_for(h, cfg.echo_pulse_fwhm)
    echo = echo_analysis(propagate(pulse, h), cfg.delta, input_energy=pulse.energy)
    channel = derive_channel(comb, cfg.delta, cfg.spectrum_fwhm)
    pa = period_analysis(comb, cfg.delta)
    report = {
        "delta_MHz": cfg.delta,
        "storage_time_ns": channel.storage_time,
        "numeric_efficiency": echo.efficiency(1),
        "band_averaged_efficiency": channel.echo_prob,
        "transmission": channel.transmit_prob,
        "peak_period_efficiency": float(pa.efficiency(1).max()),
    }
    if isinstance(cfg.comb, CombSpec):
        report["analytic_efficiency"] = analytic_efficiency(replace(cfg.comb, taper=0.0))
        report["teeth"] = cfg.comb.n_teeth
    files = [path, _write_json(out / "comb_report.json", report)]
    write_manifest(out, cfg, rc.seed, files, extra={"command": "comb"})
    if "analytic_efficiency" in report:
        _say(args, f"analytic eta (centre): {report['analytic_efficiency']:.4f}")
    _say(args, f"numeric eta: {echo.efficiency(1):.4f}, band-averaged: {channel.echo_prob:.4f}")
    return 0


def cmd_store(args, rc: RunConfig, out: Path) -> int:
    cfg = rc.experiment
    line, comb = prepare_comb(cfg)
    t = cfg.timing
    if cfg.relax:
        comb = relax(comb, line, (t.pump_ms + t.wait_ms) / 1000.0, cfg.decay)
    fwhm = args.pulse_fwhm or cfg.echo_pulse_fwhm
    h = transfer_function(comb)
    pulse = pulse_for(h, fwhm)
    output = propagate(pulse, h)
    echo = echo_analysis(output, cfg.delta, input_energy=pulse.energy)
    f1 = out / "echo.json"
    f1.write_text(echo.to_json() + "\n")
    times = output.times
    keep = (times >= -5.0) & (times <= 3 * cfg.channel_storage_time + 5.0)
    rows = [(_fmt(tt), _fmt(p)) for tt, p in zip(times[keep], np.abs(output.samples[keep]) ** 2)]
    f2 = _write_csv(out / "echo_intensity.csv", ["time_ns", "intensity"], rows)
    write_manifest(out, cfg, rc.seed, [f1, f2], extra={"command": "store"})
    _say(args, f"transmitted {echo.transmitted_fraction:.4f}, first echo {echo.efficiency(1):.4f} "
               f"peaking at {echo.peak_time(1):.3f} ns")
    return 0


def cmd_g2(args, rc: RunConfig, out: Path) -> int:
    cfg = rc.experiment
    bundle = run_sequence(cfg, with_echo=False)
    if bundle.histogram is None:
        raise AfcSimError("no store cycles configured (timing.cycles = 0)")
    f1 = out / "g2_histogram.csv"
    bundle.histogram.to_csv(f1)
    f2 = _write_json(out / "g2.json", {
        "pulses": bundle.pulses,
        "channel": asdict(bundle.channels[0]),
        "g2_source": asdict(bundle.g2_source),
        "g2_echo": asdict(bundle.g2_echo),
    })
    write_manifest(out, cfg, rc.seed, [f1, f2], extra={"command": "g2"})
    for label, est in (("source", bundle.g2_source), ("echo", bundle.g2_echo)):
        _say(args, f"g2 {label}: {est.value:.2f} +- {est.std_error:.2f} "
                   f"(non-classical: {est.nonclassical})")
    return 0


def cmd_figure(args, rc: RunConfig, out: Path) -> int:
    ids = FIGURES if "all" in args.ids else tuple(dict.fromkeys(args.ids))
    for fig in ids:
        target = out / f"fig{fig}" if len(ids) > 1 else out
        files = reproduce_figure(fig, target, rc.experiment, rc.seed)
        _say(args, f"figure {fig}: " + ", ".join(str(f) for f in files))
        if fig == "4":
            g2 = json.loads((target / "fig4_g2.json").read_text())
            _say(args, f"  g2 echo {g2['g2_echo']['value']:.2f} +- {g2['g2_echo']['std_error']:.2f}")
    return 0


def cmd_selftest(args, rc: RunConfig, out: Path) -> int:
    results = run_all(rc.seed)
    for r in results:
        _say(args, f"{'PASS' if r.passed else 'FAIL'} {r.name:24s} {r.seconds:6.2f} s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        return _fail("SELFTEST_FAILED", EXIT_SELFTEST, "failed checks: " + ", ".join(failed))
    return 0


COMMANDS = {"holeburn": cmd_holeburn, "comb": cmd_comb, "store": cmd_store, "g2": cmd_g2,
            "figure": cmd_figure, "selftest": cmd_selftest}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        rc = _load(args)
        out = None if args.command == "selftest" else _out_dir(args, rc)
        return COMMANDS[args.command](args, rc, out)
    except UsageError as exc:
        return _fail("USAGE", EXIT_USAGE, exc)
    except AfcSimError as exc:
        return _fail(exc.code, exc.exit_status, exc)
    except OSError as exc:
        return _fail("IO", 74, exc)
    except Exception as exc:    # noqa: BLE001 - last resort, still one line
        return _fail("INTERNAL", EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
