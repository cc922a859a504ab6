"""Command-line entry point: crowdctl {design,simulate,tomography,bench,export,import}.

Exit codes: 0 success, 1 bad input, 2 solver or verification failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmark, designer, tomography
from .ansatz import SystemConfig, load_waveform, save_waveform
from .errors import IntegrationError, SolverError, StructuralError, SynthesisError, VerificationError
from .linalg import average_gate_fidelity, operator_distance
from .propagator import (NoiseModel, block_superoperator, channel_average_fidelity,
                         channel_process_fidelity, lindblad_superoperator, propagate_lindblad,
                         propagate_unitary, unitary_blocks, write_trajectory_csv)
from .analytic import DETUNED, RESONANT

log = logging.getLogger("crowdctl")

EXIT_OK, EXIT_INPUT, EXIT_FAILURE = 0, 1, 2


class InputError(Exception):
    pass


# --- configuration -----------------------------------------------------------------

def default_config_text() -> str:
    return resources.files("crowdctl").joinpath("data/reference.json").read_text()


def load_config(path: str | None) -> tuple[dict, str]:
    """(document, sha256 of its canonical JSON)."""
    if path is None:
        text = default_config_text()
    else:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {path}")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict) or "system" not in doc:
        raise InputError("config needs a 'system' section")
    digest = hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    return doc, digest


def system_config(doc: dict) -> SystemConfig:
    try:
        return SystemConfig.from_dict(doc["system"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad system section: {exc}") from None


def noise_model(doc: dict, config: SystemConfig) -> NoiseModel:
    sec = doc.get("noise")
    if not sec:
        return NoiseModel.from_config(config)
    inf = lambda v: math.inf if v is None else float(v)  # noqa: E731
    return NoiseModel(inf(sec.get("t2_detuned")), inf(sec.get("t2_resonant")))


def _provenance(args, digest: str) -> dict:
    return {"tool": "crowdctl", "version": __version__, "config_sha256": digest,
            "seed": getattr(args, "seed", None), "command": args.command}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", path)


def _sidecar_log(out: Path, args, digest: str) -> None:
    # timestamps only live here so artifacts stay byte-identical across reruns
    entry = {"time": datetime.datetime.now(datetime.timezone.utc).isoformat(),
             **_provenance(args, digest)}
    with (out / "crowdctl.log").open("a") as fh:
        fh.write(json.dumps(entry) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_program(path: str) -> designer.GateProgram:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"program file not found: {path}")
    try:
        return designer.GateProgram.from_json(p.read_text())
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed program {path}: {exc}") from None


# --- commands ----------------------------------------------------------------------

def design_from_config(gate: str, doc: dict, config: SystemConfig) -> designer.GateProgram:
    solver = doc.get("solver", {})
    fs = float(solver.get("sample_rate", 1e9))
    key = gate.strip().lower()
    sec = solver.get(key, {})
    if key == "id":
        return designer.design_individual_control(
            config, sec.get("duration"), tuple(sec.get("initial_guess", designer.ID_SEED)), sample_rate=fs)
    if key in ("s", "t"):
        phi = math.pi / 4 if key == "s" else math.pi / 8
        return designer.design_phase_gate(phi, config, sec.get("duration"),
                                          tuple(sec["initial_guess"]) if "initial_guess" in sec else None,
                                          sample_rate=fs)
    if key == "h":
        kw = {}
        if "step_guess" in sec:
            kw["step_guess"] = tuple(sec["step_guess"])
        if "identity_guess" in sec:
            kw["identity_guess"] = tuple(sec["identity_guess"])
        if sec.get("step_duration"):
            kw["step_duration"] = float(sec["step_duration"])
        return designer.design_hadamard(config, sec.get("identity_duration"), sample_rate=fs, **kw)
    if key.startswith("phase:"):
        try:
            phi = float(key.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad phase in {gate!r}") from None
        for alias, ref in (("s", math.pi / 4), ("t", math.pi / 8)):
            if math.isclose(phi, ref, abs_tol=1e-9):
                return design_from_config(alias, doc, config)
        return designer.design_phase_gate(phi, config, sample_rate=fs)
    raise InputError(f"unknown gate {gate!r}; use id, s, t, h or phase:<rad>")


def cmd_design(args) -> int:
    doc, digest = load_config(args.config)
    config = system_config(doc)
    out = _outdir(args)
    prog = design_from_config(args.gate, doc, config)
    stem = prog.name.replace(":", "_")
    payload = {**prog.to_dict(), "provenance": _provenance(args, digest)}
    _write_json(out / f"{stem}_program.json", payload)
    _write_json(out / f"{stem}_report.json",
                {"gate": prog.name, "total_time_s": prog.total_time,
                 "verification": prog.verification.to_dict(), "passed": prog.verification.passed,
                 "provenance": _provenance(args, digest)})
    _sidecar_log(out, args, digest)
    print(f"{prog.name}: T = {prog.total_time * 1e6:.3f} us, "
          f"F_detuned = {prog.verification.fidelity_detuned:.8f}, "
          f"F_resonant = {prog.verification.fidelity_resonant:.8f}")
    return EXIT_OK


def _merged_trajectory(run_detuned, run_resonant):
    """t, P1, P2 from a run started in |1>; P3, P4 from a run started in |3>."""
    traj = run_detuned.copy()
    traj[:, 3:5] = run_resonant[:, 3:5]
    return traj


def simulate_program(prog, doc, with_noise: bool, record_every: int = 100):
    config = prog.config
    wf = prog.waveform(float(doc.get("solver", {}).get("sample_rate", 1e9)))
    if with_noise:
        noise = noise_model(doc, config)
        a = propagate_lindblad(wf, config, noise, 0, record_every)
        b = propagate_lindblad(wf, config, noise, 2, record_every)
        superop = a.superop
    else:
        a = propagate_unitary(wf, config, 0, record_every)
        b = propagate_unitary(wf, config, 2, record_every)
        superop = np.kron(a.u_total.conj(), a.u_total)
    fids = {}
    for sub, target in ((DETUNED, prog.target.u_prime), (RESONANT, prog.target.u)):
        s2 = block_superoperator(superop, sub)
        fpro = channel_process_fidelity(s2, target)
        fids[sub] = {"process_fidelity": fpro, "process_infidelity": 1.0 - fpro,
                     "average_fidelity": channel_average_fidelity(s2, target)}
    return _merged_trajectory(a.trajectory, b.trajectory), fids, superop


def cmd_simulate(args) -> int:
    doc, digest = load_config(args.config)
    prog = _load_program(args.program)
    out = _outdir(args)
    traj, fids, _ = simulate_program(prog, doc, args.noise, args.record_every)
    if args.trajectory:
        write_trajectory_csv(traj, out / f"{prog.name}_trajectory.csv")
    _write_json(out / f"{prog.name}_fidelity.json",
                {"gate": prog.name, "noise": args.noise, "fidelities": fids,
                 "provenance": _provenance(args, digest)})
    _sidecar_log(out, args, digest)
    for sub, f in fids.items():
        print(f"{sub}: process infidelity {f['process_infidelity']:.3e}")
    return EXIT_OK


def cmd_tomography(args) -> int:
    doc, digest = load_config(args.config)
    prog = _load_program(args.program)
    if args.trials < 100:
        raise InputError("trials must be >= 100")
    tcfg = doc.get("tomography", {})
    out = _outdir(args)
    _, _, superop = simulate_program(prog, doc, args.noise, 10 ** 9)
    result = {"gate": prog.name, "trials": args.trials, "provenance": _provenance(args, digest)}
    seeds = np.random.SeedSequence(args.seed).spawn(2)
    for sub, target, ss in ((DETUNED, prog.target.u_prime, seeds[0]),
                            (RESONANT, prog.target.u, seeds[1])):
        channel = tomography.superoperator_channel(block_superoperator(superop, sub))
        run = tomography.run_process_tomography(
            channel, target, trials=args.trials, seed=ss, resamples=args.resamples,
            bright_mean=float(tcfg.get("bright_mean", tomography.BRIGHT_MEAN)),
            dark_mean=float(tcfg.get("dark_mean", tomography.DARK_MEAN)),
            threshold=int(tcfg.get("threshold", tomography.THRESHOLD)), subspace=sub)
        result[sub] = {"chi": run.chi.to_dict(), "fidelity": run.report.to_dict()}
        tomography.write_records(run.records, out / f"{prog.name}_{sub}_shots.jsonl")
        print(f"{sub}: F = {run.report.value:.5f} [{run.report.ci_low:.5f}, {run.report.ci_high:.5f}]")
    _write_json(out / f"{prog.name}_tomography.json", result)
    _sidecar_log(out, args, digest)
    return EXIT_OK


def cmd_bench(args) -> int:
    doc, digest = load_config(args.config)
    config = system_config(doc)
    bcfg = doc.get("bench", {})
    points = args.points if args.points is not None else int(bcfg.get("points", 40))
    if points < benchmark.MIN_SWEEP_POINTS:
        raise InputError(f"sweep too sparse: {points} points, need {benchmark.MIN_SWEEP_POINTS}")
    out = _outdir(args)
    if args.no_noise:
        noise = None
    else:
        noise = NoiseModel.from_rate(float(bcfg.get("dephasing_rate_over_delta", 1 / 40)) * config.delta)
    sweep = benchmark.sweep(benchmark.default_ratios(points), config, noise)
    prog = design_from_config("id", doc, config)
    shaped = benchmark.shaped_pulse_fidelity(prog, config, noise)
    summary = benchmark.speedup_report(sweep, shaped)
    benchmark.write_sweep_csv(sweep + [shaped], out / "sweep.csv")
    _write_json(out / "speedup.json", {**summary.to_dict(), "noise": None if noise is None else noise.to_dict(),
                                       "provenance": _provenance(args, digest)})
    _sidecar_log(out, args, digest)
    print(f"square optimum at ratio {summary.optimal_square_ratio:.4f} "
          f"(F = {summary.optimal_square_fidelity:.5f}); shaped ratio {summary.shaped_ratio:.3f} "
          f"(F = {summary.shaped_fidelity:.5f}); time ratio {summary.time_ratio:.2f}")
    return EXIT_OK


def cmd_export(args) -> int:
    doc, digest = load_config(args.config)
    prog = _load_program(args.program)
    out = _outdir(args)
    fs = args.sample_rate or float(doc.get("solver", {}).get("sample_rate", 1e9))
    wf = prog.waveform(fs)
    if args.fold:
        wf = wf.to_folded()
    csv_path = out / f"{prog.name}_waveform.csv"
    save_waveform(wf, csv_path, prog.config,
                  extra={"gate": prog.name, **_provenance(args, digest)})
    _sidecar_log(out, args, digest)
    print(f"wrote {csv_path} ({wf.n_samples} samples)")
    return EXIT_OK


def cmd_import(args) -> int:
    doc, digest = load_config(args.config)
    path = Path(args.waveform)
    if not path.is_file() or not path.with_suffix(".json").is_file():
        raise InputError(f"need {path} and its .json sidecar")
    try:
        wf, cfg = load_waveform(path)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed waveform: {exc}") from None
    cfg = cfg or system_config(doc)
    out = _outdir(args)
    up, u = unitary_blocks(propagate_unitary(wf, cfg, record_every=10 ** 9).u_total)
    summary = {"samples": wf.n_samples, "duration_s": wf.duration, "segments": len(wf.segments),
               "u_prime": designer._mat_to_list(up.matrix), "u": designer._mat_to_list(u.matrix),
               "provenance": _provenance(args, digest)}
    if args.program:
        prog = _load_program(args.program)
        summary["fidelity_detuned"] = average_gate_fidelity(up.matrix, prog.target.u_prime)
        summary["fidelity_resonant"] = average_gate_fidelity(u.matrix, prog.target.u)
        summary["distance_detuned"] = operator_distance(up.matrix, prog.target.u_prime, up_to_global_phase=True)
        summary["distance_resonant"] = operator_distance(u.matrix, prog.target.u, up_to_global_phase=True)
    _write_json(out / f"{path.stem}_import.json", summary)
    _sidecar_log(out, args, digest)
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdctl", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"crowdctl {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (default: the shipped reference.json)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", parents=[common], help="solve and verify a gate program")
    d.add_argument("gate", help="id | s | t | h | phase:<radians>")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", parents=[common], help="propagate a program")
    s.add_argument("program")
    s.add_argument("--noise", action="store_true", help="dephasing from the config T2 values")
    s.add_argument("--trajectory", action="store_true", help="write populations vs time")
    s.add_argument("--record-every", type=int, default=100, help="samples between trajectory rows")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tomography", parents=[common], help="simulated process tomography")
    t.add_argument("program")
    t.add_argument("--trials", type=int, default=1000)
    t.add_argument("--resamples", type=int, default=1000)
    t.add_argument("--noise", action="store_true")
    t.set_defaults(func=cmd_tomography)

    b = sub.add_parser("bench", parents=[common], help="square-pulse sweep vs shaped pulse")
    b.add_argument("--points", type=int, default=None)
    b.add_argument("--no-noise", action="store_true")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export", parents=[common], help="write the sampled waveform CSV")
    e.add_argument("program")
    e.add_argument("--sample-rate", type=float, default=None)
    e.add_argument("--fold", action="store_true", help="nonnegative amplitudes, sign moved into phase")
    e.set_defaults(func=cmd_export)

    i = sub.add_parser("import", parents=[common], help="propagate a waveform CSV")
    i.add_argument("waveform")
    i.add_argument("--program", help="compare against this program's target")
    i.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, VerificationError, SynthesisError, IntegrationError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (InputError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
