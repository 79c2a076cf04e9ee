"""Config-driven runs: optimization, re-scoring, spectra, profiles, comparisons."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .experiments import (
    Problem,
    build_experiment,
    enhancement_vs_hard_pulse,
    excitation_profile,
    line_integrals,
    phased_line_integrals,
    sodium_system,
    simulate_spectrum,
    transition_efficiency,
)
from .grape import grape_optimize
from .io import (
    RunConfig,
    dump_config,
    export_pulse_table,
    format_float,
    read_pulse_table,
    write_convergence_log,
)
from .krotov import IterationLog, evaluate, krotov_optimize
from .propagation import ControlSequence, forward_propagate
from .smoothing import high_frequency_fraction, regularized_accept, rms_power
from .spinops import angular_momentum_operators

logger = logging.getLogger(__name__)

__all__ = [
    "RunOutcome",
    "initial_guess",
    "optimize",
    "score_sequence",
    "write_run",
    "spectrum_rows",
    "profile_rows",
    "compare",
]


@dataclass
class RunOutcome:
    config: RunConfig
    problem: Problem
    sequence: ControlSequence
    log: IterationLog
    status: str
    snapshots: dict
    # Krotov sweeps that lowered J and had to be damped
    sweep_guard_activations: int = 0


def initial_guess(cfg: RunConfig, problem: Problem, seed: int | None = None) -> ControlSequence:
    seed = cfg.seed if seed is None else seed
    return problem.random_guess(seed, cfg.max_amplitude_hz, cfg.knots)


def optimize(cfg: RunConfig, seed: int | None = None) -> RunOutcome:
    """Run the configured optimizer from the seeded random guess."""
    problem = build_experiment(cfg.experiment())
    initial = initial_guess(cfg, problem, seed)
    smoother = None
    if cfg.optimizer.endswith("_smooth"):
        spec = cfg.truncation()

        def smoother(J_old, trial, evaluator):
            return regularized_accept(J_old, trial, evaluator, spec)

    wanted = set(cfg.snapshots)
    snapshots = {0: initial} if 0 in wanted else {}

    def callback(it, seq, ev):
        if it in wanted:
            snapshots[it] = seq

    if cfg.optimizer.startswith("krotov"):
        result = krotov_optimize(initial, problem.conditions, cfg.krotov_config(), smoother, callback)
    else:
        result = grape_optimize(initial, problem.conditions, cfg.grape_config(), smoother, callback)
    logger.info("%s finished: %s after %d iterations", cfg.optimizer, result.status, len(result.log) - 1)
    return RunOutcome(cfg, problem, result.sequence, result.log, result.status, snapshots,
                      getattr(result, "sweep_violations", 0))


def score_sequence(problem: Problem, seq: ControlSequence, cfg: RunConfig) -> dict:
    """Figures of merit recomputed from scratch for ``seq``."""
    ev = evaluate(seq, problem.conditions, cfg.penalty())
    out = {
        "kind": problem.spec.kind,
        "J": ev.J,
        "phi": ev.phi,
        "penalty": ev.penalty,
        "efficiency": ev.efficiency,
        "efficiencies": list(ev.efficiencies),
        "rms_power_hz": dict(zip([problem.labels[a][:-1] for a, _ in problem.channel_pairs],
                                 rms_power(seq, problem.channel_pairs).tolist())),
        "high_frequency_fraction": high_frequency_fraction(seq, cfg.cutoff_hz),
    }
    if problem.spec.kind != "two_spin_cos3":
        o = angular_momentum_operators(1.5)
        # broadband runs are read out at the nominal coupling
        sys = sodium_system(problem.spec.omega_q_hz)
        U = forward_propagate(seq, sys)[-1]
        rho = U @ o.Iz @ U.conj().T
        out["central_coherence"] = transition_efficiency(rho, "central", False)
        out["satellite_coherence"] = transition_efficiency(rho, "satellite", False)
        if problem.spec.kind in ("na23_central", "na23_broadband"):
            out["enhancement_vs_hard_pulse"] = enhancement_vs_hard_pulse(seq, problem.spec)
    return out


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_run(outcome: RunOutcome, out_dir, phase_amp: bool = False) -> dict:
    """Write pulse table, log, snapshots and a summary re-scored from the file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pulses = out / "pulses.csv"
    export_pulse_table(outcome.sequence, pulses)
    if phase_amp:
        export_pulse_table(outcome.sequence, out / "pulses_phase_amp.csv", phase_amp=True)
    write_convergence_log(outcome.log, out / "convergence.csv")
    for it, seq in sorted(outcome.snapshots.items()):
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        export_pulse_table(seq, snap_dir / f"pulses_iter_{it:05d}.csv", phase_amp=phase_amp)
    (out / "config.cfg").write_text(dump_config(outcome.config), encoding="utf-8", newline="\n")
    summary = score_sequence(outcome.problem, read_pulse_table(pulses), outcome.config)
    summary.update(optimizer=outcome.config.optimizer, seed=outcome.config.seed,
                   status=outcome.status, iterations=len(outcome.log) - 1,
                   sweep_guard_activations=outcome.sweep_guard_activations)
    (out / "summary.json").write_text(_json(summary), encoding="utf-8", newline="\n")
    return summary


def spectrum_rows(cfg: RunConfig, seq: ControlSequence):
    """Spectrum of the state prepared by ``seq`` at the configured coupling.

    Returns ``(rows, summary)``; for spin-3/2 kinds the summary holds the
    central and satellite line integrals.
    """
    problem = build_experiment(cfg.experiment())
    cond = problem.conditions[0]
    if seq.n_channels != len(problem.labels) or not np.isclose(seq.dt, problem.dt, rtol=1e-9):
        raise ValueError("pulse table does not match the configured experiment grid")
    sys = cond.system
    rho0 = cond.objective.initial
    U = forward_propagate(seq, sys)[-1]
    rho = U @ rho0 @ U.conj().T
    spec = simulate_spectrum(rho, sys, cfg.dwell_s, cfg.points, cfg.broadening_hz,
                             phase=np.deg2rad(cfg.phase_deg))
    rows = [(f, i) for f, i in zip(spec.freq_axis, spec.intensity)]
    summary = {}
    if problem.spec.kind != "two_spin_cos3":
        fq = 3.0 * problem.spec.omega_q_hz
        half = 0.5 * fq
        central, low, high = line_integrals(spec, (0.0, -fq, fq), half)
        phased, phase = phased_line_integrals(rho, sys, (0.0, -fq, fq), half, dwell=cfg.dwell_s,
                                              points=cfg.points, broadening_hz=cfg.broadening_hz)
        c, lo, hi = phased
        summary = {"central_integral": central, "satellite_integrals": [low, high],
                   "central_absorptive_phase_rad": phase,
                   "central_absorptive_integrals": [c, lo, hi],
                   "satellite_to_central": (abs(lo) + abs(hi)) / abs(c) if c else float("inf")}
    return rows, summary


def profile_rows(cfg: RunConfig, seq: ControlSequence):
    kind = cfg.kind
    which = "satellite" if kind == "na23_satellite" else "central"
    return excitation_profile(seq, cfg.profile_grid_hz, which)


def _compare_job(args):
    cfg, optimizer, seed = args
    outcome = optimize(replace(cfg, optimizer=optimizer, seed=seed, snapshots=()))
    ev = evaluate(outcome.sequence, outcome.problem.conditions, cfg.penalty())
    return {
        "optimizer": optimizer, "seed": seed, "status": outcome.status,
        "iterations": len(outcome.log) - 1, "J": ev.J, "efficiency": ev.efficiency,
        "high_frequency_fraction": high_frequency_fraction(outcome.sequence, cfg.cutoff_hz),
        "violations": outcome.log.monotonicity_violations(),
        "sweep_guard_activations": outcome.sweep_guard_activations,
    }


def compare(cfg: RunConfig, out_dir, seed0: int | None = None) -> dict:
    """Every configured optimizer on seeds ``seed0 .. seed0 + n - 1``."""
    seed0 = cfg.seed if seed0 is None else seed0
    jobs = [(cfg, opt, seed0 + s) for opt in cfg.compare_optimizers for s in range(cfg.compare_seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            rows = list(pool.map(_compare_job, jobs))
    else:
        rows = [_compare_job(j) for j in jobs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols = ("optimizer", "seed", "status", "iterations", "J", "efficiency", "high_frequency_fraction", "violations",
            "sweep_guard_activations")
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(format_float(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))
    (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    summary = {}
    for opt in cfg.compare_optimizers:
        effs = [r["efficiency"] for r in rows if r["optimizer"] == opt]
        summary[opt] = {
            "runs": len(effs),
            "success_rate": float(np.mean([e > cfg.success_threshold for e in effs])),
            "best_efficiency": max(effs),
            "median_efficiency": float(np.median(effs)),
        }
    (out / "summary.json").write_text(_json({"threshold": cfg.success_threshold, "optimizers": summary}),
                                      encoding="utf-8", newline="\n")
    return summary
