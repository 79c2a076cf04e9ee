"""End-to-end acceptance checks.

Each test prints one ``CRITERION n: PASS|FAIL`` line to the terminal (past
pytest's capture) and appends it to ``acceptance_report.txt``. The long
optimizations are shared through a module fixture, so the whole file takes
roughly half an hour on one core.
"""
import json
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

from nmrkrotov import runner
from nmrkrotov.cli import main
from nmrkrotov.experiments import (
    ExperimentSpec,
    build_experiment,
    hard_pulse_response,
    phased_line_integrals,
    sodium_system,
    two_spin_system,
)
from nmrkrotov.grape import grape_gradient
from nmrkrotov.io import parse_config, read_convergence_log, read_pulse_table
from nmrkrotov.krotov import (
    Condition,
    broadband_local_objective,
    delta_functional_decomposition,
    KrotovConfig,
    evaluate,
    krotov_optimize,
    local_objective,
)
from nmrkrotov.propagation import (
    ControlSequence,
    HermitianTransfer,
    NonHermitianTransfer,
    PenaltySpec,
    PropagatorSynthesis,
    forward_propagate,
)
from nmrkrotov.smoothing import high_frequency_fraction
from nmrkrotov.spinops import angular_momentum_operators, half_step_factor

from conftest import cmat, herm, psd, random_system, random_unitary

pytestmark = pytest.mark.slow

REPORT = Path(__file__).resolve().parents[1] / "acceptance_report.txt"
O32 = angular_momentum_operators(1.5)
SWEEP_ITERATIONS = 100
SNAPSHOTS = "100,200,300,400"


def report(n, ok, detail):
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    sys.__stdout__.write("\n" + line + "\n")
    sys.__stdout__.flush()
    with REPORT.open("a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def note(text):
    sys.__stdout__.write("    " + text + "\n")
    with REPORT.open("a", encoding="utf-8") as fh:
        fh.write("    " + text + "\n")


def cfg_text(kind, optimizer, iterations, extra=""):
    return (f"experiment.kind = {kind}\noptimizer.name = {optimizer}\n"
            f"optimizer.max_iterations = {iterations}\n{extra}")


class Runs:
    """Lazily computed optimizations shared between criteria."""

    def __init__(self, root):
        self.root = root
        self.cache = {}
        # (label, kind, optimizer, iterations, J column) for the monotonicity audit
        self.logs = []

    def _cli(self, name, text, seed, *extra):
        cfg = self.root / f"{name}.cfg"
        cfg.write_text(text)
        out = self.root / name
        t0 = time.time()
        assert main(["optimize", "--config", str(cfg), "--out", str(out), "--seed", str(seed), *extra]) == 0
        summary = json.loads((out / "summary.json").read_text())
        J = read_convergence_log(out / "convergence.csv")["J"]
        c = parse_config(text)
        self.logs.append((name, c.kind, c.optimizer, len(J) - 1, J, summary["sweep_guard_activations"]))
        note(f"[{name}: {len(J) - 1} iterations in {time.time() - t0:.0f} s]")
        return out, summary

    def get(self, key):
        if key not in self.cache:
            self.cache[key] = getattr(self, "_" + key)()
        return self.cache[key]

    def _two_spin_smooth(self):
        return self._cli("two_spin_smooth", cfg_text("two_spin_cos3", "krotov_smooth", 500), 0,
                         "--snapshots", SNAPSHOTS)

    def _two_spin_smooth_repeat(self):
        return self._cli("two_spin_smooth_repeat", cfg_text("two_spin_cos3", "krotov_smooth", 500), 0)

    def _two_spin_plain(self):
        return self._cli("two_spin_plain", cfg_text("two_spin_cos3", "krotov", 500), 0)

    def _na23_central(self):
        return self._cli("na23_central", cfg_text("na23_central", "krotov_smooth", 500), 0)

    def _na23_satellite(self):
        return self._cli("na23_satellite", cfg_text("na23_satellite", "krotov_smooth", 200), 0)

    def _na23_broadband(self):
        return self._cli("na23_broadband", cfg_text("na23_broadband", "krotov_smooth", 150), 0)

    def _plain_sodium(self):
        return [self._cli(f"{kind}_plain", cfg_text(kind, "krotov", its), 1)
                for kind, its in (("na23_central", 60), ("na23_satellite", 60), ("na23_broadband", 30))]

    def _seed_sweep(self):
        text = cfg_text("two_spin_cos3", "krotov_smooth", SWEEP_ITERATIONS,
                        "compare.optimizers = krotov_smooth\ncompare.seeds = 20\n")
        cfg = parse_config(text)
        t0 = time.time()
        summary = runner.compare(cfg, self.root / "sweep", seed0=0)
        lines = (self.root / "sweep" / "compare.csv").read_text().splitlines()
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
        note(f"[seed sweep: 20 runs in {time.time() - t0:.0f} s]")
        return summary["krotov_smooth"], rows


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    if REPORT.exists():
        REPORT.unlink()
    return Runs(tmp_path_factory.mktemp("acceptance"))


def absorptive_integrals(rho, sys, fq):
    """Line integrals with the zero-order phase set to make the central line absorptive."""
    return phased_line_integrals(rho, sys, (0.0, -fq, fq), fq / 2)[0]


def final_state(out, kind, omega_q=60.0):
    seq = read_pulse_table(out / "pulses.csv")
    sys = sodium_system(omega_q)
    U = forward_propagate(seq, sys)[-1]
    return U @ O32.Iz @ U.conj().T, sys


def test_criterion_01_two_spin_transfer(runs):
    out, summary = runs.get("two_spin_smooth")
    eff = summary["efficiency"]
    stats, rows = runs.get("seed_sweep")
    effs = np.array([float(r["efficiency"]) for r in rows])
    above = int(np.sum(effs > 0.90))
    ok = eff >= 0.95 and above >= 19
    report(1, ok, f"seed-0 efficiency {eff:.4f} after {summary['iterations']} iterations (target >= 0.95); "
                  f"{above}/20 seeds > 0.90 after {SWEEP_ITERATIONS} iterations (target >= 19)")
    note(f"sweep efficiencies: min {effs.min():.4f}, median {np.median(effs):.4f}, max {effs.max():.4f}")
    shift = summary["J"] - summary["phi"] + summary["penalty"]
    note(f"J {summary['J']:.6f} = phi {summary['phi']:.6f} + positivization {shift:.6f} "
         f"- penalty {summary['penalty']:.6f}; "
         "the efficiency is bounded by the penalty trade-off at lambda = 1e-4 (see decisions ledger)")
    # why the default start is band-limited: same seed and budget from both kinds of guess
    problem = build_experiment(ExperimentSpec("two_spin_cos3"))
    for label, knots in (("5-knot", 5), ("per-step uniform", None)):
        res = krotov_optimize(problem.random_guess(0, 100.0, knots), problem.conditions,
                              KrotovConfig(max_iterations=30))
        effs = res.log.column("efficiency")
        note(f"{label} start: efficiency {effs[0]:.3f} initially, {effs[-1]:.3f} after 30 plain iterations")
    assert ok


def test_criterion_02_monotonicity(runs):
    for key in ("two_spin_smooth", "two_spin_plain", "na23_central", "na23_satellite",
                "na23_broadband", "plain_sodium"):
        runs.get(key)
    _, rows = runs.get("seed_sweep")
    total, bad, guard, cells = 0, 0, 0, set()
    for name, kind, optimizer, iterations, J, damped in runs.logs:
        total += iterations
        guard += damped
        bad += int(np.sum(J[1:] < J[:-1] - 1e-9 * (1.0 + np.abs(J[:-1]))))
        cells.add((kind, optimizer))
    for r in rows:
        total += int(r["iterations"])
        bad += int(r["violations"])
        guard += int(r["sweep_guard_activations"])
    kinds = {"two_spin_cos3", "na23_central", "na23_satellite", "na23_broadband"}
    covered = cells >= {(k, o) for k in kinds for o in ("krotov", "krotov_smooth")}
    ok = bad == 0 and total >= 2000 and covered
    report(2, ok, f"{bad} violations over {total} accumulated iterations "
                  f"({len(cells)} kind/optimizer pairs, all 8 covered: {covered})")
    note(f"sweeps that lowered J before damping: {guard}")
    assert ok


def psd_condition(rng, kappa):
    sys = random_system(rng, 4, 2)
    return Condition(sys, HermitianTransfer(psd(rng, 4), psd(rng, 4), kappa=kappa))


def test_criterion_03_decomposition_identity():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(3000 + i)
        n = (8, 32)[i % 2]
        cond = psd_condition(rng, float(rng.uniform(0.1, 3)))
        seq = ControlSequence(rng.normal(size=(n, 2)), 0.05, cond.system.labels)
        seq2 = seq.with_amps(seq.amps + rng.normal(scale=0.5, size=seq.amps.shape))
        lhs, terms = delta_functional_decomposition(seq, seq2, cond.objective, cond.system,
                                                    PenaltySpec((0.02, 0.05)))
        worst = max(worst, abs(lhs - sum(terms)) / (1 + abs(lhs)))
    ok = worst < 1e-8
    report(3, ok, f"worst |dJ - sum of terms| / (1 + |dJ|) = {worst:.2e} over 20 instances (target < 1e-8)")
    assert ok


def _fd(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for k in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def test_criterion_04_gradient_checks():
    worst = {}
    for seed in range(10):
        rng = np.random.default_rng(4000 + seed)
        ops = np.array([herm(rng, 4) for _ in range(3)])
        kw = dict(Uprime=random_unitary(rng, 4), B=cmat(rng, 4), A=half_step_factor(herm(rng, 4), 0.05),
                  control_ops=ops, lambdas=np.full(3, 0.3), dt=0.05)
        prev, cand = rng.normal(size=3), rng.normal(size=3)
        _, g = local_objective(cand, prev, return_gradient=True, **kw)
        worst["local_objective"] = max(worst.get("local_objective", 0),
                                       _rel(g, _fd(lambda c: local_objective(c, prev, **kw), cand)))

        states = [(random_unitary(rng, 4), cmat(rng, 4), half_step_factor(herm(rng, 4), 0.05)) for _ in range(3)]
        lam = np.array([0.1, 0.2])
        prev, cand = rng.normal(size=2), rng.normal(size=2)
        _, g = broadband_local_objective(cand, prev, states, ops[:2], lam, 0.05, return_gradient=True)
        fd = _fd(lambda c: broadband_local_objective(c, prev, states, ops[:2], lam, 0.05), cand)
        worst["broadband_local_objective"] = max(worst.get("broadband_local_objective", 0), _rel(g, fd))

        sys = random_system(rng, 4, 2)
        for name, obj in (("grape/hermitian", HermitianTransfer(herm(rng, 4), herm(rng, 4), kappa=0.5)),
                          ("grape/non-hermitian", NonHermitianTransfer(cmat(rng, 4), cmat(rng, 4))),
                          ("grape/synthesis", PropagatorSynthesis(random_unitary(rng, 4), "real-trace")),
                          ("grape/synthesis-squared", PropagatorSynthesis(random_unitary(rng, 4), "squared-modulus"))):
            conds = [Condition(sys, obj)]
            seq = ControlSequence(rng.normal(size=(6, 2)), 0.2, sys.labels)
            pen = PenaltySpec((0.05,))
            g = grape_gradient(seq, conds, pen)
            fd = _fd(lambda a: evaluate(seq.with_amps(a), conds, pen).J, seq.amps)
            worst[name] = max(worst.get(name, 0), _rel(g, fd))
    ok = all(v < 1e-5 for v in worst.values())
    report(4, ok, "worst relative FD mismatch over 10 instances each: "
                  + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (target < 1e-5)")
    assert ok


def test_criterion_05_strang_order():
    rng = np.random.default_rng(5)
    sys = two_spin_system(140.0)
    T = 1 / 140
    coef = rng.uniform(-300, 300, size=(4, 3))

    def controls(n):
        x = (np.arange(n) + 0.5) / n
        basis = np.stack([np.ones_like(x), np.sin(2 * np.pi * x), np.cos(2 * np.pi * x)])
        return 2 * np.pi * (coef @ basis).T

    def err(n):
        seq = ControlSequence(controls(n), T / n, sys.labels)
        ref = np.eye(4, dtype=complex)
        for j in range(n):
            ref = expm(-1j * seq.dt * (sys.H0 + np.tensordot(seq.amps[j], sys.control_ops, 1))) @ ref
        return np.linalg.norm(forward_propagate(seq, sys)[-1] - ref)

    ratio = err(40) / err(80)
    ok = 3.2 <= ratio <= 4.8
    report(5, ok, f"error ratio N=40 vs N=80: {ratio:.3f} (target in [3.2, 4.8])")
    assert ok


def test_criterion_06_sodium_central(runs):
    out, summary = runs.get("na23_central")
    rho, sys = final_state(out, "na23_central")
    I = absorptive_integrals(rho, sys, 180.0)
    hard = absorptive_integrals(hard_pulse_response(O32.Iz, O32.Ix), sys, 180.0)
    sat = (abs(I[1]) + abs(I[2])) / abs(I[0])
    eff, enh = summary["efficiency"], summary["enhancement_vs_hard_pulse"]
    ok = eff >= 0.90 and enh >= 1.4 and sat <= 0.05
    report(6, ok, f"central efficiency {eff:.4f} (>= 0.90), enhancement {enh:.3f} (>= 1.4), "
                  f"satellite/central integrals {sat:.4f} (<= 0.05)")
    note(f"line integrals (central, low, high): optimized {np.round(I, 4).tolist()}, "
         f"hard pulse {np.round(hard, 4).tolist()}; RMS power {summary['rms_power_hz']['I']:.1f} Hz "
         "(reported reference 45 Hz)")
    assert ok


def test_criterion_07_sodium_satellite(runs):
    out, summary = runs.get("na23_satellite")
    rho, sys = final_state(out, "na23_satellite")
    I = absorptive_integrals(rho, sys, 180.0)
    hard = absorptive_integrals(hard_pulse_response(O32.Iz, O32.Ix), sys, 180.0)
    eff = summary["efficiency"]
    ok = eff >= 0.90
    report(7, ok, f"satellite efficiency {eff:.4f} (target >= 0.90)")
    note(f"central line at {abs(I[0]) / abs(hard[0]):.3f} of the hard-pulse central integral "
         f"(satellites at {abs(I[1]) / abs(hard[1]):.3f} and {abs(I[2]) / abs(hard[2]):.3f}); "
         f"RMS power {summary['rms_power_hz']['I']:.1f} Hz (reported reference 54 Hz)")
    assert ok


def test_criterion_08_broadband(runs):
    out, summary = runs.get("na23_broadband")
    effs = np.array(summary["efficiencies"])
    mean = float(effs.mean())
    ok = mean >= 0.90
    report(8, ok, f"mean efficiency over 40..80 Hz {mean:.4f} (target >= 0.90); per condition "
                  + ", ".join(f"{e:.4f}" for e in effs))
    # absolute transfer amplitude under a few normalizations of the central operator
    note(f"absolute mean transfer: {1.5 * mean:.3f} with matrix elements 1/2 (bound 1.5), "
         f"{3.0 * mean:.3f} with matrix elements 1 (bound 3); reported 1.89 is not reproduced by either")
    note(f"RMS power {summary['rms_power_hz']['I']:.1f} Hz (reported reference 170 Hz)")
    assert ok


def test_criterion_09_smoothness(runs):
    _, smooth = runs.get("two_spin_smooth")
    _, plain = runs.get("two_spin_plain")
    hs, hp = smooth["high_frequency_fraction"], plain["high_frequency_fraction"]
    ok = hs <= 0.1 * hp
    report(9, ok, f"high-frequency fraction smoothed {hs:.2e} vs plain {hp:.2e} on seed 0 (target ratio <= 0.1)")
    # where the smoothed run loses its band limit
    out = runs.get("two_spin_smooth")[0]
    log = read_convergence_log(out / "convergence.csv")
    first = int(np.argmax(log["alpha"][1:] < 1.0)) + 1 if np.any(log["alpha"][1:] < 1.0) else None
    hist = []
    for it in SNAPSHOTS.split(","):
        seq = read_pulse_table(out / "snapshots" / f"pulses_iter_{int(it):05d}.csv")
        hist.append(f"{it}: {high_frequency_fraction(seq, None):.1e}")
    note(f"smoothed run: alpha = 1 up to iteration {first - 1 if first else len(log) - 1}, "
         f"smallest accepted alpha {log['alpha'][1:].min():.2e}; high-frequency fraction by iteration "
         + ", ".join(hist))
    note(f"final J smoothed {smooth['J']:.6f} vs plain {plain['J']:.6f}: past the best band-limited controls, "
         "every J increase needs out-of-band content, so alpha shrinks and the run drifts to the plain optimum")
    rs, rp = smooth["rms_power_hz"], plain["rms_power_hz"]
    note(f"RMS power I/S: smoothed {rs['I']:.0f}/{rs['S']:.0f} Hz, plain {rp['I']:.0f}/{rp['S']:.0f} Hz "
         "(reported references 141/71, 92/91, 12/102 Hz)")
    assert ok


def test_criterion_10_determinism(runs):
    a, _ = runs.get("two_spin_smooth")
    b, _ = runs.get("two_spin_smooth_repeat")
    same = (a / "pulses.csv").read_bytes() == (b / "pulses.csv").read_bytes()
    report(10, same, "criterion-1 run repeated with seed 0: pulse tables "
                     + ("byte-identical" if same else "differ"))
    assert same
