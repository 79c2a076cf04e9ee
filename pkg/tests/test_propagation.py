import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import unitary_group

from nmrkrotov.propagation import (
    ControlSequence,
    HermitianTransfer,
    NonHermitianTransfer,
    PenaltySpec,
    PropagatorSynthesis,
    backward_propagate,
    control_exponential_gradient,
    final_cost,
    forward_propagate,
    normalized_efficiency,
    running_cost,
    terminal_adjoint,
    total_functional,
    unitary_bound,
)
from nmrkrotov.spinops import SpinSystem, angular_momentum_operators, control_exponential
from nmrkrotov.experiments import two_spin_system


def herm(rng, d):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return 0.5 * (X + X.conj().T)


def cmat(rng, d):
    return rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))


def random_system(rng, d=4, K=2):
    return SpinSystem((0.5, 0.5), herm(rng, d), tuple((f"c{k}", herm(rng, d)) for k in range(K)))


def spin_half(H0=None):
    o = angular_momentum_operators(0.5)
    return SpinSystem((0.5,), np.zeros((2, 2)) if H0 is None else H0, (("Ix", o.Ix), ("Iy", o.Iy)))


def test_control_sequence_validation():
    with pytest.raises(ValueError):
        ControlSequence(np.zeros((0, 2)), 1e-3, ("a", "b"))
    with pytest.raises(ValueError):
        ControlSequence(np.zeros((3, 2)), 0.0, ("a", "b"))
    with pytest.raises(ValueError):
        ControlSequence(np.array([[np.nan, 0.0]]), 1e-3, ("a", "b"))
    seq = ControlSequence(np.zeros((5, 2)), 2e-3, ("a", "b"))
    assert seq.duration == pytest.approx(1e-2)


def test_random_guess_bounds_and_seed():
    a = ControlSequence.random(200, 1e-3, ("x", "y"), 100.0, seed=4)
    b = ControlSequence.random(200, 1e-3, ("x", "y"), 100.0, seed=4)
    assert np.array_equal(a.amps, b.amps)
    assert np.abs(a.amps).max() <= 2 * np.pi * 100
    s = ControlSequence.random(200, 1e-3, ("x", "y"), 100.0, seed=4, knots=5)
    assert np.abs(s.amps).max() == pytest.approx(2 * np.pi * 100)


def test_forward_zero_controls():
    seq = ControlSequence.zeros(10, 1e-3, ("Ix", "Iy"))
    U = forward_propagate(seq, spin_half())
    assert np.allclose(U, np.eye(2))
    H0 = herm(np.random.default_rng(0), 2)
    U = forward_propagate(seq, spin_half(H0))
    np.testing.assert_allclose(U[-1], expm(-1j * seq.duration * H0), atol=1e-12)


def test_forward_unitarity_and_channel_check():
    rng = np.random.default_rng(1)
    sys = random_system(rng)
    seq = ControlSequence(rng.normal(size=(200, 2)), 0.01, ("c0", "c1"))
    U = forward_propagate(seq, sys)
    assert U.shape == (201, 4, 4)
    assert max(np.linalg.norm(u @ u.conj().T - np.eye(4)) for u in U) < 1e-10
    with pytest.raises(ValueError):
        forward_propagate(ControlSequence(np.zeros((3, 3)), 0.1, ("a", "b", "c")), sys)


def test_backward_examples():
    seq = ControlSequence.zeros(6, 1e-2, ("Ix", "Iy"))
    BN = cmat(np.random.default_rng(2), 2)
    assert np.allclose(backward_propagate(BN, seq, spin_half()), BN)
    H0 = herm(np.random.default_rng(3), 2)
    B = backward_propagate(np.eye(2), seq, spin_half(H0))
    for j in range(7):
        np.testing.assert_allclose(B[j], expm(-1j * (6 - j) * seq.dt * H0), atol=1e-12)


def test_backward_times_forward_is_final():
    rng = np.random.default_rng(4)
    sys = random_system(rng)
    seq = ControlSequence(rng.normal(size=(30, 2)), 0.05, ("c0", "c1"))
    U = forward_propagate(seq, sys)
    B = backward_propagate(np.eye(4), seq, sys)
    for j in range(31):
        assert np.abs(B[j] @ U[j] - U[-1]).max() < 1e-10


def test_terminal_adjoint_examples():
    E = np.eye(2)
    np.testing.assert_allclose(terminal_adjoint(HermitianTransfer(E, E, kappa=1.0), E), 2 * E)
    Sp = angular_momentum_operators(0.5).Iplus
    np.testing.assert_allclose(terminal_adjoint(NonHermitianTransfer(Sp, Sp), E), 2 * E)


def _fd_check(obj, U, rel=1e-6):
    """Finite differences of the positivized cost along real and imaginary entries of U."""
    B = terminal_adjoint(obj, U)

    def cost(V):
        return final_cost(obj, V)[1]

    h = 1e-6
    d = U.shape[0]
    for a in range(d):
        for b in range(d):
            for unit in (1.0, 1j):
                dU = np.zeros((d, d), complex)
                dU[a, b] = unit
                fd = (cost(U + h * dU) - cost(U - h * dU)) / (2 * h)
                an = 2 * np.real(np.trace(B @ dU))
                assert abs(fd - an) <= rel * max(1.0, abs(an)), (a, b, unit, fd, an)


@pytest.mark.parametrize("seed", range(3))
def test_terminal_adjoint_finite_differences(seed):
    rng = np.random.default_rng(seed)
    U = unitary_group.rvs(4, random_state=seed)
    _fd_check(HermitianTransfer(herm(rng, 4), herm(rng, 4), kappa=0.7), U)
    _fd_check(NonHermitianTransfer(cmat(rng, 4), cmat(rng, 4), kappa=1.0), U)
    UD = unitary_group.rvs(4, random_state=seed + 10)
    _fd_check(PropagatorSynthesis(UD, "real-trace", kappa=0.3), U)
    _fd_check(PropagatorSynthesis(UD, "squared-modulus"), U)


def test_final_cost_examples():
    o = angular_momentum_operators(0.5)
    E = np.eye(2)
    assert final_cost(HermitianTransfer(o.Iz, o.Iz, kappa=0), E)[0] == pytest.approx(0.5)
    assert final_cost(NonHermitianTransfer(o.Iplus, o.Iplus), E)[0] == pytest.approx(1.0)
    assert final_cost(PropagatorSynthesis(np.eye(4)), np.eye(4))[0] == pytest.approx(4.0)
    # positivization adds kappa * d on unitaries
    phi, phit = final_cost(NonHermitianTransfer(o.Iplus, o.Iplus, kappa=1.0), E)
    assert phit - phi == pytest.approx(2.0)


def test_running_cost():
    seq = ControlSequence(np.full((100, 1), 2 * np.pi * 100), 1e-4, ("x",))
    assert running_cost(seq, PenaltySpec((1e-4,))) == pytest.approx(0.39478417604357435)
    assert running_cost(seq.with_amps(2 * seq.amps), PenaltySpec((1e-4,))) == pytest.approx(4 * 0.39478417604357435)
    assert running_cost(ControlSequence.zeros(4, 1e-3, ("x",)), PenaltySpec((1.0,))) == 0.0
    with pytest.raises(ValueError):
        PenaltySpec((-1.0,))


def test_total_functional_examples():
    o = angular_momentum_operators(0.5)
    seq = ControlSequence.zeros(5, 1e-3, ("Ix", "Iy"))
    v = total_functional(HermitianTransfer(o.Iz, o.Iz, kappa=0.0), seq, spin_half(), PenaltySpec((1e-4,)))
    assert v.J == pytest.approx(0.5)
    rng = np.random.default_rng(5)
    seq = ControlSequence(rng.normal(scale=50, size=(5, 2)), 1e-3, ("Ix", "Iy"))
    pen = PenaltySpec((1e-4,))
    v = total_functional(HermitianTransfer(np.zeros((2, 2)), o.Iz, kappa=0.0), seq, spin_half(), pen)
    assert v.J == pytest.approx(-running_cost(seq, pen))
    v1 = total_functional(NonHermitianTransfer(o.Iplus, o.Iplus, kappa=1.0), seq, spin_half(), pen)
    assert v1.phi_positivized - v1.phi == pytest.approx(2.0)


def test_normalized_efficiency():
    rng = np.random.default_rng(6)
    C = cmat(rng, 4)
    obj = NonHermitianTransfer(C, cmat(rng, 4))
    assert normalized_efficiency(obj, np.trace(C @ C.conj().T).real) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        normalized_efficiency(NonHermitianTransfer(np.zeros((2, 2)), np.eye(2)), 0.0)


def test_two_spin_maximum_is_one():
    o = angular_momentum_operators(0.5)
    spins = (0.5, 0.5)
    from nmrkrotov.spinops import embed
    target = embed(o.Iminus, 0, spins) @ embed(0.5 * o.identity + o.Iz, 1, spins)
    obj = NonHermitianTransfer(target, embed(o.Iplus, 1, spins))
    assert obj.normalization() == pytest.approx(1.0)


def test_unitary_bound_against_hill_climbing():
    """Sorted-eigenvalue bound versus a crude random search over unitaries."""
    rng = np.random.default_rng(7)
    for _ in range(3):
        C, R = herm(rng, 4), herm(rng, 4)
        bound = unitary_bound(C, R)
        best, U = -np.inf, np.eye(4, dtype=complex)
        for step in (0.5, 0.1, 0.02, 0.005):
            for _ in range(400):
                trial = expm(-1j * step * herm(rng, 4)) @ U
                val = np.real(np.trace(C @ trial @ R @ trial.conj().T))
                if val > best:
                    best, U = val, trial
        assert best <= bound + 1e-9
        assert best >= bound - 1e-3 * max(1.0, abs(bound))


def test_conservation_over_propagation():
    rng = np.random.default_rng(8)
    sys = two_spin_system(140.0)
    seq = ControlSequence(rng.normal(scale=600, size=(200, 4)), 1 / 140 / 200, sys.labels)
    rho0 = herm(rng, 4)
    U = forward_propagate(seq, sys)
    for u in U[::20]:
        rho = u @ rho0 @ u.conj().T
        assert abs(np.trace(rho) - np.trace(rho0)) < 1e-10 * max(1, abs(np.trace(rho0)))
        p0 = np.trace(rho0 @ rho0).real
        assert abs(np.trace(rho @ rho).real - p0) < 1e-10 * p0


def test_phi2_global_phase_invariant():
    rng = np.random.default_rng(9)
    obj = NonHermitianTransfer(cmat(rng, 4), cmat(rng, 4))
    U = unitary_group.rvs(4, random_state=1)
    assert abs(obj.phi(U) - obj.phi(np.exp(0.73j) * U)) < 1e-12 * max(1, obj.phi(U))


def test_strang_global_second_order():
    rng = np.random.default_rng(10)
    sys = two_spin_system(140.0)
    T = 1 / 140
    # smooth controls so that refining the grid samples the same function
    t = lambda n: (np.arange(n) + 0.5) / n
    f = lambda x: np.stack([300 * np.sin(2 * np.pi * x), 200 * np.cos(np.pi * x),
                            100 * x, -250 * np.ones_like(x)], axis=1) * 2 * np.pi

    def err(n):
        seq = ControlSequence(f(t(n)), T / n, sys.labels)
        # dense reference: many substeps per bin, exact exponential of the full generator
        ref = np.eye(4, dtype=complex)
        for j in range(n):
            H = sys.H0 + np.tensordot(seq.amps[j], sys.control_ops, 1)
            ref = expm(-1j * seq.dt * H) @ ref
        return np.linalg.norm(forward_propagate(seq, sys)[-1] - ref)

    ratio = err(40) / err(80)
    assert 3.2 <= ratio <= 4.8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_control_exponential_gradient_fd(seed):
    rng = np.random.default_rng(seed)
    ops = np.array([herm(rng, 4) for _ in range(3)])
    w = rng.normal(scale=3, size=3)
    W = cmat(rng, 4)
    dt = 0.4
    G, grad = control_exponential_gradient(w, ops, dt, W)
    np.testing.assert_allclose(G, control_exponential(w, ops, dt), atol=1e-12)
    h = 1e-6
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fp = 2 * np.real(np.trace(control_exponential(w + e, ops, dt) @ W))
        fm = 2 * np.real(np.trace(control_exponential(w - e, ops, dt) @ W))
        assert abs((fp - fm) / (2 * h) - grad[k]) < 1e-6 * max(1, abs(grad[k]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_auto_kappa_makes_quadratic_form_nonnegative(seed):
    rng = np.random.default_rng(seed)
    obj = HermitianTransfer(herm(rng, 4), herm(rng, 4))
    for _ in range(20):
        X = cmat(rng, 4)
        q = obj.kappa * np.vdot(X, X).real + np.trace(obj.target @ X @ obj.initial @ X.conj().T).real
        assert q >= -1e-10 * np.vdot(X, X).real * max(1.0, obj.kappa)


def test_auto_kappa_zero_for_semidefinite_pair():
    rng = np.random.default_rng(11)
    X, Y = cmat(rng, 3), cmat(rng, 3)
    assert HermitianTransfer(X @ X.conj().T, Y @ Y.conj().T).kappa == pytest.approx(0.0, abs=1e-12)
    o = angular_momentum_operators(1.5)
    assert HermitianTransfer(o.Iz, o.Iz).kappa == pytest.approx(2.25)
