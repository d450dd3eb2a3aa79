import math

import numpy as np
import pytest

from ccdd.embedder import build_codebook
from ccdd.errors import ConfigError
from ccdd.schedules import DiscreteSchedule
from ccdd.theoria import (
    CoupledToyProcess,
    LoopedBlock,
    fit_order,
    forward_channel,
    info_decay_suite,
    looped_emulates_integrator,
    mutual_information,
    run_verification_suite,
    simulate_looped_via_euler,
    support_atomicity_check,
    trotter_error,
)


class TestLoopedEuler:
    def test_single_step_is_one_application(self):
        block = LoopedBlock(6, seed=1)
        h0 = np.random.default_rng(2).standard_normal((3, 6))
        looped, euler, gap = simulate_looped_via_euler(block, h0, 1)
        assert np.allclose(looped[-1], block(h0))
        assert gap <= 1e-12

    def test_identity_block_stays_put(self):
        h0 = np.random.default_rng(3).standard_normal((2, 4))
        looped, euler, gap = simulate_looped_via_euler(lambda h: h, h0, 32)
        assert np.array_equal(looped[-1], h0)
        assert np.array_equal(euler[-1], h0)
        assert gap == 0.0

    @pytest.mark.parametrize("T", [16, 64, 128])
    def test_euler_reproduces_rollout(self, T):
        block = LoopedBlock(8, seed=4)
        h0 = np.random.default_rng(5).standard_normal((4, 8)) * 0.5
        _, _, gap = simulate_looped_via_euler(block, h0, T)
        assert gap <= 1e-12

    def test_rejects_zero_steps(self):
        with pytest.raises(ConfigError):
            simulate_looped_via_euler(lambda h: h, np.zeros(3), 0)


class TestIntegratorEmulation:
    def test_zero_field_is_exact(self):
        err = looped_emulates_integrator(lambda z, t: np.zeros_like(z), 16, np.ones(4))
        assert err == 0.0

    def test_linear_field_error_near_euler_bound(self):
        err = looped_emulates_integrator(lambda z, t: -z, 16, np.ones(4))
        bound = abs((1 - 1 / 16) ** 16 - math.exp(-1.0))
        assert err <= 3.0 * bound
        assert err > 0.1 * bound

    def test_order_one_convergence(self):
        meshes = [16, 32, 64, 128]
        errors = [looped_emulates_integrator(lambda z, t: -z, n, np.ones(2)) for n in meshes]
        slope = fit_order(meshes, errors)
        assert 0.8 <= slope <= 1.2

    def test_error_halves_with_mesh(self):
        e16 = looped_emulates_integrator(lambda z, t: -z, 16, np.ones(2))
        e32 = looped_emulates_integrator(lambda z, t: -z, 32, np.ones(2))
        assert 1.5 < e16 / e32 < 2.5

    def test_custom_block_builder(self):
        # a builder that implements the same explicit step map must agree
        field = lambda z, t: -z
        builder = lambda dt, tk: (lambda z: z + dt * field(z, tk))
        a = looped_emulates_integrator(field, 32, np.ones(3))
        b = looped_emulates_integrator(field, 32, np.ones(3), block_builder=builder)
        assert a == pytest.approx(b, abs=1e-15)


class TestTrotter:
    def test_decoupled_generators_split_exactly(self):
        process = CoupledToyProcess(g01=0.0, g10=0.0)
        assert trotter_error(process, 1.0 / 16.0) < 1e-3

    def test_gap_shrinks_with_refinement(self):
        process = CoupledToyProcess()
        coarse = trotter_error(process, 1.0)
        fine = trotter_error(process, 1.0 / 16.0)
        assert coarse > fine

    def test_order_one_slope(self):
        process = CoupledToyProcess()
        meshes = [16, 32, 64, 128]
        gaps = [trotter_error(process, 1.0 / n) for n in meshes]
        slope = fit_order(meshes, gaps)
        assert 0.8 <= slope <= 1.2

    def test_unstable_grid_rejected(self):
        with pytest.raises(ConfigError):
            CoupledToyProcess(ref_dt=1e-2)

    def test_mass_conserved(self):
        process = CoupledToyProcess()
        _, dz = process.grid()
        terminal = process.split_terminal(1.0 / 16.0)
        assert float(terminal.sum()) * dz == pytest.approx(1.0, abs=1e-6)


class TestSupportAtomicity:
    def test_discrete_support_bounded(self):
        cb = build_codebook("random_orthonormal", 2, 4, seed=1)
        n_disc, n_cont = support_atomicity_check(2, 2, cb, 0.5, 10_000, seed=2)
        assert n_disc <= 9
        assert n_cont == 10_000

    def test_time_zero_continuous_is_single_point(self):
        cb = build_codebook("random_orthonormal", 2, 4, seed=3)
        _, n_cont = support_atomicity_check(2, 2, cb, 0.0, 500, seed=4)
        assert n_cont == 1

    def test_enumeration_bound_enforced(self):
        cb = build_codebook("random_orthonormal", 5, 8, seed=5)
        with pytest.raises(ConfigError):
            support_atomicity_check(5, 4, cb, 0.5, 100)


class TestInfoDecay:
    def test_identity_channel_gives_source_entropy(self):
        sched = DiscreteSchedule("masked_linear")
        source = np.full(4, 0.25)
        mi = mutual_information(source, forward_channel(sched, 4, 0.0))
        assert mi == pytest.approx(math.log(4.0), abs=1e-12)

    def test_terminal_mask_gives_zero(self):
        sched = DiscreteSchedule("masked_linear")
        mi = mutual_information(np.full(4, 0.25), forward_channel(sched, 4, 1.0))
        assert mi == pytest.approx(0.0, abs=1e-12)

    def test_erasure_channel_value(self):
        sched = DiscreteSchedule("masked_linear")
        mi = mutual_information(np.full(4, 0.25), forward_channel(sched, 4, 0.5))
        assert mi == pytest.approx(0.5 * math.log(4.0), abs=1e-12)

    def test_monotone_decay_all_schedules(self):
        grid = np.linspace(0.0, 1.0, 21)
        for sched in (DiscreteSchedule("masked_linear"), DiscreteSchedule("uniform", rate=2.0)):
            suite = info_decay_suite(4, sched, grid)
            assert suite["monotone"]

    def test_token_sampling_bounds(self):
        suite = info_decay_suite(6, DiscreteSchedule("masked_linear"), [0.0, 0.5, 1.0])
        assert suite["mi_logits_token"] <= suite["token_entropy"] + 1e-12
        assert suite["token_entropy"] <= suite["log_vocab"] + 1e-12

    def test_brute_force_bound_enforced(self):
        with pytest.raises(ConfigError):
            info_decay_suite(9, DiscreteSchedule("masked_linear"), [0.5])


def test_full_suite_passes():
    rows = run_verification_suite()
    failed = [r.name for r in rows if not r.passed]
    assert not failed, f"failing checks: {failed}"


def test_suite_subset_and_unknown():
    rows = run_verification_suite(["mi_decay"])
    assert {r.name for r in rows} == {
        "mi_monotone", "mi_erasure_value_gap", "token_sampling_info_bound"
    }
    with pytest.raises(ConfigError):
        run_verification_suite(["nonsense"])
