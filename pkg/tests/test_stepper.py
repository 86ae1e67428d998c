"""Tests for time integration, step control, and checkpointing."""

import numpy as np
import pytest

from ipmsim.flatten import FiniteDepth, InfiniteDepth
from ipmsim.profiles import affine_profile, constant_profile, tanh_profile
from ipmsim.spectral import SurfaceField, make_grid
from ipmsim.stepper import (
    CheckpointError,
    RunContext,
    StepControl,
    StepError,
    cfl_dt,
    checkpoint,
    initial_state,
    make_context,
    restore,
    run_simulation,
    step_imex,
)
from ipmsim.strip import StripField, make_strip_grid


def build_ctx(n_x=32, n_z=20, depth=None, profile=None, f_vals=None, **kw):
    depth = depth or FiniteDepth(H=1.0)
    profile = profile or constant_profile(1.0)
    xg = make_grid(n_x, 2 * np.pi)
    z_bot = -1.0 if isinstance(depth, FiniteDepth) else -depth.z_max
    grid = make_strip_grid(xg, n_z, z_bot)
    f0 = SurfaceField(xg, f_vals if f_vals is not None else np.zeros(n_x))
    ctx = make_context(grid, depth, profile, f0, **kw)
    return ctx, f0, StripField.zeros(grid)


class TestSteadyStates:
    @pytest.mark.parametrize("profile", [
        constant_profile(1.0),
        affine_profile(2.0, 0.5),
        tanh_profile(1.0, 0.1),
    ], ids=["constant", "affine", "tanh"])
    @pytest.mark.parametrize("depth", [FiniteDepth(H=1.0), InfiniteDepth(z_max=4.0)],
                             ids=["finite", "infinite"])
    def test_constant_surface_is_invariant(self, profile, depth):
        ctx, f0, g0 = build_ctx(depth=depth, profile=profile,
                                f_vals=np.full(32, 0.04), a_threshold=1e-3)
        state = initial_state(f0, g0, ctx)
        control = StepControl(dt=1e-2)
        new, info = step_imex(state, control, ctx)
        assert np.abs(new.f.values - f0.values).max() < 1e-12
        assert np.abs(new.g_strip.values).max() < 1e-12


class TestStepControl:
    def test_quiescent_cfl_returns_cap(self):
        ctx, f0, g0 = build_ctx()
        state = initial_state(f0, g0, ctx)
        control = StepControl(dt=1e-2, dt_max=0.07)
        zeros = np.zeros(ctx.grid.shape)
        assert cfl_dt(state, control, (zeros, zeros)) <= 0.07
        # stiffness bound still applies with T(f) ~ 1
        k_max = ctx.grid.x_grid.k_half[-1]
        expected = control.cfl_target / (state.stability.taylor.values.max() * k_max)
        assert cfl_dt(state, control, (zeros, zeros)) == pytest.approx(
            min(0.07, expected)
        )

    def test_doubling_resolution_halves_advective_bound(self):
        dts = {}
        for n in (32, 64):
            ctx, f0, g0 = build_ctx(n_x=n)
            state = initial_state(f0, g0, ctx)
            control = StepControl(dt=1e-2, dt_max=1e9)
            ubar = 1e3 * np.ones(ctx.grid.shape)  # advection dominates
            dts[n] = cfl_dt(state, control, (ubar, 0 * ubar))
        assert dts[64] == pytest.approx(dts[32] / 2, rel=1e-12)

    def test_explicit_stability_bound_scan(self):
        """The explicit scheme's stable dt tracks 1/(rho k_probe).

        RK4 on d/dt a = -rho*k*a is stable iff dt*rho*k <= 2.785...; probe a
        high mode and check growth just above and decay just below.
        """
        rho, k_probe = 1.0, 10
        ctx, f0, g0 = build_ctx(n_x=32, n_z=16, depth=InfiniteDepth(z_max=4.0),
                                a_threshold=1e-3)
        xg = ctx.grid.x_grid
        base = SurfaceField(xg, 1e-3 * np.cos(xg.x) + 1e-6 * np.cos(k_probe * xg.x))

        def probe_growth(dt):
            state = initial_state(base, g0, ctx)
            control = StepControl(dt=dt, scheme="explicit_rk4", max_rejects=0)
            a0 = abs(state.f.coeffs[k_probe])
            try:
                for _ in range(8):
                    state, _ = step_imex(state, control, ctx)
            except StepError:
                return np.inf  # blow-up tripped the run guards
            return abs(state.f.coeffs[k_probe]) / a0

        dt_star = 2.785 / (rho * k_probe)
        assert probe_growth(0.8 * dt_star) < 1.0
        assert probe_growth(1.2 * dt_star) > 1.0


class TestConvergence:
    def _terminal(self, ctx, f0, g0, scheme, dt, t_end=0.2):
        control = StepControl(dt=dt, scheme=scheme)
        return run_simulation(ctx, control, f0, g0, t_end).state.f.values

    def test_imex_euler_first_order(self):
        ctx, f0, g0 = build_ctx(
            f_vals=0.05 * np.cos(np.linspace(0, 2 * np.pi, 32, endpoint=False)),
            a_threshold=1e-3)
        ref = self._terminal(ctx, f0, g0, "explicit_rk4", 1.25e-3)
        e1 = np.abs(self._terminal(ctx, f0, g0, "imex", 1e-2) - ref).max()
        e2 = np.abs(self._terminal(ctx, f0, g0, "imex", 5e-3) - ref).max()
        assert np.log2(e1 / e2) > 0.9

    def test_imex_midpoint_second_order(self):
        ctx, f0, g0 = build_ctx(
            f_vals=0.05 * np.cos(np.linspace(0, 2 * np.pi, 32, endpoint=False)),
            a_threshold=1e-3)
        ref = self._terminal(ctx, f0, g0, "explicit_rk4", 1.25e-3)
        e1 = np.abs(self._terminal(ctx, f0, g0, "imex_midpoint", 1e-2) - ref).max()
        e2 = np.abs(self._terminal(ctx, f0, g0, "imex_midpoint", 5e-3) - ref).max()
        assert np.log2(e1 / e2) > 1.8


class TestRejection:
    def test_rejected_steps_never_mutate_state(self):
        ctx, f0, g0 = build_ctx(
            f_vals=0.05 * np.cos(np.linspace(0, 2 * np.pi, 32, endpoint=False)),
            a_threshold=1e-3)
        state = initial_state(f0, g0, ctx)
        f_snapshot = state.f.values.copy()
        g_snapshot = state.g_strip.values.copy()
        # a context with an unreachable stability threshold rejects every try
        strict = RunContext(
            grid=ctx.grid, depth=ctx.depth, profile=ctx.profile,
            a_threshold=10.0, d_threshold=ctx.d_threshold, delta=ctx.delta,
        )
        with pytest.raises(StepError, match="rejected"):
            step_imex(state, StepControl(dt=1e-2, max_rejects=3), strict)
        assert np.array_equal(state.f.values, f_snapshot)
        assert np.array_equal(state.g_strip.values, g_snapshot)
        assert state.t == 0.0

    def test_initial_state_validates_thresholds(self):
        ctx, f0, g0 = build_ctx(a_threshold=10.0)
        with pytest.raises(StepError, match="initial data violates"):
            initial_state(f0, g0, ctx)


class TestRunDiagnostics:
    def test_zero_horizon_emits_initial_row(self):
        ctx, f0, g0 = build_ctx()
        res = run_simulation(ctx, StepControl(dt=1e-2), f0, g0, t_end=0.0)
        assert len(res.rows) == 1
        assert res.rows[0].step_status == "initial"

    def test_rows_monotone_in_time(self):
        ctx, f0, g0 = build_ctx(
            f_vals=0.01 * np.cos(np.linspace(0, 2 * np.pi, 32, endpoint=False)),
            a_threshold=1e-3)
        res = run_simulation(ctx, StepControl(dt=5e-3), f0, g0, t_end=0.1,
                             output_interval=0.02)
        ts = [r.t for r in res.rows]
        assert ts == sorted(ts)
        assert res.rows[-1].t == pytest.approx(0.1)


class TestCheckpoint:
    def _state(self):
        ctx, f0, g0 = build_ctx(
            f_vals=0.05 * np.cos(np.linspace(0, 2 * np.pi, 32, endpoint=False)),
            a_threshold=1e-3)
        state = initial_state(f0, g0, ctx)
        state, _ = step_imex(state, StepControl(dt=1e-2), ctx)
        return ctx, state

    def test_roundtrip_bit_exact(self):
        ctx, state = self._state()
        blob = checkpoint(state, "deadbeef")
        back = restore(blob, ctx, "deadbeef")
        assert back.t == state.t
        assert np.array_equal(back.f.values, state.f.values)
        assert np.array_equal(back.g_strip.values, state.g_strip.values)

    def test_grid_mismatch_rejected(self):
        ctx, state = self._state()
        blob = checkpoint(state)
        other_ctx, _, _ = build_ctx(n_x=64)
        with pytest.raises(CheckpointError, match="grid mismatch"):
            restore(blob, other_ctx)

    def test_corruption_detected(self):
        ctx, state = self._state()
        blob = bytearray(checkpoint(state))
        blob[len(blob) // 2] ^= 0xFF
        with pytest.raises(CheckpointError, match="corrupted"):
            restore(bytes(blob), ctx)

    def test_truncation_detected(self):
        ctx, state = self._state()
        blob = checkpoint(state)
        with pytest.raises(CheckpointError):
            restore(blob[: len(blob) // 2], ctx)

    def test_hash_mismatch_rejected(self):
        ctx, state = self._state()
        blob = checkpoint(state, "aaaa")
        with pytest.raises(CheckpointError, match="config hash"):
            restore(blob, ctx, "bbbb")

    def test_version_mismatch_message(self):
        import json
        import struct

        from ipmsim.stepper import _MAGIC, read_checkpoint_header

        head = json.dumps({"version": 99}).encode()
        payload = _MAGIC + struct.pack("<Q", len(head)) + head
        with pytest.raises(CheckpointError, match="version"):
            read_checkpoint_header(payload)
