"""Euler integration, trajectories, consistency, and the fused warp."""
import numpy as np
import pytest

from layerflow.motion import (IntegrationError, IntegratorConfig, Trajectory,
                              consistency_residuals, integrate, num_steps,
                              snap_to_grid, step_times, to_canonical,
                              warp_points)
from layerflow.networks import VelocityNet
from layerflow.tensor import Tape, Tensor, backward, mean, mul, square, sum_


class StubField:
    """Velocity field defined by a lambda of (positions (n,2), t)."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def forward_at(self, pos, t):
        self.calls += 1
        return Tensor(self.fn(pos.data, t))


def const_field(c):
    c = np.asarray(c, dtype=np.float64)
    return StubField(lambda p, t: np.tile(c, (p.shape[0], 1)))


def make_net(seed=0, wiggle=0.2):
    net = VelocityNet(np.random.default_rng(seed), hidden=16, depth=2,
                      num_bands=2)
    rng = np.random.default_rng(seed + 1)
    net.out.W.data[:] = rng.normal(size=net.out.W.shape) * wiggle
    net.out.b.data[:] = rng.normal(size=net.out.b.shape) * wiggle
    return net


def const_net(c):
    """A VelocityNet that outputs exactly c everywhere."""
    net = VelocityNet(np.random.default_rng(0), hidden=8, depth=2, num_bands=2)
    net.out.W.data[:] = 0.0
    net.out.b.data[:] = np.asarray(c, dtype=np.float64)
    return net


POINTS = np.array([[0.1, -0.4], [0.7, 0.2], [-0.9, 0.9]])


# ------------------------------------------------------ step schedule


@pytest.mark.parametrize("t0,t1,dt,n", [
    (-1.0, 1.0, 0.02, 100),
    (0.0, 2.0, 0.3, 7),
    (0.0, 0.6, 0.2, 3),           # exact multiple
    (0.3, 0.3, 0.1, 0),           # no motion
    (1.0, -1.0, 0.5, 4),          # backward in time
    (0.0, 0.6000000000000001, 0.2, 3),  # guard absorbs fp noise
])
def test_step_count_law(t0, t1, dt, n):
    assert num_steps(t0, t1, dt) == n
    field = const_field([0.0, 0.0])
    integrate(field, Tensor(POINTS), t0, t1, IntegratorConfig(dt))
    assert field.calls == n


def test_step_times_interior_on_grid_and_exact_arrival():
    times = step_times(-1.0, 0.37, 0.25)
    assert times[0] == -1.0
    assert times[-1] == 0.37  # bitwise, the last step shrinks
    for k in range(1, len(times) - 1):
        assert times[k] == -1.0 + k * 0.25
    # partial last step is smaller than dt
    assert 0 < times[-1] - times[-2] <= 0.25


def test_identity_when_endpoints_equal():
    field = const_field([3.0, -2.0])
    out = integrate(field, Tensor(POINTS), 0.5, 0.5, IntegratorConfig(0.1))
    assert np.array_equal(out.data, POINTS)
    assert field.calls == 0


def test_zero_field_is_identity():
    field = const_field([0.0, 0.0])
    out = integrate(field, Tensor(POINTS), -1.0, 1.0, IntegratorConfig(0.07))
    assert np.array_equal(out.data, POINTS)


@pytest.mark.parametrize("t0,t1,dt", [
    (-1.0, 1.0, 0.02), (0.0, 0.83, 0.2), (0.9, -0.6, 0.13),
])
def test_constant_field_matches_closed_form(t0, t1, dt):
    c = np.array([0.8, -1.3])
    out = integrate(const_field(c), Tensor(POINTS), t0, t1, IntegratorConfig(dt))
    expected = POINTS + (t1 - t0) * c
    assert np.allclose(out.data, expected, atol=1e-12, rtol=0)


def test_trajectory_recurrence_and_lengths():
    net = make_net(seed=3)
    out, traj = integrate(net, Tensor(POINTS), -1.0, 0.53,
                          IntegratorConfig(0.2), record_trajectory=True)
    k = traj.timestamps.shape[0]
    assert traj.positions.shape == (k, 3, 2)
    assert traj.velocities.shape == (k, 3, 2)
    assert k == num_steps(-1.0, 0.53, 0.2) + 1
    assert np.array_equal(traj.positions[-1], out.data)
    for i in range(k - 1):
        ds = traj.timestamps[i + 1] - traj.timestamps[i]
        step = traj.positions[i] + ds * traj.velocities[i]
        assert np.array_equal(step, traj.positions[i + 1])


def test_collect_velocities_counts():
    net = make_net(seed=4)
    out, vels = integrate(net, Tensor(POINTS), 0.0, 1.0,
                          IntegratorConfig(0.25), collect_velocities=True)
    # one sample per step start plus one at arrival
    assert len(vels) == 4 + 1
    assert all(v.shape == (3, 2) for v in vels)


def test_non_finite_positions_rejected_with_step_index():
    # velocity turns infinite at t=0.6, which is Euler step index 3
    bad = StubField(lambda p, t: np.full((p.shape[0], 2),
                                         np.inf if t > 0.4 else 0.0))
    with pytest.raises(IntegrationError, match="step 3") as info:
        integrate(bad, Tensor(POINTS), 0.0, 1.0, IntegratorConfig(0.2))
    assert info.value.step_index == 3


# -------------------------------------------------------- consistency


def test_consistency_zero_field_exact():
    fwd, bwd = consistency_residuals(const_net([0.0, 0.0]), POINTS,
                                     -1.0, 0.2, 1.0, IntegratorConfig(0.1))
    assert fwd == 0.0
    assert bwd == 0.0


def test_consistency_constant_field_near_exact():
    fwd, bwd = consistency_residuals(const_net([0.6, -0.2]), POINTS,
                                     -1.0, 0.13, 1.0, IntegratorConfig(0.1))
    assert fwd <= 1e-12
    assert bwd <= 1e-12


def test_consistency_smooth_net_backward_small():
    net = make_net(seed=5, wiggle=0.01)
    from layerflow.networks import estimate_lipschitz
    lip = estimate_lipschitz(net, num_samples=512, seed=0)
    dt = 0.1
    assert dt * lip < 0.5  # regime where Euler is invertible
    fwd, bwd = consistency_residuals(net, POINTS, -1.0, 0.3, 1.0,
                                     IntegratorConfig(dt))
    assert fwd <= 1e-9   # same lattice, both routes agree
    assert bwd <= 1e-2

    fwd2, bwd2 = consistency_residuals(net, POINTS, -1.0, 0.3, 1.0,
                                       IntegratorConfig(dt / 2))
    assert bwd2 > 0.0
    assert bwd / bwd2 >= 1.5  # first-order method: halving dt helps


def test_snap_to_grid():
    assert snap_to_grid(0.13, -1.0, 0.1) == pytest.approx(0.1)
    assert snap_to_grid(-0.26, -1.0, 0.1) == pytest.approx(-0.3)
    assert snap_to_grid(0.0, 0.0, 0.2) == 0.0


# --------------------------------------------------------- fused warp


def test_warp_matches_integrate_same_time_batch():
    net = make_net(seed=7)
    cfg = IntegratorConfig(0.2)
    tvals = np.full(3, 0.7)
    fused = warp_points(net, Tensor(POINTS), tvals, 0.0, cfg)
    stepped = integrate(net, Tensor(POINTS), 0.7, 0.0, cfg)
    assert np.array_equal(fused.data, stepped.data)


def test_warp_mixed_times_matches_per_group_integrate():
    net = make_net(seed=8)
    cfg = IntegratorConfig(0.15)
    rng = np.random.default_rng(9)
    pts = rng.uniform(-1, 1, size=(20, 2))
    tvals = rng.choice([-1.0, -0.4, 0.0, 0.33, 1.0], size=20)
    fused = warp_points(net, Tensor(pts), tvals, 0.0, cfg).data
    for t in np.unique(tvals):
        sel = tvals == t
        ref = integrate(net, Tensor(pts[sel]), float(t), 0.0, cfg).data
        assert np.allclose(fused[sel], ref, rtol=0, atol=1e-13)


def test_warp_zero_step_points_pass_through():
    net = make_net(seed=10)
    tvals = np.array([0.0, 0.5, 0.0])
    out = warp_points(net, Tensor(POINTS), tvals, 0.0, IntegratorConfig(0.2))
    assert np.array_equal(out.data[[0, 2]], POINTS[[0, 2]])
    assert not np.array_equal(out.data[1], POINTS[1])


def test_warp_non_finite_rejected():
    net = make_net(seed=11)
    net.out.b.data[:] = np.inf
    with pytest.raises(IntegrationError):
        warp_points(net, Tensor(POINTS), np.full(3, 1.0), 0.0,
                    IntegratorConfig(0.5))


def _readout(t):
    n = t.size
    w = Tensor(np.linspace(0.7, 1.9, n).reshape(t.shape))
    return sum_(mul(w, square(t)))


def test_warp_param_gradients_match_tape_composition():
    net = make_net(seed=12)
    cfg = IntegratorConfig(0.25)
    tvals = np.full(3, 0.9)
    params = net.parameters()

    with Tape() as tape:
        loss = _readout(warp_points(net, Tensor(POINTS), tvals, 0.0, cfg))
    backward(tape, loss)
    fused_grads = {n: p.grad.copy() for n, p in params.items()}

    with Tape() as tape:
        loss2 = _readout(integrate(net, Tensor(POINTS), 0.9, 0.0, cfg))
    backward(tape, loss2)
    assert loss.data == pytest.approx(float(loss2.data), rel=1e-15)
    for name, p in params.items():
        assert np.allclose(fused_grads[name], p.grad, rtol=1e-9, atol=1e-12), name


def test_warp_param_gradients_pass_fd_check():
    net = make_net(seed=13, wiggle=0.1)
    cfg = IntegratorConfig(0.3)
    tvals = np.array([0.55, -0.8, 1.0])
    params = net.parameters()

    def loss_value():
        return float(_readout(warp_points(net, Tensor(POINTS), tvals, 0.0, cfg)).data)

    with Tape() as tape:
        loss = _readout(warp_points(net, Tensor(POINTS), tvals, 0.0, cfg))
    backward(tape, loss)

    worst = 0.0
    for name, p in params.items():
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.linspace(0, flat.size - 1, min(flat.size, 25)).astype(int)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp = loss_value()
            flat[i] = orig - 1e-5
            fm = loss_value()
            flat[i] = orig
            numeric = (fp - fm) / 2e-5
            worst = max(worst, abs(analytic[i] - numeric) / max(1e-8, abs(numeric)))
    assert worst <= 1e-4, f"warp param grad err {worst:.2e}"


def test_warp_spatial_input_gradients_pass_fd_check():
    net = make_net(seed=14, wiggle=0.1)
    cfg = IntegratorConfig(0.3)
    tvals = np.array([0.5, -0.7, 0.9])
    start = Tensor(POINTS.copy(), requires_grad=True)

    with Tape() as tape:
        loss = _readout(warp_points(net, start, tvals, 0.0, cfg))
    backward(tape, loss)
    analytic = start.grad.reshape(-1)

    flat = start.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + 1e-5
        fp = float(_readout(warp_points(net, start, tvals, 0.0, cfg)).data)
        flat[i] = orig - 1e-5
        fm = float(_readout(warp_points(net, start, tvals, 0.0, cfg)).data)
        flat[i] = orig
        numeric = (fp - fm) / 2e-5
        worst = max(worst, abs(analytic[i] - numeric) / max(1e-8, abs(numeric)))
    assert worst <= 1e-4, f"warp input grad err {worst:.2e}"


def test_to_canonical_equals_integrate_to_zero():
    net = make_net(seed=15)
    cfg = IntegratorConfig(0.2)
    rng = np.random.default_rng(16)
    pix = np.column_stack([rng.uniform(-1, 1, size=(8, 2)),
                           rng.choice([-1.0, 0.25, 1.0], size=8)])
    out = to_canonical(net, Tensor(pix), cfg).data
    for t in np.unique(pix[:, 2]):
        sel = pix[:, 2] == t
        ref = integrate(net, Tensor(pix[sel, :2]), float(t), 0.0, cfg).data
        assert np.allclose(out[sel], ref, rtol=0, atol=1e-13)


def test_integrate_rejects_bad_start_shape():
    with pytest.raises(ValueError, match="n, 2"):
        integrate(const_field([0, 0]), Tensor(np.zeros((3, 3))), 0, 1)


def test_config_rejects_bad_dt():
    with pytest.raises(ValueError, match="dt"):
        IntegratorConfig(0.0)
    with pytest.raises(ValueError, match="dt"):
        IntegratorConfig(-0.1)
