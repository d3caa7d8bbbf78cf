"""Loss terms against hand-evaluated and brute-force oracles."""
from types import SimpleNamespace

import numpy as np
import pytest

from layerflow.losses import (LossWeights, PixelBatch, combine_terms,
                              inertia_loss, rgb_loss, total_loss, velocity_reg)
from layerflow.model import build_model
from layerflow.motion import IntegratorConfig
from layerflow.tensor import Tape, Tensor, backward


META = {"width": 16, "height": 16, "t_min": 0.0, "t_max": 1.0}


def toy_model(num_layers=1, seed=0, dt=0.5):
    return build_model(num_layers, META, np.random.default_rng(seed), dt=dt,
                       frame_hidden=8, frame_trunk_depth=2, frame_head_depth=1,
                       frame_bands=2, vel_hidden=8, vel_depth=2, vel_bands=2)


def toy_batch(model, n=8, seed=1, t=0.5):
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(-1, 1, size=(n, 2)),
                              np.full(n, t)])
    render, _ = _render(model, coords)
    return PixelBatch(coords, render)


def _render(model, coords):
    from layerflow.compositor import composite_at
    rgb, aux = composite_at(model.frame_net, model.velocity_nets,
                            Tensor(coords), model.blend, model.integrator)
    return rgb.data.copy(), aux


class StubVel:
    """Velocity stub usable by both the regularizer (forward) and the
    integrator (forward_at)."""

    def __init__(self, fn):
        self.fn = fn  # (pts (n,2) array, t scalar or per-point ts) -> (n,2)

    def forward(self, pts: Tensor) -> Tensor:
        p = pts.data
        return Tensor(self.fn(p[:, :2], p[:, 2]))

    def forward_at(self, pos: Tensor, t: float) -> Tensor:
        return Tensor(self.fn(pos.data, t))


def stub_model(fn, dt=0.5, layers=1):
    return SimpleNamespace(velocity_nets=[StubVel(fn) for _ in range(layers)],
                           integrator=IntegratorConfig(dt),
                           fd_h=lambda: 0.125)


# ---------------------------------------------------------- rgb loss


def test_rgb_loss_zero_on_perfect_fit():
    model = toy_model()
    batch = toy_batch(model)
    assert float(rgb_loss(model, batch).data) == 0.0


def test_rgb_loss_uniform_offset_sums_channels():
    model = toy_model()
    for head in model.frame_net.heads:
        head[-1].W.data[:] = 0.0
        head[-1].b.data[:] = 0.0
    # every rendered channel is exactly 0.5 now
    n = 10
    coords = np.column_stack([np.random.default_rng(2).uniform(-1, 1, (n, 2)),
                              np.full(n, 0.25)])
    batch = PixelBatch(coords, np.full((n, 3), 0.6))
    assert float(rgb_loss(model, batch).data) == pytest.approx(0.3, abs=1e-12)


def test_rgb_loss_symmetric_in_sign_of_error():
    model = toy_model(seed=3)
    n = 6
    coords = np.column_stack([np.random.default_rng(4).uniform(-1, 1, (n, 2)),
                              np.full(n, 0.75)])
    render, _ = _render(model, coords)
    up = PixelBatch(coords, np.clip(render + 0.05, 0, 1))
    down = PixelBatch(coords, np.clip(render - 0.05, 0, 1))
    a = float(rgb_loss(model, up).data)
    b = float(rgb_loss(model, down).data)
    assert a == pytest.approx(b, rel=1e-12)


# ------------------------------------------------------ velocity reg


def test_velocity_reg_zero_field():
    model = toy_model(seed=5)  # velocity nets initialize to exact zero
    pts = np.random.default_rng(6).uniform(-1, 1, size=(12, 3))
    for alpha in (0.0, 0.5, 3.0):
        assert float(velocity_reg(model, pts, alpha, 0.125).data) == 0.0


def test_velocity_reg_constant_field_alpha_zero():
    model = stub_model(lambda p, t: np.tile([0.3, 0.4], (p.shape[0], 1)))
    pts = np.random.default_rng(7).uniform(-1, 1, size=(9, 3))
    out = float(velocity_reg(model, pts, 0.0, 0.125).data)
    assert out == pytest.approx(0.25, abs=1e-15)


def test_velocity_reg_alpha_zero_is_mean_squared_norm():
    model = toy_model(seed=8)
    vnet = model.velocity_nets[0]
    vnet.out.W.data[:] = np.random.default_rng(9).normal(size=vnet.out.W.shape) * 0.3
    pts = np.random.default_rng(10).uniform(-1, 1, size=(20, 3))
    manual = float(np.mean(np.sum(vnet.forward(Tensor(pts)).data ** 2, axis=1)))
    out = float(velocity_reg(model, pts, 0.0, 0.125).data)
    assert out == pytest.approx(manual, abs=1e-12)


def test_velocity_reg_linear_field_laplacian_vanishes():
    model = stub_model(lambda p, t: p.copy())  # V = (u, v)
    pts = np.random.default_rng(11).uniform(-1, 1, size=(25, 3))
    expected = float(np.mean(pts[:, 0] ** 2 + pts[:, 1] ** 2))
    for alpha in (0.0, 0.7, 2.0):
        out = float(velocity_reg(model, pts, alpha, 0.125).data)
        assert out == pytest.approx(expected, abs=1e-9), alpha


def test_velocity_reg_rejects_bad_fd_h():
    model = toy_model()
    with pytest.raises(ValueError, match="fd_h"):
        velocity_reg(model, np.zeros((3, 3)), 0.0, 0.0)


# ------------------------------------------------------ inertia loss


def test_inertia_zero_and_constant_fields_are_exactly_zero():
    start = np.random.default_rng(12).uniform(-1, 1, size=(5, 2))
    zero = stub_model(lambda p, t: np.zeros((p.shape[0], 2)))
    assert float(inertia_loss(zero, start).data) == 0.0
    const = stub_model(lambda p, t: np.tile([1.3, -0.2], (p.shape[0], 1)))
    assert float(inertia_loss(const, start).data) == 0.0


def test_inertia_time_linear_field_matches_enumeration():
    # V = (t, 0) with dt=0.5: the combined path -1 -> +1 through t=0
    # has Euler step starts {-1, -0.5, 0, 0.5}
    model = stub_model(
        lambda p, t: np.column_stack([np.full(p.shape[0], t),
                                      np.zeros(p.shape[0])]),
        dt=0.5)
    start = np.random.default_rng(13).uniform(-1, 1, size=(7, 2))
    recorded_ts = [0.0, -0.5, -1.0, 0.5]  # brute-force enumeration
    expected = np.mean([np.var(recorded_ts), 0.0])
    out = float(inertia_loss(model, start).data)
    assert out == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.15625)


def test_inertia_invariant_to_start_point_order():
    model = toy_model(seed=14)
    vnet = model.velocity_nets[0]
    vnet.out.W.data[:] = np.random.default_rng(15).normal(size=vnet.out.W.shape) * 0.02
    start = np.random.default_rng(16).uniform(-1, 1, size=(9, 2))
    a = float(inertia_loss(model, start).data)
    b = float(inertia_loss(model, start[::-1]).data)
    assert a == pytest.approx(b, abs=1e-12)
    assert a > 0.0


def test_inertia_rejects_empty_batch():
    with pytest.raises(ValueError):
        inertia_loss(toy_model(), np.zeros((0, 2)))


# -------------------------------------------------------- total loss


def test_combine_terms_hand_arithmetic():
    out = combine_terms(Tensor(0.3), Tensor(0.25), Tensor(0.1),
                        LossWeights(lambda_v=0.01, lambda_i=0.01))
    assert float(out.data) == pytest.approx(0.3035, abs=1e-15)


def test_total_equals_rgb_when_weights_zero():
    model = toy_model(seed=17)
    batch = toy_batch(model, seed=18)
    total, breakdown = total_loss(model, batch,
                                  LossWeights(lambda_v=0.0, lambda_i=0.0))
    assert breakdown["total"] == breakdown["rgb"]
    assert float(total.data) == float(rgb_loss(model, batch).data)


def test_total_at_least_rgb_and_breakdown_consistent():
    model = toy_model(seed=19)
    for vn in model.velocity_nets:
        vn.out.W.data[:] = np.random.default_rng(20).normal(
            size=vn.out.W.shape) * 0.02
    batch = toy_batch(model, seed=21, t=0.25)
    w = LossWeights(lambda_v=0.4, lambda_i=0.7, alpha=0.5)
    total, bd = total_loss(model, batch, w)
    assert bd["total"] >= bd["rgb"]
    assert all(v >= 0 for v in bd.values())
    recombined = bd["rgb"] + w.lambda_v * bd["velocity"] + w.lambda_i * bd["inertia"]
    assert bd["total"] == pytest.approx(recombined, rel=1e-12)


def test_total_perfect_zero_velocity_model_is_zero():
    model = toy_model(seed=22)  # velocities identically zero at init
    batch = toy_batch(model, seed=23)
    total, bd = total_loss(model, batch, LossWeights(0.01, 0.01, 0.5))
    assert float(total.data) == 0.0
    assert bd["velocity"] == 0.0 and bd["inertia"] == 0.0


def test_inertia_subsample_deterministic_and_seeded():
    model = toy_model(seed=24)
    rng = np.random.default_rng(25)
    coords = np.column_stack([rng.uniform(-1, 1, (300, 2)), np.full(300, 0.5)])
    render = np.full((300, 3), 0.5)
    batch = PixelBatch(coords, render)
    t1, _ = total_loss(model, batch, LossWeights(), max_inertia_points=64)
    t2, _ = total_loss(model, batch, LossWeights(), max_inertia_points=64)
    assert float(t1.data) == float(t2.data)
    t3, _ = total_loss(model, batch, LossWeights(),
                       rng=np.random.default_rng(0), max_inertia_points=64)
    assert np.isfinite(float(t3.data))


def test_total_loss_gradients_pass_fd_check():
    model = toy_model(seed=26, dt=0.5)
    for vn in model.velocity_nets:
        vn.out.W.data[:] = np.random.default_rng(27).normal(
            size=vn.out.W.shape) * 0.02
    params = model.parameters()
    assert sum(p.size for p in params.values()) <= 500
    rng = np.random.default_rng(28)
    coords = np.column_stack([rng.uniform(-0.9, 0.9, (8, 2)), np.full(8, 0.5)])
    target = rng.uniform(0, 1, size=(8, 3))
    batch = PixelBatch(coords, target)
    weights = LossWeights(lambda_v=0.3, lambda_i=0.2, alpha=0.5)

    def value():
        t, _ = total_loss(model, batch, weights)
        return float(t.data)

    with Tape() as tape:
        loss, _ = total_loss(model, batch, weights)
    backward(tape, loss)

    worst = 0.0
    for name, p in params.items():
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        idx = np.linspace(0, flat.size - 1, min(flat.size, 12)).astype(int)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + 1e-5
            fp = value()
            flat[i] = orig - 1e-5
            fm = value()
            flat[i] = orig
            numeric = (fp - fm) / 2e-5
            worst = max(worst, abs(analytic[i] - numeric) / max(1e-8, abs(numeric)))
    assert worst <= 1e-4, f"total_loss grad err {worst:.2e}"


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(lambda_v=-0.1)
    with pytest.raises(ValueError):
        LossWeights(alpha=float("nan"))


def test_pixel_batch_validation():
    with pytest.raises(ValueError):
        PixelBatch(np.zeros((4, 2)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        PixelBatch(np.zeros((4, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        PixelBatch(np.zeros((0, 3)), np.zeros((0, 3)))
