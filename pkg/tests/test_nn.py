import numpy as np
import pytest

from mtcra import kernels, nn
from oracles import brute_fd_gradient, fd_gradient, reference_forward

REFERENCE_SIZES = (11, 150, 100, 2)


@pytest.fixture
def net():
    return nn.Mlp.init(REFERENCE_SIZES, np.random.default_rng(0))


def random_batch(rng, m=5, d=11):
    x = rng.integers(0, 2, size=(m, d)).astype(float)
    a = rng.integers(0, 2, size=m)
    y = rng.normal(size=m)
    return x, a, y


def rel_err(g, ref):
    den = np.maximum(np.abs(g), np.abs(ref))
    return float(np.max(np.where(den > 0, np.abs(g - ref) / np.where(den > 0, den, 1.0), 0.0)))


# ---------------------------------------------------------------- structure


def test_layout_matches_architecture(net):
    shapes = [p.shape for p in net.params]
    assert shapes == [(11, 150), (150,), (150, 100), (100,), (100, 2), (2,)]
    assert net.n_params == 11 * 150 + 150 + 150 * 100 + 100 + 100 * 2 + 2
    assert net.out_dim == 2


def test_views_share_storage(net):
    net.params[0][0, 0] = 123.0
    assert net.theta[0] == 123.0


def test_init_bounds(net):
    for i, p in enumerate(net.params):
        bound = 1 / np.sqrt(net.sizes[i // 2])
        assert np.all(np.abs(p) <= bound)
    assert np.all(np.isfinite(net.theta))


def test_bad_sizes():
    with pytest.raises(ValueError):
        nn.Mlp((11, 150, 2))
    with pytest.raises(ValueError):
        nn.Mlp((11, 150, 100, 2), theta=np.zeros(3))


# ---------------------------------------------------------------- forward


def test_zero_network_outputs_zero():
    z = nn.Mlp(REFERENCE_SIZES)
    x = np.random.default_rng(1).normal(size=(7, 11))
    assert np.array_equal(nn.forward(z, x), np.zeros((7, 2)))


def test_single_row_equals_batched_row(net):
    x, _, _ = random_batch(np.random.default_rng(2), m=6)
    full = nn.forward(net, x)
    for i in range(6):
        np.testing.assert_allclose(nn.forward(net, x[i:i + 1])[0], full[i], rtol=1e-12, atol=1e-14)


def test_forward_matches_reference(net):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(20, 11))
    np.testing.assert_allclose(nn.forward(net, x), reference_forward(x, *net.params), rtol=1e-6, atol=1e-12)


def test_forward_dimension_mismatch(net):
    with pytest.raises(ValueError):
        nn.forward(net, np.zeros((3, 10)))


def test_forward_is_pure(net):
    x = np.ones((4, 11))
    before = net.theta.copy()
    a = nn.forward(net, x)
    b = nn.forward(net, x)
    assert np.array_equal(a, b)
    assert np.array_equal(net.theta, before)


# ---------------------------------------------------------------- backward


def test_zero_gradient_at_exact_targets(net):
    x, a, _ = random_batch(np.random.default_rng(4))
    y = nn.forward(net, x)[np.arange(5), a]
    assert np.all(nn.backward(net, x, a, y) == 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(net, seed):
    x, a, y = random_batch(np.random.default_rng(100 + seed))
    g = nn.backward(net, x, a, y)
    blocks, kinks = fd_gradient(net.params, x, a, y, h=1e-5, return_kinks=True)
    ref = np.concatenate([v.ravel() for v in blocks])
    smooth = ~np.concatenate([k.ravel() for k in kinks])
    # a stencil straddling a ReLU kink has no derivative to compare against;
    # those entries must stay rare
    assert smooth.sum() >= 0.999 * net.n_params
    assert rel_err(g[smooth], ref[smooth]) <= 1e-4


def test_fd_oracle_agrees_with_brute_force():
    rng = np.random.default_rng(5)
    small = nn.Mlp.init((4, 6, 5, 2), rng)
    x = rng.normal(size=(3, 4))
    a = rng.integers(0, 2, 3)
    y = rng.normal(size=3)
    params = [p.copy() for p in small.params]
    fast, kinks = fd_gradient(params, x, a, y, return_kinks=True)
    for f, slow in zip(fast, brute_fd_gradient(params, x, a, y)):
        np.testing.assert_allclose(f, slow, atol=1e-9)
    assert all(k.shape == f.shape for k, f in zip(kinks, fast))


def test_kink_mask_flags_straddling_unit():
    # one layer-2 unit sits exactly at zero for the only sample
    W1 = np.eye(2)
    b1 = np.zeros(2)
    W2 = np.array([[1.0, 1.0], [0.0, 0.0]])
    b2 = np.array([-1.0, 0.5])
    W3 = np.ones((2, 2))
    b3 = np.zeros(2)
    x = np.array([[1.0, 1.0]])
    _, kinks = fd_gradient([W1, b1, W2, b2, W3, b3], x, np.array([0]), np.array([0.0]), return_kinks=True)
    assert kinks[3].tolist() == [True, False]
    assert kinks[2][0].tolist() == [True, False]
    assert not kinks[4].any()


def test_batch_gradient_is_mean_of_single_gradients(net):
    x, a, y = random_batch(np.random.default_rng(6), m=2)
    g = nn.backward(net, x, a, y)
    g0 = nn.backward(net, x[:1], a[:1], y[:1])
    g1 = nn.backward(net, x[1:], a[1:], y[1:])
    np.testing.assert_allclose(g, (g0 + g1) / 2, rtol=1e-12, atol=1e-15)


def test_only_selected_action_gets_signal(net):
    x, _, y = random_batch(np.random.default_rng(7))
    g = net.views(nn.backward(net, x, np.zeros(5, dtype=int), y))
    assert np.all(g[4][:, 1] == 0.0) and g[5][1] == 0.0


def test_backward_shape_errors(net):
    with pytest.raises(ValueError):
        nn.backward(net, np.zeros((3, 11)), [0, 1], [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        nn.backward(net, np.zeros((2, 11)), [0, 2], [0.0, 0.0])


# ---------------------------------------------------------------- optimizer


def test_zero_gradient_step_leaves_parameters(net):
    opt = nn.Adam(net.n_params)
    before = net.theta.copy()
    nn.step(net, opt, np.zeros(net.n_params))
    assert np.array_equal(net.theta, before)
    assert opt.t == 1


def test_adam_scalar_convergence():
    # minimise f(t) = t^2 from t = 1; lr 1e-2 reaches |t| < 1e-2 well inside 2000 steps
    theta = np.array([1.0])
    opt = nn.Adam(1, lr=1e-2)
    for i in range(2000):
        kernels.adam_update(theta, 2 * theta, opt.m1, opt.m2, opt.lr, opt.beta1, opt.beta2, opt.eps, float(i + 1))
    assert abs(theta[0]) < 1e-2


def test_step_rejects_non_finite(net):
    g = np.zeros(net.n_params)
    g[3] = np.nan
    with pytest.raises(nn.DivergenceError):
        nn.step(net, nn.Adam(net.n_params), g)


def test_step_rejects_bad_shape(net):
    with pytest.raises(ValueError):
        nn.step(net, nn.Adam(net.n_params), np.zeros(5))


def test_adam_rejects_bad_lr():
    with pytest.raises(ValueError):
        nn.Adam(3, lr=0.0)


def test_training_is_deterministic():
    thetas = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        net_ = nn.Mlp.init(REFERENCE_SIZES, rng)
        opt = nn.Adam(net_.n_params)
        traj = []
        for _ in range(20):
            x, a, y = random_batch(rng, m=8)
            nn.step(net_, opt, nn.backward(net_, x, a, y))
            traj.append(net_.theta.copy())
        thetas.append(np.stack(traj))
    assert np.array_equal(thetas[0], thetas[1])


def test_overfit_fixed_batch_loss_mostly_decreases(net):
    x, a, y = random_batch(np.random.default_rng(12), m=8)
    opt = nn.Adam(net.n_params)
    losses = []
    for _ in range(100):
        loss, g = nn.loss_and_gradient(net, x, a, y)
        losses.append(loss)
        nn.step(net, opt, g)
    ups = sum(b > a_ for a_, b in zip(losses, losses[1:]))
    assert ups <= 5
    assert losses[-1] < losses[0]


# ---------------------------------------------------------------- target copy & checkpoints


def test_clone_is_independent(net):
    target = nn.clone_into_target(net)
    x = np.ones((3, 11))
    assert np.array_equal(nn.forward(net, x), nn.forward(target, x))
    out_before = nn.forward(target, x)
    opt = nn.Adam(net.n_params)
    nn.step(net, opt, np.ones(net.n_params))
    assert np.array_equal(nn.forward(target, x), out_before)
    assert not np.array_equal(nn.forward(net, x), out_before)


def test_clone_into_existing_target(net):
    target = nn.Mlp(REFERENCE_SIZES)
    nn.clone_into_target(net, target)
    assert np.array_equal(target.theta, net.theta)
    with pytest.raises(ValueError):
        nn.clone_into_target(net, nn.Mlp((11, 10, 10, 2)))


def test_periodic_target_sync_reproduces_outputs(net):
    rng = np.random.default_rng(13)
    target = nn.clone_into_target(net)
    opt = nn.Adam(net.n_params)
    probe = rng.integers(0, 2, size=(4, 11)).astype(float)
    for t in range(1, 31):
        x, a, y = random_batch(rng, m=8)
        nn.step(net, opt, nn.backward(net, x, a, y))
        if t % 10 == 0:
            nn.clone_into_target(net, target)
            assert np.array_equal(nn.forward(target, probe), nn.forward(net, probe))


def test_checkpoint_roundtrip_bit_exact(net, tmp_path):
    path = nn.save_checkpoint(net, tmp_path / "q.npz", meta={"N": 100})
    loaded, meta = nn.load_checkpoint(path)
    assert loaded.sizes == net.sizes
    assert loaded.theta.tobytes() == net.theta.tobytes()
    assert meta == {"N": 100}


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.npz"
    np.savez(p, header=np.array('{"format": "other", "version": 1}'), theta=np.zeros(2))
    with pytest.raises(ValueError):
        nn.load_checkpoint(p)


# ---------------------------------------------------------------- backends


def test_numba_and_numpy_kernels_agree(net):
    rng = np.random.default_rng(14)
    x, a, y = random_batch(rng, m=8)
    np.testing.assert_allclose(kernels._nb_forward(x, *net.params),
                               kernels._np_forward(x, *net.params), rtol=1e-12, atol=1e-14)
    g_nb = np.empty(net.n_params)
    g_np = np.empty(net.n_params)
    l_nb = kernels._nb_grad(x, a, y, *net.params, *net.views(g_nb))
    l_np = kernels._np_grad(x, a, y, *net.params, *net.views(g_np))
    assert l_nb == pytest.approx(l_np, rel=1e-12)
    np.testing.assert_allclose(g_nb, g_np, rtol=1e-10, atol=1e-14)

    states = []
    for adam in (kernels._nb_adam, kernels._np_adam):
        theta = net.theta.copy()
        m1 = np.zeros_like(theta)
        m2 = np.zeros_like(theta)
        for t in range(1, 6):
            adam(theta, g_np, m1, m2, 1e-3, 0.9, 0.999, 1e-8, float(t))
        states.append(theta)
    np.testing.assert_allclose(states[0], states[1], rtol=1e-12, atol=1e-15)
