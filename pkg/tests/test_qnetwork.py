import numpy as np
import pytest

from nastl.errors import ContractError, SpecError
from nastl.qnetwork import (AdamConfig, AdamState, GradBundle, NetConfig, QNetwork,
                            adam_step, clip_global_norm, global_l2)

TINY = NetConfig(input_dim=23, d_model=16, embed_layers=3, n_transformer_layers=2,
                 n_heads=2, ffn_hidden=32, head_layers=3, head_hidden=16)


def tiny_batch(seed=7, batch=3, tokens=6, dtype=np.float64):
    net = QNetwork(TINY)
    rng = np.random.default_rng(seed)
    params = net.init_params(rng, dtype=dtype)
    x = rng.standard_normal((batch, tokens, TINY.input_dim)).astype(dtype)
    mask = np.ones((batch, tokens), dtype=bool)
    if batch >= 2 and tokens >= 6:
        mask[0, 4:] = False
        mask[1, 5:] = False
    return net, params, x, mask, rng


def huber_loss(q, actions, targets, weights):
    rows = np.arange(q.shape[0])
    d = q[rows, actions] - targets
    h = np.where(np.abs(d) <= 1.0, 0.5 * d * d, np.abs(d) - 0.5)
    return float((weights * h).mean())


def test_init_deterministic():
    net = QNetwork(TINY)
    p1 = net.init_params(np.random.default_rng(3))
    p2 = net.init_params(np.random.default_rng(3))
    p3 = net.init_params(np.random.default_rng(4))
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert any(not np.array_equal(p1[k], p3[k]) for k in p1)


def test_init_biases_zero_gains_one():
    net = QNetwork(TINY)
    params = net.init_params(np.random.default_rng(0))
    for name, arr in params.items():
        if name.endswith(".g"):
            assert (arr == 1.0).all()
        elif arr.ndim == 1:
            assert (arr == 0.0).all()
        else:
            bound = 1.0 / np.sqrt(arr.shape[0])
            assert np.abs(arr).max() <= bound


def test_forward_deterministic():
    net, params, x, mask, _ = tiny_batch()
    q1, _ = net.forward(params, x, mask)
    q2, _ = net.forward(params, x, mask)
    assert np.array_equal(q1, q2)


def test_single_token_q_equals_value():
    net, params, x, mask, _ = tiny_batch(batch=1, tokens=1)
    q, cache = net.forward(params, x, mask, need_cache=True)
    # with one action, the centered advantage vanishes: Q = V
    pooled = cache["trunk_out"][:, 0]
    val = pooled
    for i in range(TINY.head_layers):
        val = val @ params[f"val.{i}.w"] + params[f"val.{i}.b"]
        if i < TINY.head_layers - 1:
            val = np.maximum(val, 0.0)
    assert q[0, 0] == pytest.approx(float(val[0, 0]), rel=1e-12)


def test_advantages_mean_centered():
    net, params, x, mask, _ = tiny_batch()
    q, _ = net.forward(params, x, mask)
    for b in range(q.shape[0]):
        valid = mask[b]
        # sum of (Q_i - V) over valid actions is 0 <=> mean-centered advantages
        row = q[b, valid]
        assert np.isfinite(row).all()
        assert (q[b, ~valid] == -np.inf).all()
        centered = row - row.mean()
        assert np.abs(centered.sum()) < 1e-9


def test_masked_slots_cannot_influence_q():
    net, params, x, mask, rng = tiny_batch()
    q1, _ = net.forward(params, x, mask)
    x2 = x.copy()
    x2[~mask] = rng.standard_normal(x2[~mask].shape) * 100.0
    q2, _ = net.forward(params, x2, mask)
    assert np.array_equal(q1[mask], q2[mask])


def test_neighbor_permutation_equivariance():
    net, params, x, mask, _ = tiny_batch(batch=1, tokens=6)
    mask[:] = True
    q, _ = net.forward(params, x, mask)
    perm = np.array([0, 3, 1, 4, 2, 5])  # keep current token in place
    q_perm, _ = net.forward(params, x[:, perm], mask)
    assert np.allclose(q_perm[0], q[0, perm], rtol=1e-5, atol=1e-7)


def test_token0_must_be_valid():
    net, params, x, mask, _ = tiny_batch()
    mask[0, 0] = False
    with pytest.raises(ContractError):
        net.forward(params, x, mask)


def test_gradients_match_finite_differences():
    net, params, x, mask, rng = tiny_batch(batch=3, tokens=6)
    q, _ = net.forward(params, x, mask)
    actions = np.array([1, 0, 3])
    targets = q[np.arange(3), actions] + rng.uniform(-0.4, 0.4, 3)
    weights = rng.uniform(0.5, 1.0, 3)
    loss, bundle, td = net.loss_and_grads(params, x, mask, actions, targets, weights)
    assert loss == pytest.approx(huber_loss(q, actions, targets, weights), rel=1e-12)

    h = 1e-4
    worst = 0.0
    for name, p in params.items():
        g = bundle.grads[name]
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        idxs = np.random.default_rng(1).choice(
            flat.size, size=min(12, flat.size), replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            qp, _ = net.forward(params, x, mask)
            lp = huber_loss(qp, actions, targets, weights)
            flat[i] = orig - h
            qm, _ = net.forward(params, x, mask)
            lm = huber_loss(qm, actions, targets, weights)
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, rel)
    assert worst < 1e-4


def test_zero_residual_zero_grads():
    net, params, x, mask, _ = tiny_batch()
    q, _ = net.forward(params, x, mask)
    actions = np.array([0, 1, 2])
    targets = q[np.arange(3), actions].copy()
    loss, bundle, td = net.loss_and_grads(params, x, mask, actions, targets,
                                          np.ones(3))
    assert loss == 0.0
    assert np.abs(td).max() == 0.0
    assert bundle.global_l2 == 0.0


def test_loss_linear_in_weights():
    net, params, x, mask, rng = tiny_batch()
    q, _ = net.forward(params, x, mask)
    actions = np.array([1, 2, 0])
    targets = q[np.arange(3), actions] + np.array([0.3, -0.2, 0.5])
    w = np.array([0.5, 1.0, 2.0])
    loss1, b1, _ = net.loss_and_grads(params, x, mask, actions, targets, w)
    loss2, b2, _ = net.loss_and_grads(params, x, mask, actions, targets, 2 * w)
    assert loss2 == pytest.approx(2 * loss1, rel=1e-12)
    for k in b1.grads:
        assert np.allclose(b2.grads[k], 2 * b1.grads[k], rtol=1e-12, atol=0)


def test_masked_action_rejected_in_loss():
    net, params, x, mask, _ = tiny_batch()
    with pytest.raises(ContractError):
        net.loss_and_grads(params, x, mask, np.array([5, 0, 0]),
                           np.zeros(3), np.ones(3))


def test_clip_below_threshold_identity():
    g = {"a": np.array([3.0, 4.0])}  # norm 5
    bundle = GradBundle(grads=g, global_l2=global_l2(g))
    out = clip_global_norm(bundle, max_norm=40.0)
    assert out.grads["a"] is g["a"]


def test_clip_scales_to_max():
    g = {"a": np.full(4, 40.0)}  # norm 80
    bundle = GradBundle(grads=g, global_l2=global_l2(g))
    out = clip_global_norm(bundle, max_norm=40.0)
    assert out.global_l2 == pytest.approx(40.0, abs=1e-9)
    assert np.allclose(out.grads["a"], 20.0)


def test_clip_zero_grads():
    g = {"a": np.zeros(3)}
    out = clip_global_norm(GradBundle(grads=g, global_l2=0.0))
    assert (out.grads["a"] == 0.0).all()


def test_adam_zero_grads_only_advances_step():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.init(params)
    zero = GradBundle(grads={"w": np.zeros(2)}, global_l2=0.0)
    new_params, new_state = adam_step(params, zero, state)
    assert np.array_equal(new_params["w"], params["w"])
    assert new_state.step == 1


def test_adam_first_step_magnitude():
    # hand evaluation: mhat = g, vhat = g^2, update = -lr * g/(|g| + eps)
    lr = 5e-5
    params = {"w": np.array([0.0])}
    state = AdamState.init(params, AdamConfig(lr=lr))
    bundle = GradBundle(grads={"w": np.array([1.0])}, global_l2=1.0)
    new_params, _ = adam_step(params, bundle, state)
    expected = -lr * 1.0 / (1.0 + 1e-8)
    assert new_params["w"][0] == pytest.approx(expected, rel=1e-12)
    assert new_params["w"][0] == pytest.approx(-lr, rel=1e-6)


def test_adam_deterministic_sequence():
    def run():
        rng = np.random.default_rng(0)
        params = {"w": np.ones(5)}
        state = AdamState.init(params, AdamConfig(lr=1e-3))
        for _ in range(20):
            g = {"w": rng.standard_normal(5)}
            params, state = adam_step(params, GradBundle(g, global_l2(g)), state)
        return params["w"]
    assert np.array_equal(run(), run())


@pytest.mark.filterwarnings("ignore:invalid value encountered")
def test_nonfinite_activation_names_layer():
    from nastl.errors import NumericFault
    net, params, x, mask, _ = tiny_batch()
    params["block1.ffn.w2"][0, 0] = np.inf
    with pytest.raises(NumericFault, match="block1"):
        net.forward(params, x, mask)


def test_netconfig_validation():
    with pytest.raises(SpecError):
        NetConfig(input_dim=10, d_model=30, n_heads=4)
    with pytest.raises(SpecError):
        QNetwork(NetConfig())  # unresolved input_dim


def test_param_count_paper_shape():
    cfg = NetConfig(input_dim=205)
    net = QNetwork(cfg)
    shapes = net.param_shapes()
    total = sum(int(np.prod(s)) for s in shapes.values())
    assert 1_900_000 < total < 2_300_000  # 256-wide trunk, 2 blocks, 2 heads
    names = list(shapes)
    assert names[0] == "embed.0.w"
    assert names[-1] == "val.2.b"
