import numpy as np
import pytest

from datapaths import model as M
from datapaths import network as NW
from datapaths.errors import DimensionError, NumericError, ValidationError

from nets import small_random_net, two_branch_net


def rel_err(analytic, numeric):
    scale = max(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / scale


def fd_gate_gradients(model, x, gates, loss, h=1e-5):
    out = np.zeros_like(gates)
    for k in range(len(gates)):
        up = gates.copy(); up[k] += h
        dn = gates.copy(); dn[k] -= h
        out[k] = (NW.loss_value(model, x, up, loss) - NW.loss_value(model, x, dn, loss)) / (2 * h)
    return out


def random_loss(model, x, gates, rng):
    kind = rng.integers(0, 3)
    if kind == 0:
        ref = NW.forward(model, x).probabilities
        return NW.LossSpec("probability_preservation", reference=ref,
                           l1_weight=float(rng.uniform(0, 0.1)))
    if kind == 1:
        fm = int(rng.integers(0, model.gate_count))
        ref = NW.target_activation(model, x, M.full_gates(model), fm)
        mask = (rng.uniform(0, 1, ref.shape) > 0.4).astype(float) if rng.integers(0, 2) else None
        return NW.LossSpec("activation_preservation", reference=ref, target_fm=fm, mask=mask,
                           l1_weight=float(rng.uniform(0, 0.1)))
    refs = tuple(rng.uniform(0, 1, model.gate_count) for _ in range(int(rng.integers(1, 3))))
    return NW.LossSpec("cross_entropy", target_label=int(rng.integers(0, model.class_count)),
                       coupling_weight=float(rng.uniform(0.1, 1.0)), coupling_refs=refs)


def test_identity_gates_match_ungated_forward():
    net, x = two_branch_net()
    a = NW.forward(net, x)
    b = NW.forward(net, x, np.ones(net.gate_count))
    assert np.array_equal(a.logits, b.logits)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_zero_gates_zero_bias_gives_uniform_probabilities():
    rng = np.random.default_rng(0)
    layers = [
        M.conv2d(rng.normal(size=(3, 1, 3, 3)), np.zeros(3), padding=1),
        M.relu(),
        M.avgpool_global(),
        M.fullyconnected(rng.normal(size=(4, 3)), np.zeros(4)),
    ]
    net = M.build_model((1, 5, 5), 4, layers)
    res = NW.forward(net, rng.uniform(0, 1, (1, 5, 5)), np.zeros(3))
    assert np.array_equal(res.logits, np.zeros(4))
    assert np.allclose(res.probabilities, 0.25, atol=1e-15)


def test_identity_conv_caches_input():
    w = np.ones((1, 1, 1, 1))
    layers = [M.conv2d(w, np.zeros(1)), M.relu(), M.avgpool_global(),
              M.fullyconnected(np.ones((2, 1)), np.zeros(2))]
    net = M.build_model((1, 4, 4), 2, layers)
    x = np.random.default_rng(1).uniform(0, 1, (1, 4, 4))
    res = NW.forward(net, x)
    assert np.array_equal(res.activation_cache[0], x[0])


def test_probabilities_normalized_and_cache_complete():
    for seed in range(8):
        net, x = small_random_net(seed)
        res = NW.forward(net, x)
        assert abs(res.probabilities.sum() - 1.0) <= 1e-9
        assert np.all(res.probabilities >= 0)
        assert set(res.activation_cache) == set(range(net.gate_count))


def test_forward_determinism_is_bitwise():
    net, x = small_random_net(3)
    gates = np.random.default_rng(5).uniform(0, 1, net.gate_count)
    a = NW.forward(net, x, gates)
    b = NW.forward(net, x, gates)
    assert np.array_equal(a.logits, b.logits)


def test_forward_shape_mismatch():
    net, _ = two_branch_net()
    with pytest.raises(DimensionError):
        NW.forward(net, np.zeros((1, 4, 4)))


def test_forward_numeric_error_on_overflow():
    layers = [M.conv2d(np.full((1, 1, 1, 1), 1e308), np.zeros(1)), M.relu(),
              M.avgpool_global(), M.fullyconnected(np.full((2, 1), 1e308), np.zeros(2))]
    net = M.build_model((1, 2, 2), 2, layers)
    with pytest.raises(NumericError):
        NW.forward(net, np.full((1, 2, 2), 1e30))


def test_pure_l1_gradient_is_constant_lambda():
    net, x = two_branch_net()
    gates = np.random.default_rng(2).uniform(0.2, 0.8, net.gate_count)
    ref = NW.forward(net, x, gates).probabilities  # loss sits at its reference
    spec = NW.LossSpec("probability_preservation", reference=ref, l1_weight=0.07)
    grad = NW.gate_gradients(net, x, gates, spec)
    assert np.allclose(grad, 0.07, atol=1e-12)


def test_dead_feature_map_gets_zero_preservation_gradient():
    w = np.zeros((2, 1, 1, 1))
    w[0, 0, 0, 0] = 1.0
    w[1, 0, 0, 0] = -1.0  # relu kills channel 1 on positive input
    layers = [M.conv2d(w, np.zeros(2)), M.relu(), M.avgpool_global(),
              M.fullyconnected(np.ones((2, 2)), np.zeros(2))]
    net = M.build_model((1, 3, 3), 2, layers)
    x = np.full((1, 3, 3), 0.5)
    ref = NW.forward(net, x).probabilities
    spec = NW.LossSpec("probability_preservation", reference=ref)
    grad = NW.gate_gradients(net, x, np.array([0.7, 0.7]), spec)
    assert grad[1] == 0.0


def test_gate_gradients_match_finite_differences():
    rng = np.random.default_rng(77)
    for seed in range(12):
        net, x = small_random_net(seed)
        gates = rng.uniform(0.05, 0.95, net.gate_count)
        loss = random_loss(net, x, gates, rng)
        analytic = NW.gate_gradients(net, x, gates, loss)
        numeric = fd_gate_gradients(net, x, gates, loss)
        assert rel_err(analytic, numeric) <= 1e-5


def test_input_gradients_match_finite_differences():
    h = 1e-5
    for seed in range(6):
        net, x = small_random_net(seed + 30)
        gates = np.random.default_rng(seed).uniform(0.05, 0.95, net.gate_count)
        label = seed % net.class_count
        analytic = NW.input_gradients(net, x, gates, label)
        numeric = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            up = x.copy(); up[idx] += h
            dn = x.copy(); dn[idx] -= h
            lu = NW.cross_entropy(NW.forward(net, up, gates).logits, label)
            ld = NW.cross_entropy(NW.forward(net, dn, gates).logits, label)
            numeric[idx] = (lu - ld) / (2 * h)
        assert rel_err(analytic, numeric) <= 1e-5


def test_input_gradients_zero_for_constant_output():
    rng = np.random.default_rng(4)
    layers = [M.conv2d(rng.normal(size=(2, 1, 3, 3)), np.zeros(2), padding=1), M.relu(),
              M.avgpool_global(), M.fullyconnected(rng.normal(size=(2, 2)), np.zeros(2))]
    net = M.build_model((1, 5, 5), 2, layers)
    grad = NW.input_gradients(net, rng.uniform(0, 1, (1, 5, 5)), np.zeros(2), 0)
    assert np.array_equal(grad, np.zeros((1, 5, 5)))


def test_gating_is_affine_when_relu_regions_are_stable():
    # all-positive weights and input keep every relu active for any gate value
    rng = np.random.default_rng(9)
    layers = [
        M.conv2d(rng.uniform(0.1, 1.0, (2, 1, 3, 3)), np.zeros(2), padding=1),
        M.relu(),
        M.conv2d(rng.uniform(0.1, 1.0, (2, 2, 3, 3)), np.zeros(2), padding=1),
        M.relu(),
        M.avgpool_global(),
        M.fullyconnected(rng.uniform(0.1, 1.0, (3, 2)), np.zeros(3)),
    ]
    net = M.build_model((1, 5, 5), 3, layers)
    x = rng.uniform(0.1, 1.0, (1, 5, 5))
    for k in range(net.gate_count):
        logits = []
        for v in (0.0, 0.5, 1.0):
            g = np.ones(net.gate_count)
            g[k] = v
            logits.append(NW.forward(net, x, g).logits)
        assert np.allclose(logits[1], (logits[0] + logits[2]) / 2, atol=1e-12)


def test_weight_gradients_match_finite_differences():
    net, x = small_random_net(2)
    label = 1 % net.class_count
    _, grads = NW.weight_gradients(net, x, label)
    h = 1e-6
    for li, (dw, db) in grads.items():
        w = net.layers[li].weights
        flat = w.reshape(-1)
        def rebuilt(delta, probe):
            wp = w.copy()
            wp.reshape(-1)[probe] += delta
            swapped = list(net.layers)
            swapped[li] = M.LayerSpec(kind=net.layers[li].kind, weights=wp,
                                      bias=net.layers[li].bias, stride=net.layers[li].stride,
                                      padding=net.layers[li].padding)
            return M.build_model(net.input_shape, net.class_count, swapped)

        for probe in np.random.default_rng(li).integers(0, flat.size, 4):
            up = rebuilt(h, probe)
            dn = rebuilt(-h, probe)
            lu = NW.cross_entropy(NW.forward(up, x).logits, label)
            ld = NW.cross_entropy(NW.forward(dn, x).logits, label)
            numeric = (lu - ld) / (2 * h)
            assert dw.reshape(-1)[probe] == pytest.approx(numeric, rel=1e-4, abs=1e-7)


def test_unknown_loss_kind_rejected():
    net, x = two_branch_net()
    with pytest.raises(ValidationError):
        NW.loss_value(net, x, np.ones(net.gate_count), NW.LossSpec("entropy_drift"))
