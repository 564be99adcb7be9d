"""Network substrate: gradients, optimizer, embeddings, checkpoints."""

import numpy as np
import pytest

from viaplan.nn import Adam, Ema, Mlp, load_mlp, save_mlp, time_embed


def numeric_param_grads(net, x, upstream, h=1e-6):
    """Central differences of sum(upstream * net(x)) per parameter."""
    grads = []
    for p in net.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            hi = float(np.sum(upstream * net.forward(x)))
            p[idx] = old - h
            lo = float(np.sum(upstream * net.forward(x)))
            p[idx] = old
            g[idx] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp([3, 8, 5, 2], rng=rng)
    x = rng.standard_normal((4, 3))
    upstream = rng.standard_normal((4, 2))
    (gws, gbs), gx = net.backward(x, upstream)
    analytic = list(gws) + list(gbs)
    numeric = numeric_param_grads(net, x, upstream)
    for a, nmr in zip(analytic, numeric):
        denom = np.maximum(np.abs(nmr), 1e-8)
        assert np.max(np.abs(a - nmr) / denom) < 1e-4


def test_backward_input_gradient():
    rng = np.random.default_rng(1)
    net = Mlp([4, 6, 3], rng=rng)
    x = rng.standard_normal(4)
    upstream = rng.standard_normal(3)
    _, gx = net.backward(x, upstream)
    h = 1e-6
    for j in range(4):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        num = (np.sum(upstream * net.forward(xp))
               - np.sum(upstream * net.forward(xm))) / (2.0 * h)
        assert abs(gx[j] - num) < 1e-6 * max(1.0, abs(num))


def test_forward_shapes_and_batch_consistency():
    rng = np.random.default_rng(2)
    net = Mlp([3, 5, 2], rng=rng)
    x = rng.standard_normal((7, 3))
    batch = net.forward(x)
    assert batch.shape == (7, 2)
    single = net.forward(x[0])
    assert single.shape == (2,)
    assert np.allclose(single, batch[0])
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 4)))


def test_adam_first_step_is_signed_lr():
    # with bias correction the first update is lr * g / (|g| + eps)
    rng = np.random.default_rng(3)
    net = Mlp([2, 3], rng=rng)
    before = [p.copy() for p in net.params()]
    gws = [np.full_like(net.ws[0], 2.0)]
    gbs = [np.array([-1.0, 0.5, 3.0])]
    opt = Adam(net, lr=0.01)
    opt.step(net, (gws, gbs))
    for p0, p1, g in zip(before, net.params(), gws + gbs):
        assert np.allclose(p1, p0 - 0.01 * np.sign(g), atol=1e-6)


def test_adam_reduces_quadratic_loss():
    rng = np.random.default_rng(4)
    net = Mlp([2, 16, 1], rng=rng)
    x = rng.standard_normal((64, 2))
    y = (x[:, :1] * 2.0 - x[:, 1:] * 0.5)
    opt = Adam(net, lr=1e-2)

    def loss():
        return float(np.mean((net.forward(x) - y) ** 2))

    first = loss()
    for _ in range(200):
        out, cache = net.forward_full(x)
        grads, _ = net.backward_from(cache, 2.0 * (out - y) / len(x))
        opt.step(net, grads)
    assert loss() < 0.05 * first


def test_time_embed_shape_and_injectivity():
    e = time_embed(np.arange(1, 21), 32)
    assert e.shape == (20, 32)
    # distinct step indices must be distinguishable
    d = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=2)
    d += np.eye(20)
    assert d.min() > 1e-3
    assert time_embed(3, 8).shape == (8,)
    with pytest.raises(ValueError):
        time_embed(1, 7)
    with pytest.raises(ValueError):
        time_embed(1, 2)


def test_ema_tracks_and_writes_back():
    rng = np.random.default_rng(5)
    net = Mlp([2, 2], rng=rng)
    init = [p.copy() for p in net.params()]
    ema = Ema(net, decay=0.9)
    for p in net.params():
        p += 1.0
    ema.update(net)
    for s, p0 in zip(ema.shadow, init):
        assert np.allclose(s, 0.9 * p0 + 0.1 * (p0 + 1.0))
    ema.write_to(net)
    for p, s in zip(net.params(), ema.shadow):
        assert np.array_equal(p, s)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    net = Mlp([4, 9, 3], rng=rng)
    path = tmp_path / "net.vpnn"
    save_mlp(path, net)
    loaded = load_mlp(path)
    assert loaded.dims == net.dims
    # weights quantize to float32 on disk; a second round trip is exact
    save_mlp(path, loaded)
    again = load_mlp(path)
    for a, b in zip(loaded.params(), again.params()):
        assert np.array_equal(a, b)
    x = rng.standard_normal((5, 4))
    assert np.allclose(loaded.forward(x), net.forward(x), atol=1e-5)


def test_checkpoint_rejects_corruption(tmp_path):
    rng = np.random.default_rng(7)
    net = Mlp([3, 4, 2], rng=rng)
    path = tmp_path / "net.vpnn"
    save_mlp(path, net)
    raw = path.read_bytes()

    bad_magic = tmp_path / "bad_magic.vpnn"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        load_mlp(bad_magic)

    truncated = tmp_path / "truncated.vpnn"
    truncated.write_bytes(raw[:len(raw) - 8])
    with pytest.raises(ValueError, match="payload"):
        load_mlp(truncated)

    header_only = tmp_path / "header.vpnn"
    header_only.write_bytes(raw[:6])
    with pytest.raises(ValueError):
        load_mlp(header_only)

    bad_version = tmp_path / "bad_version.vpnn"
    bad_version.write_bytes(raw[:4] + b"\x63\x00\x00\x00" + raw[8:])
    with pytest.raises(ValueError, match="version"):
        load_mlp(bad_version)
