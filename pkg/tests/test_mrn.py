import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tmd.autodiff import Tensor
from tmd.autodiff import grad as grad_of
from tmd.mrn import (
    MrnConfig,
    distance_table,
    embed_all,
    full_distance,
    grad,
    init_encoders,
    load_checkpoint,
    mrn_distance,
    mrn_pairwise,
    mrn_rowwise,
    phi,
    psi,
    save_checkpoint,
    snapshot_target,
)
from tmd.distance import is_quasimetric


def small_params(seed=0, S=5, A=3, layer_norm=False, hidden=(16, 16)):
    cfg = MrnConfig(components=4, size=3, hidden=hidden, layer_norm=layer_norm)
    return init_encoders(cfg, np.eye(S), A, seed=seed)


# --- the head ------------------------------------------------------------


def test_single_component_example():
    assert mrn_distance([0.5, 1.0], [0.2, 1.5], MrnConfig(1, 2)) == pytest.approx(0.3)


def test_asymmetry():
    cfg = MrnConfig(1, 1)
    assert mrn_distance([1.0], [0.0], cfg) == 1.0
    assert mrn_distance([0.0], [1.0], cfg) == 0.0


def test_components_are_averaged():
    cfg = MrnConfig(components=2, size=2)
    # component maxima 2 and 0 -> mean 1
    assert mrn_distance([3.0, 1.0, 0.0, 0.0], [1.0, 1.0, 5.0, 5.0], cfg) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=32, max_size=32))
def test_self_distance_is_zero(x):
    assert mrn_distance(x, x, MrnConfig()) == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        mrn_distance([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], MrnConfig(1, 2))
    with pytest.raises(ValueError):
        mrn_pairwise(np.zeros((2, 4)), np.zeros((3, 5)), MrnConfig(2, 2))


def test_bad_config():
    with pytest.raises(ValueError):
        MrnConfig(components=0)
    assert MrnConfig(8, 4).latent_dim == 32


def test_triangle_inequality_on_ten_thousand_triples():
    cfg = MrnConfig()
    r = np.random.default_rng(1)
    x, y, z = (r.normal(scale=3, size=(10_000, cfg.latent_dim)) for _ in range(3))
    dxy = mrn_rowwise(Tensor(x), Tensor(y), cfg).data
    dyz = mrn_rowwise(Tensor(y), Tensor(z), cfg).data
    dxz = mrn_rowwise(Tensor(x), Tensor(z), cfg).data
    assert (dxy + dyz - dxz).min() >= -1e-9
    assert dxy.min() >= 0


def test_pairwise_agrees_with_rowwise():
    cfg = MrnConfig(3, 2)
    r = np.random.default_rng(2)
    x, y = r.normal(size=(4, 6)), r.normal(size=(5, 6))
    pw = mrn_pairwise(Tensor(x), Tensor(y), cfg).data
    for i in range(4):
        for j in range(5):
            assert pw[i, j] == pytest.approx(mrn_distance(x[i], y[j], cfg), abs=1e-15)


def test_pairwise_gradient_matches_rowwise_gradient():
    cfg = MrnConfig(3, 2)
    r = np.random.default_rng(3)
    arrays = {"x": r.normal(size=(4, 6)), "y": r.normal(size=(5, 6))}
    w = r.normal(size=(4, 5))
    _, g1 = grad_of(lambda t: (mrn_pairwise(t["x"], t["y"], cfg) * w).sum(), arrays)

    def rows(t):
        xi = t["x"][np.repeat(np.arange(4), 5)]
        yj = t["y"][np.tile(np.arange(5), 4)]
        return (mrn_rowwise(xi, yj, cfg) * w.reshape(-1)).sum()

    _, g2 = grad_of(rows, arrays)
    for k in arrays:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def test_head_gradient_hits_winning_coordinates():
    cfg = MrnConfig(components=2, size=2)
    x = np.array([1.0, 4.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 2.0, 2.0])
    _, g = grad_of(lambda t: mrn_rowwise(t["x"].reshape(1, 4), t["y"].reshape(1, 4), cfg).sum(), {"x": x, "y": y})
    # component 0 won by coordinate 1 (diff 3); component 1 inactive
    np.testing.assert_allclose(g["x"], [0, 0.5, 0, 0])
    np.testing.assert_allclose(g["y"], [0, -0.5, 0, 0])


def test_head_tie_goes_to_lowest_index():
    cfg = MrnConfig(components=1, size=3)
    x, y = np.array([2.0, 2.0, 0.0]), np.zeros(3)
    for head in (mrn_rowwise, lambda a, b, c: mrn_pairwise(a, b, c)):
        _, g = grad_of(lambda t: head(t["x"].reshape(1, 3), t["y"].reshape(1, 3), cfg).sum(), {"x": x, "y": y})
        np.testing.assert_array_equal(g["x"], [1.0, 0.0, 0.0])


# --- encoders --------------------------------------------------------------


def test_all_endpoint_kinds_are_finite_and_nonnegative():
    p = small_params()
    for x, y in [(0, 3), ((0, 1), 3), (2, (2, 0)), ((1, 2), (4, 1))]:
        d = full_distance(p, x, y)
        assert np.isfinite(d) and d >= 0
    assert full_distance(p, 2, 2) == 0.0
    assert full_distance(p, (1, 1), (1, 1)) == 0.0


def test_learned_table_is_a_quasimetric():
    p = small_params(seed=4)
    d = distance_table(p)
    assert d.values.shape == (5 + 15, 5 + 15)
    assert is_quasimetric(d, tol=1e-9)


def test_embed_all_shapes_and_consistency():
    p = small_params(layer_norm=True)
    z_s, z_sa = embed_all(p)
    assert z_s.shape == (5, 12) and z_sa.shape == (5, 3, 12)
    net = p.tensors()
    np.testing.assert_allclose(phi(net, p, [3], [2]).data[0], z_sa[3, 2])
    np.testing.assert_allclose(psi(net, p, [4]).data[0], z_s[4])


def test_same_seed_same_parameters():
    a, b, c = small_params(seed=7), small_params(seed=7), small_params(seed=8)
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])
    assert any(not np.array_equal(a.arrays[k], c.arrays[k]) for k in a.arrays)


def test_coordinate_features():
    cfg = MrnConfig(2, 2, hidden=(8,))
    feats = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 1.0]])
    p = init_encoders(cfg, feats, 2, seed=0)
    assert p.arrays["psi.W0"].shape == (2, 8)
    assert p.arrays["phi.W0"].shape == (4, 8)


def test_encoder_gradient_matches_finite_differences():
    p = small_params(seed=5, layer_norm=True, hidden=(6,))
    r = np.random.default_rng(0)
    s, a, g = r.integers(5, size=6), r.integers(3, size=6), r.integers(5, size=6)

    def fn(net):
        return mrn_pairwise(phi(net, p, s, a), psi(net, p, g), p.cfg).logsumexp(axis=1).mean()

    _, an = grad(p, fn)
    eps = 1e-5
    for k, v in p.arrays.items():
        for i in list(np.ndindex(v.shape))[:15]:
            old = v[i]
            v[i] = old + eps
            hi = fn(p.tensors()).item()
            v[i] = old - eps
            lo = fn(p.tensors()).item()
            v[i] = old
            num = (hi - lo) / (2 * eps)
            assert an[k][i] == pytest.approx(num, rel=1e-4, abs=1e-7), (k, i)


# --- snapshot ---------------------------------------------------------------


def test_snapshot_copies_psi_only():
    p = small_params()
    snapshot_target(p)
    assert set(p.target) == {k for k in p.arrays if k.startswith("psi.")}
    for k, v in p.target.items():
        np.testing.assert_array_equal(v, p.arrays[k])
        assert v is not p.arrays[k]


def test_target_evaluation_equals_live_after_snapshot():
    p = snapshot_target(small_params())
    live = psi(p.tensors(), p, np.arange(5)).data
    frozen = psi(p.target_tensors(), p, np.arange(5)).data
    np.testing.assert_array_equal(live, frozen)


def test_gradient_step_leaves_target_alone():
    p = snapshot_target(small_params())
    before = {k: v.copy() for k, v in p.target.items()}
    _, g = grad(p, lambda net: psi(net, p, [0, 1]).sum())
    for k in p.arrays:
        p.arrays[k] -= 0.1 * g[k]
    assert any(not np.array_equal(p.arrays[k], before[k]) for k in before)
    for k, v in before.items():
        np.testing.assert_array_equal(p.target[k], v)


def test_snapshot_is_idempotent():
    p = small_params()
    snapshot_target(p)
    first = {k: v.copy() for k, v in p.target.items()}
    snapshot_target(p)
    for k in first:
        np.testing.assert_array_equal(first[k], p.target[k])


# --- checkpoints --------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    p = small_params(layer_norm=True)
    p.step = 42
    path = tmp_path / "c.npz"
    save_checkpoint(path, p, {"extra/x": np.arange(3.0)}, {"note": "hi"})
    q, extra, meta = load_checkpoint(path)
    assert q.cfg == p.cfg and q.step == 42 and q.n_actions == 3
    for k in p.arrays:
        np.testing.assert_array_equal(q.arrays[k], p.arrays[k])
    for k in p.target:
        np.testing.assert_array_equal(q.target[k], p.target[k])
    np.testing.assert_array_equal(extra["extra/x"], np.arange(3.0))
    assert meta["note"] == "hi" and meta["seed"] == 0
    np.testing.assert_array_equal(distance_table(q).values, distance_table(p).values)
    assert (tmp_path / "c.npz.json").is_file()
