import numpy as np
import pytest

from mvcount.errors import ConfigError, ShapeError
from mvcount.model import ModelSpec, MultiViewCounter
from mvcount.numerics import no_grad
from mvcount.scenegen import LayoutSpec, generate_layout

SMALL = dict(channels=8, grid_shape=(4, 8, 8), voxel_size=0.5, layers=1)


def views(n, seed=0):
    spec = ModelSpec(**SMALL)
    rigs = generate_layout(seed, LayoutSpec(views=n), spec.grid)
    rng = np.random.default_rng(seed)
    return [rng.random((3, 64, 64)) for _ in rigs], rigs


def build(**kw):
    return MultiViewCounter(ModelSpec(**{**SMALL, **kw}), np.random.default_rng(0))


def test_forward_shapes():
    model = build()
    images, rigs = views(3)
    with no_grad():
        out = model(images, rigs)
    assert [d.shape for d in out.density_2d] == [(1, 16, 16)] * 3
    assert [d.shape for d in out.density_3d] == [(1, 4, 8, 8), (1, 2, 4, 4)]
    assert [w.shape for w in out.weights] == [(3, 4, 8, 8), (3, 2, 4, 4)]
    assert all(np.all(d.data >= 0) for d in out.density_3d)
    assert out.count == pytest.approx(float(out.density_3d[0].data.sum()))


@pytest.mark.parametrize("toggles", ["LVAI", "VAI", "LAI", "LVI", "LVA", ""])
def test_toggle_combinations_run(toggles):
    flags = {k: k in toggles for k in "LVAI"}
    model = build(lifting=flags["L"], volume_embedding=flags["V"], learned_aggregation=flags["A"],
                  image_embedding=flags["I"])
    assert model.spec.toggles == toggles
    images, rigs = views(2)
    with no_grad():
        out = model(images, rigs)
    assert np.isfinite(out.count)
    w = out.weights[0].data
    hit = out.hits[0]
    assert np.all(w[~hit] == 0)
    some = hit.any(axis=0)
    np.testing.assert_allclose(w.sum(axis=0)[some], 1.0, atol=1e-6)


def test_single_view_weights_are_one_on_hits():
    model = build()
    images, rigs = views(3)
    with no_grad():
        out = model(images[:1], rigs[:1])
    w, hit = out.weights[0].data, out.hits[0]
    np.testing.assert_allclose(w[hit], 1.0, atol=1e-12)


def test_view_count_may_change_between_calls():
    model = build()
    for n in (1, 2, 4, 5):
        images, rigs = views(n, seed=n)
        with no_grad():
            out = model(images, rigs)
        assert out.weights[0].shape[0] == n


def test_forward_is_deterministic_and_pure():
    model = build()
    images, rigs = views(2)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    with no_grad():
        a = model(images, rigs).count
        b = model(images, rigs).count
    assert a == b
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_same_seed_same_parameters():
    a, b = build().state_dict(), build().state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_uniform_aggregation_changes_output():
    images, rigs = views(3)
    with no_grad():
        on = build()(images, rigs).count
        off = build(learned_aggregation=False)(images, rigs).count
    assert on != off


def test_query_aggregation_source_runs():
    images, rigs = views(2)
    with no_grad():
        out = build(aggregation_source="query")(images, rigs)
    assert np.isfinite(out.count)


def test_bad_specs_and_inputs():
    with pytest.raises(ConfigError):
        ModelSpec(aggregation_source="nope")
    with pytest.raises(ConfigError):
        ModelSpec(aggregation_source="query", lifting=False)
    model = build()
    images, rigs = views(2)
    with pytest.raises(ShapeError):
        model(images, rigs[:1])
    with pytest.raises(ShapeError):
        model([], [])
