import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cogflow.model import (
    DomainError,
    ModelError,
    eval_kernel,
    eval_velocity,
    kernel_lipschitz,
    lattice,
    load_model,
    model_from_dict,
    validate_model,
)

from conftest import model


def test_uniform_kernel_three_states():
    spec = model(n_cognitive=3, velocity={"family": "constant-per-y", "constants": [[0.0]] * 3}, kernel={"family": "uniform"})
    np.testing.assert_allclose(eval_kernel(spec, [0.7]), [1 / 3] * 3)
    assert validate_model(spec).ok


def test_softmax_beta_zero_is_uniform():
    spec = model(kernel={"family": "softmax-score", "centers": [[-1.0], [1.0]], "beta": 0.0})
    pts = lattice(spec, 200)
    np.testing.assert_allclose(spec.kernel_at(pts), 0.5)
    assert validate_model(spec).ok


def test_unnormalized_weights_reported():
    spec = model(kernel={"family": "fixed-weights", "weights": [0.5, 0.6]})
    rep = validate_model(spec)
    assert not rep.ok
    assert [n for n, _, _ in rep.failures()] == ["kernel-normalized"]
    with pytest.raises(ModelError):
        rep.raise_if_failed()


def test_constant_field_value():
    spec = model(
        dim=2,
        domain=[[-3, 3], [-3, 3]],
        velocity={"family": "constant-per-y", "constants": [[1.0, 0.0], [0.0, 1.0]]},
        initial={"family": "point", "point": [0.0, 0.0]},
    )
    np.testing.assert_array_equal(eval_velocity(spec, [0.3, -1.2], 0), [1.0, 0.0])


def test_linear_field_value():
    spec = model(n_cognitive=1, velocity={"family": "linear-per-y", "matrices": [[[-1.0]]]}, kernel={"family": "uniform"})
    np.testing.assert_array_equal(eval_velocity(spec, [2.0], 0), [-2.0])


def test_bump_peak_equals_amplitude():
    bumps = [[{"center": [0.5, -0.5], "width": 0.4, "amplitude": [0.2, -0.7]}], []]
    spec = model(
        dim=2,
        domain=[[-3, 3], [-3, 3]],
        velocity={"family": "gaussian-bump-mixture", "bumps": bumps},
        initial={"family": "point", "point": [0.0, 0.0]},
    )
    np.testing.assert_array_equal(eval_velocity(spec, [0.5, -0.5], 0), [0.2, -0.7])
    np.testing.assert_array_equal(eval_velocity(spec, [0.5, -0.5], 1), [0.0, 0.0])


def test_point_mass_kernel():
    spec = model(n_cognitive=3, velocity={"family": "constant-per-y", "constants": [[0.0]] * 3}, kernel={"family": "point-mass", "target": 1})
    np.testing.assert_array_equal(eval_kernel(spec, [0.0]), [0, 1, 0])


def test_softmax_symmetric_point():
    spec = model(kernel={"family": "softmax-score", "centers": [[-1.0], [1.0]], "beta": 3.0})
    np.testing.assert_allclose(eval_kernel(spec, [0.0]), [0.5, 0.5], atol=1e-15)


def test_softmax_closed_form():
    # 1 / (1 + e^-2) and e^-2 / (1 + e^-2), evaluated independently with mpmath
    spec = model(kernel={"family": "softmax-score", "centers": [[0.0], [1.0]], "beta": 2.0})
    np.testing.assert_allclose(eval_kernel(spec, [0.0]), [0.8807970779778823, 0.11920292202211756], rtol=1e-14)


def test_strict_and_lenient_domain():
    spec = model()
    with pytest.raises(DomainError):
        eval_velocity(spec, [3.5], 0)
    lenient = model(strict=False)
    np.testing.assert_array_equal(eval_velocity(lenient, [3.5], 0), eval_velocity(lenient, [3.0], 0))
    np.testing.assert_array_equal(eval_kernel(lenient, [-9.0]), eval_kernel(lenient, [-3.0]))


def test_damping_zero_in_margin_and_one_inside():
    spec = model()
    x = np.array([[-2.97], [2.99], [0.0], [2.6]])
    v = spec.raw_velocity(x, np.zeros(4, dtype=int))
    assert v[0, 0] == 0.0 and v[1, 0] == 0.0
    assert v[2, 0] == 0.3 and v[3, 0] == 0.3


@pytest.mark.parametrize(
    "doc_change, msg",
    [
        ({"rate": 0.0}, "rate"),
        ({"rate": -1.0}, "rate"),
        ({"velocity": {"family": "constant-per-y", "constants": [[0.3]]}}, "constant-per-y"),
        ({"kernel": {"family": "fixed-weights", "weights": [1.0]}}, "fixed-weights"),
        ({"kernel": {"family": "softmax-score", "centers": [[0.0]], "beta": 1.0}}, "softmax"),
        ({"kernel": {"family": "point-mass", "target": 2}}, "point-mass"),
        ({"dim": 4}, "dim"),
        ({"extra": 1}, "unknown keys"),
    ],
)
def test_structural_rejections(doc_change, msg):
    with pytest.raises(ModelError, match=msg):
        model(**doc_change)


def test_missing_rate_rejected():
    doc = model().to_dict()
    del doc["rate"]
    with pytest.raises(ModelError, match="rate"):
        model_from_dict(doc)


def test_json_round_trip(tmp_path):
    bumps = [[{"center": [0.5], "width": 0.4, "amplitude": [0.2]}], [{"center": [-0.5], "width": 0.3, "amplitude": [-0.1]}]]
    spec = model(velocity={"family": "gaussian-bump-mixture", "bumps": bumps})
    path = tmp_path / "m.json"
    path.write_text(json.dumps(spec.to_dict()))
    again = load_model(path)
    assert again.digest() == spec.digest()
    assert spec.replace(rate=2.0).rate == 2.0


centers = st.lists(st.floats(-2.5, 2.5), min_size=2, max_size=5)


@given(centers, st.floats(0.0, 20.0))
def test_softmax_normalized_and_lipschitz(cs, beta):
    m = len(cs)
    spec = model(
        n_cognitive=m,
        velocity={"family": "constant-per-y", "constants": [[0.0]] * m},
        kernel={"family": "softmax-score", "centers": [[c] for c in cs], "beta": beta},
    )
    pts = lattice(spec, 1000)
    p = spec.raw_kernel(pts)
    assert np.abs(p.sum(1) - 1).max() < 1e-12
    assert p.min() >= 0
    h = pts[1, 0] - pts[0, 0]
    assert np.abs(np.diff(p, axis=0)).max() <= kernel_lipschitz(spec) * h + 1e-12
    assert validate_model(spec).ok


@given(st.integers(1, 3), st.integers(1, 4))
def test_uniform_and_point_mass_normalized_any_dim(dim, m):
    spec = model(
        dim=dim,
        domain=[[-3, 3]] * dim,
        n_cognitive=m,
        velocity={"family": "constant-per-y", "constants": [[0.1] * dim] * m},
        kernel={"family": "point-mass", "target": m - 1},
        initial={"family": "uniform-box"},
    )
    assert validate_model(spec).ok
    assert len(lattice(spec, 1000)) >= 1000


def _jacobian(spec, x, y, h):
    d = spec.dim
    J = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        J[:, i] = (spec.velocity_at(x + e, y) - spec.velocity_at(x - e, y)) / (2 * h)
    return J


def test_velocity_jacobian_converges_second_order():
    bumps = [[{"center": [0.3, -0.2], "width": 0.7, "amplitude": [0.5, 0.4]}], [{"center": [-0.4, 0.1], "width": 0.5, "amplitude": [-0.3, 0.6]}]]
    spec = model(
        dim=2,
        domain=[[-3, 3], [-3, 3]],
        velocity={"family": "gaussian-bump-mixture", "bumps": bumps},
        initial={"family": "point", "point": [0.0, 0.0]},
    )
    x = np.array([0.1, 0.25])
    ref = _jacobian(spec, x, 0, 1e-4)
    e1 = np.abs(_jacobian(spec, x, 0, 0.08) - ref).max()
    e2 = np.abs(_jacobian(spec, x, 0, 0.04) - ref).max()
    assert 3.5 < e1 / e2 < 4.5
