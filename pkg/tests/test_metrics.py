import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group
from sklearn.base import clone

from graspbo import metrics as M
from graspbo.contact import ContactPoint, FrictionModel, grasp_matrix, wrench_primitives
from graspbo.metrics import MetricScaler, MetricWeights, QualityVector

from conftest import separation_oracle


def sphere_contacts(angles, radius=1.0, z=0.0):
    out = []
    for a in angles:
        n = np.array([np.cos(a), np.sin(a), z])
        n /= np.linalg.norm(n)
        out.append(ContactPoint(radius * n, n))
    return out


THREE = sphere_contacts([0, 2 * np.pi / 3, 4 * np.pi / 3])


def test_isotropy_examples(rng):
    assert M.q_isotropy(np.hstack([np.eye(6), np.eye(6)])) == pytest.approx(1.0)
    G = rng.standard_normal((6, 9))
    G[5] = 0
    assert M.q_isotropy(G) == 0.0
    G = grasp_matrix(THREE, np.zeros(3), 1.0)
    s = np.linalg.svd(G, compute_uv=False)
    assert M.q_isotropy(G) == pytest.approx(s[-1] / s[0], abs=1e-9)


def test_uniformity_examples(rng):
    assert M.q_uniformity(np.eye(6)) == pytest.approx(1.0)
    J = rng.standard_normal((9, 6))
    assert M.q_uniformity(J) == pytest.approx(1 / np.linalg.cond(J), abs=1e-9)
    square = rng.standard_normal((6, 6))
    square[2] = 0
    assert M.q_uniformity(square) == pytest.approx(0.0, abs=1e-12)
    # only three of six joints move in a single-contact Jacobian
    assert M.q_uniformity(rng.standard_normal((3, 6))) == 0.0


def test_orthogonal_invariance(rng):
    G = rng.standard_normal((6, 9))
    J = rng.standard_normal((9, 6))
    U, V = ortho_group.rvs(6, random_state=1), ortho_group.rvs(9, random_state=2)
    assert M.q_isotropy(U @ G @ V) == pytest.approx(M.q_isotropy(G), abs=1e-9)
    assert M.q_uniformity(V @ J @ U) == pytest.approx(M.q_uniformity(J), abs=1e-9)


def test_epsilon_examples(rng):
    P6 = np.vstack([np.eye(6), -np.eye(6)])
    assert M.q_epsilon(P6) == pytest.approx(1 / np.sqrt(6), abs=1e-9)
    assert M.q_epsilon(2.5 * P6) == pytest.approx(2.5 / np.sqrt(6), abs=1e-9)
    assert M.q_epsilon(np.abs(rng.standard_normal((20, 6)))) == 0.0
    assert M.q_epsilon(P6, method="support") == pytest.approx(1 / np.sqrt(6), rel=0.02)
    with pytest.raises(ValueError):
        M.q_epsilon(P6, method="magic")


def test_epsilon_positive_iff_closure():
    rng = np.random.default_rng(11)
    for _ in range(500):
        n = int(rng.integers(7, 30))
        P = rng.standard_normal((n, 6)) + rng.uniform(-0.8, 0.8, 6)
        assert (M.q_epsilon(P) > 0) == bool(M.force_closure(P))


def test_force_closure_single_and_empty():
    f = FrictionModel(0.5, 8)
    W = wrench_primitives(sphere_contacts([0.0]), f, np.zeros(3), 1.0)
    assert M.force_closure(W) == 0
    assert separation_oracle(W.primitives) is False
    assert M.force_closure(np.zeros((0, 6))) == 0


def test_three_symmetric_contacts_close():
    contacts = sphere_contacts([0, 2 * np.pi / 3, 4 * np.pi / 3])
    f = FrictionModel(0.5, 8)
    W = wrench_primitives(contacts, f, np.zeros(3), 1.0)
    assert M.force_closure(W) == 1
    assert separation_oracle(W.primitives, 1e-6)


def test_antipodal_pair_spans_five_dimensions():
    # torque about the contact line is zero for every primitive
    W = wrench_primitives(sphere_contacts([0.0, np.pi]), FrictionModel(0.5, 8), np.zeros(3), 1.0)
    assert np.allclose(W.primitives[:, 3], 0.0)
    assert np.linalg.matrix_rank(W.primitives) == 5
    assert M.force_closure(W) == 0
    assert separation_oracle(W.primitives) is False


def test_volume_metric(rng):
    P6 = np.vstack([np.eye(6), -np.eye(6)])
    assert M.q_volume(P6, 100_000, rng) == pytest.approx(2 ** 6 / 720, rel=0.05)
    assert M.q_volume(np.zeros((0, 6)), 10, rng) == 0.0
    assert M.q_volume(np.array([[1, 0, 0, 0, 0, 0], [-1, 0, 0, 0, 0, 0.0]]), 10, rng) == 0.0


def test_weights_validation():
    MetricWeights(0.25, 0.25, 0.25, 0.25)
    with pytest.raises(ValueError):
        MetricWeights(0.5, 0.6, 0, 0)
    with pytest.raises(ValueError):
        MetricWeights(-0.1, 1.1, 0, 0)
    assert MetricWeights.single(3).as_array().tolist() == [0, 0, 0, 1]


def test_combine_examples():
    q = np.array([0.1, 0.7, 0.3, 0.9])
    assert M.combine(q, MetricWeights(0, 1, 0, 0)) == pytest.approx(0.7)
    w = MetricWeights(8 / 31, 9 / 31, 5 / 31, 9 / 31)
    assert M.combine(q, w) == pytest.approx((8 * 0.1 + 9 * 0.7 + 5 * 0.3 + 9 * 0.9) / 31)
    for wt in ((1, 0, 0, 0), (0.2, 0.3, 0.1, 0.4)):
        assert M.combine(np.full(4, 0.42), MetricWeights(*wt)) == pytest.approx(0.42)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.integers(0, 3), st.floats(0, 1))
def test_combine_monotone(q, i, bump):
    w = MetricWeights(0.1, 0.2, 0.3, 0.4)
    q = np.array(q)
    q2 = q.copy()
    q2[i] = min(1.0, q[i] + bump)
    assert M.combine(q2, w) >= M.combine(q, w) - 1e-15


def test_quality_vector_invariants():
    with pytest.raises(ValueError):
        QualityVector(np.array([0, 0.1, 0, 0]), np.zeros(4), 0)
    with pytest.raises(ValueError):
        QualityVector(np.zeros(4), np.zeros(4), 2)


def test_scaler_fixed_mode():
    X = np.array([[0.0, 1.0, 2.0, 5.0], [1.0, 3.0, 2.0, 5.0]])
    sc = MetricScaler().fit(X)
    out = sc.transform(np.array([[0.5, 3.0, 2.0, 7.0], [-1, 1.0, 9.0, 0.0]]))
    assert np.allclose(out, [[0.5, 1.0, 0.5, 0.5], [0.0, 0.0, 0.5, 0.5]])
    assert M.normalize(3.0, sc, 1) == 1.0
    assert M.normalize(1.0, sc, 1) == 0.0
    assert M.normalize(123.0, sc, 2) == 0.5


def test_scaler_running_mode_and_params():
    sc = MetricScaler(mode="running")
    sc.partial_fit(np.zeros((1, 4)))
    sc.partial_fit(np.ones((1, 4)))
    assert np.allclose(sc.transform(np.full((1, 4), 0.25)), 0.25)
    sc.partial_fit(np.full((1, 4), 2.0))
    assert np.allclose(sc.transform(np.full((1, 4), 0.5)), 0.25)
    assert clone(sc).get_params() == {"mode": "running", "bounds": None}
    with pytest.raises(ValueError):
        MetricScaler(mode="weird").fit(np.zeros((2, 4)))


def test_scaler_bounds_and_monotone(rng):
    sc = MetricScaler(bounds=[[0, 0, 0, 0], [2, 4, 1, 1]]).fit(None)
    v = np.sort(rng.uniform(-1, 5, 50))
    out = sc.transform(np.column_stack([v] * 4))
    assert np.all(np.diff(out, axis=0) >= 0)
    assert out.min() >= 0 and out.max() <= 1
