import numpy as np
import pytest

from r3loc.errors import FormatError, InvalidArgument
from r3loc.verification import kkt_audit, svc_predict, svc_train
from r3loc.verification.metrics import VerificationFeatures
from r3loc.verification.svc import SvcModel, poly_kernel, smo


def verdict_clusters(rng, n=30):
    """matched: high MCS / high nu; mismatched: high MCS / low nu; unmatched: low MCS."""
    centres = {"matched": (0.85, 0.8), "mismatched": (0.65, 0.1), "unmatched": (0.1, 0.05)}
    out = []
    for lab, (m, v) in centres.items():
        for x, y in rng.normal((m, v), 0.03, size=(n, 2)):
            out.append((float(x), float(y), lab))
    return out


@pytest.fixture(scope="module")
def clusters():
    return verdict_clusters(np.random.default_rng(0))


@pytest.fixture(scope="module")
def model(clusters):
    return svc_train(clusters)


def test_clusters_trained_to_full_accuracy(model, clusters):
    assert model.training_accuracy == 1.0
    assert model.predict([(s[0], s[1]) for s in clusters]) == [s[2] for s in clusters]
    assert model.predict_one(0.86, 0.81) == "matched"
    assert svc_predict(model, VerificationFeatures(-1.0, 0.0, 10, 10)) == "unmatched"


def test_two_linearly_separable_classes():
    rng = np.random.default_rng(1)
    s = [(float(x), float(y), "matched") for x, y in rng.uniform(0.6, 1, (20, 2))]
    s += [(float(x), float(y), "unmatched") for x, y in rng.uniform(0, 0.3, (20, 2))]
    m = svc_train(s)
    assert m.training_accuracy == 1.0 and len(m.classifiers) == 1


def test_kkt_conditions(model, clusters):
    for rep in kkt_audit(model, clusters):
        assert rep.margin <= 1e-3
        assert rep.box <= 1e-12
        assert rep.equality <= 1e-6


def test_smo_against_closed_form_two_points():
    # two points, opposite labels: alpha = 2 / ||x1 - x2||^2 in a linear kernel
    X = np.array([[1.0, 0.0], [-1.0, 0.0]])
    y = np.array([1.0, -1.0])
    alpha, b, _, _ = smo(X @ X.T, y, C=10.0, tol=1e-9)
    assert np.allclose(alpha, [0.5, 0.5]) and abs(b) < 1e-9


def test_order_invariance(clusters):
    rng = np.random.default_rng(9)
    a = svc_train(clusters)
    shuffled = [clusters[i] for i in rng.permutation(len(clusters))]
    b = svc_train(shuffled)
    grid = np.random.default_rng(3).uniform(-1, 1, (500, 2))
    assert a.predict(grid) == b.predict(grid)
    for ca, cb in zip(a.classifiers, b.classifiers):
        assert np.array_equal(ca.support_vectors, cb.support_vectors)
        assert np.array_equal(ca.dual_coef, cb.dual_coef) and ca.bias == cb.bias


def test_save_load_round_trip(tmp_path, model):
    model.save(tmp_path / "m.svc")
    back = SvcModel.load(tmp_path / "m.svc")
    grid = np.random.default_rng(4).uniform(-1, 1, (300, 2))
    assert back.predict(grid) == model.predict(grid)
    assert back.classes == model.classes and back.degree == 5
    for x, y in zip(model.classifiers, back.classifiers):
        assert np.array_equal(x.dual_coef, y.dual_coef) and x.bias == y.bias


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "m.svc"
    p.write_text("not a model\n")
    with pytest.raises(FormatError):
        SvcModel.load(p)


def test_single_class_and_empty_raise():
    with pytest.raises(InvalidArgument):
        svc_train([(0.5, 0.5, "matched"), (0.6, 0.6, "matched")])
    with pytest.raises(InvalidArgument):
        svc_train([])
    with pytest.raises(InvalidArgument):
        svc_train([(np.nan, 0.5, "matched"), (0.6, 0.6, "unmatched")])


def test_vote_tie_prefers_matched():
    # three classes placed so that a far-away point gets one vote each
    s = [(1.0, 0.0, "matched"), (-0.5, 0.87, "mismatched"), (-0.5, -0.87, "unmatched")]
    m = svc_train(s, C=100.0)
    votes = {}
    for clf in m.classifiers:
        f = clf.decision(np.array([[0.0, 0.0]]), m.gamma, m.coef0, m.degree)[0]
        w = clf.positive if f > 0 else clf.negative
        votes[w] = votes.get(w, 0) + 1
    if sorted(votes.values()) == [1, 1, 1]:
        assert m.predict_one(0.0, 0.0) == "matched"


def test_poly_kernel_formula(rng):
    X, Z = rng.normal(size=(4, 2)), rng.normal(size=(3, 2))
    K = poly_kernel(X, Z, 0.5, 2.0)
    for i in range(4):
        for j in range(3):
            assert K[i, j] == pytest.approx((0.5 * X[i] @ Z[j] + 2.0) ** 5, rel=1e-12)
