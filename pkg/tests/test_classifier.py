import math

import numpy as np
import pytest

from vaeas.classifier import (
    AuxClassifier,
    LabelCode,
    MiRangeError,
    UnsupportedModeError,
    assign_labels,
    check_range,
    classifier_dv_form,
    classifier_loss_and_grads,
    entropy_from_log_probs,
    estimate_md,
    estimate_mi,
    estimate_mi_fano,
    fano_from_log_true,
    md_terms,
    mi_from_log_probs,
    node_index,
    report_from_samples,
    tree_depth,
)
from vaeas.mathops import SeededRng, log_softmax
from vaeas.nn import Adam, Dense, Mlp, grad_check


def randomised(clf, seed, scale=0.5):
    rng = SeededRng(seed)
    for k, layer in enumerate(clf.params.layers):
        layer.W[...] = rng.substream(k).normal(layer.W.shape) * scale
        layer.b[...] = rng.substream(k, "b").normal(layer.b.shape) * scale
    clf.params.bump()
    return clf


def make(V, mode, latent=3, hidden=6, layers=2, seed=0):
    clf = AuxClassifier.create(latent, hidden, layers, V, mode, SeededRng(seed))
    return randomised(clf, seed + 100)


# -- labels ------------------------------------------------------------------


def test_labels_balanced_and_seeded():
    code = assign_labels(103, 10, seed=5)
    counts = np.bincount(code.labels, minlength=10)
    assert counts.max() - counts.min() <= 1
    assert counts.sum() == 103
    np.testing.assert_array_equal(code.labels, assign_labels(103, 10, seed=5).labels)
    assert not np.array_equal(code.labels, assign_labels(103, 10, seed=6).labels)


def test_labels_permutation_when_V_equals_N():
    code = assign_labels(50, 50, seed=1)
    assert sorted(code.labels) == list(range(50))


def test_labels_reject_bad_V():
    with pytest.raises(ValueError):
        assign_labels(10, 11, 0)
    with pytest.raises(ValueError):
        assign_labels(10, 0, 0)


def test_label_file_roundtrip(tmp_path):
    code = assign_labels(40, 7, seed=2)
    code.save(tmp_path / "labels.u32")
    assert (tmp_path / "labels.u32").stat().st_size == 4 * 40
    back = LabelCode.load(tmp_path / "labels.u32", 7)
    np.testing.assert_array_equal(back.labels, code.labels)
    with pytest.raises(ValueError):
        LabelCode.load(tmp_path / "labels.u32", 3)


def test_paths_and_node_index():
    code = LabelCode(np.zeros(0, dtype=np.int64), 8, 0)
    assert code.depth == 3
    np.testing.assert_array_equal(code.paths([5]), [[1, 0, 1]])
    # root 0, then left child of root's right child: 2, then 2*2+... heap slots
    np.testing.assert_array_equal(node_index(code.paths([5])), [[0, 2, 5]])
    np.testing.assert_array_equal(node_index(code.paths([0])), [[0, 1, 3]])
    assert [tree_depth(v) for v in (1, 2, 3, 4, 5, 1024, 1025)] == [0, 1, 2, 2, 3, 10, 11]


# -- heads -------------------------------------------------------------------


def test_flat_head_starts_uniform():
    clf = AuxClassifier.create(4, 8, 2, 6, "flat", SeededRng(0))
    lp = clf.log_probs(SeededRng(1).normal((5, 4)))
    np.testing.assert_allclose(lp, -math.log(6), atol=1e-15)
    assert estimate_mi(clf, SeededRng(1).normal((5, 4))) == 0.0


@pytest.mark.parametrize("depth", range(1, 11))
def test_tree_leaves_sum_to_one(depth):
    clf = make(1 << depth, "tree", seed=depth)
    z = SeededRng(depth).normal((3, 3)) * 2
    leaves = clf.leaf_log_probs(z)
    assert leaves.shape == (3, 1 << depth)
    np.testing.assert_allclose(np.exp(leaves).sum(axis=1), 1.0, atol=1e-12)


def test_tree_with_unused_leaves():
    clf = make(5, "tree", seed=3)
    z = SeededRng(4).normal((4, 3))
    leaves = np.exp(clf.leaf_log_probs(z))
    np.testing.assert_allclose(leaves.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.exp(clf.log_probs(z)), leaves[:, :5], atol=1e-15)


def test_tree_path_log_prob_matches_sigmoids():
    clf = make(4, "tree", latent=2, layers=1, seed=5)
    z = np.array([[0.3, -1.2]])
    t = z @ clf.head.W + clf.head.b  # nodes 0, 1, 2
    sig = 1 / (1 + np.exp(-t[0]))
    # category 2 = bits (1, 0): right at root, then left at node 2
    expected = math.log(sig[0]) + math.log(1 - sig[2])
    assert clf.path_log_prob(z, [1, 0])[0] == pytest.approx(expected, abs=1e-14)
    assert clf.log_prob_true(z, [2])[0] == pytest.approx(expected, abs=1e-14)
    with pytest.raises(ValueError):
        clf.path_log_prob(z, [1, 0, 1])
    with pytest.raises(ValueError):
        clf.path_log_prob(z, [2, 0])


def test_tree_rejects_full_logits():
    with pytest.raises(UnsupportedModeError):
        make(4, "tree").logits(np.zeros((1, 3)))
    with pytest.raises(UnsupportedModeError):
        estimate_mi(make(4, "tree"), np.zeros((1, 3)))


def test_category_out_of_range():
    with pytest.raises(ValueError):
        make(4, "flat").log_prob_true(np.zeros((1, 3)), [4])


def test_cross_entropy_of_uniform_flat_head():
    clf = AuxClassifier.create(3, 5, 2, 10, "flat", SeededRng(0))
    loss, _, _ = classifier_loss_and_grads(clf, SeededRng(1).normal((7, 3)), np.arange(7))
    assert loss == pytest.approx(math.log(10), abs=1e-14)


@pytest.mark.parametrize("mode,V", [("flat", 7), ("tree", 7), ("tree", 8), ("flat", 2)])
def test_cross_entropy_gradients(mode, V):
    clf = make(V, mode, seed=11)
    z = SeededRng(12).normal((9, 3))
    cats = np.arange(9) % V

    def loss_fn():
        loss, grads, _ = classifier_loss_and_grads(clf, z, cats, weight=1.3)
        return loss, grads

    report = grad_check(clf.params.arrays(), loss_fn, tolerance=1e-4)
    assert report.passed, report

    def loss_z():
        loss, _, dz = classifier_loss_and_grads(clf, z, cats, weight=1.3)
        return loss, [dz]

    report = grad_check([z], loss_z, tolerance=1e-4)
    assert report.passed, report


@pytest.mark.parametrize("mode", ["flat", "tree"])
def test_frozen_cotangent_only_reaches_z(mode):
    clf = make(6, mode, seed=21)
    z = SeededRng(22).normal((5, 3))
    cats = np.arange(5)
    cache = clf.forward_train(z, cats)
    g1 = clf.head_grad_from_log_true(cache, SeededRng(23).normal(5))
    g2 = clf.head_grad_from_log_true(cache, SeededRng(24).normal(5))
    p_both, dz_both = clf.backward(cache, g1, g2)
    p_one, dz1 = clf.backward(cache, g1)
    _, dz2 = clf.backward(cache, g2)
    for a, b in zip(p_both, p_one):
        np.testing.assert_allclose(a, b, atol=1e-14)
    np.testing.assert_allclose(dz_both, dz1 + dz2, atol=1e-13)


# -- estimators --------------------------------------------------------------


def test_mi_two_class_example():
    lp = np.log(np.array([[0.9, 0.1]]))
    # ln 2 - H(0.9, 0.1)
    assert mi_from_log_probs(lp, 2) == pytest.approx(0.368064207168497, abs=1e-12)


def test_mi_endpoints_exact():
    V = 16
    onehot = log_softmax(np.where(np.eye(V, dtype=bool), 2000.0, 0.0), axis=1)
    assert mi_from_log_probs(onehot, V) == math.log(V)
    uniform = np.full((5, V), -math.log(V))
    assert mi_from_log_probs(uniform, V) == 0.0


def test_range_check():
    assert check_range(-1e-9, 4) == 0.0
    assert check_range(math.log(4) + 1e-9, 4) == math.log(4)
    with pytest.raises(MiRangeError):
        check_range(-1e-3, 4)
    with pytest.raises(MiRangeError):
        check_range(math.log(4) + 1e-3, 4)


def test_fano_example_and_perfect_classifier():
    mi, pe = fano_from_log_true(np.log([0.9]), 4)
    # ln 4 - H_b(0.1)
    assert mi == pytest.approx(math.log(4) - 0.325082973391448, abs=1e-12)
    assert pe == pytest.approx(0.1)
    mi, pe = fano_from_log_true(np.zeros(3), 4)
    assert (mi, pe) == (math.log(4), 0.0)


@pytest.mark.parametrize("seed", range(60))
def test_fano_gap_bounded_by_error_mass(seed):
    rng = SeededRng(seed)
    V = int(rng.integers(2, 40))
    logits = rng.normal((12, V)) * (0.1 + 5.9 * float(rng.uniform()))
    cats = rng.integers(0, V, 12)
    lp = log_softmax(logits, axis=1)
    log_true = lp[np.arange(12), cats]
    mi = math.log(V) - float(np.mean(entropy_from_log_probs(lp)))  # exhaustive entropy
    fano, pe = fano_from_log_true(log_true, V)
    gap = fano - mi
    assert -1e-6 <= gap <= pe * math.log(V) + 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_classifier_objective_is_dv_minus_log_v(seed):
    rng = SeededRng(1000 + seed)
    n, V = int(rng.integers(1, 30)), int(rng.integers(2, 50))
    logits = rng.normal((n, V)) * 5
    cats = rng.integers(0, V, n)
    ce, dv = classifier_dv_form(logits, cats)
    assert abs(ce - (dv - math.log(V))) < 1e-10


def _exact_classifier(mu, sigma):
    """Flat head realising the Bayes posterior over equal-width 1-D Gaussians."""
    W = (mu / sigma**2)[None, :]
    b = -(mu**2) / (2 * sigma**2)
    return AuxClassifier(Mlp([Dense(W, b)]), len(mu), "flat")


def _quadrature(mu, sigma):
    from scipy import integrate
    from scipy.stats import norm

    def q(z):
        return np.mean(norm.pdf(z, mu, sigma))

    def md_integrand(z):
        qz = q(z)
        return qz * (math.log(qz) - norm.logpdf(z)) if qz > 0 else 0.0

    def cond_ent_integrand(z):
        # q(z) * H(q(x | z))
        w = norm.pdf(z, mu, sigma) / len(mu)
        qz = w.sum()
        if qz == 0:
            return 0.0
        p = w / qz
        p = p[p > 0]
        return qz * -np.sum(p * np.log(p))

    lo, hi = mu.min() - 10 * sigma, mu.max() + 10 * sigma
    md = integrate.quad(md_integrand, lo, hi, limit=400, points=list(mu))[0]
    h = integrate.quad(cond_ent_integrand, lo, hi, limit=400, points=list(mu))[0]
    return math.log(len(mu)) - h, md


def test_md_and_mi_against_quadrature():
    pytest.importorskip("scipy")
    mu = np.linspace(-2.5, 2.5, 16)
    sigma = 0.4
    clf = _exact_classifier(mu, sigma)
    L = 6250  # 10^5 draws
    cats = np.repeat(np.arange(16), L)
    z = (mu[cats] + sigma * SeededRng(7).normal(16 * L))[:, None]
    log_sigma = np.full((16 * L, 1), math.log(sigma))
    mi_ref, md_ref = _quadrature(mu, sigma)
    md = estimate_md(clf, z, mu[cats][:, None], log_sigma, cats)
    mi = estimate_mi(clf, z)
    assert md == pytest.approx(md_ref, abs=0.02)
    assert mi == pytest.approx(mi_ref, abs=0.02)
    # same draws, one call
    rep = report_from_samples(clf, z, mu[cats][:, None], log_sigma, cats)
    assert rep.md == pytest.approx(md, abs=1e-12)
    assert rep.mi == pytest.approx(mi, abs=1e-12)
    assert 0 <= rep.mi <= rep.mi_fano <= math.log(16)


def test_fano_needs_only_true_label():
    clf = make(8, "tree", seed=31)
    z = SeededRng(32).normal((10, 3))
    cats = np.arange(10) % 8
    fano, pe = estimate_mi_fano(clf, z, cats)
    lt = clf.log_prob_true(z, cats)
    assert pe == pytest.approx(float(np.mean(1 - np.exp(lt))), abs=1e-14)
    assert 0 <= fano <= math.log(8)


def test_single_label_gives_zero_mi():
    code = assign_labels(7, 1, seed=0)
    assert set(code.labels) == {0}
    clf = AuxClassifier.create(2, 4, 2, 1, "flat", SeededRng(0))
    assert estimate_mi(clf, SeededRng(1).normal((5, 2))) == 0.0


def test_large_label_shape():
    code = assign_labels(55000, 10000, seed=0)
    assert set(np.bincount(code.labels)) == {5, 6}


def test_cross_entropy_endpoints():
    assert float(-np.mean(log_softmax(np.array([[3000.0, 0, 0]]))[:, 0])) == 0.0
    assert float(-np.mean(np.full(4, -math.log(8)))) == pytest.approx(math.log(8))


def test_fano_endpoints():
    assert fano_from_log_true(np.zeros(4), 9)[0] == math.log(9)
    assert fano_from_log_true(np.log(np.full(6, 0.5)), 2)[0] == pytest.approx(0.0, abs=1e-15)


def test_depth_one_tree_with_zero_logit():
    clf = AuxClassifier.create(2, 3, 1, 2, "tree", SeededRng(0))
    clf.head.W[...] = 0.0
    clf.head.b[...] = 0.0
    np.testing.assert_allclose(np.exp(clf.leaf_log_probs(np.ones((1, 2)))), [[0.5, 0.5]], atol=1e-15)


def test_single_component_md_is_closed_form_kl():
    # N = V = 1: the classifier is certain and q(z) = q(z | x_1)
    clf = AuxClassifier.create(2, 4, 2, 1, "flat", SeededRng(0))
    mu, ls = np.array([[0.7, -0.3]]), np.array([[-0.5, 0.2]])
    n = 200000
    z = mu + np.exp(ls) * SeededRng(3).normal((n, 2))
    terms = md_terms(z, np.repeat(mu, n, 0), np.repeat(ls, n, 0), clf.log_prob_true(z, np.zeros(n, int)), 1)
    kl = 0.5 * np.sum(mu**2 + np.exp(2 * ls) - 1 - 2 * ls)
    assert abs(terms.mean() - kl) < 3 * terms.std() / math.sqrt(n)


def _train_toy(clf, z, cats, steps=300, lr=0.05):
    opt = Adam(clf.params.arrays(), lr=lr)
    for _ in range(steps):
        _, grads, _ = classifier_loss_and_grads(clf, z, cats)
        opt.step(clf.params.arrays(), grads)
        clf.params.bump()


def _accuracy(clf, z, cats):
    return float(np.mean(np.argmax(clf.log_probs(z), axis=1) == cats))


def test_two_cluster_accuracy():
    rng = SeededRng(40)
    cats = np.arange(400) % 2
    z = rng.normal((400, 2)) * 0.5 + np.where(cats[:, None] == 1, 3.0, -3.0)
    clf = AuxClassifier.create(2, 8, 2, 2, "flat", SeededRng(41))
    _train_toy(clf, z, cats, steps=100)
    test_c = np.arange(1000) % 2
    test_z = rng.substream("test").normal((1000, 2)) * 0.5 + np.where(test_c[:, None] == 1, 3.0, -3.0)
    assert _accuracy(clf, test_z, test_c) > 0.99


def test_tree_and_flat_reach_similar_accuracy():
    rng = SeededRng(50)
    centres = rng.substream("c").normal((8, 2)) * 2.5

    def draw(r, n):
        c = np.arange(n) % 8
        return centres[c] + r.normal((n, 2)) * 0.6, c

    z, cats = draw(rng.substream("train"), 1600)
    zt, ct = draw(rng.substream("test"), 4000)
    acc = {}
    for mode in ("flat", "tree"):
        clf = AuxClassifier.create(2, 32, 2, 8, mode, SeededRng(51))
        _train_toy(clf, z, cats, steps=600, lr=0.02)
        acc[mode] = _accuracy(clf, zt, ct)
    assert acc["flat"] > 0.7
    assert abs(acc["flat"] - acc["tree"]) <= 0.02
