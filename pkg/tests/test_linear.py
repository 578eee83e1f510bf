import numpy as np
import pytest

from reference import central_difference, max_rel_error
from vihsd.corpus import ClassLabel, DataError
from vihsd.linear import (
    HINGE,
    LOGISTIC,
    CascadeModel,
    LinearModel,
    cascade_predict,
    hinge_objective,
    load_model,
    logistic_objective,
    margin,
    predict_batch,
    predict_linear,
    save_model,
    softmax,
    train_cascade,
    train_logreg,
    train_svm_binary,
)
from vihsd.tfidf import SparseVector, fit, transform


def one_hot(j, dim):
    return SparseVector(np.array([j]), np.array([1.0]), dim)


def binary_model(w, b):
    w = np.asarray(w, dtype=float)
    return LinearModel(np.stack([-w, w]), np.array([-b, b]), HINGE)


def blob_corpus(n=200, seed=0):
    """Three classes with disjoint keyword sets plus shared filler words."""
    rng = np.random.default_rng(seed)
    keywords = [["hay", "đẹp", "tốt"], ["vãi", "điên", "nhảm"], ["ngu", "đồ", "chó"]]
    filler = ["phim", "này", "xem", "bạn", "quá"]
    docs, labels = [], []
    for i in range(n):
        c = i % 3
        docs.append(list(rng.choice(keywords[c], 2)) + list(rng.choice(filler, 3)))
        labels.append(c)
    return docs, labels


class TestGradients:
    def test_logistic_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            F, n = rng.integers(1, 6), rng.integers(1, 9)
            X, y = rng.normal(size=(n, F)), rng.integers(0, 3, n)
            W, b, sw = rng.normal(size=(3, F)), rng.normal(size=3), rng.uniform(0.5, 2, n)
            l2 = rng.uniform(0, 0.1)
            _, dW, db = logistic_objective(W, b, X, y, l2, sw)
            Wl, bl, Xl, swl = (a.astype(np.longdouble) for a in (W, b, X, sw))
            num = central_difference(lambda: logistic_objective(Wl, bl, Xl, y, l2, swl)[0], [Wl, bl])
            assert max_rel_error([dW, db], num, floor=1e-8) < 1e-6

    def test_hinge_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            F, n = rng.integers(1, 6), rng.integers(1, 9)
            while True:
                X, y = rng.uniform(-1, 1, size=(n, F)), rng.integers(0, 2, n)
                w, b = rng.normal(size=F), rng.normal()
                if np.all(np.abs((2 * y - 1) * (X @ w + b) - 1) > 1e-3):
                    break
            l2 = rng.uniform(0, 0.1)
            _, dw, db = hinge_objective(w, b, X, y, l2)
            wl, bl, Xl = w.astype(np.longdouble), np.array([b], dtype=np.longdouble), X.astype(np.longdouble)
            num = central_difference(lambda: hinge_objective(wl, bl[0], Xl, y, l2)[0], [wl, bl], eps=1e-4)
            assert max_rel_error([dw, [db]], num, floor=1e-8) < 1e-6


class TestLogreg:
    def test_separable_pair(self):
        X = [one_hot(0, 2), one_hot(1, 2)]
        model = train_logreg(X, [0, 2], epochs=200)
        assert predict_batch(model, X)[0].tolist() == [0, 2]

    def test_neutral_class_weights_are_identity(self):
        docs, labels = blob_corpus(60)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        a = train_logreg(X, labels, epochs=5, seed=3)
        b = train_logreg(X, labels, epochs=5, seed=3, class_weights=[1.0, 1.0, 1.0])
        assert np.array_equal(a.weights, b.weights) and a.loss_history == b.loss_history

    def test_blob_corpus_fits(self):
        docs, labels = blob_corpus(200)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        model = train_logreg(X, labels)
        assert np.mean(predict_batch(model, X)[0] == labels) >= 0.99

    def test_full_batch_loss_non_increasing(self):
        docs, labels = blob_corpus(90, seed=4)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        hist = train_logreg(X, labels, lr=0.5, epochs=40, batch_size=len(X)).loss_history
        assert all(b <= a + 1e-6 for a, b in zip(hist, hist[1:]))

    def test_l2_shrinks_weights(self):
        docs, labels = blob_corpus(90)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        free = train_logreg(X, labels, epochs=50, l2=0.0)
        tied = train_logreg(X, labels, epochs=50, l2=1e-2)
        assert np.linalg.norm(tied.weights) < np.linalg.norm(free.weights)

    def test_deterministic(self):
        docs, labels = blob_corpus(50)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        assert np.array_equal(train_logreg(X, labels, seed=9).weights, train_logreg(X, labels, seed=9).weights)

    def test_missing_classes_allowed(self):
        model = train_logreg([one_hot(0, 1)] * 3, [1, 1, 1], epochs=3)
        assert predict_linear(model, one_hot(0, 1))[0] == ClassLabel.OFFENSIVE

    @pytest.mark.parametrize("hyper", [{"lr": -0.1}, {"lr": float("nan")}, {"epochs": 0}, {"batch_size": 0}, {"l2": -1}])
    def test_invalid_hyper(self, hyper):
        with pytest.raises(ValueError):
            train_logreg([one_hot(0, 1)], [0], **hyper)

    def test_zero_lr_is_noop(self):
        model = train_logreg([one_hot(0, 2)], [2], lr=0.0)
        assert not model.weights.any() and not model.bias.any()


class TestSvm:
    def test_separable_pair_margin(self):
        X = [one_hot(0, 2), one_hot(1, 2)]
        model = train_svm_binary(X, [0, 1], lr=0.5, epochs=200, l2=1e-4, batch_size=2)
        m = margin(model, np.eye(2))
        assert m[0] <= -1 + 1e-9 and m[1] >= 1 - 1e-9

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(40, 3)), rng.integers(0, 2, 40)
        a, b = train_svm_binary(X, y, seed=5), train_svm_binary(X, y, seed=5)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            train_svm_binary(np.eye(2), [1, 1])

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ValueError):
            train_svm_binary(np.eye(2), [0, 2])

    def test_agrees_with_exact_solver(self):
        cp = pytest.importorskip("cvxpy")
        rng = np.random.default_rng(3)
        n, l2 = 100, 1e-2
        y = rng.integers(0, 2, n)
        X = rng.normal(size=(n, 2)) + np.where(y[:, None] == 1, 1.0, -1.0) * np.array([1.0, 0.5])
        w, b = cp.Variable(2), cp.Variable()
        s = 2 * y - 1
        objective = cp.sum(cp.pos(1 - cp.multiply(s, X @ w + b))) / n + l2 * cp.sum_squares(w)
        cp.Problem(cp.Minimize(objective)).solve()
        reference = (X @ w.value + b.value) > 0
        model = train_svm_binary(X, y, lr=0.05, epochs=200, l2=l2, seed=3, batch_size=10)
        assert np.mean((margin(model, X) > 0) == reference) >= 0.98
        assert model.loss_history[-1] <= objective.value * 1.01


class TestCascade:
    def test_stage_a_clean_short_circuits(self):
        cascade = CascadeModel(binary_model([-1.0], 0.0), binary_model([5.0], 0.0))
        assert cascade_predict(cascade, one_hot(0, 1)) == ClassLabel.CLEAN

    def test_composition_to_hate(self):
        cascade = CascadeModel(binary_model([1.0], 0.0), binary_model([1.0], 0.0))
        assert cascade_predict(cascade, one_hot(0, 1)) == ClassLabel.HATE

    def test_zero_stage_b_margin_is_offensive(self):
        cascade = CascadeModel(binary_model([1.0], 0.0), binary_model([0.0], 0.0))
        assert cascade_predict(cascade, one_hot(0, 1)) == ClassLabel.OFFENSIVE

    def test_zero_stage_a_margin_is_clean(self):
        cascade = CascadeModel(binary_model([0.0], 0.0), binary_model([1.0], 0.0))
        assert cascade_predict(cascade, one_hot(0, 1)) == ClassLabel.CLEAN

    def test_trained_cascade_never_overrides_stage_a(self):
        docs, labels = blob_corpus(120)
        tf = fit(docs)
        X = [transform(tf, d) for d in docs]
        cascade = train_cascade(X, labels)
        preds, scores = predict_batch(cascade, X)
        clean = margin(cascade.stage_a, np.stack([x.to_dense() for x in X])) <= 0
        assert np.all(preds[clean] == ClassLabel.CLEAN)
        assert np.mean(preds == labels) >= 0.95
        assert [cascade_predict(cascade, x) for x in X] == preds.tolist()
        assert np.all(np.isfinite(scores))

    def test_cascade_needs_both_non_clean_classes(self):
        with pytest.raises(DataError):
            train_cascade(np.eye(2), [0, 1])


class TestPredictLinear:
    def test_zero_model_is_uniform_and_clean(self):
        model = LinearModel(np.zeros((3, 2)), np.zeros(3), LOGISTIC)
        label, probs = predict_linear(model, one_hot(1, 2))
        assert label == ClassLabel.CLEAN
        assert probs.tolist() == pytest.approx([1 / 3] * 3, abs=1e-15)

    def test_forced_argmax(self):
        W = np.array([[0.0], [0.0], [2.0]])
        assert predict_linear(LinearModel(W, np.zeros(3), LOGISTIC), one_hot(0, 1))[0] == ClassLabel.HATE

    def test_probabilities_on_random_inputs(self):
        rng = np.random.default_rng(0)
        model = LinearModel(rng.normal(size=(3, 6)) * 30, rng.normal(size=3), LOGISTIC)
        for _ in range(1000):
            idx = np.sort(rng.choice(6, size=rng.integers(0, 7), replace=False))
            _, probs = predict_linear(model, SparseVector(idx, rng.normal(size=len(idx)) * 10, 6))
            assert abs(probs.sum() - 1) <= 1e-9
            assert np.all((probs >= 0) & (probs <= 1))

    def test_softmax_is_stable(self):
        p = softmax(np.array([1000.0, 0.0, -1000.0]))
        assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12
        q = softmax(np.array([0.1, 0.2, 0.3]))
        assert np.all((q > 0) & (q < 1))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            predict_linear(LinearModel(np.zeros((3, 2)), np.zeros(3), LOGISTIC), one_hot(0, 5))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    lr = LinearModel(rng.normal(size=(3, 4)), rng.normal(size=3), LOGISTIC)
    cascade = CascadeModel(binary_model(rng.normal(size=4), 0.3), binary_model(rng.normal(size=4), -0.1))
    for model in (lr, cascade):
        save_model(model, tmp_path / "m.txt")
        loaded = load_model(tmp_path / "m.txt")
        pairs = [(model, loaded)] if model is lr else [(model.stage_a, loaded.stage_a), (model.stage_b, loaded.stage_b)]
        for want, got in pairs:
            assert got.kind == want.kind
            assert np.array_equal(got.weights, want.weights) and np.array_equal(got.bias, want.bias)
