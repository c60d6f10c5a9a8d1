"""Tests for toolsift retrieve module"""
import numpy as np
import pytest

from toolsift.embed import EmbeddingMatrix, HashingFeaturizer, normalize_rows
from toolsift.errors import DimensionMismatch, EmptyToolMatrix, EmptyTrainSet
from toolsift.evaluation import evaluate
from toolsift.models import EvalConfig, FeaturizerConfig, TrainConfig
from toolsift.retrieve import (
    MlcModel, MlcObjective, cosine_topn, mlc_forward, mlc_forward_batch, mlc_topn,
    rank_candidates, train_mlc,
)
from toolsift.train import grad_check


class TestRanking:
    """Tests for candidate ordering"""

    def test_ties_break_by_tool_id(self):
        ranked = rank_candidates(["c", "a", "b"], np.array([0.5, 0.5, 0.9]), 3)
        assert [c.tool_id for c in ranked] == ["b", "a", "c"]

    def test_prefix_property(self):
        rng = np.random.default_rng(0)
        ids = [f"t{i}" for i in range(20)]
        scores = np.round(rng.random(20), 1)
        full = rank_candidates(ids, scores, 20)
        for n in (1, 5, 13):
            assert rank_candidates(ids, scores, n) == full[:n]

    def test_n_larger_than_pool(self):
        assert len(rank_candidates(["a", "b"], np.array([0.1, 0.2]), 10)) == 2

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            rank_candidates(["a"], np.array([1.0]), 0)


class TestCosine:
    def _tools(self):
        return EmbeddingMatrix("tool2vec", ("x", "y", "z"),
                               normalize_rows(np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])))

    def test_topn(self):
        result = cosine_topn(np.array([1.0, 0.0]), self._tools(), 2, query_id="q")
        assert result.tool_ids == ["x", "y"]
        assert result.candidates[0].score == pytest.approx(1.0)
        assert result.stage == "stage1" and result.query_id == "q"

    def test_prefix_across_n(self):
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(150, 16))
        vectors[100:110] = vectors[0]
        tools = EmbeddingMatrix("tool2vec", tuple(f"t{i:03d}" for i in range(150)), normalize_rows(vectors))
        query = rng.normal(size=16)
        full = cosine_topn(query, tools, 150).tool_ids
        for n in (8, 16, 32, 64, 128):
            assert cosine_topn(query, tools, n).tool_ids == full[:n]

    def test_empty_matrix(self):
        empty = EmbeddingMatrix("tool2vec", (), np.zeros((0, 2)))
        with pytest.raises(EmptyToolMatrix):
            cosine_topn(np.array([1.0, 0.0]), empty, 3)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_topn(np.ones(3) / np.sqrt(3.0), self._tools(), 2)


class TestMlc:
    """Tests for the multi-label classifier"""

    def test_gradient(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(5, 6))
        Y = (rng.random((5, 4)) < 0.5).astype(float)
        params = {"W": rng.normal(scale=0.5, size=(6, 4)), "b": rng.normal(scale=0.5, size=4)}
        report = grad_check(MlcObjective(X, Y), params, [0, 1, 2, 3, 4])
        assert report.passed, report

    def test_zero_model_is_uniform(self):
        model = MlcModel.zeros(8, ["b", "a", "c"])
        assert mlc_forward(np.ones(8), model).tolist() == [0.5, 0.5, 0.5]
        featurizer = HashingFeaturizer(FeaturizerConfig(dim=8))
        assert mlc_topn("anything", model, featurizer, 3).tool_ids == ["a", "b", "c"]

    def test_forward_dimension_mismatch(self):
        model = MlcModel.zeros(8, ["a"])
        with pytest.raises(DimensionMismatch):
            mlc_forward(np.ones(7), model)
        with pytest.raises(DimensionMismatch):
            mlc_forward_batch(np.ones((2, 7)), model)

    def test_duplicate_tool_ids(self):
        with pytest.raises(ValueError):
            MlcModel(np.zeros((2, 2)), np.zeros(2), ("a", "a"))

    def test_save_and_load(self, tmp_path):
        rng = np.random.default_rng(2)
        model = MlcModel(rng.normal(size=(4, 3)), rng.normal(size=3), ("a", "b", "c"), TrainConfig(seed=9))
        path = str(tmp_path / "mlc.jsonl")
        model.save(path)
        loaded = MlcModel.load(path)
        assert loaded.tool_ids == model.tool_ids
        assert loaded.config.seed == 9
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.bias, model.bias)

    def test_empty_train_set(self, tiny_corpus):
        no_train = tiny_corpus.model_copy(update={"queries": tiny_corpus.queries_in(["val", "test"])})
        with pytest.raises(EmptyTrainSet):
            train_mlc(no_train, HashingFeaturizer(FeaturizerConfig(dim=64)), TrainConfig())

    def test_train_reports_val_loss(self, tiny_corpus):
        model, report = train_mlc(tiny_corpus, HashingFeaturizer(FeaturizerConfig(dim=64)),
                                  TrainConfig(learning_rate=1.0, epochs=3, batch_size=2))
        assert model.tool_ids == tuple(tiny_corpus.tool_ids)
        assert model.H == 64
        assert len(report.epochs) == 3
        assert report.epochs[-1].val_loss is not None
        assert report.train_losses[-1] < report.initial_train_loss

    def test_learns_separable_corpus(self, disjoint_corpus):
        featurizer = HashingFeaturizer(FeaturizerConfig(dim=512))
        model, _ = train_mlc(disjoint_corpus, featurizer,
                             TrainConfig(learning_rate=10.0, epochs=30, batch_size=8))
        test = disjoint_corpus.queries_in(["test"])
        results = [mlc_topn(q.text, model, featurizer, 3, query_id=q.query_id) for q in test]
        report = evaluate(results, disjoint_corpus, EvalConfig(ks=[3]))
        assert report.recall[3] >= 90.0

    def test_fits_training_queries(self, disjoint_corpus):
        featurizer = HashingFeaturizer(FeaturizerConfig(dim=512))
        model, _ = train_mlc(disjoint_corpus, featurizer,
                             TrainConfig(learning_rate=10.0, epochs=50, batch_size=8))
        train = disjoint_corpus.queries_in(["train"])
        results = [mlc_topn(q.text, model, featurizer, 1, query_id=q.query_id) for q in train]
        assert evaluate(results, disjoint_corpus, EvalConfig(ks=[1])).recall[1] == 100.0
