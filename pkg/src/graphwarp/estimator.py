"""
scikit-learn compatible front end. Inputs are sequences of SMILES strings
(or parsed :class:`~graphwarp.chem.MolGraph` objects)::

    clf = GraphWarpClassifier(host="ggnn", epochs=5).fit(smiles, labels)
    clf.predict_proba(["CCN"])
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .chem import DEFAULT_VOCAB, MolDataset, featurize, fit_supernode_scale
from .model import ModelConfig
from .training import evaluate, make_batches, train_loop
from .validation import (check_molecules, check_positive_int, check_random_state_int,
                         check_targets)


class SmilesGraphTransformer(TransformerMixin, BaseEstimator):
    """Turn SMILES strings into ``(node one-hot, typed adjacency)`` pairs."""

    def __init__(self, vocab=DEFAULT_VOCAB, n_relations=4):
        self.vocab = vocab
        self.n_relations = n_relations

    def fit(self, X, y=None):
        check_molecules(X)
        check_positive_int(self.n_relations, "n_relations")
        self.n_features_out_ = len(self.vocab)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        return [featurize(g, self.vocab, self.n_relations) for g in check_molecules(X)]


class _GraphWarpBase(BaseEstimator):
    _task = "classification"

    def __init__(self, host="rsgcn", variant="full", n_layers=3, dim=50, n_heads=8,
                 n_relations=4, dropout=0.5, epochs=30, batch_size=32, learning_rate=0.001,
                 random_state=None):
        self.host = host
        self.variant = variant
        self.n_layers = n_layers
        self.dim = dim
        self.n_heads = n_heads
        self.n_relations = n_relations
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _config(self, n_tasks):
        return ModelConfig(host=self.host, variant=self.variant, n_layers=self.n_layers,
                           dim=self.dim, n_heads=self.n_heads, n_relations=self.n_relations,
                           n_tasks=n_tasks, task=self._task, dropout=self.dropout,
                           seed=check_random_state_int(self.random_state),
                           n_atom_types=len(DEFAULT_VOCAB))

    def _fit(self, graphs, targets):
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.batch_size, "batch_size")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        config = self._config(targets.shape[1])
        tasks = [f"task{t}" for t in range(targets.shape[1])]
        data = MolDataset([""] * len(graphs), graphs, targets, tasks)
        # no held-out data here: the training set stands in for val/test
        record, params = train_loop(config, data, data, data, epochs=self.epochs,
                                    batch_size=self.batch_size, lr=self.learning_rate,
                                    return_params=True)
        self.config_ = config
        self.params_ = params
        self.record_ = record
        self.supernode_scale_ = fit_supernode_scale(graphs, DEFAULT_VOCAB, self.n_relations)
        self.n_tasks_ = targets.shape[1]
        return self

    def _raw_output(self, X):
        check_is_fitted(self, "params_")
        graphs = check_molecules(X)
        data = MolDataset([""] * len(graphs), graphs,
                          np.full((len(graphs), self.n_tasks_), np.nan),
                          [f"task{t}" for t in range(self.n_tasks_)])
        batches = make_batches(data, self.batch_size, DEFAULT_VOCAB, self.n_relations,
                               self.supernode_scale_)
        return evaluate(self.config_, self.params_, batches)[2]


class GraphWarpClassifier(ClassifierMixin, _GraphWarpBase):
    """
    Binary (or multi-label binary) molecular classifier.

    ``y`` is either a 1-d array with exactly two classes or a 2-d 0/1
    indicator matrix where NaN marks a missing label.
    """

    _task = "classification"

    def fit(self, X, y):
        graphs = check_molecules(X)
        y_arr = np.asarray(y)
        if y_arr.ndim == 1:
            self.classes_ = np.unique(y_arr)
            if self.classes_.size != 2:
                raise ValueError(f"need exactly two classes, got {self.classes_.size}")
            targets = check_targets((y_arr == self.classes_[1]).astype(float), len(graphs))
            self._multilabel = False
        else:
            targets = check_targets(y_arr, len(graphs))
            observed = targets[~np.isnan(targets)]
            if not np.isin(observed, (0.0, 1.0)).all():
                raise ValueError("indicator targets must be 0, 1 or NaN")
            self.classes_ = np.array([0, 1])
            self._multilabel = True
        return self._fit(graphs, targets)

    def decision_function(self, X):
        logits = self._raw_output(X)
        return logits if self._multilabel else logits[:, 0]

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self._raw_output(X)))
        if self._multilabel:
            return p
        return np.column_stack([1.0 - p[:, 0], p[:, 0]])

    def predict(self, X):
        scores = self.decision_function(X)
        if self._multilabel:
            return (scores > 0).astype(int)
        return self.classes_[(scores > 0).astype(int)]


class GraphWarpRegressor(RegressorMixin, _GraphWarpBase):
    """Molecular property regressor (one or more real-valued targets)."""

    _task = "regression"

    def fit(self, X, y):
        graphs = check_molecules(X)
        y_arr = np.asarray(y, dtype=float)
        self._single_output = y_arr.ndim == 1
        return self._fit(graphs, check_targets(y_arr, len(graphs)))

    def predict(self, X):
        out = self._raw_output(X)
        return out[:, 0] if self._single_output else out
