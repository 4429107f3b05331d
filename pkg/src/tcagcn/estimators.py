"""scikit-learn estimators wrapping the network, stream encodings and fusion solver."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from .fusion import DEFAULT_START, ScoreMatrix, fused_predictions, solve, solve_greedy
from .graph import load_graph
from .network import (
    STREAMS,
    TCAGCN,
    ModelConfig,
    Schedule,
    channel_plan,
    center_normalize,
    derive_streams,
    evaluate_logits,
    train,
)


def check_skeletons(X, num_joints=None, channels=None):
    """Validate a ``(n_samples, T, N, C)`` float array."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_2d=False)
    if X.ndim != 4:
        raise ValueError(f"expected (n_samples, T, N, C) skeletons, got shape {X.shape}")
    if num_joints is not None and X.shape[2] != num_joints:
        raise ValueError(f"expected {num_joints} joints, got {X.shape[2]}")
    if channels is not None and X.shape[3] != channels:
        raise ValueError(f"expected {channels} channels per joint, got {X.shape[3]}")
    return X


def _seeds(random_state):
    seq = np.random.SeedSequence(0 if random_state is None else random_state)
    init, shuffle = seq.spawn(2)
    return int(init.generate_state(1)[0]), int(shuffle.generate_state(1)[0])


class TCAGCNClassifier(ClassifierMixin, BaseEstimator):
    """Skeleton action classifier built from TCAF blocks.

    Parameters
    ----------
    graph : str, dict or SkeletonGraph
        Template name (``"ntu25"``, ``"nwucla20"``, ``"toy9"``), JSON path or graph.
    widths, counts : tuple of int
        Stage widths and block counts; ignored when ``blocks`` is given.
    blocks : sequence of (in, out, stride), optional
        Explicit block layout.
    epochs, batch_size, base_lr, momentum, weight_decay, warmup_epochs, lr_steps
        SGD schedule; linear warmup to ``base_lr`` then x0.1 at each step epoch.
    target_accuracy : float, optional
        Stop once an epoch's training accuracy reaches this value.
    refresh_bn : bool
        Recompute BatchNorm running statistics from the training set with
        the current weights before each evaluation and after training.
    random_state : int
        Seeds both initialization and batch shuffling.

    Attributes
    ----------
    model_ : TCAGCN
    classes_ : ndarray
    history_ : list of dict
        Per-epoch ``epoch, lr, loss, train_acc, eval_acc``.
    """

    def __init__(
        self,
        graph="ntu25",
        widths=(64, 128, 256),
        counts=(4, 3, 3),
        blocks=None,
        epochs=65,
        batch_size=16,
        base_lr=0.1,
        momentum=0.9,
        weight_decay=4e-4,
        warmup_epochs=5,
        lr_steps=(35, 55),
        reduction_q=8,
        reduction=2,
        reduction_aff=4,
        corr_activation="relu",
        calib_activation="relu",
        target_accuracy=None,
        eval_each_epoch=True,
        refresh_bn=True,
        random_state=0,
    ):
        self.graph = graph
        self.widths = widths
        self.counts = counts
        self.blocks = blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.lr_steps = lr_steps
        self.reduction_q = reduction_q
        self.reduction = reduction
        self.reduction_aff = reduction_aff
        self.corr_activation = corr_activation
        self.calib_activation = calib_activation
        self.target_accuracy = target_accuracy
        self.eval_each_epoch = eval_each_epoch
        self.refresh_bn = refresh_bn
        self.random_state = random_state

    def _model_config(self, in_channels, num_classes):
        blocks = self.blocks if self.blocks is not None else channel_plan(self.widths, self.counts, in_channels)
        return ModelConfig(
            num_classes=num_classes,
            blocks=tuple(blocks),
            graph=load_graph(self.graph),
            in_channels=in_channels,
            reduction_q=self.reduction_q,
            reduction=self.reduction,
            reduction_aff=self.reduction_aff,
            corr_activation=self.corr_activation,
            calib_activation=self.calib_activation,
        )

    def _schedule(self):
        return Schedule(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            lr_steps=tuple(self.lr_steps),
        )

    def fit(self, X, y, X_eval=None, y_eval=None):
        graph = load_graph(self.graph)
        X = check_skeletons(X, graph.num_joints)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"{len(X)} samples but {len(y)} labels")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        init_seed, shuffle_seed = _seeds(self.random_state)
        self.model_ = TCAGCN(self._model_config(X.shape[3], len(self.classes_)), seed=init_seed)
        if X_eval is not None:
            X_eval = check_skeletons(X_eval, graph.num_joints, X.shape[3])
            y_eval = self._encoder.transform(np.asarray(y_eval))
        self.history_ = train(
            self.model_,
            X,
            self._encoder.transform(y),
            self._schedule(),
            seed=shuffle_seed,
            x_eval=X_eval,
            y_eval=y_eval,
            target_accuracy=self.target_accuracy,
            eval_each_epoch=self.eval_each_epoch,
            refresh_stats=self.refresh_bn,
        )
        return self

    def decision_function(self, X):
        """Raw eval-mode logits, shape ``(n_samples, n_classes)``."""
        check_is_fitted(self, "model_")
        X = check_skeletons(X, self.model_.graph.num_joints, self.model_.config.in_channels)
        return evaluate_logits(self.model_, X)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class SkeletonStreams(TransformerMixin, BaseEstimator):
    """Map raw joint coordinates to one of the four stream encodings.

    With ``normalize=True`` every sample is first translated so the center
    joint of its first frame is the origin.
    """

    def __init__(self, graph="ntu25", stream="joint", normalize=True):
        self.graph = graph
        self.stream = stream
        self.normalize = normalize

    def fit(self, X, y=None):
        if self.stream not in STREAMS:
            raise ValueError(f"stream must be one of {STREAMS}, got {self.stream!r}")
        self.graph_ = load_graph(self.graph)
        check_skeletons(X, self.graph_.num_joints)
        return self

    def transform(self, X):
        check_is_fitted(self, "graph_")
        X = check_skeletons(X, self.graph_.num_joints)
        if self.normalize:
            X = center_normalize(X, self.graph_.center)
        return derive_streams(X, self.graph_)[self.stream]


def _as_streams(X, y=None):
    if isinstance(X, (list, tuple)) and X and isinstance(X[0], ScoreMatrix):
        return list(X)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[0] != 4:
        raise ValueError(f"expected four stacked score matrices (4, n_samples, n_classes), got {X.shape}")
    labels = np.zeros(X.shape[1], dtype=np.intp) if y is None else y
    return [ScoreMatrix(name, X[k], labels) for k, name in enumerate(STREAMS)]


class DynamicStreamFusion(ClassifierMixin, BaseEstimator):
    """Pick stream weights ``b > a > c > d`` on a lattice to maximize accuracy.

    ``X`` is a ``(4, n_samples, n_classes)`` stack of raw scores (or a list of
    four :class:`ScoreMatrix`) ordered as the weights ``a, b, c, d``; ``y``
    holds column indices of the true classes.
    """

    def __init__(self, step=0.05, mode="exact", start=DEFAULT_START):
        self.step = step
        self.mode = mode
        self.start = start

    def fit(self, X, y):
        streams = _as_streams(X, np.asarray(y))
        self.classes_ = np.arange(streams[0].num_classes)
        if self.mode == "exact":
            result = solve(streams, self.step)
        elif self.mode == "greedy":
            result = solve_greedy(streams, self.step, self.start)
        else:
            raise ValueError(f"mode must be 'exact' or 'greedy', got {self.mode!r}")
        self.result_ = result
        self.weights_ = result.weights
        self.accuracy_ = result.accuracy
        self.right_ = result.right
        self.tuples_evaluated_ = result.tuples_evaluated
        return self

    def predict(self, X):
        check_is_fitted(self, "weights_")
        return self.classes_[fused_predictions(_as_streams(X), self.weights_)]
