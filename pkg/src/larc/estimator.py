"""scikit-learn compatible wrapper around the training loop."""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted

from .data import Example, encode_examples
from .errors import DataError
from .tensor import softmax, Tensor
from .training import TrainingConfig, train

# the TrainingConfig defaults (2e-6 / 1e-5) suit a pretrained backbone; a randomly
# initialised small encoder needs a larger step at the same 1:5 ratio
DESK_LR_BACKBONE = 1e-4
DESK_LR_NEW = 5e-4


def _check_texts(X) -> list[str]:
    if isinstance(X, str):
        raise DataError("expected an iterable of texts, got a single string")
    texts = [str(x) for x in X]
    if any(not t.strip() for t in texts):
        raise DataError("empty text in input")
    return texts


class LayerAttentiveClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Text classifier with layer-attentive fusion and a contrastive auxiliary loss.

    Parameters mirror :class:`~larc.training.TrainingConfig`. ``fit`` takes raw
    texts plus labels of any hashable type; ``transform`` returns fused
    (``space="fused"``) or contrastive embeddings.

    Attributes
    ----------
    classes_ : ndarray of the original labels, index = internal class id
    model_ : the trained :class:`~larc.model.LarcModel`
    vocab_ : the vocabulary built from the training texts
    history_ : per-step loss log
    """

    def __init__(
        self,
        num_layers=4,
        hidden_dim=64,
        num_heads=4,
        ffn_dim=128,
        max_seq_len=32,
        contrastive_dim=32,
        head_hidden=64,
        dropout_rate=0.4,
        pooler="tanh",
        lr_backbone=DESK_LR_BACKBONE,
        lr_new=DESK_LR_NEW,
        weight_decay=0.01,
        clip_max_norm=1.0,
        accum_steps=2,
        warmup_fraction=0.10,
        lambda_max=0.15,
        t_ramp=5.0,
        tau_base=0.05,
        beta=0.1,
        batch_size=16,
        epochs=15,
        seed=0,
        max_vocab=None,
        enable_fusion=True,
        enable_contrastive=True,
        space="fused",
    ):
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.num_heads = num_heads
        self.ffn_dim = ffn_dim
        self.max_seq_len = max_seq_len
        self.contrastive_dim = contrastive_dim
        self.head_hidden = head_hidden
        self.dropout_rate = dropout_rate
        self.pooler = pooler
        self.lr_backbone = lr_backbone
        self.lr_new = lr_new
        self.weight_decay = weight_decay
        self.clip_max_norm = clip_max_norm
        self.accum_steps = accum_steps
        self.warmup_fraction = warmup_fraction
        self.lambda_max = lambda_max
        self.t_ramp = t_ramp
        self.tau_base = tau_base
        self.beta = beta
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.max_vocab = max_vocab
        self.enable_fusion = enable_fusion
        self.enable_contrastive = enable_contrastive
        self.space = space

    def _config(self) -> TrainingConfig:
        keys = {f.name for f in fields(TrainingConfig)}
        return TrainingConfig(**{k: v for k, v in self.get_params().items() if k in keys})

    def fit(self, X, y, X_val=None, y_val=None):
        texts = _check_texts(X)
        y = np.asarray(y)
        if len(texts) != len(y):
            raise DataError(f"{len(texts)} texts but {len(y)} labels")
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        train_set = [Example(t, int(k)) for t, k in zip(texts, codes)]
        val_set = None
        if X_val is not None:
            lookup = {c: i for i, c in enumerate(self.classes_)}
            val_set = [Example(t, lookup[c]) for t, c in zip(_check_texts(X_val), y_val)]
        cfg = self._config()
        cfg.num_classes = max(len(self.classes_), 2)
        result = train(cfg, train_set, val_set)
        self.model_ = result.model
        self.vocab_ = result.vocab
        self.config_ = result.config
        self.history_ = result.history
        self.val_history_ = result.val_history
        self.n_features_in_ = 1
        return self

    def _encode(self, X):
        check_is_fitted(self, "model_")
        texts = _check_texts(X)
        examples = [Example(t, 0) for t in texts]
        return encode_examples(examples, self.vocab_, self.config_.max_seq_len)

    def decision_function(self, X) -> np.ndarray:
        batch = self._encode(X)
        return self.model_.predict_logits(batch.ids, batch.mask)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(Tensor(self.decision_function(X)), axis=-1).data

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def transform(self, X) -> np.ndarray:
        batch = self._encode(X)
        return self.model_.embed(batch.ids, batch.mask, space=self.space)

    def layer_weights(self) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.fusion.alpha()
