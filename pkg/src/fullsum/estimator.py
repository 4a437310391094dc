"""Estimator facade over the training pipeline.

FullSumHMM follows the fit/predict conventions: constructor arguments are
stored verbatim (so get_params/set_params and clone work), all real work and
validation happen in ``fit``.  Because forced alignment is conditioned on
the transcription, ``y`` is required everywhere, which is the natural analog
of supervised targets here.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .alignment import Alignment
from .config import TrainConfig
from .data import Corpus, Utterance
from .topology import LabelInventory, expand_labels
from .trainer import align_corpus, evaluate_corpus_loss, train
from .encoder import encoder_forward


class FullSumHMM(BaseEstimator):
    """Joint classifier + transition-model training by full-sum likelihood.

    ``X`` is a list of (frames, dim) float arrays, ``y`` a parallel list of
    label-id sequences with ids >= 1; id 0 is reserved for silence, which is
    inserted automatically at both utterance ends.
    """

    def __init__(
        self,
        n_labels=None,
        epochs=10,
        pretrain_epochs=2,
        batch_size=8,
        threads=1,
        lpm_scale=0.3,
        tm_scale=0.3,
        lr_min=1.2e-5,
        lr_max=3.0e-4,
        cycle_fraction=0.8,
        l2=1e-4,
        dropout=0.1,
        hidden=(32, 32),
        activation="tanh",
        context_window=1,
        tm_kind="speech_silence",
        tm_init="guessed",
        prior_scale=0.0,
        seed=1,
    ):
        self.n_labels = n_labels
        self.epochs = epochs
        self.pretrain_epochs = pretrain_epochs
        self.batch_size = batch_size
        self.threads = threads
        self.lpm_scale = lpm_scale
        self.tm_scale = tm_scale
        self.lr_min = lr_min
        self.lr_max = lr_max
        self.cycle_fraction = cycle_fraction
        self.l2 = l2
        self.dropout = dropout
        self.hidden = hidden
        self.activation = activation
        self.context_window = context_window
        self.tm_kind = tm_kind
        self.tm_init = tm_init
        self.prior_scale = prior_scale
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            seed=self.seed,
            epochs=self.epochs,
            pretrain_epochs=self.pretrain_epochs,
            batch_size=self.batch_size,
            threads=self.threads,
            lpm_scale=self.lpm_scale,
            tm_scale=self.tm_scale,
            lr_min=self.lr_min,
            lr_max=self.lr_max,
            cycle_fraction=self.cycle_fraction,
            l2=self.l2,
            dropout=self.dropout,
            hidden=tuple(self.hidden),
            activation=self.activation,
            context_window=self.context_window,
            tm_kind=self.tm_kind,
            tm_init=self.tm_init,
            prior_scale=self.prior_scale,
        )

    def _corpus(self, X, y, inventory: LabelInventory) -> Corpus:
        from .validation import as_feature_list, as_label_sequences

        feats = as_feature_list(X)
        labels = as_label_sequences(y, len(feats))
        utts = []
        for i, (f, seq) in enumerate(zip(feats, labels)):
            if min(seq) < 1:
                raise ValueError(
                    f"y[{i}] contains a label id < 1; id 0 is reserved for silence"
                )
            chain = expand_labels(seq, inventory)
            utts.append(Utterance(utt_id=f"u{i:04d}", features=f, labels=seq, chain=chain))
        return Corpus(inventory=inventory, utterances=utts)

    def fit(self, X, y):
        from .validation import as_feature_list, as_label_sequences

        feats = as_feature_list(X)
        labels = as_label_sequences(y, len(feats))
        n_labels = self.n_labels
        if n_labels is None:
            n_labels = max(max(seq) for seq in labels) + 1
        inventory = LabelInventory(n_labels=int(n_labels), silence_id=0)
        corpus = self._corpus(feats, labels, inventory)
        result = train(corpus, self._train_config())
        self.model_ = result.model
        self.history_ = result.history
        self.inventory_ = inventory
        self.n_features_in_ = corpus.feature_dim
        return self

    def _check_corpus(self, X, y) -> Corpus:
        check_is_fitted(self, "model_")
        corpus = self._corpus(X, y, self.inventory_)
        if corpus.feature_dim != self.n_features_in_:
            raise ValueError(
                f"feature dim {corpus.feature_dim} != fitted {self.n_features_in_}"
            )
        return corpus

    def align(self, X, y, prior_scale: float | None = None) -> list[Alignment]:
        """Viterbi forced alignment of every utterance.

        ``prior_scale=None`` uses the weighting stored on the fitted model.
        """
        corpus = self._check_corpus(X, y)
        table = align_corpus(
            self.model_,
            corpus,
            self._train_config().scales,
            prior_scale=prior_scale,
            threads=self.threads,
        )
        missing = [u.utt_id for u in corpus.utterances if u.utt_id not in table]
        if missing:
            raise ValueError(f"{len(missing)} utterance(s) shorter than their state chain")
        return [table[u.utt_id] for u in corpus.utterances]

    def predict(self, X, y) -> list[np.ndarray]:
        """Per-frame label ids of the forced alignment."""
        return [ali.label_id.copy() for ali in self.align(X, y)]

    def predict_log_proba(self, X) -> list[np.ndarray]:
        """Per-frame (label, substate)-class log-posteriors."""
        check_is_fitted(self, "model_")
        from .validation import as_feature_list

        out = []
        for f in as_feature_list(X):
            log_probs, _ = encoder_forward(self.model_.encoder_config, self.model_.encoder, f)
            out.append(log_probs)
        return out

    def score(self, X, y) -> float:
        """Mean per-frame scaled log-likelihood (higher is better)."""
        corpus = self._check_corpus(X, y)
        return -evaluate_corpus_loss(self.model_, corpus, self._train_config().scales)
