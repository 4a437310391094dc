"""Full-sum training loop.

One model = feedforward classifier over (label, substate) output classes
plus a transition model.  Training minimizes the per-frame average of the
scaled negative alignment-marginal log-likelihood, plus an L2 penalty on
the classifier weight matrices.

Reproducibility contract: a run is a pure function of (corpus, config).
Dropout streams derive from (seed, epoch, utterance index), batches are
reduced in list order, and worker threads only parallelize per-utterance
work, so ``threads`` never changes the numbers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .alignment import Alignment, viterbi_align
from .config import TrainConfig
from .data import Corpus, Utterance
from .encoder import (
    EncoderCache,
    EncoderConfig,
    EncoderWeights,
    encoder_backward,
    encoder_forward,
    init_encoder,
)
from .lattice import LatticeStats, Scales, TransitionField, loss_and_grads
from .optim import NadamOptimizer, OneCycleSchedule
from .topology import LabelInventory, StateChain, chain_feasible
from .transitions import (
    INIT_GUESSED,
    KIND_FIXED,
    KIND_FULL_INPUT,
    TransitionGrads,
    TransitionParamization,
    TransitionParams,
    accumulate_grad,
    evaluate,
    init_params,
)


class TrainingDiverged(RuntimeError):
    """Raised when a batch loss stops being finite."""


@dataclass
class Model:
    """Everything needed to score and align utterances.

    ``scales`` records the criterion scales the model was trained with, so
    later alignment uses the same lattice weighting by default.
    """

    inventory: LabelInventory
    encoder_config: EncoderConfig
    encoder: EncoderWeights
    transitions: TransitionParams
    log_prior: np.ndarray | None = None  # (n_outputs,)
    scales: Scales = field(default_factory=Scales)
    prior_scale: float = 0.0  # default prior weighting for later alignment

    @property
    def n_outputs(self) -> int:
        return self.inventory.n_outputs


def gather_log_phi(log_probs: np.ndarray, chain: StateChain, inventory: LabelInventory) -> np.ndarray:
    """Per-frame log-posterior of every chain position, (T, S)."""
    cols = inventory.output_index(chain.label_id, chain.substate)
    return log_probs[:, cols]


def scatter_log_phi_grad(
    d_log_phi: np.ndarray, chain: StateChain, inventory: LabelInventory
) -> np.ndarray:
    """Adjoint of gather_log_phi; accumulates positions sharing a class."""
    cols = inventory.output_index(chain.label_id, chain.substate)
    T = d_log_phi.shape[0]
    d_log_probs = np.zeros((T, inventory.n_outputs))
    np.add.at(d_log_probs.T, cols, d_log_phi.T)
    return d_log_probs


@dataclass
class UtteranceResult:
    """Loss and gradients of one utterance, before batch normalization."""

    loss: float
    num_frames: int
    enc_grads: EncoderWeights
    tm_grads: TransitionGrads | None
    stats: LatticeStats


def utterance_forward(
    model: Model,
    utt: Utterance,
    scales: Scales,
    train_mode: bool = False,
    dropout_seed: int = 0,
    transitions: TransitionParams | None = None,
) -> tuple[float, LatticeStats, np.ndarray, EncoderCache, TransitionField]:
    """Loss plus every intermediate the backward pass needs.

    ``transitions`` overrides the model's own parameters (the pretraining
    phase scores with a fixed table while the real ones wait).
    """
    tm = model.transitions if transitions is None else transitions
    log_probs, cache = encoder_forward(
        model.encoder_config, model.encoder, utt.features, train_mode=train_mode, seed=dropout_seed
    )
    if not np.isfinite(log_probs).all():
        raise TrainingDiverged(
            f"utterance {utt.utt_id}: encoder produced non-finite log-probabilities"
        )
    log_phi = gather_log_phi(log_probs, utt.chain, model.inventory)
    encoder_out = cache.hidden if tm.paramization.input_dependent else None
    tm_field = evaluate(tm, utt.chain, utt.features.shape[0], encoder_out=encoder_out)
    loss, d_log_phi, stats = loss_and_grads(log_phi, tm_field, scales)
    return loss, stats, d_log_phi, cache, tm_field


def utterance_grads(
    model: Model,
    utt: Utterance,
    scales: Scales,
    train_mode: bool,
    dropout_seed: int,
    transitions: TransitionParams | None = None,
    train_tm: bool = True,
) -> UtteranceResult:
    """Full backward pass for one utterance; no L2, no normalization."""
    tm = model.transitions if transitions is None else transitions
    loss, stats, d_log_phi, cache, _ = utterance_forward(
        model, utt, scales, train_mode=train_mode, dropout_seed=dropout_seed, transitions=transitions
    )
    tm_grads = None
    d_hidden_extra = None
    if train_tm and tm.paramization.trainable:
        encoder_out = cache.hidden if tm.paramization.input_dependent else None
        tm_grads = accumulate_grad(
            tm, utt.chain, stats.xi_loop, stats.xi_fwd, scales.tm_scale, encoder_out=encoder_out
        )
        d_hidden_extra = tm_grads.d_encoder_out
    d_log_probs = scatter_log_phi_grad(d_log_phi, utt.chain, model.inventory)
    enc_grads = encoder_backward(
        model.encoder_config, cache, model.encoder, d_log_probs, d_hidden_extra=d_hidden_extra
    )
    return UtteranceResult(
        loss=loss,
        num_frames=utt.features.shape[0],
        enc_grads=enc_grads,
        tm_grads=tm_grads,
        stats=stats,
    )


def _add_enc_grads(total: EncoderWeights | None, part: EncoderWeights) -> EncoderWeights:
    if total is None:
        return part
    for (tW, tb), (pW, pb) in zip(total.layers, part.layers):
        tW += pW
        tb += pb
    return total


def _add_tm_grads(total: TransitionGrads | None, part: TransitionGrads | None) -> TransitionGrads | None:
    if part is None:
        return total
    if total is None:
        return TransitionGrads(
            d_logits=part.d_logits.copy(),
            d_weights=None if part.d_weights is None else part.d_weights.copy(),
        )
    total.d_logits += part.d_logits
    if part.d_weights is not None:
        total.d_weights += part.d_weights
    return total


def _dropout_seed(base_seed: int, epoch: int, utt_index: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(epoch, utt_index))
    return int(ss.generate_state(1)[0])


@dataclass
class BatchStats:
    loss_sum: float              # unnormalized criterion over included utterances
    num_frames: int
    num_skipped: int
    enc_grads: EncoderWeights | None
    tm_grads: TransitionGrads | None


def run_batch(
    model: Model,
    batch: list[tuple[int, Utterance]],
    scales: Scales,
    epoch: int,
    base_seed: int,
    pool: ThreadPoolExecutor | None,
    transitions: TransitionParams | None = None,
    train_tm: bool = True,
) -> BatchStats:
    """Gradient accumulation over one batch; reduction is in batch order so
    the thread count cannot change the result."""
    todo = []
    num_skipped = 0
    for idx, utt in batch:
        if not chain_feasible(utt.chain, utt.features.shape[0]):
            num_skipped += 1
            continue
        todo.append((idx, utt))

    def work(item: tuple[int, Utterance]) -> UtteranceResult:
        idx, utt = item
        return utterance_grads(
            model,
            utt,
            scales,
            train_mode=True,
            dropout_seed=_dropout_seed(base_seed, epoch, idx),
            transitions=transitions,
            train_tm=train_tm,
        )

    results = pool.map(work, todo) if pool is not None else map(work, todo)
    loss_sum = 0.0
    num_frames = 0
    enc_total: EncoderWeights | None = None
    tm_total: TransitionGrads | None = None
    for res in results:
        loss_sum += res.loss
        num_frames += res.num_frames
        enc_total = _add_enc_grads(enc_total, res.enc_grads)
        tm_total = _add_tm_grads(tm_total, res.tm_grads)
    return BatchStats(
        loss_sum=loss_sum,
        num_frames=num_frames,
        num_skipped=num_skipped,
        enc_grads=enc_total,
        tm_grads=tm_total,
    )


@dataclass
class EpochRecord:
    epoch: int
    loss: float          # per-frame criterion average over the epoch
    lr: float            # learning rate of the epoch's last step
    num_skipped: int
    pretraining: bool
    p_forward: np.ndarray  # per-slot snapshot after the epoch


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    epoch_hook=None,
    log=None,
) -> TrainResult:
    """Run the full training schedule on a corpus.

    The first ``pretrain_epochs`` epochs train only the classifier against a
    fixed duration-guessed transition table; afterwards the configured
    transition model is initialized and trained jointly.  ``epoch_hook`` is
    called as ``hook(epoch, model)`` after every epoch with the live model.
    Raises TrainingDiverged if a batch loss leaves the finite range.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    inv = corpus.inventory
    enc_cfg = cfg.encoder_config(corpus.feature_dim, inv.n_outputs)
    paramization = TransitionParamization(
        kind=cfg.tm_kind,
        head_input_dim=enc_cfg.hidden_dim if cfg.tm_kind == KIND_FULL_INPUT else None,
    )
    main_tm = init_params(paramization, inv, cfg.tm_init, seed=cfg.seed + 1)
    pretrain_tm = init_params(TransitionParamization(kind=KIND_FIXED), inv, INIT_GUESSED)
    model = Model(
        inventory=inv,
        encoder_config=enc_cfg,
        encoder=init_encoder(enc_cfg, seed=cfg.seed),
        transitions=pretrain_tm if cfg.pretrain_epochs > 0 else main_tm,
        scales=cfg.scales,
        prior_scale=cfg.prior_scale,
    )

    steps_per_epoch = (len(corpus) + cfg.batch_size - 1) // cfg.batch_size
    schedule = OneCycleSchedule(
        total_steps=cfg.epochs * steps_per_epoch,
        lr_min=cfg.lr_min,
        lr_max=cfg.lr_max,
        cycle_fraction=cfg.cycle_fraction,
    )
    enc_opt = NadamOptimizer()
    tm_opt = NadamOptimizer()
    enc_params = model.encoder.flat()
    tm_params = [main_tm.logits]
    if main_tm.weights is not None:
        tm_params.append(main_tm.weights)

    pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    result = TrainResult(model=model)
    global_step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            pretraining = epoch <= cfg.pretrain_epochs
            if not pretraining and model.transitions is not main_tm:
                model.transitions = main_tm
            order = np.arange(len(corpus))
            np.random.default_rng(
                np.random.SeedSequence(entropy=cfg.seed, spawn_key=(epoch,))
            ).shuffle(order)

            epoch_loss = 0.0
            epoch_frames = 0
            epoch_skipped = 0
            lr = schedule.lr(0)
            for start in range(0, len(order), cfg.batch_size):
                batch = [(int(i), corpus.utterances[int(i)]) for i in order[start : start + cfg.batch_size]]
                stats = run_batch(
                    model,
                    batch,
                    cfg.scales,
                    epoch=epoch,
                    base_seed=cfg.seed,
                    pool=pool,
                    train_tm=not pretraining,
                )
                lr = schedule.lr(global_step)
                global_step += 1
                epoch_skipped += stats.num_skipped
                if stats.num_frames == 0:
                    continue
                batch_loss = stats.loss_sum / stats.num_frames
                if not np.isfinite(batch_loss):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, step {global_step}"
                    )
                epoch_loss += stats.loss_sum
                epoch_frames += stats.num_frames

                scale = 1.0 / stats.num_frames
                enc_grad_list = []
                for (gW, gb), (W, _) in zip(stats.enc_grads.layers, model.encoder.layers):
                    enc_grad_list.extend([gW * scale + cfg.l2 * W, gb * scale])
                enc_opt.step(enc_params, enc_grad_list, lr)
                if not pretraining and stats.tm_grads is not None:
                    tm_grad_list = [stats.tm_grads.d_logits * scale]
                    if stats.tm_grads.d_weights is not None:
                        tm_grad_list.append(stats.tm_grads.d_weights * scale)
                    tm_opt.step(tm_params, tm_grad_list, lr)

            if epoch_frames == 0:
                raise ValueError("every utterance in the corpus is infeasible")
            record = EpochRecord(
                epoch=epoch,
                loss=epoch_loss / epoch_frames,
                lr=lr,
                num_skipped=epoch_skipped,
                pretraining=pretraining,
                p_forward=model.transitions.p_forward.copy(),
            )
            result.history.append(record)
            if log is not None:
                phase = "pretrain" if pretraining else "train"
                log(
                    f"epoch {epoch:3d} [{phase}] loss/frame {record.loss:.6f} "
                    f"lr {record.lr:.3e} skipped {epoch_skipped}"
                )
            if epoch_hook is not None:
                epoch_hook(epoch, model)
    finally:
        if pool is not None:
            pool.shutdown()

    model.log_prior = estimate_prior(model, corpus)
    return result


def estimate_prior(model: Model, corpus: Corpus) -> np.ndarray:
    """Log marginal output-class frequency, occupancy-weighted over the corpus.

    Every frame of every (feasible) utterance contributes its soft state
    occupancies, scattered onto the output classes of the utterance's chain,
    so classes shared by several chain positions accumulate all of their
    mass.  Rows of gamma sum to one, hence the result is a distribution over
    classes; classes never occupied are floored at 1e-12 before the log so
    the prior stays finite.
    """
    total = np.zeros(model.n_outputs)
    frames = 0
    for utt in corpus.utterances:
        if not chain_feasible(utt.chain, utt.features.shape[0]):
            continue
        _, stats, _, _, _ = utterance_forward(model, utt, model.scales)
        cols = model.inventory.output_index(utt.chain.label_id, utt.chain.substate)
        np.add.at(total, cols, stats.gamma.sum(axis=0))
        frames += utt.features.shape[0]
    if frames == 0:
        raise ValueError("every utterance in the corpus is infeasible")
    return np.log(np.maximum(total / frames, 1e-12))


def evaluate_corpus_loss(model: Model, corpus: Corpus, scales: Scales) -> float:
    """Per-frame criterion in inference mode (no dropout, no L2); skips
    infeasible utterances like training does."""
    loss_sum = 0.0
    frames = 0
    for utt in corpus.utterances:
        if not chain_feasible(utt.chain, utt.features.shape[0]):
            continue
        loss, _, _, _, _ = utterance_forward(model, utt, scales)
        loss_sum += loss
        frames += utt.features.shape[0]
    if frames == 0:
        raise ValueError("every utterance in the corpus is infeasible")
    return loss_sum / frames


def align_corpus(
    model: Model,
    corpus: Corpus,
    scales: Scales,
    prior_scale: float | None = None,
    threads: int = 1,
) -> dict[str, Alignment]:
    """Viterbi forced alignment of every feasible utterance.

    ``prior_scale=None`` uses the weighting stored on the model.
    """
    if prior_scale is None:
        prior_scale = model.prior_scale

    def work(utt: Utterance) -> tuple[str, Alignment | None]:
        if not chain_feasible(utt.chain, utt.features.shape[0]):
            return utt.utt_id, None
        log_probs, cache = encoder_forward(model.encoder_config, model.encoder, utt.features)
        log_phi = gather_log_phi(log_probs, utt.chain, model.inventory)
        encoder_out = cache.hidden if model.transitions.paramization.input_dependent else None
        tm_field = evaluate(
            model.transitions, utt.chain, utt.features.shape[0], encoder_out=encoder_out
        )
        log_prior = None
        if prior_scale > 0.0 and model.log_prior is not None:
            cols = model.inventory.output_index(utt.chain.label_id, utt.chain.substate)
            log_prior = model.log_prior[cols]
        ali, _ = viterbi_align(
            log_phi,
            tm_field,
            scales,
            utt.chain,
            utt_id=utt.utt_id,
            log_prior=log_prior,
            prior_scale=prior_scale,
        )
        return utt.utt_id, ali

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(work, corpus.utterances))
    else:
        pairs = [work(u) for u in corpus.utterances]
    return {utt_id: ali for utt_id, ali in pairs if ali is not None}
