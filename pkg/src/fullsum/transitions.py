"""Learnable loop/forward transition probabilities.

Every parametrization stores one unconstrained logit per slot; the forward
probability is ``sigmoid(logit)`` and the loop probability its complement,
so ``p_F + p_L = 1`` holds by construction.  Parametrizations differ only in
how chain states map onto slots:

* ``fixed`` / ``speech_silence``: one slot for all speech states, one for
  silence (``fixed`` never receives gradient).
* ``substate_silence``: one slot per speech substate plus silence.
* ``full``: one slot per (speech label, substate) pair plus silence.
* ``full_input``: the full slot set, but the logit at frame t is a linear
  projection of the encoder output at t plus a per-slot bias, which makes
  the probabilities input- and time-dependent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import TransitionField
from .topology import LabelInventory, StateChain

KIND_FIXED = "fixed"
KIND_SPEECH_SILENCE = "speech_silence"
KIND_SUBSTATE_SILENCE = "substate_silence"
KIND_FULL = "full"
KIND_FULL_INPUT = "full_input"
KINDS = (KIND_FIXED, KIND_SPEECH_SILENCE, KIND_SUBSTATE_SILENCE, KIND_FULL, KIND_FULL_INPUT)

INIT_GUESSED = "guessed"
INIT_FLAT = "flat"
INIT_RANDOM = "random"
INIT_STRATEGIES = (INIT_GUESSED, INIT_FLAT, INIT_RANDOM)

GUESSED_P_FORWARD_SPEECH = 1.0 / 3.0
GUESSED_P_FORWARD_SILENCE = 1.0 / 40.0


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(log_sigmoid(x))


@dataclass(frozen=True)
class TransitionParamization:
    """Which transition parametrization is in use.

    ``head_input_dim`` is the encoder output width and is required exactly
    for ``full_input``.
    """

    kind: str
    head_input_dim: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown transition kind {self.kind!r}")
        if self.kind == KIND_FULL_INPUT:
            if self.head_input_dim is None or self.head_input_dim < 1:
                raise ValueError("full_input needs head_input_dim >= 1")
        elif self.head_input_dim is not None:
            raise ValueError("head_input_dim only applies to full_input")

    @property
    def trainable(self) -> bool:
        return self.kind != KIND_FIXED

    @property
    def input_dependent(self) -> bool:
        return self.kind == KIND_FULL_INPUT


@dataclass(frozen=True)
class SlotTable:
    """Slot names and the chain-position -> slot resolver for one kind."""

    names: tuple[str, ...]
    silence_slot: int
    speech_slot_of: np.ndarray | None  # (n_speech_labels_dense, max_substates) or None

    @property
    def num_slots(self) -> int:
        return len(self.names)


def build_slot_table(paramization: TransitionParamization, inventory: LabelInventory) -> SlotTable:
    kind = paramization.kind
    if kind in (KIND_FIXED, KIND_SPEECH_SILENCE):
        return SlotTable(names=("speech", "silence"), silence_slot=1, speech_slot_of=None)
    if kind == KIND_SUBSTATE_SILENCE:
        n_sub = inventory.substates_per_speech_label
        names = tuple(f"substate{j}" for j in range(n_sub)) + ("silence",)
        return SlotTable(names=names, silence_slot=n_sub, speech_slot_of=None)
    # full and full_input: a slot per (speech label, substate) plus silence
    n_sub = inventory.substates_per_speech_label
    speech = inventory.speech_labels
    names = []
    slot_of = np.full((inventory.n_labels, n_sub), -1, dtype=np.int64)
    for i, lab in enumerate(speech):
        for j in range(n_sub):
            slot_of[lab, j] = len(names)
            names.append(f"{inventory.name_of(lab)}.{j}")
    silence_slot = len(names)
    names.append("silence")
    return SlotTable(names=tuple(names), silence_slot=silence_slot, speech_slot_of=slot_of)


def slots_for_chain(
    paramization: TransitionParamization, table: SlotTable, chain: StateChain
) -> np.ndarray:
    """Slot index of every chain position, shape (S,)."""
    kind = paramization.kind
    S = len(chain)
    slots = np.empty(S, dtype=np.int64)
    sil = chain.is_silence
    slots[sil] = table.silence_slot
    if kind in (KIND_FIXED, KIND_SPEECH_SILENCE):
        slots[~sil] = 0
    elif kind == KIND_SUBSTATE_SILENCE:
        slots[~sil] = chain.substate[~sil]
    else:
        slots[~sil] = table.speech_slot_of[chain.label_id[~sil], chain.substate[~sil]]
    if np.any(slots < 0):
        raise ValueError("chain contains states outside the slot table")
    return slots


@dataclass
class TransitionParams:
    """Logit-space parameters of one transition model instance.

    ``logits`` is the per-slot logit vector; for ``full_input`` it is the
    bias of the linear head and ``weights`` is the (head_input_dim, n_slots)
    projection applied to the encoder output.
    """

    paramization: TransitionParamization
    table: SlotTable
    logits: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (self.table.num_slots,):
            raise ValueError("logit vector does not match slot count")
        if self.paramization.input_dependent:
            expected = (self.paramization.head_input_dim, self.table.num_slots)
            if self.weights is None or self.weights.shape != expected:
                raise ValueError(f"full_input weights must have shape {expected}")
            self.weights = np.asarray(self.weights, dtype=np.float64)
        elif self.weights is not None:
            raise ValueError("only full_input carries a weight matrix")

    @property
    def p_forward(self) -> np.ndarray:
        """Per-slot forward probabilities; for full_input, bias-implied."""
        return sigmoid(self.logits)

    def copy(self) -> "TransitionParams":
        return TransitionParams(
            paramization=self.paramization,
            table=self.table,
            logits=self.logits.copy(),
            weights=None if self.weights is None else self.weights.copy(),
        )


@dataclass
class TransitionGrads:
    """Gradients of the minimized loss; shapes mirror TransitionParams."""

    d_logits: np.ndarray
    d_weights: np.ndarray | None = None
    d_encoder_out: np.ndarray | None = None


def init_params(
    paramization: TransitionParamization,
    inventory: LabelInventory,
    strategy: str,
    seed: int = 0,
) -> TransitionParams:
    """Initialize per-slot logits.

    ``guessed`` sets the forward probability from average-duration statistics
    (1/3 speech, 1/40 silence, geometric durations); ``flat`` gives 1/2
    everywhere; ``random`` draws standard-normal logits, which makes the
    probabilities logit-normal.  For ``full_input`` the strategy fills the
    bias and the weight matrix starts at zero.
    """
    if strategy not in INIT_STRATEGIES:
        raise ValueError(f"unknown init strategy {strategy!r}")
    table = build_slot_table(paramization, inventory)
    n = table.num_slots
    if strategy == INIT_GUESSED:
        logits = np.full(n, logit(GUESSED_P_FORWARD_SPEECH))
        logits[table.silence_slot] = logit(GUESSED_P_FORWARD_SILENCE)
    elif strategy == INIT_FLAT:
        logits = np.zeros(n)
    else:
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal(n)
    weights = None
    if paramization.input_dependent:
        weights = np.zeros((paramization.head_input_dim, n))
    return TransitionParams(paramization=paramization, table=table, logits=logits, weights=weights)


def evaluate(
    params: TransitionParams,
    chain: StateChain,
    num_frames: int,
    encoder_out: np.ndarray | None = None,
) -> TransitionField:
    """Per-frame log loop/forward weights for every chain position.

    Time-invariant kinds broadcast one row; ``full_input`` projects the
    encoder output per frame through the linear head and a logistic sigmoid.
    """
    slots = slots_for_chain(params.paramization, params.table, chain)
    if params.paramization.input_dependent:
        if encoder_out is None:
            raise ValueError("full_input requires encoder_out")
        encoder_out = np.asarray(encoder_out, dtype=np.float64)
        if encoder_out.shape != (num_frames, params.paramization.head_input_dim):
            raise ValueError(
                f"encoder_out shape {encoder_out.shape} != "
                f"{(num_frames, params.paramization.head_input_dim)}"
            )
        frame_logits = encoder_out @ params.weights + params.logits[None, :]
        z = frame_logits[:, slots]
    else:
        z = np.broadcast_to(params.logits[slots], (num_frames, len(chain))).copy()
    return TransitionField(log_forward=log_sigmoid(z), log_loop=log_sigmoid(-z))


def accumulate_grad(
    params: TransitionParams,
    chain: StateChain,
    xi_loop: np.ndarray,
    xi_fwd: np.ndarray,
    tm_scale: float,
    encoder_out: np.ndarray | None = None,
) -> TransitionGrads:
    """Loss gradient for the transition parameters from pairwise occupancies.

    Per logit z with p_F = sigmoid(z), the scaled likelihood contributes
    ``tm_scale * (xi_fwd * (1 - p_F) - xi_loop * p_F)`` summed over the
    frames and chain positions the slot covers; the returned values carry
    the minus sign of the minimization convention.  ``fixed`` kinds get
    zeros so no optimizer can move them.
    """
    slots = slots_for_chain(params.paramization, params.table, chain)
    n = params.table.num_slots
    if not params.paramization.trainable:
        return TransitionGrads(d_logits=np.zeros(n))

    T = xi_loop.shape[0] + 1
    if xi_loop.shape != (T - 1, len(chain)) or xi_fwd.shape != (T - 1, len(chain)):
        raise ValueError("pairwise occupancies do not match the chain")

    if not params.paramization.input_dependent:
        p_fwd = sigmoid(params.logits)[slots]  # (S,)
        per_state = xi_fwd.sum(axis=0) * (1.0 - p_fwd) - xi_loop.sum(axis=0) * p_fwd
        d_logits = np.zeros(n)
        np.add.at(d_logits, slots, -tm_scale * per_state)
        return TransitionGrads(d_logits=d_logits)

    if encoder_out is None:
        raise ValueError("full_input requires encoder_out")
    encoder_out = np.asarray(encoder_out, dtype=np.float64)
    frame_logits = encoder_out @ params.weights + params.logits[None, :]
    p_fwd = sigmoid(frame_logits[:, slots])  # (T, S)
    # xi row t describes the transition into frame t+1, which consumed the
    # field (hence the logits) of frame t+1
    per_cell = np.zeros((T, len(chain)))
    per_cell[1:] = xi_fwd * (1.0 - p_fwd[1:]) - xi_loop * p_fwd[1:]
    d_frame_logits = np.zeros((T, n))
    np.add.at(d_frame_logits.T, slots, -tm_scale * per_cell.T)
    return TransitionGrads(
        d_logits=d_frame_logits.sum(axis=0),
        d_weights=encoder_out.T @ d_frame_logits,
        d_encoder_out=d_frame_logits @ params.weights.T,
    )
