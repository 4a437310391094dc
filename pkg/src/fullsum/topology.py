"""Linear HMM state chains over expanded label sequences.

Every utterance is modelled by a left-to-right chain: each speech label
expands into a fixed number of consecutive substates (three in the standard
tripartite layout), silence into a single state.  Only self-loops and
single-step forward transitions exist, so a chain of length S is feasible
for T frames exactly when T >= S.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SILENCE_MODE_NONE = "none"
SILENCE_MODE_MANDATORY_ENDS = "mandatory_ends"


@dataclass(frozen=True)
class LabelInventory:
    """The label set of a corpus plus its substate layout.

    Labels are dense integers ``0 .. n_labels-1`` so they can index rows of
    per-frame posterior matrices directly.  ``names`` is optional display
    metadata (same order as the ids).
    """

    n_labels: int
    silence_id: int = 0
    substates_per_speech_label: int = 3
    substates_for_silence: int = 1
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_labels < 1:
            raise ValueError("inventory needs at least one label")
        if not 0 <= self.silence_id < self.n_labels:
            raise ValueError(f"silence_id {self.silence_id} outside 0..{self.n_labels - 1}")
        if self.substates_per_speech_label < 1 or self.substates_for_silence < 1:
            raise ValueError("substate counts must be >= 1")
        if self.names is not None and len(self.names) != self.n_labels:
            raise ValueError("names must match n_labels")

    @property
    def labels(self) -> range:
        return range(self.n_labels)

    @property
    def speech_labels(self) -> list[int]:
        return [k for k in range(self.n_labels) if k != self.silence_id]

    def substates_of(self, label_id: int) -> int:
        if label_id == self.silence_id:
            return self.substates_for_silence
        return self.substates_per_speech_label

    def name_of(self, label_id: int) -> str:
        if self.names is not None:
            return self.names[label_id]
        return "sil" if label_id == self.silence_id else f"l{label_id}"

    @property
    def output_offsets(self) -> np.ndarray:
        """Start of each label's block in the dense (label, substate)
        classifier output layout."""
        counts = [self.substates_of(k) for k in range(self.n_labels)]
        return np.concatenate(([0], np.cumsum(counts)[:-1])).astype(np.int64)

    @property
    def n_outputs(self) -> int:
        return sum(self.substates_of(k) for k in range(self.n_labels))

    def output_index(self, label_id, substate):
        """Dense classifier class index; accepts scalars or arrays."""
        return self.output_offsets[label_id] + np.asarray(substate)

    def output_names(self) -> list[str]:
        out = []
        for k in range(self.n_labels):
            for j in range(self.substates_of(k)):
                name = self.name_of(k)
                out.append(name if self.substates_of(k) == 1 else f"{name}.{j}")
        return out


@dataclass(frozen=True)
class StateChain:
    """Expanded state sequence of one utterance.

    Position arrays are indexed 0..S-1; the public contract speaks of
    positions 1..S, which is what `positions` exposes.  ``block`` numbers
    the expanded label instances, so two adjacent identical labels stay
    distinguishable after expansion.
    """

    label_id: np.ndarray      # (S,) int
    substate: np.ndarray      # (S,) int
    is_silence: np.ndarray    # (S,) bool
    block: np.ndarray         # (S,) int, 0-based expanded-label index

    def __post_init__(self):
        for arr in (self.label_id, self.substate, self.is_silence, self.block):
            arr.setflags(write=False)
        if not (len(self.label_id) == len(self.substate) == len(self.is_silence) == len(self.block)):
            raise ValueError("chain arrays must have equal length")
        if len(self.label_id) == 0:
            raise ValueError("empty state chain")

    def __len__(self) -> int:
        return len(self.label_id)

    @property
    def num_states(self) -> int:
        return len(self.label_id)

    @property
    def positions(self) -> np.ndarray:
        """1-based chain positions."""
        return np.arange(1, len(self) + 1)

    def collapse(self) -> list[int]:
        """Label sequence recovered by merging each expanded block."""
        out = []
        for i in range(len(self)):
            if i == 0 or self.block[i] != self.block[i - 1]:
                out.append(int(self.label_id[i]))
        return out

    @staticmethod
    def from_blocks(blocks: list[tuple[int, int, bool]]) -> "StateChain":
        """Build a chain from (label_id, n_substates, is_silence) blocks."""
        label_id, substate, silence, block = [], [], [], []
        for b, (lab, n_sub, is_sil) in enumerate(blocks):
            if n_sub < 1:
                raise ValueError("block substate count must be >= 1")
            for j in range(n_sub):
                label_id.append(lab)
                substate.append(j)
                silence.append(is_sil)
                block.append(b)
        return StateChain(
            label_id=np.asarray(label_id, dtype=np.int64),
            substate=np.asarray(substate, dtype=np.int64),
            is_silence=np.asarray(silence, dtype=bool),
            block=np.asarray(block, dtype=np.int64),
        )


def expand_labels(
    labels, inventory: LabelInventory, silence_mode: str = SILENCE_MODE_MANDATORY_ENDS
) -> StateChain:
    """Expand a silence-free label sequence into its linear state chain.

    With ``mandatory_ends`` one silence block is prepended and one appended;
    with ``none`` the chain covers the labels only.  Silence never appears in
    the input; it is inserted here.
    """
    labels = [int(x) for x in labels]
    if not labels:
        raise ValueError("empty label sequence")
    if silence_mode not in (SILENCE_MODE_NONE, SILENCE_MODE_MANDATORY_ENDS):
        raise ValueError(f"unknown silence_mode {silence_mode!r}")
    for lab in labels:
        if not 0 <= lab < inventory.n_labels:
            raise ValueError(f"unknown label id {lab}")
        if lab == inventory.silence_id:
            raise ValueError("input labels must not contain silence")

    blocks: list[tuple[int, int, bool]] = []
    if silence_mode == SILENCE_MODE_MANDATORY_ENDS:
        blocks.append((inventory.silence_id, inventory.substates_for_silence, True))
    for lab in labels:
        blocks.append((lab, inventory.substates_per_speech_label, False))
    if silence_mode == SILENCE_MODE_MANDATORY_ENDS:
        blocks.append((inventory.silence_id, inventory.substates_for_silence, True))
    return StateChain.from_blocks(blocks)


def chain_feasible(chain: StateChain, num_frames: int) -> bool:
    """A loop/forward path from position 1 at t=1 to position S at t=T
    exists iff T >= S."""
    if num_frames < 0:
        raise ValueError("frame count must be >= 0")
    return num_frames >= len(chain)
