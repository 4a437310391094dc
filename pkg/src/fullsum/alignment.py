"""Viterbi forced alignment and the time-stamp-error (TSE) metric.

An alignment is a frame-synchronous labelling of one utterance by chain
positions.  Segments are derived, never stored: consecutive frames sharing
the same expanded-label block merge into one (label, start, end) interval
with inclusive frame bounds.

TSE between two alignments with identical label-segment sequences is the
mean over segments of (|start_hyp - start_ref| + |end_hyp - end_ref|) / 2,
in frames.  Pairs whose segment label sequences differ are not comparable;
the corpus-level wrapper skips and counts them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .lattice import NEG_INF, InfeasibleError, Scales, TransitionField
from .topology import StateChain

ALIGNMENT_HEADER = ["utt_id", "frame", "state_pos", "label", "substate"]
FRAME_SHIFT_MS = 10.0


@dataclass(frozen=True)
class Segment:
    label_id: int
    start: int  # first frame, 0-based
    end: int    # last frame, inclusive


@dataclass(frozen=True)
class Alignment:
    """Frame-level state assignment for one utterance."""

    utt_id: str
    state_pos: np.ndarray  # (T,) 1-based chain positions, non-decreasing, steps of <= 1
    label_id: np.ndarray   # (T,)
    substate: np.ndarray   # (T,)
    block: np.ndarray      # (T,) expanded-label instance per frame

    def __post_init__(self):
        for arr in (self.state_pos, self.label_id, self.substate, self.block):
            arr.setflags(write=False)
        sp = self.state_pos
        if len(sp) == 0:
            raise ValueError("empty alignment")
        steps = np.diff(sp)
        if sp[0] != 1 or np.any(steps < 0) or np.any(steps > 1):
            raise ValueError("state positions must start at 1 and advance by 0 or 1")

    @property
    def num_frames(self) -> int:
        return len(self.state_pos)

    @property
    def segments(self) -> list[Segment]:
        boundaries = np.flatnonzero(np.diff(self.block)) + 1
        starts = np.concatenate([[0], boundaries])
        ends = np.concatenate([boundaries - 1, [self.num_frames - 1]])
        return [
            Segment(label_id=int(self.label_id[s]), start=int(s), end=int(e))
            for s, e in zip(starts, ends)
        ]

    @staticmethod
    def from_path(utt_id: str, path: np.ndarray, chain: StateChain) -> "Alignment":
        """Alignment from a 0-based chain-position path."""
        path = np.asarray(path, dtype=np.int64)
        return Alignment(
            utt_id=utt_id,
            state_pos=path + 1,
            label_id=chain.label_id[path].copy(),
            substate=chain.substate[path].copy(),
            block=chain.block[path].copy(),
        )


def viterbi_align(
    log_phi: np.ndarray,
    field: TransitionField,
    scales: Scales,
    chain: StateChain,
    utt_id: str = "",
    log_prior: np.ndarray | None = None,
    prior_scale: float = 0.0,
) -> tuple[Alignment, float]:
    """Best monotone path under the scaled model, with optional prior removal.

    ``log_prior`` holds one log-prior per chain position, already gathered
    from whatever class inventory the caller scores with; the emission term
    per cell is ``lpm_scale * log_phi - prior_scale * log_prior``.
    Transitions are scaled as in the full-sum criterion.  Ties between
    looping and advancing go to the loop, which biases toward longer
    segments and makes results bit-reproducible.
    """
    log_phi = np.asarray(log_phi, dtype=np.float64)
    T, S = log_phi.shape
    if S != len(chain):
        raise ValueError("log_phi width does not match chain length")
    if T < S:
        raise InfeasibleError(f"no monotone path: T={T} < S={S}")
    if prior_scale < 0:
        raise ValueError("prior_scale must be >= 0")

    em = scales.lpm_scale * log_phi
    if log_prior is not None and prior_scale > 0:
        log_prior = np.asarray(log_prior, dtype=np.float64)
        if log_prior.shape != (S,):
            raise ValueError("log_prior must hold one value per chain position")
        em = em - prior_scale * log_prior[None, :]
    tr_loop = scales.tm_scale * field.log_loop
    tr_fwd = scales.tm_scale * field.log_forward

    score = np.full(S, NEG_INF)
    score[0] = em[0][0]
    came_from_prev = np.zeros((T, S), dtype=bool)
    for t in range(1, T):
        stay = score + tr_loop[t]
        advance = np.empty(S)
        advance[0] = NEG_INF
        advance[1:] = score[:-1] + tr_fwd[t][:-1]
        # tie goes to the loop: only a strictly better forward score switches
        take_fwd = advance > stay
        came_from_prev[t] = take_fwd
        score = em[t] + np.where(take_fwd, advance, stay)

    best_score = float(score[S - 1])
    path = np.empty(T, dtype=np.int64)
    s = S - 1
    for t in range(T - 1, -1, -1):
        path[t] = s
        if t > 0 and came_from_prev[t][s]:
            s -= 1
    return Alignment.from_path(utt_id, path, chain), best_score


def tse(hyp: Alignment, ref: Alignment) -> float:
    """Mean boundary displacement in frames between comparable alignments.

    Raises ``ValueError`` when the two segment label sequences differ
    (different pronunciation); corpus-level aggregation treats that as a
    skip, not a failure.
    """
    hyp_segments = hyp.segments
    ref_segments = ref.segments
    if [s.label_id for s in hyp_segments] != [s.label_id for s in ref_segments]:
        raise ValueError("segment label sequences differ; alignments not comparable")
    disp = [
        (abs(h.start - r.start) + abs(h.end - r.end)) / 2.0
        for h, r in zip(hyp_segments, ref_segments)
    ]
    return float(np.mean(disp))


@dataclass
class CorpusTse:
    tse_frames: float
    num_segments: int
    num_compared: int
    num_skipped: int

    @property
    def tse_ms(self) -> float:
        return self.tse_frames * FRAME_SHIFT_MS


def corpus_tse(hyp: dict[str, Alignment], ref: dict[str, Alignment]) -> CorpusTse:
    """Segment-weighted TSE over all utterances comparable in both sets.

    Utterances missing from either side or with mismatched pronunciations
    are skipped and counted.
    """
    total = 0.0
    n_segments = 0
    n_compared = 0
    n_skipped = 0
    for utt_id in ref:
        hyp_align = hyp.get(utt_id)
        if hyp_align is None:
            n_skipped += 1
            continue
        hyp_segs = hyp_align.segments
        ref_segs = ref[utt_id].segments
        if [s.label_id for s in hyp_segs] != [s.label_id for s in ref_segs]:
            n_skipped += 1
            continue
        for h, r in zip(hyp_segs, ref_segs):
            total += (abs(h.start - r.start) + abs(h.end - r.end)) / 2.0
        n_segments += len(ref_segs)
        n_compared += 1
    mean = total / n_segments if n_segments else 0.0
    return CorpusTse(
        tse_frames=mean,
        num_segments=n_segments,
        num_compared=n_compared,
        num_skipped=n_skipped,
    )


def write_alignments(path, alignments: list[Alignment], names: list[str]) -> None:
    """Write alignments as TSV with header utt_id/frame/state_pos/label/substate."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(ALIGNMENT_HEADER) + "\n")
        for ali in alignments:
            for t in range(ali.num_frames):
                f.write(
                    f"{ali.utt_id}\t{t}\t{ali.state_pos[t]}"
                    f"\t{names[ali.label_id[t]]}\t{ali.substate[t]}\n"
                )


def read_alignments(path) -> tuple[dict[str, Alignment], list[str]]:
    """Load an alignment TSV; label ids are assigned in first-appearance order.

    Returns the alignments keyed by utterance id plus the label-name table
    the ids refer to.  Block structure is recovered from the rows: a new
    expanded-label instance starts wherever the position advances into
    substate 0 (every block begins at substate 0).
    """
    path = Path(path)
    rows: dict[str, list[tuple[int, int, str, int]]] = {}
    names: list[str] = []
    name_to_id: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header != ALIGNMENT_HEADER:
            raise ValueError(f"{path}: bad alignment header {header}")
        for line_no, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{line_no}: expected 5 columns")
            utt_id, frame, state_pos, label, substate = parts
            if label not in name_to_id:
                name_to_id[label] = len(names)
                names.append(label)
            rows.setdefault(utt_id, []).append(
                (int(frame), int(state_pos), label, int(substate))
            )

    alignments: dict[str, Alignment] = {}
    for utt_id, utt_rows in rows.items():
        utt_rows.sort()
        frames = [r[0] for r in utt_rows]
        if frames != list(range(len(frames))):
            raise ValueError(f"{path}: utterance {utt_id} frames are not 0..T-1")
        state_pos = np.asarray([r[1] for r in utt_rows], dtype=np.int64)
        label_id = np.asarray([name_to_id[r[2]] for r in utt_rows], dtype=np.int64)
        substate = np.asarray([r[3] for r in utt_rows], dtype=np.int64)
        new_block = (np.diff(state_pos) > 0) & (substate[1:] == 0)
        block = np.concatenate([[0], np.cumsum(new_block)])
        alignments[utt_id] = Alignment(
            utt_id=utt_id,
            state_pos=state_pos,
            label_id=label_id,
            substate=substate,
            block=block.astype(np.int64),
        )
    return alignments, names


def remap_alignment_labels(
    alignments: dict[str, Alignment], names: list[str], target_names: list[str]
) -> dict[str, Alignment]:
    """Re-index alignment label ids onto another name table.

    Tokens absent from the target table are appended virtually (ids past the
    end), so mismatches surface as pronunciation differences instead of
    errors."""
    mapping = {}
    target_index = {name: i for i, name in enumerate(target_names)}
    next_id = len(target_names)
    for i, name in enumerate(names):
        if name in target_index:
            mapping[i] = target_index[name]
        else:
            mapping[i] = next_id
            next_id += 1
    lut = np.asarray([mapping[i] for i in range(len(names))], dtype=np.int64)
    out = {}
    for utt_id, ali in alignments.items():
        out[utt_id] = Alignment(
            utt_id=ali.utt_id,
            state_pos=ali.state_pos.copy(),
            label_id=lut[ali.label_id],
            substate=ali.substate.copy(),
            block=ali.block.copy(),
        )
    return out


def dump_soft_alignment(gamma: np.ndarray) -> str:
    """Render occupancies as plot-ready TSV text: one (frame, state_pos,
    gamma) row per lattice cell."""
    T, S = gamma.shape
    lines = ["frame\tstate_pos\tgamma"]
    for t in range(T):
        for s in range(S):
            lines.append(f"{t}\t{s + 1}\t{gamma[t][s]:.10g}")
    return "\n".join(lines) + "\n"
