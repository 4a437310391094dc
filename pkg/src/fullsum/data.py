"""Corpus formats and the synthetic generator.

A corpus directory holds:

* ``labels.txt`` — one label token per line, line number = label id; the
  silence token ``sil`` must be present.
* ``manifest.tsv`` — one utterance per line: utt_id, feature path relative
  to the directory, space-separated label tokens (no silence).
* one feature file per utterance (binary, see read/write_features).
* optionally ``ref_align.tsv`` with ground-truth alignments.

The synthetic generator samples utterances from a known linear HMM with
geometric state durations and isotropic Gaussian emissions, so alignment
quality can be measured against an exact reference.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import Alignment, write_alignments
from .topology import LabelInventory, StateChain, expand_labels

FEATURE_MAGIC = b"FSF1"
SILENCE_TOKEN = "sil"
MANIFEST_NAME = "manifest.tsv"
LABELS_NAME = "labels.txt"
REF_ALIGN_NAME = "ref_align.tsv"


def write_features(path, matrix: np.ndarray) -> None:
    """Binary feature file: magic ``FSF1``, uint32 T and D (little-endian),
    then T*D float32 values row-major."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2:
        raise ValueError("feature matrix must be 2-D")
    T, D = matrix.shape
    if T == 0 or D == 0:
        raise ValueError("feature matrix must be non-empty")
    if np.isnan(matrix).any():
        raise ValueError("feature matrix contains NaN")
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", T, D))
        f.write(matrix.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    T, D = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * T * D
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    matrix = np.frombuffer(raw, dtype="<f4", offset=12).reshape(T, D)
    if np.isnan(matrix).any():
        raise ValueError(f"{path}: NaN in feature data")
    return matrix.astype(np.float64)


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    feature_path: str
    labels: tuple[str, ...]


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise ValueError(f"duplicate utterance id {e.utt_id!r}")
            seen.add(e.utt_id)

    def __len__(self) -> int:
        return len(self.entries)


def write_manifest(path, manifest: CorpusManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            f.write(f"{e.utt_id}\t{e.feature_path}\t{' '.join(e.labels)}\n")


def read_manifest(path, check_files: bool = True) -> CorpusManifest:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 tab-separated fields")
            utt_id, feature_path, label_str = parts
            if check_files and not (path.parent / feature_path).exists():
                raise FileNotFoundError(f"{path}:{line_no}: missing feature file {feature_path}")
            entries.append(
                ManifestEntry(utt_id=utt_id, feature_path=feature_path, labels=tuple(label_str.split()))
            )
    return CorpusManifest(entries=entries)


def write_label_table(path, names: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for name in names:
            f.write(name + "\n")


def read_label_table(path) -> list[str]:
    names = [line.rstrip("\n") for line in open(path, encoding="utf-8") if line.strip()]
    if SILENCE_TOKEN not in names:
        raise ValueError(f"{path}: label table lacks the silence token {SILENCE_TOKEN!r}")
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate label tokens")
    return names


@dataclass
class Utterance:
    """One loaded corpus entry with label ids resolved."""

    utt_id: str
    features: np.ndarray     # (T, D)
    labels: list[int]        # silence-free label ids
    chain: StateChain


@dataclass
class Corpus:
    inventory: LabelInventory
    utterances: list[Utterance]

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def feature_dim(self) -> int:
        return self.utterances[0].features.shape[1]


def load_corpus(
    corpus_dir,
    substates_per_speech_label: int = 3,
    substates_for_silence: int = 1,
) -> Corpus:
    """Load manifest, label table and all feature files of a corpus
    directory; chains are expanded with mandatory silence at both ends."""
    corpus_dir = Path(corpus_dir)
    names = read_label_table(corpus_dir / LABELS_NAME)
    inventory = LabelInventory(
        n_labels=len(names),
        silence_id=names.index(SILENCE_TOKEN),
        substates_per_speech_label=substates_per_speech_label,
        substates_for_silence=substates_for_silence,
        names=tuple(names),
    )
    name_to_id = {n: i for i, n in enumerate(names)}
    manifest = read_manifest(corpus_dir / MANIFEST_NAME)
    utterances = []
    for e in manifest.entries:
        try:
            labels = [name_to_id[tok] for tok in e.labels]
        except KeyError as exc:
            raise ValueError(f"utterance {e.utt_id}: unknown label token {exc.args[0]!r}") from None
        chain = expand_labels(labels, inventory)
        features = read_features(corpus_dir / e.feature_path)
        utterances.append(Utterance(utt_id=e.utt_id, features=features, labels=labels, chain=chain))
    return Corpus(inventory=inventory, utterances=utterances)


@dataclass(frozen=True)
class GenerativeSpec:
    """Ground truth for synthetic corpora.

    Emission means are per (label, substate); emissions are isotropic
    Gaussians around them.  Transition truth uses the speech/silence slot
    structure.  Utterance length is controlled by the label-count bounds and
    capped in frames by ``max_frames`` via rejection.
    """

    inventory: LabelInventory
    means: np.ndarray              # (n_labels, max_substates, dim)
    std: float
    p_forward_speech: float
    p_forward_silence: float
    min_labels: int
    max_labels: int
    max_frames: int
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.p_forward_speech < 1.0 and 0.0 < self.p_forward_silence < 1.0):
            raise ValueError("true forward probabilities must lie in (0, 1)")
        if self.std <= 0:
            raise ValueError("emission std must be > 0")
        if not 1 <= self.min_labels <= self.max_labels:
            raise ValueError("need 1 <= min_labels <= max_labels")
        max_sub = max(
            self.inventory.substates_per_speech_label, self.inventory.substates_for_silence
        )
        if self.means.shape != (self.inventory.n_labels, max_sub, self.means.shape[2]):
            raise ValueError("means must be (n_labels, max_substates, dim)")

    @property
    def feature_dim(self) -> int:
        return self.means.shape[2]

    def p_forward_of(self, is_silence: bool) -> float:
        return self.p_forward_silence if is_silence else self.p_forward_speech


def make_generative_spec(
    n_speech_labels: int,
    feature_dim: int,
    separation: float = 2.0,
    std: float = 1.0,
    p_forward_speech: float = 1.0 / 3.0,
    p_forward_silence: float = 1.0 / 40.0,
    min_labels: int = 2,
    max_labels: int = 6,
    max_frames: int = 400,
    substates_per_speech_label: int = 3,
    substates_for_silence: int = 1,
    seed: int = 0,
) -> GenerativeSpec:
    """Construct a spec with seeded random emission means.

    Means are drawn standard-normal and scaled to ``separation``; the ratio
    ``separation / std`` dials how separable the classes are.
    """
    names = (SILENCE_TOKEN,) + tuple(chr(ord("a") + i) if n_speech_labels <= 26 else f"p{i}"
                                     for i in range(n_speech_labels))
    inventory = LabelInventory(
        n_labels=n_speech_labels + 1,
        silence_id=0,
        substates_per_speech_label=substates_per_speech_label,
        substates_for_silence=substates_for_silence,
        names=names,
    )
    rng = np.random.default_rng(seed)
    max_sub = max(substates_per_speech_label, substates_for_silence)
    means = rng.standard_normal((inventory.n_labels, max_sub, feature_dim)) * separation
    return GenerativeSpec(
        inventory=inventory,
        means=means,
        std=std,
        p_forward_speech=p_forward_speech,
        p_forward_silence=p_forward_silence,
        min_labels=min_labels,
        max_labels=max_labels,
        max_frames=max_frames,
        seed=seed,
    )


def sample_state_path(spec: GenerativeSpec, chain: StateChain, rng: np.random.Generator) -> np.ndarray:
    """Monotone 0-based state path with geometric durations.

    The utterance ends when the final state takes its forward (exit)
    transition; paths that fail to leave the last state within
    ``max_frames`` are rejected and resampled, so accepted paths are exactly
    distributed conditional on fitting the cap.
    """
    S = len(chain)
    p_fwd = np.array([spec.p_forward_of(bool(sil)) for sil in chain.is_silence])
    while True:
        path = []
        s = 0
        for _ in range(spec.max_frames):
            path.append(s)
            if rng.random() < p_fwd[s]:
                s += 1
                if s == S:
                    return np.asarray(path, dtype=np.int64)
        # never exited the final state in time; resample
        continue


def synth_corpus(spec: GenerativeSpec, out_dir, n_utterances: int) -> Corpus:
    """Generate a corpus directory with features, manifest, label table and
    ground-truth alignments; fully determined by the spec's seed."""
    if n_utterances < 1:
        raise ValueError("need at least one utterance")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inv = spec.inventory
    names = [inv.name_of(k) for k in range(inv.n_labels)]
    speech = inv.speech_labels

    entries = []
    ref_alignments = []
    utterances = []
    for i in range(n_utterances):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(i,)))
        n_labels = int(rng.integers(spec.min_labels, spec.max_labels + 1))
        labels = [int(speech[j]) for j in rng.integers(0, len(speech), size=n_labels)]
        chain = expand_labels(labels, inv)
        path = sample_state_path(spec, chain, rng)
        locs = spec.means[chain.label_id[path], chain.substate[path]]
        features = locs + rng.standard_normal(locs.shape) * spec.std

        utt_id = f"utt{i:04d}"
        feature_path = f"{utt_id}.fsf"
        write_features(out_dir / feature_path, features)
        entries.append(
            ManifestEntry(
                utt_id=utt_id,
                feature_path=feature_path,
                labels=tuple(names[k] for k in labels),
            )
        )
        ref_alignments.append(Alignment.from_path(utt_id, path, chain))
        utterances.append(
            Utterance(utt_id=utt_id, features=features, labels=labels, chain=chain)
        )

    write_label_table(out_dir / LABELS_NAME, names)
    write_manifest(out_dir / MANIFEST_NAME, CorpusManifest(entries=entries))
    write_alignments(out_dir / REF_ALIGN_NAME, ref_alignments, names)
    return Corpus(inventory=inv, utterances=utterances)
