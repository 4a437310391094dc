"""Tests for forced alignment and the time-stamp-error metric: Viterbi
against path enumeration, TSE hand cases and pseudometric properties, and
the alignment file round trip."""

import numpy as np
import pytest

from fullsum.alignment import (
    FRAME_SHIFT_MS,
    Alignment,
    corpus_tse,
    dump_soft_alignment,
    read_alignments,
    remap_alignment_labels,
    tse,
    viterbi_align,
    write_alignments,
)
from fullsum.lattice import (
    InfeasibleError,
    Scales,
    TransitionField,
    forward_backward,
    iter_monotone_paths,
)
from fullsum.topology import LabelInventory, StateChain, expand_labels


def single_state_chain(labels):
    """Chain with one state per label, no silence."""
    return StateChain.from_blocks([(int(lab), 1, False) for lab in labels])


def random_monotone_path(rng, num_frames, num_states):
    """A path visiting all states in order, advancing at random frames."""
    advance_at = rng.choice(np.arange(1, num_frames), size=num_states - 1, replace=False)
    path = np.zeros(num_frames, dtype=np.int64)
    for t in sorted(advance_at):
        path[t:] += 1
    return path


def alignment_from_boundaries(utt_id, labels, starts, num_frames):
    """Alignment over single-state labels; ``starts[k]`` is the first frame
    of segment k (``starts[0]`` must be 0)."""
    bounds = list(starts) + [num_frames]
    path = np.concatenate(
        [np.full(bounds[k + 1] - bounds[k], k) for k in range(len(starts))]
    )
    return Alignment.from_path(utt_id, path, single_state_chain(labels))


def random_instance(rng, max_frames=8, max_states=5):
    T = int(rng.integers(1, max_frames + 1))
    S = int(rng.integers(1, min(T, max_states) + 1))
    log_phi = rng.standard_normal((T, S))
    field = TransitionField(
        log_forward=rng.standard_normal((T, S)),
        log_loop=rng.standard_normal((T, S)),
    )
    scales = Scales(lpm_scale=float(rng.uniform(0, 1.5)), tm_scale=float(rng.uniform(0, 1.5)))
    return log_phi, field, scales


def path_score(path, log_phi, field, scales, log_prior=None, prior_scale=0.0):
    """Independent scorer: sum the scaled emission and transition terms
    along one explicit path."""
    total = scales.lpm_scale * log_phi[0][path[0]]
    if log_prior is not None:
        total -= prior_scale * log_prior[path[0]]
    for t in range(1, len(path)):
        s, prev = path[t], path[t - 1]
        total += scales.lpm_scale * log_phi[t][s]
        if log_prior is not None:
            total -= prior_scale * log_prior[s]
        if s == prev:
            total += scales.tm_scale * field.log_loop[t][s]
        else:
            total += scales.tm_scale * field.log_forward[t][prev]
    return total


class TestAlignmentStructure:
    def test_segments_inclusive_bounds(self):
        """Consecutive frames of one block collapse to a (label, start, end)
        segment with inclusive frame indices."""
        ali = alignment_from_boundaries("u", [7, 4, 9], [0, 10, 20], 30)
        segs = ali.segments
        assert [(s.label_id, s.start, s.end) for s in segs] == [
            (7, 0, 9),
            (4, 10, 19),
            (9, 20, 29),
        ]

    def test_segments_tile_the_utterance(self):
        """Segments cover 0..T-1 without gaps or overlaps on random paths."""
        rng = np.random.default_rng(0)
        for _ in range(50):
            S = int(rng.integers(1, 6))
            T = int(rng.integers(S, S + 10))
            chain = single_state_chain(rng.integers(0, 5, size=S))
            ali = Alignment.from_path("u", random_monotone_path(rng, T, S), chain)
            segs = ali.segments
            assert segs[0].start == 0
            assert segs[-1].end == T - 1
            for a, b in zip(segs, segs[1:]):
                assert b.start == a.end + 1

    def test_adjacent_identical_labels_stay_separate_segments(self):
        """Two chain blocks with the same label never merge."""
        chain = single_state_chain([3, 3])
        ali = Alignment.from_path("u", np.asarray([0, 0, 1, 1, 1]), chain)
        assert [(s.label_id, s.start, s.end) for s in ali.segments] == [
            (3, 0, 1),
            (3, 2, 4),
        ]

    def test_non_monotone_path_rejected(self):
        """State positions must start at 1 and advance by at most one."""
        chain = single_state_chain([1, 2, 3])
        with pytest.raises(ValueError):
            Alignment.from_path("u", np.asarray([0, 2, 2]), chain)
        with pytest.raises(ValueError):
            Alignment.from_path("u", np.asarray([1, 1, 2]), chain)
        with pytest.raises(ValueError):
            Alignment.from_path("u", np.asarray([0, 1, 0]), chain)

    def test_alignment_arrays_write_protected(self):
        ali = alignment_from_boundaries("u", [1, 2], [0, 2], 4)
        with pytest.raises(ValueError):
            ali.state_pos[0] = 5


class TestTse:
    def test_identical_alignments_have_zero_error(self):
        ali = alignment_from_boundaries("u", [1, 2, 3], [0, 4, 11], 20)
        assert tse(ali, ali) == 0.0

    def test_three_segment_hand_case(self):
        """Shifting both interior boundaries of a 3-segment alignment by +2
        frames (utterance edges fixed) displaces the segments by 1, 2, and 1
        frames, so the mean error is 4/3."""
        ref = alignment_from_boundaries("u", [1, 2, 3], [0, 10, 20], 30)
        hyp = alignment_from_boundaries("u", [1, 2, 3], [0, 12, 22], 30)
        np.testing.assert_allclose(tse(hyp, ref), 4.0 / 3.0, rtol=0, atol=0)

    def test_single_boundary_shift(self):
        """One boundary moved by d frames spreads d/2 over each of the two
        adjacent segments."""
        ref = alignment_from_boundaries("u", [1, 2], [0, 5], 12)
        hyp = alignment_from_boundaries("u", [1, 2], [0, 8], 12)
        np.testing.assert_allclose(tse(hyp, ref), 1.5)

    def test_symmetry(self):
        """tse(a, b) == tse(b, a) on random comparable alignments."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            S = int(rng.integers(1, 6))
            T = int(rng.integers(S, S + 12))
            chain = single_state_chain(np.arange(S))
            a = Alignment.from_path("u", random_monotone_path(rng, T, S), chain)
            b = Alignment.from_path("u", random_monotone_path(rng, T, S), chain)
            assert tse(a, b) == tse(b, a)

    def test_triangle_inequality(self):
        """tse(a, c) <= tse(a, b) + tse(b, c) on random comparable
        alignments: every per-segment displacement obeys it, hence the mean
        does."""
        rng = np.random.default_rng(2)
        for _ in range(50):
            S = int(rng.integers(1, 6))
            T = int(rng.integers(S, S + 12))
            chain = single_state_chain(np.arange(S))
            a, b, c = (
                Alignment.from_path("u", random_monotone_path(rng, T, S), chain)
                for _ in range(3)
            )
            assert tse(a, c) <= tse(a, b) + tse(b, c) + 1e-12

    def test_mismatched_labels_raise(self):
        """Different segment label sequences are not comparable."""
        ref = alignment_from_boundaries("u", [1, 2], [0, 5], 10)
        hyp = alignment_from_boundaries("u", [1, 3], [0, 5], 10)
        with pytest.raises(ValueError):
            tse(hyp, ref)

    def test_segment_count_mismatch_raises(self):
        """The same labels split into a different number of segments do not
        compare either."""
        ref = alignment_from_boundaries("u", [1], [0], 10)
        hyp = alignment_from_boundaries("u", [1, 1], [0, 5], 10)
        with pytest.raises(ValueError):
            tse(hyp, ref)

    def test_corpus_aggregation_is_segment_weighted(self):
        """The corpus value averages displacements over segments, not over
        utterances: a 1-segment utterance with error 3 and a 3-segment
        utterance with error 0 give 3/4, not 3/2."""
        ref = {
            "a": alignment_from_boundaries("a", [1], [0], 10),
            "b": alignment_from_boundaries("b", [1, 2, 3], [0, 4, 8], 12),
        }
        hyp = {
            "a": alignment_from_boundaries("a", [1], [0], 16),  # end off by 6 -> 3
            "b": ref["b"],
        }
        report = corpus_tse(hyp, ref)
        np.testing.assert_allclose(report.tse_frames, 3.0 / 4.0)
        assert report.num_segments == 4
        assert report.num_compared == 2
        assert report.num_skipped == 0

    def test_corpus_skips_missing_and_mismatched(self):
        """Utterances absent from the hypothesis side or with a different
        pronunciation are counted as skipped, not errors."""
        ref = {
            "a": alignment_from_boundaries("a", [1, 2], [0, 5], 10),
            "b": alignment_from_boundaries("b", [1, 2], [0, 5], 10),
            "c": alignment_from_boundaries("c", [1, 2], [0, 5], 10),
        }
        hyp = {
            "a": ref["a"],
            "b": alignment_from_boundaries("b", [1, 3], [0, 5], 10),
        }
        report = corpus_tse(hyp, ref)
        assert report.num_compared == 1
        assert report.num_skipped == 2
        assert report.tse_frames == 0.0

    def test_milliseconds_use_ten_ms_frames(self):
        ref = alignment_from_boundaries("u", [1, 2, 3], [0, 10, 20], 30)
        hyp = alignment_from_boundaries("u", [1, 2, 3], [0, 12, 22], 30)
        report = corpus_tse({"u": hyp}, {"u": ref})
        np.testing.assert_allclose(report.tse_ms, report.tse_frames * FRAME_SHIFT_MS)
        np.testing.assert_allclose(report.tse_ms, 40.0 / 3.0)

    def test_empty_comparison_reports_zero(self):
        report = corpus_tse({}, {})
        assert report.tse_frames == 0.0
        assert report.num_segments == 0


class TestViterbi:
    def test_matches_exhaustive_search(self):
        """The returned score equals the maximum over all enumerated paths,
        and the returned path attains it."""
        rng = np.random.default_rng(3)
        for _ in range(120):
            log_phi, field, scales = random_instance(rng)
            T, S = log_phi.shape
            chain = single_state_chain(np.arange(1, S + 1))
            ali, score = viterbi_align(log_phi, field, scales, chain, utt_id="u")
            best = max(
                path_score(p, log_phi, field, scales)
                for p in iter_monotone_paths(T, S)
            )
            np.testing.assert_allclose(score, best, rtol=0, atol=1e-10)
            np.testing.assert_allclose(
                path_score(ali.state_pos - 1, log_phi, field, scales),
                score,
                rtol=0,
                atol=1e-10,
            )

    def test_score_never_exceeds_full_sum(self):
        """max over paths <= log-sum over paths, on every instance."""
        rng = np.random.default_rng(4)
        for _ in range(100):
            log_phi, field, scales = random_instance(rng)
            chain = single_state_chain(np.arange(log_phi.shape[1]))
            _, score = viterbi_align(log_phi, field, scales, chain)
            stats = forward_backward(log_phi, field, scales)
            assert score <= stats.log_likelihood + 1e-9

    def test_ties_resolve_to_loop(self):
        """With completely flat scores every path ties; tie-to-loop makes
        the backtrace advance as early as possible, giving path min(t, S-1)."""
        for T, S in [(3, 2), (6, 3), (7, 1), (5, 5)]:
            log_phi = np.zeros((T, S))
            field = TransitionField.constant(T, S, np.log(0.5))
            ali, _ = viterbi_align(log_phi, field, Scales(1.0, 1.0),
                                   single_state_chain(np.arange(S)))
            expected = np.minimum(np.arange(T), S - 1)
            np.testing.assert_array_equal(ali.state_pos - 1, expected)

    def test_invariant_under_constant_emission_shift(self):
        """Adding a constant to every log_phi entry never changes the best
        path, and shifts its score by lpm_scale * T * c."""
        rng = np.random.default_rng(5)
        for _ in range(30):
            log_phi, field, scales = random_instance(rng)
            T, S = log_phi.shape
            chain = single_state_chain(np.arange(S))
            shift = float(rng.uniform(-5, 5))
            base, base_score = viterbi_align(log_phi, field, scales, chain)
            moved, moved_score = viterbi_align(log_phi + shift, field, scales, chain)
            np.testing.assert_array_equal(base.state_pos, moved.state_pos)
            np.testing.assert_allclose(
                moved_score, base_score + scales.lpm_scale * T * shift, atol=1e-9
            )

    def test_prior_subtraction_can_move_boundaries(self):
        """Dividing by a strong class prior boosts rare positions: emissions
        alone keep the path in position 0 as long as possible, the prior
        pulls it into the rare position 1 immediately."""
        log_phi = np.zeros((4, 2))
        log_phi[:, 1] = -5.0
        field = TransitionField.constant(4, 2, np.log(0.5))
        chain = single_state_chain([1, 2])
        scales = Scales(1.0, 1.0)
        plain, _ = viterbi_align(log_phi, field, scales, chain)
        np.testing.assert_array_equal(plain.state_pos - 1, [0, 0, 0, 1])
        log_prior = np.log(np.asarray([0.999, 1e-4]))
        boosted, _ = viterbi_align(
            log_phi, field, scales, chain, log_prior=log_prior, prior_scale=1.0
        )
        np.testing.assert_array_equal(boosted.state_pos - 1, [0, 1, 1, 1])

    def test_prior_score_matches_path_scorer(self):
        """With a prior the returned score still equals the independent
        path scorer's value for the returned path."""
        rng = np.random.default_rng(6)
        for _ in range(30):
            log_phi, field, scales = random_instance(rng)
            S = log_phi.shape[1]
            chain = single_state_chain(np.arange(S))
            log_prior = np.log(rng.uniform(0.05, 1.0, size=S))
            ali, score = viterbi_align(
                log_phi, field, scales, chain, log_prior=log_prior, prior_scale=0.7
            )
            np.testing.assert_allclose(
                score,
                path_score(ali.state_pos - 1, log_phi, field, scales,
                           log_prior=log_prior, prior_scale=0.7),
                atol=1e-10,
            )

    def test_validation_errors(self):
        chain = single_state_chain([1, 2, 3])
        field = TransitionField.constant(5, 3, np.log(0.5))
        with pytest.raises(InfeasibleError):
            viterbi_align(np.zeros((2, 3)), TransitionField.constant(2, 3, 0.0),
                          Scales(), chain)
        with pytest.raises(ValueError):
            viterbi_align(np.zeros((5, 2)), field, Scales(), chain)
        with pytest.raises(ValueError):
            viterbi_align(np.zeros((5, 3)), field, Scales(), chain,
                          log_prior=np.zeros(2), prior_scale=1.0)
        with pytest.raises(ValueError):
            viterbi_align(np.zeros((5, 3)), field, Scales(), chain,
                          log_prior=np.zeros(3), prior_scale=-0.5)


class TestAlignmentFiles:
    def make_alignment(self, rng, utt_id, inventory, labels, num_frames):
        chain = expand_labels(labels, inventory)
        path = random_monotone_path(rng, num_frames, len(chain))
        return Alignment.from_path(utt_id, path, chain), chain

    def test_round_trip(self, tmp_path):
        """Writing and re-reading preserves frames, positions, substates,
        and the per-frame label names."""
        rng = np.random.default_rng(7)
        inv = LabelInventory(n_labels=3, names=("sil", "ah", "bee"))
        path = tmp_path / "ali.tsv"
        a1, _ = self.make_alignment(rng, "utt-1", inv, [1, 2, 1], 18)
        a2, _ = self.make_alignment(rng, "utt-2", inv, [2], 9)
        names = ["sil", "ah", "bee"]
        write_alignments(path, [a1, a2], names)
        loaded, loaded_names = read_alignments(path)
        assert set(loaded) == {"utt-1", "utt-2"}
        for orig in (a1, a2):
            back = loaded[orig.utt_id]
            np.testing.assert_array_equal(back.state_pos, orig.state_pos)
            np.testing.assert_array_equal(back.substate, orig.substate)
            np.testing.assert_array_equal(back.block, orig.block)
            assert [loaded_names[i] for i in back.label_id] == \
                   [names[i] for i in orig.label_id]

    def test_round_trip_preserves_adjacent_identical_blocks(self, tmp_path):
        """Two consecutive instances of the same label survive the file
        format as distinct segments."""
        rng = np.random.default_rng(8)
        inv = LabelInventory(n_labels=2, names=("sil", "ah"))
        ali, _ = self.make_alignment(rng, "u", inv, [1, 1], 14)
        path = tmp_path / "ali.tsv"
        write_alignments(path, [ali], ["sil", "ah"])
        loaded, _ = read_alignments(path)
        back = loaded["u"]
        assert len(back.segments) == len(ali.segments) == 4
        assert tse(back, ali) == 0.0

    def test_rejects_bad_header_and_rows(self, tmp_path):
        bad_header = tmp_path / "h.tsv"
        bad_header.write_text("utt\tframe\n")
        with pytest.raises(ValueError):
            read_alignments(bad_header)

        bad_cols = tmp_path / "c.tsv"
        bad_cols.write_text("utt_id\tframe\tstate_pos\tlabel\tsubstate\nu\t0\t1\n")
        with pytest.raises(ValueError):
            read_alignments(bad_cols)

        gap = tmp_path / "g.tsv"
        gap.write_text(
            "utt_id\tframe\tstate_pos\tlabel\tsubstate\n"
            "u\t0\t1\tah\t0\n"
            "u\t2\t1\tah\t0\n"
        )
        with pytest.raises(ValueError):
            read_alignments(gap)

    def test_remap_onto_target_names(self, tmp_path):
        """Label ids from a file follow appearance order; remapping onto the
        model's name table restores comparability with model alignments."""
        ref = alignment_from_boundaries("u", [2, 1], [0, 5], 10)  # bee then ah
        names = ["sil", "ah", "bee"]
        path = tmp_path / "ali.tsv"
        write_alignments(path, [ref], names)
        loaded, loaded_names = read_alignments(path)
        assert loaded_names == ["bee", "ah"]  # appearance order
        remapped = remap_alignment_labels(loaded, loaded_names, names)
        assert tse(remapped["u"], ref) == 0.0

    def test_remap_keeps_unknown_labels_incomparable(self):
        """A token missing from the target table gets a fresh id, so the
        pair is skipped rather than silently matched."""
        hyp = {"u": alignment_from_boundaries("u", [0], [0], 5)}
        remapped = remap_alignment_labels(hyp, ["zz"], ["sil", "ah"])
        ref = {"u": alignment_from_boundaries("u", [1], [0], 5)}
        report = corpus_tse(remapped, ref)
        assert report.num_skipped == 1
        assert report.num_compared == 0


class TestSoftAlignmentDump:
    def test_dense_dump_shape_and_values(self):
        """One row per lattice cell, values rendered exactly."""
        gamma = np.asarray([[0.25, 0.75], [0.5, 0.5], [0.0, 1.0]])
        text = dump_soft_alignment(gamma)
        lines = text.strip().split("\n")
        assert lines[0] == "frame\tstate_pos\tgamma"
        assert len(lines) == 1 + gamma.size
        parsed = np.zeros_like(gamma)
        for line in lines[1:]:
            t, s, g = line.split("\t")
            parsed[int(t)][int(s) - 1] = float(g)
        np.testing.assert_allclose(parsed, gamma, atol=1e-9)

    def test_diagonal_case_dumps_unit_mass(self):
        """When frames equal states the only path is the diagonal: T rows
        carry gamma == 1, everything else is 0."""
        T = 4
        stats = forward_backward(
            np.zeros((T, T)), TransitionField.constant(T, T, np.log(0.5)), Scales(1, 1)
        )
        text = dump_soft_alignment(stats.gamma)
        rows = [line.split("\t") for line in text.strip().split("\n")[1:]]
        assert len(rows) == T * T
        ones = [(int(t), int(s)) for t, s, g in rows if float(g) == 1.0]
        assert ones == [(t, t + 1) for t in range(T)]
        per_frame = {}
        for t, s, g in rows:
            per_frame[int(t)] = per_frame.get(int(t), 0.0) + float(g)
        np.testing.assert_allclose(list(per_frame.values()), 1.0)
