"""Tests for label inventories and state-chain expansion."""

import numpy as np
import pytest

from fullsum.topology import (
    LabelInventory,
    StateChain,
    chain_feasible,
    expand_labels,
)


class TestLabelInventory:
    def test_substate_counts(self):
        inv = LabelInventory(n_labels=4, silence_id=0)
        assert inv.substates_of(0) == 1
        assert inv.substates_of(1) == 3
        assert inv.speech_labels == [1, 2, 3]

    def test_rejects_bad_silence_id(self):
        with pytest.raises(ValueError):
            LabelInventory(n_labels=2, silence_id=5)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            LabelInventory(n_labels=0)

    def test_output_layout_is_dense_and_complete(self):
        """Every (label, substate) pair gets a distinct class index and the
        indices cover 0..n_outputs-1."""
        inv = LabelInventory(n_labels=3, silence_id=0)
        assert inv.n_outputs == 1 + 3 + 3
        seen = set()
        for lab in range(inv.n_labels):
            for sub in range(inv.substates_of(lab)):
                seen.add(int(inv.output_index(lab, sub)))
        assert seen == set(range(inv.n_outputs))

    def test_output_index_vectorized_matches_scalar(self):
        inv = LabelInventory(n_labels=4, silence_id=2)
        labs = np.array([0, 1, 2, 3, 3])
        subs = np.array([2, 0, 0, 1, 2])
        vec = inv.output_index(labs, subs)
        for i in range(len(labs)):
            assert vec[i] == inv.output_index(int(labs[i]), int(subs[i]))

    def test_output_names_align_with_indices(self):
        inv = LabelInventory(n_labels=2, silence_id=0, names=("sil", "ah"))
        names = inv.output_names()
        assert len(names) == inv.n_outputs
        assert names[int(inv.output_index(0, 0))] == "sil"
        assert names[int(inv.output_index(1, 1))] == "ah.1"


class TestExpandLabels:
    def test_mandatory_silence_at_both_ends(self):
        inv = LabelInventory(n_labels=3, silence_id=0)
        chain = expand_labels([1, 2], inv)
        assert len(chain) == 1 + 3 + 3 + 1
        assert bool(chain.is_silence[0]) and bool(chain.is_silence[-1])
        assert chain.label_id[0] == 0 and chain.label_id[-1] == 0

    def test_substates_run_in_order(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv)
        speech = chain.substate[~chain.is_silence]
        np.testing.assert_array_equal(speech, [0, 1, 2])

    def test_silence_mode_none(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv, silence_mode="none")
        assert len(chain) == 3
        assert not chain.is_silence.any()

    def test_adjacent_identical_labels_stay_separate_blocks(self):
        """Two consecutive instances of the same label collapse back to two
        labels, not one."""
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1, 1], inv, silence_mode="none")
        assert chain.collapse() == [1, 1]
        assert len(set(chain.block.tolist())) == 2

    def test_collapse_round_trip_with_silence(self):
        inv = LabelInventory(n_labels=4, silence_id=0)
        labels = [2, 1, 1, 3]
        chain = expand_labels(labels, inv)
        assert chain.collapse() == [0] + labels + [0]

    def test_rejects_silence_in_input(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        with pytest.raises(ValueError, match="silence"):
            expand_labels([0], inv)

    def test_rejects_unknown_label(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        with pytest.raises(ValueError):
            expand_labels([7], inv)

    def test_rejects_empty_sequence(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        with pytest.raises(ValueError):
            expand_labels([], inv)

    def test_rejects_unknown_mode(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        with pytest.raises(ValueError):
            expand_labels([1], inv, silence_mode="sometimes")


class TestStateChain:
    def test_arrays_are_write_protected(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv)
        with pytest.raises(ValueError):
            chain.label_id[0] = 5

    def test_positions_are_one_based(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv)
        np.testing.assert_array_equal(chain.positions, [1, 2, 3, 4, 5])

    def test_from_blocks_rejects_empty_block(self):
        with pytest.raises(ValueError):
            StateChain.from_blocks([(1, 0, False)])


class TestChainFeasible:
    def test_boundary(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv)  # S = 5
        assert not chain_feasible(chain, 4)
        assert chain_feasible(chain, 5)
        assert chain_feasible(chain, 6)

    def test_negative_frames_rejected(self):
        inv = LabelInventory(n_labels=2, silence_id=0)
        chain = expand_labels([1], inv)
        with pytest.raises(ValueError):
            chain_feasible(chain, -1)
