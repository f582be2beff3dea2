import numpy as np
import pytest

from predbench.streams import PURPOSES, derive_stream


def test_same_arguments_give_identical_draws():
    a = derive_stream(42, "n00100_epv1_rho0.3_prev0.1", 3, "train")
    b = derive_stream(42, "n00100_epv1_rho0.3_prev0.1", 3, "train")
    assert np.array_equal(a.gen.random(1000), b.gen.random(1000))


def test_replication_index_changes_stream():
    a = derive_stream(42, "sc", 0, "train")
    b = derive_stream(42, "sc", 1, "train")
    assert a.gen.random() != b.gen.random()


def test_purpose_tag_changes_stream():
    a = derive_stream(42, "sc", 5, "train")
    b = derive_stream(42, "sc", 5, "test")
    assert a.gen.random() != b.gen.random()


def test_master_seed_changes_stream():
    a = derive_stream(1, "sc", 0, "train")
    b = derive_stream(2, "sc", 0, "train")
    assert a.gen.random() != b.gen.random()


def test_scenario_id_changes_stream():
    a = derive_stream(7, "sc_one", 0, "coefficients")
    b = derive_stream(7, "sc_two", 0, "coefficients")
    assert a.gen.random() != b.gen.random()


def test_child_streams_are_reproducible_and_distinct():
    parent = derive_stream(9, "sc", 0, "forest")
    c0 = parent.child(0).gen.random(100)
    c0_again = derive_stream(9, "sc", 0, "forest").child(0).gen.random(100)
    c1 = derive_stream(9, "sc", 0, "forest").child(1).gen.random(100)
    assert np.array_equal(c0, c0_again)
    assert not np.array_equal(c0, c1)


def test_unknown_purpose_rejected():
    with pytest.raises(ValueError, match="purpose_tag"):
        derive_stream(0, "sc", 0, "bootstrap")


def test_purpose_roster():
    assert set(PURPOSES) == {
        "coefficients", "train", "test", "fold_split", "forest", "analysis"
    }
