import pandas as pd
import pytest

from reviewgraph.cleaning import kcore_filter


def frame(pairs):
    users, items = zip(*pairs)
    return pd.DataFrame({"user": users, "item": items, "review_row": -1})


@pytest.mark.unit
def test_kcore_filter_cascades():
    """Dropping item 3 leaves user 2 with a single interaction, which then
    goes too."""
    interactions = frame(
        [(0, 0), (0, 1), (1, 0), (1, 1), (2, 1), (2, 3), (3, 0), (3, 1)]
    )
    kept = kcore_filter(interactions, user_k=2, item_k=2)
    assert sorted(zip(kept["user"], kept["item"])) == [
        (0, 0),
        (0, 1),
        (1, 0),
        (1, 1),
        (3, 0),
        (3, 1),
    ]
    assert (kept.groupby("user").size() >= 2).all()
    assert (kept.groupby("item").size() >= 2).all()


@pytest.mark.unit
def test_kcore_filter_keeps_everything_at_one():
    interactions = frame([(0, 0), (1, 2), (2, 1)])
    pd.testing.assert_frame_equal(kcore_filter(interactions, 1, 1), interactions)


@pytest.mark.unit
def test_kcore_filter_can_empty_the_list():
    interactions = frame([(0, 0), (1, 1)])
    assert kcore_filter(interactions, 2, 1).empty
    with pytest.raises(ValueError):
        kcore_filter(interactions, 0, 1)
