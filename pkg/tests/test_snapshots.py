import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chnl.grid import TorusGrid
from chnl.snapshots import SnapshotError, decode, encode, read_snapshot, snapshot_to_csv, write_snapshot


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([(1, 8), (1, 64), (2, 8), (2, 16)]), st.floats(0, 1e6), st.integers(0, 2**31))
def test_round_trip(dn, t, seed):
    g = TorusGrid(dn[0], dn[1], 1.7)
    u = np.random.default_rng(seed).standard_normal(g.shape)
    v, g2, t2 = decode(encode(u, g, t))
    assert g2 == g and t2 == t
    assert np.array_equal(u, v)


def test_layout_is_documented():
    g = TorusGrid(1, 8, 2.0)
    u = np.arange(8, dtype=float)
    blob = encode(u, g, 0.5)
    assert blob.startswith(b"CHNL1\n1 8 2.0 0.5\n")
    assert np.array_equal(np.frombuffer(blob[-64:], "<f8"), u)


@pytest.mark.parametrize("blob", [b"CHNL2\n1 8 1.0 0.0\n", b"CHNL1\n1 8 x 0\n", b"CHNL1\n1 8 1.0 0.0\n" + b"\0" * 8])
def test_corrupt_rejected(blob):
    with pytest.raises(SnapshotError):
        decode(blob)


def test_csv_rows(tmp_path):
    g = TorusGrid(2, 16, 1.0)
    u = np.random.default_rng(0).random(g.shape)
    p = write_snapshot(tmp_path / "s.chnl", u, g, 1.0)
    assert np.array_equal(read_snapshot(p)[0], u)
    rows = snapshot_to_csv(p, tmp_path / "s.csv")
    assert rows == 16**2
    with open(tmp_path / "s.csv") as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["x", "y", "u"]
    assert len(data) == rows + 1
    assert float(data[1 + 3 * 16 + 5][2]) == u[3, 5]
