import hashlib
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from psirec.data import (
    Index,
    InteractionLog,
    Schema,
    dataset_stats,
    load_csv,
    load_split,
    parse_duration,
    parse_schema,
    preprocess,
    read_csr,
    save_split,
    stepwise_split,
    to_matrix,
    write_csr,
)
from psirec.exceptions import DataError
from psirec.synthetic import stationary_log

DAY = 86400


def _log(records):
    return InteractionLog.from_records(records)


class TestLoadCsv:
    def test_well_formed(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("u1,i1,5,100\nu1,i2,4,200\nu2,i1,3,300\n")
        log = load_csv(p)
        assert len(log) == 3 and log.n_skipped == 0
        assert list(log.users) == ["u1", "u1", "u2"]
        assert log.timestamps.tolist() == [100, 200, 300]

    def test_malformed_row_skipped(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("u1,i1,5,100\nu1,i2,oops,200\nu2,i1,3,300\nu3,i4,4,400\n")
        log = load_csv(p)
        assert len(log) == 3 and log.n_skipped == 1

    def test_movielens_format(self, tmp_path):
        p = tmp_path / "ratings.dat"
        p.write_text("1::1193::5::978300760\n1::661::3::978302109\n2::1357::5::978298709\n")
        log = load_csv(p, parse_schema("movielens"))
        assert len(log) == 3
        assert log.items.tolist() == ["1193", "661", "1357"]
        assert log.ratings.tolist() == [5.0, 3.0, 5.0]

    def test_header_names(self, tmp_path):
        p = tmp_path / "r.tsv"
        p.write_text("ts\trating\titem\tuser\n10\t4\tA\tx\n20\t5\tB\ty\n")
        schema = parse_schema("delimiter=tab,header=1,user=user,item=item,rating=rating,timestamp=ts")
        log = load_csv(p, schema)
        assert log.users.tolist() == ["x", "y"] and log.items.tolist() == ["A", "B"]

    def test_missing_header_column(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("a,b,c,d\n")
        with pytest.raises(DataError, match="not found"):
            load_csv(p, Schema(header=True, user="user"))

    def test_unreadable(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "missing.csv")

    def test_no_valid_rows(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("x,y\nfoo\n")
        with pytest.raises(DataError, match="no valid rows"):
            load_csv(p)

    def test_quoted_amazon_fields(self, tmp_path):
        p = tmp_path / "amz.csv"
        p.write_text('A1,"B0,01",5.0,1360000000\n')
        log = load_csv(p, parse_schema("amazon"))
        assert log.items.tolist() == ["B0,01"]


class TestParsing:
    @pytest.mark.parametrize("text,seconds", [("3600", 3600), ("90d", 90 * DAY), ("8mo", 240 * DAY),
                                              ("2w", 14 * DAY), ("5min", 300), ("1y", 365 * DAY)])
    def test_duration(self, text, seconds):
        assert parse_duration(text) == seconds

    @pytest.mark.parametrize("text", ["", "8 months", "-3d", "1.5d"])
    def test_bad_duration(self, text):
        with pytest.raises(ValueError):
            parse_duration(text)

    def test_schema(self):
        s = parse_schema("delimiter=semicolon,header=0,user=2,item=0,rating=1,timestamp=3")
        assert s == Schema(";", False, 2, 0, 1, 3)
        with pytest.raises(ValueError):
            parse_schema("colour=red")


class TestPreprocess:
    def test_rating_threshold(self):
        log = _log([("a", "x", 3, 1), ("a", "y", 4, 2), ("b", "x", 5, 3)])
        out = preprocess(log, 4, 1)
        assert list(zip(out.users, out.items)) == [("a", "y"), ("b", "x")]

    def test_user_filter_noop_at_one(self):
        log = _log([("a", "x", 5, 1), ("b", "y", 5, 2)])
        assert len(preprocess(log, 4, 1)) == 2

    def test_user_filter(self):
        log = _log([("a", "x", 5, 1), ("a", "y", 5, 2), ("b", "x", 5, 3), ("b", "x", 5, 4)])
        out = preprocess(log, 4, 2)
        assert set(out.users) == {"a"}

    def test_items_never_filtered(self):
        log = _log([("a", f"i{k}", 5, k) for k in range(5)])
        assert len(set(preprocess(log, 4, 1).items)) == 5

    def test_duplicates_keep_earliest(self):
        log = _log([("a", "x", 5, 30), ("a", "y", 4, 5), ("a", "x", 4, 10), ("a", "x", 5, 20)])
        out = preprocess(log, 4, 1)
        assert list(zip(out.items, out.timestamps.tolist())) == [("y", 5), ("x", 10)]

    def test_empty_result(self):
        with pytest.raises(DataError):
            preprocess(_log([("a", "x", 1, 1)]), 4, 1)

    def test_stats(self):
        n_users, n_items, density = dataset_stats(_log([("a", "x", 5, 1), ("b", "y", 5, 2), ("b", "x", 5, 3)]))
        assert (n_users, n_items) == (2, 2) and density == 0.75


class TestToMatrix:
    def test_empty_log(self):
        idx_u, idx_i = Index(["a", "b"]), Index(["x", "y", "z"])
        m = to_matrix(_log([]), idx_u, idx_i)
        assert m.shape == (2, 3) and m.nnz == 0

    def test_two_records(self):
        m = to_matrix(_log([("a", "x", 5, 1), ("b", "z", 5, 2)]), Index(["a", "b"]), Index(["x", "y", "z"]))
        assert m.nnz == 2 and m.matrix[1, 2] == 1.0

    def test_duplicate_is_single_one(self):
        m = to_matrix(_log([("a", "x", 5, 1), ("a", "x", 5, 2)]), Index(["a"]), Index(["x"]))
        assert m.nnz == 1 and m.matrix.data.tolist() == [1.0]

    def test_out_of_index_dropped(self):
        m = to_matrix(_log([("a", "x", 5, 1), ("q", "x", 5, 2), ("a", "w", 5, 3)]), Index(["a"]), Index(["x"]))
        assert m.nnz == 1 and m.n_dropped == 2


def _window_log():
    # last event at day 90, holdback 30 days -> cutoff at day 60
    recs = [
        ("u1", "a", 5, 0), ("u2", "b", 5, 1 * DAY), ("u3", "c", 5, 2 * DAY), ("u1", "d", 5, 3 * DAY),
        ("u2", "e", 5, 4 * DAY), ("u3", "a", 5, 5 * DAY),
        # window 1 [60d, 70d)
        ("u1", "b", 5, 60 * DAY),            # boundary, lands in window 1
        ("u2", "a", 5, 65 * DAY),            # u2 single -> delta
        ("u1", "c", 5, 69 * DAY),            # u1 latest -> holdout
        # window 2 [70d, 80d)
        ("u3", "b", 5, 70 * DAY),            # boundary, lands in window 2
        ("u3", "d", 5, 75 * DAY),
        ("u3", "e", 5, 75 * DAY),            # tie with the previous row; later row wins
        ("zz", "a", 5, 76 * DAY),            # unknown user
        # window 3 [80d, 90d]
        ("u2", "c", 5, 90 * DAY),            # max timestamp lands in the last window
    ]
    return _log(recs)


class TestStepwiseSplit:
    def test_windows_and_holdouts(self):
        split = stepwise_split(_window_log(), 30 * DAY, 3)
        assert [s.window for s in split.steps] == [(60 * DAY, 70 * DAY), (70 * DAY, 80 * DAY), (80 * DAY, 90 * DAY)]
        uid, iid = split.user_index.pos, split.item_index.pos
        s1, s2, s3 = split.steps
        assert s1.holdout == {uid["u1"]: iid["c"]}
        assert set(zip(*s1.delta.matrix.nonzero())) == {(uid["u1"], iid["b"]), (uid["u2"], iid["a"])}
        assert s2.holdout == {uid["u3"]: iid["e"]}
        assert set(zip(*s2.delta.matrix.nonzero())) == {(uid["u3"], iid["b"]), (uid["u3"], iid["d"])}
        assert s2.drops["unknown_user"] == 1
        assert s3.holdout == {}
        assert set(zip(*s3.delta.matrix.nonzero())) == {(uid["u2"], iid["c"])}

    def test_single_interaction_goes_to_delta(self):
        log = _log([("a", "x", 5, 0), ("b", "y", 5, 1), ("b", "z", 5, 2),
                    ("a", "y", 5, 50), ("b", "x", 5, 100)])
        split = stepwise_split(log, 60, 1)
        assert split.steps[0].holdout == {}
        assert split.steps[0].delta.nnz == 2

    def test_empty_window_allowed(self):
        log = _log([("a", "x", 5, 0), ("b", "y", 5, 10), ("a", "y", 5, 100)])
        split = stepwise_split(log, 60, 3)
        assert split.steps[0].delta.nnz == 0 and split.steps[1].delta.nnz == 0
        assert split.steps[2].delta.nnz == 1

    def test_holdback_too_long(self):
        with pytest.raises(DataError):
            stepwise_split(_log([("a", "x", 5, 0), ("a", "y", 5, 10)]), 10, 1)

    def test_invariants_on_synthetic(self):
        log = preprocess(stationary_log(n_users=120, n_items=80, events_per_user=25, seed=4), 4, 1)
        split = stepwise_split(log, 120 * DAY, 4)
        uid, iid = split.user_index, split.item_index
        # partition: every indexed record lands in exactly one place
        cells = [set(zip(*split.initial_training.matrix.nonzero()))]
        for step in split.steps:
            cells.append(set(zip(*step.delta.matrix.nonzero())))
            cells.append(set(step.holdout.items()))
        union = set().union(*cells)
        assert sum(len(c) for c in cells) == len(union)
        rows, cols = uid.lookup(log.users), iid.lookup(log.items)
        indexed = {(int(r), int(c)) for r, c in zip(rows, cols) if r >= 0 and c >= 0}
        assert union == indexed
        dropped = sum(sum(s.drops.values()) for s in split.steps)
        assert dropped == len(log) - len(indexed)
        # windows contiguous and equal
        widths = {e - s for s, e in (st.window for st in split.steps)}
        assert len(widths) == 1
        for a, b in zip(split.steps, split.steps[1:]):
            assert a.window[1] == b.window[0]
        # holdout is the latest interaction of that user in its window
        ts_of = {(int(r), int(c)): t for r, c, t in zip(rows, cols, log.timestamps.tolist())}
        for step in split.steps:
            assert all(int(step.delta.matrix[u].nnz) >= 1 for u in step.holdout)
            for u, i in step.holdout.items():
                delta_items = step.delta.matrix[u].indices
                assert all(ts_of[(u, j)] <= step.holdout_timestamps[u] for j in delta_items)
                assert ts_of[(u, i)] == step.holdout_timestamps[u]
        # index built from initial training only
        initial_users = {u for u, t in zip(log.users, log.timestamps) if t < split.manifest["cutoff"]}
        assert set(uid.ids) == initial_users

    def test_serialization_round_trip_and_reproducible(self, tmp_path):
        log = preprocess(stationary_log(n_users=60, n_items=40, events_per_user=15, seed=2), 4, 1)
        a = save_split(stepwise_split(log, 90 * DAY, 3), tmp_path / "a", {"seed": 1})
        b = save_split(stepwise_split(log, 90 * DAY, 3), tmp_path / "b", {"seed": 1})

        def digest(d: Path):
            return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}

        assert digest(a) == digest(b)
        assert {"initial.csr", "step_1_delta.csr", "step_3_holdout.tsv", "indexes.tsv", "manifest.json"} <= set(digest(a))
        split = stepwise_split(log, 90 * DAY, 3)
        back = load_split(a)
        assert back.user_index == split.user_index and back.item_index == split.item_index
        assert (back.initial_training.matrix != split.initial_training.matrix).nnz == 0
        for x, y in zip(back.steps, split.steps):
            assert x.holdout == y.holdout and x.window == y.window
            assert (x.delta.matrix != y.delta.matrix).nnz == 0


class TestCsrFile:
    def test_round_trip(self, tmp_path, rng):
        A = sp.random(7, 5, density=0.4, random_state=rng, format="csr")
        write_csr(A, tmp_path / "a.csr")
        raw = (tmp_path / "a.csr").read_bytes()
        assert raw[:4] == b"CSR\x00"
        assert int.from_bytes(raw[8:12], "little") == 7 and int.from_bytes(raw[12:16], "little") == 5
        B = read_csr(tmp_path / "a.csr")
        assert B.shape == A.shape
        assert np.array_equal(B.toarray(), A.toarray())

    def test_empty(self, tmp_path):
        write_csr(sp.csr_matrix((3, 2)), tmp_path / "e.csr")
        assert read_csr(tmp_path / "e.csr").nnz == 0

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.csr").write_bytes(b"\0" * 32)
        with pytest.raises(DataError):
            read_csr(tmp_path / "x.csr")
