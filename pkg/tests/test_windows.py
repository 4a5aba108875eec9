"""Window grouping and the 8-feature vector."""

import pytest

from trafficmine.windows import (FEATURE_NAMES, WindowConfig, WindowStats,
                                 extract_windows, read_window_csv,
                                 window_groups, write_window_csv)

from conftest import make_record, record_run


def test_window_length_must_be_at_least_two():
    with pytest.raises(ValueError):
        WindowConfig(1)
    assert WindowConfig(2).window_length == 2


def test_trailing_partial_window_dropped_per_session():
    records = [make_record(session_number=1) for _ in range(7)]
    records += [make_record(session_number=2) for _ in range(5)]
    groups = list(window_groups(records, 3))
    assert [s for s, _ in groups] == [1, 1, 2]
    assert all(len(chunk) == 3 for _, chunk in groups)


def test_windows_never_span_sessions():
    # 4 packets in session 1, 4 in session 2: window length 3 must not
    # stitch the leftover of session 1 onto session 2.
    records = [make_record(session_number=1, payload_size=1) for _ in range(4)]
    records += [make_record(session_number=2, payload_size=9) for _ in range(4)]
    groups = list(window_groups(records, 3))
    assert len(groups) == 2
    assert {p.payload_size for p in groups[0][1]} == {1}
    assert {p.payload_size for p in groups[1][1]} == {9}


def test_feature_vector_hand_computed():
    records = record_run([
        ("C_to_S", ("SYN",), 0),
        ("S_to_C", ("SYN", "ACK"), 0),
        ("C_to_S", ("ACK",), 0),
        ("C_to_S", ("ACK", "PSH"), 120),
    ])
    [w] = extract_windows(records, WindowConfig(4))
    expected = {
        "avg_payload": 30.0,   # 120 / 4
        "n_servers": 1.0,
        "n_user_ports": 1.0,
        "n_ack": 3.0,
        "n_syn": 2.0,
        "n_fin": 0.0,
        "n_psh": 1.0,
        "n_rst": 0.0,
    }
    assert dict(zip(FEATURE_NAMES, w.features)) == expected


def test_server_and_port_counting_uses_direction():
    # For S_to_C packets the *destination* port is the user port and the
    # source IP is the server; both packets below share one server IP but
    # use two distinct client ports.
    records = [
        make_record(timestamp=1.0, direction="C_to_S", source_port=50001),
        make_record(timestamp=2.0, direction="S_to_C", source_port=50002),
    ]
    [w] = extract_windows(records, WindowConfig(2))
    feats = dict(zip(FEATURE_NAMES, w.features))
    assert feats["n_servers"] == 1.0
    assert feats["n_user_ports"] == 2.0


def test_window_index_is_global_capture_order():
    records = [make_record(session_number=1) for _ in range(4)]
    records += [make_record(session_number=2) for _ in range(4)]
    stats = extract_windows(records, WindowConfig(2))
    assert [w.window_index for w in stats] == [0, 1, 2, 3]
    assert [w.session_number for w in stats] == [1, 1, 2, 2]


def test_rst_counted():
    records = record_run([("S_to_C", ("RST",), 0), ("C_to_S", ("ACK",), 0)])
    [w] = extract_windows(records, WindowConfig(2))
    assert dict(zip(FEATURE_NAMES, w.features))["n_rst"] == 1.0


def test_window_csv_roundtrip():
    stats = [WindowStats(0, 1, (12.25, 1.0, 2.0, 3.0, 0.0, 0.0, 1.0, 0.0)),
             WindowStats(1, 1, (0.3333333333333333, 1.0, 1.0, 2.0, 2.0, 0.0,
                                0.0, 0.0))]
    text = write_window_csv(stats)
    assert text.splitlines()[0].startswith("window_index,session_number,avg_payload")
    assert read_window_csv(text) == stats


def test_window_csv_rejects_bad_header_and_width():
    with pytest.raises(ValueError):
        read_window_csv("nope\n")
    good = write_window_csv([WindowStats(0, 1, tuple([0.0] * 8))])
    with pytest.raises(ValueError):
        read_window_csv(good + "1,2,3\n")
