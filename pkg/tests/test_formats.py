import os
import struct

import numpy as np
import pytest

from nfcouple.correlation import g2_from_streams
from nfcouple.emitter_dynamics import TimeTagStream, simulate_time_tags
from nfcouple.errors import FormatError
from nfcouple.formats import (MAGIC, decode_tag_csv, decode_ttg1, dump_json, encode_spectrum_csv,
                              encode_tag_csv, encode_ttg1, read_histogram, read_spectrum,
                              read_tags, write_atomic, write_histogram, write_ttg1)

HEADER = 22
RECORD = 9


def streams():
    return [TimeTagStream(0, np.array([5, 77, 154, 1000]), 2e-9, 77),
            TimeTagStream(1, np.array([77, 500]), 2e-9, 77)]


def same(a, b):
    assert len(a) == len(b)
    for x, y in zip(a, b):
        assert x.channel == y.channel and x.resolution_ps == y.resolution_ps
        assert x.duration == pytest.approx(y.duration)
        np.testing.assert_array_equal(x.tags, y.tags)


def test_ttg1_layout():
    data = encode_ttg1(streams())
    assert data[:4] == MAGIC
    assert struct.unpack_from("<HQQ", data, 4) == (2, 77, 2000)
    assert len(data) == HEADER + 6 * RECORD
    # records sorted by time, ties by channel
    chans = [data[HEADER + i * RECORD] for i in range(6)]
    assert chans == [0, 0, 1, 0, 1, 0]


def test_ttg1_roundtrip(tmp_path, model):
    s = simulate_time_tags(model, 2.0, 0.05, seed=3)
    write_ttg1(tmp_path / "a.ttg1", s)
    same(read_tags(tmp_path / "a.ttg1"), s)


def test_ttg1_bytes_deterministic(model):
    a = encode_ttg1(simulate_time_tags(model, 2.0, 0.05, seed=3))
    b = encode_ttg1(simulate_time_tags(model, 2.0, 0.05, seed=3))
    assert a == b


def _err(data):
    with pytest.raises(FormatError) as exc:
        decode_ttg1(data)
    return exc.value


def test_ttg1_bad_magic():
    assert _err(b"XXXX" + encode_ttg1(streams())[4:]).offset == 0
    assert _err(b"NO").offset == 0


def test_ttg1_truncated_header():
    assert _err(MAGIC + b"\x02\x00").offset == 6


def test_ttg1_zero_channels_or_resolution():
    d = bytearray(encode_ttg1(streams()))
    d[4:6] = b"\x00\x00"
    assert _err(bytes(d)).offset == 4
    d = bytearray(encode_ttg1(streams()))
    d[6:14] = bytes(8)
    assert _err(bytes(d)).offset == 6


def test_ttg1_truncated_record():
    d = encode_ttg1(streams())
    e = _err(d[:-3])
    assert e.offset == HEADER + 5 * RECORD and "truncated" in str(e)


def test_ttg1_channel_out_of_range():
    d = bytearray(encode_ttg1(streams()))
    d[HEADER + 2 * RECORD] = 7
    assert _err(bytes(d)).offset == HEADER + 2 * RECORD


def test_ttg1_unsorted():
    d = bytearray(encode_ttg1(streams()))
    d[HEADER + 3 * RECORD + 1:HEADER + 4 * RECORD] = struct.pack("<Q", 1)
    assert _err(bytes(d)).offset == HEADER + 3 * RECORD


def test_ttg1_beyond_duration():
    d = bytearray(encode_ttg1(streams()))
    d[HEADER + 5 * RECORD + 1:] = struct.pack("<Q", 10**6)
    assert _err(bytes(d)).offset == HEADER + 5 * RECORD


def test_tag_csv_roundtrip():
    text = encode_tag_csv(streams())
    back = decode_tag_csv(text.encode(), duration=2e-9)
    same(back, streams())


def test_tag_csv_errors_report_offsets():
    with pytest.raises(FormatError) as exc:
        decode_tag_csv(b"chan,t\n0,1\n")
    assert exc.value.offset == 0
    with pytest.raises(FormatError) as exc:
        decode_tag_csv(b"channel,t_ps\n0,1\n0,x\n")
    assert exc.value.offset == len(b"channel,t_ps\n0,1\n")
    with pytest.raises(FormatError):
        decode_tag_csv(b"channel,t_ps\n0,5\n0,1\n")


def test_read_tags_detects_csv(tmp_path):
    p = tmp_path / "t.csv"
    write_atomic(p, encode_tag_csv(streams()))
    assert [len(s) for s in read_tags(p)] == [4, 2]


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(FormatError):
        read_tags(tmp_path / "missing.ttg1")


def test_histogram_roundtrip(tmp_path, model):
    s = simulate_time_tags(model, 5.0, 2.0, seed=1)
    h = g2_from_streams(s[0], s[1])
    write_histogram(tmp_path / "h.csv", h)
    back = read_histogram(tmp_path / "h.csv")
    np.testing.assert_array_equal(back.counts, h.counts)
    np.testing.assert_allclose(back.g2, h.g2, rtol=1e-12)
    assert back.bin_width_ps == h.bin_width_ps and back.norm_value == h.norm_value
    # without the sidecar the normalization is recovered from the g2 column
    os.unlink(tmp_path / "h.json")
    np.testing.assert_allclose(read_histogram(tmp_path / "h.csv").norm_value, h.norm_value,
                               rtol=1e-9)


def test_histogram_rejects_bad_grid(tmp_path):
    p = tmp_path / "bad.csv"
    write_atomic(p, "tau_ns,counts,g2\n-1.0,1,1\n0.0,1,1\n")
    with pytest.raises(FormatError):
        read_histogram(p)
    write_atomic(p, "tau_ns,counts,g2\n-1.0,1,1\n0.3,1,1\n1.0,1,1\n")
    with pytest.raises(FormatError):
        read_histogram(p)


def test_spectrum_roundtrip(tmp_path):
    wl = np.linspace(630e-9, 780e-9, 11)
    s = np.exp(-((wl - 690e-9) / 28e-9) ** 2)
    p = tmp_path / "s.csv"
    write_atomic(p, encode_spectrum_csv(wl, s))
    w2, s2 = read_spectrum(p)
    np.testing.assert_allclose(w2, wl, rtol=1e-9)
    np.testing.assert_allclose(s2, s, rtol=1e-7)


def test_atomic_write_leaves_no_temporaries(tmp_path):
    p = tmp_path / "sub" / "x.json"
    write_atomic(p, dump_json({"b": 1, "a": [1.5]}))
    write_atomic(p, dump_json({"b": 2}))
    assert p.read_text() == '{\n  "b": 2\n}\n'
    assert sorted(os.listdir(p.parent)) == ["x.json"]


def test_dump_json_sorted():
    assert dump_json({"b": 1, "a": 2}).index('"a"') < dump_json({"b": 1, "a": 2}).index('"b"')
