import struct

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from conftest import make_header
from photonstat.errors import (
    InvalidWindow,
    IoFailure,
    MalformedHeader,
    MalformedRecord,
    OutOfOrderRecord,
    ParseError,
    StreamFormatError,
    TruncatedFile,
)
from photonstat.stream import (
    HEADER_SIZE,
    RECORD_SIZE,
    Origin,
    PhotonStream,
    StreamHeader,
    decode_stream,
    encode_stream,
    import_csv,
    read_stream,
    window,
    write_stream,
)
from strategies import streams


def _stream(records, header=None, validate=True):
    header = header or make_header(duration=1.0)
    ch, macro, micro = (np.array(c) for c in zip(*records)) if records else ([], [], [])
    return PhotonStream(header, ch, macro, micro, validate=validate)


class TestHeader:
    def test_reference_values(self):
        h = make_header()
        assert h.sync_period == pytest.approx(400e-9)
        assert h.max_microtime * h.microtime_resolution < h.sync_period
        assert (h.max_microtime + 1) * h.microtime_resolution >= h.sync_period

    @pytest.mark.parametrize(
        "kw",
        [
            {"sync_rate": 0.0, "macro_res": 1e-9},
            {"res": -1e-12},
            {"macro_res": -1.0},
            {"res": 1e-6},  # longer than the 400 ns period
        ],
    )
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            make_header(**kw)

    def test_provenance_not_part_of_equality(self):
        a = make_header(provenance="bench A")
        b = make_header(provenance="bench B")
        assert a == b


class TestReadWrite:
    def test_empty_stream_is_header_only(self, tmp_path):
        s = PhotonStream.empty(make_header(duration=12.5))
        p = tmp_path / "e.pstr"
        write_stream(s, p)
        assert p.stat().st_size == HEADER_SIZE
        back = read_stream(p)
        assert len(back) == 0 and back.header.duration == 12.5

    def test_one_record_size(self, tmp_path):
        p = tmp_path / "one.pstr"
        write_stream(_stream([(0, 5, 7)]), p)
        assert p.stat().st_size == HEADER_SIZE + RECORD_SIZE

    def test_header_layout(self):
        h = make_header(duration=3.0, origin=Origin.IMPORTED, channel_count=4)
        data = encode_stream(_stream([(3, 1, 2)], h))
        magic, ver, nch, sync, micro, macro, dur, count, origin = struct.unpack_from("<4sHHddddQB", data)
        assert (magic, ver, nch, count, origin) == (b"PSTR", 1, 4, 1, 1)
        assert (sync, micro, macro, dur) == (h.sync_rate, h.microtime_resolution, h.macrotime_resolution, 3.0)
        assert data[49:64] == bytes(15)
        ch, flags, mt, reserved, mac = struct.unpack_from("<BBHIQ", data, HEADER_SIZE)
        assert (ch, flags, mt, reserved, mac) == (3, 0, 2, 0, 1)

    def test_round_trip(self, tmp_path):
        s = _stream([(0, 1, 5), (1, 1, 5), (0, 2, 0), (255, 3, 1)])
        p = tmp_path / "s.pstr"
        write_stream(s, p)
        assert read_stream(p) == s

    def test_third_record_out_of_order(self):
        s = _stream([(0, 1, 0), (0, 5, 0), (1, 3, 0)], validate=False)
        with pytest.raises(OutOfOrderRecord) as exc:
            decode_stream(encode_stream(s))
        assert exc.value.index == 2

    def test_same_channel_tie_rejected(self):
        with pytest.raises(OutOfOrderRecord):
            _stream([(0, 1, 3), (0, 1, 3)])

    def test_distinct_channel_tie_allowed(self):
        assert len(_stream([(0, 1, 3), (1, 1, 3)])) == 2

    def test_bad_magic(self):
        data = bytearray(encode_stream(_stream([])))
        data[:4] = b"XSTR"
        with pytest.raises(MalformedHeader):
            decode_stream(bytes(data))

    def test_bad_version(self):
        data = bytearray(encode_stream(_stream([])))
        data[4:6] = (2).to_bytes(2, "little")
        with pytest.raises(MalformedHeader):
            decode_stream(bytes(data))

    def test_truncated(self):
        data = encode_stream(_stream([(0, 1, 1), (0, 2, 1)]))
        with pytest.raises(TruncatedFile):
            decode_stream(data[:-1])
        with pytest.raises(TruncatedFile):
            decode_stream(data[:10])

    def test_nonzero_flags(self):
        data = bytearray(encode_stream(_stream([(0, 1, 1)])))
        data[HEADER_SIZE + 1] = 1
        with pytest.raises(MalformedRecord):
            decode_stream(bytes(data))

    def test_channel_out_of_range(self):
        with pytest.raises(MalformedRecord):
            _stream([(2, 1, 1)])

    def test_microtime_past_period(self):
        h = make_header()
        with pytest.raises(MalformedRecord):
            _stream([(0, 1, h.max_microtime + 1)], h)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_stream(tmp_path / "absent.pstr")

    def test_write_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            write_stream(_stream([]), tmp_path / "no" / "such" / "dir.pstr")


class TestCsv:
    def test_two_records(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0,100,40\n1,250,12\n")
        s = import_csv(p, make_header())
        assert list(s) == [(0, 100, 40), (1, 250, 12)]
        assert s.header.origin == Origin.IMPORTED

    def test_optional_header_row(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("channel,macrotime,microtime\n0,100,40\n")
        assert len(import_csv(p, make_header())) == 1

    def test_empty_body(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("")
        assert len(import_csv(p, make_header())) == 0

    def test_non_integer_reports_line(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("channel,macrotime,microtime\n0,100,40\n1,2.5,3\n")
        with pytest.raises(ParseError) as exc:
            import_csv(p, make_header())
        assert exc.value.line == 3

    def test_unsorted_is_error_unless_repaired(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0,200,0\n1,100,0\n")
        with pytest.raises(OutOfOrderRecord):
            import_csv(p, make_header())
        s = import_csv(p, make_header(), sort=True)
        assert [r.macrotime for r in s] == [100, 200]


class TestWindow:
    def _seconds_stream(self):
        h = StreamHeader(1e6, 1e-9, 1e-3, 4.0)
        return PhotonStream(h, [0, 1, 0], [1000, 2000, 3000], [0, 0, 0])

    def test_half_open_selection(self):
        w = window(self._seconds_stream(), 1.5, 2.5)
        assert len(w) == 1 and w.header.duration == pytest.approx(1.0)
        assert w.abs_times()[0] == pytest.approx(0.5)

    def test_identity(self):
        s = self._seconds_stream()
        assert window(s, 0.0, s.header.duration) == s

    def test_start_built_by_addition_stays_on_tick(self):
        h = StreamHeader(1e6, 1e-9, 1e-6, 1.0)
        s = PhotonStream(h, [0], [32], [0])
        tick = h.macrotime_resolution
        # 1 * tick + 30 * tick divides out to 30.999... ticks
        w = window(s, 1 * tick + 30 * tick, 1e-3)
        assert w.macrotime[0] == 1

    def test_empty_gap(self):
        assert len(window(self._seconds_stream(), 1.2, 1.8)) == 0

    @pytest.mark.parametrize("t0,t1", [(-1, 1), (2, 1), (1, 1), (0, 5)])
    def test_invalid(self, t0, t1):
        with pytest.raises(InvalidWindow):
            window(self._seconds_stream(), t0, t1)


@settings(max_examples=200)
@given(streams())
def test_round_trip_property(s):
    assert decode_stream(encode_stream(s)) == s


@settings(max_examples=100)
@given(streams(), st.data())
def test_nested_window_law(s, data):
    # window edges on the macrotime grid and microtimes shorter than a tick:
    # the conditions under which re-basing is exact
    tick = s.header.macrotime_resolution
    assume(s.header.max_microtime * s.header.microtime_resolution < tick)
    n = int(s.header.duration / tick)
    if n < 2:
        return
    a, b = sorted(data.draw(st.lists(st.integers(0, n), min_size=2, max_size=2, unique=True)))
    inner = b - a
    c = data.draw(st.integers(0, inner - 1))
    d = data.draw(st.integers(c + 1, inner + 5))
    ta, tb = a * tick, b * tick
    outer = window(s, ta, tb)
    lhs = window(outer, c * tick, min(d * tick, outer.header.duration))
    rhs = window(s, ta + c * tick, min(ta + d * tick, tb))
    assert np.array_equal(lhs.channel, rhs.channel)
    assert np.array_equal(lhs.microtime, rhs.microtime)
    assert np.allclose(lhs.abs_times(), rhs.abs_times(), rtol=0, atol=tick * 1e-6)


@settings(max_examples=300)
@given(streams(max_records=20), st.binary(max_size=40), st.integers(0, 400), st.integers(0, 3))
def test_fuzzed_bytes_give_valid_stream_or_typed_error(s, junk, pos, op):
    data = bytearray(encode_stream(s))
    if op == 0:
        data[pos % (len(data) + 1) : pos % (len(data) + 1) + len(junk)] = junk
    elif op == 1:
        data = data[: pos % (len(data) + 1)]
    elif op == 2:
        data += junk
    else:
        for k, b in enumerate(junk):
            data[(pos + 7 * k) % len(data)] ^= b
    try:
        out = decode_stream(bytes(data))
    except StreamFormatError:
        return
    # anything returned must satisfy every invariant
    PhotonStream(out.header, out.channel, out.macrotime, out.microtime, validate=True)
    t = out.abs_times()
    assert np.all(np.diff(t) >= 0)
