"""File formats: TTG1 time-tag binaries, tag/histogram/spectrum CSV, atomic writes.

TTG1 layout (little-endian)::

    b"TTG1"  u16 n_channels  u64 resolution_ps  u64 duration_ps
    then records {u8 channel, u64 t_ps}, globally sorted by t_ps, then channel.
"""

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .correlation import G2Histogram, RawHistogram, DEFAULT_NORM_WINDOW
from .emitter_dynamics import TimeTagStream, merge_streams
from .errors import FormatError

MAGIC = b"TTG1"
_HEADER = struct.Struct("<4sHQQ")
_RECORD = np.dtype([("channel", "u1"), ("t_ps", "<u8")])


def write_atomic(path, data):
    """Write bytes or text to ``path`` through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj):
    """Canonical JSON text used for every report (stable key order, trailing newline)."""
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj):
    write_atomic(path, dump_json(obj))


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror or exc}") from exc


# --- TTG1 ---------------------------------------------------------------------


def encode_ttg1(streams, n_channels=None):
    if not streams:
        raise FormatError("no streams to write")
    res = {s.resolution_ps for s in streams}
    if len(res) != 1:
        raise FormatError("streams disagree on timestamp resolution")
    n_channels = n_channels or (max(s.channel for s in streams) + 1)
    if n_channels > 256:
        raise FormatError("TTG1 supports at most 256 channels")
    duration_ps = max(s.duration_ps for s in streams)
    ch, t = merge_streams(streams)
    if t.size and t[0] < 0:
        raise FormatError("negative time tag")
    rec = np.empty(t.size, dtype=_RECORD)
    rec["channel"] = ch
    rec["t_ps"] = t
    return _HEADER.pack(MAGIC, n_channels, res.pop(), duration_ps) + rec.tobytes()


def write_ttg1(path, streams, n_channels=None):
    write_atomic(path, encode_ttg1(streams, n_channels))


def decode_ttg1(data):
    """Parse TTG1 bytes into one :class:`TimeTagStream` per declared channel."""
    if data[:4] != MAGIC[:len(data)]:
        raise FormatError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}", 0)
    if len(data) < _HEADER.size:
        raise FormatError(f"truncated header: {len(data)} of {_HEADER.size} bytes", len(data))
    _, n_ch, res_ps, dur_ps = _HEADER.unpack_from(data, 0)
    if n_ch == 0:
        raise FormatError("header declares zero channels", 4)
    if res_ps == 0:
        raise FormatError("header declares zero resolution", 6)
    body = len(data) - _HEADER.size
    if body % _RECORD.itemsize:
        whole = body // _RECORD.itemsize
        raise FormatError("truncated record", _HEADER.size + whole * _RECORD.itemsize)
    rec = np.frombuffer(data, dtype=_RECORD, offset=_HEADER.size)
    ch = rec["channel"]
    t = rec["t_ps"]

    def at(i):
        return _HEADER.size + int(i) * _RECORD.itemsize

    bad = np.nonzero(ch >= n_ch)[0]
    if bad.size:
        raise FormatError(f"channel {ch[bad[0]]} not below declared count {n_ch}", at(bad[0]))
    if t.size > 1:
        dt = np.diff(t.astype(np.int64))
        dch = np.diff(ch.astype(np.int16))
        bad = np.nonzero((dt < 0) | ((dt == 0) & (dch < 0)))[0]
        if bad.size:
            raise FormatError("records not sorted by time", at(bad[0] + 1))
    if t.size and t[-1] >= np.uint64(1 << 62):
        raise FormatError("time tag out of range", at(t.size - 1))
    bad = np.nonzero(t > dur_ps)[0]
    if bad.size:
        raise FormatError(f"time tag {t[bad[0]]} beyond declared duration {dur_ps}", at(bad[0]))
    duration = dur_ps * 1e-12
    t = t.astype(np.int64)
    return [TimeTagStream(c, t[ch == c], duration, int(res_ps)) for c in range(n_ch)]


def read_ttg1(path):
    return decode_ttg1(_read_bytes(path))


# --- time-tag CSV -----------------------------------------------------------------


def encode_tag_csv(streams):
    ch, t = merge_streams(streams)
    buf = io.StringIO()
    buf.write("channel,t_ps\n")
    buf.writelines(f"{c},{v}\n" for c, v in zip(ch.tolist(), t.tolist()))
    return buf.getvalue()


def _csv_rows(data, header, parse):
    """Yield parsed rows, raising FormatError with the byte offset of a bad line."""
    offset = 0
    lines = data.split(b"\n")
    if not lines or lines[0].strip().decode(errors="replace") != header:
        raise FormatError(f"expected header {header!r}", 0)
    offset += len(lines[0]) + 1
    ncol = header.count(",") + 1
    for line in lines[1:]:
        text = line.strip()
        if text:
            parts = text.split(b",")
            if len(parts) != ncol:
                raise FormatError(f"expected {ncol} fields, got {len(parts)}", offset)
            try:
                yield parse(parts)
            except ValueError as exc:
                raise FormatError(f"unparseable row: {exc}", offset) from None
        offset += len(line) + 1


def decode_tag_csv(data, duration=None, resolution_ps=77):
    rows = list(_csv_rows(data, "channel,t_ps", lambda p: (int(p[0]), int(p[1]))))
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    ch, t = arr[:, 0], arr[:, 1]
    if np.any(ch < 0) or np.any(t < 0):
        raise FormatError("negative channel or time tag")
    n_ch = int(ch.max()) + 1 if ch.size else 0
    if duration is None:
        duration = (int(t.max()) + resolution_ps) * 1e-12 if t.size else 0.0
    out = []
    for c in range(n_ch):
        tc = t[ch == c]
        if tc.size > 1 and np.any(np.diff(tc) < 0):
            raise FormatError(f"channel {c} tags not sorted")
        out.append(TimeTagStream(c, tc, duration, resolution_ps))
    return out


def read_tag_csv(path, duration=None, resolution_ps=77):
    return decode_tag_csv(_read_bytes(path), duration, resolution_ps)


def read_tags(path, **kw):
    """Read TTG1 or CSV time tags, chosen by the file's leading bytes."""
    data = _read_bytes(path)
    if data[:4] == MAGIC:
        return decode_ttg1(data)
    if data[:7] == b"channel":
        return decode_tag_csv(data, **kw)
    return decode_ttg1(data)  # reports the bad magic


# --- histogram CSV ----------------------------------------------------------------


def encode_histogram_csv(hist):
    buf = io.StringIO()
    buf.write("tau_ns,counts,g2\n")
    g2 = hist.g2 if getattr(hist, "g2", None) is not None else np.full(hist.counts.size, np.nan)
    for tau, n, g in zip(hist.tau_ns if hasattr(hist, "tau_ns") else hist.taus * 1e9,
                         hist.counts.tolist(), g2.tolist()):
        buf.write(f"{tau:.6f},{n},{g:.12g}\n")
    return buf.getvalue()


def histogram_metadata(hist):
    meta = {
        "bin_width_ps": int(hist.bin_width_ps),
        "n_half": int(hist.n_half),
        "totals": [int(x) for x in hist.totals],
        "duration_s": float(hist.duration),
        "empty": bool(hist.empty),
        "n_pairs": int(hist.n_pairs),
    }
    if isinstance(hist, G2Histogram):
        meta.update(norm_window_s=[float(x) for x in hist.norm_window],
                    norm_value=float(hist.norm_value), norm_sides=hist.norm_sides)
    return meta


def write_histogram(path, hist):
    """Histogram CSV plus a ``.json`` sidecar holding the binning and normalization."""
    path = Path(path)
    write_atomic(path, encode_histogram_csv(hist))
    write_json(path.with_suffix(".json"), histogram_metadata(hist))


def read_histogram(path):
    """Read a histogram CSV (and its sidecar when present) back into a G2Histogram."""
    path = Path(path)
    rows = list(_csv_rows(_read_bytes(path), "tau_ns,counts,g2",
                          lambda p: (float(p[0]), int(p[1]), float(p[2]))))
    if not rows:
        raise FormatError("histogram has no rows")
    tau_ns = np.array([r[0] for r in rows])
    counts = np.array([r[1] for r in rows], dtype=np.int64)
    g2 = np.array([r[2] for r in rows])
    if np.any(counts < 0):
        raise FormatError("negative bin count")
    n = counts.size
    if n % 2 == 0 or n < 3:
        raise FormatError(f"histogram needs an odd number (>= 3) of bins, got {n}")
    n_half = n // 2
    side = path.with_suffix(".json")
    meta = json.loads(_read_bytes(side)) if side.exists() else {}
    width_ps = int(meta.get("bin_width_ps", round((tau_ns[-1] - tau_ns[0]) / (n - 1) * 1e3)))
    expected = np.arange(-n_half, n_half + 1) * width_ps * 1e-3
    if not np.allclose(tau_ns, expected, atol=1.5e-6):
        raise FormatError("bin centers are not a symmetric uniform grid")
    raw = RawHistogram(width_ps, n_half, counts, tuple(meta.get("totals", (0, 0))),
                       float(meta.get("duration_s", 0.0)), bool(meta.get("empty", False)))
    if "norm_value" in meta:
        norm = float(meta["norm_value"])
        window = tuple(meta.get("norm_window_s", DEFAULT_NORM_WINDOW))
        sides = meta.get("norm_sides", "both")
    elif raw.empty:
        # flagged empty histogram: nothing to normalize, kept loadable for inspection
        norm, window, sides = 1.0, DEFAULT_NORM_WINDOW, "both"
    else:
        ok = (g2 > 0) & np.isfinite(g2)
        if not ok.any():
            raise FormatError("cannot recover the normalization from g2 values")
        norm = float(np.median(counts[ok] / g2[ok]))
        window, sides = DEFAULT_NORM_WINDOW, "both"
    sigma = np.sqrt(np.maximum(counts, 1)) / norm
    return G2Histogram(raw.bin_width_ps, n_half, counts, raw.totals, raw.duration, raw.empty,
                       window, norm, counts / norm, sigma, sides)


# --- spectrum CSV -----------------------------------------------------------------


def read_spectrum(path):
    """Spectrum CSV ``lambda_nm,intensity`` -> (wavelengths in m, intensities)."""
    rows = list(_csv_rows(_read_bytes(path), "lambda_nm,intensity",
                          lambda p: (float(p[0]), float(p[1]))))
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return arr[:, 0] * 1e-9, arr[:, 1]


def encode_spectrum_csv(wavelengths, intensity):
    buf = io.StringIO()
    buf.write("lambda_nm,intensity\n")
    for wl, s in zip(np.asarray(wavelengths) * 1e9, intensity):
        buf.write(f"{wl:.4f},{s:.8g}\n")
    return buf.getvalue()


def write_csv_table(path, header, rows, fmt="{:.10g}"):
    """Plain CSV table; floats through ``fmt``, everything else via str()."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(fmt.format(v) if isinstance(v, float) else str(v) for v in row))
        buf.write("\n")
    write_atomic(path, buf.getvalue())
