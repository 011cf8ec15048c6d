"""On-disk formats: cohort.bin, summary.knc (binary and CSV), the PMI
container and edges.csv.

All binary payloads are little-endian.  Sequence lengths are LEB128 varints;
codes use the smallest fixed width that holds the vocabulary (u8/u16/u32,
recorded in the header).  write -> read is the identity: bit-exact for
integer payloads, floats round-trip through repr in the CSV formats.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .cooccur import CooccurrenceSummary
from .simgen import Cohort
from .spectra import PmiEstimate, PmiKind

COHORT_MAGIC = b"KNITCOH1"
SUMMARY_MAGIC = b"KNITSUM1"
FORMAT_VERSION = 1


def _write_varint(buf: io.BufferedIOBase, value: int) -> None:
    if value < 0:
        raise InputError("varint values must be nonnegative")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.write(bytes((byte | 0x80,)))
        else:
            buf.write(bytes((byte,)))
            return


def _read_varint(buf: io.BufferedIOBase) -> int:
    shift = 0
    out = 0
    while True:
        raw = buf.read(1)
        if not raw:
            raise FormatError("truncated varint")
        b = raw[0]
        out |= (b & 0x7F) << shift
        if not b & 0x80:
            return out
        shift += 7
        if shift > 63:
            raise FormatError("varint too long")


def _read_exact(buf: io.BufferedIOBase, size: int) -> bytes:
    data = buf.read(size)
    if len(data) != size:
        raise FormatError(f"truncated file: wanted {size} bytes, got {len(data)}")
    return data


def _code_dtype(d: int) -> np.dtype:
    if d <= 0xFF:
        return np.dtype("<u1")
    if d <= 0xFFFF:
        return np.dtype("<u2")
    return np.dtype("<u4")


# ---------------------------------------------------------------------------
# cohort.bin


def write_cohort(path: str | Path, cohort: Cohort) -> None:
    dt = _code_dtype(cohort.d)
    with open(path, "wb") as fh:
        fh.write(COHORT_MAGIC)
        fh.write(struct.pack("<IIIIB", FORMAT_VERSION, cohort.d, cohort.n,
                             cohort.q, dt.itemsize))
        for codes in cohort.codes:
            _write_varint(fh, len(codes))
            fh.write(np.ascontiguousarray(codes, dtype=dt).tobytes())


def read_cohort(path: str | Path) -> Cohort:
    with open(path, "rb") as fh:
        magic = fh.read(len(COHORT_MAGIC))
        if magic != COHORT_MAGIC:
            raise FormatError(f"bad magic for cohort file: {magic!r}")
        version, d, n, q, width = struct.unpack("<IIIIB", _read_exact(fh, 17))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported cohort format version {version}")
        dt = np.dtype(f"<u{width}")
        codes = []
        for _ in range(n):
            t_i = _read_varint(fh)
            raw = _read_exact(fh, t_i * width)
            codes.append(np.frombuffer(raw, dtype=dt).astype(np.int32))
        if fh.read(1):
            raise FormatError("trailing bytes after cohort payload")
    return Cohort(codes=codes, d=d, q=q)


# ---------------------------------------------------------------------------
# summary.knc


def _lengths_digest(lengths: np.ndarray) -> bytes:
    payload = np.ascontiguousarray(lengths, dtype="<u8").tobytes()
    return hashlib.sha256(payload).digest()[:8]


def write_summary(path: str | Path, summary: CooccurrenceSummary) -> None:
    with open(path, "wb") as fh:
        fh.write(SUMMARY_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, summary.d, summary.n, summary.q))
        fh.write(_lengths_digest(summary.lengths))
        for t_i in summary.lengths:
            _write_varint(fh, int(t_i))
        order = np.lexsort((summary.cols, summary.rows))
        fh.write(struct.pack("<Q", summary.rows.size))
        body = np.empty(summary.rows.size, dtype=[("w", "<u4"), ("wp", "<u4"), ("c", "<i8")])
        body["w"] = summary.rows[order]
        body["wp"] = summary.cols[order]
        body["c"] = summary.counts[order]
        fh.write(body.tobytes())


def read_summary(path: str | Path) -> CooccurrenceSummary:
    with open(path, "rb") as fh:
        magic = fh.read(len(SUMMARY_MAGIC))
        if magic != SUMMARY_MAGIC:
            raise FormatError(f"bad magic for summary file: {magic!r}")
        version, d, n, q = struct.unpack("<IIII", _read_exact(fh, 16))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported summary format version {version}")
        digest = _read_exact(fh, 8)
        lengths = np.array([_read_varint(fh) for _ in range(n)], dtype=np.int64)
        if _lengths_digest(lengths) != digest:
            raise FormatError("summary lengths digest mismatch")
        (m,) = struct.unpack("<Q", _read_exact(fh, 8))
        body = np.frombuffer(_read_exact(fh, m * 16), dtype=[("w", "<u4"), ("wp", "<u4"), ("c", "<i8")])
        if fh.read(1):
            raise FormatError("trailing bytes after summary payload")
    return _canonical_summary(d, q, lengths, body["w"].astype(np.int64),
                              body["wp"].astype(np.int64), body["c"].astype(np.int64))


def _canonical_summary(d, q, lengths, rows, cols, counts) -> CooccurrenceSummary:
    """Sort triplets, fold into the upper triangle, and merge duplicates."""
    if rows.size and (rows.max() >= d or cols.max() >= d):
        raise FormatError("triplet code out of range")
    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    keys = lo * d + hi
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], counts[order]
    uniq, start = np.unique(keys, return_index=True)
    sums = np.add.reduceat(vals, start)
    return CooccurrenceSummary(d=int(d), q=int(q), lengths=lengths,
                               rows=(uniq // d).astype(np.int32),
                               cols=(uniq % d).astype(np.int32),
                               counts=sums.astype(np.int64))


def write_summary_csv(path: str | Path, summary: CooccurrenceSummary) -> None:
    """CSV triplets plus a JSON sidecar carrying (d, n, q, lengths)."""
    path = Path(path)
    order = np.lexsort((summary.cols, summary.rows))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("w,w_prime,count\n")
        for k in order:
            fh.write(f"{summary.rows[k]},{summary.cols[k]},{summary.counts[k]}\n")
    sidecar = {"d": summary.d, "n": summary.n, "q": summary.q,
               "lengths": summary.lengths.tolist()}
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="ascii")


def read_summary_csv(path: str | Path) -> CooccurrenceSummary:
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    if not meta_path.exists():
        raise FormatError(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="ascii"))
    rows, cols, counts = [], [], []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "w,w_prime,count":
            raise FormatError(f"unexpected CSV header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                w, wp, c = line.split(",")
                rows.append(int(w)); cols.append(int(wp)); counts.append(int(c))
            except ValueError as e:
                raise FormatError(f"bad CSV row {line!r}") from e
    return _canonical_summary(int(meta["d"]), int(meta["q"]),
                              np.asarray(meta["lengths"], dtype=np.int64),
                              np.asarray(rows, dtype=np.int64),
                              np.asarray(cols, dtype=np.int64),
                              np.asarray(counts, dtype=np.int64))


# ---------------------------------------------------------------------------
# PMI container (npz with a JSON metadata block)


def write_pmi(path: str | Path, estimate: PmiEstimate, meta: dict | None = None) -> None:
    if estimate.eigenvectors is None or estimate.eigenvalues is None:
        raise InputError("only low-rank estimates (with eigenstructure) are persisted")
    payload = dict(meta or {})
    payload.update({"kind": estimate.kind.value, "rank": estimate.rank,
                    "eta": estimate.eta, "d": estimate.d})
    np.savez(path,
             pmi_tilde=estimate.matrix,
             eigenvalues=estimate.eigenvalues,
             eigenvectors=estimate.eigenvectors,
             semantic=estimate.semantic_embedding(),
             meta=np.frombuffer(json.dumps(payload, sort_keys=True).encode(), dtype=np.uint8))


def read_pmi(path: str | Path) -> tuple[PmiEstimate, dict]:
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            est = PmiEstimate(matrix=z["pmi_tilde"], kind=PmiKind(meta["kind"]),
                              eta=float(meta["eta"]), rank=int(meta["rank"]),
                              eigenvalues=z["eigenvalues"], eigenvectors=z["eigenvectors"])
    except (KeyError, ValueError, OSError) as e:
        raise FormatError(f"bad PMI container {path}: {e}") from e
    return est, meta


# ---------------------------------------------------------------------------
# edges.csv (+ JSON sidecar)


def write_edges(path: str | Path, result, config: dict | None = None) -> None:
    path = Path(path)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("w,w_prime,pmi_tilde,variance,z,p_value,selected\n")
        for k in range(result.J):
            w, wp = result.pairs[k]
            fh.write(f"{w},{wp},{float(result.statistic[k])!r},{float(result.variance[k])!r},"
                     f"{float(result.z[k])!r},{float(result.p_value[k])!r},"
                     f"{int(result.selected[k])}\n")
    sidecar = {
        "alpha": result.alpha,
        "J": result.J,
        "j_max": result.j_max,
        "threshold": result.threshold,
        "sidedness": result.sidedness,
        "exclusions": [[int(a), int(b), why] for a, b, why in result.excluded],
        "config": config or {},
    }
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="ascii")


def read_edges(path: str | Path) -> tuple[np.ndarray, dict]:
    """Edges as a structured array plus the sidecar dict."""
    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(meta_path.read_text(encoding="ascii")) if meta_path.exists() else {}
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "w,w_prime,pmi_tilde,variance,z,p_value,selected":
            raise FormatError(f"unexpected edges header {header!r}")
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 7:
                raise FormatError(f"bad edges row {line!r}")
            rows.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3]),
                         float(parts[4]), float(parts[5]), bool(int(parts[6]))))
    arr = np.array(rows, dtype=[("w", "i4"), ("w_prime", "i4"), ("pmi_tilde", "f8"),
                                ("variance", "f8"), ("z", "f8"), ("p_value", "f8"),
                                ("selected", "?")])
    return arr, meta
