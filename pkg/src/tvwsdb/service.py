"""Persisted MPEP database and the line-based lookup service.

File layout (little-endian)::

    "TVWSDB1" | u16 version | u64 FNV-1a digest of the config text
    | u16 len + scenario id | u16 len + build timestamp
    | f64 origin x, f64 origin y, f64 cell size m, u32 rows, u32 cols, f64 peak dBm
    | f64[n] mpep | i8[n] class | f64[2n] wcrp | u32 CRC-32 of all preceding bytes

Wire protocol: UTF-8 lines ending in "\\n".  ``PING`` -> ``PONG``;
``QUERY <x_km> <y_km>`` -> ``OK <dBm|NOTX|NA> <CLASS>`` or ``ERR OUTOFAREA``;
``INFO`` -> ``OK <scenario> <rows> <cols> <cell_m> <digest>``; anything else
-> ``ERR BADREQ``.  The connection stays open after errors.
"""

from __future__ import annotations

import datetime as _dt
import logging
import os
import socketserver
import struct
import threading
import zlib
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec
from .radio import Location
from .reuse import NO_TX, MpepMap, SpaceClass

log = logging.getLogger(__name__)

DB_MAGIC = b"TVWSDB1"
DB_VERSION = 1
MAX_LINE = 1024
ENV_DB_PATH = "TVWS_DB_PATH"

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class DatabaseError(Exception):
    pass


class DatabaseFormatError(DatabaseError):
    pass


class DatabaseVersionError(DatabaseError):
    pass


class DatabaseChecksumError(DatabaseError):
    pass


class DatabaseTruncatedError(DatabaseError):
    pass


class OutOfAreaError(LookupError):
    pass


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class DatabaseHandle:
    mpep: MpepMap
    scenario_id: str
    built_at: str
    digest: int

    @classmethod
    def create(cls, mpep: MpepMap, scenario_id: str, config_text: str) -> "DatabaseHandle":
        now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
        return cls(mpep, scenario_id, now, fnv1a_64(config_text.encode("utf-8")))

    def matches(self, config_text: str) -> bool:
        return self.digest == fnv1a_64(config_text.encode("utf-8"))


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def to_bytes(db: DatabaseHandle) -> bytes:
    mp, g = db.mpep, db.mpep.grid
    parts = [
        DB_MAGIC, struct.pack("<HQ", DB_VERSION, db.digest),
        _pack_str(db.scenario_id), _pack_str(db.built_at),
        struct.pack("<dddIId", g.origin.x, g.origin.y, g.cell_size_m, g.rows, g.cols, mp.p_peak_dbm),
        np.ascontiguousarray(mp.mpep_dbm, dtype="<f8").tobytes(),
        np.ascontiguousarray(mp.space_class, dtype=np.int8).tobytes(),
        np.ascontiguousarray(mp.wcrp, dtype="<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DatabaseTruncatedError("database file is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")


def from_bytes(data: bytes) -> DatabaseHandle:
    if data[:len(DB_MAGIC)] != DB_MAGIC:
        if len(data) < len(DB_MAGIC) and DB_MAGIC.startswith(data):
            raise DatabaseTruncatedError("database file is truncated")
        raise DatabaseFormatError("not a TVWS database file")
    rd = _Reader(data)
    rd.take(len(DB_MAGIC))
    version, digest = rd.unpack("<HQ")
    if version != DB_VERSION:
        raise DatabaseVersionError(f"unsupported database version {version}")
    scenario_id = rd.string()
    built_at = rd.string()
    ox, oy, cell, rows, cols, p_peak = rd.unpack("<dddIId")
    n = rows * cols
    mpep = np.frombuffer(rd.take(8 * n), dtype="<f8").reshape(rows, cols).astype(float)
    cls_ = np.frombuffer(rd.take(n), dtype=np.int8).reshape(rows, cols).copy()
    wcrp = np.frombuffer(rd.take(16 * n), dtype="<f8").reshape(rows, cols, 2).astype(float)
    body_end = rd.pos
    (crc,) = rd.unpack("<I")
    if rd.pos != len(data):
        raise DatabaseFormatError("trailing bytes after checksum")
    if zlib.crc32(data[:body_end]) != crc:
        raise DatabaseChecksumError("database checksum mismatch")
    grid = GridSpec(Location(ox, oy), cell, rows, cols)
    return DatabaseHandle(MpepMap(grid, mpep, cls_, wcrp, p_peak), scenario_id, built_at, digest)


def save(db: DatabaseHandle, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(db))
    os.replace(tmp, path)


def load(path) -> DatabaseHandle:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def query(db: DatabaseHandle, loc: Location) -> tuple[float, SpaceClass]:
    """Entry of the grid containing ``loc``; out-of-cell grids give (nan, OUT)."""
    cell = db.mpep.grid.index_of(loc)
    if cell is None:
        raise OutOfAreaError(f"{loc} lies outside the database area")
    return float(db.mpep.mpep_dbm[cell]), SpaceClass(int(db.mpep.space_class[cell]))


def format_answer(mpep: float, cls_: SpaceClass) -> str:
    if cls_ is SpaceClass.OUT:
        return "OK NA OUTOFCELL"
    value = "NOTX" if mpep == NO_TX else f"{mpep:.2f}"
    return f"OK {value} {cls_.name}"


def handle_line(db: DatabaseHandle, line: str) -> str:
    """Response (without newline) for one request line."""
    parts = line.split()
    if not parts:
        return "ERR BADREQ"
    verb, args = parts[0].upper(), parts[1:]
    if verb == "PING" and not args:
        return "PONG"
    if verb == "INFO" and not args:
        g = db.mpep.grid
        return f"OK {db.scenario_id} {g.rows} {g.cols} {g.cell_size_m:g} {db.digest:016x}"
    if verb == "QUERY" and len(args) == 2:
        try:
            x, y = float(args[0]), float(args[1])
        except ValueError:
            return "ERR BADREQ"
        if not (np.isfinite(x) and np.isfinite(y)):
            return "ERR BADREQ"
        try:
            return format_answer(*query(db, Location(x, y)))
        except OutOfAreaError:
            return "ERR OUTOFAREA"
    return "ERR BADREQ"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        db = self.server.db
        while True:
            raw = self.rfile.readline(MAX_LINE + 1)
            if not raw:
                return
            if len(raw) > MAX_LINE and not raw.endswith(b"\n"):
                # drain the oversized line before answering
                while raw and not raw.endswith(b"\n"):
                    raw = self.rfile.readline(MAX_LINE + 1)
                reply = "ERR BADREQ"
            else:
                try:
                    reply = handle_line(db, raw.decode("utf-8"))
                except UnicodeDecodeError:
                    reply = "ERR BADREQ"
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class LookupServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, db: DatabaseHandle, address: tuple[str, int]):
        self.db = db
        super().__init__(address, _Handler)


def serve(db: DatabaseHandle, endpoint: tuple[str, int] = ("127.0.0.1", 7878),
          background: bool = False) -> LookupServer:
    """Start answering lookups; with ``background`` the loop runs in a daemon thread."""
    server = LookupServer(db, endpoint)
    log.info("serving %s on %s:%d", db.scenario_id, *server.server_address[:2])
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        server.serve_forever()
    return server


def parse_endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))
