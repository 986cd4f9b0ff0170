"""Grid bucketing, static-map requests and the grid-keyed location-context cache."""

from __future__ import annotations

import logging
import math
import os
import struct
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
import zlib
from concurrent.futures import Future
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, TypeVar

from lifejournal.errors import InvalidCoordinate, MissingFixture, ProviderUnavailable, StorageIo

log = logging.getLogger(__name__)

CELL_SIZE_M = 100.0
METERS_PER_DEGREE = 111_320.0
MAP_SIZE_PX = (500, 500)
MAP_ZOOM = 18

T = TypeVar("T")


@dataclass(frozen=True, order=True)
class GridKey:
    ix: int
    iy: int

    def render(self) -> str:
        return f"g:{self.ix}:{self.iy}"

    def __str__(self) -> str:
        return self.render()

    @classmethod
    def parse(cls, text: str) -> GridKey:
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "g":
            raise ValueError(f"not a grid key: {text!r}")
        return cls(int(parts[1]), int(parts[2]))


def _check(lat: float, lon: float) -> None:
    if not (isinstance(lat, (int, float)) and isinstance(lon, (int, float))):
        raise InvalidCoordinate(f"non-numeric coordinate ({lat!r}, {lon!r})")
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise InvalidCoordinate(f"non-finite coordinate ({lat}, {lon})")
    if not -90.0 <= lat <= 90.0 or not -180.0 < lon <= 180.0:
        raise InvalidCoordinate(f"coordinate out of range ({lat}, {lon})")


@dataclass(frozen=True)
class GridProjection:
    """Equirectangular projection about a fixed reference latitude."""

    ref_lat: float = 0.0

    def __post_init__(self) -> None:
        if not -89.0 <= self.ref_lat <= 89.0:
            raise InvalidCoordinate(f"reference latitude {self.ref_lat} too close to a pole")

    @property
    def _x_scale(self) -> float:
        return METERS_PER_DEGREE * math.cos(math.radians(self.ref_lat))

    def project(self, lat: float, lon: float) -> tuple[float, float]:
        _check(lat, lon)
        return lon * self._x_scale, lat * METERS_PER_DEGREE

    def key(self, lat: float, lon: float) -> GridKey:
        x, y = self.project(lat, lon)
        return GridKey(math.floor(x / CELL_SIZE_M), math.floor(y / CELL_SIZE_M))

    def centroid(self, key: GridKey) -> tuple[float, float]:
        x = (key.ix + 0.5) * CELL_SIZE_M
        y = (key.iy + 0.5) * CELL_SIZE_M
        return y / METERS_PER_DEGREE, x / self._x_scale


def grid_key(lat: float, lon: float, ref_lat: float = 0.0) -> GridKey:
    return GridProjection(ref_lat).key(lat, lon)


@dataclass(frozen=True)
class MapRequest:
    key: GridKey
    center: tuple[float, float]
    size_px: tuple[int, int] = MAP_SIZE_PX
    zoom: int = MAP_ZOOM


def build_map_request(lat: float, lon: float, projection: GridProjection = GridProjection()) -> MapRequest:
    """Request for the map image of the cell containing (lat, lon), centred on the cell."""
    key = projection.key(lat, lon)
    return MapRequest(key=key, center=projection.centroid(key))


# ---------------------------------------------------------------------------
# map providers
# ---------------------------------------------------------------------------


class MapProvider(Protocol):
    def fetch(self, request: MapRequest) -> bytes: ...


class FixtureMapProvider:
    """Replays map images stored as ``<dir>/<grid key>.png``."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def path_for(self, key: GridKey) -> Path:
        return self.directory / f"{key.render()}.png"

    def fetch(self, request: MapRequest) -> bytes:
        path = self.path_for(request.key)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise MissingFixture(request.key.render(), str(self.directory)) from None


class HttpMapProvider:
    """Static-map HTTP endpoint (Google Static Maps style query parameters)."""

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        style: str | None = None,
        retries: int = 2,
        backoff_s: float = 1.0,
        timeout_s: float = 10.0,
    ) -> None:
        self.endpoint = endpoint
        self.api_key = api_key
        self.style = style
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def url_for(self, request: MapRequest) -> str:
        params = {
            "center": f"{request.center[0]:.6f},{request.center[1]:.6f}",
            "zoom": str(request.zoom),
            "size": f"{request.size_px[0]}x{request.size_px[1]}",
        }
        if self.style:
            params["style"] = self.style
        if self.api_key:
            params["key"] = self.api_key
        return self.endpoint + ("&" if "?" in self.endpoint else "?") + urllib.parse.urlencode(params)

    def fetch(self, request: MapRequest) -> bytes:
        url = self.url_for(request)
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                with urllib.request.urlopen(url, timeout=self.timeout_s) as resp:
                    return resp.read()
            except urllib.error.HTTPError as exc:
                if exc.code < 500:
                    raise ProviderUnavailable(f"map provider rejected request: HTTP {exc.code}") from exc
                last_error = exc
            except (urllib.error.URLError, OSError) as exc:
                last_error = exc
            log.warning("map fetch for %s failed (attempt %d): %s", request.key, attempt + 1, last_error)
        raise ProviderUnavailable(
            f"map provider unreachable after {self.retries + 1} attempts: {last_error}"
        )


def fetch_map(request: MapRequest, provider: MapProvider) -> bytes:
    data = provider.fetch(request)
    size = png_size(data)
    if size is not None and size != request.size_px:
        log.warning("map image for %s is %dx%d, expected %dx%d", request.key, *size, *request.size_px)
    return data


# ---------------------------------------------------------------------------
# minimal PNG support (fixture images)
# ---------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


def _chunk(kind: bytes, payload: bytes) -> bytes:
    return struct.pack(">I", len(payload)) + kind + payload + struct.pack(">I", zlib.crc32(kind + payload))


def make_png(
    width: int = MAP_SIZE_PX[0],
    height: int = MAP_SIZE_PX[1],
    rgb: tuple[int, int, int] = (235, 235, 228),
    text: dict[str, str] | None = None,
) -> bytes:
    """Solid-colour RGB PNG with optional iTXt metadata chunks."""
    row = b"\x00" + bytes(rgb) * width
    idat = zlib.compress(row * height, 9)
    out = [_PNG_SIG, _chunk(b"IHDR", struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0))]
    for k, v in (text or {}).items():
        out.append(_chunk(b"iTXt", k.encode("latin-1") + b"\x00\x00\x00\x00\x00" + v.encode("utf-8")))
    out.append(_chunk(b"IDAT", idat))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def _iter_chunks(data: bytes):
    pos = len(_PNG_SIG)
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        kind = data[pos + 4 : pos + 8]
        yield kind, data[pos + 8 : pos + 8 + length]
        pos += 12 + length


def png_size(data: bytes) -> tuple[int, int] | None:
    if not data.startswith(_PNG_SIG) or len(data) < 24:
        return None
    width, height = struct.unpack(">II", data[16:24])
    return width, height


def png_text(data: bytes) -> dict[str, str]:
    if not data.startswith(_PNG_SIG):
        return {}
    out = {}
    for kind, payload in _iter_chunks(data):
        if kind == b"iTXt":
            key, _, rest = payload.partition(b"\x00")
            # compression flag, method, language tag, translated keyword
            rest = rest[2:]
            _, _, rest = rest.partition(b"\x00")
            _, _, rest = rest.partition(b"\x00")
            out[key.decode("latin-1")] = rest.decode("utf-8")
        elif kind == b"tEXt":
            key, _, value = payload.partition(b"\x00")
            out[key.decode("latin-1")] = value.decode("latin-1")
    return out


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "r": "\r", "\\": "\\"}.get(nxt, "\\" + nxt))
        else:
            out.append(ch)
    return "".join(out)


_REF_LAT_HEADER = "#ref_lat"


class ContextCache:
    """Persistent map ``grid key -> location-context text``.

    The backing file holds UTF-8 ``key<TAB>context`` lines and is append-only
    while open; opening replays it (last writer wins) and rewrites it compacted.
    A ``#ref_lat<TAB>value`` header pins the projection the keys were made with.
    ``path=None`` gives a memory-only cache.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._data: dict[str, str] = {}
        self._ref_lat: float | None = None
        self._lock = threading.Lock()
        if self.path is not None:
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        try:
            if self.path.exists():
                for line_no, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), 1):
                    if not line:
                        continue
                    key, sep, value = line.partition("\t")
                    if not sep:
                        log.warning("%s:%d: ignoring line without a tab", self.path, line_no)
                        continue
                    if key == _REF_LAT_HEADER:
                        self._ref_lat = float(value)
                    else:
                        self._data[key] = _unescape(value)
            self._rewrite()
        except (OSError, UnicodeDecodeError, ValueError) as exc:
            raise StorageIo(f"cannot load cache {self.path}: {exc}") from exc

    def _lines(self) -> list[str]:
        lines = []
        if self._ref_lat is not None:
            lines.append(f"{_REF_LAT_HEADER}\t{self._ref_lat!r}")
        lines.extend(f"{k}\t{_escape(v)}" for k, v in self._data.items())
        return lines

    def _rewrite(self) -> None:
        assert self.path is not None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        lines = self._lines()
        tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        os.replace(tmp, self.path)

    def _append(self, line: str) -> None:
        if self.path is None:
            return
        try:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise StorageIo(f"cannot write cache {self.path}: {exc}") from exc

    @property
    def reference_lat(self) -> float | None:
        return self._ref_lat

    @reference_lat.setter
    def reference_lat(self, value: float) -> None:
        with self._lock:
            if self._ref_lat is not None and self._ref_lat != value:
                raise ValueError(f"cache already bound to reference latitude {self._ref_lat}")
            if self._ref_lat is None:
                self._ref_lat = value
                self._append(f"{_REF_LAT_HEADER}\t{value!r}")

    def get(self, key: GridKey | str) -> str | None:
        return self._data.get(str(key))

    def put(self, key: GridKey | str, context_text: str) -> None:
        key = str(key)
        with self._lock:
            self._data[key] = context_text
            self._append(f"{key}\t{_escape(context_text)}")

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: object) -> bool:
        return str(key) in self._data

    def keys(self) -> list[str]:
        return list(self._data)

    def clear(self) -> None:
        with self._lock:
            self._data.clear()
            self._ref_lat = None
            if self.path is not None:
                try:
                    self._rewrite()
                except OSError as exc:
                    raise StorageIo(f"cannot clear cache {self.path}: {exc}") from exc


@dataclass(frozen=True)
class CacheStats:
    records: int  # key lines in the file, before compaction
    distinct_cells: int
    reference_lat: float | None


def cache_stats(path: str | Path) -> CacheStats:
    """Inspect a cache file without rewriting it. A missing file is an empty cache."""
    path = Path(path)
    records = 0
    keys: set[str] = set()
    ref_lat = None
    try:
        lines = path.read_text(encoding="utf-8").splitlines() if path.exists() else []
    except (OSError, UnicodeDecodeError) as exc:
        raise StorageIo(f"cannot read cache {path}: {exc}") from exc
    for line in lines:
        key, sep, value = line.partition("\t")
        if not sep:
            continue
        if key == _REF_LAT_HEADER:
            ref_lat = float(value)
        else:
            records += 1
            keys.add(key)
    return CacheStats(records, len(keys), ref_lat)


class SingleFlight:
    """Coalesces concurrent calls for the same key into one execution."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._inflight: dict[str, Future] = {}

    def do(self, key: str, fn: Callable[[], T]) -> T:
        with self._lock:
            fut = self._inflight.get(key)
            leader = fut is None
            if leader:
                fut = Future()
                self._inflight[key] = fut
        if not leader:
            return fut.result()
        try:
            result = fn()
        except BaseException as exc:
            fut.set_exception(exc)
            raise
        else:
            fut.set_result(result)
            return result
        finally:
            with self._lock:
                del self._inflight[key]
