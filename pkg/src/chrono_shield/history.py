"""Historical imagery lookup: local archives and a remote history service.

An archive is a directory with a manifest.json (a JSON array of
{"path", "date", "lat", "lon", "heading"}) plus image files. The remote
protocol is GET {endpoint}/history?lat=..&lon=..&heading=..&max=..
[&before=YYYY-MM-DD] returning the same rows with image_url instead of
path. Matching is geometric only: haversine radius, heading tolerance,
optional date bound; results come back newest-first.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from datetime import date

import requests

from . import codecs
from .raster import RasterImage

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371.0 * 1000.0


class ManifestMissing(FileNotFoundError):
    pass


class ManifestMalformed(ValueError):
    pass


class NetworkUnreachable(ConnectionError):
    pass


class ProtocolError(ValueError):
    """The endpoint answered, but not with the expected shape."""


class InvalidRoute(ValueError):
    pass


@dataclass(frozen=True)
class HistoricalRecord:
    image: RasterImage
    capture_date: date
    location: tuple[float, float]  # (lat, lon)
    heading: float
    source: str  # "archive" | "remote" | "manual"

    def __post_init__(self):
        lat, lon = self.location
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        if self.source not in ("archive", "remote", "manual"):
            raise ValueError(f"unknown record source {self.source!r}")


@dataclass(frozen=True)
class HistoryQuery:
    location: tuple[float, float]
    heading: float
    max_records: int = 3
    before: date | None = None

    def __post_init__(self):
        lat, lon = self.location
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        if self.max_records < 1:
            raise ValueError("max_records must be >= 1")


@dataclass(frozen=True)
class MatchPolicy:
    radius_m: float = 25.0
    heading_tol_deg: float = 45.0


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative path (archive) or image URL (remote)
    capture_date: date
    lat: float
    lon: float
    heading: float


@dataclass(frozen=True)
class ArchiveManifest:
    entries: list[ManifestEntry]
    version: int = 1


def haversine_m(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in meters (spherical earth, R = 6371 km)."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(h))


def heading_delta_deg(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def _parse_entry(row, path_key: str) -> ManifestEntry:
    try:
        return ManifestEntry(
            path=str(row[path_key]),
            capture_date=date.fromisoformat(str(row["date"])),
            lat=float(row["lat"]),
            lon=float(row["lon"]),
            heading=float(row["heading"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestMalformed(f"bad manifest row {row!r}: {exc}") from exc


def parse_manifest(text: str, path_key: str = "path") -> ArchiveManifest:
    """Accepts the bare-array form or {"version": N, "entries": [...]}."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestMalformed(f"manifest is not valid JSON: {exc}") from exc
    version = 1
    if isinstance(doc, dict):
        version = int(doc.get("version", 1))
        doc = doc.get("entries")
    if not isinstance(doc, list):
        raise ManifestMalformed("manifest must be a JSON array of records")
    return ArchiveManifest(entries=[_parse_entry(row, path_key) for row in doc], version=version)


def load_manifest(root) -> ArchiveManifest:
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise ManifestMissing(f"no manifest.json under {root}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_manifest(fh.read())


def filter_entries(
    entries: list[ManifestEntry],
    query: HistoryQuery,
    policy: MatchPolicy = MatchPolicy(),
) -> list[ManifestEntry]:
    """Radius + heading + date filter, newest first, capped at max_records."""
    kept = []
    for e in entries:
        if haversine_m(query.location, (e.lat, e.lon)) > policy.radius_m:
            continue
        if heading_delta_deg(e.heading, query.heading) > policy.heading_tol_deg:
            continue
        if query.before is not None and e.capture_date >= query.before:
            continue
        kept.append(e)
    kept.sort(key=lambda e: (e.capture_date, e.path), reverse=True)
    return kept[: query.max_records]


def query_archive(
    root,
    query: HistoryQuery,
    policy: MatchPolicy = MatchPolicy(),
) -> list[HistoricalRecord]:
    """Matching records from a local archive directory, newest first.

    Entries whose image file is missing or unreadable are skipped with a
    logged note rather than failing the query.
    """
    manifest = load_manifest(root)
    records = []
    for e in filter_entries(manifest.entries, query, policy):
        full = os.path.join(root, e.path)
        try:
            img = codecs.load_image(full)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable archive image %s: %s", full, exc)
            continue
        records.append(
            HistoricalRecord(
                image=img,
                capture_date=e.capture_date,
                location=(e.lat, e.lon),
                heading=e.heading,
                source="archive",
            )
        )
    return records


# ---------------------------------------------------------------------------
# Remote client


def _atomic_write(path: str, data: bytes) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class RemoteHistoryClient:
    """HTTP history client with an on-disk response cache.

    Query responses are keyed by (lat/lon rounded to 5 decimals, 45-degree
    heading bucket, date bound, record cap); images by their URL. Cache
    files are written atomically and only after a fully successful fetch,
    so a failed call never leaves partial cache state. Per-image fetch
    failures are skipped and counted in last_failures ("what succeeded plus
    a warning count"); last_network_requests says whether the previous
    query touched the network at all.
    """

    def __init__(self, endpoint: str, cache_dir=None, policy: MatchPolicy = MatchPolicy(), timeout: float = 10.0):
        self.endpoint = endpoint.rstrip("/")
        self.cache_dir = str(cache_dir) if cache_dir else None
        self.policy = policy
        self.timeout = timeout
        self.session = requests.Session()
        self.last_failures = 0
        self.last_network_requests = 0

    # -- cache paths

    def _query_key(self, query: HistoryQuery) -> str:
        lat, lon = query.location
        bucket = int(query.heading // 45.0) % 8
        before = query.before.isoformat() if query.before else "-"
        return f"lat={lat:.5f}&lon={lon:.5f}&hb={bucket}&before={before}&max={query.max_records}"

    def _query_cache_path(self, query: HistoryQuery) -> str | None:
        if not self.cache_dir:
            return None
        digest = hashlib.sha1(self._query_key(query).encode()).hexdigest()
        return os.path.join(self.cache_dir, "queries", digest + ".json")

    def _image_cache_path(self, url: str) -> str | None:
        if not self.cache_dir:
            return None
        digest = hashlib.sha1(url.encode()).hexdigest()
        return os.path.join(self.cache_dir, "images", digest + ".png")

    # -- network

    def _get(self, url: str, params=None) -> requests.Response:
        self.last_network_requests += 1
        try:
            return self.session.get(url, params=params, timeout=self.timeout)
        except requests.RequestException as exc:
            raise NetworkUnreachable(f"GET {url} failed: {exc}") from exc

    def _fetch_manifest(self, query: HistoryQuery) -> list[ManifestEntry]:
        cache_path = self._query_cache_path(query)
        if cache_path and os.path.exists(cache_path):
            with open(cache_path, "r", encoding="utf-8") as fh:
                return parse_manifest(fh.read(), path_key="image_url").entries
        lat, lon = query.location
        params = {
            "lat": f"{lat:.6f}",
            "lon": f"{lon:.6f}",
            "heading": f"{query.heading:.2f}",
            "max": str(query.max_records),
        }
        if query.before is not None:
            params["before"] = query.before.isoformat()
        resp = self._get(self.endpoint + "/history", params=params)
        if resp.status_code >= 500:
            raise NetworkUnreachable(f"history endpoint returned {resp.status_code}")
        if resp.status_code != 200:
            raise ProtocolError(f"history endpoint returned {resp.status_code}")
        try:
            entries = parse_manifest(resp.text, path_key="image_url").entries
        except ManifestMalformed as exc:
            raise ProtocolError(str(exc)) from exc
        if cache_path:
            _atomic_write(cache_path, resp.content)
        return entries

    def _fetch_image(self, url: str) -> RasterImage | None:
        cache_path = self._image_cache_path(url)
        if cache_path and os.path.exists(cache_path):
            with open(cache_path, "rb") as fh:
                data = fh.read()
            return codecs.decode_image(data, codecs.sniff_format(data))
        resp = self._get(url)
        if resp.status_code != 200:
            log.warning("image fetch %s returned %s", url, resp.status_code)
            return None
        try:
            img = codecs.decode_image(resp.content, codecs.sniff_format(resp.content))
        except ValueError as exc:
            log.warning("image fetch %s undecodable: %s", url, exc)
            return None
        if cache_path:
            _atomic_write(cache_path, resp.content)
        return img

    def query(self, query: HistoryQuery) -> list[HistoricalRecord]:
        """Matching records, newest first. Partial image failures are
        skipped and tallied in last_failures."""
        self.last_failures = 0
        self.last_network_requests = 0
        entries = self._fetch_manifest(query)
        # Re-apply the geometric filter so remote results obey the same
        # predicates as archive queries regardless of server behavior.
        entries = filter_entries(entries, query, self.policy)
        records = []
        for e in entries:
            img = self._fetch_image(e.path)
            if img is None:
                self.last_failures += 1
                continue
            records.append(
                HistoricalRecord(
                    image=img,
                    capture_date=e.capture_date,
                    location=(e.lat, e.lon),
                    heading=e.heading,
                    source="remote",
                )
            )
        return records


def query_remote(
    endpoint: str,
    query: HistoryQuery,
    cache_dir=None,
    policy: MatchPolicy = MatchPolicy(),
) -> list[HistoricalRecord]:
    """One-shot remote query; see RemoteHistoryClient for the cache rules."""
    return RemoteHistoryClient(endpoint, cache_dir=cache_dir, policy=policy).query(query)


# ---------------------------------------------------------------------------
# Route prefetch


@dataclass(frozen=True)
class PrefetchReport:
    fetched: int  # waypoints that needed the network
    cached: int  # waypoints served without any network traffic
    failed: int


def prefetch_route(
    target: str,
    waypoints: list[tuple[float, float, float]],
    max_records: int = 3,
    before: date | None = None,
    cache_dir=None,
    policy: MatchPolicy = MatchPolicy(),
) -> PrefetchReport:
    """Warm the history cache along a route of (lat, lon, heading) points.

    target is an http(s) endpoint or a local archive directory; local
    archives need no fetching, so their waypoints count as cached. The
    call is idempotent: a second run over a warm cache fetches nothing.
    """
    if not waypoints:
        raise InvalidRoute("route has no waypoints")
    remote = target.startswith("http://") or target.startswith("https://")
    client = RemoteHistoryClient(target, cache_dir=cache_dir, policy=policy) if remote else None
    fetched = cached = failed = 0
    for lat, lon, heading in waypoints:
        q = HistoryQuery(location=(lat, lon), heading=heading, max_records=max_records, before=before)
        try:
            if client is not None:
                client.query(q)
                if client.last_network_requests > 0:
                    fetched += 1
                else:
                    cached += 1
            else:
                query_archive(target, q, policy)
                cached += 1
        except (NetworkUnreachable, ProtocolError, ManifestMissing, ManifestMalformed) as exc:
            log.warning("prefetch failed at (%s, %s): %s", lat, lon, exc)
            failed += 1
    return PrefetchReport(fetched=fetched, cached=cached, failed=failed)
