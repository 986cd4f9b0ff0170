from __future__ import annotations

import math
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifejournal.errors import InvalidCoordinate, MissingFixture, ProviderUnavailable
from lifejournal.geo import (
    ContextCache,
    FixtureMapProvider,
    GridKey,
    GridProjection,
    HttpMapProvider,
    SingleFlight,
    build_map_request,
    cache_stats,
    grid_key,
    make_png,
    png_size,
    png_text,
)


class TestGridKey:
    def test_origin(self):
        assert grid_key(0.0, 0.0).render() == "g:0:0"

    def test_ten_metres_apart_share_a_cell(self):
        # x = lon * 111320 at the equator: 0.0001 deg -> 11.132 m, 0.0002 deg -> 22.264 m
        a, b = 0.0001, 0.0001 + 10 / 111_320
        assert 0 <= a * 111_320 < 100 and 0 <= b * 111_320 < 100
        assert grid_key(0.0, a) == grid_key(0.0, b)

    def test_east_offset(self):
        assert 0.001 * 111_320 == pytest.approx(111.32)
        assert grid_key(0.0, 0.001).render() == "g:1:0"

    def test_parse_roundtrip(self):
        assert GridKey.parse("g:-3:7") == GridKey(-3, 7)
        with pytest.raises(ValueError):
            GridKey.parse("3:7")

    @pytest.mark.parametrize("lat, lon", [(91, 0), (0, -180), (float("nan"), 0), (0, float("inf"))])
    def test_invalid_coordinates(self, lat, lon):
        with pytest.raises(InvalidCoordinate):
            grid_key(lat, lon)

    def test_reference_latitude_scales_x(self):
        proj = GridProjection(60.0)
        # at 60 deg one degree of longitude spans half as many metres
        assert proj.project(60.0, 0.002)[0] == pytest.approx(0.002 * 111_320 * 0.5)

    @given(
        st.floats(-60, 60), st.floats(-179, 179),
        st.floats(-0.01, 0.01), st.floats(-0.01, 0.01),
        st.floats(-60, 60),
    )
    def test_far_points_get_distinct_keys(self, lat, lon, dlat, dlon, ref):
        proj = GridProjection(ref)
        x1, y1 = proj.project(lat, lon)
        x2, y2 = proj.project(lat + dlat, lon + dlon)
        if math.hypot(x2 - x1, y2 - y1) >= 100 * math.sqrt(2) + 1e-6:
            assert proj.key(lat, lon) != proj.key(lat + dlat, lon + dlon)

    @given(st.floats(-80, 80), st.floats(-179, 179), st.floats(-80, 80))
    def test_deterministic_and_centroid_in_cell(self, lat, lon, ref):
        proj = GridProjection(ref)
        key = proj.key(lat, lon)
        assert key == proj.key(lat, lon)
        clat, clon = proj.centroid(key)
        assert proj.key(clat, clon) == key


class TestMapRequest:
    def test_snapped_to_centroid(self):
        proj = GridProjection(22.3)
        a = build_map_request(22.30001, 114.17001, proj)
        b = build_map_request(22.30002, 114.17003, proj)
        assert a.key == b.key and a.center == b.center == proj.centroid(a.key)

    def test_fixed_size_and_zoom(self):
        req = build_map_request(10.0, 10.0)
        assert req.size_px == (500, 500)
        assert req.zoom == 18
        # ground resolution at zoom 18 is ~0.6 m/px at the equator, so 500 px ~ 250-300 m
        metres_per_px = 156_543.03 * math.cos(math.radians(10.0)) / 2**18
        assert 240 <= 500 * metres_per_px <= 300


class TestFixtureProvider:
    def test_serves_bytes_verbatim(self, tmp_path):
        png = make_png(text={"Description": "A park."})
        (tmp_path / "g:1:2.png").write_bytes(png)
        req = build_map_request(*GridProjection().centroid(GridKey(1, 2)))
        assert req.key == GridKey(1, 2)
        assert FixtureMapProvider(tmp_path).fetch(req) == png

    def test_missing_fixture_names_key(self, tmp_path):
        req = build_map_request(*GridProjection().centroid(GridKey(4, 5)))
        with pytest.raises(MissingFixture, match="g:4:5"):
            FixtureMapProvider(tmp_path).fetch(req)


def test_png_metadata_roundtrip():
    png = make_png(40, 30, text={"Description": "Café on a square", "Key": "g:0:0"})
    assert png_size(png) == (40, 30)
    assert png_text(png) == {"Description": "Café on a square", "Key": "g:0:0"}
    assert png_text(b"not a png") == {}


@pytest.fixture
def map_server():
    """Stub static-map endpoint: fails ``fail_first`` requests with 503, then serves a PNG."""
    state = {"requests": [], "fail_first": 0}
    png = make_png(text={"Description": "stub"})

    class Handler(BaseHTTPRequestHandler):
        def do_GET(self):
            state["requests"].append(self.path)
            if len(state["requests"]) <= state["fail_first"]:
                self.send_response(503)
                self.end_headers()
                return
            self.send_response(200)
            self.send_header("Content-Type", "image/png")
            self.end_headers()
            self.wfile.write(png)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state["url"] = f"http://127.0.0.1:{server.server_address[1]}/staticmap"
    state["png"] = png
    yield state
    server.shutdown()
    server.server_close()


class TestHttpProvider:
    def test_query_parameters(self, map_server):
        provider = HttpMapProvider(map_server["url"], api_key="k", backoff_s=0)
        req = build_map_request(22.3, 114.17, GridProjection(22.3))
        assert provider.fetch(req) == map_server["png"]
        query = parse_qs(urlparse(map_server["requests"][0]).query)
        assert query["zoom"] == ["18"]
        assert query["size"] == ["500x500"]
        assert query["key"] == ["k"]
        lat, lon = map(float, query["center"][0].split(","))
        assert (lat, lon) == pytest.approx(req.center, abs=1e-6)

    def test_retries_server_errors(self, map_server):
        map_server["fail_first"] = 2
        provider = HttpMapProvider(map_server["url"], retries=2, backoff_s=0)
        assert provider.fetch(build_map_request(1.0, 1.0)) == map_server["png"]
        assert len(map_server["requests"]) == 3

    def test_gives_up_after_bounded_retries(self, map_server):
        map_server["fail_first"] = 10
        provider = HttpMapProvider(map_server["url"], retries=2, backoff_s=0)
        with pytest.raises(ProviderUnavailable):
            provider.fetch(build_map_request(1.0, 1.0))
        assert len(map_server["requests"]) == 3

    def test_connection_refused(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        provider = HttpMapProvider(f"http://127.0.0.1:{port}/map", retries=1, backoff_s=0, timeout_s=2)
        with pytest.raises(ProviderUnavailable, match="2 attempts"):
            provider.fetch(build_map_request(1.0, 1.0))


class TestContextCache:
    def test_empty(self, tmp_path):
        cache = ContextCache(tmp_path / "c.tsv")
        assert cache.get("g:0:0") is None
        assert len(cache) == 0

    def test_put_get(self):
        cache = ContextCache()
        cache.put(GridKey(1, 2), "a park")
        assert cache.get("g:1:2") == "a park"
        assert GridKey(1, 2) in cache

    def test_survives_restart(self, tmp_path):
        path = tmp_path / "cache.tsv"
        cache = ContextCache(path)
        cache.reference_lat = 22.3
        cache.put("g:1:2", "line one\nline\ttwo \\ end")
        cache.put("g:1:2", "replaced")
        cache.put("g:3:4", "multi\nline\ttext \\ here")
        reopened = ContextCache(path)
        assert reopened.get("g:1:2") == "replaced"
        assert reopened.get("g:3:4") == "multi\nline\ttext \\ here"
        assert reopened.reference_lat == 22.3
        # reopening compacts the duplicate record
        assert cache_stats(path).records == 2

    def test_reference_latitude_is_pinned(self):
        cache = ContextCache()
        cache.reference_lat = 10.0
        cache.reference_lat = 10.0
        with pytest.raises(ValueError):
            cache.reference_lat = 11.0

    def test_stats_and_clear(self, tmp_path):
        path = tmp_path / "cache.tsv"
        assert cache_stats(path).records == 0
        cache = ContextCache(path)
        for i in range(7):
            cache.put(f"g:{i}:0", f"cell {i}")
        cache.put("g:0:0", "again")
        stats = cache_stats(path)
        assert (stats.records, stats.distinct_cells) == (8, 7)
        cache.clear()
        assert cache_stats(path).distinct_cells == 0
        assert len(ContextCache(path)) == 0

    @given(st.dictionaries(st.from_regex(r"g:-?\d{1,3}:-?\d{1,3}", fullmatch=True), st.text(min_size=1), max_size=8))
    def test_memory_get_after_put(self, entries):
        cache = ContextCache()
        for k, v in entries.items():
            cache.put(k, v)
        assert all(cache.get(k) == v for k, v in entries.items())


def test_single_flight_coalesces():
    flight = SingleFlight()
    started = threading.Event()
    release = threading.Event()
    calls = []

    def slow():
        calls.append(1)
        started.set()
        release.wait(5)
        return "done"

    results = []
    leader = threading.Thread(target=lambda: results.append(flight.do("k", slow)))
    leader.start()
    started.wait(5)
    followers = [threading.Thread(target=lambda: results.append(flight.do("k", slow))) for _ in range(3)]
    for t in followers:
        t.start()
    time.sleep(0.2)  # let the followers block on the in-flight call
    release.set()
    for t in [leader, *followers]:
        t.join(5)
    assert results == ["done"] * 4
    assert len(calls) == 1
