from __future__ import annotations

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gaze2seg.service import create_app
from gaze2seg.volume_io import MaskVolume, load_mvol, mvol_bytes, save_mvol


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


@pytest.fixture
def session(client, small_case):
    r = client.post(
        "/sessions?sigma_px=6",
        content=mvol_bytes(small_case.volume),
        headers={"content-type": "application/octet-stream"},
    )
    assert r.status_code == 201
    return r.json()


def dwell_samples(x, y, z, n=30, t0=0.0):
    return [
        {"t_ms": t0 + i * 1000.0 / 90.0, "sx": float(x), "sy": float(y), "slice": z}
        for i in range(n)
    ]


def gaze_at_organ(client, sid, small_case, z, n=90):
    lo, hi = small_case.gt.foreground_extent_z()
    assert lo <= z <= hi
    ys, xs = np.nonzero(small_case.gt.slice(z))
    cx, cy = float(xs.mean()), float(ys.mean())
    r = client.post(f"/sessions/{sid}/gaze", json={"samples": dwell_samples(cx, cy, z, n)})
    assert r.status_code == 200
    return r.json()


class TestSessions:
    def test_create_returns_metadata(self, session, small_case):
        assert session["dims"] == list(small_case.volume.dims)
        assert session["slices"] == small_case.volume.nz
        assert len(session["id"]) >= 16

    def test_create_via_paths_with_gt(self, client, small_case, tmp_path):
        vp, gp = tmp_path / "v.mvol", tmp_path / "g.mvol"
        save_mvol(small_case.volume, vp)
        save_mvol(small_case.gt, gp)
        r = client.post(
            "/sessions", json={"volume_path": str(vp), "gt_path": str(gp), "config": {"sigma_px": 6}}
        )
        assert r.status_code == 201
        assert r.json()["evaluation_mode"] is True

    def test_invalid_config_422(self, client, small_case):
        r = client.post(
            "/sessions?sigma_px=-2",
            content=mvol_bytes(small_case.volume),
            headers={"content-type": "application/octet-stream"},
        )
        assert r.status_code == 422

    def test_missing_volume_404(self, client):
        r = client.post("/sessions", json={"volume_path": "/nonexistent.mvol"})
        assert r.status_code == 404

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404
        assert client.post("/sessions/nope/gaze", json={"samples": []}).status_code == 404
        assert client.get("/sessions/nope/overlay/0/heatmap").status_code == 404

    def test_delete(self, client, session):
        sid = session["id"]
        assert client.delete(f"/sessions/{sid}").status_code == 204
        assert client.get(f"/sessions/{sid}").status_code == 404
        assert client.delete(f"/sessions/{sid}").status_code == 404

    def test_sessions_independent(self, client, small_case):
        body = mvol_bytes(small_case.volume)
        hdr = {"content-type": "application/octet-stream"}
        a = client.post("/sessions?sigma_px=6", content=body, headers=hdr).json()["id"]
        b = client.post("/sessions?sigma_px=6", content=body, headers=hdr).json()["id"]
        client.post(f"/sessions/{a}/gaze", json={"samples": dwell_samples(30, 30, 5, 10)})
        assert client.get(f"/sessions/{b}").json()["gazed_slices"] == []
        assert client.get(f"/sessions/{a}").json()["gazed_slices"] == [5]


class TestGaze:
    def test_accept_counts(self, client, session):
        sid = session["id"]
        r = client.post(f"/sessions/{sid}/gaze", json={"samples": dwell_samples(30, 30, 3, 30)})
        assert r.json() == {"accepted": 30, "clamped": 0}

    def test_clamped_counted(self, client, session):
        sid = session["id"]
        batch = dwell_samples(30, 30, 3, 28) + [
            {"t_ms": 900.0, "sx": -5.0, "sy": 10.0, "slice": 3},
            {"t_ms": 910.0, "sx": 1000.0, "sy": 10.0, "slice": 3},
        ]
        r = client.post(f"/sessions/{sid}/gaze", json={"samples": batch})
        assert r.json() == {"accepted": 30, "clamped": 2}

    def test_slice_out_of_range_400(self, client, session):
        sid = session["id"]
        r = client.post(
            f"/sessions/{sid}/gaze",
            json={"samples": [{"t_ms": 0, "sx": 1, "sy": 1, "slice": 999}]},
        )
        assert r.status_code == 400

    def test_malformed_sample_reports_index(self, client, session):
        sid = session["id"]
        batch = dwell_samples(30, 30, 3, 2) + [{"t_ms": 0, "sx": "oops"}]
        r = client.post(f"/sessions/{sid}/gaze", json={"samples": batch})
        assert r.status_code == 400
        assert "index 2" in r.json()["detail"]


class TestOverlays:
    def test_heatmap_matches_promptgen_argmax(self, client, session, small_case):
        from gaze2seg.gaze import GazeSample, GazeStream
        from gaze2seg.promptgen import accumulate_heatmap
        from PIL import Image
        import io

        sid = session["id"]
        gaze_at_organ(client, sid, small_case, z=20)
        r = client.get(f"/sessions/{sid}/overlay/20/heatmap")
        assert r.status_code == 200 and r.headers["content-type"] == "image/png"
        png = np.asarray(Image.open(io.BytesIO(r.content)))
        assert png.any()

        ys, xs = np.nonzero(small_case.gt.slice(20))
        cx, cy = float(xs.mean()), float(ys.mean())
        stream = GazeStream(tuple(GazeSample(i, cx, cy, 20) for i in range(90)), "live")
        hm = accumulate_heatmap(stream, small_case.volume.dims[:2], 6.0)
        assert np.unravel_index(png.argmax(), png.shape) == np.unravel_index(
            hm.values.argmax(), hm.values.shape
        )

    def test_etag_stable_then_changes(self, client, session, small_case):
        sid = session["id"]
        gaze_at_organ(client, sid, small_case, z=20)
        r1 = client.get(f"/sessions/{sid}/overlay/20/heatmap")
        etag = r1.headers["etag"]
        r2 = client.get(f"/sessions/{sid}/overlay/20/heatmap", headers={"if-none-match": etag})
        assert r2.status_code == 304
        r3 = client.get(f"/sessions/{sid}/overlay/20/heatmap")
        assert r3.headers["etag"] == etag and r3.content == r1.content
        gaze_at_organ(client, sid, small_case, z=20, n=5)
        r4 = client.get(f"/sessions/{sid}/overlay/20/heatmap", headers={"if-none-match": etag})
        assert r4.status_code == 200
        assert r4.headers["etag"] != etag

    def test_coarse_without_gaze_409(self, client, session):
        sid = session["id"]
        r = client.get(f"/sessions/{sid}/overlay/5/coarse")
        assert r.status_code == 409

    def test_segmentation_before_segment_409(self, client, session):
        sid = session["id"]
        assert client.get(f"/sessions/{sid}/overlay/5/segmentation").status_code == 409

    def test_unknown_layer_404(self, client, session):
        assert client.get(f"/sessions/{session['id']}/overlay/5/glitter").status_code == 404

    def test_base_slice_endpoints(self, client, session):
        sid = session["id"]
        png = client.get(f"/sessions/{sid}/slice/5")
        assert png.status_code == 200 and png.headers["content-type"] == "image/png"
        raw = client.get(
            f"/sessions/{sid}/slice/5", headers={"accept": "application/octet-stream"}
        )
        nx, ny = 64, 64
        assert len(raw.content) == nx * ny * 2
        assert raw.headers["x-dtype"] == "int16"


class TestSegment:
    def test_lifecycle_with_interpolation(self, client, session, small_case):
        sid = session["id"]
        gaze_at_organ(client, sid, small_case, z=14)
        gaze_at_organ(client, sid, small_case, z=24)
        r = client.post(f"/sessions/{sid}/segment", json={"strategy": "all_slices"})
        assert r.status_code == 200
        out = r.json()
        assert out["prompted_slices"] == [14, 24]
        tags = {s["slice"]: s["tag"] for s in out["slices"]}
        assert tags[14] == tags[24] == "segmented"
        assert all(tags[z] == "interpolated" for z in range(15, 24))
        assert tags[0] == tags[39] == "empty"

        r = client.get(f"/sessions/{sid}/masklet")
        assert r.status_code == 200
        mv = load_mvol(r.content)
        assert isinstance(mv, MaskVolume)
        assert mv.dims == small_case.volume.dims

        seg_overlay = client.get(f"/sessions/{sid}/overlay/14/segmentation")
        interp_overlay = client.get(f"/sessions/{sid}/overlay/18/interpolated")
        assert seg_overlay.status_code == 200 and interp_overlay.status_code == 200

    def test_no_gaze_409(self, client, session):
        r = client.post(f"/sessions/{session['id']}/segment", json={"strategy": "all_slices"})
        assert r.status_code == 409

    def test_dice_reported_in_evaluation_mode(self, client, small_case, tmp_path):
        vp, gp = tmp_path / "v.mvol", tmp_path / "g.mvol"
        save_mvol(small_case.volume, vp)
        save_mvol(small_case.gt, gp)
        r = client.post(
            "/sessions", json={"volume_path": str(vp), "gt_path": str(gp), "config": {"sigma_px": 6}}
        )
        sid = r.json()["id"]
        lo, hi = small_case.gt.foreground_extent_z()
        for z in range(lo, hi + 1, 3):
            gaze_at_organ(client, sid, small_case, z=z, n=40)
        out = client.post(f"/sessions/{sid}/segment", json={"strategy": "all_slices"}).json()
        assert 0.0 <= out["dice"] <= 1.0
        assert out["dice"] > 0.5

    def test_failed_segment_keeps_previous_masklet(self, client, session, small_case):
        sid = session["id"]
        gaze_at_organ(client, sid, small_case, z=20)
        assert client.post(f"/sessions/{sid}/segment", json={}).status_code == 200
        before = client.get(f"/sessions/{sid}/masklet").content

        r = client.post(
            f"/sessions/{sid}/segment",
            json={"backend": {"kind": "external", "url": "http://127.0.0.1:1",
                              "retries": 0, "timeout_s": 0.2}},
        )
        assert r.status_code == 502
        after = client.get(f"/sessions/{sid}/masklet").content
        assert after == before

    def test_masklet_404_before_segment(self, client, session):
        assert client.get(f"/sessions/{session['id']}/masklet").status_code == 404

    def test_explicit_slices(self, client, session, small_case):
        sid = session["id"]
        gaze_at_organ(client, sid, small_case, z=18)
        gaze_at_organ(client, sid, small_case, z=22)
        out = client.post(
            f"/sessions/{sid}/segment", json={"strategy": "all_slices", "slices": [18]}
        ).json()
        assert out["prompted_slices"] == [18]
