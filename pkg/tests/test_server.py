import base64

import numpy as np
import pytest
from fastapi.testclient import TestClient

from chorovessel.hitl import EditEvent, Project, ProjectConfig, apply_events, start_round
from chorovessel.raster import mask_from_png_bytes, mask_to_png_bytes
from chorovessel.server import create_app
from chorovessel.synth import TreeSpec, generate


@pytest.fixture
def project_dir(tmp_path):
    p = Project(tmp_path / "proj", "api-test", ProjectConfig())
    p.save()
    for k in range(2):
        spec = TreeSpec(width=128, height=128, root=(16.0, 64.0), generations=2,
                        length_range=(45.0, 50.0), branch_angles_deg=(30.0, -30.0),
                        root_width=7.0, taper=0.8, seed=k)
        mask, img, _ = generate(spec)
        p.register_image(f"img{k}", img, gt_mask=mask)
    start_round(p, ["img0", "img1"])
    return p.dir


@pytest.fixture
def client(project_dir):
    return TestClient(create_app(project_dir))


def stroke_events(n=1, seq0=0):
    out = []
    for k in range(n):
        out.append({"seq": seq0 + k, "t_ms": 100 * (seq0 + k), "tool": "add",
                    "radius_px": 2.0,
                    "path": [[10.0 + 5 * k, 20.0], [30.0 + 5 * k, 22.0]]})
    return out


class TestReads:
    def test_project_summary(self, client):
        doc = client.get("/api/project").json()
        assert doc["schema"] == "hitl/1"
        assert len(doc["images"]) == 2
        assert doc["rounds"][0]["number"] == 1

    def test_round_state(self, client):
        doc = client.get("/api/rounds/1").json()
        assert doc["schema"] == "hitl/1"
        assert doc["status"] == {"img0": "proposed", "img1": "proposed"}
        assert doc["revisions"] == {"img0": 0, "img1": 0}

    def test_missing_round_404(self, client):
        assert client.get("/api/rounds/7").status_code == 404

    def test_base_modes(self, client):
        raw = client.get("/api/images/img0/base", params={"mode": "raw"})
        enh = client.get("/api/images/img0/base", params={"mode": "enhanced"})
        assert raw.status_code == enh.status_code == 200
        assert raw.headers["x-schema"] == "hitl/1"
        assert raw.content[:8] == b"\x89PNG\r\n\x1a\n"
        assert enh.content != raw.content
        assert client.get("/api/images/img0/base",
                          params={"mode": "sepia"}).status_code == 400

    def test_proposal_png(self, client):
        r = client.get("/api/images/img0/proposal")
        assert r.status_code == 200
        mask = mask_from_png_bytes(r.content)
        assert mask.width == 128

    def test_unknown_image_404(self, client):
        assert client.get("/api/images/ghost/proposal").status_code == 404


class TestEventFlow:
    def test_post_events_bumps_revision(self, client):
        r = client.post("/api/images/img0/events",
                        json={"events": stroke_events(), "revision": 0})
        assert r.status_code == 200
        assert r.json()["revision"] == 1
        log = client.get("/api/images/img0/events").json()
        assert len(log["events"]) == 1
        assert log["revision"] == 1

    def test_stale_revision_409(self, client):
        client.post("/api/images/img0/events",
                    json={"events": stroke_events(), "revision": 0})
        r = client.post("/api/images/img0/events",
                        json={"events": stroke_events(1, seq0=5), "revision": 0})
        assert r.status_code == 409

    def test_full_correction_round_trip(self, client):
        events = stroke_events(2)
        r = client.post("/api/images/img0/events",
                        json={"events": events, "revision": 0})
        assert r.status_code == 200
        proposal = mask_from_png_bytes(client.get("/api/images/img0/proposal").content)
        final = apply_events(proposal, [EditEvent.from_dict(e) for e in events])
        r = client.put("/api/images/img0/correction", json={
            "final_mask_png_base64": base64.b64encode(mask_to_png_bytes(final)).decode(),
            "active_ms": 1234,
            "revision": 1,
        })
        assert r.status_code == 200
        state = client.get("/api/rounds/1").json()
        assert state["status"]["img0"] == "corrected"

    def test_tampered_correction_422(self, client):
        proposal = mask_from_png_bytes(client.get("/api/images/img0/proposal").content)
        bits = proposal.bits.copy()
        bits[0, 0] ^= 1
        from chorovessel.raster import Mask

        r = client.put("/api/images/img0/correction", json={
            "final_mask_png_base64": base64.b64encode(
                mask_to_png_bytes(Mask(bits))).decode(),
            "active_ms": 0,
            "revision": 0,
        })
        assert r.status_code == 422

    def test_finalize_flow(self, client):
        for img in ("img0", "img1"):
            proposal = mask_from_png_bytes(
                client.get(f"/api/images/{img}/proposal").content)
            r = client.put(f"/api/images/{img}/correction", json={
                "final_mask_png_base64": base64.b64encode(
                    mask_to_png_bytes(proposal)).decode(),
                "active_ms": 0,
                "revision": 0,
            })
            assert r.status_code == 200
        r = client.post("/api/rounds/1/finalize")
        assert r.status_code == 200
        report = r.json()["report"]
        assert report["mean_dice_proposal_vs_corrected"] == 1.0
        got = client.get("/api/rounds/1/report").json()["report"]
        assert got == report

    def test_finalize_incomplete_409(self, client):
        assert client.post("/api/rounds/1/finalize").status_code == 409
