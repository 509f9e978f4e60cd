import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from skedit.cli import run
from skedit.conditioned_ldm import ConditionedDenoiser, LDMConfig, save_ldm
from skedit.edit_service import create_app
from skedit.pngio import decode_png8, decode_png16, encode_png8, encode_png16, from_b64, to_b64
from skedit.sketch_refiner import RefinerTrainConfig, RefinerUNet, save_refiner
from skedit.vae_gan import VAE, PatchDiscriminator, VAEConfig, save_vae

from conftest import circle_contour


def _const_refiner(bias: float) -> RefinerUNet:
    model = RefinerUNet(depth=2, base_channels=8)
    with torch.no_grad():
        model.out.weight.zero_()
        model.out.bias.fill_(bias)
    return model


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("svc")
    data = root / "data"
    assert run(["synth-data", "--out", str(data), "--n", "3", "--size", "32", "--seed", "11"]) == 0
    torch.manual_seed(0)
    save_refiner(
        _const_refiner(10.0), RefinerTrainConfig(depth=2, base_channels=8), root / "refiner.pt"
    )
    save_refiner(
        _const_refiner(-10.0),
        RefinerTrainConfig(depth=2, base_channels=8),
        root / "refiner_empty.pt",
    )
    save_vae(VAE(VAEConfig(base_channels=16)), PatchDiscriminator(), root / "vae.pt")
    save_ldm(
        ConditionedDenoiser(
            LDMConfig(base_channels=16, channel_mults=(1, 2), timesteps=50, ddim_steps=4)
        ),
        root / "ldm.pt",
    )
    return root


@pytest.fixture(scope="module")
def client(workspace):
    app = create_app(
        workspace / "data",
        refiner_path=workspace / "refiner.pt",
        vae_path=workspace / "vae.pt",
        ldm_path=workspace / "ldm.pt",
        save_dir=workspace / "saved",
    )
    return TestClient(app)


@pytest.fixture(scope="module")
def bare_client(workspace):
    return TestClient(create_app(workspace / "data"))


def _volume_id(client):
    return client.get("/api/volumes").json()[0]["id"]


def _sketch_b64():
    return to_b64(encode_png8(circle_contour(32, (16, 16), 8).astype(np.float64)))


class TestHealth:
    def test_ok_when_loaded(self, client):
        resp = client.get("/api/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert "skedit" in body["model_versions"]

    def test_503_when_models_missing(self, bare_client):
        resp = bare_client.get("/api/health")
        assert resp.status_code == 503
        assert set(resp.json()["detail"]["missing"]) == {"refiner", "vae", "ldm"}


class TestVolumes:
    def test_listing_matches_dataset(self, client, workspace):
        body = client.get("/api/volumes").json()
        on_disk = sorted(p.name for p in (workspace / "data").glob("phantom_*"))
        assert sorted(v["id"] for v in body) == on_disk
        for v in body:
            assert v["slices"] == 1
            assert len(v["spacing"]) == 3
            assert v["modality"] == "MRI"

    def test_slice_png_round_trip(self, client, workspace):
        vid = _volume_id(client)
        resp = client.get(f"/api/volumes/{vid}/slices/0")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        img = decode_png16(resp.content)
        assert img.shape == (32, 32)
        assert resp.content == (workspace / "data" / vid / "slice_0000.png").read_bytes()

    def test_unknown_volume_404(self, client):
        assert client.get("/api/volumes/nope/slices/0").status_code == 404

    def test_slice_out_of_range_404(self, client):
        vid = _volume_id(client)
        assert client.get(f"/api/volumes/{vid}/slices/99").status_code == 404


class TestRefine:
    def test_returns_soft_and_binary(self, client):
        resp = client.post(
            "/api/refine",
            json={"volume_id": _volume_id(client), "slice_index": 0, "sketch": _sketch_b64()},
        )
        assert resp.status_code == 200
        body = resp.json()
        soft = decode_png8(from_b64(body["soft"]))
        hard = decode_png8(from_b64(body["binary"]))
        assert soft.shape == hard.shape == (32, 32)
        assert set(np.unique(hard)) <= {0.0, 1.0}
        assert "model_versions" in body

    def test_deterministic(self, client):
        req = {"volume_id": _volume_id(client), "slice_index": 0, "sketch": _sketch_b64()}
        a = client.post("/api/refine", json=req).json()
        b = client.post("/api/refine", json=req).json()
        assert a == b

    def test_shape_mismatch_400(self, client):
        bad = to_b64(encode_png8(np.zeros((16, 16))))
        resp = client.post(
            "/api/refine",
            json={"volume_id": _volume_id(client), "slice_index": 0, "sketch": bad},
        )
        assert resp.status_code == 400

    def test_503_without_refiner(self, bare_client):
        resp = bare_client.post(
            "/api/refine", json={"volume_id": "x", "slice_index": 0, "sketch": _sketch_b64()}
        )
        assert resp.status_code == 503

    def test_missing_field_422(self, client):
        assert client.post("/api/refine", json={"volume_id": "x"}).status_code == 422


class TestEdit:
    def _req(self, client, **extra):
        req = {
            "volume_id": _volume_id(client),
            "slice_index": 0,
            "sketch": _sketch_b64(),
            "sampler_steps": 4,
        }
        req.update(extra)
        return req

    def test_success_payload(self, client, workspace):
        resp = client.post("/api/edit", json=self._req(client, seed=1))
        assert resp.status_code == 200
        body = resp.json()
        edited = decode_png16(from_b64(body["edited"]))
        assert edited.shape == (32, 32)
        interior = decode_png8(from_b64(body["interior_mask"]))
        assert set(np.unique(interior)) <= {0.0, 1.0}
        assert decode_png16(from_b64(body["reference_map"])).shape == (32, 32)
        assert decode_png8(from_b64(body["difference_map"])).shape == (32, 32)
        assert body["difference_scale"] > 0
        for key in ("nrmse", "ssim", "psnr"):
            assert np.isfinite(body["metrics"][key])
        assert body["seed"] == 1
        saved = workspace / "saved" / f"{self._req(client)['volume_id']}_0_1_edited.png"
        assert saved.is_file()
        assert saved.read_bytes() == from_b64(body["edited"])

    def test_seed_determinism(self, client):
        a = client.post("/api/edit", json=self._req(client, seed=7)).json()
        b = client.post("/api/edit", json=self._req(client, seed=7)).json()
        assert a["edited"] == b["edited"]
        c = client.post("/api/edit", json=self._req(client, seed=8)).json()
        assert c["edited"] != a["edited"]

    def test_open_contour_422(self, workspace):
        app = create_app(
            workspace / "data",
            refiner_path=workspace / "refiner_empty.pt",
            vae_path=workspace / "vae.pt",
            ldm_path=workspace / "ldm.pt",
        )
        local = TestClient(app)
        resp = local.post("/api/edit", json=self._req(local))
        assert resp.status_code == 422
        assert resp.json()["detail"]["error"] == "OpenContour"

    def test_unknown_volume_404(self, client):
        resp = client.post("/api/edit", json=self._req(client, volume_id="nope"))
        assert resp.status_code == 404

    def test_sketch_shape_mismatch_400(self, client):
        bad = to_b64(encode_png8(np.zeros((16, 16))))
        resp = client.post("/api/edit", json=self._req(client, sketch=bad))
        assert resp.status_code == 400

    def test_503_without_models(self, bare_client):
        resp = bare_client.post(
            "/api/edit", json={"volume_id": "x", "slice_index": 0, "sketch": _sketch_b64()}
        )
        assert resp.status_code == 503

    def test_chained_edit_uses_base_image(self, client):
        first = client.post("/api/edit", json=self._req(client, seed=2)).json()
        chained = client.post(
            "/api/edit", json=self._req(client, seed=2, base_image=first["edited"])
        )
        assert chained.status_code == 200
        # reference map is built from the supplied base, not the stored slice
        base = decode_png16(from_b64(first["edited"]))
        ref = decode_png16(from_b64(chained.json()["reference_map"]))
        interior = decode_png8(from_b64(chained.json()["interior_mask"])).astype(bool)
        outside = ~interior
        assert np.allclose(ref[outside], base[outside], atol=2 / 65535)

    def test_base_image_shape_mismatch_400(self, client):
        bad = to_b64(encode_png16(np.zeros((16, 16))))
        resp = client.post("/api/edit", json=self._req(client, base_image=bad))
        assert resp.status_code == 400


def test_cors_headers_present(client):
    resp = client.get("/api/health", headers={"Origin": "http://localhost:5173"})
    assert resp.headers.get("access-control-allow-origin") == "*"
