import math
import os
import subprocess

import numpy as np
import pytest

import acmseg

TINY = dict(base_width=4, n_vss=1, num_classes=3, input_size=32, depths=(1, 1, 1), d_state=4)


def test_haar_roundtrip_and_energy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 6, 8))
    packed = acmseg.dwt2_haar(x)
    assert packed.shape == (2, 3, 4, 3, 4)
    np.testing.assert_allclose(acmseg.idwt2_haar(packed), x, atol=1e-12)
    assert math.isclose((x**2).sum(), (packed**2).sum(), rel_tol=1e-12)
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    bands = acmseg.dwt2_haar(np.array([[[[a, b], [c, d]]]]))
    np.testing.assert_allclose(bands.ravel(), [5.0, -2.0, -1.0, 0.0])


def test_selective_scan_matches_numpy():
    rng = np.random.default_rng(1)
    S, L, d, N = 2, 7, 3, 4
    u = rng.standard_normal((S, L, d))
    delta = rng.uniform(0.05, 0.5, (S, L, d))
    A = -rng.uniform(0.2, 1.5, (1, d, N))
    B = rng.standard_normal((S, L, N))
    C = rng.standard_normal((S, L, N))
    D = rng.standard_normal((1, d))
    y = acmseg.selective_scan(u, delta, A, B, C, D)
    ref = np.zeros_like(u)
    for s in range(S):
        h = np.zeros((d, N))
        for t in range(L):
            h = np.exp(delta[s, t][:, None] * A[0]) * h + delta[s, t][:, None] * B[s, t][None] * u[s, t][:, None]
            ref[s, t] = h @ C[s, t] + D[0] * u[s, t]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_scan_orders():
    assert acmseg.scan_order(0, 2, 2) == [0, 1, 2, 3]
    assert acmseg.scan_order(1, 2, 2) == [0, 2, 1, 3]
    x = np.arange(12, dtype=np.float64).reshape(1, 1, 3, 4)
    np.testing.assert_array_equal(acmseg.scan_merge(acmseg.scan_expand(x), 3, 4), 4 * x)


def test_metrics():
    p = np.zeros((4, 4), bool)
    p[:2, :2] = True
    g = np.zeros((4, 4), bool)
    g.flat[[0, 1, 4, 8, 9, 10]] = True
    assert acmseg.dsc(p, g) == pytest.approx(0.6, abs=1e-15)
    a = np.zeros((8, 8), bool)
    b = np.zeros((8, 8), bool)
    a[0, 0] = True
    b[3, 4] = True
    assert acmseg.hd95(a, b) == 5.0
    assert acmseg.hd95(a, np.zeros((8, 8), bool)) is None


def test_uniform_logits_ce():
    target = np.random.default_rng(2).integers(0, 5, (2, 4, 4)).astype(np.float64)
    assert abs(acmseg.loss(np.zeros((2, 5, 4, 4)), target, alpha=0.0) - math.log(5)) < 1e-9


def test_model_forward_and_checkpoint(tmp_path):
    m = acmseg.Model(TINY, seed=3)
    assert m.param_count() == acmseg.param_count(TINY)
    x = np.random.default_rng(3).uniform(0, 1, (2, 3, 32, 32)).astype(np.float32)
    m.eval()
    y = m(x)
    assert y.shape == (2, 3, 32, 32) and y.dtype == np.float32
    feats = m.encode(x)
    assert feats["f4"].shape == (2, 64, 2, 2)
    path = str(tmp_path / "m.acmc")
    m.save(path)
    back = acmseg.Model.load(path)
    back.eval()
    np.testing.assert_array_equal(back(x), y)
    assert back.config["base_width"] == 4
    with pytest.raises(KeyError):
        acmseg.Model({"bogus": 1})
    with pytest.raises(acmseg.AcmError):
        acmseg.Model({"input_size": 40})


def test_fit_reduces_loss():
    images, masks = zip(*(acmseg.phantom(7, i, 32, 3) for i in range(4)))
    m = acmseg.Model(TINY, seed=0)
    losses = m.fit(np.stack(images), np.stack(masks), steps=20, batch=4, lr=2e-3)
    assert len(losses) == 20 and all(map(math.isfinite, losses))
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
    report = m.evaluate(np.stack(images), np.stack(masks))
    assert 0.0 <= report["mean_dsc"] <= 1.0


def test_tensor_files_and_cli(tmp_path):
    t = np.random.default_rng(4).standard_normal((3, 4, 5)).astype(np.float32)
    p = str(tmp_path / "t.tns")
    acmseg.write_tensor(p, t)
    np.testing.assert_array_equal(acmseg.read_tensor(p), t)
    with open(p, "rb") as f:
        assert f.read(4) == b"ACMT"
    rc, out, err = acmseg.run_cli(["nonsense"])
    assert rc == 1 and "Usage" in err
    assert acmseg.gen_phantoms(1, 10, 32, 3, str(tmp_path / "data")) == 10
    assert (tmp_path / "data" / "manifest.tsv").exists()


@pytest.mark.skipif("ACMSEG_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("".join(f"model.{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}\n" for k, v in TINY.items()))
    out = subprocess.run([os.environ["ACMSEG_CLI"], "param-count", str(cfg)], capture_output=True, text=True)
    assert out.returncode == 0
    assert int(out.stdout) == acmseg.param_count(TINY)
