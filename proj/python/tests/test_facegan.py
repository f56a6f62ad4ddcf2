import numpy as np
import pytest

import facegan


@pytest.fixture(scope="module")
def heads():
    return facegan.synth(subjects=6, modes=4, seed=3, grid=21)


def test_synth_is_deterministic(heads):
    again = facegan.synth(subjects=6, modes=4, seed=3, grid=21)
    assert len(heads["meshes"]) == 6
    for a, b in zip(heads["meshes"], again["meshes"]):
        assert np.array_equal(a.vertices, b.vertices)
    assert heads["template"].vertices.shape == (21 * 21, 3)


def test_mesh_round_trip(tmp_path, heads):
    m = heads["meshes"][0]
    facegan.save_obj(tmp_path / "m.obj", m)
    back = facegan.load_obj(tmp_path / "m.obj")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_missing_file_raises_data_error(tmp_path):
    with pytest.raises(facegan.DataError, match="nope.obj"):
        facegan.load_obj(tmp_path / "nope.obj")


def test_uv_round_trip(tmp_path, heads):
    meshes, _ = facegan.normalize(heads["meshes"][:1])
    meshes = meshes[0]
    layout = facegan.cylindrical_unwrap(heads["template"])
    errs = []
    for res in (32, 64):
        uv = facegan.rasterize_uv(meshes, layout, res)
        assert uv.array.shape == (3, res, res)
        assert uv.valid.all()
        errs.append(np.abs(facegan.sample_positions(uv, layout) - meshes.vertices).max())
    assert errs[1] < errs[0]
    facegan.save_uvmap(tmp_path / "a.uvf", uv)
    assert facegan.load_uvmap(tmp_path / "a.uvf") == uv


def test_uvmap_from_array():
    a = np.linspace(-1, 1, 3 * 4 * 4, dtype=np.float32).reshape(3, 4, 4)
    m = facegan.UVMap(a)
    assert np.array_equal(m.array, a)
    with pytest.raises(facegan.ShapeError):
        facegan.UVMap(a[0])


def test_metrics():
    zero = facegan.ced_auc_fr([0.0] * 10, x_max=0.01)
    assert zero.auc == pytest.approx(1.0)
    assert zero.fr == 0.0
    two = facegan.ced_auc_fr([0.0025, 0.0075], x_max=0.01)
    assert two.auc == pytest.approx(0.5)
    t = facegan.synth(subjects=3, modes=2, seed=1, grid=15)["meshes"]
    s = facegan.specificity(t, t)
    assert s.mean == 0.0
    assert facegan.rmse3d_translation(t[0], t[0]) == pytest.approx(0.0, abs=1e-12)


def test_latent_gaussian_sampling():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(40, 3)) * [1.0, 2.0, 0.5] + [0.1, -0.2, 0.3]
    g = facegan.fit_latent_gaussian(z)
    assert np.allclose(g.mean, z.mean(axis=0))
    assert np.allclose(g.covariance, np.cov(z.T, bias=False))
    s = g.sample(20000, seed=1)
    assert np.array_equal(s, g.sample(20000, seed=1))
    assert np.abs(s.mean(axis=0) - g.mean).max() < 4 * np.sqrt(np.diag(g.covariance).max() / 20000)


def test_pretrain_and_model(tmp_path, heads):
    prep = facegan.preprocess(heads["meshes"], heads["template"], resolution=32)
    maps = prep["maps"]
    cfg = "base_filters = 4\nlatent_dim = 4\nlr = 1e-3\npretrain_batch = 3\npretrain_epochs = 3\nseed = 5\n"
    hist = facegan.pretrain(maps, tmp_path / "d.ckpt", cfg)
    assert len(hist) == 3 and all(np.isfinite(hist))
    model = facegan.Model.load(tmp_path / "d.ckpt")
    assert model.phase == "pretrain"
    assert model.epoch == 3
    assert model.config["latent_dim"] == 4
    out = model.reconstruct(maps)
    assert len(out) == len(maps)
    assert np.all(np.abs(out[0].array) < 1)
    z = model.encode(maps)
    assert z.shape == (len(maps), 4)
    g = facegan.fit_latent_gaussian(z)
    face = model.decode(g.sample(1, seed=2)[0])
    assert face.array.shape == (3, 32, 32)
    assert model.decode(g.sample(1, seed=2)[0]) == face
    with pytest.raises(facegan.DataError):
        model.reconstruct(maps, label=1)
