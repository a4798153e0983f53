import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from rmgp.cli import main
from rmgp.mesh import icosphere, write_off

FIXTURES = Path(__file__).parent / "fixtures"


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def circle_config(tmp_path, **extra):
    doc = {"manifold": {"circle": {"levels": 5000}}, "hyperparameters": {"sigma2": 1, "kappa": 0.5, "nu": 0.5}}
    doc.update(extra)
    return write_json(tmp_path / "c.json", doc)


@pytest.fixture(scope="module")
def ico_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ico")
    write_off(icosphere(3), d / "ico.off")
    return d


def mesh_config(d, **extra):
    doc = {"manifold": {"mesh": {"path": "ico.off", "eigenpairs": 16}},
           "hyperparameters": {"sigma2": 1, "kappa": 0.5, "nu": 1.5}}
    doc.update(extra)
    return write_json(d / "m.json", doc)


# --- kernel -----------------------------------------------------------------


def test_kernel_value_at_coincident_points(tmp_path, capsys):
    assert main(["kernel", "--config", circle_config(tmp_path), "0", "0"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(1.0, abs=1e-14)


def test_kernel_value_quarter_turn(tmp_path, capsys):
    cfg = circle_config(tmp_path)
    assert main(["kernel", "--config", cfg, "0", "0.25"]) == 0
    out = capsys.readouterr().out.strip()
    assert float(out) == pytest.approx(0.73079, abs=5e-5)
    assert len(out.replace("0.", "", 1).lstrip("0")) >= 16  # 17 significant digits
    assert main(["kernel", "--config", cfg, "0", "0.25", "--mode", "closed"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(math.cosh(0.5) / math.cosh(1), rel=1e-14)


def test_kernel_grid(tmp_path, capsys):
    (tmp_path / "g.csv").write_text("point\n0\n0.25\n0.5\n")
    assert main(["kernel", "--config", circle_config(tmp_path), "--grid", str(tmp_path / "g.csv")]) == 0
    K = np.loadtxt(capsys.readouterr().out.splitlines(), delimiter=",")
    assert K.shape == (3, 3) and np.allclose(K, K.T)


def test_kernel_torus_and_sphere_points(tmp_path, capsys):
    cfg = write_json(tmp_path / "t.json", {"manifold": {"torus": {"d": 2, "max_freq": 10}},
                                           "hyperparameters": {"nu": 1.5, "kappa": 0.3}})
    assert main(["kernel", "--config", cfg, "0.1,0.2", "0.3,0.9"]) == 0
    spec = float(capsys.readouterr().out)
    assert main(["kernel", "--config", cfg, "0.1,0.2", "0.3,0.9", "--mode", "periodic"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(spec, abs=1e-3)
    cfg = write_json(tmp_path / "s.json", {"manifold": {"sphere": {"d": 2, "levels": 20}},
                                           "hyperparameters": {"nu": "inf", "kappa": 0.5}})
    assert main(["kernel", "--config", cfg, "0,0,2", "0,0,1"]) == 0  # renormalized
    assert float(capsys.readouterr().out) == pytest.approx(1.0, abs=1e-12)


def test_kernel_parse_errors(tmp_path, capsys):
    cfg = write_json(tmp_path / "t.json", {"manifold": {"torus": {"d": 2, "max_freq": 3}}})
    assert main(["kernel", "--config", cfg, "0.1", "0.2,0.3"]) == 2
    assert main(["kernel", "--config", cfg, "a,b"]) == 2


def test_naive_mode_on_mesh_is_unsupported(ico_dir, capsys):
    assert main(["kernel", "--config", mesh_config(ico_dir), "vertex:0", "vertex:1", "--mode", "naive"]) == 2
    assert "unsupported" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"manifold": {"circle": {"levels": 10}},
                                           "hyperparameters": {"sigma2": 1, "lengthscale": 0.3}})
    assert main(["kernel", "--config", cfg, "0"]) == 2
    assert "lengthscale" in capsys.readouterr().err
    cfg = write_json(tmp_path / "c2.json", {"manifold": {"circle": {"levels": 10}}, "sede": 3})
    assert main(["kernel", "--config", cfg, "0"]) == 2


def test_two_manifolds_rejected(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"manifold": {"circle": {}, "sphere": {}}})
    assert main(["kernel", "--config", cfg, "0"]) == 2


# --- eigen ------------------------------------------------------------------


def test_eigen_clusters_and_cache_hit(ico_dir, capsys):
    cfg = mesh_config(ico_dir)
    cache = ico_dir / "ico.off.eig"
    if cache.exists():
        cache.unlink()
    assert main(["eigen", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert "cache hit" not in out
    lam = np.loadtxt(out.splitlines()[1:], delimiter=",")[:, 1]
    assert cache.exists()
    targets = np.repeat([0.0, 2.0, 6.0, 12.0], [1, 3, 5, 7])
    assert np.all(np.abs(lam - targets) <= 0.05 * np.maximum(targets, 1))
    assert main(["eigen", "--config", cfg]) == 0
    assert "cache hit" in capsys.readouterr().out
    assert main(["eigen", "--config", cfg, "--force"]) == 0
    assert "cache hit" not in capsys.readouterr().out


def test_eigen_missing_file(tmp_path, capsys):
    cfg = write_json(tmp_path / "m.json", {"manifold": {"mesh": {"path": "missing.off"}}})
    assert main(["eigen", "--config", cfg]) == 2
    assert "missing.off" in capsys.readouterr().err


def test_eigen_bad_mesh(tmp_path, capsys):
    (tmp_path / "q.off").write_text("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    cfg = write_json(tmp_path / "m.json", {"manifold": {"mesh": {"path": "q.off"}}})
    assert main(["eigen", "--config", cfg]) == 2


def test_corrupt_cache(ico_dir, tmp_path, capsys):
    shutil.copy(ico_dir / "ico.off", tmp_path / "ico.off")
    (tmp_path / "ico.off.eig").write_bytes(b"garbage")
    assert main(["eigen", "--config", mesh_config(tmp_path)]) == 2
    assert "not a cache file" in capsys.readouterr().err


# --- fit --------------------------------------------------------------------


def test_fit_fixture(tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert main(["fit", "--config", str(FIXTURES / "circle_fit.json"), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc) >= {"sigma2", "kappa", "noise_variance", "log_evidence", "iterations"}
    assert 0.1 <= doc["kappa"] <= 0.4
    assert doc["log_evidence"] >= doc["initial_log_evidence"]


def test_fit_fix_kappa(capsys):
    assert main(["fit", "--config", str(FIXTURES / "circle_fit.json"), "--fix", "kappa"]) == 0
    assert json.loads(capsys.readouterr().out)["kappa"] == 0.6


def test_fit_bad_fix_name(capsys):
    assert main(["fit", "--config", str(FIXTURES / "circle_fit.json"), "--fix", "lengthscale"]) == 2


def test_fit_empty_csv(tmp_path):
    (tmp_path / "d.csv").write_text("")
    cfg = circle_config(tmp_path, data="d.csv", noise_variance=1e-3)
    assert main(["fit", "--config", cfg]) == 2
    (tmp_path / "d.csv").write_text("point,y\n")
    assert main(["fit", "--config", cfg]) == 2


def test_fit_duplicate_points_numerical_failure(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("point,y\n0.1,1\n0.1,2\n")
    cfg = circle_config(tmp_path, data="d.csv")
    assert main(["fit", "--config", cfg]) == 3
    assert "indefinite" in capsys.readouterr().err


# --- sample / predict ---------------------------------------------------------


def test_sample_determinism(tmp_path):
    (tmp_path / "p.csv").write_text("point\n0\n0.1\n0.7\n")
    cfg = circle_config(tmp_path, points="p.csv")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sample", "--config", cfg, "--count", "2", "--seed", "7", "--out", str(a)]) == 0
    assert main(["sample", "--config", cfg, "--count", "2", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "point,sample_0,sample_1" and len(lines) == 4
    assert b"\r" not in a.read_bytes()


def test_posterior_sample_noiseless_at_data(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("point,y\n0.1,1.5\n0.4,-0.5\n0.8,0.25\n")
    cfg = circle_config(tmp_path, data="d.csv")
    cfg = write_json(tmp_path / "c.json", {**json.loads(Path(cfg).read_text()),
                                          "manifold": {"circle": {"levels": 100}},
                                          "hyperparameters": {"kappa": 0.2, "nu": 1.5}})
    assert main(["sample", "--config", cfg, "--posterior", "--count", "3"]) == 0
    rows = [r.split(",") for r in capsys.readouterr().out.splitlines()[1:]]
    vals = np.array([[float(v) for v in r[1:]] for r in rows])
    np.testing.assert_allclose(vals, np.repeat([[1.5], [-0.5], [0.25]], 3, axis=1), atol=1e-8)


def test_predict_csv(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("point,y\n0.1,1.5\n0.4,-0.5\n")
    (tmp_path / "p.csv").write_text("point\n0.1\n0.6\n")
    cfg = circle_config(tmp_path, data="d.csv", points="p.csv", noise_variance=1e-6)
    assert main(["predict", "--config", cfg]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "point,mean,variance"
    mean = float(lines[1].split(",")[1])
    assert mean == pytest.approx(1.5, abs=1e-3)


def test_random_feature_sampling_option(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("point\n0\n0.5\n")
    cfg = circle_config(tmp_path, points="p.csv", num_features=100)
    assert main(["sample", "--config", cfg, "--seed", "3"]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 3


def test_mesh_posterior_samples_pinned_at_data(ico_dir, tmp_path, capsys):
    rng = np.random.default_rng(0)
    verts = rng.choice(642, 12, replace=False)
    lines = ["point,y"] + [f"vertex:{v},{math.sin(v)}" for v in verts]
    (ico_dir / "md.csv").write_text("\n".join(lines) + "\n")
    cfg = mesh_config(ico_dir, data="md.csv", noise_variance=1e-8)
    out = tmp_path / "s.csv"
    ply = tmp_path / "s.ply"
    assert main(["sample", "--config", cfg, "--posterior", "--count", "500", "--seed", "1",
                 "--out", str(out), "--ply", str(ply)]) == 0
    rows = out.read_text().splitlines()[1:]
    assert len(rows) == 642
    S = np.array([[float(v) for v in r.split(",")[1:]] for r in rows])
    std = S.std(axis=1)
    assert np.all(std[verts] < 1e-3)
    assert np.median(std) > 0.05
    assert "property double std" in ply.read_text()


def test_mesh_points_must_be_vertices_in_data(ico_dir):
    (ico_dir / "bad.csv").write_text("point,y\nface:0:0.2,0.3,0.5,1.0\n")
    cfg = mesh_config(ico_dir, data="bad.csv")
    assert main(["predict", "--config", cfg]) == 2


def test_mesh_face_point_kernel(ico_dir, capsys):
    assert main(["kernel", "--config", mesh_config(ico_dir), "vertex:3", "face:10:0.2,0.3,0.5"]) == 0
    assert math.isfinite(float(capsys.readouterr().out))
    assert main(["kernel", "--config", mesh_config(ico_dir), "face:99999:1,0,0"]) == 2


# --- check ------------------------------------------------------------------


def test_check_passes(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "first indefinite kappa=" in out
    assert "torus T^2 spectral vs periodic" in out
