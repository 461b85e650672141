import csv
import math

import numpy as np
import pytest

import loopalign as la


def test_origin_distance_is_tangent_norm():
    v = np.array([0.3, -0.4, 0.2])
    assert la.poincare_dist(np.zeros(3), la.poincare_exp0(v, 1.5), 1.5) == pytest.approx(np.linalg.norm(v), abs=1e-12)


def test_ln3_spot_value():
    assert la.poincare_dist(np.zeros(2), np.array([0.5, 0.0])) == pytest.approx(math.log(3.0), abs=1e-12)


def test_isometry_between_models():
    u, v = np.array([0.2, 0.1]), np.array([-0.4, 0.3])
    d = la.poincare_dist(u, v, 2.0)
    assert la.lorentz_dist(la.poincare_to_lorentz(u, 2.0), la.poincare_to_lorentz(v, 2.0), 2.0) == pytest.approx(d)
    assert la.lorentz_to_poincare(la.poincare_to_lorentz(u, 2.0), 2.0) == pytest.approx(u)


def test_frechet_mean_of_symmetric_pair_is_origin():
    pts = [np.array([0.5, 0.0]), np.array([-0.5, 0.0])]
    assert la.frechet_mean("poincare", pts, [0.5, 0.5]) == pytest.approx(np.zeros(2), abs=1e-9)


def test_outside_ball_raises():
    with pytest.raises(la.DomainError):
        la.mobius_add(np.array([2.0, 0.0]), np.zeros(2))


def test_config_overrides_and_rejections():
    cfg = la.config({"loop": {"loops": 1}}, ["geometry.manifold=lorentz"])
    assert cfg["loop"]["loops"] == 1
    assert cfg["geometry"]["manifold"] == "lorentz"
    with pytest.raises(la.ConfigError):
        la.config(overrides=["loop.nonexistent=3"])


def test_accuracy_example():
    acc = la.accuracy(["a", "a", "a", "b"], ["a", "a", "a", "a"])
    assert acc["pi"] == 0.75 and acc["pc"] == 0.5


def test_geometry_suites_pass():
    for report in la.geomtest():
        assert report["passed"], [c["name"] for c in report["checks"] if not c["passed"]]


def test_train_eval_export_roundtrip(tmp_path):
    data = tmp_path / "data"
    n = la.generate_synthetic(str(data), classes=3, samples_per_class=10, frames=6, noise=0.1, seed=1)
    assert n == 30
    cfg = la.config(
        {
            "model": {"d_gcn": 4, "d_model": 8, "heads": 2, "d_ff": 16, "d_hyp": 4},
            "optim": {"steps": 5, "batch_size": 4},
            "data": {"manifest": str(data / "manifest.json")},
            "output_dir": str(tmp_path / "run"),
        }
    )
    result = la.train(cfg)
    assert len(result["losses"]) == 5 and all(math.isfinite(x) for x in result["losses"])
    assert result["eval"]["n"] == 3

    again = la.evaluate(result["checkpoint"])
    assert again == result["eval"]

    out = tmp_path / "embeddings.csv"
    assert la.export_embeddings(result["checkpoint"], str(out)) == n
    with open(out) as f:
        rows = list(csv.reader(f))
    assert len(rows) == n + 1
    assert rows[0][:3] == ["id", "gloss", "split"] and len(rows[0]) == 3 + cfg["model"]["d_hyp"]
