"""Smoke test of the Python bindings.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`,
then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import pylanekeep as lk


def main() -> None:
    cfg = lk.Config()
    assert cfg.v0 == 25.0 and cfg.v_ref == 18.0 and cfg.horizon == 5
    assert lk.Config.from_toml(cfg.to_toml()).to_toml() == cfg.to_toml()
    try:
        lk.Config.from_toml("[mpc]\nhorizn = 5\n")
        raise AssertionError("unknown key accepted")
    except ValueError as e:
        assert "horizn" in str(e)

    # Numerical kernels.
    sol = lk.solve_qp([[2.0, 0.0], [0.0, 2.0]], [-2.0, -5.0], g=[[1.0, 1.0]], h=[1.0])
    assert sol["status"] == "optimal"
    assert abs(sol["x"][0] - (-0.25)) < 1e-7 and abs(sol["x"][1] - 1.25) < 1e-7
    square = lk.HPolytope.from_box([-1.0, -2.0], [1.0, 2.0])
    assert len(square.vertices()) == 4
    assert abs(square.support([1.0, 1.0]) - 3.0) < 1e-9
    assert square.contains([0.5, -1.5]) and not square.contains([1.5, 0.0])

    step = lk.longitudinal_step(25.0, [18.0] * 5, cfg)
    assert abs(step["a_cmd"] + 6.0) < 1e-8

    # Offline design, artifact round trip.
    art = lk.Artifact.synthesize(cfg, check=200)
    assert art.n_vertices > 0 and art.model_hash == cfg.model_hash()
    with tempfile.TemporaryDirectory() as d:
        path = str(Path(d) / "artifact.json")
        art.save(path)
        again = lk.Artifact.load(path, cfg)
        assert again.to_json() == art.to_json()
    s = art.invariant_set()
    assert s.contains([0.0, 0.0, 0.0, 0.0])
    rep = lk.validate(art, cfg, n=500)
    assert rep["passed"], rep

    ctl = lk.LateralController(cfg, art)
    out = ctl.solve(cfg.x0, 25.0, [24.4, 23.8, 23.2, 22.6, 22.0])
    assert out["status"] == "optimal" and abs(out["delta_cmd"]) <= cfg.delta_max

    # Closed loop.
    cfg.steps = 40
    log = lk.simulate(cfg, art, seed=3)
    assert len(log) == 40
    m = log.metrics()
    assert m["infeasible_steps"] == 0 and m["state_violations"] == 0, m
    assert all(abs(e) <= 4.0 for e in log.e_y)
    assert log.to_csv() == lk.simulate(cfg, art, seed=3).to_csv()
    batch = lk.simulate_batch(cfg, art, [0, 1])
    assert [b.seed for b in batch] == [0, 1]

    cfg.delta_unc = 0.0
    flat = lk.simulate(cfg, art)
    assert flat.p_actual == flat.p_nominal
    assert not any(math.isnan(v) for v in flat.v)

    print(f"smoke test passed: {art!r}, max |e_y| {m['max_abs_e_y']:.3f}")


if __name__ == "__main__":
    main()
