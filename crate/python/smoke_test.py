"""Smoke test for the precond_py extension module.

Run with `python python/smoke_test.py` after `pip install --no-build-isolation crates/python`.
"""

import json
import math
import random
import tempfile

import precond_py as pc


def main():
    assert abs(pc.beta_from_delta(0.025) - 1.959963984540054) < 1e-9
    assert pc.beta_schedule(0, 20) < 0 < pc.beta_schedule(20, 20)

    rng = random.Random(0)
    xs = [[rng.random()] for _ in range(40)]
    ys = [math.sin(6 * x[0]) + 0.05 * rng.gauss(0, 1) for x in xs]
    gp = pc.HomGP.fit(xs, ys, seed=1)
    mu, var = gp.predict([0.5])
    assert abs(mu - math.sin(3.0)) < 0.2 and var >= 0
    assert len(gp.lml_gradient()) == 3

    step = [[rng.random()] for _ in range(150)]
    noisy = [rng.gauss(0, 1.0 if x[0] < 0.5 else 0.1) for x in step]
    het = pc.HeteroGP.fit(step, noisy, seed=2)
    assert het.noise_variance([0.25]) > 5 * het.noise_variance([0.75])

    world = pc.GridWorld()
    assert world.true_step(7, 4, "left") == (9, 4)
    assert world.model_step(7, 4, "left") == (6, 4)
    assert abs(world.deviation(7, 4, "left") - 0.3) < 1e-12

    with tempfile.TemporaryDirectory() as tmp:
        config = json.dumps({"environment": {"kind": "gridworld"}, "learning": {"J": 1, "M": 2}})
        run = pc.train(config, f"{tmp}/run")
        assert run.completed == 1
        assert run.manifest()["completed_iterations"] == 1
        prior = run.snapshot(0)
        mu, sigma = prior.predict(world.features(7, 4, "left"))
        assert not prior.admits(world.features(7, 4, "left"), 0.1, 2.0)
        rows = run.evaluate(eval_config=json.dumps({"n_test_problems": 5}))
        assert [r["iteration"] for r in rows] == [1]
        try:
            pc.train(config, f"{tmp}/run")
        except FileExistsError:
            pass
        else:
            raise AssertionError("rerun without force must be refused")
        try:
            pc.load_run_config(json.dumps({"environment": {"kind": "gridworld"}, "learning": {"M": 0}}))
        except ValueError as e:
            assert "learning.M" in str(e)
        else:
            raise AssertionError("M = 0 must be rejected")

    print("smoke test ok")


if __name__ == "__main__":
    main()
