"""Smoke test for the l2g_py extension module.

Build and install it first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import math
import tempfile
from pathlib import Path

import l2g_py as l2g


def main():
    data = l2g.generate_synthetic(num_classes=24, instances_per_class=20, feature_dim=8, seed=5)
    assert data.num_classes == 24 and data.feature_dim == 8 and len(data) == 480
    assert l2g.Dataset.from_bytes(data.to_bytes()).to_bytes() == data.to_bytes()

    train, val, test = data.split(0.5, 0.25, 0.25, seed=1)
    assert not set(train.labels) & set(test.labels)

    config = """
    mode = l2g
    model.embed_hidden = 16
    model.embed_dim = 8
    meta_batch = 2
    total_episodes = 30
    eval_interval = 15
    val_episodes = 10
    seed = 3
    """
    with tempfile.TemporaryDirectory() as tmp:
        ckpt, log = l2g.train(train, val, config, run_dir=tmp)
        assert (Path(tmp) / "final.ckpt").exists()
        again = l2g.Checkpoint.load(str(Path(tmp) / "final.ckpt"))
        assert again.parameter_names == ckpt.parameter_names

    _, log_again = l2g.train(train, val, config)
    assert log == log_again, "training is not deterministic"
    assert log.splitlines()[0] == "episode,meta_loss,inner_loss,lr,val_accuracy"
    assert ckpt.episode == 30 and ckpt.head == "proto"

    mean, half, runs = ckpt.evaluate(test, way=5, shot=1, episodes=50, runs=3, seed=2)
    assert 0.0 <= mean <= 1.0 and half >= 0.0 and len(runs) == 3
    assert math.isclose(l2g.confidence_interval(runs)[0], mean)

    pred, truth = ckpt.predict_episode(test, way=5, shot=1, queries=4)
    assert len(pred) == len(truth) == 20
    assert len(ckpt.embed(test.instances(0))[0]) == 8

    assert l2g.convergence_svg(log, ["meta_loss", "inner_loss"]).count("<polyline") == 2
    m, h = l2g.confidence_interval([0.4, 0.6])
    assert math.isclose(m, 0.5) and math.isclose(h, 0.196, abs_tol=1e-5)

    try:
        l2g.train(train, None, "alpah = 0.1")
    except ValueError as e:
        assert "alpah" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    passed, checks = l2g.gradcheck()
    assert passed, [c for c in checks if not c[3]]

    print(f"ok: {len(checks)} gradient checks, 5-way 1-shot accuracy {100 * mean:.1f}% +- {100 * half:.1f}%")


if __name__ == "__main__":
    main()
