"""Smoke test for the `hypermml` extension module.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run:                 python python/smoke_test.py
"""

import json
import math
import tempfile

import hypermml


def main():
    assert abs(hypermml.differential_entropy(1.0) - 1.41894) < 1e-5

    edges = hypermml.hyperedges(2, 3)
    assert edges == [[0, 1, 2], [3, 4, 5], [0, 3], [1, 4], [2, 5]], edges

    m = hypermml.metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert abs(m["accuracy"] - 0.75) < 1e-12
    assert abs(m["weighted_f1"] - 0.7333) < 1e-4

    signal = [[math.sin(2 * math.pi * 10 * t / 128) for t in range(128)]]
    feats = hypermml.band_features(signal, 128.0)
    assert set(feats) == {"delta", "theta", "alpha", "beta", "gamma"}
    assert max(feats, key=lambda b: feats[b][1][0]) == "alpha"

    ds = hypermml.make_synthetic(dialogues_per_subject=6, class_separation=5.0)
    assert len(ds) == 72 and ds.subjects == ["s00", "s01", "s02"]
    seg = ds.segment(0)
    assert len(seg["eeg"]) == 4 and len(seg["eeg"][0]) == 64

    ckpt = hypermml.train(ds, json.dumps({"epochs": 2, "d": 16, "d_k": 8}), seed=7)
    history = ckpt.history()
    assert [h["epoch"] for h in history] == [1, 2]
    assert json.loads(ckpt.config)["seed"] == 7

    report = ckpt.evaluate(ds)
    assert 0.0 <= report.accuracy <= 1.0
    assert report.table().splitlines()[0].split("|")[0].strip() == "Subject"

    with tempfile.TemporaryDirectory() as tmp:
        ckpt.save(tmp)
        again = hypermml.Checkpoint.load(tmp).evaluate(ds)
        assert again.to_json() == report.to_json()
        ds.save(tmp + "/data")
        assert len(hypermml.Dataset.load(tmp + "/data")) == 72

    try:
        hypermml.gradient_check("lungs")
    except KeyError:
        pass
    else:
        raise AssertionError("unknown module accepted")
    passed, groups = hypermml.gradient_check("classifier")
    assert passed and groups

    print("python smoke test passed")


if __name__ == "__main__":
    main()
