#!/usr/bin/env python3
"""Smoke test for the fedgru Python bindings.

Builds the extension with cargo, imports it, and exercises every exposed
entry point on tiny inputs. Exits non-zero on the first failure.
"""

import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "fedgru-py"], cwd=ROOT, check=True
    )
    so = ROOT / "target" / "debug" / "libfedgru.so"
    stage = pathlib.Path(tempfile.mkdtemp(prefix="fedgru_py_"))
    shutil.copy(so, stage / "fedgru.so")
    sys.path.insert(0, str(stage))
    import fedgru

    return fedgru


def main():
    fedgru = build_and_import()

    # normalization round trip
    values = [12.0, 15.0, 9.0, 30.0]
    mean, std = fedgru.zscore_fit(values)
    normed = fedgru.zscore_apply(values, mean, std)
    assert abs(sum(normed)) < 1e-12
    back = fedgru.zscore_invert(normed, mean, std)
    assert all(abs(a - b) < 1e-12 for a, b in zip(back, values))

    # loss
    assert fedgru.hmse_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert abs(fedgru.hmse_loss([3.0, 1.0], [1.0, 1.0]) - 1.0) < 1e-12

    # model: train on a constant series, prediction should approach it
    model = fedgru.GruModel([4, 6], seed=1)
    assert model.param_count() > 0
    series = [0.3] * 30
    losses = model.train(series, epochs=120, lr=0.01, dropout=0.0, seed=2)
    assert len(losses) == 120
    assert losses[-1] < losses[0]
    preds = model.predict(series, horizon=5)
    assert len(preds) == 5
    assert all(abs(p - 0.3) < 0.1 for p in preds)
    assert model.eval_loss(series) < 0.01

    # parameter round trip
    flat = model.get_params()
    model.set_params(flat)
    assert model.get_params() == flat

    # federated averaging
    avg = fedgru.fed_average([[1.0, 2.0], [3.0, 6.0]])
    assert avg == [2.0, 4.0]
    weighted = fedgru.fed_average([[1.0], [3.0]], [3.0, 1.0])
    assert weighted == [3.0]

    # attack selection: deterministic, right size
    vehicles = [f"v{i:02d}" for i in range(10)]
    sel1 = fedgru.select_compromised(vehicles, 0.3, seed=5)
    sel2 = fedgru.select_compromised(vehicles, 0.3, seed=5)
    assert sel1 == sel2 and len(sel1) == 3

    # detection: mean abs diff vs threshold, strict inequality
    flagged, mad = fedgru.detect([50.0, 50.0], [70.0, 70.0], threshold_ms=10.0)
    assert flagged and abs(mad - 20.0) < 1e-12
    flagged, mad = fedgru.detect([50.0], [60.0], threshold_ms=10.0)
    assert not flagged

    # metrics, including exact DR/FNR complementarity
    acc, dr, fpr, fnr = fedgru.rates(66, 854, 46, 34)
    assert abs(acc - 0.92) < 1e-9
    assert dr + fnr == 1.0
    acc, dr, fpr, fnr = fedgru.rates(0, 5, 1, 0)
    assert dr is None and fnr is None

    # full experiment from a config file
    with tempfile.TemporaryDirectory() as tmp:
        cfg = pathlib.Path(tmp) / "exp.toml"
        cfg.write_text(
            "\n".join(
                [
                    "seed = 11",
                    "[federation]",
                    "num_local = 2",
                    "cluster_size = 3",
                    "rounds = 2",
                    "[train]",
                    "batch_len = 24",
                    "horizon = 4",
                    "epochs = 4",
                    "dropout_p = 0.0",
                    "[train.net]",
                    "hidden_sizes = [3, 4]",
                    "[data.synthetic]",
                    "num_vehicles = 6",
                    "num_slots = 40",
                    "[attack]",
                    "sweep_fractions = [0.5]",
                    "",
                ]
            )
        )
        out = pathlib.Path(tmp) / "out"
        results = fedgru.run_experiment(str(cfg), out_dir=str(out))
        assert len(results) == 1
        label, tp, tn, fp, fn = results[0]
        assert label == "50%"
        assert tp + tn + fp + fn > 0
        assert (out / "metrics.csv").exists()
        assert (out / "frac_050pct" / "rounds.jsonl").exists()

    print("smoke test passed")


if __name__ == "__main__":
    main()
