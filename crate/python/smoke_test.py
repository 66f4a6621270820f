"""Quick end-to-end check of the Python bindings.

Build and install first:  pip install ./crates/python --no-build-isolation
"""

import json
import math
import tempfile
from pathlib import Path

import catforecast as cf


def main():
    series = cf.generate_synthetic("random_walk", 3000, seed=3)
    assert len(series) == 3000 and series.frame_minutes == 1
    frames = series.aggregate(7)
    assert len(frames) == 3000 // 7

    closes = frames.closes()
    v = cf.volatility_from_closes(closes)
    assert v == frames.volatility()
    rebuilt = [closes[0]]
    for x in v:
        rebuilt.append(rebuilt[-1] * (1 + x / 100))
    assert max(abs(a - b) / b for a, b in zip(rebuilt, closes)) < 1e-9

    windows = cf.sliding_windows(v, 8)
    cats = [cf.categorize(w) for w in windows]
    for a, b in zip(cats, cats[1:]):
        assert b in cf.successors(a)
    assert cf.categorize([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]) == 127

    selector = cf.TransitionModel.fit(cats)
    online = cf.TransitionModel()
    for a, b in zip(cats, cats[1:]):
        online.update_online(a, b)
    assert online.counts == selector.counts
    nxt, p = cf.TransitionModel().predict_next(5)
    assert (nxt, p) == (10, 0.5)

    model = cf.Forecaster(hidden_size=8, recurrent_layers=2, attention_heads=2, seed=1)
    assert model.gradient_check([0.3, -0.4, 0.25, 0.6, -0.2, 0.1, 0.45, -0.35]) < 1e-4
    sample = [0.12, -0.3, 0.05, 0.4, -0.1, 0.02, 0.25, 0.33]
    losses = model.train([sample] * 64, epochs=300)
    assert losses[-1] < losses[0]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.json"
        model.save(path)
        again = cf.Forecaster.load(path)
        assert again.predict(sample[:7]) == model.predict(sample[:7])

    final, trades = cf.run_backtest([True, False], [100.0, 110.0, 99.0])
    assert final == 110.0 and [t[1] for t in trades] == ["buy", "sell"]
    assert math.isclose(cf.buy_and_hold([100.0, 110.0], fee_rate=0.001), 100 * 1.1 * 0.999**2)
    metrics = cf.direction_metrics([True, False], [0.1, -0.2])
    assert metrics["accuracy"] == 1.0 and metrics["precision"] == 1.0

    with tempfile.TemporaryDirectory() as tmp:
        series.write_csv(Path(tmp) / "a.csv")
        cf.generate_synthetic("periodic", 3000, seed=4).write_csv(Path(tmp) / "b.csv")
        split = series.open_times()[2500]
        config = f"""
target = "SYN-random_walk-3"
frame_minutes = 7

[[assets]]
pair = "SYN-random_walk-3"
path = "a.csv"

[[assets]]
pair = "PER"
path = "b.csv"

[split]
train_end = {split}
test_start = {split}

[forecaster]
hidden_size = 8
recurrent_layers = 1
attention_heads = 2
epochs = 2
"""
        report = json.loads(cf.evaluate(config, tmp))
        again = json.loads(cf.evaluate(config, tmp))
        assert report == again
        steps = report["steps"]
        hits = sum((s["direction"] == "up") == (s["realized"] > 0) for s in steps)
        assert math.isclose(report["metrics"]["accuracy"], hits / len(steps))

    print("python smoke test passed:", len(steps), "walk-forward steps, final value",
          round(report["backtest"]["final_value"], 4))


if __name__ == "__main__":
    main()
