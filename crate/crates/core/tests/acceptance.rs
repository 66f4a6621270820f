//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use catforecast::backtest::{buy_and_hold, run_backtest, BacktestConfig, Direction};
use catforecast::categorize::{categorize_values, CategoryId, CategoryScheme};
use catforecast::forecaster::{gradient_check, train, ForecasterConfig, ForecasterParams, TrainingSample};
use catforecast::market_data::{aggregate_frames, FrameSeries};
use catforecast::pipeline::{
    run_experiment, AssetSource, Corpus, ExperimentConfig, SelectorMode, SplitConfig,
};
use catforecast::preprocess::{to_volatility, volatility_from_closes};
use catforecast::selector::TransitionModel;
use catforecast::synth::{generate_synthetic, SynthKind, SYNTH_START_MS};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn ac1_successor_law() -> Outcome {
    let started = Instant::now();
    let scheme = CategoryScheme::default();
    let windows_per_walk = 25_000;
    let mut checked = 0usize;
    let mut violations = 0usize;
    for seed in 0..4u64 {
        let series = generate_synthetic(SynthKind::RandomWalk, windows_per_walk + 8, 100 + seed).map_err(|e| e.to_string())?;
        let v = to_volatility(&series).map_err(|e| e.to_string())?.values;
        let cats: Vec<u32> = v
            .windows(8)
            .map(|w| categorize_values(w, &scheme).map(|c| c.0))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        checked += cats.len();
        for pair in cats.windows(2) {
            let shifted = (pair[0] << 1) & 0x7f;
            if pair[1] != shifted && pair[1] != shifted | 1 {
                violations += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        checked == 100_000 && violations == 0 && elapsed < Duration::from_secs(5),
        format!("{checked} windows, {violations} violations, {:.2}s", secs(elapsed)),
    )
}

fn ac2_volatility_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let prices: Vec<f64> = (0..1_000_000).map(|_| rng.gen_range(1.0..1000.0)).collect();
    let v = volatility_from_closes(&prices).map_err(|e| e.to_string())?;
    // rebuild from the first price alone
    let mut p = prices[0];
    let mut worst: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        p *= 1.0 + x / 100.0;
        worst = worst.max(((p - prices[i + 1]) / prices[i + 1]).abs());
    }
    check(worst < 1e-9, format!("{} prices, max relative error {worst:.3e}", prices.len()))
}

fn ac3_aggregation() -> Outcome {
    // 14 days of minutes plus a partial block
    let minutes = 14 * 24 * 60 + 5;
    let raw = generate_synthetic(SynthKind::RandomWalk, minutes, 3).map_err(|e| e.to_string())?;
    let agg = aggregate_frames(&raw, 7).map_err(|e| e.to_string())?;
    let src = raw.frames();
    let mut bad = Vec::new();
    if agg.len() != minutes / 7 {
        bad.push(format!("count {} != {}", agg.len(), minutes / 7));
    }
    for (j, k) in agg.frames().iter().enumerate() {
        let block = &src[7 * j..7 * j + 7];
        let mut volume = 0.0;
        let mut trades = 0;
        for m in block {
            volume += m.volume;
            trades += m.num_trades;
        }
        let high = block.iter().map(|m| m.high).fold(f64::MIN, f64::max);
        let low = block.iter().map(|m| m.low).fold(f64::MAX, f64::min);
        if k.volume != volume
            || k.num_trades != trades
            || k.high != high
            || k.low != low
            || k.open != block[0].open
            || k.close != block[6].close
            || k.open_time != block[0].open_time
            || k.close_time != block[6].close_time
        {
            bad.push(format!("frame {j}"));
        }
    }
    check(bad.is_empty(), format!("{} minutes -> {} frames, mismatches {:?}", minutes, agg.len(), bad))
}

fn category_walk(len: usize, start: u32, mut next_bit: impl FnMut(u32) -> u32) -> Vec<CategoryId> {
    let mut c = start;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(CategoryId(c));
        c = ((c << 1) & 0x7f) | next_bit(c);
    }
    out
}

fn markov_accuracy(model: &mut TransitionModel, seq: &[CategoryId], online: bool) -> f64 {
    let mut hits = 0;
    for pair in seq.windows(2) {
        hits += usize::from(model.predict_next(pair[0]).0 == pair[1]);
        if online {
            model.update_online(pair[0], pair[1]).unwrap();
        }
    }
    hits as f64 / (seq.len() - 1) as f64
}

fn ac4_markov() -> Outcome {
    let scheme = CategoryScheme::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let random = category_walk(20_001, 0, |_| rng.gen_range(0..2));
    let (train_part, test_part) = random.split_at(10_001);

    let batch = TransitionModel::fit(train_part, scheme, 1.0).map_err(|e| e.to_string())?;
    let mut online = TransitionModel::new(scheme, 1.0).map_err(|e| e.to_string())?;
    for pair in train_part.windows(2) {
        online.update_online(pair[0], pair[1]).map_err(|e| e.to_string())?;
    }
    let equal = batch.counts() == online.counts();

    // next bit = parity of the current seven bits (a short cycle), and a
    // maximal-length feedback rule that visits all 127 non-zero states
    let mut det_acc: f64 = 1.0;
    let mut states = Vec::new();
    let rules: [fn(u32) -> u32; 2] = [|c| c.count_ones() & 1, |c| ((c >> 6) ^ (c >> 5)) & 1];
    for rule in rules {
        let seq = category_walk(20_001, 0b1011001, rule);
        let (d_train, d_test) = seq.split_at(10_001);
        let mut det = TransitionModel::fit(d_train, scheme, 1.0).map_err(|e| e.to_string())?;
        det_acc = det_acc.min(markov_accuracy(&mut det, d_test, false));
        states.push(d_test.iter().collect::<std::collections::BTreeSet<_>>().len());
    }

    let mut rnd = batch.clone();
    let rnd_acc = markov_accuracy(&mut rnd, test_part, true);
    check(
        equal && det_acc == 1.0 && (0.45..=0.55).contains(&rnd_acc),
        format!(
            "batch == online: {equal}, deterministic accuracy {det_acc} (states visited {states:?}), random-bit accuracy {rnd_acc:.4}"
        ),
    )
}

fn ac5_gradient_check() -> Outcome {
    let started = Instant::now();
    let config = ForecasterConfig {
        hidden_size: 8,
        recurrent_layers: 2,
        attention_heads: 2,
        ..ForecasterConfig::default()
    };
    let params = ForecasterParams::init(&config).map_err(|e| e.to_string())?;
    let sample = TrainingSample::from_window(&[0.31, -0.12, 0.07, 0.44, -0.29, 0.18, -0.05, 0.22]);
    let report = gradient_check(&params, &sample, 1e-5).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    check(
        report.max_relative_error < 1e-4 && elapsed < Duration::from_secs(30),
        format!(
            "{} parameters, max relative error {:.3e} at {}, {:.2}s",
            report.parameters_checked,
            report.max_relative_error,
            report.worst_parameter.unwrap_or_default(),
            secs(elapsed)
        ),
    )
}

fn ac6_overfit() -> Outcome {
    let started = Instant::now();
    let config = ForecasterConfig {
        epochs: 2000,
        ..ForecasterConfig::desk()
    };
    let sample = TrainingSample::from_window(&[0.12, -0.3, 0.05, 0.4, -0.1, 0.02, 0.25, 0.33]);
    let samples = vec![sample; 64];
    let params = ForecasterParams::init(&config).map_err(|e| e.to_string())?;
    let (trained, report) = train(params, &samples, &config).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let mse = trained.mean_loss(&samples).map_err(|e| e.to_string())?;
    let first_below = report.epoch_losses.iter().position(|l| *l < 1e-3).map(|e| e + 1);
    check(
        mse < 1e-3 && elapsed < Duration::from_secs(60),
        format!(
            "final MSE {mse:.3e} after {} epochs (first epoch below 1e-3: {:?}), {:.2}s",
            report.epoch_losses.len(),
            first_below,
            secs(elapsed)
        ),
    )
}

fn pair_series(kind: SynthKind, len: usize, seed: u64, pair: &str) -> Result<FrameSeries, String> {
    let s = generate_synthetic(kind, len, seed).map_err(|e| e.to_string())?;
    FrameSeries::new(pair, 1, s.frames().to_vec()).map_err(|e| e.to_string())
}

fn ac7_end_to_end() -> Outcome {
    let started = Instant::now();
    let train_len = 20_000;
    // n + 1 frames of warm-up give 2000 test steps
    let test_len = 2_009;
    let total = train_len + test_len;
    let corpus = Corpus {
        assets: vec![
            pair_series(SynthKind::DeterministicCategory, total, 7, "SYNA")?,
            pair_series(SynthKind::DeterministicCategory, total, 8, "SYNB")?,
        ],
    };
    let split = SYNTH_START_MS + train_len as i64 * 60_000;
    let config = ExperimentConfig {
        assets: ["SYNA", "SYNB"]
            .iter()
            .map(|p| AssetSource {
                pair: p.to_string(),
                path: format!("{p}.csv").into(),
                source_minutes: 1,
            })
            .collect(),
        target: "SYNA".into(),
        frame_minutes: 1,
        mode: SelectorMode::Markov,
        forecaster: ForecasterConfig {
            epochs: 8,
            learning_rate: 3e-3,
            ..ForecasterConfig::desk()
        },
        split: SplitConfig {
            train_start: None,
            train_end: Some(split),
            test_start: Some(split),
            test_end: None,
        },
        ..ExperimentConfig::default()
    };
    let (_, report) = run_experiment(&config, &corpus).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let accuracy = report.metrics.accuracy.unwrap_or(0.0);
    let selector = report.selector.as_ref().map_or(0.0, |s| s.accuracy);
    check(
        accuracy >= 0.95
            && report.backtest.final_value > report.backtest.buy_and_hold
            && elapsed < Duration::from_secs(600),
        format!(
            "{} steps, directional accuracy {accuracy:.4}, selector accuracy {selector:.4}, final {:.4} vs buy-and-hold {:.4}, {:.1}s",
            report.steps.len(),
            report.backtest.final_value,
            report.backtest.buy_and_hold,
            secs(elapsed)
        ),
    )
}

fn ac8_backtest_oracle() -> Outcome {
    let cfg = BacktestConfig::default();
    let hand = run_backtest(&[Direction::Up, Direction::Down], &[100.0, 110.0, 99.0], &cfg)
        .map_err(|e| e.to_string())?
        .final_value;
    let t = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = 0;
    let trials = 20;
    for _ in 0..trials {
        let closes: Vec<f64> = (0..=t).map(|_| rng.gen_range(50.0..150.0)).collect();
        let foresight: Vec<Direction> = closes
            .windows(2)
            .map(|w| if w[1] > w[0] { Direction::Up } else { Direction::Down })
            .collect();
        let best = run_backtest(&foresight, &closes, &cfg).map_err(|e| e.to_string())?.final_value;
        for mask in 0u32..(1 << t) {
            let dirs: Vec<Direction> = (0..t)
                .map(|i| if mask >> i & 1 == 1 { Direction::Up } else { Direction::Down })
                .collect();
            if dirs == foresight {
                continue;
            }
            let v = run_backtest(&dirs, &closes, &cfg).map_err(|e| e.to_string())?.final_value;
            if v >= best {
                failures += 1;
            }
        }
    }
    check(
        hand == 110.0 && failures == 0,
        format!("hand ledger final {hand}, {trials} series x 2^{t} sequences, {failures} beat or tied foresight"),
    )
}

fn ac9_buy_and_hold() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.gen_range(2..200);
        let closes: Vec<f64> = (0..len).map(|_| rng.gen_range(0.5..500.0)).collect();
        let fee = rng.gen_range(0.0..0.01);
        let cfg = BacktestConfig {
            fee_rate: fee,
            ..BacktestConfig::default()
        };
        let expected = 100.0 * (closes[len - 1] / closes[0]) * (1.0 - fee) * (1.0 - fee);
        let got = buy_and_hold(&closes, &cfg).map_err(|e| e.to_string())?;
        let always_up = run_backtest(&vec![Direction::Up; len - 1], &closes, &cfg)
            .map_err(|e| e.to_string())?
            .final_value;
        worst = worst
            .max(((got - expected) / expected).abs())
            .max(((always_up - expected) / expected).abs());
    }
    check(worst < 1e-9, format!("100 series, max relative error {worst:.3e}"))
}

fn run_cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_catforecast"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn ac10_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    run_cli(&["--seed", "21", "synth", "--kind", "random_walk", "--length", "6000", "--output", "a.csv"], dir)?;
    run_cli(&["--seed", "22", "synth", "--kind", "periodic", "--length", "6000", "--output", "b.csv"], dir)?;
    let split = SYNTH_START_MS + 5000 * 60_000;
    let config = format!(
        r#"target = "AAA"
frame_minutes = 7
seed = 64

[[assets]]
pair = "AAA"
path = "a.csv"

[[assets]]
pair = "BBB"
path = "b.csv"

[split]
train_end = {split}
test_start = {split}

[forecaster]
hidden_size = 8
recurrent_layers = 2
attention_heads = 2
epochs = 3
"#
    );
    std::fs::write(dir.join("exp.toml"), config).map_err(|e| e.to_string())?;
    run_cli(&["evaluate", "--config", "exp.toml", "--output", "run1.json"], dir)?;
    run_cli(&["evaluate", "--config", "exp.toml", "--output", "run2.json"], dir)?;
    let a = std::fs::read(dir.join("run1.json")).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.join("run2.json")).map_err(|e| e.to_string())?;
    check(!a.is_empty() && a == b, format!("two evaluate runs, {} and {} bytes, identical: {}", a.len(), b.len(), a == b))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("successor law", ac1_successor_law),
        ("volatility round-trip", ac2_volatility_round_trip),
        ("aggregation invariants", ac3_aggregation),
        ("markov batch/online and accuracy", ac4_markov),
        ("forecaster gradient check", ac5_gradient_check),
        ("overfit single sample", ac6_overfit),
        ("synthetic end-to-end", ac7_end_to_end),
        ("backtest oracle", ac8_backtest_oracle),
        ("buy-and-hold property", ac9_buy_and_hold),
        ("determinism", ac10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("AC{} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("AC{} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
