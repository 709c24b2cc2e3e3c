//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Real-dataset targets run only when `CICEVSE2024_NET` and
//! `CICEVSE2024_KERNEL` point at the network and kernel CSV files (or
//! directories of them).

mod common;

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use fedfusion::classifier::{train_epochs, CnnConfig, CnnModel, TrainConfig};
use fedfusion::data::{Coupling, SynthSpec};
use fedfusion::experiment::{run_experiment, write_outputs, ExperimentConfig, ExperimentName, ExperimentResult};
use fedfusion::fed::{
    aggregate_weighted, aggregation_weights, run_federated, ClientData, ClientUpdate, FedConfig, FlatParams,
};
use fedfusion::nn::ops::{conv1d_forward, dense_forward, maxpool1d_forward, softmax};
use fedfusion::nn::{Layer, OptimizerKind};
use fedfusion::seed;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use common::*;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradients() -> Outcome {
    let mut rng = seed::rng(2024, &[]);
    let mut rows = Vec::new();
    let dense = Layer::dense("d", 20, 10, &mut rng);
    let x = random_tensor(&[6, 20], &mut rng);
    rows.push(("dense", check_layer(dense, &x, 100, &mut rng)));
    let conv = Layer::conv1d("c", 3, 8, 5, &mut rng);
    let x = random_tensor(&[3, 3, 30], &mut rng);
    rows.push(("conv1d", check_layer(conv, &x, 100, &mut rng)));
    let x = distinct_values(&[4, 3, 40], &mut rng);
    rows.push(("maxpool1d", check_layer(Layer::maxpool1d(2), &x, 100, &mut rng)));
    let x = away_from_zero(&[10, 20], &mut rng);
    rows.push(("relu", check_layer(Layer::relu(), &x, 100, &mut rng)));
    let logits = random_tensor(&[50, 3], &mut rng).map(|v| 3.0 * v);
    let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
    rows.push(("softmax+ce", check_softmax_ce(&logits, &labels, 100, &mut rng)));
    let model = CnnModel::new(CnnConfig::default(), 11).unwrap();
    let z = random_tensor(&[4, 64], &mut rng);
    rows.push(("cnn", check_cnn(&model, &z, &[0, 1, 2, 1], 150, &mut rng)));

    let ok = rows.iter().all(|(_, r)| r.coords >= 100 && r.worst <= 1e-4);
    let detail = rows
        .iter()
        .map(|(name, r)| format!("{name} {} coords max rel {:.1e}", r.coords, r.worst))
        .collect::<Vec<_>>()
        .join("; ");
    ensure(ok, detail)
}

const ORACLE_CASES: u32 = 256;
const ORACLE_TOL: f64 = 1e-12;

fn runner() -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases: ORACLE_CASES,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn layer_oracles() -> Outcome {
    let worst = Cell::new(0.0f64);
    let cases = Cell::new(0u32);
    let track = |d: f64| -> Result<(), TestCaseError> {
        worst.set(worst.get().max(d));
        cases.set(cases.get() + 1);
        prop_assert!(d <= ORACLE_TOL, "difference {d:e}");
        Ok(())
    };
    let mut failures = Vec::new();

    let conv = (
        1usize..4,
        1usize..5,
        1usize..33,
        1usize..6,
        1usize..8,
        1usize..4,
        any::<u64>(),
    );
    let r = runner().run(&conv, |(n, ch, len, oc, k, stride, s)| {
        let k = k.min(len);
        let mut rng = seed::rng(s, &[]);
        let x = random_tensor(&[n, ch, len], &mut rng);
        let f = random_tensor(&[oc, ch, k], &mut rng);
        let b = random_tensor(&[oc], &mut rng);
        let got = conv1d_forward(&x, &f, &b, stride).unwrap();
        let want = naive_conv1d(&to_3d(&x), &to_3d(&f), b.data(), stride);
        let flat: Vec<f64> = want.into_iter().flatten().flatten().collect();
        track(max_abs_diff(got.data(), &flat))
    });
    if let Err(e) = r {
        failures.push(format!("conv1d: {e}"));
    }

    let pool = (1usize..4, 1usize..5, 1usize..33, 1usize..6, any::<u64>());
    let r = runner().run(&pool, |(n, ch, len, w, s)| {
        let w = w.min(len);
        let x = random_tensor(&[n, ch, len], &mut seed::rng(s, &[]));
        let (got, _) = maxpool1d_forward(&x, w).unwrap();
        let flat: Vec<f64> = naive_maxpool(&to_3d(&x), w).into_iter().flatten().flatten().collect();
        track(max_abs_diff(got.data(), &flat))
    });
    if let Err(e) = r {
        failures.push(format!("maxpool1d: {e}"));
    }

    let dense = (1usize..8, 1usize..24, 1usize..12, any::<u64>());
    let r = runner().run(&dense, |(n, din, dout, s)| {
        let mut rng = seed::rng(s, &[]);
        let x = random_tensor(&[n, din], &mut rng);
        let w = random_tensor(&[din, dout], &mut rng);
        let b = random_tensor(&[dout], &mut rng);
        let got = dense_forward(&x, &w, &b).unwrap();
        let flat: Vec<f64> = naive_dense(&to_2d(&x), &to_2d(&w), b.data())
            .into_iter()
            .flatten()
            .collect();
        track(max_abs_diff(got.data(), &flat))
    });
    if let Err(e) = r {
        failures.push(format!("dense: {e}"));
    }

    let soft = (1usize..8, 1usize..10, 0.1f64..20.0, any::<u64>());
    let r = runner().run(&soft, |(n, c, scale, s)| {
        let x = random_tensor(&[n, c], &mut seed::rng(s, &[])).map(|v| v * scale);
        let got = softmax(&x).unwrap();
        let flat: Vec<f64> = naive_softmax(&to_2d(&x)).into_iter().flatten().collect();
        track(max_abs_diff(got.data(), &flat))
    });
    if let Err(e) = r {
        failures.push(format!("softmax: {e}"));
    }

    let detail = format!(
        "{} cases over 4 ops ({ORACLE_CASES} each), max abs diff {:.1e}",
        cases.get(),
        worst.get()
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", failures.join("; ")))
    }
}

fn fedavg_equivalence() -> Outcome {
    let mut rng = seed::rng(99, &[]);
    let sizes = [7usize, 13, 20, 40];
    let total: usize = sizes.iter().sum();
    let z = random_tensor(&[total, 64], &mut rng);
    let labels: Vec<usize> = (0..total).map(|i| (i * 7 + 1) % 3).collect();
    let mut clients = Vec::new();
    let mut start = 0;
    for (id, &n) in sizes.iter().enumerate() {
        let idx: Vec<usize> = (start..start + n).collect();
        clients.push(ClientData {
            client_id: id,
            inputs: z.select_rows(&idx),
            labels: labels[start..start + n].to_vec(),
        });
        start += n;
    }
    let initial = CnnModel::new(CnnConfig::default(), 5).unwrap();
    let lr = 0.05;
    let cfg = FedConfig {
        n_clients: sizes.len(),
        rounds: 1,
        local_epochs: 1,
        batch: total,
        lr,
        optimizer: OptimizerKind::Sgd,
        ..FedConfig::default()
    };
    let fed = run_federated(&cfg, initial.clone(), &clients, &clients).map_err(|e| e.to_string())?;
    let mut central = initial.clone();
    let step = TrainConfig {
        epochs: 1,
        batch: total,
        lr,
        optimizer: OptimizerKind::Sgd,
    };
    train_epochs(&mut central, &z, &labels, &step, 0).map_err(|e| e.to_string())?;
    let a = fed.model.flat_params();
    let b = central.flat_params();
    let moved = max_abs_diff(&initial.flat_params(), &b);
    let diff = max_abs_diff(&a, &b);
    let weights = &fed.rounds[0].weights;
    let expected: Vec<f64> = sizes.iter().map(|&n| n as f64 / total as f64).collect();
    ensure(
        diff <= 1e-9 && moved > 1e-6 && *weights == expected,
        format!(
            "{} params, max diff {diff:.1e} (step moved params by up to {moved:.1e}), weights {weights:?}",
            a.len()
        ),
    )
}

fn synthetic_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.synth = SynthSpec {
        n_per_class: 2000,
        coupling: Coupling::JointOnly,
        noise_std: 0.1,
        ..SynthSpec::default()
    };
    cfg
}

fn real_config() -> Option<ExperimentConfig> {
    let net = std::env::var_os("CICEVSE2024_NET")?;
    let kernel = std::env::var_os("CICEVSE2024_KERNEL")?;
    let expand = |p: PathBuf| -> Vec<PathBuf> {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(&p)
                .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).collect())
                .unwrap_or_default();
            v.retain(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")));
            v.sort();
            v
        } else {
            vec![p]
        }
    };
    let mut cfg = ExperimentConfig::default();
    cfg.data.net_paths = expand(net.into());
    cfg.data.kernel_paths = expand(kernel.into());
    Some(cfg)
}

fn global_acc(r: &ExperimentResult, arm: &str) -> Result<f64, String> {
    r.global(arm)
        .map(|m| m.report.accuracy)
        .ok_or_else(|| format!("no global row for arm {arm}"))
}

fn fusion(result: &ExperimentResult) -> Outcome {
    let fused = global_acc(result, "fused")?;
    let net = global_acc(result, "network")?;
    let kernel = global_acc(result, "kernel")?;
    ensure(
        fused >= 95.0 && net <= 80.0 && kernel <= 80.0 && fused > net && fused > kernel,
        format!("fused {fused:.2}%, network {net:.2}%, kernel {kernel:.2}%"),
    )
}

fn fusion_real(cfg: &ExperimentConfig) -> Outcome {
    let r = run_experiment(ExperimentName::FusionVsSingle, cfg).map_err(|e| e.to_string())?;
    let (f, n, k) = (
        global_acc(&r, "fused")?,
        global_acc(&r, "network")?,
        global_acc(&r, "kernel")?,
    );
    let (m1, m2) = (f - n, n - k);
    ensure(
        (m1 - 0.70).abs() <= 1.5 && (m2 - 1.67).abs() <= 1.5,
        format!("fused {f:.2}, network {n:.2}, kernel {k:.2}; margins {m1:.2} / {m2:.2} vs 0.70 / 1.67"),
    )
}

fn federated_gap(result: &ExperimentResult) -> Outcome {
    let c = global_acc(result, "centralized")?;
    let f = global_acc(result, "federated")?;
    let rounds = result.rounds.len();
    ensure(
        (c - f).abs() <= 2.0 && rounds > 0,
        format!(
            "centralized {c:.2}%, federated-10 {f:.2}%, gap {:.2} points, {rounds} rounds logged",
            (c - f).abs()
        ),
    )
}

fn federated_real(cfg: &ExperimentConfig) -> Outcome {
    let r = run_experiment(ExperimentName::CentralizedVsFederated, cfg).map_err(|e| e.to_string())?;
    let c = global_acc(&r, "centralized")?;
    let f = global_acc(&r, "federated")?;
    let fpr = r.global("federated").map(|m| m.report.fpr_binary).unwrap_or(f64::NAN);
    ensure(
        c >= 98.0 && f >= 97.0 && fpr <= 2.0,
        format!("centralized {c:.2}%, federated-10 {f:.2}%, federated FPR {fpr:.2}%"),
    )
}

fn client_sweep(result: &ExperimentResult) -> Outcome {
    let arms: Vec<&str> = result
        .metrics
        .iter()
        .filter(|m| m.scope == "global")
        .map(|m| m.arm.as_str())
        .collect();
    let expected = ["clients-3", "clients-6", "clients-8", "clients-10"];
    if arms != expected {
        return Err(format!("rows {arms:?}, expected {expected:?}"));
    }
    let accs: Vec<f64> = expected
        .iter()
        .map(|a| global_acc(result, a))
        .collect::<Result<_, _>>()?;
    ensure(
        accs.iter().all(|&a| a >= 95.0),
        format!(
            "accuracy by clients {}",
            expected
                .iter()
                .zip(&accs)
                .map(|(a, v)| format!("{}={v:.2}%", a.trim_start_matches("clients-")))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn csv_bytes(cfg: &ExperimentConfig, r: &ExperimentResult) -> Result<Vec<u8>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_outputs(dir.path(), cfg, &r.name, &r.metrics, &r.rounds).map_err(|e| e.to_string())?;
    std::fs::read(dir.path().join("metrics.csv")).map_err(|e| e.to_string())
}

fn determinism(cfg: &ExperimentConfig, first: &[(ExperimentName, ExperimentResult)]) -> Outcome {
    let mut names = Vec::new();
    for (name, r) in first {
        let again = run_experiment(*name, cfg).map_err(|e| e.to_string())?;
        let (a, b) = (csv_bytes(cfg, r)?, csv_bytes(cfg, &again)?);
        if a != b {
            return Err(format!("{} metrics.csv differs on rerun", name.as_str()));
        }
        names.push(format!("{} ({} bytes)", name.as_str(), a.len()));
    }
    ensure(
        !names.is_empty(),
        format!("identical metrics.csv for {}", names.join(", ")),
    )
}

/// Server-side view of a round: it sees only what this signature admits.
fn server_round(updates: &[ClientUpdate]) -> fedfusion::Result<(Vec<f64>, FlatParams)> {
    Ok((aggregation_weights(updates)?, aggregate_weighted(updates)?))
}

fn privacy_surface() -> Outcome {
    let update = ClientUpdate {
        client_id: 3,
        params: FlatParams(vec![0.25, -1.0]),
        sample_count: 12,
        local_loss: 0.5,
    };
    // exhaustive: adding a field to ClientUpdate breaks this pattern
    let ClientUpdate {
        client_id,
        params: FlatParams(values),
        sample_count,
        local_loss,
    } = update.clone();
    let _: (usize, Vec<f64>, usize, f64) = (client_id, values, sample_count, local_loss);
    let _: fn(&[ClientUpdate]) -> fedfusion::Result<FlatParams> = aggregate_weighted;
    let _: fn(&[ClientUpdate]) -> fedfusion::Result<Vec<f64>> = aggregation_weights;

    let json = serde_json::to_value(&update).map_err(|e| e.to_string())?;
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    let scalar_params = json["params"]
        .as_array()
        .is_some_and(|a| a.iter().all(|v| v.is_number()));
    let (w, agg) = server_round(&[update]).map_err(|e| e.to_string())?;
    ensure(
        keys == ["client_id", "local_loss", "params", "sample_count"]
            && scalar_params
            && w == [1.0]
            && agg.0 == [0.25, -1.0],
        format!("ClientUpdate fields {keys:?}; aggregation takes &[ClientUpdate] only"),
    )
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, label: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {label}: {d} [{secs:.1}s]"),
            Err(d) => {
                self.failed += 1;
                println!("FAIL  {label}: {d} [{secs:.1}s]");
            }
        }
    }

    fn skip(&self, label: &str, why: &str) {
        println!("SKIP  {label}: {why}");
    }
}

fn main() {
    let mut suite = Suite { failed: 0 };
    println!("acceptance suite");
    suite.run("1 gradient correctness", gradients);
    suite.run("2 layer oracles", layer_oracles);
    suite.run("3 FedAvg equivalence", fedavg_equivalence);

    let cfg = synthetic_config();
    let mut results = Vec::new();
    let mut experiment = |name: ExperimentName| -> Result<ExperimentResult, String> {
        let r = run_experiment(name, &cfg).map_err(|e| e.to_string())?;
        results.push((name, r.clone()));
        Ok(r)
    };
    suite.run("4 fusion advantage (synthetic)", || {
        fusion(&experiment(ExperimentName::FusionVsSingle)?)
    });
    suite.run("5 centralized vs federated gap (synthetic)", || {
        federated_gap(&experiment(ExperimentName::CentralizedVsFederated)?)
    });
    suite.run("6 client sweep (synthetic)", || {
        client_sweep(&experiment(ExperimentName::ClientSweep)?)
    });
    suite.run("7 determinism", || determinism(&cfg, &results));
    suite.run("8 privacy boundary", privacy_surface);

    match real_config() {
        Some(real) => {
            let start = Instant::now();
            match fusion_real(&real) {
                Ok(d) => println!("PASS  4 fusion ordering target (CICEVSE2024): {d}"),
                Err(d) => println!("MISS  4 fusion ordering target (CICEVSE2024, soft): {d}"),
            }
            println!("      [{:.1}s]", start.elapsed().as_secs_f64());
            suite.run("5 centralized vs federated (CICEVSE2024)", || federated_real(&real));
        }
        None => {
            let why = "set CICEVSE2024_NET and CICEVSE2024_KERNEL to run";
            suite.skip("4 fusion ordering target (CICEVSE2024)", why);
            suite.skip("5 centralized vs federated (CICEVSE2024)", why);
        }
    }

    if suite.failed > 0 {
        println!("{} criterion check(s) failed", suite.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
