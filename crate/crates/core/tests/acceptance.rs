//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits nonzero
//! when any criterion fails or overruns its time budget.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{brute_force_all, brute_force_dependencies, brute_force_links, hop_distances, random_graph, random_matrix};

use cloudlet_forecast::config::{DatasetSource, RunConfig};
use cloudlet_forecast::dataset::{
    fit_standardizer, load_speed_matrix, make_instances, split_train_val, window_stream, SpeedSeries,
};
use cloudlet_forecast::experiment::{prepare, run_experiment, run_prepared, write_outputs, RunReport};
use cloudlet_forecast::federation::{Connectivity, Strategy};
use cloudlet_forecast::forecaster::{chebyshev_basis, scaled_laplacian, ChebModel, Forecaster, ForecasterParams, Sample};
use cloudlet_forecast::graph::{dependency_closure, partition_from_assignment};
use cloudlet_forecast::metrics::{
    detect_sudden_events, event_blind_oracle, event_perfect_oracle, mae, sepa, SepaConfig,
};
use cloudlet_forecast::pruning::{apply_rate_rule, controller_update, ControllerConfig, PruningState};
use cloudlet_forecast::synth::{generate_synthetic, SynthConfig};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bundled(name: &str) -> PathBuf {
    repo_root().join("configs").join(name)
}

fn load_config(name: &str) -> RunConfig {
    RunConfig::from_file(&bundled(name)).expect("bundled config loads")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn detector_equivalence() -> Result<String, String> {
    let cfg = SepaConfig::default();
    let mut total = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes = 3;
        let mut m = DMatrix::zeros(500, nodes);
        for j in 0..nodes {
            let mut level = 60.0;
            for t in 0..500 {
                if rng.gen_bool(0.03) {
                    level = rng.gen_range(10.0..70.0);
                }
                m[(t, j)] = level + rng.gen_range(-4.0..4.0);
            }
        }
        let fast = detect_sudden_events(m.as_view(), 0, &cfg);
        let slow = brute_force_all(&m, &cfg);
        ensure(fast == slow, || format!("seed {seed}: {} vs {} events", fast.len(), slow.len()))?;
        total += slow.len();
    }
    Ok(format!("100 series, {total} events, exact match"))
}

fn oracle_inversion() -> Result<String, String> {
    let cfg = SepaConfig::default();
    let data = generate_synthetic(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let (_, val) = split_train_val(&data.speeds, 0.8);
    let truth = val.values();
    let events = detect_sudden_events(truth.as_view(), 0, &cfg);
    ensure(!events.is_empty(), || "validation split has no events".into())?;
    let blind = event_blind_oracle(truth.as_view(), 0, &events, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let perfect = event_perfect_oracle(truth.as_view(), &cfg, &mut rng);
    let s_blind = sepa(blind.as_view(), truth.as_view(), 0, &events, &cfg).value();
    let s_perfect = sepa(perfect.as_view(), truth.as_view(), 0, &events, &cfg).value();
    let m_blind = mae(blind.as_slice(), truth.as_slice()).map_err(|e| e.to_string())?;
    let m_perfect = mae(perfect.as_slice(), truth.as_slice()).map_err(|e| e.to_string())?;
    ensure(s_blind == Some(0.0), || format!("event-blind SEPA {s_blind:?}"))?;
    ensure(s_perfect == Some(1.0), || format!("event-perfect SEPA {s_perfect:?}"))?;
    ensure(m_blind < m_perfect, || format!("MAE blind {m_blind} >= perfect {m_perfect}"))?;
    Ok(format!(
        "{} events: blind SEPA 0 MAE {m_blind:.3}, perfect SEPA 1 MAE {m_perfect:.3}",
        events.len()
    ))
}

fn controller_conformance() -> Result<String, String> {
    let cfg = ControllerConfig::default();
    // (p, ratio, expected p)
    let table = [
        (0.30, 0.97, 0.30),
        (0.30, 0.985, 0.30),
        (0.30, 1.00, 0.30),
        (0.30, 1.001, 0.35),
        (0.30, 1.5, 0.35),
        (0.30, 0.969, 0.25),
        (0.30, 0.2, 0.25),
        (0.70, 1.3, 0.70),
        (0.68, 1.3, 0.70),
        (0.10, 0.5, 0.10),
        (0.12, 0.5, 0.10),
        (0.10, 1.0, 0.10),
        (0.70, 0.98, 0.70),
    ];
    for (p, ratio, want) in table {
        let got = apply_rate_rule(p, ratio, &cfg);
        ensure((got - want).abs() < 1e-12, || format!("p {p} ratio {ratio}: got {got}, want {want}"))?;
    }
    // Warm-up over two windows sets the baseline 0.5; then every third window
    // compares the mean of the last three against it.
    let steps: [(f64, f64); 14] = [
        (0.5, 0.10),
        (0.5, 0.10),
        (0.6, 0.10),
        (0.6, 0.10),
        (0.6, 0.15),
        (0.49, 0.15),
        (0.49, 0.15),
        (0.49, 0.15),
        (0.4, 0.15),
        (0.4, 0.15),
        (0.4, 0.10),
        (0.3, 0.10),
        (0.3, 0.10),
        (0.3, 0.10),
    ];
    let mut state = PruningState::new(&cfg, &BTreeSet::from([1, 2, 3]));
    for (i, (s, want)) in steps.into_iter().enumerate() {
        state = controller_update(&state, Some(s), &cfg);
        ensure((state.p - want).abs() < 1e-12, || format!("window {i}: p {} want {want}", state.p))?;
        ensure(state.sepa_buffer.len() <= cfg.w, || "buffer overflow".into())?;
    }
    ensure(state.sepa_base == Some(0.5), || format!("baseline {:?}", state.sepa_base))?;
    Ok(format!("{} rate-rule rows and a {}-window trajectory", table.len(), steps.len()))
}

fn gradient_check() -> Result<String, String> {
    let lookback = 12;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(2..=8);
        let order = rng.gen_range(1..=3);
        let horizon = [3, 6, 12][rng.gen_range(0..3)];
        let scored = rng.gen_range(1..=n);
        let graph = random_graph(&mut rng, n, 0.5);
        let model = ChebModel::new(&graph, order, lookback, horizon).map_err(|e| e.to_string())?;
        let shape = ChebModel::shape_for(order, lookback, horizon);
        let theta = (0..shape.len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let params = ForecasterParams::from_flat(theta, shape).map_err(|e| e.to_string())?;
        let samples: Vec<Sample> = (0..4)
            .map(|_| Sample {
                input: random_matrix(&mut rng, lookback, n),
                target: random_matrix(&mut rng, horizon, scored),
            })
            .collect();
        let batch: Vec<&Sample> = samples.iter().collect();
        let (_, grad) = model.loss_and_grad(&params, &batch).map_err(|e| e.to_string())?;
        let eps = 1e-6;
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        for i in 0..params.len() {
            let mut plus = params.clone();
            plus.theta[i] += eps;
            let mut minus = params.clone();
            minus.theta[i] -= eps;
            let lp = model.loss_and_grad(&plus, &batch).map_err(|e| e.to_string())?.0;
            let lm = model.loss_and_grad(&minus, &batch).map_err(|e| e.to_string())?.0;
            let fd = (lp - lm) / (2.0 * eps);
            diff2 += (grad[i] - fd).powi(2);
            a2 += grad[i].powi(2);
            f2 += fd.powi(2);
        }
        let rel = diff2.sqrt() / a2.sqrt().max(f2.sqrt()).max(1e-300);
        worst = worst.max(rel);
        ensure(rel <= 1e-5, || format!("seed {seed}: relative error {rel:e}"))?;
    }
    Ok(format!("100 points, worst relative error {worst:.2e}"))
}

/// Monomial coefficients of `T_0..T_{order-1}`.
fn chebyshev_coefficients(order: usize) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = vec![vec![1.0], vec![0.0, 1.0]];
    while c.len() < order {
        let k = c.len();
        let mut next = vec![0.0; k + 1];
        for (j, v) in c[k - 1].iter().enumerate() {
            next[j + 1] += 2.0 * v;
        }
        for (j, v) in c[k - 2].iter().enumerate() {
            next[j] -= v;
        }
        c.push(next);
    }
    c.truncate(order);
    c
}

fn chebyshev_oracle() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.gen_range(1..=20);
        let density = rng.gen_range(0.1..0.6);
        let graph = random_graph(&mut rng, n, density);
        let (lt, _) = scaled_laplacian(&graph);
        let order = rng.gen_range(1..=6);
        let x = random_matrix(&mut rng, n, 3);
        let basis = chebyshev_basis(&lt, order, &x).map_err(|e| e.to_string())?;
        let mut powers = vec![DMatrix::identity(n, n)];
        for j in 1..order {
            powers.push(&powers[j - 1] * &lt);
        }
        for (k, coeffs) in chebyshev_coefficients(order).iter().enumerate() {
            let mut poly = DMatrix::zeros(n, n);
            for (j, c) in coeffs.iter().enumerate() {
                poly += &powers[j] * *c;
            }
            let err = (&poly * &x - &basis[k]).abs().max();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("seed {seed} k {k}: error {err:e}"))?;
        }
    }
    Ok(format!("50 graphs, worst abs error {worst:.2e}"))
}

fn ledger_ordering() -> Result<String, String> {
    let base = load_config("synthetic_30.json");
    let data = prepare(&base, &repo_root()).map_err(|e| e.to_string())?;
    ensure(data.graph.len() == 30 && data.partition.num_cloudlets() == 3, || "unexpected scenario shape".into())?;
    let mut notes = Vec::new();
    for strategy in [Strategy::TraditionalFl, Strategy::ServerfreeFl, Strategy::Gossip] {
        let run = |connectivity| {
            let cfg = RunConfig {
                strategy,
                connectivity,
                ..base.clone()
            };
            run_prepared(&cfg, &data).map(|o| o.report).map_err(|e| e.to_string())
        };
        let full = run(Connectivity::Full)?;
        let none = run(Connectivity::None)?;
        let adaptive = run(Connectivity::Adaptive)?;
        let (f, n, a) = (
            full.final_feature_bytes(),
            none.final_feature_bytes(),
            adaptive.final_feature_bytes(),
        );
        ensure(n == 0 && 0 < a && a < f, || format!("{}: none {n}, adaptive {a}, full {f}", strategy.as_str()))?;
        for (ra, rf) in adaptive.rounds.iter().zip(&full.rounds) {
            ensure(ra.cumulative_feature_bytes <= rf.cumulative_feature_bytes, || {
                format!(
                    "{} round {}: adaptive {} > full {}",
                    strategy.as_str(),
                    ra.round,
                    ra.cumulative_feature_bytes,
                    rf.cumulative_feature_bytes
                )
            })?;
        }
        notes.push(format!("{} 0<{a}<{f}", strategy.as_str()));
    }
    Ok(notes.join(", "))
}

fn final_sepa(report: &RunReport, horizon: usize) -> Result<f64, String> {
    report
        .final_evaluation
        .at(horizon)
        .and_then(|h| h.sepa)
        .ok_or_else(|| format!("no SEPA at horizon {horizon}"))
}

fn connectivity_matters() -> Result<String, String> {
    let base = load_config("corridor_events.json");
    ensure(base.horizon == 12, || "scenario must forecast 12 steps ahead".into())?;
    let seeds = 5;
    let mut sums = [0.0; 3];
    for seed in 0..seeds {
        let mut cfg = base.clone();
        cfg.seed = seed;
        if let DatasetSource::Synthetic(s) = &mut cfg.dataset {
            s.seed = seed;
        }
        let data = prepare(&cfg, &repo_root()).map_err(|e| e.to_string())?;
        for (i, connectivity) in [Connectivity::Full, Connectivity::None, Connectivity::Adaptive].into_iter().enumerate() {
            let run = RunConfig {
                connectivity,
                ..cfg.clone()
            };
            let report = run_prepared(&run, &data).map_err(|e| e.to_string())?.report;
            sums[i] += final_sepa(&report, 12)?;
        }
    }
    let [full, none, adaptive] = sums.map(|s| s / seeds as f64);
    let detail = format!("mean SEPA full {full:.3}, none {none:.3}, adaptive {adaptive:.3}");
    ensure(full - none >= 0.05, || format!("{detail}: gap {:.3} < 0.05", full - none))?;
    ensure((adaptive - full).abs() <= 0.05, || format!("{detail}: adaptive off by {:.3}", adaptive - full))?;
    Ok(detail)
}

fn determinism() -> Result<String, String> {
    let mut sizes = Vec::new();
    for name in ["synthetic_30.json", "corridor_events.json"] {
        let cfg = load_config(name);
        let mut bytes = Vec::new();
        for _ in 0..2 {
            let out = run_experiment(&cfg, &repo_root()).map_err(|e| e.to_string())?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let paths = write_outputs(&out, dir.path()).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(&paths.report).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1], || format!("{name}: reports differ"))?;
        sizes.push(format!("{name} {} bytes", bytes[0].len()));
    }
    Ok(format!("byte-identical reports: {}", sizes.join(", ")))
}

fn closure_oracle() -> Result<String, String> {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let n = rng.gen_range(1..=50);
        let density = rng.gen_range(0.02..0.3);
        let graph = random_graph(&mut rng, n, density);
        let cloudlets = rng.gen_range(1..=n.min(6));
        let assignment: Vec<usize> = (0..n)
            .map(|v| if v < cloudlets { v } else { rng.gen_range(0..cloudlets) })
            .collect();
        let l = rng.gen_range(0..=4);
        let base = partition_from_assignment(&graph, assignment.clone()).map_err(|e| e.to_string())?;
        let closed = dependency_closure(&graph, &base, l);
        let d = hop_distances(&graph);
        for c in 0..cloudlets {
            let want = brute_force_dependencies(&d, &assignment, c, l);
            ensure(closed.dependencies(c) == &want, || format!("seed {seed} cloudlet {c}"))?;
            let links = brute_force_links(&d, &assignment, c, l);
            ensure(closed.neighbors(c) == &links, || format!("seed {seed} cloudlet {c} links"))?;
        }
    }
    Ok("100 random graphs, exact match".into())
}

fn packing_invariants(series: &SpeedSeries, label: &str) -> Result<(), String> {
    let (train, _) = split_train_val(series, 0.8);
    for per_sensor in [false, true] {
        let s = fit_standardizer(&train, per_sensor).map_err(|e| e.to_string())?;
        let back = s.destandardize(&s.standardize(series));
        let err = (back.values() - series.values()).abs().max();
        ensure(err <= 1e-9, || format!("{label}: round-trip error {err:e}"))?;
    }
    for horizon in [3, 6, 12] {
        let instances = make_instances(series.steps(), 12, horizon);
        ensure(instances.len() == series.steps() - 12 - horizon + 1, || format!("{label}: instance count"))?;
        for window in [70, 140] {
            let windows = window_stream(&instances, window);
            let joined: Vec<_> = windows.iter().flat_map(|w| w.instances.iter().copied()).collect();
            ensure(joined == instances, || format!("{label}: windows of {window} lose instances"))?;
            ensure(windows.iter().all(|w| w.len() <= window), || format!("{label}: oversized window"))?;
            // First input row of every instance plus the tail of the last one
            // rebuilds the whole series.
            let last = joined.last().expect("instances");
            let mut rows: Vec<usize> = joined.iter().map(|i| i.t0).collect();
            rows.extend(last.t0 + 1..last.end());
            let mut rebuilt = DMatrix::zeros(rows.len(), series.num_nodes());
            for (r, &t) in rows.iter().enumerate() {
                rebuilt.set_row(r, &series.values().row(t));
            }
            ensure(&rebuilt == series.values(), || format!("{label}: windows do not tile the series"))?;
            for inst in &joined {
                let both = series.values().rows(inst.t0, 12 + horizon);
                ensure(inst.input(series) == both.rows(0, 12) && inst.target(series) == both.rows(12, horizon), || {
                    format!("{label}: instance at {} is not contiguous", inst.t0)
                })?;
            }
        }
    }
    Ok(())
}

fn standardization_and_packing() -> Result<String, String> {
    let synth = generate_synthetic(&SynthConfig::default()).map_err(|e| e.to_string())?.speeds;
    packing_invariants(&synth, "synthetic")?;
    let real = load_speed_matrix(&fixture("pems_format_sample.csv")).map_err(|e| e.to_string())?.truncate(200);
    packing_invariants(&real, "fixture")?;
    Ok(format!(
        "synthetic {}x{} and fixture {}x{}",
        synth.steps(),
        synth.num_nodes(),
        real.steps(),
        real.num_nodes()
    ))
}

fn main() {
    let criteria: [(&str, Check, u64); 10] = [
        ("detector matches brute force", detector_equivalence, 10),
        ("oracle inversion", oracle_inversion, 60),
        ("controller conformance", controller_conformance, 10),
        ("gradient check", gradient_check, 60),
        ("Chebyshev recursion vs dense polynomial", chebyshev_oracle, 60),
        ("ledger ordering on the bundled scenario", ledger_ordering, 60),
        ("connectivity matters at horizon 12", connectivity_matters, 300),
        ("determinism of bundled configs", determinism, 120),
        ("dependency closure vs BFS", closure_oracle, 60),
        ("standardization and packing invariants", standardization_and_packing, 60),
    ];
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            ensure(elapsed < Duration::from_secs(budget), || format!("{d}; took {elapsed:.1?}, budget {budget}s"))?;
            Ok(d)
        });
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail} [{:.2}s]", i + 1, elapsed.as_secs_f64());
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
