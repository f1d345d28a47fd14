//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.
//!
//! `cargo test --release -p hybrid-sysid --test acceptance -- 7 8` runs a
//! subset.

mod common;

use std::time::Instant;

use hybrid_sysid::fatigue::{generate_directions, multirain_damage, rainflow, rainflow_4pt, signal_damage};
use hybrid_sysid::lstm::{parameter_count, TrainConfig};
use hybrid_sysid::metrics::rms_error;
use hybrid_sysid::pipeline::{
    fit_predictor, recombination_weights, recombine, FitSpec, HybridPredictor, Scheme, WindowingConfig,
};
use hybrid_sysid::seed::derive_seed;
use hybrid_sysid::signal::{extract_subsequences, subsequence_starts, MultiChannelSignal};
use hybrid_sysid::spectral::{estimate_frf, frf_predict, FrfModel};
use hybrid_sysid::store::{decode_bundle, encode_bundle, load_bundle, save_bundle, Kind, ModelBundle, Provenance, Role};
use hybrid_sysid::study::{run_study, spearman, StudyConfig};
use hybrid_sysid::synth::{
    delayed_gain_plant, generate_noise, lti_respond, make_dataset, second_order_plant, study_plant, DatasetSpec,
    NoiseSpec, NonlinearRigParams, Plant,
};
use hybrid_sysid::{LstmNetwork, WoehlerParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances.
const FRF_HELD_OUT_RMS: f64 = 0.05;
const FRF_MAGNITUDE: f64 = 0.02;
const GRADIENT_REL: f64 = 1e-5;
const GRADIENT_NETWORKS: usize = 24;
const UNITY: f64 = 1e-12;
const DAMAGE_EXACT: f64 = 1e-12;
const LATTICE_VS_DENSE: f64 = 0.02;
const STUDY_SPEARMAN: f64 = -0.8;
const STUDY_MULTIRAIN: (f64, f64) = (0.8, 1.2);
const HYBRID_GAIN: f64 = 0.2;
/// Drive amplitude (kN) of the FRF identification noise on the rig.
const LINEAR_REGIME_AMPLITUDE: f64 = 0.05;
const ROOT_SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn names(prefix: &str) -> Vec<String> {
    (1..=3).map(|i| format!("{prefix}_{i}")).collect()
}

fn parameter_counts() -> Outcome {
    let cases: [(&[usize], usize); 4] = [(&[10], 593), (&[39], 6_828), (&[23, 23], 6_880), (&[39, 39], 19_152)];
    let mut bad = Vec::new();
    for (cells, expected) in cases {
        let got = parameter_count(cells, 3, 3);
        let allocated = LstmNetwork::zeros(3, 3, cells).unwrap().parameter_count();
        if got != expected || allocated != expected {
            bad.push(format!("{cells:?}: {got}/{allocated} != {expected}"));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { "all four counts exact".into() } else { bad.join("; ") })
}

/// Estimates the FRF from one file per input axis, each exciting only that
/// axis, and checks it against the true plant.
fn frf_check(truth: &FrfModel, label: &str) -> (f64, f64) {
    let fs = truth.sample_rate;
    let noise = |seed: u64, channels: Vec<String>| {
        generate_noise(&NoiseSpec {
            duration: 120.0,
            sample_rate: fs,
            seed,
            channels,
            ..NoiseSpec::default()
        })
        .unwrap()
    };
    let n_in = truth.n_inputs();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for axis in 0..n_in {
        let one = noise(derive_seed(7, label, axis as u64), vec!["x".into()]);
        let mut ch = vec![vec![0.0; one.len()]; n_in];
        ch[axis] = one.channel(0).to_vec();
        let x = MultiChannelSignal::new(fs, truth.input_names().to_vec(), ch).unwrap();
        ys.push(lti_respond(truth, &x).unwrap());
        xs.push(x);
    }
    let est = estimate_frf(&xs, &ys, 4096, truth.band_limit()).unwrap();

    let held = noise(derive_seed(7, label, 99), truth.input_names().to_vec());
    let p = frf_predict(&est, &held).unwrap();
    let y = lti_respond(truth, &held).unwrap();
    let rms = (0..y.n_channels())
        .map(|c| rms_error(p.channel(c), y.channel(c)).unwrap())
        .fold(0.0, f64::max);

    // Magnitude error over the excited band, relative to each output's
    // largest true gain at that frequency.
    let mut mag: f64 = 0.0;
    for (bin, &f) in est.frequencies().iter().enumerate() {
        if !(1.0..=45.0).contains(&f) {
            continue;
        }
        let h_true = truth.interpolate(f);
        let n_out = truth.n_outputs();
        for l in 0..n_out {
            let scale = (0..n_in).map(|k| h_true[k * n_out + l].norm()).fold(0.0, f64::max);
            for k in 0..n_in {
                let err = (est.h(bin, k, l).norm() - h_true[k * n_out + l].norm()).abs() / scale;
                mag = mag.max(err);
            }
        }
    }
    (rms, mag)
}

fn frf_exactness() -> Outcome {
    let fs = 1000.0;
    let plants = [
        ("delayed-gain", delayed_gain_plant(names("x"), names("y"), 1.5, 3.0, fs, 60.0).unwrap()),
        (
            "second-order",
            second_order_plant(names("x"), names("y"), &[10.0, 16.0, 22.0], 0.2, 1.5, 0.3, fs, 60.0).unwrap(),
        ),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (label, truth) in &plants {
        let (rms, mag) = frf_check(truth, label);
        pass &= rms < FRF_HELD_OUT_RMS && mag < FRF_MAGNITUDE;
        detail.push(format!("{label}: held-out rms {rms:.2e}, magnitude error {mag:.2e}"));
    }
    outcome(pass, detail.join("; "))
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..GRADIENT_NETWORKS {
        let blocks = rng.gen_range(1..=3);
        let cells: Vec<usize> = (0..blocks).map(|_| rng.gen_range(1..=5)).collect();
        let (n_in, n_out) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let steps = rng.gen_range(1..=8);
        let batch = rng.gen_range(1..=2);
        let err = common::worst_gradient_error(&cells, n_in, n_out, steps, batch, rng.gen(), common::Stencil::Central4(2e-3));
        worst = worst.max(err);
    }
    outcome(worst < GRADIENT_REL, format!("{GRADIENT_NETWORKS} networks, worst relative error {worst:.2e}"))
}

fn partition_of_unity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sum, mut worst_rec): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for &length in &[16usize, 256] {
        for &overlap in &[0.25, 0.5, 1.0] {
            for _ in 0..25 {
                let total = rng.gen_range(1..3000);
                let cfg = WindowingConfig::new(length, overlap, 10).unwrap();
                let plan = subsequence_starts(total, length, overlap).unwrap();
                let starts: Vec<isize> = plan.all_starts().collect();
                let w = recombination_weights(&starts, total, &cfg).unwrap();
                let mut sum = vec![0.0; total];
                for (s, ws) in starts.iter().zip(&w) {
                    for (t, v) in ws.iter().enumerate() {
                        let i = s + t as isize;
                        if i >= 0 && (i as usize) < total {
                            sum[i as usize] += v;
                        }
                    }
                }
                worst_sum = sum.iter().map(|v| (v - 1.0).abs()).fold(worst_sum, f64::max);

                let data = vec![(0..total).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>()];
                let s = MultiChannelSignal::new(100.0, vec!["c".into()], data).unwrap();
                let subs = extract_subsequences(&s, length, overlap).unwrap();
                let back = recombine(&subs, total, &cfg, 100.0, vec!["c".into()]).unwrap();
                worst_rec = s
                    .channel(0)
                    .iter()
                    .zip(back.channel(0))
                    .map(|(a, b)| (a - b).abs())
                    .fold(worst_rec, f64::max);
                cases += 1;
            }
        }
    }
    outcome(
        worst_sum <= UNITY && worst_rec < UNITY,
        format!("{cases} cases, weight-sum error {worst_sum:.1e}, reconstruction error {worst_rec:.1e}"),
    )
}

fn rainflow_oracles() -> Outcome {
    type Fixture = (&'static [f64], &'static [(f64, f64)]);
    let fixtures: [Fixture; 6] = [
        (&[-2.0, 1.0, -3.0, 5.0, -1.0, 3.0, -4.0, 4.0, -2.0], &[(1.5, -0.5), (2.0, 1.0), (3.5, 0.5), (4.5, 0.5)]),
        (&[0.0, 4.0, 1.0, 3.0, 0.0], &[(1.0, 2.0), (2.0, 2.0)]),
        (&[1.0, 5.0, 2.0, 4.0, 3.0, 6.0, 0.0], &[(0.5, 3.5), (1.5, 3.5), (3.0, 3.0)]),
        (&[0.0, 3.0, 1.0, 3.0, 1.0, 3.0, 0.0], &[(1.0, 2.0), (1.0, 2.0), (1.5, 1.5)]),
        (&[0.0, 1.0, -2.0, 3.0, -4.0], &[(1.5, -0.5), (3.5, -0.5)]),
        (&[2.0, -1.0, 3.0, -4.0, 1.0], &[(1.5, 0.5), (3.5, -0.5)]),
    ];
    let mut failures = Vec::new();
    for (i, (points, expected)) in fixtures.iter().enumerate() {
        let set = rainflow_4pt(points);
        let mut got: Vec<(f64, f64)> = set.cycles.iter().map(|c| (c.amplitude, c.mean)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if got != *expected || set.cycles.iter().any(|c| c.count != 1.0) {
            failures.push(format!("fixture {i}: {got:?}"));
        }
    }

    let h = std::f64::consts::FRAC_1_SQRT_2;
    let period = [0.0, h, 1.0, h, 0.0, -h, -1.0, -h];
    let sine = |n: usize, a: f64| -> Vec<f64> { (0..=8 * n).map(|i| a * period[i % 8]).collect() };
    let d = signal_damage(&sine(100, 10.0), &WoehlerParams::default());
    if (d - 1.0).abs() > DAMAGE_EXACT {
        failures.push(format!("100 cycles at 10: d = {d}"));
    }
    if rainflow(&sine(100, 10.0)).total_count() != 100.0 {
        failures.push("sine cycle count".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..400);
        let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let doubled: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let w = WoehlerParams::default();
        if signal_damage(&doubled, &w) != 32.0 * signal_damage(&s, &w) {
            failures.push("d(2s) != 32 d(s)".into());
            break;
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "6 fixtures, sine closed form and scale covariance exact".into()
        } else {
            failures.join("; ")
        },
    )
}

fn multirain_lattice() -> Outcome {
    let lattice = generate_directions(500).unwrap();
    let dense = generate_directions(10_000).unwrap();
    let w = WoehlerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let mix: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base: Vec<Vec<f64>> = (0..3).map(|_| (0..1500).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        // Correlated channels give a damage landscape with a clear peak.
        let ch: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..1500).map(|t| (0..3).map(|j| mix[3 * i + j] * base[j][t]).sum()).collect())
            .collect();
        let s = MultiChannelSignal::new(100.0, names("c"), ch).unwrap();
        let a = multirain_damage(&s, &lattice, &w).unwrap();
        let b = multirain_damage(&s, &dense, &w).unwrap();
        worst = worst.max((a / b - 1.0).abs());
    }
    outcome(worst <= LATTICE_VS_DENSE, format!("8 signals, worst lattice/dense deviation {:.2}%", 100.0 * worst))
}

/// Runs `trial` over the root seeds until two agree; passes if at least two
/// succeed.
fn two_of_three(mut trial: impl FnMut(u64) -> (bool, String)) -> Outcome {
    let (mut ok, mut bad) = (0, 0);
    let mut detail = Vec::new();
    for seed in ROOT_SEEDS {
        let (pass, d) = trial(seed);
        println!("    seed {seed}: {} {d}", if pass { "ok" } else { "miss" });
        detail.push(format!("seed {seed}: {}", if pass { "ok" } else { "miss" }));
        if pass {
            ok += 1;
        } else {
            bad += 1;
        }
        if ok >= 2 || bad >= 2 {
            break;
        }
    }
    outcome(ok >= 2, detail.join(", "))
}

fn linear_study() -> Outcome {
    two_of_three(|seed| {
        let mut cfg = StudyConfig::desk(study_plant(200.0, 80.0).unwrap(), seed);
        cfg.architectures = vec![vec![39]];
        let report = run_study(&cfg, |_| {}).unwrap();
        let sizes: Vec<f64> = report.rows.iter().map(|r| r.files as f64).collect();
        let rms: Vec<f64> = report.rows.iter().map(|r| r.rms).collect();
        let rho = spearman(&sizes, &rms).unwrap_or(f64::NAN);
        let last = report.rows.last().unwrap();
        let pass = rho <= STUDY_SPEARMAN && (STUDY_MULTIRAIN.0..=STUDY_MULTIRAIN.1).contains(&last.multirain);
        let curve: Vec<String> = report.rows.iter().map(|r| format!("{}:{:.4}", r.files, r.rms)).collect();
        (pass, format!("rms {} rho {rho:.2} multirain {:.3}", curve.join(" "), last.multirain))
    })
}

fn channel_mean_rms(p: &MultiChannelSignal, y: &MultiChannelSignal) -> f64 {
    let y = y.select(p.names()).unwrap();
    (0..p.n_channels()).map(|c| rms_error(p.channel(c), y.channel(c)).unwrap()).sum::<f64>() / p.n_channels() as f64
}

/// FRF of the rig identified where its stiffness is nearly constant: one
/// low-amplitude, zero-mean noise file per drive axis.
fn linear_regime_frf(plant: &Plant, inputs: &[String], outputs: &[String], seed: u64) -> FrfModel {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for axis in 0..3 {
        let noise = generate_noise(&NoiseSpec {
            duration: 120.0,
            sample_rate: 200.0,
            seed: derive_seed(seed, "acceptance-linear-regime", axis as u64),
            channels: inputs.to_vec(),
            mean_range: (0.0, 0.0),
            amplitude_range: (LINEAR_REGIME_AMPLITUDE, LINEAR_REGIME_AMPLITUDE),
            ..NoiseSpec::default()
        })
        .unwrap();
        let channels = (0..3)
            .map(|c| if c == axis { noise.channel(c).to_vec() } else { vec![0.0; noise.len()] })
            .collect();
        let x = MultiChannelSignal::new(200.0, inputs.to_vec(), channels).unwrap();
        ys.push(plant.respond(&x).unwrap().select(outputs).unwrap());
        xs.push(x);
    }
    estimate_frf(&xs, &ys, 1024, 80.0).unwrap()
}

fn hybrid_advantage() -> Outcome {
    two_of_three(|seed| {
        let dir = tempfile::tempdir().unwrap();
        let plant = Plant::Rig(NonlinearRigParams::moderate());
        let noise = NoiseSpec {
            duration: 30.0,
            sample_rate: 200.0,
            ..NoiseSpec::default()
        };
        let mut train = DatasetSpec::new(Kind::Noise, 12, seed);
        train.noise = noise.clone();
        train.role = Some(Role::Train);
        let mut test = DatasetSpec::new(Kind::ServiceLoad, 6, seed);
        test.noise = noise;
        test.role = Some(Role::Test);
        let tm = make_dataset(&train, &plant, dir.path().join("train")).unwrap();
        let vm = make_dataset(&test, &plant, dir.path().join("test")).unwrap();
        let load = |m: &hybrid_sysid::store::DatasetManifest| -> Vec<MultiChannelSignal> {
            m.entries.iter().map(|e| m.load(e).unwrap()).collect()
        };
        let (train_files, test_files) = (load(&tm), load(&vm));
        let inputs = names("drive");
        let mut outputs = names("disp");
        outputs.extend(names("force"));
        let split = |files: &[MultiChannelSignal]| -> (Vec<MultiChannelSignal>, Vec<MultiChannelSignal>) {
            files.iter().map(|f| (f.select(&inputs).unwrap(), f.select(&outputs).unwrap())).unzip()
        };
        let (xs, ys) = split(&train_files);
        let frf = linear_regime_frf(&plant, &inputs, &outputs, seed);
        let spec = FitSpec {
            scheme: Scheme::Hybrid2,
            frf: Some(&frf),
            windowing: WindowingConfig::default(),
            architecture: vec![39],
            input_names: inputs.clone(),
            output_names: outputs.clone(),
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 100,
                batch_size: 16,
                seed: derive_seed(seed, "acceptance-shuffle", 0),
                ..TrainConfig::default()
            },
            init_seed: derive_seed(seed, "acceptance-init", 0),
        };
        let (hybrid, _) = fit_predictor(&spec, &xs, &ys, |_| Ok(())).unwrap();
        let frf_only = HybridPredictor::frf_only(frf.clone(), WindowingConfig::default()).unwrap();
        let (tx, ty) = split(&test_files);
        let score = |p: &HybridPredictor| {
            tx.iter().zip(&ty).map(|(x, y)| channel_mean_rms(&p.predict(x).unwrap(), y)).sum::<f64>() / tx.len() as f64
        };
        let (h, f) = (score(&hybrid), score(&frf_only));
        (h <= (1.0 - HYBRID_GAIN) * f, format!("hybrid2 {h:.4} frf {f:.4} ({:+.1}%)", 100.0 * (h / f - 1.0)))
    })
}

fn persistence() -> Outcome {
    let frf = second_order_plant(names("drive"), names("force"), &[12.0, 18.0, 25.0], 0.2, 1.0, 0.1, 200.0, 60.0).unwrap();
    let net = LstmNetwork::initialized(6, 3, &[7], 11).unwrap();
    let predictor = HybridPredictor::new(
        Scheme::Hybrid2,
        Some(frf),
        Some(net),
        WindowingConfig::default(),
        names("drive"),
        names("force"),
    )
    .unwrap();
    let bundle = ModelBundle {
        predictor,
        provenance: Provenance {
            seed: 11,
            config_hash: "0".repeat(64),
            manifest_hash: "f".repeat(64),
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
    save_bundle(&bundle, &a).unwrap();
    let loaded = load_bundle(&a).unwrap();
    save_bundle(&loaded, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    let identical = loaded == bundle && bytes == std::fs::read(&b).unwrap();

    let mut rejected = 0;
    let mut trials = 0;
    for i in (0..bytes.len()).step_by(97) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x5a;
        let first = decode_bundle(&bad).map(|_| ()).map_err(|e| e.to_string());
        let second = decode_bundle(&bad).map(|_| ()).map_err(|e| e.to_string());
        trials += 1;
        if first.is_err() && first == second {
            rejected += 1;
        }
    }
    let truncated = decode_bundle(&bytes[..bytes.len() - 3]).is_err();
    let reencoded = encode_bundle(&loaded) == bytes;
    outcome(
        identical && reencoded && truncated && rejected == trials,
        format!("round trip identical: {identical}, corrupted copies rejected {rejected}/{trials}"),
    )
}

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "parameter counts", parameter_counts),
        (2, "FRF exactness on LTI plants", frf_exactness),
        (3, "BPTT gradients", gradients),
        (4, "partition of unity", partition_of_unity),
        (5, "rainflow and damage oracles", rainflow_oracles),
        (6, "Multi-Rain lattice vs dense", multirain_lattice),
        (7, "linear study trend", linear_study),
        (8, "hybrid2 advantage on the rig", hybrid_advantage),
        (10, "bundle persistence", persistence),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "criterion {n:>2} {}: {name} | {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
