//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per criterion and a
//! closing tally. A `FAIL` line is a measured result, not a harness error, so the
//! target exits zero unless a check itself breaks (panics).
//!
//! Criteria 1-3 and 7 train full models and dominate the runtime.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use icunet::persist::{
    load_checkpoint, load_dataset, load_decomposition, quantize, save_checkpoint, save_decomposition, save_pairs,
    save_segments, Dataset, Role,
};
use icunet_core::baseline::{design_fir_bandpass, filtfilt, filtfilt_channel};
use icunet_core::eval::{mse, snr_db};
use icunet_core::gradcheck::full_suite;
use icunet_core::loss::{loss_acc, loss_amp, loss_freq, loss_vel, LossWeights};
use icunet_core::mixture::{backproject, class_members, synth_mix_b, synth_mix_bnb, IcClass, BRAIN_THRESHOLD};
use icunet_core::network::{infer_segments, init_params, UNetConfig};
use icunet_core::oracle::{dense_masked_product, random_decomposition};
use icunet_core::signalgen::{disturb, substream, synth_sinusoid_dataset, Disturbance, SynthSpec, DISTURB_STREAM};
use icunet_core::training::{moving_average, train, TrainConfig, EVAL_CHUNK};
use icunet_core::{Pair, Segment};
use rand::Rng;

const SEED: u64 = 2024;

/// Network for the ablation: one pooling level, 16 base filters.
const BASE_FILTERS: usize = 16;
const DEPTH: usize = 1;
/// The denoising proxy uses one more level for a wider receptive field.
const PROXY_DEPTH: usize = 2;
const EPOCHS: usize = 60;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn emit(id: u8, name: &str, o: &Outcome) {
    emit_status(id, name, if o.passed { "PASS" } else { "FAIL" }, o);
}

fn emit_status(id: u8, name: &str, status: &str, o: &Outcome) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id} {status} {name}: {}", o.detail);
    let _ = out.flush();
}

fn icunet(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_icunet")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "icunet {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).expect("csv opens");
    let headers = r.headers().expect("header row").clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.expect("csv row").iter().map(String::from)).collect())
        .collect()
}

fn column(rows: &[BTreeMap<String, String>], name: &str) -> Vec<f64> {
    rows.iter().map(|r| r[name].parse().expect("numeric cell")).collect()
}

fn random_segment(seed: u64, c: usize, t: usize) -> Segment {
    let mut rng = substream(seed, 0);
    Segment::new(c, t, 256.0, (0..c * t).map(|_| rng.random_range(-2.0..2.0)).collect()).expect("valid shape")
}

fn threads() -> String {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(5).to_string()
}

struct Ablation {
    test_snr: BTreeMap<String, f64>,
    epoch_star: BTreeMap<String, usize>,
    seconds: f64,
    dir: PathBuf,
}

fn run_ablation(root: &Path) -> Ablation {
    let data = root.join("data");
    icunet(&["synth", "--samples", "2560", "--channels", "8", "--length", "1024", "--seed", &SEED.to_string(), "--out", s(&data)]);
    let out = root.join("ablation");
    let start = Instant::now();
    icunet(&[
        "ablation",
        "--train", s(&data.join("train")),
        "--val", s(&data.join("val")),
        "--test", s(&data.join("test")),
        "--epochs", &EPOCHS.to_string(),
        "--batch", "64",
        "--lr", "0.01",
        "--base-filters", &BASE_FILTERS.to_string(),
        "--depth", &DEPTH.to_string(),
        "--seed", &SEED.to_string(),
        "--threads", &threads(),
        "--quiet",
        "--out", s(&out),
    ]);
    let seconds = start.elapsed().as_secs_f64();
    let rows = read_csv(&out.join("ablation.csv"));
    Ablation {
        test_snr: rows.iter().map(|r| (r["config"].clone(), r["test_snr_mean"].parse().expect("snr"))).collect(),
        epoch_star: rows.iter().map(|r| (r["config"].clone(), r["epoch_star"].parse().expect("epoch"))).collect(),
        seconds,
        dir: out,
    }
}

fn criterion_1(a: &Ablation) -> (Outcome, Outcome) {
    let snr = |k: &str| a.test_snr[k];
    let (ens, amp, vel, acc, freq) = (snr("L_ens"), snr("L_amp"), snr("L_vel"), snr("L_acc"), snr("L_freq"));
    let freq_lowest = [ens, amp, vel, acc].iter().all(|&v| freq < v);
    let checks = [
        ens >= amp - 0.5,
        amp > vel + 3.0,
        amp > acc + 3.0,
        freq_lowest,
        ens >= 15.0,
    ];
    let detail = format!(
        "test SNR dB ens {ens:.2} amp {amp:.2} vel {vel:.2} acc {acc:.2} freq {freq:.2} \
         (ens>=amp-0.5 {}, amp>vel+3 {}, amp>acc+3 {}, freq lowest {}, ens>=15 {})",
        checks[0], checks[1], checks[2], checks[3], checks[4]
    );
    let minutes = a.seconds / 60.0;
    let runtime = outcome(
        minutes < 60.0,
        format!("five 60-epoch runs took {minutes:.1} min on {} thread(s); target < 60 min", threads()),
    );
    (outcome(checks.iter().all(|&c| c), detail), runtime)
}

fn criterion_2(a: &Ablation) -> Outcome {
    let val = column(&read_csv(&a.dir.join("history").join("L_ens.csv")), "val_ens");
    let ma = moving_average(&val, 5);
    let ratio = ma[59] / ma[4];
    // Non-increasing within 2%: never more than 2% above the lowest value seen since epoch 20.
    let mut floor = ma[19];
    let mut worst = 0.0f64;
    for &v in &ma[20..60] {
        worst = worst.max(v / floor - 1.0);
        floor = floor.min(v);
    }
    outcome(
        ratio < 0.4 && worst <= 0.02,
        format!("MA5 epoch 60 / epoch 5 = {ratio:.4} (< 0.4); largest rise over epochs 20-60 = {:.3}% (<= 2%)", 100.0 * worst),
    )
}

fn criterion_3(a: &Ablation) -> Outcome {
    let rows = read_csv(&a.dir.join("history").join("L_amp.csv"));
    let best = a.epoch_star["L_amp"];
    let (vel, acc) = (column(&rows, "val_vel"), column(&rows, "val_acc"));
    let rv = vel[best - 1] / vel[0];
    let ra = acc[best - 1] / acc[0];
    outcome(
        rv < 0.5 && ra < 0.5,
        format!("best epoch {best}: val L_vel ratio {rv:.4}, val L_acc ratio {ra:.4} to epoch 1 (each < 0.5)"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let checks: Vec<_> = [1, 2].into_iter().flat_map(full_suite).collect();
    let seconds = start.elapsed().as_secs_f64();
    let failed: Vec<String> =
        checks.iter().filter(|c| !c.passed()).map(|c| format!("{} ({:e})", c.name, c.max_rel_err)).collect();
    let worst = checks.iter().map(|c| c.max_rel_err / c.tolerance).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && seconds < 300.0,
        format!(
            "{} checks, worst error/tolerance {worst:.3}, {seconds:.1}s (< 300s){}",
            checks.len(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    )
}

fn criterion_5() -> Outcome {
    // Per channel: signal energy 100, residual energy 1.
    let x = Segment::new(2, 4, 256.0, vec![10.0, 0.0, 0.0, 0.0, 0.0, -6.0, 8.0, 0.0]).expect("shape");
    let y = Segment::new(2, 4, 256.0, vec![10.0, 1.0, 0.0, 0.0, 0.0, -6.0, 8.0, -1.0]).expect("shape");
    let snr = snr_db(&y, &x).expect("snr");

    let mut mse_mismatch = 0;
    for k in 0..1000 {
        let (c, t) = (1 + k % 4, 16 + k % 50);
        let a = random_segment(2 * k as u64, c, t);
        let b = random_segment(2 * k as u64 + 1, c, t);
        if mse(&a, &b).expect("mse").to_bits() != loss_amp(&a, &b).expect("loss").value.to_bits() {
            mse_mismatch += 1;
        }
    }

    let mut worst = 0.0f64;
    for k in 0..50 {
        let x = random_segment(5000 + k, 1 + (k as usize) % 4, 64 + k as usize);
        for f in [loss_amp, loss_vel, loss_acc, loss_freq] {
            worst = worst.max(f(&x, &x).expect("loss").value.abs());
        }
    }
    outcome(
        snr == 20.0 && mse_mismatch == 0 && worst <= 1e-12,
        format!("snr_db {snr} (exactly 20); mse/loss_amp bit mismatches {mse_mismatch}/1000; max |L(X,X)| {worst:e} (<= 1e-12)"),
    )
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn criterion_6() -> Outcome {
    let mut rng = substream(SEED, 6);
    let (mut worst_partition, mut worst_artifact) = (0.0f64, 0.0f64);
    let mut artifact_cases = 0;
    for k in 0..100u64 {
        let c = rng.random_range(1..=8usize);
        let t = rng.random_range(4..=512usize);
        let d = random_decomposition(1000 + k, c, t, 256.0);
        let a: Vec<Vec<f64>> = (0..c).map(|i| d.mixing().row(i).to_vec()).collect();
        let src: Vec<Vec<f64>> = d.sources().rows().map(<[f64]>::to_vec).collect();

        let clean = synth_mix_b(&d, BRAIN_THRESHOLD);
        let mut total = clean.data().to_vec();
        for class in IcClass::ARTIFACTS {
            let part = backproject(&d, &class_members(&d, class, BRAIN_THRESHOLD));
            total.iter_mut().zip(part.data()).for_each(|(s, p)| *s += p);
        }
        let full = dense_masked_product(&a, &src, &vec![true; c]).concat();
        worst_partition = worst_partition.max(rel_diff(&total, &full));

        for class in IcClass::ARTIFACTS {
            let members = class_members(&d, class, BRAIN_THRESHOLD);
            let Ok(noisy) = synth_mix_bnb(&d, class, BRAIN_THRESHOLD) else { continue };
            artifact_cases += 1;
            let mut keep = vec![false; c];
            members.iter().for_each(|&i| keep[i] = true);
            let want = dense_masked_product(&a, &src, &keep).concat();
            for ((n, b), w) in noisy.data().iter().zip(clean.data()).zip(&want) {
                worst_artifact = worst_artifact.max(((n - b) - w).abs() / w.abs().max(1.0));
            }
        }
    }
    outcome(
        worst_partition <= 1e-10 && worst_artifact <= 1e-12 && artifact_cases > 0,
        format!(
            "100 decompositions: partition identity rel err {worst_partition:e} (<= 1e-10); \
             mixBnB - mixB vs artifact backprojection err {worst_artifact:e} over {artifact_cases} cases (<= 1e-12)"
        ),
    )
}

fn pair_with(clean: &Segment, kinds: &[Disturbance], stream: u64) -> Pair {
    let mut rng = substream(SEED, DISTURB_STREAM + stream);
    Pair::new(disturb(clean, kinds, 0.0, &mut rng).expect("disturb"), clean.clone()).expect("same shape")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Inputs carry a 0.3 Hz drift, 45-50 Hz bursts, or both, in rotation, at 0 dB.
fn criterion_7() -> Outcome {
    let drift = Disturbance::Drift { freq: 0.3 };
    let bursts = Disturbance::Bursts { low: 45.0, high: 50.0 };
    let kinds: [&[Disturbance]; 3] = [&[drift], &[bursts], &[drift, bursts]];
    let spec = SynthSpec { n_samples: 2560, channels: 8, length: 1024, ..SynthSpec::paper_scale(SEED + 7) };
    let clean = synth_sinusoid_dataset(&spec).expect("synth");
    let mut pairs: Vec<Pair> = clean.iter().enumerate().map(|(k, c)| pair_with(c, kinds[k % 3], k as u64)).collect();
    for p in &mut pairs {
        let mut n = p.noisy.data().to_vec();
        quantize(&mut n);
        p.noisy = p.noisy.with_data(n).expect("shape");
    }
    let (train_pairs, rest) = pairs.split_at(2048);
    let (val_pairs, test_pairs) = rest.split_at(256);

    let config = UNetConfig { base_filters: BASE_FILTERS, depth: PROXY_DEPTH, ..UNetConfig::new(8) };
    let tc = TrainConfig { epochs: EPOCHS, batch_size: 64, weights: LossWeights::ENS, ..TrainConfig::paper(SEED) };
    let init = init_params(&config, SEED).expect("init");
    let (params, _) = train(init, &config, train_pairs, val_pairs, &tc).expect("training");

    let inputs: Vec<&Segment> = test_pairs.iter().map(|p| &p.noisy).collect();
    let outputs = infer_segments(&params, &config, &inputs, EVAL_CHUNK).expect("inference");
    let h = design_fir_bandpass(256.0, 1.0, 50.0, 255).expect("filter");
    let mut noisy_snr = Vec::new();
    let mut model_snr = Vec::new();
    let (mut model_drift, mut filter_drift) = (Vec::new(), Vec::new());
    for (i, (y, p)) in outputs.iter().zip(test_pairs).enumerate() {
        let m = snr_db(y, &p.clean).expect("snr");
        noisy_snr.push(snr_db(&p.noisy, &p.clean).expect("snr"));
        model_snr.push(m);
        if kinds[(2048 + 256 + i) % 3].contains(&drift) {
            model_drift.push(m);
            filter_drift.push(snr_db(&filtfilt(&p.noisy, &h).expect("filtfilt"), &p.clean).expect("snr"));
        }
    }
    let gain = mean(&model_snr) - mean(&noisy_snr);
    let (md, fd) = (mean(&model_drift), mean(&filter_drift));
    outcome(
        gain >= 5.0 && md > fd,
        format!(
            "test SNR gain {gain:.2} dB over noisy input (>= 5); drift subset ({} segments) model {md:.2} dB vs 1-50 Hz filtfilt {fd:.2} dB",
            model_drift.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let fs = 256.0;
    let h = design_fir_bandpass(fs, 1.0, 50.0, 255).expect("filter");
    let n = 4096;
    let tone = |f: f64| (0..n).map(|j| (2.0 * std::f64::consts::PI * f * j as f64 / fs).sin()).collect::<Vec<f64>>();
    let central = |v: &[f64]| v[n / 4..3 * n / 4].to_vec();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let gain_db = |x: &[f64]| {
        let y = filtfilt_channel(&h, x).expect("filtfilt");
        20.0 * (rms(&central(&y)) / rms(&central(x))).log10()
    };
    let pass = gain_db(&tone(25.0));
    let stop60 = gain_db(&tone(60.0));
    let dc = gain_db(&vec![1.0; n]);

    let x = tone(25.0);
    let y = filtfilt_channel(&h, &x).expect("filtfilt");
    let (cx, cy) = (central(&x), central(&y));
    let lag = (-20i64..=20)
        .max_by(|&a, &b| {
            let xc = |l: i64| -> f64 {
                (20..cx.len() - 20).map(|i| cx[i] * cy[(i as i64 + l) as usize]).sum()
            };
            xc(a).total_cmp(&xc(b))
        })
        .expect("lags");
    outcome(
        pass.abs() <= 1.0 && stop60 <= -40.0 && dc <= -40.0 && lag == 0,
        format!("25 Hz gain {pass:.4} dB (within ±1); 60 Hz {stop60:.1} dB, DC {dc:.1} dB (<= -40); cross-correlation peak lag {lag}"),
    )
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).expect("inside dir").to_path_buf(), fs::read(&p).expect("readable"));
            }
        }
    }
    out
}

fn criterion_9(root: &Path) -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let mut same = |label: &str, a: &Path, b: &Path| {
        let (fa, fb) = (files(a), files(b));
        let equal = !fa.is_empty() && fa == fb;
        ok &= equal;
        notes.push(format!("{label} {} files {}", fa.len(), if equal { "identical" } else { "DIFFER" }));
    };

    let seed = SEED.to_string();
    let synth = |out: &Path| {
        icunet(&["synth", "--samples", "80", "--channels", "4", "--length", "256", "--disturb", "white,drift", "--seed", &seed, "--out", s(out)]);
    };
    synth(&root.join("s1"));
    synth(&root.join("s2"));
    same("synth", &root.join("s1"), &root.join("s2"));

    for k in 0..3 {
        save_decomposition(&root.join(format!("d{k}")), &random_decomposition(90 + k, 6, 900, 256.0)).expect("save");
    }
    let mix = |out: &Path| {
        let d: Vec<PathBuf> = (0..3).map(|k| root.join(format!("d{k}"))).collect();
        icunet(&["mix", "--decomp", s(&d[0]), "--decomp", s(&d[1]), "--decomp", s(&d[2]), "--window", "256", "--out", s(out)]);
    };
    mix(&root.join("m1"));
    mix(&root.join("m2"));
    same("mix", &root.join("m1"), &root.join("m2"));

    let train_run = |out: &Path| {
        let data = root.join("s1");
        icunet(&[
            "train", "--train", s(&data.join("train")), "--val", s(&data.join("val")),
            "--epochs", "3", "--batch", "16", "--base-filters", "4", "--depth", "2",
            "--seed", &seed, "--quiet", "--out", s(out),
        ]);
    };
    train_run(&root.join("t1"));
    train_run(&root.join("t2"));
    same("train", &root.join("t1"), &root.join("t2"));

    // Load then save reproduces every file byte for byte.
    let mut resave = |label: &str, src: &Path, dst: &Path, f: &dyn Fn(&Path, &Path)| {
        f(src, dst);
        let (a, b) = (files(src), files(dst));
        let equal = a == b;
        ok &= equal;
        notes.push(format!("{label} resave {}", if equal { "identical" } else { "DIFFERS" }));
    };
    resave("pairs", &root.join("s1").join("train"), &root.join("r_pairs"), &|src, dst| {
        let Dataset::Pairs(p) = load_dataset(src).expect("load") else { panic!("pairs expected") };
        save_pairs(dst, &p).expect("save");
    });
    resave("decomposition", &root.join("d0"), &root.join("r_decomp"), &|src, dst| {
        save_decomposition(dst, &load_decomposition(src).expect("load")).expect("save");
    });
    resave("checkpoint", &root.join("t1").join("best"), &root.join("r_ckpt"), &|src, dst| {
        let (p, c) = load_checkpoint(src).expect("load");
        save_checkpoint(dst, &p, &c).expect("save");
    });

    // Save then load returns f32-representable values unchanged.
    let segs: Vec<Segment> = (0..6)
        .map(|k| {
            let mut v = random_segment(70 + k, 3, 64).into_data();
            quantize(&mut v);
            Segment::new(3, 64, 256.0, v).expect("shape")
        })
        .collect();
    save_segments(&root.join("r_segs"), Role::Noisy, &segs).expect("save");
    let back = load_dataset(&root.join("r_segs")).expect("load");
    let seg_ok = back == Dataset::Segments { role: Role::Noisy, segments: segs };
    ok &= seg_ok;
    notes.push(format!("segments load(save) {}", if seg_ok { "identical" } else { "DIFFERS" }));

    outcome(ok, notes.join("; "))
}

fn main() {
    // `cargo test -- --list` and filters from the harness protocol.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let root = tempfile::tempdir().expect("tempdir");
    let mut tally = (0, 0);
    let mut record = |id: u8, name: &str, o: Outcome| {
        emit(id, name, &o);
        tally.0 += o.passed as usize;
        tally.1 += 1;
    };

    record(4, "gradient suite", criterion_4());
    record(5, "metric exactness", criterion_5());
    record(6, "mixture algebra", criterion_6());
    record(8, "baseline filter", criterion_8());
    record(9, "determinism and persistence", criterion_9(root.path()));

    let ablation = run_ablation(root.path());
    let (ordering, runtime) = criterion_1(&ablation);
    record(1, "desk-scale ablation ordering", ordering);
    // The runtime is a target, not part of the pass bar.
    emit_status(1, "runtime", if runtime.passed { "NOTE met" } else { "NOTE missed" }, &runtime);
    record(2, "L_ens convergence", criterion_2(&ablation));
    record(3, "L_amp coupled-loss tracking", criterion_3(&ablation));
    record(7, "denoising proxy", criterion_7());

    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "acceptance: {} of {} criterion checks pass", tally.0, tally.1);
}
