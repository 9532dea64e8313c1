//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 3 to 5 share one network trained with the default schedule on a 120-s synthetic
//! recording and are scored on held-out recordings of the three walking presets. Criteria 7
//! and 8 drive the command line on a small configuration.
//!
//! Set `ACCEPTANCE_ONLY` to a comma-separated list of criterion numbers to run a subset.
//!
//! The process exits 0 even when a criterion fails; failures are reported, not hidden, and the
//! summary line counts them.

use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use cohwash_core::baselines::{asr_calibrate, asr_clean, asr_ica, fastica_fit, AsrIcaConfig, IcaConfig};
use cohwash_core::coherence::{naive, pearson, CoherenceConfig, CoherenceEngine};
use cohwash_core::net::{train, ArtifactNet, NetConfig, TrainConfig};
use cohwash_core::signal::{frame_pairs, preprocess_eeg, preprocess_imu};
use cohwash_core::synth::{coupling_recovery_score, generate, SynthConfig, PRESETS};
use cohwash_core::tensor::check::{op_suite, check_params, CheckOptions};
use cohwash_core::tensor::{Graph, ParamStore};
use cohwash_core::{FramePair, Modality, PreprocessConfig, Recording, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rand_frame(rng: &mut ChaCha8Rng, index: usize) -> FramePair {
    let mut t = |c: usize| Tensor::new(&[c, 200], (0..c * 200).map(|_| StandardNormal.sample(&mut *rng)).collect()).unwrap();
    FramePair {
        eeg: t(32),
        imu: t(9),
        index,
        t0_s: index as f64,
    }
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let f = rand_frame(&mut rng, i);
        let rows = |t: &Tensor| (0..t.shape()[0]).map(|c| t.row(c).to_vec()).collect::<Vec<_>>();
        let want = naive::coherence(&rows(&f.eeg), &rows(&f.imu), 40);
        worst = worst.max((engine.score(&f.eeg, &f.imu).unwrap() - want).abs());
    }
    let x: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
    let eeg = Tensor::new(&[32, 200], x.repeat(32)).unwrap();
    let imu = Tensor::new(&[9, 200], x.iter().map(|v| 4.0 * v).collect::<Vec<_>>().repeat(9)).unwrap();
    let identical = engine.score(&eeg, &imu).unwrap();
    let noise: f64 = (0..10_000)
        .map(|i| {
            let f = rand_frame(&mut rng, i);
            engine.score(&f.eeg, &f.imu).unwrap().abs()
        })
        .sum::<f64>()
        / 10_000.0;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && (identical - 1.0).abs() < 1e-9 && noise < 0.05 && secs < 60.0,
        format!("max |prod - naive| {worst:.1e} over 1000 frames; identical pair {identical:.12}; mean |noise coherence| {noise:.4}; {secs:.1} s"),
    )
}

fn criterion_2() -> Outcome {
    let t0 = Instant::now();
    let ops = op_suite(7).unwrap();
    let (worst_op, op_err) = ops.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });

    let cfg = NetConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames: Vec<FramePair> = (0..3)
        .map(|i| FramePair {
            eeg: Tensor::new(&[4, 40], (0..160).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
            imu: Tensor::new(&[2, 40], (0..80).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap(),
            index: i,
            t0_s: i as f64,
        })
        .collect();
    let set = cohwash_core::net::TrainingSet::new(&frames, &cfg).unwrap();
    let obj = cohwash_core::net::Objective::new(&cfg);
    let mut store = ArtifactNet::new(cfg.clone()).unwrap().store;
    // move the near-zero decoder projection off zero so every path carries gradient
    for p in store.iter_mut().filter(|p| p.name == "dec.d4.w") {
        for v in p.value.data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    // Each loss term on its own: their gradients sum to the total's, and the attention term
    // (the largest) would otherwise bury the small coherence gradients of the gate in rounding.
    let opts = CheckOptions { step: 1e-6, max_per_tensor: 12 };
    let mut tensors = 0;
    let (mut worst_param, mut net_err) = (String::new(), 0.0);
    for term in ["coh", "att", "rec"] {
        let report = check_params(&mut store, "", opts, |g: &mut Graph, s: &ParamStore| {
            let net = ArtifactNet::with_store(cfg.clone(), s)?;
            let t = obj.losses(&net, g, &set, None, &mut cohwash_core::net::Pass::train(3))?;
            Ok(match term {
                "coh" => t.coh,
                "att" => t.att,
                _ => t.rec,
            })
        })
        .unwrap();
        tensors = tensors.max(report.per_tensor.len());
        if let Some((name, err)) = report.worst().filter(|w| w.1 >= net_err) {
            (worst_param, net_err) = (format!("{name} ({term})"), *err);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        op_err < 1e-4 && net_err < 1e-3 && secs < 300.0,
        format!(
            "{} ops, worst {worst_op} {op_err:.1e}; tiny network {} tensors, worst {worst_param} {net_err:.1e}; {secs:.1} s",
            ops.len(),
            tensors
        ),
    )
}

struct Trained {
    net: ArtifactNet,
    recovery: f64,
    secs: f64,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let t0 = Instant::now();
        let rec = generate(&SynthConfig::default()).unwrap();
        let frames = rec.frames(&PreprocessConfig::default()).unwrap().pairs;
        let mut net = ArtifactNet::new(NetConfig::default()).unwrap();
        train(&mut net, &frames, &TrainConfig::default()).unwrap();
        let states = net.denoise(&frames).unwrap();
        let mut mean = Tensor::zeros(&[32, 9]);
        for (_, s) in &states {
            mean.add_assign(&s.weights);
        }
        let mean = mean.map(|v| v / states.len() as f64);
        let recovery = coupling_recovery_score(&mean, &rec.coupling.0).unwrap();
        Trained {
            net,
            recovery,
            secs: t0.elapsed().as_secs_f64(),
        }
    })
}

fn criterion_3() -> Outcome {
    let t = trained();
    outcome(
        t.recovery >= 0.8 && t.secs <= 600.0,
        format!("coupling recovery {:.3} after training on 120 s; {:.0} s", t.recovery, t.secs),
    )
}

/// Per-frame coherence on one held-out preset for raw, ASR+ICA and the network, plus the
/// network output and clean reference frames.
struct HeldOut {
    raw: Vec<f64>,
    asr_ica: Vec<f64>,
    net: Vec<f64>,
    out: Vec<Tensor>,
    clean: Vec<Tensor>,
}

fn held_out() -> &'static Vec<HeldOut> {
    static CELL: OnceLock<Vec<HeldOut>> = OnceLock::new();
    CELL.get_or_init(|| {
        let net = &trained().net;
        let pc = PreprocessConfig::default();
        let engine = CoherenceEngine::new(CoherenceConfig::default(), 200).unwrap();
        let score = |f: &[FramePair]| f.iter().map(|p| engine.score(&p.eeg, &p.imu).unwrap()).collect::<Vec<_>>();
        PRESETS
            .iter()
            .map(|(name, _)| {
                let rec = generate(&SynthConfig { duration_s: 90.0, seed: 2, ..SynthConfig::preset(name).unwrap() }).unwrap();
                let fr = rec.frames(&pc).unwrap();
                let eeg = preprocess_eeg(&rec.corrupted_eeg, &pc).unwrap();
                let imu = preprocess_imu(&rec.imu, &pc).unwrap();
                let cleaned = asr_ica(&eeg, &imu, &AsrIcaConfig::default()).unwrap().cleaned;
                let out: Vec<Tensor> = net.denoise(&fr.pairs).unwrap().into_iter().map(|(o, _)| o).collect();
                let denoised: Vec<FramePair> =
                    out.iter().zip(&fr.pairs).map(|(o, p)| FramePair { eeg: o.clone(), ..p.clone() }).collect();
                HeldOut {
                    raw: score(&fr.pairs),
                    asr_ica: score(&frame_pairs(&cleaned, &imu).unwrap()),
                    net: score(&denoised),
                    out,
                    clean: fr.clean,
                }
            })
            .collect()
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_4() -> Outcome {
    let sets = held_out();
    let (mut windows, mut ordered) = (0, 0);
    for s in sets {
        for k in 0..s.raw.len() / 10 {
            let w = |v: &[f64]| mean(&v[k * 10..k * 10 + 10]);
            windows += 1;
            if w(&s.raw) > w(&s.asr_ica) && w(&s.asr_ica) > w(&s.net) {
                ordered += 1;
            }
        }
    }
    let all = |f: fn(&HeldOut) -> &Vec<f64>| mean(&sets.iter().flat_map(|s| f(s).iter().copied()).collect::<Vec<_>>());
    let (raw, base, net) = (all(|s| &s.raw), all(|s| &s.asr_ica), all(|s| &s.net));
    let frac = ordered as f64 / windows as f64;
    outcome(
        raw > base && base > net && raw >= 0.4 && net <= 0.6 * raw && frac >= 0.9,
        format!(
            "mean coherence raw {raw:.3}, asr_ica {base:.3}, attention_net {net:.3} (net/raw {:.2}); ordering holds in {ordered}/{windows} 10-s windows",
            net / raw
        ),
    )
}

fn criterion_5() -> Outcome {
    let sets = held_out();
    let (mut d_corr, mut n, mut out_ss, mut clean_ss) = (0.0, 0.0, 0.0, 0.0);
    let (mut raw_corr, mut net_corr) = (0.0, 0.0);
    let pc = PreprocessConfig::default();
    for (s, (name, _)) in sets.iter().zip(PRESETS.iter()) {
        // the raw input frames are regenerated here rather than kept alive in the cache
        let rec = generate(&SynthConfig { duration_s: 90.0, seed: 2, ..SynthConfig::preset(name).unwrap() }).unwrap();
        let raw = rec.frames(&pc).unwrap().pairs;
        for c in 0..32 {
            let cat = |frames: &mut dyn Iterator<Item = &Tensor>| frames.flat_map(|t| t.row(c).to_vec()).collect::<Vec<f64>>();
            let clean = cat(&mut s.clean.iter());
            let out = cat(&mut s.out.iter());
            let input = cat(&mut raw.iter().map(|p| &p.eeg));
            let (a, b) = (pearson(&out, &clean, 0.0), pearson(&input, &clean, 0.0));
            net_corr += a;
            raw_corr += b;
            d_corr += a - b;
            n += 1.0;
            out_ss += out.iter().map(|v| v * v).sum::<f64>();
            clean_ss += clean.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let gain = d_corr / n;
    let ratio = (out_ss / clean_ss).sqrt();
    outcome(
        gain >= 0.1 && (0.5..=1.5).contains(&ratio),
        format!(
            "mean per-channel Pearson with clean EEG: raw {:.3}, attention_net {:.3} (gain {gain:+.3}); output/clean RMS {ratio:.2}",
            raw_corr / n,
            net_corr / n
        ),
    )
}

fn criterion_6() -> Outcome {
    // FastICA on 8 Laplacian sources
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let n = 60 * 200;
    let laplace = |rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random_range(-0.5..0.5);
        -u.signum() * (1.0 - 2.0 * u.abs()).ln()
    };
    let sources: Vec<Vec<f64>> = (0..8).map(|_| (0..n).map(|_| laplace(&mut rng)).collect()).collect();
    let mix: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rows = (0..8)
        .map(|i| (0..n).map(|t| (0..8).map(|j| mix[i][j] * sources[j][t]).sum()).collect())
        .collect();
    let rec = Recording::new(Modality::Eeg, 200.0, rows).unwrap();
    let model = fastica_fit(&rec, &IcaConfig::default()).unwrap();
    let est = model.sources(&rec).unwrap();
    let ica_corr = sources
        .iter()
        .map(|s| {
            (0..8)
                .map(|k| pearson(s, &est.row(k).iter().copied().collect::<Vec<_>>(), 0.0).abs())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 8.0;

    // ASR: 100x burst on one channel of fresh noise
    let noise = |rng: &mut ChaCha8Rng, secs: usize| -> Vec<Vec<f64>> {
        (0..16).map(|_| (0..secs * 200).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect()
    };
    let state = asr_calibrate(&Recording::new(Modality::Eeg, 200.0, noise(&mut rng, 60)).unwrap(), 20.0).unwrap();
    let mut rows = noise(&mut rng, 20);
    let burst = 2000..2200;
    for t in burst.clone() {
        rows[5][t] *= 100.0;
    }
    let dirty = Recording::new(Modality::Eeg, 200.0, rows).unwrap();
    let out = asr_clean(&dirty, &state).unwrap();
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
    let reduction = 1.0 - energy(&out.channel(5)[burst.clone()]) / energy(&dirty.channel(5)[burst]);
    // clean stretch well away from the burst, all channels
    let clean_change = (0..16)
        .map(|c| {
            let (a, b) = (&out.channel(c)[..1500], &dirty.channel(c)[..1500]);
            let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            (energy(&diff) / energy(b)).sqrt()
        })
        .fold(0.0, f64::max);
    outcome(
        ica_corr >= 0.95 && reduction >= 0.9 && clean_change < 0.05,
        format!(
            "FastICA mean |corr| {ica_corr:.4} ({} iterations); ASR burst variance reduced {:.1}%; max clean-segment RMS change {:.2}%",
            model.iterations,
            100.0 * reduction,
            100.0 * clean_change
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let mut full = vec!["cohwash"];
    full.extend_from_slice(args);
    cohwash_cli::run_args(full).map(|_| ()).map_err(|e| e.to_string())
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

const SMALL_TRAIN: &str = "d_model = 16\ngate_hidden = 16\ndecoder_hidden = 32\nencoder_blocks = 1\n\
warmup_epochs = 1\nstage1_max_epochs = 2\nstage2_max_epochs = 2\n";

/// Generates the three presets, then trains and evaluates twice into separate directories.
fn cli_runs() -> &'static Result<(tempfile::TempDir, Vec<String>), String> {
    static CELL: OnceLock<Result<(tempfile::TempDir, Vec<String>), String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let p = |s: &str| root.path().join(s).to_string_lossy().into_owned();
        let data = p("data");
        for (name, _) in PRESETS {
            let cfg = p(&format!("{name}.cfg"));
            std::fs::write(&cfg, format!("preset = {name}\nseed = 5\nduration_s = 60\n")).map_err(|e| e.to_string())?;
            run_cli(&["generate", "--config", &cfg, "--out", &data])?;
        }
        let train_cfg = p("train.cfg");
        std::fs::write(&train_cfg, SMALL_TRAIN).map_err(|e| e.to_string())?;
        let mut runs = Vec::new();
        for run in ["a", "b"] {
            let dir = p(run);
            run_cli(&["train", "--data", &data, "--config", &train_cfg, "--seed", "3", "--out", &dir])?;
            let ckpt = format!("{dir}/model.ckpt");
            run_cli(&["eval", "--data", &data, "--checkpoint", &ckpt, "--seed", "3", "--out", &format!("{dir}/eval")])?;
            runs.push(dir);
        }
        Ok((root, runs))
    })
}

fn criterion_7() -> Outcome {
    match cli_runs() {
        Err(e) => outcome(false, format!("command line run failed: {e}")),
        Ok((_, runs)) => {
            let (a, b) = (Path::new(&runs[0]), Path::new(&runs[1]));
            let (ta, tb) = (read_all(a), read_all(b));
            let (ea, eb) = (read_all(&a.join("eval")), read_all(&b.join("eval")));
            let same = ta == tb && ea == eb;
            let names: Vec<&str> = ta.iter().chain(&ea).map(|(n, _)| n.as_str()).collect();
            outcome(same, format!("{} files compared byte for byte: {}", names.len(), names.join(", ")))
        }
    }
}

fn criterion_8() -> Outcome {
    let Ok((_, runs)) = cli_runs() else {
        return outcome(false, "command line run failed (see criterion 7)".into());
    };
    let text = std::fs::read_to_string(Path::new(&runs[0]).join("eval/table.csv")).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    let header_ok = lines.first() == Some(&cohwash_cli::TABLE_SCHEMA) && lines.get(1) == Some(&"condition,window_s,raw,asr_ica,attention_net");
    let body = &lines[2.min(lines.len())..];
    let mut cells_ok = body.len() == 9;
    let mut seen = Vec::new();
    for l in body {
        let f: Vec<&str> = l.split(',').collect();
        cells_ok &= f.len() == 5 && f[2..].iter().all(|c| c.split_once(" ± ").is_some_and(|(m, s)| m.parse::<f64>().is_ok() && s.parse::<f64>().is_ok()));
        seen.push(format!("{}/{}", f[0], f.get(1).unwrap_or(&"")));
    }
    let expected: Vec<String> = ["ses-03", "ses-04", "ses-05"]
        .iter()
        .flat_map(|c| ["10", "30", "60"].map(|w| format!("{c}/{w}")))
        .collect();
    outcome(
        header_ok && cells_ok && seen == expected,
        format!("{} rows x {} method columns; first row `{}`", body.len(), 3, body.first().unwrap_or(&"")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracle equivalence", criterion_1),
        ("gradient suite", criterion_2),
        ("attention supervision recovery", criterion_3),
        ("denoising efficacy", criterion_4),
        ("signal preservation", criterion_5),
        ("baseline sanity", criterion_6),
        ("determinism", criterion_7),
        ("report structure", criterion_8),
    ];
    // ACCEPTANCE_ONLY=2,7 runs a subset
    let only: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut passed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let o = f();
        passed += o.pass as usize;
        println!("{} criterion {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {passed}/{ran} criteria passed");
}
