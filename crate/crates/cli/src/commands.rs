use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use cohwash_core::baselines::{asr_calibrate, asr_clean, asr_ica, fastica_fit, ica_reject_and_clean, AsrIcaConfig, IcaConfig};
use cohwash_core::coherence::{report_from_scores, rows_to_csv, ReportRow, WINDOWS_S};
use cohwash_core::coherence::{CoherenceConfig, CoherenceEngine};
use cohwash_core::kv::KeyValues;
use cohwash_core::net::{self, history_to_csv, ArtifactNet, NetConfig, TrainConfig};
use cohwash_core::signal::{frame_pairs, save_recording, FileFormat, EEG_LABELS, IMU_LABELS};
use cohwash_core::synth::{coupling_recovery_score, generate as synthesize, SynthConfig};
use cohwash_core::{Error, FramePair, PreprocessConfig, Tensor};

use crate::data::{discover, select, Condition, Loaded};
use crate::{load_config, svg, BaselineArgs, CliError, CliResult, DumpArgs, EvalArgs, GenerateArgs, TrainArgs};

pub const TABLE_SCHEMA: &str = "# cohwash-table v1";
pub const TRACE_SCHEMA: &str = "# cohwash-trace v1";
const CELLS_SCHEMA: &str = "# cohwash-cells v1";
const MATRIX_SCHEMA: &str = "# cohwash-matrix v1";
const ICA_SCHEMA: &str = "# cohwash-ica v1";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> CliResult<Vec<PathBuf>> {
    let kv = load_config(Some(&a.config))?;
    let mut cfg = SynthConfig::from_kv(&kv)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let default_name = kv.raw("preset").unwrap_or("synth").to_string();
    let name = kv.raw("name").map(str::to_string).unwrap_or(default_name);
    let format = match kv.raw("format").unwrap_or("csv") {
        "csv" => FileFormat::Csv,
        "binary" => FileFormat::Binary,
        other => return Err(Error::Config(format!("format must be `csv` or `binary`, got `{other}`")).into()),
    };
    kv.finish()?;
    let rec = synthesize(&cfg)?;
    ensure_dir(&a.out)?;
    let files = rec.save(&a.out, &name, format)?;
    Ok(vec![files.eeg, files.imu, files.clean, files.coupling])
}

fn load_all(conditions: &[Condition], pc: &PreprocessConfig) -> CliResult<Vec<Loaded>> {
    Ok(conditions.par_iter().map(|c| c.load(pc)).collect::<cohwash_core::Result<_>>()?)
}

pub fn train(a: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let kv = load_config(a.config.as_deref())?;
    let conditions = select(discover(&a.data)?, &a.condition)?;
    let loaded = load_all(&conditions, &PreprocessConfig::default())?;
    let frames: Vec<FramePair> = loaded.into_iter().flat_map(|l| l.frames).collect();
    let first = &frames[0];
    let mut net_cfg = NetConfig {
        c_eeg: first.eeg.shape()[0],
        c_imu: first.imu.shape()[0],
        frame_len: first.eeg.shape()[1],
        ..NetConfig::default()
    };
    let mut tc = TrainConfig::default();
    net_cfg.apply(&kv)?;
    tc.apply(&kv)?;
    kv.finish()?;
    if let Some(seed) = a.seed {
        net_cfg.seed = seed;
        tc.seed = seed;
    }
    let mut net = ArtifactNet::new(net_cfg)?;
    let report = net::train(&mut net, &frames, &tc)?;

    ensure_dir(&a.out)?;
    let ckpt = a.out.join("model.ckpt");
    net.save(&ckpt)?;
    Ok(vec![
        ckpt,
        write(&a.out.join("model.cfg"), net.config().to_text())?,
        write(&a.out.join("history.csv"), history_to_csv(&report.history))?,
    ])
}

/// Network checkpoint plus the `model.cfg`-style sidecar next to it.
pub(crate) fn load_net(checkpoint: &Path) -> CliResult<ArtifactNet> {
    let sidecar = checkpoint.with_extension("cfg");
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    Ok(ArtifactNet::load(NetConfig::from_text(&text)?, checkpoint)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Raw,
    AsrIca,
    AttentionNet,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Raw, Method::AsrIca, Method::AttentionNet];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::AsrIca => "asr_ica",
            Method::AttentionNet => "attention_net",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected raw, asr_ica or attention_net)")).into())
    }
}

/// What `eval` computes: the cross product of conditions, windows and methods.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub conditions: Vec<String>,
    pub windows_s: Vec<usize>,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub baseline: AsrIcaConfig,
}

fn list(kv: &KeyValues, key: &str) -> Vec<String> {
    kv.raw(key)
        .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        .unwrap_or_default()
}

impl EvalSpec {
    /// Config keys `conditions`, `windows`, `methods`, `asr_cutoff`, `calibration_s`,
    /// `reject_threshold` and `ica_seed`; command-line lists replace the file's.
    fn from_args(a: &EvalArgs, kv: &KeyValues) -> CliResult<Self> {
        let conditions = if a.condition.is_empty() { list(kv, "conditions") } else { a.condition.clone() };
        let windows_s = if a.window.is_empty() {
            match kv.raw("windows") {
                Some(_) => list(kv, "windows")
                    .iter()
                    .map(|w| w.parse().map_err(|_| Error::Config(format!("bad window `{w}`"))))
                    .collect::<Result<_, _>>()?,
                None => WINDOWS_S.to_vec(),
            }
        } else {
            a.window.clone()
        };
        let method_names = if a.method.is_empty() { list(kv, "methods") } else { a.method.clone() };
        let methods = if method_names.is_empty() {
            Method::ALL.to_vec()
        } else {
            method_names.iter().map(|m| Method::parse(m)).collect::<CliResult<_>>()?
        };
        let mut baseline = AsrIcaConfig::default();
        kv.set("asr_cutoff", &mut baseline.cutoff_k)?;
        kv.set("calibration_s", &mut baseline.calibration_s)?;
        kv.set("reject_threshold", &mut baseline.ica.reject_threshold)?;
        kv.set("ica_seed", &mut baseline.ica.seed)?;
        if let Some(seed) = a.seed {
            baseline.ica.seed = seed;
        }
        let spec = EvalSpec {
            conditions,
            windows_s,
            methods,
            output_dir: a.out.clone(),
            baseline,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.windows_s.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("eval needs at least one window and one method".into()).into());
        }
        if let Some(w) = self.windows_s.iter().find(|w| !WINDOWS_S.contains(w)) {
            return Err(Error::Config(format!("window must be one of 10, 30, 60 s, got {w}")).into());
        }
        if !self.methods.contains(&Method::Raw) {
            return Err(Error::Config("methods must include `raw`, the reference column".into()).into());
        }
        Ok(())
    }
}

fn frame_scores(frames: &[FramePair]) -> cohwash_core::Result<Vec<f64>> {
    let len = frames.first().map(|f| f.eeg.shape()[1]).unwrap_or(1);
    let cfg = CoherenceConfig {
        c_eeg: frames.first().map(|f| f.eeg.shape()[0]).unwrap_or(1),
        c_imu: frames.first().map(|f| f.imu.shape()[0]).unwrap_or(1),
        ..CoherenceConfig::default()
    };
    let engine = CoherenceEngine::new(cfg, len)?;
    frames.par_iter().map(|f| engine.score(&f.eeg, &f.imu)).collect()
}

/// Per-second coherence of one method on one condition, or why it could not be computed.
fn method_scores(method: Method, data: &Loaded, net: &Result<ArtifactNet, String>, spec: &EvalSpec) -> Result<Vec<f64>, String> {
    let scored = match method {
        Method::Raw => frame_scores(&data.frames),
        Method::AsrIca => asr_ica(&data.eeg, &data.imu, &spec.baseline)
            .and_then(|out| frame_pairs(&out.cleaned, &data.imu))
            .and_then(|f| frame_scores(&f)),
        Method::AttentionNet => {
            let net = net.as_ref().map_err(String::clone)?;
            net.denoise(&data.frames).and_then(|out| {
                let frames: Vec<FramePair> = out
                    .into_iter()
                    .zip(&data.frames)
                    .map(|((eeg, _), f)| FramePair { eeg, ..f.clone() })
                    .collect();
                frame_scores(&frames)
            })
        }
    };
    scored.map_err(|e| e.to_string())
}

struct ConditionResult {
    name: String,
    scores: Vec<(Method, Result<Vec<f64>, String>)>,
}

pub fn eval(a: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let kv = load_config(a.config.as_deref())?;
    let spec = EvalSpec::from_args(a, &kv)?;
    kv.finish()?;
    let conditions = select(discover(&a.data)?, &spec.conditions)?;
    let net = match &a.checkpoint {
        None => Err("no checkpoint given".to_string()),
        Some(p) if spec.methods.contains(&Method::AttentionNet) => load_net(p).map_err(|e| e.to_string()),
        Some(_) => Err("not requested".to_string()),
    };
    let pc = PreprocessConfig::default();
    let results: Vec<ConditionResult> = conditions
        .par_iter()
        .map(|c| {
            let data = c.load(&pc)?;
            let scores = spec.methods.iter().map(|&m| (m, method_scores(m, &data, &net, &spec))).collect();
            Ok(ConditionResult { name: c.name.clone(), scores })
        })
        .collect::<cohwash_core::Result<_>>()?;

    if results.iter().all(|r| r.scores.iter().all(|(_, s)| s.is_err())) {
        let reasons: Vec<String> = results[0].scores.iter().map(|(m, s)| format!("{}: {}", m.name(), s.as_ref().unwrap_err())).collect();
        return Err(CliError::AllMethodsFailed(reasons.join("; ")));
    }
    ensure_dir(&spec.output_dir)?;
    write_eval_outputs(&spec, &results)
}

fn write_eval_outputs(spec: &EvalSpec, results: &[ConditionResult]) -> CliResult<Vec<PathBuf>> {
    let dir = &spec.output_dir;
    let mut table = format!("{TABLE_SCHEMA}\ncondition,window_s");
    let mut cells = format!("{CELLS_SCHEMA}\ncondition,window_s,method,mean,std\n");
    let mut skipped = String::from("method,condition,window_s,reason\n");
    for m in &spec.methods {
        let _ = write!(table, ",{}", m.name());
    }
    table.push('\n');
    let mut rows = Vec::new();
    let mut written = Vec::new();

    for r in results {
        for &w in &spec.windows_s {
            let _ = write!(table, "{},{w}", r.name);
            for (m, s) in &r.scores {
                let report = s.clone().and_then(|v| report_from_scores(v, w).map_err(|e| e.to_string()));
                match report {
                    Ok(rep) => {
                        let (mean, std) = rep.window_mean_std();
                        let _ = write!(table, ",{mean:.4} ± {std:.4}");
                        let _ = writeln!(cells, "{},{w},{},{mean:.6},{std:.6}", r.name, m.name());
                        rows.extend(rep.windows.iter().map(|ws| ReportRow::from_window(ws, m.name(), &r.name)));
                    }
                    Err(reason) => {
                        table.push_str(",n/a");
                        let _ = writeln!(skipped, "{},{},{w},{}", m.name(), r.name, reason.replace(',', ";"));
                    }
                }
            }
            table.push('\n');
        }

        let ok: Vec<(String, Vec<f64>)> = r
            .scores
            .iter()
            .filter_map(|(m, s)| s.as_ref().ok().map(|v| (m.name().to_string(), v.clone())))
            .collect();
        let len = ok.iter().map(|s| s.1.len()).min().unwrap_or(0);
        let mut trace = format!("{TRACE_SCHEMA}\nt_s");
        for (name, _) in &ok {
            let _ = write!(trace, ",{name}");
        }
        trace.push('\n');
        for t in 0..len {
            let _ = write!(trace, "{t}");
            for (_, v) in &ok {
                let _ = write!(trace, ",{:.6}", v[t]);
            }
            trace.push('\n');
        }
        written.push(write(&dir.join(format!("trace_{}.csv", r.name)), trace)?);
        let title = format!("EEG–IMU coherence over time, {}", r.name);
        written.push(write(&dir.join(format!("trace_{}.svg", r.name)), svg::trace_plot(&title, &ok))?);
    }
    let mut out = vec![
        write(&dir.join("table.csv"), table)?,
        write(&dir.join("cells.csv"), cells)?,
        write(&dir.join("windows.csv"), rows_to_csv(&rows))?,
        write(&dir.join("skipped.csv"), skipped)?,
    ];
    out.extend(written);
    Ok(out)
}

fn matrix_csv(t: &Tensor, rows: &[String], cols: &[String]) -> String {
    let mut s = format!("{MATRIX_SCHEMA}\nrow,{}\n", cols.join(","));
    for (i, label) in rows.iter().enumerate() {
        let vals: Vec<String> = t.row(i).iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{label},{}", vals.join(","));
    }
    s
}

fn labels(prefix: &str, n: usize, known: &[&str]) -> Vec<String> {
    if n == known.len() {
        known.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }
}

pub fn attention_dump(a: &DumpArgs) -> CliResult<Vec<PathBuf>> {
    let net = load_net(&a.checkpoint)?;
    let all = discover(&a.data)?;
    let cond = match &a.condition {
        Some(name) => select(all, std::slice::from_ref(name))?.remove(0),
        None => all.into_iter().next().expect("discover returns at least one"),
    };
    let data = cond.load(&PreprocessConfig::default())?;
    let n = data.frames.len();
    let frame = data.frames.get(a.frame).ok_or_else(|| {
        Error::Validation(format!("frame {} out of range; {} has {n} frames", a.frame, cond.name))
    })?;
    let outputs = net.denoise(&data.frames)?;
    let weights = &outputs[a.frame].1.weights;
    let cfg = CoherenceConfig {
        c_eeg: frame.eeg.shape()[0],
        c_imu: frame.imu.shape()[0],
        ..CoherenceConfig::default()
    };
    let corr = CoherenceEngine::new(cfg, frame.eeg.shape()[1])?.correlation(&frame.eeg, &frame.imu)?;
    let (ce, ci) = (weights.shape()[0], weights.shape()[1]);
    let (rl, cl) = (labels("E", ce, &EEG_LABELS), labels("M", ci, &IMU_LABELS));

    let mut mean = Tensor::zeros(&[ce, ci]);
    for (_, st) in &outputs {
        mean.add_assign(&st.weights);
    }
    let mean = mean.map(|v| v / n as f64);
    let spread = (0..ce)
        .map(|i| {
            let r = weights.row(i);
            r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let mut summary = format!("condition = {}\nframe = {}\nframes = {n}\nmax_row_spread = {spread:.6}\n", cond.name, a.frame);
    let mut panels: Vec<(&str, &Tensor)> = vec![("attention weights", weights), ("correlation", &corr.values)];
    let truth;
    if let Some(c) = &data.coupling {
        let _ = writeln!(summary, "recovery_frame = {:.6}", coupling_recovery_score(weights, &c.0)?);
        let _ = writeln!(summary, "coupling_recovery_score = {:.6}", coupling_recovery_score(&mean, &c.0)?);
        truth = c.0.map(f64::abs);
        panels.push(("|coupling|", &truth));
    }

    ensure_dir(&a.out)?;
    let stem = format!("{}_f{}", cond.name, a.frame);
    Ok(vec![
        write(&a.out.join(format!("attention_{stem}.csv")), matrix_csv(weights, &rl, &cl))?,
        write(&a.out.join(format!("correlation_{stem}.csv")), matrix_csv(&corr.values, &rl, &cl))?,
        write(&a.out.join(format!("attention_{stem}.svg")), svg::heatmaps(&panels, &rl, &cl))?,
        write(&a.out.join(format!("attention_{}_summary.txt", cond.name)), summary)?,
    ])
}

fn output_path(dir: &Path, cond: &Condition, tag: &str) -> (PathBuf, FileFormat) {
    let format = FileFormat::from_path(&cond.eeg);
    let ext = cond.eeg.extension().and_then(|e| e.to_str()).unwrap_or("csv");
    (dir.join(format!("{}_{tag}.{ext}", cond.name)), format)
}

pub fn baseline_asr(a: &BaselineArgs) -> CliResult<Vec<PathBuf>> {
    let kv = load_config(a.config.as_deref())?;
    let cutoff = kv.get_or("cutoff_k", cohwash_core::baselines::ASR_DEFAULT_CUTOFF)?;
    let calibration_s: f64 = kv.get_or("calibration_s", 30.0)?;
    kv.finish()?;
    let conditions = select(discover(&a.data)?, &a.condition)?;
    ensure_dir(&a.out)?;
    let mut out = Vec::new();
    for c in &conditions {
        let data = c.load(&PreprocessConfig::default())?;
        let calib_len = ((calibration_s * data.eeg.sample_rate_hz()).round() as usize).min(data.eeg.samples());
        let state = asr_calibrate(&data.eeg.slice(0, calib_len.max(1))?, cutoff)?;
        let cleaned = asr_clean(&data.eeg, &state)?;
        let (path, format) = output_path(&a.out, c, "asr");
        save_recording(&cleaned, &path, format)?;
        out.push(path);
    }
    Ok(out)
}

pub fn baseline_ica(a: &BaselineArgs) -> CliResult<Vec<PathBuf>> {
    let kv = load_config(a.config.as_deref())?;
    let mut cfg = IcaConfig::default();
    kv.set("max_iter", &mut cfg.max_iter)?;
    kv.set("tol", &mut cfg.tol)?;
    kv.set("reject_threshold", &mut cfg.reject_threshold)?;
    kv.set("seed", &mut cfg.seed)?;
    kv.finish()?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let conditions = select(discover(&a.data)?, &a.condition)?;
    ensure_dir(&a.out)?;
    let mut out = Vec::new();
    for c in &conditions {
        let data = c.load(&PreprocessConfig::default())?;
        let mut model = fastica_fit(&data.eeg, &cfg)?;
        if !model.converged {
            eprintln!("warning: ICA on {} stopped after {} iterations without converging", c.name, model.iterations);
        }
        let cleaned = ica_reject_and_clean(&data.eeg, &data.imu, &mut model)?;
        let (path, format) = output_path(&a.out, c, "ica");
        save_recording(&cleaned, &path, format)?;
        out.push(path);
        let mut report = format!("{ICA_SCHEMA}\ncomponent,imu_coherence,rejected\n");
        for (k, s) in model.scores.iter().enumerate() {
            let _ = writeln!(report, "{k},{s:.6},{}", model.rejected.contains(&k));
        }
        out.push(write(&a.out.join(format!("{}_ica_components.csv", c.name)), report)?);
    }
    Ok(out)
}
