use std::fmt::Write as _;

use rayon::prelude::*;

use super::{CoherenceConfig, CoherenceEngine};
use crate::error::{Error, Result};
use crate::signal::FramePair;

/// Header comment of every report CSV; bump on column changes.
pub const REPORT_SCHEMA: &str = "# cohwash-report v1";

/// Window lengths, in seconds, that reports are tiled with.
pub const WINDOWS_S: [usize; 3] = [10, 30, 60];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStat {
    pub start_s: f64,
    pub window_s: usize,
    pub mean: f64,
    /// Population standard deviation of the per-frame scores in the window.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceReport {
    pub per_frame: Vec<f64>,
    pub window_s: usize,
    pub windows: Vec<WindowStat>,
    /// Frames (by position) in which at least one channel had a zero-variance spectrum.
    pub degenerate_frames: Vec<usize>,
}

impl CoherenceReport {
    /// Mean and population std over the window means.
    pub fn window_mean_std(&self) -> (f64, f64) {
        mean_std(&self.windows.iter().map(|w| w.mean).collect::<Vec<_>>())
    }

    /// Mean and population std over every frame that falls inside a window.
    pub fn frame_mean_std(&self) -> (f64, f64) {
        let used = self.windows.len() * self.window_s;
        mean_std(&self.per_frame[..used])
    }
}

pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    if x.iter().all(|v| *v == x[0]) {
        // summation rounding would otherwise leave a tiny nonzero spread
        return (x[0], 0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn check_window(window_s: usize) -> Result<()> {
    if !WINDOWS_S.contains(&window_s) {
        return Err(Error::Config(format!("window must be one of 10, 30, 60 s, got {window_s}")));
    }
    Ok(())
}

/// Tiles precomputed 1-s scores with non-overlapping windows; a trailing partial window is
/// dropped.
pub fn report_from_scores(per_frame: Vec<f64>, window_s: usize) -> Result<CoherenceReport> {
    check_window(window_s)?;
    if per_frame.len() < window_s {
        return Err(Error::Empty(format!(
            "a {window_s}-s window needs at least {window_s} frames, got {}",
            per_frame.len()
        )));
    }
    let windows = per_frame
        .chunks_exact(window_s)
        .enumerate()
        .map(|(k, chunk)| {
            let (mean, std) = mean_std(chunk);
            WindowStat {
                start_s: (k * window_s) as f64,
                window_s,
                mean,
                std,
            }
        })
        .collect();
    Ok(CoherenceReport {
        per_frame,
        window_s,
        windows,
        degenerate_frames: Vec::new(),
    })
}

/// Scores every frame pair in parallel and tiles the result.
pub fn windowed_report(frames: &[FramePair], window_s: usize, cfg: &CoherenceConfig) -> Result<CoherenceReport> {
    check_window(window_s)?;
    if frames.len() < window_s {
        return Err(Error::Empty(format!(
            "a {window_s}-s window needs at least {window_s} frames, got {}",
            frames.len()
        )));
    }
    let engine = CoherenceEngine::new(cfg.clone(), frames[0].eeg.shape()[1])?;
    let scored: Vec<(f64, bool)> = frames
        .par_iter()
        .map(|f| {
            let m = engine.correlation(&f.eeg, &f.imu)?;
            Ok((super::coherence_score(&m), !m.degenerate.is_empty()))
        })
        .collect::<Result<_>>()?;
    let mut report = report_from_scores(scored.iter().map(|s| s.0).collect(), window_s)?;
    report.degenerate_frames = scored.iter().enumerate().filter(|(_, s)| s.1).map(|(i, _)| i).collect();
    Ok(report)
}

/// One CSV line of a method comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub window_start_s: f64,
    pub window_s: usize,
    pub mean: f64,
    pub std: f64,
    pub method: String,
    pub condition: String,
}

impl ReportRow {
    pub fn from_window(w: &WindowStat, method: &str, condition: &str) -> Self {
        ReportRow {
            window_start_s: w.start_s,
            window_s: w.window_s,
            mean: w.mean,
            std: w.std,
            method: method.to_string(),
            condition: condition.to_string(),
        }
    }

    pub fn csv_header() -> &'static str {
        "window_start_s,window_s,mean,std,method,condition"
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{},{}",
            self.window_start_s, self.window_s, self.mean, self.std, self.method, self.condition
        )
    }
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_SCHEMA}");
    let _ = writeln!(out, "{}", ReportRow::csv_header());
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv_line());
    }
    out
}

/// Parses CSV produced by [`rows_to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == REPORT_SCHEMA => {}
        _ => return Err(Error::format("line 1", format!("expected `{REPORT_SCHEMA}`"))),
    }
    match lines.next() {
        Some((_, l)) if l == ReportRow::csv_header() => {}
        _ => return Err(Error::format("line 2", "missing column header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let pos = format!("line {}", i + 1);
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(Error::format(pos, format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::format(pos.clone(), format!("bad number `{s}`")));
            Ok(ReportRow {
                window_start_s: num(f[0])?,
                window_s: f[1].parse().map_err(|_| Error::format(pos.clone(), "bad window"))?,
                mean: num(f[2])?,
                std: num(f[3])?,
                method: f[4].to_string(),
                condition: f[5].to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_frames_two_windows() {
        let r = report_from_scores((0..60).map(|i| i as f64 / 100.0).collect(), 30).unwrap();
        assert_eq!(r.windows.len(), 2);
        assert_eq!(r.windows[1].start_s, 30.0);
        let naive: f64 = (30..60).map(|i| i as f64 / 100.0).sum::<f64>() / 30.0;
        assert!((r.windows[1].mean - naive).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_have_zero_std() {
        let r = report_from_scores(vec![0.3; 25], 10).unwrap();
        assert_eq!(r.windows.len(), 2);
        assert!(r.windows.iter().all(|w| w.std == 0.0));
    }

    #[test]
    fn too_few_frames_names_count() {
        let err = report_from_scores(vec![0.0; 9], 10).unwrap_err().to_string();
        assert!(err.contains("at least 10"), "{err}");
        assert!(report_from_scores(vec![0.0; 30], 20).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![ReportRow {
            window_start_s: 10.0,
            window_s: 10,
            mean: 0.25,
            std: 0.125,
            method: "raw".into(),
            condition: "ses-03".into(),
        }];
        let text = rows_to_csv(&rows);
        assert!(text.starts_with(REPORT_SCHEMA));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }
}
