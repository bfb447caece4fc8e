//! Durable artifacts for evaluation runs: a machine-readable JSON report,
//! flat CSV tables, and a deterministic SVG plot for transform-strength
//! sweeps.
//!
//! The report stores per-pair rows plus aggregates, and the aggregates are
//! always recomputable from the rows — [`EvaluationReport::assemble`] derives
//! them and [`EvaluationReport::verify_consistency`] recomputes and compares
//! them bit-for-bit, so a tampered or hand-edited report is detectable.
//! Nothing in the artifacts depends on wall-clock time or iteration order of
//! hash maps; rerunning with the same seed reproduces every output byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackConfig;
use crate::eval::{asr, EvalRun, SweepRow, RECOMMENDED_BETA_BAND};
use crate::scoring::{summarize_outcomes, McsSummary, ScoringError, VerifyOutcome};

#[derive(Error, Debug)]
pub enum ReportError {
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("victim {0} has no calibrated threshold")]
    MissingThreshold(String),
    #[error("expected {expected} confidence outcomes, got {got}")]
    ConfidenceCount { expected: usize, got: usize },
    #[error("row index {0} out of range")]
    RowIndex(usize),
    #[error("report is not self-consistent: {0}")]
    Inconsistent(String),
    #[error("report has no rows")]
    Empty,
}

/// Everything needed to reproduce the run that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub attack: AttackConfig,
    pub dataset: String,
    pub pairs: usize,
    pub seed: u64,
    pub surrogates: Vec<String>,
    pub victims: Vec<String>,
    pub canvas: usize,
}

/// One evaluated identity pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub index: usize,
    pub source_identity: String,
    pub source_name: String,
    pub target_identity: String,
    pub target_name: String,
    /// Victim model name → cosine between the adversarial image and the
    /// target.
    pub cosines: BTreeMap<String, f64>,
    /// Victim model name → whether the cosine exceeded that victim's
    /// threshold.
    pub success: BTreeMap<String, bool>,
    /// Backend id → verification outcome, when backends were queried.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub confidences: BTreeMap<String, VerifyOutcome>,
    pub final_loss: Option<f64>,
    pub queries: usize,
    pub seed: u64,
}

/// Full evaluation report: config echo, rows, and aggregates derived from
/// the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ReportConfig,
    /// Victim model name → decision threshold used for the success flags.
    pub thresholds: BTreeMap<String, f64>,
    pub per_pair: Vec<PairRow>,
    /// Victim model name → attack success rate in percent.
    pub asr: BTreeMap<String, f64>,
    /// Backend id → mean-confidence summary.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mcs: BTreeMap<String, McsSummary>,
}

impl EvaluationReport {
    /// Builds a report from an evaluation run, deriving success flags and
    /// per-victim success rates from `thresholds`.
    pub fn assemble(
        config: ReportConfig,
        run: &EvalRun,
        thresholds: &BTreeMap<String, f64>,
    ) -> Result<Self, ReportError> {
        if run.pairs.is_empty() {
            return Err(ReportError::Empty);
        }
        for name in &run.victim_names {
            if !thresholds.contains_key(name) {
                return Err(ReportError::MissingThreshold(name.clone()));
            }
        }
        let per_pair = run
            .pairs
            .iter()
            .enumerate()
            .map(|(index, pair)| {
                let cosines: BTreeMap<String, f64> = run
                    .victim_names
                    .iter()
                    .cloned()
                    .zip(pair.cosines.iter().copied())
                    .collect();
                let success = cosines
                    .iter()
                    .map(|(name, &cos)| (name.clone(), cos > thresholds[name]))
                    .collect();
                PairRow {
                    index,
                    source_identity: pair.source_identity.clone(),
                    source_name: pair.source_name.clone(),
                    target_identity: pair.target_identity.clone(),
                    target_name: pair.target_name.clone(),
                    cosines,
                    success,
                    confidences: BTreeMap::new(),
                    final_loss: pair.final_loss,
                    queries: pair.queries,
                    seed: pair.seed,
                }
            })
            .collect::<Vec<_>>();
        let mut report = Self {
            config,
            thresholds: thresholds.clone(),
            per_pair,
            asr: BTreeMap::new(),
            mcs: BTreeMap::new(),
        };
        report.asr = report.recompute_asr()?;
        Ok(report)
    }

    /// Records one backend's outcomes (one per pair, in row order) and
    /// refreshes that backend's aggregate.
    pub fn attach_confidences(
        &mut self,
        backend: &str,
        outcomes: &[VerifyOutcome],
    ) -> Result<(), ReportError> {
        if outcomes.len() != self.per_pair.len() {
            return Err(ReportError::ConfidenceCount {
                expected: self.per_pair.len(),
                got: outcomes.len(),
            });
        }
        for (row, outcome) in self.per_pair.iter_mut().zip(outcomes) {
            row.confidences.insert(backend.to_string(), *outcome);
        }
        self.mcs
            .insert(backend.to_string(), summarize_outcomes(outcomes)?);
        Ok(())
    }

    /// Records a backend's outcomes for a subset of rows (the probes that
    /// did complete) and refreshes the aggregate from whatever the rows now
    /// carry. A backend whose surviving probes were all face-not-detected
    /// keeps its row entries but gets no mean-confidence aggregate.
    pub fn attach_partial_confidences(
        &mut self,
        backend: &str,
        outcomes: &[(usize, VerifyOutcome)],
    ) -> Result<(), ReportError> {
        for (index, outcome) in outcomes {
            let row = self
                .per_pair
                .get_mut(*index)
                .ok_or(ReportError::RowIndex(*index))?;
            row.confidences.insert(backend.to_string(), *outcome);
        }
        let collected: Vec<VerifyOutcome> = self
            .per_pair
            .iter()
            .filter_map(|row| row.confidences.get(backend).copied())
            .collect();
        match summarize_outcomes(&collected) {
            Ok(summary) => {
                self.mcs.insert(backend.to_string(), summary);
                Ok(())
            }
            Err(ScoringError::NoScoredOutcomes) => {
                self.mcs.remove(backend);
                Ok(())
            }
            Err(other) => Err(other.into()),
        }
    }

    fn recompute_asr(&self) -> Result<BTreeMap<String, f64>, ReportError> {
        let mut out = BTreeMap::new();
        for (name, &tau) in &self.thresholds {
            let scores: Vec<f64> = self
                .per_pair
                .iter()
                .filter_map(|row| row.cosines.get(name).copied())
                .collect();
            if scores.is_empty() {
                continue; // threshold listed for reference only
            }
            let rate = asr(&scores, tau)
                .map_err(|e| ReportError::Inconsistent(format!("asr({name}): {e}")))?;
            out.insert(name.clone(), rate);
        }
        Ok(out)
    }

    /// Recomputes every aggregate and success flag from the rows and
    /// compares bit-for-bit with the stored values.
    pub fn verify_consistency(&self) -> Result<(), ReportError> {
        let asr = self.recompute_asr()?;
        if asr != self.asr {
            return Err(ReportError::Inconsistent(format!(
                "stored asr {:?} != recomputed {asr:?}",
                self.asr
            )));
        }
        for row in &self.per_pair {
            for (name, &cos) in &row.cosines {
                let tau = self
                    .thresholds
                    .get(name)
                    .ok_or_else(|| ReportError::MissingThreshold(name.clone()))?;
                let expect = cos > *tau;
                if row.success.get(name) != Some(&expect) {
                    return Err(ReportError::Inconsistent(format!(
                        "pair {} success flag for {name} disagrees with its cosine",
                        row.index
                    )));
                }
            }
        }
        for (backend, stored) in &self.mcs {
            let outcomes: Vec<VerifyOutcome> = self
                .per_pair
                .iter()
                .filter_map(|row| row.confidences.get(backend).copied())
                .collect();
            let recomputed = summarize_outcomes(&outcomes)?;
            if recomputed != *stored {
                return Err(ReportError::Inconsistent(format!(
                    "stored mcs for {backend} {stored:?} != recomputed {recomputed:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<(), ReportError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| ReportError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read_json(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes the per-pair table. Victim and backend columns are sorted by
    /// name so the layout is stable across runs.
    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        let victims: Vec<&String> = self.thresholds.keys().collect();
        let backends: Vec<&String> = self.mcs.keys().collect();
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec![
            "index".to_string(),
            "source_identity".into(),
            "source_name".into(),
            "target_identity".into(),
            "target_name".into(),
        ];
        for v in &victims {
            header.push(format!("cos:{v}"));
            header.push(format!("hit:{v}"));
        }
        for b in &backends {
            header.push(format!("conf:{b}"));
        }
        header.extend(["final_loss".into(), "queries".into(), "seed".into()]);
        writer.write_record(&header)?;
        for row in &self.per_pair {
            let mut record = vec![
                row.index.to_string(),
                row.source_identity.clone(),
                row.source_name.clone(),
                row.target_identity.clone(),
                row.target_name.clone(),
            ];
            for v in &victims {
                match row.cosines.get(*v) {
                    Some(cos) => {
                        record.push(cos.to_string());
                        record.push(row.success[*v].to_string());
                    }
                    None => {
                        record.push(String::new());
                        record.push(String::new());
                    }
                }
            }
            for b in &backends {
                record.push(match row.confidences.get(*b) {
                    Some(VerifyOutcome::Scored(s)) => s.confidence.to_string(),
                    Some(VerifyOutcome::FaceNotDetected) => "not-detected".into(),
                    None => String::new(),
                });
            }
            record.push(row.final_loss.map(|l| l.to_string()).unwrap_or_default());
            record.push(row.queries.to_string());
            record.push(row.seed.to_string());
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|source| ReportError::Write {
            path: path.display().to_string(),
            source,
        })?;
        Ok(())
    }
}

/// Writes a sweep table: one row per transform strength, with per-victim
/// ASR columns after the pooled aggregates.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<(), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["beta".to_string(), "asr".into(), "mean_cosine".into()];
    for (name, _) in &rows[0].victim_asr {
        header.push(format!("asr:{name}"));
    }
    writer.write_record(&header)?;
    for row in rows {
        let mut record = vec![
            row.beta.to_string(),
            row.asr.to_string(),
            row.mean_cosine.to_string(),
        ];
        for (_, rate) in &row.victim_asr {
            record.push(rate.to_string());
        }
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 60.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;

/// Renders the sweep as a self-contained SVG line chart. The chart carries
/// the ASR series against the left axis (0–100%) and the mean-cosine series
/// against the right axis (−1..1), with the recommended transform-strength
/// band shaded. Every marker embeds its data values as attributes, so the
/// artifact is machine-checkable without an SVG parser.
pub fn write_sweep_svg(rows: &[SweepRow], path: &Path) -> Result<(), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let (mut beta_min, mut beta_max) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.beta), hi.max(r.beta))
        });
    if beta_max - beta_min < 1e-12 {
        // degenerate single-point sweep: pad so the x scale stays finite
        beta_min -= 0.05;
        beta_max += 0.05;
    }
    let sx = |beta: f64| MARGIN_L + (beta - beta_min) / (beta_max - beta_min) * plot_w;
    let sy_asr = |v: f64| MARGIN_T + (1.0 - v / 100.0) * plot_h;
    let sy_cos = |v: f64| MARGIN_T + (1.0 - (v + 1.0) / 2.0) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>\n"
    ));

    // shaded recommended operating band, clipped to the plotted range
    let (band_lo, band_hi) = RECOMMENDED_BETA_BAND;
    let bx0 = sx(band_lo.clamp(beta_min, beta_max));
    let bx1 = sx(band_hi.clamp(beta_min, beta_max));
    if bx1 > bx0 {
        svg.push_str(&format!(
            "  <rect id=\"recommended-band\" x=\"{bx0:.2}\" y=\"{MARGIN_T:.2}\" \
             width=\"{:.2}\" height=\"{plot_h:.2}\" fill=\"#ffe9a8\" \
             data-lo=\"{band_lo}\" data-hi=\"{band_hi}\"/>\n",
            bx1 - bx0
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#8a6d1a\">\
             recommended {band_lo}\u{2013}{band_hi}</text>\n",
            (bx0 + bx1) / 2.0,
            MARGIN_T + 14.0
        ));
    }

    // axes
    let x_axis_y = MARGIN_T + plot_h;
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN_L:.2}\" y1=\"{x_axis_y:.2}\" x2=\"{:.2}\" y2=\"{x_axis_y:.2}\" stroke=\"black\"/>\n",
        MARGIN_L + plot_w
    ));
    svg.push_str(&format!(
        "  <line x1=\"{MARGIN_L:.2}\" y1=\"{MARGIN_T:.2}\" x2=\"{MARGIN_L:.2}\" y2=\"{x_axis_y:.2}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "  <line x1=\"{:.2}\" y1=\"{MARGIN_T:.2}\" x2=\"{:.2}\" y2=\"{x_axis_y:.2}\" stroke=\"black\"/>\n",
        MARGIN_L + plot_w,
        MARGIN_L + plot_w
    ));
    for tick in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let y = sy_asr(tick);
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{tick:.0}</text>\n",
            MARGIN_L - 6.0,
            y + 4.0
        ));
    }
    for tick in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        let y = sy_cos(tick);
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"start\">{tick:.1}</text>\n",
            MARGIN_L + plot_w + 6.0,
            y + 4.0
        ));
    }
    for row in rows {
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n",
            sx(row.beta),
            x_axis_y + 16.0,
            row.beta
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">beta</text>\n",
        MARGIN_L + plot_w / 2.0,
        SVG_H - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"14\" y=\"{:.2}\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">ASR (%)</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" transform=\"rotate(90 {:.2} {:.2})\" text-anchor=\"middle\">mean cosine</text>\n",
        SVG_W - 14.0,
        MARGIN_T + plot_h / 2.0,
        SVG_W - 14.0,
        MARGIN_T + plot_h / 2.0
    ));

    // series
    let asr_points: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2},{:.2}", sx(r.beta), sy_asr(r.asr)))
        .collect();
    svg.push_str(&format!(
        "  <polyline id=\"asr-series\" points=\"{}\" fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2\"/>\n",
        asr_points.join(" ")
    ));
    let cos_points: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2},{:.2}", sx(r.beta), sy_cos(r.mean_cosine)))
        .collect();
    svg.push_str(&format!(
        "  <polyline id=\"mean-cosine-series\" points=\"{}\" fill=\"none\" stroke=\"#2471a3\" stroke-width=\"2\" stroke-dasharray=\"5 3\"/>\n",
        cos_points.join(" ")
    ));
    for row in rows {
        svg.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3.5\" fill=\"#c0392b\" \
             data-beta=\"{}\" data-asr=\"{}\"/>\n",
            sx(row.beta),
            sy_asr(row.asr),
            row.beta,
            row.asr
        ));
        svg.push_str(&format!(
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#2471a3\" \
             data-beta=\"{}\" data-mean-cosine=\"{}\"/>\n",
            sx(row.beta),
            sy_cos(row.mean_cosine),
            row.beta,
            row.mean_cosine
        ));
    }

    // legend
    svg.push_str(&format!(
        "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"3\" fill=\"#c0392b\"/>\n",
        MARGIN_L + 8.0,
        MARGIN_T + 6.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\">ASR</text>\n",
        MARGIN_L + 24.0,
        MARGIN_T + 11.0
    ));
    svg.push_str(&format!(
        "  <rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"3\" fill=\"#2471a3\"/>\n",
        MARGIN_L + 8.0,
        MARGIN_T + 20.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\">mean cosine</text>\n",
        MARGIN_L + 24.0,
        MARGIN_T + 25.0
    ));
    svg.push_str("</svg>\n");

    std::fs::write(path, svg).map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes a per-iteration loss trace.
pub fn write_loss_trace_csv(trace: &[f64], path: &Path) -> Result<(), ReportError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["iteration", "loss"])?;
    for (i, loss) in trace.iter().enumerate() {
        writer.write_record([i.to_string(), loss.to_string()])?;
    }
    writer.flush().map_err(|source| ReportError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackConfig, AttackMethod, NormMode};
    use crate::eval::PairResult;
    use crate::scoring::VerificationScore;

    fn fake_run() -> EvalRun {
        let cosines = [
            vec![0.9, -0.2],
            vec![0.5, 0.1],
            vec![0.3, 0.4],
            vec![0.1, -0.9],
        ];
        EvalRun {
            victim_names: vec!["alpha".into(), "bravo".into()],
            pairs: cosines
                .iter()
                .enumerate()
                .map(|(i, cos)| PairResult {
                    source_identity: format!("id_{i}"),
                    source_name: "face_00".into(),
                    target_identity: format!("id_{}", i + 10),
                    target_name: "face_01".into(),
                    cosines: cos.clone(),
                    final_loss: Some(0.5 - i as f64 * 0.1),
                    queries: 100,
                    seed: 7000 + i as u64,
                    x_adv: None,
                })
                .collect(),
        }
    }

    fn config() -> ReportConfig {
        ReportConfig {
            attack: AttackConfig::new(AttackMethod::Rstam, NormMode::Linf),
            dataset: "mem".into(),
            pairs: 4,
            seed: 11,
            surrogates: vec!["sur".into()],
            victims: vec!["alpha".into(), "bravo".into()],
            canvas: 64,
        }
    }

    fn thresholds() -> BTreeMap<String, f64> {
        BTreeMap::from([("alpha".to_string(), 0.4), ("bravo".to_string(), 0.0)])
    }

    #[test]
    fn assemble_derives_flags_and_rates_from_rows() {
        let report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        // alpha: cosines .9 .5 .3 .1 vs 0.4 -> 2/4; bravo: -.2 .1 .4 -.9 vs 0 -> 2/4
        assert_eq!(report.asr["alpha"], 50.0);
        assert_eq!(report.asr["bravo"], 50.0);
        assert!(report.per_pair[0].success["alpha"]);
        assert!(!report.per_pair[0].success["bravo"]);
        report.verify_consistency().unwrap();

        let missing = BTreeMap::from([("alpha".to_string(), 0.4)]);
        assert!(matches!(
            EvaluationReport::assemble(config(), &fake_run(), &missing),
            Err(ReportError::MissingThreshold(name)) if name == "bravo"
        ));
    }

    #[test]
    fn tampering_is_detected() {
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        report.verify_consistency().unwrap();
        *report.asr.get_mut("alpha").unwrap() = 75.0;
        assert!(matches!(
            report.verify_consistency(),
            Err(ReportError::Inconsistent(_))
        ));

        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        *report.per_pair[2].success.get_mut("bravo").unwrap() = false;
        assert!(matches!(
            report.verify_consistency(),
            Err(ReportError::Inconsistent(_))
        ));
    }

    #[test]
    fn confidences_fold_into_mcs() {
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        let outcomes = vec![
            VerifyOutcome::Scored(VerificationScore { confidence: 80.0 }),
            VerifyOutcome::FaceNotDetected,
            VerifyOutcome::Scored(VerificationScore { confidence: 40.0 }),
            VerifyOutcome::Scored(VerificationScore { confidence: 60.0 }),
        ];
        report.attach_confidences("mock", &outcomes).unwrap();
        assert_eq!(report.mcs["mock"].mcs, 60.0);
        assert_eq!(report.mcs["mock"].not_detected, 1);
        report.verify_consistency().unwrap();

        assert!(matches!(
            report.attach_confidences("mock", &outcomes[..2]),
            Err(ReportError::ConfidenceCount { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn partial_confidences_stay_consistent() {
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        report
            .attach_partial_confidences(
                "svc",
                &[
                    (0, VerifyOutcome::Scored(VerificationScore { confidence: 90.0 })),
                    (2, VerifyOutcome::Scored(VerificationScore { confidence: 30.0 })),
                ],
            )
            .unwrap();
        assert_eq!(report.mcs["svc"].mcs, 60.0);
        assert_eq!(report.mcs["svc"].scored, 2);
        assert!(!report.per_pair[1].confidences.contains_key("svc"));
        report.verify_consistency().unwrap();

        // a backend with only refusals carries rows but no aggregate
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        report
            .attach_partial_confidences("svc", &[(1, VerifyOutcome::FaceNotDetected)])
            .unwrap();
        assert!(!report.mcs.contains_key("svc"));
        report.verify_consistency().unwrap();

        assert!(matches!(
            report.attach_partial_confidences("svc", &[(99, VerifyOutcome::FaceNotDetected)]),
            Err(ReportError::RowIndex(99))
        ));
    }

    #[test]
    fn json_round_trip_preserves_the_report() {
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        report
            .attach_confidences(
                "mock",
                &[VerifyOutcome::Scored(VerificationScore { confidence: 55.5 }); 4],
            )
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.write_json(&path).unwrap();
        let loaded = EvaluationReport::read_json(&path).unwrap();
        assert_eq!(loaded, report);
        loaded.verify_consistency().unwrap();
    }

    #[test]
    fn csv_lays_out_one_row_per_pair() {
        let mut report = EvaluationReport::assemble(config(), &fake_run(), &thresholds()).unwrap();
        report
            .attach_confidences(
                "mock",
                &[
                    VerifyOutcome::Scored(VerificationScore { confidence: 81.25 }),
                    VerifyOutcome::FaceNotDetected,
                    VerifyOutcome::Scored(VerificationScore { confidence: 40.0 }),
                    VerifyOutcome::Scored(VerificationScore { confidence: 60.0 }),
                ],
            )
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        report.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines[0].starts_with("index,source_identity"));
        assert!(lines[0].contains("cos:alpha") && lines[0].contains("hit:bravo"));
        assert!(lines[0].contains("conf:mock"));
        assert!(lines[1].contains("81.25"));
        assert!(lines[2].contains("not-detected"));
    }

    #[test]
    fn sweep_artifacts_annotate_the_recommended_band() {
        let rows: Vec<SweepRow> = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &beta)| SweepRow {
                beta,
                asr: 10.0 + 12.0 * i as f64,
                mean_cosine: 0.1 * i as f64,
                victim_asr: vec![("vic".into(), 10.0 + 12.0 * i as f64)],
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("sweep.csv");
        let svg_path = dir.path().join("sweep.svg");
        write_sweep_csv(&rows, &csv_path).unwrap();
        write_sweep_svg(&rows, &svg_path).unwrap();

        let csv_text = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv_text.lines().count(), 1 + 6);
        assert_eq!(csv_text.lines().next().unwrap(), "beta,asr,mean_cosine,asr:vic");
        assert_eq!(csv_text.lines().nth(3).unwrap(), "0.2,34,0.2,34");

        let svg = std::fs::read_to_string(&svg_path).unwrap();
        assert!(svg.contains("id=\"recommended-band\""));
        assert!(svg.contains("data-lo=\"0.15\"") && svg.contains("data-hi=\"0.25\""));
        assert!(svg.contains("id=\"asr-series\""));
        assert!(svg.contains("id=\"mean-cosine-series\""));
        assert_eq!(svg.matches("data-asr=").count(), 6);
        assert!(svg.contains("data-asr=\"34\""));

        // deterministic artifact: a second render is byte-identical
        let svg_path2 = dir.path().join("sweep2.svg");
        write_sweep_svg(&rows, &svg_path2).unwrap();
        assert_eq!(svg, std::fs::read_to_string(&svg_path2).unwrap());

        assert!(matches!(
            write_sweep_csv(&[], &csv_path),
            Err(ReportError::Empty)
        ));
    }

    #[test]
    fn loss_trace_csv_is_indexed_from_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_loss_trace_csv(&[0.9, 0.7, 0.4], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iteration,loss\n0,0.9\n1,0.7\n2,0.4\n");
    }
}
