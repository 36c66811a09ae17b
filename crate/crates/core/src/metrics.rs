//! Service metrics (TT, OT, BUT) and detection metrics over execution logs,
//! plus CSV export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{ExecutionLog, Label};
use crate::error::{Error, Result};
use crate::index::Action;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceMetrics {
    pub tt_seconds: f64,
    /// All completions per minute.
    pub ot_per_min: f64,
    /// Benign completions per minute.
    pub but_per_min: f64,
    pub completed: u64,
    pub benign_completed: u64,
}

/// TT spans first start to last finish; OT and BUT are per minute over TT.
pub fn compute_service_metrics(log: &ExecutionLog) -> Result<ServiceMetrics> {
    let mut first = f64::INFINITY;
    let mut last = f64::NEG_INFINITY;
    let mut completed = 0u64;
    let mut benign = 0u64;
    for r in log.served() {
        first = first.min(r.start);
        last = last.max(r.end);
        completed += 1;
        if r.label == Label::Benign {
            benign += 1;
        }
    }
    let tt = if completed == 0 { 0.0 } else { last - first };
    if tt <= 0.0 {
        return Err(Error::DegenerateRun);
    }
    Ok(ServiceMetrics {
        tt_seconds: tt,
        ot_per_min: completed as f64 / tt * 60.0,
        but_per_min: benign as f64 / tt * 60.0,
        completed,
        benign_completed: benign,
    })
}

/// Rates from the counts; None marks an undefined ratio (zero denominator).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// FP / (FP + TP).
    pub fpr: Option<f64>,
    /// FN / (FN + TN).
    pub fjr: Option<f64>,
    /// FP / (FP + TN).
    pub fpr_std: Option<f64>,
    /// FN / (FN + TP).
    pub fnr_std: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl DetectionMetrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        DetectionMetrics {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            fpr: ratio(fp, fp + tp),
            fjr: ratio(fn_, fn_ + tn),
            fpr_std: ratio(fp, fp + tn),
            fnr_std: ratio(fn_, fn_ + tp),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A request is flagged iff its action is DosPenalty.
pub fn compute_detection_metrics<I>(pairs: I) -> DetectionMetrics
where
    I: IntoIterator<Item = (Action, Label)>,
{
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (action, label) in pairs {
        match (action == Action::DosPenalty, label) {
            (true, Label::Attack) => tp += 1,
            (true, Label::Benign) => fp += 1,
            (false, Label::Benign) => tn += 1,
            (false, Label::Attack) => fn_ += 1,
        }
    }
    DetectionMetrics::from_counts(tp, fp, tn, fn_)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub policy: String,
    pub seed: u64,
    pub service: ServiceMetrics,
    pub attack_completed: u64,
    pub expired: u64,
    pub detection: DetectionMetrics,
}

impl MetricsReport {
    pub fn from_log(scenario: &str, policy: &str, seed: u64, log: &ExecutionLog) -> Result<Self> {
        let service = compute_service_metrics(log)?;
        let detection = compute_detection_metrics(log.served().map(|r| (r.action, r.label)));
        Ok(MetricsReport {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            seed,
            service,
            attack_completed: service.completed - service.benign_completed,
            expired: log.expired().count() as u64,
            detection,
        })
    }
}

/// Column order of the report CSV.
pub const REPORT_COLUMNS: [&str; 21] = [
    "scenario",
    "policy",
    "seed",
    "tt_seconds",
    "ot_per_min",
    "but_per_min",
    "completed",
    "benign_completed",
    "attack_completed",
    "expired",
    "tp",
    "fp",
    "tn",
    "fn",
    "precision",
    "recall",
    "f1",
    "fpr",
    "fjr",
    "fpr_std",
    "fnr_std",
];

/// Marker written for undefined ratios.
pub const UNDEFINED: &str = "NA";

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

pub fn write_csv<W: Write>(reports: &[MetricsReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(REPORT_COLUMNS)?;
    for r in reports {
        let d = &r.detection;
        out.write_record([
            r.scenario.clone(),
            r.policy.clone(),
            r.seed.to_string(),
            r.service.tt_seconds.to_string(),
            r.service.ot_per_min.to_string(),
            r.service.but_per_min.to_string(),
            r.service.completed.to_string(),
            r.service.benign_completed.to_string(),
            r.attack_completed.to_string(),
            r.expired.to_string(),
            d.tp.to_string(),
            d.fp.to_string(),
            d.tn.to_string(),
            d.fn_.to_string(),
            fmt_opt(d.precision),
            fmt_opt(d.recall),
            fmt_opt(d.f1),
            fmt_opt(d.fpr),
            fmt_opt(d.fjr),
            fmt_opt(d.fpr_std),
            fmt_opt(d.fnr_std),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn export_csv(reports: &[MetricsReport], path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LogRecord, ServedRecord};
    use crate::gensim::ProfileKind;
    use crate::index::Region;
    use crate::telemetry::{ResourceVector, Termination};

    const EPS: f64 = 1e-9;

    fn served(label: Label, start: f64, end: f64) -> LogRecord {
        LogRecord::Served(ServedRecord {
            round: 1,
            user: 0,
            request_id: 0,
            label,
            profile: ProfileKind::BenignShort,
            action: Action::Reward,
            i_c: 1.0,
            i_t: 1.0,
            region: Region::C,
            score_before: 100.0,
            score_after: 100.0,
            cap: None,
            input_len: 1,
            output_len: 1,
            terminated_by: Termination::Eos,
            arrival: start,
            start,
            end,
            vector: ResourceVector::new(end - start, 1.0, 1.0, 1.0, 1.0),
        })
    }

    #[test]
    fn throughput_worked_example() {
        let mut log = ExecutionLog::default();
        log.records.push(served(Label::Benign, 0.0, 1.0));
        for _ in 0..48 {
            log.records.push(served(Label::Benign, 1.0, 2.0));
        }
        log.records.push(served(Label::Benign, 300.0, 351.40));
        let m = compute_service_metrics(&log).unwrap();
        assert!((m.tt_seconds - 351.40).abs() < EPS);
        assert!((m.but_per_min - 50.0 / 351.40 * 60.0).abs() < EPS);
        assert!((m.but_per_min - 8.54).abs() < 0.005);
        assert_eq!(m.ot_per_min, m.but_per_min);
    }

    #[test]
    fn empty_log_is_degenerate() {
        assert!(matches!(
            compute_service_metrics(&ExecutionLog::default()),
            Err(Error::DegenerateRun)
        ));
    }

    #[test]
    fn zero_benign_completions() {
        let mut log = ExecutionLog::default();
        log.records.push(served(Label::Attack, 0.0, 4.0));
        let m = compute_service_metrics(&log).unwrap();
        assert_eq!(m.but_per_min, 0.0);
        assert!((m.ot_per_min - 15.0).abs() < EPS);
    }

    #[test]
    fn detection_examples() {
        let d = DetectionMetrics::from_counts(10, 0, 5, 0);
        assert_eq!(
            (d.precision, d.recall, d.f1),
            (Some(1.0), Some(1.0), Some(1.0))
        );
        let d = DetectionMetrics::from_counts(9, 1, 0, 0);
        assert!((d.fpr.unwrap() - 0.1).abs() < EPS);
        let d = DetectionMetrics::from_counts(0, 0, 4, 0);
        assert_eq!(d.precision, None);
        assert_eq!(d.fpr, None);
        assert_eq!(d.fjr, Some(0.0));
        let d = DetectionMetrics::from_counts(3, 1, 10, 2);
        assert!((d.fjr.unwrap() - 2.0 / 12.0).abs() < EPS);
        assert!((d.fpr_std.unwrap() - 1.0 / 11.0).abs() < EPS);
        assert!((d.fnr_std.unwrap() - 2.0 / 5.0).abs() < EPS);
        assert_eq!(d.total(), 16);
    }

    #[test]
    fn csv_shapes() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), REPORT_COLUMNS.join(","));

        let mut log = ExecutionLog::default();
        log.records.push(served(Label::Benign, 0.0, 2.0));
        let a = MetricsReport::from_log("s", "ours", 1, &log).unwrap();
        let b = MetricsReport::from_log("s", "rr", 1, &log).unwrap();
        let mut one = Vec::new();
        write_csv(&[a.clone(), b.clone()], &mut one).unwrap();
        let mut two = Vec::new();
        write_csv(&[a, b], &mut two).unwrap();
        assert_eq!(one, two);
        let text = String::from_utf8(one).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",NA,0,0,NA"));
    }
}
