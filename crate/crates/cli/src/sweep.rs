//! δ × method grid with Base and Naive comparison rows.

use anyhow::Result;
use rayon::prelude::*;
use rejopt_core::calibration::{fit_per_class_temperature, CalibrationMap};
use rejopt_core::learner::learn_thresholds;
use rejopt_core::metrics::{evaluate, EvalReport};
use rejopt_core::randomness::ViabilityMethod;
use rejopt_core::score_model::{ScoreSet, ThresholdVector};
use serde::Serialize;

const NAIVE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct SplitMetrics {
    pub select_accuracy: Option<f64>,
    pub reject_accuracy: Option<f64>,
    pub coverage: f64,
    pub ida: Option<f64>,
}

impl SplitMetrics {
    fn from_report(r: &EvalReport) -> Self {
        let round = |v: f64| (v * 1e6).round() / 1e6;
        Self {
            select_accuracy: r.select_accuracy.map(round),
            reject_accuracy: r.reject_accuracy.map(round),
            coverage: round(r.coverage),
            ida: r.ida.map(round),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub method: Option<ViabilityMethod>,
    pub delta: Option<f64>,
    pub calibrated: bool,
    pub thresholds: Vec<f64>,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    /// Classes whose threshold differs from B-CDF at the same δ.
    /// Absent for rows that are not learned or are B-CDF themselves.
    pub bcdf_mismatch: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

#[derive(Serialize)]
struct SweepJson<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    rows: &'a [SweepRow],
}

fn cell(
    label: String,
    method: Option<ViabilityMethod>,
    delta: Option<f64>,
    tv: &ThresholdVector,
    val: (&ScoreSet, Option<&[bool]>),
    test: (&ScoreSet, Option<&[bool]>),
) -> Result<SweepRow> {
    let rv = evaluate(val.0, tv, val.1)?;
    let rt = evaluate(test.0, tv, test.1)?;
    Ok(SweepRow {
        label,
        method,
        delta,
        calibrated: tv.temperatures().iter().any(|t| *t != 1.0),
        thresholds: tv.thresholds().to_vec(),
        val: SplitMetrics::from_report(&rv),
        test: SplitMetrics::from_report(&rt),
        bcdf_mismatch: None,
    })
}

pub fn run(
    val: &ScoreSet,
    test: &ScoreSet,
    val_mask: Option<&[bool]>,
    test_mask: Option<&[bool]>,
    deltas: &[f64],
    methods: &[ViabilityMethod],
) -> Result<SweepTable> {
    let c = val.class_count();
    let cal = fit_per_class_temperature(val)?;
    let identity = CalibrationMap::identity(c);
    let v = (val, val_mask);
    let t = (test, test_mask);

    let fixed = |thresholds: f64, cal: &CalibrationMap| {
        ThresholdVector::new(
            vec![thresholds; c],
            0.5,
            ViabilityMethod::Bcdf,
            cal.temperatures().to_vec(),
        )
    };
    let mut rows = vec![
        cell("base".into(), None, None, &fixed(0.0, &identity)?, v, t)?,
        cell(
            "naive_nocal".into(),
            None,
            None,
            &fixed(NAIVE_THRESHOLD, &identity)?,
            v,
            t,
        )?,
        cell("naive_cal".into(), None, None, &fixed(NAIVE_THRESHOLD, &cal)?, v, t)?,
    ];

    let grid: Vec<(f64, ViabilityMethod)> = deltas
        .iter()
        .flat_map(|d| methods.iter().map(move |m| (*d, *m)))
        .collect();
    let learned = grid
        .par_iter()
        .map(|&(delta, method)| -> Result<SweepRow> {
            let tv = learn_thresholds(val, &cal, delta, method)?;
            let mut row = cell(format!("{method}@{delta}"), Some(method), Some(delta), &tv, v, t)?;
            if method != ViabilityMethod::Bcdf {
                let reference = learn_thresholds(val, &cal, delta, ViabilityMethod::Bcdf)?;
                row.bcdf_mismatch = Some(
                    (0..c)
                        .filter(|&j| tv.thresholds()[j] != reference.thresholds()[j])
                        .collect(),
                );
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.extend(learned);
    Ok(SweepTable { rows })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{v:.6}"))
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,method,delta,calibrated,thresholds,val_sa,val_ra,val_coverage,val_ida,\
             test_sa,test_ra,test_coverage,test_ida,bcdf_mismatch\n",
        );
        for r in &self.rows {
            let thresholds: Vec<String> = r.thresholds.iter().map(|t| t.to_string()).collect();
            let mismatch = match &r.bcdf_mismatch {
                None => "--".to_string(),
                Some(m) => m.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";"),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.6},{},{},{},{:.6},{},{}\n",
                r.label,
                r.method.map_or("--".to_string(), |m| m.to_string()),
                r.delta.map_or("--".to_string(), |d| d.to_string()),
                r.calibrated,
                thresholds.join(";"),
                opt(r.val.select_accuracy),
                opt(r.val.reject_accuracy),
                r.val.coverage,
                opt(r.val.ida),
                opt(r.test.select_accuracy),
                opt(r.test.reject_accuracy),
                r.test.coverage,
                opt(r.test.ida),
                mismatch,
            ));
        }
        out
    }

    pub fn to_json(&self, generated_at_unix: Option<u64>) -> impl Serialize + '_ {
        SweepJson {
            generated_at_unix,
            rows: &self.rows,
        }
    }

    /// Human-readable table in percent.
    pub fn render(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{:.1}", 100.0 * v));
        let mut out = format!(
            "{:<26} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
            "row", "val SA", "val RA", "val phi", "test SA", "test RA", "test phi"
        );
        for r in &self.rows {
            let flag = match &r.bcdf_mismatch {
                Some(m) if !m.is_empty() => format!("  differs from bcdf on classes {m:?}"),
                _ => String::new(),
            };
            out.push_str(&format!(
                "{:<26} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}{}\n",
                r.label,
                pct(r.val.select_accuracy),
                pct(r.val.reject_accuracy),
                pct(Some(r.val.coverage)),
                pct(r.test.select_accuracy),
                pct(r.test.reject_accuracy),
                pct(Some(r.test.coverage)),
                flag
            ));
        }
        out
    }
}
