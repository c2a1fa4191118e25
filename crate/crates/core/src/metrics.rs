//! Evaluation of a reject-option classifier.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::randomness::RegionTally;
use crate::score_model::{argmax, decide, Decision, ScoreSet, ThresholdVector};
use crate::special::betainc;

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn ser_frac<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*v))
}

fn ser_opt_frac<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round6(*v)),
        None => s.serialize_none(),
    }
}

/// Integer counts behind every fraction in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counts {
    pub m: u64,
    pub correct: u64,
    pub selected: u64,
    pub selected_correct: u64,
    pub rejected: u64,
    pub rejected_correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub predicted: u64,
    pub selected: u64,
    #[serde(serialize_with = "ser_opt_frac")]
    pub coverage: Option<f64>,
    #[serde(serialize_with = "ser_opt_frac")]
    pub select_accuracy: Option<f64>,
    pub reject_tally: RegionTally,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(serialize_with = "ser_frac")]
    pub accuracy: f64,
    #[serde(serialize_with = "ser_frac")]
    pub coverage: f64,
    #[serde(serialize_with = "ser_opt_frac")]
    pub select_accuracy: Option<f64>,
    #[serde(serialize_with = "ser_opt_frac")]
    pub reject_accuracy: Option<f64>,
    #[serde(serialize_with = "ser_opt_frac")]
    pub ida: Option<f64>,
    /// Reject region pooled over all classes.
    pub reject_tally: RegionTally,
    pub counts: Counts,
    pub per_class: Vec<ClassReport>,
}

impl EvalReport {
    /// One row per class: `class,predicted,selected,coverage,select_accuracy,reject_n,reject_k,reject_accuracy`.
    /// Absent values are written as `--`.
    pub fn per_class_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "--".to_string(), |v| format!("{:.6}", v))
        }
        let mut out =
            String::from("class,predicted,selected,coverage,select_accuracy,reject_n,reject_k,reject_accuracy\n");
        for c in &self.per_class {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.class,
                c.predicted,
                c.selected,
                opt(c.coverage),
                opt(c.select_accuracy),
                c.reject_tally.n,
                c.reject_tally.k,
                opt(c.reject_tally.accuracy()),
            ));
        }
        out
    }
}

/// `1 - mean 0/1 loss` of the argmax rule.
pub fn accuracy(set: &ScoreSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::domain("accuracy of an empty score set"));
    }
    let correct = set
        .examples()
        .iter()
        .filter(|ex| argmax(&ex.logits) == ex.label)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

pub fn decide_all(set: &ScoreSet, tv: &ThresholdVector) -> Result<Vec<Decision>> {
    if set.class_count() != tv.class_count() {
        return Err(Error::domain(format!(
            "score set has {} classes, thresholds {}",
            set.class_count(),
            tv.class_count()
        )));
    }
    set.examples().iter().map(|ex| decide(&ex.logits, tv)).collect()
}

/// Coverage, select/reject accuracy, optional IDA against `ideal_mask`
/// (`true` = ideally rejected), and a per-class breakdown.
pub fn evaluate(set: &ScoreSet, tv: &ThresholdVector, ideal_mask: Option<&[bool]>) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::domain("cannot evaluate an empty score set"));
    }
    if let Some(mask) = ideal_mask {
        if mask.len() != set.len() {
            return Err(Error::domain(format!(
                "ideal mask has {} entries, score set {}",
                mask.len(),
                set.len()
            )));
        }
    }
    let decisions = decide_all(set, tv)?;
    let c = set.class_count();
    let mut counts = Counts {
        m: set.len() as u64,
        ..Counts::default()
    };
    let mut per_class: Vec<(u64, u64, u64, u64, u64)> = vec![(0, 0, 0, 0, 0); c];
    let mut agree = 0u64;
    for (i, (ex, d)) in set.examples().iter().zip(&decisions).enumerate() {
        let correct = d.predicted == ex.label;
        counts.correct += correct as u64;
        let pc = &mut per_class[d.predicted];
        pc.0 += 1;
        if d.rejected {
            counts.rejected += 1;
            counts.rejected_correct += correct as u64;
            pc.3 += 1;
            pc.4 += correct as u64;
        } else {
            counts.selected += 1;
            counts.selected_correct += correct as u64;
            pc.1 += 1;
            pc.2 += correct as u64;
        }
        if let Some(mask) = ideal_mask {
            agree += (mask[i] == d.rejected) as u64;
        }
    }
    let frac = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let m = counts.m;
    Ok(EvalReport {
        accuracy: counts.correct as f64 / m as f64,
        coverage: counts.selected as f64 / m as f64,
        select_accuracy: frac(counts.selected_correct, counts.selected),
        reject_accuracy: frac(counts.rejected_correct, counts.rejected),
        ida: ideal_mask.map(|_| agree as f64 / m as f64),
        reject_tally: RegionTally {
            n: counts.rejected,
            k: counts.rejected_correct,
        },
        counts,
        per_class: per_class
            .into_iter()
            .enumerate()
            .map(|(j, (pred, sel, sel_ok, rej, rej_ok))| ClassReport {
                class: j,
                predicted: pred,
                selected: sel,
                coverage: frac(sel, pred),
                select_accuracy: frac(sel_ok, sel),
                reject_tally: RegionTally { n: rej, k: rej_ok },
            })
            .collect(),
    })
}

/// Per-run values of one metric across independently seeded runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSeries(Vec<f64>);

impl RunSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::domain("a run series needs at least two runs"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("run series values must be finite"));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (self.0.len() - 1) as f64
    }
}

/// `P(T <= t)` for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 {
        return Err(Error::domain(format!("degrees of freedom must be positive, got {df}")));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 1.0 } else { 0.0 });
    }
    let half_tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))?;
    Ok(if t < 0.0 { half_tail } else { 1.0 - half_tail })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) < mean(b)`.
    pub p_value: f64,
}

/// Welch's unequal-variance t-test of `mean(a) < mean(b)`.
///
/// With zero variance on both sides the statistic is `0` (p = 0.5) when the
/// means agree and infinite otherwise.
pub fn compare_runs(a: &RunSeries, b: &RunSeries) -> Result<TTest> {
    let (na, nb) = (a.0.len() as f64, b.0.len() as f64);
    let (va, vb) = (a.variance() / na, b.variance() / nb);
    let diff = a.mean() - b.mean();
    let se2 = va + vb;
    if se2 == 0.0 {
        let t = if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        return Ok(TTest {
            t_statistic: t,
            df: na + nb - 2.0,
            p_value: student_t_cdf(t, na + nb - 2.0)?,
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest {
        t_statistic: t,
        df,
        p_value: student_t_cdf(t, df)?,
    })
}
