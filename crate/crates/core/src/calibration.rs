//! Per-class temperature scaling.
//!
//! Each class gets its own temperature, fitted on the validation examples
//! *predicted* as that class. The rejection rule indexes thresholds by
//! predicted class, so calibration conditions the same way.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score_model::{argmax, calibrated_confidence, ScoreSet};

pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 10.0;
pub const GRID_POINTS: usize = 61;
const GOLDEN_ITERS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFitStats {
    pub count: usize,
    pub nll_before: f64,
    pub nll_after: f64,
}

/// Per-class temperatures. Serializes as `{"temperatures":[...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    temperatures: Vec<f64>,
    #[serde(skip)]
    fit_stats: Vec<ClassFitStats>,
}

impl CalibrationMap {
    pub fn new(temperatures: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::domain("calibration map needs at least one class"));
        }
        if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::domain(format!("temperature {t} must be positive and finite")));
        }
        Ok(Self {
            temperatures,
            fit_stats: Vec::new(),
        })
    }

    pub fn identity(class_count: usize) -> Self {
        Self {
            temperatures: vec![1.0; class_count],
            fit_stats: Vec::new(),
        }
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    /// Empty unless the map came from [`fit_per_class_temperature`].
    pub fn fit_stats(&self) -> &[ClassFitStats] {
        &self.fit_stats
    }

    pub fn class_count(&self) -> usize {
        self.temperatures.len()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Repr {
            temperatures: Vec<f64>,
        }
        let r: Repr = serde_json::from_str(s)?;
        Self::new(r.temperatures)
    }
}

/// Mean negative log-likelihood of the true labels at temperature `t`.
fn mean_nll(members: &[(&[f64], usize)], t: f64) -> f64 {
    let total: f64 = members
        .iter()
        .map(|(logits, label)| {
            let max = logits[argmax(logits)];
            let lse = logits.iter().map(|z| ((z - max) / t).exp()).sum::<f64>().ln();
            lse - (logits[*label] - max) / t
        })
        .sum();
    total / members.len() as f64
}

/// Log-spaced grid over `[T_MIN, T_MAX]`.
pub fn temperature_grid() -> Vec<f64> {
    let (lo, hi) = (T_MIN.ln(), T_MAX.ln());
    (0..GRID_POINTS)
        .map(|i| {
            if i == GRID_POINTS - 1 {
                T_MAX
            } else {
                (lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64).exp()
            }
        })
        .collect()
}

fn fit_class(members: &[(&[f64], usize)], grid: &[f64]) -> (f64, ClassFitStats) {
    if members.is_empty() {
        return (
            1.0,
            ClassFitStats {
                count: 0,
                nll_before: 0.0,
                nll_after: 0.0,
            },
        );
    }
    let nll_before = mean_nll(members, 1.0);
    let scores: Vec<f64> = grid.iter().map(|&t| mean_nll(members, t)).collect();
    let mut best_i = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best_i] {
            best_i = i;
        }
    }

    // Golden-section refinement in log-temperature between the neighbours.
    let mut a = grid[best_i.saturating_sub(1)].ln();
    let mut b = grid[(best_i + 1).min(grid.len() - 1)].ln();
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = mean_nll(members, c.exp());
    let mut fd = mean_nll(members, d.exp());
    for _ in 0..GOLDEN_ITERS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = mean_nll(members, c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = mean_nll(members, d.exp());
        }
    }
    let refined = (0.5 * (a + b)).exp();

    let mut best = (1.0, nll_before);
    for (t, s) in [(grid[best_i], scores[best_i]), (refined, mean_nll(members, refined))] {
        if s < best.1 {
            best = (t, s);
        }
    }
    (
        best.0,
        ClassFitStats {
            count: members.len(),
            nll_before,
            nll_after: best.1,
        },
    )
}

/// Fits one temperature per predicted class by minimizing the mean NLL.
///
/// Coarse search over [`temperature_grid`], then golden-section refinement
/// around the best grid point. `T = 1` is always a candidate, so the NLL
/// never gets worse. Classes that are never predicted keep `T = 1`.
pub fn fit_per_class_temperature(val: &ScoreSet) -> Result<CalibrationMap> {
    if val.is_empty() {
        return Err(Error::domain("cannot calibrate on an empty score set"));
    }
    let c = val.class_count();
    let mut by_class: Vec<Vec<(&[f64], usize)>> = vec![Vec::new(); c];
    for ex in val.examples() {
        by_class[argmax(&ex.logits)].push((ex.logits.as_slice(), ex.label));
    }
    let grid = temperature_grid();
    let fits: Vec<(f64, ClassFitStats)> = by_class.par_iter().map(|m| fit_class(m, &grid)).collect();
    let (temperatures, fit_stats) = fits.into_iter().unzip();
    Ok(CalibrationMap {
        temperatures,
        fit_stats,
    })
}

/// Calibrated confidence of every example: the max softmax after dividing
/// its logits by the temperature of its predicted class.
pub fn apply_calibration(set: &ScoreSet, cal: &CalibrationMap) -> Result<Vec<f64>> {
    if set.class_count() != cal.class_count() {
        return Err(Error::domain(format!(
            "score set has {} classes, calibration map {}",
            set.class_count(),
            cal.class_count()
        )));
    }
    set.examples()
        .iter()
        .map(|ex| calibrated_confidence(&ex.logits, cal.temperatures()).map(|(_, conf)| conf))
        .collect()
}
