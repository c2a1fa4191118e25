//! Scores, thresholds, decisions and the interchange file formats.
//!
//! A [`ScoreSet`] CSV has the header `id,label,logit_0,...,logit_{c-1}` with
//! an optional trailing `x,y` pair for 2-D point sets. A [`ThresholdVector`]
//! is stored as JSON with the keys `class_count`, `delta`, `method`,
//! `temperatures` and `thresholds`.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randomness::ViabilityMethod;

/// One labeled example with raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub logits: Vec<f64>,
    pub coords: Option<[f64; 2]>,
}

/// A validated, labeled collection of logit vectors over `class_count` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    class_count: usize,
    examples: Vec<Example>,
}

impl ScoreSet {
    /// Checks every invariant: logits length, label range, finiteness,
    /// unique ids, and coordinates either on every example or on none.
    pub fn new(class_count: usize, examples: Vec<Example>) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::domain("class_count must be positive"));
        }
        let has_coords = examples.first().is_some_and(|e| e.coords.is_some());
        let mut ids = HashSet::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            if ex.logits.len() != class_count {
                return Err(Error::domain(format!(
                    "example {i} (`{}`) has {} logits, expected {class_count}",
                    ex.id,
                    ex.logits.len()
                )));
            }
            if ex.label >= class_count {
                return Err(Error::domain(format!(
                    "example {i} (`{}`) has label {} outside [0, {class_count})",
                    ex.id, ex.label
                )));
            }
            if ex.logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!(
                    "example {i} (`{}`) has a non-finite logit",
                    ex.id
                )));
            }
            match ex.coords {
                Some(c) if !has_coords || !c.iter().all(|v| v.is_finite()) => {
                    return Err(Error::domain(format!(
                        "example {i} (`{}`): coordinates must be finite and present on every example or none",
                        ex.id
                    )));
                }
                None if has_coords => {
                    return Err(Error::domain(format!(
                        "example {i} (`{}`) is missing coordinates",
                        ex.id
                    )));
                }
                _ => {}
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::domain(format!("duplicate id `{}`", ex.id)));
            }
        }
        Ok(Self { class_count, examples })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_coords(&self) -> bool {
        self.examples.first().is_some_and(|e| e.coords.is_some())
    }
}

/// Learned per-class rejection thresholds plus the settings that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThresholdVectorRepr", into = "ThresholdVectorRepr")]
pub struct ThresholdVector {
    thresholds: Vec<f64>,
    delta: f64,
    method: ViabilityMethod,
    temperatures: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThresholdVectorRepr {
    class_count: usize,
    delta: f64,
    method: ViabilityMethod,
    temperatures: Vec<f64>,
    thresholds: Vec<f64>,
}

impl TryFrom<ThresholdVectorRepr> for ThresholdVector {
    type Error = Error;

    fn try_from(r: ThresholdVectorRepr) -> Result<Self> {
        if r.thresholds.len() != r.class_count {
            return Err(Error::domain(format!(
                "{} thresholds for class_count {}",
                r.thresholds.len(),
                r.class_count
            )));
        }
        ThresholdVector::new(r.thresholds, r.delta, r.method, r.temperatures)
    }
}

impl From<ThresholdVector> for ThresholdVectorRepr {
    fn from(tv: ThresholdVector) -> Self {
        ThresholdVectorRepr {
            class_count: tv.thresholds.len(),
            delta: tv.delta,
            method: tv.method,
            temperatures: tv.temperatures,
            thresholds: tv.thresholds,
        }
    }
}

impl ThresholdVector {
    pub fn new(thresholds: Vec<f64>, delta: f64, method: ViabilityMethod, temperatures: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::domain("threshold vector must cover at least one class"));
        }
        if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::domain(format!("threshold {t} outside [0,1]")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::domain(format!("delta {delta} outside (0,1)")));
        }
        if temperatures.len() != thresholds.len() {
            return Err(Error::domain(format!(
                "{} temperatures for {} classes",
                temperatures.len(),
                thresholds.len()
            )));
        }
        if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::domain(format!("temperature {t} must be positive and finite")));
        }
        Ok(Self {
            thresholds,
            delta,
            method,
            temperatures,
        })
    }

    /// Reject-nothing thresholds (the Base baseline) with unit temperatures.
    pub fn zeros(class_count: usize, delta: f64, method: ViabilityMethod) -> Result<Self> {
        Self::new(vec![0.0; class_count], delta, method, vec![1.0; class_count])
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn method(&self) -> ViabilityMethod {
        self.method
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }

    pub fn class_count(&self) -> usize {
        self.thresholds.len()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_json()?.as_bytes())
    }
}

/// Outcome of the reject-option classifier on one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub predicted: usize,
    pub confidence: f64,
    pub rejected: bool,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax `exp(z_j/T) / sum_k exp(z_k/T)`.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = logits[argmax(logits)];
    let mut out: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// Predicted class (argmax of the raw logits) and its max softmax after
/// dividing the logits by that class's temperature.
pub fn calibrated_confidence(logits: &[f64], temperatures: &[f64]) -> Result<(usize, f64)> {
    if logits.len() != temperatures.len() {
        return Err(Error::domain(format!(
            "{} logits but {} temperatures",
            logits.len(),
            temperatures.len()
        )));
    }
    let predicted = argmax(logits);
    let probs = softmax(logits, temperatures[predicted])?;
    Ok((predicted, probs[predicted]))
}

/// Applies the rejection rule `confidence <= tau[predicted]`.
pub fn decide(logits: &[f64], tv: &ThresholdVector) -> Result<Decision> {
    if logits.len() != tv.class_count() {
        return Err(Error::domain(format!(
            "{} logits but {} thresholds",
            logits.len(),
            tv.class_count()
        )));
    }
    let (predicted, confidence) = calibrated_confidence(logits, tv.temperatures())?;
    Ok(Decision {
        predicted,
        confidence,
        rejected: confidence <= tv.thresholds()[predicted],
    })
}

fn parse_err(line: u64, column: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: None,
        line,
        column: column.into(),
        message: message.into(),
    }
}

/// Reads a ScoreSet CSV from any reader.
pub fn read_scoreset_from<R: Read>(reader: R) -> Result<ScoreSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => return Err(parse_err(1, "header", "file is empty")),
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(parse_err(1, "header", "expected `id,label,logit_0,...`"));
    }
    let has_coords = cols.len() >= 5 && cols[cols.len() - 2] == "x" && cols[cols.len() - 1] == "y";
    let logit_end = if has_coords { cols.len() - 2 } else { cols.len() };
    let class_count = logit_end - 2;
    for (j, name) in cols[2..logit_end].iter().enumerate() {
        if *name != format!("logit_{j}") {
            return Err(parse_err(1, *name, format!("expected column `logit_{j}`")));
        }
    }
    if class_count == 0 {
        return Err(parse_err(1, "header", "no logit columns"));
    }

    let parse_f64 = |s: &str, line: u64, col: &str| -> Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| parse_err(line, col, format!("`{s}` is not a number")))?;
        if !v.is_finite() {
            return Err(parse_err(line, col, format!("`{s}` is not finite")));
        }
        Ok(v)
    };

    let mut examples = Vec::new();
    let mut ids = HashSet::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != cols.len() {
            return Err(parse_err(
                line,
                "row",
                format!("{} fields, header has {}", rec.len(), cols.len()),
            ));
        }
        let id = rec[0].to_string();
        if !ids.insert(id.clone()) {
            return Err(parse_err(line, "id", format!("duplicate id `{id}`")));
        }
        let label: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, "label", format!("`{}` is not a class index", &rec[1])))?;
        if label >= class_count {
            return Err(parse_err(
                line,
                "label",
                format!("label {label} outside [0, {class_count})"),
            ));
        }
        let logits = (0..class_count)
            .map(|j| parse_f64(&rec[j + 2], line, cols[j + 2]))
            .collect::<Result<Vec<_>>>()?;
        let coords = if has_coords {
            Some([
                parse_f64(&rec[logit_end], line, "x")?,
                parse_f64(&rec[logit_end + 1], line, "y")?,
            ])
        } else {
            None
        };
        examples.push(Example {
            id,
            label,
            logits,
            coords,
        });
    }
    ScoreSet::new(class_count, examples)
}

pub fn read_scoreset(path: &Path) -> Result<ScoreSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scoreset_from(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
}

/// Writes the CSV form. Floats use the shortest representation that parses
/// back to the same value, so write-then-read is lossless.
pub fn write_scoreset_to<W: Write>(set: &ScoreSet, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..set.class_count()).map(|j| format!("logit_{j}")));
    if set.has_coords() {
        header.push("x".into());
        header.push("y".into());
    }
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for ex in set.examples() {
        row.clear();
        row.push(ex.id.clone());
        row.push(ex.label.to_string());
        row.extend(ex.logits.iter().map(|v| v.to_string()));
        if let Some([x, y]) = ex.coords {
            row.push(x.to_string());
            row.push(y.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn write_scoreset(set: &ScoreSet, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_scoreset_to(set, &mut buf)?;
    atomic_write(path, &buf)
}

/// Reads an `id,ideal_reject` mask file into (id, flag) pairs.
pub fn read_mask_from<R: Read>(reader: R) -> Result<Vec<(String, bool)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        Some(h) => {
            let h = h?;
            if h.len() != 2 || &h[0] != "id" || &h[1] != "ideal_reject" {
                return Err(parse_err(1, "header", "expected `id,ideal_reject`"));
            }
        }
        None => return Err(parse_err(1, "header", "file is empty")),
    }
    let mut out = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let flag = match rec[1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, "ideal_reject", format!("`{other}` is not 0 or 1"))),
        };
        out.push((rec[0].to_string(), flag));
    }
    Ok(out)
}

pub fn read_mask(path: &Path) -> Result<Vec<(String, bool)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_mask_from(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
}

pub fn write_mask(ids: &[&str], mask: &[bool], path: &Path) -> Result<()> {
    if ids.len() != mask.len() {
        return Err(Error::domain("mask length differs from id count"));
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["id", "ideal_reject"])?;
    for (id, m) in ids.iter().zip(mask) {
        w.write_record([*id, if *m { "1" } else { "0" }])?;
    }
    let buf = w.into_inner().map_err(|e| Error::domain(e.to_string()))?;
    atomic_write(path, &buf)
}

/// Orders mask entries to match the examples of `set`, by id.
pub fn align_mask(set: &ScoreSet, entries: &[(String, bool)]) -> Result<Vec<bool>> {
    if entries.len() != set.len() {
        return Err(Error::domain(format!(
            "mask has {} rows, score set has {}",
            entries.len(),
            set.len()
        )));
    }
    let lookup: std::collections::HashMap<&str, bool> = entries.iter().map(|(id, m)| (id.as_str(), *m)).collect();
    set.examples()
        .iter()
        .map(|ex| {
            lookup
                .get(ex.id.as_str())
                .copied()
                .ok_or_else(|| Error::domain(format!("mask has no row for id `{}`", ex.id)))
        })
        .collect()
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tv(thresholds: Vec<f64>) -> ThresholdVector {
        let c = thresholds.len();
        ThresholdVector::new(thresholds, 0.05, ViabilityMethod::Bcdf, vec![1.0; c]).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[2f64.ln(), 0.0], 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax(&[2.0, 0.0], 2.0).unwrap();
        assert!((p[0] - 0.7311).abs() < 1e-4 && (p[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[], 1.0).is_err());
        assert!(softmax(&[1.0], 0.0).is_err());
        assert!(softmax(&[1.0], -2.0).is_err());
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let p = softmax(&[1000.0, 999.0, -1e9], 1.0).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&p), 0);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn decide_examples() {
        // logits whose softmax is [0.7, 0.3]
        let z = [0.7f64.ln(), 0.3f64.ln()];
        let p = softmax(&z, 1.0).unwrap();
        let d = decide(&z, &tv(vec![p[0], 0.5])).unwrap();
        assert!(d.rejected, "boundary is inclusive");

        let d = decide(&[0.9f64.ln(), 0.1f64.ln()], &tv(vec![0.0, 0.0])).unwrap();
        assert!(!d.rejected);

        let d = decide(&[0.51f64.ln(), 0.49f64.ln()], &tv(vec![0.6, 0.6])).unwrap();
        assert!(d.rejected);
        assert_eq!(d.predicted, 0);

        assert!(decide(&[1.0, 2.0, 3.0], &tv(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn decide_uses_predicted_class_temperature() {
        let tv = ThresholdVector::new(vec![0.0, 0.0], 0.05, ViabilityMethod::Bcdf, vec![2.0, 5.0]).unwrap();
        let d = decide(&[2.0, 0.0], &tv).unwrap();
        assert!((d.confidence - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn threshold_vector_validation() {
        let m = ViabilityMethod::Bcdf;
        assert!(ThresholdVector::new(vec![1.2], 0.05, m, vec![1.0]).is_err());
        assert!(ThresholdVector::new(vec![0.2], 1.0, m, vec![1.0]).is_err());
        assert!(ThresholdVector::new(vec![0.2], 0.05, m, vec![0.0]).is_err());
        assert!(ThresholdVector::new(vec![0.2, 0.1], 0.05, m, vec![1.0]).is_err());
        let bad = r#"{"class_count":3,"delta":0.05,"method":"bcdf","temperatures":[1,1],"thresholds":[0,0]}"#;
        assert!(ThresholdVector::from_json(bad).is_err());
        let bad = r#"{"class_count":2,"delta":0.05,"method":"coinflip","temperatures":[1,1],"thresholds":[0,0]}"#;
        assert!(ThresholdVector::from_json(bad).is_err());
    }

    #[test]
    fn threshold_json_key_order() {
        let s = tv(vec![0.25, 0.0]).to_json().unwrap();
        let keys: Vec<usize> = ["class_count", "delta", "method", "temperatures", "thresholds"]
            .iter()
            .map(|k| s.find(&format!("\"{k}\"")).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(s.contains("\"bcdf\""));
    }

    #[test]
    fn read_minimal_file() {
        let set = read_scoreset_from("id,label,logit_0,logit_1\na,1,0.5,-0.5\n".as_bytes()).unwrap();
        assert_eq!(set.class_count(), 2);
        assert_eq!(set.len(), 1);
        assert_eq!(set.examples()[0].label, 1);
        assert!(!set.has_coords());
    }

    #[test]
    fn read_reports_row_of_bad_label() {
        let csv = "id,label,logit_0,logit_1,logit_2\na,0,1,2,3\nb,5,1,2,3\n";
        match read_scoreset_from(csv.as_bytes()) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "label");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn read_rejects_schema_violations() {
        let cases = [
            ("", "header"),
            ("ident,label,logit_0\n", "header"),
            ("id,label,logit_1\n", "logit_1"),
            ("id,label,logit_0,logit_1\na,0,1\n", "row"),
            ("id,label,logit_0,logit_1\na,0,1,NaN\n", "logit_1"),
            ("id,label,logit_0,logit_1\na,0,1,inf\n", "logit_1"),
            ("id,label,logit_0,logit_1\na,0,1,zz\n", "logit_1"),
            ("id,label,logit_0,logit_1\na,0,1,2\na,1,1,2\n", "id"),
            ("id,label,logit_0,logit_1\na,-1,1,2\n", "label"),
        ];
        for (csv, col) in cases {
            match read_scoreset_from(csv.as_bytes()) {
                Err(Error::Parse { column, .. }) => assert_eq!(column, col, "{csv:?}"),
                other => panic!("{csv:?}: expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn coords_are_optional_but_consistent() {
        let set = read_scoreset_from("id,label,logit_0,logit_1,x,y\na,0,1,2,0.5,-3\n".as_bytes()).unwrap();
        assert_eq!(set.examples()[0].coords, Some([0.5, -3.0]));
        let mixed = vec![
            Example {
                id: "a".into(),
                label: 0,
                logits: vec![0.0],
                coords: Some([0.0, 0.0]),
            },
            Example {
                id: "b".into(),
                label: 0,
                logits: vec![0.0],
                coords: None,
            },
        ];
        assert!(ScoreSet::new(1, mixed).is_err());
    }

    #[test]
    fn mask_alignment_by_id() {
        let set = read_scoreset_from("id,label,logit_0\nb,0,1\na,0,1\n".as_bytes()).unwrap();
        let entries = read_mask_from("id,ideal_reject\na,1\nb,0\n".as_bytes()).unwrap();
        assert_eq!(align_mask(&set, &entries).unwrap(), vec![false, true]);
        assert!(read_mask_from("id,ideal_reject\na,2\n".as_bytes()).is_err());
    }
}
