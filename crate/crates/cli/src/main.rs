//! `rejopt`: learn and evaluate per-class rejection thresholds from the
//! command line.
//!
//! Exit codes: 0 on success, 2 on usage errors, 3 on data errors.

mod svg;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rejopt_core::calibration::{fit_per_class_temperature, CalibrationMap};
use rejopt_core::learner::learn_thresholds_detailed;
use rejopt_core::metrics::{decide_all, evaluate, EvalReport};
use rejopt_core::randomness::ViabilityMethod;
use rejopt_core::score_model::{
    align_mask, atomic_write, read_mask, read_scoreset, write_mask, write_scoreset, ScoreSet, ThresholdVector,
};
use rejopt_core::synthetic::{self, Partition, SyntheticSpec, PRESET_NAMES};
use serde::Serialize;

/// Errors caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(
    name = "rejopt",
    version,
    about = "Learn per-class reject thresholds for classifier scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/val/test score sets from a 2-D synthetic spec.
    Synth {
        /// Built-in preset name, or `<name>.json` in the preset directory.
        #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
        preset: Option<String>,
        /// Path to a synthetic spec JSON file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the seed from the preset or spec.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Directory searched for presets that are not built in.
        #[arg(long, env = "REJOPT_PRESET_DIR")]
        preset_dir: Option<PathBuf>,
    },
    /// Calibrate on a validation set and learn thresholds.
    Learn {
        #[arg(long)]
        val: PathBuf,
        #[arg(long, default_value = "0.05", value_parser = parse_delta)]
        delta: f64,
        #[arg(long, default_value = "bcdf", value_parser = parse_method)]
        method: ViabilityMethod,
        /// Skip per-class temperature scaling (all temperatures 1).
        #[arg(long)]
        no_calibration: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply thresholds to a score set and write an evaluation report.
    Eval {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        /// `id,ideal_reject` file; enables IDA.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        /// Per-class breakdown CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Scatter plot of selected/rejected points (needs x,y columns).
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        no_timestamp: bool,
    },
    /// Grid over significance levels and methods, with Base and Naive rows.
    Sweep {
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.5,0.75,0.95", value_parser = parse_delta)]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "bcdf", value_parser = parse_method)]
        methods: Vec<ViabilityMethod>,
        #[arg(long)]
        val_mask: Option<PathBuf>,
        #[arg(long)]
        test_mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_timestamp: bool,
    },
}

fn parse_delta(s: &str) -> std::result::Result<f64, String> {
    let d: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if d > 0.0 && d < 1.0 {
        Ok(d)
    } else {
        Err(format!("delta must lie in (0,1), got {d}"))
    }
}

fn parse_method(s: &str) -> std::result::Result<ViabilityMethod, String> {
    s.trim().parse().map_err(|e: rejopt_core::Error| e.to_string())
}

fn timestamp(disabled: bool) -> Option<u64> {
    (!disabled).then(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    })
}

fn load_set(path: &Path) -> Result<ScoreSet> {
    if !path.exists() {
        return Err(usage(format!("input file `{}` does not exist", path.display())));
    }
    read_scoreset(path).with_context(|| format!("reading {}", path.display()))
}

fn load_mask(path: &Path, set: &ScoreSet) -> Result<Vec<bool>> {
    if !path.exists() {
        return Err(usage(format!("mask file `{}` does not exist", path.display())));
    }
    let entries = read_mask(path).with_context(|| format!("reading {}", path.display()))?;
    align_mask(set, &entries).with_context(|| format!("aligning {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())?;
    Ok(())
}

fn resolve_spec(
    preset: Option<&str>,
    spec: Option<&Path>,
    seed: Option<u64>,
    preset_dir: Option<&Path>,
) -> Result<SyntheticSpec> {
    let mut spec = match (preset, spec) {
        (Some(name), _) => match synthetic::preset(name, 0) {
            Some(s) => s,
            None => {
                let file = preset_dir.map(|d| d.join(format!("{name}.json")));
                match file.filter(|f| f.is_file()) {
                    Some(f) => {
                        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
                        SyntheticSpec::from_json(&text).with_context(|| format!("parsing {}", f.display()))?
                    }
                    None => {
                        return Err(usage(format!(
                            "unknown preset `{name}`; available presets: {}",
                            PRESET_NAMES.join(", ")
                        )))
                    }
                }
            }
        },
        (None, Some(path)) => {
            if !path.exists() {
                return Err(usage(format!("spec file `{}` does not exist", path.display())));
            }
            let text = std::fs::read_to_string(path)?;
            SyntheticSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => return Err(usage("either --preset or --spec is required")),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_synth(spec: &SyntheticSpec, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("spec.json"), spec)?;
    for part in Partition::ALL {
        let generated = synthetic::generate_partition(spec, part)?;
        let path = out.join(format!("{}.csv", part.name()));
        write_scoreset(&generated.set, &path)?;
        let mut line = format!("{}: {} examples", path.display(), generated.set.len());
        if let Some(mask) = &generated.ideal_mask {
            let ids: Vec<&str> = generated.set.examples().iter().map(|e| e.id.as_str()).collect();
            let mask_path = out.join(format!("{}.mask.csv", part.name()));
            write_mask(&ids, mask, &mask_path)?;
            line.push_str(&format!(", {} ideally rejected", mask.iter().filter(|m| **m).count()));
        }
        println!("{line}");
    }
    Ok(())
}

fn cmd_learn(val: &Path, delta: f64, method: ViabilityMethod, no_calibration: bool, out: &Path) -> Result<()> {
    let set = load_set(val)?;
    let cal = if no_calibration {
        CalibrationMap::identity(set.class_count())
    } else {
        fit_per_class_temperature(&set)?
    };
    let outcome = learn_thresholds_detailed(&set, &cal, delta, method)?;
    outcome.thresholds.write(out)?;
    println!("method={method} delta={delta}");
    println!(
        "{:>5}  {:>12}  {:>10}  {:>7}  {:>7}  {:>6}",
        "class", "tau", "temp", "n", "k", "viable"
    );
    for (j, c) in outcome.per_class.iter().enumerate() {
        println!(
            "{:>5}  {:>12.6}  {:>10.4}  {:>7}  {:>7}  {:>6}",
            j,
            c.threshold,
            cal.temperatures()[j],
            c.tally.n,
            c.tally.k,
            c.viable
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    #[serde(flatten)]
    report: &'a EvalReport,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    test: &Path,
    thresholds: &Path,
    mask: Option<&Path>,
    report_path: &Path,
    csv: Option<&Path>,
    svg_path: Option<&Path>,
    no_timestamp: bool,
) -> Result<()> {
    let set = load_set(test)?;
    if !thresholds.exists() {
        return Err(usage(format!(
            "thresholds file `{}` does not exist",
            thresholds.display()
        )));
    }
    let tv = ThresholdVector::read(thresholds).with_context(|| format!("reading {}", thresholds.display()))?;
    if tv.class_count() != set.class_count() {
        bail!(
            "class-count mismatch: {} has {} classes, {} has {}",
            test.display(),
            set.class_count(),
            thresholds.display(),
            tv.class_count()
        );
    }
    if svg_path.is_some() && !set.has_coords() {
        bail!("--svg needs x,y coordinates, which {} does not have", test.display());
    }
    let mask = mask.map(|m| load_mask(m, &set)).transpose()?;
    let report = evaluate(&set, &tv, mask.as_deref())?;
    write_json(
        report_path,
        &EvalOutput {
            generated_at_unix: timestamp(no_timestamp),
            report: &report,
        },
    )?;
    if let Some(csv) = csv {
        atomic_write(csv, report.per_class_csv().as_bytes())?;
    }
    if let Some(svg_path) = svg_path {
        let decisions = decide_all(&set, &tv)?;
        atomic_write(svg_path, svg::scatter(&set, &decisions).as_bytes())?;
    }
    let pct = |v: Option<f64>| v.map_or("--".to_string(), |v| format!("{:.1}", 100.0 * v));
    println!(
        "SA {}  RA {}  coverage {:.1}{}",
        pct(report.select_accuracy),
        pct(report.reject_accuracy),
        100.0 * report.coverage,
        report.ida.map_or(String::new(), |i| format!("  IDA {:.1}", 100.0 * i))
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            preset,
            spec,
            seed,
            out,
            preset_dir,
        } => {
            let spec = resolve_spec(preset.as_deref(), spec.as_deref(), seed, preset_dir.as_deref())?;
            cmd_synth(&spec, &out)
        }
        Command::Learn {
            val,
            delta,
            method,
            no_calibration,
            out,
        } => cmd_learn(&val, delta, method, no_calibration, &out),
        Command::Eval {
            test,
            thresholds,
            mask,
            report,
            csv,
            svg,
            no_timestamp,
        } => cmd_eval(
            &test,
            &thresholds,
            mask.as_deref(),
            &report,
            csv.as_deref(),
            svg.as_deref(),
            no_timestamp,
        ),
        Command::Sweep {
            val,
            test,
            deltas,
            methods,
            val_mask,
            test_mask,
            out,
            no_timestamp,
        } => {
            if deltas.is_empty() {
                return Err(usage("--deltas needs at least one value"));
            }
            if methods.is_empty() {
                return Err(usage("--methods needs at least one method"));
            }
            let val_set = load_set(&val)?;
            let test_set = load_set(&test)?;
            if val_set.class_count() != test_set.class_count() {
                bail!(
                    "class-count mismatch: validation has {}, test has {}",
                    val_set.class_count(),
                    test_set.class_count()
                );
            }
            let val_mask = val_mask.map(|m| load_mask(&m, &val_set)).transpose()?;
            let test_mask = test_mask.map(|m| load_mask(&m, &test_set)).transpose()?;
            let table = sweep::run(
                &val_set,
                &test_set,
                val_mask.as_deref(),
                test_mask.as_deref(),
                &deltas,
                &methods,
            )?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            atomic_write(&out.join("sweep.csv"), table.to_csv().as_bytes())?;
            write_json(&out.join("sweep.json"), &table.to_json(timestamp(no_timestamp)))?;
            print!("{}", table.render());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
