//! Command-line front end.

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use triplet_sense::coherent::CoherenceTrace;
use triplet_sense::inference::{invert_field, zfs_from_peaks};
use triplet_sense::spin::{transition_table, Pair};

use crate::config::{RunConfig, SequenceKind};
use crate::dataset::{Dataset, DatasetKind};
use crate::error::{exit, Result, WorkbenchError};
use crate::fit::{require_converged, run_fit, run_larmor_fit, FitOptions, FitOutcome};
use crate::generate::generate;
use crate::io::OutputDir;
use crate::reproduce::{reproduce, valid_ids, FigureId};

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "TRIPLET_SENSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "triplet-sense", version, about = "Simulate, fit and invert molecular triplet sensor data")]
pub struct Cli {
    /// Print nothing on success.
    #[arg(long, global = true, conflicts_with = "json")]
    pub quiet: bool,
    /// Print one JSON document instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named starting configuration (fig1d, fig1e, ...), instead of --config.
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    /// RNG seed for noise; overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl Common {
    fn load_config(&self) -> Result<RunConfig> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::load(p),
            (None, Some(name)) => RunConfig::from_json(&json!({ "preset": name }).to_string(), "--preset"),
            (None, None) => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateTarget {
    /// cw-ODMR contrast over the configured grid.
    Odmr,
    /// Two-tone spectrum; needs spectrum.hold_mhz.
    DoubleResonance,
    /// Hahn or CPMG coherence decay.
    Coherence,
    /// Hahn-echo envelope with the configured nuclei.
    Eseem,
    Rabi,
    /// Decoupled T2 against pulse count.
    T2Sweep,
    /// Transition table at the configured field.
    Transitions,
}

#[derive(Debug, Subcommand)]
pub enum SenseCommand {
    /// Field magnitude along a known direction from a line shift.
    InvertField {
        #[arg(long, allow_hyphen_values = true)]
        shift_mhz: f64,
        #[arg(long, default_value = "xz")]
        pair: String,
        /// Lab-frame direction as x,y,z; normalized before use.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        direction: Vec<f64>,
        #[arg(long, default_value_t = 5.0)]
        bmax_mt: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// D and E from zero-field line positions.
    Zfs {
        #[arg(long, value_delimiter = ',', required = true)]
        peaks: Vec<f64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Noiseless forward models.
    Simulate {
        target: SimulateTarget,
        #[command(flatten)]
        common: Common,
    },
    /// Synthetic dataset with seeded noise (spectrum, trace, polarization,
    /// cpmg-points, orientation-points).
    Generate {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a dataset; `larmor` takes several ESEEM traces.
    Fit {
        kind: String,
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Number of Lorentzian lines for spectrum fits.
        #[arg(long)]
        peaks: Option<usize>,
        /// Field magnitude per input trace for larmor fits.
        #[arg(long, value_delimiter = ',')]
        fields_mt: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Sensing inversions.
    Sense {
        #[command(subcommand)]
        command: SenseCommand,
    },
    /// Generate-and-fit pipeline for a figure id, or `all`.
    Reproduce {
        id: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

/// Result of one command: text lines, a JSON summary and an exit code.
struct Outcome {
    lines: Vec<String>,
    json: Value,
    code: u8,
}

impl Outcome {
    fn ok(lines: Vec<String>, json: Value) -> Self {
        Self {
            lines,
            json,
            code: exit::OK,
        }
    }
}

fn stem_of(path: &Path) -> String {
    path.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned())
}

fn paths_json(out: &OutputDir) -> Value {
    json!(out.written().iter().map(|p| p.display().to_string()).collect::<Vec<_>>())
}

fn simulate(target: SimulateTarget, common: &Common) -> Result<Outcome> {
    let mut config = common.load_config()?;
    config.noise = Default::default();
    let mut out = OutputDir::new(&common.out);
    let (kind, stem) = match target {
        SimulateTarget::Transitions => {
            let table = transition_table(
                &config.model.to_model()?,
                &config.field()?,
                &Vector3::from(config.drive.drive_axis),
            )?;
            let lines = table
                .iter()
                .map(|t| format!("T{} {} MHz amplitude {}", t.pair.label(), t.frequency, t.amplitude))
                .collect();
            return Ok(Outcome::ok(lines, json!({ "transitions": table })));
        }
        SimulateTarget::Odmr => {
            config.spectrum.hold_mhz = None;
            (DatasetKind::Spectrum, "odmr")
        }
        SimulateTarget::DoubleResonance => {
            if config.spectrum.hold_mhz.is_none() {
                return Err(WorkbenchError::config("config", "double resonance needs spectrum.hold_mhz"));
            }
            (DatasetKind::Spectrum, "double_resonance")
        }
        SimulateTarget::Coherence => {
            if !matches!(config.trace.sequence, SequenceKind::Hahn | SequenceKind::Cpmg) {
                config.trace.sequence = SequenceKind::Hahn;
            }
            (DatasetKind::Trace, "coherence")
        }
        SimulateTarget::Eseem => {
            config.trace.sequence = SequenceKind::Eseem;
            (DatasetKind::Trace, "eseem")
        }
        SimulateTarget::Rabi => {
            config.trace.sequence = SequenceKind::Rabi;
            (DatasetKind::Trace, "rabi")
        }
        SimulateTarget::T2Sweep => (DatasetKind::CpmgPoints, "t2_sweep"),
    };
    let d = generate(kind, &config, None)?;
    let path = d.save(&mut out, &format!("simulate_{stem}"))?;
    Ok(Outcome::ok(
        vec![format!("wrote {} ({} rows)", path.display(), d.rows())],
        json!({ "kind": kind.name(), "rows": d.rows(), "files": paths_json(&out) }),
    ))
}

fn generate_cmd(kind: &str, common: &Common) -> Result<Outcome> {
    let kind: DatasetKind = kind.parse()?;
    let config = common.load_config()?;
    let d = generate(kind, &config, common.seed)?;
    let mut out = OutputDir::new(&common.out);
    let stem = config.output_stem.clone().unwrap_or_else(|| kind.name().replace('-', "_"));
    let path = d.save(&mut out, &stem)?;
    Ok(Outcome::ok(
        vec![format!("wrote {} ({} rows)", path.display(), d.rows())],
        json!({ "kind": kind.name(), "rows": d.rows(), "seed": d.provenance.seed, "files": paths_json(&out) }),
    ))
}

fn save_fit(outcome: &FitOutcome, stem: &str, out: &mut OutputDir) -> Result<()> {
    out.write_json(&format!("{stem}_fit.json"), &outcome.report)?;
    out.write(&format!("{stem}_overlay.csv"), outcome.overlay.to_csv().as_bytes())?;
    let log_x = outcome.report.kind == "cpmg-points";
    let svg = outcome.overlay.plot(&format!("{} fit", outcome.report.kind), log_x).to_svg();
    out.write(&format!("{stem}_overlay.svg"), svg.as_bytes())?;
    Ok(())
}

/// Field magnitude recorded in a trace's provenance.
fn provenance_field(d: &Dataset) -> Option<f64> {
    let f = d.provenance.config.get("field_mt")?.as_array()?;
    let v: Vec<f64> = f.iter().filter_map(Value::as_f64).collect();
    (v.len() == 3).then(|| Vector3::new(v[0], v[1], v[2]).norm())
}

fn fit_cmd(kind: &str, inputs: &[PathBuf], peaks: Option<usize>, fields: &[f64], common: &Common) -> Result<Outcome> {
    let mut out = OutputDir::new(&common.out);
    let outcome = if kind == "larmor" {
        if !fields.is_empty() && fields.len() != inputs.len() {
            return Err(WorkbenchError::Usage(format!(
                "{} --fields-mt values for {} inputs",
                fields.len(),
                inputs.len()
            )));
        }
        let mut traces: Vec<(f64, CoherenceTrace)> = Vec::new();
        for (i, path) in inputs.iter().enumerate() {
            let d = Dataset::load(DatasetKind::Trace, path)?;
            let b = match fields.get(i) {
                Some(b) => *b,
                None => provenance_field(&d).ok_or_else(|| {
                    WorkbenchError::Usage(format!("no field recorded for {}; pass --fields-mt", path.display()))
                })?,
            };
            traces.push((b, d.to_trace()?));
        }
        let o = run_larmor_fit(&traces)?;
        save_fit(&o, "larmor", &mut out)?;
        o
    } else {
        let kind: DatasetKind = kind.parse()?;
        let [input] = inputs else {
            return Err(WorkbenchError::Usage(format!("{kind} fits take exactly one --input")));
        };
        let d = Dataset::load(kind, input)?;
        let model = match (&common.config, &common.preset) {
            (None, None) => d
                .provenance
                .config
                .get("model")
                .and_then(|m| serde_json::from_value(m.clone()).ok())
                .unwrap_or_default(),
            _ => common.load_config()?.model,
        };
        let o = run_fit(&d, &FitOptions { peaks, model })?;
        save_fit(&o, &stem_of(input), &mut out)?;
        o
    };
    let mut lines: Vec<String> = outcome
        .report
        .parameters
        .iter()
        .chain(&outcome.report.derived)
        .map(|p| match p.std_error {
            Some(e) => format!("{} = {} +/- {}", p.name, p.value, e),
            None => format!("{} = {}", p.name, p.value),
        })
        .collect();
    lines.extend(outcome.report.warnings.iter().map(|w| format!("warning: {w}")));
    let summary = json!({ "report": outcome.report, "files": paths_json(&out) });
    require_converged(&outcome)?;
    Ok(Outcome::ok(lines, summary))
}

fn sense_cmd(cmd: &SenseCommand) -> Result<Outcome> {
    match cmd {
        SenseCommand::InvertField {
            shift_mhz,
            pair,
            direction,
            bmax_mt,
            config,
        } => {
            let pair: Pair = pair.parse().map_err(|e: triplet_sense::Error| WorkbenchError::Usage(e.to_string()))?;
            let model = match config {
                Some(p) => RunConfig::load(p)?.model.to_model()?,
                None => RunConfig::default().model.to_model()?,
            };
            let [x, y, z] = direction[..] else {
                return Err(WorkbenchError::Usage(format!(
                    "--direction takes x,y,z, got {} values",
                    direction.len()
                )));
            };
            let dir = Vector3::new(x, y, z)
                .try_normalize(1e-12)
                .ok_or_else(|| WorkbenchError::Usage("--direction must be a non-zero vector".into()))?;
            let inv = invert_field(*shift_mhz, pair, &model, &dir, *bmax_mt)?;
            Ok(Outcome::ok(
                vec![format!("|B| = {} mT (model shift {} MHz)", inv.magnitude_mt, inv.model_shift_mhz)],
                json!(inv),
            ))
        }
        SenseCommand::Zfs { peaks } => {
            let z = zfs_from_peaks(peaks, None)?;
            Ok(Outcome::ok(
                vec![
                    format!("D = {} MHz", z.zfs.d),
                    format!("E = {} MHz", z.zfs.e),
                    format!("line-sum residual = {} MHz", z.consistency_residual),
                ],
                json!(z),
            ))
        }
    }
}

fn reproduce_cmd(id: &str, seed: u64, out_dir: &Path) -> Result<Outcome> {
    let ids: Vec<FigureId> = if id == "all" {
        FigureId::ALL.to_vec()
    } else {
        vec![id.parse().map_err(|_| {
            WorkbenchError::Usage(format!("unknown figure id '{id}' (valid: {}, all)", valid_ids()))
        })?]
    };
    let mut out = OutputDir::new(out_dir);
    let mut lines = Vec::new();
    let mut reports = Vec::new();
    let mut all_pass = true;
    for id in ids {
        let r = reproduce(id, seed);
        r.save(&mut out)?;
        lines.extend(r.checks.iter().map(|c| format!("{id} {c}")));
        lines.push(format!("{} {id}: {}", if r.pass { "PASS" } else { "FAIL" }, r.summary));
        all_pass &= r.pass;
        reports.push(r);
    }
    Ok(Outcome {
        lines,
        json: json!({ "pass": all_pass, "figures": reports, "files": paths_json(&out) }),
        code: if all_pass { exit::OK } else { exit::CHECK_FAILED },
    })
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| WorkbenchError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    #[cfg(feature = "parallel")]
    {
        // a pool configured earlier in this process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    configure_threads()?;
    match &cli.command {
        Command::Simulate { target, common } => simulate(*target, common),
        Command::Generate { kind, common } => generate_cmd(kind, common),
        Command::Fit {
            kind,
            input,
            peaks,
            fields_mt,
            common,
        } => fit_cmd(kind, input, *peaks, fields_mt, common),
        Command::Sense { command } => sense_cmd(command),
        Command::Reproduce { id, seed, out } => reproduce_cmd(id, *seed, out),
    }
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code() as u8;
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
            } else {
                let _ = write!(stdout, "{text}");
            }
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(o) => {
            if cli.json {
                let _ = writeln!(stdout, "{}", json!({ "status": "ok", "exit_code": o.code, "result": o.json }));
            } else if !cli.quiet || o.code != exit::OK {
                for l in &o.lines {
                    let _ = writeln!(stdout, "{l}");
                }
            }
            o.code
        }
        Err(e) => {
            let code = e.exit_code();
            if cli.json {
                let _ = writeln!(stdout, "{}", json!({ "status": "error", "exit_code": code, "message": e.to_string() }));
            } else {
                let _ = writeln!(stderr, "error: {e}");
            }
            code
        }
    }
}
