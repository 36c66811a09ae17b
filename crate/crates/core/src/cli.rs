//! Command-line front end: `run`, `compare`, `ablate` and `replay`.
//!
//! Every flag can also be set through an environment variable with the
//! `DOSGUARD_` prefix (`DOSGUARD_SCENARIO`, `DOSGUARD_POLICY`, `DOSGUARD_SEED`,
//! `DOSGUARD_OUT`, `DOSGUARD_DISABLE`, `DOSGUARD_LOG`). Exit codes: 0 on
//! success, 1 for invalid input, 2 when a run fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::engine::{run_policy, Ablation, ExecutionLog, Policy, RunOutcome};
use crate::error::{Error, Result};
use crate::metrics::{write_csv, MetricsReport};
use crate::scenario::ScenarioConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "dosguard",
    version,
    about = "Simulate and evaluate defenses against resource-consumption attacks on token-generation services"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario under one policy.
    Run(RunArgs),
    /// Run OURS, FCFS and RR on the same seed and report ratios.
    Compare(CommonArgs),
    /// Rerun OURS with components disabled and compare with the full scheme.
    Ablate(AblateArgs),
    /// Recompute metrics from an execution log.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file, or `builtin:<name>` (default-attack, benign-only, high-attack-ratio).
    #[arg(long, env = "DOSGUARD_SCENARIO")]
    pub scenario: String,
    /// Overrides the scenario seed.
    #[arg(long, env = "DOSGUARD_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "DOSGUARD_OUT", default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// ours, fcfs or rr.
    #[arg(long, env = "DOSGUARD_POLICY", default_value = "ours")]
    pub policy: String,
    /// Components to disable in OURS (polling, suppression), comma separated.
    #[arg(long, env = "DOSGUARD_DISABLE", value_delimiter = ',')]
    pub disable: Vec<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Components to disable (polling, suppression), comma separated.
    #[arg(long, env = "DOSGUARD_DISABLE", value_delimiter = ',', required = true)]
    pub disable: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// JSONL execution log written by `run`, `compare` or `ablate`.
    #[arg(long, env = "DOSGUARD_LOG")]
    pub log: PathBuf,
    #[arg(long, env = "DOSGUARD_OUT", default_value = "out")]
    pub out: PathBuf,
}

pub fn load_scenario(spec: &str, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut s = match spec.strip_prefix("builtin:") {
        Some(name) => ScenarioConfig::builtin(name).ok_or_else(|| {
            Error::validation(
                "",
                format!(
                    "unknown builtin scenario `{name}` (expected one of {})",
                    ScenarioConfig::BUILTIN_NAMES.join(", ")
                ),
            )
        })?,
        None => ScenarioConfig::load(Path::new(spec))?,
    };
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn report(s: &ScenarioConfig, out: &RunOutcome) -> Result<MetricsReport> {
    MetricsReport::from_log(&s.name, &out.label, s.seed, &out.log)
}

fn csv_bytes(reports: &[MetricsReport]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(buf)
}

/// Writes all files only after every one of them has been produced.
fn write_outputs(dir: &Path, files: Vec<(String, Vec<u8>)>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, dir.join(name))?;
    }
    Ok(())
}

fn fmt_rate(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn summarize(w: &mut dyn Write, r: &MetricsReport, out: Option<&RunOutcome>) -> Result<()> {
    let s = &r.service;
    writeln!(
        w,
        "{:<32} TT {:>9.2} s  OT {:>7.2}/min  BUT {:>7.2}/min  served {} (benign {}, attack {})  expired {}",
        r.policy, s.tt_seconds, s.ot_per_min, s.but_per_min, s.completed, s.benign_completed, r.attack_completed, r.expired
    )?;
    let d = &r.detection;
    writeln!(
        w,
        "{:<32} tp {} fp {} tn {} fn {}  precision {}  recall {}  f1 {}",
        "",
        d.tp,
        d.fp,
        d.tn,
        d.fn_,
        fmt_rate(d.precision),
        fmt_rate(d.recall),
        fmt_rate(d.f1)
    )?;
    if let Some(o) = out {
        writeln!(
            w,
            "{:<32} round overhead mean {:?}, max {:?} over {} rounds",
            "",
            o.overhead.mean(),
            o.overhead.max,
            o.overhead.rounds
        )?;
    }
    Ok(())
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::NAN
    } else {
        a / b
    }
}

pub fn execute(cli: Cli, w: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let policy: Policy = args.policy.parse()?;
            let ablation = Ablation::parse_list(&args.disable)?;
            let s = load_scenario(&args.common.scenario, args.common.seed)?;
            let out = run_policy(&s, policy, ablation)?;
            let r = report(&s, &out)?;
            writeln!(w, "scenario {}  seed {}", s.name, s.seed)?;
            summarize(w, &r, Some(&out))?;
            write_outputs(
                &args.common.out,
                vec![
                    ("report.csv".into(), csv_bytes(&[r])?),
                    (
                        "execution_log.jsonl".into(),
                        out.log.to_jsonl()?.into_bytes(),
                    ),
                    (
                        "classifier_state.json".into(),
                        out.classifier.to_json()?.into_bytes(),
                    ),
                ],
            )
        }
        Command::Compare(args) => {
            let s = load_scenario(&args.scenario, args.seed)?;
            let mut reports = Vec::new();
            let mut files = Vec::new();
            writeln!(w, "scenario {}  seed {}", s.name, s.seed)?;
            for p in Policy::ALL {
                let out = run_policy(&s, p, Ablation::NONE)?;
                let r = report(&s, &out)?;
                summarize(w, &r, Some(&out))?;
                files.push((
                    format!("execution_log_{}.jsonl", p.name()),
                    out.log.to_jsonl()?.into_bytes(),
                ));
                reports.push(r);
            }
            let but = |i: usize| reports[i].service.but_per_min;
            let tt = |i: usize| reports[i].service.tt_seconds;
            let (o_rr, o_fcfs, tt_of) = (
                ratio(but(0), but(2)),
                ratio(but(0), but(1)),
                ratio(tt(0), tt(1)),
            );
            writeln!(
                w,
                "BUT ours/rr {o_rr:.3}  BUT ours/fcfs {o_fcfs:.3}  TT ours/fcfs {tt_of:.3}"
            )?;
            let mut ratios = csv::Writer::from_writer(Vec::new());
            ratios.write_record([
                "scenario",
                "seed",
                "but_ours_over_rr",
                "but_ours_over_fcfs",
                "tt_ours_over_fcfs",
            ])?;
            ratios.write_record([
                s.name.clone(),
                s.seed.to_string(),
                o_rr.to_string(),
                o_fcfs.to_string(),
                tt_of.to_string(),
            ])?;
            let ratios = ratios.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            files.push(("report.csv".into(), csv_bytes(&reports)?));
            files.push(("ratios.csv".into(), ratios));
            write_outputs(&args.out, files)
        }
        Command::Ablate(args) => {
            let ablation = Ablation::parse_list(&args.disable)?;
            let s = load_scenario(&args.common.scenario, args.common.seed)?;
            let full = run_policy(&s, Policy::Ours, Ablation::NONE)?;
            let cut = run_policy(&s, Policy::Ours, ablation)?;
            let (rf, rc) = (report(&s, &full)?, report(&s, &cut)?);
            writeln!(w, "scenario {}  seed {}", s.name, s.seed)?;
            summarize(w, &rf, Some(&full))?;
            summarize(w, &rc, Some(&cut))?;
            let but_change = ratio(rc.service.but_per_min, rf.service.but_per_min) - 1.0;
            let tt_change = ratio(rc.service.tt_seconds, rf.service.tt_seconds) - 1.0;
            writeln!(
                w,
                "BUT change {:+.1}%  TT change {:+.1}%",
                but_change * 100.0,
                tt_change * 100.0
            )?;
            let mut table = csv::Writer::from_writer(Vec::new());
            table.write_record([
                "scenario",
                "seed",
                "disabled",
                "but_full",
                "but_ablated",
                "but_change",
                "tt_full",
                "tt_ablated",
                "tt_change",
            ])?;
            table.write_record([
                s.name.clone(),
                s.seed.to_string(),
                cut.label.clone(),
                rf.service.but_per_min.to_string(),
                rc.service.but_per_min.to_string(),
                but_change.to_string(),
                rf.service.tt_seconds.to_string(),
                rc.service.tt_seconds.to_string(),
                tt_change.to_string(),
            ])?;
            let table = table.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            write_outputs(
                &args.common.out,
                vec![
                    ("report.csv".into(), csv_bytes(&[rf, rc])?),
                    ("ablation.csv".into(), table),
                    (
                        format!("execution_log_{}.jsonl", full.label),
                        full.log.to_jsonl()?.into_bytes(),
                    ),
                    (
                        format!("execution_log_{}.jsonl", cut.label),
                        cut.log.to_jsonl()?.into_bytes(),
                    ),
                ],
            )
        }
        Command::Replay(args) => {
            let file = std::fs::File::open(&args.log).map_err(|e| {
                Error::validation("", format!("cannot read {}: {e}", args.log.display()))
            })?;
            let log = ExecutionLog::read_jsonl(std::io::BufReader::new(file))?;
            let name = args
                .log
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let r = MetricsReport::from_log(&name, "replay", 0, &log)?;
            summarize(w, &r, None)?;
            write_outputs(&args.out, vec![("report.csv".into(), csv_bytes(&[r])?)])
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{}", e.render());
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
