//! Command-line front end. Artifacts go to `--out` (or stdout), a short
//! summary goes to stderr.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::divergence::{self, check_step_bound, schedule_trace, verify_accumulation, StepCheck, TraceSampling};
use crate::error::{Error, Result};
use crate::format;
use crate::ifs::{IfsModel, ValidationReport};
use crate::lq::compare_beta;
use crate::measure::{accumulation_estimate, local_dim_trace, local_dim_trace_symbolic};
use crate::moran::{self, MoranSpec, PackingDim};
use crate::spectrum::{divergence_dimensions, spectrum_table};

pub const THREADS_ENV: &str = "FRACTAL_SPECTRA_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "fractal-spectra", version, about = "Multifractal spectra of self-similar measures on the line")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Common {
    /// IFS model JSON
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output file (directory for `build`); stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Reserved; every computation is deterministic
    #[arg(long)]
    pub seedless: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the model invariants and the separation witness
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate q, β(q), α(q), β*(α(q))
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = -5.0, allow_hyphen_values = true)]
        q_min: f64,
        #[arg(long, default_value_t = 5.0, allow_hyphen_values = true)]
        q_max: f64,
        #[arg(long, default_value_t = 101)]
        steps: usize,
    },
    /// Dimensions of the points whose local dimensions accumulate on an interval
    Dims {
        #[command(flatten)]
        common: Common,
        /// `A` for a singleton or `A B`
        #[arg(long, num_args = 1..=2, required = true, allow_hyphen_values = true)]
        interval: Vec<f64>,
    },
    /// Local dimension trace D_r(x) along r = rho^n
    Trace {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true, conflicts_with = "digits")]
        x: Option<f64>,
        /// Coding of the point as a string of digits 1..=N
        #[arg(long)]
        digits: Option<String>,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        rho: f64,
        #[arg(long, default_value_t = 20)]
        n_max: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Build a digit sequence whose cylinder quotients accumulate on an interval
    Build {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 1..=2, required = true)]
        interval: Vec<f64>,
        #[arg(long, default_value_t = 6)]
        i_max: usize,
        #[arg(long, default_value_t = 50)]
        base_len: u128,
        #[arg(long, default_value_t = 0.5)]
        tail_fraction: f64,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Digits written to digits.txt (capped at the schedule length)
        #[arg(long, default_value_t = 1 << 16)]
        n_max: u128,
    },
    /// Packing dimension of a Moran structure (from --spec, or from a build schedule)
    Moran {
        #[command(flatten)]
        common: Common,
        /// Moran structure JSON
        #[arg(long, conflicts_with = "interval")]
        spec: Option<PathBuf>,
        #[arg(long, num_args = 1..=2)]
        interval: Option<Vec<f64>>,
        #[arg(long, default_value_t = 6)]
        i_max: usize,
        #[arg(long, default_value_t = 50)]
        base_len: u128,
        #[arg(long)]
        k_max: Option<u128>,
        #[arg(long)]
        window: Option<u128>,
        /// Sampling tail for structures too deep to scan level by level
        #[arg(long, default_value_t = 0.5)]
        tail_fraction: f64,
    },
    /// Packing estimates of the L^q spectrum against β(q)
    Lq {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        q_min: f64,
        #[arg(long, default_value_t = 3.0, allow_hyphen_values = true)]
        q_max: f64,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        rho: f64,
        #[arg(long, default_value_t = 3)]
        n_min: usize,
        #[arg(long, default_value_t = 10)]
        n_max: usize,
    },
}

/// Levels scanned densely by `moran` before switching to sampling.
const DENSE_LEVELS: u128 = 1 << 20;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidModel(_) | Error::Parse(_) => EXIT_MODEL,
        Error::Domain(_) | Error::Undefined(_) | Error::Malformed(_) => EXIT_DOMAIN,
        Error::Resource { .. } => EXIT_RESOURCE,
        Error::Io(_) => EXIT_OTHER,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_MODEL } else { EXIT_OK };
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Resource { enclosure: Some((lo, hi)), .. } = &e {
                eprintln!("best enclosure: [{}, {}]", format::fmt_g(*lo), format::fmt_g(*hi));
            }
            exit_code(&e)
        }
    }
}

fn configure_threads() {
    let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) else {
        return;
    };
    if n > 0 {
        // Only the first pool configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_model(common: &Common) -> Result<IfsModel<f64>> {
    let path = common
        .model
        .as_deref()
        .ok_or_else(|| Error::Malformed("--model is required".into()))?;
    IfsModel::from_json(&fs::read_to_string(path)?)
}

fn with_newline(text: &str) -> String {
    let mut t = text.to_owned();
    if !t.ends_with('\n') {
        t.push('\n');
    }
    t
}

fn write_stdout(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(with_newline(text).as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => fs::write(path, with_newline(text))?,
        None => write_stdout(text)?,
    }
    Ok(())
}

fn interval(v: &[f64]) -> (f64, f64) {
    (v[0], *v.last().expect("clap enforces one or two values"))
}

#[derive(Serialize)]
struct ValidateOut<'a> {
    valid: bool,
    #[serde(flatten)]
    report: &'a ValidationReport,
    hull: Option<[f64; 2]>,
    fingerprint: Option<String>,
}

#[derive(Serialize)]
struct BuildVerify {
    interval: [f64; 2],
    hull_distance: f64,
    pass: bool,
    tol: f64,
    tail_fraction: f64,
    rows_used: usize,
    tail_min: f64,
    tail_max: f64,
    step_bound: StepCheck<f64>,
    step_bound_holds: bool,
    blocks: usize,
    total_len: u128,
    digits_emitted: u128,
    fingerprint: String,
}

#[derive(Serialize)]
struct MoranOut<'a> {
    dim: f64,
    condition_ok: bool,
    approximate: bool,
    levels: u128,
    rows: &'a [moran::SkRow<f64>],
}

pub fn run(command: Command) -> Result<i32> {
    match command {
        Command::Validate { common } => {
            let path = common
                .model
                .as_deref()
                .ok_or_else(|| Error::Malformed("--model is required".into()))?;
            let text = fs::read_to_string(path)?;
            let model = match IfsModel::<f64>::from_json_unchecked(&text) {
                Ok(m) => m,
                Err(e @ Error::Parse(_)) => {
                    eprintln!("{e}");
                    return Ok(EXIT_MODEL);
                }
                Err(e) => return Err(e),
            };
            let report = model.validate();
            let valid = report.is_valid();
            let out = ValidateOut {
                valid,
                report: &report,
                hull: valid.then(|| [model.hull().lo, model.hull().hi]),
                fingerprint: valid.then(|| model.fingerprint()),
            };
            emit(&common, &format::to_json(&out))?;
            if valid {
                eprintln!("model valid ({} maps)", model.len());
                Ok(EXIT_OK)
            } else {
                eprintln!("model invalid: {report}");
                Ok(EXIT_MODEL)
            }
        }
        Command::Spectrum { common, q_min, q_max, steps } => {
            let model = load_model(&common)?;
            let table = spectrum_table(&model, q_min, q_max, steps)?;
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => table.to_csv(),
                Format::Json => table.to_json(),
            };
            emit(&common, &text)?;
            eprintln!("{} rows, model {}", table.rows.len(), table.fingerprint);
            Ok(EXIT_OK)
        }
        Command::Dims { common, interval: iv } => {
            let model = load_model(&common)?;
            let (a, b) = interval(&iv);
            let report = divergence_dimensions(&model, a, b)?;
            let text = match common.format.unwrap_or(Format::Json) {
                Format::Json => report.to_json(),
                Format::Csv => {
                    let cell = |v: Option<f64>| v.map_or(String::new(), format::fmt_g);
                    format::csv(
                        "a,b,classification,dim_P_equal,dim_P_subset,dim_H_equal,dim_H_subset,alpha_at_sup",
                        [vec![
                            format::fmt_g(a),
                            format::fmt_g(b),
                            format!("{:?}", report.classification).to_lowercase(),
                            cell(report.dim_P_equal),
                            cell(report.dim_P_subset),
                            cell(report.dim_H_equal),
                            cell(report.dim_H_subset),
                            cell(report.alpha_at_sup),
                        ]],
                    )
                }
            };
            emit(&common, &text)?;
            eprintln!(
                "[{}, {}]: {:?}, dim_P = {}, dim_H = {}",
                format::fmt_g(a),
                format::fmt_g(b),
                report.classification,
                report.dim_P_equal.map_or("-".into(), format::fmt_g),
                report.dim_H_equal.map_or("-".into(), format::fmt_g)
            );
            Ok(EXIT_OK)
        }
        Command::Trace { common, x, digits, rho, n_max, tol } => {
            let model = load_model(&common)?;
            let trace = match (x, digits) {
                (Some(x), None) => local_dim_trace(&model, x, rho, n_max, tol)?,
                (None, Some(d)) => {
                    let coding = d
                        .trim()
                        .chars()
                        .map(|c| c.to_digit(10).map(|v| v as usize))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| Error::Malformed(format!("digits {d:?} are not decimal")))?;
                    local_dim_trace_symbolic(&model, &coding, rho, n_max, tol)?
                }
                _ => return Err(Error::Malformed("give exactly one of --x, --digits".into())),
            };
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => trace.to_csv(),
                Format::Json => format::to_json(&trace),
            };
            emit(&common, &text)?;
            match accumulation_estimate(&trace, n_max.div_ceil(2)) {
                Ok((lo, hi)) => eprintln!("tail D range [{}, {}]", format::fmt_g(lo), format::fmt_g(hi)),
                Err(e) => eprintln!("tail: {e}"),
            }
            Ok(EXIT_OK)
        }
        Command::Build {
            common,
            interval: iv,
            i_max,
            base_len,
            tail_fraction,
            tol,
            n_max,
        } => {
            let model = load_model(&common)?;
            let (a, b) = interval(&iv);
            if !(tol > 0.0) {
                return Err(Error::Domain("--tol must be positive".into()));
            }
            let sched = divergence::schedule(&model, a, b, i_max, base_len)?;
            let trace = schedule_trace(&model, &sched, TraceSampling::default())?;
            let acc = verify_accumulation(&trace, a, b, tail_fraction, tol)?;
            let step = check_step_bound(&model, &trace);
            let n_digits = n_max.min(sched.total_len());
            let digits = divergence::emit_digits(&model, &sched, n_digits)?;
            let verify = BuildVerify {
                interval: [a, b],
                hull_distance: acc.hull_distance,
                pass: acc.pass,
                tol,
                tail_fraction,
                rows_used: acc.rows_used,
                tail_min: acc.tail_min,
                tail_max: acc.tail_max,
                step_bound: step,
                step_bound_holds: step.holds(),
                blocks: sched.blocks.len(),
                total_len: sched.total_len(),
                digits_emitted: n_digits,
                fingerprint: model.fingerprint(),
            };
            let verify_json = format::to_json(&verify);
            match &common.out {
                Some(dir) => {
                    fs::create_dir_all(dir)?;
                    write_in(dir, "schedule.json", &sched.to_json())?;
                    write_in(dir, "digits.txt", &divergence::digits_to_text(&digits, model.len()))?;
                    write_in(dir, "trace.csv", &trace.to_csv())?;
                    write_in(dir, "verify.json", &verify_json)?;
                }
                None => write_stdout(&verify_json)?,
            }
            eprintln!(
                "{} blocks, {} digits in total; tail Hausdorff distance {} ({}), step bound {}",
                sched.blocks.len(),
                sched.total_len(),
                format::fmt_g(acc.hull_distance),
                if acc.pass { "pass" } else { "FAIL" },
                if step.holds() { "holds" } else { "VIOLATED" }
            );
            Ok(EXIT_OK)
        }
        Command::Moran {
            common,
            spec,
            interval: iv,
            i_max,
            base_len,
            k_max,
            window,
            tail_fraction,
        } => {
            let structure: MoranSpec<f64> = match (&spec, &iv) {
                (Some(path), _) => MoranSpec::from_json(&fs::read_to_string(path)?)?,
                (None, Some(iv)) => {
                    let model = load_model(&common)?;
                    let (a, b) = interval(iv);
                    moran::from_schedule(&model, &divergence::schedule(&model, a, b, i_max, base_len)?)?
                }
                (None, None) => return Err(Error::Malformed("give --spec or --interval".into())),
            };
            let levels = structure.levels();
            let result: PackingDim<f64> = match k_max {
                None if levels > DENSE_LEVELS => moran::packing_dim_sampled(&structure, 1.01, tail_fraction)?,
                _ => {
                    let k = k_max.unwrap_or(levels);
                    let w = window.unwrap_or(k.div_ceil(2));
                    moran::packing_dim(&structure, k, w)?
                }
            };
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => result.s_sequence.to_csv(),
                Format::Json => format::to_json(&MoranOut {
                    dim: result.dim,
                    condition_ok: result.condition_ok,
                    approximate: structure.approximate,
                    levels,
                    rows: &result.s_sequence.rows,
                }),
            };
            emit(&common, &text)?;
            eprintln!(
                "packing dimension ≈ {} over {} levels; ratio_log trend {}{}",
                format::fmt_g(result.dim),
                levels,
                if result.condition_ok { "ok" } else { "not decreasing" },
                if structure.approximate { " (approximate structure)" } else { "" }
            );
            Ok(EXIT_OK)
        }
        Command::Lq {
            common,
            q_min,
            q_max,
            steps,
            rho,
            n_min,
            n_max,
        } => {
            let model = load_model(&common)?;
            if steps < 1 || (steps == 1 && q_min != q_max) || q_min > q_max {
                return Err(Error::Domain("q grid needs q_min ≤ q_max and steps ≥ 1".into()));
            }
            let grid: Vec<f64> = (0..steps)
                .map(|k| if steps == 1 { q_min } else { q_min + (q_max - q_min) * k as f64 / (steps - 1) as f64 })
                .collect();
            let cmp = compare_beta(&model, &grid, n_min, n_max, rho)?;
            let text = match common.format.unwrap_or(Format::Csv) {
                Format::Csv => cmp.to_csv(),
                Format::Json => format::to_json(&cmp),
            };
            emit(&common, &text)?;
            eprintln!("max |tau_hat - beta| = {}", format::fmt_g(cmp.max_deviation));
            Ok(EXIT_OK)
        }
    }
}

fn write_in(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::write(dir.join(name), with_newline(text))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use tempfile::TempDir;

    use super::*;
    use crate::divergence::BlockSchedule;
    use crate::spectrum::{DimensionReport, SpectrumTable};

    const CANTOR: &str = r#"{"maps":[{"ratio":0.3333333333333333,"offset":0},{"ratio":0.3333333333333333,"offset":0.6666666666666666}],"probs":[0.3,0.7]}"#;

    fn workspace() -> (TempDir, String) {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("cantor.json");
        fs::write(&model, CANTOR).unwrap();
        let model = model.to_str().unwrap().to_owned();
        (dir, model)
    }

    fn call(args: &[&str]) -> i32 {
        main_with_args(std::iter::once("fractal-spectra").chain(args.iter().copied()))
    }

    fn out_path(dir: &Path, name: &str) -> String {
        dir.join(name).to_str().unwrap().to_owned()
    }

    #[test]
    fn spectrum_rows_and_beta_at_one() {
        let (dir, model) = workspace();
        let out = out_path(dir.path(), "spectrum.csv");
        let code = call(&["spectrum", "--model", &model, "--q-min", "-2", "--q-max", "2", "--steps", "41", "--out", &out]);
        assert_eq!(code, EXIT_OK);
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("q,"));
        let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 41);
        let at_one = rows.iter().find(|r| (r[0] - 1.0).abs() < 1e-12).unwrap();
        assert!(at_one[1].abs() < 1e-10);
    }

    #[test]
    fn spectrum_json_reparses() {
        let (dir, model) = workspace();
        let out = out_path(dir.path(), "spectrum.json");
        assert_eq!(call(&["spectrum", "--model", &model, "--format", "json", "--steps", "11", "--out", &out]), EXIT_OK);
        let table: SpectrumTable<f64> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(table.rows.len(), 11);
    }

    #[test]
    fn dims_outside_range_is_empty() {
        let (dir, model) = workspace();
        let out = out_path(dir.path(), "dims.json");
        assert_eq!(call(&["dims", "--model", &model, "--interval", "0.1", "0.2", "--out", &out]), EXIT_OK);
        let text = fs::read_to_string(&out).unwrap();
        let report: DimensionReport<f64> = serde_json::from_str(&text).unwrap();
        assert!(text.contains(r#""classification":"empty""#), "{text}");
        assert!(report.dim_P_equal.is_none());
    }

    #[test]
    fn build_writes_passing_artifacts() {
        let (dir, model) = workspace();
        let out = out_path(dir.path(), "build");
        let args = ["build", "--model", &model, "--interval", "0.4", "0.6", "--i-max", "6", "--base-len", "50", "--out", &out];
        assert_eq!(call(&args), EXIT_OK);
        let read = |name: &str| fs::read_to_string(Path::new(&out).join(name)).unwrap();
        let text = read("verify.json");
        let verify: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(verify["pass"], true);
        assert_eq!(verify["step_bound_holds"], true);
        let sched = BlockSchedule::<f64>::from_json(&read("schedule.json")).unwrap();
        assert!(text.contains(&format!(r#""total_len":{}"#, sched.total_len())));
        assert!(read("trace.csv").starts_with("n,ln_p,ln_r,T\n"));
        assert!(read("digits.txt").trim_end().chars().all(|c| c == '1' || c == '2'));
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let (dir, model) = workspace();
        let runs: Vec<Vec<Vec<u8>>> = (0..2)
            .map(|k| {
                let out = out_path(dir.path(), &format!("run{k}"));
                let args = ["build", "--model", &model, "--interval", "0.45", "0.55", "--i-max", "4", "--base-len", "20", "--out", &out];
                assert_eq!(call(&args), EXIT_OK);
                ["schedule.json", "digits.txt", "trace.csv", "verify.json"]
                    .iter()
                    .map(|f| fs::read(Path::new(&out).join(f)).unwrap())
                    .collect()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn moran_spec_round_trip() {
        let (dir, _) = workspace();
        let spec = dir.path().join("spec.json");
        fs::write(&spec, r#"{"levels":[[0.5,0.25]],"repeat":[{"ratios":[0.3333333333333333,0.3333333333333333],"times":5}]}"#).unwrap();
        let out = out_path(dir.path(), "moran.json");
        let code = call(&["moran", "--spec", spec.to_str().unwrap(), "--format", "json", "--out", &out]);
        assert_eq!(code, EXIT_OK);
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(v["levels"], 6);
        assert_eq!(v["rows"].as_array().unwrap().len(), 6);
        let parsed = MoranSpec::<f64>::from_json(&fs::read_to_string(&spec).unwrap()).unwrap();
        assert_eq!(MoranSpec::<f64>::from_json(&parsed.to_json()).unwrap().to_json(), parsed.to_json());
    }

    #[test]
    fn exit_codes() {
        let (dir, model) = workspace();
        let bad = dir.path().join("bad.json");
        fs::write(&bad, r#"{"maps":[{"ratio":0.3333333333333333,"offset":0},{"ratio":0.3333333333333333,"offset":0.6666666666666666}],"probs":[0.5,0.6]}"#).unwrap();
        let bad = bad.to_str().unwrap();
        let sink = out_path(dir.path(), "sink");
        assert_eq!(call(&["validate", "--model", &model, "--out", &sink]), EXIT_OK);
        assert_eq!(call(&["validate", "--model", bad, "--out", &sink]), EXIT_MODEL);
        assert_eq!(call(&["spectrum", "--model", bad, "--out", &sink]), EXIT_MODEL);
        assert_eq!(call(&["spectrum", "--bogus"]), EXIT_MODEL);
        assert_eq!(call(&["build", "--model", &model, "--interval", "0.1", "0.2", "--out", &sink]), EXIT_DOMAIN);
        assert_eq!(call(&["build", "--model", &model, "--interval", "0.4", "0.6", "--i-max", "121", "--out", &sink]), EXIT_RESOURCE);
        assert_eq!(call(&["spectrum", "--model", &out_path(dir.path(), "missing.json")]), EXIT_OTHER);
    }
}
