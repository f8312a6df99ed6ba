//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on any validation or I/O error, 2 when an
//! audit finds an inconsistency between the checkers.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    chsh, correlation_curve, half_open_grid, linspace, open_grid, optimal_chsh_grid, region_map, write_curve_csv,
};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::sampling::{run_experiment, write_events_csv, RunConfig, SettingPolicy, SettingsGrid};
use crate::tables::{
    audit_implications, audit_z_free, build_table_from_run, AuditStatus, LambdaPartition, ModelTraits, Var,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_INCONSISTENT: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "singlet-lab", version, about = "Hidden-variable singlet laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write simulated event records.
    Simulate(Opts),
    /// Estimate E(ω) over an ω grid.
    Correlate(Opts),
    /// Estimate the CHSH quantity on a 2×2 grid.
    Chsh(Opts),
    /// Compare the analytic flip threshold with direct model evaluation.
    RegionMap(Opts),
    /// Run every constraint checker on a simulated table.
    Audit(Opts),
    /// Write the simulated joint table.
    TableExport(Opts),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct Opts {
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// gr, bell, qm or localdet:<file.json>
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Angle between the two settings, e.g. `3pi/4`.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<String>,
    /// `start:end:count` (inclusive) or a comma-separated list.
    #[arg(long)]
    omega_grid: Option<String>,
    #[arg(long)]
    theta_grid: Option<String>,
    /// JSON settings grid: `{"a":[{"label":..,"dir":[x,y,z]}],"b":[..]}`.
    #[arg(long)]
    grid_file: Option<PathBuf>,
    /// Output path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Drop λ from outputs and audit only the λ-free checker.
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    hide_lambda: bool,
    #[arg(long)]
    threads: Option<usize>,
    /// region-map only: also write an SVG heatmap here.
    #[arg(long)]
    svg: Option<PathBuf>,
}

impl Opts {
    fn merged_with_config(self) -> Result<Opts> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Opts = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        Ok(Opts {
            config: self.config,
            model: self.model.or(file.model),
            samples: self.samples.or(file.samples),
            seed: self.seed.or(file.seed),
            omega: self.omega.or(file.omega),
            omega_grid: self.omega_grid.or(file.omega_grid),
            theta_grid: self.theta_grid.or(file.theta_grid),
            grid_file: self.grid_file.or(file.grid_file),
            out: self.out.or(file.out),
            format: self.format.or(file.format),
            hide_lambda: self.hide_lambda || file.hide_lambda,
            threads: self.threads.or(file.threads),
            svg: self.svg.or(file.svg),
        })
    }

    fn model(&self) -> Result<Model> {
        Model::parse(self.model.as_deref().unwrap_or("gr"))
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn samples(&self, default: u64) -> Result<u64> {
        match self.samples.unwrap_or(default) {
            0 => Err(Error::Config("--samples must be at least 1".into())),
            n => Ok(n),
        }
    }

    fn grid_or(&self, default: impl FnOnce() -> Result<SettingsGrid>) -> Result<SettingsGrid> {
        match &self.grid_file {
            Some(p) => SettingsGrid::from_json_file(p)
                .map_err(|e| Error::Config(format!("cannot load grid {}: {e}", p.display()))),
            None => default(),
        }
    }
}

/// Parses angles such as `0`, `1.25`, `pi`, `-pi/4`, `3pi/4`, `0.5*pi`, `1/3`.
pub fn parse_angle(text: &str) -> Result<f64> {
    let bad = || Error::Config(format!("cannot parse angle '{text}'"));
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let s = s.to_ascii_lowercase();
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(&s)),
    };
    let (numer, denom) = match body.split_once('/') {
        Some((n, d)) => (n, Some(d.parse::<f64>().map_err(|_| bad())?)),
        None => (body, None),
    };
    let value = match numer.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = if coef.is_empty() { 1.0 } else { coef.parse::<f64>().map_err(|_| bad())? };
            c * PI
        }
        None => numer.parse::<f64>().map_err(|_| bad())?,
    };
    let value = sign * value / denom.unwrap_or(1.0);
    if !value.is_finite() {
        return Err(bad());
    }
    Ok(value)
}

/// `start:end:count` (inclusive linspace) or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, end, count] => {
            let n: usize =
                count.trim().parse().map_err(|_| Error::Config(format!("bad point count in grid '{text}'")))?;
            if n == 0 {
                return Err(Error::Config(format!("grid '{text}' has no points")));
            }
            Ok(linspace(parse_angle(start)?, parse_angle(end)?, n))
        }
        [_] => text.split(',').map(parse_angle).collect(),
        _ => Err(Error::Config(format!("cannot parse grid '{text}'"))),
    }
}

enum Sink {
    Stdout(Box<dyn Write + Send>),
    File(BufWriter<File>),
}

impl Sink {
    fn open(out: Option<&Path>, stdout: Box<dyn Write + Send>) -> Result<Sink> {
        match out {
            Some(p) => File::create(p)
                .map(|f| Sink::File(BufWriter::new(f)))
                .map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display()))),
            None => Ok(Sink::Stdout(stdout)),
        }
    }
}

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        match self {
            Sink::Stdout(w) => w.write(buf),
            Sink::File(w) => w.write(buf),
        }
    }

    fn flush(&mut self) -> std::io::Result<()> {
        match self {
            Sink::Stdout(w) => w.flush(),
            Sink::File(w) => w.flush(),
        }
    }
}

fn write_json<W: Write, T: Serialize>(mut w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// writing primary output to `stdout` and diagnostics to `stderr`.
pub fn run_with<I, T>(args: I, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_INVALID,
            };
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_INVALID
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, Box::new(std::io::stdout()), &mut std::io::stderr())
}

fn dispatch(command: Command, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> Result<i32> {
    let opts = match &command {
        Command::Simulate(o)
        | Command::Correlate(o)
        | Command::Chsh(o)
        | Command::RegionMap(o)
        | Command::Audit(o)
        | Command::TableExport(o) => o.clone().merged_with_config()?,
    };
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = opts.threads {
            if n == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?
    };
    pool.install(|| match command {
        Command::Simulate(_) => simulate(&opts, stdout),
        Command::Correlate(_) => correlate(&opts, stdout, stderr),
        Command::Chsh(_) => run_chsh(&opts, stdout, stderr),
        Command::RegionMap(_) => run_region_map(&opts, stdout, stderr),
        Command::Audit(_) => audit(&opts, stdout, stderr),
        Command::TableExport(_) => table_export(&opts, stdout),
    })
}

#[derive(Serialize)]
struct EventJson<'a> {
    run: u64,
    a: &'a str,
    b: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<[f64; 3]>,
    x: i8,
    y: i8,
}

fn single_pair_config(opts: &Opts, default_samples: u64) -> Result<RunConfig> {
    let model = opts.model()?;
    let samples = opts.samples(default_samples)?;
    let (grid, policy) = match &opts.grid_file {
        Some(_) => (opts.grid_or(|| unreachable!())?, SettingPolicy::UniformIid),
        None => {
            let omega = parse_angle(opts.omega.as_deref().unwrap_or("0"))?;
            if !(0.0..=PI).contains(&omega) {
                return Err(Error::Config(format!("--omega {omega} outside [0, pi]")));
            }
            (SettingsGrid::single_pair(omega), SettingPolicy::Fixed(0, 0))
        }
    };
    let cfg = RunConfig::new(model, grid, samples, opts.seed()).with_policy(policy);
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(opts: &Opts, stdout: Box<dyn Write + Send>) -> Result<i32> {
    let cfg = single_pair_config(opts, 1000)?;
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Csv) {
        Format::Csv => write_events_csv(&mut sink, &cfg.grid, run_experiment(&cfg)?, opts.hide_lambda)?,
        Format::Json => {
            let events = crate::sampling::collect_events(&cfg)?;
            let rows: Vec<EventJson> = events
                .iter()
                .map(|e| EventJson {
                    run: e.run,
                    a: &cfg.grid.a[e.a].label,
                    b: &cfg.grid.b[e.b].label,
                    lambda: (!opts.hide_lambda).then(|| e.lambda.components()),
                    x: e.x.value(),
                    y: e.y.value(),
                })
                .collect();
            write_json(&mut sink, &rows)?;
        }
    }
    sink.flush()?;
    Ok(EXIT_OK)
}

fn correlate(opts: &Opts, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> Result<i32> {
    let model = opts.model()?;
    if matches!(model, Model::LocalDet(_)) {
        return Err(Error::Config("correlate sweeps directions; use chsh or audit for localdet".into()));
    }
    let omegas = match (&opts.omega_grid, &opts.omega) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(w)) => vec![parse_angle(w)?],
        (None, None) => linspace(0.0, PI, 25),
    };
    if let Some(w) = omegas.iter().find(|w| !(0.0..=PI).contains(*w)) {
        return Err(Error::Config(format!("omega {w} outside [0, pi]")));
    }
    let points = correlation_curve(&model, &omegas, opts.samples(1_000_000)?, opts.seed())?;
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Csv) {
        Format::Csv => write_curve_csv(&mut sink, &points)?,
        Format::Json => write_json(&mut sink, &points)?,
    }
    sink.flush()?;
    let ok = points.iter().filter(|p| p.within_4_sigma).count();
    writeln!(stderr, "{ok}/{} points within 4 sigma of -cos(omega)", points.len())?;
    Ok(EXIT_OK)
}

fn run_chsh(opts: &Opts, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> Result<i32> {
    let model = opts.model()?;
    let grid = opts.grid_or(|| Ok(optimal_chsh_grid()))?;
    let result = chsh(&model, &grid, opts.samples(1_000_000)?, opts.seed())?;
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            writeln!(sink, "S,stderr,E_ab,E_abp,E_apb,E_apbp,N")?;
            let e = result.correlators.map(|c| c.e);
            writeln!(
                sink,
                "{},{},{},{},{},{},{}",
                result.s, result.stderr, e[0], e[1], e[2], e[3], result.correlators[0].n
            )?;
        }
        Format::Json => write_json(&mut sink, &result)?,
    }
    sink.flush()?;
    writeln!(stderr, "S = {:.4} +/- {:.4}", result.s, result.stderr)?;
    Ok(EXIT_OK)
}

fn run_region_map(opts: &Opts, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> Result<i32> {
    let omegas = match &opts.omega_grid {
        Some(g) => parse_grid(g)?,
        None => open_grid(FRAC_PI_2, PI, 50),
    };
    let thetas = match &opts.theta_grid {
        Some(g) => parse_grid(g)?,
        None => half_open_grid(0.0, FRAC_PI_2, 50),
    };
    let map = region_map(&omegas, &thetas)?;
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Csv) {
        Format::Csv => map.write_csv(&mut sink)?,
        Format::Json => write_json(&mut sink, &map)?,
    }
    sink.flush()?;
    if let Some(p) = &opts.svg {
        std::fs::write(p, map.to_svg()).map_err(|e| Error::Config(format!("cannot write {}: {e}", p.display())))?;
    }
    let (agree, total) = map.agreement();
    writeln!(stderr, "analytic and model flips agree on {agree}/{total} cells away from the boundary")?;
    Ok(EXIT_OK)
}

fn table_config(opts: &Opts) -> Result<(RunConfig, LambdaPartition)> {
    let model = opts.model()?;
    let grid = opts.grid_or(|| Ok(optimal_chsh_grid()))?;
    let cfg = RunConfig::new(model, grid, opts.samples(100_000)?, opts.seed());
    cfg.validate()?;
    let partition =
        if opts.hide_lambda { LambdaPartition::Trivial } else { LambdaPartition::default_for(&cfg.model, &cfg.grid)? };
    Ok((cfg, partition))
}

fn audit(opts: &Opts, stdout: Box<dyn Write + Send>, stderr: &mut (dyn Write + Send)) -> Result<i32> {
    let (cfg, partition) = table_config(opts)?;
    let table = build_table_from_run(&cfg, &partition)?;
    let report = if opts.hide_lambda {
        audit_z_free(&table)?
    } else {
        audit_implications(&table, ModelTraits::from(&cfg.model))?
    };
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Json) {
        Format::Json => write_json(&mut sink, &report.reports)?,
        Format::Csv => {
            writeln!(sink, "id,pass,max_deviation,tolerance,skipped_cells")?;
            for r in &report.reports {
                writeln!(sink, "{},{},{},{},{}", r.id, r.pass, r.max_deviation, r.tolerance, r.skipped_cells)?;
            }
        }
    }
    sink.flush()?;
    for r in &report.reports {
        writeln!(
            stderr,
            "{:<8} {}  deviation {:.3e}  tolerance {:.3e}",
            r.id.name(),
            if r.pass { "pass" } else { "FAIL" },
            r.max_deviation,
            r.tolerance
        )?;
    }
    for f in &report.findings {
        writeln!(stderr, "inconsistency: {f}")?;
    }
    Ok(match report.status {
        AuditStatus::Consistent => EXIT_OK,
        AuditStatus::Inconsistent => {
            writeln!(stderr, "audit INCONSISTENT")?;
            EXIT_INCONSISTENT
        }
    })
}

fn table_export(opts: &Opts, stdout: Box<dyn Write + Send>) -> Result<i32> {
    let (cfg, partition) = table_config(opts)?;
    let table = build_table_from_run(&cfg, &partition)?;
    let mut sink = Sink::open(opts.out.as_deref(), stdout)?;
    match opts.format.unwrap_or(Format::Json) {
        Format::Json => write_json(&mut sink, &table)?,
        Format::Csv => {
            writeln!(sink, "A,B,C,X,Y,Z,p")?;
            let sizes = table.sizes();
            for (i, p) in table.probabilities().iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                let mut rem = i;
                let mut labels = [""; 6];
                for k in (0..6).rev() {
                    labels[k] = &table.alphabet(Var::ALL[k])[rem % sizes[k]];
                    rem /= sizes[k];
                }
                writeln!(sink, "{},{p}", labels.join(","))?;
            }
        }
    }
    sink.flush()?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("0").unwrap(), 0.0);
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_abs_diff_eq!(parse_angle("3pi/4").unwrap(), 3.0 * PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(parse_angle("-pi/4").unwrap(), -PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(parse_angle("0.5*pi").unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(parse_angle("1/4").unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(parse_angle("1.25").unwrap(), 1.25);
        assert!(parse_angle("tau").is_err());
        assert!(parse_angle("pi/0").is_err());
        assert!(parse_angle("").is_err());
    }

    #[test]
    fn grids() {
        let g = parse_grid("0:pi:25").unwrap();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[24], PI);
        assert_eq!(parse_grid("0,pi/2").unwrap(), vec![0.0, FRAC_PI_2]);
        assert!(parse_grid("0:pi:0").is_err());
        assert!(parse_grid("0:1").is_err());
    }
}
