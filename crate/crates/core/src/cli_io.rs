//! Command-line front end and on-disk formats.
//!
//! Every run command resolves its settings from three layers, last wins:
//! built-in defaults, an optional `--config` file of `key = value` lines,
//! and command-line flags. Keys are the long flag names. The resolved
//! settings are written to `config.txt` in the run directory, so
//! `--config <run>/config.txt` repeats a run exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::experiments::{
    self, ConvergenceConfig, ConvergenceResult, EvolutionConfig, InitialCondition, InitialDensity, LbgkRunConfig,
};
use crate::lattice::{validate_isotropy, Lattice, DEFAULT_TOLERANCE};
use crate::lbgk::LbgkSeriesRecord;
use crate::spectral::{Grid2D, RealField2D};

/// Magic bytes opening a field snapshot.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"LBF2";
/// Magic, `u32` size, `u32` reserved, `f64` time.
const SNAPSHOT_HEADER: usize = 20;

/// Name of the resolved settings file written into each run directory.
pub const CONFIG_FILE: &str = "config.txt";

// ---------------------------------------------------------------- snapshots

pub fn encode_snapshot(field: &RealField2D, time: f64) -> Vec<u8> {
    let n = field.grid().n();
    let mut out = Vec::with_capacity(SNAPSHOT_HEADER + 8 * n * n);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(f64, RealField2D)> {
    if bytes.len() < SNAPSHOT_HEADER || &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Format("missing LBF2 snapshot header".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let n = word(4) as usize;
    let time = f64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = n
        .checked_mul(n)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(SNAPSHOT_HEADER));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(format!(
            "snapshot of size {n}x{n} should be {:?} bytes, found {}",
            expected,
            bytes.len()
        )));
    }
    let grid = Grid2D::new(n).map_err(|e| Error::Format(e.to_string()))?;
    let values = bytes[SNAPSHOT_HEADER..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let field = RealField2D::new(grid, values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((time, field))
}

pub fn write_field_snapshot(path: &Path, field: &RealField2D, time: f64) -> Result<()> {
    fs::write(path, encode_snapshot(field, time)).map_err(|e| Error::io(path, e))
}

pub fn read_field_snapshot(path: &Path) -> Result<(f64, RealField2D)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes)
}

/// `<prefix>_t<time>.lbf`, with the time printed to at most 9 decimals.
pub fn snapshot_name(prefix: &str, time: f64) -> String {
    let mut t = format!("{time:.9}");
    while t.ends_with('0') {
        t.pop();
    }
    if t.ends_with('.') {
        t.pop();
    }
    format!("{prefix}_t{t}.lbf")
}

// ---------------------------------------------------------------------- csv

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every finite double.
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Writes `header` and `rows` with LF line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> io::Result<()> {
        w.write_all(header.join(",").as_bytes())?;
        w.write_all(b"\n")?;
        for row in rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            w.write_all(line.join(",").as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Header and raw string rows of a CSV file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok((header, rows))
}

pub const LBGK_SERIES_HEADER: [&str; 5] = ["time", "mass", "l2_rho", "l2_u", "weighted_g_norm"];
pub const NS_SERIES_HEADER: [&str; 6] = [
    "time",
    "enstrophy",
    "palinstrophy",
    "energy",
    "mean_vorticity",
    "enstrophy_law_residual",
];
pub const CONVERGENCE_HEADER: [&str; 4] = ["epsilon", "rel_error", "dt_used", "steps"];

pub fn write_lbgk_series(path: &Path, series: &[LbgkSeriesRecord]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = series
        .iter()
        .map(|r| {
            vec![
                r.time.into(),
                r.mass.into(),
                r.l2_rho.into(),
                r.l2_u.into(),
                r.weighted_g_norm.into(),
            ]
        })
        .collect();
    write_csv(path, &LBGK_SERIES_HEADER, &rows)
}

pub fn write_ns_series(path: &Path, series: &[experiments::NsSeriesRecord]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = series
        .iter()
        .map(|r| {
            vec![
                r.time.into(),
                r.enstrophy.into(),
                r.palinstrophy.into(),
                r.energy.into(),
                r.mean_vorticity.into(),
                r.enstrophy_law_residual.into(),
            ]
        })
        .collect();
    write_csv(path, &NS_SERIES_HEADER, &rows)
}

/// Data rows followed by `fit_prefactor`, `fit_exponent`, `fit_r2` rows
/// when a fit exists. Footer rows are padded to the header width.
pub fn write_convergence(path: &Path, result: &ConvergenceResult) -> Result<()> {
    let mut rows: Vec<Vec<Cell>> = result
        .rows
        .iter()
        .map(|r| vec![r.epsilon.into(), r.rel_error.into(), r.dt_used.into(), r.steps.into()])
        .collect();
    if let Some(fit) = result.fit {
        for (name, value) in [
            ("fit_prefactor", fit.prefactor),
            ("fit_exponent", fit.exponent),
            ("fit_r2", fit.r2),
        ] {
            rows.push(vec![name.into(), value.into(), "".into(), "".into()]);
        }
    }
    write_csv(path, &CONVERGENCE_HEADER, &rows)
}

// ------------------------------------------------------------ key = value

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected `key = value`", lineno + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Usage(format!("config line {}: empty key", lineno + 1)));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn render_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Resolved settings of one command with typed, key-naming accessors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.0
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn invalid(key: &str, value: &str, why: impl std::fmt::Display) -> Error {
        Error::Usage(format!("invalid value `{value}` for `{key}`: {why}"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Self::invalid(key, v, e)))
            .transpose()
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| Error::Usage(format!("missing value for `{key}`")))
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v: f64 = self.required(key)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(Self::invalid(key, &v.to_string(), "must be positive"));
        }
        Ok(v)
    }

    fn optional_positive(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.positive(key).map(Some),
        }
    }

    fn optional_count(&self, key: &str) -> Result<Option<usize>> {
        let v: Option<usize> = self.parse(key)?;
        if v == Some(0) {
            return Err(Self::invalid(key, "0", "must be positive"));
        }
        Ok(v)
    }

    fn grid_n(&self, key: &str) -> Result<usize> {
        let n: usize = self.required(key)?;
        Grid2D::new(n).map_err(|e| Self::invalid(key, &n.to_string(), e))?;
        Ok(n)
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(v) => Err(Self::invalid(key, v, "expected true or false")),
        }
    }

    fn lattice(&self, key: &str) -> Result<Lattice> {
        let spec: String = self.required(key)?;
        load_lattice(&spec).map_err(|e| match e {
            Error::Io { .. } | Error::Format(_) | Error::Domain(_) => Self::invalid(key, &spec, e),
            other => other,
        })
    }

    fn epsilons(&self, key: &str) -> Result<Vec<f64>> {
        let raw: String = self.required(key)?;
        raw.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| Self::invalid(key, &raw, e)))
            .collect()
    }
}

/// A built-in lattice name (`d2q9`, `d2q7`, `d3q15`, `d3q19`, `d3q27`) or
/// the path of a lattice text file.
pub fn load_lattice(spec: &str) -> Result<Lattice> {
    if let Some(l) = Lattice::builtin(spec) {
        return Ok(l);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Usage(format!(
            "`{spec}` is neither a built-in lattice nor a file"
        )));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))?.parse()
}

// ---------------------------------------------------------------------- cli

#[derive(Debug, Parser)]
#[command(name = "lbgk-hydro", version, about = "Lattice-BGK hydrodynamic-limit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the moment conditions of a lattice and print the residuals.
    ValidateLattice(LatticeArgs),
    /// Integrate 2D Navier-Stokes in vorticity form.
    RunNs(NsArgs),
    /// Integrate the lattice-BGK system from lifted vorticity data.
    RunLbgk(LbgkArgs),
    /// Run the LBGK-to-Navier-Stokes convergence study.
    Converge(ConvergeArgs),
    /// Compare the Navier-Stokes solver with the exact Taylor-Green decay.
    TgValidate(TgArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct LatticeArgs {
    /// Built-in name or path of a lattice file.
    lattice: String,
    #[arg(long)]
    tol: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct NsArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `desk` or `paper`.
    #[arg(long)]
    preset: Option<String>,
    /// `tg`, `tg:<amplitude>:<a>:<b>` or `perturbed-tg`.
    #[arg(long)]
    ic: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    cs: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "output-every")]
    output_every: Option<String>,
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct LbgkArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ic: Option<String>,
    /// `uniform` (ρ₀ ≡ 1) or `pressure` (ρ₀ = 1 + ε p₀ / c_s²).
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    lattice: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    #[arg(long)]
    dt: Option<String>,
    #[arg(long = "output-every")]
    output_every: Option<String>,
    #[arg(long = "snapshot-every")]
    snapshot_every: Option<String>,
    /// Include the quadratic velocity term of the equilibrium.
    #[arg(long)]
    nonlinear: Option<String>,
    /// Apply the Fourier cutoff at `1/ε` after every step.
    #[arg(long)]
    cutoff: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct ConvergeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// `desk` or `paper`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    ic: Option<String>,
    /// `uniform` (ρ₀ ≡ 1) or `pressure` (ρ₀ = 1 + ε p₀ / c_s²).
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    /// Comma-separated, strictly decreasing.
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    lattice: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    /// Fixed LBGK step instead of the stability rule.
    #[arg(long)]
    dt: Option<String>,
    #[arg(long)]
    cutoff: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct TgArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    nu: Option<String>,
    #[arg(long = "t-final")]
    t_final: Option<String>,
    #[arg(long)]
    dt: Option<String>,
}

/// A fully validated command.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    ValidateLattice {
        lattice: Lattice,
        name: String,
        tol: f64,
    },
    RunNs {
        config: EvolutionConfig,
        out: PathBuf,
    },
    RunLbgk {
        config: LbgkRunConfig,
        out: PathBuf,
    },
    Converge {
        config: ConvergenceConfig,
        out: PathBuf,
    },
    TgValidate {
        grid_n: usize,
        nu: f64,
        t_final: f64,
        dt: f64,
    },
}

/// Result of [`parse_cli`].
#[derive(Debug, Clone, PartialEq)]
pub enum Invocation {
    /// `--help` or `--version` text to print before exiting successfully.
    Info(String),
    Run {
        config: RunConfig,
        settings: Settings,
    },
}

fn layer(defaults: &[(&str, String)], file: Option<&Path>, flags: &[(&str, &Option<String>)]) -> Result<Settings> {
    let mut map: BTreeMap<String, String> = defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (key, value) in parse_key_values(&text)? {
            if !flags.iter().any(|(k, _)| *k == key) {
                return Err(Error::Usage(format!("unknown key `{key}` in {}", path.display())));
            }
            map.insert(key, value);
        }
    }
    for (key, value) in flags {
        if let Some(v) = value {
            map.insert(key.to_string(), v.clone());
        }
    }
    Ok(Settings(map))
}

fn preset_of(file: Option<&Path>, flag: &Option<String>) -> Result<String> {
    let from_file = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_key_values(&text)?.remove("preset")
        }
        None => None,
    };
    let preset = flag.clone().or(from_file).unwrap_or_else(|| "desk".into());
    match preset.as_str() {
        "desk" | "paper" => Ok(preset),
        other => Err(Error::Usage(format!(
            "invalid value `{other}` for `preset`: expected desk or paper"
        ))),
    }
}

fn opt_string<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn ns_invocation(a: &NsArgs) -> Result<(RunConfig, Settings)> {
    let file = a.config.as_deref();
    let preset = preset_of(file, &a.preset)?;
    let base = if preset == "paper" {
        EvolutionConfig::paper_scale()
    } else {
        EvolutionConfig::desk_scale()
    };
    let defaults = [
        ("preset", preset.clone()),
        ("ic", base.initial_condition.to_string()),
        ("n", base.grid_n.to_string()),
        ("nu", base.nu.to_string()),
        ("cs", base.sound_speed.to_string()),
        ("t-final", base.t_final.to_string()),
        ("dt", opt_string(base.dt)),
        ("output-every", base.output_every.to_string()),
        ("snapshot-every", opt_string(base.snapshot_every)),
        ("out", "run-ns".into()),
    ];
    let flags = [
        ("preset", &a.preset),
        ("ic", &a.ic),
        ("n", &a.n),
        ("nu", &a.nu),
        ("cs", &a.cs),
        ("t-final", &a.t_final),
        ("dt", &a.dt),
        ("output-every", &a.output_every),
        ("snapshot-every", &a.snapshot_every),
        ("out", &a.out),
    ];
    let s = layer(&defaults, file, &flags)?;
    let config = EvolutionConfig {
        grid_n: s.grid_n("n")?,
        nu: s.positive("nu")?,
        sound_speed: s.positive("cs")?,
        t_final: s.positive("t-final")?,
        initial_condition: s.required("ic")?,
        dt: s.optional_positive("dt")?,
        output_every: s
            .optional_count("output-every")?
            .ok_or_else(|| Error::Usage("missing value for `output-every`".into()))?,
        snapshot_every: s.optional_count("snapshot-every")?,
    };
    let out = PathBuf::from(s.required::<String>("out")?);
    Ok((RunConfig::RunNs { config, out }, s))
}

fn lbgk_invocation(a: &LbgkArgs) -> Result<(RunConfig, Settings)> {
    let defaults = [
        ("ic", InitialCondition::TAYLOR_GREEN.to_string()),
        ("density", InitialDensity::Uniform.to_string()),
        ("n", "64".to_string()),
        ("nu", "0.0001".into()),
        ("eps", "0.2".into()),
        ("lattice", "d2q9".into()),
        ("t-final", "1".into()),
        ("dt", String::new()),
        ("output-every", "1000".into()),
        ("snapshot-every", String::new()),
        ("nonlinear", "true".into()),
        ("cutoff", "false".into()),
        ("out", "run-lbgk".into()),
    ];
    let flags = [
        ("ic", &a.ic),
        ("density", &a.density),
        ("n", &a.n),
        ("nu", &a.nu),
        ("eps", &a.eps),
        ("lattice", &a.lattice),
        ("t-final", &a.t_final),
        ("dt", &a.dt),
        ("output-every", &a.output_every),
        ("snapshot-every", &a.snapshot_every),
        ("nonlinear", &a.nonlinear),
        ("cutoff", &a.cutoff),
        ("out", &a.out),
    ];
    let s = layer(&defaults, a.config.as_deref(), &flags)?;
    let epsilon: f64 = s.required("eps")?;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Settings::invalid("eps", &epsilon.to_string(), "must lie in (0, 1)"));
    }
    let config = LbgkRunConfig {
        grid_n: s.grid_n("n")?,
        nu: s.positive("nu")?,
        epsilon,
        lattice: s.lattice("lattice")?,
        t_final: s.positive("t-final")?,
        initial_condition: s.required("ic")?,
        initial_density: s.required("density")?,
        dt: s.optional_positive("dt")?,
        output_every: s
            .optional_count("output-every")?
            .ok_or_else(|| Error::Usage("missing value for `output-every`".into()))?,
        snapshot_every: s.optional_count("snapshot-every")?,
        nonlinear: s.flag("nonlinear")?,
        cutoff_each_step: s.flag("cutoff")?,
    };
    if config.lattice.dim() != 2 {
        return Err(Settings::invalid(
            "lattice",
            &s.required::<String>("lattice")?,
            "the solver needs a 2D lattice",
        ));
    }
    let out = PathBuf::from(s.required::<String>("out")?);
    Ok((RunConfig::RunLbgk { config, out }, s))
}

fn converge_invocation(a: &ConvergeArgs) -> Result<(RunConfig, Settings)> {
    let file = a.config.as_deref();
    let preset = preset_of(file, &a.preset)?;
    let base = if preset == "paper" {
        ConvergenceConfig::paper_scale()
    } else {
        ConvergenceConfig::desk_scale()
    };
    let eps: Vec<String> = base.epsilons.iter().map(f64::to_string).collect();
    let defaults = [
        ("preset", preset.clone()),
        ("ic", base.initial_condition.to_string()),
        ("density", base.initial_density.to_string()),
        ("n", base.grid_n.to_string()),
        ("nu", base.nu.to_string()),
        ("eps", eps.join(",")),
        ("lattice", "d2q9".into()),
        ("t-final", base.t_final.to_string()),
        ("dt", opt_string(base.dt_override)),
        ("cutoff", base.cutoff_each_step.to_string()),
        ("out", "converge".into()),
    ];
    let flags = [
        ("preset", &a.preset),
        ("ic", &a.ic),
        ("density", &a.density),
        ("n", &a.n),
        ("nu", &a.nu),
        ("eps", &a.eps),
        ("lattice", &a.lattice),
        ("t-final", &a.t_final),
        ("dt", &a.dt),
        ("cutoff", &a.cutoff),
        ("out", &a.out),
    ];
    let s = layer(&defaults, file, &flags)?;
    let config = ConvergenceConfig {
        grid_n: s.grid_n("n")?,
        nu: s.positive("nu")?,
        epsilons: s.epsilons("eps")?,
        t_final: s.positive("t-final")?,
        initial_condition: s.required("ic")?,
        initial_density: s.required("density")?,
        dt_override: s.optional_positive("dt")?,
        lattice: s.lattice("lattice")?,
        cutoff_each_step: s.flag("cutoff")?,
    };
    config.validate().map_err(|e| match e {
        Error::Domain(msg) => Error::Usage(format!("invalid configuration: {msg}")),
        other => other,
    })?;
    if config.lattice.dim() != 2 {
        return Err(Settings::invalid(
            "lattice",
            &s.required::<String>("lattice")?,
            "the solver needs a 2D lattice",
        ));
    }
    let out = PathBuf::from(s.required::<String>("out")?);
    Ok((RunConfig::Converge { config, out }, s))
}

fn tg_invocation(a: &TgArgs) -> Result<(RunConfig, Settings)> {
    let defaults = [
        ("n", "64".to_string()),
        ("nu", "0.0001".into()),
        ("t-final", "1".into()),
        ("dt", "0.0001".into()),
    ];
    let flags = [("n", &a.n), ("nu", &a.nu), ("t-final", &a.t_final), ("dt", &a.dt)];
    let s = layer(&defaults, a.config.as_deref(), &flags)?;
    let t_final: f64 = s.required("t-final")?;
    if !(t_final.is_finite() && t_final >= 0.0) {
        return Err(Settings::invalid(
            "t-final",
            &t_final.to_string(),
            "must be nonnegative",
        ));
    }
    let config = RunConfig::TgValidate {
        grid_n: s.grid_n("n")?,
        nu: s.positive("nu")?,
        t_final,
        dt: s.positive("dt")?,
    };
    Ok((config, s))
}

/// Parses `argv` (including the program name) into a validated command.
pub fn parse_cli<I, T>(argv: I) -> Result<Invocation>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => Ok(Invocation::Info(e.render().to_string())),
                _ => Err(Error::Usage(e.render().to_string())),
            };
        }
    };
    let (config, settings) = match &cli.command {
        Command::ValidateLattice(a) => {
            let tol = match &a.tol {
                None => DEFAULT_TOLERANCE,
                Some(v) => {
                    let t: f64 = v.parse().map_err(|e| Settings::invalid("tol", v, e))?;
                    if !(t.is_finite() && t > 0.0) {
                        return Err(Settings::invalid("tol", v, "must be positive"));
                    }
                    t
                }
            };
            let lattice = load_lattice(&a.lattice)?;
            let mut map = BTreeMap::new();
            map.insert("lattice".to_string(), a.lattice.clone());
            map.insert("tol".to_string(), tol.to_string());
            let config = RunConfig::ValidateLattice {
                lattice,
                name: a.lattice.clone(),
                tol,
            };
            (config, Settings(map))
        }
        Command::RunNs(a) => ns_invocation(a)?,
        Command::RunLbgk(a) => lbgk_invocation(a)?,
        Command::Converge(a) => converge_invocation(a)?,
        Command::TgValidate(a) => tg_invocation(a)?,
    };
    Ok(Invocation::Run { config, settings })
}

fn prepare_run_dir(out: &Path, settings: &Settings) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(CONFIG_FILE);
    fs::write(&path, render_key_values(settings.map())).map_err(|e| Error::io(&path, e))
}

fn report(w: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    w.write_fmt(text)
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

/// Runs a parsed command, writing artifacts and a short report to `out`.
/// Returns `Ok(false)` when a validation check ran but failed.
pub fn execute(invocation: &Invocation, out: &mut dyn Write) -> Result<bool> {
    let (config, settings) = match invocation {
        Invocation::Info(text) => {
            out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
            return Ok(true);
        }
        Invocation::Run { config, settings } => (config, settings),
    };
    match config {
        RunConfig::ValidateLattice { lattice, name, tol } => {
            let rep = validate_isotropy(lattice, *tol)?;
            write!(out, "{rep}").map_err(|e| Error::io("<stdout>", e))?;
            report(
                out,
                format_args!(
                    "{name}: {} (max residual {:.3e}, tolerance {:.1e})",
                    if rep.satisfied { "isotropic" } else { "NOT isotropic" },
                    rep.max_residual,
                    tol
                ),
            )?;
            Ok(rep.satisfied)
        }
        RunConfig::TgValidate {
            grid_n,
            nu,
            t_final,
            dt,
        } => {
            let err = experiments::run_tg_validation(*grid_n, *nu, *t_final, *dt)?;
            report(out, format_args!("relative L2 error vs exact Taylor-Green: {err:.6e}"))?;
            Ok(true)
        }
        RunConfig::RunNs { config, out: dir } => {
            prepare_run_dir(dir, settings)?;
            let series = experiments::run_vortex_evolution(config, |t, omega| {
                write_field_snapshot(&dir.join(snapshot_name("omega", t)), omega, t)
            })?;
            write_ns_series(&dir.join("ns_series.csv"), &series)?;
            if let Some(last) = series.last() {
                report(
                    out,
                    format_args!(
                        "t = {}: enstrophy {:.6e}, palinstrophy {:.6e}; wrote {}",
                        last.time,
                        last.enstrophy,
                        last.palinstrophy,
                        dir.display()
                    ),
                )?;
            }
            Ok(true)
        }
        RunConfig::RunLbgk { config, out: dir } => {
            prepare_run_dir(dir, settings)?;
            let series = experiments::run_lbgk(config, |snap| {
                for (i, g) in snap.g.iter().enumerate() {
                    write_field_snapshot(&dir.join(snapshot_name(&format!("g{i}"), snap.time)), g, snap.time)?;
                }
                write_field_snapshot(
                    &dir.join(snapshot_name("omega_eps", snap.time)),
                    snap.vorticity,
                    snap.time,
                )
            })?;
            write_lbgk_series(&dir.join("lbgk_series.csv"), &series)?;
            if let Some(last) = series.last() {
                report(
                    out,
                    format_args!(
                        "t = {}: mass {:.6e}, |u| {:.6e}; wrote {}",
                        last.time,
                        last.mass,
                        last.l2_u,
                        dir.display()
                    ),
                )?;
            }
            Ok(true)
        }
        RunConfig::Converge { config, out: dir } => {
            prepare_run_dir(dir, settings)?;
            let steps: Vec<String> = config
                .epsilons
                .iter()
                .map(|&e| {
                    let params = crate::lbgk::LbgkParams::new(e, config.nu, config.lattice.clone())?;
                    let grid = Grid2D::new(config.grid_n)?;
                    let dt = config
                        .dt_override
                        .unwrap_or_else(|| crate::lbgk::stable_dt(&params, grid));
                    Ok(format!(
                        "eps {e}: {} steps",
                        experiments::fit_steps(config.t_final, dt).0
                    ))
                })
                .collect::<Result<_>>()?;
            report(out, format_args!("planned LBGK runs: {}", steps.join(", ")))?;
            let result = experiments::run_convergence(config)?;
            write_convergence(&dir.join("convergence.csv"), &result)?;
            for row in &result.rows {
                report(
                    out,
                    format_args!(
                        "eps {:<8} rel_error {:.6e}  dt {:.3e}  steps {}",
                        row.epsilon, row.rel_error, row.dt_used, row.steps
                    ),
                )?;
            }
            if let Some(fit) = result.fit {
                report(
                    out,
                    format_args!(
                        "fit: {:.6e} * eps^{:.4} (r2 = {:.6})",
                        fit.prefactor, fit.exponent, fit.r2
                    ),
                )?;
            }
            Ok(true)
        }
    }
}

/// Caps the rayon pool from `LBGK_HYDRO_THREADS` (unset or `0` = automatic).
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LBGK_HYDRO_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value `{raw}` for LBGK_HYDRO_THREADS")))?;
    if threads > 0 {
        // A pool that is already built keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(())
}

/// Entry point used by the binary. Returns the process exit code.
pub fn main_with_args<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let outcome = configure_threads()
        .and_then(|_| parse_cli(argv))
        .and_then(|inv| execute(&inv, stdout));
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.to_string().trim_end());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> Result<RunConfig> {
        let argv = std::iter::once("lbgk-hydro").chain(args.iter().copied());
        match parse_cli(argv)? {
            Invocation::Run { config, .. } => Ok(config),
            Invocation::Info(_) => panic!("unexpected info"),
        }
    }

    #[test]
    fn converge_flags_map_to_config() {
        let c = run(&[
            "converge",
            "--ic",
            "tg",
            "--n",
            "64",
            "--nu",
            "1e-4",
            "--t-final",
            "1",
            "--eps",
            "0.4,0.2,0.1",
        ])
        .unwrap();
        match c {
            RunConfig::Converge { config, .. } => {
                assert_eq!(config.grid_n, 64);
                assert_eq!(config.nu, 1e-4);
                assert_eq!(config.t_final, 1.0);
                assert_eq!(config.epsilons, vec![0.4, 0.2, 0.1]);
                assert_eq!(config.initial_condition, InitialCondition::TAYLOR_GREEN);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paper_scale_ns_flags() {
        let c = run(&[
            "run-ns",
            "--ic",
            "perturbed-tg",
            "--n",
            "128",
            "--nu",
            "1e-4",
            "--t-final",
            "32",
            "--dt",
            "2e-6",
        ])
        .unwrap();
        match c {
            RunConfig::RunNs { config, .. } => {
                assert_eq!(config.grid_n, 128);
                assert_eq!(config.dt, Some(2e-6));
                assert_eq!(config.t_final, 32.0);
                assert_eq!(config.initial_condition, InitialCondition::PerturbedTg);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_values_name_the_key() {
        for (args, key) in [
            (vec!["converge", "--n", "63"], "`n`"),
            (vec!["converge", "--nu", "-1"], "`nu`"),
            (vec!["converge", "--eps", "0.1,x"], "`eps`"),
            (vec!["run-lbgk", "--eps", "1.5"], "`eps`"),
            (vec!["run-ns", "--output-every", "0"], "`output-every`"),
            (vec!["tg-validate", "--dt", "abc"], "`dt`"),
        ] {
            let err = run(&args).unwrap_err();
            assert_eq!(err.exit_code(), 2);
            assert!(err.to_string().contains(key), "{err}");
        }
    }

    #[test]
    fn unknown_flags_and_commands_are_usage_errors() {
        assert_eq!(run(&["converge", "--bogus", "1"]).unwrap_err().exit_code(), 2);
        assert_eq!(run(&["frobnicate"]).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn key_value_parsing() {
        let map = parse_key_values("# header\nn = 64\n\n nu=1e-4 # trailing\n").unwrap();
        assert_eq!(map["n"], "64");
        assert_eq!(map["nu"], "1e-4");
        assert!(parse_key_values("novalue\n").is_err());
        let text = render_key_values(&map);
        assert_eq!(parse_key_values(&text).unwrap(), map);
    }

    #[test]
    fn snapshot_header_layout() {
        let g = Grid2D::new(64).unwrap();
        let bytes = encode_snapshot(&RealField2D::zeros(g), 1.5);
        assert_eq!(&bytes[..4], b"LBF2");
        assert_eq!(&bytes[4..8], &64u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &[0, 0, 0, 0]);
        assert_eq!(&bytes[12..20], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 64 * 64 * 8);
    }

    #[test]
    fn snapshot_names() {
        assert_eq!(snapshot_name("omega", 0.25), "omega_t0.25.lbf");
        assert_eq!(snapshot_name("g3", 2.0), "g3_t2.lbf");
        assert_eq!(snapshot_name("omega_eps", 0.1 + 0.2), "omega_eps_t0.3.lbf");
    }

    #[test]
    fn float_cells_round_trip() {
        for v in [0.1, 1.0458e-8, std::f64::consts::PI, -2.5e300, 5e-324] {
            let s = Cell::Float(v).render();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
