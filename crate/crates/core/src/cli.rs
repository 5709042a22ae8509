//! Experiment runner behind the `exdom` binary.
//!
//! Every subcommand reads a flat configuration: an optional TOML file given with
//! `--config PATH` overridden by `--key value` arguments. Keys are validated against the
//! subcommand's table before any computation and unknown keys are rejected by name. Results go to `<out>/<subcommand>.csv` with 17
//! significant digits, next to a `manifest.json` recording the configuration, its SHA-256
//! hash, the seed and the crate version.
//!
//! Sweeps over `ε` or seeds run on up to `EXDOM_THREADS` worker threads (default: available
//! parallelism); rows are written in input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::ansatz;
use crate::dtn::{apply_h_definitional, apply_h_multiplier, RadialProfile};
use crate::eigensolve::{
    self, fd_shape_derivative, first_eigen, richardson, shape_derivative, HoleShape, SolverConfig,
};
use crate::extremal::{self, ExtremalConfig};
use crate::geometry::{random_curvature, ModelManifold};
use crate::green::{self, Coefficients};
use crate::spherical::{random_band_limited, verify_appendix, SphereGrid};
use crate::Error;

/// Exit status for a bad command line or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for a numerical failure.
pub const EXIT_NUMERIC: i32 = 3;

/// Name of the thread-count environment variable.
pub const THREADS_ENV: &str = "EXDOM_THREADS";

const SUBCOMMANDS: [&str; 9] = [
    "verify-identities",
    "dtn-spectrum",
    "green-constants",
    "green-flux",
    "ansatz-fit",
    "eig",
    "eig-sweep",
    "shape-derivative",
    "extremal-solve",
];

/// The clap command tree; each subcommand takes `--config` plus one option per key.
pub fn command() -> clap::Command {
    let mut cmd = clap::Command::new("exdom")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Extremal small-hole domains: identity checks, constants, eigenvalue sweeps and extremal solves")
        .after_help(format!(
            "models: torus2, torus3, box2, box3 (Dirichlet), neumann2, neumann3, sphere2, sphere3\n\
             environment: {THREADS_ENV} sets the worker-thread count"
        ))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for name in SUBCOMMANDS {
        let mut sub = clap::Command::new(name).about(about(name)).arg(
            clap::Arg::new("config").long("config").value_name("FILE").help("TOML file of key = value pairs"),
        );
        for (k, default, help) in keys(name) {
            let help = if default.is_empty() { help.to_string() } else { format!("{help} [default: {default}]") };
            sub = sub.arg(clap::Arg::new(k).long(k).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Usage text.
pub fn usage() -> String {
    command().render_long_help().to_string()
}

fn about(sub: &str) -> &'static str {
    match sub {
        "verify-identities" => "Check the sphere-integral identities on seeded curvature tensors",
        "dtn-spectrum" => "Compare the definitional and multiplier forms of H on random inputs",
        "green-constants" => "Tabulate the flux constants and their combinations",
        "green-flux" => "Compare the exact flux integral and the H-hat pairing with the constants",
        "ansatz-fit" => "Fit the approximate eigenfunction on a model manifold",
        "eig" => "First eigenvalue of a model manifold with a round hole",
        "eig-sweep" => "Eigenvalues over a list of hole radii and the fitted small-hole law",
        "shape-derivative" => "Hadamard shape derivatives against finite differences",
        "extremal-solve" => "Modified Newton solve, relocation and extremality certificate",
        _ => "",
    }
}

type KeySpec = (&'static str, &'static str, &'static str);

fn keys(sub: &str) -> Vec<KeySpec> {
    let mut k: Vec<KeySpec> = vec![("out", "", "output directory"), ("seed", "1", "base seed")];
    let extra: &[KeySpec] = match sub {
        "verify-identities" => &[("n", "3..7", "dimensions (range a..b or list)"), ("trials", "20", "curvature tensors per n")],
        "dtn-spectrum" => &[
            ("n", "2,3", "dimensions"),
            ("phi0p", "1", "profile amplitude"),
            ("lmax", "16", "degree cutoff"),
            ("trials", "5", "random inputs per n"),
        ],
        "green-constants" => &[("n", "4..7", "dimensions"), ("phi0p", "1", "profile amplitude"), ("coefficients", "printed", "printed or derived")],
        "green-flux" => &[("n", "5..7", "dimensions"), ("trials", "10", "curvature tensors per n"), ("eps", "1e-3", "hole radius")],
        "ansatz-fit" => &[
            ("model", "torus3", "model manifold"),
            ("p", "center", "hole centre"),
            ("eps", "0.02,0.01,0.005,0.0025", "hole radii"),
            ("lmax", "auto", "degree cutoff of the boundary correction"),
            ("tol", "1e-10", "mismatch tolerance"),
        ],
        "eig" => &[
            ("model", "torus2", "model manifold"),
            ("p", "center", "hole centre"),
            ("eps", "0.05", "hole radius (0 = no hole)"),
            ("h", "1/256", "grid spacing"),
            ("richardson", "false", "also solve on 2h and extrapolate"),
            ("min_nodes", "16", "minimum nodes across the hole diameter"),
        ],
        "eig-sweep" => &[
            ("model", "torus2", "model manifold"),
            ("p", "center", "hole centre"),
            ("eps", "0.005,0.01,0.02,0.04", "hole radii"),
            ("h", "1/512", "grid spacing"),
            ("richardson", "true", "extrapolate from h and 2h"),
            ("min_nodes", "1", "minimum nodes across the hole diameter"),
            ("intercept", "auto", "fit a free intercept (n >= 3)"),
        ],
        "shape-derivative" => &[
            ("model", "torus2", "model manifold"),
            ("p", "center", "hole centre"),
            ("eps", "0.1", "hole radius"),
            ("h", "1/256", "grid spacing"),
            ("fields", "5", "random normal-speed fields"),
            ("lmax", "4", "degree of the random fields"),
            ("step", "0.5", "finite-difference displacement in units of h"),
        ],
        "extremal-solve" => &[
            ("model", "box2", "model manifold"),
            ("eps", "0.05", "hole radius"),
            ("p0", "0.6,0.55", "initial centre"),
            ("h", "1/512", "grid spacing"),
            ("tol", "1e-8", "Newton tolerance on |F + g(a,.)|"),
            ("relocate", "true", "move the centre until a = 0"),
            ("fields", "5", "volume-preserving fields in the certificate"),
        ],
        _ => &[],
    };
    k.extend_from_slice(extra);
    k
}

/// Parsed and validated configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub subcommand: String,
    pub values: BTreeMap<String, String>,
}

/// Command-line or configuration error.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl ExperimentConfig {
    /// Parses `args` (without the program name).
    pub fn from_args(args: &[String]) -> Result<Self, UsageError> {
        let matches = command()
            .try_get_matches_from(std::iter::once("exdom".to_string()).chain(args.iter().cloned()))
            .map_err(|e| UsageError(e.render().to_string()))?;
        let (sub, m) = matches.subcommand().ok_or_else(|| UsageError("no subcommand given".into()))?;
        let mut pairs = Vec::new();
        if let Some(path) = m.get_one::<String>("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config file `{path}`: {e}")))?;
            pairs.extend(parse_config_text(&text)?);
        }
        for (k, _, _) in keys(sub) {
            if let Some(v) = m.get_one::<String>(k) {
                pairs.push((k.to_string(), v.clone()));
            }
        }
        Self::from_pairs(sub, pairs)
    }

    /// Builds a configuration from key/value pairs, later pairs overriding earlier ones.
    pub fn from_pairs(sub: &str, pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self, UsageError> {
        let spec = keys(sub);
        let mut values: BTreeMap<String, String> =
            spec.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        for (k, v) in pairs {
            if !values.contains_key(&k) {
                return Err(UsageError(format!("unknown key `{k}` for {sub}")));
            }
            values.insert(k, v);
        }
        if values["out"].is_empty() {
            values.insert("out".into(), format!("out/{sub}"));
        }
        let cfg = Self { subcommand: sub.to_string(), values };
        cfg.validate()?;
        Ok(cfg)
    }

    fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    fn parse_f64(&self, key: &str) -> Result<f64, UsageError> {
        parse_number(self.get(key)).ok_or_else(|| UsageError(format!("key `{key}`: `{}` is not a number", self.get(key))))
    }

    fn parse_usize(&self, key: &str) -> Result<usize, UsageError> {
        self.get(key).trim().parse().map_err(|_| UsageError(format!("key `{key}`: `{}` is not a non-negative integer", self.get(key))))
    }

    fn parse_bool(&self, key: &str) -> Result<bool, UsageError> {
        match self.get(key).trim() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(UsageError(format!("key `{key}`: `{v}` is not a boolean"))),
        }
    }

    fn parse_list(&self, key: &str) -> Result<Vec<f64>, UsageError> {
        self.get(key)
            .split(',')
            .map(|s| parse_number(s).ok_or_else(|| UsageError(format!("key `{key}`: `{s}` is not a number"))))
            .collect()
    }

    fn parse_dims(&self, key: &str) -> Result<Vec<usize>, UsageError> {
        let v = self.get(key).trim();
        let bad = || UsageError(format!("key `{key}`: `{v}` is not a dimension range or list"));
        if let Some((a, b)) = v.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            return Ok((a..=b).collect());
        }
        v.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
    }

    fn model(&self) -> Result<ModelManifold, UsageError> {
        parse_model(self.get("model"))
    }

    fn point(&self, key: &str, model: &ModelManifold) -> Result<Vec<f64>, UsageError> {
        let v = self.get(key).trim();
        let p = if v == "center" {
            match model {
                ModelManifold::FlatTorus { periods } => periods.iter().map(|l| l / 2.0).collect(),
                ModelManifold::DirichletBox { sides } | ModelManifold::NeumannBox { sides } => {
                    sides.iter().map(|l| l / 2.0).collect()
                }
                ModelManifold::RoundSphere { n, .. } => vec![0.0; *n],
            }
        } else {
            self.parse_list(key)?
        };
        if p.len() != model.dim() {
            return Err(UsageError(format!("key `{key}`: expected {} coordinates, got {}", model.dim(), p.len())));
        }
        Ok(p)
    }

    fn validate(&self) -> Result<(), UsageError> {
        self.parse_usize("seed")?;
        let positive = |k: &str| -> Result<(), UsageError> {
            if self.parse_f64(k)? > 0.0 {
                Ok(())
            } else {
                Err(UsageError(format!("key `{k}` must be positive")))
            }
        };
        match self.subcommand.as_str() {
            "verify-identities" | "green-flux" | "green-constants" | "dtn-spectrum" => {
                let dims = self.parse_dims("n")?;
                let lo = if self.subcommand == "dtn-spectrum" { 2 } else { 3 };
                if let Some(n) = dims.iter().find(|n| **n < lo || **n > 12) {
                    return Err(UsageError(format!("key `n`: dimension {n} out of range")));
                }
                if self.subcommand == "dtn-spectrum" && dims.iter().any(|n| *n > 3) {
                    return Err(UsageError("key `n`: quadrature grids exist for n in {2, 3}".into()));
                }
                if self.values.contains_key("trials") {
                    self.parse_usize("trials")?;
                }
                if self.values.contains_key("eps") {
                    positive("eps")?;
                }
                if self.values.contains_key("lmax") {
                    self.parse_usize("lmax")?;
                }
                if self.values.contains_key("phi0p") {
                    self.parse_f64("phi0p")?;
                }
                if self.values.contains_key("coefficients") && !matches!(self.get("coefficients"), "printed" | "derived") {
                    return Err(UsageError("key `coefficients` must be printed or derived".into()));
                }
            }
            "ansatz-fit" | "eig" | "eig-sweep" | "shape-derivative" | "extremal-solve" => {
                let model = self.model()?;
                let pk = if self.subcommand == "extremal-solve" { "p0" } else { "p" };
                self.point(pk, &model)?;
                let eps = self.parse_list("eps")?;
                if eps.iter().any(|e| *e < 0.0) {
                    return Err(UsageError("key `eps`: radii must be non-negative".into()));
                }
                for k in ["h", "tol", "step"] {
                    if self.values.contains_key(k) {
                        positive(k)?;
                    }
                }
                for k in ["richardson", "relocate"] {
                    if self.values.contains_key(k) {
                        self.parse_bool(k)?;
                    }
                }
                for k in ["fields"] {
                    if self.values.contains_key(k) {
                        self.parse_usize(k)?;
                    }
                }
                if self.values.contains_key("min_nodes") {
                    positive("min_nodes")?;
                }
                if self.values.contains_key("lmax") && self.get("lmax") != "auto" {
                    self.parse_usize("lmax")?;
                }
                if self.values.contains_key("intercept") && self.get("intercept") != "auto" {
                    self.parse_bool("intercept")?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical `key = value` text (sorted keys), the input of the manifest hash.
    pub fn canonical(&self) -> String {
        let mut s = format!("subcommand = {}\n", self.subcommand);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }
}

fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let table: toml::Table = text.parse().map_err(|e| UsageError(format!("config file: {e}")))?;
    table
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => items
                    .iter()
                    .map(|x| match x {
                        toml::Value::String(s) => Ok(s.clone()),
                        toml::Value::Integer(i) => Ok(i.to_string()),
                        toml::Value::Float(f) => Ok(f.to_string()),
                        _ => Err(UsageError(format!("config key `{k}`: arrays hold numbers or strings"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?
                    .join(","),
                _ => return Err(UsageError(format!("config key `{k}`: expected a scalar or an array"))),
            };
            Ok((k, v))
        })
        .collect()
}

/// Numbers, plus fractions `a/b` for grid spacings.
fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        return (b != 0.0).then(|| a / b);
    }
    s.parse().ok()
}

/// `torus2`, `torus3`, `box2`, `box3`, `neumann2`, `neumann3`, `sphere2`, `sphere3`.
pub fn parse_model(name: &str) -> Result<ModelManifold, UsageError> {
    let name = name.trim();
    let split = name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len());
    let (kind, n) = name.split_at(split);
    let n: usize = n.parse().map_err(|_| UsageError(format!("key `model`: `{name}` has no dimension suffix")))?;
    if !(2..=3).contains(&n) {
        return Err(UsageError(format!("key `model`: dimension {n} is not available (2 or 3)")));
    }
    Ok(match kind {
        "torus" => ModelManifold::unit_torus(n),
        "box" => ModelManifold::unit_box(n),
        "neumann" => ModelManifold::NeumannBox { sides: vec![1.0; n] },
        "sphere" => ModelManifold::RoundSphere { n, radius: 1.0 },
        _ => return Err(UsageError(format!("key `model`: unknown model `{name}`"))),
    })
}

/// Runs the binary on `args` (without the program name) and returns the exit status.
pub fn main_with_args(args: &[String]) -> i32 {
    if let Err(e) = command().try_get_matches_from(std::iter::once("exdom".to_string()).chain(args.iter().cloned())) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = std::io::Write::write_all(&mut std::io::stdout(), e.render().to_string().as_bytes());
            return 0;
        }
    }
    let cfg = match ExperimentConfig::from_args(args) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            if !e.0.ends_with('\n') {
                eprintln!();
            }
            return EXIT_USAGE;
        }
    };
    match run(&cfg) {
        Ok(path) => {
            println!("wrote {}", path.display());
            0
        }
        Err(e) => {
            eprintln!("error in {}: {e}", cfg.subcommand);
            EXIT_NUMERIC
        }
    }
}

/// Failure of a run after validation.
#[derive(Debug)]
pub enum RunError {
    Numeric(Error),
    Io(std::io::Error),
    Usage(UsageError),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Numeric(e) => write!(f, "{e}"),
            Self::Io(e) => write!(f, "i/o: {e}"),
            Self::Usage(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        Self::Numeric(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl From<UsageError> for RunError {
    fn from(e: UsageError) -> Self {
        Self::Usage(e)
    }
}

/// Table of rows with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_f64(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// 17 significant digits, `.` decimal separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(Cell::render).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

fn text(s: impl Into<String>) -> Cell {
    Cell::Text(s.into())
}

fn num(v: f64) -> Cell {
    Cell::Num(v)
}

fn int(v: usize) -> Cell {
    Cell::Int(v as i64)
}

fn join_point(p: &[f64]) -> String {
    p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    config: &'a BTreeMap<String, String>,
    config_sha256: String,
    seed: usize,
    version: &'static str,
    outputs: Vec<String>,
}

/// Result of a run: the primary table plus optional extra files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub table: Table,
    pub extra: Vec<(String, String)>,
}

/// Runs a validated configuration and writes its artifacts; returns the output directory.
pub fn run(cfg: &ExperimentConfig) -> Result<PathBuf, RunError> {
    let out = compute(cfg)?;
    write_outputs(cfg, &out)
}

fn write_outputs(cfg: &ExperimentConfig, out: &RunOutput) -> Result<PathBuf, RunError> {
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    let main = format!("{}.csv", cfg.subcommand);
    std::fs::write(dir.join(&main), out.table.to_csv())?;
    let mut outputs = vec![main];
    for (name, body) in &out.extra {
        std::fs::write(dir.join(name), body)?;
        outputs.push(name.clone());
    }
    let manifest = Manifest {
        subcommand: &cfg.subcommand,
        config: &cfg.values,
        config_sha256: cfg.hash(),
        seed: cfg.parse_usize("seed")?,
        version: env!("CARGO_PKG_VERSION"),
        outputs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(dir)
}

/// Worker-thread count from [`THREADS_ENV`].
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|t| *t > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// `f` over `items` on [`thread_count`] workers; results in input order.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let threads = thread_count().min(items.len()).max(1);
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<O>> = (0..items.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                results.lock().expect("collector lock")[i] = Some(r);
            });
        }
    });
    slots.into_iter().map(|o| o.expect("every item processed")).collect()
}

/// Computes the artifacts of a validated configuration without writing them.
pub fn compute(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let seed = cfg.parse_usize("seed")? as u64;
    match cfg.subcommand.as_str() {
        "verify-identities" => verify_identities(cfg, seed),
        "dtn-spectrum" => dtn_spectrum(cfg, seed),
        "green-constants" => green_constants(cfg),
        "green-flux" => green_flux(cfg, seed),
        "ansatz-fit" => ansatz_fit(cfg),
        "eig" => eig(cfg),
        "eig-sweep" => eig_sweep(cfg),
        "shape-derivative" => shape_derivative_run(cfg, seed),
        "extremal-solve" => extremal_solve(cfg, seed),
        other => Err(UsageError(format!("unknown subcommand `{other}`")).into()),
    }
}

fn plain(table: Table) -> RunOutput {
    RunOutput { table, extra: Vec::new() }
}

fn verify_identities(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, RunError> {
    let dims = cfg.parse_dims("n")?;
    let trials = cfg.parse_usize("trials")?;
    let jobs: Vec<(usize, usize)> = dims.iter().flat_map(|&n| (0..trials).map(move |t| (n, t))).collect();
    let results = parallel_map(&jobs, |&(n, t)| -> crate::Result<Vec<Vec<Cell>>> {
        let s = seed.wrapping_mul(1000).wrapping_add((n * 100 + t) as u64);
        let curv = random_curvature::<f64>(n, s)?;
        Ok(verify_appendix(n, &curv)?
            .into_iter()
            .map(|r| {
                vec![int(n), int(t), Cell::Int(s as i64), int(r.lemma as usize), int(r.sigma), num(r.computed), num(r.claimed), num(r.residual())]
            })
            .collect())
    });
    let mut table = Table::new(&["n", "trial", "seed", "lemma", "sigma", "computed", "claimed", "residual"]);
    for r in results {
        table.rows.extend(r?);
    }
    Ok(plain(table))
}

fn dtn_spectrum(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, RunError> {
    let dims = cfg.parse_dims("n")?;
    let phi0p = cfg.parse_f64("phi0p")?;
    let lmax = cfg.parse_usize("lmax")?;
    let trials = cfg.parse_usize("trials")?;
    let mut table = Table::new(&[
        "n", "phi0p", "trial", "seed", "j", "multiplier", "definitional_gap", "self_adjoint_gap", "kernel_norm",
    ]);
    for n in dims {
        let grid = SphereGrid::<f64>::shared(n, lmax)?;
        let profile = RadialProfile::new(n, phi0p);
        for t in 0..trials {
            let s = seed.wrapping_add((n * 1000 + t) as u64);
            let u = random_band_limited(Arc::clone(&grid), lmax, 1, s)?;
            let v = random_band_limited(Arc::clone(&grid), lmax, 1, s.wrapping_add(500))?;
            let hu = apply_h_multiplier(&profile, &u)?;
            let hd = apply_h_definitional(&profile, &u)?;
            let hv = apply_h_multiplier(&profile, &v)?;
            let sa = (hu.inner(&v) - u.inner(&hv)).abs() / (hu.l2_norm() * v.l2_norm()).max(1e-300);
            let by_degree_u = u.degree_norms()?;
            let gap_by_degree = hu.axpy(-1.0, &hd).decompose(lmax)?.degree_norms()?;
            for j in 1..=lmax {
                let kernel = if j == 1 { hu.degree_norms()?[1] } else { 0.0 };
                let rel = gap_by_degree[j] / by_degree_u[j].max(1e-300);
                table.rows.push(vec![
                    int(n), num(phi0p), int(t), Cell::Int(s as i64), int(j), num(profile.multiplier(j)), num(rel), num(sa), num(kernel),
                ]);
            }
        }
    }
    Ok(plain(table))
}

fn green_constants(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let dims = cfg.parse_dims("n")?;
    let phi0p = cfg.parse_f64("phi0p")?;
    let coefficients = if cfg.get("coefficients") == "derived" { Coefficients::Derived } else { Coefficients::Printed };
    let mut table = Table::new(&[
        "n", "phi0p", "coefficients", "c1", "c2", "c_printed", "consistent", "mixed_sign", "printed_over_consistent", "printed_over_mixed",
    ]);
    for n in dims {
        if n < 4 {
            continue;
        }
        let k = green::flux_constants_with::<f64>(n, phi0p, coefficients)?;
        let m = 1.0 - n as f64;
        let consistent = -k.c1 + m * k.c2;
        let mixed = k.c1 + m * k.c2;
        table.rows.push(vec![
            int(n), num(phi0p), text(cfg.get("coefficients")), num(k.c1), num(k.c2), num(k.cn), num(consistent), num(mixed),
            num(k.cn / consistent), num(k.cn / mixed),
        ]);
    }
    Ok(plain(table))
}

fn green_flux(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, RunError> {
    let dims = cfg.parse_dims("n")?;
    let trials = cfg.parse_usize("trials")?;
    let eps = cfg.parse_f64("eps")?;
    let jobs: Vec<(usize, usize)> = dims.iter().flat_map(|&n| (0..trials).map(move |t| (n, t))).collect();
    let rows = parallel_map(&jobs, |&(n, t)| -> crate::Result<Vec<Cell>> {
        let s = seed.wrapping_mul(1000).wrapping_add((n * 100 + t) as u64);
        let curv = random_curvature::<f64>(n, s)?;
        let a = crate::spherical::random_directions(n, 1, s).remove(0);
        let k = green::flux_constants::<f64>(n, 1.0)?;
        let ds: f64 = curv.dscal().iter().zip(&a).map(|(x, y)| x * y).sum();
        let oracle = green::flux_integral(&curv, n, eps, &a, 1.0)?;
        let predicted1 = k.c1 * eps.powi(3) * ds;
        let pairing = green::h_hat_pairing(&curv, n, eps, &a, 1.0)?;
        let predicted2 = k.c2 * eps.powi(3) * ds;
        let rel = |x: f64, y: f64| if y == 0.0 { x.abs() } else { (x - y).abs() / y.abs() };
        Ok(vec![
            int(n), int(t), Cell::Int(s as i64), num(eps), num(oracle), num(predicted1), num(rel(oracle, predicted1)),
            num(pairing), num(predicted2), num(rel(pairing, predicted2)),
        ])
    });
    let mut table = Table::new(&[
        "n", "trial", "seed", "eps", "flux_oracle", "c1_prediction", "c1_rel_error", "h_hat_pairing", "c2_prediction", "c2_rel_error",
    ]);
    for r in rows {
        table.rows.push(r?);
    }
    Ok(plain(table))
}

fn ansatz_fit(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let model = cfg.model()?;
    let p = cfg.point("p", &model)?;
    let eps = cfg.parse_list("eps")?;
    let mut acfg = ansatz::AnsatzConfig { tol: cfg.parse_f64("tol")?, ..Default::default() };
    if cfg.get("lmax") != "auto" {
        acfg.lmax = Some(cfg.parse_usize("lmax")?);
    }
    let fits = parallel_map(&eps, |&e| ansatz::fit_with(&model, &p, e, &acfg));
    let mut table = Table::new(&["model", "p", "eps", "lambda_fit", "phi_sup", "mu", "iterations", "residual"]);
    for (e, f) in eps.iter().zip(fits) {
        let f = f?;
        let mu = ansatz::mu(&model, &p, f.lambda, &f.phi, *e);
        table.rows.push(vec![
            text(cfg.get("model")), text(join_point(&p)), num(*e), num(f.lambda), num(f.phi.max_abs()), num(mu),
            int(f.iterations), num(f.residual),
        ]);
    }
    Ok(plain(table))
}

fn solver_config(cfg: &ExperimentConfig) -> Result<SolverConfig, UsageError> {
    Ok(SolverConfig::default().with_min_nodes(cfg.parse_f64("min_nodes")?))
}

fn eig(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let model = cfg.model()?;
    let p = cfg.point("p", &model)?;
    let eps = cfg.parse_list("eps")?;
    let h = cfg.parse_f64("h")?;
    let rich = cfg.parse_bool("richardson")?;
    let scfg = solver_config(cfg)?;
    let mut table = Table::new(&[
        "model", "p", "eps", "h", "lambda", "lambda_2h", "lambda_richardson", "residual", "outer_iterations", "cg_iterations",
    ]);
    let runs = parallel_map(&eps, |&e| -> crate::Result<Vec<Cell>> {
        let hole = (e > 0.0).then(|| HoleShape::round(&p, e));
        let fine = first_eigen(&model, hole.as_ref(), h, &scfg)?;
        let (coarse, extrap) = if rich {
            let c = first_eigen(&model, hole.as_ref(), 2.0 * h, &scfg.clone().with_min_nodes(scfg.min_nodes_across / 2.0))?;
            (c.lambda, richardson(fine.lambda, c.lambda, 2.0))
        } else {
            (f64::NAN, f64::NAN)
        };
        Ok(vec![
            text(cfg.get("model")), text(join_point(&p)), num(e), num(h), num(fine.lambda), num(coarse), num(extrap),
            num(fine.residual), int(fine.outer_iterations), int(fine.cg_iterations),
        ])
    });
    for r in runs {
        table.rows.push(r?);
    }
    Ok(plain(table))
}

fn eig_sweep(cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    let model = cfg.model()?;
    let n = model.dim();
    let p = cfg.point("p", &model)?;
    let eps = cfg.parse_list("eps")?;
    let h = cfg.parse_f64("h")?;
    let rich = cfg.parse_bool("richardson")?;
    let scfg = solver_config(cfg)?;
    let intercept = match cfg.get("intercept") {
        "auto" => n >= 3,
        _ => cfg.parse_bool("intercept")?,
    };
    let rows = parallel_map(&eps, |&e| eigensolve::sweep(&model, &p, &[e], h, rich, &scfg));
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    let samples: Vec<(f64, f64)> = all.iter().map(|r| (r.eps, r.lambda)).collect();
    let law = if intercept {
        eigensolve::fit_law_with_intercept(n, &samples)?
    } else {
        eigensolve::fit_law(n, model.lambda0(), &samples)?
    };
    let mut table = Table::new(&["model", "p", "eps", "h", "richardson", "lambda", "residual"]);
    for r in &all {
        table.rows.push(vec![
            text(cfg.get("model")), text(join_point(&p)), num(r.eps), num(r.h), text(rich.to_string()), num(r.lambda), num(r.residual),
        ]);
    }
    let predicted = green::normalization_constant::<f64>(n) * model.phi0(&p).powi(2);
    let summary = serde_json::json!({
        "model": cfg.get("model"),
        "p": p,
        "law": law,
        "predicted_mu": predicted,
        "relative_error": (law.mu_hat - predicted) / predicted.abs(),
    });
    let body = serde_json::to_string_pretty(&summary).map_err(|e| RunError::Io(std::io::Error::other(e)))? + "\n";
    Ok(RunOutput { table, extra: vec![("law.json".into(), body)] })
}

fn shape_derivative_run(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, RunError> {
    let model = cfg.model()?;
    let n = model.dim();
    let p = cfg.point("p", &model)?;
    let eps = *cfg.parse_list("eps")?.first().ok_or_else(|| UsageError("key `eps` is empty".into()))?;
    let h = cfg.parse_f64("h")?;
    let fields = cfg.parse_usize("fields")?;
    let lmax = cfg.parse_usize("lmax")?;
    let step = cfg.parse_f64("step")? * h;
    let scfg = SolverConfig::default();
    let hole = HoleShape::round(&p, eps);
    let grid = SphereGrid::<f64>::shared(n, lmax)?;
    let seeds: Vec<u64> = (0..fields as u64).map(|i| seed.wrapping_add(i)).collect();
    let rows = parallel_map(&seeds, |&s| -> crate::Result<Vec<Cell>> {
        let xi = random_band_limited(Arc::clone(&grid), lmax, 0, s)?;
        let xi = xi.map_degrees(|_, c| c / xi.max_abs())?;
        let hd = shape_derivative(&model, &hole, &xi, h, &scfg)?;
        let fd = fd_shape_derivative(&model, &hole, &xi, h, step, &scfg)?;
        Ok(vec![
            text(cfg.get("model")), text(join_point(&p)), num(eps), num(h), Cell::Int(s as i64), text("normal"), num(hd.lambda),
            num(hd.derivative), num(fd), num((hd.derivative - fd).abs() / fd.abs().max(1e-300)),
        ])
    });
    let mut table = Table::new(&[
        "model", "p", "eps", "h", "seed", "field", "lambda", "hadamard", "finite_difference", "relative_error",
    ]);
    for r in rows {
        table.rows.push(r?);
    }
    // a rigid rotation moves the boundary tangentially
    if n == 2 {
        let base = first_eigen(&model, Some(&hole), h, &scfg)?;
        let rot = |x: &[f64]| vec![-x[1], x[0]];
        let lm = 8;
        let plus = first_eigen(&model, Some(&eigensolve::deform_hole(&hole, &rot, step, lm)?), h, &scfg)?;
        let minus = first_eigen(&model, Some(&eigensolve::deform_hole(&hole, &rot, -step, lm)?), h, &scfg)?;
        let d = (plus.lambda - minus.lambda) / (2.0 * step);
        table.rows.push(vec![
            text(cfg.get("model")), text(join_point(&p)), num(eps), num(h), Cell::Int(-1), text("tangential"), num(base.lambda),
            num(f64::NAN), num(d), num(d.abs() / base.lambda),
        ]);
    }
    Ok(plain(table))
}

fn extremal_solve(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, RunError> {
    let model = cfg.model()?;
    let p0 = cfg.point("p0", &model)?;
    let eps = *cfg.parse_list("eps")?.first().ok_or_else(|| UsageError("key `eps` is empty".into()))?;
    let h = cfg.parse_f64("h")?;
    let ecfg = ExtremalConfig { tol: cfg.parse_f64("tol")?, ..Default::default() };
    let fields = cfg.parse_usize("fields")?;
    let sol = if cfg.parse_bool("relocate")? {
        extremal::relocate(&model, eps, &p0, h, &ecfg)?
    } else {
        let m = extremal::solve_modified(&model, &p0, eps, h, &ecfg)?;
        extremal::ExtremalSolution::fixed_centre(&p0, eps, m)
    };
    let report = extremal::extremality_residual(&model, &sol, h, fields, seed, &ecfg)?;
    let mut table = Table::new(&["model", "eps", "h", "p", "iteration", "residual"]);
    for (i, r) in sol.residual_history.iter().enumerate() {
        table.rows.push(vec![text(cfg.get("model")), num(eps), num(h), text(join_point(&sol.p)), int(i), num(*r)]);
    }
    let summary = serde_json::json!({
        "solution": sol.summary(),
        "certificate": report,
    });
    let body = serde_json::to_string_pretty(&summary).map_err(|e| RunError::Io(std::io::Error::other(e)))? + "\n";
    Ok(RunOutput { table, extra: vec![("summary.json".into(), body)] })
}

/// Reads a written CSV back (for reproducibility checks).
pub fn read_output(dir: &Path, subcommand: &str) -> std::io::Result<String> {
    std::fs::read_to_string(dir.join(format!("{subcommand}.csv")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn empty_arguments_give_usage_status() {
        assert_eq!(main_with_args(&[]), EXIT_USAGE);
        assert_ne!(EXIT_USAGE, EXIT_NUMERIC);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = ExperimentConfig::from_args(&args("eig --modle torus2")).unwrap_err();
        assert!(e.0.contains("modle"), "{e}");
        let e = ExperimentConfig::from_pairs("eig", [("modle".to_string(), "torus2".to_string())]).unwrap_err();
        assert!(e.0.contains("modle"), "{e}");
        let e = ExperimentConfig::from_args(&args("eig --h abc")).unwrap_err();
        assert!(e.0.contains("`h`"), "{e}");
        assert!(ExperimentConfig::from_args(&args("frobnicate")).is_err());
        assert_eq!(main_with_args(&args("eig --model klein2")), EXIT_USAGE);
    }

    #[test]
    fn config_file_and_overrides() {
        let dir = std::env::temp_dir().join(format!("exdom-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.cfg");
        std::fs::write(&path, "# sweep\nmodel = \"box2\"\neps = [0.01, 0.02]\nh = \"1/128\"\n").unwrap();
        let cfg = ExperimentConfig::from_args(&args(&format!("eig-sweep --config {} --h 1/256", path.display()))).unwrap();
        assert_eq!(cfg.get("model"), "box2");
        assert_eq!(cfg.parse_f64("h").unwrap(), 1.0 / 256.0);
        assert_eq!(cfg.parse_list("eps").unwrap(), vec![0.01, 0.02]);
        let other = ExperimentConfig::from_args(&args(&format!("eig-sweep --config {} --h 1/256", path.display()))).unwrap();
        assert_eq!(cfg.hash(), other.hash());
        let changed = ExperimentConfig::from_args(&args(&format!("eig-sweep --config {} --h 1/128", path.display()))).unwrap();
        assert_ne!(cfg.hash(), changed.hash());
        std::fs::write(&path, "colour = \"red\"\n").unwrap();
        let e = ExperimentConfig::from_args(&args(&format!("eig --config {}", path.display()))).unwrap_err();
        assert!(e.0.contains("colour"));
    }

    #[test]
    fn dims_and_numbers() {
        let cfg = ExperimentConfig::from_args(&args("verify-identities --n 3..5")).unwrap();
        assert_eq!(cfg.parse_dims("n").unwrap(), vec![3, 4, 5]);
        assert!(ExperimentConfig::from_args(&args("verify-identities --n 5..3")).is_err());
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn runs_are_byte_identical() {
        let dir = std::env::temp_dir().join(format!("exdom-cli-run-{}", std::process::id()));
        let run_once = |sub: &str, extra: &str| {
            let out = dir.join(sub);
            let cfg = ExperimentConfig::from_args(&args(&format!("{sub} --out {} {extra}", out.display()))).unwrap();
            run(&cfg).unwrap();
            (read_output(&out, sub).unwrap(), std::fs::read_to_string(out.join("manifest.json")).unwrap())
        };
        for (sub, extra) in [
            ("verify-identities", "--n 3..4 --trials 3"),
            ("dtn-spectrum", "--lmax 8 --trials 2"),
            ("green-constants", ""),
            ("green-flux", "--trials 2"),
            ("ansatz-fit", "--model box2 --eps 0.01,0.005"),
        ] {
            let a = run_once(sub, extra);
            let b = run_once(sub, extra);
            assert_eq!(a, b, "{sub}");
            assert!(a.0.lines().count() > 1);
            assert!(a.1.contains("config_sha256"));
        }
        let csv = run_once("verify-identities", "--n 3..4 --trials 3").0;
        let worst = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<usize> = (0..50).collect();
        assert_eq!(parallel_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
