//! Command-line configuration and command dispatch.
//!
//! Settings come from a flat `key = value` file (`--config`) and from flags;
//! flags win. Every run writes `manifest.txt` into the output directory. The
//! manifest is itself a config file holding every resolved setting, so
//! `cstl --config <out>/manifest.txt` repeats the run exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::admm::{build_factored_system, AdmmOptions, PooledSystem};
use crate::error::{Error, Result};
use crate::io::{
    self, fmt_f64, load_coefficients, load_csv, save_with, write_aggregate, write_coefficients, write_matrix,
    write_results, ResponseColumn, ResultRow, ResultsTable,
};
use crate::model::{build_transfer_structure, Dataset, Domain};
use crate::oracle::oracle_fit;
use crate::sim::{
    abs_difference_matrix, make_scenario, pairwise_difference_summary, run_replications, Method, ScenarioSpec, Setting,
};
use crate::tuning::{grid_search_with_init, initial_estimates, mse, CstlConfig, CstlFit, TuningGrid};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug, Default, Clone)]
#[command(
    name = "cstl",
    version,
    about = "Cross-semantic transfer learning for linear regression"
)]
pub struct CliArgs {
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// simulate, fit, oracle or tune.
    #[arg(long)]
    pub command: Option<String>,
    /// S1, S2, S3_noperm, S3_perm, S4, EX1 or EX2.
    #[arg(long)]
    pub setting: Option<String>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub nt: Option<usize>,
    #[arg(long)]
    pub ns: Option<usize>,
    #[arg(long)]
    pub dt: Option<usize>,
    #[arg(long)]
    pub ds: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated, descending.
    #[arg(long = "lambda0-grid")]
    pub lambda0_grid: Option<String>,
    /// Comma-separated, descending.
    #[arg(long = "lambda1-grid")]
    pub lambda1_grid: Option<String>,
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long = "scad-a")]
    pub scad_a: Option<f64>,
    #[arg(long = "eps-fuse")]
    pub eps_fuse: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Target-domain CSV (fit, oracle, tune).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Source-domain CSV (fit, oracle, tune).
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Held-out target CSV for prediction error (fit).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Response column name; defaults to the last column.
    #[arg(long)]
    pub response: Option<String>,
    /// True target coefficients, one per line (oracle).
    #[arg(long = "beta-true")]
    pub beta_true: Option<PathBuf>,
    /// True source coefficients, one per line (oracle).
    #[arg(long = "theta-true")]
    pub theta_true: Option<PathBuf>,
    /// Comma-separated subset of ols, lasso, cstl, oracle (simulate).
    #[arg(long)]
    pub methods: Option<String>,
    /// Training fraction of target rows for repeated random splits (fit).
    #[arg(long = "split-fraction")]
    pub split_fraction: Option<f64>,
    /// Number of repeated random splits (fit); 0 fits once on all rows.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    /// ADMM primal and dual tolerance; defaults scale with the dimensions.
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Oracle,
    Tune,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit => "fit",
            Command::Oracle => "oracle",
            Command::Tune => "tune",
        }
    }
}

/// Keys accepted in config files, in manifest order.
pub const KEYS: [&str; 30] = [
    "version",
    "command",
    "setting",
    "m",
    "h",
    "nt",
    "ns",
    "dt",
    "ds",
    "reps",
    "seed",
    "methods",
    "target",
    "source",
    "test",
    "response",
    "beta_true",
    "theta_true",
    "split_fraction",
    "repeats",
    "lambda0_grid",
    "lambda1_grid",
    "rho0",
    "rho1",
    "scad_a",
    "eps_fuse",
    "max_iter",
    "eps",
    "structure_tol",
    "out",
];

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_config_str(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = normalize_key(k);
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(existing, _)| *existing == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_grid(name: &str, value: &str) -> Result<Vec<f64>> {
    let grid = value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("`{name}`: `{s}` is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    if grid.is_empty() {
        return Err(Error::Config(format!("`{name}` is empty")));
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::Config(format!("`{name}` entries must be finite and > 0")));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::Config(format!("`{name}` must be sorted descending")));
    }
    Ok(grid)
}

fn format_grid(grid: &[f64]) -> String {
    grid.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub scenario: Option<ScenarioSpec>,
    pub methods: Vec<Method>,
    pub target: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub response: Option<String>,
    pub beta_true: Option<PathBuf>,
    pub theta_true: Option<PathBuf>,
    pub split_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    pub lambda0_grid: Option<Vec<f64>>,
    pub lambda1_grid: Option<Vec<f64>>,
    pub rho0: Option<f64>,
    pub rho1: Option<f64>,
    pub scad_a: f64,
    pub eps_fuse: f64,
    pub max_iter: Option<usize>,
    pub eps: Option<f64>,
    pub structure_tol: f64,
    pub output_dir: PathBuf,
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }
}

impl RunConfig {
    /// Builds and validates a config from normalized key/value pairs.
    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self> {
        if let Some(unknown) = pairs.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "unknown key `{unknown}`; known keys: {}",
                KEYS.join(", ")
            )));
        }
        let mut p = Pairs(pairs);
        if let Some(v) = p.take("version") {
            if v != VERSION {
                eprintln!("warning: manifest written by version {v}, running {VERSION}");
            }
        }
        let command = match p.take("command").as_deref() {
            Some("simulate") => Command::Simulate,
            Some("fit") => Command::Fit,
            Some("oracle") => Command::Oracle,
            Some("tune") => Command::Tune,
            Some(other) => {
                return Err(Error::Config(format!(
                    "`command`: unknown command `{other}`; expected simulate, fit, oracle or tune"
                )))
            }
            None => return Err(Error::Config("`command` is required".into())),
        };
        let seed = p.parse::<u64>("seed")?.unwrap_or(1);

        let setting = p.take("setting");
        let scenario = match (command, setting) {
            (Command::Simulate, None) => return Err(Error::Config("`setting` is required for simulate".into())),
            (Command::Simulate, Some(s)) => {
                let setting: Setting = s.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
                let mut spec = ScenarioSpec::desk(setting);
                spec.seed = seed;
                if let Some(v) = p.parse("m")? {
                    spec.m_overlap = v;
                }
                if let Some(v) = p.parse("h")? {
                    spec.h = v;
                }
                if let Some(v) = p.parse("nt")? {
                    spec.n_t = v;
                }
                if let Some(v) = p.parse("ns")? {
                    spec.n_s = v;
                }
                if let Some(v) = p.parse("dt")? {
                    spec.d_t = v;
                }
                if let Some(v) = p.parse("ds")? {
                    spec.d_s = v;
                }
                if let Some(v) = p.parse("reps")? {
                    spec.replicates = v;
                }
                spec.validate().map_err(|e| Error::Config(e.to_string()))?;
                for w in spec.warnings() {
                    eprintln!("warning: {w}");
                }
                Some(spec)
            }
            (_, _) => None,
        };
        for key in ["m", "h", "nt", "ns", "dt", "ds", "reps"] {
            if scenario.is_none() && p.take(key).is_some() {
                return Err(Error::Config(format!("`{key}` only applies to simulate")));
            }
        }

        let methods = match p.take("methods") {
            None => vec![Method::Lasso, Method::Cstl, Method::Oracle],
            Some(list) => {
                let mut ms = list
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<Method>().map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                ms.sort();
                ms.dedup();
                if ms.is_empty() {
                    return Err(Error::Config("`methods` is empty".into()));
                }
                ms
            }
        };

        let path = |p: &mut Pairs, key: &str| p.take(key).map(PathBuf::from);
        let target = path(&mut p, "target");
        let source = path(&mut p, "source");
        let test = path(&mut p, "test");
        let beta_true = path(&mut p, "beta_true");
        let theta_true = path(&mut p, "theta_true");
        let response = p.take("response");
        if matches!(command, Command::Fit | Command::Oracle | Command::Tune) {
            for (key, v) in [("target", &target), ("source", &source)] {
                match v {
                    None => return Err(Error::Config(format!("`{key}` is required for {}", command.as_str()))),
                    Some(path) if !path.exists() => {
                        return Err(Error::Config(format!("`{key}`: {} does not exist", path.display())))
                    }
                    _ => {}
                }
            }
        }
        if command == Command::Oracle && (beta_true.is_none() || theta_true.is_none()) {
            return Err(Error::Config(
                "`beta_true` and `theta_true` are required for oracle".into(),
            ));
        }

        let split_fraction = p.parse::<f64>("split_fraction")?.unwrap_or(0.8);
        if !(split_fraction > 0.0 && split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "`split_fraction` must lie in (0, 1), got {split_fraction}"
            )));
        }
        let repeats = p.parse::<usize>("repeats")?.unwrap_or(0);

        let lambda0_grid = p
            .take("lambda0_grid")
            .map(|v| parse_grid("lambda0_grid", &v))
            .transpose()?;
        let lambda1_grid = p
            .take("lambda1_grid")
            .map(|v| parse_grid("lambda1_grid", &v))
            .transpose()?;
        if lambda0_grid.is_some() != lambda1_grid.is_some() {
            return Err(Error::Config(
                "give both `lambda0_grid` and `lambda1_grid`, or neither".into(),
            ));
        }
        let defaults = CstlConfig::default();
        let positive = |p: &mut Pairs, key: &str, default: f64| -> Result<f64> {
            let v = p.parse::<f64>(key)?.unwrap_or(default);
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("`{key}` must be finite and > 0, got {v}")));
            }
            Ok(v)
        };
        let optional_positive = |p: &mut Pairs, key: &str| -> Result<Option<f64>> {
            let v = p.parse::<f64>(key)?;
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Config(format!("`{key}` must be finite and > 0, got {v}")));
                }
            }
            Ok(v)
        };
        let rho0 = optional_positive(&mut p, "rho0")?;
        let rho1 = optional_positive(&mut p, "rho1")?;
        let scad_a = positive(&mut p, "scad_a", defaults.scad_a)?;
        if scad_a <= 2.0 {
            return Err(Error::Config(format!("`scad_a` must exceed 2, got {scad_a}")));
        }
        let eps_fuse = p.parse::<f64>("eps_fuse")?.unwrap_or(defaults.eps_fuse);
        if !(eps_fuse >= 0.0) || !eps_fuse.is_finite() {
            return Err(Error::Config(format!(
                "`eps_fuse` must be finite and >= 0, got {eps_fuse}"
            )));
        }
        let max_iter = p.parse::<usize>("max_iter")?;
        if max_iter == Some(0) {
            return Err(Error::Config("`max_iter` must be at least 1".into()));
        }
        let eps = p.parse::<f64>("eps")?;
        if let Some(e) = eps {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::Config(format!("`eps` must be finite and > 0, got {e}")));
            }
        }
        let structure_tol = p.parse::<f64>("structure_tol")?.unwrap_or(0.0);
        if !(structure_tol >= 0.0) || !structure_tol.is_finite() {
            return Err(Error::Config("`structure_tol` must be finite and >= 0".into()));
        }
        let output_dir = path(&mut p, "out").unwrap_or_else(|| PathBuf::from("cstl-out"));

        Ok(RunConfig {
            command,
            scenario,
            methods,
            target,
            source,
            test,
            response,
            beta_true,
            theta_true,
            split_fraction,
            repeats,
            seed,
            lambda0_grid,
            lambda1_grid,
            rho0,
            rho1,
            scad_a,
            eps_fuse,
            max_iter,
            eps,
            structure_tol,
            output_dir,
        })
    }

    /// Reads `--config` if given, applies flag overrides, and validates.
    pub fn from_args(args: &CliArgs) -> Result<Self> {
        let mut pairs: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            pairs.extend(parse_config_str(&text)?);
        }
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.insert(k.to_string(), v);
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        set("command", args.command.clone());
        set("setting", args.setting.clone());
        set("m", args.m.map(|v| v.to_string()));
        set("h", args.h.map(|v| v.to_string()));
        set("nt", args.nt.map(|v| v.to_string()));
        set("ns", args.ns.map(|v| v.to_string()));
        set("dt", args.dt.map(|v| v.to_string()));
        set("ds", args.ds.map(|v| v.to_string()));
        set("reps", args.reps.map(|v| v.to_string()));
        set("seed", args.seed.map(|v| v.to_string()));
        set("lambda0_grid", args.lambda0_grid.clone());
        set("lambda1_grid", args.lambda1_grid.clone());
        set("rho0", args.rho0.map(|v| v.to_string()));
        set("rho1", args.rho1.map(|v| v.to_string()));
        set("scad_a", args.scad_a.map(|v| v.to_string()));
        set("eps_fuse", args.eps_fuse.map(|v| v.to_string()));
        set("out", s(&args.out));
        set("target", s(&args.target));
        set("source", s(&args.source));
        set("test", s(&args.test));
        set("response", args.response.clone());
        set("beta_true", s(&args.beta_true));
        set("theta_true", s(&args.theta_true));
        set("methods", args.methods.clone());
        set("split_fraction", args.split_fraction.map(|v| v.to_string()));
        set("repeats", args.repeats.map(|v| v.to_string()));
        set("max_iter", args.max_iter.map(|v| v.to_string()));
        set("eps", args.eps.map(|v| v.to_string()));
        Self::from_pairs(pairs)
    }

    /// Resolved settings as a config file, with `lambda` grids filled in when
    /// `grid` is supplied.
    pub fn to_manifest(&self, grid: Option<&TuningGrid>) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("version", VERSION.to_string());
        put("command", self.command.as_str().to_string());
        if let Some(spec) = &self.scenario {
            put("setting", spec.setting.as_str().to_string());
            put("m", spec.m_overlap.to_string());
            put("h", spec.h.to_string());
            put("nt", spec.n_t.to_string());
            put("ns", spec.n_s.to_string());
            put("dt", spec.d_t.to_string());
            put("ds", spec.d_s.to_string());
            put("reps", spec.replicates.to_string());
        }
        put("seed", self.seed.to_string());
        put(
            "methods",
            self.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","),
        );
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        for (k, v) in [
            ("target", path(&self.target)),
            ("source", path(&self.source)),
            ("test", path(&self.test)),
            ("response", self.response.clone()),
            ("beta_true", path(&self.beta_true)),
            ("theta_true", path(&self.theta_true)),
        ] {
            if let Some(v) = v {
                put(k, v);
            }
        }
        put("split_fraction", self.split_fraction.to_string());
        put("repeats", self.repeats.to_string());
        let g0 = grid
            .map(|g| g.lambda0_grid.clone())
            .or_else(|| self.lambda0_grid.clone());
        let g1 = grid
            .map(|g| g.lambda1_grid.clone())
            .or_else(|| self.lambda1_grid.clone());
        if let (Some(g0), Some(g1)) = (g0, g1) {
            put("lambda0_grid", format_grid(&g0));
            put("lambda1_grid", format_grid(&g1));
        }
        if let Some(v) = self.rho0 {
            put("rho0", v.to_string());
        }
        if let Some(v) = self.rho1 {
            put("rho1", v.to_string());
        }
        put("scad_a", self.scad_a.to_string());
        put("eps_fuse", self.eps_fuse.to_string());
        if let Some(v) = self.max_iter {
            put("max_iter", v.to_string());
        }
        if let Some(v) = self.eps {
            put("eps", v.to_string());
        }
        put("structure_tol", self.structure_tol.to_string());
        put("out", self.output_dir.display().to_string());
        out
    }

    /// Solver settings for data with the given dimensions.
    pub fn cstl_config(&self, d_t: usize, d_s: usize) -> CstlConfig {
        let grid = match (&self.lambda0_grid, &self.lambda1_grid) {
            (Some(g0), Some(g1)) => Some(TuningGrid {
                lambda0_grid: g0.clone(),
                lambda1_grid: g1.clone(),
                eps_fuse: self.eps_fuse,
            }),
            _ => None,
        };
        let admm = (self.max_iter.is_some() || self.eps.is_some()).then(|| {
            let base = AdmmOptions::for_dims(d_t, d_s);
            AdmmOptions {
                eps_pri: self.eps.unwrap_or(base.eps_pri),
                eps_dual: self.eps.unwrap_or(base.eps_dual),
                max_iter: self.max_iter.unwrap_or(base.max_iter),
            }
        });
        let mut cfg = CstlConfig {
            grid,
            eps_fuse: self.eps_fuse,
            rho0: self.rho0,
            rho1: self.rho1,
            scad_a: self.scad_a,
            admm,
            ..CstlConfig::default()
        };
        cfg.lasso.seed = self.seed;
        cfg
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Executes a validated config and writes its artifacts.
pub fn run_command(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    match cfg.command {
        Command::Simulate => run_simulate(cfg),
        Command::Fit => run_fit(cfg),
        Command::Oracle => run_oracle(cfg),
        Command::Tune => run_tune(cfg),
    }
}

fn load_pair(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let response = ResponseColumn::from_option(cfg.response.as_deref());
    let target = load_csv(cfg.target.as_deref().expect("validated"), &response, Domain::Target)?;
    let source = load_csv(cfg.source.as_deref().expect("validated"), &response, Domain::Source)?;
    Ok((target, source))
}

fn run_simulate(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.scenario.as_ref().expect("validated");
    let cstl = cfg.cstl_config(spec.d_t, spec.d_s);
    let run = run_replications(spec, &cfg.methods, &cstl)?;
    let dir = &cfg.output_dir;
    save_with(&dir.join("replicates.csv"), |w| write_results(w, &run.table))?;
    save_with(&dir.join("aggregate.csv"), |w| {
        write_aggregate(w, &run.table.aggregate())
    })?;
    if !run.failures.is_empty() {
        let mut text = String::from("replicate,error\n");
        for (rep, msg) in &run.failures {
            let _ = writeln!(text, "{rep},\"{}\"", msg.replace('"', "'"));
        }
        write_text(&dir.join("failures.csv"), &text)?;
    }
    let fits: Vec<_> = run.estimates.iter().filter_map(|e| e.cstl.clone()).collect();
    if spec.fixed_truth() && !fits.is_empty() {
        let truth = make_scenario(spec, 1)?;
        let summary = pairwise_difference_summary(&fits, &truth)?;
        save_with(&dir.join("pairwise_mean.csv"), |w| write_matrix(w, &summary.mean))?;
        save_with(&dir.join("pairwise_truth.csv"), |w| write_matrix(w, &summary.truth))?;
    }
    let grid = cstl
        .grid
        .clone()
        .unwrap_or_else(|| cstl.resolved_grid(spec.d_t, spec.n_t));
    write_text(&dir.join("manifest.txt"), &cfg.to_manifest(Some(&grid)))
}

fn fit_once(target: &Dataset, source: &Dataset, cstl: &CstlConfig) -> Result<CstlFit> {
    let (it, is) = initial_estimates(target, source, &cstl.lasso)?;
    let ps = PooledSystem::new(target, source)?;
    let (rho0, rho1) = cstl.resolved_rho(ps.d_t(), ps.d_s());
    let fs = build_factored_system(&ps, rho0, rho1)?;
    grid_search_with_init(&ps, &fs, &it.fit.coefficients, &is.fit.coefficients, cstl)
}

fn summary_text(fit: &CstlFit, test_mse: Option<f64>) -> String {
    let b = &fit.best;
    let mut s = String::from("lambda0,lambda1,bic,df,objective,iterations,converged,test_mse\n");
    let _ = writeln!(
        s,
        "{},{},{},{},{},{},{},{}",
        fmt_f64(b.lambda0),
        fmt_f64(b.lambda1),
        fmt_f64(b.bic),
        b.df,
        fmt_f64(b.objective),
        b.iterations,
        b.converged,
        test_mse.map(fmt_f64).unwrap_or_else(|| io::NA.into())
    );
    s
}

fn run_fit(cfg: &RunConfig) -> Result<()> {
    let (target, source) = load_pair(cfg)?;
    let mut cstl = cfg.cstl_config(target.d(), source.d());
    // Resolve the default grid once from all target rows, so the random
    // splits and a re-run from the manifest all search the same grid.
    let grid = cstl.resolved_grid(target.d(), target.n());
    cstl.grid = Some(grid.clone());
    let dir = &cfg.output_dir;
    let fit = fit_once(&target, &source, &cstl)?;
    let test_mse = match &cfg.test {
        Some(path) => {
            let test = load_csv(
                path,
                &ResponseColumn::from_option(cfg.response.as_deref()),
                Domain::Target,
            )?;
            Some(mse(&fit.best.beta.values, &test)?)
        }
        None => None,
    };
    save_with(&dir.join("coefficients.csv"), |w| {
        write_coefficients(w, &[&fit.best.beta, &fit.best.theta])
    })?;
    save_with(&dir.join("pairwise_diff.csv"), |w| {
        write_matrix(w, &abs_difference_matrix(&fit.best.beta.values, &fit.best.theta.values))
    })?;
    write_text(&dir.join("summary.csv"), &summary_text(&fit, test_mse))?;

    if cfg.repeats > 0 {
        let table = split_protocol(cfg, &target, &source, &cstl)?;
        save_with(&dir.join("split_results.csv"), |w| write_results(w, &table))?;
        save_with(&dir.join("split_aggregate.csv"), |w| {
            write_aggregate(w, &table.aggregate())
        })?;
    }
    write_text(&dir.join("manifest.txt"), &cfg.to_manifest(Some(&grid)))
}

/// Repeated random splits of the target rows: fit on the training part plus
/// all source rows, score prediction error on the held-out part.
fn split_protocol(cfg: &RunConfig, target: &Dataset, source: &Dataset, cstl: &CstlConfig) -> Result<ResultsTable> {
    let n = target.n();
    let n_train = ((n as f64) * cfg.split_fraction).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::invalid(
            "split_fraction",
            format!("leaves {n_train} of {n} target rows for training"),
        ));
    }
    let mut table = ResultsTable::default();
    for rep in 1..=cfg.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(rep as u64);
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        let (train_idx, test_idx) = rows.split_at(n_train);
        let train = target.select_rows(train_idx);
        let test = target.select_rows(test_idx);
        let fit = fit_once(&train, source, cstl)?;
        let lasso = &fit.beta_init.values;
        let mut row = ResultRow::new(Method::Lasso.as_str(), rep);
        row.mse = Some(mse(lasso, &test)?);
        table.rows.push(row);
        let mut row = ResultRow::new(Method::Cstl.as_str(), rep);
        row.mse = Some(mse(&fit.best.beta.values, &test)?);
        row.lambda0 = Some(fit.best.lambda0);
        row.lambda1 = Some(fit.best.lambda1);
        row.iterations = Some(fit.best.iterations);
        row.converged = Some(fit.best.converged);
        table.rows.push(row);
    }
    Ok(table)
}

fn run_oracle(cfg: &RunConfig) -> Result<()> {
    let (target, source) = load_pair(cfg)?;
    let beta = load_coefficients(cfg.beta_true.as_deref().expect("validated"), Domain::Target)?;
    let theta = load_coefficients(cfg.theta_true.as_deref().expect("validated"), Domain::Source)?;
    let ts = build_transfer_structure(&beta, &theta, cfg.structure_tol)?;
    let fit = oracle_fit(&target, &source, &ts)?;
    let dir = &cfg.output_dir;
    save_with(&dir.join("oracle_coefficients.csv"), |w| {
        write_coefficients(w, &[&fit.beta, &fit.theta])
    })?;
    let mut text = String::from("index,value\n");
    for (k, v) in fit.shared_values.iter().enumerate() {
        let _ = writeln!(text, "{},{}", k + 1, fmt_f64(*v));
    }
    write_text(&dir.join("shared_values.csv"), &text)?;
    write_text(&dir.join("structure.txt"), &format!("{ts}\n"))?;
    write_text(&dir.join("manifest.txt"), &cfg.to_manifest(None))
}

fn run_tune(cfg: &RunConfig) -> Result<()> {
    let (target, source) = load_pair(cfg)?;
    let cstl = cfg.cstl_config(target.d(), source.d());
    let fit = fit_once(&target, &source, &cstl)?;
    let dir = &cfg.output_dir;
    let mut text = String::from("lambda0,lambda1,bic,df,objective,iterations,converged\n");
    for p in &fit.surface {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{}",
            fmt_f64(p.lambda0),
            fmt_f64(p.lambda1),
            p.bic.map(fmt_f64).unwrap_or_else(|| io::NA.into()),
            p.df,
            fmt_f64(p.objective),
            p.iterations,
            p.converged
        );
    }
    write_text(&dir.join("bic_surface.csv"), &text)?;
    write_text(&dir.join("summary.csv"), &summary_text(&fit, None))?;
    let grid = cstl.resolved_grid(target.d(), target.n());
    write_text(&dir.join("manifest.txt"), &cfg.to_manifest(Some(&grid)))
}

/// Process exit status: 0 success, 1 usage or configuration error, 2 runtime error.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match CliArgs::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match RunConfig::from_args(&parsed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run_command(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
