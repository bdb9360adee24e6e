//! Differentially heated cavity benchmark: case description, drivers, sweeps
//! and CSV output.

use std::cell::RefCell;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::anderson::{
    drive, AndersonConfig, ConvergenceRecord, Damping, DepthSchedule, IterationLog, Status,
};
use crate::assembly::ProblemConfig;
use crate::error::{Error, Result};
use crate::fespace::{BcSpec, ElementFamily};
use crate::fixedpoint::Boussinesq;
use crate::linesearch::{drive_line_search, LineSearchKind, LineSearchSpec, Stopping};
use crate::mesh::MeshSpec;

pub const HISTORY_HEADER: [&str; 6] = ["k", "residual_Bnorm", "xi", "sigma", "m_k", "beta_k"];
pub const SUMMARY_HEADER: [&str; 8] = [
    "Ri",
    "Ra",
    "method",
    "m",
    "beta_mode",
    "status",
    "iterations",
    "seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Method {
    #[default]
    Picard,
    Newton,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Picard => "picard",
            Method::Newton => "newton",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "picard" => Ok(Method::Picard),
            "newton" => Ok(Method::Newton),
            _ => Err(Error::Parse(format!("unknown method `{s}`"))),
        }
    }
}

/// One benchmark run. Field names double as the keys of the `key = value`
/// case file format.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub label: String,
    pub mesh_n: usize,
    pub boundary_layers: usize,
    pub alfeld: bool,
    pub family: ElementFamily,
    pub nu: f64,
    pub kappa: f64,
    pub ri: f64,
    pub method: Method,
    pub m: usize,
    pub beta: f64,
    /// `(m_small, m_large, threshold)`
    pub two_stage: Option<(usize, usize, f64)>,
    pub flush_on_switch: bool,
    /// Look-ahead damping: keep the best factor from this grid each step.
    pub beta_grid: Option<Vec<f64>>,
    pub linesearch: LineSearchKind,
    pub tol: f64,
    pub max_iters: usize,
    pub blowup: f64,
    pub drop_tol: f64,
}

impl Default for BenchmarkCase {
    fn default() -> Self {
        let mesh = MeshSpec::DESK;
        Self {
            label: String::new(),
            mesh_n: mesh.n,
            boundary_layers: mesh.boundary_layers,
            alfeld: mesh.alfeld,
            family: ElementFamily::SCOTT_VOGELIUS,
            nu: 0.01,
            kappa: 0.01,
            ri: 1.0,
            method: Method::Picard,
            m: 0,
            beta: 1.0,
            two_stage: None,
            flush_on_switch: false,
            beta_grid: None,
            linesearch: LineSearchKind::None,
            tol: 1e-8,
            max_iters: 500,
            blowup: 1e4,
            drop_tol: 1e-10,
        }
    }
}

const KEYS: [&str; 19] = [
    "label",
    "mesh_n",
    "boundary_layers",
    "alfeld",
    "family",
    "nu",
    "kappa",
    "ri",
    "method",
    "m",
    "beta",
    "two_stage",
    "flush_on_switch",
    "beta_grid",
    "linesearch",
    "tol",
    "max_iters",
    "blowup",
    "drop_tol",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Parse(format!("{key}: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Parse(format!(
            "{key}: expected a boolean, got `{v}`"
        ))),
    }
}

fn is_none(v: &str) -> bool {
    v.is_empty() || v.eq_ignore_ascii_case("none")
}

fn join(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl BenchmarkCase {
    /// Picard defaults at `Ra = ri / (nu kappa)`.
    pub fn picard(ra: f64) -> Self {
        let mut c = Self::default();
        c.set_ra(ra);
        c
    }

    /// Newton defaults at the given Rayleigh number: 200 iterations.
    pub fn newton(ra: f64) -> Self {
        Self {
            method: Method::Newton,
            max_iters: 200,
            ..Self::picard(ra)
        }
    }

    pub fn with_anderson(mut self, m: usize, beta: f64) -> Self {
        self.m = m;
        self.beta = beta;
        self
    }

    pub fn with_two_stage(mut self, small: usize, large: usize, threshold: f64) -> Self {
        self.two_stage = Some((small, large, threshold));
        self
    }

    pub fn with_linesearch(mut self, kind: LineSearchKind) -> Self {
        self.linesearch = kind;
        self
    }

    pub fn with_mesh(mut self, mesh: MeshSpec) -> Self {
        self.mesh_n = mesh.n;
        self.boundary_layers = mesh.boundary_layers;
        self.alfeld = mesh.alfeld;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn ra(&self) -> f64 {
        self.ri / (self.nu * self.kappa)
    }

    pub fn set_ra(&mut self, ra: f64) {
        self.ri = ra * self.nu * self.kappa;
    }

    pub fn mesh_spec(&self) -> MeshSpec {
        MeshSpec {
            n: self.mesh_n,
            boundary_layers: self.boundary_layers,
            alfeld: self.alfeld,
        }
    }

    pub fn problem_config(&self) -> ProblemConfig {
        ProblemConfig::new(self.nu, self.kappa, self.ri)
    }

    pub fn anderson_config(&self) -> AndersonConfig<f64> {
        let depth = match self.two_stage {
            Some((small, large, threshold)) => DepthSchedule::TwoStage {
                small,
                large,
                threshold,
            },
            None => DepthSchedule::Constant(self.m),
        };
        let damping = match &self.beta_grid {
            Some(grid) => Damping::LookAhead(grid.clone()),
            None => Damping::Constant(self.beta),
        };
        AndersonConfig {
            depth,
            damping,
            flush_on_switch: self.flush_on_switch,
            drop_tol: self.drop_tol,
            max_iters: self.max_iters,
            tol: self.tol,
            blowup: self.blowup,
        }
    }

    pub fn linesearch_spec(&self) -> LineSearchSpec<f64> {
        LineSearchSpec::new(self.linesearch)
    }

    /// Depth column of the summary table: `m`, or `small-large` for the
    /// two-stage schedule.
    pub fn m_label(&self) -> String {
        match self.two_stage {
            Some((s, l, _)) => format!("{s}-{l}"),
            None => self.m.to_string(),
        }
    }

    /// Damping column of the summary table.
    pub fn beta_mode(&self) -> String {
        match &self.beta_grid {
            Some(_) => "best".to_string(),
            None => self.beta.to_string(),
        }
    }

    pub fn method_label(&self) -> String {
        match self.linesearch {
            LineSearchKind::None => self.method.to_string(),
            ls => format!("{}+{}", self.method, ls),
        }
    }

    /// The explicit label, or one built from the method and parameters.
    pub fn display_label(&self) -> String {
        if !self.label.is_empty() {
            return self.label.clone();
        }
        format!(
            "{}_Ra{:e}_m{}_b{}",
            self.method_label(),
            self.ra(),
            self.m_label(),
            self.beta_mode()
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.problem_config().validate()?;
        self.anderson_config().validate()?;
        if self.mesh_n == 0 {
            return Err(Error::Configuration("mesh_n must be positive".into()));
        }
        if self.linesearch != LineSearchKind::None {
            if self.method != Method::Newton {
                return Err(Error::Configuration(
                    "line searches apply to the Newton iteration only".into(),
                ));
            }
            if self.m != 0 || self.two_stage.is_some() || self.beta_grid.is_some() {
                return Err(Error::Configuration(
                    "line searches apply to the unaccelerated iteration only".into(),
                ));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "label" => self.label = v.to_string(),
            "mesh_n" => self.mesh_n = parse_num(key, v)?,
            "boundary_layers" => self.boundary_layers = parse_num(key, v)?,
            "alfeld" => self.alfeld = parse_bool(key, v)?,
            "family" => self.family = v.parse()?,
            "nu" => self.nu = parse_num(key, v)?,
            "kappa" => self.kappa = parse_num(key, v)?,
            "ri" => self.ri = parse_num(key, v)?,
            "method" => self.method = v.parse()?,
            "m" => self.m = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "two_stage" => {
                self.two_stage = if is_none(v) {
                    None
                } else {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 3 {
                        return Err(Error::Parse(format!(
                            "two_stage: expected `m_small,m_large,threshold`, got `{v}`"
                        )));
                    }
                    Some((
                        parse_num(key, parts[0])?,
                        parse_num(key, parts[1])?,
                        parse_num(key, parts[2])?,
                    ))
                }
            }
            "flush_on_switch" => self.flush_on_switch = parse_bool(key, v)?,
            "beta_grid" => {
                self.beta_grid = if is_none(v) {
                    None
                } else {
                    Some(
                        v.split(',')
                            .map(|s| parse_num(key, s.trim()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "linesearch" => self.linesearch = v.parse()?,
            "tol" => self.tol = parse_num(key, v)?,
            "max_iters" => self.max_iters = parse_num(key, v)?,
            "blowup" => self.blowup = parse_num(key, v)?,
            "drop_tol" => self.drop_tol = parse_num(key, v)?,
            _ => return Err(Error::Parse(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "label" => self.label.clone(),
            "mesh_n" => self.mesh_n.to_string(),
            "boundary_layers" => self.boundary_layers.to_string(),
            "alfeld" => self.alfeld.to_string(),
            "family" => self.family.name().to_string(),
            "nu" => self.nu.to_string(),
            "kappa" => self.kappa.to_string(),
            "ri" => self.ri.to_string(),
            "method" => self.method.to_string(),
            "m" => self.m.to_string(),
            "beta" => self.beta.to_string(),
            "two_stage" => match self.two_stage {
                Some((s, l, t)) => format!("{s},{l},{t}"),
                None => "none".to_string(),
            },
            "flush_on_switch" => self.flush_on_switch.to_string(),
            "beta_grid" => self
                .beta_grid
                .as_deref()
                .map_or_else(|| "none".to_string(), join),
            "linesearch" => self.linesearch.to_string(),
            "tol" => self.tol.to_string(),
            "max_iters" => self.max_iters.to_string(),
            "blowup" => self.blowup.to_string(),
            "drop_tol" => self.drop_tol.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut case = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Parse(format!(
                    "line {}: duplicate key `{k}`",
                    lineno + 1
                )));
            }
            case.set(k, v)
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(case)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k)))
            .collect()
    }
}

/// Runs one case end to end. Failures anywhere in the pipeline end the run
/// with status `B` and a diagnostic message; the history up to the failure
/// is kept.
pub fn run_case(case: &BenchmarkCase) -> ConvergenceRecord {
    let label = case.display_label();
    let failed = |e: Error| ConvergenceRecord {
        label: label.clone(),
        rows: Vec::new(),
        status: Status::Blowup,
        iterations: 0,
        seconds: 0.0,
        message: Some(e.to_string()),
    };
    if let Err(e) = case.validate() {
        return failed(e);
    }
    let problem = match case.mesh_spec().build().and_then(|mesh| {
        Boussinesq::new(
            &mesh,
            case.family,
            &BcSpec::heated_cavity(),
            case.problem_config(),
        )
    }) {
        Ok(p) => p,
        Err(e) => return failed(e),
    };

    let last_error: RefCell<Option<Error>> = RefCell::new(None);
    let len = problem.layout().len();
    let map = |x: &[f64]| -> Result<Vec<f64>> {
        let out = match case.method {
            Method::Picard => problem.picard_map(x),
            Method::Newton => problem.newton_map(x),
        };
        Ok(out.unwrap_or_else(|e| {
            *last_error.borrow_mut() = Some(e);
            vec![f64::NAN; len]
        }))
    };
    let ip = problem.inner_product();
    let x0 = problem.initial_state().to_flat();

    let outcome = if case.linesearch == LineSearchKind::None {
        drive(map, x0, &ip, &case.anderson_config()).map(|o| o.record)
    } else {
        let objective = |x: &[f64]| Ok(problem.nonlinear_residual_norm(x).unwrap_or(f64::INFINITY));
        let stop = Stopping {
            tol: case.tol,
            max_iters: case.max_iters,
            blowup: case.blowup,
        };
        drive_line_search(map, objective, x0, &ip, &case.linesearch_spec(), stop).map(|(r, _)| r)
    };
    let mut record = match outcome {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    record.label = label;
    let broke_down = record
        .rows
        .last()
        .is_some_and(|r| !r.residual.is_finite());
    if record.status == Status::Blowup && broke_down {
        record.message = last_error.into_inner().map(|e| e.to_string());
    }
    record
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case: BenchmarkCase,
    pub record: ConvergenceRecord,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub results: Vec<CaseResult>,
}

impl SweepTable {
    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    /// Looks a run up by `(Ri, m, beta_mode)` and method label.
    pub fn lookup(&self, ri: f64, method: &str, m: &str, beta_mode: &str) -> Option<&CaseResult> {
        self.results.iter().find(|r| {
            r.case.ri == ri
                && r.case.method_label() == method
                && r.case.m_label() == m
                && r.case.beta_mode() == beta_mode
        })
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.results.iter().map(SummaryRow::of).collect()
    }
}

/// Runs independent cases, concurrently when `parallel` is set. Results keep
/// the order of `cases`.
pub fn run_sweep(cases: &[BenchmarkCase], parallel: bool) -> SweepTable {
    let run = |c: &BenchmarkCase| CaseResult {
        case: c.clone(),
        record: run_case(c),
    };
    let results = if parallel {
        cases.par_iter().map(run).collect()
    } else {
        cases.iter().map(run).collect()
    };
    SweepTable { results }
}

/// The cartesian product of Rayleigh numbers and `(m, beta)` pairs on top of
/// a base case.
pub fn grid(
    base: &BenchmarkCase,
    ras: &[f64],
    depths: &[usize],
    betas: &[f64],
) -> Vec<BenchmarkCase> {
    let mut out = Vec::new();
    for &ra in ras {
        for &m in depths {
            for &beta in betas {
                let mut c = base.clone().with_anderson(m, beta);
                c.set_ra(ra);
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub ri: f64,
    pub ra: f64,
    pub method: String,
    pub m: String,
    pub beta_mode: String,
    pub status: Status,
    pub iterations: usize,
    pub seconds: f64,
}

impl SummaryRow {
    pub fn of(r: &CaseResult) -> Self {
        Self {
            ri: r.case.ri,
            ra: r.case.ra(),
            method: r.case.method_label(),
            m: r.case.m_label(),
            beta_mode: r.case.beta_mode(),
            status: r.record.status,
            iterations: r.record.iterations,
            seconds: r.record.seconds,
        }
    }
}

fn io_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:e}"))
}

fn parse_opt(path: &Path, s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        Ok(None)
    } else {
        parse_field(path, s).map(Some)
    }
}

fn parse_field<T: FromStr>(path: &Path, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("{}: cannot parse field `{s}`", path.display())))
}

pub fn write_history(record: &ConvergenceRecord, path: &Path) -> Result<()> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(HISTORY_HEADER).map_err(&err)?;
    for r in &record.rows {
        w.write_record([
            r.k.to_string(),
            format!("{:e}", r.residual),
            opt(r.xi),
            opt(r.sigma),
            r.m_k.to_string(),
            format!("{:e}", r.beta),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a history file back. Timing is not stored and comes back as zero.
pub fn read_history(path: &Path) -> Result<Vec<IterationLog>> {
    let err = io_err(path);
    let mut rd = csv::Reader::from_path(path).map_err(&err)?;
    let header = rd.headers().map_err(&err)?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(Error::Parse(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(&err)?;
        rows.push(IterationLog {
            k: parse_field(path, &rec[0])?,
            residual: parse_field(path, &rec[1])?,
            xi: parse_opt(path, &rec[2])?,
            sigma: parse_opt(path, &rec[3])?,
            m_k: parse_field(path, &rec[4])?,
            beta: parse_field(path, &rec[5])?,
            seconds: 0.0,
        });
    }
    Ok(rows)
}

pub fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let err = io_err(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    w.write_record(SUMMARY_HEADER).map_err(&err)?;
    for r in rows {
        w.write_record([
            format!("{:e}", r.ri),
            format!("{:e}", r.ra),
            r.method.clone(),
            r.m.clone(),
            r.beta_mode.clone(),
            r.status.to_string(),
            r.iterations.to_string(),
            format!("{:e}", r.seconds),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let err = io_err(path);
    let mut rd = csv::Reader::from_path(path).map_err(&err)?;
    let header = rd.headers().map_err(&err)?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(Error::Parse(format!(
            "{}: unexpected header",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(&err)?;
        rows.push(SummaryRow {
            ri: parse_field(path, &rec[0])?,
            ra: parse_field(path, &rec[1])?,
            method: rec[2].to_string(),
            m: rec[3].to_string(),
            beta_mode: rec[4].to_string(),
            status: rec[5].parse()?,
            iterations: parse_field(path, &rec[6])?,
            seconds: parse_field(path, &rec[7])?,
        });
    }
    Ok(rows)
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '+') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `NNN_<label>.csv` per case and `summary.csv` into `dir`, creating
/// it if needed. Returns the written paths, summary last.
pub fn emit_csv(table: &SweepTable, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut paths = Vec::with_capacity(table.len() + 1);
    for (i, r) in table.results.iter().enumerate() {
        let path = dir.join(format!("{i:03}_{}.csv", file_stem(&r.record.label)));
        write_history(&r.record, &path)?;
        paths.push(path);
    }
    let path = dir.join("summary.csv");
    write_summary(&table.summary(), &path)?;
    paths.push(path);
    Ok(paths)
}
