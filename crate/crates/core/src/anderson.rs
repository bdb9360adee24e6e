//! Anderson acceleration for fixed-point maps `x = g(x)` in a weighted inner
//! product.
//!
//! With `w_k = g(x_{k-1}) - x_{k-1}` the step is
//!
//! ```text
//! gamma = argmin || w_k - F_k gamma ||
//! x_k   = x_{k-1} + beta_k w_k - (E_{k-1} + beta_k F_k) gamma
//! ```
//!
//! where the columns of `F_k` are consecutive residual differences
//! `w_{j+1} - w_j` and those of `E_{k-1}` consecutive iterate differences
//! `x_j - x_{j-1}`, newest first, at most `m_k = min(k - 1, m)` of each.
//! The engine only touches vectors through slices and the supplied
//! [`InnerProduct`].

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, norm_sqrt, Scalar};

/// Symmetric positive semidefinite inner product `<x, y> = x . (B y)`.
pub trait InnerProduct<T: Scalar> {
    /// `B x`
    fn gram(&self, x: &[T]) -> Vec<T>;

    fn inner(&self, x: &[T], y: &[T]) -> T {
        dot(x, &self.gram(y))
    }

    fn norm(&self, x: &[T]) -> T {
        norm_sqrt(self.inner(x, x))
    }
}

impl<T: Scalar, P: InnerProduct<T> + ?Sized> InnerProduct<T> for &P {
    fn gram(&self, x: &[T]) -> Vec<T> {
        (**self).gram(x)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl<T: Scalar> InnerProduct<T> for Euclidean {
    fn gram(&self, x: &[T]) -> Vec<T> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DepthSchedule<T> {
    Constant(usize),
    /// `small` while the residual norm exceeds `threshold`, `large` after.
    TwoStage {
        small: usize,
        large: usize,
        threshold: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Damping<T> {
    Constant(T),
    /// Separate factors for the two depth stages. Constant depth schedules
    /// use `small`.
    PerStage {
        small: T,
        large: T,
    },
    /// Try every factor and keep the one whose next residual is smallest.
    LookAhead(Vec<T>),
}

impl<T: Scalar> Damping<T> {
    /// The look-ahead grid `{1/16, 1/8, 1/4, 1/2, 1}`.
    pub fn look_ahead_default() -> Self {
        Damping::LookAhead(
            [0.0625, 0.125, 0.25, 0.5, 1.0]
                .iter()
                .map(|&b| T::lit(b))
                .collect(),
        )
    }

    fn factors(&self) -> Vec<T> {
        match self {
            Damping::Constant(b) => vec![*b],
            Damping::PerStage { small, large } => vec![*small, *large],
            Damping::LookAhead(grid) => grid.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AndersonConfig<T> {
    pub depth: DepthSchedule<T>,
    pub damping: Damping<T>,
    /// Discard stored columns when the two-stage schedule first switches to
    /// the large depth.
    pub flush_on_switch: bool,
    /// Relative projected norm below which a difference column is dropped.
    pub drop_tol: T,
    pub max_iters: usize,
    pub tol: T,
    pub blowup: T,
}

impl<T: Scalar> Default for AndersonConfig<T> {
    fn default() -> Self {
        Self {
            depth: DepthSchedule::Constant(0),
            damping: Damping::Constant(T::one()),
            flush_on_switch: false,
            drop_tol: T::lit(1e-10),
            max_iters: 500,
            tol: T::lit(1e-8),
            blowup: T::lit(1e4),
        }
    }
}

impl<T: Scalar> AndersonConfig<T> {
    pub fn constant(m: usize, beta: T) -> Self {
        Self {
            depth: DepthSchedule::Constant(m),
            damping: Damping::Constant(beta),
            ..Self::default()
        }
    }

    pub fn two_stage(small: usize, large: usize, threshold: T, beta: T) -> Self {
        Self {
            depth: DepthSchedule::TwoStage {
                small,
                large,
                threshold,
            },
            damping: Damping::Constant(beta),
            ..Self::default()
        }
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for b in self.damping.factors() {
            if !(b > T::zero() && b <= T::one()) {
                return Err(Error::Configuration(format!(
                    "damping factor {b} outside (0, 1]"
                )));
            }
        }
        if matches!(&self.damping, Damping::LookAhead(g) if g.is_empty()) {
            return Err(Error::Configuration("empty damping grid".into()));
        }
        if let DepthSchedule::TwoStage {
            small,
            large,
            threshold,
        } = self.depth
        {
            if small >= large {
                return Err(Error::Configuration(format!(
                    "two-stage depths must satisfy small < large, got {small} and {large}"
                )));
            }
            if !(threshold > T::zero()) {
                return Err(Error::Configuration(
                    "two-stage threshold must be positive".into(),
                ));
            }
        }
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.tol) || !positive(self.blowup) || !(self.drop_tol >= T::zero()) {
            return Err(Error::Configuration(
                "tolerances and blowup threshold must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::Configuration("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Depth for a step whose residual norm is `residual_norm`.
pub fn depth_schedule<T: Scalar>(residual_norm: T, schedule: &DepthSchedule<T>) -> usize {
    match *schedule {
        DepthSchedule::Constant(m) => m,
        DepthSchedule::TwoStage {
            small,
            large,
            threshold,
        } => {
            if residual_norm > threshold {
                small
            } else {
                large
            }
        }
    }
}

fn in_large_stage<T: Scalar>(residual_norm: T, schedule: &DepthSchedule<T>) -> bool {
    matches!(*schedule, DepthSchedule::TwoStage { threshold, .. } if residual_norm <= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSolution<T> {
    /// One coefficient per input column; dropped columns get zero.
    pub gamma: Vec<T>,
    pub rank: usize,
    pub dropped: Vec<usize>,
    /// `|| w - F gamma ||`
    pub objective: T,
    /// `|| w ||`
    pub initial: T,
}

/// Weighted least squares `argmin || w - F gamma ||` by modified Gram-Schmidt
/// in the supplied inner product, with one re-orthogonalization pass.
pub fn solve_ls<T: Scalar, P: InnerProduct<T> + ?Sized>(
    w: &[T],
    columns: &[Vec<T>],
    ip: &P,
    drop_tol: T,
) -> LsSolution<T> {
    let bw = ip.gram(w);
    let bcols: Vec<Vec<T>> = columns.iter().map(|c| ip.gram(c)).collect();
    let cols: Vec<&[T]> = columns.iter().map(Vec::as_slice).collect();
    let bcols: Vec<&[T]> = bcols.iter().map(Vec::as_slice).collect();
    solve_ls_with_gram(w, &bw, &cols, &bcols, drop_tol)
}

fn sub_scaled<T: Scalar>(v: &mut [T], h: T, q: &[T]) {
    for (vi, &qi) in v.iter_mut().zip(q) {
        *vi -= h * qi;
    }
}

fn objective_of<T: Scalar>(w: &[T], bw: &[T], cols: &[&[T]], bcols: &[&[T]], gamma: &[T]) -> T {
    let mut r = w.to_vec();
    let mut br = bw.to_vec();
    for (j, &g) in gamma.iter().enumerate() {
        if g != T::zero() {
            sub_scaled(&mut r, g, cols[j]);
            sub_scaled(&mut br, g, bcols[j]);
        }
    }
    norm_sqrt(dot(&r, &br))
}

/// As [`solve_ls`], with the Gram images `B w` and `B f_j` supplied.
pub fn solve_ls_with_gram<T: Scalar>(
    w: &[T],
    bw: &[T],
    cols: &[&[T]],
    bcols: &[&[T]],
    drop_tol: T,
) -> LsSolution<T> {
    let initial = norm_sqrt(dot(w, bw));
    let n = cols.len();
    let mut q: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut bq: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut kept: Vec<usize> = Vec::with_capacity(n);
    let mut dropped = Vec::new();
    // r[i][j]: coefficient of q_i in kept column j
    let mut r: Vec<Vec<T>> = Vec::with_capacity(n);

    for j in 0..n {
        let mut v = cols[j].to_vec();
        let mut bv = bcols[j].to_vec();
        let original = norm_sqrt(dot(&v, &bv));
        if !(original > T::zero()) || !original.is_finite() {
            dropped.push(j);
            continue;
        }
        let mut coeffs = vec![T::zero(); q.len()];
        for _ in 0..2 {
            for i in 0..q.len() {
                let h = dot(&q[i], &bv);
                coeffs[i] += h;
                sub_scaled(&mut v, h, &q[i]);
                sub_scaled(&mut bv, h, &bq[i]);
            }
        }
        let projected = norm_sqrt(dot(&v, &bv));
        if !(projected > drop_tol * original) {
            dropped.push(j);
            continue;
        }
        let inv = T::one() / projected;
        v.iter_mut().for_each(|x| *x *= inv);
        bv.iter_mut().for_each(|x| *x *= inv);
        coeffs.push(projected);
        r.push(coeffs);
        q.push(v);
        bq.push(bv);
        kept.push(j);
    }

    let rank = kept.len();
    let mut gamma = vec![T::zero(); n];
    if rank > 0 {
        let mut res = w.to_vec();
        let mut bres = bw.to_vec();
        let mut c = vec![T::zero(); rank];
        for _ in 0..2 {
            for i in 0..rank {
                let h = dot(&q[i], &bres);
                c[i] += h;
                sub_scaled(&mut res, h, &q[i]);
                sub_scaled(&mut bres, h, &bq[i]);
            }
        }
        // back substitution; r[j] holds column j of the triangular factor
        let mut g = vec![T::zero(); rank];
        for i in (0..rank).rev() {
            let mut s = c[i];
            for j in (i + 1)..rank {
                s -= r[j][i] * g[j];
            }
            g[i] = s / r[i][i];
        }
        for (pos, &j) in kept.iter().enumerate() {
            gamma[j] = g[pos];
        }
    }

    let mut objective = if rank > 0 {
        objective_of(w, bw, cols, bcols, &gamma)
    } else {
        initial
    };
    if !(objective <= initial) || gamma.iter().any(|g| !g.is_finite()) {
        gamma.iter_mut().for_each(|g| *g = T::zero());
        objective = initial;
    }
    LsSolution {
        gamma,
        rank,
        dropped,
        objective,
        initial,
    }
}

/// Diagnostics for one accelerated step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<T> {
    pub k: usize,
    /// `|| w_k ||`
    pub residual_norm: T,
    /// `|| w_k - w_{k-1} || / || x_{k-1} - x_{k-2} ||`; `None` for the first
    /// step or a stagnated iterate.
    pub sigma: Option<T>,
    pub m_k: usize,
    /// Gain factor `|| w_k - F_k gamma || / || w_k ||`.
    pub gain: T,
    pub gamma: Vec<T>,
    pub dropped: usize,
}

/// Result of the optimization stage. The next iterate for damping `beta` is
/// `x_alpha + beta * w_alpha`.
#[derive(Debug, Clone)]
pub struct Proposal<T> {
    pub x_alpha: Vec<T>,
    pub w_alpha: Vec<T>,
    pub report: StepReport<T>,
    pub large_stage: bool,
}

impl<T: Scalar> Proposal<T> {
    pub fn iterate(&self, beta: T) -> Vec<T> {
        self.x_alpha
            .iter()
            .zip(&self.w_alpha)
            .map(|(&x, &w)| x + beta * w)
            .collect()
    }
}

/// Sliding windows of difference columns, newest first.
#[derive(Debug, Clone)]
pub struct AndersonHistory<T> {
    k: usize,
    x_prev: Option<Vec<T>>,
    w_prev: Option<Vec<T>>,
    bw_prev: Option<Vec<T>>,
    e: VecDeque<Vec<T>>,
    f: VecDeque<Vec<T>>,
    bf: VecDeque<Vec<T>>,
    large_stage: bool,
    pub gains: Vec<T>,
    pub residual_norms: Vec<T>,
}

impl<T: Scalar> Default for AndersonHistory<T> {
    fn default() -> Self {
        Self {
            k: 0,
            x_prev: None,
            w_prev: None,
            bw_prev: None,
            e: VecDeque::new(),
            f: VecDeque::new(),
            bf: VecDeque::new(),
            large_stage: false,
            gains: Vec::new(),
            residual_norms: Vec::new(),
        }
    }
}

impl<T: Scalar> AndersonHistory<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.k
    }

    pub fn columns(&self) -> usize {
        self.f.len()
    }

    pub fn e_columns(&self) -> impl Iterator<Item = &[T]> {
        self.e.iter().map(Vec::as_slice)
    }

    pub fn f_columns(&self) -> impl Iterator<Item = &[T]> {
        self.f.iter().map(Vec::as_slice)
    }

    /// Records `x_{k-1}` and `g(x_{k-1})`, updates the windows and solves the
    /// optimization problem.
    pub fn propose<P: InnerProduct<T> + ?Sized>(
        &mut self,
        x: &[T],
        gx: &[T],
        ip: &P,
        config: &AndersonConfig<T>,
    ) -> Result<Proposal<T>> {
        if x.len() != gx.len() {
            return Err(Error::InvalidArgument(format!(
                "iterate has length {}, map output {}",
                x.len(),
                gx.len()
            )));
        }
        if !all_finite(gx) {
            return Err(Error::Blowup);
        }
        self.k += 1;
        let k = self.k;
        let w: Vec<T> = gx.iter().zip(x).map(|(&g, &xi)| g - xi).collect();
        let bw = ip.gram(&w);
        let norm = norm_sqrt(dot(&w, &bw));

        let large = in_large_stage(norm, &config.depth);
        if large && !self.large_stage && config.flush_on_switch {
            self.e.clear();
            self.f.clear();
            self.bf.clear();
        }
        self.large_stage = large;

        let mut sigma = None;
        if let (Some(xp), Some(wp), Some(bwp)) = (&self.x_prev, &self.w_prev, &self.bw_prev) {
            let e: Vec<T> = x.iter().zip(xp).map(|(&a, &b)| a - b).collect();
            let f: Vec<T> = w.iter().zip(wp).map(|(&a, &b)| a - b).collect();
            let bf: Vec<T> = bw.iter().zip(bwp).map(|(&a, &b)| a - b).collect();
            let den = ip.norm(&e);
            if den > T::zero() {
                sigma = Some(norm_sqrt(dot(&f, &bf)) / den);
            }
            self.e.push_front(e);
            self.f.push_front(f);
            self.bf.push_front(bf);
        }

        let m_k = depth_schedule(norm, &config.depth).min(k - 1);
        self.e.truncate(m_k);
        self.f.truncate(m_k);
        self.bf.truncate(m_k);
        let m_k = self.f.len();

        let cols: Vec<&[T]> = self.f.iter().map(Vec::as_slice).collect();
        let bcols: Vec<&[T]> = self.bf.iter().map(Vec::as_slice).collect();
        let ls = solve_ls_with_gram(&w, &bw, &cols, &bcols, config.drop_tol);

        let (x_alpha, w_alpha) = if ls.gamma.iter().all(|g| *g == T::zero()) {
            (x.to_vec(), w.clone())
        } else {
            let mut xa = x.to_vec();
            let mut wa = w.clone();
            for (j, &g) in ls.gamma.iter().enumerate() {
                if g != T::zero() {
                    sub_scaled(&mut xa, g, &self.e[j]);
                    sub_scaled(&mut wa, g, &self.f[j]);
                }
            }
            (xa, wa)
        };
        let gain = if norm > T::zero() {
            (ls.objective / norm).min(T::one())
        } else {
            T::one()
        };

        self.gains.push(gain);
        self.residual_norms.push(norm);
        self.x_prev = Some(x.to_vec());
        self.w_prev = Some(w);
        self.bw_prev = Some(bw);

        Ok(Proposal {
            x_alpha,
            w_alpha,
            report: StepReport {
                k,
                residual_norm: norm,
                sigma,
                m_k,
                gain,
                gamma: ls.gamma,
                dropped: ls.dropped.len(),
            },
            large_stage: large,
        })
    }

    /// One complete step with a fixed damping factor.
    pub fn step<P: InnerProduct<T> + ?Sized>(
        &mut self,
        x: &[T],
        gx: &[T],
        ip: &P,
        config: &AndersonConfig<T>,
        beta: T,
    ) -> Result<(Vec<T>, StepReport<T>)> {
        let p = self.propose(x, gx, ip, config)?;
        Ok((p.iterate(beta), p.report))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Converged,
    /// Iteration budget exhausted.
    Failed,
    /// Residual above the blowup threshold or non-finite.
    Blowup,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Failed => "F",
            Status::Blowup => "B",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "converged" => Ok(Status::Converged),
            "F" => Ok(Status::Failed),
            "B" => Ok(Status::Blowup),
            _ => Err(Error::Parse(format!("unknown status `{s}`"))),
        }
    }
}

/// One row of a convergence history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub k: usize,
    pub residual: f64,
    /// Gain factor of the step taken after this residual; `None` when no
    /// accelerated step was taken.
    pub xi: Option<f64>,
    pub sigma: Option<f64>,
    pub m_k: usize,
    pub beta: f64,
    pub seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:e}"))
}

impl IterationLog {
    /// `key=value` line for streaming logs.
    pub fn log_line(&self, status: &str) -> String {
        format!(
            "k={} residual={:e} xi={} sigma={} m={} beta={} status={}",
            self.k,
            self.residual,
            opt(self.xi),
            opt(self.sigma),
            self.m_k,
            self.beta,
            status
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub label: String,
    pub rows: Vec<IterationLog>,
    pub status: Status,
    pub iterations: usize,
    pub seconds: f64,
    /// Failure diagnostic, if the run ended on an error.
    pub message: Option<String>,
}

impl ConvergenceRecord {
    pub fn final_residual(&self) -> Option<f64> {
        self.rows.last().map(|r| r.residual)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }

    pub fn min_sigma(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.sigma).reduce(f64::min)
    }

    /// Records equal apart from timing.
    pub fn same_history(&self, other: &Self) -> bool {
        self.status == other.status
            && self.iterations == other.iterations
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.k == b.k
                    && a.residual.to_bits() == b.residual.to_bits()
                    && a.xi.map(f64::to_bits) == b.xi.map(f64::to_bits)
                    && a.sigma.map(f64::to_bits) == b.sigma.map(f64::to_bits)
                    && a.m_k == b.m_k
                    && a.beta.to_bits() == b.beta.to_bits()
            })
    }
}

#[derive(Debug, Clone)]
pub struct DriveOutcome<T> {
    pub record: ConvergenceRecord,
    /// Last fixed-point output `g(x_{k-1})` on convergence, otherwise the
    /// last iterate.
    pub solution: Vec<T>,
}

fn f64_of<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Runs the accelerated iteration from `x0` until convergence, blowup or the
/// iteration budget. Errors from `g` are returned with the iteration index.
pub fn drive<T, P, G>(
    mut g: G,
    x0: Vec<T>,
    ip: &P,
    config: &AndersonConfig<T>,
) -> Result<DriveOutcome<T>>
where
    T: Scalar,
    P: InnerProduct<T> + ?Sized,
    G: FnMut(&[T]) -> Result<Vec<T>>,
{
    config.validate()?;
    let start = Instant::now();
    let mut history = AndersonHistory::new();
    let mut rows = Vec::new();
    let mut x = x0;
    let mut cached: Option<Vec<T>> = None;
    let wrap = |k: usize| {
        move |e: Error| Error::Operator {
            iteration: k,
            source: Box::new(e),
        }
    };

    let mut status = Status::Failed;
    let mut solution = None;
    let mut k = 0;
    while k < config.max_iters {
        k += 1;
        let gx = match cached.take() {
            Some(v) => v,
            None => g(&x).map_err(wrap(k))?,
        };
        let proposal = match history.propose(&x, &gx, ip, config) {
            Ok(p) => p,
            Err(Error::Blowup) => {
                rows.push(IterationLog {
                    k,
                    residual: f64::INFINITY,
                    xi: None,
                    sigma: None,
                    m_k: 0,
                    beta: 0.0,
                    seconds: start.elapsed().as_secs_f64(),
                });
                status = Status::Blowup;
                break;
            }
            Err(e) => return Err(e),
        };
        let rep = &proposal.report;
        let norm = rep.residual_norm;
        let mut row = IterationLog {
            k,
            residual: f64_of(norm),
            xi: None,
            sigma: rep.sigma.map(f64_of),
            m_k: rep.m_k,
            beta: 0.0,
            seconds: 0.0,
        };
        if norm < config.tol {
            row.seconds = start.elapsed().as_secs_f64();
            rows.push(row);
            status = Status::Converged;
            solution = Some(gx);
            break;
        }
        if !(norm <= config.blowup) {
            row.seconds = start.elapsed().as_secs_f64();
            rows.push(row);
            status = Status::Blowup;
            break;
        }
        if k == config.max_iters {
            row.seconds = start.elapsed().as_secs_f64();
            rows.push(row);
            break;
        }

        let beta = match &config.damping {
            Damping::Constant(b) => *b,
            Damping::PerStage { small, large } => {
                if proposal.large_stage {
                    *large
                } else {
                    *small
                }
            }
            Damping::LookAhead(grid) => {
                let mut best: Option<(T, T, Vec<T>)> = None;
                let mut last_err = None;
                for &b in grid {
                    let xb = proposal.iterate(b);
                    match g(&xb) {
                        Ok(gb) => {
                            let r: Vec<T> = gb.iter().zip(&xb).map(|(&a, &c)| a - c).collect();
                            let n = ip.norm(&r);
                            let n = if n.is_finite() { n } else { T::infinity() };
                            if best.as_ref().is_none_or(|(bn, _, _)| n < *bn) {
                                best = Some((n, b, gb));
                            }
                        }
                        Err(e) => last_err = Some(e),
                    }
                }
                match best {
                    Some((_, b, gb)) => {
                        cached = Some(gb);
                        b
                    }
                    None => return Err(wrap(k)(last_err.expect("grid is non-empty"))),
                }
            }
        };
        row.xi = Some(f64_of(rep.gain));
        row.beta = f64_of(beta);
        row.seconds = start.elapsed().as_secs_f64();
        rows.push(row);
        x = proposal.iterate(beta);
    }

    let record = ConvergenceRecord {
        label: String::new(),
        iterations: k,
        rows,
        status,
        seconds: start.elapsed().as_secs_f64(),
        message: None,
    };
    Ok(DriveOutcome {
        record,
        solution: solution.unwrap_or(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense SPD Gram matrix.
    struct Dense(Vec<Vec<f64>>);

    impl InnerProduct<f64> for Dense {
        fn gram(&self, x: &[f64]) -> Vec<f64> {
            self.0.iter().map(|row| dot(row, x)).collect()
        }
    }

    fn spd(n: usize, seed: &[f64]) -> Dense {
        // A^T A + I from a seeded pattern
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| seed[(i * n + j) % seed.len()]).collect())
            .collect();
        let mut g = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                g[i][j] = (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>();
            }
            g[i][i] += 1.0;
        }
        Dense(g)
    }

    #[test]
    fn empty_columns() {
        let s = solve_ls(&[3.0, 4.0], &[], &Euclidean, 1e-10);
        assert!(s.gamma.is_empty());
        assert_eq!(s.objective, 5.0);
        assert_eq!(s.rank, 0);
    }

    #[test]
    fn orthogonal_residual_gives_zero_gamma() {
        let s = solve_ls(
            &[1.0f64, 0.0, 0.0],
            &[vec![0.0, 2.0, 0.0], vec![0.0, 1.0, 1.0]],
            &Euclidean,
            1e-10,
        );
        assert!(s.gamma.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn representable_residual() {
        let w = vec![1.0f64, 2.0, 3.0];
        let cols = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let s = solve_ls(&w, &cols, &Euclidean, 1e-10);
        assert!(s.objective <= 1e-7 * s.initial);
        assert!((s.gamma[0] - 1.0).abs() < 1e-12 && (s.gamma[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dependent_column_dropped() {
        let w = vec![1.0f64, 1.0, 0.5];
        let cols = vec![
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ];
        let s = solve_ls(&w, &cols, &Euclidean, 1e-10);
        assert_eq!(s.dropped, vec![1]);
        assert_eq!(s.gamma[1], 0.0);
        assert!((s.objective - 0.5).abs() < 1e-14);
    }

    #[test]
    fn weighted_norm_changes_minimizer() {
        let ip = Dense(vec![vec![1.0, 0.0], vec![0.0, 100.0]]);
        let w = vec![1.0, 1.0];
        let cols = vec![vec![1.0, 1.0 / 3.0]];
        let e = solve_ls(&w, &cols, &Euclidean, 1e-10);
        let b = solve_ls(&w, &cols, &ip, 1e-10);
        // gamma = <w,f> / <f,f>
        assert!((e.gamma[0] - (4.0 / 3.0) / (10.0 / 9.0)).abs() < 1e-14);
        assert!((b.gamma[0] - (1.0 + 100.0 / 3.0) / (1.0 + 100.0 / 9.0)).abs() < 1e-13);
    }

    #[test]
    fn depth_schedules() {
        assert_eq!(depth_schedule(1.0, &DepthSchedule::Constant(5)), 5);
        let two = DepthSchedule::TwoStage {
            small: 1,
            large: 20,
            threshold: 1e-3,
        };
        assert_eq!(depth_schedule(1e-2, &two), 1);
        assert_eq!(depth_schedule(1e-4, &two), 20);
    }

    #[test]
    fn config_validation() {
        assert!(AndersonConfig::constant(1, 0.0).validate().is_err());
        assert!(AndersonConfig::constant(1, 1.5).validate().is_err());
        assert!(AndersonConfig::two_stage(5, 5, 1e-3, 1.0)
            .validate()
            .is_err());
        assert!(AndersonConfig::two_stage(1, 20, 0.0, 1.0)
            .validate()
            .is_err());
        assert!(AndersonConfig::<f64>::constant(3, 0.3).validate().is_ok());
    }

    #[test]
    fn first_step_is_damped_update() {
        let mut h = AndersonHistory::new();
        let cfg = AndersonConfig::constant(3, 0.5);
        let (x1, rep) = h
            .step(&[1.0, 1.0], &[3.0, -1.0], &Euclidean, &cfg, 0.5)
            .unwrap();
        assert_eq!(x1, vec![2.0, 0.0]);
        assert_eq!(rep.m_k, 0);
        assert_eq!(rep.gain, 1.0);
    }

    #[test]
    fn nonfinite_map_output() {
        let mut h = AndersonHistory::<f64>::new();
        let err = h.propose(&[0.0], &[f64::NAN], &Euclidean, &AndersonConfig::default());
        assert!(matches!(err, Err(Error::Blowup)));
    }

    #[test]
    fn already_converged() {
        let out = drive(
            |x: &[f64]| Ok(x.to_vec()),
            vec![1.0, 2.0],
            &Euclidean,
            &AndersonConfig::constant(2, 1.0),
        )
        .unwrap();
        assert_eq!(out.record.status, Status::Converged);
        assert_eq!(out.record.iterations, 1);
    }

    #[test]
    fn scalar_contraction_rate() {
        let cfg = AndersonConfig::constant(0, 1.0).with_tol(1e-12);
        let out = drive(
            |x: &[f64]| Ok(vec![0.5 * x[0]]),
            vec![1.0],
            &Euclidean,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.record.status, Status::Converged);
        let r = out.record.residuals();
        for pair in r.windows(2) {
            assert!((pair[1] / pair[0] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn blowup_and_budget() {
        let cfg = AndersonConfig::constant(0, 1.0);
        let out = drive(
            |x: &[f64]| Ok(vec![3.0 * x[0] + 1.0]),
            vec![1.0],
            &Euclidean,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.record.status, Status::Blowup);
        assert!(out.record.final_residual().unwrap() > 1e4);

        let cfg = AndersonConfig::constant(0, 1.0).with_max_iters(5);
        let out = drive(
            |x: &[f64]| Ok(vec![0.99 * x[0]]),
            vec![1.0],
            &Euclidean,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.record.status, Status::Failed);
        assert_eq!(out.record.iterations, 5);
        assert_eq!(out.record.rows.len(), 5);
    }

    #[test]
    fn nan_residual_is_blowup() {
        for m in [0, 2] {
            let cfg = AndersonConfig::constant(m, 1.0);
            let out = drive(
                |x: &[f64]| Ok(vec![if x[0] < 0.2 { f64::NAN } else { 0.5 * x[0] }]),
                vec![1.0],
                &Euclidean,
                &cfg,
            )
            .unwrap();
            assert_eq!(out.record.status, Status::Blowup);
            assert!(!out.record.final_residual().unwrap().is_finite());
        }
        assert!(Euclidean.norm(&[f64::NAN]).is_nan());
    }

    #[test]
    fn operator_error_carries_iteration() {
        let mut calls = 0;
        let err = drive(
            |x: &[f64]| {
                calls += 1;
                if calls == 3 {
                    Err(Error::Parse("boom".into()))
                } else {
                    Ok(vec![0.5 * x[0]])
                }
            },
            vec![1.0],
            &Euclidean,
            &AndersonConfig::constant(1, 1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Operator { iteration: 3, .. }));
    }

    #[test]
    fn look_ahead_picks_best_factor() {
        // g(x) = -x: beta = 1/2 lands exactly on the fixed point
        let cfg = AndersonConfig {
            damping: Damping::look_ahead_default(),
            ..AndersonConfig::constant(0, 1.0)
        };
        let out = drive(|x: &[f64]| Ok(vec![-x[0]]), vec![1.0], &Euclidean, &cfg).unwrap();
        assert_eq!(out.record.status, Status::Converged);
        assert_eq!(out.record.rows[0].beta, 0.5);
        assert_eq!(out.record.iterations, 2);
    }

    #[test]
    fn window_and_flush() {
        let cfg = AndersonConfig::<f64>::constant(3, 1.0);
        let mut h = AndersonHistory::new();
        let mut x = vec![1.0f64, -1.0, 0.5];
        for k in 1..=8 {
            let gx: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, v)| (0.3 + 0.1 * i as f64) * v.sin())
                .collect();
            let (xn, rep) = h.step(&x, &gx, &Euclidean, &cfg, 1.0).unwrap();
            assert_eq!(rep.m_k, (k - 1).min(3));
            assert_eq!(h.columns(), (k - 1).min(3));
            x = xn;
        }

        let mut cfg = AndersonConfig::<f64>::two_stage(1, 5, 0.5, 1.0);
        cfg.flush_on_switch = true;
        let mut h = AndersonHistory::new();
        let rep1 = h.propose(&[0.0], &[1.0], &Euclidean, &cfg).unwrap().report;
        let rep2 = h.propose(&[1.0], &[1.9], &Euclidean, &cfg).unwrap().report;
        let rep3 = h.propose(&[2.0], &[2.1], &Euclidean, &cfg).unwrap().report;
        assert_eq!((rep1.m_k, rep2.m_k, rep3.m_k), (0, 1, 1));
    }

    proptest! {
        #[test]
        fn gain_never_exceeds_one(
            w in prop::collection::vec(-10.0f64..10.0, 6),
            cols in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 0..5),
            seed in prop::collection::vec(-1.0f64..1.0, 36),
        ) {
            let ip = spd(6, &seed);
            let s = solve_ls(&w, &cols, &ip, 1e-10);
            prop_assert!(s.objective <= s.initial * (1.0 + 1e-14));
        }

        #[test]
        fn local_optimality(
            w in prop::collection::vec(-1.0f64..1.0, 8),
            cols in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 8), 1..5),
        ) {
            let ip = spd(8, &[0.3, -0.2, 0.5, 0.1, 0.7]);
            let s = solve_ls(&w, &cols, &ip, 1e-10);
            let obj = |g: &[f64]| {
                let mut r = w.clone();
                for (j, c) in cols.iter().enumerate() {
                    for i in 0..r.len() { r[i] -= g[j] * c[i]; }
                }
                ip.norm(&r)
            };
            let base = obj(&s.gamma);
            for j in 0..cols.len() {
                for d in [1e-4, -1e-4] {
                    let mut g = s.gamma.clone();
                    g[j] += d;
                    prop_assert!(obj(&g) >= base - 1e-12);
                }
            }
        }

        #[test]
        fn depth_zero_is_damped_iteration(
            x0 in prop::collection::vec(-1.0f64..1.0, 4),
            beta in 0.05f64..1.0,
        ) {
            let g = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| 0.5 * v.cos() + 0.1 * i as f64).collect() };
            let cfg = AndersonConfig::constant(0, beta).with_max_iters(30);
            let mut h = AndersonHistory::new();
            let mut xa = x0.clone();
            let mut xd = x0.clone();
            for _ in 0..30 {
                let (n, _) = h.step(&xa, &g(&xa), &Euclidean, &cfg, beta).unwrap();
                xa = n;
                let gd = g(&xd);
                let w: Vec<f64> = gd.iter().zip(&xd).map(|(a, b)| a - b).collect();
                xd = xd.iter().zip(&w).map(|(x, w)| x + beta * w).collect();
                prop_assert_eq!(&xa, &xd);
            }
        }
    }
}
