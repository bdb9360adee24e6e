//! Step-size selection for the undamped Newton iteration.
//!
//! Both searches work on a scalar merit function `phi(r)`, the residual
//! objective at `base + r * step`. [`ls1`] halves the ratio from 1 down to a
//! floor, [`ls2`] minimizes `phi` over a bracket with Brent's method.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::anderson::{ConvergenceRecord, InnerProduct, IterationLog, Status};
use crate::error::{Error, Result};
use crate::fixedpoint::sigma_k;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LineSearchKind {
    #[default]
    None,
    /// Step halving.
    Ls1,
    /// Bounded scalar minimization.
    Ls2,
}

impl LineSearchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LineSearchKind::None => "none",
            LineSearchKind::Ls1 => "ls1",
            LineSearchKind::Ls2 => "ls2",
        }
    }
}

impl fmt::Display for LineSearchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LineSearchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(LineSearchKind::None),
            "ls1" => Ok(LineSearchKind::Ls1),
            "ls2" => Ok(LineSearchKind::Ls2),
            _ => Err(Error::Parse(format!("unknown line search `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchSpec<T> {
    pub kind: LineSearchKind,
    /// Smallest ratio tried by step halving.
    pub floor: T,
    pub bracket: (T, T),
    /// Absolute tolerance on the minimizing ratio.
    pub tol: T,
    /// Objective evaluations allowed to the bounded minimizer.
    pub budget: usize,
}

impl<T: Scalar> Default for LineSearchSpec<T> {
    fn default() -> Self {
        Self {
            kind: LineSearchKind::None,
            floor: T::lit(1.0 / 64.0),
            bracket: (T::lit(0.01), T::one()),
            tol: T::lit(1e-3),
            budget: 50,
        }
    }
}

impl<T: Scalar> LineSearchSpec<T> {
    pub fn new(kind: LineSearchKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.floor > T::zero() && self.floor <= T::one()) {
            return Err(Error::Configuration(format!(
                "line search floor {} not in (0, 1]",
                self.floor
            )));
        }
        let (lo, hi) = self.bracket;
        if !(lo > T::zero() && lo < hi && hi <= T::one()) {
            return Err(Error::Configuration(format!(
                "line search bracket [{lo}, {hi}] not within (0, 1]"
            )));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::Configuration(
                "line search tolerance must be positive".into(),
            ));
        }
        if self.budget < 3 {
            return Err(Error::Configuration(
                "line search budget must be at least 3".into(),
            ));
        }
        Ok(())
    }

    /// Picks a ratio for the configured strategy. `f0` is the objective at
    /// the base point and is only used by step halving.
    pub fn search<F>(&self, f0: T, phi: F) -> Result<StepChoice<T>>
    where
        F: FnMut(T) -> Result<T>,
    {
        self.validate()?;
        match self.kind {
            LineSearchKind::None => Ok(StepChoice {
                ratio: T::one(),
                objective: None,
                evaluations: 0,
                fallback: false,
            }),
            LineSearchKind::Ls1 => ls1(f0, phi, self.floor),
            LineSearchKind::Ls2 => ls2(phi, self.bracket, self.tol, self.budget),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepChoice<T> {
    pub ratio: T,
    /// Objective at the chosen ratio, when it was evaluated.
    pub objective: Option<T>,
    pub evaluations: usize,
    /// Step halving reached the floor without a decrease.
    pub fallback: bool,
}

/// Halves the ratio from 1 until `phi(r) < f0`, settling for `floor`
/// otherwise.
pub fn ls1<T, F>(f0: T, mut phi: F, floor: T) -> Result<StepChoice<T>>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let half = T::lit(0.5);
    let mut r = T::one();
    let mut evaluations = 0;
    let mut last = None;
    while r >= floor * (T::one() - T::epsilon()) {
        let v = phi(r)?;
        evaluations += 1;
        if v < f0 {
            return Ok(StepChoice {
                ratio: r,
                objective: Some(v),
                evaluations,
                fallback: false,
            });
        }
        last = Some((r, v));
        r *= half;
    }
    let objective = match last {
        Some((lr, v)) if lr == floor => Some(v),
        _ => None,
    };
    Ok(StepChoice {
        ratio: floor,
        objective,
        evaluations,
        fallback: true,
    })
}

/// Minimizes `phi` over `[lo, hi]` with golden-section steps and parabolic
/// interpolation, then keeps whichever of the result and the two endpoints
/// is lowest.
pub fn ls2<T, F>(mut phi: F, bracket: (T, T), tol: T, budget: usize) -> Result<StepChoice<T>>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let (lo, hi) = bracket;
    let (mut x, mut fx, mut evaluations) =
        brent(&mut phi, lo, hi, tol, budget.saturating_sub(2).max(1))?;
    for end in [hi, lo] {
        let fe = phi(end)?;
        evaluations += 1;
        if fe < fx {
            x = end;
            fx = fe;
        }
    }
    Ok(StepChoice {
        ratio: x,
        objective: Some(fx),
        evaluations,
        fallback: false,
    })
}

fn finite_or_max<T: Scalar>(v: T) -> T {
    if v.is_finite() {
        v
    } else {
        T::max_value()
    }
}

fn brent<T, F>(phi: &mut F, lo: T, hi: T, tol: T, budget: usize) -> Result<(T, T, usize)>
where
    T: Scalar,
    F: FnMut(T) -> Result<T>,
{
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let cgold = T::lit(0.5 * (3.0 - 5f64.sqrt()));
    let sqrt_eps = T::epsilon().sqrt();

    let (mut a, mut b) = (lo, hi);
    let mut x = a + cgold * (b - a);
    let (mut v, mut w) = (x, x);
    let (mut d, mut e) = (T::zero(), T::zero());
    let mut fx = finite_or_max(phi(x)?);
    let (mut fv, mut fw) = (fx, fx);
    let mut evaluations = 1;

    while evaluations < budget {
        let xm = half * (a + b);
        let tol1 = sqrt_eps * x.abs() + tol / T::lit(3.0);
        let tol2 = two * tol1;
        if (x - xm).abs() <= tol2 - half * (b - a) {
            break;
        }

        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = two * (q - r);
            if q > T::zero() {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            if p.abs() < (half * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = cgold * e;
        }

        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = finite_or_max(phi(u)?);
        evaluations += 1;

        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Ok((x, fx, evaluations))
}

/// Stopping rule for the line-searched Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopping {
    pub tol: f64,
    pub max_iters: usize,
    pub blowup: f64,
}

impl Default for Stopping {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
            blowup: 1e4,
        }
    }
}

/// Runs `x <- x + r (g(x) - x)` with `r` picked by `spec` on `objective`.
///
/// Convergence and blowup are judged on `|| g(x) - x ||` in `ip`, as for the
/// accelerated iteration, so records from both drivers are comparable. The
/// chosen ratio is logged in the `beta` column.
pub fn drive_line_search<G, O, P>(
    mut g: G,
    mut objective: O,
    x0: Vec<f64>,
    ip: &P,
    spec: &LineSearchSpec<f64>,
    stop: Stopping,
) -> Result<(ConvergenceRecord, Vec<f64>)>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
    O: FnMut(&[f64]) -> Result<f64>,
    P: InnerProduct<f64> + ?Sized,
{
    spec.validate()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut x = x0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut status = Status::Failed;
    let mut solution = None;
    let mut k = 0;
    let wrap = |k: usize| {
        move |e: Error| Error::Operator {
            iteration: k,
            source: Box::new(e),
        }
    };

    while k < stop.max_iters {
        k += 1;
        let gx = match g(&x) {
            Ok(v) => v,
            Err(Error::Blowup) => {
                status = Status::Blowup;
                break;
            }
            Err(e) => return Err(wrap(k)(e)),
        };
        let w: Vec<f64> = gx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let norm = ip.norm(&w);
        let sigma = prev
            .as_ref()
            .and_then(|(xp, wp)| sigma_k(&w, wp, &x, xp, ip));
        let mut row = IterationLog {
            k,
            residual: norm,
            xi: None,
            sigma,
            m_k: 0,
            beta: 0.0,
            seconds: 0.0,
        };
        if norm < stop.tol || !(norm <= stop.blowup) || k == stop.max_iters {
            row.seconds = start.elapsed().as_secs_f64();
            rows.push(row);
            if norm < stop.tol {
                status = Status::Converged;
                solution = Some(gx);
            } else if !(norm <= stop.blowup) {
                status = Status::Blowup;
            }
            break;
        }

        let choice = match spec.kind {
            LineSearchKind::None => spec.search(0.0, |_| Ok(0.0)),
            _ => {
                let f0 = objective(&x);
                let x_ref = &x;
                let w_ref = &w;
                f0.and_then(|f0| spec.search(f0, |r| objective(&trial(x_ref, w_ref, r))))
            }
        };
        let choice = match choice {
            Ok(c) => c,
            Err(Error::Blowup) => {
                row.seconds = start.elapsed().as_secs_f64();
                rows.push(row);
                status = Status::Blowup;
                break;
            }
            Err(e) => return Err(wrap(k)(e)),
        };
        row.beta = choice.ratio;
        row.seconds = start.elapsed().as_secs_f64();
        rows.push(row);
        let next = if choice.ratio == 1.0 {
            gx
        } else {
            trial(&x, &w, choice.ratio)
        };
        prev = Some((std::mem::replace(&mut x, next), w));
    }

    let record = ConvergenceRecord {
        label: String::new(),
        rows,
        status,
        iterations: k,
        seconds: start.elapsed().as_secs_f64(),
        message: None,
    };
    Ok((record, solution.unwrap_or(x)))
}

/// `base + r * step`
pub fn trial(base: &[f64], step: &[f64], r: f64) -> Vec<f64> {
    base.iter().zip(step).map(|(b, s)| b + r * s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anderson::Euclidean;
    use std::cell::Cell;

    fn counted<'a>(
        calls: &'a Cell<usize>,
        f: impl Fn(f64) -> f64 + 'a,
    ) -> impl FnMut(f64) -> Result<f64> + 'a {
        move |r| {
            calls.set(calls.get() + 1);
            Ok(f(r))
        }
    }

    #[test]
    fn ls1_full_step() {
        let c = Cell::new(0);
        let s = ls1(1.0, counted(&c, |r| 1.0 - 0.5 * r), 1.0 / 64.0).unwrap();
        assert_eq!(s.ratio, 1.0);
        assert!(!s.fallback);
        assert_eq!(c.get(), 1);
    }

    #[test]
    fn ls1_first_halving_below_threshold() {
        // decreases only for r < 0.3
        let s = ls1(
            1.0,
            |r: f64| Ok(if r < 0.3 { 0.5 } else { 2.0 }),
            1.0 / 64.0,
        )
        .unwrap();
        assert_eq!(s.ratio, 0.25);
        assert_eq!(s.evaluations, 3);
    }

    #[test]
    fn ls1_fallback_at_floor() {
        let c = Cell::new(0);
        let s = ls1(1.0, counted(&c, |_| 3.0), 1.0 / 64.0).unwrap();
        assert_eq!(s.ratio, 1.0 / 64.0);
        assert!(s.fallback);
        assert_eq!(c.get(), 7);
        assert_eq!(s.objective, Some(3.0));
    }

    #[test]
    fn ls1_propagates_errors() {
        let err = ls1(1.0, |_: f64| Err(Error::Blowup), 0.5).unwrap_err();
        assert!(matches!(err, Error::Blowup));
    }

    #[test]
    fn ls2_quadratic() {
        let s = ls2(|r: f64| Ok((r - 0.4) * (r - 0.4)), (0.01, 1.0), 1e-3, 50).unwrap();
        assert!((s.ratio - 0.4).abs() <= 1e-3, "{}", s.ratio);
        assert!(s.evaluations <= 50);
    }

    #[test]
    fn ls2_monotone() {
        let s = ls2(|r: f64| Ok(-r), (0.01, 1.0), 1e-3, 50).unwrap();
        assert!((s.ratio - 1.0).abs() <= 1e-3);
        let s = ls2(|r: f64| Ok(r.exp()), (0.01, 1.0), 1e-3, 50).unwrap();
        assert!((s.ratio - 0.01).abs() <= 1e-3);
    }

    #[test]
    fn ls2_respects_budget_and_endpoints() {
        let c = Cell::new(0);
        // local minimum near 0.3, global minimum at the right end
        let f = |r: f64| (10.0 * r).sin() + 2.0 * r * r * r;
        let s = ls2(counted(&c, f), (0.01, 1.0), 1e-3, 10).unwrap();
        assert!(c.get() <= 10);
        assert!(s.objective.unwrap() <= f(0.01) + 1e-3);
        assert!(s.objective.unwrap() <= f(1.0) + 1e-3);
    }

    #[test]
    fn ls2_handles_non_finite() {
        let s = ls2(
            |r: f64| Ok(if r > 0.5 { f64::NAN } else { (r - 0.2).powi(2) }),
            (0.01, 1.0),
            1e-3,
            50,
        )
        .unwrap();
        assert!((s.ratio - 0.2).abs() <= 1e-3, "{}", s.ratio);
    }

    #[test]
    fn spec_validation() {
        let mut s = LineSearchSpec::<f64>::new(LineSearchKind::Ls2);
        assert!(s.validate().is_ok());
        s.bracket = (0.0, 1.0);
        assert!(s.validate().is_err());
        let mut s = LineSearchSpec::<f64>::new(LineSearchKind::Ls1);
        s.floor = 1.5;
        assert!(s.validate().is_err());
        assert_eq!(
            "LS2".parse::<LineSearchKind>().unwrap(),
            LineSearchKind::Ls2
        );
        assert!("ls3".parse::<LineSearchKind>().is_err());
    }

    #[test]
    fn none_takes_full_step() {
        let s = LineSearchSpec::<f64>::default()
            .search(1.0, |_| unreachable!())
            .unwrap();
        assert_eq!(s.ratio, 1.0);
        assert_eq!(s.evaluations, 0);
    }

    #[test]
    fn damped_newton_on_scalar_root() {
        // Newton for atan(x) = 0 diverges from x0 = 2 without a line search.
        let g = |x: &[f64]| Ok(vec![x[0] - x[0].atan() * (1.0 + x[0] * x[0])]);
        let obj = |x: &[f64]| Ok(x[0].atan().abs());
        let stop = Stopping {
            tol: 1e-10,
            max_iters: 50,
            blowup: 1e4,
        };
        let (rec, _) = drive_line_search(
            g,
            obj,
            vec![2.0],
            &Euclidean,
            &LineSearchSpec::default(),
            stop,
        )
        .unwrap();
        assert_eq!(rec.status, Status::Blowup);
        for kind in [LineSearchKind::Ls1, LineSearchKind::Ls2] {
            let (rec, x) = drive_line_search(
                g,
                obj,
                vec![2.0],
                &Euclidean,
                &LineSearchSpec::new(kind),
                stop,
            )
            .unwrap();
            assert_eq!(rec.status, Status::Converged, "{kind}");
            assert!(x[0].abs() < 1e-9);
            assert!(rec.rows[0].beta < 1.0);
        }
    }

    #[test]
    fn nan_map_output_is_blowup() {
        let g = |x: &[f64]| Ok(vec![if x[0] < 0.6 { f64::NAN } else { 0.5 * x[0] }]);
        let obj = |x: &[f64]| Ok(x[0].abs());
        let stop = Stopping::default();
        for kind in [LineSearchKind::None, LineSearchKind::Ls1] {
            let (rec, _) = drive_line_search(
                g,
                obj,
                vec![1.0],
                &Euclidean,
                &LineSearchSpec::new(kind),
                stop,
            )
            .unwrap();
            assert_eq!(rec.status, Status::Blowup, "{kind}");
        }
    }

    proptest::proptest! {
        #[test]
        fn ls2_never_worse_than_endpoints(
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
            c in -5.0f64..5.0,
            d in -2.0f64..2.0,
        ) {
            let phi = |r: f64| Ok(((a * r + b) * r + c) * r + d * (7.0 * r).sin());
            let s = ls2(phi, (0.01, 1.0), 1e-3, 50).unwrap();
            let f = s.objective.unwrap();
            proptest::prop_assert!(f <= phi(0.01).unwrap() && f <= phi(1.0).unwrap());
            proptest::prop_assert!((0.01..=1.0).contains(&s.ratio));
            proptest::prop_assert!(s.evaluations <= 50);
        }

        #[test]
        fn ls1_ratio_is_a_power_of_two_above_floor(cut in 0.0f64..1.5) {
            let s = ls1(1.0, |r: f64| Ok(if r <= cut { 0.5 } else { 2.0 }), 1.0 / 64.0).unwrap();
            proptest::prop_assert!(s.ratio >= 1.0 / 64.0);
            proptest::prop_assert_eq!(s.ratio.log2().fract(), 0.0);
            proptest::prop_assert_eq!(s.fallback, cut < 1.0 / 64.0);
        }
    }
}
