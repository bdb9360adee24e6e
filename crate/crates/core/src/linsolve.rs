//! Sparse direct solution of the assembled linear systems.
//!
//! All three system shapes (temperature transport, Oseen saddle point, coupled
//! Newton block system) go through a sparse LU with partial pivoting. Linear
//! constraints are appended as Lagrange multiplier rows and columns.
//!
//! A dense multiplier row makes the column elimination tree of the LU dense,
//! so a constraint whose kernel direction is known (the pressure mean) can be
//! given as a [`KernelConstraint`] instead: one unknown is pinned, the rest
//! solved, and the result shifted along the kernel. For a consistent system
//! this is the multiplier solution with a zero multiplier; the final residual
//! is checked against the original operator.

use std::sync::Mutex;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use crate::error::{Error, Result};
use crate::sparse::{SparseOperator, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SparseLu,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Required relative residual `|Ax - b| / |b|`.
    pub tolerance: f64,
    /// Iterative refinement passes allowed to reach the tolerance.
    pub max_refinement: usize,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_refinement: 10,
            method: Method::SparseLu,
        }
    }
}

/// A square operator, its right-hand side, and homogeneous linear
/// constraints `c . x = 0` enforced through multipliers.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: SparseOperator,
    pub rhs: Vec<f64>,
    pub constraints: Vec<Vec<(usize, f64)>>,
    pub kernel_constraint: Option<KernelConstraint>,
    pub options: SolverOptions,
}

/// Constraint `row . x = 0` on a singular operator whose kernel is spanned by
/// `kernel`, and whose rhs is compatible.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConstraint {
    pub row: Vec<(usize, f64)>,
    pub kernel: Vec<(usize, f64)>,
}

impl KernelConstraint {
    fn pinned(&self) -> usize {
        let mut best = (0, 0.0f64);
        for &(i, v) in &self.kernel {
            if v.abs() > best.1 {
                best = (i, v.abs());
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub residual: f64,
    pub method: Method,
    pub refinement_steps: usize,
    pub size: usize,
}

impl LinearSystem {
    pub fn new(matrix: SparseOperator, rhs: Vec<f64>) -> Self {
        Self {
            matrix,
            rhs,
            constraints: Vec::new(),
            kernel_constraint: None,
            options: SolverOptions::default(),
        }
    }

    pub fn with_kernel_constraint(
        mut self,
        row: Vec<(usize, f64)>,
        kernel: Vec<(usize, f64)>,
    ) -> Self {
        self.kernel_constraint = Some(KernelConstraint { row, kernel });
        self
    }

    pub fn with_constraint(mut self, row: Vec<(usize, f64)>) -> Self {
        self.constraints.push(row);
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.matrix.nrows();
        if self.matrix.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "operator is {}x{}, expected square",
                n,
                self.matrix.ncols()
            )));
        }
        if self.rhs.len() != n {
            return Err(Error::InvalidArgument(format!(
                "rhs has length {}, operator has {} rows",
                self.rhs.len(),
                n
            )));
        }
        if self.constraints.iter().flatten().any(|&(i, _)| i >= n) {
            return Err(Error::InvalidArgument(
                "constraint index out of range".into(),
            ));
        }
        if let Some(kc) = &self.kernel_constraint {
            if kc.row.iter().chain(&kc.kernel).any(|&(i, _)| i >= n) {
                return Err(Error::InvalidArgument(
                    "constraint index out of range".into(),
                ));
            }
            if !kc.kernel.iter().any(|&(_, v)| v != 0.0) {
                return Err(Error::InvalidArgument("kernel vector is zero".into()));
            }
            let cn: f64 = dot_sparse(&kc.row, &kc.kernel);
            if cn == 0.0 {
                return Err(Error::InvalidArgument(
                    "constraint row annihilates the kernel vector".into(),
                ));
            }
        }
        Ok(())
    }

    /// Operator and rhs with the multiplier rows/columns appended and the
    /// kernel constraint's unknown pinned.
    fn augmented(&self) -> (SparseOperator, Vec<f64>) {
        let pin = self
            .kernel_constraint
            .as_ref()
            .map(KernelConstraint::pinned);
        if self.constraints.is_empty() && pin.is_none() {
            return (self.matrix.clone(), self.rhs.clone());
        }
        let n = self.matrix.nrows();
        let total = n + self.constraints.len();
        let mut t = TripletBuilder::with_capacity(total, total, self.matrix.nnz() + 1);
        match pin {
            None => t.push_block(0, 0, &self.matrix, 1.0),
            Some(p) => {
                for (i, j, v) in self.matrix.iter() {
                    if i != p && j != p {
                        t.push(i, j, v);
                    }
                }
                t.push(p, p, 1.0);
            }
        }
        for (k, row) in self.constraints.iter().enumerate() {
            for &(i, c) in row {
                t.push(n + k, i, c);
                t.push(i, n + k, c);
            }
        }
        let mut rhs = self.rhs.clone();
        if let Some(p) = pin {
            rhs[p] = 0.0;
        }
        rhs.resize(total, 0.0);
        (t.build(), rhs)
    }
}

fn dot_sparse(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut dense: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    for &(i, v) in b {
        *dense.entry(i).or_default() += v;
    }
    a.iter()
        .map(|(i, v)| v * dense.get(i).copied().unwrap_or(0.0))
        .sum()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Factorized operator, reusable for many right-hand sides.
pub struct Factorization {
    lu: Lu<usize, f64>,
    n: usize,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization").field("n", &self.n).finish()
    }
}

impl Factorization {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

struct CachedSymbolic {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicLu<usize>,
}

/// Sparse LU solver that keeps the symbolic analysis of the last pattern it
/// saw. The cache never changes numerical results: the fill-reducing ordering
/// is a function of the pattern alone.
#[derive(Default)]
pub struct DirectSolver {
    cache: Mutex<Option<CachedSymbolic>>,
}

impl std::fmt::Debug for DirectSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectSolver").finish_non_exhaustive()
    }
}

impl DirectSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn factorize(&self, matrix: &SparseOperator) -> Result<Factorization> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::InvalidArgument(
                "factorize: operator not square".into(),
            ));
        }
        // CSR of A^T is CSC of A.
        let csc = matrix.transpose();
        let (col_ptr, row_idx, vals) = (csc.row_ptr(), csc.col_idx(), csc.values());
        let view = SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(n, n, col_ptr, None, row_idx),
            vals,
        );

        let symbolic = {
            let mut guard = self.cache.lock().expect("solver cache poisoned");
            let hit = guard
                .as_ref()
                .filter(|c| c.col_ptr == col_ptr && c.row_idx == row_idx)
                .map(|c| c.symbolic.clone());
            match hit {
                Some(s) => s,
                None => {
                    let s =
                        SymbolicLu::try_new(view.symbolic()).map_err(|e| Error::SolverFailure {
                            residual: f64::INFINITY,
                            reason: format!("symbolic analysis: {e:?}"),
                        })?;
                    *guard = Some(CachedSymbolic {
                        col_ptr: col_ptr.to_vec(),
                        row_idx: row_idx.to_vec(),
                        symbolic: s.clone(),
                    });
                    s
                }
            }
        };

        let lu = Lu::try_new_with_symbolic(symbolic, view).map_err(|e| Error::SolverFailure {
            residual: f64::INFINITY,
            reason: format!("numeric factorization: {e:?}"),
        })?;
        Ok(Factorization { lu, n })
    }

    /// Solves the system, returning the primal unknowns (multipliers dropped).
    pub fn solve(&self, system: &LinearSystem) -> Result<(Vec<f64>, SolveReport)> {
        system.validate()?;
        let n = system.matrix.nrows();
        let (a, b) = system.augmented();
        let total = a.nrows();
        let bnorm = norm2(&system.rhs);
        if bnorm == 0.0 {
            let report = SolveReport {
                residual: 0.0,
                method: system.options.method,
                refinement_steps: 0,
                size: total,
            };
            return Ok((vec![0.0; n], report));
        }

        let fact = self.factorize(&a)?;
        let pin = system
            .kernel_constraint
            .as_ref()
            .map(KernelConstraint::pinned);
        let shift = |x: &mut [f64]| {
            if let Some(kc) = &system.kernel_constraint {
                let s = kc.row.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
                    / dot_sparse(&kc.row, &kc.kernel);
                for &(i, v) in &kc.kernel {
                    x[i] -= s * v;
                }
            }
        };
        // Residual of the original system, multiplier rows included.
        let residual_of = |x: &[f64]| -> (Vec<f64>, f64) {
            let mut r = system.matrix.matvec(&x[..n]);
            r.iter_mut()
                .zip(&system.rhs)
                .for_each(|(ri, bi)| *ri = bi - *ri);
            for (k, row) in system.constraints.iter().enumerate() {
                let lambda = x[n + k];
                let mut cx = 0.0;
                for &(i, c) in row {
                    r[i] -= lambda * c;
                    cx += c * x[i];
                }
                r.push(-cx);
            }
            let rel = norm2(&r) / bnorm;
            (r, rel)
        };
        let mut x = fact.solve(&b);
        shift(&mut x);
        let (mut r, mut rel) = residual_of(&x);
        let mut steps = 0;
        while !(rel <= system.options.tolerance) && steps < system.options.max_refinement {
            if !rel.is_finite() {
                break;
            }
            if let Some(p) = pin {
                r[p] = 0.0;
            }
            let dx = fact.solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
            shift(&mut x);
            let prev = rel;
            (r, rel) = residual_of(&x);
            steps += 1;
            if !(rel < 0.5 * prev) {
                break;
            }
        }
        x.truncate(n);
        if !(rel <= system.options.tolerance) {
            return Err(Error::SolverFailure {
                residual: rel,
                reason: format!("tolerance {:e} not reached", system.options.tolerance),
            });
        }
        Ok((
            x,
            SolveReport {
                residual: rel,
                method: system.options.method,
                refinement_steps: steps,
                size: total,
            },
        ))
    }
}

/// One-shot solve without symbolic reuse.
pub fn solve(system: &LinearSystem) -> Result<(Vec<f64>, SolveReport)> {
    DirectSolver::new().solve(system)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity() {
        let r = vec![1.0, -2.0, 3.5];
        let (x, rep) = solve(&LinearSystem::new(SparseOperator::identity(3), r.clone())).unwrap();
        assert_eq!(x, r);
        assert!(rep.residual <= 1e-12);
    }

    #[test]
    fn diagonal_two_by_two() {
        let a = SparseOperator::from_dense(&[vec![2.0, 0.0], vec![0.0, 4.0]]);
        let (x, _) = solve(&LinearSystem::new(a, vec![2.0, 4.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_pivot_needs_pivoting() {
        // saddle-point shape with a zero diagonal block
        let a = SparseOperator::from_dense(&[
            vec![2.0, 0.0, 1.0],
            vec![0.0, 3.0, 1.0],
            vec![1.0, 1.0, 0.0],
        ]);
        let b = vec![1.0, 2.0, 0.5];
        let (x, rep) = solve(&LinearSystem::new(a.clone(), b.clone())).unwrap();
        let ax = a.matvec(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-14);
        }
        assert!(rep.residual < 1e-14);
    }

    #[test]
    fn constraint_multiplier() {
        // Neumann Laplacian on 3 nodes is singular; the mean constraint fixes it.
        let a = SparseOperator::from_dense(&[
            vec![1.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 1.0],
        ]);
        let sys = LinearSystem::new(a.clone(), vec![1.0, 0.0, -1.0]).with_constraint(vec![
            (0, 1.0),
            (1, 1.0),
            (2, 1.0),
        ]);
        let (x, rep) = solve(&sys).unwrap();
        assert_eq!(x.len(), 3);
        assert!((x.iter().sum::<f64>()).abs() < 1e-14);
        assert!((x[0] - x[2] - 2.0).abs() < 1e-14);
        assert_eq!(rep.size, 4);
    }

    #[test]
    fn kernel_constraint_matches_multiplier() {
        let a = SparseOperator::from_dense(&[
            vec![1.0, -1.0, 0.0, 0.0],
            vec![-1.0, 2.0, -1.0, 0.0],
            vec![0.0, -1.0, 2.0, -1.0],
            vec![0.0, 0.0, -1.0, 1.0],
        ]);
        let b = vec![1.0, 0.5, -0.25, -1.25];
        let row = vec![(0, 1.0), (1, 2.0), (2, 2.0), (3, 1.0)];
        let ones: Vec<(usize, f64)> = (0..4).map(|i| (i, 1.0)).collect();
        let (x1, _) =
            solve(&LinearSystem::new(a.clone(), b.clone()).with_constraint(row.clone())).unwrap();
        let (x2, _) = solve(
            &LinearSystem::new(a.clone(), b.clone()).with_kernel_constraint(row, ones.clone()),
        )
        .unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-13);
        }
        // incompatible rhs is caught by the residual check
        let bad = vec![1.0, 0.0, 0.0, 0.0];
        let err = solve(&LinearSystem::new(a, bad).with_kernel_constraint(vec![(0, 1.0)], ones))
            .unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }));
    }

    #[test]
    fn singular_reported() {
        let a = SparseOperator::from_dense(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let err = solve(&LinearSystem::new(a, vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::SolverFailure { .. }), "{err}");
    }

    #[test]
    fn dimension_mismatch() {
        let err = solve(&LinearSystem::new(SparseOperator::identity(2), vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn repeat_solves_bitwise_identical() {
        let a = SparseOperator::from_dense(&[
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ]);
        let sys = LinearSystem::new(a, vec![0.3, -1.1, 2.7]);
        let solver = DirectSolver::new();
        let (x1, _) = solver.solve(&sys).unwrap();
        let (x2, _) = solver.solve(&sys).unwrap();
        let (x3, _) = solve(&sys).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(x1, x3);
    }
}
