//! Sparse operators and load vectors for the Boussinesq weak forms.
//!
//! Scalar P2 operators are assembled once per cell loop; vector-valued
//! operators reuse them per component. Every element entry is inserted, zeros
//! included, so an operator's sparsity pattern depends only on the mesh and
//! symbolic factorizations can be reused between iterations.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fespace::{p2_table, DofMap, ElementGeometry, Field, ScalarFn, ShapeTable};
use crate::mesh::Mesh;
use crate::quadrature::QuadratureRule;
use crate::sparse::{SparseOperator, TripletBuilder};

pub type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Physical parameters. `ra = ri / (nu * kappa)`, i.e. `Ri Re^2 Pr` with
/// `Re = 1/nu` and `Pr = nu/kappa`.
#[derive(Clone)]
pub struct ProblemConfig {
    pub nu: f64,
    pub kappa: f64,
    pub ri: f64,
    pub forcing: Option<VectorFn>,
    pub source: Option<ScalarFn>,
}

impl std::fmt::Debug for ProblemConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemConfig")
            .field("nu", &self.nu)
            .field("kappa", &self.kappa)
            .field("ri", &self.ri)
            .field("forcing", &self.forcing.is_some())
            .field("source", &self.source.is_some())
            .finish()
    }
}

impl ProblemConfig {
    pub fn new(nu: f64, kappa: f64, ri: f64) -> Self {
        Self {
            nu,
            kappa,
            ri,
            forcing: None,
            source: None,
        }
    }

    /// Heated cavity parameters: `nu = kappa = 0.01`, no body sources.
    pub fn cavity(ri: f64) -> Self {
        Self::new(0.01, 0.01, ri)
    }

    /// Cavity parameters for a given Rayleigh number.
    pub fn cavity_ra(ra: f64) -> Self {
        Self::cavity(ra * 1e-4)
    }

    pub fn ra(&self) -> f64 {
        self.ri / (self.nu * self.kappa)
    }

    pub fn with_forcing(mut self, f: VectorFn) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn with_source(mut self, g: ScalarFn) -> Self {
        self.source = Some(g);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.ri >= 0.0 && self.ri.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Ri must be non-negative, got {}",
                self.ri
            )));
        }
        Ok(())
    }
}

/// Cell loop machinery with per-cell shape tables cached.
#[derive(Debug, Clone)]
pub struct Assembler {
    dofs: DofMap,
    quad: QuadratureRule,
    tables: Vec<ShapeTable<6>>,
}

fn sum_pattern(a: &SparseOperator, sa: f64, b: &SparseOperator, sb: f64) -> SparseOperator {
    a.linear_combination(sa, b, sb)
}

impl Assembler {
    pub fn new(mesh: &Mesh, dofs: DofMap) -> Result<Self> {
        let quad = QuadratureRule::seven_point();
        let tables = (0..mesh.n_triangles())
            .map(|t| ElementGeometry::of_cell(mesh, t).map(|g| p2_table(&g, &quad)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dofs, quad, tables })
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn tables(&self) -> &[ShapeTable<6>] {
        &self.tables
    }

    fn n_p2(&self) -> usize {
        self.dofs.n_p2
    }

    fn scalar_loop(
        &self,
        mut local: impl FnMut(usize, &ShapeTable<6>, &mut [[f64; 6]; 6]),
    ) -> SparseOperator {
        let n = self.n_p2();
        let mut t = TripletBuilder::with_capacity(n, n, 36 * self.tables.len());
        for (c, table) in self.tables.iter().enumerate() {
            let mut a = [[0.0; 6]; 6];
            local(c, table, &mut a);
            let idx = &self.dofs.p2_cells[c];
            for i in 0..6 {
                for j in 0..6 {
                    t.push(idx[i], idx[j], a[i][j]);
                }
            }
        }
        t.build()
    }

    /// `(grad phi_j, grad phi_i)` on the scalar P2 space.
    pub fn scalar_stiffness(&self) -> SparseOperator {
        self.scalar_loop(|_, tab, a| {
            for (q, g) in tab.gradients.iter().enumerate() {
                let w = tab.jxw[q];
                for i in 0..6 {
                    for j in 0..6 {
                        a[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    }
                }
            }
        })
    }

    /// `(phi_j, phi_i)` on the scalar P2 space.
    pub fn scalar_mass(&self) -> SparseOperator {
        self.scalar_loop(|_, tab, a| {
            for (q, v) in tab.values.iter().enumerate() {
                let w = tab.jxw[q];
                for i in 0..6 {
                    for j in 0..6 {
                        a[i][j] += w * v[i] * v[j];
                    }
                }
            }
        })
    }

    /// Advecting velocity at the quadrature points of cell `c`.
    fn velocity_at(&self, u: &[f64], c: usize) -> Vec<[f64; 2]> {
        let n = self.n_p2();
        let idx = &self.dofs.p2_cells[c];
        self.tables[c]
            .values
            .iter()
            .map(|v| {
                let mut s = [0.0; 2];
                for a in 0..6 {
                    s[0] += u[idx[a]] * v[a];
                    s[1] += u[n + idx[a]] * v[a];
                }
                s
            })
            .collect()
    }

    /// Skew-symmetrized convection on the scalar P2 space:
    /// `C_ij = b(u, phi_j, phi_i) = 1/2 [(u.grad phi_j, phi_i) - (u.grad phi_i, phi_j)]`.
    pub fn scalar_convection(&self, u: &[f64]) -> SparseOperator {
        assert_eq!(u.len(), self.dofs.n_velocity, "advecting velocity length");
        self.scalar_loop(|c, tab, a| {
            let uq = self.velocity_at(u, c);
            for q in 0..tab.jxw.len() {
                let w = 0.5 * tab.jxw[q];
                let (v, g) = (&tab.values[q], &tab.gradients[q]);
                let mut adv = [0.0; 6];
                for k in 0..6 {
                    adv[k] = uq[q][0] * g[k][0] + uq[q][1] * g[k][1];
                }
                for i in 0..6 {
                    for j in 0..6 {
                        a[i][j] += w * (adv[j] * v[i] - adv[i] * v[j]);
                    }
                }
            }
        })
    }

    pub fn diffusion(&self, field: Field, coefficient: f64) -> Result<SparseOperator> {
        let k = self.scalar_stiffness().scaled(coefficient);
        match field {
            Field::Velocity => Ok(block_diag2(&k)),
            Field::Temperature => Ok(k),
            Field::Pressure => Err(Error::InvalidArgument(
                "no diffusion operator on the pressure space".into(),
            )),
        }
    }

    pub fn convection(&self, u: &[f64], field: Field) -> Result<SparseOperator> {
        let c = self.scalar_convection(u);
        match field {
            Field::Velocity => Ok(block_diag2(&c)),
            Field::Temperature => Ok(c),
            Field::Pressure => Err(Error::InvalidArgument(
                "no convection operator on the pressure space".into(),
            )),
        }
    }

    /// `D_{q,(c,j)} = (d_c phi_j, q)`, pressure rows by velocity columns.
    pub fn divergence(&self) -> SparseOperator {
        let n = self.n_p2();
        let mut t = TripletBuilder::with_capacity(
            self.dofs.n_pressure,
            self.dofs.n_velocity,
            36 * self.tables.len(),
        );
        for (c, tab) in self.tables.iter().enumerate() {
            let mut a = [[[0.0; 6]; 3]; 2];
            for q in 0..tab.jxw.len() {
                let w = tab.jxw[q];
                let lam = self.quad.points[q];
                for (i, li) in lam.iter().enumerate() {
                    for j in 0..6 {
                        a[0][i][j] += w * li * tab.gradients[q][j][0];
                        a[1][i][j] += w * li * tab.gradients[q][j][1];
                    }
                }
            }
            let prow = &self.dofs.pressure_cells[c];
            let idx = &self.dofs.p2_cells[c];
            for comp in 0..2 {
                for i in 0..3 {
                    for j in 0..6 {
                        t.push(prow[i], comp * n + idx[j], a[comp][i][j]);
                    }
                }
            }
        }
        t.build()
    }

    /// `Ri (phi_j, phi_i)` placed in the vertical-velocity rows: maps
    /// temperature coefficients to the momentum load `Ri (<0, theta>, v)`.
    pub fn buoyancy(&self, ri: f64) -> SparseOperator {
        let n = self.n_p2();
        let m = self.scalar_mass();
        let mut t = TripletBuilder::with_capacity(2 * n, n, m.nnz());
        t.push_block(n, 0, &m, ri);
        t.build()
    }

    /// Linearization of `b(., U, v)` in its first slot:
    /// `N_{(a,i),(c,j)} = 1/2 [(phi_j d_c U_a, phi_i) - (phi_j d_c phi_i, U_a)]`.
    pub fn newton_reaction(&self, u: &[f64]) -> SparseOperator {
        let n = self.n_p2();
        let mut t = TripletBuilder::with_capacity(2 * n, 2 * n, 144 * self.tables.len());
        for (c, tab) in self.tables.iter().enumerate() {
            let idx = &self.dofs.p2_cells[c];
            let mut a = [[[[0.0; 6]; 6]; 2]; 2];
            for q in 0..tab.jxw.len() {
                let w = 0.5 * tab.jxw[q];
                let (v, g) = (&tab.values[q], &tab.gradients[q]);
                let mut ua = [0.0; 2];
                let mut gu = [[0.0; 2]; 2];
                for k in 0..6 {
                    for comp in 0..2 {
                        let coef = u[comp * n + idx[k]];
                        ua[comp] += coef * v[k];
                        gu[comp][0] += coef * g[k][0];
                        gu[comp][1] += coef * g[k][1];
                    }
                }
                for ca in 0..2 {
                    for cc in 0..2 {
                        for i in 0..6 {
                            for j in 0..6 {
                                a[ca][cc][i][j] +=
                                    w * v[j] * (gu[ca][cc] * v[i] - g[i][cc] * ua[ca]);
                            }
                        }
                    }
                }
            }
            for ca in 0..2 {
                for cc in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            t.push(ca * n + idx[i], cc * n + idx[j], a[ca][cc][i][j]);
                        }
                    }
                }
            }
        }
        t.build()
    }

    /// Linearization of `b*(., Theta, chi)` in its first slot:
    /// `T_{i,(c,j)} = 1/2 [(phi_j d_c Theta, phi_i) - (phi_j d_c phi_i, Theta)]`.
    pub fn temperature_coupling(&self, theta: &[f64]) -> SparseOperator {
        let n = self.n_p2();
        let mut t = TripletBuilder::with_capacity(n, 2 * n, 72 * self.tables.len());
        for (c, tab) in self.tables.iter().enumerate() {
            let idx = &self.dofs.p2_cells[c];
            let mut a = [[[0.0; 6]; 6]; 2];
            for q in 0..tab.jxw.len() {
                let w = 0.5 * tab.jxw[q];
                let (v, g) = (&tab.values[q], &tab.gradients[q]);
                let mut th = 0.0;
                let mut gth = [0.0; 2];
                for k in 0..6 {
                    let coef = theta[idx[k]];
                    th += coef * v[k];
                    gth[0] += coef * g[k][0];
                    gth[1] += coef * g[k][1];
                }
                for cc in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            a[cc][i][j] += w * v[j] * (gth[cc] * v[i] - g[i][cc] * th);
                        }
                    }
                }
            }
            for cc in 0..2 {
                for i in 0..6 {
                    for j in 0..6 {
                        t.push(idx[i], cc * n + idx[j], a[cc][i][j]);
                    }
                }
            }
        }
        t.build()
    }

    /// `(f, phi_i e_c)`; zero when `f` is absent.
    pub fn load_velocity(&self, f: Option<&VectorFn>) -> Vec<f64> {
        let n = self.n_p2();
        let mut out = vec![0.0; 2 * n];
        let Some(f) = f else { return out };
        for (c, tab) in self.tables.iter().enumerate() {
            let idx = &self.dofs.p2_cells[c];
            for q in 0..tab.jxw.len() {
                let fx = f(tab.points[q]);
                for i in 0..6 {
                    let s = tab.jxw[q] * tab.values[q][i];
                    out[idx[i]] += s * fx[0];
                    out[n + idx[i]] += s * fx[1];
                }
            }
        }
        out
    }

    /// `(gamma, phi_i)`; zero when `gamma` is absent.
    pub fn load_temperature(&self, gamma: Option<&ScalarFn>) -> Vec<f64> {
        let mut out = vec![0.0; self.n_p2()];
        let Some(g) = gamma else { return out };
        for (c, tab) in self.tables.iter().enumerate() {
            let idx = &self.dofs.p2_cells[c];
            for q in 0..tab.jxw.len() {
                let gx = g(tab.points[q]);
                for i in 0..6 {
                    out[idx[i]] += tab.jxw[q] * tab.values[q][i] * gx;
                }
            }
        }
        out
    }

    /// `(q_i, 1)` for every pressure basis function.
    pub fn pressure_weights(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dofs.n_pressure];
        for (c, tab) in self.tables.iter().enumerate() {
            for q in 0..tab.jxw.len() {
                for (i, l) in self.quad.points[q].iter().enumerate() {
                    out[self.dofs.pressure_cells[c][i]] += tab.jxw[q] * l;
                }
            }
        }
        out
    }

    /// Fully coupled Newton operator and load at the linearization point
    /// `(u, theta)`, in the flat `(u, p, theta)` layout. Dirichlet rows are
    /// not yet eliminated.
    #[allow(clippy::too_many_arguments)]
    pub fn newton_blocks(
        &self,
        u: &[f64],
        theta: &[f64],
        config: &ProblemConfig,
        stiffness: &SparseOperator,
        mass: &SparseOperator,
        divergence: &SparseOperator,
        loads: (&[f64], &[f64]),
    ) -> (SparseOperator, Vec<f64>) {
        let n = self.n_p2();
        let (nv, np) = (self.dofs.n_velocity, self.dofs.n_pressure);
        let total = nv + np + n;
        let c = self.scalar_convection(u);
        let nreact = self.newton_reaction(u);
        let tcouple = self.temperature_coupling(theta);
        let vel_diag = sum_pattern(stiffness, config.nu, &c, 1.0);
        let temp_diag = sum_pattern(stiffness, config.kappa, &c, 1.0);

        let cap = 2 * vel_diag.nnz()
            + nreact.nnz()
            + 2 * divergence.nnz()
            + mass.nnz()
            + tcouple.nnz()
            + temp_diag.nnz();
        let mut t = TripletBuilder::with_capacity(total, total, cap);
        t.push_block(0, 0, &vel_diag, 1.0);
        t.push_block(n, n, &vel_diag, 1.0);
        t.push_block(0, 0, &nreact, 1.0);
        push_transposed(&mut t, 0, nv, divergence, -1.0);
        t.push_block(n, nv + np, mass, -config.ri);
        t.push_block(nv, 0, divergence, -1.0);
        t.push_block(nv + np, 0, &tcouple, 1.0);
        t.push_block(nv + np, nv + np, &temp_diag, 1.0);

        let mut rhs = vec![0.0; total];
        let (fu, ft) = loads;
        let cu0 = c.matvec(&u[..n]);
        let cu1 = c.matvec(&u[n..]);
        let ct = c.matvec(theta);
        for i in 0..n {
            rhs[i] = fu[i] + cu0[i];
            rhs[n + i] = fu[n + i] + cu1[i];
            rhs[nv + np + i] = ft[i] + ct[i];
        }
        (t.build(), rhs)
    }
}

/// Pushes `scale * op^T` with its corner at `(row0, col0)`.
pub(crate) fn push_transposed(
    t: &mut TripletBuilder,
    row0: usize,
    col0: usize,
    op: &SparseOperator,
    scale: f64,
) {
    for (i, j, v) in op.iter() {
        t.push(row0 + j, col0 + i, scale * v);
    }
}

/// `diag(a, a)`
pub fn block_diag2(a: &SparseOperator) -> SparseOperator {
    let (r, c) = (a.nrows(), a.ncols());
    let mut t = TripletBuilder::with_capacity(2 * r, 2 * c, 2 * a.nnz());
    t.push_block(0, 0, a, 1.0);
    t.push_block(r, c, a, 1.0);
    t.build()
}

/// Dirichlet elimination for a flat unknown vector. Free unknowns keep their
/// relative order, so reduction maps sorted CSR rows to sorted CSR rows.
#[derive(Debug, Clone)]
pub struct Reduction {
    map: Vec<Option<usize>>,
    values: Vec<f64>,
    free: Vec<usize>,
}

impl Reduction {
    /// `fixed[i] = Some(v)` pins unknown `i` to `v`.
    pub fn new(fixed: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut map = Vec::new();
        let mut values = Vec::new();
        let mut free = Vec::new();
        for (i, f) in fixed.into_iter().enumerate() {
            match f {
                Some(v) => {
                    map.push(None);
                    values.push(v);
                }
                None => {
                    map.push(Some(free.len()));
                    values.push(0.0);
                    free.push(i);
                }
            }
        }
        Self { map, values, free }
    }

    pub fn full_len(&self) -> usize {
        self.map.len()
    }

    pub fn free_len(&self) -> usize {
        self.free.len()
    }

    pub fn reduced_index(&self, i: usize) -> Option<usize> {
        self.map[i]
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    /// Removes fixed rows and columns, moving the fixed columns times their
    /// values to the right-hand side.
    pub fn reduce(&self, a: &SparseOperator, rhs: &[f64]) -> (SparseOperator, Vec<f64>) {
        assert_eq!(a.nrows(), self.map.len());
        assert_eq!(a.ncols(), self.map.len());
        let nf = self.free.len();
        let mut t = TripletBuilder::with_capacity(nf, nf, a.nnz());
        let mut b = vec![0.0; nf];
        for (r, &i) in self.free.iter().enumerate() {
            b[r] = rhs[i];
            for (j, v) in a.row(i) {
                match self.map[j] {
                    Some(cj) => t.push(r, cj, v),
                    None => b[r] -= v * self.values[j],
                }
            }
        }
        (t.build(), b)
    }

    pub fn restrict(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }

    pub fn expand(&self, xr: &[f64]) -> Vec<f64> {
        let mut x = self.values.clone();
        for (r, &i) in self.free.iter().enumerate() {
            x[i] = xr[r];
        }
        x
    }
}
