//! Picard and Newton fixed-point maps for the discrete Boussinesq system, the
//! energy inner product they are accelerated in, and a-priori diagnostics.
//!
//! States are flattened as `[u; p; theta]` with velocity component-major.
//! The energy inner product weights velocity by `nu K` and temperature by
//! `kappa K`; pressure carries zero weight.

use std::sync::Arc;

use crate::anderson::InnerProduct;
use crate::assembly::{block_diag2, push_transposed, Assembler, ProblemConfig, Reduction};
use crate::error::{Error, Result, Stage};
use crate::fespace::{build_dofmap, p2_table, BcSpec, DofMap, ElementFamily, ElementGeometry};
use crate::linsolve::{DirectSolver, Factorization, LinearSystem};
use crate::mesh::Mesh;
use crate::quadrature::QuadratureRule;
use crate::scalar::norm_sqrt;
use crate::sparse::{SparseOperator, TripletBuilder};

/// Offsets of the three fields in a flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_u: usize,
    pub n_p: usize,
    pub n_theta: usize,
}

impl StateLayout {
    pub fn of(dofs: &DofMap) -> Self {
        Self {
            n_u: dofs.n_velocity,
            n_p: dofs.n_pressure,
            n_theta: dofs.n_temperature,
        }
    }

    pub fn len(&self) -> usize {
        self.n_u + self.n_p + self.n_theta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_offset(&self) -> usize {
        self.n_u + self.n_p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub theta: Vec<f64>,
}

impl State {
    pub fn zeros(layout: StateLayout) -> Self {
        Self {
            u: vec![0.0; layout.n_u],
            p: vec![0.0; layout.n_p],
            theta: vec![0.0; layout.n_theta],
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_u: self.u.len(),
            n_p: self.p.len(),
            n_theta: self.theta.len(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.u.len() + self.p.len() + self.theta.len());
        x.extend_from_slice(&self.u);
        x.extend_from_slice(&self.p);
        x.extend_from_slice(&self.theta);
        x
    }

    pub fn from_flat(x: &[f64], layout: StateLayout) -> Result<Self> {
        if x.len() != layout.len() {
            return Err(Error::InvalidArgument(format!(
                "state vector has length {}, expected {}",
                x.len(),
                layout.len()
            )));
        }
        let t = layout.theta_offset();
        Ok(Self {
            u: x[..layout.n_u].to_vec(),
            p: x[layout.n_u..t].to_vec(),
            theta: x[t..].to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .chain(&self.p)
            .chain(&self.theta)
            .all(|v| v.is_finite())
    }
}

/// `<(v, p, w), (v', p', w')> = nu v.K v' + kappa w.K w'`.
#[derive(Debug, Clone)]
pub struct BInnerProduct {
    stiffness: Arc<SparseOperator>,
    nu: f64,
    kappa: f64,
    layout: StateLayout,
}

impl BInnerProduct {
    pub fn new(stiffness: Arc<SparseOperator>, nu: f64, kappa: f64, layout: StateLayout) -> Self {
        Self {
            stiffness,
            nu,
            kappa,
            layout,
        }
    }

    /// Norm of a velocity/temperature pair.
    pub fn pair_norm(&self, v: &[f64], w: &[f64]) -> f64 {
        let n = self.stiffness.nrows();
        let e = self.nu
            * (self.stiffness.bilinear(&v[..n], &v[..n])
                + self.stiffness.bilinear(&v[n..], &v[n..]))
            + self.kappa * self.stiffness.bilinear(w, w);
        norm_sqrt(e)
    }
}

impl InnerProduct<f64> for BInnerProduct {
    fn gram(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.layout.len(), "inner product: state length");
        let n = self.stiffness.nrows();
        let t = self.layout.theta_offset();
        let mut out = vec![0.0; x.len()];
        self.stiffness.matvec_into(&x[..n], &mut out[..n]);
        self.stiffness.matvec_into(&x[n..2 * n], &mut out[n..2 * n]);
        self.stiffness.matvec_into(&x[t..], &mut out[t..]);
        out[..2 * n].iter_mut().for_each(|v| *v *= self.nu);
        out[t..].iter_mut().for_each(|v| *v *= self.kappa);
        out
    }
}

/// Differences between two states and their energy norm. The pressure
/// difference is kept but does not enter the norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub dp: Vec<f64>,
    pub norm: f64,
}

/// A discretized Boussinesq problem: mesh, spaces, constant operators and
/// cached solvers.
pub struct Boussinesq {
    mesh: Mesh,
    assembler: Assembler,
    config: ProblemConfig,
    layout: StateLayout,
    stiffness: Arc<SparseOperator>,
    mass: SparseOperator,
    divergence: SparseOperator,
    load_u: Vec<f64>,
    load_theta: Vec<f64>,
    theta_red: Reduction,
    oseen_red: Reduction,
    newton_red: Reduction,
    oseen_mean: Vec<(usize, f64)>,
    newton_mean: Vec<(usize, f64)>,
    temperature_solver: DirectSolver,
    oseen_solver: DirectSolver,
    newton_solver: DirectSolver,
    velocity_free: Reduction,
    stiffness_velocity: Factorization,
    stiffness_theta: Factorization,
}

impl std::fmt::Debug for Boussinesq {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Boussinesq")
            .field("config", &self.config)
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

/// Constant pressure: the kernel of the saddle-point operators.
fn unit(mean: &[(usize, f64)]) -> Vec<(usize, f64)> {
    mean.iter().map(|&(i, _)| (i, 1.0)).collect()
}

fn mean_row(red: &Reduction, offset: usize, weights: &[f64]) -> Vec<(usize, f64)> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            (
                red.reduced_index(offset + i)
                    .expect("pressure is never fixed"),
                w,
            )
        })
        .collect()
}

impl Boussinesq {
    pub fn new(
        mesh: &Mesh,
        family: ElementFamily,
        bc: &BcSpec,
        config: ProblemConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dofs = build_dofmap(mesh, family, bc)?;
        let layout = StateLayout::of(&dofs);
        let assembler = Assembler::new(mesh, dofs)?;
        let dofs = assembler.dofs();
        let stiffness = Arc::new(assembler.scalar_stiffness());
        let mass = assembler.scalar_mass();
        let divergence = assembler.divergence();
        let weights = assembler.pressure_weights();
        let load_u = assembler.load_velocity(config.forcing.as_ref());
        let load_theta = assembler.load_temperature(config.source.as_ref());

        let vel_fixed = || (0..dofs.n_velocity).map(|i| dofs.velocity_dirichlet.get(i));
        let theta_fixed = || (0..dofs.n_temperature).map(|i| dofs.temperature_dirichlet.get(i));
        let theta_red = Reduction::new(theta_fixed());
        let oseen_red = Reduction::new(vel_fixed().chain((0..dofs.n_pressure).map(|_| None)));
        let newton_red = Reduction::new(
            vel_fixed()
                .chain((0..dofs.n_pressure).map(|_| None))
                .chain(theta_fixed()),
        );
        let oseen_mean = mean_row(&oseen_red, layout.n_u, &weights);
        let newton_mean = mean_row(&newton_red, layout.n_u, &weights);

        let velocity_free = Reduction::new((0..dofs.n_p2).map(|i| dofs.velocity_dirichlet.get(i)));
        let zero = vec![0.0; dofs.n_p2];
        let solver = DirectSolver::new();
        let (kv, _) = velocity_free.reduce(&stiffness, &zero);
        let stiffness_velocity = solver
            .factorize(&kv)
            .map_err(|e| e.in_stage(Stage::ResidualNorm))?;
        let (kt, _) = theta_red.reduce(&stiffness, &zero);
        let stiffness_theta = solver
            .factorize(&kt)
            .map_err(|e| e.in_stage(Stage::ResidualNorm))?;

        Ok(Self {
            mesh: mesh.clone(),
            config,
            layout,
            stiffness,
            mass,
            divergence,
            load_u,
            load_theta,
            theta_red,
            oseen_red,
            newton_red,
            oseen_mean,
            newton_mean,
            temperature_solver: DirectSolver::new(),
            oseen_solver: DirectSolver::new(),
            newton_solver: DirectSolver::new(),
            velocity_free,
            stiffness_velocity,
            stiffness_theta,
            assembler,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dofs(&self) -> &DofMap {
        self.assembler.dofs()
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn config(&self) -> &ProblemConfig {
        &self.config
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn stiffness(&self) -> &SparseOperator {
        &self.stiffness
    }

    pub fn inner_product(&self) -> BInnerProduct {
        BInnerProduct::new(
            self.stiffness.clone(),
            self.config.nu,
            self.config.kappa,
            self.layout,
        )
    }

    /// Zero velocity and pressure; temperature zero in the interior and equal
    /// to the boundary data on Dirichlet nodes.
    pub fn initial_state(&self) -> State {
        let mut s = State::zeros(self.layout);
        let mask = &self.dofs().temperature_dirichlet;
        for (i, t) in s.theta.iter_mut().enumerate() {
            if let Some(v) = mask.get(i) {
                *t = v;
            }
        }
        s
    }

    fn check(&self, s: &State) -> Result<()> {
        if s.layout() != self.layout {
            return Err(Error::InvalidArgument(
                "state does not match the discretization".into(),
            ));
        }
        if !s.is_finite() {
            return Err(Error::Blowup);
        }
        Ok(())
    }

    fn n_p2(&self) -> usize {
        self.dofs().n_p2
    }

    /// Temperature transport solve with advecting velocity `u` and
    /// convection matrix `c = C(u)`.
    fn solve_temperature(&self, c: &SparseOperator) -> Result<Vec<f64>> {
        let a = self.stiffness.linear_combination(self.config.kappa, c, 1.0);
        let (ar, br) = self.theta_red.reduce(&a, &self.load_theta);
        let (x, _) = self
            .temperature_solver
            .solve(&LinearSystem::new(ar, br))
            .map_err(|e| e.in_stage(Stage::Temperature))?;
        Ok(self.theta_red.expand(&x))
    }

    fn solve_oseen(&self, c: &SparseOperator, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n_p2();
        let (nv, np) = (self.layout.n_u, self.layout.n_p);
        let diag = self.stiffness.linear_combination(self.config.nu, c, 1.0);
        let mut t = TripletBuilder::with_capacity(
            nv + np,
            nv + np,
            2 * diag.nnz() + 2 * self.divergence.nnz(),
        );
        t.push_block(0, 0, &diag, 1.0);
        t.push_block(n, n, &diag, 1.0);
        push_transposed(&mut t, 0, nv, &self.divergence, -1.0);
        t.push_block(nv, 0, &self.divergence, -1.0);
        let a = t.build();

        let mut rhs = vec![0.0; nv + np];
        rhs[..nv].copy_from_slice(&self.load_u);
        if self.config.ri != 0.0 {
            let mt = self.mass.matvec(theta);
            for i in 0..n {
                rhs[n + i] += self.config.ri * mt[i];
            }
        }
        let (ar, br) = self.oseen_red.reduce(&a, &rhs);
        let sys = LinearSystem::new(ar, br)
            .with_kernel_constraint(self.oseen_mean.clone(), unit(&self.oseen_mean));
        let (x, _) = self
            .oseen_solver
            .solve(&sys)
            .map_err(|e| e.in_stage(Stage::Momentum))?;
        let mut full = self.oseen_red.expand(&x);
        let p = full.split_off(nv);
        Ok((full, p))
    }

    /// Picard solution operator: temperature transport with the lagged
    /// velocity first, then the Oseen problem driven by the new temperature.
    pub fn picard_apply(&self, current: &State) -> Result<State> {
        self.check(current)?;
        let c = self.assembler.scalar_convection(&current.u);
        let theta = self.solve_temperature(&c)?;
        let (u, p) = self.solve_oseen(&c, &theta)?;
        Ok(State { u, p, theta })
    }

    /// Coupled Newton linearization of the system and load at `current`.
    pub fn newton_blocks(&self, current: &State) -> (SparseOperator, Vec<f64>) {
        self.assembler.newton_blocks(
            &current.u,
            &current.theta,
            &self.config,
            &self.stiffness,
            &self.mass,
            &self.divergence,
            (&self.load_u, &self.load_theta),
        )
    }

    /// One Newton step for the coupled `(u, p, theta)` system.
    pub fn newton_apply(&self, current: &State) -> Result<State> {
        self.check(current)?;
        let (a, b) = self.newton_blocks(current);
        let (ar, br) = self.newton_red.reduce(&a, &b);
        let sys = LinearSystem::new(ar, br)
            .with_kernel_constraint(self.newton_mean.clone(), unit(&self.newton_mean));
        let (x, _) = self
            .newton_solver
            .solve(&sys)
            .map_err(|e| e.in_stage(Stage::Coupled))?;
        State::from_flat(&self.newton_red.expand(&x), self.layout)
    }

    pub fn picard_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .picard_apply(&State::from_flat(x, self.layout)?)?
            .to_flat())
    }

    pub fn newton_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .newton_apply(&State::from_flat(x, self.layout)?)?
            .to_flat())
    }

    /// `(next - current)` on velocity and temperature, with its energy norm.
    pub fn residual(&self, current: &State, next: &State) -> Result<Residual> {
        if current.layout() != next.layout() || current.layout() != self.layout {
            return Err(Error::InvalidArgument(
                "residual: state dimensions differ".into(),
            ));
        }
        let diff =
            |a: &[f64], b: &[f64]| -> Vec<f64> { b.iter().zip(a).map(|(y, x)| y - x).collect() };
        let w = diff(&current.u, &next.u);
        let z = diff(&current.theta, &next.theta);
        let dp = diff(&current.p, &next.p);
        let norm = self.inner_product().pair_norm(&w, &z);
        Ok(Residual { w, z, dp, norm })
    }

    /// Energy norm of a flat state vector (pressure ignored).
    pub fn b_norm(&self, x: &[f64]) -> f64 {
        self.inner_product().norm(x)
    }

    /// Dual energy norm of the discrete nonlinear residual at `x`: the
    /// energy norm of its Riesz representative on the free degrees of
    /// freedom.
    pub fn nonlinear_residual_norm(&self, x: &[f64]) -> Result<f64> {
        let s = State::from_flat(x, self.layout)?;
        self.check(&s)?;
        let n = self.n_p2();
        let c = self.assembler.scalar_convection(&s.u);
        let vel = block_diag2(&self.stiffness.linear_combination(self.config.nu, &c, 1.0));
        let mut ru = vel.matvec(&s.u);
        let dtp = self.divergence.transpose().matvec(&s.p);
        let mt = self.mass.matvec(&s.theta);
        for i in 0..2 * n {
            ru[i] -= dtp[i] + self.load_u[i];
        }
        for i in 0..n {
            ru[n + i] -= self.config.ri * mt[i];
        }
        let tmat = self
            .stiffness
            .linear_combination(self.config.kappa, &c, 1.0);
        let mut rt = tmat.matvec(&s.theta);
        rt.iter_mut()
            .zip(&self.load_theta)
            .for_each(|(r, g)| *r -= g);

        let mut total = 0.0;
        for comp in 0..2 {
            let rc = self.velocity_free.restrict(&ru[comp * n..(comp + 1) * n]);
            let y = self.stiffness_velocity.solve(&rc);
            total += rc.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / self.config.nu;
        }
        let rtf = self.theta_red.restrict(&rt);
        let y = self.stiffness_theta.solve(&rtf);
        total += rtf.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / self.config.kappa;
        if !total.is_finite() {
            return Err(Error::Blowup);
        }
        Ok(norm_sqrt(total))
    }

    /// `|| div u_h ||_{L2}`
    pub fn divergence_l2(&self, u: &[f64]) -> f64 {
        let n = self.n_p2();
        let dofs = self.dofs();
        let mut s = 0.0;
        for (c, tab) in self.assembler.tables().iter().enumerate() {
            let idx = &dofs.p2_cells[c];
            for q in 0..tab.jxw.len() {
                let mut d = 0.0;
                for a in 0..6 {
                    d +=
                        u[idx[a]] * tab.gradients[q][a][0] + u[n + idx[a]] * tab.gradients[q][a][1];
                }
                s += tab.jxw[q] * d * d;
            }
        }
        s.sqrt()
    }

    fn l2_error(
        &self,
        coeffs: &[f64],
        components: usize,
        exact: &dyn Fn([f64; 2]) -> [f64; 2],
    ) -> Result<f64> {
        let n = self.n_p2();
        let dofs = self.dofs();
        let quad = QuadratureRule::collapsed_gauss(6);
        let mut s = 0.0;
        for c in 0..self.mesh.n_triangles() {
            let tab = p2_table(&ElementGeometry::of_cell(&self.mesh, c)?, &quad);
            let idx = &dofs.p2_cells[c];
            for q in 0..tab.jxw.len() {
                let e = exact(tab.points[q]);
                for comp in 0..components {
                    let mut v = 0.0;
                    for a in 0..6 {
                        v += coeffs[comp * n + idx[a]] * tab.values[q][a];
                    }
                    s += tab.jxw[q] * (v - e[comp]).powi(2);
                }
            }
        }
        Ok(s.sqrt())
    }

    /// `|| u_h - u ||_{L2}`
    pub fn velocity_l2_error(
        &self,
        u: &[f64],
        exact: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Result<f64> {
        self.l2_error(u, 2, &exact)
    }

    /// `|| theta_h - theta ||_{L2}`
    pub fn temperature_l2_error(
        &self,
        theta: &[f64],
        exact: impl Fn([f64; 2]) -> f64,
    ) -> Result<f64> {
        self.l2_error(theta, 1, &|x| [exact(x), 0.0])
    }
}

/// `|| w_{k+1} - w_k || / || x_k - x_{k-1} ||`, `None` when the iterate
/// did not move.
pub fn sigma_k<P: InnerProduct<f64> + ?Sized>(
    w_next: &[f64],
    w: &[f64],
    x: &[f64],
    x_prev: &[f64],
    ip: &P,
) -> Option<f64> {
    let dx: Vec<f64> = x.iter().zip(x_prev).map(|(a, b)| a - b).collect();
    let den = ip.norm(&dx);
    if !(den > 0.0) {
        return None;
    }
    let dw: Vec<f64> = w_next.iter().zip(w).map(|(a, b)| a - b).collect();
    Some(ip.norm(&dw) / den)
}

/// Caller-supplied estimates for constants the discrete data cannot provide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryEstimates {
    /// Poincare constant.
    pub c_p: f64,
    /// Trilinear form bound.
    pub m: f64,
    pub f_dual: f64,
    pub gamma_dual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryDiagnostics {
    pub k1: f64,
    pub k2: f64,
    pub eta: f64,
    /// `nu^-1 M (2 K1 + kappa^-1 M K2^2)` and `nu^-1 kappa^-1 Ri^2 C_P^4`.
    pub small_data_lhs: [f64; 2],
    pub small_data: [bool; 2],
    /// The simplified conditions in terms of `eta = min(nu, kappa)`.
    pub strong_lhs: [f64; 2],
    pub strong: [bool; 2],
    pub sigma: Vec<Option<f64>>,
}

pub fn theory_diagnostics(config: &ProblemConfig, est: &TheoryEstimates) -> TheoryDiagnostics {
    let (nu, kappa, ri) = (config.nu, config.kappa, config.ri);
    let cp2 = est.c_p * est.c_p;
    let k1 = ri * cp2 / (nu * kappa) * est.gamma_dual + est.f_dual / nu;
    let k2 = est.gamma_dual / kappa;
    let eta = nu.min(kappa);
    let small_data_lhs = [
        est.m / nu * (2.0 * k1 + est.m * k2 * k2 / kappa),
        ri * ri * cp2 * cp2 / (nu * kappa),
    ];
    let strong_lhs = [
        est.m / (eta * eta)
            * (2.0 * (ri * cp2 / kappa * est.gamma_dual + est.f_dual)
                + est.m * est.gamma_dual * est.gamma_dual / (kappa * kappa)),
        ri * cp2 / eta,
    ];
    TheoryDiagnostics {
        k1,
        k2,
        eta,
        small_data_lhs,
        small_data: small_data_lhs.map(|v| v < 1.0),
        strong_lhs,
        strong: strong_lhs.map(|v| v < 1.0),
        sigma: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::BcSpec;
    use crate::mesh::{alfeld_split, uniform_square_mesh};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cavity(n: usize, ri: f64) -> Boussinesq {
        let m = uniform_square_mesh(n).unwrap();
        Boussinesq::new(
            &m,
            ElementFamily::TAYLOR_HOOD,
            &BcSpec::heated_cavity(),
            ProblemConfig::cavity(ri),
        )
        .unwrap()
    }

    fn random_state(b: &Boussinesq, seed: u64) -> State {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = b.initial_state();
        let d = b.dofs();
        for i in 0..d.n_velocity {
            if !d.velocity_dirichlet.fixed[i] {
                s.u[i] = rng.gen_range(-0.1..0.1);
            }
        }
        for i in 0..d.n_temperature {
            if !d.temperature_dirichlet.fixed[i] {
                s.theta[i] = rng.gen_range(0.0..1.0);
            }
        }
        s
    }

    #[test]
    fn zero_data_gives_zero_state() {
        let m = uniform_square_mesh(3).unwrap();
        let bc = BcSpec::all_dirichlet(Arc::new(|_| 0.0));
        let b = Boussinesq::new(
            &m,
            ElementFamily::TAYLOR_HOOD,
            &bc,
            ProblemConfig::new(1.0, 1.0, 0.0),
        )
        .unwrap();
        let s = random_state(&b, 1);
        let out = b.picard_apply(&s).unwrap();
        assert!(out.u.iter().chain(&out.theta).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn first_picard_temperature_is_conduction() {
        // From rest the temperature solve is pure diffusion; x is harmonic
        // and satisfies the insulated top/bottom conditions.
        let b = cavity(3, 1.0);
        let out = b.picard_apply(&b.initial_state()).unwrap();
        let exact = b.dofs().interpolate_p2(|x| x[0]);
        for (a, e) in out.theta.iter().zip(&exact) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn picard_temperature_ignores_current_theta() {
        let b = cavity(3, 2.0);
        let s1 = random_state(&b, 2);
        let mut s2 = s1.clone();
        s2.theta = random_state(&b, 3).theta;
        let a = b.picard_apply(&s1).unwrap();
        let c = b.picard_apply(&s2).unwrap();
        assert_eq!(a.theta, c.theta);
        assert_eq!(a.u, c.u);
    }

    #[test]
    fn outputs_satisfy_boundary_conditions() {
        let b = cavity(3, 1.0);
        let s = random_state(&b, 4);
        for out in [b.picard_apply(&s).unwrap(), b.newton_apply(&s).unwrap()] {
            let d = b.dofs();
            for i in 0..d.n_velocity {
                if d.velocity_dirichlet.fixed[i] {
                    assert_eq!(out.u[i], 0.0);
                }
            }
            for i in 0..d.n_temperature {
                if let Some(v) = d.temperature_dirichlet.get(i) {
                    assert_eq!(out.theta[i], v);
                }
            }
            let w = b.assembler().pressure_weights();
            let mean: f64 = w.iter().zip(&out.p).map(|(a, b)| a * b).sum();
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn newton_zero_state_zero_problem() {
        let m = uniform_square_mesh(2).unwrap();
        let bc = BcSpec::all_dirichlet(Arc::new(|_| 0.0));
        let b = Boussinesq::new(
            &m,
            ElementFamily::TAYLOR_HOOD,
            &bc,
            ProblemConfig::new(1.0, 1.0, 0.0),
        )
        .unwrap();
        let out = b.newton_apply(&State::zeros(b.layout())).unwrap();
        assert!(out.u.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn newton_temperature_matches_picard_at_rest() {
        let b = cavity(3, 0.0);
        let s = b.initial_state();
        let n = b.newton_apply(&s).unwrap();
        let p = b.picard_apply(&s).unwrap();
        for (a, c) in n.theta.iter().zip(&p.theta) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_homogeneity() {
        let b = cavity(2, 1.0);
        let s = random_state(&b, 5);
        let d = random_state(&b, 6);
        assert_eq!(b.residual(&s, &s).unwrap().norm, 0.0);
        let add = |k: f64| State {
            u: s.u.iter().zip(&d.u).map(|(a, c)| a + k * c).collect(),
            p: s.p.clone(),
            theta: s
                .theta
                .iter()
                .zip(&d.theta)
                .map(|(a, c)| a + k * c)
                .collect(),
        };
        let r1 = b.residual(&s, &add(1.0)).unwrap().norm;
        let r2 = b.residual(&s, &add(2.0)).unwrap().norm;
        assert!((r2 - 2.0 * r1).abs() < 1e-13 * r2);
        let flat = b.inner_product().norm(&sub_flat(&add(1.0), &s));
        assert!((flat - r1).abs() < 1e-13 * r1);
    }

    fn sub_flat(a: &State, b: &State) -> Vec<f64> {
        a.to_flat()
            .iter()
            .zip(b.to_flat())
            .map(|(x, y)| x - y)
            .collect()
    }

    #[test]
    fn pressure_not_in_norm() {
        let b = cavity(2, 1.0);
        let mut x = vec![0.0; b.layout().len()];
        for v in &mut x[b.layout().n_u..b.layout().theta_offset()] {
            *v = 3.0;
        }
        assert_eq!(b.b_norm(&x), 0.0);
    }

    #[test]
    fn scott_vogelius_divergence_free() {
        let m = alfeld_split(&uniform_square_mesh(3).unwrap()).unwrap();
        let b = Boussinesq::new(
            &m,
            ElementFamily::SCOTT_VOGELIUS,
            &BcSpec::heated_cavity(),
            ProblemConfig::cavity(1.0),
        )
        .unwrap();
        let s = b.picard_apply(&b.initial_state()).unwrap();
        assert!(b.divergence_l2(&s.u) < 1e-12, "{}", b.divergence_l2(&s.u));
        assert!(s.u.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn nonlinear_residual_vanishes_at_fixed_point() {
        let b = cavity(3, 0.5);
        let mut x = b.initial_state().to_flat();
        for _ in 0..10 {
            x = b.newton_map(&x).unwrap();
        }
        let r = b.nonlinear_residual_norm(&x).unwrap();
        assert!(r < 1e-10, "{r}");
        let r0 = b
            .nonlinear_residual_norm(&b.initial_state().to_flat())
            .unwrap();
        assert!(r0 > 1e-3);
    }

    #[test]
    fn theory_formulas() {
        let d = theory_diagnostics(
            &ProblemConfig::new(1.0, 1.0, 1.0),
            &TheoryEstimates {
                c_p: 1.0,
                m: 1.0,
                f_dual: 0.0,
                gamma_dual: 0.0,
            },
        );
        assert_eq!(d.k1, 0.0);
        assert_eq!(d.k2, 0.0);
        assert_eq!(d.strong_lhs, [0.0, 1.0]);
        assert_eq!(d.strong, [true, false]);

        let d = theory_diagnostics(
            &ProblemConfig::new(0.5, 0.25, 0.0),
            &TheoryEstimates {
                c_p: 2.0,
                m: 1.0,
                f_dual: 0.0,
                gamma_dual: 1.0,
            },
        );
        assert_eq!(d.k1, 0.0);
        assert_eq!(d.k2, 4.0);
        assert_eq!(d.eta, 0.25);
    }

    #[test]
    fn sigma_degenerate_cases() {
        let ip = crate::anderson::Euclidean;
        assert_eq!(sigma_k(&[1.0], &[1.0], &[2.0], &[1.0], &ip), Some(0.0));
        assert_eq!(sigma_k(&[2.0], &[1.0], &[1.0], &[1.0], &ip), None);
    }
}
