//! Mixed finite element spaces: P2 velocity, P1 (continuous or discontinuous)
//! pressure and P2 temperature on a triangular mesh.
//!
//! Scalar P2 nodes are numbered vertices first, then edge midpoints in
//! [`EdgeTable`](crate::mesh::EdgeTable) order. Velocity coefficients are
//! stored component-major: index `c * n_p2 + node` for component `c`.
//! Local P2 node order on a cell is the three vertices followed by the
//! midpoints of edges (0,1), (1,2), (2,0).

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::QuadratureRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PressureKind {
    /// Taylor-Hood
    ContinuousLinear,
    /// Scott-Vogelius; needs a barycentrically refined mesh.
    DiscontinuousLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementFamily {
    pub pressure: PressureKind,
}

impl ElementFamily {
    pub const TAYLOR_HOOD: Self = Self {
        pressure: PressureKind::ContinuousLinear,
    };
    pub const SCOTT_VOGELIUS: Self = Self {
        pressure: PressureKind::DiscontinuousLinear,
    };

    pub fn velocity_degree(&self) -> usize {
        2
    }

    pub fn temperature_degree(&self) -> usize {
        2
    }

    pub fn name(&self) -> &'static str {
        match self.pressure {
            PressureKind::ContinuousLinear => "taylor-hood",
            PressureKind::DiscontinuousLinear => "scott-vogelius",
        }
    }
}

impl Default for ElementFamily {
    fn default() -> Self {
        Self::TAYLOR_HOOD
    }
}

impl std::str::FromStr for ElementFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor-hood" | "th" => Ok(Self::TAYLOR_HOOD),
            "scott-vogelius" | "sv" => Ok(Self::SCOTT_VOGELIUS),
            _ => Err(Error::Parse(format!("unknown element family `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Velocity,
    Pressure,
    Temperature,
}

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;

/// Boundary conditions. Velocity is always no-slip on every wall; the
/// temperature is prescribed on the listed walls and insulated elsewhere.
#[derive(Clone)]
pub struct BcSpec {
    pub temperature_dirichlet: Vec<BoundaryTag>,
    pub temperature_value: ScalarFn,
}

impl std::fmt::Debug for BcSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BcSpec")
            .field("temperature_dirichlet", &self.temperature_dirichlet)
            .finish_non_exhaustive()
    }
}

impl BcSpec {
    /// Differentially heated cavity: `T = 0` on the left wall, `T = 1` on
    /// the right wall, insulated top and bottom.
    pub fn heated_cavity() -> Self {
        Self {
            temperature_dirichlet: vec![BoundaryTag::Left, BoundaryTag::Right],
            temperature_value: Arc::new(|x| x[0]),
        }
    }

    /// Temperature prescribed on all walls.
    pub fn all_dirichlet(value: ScalarFn) -> Self {
        Self {
            temperature_dirichlet: BoundaryTag::ALL.to_vec(),
            temperature_value: value,
        }
    }
}

/// Per-DOF Dirichlet flags and values.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMask {
    pub fixed: Vec<bool>,
    pub values: Vec<f64>,
}

impl DirichletMask {
    fn new(n: usize) -> Self {
        Self {
            fixed: vec![false; n],
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn count(&self) -> usize {
        self.fixed.iter().filter(|&&f| f).count()
    }

    /// `Some(value)` for fixed DOFs.
    pub fn get(&self, i: usize) -> Option<f64> {
        self.fixed[i].then(|| self.values[i])
    }
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub family: ElementFamily,
    pub n_p2: usize,
    pub n_velocity: usize,
    pub n_pressure: usize,
    pub n_temperature: usize,
    pub p2_cells: Vec<[usize; 6]>,
    pub pressure_cells: Vec<[usize; 3]>,
    /// Coordinates of the scalar P2 nodes.
    pub p2_nodes: Vec<[f64; 2]>,
    pub velocity_dirichlet: DirichletMask,
    pub temperature_dirichlet: DirichletMask,
    pub pressure_mean_constraint: bool,
}

impl DofMap {
    pub fn velocity_index(&self, component: usize, node: usize) -> usize {
        component * self.n_p2 + node
    }

    /// Length of a flattened `(u, p, theta)` state.
    pub fn state_len(&self) -> usize {
        self.n_velocity + self.n_pressure + self.n_temperature
    }

    /// Nodal interpolation of a scalar function into P2.
    pub fn interpolate_p2(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.p2_nodes.iter().map(|&x| f(x)).collect()
    }

    /// Nodal interpolation of a vector function into the velocity space.
    pub fn interpolate_velocity(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_velocity];
        for (i, &x) in self.p2_nodes.iter().enumerate() {
            let v = f(x);
            u[i] = v[0];
            u[self.n_p2 + i] = v[1];
        }
        u
    }
}

pub fn build_dofmap(mesh: &Mesh, family: ElementFamily, bc: &BcSpec) -> Result<DofMap> {
    if family.pressure == PressureKind::DiscontinuousLinear && !mesh.is_alfeld() {
        return Err(Error::Configuration(
            "Scott-Vogelius elements need a barycentrically refined (Alfeld) mesh".into(),
        ));
    }
    let nv = mesh.n_vertices();
    let edges = mesh.edge_table();
    let n_p2 = nv + edges.edges.len();

    let p2_cells: Vec<[usize; 6]> = mesh
        .triangles()
        .iter()
        .zip(&edges.triangle_edges)
        .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
        .collect();

    let mut p2_nodes: Vec<[f64; 2]> = mesh.vertices().to_vec();
    for &[a, b] in &edges.edges {
        let (p, q) = (mesh.vertices()[a], mesh.vertices()[b]);
        p2_nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
    }

    let (n_pressure, pressure_cells) = match family.pressure {
        PressureKind::ContinuousLinear => (nv, mesh.triangles().to_vec()),
        PressureKind::DiscontinuousLinear => {
            let cells = (0..mesh.n_triangles())
                .map(|t| [3 * t, 3 * t + 1, 3 * t + 2])
                .collect();
            (3 * mesh.n_triangles(), cells)
        }
    };

    let edge_index: HashMap<[usize; 2], usize> = edges
        .edges
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, i))
        .collect();

    let mut velocity_dirichlet = DirichletMask::new(2 * n_p2);
    let mut temperature_dirichlet = DirichletMask::new(n_p2);
    for be in mesh.boundary_edges() {
        let [a, b] = be.vertices;
        let mid = nv + edge_index[&[a.min(b), a.max(b)]];
        let nodes = [a, b, mid];
        for &n in &nodes {
            for c in 0..2 {
                velocity_dirichlet.fixed[c * n_p2 + n] = true;
            }
        }
        if bc.temperature_dirichlet.contains(&be.tag) {
            for &n in &nodes {
                temperature_dirichlet.fixed[n] = true;
                temperature_dirichlet.values[n] = (bc.temperature_value)(p2_nodes[n]);
            }
        }
    }

    Ok(DofMap {
        family,
        n_p2,
        n_velocity: 2 * n_p2,
        n_pressure,
        n_temperature: n_p2,
        p2_cells,
        pressure_cells,
        p2_nodes,
        velocity_dirichlet,
        temperature_dirichlet,
        pressure_mean_constraint: true,
    })
}

/// Affine element geometry.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub corners: [[f64; 2]; 3],
    pub area: f64,
    /// Physical gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(corners: [[f64; 2]; 3]) -> Result<Self> {
        let [p0, p1, p2] = corners;
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let scale = (p1[0] - p0[0])
            .abs()
            .max((p1[1] - p0[1]).abs())
            .max((p2[0] - p0[0]).abs())
            .max((p2[1] - p0[1]).abs());
        if !(det > 1e-14 * scale * scale) {
            return Err(Error::Geometry(format!(
                "degenerate or inverted triangle (2*area = {det:e})"
            )));
        }
        // grad lambda_i = rot(opposite edge) / (2 area)
        let mut grad_lambda = [[0.0; 2]; 3];
        for (i, g) in grad_lambda.iter_mut().enumerate() {
            let a = corners[(i + 1) % 3];
            let b = corners[(i + 2) % 3];
            *g = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
        }
        Ok(Self {
            corners,
            area: 0.5 * det,
            grad_lambda,
        })
    }

    pub fn of_cell(mesh: &Mesh, t: usize) -> Result<Self> {
        Self::new(mesh.corners(t))
    }

    pub fn map(&self, lambda: [f64; 3]) -> [f64; 2] {
        let c = &self.corners;
        [
            lambda[0] * c[0][0] + lambda[1] * c[1][0] + lambda[2] * c[2][0],
            lambda[0] * c[0][1] + lambda[1] * c[1][1] + lambda[2] * c[2][1],
        ]
    }
}

const EDGE_NODES: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

pub fn p2_gradients(l: [f64; 3], g: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut out = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        out[i] = [s * g[i][0], s * g[i][1]];
    }
    for (k, [i, j]) in EDGE_NODES.iter().copied().enumerate() {
        out[3 + k] = [
            4.0 * (l[i] * g[j][0] + l[j] * g[i][0]),
            4.0 * (l[i] * g[j][1] + l[j] * g[i][1]),
        ];
    }
    out
}

/// Basis values, physical gradients and integration weights at the
/// quadrature points of one cell.
#[derive(Debug, Clone)]
pub struct ShapeTable<const N: usize> {
    pub values: Vec<[f64; N]>,
    pub gradients: Vec<[[f64; 2]; N]>,
    /// Quadrature weight times the Jacobian determinant.
    pub jxw: Vec<f64>,
    pub points: Vec<[f64; 2]>,
}

pub fn p2_table(geom: &ElementGeometry, quad: &QuadratureRule) -> ShapeTable<6> {
    let jac = 2.0 * geom.area;
    ShapeTable {
        values: quad.points.iter().map(|&l| p2_values(l)).collect(),
        gradients: quad
            .points
            .iter()
            .map(|&l| p2_gradients(l, &geom.grad_lambda))
            .collect(),
        jxw: quad.weights.iter().map(|w| w * jac).collect(),
        points: quad.points.iter().map(|&l| geom.map(l)).collect(),
    }
}

pub fn p1_table(geom: &ElementGeometry, quad: &QuadratureRule) -> ShapeTable<3> {
    let jac = 2.0 * geom.area;
    ShapeTable {
        values: quad.points.clone(),
        gradients: vec![geom.grad_lambda; quad.len()],
        jxw: quad.weights.iter().map(|w| w * jac).collect(),
        points: quad.points.iter().map(|&l| geom.map(l)).collect(),
    }
}

/// Shape data for one field on one cell. Velocity uses the scalar P2 basis
/// per component.
pub enum FieldShapes {
    Quadratic(ShapeTable<6>),
    Linear(ShapeTable<3>),
}

pub fn shape_values(
    field: Field,
    mesh: &Mesh,
    cell: usize,
    quad: &QuadratureRule,
) -> Result<FieldShapes> {
    let geom = ElementGeometry::of_cell(mesh, cell)?;
    Ok(match field {
        Field::Velocity | Field::Temperature => FieldShapes::Quadratic(p2_table(&geom, quad)),
        Field::Pressure => FieldShapes::Linear(p1_table(&geom, quad)),
    })
}

/// Value and gradient of a scalar P2 function on a cell at every point of
/// `table`.
pub fn eval_p2(
    coeffs: &[f64],
    cell: &[usize; 6],
    table: &ShapeTable<6>,
) -> (Vec<f64>, Vec<[f64; 2]>) {
    let nq = table.values.len();
    let mut vals = vec![0.0; nq];
    let mut grads = vec![[0.0; 2]; nq];
    for q in 0..nq {
        for a in 0..6 {
            let c = coeffs[cell[a]];
            vals[q] += c * table.values[q][a];
            grads[q][0] += c * table.gradients[q][a][0];
            grads[q][1] += c * table.gradients[q][a][1];
        }
    }
    (vals, grads)
}
