//! Structured triangulations of the unit square.
//!
//! Meshes are built from a uniform grid, optionally graded towards the walls by
//! longest-edge bisection, and optionally barycentrically (Alfeld) split. All
//! constructors go through [`Mesh::new`], which checks orientation, conformity
//! and boundary tagging.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-12;

/// Side of the unit square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Left,
    Right,
    Top,
    Bottom,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Top,
        BoundaryTag::Bottom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
            BoundaryTag::Top => "top",
            BoundaryTag::Bottom => "bottom",
        }
    }
}

impl std::str::FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(BoundaryTag::Left),
            "right" => Ok(BoundaryTag::Right),
            "top" => Ok(BoundaryTag::Top),
            "bottom" => Ok(BoundaryTag::Bottom),
            _ => Err(Error::Parse(format!("unknown boundary tag `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
}

/// One step of the construction pipeline that produced a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Uniform(usize),
    BoundaryLayer,
    Alfeld,
}

/// Conforming triangulation of `[0,1]^2` with counterclockwise triangles.
#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    alfeld: bool,
    history: Vec<Refinement>,
}

/// Edge numbering built on demand. Local edge `i` of a triangle joins its
/// vertices `i` and `(i + 1) % 3`.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    pub edges: Vec<[usize; 2]>,
    pub triangle_edges: Vec<[usize; 3]>,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

fn dist2(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

fn side_of(p: [f64; 2]) -> Option<BoundaryTag> {
    if p[0].abs() < GEOM_TOL {
        Some(BoundaryTag::Left)
    } else if (p[0] - 1.0).abs() < GEOM_TOL {
        Some(BoundaryTag::Right)
    } else if p[1].abs() < GEOM_TOL {
        Some(BoundaryTag::Bottom)
    } else if (p[1] - 1.0).abs() < GEOM_TOL {
        Some(BoundaryTag::Top)
    } else {
        None
    }
}

/// True if the point lies on the boundary of the unit square.
pub fn on_square_boundary(p: [f64; 2]) -> bool {
    p[0].abs() < GEOM_TOL
        || (p[0] - 1.0).abs() < GEOM_TOL
        || p[1].abs() < GEOM_TOL
        || (p[1] - 1.0).abs() < GEOM_TOL
}

impl Mesh {
    /// Builds a mesh from raw vertex and triangle lists, deriving and tagging
    /// the boundary edges.
    pub fn new(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidArgument(format!(
                    "triangle {t} references a missing vertex"
                )));
            }
            let a = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if a <= 0.0 {
                return Err(Error::Geometry(format!(
                    "triangle {t} has non-positive signed area {a:e}"
                )));
            }
        }

        let mut counts: BTreeMap<(usize, usize), (usize, [usize; 2])> = BTreeMap::new();
        for tri in &triangles {
            for i in 0..3 {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                let e = counts.entry(edge_key(a, b)).or_insert((0, [a, b]));
                e.0 += 1;
            }
        }

        let mut boundary_edges = Vec::new();
        let mut boundary_length = 0.0;
        for (&(a, b), &(count, oriented)) in &counts {
            match count {
                1 => {
                    let (p, q) = (vertices[a], vertices[b]);
                    let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                    let tag = side_of(mid).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "edge ({a},{b}) has a single triangle but is not on the unit square boundary"
                        ))
                    })?;
                    if side_of(p).is_none() || side_of(q).is_none() {
                        return Err(Error::InvalidArgument(format!(
                            "boundary edge ({a},{b}) leaves the boundary"
                        )));
                    }
                    boundary_length += dist2(p, q).sqrt();
                    boundary_edges.push(BoundaryEdge {
                        vertices: oriented,
                        tag,
                    });
                }
                2 => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "edge ({a},{b}) is shared by {count} triangles"
                    )))
                }
            }
        }
        if !triangles.is_empty() && (boundary_length - 4.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "boundary edges cover length {boundary_length}, expected 4"
            )));
        }

        Ok(Self {
            vertices,
            triangles,
            boundary_edges,
            alfeld: false,
            history: Vec::new(),
        })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// True if the last construction step was a barycentric split.
    pub fn is_alfeld(&self) -> bool {
        self.alfeld
    }

    pub fn history(&self) -> &[Refinement] {
        &self.history
    }

    pub fn corners(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn area(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        signed_area(p, q, r)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.area(t)).sum()
    }

    /// Longest edge length of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [p, q, r] = self.corners(t);
        dist2(p, q).max(dist2(q, r)).max(dist2(r, p)).sqrt()
    }

    pub fn touches_boundary(&self, t: usize) -> bool {
        self.triangles[t]
            .iter()
            .any(|&v| on_square_boundary(self.vertices[v]))
    }

    pub fn edge_table(&self) -> EdgeTable {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut triangle_edges = Vec::with_capacity(self.triangles.len());
        for tri in &self.triangles {
            let mut local = [0usize; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let (a, b) = (tri[i], tri[(i + 1) % 3]);
                *slot = *index.entry(edge_key(a, b)).or_insert_with(|| {
                    edges.push([a.min(b), a.max(b)]);
                    edges.len() - 1
                });
            }
            triangle_edges.push(local);
        }
        EdgeTable {
            edges,
            triangle_edges,
        }
    }

    /// Plain-text dump: vertex lines `x y`, triangle lines `i j k` and
    /// boundary lines `i j tag`, each section introduced by a `#` comment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# vertices {}", self.vertices.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{} {}", v[0], v[1]);
        }
        let _ = writeln!(s, "# triangles {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let _ = writeln!(s, "# boundary_edges {}", self.boundary_edges.len());
        for e in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", e.vertices[0], e.vertices[1], e.tag.as_str());
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Uniform `n x n` grid of squares, each cut along its lower-left to
/// upper-right diagonal.
pub fn uniform_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "uniform mesh needs at least one subdivision per side".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut mesh = Mesh::new(vertices, triangles)?;
    mesh.history.push(Refinement::Uniform(n));
    Ok(mesh)
}

/// Longest-edge (Rivara) bisection state.
struct Bisector {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edge_triangles: HashMap<(usize, usize), Vec<usize>>,
    midpoints: HashMap<(usize, usize), usize>,
}

impl Bisector {
    fn new(mesh: &Mesh) -> Self {
        let mut b = Self {
            vertices: mesh.vertices.clone(),
            triangles: Vec::new(),
            alive: Vec::new(),
            edge_triangles: HashMap::new(),
            midpoints: HashMap::new(),
        };
        for &t in &mesh.triangles {
            b.push(t);
        }
        b
    }

    fn push(&mut self, tri: [usize; 3]) {
        let id = self.triangles.len();
        self.triangles.push(tri);
        self.alive.push(true);
        for i in 0..3 {
            self.edge_triangles
                .entry(edge_key(tri[i], tri[(i + 1) % 3]))
                .or_default()
                .push(id);
        }
    }

    fn kill(&mut self, id: usize) {
        self.alive[id] = false;
        let tri = self.triangles[id];
        for i in 0..3 {
            if let Some(list) = self
                .edge_triangles
                .get_mut(&edge_key(tri[i], tri[(i + 1) % 3]))
            {
                list.retain(|&t| t != id);
            }
        }
    }

    /// Longest edge, ties broken by the smaller vertex key.
    fn longest(&self, id: usize) -> (usize, usize) {
        let tri = self.triangles[id];
        let mut best: Option<(f64, (usize, usize))> = None;
        for i in 0..3 {
            let key = edge_key(tri[i], tri[(i + 1) % 3]);
            let len = dist2(self.vertices[key.0], self.vertices[key.1]);
            best = match best {
                None => Some((len, key)),
                Some((bl, bk)) if len > bl || (len == bl && key < bk) => Some((len, key)),
                keep => keep,
            };
        }
        best.expect("triangle has edges").1
    }

    fn neighbour(&self, id: usize, key: (usize, usize)) -> Option<usize> {
        self.edge_triangles
            .get(&key)
            .and_then(|list| list.iter().copied().find(|&t| t != id))
    }

    fn split_edge(&mut self, key: (usize, usize)) {
        let m = *self.midpoints.entry(key).or_insert_with(|| {
            let (p, q) = (self.vertices[key.0], self.vertices[key.1]);
            self.vertices
                .push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            self.vertices.len() - 1
        });
        let owners = self.edge_triangles.get(&key).cloned().unwrap_or_default();
        for t in owners {
            let tri = self.triangles[t];
            let i = (0..3)
                .find(|&i| edge_key(tri[i], tri[(i + 1) % 3]) == key)
                .expect("owner contains edge");
            let (a, b, p) = (tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]);
            self.kill(t);
            self.push([a, m, p]);
            self.push([m, b, p]);
        }
    }

    fn bisect(&mut self, id: usize) {
        while self.alive[id] {
            let mut cur = id;
            loop {
                let e = self.longest(cur);
                match self.neighbour(cur, e) {
                    Some(nb) if self.longest(nb) != e => cur = nb,
                    _ => {
                        self.split_edge(e);
                        break;
                    }
                }
            }
        }
    }

    fn finish(self) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
        let tris = self
            .triangles
            .iter()
            .zip(&self.alive)
            .filter_map(|(t, &a)| a.then_some(*t))
            .collect();
        (self.vertices, tris)
    }
}

/// Grades the mesh towards the walls: in each of `layers` passes every
/// triangle touching the boundary is bisected once along its longest edge,
/// with neighbours bisected as needed to keep the mesh conforming.
pub fn refine_boundary_layer(mesh: &Mesh, layers: usize) -> Result<Mesh> {
    if layers == 0 {
        return Ok(mesh.clone());
    }
    let mut current = mesh.clone();
    for _ in 0..layers {
        let marked: Vec<usize> = (0..current.n_triangles())
            .filter(|&t| current.touches_boundary(t))
            .collect();
        let mut bisector = Bisector::new(&current);
        for t in marked {
            bisector.bisect(t);
        }
        let (vertices, triangles) = bisector.finish();
        let mut history = current.history.clone();
        history.push(Refinement::BoundaryLayer);
        current = Mesh::new(vertices, triangles)?;
        current.history = history;
    }
    Ok(current)
}

/// Barycentric refinement: every triangle is replaced by the three triangles
/// joining its barycenter to its edges.
pub fn alfeld_split(mesh: &Mesh) -> Result<Mesh> {
    let mut vertices = mesh.vertices.clone();
    let mut triangles = Vec::with_capacity(3 * mesh.n_triangles());
    for &[a, b, c] in &mesh.triangles {
        let (p, q, r) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
        vertices.push([(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]);
        let z = vertices.len() - 1;
        triangles.push([a, b, z]);
        triangles.push([b, c, z]);
        triangles.push([c, a, z]);
    }
    let mut out = Mesh::new(vertices, triangles)?;
    out.alfeld = true;
    out.history = mesh.history.clone();
    out.history.push(Refinement::Alfeld);
    Ok(out)
}

/// Mesh recipe used by the benchmark driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshSpec {
    pub n: usize,
    pub boundary_layers: usize,
    pub alfeld: bool,
}

impl MeshSpec {
    /// `n = 16`, one boundary layer, Alfeld split.
    pub const DESK: MeshSpec = MeshSpec {
        n: 16,
        boundary_layers: 1,
        alfeld: true,
    };

    /// Close to 90k Scott-Vogelius plus temperature unknowns (89,859).
    pub const FULL: MeshSpec = MeshSpec {
        n: 36,
        boundary_layers: 2,
        alfeld: true,
    };

    pub fn build(&self) -> Result<Mesh> {
        let mesh = uniform_square_mesh(self.n)?;
        let mesh = refine_boundary_layer(&mesh, self.boundary_layers)?;
        if self.alfeld {
            alfeld_split(&mesh)
        } else {
            Ok(mesh)
        }
    }
}
