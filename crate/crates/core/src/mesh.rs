//! Conforming triangulations of the unit square and P1 nodal spaces.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::{Error, Real, Result};

/// Boundary segment `(from, to)` with its unit outward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge<T> {
    pub from: usize,
    pub to: usize,
    pub normal: [T; 2],
}

/// Per-triangle data that every element loop needs: area and the constant
/// gradients of the three barycentric (P1 nodal) basis functions.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry<T> {
    pub area: T,
    pub grads: [[T; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct Mesh<T> {
    nodes: Vec<[T; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge<T>>,
    geometry: Vec<ElementGeometry<T>>,
    // CSR map node -> incident triangles, ascending triangle index
    node_tri_offsets: Vec<usize>,
    node_tri: Vec<usize>,
    h: T,
}

impl<T: Real> Mesh<T> {
    /// Builds a mesh from raw nodes and counterclockwise triangles.
    pub fn new(nodes: Vec<[T; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if nodes.is_empty() || triangles.is_empty() {
            return Err(Error::invalid("mesh needs at least one triangle"));
        }
        let mut geometry = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing node")));
            }
            let g = element_geometry(&nodes, tri);
            if !(g.area > T::zero()) {
                return Err(Error::invalid(format!(
                    "triangle {t} has non-positive signed area"
                )));
            }
            geometry.push(g);
        }

        // edge -> (count, oriented copy from the first triangle that saw it)
        let mut edges: BTreeMap<(usize, usize), (usize, usize, usize)> = BTreeMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edges
                    .entry(key)
                    .and_modify(|e| e.0 += 1)
                    .or_insert((1, a, b));
            }
        }
        let mut h = T::zero();
        let mut boundary_edges = Vec::new();
        for (_, &(count, a, b)) in &edges {
            let dx = nodes[b][0] - nodes[a][0];
            let dy = nodes[b][1] - nodes[a][1];
            let len = (dx * dx + dy * dy).sqrt();
            h = h.max(len);
            match count {
                1 => boundary_edges.push(BoundaryEdge {
                    from: a,
                    to: b,
                    normal: [dy / len, -dx / len],
                }),
                2 => {}
                _ => return Err(Error::invalid("non-manifold edge shared by more than two triangles")),
            }
        }

        let mut counts = vec![0usize; nodes.len() + 1];
        for tri in &triangles {
            for &v in tri {
                counts[v + 1] += 1;
            }
        }
        for i in 0..nodes.len() {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut node_tri = vec![0usize; counts[nodes.len()]];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                node_tri[fill[v]] = t;
                fill[v] += 1;
            }
        }

        Ok(Self {
            nodes,
            triangles,
            boundary_edges,
            geometry,
            node_tri_offsets: counts,
            node_tri,
            h,
        })
    }

    /// Uniform `n x n` grid of the unit square, each cell cut along the
    /// diagonal from its lower-left to its upper-right corner. Nodes are
    /// numbered row-major (`j * (n + 1) + i` for `(i / n, j / n)`).
    pub fn unit_square(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("unit square needs n >= 1 subdivisions"));
        }
        let inv = T::one() / T::from_usize_lossy(n);
        let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
        for j in 0..=n {
            for i in 0..=n {
                nodes.push([T::from_usize_lossy(i) * inv, T::from_usize_lossy(j) * inv]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let (p00, p10, p01, p11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
        Self::new(nodes, triangles)
    }

    pub fn nodes(&self) -> &[[T; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge<T>] {
        &self.boundary_edges
    }

    pub fn geometry(&self) -> &[ElementGeometry<T>] {
        &self.geometry
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Longest edge length.
    pub fn h(&self) -> T {
        self.h
    }

    /// Triangles incident to `node`, ascending.
    pub fn triangles_of(&self, node: usize) -> &[usize] {
        &self.node_tri[self.node_tri_offsets[node]..self.node_tri_offsets[node + 1]]
    }

    /// Writes `nodes <m> triangles <t>`, then one `x y` line per node, then
    /// one `i j k` line per triangle.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "nodes {} triangles {}", self.nodes.len(), self.triangles.len());
        for p in &self.nodes {
            let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: [T; 2]) -> [T; 3] {
        let tri = self.triangles[t];
        let g = &self.geometry[t];
        let mut lam = [T::zero(); 3];
        for (k, l) in lam.iter_mut().enumerate() {
            // lambda_k is affine: value 1 at its own vertex
            let v = self.nodes[tri[k]];
            *l = T::one() + g.grads[k][0] * (p[0] - v[0]) + g.grads[k][1] * (p[1] - v[1]);
        }
        lam
    }

    /// First triangle containing `p` (with a small tolerance), if any.
    pub fn locate(&self, p: [T; 2]) -> Option<usize> {
        let tol = T::lit(-1e-12);
        (0..self.triangles.len()).find(|&t| self.barycentric(t, p).iter().all(|&l| l >= tol))
    }
}

fn element_geometry<T: Real>(nodes: &[[T; 2]], tri: &[usize; 3]) -> ElementGeometry<T> {
    let [x0, y0] = nodes[tri[0]];
    let [x1, y1] = nodes[tri[1]];
    let [x2, y2] = nodes[tri[2]];
    let det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    let two = T::lit(2.0);
    ElementGeometry {
        area: det / two,
        grads: [
            [(y1 - y2) / det, (x2 - x1) / det],
            [(y2 - y0) / det, (x0 - x2) / det],
            [(y0 - y1) / det, (x1 - x0) / det],
        ],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceRole {
    Parameter,
    State,
}

/// Continuous piecewise-linear functions on a mesh, represented by their
/// nodal values.
#[derive(Debug, Clone)]
pub struct P1Space<T> {
    mesh: Arc<Mesh<T>>,
    role: SpaceRole,
}

impl<T: Real> P1Space<T> {
    pub fn new(mesh: Arc<Mesh<T>>, role: SpaceRole) -> Self {
        Self { mesh, role }
    }

    pub fn mesh(&self) -> &Arc<Mesh<T>> {
        &self.mesh
    }

    pub fn role(&self) -> SpaceRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.mesh.node_count()
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(&self, f: impl Fn(T, T) -> T) -> Vec<T> {
        self.mesh.nodes().iter().map(|p| f(p[0], p[1])).collect()
    }

    /// Value of the P1 function with nodal values `values` at `p`.
    pub fn evaluate(&self, values: &[T], p: [T; 2]) -> Option<T> {
        let t = self.mesh.locate(p)?;
        let lam = self.mesh.barycentric(t, p);
        let tri = self.mesh.triangles()[t];
        Some((0..3).map(|k| lam[k] * values[tri[k]]).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_grid() {
        let m = Mesh::<f64>::unit_square(1).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.triangle_count(), 2);
        assert!((m.h() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(Mesh::<f64>::unit_square(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn table_mesh_sizes() {
        let h30 = Mesh::<f64>::unit_square(30).unwrap().h();
        let h80 = Mesh::<f64>::unit_square(80).unwrap().h();
        assert_eq!(format!("{:.7}", h30), "0.0471405");
        assert_eq!(format!("{:.7}", h80), "0.0176777");
    }

    #[test]
    fn counts_and_area() {
        for n in [1usize, 3, 7] {
            let m = Mesh::<f64>::unit_square(n).unwrap();
            assert_eq!(m.triangle_count(), 2 * n * n);
            assert_eq!(m.node_count(), (n + 1) * (n + 1));
            let area: f64 = m.geometry().iter().map(|g| g.area).sum();
            assert!((area - 1.0).abs() < 1e-12);
            assert!(m.geometry().iter().all(|g| g.area > 0.0));
        }
    }

    #[test]
    fn boundary_tiles_square_with_outward_normals() {
        let n = 5;
        let m = Mesh::<f64>::unit_square(n).unwrap();
        assert_eq!(m.boundary_edges().len(), 4 * n);
        let mut perimeter = 0.0;
        for e in m.boundary_edges() {
            let (a, b) = (m.nodes()[e.from], m.nodes()[e.to]);
            perimeter += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let nrm = (e.normal[0].powi(2) + e.normal[1].powi(2)).sqrt();
            assert!((nrm - 1.0).abs() < 1e-14);
            let mid = [(a[0] + b[0]) / 2.0 - 0.5, (a[1] + b[1]) / 2.0 - 0.5];
            assert!(mid[0] * e.normal[0] + mid[1] * e.normal[1] > 0.0);
        }
        assert!((perimeter - 4.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_examples() {
        let mesh = Arc::new(Mesh::<f64>::unit_square(1).unwrap());
        let space = P1Space::new(mesh, SpaceRole::State);
        assert_eq!(space.interpolate(|x, _| x), vec![0.0, 1.0, 0.0, 1.0]);
        assert!(space.interpolate(|_, _| 1.0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn interpolation_of_manufactured_field_on_n2() {
        use std::f64::consts::PI;
        let mesh = Arc::new(Mesh::<f64>::unit_square(2).unwrap());
        let space = P1Space::new(mesh, SpaceRole::Parameter);
        let v = space.interpolate(|x, y| (PI * x * x).cos() * (2.0 * PI * y).cos());
        // direct evaluation at (i/2, j/2), row-major
        let c = (PI / 4.0).cos();
        let expected = [1.0, c, -1.0, -1.0, -c, 1.0, 1.0, c, -1.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn text_export_header() {
        let m = Mesh::<f64>::unit_square(2).unwrap();
        let s = m.to_text();
        assert_eq!(s.lines().next().unwrap(), "nodes 9 triangles 8");
        assert_eq!(s.lines().count(), 1 + 9 + 8);
    }
}
