//! Uniform-grid discretization of the unit square.
//!
//! Placement of discrete quantities:
//!
//! * deformation, temperature and internal energy live at nodes,
//! * gradients `∇y` at cell centers (exact gradient of the bilinear interpolant),
//! * Laplacians `Δy` at interior nodes (5-point stencil),
//! * third gradients `∇Δy` on edges joining two interior nodes (forward
//!   difference of the nodal Laplacians).
//!
//! Each continuum integral becomes a plain weighted sum, so the gradient of
//! every assembled functional can be formed exactly by the chain rule.

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};

/// Node ordering is `idx = j * n + i` with `i` along `x1` and `j` along `x2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    n: usize,
    dx: f64,
    interior: Vec<usize>,
    interior_slot: Vec<Option<usize>>,
    boundary: Vec<usize>,
    edges: Vec<Edge>,
}

/// An edge between two interior nodes, oriented in the positive axis direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Interior slot of the start node.
    pub from: usize,
    /// Interior slot of the end node.
    pub to: usize,
    /// 0 for an `x1` edge, 1 for an `x2` edge.
    pub axis: usize,
}

impl Grid2D {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!("grid needs n >= 3 nodes per side, got {n}")));
        }
        let dx = 1.0 / (n - 1) as f64;
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let mut interior_slot = vec![None; n * n];
        for j in 0..n {
            for i in 0..n {
                let idx = j * n + i;
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    boundary.push(idx);
                } else {
                    interior_slot[idx] = Some(interior.len());
                    interior.push(idx);
                }
            }
        }
        let mut edges = Vec::new();
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let from = interior_slot[j * n + i].expect("interior");
                if i + 1 < n - 1 {
                    let to = interior_slot[j * n + i + 1].expect("interior");
                    edges.push(Edge { from, to, axis: 0 });
                }
                if j + 1 < n - 1 {
                    let to = interior_slot[(j + 1) * n + i].expect("interior");
                    edges.push(Edge { from, to, axis: 1 });
                }
            }
        }
        Ok(Self {
            n,
            dx,
            interior,
            interior_slot,
            boundary,
            edges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn num_nodes(&self) -> usize {
        self.n * self.n
    }

    pub fn num_cells(&self) -> usize {
        (self.n - 1) * (self.n - 1)
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn coords(&self, idx: usize) -> (f64, f64) {
        ((idx % self.n) as f64 * self.dx, (idx / self.n) as f64 * self.dx)
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.interior_slot[idx].is_none()
    }

    /// Interior nodes in slot order.
    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn interior_slot(&self, idx: usize) -> Option<usize> {
        self.interior_slot[idx]
    }

    /// Boundary nodes in node order.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Corner nodes of cell `c` in the order (i,j), (i+1,j), (i,j+1), (i+1,j+1).
    pub fn cell_nodes(&self, c: usize) -> [usize; 4] {
        let m = self.n - 1;
        let (i, j) = (c % m, c / m);
        let a = self.node(i, j);
        [a, a + 1, a + self.n, a + self.n + 1]
    }

    /// Cells touching node `idx`.
    pub fn node_cells(&self, idx: usize) -> Vec<usize> {
        let m = self.n - 1;
        let (i, j) = (idx % self.n, idx / self.n);
        let mut out = Vec::with_capacity(4);
        for (ci, cj) in [(i.wrapping_sub(1), j.wrapping_sub(1)), (i, j.wrapping_sub(1)), (i.wrapping_sub(1), j), (i, j)] {
            if ci < m && cj < m {
                out.push(cj * m + ci);
            }
        }
        out
    }

    /// Bilinear gradient coefficients of the four cell corners, `(∂1, ∂2)`.
    pub fn gradient_stencil(&self) -> [(f64, f64); 4] {
        let s = 0.5 / self.dx;
        [(-s, -s), (s, -s), (-s, s), (s, s)]
    }

    /// 5-point Laplacian stencil at an interior slot: `(node, coefficient)`.
    pub fn laplacian_stencil(&self, slot: usize) -> [(usize, f64); 5] {
        let idx = self.interior[slot];
        let w = 1.0 / (self.dx * self.dx);
        [
            (idx, -4.0 * w),
            (idx - 1, w),
            (idx + 1, w),
            (idx - self.n, w),
            (idx + self.n, w),
        ]
    }

    /// Trapezoid volume weights per node; they sum to 1.
    pub fn node_weights(&self) -> Vec<f64> {
        let h2 = self.dx * self.dx;
        (0..self.num_nodes())
            .map(|idx| {
                let (i, j) = (idx % self.n, idx / self.n);
                let fi = if i == 0 || i == self.n - 1 { 0.5 } else { 1.0 };
                let fj = if j == 0 || j == self.n - 1 { 0.5 } else { 1.0 };
                h2 * fi * fj
            })
            .collect()
    }

    /// Trapezoid weights along the perimeter for each node of
    /// [`Grid2D::boundary`]; a corner collects half a spacing from each of
    /// its two sides. They sum to 4.
    pub fn boundary_weights(&self) -> Vec<f64> {
        self.boundary.iter().map(|_| self.dx).collect()
    }

    /// Quadrature weight of one cell (midpoint rule).
    pub fn cell_weight(&self) -> f64 {
        self.dx * self.dx
    }

    /// Area attached to one interior node or one interior edge.
    pub fn patch_weight(&self) -> f64 {
        self.dx * self.dx
    }
}

/// One 2-vector per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField(pub Vec<Vector2<f64>>);

/// One scalar per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl VectorField {
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> Vector2<f64>) -> Self {
        Self(
            (0..grid.num_nodes())
                .map(|idx| {
                    let (x, y) = grid.coords(idx);
                    f(x, y)
                })
                .collect(),
        )
    }

    pub fn identity(grid: &Grid2D) -> Self {
        Self::from_fn(grid, Vector2::new)
    }

    pub fn zeros(grid: &Grid2D) -> Self {
        Self(vec![Vector2::zeros(); grid.num_nodes()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check(&self, grid: &Grid2D) -> Result<()> {
        if self.0.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_nodes(),
                got: self.0.len(),
            });
        }
        Ok(())
    }

    /// `(self - other) / tau`.
    pub fn difference_quotient(&self, other: &VectorField, tau: f64) -> VectorField {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) / tau).collect())
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &VectorField) -> VectorField {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| a + b * s).collect())
    }

    /// Whether every boundary node sits at its reference position.
    pub fn is_dirichlet_identity(&self, grid: &Grid2D, tol: f64) -> bool {
        grid.boundary().iter().all(|&idx| {
            let (x, y) = grid.coords(idx);
            (self.0[idx] - Vector2::new(x, y)).norm() <= tol
        })
    }

    /// Quadrature `Σ_nodes w |u|^2`.
    pub fn l2_norm_squared(&self, grid: &Grid2D) -> f64 {
        grid.node_weights().iter().zip(&self.0).map(|(w, u)| w * u.norm_squared()).sum()
    }

    /// Quadrature `Σ_nodes w a·b`.
    pub fn l2_dot(&self, other: &VectorField, grid: &Grid2D) -> f64 {
        grid.node_weights()
            .iter()
            .zip(self.0.iter().zip(&other.0))
            .map(|(w, (a, b))| w * a.dot(b))
            .sum()
    }
}

impl ScalarField {
    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        Self(
            (0..grid.num_nodes())
                .map(|idx| {
                    let (x, y) = grid.coords(idx);
                    f(x, y)
                })
                .collect(),
        )
    }

    pub fn constant(grid: &Grid2D, v: f64) -> Self {
        Self(vec![v; grid.num_nodes()])
    }

    pub fn check(&self, grid: &Grid2D) -> Result<()> {
        if self.0.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.num_nodes(),
                got: self.0.len(),
            });
        }
        Ok(())
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Bilinear interpolant at each cell center (mean of the corners).
    pub fn cell_means(&self, grid: &Grid2D) -> Vec<f64> {
        (0..grid.num_cells())
            .map(|c| grid.cell_nodes(c).iter().map(|&a| self.0[a]).sum::<f64>() * 0.25)
            .collect()
    }
}

/// Cell-center gradients of a vector field; row `r` of each matrix is `∇u_r`.
pub fn grad_cells(grid: &Grid2D, u: &VectorField) -> Result<Vec<Matrix2<f64>>> {
    u.check(grid)?;
    let st = grid.gradient_stencil();
    Ok((0..grid.num_cells())
        .map(|c| {
            let mut g = Matrix2::zeros();
            for (a, (gx, gy)) in grid.cell_nodes(c).iter().zip(st) {
                let v = u.0[*a];
                for r in 0..2 {
                    g[(r, 0)] += gx * v[r];
                    g[(r, 1)] += gy * v[r];
                }
            }
            g
        })
        .collect())
}

/// Cell-center gradients of a scalar field.
pub fn grad_cells_scalar(grid: &Grid2D, u: &ScalarField) -> Result<Vec<Vector2<f64>>> {
    u.check(grid)?;
    let st = grid.gradient_stencil();
    Ok((0..grid.num_cells())
        .map(|c| {
            grid.cell_nodes(c)
                .iter()
                .zip(st)
                .fold(Vector2::zeros(), |acc, (a, (gx, gy))| acc + Vector2::new(gx, gy) * u.0[*a])
        })
        .collect())
}

/// Nodal deformation gradient: mean of the gradients of the adjacent cells.
pub fn nodal_gradients(grid: &Grid2D, cell_grads: &[Matrix2<f64>]) -> Vec<Matrix2<f64>> {
    (0..grid.num_nodes())
        .map(|idx| {
            let cells = grid.node_cells(idx);
            cells.iter().map(|&c| cell_grads[c]).sum::<Matrix2<f64>>() / cells.len() as f64
        })
        .collect()
}

/// 5-point Laplacian at every interior node, in slot order.
pub fn laplacian_nodes(grid: &Grid2D, u: &VectorField) -> Result<Vec<Vector2<f64>>> {
    u.check(grid)?;
    Ok((0..grid.interior().len())
        .map(|s| {
            grid.laplacian_stencil(s)
                .iter()
                .fold(Vector2::zeros(), |acc, &(a, w)| acc + u.0[a] * w)
        })
        .collect())
}

/// 5-point Laplacian of a scalar field at every interior node.
pub fn laplacian_nodes_scalar(grid: &Grid2D, u: &ScalarField) -> Result<Vec<f64>> {
    u.check(grid)?;
    Ok((0..grid.interior().len())
        .map(|s| grid.laplacian_stencil(s).iter().map(|&(a, w)| u.0[a] * w).sum())
        .collect())
}

/// Directional derivative of the nodal Laplacian along each interior edge.
pub fn grad_laplacian_edges(grid: &Grid2D, u: &VectorField) -> Result<Vec<Vector2<f64>>> {
    let lap = laplacian_nodes(grid, u)?;
    Ok(edge_differences(grid, &lap))
}

/// Forward differences of slot-indexed values along interior edges.
pub fn edge_differences(grid: &Grid2D, slot_values: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let inv = 1.0 / grid.dx();
    grid.edges()
        .iter()
        .map(|e| (slot_values[e.to] - slot_values[e.from]) * inv)
        .collect()
}

/// Midpoint rule over cells.
pub fn integrate_cells(grid: &Grid2D, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.cell_weight()
}

/// Trapezoid rule over nodes.
pub fn integrate_nodes(grid: &Grid2D, values: &[f64]) -> f64 {
    grid.node_weights().iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Trapezoid rule along the perimeter; `values` follow [`Grid2D::boundary`].
pub fn integrate_boundary(grid: &Grid2D, values: &[f64]) -> f64 {
    grid.boundary_weights().iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Smallest cell-center Jacobian determinant.
pub fn min_det(grid: &Grid2D, y: &VectorField) -> Result<f64> {
    Ok(grad_cells(grid, y)?
        .iter()
        .map(|g| g.determinant())
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_grids() {
        assert!(Grid2D::new(2).is_err());
        let g = Grid2D::new(3).unwrap();
        assert_eq!(g.interior().len(), 1);
        assert_eq!(g.boundary().len(), 8);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn affine_gradients_are_exact() {
        let g = Grid2D::new(6).unwrap();
        let id = VectorField::identity(&g);
        for m in grad_cells(&g, &id).unwrap() {
            assert!((m - Matrix2::identity()).norm() < 1e-13);
        }
        let stretch = VectorField::from_fn(&g, |x, y| Vector2::new(2.0 * x, y));
        for m in grad_cells(&g, &stretch).unwrap() {
            assert!((m - Matrix2::new(2.0, 0.0, 0.0, 1.0)).norm() < 1e-13);
        }
        assert!((min_det(&g, &stretch).unwrap() - 2.0).abs() < 1e-13);
        assert!((min_det(&g, &id).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn quadratic_gradient_at_cell_centers() {
        let g = Grid2D::new(5).unwrap();
        let u = VectorField::from_fn(&g, |x, _| Vector2::new(x * x, 0.0));
        let grads = grad_cells(&g, &u).unwrap();
        for (c, m) in grads.iter().enumerate() {
            let [a, ..] = g.cell_nodes(c);
            let (x, _) = g.coords(a);
            let xc = x + 0.5 * g.dx();
            assert!((m[(0, 0)] - 2.0 * xc).abs() < 1e-13);
            assert!(m[(0, 1)].abs() < 1e-13);
        }
    }

    #[test]
    fn laplacian_examples() {
        let g = Grid2D::new(7).unwrap();
        let c = VectorField::from_fn(&g, |_, _| Vector2::new(3.0, -1.0));
        assert!(laplacian_nodes(&g, &c).unwrap().iter().all(|v| v.norm() < 1e-10));
        let id = VectorField::identity(&g);
        assert!(laplacian_nodes(&g, &id).unwrap().iter().all(|v| v.norm() < 1e-10));
        let q = VectorField::from_fn(&g, |x, _| Vector2::new(x * x, 0.0));
        for v in laplacian_nodes(&g, &q).unwrap() {
            assert!((v - Vector2::new(2.0, 0.0)).norm() < 1e-10);
        }
        assert!(grad_laplacian_edges(&g, &q).unwrap().iter().all(|v| v.norm() < 1e-8));
    }

    #[test]
    fn cubic_third_gradient() {
        let g = Grid2D::new(6).unwrap();
        let u = VectorField::from_fn(&g, |x, _| Vector2::new(x * x * x, 0.0));
        let gl = grad_laplacian_edges(&g, &u).unwrap();
        for (e, v) in g.edges().iter().zip(gl) {
            let expected = if e.axis == 0 { 6.0 } else { 0.0 };
            assert!((v[0] - expected).abs() < 1e-8, "{:?} {}", e, v[0]);
            assert!(v[1].abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_examples() {
        for n in [3, 4, 9] {
            let g = Grid2D::new(n).unwrap();
            assert!((integrate_cells(&g, &vec![1.0; g.num_cells()]) - 1.0).abs() < 1e-14);
            assert!((integrate_nodes(&g, &vec![1.0; g.num_nodes()]) - 1.0).abs() < 1e-14);
            assert!((integrate_boundary(&g, &vec![1.0; g.boundary().len()]) - 4.0).abs() < 1e-14);
        }
        let g = Grid2D::new(3).unwrap();
        let xs: Vec<f64> = g.boundary().iter().map(|&b| g.coords(b).0).collect();
        assert!((integrate_boundary(&g, &xs) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let g = Grid2D::new(4).unwrap();
        let u = VectorField(vec![Vector2::zeros(); 3]);
        assert!(matches!(grad_cells(&g, &u), Err(Error::DimensionMismatch { expected: 16, got: 3 })));
    }

    #[test]
    fn node_cells_cover_grid() {
        let g = Grid2D::new(4).unwrap();
        let counts: usize = (0..g.num_nodes()).map(|i| g.node_cells(i).len()).sum();
        assert_eq!(counts, 4 * g.num_cells());
        assert_eq!(g.node_cells(0).len(), 1);
        assert_eq!(g.node_cells(g.node(1, 0)).len(), 2);
        assert_eq!(g.node_cells(g.node(1, 1)).len(), 4);
    }
}
