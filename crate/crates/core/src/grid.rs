//! Uniform node-centered grids on the unit torus, the wrapped double-interface
//! torus, truncated cylinders and interface boxes.
//!
//! Axis 0 is the interface-normal (axial) direction; tangential axes are
//! always 1-periodic with the same spacing. Grids store no ghost layers;
//! periodic indexing is modular, truncated grids carry Dirichlet end planes.

use crate::error::{CoreError, Result};
use std::sync::Arc;

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AxialBc {
    Periodic,
    Dirichlet,
}

#[derive(Clone, PartialEq, Debug)]
pub struct Grid {
    pub d: usize,
    /// Node count per axis; unused trailing axes are 1.
    pub dims: [usize; MAX_DIM],
    /// Spacing, identical on all axes.
    pub h: f64,
    pub axial_bc: AxialBc,
    /// Coordinate of node 0 along axis 0 (tangential origins are 0).
    pub origin: f64,
}

impl Grid {
    fn validate(d: usize) -> Result<()> {
        if !(2..=3).contains(&d) {
            return Err(CoreError::InvalidGrid(format!("d = {d}, expected 2 or 3")));
        }
        Ok(())
    }

    /// Unit torus Y = [0,1)^d with n nodes per axis, h = 1/n.
    pub fn torus(d: usize, n: usize) -> Result<Arc<Grid>> {
        Self::validate(d)?;
        if n < 8 {
            return Err(CoreError::InvalidGrid(format!("n = {n} < 8")));
        }
        if n % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "n = {n} is odd; staggered fluxes need even alignment"
            )));
        }
        let mut dims = [1; MAX_DIM];
        dims[..d].fill(n);
        Ok(Arc::new(Grid {
            d,
            dims,
            h: 1.0 / n as f64,
            axial_bc: AxialBc::Periodic,
            origin: 0.0,
        }))
    }

    /// Double-interface torus of axial period 4L: axial coordinate in
    /// [-2L, 2L), tangential axes 1-periodic, n_cell nodes per unit length.
    pub fn double_torus(d: usize, half_length: usize, n_cell: usize) -> Result<Arc<Grid>> {
        Self::validate(d)?;
        if half_length < 2 {
            return Err(CoreError::InvalidGrid(format!(
                "half length L = {half_length} < 2"
            )));
        }
        if n_cell < 8 || n_cell % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "n_cell = {n_cell}; need even n_cell >= 8"
            )));
        }
        let mut dims = [1; MAX_DIM];
        dims[0] = 4 * half_length * n_cell;
        dims[1..d].fill(n_cell);
        Ok(Arc::new(Grid {
            d,
            dims,
            h: 1.0 / n_cell as f64,
            axial_bc: AxialBc::Periodic,
            origin: -2.0 * half_length as f64,
        }))
    }

    /// Truncated cylinder [-L, L] x T^{d-1} with Dirichlet end planes.
    pub fn truncated_cylinder(d: usize, half_length: usize, n_cell: usize) -> Result<Arc<Grid>> {
        Self::validate(d)?;
        if half_length < 2 {
            return Err(CoreError::InvalidGrid(format!(
                "half length L = {half_length} < 2"
            )));
        }
        if n_cell < 8 || n_cell % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "n_cell = {n_cell}; need even n_cell >= 8"
            )));
        }
        let mut dims = [1; MAX_DIM];
        dims[0] = 2 * half_length * n_cell + 1;
        dims[1..d].fill(n_cell);
        Ok(Arc::new(Grid {
            d,
            dims,
            h: 1.0 / n_cell as f64,
            axial_bc: AxialBc::Dirichlet,
            origin: -(half_length as f64),
        }))
    }

    /// Interface box [-1, 1] x T^{d-1} (tangential period `tang_units`, usually 1)
    /// with `n_per_unit` nodes per unit length and Dirichlet axial ends.
    pub fn interface_box(d: usize, n_per_unit: usize, tang_units: usize) -> Result<Arc<Grid>> {
        Self::validate(d)?;
        if n_per_unit < 8 || n_per_unit % 2 != 0 {
            return Err(CoreError::InvalidGrid(format!(
                "n_per_unit = {n_per_unit}; need even >= 8"
            )));
        }
        let mut dims = [1; MAX_DIM];
        dims[0] = 2 * n_per_unit + 1;
        dims[1..d].fill(n_per_unit * tang_units);
        Ok(Arc::new(Grid {
            d,
            dims,
            h: 1.0 / n_per_unit as f64,
            axial_bc: AxialBc::Dirichlet,
            origin: -1.0,
        }))
    }

    pub fn n_nodes(&self) -> usize {
        self.dims[..self.d].iter().product()
    }

    /// Strides for flat row-major indexing.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [1; MAX_DIM];
        if self.d == 3 {
            s[1] = self.dims[2];
            s[0] = self.dims[1] * self.dims[2];
        } else {
            s[0] = self.dims[1];
        }
        s
    }

    pub fn coords_of(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        if self.d == 3 {
            c[2] = idx % self.dims[2];
            idx /= self.dims[2];
        }
        c[1] = idx % self.dims[1];
        c[0] = idx / self.dims[1];
        c
    }

    pub fn index_of(&self, c: [usize; MAX_DIM]) -> usize {
        let s = self.strides();
        c[0] * s[0] + c[1] * s[1] + c[2] * s[2]
    }

    /// Physical position of a node.
    pub fn position(&self, c: [usize; MAX_DIM]) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        p[0] = self.origin + c[0] as f64 * self.h;
        for a in 1..self.d {
            p[a] = c[a] as f64 * self.h;
        }
        p
    }

    /// Is this node on a Dirichlet end plane?
    pub fn on_boundary(&self, c: [usize; MAX_DIM]) -> bool {
        self.axial_bc == AxialBc::Dirichlet && (c[0] == 0 || c[0] == self.dims[0] - 1)
    }

    /// Axial extent in physical units.
    pub fn axial_span(&self) -> f64 {
        match self.axial_bc {
            AxialBc::Periodic => self.dims[0] as f64 * self.h,
            AxialBc::Dirichlet => (self.dims[0] - 1) as f64 * self.h,
        }
    }

    /// Neighbor tables: `plus[a][i]` / `minus[a][i]` give the neighbor
    /// coordinate along axis `a`, wrapping on periodic axes. On the Dirichlet
    /// axis the end entries saturate (callers treat end planes as identity rows).
    pub fn neighbor_tables(&self) -> NeighborTables {
        let mut plus: [Vec<usize>; MAX_DIM] = Default::default();
        let mut minus: [Vec<usize>; MAX_DIM] = Default::default();
        for a in 0..self.d {
            let n = self.dims[a];
            let periodic = a > 0 || self.axial_bc == AxialBc::Periodic;
            let mut p = Vec::with_capacity(n);
            let mut m = Vec::with_capacity(n);
            for i in 0..n {
                if periodic {
                    p.push((i + 1) % n);
                    m.push((i + n - 1) % n);
                } else {
                    p.push((i + 1).min(n - 1));
                    m.push(i.saturating_sub(1));
                }
            }
            plus[a] = p;
            minus[a] = m;
        }
        NeighborTables { plus, minus }
    }

    pub fn same_as(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(CoreError::GridMismatch(format!(
                "dims {:?} vs {:?}",
                &self.dims[..self.d],
                &other.dims[..other.d]
            )));
        }
        Ok(())
    }
}

pub struct NeighborTables {
    pub plus: [Vec<usize>; MAX_DIM],
    pub minus: [Vec<usize>; MAX_DIM],
}

/// Scalar field: one value per node.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            data: vec![0.0; grid.n_nodes()],
        }
    }

    pub fn constant(grid: &Arc<Grid>, v: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            data: vec![v; grid.n_nodes()],
        }
    }

    /// Samples `f(position)` at every node.
    pub fn from_fn<F: Fn(&[f64; MAX_DIM]) -> f64 + Sync>(grid: &Arc<Grid>, f: F) -> Self {
        let mut field = Self::zeros(grid);
        let g = grid.clone();
        crate::par::map_chunks(&mut field.data, |start, chunk| {
            for (k, v) in chunk.iter_mut().enumerate() {
                let c = g.coords_of(start + k);
                *v = f(&g.position(c));
            }
        });
        field
    }

    pub fn from_vec(grid: &Arc<Grid>, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), grid.n_nodes());
        ScalarField {
            grid: grid.clone(),
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        crate::par::det_sum(self.data.len(), |i| self.data[i]) / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Vector field with `d` scalar components.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub comps: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        VectorField {
            comps: (0..grid.d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn from_fn<F: Fn(&[f64; MAX_DIM]) -> [f64; MAX_DIM] + Sync>(
        grid: &Arc<Grid>,
        f: F,
    ) -> Self {
        let mut v = Self::zeros(grid);
        for a in 0..grid.d {
            let g = grid.clone();
            let fa = &f;
            crate::par::map_chunks(&mut v.comps[a].data, |start, chunk| {
                for (k, val) in chunk.iter_mut().enumerate() {
                    let c = g.coords_of(start + k);
                    *val = fa(&g.position(c))[a];
                }
            });
        }
        v
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.comps[0].grid
    }

    pub fn d(&self) -> usize {
        self.comps.len()
    }
}

/// Matrix field with `d x d` scalar components, row-major.
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub d: usize,
    pub comps: Vec<ScalarField>,
}

impl MatrixField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let d = grid.d;
        MatrixField {
            d,
            comps: (0..d * d).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn identity(grid: &Arc<Grid>) -> Self {
        let mut m = Self::zeros(grid);
        for i in 0..m.d {
            m.comps[i * m.d + i] = ScalarField::constant(grid, 1.0);
        }
        m
    }

    pub fn from_fn<F: Fn(&[f64; MAX_DIM], usize, usize) -> f64 + Sync>(
        grid: &Arc<Grid>,
        f: F,
    ) -> Self {
        let mut m = Self::zeros(grid);
        let d = m.d;
        for i in 0..d {
            for j in 0..d {
                let g = grid.clone();
                let fr = &f;
                crate::par::map_chunks(&mut m.comps[i * d + j].data, |start, chunk| {
                    for (k, val) in chunk.iter_mut().enumerate() {
                        let c = g.coords_of(start + k);
                        *val = fr(&g.position(c), i, j);
                    }
                });
            }
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> &ScalarField {
        &self.comps[i * self.d + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut ScalarField {
        &mut self.comps[i * self.d + j]
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.comps[0].grid
    }

    /// Max over nodes of |M - M^T| (symmetry defect).
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in (i + 1)..self.d {
                let a = &self.at(i, j).data;
                let b = &self.at(j, i).data;
                for k in 0..a.len() {
                    worst = worst.max((a[k] - b[k]).abs());
                }
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_grid_counts() {
        let g = Grid::torus(2, 64).unwrap();
        assert_eq!(g.n_nodes(), 4096);
        assert!((g.h - 1.0 / 64.0).abs() < 1e-15);
        let g3 = Grid::torus(3, 16).unwrap();
        assert_eq!(g3.n_nodes(), 4096);
    }

    #[test]
    fn rejects_odd_and_bad_dim() {
        assert!(Grid::torus(2, 63).is_err());
        assert!(Grid::torus(4, 64).is_err());
        assert!(Grid::torus(1, 64).is_err());
        assert!(Grid::torus(2, 6).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::double_torus(3, 2, 8).unwrap();
        for idx in [0usize, 17, 255, g.n_nodes() - 1] {
            let c = g.coords_of(idx);
            assert_eq!(g.index_of(c), idx);
        }
    }

    #[test]
    fn truncated_cylinder_has_end_planes() {
        let g = Grid::truncated_cylinder(2, 2, 8).unwrap();
        assert_eq!(g.dims[0], 33);
        assert!(g.on_boundary([0, 3, 0]));
        assert!(g.on_boundary([32, 0, 0]));
        assert!(!g.on_boundary([1, 0, 0]));
        assert!((g.origin + 2.0).abs() < 1e-15);
    }
}
