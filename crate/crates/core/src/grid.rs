use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

pub const MIN_CELLS: usize = 8;

/// Regular lattice over the unit cube with `n` cells (and `n + 1` vertices) per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_CELLS {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least {MIN_CELLS} cells per axis, got {n}"
            )));
        }
        Ok(GridSpec { n })
    }

    /// Cells per axis.
    #[inline]
    pub fn cells(&self) -> usize {
        self.n
    }

    /// Vertices per axis.
    #[inline]
    pub fn verts(&self) -> usize {
        self.n + 1
    }

    /// Grid spacing, `1 / n`.
    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn vertex_count(&self) -> usize {
        let m = self.verts();
        m * m * m
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Linear index of lattice vertex `(i, j, k)`, x fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.verts();
        i + m * (j + m * k)
    }

    #[inline]
    pub fn unindex(&self, idx: usize) -> [usize; 3] {
        let m = self.verts();
        [idx % m, (idx / m) % m, idx / (m * m)]
    }

    #[inline]
    pub fn vertex(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let w = self.spacing();
        Vec3::new(i as f64 * w, j as f64 * w, k as f64 * w)
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn cell_unindex(&self, idx: usize) -> [usize; 3] {
        [idx % self.n, (idx / self.n) % self.n, idx / (self.n * self.n)]
    }

    /// Lower corner of cell `(i, j, k)`.
    #[inline]
    pub fn cell_origin(&self, cell: [usize; 3]) -> Vec3 {
        self.vertex(cell[0], cell[1], cell[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_grids() {
        assert!(GridSpec::new(7).is_err());
        let spec = GridSpec::new(8).unwrap();
        assert_eq!(spec.vertex_count(), 729);
        assert_eq!(spec.spacing() * 8.0, 1.0);
    }

    #[test]
    fn index_roundtrip() {
        let spec = GridSpec::new(10).unwrap();
        for idx in [0, 1, 10, 11, 120, 1330] {
            let [i, j, k] = spec.unindex(idx);
            assert_eq!(spec.index(i, j, k), idx);
        }
        assert_eq!(spec.index(1, 0, 0), 1);
        assert_eq!(spec.index(0, 1, 0), 11);
    }
}
