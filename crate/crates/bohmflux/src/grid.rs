//! Uniform periodic 2D configuration-space grid, one spatial axis per
//! particle. Units are fixed to hbar = m = 1; lengths are dimensionless.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform periodic grid over `[-lx, lx) x [-ly, ly)` with power-of-two
/// point counts per axis (spectral transforms stay fast and exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        for (name, n) in [("x", nx), ("y", ny)] {
            if n < 16 || !n.is_power_of_two() {
                return Err(Error::config(format!(
                    "grid points per axis must be a power of two >= 16, got {n} on {name}"
                )));
            }
        }
        if lx <= 0.0 || ly <= 0.0 {
            return Err(Error::config("grid extent must be positive"));
        }
        Ok(Grid { nx, ny, lx, ly })
    }

    /// Square grid, same point count and extent on both axes.
    pub fn square(n: usize, l: f64) -> Result<Self> {
        Grid::new(n, n, l, l)
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.ly / self.ny as f64
    }

    /// Area element for configuration-space quadrature.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.lx + i as f64 * self.dx()
    }

    pub fn y(&self, j: usize) -> f64 {
        -self.ly + j as f64 * self.dy()
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nx).map(move |i| self.x(i))
    }

    pub fn ys(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.ny).map(move |j| self.y(j))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (-self.lx..self.lx).contains(&x) && (-self.ly..self.ly).contains(&y)
    }

    /// Angular wavenumber of Fourier mode `i` along an axis with `n` points
    /// and half-width `l` (FFT ordering: 0, 1, ..., n/2-1, -n/2, ..., -1).
    pub fn wavenumber(i: usize, n: usize, l: f64) -> f64 {
        let dk = std::f64::consts::PI / l;
        let m = if i < n / 2 {
            i as f64
        } else {
            i as f64 - n as f64
        };
        m * dk
    }

    pub fn kx(&self, i: usize) -> f64 {
        Self::wavenumber(i, self.nx, self.lx)
    }

    pub fn ky(&self, j: usize) -> f64 {
        Self::wavenumber(j, self.ny, self.ly)
    }
}
