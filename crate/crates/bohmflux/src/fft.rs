//! Thin FFT layer over `rustfft` for 1D rows and 2D arrays of complex
//! amplitudes, with the normalization convention fwd(inv(f)) = f.

use std::sync::Arc;

use ndarray::{Array2, ArrayViewMut2};
use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

/// Planned transforms for one axis length.
#[derive(Clone)]
pub struct FftAxis {
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl FftAxis {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftAxis {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.n);
        self.fwd.process(data);
    }

    /// Inverse transform including the 1/n normalization.
    pub fn inverse(&self, data: &mut [C64]) {
        debug_assert_eq!(data.len(), self.n);
        self.inv.process(data);
        let scale = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Planned 2D transform pair for an (nx, ny) array, C-order (y contiguous).
#[derive(Clone)]
pub struct Fft2 {
    pub x: FftAxis,
    pub y: FftAxis,
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        Fft2 {
            x: FftAxis::new(nx),
            y: FftAxis::new(ny),
        }
    }

    fn rows_forward(&self, a: &mut ArrayViewMut2<C64>) {
        for mut row in a.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            self.y.forward(slice);
        }
    }

    fn rows_inverse(&self, a: &mut ArrayViewMut2<C64>) {
        for mut row in a.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            self.y.inverse(slice);
        }
    }

    fn cols_forward(&self, a: &mut Array2<C64>) {
        let mut t = a.t().as_standard_layout().into_owned();
        self.rows_with(&mut t, true);
        a.assign(&t.t());
    }

    fn cols_inverse(&self, a: &mut Array2<C64>) {
        let mut t = a.t().as_standard_layout().into_owned();
        self.rows_with(&mut t, false);
        a.assign(&t.t());
    }

    fn rows_with(&self, a: &mut Array2<C64>, forward: bool) {
        for mut row in a.rows_mut() {
            let slice = row.as_slice_mut().expect("contiguous row");
            if forward {
                self.x.forward(slice);
            } else {
                self.x.inverse(slice);
            }
        }
    }

    /// Full 2D forward transform in place.
    pub fn forward(&self, a: &mut Array2<C64>) {
        self.rows_forward(&mut a.view_mut());
        self.cols_forward(a);
    }

    /// Full 2D inverse transform in place (normalized).
    pub fn inverse(&self, a: &mut Array2<C64>) {
        self.rows_inverse(&mut a.view_mut());
        self.cols_inverse(a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;

    #[test]
    fn roundtrip_is_identity() {
        let n = 64;
        let fft = Fft2::new(n, n);
        let mut a = Array2::from_shape_fn((n, n), |(i, j)| {
            C64::new((i as f64 * 0.13).sin(), (j as f64 * 0.07).cos())
        });
        let orig = a.clone();
        fft.forward(&mut a);
        fft.inverse(&mut a);
        let err = (&a - &orig).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "roundtrip error {err}");
    }

    #[test]
    fn plane_wave_lands_on_single_mode() {
        let n = 32;
        let fft = FftAxis::new(n);
        let mut data: Vec<C64> = (0..n)
            .map(|i| C64::cis(2.0 * std::f64::consts::PI * 3.0 * i as f64 / n as f64))
            .collect();
        fft.forward(&mut data);
        let spect = Array1::from(data);
        for (i, v) in spect.iter().enumerate() {
            if i == 3 {
                assert!((v.norm() - n as f64).abs() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9);
            }
        }
    }
}
