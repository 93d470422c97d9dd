//! Real periodic fields on uniform grids via FFT.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Periodic {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Angular wavenumbers `2πm/L` in FFT order, Nyquist set to zero.
    pub k: Vec<f64>,
}

impl Periodic {
    pub fn new(n: usize, length: f64) -> Self {
        let mut planner = FftPlanner::new();
        let k = (0..n)
            .map(|m| {
                let m = m as i64;
                let n = n as i64;
                let s = if m < n / 2 {
                    m
                } else if m == n / 2 {
                    0
                } else {
                    m - n
                };
                2.0 * std::f64::consts::PI * s as f64 / length
            })
            .collect();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            k,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        self.fwd.process(buf);
    }

    /// Inverse transform including the `1/n` factor; returns the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inv.process(&mut spec);
        let s = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * s).collect()
    }

    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        self.inv.process(buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }

    /// `order`-th spatial derivative.
    pub fn derivative(&self, x: &[f64], order: u32) -> Vec<f64> {
        let mut s = self.forward(x);
        for (c, &k) in s.iter_mut().zip(&self.k) {
            *c *= Complex64::new(0.0, k).powu(order);
        }
        self.inverse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_of_a_sine() {
        let n = 32;
        let l = 5.0;
        let p = Periodic::new(n, l);
        let k = 2.0 * std::f64::consts::PI / l;
        let x: Vec<f64> = (0..n).map(|i| (k * i as f64 * l / n as f64).sin()).collect();
        let d1 = p.derivative(&x, 1);
        let d2 = p.derivative(&x, 2);
        for i in 0..n {
            let xi = i as f64 * l / n as f64;
            assert!((d1[i] - k * (k * xi).cos()).abs() < 1e-12);
            assert!((d2[i] + k * k * (k * xi).sin()).abs() < 1e-12);
        }
    }
}
