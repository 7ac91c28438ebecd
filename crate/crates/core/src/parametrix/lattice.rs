//! Periodic lattices w_k = δ + (k − N/2)Δ per axis and their discrete inverse transform.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Lattice {
    pub dim: usize,
    pub nodes: usize,
    pub dx: f64,
    pub dxi: f64,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice").field("dim", &self.dim).field("nodes", &self.nodes).field("dx", &self.dx).finish()
    }
}

impl Lattice {
    pub fn new(dim: usize, nodes: usize, dx: f64) -> Lattice {
        let fft = FftPlanner::<f64>::new().plan_fft_forward(nodes);
        Lattice { dim, nodes, dx, dxi: 2.0 * PI / (nodes as f64 * dx), fft }
    }

    pub fn total(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    /// Frequency of flat index l (first axis fastest).
    pub fn frequency(&self, l: usize) -> [f64; 2] {
        let n = self.nodes;
        let h = (n / 2) as f64;
        if self.dim == 1 {
            [(l as f64 - h) * self.dxi, 0.0]
        } else {
            [((l % n) as f64 - h) * self.dxi, ((l / n) as f64 - h) * self.dxi]
        }
    }

    /// Multiplies the spectrum by e^{−iξ·δ} so the output sits on w_k = δ + (k − N/2)Δ.
    pub fn shift(&self, spec: &mut [Complex64], delta: &[f64]) {
        if delta.iter().all(|&v| v == 0.0) {
            return;
        }
        for (l, v) in spec.iter_mut().enumerate() {
            let xi = self.frequency(l);
            let ph = -(xi[0] * delta[0] + if self.dim == 2 { xi[1] * delta[1] } else { 0.0 });
            *v *= Complex64::from_polar(1.0, ph);
        }
    }

    /// Real part of (2π)^{-d} Σ_l e^{−iξ_l w_k} spec_l Δξ^d at w_k = (k − N/2)Δ; consumes the buffer.
    pub fn invert(&self, spec: &mut [Complex64]) -> Vec<f64> {
        let n = self.nodes;
        let sign = |k: usize| if k % 2 == 0 { 1.0 } else { -1.0 };
        let parity = |idx: usize| if self.dim == 1 { sign(idx) } else { sign(idx % n) * sign(idx / n) };
        for (i, v) in spec.iter_mut().enumerate() {
            *v *= parity(i);
        }
        if self.dim == 1 {
            self.fft.process(spec);
        } else {
            for row in spec.chunks_mut(n) {
                self.fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for c in 0..n {
                for r in 0..n {
                    col[r] = spec[r * n + c];
                }
                self.fft.process(&mut col);
                for r in 0..n {
                    spec[r * n + c] = col[r];
                }
            }
        }
        let scale = (self.dxi / (2.0 * PI)).powi(self.dim as i32);
        spec.iter().enumerate().map(|(i, v)| v.re * parity(i) * scale).collect()
    }

    /// Flat lattice index for per-axis offsets from the centre node (wrapped periodically).
    pub fn index(&self, offsets: &[isize]) -> usize {
        let n = self.nodes as isize;
        let wrap = |o: isize| (o + n / 2).rem_euclid(n) as usize;
        if self.dim == 1 {
            wrap(offsets[0])
        } else {
            wrap(offsets[0]) + self.nodes * wrap(offsets[1])
        }
    }

    /// Cubic interpolation of lattice values at w (with shift δ); zero outside.
    pub fn interpolate(&self, values: &[f64], delta: &[f64], w: &[f64]) -> f64 {
        let lo = -((self.nodes / 2) as f64) * self.dx;
        let shifted: Vec<f64> = w.iter().zip(delta).map(|(a, b)| a - b).collect();
        crate::frozen::interpolate(values, self.dim, self.nodes, lo, self.dx, &shifted).unwrap_or(0.0)
    }
}

/// Π_k sinc(ξ_k h / 2): transform of the average over a box of side h.
pub fn sinc_factor(xi: &[f64], h: f64) -> f64 {
    xi.iter()
        .map(|v| {
            let a = 0.5 * v * h;
            if a.abs() < 1e-8 {
                1.0
            } else {
                a.sin() / a
            }
        })
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_round_trip_with_shift() {
        let lat = Lattice::new(1, 256, 0.1);
        let delta = [0.037];
        let mut spec: Vec<Complex64> =
            (0..lat.total()).map(|l| Complex64::new((-0.5 * lat.frequency(l)[0].powi(2)).exp(), 0.0)).collect();
        lat.shift(&mut spec, &delta);
        let v = lat.invert(&mut spec);
        for k in [100usize, 128, 140] {
            let w = delta[0] + (k as f64 - 128.0) * 0.1;
            let exact = (-0.5 * w * w).exp() / (2.0 * PI).sqrt();
            assert!((v[k] - exact).abs() < 1e-12);
        }
        assert_eq!(lat.index(&[0]), 128);
        assert_eq!(lat.index(&[-129]), 255);
    }

    #[test]
    fn two_dimensional_inverse() {
        let lat = Lattice::new(2, 64, 0.25);
        let mut spec: Vec<Complex64> = (0..lat.total())
            .map(|l| {
                let xi = lat.frequency(l);
                Complex64::new((-0.5 * (xi[0] * xi[0] + 4.0 * xi[1] * xi[1])).exp(), 0.0)
            })
            .collect();
        let v = lat.invert(&mut spec);
        let idx = lat.index(&[2, -3]);
        let (w0, w1): (f64, f64) = (0.5, -0.75);
        let exact = (-0.5 * w0 * w0 - w1 * w1 / 8.0).exp() / (2.0 * PI * 2.0);
        assert!((v[idx] - exact).abs() < 1e-12);
    }
}
