//! Uniform tensor grids `lo:hi:N` (N nodes lo + jΔ with Δ = (hi − lo)/N).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid axis `{0}` is not of the form lo:hi:N")]
    Syntax(String),
    #[error("grid axis `{0}` needs lo < hi and N >= 4")]
    Range(String),
    #[error("grid has {got} axes, expected {want}")]
    Dimension { got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.step()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Grid {
        Grid { axes }
    }

    /// Same axis repeated `dim` times.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Grid {
        Grid { axes: vec![Axis { lo, hi, n }; dim] }
    }

    /// Parses `lo:hi:N` (used for every axis) or `lo:hi:N,lo:hi:N`.
    pub fn parse(text: &str, dim: usize) -> Result<Grid, GridError> {
        let mut axes = Vec::new();
        for part in text.split(',') {
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 3 {
                return Err(GridError::Syntax(part.to_string()));
            }
            let lo: f64 = f[0].parse().map_err(|_| GridError::Syntax(part.to_string()))?;
            let hi: f64 = f[1].parse().map_err(|_| GridError::Syntax(part.to_string()))?;
            let n: usize = f[2].parse().map_err(|_| GridError::Syntax(part.to_string()))?;
            if !(lo < hi) || n < 4 {
                return Err(GridError::Range(part.to_string()));
            }
            axes.push(Axis { lo, hi, n });
        }
        if axes.len() == 1 && dim > 1 {
            axes = vec![axes[0]; dim];
        }
        if axes.len() != dim {
            return Err(GridError::Dimension { got: axes.len(), want: dim });
        }
        Ok(Grid { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::step).product()
    }

    /// Per-axis indices of flat index `idx` (first axis fastest).
    pub fn unflatten(&self, mut idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim());
        for a in &self.axes {
            out.push(idx % a.n);
            idx /= a.n;
        }
        out
    }

    pub fn flatten(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for k in (0..self.dim()).rev() {
            idx = idx * self.axes[k].n + c[k];
        }
        idx
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.unflatten(idx).iter().zip(&self.axes).map(|(&j, a)| a.node(j)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Flat index of the node nearest to `x` (clamped into the grid).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let c: Vec<usize> = self
            .axes
            .iter()
            .zip(x)
            .map(|(a, v)| (((v - a.lo) / a.step()).round().max(0.0) as usize).min(a.n - 1))
            .collect();
        self.flatten(&c)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.axes.iter().zip(x).all(|(a, v)| *v >= a.lo && *v <= a.node(a.n - 1))
    }

    /// Same extent with twice the nodes per axis.
    pub fn refined(&self) -> Grid {
        Grid { axes: self.axes.iter().map(|a| Axis { n: 2 * a.n, ..*a }).collect() }
    }

    /// Multilinear interpolation of node values; `None` outside.
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dim();
        let mut base = Vec::with_capacity(d);
        let mut frac = Vec::with_capacity(d);
        for (a, v) in self.axes.iter().zip(x) {
            let p = (v - a.lo) / a.step();
            let j = (p.floor() as usize).min(a.n - 2);
            base.push(j);
            frac.push(p - j as f64);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut c = base.clone();
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    c[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            acc += w * values[self.flatten(&c)];
        }
        Some(acc)
    }
}
