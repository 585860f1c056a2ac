//! Fully connected layer kernels over a flat parameter buffer.
//!
//! Weights are stored input-major (`w[i * output + o]`) followed by the bias,
//! so the inner loops are contiguous axpy updates.

use rand::Rng as _;

use crate::math::sqrt;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl Dense {
    /// Lay out consecutive layers for the given widths.
    pub fn stack(widths: &[usize], start: usize) -> (alloc::vec::Vec<Dense>, usize) {
        let mut offset = start;
        let layers = widths
            .windows(2)
            .map(|w| {
                let layer = Dense { input: w[0], output: w[1], offset };
                offset += layer.len();
                layer
            })
            .collect();
        (layers, offset)
    }

    pub fn len(&self) -> usize {
        self.input * self.output + self.output
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        p[self.offset..self.offset + self.len()].split_at(self.input * self.output)
    }

    /// Uniform fan-in init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and bias.
    pub fn init(&self, p: &mut [f64], seed: u64) {
        let bound = 1.0 / sqrt(self.input as f64);
        let mut rng = seed::rng(seed);
        for v in &mut p[self.offset..self.offset + self.len()] {
            *v = rng.random_range(-bound..bound);
        }
    }

    /// `out = x W + b` for a row-major batch.
    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        let (w, b) = self.split(p);
        for (xr, or) in x.chunks_exact(self.input).zip(out.chunks_exact_mut(self.output)) {
            or.copy_from_slice(b);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(xi, &w[i * self.output..(i + 1) * self.output], or);
                }
            }
        }
    }

    /// Accumulate parameter gradients for `delta = dL/d out`, and optionally
    /// write `dL/dx` (overwriting `dx`).
    pub fn backward(&self, p: &[f64], x: &[f64], delta: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        {
            let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(self.input * self.output);
            for (xr, dr) in x.chunks_exact(self.input).zip(delta.chunks_exact(self.output)) {
                axpy(1.0, dr, gb);
                for (i, &xi) in xr.iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, dr, &mut gw[i * self.output..(i + 1) * self.output]);
                    }
                }
            }
        }
        if let Some(dx) = dx {
            self.backward_input(p, delta, dx);
        }
    }

    /// `dx = W delta` per batch row.
    pub fn backward_input(&self, p: &[f64], delta: &[f64], dx: &mut [f64]) {
        let (w, _) = self.split(p);
        for (dr, xr) in delta.chunks_exact(self.output).zip(dx.chunks_exact_mut(self.input)) {
            for (i, v) in xr.iter_mut().enumerate() {
                *v = dot(&w[i * self.output..(i + 1) * self.output], dr);
            }
        }
    }
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Zero `delta` wherever the post-ReLU activation is not positive.
pub(crate) fn relu_mask(delta: &mut [f64], activation: &[f64]) {
    for (d, &a) in delta.iter_mut().zip(activation) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}
