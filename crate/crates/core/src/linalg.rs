//! Dense symmetric positive-definite solves for the reduced nodal system.

use alloc::vec::Vec;

/// Row-major dense matrix with a reusable Cholesky factor.
#[derive(Clone, Debug, Default)]
pub(crate) struct Spd {
    pub n: usize,
    pub a: Vec<f64>,
    factor: Vec<f64>,
}

impl Spd {
    pub fn reset(&mut self, n: usize) {
        self.n = n;
        self.a.clear();
        self.a.resize(n * n, 0.0);
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] += v;
    }

    /// Factors `a = L·Lᵀ`. Returns the first pivot that is not positive.
    pub fn factor(&mut self) -> Result<(), usize> {
        let n = self.n;
        self.factor.clear();
        self.factor.extend_from_slice(&self.a);
        let l = &mut self.factor;
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return Err(j);
            }
            let d = libm::sqrt(d);
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut v = l[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / d;
            }
        }
        Ok(())
    }

    /// Solves in place with the current factor.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let l = &self.factor;
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= l[i * n + k] * b[k];
            }
            b[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..n {
                v -= l[k * n + i] * b[k];
            }
            b[i] = v / l[i * n + i];
        }
    }
}
