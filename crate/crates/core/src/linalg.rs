//! Banded symmetric positive definite factorization for the Newton systems.

/// Symmetric matrix stored as its lower band: entry `(i, j)` with
/// `i - bw <= j <= i` lives at `i * (bw + 1) + (i - j)`.
#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSpd {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` to entry `(i, j)`; only the lower triangle is stored, so the
    /// caller adds each off-diagonal pair once with `i > j`.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw);
        self.data[i * (self.bw + 1) + (i - j)] += v;
    }

    /// Diagonal entry; meaningful before [`BandedSpd::factor`].
    pub fn diag(&self, i: usize) -> f64 {
        self.data[i * (self.bw + 1)]
    }

    /// In-place Cholesky `A = L L^T`. Returns `false` on a nonpositive pivot.
    pub fn factor(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for j in 0..n {
            let k0 = j.saturating_sub(bw);
            let mut s = self.data[j * w];
            for k in k0..j {
                let l = self.data[j * w + (j - k)];
                s -= l * l;
            }
            if !(s > 0.0) || !s.is_finite() {
                return false;
            }
            let d = s.sqrt();
            self.data[j * w] = d;
            for i in j + 1..n.min(j + bw + 1) {
                let mut s = self.data[i * w + (i - j)];
                for k in i.saturating_sub(bw)..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                self.data[i * w + (i - j)] = s / d;
            }
        }
        true
    }

    /// Solves with the factor produced by [`BandedSpd::factor`].
    #[allow(clippy::needless_range_loop)]
    pub fn solve_factored(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let mut s = b[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.data[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.data[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n.min(i + bw + 1) {
                s -= self.data[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.data[i * w];
        }
    }
}
