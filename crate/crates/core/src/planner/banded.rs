//! Symmetric banded matrices and their Cholesky factorization.

/// Lower band of a symmetric `n x n` matrix with half-bandwidth `p`.
#[derive(Clone, Debug)]
pub(crate) struct SymBand {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            data: vec![0.0; n * (p + 1)],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.p);
        i * (self.p + 1) + (self.p + j - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.p {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(i - j <= self.p, "entry ({i}, {j}) outside band {}", self.p);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set_row_identity(&mut self, i: usize) {
        let lo = i.saturating_sub(self.p);
        for j in lo..i {
            let s = self.slot(i, j);
            self.data[s] = 0.0;
        }
        for r in i + 1..(i + self.p + 1).min(self.n) {
            let s = self.slot(r, i);
            self.data[s] = 0.0;
        }
        let s = self.slot(i, i);
        self.data[s] = 1.0;
    }

    pub fn add_diagonal(&mut self, delta: f64) {
        for i in 0..self.n {
            let s = self.slot(i, i);
            self.data[s] += delta;
        }
    }

    pub fn diagonal_max_abs(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// In-place Cholesky `A = L Lᵀ`; `None` if the matrix is not positive definite.
    pub fn cholesky(mut self) -> Option<BandCholesky> {
        let (n, p) = (self.n, self.p);
        for i in 0..n {
            let lo_i = i.saturating_sub(p);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(p));
                let mut sum = self.data[self.slot(i, j)];
                for k in lo..j {
                    sum -= self.data[self.slot(i, k)] * self.data[self.slot(j, k)];
                }
                let s = self.slot(i, j);
                if i == j {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    self.data[s] = sum.sqrt();
                } else {
                    self.data[s] = sum / self.data[self.slot(j, j)];
                }
            }
        }
        Some(BandCholesky { l: self })
    }
}

pub(crate) struct BandCholesky {
    l: SymBand,
}

impl BandCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let l = &self.l;
        let (n, p) = (l.n, l.p);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut sum = y[i];
            for k in i.saturating_sub(p)..i {
                sum -= l.data[l.slot(i, k)] * y[k];
            }
            y[i] = sum / l.data[l.slot(i, i)];
        }
        for i in (0..n).rev() {
            let mut sum = y[i];
            for r in i + 1..(i + p + 1).min(n) {
                sum -= l.data[l.slot(r, i)] * y[r];
            }
            y[i] = sum / l.data[l.slot(i, i)];
        }
        y
    }
}
