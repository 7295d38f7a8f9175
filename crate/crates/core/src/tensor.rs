//! Flat parameter storage and the handful of dense kernels the models need.
//!
//! Every model keeps all of its parameters in a single `Vec<f64>`; a [`Seg`]
//! names a row-major block inside it. Gradients use the same layout, so the
//! optimizer, the checkpoint writer and the finite-difference checker all see
//! one flat vector per model.

use std::ops::Range;

/// A row-major `rows x cols` block at `offset` inside a flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seg {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Seg {
    pub fn len(self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn range(self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn row_range(self, r: usize) -> Range<usize> {
        debug_assert!(r < self.rows, "row {r} out of {}", self.rows);
        let start = self.offset + r * self.cols;
        start..start + self.cols
    }

    pub fn of(self, data: &[f64]) -> &[f64] {
        &data[self.range()]
    }

    pub fn of_mut(self, data: &mut [f64]) -> &mut [f64] {
        &mut data[self.range()]
    }

    pub fn row(self, data: &[f64], r: usize) -> &[f64] {
        &data[self.row_range(r)]
    }

    pub fn row_mut(self, data: &mut [f64], r: usize) -> &mut [f64] {
        &mut data[self.row_range(r)]
    }

    /// Scalar segments are stored as a 1x1 block.
    pub fn scalar(self, data: &[f64]) -> f64 {
        data[self.offset]
    }
}

/// Allocates consecutive segments and remembers their names.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Layout {
    entries: Vec<(String, Seg)>,
    total: usize,
}

impl Layout {
    pub fn push(&mut self, name: &str, rows: usize, cols: usize) -> Seg {
        let seg = Seg {
            offset: self.total,
            rows,
            cols,
        };
        self.total += seg.len();
        self.entries.push((name.to_string(), seg));
        seg
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn entries(&self) -> &[(String, Seg)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<Seg> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| *s)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` with `W` row-major `out.len() x x.len()`.
pub fn matvec(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += W^T g` with `W` row-major `g.len() x out.len()`.
pub fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            axpy(*gi, row, out);
        }
    }
}

/// `W += g x^T` with `W` row-major `g.len() x x.len()`.
pub fn outer_acc(g: &[f64], x: &[f64], w: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), g.len() * cols);
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            axpy(*gi, x, row);
        }
    }
}

/// Numerically stable `log(sum(exp(xs)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place max-subtracted softmax.
pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in xs.iter_mut() {
        *x /= z;
    }
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_allocates_disjoint_segments() {
        let mut l = Layout::default();
        let a = l.push("a", 2, 3);
        let b = l.push("b", 1, 1);
        assert_eq!(a.range(), 0..6);
        assert_eq!(b.range(), 6..7);
        assert_eq!(l.total(), 7);
        assert_eq!(l.get("b"), Some(b));
        assert_eq!(a.row_range(1), 3..6);
    }

    #[test]
    fn matvec_and_transpose_agree() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = [0.0; 2];
        matvec(&w, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
        let mut back = [0.0; 3];
        matvec_t_acc(&w, &[1.0, 1.0], &mut back);
        assert_eq!(back, [5.0, 7.0, 9.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }
}
