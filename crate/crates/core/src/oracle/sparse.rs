//! Compressed sparse rows and the two solvers used by the oracle.

use crate::scalar::{CompensatedSum, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub n: usize,
    pub row_start: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<T>,
}

impl<T: Real> Csr<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed and
    /// columns sorted within each row.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_start = vec![0; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                let top = vals.last_mut().expect("a previous entry exists");
                *top = *top + v;
            } else {
                cols.push(c);
                vals.push(v);
                row_start[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_start[i + 1] += row_start[i];
        }
        Csr { n, row_start, cols, vals }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_start[i]..self.row_start[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Vec::with_capacity(self.vals.len());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                t.push((j, i, v));
            }
        }
        Csr::from_triplets(self.n, t)
    }

    pub fn mul_into(&self, x: &[T], out: &mut [T]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationReport<T> {
    pub iterations: usize,
    pub residual: T,
    pub converged: bool,
}

/// Gauss–Seidel sweeps for `x = A x + b`, starting from `x`. The residual is
/// the largest change of an entry in the last sweep.
pub fn gauss_seidel<T: Real>(a: &Csr<T>, b: &[T], x: &mut [T], tol: T, max_sweeps: usize) -> IterationReport<T> {
    let mut residual = T::infinity();
    for sweep in 1..=max_sweeps {
        residual = T::zero();
        for i in 0..a.n {
            let mut diag = T::zero();
            let mut acc = CompensatedSum::new();
            acc.add(b[i]);
            for (j, v) in a.row(i) {
                if j == i {
                    diag = diag + v;
                } else {
                    acc.add(v * x[j]);
                }
            }
            let next = acc.value() / (T::one() - diag);
            residual = residual.max((next - x[i]).abs());
            x[i] = next;
        }
        if residual < tol {
            return IterationReport { iterations: sweep, residual, converged: true };
        }
    }
    IterationReport { iterations: max_sweeps, residual, converged: false }
}

/// Incomplete LU factorisation with the sparsity pattern of the matrix.
/// `L` has a unit diagonal and shares storage with `U`.
pub struct Ilu0<T> {
    lu: Csr<T>,
    diag: Vec<usize>,
}

impl<T: Real> Ilu0<T> {
    /// Fails when a pivot is missing or zero.
    pub fn new(a: &Csr<T>) -> Option<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            *d = (lu.row_start[i]..lu.row_start[i + 1]).find(|&p| lu.cols[p] == i)?;
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_start[i], lu.row_start[i + 1]);
            for p in start..end {
                pos[lu.cols[p]] = p;
            }
            for p in start..end {
                let k = lu.cols[p];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag[k]];
                if pivot == T::zero() {
                    return None;
                }
                let l = lu.vals[p] / pivot;
                lu.vals[p] = l;
                for q in diag[k] + 1..lu.row_start[k + 1] {
                    let target = pos[lu.cols[q]];
                    if target != usize::MAX {
                        lu.vals[target] = lu.vals[target] - l * lu.vals[q];
                    }
                }
            }
            for p in start..end {
                pos[lu.cols[p]] = usize::MAX;
            }
            if lu.vals[diag[i]] == T::zero() {
                return None;
            }
        }
        Some(Ilu0 { lu, diag })
    }

    /// Overwrites `x` with `(LU)^-1 x`.
    pub fn solve_in_place(&self, x: &mut [T]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut acc = x[i];
            for p in lu.row_start[i]..self.diag[i] {
                acc = acc - lu.vals[p] * x[lu.cols[p]];
            }
            x[i] = acc;
        }
        for i in (0..lu.n).rev() {
            let mut acc = x[i];
            for p in self.diag[i] + 1..lu.row_start[i + 1] {
                acc = acc - lu.vals[p] * x[lu.cols[p]];
            }
            x[i] = acc / lu.vals[self.diag[i]];
        }
    }
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).collect::<CompensatedSum<T>>().value().sqrt()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect::<CompensatedSum<T>>().value()
}

/// Restarted GMRES for `A x = b`, right-preconditioned by `m`. Stops when
/// `|b - A x| ≤ tol |b|`.
pub fn gmres<T: Real>(
    a: &Csr<T>,
    b: &[T],
    x: &mut [T],
    m: &Ilu0<T>,
    restart: usize,
    tol: T,
    max_iterations: usize,
) -> IterationReport<T> {
    let n = a.n;
    let b_norm = norm(b);
    if b_norm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return IterationReport { iterations: 0, residual: T::zero(), converged: true };
    }
    let mut r = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut total = 0;
    loop {
        a.mul_into(x, &mut r);
        for (ri, &bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let beta = norm(&r);
        let rel = beta / b_norm;
        if rel <= tol || total >= max_iterations {
            return IterationReport { iterations: total, residual: rel, converged: rel <= tol };
        }
        let mut basis: Vec<Vec<T>> = vec![r.iter().map(|&v| v / beta).collect()];
        let mut h = vec![vec![T::zero(); restart]; restart + 1];
        let (mut cs, mut sn) = (vec![T::zero(); restart], vec![T::zero(); restart]);
        let mut g = vec![T::zero(); restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart && total < max_iterations {
            z.copy_from_slice(&basis[k]);
            m.solve_in_place(&mut z);
            a.mul_into(&z, &mut w);
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(&w, v);
                h[i][k] = hik;
                for (wj, &vj) in w.iter_mut().zip(v) {
                    *wj = *wj - hik * vj;
                }
            }
            let h_next = norm(&w);
            h[k + 1][k] = h_next;
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = T::zero();
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k] * g[k];
            k += 1;
            total += 1;
            if g[k].abs() / b_norm <= tol || h_next == T::zero() {
                break;
            }
            basis.push(w.iter().map(|&v| v / h_next).collect());
        }
        let mut y = vec![T::zero(); k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for j in i + 1..k {
                acc = acc - h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![T::zero(); n];
        for (yi, v) in y.iter().zip(&basis) {
            for (u, &vj) in update.iter_mut().zip(v) {
                *u = *u + *yi * vj;
            }
        }
        m.solve_in_place(&mut update);
        for (xi, u) in x.iter_mut().zip(update) {
            *xi = *xi + u;
        }
    }
}
