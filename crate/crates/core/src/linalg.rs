//! Sparse row storage and the linear solves used by policy iteration.
//!
//! Policy matrices are M-matrices (non-positive off-diagonal, weakly diagonally
//! dominant), so ILU(0)-preconditioned BiCGSTAB converges quickly; a dense LU
//! is the fallback when it stalls on small systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const DENSE_LIMIT: usize = 4000;

/// Compressed sparse rows with sorted column indices and an explicit diagonal.
#[derive(Clone, Debug, Default)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<usize>,
}

impl CsrMatrix {
    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        let mut indptr = Vec::with_capacity(n + 1);
        indptr.push(0);
        CsrMatrix {
            n: 0,
            indptr,
            indices: Vec::with_capacity(nnz),
            values: Vec::with_capacity(nnz),
            diag: Vec::with_capacity(n),
        }
    }

    /// Appends row `self.n` from unsorted entries; duplicates are summed.
    pub fn push_row(&mut self, entries: &mut Vec<(usize, f64)>) {
        let row = self.n;
        entries.push((row, 0.0));
        entries.sort_unstable_by_key(|e| e.0);
        let start = self.indices.len();
        for &(j, v) in entries.iter() {
            if self.indices.len() > start && *self.indices.last().unwrap() == j {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(j);
                self.values.push(v);
            }
        }
        let d = start + self.indices[start..].binary_search(&row).unwrap();
        self.diag.push(d);
        self.indptr.push(self.indices.len());
        self.n += 1;
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            y[i] = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    /// `max_i |(Ax - b)_i|`.
    pub fn residual_inf(&self, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.mul(x, &mut y);
        y.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

struct Ilu0 {
    lu: Vec<f64>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Ilu0> {
        let mut lu = a.values.clone();
        let mut marker = vec![usize::MAX; a.n];
        for i in 0..a.n {
            let (lo, hi) = (a.indptr[i], a.indptr[i + 1]);
            for p in lo..hi {
                marker[a.indices[p]] = p;
            }
            for p in lo..a.diag[i] {
                let k = a.indices[p];
                let pivot = lu[a.diag[k]];
                if pivot == 0.0 {
                    return Err(Error::LinearSolve(format!("zero pivot in ILU(0) at row {k}")));
                }
                lu[p] /= pivot;
                let lik = lu[p];
                for q in a.diag[k] + 1..a.indptr[k + 1] {
                    let m = marker[a.indices[q]];
                    if m != usize::MAX {
                        lu[m] -= lik * lu[q];
                    }
                }
            }
            for p in lo..hi {
                marker[a.indices[p]] = usize::MAX;
            }
            if lu[a.diag[i]] == 0.0 {
                return Err(Error::LinearSolve(format!("zero pivot in ILU(0) at row {i}")));
            }
        }
        Ok(Ilu0 { lu })
    }

    fn solve(&self, a: &CsrMatrix, r: &[f64], z: &mut [f64]) {
        for i in 0..a.n {
            let mut s = r[i];
            for p in a.indptr[i]..a.diag[i] {
                s -= self.lu[p] * z[a.indices[p]];
            }
            z[i] = s;
        }
        for i in (0..a.n).rev() {
            let mut s = z[i];
            for p in a.diag[i] + 1..a.indptr[i + 1] {
                s -= self.lu[p] * z[a.indices[p]];
            }
            z[i] = s / self.lu[a.diag[i]];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<bool> {
    let n = a.n;
    let pre = Ilu0::new(a)?;
    let mut r = vec![0.0; n];
    a.mul(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if inf_norm(&r) <= tol {
        return Ok(true);
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Ok(false);
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        pre.solve(a, &p, &mut phat);
        a.mul(&phat, &mut v);
        let den = dot(&r0, &v);
        if den == 0.0 {
            return Ok(false);
        }
        alpha = rho / den;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if inf_norm(&s) <= tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(true);
        }
        pre.solve(a, &s, &mut shat);
        a.mul(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Ok(false);
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if inf_norm(&r) <= tol {
            return Ok(true);
        }
    }
    Ok(false)
}

fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let lu = a.to_dense().lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|v| v.as_slice().to_vec())
        .ok_or_else(|| Error::LinearSolve("singular policy matrix".into()))
}

/// Solves `Ax = b` to `|Ax - b|_inf <= tol`, starting from `x0`.
pub fn solve(a: &CsrMatrix, b: &[f64], x0: &[f64], tol: f64) -> Result<Vec<f64>> {
    let mut x = x0.to_vec();
    // Iterate somewhat below the target so rounding in the final update does not matter.
    let inner = 0.25 * tol;
    let ok = bicgstab(a, b, &mut x, inner, 2000).unwrap_or_default();
    if ok && x.iter().all(|v| v.is_finite()) && a.residual_inf(&x, b) <= tol {
        return Ok(x);
    }
    if a.n <= DENSE_LIMIT {
        let mut x = dense_solve(a, b)?;
        // one step of iterative refinement
        let mut r = vec![0.0; a.n];
        a.mul(&x, &mut r);
        for i in 0..a.n {
            r[i] = b[i] - r[i];
        }
        if let Ok(dx) = dense_solve(a, &r) {
            for i in 0..a.n {
                x[i] += dx[i];
            }
        }
        let res = a.residual_inf(&x, b);
        if res <= tol && x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
        return Err(Error::LinearSolve(format!("dense solve residual {res:.3e} above {tol:.3e}")));
    }
    Err(Error::LinearSolve(format!(
        "BiCGSTAB did not reach {tol:.3e} on a system of size {}",
        a.n
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize, shift: f64) -> CsrMatrix {
        let mut a = CsrMatrix::with_capacity(n, 3 * n);
        for i in 0..n {
            let mut row = vec![(i, 2.0 + shift)];
            if i > 0 {
                row.push((i - 1, -1.0));
            }
            if i + 1 < n {
                row.push((i + 1, -1.0));
            }
            a.push_row(&mut row);
        }
        a
    }

    #[test]
    fn duplicates_are_summed_and_diagonal_inserted() {
        let mut a = CsrMatrix::with_capacity(2, 4);
        a.push_row(&mut vec![(1, 1.0), (1, 2.0)]);
        a.push_row(&mut vec![(1, 5.0)]);
        assert_eq!(a.row(0), (&[0usize, 1][..], &[0.0, 3.0][..]));
        assert_eq!(a.row(1), (&[1usize][..], &[5.0][..]));
    }

    #[test]
    fn tridiagonal_solve_matches_dense() {
        let a = laplacian(50, 0.1);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = solve(&a, &b, &vec![0.0; 50], 1e-12).unwrap();
        let y = dense_solve(&a, &b).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn nonsymmetric_dense_rows() {
        // M-matrix with a long-range coupling row like an implicit impulse.
        let n = 30;
        let mut a = CsrMatrix::with_capacity(n, 4 * n);
        for i in 0..n {
            let mut row = vec![(i, 3.0)];
            if i > 0 {
                row.push((i - 1, -1.5));
            }
            if i + 1 < n {
                row.push((i + 1, -0.5));
            }
            if i % 7 == 0 && i != 15 {
                row = vec![(i, 1.0), (15, -0.6), (16, -0.4)];
            }
            a.push_row(&mut row);
        }
        let b = vec![1.0; n];
        let x = solve(&a, &b, &vec![0.0; n], 1e-13).unwrap();
        assert!(a.residual_inf(&x, &b) <= 1e-13);
    }

    #[test]
    fn singular_system_is_an_error() {
        let mut a = CsrMatrix::with_capacity(2, 4);
        a.push_row(&mut vec![(0, 1.0), (1, -1.0)]);
        a.push_row(&mut vec![(0, -1.0), (1, 1.0)]);
        assert!(solve(&a, &[1.0, 0.0], &[0.0, 0.0], 1e-12).is_err());
    }
}
