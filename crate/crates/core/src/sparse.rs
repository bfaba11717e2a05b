//! Compressed-sparse-row matrices and preconditioned conjugate gradients.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed in input order; explicit zeros are kept in the pattern.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= n_rows || j >= n_cols) {
            return Err(Error::InvalidArgument(format!(
                "entry ({i}, {j}) outside a {n_rows}x{n_cols} matrix"
            )));
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (i, j, v) = triplets[k];
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(j, &v)| (i, j, v)))
            .collect();
        Self::from_triplets(rows.len(), n_cols, &triplets).expect("dense rows are in range")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_cols {
            return Err(Error::DimensionMismatch {
                expected: self.n_cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.n_rows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x`, each row summed in column order. Dimensions are the
    /// caller's responsibility.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `a * self + b * other` for two matrices with identical patterns.
    pub fn linear_combination(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.row_ptr != other.row_ptr || self.col_idx != other.col_idx {
            return Err(Error::InvalidArgument("sparsity patterns differ".into()));
        }
        let mut out = self.clone();
        for (v, w) in out.values.iter_mut().zip(&other.values) {
            *v = a * *v + b * w;
        }
        Ok(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Coordinate dump, one `i j value` line per stored entry.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                let _ = writeln!(s, "{i} {j} {v:.17e}");
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
    /// Zero fill-in incomplete Cholesky on the sparsity pattern of `A`.
    IncompleteCholesky,
}

/// A preconditioner set up for one matrix, reusable across solves.
#[derive(Debug, Clone)]
pub enum PreparedPreconditioner {
    /// Multiplication by a stored inverse diagonal.
    Diagonal(Vec<f64>),
    /// Incomplete factor `A ~ L L^T`: strict lower part of `L`, its
    /// transpose, and the inverted diagonal.
    Cholesky {
        lower: CsrMatrix,
        upper: CsrMatrix,
        inv_diag: Vec<f64>,
    },
}

impl PreparedPreconditioner {
    pub fn new(a: &CsrMatrix, kind: Preconditioner) -> Result<Self> {
        let n = a.n_rows();
        Ok(match kind {
            Preconditioner::None => Self::Diagonal(vec![1.0; n]),
            Preconditioner::Jacobi => {
                Self::Diagonal(a.diagonal().iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect())
            }
            Preconditioner::IncompleteCholesky => {
                let l = incomplete_cholesky(a)?;
                let mut strict = Vec::with_capacity(l.nnz());
                let mut inv_diag = vec![0.0; n];
                for i in 0..n {
                    for (j, v) in l.row(i) {
                        if j == i {
                            inv_diag[i] = 1.0 / v;
                        } else {
                            strict.push((i, j, v));
                        }
                    }
                }
                let lower = CsrMatrix::from_triplets(n, n, &strict)?;
                let transposed: Vec<(usize, usize, f64)> = strict.iter().map(|&(i, j, v)| (j, i, v)).collect();
                let upper = CsrMatrix::from_triplets(n, n, &transposed)?;
                Self::Cholesky { lower, upper, inv_diag }
            }
        })
    }

    /// `z = P^{-1} r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Self::Diagonal(d) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                    *zi = ri * di;
                }
            }
            Self::Cholesky { lower, upper, inv_diag } => {
                let n = r.len();
                for i in 0..n {
                    let mut s = r[i];
                    for k in lower.row_ptr[i]..lower.row_ptr[i + 1] {
                        s -= lower.values[k] * z[lower.col_idx[k]];
                    }
                    z[i] = s * inv_diag[i];
                }
                for i in (0..n).rev() {
                    let mut s = z[i] * inv_diag[i];
                    for k in upper.row_ptr[i]..upper.row_ptr[i + 1] {
                        s -= upper.values[k] * z[upper.col_idx[k]] * inv_diag[i];
                    }
                    z[i] = s;
                }
            }
        }
    }
}

/// IC(0): the lower triangle of `A` overwritten by the incomplete factor.
fn incomplete_cholesky(a: &CsrMatrix) -> Result<CsrMatrix> {
    let n = a.n_rows();
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    for i in 0..n {
        let mut has_diag = false;
        for (j, v) in a.row(i) {
            if j <= i {
                col_idx.push(j);
                values.push(v);
                has_diag |= j == i;
            }
        }
        if !has_diag {
            return Err(Error::InvalidArgument(format!("missing diagonal entry in row {i}")));
        }
        row_ptr.push(col_idx.len());
    }
    // Row-wise left-looking factorization: L_ij = (a_ij - sum_k L_ik L_jk) / L_jj.
    for i in 0..n {
        let (si, ei) = (row_ptr[i], row_ptr[i + 1]);
        for p in si..ei {
            let j = col_idx[p];
            let (sj, ej) = (row_ptr[j], row_ptr[j + 1]);
            let (mut a_pos, mut b_pos) = (si, sj);
            let mut s = values[p];
            while a_pos < p && b_pos < ej - 1 {
                let (ca, cb) = (col_idx[a_pos], col_idx[b_pos]);
                if ca == cb {
                    s -= values[a_pos] * values[b_pos];
                    a_pos += 1;
                    b_pos += 1;
                } else if ca < cb {
                    a_pos += 1;
                } else {
                    b_pos += 1;
                }
            }
            if j == i {
                if s <= 0.0 {
                    return Err(Error::InvalidArgument(format!("incomplete Cholesky breakdown in row {i}")));
                }
                values[p] = s.sqrt();
            } else {
                values[p] = s / values[ej - 1];
            }
        }
    }
    Ok(CsrMatrix {
        n_rows: n,
        n_cols: n,
        row_ptr,
        col_idx,
        values,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// `None` means `10 * n`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iter: None,
            precond: Preconditioner::Jacobi,
        }
    }
}

impl CgOptions {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `|Ax - b| / |b|`.
    pub residual: f64,
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cg_solve(a: &CsrMatrix, b: &[f64], opts: &CgOptions) -> Result<CgOutcome> {
    cg_solve_from(a, b, None, opts)
}

/// Preconditioned CG started from `x0` (zero when `None`). Convergence is
/// declared on the true residual `|b - A x| <= rel_tol |b|`.
pub fn cg_solve_from(a: &CsrMatrix, b: &[f64], x0: Option<&[f64]>, opts: &CgOptions) -> Result<CgOutcome> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(Error::InvalidArgument("CG needs a square matrix".into()));
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    let precond = PreparedPreconditioner::new(a, opts.precond)?;
    cg_prepared(a, b, x0, &precond, opts)
}

/// CG with a preconditioner prepared once for `a`; `opts.precond` is ignored.
pub fn cg_prepared(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    precond: &PreparedPreconditioner,
    opts: &CgOptions,
) -> Result<CgOutcome> {
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = opts.rel_tol * b_norm;

    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(x0) => return Err(Error::DimensionMismatch { expected: n, got: x0.len() }),
        None => vec![0.0; n],
    };
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], ap: &mut [f64]| {
        a.spmv_into(x, ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        norm(r)
    };

    let mut res = true_residual(&x, &mut r, &mut ap);
    let mut iterations = 0;
    // Restart loop: the recursive residual can drift from the true one.
    while res > target && iterations < max_iter {
        let mut z = vec![0.0; n];
        precond.apply(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            a.spmv_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::SolverFailure {
                    iterations,
                    residual: res / b_norm,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if norm(&r) <= target {
                break;
            }
            precond.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        res = true_residual(&x, &mut r, &mut ap);
    }
    if res > target {
        return Err(Error::SolverFailure {
            iterations,
            residual: res / b_norm,
        });
    }
    Ok(CgOutcome {
        x,
        iterations,
        residual: res / b_norm,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn two_by_two() -> CsrMatrix {
        CsrMatrix::from_dense(&[vec![4.0, 1.0], vec![1.0, 3.0]])
    }

    #[test]
    fn spmv_examples() {
        let x = [1.5, -2.0, 0.25];
        assert_eq!(CsrMatrix::identity(3).spmv(&x).unwrap(), x.to_vec());
        let zero = CsrMatrix::from_triplets(3, 3, &[]).unwrap();
        assert_eq!(zero.spmv(&x).unwrap(), vec![0.0; 3]);
        assert_eq!(two_by_two().spmv(&[1.0, 2.0]).unwrap(), vec![6.0, 7.0]);
        assert!(matches!(two_by_two().spmv(&x), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn triplets_sum_duplicates_and_keep_zeros() {
        let m = CsrMatrix::from_triplets(2, 2, &[(1, 0, 2.0), (0, 0, 1.0), (1, 0, 0.5), (0, 1, 0.0)]).unwrap();
        assert_eq!(m.row_ptr(), &[0, 2, 3]);
        assert_eq!(m.col_idx(), &[0, 1, 0]);
        assert_eq!(m.get(1, 0), 2.5);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn cg_examples() {
        let b = [0.3, -1.2, 7.0, 2.5];
        let out = cg_solve(&CsrMatrix::identity(4), &b, &CgOptions::default()).unwrap();
        assert!(out.iterations <= 1);
        assert_eq!(out.x, b.to_vec());

        let out = cg_solve(&two_by_two(), &[0.0, 0.0], &CgOptions::default()).unwrap();
        assert_eq!(out.x, vec![0.0, 0.0]);

        for precond in [
            Preconditioner::None,
            Preconditioner::Jacobi,
            Preconditioner::IncompleteCholesky,
        ] {
            let opts = CgOptions {
                precond,
                ..CgOptions::default()
            };
            let out = cg_solve(&two_by_two(), &[1.0, 2.0], &opts).unwrap();
            assert_abs_diff_eq!(out.x[0], 1.0 / 11.0, epsilon = 1e-12);
            assert_abs_diff_eq!(out.x[1], 7.0 / 11.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cg_reports_failure_with_residual() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 0.0, 0.0], vec![0.0, 10.0, 0.0], vec![0.0, 0.0, 100.0]]);
        let opts = CgOptions {
            rel_tol: 1e-14,
            max_iter: Some(1),
            precond: Preconditioner::None,
        };
        match cg_solve(&a, &[1.0, 1.0, 1.0], &opts) {
            Err(Error::SolverFailure { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 1e-14);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn coordinate_dump() {
        let text = two_by_two().to_coordinate_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("0 0 4.0"));
    }

    /// Dense Gaussian elimination with partial pivoting, used as oracle.
    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            b.swap(c, p);
            for r in c + 1..n {
                let f = a[r][c] / a[c][c];
                for k in c..n {
                    a[r][k] -= f * a[c][k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    fn spd_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..=50).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(bm, rhs)| {
                    let mut a = vec![vec![0.0; n]; n];
                    for i in 0..n {
                        for j in 0..n {
                            a[i][j] = (0..n).map(|k| bm[k * n + i] * bm[k * n + j]).sum::<f64>();
                        }
                        a[i][i] += 1.0;
                    }
                    (a, rhs)
                })
        })
    }

    #[test]
    fn incomplete_cholesky_is_exact_on_a_full_pattern() {
        let a = vec![vec![4.0, 1.0, 0.5], vec![1.0, 3.0, 0.2], vec![0.5, 0.2, 2.0]];
        let m = CsrMatrix::from_dense(&a);
        let p = PreparedPreconditioner::new(&m, Preconditioner::IncompleteCholesky).unwrap();
        let b = [1.0, -2.0, 0.5];
        let mut z = [0.0; 3];
        p.apply(&b, &mut z);
        let exact = dense_solve(a, b.to_vec());
        for (zi, ei) in z.iter().zip(&exact) {
            assert_abs_diff_eq!(zi, ei, epsilon = 1e-14);
        }
        let opts = CgOptions {
            precond: Preconditioner::IncompleteCholesky,
            ..CgOptions::default()
        };
        assert!(cg_solve(&m, &b, &opts).unwrap().iterations <= 1);
    }

    #[test]
    fn incomplete_cholesky_breakdown_is_reported() {
        let m = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(PreparedPreconditioner::new(&m, Preconditioner::IncompleteCholesky).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn cg_matches_direct_solve((a, b) in spd_problem()) {
            let m = CsrMatrix::from_dense(&a);
            prop_assert!(m.is_symmetric(1e-14));
            let out = cg_solve(&m, &b, &CgOptions::default()).unwrap();
            let ic = CgOptions { precond: Preconditioner::IncompleteCholesky, ..CgOptions::default() };
            let out_ic = cg_solve(&m, &b, &ic).unwrap();
            let r: Vec<f64> = m.spmv(&out.x).unwrap().iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
            prop_assert!(norm(&r) <= 1e-10 * norm(&b));
            let exact = dense_solve(a, b);
            for ((xi, yi), ei) in out.x.iter().zip(&out_ic.x).zip(&exact) {
                prop_assert!((xi - ei).abs() <= 1e-8 * (1.0 + ei.abs()));
                prop_assert!((yi - ei).abs() <= 1e-8 * (1.0 + ei.abs()));
            }
        }

        #[test]
        fn spmv_is_linear(
            (a, x) in spd_problem(),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            seed in proptest::collection::vec(-5.0f64..5.0, 50),
        ) {
            let m = CsrMatrix::from_dense(&a);
            let y = &seed[..x.len()];
            let combo: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| alpha * xi + beta * yi).collect();
            let lhs = m.spmv(&combo).unwrap();
            let ax = m.spmv(&x).unwrap();
            let ay = m.spmv(y).unwrap();
            let scale = norm(&ax).max(norm(&ay)).max(1.0) * (alpha.abs() + beta.abs()).max(1.0);
            for i in 0..lhs.len() {
                prop_assert!((lhs[i] - (alpha * ax[i] + beta * ay[i])).abs() <= 1e-12 * scale);
            }
        }
    }
}
