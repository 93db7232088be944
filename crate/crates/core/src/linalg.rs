//! Small dense helpers over `nalgebra` for the 2..10 dimensional matrices
//! that show up in the fixed-point, Hessian and Riccati computations.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Row-major matrix for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rows(pub Vec<Vec<f64>>);

impl From<&Matrix> for Rows {
    fn from(m: &Matrix) -> Self {
        Rows(
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
        )
    }
}

impl Rows {
    pub fn to_matrix(&self) -> Matrix {
        let n = self.0.len();
        let m = self.0.first().map_or(0, Vec::len);
        DMatrix::from_fn(n, m, |i, j| self.0[i][j])
    }
}

pub fn from_row_slice(n: usize, data: &[f64]) -> Matrix {
    DMatrix::from_row_slice(n, n, data)
}

/// Eigenvalues of a general real square matrix, sorted by descending real
/// part. Closed form for 2x2, Schur decomposition otherwise.
pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    let n = m.nrows();
    let mut out = if n == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            let s = disc.sqrt();
            vec![Complex::new(tr / 2.0 + s, 0.0), Complex::new(tr / 2.0 - s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            vec![Complex::new(tr / 2.0, s), Complex::new(tr / 2.0, -s)]
        }
    } else {
        m.clone().complex_eigenvalues().iter().copied().collect()
    };
    out.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    out
}

/// Unit vector spanning the (numerical) null space of `m - lambda I`,
/// for a real eigenvalue `lambda`. The sign is fixed so the largest-magnitude
/// component is positive.
pub fn real_eigenvector(m: &Matrix, lambda: f64) -> Vec<f64> {
    let n = m.nrows();
    let shifted = m - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let mut v: Vec<f64> = v_t.row(k).iter().copied().collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let pivot = v
        .iter()
        .copied()
        .fold(0.0_f64, |best, x| if x.abs() > best.abs() { x } else { best });
    let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
    for x in &mut v {
        *x *= sign / norm;
    }
    v
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Counts of (positive, negative) eigenvalues of a symmetric matrix.
pub fn signature(m: &Matrix) -> (usize, usize) {
    let vals = symmetric_eigenvalues(m);
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    let pos = vals.iter().filter(|&&v| v > 1e-12 * scale).count();
    let neg = vals.iter().filter(|&&v| v < -1e-12 * scale).count();
    (pos, neg)
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Solves `A X + X B = C` for square `A`, `B`, `C` via the vectorized
/// `(I (x) A + B^T (x) I) vec X = vec C` system.
pub fn solve_sylvester(a: &Matrix, b: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let system = eye.kronecker(a) + b.transpose().kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numerical("singular Sylvester operator"))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Orthonormal basis of the orthogonal complement of `normal`, from
/// Gram-Schmidt over the coordinate vectors in index order. Columns of the
/// returned `n x (n-1)` matrix.
pub fn complement_basis(normal: &[f64]) -> Matrix {
    let n = normal.len();
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_column_slice(normal)];
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    DMatrix::from_columns(&basis[1..])
}
