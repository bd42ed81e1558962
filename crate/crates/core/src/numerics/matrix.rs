//! Dense row-major matrix plus the small set of kernels the model needs.
//!
//! All arithmetic is f64. Vectors are plain `&[f64]` slices; a matrix with
//! one row doubles as a vector where a named parameter tensor is required.
//! Dimensions are fixed at construction and never change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "from_vec",
                lhs: format!("{rows}x{cols}"),
                rhs: format!("{} values", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// 1 x n matrix; the usual storage for biases and head weights.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Round every entry to the nearest f32 value (kept in f64 storage).
    /// Containers store f32, so models are snapped before saving.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

// ---- kernels -------------------------------------------------------------

/// `y = W x + b`, writing into `out`. Callers guarantee shapes; the checked
/// entry point is [`matvec`].
pub fn matvec_into(w: &[f64], rows: usize, cols: usize, x: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(b.len(), rows);
    debug_assert_eq!(out.len(), rows);
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for c in 0..cols {
            acc += row[c] * x[c];
        }
        out[r] = acc + b[r];
    }
}

pub fn matvec(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols() {
        return Err(Error::Dimension {
            op: "matvec",
            lhs: format!("W is {}x{}", w.rows(), w.cols()),
            rhs: format!("x has length {}", x.len()),
        });
    }
    if b.len() != w.rows() {
        return Err(Error::Dimension {
            op: "matvec",
            lhs: format!("W is {}x{}", w.rows(), w.cols()),
            rhs: format!("b has length {}", b.len()),
        });
    }
    let mut out = vec![0.0; w.rows()];
    matvec_into(w.as_slice(), w.rows(), w.cols(), x, b, &mut out);
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "dot",
            lhs: format!("length {}", a.len()),
            rhs: format!("length {}", b.len()),
        });
    }
    Ok(dot_unchecked(a, b))
}

pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Cosine similarity. Either input being the zero vector yields 0.0 rather
/// than a division by zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op: "cosine",
            lhs: format!("length {}", a.len()),
            rhs: format!("length {}", b.len()),
        });
    }
    let na = dot_unchecked(a, a).sqrt();
    let nb = dot_unchecked(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot_unchecked(a, b) / (na * nb))
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// Numerically stable logistic function; never returns NaN for finite input
/// and never overflows for large |z|.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn matvec_identity() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = matvec(&w, &[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y, vec![3.0, 4.0]);
    }

    #[test]
    fn matvec_known_value() {
        // [[1,2],[3,4]] * [5,6] + [1,-1] = [18, 38]
        let w = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = matvec(&w, &[5.0, 6.0], &[1.0, -1.0]).unwrap();
        assert_eq!(y, vec![18.0, 38.0]);
    }

    #[test]
    fn matvec_shape_error_names_both_sides() {
        let w = Matrix::zeros(3, 4);
        let err = matvec(&w, &[1.0; 5], &[0.0; 3]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x4"), "{msg}");
        assert!(msg.contains("length 5"), "{msg}");
    }

    #[test]
    fn dot_and_cosine() {
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 32.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());

        // cos of parallel vectors is 1, antiparallel -1, orthogonal 0.
        assert_relative_eq!(cosine(&[2.0, 0.0], &[5.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(cosine(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(), -1.0);
        assert_relative_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn leaky_relu_branches() {
        assert_eq!(leaky_relu(2.5, 0.01), 2.5);
        assert_eq!(leaky_relu(-2.0, 0.01), -0.02);
        assert_eq!(leaky_relu(0.0, 0.01), 0.0);
    }

    #[test]
    fn sigmoid_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert!(sigmoid(-800.0).is_finite());
        assert_relative_eq!(sigmoid(2.0), 1.0 / (1.0 + (-2.0f64).exp()));
    }

    #[test]
    fn f32_rounding_is_idempotent() {
        let mut m = Matrix::from_vec(1, 3, vec![0.1, -1.7e-3, 12345.6789]).unwrap();
        m.round_to_f32();
        let once = m.clone();
        m.round_to_f32();
        assert_eq!(m, once);
    }
}
