use crate::error::{Error, Result};

/// Dense row-major matrix of doubles.
///
/// Column vectors are `n x 1`; a batch of column vectors is stored as an
/// `n x b` matrix with one series per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn column(values: &[f64]) -> Self {
        Tensor {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn row(values: &[f64]) -> Self {
        Tensor {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    /// Builds an `rows x cols` tensor from one slice per column.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::ShapeMismatch {
                    op: "from_columns",
                    lhs: (rows, cols),
                    rhs: (col.len(), 1),
                });
            }
            for (i, v) in col.iter().enumerate() {
                data[i * cols + j] = *v;
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    /// The single value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.shape(), (1, 1));
        self.data[0]
    }

    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert_eq!(self.shape(), other.shape());
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; m * n];
        if n <= NARROW {
            // batch-sized right-hand side: contiguous dot products per column
            let rt = rhs.transpose();
            for i in 0..m {
                let a_row = &self.data[i * k..(i + 1) * k];
                for j in 0..n {
                    out[i * n + j] = dot(a_row, &rt.data[j * k..(j + 1) * k]);
                }
            }
        } else {
            for i in 0..m {
                let a_row = &self.data[i * k..(i + 1) * k];
                let o_row = &mut out[i * n..(i + 1) * n];
                for (p, &a) in a_row.iter().enumerate() {
                    if a != 0.0 {
                        axpy(o_row, a, &rhs.data[p * n..(p + 1) * n]);
                    }
                }
            }
        }
        Ok(Tensor {
            rows: m,
            cols: n,
            data: out,
        })
    }

    /// `self * rhs^T`, accumulated into `acc`.
    pub(crate) fn matmul_bt_into(&self, rhs: &Tensor, acc: &mut Tensor) {
        let (m, n, k) = (self.rows, rhs.rows, self.cols);
        debug_assert_eq!(k, rhs.cols);
        debug_assert_eq!(acc.shape(), (m, n));
        if k <= NARROW {
            let rt = rhs.transpose();
            for i in 0..m {
                let o_row = &mut acc.data[i * n..(i + 1) * n];
                for p in 0..k {
                    let a = self.data[i * k + p];
                    if a != 0.0 {
                        axpy(o_row, a, &rt.data[p * n..(p + 1) * n]);
                    }
                }
            }
        } else {
            for i in 0..m {
                let a_row = &self.data[i * k..(i + 1) * k];
                for j in 0..n {
                    acc.data[i * n + j] += dot(a_row, &rhs.data[j * k..(j + 1) * k]);
                }
            }
        }
    }

    /// `self^T * rhs`, accumulated into `acc`.
    pub(crate) fn matmul_at_into(&self, rhs: &Tensor, acc: &mut Tensor) {
        let (k, m, n) = (self.rows, self.cols, rhs.cols);
        debug_assert_eq!(k, rhs.rows);
        debug_assert_eq!(acc.shape(), (m, n));
        if n <= NARROW {
            let mut t = vec![0.0; n * m];
            for p in 0..k {
                let a_row = &self.data[p * m..(p + 1) * m];
                for j in 0..n {
                    let b = rhs.data[p * n + j];
                    if b != 0.0 {
                        axpy(&mut t[j * m..(j + 1) * m], b, a_row);
                    }
                }
            }
            for i in 0..m {
                for j in 0..n {
                    acc.data[i * n + j] += t[j * m + i];
                }
            }
        } else {
            for p in 0..k {
                let a_row = &self.data[p * m..(p + 1) * m];
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (i, &a) in a_row.iter().enumerate() {
                    if a != 0.0 {
                        axpy(&mut acc.data[i * n..(i + 1) * n], a, b_row);
                    }
                }
            }
        }
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.rows {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                lhs: self.shape(),
                rhs: (start, end),
            });
        }
        Ok(Tensor {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }
}
/// Right-hand sides at most this wide are treated as a batch of columns.
const NARROW: usize = 16;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

