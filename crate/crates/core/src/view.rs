//! Measurement and deformation operators, and the per-view observation.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense M-by-N linear measurement operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct LinearMeasurementOp {
    matrix: Array2<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for LinearMeasurementOp {
    type Error = Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        let matrix = Array2::from_shape_vec((r.rows, r.cols), r.data)
            .map_err(|e| Error::dim(format!("measurement matrix shape: {e}")))?;
        LinearMeasurementOp::new(matrix)
    }
}

impl From<LinearMeasurementOp> for MatrixRepr {
    fn from(op: LinearMeasurementOp) -> Self {
        MatrixRepr {
            rows: op.matrix.nrows(),
            cols: op.matrix.ncols(),
            data: op.matrix.iter().copied().collect(),
        }
    }
}

impl LinearMeasurementOp {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::dim(format!(
                "measurement matrix must be nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(LinearMeasurementOp { matrix })
    }

    /// Identity operator (M = N).
    pub fn identity(n: usize) -> Self {
        LinearMeasurementOp {
            matrix: Array2::eye(n),
        }
    }

    /// M-by-N matrix with i.i.d. N(0, 1/N) entries.
    pub fn gaussian<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::dim(format!(
                "measurement matrix must be nonempty, got {m}x{n}"
            )));
        }
        let std = (1.0 / n as f64).sqrt();
        let matrix = Array2::from_shape_fn((m, n), |_| {
            let g: f64 = rng.sample(StandardNormal);
            g * std
        });
        Ok(LinearMeasurementOp { matrix })
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Undersampling rate M/N.
    pub fn rate(&self) -> f64 {
        self.rows() as f64 / self.cols() as f64
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        self.matrix.dot(x)
    }

    pub fn apply_transpose(&self, r: &Array1<f64>) -> Array1<f64> {
        self.matrix.t().dot(r)
    }
}

/// Known deformation operator, usually a hard permutation.
///
/// Permutations are stored as an index map `perm` with the convention
/// `(F x)[dest] = x[perm[dest]]`, equivalent to a matrix with a single 1 per
/// row at column `perm[dest]`. A dense fallback covers non-permutation
/// deformations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DeformationRepr", into = "DeformationRepr")]
pub struct DeformationOp {
    repr: DeformationInner,
}

#[derive(Debug, Clone, PartialEq)]
enum DeformationInner {
    Perm(Vec<usize>),
    Dense(Array2<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeformationRepr {
    Perm { perm: Vec<usize> },
    Dense { rows: usize, cols: usize, data: Vec<f64> },
}

impl TryFrom<DeformationRepr> for DeformationOp {
    type Error = Error;

    fn try_from(r: DeformationRepr) -> Result<Self> {
        match r {
            DeformationRepr::Perm { perm } => DeformationOp::from_permutation(perm),
            DeformationRepr::Dense { rows, cols, data } => {
                let matrix = Array2::from_shape_vec((rows, cols), data)
                    .map_err(|e| Error::dim(format!("deformation matrix shape: {e}")))?;
                DeformationOp::from_dense(matrix)
            }
        }
    }
}

impl From<DeformationOp> for DeformationRepr {
    fn from(op: DeformationOp) -> Self {
        match op.repr {
            DeformationInner::Perm(perm) => DeformationRepr::Perm { perm },
            DeformationInner::Dense(m) => DeformationRepr::Dense {
                rows: m.nrows(),
                cols: m.ncols(),
                data: m.iter().copied().collect(),
            },
        }
    }
}

impl DeformationOp {
    /// Permutation operator from an index map, `(F x)[dest] = x[perm[dest]]`.
    pub fn from_permutation(perm: Vec<usize>) -> Result<Self> {
        let n = perm.len();
        if n == 0 {
            return Err(Error::dim("empty permutation"));
        }
        let mut seen = vec![false; n];
        for &src in &perm {
            if src >= n {
                return Err(Error::dim(format!("permutation entry {src} out of range {n}")));
            }
            if seen[src] {
                return Err(Error::dim(format!("permutation repeats source {src}")));
            }
            seen[src] = true;
        }
        Ok(DeformationOp {
            repr: DeformationInner::Perm(perm),
        })
    }

    pub fn from_dense(matrix: Array2<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::dim(format!(
                "deformation matrix must be square and nonempty, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(DeformationOp {
            repr: DeformationInner::Dense(matrix),
        })
    }

    pub fn identity(n: usize) -> Self {
        DeformationOp {
            repr: DeformationInner::Perm((0..n).collect()),
        }
    }

    pub fn n(&self) -> usize {
        match &self.repr {
            DeformationInner::Perm(p) => p.len(),
            DeformationInner::Dense(m) => m.nrows(),
        }
    }

    pub fn is_permutation(&self) -> bool {
        matches!(self.repr, DeformationInner::Perm(_))
    }

    /// Index map when the operator is a permutation.
    pub fn permutation(&self) -> Option<&[usize]> {
        match &self.repr {
            DeformationInner::Perm(p) => Some(p),
            DeformationInner::Dense(_) => None,
        }
    }

    /// Dense matrix form; materialized on demand for permutations.
    pub fn to_matrix(&self) -> Array2<f64> {
        match &self.repr {
            DeformationInner::Perm(p) => {
                let n = p.len();
                let mut m = Array2::zeros((n, n));
                for (dest, &src) in p.iter().enumerate() {
                    m[(dest, src)] = 1.0;
                }
                m
            }
            DeformationInner::Dense(m) => m.clone(),
        }
    }

    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.repr {
            DeformationInner::Perm(p) => Array1::from_iter(p.iter().map(|&src| x[src])),
            DeformationInner::Dense(m) => m.dot(x),
        }
    }

    pub fn apply_transpose(&self, r: &Array1<f64>) -> Array1<f64> {
        match &self.repr {
            DeformationInner::Perm(p) => {
                let mut out = Array1::zeros(p.len());
                for (dest, &src) in p.iter().enumerate() {
                    out[src] = r[dest];
                }
                out
            }
            DeformationInner::Dense(m) => m.t().dot(r),
        }
    }
}

/// One observed view: the measurement vector with its known operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ViewDataRepr", into = "ViewDataRepr")]
pub struct ViewData {
    y: Array1<f64>,
    a: LinearMeasurementOp,
    f: DeformationOp,
}

#[derive(Serialize, Deserialize)]
struct ViewDataRepr {
    y: Vec<f64>,
    a: LinearMeasurementOp,
    f: DeformationOp,
}

impl TryFrom<ViewDataRepr> for ViewData {
    type Error = Error;

    fn try_from(r: ViewDataRepr) -> Result<Self> {
        ViewData::new(Array1::from_vec(r.y), r.a, r.f)
    }
}

impl From<ViewData> for ViewDataRepr {
    fn from(v: ViewData) -> Self {
        ViewDataRepr {
            y: v.y.to_vec(),
            a: v.a,
            f: v.f,
        }
    }
}

impl ViewData {
    pub fn new(y: Array1<f64>, a: LinearMeasurementOp, f: DeformationOp) -> Result<Self> {
        if y.len() != a.rows() {
            return Err(Error::dim(format!(
                "measurement vector length {} does not match operator rows {}",
                y.len(),
                a.rows()
            )));
        }
        if a.cols() != f.n() {
            return Err(Error::dim(format!(
                "operator columns {} do not match deformation size {}",
                a.cols(),
                f.n()
            )));
        }
        Ok(ViewData { y, a, f })
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn a(&self) -> &LinearMeasurementOp {
        &self.a
    }

    pub fn f(&self) -> &DeformationOp {
        &self.f
    }

    /// Signal length N of the underlying grid.
    pub fn n(&self) -> usize {
        self.a.cols()
    }
}
