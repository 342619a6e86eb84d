//! Linear forward operators with exact adjoints.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compressed-row sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Build from coordinate triplets; duplicate entries are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument(format!(
                    "entry ({r}, {c}) outside a {rows}x{cols} matrix"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|r| {
                (self.indptr[r]..self.indptr[r + 1])
                    .map(|i| self.values[i] * x[self.indices[i]])
                    .sum()
            })
            .collect()
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate().take(self.rows) {
            for i in self.indptr[r]..self.indptr[r + 1] {
                out[self.indices[i]] += self.values[i] * yr;
            }
        }
        out
    }

    /// max column sum times max row sum of |a_ij|; bounds the squared spectral norm.
    fn schur_bound(&self) -> f64 {
        let mut col_sums = vec![0.0f64; self.cols];
        let mut max_row = 0.0f64;
        for r in 0..self.rows {
            let mut s = 0.0;
            for i in self.indptr[r]..self.indptr[r + 1] {
                s += self.values[i].abs();
                col_sums[self.indices[i]] += self.values[i].abs();
            }
            max_row = max_row.max(s);
        }
        max_row * col_sums.into_iter().fold(0.0, f64::max)
    }

    /// Parse a Matrix Market `coordinate real general` file.
    pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_matrix_market(&text)
    }

    pub fn parse_matrix_market(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("matrix market: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
        let fields: Vec<String> = header.split_whitespace().map(str::to_lowercase).collect();
        if fields.len() != 5
            || fields[0] != "%%matrixmarket"
            || fields[1] != "matrix"
            || fields[2] != "coordinate"
            || !(fields[3] == "real" || fields[3] == "integer")
            || fields[4] != "general"
        {
            return Err(bad(format!("unsupported header `{header}`")));
        }
        let mut body = lines.filter(|l| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('%')
        });
        let size = body.next().ok_or_else(|| bad("missing size line".into()))?;
        let dims: Vec<usize> = size
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("size line `{size}`: {e}")))?;
        let [rows, cols, nnz] = dims[..] else {
            return Err(bad(format!("size line `{size}` must hold 3 integers")));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for line in body {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad(format!("entry line `{line}`")));
            }
            let r: usize = parts[0]
                .parse()
                .map_err(|e| bad(format!("`{line}`: {e}")))?;
            let c: usize = parts[1]
                .parse()
                .map_err(|e| bad(format!("`{line}`: {e}")))?;
            let v: f64 = parts[2]
                .parse()
                .map_err(|e| bad(format!("`{line}`: {e}")))?;
            if r == 0 || c == 0 {
                return Err(bad(format!("indices are 1-based: `{line}`")));
            }
            triplets.push((r - 1, c - 1, v));
        }
        if triplets.len() != nnz {
            return Err(bad(format!(
                "declared {nnz} entries, found {}",
                triplets.len()
            )));
        }
        Self::from_triplets(rows, cols, &triplets)
    }

    pub fn write_matrix_market(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::fmt::Write as _;
        let mut s = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(s, "{} {} {}", self.rows, self.cols, self.nnz());
        for r in 0..self.rows {
            for i in self.indptr[r]..self.indptr[r + 1] {
                let _ = writeln!(s, "{} {} {:e}", r + 1, self.indices[i] + 1, self.values[i]);
            }
        }
        fs::write(path.as_ref(), s).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Convolution kernel, applied as zero-padded "same" cross-correlation.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    /// Row-major `height x width` kernel; both sizes odd.
    Full {
        height: usize,
        width: usize,
        weights: Vec<f64>,
    },
    /// Outer product `vertical ⊗ horizontal`; both lengths odd.
    Separable {
        vertical: Vec<f64>,
        horizontal: Vec<f64>,
    },
}

impl Kernel {
    /// Normalized Gaussian of standard deviation `sigma` truncated at `radius`.
    pub fn gaussian(sigma: f64, radius: usize) -> Self {
        let taps: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let x = i as f64 - radius as f64;
                (-0.5 * x * x / (sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        let taps: Vec<f64> = taps.into_iter().map(|t| t / total).collect();
        Kernel::Separable {
            vertical: taps.clone(),
            horizontal: taps,
        }
    }

    fn validate(&self) -> Result<()> {
        let odd = |n: usize| n % 2 == 1;
        match self {
            Kernel::Full {
                height,
                width,
                weights,
            } => {
                if !odd(*height) || !odd(*width) || weights.len() != height * width {
                    return Err(Error::InvalidArgument(format!(
                        "kernel {height}x{width} with {} weights; sizes must be odd",
                        weights.len()
                    )));
                }
            }
            Kernel::Separable {
                vertical,
                horizontal,
            } => {
                if !odd(vertical.len()) || !odd(horizontal.len()) {
                    return Err(Error::InvalidArgument(
                        "separable kernel lengths must be odd".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sum of absolute weights; its square bounds the squared operator norm.
    fn l1(&self) -> f64 {
        match self {
            Kernel::Full { weights, .. } => weights.iter().map(|w| w.abs()).sum(),
            Kernel::Separable {
                vertical,
                horizontal,
            } => {
                vertical.iter().map(|w| w.abs()).sum::<f64>()
                    * horizontal.iter().map(|w| w.abs()).sum::<f64>()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LinearOperator {
    Dense {
        matrix: Vec<f64>,
        rows: usize,
        cols: usize,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    },
    SparseCsr {
        matrix: CsrMatrix,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    },
    /// `factor x factor` block averaging of an `[H, W]` image.
    AvgPool {
        factor: usize,
        input_shape: [usize; 2],
    },
    /// Zero-padded convolution of an `[H, W]` image.
    Conv2d {
        kernel: Kernel,
        input_shape: [usize; 2],
    },
    Identity {
        shape: Vec<usize>,
    },
}

/// Result of [`LinearOperator::operator_norm_sq`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub rel_change: f64,
    pub iterations: usize,
}

impl LinearOperator {
    /// Dense `rows x cols` matrix in row-major order acting on vectors.
    pub fn dense(rows: usize, cols: usize, matrix: Vec<f64>) -> Result<Self> {
        Self::dense_with_shapes(matrix, vec![cols], vec![rows])
    }

    pub fn dense_with_shapes(
        matrix: Vec<f64>,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        let cols: usize = input_shape.iter().product();
        let rows: usize = output_shape.iter().product();
        if matrix.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "dense operator {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                matrix.len()
            )));
        }
        Ok(LinearOperator::Dense {
            matrix,
            rows,
            cols,
            input_shape,
            output_shape,
        })
    }

    pub fn zero(input_shape: &[usize], output_shape: &[usize]) -> Self {
        let n: usize =
            input_shape.iter().product::<usize>() * output_shape.iter().product::<usize>();
        Self::dense_with_shapes(vec![0.0; n], input_shape.to_vec(), output_shape.to_vec())
            .expect("sizes agree by construction")
    }

    pub fn identity(shape: &[usize]) -> Self {
        LinearOperator::Identity {
            shape: shape.to_vec(),
        }
    }

    pub fn sparse(
        matrix: CsrMatrix,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        let cols: usize = input_shape.iter().product();
        let rows: usize = output_shape.iter().product();
        if matrix.rows() != rows || matrix.cols() != cols {
            return Err(Error::InvalidArgument(format!(
                "sparse matrix is {}x{} but shapes {input_shape:?} -> {output_shape:?} need {rows}x{cols}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(LinearOperator::SparseCsr {
            matrix,
            input_shape,
            output_shape,
        })
    }

    /// Load a Matrix Market file and check it against the declared shapes.
    pub fn from_matrix_market(
        path: impl AsRef<Path>,
        input_shape: Vec<usize>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        Self::sparse(
            CsrMatrix::read_matrix_market(path)?,
            input_shape,
            output_shape,
        )
    }

    pub fn avgpool(factor: usize, input_shape: [usize; 2]) -> Result<Self> {
        if factor == 0
            || !input_shape[0].is_multiple_of(factor)
            || !input_shape[1].is_multiple_of(factor)
        {
            return Err(Error::InvalidArgument(format!(
                "pooling factor {factor} does not divide {input_shape:?}"
            )));
        }
        Ok(LinearOperator::AvgPool {
            factor,
            input_shape,
        })
    }

    pub fn conv2d(kernel: Kernel, input_shape: [usize; 2]) -> Result<Self> {
        kernel.validate()?;
        Ok(LinearOperator::Conv2d {
            kernel,
            input_shape,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            LinearOperator::Dense { input_shape, .. }
            | LinearOperator::SparseCsr { input_shape, .. } => input_shape.clone(),
            LinearOperator::AvgPool { input_shape, .. }
            | LinearOperator::Conv2d { input_shape, .. } => input_shape.to_vec(),
            LinearOperator::Identity { shape } => shape.clone(),
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self {
            LinearOperator::Dense { output_shape, .. }
            | LinearOperator::SparseCsr { output_shape, .. } => output_shape.clone(),
            LinearOperator::AvgPool {
                factor,
                input_shape,
            } => vec![input_shape[0] / factor, input_shape[1] / factor],
            LinearOperator::Conv2d { input_shape, .. } => input_shape.to_vec(),
            LinearOperator::Identity { shape } => shape.clone(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// `A u`.
    pub fn apply(&self, u: &Tensor) -> Result<Tensor> {
        u.check_shape("apply", &self.input_shape())?;
        let out = match self {
            LinearOperator::Dense {
                matrix, rows, cols, ..
            } => (0..*rows)
                .map(|r| crate::tensor::dot(&matrix[r * cols..(r + 1) * cols], u.data()))
                .collect(),
            LinearOperator::SparseCsr { matrix, .. } => matrix.matvec(u.data()),
            LinearOperator::AvgPool {
                factor,
                input_shape,
            } => avgpool_apply(u.data(), *factor, *input_shape),
            LinearOperator::Conv2d {
                kernel,
                input_shape,
            } => conv_apply(u.data(), kernel, *input_shape, false),
            LinearOperator::Identity { .. } => u.data().to_vec(),
        };
        Tensor::new(self.output_shape(), out)
    }

    /// `Aᵀ v`.
    pub fn adjoint(&self, v: &Tensor) -> Result<Tensor> {
        v.check_shape("adjoint", &self.output_shape())?;
        let out = match self {
            LinearOperator::Dense {
                matrix, rows, cols, ..
            } => {
                let mut out = vec![0.0; *cols];
                for r in 0..*rows {
                    let vr = v.data()[r];
                    for (o, m) in out.iter_mut().zip(&matrix[r * cols..(r + 1) * cols]) {
                        *o += m * vr;
                    }
                }
                out
            }
            LinearOperator::SparseCsr { matrix, .. } => matrix.matvec_transpose(v.data()),
            LinearOperator::AvgPool {
                factor,
                input_shape,
            } => avgpool_adjoint(v.data(), *factor, *input_shape),
            LinearOperator::Conv2d {
                kernel,
                input_shape,
            } => conv_apply(v.data(), kernel, *input_shape, true),
            LinearOperator::Identity { .. } => v.data().to_vec(),
        };
        Tensor::new(self.input_shape(), out)
    }

    /// Materialize as a row-major dense matrix (`output_len x input_len`).
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        let (n, m) = (self.input_len(), self.output_len());
        let mut out = vec![0.0; m * n];
        let shape = self.input_shape();
        for j in 0..n {
            let mut e = Tensor::zeros(&shape);
            e.data_mut()[j] = 1.0;
            let col = self.apply(&e)?;
            for (i, v) in col.data().iter().enumerate() {
                out[i * n + j] = *v;
            }
        }
        Ok(out)
    }

    /// Cheap certified upper bound on `λmax(AᵀA)`.
    pub fn norm_sq_upper_bound(&self) -> f64 {
        match self {
            LinearOperator::Dense { matrix, .. } => matrix.iter().map(|v| v * v).sum(),
            LinearOperator::SparseCsr { matrix, .. } => matrix.schur_bound(),
            LinearOperator::AvgPool { factor, .. } => 1.0 / (factor * factor) as f64,
            LinearOperator::Conv2d { kernel, .. } => kernel.l1().powi(2),
            LinearOperator::Identity { .. } => 1.0,
        }
    }

    /// Power-iteration estimate of `λmax(AᵀA)` from a fixed seeded start.
    ///
    /// The Rayleigh quotients of power iterates on a PSD matrix are
    /// nondecreasing, so the estimate only ever grows.
    pub fn operator_norm_sq(&self, iters: usize, tol: f64) -> Result<NormEstimate> {
        if iters == 0 {
            return Err(Error::InvalidArgument(
                "operator_norm_sq needs iters >= 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5_eed0_fa7a);
        let mut x = Tensor::random_normal(&self.input_shape(), 1.0, &mut rng);
        let n0 = x.norm();
        x = x.scale(1.0 / n0);
        let mut value = 0.0;
        let mut rel_change = f64::INFINITY;
        for k in 1..=iters {
            let y = self.adjoint(&self.apply(&x)?)?;
            let next = x.dot(&y)?;
            let ny = y.norm();
            if ny == 0.0 {
                return Ok(NormEstimate {
                    value: 0.0,
                    rel_change: 0.0,
                    iterations: k,
                });
            }
            rel_change = if next > 0.0 {
                (next - value).abs() / next
            } else {
                0.0
            };
            value = value.max(next);
            x = y.scale(1.0 / ny);
            if rel_change < tol {
                return Ok(NormEstimate {
                    value,
                    rel_change,
                    iterations: k,
                });
            }
        }
        Ok(NormEstimate {
            value,
            rel_change,
            iterations: iters,
        })
    }
}

fn avgpool_apply(u: &[f64], k: usize, [h, w]: [usize; 2]) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; oh * ow];
    for i in 0..h {
        for j in 0..w {
            out[(i / k) * ow + j / k] += u[i * w + j] * inv;
        }
    }
    out
}

fn avgpool_adjoint(v: &[f64], k: usize, [h, w]: [usize; 2]) -> Vec<f64> {
    let ow = w / k;
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = v[(i / k) * ow + j / k] * inv;
        }
    }
    out
}

/// Zero-padded 1D correlation along rows (`axis = 1`) or columns (`axis = 0`).
/// `transpose` applies the adjoint (correlation with the flipped taps).
fn correlate_axis(
    u: &[f64],
    taps: &[f64],
    [h, w]: [usize; 2],
    axis: usize,
    transpose: bool,
) -> Vec<f64> {
    let c = (taps.len() / 2) as isize;
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in taps.iter().enumerate() {
                let off = if transpose {
                    c - t as isize
                } else {
                    t as isize - c
                };
                let (si, sj) = if axis == 0 {
                    (i as isize + off, j as isize)
                } else {
                    (i as isize, j as isize + off)
                };
                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                    acc += kv * u[si as usize * w + sj as usize];
                }
            }
            out[i * w + j] = acc;
        }
    }
    out
}

fn conv_apply(u: &[f64], kernel: &Kernel, shape: [usize; 2], transpose: bool) -> Vec<f64> {
    let [h, w] = shape;
    match kernel {
        Kernel::Separable {
            vertical,
            horizontal,
        } => {
            let tmp = correlate_axis(u, horizontal, shape, 1, transpose);
            correlate_axis(&tmp, vertical, shape, 0, transpose)
        }
        Kernel::Full {
            height,
            width,
            weights,
        } => {
            let (ch, cw) = ((height / 2) as isize, (width / 2) as isize);
            let mut out = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for a in 0..*height {
                        for b in 0..*width {
                            let (da, db) = (a as isize - ch, b as isize - cw);
                            let (si, sj) = if transpose {
                                (i as isize - da, j as isize - db)
                            } else {
                                (i as isize + da, j as isize + db)
                            };
                            if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                                acc += weights[a * width + b] * u[si as usize * w + sj as usize];
                            }
                        }
                    }
                    out[i * w + j] = acc;
                }
            }
            out
        }
    }
}
