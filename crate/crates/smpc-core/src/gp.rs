//! Gaussian-process regression of unknown residual dynamics.
//!
//! One independent univariate GP per output dimension, each with its own
//! stationary kernel, noise variance and training data. The Gram matrix is
//! factorized once at fit time; predictions are dot products plus a
//! triangular solve.

use std::path::Path;

use crate::{Error, Matrix, Result, Vector};

/// Stationary kernel with user-supplied hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// Anisotropic squared-exponential kernel.
    SquaredExponential {
        /// Signal variance (> 0); equals `k(z, z)`.
        signal_variance: f64,
        /// Per-input-dimension lengthscales (> 0).
        lengthscales: Vec<f64>,
    },
    /// Locally periodic kernel (periodic times squared-exponential).
    LocallyPeriodic {
        /// Signal variance (> 0).
        signal_variance: f64,
        /// Lengthscale (> 0).
        lengthscale: f64,
        /// Period (> 0).
        period: f64,
    },
}

impl Kernel {
    fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            Kernel::SquaredExponential {
                signal_variance,
                lengthscales,
            } => {
                if *signal_variance <= 0.0 {
                    return Err(Error::ParameterDomain(
                        "kernel signal variance must be > 0".into(),
                    ));
                }
                if lengthscales.len() != input_dim {
                    return Err(Error::Dimension(format!(
                        "kernel expects {} lengthscales, got {}",
                        input_dim,
                        lengthscales.len()
                    )));
                }
                if lengthscales.iter().any(|l| *l <= 0.0) {
                    return Err(Error::ParameterDomain("lengthscales must be > 0".into()));
                }
            }
            Kernel::LocallyPeriodic {
                signal_variance,
                lengthscale,
                period,
            } => {
                if *signal_variance <= 0.0 || *lengthscale <= 0.0 || *period <= 0.0 {
                    return Err(Error::ParameterDomain(
                        "locally periodic kernel parameters must be > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Signal variance `k(z, z)`.
    pub fn signal_variance(&self) -> f64 {
        match self {
            Kernel::SquaredExponential {
                signal_variance, ..
            }
            | Kernel::LocallyPeriodic {
                signal_variance, ..
            } => *signal_variance,
        }
    }
}

/// Evaluates `kernel(z, z')`.
pub fn kernel_eval(kernel: &Kernel, z: &Vector, z2: &Vector) -> f64 {
    debug_assert_eq!(z.len(), z2.len());
    match kernel {
        Kernel::SquaredExponential {
            signal_variance,
            lengthscales,
        } => {
            let mut q = 0.0;
            for i in 0..z.len() {
                let d = (z[i] - z2[i]) / lengthscales[i];
                q += d * d;
            }
            signal_variance * (-0.5 * q).exp()
        }
        Kernel::LocallyPeriodic {
            signal_variance,
            lengthscale,
            period,
        } => {
            let r = (z - z2).norm();
            let l2 = lengthscale * lengthscale;
            let s = (std::f64::consts::PI * r / period).sin();
            signal_variance * (-2.0 * s * s / l2).exp() * (-r * r / (2.0 * l2)).exp()
        }
    }
}

/// Gradient of `k(z, z')` with respect to the query `z`.
///
/// Analytic for the squared-exponential kernel, central finite differences
/// otherwise.
fn kernel_grad_query(kernel: &Kernel, z: &Vector, z2: &Vector) -> Vector {
    match kernel {
        Kernel::SquaredExponential { lengthscales, .. } => {
            let k = kernel_eval(kernel, z, z2);
            Vector::from_fn(z.len(), |i, _| {
                -k * (z[i] - z2[i]) / (lengthscales[i] * lengthscales[i])
            })
        }
        _ => {
            let mut g = Vector::zeros(z.len());
            let mut zp = z.clone();
            for i in 0..z.len() {
                let h = crate::linalg::fd_step(z[i]);
                zp[i] = z[i] + h;
                let kp = kernel_eval(kernel, &zp, z2);
                zp[i] = z[i] - h;
                let km = kernel_eval(kernel, &zp, z2);
                zp[i] = z[i];
                g[i] = (kp - km) / (2.0 * h);
            }
            g
        }
    }
}

/// Per-output-dimension GP state.
#[derive(Debug, Clone)]
struct GpOutput {
    kernel: Kernel,
    noise_variance: f64,
    /// Cholesky factor of `K + sigma_nu I` (empty for a prior GP).
    chol: Matrix,
    /// `(K + sigma_nu I)^{-1} z_out`.
    alpha: Vector,
}

/// Multivariate Gaussian process with independent outputs.
#[derive(Debug, Clone)]
pub struct GpModel {
    input_dim: usize,
    inputs: Matrix, // M x Nz, rows are data points
    /// Training inputs as column vectors, precomputed for prediction.
    rows: Vec<Vector>,
    outputs: Vec<GpOutput>,
}

impl GpModel {
    /// Fits one GP per output dimension from `M` noisy observations.
    ///
    /// `inputs` is `M x Nz` (rows are data points), `outputs` is `M x Ny`,
    /// and `kernels`/`noise_variances` have one entry per output dimension.
    /// The Gram matrices are factorized here and reused by every prediction.
    pub fn fit(
        kernels: Vec<Kernel>,
        inputs: Matrix,
        outputs: Matrix,
        noise_variances: Vec<f64>,
    ) -> Result<Self> {
        let m = inputs.nrows();
        let nz = inputs.ncols();
        if m == 0 {
            return Err(Error::ParameterDomain(
                "at least one data point is required; use GpModel::prior for no data".into(),
            ));
        }
        if outputs.nrows() != m {
            return Err(Error::Dimension(format!(
                "outputs have {} rows, inputs {}",
                outputs.nrows(),
                m
            )));
        }
        let ny = outputs.ncols();
        if kernels.len() != ny || noise_variances.len() != ny {
            return Err(Error::Dimension(format!(
                "need one kernel and noise variance per output dimension ({ny})"
            )));
        }
        let rows: Vec<Vector> = (0..m)
            .map(|j| Vector::from(inputs.row(j).transpose()))
            .collect();
        let mut fitted = Vec::with_capacity(ny);
        for (i, kernel) in kernels.into_iter().enumerate() {
            kernel.validate(nz)?;
            let sigma_nu = noise_variances[i];
            if sigma_nu < 0.0 {
                return Err(Error::ParameterDomain("noise variance must be >= 0".into()));
            }
            let mut gram = Matrix::zeros(m, m);
            for a in 0..m {
                for b in a..m {
                    let k = kernel_eval(&kernel, &rows[a], &rows[b]);
                    gram[(a, b)] = k;
                    gram[(b, a)] = k;
                }
                gram[(a, a)] += sigma_nu;
            }
            let chol = strict_cholesky(&gram)?;
            let y = Vector::from(outputs.column(i));
            let alpha = chol_solve(&chol, &y);
            fitted.push(GpOutput {
                kernel,
                noise_variance: sigma_nu,
                chol,
                alpha,
            });
        }
        Ok(Self {
            input_dim: nz,
            inputs,
            rows,
            outputs: fitted,
        })
    }

    /// Prior GP with no data: mean 0 and variance `k(z, z)` everywhere.
    pub fn prior(kernels: Vec<Kernel>, input_dim: usize) -> Result<Self> {
        for k in &kernels {
            k.validate(input_dim)?;
        }
        let outputs = kernels
            .into_iter()
            .map(|kernel| GpOutput {
                kernel,
                noise_variance: 0.0,
                chol: Matrix::zeros(0, 0),
                alpha: Vector::zeros(0),
            })
            .collect();
        Ok(Self {
            input_dim,
            inputs: Matrix::zeros(0, input_dim),
            rows: Vec::new(),
            outputs,
        })
    }

    /// Loads training data from a CSV file with header
    /// `z_1,...,z_Nz,out_1,...,out_Ny` and fits the model.
    pub fn fit_from_csv(
        kernels: Vec<Kernel>,
        noise_variances: Vec<f64>,
        path: &Path,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ParameterDomain(format!("cannot read {}: {e}", path.display())))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::ParameterDomain("empty training data file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let nz = cols.iter().filter(|c| c.starts_with("z_")).count();
        let ny = cols.iter().filter(|c| c.starts_with("out_")).count();
        if nz == 0 || ny == 0 || nz + ny != cols.len() {
            return Err(Error::ParameterDomain(format!(
                "training data header must be z_1..z_Nz,out_1..out_Ny, got '{header}'"
            )));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::ParameterDomain(format!("bad number on data line {}: {e}", lineno + 2))
                })?;
            if vals.len() != nz + ny {
                return Err(Error::ParameterDomain(format!(
                    "data line {} has {} fields, expected {}",
                    lineno + 2,
                    vals.len(),
                    nz + ny
                )));
            }
            rows.push(vals);
        }
        let m = rows.len();
        let inputs = Matrix::from_fn(m, nz, |r, c| rows[r][c]);
        let outputs = Matrix::from_fn(m, ny, |r, c| rows[r][nz + c]);
        Self::fit(kernels, inputs, outputs, noise_variances)
    }

    /// Number of training points.
    pub fn data_len(&self) -> usize {
        self.inputs.nrows()
    }

    /// Input dimension `Nz`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Output dimension.
    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    /// Predictive mean and per-dimension variance at `z`.
    ///
    /// Variances are clamped at zero to absorb rounding.
    pub fn predict(&self, z: &Vector) -> (Vector, Vector) {
        let m = self.data_len();
        let ny = self.output_dim();
        let mut mean = Vector::zeros(ny);
        let mut var = Vector::zeros(ny);
        if m == 0 {
            for (i, out) in self.outputs.iter().enumerate() {
                var[i] = out.kernel.signal_variance();
            }
            return (mean, var);
        }
        let mut kstar = Vector::zeros(m);
        for (i, out) in self.outputs.iter().enumerate() {
            for j in 0..m {
                kstar[j] = kernel_eval(&out.kernel, z, &self.rows[j]);
            }
            mean[i] = kstar.dot(&out.alpha);
            // sigma = k** - k*^T (K + sigma_nu I)^{-1} k*
            let v = forward_solve(&out.chol, &kstar);
            var[i] = (kernel_eval(&out.kernel, z, z) - v.dot(&v)).max(0.0);
        }
        (mean, var)
    }

    /// Predictive mean only; O(M) kernel evaluations per output without the
    /// variance back-solve.
    pub fn predict_mean(&self, z: &Vector) -> Vector {
        let m = self.data_len();
        let ny = self.output_dim();
        let mut mean = Vector::zeros(ny);
        for (i, out) in self.outputs.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                acc += kernel_eval(&out.kernel, z, &self.rows[j]) * out.alpha[j];
            }
            mean[i] = acc;
        }
        mean
    }

    /// Jacobian of the predictive mean with respect to the query.
    pub fn mean_jacobian(&self, z: &Vector) -> Matrix {
        let m = self.data_len();
        let ny = self.output_dim();
        let mut jac = Matrix::zeros(ny, self.input_dim);
        for (i, out) in self.outputs.iter().enumerate() {
            for j in 0..m {
                let g = kernel_grad_query(&out.kernel, z, &self.rows[j]);
                for c in 0..self.input_dim {
                    jac[(i, c)] += out.alpha[j] * g[c];
                }
            }
        }
        jac
    }

    /// Per-output noise variances.
    pub fn noise_variances(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.noise_variance).collect()
    }
}

/// Plain Cholesky without jitter; duplicate inputs with zero noise must fail.
fn strict_cholesky(gram: &Matrix) -> Result<Matrix> {
    let n = gram.nrows();
    let mut l = Matrix::zeros(n, n);
    let scale = (0..n)
        .map(|i| gram[(i, i)].abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for j in 0..n {
        let mut d = gram[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 1e-14 * scale {
            return Err(Error::IndefiniteGram { min_pivot: d });
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut s = gram[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Solves `L y = b`.
fn forward_solve(l: &Matrix, b: &Vector) -> Vector {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        for k in 0..i {
            let v = y[k];
            y[i] -= l[(i, k)] * v;
        }
        y[i] /= l[(i, i)];
    }
    y
}

/// Solves `L L^T x = b`.
fn chol_solve(l: &Matrix, b: &Vector) -> Vector {
    let n = b.len();
    let mut x = forward_solve(l, b);
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = x[k];
            x[i] -= l[(k, i)] * v;
        }
        x[i] /= l[(i, i)];
    }
    x
}
