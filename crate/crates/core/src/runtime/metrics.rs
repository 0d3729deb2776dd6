//! Evaluation metrics and the per-step metrics record.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Returned when the error is exactly zero.
pub const PSNR_CAP: f64 = 99.0;

/// PSNR for values in `[-1, 1]` (peak-to-peak 2), capped at [`PSNR_CAP`].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape("PSNR needs equal, non-empty inputs".into()));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (4.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean of the row-wise PSNRs.
pub fn mean_psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b)?;
    let n = a.rows();
    let mut total = 0.0;
    for i in 0..n {
        total += psnr(a.row(i), b.row(i))?;
    }
    Ok(total / n as f64)
}

/// Sample mean and (biased) covariance of the rows.
pub fn moments(x: &Tensor) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let m = DMatrix::from_row_slice(n, d, x.data());
    let mean = DVector::from_iterator(d, (0..d).map(|j| m.column(j).mean()));
    let centered = DMatrix::from_fn(n, d, |i, j| m[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    (mean, cov)
}

fn psd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Closed-form 2-Wasserstein distance between two Gaussians.
pub fn gaussian_w2(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || c1.shape() != (d, d) || c2.shape() != (d, d) {
        return Err(Error::Shape("Gaussian moments disagree in dimension".into()));
    }
    let r1 = psd_sqrt(c1);
    let cross = psd_sqrt(&(&r1 * c2 * &r1));
    let trace = (c1 + c2 - cross * 2.0).trace();
    Ok(((m1 - m2).norm_squared() + trace).max(0.0).sqrt())
}

/// W2 between the Gaussian fitted to `x` and `N(mean, std^2 I)`.
pub fn w2_to_isotropic(x: &Tensor, mean: &[f64], std: f64) -> Result<f64> {
    if mean.len() != x.cols() {
        return Err(Error::Shape("target mean does not match the samples".into()));
    }
    let (m, c) = moments(x);
    let d = mean.len();
    gaussian_w2(&m, &c, &DVector::from_column_slice(mean), &(DMatrix::identity(d, d) * (std * std)))
}

/// Monte-Carlo sliced W2 between equal-size sample sets.
pub fn sliced_w2<R: Rng + ?Sized>(a: &Tensor, b: &Tensor, projections: usize, rng: &mut R) -> Result<f64> {
    a.expect_same_shape(b)?;
    if projections == 0 || a.rows() == 0 {
        return Err(Error::InvalidArgument("need samples and projections".into()));
    }
    let (n, d) = (a.rows(), a.cols());
    let mut total = 0.0;
    for _ in 0..projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|v| *v /= norm);
        let project = |x: &Tensor| {
            let mut p: Vec<f64> = (0..n)
                .map(|i| x.row(i).iter().zip(&dir).map(|(u, v)| u * v).sum())
                .collect();
            p.sort_by(f64::total_cmp);
            p
        };
        let (pa, pb) = (project(a), project(b));
        total += pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    }
    Ok((total / projections as f64).sqrt())
}

pub const METRICS_HEADER: &str = "step,phase,loss_main,loss_perc,loss_weighted,lambda_mean,g_loss,d_loss";

/// One line of the training metrics stream; absent values print empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: String,
    pub loss_main: Option<f64>,
    pub loss_perc: Option<f64>,
    pub loss_weighted: Option<f64>,
    pub lambda_mean: Option<f64>,
    pub g_loss: Option<f64>,
    pub d_loss: Option<f64>,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.phase,
            f(self.loss_main),
            f(self.loss_perc),
            f(self.loss_weighted),
            f(self.lambda_mean),
            f(self.g_loss),
            f(self.d_loss)
        )
    }
}
