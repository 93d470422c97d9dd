use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ode::Trajectory;
use crate::spectral::Periodic;

/// Floor applied to reference densities before taking the logarithm.
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    Spectral,
    /// Second-order central differences.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdfConfig {
    #[serde(default = "default_length")]
    pub domain_length: f64,
    #[serde(default = "default_bins")]
    pub bins_x: usize,
    #[serde(default = "default_bins")]
    pub bins_y: usize,
    /// Explicit `((x_lo, x_hi), (y_lo, y_hi))`; computed from the data when absent.
    #[serde(default)]
    pub range: Option<((f64, f64), (f64, f64))>,
    /// Fraction of samples covered by automatically chosen symmetric ranges.
    #[serde(default = "default_coverage")]
    pub coverage: f64,
    #[serde(default = "default_scheme")]
    pub scheme: DerivativeScheme,
}

fn default_length() -> f64 {
    22.0
}
fn default_bins() -> usize {
    64
}
fn default_coverage() -> f64 {
    0.999
}
fn default_scheme() -> DerivativeScheme {
    DerivativeScheme::Spectral
}

impl Default for PdfConfig {
    fn default() -> Self {
        Self {
            domain_length: default_length(),
            bins_x: default_bins(),
            bins_y: default_bins(),
            range: None,
            coverage: default_coverage(),
            scheme: default_scheme(),
        }
    }
}

/// A 2-D histogram normalized to a probability density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointPdf {
    pub bins_x: usize,
    pub bins_y: usize,
    pub edges_x: Vec<f64>,
    pub edges_y: Vec<f64>,
    /// `bins_x × bins_y`.
    pub density: Array2<f64>,
}

impl JointPdf {
    pub fn bin_area(&self, i: usize, j: usize) -> f64 {
        (self.edges_x[i + 1] - self.edges_x[i]) * (self.edges_y[j + 1] - self.edges_y[j])
    }

    /// Total probability, `Σ density · area`.
    pub fn mass(&self) -> f64 {
        let mut m = 0.0;
        for ((i, j), d) in self.density.indexed_iter() {
            m += d * self.bin_area(i, j);
        }
        m
    }

    pub fn range(&self) -> ((f64, f64), (f64, f64)) {
        (
            (self.edges_x[0], self.edges_x[self.bins_x]),
            (self.edges_y[0], self.edges_y[self.bins_y]),
        )
    }
}

/// First and second spatial derivatives of every snapshot, flattened.
pub fn derivative_samples(traj: &Trajectory, cfg: &PdfConfig) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if traj.len() == 0 || traj.state_dim() == 0 {
        return Err(MetricsError::EmptyTrajectory);
    }
    let n = traj.state_dim();
    let h = cfg.domain_length / n as f64;
    let fft = Periodic::new(n, cfg.domain_length);
    let mut xs = Vec::with_capacity(traj.len() * n);
    let mut ys = Vec::with_capacity(traj.len() * n);
    for i in 0..traj.len() {
        let q = traj.state(i).to_vec();
        match cfg.scheme {
            DerivativeScheme::Spectral => {
                xs.extend(fft.derivative(&q, 1));
                ys.extend(fft.derivative(&q, 2));
            }
            DerivativeScheme::FiniteDifference => {
                for j in 0..n {
                    let (l, r) = (q[(j + n - 1) % n], q[(j + 1) % n]);
                    xs.push((r - l) / (2.0 * h));
                    ys.push((r - 2.0 * q[j] + l) / (h * h));
                }
            }
        }
    }
    Ok((xs, ys))
}

/// Symmetric bound `[-a, a]` holding `coverage` of the samples' magnitudes.
fn symmetric_bound(v: &[f64], coverage: f64) -> f64 {
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let idx = ((coverage * mags.len() as f64).ceil() as usize).clamp(1, mags.len()) - 1;
    let a = mags[idx];
    if a > 0.0 {
        a
    } else {
        1.0
    }
}

/// Automatically chosen ranges for `traj`, for sharing one grid between PDFs.
pub fn pdf_range(traj: &Trajectory, cfg: &PdfConfig) -> Result<((f64, f64), (f64, f64)), MetricsError> {
    let (xs, ys) = derivative_samples(traj, cfg)?;
    let a = symmetric_bound(&xs, cfg.coverage);
    let b = symmetric_bound(&ys, cfg.coverage);
    Ok(((-a, a), (-b, b)))
}

fn edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Bin of `v` on a uniform grid; values outside go to the edge bins.
fn bin_of(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    let f = ((v - lo) / (hi - lo) * n as f64).floor();
    if f.is_nan() || f < 0.0 {
        0
    } else {
        (f as usize).min(n - 1)
    }
}

/// Joint density of `(q_x, q_xx)` over all grid points and snapshots.
/// Samples outside the range are counted in the nearest edge bin.
pub fn joint_pdf(traj: &Trajectory, cfg: &PdfConfig) -> Result<JointPdf, MetricsError> {
    if cfg.bins_x == 0 || cfg.bins_y == 0 {
        return Err(MetricsError::InvalidInput("bin counts must be positive".into()));
    }
    let (xs, ys) = derivative_samples(traj, cfg)?;
    let ((xlo, xhi), (ylo, yhi)) = match cfg.range {
        Some(r) => r,
        None => {
            let a = symmetric_bound(&xs, cfg.coverage);
            let b = symmetric_bound(&ys, cfg.coverage);
            ((-a, a), (-b, b))
        }
    };
    if !(xhi > xlo && yhi > ylo) {
        return Err(MetricsError::InvalidInput("empty histogram range".into()));
    }
    histogram(&xs, &ys, (xlo, xhi), (ylo, yhi), cfg.bins_x, cfg.bins_y)
}

pub(crate) fn histogram(
    xs: &[f64],
    ys: &[f64],
    (xlo, xhi): (f64, f64),
    (ylo, yhi): (f64, f64),
    bx: usize,
    by: usize,
) -> Result<JointPdf, MetricsError> {
    if xs.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let mut counts = Array2::<f64>::zeros((bx, by));
    for (&x, &y) in xs.iter().zip(ys) {
        counts[[bin_of(x, xlo, xhi, bx), bin_of(y, ylo, yhi, by)]] += 1.0;
    }
    let area = (xhi - xlo) / bx as f64 * (yhi - ylo) / by as f64;
    let total = xs.len() as f64;
    Ok(JointPdf {
        bins_x: bx,
        bins_y: by,
        edges_x: edges(xlo, xhi, bx),
        edges_y: edges(ylo, yhi, by),
        density: counts.mapv(|c| c / (total * area)),
    })
}

/// `D_KL(P̃‖P) = Σ P̃ ln(P̃/P) · area` with `P` floored at [`KL_FLOOR`].
pub fn kl_divergence(p_model: &JointPdf, p_truth: &JointPdf) -> Result<f64, MetricsError> {
    if p_model.density.dim() != p_truth.density.dim()
        || p_model.edges_x != p_truth.edges_x
        || p_model.edges_y != p_truth.edges_y
    {
        return Err(MetricsError::GridMismatch("PDFs are binned on different grids".into()));
    }
    let mut d = 0.0;
    for ((i, j), &pm) in p_model.density.indexed_iter() {
        if pm > 0.0 {
            let pt = p_truth.density[[i, j]].max(KL_FLOOR);
            d += pm * (pm / pt).ln() * p_model.bin_area(i, j);
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field_traj(rows: Vec<Vec<f64>>) -> Trajectory {
        let n = rows[0].len();
        let m = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Trajectory::new(
            (0..m).map(|i| i as f64).collect(),
            Array2::from_shape_vec((m, n), flat).unwrap(),
        )
        .unwrap()
    }

    fn pdf_from(values: &[f64], area: f64) -> JointPdf {
        let n = values.len();
        JointPdf {
            bins_x: n,
            bins_y: 1,
            edges_x: (0..=n).map(|i| i as f64 * area).collect(),
            edges_y: vec![0.0, 1.0],
            density: Array2::from_shape_vec((n, 1), values.to_vec()).unwrap(),
        }
    }

    #[test]
    fn constant_field_is_a_single_bin() {
        let p = joint_pdf(&field_traj(vec![vec![3.0; 16]; 4]), &PdfConfig::default()).unwrap();
        let nonzero: Vec<_> = p.density.indexed_iter().filter(|(_, &d)| d > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        let ((i, j), _) = nonzero[0];
        assert!(p.edges_x[i] <= 0.0 && 0.0 <= p.edges_x[i + 1]);
        assert!(p.edges_y[j] <= 0.0 && 0.0 <= p.edges_y[j + 1]);
        assert!((p.mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sine_lies_on_the_ellipse() {
        let l = 22.0;
        let n = 256;
        let k = 2.0 * std::f64::consts::PI / l;
        let q: Vec<f64> = (0..n).map(|i| (k * l * i as f64 / n as f64).sin()).collect();
        let cfg = PdfConfig {
            bins_x: 40,
            bins_y: 40,
            range: Some(((-1.2 * k, 1.2 * k), (-1.2 * k * k, 1.2 * k * k))),
            ..PdfConfig::default()
        };
        let p = joint_pdf(&field_traj(vec![q]), &cfg).unwrap();
        for ((i, j), &d) in p.density.indexed_iter() {
            if d == 0.0 {
                continue;
            }
            // Some corner of the bin is inside the ellipse and some outside.
            let mut inside = false;
            let mut outside = false;
            for x in [p.edges_x[i], p.edges_x[i + 1]] {
                for y in [p.edges_y[j], p.edges_y[j + 1]] {
                    let r = (x / k).powi(2) + (y / (k * k)).powi(2);
                    inside |= r <= 1.0;
                    outside |= r >= 1.0;
                }
            }
            assert!(inside && outside, "bin ({i},{j}) off the ellipse");
        }
    }

    #[test]
    fn kl_hand_values() {
        let a = pdf_from(&[0.5, 0.5], 1.0);
        let b = pdf_from(&[0.25, 0.75], 1.0);
        let d = kl_divergence(&a, &b).unwrap();
        assert!((d - 0.14384).abs() < 1e-5, "{d}");
        assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        assert_ne!(kl_divergence(&a, &b).unwrap(), kl_divergence(&b, &a).unwrap());
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.random_range(2..30);
            let area = rng.random_range(0.1..2.0);
            let mut draw = |sparse: bool| {
                let mut v: Vec<f64> = (0..n)
                    .map(|_| {
                        if sparse && rng.random_bool(0.3) {
                            0.0
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect();
                if v.iter().all(|&x| x == 0.0) {
                    v[0] = 1.0;
                }
                let s: f64 = v.iter().sum::<f64>() * area;
                v.iter_mut().for_each(|x| *x /= s);
                pdf_from(&v, area)
            };
            let p = draw(true);
            let q = draw(true);
            assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_rejects_different_grids() {
        let a = pdf_from(&[0.5, 0.5], 1.0);
        let b = pdf_from(&[0.25, 0.25], 2.0);
        assert!(matches!(kl_divergence(&a, &b), Err(MetricsError::GridMismatch(_))));
    }

    #[test]
    fn normalization_after_subsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..32).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let t = field_traj(rows);
        for step in [1, 3, 7] {
            let idx: Vec<usize> = (0..t.len()).step_by(step).collect();
            let states = Array2::from_shape_fn((idx.len(), 32), |(i, j)| t.state(idx[i])[j]);
            let sub = Trajectory::new((0..idx.len()).map(|i| i as f64).collect(), states).unwrap();
            let p = joint_pdf(&sub, &PdfConfig::default()).unwrap();
            assert!((p.mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn finite_difference_scheme_is_close_on_smooth_fields() {
        let n = 128;
        let l = 22.0;
        let k = 2.0 * std::f64::consts::PI / l;
        let q: Vec<f64> = (0..n).map(|i| (k * l * i as f64 / n as f64).cos()).collect();
        let t = field_traj(vec![q]);
        let (sx, sy) = derivative_samples(&t, &PdfConfig::default()).unwrap();
        let cfg = PdfConfig {
            scheme: DerivativeScheme::FiniteDifference,
            ..PdfConfig::default()
        };
        let (fx, fy) = derivative_samples(&t, &cfg).unwrap();
        for i in 0..n {
            assert!((sx[i] - fx[i]).abs() < 1e-3);
            assert!((sy[i] - fy[i]).abs() < 1e-3);
        }
    }
}
