use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ode::Trajectory;
use crate::spectral::Periodic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Mode numbers `0..=n/2`.
    pub wavenumbers: Vec<f64>,
    pub energy: Vec<f64>,
}

/// One-sided power per mode, normalized so that the energies sum to the
/// mean square of the field.
pub fn spectrum_1d(field: &[f64]) -> Spectrum {
    let n = field.len();
    if n == 0 {
        return Spectrum {
            wavenumbers: Vec::new(),
            energy: Vec::new(),
        };
    }
    let c = Periodic::new(n, 1.0).forward(field);
    let scale = 1.0 / (n as f64 * n as f64);
    let half = n / 2;
    let energy = (0..=half)
        .map(|m| {
            let e = c[m].norm_sqr() * scale;
            if m == 0 || (n % 2 == 0 && m == half) {
                e
            } else {
                2.0 * e
            }
        })
        .collect();
    Spectrum {
        wavenumbers: (0..=half).map(|m| m as f64).collect(),
        energy,
    }
}

/// Time-averaged spectrum of a field trajectory.
pub fn mean_spectrum(traj: &Trajectory) -> Result<Spectrum, MetricsError> {
    if traj.len() == 0 {
        return Err(MetricsError::EmptyTrajectory);
    }
    let mut acc = spectrum_1d(traj.state(0).as_slice().expect("row"));
    for i in 1..traj.len() {
        let s = spectrum_1d(traj.state(i).as_slice().expect("row"));
        acc.energy.iter_mut().zip(&s.energy).for_each(|(a, b)| *a += b);
    }
    let m = traj.len() as f64;
    acc.energy.iter_mut().for_each(|a| *a /= m);
    Ok(acc)
}

/// `√((1/K) Σ_k (E_pred(k) − E_truth(k))²)`.
pub fn spectrum_rmse(pred: &Spectrum, truth: &Spectrum) -> Result<f64, MetricsError> {
    if pred.wavenumbers != truth.wavenumbers || pred.energy.len() != truth.energy.len() {
        return Err(MetricsError::GridMismatch("spectra use different wavenumbers".into()));
    }
    if pred.energy.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .energy
        .iter()
        .zip(&truth.energy)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((s / pred.energy.len() as f64).sqrt())
}

/// Pearson correlation across space for each snapshot. Snapshots with zero
/// variance give NaN.
pub fn field_correlation(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>, MetricsError> {
    if pred.len() != truth.len() || pred.state_dim() != truth.state_dim() {
        return Err(MetricsError::Alignment(format!(
            "shapes {}×{} and {}×{} differ",
            pred.len(),
            pred.state_dim(),
            truth.len(),
            truth.state_dim()
        )));
    }
    if pred
        .times()
        .iter()
        .zip(truth.times())
        .any(|(a, b)| (a - b).abs() > 1e-9 * (1.0 + b.abs()))
    {
        return Err(MetricsError::Alignment("sample times differ".into()));
    }
    Ok((0..pred.len())
        .map(|i| {
            pearson(
                pred.state(i).as_slice().expect("row"),
                truth.state(i).as_slice().expect("row"),
            )
        })
        .collect())
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn traj(rows: &[Vec<f64>]) -> Trajectory {
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Trajectory::new(
            (0..rows.len()).map(|i| i as f64).collect(),
            Array2::from_shape_vec((rows.len(), rows[0].len()), flat).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_and_sine() {
        assert!(spectrum_1d(&[0.0; 16]).energy.iter().all(|&e| e == 0.0));
        let n = 64;
        let q: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * i as f64 / n as f64).sin())
            .collect();
        let s = spectrum_1d(&q);
        assert!((s.energy[1] - 0.5).abs() < 1e-12);
        assert!(s.energy.iter().enumerate().all(|(m, &e)| m == 1 || e < 1e-20));
    }

    #[test]
    fn parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [7, 32, 63, 64] {
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = spectrum_1d(&q);
            let ms = q.iter().map(|x| x * x).sum::<f64>() / n as f64;
            assert!((s.energy.iter().sum::<f64>() - ms).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_cases() {
        let z = Spectrum {
            wavenumbers: vec![0.0, 1.0],
            energy: vec![0.0, 0.0],
        };
        let p = Spectrum {
            energy: vec![3.0, 4.0],
            ..z.clone()
        };
        assert!((spectrum_rmse(&p, &z).unwrap() - 3.5355).abs() < 1e-4);
        assert_eq!(spectrum_rmse(&z, &z).unwrap(), 0.0);
        let shifted = Spectrum {
            energy: p.energy.iter().map(|e| e + 0.25).collect(),
            ..p.clone()
        };
        assert!((spectrum_rmse(&shifted, &p).unwrap() - 0.25).abs() < 1e-15);
        let other = Spectrum {
            wavenumbers: vec![0.0, 2.0],
            energy: vec![0.0, 0.0],
        };
        assert!(spectrum_rmse(&z, &other).is_err());
    }

    #[test]
    fn rmse_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| Spectrum {
                wavenumbers: (0..9).map(|m| m as f64).collect(),
                energy: (0..9).map(|_| rng.random::<f64>()).collect(),
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            let ab = spectrum_rmse(&a, &b).unwrap();
            let bc = spectrum_rmse(&b, &c).unwrap();
            let ac = spectrum_rmse(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn correlation_identity_sign_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
                let m = v.iter().sum::<f64>() / n as f64;
                v.iter_mut().for_each(|x| *x -= m);
                v
            })
            .collect();
        let t = traj(&rows);
        assert!(field_correlation(&t, &t)
            .unwrap()
            .iter()
            .all(|&c| (c - 1.0).abs() < 1e-12));
        let neg: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| -x).collect()).collect();
        assert!(field_correlation(&traj(&neg), &t)
            .unwrap()
            .iter()
            .all(|&c| (c + 1.0).abs() < 1e-12));
        // Unit-variance signal plus noise of standard deviation s: ρ = 1/√(1+s²).
        let s = 0.75;
        let noisy: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|x| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x + s * e
                    })
                    .collect::<Vec<f64>>()
            })
            .collect();
        let expect = 1.0 / (1.0 + s * s).sqrt();
        for c in field_correlation(&traj(&noisy), &t).unwrap() {
            assert!((c - expect).abs() < 4.0 / (n as f64).sqrt(), "{c} vs {expect}");
        }
    }

    #[test]
    fn correlation_alignment() {
        let a = traj(&[vec![1.0, 2.0]]);
        let b = traj(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(field_correlation(&a, &b), Err(MetricsError::Alignment(_))));
    }
}
