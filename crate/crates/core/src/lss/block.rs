use nalgebra::{DMatrix, DVector};

use super::LssError;

/// Symmetric block-tridiagonal matrix with a right-hand side.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    /// `sub[i]` is the block at row `i + 1`, column `i`.
    pub sub: Vec<DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
}

impl BlockTridiagonal {
    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag.first().map_or(0, |d| d.nrows())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (m, b) = (self.n_blocks(), self.block_size());
        let mut a = DMatrix::zeros(m * b, m * b);
        for i in 0..m {
            a.view_mut((i * b, i * b), (b, b)).copy_from(&self.diag[i]);
        }
        for (i, s) in self.sub.iter().enumerate() {
            a.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(s);
            a.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&s.transpose());
        }
        a
    }

    pub fn dense_rhs(&self) -> DVector<f64> {
        let b = self.block_size();
        let mut r = DVector::zeros(self.n_blocks() * b);
        for (i, x) in self.rhs.iter().enumerate() {
            r.rows_mut(i * b, b).copy_from(x);
        }
        r
    }

    pub fn mul(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let m = self.n_blocks();
        (0..m)
            .map(|i| {
                let mut y = &self.diag[i] * &x[i];
                if i > 0 {
                    y += &self.sub[i - 1] * &x[i - 1];
                }
                if i + 1 < m {
                    y += self.sub[i].transpose() * &x[i + 1];
                }
                y
            })
            .collect()
    }

    /// `‖A x − b‖ / ‖b‖` (absolute when `b = 0`).
    pub fn relative_residual(&self, x: &[DVector<f64>]) -> f64 {
        let ax = self.mul(x);
        let (mut num, mut den) = (0.0, 0.0);
        for (y, b) in ax.iter().zip(&self.rhs) {
            num += (y - b).norm_squared();
            den += b.norm_squared();
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// Block Cholesky factorization and solve.
    pub fn solve(&self) -> Result<Vec<DVector<f64>>, LssError> {
        let m = self.n_blocks();
        if m == 0 {
            return Ok(Vec::new());
        }
        let chol = |a: DMatrix<f64>, i: usize| {
            a.cholesky()
                .map(|c| c.l())
                .ok_or_else(|| LssError::SingularSystem(format!("pivot block {i} is not positive definite")))
        };
        let mut l = Vec::with_capacity(m);
        // lt_sub[i] = L_{i+1,i}ᵀ.
        let mut lt_sub: Vec<DMatrix<f64>> = Vec::with_capacity(m.saturating_sub(1));
        l.push(chol(self.diag[0].clone(), 0)?);
        for i in 1..m {
            let st = self.sub[i - 1].transpose();
            let lt = l[i - 1]
                .solve_lower_triangular(&st)
                .ok_or_else(|| LssError::SingularSystem(format!("zero pivot in block {}", i - 1)))?;
            let schur = &self.diag[i] - lt.transpose() * &lt;
            lt_sub.push(lt);
            l.push(chol(schur, i)?);
        }
        let singular = || LssError::SingularSystem("triangular solve failed".into());
        let mut y = Vec::with_capacity(m);
        for i in 0..m {
            let mut r = self.rhs[i].clone();
            if i > 0 {
                r -= lt_sub[i - 1].transpose() * &y[i - 1];
            }
            y.push(l[i].solve_lower_triangular(&r).ok_or_else(singular)?);
        }
        let mut x = vec![DVector::zeros(0); m];
        for i in (0..m).rev() {
            let mut r = y[i].clone();
            if i + 1 < m {
                r -= &lt_sub[i] * &x[i + 1];
            }
            x[i] = l[i].tr_solve_lower_triangular(&r).ok_or_else(singular)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (m, b) = (7, 3);
        let rnd = |rng: &mut ChaCha8Rng| DMatrix::from_fn(b, b, |_, _| rng.random_range(-1.0..1.0));
        let diag = (0..m)
            .map(|_| {
                let a = rnd(&mut rng);
                &a * a.transpose() + DMatrix::identity(b, b) * 4.0
            })
            .collect();
        let sub = (0..m - 1).map(|_| rnd(&mut rng)).collect();
        let rhs = (0..m)
            .map(|_| DVector::from_fn(b, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let sys = BlockTridiagonal { diag, sub, rhs };
        let x = sys.solve().unwrap();
        let dense = sys.to_dense().lu().solve(&sys.dense_rhs()).unwrap();
        for i in 0..m {
            for j in 0..b {
                assert!((x[i][j] - dense[i * b + j]).abs() < 1e-12);
            }
        }
        assert!(sys.relative_residual(&x) < 1e-13);
    }

    #[test]
    fn indefinite_is_reported() {
        let sys = BlockTridiagonal {
            diag: vec![DMatrix::from_element(1, 1, -1.0)],
            sub: vec![],
            rhs: vec![DVector::from_element(1, 1.0)],
        };
        assert!(matches!(sys.solve(), Err(LssError::SingularSystem(_))));
    }
}
