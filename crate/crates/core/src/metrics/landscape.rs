use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Offsets added to the base value of the first parameter.
    pub range_a: (f64, f64),
    pub range_b: (f64, f64),
    pub points_a: usize,
    pub points_b: usize,
}

impl GridSpec {
    pub fn square(half_width: f64, points: usize) -> Self {
        Self {
            range_a: (-half_width, half_width),
            range_b: (-half_width, half_width),
            points_a: points,
            points_b: points,
        }
    }

    fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (range.0 + range.1)];
        }
        (0..n)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landscape {
    pub offsets_a: Vec<f64>,
    pub offsets_b: Vec<f64>,
    /// `points_a × points_b`.
    pub values: Array2<f64>,
    pub strict_minima: usize,
}

/// Interior grid points strictly below all eight neighbours.
pub fn count_strict_minima(v: &Array2<f64>) -> usize {
    let (n, m) = v.dim();
    let mut count = 0;
    for i in 1..n.saturating_sub(1) {
        for j in 1..m.saturating_sub(1) {
            let c = v[[i, j]];
            let mut is_min = c.is_finite();
            'nb: for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let w = v[[(i as i64 + di) as usize, (j as i64 + dj) as usize]];
                    if !(c < w) {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            count += is_min as usize;
        }
    }
    count
}

/// Evaluates `objective` with parameters `index_a` and `index_b` moved over
/// the grid and every other parameter frozen. Points are evaluated in
/// parallel; the result does not depend on the thread count.
pub fn landscape_scan<F>(
    objective: F,
    params: &[f64],
    index_a: usize,
    index_b: usize,
    grid: &GridSpec,
) -> Result<Landscape, MetricsError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    for index in [index_a, index_b] {
        if index >= params.len() {
            return Err(MetricsError::IndexOutOfRange {
                index,
                len: params.len(),
            });
        }
    }
    if index_a == index_b || grid.points_a == 0 || grid.points_b == 0 {
        return Err(MetricsError::InvalidInput(
            "need two distinct indices and a non-empty grid".into(),
        ));
    }
    let oa = GridSpec::axis(grid.range_a, grid.points_a);
    let ob = GridSpec::axis(grid.range_b, grid.points_b);
    let flat: Vec<f64> = (0..oa.len() * ob.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / ob.len(), idx % ob.len());
            let mut p = params.to_vec();
            p[index_a] += oa[i];
            p[index_b] += ob[j];
            objective(&p)
        })
        .collect();
    let values = Array2::from_shape_vec((oa.len(), ob.len()), flat).expect("grid shape");
    let strict_minima = count_strict_minima(&values);
    Ok(Landscape {
        offsets_a: oa,
        offsets_b: ob,
        values,
        strict_minima,
    })
}
