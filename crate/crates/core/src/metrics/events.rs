use super::MetricsError;
use crate::ode::Trajectory;

/// Spatial maximum of every snapshot.
pub fn spatial_max(traj: &Trajectory) -> Vec<f64> {
    (0..traj.len())
        .map(|i| traj.state(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Times at which `series` enters the region above `threshold`: sample `i`
/// is an event when `series[i] > threshold ≥ series[i-1]`.
pub fn upward_crossings(times: &[f64], series: &[f64], threshold: f64) -> Vec<f64> {
    (1..series.len().min(times.len()))
        .filter(|&i| series[i] > threshold && series[i - 1] <= threshold)
        .map(|i| times[i])
        .collect()
}

/// Mean time between events, `(1/N) Σ_{i=1}^{N-1} (t_{i+1} − t_i)` over the
/// `N` events. The sum has `N − 1` terms; dividing by `N` follows the
/// published definition.
pub fn return_period_single(times: &[f64], series: &[f64], threshold: f64) -> Result<f64, MetricsError> {
    if times.len() != series.len() {
        return Err(MetricsError::Alignment(format!(
            "{} times for {} values",
            times.len(),
            series.len()
        )));
    }
    let ev = upward_crossings(times, series, threshold);
    if ev.len() < 2 {
        return Err(MetricsError::InsufficientEvents {
            threshold,
            events: ev.len(),
        });
    }
    Ok(period_of_events(&ev))
}

pub fn period_of_events(events: &[f64]) -> f64 {
    let n = events.len() as f64;
    events.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / n
}

/// `(threshold, period)` for every threshold with at least two events;
/// thresholds without enough events are left out.
pub fn return_period(times: &[f64], series: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let mut out = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        match return_period_single(times, series, th) {
            Ok(p) => out.push((th, p)),
            Err(MetricsError::InsufficientEvents { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Return periods pooled over several independent series: events and
/// spans from every series share one `N`.
pub fn pooled_return_period(runs: &[(Vec<f64>, Vec<f64>)], thresholds: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &th in thresholds {
        let mut n = 0usize;
        let mut span = 0.0;
        for (t, s) in runs {
            let ev = upward_crossings(t, s, th);
            n += ev.len();
            if ev.len() >= 2 {
                span += ev[ev.len() - 1] - ev[0];
            }
        }
        if n >= 2 && span > 0.0 {
            out.push((th, span / n as f64));
        }
    }
    out
}

/// L² distance between two return-period curves over their shared thresholds.
pub fn curve_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> Option<f64> {
    let mut acc = 0.0;
    let mut n = 0;
    for &(th, pa) in a {
        if let Some(&(_, pb)) = b.iter().find(|(t, _)| *t == th) {
            acc += (pa - pb).powi(2);
            n += 1;
        }
    }
    (n > 0).then(|| (acc / n as f64).sqrt())
}
