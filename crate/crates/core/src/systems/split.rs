use super::SystemsError;
use crate::ode::Trajectory;

/// Cuts `traj` into pieces of `length` samples starting every `stride`
/// samples. Each piece is re-timed to start at zero.
pub fn ergodic_split(traj: &Trajectory, length: usize, stride: usize) -> Result<Vec<Trajectory>, SystemsError> {
    if length > traj.len() {
        return Err(SystemsError::LengthExceedsData {
            length,
            available: traj.len(),
        });
    }
    if length < 2 || stride == 0 {
        return Err(SystemsError::InvalidConfig(
            "need length ≥ 2 and a positive stride".into(),
        ));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= traj.len() {
        let piece = traj.slice(start, start + length);
        let t0 = piece.times()[0];
        let times = piece.times().iter().map(|t| t - t0).collect();
        let (_, states) = piece.into_parts();
        out.push(Trajectory::new(times, states)?);
        start += stride;
    }
    Ok(out)
}
