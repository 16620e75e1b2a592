use num_complex::Complex64;

use super::unwrap;
use crate::error::{Error, Result};
use crate::scene::SnapshotTensor;

/// Fills the nulled DC bin of an equalized snapshot.
///
/// The magnitude is the mean of the two neighbours; the phase continues the
/// lower neighbour by the mean unwrapped phase step across the band. The
/// step is taken from each side of DC separately so the empty bin does not
/// disturb unwrapping.
pub fn interpolate_dc(snapshot: &[Complex64], dc_index: usize) -> Result<Vec<Complex64>> {
    let n = snapshot.len();
    if n < 3 {
        return Err(Error::TooFewSubcarriers(n));
    }
    if dc_index == 0 || dc_index + 1 >= n {
        return Err(Error::InvalidParameter(format!("DC index {dc_index} has no neighbours in {n} bins")));
    }
    let lower = snapshot[dc_index - 1];
    let upper = snapshot[dc_index + 1];

    let mut step_sum = 0.0;
    let mut steps = 0usize;
    for side in [&snapshot[..dc_index], &snapshot[dc_index + 1..]] {
        if side.len() >= 2 {
            let u = unwrap(&side.iter().map(|c| c.arg()).collect::<Vec<_>>());
            step_sum += u[u.len() - 1] - u[0];
            steps += u.len() - 1;
        }
    }
    let phi = if steps > 0 {
        step_sum / steps as f64
    } else {
        // one bin per side: split the two-bin gap
        super::wrap_phase(upper.arg() - lower.arg()) / 2.0
    };

    let mut out = snapshot.to_vec();
    out[dc_index] = Complex64::from_polar((lower.norm() + upper.norm()) / 2.0, lower.arg() + phi);
    Ok(out)
}

/// [`interpolate_dc`] applied to every snapshot.
pub fn interpolate_dc_tensor(tensor: &SnapshotTensor) -> Result<SnapshotTensor> {
    let dc = tensor.config.dc_index();
    tensor.map_snapshots(|_, _, s| interpolate_dc(&s, dc))
}
