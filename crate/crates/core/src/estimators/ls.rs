use crate::error::{Error, Result};
use crate::wavefield::{ChannelVector, PilotSnapshot};

/// Least-squares baseline `h = r / sqrt(P)`.
pub fn ls_estimate(snapshot: &PilotSnapshot) -> Result<ChannelVector> {
    if !(snapshot.power > 0.0) {
        return Err(Error::domain("transmit power must be positive"));
    }
    let scale = 1.0 / snapshot.power.sqrt();
    Ok(ChannelVector(
        snapshot.entries.iter().map(|r| r * scale).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefield::receive_pilot;
    use num_complex::Complex64;

    #[test]
    fn noiseless_passthrough() {
        let h = ChannelVector(vec![Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.25)]);
        let r = PilotSnapshot {
            entries: h.0.iter().map(|c| c * 10.0).collect(),
            power: 100.0,
        };
        assert_eq!(ls_estimate(&r).unwrap(), h);
    }

    #[test]
    fn noise_only_error_is_inverse_power() {
        let m = 32;
        let p = 4.0;
        let zero = ChannelVector::zeros(m);
        let errs: Vec<f64> = (0..5000u64)
            .map(|s| ls_estimate(&receive_pilot(&zero, p, s).unwrap()).unwrap().norm_sqr() / m as f64)
            .collect();
        let n = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - 1.0 / p).abs() < 3.0 * sd / n.sqrt(), "{mean}");
    }
}
