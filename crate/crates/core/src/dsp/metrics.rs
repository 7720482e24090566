use super::DspError;

/// Magnitude bound on reported SI-SDR values, in dB.
pub const SI_SDR_CAP_DB: f64 = 100.0;

/// Scale-invariant signal-to-distortion ratio of `estimate` against
/// `reference`, in dB, clipped to `[-SI_SDR_CAP_DB, SI_SDR_CAP_DB]`.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64, DspError> {
    if estimate.len() != reference.len() {
        return Err(DspError::LengthMismatch(estimate.len(), reference.len()));
    }
    let ref_energy: f64 = reference.iter().map(|s| s * s).sum();
    if ref_energy == 0.0 {
        return Err(DspError::ZeroReference);
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(e, s)| e * s).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut noise) = (0.0, 0.0);
    for (e, s) in estimate.iter().zip(reference) {
        let t = alpha * s;
        target += t * t;
        noise += (t - e) * (t - e);
    }
    if noise == 0.0 {
        return Ok(if target == 0.0 { -SI_SDR_CAP_DB } else { SI_SDR_CAP_DB });
    }
    if target == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect()
    }

    #[test]
    fn perfect_and_scaled_estimates_hit_cap() {
        let s = signal(1000);
        let half: Vec<f64> = s.iter().map(|x| 0.5 * x).collect();
        assert_eq!(si_sdr(&s, &s).unwrap(), SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&half, &s).unwrap(), SI_SDR_CAP_DB);
    }

    #[test]
    fn orthogonal_noise_at_equal_power_is_zero_db() {
        // Alternating-sign noise is orthogonal to a signal constant on pairs.
        let s: Vec<f64> = (0..2000).map(|i| if (i / 2) % 3 == 0 { 1.0 } else { -0.5 }).collect();
        let p: f64 = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        let noise: Vec<f64> = (0..2000).map(|i| if i % 2 == 0 { p.sqrt() } else { -p.sqrt() }).collect();
        let dot: f64 = s.iter().zip(&noise).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
        let est: Vec<f64> = s.iter().zip(&noise).map(|(a, b)| a + b).collect();
        assert!(si_sdr(&est, &s).unwrap().abs() < 1e-9);
    }

    #[test]
    fn positive_scaling_is_invariant() {
        let s = signal(500);
        let est: Vec<f64> = s.iter().enumerate().map(|(i, x)| x + 0.3 * ((i % 7) as f64 - 3.0)).collect();
        let base = si_sdr(&est, &s).unwrap();
        for k in [1e-3, 0.5, 3.0, 1e4] {
            let scaled: Vec<f64> = est.iter().map(|x| k * x).collect();
            assert!((si_sdr(&scaled, &s).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_zero_reference_and_length_mismatch() {
        assert!(matches!(si_sdr(&[1.0, 2.0], &[0.0, 0.0]), Err(DspError::ZeroReference)));
        assert!(matches!(si_sdr(&[1.0], &[1.0, 2.0]), Err(DspError::LengthMismatch(1, 2))));
    }
}
