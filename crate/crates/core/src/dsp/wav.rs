use std::path::Path;

use super::{DspError, SAMPLE_RATE};

/// Read a 16-bit PCM mono 16 kHz WAV file as samples in `[-1, 1)`.
pub fn read_wav(path: &Path) -> Result<Vec<f64>, DspError> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DspError::Format(format!("sample rate {} Hz (expected {SAMPLE_RATE})", spec.sample_rate)));
    }
    if spec.channels != 1 {
        return Err(DspError::Format(format!("{} channels (expected mono)", spec.channels)));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(DspError::Format(format!("{}-bit {:?} (expected 16-bit PCM)", spec.bits_per_sample, spec.sample_format)));
    }
    reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0).map_err(DspError::from))
        .collect()
}

/// Write samples as 16-bit PCM mono 16 kHz, saturating outside `[-1, 1]`.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<(), DspError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let x: Vec<f64> = (0..100).map(|i| (i as f64 / 10.0).sin() * 0.9).collect();
        write_wav(&p, &x).unwrap();
        let y = read_wav(&p).unwrap();
        assert_eq!(x.len(), y.len());
        assert!(x.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 0.5 / 32768.0 + 1e-12));
    }

    #[test]
    fn other_sample_rates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        let spec = hound::WavSpec { channels: 1, sample_rate: 44_100, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(DspError::Format(_))));
    }
}
