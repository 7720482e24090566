use rand::Rng;

use crate::autodiff::Array;

/// A mixture assembled from separated sources of different batch samples.
#[derive(Clone, Debug, PartialEq)]
pub struct RemixBatch {
    /// Batch sample chosen for each instrument.
    pub picks: Vec<usize>,
    /// `sum_i sources[picks[i]][i]`, shape `[F, T]`.
    pub mixture: Array,
    /// Row `i` is `labels[picks[i]][i]`, shape `[I, ...]`.
    pub labels: Array,
}

/// Draws one sample index per instrument, uniformly over the batch. With
/// `exclude` set (and more than one sample) that index is never drawn.
pub fn remix_picks(rng: &mut impl Rng, batch: usize, instruments: usize, exclude: Option<usize>) -> Vec<usize> {
    assert!(batch > 0, "remix needs a non-empty batch");
    (0..instruments)
        .map(|_| match exclude {
            Some(e) if batch > 1 => {
                let k = rng.gen_range(0..batch - 1);
                if k >= e {
                    k + 1
                } else {
                    k
                }
            }
            _ => rng.gen_range(0..batch),
        })
        .collect()
}

/// Remix from per-sample separated magnitudes `[I, F, T]` and labels `[I, ...]`.
pub fn remix_sample(
    sources: &[Array],
    labels: &[Array],
    rng: &mut impl Rng,
    exclude: Option<usize>,
) -> RemixBatch {
    assert_eq!(sources.len(), labels.len(), "one label per source set");
    let instruments = sources[0].shape()[0];
    let picks = remix_picks(rng, sources.len(), instruments, exclude);
    let plane = sources[0].len() / instruments;
    let mut mixture = vec![0.0; plane];
    for (i, &a) in picks.iter().enumerate() {
        let s = &sources[a].data()[i * plane..(i + 1) * plane];
        mixture.iter_mut().zip(s).for_each(|(m, v)| *m += v);
    }
    let row = labels[0].len() / instruments;
    let mut y = Vec::with_capacity(labels[0].len());
    for (i, &a) in picks.iter().enumerate() {
        y.extend_from_slice(&labels[a].data()[i * row..(i + 1) * row]);
    }
    RemixBatch {
        mixture: Array::new(&sources[0].shape()[1..], mixture).expect("plane shape"),
        labels: Array::new(labels[0].shape(), y).expect("label shape"),
        picks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batch_of_one_remixes_itself() {
        let s = Array::from_fn(&[3, 2, 2], |k| k as f64);
        let y = Array::from_fn(&[3, 88, 2], |k| (k % 3) as f64);
        let r = remix_sample(&[s.clone()], &[y.clone()], &mut ChaCha8Rng::seed_from_u64(0), Some(0));
        assert_eq!(r.picks, vec![0, 0, 0]);
        assert_eq!(r.labels, y);
        let sum: Vec<f64> = (0..4).map(|k| s.data()[k] + s.data()[4 + k] + s.data()[8 + k]).collect();
        assert_eq!(r.mixture.data(), &sum[..]);
    }

    #[test]
    fn exclusion_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert!(remix_picks(&mut rng, 3, 4, Some(1)).iter().all(|&a| a != 1));
        }
    }
}
