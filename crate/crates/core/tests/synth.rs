use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use weaksep::dsp::{Stft, HOP, NUM_BINS};
use weaksep::score::{build_harmonic_activity, HarmonicConfig, PianoRoll, NUM_NOTES};
use weaksep::synth::{generate_clip, generate_roll, render, CorpusConfig, GeneratorConfig, Split, Timbre};

/// Active frames whose analysis window sees one unchanging set of notes.
fn steady_frames(roll: &PianoRoll, instrument: usize) -> Vec<usize> {
    let reach = 1024usize.div_ceil(HOP);
    (reach..roll.frames().saturating_sub(reach))
        .filter(|&t| {
            roll.frame_active(instrument, t)
                && (t - reach..=t + reach)
                    .all(|s| (0..NUM_NOTES).all(|k| roll.get(instrument, k, s) == roll.get(instrument, k, t)))
        })
        .collect()
}

fn worst_energy_ratio(cfg: &CorpusConfig, split: Split, index: usize) -> (usize, f64) {
    let clip = generate_clip(cfg, split, index).unwrap();
    let act = build_harmonic_activity(&clip.roll, &cfg.generator.tuning).unwrap();
    let stft = Stft::new();
    let (mut count, mut worst) = (0, 1.0f64);
    for (i, stem) in clip.stems.iter().enumerate() {
        let spec = stft.analyze(stem).unwrap();
        let frames = spec.frames();
        let m = spec.magnitude.data();
        for t in steady_frames(&clip.roll, i) {
            let (mut inside, mut total) = (0.0, 0.0);
            for f in 0..NUM_BINS {
                let e = m[f * frames + t].powi(2);
                total += e;
                if act.is_active(i, f, t) {
                    inside += e;
                }
            }
            worst = worst.min(inside / total);
            count += 1;
        }
    }
    (count, worst)
}

#[test]
fn steady_stem_energy_lies_in_harmonic_bins() {
    let cfg = CorpusConfig::default();
    let mut checked = 0;
    for index in 0..20 {
        let (n, worst) = worst_energy_ratio(&cfg, Split::Train, index);
        assert!(worst >= 0.9, "clip {index}: {worst}");
        checked += n;
    }
    assert!(checked > 500, "only {checked} steady frames");
}

#[test]
fn single_note_spectrum_peaks_at_partials() {
    let mut roll = PianoRoll::new(1, 128);
    roll.add_note(0, 69, 0, 128).unwrap();
    let timbre = Timbre { decay: 0.5, low: 21, high: 108, attack_ms: 5.0, release_ms: 5.0, level: 1.0 };
    let r = render(&roll, &[timbre], 3, &HarmonicConfig::default(), 64000, 0.9).unwrap();
    let spec = Stft::new().analyze(&r.stems[0]).unwrap();
    let frames = spec.frames();
    let col: Vec<f64> = (0..NUM_BINS).map(|f| spec.magnitude.data()[f * frames + 64]).collect();
    let local_peak = |c: usize| (c - 2..=c + 2).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
    let peaks: Vec<usize> = [56, 113, 169].iter().map(|&c| local_peak(c)).collect();
    assert_eq!(peaks, vec![56, 113, 169]);
    assert!(col[56] > col[113] && col[113] > col[169]);
}

#[test]
fn default_instruments_respect_ranges() {
    let cfg = GeneratorConfig { presence: 1.0, density: 1.0, ..Default::default() };
    let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(11), &cfg).unwrap();
    let ev = roll.note_events();
    assert!(ev.iter().filter(|e| e.instrument == 0).all(|e| (28..=52).contains(&e.note)));
    assert!(ev.iter().any(|e| e.instrument == 0));
    // Bass is monophonic.
    for t in 0..roll.frames() {
        assert!((0..NUM_NOTES).filter(|&k| roll.get(0, k, t)).count() <= 1);
    }
}

#[test]
fn splits_do_not_share_clips() {
    let cfg = CorpusConfig { train: 6, validation: 3, test: 3, ..Default::default() };
    let rolls: Vec<PianoRoll> = Split::ALL
        .iter()
        .flat_map(|&s| (0..cfg.count(s)).map(move |i| (s, i)))
        .map(|(s, i)| generate_clip(&cfg, s, i).unwrap().roll)
        .filter(|r| !r.is_empty())
        .collect();
    for a in 0..rolls.len() {
        for b in a + 1..rolls.len() {
            assert_ne!(rolls[a], rolls[b]);
        }
    }
}

#[test]
fn roll_frames_match_mixture_stft() {
    let cfg = CorpusConfig::default();
    let clip = generate_clip(&cfg, Split::Validation, 0).unwrap();
    assert_eq!(Stft::new().analyze(&clip.mixture).unwrap().frames(), clip.roll.frames());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mixture_is_sum_of_stems(seed in any::<u64>(), correlated in any::<bool>()) {
        let cfg = GeneratorConfig { correlated, clip_seconds: 1.0, ..Default::default() };
        let roll = generate_roll(&mut ChaCha8Rng::seed_from_u64(seed), &cfg).unwrap();
        let timbres: Vec<Timbre> = cfg.instruments.iter().map(|i| i.timbre.clone()).collect();
        let r = render(&roll, &timbres, cfg.partials, &cfg.tuning, cfg.num_samples(), cfg.peak).unwrap();
        for n in 0..r.mixture.len() {
            prop_assert_eq!(r.mixture[n], r.stems.iter().map(|s| s[n]).sum::<f64>());
            prop_assert!(r.mixture[n].abs() <= 1.0);
        }
    }
}
