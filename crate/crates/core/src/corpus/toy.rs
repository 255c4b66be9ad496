//! Synthetic clip bank for desk-scale runs.
//!
//! Each category is a signal family (steady tone, chirp or amplitude-
//! modulated noise band) centred on its own frequency band; bands are
//! log-spaced so that a plain band-energy classifier separates them.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::bank::{ClipBank, ClipEntry, ClipSource, Split};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::rng::{purpose, stream};

pub const TOY_SAMPLE_RATE: u32 = 22050;
const BAND_LOW_HZ: f64 = 200.0;
const BAND_HIGH_HZ: f64 = 8000.0;
const CLIP_RMS: f64 = 0.1;
/// Minimum band-energy oracle accuracy accepted at generation time.
pub const ORACLE_MIN_ACCURACY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Tone,
    Chirp,
    Noise,
}

impl Family {
    fn of(category: usize) -> Self {
        [Family::Tone, Family::Chirp, Family::Noise][category % 3]
    }

    fn name(self) -> &'static str {
        match self {
            Family::Tone => "tone",
            Family::Chirp => "chirp",
            Family::Noise => "noise",
        }
    }
}

/// Parameters of one toy category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCategory {
    pub name: String,
    pub family: Family,
    pub centre_hz: f64,
    /// Relative half-width of the occupied band.
    pub half_width: f64,
}

impl ToyCategory {
    pub fn band(&self) -> (f64, f64) {
        (self.centre_hz / (1.0 + self.half_width), self.centre_hz * (1.0 + self.half_width))
    }
}

pub fn toy_categories(n: usize) -> Vec<ToyCategory> {
    let ratio = if n > 1 {
        (BAND_HIGH_HZ / BAND_LOW_HZ).powf(1.0 / (n - 1) as f64)
    } else {
        2.0
    };
    let half_width = ((ratio - 1.0) / 3.0).min(0.15);
    (0..n)
        .map(|c| {
            let family = Family::of(c);
            ToyCategory {
                name: format!("{}{c}", family.name()),
                family,
                centre_hz: BAND_LOW_HZ * ratio.powi(c as i32),
                half_width,
            }
        })
        .collect()
}

/// One jittered realisation of `cat`, 1 to 4 seconds long, RMS-normalised.
pub fn synth_clip<R: Rng + ?Sized>(cat: &ToyCategory, rng: &mut R) -> Vec<f32> {
    let sr = TOY_SAMPLE_RATE as f64;
    let dur = rng.random_range(1.0..4.0);
    let n = (dur * sr) as usize;
    let (lo, hi) = cat.band();
    let mut x = vec![0.0f64; n];
    match cat.family {
        Family::Tone => {
            let f = cat.centre_hz * rng.random_range(0.97..1.03);
            let vib_rate = rng.random_range(3.0..7.0);
            let vib_depth = rng.random_range(0.0..0.01);
            let mut phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let fi = f * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin());
                phase += 2.0 * PI * fi / sr;
                *v = phase.sin();
            }
        }
        Family::Chirp => {
            let margin = cat.half_width * 0.2;
            let (a, b) = (lo * (1.0 + margin), hi / (1.0 + margin));
            let (f0, f1) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            let mut phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let frac = i as f64 / n as f64;
                let fi = f0 * (f1 / f0).powf(frac);
                phase += 2.0 * PI * fi / sr;
                *v = phase.sin();
            }
        }
        Family::Noise => {
            let partials: Vec<(f64, f64)> = (0..40)
                .map(|_| (rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
                .collect();
            let am_rate = rng.random_range(3.0..10.0);
            let am_depth = rng.random_range(0.5..0.9);
            let am_phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let s: f64 = partials.iter().map(|&(f, p)| (2.0 * PI * f * t + p).sin()).sum();
                let am = 1.0 - am_depth * 0.5 * (1.0 + (2.0 * PI * am_rate * t + am_phase).cos());
                *v = s * am;
            }
        }
    }
    let attack = (rng.random_range(0.01..0.08) * sr) as usize;
    let release = (rng.random_range(0.05..0.2) * sr) as usize;
    for (i, v) in x.iter_mut().enumerate() {
        let a = if i < attack { i as f64 / attack as f64 } else { 1.0 };
        let r = if n - i < release { (n - i) as f64 / release as f64 } else { 1.0 };
        *v *= a.min(r);
    }
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v * CLIP_RMS / rms) as f32).collect()
}

/// Per-band energy densities of a clip, one per category band.
pub fn band_energies(samples: &[f32], sample_rate: u32, cats: &[ToyCategory]) -> Vec<f64> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(s as f64, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let hz_per_bin = sample_rate as f64 / n as f64;
    cats.iter()
        .map(|c| {
            let (lo, hi) = c.band();
            let (b0, b1) = ((lo / hz_per_bin).floor() as usize, (hi / hz_per_bin).ceil() as usize);
            let b1 = b1.min(n / 2);
            let e: f64 = buf[b0..=b1].iter().map(|z| z.norm_sqr()).sum();
            e / (b1 + 1 - b0) as f64
        })
        .collect()
}

/// Category predicted by the band-energy oracle.
pub fn oracle_classify(samples: &[f32], sample_rate: u32, cats: &[ToyCategory]) -> usize {
    let e = band_energies(samples, sample_rate, cats);
    (0..e.len()).max_by(|&a, &b| e[a].total_cmp(&e[b])).unwrap_or(0)
}

/// Clips per split for one category: at least two in validation and test.
fn split_counts(n: usize) -> (usize, usize, usize) {
    let held = ((n as f64 * 0.2).round() as usize).max(2);
    (n - 2 * held, held, held)
}

#[derive(Debug, Clone)]
pub struct ToyBank {
    pub bank: ClipBank,
    pub categories: Vec<ToyCategory>,
    pub oracle_accuracy: f64,
}

/// `n_categories` families with `clips_per_category` jittered clips each,
/// split 60/20/20 per category. Fails if the band-energy oracle misclassifies
/// more than 5% of the clips.
pub fn synth_toy_bank(seed: u64, n_categories: usize, clips_per_category: usize) -> Result<ToyBank> {
    if n_categories < 2 {
        return Err(Error::InvalidArgument(format!(
            "a toy bank needs at least 2 categories, got {n_categories}"
        )));
    }
    if clips_per_category < 6 {
        return Err(Error::Infeasible(format!(
            "{clips_per_category} clips per category cannot give every split two clips; use at least 6"
        )));
    }
    let cats = toy_categories(n_categories);
    let (n_train, n_val, _) = split_counts(clips_per_category);
    let mut entries = Vec::with_capacity(n_categories * clips_per_category);
    let mut correct = 0usize;
    for (c, cat) in cats.iter().enumerate() {
        for k in 0..clips_per_category {
            let mut rng = stream(seed, purpose::TOY_BANK, (c * clips_per_category + k) as u64);
            let samples = synth_clip(cat, &mut rng);
            if oracle_classify(&samples, TOY_SAMPLE_RATE, &cats) == c {
                correct += 1;
            }
            let id = format!("{}-{k:03}", cat.name);
            let clip = AudioClip::new(samples, TOY_SAMPLE_RATE, id.clone())?;
            let split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            entries.push(ClipEntry {
                id,
                category: cat.name.clone(),
                duration: clip.duration(),
                split,
                source: ClipSource::Memory(Arc::new(clip)),
            });
        }
    }
    let oracle_accuracy = correct as f64 / entries.len() as f64;
    if oracle_accuracy < ORACLE_MIN_ACCURACY {
        return Err(Error::Infeasible(format!(
            "toy categories are not separable: band-energy oracle accuracy {oracle_accuracy:.3} < {ORACLE_MIN_ACCURACY}"
        )));
    }
    Ok(ToyBank {
        bank: ClipBank::new(entries)?,
        categories: cats,
        oracle_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_size_and_balance() {
        let tb = synth_toy_bank(1, 10, 20).unwrap();
        assert_eq!(tb.bank.len(), 200);
        assert!(tb.bank.category_counts().values().all(|&n| n == 20));
        assert!(tb.oracle_accuracy >= ORACLE_MIN_ACCURACY);
        for cat in tb.bank.categories() {
            for s in Split::ALL {
                assert!(tb.bank.split(s).of_category(&cat).len() >= 2);
            }
        }
    }

    #[test]
    fn clips_are_jittered_and_in_range() {
        let tb = synth_toy_bank(2, 3, 6).unwrap();
        let a = tb.bank.entries[0].load(TOY_SAMPLE_RATE).unwrap();
        let b = tb.bank.entries[1].load(TOY_SAMPLE_RATE).unwrap();
        assert_ne!(a.samples, b.samples);
        for e in &tb.bank.entries {
            assert!((1.0..4.0).contains(&e.duration), "{}", e.duration);
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_toy_bank(5, 3, 6).unwrap();
        let b = synth_toy_bank(5, 3, 6).unwrap();
        let c = synth_toy_bank(6, 3, 6).unwrap();
        let first = |t: &ToyBank| t.bank.entries[0].load(TOY_SAMPLE_RATE).unwrap().samples;
        assert_eq!(first(&a), first(&b));
        assert_ne!(first(&a), first(&c));
    }

    #[test]
    fn bands_do_not_overlap() {
        for n in [2, 6, 10] {
            let cats = toy_categories(n);
            for w in cats.windows(2) {
                assert!(w[0].band().1 < w[1].band().0);
            }
            assert!(cats.last().unwrap().band().1 < TOY_SAMPLE_RATE as f64 / 2.0);
        }
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(matches!(synth_toy_bank(0, 1, 10), Err(Error::InvalidArgument(_))));
        assert!(matches!(synth_toy_bank(0, 3, 3), Err(Error::Infeasible(_))));
    }
}
