//! Soundscape synthesis: events from a clip bank placed on pink noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::corpus::bank::ClipBank;
use crate::corpus::labels::EventAnnotation;
use crate::dsp::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SoundscapeConfig {
    pub duration: f64,
    pub sample_rate: u32,
    pub min_events: usize,
    pub max_events: usize,
    pub snr_db_min: f64,
    pub snr_db_max: f64,
    pub background_rms: f64,
}

impl Default for SoundscapeConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            sample_rate: 22050,
            min_events: 1,
            max_events: 9,
            snr_db_min: -5.0,
            snr_db_max: 20.0,
            background_rms: 0.05,
        }
    }
}

impl SoundscapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("soundscape duration and sample rate must be positive".into()));
        }
        if self.min_events > self.max_events || self.snr_db_min > self.snr_db_max {
            return Err(Error::Config("soundscape ranges must satisfy min <= max".into()));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }
}

/// One placed event with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedEvent {
    #[serde(flatten)]
    pub annotation: EventAnnotation,
    pub clip_id: String,
    pub snr_db: f64,
}

#[derive(Debug, Clone)]
pub struct Soundscape {
    pub id: String,
    pub mixture: AudioClip,
    pub duration: f64,
    pub events: Vec<PlacedEvent>,
    pub background_id: String,
}

impl Soundscape {
    pub fn annotations(&self) -> Vec<EventAnnotation> {
        self.events.iter().map(|e| e.annotation.clone()).collect()
    }

    /// Clip ids mixed into this soundscape.
    pub fn ingredients(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.clip_id.as_str()).collect()
    }

    pub fn categories(&self) -> std::collections::BTreeSet<&str> {
        self.events.iter().map(|e| e.annotation.category.as_str()).collect()
    }
}

/// Pink (1/f power) noise with the given RMS, shaped in the frequency domain.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, rms: f64, rng: &mut R) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, z) in buf.iter_mut().enumerate() {
        let f = k.min(n - k);
        *z = if f == 0 { Complex::new(0.0, 0.0) } else { *z / (f as f64).sqrt() };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let g = if cur > 0.0 { rms / cur } else { 0.0 };
    x.into_iter().map(|v| v * g).collect()
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// Places a uniformly drawn number of events from `bank` on pink noise.
/// Each event's onset is uniform over the positions where it fits; clips
/// longer than the soundscape are trimmed and start at zero. Event gain
/// sets the event-to-background RMS ratio to an SNR drawn uniformly.
pub fn synthesize_soundscape<R: Rng + ?Sized>(
    id: &str,
    bank: &ClipBank,
    cfg: &SoundscapeConfig,
    rng: &mut R,
) -> Result<Soundscape> {
    cfg.validate()?;
    let k = rng.random_range(cfg.min_events..=cfg.max_events);
    if k > 0 && bank.is_empty() {
        return Err(Error::Data("cannot place events from an empty clip bank".into()));
    }
    let n = cfg.samples();
    let sr = cfg.sample_rate as f64;
    let mut mix = pink_noise(n, cfg.background_rms, rng);
    let bg_rms = rms(&mix);
    let mut events = Vec::with_capacity(k);
    for _ in 0..k {
        let entry = &bank.entries[rng.random_range(0..bank.len())];
        let clip = entry.load(cfg.sample_rate)?;
        let len = clip.len().min(n);
        let onset = if len < n { rng.random_range(0..=n - len) } else { 0 };
        let snr_db = rng.random_range(cfg.snr_db_min..=cfg.snr_db_max);
        let src: Vec<f64> = clip.samples[..len].iter().map(|&s| s as f64).collect();
        let src_rms = rms(&src);
        if len == 0 || src_rms == 0.0 {
            continue;
        }
        let gain = bg_rms * 10f64.powf(snr_db / 20.0) / src_rms;
        for (m, s) in mix[onset..onset + len].iter_mut().zip(&src) {
            *m += gain * s;
        }
        events.push(PlacedEvent {
            annotation: EventAnnotation {
                category: entry.category.clone(),
                onset: onset as f64 / sr,
                offset: (onset + len) as f64 / sr,
            },
            clip_id: entry.id.clone(),
            snr_db,
        });
    }
    let duration = n as f64 / sr;
    for e in &events {
        e.annotation.validate(duration)?;
    }
    Ok(Soundscape {
        id: id.to_string(),
        mixture: AudioClip::new(mix.iter().map(|&v| v as f32).collect(), cfg.sample_rate, id)?,
        duration,
        events,
        background_id: format!("pink:{id}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bank::{ClipEntry, ClipSource, Split};
    use crate::rng::{purpose, stream};
    use std::sync::Arc;

    fn bank_of_tone(len_s: f64) -> ClipBank {
        let sr = 22050;
        let n = (len_s * sr as f64) as usize;
        let entries = (0..2)
            .map(|i| {
                let s: Vec<f32> = (0..n).map(|t| (t as f32 * 0.3).sin() * 0.1).collect();
                let clip = AudioClip::new(s, sr, format!("tone{i}")).unwrap();
                ClipEntry {
                    id: format!("tone{i}"),
                    category: "tone".into(),
                    duration: clip.duration(),
                    split: Split::Train,
                    source: ClipSource::Memory(Arc::new(clip)),
                }
            })
            .collect();
        ClipBank::new(entries).unwrap()
    }

    fn cfg(lo: usize, hi: usize) -> SoundscapeConfig {
        SoundscapeConfig {
            min_events: lo,
            max_events: hi,
            ..Default::default()
        }
    }

    #[test]
    fn no_events_is_background_only() {
        let bank = bank_of_tone(1.0);
        let mut r1 = stream(1, purpose::SOUNDSCAPE, 0);
        let s = synthesize_soundscape("s", &bank, &cfg(0, 0), &mut r1).unwrap();
        assert!(s.events.is_empty());
        let mut r2 = stream(1, purpose::SOUNDSCAPE, 0);
        let _k: usize = r2.random_range(0..=0);
        let bg = pink_noise(s.mixture.len(), 0.05, &mut r2);
        let bg32: Vec<f32> = bg.iter().map(|&v| v as f32).collect();
        assert_eq!(s.mixture.samples, bg32);
        assert_eq!(s.mixture.len(), 220500);
    }

    #[test]
    fn deterministic_in_stream() {
        let bank = bank_of_tone(1.0);
        let a = synthesize_soundscape("s", &bank, &cfg(1, 1), &mut stream(9, purpose::SOUNDSCAPE, 2)).unwrap();
        let b = synthesize_soundscape("s", &bank, &cfg(1, 1), &mut stream(9, purpose::SOUNDSCAPE, 2)).unwrap();
        assert_eq!(a.mixture.samples, b.mixture.samples);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn event_region_is_louder_than_background() {
        let bank = bank_of_tone(1.0);
        let c = SoundscapeConfig {
            snr_db_min: 20.0,
            snr_db_max: 20.0,
            ..cfg(1, 1)
        };
        let s = synthesize_soundscape("s", &bank, &c, &mut stream(3, purpose::SOUNDSCAPE, 0)).unwrap();
        let a = &s.events[0].annotation;
        assert!((a.offset - a.onset - 1.0).abs() < 1e-9);
        let sr = 22050.0;
        let (on, off) = ((a.onset * sr).round() as usize, (a.offset * sr).round() as usize);
        let event_rms = s.mixture.rms(on, off);
        let quiet = if on > 22050 { s.mixture.rms(0, on) } else { s.mixture.rms(off, s.mixture.len()) };
        assert!(event_rms > 5.0 * quiet, "{event_rms} vs {quiet}");
    }

    #[test]
    fn long_clips_are_trimmed() {
        let bank = bank_of_tone(12.0);
        let s = synthesize_soundscape("s", &bank, &cfg(2, 2), &mut stream(3, purpose::SOUNDSCAPE, 1)).unwrap();
        for e in &s.events {
            assert_eq!(e.annotation.onset, 0.0);
            assert_eq!(e.annotation.offset, 10.0);
        }
    }

    #[test]
    fn pink_noise_spectrum_slopes_down() {
        let x = pink_noise(1 << 14, 0.1, &mut stream(0, 0, 0));
        assert!((rms(&x) - 0.1).abs() < 1e-9);
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let band = |a: usize, b: usize| buf[a..b].iter().map(|z| z.norm_sqr()).sum::<f64>() / (b - a) as f64;
        // Power density falls by about 10x per decade.
        let ratio = band(100, 200) / band(1000, 2000);
        assert!((5.0..20.0).contains(&ratio), "{ratio}");
    }
}
