//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 32.0;
const KAISER_BETA: f64 = 8.6;

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct Kernel {
    cutoff: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Kernel {
    fn new(ratio: f64) -> Self {
        let cutoff = ratio.min(1.0) * 0.97;
        Self {
            cutoff,
            half_width: ZERO_CROSSINGS / cutoff,
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    /// Kernel value at offset `t` input samples from the output instant.
    fn at(&self, t: f64) -> f64 {
        let r = t / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let x = self.cutoff * t;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        self.cutoff * sinc * w
    }
}

/// Resamples `clip` to `target_rate`.
///
/// Output length is `round(len * target / source)`. When downsampling the
/// kernel cutoff moves to the new Nyquist frequency.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = (clip.samples.len() as f64 * ratio).round() as usize;
    let kernel = Kernel::new(ratio);
    let reach = kernel.half_width.ceil() as i64;
    let input = &clip.samples;
    let n_in = input.len() as i64;

    let g = gcd(target_rate as u64, clip.sample_rate as u64);
    let up = target_rate as u64 / g;
    let down = clip.sample_rate as u64 / g;

    let mut out = Vec::with_capacity(out_len);
    if up <= 4096 {
        // Rational ratio: output instants fall on `up` distinct sub-sample phases.
        let taps = (2 * reach + 1) as usize;
        let table: Vec<Vec<f64>> = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                (0..taps)
                    .map(|j| kernel.at((j as i64 - reach) as f64 - frac))
                    .collect()
            })
            .collect();
        for n in 0..out_len as u64 {
            let num = n * down;
            let base = (num / up) as i64;
            let row = &table[(num % up) as usize];
            let mut acc = 0.0f64;
            for (j, w) in row.iter().enumerate() {
                let k = base + j as i64 - reach;
                if k >= 0 && k < n_in {
                    acc += input[k as usize] as f64 * w;
                }
            }
            out.push(acc as f32);
        }
    } else {
        for n in 0..out_len {
            let center = n as f64 / ratio;
            let lo = ((center - kernel.half_width).ceil() as i64).max(0);
            let hi = ((center + kernel.half_width).floor() as i64).min(n_in - 1);
            let mut acc = 0.0f64;
            for k in lo..=hi {
                acc += input[k as usize] as f64 * kernel.at(k as f64 - center);
            }
            out.push(acc as f32);
        }
    }
    AudioClip::new(out, target_rate, clip.source_id.clone())
}
