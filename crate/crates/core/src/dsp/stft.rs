//! Short-time Fourier transform magnitude.
//!
//! Frames are centred on sample `i * hop` for every `i * hop < len`, with
//! reflect padding of `window / 2` on both sides and a periodic Hann window.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

pub fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos())
        .collect()
}

/// Number of centred frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

fn reflect_pad(x: &[f32], pad: usize) -> Vec<f64> {
    let n = x.len() as i64;
    let total = x.len() + 2 * pad;
    (0..total)
        .map(|i| {
            let mut j = i as i64 - pad as i64;
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
            x[j as usize] as f64
        })
        .collect()
}

/// One-sided STFT magnitude, shaped `frames x (window / 2 + 1)`.
pub fn stft_magnitude(clip: &AudioClip, window_size: usize, hop_size: usize) -> Result<Array2<f64>> {
    if window_size < 2 {
        return Err(Error::InvalidArgument(format!("window size {window_size} < 2")));
    }
    if hop_size < 1 {
        return Err(Error::InvalidArgument("hop size must be at least 1".into()));
    }
    let pad = window_size / 2;
    if clip.samples.len() <= pad {
        return Err(Error::TooShort(format!(
            "{} samples cannot be reflect-padded by {pad} for a {window_size}-sample window",
            clip.samples.len()
        )));
    }
    let padded = reflect_pad(&clip.samples, pad);
    let frames = frame_count(clip.samples.len(), hop_size);
    let bins = window_size / 2 + 1;
    let window = hann_window(window_size);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_size);

    let mut out = Array2::<f64>::zeros((frames, bins));
    let mut buf = vec![Complex::new(0.0, 0.0); window_size];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (f, mut row) in out.rows_mut().into_iter().enumerate() {
        let start = f * hop_size;
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(padded[start + k] * window[k], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (b, v) in row.iter_mut().enumerate() {
            *v = buf[b].norm();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_clip_gives_zero_matrix() {
        let clip = AudioClip::silence(5000, 22050, "z");
        let m = stft_magnitude(&clip, 512, 128).unwrap();
        assert_eq!(m.ncols(), 257);
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_for_ten_seconds_at_fifty_fps() {
        let clip = AudioClip::silence(220_500, 22050, "z");
        let m = stft_magnitude(&clip, 2048, 441).unwrap();
        assert_eq!(m.dim(), (500, 1025));
    }

    #[test]
    fn bin_centred_sine_has_single_dominant_bin() {
        let n = 1024;
        let bin = 40;
        let rate = 16000;
        let freq = bin as f64 * rate as f64 / n as f64;
        let samples = (0..8000)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        let clip = AudioClip::new(samples, rate, "s").unwrap();
        let m = stft_magnitude(&clip, n, 256).unwrap();
        // Interior frame, away from reflect padding.
        let row = m.row(m.nrows() / 2);
        let peak = row[bin];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, bin);
        for (b, &v) in row.iter().enumerate() {
            if (b as i64 - bin as i64).abs() > 1 {
                assert!(peak >= 10.0 * v, "bin {b}: {v} vs peak {peak}");
            }
        }
    }

    #[test]
    fn magnitudes_are_nonnegative() {
        let samples = (0..3000).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
        let clip = AudioClip::new(samples, 8000, "n").unwrap();
        let m = stft_magnitude(&clip, 256, 64).unwrap();
        assert!(m.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn too_short_clip_errors() {
        let clip = AudioClip::silence(100, 8000, "s");
        assert!(matches!(stft_magnitude(&clip, 400, 200), Err(Error::TooShort(_))));
        assert!(stft_magnitude(&clip, 1, 1).is_err());
        assert!(stft_magnitude(&clip, 64, 0).is_err());
    }
}
