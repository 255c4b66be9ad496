//! Positive and negative (mixture, reference) pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::bank::ClipBank;
use crate::corpus::labels::frame_labels;
use crate::corpus::soundscape::Soundscape;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdSample {
    pub mixture_id: String,
    pub reference_id: String,
    pub target_category: String,
    pub polarity: Polarity,
    /// Frame labels are kept for every sample; weak datasets additionally
    /// expose only the clip bit for training.
    pub frame_labels: Vec<u8>,
}

impl TsdSample {
    pub fn clip_label(&self) -> u8 {
        self.frame_labels.iter().any(|&v| v != 0) as u8
    }
}

/// One positive per distinct category in the soundscape (sorted by name);
/// repeated events of a category merge into one label track. The
/// reference is drawn uniformly from same-category clips not mixed in.
pub fn make_positive_samples<R: Rng + ?Sized>(
    scape: &Soundscape,
    bank: &ClipBank,
    fps: f64,
    frames: usize,
    rng: &mut R,
) -> Vec<TsdSample> {
    let ingredients = scape.ingredients();
    let annotations = scape.annotations();
    let mut out = Vec::new();
    for cat in scape.categories() {
        let pool: Vec<usize> = bank
            .of_category(cat)
            .into_iter()
            .filter(|&i| !ingredients.contains(&bank.entries[i].id.as_str()))
            .collect();
        if pool.is_empty() {
            log::warn!("{}: no unused `{cat}` clip left for a reference; skipping", scape.id);
            continue;
        }
        let reference = &bank.entries[pool[rng.random_range(0..pool.len())]];
        out.push(TsdSample {
            mixture_id: scape.id.clone(),
            reference_id: reference.id.clone(),
            target_category: cat.to_string(),
            polarity: Polarity::Positive,
            frame_labels: frame_labels(&annotations, cat, fps, frames),
        });
    }
    out
}

/// A reference from a category absent from the soundscape, all-zero labels.
pub fn make_negative_sample<R: Rng + ?Sized>(
    scape: &Soundscape,
    bank: &ClipBank,
    frames: usize,
    rng: &mut R,
) -> Result<TsdSample> {
    let present = scape.categories();
    let absent: Vec<String> = bank
        .categories()
        .into_iter()
        .filter(|c| !present.contains(c.as_str()))
        .collect();
    if absent.is_empty() {
        return Err(Error::Infeasible(format!(
            "{}: every bank category occurs in the mixture; no negative reference exists",
            scape.id
        )));
    }
    let cat = &absent[rng.random_range(0..absent.len())];
    let pool = bank.of_category(cat);
    let reference = &bank.entries[pool[rng.random_range(0..pool.len())]];
    Ok(TsdSample {
        mixture_id: scape.id.clone(),
        reference_id: reference.id.clone(),
        target_category: cat.clone(),
        polarity: Polarity::Negative,
        frame_labels: vec![0; frames],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::bank::{ClipEntry, ClipSource, Split};
    use crate::corpus::labels::EventAnnotation;
    use crate::corpus::soundscape::PlacedEvent;
    use crate::dsp::AudioClip;
    use crate::rng::stream;
    use std::sync::Arc;

    fn bank(cats: &[&str], per: usize) -> ClipBank {
        let mut entries = Vec::new();
        for c in cats {
            for k in 0..per {
                entries.push(ClipEntry {
                    id: format!("{c}-{k}"),
                    category: c.to_string(),
                    duration: 1.0,
                    split: Split::Train,
                    source: ClipSource::Memory(Arc::new(AudioClip::silence(10, 22050, "x"))),
                });
            }
        }
        ClipBank::new(entries).unwrap()
    }

    fn scape(events: &[(&str, f64, f64, &str)]) -> Soundscape {
        Soundscape {
            id: "s0".into(),
            mixture: AudioClip::silence(220500, 22050, "s0"),
            duration: 10.0,
            events: events
                .iter()
                .map(|&(c, on, off, clip)| PlacedEvent {
                    annotation: EventAnnotation {
                        category: c.into(),
                        onset: on,
                        offset: off,
                    },
                    clip_id: clip.into(),
                    snr_db: 0.0,
                })
                .collect(),
            background_id: "pink".into(),
        }
    }

    #[test]
    fn one_positive_per_category() {
        let b = bank(&["a", "b", "c", "d"], 3);
        let s = scape(&[("a", 0.0, 1.0, "a-0"), ("b", 2.0, 3.0, "b-1"), ("c", 4.0, 5.0, "c-2")]);
        let p = make_positive_samples(&s, &b, 50.0, 500, &mut stream(0, 0, 0));
        assert_eq!(p.len(), 3);
        for smp in &p {
            assert_eq!(smp.polarity, Polarity::Positive);
            assert!(b.get(&smp.reference_id).unwrap().category == smp.target_category);
            assert!(!s.ingredients().contains(&smp.reference_id.as_str()));
            assert_eq!(smp.clip_label(), 1);
        }
        assert!(make_positive_samples(&scape(&[]), &b, 50.0, 500, &mut stream(0, 0, 0)).is_empty());
    }

    #[test]
    fn repeated_category_merges_into_union() {
        let b = bank(&["a", "b"], 4);
        let s = scape(&[("a", 1.0, 2.0, "a-0"), ("a", 5.0, 5.5, "a-1")]);
        let p = make_positive_samples(&s, &b, 50.0, 500, &mut stream(0, 0, 0));
        assert_eq!(p.len(), 1);
        let expect: Vec<u8> = (0..500).map(|i| ((50..100).contains(&i) || (250..275).contains(&i)) as u8).collect();
        assert_eq!(p[0].frame_labels, expect);
        assert!(p[0].reference_id == "a-2" || p[0].reference_id == "a-3");
    }

    #[test]
    fn exhausted_reference_pool_is_skipped() {
        let b = bank(&["a", "b"], 2);
        let s = scape(&[("a", 1.0, 2.0, "a-0"), ("a", 3.0, 4.0, "a-1"), ("b", 0.0, 1.0, "b-0")]);
        let p = make_positive_samples(&s, &b, 50.0, 500, &mut stream(0, 0, 0));
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].target_category, "b");
    }

    #[test]
    fn negatives() {
        let cats: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = cats.iter().map(|s| s.as_str()).collect();
        let b = bank(&refs, 2);
        let ev: Vec<(&str, f64, f64, &str)> = refs[..9].iter().map(|&c| (c, 0.0, 1.0, "none")).collect();
        let n = make_negative_sample(&scape(&ev), &b, 500, &mut stream(0, 0, 0)).unwrap();
        assert_eq!(n.target_category, "c9");
        assert_eq!(n.frame_labels.iter().map(|&v| v as u32).sum::<u32>(), 0);
        assert_eq!(n.clip_label(), 0);

        let all: Vec<(&str, f64, f64, &str)> = refs.iter().map(|&c| (c, 0.0, 1.0, "none")).collect();
        assert!(matches!(make_negative_sample(&scape(&all), &b, 500, &mut stream(0, 0, 0)), Err(Error::Infeasible(_))));
    }
}
