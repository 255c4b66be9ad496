//! Brute-force segment scoring on an integer 10 ms grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsdnet_core::metrics::{segment_tabulate, Counts, Event};

/// Events as `[on, off)` tick pairs; 100 ticks per second.
fn raster(events: &[(u32, u32)], ticks: u32) -> Vec<bool> {
    (0..ticks)
        .map(|t| events.iter().any(|&(a, b)| a <= t && t < b))
        .collect()
}

pub fn brute_force(pred: &[(u32, u32)], reference: &[(u32, u32)], ticks: u32, seg_ticks: u32) -> Counts {
    let (p, r) = (raster(pred, ticks), raster(reference, ticks));
    let mut c = Counts::default();
    for s in (0..ticks).step_by(seg_ticks as usize) {
        let e = (s + seg_ticks).min(ticks) as usize;
        let pa = p[s as usize..e].iter().any(|&v| v);
        let ra = r[s as usize..e].iter().any(|&v| v);
        match (pa, ra) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

fn random_events(rng: &mut ChaCha8Rng, ticks: u32) -> Vec<(u32, u32)> {
    (0..rng.random_range(0..5))
        .map(|_| {
            let a = rng.random_range(0..ticks);
            let b = rng.random_range(a + 1..=ticks.min(a + 400));
            (a, b)
        })
        .collect()
}

/// Number of disagreeing cases out of `cases`.
pub fn compare(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for case in 0..cases {
        let ticks = rng.random_range(50..=1000);
        let seg_ticks = [50, 100, 100, 100, 200][rng.random_range(0..5)];
        let pred = random_events(&mut rng, ticks);
        let reference = random_events(&mut rng, ticks);
        let to_events = |v: &[(u32, u32)]| -> Vec<Event> {
            v.iter()
                .map(|&(a, b)| Event {
                    onset: a as f64 / 100.0,
                    offset: b as f64 / 100.0,
                })
                .collect()
        };
        let got = segment_tabulate(&to_events(&pred), &to_events(&reference), ticks as f64 / 100.0, seg_ticks as f64 / 100.0);
        let want = brute_force(&pred, &reference, ticks, seg_ticks);
        if got != want {
            bad.push(format!("case {case}: got {got:?}, brute force {want:?}"));
        }
    }
    bad
}
