//! Randomised property checks for clip pooling and mixup. Each returns a
//! list of violations; empty means the property holds on every draw.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsdnet_core::model::linear_softmax_pool;
use tsdnet_core::nn::{ops, Graph};
use tsdnet_core::train::{mixup_pair, mixup_ratio, MixSample, MixupConfig};

/// Values that must come out of the pool to 1e-9.
pub const POOL_WORKED: [(&[f64], f64); 3] = [(&[0.5, 0.5], 0.5), (&[1.0, 0.0], 1.0), (&[0.2, 0.8], 0.68)];

fn pool_graph(p: &[f64]) -> f64 {
    let mut g = Graph::new();
    let v = g.constant(Array2::from_shape_vec((1, p.len()), p.to_vec()).unwrap().into_dyn());
    let out = ops::linear_softmax_pool(&mut g, v);
    g.value(out)[[0]]
}

pub fn pooling_violations(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for (p, want) in POOL_WORKED {
        for got in [linear_softmax_pool(p), pool_graph(p)] {
            if (got - want).abs() > 1e-9 {
                bad.push(format!("{p:?} pooled to {got}, expected {want}"));
            }
        }
    }
    for case in 0..cases {
        let n = rng.random_range(1..=500);
        let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if case % 7 == 0 {
            // Sparse activations, the usual shape of a short event.
            p.iter_mut().for_each(|v| *v = if rng.random::<f64>() < 0.9 { 0.0 } else { *v });
        }
        let y = linear_softmax_pool(&p);
        if (y - pool_graph(&p)).abs() > 1e-12 {
            bad.push(format!("case {case}: graph and value pools disagree"));
        }
        let (lo, hi) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if p.iter().any(|&v| v > 0.0) && !(lo - 1e-12 <= y && y <= hi + 1e-12) {
            bad.push(format!("case {case}: {y} outside [{lo}, {hi}]"));
        }
        let mut q = p.clone();
        q.shuffle(&mut rng);
        let yq = linear_softmax_pool(&q);
        if (y - yq).abs() > 1e-12 * y.abs().max(1.0) {
            bad.push(format!("case {case}: permutation moved {y} to {yq}"));
        }
        let c = rng.random_range(1e-6..1.0);
        let yc = linear_softmax_pool(&vec![c; n]);
        if (yc - c).abs() > 1e-12 {
            bad.push(format!("case {case}: constant {c} pooled to {yc}"));
        }
    }
    bad
}

fn sample(rng: &mut ChaCha8Rng, t: usize, tr: usize, strong: bool) -> MixSample {
    MixSample {
        mixture: Array2::from_shape_fn((t, 4), |_| rng.random_range(-3.0..3.0)),
        reference: Array2::from_shape_fn((tr, 5), |_| rng.random_range(-3.0..3.0)),
        labels: if strong {
            (0..t).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect()
        } else {
            vec![f64::from(rng.random_bool(0.5) as u8)]
        },
    }
}

fn bits(s: &MixSample) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
    let b = |it: &mut dyn Iterator<Item = &f64>| it.map(|v| v.to_bits()).collect::<Vec<_>>();
    (b(&mut s.mixture.iter()), b(&mut s.reference.iter()), b(&mut s.labels.iter()))
}

pub fn mixup_violations(cases: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = Vec::new();
    let cfg = MixupConfig::default();
    for total in [2usize, 10, 1000, 4096] {
        let at = |s| mixup_ratio(s, total, &cfg);
        if (at(0), at(total / 2), at(total)) != (0.3, 0.15, 0.0) {
            bad.push(format!("schedule over {total} steps: {} {} {}", at(0), at(total / 2), at(total)));
        }
    }
    for case in 0..cases {
        let strong = case % 2 == 0;
        let (t, tr) = (rng.random_range(1..40), rng.random_range(1..30));
        let a = sample(&mut rng, t, tr, strong);
        let b = sample(&mut rng, t, tr, strong);
        let lam = cfg.sample_lambda(&mut rng);
        if bits(&mixup_pair(&a, &b, 1.0).unwrap()) != bits(&a) {
            bad.push(format!("case {case}: lambda 1 is not the first sample"));
        }
        if bits(&mixup_pair(&a, &b, 0.0).unwrap()) != bits(&b) {
            bad.push(format!("case {case}: lambda 0 is not the second sample"));
        }
        let m = mixup_pair(&a, &b, lam).unwrap();
        let w = mixup_pair(&b, &a, 1.0 - lam).unwrap();
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        if !close(m.mixture.as_slice().unwrap(), w.mixture.as_slice().unwrap())
            || !close(m.reference.as_slice().unwrap(), w.reference.as_slice().unwrap())
            || !close(&m.labels, &w.labels)
        {
            bad.push(format!("case {case}: swapping the pair with 1 - {lam} changes the mix"));
        }
        for ((&l, &x), &y) in m.labels.iter().zip(&a.labels).zip(&b.labels) {
            if !(x.min(y) <= l && l <= x.max(y)) || (l - (lam * x + (1.0 - lam) * y)).abs() > 1e-15 {
                bad.push(format!("case {case}: label {l} is not the {lam}-mix of {x} and {y}"));
            }
        }
    }
    bad
}
