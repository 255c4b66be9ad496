//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::graph::{Graph, Var};
use crate::nn::params::ParamStore;

/// Outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Probes re-measured with a smaller step.
    pub retried: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Gradient magnitudes below this are compared absolutely.
    pub floor: f64,
    /// Maximum number of entries probed per tensor; `None` probes all.
    pub per_tensor: Option<usize>,
    pub seed: u64,
    /// A probe whose error exceeds this is measured again with a tenth of
    /// the step, keeping the smaller error. A ReLU or max-pool kink within
    /// one step of the point spoils the central difference; a wrong
    /// gradient fails at every step.
    pub retry_above: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            per_tensor: None,
            seed: 0,
            retry_above: None,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` of the scalar built by `f` against central
/// differences for every tensor in `params`. `f` must register each tensor
/// as a trainable parameter under its store name.
pub fn check_gradients<F>(params: &ParamStore, f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Graph) -> Var,
{
    let mut g = Graph::new();
    let loss = f(params, &mut g);
    let analytic = g.backward(loss).params()?;
    let eval = |p: &ParamStore| {
        let mut g = Graph::new();
        let l = f(p, &mut g);
        g.scalar(l)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        retried: 0,
    };
    let mut probe = params.clone();
    for name in params.names() {
        let len = params.expect(name).len();
        let indices: Vec<usize> = match opts.per_tensor {
            Some(k) if k < len => {
                let mut v = sample(&mut rng, len, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let grad = analytic
            .get(name)
            .unwrap_or_else(|| panic!("no gradient recorded for `{name}`"));
        for idx in indices {
            let orig = params.expect(name).as_slice().unwrap()[idx];
            let set = |p: &mut ParamStore, v: f64| {
                p.get_mut(name).unwrap().as_slice_mut().unwrap()[idx] = v;
            };
            let mut central = |h: f64| {
                set(&mut probe, orig + h);
                let up = eval(&probe);
                set(&mut probe, orig - h);
                let down = eval(&probe);
                set(&mut probe, orig);
                (up - down) / (2.0 * h)
            };
            let a = grad.as_slice().unwrap()[idx];
            let mut numeric = central(opts.step);
            let mut err = relative_error(a, numeric, opts.floor);
            if opts.retry_above.is_some_and(|t| err > t) {
                let fine = central(opts.step / 10.0);
                let fine_err = relative_error(a, fine, opts.floor);
                report.retried += 1;
                if fine_err < err {
                    (numeric, err) = (fine, fine_err);
                }
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                if err >= report.max_rel_error {
                    report.worst = format!("{name}[{idx}]: analytic {a:.6e} numeric {numeric:.6e}");
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;
    use ndarray::{arr1, ArrayD};

    fn store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", arr1(&[x]).into_dyn());
        p
    }

    fn relu_loss(p: &ParamStore, g: &mut Graph) -> Var {
        let x = g.param("x", p.expect("x"), true);
        let y = ops::relu(g, x);
        ops::sum_all(g, y)
    }

    /// Value of relu, gradient doubled.
    fn wrong_loss(p: &ParamStore, g: &mut Graph) -> Var {
        let x = g.param("x", p.expect("x"), true);
        let v: ArrayD<f64> = g.value(x).mapv(|v| v.max(0.0));
        let y = g.push(v, &[x], Box::new(|grad, _| vec![Some(grad * 2.0)]));
        ops::sum_all(g, y)
    }

    #[test]
    fn retry_rescues_a_kink_but_not_a_wrong_gradient() {
        let opts = GradCheckOptions {
            step: 1e-5,
            ..Default::default()
        };
        let retry = GradCheckOptions {
            retry_above: Some(1e-4),
            ..opts
        };
        // The kink at zero lies inside one step but outside a tenth of it.
        let near = store(4e-6);
        assert!(check_gradients(&near, relu_loss, opts).unwrap().max_rel_error > 0.1);
        let r = check_gradients(&near, relu_loss, retry).unwrap();
        assert!(r.max_rel_error < 1e-8 && r.retried == 1, "{r:?}");

        let r = check_gradients(&store(0.7), wrong_loss, retry).unwrap();
        assert!(r.max_rel_error > 0.4, "{r:?}");
    }
}
