//! Batch normalisation over the channel axis of `[N, C, H, W]`.

use ndarray::{Array1, Axis, Ix4};

use crate::nn::graph::{Graph, Var};

pub const BN_EPS: f64 = 1e-5;

/// Batch statistics gathered in training mode: per-channel mean and
/// unbiased variance.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// Normalises with batch statistics when `train`, else with the running
/// statistics given.
pub fn batch_norm2d(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
    train: bool,
) -> (Var, Option<BatchStats>) {
    let x4 = g
        .value(x)
        .view()
        .into_dimensionality::<Ix4>()
        .expect("batch_norm2d: input must be [N, C, H, W]")
        .to_owned();
    let (n, c, h, w) = x4.dim();
    let m = (n * h * w) as f64;
    let gamma_v = g.value(gamma).clone().into_dimensionality::<ndarray::Ix1>().unwrap();
    let beta_v = g.value(beta).clone().into_dimensionality::<ndarray::Ix1>().unwrap();

    let (mean, var, stats) = if train {
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ch in 0..c {
            let plane = x4.index_axis(Axis(1), ch);
            let mu = plane.sum() / m;
            let v = plane.fold(0.0, |acc, &v| acc + (v - mu) * (v - mu)) / m;
            mean[ch] = mu;
            var[ch] = v;
        }
        let unbiased = if m > 1.0 { &var * (m / (m - 1.0)) } else { var.clone() };
        let stats = BatchStats {
            mean: mean.clone(),
            var: unbiased,
        };
        (mean, var, Some(stats))
    } else {
        (running_mean.clone(), running_var.clone(), None)
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

    let mut xhat = x4;
    for ch in 0..c {
        let (mu, s) = (mean[ch], inv_std[ch]);
        xhat.index_axis_mut(Axis(1), ch).mapv_inplace(|v| (v - mu) * s);
    }
    let mut out = xhat.clone();
    for ch in 0..c {
        let (gm, bt) = (gamma_v[ch], beta_v[ch]);
        out.index_axis_mut(Axis(1), ch).mapv_inplace(|v| v * gm + bt);
    }

    let var_out = g.push(
        out.into_dyn(),
        &[x, gamma, beta],
        Box::new(move |grad, needs| {
            let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
            let mut dgamma = Array1::<f64>::zeros(c);
            let mut dbeta = Array1::<f64>::zeros(c);
            let mut dx = needs[0].then(|| ndarray::Array4::<f64>::zeros((n, c, h, w)));
            for ch in 0..c {
                let gp = g4.index_axis(Axis(1), ch);
                let xp = xhat.index_axis(Axis(1), ch);
                let sum_g = gp.sum();
                let sum_gx = ndarray::Zip::from(&gp).and(&xp).fold(0.0, |a, &gv, &xv| a + gv * xv);
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                if let Some(dx) = dx.as_mut() {
                    let scale = gamma_v[ch] * inv_std[ch];
                    let mut dp = dx.index_axis_mut(Axis(1), ch);
                    if train {
                        ndarray::Zip::from(&mut dp).and(&gp).and(&xp).for_each(|d, &gv, &xv| {
                            *d = scale * (gv - sum_g / m - xv * sum_gx / m);
                        });
                    } else {
                        ndarray::Zip::from(&mut dp).and(&gp).for_each(|d, &gv| *d = scale * gv);
                    }
                }
            }
            vec![
                dx.map(|d| d.into_dyn()),
                needs[1].then(|| dgamma.into_dyn()),
                needs[2].then(|| dbeta.into_dyn()),
            ]
        }),
    );
    (var_out, stats)
}
