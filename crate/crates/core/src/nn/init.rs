//! Seeded parameter initialisers.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::graph::Tensor;

pub fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
}

/// He-style uniform initialisation scaled by fan-in.
pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    uniform_tensor(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// Square orthogonal matrix from modified Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Array2<f64> {
    loop {
        let mut m = Array2::<f64>::from_shape_fn((size, size), |_| rng.sample(StandardNormal));
        let mut ok = true;
        for i in 0..size {
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &rj);
            }
            let norm = m.row(i).dot(&m.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return m;
        }
    }
}
