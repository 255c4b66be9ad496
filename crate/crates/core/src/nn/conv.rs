//! Same-padded 2-D convolution via im2col.

use ndarray::{Array1, Array2, ArrayD, Axis, IxDyn};

use crate::nn::graph::{Graph, Tensor, Var};

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.h * self.w
    }
}

fn im2col(x: &[f64], geo: &Geometry) -> Array2<f64> {
    let (h, w) = (geo.h as isize, geo.w as isize);
    let (ph, pw) = ((geo.kh / 2) as isize, (geo.kw / 2) as isize);
    let hw = geo.cols();
    let mut cols = vec![0.0; geo.rows() * hw];
    for c in 0..geo.c {
        let plane = &x[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let r = (c * geo.kh + ki) * geo.kw + kj;
                let dst = &mut cols[r * hw..(r + 1) * hw];
                let dj = kj as isize - pw;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w - dj).min(w).max(0) as usize;
                for i in 0..geo.h {
                    let si = i as isize + ki as isize - ph;
                    if si < 0 || si >= h || j_lo >= j_hi {
                        continue;
                    }
                    let src_row = &plane[si as usize * geo.w..(si as usize + 1) * geo.w];
                    let s0 = (j_lo as isize + dj) as usize;
                    dst[i * geo.w + j_lo..i * geo.w + j_hi]
                        .copy_from_slice(&src_row[s0..s0 + (j_hi - j_lo)]);
                }
            }
        }
    }
    Array2::from_shape_vec((geo.rows(), hw), cols).unwrap()
}

fn col2im(cols: &Array2<f64>, geo: &Geometry, out: &mut [f64]) {
    let (h, w) = (geo.h as isize, geo.w as isize);
    let (ph, pw) = ((geo.kh / 2) as isize, (geo.kw / 2) as isize);
    let hw = geo.cols();
    let cols = cols.as_slice().expect("contiguous columns");
    for c in 0..geo.c {
        let plane = &mut out[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for ki in 0..geo.kh {
            for kj in 0..geo.kw {
                let r = (c * geo.kh + ki) * geo.kw + kj;
                let src = &cols[r * hw..(r + 1) * hw];
                let dj = kj as isize - pw;
                let j_lo = (-dj).max(0) as usize;
                let j_hi = (w - dj).min(w).max(0) as usize;
                for i in 0..geo.h {
                    let si = i as isize + ki as isize - ph;
                    if si < 0 || si >= h || j_lo >= j_hi {
                        continue;
                    }
                    let s0 = (j_lo as isize + dj) as usize;
                    let dst_row = &mut plane[si as usize * geo.w..(si as usize + 1) * geo.w];
                    for (d, s) in dst_row[s0..s0 + (j_hi - j_lo)]
                        .iter_mut()
                        .zip(&src[i * geo.w + j_lo..i * geo.w + j_hi])
                    {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// `x [N, Cin, H, W]`, `weight [Cout, Cin, kh, kw]` (odd kernel), `bias [Cout]`
/// to `[N, Cout, H, W]` with zero "same" padding.
pub fn conv2d(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Var {
    let xs = g.value(x).shape().to_vec();
    let ws = g.value(weight).shape().to_vec();
    assert_eq!(xs.len(), 4, "conv2d: input must be [N, C, H, W]");
    assert_eq!(ws.len(), 4, "conv2d: weight must be [Cout, Cin, kh, kw]");
    assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
    assert!(ws[2] % 2 == 1 && ws[3] % 2 == 1, "conv2d: kernel must be odd");
    let (n, cout) = (xs[0], ws[0]);
    let geo = Geometry {
        c: xs[1],
        h: xs[2],
        w: xs[3],
        kh: ws[2],
        kw: ws[3],
    };
    let xv = g.value_rc(x);
    let wv = g.value_rc(weight);
    let w2 = wv
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cout, geo.rows()))
        .unwrap();
    let bv = g.value(bias).as_slice().unwrap().to_vec();

    let xin = xv.as_standard_layout();
    let xin = xin.as_slice().unwrap();
    let per_in = geo.c * geo.h * geo.w;
    let hw = geo.cols();
    let mut out = vec![0.0; n * cout * hw];
    for b in 0..n {
        let cols = im2col(&xin[b * per_in..(b + 1) * per_in], &geo);
        let y = w2.dot(&cols);
        let dst = &mut out[b * cout * hw..(b + 1) * cout * hw];
        for (o, row) in y.rows().into_iter().enumerate() {
            let bias_o = bv[o];
            for (d, &v) in dst[o * hw..(o + 1) * hw].iter_mut().zip(row) {
                *d = v + bias_o;
            }
        }
    }
    let out = ArrayD::from_shape_vec(IxDyn(&[n, cout, geo.h, geo.w]), out).unwrap();

    g.push(
        out,
        &[x, weight, bias],
        Box::new(move |grad, needs| {
            let grad = grad.as_standard_layout();
            let gs = grad.as_slice().unwrap();
            let xin = xv.as_standard_layout();
            let xin = xin.as_slice().unwrap();
            let mut dw = Array2::<f64>::zeros((cout, geo.rows()));
            let mut db = Array1::<f64>::zeros(cout);
            let mut dx = needs[0].then(|| vec![0.0; n * per_in]);
            for b in 0..n {
                let gy = ndarray::ArrayView2::from_shape((cout, hw), &gs[b * cout * hw..(b + 1) * cout * hw])
                    .unwrap();
                if needs[1] {
                    let cols = im2col(&xin[b * per_in..(b + 1) * per_in], &geo);
                    dw += &gy.dot(&cols.t());
                }
                if needs[2] {
                    db += &gy.sum_axis(Axis(1));
                }
                if let Some(dx) = dx.as_mut() {
                    let dcols = w2.t().dot(&gy);
                    col2im(&dcols, &geo, &mut dx[b * per_in..(b + 1) * per_in]);
                }
            }
            vec![
                dx.map(|d| ArrayD::from_shape_vec(IxDyn(&[n, geo.c, geo.h, geo.w]), d).unwrap()),
                needs[1].then(|| dw.into_shape_with_order(IxDyn(&[cout, geo.c, geo.kh, geo.kw])).unwrap()),
                needs[2].then(|| db.into_dyn()),
            ]
        }),
    )
}

/// Direct (non-im2col) convolution used as an independent reference in tests.
pub fn conv2d_direct(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let (xs, ws) = (x.shape(), weight.shape());
    let (n, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, cout, h, w]));
    for b in 0..n {
        for o in 0..cout {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = bias[[o]];
                    for c in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let si = i as isize + ki as isize - ph;
                                let sj = j as isize + kj as isize - pw;
                                if si >= 0 && sj >= 0 && (si as usize) < h && (sj as usize) < w {
                                    acc += x[[b, c, si as usize, sj as usize]] * weight[[o, c, ki, kj]];
                                }
                            }
                        }
                    }
                    out[[b, o, i, j]] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::uniform_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(n, cin, cout, h, w, k) in &[(2, 3, 4, 5, 7, 3), (1, 1, 2, 1, 4, 3), (3, 2, 2, 4, 4, 1)] {
            let x = uniform_tensor(&[n, cin, h, w], 1.0, &mut rng);
            let wt = uniform_tensor(&[cout, cin, k, k], 1.0, &mut rng);
            let b = uniform_tensor(&[cout], 1.0, &mut rng);
            let mut g = Graph::new();
            let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
            let y = conv2d(&mut g, xv, wv, bv);
            let expected = conv2d_direct(&x, &wt, &b);
            for (a, e) in g.value(y).iter().zip(expected.iter()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
