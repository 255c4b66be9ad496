//! Local and global pooling over `[N, C, H, W]`.

use ndarray::{Array2, Array4, Ix4};

use crate::nn::graph::{Graph, Var};

/// Non-overlapping average pooling with window `(kh, kw)`; trailing rows or
/// columns that do not fill a window are dropped.
pub fn avg_pool2d(g: &mut Graph, x: Var, kh: usize, kw: usize) -> Var {
    let x4 = g.value(x).view().into_dimensionality::<Ix4>().expect("avg_pool2d: [N, C, H, W]").to_owned();
    let (n, c, h, w) = x4.dim();
    let (oh, ow) = (h / kh, w / kw);
    assert!(oh > 0 && ow > 0, "avg_pool2d: input {h}x{w} smaller than window {kh}x{kw}");
    let area = (kh * kw) as f64;
    let mut out = Array4::<f64>::zeros((n, c, oh, ow));
    for b in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for di in 0..kh {
                        for dj in 0..kw {
                            acc += x4[[b, ch, i * kh + di, j * kw + dj]];
                        }
                    }
                    out[[b, ch, i, j]] = acc / area;
                }
            }
        }
    }
    g.push(
        out.into_dyn(),
        &[x],
        Box::new(move |grad, _| {
            let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
            let mut d = Array4::<f64>::zeros((n, c, h, w));
            for b in 0..n {
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let v = g4[[b, ch, i, j]] / area;
                            for di in 0..kh {
                                for dj in 0..kw {
                                    d[[b, ch, i * kh + di, j * kw + dj]] = v;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(d.into_dyn())]
        }),
    )
}

/// Maximum over the two trailing axes: `[N, C, H, W] -> [N, C]`.
pub fn global_max(g: &mut Graph, x: Var) -> Var {
    let x4 = g.value(x).view().into_dimensionality::<Ix4>().expect("global_max: [N, C, H, W]").to_owned();
    let (n, c, h, w) = x4.dim();
    let mut out = Array2::<f64>::zeros((n, c));
    let mut arg = vec![(0usize, 0usize); n * c];
    for b in 0..n {
        for ch in 0..c {
            let mut best = f64::NEG_INFINITY;
            for i in 0..h {
                for j in 0..w {
                    let v = x4[[b, ch, i, j]];
                    if v > best {
                        best = v;
                        arg[b * c + ch] = (i, j);
                    }
                }
            }
            out[[b, ch]] = best;
        }
    }
    g.push(
        out.into_dyn(),
        &[x],
        Box::new(move |grad, _| {
            let mut d = Array4::<f64>::zeros((n, c, h, w));
            for b in 0..n {
                for ch in 0..c {
                    let (i, j) = arg[b * c + ch];
                    d[[b, ch, i, j]] = grad[[b, ch]];
                }
            }
            vec![Some(d.into_dyn())]
        }),
    )
}

/// Mean over the two trailing axes: `[N, C, H, W] -> [N, C]`.
pub fn global_mean(g: &mut Graph, x: Var) -> Var {
    let x4 = g.value(x).view().into_dimensionality::<Ix4>().expect("global_mean: [N, C, H, W]").to_owned();
    let (n, c, h, w) = x4.dim();
    let area = (h * w) as f64;
    let mut out = Array2::<f64>::zeros((n, c));
    for b in 0..n {
        for ch in 0..c {
            out[[b, ch]] = x4.slice(ndarray::s![b, ch, .., ..]).sum() / area;
        }
    }
    g.push(
        out.into_dyn(),
        &[x],
        Box::new(move |grad, _| {
            let mut d = Array4::<f64>::zeros((n, c, h, w));
            for b in 0..n {
                for ch in 0..c {
                    d.slice_mut(ndarray::s![b, ch, .., ..]).fill(grad[[b, ch]] / area);
                }
            }
            vec![Some(d.into_dyn())]
        }),
    )
}
