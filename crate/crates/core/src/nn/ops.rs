//! Elementwise, reduction, shape and loss operations.

use ndarray::{s, Array1, Array2, ArrayD, Axis, Ix2, IxDyn};

use crate::nn::graph::{Graph, Tensor, Var};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside cross-entropy terms.
pub const PROB_EPS: f64 = 1e-7;

fn to2(t: &Tensor) -> Array2<f64> {
    t.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-d tensor")
        .to_owned()
}

pub fn add(g: &mut Graph, a: Var, b: Var) -> Var {
    assert_eq!(g.value(a).shape(), g.value(b).shape(), "add: shape mismatch");
    let out = g.value(a) + g.value(b);
    g.push(
        out,
        &[a, b],
        Box::new(|grad, needs| vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())]),
    )
}

pub fn mul(g: &mut Graph, a: Var, b: Var) -> Var {
    assert_eq!(g.value(a).shape(), g.value(b).shape(), "mul: shape mismatch");
    let (av, bv) = (g.value_rc(a), g.value_rc(b));
    let out = &*av * &*bv;
    g.push(
        out,
        &[a, b],
        Box::new(move |grad, needs| {
            vec![
                needs[0].then(|| grad * &*bv),
                needs[1].then(|| grad * &*av),
            ]
        }),
    )
}

pub fn scale(g: &mut Graph, a: Var, c: f64) -> Var {
    let out = g.value(a) * c;
    g.push(out, &[a], Box::new(move |grad, _| vec![Some(grad * c)]))
}

/// `lam * a + (1 - lam) * b`. The endpoints return an operand unchanged,
/// bit for bit.
pub fn lerp(g: &mut Graph, a: Var, b: Var, lam: f64) -> Var {
    assert_eq!(g.value(a).shape(), g.value(b).shape(), "lerp: shape mismatch");
    let out = lerp_values(g.value(a), g.value(b), lam);
    g.push(
        out,
        &[a, b],
        Box::new(move |grad, needs| {
            vec![
                needs[0].then(|| grad * lam),
                needs[1].then(|| grad * (1.0 - lam)),
            ]
        }),
    )
}

/// Plain-array counterpart of [`lerp`].
pub fn lerp_values(a: &Tensor, b: &Tensor, lam: f64) -> Tensor {
    if lam == 1.0 {
        a.clone()
    } else if lam == 0.0 {
        b.clone()
    } else {
        a * lam + b * (1.0 - lam)
    }
}

pub fn sum_all(g: &mut Graph, a: Var) -> Var {
    let shape = g.value(a).raw_dim();
    let out = ArrayD::from_elem(IxDyn(&[]), g.value(a).sum());
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            let v = grad.iter().next().copied().unwrap_or(0.0);
            vec![Some(ArrayD::from_elem(shape.clone(), v))]
        }),
    )
}

pub fn mean_all(g: &mut Graph, a: Var) -> Var {
    let n = g.value(a).len() as f64;
    let s = sum_all(g, a);
    scale(g, s, 1.0 / n)
}

/// Sums every axis except the first: `[N, ...] -> [N]`.
pub fn sum_rows(g: &mut Graph, a: Var) -> Var {
    let shape = g.value(a).raw_dim();
    let n = shape[0];
    let per = g.value(a).len() / n.max(1);
    let flat = g.value(a).to_shape((n, per)).unwrap().into_owned();
    let out = flat.sum_axis(Axis(1)).into_dyn();
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            let mut full = Array2::<f64>::zeros((n, per));
            for (mut row, &gv) in full.rows_mut().into_iter().zip(grad.iter()) {
                row.fill(gv);
            }
            vec![Some(full.into_shape_with_order(shape.clone()).unwrap())]
        }),
    )
}

pub fn sigmoid(g: &mut Graph, a: Var) -> Var {
    let out = g.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
    let y = std::rc::Rc::new(out.clone());
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            let mut d = grad.clone();
            d.zip_mut_with(&*y, |d, &y| *d *= y * (1.0 - y));
            vec![Some(d)]
        }),
    )
}

pub fn relu(g: &mut Graph, a: Var) -> Var {
    leaky_relu(g, a, 0.0)
}

pub fn leaky_relu(g: &mut Graph, a: Var, slope: f64) -> Var {
    let x = g.value_rc(a);
    let out = x.mapv(|v| if v > 0.0 { v } else { slope * v });
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            let mut d = grad.clone();
            d.zip_mut_with(&*x, |d, &v| {
                if v <= 0.0 {
                    *d *= slope
                }
            });
            vec![Some(d)]
        }),
    )
}

pub fn reshape(g: &mut Graph, a: Var, shape: &[usize]) -> Var {
    let orig = g.value(a).raw_dim();
    let out = g
        .value(a)
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("reshape: element count mismatch");
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            vec![Some(
                grad.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order(orig.clone())
                    .unwrap(),
            )]
        }),
    )
}

pub fn permute(g: &mut Graph, a: Var, axes: &[usize]) -> Var {
    let out = g
        .value(a)
        .view()
        .permuted_axes(IxDyn(axes))
        .as_standard_layout()
        .into_owned();
    let mut inverse = vec![0; axes.len()];
    for (i, &ax) in axes.iter().enumerate() {
        inverse[ax] = i;
    }
    g.push(
        out,
        &[a],
        Box::new(move |grad, _| {
            vec![Some(
                grad.view()
                    .permuted_axes(IxDyn(&inverse))
                    .as_standard_layout()
                    .into_owned(),
            )]
        }),
    )
}

/// `[M, K] x [K, N] -> [M, N]`.
pub fn matmul(g: &mut Graph, a: Var, b: Var) -> Var {
    let (av, bv) = (g.value_rc(a), g.value_rc(b));
    let a2 = to2(&av);
    let b2 = to2(&bv);
    assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dimensions differ");
    let out = a2.dot(&b2).into_dyn();
    g.push(
        out,
        &[a, b],
        Box::new(move |grad, needs| {
            let g2 = to2(grad);
            vec![
                needs[0].then(|| g2.dot(&to2(&bv).t()).into_dyn()),
                needs[1].then(|| to2(&av).t().dot(&g2).into_dyn()),
            ]
        }),
    )
}

/// Adds `bias [K]` along the last axis of `x [..., K]`.
pub fn add_bias(g: &mut Graph, x: Var, bias: Var) -> Var {
    let k = *g.value(x).shape().last().unwrap();
    assert_eq!(g.value(bias).shape(), &[k], "add_bias: bias length mismatch");
    let b = g.value(bias).clone().into_dimensionality::<ndarray::Ix1>().unwrap();
    let out = g.value(x) + &b;
    g.push(
        out,
        &[x, bias],
        Box::new(move |grad, needs| {
            let db = needs[1].then(|| {
                let rows = grad.len() / k;
                grad.as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((rows, k))
                    .unwrap()
                    .sum_axis(Axis(0))
                    .into_dyn()
            });
            vec![needs[0].then(|| grad.clone()), db]
        }),
    )
}

/// Affine map over the last axis: `x [M, D] . w [D, K] + b [K]`.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = matmul(g, x, w);
    add_bias(g, y, b)
}

/// Appends the per-item vector `e [N, E]` to every frame of `x [N, T, D]`.
pub fn concat_broadcast(g: &mut Graph, x: Var, e: Var) -> Var {
    let xs = g.value(x).shape().to_vec();
    let es = g.value(e).shape().to_vec();
    assert_eq!(xs.len(), 3, "concat_broadcast: frames must be [N, T, D]");
    assert_eq!(es, vec![xs[0], es[1]], "concat_broadcast: embedding must be [N, E]");
    let (n, t, d, en) = (xs[0], xs[1], xs[2], es[1]);
    let xv = g.value(x);
    let ev = g.value(e);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, t, d + en]));
    for b in 0..n {
        for i in 0..t {
            for j in 0..d {
                out[[b, i, j]] = xv[[b, i, j]];
            }
            for j in 0..en {
                out[[b, i, d + j]] = ev[[b, j]];
            }
        }
    }
    g.push(
        out,
        &[x, e],
        Box::new(move |grad, needs| {
            let dx = needs[0].then(|| grad.slice(s![.., .., ..d]).to_owned().into_dyn());
            let de = needs[1].then(|| {
                grad.slice(s![.., .., d..])
                    .sum_axis(Axis(1))
                    .into_dyn()
            });
            vec![dx, de]
        }),
    )
}

/// Multiplies every frame of `x [N, T, D]` by the per-item vector `v [N, D]`.
pub fn mul_broadcast(g: &mut Graph, x: Var, v: Var) -> Var {
    let xs = g.value(x).shape().to_vec();
    assert_eq!(xs.len(), 3, "mul_broadcast: frames must be [N, T, D]");
    assert_eq!(g.value(v).shape(), &[xs[0], xs[2]], "mul_broadcast: vector must be [N, D]");
    let (xv, vv) = (g.value_rc(x), g.value_rc(v));
    let vexp = vv.view().insert_axis(Axis(1));
    let out = &*xv * &vexp;
    g.push(
        out,
        &[x, v],
        Box::new(move |grad, needs| {
            let dx = needs[0].then(|| grad * &vv.view().insert_axis(Axis(1)));
            let dv = needs[1].then(|| (grad * &*xv).sum_axis(Axis(1)));
            vec![dx, dv]
        }),
    )
}

/// Nearest-neighbour upsampling along time: `[N, T', K] -> [N, t, K]` with
/// output frame `i` reading input frame `min(i / factor, T' - 1)`.
pub fn upsample_time(g: &mut Graph, x: Var, factor: usize, t: usize) -> Var {
    let xs = g.value(x).shape().to_vec();
    let (n, tp, k) = (xs[0], xs[1], xs[2]);
    let src = move |i: usize| (i / factor).min(tp - 1);
    let xv = g.value(x);
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n, t, k]));
    for b in 0..n {
        for i in 0..t {
            let si = src(i);
            for j in 0..k {
                out[[b, i, j]] = xv[[b, si, j]];
            }
        }
    }
    g.push(
        out,
        &[x],
        Box::new(move |grad, _| {
            let mut d = ArrayD::<f64>::zeros(IxDyn(&[n, tp, k]));
            for b in 0..n {
                for i in 0..t {
                    let si = src(i);
                    for j in 0..k {
                        d[[b, si, j]] += grad[[b, i, j]];
                    }
                }
            }
            vec![Some(d)]
        }),
    )
}

/// Stacks `[1, ...]` tensors along the first axis.
pub fn stack_rows(g: &mut Graph, parts: &[Var]) -> Var {
    let views: Vec<_> = parts.iter().map(|&p| g.value(p).view()).collect();
    let out = ndarray::concatenate(Axis(0), &views).expect("stack_rows: inner shapes differ");
    let sizes: Vec<usize> = parts.iter().map(|&p| g.value(p).shape()[0]).collect();
    g.push(
        out,
        parts,
        Box::new(move |grad, needs| {
            let mut start = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&len, &need)| {
                    let piece = need.then(|| {
                        grad.slice_axis(Axis(0), ndarray::Slice::from(start..start + len))
                            .to_owned()
                    });
                    start += len;
                    piece
                })
                .collect()
        }),
    )
}

/// `sum p^2 / sum p` of a non-negative vector; zero for an all-zero vector.
pub fn linear_softmax_value(p: &[f64]) -> f64 {
    let s1: f64 = p.iter().sum();
    if s1 <= 0.0 {
        return 0.0;
    }
    p.iter().map(|v| v * v).sum::<f64>() / s1
}

/// Per-row linear-softmax pooling: `[N, T] -> [N]`.
pub fn linear_softmax_pool(g: &mut Graph, p: Var) -> Var {
    let pv = g.value_rc(p);
    let p2 = to2(&pv);
    let out: Array1<f64> = p2
        .rows()
        .into_iter()
        .map(|r| linear_softmax_value(r.as_slice().unwrap()))
        .collect();
    g.push(
        out.into_dyn(),
        &[p],
        Box::new(move |grad, _| {
            let p2 = to2(&pv);
            let mut d = Array2::<f64>::zeros(p2.raw_dim());
            for (i, (row, mut drow)) in p2.rows().into_iter().zip(d.rows_mut()).enumerate() {
                let s1: f64 = row.sum();
                if s1 <= 0.0 {
                    continue;
                }
                let s2: f64 = row.iter().map(|v| v * v).sum();
                let gi = grad[[i]];
                for (dv, &v) in drow.iter_mut().zip(row) {
                    *dv = gi * (2.0 * v * s1 - s2) / (s1 * s1);
                }
            }
            vec![Some(d.into_dyn())]
        }),
    )
}

/// Binary cross-entropy of one prediction against a (possibly soft) target.
pub fn bce_term(p: f64, target: f64) -> f64 {
    let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -target * pc.ln() - (1.0 - target) * (1.0 - pc).ln()
}

/// Elementwise binary cross-entropy against a constant target of equal shape.
pub fn bce(g: &mut Graph, pred: Var, target: &Tensor) -> Var {
    assert_eq!(g.value(pred).shape(), target.shape(), "bce: shape mismatch");
    let pv = g.value_rc(pred);
    let mut out = pv.as_ref().clone();
    out.zip_mut_with(target, |p, &t| *p = bce_term(*p, t));
    let target = target.clone();
    g.push(
        out,
        &[pred],
        Box::new(move |grad, _| {
            let mut d = grad.clone();
            ndarray::Zip::from(&mut d)
                .and(&*pv)
                .and(&target)
                .for_each(|d, &p, &t| {
                    *d *= if p < PROB_EPS || p > 1.0 - PROB_EPS {
                        0.0
                    } else {
                        (p - t) / (p * (1.0 - p))
                    };
                });
            vec![Some(d)]
        }),
    )
}

/// Numerically stable softmax of each row.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Per-row cross-entropy of softmax(logits) against class indices: `[N, K] -> [N]`.
pub fn softmax_cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Var {
    let l2 = to2(g.value(logits));
    assert_eq!(l2.nrows(), labels.len(), "softmax_cross_entropy: label count mismatch");
    let probs = softmax_rows(&l2);
    let out: Array1<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| -probs[[i, c]].max(1e-300).ln())
        .collect();
    let labels = labels.to_vec();
    g.push(
        out.into_dyn(),
        &[logits],
        Box::new(move |grad, _| {
            let mut d = probs.clone();
            for (i, &c) in labels.iter().enumerate() {
                d[[i, c]] -= 1.0;
                let gi = grad[[i]];
                d.row_mut(i).mapv_inplace(|v| v * gi);
            }
            vec![Some(d.into_dyn())]
        }),
    )
}
