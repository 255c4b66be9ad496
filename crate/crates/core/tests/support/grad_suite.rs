//! Finite-difference cases shared by the gradient tests and the acceptance
//! run. Each case draws a fresh random shape per seed.

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsdnet_core::model::{ForwardOptions, Fusion, ModelConfig, ModelState, NetworkBuilder, Supervision};
use tsdnet_core::nn::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use tsdnet_core::nn::gru::{bigru, GruWeights};
use tsdnet_core::nn::norm::batch_norm2d;
use tsdnet_core::nn::{conv, ops, pool, Graph, ParamStore, Tensor, Var};
use tsdnet_core::train;

pub const TOLERANCE: f64 = 1e-4;
pub const SHAPES_PER_CASE: usize = 20;

pub struct CaseResult {
    pub name: &'static str,
    pub shapes: usize,
    pub max_rel_error: f64,
    pub worst: String,
    /// Probes re-measured at a finer step.
    pub retried: usize,
}

type Case = fn(&mut ChaCha8Rng) -> GradCheckReport;

pub const CASES: &[(&str, Case)] = &[
    ("add", add),
    ("mul", mul),
    ("scale", scale),
    ("lerp", lerp),
    ("sum_rows", sum_rows),
    ("mean_all", mean_all),
    ("sigmoid", sigmoid),
    ("relu", relu),
    ("leaky_relu", leaky_relu),
    ("reshape_permute", reshape_permute),
    ("matmul", matmul),
    ("linear", linear),
    ("concat_broadcast", concat_broadcast),
    ("mul_broadcast", mul_broadcast),
    ("upsample_time", upsample_time),
    ("stack_rows", stack_rows),
    ("linear_softmax_pool", linear_softmax_pool),
    ("bce", bce),
    ("softmax_cross_entropy", softmax_cross_entropy),
    ("conv2d", conv2d),
    ("batch_norm_train", batch_norm_train),
    ("batch_norm_eval", batch_norm_eval),
    ("avg_pool2d", avg_pool2d),
    ("global_max_mean", global_max_mean),
    ("bigru", gru),
    ("loss_frame_bce", loss_frame_bce),
    ("loss_clip_bce", loss_clip_bce),
    ("loss_total", loss_total),
    ("mixup_composition", mixup_composition),
    ("fusion_concat", fusion_concat),
    ("fusion_multiply", fusion_multiply),
    ("tiny_model_strong_concat", |r| tiny_model(r, Fusion::Concat, Supervision::Strong)),
    ("tiny_model_weak_concat", |r| tiny_model(r, Fusion::Concat, Supervision::Weak)),
    ("tiny_model_strong_multiply", |r| tiny_model(r, Fusion::Multiply, Supervision::Strong)),
    ("tiny_model_weak_multiply", |r| tiny_model(r, Fusion::Multiply, Supervision::Weak)),
];

pub fn run_case(name: &'static str, case: Case, shapes: usize) -> CaseResult {
    let mut out = CaseResult {
        name,
        shapes,
        max_rel_error: 0.0,
        worst: String::new(),
        retried: 0,
    };
    for seed in 0..shapes as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6a0d ^ (seed << 8) ^ name.len() as u64);
        let r = case(&mut rng);
        assert!(r.checked > 0, "{name}: nothing checked");
        out.retried += r.retried;
        if r.max_rel_error >= out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst = format!("seed {seed}: {}", r.worst);
        }
    }
    out
}

pub fn run_all() -> Vec<CaseResult> {
    CASES
        .iter()
        .map(|&(name, case)| run_case(name, case, SHAPES_PER_CASE))
        .collect()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    ArrayD::from_shape_vec(IxDyn(shape), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    rand_t(rng, shape, 0.05, 1.5).mapv(|v| if rng.random_bool(0.5) { v } else { -v })
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Reduces an output to a scalar through fixed random weights, so every
/// output entry receives a distinct upstream gradient.
fn project(g: &mut Graph, v: Var, w: &Tensor) -> Var {
    let c = g.constant(w.clone());
    let m = ops::mul(g, v, c);
    ops::sum_all(g, m)
}

fn p(g: &mut Graph, store: &ParamStore, name: &str) -> Var {
    g.param(name, store.expect(name), true)
}

fn opts() -> GradCheckOptions {
    GradCheckOptions::default()
}

fn check<F>(store: ParamStore, f: F) -> GradCheckReport
where
    F: Fn(&ParamStore, &mut Graph) -> Var,
{
    check_gradients(&store, f, opts()).expect("finite gradients")
}

/// Single-input op followed by a random projection of its output.
fn unary<O>(rng: &mut ChaCha8Rng, x: Tensor, out_shape: Vec<usize>, op: O) -> GradCheckReport
where
    O: Fn(&mut Graph, Var) -> Var,
{
    let w = rand_t(rng, &out_shape, -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("x", x);
    check(s, move |s, g| {
        let x = p(g, s, "x");
        let y = op(g, x);
        project(g, y, &w)
    })
}

fn binary<O>(rng: &mut ChaCha8Rng, a: Tensor, b: Tensor, out_shape: Vec<usize>, op: O) -> GradCheckReport
where
    O: Fn(&mut Graph, Var, Var) -> Var,
{
    let w = rand_t(rng, &out_shape, -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("a", a);
    s.insert("b", b);
    check(s, move |s, g| {
        let a = p(g, s, "a");
        let b = p(g, s, "b");
        let y = op(g, a, b);
        project(g, y, &w)
    })
}

fn add(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 4), dim(rng, 1, 5)];
    let (a, b) = (rand_t(rng, &sh, -2.0, 2.0), rand_t(rng, &sh, -2.0, 2.0));
    binary(rng, a, b, sh, ops::add)
}

fn mul(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
    let (a, b) = (rand_t(rng, &sh, -2.0, 2.0), rand_t(rng, &sh, -2.0, 2.0));
    binary(rng, a, b, sh, ops::mul)
}

fn scale(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 5), dim(rng, 1, 5)];
    let c = rng.random_range(-3.0..3.0);
    let x = rand_t(rng, &sh, -2.0, 2.0);
    unary(rng, x, sh, move |g, x| ops::scale(g, x, c))
}

fn lerp(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 4), dim(rng, 1, 6)];
    let lam = rng.random_range(0.0..1.0);
    let (a, b) = (rand_t(rng, &sh, -2.0, 2.0), rand_t(rng, &sh, -2.0, 2.0));
    binary(rng, a, b, sh, move |g, a, b| ops::lerp(g, a, b, lam))
}

fn sum_rows(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 4), dim(rng, 1, 3), dim(rng, 1, 3)];
    let x = rand_t(rng, &sh, -2.0, 2.0);
    unary(rng, x, vec![sh[0]], ops::sum_rows)
}

fn mean_all(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 4), dim(rng, 1, 5)];
    let x = rand_t(rng, &sh, -2.0, 2.0);
    let w = rng.random_range(0.5..2.0);
    let mut s = ParamStore::new();
    s.insert("x", x);
    check(s, move |s, g| {
        let x = p(g, s, "x");
        let sq = ops::mul(g, x, x);
        let m = ops::mean_all(g, sq);
        ops::scale(g, m, w)
    })
}

fn sigmoid(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 5), dim(rng, 1, 5)];
    let x = rand_t(rng, &sh, -4.0, 4.0);
    unary(rng, x, sh, ops::sigmoid)
}

fn relu(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 5), dim(rng, 1, 5)];
    let x = away_from_zero(rng, &sh);
    unary(rng, x, sh, ops::relu)
}

fn leaky_relu(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 5), dim(rng, 1, 5)];
    let slope = rng.random_range(0.01..0.3);
    let x = away_from_zero(rng, &sh);
    unary(rng, x, sh, move |g, x| ops::leaky_relu(g, x, slope))
}

fn reshape_permute(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3)];
    let mut axes = vec![0, 1, 2];
    let k = rng.random_range(0..6);
    for i in 0..k {
        axes.swap(i % 3, (i + 1) % 3);
    }
    let out: Vec<usize> = axes.iter().map(|&a| sh[a]).collect();
    let flat = vec![out[0] * out[1], out[2]];
    let x = rand_t(rng, &sh, -2.0, 2.0);
    unary(rng, x, flat.clone(), move |g, x| {
        let y = ops::permute(g, x, &axes);
        ops::reshape(g, y, &flat)
    })
}

fn matmul(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
    let (a, b) = (rand_t(rng, &[m, k], -1.0, 1.0), rand_t(rng, &[k, n], -1.0, 1.0));
    binary(rng, a, b, vec![m, n], ops::matmul)
}

fn linear(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, d, k) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
    let w = rand_t(rng, &[n, k], -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("x", rand_t(rng, &[n, d], -1.0, 1.0));
    s.insert("w", rand_t(rng, &[d, k], -1.0, 1.0));
    s.insert("b", rand_t(rng, &[k], -1.0, 1.0));
    check(s, move |s, g| {
        let (x, wv, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
        let y = ops::linear(g, x, wv, b);
        project(g, y, &w)
    })
}

fn concat_broadcast(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, d, e) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
    let x = rand_t(rng, &[n, t, d], -1.0, 1.0);
    let ev = rand_t(rng, &[n, e], -1.0, 1.0);
    binary(rng, x, ev, vec![n, t, d + e], ops::concat_broadcast)
}

fn mul_broadcast(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, d) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4));
    let x = rand_t(rng, &[n, t, d], -1.0, 1.0);
    let v = rand_t(rng, &[n, d], -1.0, 1.0);
    binary(rng, x, v, vec![n, t, d], ops::mul_broadcast)
}

fn upsample_time(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, tp, k, f) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3), dim(rng, 1, 4));
    let t = (tp * f).saturating_sub(rng.random_range(0..f)).max(1);
    let x = rand_t(rng, &[n, tp, k], -1.0, 1.0);
    unary(rng, x, vec![n, t, k], move |g, x| ops::upsample_time(g, x, f, t))
}

fn stack_rows(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (ra, rb, c) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4));
    let a = rand_t(rng, &[ra, c], -1.0, 1.0);
    let b = rand_t(rng, &[rb, c], -1.0, 1.0);
    binary(rng, a, b, vec![ra + rb, c], |g, a, b| ops::stack_rows(g, &[a, b]))
}

fn linear_softmax_pool(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t) = (dim(rng, 1, 4), dim(rng, 1, 8));
    let x = rand_t(rng, &[n, t], 0.02, 1.0);
    unary(rng, x, vec![n], ops::linear_softmax_pool)
}

fn bce(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let sh = vec![dim(rng, 1, 4), dim(rng, 1, 5)];
    let target = rand_t(rng, &sh, 0.0, 1.0);
    let x = rand_t(rng, &sh, 0.05, 0.95);
    unary(rng, x, sh, move |g, x| ops::bce(g, x, &target))
}

fn softmax_cross_entropy(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, k) = (dim(rng, 1, 4), dim(rng, 2, 6));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let x = rand_t(rng, &[n, k], -3.0, 3.0);
    unary(rng, x, vec![n], move |g, x| ops::softmax_cross_entropy(g, x, &labels))
}

fn conv2d(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, ci, co) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
    let (h, w) = (dim(rng, 1, 5), dim(rng, 1, 5));
    let (kh, kw) = (2 * dim(rng, 0, 1) + 1, 2 * dim(rng, 0, 1) + 1);
    let proj = rand_t(rng, &[n, co, h, w], -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("x", rand_t(rng, &[n, ci, h, w], -1.0, 1.0));
    s.insert("w", rand_t(rng, &[co, ci, kh, kw], -1.0, 1.0));
    s.insert("b", rand_t(rng, &[co], -1.0, 1.0));
    check(s, move |s, g| {
        let (x, wv, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
        let y = conv::conv2d(g, x, wv, b);
        project(g, y, &proj)
    })
}

fn batch_norm(rng: &mut ChaCha8Rng, train: bool) -> GradCheckReport {
    let (n, c, h, w) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 2, 3));
    let proj = rand_t(rng, &[n, c, h, w], -1.0, 1.0);
    let rm = Array1::from_iter((0..c).map(|_| rng.random_range(-0.5..0.5)));
    let rv = Array1::from_iter((0..c).map(|_| rng.random_range(0.5..2.0)));
    let mut s = ParamStore::new();
    s.insert("x", rand_t(rng, &[n, c, h, w], -2.0, 2.0));
    s.insert("gamma", rand_t(rng, &[c], 0.5, 1.5));
    s.insert("beta", rand_t(rng, &[c], -0.5, 0.5));
    check(s, move |s, g| {
        let (x, ga, be) = (p(g, s, "x"), p(g, s, "gamma"), p(g, s, "beta"));
        let (y, _) = batch_norm2d(g, x, ga, be, &rm, &rv, train);
        project(g, y, &proj)
    })
}

fn batch_norm_train(rng: &mut ChaCha8Rng) -> GradCheckReport {
    batch_norm(rng, true)
}

fn batch_norm_eval(rng: &mut ChaCha8Rng) -> GradCheckReport {
    batch_norm(rng, false)
}

fn avg_pool2d(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, c) = (dim(rng, 1, 2), dim(rng, 1, 3));
    let (kh, kw) = (dim(rng, 1, 2), dim(rng, 1, 2));
    let (h, w) = (kh * dim(rng, 1, 3) + dim(rng, 0, 1), kw * dim(rng, 1, 3) + dim(rng, 0, 1));
    let x = rand_t(rng, &[n, c, h, w], -1.0, 1.0);
    unary(rng, x, vec![n, c, h / kh, w / kw], move |g, x| pool::avg_pool2d(g, x, kh, kw))
}

fn global_max_mean(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, c, h, w) = (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4));
    let x = rand_t(rng, &[n, c, h, w], -1.0, 1.0);
    unary(rng, x, vec![n, c], |g, x| {
        let m = pool::global_max(g, x);
        let a = pool::global_mean(g, x);
        ops::add(g, m, a)
    })
}

fn gru(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, d, h) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 3), dim(rng, 1, 3));
    let proj = rand_t(rng, &[n, t, 2 * h], -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("x", rand_t(rng, &[n, t, d], -1.0, 1.0));
    for dir in ["f", "b"] {
        s.insert(format!("{dir}.w_ih"), rand_t(rng, &[3 * h, d], -0.8, 0.8));
        s.insert(format!("{dir}.w_hh"), rand_t(rng, &[3 * h, h], -0.8, 0.8));
        s.insert(format!("{dir}.b_ih"), rand_t(rng, &[3 * h], -0.5, 0.5));
        s.insert(format!("{dir}.b_hh"), rand_t(rng, &[3 * h], -0.5, 0.5));
    }
    check(s, move |s, g| {
        let x = p(g, s, "x");
        let mut weights = |dir: &str| GruWeights {
            w_ih: p(g, s, &format!("{dir}.w_ih")),
            w_hh: p(g, s, &format!("{dir}.w_hh")),
            b_ih: p(g, s, &format!("{dir}.b_ih")),
            b_hh: p(g, s, &format!("{dir}.b_hh")),
        };
        let (f, b) = (weights("f"), weights("b"));
        let y = bigru(g, x, f, b);
        project(g, y, &proj)
    })
}

fn soft_targets(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, t), |_| if rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { rng.random_range(0..2) as f64 })
}

fn loss_frame_bce(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t) = (dim(rng, 1, 3), dim(rng, 1, 8));
    let targets = soft_targets(rng, n, t);
    let mut s = ParamStore::new();
    s.insert("logits", rand_t(rng, &[n, t], -3.0, 3.0));
    check(s, move |s, g| {
        let x = p(g, s, "logits");
        let probs = ops::sigmoid(g, x);
        train::frame_bce_loss(g, probs, &targets)
    })
}

fn loss_clip_bce(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t) = (dim(rng, 1, 4), dim(rng, 1, 8));
    let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut s = ParamStore::new();
    s.insert("logits", rand_t(rng, &[n, t], -3.0, 3.0));
    check(s, move |s, g| {
        let x = p(g, s, "logits");
        let probs = ops::sigmoid(g, x);
        let clip = ops::linear_softmax_pool(g, probs);
        train::clip_bce_loss(g, clip, &targets)
    })
}

fn loss_total(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, k) = (dim(rng, 1, 3), dim(rng, 1, 6), dim(rng, 2, 5));
    let targets = soft_targets(rng, n, t);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut s = ParamStore::new();
    s.insert("frames", rand_t(rng, &[n, t], -3.0, 3.0));
    s.insert("class", rand_t(rng, &[n, k], -3.0, 3.0));
    check(s, move |s, g| {
        let f = p(g, s, "frames");
        let probs = ops::sigmoid(g, f);
        let sed = train::frame_bce_loss(g, probs, &targets);
        let c = p(g, s, "class");
        let cls = train::classification_loss(g, c, &labels);
        train::total_loss(g, sed, cls)
    })
}

/// Two inputs mixed by lambda, scored against equally mixed soft labels.
fn mixup_composition(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, d) = (dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 4));
    let lam = rng.random_range(0.0..1.0);
    let y1 = soft_targets(rng, n, t);
    let y2 = soft_targets(rng, n, t);
    let targets = &y1 * lam + &y2 * (1.0 - lam);
    let mut s = ParamStore::new();
    s.insert("x1", rand_t(rng, &[n * t, d], -1.0, 1.0));
    s.insert("x2", rand_t(rng, &[n * t, d], -1.0, 1.0));
    s.insert("w", rand_t(rng, &[d, 1], -1.0, 1.0));
    s.insert("b", rand_t(rng, &[1], -0.5, 0.5));
    check(s, move |s, g| {
        let (x1, x2) = (p(g, s, "x1"), p(g, s, "x2"));
        let x = ops::lerp(g, x1, x2, lam);
        let (w, b) = (p(g, s, "w"), p(g, s, "b"));
        let z = ops::linear(g, x, w, b);
        let z = ops::reshape(g, z, &[n, t]);
        let probs = ops::sigmoid(g, z);
        train::frame_bce_loss(g, probs, &targets)
    })
}

fn fusion_concat(rng: &mut ChaCha8Rng) -> GradCheckReport {
    concat_broadcast(rng)
}

fn fusion_multiply(rng: &mut ChaCha8Rng) -> GradCheckReport {
    let (n, t, d, e, k) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4));
    let proj = rand_t(rng, &[n, t, k], -1.0, 1.0);
    let mut s = ParamStore::new();
    s.insert("x", rand_t(rng, &[n, t, d], -1.0, 1.0));
    s.insert("e", rand_t(rng, &[n, e], -1.0, 1.0));
    s.insert("wt", rand_t(rng, &[d, k], -1.0, 1.0));
    s.insert("bt", rand_t(rng, &[k], -1.0, 1.0));
    s.insert("we", rand_t(rng, &[e, k], -1.0, 1.0));
    s.insert("be", rand_t(rng, &[k], -1.0, 1.0));
    check(s, move |s, g| {
        let x = p(g, s, "x");
        let flat = ops::reshape(g, x, &[n * t, d]);
        let (wt, bt) = (p(g, s, "wt"), p(g, s, "bt"));
        let xt = ops::linear(g, flat, wt, bt);
        let xt = ops::reshape(g, xt, &[n, t, k]);
        let ev = p(g, s, "e");
        let (we, be) = (p(g, s, "we"), p(g, s, "be"));
        let ep = ops::linear(g, ev, we, be);
        let y = ops::mul_broadcast(g, xt, ep);
        project(g, y, &proj)
    })
}

pub const TINY_MELS: usize = 8;

pub fn tiny_state(fusion: Fusion, seed: u64) -> ModelState {
    let mut cfg = ModelConfig::tiny(vec!["a".into(), "b".into(), "c".into()], TINY_MELS);
    cfg.fusion = fusion;
    ModelState::init(cfg, seed).unwrap()
}

/// Joint objective through both networks, everything trainable and batch
/// statistics on, i.e. the fine-tuning graph.
fn tiny_model(rng: &mut ChaCha8Rng, fusion: Fusion, supervision: Supervision) -> GradCheckReport {
    let state = tiny_state(fusion, rng.random());
    let cfg = state.config.clone();
    let (n, t) = (dim(rng, 1, 2), dim(rng, 2, 3));
    let tr = dim(rng, 16, 18);
    let mix = rand_t(rng, &[n, t, cfg.mixture_mels], -1.0, 1.0);
    let refs = rand_t(rng, &[n, tr, cfg.reference_dims], -1.0, 1.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.n_categories())).collect();
    let frame_targets = soft_targets(rng, n, t);
    let clip_targets: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let options = ForwardOptions {
        train_conditional: true,
        train_detection: true,
        conditional_batch_stats: true,
        detection_batch_stats: true,
    };
    let base = state.clone();
    let f = move |params: &ParamStore, g: &mut Graph| {
        let st = ModelState {
            params: params.clone(),
            ..base.clone()
        };
        let mut nb = NetworkBuilder::new(&st, options);
        let r = g.constant(refs.clone());
        let cond = nb.conditional(g, r).unwrap();
        let m = g.constant(mix.clone());
        let det = nb.detection(g, m, cond.embedding, supervision).unwrap();
        let sed = match supervision {
            Supervision::Strong => train::frame_bce_loss(g, det.frame_probs, &frame_targets),
            Supervision::Weak => train::clip_bce_loss(g, det.clip_probs.unwrap(), &clip_targets),
        };
        let cls = train::classification_loss(g, cond.logits, &labels);
        train::total_loss(g, sed, cls)
    };
    let params = state.params.clone();
    let opts = GradCheckOptions {
        per_tensor: Some(6),
        // ReLU and max-pool kinks sit densely in this graph; a smaller step
        // keeps the probes on one side of them.
        step: 1e-6,
        retry_above: Some(TOLERANCE),
        seed: rng.random(),
        ..opts()
    };
    check_gradients(&params, f, opts).expect("finite gradients")
}
