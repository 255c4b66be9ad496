//! Bidirectional gated recurrent layer with a fused backward pass.
//!
//! Gate layout follows the common `[reset, update, new]` stacking:
//!
//! ```text
//! r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//! z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//! n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix2, Ix3};

use crate::nn::graph::{Graph, Tensor, Var};

/// Parameter handles for one direction.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    /// `[3H, D]`
    pub w_ih: Var,
    /// `[3H, H]`
    pub w_hh: Var,
    /// `[3H]`
    pub b_ih: Var,
    /// `[3H]`
    pub b_hh: Var,
}

struct DirWeights {
    w_ih: Array2<f64>,
    w_hh: Array2<f64>,
    b_ih: Array1<f64>,
    b_hh: Array1<f64>,
}

impl DirWeights {
    fn read(g: &Graph, w: &GruWeights) -> Self {
        let m2 = |v: Var| g.value(v).clone().into_dimensionality::<Ix2>().unwrap();
        let m1 = |v: Var| g.value(v).clone().into_dimensionality::<Ix1>().unwrap();
        Self {
            w_ih: m2(w.w_ih),
            w_hh: m2(w.w_hh),
            b_ih: m1(w.b_ih),
            b_hh: m1(w.b_hh),
        }
    }
}

/// Values cached per time step for the backward pass.
struct StepCache {
    h_prev: Array2<f64>,
    r: Array2<f64>,
    z: Array2<f64>,
    n: Array2<f64>,
    gh_n: Array2<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Runs one direction. `order` lists time indices in processing order.
/// Returns outputs `[N, T, H]` indexed by original time and per-step caches
/// in processing order.
fn run_direction(x: &Array3<f64>, w: &DirWeights, order: &[usize]) -> (Array3<f64>, Vec<StepCache>) {
    let (n, t, d) = x.dim();
    let hid = w.w_hh.ncols();
    let x2 = x.to_shape((n * t, d)).unwrap();
    let gi_all = x2.dot(&w.w_ih.t()) + &w.b_ih;
    let gi_all = gi_all.to_shape((n, t, 3 * hid)).unwrap().into_owned();

    let mut out = Array3::<f64>::zeros((n, t, hid));
    let mut caches = Vec::with_capacity(t);
    let mut h = Array2::<f64>::zeros((n, hid));
    for &step in order {
        let gi = gi_all.index_axis(Axis(1), step);
        let gh = h.dot(&w.w_hh.t()) + &w.b_hh;
        let mut r = Array2::<f64>::zeros((n, hid));
        let mut z = Array2::<f64>::zeros((n, hid));
        let mut nn = Array2::<f64>::zeros((n, hid));
        let mut h_new = Array2::<f64>::zeros((n, hid));
        for b in 0..n {
            for k in 0..hid {
                let rv = sigmoid(gi[[b, k]] + gh[[b, k]]);
                let zv = sigmoid(gi[[b, hid + k]] + gh[[b, hid + k]]);
                let nv = (gi[[b, 2 * hid + k]] + rv * gh[[b, 2 * hid + k]]).tanh();
                r[[b, k]] = rv;
                z[[b, k]] = zv;
                nn[[b, k]] = nv;
                h_new[[b, k]] = (1.0 - zv) * nv + zv * h[[b, k]];
            }
        }
        out.index_axis_mut(Axis(1), step).assign(&h_new);
        caches.push(StepCache {
            h_prev: h,
            r,
            z,
            n: nn,
            gh_n: gh.slice(s![.., 2 * hid..]).to_owned(),
        });
        h = h_new;
    }
    (out, caches)
}

struct DirGrads {
    dx: Array3<f64>,
    w_ih: Array2<f64>,
    w_hh: Array2<f64>,
    b_ih: Array1<f64>,
    b_hh: Array1<f64>,
}

fn backward_direction(
    x: &Array3<f64>,
    w: &DirWeights,
    order: &[usize],
    caches: &[StepCache],
    dout: &Array3<f64>,
) -> DirGrads {
    let (n, t, d) = x.dim();
    let hid = w.w_hh.ncols();
    let mut dgi_all = Array3::<f64>::zeros((n, t, 3 * hid));
    let mut dw_hh = Array2::<f64>::zeros((3 * hid, hid));
    let mut db_hh = Array1::<f64>::zeros(3 * hid);
    let mut carry = Array2::<f64>::zeros((n, hid));
    for (pos, &step) in order.iter().enumerate().rev() {
        let c = &caches[pos];
        let dh = &dout.index_axis(Axis(1), step) + &carry;
        let mut dgh = Array2::<f64>::zeros((n, 3 * hid));
        let mut dh_prev = Array2::<f64>::zeros((n, hid));
        {
            let mut dgi = dgi_all.index_axis_mut(Axis(1), step);
            for b in 0..n {
                for k in 0..hid {
                    let (rv, zv, nv) = (c.r[[b, k]], c.z[[b, k]], c.n[[b, k]]);
                    let g = dh[[b, k]];
                    let dn = g * (1.0 - zv);
                    let dz = g * (c.h_prev[[b, k]] - nv);
                    dh_prev[[b, k]] = g * zv;
                    let dn_pre = dn * (1.0 - nv * nv);
                    let dr = dn_pre * c.gh_n[[b, k]];
                    let dr_pre = dr * rv * (1.0 - rv);
                    let dz_pre = dz * zv * (1.0 - zv);
                    dgi[[b, k]] = dr_pre;
                    dgi[[b, hid + k]] = dz_pre;
                    dgi[[b, 2 * hid + k]] = dn_pre;
                    dgh[[b, k]] = dr_pre;
                    dgh[[b, hid + k]] = dz_pre;
                    dgh[[b, 2 * hid + k]] = dn_pre * rv;
                }
            }
        }
        dw_hh += &dgh.t().dot(&c.h_prev);
        db_hh += &dgh.sum_axis(Axis(0));
        dh_prev += &dgh.dot(&w.w_hh);
        carry = dh_prev;
    }
    let dgi2 = dgi_all.to_shape((n * t, 3 * hid)).unwrap().into_owned();
    let x2 = x.to_shape((n * t, d)).unwrap();
    DirGrads {
        dx: dgi2.dot(&w.w_ih).to_shape((n, t, d)).unwrap().into_owned(),
        w_ih: dgi2.t().dot(&x2),
        w_hh: dw_hh,
        b_ih: dgi2.sum_axis(Axis(0)),
        b_hh: db_hh,
    }
}

/// `x [N, T, D] -> [N, T, 2H]`: forward-direction states then
/// backward-direction states along the last axis. Initial states are zero.
pub fn bigru(g: &mut Graph, x: Var, fwd: GruWeights, bwd: GruWeights) -> Var {
    let x3: Array3<f64> = g
        .value(x)
        .clone()
        .into_dimensionality::<Ix3>()
        .expect("bigru: input must be [N, T, D]");
    let (n, t, _) = x3.dim();
    let wf = DirWeights::read(g, &fwd);
    let wb = DirWeights::read(g, &bwd);
    let hid = wf.w_hh.ncols();
    let order_f: Vec<usize> = (0..t).collect();
    let order_b: Vec<usize> = (0..t).rev().collect();
    let (out_f, cache_f) = run_direction(&x3, &wf, &order_f);
    let (out_b, cache_b) = run_direction(&x3, &wb, &order_b);
    let mut out = Array3::<f64>::zeros((n, t, 2 * hid));
    out.slice_mut(s![.., .., ..hid]).assign(&out_f);
    out.slice_mut(s![.., .., hid..]).assign(&out_b);

    let parents = [x, fwd.w_ih, fwd.w_hh, fwd.b_ih, fwd.b_hh, bwd.w_ih, bwd.w_hh, bwd.b_ih, bwd.b_hh];
    g.push(
        out.into_dyn(),
        &parents,
        Box::new(move |grad: &Tensor, needs: &[bool]| {
            let g3 = grad.view().into_dimensionality::<Ix3>().unwrap();
            let df = g3.slice(s![.., .., ..hid]).to_owned();
            let db = g3.slice(s![.., .., hid..]).to_owned();
            let gf = backward_direction(&x3, &wf, &order_f, &cache_f, &df);
            let gb = backward_direction(&x3, &wb, &order_b, &cache_b, &db);
            let pick = |need: bool, t: ArrayD<f64>| need.then_some(t);
            vec![
                pick(needs[0], (gf.dx + gb.dx).into_dyn()),
                pick(needs[1], gf.w_ih.into_dyn()),
                pick(needs[2], gf.w_hh.into_dyn()),
                pick(needs[3], gf.b_ih.into_dyn()),
                pick(needs[4], gf.b_hh.into_dyn()),
                pick(needs[5], gb.w_ih.into_dyn()),
                pick(needs[6], gb.w_hh.into_dyn()),
                pick(needs[7], gb.b_ih.into_dyn()),
                pick(needs[8], gb.b_hh.into_dyn()),
            ]
        }),
    )
}
