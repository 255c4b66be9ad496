//! Standalone fusion operators on plain matrices.
//!
//! The detection network builds the same operations on its graph; these
//! entry points expose them for inspection and testing.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::network::ConditionalEmbedding;
use crate::model::state::ModelState;

/// Row `i` of the result is `[frames_i | e]`.
pub fn fuse_concat(e: &ConditionalEmbedding, frames: &Array2<f64>) -> Array2<f64> {
    let (t, d) = frames.dim();
    let mut out = Array2::<f64>::zeros((t, d + e.dim()));
    for (mut row, src) in out.rows_mut().into_iter().zip(frames.rows()) {
        row.slice_mut(ndarray::s![..d]).assign(&src);
        for (dst, &v) in row.slice_mut(ndarray::s![d..]).iter_mut().zip(&e.0) {
            *dst = v;
        }
    }
    out
}

fn read2(state: &ModelState, name: &str) -> Result<Array2<f64>> {
    state
        .params
        .get(name)
        .ok_or_else(|| Error::Config(format!("multiplicative fusion needs parameter `{name}`")))?
        .clone()
        .into_dimensionality()
        .map_err(|e| Error::Shape(format!("{name}: {e}")))
}

fn read1(state: &ModelState, name: &str) -> Result<Array1<f64>> {
    state
        .params
        .get(name)
        .ok_or_else(|| Error::Config(format!("multiplicative fusion needs parameter `{name}`")))?
        .clone()
        .into_dimensionality()
        .map_err(|e| Error::Shape(format!("{name}: {e}")))
}

/// Embedding projection broadcast over frames: `proj_embed(e)`.
pub fn project_embedding(e: &ConditionalEmbedding, state: &ModelState) -> Result<Array1<f64>> {
    let w = read2(state, "det.fuse.embed.weight")?;
    let b = read1(state, "det.fuse.embed.bias")?;
    if w.nrows() != e.dim() {
        return Err(Error::Shape(format!("embedding has {} dims, projection expects {}", e.dim(), w.nrows())));
    }
    Ok(Array1::from(e.0.clone()).dot(&w) + &b)
}

/// Pointwise frame projection: `proj_time(frames)`.
pub fn project_frames(frames: &Array2<f64>, state: &ModelState) -> Result<Array2<f64>> {
    let w = read2(state, "det.fuse.time.weight")?;
    let b = read1(state, "det.fuse.time.bias")?;
    if w.nrows() != frames.ncols() {
        return Err(Error::Shape(format!(
            "frames have width {}, projection expects {}",
            frames.ncols(),
            w.nrows()
        )));
    }
    Ok(frames.dot(&w) + &b)
}

/// `proj_time(frames)_i * proj_embed(e)` for every frame `i`.
pub fn fuse_multiply(e: &ConditionalEmbedding, frames: &Array2<f64>, state: &ModelState) -> Result<Array2<f64>> {
    let pe = project_embedding(e, state)?;
    let pt = project_frames(frames, state)?;
    Ok(&pt * &pe.insert_axis(Axis(0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;
    use ndarray::ArrayD;

    fn state() -> ModelState {
        ModelState::init(ModelConfig::desk(vec!["a".into(), "b".into()]), 5).unwrap()
    }

    fn frames(t: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((t, d), |(i, j)| ((i * 31 + j * 7) % 13) as f64 / 13.0 - 0.5)
    }

    #[test]
    fn concat_single_row_ends_with_embedding() {
        let e = ConditionalEmbedding((0..128).map(|i| i as f64 * 0.01).collect());
        let f = frames(1, 64);
        let out = fuse_concat(&e, &f);
        assert_eq!(out.dim(), (1, 192));
        assert_eq!(out.row(0).slice(ndarray::s![64..]).to_vec(), e.0);
        assert_eq!(out.slice(ndarray::s![.., ..64]), f);
    }

    #[test]
    fn concat_zero_embedding_pads_zeros() {
        let e = ConditionalEmbedding(vec![0.0; 128]);
        let out = fuse_concat(&e, &frames(5, 3));
        assert!(out.slice(ndarray::s![.., 3..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn concat_equal_frames_give_equal_rows() {
        let e = ConditionalEmbedding((0..128).map(|i| (i as f64).sin()).collect());
        let mut f = frames(4, 6);
        let r0 = f.row(0).to_owned();
        f.row_mut(2).assign(&r0);
        let out = fuse_concat(&e, &f);
        assert_eq!(out.row(0), out.row(2));
    }

    #[test]
    fn multiply_identity_and_annihilator() {
        let mut s = state();
        let d = s.config.detection_feature_width();
        let f = frames(7, d);
        let e = ConditionalEmbedding(vec![0.3; 128]);
        // Zero weights: the embedding projection reduces to its bias.
        s.params.insert("det.fuse.embed.weight", ArrayD::zeros(ndarray::IxDyn(&[128, 128])));
        s.params.insert("det.fuse.embed.bias", ArrayD::ones(ndarray::IxDyn(&[128])));
        let pt = project_frames(&f, &s).unwrap();
        assert_eq!(fuse_multiply(&e, &f, &s).unwrap(), pt);
        s.params.insert("det.fuse.embed.bias", ArrayD::zeros(ndarray::IxDyn(&[128])));
        assert!(fuse_multiply(&e, &f, &s).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn multiply_is_linear_in_embedding_projection() {
        let mut s = state();
        let d = s.config.detection_feature_width();
        let f = frames(5, d);
        let e = ConditionalEmbedding((0..128).map(|i| (i as f64 * 0.37).cos()).collect());
        let base = fuse_multiply(&e, &f, &s).unwrap();
        for name in ["det.fuse.embed.weight", "det.fuse.embed.bias"] {
            s.params.get_mut(name).unwrap().mapv_inplace(|v| 2.0 * v);
        }
        let doubled = fuse_multiply(&e, &f, &s).unwrap();
        for (a, b) in doubled.iter().zip(base.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }
}
