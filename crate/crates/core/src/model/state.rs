use ndarray::{Array1, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::{Fusion, ModelConfig};
use crate::nn::init::{fan_in_uniform, orthogonal, uniform_tensor};
use crate::nn::norm::BatchStats;
use crate::nn::{ParamStore, Tensor};

pub const STATE_VERSION: u32 = 1;

/// Prefix of every conditional-network parameter.
pub const CONDITIONAL_PREFIX: &str = "cond.";
/// Prefix of every detection-network parameter.
pub const DETECTION_PREFIX: &str = "det.";

/// All trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Batch-norm running means and variances.
    pub buffers: ParamStore,
    pub version: u32,
}

fn zeros(shape: &[usize]) -> Tensor {
    ArrayD::zeros(IxDyn(shape))
}

fn ones(shape: &[usize]) -> Tensor {
    ArrayD::ones(IxDyn(shape))
}

impl ModelState {
    /// Seeded initialisation.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();

        let add_bn = |params: &mut ParamStore, buffers: &mut ParamStore, prefix: &str, c: usize| {
            params.insert(format!("{prefix}.gamma"), ones(&[c]));
            params.insert(format!("{prefix}.beta"), zeros(&[c]));
            buffers.insert(format!("{prefix}.running_mean"), zeros(&[c]));
            buffers.insert(format!("{prefix}.running_var"), ones(&[c]));
        };

        add_bn(&mut params, &mut buffers, "cond.bn_in", config.reference_dims);
        let mut cin = 1;
        for (b, &cout) in config.conditional_channels.iter().enumerate() {
            for k in 0..2 {
                let p = format!("cond.block{b}.conv{k}");
                params.insert(format!("{p}.weight"), fan_in_uniform(&[cout, cin, 3, 3], cin * 9, &mut rng));
                params.insert(format!("{p}.bias"), zeros(&[cout]));
                add_bn(&mut params, &mut buffers, &format!("cond.block{b}.bn{k}"), cout);
                cin = cout;
            }
        }
        let pooled = cin;
        let e = config.embedding_dim;
        params.insert("cond.embed.weight", fan_in_uniform(&[pooled, e], pooled, &mut rng));
        params.insert("cond.embed.bias", zeros(&[e]));
        let k = config.n_categories();
        params.insert("cond.cls.weight", fan_in_uniform(&[pooled, k], pooled, &mut rng));
        params.insert("cond.cls.bias", zeros(&[k]));

        add_bn(&mut params, &mut buffers, "det.bn_in", config.mixture_mels);
        let mut cin = 1;
        for (l, &cout) in config.detection_channels.iter().enumerate() {
            params.insert(format!("det.conv{l}.weight"), fan_in_uniform(&[cout, cin, 3, 3], cin * 9, &mut rng));
            params.insert(format!("det.conv{l}.bias"), zeros(&[cout]));
            add_bn(&mut params, &mut buffers, &format!("det.bn{l}"), cout);
            cin = cout;
        }
        let feat = config.detection_feature_width();
        let gru_in = match config.fusion {
            Fusion::Concat => feat,
            Fusion::Multiply => {
                let d = config.fusion_width;
                params.insert("det.fuse.time.weight", fan_in_uniform(&[feat, d], feat, &mut rng));
                params.insert("det.fuse.time.bias", zeros(&[d]));
                params.insert("det.fuse.embed.weight", fan_in_uniform(&[e, d], e, &mut rng));
                params.insert("det.fuse.embed.bias", zeros(&[d]));
                d
            }
        };
        let h = config.gru_hidden;
        for dir in ["fwd", "bwd"] {
            let p = format!("det.gru.{dir}");
            params.insert(
                format!("{p}.w_ih"),
                uniform_tensor(&[3 * h, gru_in], 1.0 / (gru_in as f64).sqrt(), &mut rng),
            );
            let mut w_hh = ndarray::Array2::<f64>::zeros((3 * h, h));
            for gate in 0..3 {
                let q = orthogonal(h, &mut rng);
                w_hh.slice_mut(ndarray::s![gate * h..(gate + 1) * h, ..]).assign(&q);
            }
            params.insert(format!("{p}.w_hh"), w_hh.into_dyn());
            params.insert(format!("{p}.b_ih"), zeros(&[3 * h]));
            params.insert(format!("{p}.b_hh"), zeros(&[3 * h]));
        }
        let fc = config.fc_hidden;
        params.insert("det.fc1.weight", fan_in_uniform(&[2 * h, fc], 2 * h, &mut rng));
        params.insert("det.fc1.bias", zeros(&[fc]));
        params.insert("det.fc2.weight", fan_in_uniform(&[fc, 1], fc, &mut rng));
        params.insert("det.fc2.bias", zeros(&[1]));

        Ok(Self {
            config,
            params,
            buffers,
            version: STATE_VERSION,
        })
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    pub fn is_conditional(name: &str) -> bool {
        name.starts_with(CONDITIONAL_PREFIX)
    }

    pub fn is_detection(name: &str) -> bool {
        name.starts_with(DETECTION_PREFIX)
    }

    /// Folds batch statistics into the running buffers.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats)]) {
        let m = self.config.bn_momentum;
        for (prefix, s) in stats {
            let blend = |buf: &mut Tensor, batch: &Array1<f64>| {
                for (r, &b) in buf.iter_mut().zip(batch.iter()) {
                    *r = (1.0 - m) * *r + m * b;
                }
            };
            if let Some(buf) = self.buffers.get_mut(&format!("{prefix}.running_mean")) {
                blend(buf, &s.mean);
            }
            if let Some(buf) = self.buffers.get_mut(&format!("{prefix}.running_var")) {
                blend(buf, &s.var);
            }
        }
    }

    pub(crate) fn running(&self, prefix: &str) -> (Array1<f64>, Array1<f64>) {
        let read = |suffix: &str| {
            self.buffers
                .expect(&format!("{prefix}.{suffix}"))
                .clone()
                .into_dimensionality::<ndarray::Ix1>()
                .unwrap()
        };
        (read("running_mean"), read("running_var"))
    }

    /// Copies every conditional-network tensor from `other`, which must
    /// share the conditional architecture and class list.
    pub fn adopt_conditional(&mut self, other: &ModelState) -> Result<()> {
        let (a, b) = (&self.config, &other.config);
        if a.categories != b.categories
            || a.conditional_channels != b.conditional_channels
            || a.embedding_dim != b.embedding_dim
            || a.reference_dims != b.reference_dims
        {
            return Err(Error::Config(
                "conditional networks differ in classes or architecture; re-run pretraining".into(),
            ));
        }
        for (store, src) in [(&mut self.params, &other.params), (&mut self.buffers, &other.buffers)] {
            for (name, value) in src.iter().filter(|(n, _)| Self::is_conditional(n)) {
                store.insert(name.clone(), value.clone());
            }
        }
        Ok(())
    }

    /// Errors if any parameter or buffer is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        if let Some(name) = self.params.first_non_finite().or(self.buffers.first_non_finite()) {
            return Err(Error::Divergence(format!("non-finite value in `{name}`")));
        }
        Ok(())
    }
}
