//! The model: convolutional backbone, projector and predictor heads, the
//! box decoder, and the online/target parameter pair.
//!
//! Parameters live in [`ParamStore`]s and are bound to a tape once per step.
//! The online binding registers leaves so gradients accumulate; the target
//! binding produces off-tape constants, which is the stop-gradient: target
//! forwards run the same code but record nothing.

pub mod checkpoint;
mod decoder;
mod params;

pub use decoder::{decoder_forward, positional_encoding};
pub use params::{Binding, Branch, Initializer, Param, ParamStore};

use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown parameter {name}")]
    MissingParam { name: String },
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ShapeConflict {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected input shape {expected:?}, got {got:?}")]
    WrongInput {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("the target branch has no predictor")]
    TargetHasNoPredictor,
}

/// Static model dimensions. The backbone downsamples by the product of the
/// stage strides, so 64-pixel views become 8x8 feature maps.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_hw: usize,
    pub stage_widths: [usize; 4],
    pub stage_strides: [usize; 4],
    pub proj_hidden: usize,
    pub embed_dim: usize,
    pub pred_hidden: usize,
    pub d_model: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_hw: 64,
            stage_widths: [16, 32, 64, 64],
            stage_strides: [2, 2, 2, 1],
            proj_hidden: 64,
            embed_dim: 32,
            pred_hidden: 64,
            d_model: 64,
        }
    }
}

impl ArchConfig {
    pub fn feat_channels(&self) -> usize {
        self.stage_widths[3]
    }

    pub fn feat_hw(&self) -> usize {
        self.input_hw / self.stage_strides.iter().product::<usize>()
    }
}

/// Online parameters (backbone, projector, predictor, optional decoder) and
/// the target copy (backbone and projector only).
pub struct NetworkPair<S> {
    pub online: ParamStore<S>,
    pub target: ParamStore<S>,
    pub arch: ArchConfig,
    pub roi_feature_len: usize,
}

fn build_backbone<S: Scalar>(init: &mut Initializer, store: &mut ParamStore<S>, arch: &ArchConfig) {
    let mut cin = 3;
    for (i, &cout) in arch.stage_widths.iter().enumerate() {
        init.conv(store, &format!("backbone.stage{}.conv1", i + 1), 3, 3, cin, cout);
        init.conv(store, &format!("backbone.stage{}.conv2", i + 1), 3, 3, cout, cout);
        cin = cout;
    }
}

fn build_projector<S: Scalar>(
    init: &mut Initializer,
    store: &mut ParamStore<S>,
    arch: &ArchConfig,
    feature_len: usize,
) {
    init.linear(store, "proj.fc1", feature_len, arch.proj_hidden);
    init.linear(store, "proj.fc2", arch.proj_hidden, arch.embed_dim);
}

impl<S: Scalar> NetworkPair<S> {
    /// Seeded construction; the target starts as an exact copy of the shared
    /// online parameters. `roi_feature_len` sizes the projector input to the
    /// pooling mode in use.
    pub fn new(
        arch: ArchConfig,
        roi_feature_len: usize,
        with_decoder: bool,
        seed: u64,
    ) -> Result<Self, NetError> {
        let mut init = Initializer::new(seed);
        let mut online = ParamStore::new();
        build_backbone(&mut init, &mut online, &arch);
        build_projector(&mut init, &mut online, &arch, roi_feature_len);
        init.linear(&mut online, "pred.fc1", arch.embed_dim, arch.pred_hidden);
        init.linear(&mut online, "pred.fc2", arch.pred_hidden, arch.embed_dim);
        if with_decoder {
            init.linear(&mut online, "decoder.q", arch.embed_dim, arch.d_model);
            init.linear(&mut online, "decoder.k", arch.feat_channels(), arch.d_model);
            init.linear(&mut online, "decoder.v", arch.feat_channels(), arch.d_model);
            init.linear(&mut online, "decoder.head.fc1", arch.d_model, arch.d_model);
            init.linear(&mut online, "decoder.head.fc2", arch.d_model, 4);
        }

        let mut target_init = Initializer::new(seed);
        let mut target = ParamStore::new();
        build_backbone(&mut target_init, &mut target, &arch);
        build_projector(&mut target_init, &mut target, &arch, roi_feature_len);
        target.copy_shared_from(&online)?;

        Ok(NetworkPair {
            online,
            target,
            arch,
            roi_feature_len,
        })
    }

    /// Hard reset of the target to the current online values.
    pub fn copy_online_to_target(&mut self) -> Result<(), NetError> {
        self.target.copy_shared_from(&self.online)
    }
}

/// Full backbone: four stages of conv-tanh-conv-tanh, first conv of each
/// stage strided. `[hw,hw,3]` in, `[hw/8,hw/8,C]` out.
pub fn backbone_forward<S: Scalar>(
    arch: &ArchConfig,
    bind: &Binding<S>,
    image: &Tensor<S>,
) -> Result<Tensor<S>, NetError> {
    let expected = vec![arch.input_hw, arch.input_hw, 3];
    if image.shape() != expected.as_slice() {
        return Err(NetError::WrongInput {
            expected,
            got: image.shape().to_vec(),
        });
    }
    let x = backbone_forward_sized(arch, bind, image)?;
    debug_assert_eq!(
        x.shape(),
        &[arch.feat_hw(), arch.feat_hw(), arch.feat_channels()]
    );
    Ok(x)
}

/// Backbone over any square RGB input of at least 8 pixels; smaller views
/// (box crops) produce proportionally smaller feature maps.
pub fn backbone_forward_sized<S: Scalar>(
    arch: &ArchConfig,
    bind: &Binding<S>,
    image: &Tensor<S>,
) -> Result<Tensor<S>, NetError> {
    let s = image.shape();
    if s.len() != 3 || s[0] != s[1] || s[2] != 3 || s[0] < 8 {
        return Err(NetError::WrongInput {
            expected: vec![arch.input_hw, arch.input_hw, 3],
            got: s.to_vec(),
        });
    }
    // pixels arrive in [0,1]; mapping to [-1,1] strips the shared brightness
    // level that would otherwise project onto one fixed feature direction
    // common to every box and dominate the normalized embeddings
    let mut x = image.mul_scalar(S::from_f64(2.0))?.add_scalar(-S::one())?;
    for (i, &stride) in arch.stage_strides.iter().enumerate() {
        for (j, s) in [(1, stride), (2, 1)] {
            let prefix = format!("backbone.stage{}.conv{}", i + 1, j);
            let w = bind.get(&format!("{prefix}.w"))?;
            let b = bind.get(&format!("{prefix}.b"))?;
            // centered activations: without batch statistics, a rectifying
            // backbone accumulates a shared positive component every layer
            // that swamps box-to-box feature differences and collapses the
            // normalized embedding spread before training even starts
            x = x.conv2d(w, s, 1)?.add(b)?.tanh()?;
        }
    }
    Ok(x)
}

/// Two-layer MLP over row vectors: `[N,in] -> [N,out]`.
pub fn mlp_forward<S: Scalar>(
    bind: &Binding<S>,
    prefix: &str,
    x: &Tensor<S>,
) -> Result<Tensor<S>, NetError> {
    let h = x
        .matmul(bind.get(&format!("{prefix}.fc1.w"))?)?
        .add(bind.get(&format!("{prefix}.fc1.b"))?)?
        .relu()?;
    Ok(h.matmul(bind.get(&format!("{prefix}.fc2.w"))?)?
        .add(bind.get(&format!("{prefix}.fc2.b"))?)?)
}

/// Projection head, available on both branches: `[N,D] -> [N,embed]`.
pub fn project<S: Scalar>(bind: &Binding<S>, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
    mlp_forward(bind, "proj", x)
}

/// Prediction head, online branch only: `[N,embed] -> [N,embed]`.
pub fn predict<S: Scalar>(bind: &Binding<S>, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
    if bind.branch == Branch::Target {
        return Err(NetError::TargetHasNoPredictor);
    }
    mlp_forward(bind, "pred", x)
}
