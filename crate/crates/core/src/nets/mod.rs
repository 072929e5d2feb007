//! CNN-2 / CNN-4 encoders, classification and projection heads, and the
//! checkpoint container.

mod checkpoint;
mod encoder;
mod heads;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use encoder::{he_uniform, Encoder, EncoderSpec, RunningStats, Variant, BN_EPS, BN_MOMENTUM};
pub use heads::{
    argmax_rows, cosine_logits, fit_logistic, head_logits, head_params, infer, linear_logits, logistic_probs,
    nn_predict, normalize_rows, param_count, projection, proto_logits, prototypes, prototypes_var, relation_scores,
    shuffled, HeadKind, HeadSpec, COSINE_SCALE, PROJECTION_DIM, RELATION_HIDDEN,
};
