#![allow(dead_code)]

use tsg_train::RunConfig;

/// Small enough to train a few steps in well under a second.
pub const TINY: &str = "\
# tiny run for tests
image_size = 16
patch_size = 4
stage_blocks = 1,1
stage_dims = 4,8
stage_heads = 2,2
mlp_ratio = 2
d_f = 6
d_a = 5
gate_hidden = 5
decoder_heads = 2
decoder_blocks = 2
classes = 3
objects_min = 1
objects_max = 2
train_samples = 4
val_samples = 2
steps = 6
batch_size = 2
eval_every = 3
lr = 0.01
";

pub fn tiny() -> RunConfig {
    RunConfig::from_text(TINY).unwrap()
}

pub fn tiny_f64() -> RunConfig {
    RunConfig {
        precision: tsg_train::Precision::F64,
        ..tiny()
    }
}
