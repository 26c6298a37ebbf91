//! Multi-scale generator and discriminator.

mod nets;
mod pyramid;
mod spec;

pub use nets::{
    disc_conv_name, disc_fc_name, discriminator_forward, discriminator_logits, gen_conv_name,
    generator_forward, init_discriminator, init_generator, Generator,
};
pub use pyramid::{build_pyramid, downscale_levels, ScalePyramid};
pub use spec::{
    ConvStack, DiscScale, DiscriminatorSpec, GeneratorSpec, ModelSpec, ScaleConfig, PRESETS,
};
