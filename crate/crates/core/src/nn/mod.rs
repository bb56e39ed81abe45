//! Generator and discriminator networks on a small CPU tensor engine.

mod discriminator;
mod generator;
pub mod ops;
mod params;
pub mod spec;
mod tensor;

pub use discriminator::{decision_value, Discriminator, DiscriminatorTrace};
pub use generator::{Generator, GeneratorTrace, Mode};
pub use params::{init_params, ModelParams, ParamLayout, INIT_STD};
pub use spec::{receptive_field, DiscStage, DiscriminatorSpec, GeneratorSpec, Preset, NETWORK_RESOLUTION};
pub use tensor::{gemm, Scalar, Tensor};
