//! Model assembly: layer chains, flows over a standard-normal base, the
//! augmented model (density flow + variational companions), flat parameter
//! addressing, and declarative model specs.

mod flow;
mod registry;
pub(crate) mod spec;
mod stack;

pub use flow::{ConditionalFlow, Flow, SamplePass, VFlowModel};
pub use registry::{ParamEntry, ParamRegistry};
pub use spec::{FlowSpec, LayerSpec, MaskSpec, ModelSpec};
pub use stack::{ChainCache, LayerStack};
