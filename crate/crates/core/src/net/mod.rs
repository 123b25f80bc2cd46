//! Feedforward networks and their reverse-mode derivatives.

mod conv;
mod jacobian;
mod layer;
mod network;
mod serialize;

pub use conv::Conv2d;
pub use jacobian::{jacobians, weight_gradient_identity_check, JacobianBundle};
pub use layer::{Activation, Dense, Layer, ResidualBlock};
pub use network::{ForwardTrace, Gradients, LinearLayerInfo, Network};
pub use serialize::{load_network, network_from_json, network_to_json, save_network, NETWORK_FORMAT, NETWORK_VERSION};
