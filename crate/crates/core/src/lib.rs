//! Information-theoretic secure aggregation of federated-learning updates.
//!
//! Clients quantize their gradients, encode each element as an M-PSK phase,
//! and rotate the phases by masks built from reciprocal wireless channel
//! phases shared with the clients of the opposite (sub)group. The masks
//! cancel in the parameter server's modulo-2π sum, so the server learns the
//! aggregate and nothing else. Dropped clients are handled by revealing
//! either their pairwise channel shares or the survivors' private phases,
//! never both for the same client.
//!
//! All angles are [`Turn32`] values: fixed-point fractions of a full turn on
//! a 2³² grid, which makes every cancellation identity exact.

pub mod analysis;
pub mod channel;
pub mod codec;
pub mod fl;
pub mod masking;
pub mod protocol;
pub mod rng;
pub mod scenario;
mod turn;

pub use turn::Turn32;

/// Index of a simulated client, `0..num_clients`.
pub type ClientId = usize;
