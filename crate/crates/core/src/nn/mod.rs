//! Neural building blocks: named parameter storage, feed-forward networks,
//! LSTM cells, the Adam optimizer and the checkpoint codec.

mod adam;
pub mod checkpoint;
mod fnn;
mod init;
mod lstm;
mod params;

pub use adam::{Adam, AdamConfig};
pub use fnn::{Activation, Dense, Fnn};
pub use init::{name_seed, xavier_bound, xavier_uniform};
pub use lstm::{Lstm, LstmState};
pub use params::{Bound, ParamId, ParamStore};
