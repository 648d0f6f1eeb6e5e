//! Policy/value networks, action mappings, advantage estimation, PPO losses,
//! and the training loop.

pub mod checkpoint;
pub mod gae;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod train;
