//! Secondary frequency control: PI law, consensus weights and the
//! controller units for the centralized and distributed architectures.

pub mod agent;
pub mod centralized;
pub mod pi;
pub mod weights;

pub use agent::{AgentPi, ConsensusAgent, ConsensusConfig, Phase};
pub use centralized::{LocalController, MgccUnit};
pub use pi::{pi_step, PiParams, PiState};
pub use weights::{consensus_oracle, metropolis_weights, spread, WeightMatrix};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("communication graph has no agents")]
    EmptyGraph,
    #[error("edge references unknown agent {0}")]
    UnknownAgent(u32),
    #[error("agent {0} is linked to itself")]
    SelfLoop(u32),
    #[error("communication graph is disconnected")]
    Disconnected,
}
