//! Server/client orchestration: client selection, strategy-dependent
//! distribution, local training and weighted aggregation, plus the
//! centralized baseline.

mod aggregate;
mod centralized;
mod client;
mod config;
mod local;
mod server;

pub use aggregate::aggregate;
pub use centralized::run_centralized;
pub use client::{ClientState, ClientUpdate};
pub use config::{FederatedConfig, Strategy};
pub use server::{distribute, run_federated, select_clients, DistributeEvent, RoundRecord, RunOutput, Server};
