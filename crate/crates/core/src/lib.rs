//! Secure limit exchange on radial distribution networks.
//!
//! The DSO hands every customer an operating envelope (a lower and upper
//! bound on net active power) chosen so that the network stays within its
//! line limits for any combination of powers inside the envelopes.
//! Customers then trade portions of their envelopes in a market that only
//! accepts trades preserving that guarantee.

pub mod allocation;
pub mod envelopes;
pub mod lp;
pub mod market;
pub mod money;
pub mod network;
pub mod scenario;
pub mod sim;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use allocation::{allocate_does, lex_iteration, AllocationBounds, AllocationError, AllocationResult};
pub use envelopes::{clamp_to_envelope, verify_limits, verify_limits_oracle, DoeMatrix, Envelope, EnvelopeError};
pub use lp::{LinearProgram, LpSolution, LpStatus, Relation};
pub use market::{clear, settle, BoundSide, ClearingOutcome, MarketError, Order, OrderBook, PowerKind, Side};
pub use money::Money;
pub use network::{check_profile_security, dc_power_flow, validate_radial, Line, Network, NetworkError, NetworkSpec, PowerProfile};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError, ScenarioFile, Strictness};
pub use sim::{compare, FlexBehavior, Scheme, SchemeReport, SimError};
