//! Plans, parties and the machinery that executes them.

pub mod exec;
pub mod frame;
pub mod party;
pub mod plan;
pub mod session;
pub mod sim;
pub mod stats;
pub mod transport;

pub use exec::{execute_plan, InputSet, PartyOutcome, SessionContext};
pub use frame::{Frame, FrameHeader, Phase};
pub use party::PartyId;
pub use plan::{ComputationPlan, NodeId, Op, PlainFn, PlanBuilder, PlanId, Sharing};
pub use session::{run_session, SessionOutcome};
pub use sim::{simulate_plan, SimTruncation};
pub use stats::{predict_traffic, ChannelStats, LinkStats};
pub use transport::{Endpoint, TransportKind};
