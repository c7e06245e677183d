//! Contact extraction and the bimanual grasp quality metric: force-closure
//! epsilon, torque balance, and dexterity.

mod contact;
mod epsilon;
mod metric;

pub use contact::{contact_wrenches, friction_cone_edges, grasp_contacts, Contact, Wrench};
pub(crate) use contact::tangent_basis;
pub use epsilon::{epsilon_quality, epsilon_quality_with, EpsilonConfig};
pub use metric::{
    bimanual_quality, bimanual_quality_with, dexterity, dexterity_with, torque_balance,
    torque_balance_with, QualityBreakdown, QualityConfig,
};
