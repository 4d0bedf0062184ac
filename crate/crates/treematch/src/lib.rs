//! Online fractional matching with free disposal on growing trees and
//! forests.

pub mod fracstate;
pub mod harness;
pub mod instance;
pub mod matcher;
pub mod mcm_forest;
pub mod mcm_tree;
pub mod mwm_tree;
pub mod oracle;
pub mod pd_verify;
pub mod rational;
pub mod rounding;
