//! Conservative perception abstractions for probabilistic safety
//! verification: interval MDP models, reachability checking, confidence
//! intervals for binned detection statistics, and an emergency-braking
//! case study with a CLI driver.

pub mod abstraction;
pub mod aebs;
pub mod checker;
pub mod driver;
pub mod linalg;
pub mod markov;
pub mod stats;

pub use driver::run;
