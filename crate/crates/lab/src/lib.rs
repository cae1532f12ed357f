//! Standard-library side of the toolkit: wall-clock timing, file formats,
//! live NMS measurement for the simulator and the `overload` CLI.

pub mod cli;
pub mod clock;
pub mod error;
pub mod formats;
pub mod measured;

pub use clock::StdClock;
pub use error::{LabError, LabResult};
