//! Slow, independent reference implementations for the test suites.
//!
//! Geometry, boxes and returns work on plain `f64` arrays and re-derive their
//! answers from first principles. The serial trainer drives the real
//! simulator and network but owns every piece of training bookkeeping.

pub mod boxes;
pub mod curves;
pub mod returns;
pub mod serial;
pub mod straight;
