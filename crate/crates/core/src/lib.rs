//! Simulation and analysis toolkit for locking the relative phase of clock
//! atoms with the quantum Zeno effect.
//!
//! * [`hilbert`]: product spaces, operators and exact evolution.
//! * [`dephasing`]: ensemble frequency statistics and Allan deviation.
//! * [`zeno_two_level`]: two-atom subradiant locking protocol.
//! * [`zeno_multilevel`]: three-level defect and four-level protocol.
//! * [`readout`]: phase readout chain and emitted-field fitting.

pub mod dephasing;
pub mod hilbert;
pub mod readout;
pub mod zeno_multilevel;
pub mod zeno_two_level;
