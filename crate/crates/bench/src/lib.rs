//! Shared fixtures for the kernel benchmarks.

use dmlpanel_core::synthgen::SyntheticPanel;
use dmlpanel_core::{generate_panel, DgpSpec};

/// Default nonlinear panel with firm and year effects switched on.
pub fn panel(n_firms: usize, seed: u64) -> SyntheticPanel {
    let spec = DgpSpec {
        n_firms,
        firm_sd: 0.5,
        year_sd: 0.3,
        seed,
        ..Default::default()
    };
    generate_panel(&spec).expect("valid spec")
}
