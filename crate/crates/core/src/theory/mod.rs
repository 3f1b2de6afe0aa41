//! Grid verification of the invariance bounds for atom-branched filters.
//!
//! All computations run in `f64`. Continuous quantities are discretized on a
//! cell-centered grid over `[-1, 1]^2`; each check is evaluated at `N` and
//! `2N` and the difference is carried as discretization slack.

pub mod checks;
pub mod field;
pub mod grid;
pub mod scenario;
pub mod sweep;
pub mod theorem;

use rayon::prelude::*;

pub use checks::{
    check_fact1, check_filter_norm_drift, check_lemma1, check_nonexpansive, commutation_pair,
    verify_atom_implementability, BoundReport, Lemma1Config,
};
pub use field::{warp, warp_filter, DisplacementField, FieldKind, WarpDirection};
pub use grid::{convolve, GridFilter, GridSignal, Lattice};
pub use scenario::{FilterSpec, SignalSpec};
pub use sweep::{reports_csv, run_sweep, slack_refinement, Check, SweepConfig, CONTROL_RATIO_THRESHOLD};
pub use theorem::{run_theorem1, LayerPair, StackSpec};

/// `make_displacement`: a field that satisfies the `|grad tau|_inf < 1/5` gate.
pub fn make_displacement(kind: FieldKind) -> crate::Result<DisplacementField> {
    DisplacementField::new(kind)
}

/// Lemma 1 over many configurations, in input order; assumption violations
/// become rejected rows.
pub fn sweep_lemma1(configs: &[Lemma1Config]) -> crate::Result<Vec<BoundReport>> {
    configs
        .par_iter()
        .map(|c| BoundReport::from_result("lemma1", &c.label(), c.n, check_lemma1(c)))
        .collect()
}

/// Theorem checks over many stacks, in input order.
pub fn sweep_theorem1(specs: &[StackSpec]) -> crate::Result<Vec<BoundReport>> {
    specs
        .par_iter()
        .map(|s| {
            BoundReport::from_result(
                "theorem1",
                &s.label(),
                s.n,
                run_theorem1(s).map(|(r, _)| r),
            )
        })
        .collect()
}
