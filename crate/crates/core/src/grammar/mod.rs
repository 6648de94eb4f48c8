//! Grammars, their compilation to restricted-form PDAs, and exact
//! recognition by run counting.

pub mod cfg;
pub mod count;
pub mod cyk;
pub mod normal;
pub mod pda;


pub use cfg::{ContextFreeGrammar, Rule, Symbol};
pub use count::{
    count_accepting_runs, recognize, recognize_intersection, run_count_table, IntersectionRecognizer, RunCountTable,
    RunCounter, walk_strings,
};
pub use cyk::{cyk_accepts, cyk_membership};
pub use normal::{cfg_to_2gnf, cfg_to_gnf, TwoGnfGrammar};
pub use pda::{two_gnf_to_restricted_pda, union_pda, RestrictedPda, ScanTransition};

use crate::error::Result;

/// CFG → 2-GNF → restricted PDA, with the trap state added.
pub fn compile_grammar(g: &ContextFreeGrammar) -> Result<RestrictedPda> {
    Ok(two_gnf_to_restricted_pda(&cfg_to_2gnf(g)?).with_trap())
}
