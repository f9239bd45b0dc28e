pub mod cli;
pub mod cohort;
pub mod comorbidity;
pub mod ehr;
pub mod error;
pub mod eval;
pub mod features;
pub mod lstm;
pub mod stats;
pub mod survival;
pub mod syngen;
