pub mod autodiff;
pub mod certificate;
pub mod cli;
pub mod eval;
pub mod icd10;
pub mod model;
pub mod synth;
pub mod training;
