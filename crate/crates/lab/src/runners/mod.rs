pub mod ablate;
pub mod copycat;
pub mod theory;
pub mod toy;
