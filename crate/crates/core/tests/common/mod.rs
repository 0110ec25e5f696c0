//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod dsw_oracle;
pub mod lda_oracle;
pub mod pipeline;
