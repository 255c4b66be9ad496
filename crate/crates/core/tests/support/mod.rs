#![allow(dead_code)]

pub mod dataset_checks;
pub mod grad_suite;
pub mod metric_oracle;
pub mod properties;
