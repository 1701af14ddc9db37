//! Conditioning a process on its future: target sets, conditional path laws,
//! the Q-process kernel, Yaglom limits and the double limit in (k, n).

pub mod limits;
pub mod nakaoka;
pub mod paths;
pub mod qkernel;
pub mod set;
pub mod yaglom;

pub use limits::{double_limit_scan, yaglom_type, DoubleLimitRow, YaglomTypeResult};
pub use nakaoka::{nakaoka_diagnostics, NakaokaReport, NakaokaRow};
pub use paths::{accessibility_check, conditional_path_law, q_process_limit, q_process_rhs, ConditioningContext};
pub use qkernel::{q_kernel, QKernel};
pub use set::ConditioningSet;
pub use yaglom::{yaglom, yaglom_from, yaglom_invariants, yaglom_with, YaglomData, YaglomInvariants};
