//! Building patterns with batched transfers and reporting what batching saved.

use serde::{Deserialize, Serialize};

use crate::loop_model::LoopProgram;
use crate::pattern::{hoist_transfers, materialize, transfer_count, Device, Gene, OffloadPattern, PatternError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pattern_key: String,
    pub naive_count: u64,
    pub hoisted_count: u64,
    /// Variables whose transfers moved to an enclosing level.
    pub hoisted_variables: Vec<String>,
}

/// Hoists the pattern's transfers and reports the counts before and after.
pub fn optimize_and_report(
    program: &LoopProgram,
    pattern: &OffloadPattern,
) -> (OffloadPattern, TransferReport) {
    let naive = materialize(program, &pattern.gene, pattern.device)
        .expect("pattern gene already matches the program");
    let hoisted = hoist_transfers(program, pattern);
    let mut hoisted_variables: Vec<String> = hoisted
        .transfers
        .entries()
        .iter()
        .filter(|e| !e.per_entry)
        .map(|e| e.variable.clone())
        .collect();
    hoisted_variables.dedup();
    let report = TransferReport {
        pattern_key: pattern.key(),
        naive_count: transfer_count(program, &naive),
        hoisted_count: transfer_count(program, &hoisted),
        hoisted_variables,
    };
    (hoisted, report)
}

/// Materializes `gene`, hoisting transfers when `hoist` is set. The report is
/// produced either way so callers can see what hoisting would change.
pub fn prepare(
    program: &LoopProgram,
    gene: &Gene,
    device: Device,
    hoist: bool,
) -> Result<(OffloadPattern, TransferReport), PatternError> {
    let naive = materialize(program, gene, device)?;
    let (hoisted, report) = optimize_and_report(program, &naive);
    Ok((if hoist { hoisted } else { naive }, report))
}
