//! Offload patterns: one bit per parallelizable loop plus the CPU/device
//! transfer plan that goes with it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loop_model::{LoopId, LoopProgram};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternError {
    #[error("gene has {actual} bits but the program has {expected} parallelizable loops")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid gene `{0}`: expected a string of 0 and 1")]
    BadGene(String),
    #[error("unknown device `{0}` (expected gpu, fpga or many-core)")]
    UnknownDevice(String),
    #[error("invalid pattern key `{0}`: expected `device:bits`")]
    BadKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    ManyCore,
    Gpu,
    Fpga,
}

impl Device {
    /// Order in which destinations are verified.
    pub const VERIFICATION_ORDER: [Device; 3] = [Device::ManyCore, Device::Gpu, Device::Fpga];

    pub fn as_str(self) -> &'static str {
        match self {
            Device::ManyCore => "many_core",
            Device::Gpu => "gpu",
            Device::Fpga => "fpga",
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Device {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gpu" => Ok(Device::Gpu),
            "fpga" => Ok(Device::Fpga),
            "many_core" | "many-core" | "manycore" => Ok(Device::ManyCore),
            _ => Err(PatternError::UnknownDevice(s.to_string())),
        }
    }
}

/// One bit per parallelizable loop, in document order. `true` offloads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Gene(Vec<bool>);

impl Gene {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn with_bits(len: usize, set: impl IntoIterator<Item = usize>) -> Self {
        let mut g = Self::zeros(len);
        for i in set {
            g.0[i] = true;
        }
        g
    }

    /// Gene `index` of a `len`-bit space, bit 0 being the most significant.
    pub fn from_index(index: u64, len: usize) -> Self {
        Self((0..len).map(|i| index >> (len - 1 - i) & 1 == 1).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

impl fmt::Display for Gene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            f.write_str(if *b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Gene {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(PatternError::BadGene(s.to_string())),
            })
            .collect::<Result<_, _>>()
            .map(Gene)
    }
}

impl Serialize for Gene {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Gene {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ToDevice,
    ToHost,
}

/// A transfer of `variable` placed immediately before (`ToDevice`) or after
/// (`ToHost`) every entry into `attach_loop`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TransferEntry {
    pub variable: String,
    pub direction: Direction,
    pub attach_loop: LoopId,
    /// `true` for the naive placement around the offloaded loop itself,
    /// `false` once batched at an enclosing level.
    pub per_entry: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPlan {
    entries: Vec<TransferEntry>,
}

impl TransferPlan {
    pub fn new(mut entries: Vec<TransferEntry>) -> Self {
        entries.sort();
        entries.dedup();
        Self { entries }
    }

    pub fn entries(&self) -> &[TransferEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn variables(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.variable.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadPattern {
    pub gene: Gene,
    pub device: Device,
    pub transfers: TransferPlan,
    pub program_digest: String,
}

impl OffloadPattern {
    /// Canonical `device:bits` text used for reports and cache keys.
    pub fn key(&self) -> String {
        pattern_key(self.device, &self.gene)
    }

    /// Loops chosen by the gene.
    pub fn offloaded_loops(&self, program: &LoopProgram) -> Vec<LoopId> {
        program
            .parallelizable_ids()
            .into_iter()
            .zip(self.gene.bits())
            .filter(|(_, b)| **b)
            .map(|(id, _)| id)
            .collect()
    }

    /// Offloaded loops not nested in another offloaded loop. Each one starts a
    /// device region.
    pub fn region_roots(&self, program: &LoopProgram) -> Vec<LoopId> {
        let chosen = self.offloaded_loops(program);
        chosen
            .iter()
            .copied()
            .filter(|&id| !program.ancestors(id).any(|a| chosen.contains(&a)))
            .collect()
    }

    /// Per-loop flag: does this loop execute on the device?
    pub fn device_mask(&self, program: &LoopProgram) -> Vec<bool> {
        let mut mask = vec![false; program.loops().len()];
        for root in self.region_roots(program) {
            for id in program.subtree(root) {
                mask[id] = true;
            }
        }
        mask
    }
}

pub fn pattern_key(device: Device, gene: &Gene) -> String {
    format!("{device}:{gene}")
}

pub fn parse_pattern_key(key: &str) -> Result<(Device, Gene), PatternError> {
    let (device, bits) = key
        .split_once(':')
        .ok_or_else(|| PatternError::BadKey(key.to_string()))?;
    Ok((device.parse()?, bits.parse()?))
}

/// Builds the pattern for `gene` with the naive transfer plan: every variable
/// read inside a device region goes to the device and every variable written
/// comes back, around each entry into the region.
pub fn materialize(
    program: &LoopProgram,
    gene: &Gene,
    device: Device,
) -> Result<OffloadPattern, PatternError> {
    let expected = program.parallelizable_ids().len();
    if gene.len() != expected {
        return Err(PatternError::LengthMismatch {
            expected,
            actual: gene.len(),
        });
    }
    let mut pattern = OffloadPattern {
        gene: gene.clone(),
        device,
        transfers: TransferPlan::default(),
        program_digest: program.source_digest().to_string(),
    };
    pattern.transfers = TransferPlan::new(naive_entries(program, &pattern));
    Ok(pattern)
}

fn naive_entries(program: &LoopProgram, pattern: &OffloadPattern) -> Vec<TransferEntry> {
    let mut entries = Vec::new();
    for root in pattern.region_roots(program) {
        for (vars, direction) in [
            (program.region_reads(root), Direction::ToDevice),
            (program.region_writes(root), Direction::ToHost),
        ] {
            entries.extend(vars.into_iter().map(|variable| TransferEntry {
                variable,
                direction,
                attach_loop: root,
                per_entry: true,
            }));
        }
    }
    entries
}

/// Dynamic transfer events over a run: each entry fires once per entry into
/// the loop it is attached to.
pub fn transfer_count(program: &LoopProgram, pattern: &OffloadPattern) -> u64 {
    pattern
        .transfers
        .entries()
        .iter()
        .map(|e| program.entry_count(e.attach_loop))
        .sum()
}

/// Batches transfers at the outermost nest level where that is safe.
///
/// A variable's transfers can move out of a loop nest when no CPU-executed
/// loop inside that nest reads or writes it. Within a scope that does not
/// itself touch the variable, consecutive such nests are merged too, but
/// never across a CPU-executed loop that accesses it. A merged group becomes
/// one `ToDevice` before its first nest and one `ToHost` after its last, and
/// is only applied when it lowers the transfer count.
///
/// The plan is rebuilt from the gene, so the operation is idempotent.
pub fn hoist_transfers(program: &LoopProgram, pattern: &OffloadPattern) -> OffloadPattern {
    let naive = naive_entries(program, pattern);
    let on_device = pattern.device_mask(program);

    let mut by_var: BTreeMap<&str, Vec<&TransferEntry>> = BTreeMap::new();
    for e in &naive {
        by_var.entry(e.variable.as_str()).or_default().push(e);
    }

    let mut out = Vec::new();
    for (var, entries) in by_var {
        let hoister = Hoister {
            program,
            var,
            on_device: &on_device,
            entries: &entries,
        };
        hoister.scope(&program.roots(), false, &mut out);
    }

    OffloadPattern {
        transfers: TransferPlan::new(out),
        ..pattern.clone()
    }
}

struct Hoister<'a> {
    program: &'a LoopProgram,
    var: &'a str,
    on_device: &'a [bool],
    entries: &'a [&'a TransferEntry],
}

impl Hoister<'_> {
    fn cpu_touch(&self, id: LoopId) -> bool {
        !self.on_device[id] && self.program.loops()[id].touches(self.var)
    }

    fn dirty(&self, id: LoopId) -> bool {
        self.program.subtree(id).any(|l| self.cpu_touch(l))
    }

    fn entries_in(&self, id: LoopId) -> Vec<&TransferEntry> {
        let range = self.program.subtree(id);
        self.entries
            .iter()
            .copied()
            .filter(|e| range.contains(&e.attach_loop))
            .collect()
    }

    fn scope(&self, children: &[LoopId], scope_touches: bool, out: &mut Vec<TransferEntry>) {
        let mut run: Vec<LoopId> = Vec::new();
        for &child in children {
            if self.dirty(child) {
                self.merge(&run, out);
                run.clear();
                self.scope(&self.program.children(child), self.cpu_touch(child), out);
            } else if scope_touches {
                // The scope's own statements may sit between any two children.
                self.merge(&[child], out);
            } else {
                run.push(child);
            }
        }
        self.merge(&run, out);
    }

    fn merge(&self, run: &[LoopId], out: &mut Vec<TransferEntry>) {
        let with_entries: Vec<(LoopId, Vec<&TransferEntry>)> = run
            .iter()
            .map(|&c| (c, self.entries_in(c)))
            .filter(|(_, es)| !es.is_empty())
            .collect();
        let (Some((first, _)), Some((last, _))) = (with_entries.first(), with_entries.last()) else {
            return;
        };
        let old: u64 = with_entries
            .iter()
            .flat_map(|(_, es)| es.iter())
            .map(|e| self.program.entry_count(e.attach_loop))
            .sum();
        let new = self.program.entry_count(*first) + self.program.entry_count(*last);
        if new < old {
            out.push(TransferEntry {
                variable: self.var.to_string(),
                direction: Direction::ToDevice,
                attach_loop: *first,
                per_entry: false,
            });
            out.push(TransferEntry {
                variable: self.var.to_string(),
                direction: Direction::ToHost,
                attach_loop: *last,
                per_entry: false,
            });
        } else {
            out.extend(with_entries.into_iter().flat_map(|(_, es)| es.into_iter().cloned()));
        }
    }
}
