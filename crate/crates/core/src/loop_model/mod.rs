//! Loop structure of an analyzed program.
//!
//! Programs come either from the restricted C-like loop language
//! ([`parse_source`]) or from a JSON descriptor that mirrors [`LoopProgram`]
//! field for field ([`parse_descriptor`]). Equivalent inputs produce equal
//! values, digest included, because the digest hashes the analyzed content
//! rather than the raw text.

pub mod ast;
pub mod dependence;
pub mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parser::{ParseError, ParseErrorKind};

pub type LoopId = usize;

#[derive(Debug, Error)]
pub enum ProgramError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("invalid loop descriptor: {0}")]
    Descriptor(String),
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("unknown loop id {0}")]
    UnknownLoop(LoopId),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopStatement {
    pub id: LoopId,
    pub parent: Option<LoopId>,
    pub depth: u32,
    /// Iterations per single entry into the loop.
    pub trip_count: u64,
    /// Arithmetic operations per iteration in the loop's own statements;
    /// nested loops account for theirs.
    pub ops_per_iter: u64,
    /// Distinct bytes referenced per iteration by the loop's own statements.
    pub bytes_per_iter: u64,
    pub reads: BTreeSet<String>,
    pub writes: BTreeSet<String>,
    pub parallelizable: bool,
}

impl LoopStatement {
    pub fn touches(&self, var: &str) -> bool {
        self.reads.contains(var) || self.writes.contains(var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProgram")]
pub struct LoopProgram {
    loops: Vec<LoopStatement>,
    variables: BTreeMap<String, u64>,
    source_digest: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProgram {
    loops: Vec<LoopStatement>,
    variables: BTreeMap<String, u64>,
    #[serde(default)]
    source_digest: Option<String>,
}

impl TryFrom<RawProgram> for LoopProgram {
    type Error = ProgramError;

    fn try_from(raw: RawProgram) -> Result<Self, Self::Error> {
        let program = LoopProgram::new(raw.loops, raw.variables)?;
        match raw.source_digest {
            Some(d) if d != program.source_digest => Err(ProgramError::Descriptor(format!(
                "source_digest {d} does not match content digest {}",
                program.source_digest
            ))),
            _ => Ok(program),
        }
    }
}

impl LoopProgram {
    /// Validates the structure and computes the content digest.
    pub fn new(
        loops: Vec<LoopStatement>,
        variables: BTreeMap<String, u64>,
    ) -> Result<Self, ProgramError> {
        let invalid = |msg: String| Err(ProgramError::Invalid(msg));
        // Stack of open ancestors while walking in document (pre-)order.
        let mut open: Vec<LoopId> = Vec::new();
        for (pos, lp) in loops.iter().enumerate() {
            if lp.id != pos {
                return invalid(format!("loop at position {pos} has id {}", lp.id));
            }
            if lp.trip_count == 0 {
                return invalid(format!("loop {} has a zero trip count", lp.id));
            }
            match lp.parent {
                None => {
                    if lp.depth != 0 {
                        return invalid(format!("top-level loop {} has depth {}", lp.id, lp.depth));
                    }
                    open.clear();
                }
                Some(p) => {
                    if p >= lp.id {
                        return invalid(format!("loop {} has parent {p} that does not precede it", lp.id));
                    }
                    while open.last().is_some_and(|&top| top != p) {
                        open.pop();
                    }
                    if open.is_empty() {
                        return invalid(format!(
                            "loop {} is not contiguous with its parent {p}",
                            lp.id
                        ));
                    }
                    if lp.depth != loops[p].depth + 1 {
                        return invalid(format!(
                            "loop {} has depth {} but its parent has depth {}",
                            lp.id, lp.depth, loops[p].depth
                        ));
                    }
                }
            }
            open.push(lp.id);
            for var in lp.reads.iter().chain(&lp.writes) {
                if !variables.contains_key(var) {
                    return invalid(format!("loop {} references undeclared `{var}`", lp.id));
                }
            }
        }
        let source_digest = content_digest(&loops, &variables);
        Ok(Self {
            loops,
            variables,
            source_digest,
        })
    }

    pub fn loops(&self) -> &[LoopStatement] {
        &self.loops
    }

    pub fn variables(&self) -> &BTreeMap<String, u64> {
        &self.variables
    }

    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }

    pub fn get(&self, id: LoopId) -> Result<&LoopStatement, ProgramError> {
        self.loops.get(id).ok_or(ProgramError::UnknownLoop(id))
    }

    pub fn roots(&self) -> Vec<LoopId> {
        self.loops.iter().filter(|l| l.parent.is_none()).map(|l| l.id).collect()
    }

    pub fn children(&self, id: LoopId) -> Vec<LoopId> {
        self.loops
            .iter()
            .filter(|l| l.parent == Some(id))
            .map(|l| l.id)
            .collect()
    }

    /// Ancestors from the parent upwards.
    pub fn ancestors(&self, id: LoopId) -> impl Iterator<Item = LoopId> + '_ {
        std::iter::successors(self.loops[id].parent, move |&p| self.loops[p].parent)
    }

    /// `id` and all loops nested inside it. Contiguous in document order.
    pub fn subtree(&self, id: LoopId) -> std::ops::Range<LoopId> {
        let depth = self.loops[id].depth;
        let end = self.loops[id + 1..]
            .iter()
            .position(|l| l.depth <= depth)
            .map_or(self.loops.len(), |off| id + 1 + off);
        id..end
    }

    pub fn is_within(&self, id: LoopId, ancestor: LoopId) -> bool {
        self.subtree(ancestor).contains(&id)
    }

    /// Number of times the loop is entered over a whole run.
    pub fn entry_count(&self, id: LoopId) -> u64 {
        self.ancestors(id).map(|a| self.loops[a].trip_count).product()
    }

    pub fn parallelizable_ids(&self) -> Vec<LoopId> {
        self.loops
            .iter()
            .filter(|l| l.parallelizable)
            .map(|l| l.id)
            .collect()
    }

    pub fn total_trip_count(&self, id: LoopId) -> Result<u64, ProgramError> {
        let lp = self.get(id)?;
        Ok(self.entry_count(id) * lp.trip_count)
    }

    /// Variables read anywhere inside the loop nest rooted at `id`.
    pub fn region_reads(&self, id: LoopId) -> BTreeSet<String> {
        self.subtree(id)
            .flat_map(|l| self.loops[l].reads.iter().cloned())
            .collect()
    }

    pub fn region_writes(&self, id: LoopId) -> BTreeSet<String> {
        self.subtree(id)
            .flat_map(|l| self.loops[l].writes.iter().cloned())
            .collect()
    }
}

/// Arithmetic operations per byte of memory traffic, with a divisor of at
/// least one byte.
pub fn arithmetic_intensity(lp: &LoopStatement) -> Ratio<u64> {
    Ratio::new(lp.ops_per_iter, lp.bytes_per_iter.max(1))
}

fn content_digest(loops: &[LoopStatement], variables: &BTreeMap<String, u64>) -> String {
    #[derive(Serialize)]
    struct Content<'a> {
        loops: &'a [LoopStatement],
        variables: &'a BTreeMap<String, u64>,
    }
    let bytes = serde_json::to_vec(&Content { loops, variables }).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

/// Analyzes restricted C-like source text.
pub fn parse_source(text: &str) -> Result<LoopProgram, ProgramError> {
    let unit = parser::parse_unit(text)?;
    let elem_sizes: BTreeMap<&str, u64> = unit
        .decls
        .iter()
        .map(|d| (d.name.as_str(), d.elem_size))
        .collect();
    let variables = unit
        .decls
        .iter()
        .map(|d| (d.name.clone(), d.size_bytes()))
        .collect();

    let mut loops = Vec::new();
    fn visit(
        lp: &ast::ForLoop,
        parent: Option<LoopId>,
        depth: u32,
        elem_sizes: &BTreeMap<&str, u64>,
        out: &mut Vec<LoopStatement>,
    ) {
        let id = out.len();
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        let mut distinct: BTreeMap<String, u64> = BTreeMap::new();
        let mut ops = 0;
        for assign in lp.direct_assigns() {
            ops += assign.op_count();
            writes.insert(assign.target.name.clone());
            distinct.insert(assign.target.to_string(), elem_sizes[assign.target.name.as_str()]);
            for r in assign.read_refs() {
                reads.insert(r.name.clone());
                distinct.insert(r.to_string(), elem_sizes[r.name.as_str()]);
            }
        }
        let bytes = distinct.values().sum();
        out.push(LoopStatement {
            id,
            parent,
            depth,
            trip_count: lp.trip_count,
            ops_per_iter: lp.annotations.ops.unwrap_or(ops),
            bytes_per_iter: lp.annotations.bytes.unwrap_or(bytes),
            reads,
            writes,
            parallelizable: !lp.annotations.seq && dependence::is_dependence_free(lp),
        });
        for child in lp.child_loops() {
            visit(child, Some(id), depth + 1, elem_sizes, out);
        }
    }
    for lp in &unit.loops {
        visit(lp, None, 0, &elem_sizes, &mut loops);
    }
    LoopProgram::new(loops, variables)
}

/// Reads a JSON loop descriptor.
pub fn parse_descriptor(text: &str) -> Result<LoopProgram, ProgramError> {
    serde_json::from_str(text).map_err(|e| ProgramError::Descriptor(e.to_string()))
}

/// Loads a program, choosing the descriptor reader for `.json` files.
pub fn load_program(path: &Path) -> Result<LoopProgram, ProgramError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProgramError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        parse_descriptor(&text)
    } else {
        parse_source(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEST: &str = "const int N = 100;\nconst int M = 50;\nfloat a[N][M];\nfloat b[N][M];\n\
        for (i = 0; i < N; i++) {\n  for (j = 0; j < M; j++) {\n    a[i][j] = b[i][j] + 1;\n  }\n}\n";

    #[test]
    fn empty_source_has_no_loops() {
        let p = parse_source("").unwrap();
        assert!(p.loops().is_empty());
        assert!(p.parallelizable_ids().is_empty());
    }

    #[test]
    fn doubly_nested_loop_structure() {
        let p = parse_source(NEST).unwrap();
        assert_eq!(p.loops().len(), 2);
        let (outer, inner) = (&p.loops()[0], &p.loops()[1]);
        assert_eq!(inner.parent, Some(outer.id));
        assert_eq!(inner.depth, 1);
        assert!(outer.parallelizable && inner.parallelizable);
        assert!(outer.reads.is_empty() && outer.writes.is_empty());
        assert_eq!(inner.reads, BTreeSet::from(["b".to_string()]));
        assert_eq!(inner.writes, BTreeSet::from(["a".to_string()]));
        assert_eq!(inner.ops_per_iter, 1);
        assert_eq!(inner.bytes_per_iter, 8);
        assert_eq!(p.variables()["a"], 100 * 50 * 4);
        assert_eq!(p.total_trip_count(1).unwrap(), 5000);
        assert_eq!(p.total_trip_count(0).unwrap(), 100);
    }

    #[test]
    fn seq_annotation_disables_parallelization() {
        let src = "float a[4]; float b[4];\n//@seq\nfor (i = 0; i < 4; i++) a[i] = 1.0;\n//@seq\nfor (i = 0; i < 4; i++) b[i] = 2.0;";
        assert!(parse_source(src).unwrap().parallelizable_ids().is_empty());
    }

    #[test]
    fn mixed_fixture_keeps_document_order() {
        let src = "float a[8]; float b[8]; double s;\n\
            for (i = 0; i < 8; i++) a[i] = b[i];\n\
            for (i = 1; i < 8; i++) a[i] = a[i - 1];\n\
            for (i = 0; i < 8; i++) b[i] = 2 * a[i];\n\
            for (i = 0; i < 8; i++) s += a[i];\n\
            for (i = 0; i < 8; i++) { a[i] = a[i] * b[i]; }";
        assert_eq!(parse_source(src).unwrap().parallelizable_ids(), vec![0, 2, 4]);
    }

    #[test]
    fn triple_nest_trip_product() {
        let src = "float x[10][10][10];\nfor (i = 0; i < 10; i++) for (j = 0; j < 10; j++) for (k = 0; k < 10; k++) x[i][j][k] = 0.0;";
        let p = parse_source(src).unwrap();
        assert_eq!(p.total_trip_count(2).unwrap(), 1000);
        assert!(matches!(p.total_trip_count(3), Err(ProgramError::UnknownLoop(3))));
    }

    #[test]
    fn intensity_guards_zero_bytes() {
        let mut lp = parse_source(NEST).unwrap().loops()[1].clone();
        lp.ops_per_iter = 0;
        assert_eq!(arithmetic_intensity(&lp), Ratio::from_integer(0));
        lp.ops_per_iter = 8;
        lp.bytes_per_iter = 4;
        assert_eq!(arithmetic_intensity(&lp), Ratio::from_integer(2));
        lp.ops_per_iter = 5;
        lp.bytes_per_iter = 0;
        assert_eq!(arithmetic_intensity(&lp), Ratio::from_integer(5));
    }

    #[test]
    fn descriptor_matches_source() {
        let from_source = parse_source(NEST).unwrap();
        let json = serde_json::to_string_pretty(&from_source).unwrap();
        let from_json = parse_descriptor(&json).unwrap();
        assert_eq!(from_source, from_json);

        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        value.as_object_mut().unwrap().remove("source_digest");
        assert_eq!(parse_descriptor(&value.to_string()).unwrap(), from_source);
    }

    #[test]
    fn descriptor_validation() {
        let good = serde_json::to_value(parse_source(NEST).unwrap()).unwrap();

        let mut bad_depth = good.clone();
        bad_depth["loops"][1]["depth"] = 2.into();
        assert!(parse_descriptor(&bad_depth.to_string()).is_err());

        let mut undeclared = good.clone();
        undeclared["variables"].as_object_mut().unwrap().remove("b");
        assert!(parse_descriptor(&undeclared.to_string()).is_err());

        let mut digest = good.clone();
        digest["source_digest"] = "00".into();
        assert!(parse_descriptor(&digest.to_string()).is_err());

        let mut cyclic = good;
        cyclic["loops"][0]["parent"] = 1.into();
        cyclic["loops"][0]["depth"] = 1.into();
        assert!(parse_descriptor(&cyclic.to_string()).is_err());
    }

    #[test]
    fn subtree_and_entry_counts() {
        let src = "float a[4][4][4]; float b[4];\n\
            for (i = 0; i < 2; i++) { for (j = 0; j < 3; j++) { for (k = 0; k < 4; k++) a[i][j][k] = 0.0; } for (j = 0; j < 4; j++) b[j] = 1.0; }\n\
            for (i = 0; i < 4; i++) b[i] = 0.0;";
        let p = parse_source(src).unwrap();
        assert_eq!(p.subtree(0), 0..4);
        assert_eq!(p.subtree(1), 1..3);
        assert_eq!(p.subtree(4), 4..5);
        assert_eq!(p.children(0), vec![1, 3]);
        assert_eq!(p.entry_count(2), 6);
        assert_eq!(p.entry_count(3), 2);
        assert_eq!(p.ancestors(2).collect::<Vec<_>>(), vec![1, 0]);
    }
}
