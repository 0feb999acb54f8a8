//! Randomized experiment harness: arm assignment, review selection,
//! delayed scheduling, forum posting, and the durable event log.

pub mod events;
pub mod forum;
pub mod scheduler;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AssignmentError {
    #[error("duplicate paper id: {0}")]
    DuplicatePaperId(String),
    #[error("unknown paper: {0}")]
    UnknownPaper(String),
    #[error("assignment file has no seed header")]
    MissingSeedHeader,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed assignment line {line}: {source}")]
    Malformed {
        line: usize,
        source: serde_json::Error,
    },
}

/// Experimental arm of a paper: how many of its reviews get feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    None,
    Half,
    All,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::None => "none",
            Arm::Half => "half",
            Arm::All => "all",
        }
    }
}

/// Paper→arm and review→selected mapping, with the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentAssignment {
    pub seed: u64,
    pub paper_arm: BTreeMap<String, Arm>,
    /// Memoized per-review selection decisions; each is a pure function of
    /// (seed, review_id, arm) so replays reconstruct the identical map.
    pub review_selected: BTreeMap<String, bool>,
}

impl ExperimentAssignment {
    pub fn arm_of(&self, paper_id: &str) -> Option<Arm> {
        self.paper_arm.get(paper_id).copied()
    }

    pub fn arm_sizes(&self) -> BTreeMap<Arm, usize> {
        let mut sizes = BTreeMap::new();
        for arm in self.paper_arm.values() {
            *sizes.entry(*arm).or_insert(0) += 1;
        }
        sizes
    }
}

/// Deterministically shuffle the papers by seed and split them into three
/// contiguous thirds (remainder to the first arms). Repeat calls with the
/// same inputs return identical assignments.
pub fn assign_paper_groups(
    paper_ids: &[String],
    seed: u64,
) -> Result<ExperimentAssignment, AssignmentError> {
    let mut seen = HashSet::with_capacity(paper_ids.len());
    for id in paper_ids {
        if !seen.insert(id.as_str()) {
            return Err(AssignmentError::DuplicatePaperId(id.clone()));
        }
    }
    let mut shuffled: Vec<&String> = paper_ids.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let n = shuffled.len();
    let base = n / 3;
    let remainder = n % 3;
    // Remainder papers go to the first arms, so sizes differ by at most 1.
    let size_none = base + usize::from(remainder >= 1);
    let size_half = base + usize::from(remainder >= 2);

    let mut paper_arm = BTreeMap::new();
    for (idx, id) in shuffled.into_iter().enumerate() {
        let arm = if idx < size_none {
            Arm::None
        } else if idx < size_none + size_half {
            Arm::Half
        } else {
            Arm::All
        };
        paper_arm.insert(id.clone(), arm);
    }
    Ok(ExperimentAssignment {
        seed,
        paper_arm,
        review_selected: BTreeMap::new(),
    })
}

/// Stable Bernoulli(0.5) decision for a half-arm review: a seeded hash of
/// (seed, review_id), so the decision survives restarts and is independent
/// of arrival order.
pub fn half_arm_coin(seed: u64, review_id: &str) -> bool {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(review_id.as_bytes());
    let digest = hasher.finalize();
    digest[0] & 0x80 == 0
}

/// Decide (and memoize) whether a review receives feedback: none-arm
/// papers never, all-arm papers always, half-arm papers by seeded coin.
pub fn select_review_for_feedback(
    assignment: &mut ExperimentAssignment,
    paper_id: &str,
    review_id: &str,
) -> Result<bool, AssignmentError> {
    let arm = assignment
        .arm_of(paper_id)
        .ok_or_else(|| AssignmentError::UnknownPaper(paper_id.to_string()))?;
    let selected = match arm {
        Arm::None => false,
        Arm::All => true,
        Arm::Half => half_arm_coin(assignment.seed, review_id),
    };
    assignment
        .review_selected
        .insert(review_id.to_string(), selected);
    Ok(selected)
}

#[derive(Serialize, Deserialize)]
struct SeedHeader {
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct AssignmentLine {
    paper_id: String,
    arm: Arm,
}

/// Write the assignment file: a `{"seed":N}` header line followed by one
/// `{"paper_id":..,"arm":..}` line per paper.
pub fn write_assignment_file(
    assignment: &ExperimentAssignment,
    path: &Path,
) -> Result<(), AssignmentError> {
    let mut out = fs::File::create(path)?;
    writeln!(
        out,
        "{}",
        serde_json::to_string(&SeedHeader {
            seed: assignment.seed
        })
        .expect("header serializes")
    )?;
    for (paper_id, arm) in &assignment.paper_arm {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&AssignmentLine {
                paper_id: paper_id.clone(),
                arm: *arm
            })
            .expect("line serializes")
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_assignment_file(path: &Path) -> Result<ExperimentAssignment, AssignmentError> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines.next().ok_or(AssignmentError::MissingSeedHeader)?;
    let header: SeedHeader = serde_json::from_str(&header?)
        .map_err(|source| AssignmentError::Malformed { line: 1, source })?;
    let mut paper_arm = BTreeMap::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: AssignmentLine = serde_json::from_str(&line)
            .map_err(|source| AssignmentError::Malformed {
                line: idx + 1,
                source,
            })?;
        paper_arm.insert(parsed.paper_id, parsed.arm);
    }
    Ok(ExperimentAssignment {
        seed: header.seed,
        paper_arm,
        review_selected: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("paper-{i}")).collect()
    }

    #[test]
    fn empty_input_gives_empty_assignment() {
        let assignment = assign_paper_groups(&[], 42).unwrap();
        assert!(assignment.paper_arm.is_empty());
    }

    #[test]
    fn nine_papers_seed_42_balanced_and_deterministic() {
        let papers = ids(9);
        let a = assign_paper_groups(&papers, 42).unwrap();
        let b = assign_paper_groups(&papers, 42).unwrap();
        assert_eq!(a, b);
        let sizes = a.arm_sizes();
        assert_eq!(sizes[&Arm::None], 3);
        assert_eq!(sizes[&Arm::Half], 3);
        assert_eq!(sizes[&Arm::All], 3);
    }

    #[test]
    fn remainder_goes_to_first_arms() {
        let a = assign_paper_groups(&ids(11), 7).unwrap();
        let sizes = a.arm_sizes();
        assert_eq!(sizes[&Arm::None], 4);
        assert_eq!(sizes[&Arm::Half], 4);
        assert_eq!(sizes[&Arm::All], 3);
        let max = sizes.values().max().unwrap();
        let min = sizes.values().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn different_seeds_differ() {
        let papers = ids(30);
        let a = assign_paper_groups(&papers, 1).unwrap();
        let b = assign_paper_groups(&papers, 2).unwrap();
        assert_ne!(a.paper_arm, b.paper_arm);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut papers = ids(3);
        papers.push("paper-1".into());
        let err = assign_paper_groups(&papers, 42).unwrap_err();
        assert!(matches!(err, AssignmentError::DuplicatePaperId(_)));
    }

    #[test]
    fn arm_forced_selection() {
        let mut assignment = assign_paper_groups(&ids(3), 42).unwrap();
        let by_arm: BTreeMap<Arm, String> = assignment
            .paper_arm
            .iter()
            .map(|(p, a)| (*a, p.clone()))
            .collect();
        let none_paper = by_arm[&Arm::None].clone();
        let all_paper = by_arm[&Arm::All].clone();
        assert!(!select_review_for_feedback(&mut assignment, &none_paper, "r1").unwrap());
        assert!(select_review_for_feedback(&mut assignment, &all_paper, "r2").unwrap());
        assert_eq!(assignment.review_selected["r1"], false);
        assert_eq!(assignment.review_selected["r2"], true);
    }

    #[test]
    fn unknown_paper_rejected() {
        let mut assignment = assign_paper_groups(&ids(3), 42).unwrap();
        let err = select_review_for_feedback(&mut assignment, "missing", "r1").unwrap_err();
        assert!(matches!(err, AssignmentError::UnknownPaper(_)));
    }

    #[test]
    fn half_arm_fraction_concentrates() {
        let selected = (0..10_000)
            .filter(|i| half_arm_coin(42, &format!("review-{i}")))
            .count() as f64
            / 10_000.0;
        assert!((0.48..=0.52).contains(&selected), "fraction {selected}");
    }

    #[test]
    fn half_arm_coin_is_stable() {
        assert_eq!(half_arm_coin(42, "r-1"), half_arm_coin(42, "r-1"));
    }

    #[test]
    fn assignment_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("assignments.jsonl");
        let assignment = assign_paper_groups(&ids(10), 42).unwrap();
        write_assignment_file(&assignment, &path).unwrap();
        let back = read_assignment_file(&path).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.paper_arm, assignment.paper_arm);

        // Byte-identical on rewrite.
        let first = std::fs::read(&path).unwrap();
        write_assignment_file(&assignment, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }
}
