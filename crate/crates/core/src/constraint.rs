//! The set of admissible tree-depth sequences and exact search over it.
//!
//! A depth sequence assigns every word of a sentence its depth in the
//! dependency tree, the root having depth 1. Any such sequence satisfies two
//! conditions, independent of the concrete tree:
//!
//! * boundary: exactly one element equals the minimum, the minimum is 1, and
//!   if there are at least two elements one of them equals 2;
//! * recursion: sorted ascending, consecutive elements differ by 0 or 1.
//!
//! The finite set of all sequences of a given length satisfying both is small
//! enough to enumerate for short sentences, which gives exact nearest and
//! farthest members under the mean squared distance. Those exact searches are
//! the reference the greedy constructions in [`crate::greedy`] are checked
//! against.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer tree depths, one per word, satisfying the boundary and recursion
/// conditions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct DepthSequence(Vec<u32>);

impl DepthSequence {
    pub fn new(values: Vec<u32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty depth sequence".into()));
        }
        check_constraints(&values).map_err(Error::Constraint)?;
        Ok(DepthSequence(values))
    }

    /// Caller guarantees `values` satisfies the constraints (checked in debug builds).
    pub(crate) fn new_unchecked(values: Vec<u32>) -> Self {
        debug_assert!(check_constraints(&values).is_ok(), "{values:?}");
        DepthSequence(values)
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_depth(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&d| f64::from(d)).collect()
    }

    /// The ascending rearrangement.
    pub fn sorted(&self) -> DepthSequence {
        let mut v = self.0.clone();
        v.sort_unstable();
        DepthSequence(v)
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl TryFrom<Vec<u32>> for DepthSequence {
    type Error = Error;

    fn try_from(values: Vec<u32>) -> Result<Self> {
        DepthSequence::new(values)
    }
}

impl From<DepthSequence> for Vec<u32> {
    fn from(seq: DepthSequence) -> Self {
        seq.0
    }
}

impl AsRef<[u32]> for DepthSequence {
    fn as_ref(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for DepthSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

fn check_constraints(values: &[u32]) -> std::result::Result<(), String> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    match sorted.as_slice() {
        [] => return Err("empty sequence".into()),
        [first, rest @ ..] => {
            if *first != 1 {
                return Err(format!("minimum is {first}, expected 1"));
            }
            if rest.first() == Some(&1) {
                return Err("minimum 1 occurs more than once".into());
            }
            if let Some(&second) = rest.first() {
                if second != 2 {
                    return Err("no element equals 2".into());
                }
            }
        }
    }
    if let Some(w) = sorted.windows(2).find(|w| w[1] - w[0] > 1) {
        return Err(format!("sorted step from {} to {}", w[0], w[1]));
    }
    Ok(())
}

/// Checks the boundary and recursion conditions on an arbitrary integer
/// sequence.
pub fn validate(seq: &[i64]) -> Result<bool> {
    if seq.is_empty() {
        return Err(Error::InvalidInput(
            "cannot validate an empty sequence".into(),
        ));
    }
    if seq.iter().any(|&v| v < 1 || v > u32::MAX as i64) {
        return Ok(false);
    }
    let values: Vec<u32> = seq.iter().map(|&v| v as u32).collect();
    Ok(check_constraints(&values).is_ok())
}

/// Mean squared distance between predicted depths and an integer depth
/// sequence, accumulated in index order. Lengths must agree.
pub fn mean_squared_distance(pdep: &[f64], target: &[u32]) -> f64 {
    debug_assert_eq!(pdep.len(), target.len());
    let sum: f64 = pdep
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let r = p - f64::from(t);
            r * r
        })
        .sum();
    sum / pdep.len() as f64
}

/// Length limits for exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCaps {
    /// Longest length for which ascending profiles are enumerated.
    pub sorted: usize,
    /// Longest length for which every arrangement is enumerated; also the
    /// limit for [`min_oracle`] and [`max_oracle`].
    pub permuted: usize,
}

impl Default for OracleCaps {
    fn default() -> Self {
        OracleCaps {
            sorted: 10,
            permuted: 7,
        }
    }
}

/// All members of the constraint set for one length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSetEnumeration {
    pub length: usize,
    pub include_permutations: bool,
    /// Lexicographically ascending, duplicate-free.
    pub members: Arc<Vec<DepthSequence>>,
}

impl ConstraintSetEnumeration {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, seq: &DepthSequence) -> bool {
        self.members.binary_search(seq).is_ok()
    }

    /// Nearest member to `pdep` under [`mean_squared_distance`]; ties go to
    /// the lexicographically smallest member.
    pub fn nearest(&self, pdep: &[f64]) -> Result<(DepthSequence, f64)> {
        self.extreme(pdep, |cand, best| cand < best)
    }

    /// Farthest member from `pdep`; ties go to the lexicographically
    /// smallest member.
    pub fn farthest(&self, pdep: &[f64]) -> Result<(DepthSequence, f64)> {
        self.extreme(pdep, |cand, best| cand > best)
    }

    fn extreme(
        &self,
        pdep: &[f64],
        better: impl Fn(f64, f64) -> bool,
    ) -> Result<(DepthSequence, f64)> {
        if pdep.len() != self.length {
            return Err(Error::Shape(format!(
                "predicted depths have length {}, enumeration has length {}",
                pdep.len(),
                self.length
            )));
        }
        // Members are in ascending order, so keeping the first strict winner
        // yields the lexicographically smallest extremum.
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.members.iter().enumerate() {
            let d = mean_squared_distance(pdep, m.as_slice());
            match best {
                Some((_, b)) if !better(d, b) => {}
                _ => best = Some((i, d)),
            }
        }
        let (i, d) = best.expect("constraint set is never empty");
        Ok((self.members[i].clone(), d))
    }
}

impl OracleCaps {
    pub fn enumerate(
        &self,
        length: usize,
        include_permutations: bool,
    ) -> Result<ConstraintSetEnumeration> {
        if length == 0 {
            return Err(Error::InvalidInput("length must be positive".into()));
        }
        let cap = if include_permutations {
            self.permuted
        } else {
            self.sorted
        };
        if length > cap {
            return Err(Error::OracleCap { len: length, cap });
        }
        Ok(ConstraintSetEnumeration {
            length,
            include_permutations,
            members: cached_members(length, include_permutations),
        })
    }

    pub fn min_oracle(&self, pdep: &[f64]) -> Result<(DepthSequence, f64)> {
        check_pdep(pdep)?;
        self.enumerate(pdep.len(), true)?.nearest(pdep)
    }

    pub fn max_oracle(&self, pdep: &[f64]) -> Result<(DepthSequence, f64)> {
        check_pdep(pdep)?;
        self.enumerate(pdep.len(), true)?.farthest(pdep)
    }

    pub fn within_cap(&self, length: usize) -> bool {
        length >= 1 && length <= self.permuted
    }
}

/// Enumerates the constraint set under the default caps.
pub fn enumerate_all(
    length: usize,
    include_permutations: bool,
) -> Result<ConstraintSetEnumeration> {
    OracleCaps::default().enumerate(length, include_permutations)
}

/// Exact nearest member of the constraint set and its mean squared distance.
pub fn min_oracle(pdep: &[f64]) -> Result<(DepthSequence, f64)> {
    OracleCaps::default().min_oracle(pdep)
}

/// Exact farthest member of the constraint set and its mean squared distance.
pub fn max_oracle(pdep: &[f64]) -> Result<(DepthSequence, f64)> {
    OracleCaps::default().max_oracle(pdep)
}

fn check_pdep(pdep: &[f64]) -> Result<()> {
    if pdep.is_empty() {
        return Err(Error::InvalidInput("empty predicted depth sequence".into()));
    }
    if let Some(v) = pdep.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite predicted depth {v}"
        )));
    }
    Ok(())
}

type MemberCache = Mutex<HashMap<(usize, bool), Arc<Vec<DepthSequence>>>>;

fn cached_members(length: usize, include_permutations: bool) -> Arc<Vec<DepthSequence>> {
    static CACHE: OnceLock<MemberCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let key = (length, include_permutations);
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return Arc::clone(hit);
    }
    let members = Arc::new(build_members(length, include_permutations));
    cache.lock().unwrap().entry(key).or_insert(members).clone()
}

/// Ascending profiles: `[1]`, or `[1, 2]` followed by steps of 0 or 1.
fn sorted_profiles(length: usize) -> Vec<Vec<u32>> {
    if length == 1 {
        return vec![vec![1]];
    }
    let free = length - 2;
    (0u64..1 << free)
        .map(|mask| {
            let mut seq = Vec::with_capacity(length);
            seq.extend([1, 2]);
            for bit in (0..free).rev() {
                let last = *seq.last().unwrap();
                seq.push(last + ((mask >> bit) & 1) as u32);
            }
            seq
        })
        .collect()
}

fn build_members(length: usize, include_permutations: bool) -> Vec<DepthSequence> {
    let mut out = Vec::new();
    for profile in sorted_profiles(length) {
        if include_permutations {
            let mut perm = profile;
            loop {
                out.push(DepthSequence::new_unchecked(perm.clone()));
                if !next_permutation(&mut perm) {
                    break;
                }
            }
        } else {
            out.push(DepthSequence::new_unchecked(profile));
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Advances to the next lexicographic permutation, skipping duplicates.
fn next_permutation(v: &mut [u32]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}
