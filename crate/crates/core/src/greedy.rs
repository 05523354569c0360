//! Local greedy projection of predicted depths onto the constraint set.
//!
//! The predicted depths are sorted, an ascending admissible profile is grown
//! one element at a time (stay or step up, whichever lands closer), and the
//! profile is assigned back to the original positions either in the same
//! order (the near target) or in reverse order (the far target). When every
//! sorted gap is at most 1 the near target is an exact nearest member.

use serde::{Deserialize, Serialize};

use crate::constraint::{mean_squared_distance, DepthSequence};
use crate::error::{Error, Result};

/// Nonnegative predicted depths together with their stable ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDepths {
    values: Vec<f64>,
    sort_permutation: Vec<usize>,
}

impl PredictedDepths {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty predicted depth sequence".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "predicted depths must be finite and nonnegative, got {v}"
            )));
        }
        let mut sort_permutation: Vec<usize> = (0..values.len()).collect();
        // sort_by is stable: equal depths keep their original order.
        sort_permutation.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        Ok(PredictedDepths {
            values,
            sort_permutation,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `sort_permutation()[i]` is the original position of the i-th smallest
    /// depth.
    pub fn sort_permutation(&self) -> &[usize] {
        &self.sort_permutation
    }

    pub fn sorted(&self) -> Vec<f64> {
        self.sort_permutation
            .iter()
            .map(|&i| self.values[i])
            .collect()
    }

    /// Position in ascending order that receives the i-th element under the
    /// reverse assignment.
    pub fn reverse_index(&self, i: usize) -> usize {
        self.values.len() - 1 - i
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean squared distance to an integer depth sequence.
    pub fn distance(&self, target: &DepthSequence) -> Result<f64> {
        if target.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} predicted depths against {} target depths",
                self.len(),
                target.len()
            )));
        }
        Ok(mean_squared_distance(&self.values, target.as_slice()))
    }
}

/// Intermediate products of one greedy projection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GreedyTrace {
    /// Ascending profile built over the sorted predictions.
    pub pre: DepthSequence,
    /// `bias_flags[k]` is the step from `pre[k]` to `pre[k + 1]`; the first
    /// step is always 1.
    pub bias_flags: Vec<u8>,
    pub pesu: DepthSequence,
    pub xpesu: DepthSequence,
}

/// Builds the ascending profile for sorted predictions `apdep`.
pub fn build_pre(apdep: &[f64]) -> Result<DepthSequence> {
    build_pre_with_bias(apdep).map(|(pre, _)| pre)
}

fn build_pre_with_bias(apdep: &[f64]) -> Result<(DepthSequence, Vec<u8>)> {
    if apdep.is_empty() {
        return Err(Error::InvalidInput("empty predicted depth sequence".into()));
    }
    if let Some(w) = apdep.windows(2).find(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidInput(format!(
            "predicted depths are not sorted ascending ({} before {})",
            w[0], w[1]
        )));
    }
    let mut pre = Vec::with_capacity(apdep.len());
    let mut bias = Vec::with_capacity(apdep.len().saturating_sub(1));
    pre.push(1u32);
    if apdep.len() >= 2 {
        pre.push(2);
        bias.push(1);
    }
    for &target in apdep.iter().skip(2) {
        let last = *pre.last().unwrap();
        let stay = (f64::from(last) - target).abs();
        let step = (f64::from(last + 1) - target).abs();
        // Ties step up.
        let b = u8::from(step <= stay);
        bias.push(b);
        pre.push(last + u32::from(b));
    }
    Ok((DepthSequence::new_unchecked(pre), bias))
}

fn check_lengths(pre: &DepthSequence, pdep: &PredictedDepths) -> Result<()> {
    if pre.len() != pdep.len() {
        return Err(Error::InvalidInput(format!(
            "profile has length {}, predictions have length {}",
            pre.len(),
            pdep.len()
        )));
    }
    Ok(())
}

/// Places `pre[i]` at the original position of the i-th smallest prediction.
pub fn align(pre: &DepthSequence, pdep: &PredictedDepths) -> Result<DepthSequence> {
    check_lengths(pre, pdep)?;
    let mut out = vec![0u32; pre.len()];
    for (i, &pos) in pdep.sort_permutation().iter().enumerate() {
        out[pos] = pre.as_slice()[i];
    }
    Ok(DepthSequence::new_unchecked(out))
}

/// Places `pre` in reverse order: the i-th smallest prediction receives the
/// i-th largest profile value.
pub fn build_xpesu(pre: &DepthSequence, pdep: &PredictedDepths) -> Result<DepthSequence> {
    check_lengths(pre, pdep)?;
    let mut out = vec![0u32; pre.len()];
    for (i, &pos) in pdep.sort_permutation().iter().enumerate() {
        out[pos] = pre.as_slice()[pdep.reverse_index(i)];
    }
    Ok(DepthSequence::new_unchecked(out))
}

/// True when every gap between consecutive sorted predictions is at most 1,
/// the regime in which the near target is exact.
pub fn unit_gap_condition_holds(pdep: &PredictedDepths) -> bool {
    pdep.sorted().windows(2).all(|w| w[1] - w[0] <= 1.0)
}

/// Runs the full construction.
pub fn trace(pdep: &PredictedDepths) -> GreedyTrace {
    let (pre, bias_flags) =
        build_pre_with_bias(&pdep.sorted()).expect("sorted nonempty predictions");
    let pesu = align(&pre, pdep).expect("lengths agree");
    let xpesu = build_xpesu(&pre, pdep).expect("lengths agree");
    GreedyTrace {
        pre,
        bias_flags,
        pesu,
        xpesu,
    }
}

/// Near target only.
pub fn pesu(pdep: &PredictedDepths) -> DepthSequence {
    trace(pdep).pesu
}

/// Far target only.
pub fn xpesu(pdep: &PredictedDepths) -> DepthSequence {
    trace(pdep).xpesu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[u32]) -> DepthSequence {
        DepthSequence::new(v.to_vec()).unwrap()
    }

    fn pd(v: &[f64]) -> PredictedDepths {
        PredictedDepths::new(v.to_vec()).unwrap()
    }

    #[test]
    fn build_pre_examples() {
        assert_eq!(
            build_pre(&[0.8, 1.5, 1.8, 2.4, 4.5]).unwrap(),
            seq(&[1, 2, 2, 2, 3])
        );
        assert_eq!(build_pre(&[0.9, 1.6, 2.2]).unwrap(), seq(&[1, 2, 2]));
        assert_eq!(build_pre(&[1.0, 2.0, 3.0]).unwrap(), seq(&[1, 2, 3]));
        assert_eq!(build_pre(&[7.0]).unwrap(), seq(&[1]));
    }

    #[test]
    fn build_pre_tie_steps_up() {
        // 2.5 is equidistant from 2 and 3.
        assert_eq!(build_pre(&[1.0, 2.0, 2.5]).unwrap(), seq(&[1, 2, 3]));
    }

    #[test]
    fn build_pre_rejects_unsorted() {
        assert!(matches!(
            build_pre(&[2.0, 1.0]),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(build_pre(&[]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn align_examples() {
        let p = pd(&[5.0, 0.2, 2.0]);
        assert_eq!(p.sort_permutation(), &[1, 2, 0]);
        assert_eq!(align(&seq(&[1, 2, 3]), &p).unwrap(), seq(&[3, 1, 2]));
        assert_eq!(
            align(&seq(&[1, 2]), &pd(&[0.5, 1.5])).unwrap(),
            seq(&[1, 2])
        );
        assert_eq!(
            align(&seq(&[1, 2, 2]), &pd(&[2.2, 0.9, 1.6])).unwrap(),
            seq(&[2, 1, 2])
        );
        assert!(align(&seq(&[1, 2]), &p).is_err());
    }

    #[test]
    fn xpesu_examples() {
        assert_eq!(
            build_xpesu(&seq(&[1, 2, 2, 2, 3]), &pd(&[0.8, 1.5, 1.8, 2.4, 4.5])).unwrap(),
            seq(&[3, 2, 2, 2, 1])
        );
        assert_eq!(
            build_xpesu(&seq(&[1, 2]), &pd(&[0.5, 1.5])).unwrap(),
            seq(&[2, 1])
        );
        assert_eq!(
            build_xpesu(&seq(&[1, 2, 3]), &pd(&[5.0, 0.2, 2.0])).unwrap(),
            seq(&[1, 3, 2])
        );
        assert!(build_xpesu(&seq(&[1]), &pd(&[0.5, 1.5])).is_err());
    }

    #[test]
    fn stable_order_for_equal_depths() {
        let p = pd(&[1.0, 1.0, 1.0]);
        assert_eq!(p.sort_permutation(), &[0, 1, 2]);
        assert_eq!(pesu(&p), seq(&[1, 2, 2]));
        assert_eq!(xpesu(&p), seq(&[2, 2, 1]));
    }

    #[test]
    fn condition_examples() {
        assert!(!unit_gap_condition_holds(&pd(&[0.8, 1.5, 1.8, 2.4, 4.5])));
        assert!(unit_gap_condition_holds(&pd(&[0.9, 1.6, 2.2])));
        assert!(unit_gap_condition_holds(&pd(&[3.3])));
        assert!(unit_gap_condition_holds(&pd(&[2.0, 1.0])));
    }

    #[test]
    fn trace_of_reference_example() {
        let t = trace(&pd(&[0.8, 1.5, 1.8, 2.4, 4.5]));
        assert_eq!(t.pre, seq(&[1, 2, 2, 2, 3]));
        assert_eq!(t.bias_flags, vec![1, 0, 0, 1]);
        assert_eq!(t.pesu, seq(&[1, 2, 2, 2, 3]));
        assert_eq!(t.xpesu, seq(&[3, 2, 2, 2, 1]));
        let t1 = trace(&pd(&[4.0]));
        assert_eq!(t1.pesu, seq(&[1]));
        assert!(t1.bias_flags.is_empty());
    }

    #[test]
    fn predicted_depths_validation() {
        assert!(PredictedDepths::new(vec![]).is_err());
        assert!(PredictedDepths::new(vec![-0.1]).is_err());
        assert!(PredictedDepths::new(vec![f64::INFINITY]).is_err());
        let p = pd(&[0.8, 1.5, 1.8, 2.4, 4.5]);
        assert!((p.distance(&seq(&[1, 2, 2, 2, 3])).unwrap() - 0.548).abs() < 1e-12);
        assert!(p.distance(&seq(&[1, 2])).is_err());
    }
}
