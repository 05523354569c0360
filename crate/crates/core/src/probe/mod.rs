//! Linear depth probe.
//!
//! A probe is an `m x n` matrix `f`; the predicted depth of a vector `h` is
//! `|f h|^2`. Losses are mean squared distances between predicted depths and
//! a target depth sequence, which is either the gold depths or a projection
//! of the current predictions onto the constraint set.

mod checkpoint;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::DepthSequence;
use crate::error::{Error, Result};
use crate::greedy::{self, PredictedDepths};
use crate::ingest::{ProbeExample, SentenceEmbedding};

pub use checkpoint::{read_probe, write_probe, TPRB_MAGIC, TPRB_VERSION};
pub use train::{corpus_loss, train, AdamW, TrainConfig, TrainedProbe};

/// Dense row-major probe matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbeMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!(
                "probe shape {rows}x{cols} has a zero dimension"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} probe",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("probe entries must be finite".into()));
        }
        Ok(ProbeMatrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ProbeMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Entries drawn uniformly from `[-range, range]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        rows: usize,
        cols: usize,
        range: f64,
        rng: &mut R,
    ) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-range..=range))
            .collect();
        ProbeMatrix { rows, cols, data }
    }

    /// Probe rank `m`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Embedding dimension `n`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scaled(&self, c: f64) -> ProbeMatrix {
        ProbeMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `f h`, accumulated in f64.
    pub fn apply(&self, h: &[f32]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(h).map(|(&a, &x)| a * f64::from(x)).sum())
            .collect()
    }

    fn check_dim(&self, sentence: &SentenceEmbedding) -> Result<()> {
        if sentence.dim() != self.cols {
            return Err(Error::Shape(format!(
                "probe expects dimension {}, sentence {:?} has {}",
                self.cols,
                sentence.id,
                sentence.dim()
            )));
        }
        Ok(())
    }
}

/// Squared norm of `f h_i` for every vector of the sentence.
pub fn predict_depths(f: &ProbeMatrix, sentence: &SentenceEmbedding) -> Result<PredictedDepths> {
    f.check_dim(sentence)?;
    let values = sentence
        .rows()
        .map(|h| f.apply(h).iter().map(|v| v * v).sum())
        .collect();
    PredictedDepths::new(values)
}

/// Mean squared distance between predictions and a target sequence.
pub fn loss(pdep: &PredictedDepths, target: &DepthSequence) -> Result<f64> {
    pdep.distance(target)
}

/// Which target a loss is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetMode {
    /// Gold depths.
    Supervised,
    /// Greedy nearest admissible sequence.
    Ssp,
    /// Greedy far admissible sequence.
    Essp,
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "supervised" | "sp" => Ok(TargetMode::Supervised),
            "ssp" => Ok(TargetMode::Ssp),
            "essp" => Ok(TargetMode::Essp),
            other => Err(Error::InvalidInput(format!(
                "unknown target mode {other:?} (expected supervised, ssp or essp)"
            ))),
        }
    }
}

impl std::fmt::Display for TargetMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TargetMode::Supervised => "supervised",
            TargetMode::Ssp => "ssp",
            TargetMode::Essp => "essp",
        })
    }
}

/// Greedy projection target for the self-supervised modes.
pub fn selfsup_target(pdep: &PredictedDepths, mode: TargetMode) -> Result<DepthSequence> {
    match mode {
        TargetMode::Ssp => Ok(greedy::pesu(pdep)),
        TargetMode::Essp => Ok(greedy::xpesu(pdep)),
        TargetMode::Supervised => Err(Error::InvalidInput(
            "supervised mode has no self-supervised target".into(),
        )),
    }
}

/// Loss against the greedy target rebuilt from the current predictions.
pub fn loss_selfsup(
    f: &ProbeMatrix,
    sentence: &SentenceEmbedding,
    mode: TargetMode,
) -> Result<f64> {
    let pdep = predict_depths(f, sentence)?;
    let target = selfsup_target(&pdep, mode)?;
    loss(&pdep, &target)
}

/// Gradient of the loss with respect to `f`, target held fixed.
pub fn gradient(
    f: &ProbeMatrix,
    sentence: &SentenceEmbedding,
    target: &DepthSequence,
) -> Result<ProbeMatrix> {
    let positions: Vec<usize> = (0..sentence.len()).collect();
    gradient_at(f, sentence, &positions, target)
}

/// Gradient of `(1/k) sum_j (|f h_{p_j}|^2 - t_j)^2` over the listed positions.
pub fn gradient_at(
    f: &ProbeMatrix,
    sentence: &SentenceEmbedding,
    positions: &[usize],
    target: &DepthSequence,
) -> Result<ProbeMatrix> {
    f.check_dim(sentence)?;
    if positions.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} positions against {} target depths",
            positions.len(),
            target.len()
        )));
    }
    if let Some(&p) = positions.iter().find(|&&p| p >= sentence.len()) {
        return Err(Error::Shape(format!(
            "position {p} outside sentence of length {}",
            sentence.len()
        )));
    }
    let mut grad = ProbeMatrix::zeros(f.rows, f.cols);
    let scale = 4.0 / positions.len() as f64;
    for (&p, &t) in positions.iter().zip(target.as_slice()) {
        let h = sentence.row(p);
        let fh = f.apply(h);
        let pdep: f64 = fh.iter().map(|v| v * v).sum();
        let coeff = scale * (pdep - f64::from(t));
        for (grow, &fh_r) in grad.data.chunks_exact_mut(f.cols).zip(&fh) {
            let c = coeff * fh_r;
            for (g, &x) in grow.iter_mut().zip(h) {
                *g += c * f64::from(x);
            }
        }
    }
    Ok(grad)
}

/// Loss and gradient of one example under `mode`. Returns `None` for
/// supervised mode on an unlabeled example.
pub fn example_loss_and_gradient(
    f: &ProbeMatrix,
    example: &ProbeExample,
    mode: TargetMode,
) -> Result<Option<(f64, ProbeMatrix)>> {
    let sentence = &example.sentence;
    let pdep = predict_depths(f, sentence)?;
    match mode {
        TargetMode::Supervised => {
            let Some(gold) = &example.gold else {
                return Ok(None);
            };
            let sub: Vec<f64> = gold.positions.iter().map(|&p| pdep.values()[p]).collect();
            let l = crate::constraint::mean_squared_distance(&sub, gold.depths.as_slice());
            let g = gradient_at(f, sentence, &gold.positions, &gold.depths)?;
            Ok(Some((l, g)))
        }
        TargetMode::Ssp | TargetMode::Essp => {
            let target = selfsup_target(&pdep, mode)?;
            let l = loss(&pdep, &target)?;
            let g = gradient(f, sentence, &target)?;
            Ok(Some((l, g)))
        }
    }
}

/// Loss of one example under `mode`, `None` when supervised and unlabeled.
pub fn example_loss(
    f: &ProbeMatrix,
    example: &ProbeExample,
    mode: TargetMode,
) -> Result<Option<f64>> {
    let pdep = predict_depths(f, &example.sentence)?;
    match mode {
        TargetMode::Supervised => Ok(example.gold.as_ref().map(|gold| {
            let sub: Vec<f64> = gold.positions.iter().map(|&p| pdep.values()[p]).collect();
            crate::constraint::mean_squared_distance(&sub, gold.depths.as_slice())
        })),
        _ => {
            let target = selfsup_target(&pdep, mode)?;
            loss(&pdep, &target).map(Some)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(v: &[u32]) -> DepthSequence {
        DepthSequence::new(v.to_vec()).unwrap()
    }

    fn sentence(dim: usize, values: Vec<f32>) -> SentenceEmbedding {
        SentenceEmbedding::from_word_vectors("t", dim, values).unwrap()
    }

    #[test]
    fn zero_probe_predicts_zero() {
        let s = sentence(3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let p = predict_depths(&ProbeMatrix::zeros(2, 3), &s).unwrap();
        assert_eq!(p.values(), &[0.0, 0.0]);
    }

    #[test]
    fn scaling_probe_scales_depths_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = ProbeMatrix::random_uniform(2, 3, 1.0, &mut rng);
        let s = sentence(3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let base = predict_depths(&f, &s).unwrap();
        let scaled = predict_depths(&f.scaled(3.0), &s).unwrap();
        for (a, b) in base.values().iter().zip(scaled.values()) {
            assert!((9.0 * a - b).abs() < 1e-12 * b.max(1.0));
        }
        assert_eq!(base.sort_permutation(), scaled.sort_permutation());
    }

    #[test]
    fn basis_vector_reads_first_column() {
        let f = ProbeMatrix::from_vec(2, 3, vec![0.3, -1.0, 2.0, 0.7, 5.0, 1.0]).unwrap();
        let s = sentence(3, vec![1.0, 0.0, 0.0]);
        let p = predict_depths(&f, &s).unwrap();
        assert!((p.values()[0] - (0.09 + 0.49)).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let s = sentence(2, vec![1.0, 0.0]);
        assert!(matches!(
            predict_depths(&ProbeMatrix::zeros(1, 3), &s),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn loss_examples() {
        let p = PredictedDepths::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(loss(&p, &seq(&[1, 2, 3])).unwrap(), 0.0);
        let p = PredictedDepths::new(vec![0.8, 1.5, 1.8, 2.4, 4.5]).unwrap();
        assert!((loss(&p, &seq(&[1, 2, 2, 3, 4])).unwrap() - 0.188).abs() < 1e-12);
        assert!((loss(&p, &seq(&[1, 2, 2, 2, 3])).unwrap() - 0.548).abs() < 1e-12);
        assert!(matches!(loss(&p, &seq(&[1, 2])), Err(Error::Shape(_))));
    }

    /// A 1-dimensional probe `f = [1]` reproduces the vector values squared.
    fn identity_sentence(values: &[f64]) -> (ProbeMatrix, SentenceEmbedding) {
        let f = ProbeMatrix::from_vec(1, 1, vec![1.0]).unwrap();
        let s = sentence(1, values.iter().map(|v| v.sqrt() as f32).collect());
        (f, s)
    }

    #[test]
    fn selfsup_loss_examples() {
        let (f, s) = identity_sentence(&[1.0, 2.0, 4.0]);
        // Predicted [1, 2, 4] projects onto [1, 2, 3].
        let expected = (4.0 - 3.0f64).powi(2) / 3.0;
        assert!((loss_selfsup(&f, &s, TargetMode::Ssp).unwrap() - expected).abs() < 1e-6);

        let (f, s) = identity_sentence(&[1.0, 2.0, 3.0]);
        assert!(loss_selfsup(&f, &s, TargetMode::Ssp).unwrap() < 1e-12);

        let (f, s) = identity_sentence(&[0.5, 1.5]);
        assert!((loss_selfsup(&f, &s, TargetMode::Essp).unwrap() - 1.25).abs() < 1e-6);

        let (f, s) = identity_sentence(&[0.9, 1.6, 2.2]);
        let pdep = predict_depths(&f, &s).unwrap();
        let (_, oracle) = crate::constraint::min_oracle(pdep.values()).unwrap();
        assert!((loss_selfsup(&f, &s, TargetMode::Ssp).unwrap() - oracle).abs() < 1e-12);

        assert!(loss_selfsup(&f, &s, TargetMode::Supervised).is_err());
    }

    #[test]
    fn gradient_zero_residual() {
        let f = ProbeMatrix::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let s = sentence(2, vec![1.0, 5.0, 2f32.sqrt(), -3.0]);
        let g = gradient(&f, &s, &seq(&[1, 2])).unwrap();
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn gradient_scalar_case() {
        let (a, x, t) = (0.7f64, 1.5f32, 1u32);
        let f = ProbeMatrix::from_vec(1, 1, vec![a]).unwrap();
        let s = sentence(1, vec![x]);
        let g = gradient(&f, &s, &seq(&[t])).unwrap();
        let x = f64::from(x);
        let expected = 4.0 * (a * a * x * x - f64::from(t)) * a * x * x;
        assert!((g.as_slice()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn gradient_at_checks_shapes() {
        let f = ProbeMatrix::zeros(1, 1);
        let s = sentence(1, vec![1.0, 2.0]);
        assert!(gradient_at(&f, &s, &[0], &seq(&[1, 2])).is_err());
        assert!(gradient_at(&f, &s, &[0, 5], &seq(&[1, 2])).is_err());
    }

    #[test]
    fn probe_matrix_validation() {
        assert!(ProbeMatrix::from_vec(0, 2, vec![]).is_err());
        assert!(ProbeMatrix::from_vec(1, 2, vec![1.0]).is_err());
        assert!(ProbeMatrix::from_vec(1, 1, vec![f64::NAN]).is_err());
        assert_eq!("ESSP".parse::<TargetMode>().unwrap(), TargetMode::Essp);
    }
}
