//! Synthetic embedding geometry.
//!
//! An [`OmegaSpec`] describes the set of vector sequences whose projections
//! under a planted matrix `P` have squared norms within `sqrt(eps_i)` of
//! target depths. [`sample_omega`] draws members of that set, [`phi_map`]
//! rescales a member so it matches another depth profile, and
//! [`build_synthetic_corpus`] assembles a labeled corpus with known
//! structure for probe recovery tests.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::constraint::DepthSequence;
use crate::error::{Error, Result};
use crate::ingest::{Corpus, DepthAnnotation, SentenceEmbedding};

/// Default tolerance factor: `eps_i = DEFAULT_EPSILON_SCALE * target_i^2`.
pub const DEFAULT_EPSILON_SCALE: f64 = 1e-4;
/// Upper bound on `eps_i / target_i^2`.
pub const MAX_EPSILON_SCALE: f64 = 1e-2;

/// Target squared projected norms with per-position tolerances.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSpec {
    targets: Vec<f64>,
    epsilons: Vec<f64>,
    planted: DMatrix<f64>,
}

impl OmegaSpec {
    /// Targets from a depth sequence with the default tolerances.
    pub fn from_depths(depths: &DepthSequence, planted: DMatrix<f64>) -> Result<Self> {
        let targets = depths.to_f64();
        let eps = targets
            .iter()
            .map(|t| DEFAULT_EPSILON_SCALE * t * t)
            .collect();
        OmegaSpec::new(targets, eps, planted, false)
    }

    /// General constructor. Targets must be positive unless
    /// `allow_zero_root` is set, in which case zero targets are accepted with
    /// any positive tolerance.
    pub fn new(
        targets: Vec<f64>,
        epsilons: Vec<f64>,
        planted: DMatrix<f64>,
        allow_zero_root: bool,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidInput("no targets".into()));
        }
        if targets.len() != epsilons.len() {
            return Err(Error::Shape(format!(
                "{} targets but {} tolerances",
                targets.len(),
                epsilons.len()
            )));
        }
        if planted.nrows() == 0 || planted.ncols() == 0 {
            return Err(Error::Shape("planted matrix is empty".into()));
        }
        for (i, (&t, &e)) in targets.iter().zip(&epsilons).enumerate() {
            if !t.is_finite() || t < 0.0 || (t == 0.0 && !allow_zero_root) {
                return Err(Error::InvalidInput(format!("target {i} is {t}")));
            }
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::InvalidInput(format!("tolerance {i} is {e}")));
            }
            if t > 0.0 && e > MAX_EPSILON_SCALE * t * t {
                return Err(Error::InvalidInput(format!(
                    "tolerance {e} at position {i} is not small against target {t}"
                )));
            }
        }
        Ok(OmegaSpec {
            targets,
            epsilons,
            planted,
        })
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn planted(&self) -> &DMatrix<f64> {
        &self.planted
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Margin `sqrt(eps_i) - |‖P h_i‖² - target_i|` per position; positive
    /// entries are inside the set.
    pub fn margins(&self, h: &[DVector<f64>]) -> Result<Vec<f64>> {
        if h.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} vectors for {} targets",
                h.len(),
                self.len()
            )));
        }
        let norms = projected_sq_norms(&self.planted, h)?;
        Ok(norms
            .iter()
            .zip(&self.targets)
            .zip(&self.epsilons)
            .map(|((n, t), e)| e.sqrt() - (n - t).abs())
            .collect())
    }

    pub fn contains(&self, h: &[DVector<f64>]) -> Result<bool> {
        Ok(self.margins(h)?.iter().all(|&m| m > 0.0))
    }

    /// Membership of a stored embedding, read at single precision.
    pub fn contains_embedding(&self, s: &SentenceEmbedding) -> Result<bool> {
        self.contains(&embedding_vectors(s))
    }

    /// The set that [`phi_map`] carries this one onto for new targets:
    /// `P' = sqrt(t'_1 / t_1) P` and `eps'_i = (t'_i / t_i)^2 eps_i`.
    pub fn transported(&self, targets_prime: &[f64]) -> Result<OmegaSpec> {
        check_phi_depths(&self.targets, targets_prime)?;
        let scale = (targets_prime[0] / self.targets[0]).sqrt();
        let eps = self
            .epsilons
            .iter()
            .zip(&self.targets)
            .zip(targets_prime)
            .map(|((e, t), tp)| (tp / t).powi(2) * e)
            .collect();
        OmegaSpec::new(targets_prime.to_vec(), eps, &self.planted * scale, false)
    }
}

/// `‖P h_i‖²` for every vector.
pub fn projected_sq_norms(p: &DMatrix<f64>, h: &[DVector<f64>]) -> Result<Vec<f64>> {
    h.iter()
        .map(|v| {
            if v.len() != p.ncols() {
                return Err(Error::Shape(format!(
                    "vector of length {} for a matrix with {} columns",
                    v.len(),
                    p.ncols()
                )));
            }
            Ok((p * v).norm_squared())
        })
        .collect()
}

/// Right inverse `Pᵀ (P Pᵀ)⁻¹` of a full-row-rank matrix.
pub fn right_inverse(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = p.singular_values();
    let largest = sv.max();
    let smallest = if p.nrows() > p.ncols() { 0.0 } else { sv.min() };
    if !(smallest > largest * 1e-10) {
        return Err(Error::Singular { smallest, largest });
    }
    let gram = p * p.transpose();
    let inv = gram
        .try_inverse()
        .ok_or(Error::Singular { smallest, largest })?;
    Ok(p.transpose() * inv)
}

/// Draws a member of the set described by `spec`.
///
/// Each projected vector is a uniformly random direction in `R^m` scaled to
/// squared norm `target_i + delta_i` with `|delta_i| < sqrt(eps_i) / 2`, then
/// lifted through the right inverse of `P`.
pub fn sample_omega_vectors<R: Rng + ?Sized>(
    spec: &OmegaSpec,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let pinv = right_inverse(&spec.planted)?;
    let m = spec.planted.nrows();
    let mut out = Vec::with_capacity(spec.len());
    for (&t, &e) in spec.targets.iter().zip(&spec.epsilons) {
        let half = 0.5 * e.sqrt();
        let lo = if t == 0.0 { 0.0 } else { -half };
        let delta = rng.random_range(lo..half);
        let y = random_direction(m, rng) * (t + delta).max(0.0).sqrt();
        out.push(&pinv * y);
    }
    Ok(out)
}

/// [`sample_omega_vectors`] stored as a sentence embedding with one token per
/// word.
pub fn sample_omega(
    spec: &OmegaSpec,
    id: impl Into<String>,
    seed: u64,
) -> Result<SentenceEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = sample_omega_vectors(spec, &mut rng)?;
    to_embedding(id, &h)
}

fn random_direction<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn check_phi_depths(pesu: &[f64], pesu_prime: &[f64]) -> Result<()> {
    if pesu.len() != pesu_prime.len() {
        return Err(Error::Shape(format!(
            "depth sequences of lengths {} and {}",
            pesu.len(),
            pesu_prime.len()
        )));
    }
    if pesu.is_empty() {
        return Err(Error::InvalidInput("empty depth sequence".into()));
    }
    for (name, seq) in [("source", pesu), ("target", pesu_prime)] {
        if let Some(d) = seq.iter().find(|&&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Domain(format!(
                "{name} depths must be strictly positive, found {d}"
            )));
        }
    }
    Ok(())
}

/// Rescales `h` so that a member of the set for `pesu` becomes a member of
/// the transported set for `pesu_prime`. The first vector is the reference
/// and is left unchanged; vector `i` is scaled by
/// `sqrt(pesu'_i pesu_1 / (pesu_i pesu'_1))`.
pub fn phi_map(h: &[DVector<f64>], pesu: &[f64], pesu_prime: &[f64]) -> Result<Vec<DVector<f64>>> {
    check_phi_depths(pesu, pesu_prime)?;
    if h.len() != pesu.len() {
        return Err(Error::Shape(format!(
            "{} vectors for {} depths",
            h.len(),
            pesu.len()
        )));
    }
    let (r, rp) = (pesu[0], pesu_prime[0]);
    Ok(h.iter()
        .zip(pesu.iter().zip(pesu_prime))
        .enumerate()
        .map(|(i, (v, (p, pp)))| {
            if i == 0 {
                v.clone()
            } else {
                v * (pp * r / (p * rp)).sqrt()
            }
        })
        .collect())
}

pub fn embedding_vectors(s: &SentenceEmbedding) -> Vec<DVector<f64>> {
    s.rows()
        .map(|r| DVector::from_iterator(r.len(), r.iter().map(|&x| f64::from(x))))
        .collect()
}

pub fn to_embedding(id: impl Into<String>, h: &[DVector<f64>]) -> Result<SentenceEmbedding> {
    let dim = h.first().map_or(0, |v| v.len());
    let data = h.iter().flat_map(|v| v.iter().map(|&x| x as f32)).collect();
    SentenceEmbedding::from_word_vectors(id, dim, data)
}

/// A random valid depth sequence: a random ascending profile with steps in
/// `{0, 1}` after the forced `1, 2` prefix, then shuffled.
pub fn random_depths<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<DepthSequence> {
    if len == 0 {
        return Err(Error::InvalidInput("length must be positive".into()));
    }
    let mut v = Vec::with_capacity(len);
    v.push(1u32);
    if len >= 2 {
        v.push(2);
    }
    while v.len() < len {
        let last = *v.last().unwrap();
        v.push(last + u32::from(rng.random_bool(0.5)));
    }
    v.shuffle(rng);
    DepthSequence::new(v)
}

/// Parameters of a planted synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Rank of the planted matrix.
    pub m: usize,
    /// Embedding dimension.
    pub n: usize,
    pub seed: u64,
    /// `eps_i = epsilon_scale * depth_i^2`.
    pub epsilon_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_sentences: 100,
            min_len: 3,
            max_len: 8,
            m: 4,
            n: 8,
            seed: 0,
            epsilon_scale: DEFAULT_EPSILON_SCALE,
        }
    }
}

/// A synthetic corpus with its gold depths and the planted matrix.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub annotations: Vec<DepthAnnotation>,
    pub planted: DMatrix<f64>,
}

/// Planted matrix with i.i.d. `N(0, 1/n)` entries.
pub fn planted_matrix<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> DMatrix<f64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(m, n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Builds a corpus whose gold depths are exactly recoverable by the planted
/// matrix up to the sampling tolerance. Sentence `i` uses its own random
/// stream, so the output does not depend on the thread count.
pub fn build_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    if cfg.num_sentences == 0 {
        return Err(Error::InvalidInput("num_sentences must be positive".into()));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidInput(format!(
            "invalid length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if cfg.m == 0 || cfg.m >= cfg.n {
        return Err(Error::InvalidInput(format!(
            "need 0 < m < n, got m = {} and n = {}",
            cfg.m, cfg.n
        )));
    }
    if !(cfg.epsilon_scale > 0.0 && cfg.epsilon_scale <= MAX_EPSILON_SCALE) {
        return Err(Error::InvalidInput(format!(
            "epsilon_scale {} outside (0, {MAX_EPSILON_SCALE}]",
            cfg.epsilon_scale
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let planted = planted_matrix(cfg.m, cfg.n, &mut rng);
    right_inverse(&planted)?;

    let sentences = (0..cfg.num_sentences)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let depths = random_depths(len, &mut rng)?;
            let targets = depths.to_f64();
            let eps = targets.iter().map(|t| cfg.epsilon_scale * t * t).collect();
            let spec = OmegaSpec::new(targets, eps, planted.clone(), false)?;
            let h = sample_omega_vectors(&spec, &mut rng)?;
            let id = format!("synth-{i}");
            Ok((
                to_embedding(id.clone(), &h)?,
                DepthAnnotation {
                    sentence_id: id,
                    word_depths: depths,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut corpus = Corpus::new(cfg.n);
    let mut annotations = Vec::with_capacity(sentences.len());
    for (s, a) in sentences {
        corpus.push(s)?;
        annotations.push(a);
    }
    Ok(SyntheticCorpus {
        corpus,
        annotations,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_rank(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        planted_matrix(m, n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn samples_are_members() {
        let p = full_rank(2, 4, 1);
        let depths = DepthSequence::new(vec![1, 2, 2, 3]).unwrap();
        let spec = OmegaSpec::from_depths(&depths, p.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let h = sample_omega_vectors(&spec, &mut rng).unwrap();
            let norms = projected_sq_norms(&p, &h).unwrap();
            for (i, n) in norms.iter().enumerate() {
                let t = spec.targets()[i];
                assert!((n - t).abs() < spec.epsilons()[i].sqrt(), "{n} vs {t}");
            }
            assert!(spec.contains(&h).unwrap());
        }
    }

    #[test]
    fn tight_tolerance() {
        let p = full_rank(3, 6, 2);
        let targets = vec![1.0, 2.0, 3.0, 2.0];
        let eps = targets.iter().map(|t| 1e-8 * t * t).collect();
        let spec = OmegaSpec::new(targets, eps, p, false).unwrap();
        let s = sample_omega(&spec, "tight", 9).unwrap();
        assert_eq!(s.len(), 4);
        assert!(spec.contains_embedding(&s).unwrap());
    }

    #[test]
    fn zero_root_gives_ball_not_annulus() {
        let p = full_rank(2, 4, 3);
        let spec = OmegaSpec::new(vec![0.0, 1.0], vec![0.01, 1e-4], p.clone(), true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut smallest = f64::INFINITY;
        for _ in 0..200 {
            let h = sample_omega_vectors(&spec, &mut rng).unwrap();
            let n = projected_sq_norms(&p, &h).unwrap();
            assert!(n[0] < 0.1);
            assert!(n[1] > 1.0 - 0.01);
            smallest = smallest.min(n[0]);
        }
        assert!(smallest < 1e-3);
        assert!(OmegaSpec::new(vec![0.0], vec![0.01], p, false).is_err());
    }

    #[test]
    fn rank_deficient_is_singular() {
        let p = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(right_inverse(&p), Err(Error::Singular { .. })));
        let spec = OmegaSpec::new(vec![1.0], vec![1e-4], p, false).unwrap();
        assert!(matches!(
            sample_omega(&spec, "s", 0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn right_inverse_is_right_inverse() {
        let p = full_rank(3, 7, 4);
        let pinv = right_inverse(&p).unwrap();
        let id = &p * pinv;
        assert!((id - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn tolerance_must_be_small() {
        let p = full_rank(1, 2, 0);
        assert!(OmegaSpec::new(vec![1.0], vec![0.02], p.clone(), false).is_err());
        assert!(OmegaSpec::new(vec![1.0], vec![0.01], p.clone(), false).is_ok());
        assert!(OmegaSpec::new(vec![1.0], vec![0.0], p, false).is_err());
    }

    #[test]
    fn phi_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h: Vec<DVector<f64>> = (0..4).map(|_| random_direction(5, &mut rng)).collect();
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 3.0, 2.0, 4.0];
        assert_eq!(phi_map(&h, &a, &a).unwrap(), h);
        let back = phi_map(&phi_map(&h, &a, &b).unwrap(), &b, &a).unwrap();
        for (x, y) in h.iter().zip(&back) {
            assert!((x - y).amax() < 1e-12);
        }
    }

    #[test]
    fn phi_transports_membership() {
        let p = full_rank(2, 5, 6);
        let a = DepthSequence::new(vec![1, 2, 3, 2]).unwrap();
        let spec = OmegaSpec::from_depths(&a, p).unwrap();
        let h = sample_omega_vectors(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = [2.0, 3.0, 5.0, 3.0];
        let moved = phi_map(&h, spec.targets(), &b).unwrap();
        let target = spec.transported(&b).unwrap();
        assert!(target.contains(&moved).unwrap());
    }

    #[test]
    fn phi_rejects_zero_depth() {
        let h = vec![DVector::from_element(2, 1.0); 2];
        assert!(matches!(
            phi_map(&h, &[0.0, 1.0], &[1.0, 2.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            phi_map(&h, &[1.0, 2.0], &[1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(phi_map(&h, &[1.0], &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn random_depths_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in 1..30 {
            let d = random_depths(len, &mut rng).unwrap();
            assert_eq!(d.len(), len);
        }
        assert!(random_depths(0, &mut rng).is_err());
    }

    #[test]
    fn synthetic_corpus_is_consistent() {
        let cfg = SynthConfig::default();
        let syn = build_synthetic_corpus(&cfg).unwrap();
        assert_eq!(syn.corpus.len(), 100);
        assert_eq!(syn.annotations.len(), 100);
        for (s, a) in syn.corpus.sentences.iter().zip(&syn.annotations) {
            assert_eq!(s.id, a.sentence_id);
            assert!((3..=8).contains(&s.len()));
            assert_eq!(s.len(), a.word_depths.len());
            let eps = a
                .word_depths
                .to_f64()
                .iter()
                .map(|t| 1e-4 * t * t)
                .collect();
            let spec =
                OmegaSpec::new(a.word_depths.to_f64(), eps, syn.planted.clone(), false).unwrap();
            assert!(spec.contains_embedding(s).unwrap());
        }
        let again = build_synthetic_corpus(&cfg).unwrap();
        assert_eq!(again.corpus.sentences, syn.corpus.sentences);
    }

    #[test]
    fn synthetic_config_errors() {
        let bad = [
            SynthConfig {
                m: 8,
                ..Default::default()
            },
            SynthConfig {
                min_len: 5,
                max_len: 4,
                ..Default::default()
            },
            SynthConfig {
                num_sentences: 0,
                ..Default::default()
            },
            SynthConfig {
                epsilon_scale: 0.5,
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(
                build_synthetic_corpus(&cfg),
                Err(Error::InvalidInput(_))
            ));
        }
    }
}
