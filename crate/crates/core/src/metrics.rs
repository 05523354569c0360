//! Corpus-level probe metrics.
//!
//! For a probe `f` and a corpus, three means are computed: distance of the
//! predicted depths to the near admissible sequence (`x_ssp`), to the far
//! admissible sequence (`x_essp`), and to the gold depths (`x_sp_true`). At a
//! fixed probe with exact near/far sequences they are ordered
//! `x_ssp <= x_sp_true <= x_essp`, and their midpoint is the unbiased
//! estimate of the supervised metric under the symmetric `6(x - x^2)` model
//! of where gold depths fall between the two bounds.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constraint::{mean_squared_distance, DepthSequence, OracleCaps};
use crate::error::{Error, Result};
use crate::greedy::{self, PredictedDepths};
use crate::ingest::ProbeExample;
use crate::probe::{predict_depths, ProbeMatrix};

pub const THETA_BINS: usize = 20;

/// Where a sentence's gold loss sits between its near and far losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSample {
    pub sentence_id: String,
    /// Clamped to `[0, 1]`; `None` when the denominator is degenerate.
    pub theta: Option<f64>,
    pub raw_numerator: f64,
    pub raw_denominator: f64,
}

impl ThetaSample {
    pub fn is_retained(&self) -> bool {
        self.theta.is_some()
    }

    /// Unclamped ratio, for diagnostics.
    pub fn raw(&self) -> Option<f64> {
        self.theta
            .map(|_| self.raw_numerator / self.raw_denominator)
    }
}

/// Relative position of the gold loss between the near and far losses.
pub fn theta(
    pdep: &PredictedDepths,
    dep: &DepthSequence,
    mins_like: &DepthSequence,
    maxs_like: &DepthSequence,
) -> Result<ThetaSample> {
    let e_dep = pdep.distance(dep)?;
    let e_min = pdep.distance(mins_like)?;
    let e_max = pdep.distance(maxs_like)?;
    let num = e_dep - e_min;
    let den = e_max - e_min;
    let theta = (den >= 1e-12).then(|| (num / den).clamp(0.0, 1.0));
    Ok(ThetaSample {
        sentence_id: String::new(),
        theta,
        raw_numerator: num,
        raw_denominator: den,
    })
}

/// Midpoint of the two self-supervised bounds.
pub fn unbiased_sp(x_ssp: f64, x_essp: f64) -> Result<f64> {
    check_bounds(x_ssp, x_essp)?;
    Ok(0.5 * (x_ssp + x_essp))
}

fn check_bounds(x_ssp: f64, x_essp: f64) -> Result<()> {
    if !(x_ssp >= 0.0 && x_essp >= 0.0) {
        return Err(Error::Invariant(format!(
            "metrics must be nonnegative, got {x_ssp} and {x_essp}"
        )));
    }
    if x_ssp > x_essp {
        return Err(Error::Invariant(format!(
            "lower bound {x_ssp} exceeds upper bound {x_essp}"
        )));
    }
    Ok(())
}

/// `expectation * x_essp + (1 - expectation) * x_ssp`.
pub fn combine_with_density(x_ssp: f64, x_essp: f64, expectation: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&expectation) {
        return Err(Error::InvalidInput(format!(
            "expectation {expectation} outside [0, 1]"
        )));
    }
    Ok(expectation * x_essp + (1.0 - expectation) * x_ssp)
}

/// Density `6(x - x^2)` on `[0, 1]`.
pub fn theta_density(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        6.0 * (x - x * x)
    } else {
        0.0
    }
}

/// Mean of [`theta_density`]: `int_0^1 6(x^2 - x^3) dx = 6 (1/3 - 1/4)`.
pub fn theta_density_mean() -> f64 {
    6.0 * (1.0 / 3.0 - 1.0 / 4.0)
}

/// Regularization weight that makes `lambda * x_ssp` equal `ratio` times the
/// task loss.
pub fn regularization_lambda(task_loss: f64, x_ssp: f64, ratio: f64) -> Result<f64> {
    if !(x_ssp > 0.0) {
        return Err(Error::Domain(format!(
            "x_ssp must be positive to derive lambda, got {x_ssp}"
        )));
    }
    Ok(ratio * task_loss / x_ssp)
}

/// Natural-log transform used for plotting; zero maps to `+inf`.
pub fn neg_log(x: f64) -> f64 {
    if x == 0.0 {
        f64::INFINITY
    } else {
        -x.ln()
    }
}

pub fn theta_histogram(samples: &[ThetaSample]) -> Vec<u64> {
    let mut bins = vec![0u64; THETA_BINS];
    for t in samples.iter().filter_map(|s| s.theta) {
        let b = ((t * THETA_BINS as f64) as usize).min(THETA_BINS - 1);
        bins[b] += 1;
    }
    bins
}

/// How the near and far admissible sequences are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionSolver {
    /// Greedy same-order and reverse-order constructions.
    #[default]
    Greedy,
    /// Exhaustive search where the length is within the oracle cap, greedy
    /// beyond it.
    Exact(OracleCaps),
}

impl ProjectionSolver {
    pub fn exact() -> Self {
        ProjectionSolver::Exact(OracleCaps::default())
    }

    /// Near and far admissible sequences for `pdep`.
    pub fn targets(&self, pdep: &PredictedDepths) -> Result<(DepthSequence, DepthSequence)> {
        match self {
            ProjectionSolver::Exact(caps) if caps.within_cap(pdep.len()) => {
                let (near, _) = caps.min_oracle(pdep.values())?;
                let (far, _) = caps.max_oracle(pdep.values())?;
                Ok((near, far))
            }
            _ => {
                let t = greedy::trace(pdep);
                Ok((t.pesu, t.xpesu))
            }
        }
    }
}

/// Metrics of one model slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub slice_id: usize,
    pub x_ssp: f64,
    pub x_essp: f64,
    /// Absent when no sentence carries gold depths.
    pub x_sp_true: Option<f64>,
    pub x_sp_unbiased: f64,
    pub theta_histogram: Vec<u64>,
    /// Labeled sentences whose theta was undefined.
    pub theta_excluded: usize,
    pub corpus_size: usize,
}

impl MetricReport {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            slice: self.slice_id,
            x_ssp: self.x_ssp,
            x_essp: self.x_essp,
            x_sp_true: self.x_sp_true,
        }
    }
}

/// The probes evaluated for one slice. Absent probes are skipped.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProbeSet<'a> {
    pub ssp: Option<&'a ProbeMatrix>,
    pub essp: Option<&'a ProbeMatrix>,
    pub supervised: Option<&'a ProbeMatrix>,
}

impl<'a> ProbeSet<'a> {
    /// One probe shared by all three metrics.
    pub fn shared(f: &'a ProbeMatrix) -> Self {
        ProbeSet {
            ssp: Some(f),
            essp: Some(f),
            supervised: Some(f),
        }
    }

    fn candidates(&self) -> Vec<&'a ProbeMatrix> {
        let mut out: Vec<&ProbeMatrix> = Vec::new();
        for f in [self.ssp, self.essp, self.supervised].into_iter().flatten() {
            if !out.iter().any(|g| std::ptr::eq(*g, f) || *g == f) {
                out.push(f);
            }
        }
        out
    }
}

struct SentenceLosses {
    near: f64,
    far: f64,
    gold: Option<f64>,
}

fn sentence_losses(
    f: &ProbeMatrix,
    ex: &ProbeExample,
    solver: ProjectionSolver,
) -> Result<SentenceLosses> {
    let pdep = predict_depths(f, &ex.sentence)?;
    let (near, far) = solver.targets(&pdep)?;
    let gold = ex.gold.as_ref().map(|g| {
        let sub: Vec<f64> = g.positions.iter().map(|&p| pdep.values()[p]).collect();
        mean_squared_distance(&sub, g.depths.as_slice())
    });
    Ok(SentenceLosses {
        near: pdep.distance(&near)?,
        far: pdep.distance(&far)?,
        gold,
    })
}

/// Corpus means `(x_ssp, x_essp, x_sp_true)` at a single probe.
pub fn evaluate_probe(
    examples: &[ProbeExample],
    f: &ProbeMatrix,
    solver: ProjectionSolver,
) -> Result<(f64, f64, Option<f64>)> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let per = examples
        .par_iter()
        .map(|ex| sentence_losses(f, ex, solver))
        .collect::<Result<Vec<_>>>()?;
    let n = per.len() as f64;
    let near = per.iter().map(|l| l.near).sum::<f64>() / n;
    let far = per.iter().map(|l| l.far).sum::<f64>() / n;
    let gold: Vec<f64> = per.iter().filter_map(|l| l.gold).collect();
    let gold = (!gold.is_empty()).then(|| gold.iter().sum::<f64>() / gold.len() as f64);
    Ok((near, far, gold))
}

/// Per-sentence theta values at probe `f`, over labeled sentences. Near and
/// far sequences are computed for the gold word positions only.
pub fn theta_samples(
    examples: &[ProbeExample],
    f: &ProbeMatrix,
    solver: ProjectionSolver,
) -> Result<Vec<ThetaSample>> {
    examples
        .par_iter()
        .filter_map(|ex| ex.gold.as_ref().map(|g| (ex, g)))
        .map(|(ex, g)| {
            let pdep = predict_depths(f, &ex.sentence)?;
            let sub =
                PredictedDepths::new(g.positions.iter().map(|&p| pdep.values()[p]).collect())?;
            let (near, far) = solver.targets(&sub)?;
            let mut t = theta(&sub, &g.depths, &near, &far)?;
            t.sentence_id = ex.sentence.id.clone();
            Ok(t)
        })
        .collect()
}

/// Aggregates the metric report of one slice.
///
/// Every metric is a minimum over probes, so each is evaluated at all
/// supplied probes and the smallest value is reported. With a single shared
/// probe this is plain evaluation at that probe. Theta uses the supervised
/// probe.
pub fn aggregate(
    examples: &[ProbeExample],
    probes: ProbeSet<'_>,
    solver: ProjectionSolver,
    slice_id: usize,
) -> Result<MetricReport> {
    let candidates = probes.candidates();
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no probe supplied".into()));
    }
    let mut x_ssp = f64::INFINITY;
    let mut x_essp = f64::INFINITY;
    let mut x_sp_true: Option<f64> = None;
    for f in &candidates {
        let (near, far, gold) = evaluate_probe(examples, f, solver)?;
        x_ssp = x_ssp.min(near);
        x_essp = x_essp.min(far);
        if let Some(g) = gold {
            x_sp_true = Some(x_sp_true.map_or(g, |cur| cur.min(g)));
        }
    }
    let samples = match probes.supervised {
        Some(f) => theta_samples(examples, f, solver)?,
        None => Vec::new(),
    };
    Ok(MetricReport {
        slice_id,
        x_ssp,
        x_essp,
        x_sp_true,
        x_sp_unbiased: unbiased_sp(x_ssp, x_essp)?,
        theta_histogram: theta_histogram(&samples),
        theta_excluded: samples.iter().filter(|s| !s.is_retained()).count(),
        corpus_size: examples.len(),
    })
}

/// The per-slice values carried in CSV form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub slice: usize,
    pub x_ssp: f64,
    pub x_essp: f64,
    pub x_sp_true: Option<f64>,
}

impl MetricSummary {
    pub fn unbiased(&self) -> Result<f64> {
        unbiased_sp(self.x_ssp, self.x_essp)
    }

    /// `x_ssp <= x_sp_true <= x_essp`, vacuous without a supervised value.
    pub fn bounds_hold(&self) -> bool {
        match self.x_sp_true {
            Some(t) => self.x_ssp <= t && t <= self.x_essp,
            None => self.x_ssp <= self.x_essp,
        }
    }
}

pub const CSV_COLUMNS: [&str; 9] = [
    "slice",
    "x_ssp",
    "x_essp",
    "x_sp_true",
    "x_sp_unbiased",
    "neg_log_x_ssp",
    "neg_log_x_essp",
    "neg_log_x_sp_true",
    "neg_log_x_sp_unbiased",
];

/// Writes summaries as CSV with [`CSV_COLUMNS`]. Absent supervised values are
/// empty cells.
pub fn write_csv<W: Write>(w: W, rows: &[MetricSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        let unbiased = r.unbiased()?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.write_record([
            r.slice.to_string(),
            r.x_ssp.to_string(),
            r.x_essp.to_string(),
            opt(r.x_sp_true),
            unbiased.to_string(),
            neg_log(r.x_ssp).to_string(),
            neg_log(r.x_essp).to_string(),
            opt(r.x_sp_true.map(neg_log)),
            neg_log(unbiased).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads summaries from CSV. Requires `slice`, `x_ssp` and `x_essp` columns;
/// `x_sp_true` is optional and other columns are ignored.
pub fn read_csv<R: Read>(r: R) -> Result<Vec<MetricSummary>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Format {
        offset: 1,
        message: format!("missing column {name:?}"),
    };
    let slice_c = col("slice").ok_or_else(|| missing("slice"))?;
    let ssp_c = col("x_ssp").ok_or_else(|| missing("x_ssp"))?;
    let essp_c = col("x_essp").ok_or_else(|| missing("x_essp"))?;
    let true_c = col("x_sp_true");

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            field(c).parse().map_err(|_| Error::Format {
                offset: line,
                message: format!("bad number {:?}", field(c)),
            })
        };
        let slice = field(slice_c)
            .trim_start_matches("M_")
            .parse()
            .map_err(|_| Error::Format {
                offset: line,
                message: format!("bad slice {:?}", field(slice_c)),
            })?;
        let x_sp_true = match true_c {
            Some(c) if !field(c).is_empty() => Some(num(c)?),
            _ => None,
        };
        out.push(MetricSummary {
            slice,
            x_ssp: num(ssp_c)?,
            x_essp: num(essp_c)?,
            x_sp_true,
        });
    }
    Ok(out)
}
