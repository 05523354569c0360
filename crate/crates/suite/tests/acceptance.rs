//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one `[PASS]` / `[FAIL]` line per criterion. Exits nonzero if any
//! criterion fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topoprobe::constraint::{max_oracle, mean_squared_distance, min_oracle, DepthSequence};
use topoprobe::geometry::{
    build_synthetic_corpus, phi_map, planted_matrix, random_depths, sample_omega_vectors,
    OmegaSpec, SynthConfig,
};
use topoprobe::greedy::{pesu, unit_gap_condition_holds, xpesu, PredictedDepths};
use topoprobe::ingest::{ProbeExample, SentenceEmbedding};
use topoprobe::metrics::{evaluate_probe, read_csv, unbiased_sp, ProjectionSolver};
use topoprobe::probe::{
    example_loss_and_gradient, predict_depths, selfsup_target, train, ProbeMatrix, TargetMode,
    TrainConfig,
};
use topoprobe::report::ordering_violations;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn dist(pdep: &[f64], target: &DepthSequence) -> f64 {
    mean_squared_distance(pdep, target.as_slice())
}

fn greedy_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 1000 {
        let len = rng.random_range(2..=7);
        let hi = 1.0 + 0.6 * len as f64;
        let pdep: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..hi)).collect();
        let mut sorted = pdep.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[1] - w[0] > 1.0) {
            continue;
        }
        let p = PredictedDepths::new(pdep.clone()).unwrap();
        let (_, oracle) = min_oracle(&pdep).unwrap();
        worst = worst.max((dist(&pdep, &pesu(&p)) - oracle).abs());
        cases += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        "greedy exactness",
        worst <= 1e-9 && secs < 10.0,
        format!("{cases} cases, worst |E(pesu) - E(mins)| = {worst:.2e}, {secs:.2} s"),
    )
}

fn worked_examples() -> Outcome {
    let (a, _) = min_oracle(&[0.8, 1.5, 1.8, 2.4, 4.5]).unwrap();
    let (b, _) = min_oracle(&[0.8, 1.5, 1.8, 2.4, 7.5]).unwrap();
    check(
        "worked examples",
        a.as_slice() == [1, 2, 2, 3, 4] && b.as_slice() == [1, 2, 3, 4, 5],
        format!("mins = {a} and {b}"),
    )
}

fn greedy_suboptimality() -> Outcome {
    let v = [0.8, 1.5, 1.8, 2.4, 4.5];
    let p = PredictedDepths::new(v.to_vec()).unwrap();
    let greedy = dist(&v, &pesu(&p));
    let (_, oracle) = min_oracle(&v).unwrap();
    let cond = unit_gap_condition_holds(&p);
    check(
        "greedy suboptimality",
        (greedy - 0.548).abs() <= 1e-12 && (oracle - 0.188).abs() <= 1e-12 && !cond,
        format!("E(pesu) = {greedy:.15}, oracle = {oracle:.15}, condition = {cond}"),
    )
}

fn random_sentence(rng: &mut ChaCha8Rng, len: usize, n: usize) -> SentenceEmbedding {
    let data = (0..len * n)
        .map(|_| rng.random_range(-1.0f32..1.0))
        .collect();
    SentenceEmbedding::from_word_vectors("s", n, data).unwrap()
}

fn bound_chain() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut chain_failures = 0;
    for _ in 0..500 {
        let len = rng.random_range(1..=6);
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..n);
        let f = ProbeMatrix::random_uniform(m, n, 1.5, &mut rng);
        let h = random_sentence(&mut rng, len, n);
        let dep = random_depths(len, &mut rng).unwrap();
        let pdep = predict_depths(&f, &h).unwrap();
        let e = dist(pdep.values(), &dep);
        let (_, lo) = min_oracle(pdep.values()).unwrap();
        let (_, hi) = max_oracle(pdep.values()).unwrap();
        if !(lo <= e && e <= hi) {
            chain_failures += 1;
        }
    }
    let mut rearr_failures = 0;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=50);
        let v: Vec<f64> = (0..len)
            .map(|_| rng.random_range(0.0..(len as f64 + 2.0)))
            .collect();
        let p = PredictedDepths::new(v.clone()).unwrap();
        if dist(&v, &xpesu(&p)) < dist(&v, &pesu(&p)) {
            rearr_failures += 1;
        }
    }
    check(
        "bound chain",
        chain_failures == 0 && rearr_failures == 0,
        format!(
            "500 triples with {chain_failures} chain violations, \
             10000 sequences with {rearr_failures} rearrangement violations"
        ),
    )
}

fn loss_with_fixed_target(f: &ProbeMatrix, h: &SentenceEmbedding, target: &DepthSequence) -> f64 {
    dist(predict_depths(f, h).unwrap().values(), target)
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let step = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let m = rng.random_range(1..=8.min(n - 1));
        let len = rng.random_range(1..=8);
        let f = ProbeMatrix::random_uniform(m, n, 0.5, &mut rng);
        let h = random_sentence(&mut rng, len, n);
        let gold = random_depths(len, &mut rng).unwrap();
        let ex = ProbeExample::labeled(h.clone(), gold.clone()).unwrap();
        for mode in [TargetMode::Supervised, TargetMode::Ssp, TargetMode::Essp] {
            let target = match mode {
                TargetMode::Supervised => gold.clone(),
                _ => selfsup_target(&predict_depths(&f, &h).unwrap(), mode).unwrap(),
            };
            let (_, analytic) = example_loss_and_gradient(&f, &ex, mode).unwrap().unwrap();
            let mut err = 0.0f64;
            let mut scale = 0.0f64;
            for k in 0..m * n {
                let mut plus = f.clone();
                plus.as_mut_slice()[k] += step;
                let mut minus = f.clone();
                minus.as_mut_slice()[k] -= step;
                let fd = (loss_with_fixed_target(&plus, &h, &target)
                    - loss_with_fixed_target(&minus, &h, &target))
                    / (2.0 * step);
                err = err.max((fd - analytic.as_slice()[k]).abs());
                scale = scale.max(analytic.as_slice()[k].abs()).max(fd.abs());
            }
            if scale > 0.0 {
                worst = worst.max(err / scale);
            }
        }
    }
    check(
        "gradient check",
        worst <= 1e-4,
        format!("100 instances x 3 modes, worst relative error {worst:.2e}"),
    )
}

fn synthetic_recovery() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    pool.install(|| {
        let start = Instant::now();
        let syn = build_synthetic_corpus(&SynthConfig::default()).unwrap();
        let examples: Vec<ProbeExample> = syn
            .corpus
            .sentences
            .iter()
            .zip(&syn.annotations)
            .map(|(s, a)| ProbeExample::labeled(s.clone(), a.word_depths.clone()).unwrap())
            .collect();
        let sup = train(&examples, &TrainConfig::default()).unwrap();
        let ssp = train(
            &examples,
            &TrainConfig {
                target_mode: TargetMode::Ssp,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let secs = start.elapsed().as_secs_f64();
        let (_, _, x_sp) = evaluate_probe(&examples, &sup.probe, ProjectionSolver::Greedy).unwrap();
        let x_sp = x_sp.unwrap();
        let (x_ssp, _, _) =
            evaluate_probe(&examples, &ssp.probe, ProjectionSolver::Greedy).unwrap();
        check(
            "synthetic recovery",
            x_sp <= 0.05 && x_ssp <= x_sp && secs < 60.0,
            format!(
                "supervised X_sp = {x_sp:.4} (needs <= 0.05), ssp-probe X_ssp = {x_ssp:.4}, \
                 {secs:.1} s single-threaded"
            ),
        )
    })
}

fn rescaling_map() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut membership_failures = 0;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(1..=10);
        let n = rng.random_range(2..=12);
        let m = rng.random_range(1..n);
        let p = planted_matrix(m, n, &mut rng);
        let a = random_depths(len, &mut rng).unwrap();
        let b = random_depths(len, &mut rng).unwrap();
        let spec = OmegaSpec::from_depths(&a, p).unwrap();
        let h = sample_omega_vectors(&spec, &mut rng).unwrap();
        let moved = phi_map(&h, &a.to_f64(), &b.to_f64()).unwrap();
        if !spec
            .transported(&b.to_f64())
            .unwrap()
            .contains(&moved)
            .unwrap()
        {
            membership_failures += 1;
        }
        let back = phi_map(&moved, &b.to_f64(), &a.to_f64()).unwrap();
        for (x, y) in h.iter().zip(&back) {
            worst = worst.max((x - y).amax());
        }
    }
    check(
        "rescaling map",
        membership_failures == 0 && worst <= 1e-12,
        format!(
            "200 instances, {membership_failures} membership failures, \
             worst round-trip error {worst:.2e}"
        ),
    )
}

fn reference_metrics() -> Outcome {
    let path =
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/layer_metrics.csv");
    let rows = read_csv(std::fs::File::open(path).unwrap()).unwrap();
    let bad = ordering_violations(&rows);
    let m8 = rows.iter().find(|r| r.slice == 8).unwrap();
    let unbiased = unbiased_sp(m8.x_ssp, m8.x_essp).unwrap();
    let listed: Vec<String> = bad
        .iter()
        .map(|&s| {
            let r = rows.iter().find(|r| r.slice == s).unwrap();
            format!("M_{s} ({} > {})", r.x_ssp, r.x_sp_true.unwrap())
        })
        .collect();
    check(
        "reference metrics ordering",
        rows.len() == 25 && bad.is_empty() && (unbiased - 0.1785).abs() <= 1e-12,
        format!(
            "{} rows, unbiased M_8 = {unbiased}, ordering violated at [{}]",
            rows.len(),
            listed.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [fn() -> Outcome; 8] = [
        greedy_exactness,
        worked_examples,
        greedy_suboptimality,
        bound_chain,
        gradient_check,
        synthetic_recovery,
        rescaling_map,
        reference_metrics,
    ];
    let mut failed = 0;
    for run in criteria {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
