use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use topoprobe::constraint::{DepthSequence, OracleCaps};
use topoprobe::error::{Error, Result};
use topoprobe::geometry::{build_synthetic_corpus, SynthConfig};
use topoprobe::greedy::{self, PredictedDepths};
use topoprobe::ingest::{
    build_examples, read_annotations, read_embeddings, write_embeddings, write_jsonl_depths,
    ProbeExample,
};
use topoprobe::metrics::{
    aggregate, read_csv, regularization_lambda, write_csv, MetricReport, MetricSummary, ProbeSet,
    ProjectionSolver,
};
use topoprobe::probe::{train, ProbeMatrix, TargetMode};
use topoprobe::report::{
    group_by_ranges, ordering_violations, render_groups, RangeGroup, SweepResult,
};

use crate::{
    Cli, Command, Edges, EvalArgs, Format, Inputs, OracleArgs, ReportArgs, Solver, SweepArgs,
    SynthArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let text = match &cli.command {
        Command::Oracle(a) => oracle(a, cli.seed)?,
        Command::Synth(a) => synth(a, cli.seed)?,
        Command::Train(a) => train_cmd(a, cli.seed)?,
        Command::Eval(a) => eval(a)?,
        Command::Sweep(a) => sweep(a, cli.seed)?,
        Command::Lambda(a) => format!(
            "{}\n",
            regularization_lambda(a.task_loss, a.x_ssp, a.ratio)?
        ),
        Command::Report(a) => report(a)?,
    };
    match &cli.out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn solver(s: Solver) -> ProjectionSolver {
    match s {
        Solver::Greedy => ProjectionSolver::Greedy,
        Solver::Exact => ProjectionSolver::exact(),
    }
}

fn oracle(a: &OracleArgs, seed: u64) -> Result<String> {
    let values = match a.random {
        Some(len) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..len)
                .map(|_| rng.random_range(0.0..len as f64 + 1.0))
                .collect()
        }
        None => a.values.clone(),
    };
    if values.is_empty() {
        return Err(Error::InvalidInput("no predicted depths given".into()));
    }
    let p = PredictedDepths::new(values)?;
    let t = greedy::trace(&p);
    let exact = match a.solver {
        Solver::Exact => {
            let caps = OracleCaps::default();
            Some((caps.min_oracle(p.values())?, caps.max_oracle(p.values())?))
        }
        Solver::Greedy => None,
    };
    let cond = greedy::unit_gap_condition_holds(&p);
    let e_pesu = p.distance(&t.pesu)?;
    let e_xpesu = p.distance(&t.xpesu)?;

    Ok(match a.format {
        Format::Json => {
            let entry =
                |s: &DepthSequence, d: f64| json!({ "depths": s.as_slice(), "distance": d });
            let v = json!({
                "pdep": p.values(),
                "mins": exact.as_ref().map(|((s, d), _)| entry(s, *d)),
                "maxs": exact.as_ref().map(|(_, (s, d))| entry(s, *d)),
                "pesu": entry(&t.pesu, e_pesu),
                "xpesu": entry(&t.xpesu, e_xpesu),
                "unit_gap_condition": cond,
            });
            format!("{}\n", serde_json::to_string_pretty(&v)?)
        }
        _ => {
            let vals: Vec<String> = p.values().iter().map(|v| v.to_string()).collect();
            let mut out = format!("pdep      {}\n", vals.join(" "));
            if let Some(((mins, dmin), (maxs, dmax))) = &exact {
                out.push_str(&format!("mins      {mins}  E = {dmin}\n"));
                out.push_str(&format!("maxs      {maxs}  E = {dmax}\n"));
            }
            out.push_str(&format!("pesu      {}  E = {e_pesu}\n", t.pesu));
            out.push_str(&format!("xpesu     {}  E = {e_xpesu}\n", t.xpesu));
            out.push_str(&format!("unit_gap  {cond}\n"));
            out
        }
    })
}

fn synth(a: &SynthArgs, seed: u64) -> Result<String> {
    let cfg = SynthConfig {
        num_sentences: a.sentences,
        min_len: a.min_len,
        max_len: a.max_len,
        m: a.rank,
        n: a.dim,
        seed,
        epsilon_scale: a.epsilon_scale,
    };
    let syn = build_synthetic_corpus(&cfg)?;
    write_embeddings(&a.embeddings, &syn.corpus)?;
    write_jsonl_depths(
        BufWriter::new(File::create(&a.annotations)?),
        &syn.annotations,
    )?;
    if let Some(path) = &a.planted {
        let p = &syn.planted;
        let data = (0..p.nrows())
            .flat_map(|r| (0..p.ncols()).map(move |c| p[(r, c)]))
            .collect();
        ProbeMatrix::from_vec(p.nrows(), p.ncols(), data)?.save(path)?;
    }
    Ok(format!(
        "wrote {} sentences of dimension {} to {}\n",
        syn.corpus.len(),
        syn.corpus.dim,
        a.embeddings.display()
    ))
}

fn load_examples(
    embeddings: &Path,
    annotations: Option<&Path>,
    inputs_mode: topoprobe::ingest::MeasurementMode,
) -> Result<(usize, Vec<ProbeExample>)> {
    let corpus = read_embeddings(embeddings)?;
    let anns = annotations.map(read_annotations).transpose()?;
    let examples = build_examples(&corpus, anns.as_deref(), inputs_mode)?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no sentences",
            embeddings.display()
        )));
    }
    Ok((corpus.dim, examples))
}

fn load_inputs(i: &Inputs) -> Result<Vec<ProbeExample>> {
    Ok(load_examples(&i.embeddings, i.annotations.as_deref(), i.mode)?.1)
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<String> {
    let examples = load_inputs(&a.inputs)?;
    let cfg = a.hyper.config(seed, a.target);
    let t = train(&examples, &cfg)?;
    t.probe.save(&a.probe_out)?;
    let v = json!({
        "target": a.target.to_string(),
        "rank": t.probe.rows(),
        "dim": t.probe.cols(),
        "metric": t.metric,
        "history": t.history,
    });
    Ok(format!("{}\n", serde_json::to_string_pretty(&v)?))
}

fn render_report(r: &MetricReport, format: Format) -> Result<String> {
    Ok(match format {
        Format::Json => format!("{}\n", serde_json::to_string_pretty(r)?),
        Format::Csv => csv_text(&[r.summary()])?,
        Format::Text => {
            let opt = |v: Option<f64>| v.map_or("absent".to_string(), |x| x.to_string());
            let hist: Vec<String> = r.theta_histogram.iter().map(|c| c.to_string()).collect();
            format!(
                "slice          M_{}\nsentences      {}\nx_ssp          {}\nx_essp         {}\n\
                 x_sp_true      {}\nx_sp_unbiased  {}\ntheta bins     {}\ntheta excluded {}\n",
                r.slice_id,
                r.corpus_size,
                r.x_ssp,
                r.x_essp,
                opt(r.x_sp_true),
                r.x_sp_unbiased,
                hist.join(" "),
                r.theta_excluded
            )
        }
    })
}

fn csv_text(rows: &[MetricSummary]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn eval(a: &EvalArgs) -> Result<String> {
    let examples = load_inputs(&a.inputs)?;
    let load = |specific: &Option<std::path::PathBuf>| -> Result<Option<ProbeMatrix>> {
        specific
            .as_ref()
            .or(a.probe.as_ref())
            .map(ProbeMatrix::load)
            .transpose()
    };
    let ssp = load(&a.ssp_probe)?;
    let essp = load(&a.essp_probe)?;
    let sup = load(&a.supervised_probe)?;
    let probes = ProbeSet {
        ssp: ssp.as_ref(),
        essp: essp.as_ref(),
        supervised: sup.as_ref(),
    };
    let r = aggregate(&examples, probes, solver(a.solver), a.slice)?;
    render_report(&r, a.format)
}

fn groupings(rows: &[MetricSummary], edges: &Edges) -> Result<(Vec<RangeGroup>, Vec<RangeGroup>)> {
    let ssp: Vec<(usize, f64)> = rows.iter().map(|r| (r.slice, r.x_ssp)).collect();
    let essp: Vec<(usize, f64)> = rows.iter().map(|r| (r.slice, r.x_essp)).collect();
    Ok((
        group_by_ranges(&ssp, &edges.ssp_edges)?,
        group_by_ranges(&essp, &edges.essp_edges)?,
    ))
}

fn groups_json(groups: &[RangeGroup]) -> serde_json::Value {
    groups
        .iter()
        .map(|g| json!({ "lower": g.lower, "upper": g.upper, "slices": g.slices }))
        .collect()
}

fn sweep(a: &SweepArgs, seed: u64) -> Result<String> {
    let mut reports = Vec::with_capacity(a.embeddings.len());
    let mut dim = None;
    for (slice, path) in a.embeddings.iter().enumerate() {
        let (d, examples) = load_examples(path, a.annotations.as_deref(), a.mode)?;
        if *dim.get_or_insert(d) != d {
            return Err(Error::Shape(format!(
                "{} has dimension {d}, earlier slices have {}",
                path.display(),
                dim.unwrap()
            )));
        }
        let labeled = examples.iter().any(|e| e.gold.is_some());
        let fit = |mode: TargetMode| -> Result<ProbeMatrix> {
            let t = train(&examples, &a.hyper.config(seed, mode))?;
            if let Some(dir) = &a.probe_dir {
                fs::create_dir_all(dir)?;
                t.probe.save(dir.join(format!("M_{slice}_{mode}.tprb")))?;
            }
            Ok(t.probe)
        };
        let ssp = fit(TargetMode::Ssp)?;
        let essp = fit(TargetMode::Essp)?;
        let sup = if labeled {
            Some(fit(TargetMode::Supervised)?)
        } else {
            None
        };
        let probes = ProbeSet {
            ssp: Some(&ssp),
            essp: Some(&essp),
            supervised: sup.as_ref(),
        };
        let r = aggregate(&examples, probes, solver(a.solver), slice)?;
        eprintln!(
            "M_{slice}: x_ssp {:.4} x_essp {:.4} x_sp_true {}",
            r.x_ssp,
            r.x_essp,
            r.x_sp_true.map_or("absent".into(), |v| format!("{v:.4}"))
        );
        reports.push(r);
    }
    let result = SweepResult::new(reports)?;
    let rows = result.summaries();
    let (ssp_groups, essp_groups) = groupings(&rows, &a.edges)?;
    Ok(match a.format {
        Format::Csv => csv_text(&rows)?,
        Format::Json => {
            let v = json!({
                "reports": result.reports(),
                "ssp_groups": groups_json(&ssp_groups),
                "essp_groups": groups_json(&essp_groups),
            });
            format!("{}\n", serde_json::to_string_pretty(&v)?)
        }
        Format::Text => format!(
            "{}\n{}\n{}",
            csv_text(&rows)?,
            render_groups("x_ssp", &ssp_groups),
            render_groups("x_essp", &essp_groups)
        ),
    })
}

fn report(a: &ReportArgs) -> Result<String> {
    let rows = read_csv(File::open(&a.metrics)?)?;
    let (ssp_groups, essp_groups) = groupings(&rows, &a.edges)?;
    let bad = ordering_violations(&rows);
    Ok(match a.format {
        Format::Csv => csv_text(&rows)?,
        Format::Json => {
            let v = json!({
                "ssp_groups": groups_json(&ssp_groups),
                "essp_groups": groups_json(&essp_groups),
                "ordering_violations": bad,
            });
            format!("{}\n", serde_json::to_string_pretty(&v)?)
        }
        Format::Text => {
            let listed: Vec<String> = bad.iter().map(|s| format!("M_{s}")).collect();
            format!(
                "{}\n{}\nordering violations: {}\n",
                render_groups("x_ssp", &ssp_groups),
                render_groups("x_essp", &essp_groups),
                if listed.is_empty() {
                    "none".to_string()
                } else {
                    listed.join(" ")
                }
            )
        }
    })
}
