use std::path::Path;

use hessix::bnn::{MaskSample, ModelCheckpoint};
use hessix::data::Dataset;
use hessix::eval::{inject_interaction, permutation_null, simulate, GroundTruth, NullConfig};
use hessix::hessian::{input_hessian, write_hessian_dump, HessianRequest};
use hessix::interactions::{
    detect, detection_inputs, detection_pairs, select_m, DetectionReport, Grouping, MSelectionTrace,
};
use hessix::math::{Matrix, RngStream};
use hessix::train::train_pipeline;
use hessix::Exec;
use serde::Serialize;

use crate::config::{Clusters, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, read_text, Output};

pub struct Ctx {
    pub config: RunConfig,
    pub out: Output,
    pub exec: Exec,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn target(&self) -> Option<&str> {
        self.config.data.target.as_deref()
    }
}

#[derive(Serialize)]
struct TruthFile<'a> {
    pairs: &'a [[usize; 2]],
}

pub fn simulate_cmd(ctx: &Ctx) -> CliResult<()> {
    let sim = simulate(&ctx.config.simulate, RngStream::new(ctx.seed()))?;
    log::info!("simulated noise variance {:.6}", sim.noise_var);
    ctx.out.write_dataset("train.csv", &sim.train)?;
    ctx.out.write_dataset("val.csv", &sim.val)?;
    ctx.out.write_dataset("test.csv", &sim.test)?;
    ctx.out.write_json("truth.json", &TruthFile { pairs: &sim.truth.pairs })?;
    Ok(())
}

pub fn train_cmd(ctx: &Ctx, data: &Path, val: Option<&Path>, test: Option<&Path>) -> CliResult<()> {
    let all = read_dataset(data, ctx.target())?;
    let test_file = test.map(|t| read_dataset(t, ctx.target())).transpose()?;
    let d = &ctx.config.data;
    let split_rng = RngStream::with_stream(ctx.seed(), 20);
    let (train, val, test) = match (val, test_file) {
        (Some(v), t) => (all, read_dataset(v, ctx.target())?, t),
        (None, Some(t)) => {
            let mut parts = all.split(&[1.0 - d.val_fraction], split_rng)?;
            let val = parts.pop().expect("validation split");
            (parts.pop().expect("training split"), val, Some(t))
        }
        (None, None) => {
            let mut parts = all.split(&[1.0 - d.val_fraction - d.test_fraction, d.val_fraction], split_rng)?;
            let test = parts.pop().filter(|t| !t.is_empty());
            let val = parts.pop().expect("validation split");
            (parts.pop().expect("training split"), val, test)
        }
    };
    log::info!("training on {} rows, validating on {}", train.len(), val.len());
    let outcome = train_pipeline(&train, &val, test.as_ref(), &ctx.config.train, ctx.exec, |rec, _| {
        log::debug!("epoch {} val loss {:.6}", rec.epoch, rec.val_loss);
    })?;
    let mut ck = outcome.checkpoint;
    ck.config_digest = ctx.out.meta.config_digest.clone();
    ctx.out.write_text("model.json", &(ck.to_json()? + "\n"))?;
    let mut curve = String::from("epoch,train_loss,val_loss,rmse,coverage\n");
    for r in &outcome.curve {
        curve.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", r.epoch, r.train_loss, r.val_loss, r.rmse, r.coverage));
    }
    ctx.out.write_csv("curve.csv", &curve)?;
    ctx.out.write_json("fit.json", &outcome.report)?;
    Ok(())
}

fn load_model(path: &Path) -> CliResult<ModelCheckpoint> {
    ModelCheckpoint::from_json(&read_text(path)?)
        .map_err(|e| CliError::Core(hessix::Error::Malformed(format!("{}: {e}", path.display()))))
}

/// Dataset whose feature columns match the checkpoint's.
fn load_matching(ctx: &Ctx, ck: &ModelCheckpoint, data: &Path) -> CliResult<Dataset> {
    let d = read_dataset(data, ctx.target())?;
    if d.feature_names != ck.feature_names {
        return Err(CliError::Core(hessix::Error::Malformed(format!(
            "{}: feature columns {:?} do not match the model's {:?}",
            data.display(),
            d.feature_names,
            ck.feature_names
        ))));
    }
    Ok(d)
}

fn m_trace(ctx: &Ctx, ck: &ModelCheckpoint, data: &Dataset) -> CliResult<MSelectionTrace> {
    let d = &ctx.config.detect;
    let opts = d.options(ctx.seed());
    let x = detection_inputs(ck, &data.x, opts.max_rows, ctx.seed())?;
    let max_m = d.max_m.min(x.rows());
    let pairs = detection_pairs(ck, &opts);
    Ok(select_m(
        &ck.model.net,
        &x,
        &pairs,
        d.layer,
        d.min_m,
        max_m,
        d.mc_samples,
        d.tau,
        RngStream::with_stream(ctx.seed(), 13),
        ctx.exec,
    )?)
}

#[derive(Serialize)]
struct Selection<'a> {
    chosen: usize,
    tau: f64,
    ms: &'a [usize],
    deltas: &'a [f64],
}

fn write_trace(ctx: &Ctx, trace: &MSelectionTrace) -> CliResult<()> {
    ctx.out.write_csv("m_trace.csv", &trace.to_csv())?;
    ctx.out.write_json(
        "m_selection.json",
        &Selection {
            chosen: trace.chosen,
            tau: trace.tau,
            ms: &trace.ms,
            deltas: &trace.deltas,
        },
    )?;
    Ok(())
}

pub fn detect_cmd(ctx: &Ctx, model: &Path, data: &Path) -> CliResult<()> {
    let ck = load_model(model)?;
    let data = load_matching(ctx, &ck, data)?;
    let d = &ctx.config.detect;
    let m = match d.clusters {
        Clusters::Fixed(m) => m,
        Clusters::Auto => {
            let trace = m_trace(ctx, &ck, &data)?;
            write_trace(ctx, &trace)?;
            log::info!("selected M = {}", trace.chosen);
            trace.chosen
        }
    };
    let opts = d.options(ctx.seed());
    let det = detect(&ck, &data.x, &[Grouping::Clusters(m)], &opts, ctx.exec)?;
    let report = DetectionReport::from_estimates(
        ctx.out.meta.clone(),
        if d.raw_units { "geh_raw" } else { "geh" },
        d.layer,
        m,
        d.mc_samples,
        &det.estimates[0],
        &det.node_names,
    )?;
    ctx.out.write_text("report.json", &report.to_json()?)?;
    ctx.out.write_text("report.csv", &report.to_csv())?;
    if d.hessian_dump {
        let x = detection_inputs(&ck, &data.x, opts.max_rows, ctx.seed())?;
        dump_hessians(ctx, &ck, &x)?;
    }
    Ok(())
}

fn dump_hessians(ctx: &Ctx, ck: &ModelCheckpoint, x: &Matrix) -> CliResult<()> {
    let net = &ck.model.net;
    let layer = ctx.config.detect.layer;
    let mask: MaskSample = net.mean_mask();
    let hessians = (0..x.rows())
        .map(|r| {
            let point = if layer == 0 {
                x.row(r).to_vec()
            } else {
                net.activations(x.row(r), &mask, layer)?
            };
            input_hessian(&HessianRequest {
                net,
                mask: &mask,
                layer,
                point: &point,
            })
        })
        .collect::<hessix::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_hessian_dump(&mut buf, &hessians)?;
    ctx.out.write_csv("hessians.csv", &String::from_utf8(buf).expect("utf-8 csv"))?;
    Ok(())
}

pub fn select_m_cmd(ctx: &Ctx, model: &Path, data: &Path) -> CliResult<()> {
    let ck = load_model(model)?;
    let data = load_matching(ctx, &ck, data)?;
    let trace = m_trace(ctx, &ck, &data)?;
    write_trace(ctx, &trace)?;
    println!("{}", trace.chosen);
    Ok(())
}

#[derive(Serialize)]
struct MeasureRow<'a> {
    measure: String,
    fpr: f64,
    significant_calls: usize,
    total_calls: usize,
    mean_score: f64,
    max_scores: &'a [f64],
}

#[derive(Serialize)]
struct PermutationFile<'a> {
    permutations: usize,
    clusters: usize,
    measures: Vec<MeasureRow<'a>>,
}

pub fn permute_cmd(ctx: &Ctx, data: &Path, report: Option<&Path>) -> CliResult<()> {
    let data = read_dataset(data, ctx.target())?;
    let observed = report
        .map(|p| DetectionReport::from_json(&read_text(p)?).map_err(|e| CliError::Config(format!("{}: {e}", p.display()))))
        .transpose()?;
    let d = &ctx.config.detect;
    let mut opts = d.options(ctx.seed());
    let m = match (&observed, d.clusters) {
        (Some(r), _) => {
            opts.layer = r.layer;
            r.clusters
        }
        (None, Clusters::Fixed(m)) => m,
        (None, Clusters::Auto) => {
            return Err(CliError::Usage(
                "permute needs a fixed --clusters M or a --report to take M from".into(),
            ))
        }
    };
    let p = &ctx.config.permute;
    let config = NullConfig {
        train: p.train.clone(),
        val_fraction: p.val_fraction,
        detect: opts,
        groupings: vec![Grouping::Single, Grouping::Clusters(m), Grouping::Singletons],
    };
    let null = permutation_null(&data, &config, p.permutations, RngStream::with_stream(ctx.seed(), 30), ctx.exec)?;
    let rows: Vec<MeasureRow> = null
        .measures
        .iter()
        .map(|mn| MeasureRow {
            measure: mn.grouping.label(),
            fpr: mn.fpr,
            significant_calls: mn.significant_calls,
            total_calls: mn.total_calls,
            mean_score: mn.mean_score,
            max_scores: &mn.max_scores,
        })
        .collect();
    let mut csv = String::from("measure,fpr,significant_calls,total_calls\n");
    for r in &rows {
        csv.push_str(&format!("{},{:?},{},{}\n", r.measure, r.fpr, r.significant_calls, r.total_calls));
    }
    ctx.out.write_csv("fpr.csv", &csv)?;
    ctx.out.write_json(
        "permutation.json",
        &PermutationFile {
            permutations: null.permutations,
            clusters: m,
            measures: rows,
        },
    )?;
    if let Some(mut rep) = observed {
        let mn = null.measure(Grouping::Clusters(m)).expect("grouping present");
        for row in &mut rep.interactions {
            row.p_permute = Some(mn.p_permute(row.mean));
        }
        rep.meta = ctx.out.meta.clone();
        ctx.out.write_text("report_permuted.json", &rep.to_json()?)?;
        ctx.out.write_text("report_permuted.csv", &rep.to_csv())?;
    }
    Ok(())
}

pub fn inject_cmd(ctx: &Ctx, data: &Path) -> CliResult<()> {
    let spec = ctx
        .config
        .inject
        .as_ref()
        .ok_or_else(|| CliError::Usage("inject needs --spec or an \"inject\" config section".into()))?;
    let data = read_dataset(data, ctx.target())?;
    let out = inject_interaction(&data, spec)?;
    ctx.out.write_dataset("injected.csv", &out)?;
    let truth = GroundTruth::new([(spec.pair[0], spec.pair[1])]);
    ctx.out.write_json("truth.json", &TruthFile { pairs: &truth.pairs })?;
    Ok(())
}
