use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use kcf::consistency::{certify, ConsistencyReport};
use kcf::dictionary::{
    make_bilinear, make_lifted_linear, DictionaryDocument, NormalBasis, StateDictionary, Structure,
};
use kcf::error::{KcfError, Result};
use kcf::io::{
    ensure_dir, read_dataset, read_json, require_file, write_dataset, write_json,
    write_statistics_csv, DatasetSidecar, DICT_JSON, MODEL_JSON, REPORT_JSON, STATS_CSV,
};
use kcf::learning::{train, ModelClass, TrainConfig};
use kcf::predictor::{error_statistics, rollout, RolloutResult};
use kcf::regression::{fit_top_block, FittedModel, SnapshotDataset, Split};
use kcf::systems::{
    collect, ControlSystem, Domain, ExperimentProtocol, InputNonlinearity, SplitMode,
};

use crate::manifest::Recorder;

#[derive(Parser, Debug)]
#[command(
    name = "kcf",
    version,
    about = "Fit, train and certify Koopman control family models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a control system and write data.csv + data.json.
    GenerateData(GenerateArgs),
    /// Fit [A11, A12] for a fixed dictionary on the training split.
    Fit(FitArgs),
    /// Learn a dictionary of one model class.
    Train(TrainArgs),
    /// Certify a fitted model on the train and/or test split.
    Certify(CertifyArgs),
    /// Multi-step prediction error statistics against the true system.
    Rollout(RolloutArgs),
    /// Collect certified numbers of several model directories into one table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SystemArg {
    DcMotor,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum NonlinearityArg {
    Tanh,
    TanhCos,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitModeArg {
    Random,
    Contiguous,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StructureArg {
    LiftedLinear,
    Bilinear,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassArg {
    Separable,
    Bilinear,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_enum, conflicts_with = "system_spec")]
    pub system: Option<SystemArg>,
    /// Control system JSON (same schema as the `system` field of data.json).
    #[arg(long)]
    pub system_spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "tanh")]
    pub input_nonlinearity: NonlinearityArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Seconds, or steps for discrete-time systems.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Input hold time.
    #[arg(long)]
    pub hold: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub split: Option<SplitModeArg>,
    /// Redraw the state from its domain every this many steps.
    #[arg(long)]
    pub restart_every: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub initial_state: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Dictionary JSON; alternative to --structure.
    #[arg(
        long,
        conflicts_with = "structure",
        required_unless_present = "structure"
    )]
    pub dict: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub structure: Option<StructureArg>,
    /// Total degree of the polynomial state dictionary used with --structure.
    #[arg(long, default_value_t = 1)]
    pub degree: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub class: ClassArg,
    #[arg(long)]
    pub data: PathBuf,
    /// TrainConfig JSON.
    #[arg(long, conflicts_with = "paper_scale")]
    pub config: Option<PathBuf>,
    /// Four hidden layers of 64 and 500 epochs instead of the desk preset.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub split: SplitArg,
    /// Defaults to the model directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RolloutArgs {
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long = "model", required = true, num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Writes table.md and table.csv here; the table is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Contents of report.json.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    pub structure: Structure,
    pub train: Option<ConsistencyReport>,
    pub test: Option<ConsistencyReport>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData(a) => generate_data(a),
        Command::Fit(a) => fit(a),
        Command::Train(a) => train_cmd(a),
        Command::Certify(a) => certify_cmd(a),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Report(a) => report(a),
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn structure_label(s: Structure) -> &'static str {
    match s {
        Structure::General => ModelClass::Separable.label(),
        Structure::Bilinear => ModelClass::Bilinear.label(),
        Structure::LiftedLinear => ModelClass::Linear.label(),
    }
}

fn generate_data(a: GenerateArgs) -> Result<()> {
    let rec = Recorder::start("generate-data");
    let system = match &a.system_spec {
        Some(p) => read_json::<ControlSystem>(p)?,
        None => {
            let SystemArg::DcMotor = a.system.unwrap_or(SystemArg::DcMotor);
            ControlSystem::dc_motor(match a.input_nonlinearity {
                NonlinearityArg::Tanh => InputNonlinearity::Tanh,
                NonlinearityArg::TanhCos => InputNonlinearity::TanhCos,
            })
        }
    };
    let mut protocol = if system.is_continuous() {
        ExperimentProtocol::dc_motor(a.seed)
    } else {
        ExperimentProtocol::discrete(1000, vec![0.0; system.n()], a.seed)
    };
    if let Some(dt) = a.dt {
        protocol.dt = dt;
    }
    if let Some(d) = a.duration {
        protocol.duration = d;
    }
    if let Some(h) = a.hold {
        protocol.hold = h;
    }
    if let Some(f) = a.train_fraction {
        protocol.train_fraction = f;
    }
    if let Some(s) = a.split {
        protocol.split_mode = match s {
            SplitModeArg::Random => SplitMode::Random,
            SplitModeArg::Contiguous => SplitMode::Contiguous,
        };
    }
    if a.restart_every.is_some() {
        protocol.restart_every = a.restart_every;
    }
    if let Some(x0) = a.initial_state {
        protocol.initial_state = x0;
    }
    let data = collect(&system, &protocol)?;
    write_dataset(&a.out, &data, Some(&system), Some(&protocol))?;
    println!(
        "wrote {} snapshots ({} train, {} test) to {}",
        data.len(),
        data.indices_of(Split::Train).len(),
        data.indices_of(Split::Test).len(),
        a.out.display()
    );
    rec.finish(
        &a.out,
        json!({ "system": system, "protocol": protocol }),
        vec![a.seed],
        a.system_spec.iter().map(|p| path_str(p)).collect(),
        vec!["data.csv".into(), "data.json".into()],
    )
}

fn fit(a: FitArgs) -> Result<()> {
    let rec = Recorder::start("fit");
    let (data, _) = read_dataset(&a.data)?;
    let basis = match (&a.dict, a.structure) {
        (Some(p), _) => NormalBasis::from_document(read_json::<DictionaryDocument>(p)?)?,
        (None, Some(s)) => {
            let state = if a.degree <= 1 {
                StateDictionary::coordinates(data.n())
            } else {
                StateDictionary::Polynomial {
                    n: data.n(),
                    degree: a.degree,
                }
            };
            match s {
                StructureArg::LiftedLinear => make_lifted_linear(state, data.m())?,
                StructureArg::Bilinear => make_bilinear(state, data.m())?,
            }
        }
        (None, None) => {
            return Err(KcfError::invalid(
                "fit arguments",
                "need --dict or --structure",
            ))
        }
    };
    let train_set = data.subset(Split::Train)?;
    let model = fit_top_block(&basis, &train_set)?;
    ensure_dir(&a.out)?;
    write_json(&a.out.join(DICT_JSON), &basis.to_document())?;
    write_json(&a.out.join(MODEL_JSON), &model)?;
    println!(
        "fitted {} on {} snapshots, residual {:.6e}",
        structure_label(model.structure),
        model.diagnostics.snapshots,
        model.diagnostics.residual_fro
    );
    rec.finish(
        &a.out,
        json!({ "structure": model.structure, "degree": a.degree }),
        vec![],
        [Some(path_str(&a.data)), a.dict.as_deref().map(path_str)]
            .into_iter()
            .flatten()
            .collect(),
        vec![DICT_JSON.into(), MODEL_JSON.into()],
    )
}

/// State and input boxes for the network input scaling.
fn training_domains(data: &SnapshotDataset, sidecar: &DatasetSidecar) -> (Domain, Domain) {
    if let Some(sys) = &sidecar.system {
        return (sys.state_domain.clone(), sys.input_domain.clone());
    }
    let bounds = |rows: &[&DMatrix<f64>]| {
        let dim = rows[0].nrows();
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for m in rows {
            for (i, row) in m.row_iter().enumerate() {
                lo[i] = lo[i].min(row.min());
                hi[i] = hi[i].max(row.max());
            }
        }
        for i in 0..dim {
            if hi[i] - lo[i] < 1e-12 {
                lo[i] -= 1.0;
                hi[i] += 1.0;
            }
        }
        Domain::new(lo, hi)
    };
    (bounds(&[&data.x, &data.x_plus]), bounds(&[&data.u]))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let rec = Recorder::start("train");
    let (data, sidecar) = read_dataset(&a.data)?;
    let mut config = match (&a.config, a.paper_scale) {
        (Some(p), _) => read_json::<TrainConfig>(p)?,
        (None, true) => TrainConfig::paper_scale(),
        (None, false) => TrainConfig::desk(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
        config.warmup_epochs = config.warmup_epochs.min(e);
    }
    if a.checkpoint_every.is_some() {
        config.checkpoint_every = a.checkpoint_every;
    }
    let class = match a.class {
        ClassArg::Separable => ModelClass::Separable,
        ClassArg::Bilinear => ModelClass::Bilinear,
        ClassArg::Linear => ModelClass::Linear,
    };
    let (state_box, input_box) = training_domains(&data, &sidecar);
    ensure_dir(&a.out)?;
    let ckpt_dir = a.out.join("checkpoints");
    let outcome = train(
        &data,
        class,
        &config,
        &state_box,
        &input_box,
        |epoch, basis| {
            ensure_dir(&ckpt_dir)?;
            write_json(
                &ckpt_dir.join(format!("epoch-{epoch:04}.json")),
                &basis.to_document(),
            )
        },
    )?;

    write_json(&a.out.join(DICT_JSON), &outcome.basis.to_document())?;
    write_json(&a.out.join(MODEL_JSON), &outcome.model)?;
    let report = ModelReport {
        label: class.label().to_string(),
        structure: outcome.model.structure,
        train: Some(outcome.train_report),
        test: outcome.test_report,
    };
    write_json(&a.out.join(REPORT_JSON), &report)?;
    let mut history = String::from("epoch,lr,mean_loss,mean_trace,batches,skipped\n");
    for h in &outcome.history {
        let _ = writeln!(
            history,
            "{},{},{},{},{},{}",
            h.epoch + 1,
            h.lr,
            h.mean_loss,
            h.mean_trace,
            h.batches,
            h.skipped
        );
    }
    let hist_path = a.out.join("history.csv");
    fs::write(&hist_path, history).map_err(|source| KcfError::Io {
        path: path_str(&hist_path),
        source,
    })?;
    println!("{}", table_header());
    println!("{}", table_row(&report));
    rec.finish(
        &a.out,
        json!({ "class": class, "train": config, "state_box": state_box, "input_box": input_box }),
        vec![config.seed],
        [Some(path_str(&a.data)), a.config.as_deref().map(path_str)]
            .into_iter()
            .flatten()
            .collect(),
        vec![
            DICT_JSON.into(),
            MODEL_JSON.into(),
            REPORT_JSON.into(),
            "history.csv".into(),
        ],
    )
}

fn load_model(dir: &Path) -> Result<(NormalBasis, FittedModel)> {
    let doc: DictionaryDocument = read_json(&require_file(dir, DICT_JSON)?)?;
    let basis = NormalBasis::from_document(doc)?;
    let model: FittedModel = read_json(&require_file(dir, MODEL_JSON)?)?;
    model.check_basis(&basis)?;
    Ok((basis, model))
}

fn certify_split(
    basis: &NormalBasis,
    data: &SnapshotDataset,
    which: Split,
) -> Result<Option<ConsistencyReport>> {
    let idx = data.indices_of(which);
    if idx.is_empty() {
        return Ok(None);
    }
    certify(basis, &data.select(&idx)?).map(Some)
}

fn certify_cmd(a: CertifyArgs) -> Result<()> {
    let rec = Recorder::start("certify");
    let (basis, model) = load_model(&a.model)?;
    let (data, _) = read_dataset(&a.data)?;
    if data.n() != basis.n() || data.m() != basis.m() {
        return Err(KcfError::invalid(
            "certify arguments",
            format!(
                "model has (n, m) = ({}, {}), data has ({}, {})",
                basis.n(),
                basis.m(),
                data.n(),
                data.m()
            ),
        ));
    }
    let train_r = if a.split != SplitArg::Test {
        certify_split(&basis, &data, Split::Train)?
    } else {
        None
    };
    let test_r = if a.split != SplitArg::Train {
        certify_split(&basis, &data, Split::Test)?
    } else {
        None
    };
    let report = ModelReport {
        label: structure_label(model.structure).to_string(),
        structure: model.structure,
        train: train_r,
        test: test_r,
    };
    let out = a.out.clone().unwrap_or_else(|| a.model.clone());
    ensure_dir(&out)?;
    write_json(&out.join(REPORT_JSON), &report)?;
    println!("{}", table_header());
    println!("{}", table_row(&report));
    rec.finish(
        &out,
        json!({ "split": format!("{:?}", a.split).to_lowercase() }),
        vec![],
        vec![path_str(&a.model), path_str(&a.data)],
        vec![REPORT_JSON.into()],
    )
}

fn table_header() -> String {
    "| Model | Train RRMSE_max | Test RRMSE_max |\n|---|---|---|".to_string()
}

fn fmt_cell(r: &Option<ConsistencyReport>) -> String {
    r.as_ref()
        .map_or_else(|| "-".to_string(), |r| format!("{:.6}", r.rrmse_max))
}

fn table_row(r: &ModelReport) -> String {
    format!(
        "| {} | {} | {} |",
        r.label,
        fmt_cell(&r.train),
        fmt_cell(&r.test)
    )
}

/// Runs `f(0..count)` on up to `jobs` threads, keeping index order.
fn parallel_map<T, F>(count: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, count.max(1));
    let chunk = count.div_ceil(jobs);
    let parts: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                s.spawn(move || {
                    (j * chunk..((j + 1) * chunk).min(count))
                        .map(f)
                        .collect::<Result<Vec<T>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

struct Trajectory {
    x0: Vec<f64>,
    inputs: DMatrix<f64>,
    states: DMatrix<f64>,
}

fn rollout_cmd(a: RolloutArgs) -> Result<()> {
    let rec = Recorder::start("rollout");
    if a.count == 0 || a.horizon == 0 {
        return Err(KcfError::invalid(
            "rollout arguments",
            "count and horizon must be positive",
        ));
    }
    let (data, sidecar) = read_dataset(&a.data)?;
    let system = sidecar.system.clone().ok_or_else(|| {
        KcfError::invalid(
            "rollout data",
            "data.json does not record the generating system",
        )
    })?;
    let protocol = sidecar.protocol.clone().ok_or_else(|| {
        KcfError::invalid("rollout data", "data.json does not record the protocol")
    })?;
    let models = a
        .models
        .iter()
        .map(|d| load_model(d))
        .collect::<Result<Vec<_>>>()?;
    for (basis, _) in &models {
        if basis.n() != system.n() || basis.m() != system.m() {
            return Err(KcfError::invalid(
                "rollout arguments",
                "model and system dimensions differ",
            ));
        }
    }
    let starts = data.indices_of(Split::Test);
    let starts = if starts.is_empty() {
        (0..data.len()).collect()
    } else {
        starts
    };
    let hold = protocol.hold_steps();

    let trajectories = parallel_map(a.count, a.jobs, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(k as u64);
        let col = starts[rng.random_range(0..starts.len())];
        let x0: Vec<f64> = data.x.column(col).iter().copied().collect();
        let inputs = system.random_inputs(a.horizon, hold, &mut rng);
        let states = system.simulate(&x0, &inputs, protocol.dt)?;
        Ok(Trajectory { x0, inputs, states })
    })?;

    let mut groups = Vec::new();
    for (dir, (basis, model)) in a.models.iter().zip(&models) {
        let results: Vec<RolloutResult> = parallel_map(a.count, a.jobs, |k| {
            let t = &trajectories[k];
            rollout(model, basis, &t.x0, &t.inputs, Some(&t.states))
        })?;
        let coords = model.state_rows.clone().ok_or_else(|| {
            KcfError::invalid(
                "rollout model",
                format!("{}: H does not contain the raw state", dir.display()),
            )
        })?;
        let label = match read_json::<ModelReport>(&dir.join(REPORT_JSON)) {
            Ok(r) => r.label,
            Err(_) => structure_label(model.structure).to_string(),
        };
        let mut stats = error_statistics(&results, &coords)?;
        // Report coordinates as state indices rather than rows of H.
        for (s, state_index) in stats.iter_mut().zip(0..) {
            s.coordinate = state_index;
        }
        groups.push((label, stats));
    }
    ensure_dir(&a.out)?;
    write_statistics_csv(&a.out.join(STATS_CSV), &groups, Some(protocol.dt))?;
    for (label, stats) in &groups {
        let last = stats
            .iter()
            .map(|s| format!("x{}: {:.3e}", s.coordinate + 1, s.median[a.horizon]))
            .collect::<Vec<_>>()
            .join(", ");
        println!(
            "{label}: median relative error at step {} ({last})",
            a.horizon
        );
    }
    rec.finish(
        &a.out,
        json!({ "horizon": a.horizon, "count": a.count, "jobs": a.jobs }),
        vec![a.seed],
        a.models
            .iter()
            .map(|p| path_str(p))
            .chain([path_str(&a.data)])
            .collect(),
        vec![STATS_CSV.into()],
    )
}

fn report(a: ReportArgs) -> Result<()> {
    let rec = Recorder::start("report");
    let reports = a
        .models
        .iter()
        .map(|d| read_json::<ModelReport>(&require_file(d, REPORT_JSON)?))
        .collect::<Result<Vec<_>>>()?;
    let mut md = table_header();
    let mut csv = String::from("model,train_rrmse_max,test_rrmse_max\n");
    for r in &reports {
        md.push('\n');
        md.push_str(&table_row(r));
        let cell = |x: &Option<ConsistencyReport>| {
            x.as_ref()
                .map_or(String::new(), |r| r.rrmse_max.to_string())
        };
        let _ = writeln!(csv, "{},{},{}", r.label, cell(&r.train), cell(&r.test));
    }
    md.push('\n');
    print!("{md}");
    if let Some(out) = &a.out {
        ensure_dir(out)?;
        for (name, text) in [("table.md", &md), ("table.csv", &csv)] {
            let p = out.join(name);
            fs::write(&p, text).map_err(|source| KcfError::Io {
                path: path_str(&p),
                source,
            })?;
        }
        rec.finish(
            out,
            json!({}),
            vec![],
            a.models.iter().map(|p| path_str(p)).collect(),
            vec!["table.md".into(), "table.csv".into()],
        )?;
    }
    Ok(())
}
