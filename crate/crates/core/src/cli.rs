//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or invalid input, 2 domain failure
//! (gapless system, non-finite loss, ...), 3 file problems.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{accuracy_table, boundary_midpoints, boundary_shift_analytic, boundary_shift_relative};
use crate::analysis::{BoundaryEstimate, TableEntry};
use crate::data::{
    add_momentum_noise, add_position_noise, generate_dataset, read_sample, sample_classes, simulate_sample, split,
    write_sample, DatasetManifest, GenerateOptions, NoiseSpec, RegionSpec, Sample, SAMPLE_MAGIC,
};
use crate::error::{Error, Result};
use crate::learn::som::SOM_MAGIC;
use crate::learn::{
    evaluate, pca, predict, som_assign, som_fit, train_supervised, Architecture, Dataset, NetworkModel, SomState,
    Tensor, TrainConfig, EVAL_BATCH,
};
use crate::model::CouplingParams;
use crate::rng;
use crate::topo::{chern_link, chern_quadrature, linspace, linspace_half_open, phase_diagram, BzGrid, PhaseDiagram};
use crate::walk::{evolve_momentum, to_position, Domain, Lattice};

pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.qwn";
pub const SOM_FILE: &str = "som.qws";
pub const METRICS_FILE: &str = "metrics.json";
pub const THREADS_ENV: &str = "QWALK_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SomConfig {
    pub height: usize,
    pub width: usize,
    pub iters: usize,
}

impl Default for SomConfig {
    fn default() -> Self {
        SomConfig {
            height: 64,
            width: 64,
            iters: 1000,
        }
    }
}

/// Effective settings of a run: a JSON file overlaid by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub lattice: usize,
    pub grid: usize,
    pub quadrature_grid: usize,
    pub region: RegionSpec,
    pub counts: BTreeMap<i32, usize>,
    pub base: CouplingParams,
    pub domain: Domain,
    pub fill: f64,
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub arch: String,
    pub train: TrainConfig,
    pub som: Option<SomConfig>,
    pub shift_m_range: [f64; 2],
    pub shift_m_count: usize,
    pub shift_t3_range: [f64; 2],
    pub shift_t3_count: usize,
    pub eta: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lattice: 101,
            grid: 256,
            quadrature_grid: 400,
            region: RegionSpec::whole(),
            counts: BTreeMap::from([(-1, 120), (0, 120), (1, 120)]),
            base: CouplingParams::reference(0.0, 0.0),
            domain: Domain::Momentum,
            fill: crate::data::DEFAULT_FILL,
            noise: None,
            seed: 0,
            split_ratios: [0.8, 0.1, 0.1],
            split_seed: 0,
            arch: "mlp".into(),
            train: TrainConfig::default(),
            som: None,
            shift_m_range: [-20.0, -10.0],
            shift_m_count: 7,
            shift_t3_range: [-20.0, 20.0],
            shift_t3_count: 28,
            eta: vec![3.0, 6.0, 9.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        Lattice::new(self.lattice)?;
        BzGrid::new(self.grid)?;
        BzGrid::new(self.quadrature_grid)?;
        self.region.validate()?;
        self.base.validate()?;
        self.train.validate()?;
        self.arch.parse::<Architecture>()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if !(self.fill > 0.0 && self.fill < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "fill must be in (0,1), got {}",
                self.fill
            )));
        }
        if self.shift_m_count == 0 || self.shift_t3_count < 2 {
            return Err(Error::InvalidParameter("boundary-shift grid too small".into()));
        }
        Ok(())
    }

    /// Writes the configuration as `config.json` inside `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qwalk",
    version,
    about = "Topological phases of a 2D quantum walk, simulated and learned"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Chern number of one parameter point.
    Chern(ChernArgs),
    /// Chern labels over an (m, t3) grid, as JSON.
    PhaseDiagram(PhaseArgs),
    /// Simulate one walk and write a sample file.
    Walk(WalkArgs),
    /// Generate a labelled dataset directory.
    GenDataset(GenArgs),
    /// Copy a dataset with detector noise applied.
    AddNoise(NoiseArgs),
    /// Stratified train/validation/test split, stored in the manifest.
    Split(SplitArgs),
    /// Train a classifier (and optionally a SOM) on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained classifier and print an accuracy table.
    Eval(EvalArgs),
    /// Measure the eta-induced shift of the 1 -> 0 phase boundary.
    BoundaryShift(ShiftArgs),
    /// Principal components of dataset inputs or network features.
    Pca(PcaArgs),
    /// Render a sample or SOM checkpoint as PPM images.
    ExportImage(ExportArgs),
}

#[derive(Debug, Args)]
struct ParamArgs {
    #[arg(long, allow_negative_numbers = true)]
    m: f64,
    #[arg(long, allow_negative_numbers = true)]
    t3: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    t1x: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    t1y: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    t2: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eta: f64,
}

impl ParamArgs {
    fn params(&self) -> CouplingParams {
        CouplingParams {
            m: self.m,
            t1x: self.t1x,
            t1y: self.t1y,
            t2: self.t2,
            t3: self.t3,
            eta: self.eta,
        }
    }
}

/// Flags shared by the config-driven commands; each overrides the file value.
#[derive(Debug, Args, Default)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lattice: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long)]
    fill: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.lattice {
            cfg.lattice = v;
        }
        if let Some(v) = self.grid {
            cfg.grid = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.domain {
            cfg.domain = parse_domain(v)?;
        }
        if let Some(v) = self.fill {
            cfg.fill = v;
        }
        Ok(cfg)
    }
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "momentum" => Ok(Domain::Momentum),
        "position" => Ok(Domain::Position),
        _ => Err(Error::InvalidParameter(format!(
            "unknown domain {s:?} (momentum, position)"
        ))),
    }
}

#[derive(Debug, Args)]
struct ChernArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Link-method mesh size.
    #[arg(long, default_value_t = 256)]
    n: usize,
    /// Quadrature mesh size.
    #[arg(long, default_value_t = 400)]
    quad_n: usize,
}

#[derive(Debug, Args)]
struct PhaseArgs {
    #[arg(long, num_args = 2, default_values_t = [-20.0, 20.0], allow_negative_numbers = true)]
    m_range: Vec<f64>,
    #[arg(long, default_value_t = 21)]
    m_count: usize,
    /// Exclude the upper end of the m range.
    #[arg(long)]
    half_open: bool,
    #[arg(long, num_args = 2, default_values_t = [-20.0, 20.0], allow_negative_numbers = true)]
    t3_range: Vec<f64>,
    #[arg(long, default_value_t = 21)]
    t3_count: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    t1x: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    t1y: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    t2: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    eta: f64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WalkArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, default_value_t = 101)]
    lattice: usize,
    #[arg(long, default_value = "momentum")]
    domain: String,
    #[arg(long, default_value_t = crate::data::DEFAULT_FILL)]
    fill: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Apply the default detector noise.
    #[arg(long)]
    noisy: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Samples per class for the configured labels.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct NoiseArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    psf: Option<f64>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// mlp, cnn or dnn.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Seed for the stratified split when the manifest has none.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Also fit a self-organizing map on the learned features.
    #[arg(long)]
    som: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// test, val, train or all.
    #[arg(long, default_value = "test")]
    subset: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ShiftArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Comma-separated list of eta values.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    eta: Option<Vec<f64>>,
    /// Label the grids with a trained model as well as the oracle.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Use network features instead of raw inputs.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Sample file or SOM checkpoint.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Chern(a) => cmd_chern(&a),
        Command::PhaseDiagram(a) => cmd_phase_diagram(&a),
        Command::Walk(a) => cmd_walk(&a),
        Command::GenDataset(a) => cmd_gen_dataset(&a),
        Command::AddNoise(a) => cmd_add_noise(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::BoundaryShift(a) => cmd_boundary_shift(&a),
        Command::Pca(a) => cmd_pca(&a),
        Command::ExportImage(a) => cmd_export_image(&a),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_chern(a: &ChernArgs) -> Result<()> {
    let p = a.params.params();
    let link = chern_link(&p, BzGrid::new(a.n)?)?;
    let quad = chern_quadrature(&p, BzGrid::new(a.quad_n)?)?;
    println!("C={}", link.value);
    println!("link_raw={:.6}", link.raw);
    println!("quadrature_raw={:.6}", quad.raw);
    println!("min_gap={:.6e}", link.min_gap.min(quad.min_gap));
    Ok(())
}

fn cmd_phase_diagram(a: &PhaseArgs) -> Result<()> {
    let m_axis = if a.half_open {
        linspace_half_open(a.m_range[0], a.m_range[1], a.m_count)
    } else {
        linspace(a.m_range[0], a.m_range[1], a.m_count)
    };
    let t3_axis = linspace(a.t3_range[0], a.t3_range[1], a.t3_count);
    let base = CouplingParams {
        m: 0.0,
        t1x: a.t1x,
        t1y: a.t1y,
        t2: a.t2,
        t3: 0.0,
        eta: a.eta,
    };
    base.validate()?;
    let d = phase_diagram(&base, &m_axis, &t3_axis, BzGrid::new(a.n)?)?;
    match &a.out {
        Some(path) => write_text(path, &(d.to_json() + "\n")),
        None => {
            println!("{}", d.to_json());
            Ok(())
        }
    }
}

fn cmd_walk(a: &WalkArgs) -> Result<()> {
    let p = a.params.params();
    p.validate()?;
    let lat = Lattice::new(a.lattice)?;
    let mut opts = GenerateOptions::new(parse_domain(&a.domain)?, a.seed);
    opts.fill = a.fill;
    opts.noise = a.noisy.then(NoiseSpec::default);
    let label = chern_link(&p, opts.label_grid)?.value;
    let s = simulate_sample(&p, lat, &opts, label, a.seed)?;
    write_sample(&s, &a.out)?;
    println!(
        "C={} t={:.4} domain={} l={}",
        label,
        s.time,
        s.profile.domain.name(),
        a.lattice
    );
    Ok(())
}

fn cmd_gen_dataset(a: &GenArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(n) = a.per_class {
        cfg.counts.values_mut().for_each(|c| *c = n);
    }
    cfg.validate()?;
    let grid = BzGrid::new(cfg.grid)?;
    let drawn = sample_classes(&cfg.region, &cfg.counts, &cfg.base, grid, cfg.seed)?;
    let params: Vec<CouplingParams> = drawn.iter().map(|(p, _)| *p).collect();
    let opts = GenerateOptions {
        domain: cfg.domain,
        fill: cfg.fill,
        noise: cfg.noise.clone(),
        global_seed: cfg.seed,
        label_grid: grid,
        region: Some(cfg.region.clone()),
    };
    let manifest = generate_dataset(&params, Lattice::new(cfg.lattice)?, &a.out, &opts)?;
    cfg.echo(&a.out)?;
    print_counts(&manifest);
    Ok(())
}

fn print_counts(m: &DatasetManifest) {
    for (label, n) in m.class_counts() {
        println!("C={label}: {n}");
    }
    println!("total: {}", m.samples.len());
}

fn cmd_add_noise(a: &NoiseArgs) -> Result<()> {
    let src = DatasetManifest::read(&a.dataset)?;
    let mut spec = NoiseSpec::default();
    if let Some(v) = a.sigma {
        spec.gaussian_sigma = v;
    }
    if let Some(v) = a.psf {
        spec.psf_sigma = v;
    }
    if let Some(v) = a.shots {
        spec.shots = v;
    }
    spec.validate()?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let lat = Lattice::new(src.lattice)?;
    (0..src.samples.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let entry = &src.samples[i];
        let s = read_sample(&crate::data::resolve(&a.dataset, entry))?;
        let seed = rng::derive_seed(a.seed, i as u64);
        let profile = match s.profile.domain {
            Domain::Momentum => add_momentum_noise(&s.profile, &spec, seed)?,
            Domain::Position => {
                let field = to_position(&evolve_momentum(&s.params, lat, s.time)?)?;
                add_position_noise(&field, &spec, seed)?
            }
        };
        write_sample(&Sample::new(profile, s.chern, s.seed), &a.out.join(&entry.file))
    })?;
    let mut out = src.clone();
    out.noise = Some(spec);
    out.write(&a.out)?;
    print_counts(&out);
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let m = DatasetManifest::read(&a.dataset)?;
    let out = split(&m, [a.ratios[0], a.ratios[1], a.ratios[2]], a.seed)?;
    out.write(&a.dataset)?;
    let s = out.split.as_ref().expect("split sets indices");
    println!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len());
    Ok(())
}

fn load_dataset(dir: &Path, split_seed: u64, ratios: [f64; 3]) -> Result<(DatasetManifest, Dataset)> {
    let mut m = DatasetManifest::read(dir)?;
    if m.split.is_none() {
        m = split(&m, ratios, split_seed)?;
    }
    let data = Dataset::from_samples(&m.load_all(dir)?)?;
    Ok((m, data))
}

#[derive(Debug, Serialize)]
struct TrainReport<'a> {
    arch: &'a str,
    param_count: usize,
    best_iteration: usize,
    loss_curve: &'a [f64],
    validation: &'a [crate::learn::ValidationPoint],
    val: &'a crate::learn::Metrics,
    test: Option<crate::learn::Metrics>,
}

#[derive(Debug, Serialize)]
struct SomAssignment {
    index: usize,
    label: i32,
    row: usize,
    col: usize,
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(v) = &a.arch {
        cfg.arch = v.clone();
    }
    if let Some(v) = a.iters {
        cfg.train.iters = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch = v;
    }
    if let Some(v) = a.split_seed {
        cfg.split_seed = v;
    }
    if a.som && cfg.som.is_none() {
        cfg.som = Some(SomConfig::default());
    }
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    let arch: Architecture = cfg.arch.parse()?;

    let (manifest, data) = load_dataset(&a.dataset, cfg.split_seed, cfg.split_ratios)?;
    let sp = manifest.split.as_ref().expect("dataset is split");
    let model = NetworkModel::build(arch, &data.item_shape, data.classes(), cfg.seed)?;
    let outcome = train_supervised(model, &cfg.train, &data.subset(&sp.train), &data.subset(&sp.val))?;
    let test = if sp.test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &data.subset(&sp.test))?)
    };

    cfg.echo(&a.out)?;
    outcome.model.save(&a.out.join(MODEL_FILE))?;
    let report = TrainReport {
        arch: &cfg.arch,
        param_count: outcome.model.param_count(),
        best_iteration: outcome.best_iteration,
        loss_curve: &outcome.loss_curve,
        validation: &outcome.validation,
        val: &outcome.metrics,
        test: test.clone(),
    };
    write_json(&a.out.join(METRICS_FILE), &report)?;
    println!(
        "best iteration {} val accuracy {:.4}{}",
        outcome.best_iteration,
        outcome.metrics.overall,
        test.as_ref()
            .map_or(String::new(), |t| format!(" test accuracy {:.4}", t.overall))
    );

    if let Some(sc) = &cfg.som {
        let features = dataset_features(&outcome.model, &data)?;
        let train_feats: Vec<Vec<f64>> = sp.train.iter().map(|&i| features[i].clone()).collect();
        let mut state = SomState::new(sc.height, sc.width, features[0].len(), sc.iters)?;
        state.initialize(&train_feats, rng::derive_seed(cfg.seed, 2))?;
        let state = som_fit(&train_feats, &state, rng::derive_seed(cfg.seed, 3))?;
        state.save(&a.out.join(SOM_FILE))?;
        let assignments = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let (row, col) = som_assign(&state, f)?;
                Ok(SomAssignment {
                    index: i,
                    label: data.labels[i],
                    row,
                    col,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_json(&a.out.join("som_assignments.json"), &assignments)?;
        println!(
            "som {}x{} fitted on {} features",
            sc.height,
            sc.width,
            train_feats.len()
        );
    }
    Ok(())
}

fn dataset_features(model: &NetworkModel, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let f: Tensor = model.features(&data.batch(chunk))?;
        out.extend(f.data.chunks(f.item_len()).map(|c| c.to_vec()));
    }
    Ok(out)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = NetworkModel::load(&a.model)?;
    let (manifest, data) = load_dataset(&a.dataset, 0, [0.8, 0.1, 0.1])?;
    let sp = manifest.split.as_ref().expect("dataset is split");
    let indices: Vec<usize> = match a.subset.as_str() {
        "test" => sp.test.clone(),
        "val" => sp.val.clone(),
        "train" => sp.train.clone(),
        "all" => (0..data.len()).collect(),
        s => {
            return Err(Error::InvalidParameter(format!(
                "unknown subset {s:?} (test, val, train, all)"
            )))
        }
    };
    let subset = data.subset(&indices);
    let metrics = evaluate(&model, &subset)?;
    let region = manifest.region.as_ref().map_or("whole".to_string(), |r| {
        serde_json::to_value(r.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    });
    let entry = TableEntry {
        region,
        domain: manifest.domain.name().into(),
        noise: if manifest.noise.is_some() {
            "noisy".into()
        } else {
            "clean".into()
        },
        runs: vec![metrics.clone()],
    };
    let table = accuracy_table(&[entry], &[])?;
    print!("{}", table.render_text());
    if let Some(out) = &a.out {
        write_json(out, &metrics)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ShiftReport {
    eta: f64,
    oracle: BoundaryEstimate,
    oracle_relative: Option<BoundaryEstimate>,
    model: Option<BoundaryEstimate>,
    model_relative: Option<BoundaryEstimate>,
}

fn cmd_boundary_shift(a: &ShiftArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(v) = &a.eta {
        cfg.eta = v.clone();
    }
    cfg.validate()?;
    let grid = BzGrid::new(cfg.grid)?;
    let m_axis = linspace_half_open(cfg.shift_m_range[0], cfg.shift_m_range[1], cfg.shift_m_count);
    let t3_axis = linspace(cfg.shift_t3_range[0], cfg.shift_t3_range[1], cfg.shift_t3_count);
    let model = a.model.as_deref().map(NetworkModel::load).transpose()?;

    let label_grid = |eta: f64| -> Result<(PhaseDiagram, Option<PhaseDiagram>)> {
        let base = cfg.base.with_eta(eta);
        let oracle = phase_diagram(&base, &m_axis, &t3_axis, grid)?;
        let learned = match &model {
            Some(net) => Some(model_diagram(net, &oracle, &cfg)?),
            None => None,
        };
        Ok((oracle, learned))
    };
    let (zero_oracle, zero_model) = label_grid(0.0)?;
    let zero_oracle_scan = boundary_midpoints(&zero_oracle, None).ok();
    let zero_model_scan = zero_model.as_ref().and_then(|d| boundary_midpoints(d, None).ok());

    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &eta in &cfg.eta {
        let (oracle, learned) = label_grid(eta)?;
        let relative = |d: &PhaseDiagram, zero: &Option<crate::analysis::MidpointScan>| {
            let scan = boundary_midpoints(d, None).ok()?;
            boundary_shift_relative(&scan, zero.as_ref()?).ok()
        };
        match boundary_shift_analytic(&oracle) {
            Ok(est) => reports.push(ShiftReport {
                eta,
                oracle_relative: relative(&oracle, &zero_oracle_scan),
                model: learned.as_ref().and_then(|d| boundary_shift_analytic(d).ok()),
                model_relative: learned.as_ref().and_then(|d| relative(d, &zero_model_scan)),
                oracle: est,
            }),
            Err(e) => failures.push(format!("eta={eta}: {e}")),
        }
    }
    if reports.is_empty() {
        return Err(Error::NoTransition {
            m: m_axis.first().copied().unwrap_or(f64::NAN),
        });
    }

    let mut text = String::new();
    for r in &reports {
        let cell = |e: &Option<BoundaryEstimate>| e.as_ref().map_or("-".to_string(), |e| format!("{:+.4}", e.shift));
        write!(
            text,
            "eta={:<6} oracle shift={:+.4} ± {:.4} (rows used {}, skipped {}) relative={}",
            r.eta,
            r.oracle.shift,
            r.oracle.half_resolution_uncertainty,
            r.oracle.per_m.len(),
            r.oracle.skipped.len(),
            cell(&r.oracle_relative)
        )
        .unwrap();
        if model.is_some() {
            write!(
                text,
                "  model shift={} relative={}",
                cell(&r.model),
                cell(&r.model_relative)
            )
            .unwrap();
        }
        text.push('\n');
    }
    for f in &failures {
        writeln!(text, "{f}").unwrap();
    }
    cfg.echo(&a.out)?;
    write_json(&a.out.join("boundary_shift.json"), &reports)?;
    write_text(&a.out.join("boundary_shift.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Relabels an oracle grid with a network's predictions on freshly simulated
/// samples whose lattice and domain follow the network's input shape.
fn model_diagram(net: &NetworkModel, oracle: &PhaseDiagram, cfg: &RunConfig) -> Result<PhaseDiagram> {
    let (domain, side) = match net.input_shape.as_slice() {
        [4, h, _] => (Domain::Momentum, *h),
        [1, h, _] => (Domain::Position, *h),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "cannot infer a walk domain from input shape {s:?}"
            )))
        }
    };
    let lat = Lattice::new(side)?;
    let mut opts = GenerateOptions::new(domain, cfg.seed);
    opts.fill = cfg.fill;
    opts.noise = cfg.noise.clone();
    let cols = oracle.t3_axis.len();
    let samples = (0..oracle.m_axis.len() * cols)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / cols, idx % cols);
            let p = oracle.params_at(i, j);
            simulate_sample(
                &p,
                lat,
                &opts,
                oracle.labels[i][j],
                rng::derive_seed(cfg.seed, idx as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (predicted, _, _) = predict(net, &Dataset::from_samples(&samples)?)?;
    Ok(PhaseDiagram {
        labels: predicted.chunks(cols).map(|r| r.to_vec()).collect(),
        ..oracle.clone()
    })
}

#[derive(Debug, Serialize)]
struct PcaReport {
    source: &'static str,
    labels: Vec<i32>,
    #[serde(flatten)]
    result: crate::learn::PcaResult,
}

fn cmd_pca(a: &PcaArgs) -> Result<()> {
    let m = DatasetManifest::read(&a.dataset)?;
    let data = Dataset::from_samples(&m.load_all(&a.dataset)?)?;
    let (rows, source) = match &a.model {
        Some(path) => (dataset_features(&NetworkModel::load(path)?, &data)?, "features"),
        None => {
            let len = data.item_shape.iter().product::<usize>();
            (data.inputs.chunks(len).map(|c| c.to_vec()).collect(), "inputs")
        }
    };
    let d = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.concat();
    let result = pca(&flat, rows.len(), d, a.k)?;
    for (i, r) in result.explained_variance_ratio.iter().enumerate() {
        println!("PC{}: {:.4}", i + 1, r);
    }
    write_json(
        &a.out,
        &PcaReport {
            source,
            labels: data.labels.clone(),
            result,
        },
    )
}

fn cmd_export_image(a: &ExportArgs) -> Result<()> {
    let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let context = a.input.display().to_string();
    let written = if bytes.starts_with(SAMPLE_MAGIC) {
        let s = crate::data::decode_sample(&bytes, &context)?;
        export_sample(&s, &a.out)?
    } else if bytes.starts_with(SOM_MAGIC) {
        let som = SomState::from_bytes(&bytes, &context)?;
        let rgb = som_rgb(&som)?;
        write_ppm(&a.out, som.width, som.height, &rgb)?;
        vec![a.out.clone()]
    } else {
        return Err(Error::BadMagic { context });
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn export_sample(s: &Sample, out: &Path) -> Result<Vec<PathBuf>> {
    let p = &s.profile;
    let (w, h) = (p.width, p.height);
    match p.domain {
        Domain::Position => {
            write_ppm(out, w, h, &gray_rgb(&normalize(p.plane(0))))?;
            Ok(vec![out.to_path_buf()])
        }
        Domain::Momentum => {
            let up = suffixed(out, "up");
            let down = suffixed(out, "down");
            let phase = suffixed(out, "phase");
            write_ppm(&up, w, h, &gray_rgb(&normalize(p.plane(0))))?;
            write_ppm(&down, w, h, &gray_rgb(&normalize(p.plane(1))))?;
            let rgb: Vec<u8> = p
                .plane(2)
                .iter()
                .zip(p.plane(3))
                .flat_map(|(c, s)| {
                    let hue = (f64::from(*s).atan2(f64::from(*c)) / std::f64::consts::TAU).rem_euclid(1.0);
                    hue_rgb(hue)
                })
                .collect();
            write_ppm(&phase, w, h, &rgb)?;
            Ok(vec![up, down, phase])
        }
    }
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    let ext = path
        .extension()
        .map_or_else(|| "ppm".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_{tag}.{ext}"))
}

/// Min-max scaling to `0..=255`; a constant plane maps to zero.
fn normalize(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let span = hi - lo;
    values
        .iter()
        .map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

fn gray_rgb(gray: &[u8]) -> Vec<u8> {
    gray.iter().flat_map(|g| [*g; 3]).collect()
}

fn hue_rgb(h: f64) -> [u8; 3] {
    let x = h * 6.0;
    let f = x - x.floor();
    let (r, g, b) = match x.floor() as i32 % 6 {
        0 => (1.0, f, 0.0),
        1 => (1.0 - f, 1.0, 0.0),
        2 => (0.0, 1.0, f),
        3 => (0.0, 1.0 - f, 1.0),
        4 => (f, 0.0, 1.0),
        _ => (1.0, 0.0, 1.0 - f),
    };
    [r, g, b].map(|c: f64| (c * 255.0).round() as u8)
}

/// Codebook vectors projected on their leading principal axes, one axis per
/// colour channel.
fn som_rgb(som: &SomState) -> Result<Vec<u8>> {
    let n = som.height * som.width;
    let max_k = 3.min(som.dim).min(n.saturating_sub(1).max(1));
    let mut channels: Vec<Vec<f32>> = vec![vec![0.0; n]; 3];
    let fitted = (1..=max_k).rev().find_map(|k| pca(&som.codebook, n, som.dim, k).ok());
    if let Some(res) = fitted {
        for (i, proj) in res.projections.iter().enumerate() {
            for (c, v) in proj.iter().enumerate() {
                channels[c][i] = *v as f32;
            }
        }
    }
    let planes: Vec<Vec<u8>> = channels.iter().map(|c| normalize(c)).collect();
    Ok((0..n)
        .flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]])
        .collect())
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::LengthMismatch(rgb.len(), width * height * 3));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
