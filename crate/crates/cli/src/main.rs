use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mudloc::csi::{amplitude_image, phase_difference_image, AntennaLayout, PhaseCentering};
use mudloc::dataset::{Split, SplitRatios};
use mudloc::io::{prepare_output, read_dataset, read_json, write_cdf_csv, write_dataset, write_json, write_matrix_csv};
use mudloc::localizer::{
    evaluate, select_beta, train_features, FeatureBank, LocalizerConfig, Method, ModalitySelection, TrainedLocalizer,
    DEFAULT_BETA_GRID,
};
use mudloc::subspace::{CouplingMode, Retention};
use mudloc::synth::{make_benchmark, ChannelScenario};

pub const MODEL_FILE: &str = "model.json";
pub const REPORT_FILE: &str = "report.json";
pub const CDF_FILE: &str = "cdf.csv";

#[derive(Parser, Debug)]
#[command(name = "mudloc", version, about = "Multi-view CSI fingerprinting: synthesize, train, evaluate")]
struct Cli {
    /// Worker threads for parallel stages (default: available cores).
    #[arg(long, global = true, env = "MUDLOC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark dataset.
    Synth(SynthArgs),
    /// Fit a localizer on the training split.
    Train(TrainCmd),
    /// Score a localizer on the test split.
    Evaluate(EvaluateCmd),
    /// Write the feature images of one cell and AP as CSV.
    ExportFeatures(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    cells: usize,
    #[arg(long, default_value_t = 3)]
    aps: usize,
    #[arg(long, default_value_t = 300)]
    packets: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Receiver SNR in dB.
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr_db: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Gi2dca,
    Gma,
    Mcca,
    CcaPairwise,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModalityArg {
    Amp,
    Phase,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CouplingArg {
    ClassBlocks,
    Identity,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Gi2dca)]
    method: MethodArg,
    /// Fixed inter-view weight; skips cross validation.
    #[arg(long, conflicts_with = "beta_grid")]
    beta: Option<f64>,
    /// Candidate inter-view weights for cross validation.
    #[arg(long, value_delimiter = ',')]
    beta_grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Retained dimension (default: automatic).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_enum, default_value_t = CouplingArg::ClassBlocks)]
    coupling: CouplingArg,
    #[arg(long, value_enum, default_value_t = ModalityArg::Both)]
    modality: ModalityArg,
    /// A view count `k` (APs 1..=k) or a comma-separated list of AP ids.
    #[arg(long)]
    views: Option<String>,
    /// Seed of the cross-validation folds.
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    #[arg(long)]
    data: PathBuf,
    /// Trained model file; without it a model is trained from the flags.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Packets averaged per estimate.
    #[arg(long, default_value_t = 1)]
    test_packets: usize,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    cell: u32,
    #[arg(long)]
    ap: u32,
    #[arg(long, value_enum, default_value_t = ModalityArg::Amp)]
    modality: ModalityArg,
    #[arg(long)]
    out: PathBuf,
}

fn parse_views(arg: &str) -> Result<Vec<u32>> {
    let parts: Vec<&str> = arg.split(',').map(str::trim).collect();
    if parts.len() == 1 {
        let k: u32 = parts[0].parse().with_context(|| format!("invalid view count {arg:?}"))?;
        return Ok((1..=k).collect());
    }
    parts
        .iter()
        .map(|p| p.parse::<u32>().with_context(|| format!("invalid AP id {p:?}")))
        .collect()
}

impl TrainArgs {
    fn config(&self) -> Result<LocalizerConfig> {
        Ok(LocalizerConfig {
            method: match self.method {
                MethodArg::Gi2dca => Method::Gi2dca,
                MethodArg::Gma => Method::Gma,
                MethodArg::Mcca => Method::Mcca,
                MethodArg::CcaPairwise => Method::PairwiseCca,
            },
            modality: match self.modality {
                ModalityArg::Amp => ModalitySelection::Amplitude,
                ModalityArg::Phase => ModalitySelection::Phase,
                ModalityArg::Both => ModalitySelection::Both,
            },
            views: match &self.views {
                Some(v) => parse_views(v)?,
                None => Vec::new(),
            },
            alpha: self.alpha,
            beta: self.beta.unwrap_or(1.0),
            gamma: self.gamma,
            coupling: match self.coupling {
                CouplingArg::ClassBlocks => CouplingMode::ClassBlocks,
                CouplingArg::Identity => CouplingMode::Identity,
            },
            retention: self.rank.map_or(Retention::Auto, Retention::Fixed),
            ..Default::default()
        })
    }

    /// Fits on the training split, choosing beta by cross validation
    /// unless it is fixed or unused by the method.
    fn fit(&self, data: &Path) -> Result<TrainedLocalizer> {
        let mut config = self.config()?;
        let dataset = read_dataset(data)?;
        let bank = FeatureBank::from_dataset(&dataset, config.phase_centering)?;
        if self.beta.is_none() && config.method.uses_beta() {
            let grid = self.beta_grid.clone().unwrap_or_else(|| DEFAULT_BETA_GRID.to_vec());
            let sel = select_beta(&bank, &dataset.manifest, &config, &grid, self.seed)?;
            eprintln!("cross-validated beta = {} over {:?}", sel.beta, grid);
            config.beta = sel.beta;
        }
        let views = config.view_ids(bank.n_aps())?;
        let features = bank.gather_split(&dataset.manifest, &[Split::Train], &views)?;
        Ok(train_features(&features, &dataset.manifest.grid, bank.shape(), &config)?)
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if !args.snr_db.is_finite() {
        bail!("--snr-db must be finite");
    }
    let mut scenario = ChannelScenario::reference(args.seed, args.cells, args.aps)?;
    scenario.noise_snr_db = Some(args.snr_db);
    let dataset = make_benchmark(&scenario, args.packets)?;
    write_dataset(&args.out, &dataset)?;
    let m = &dataset.manifest;
    let split = SplitRatios::default().counts(args.packets);
    println!(
        "dataset {}: {} cells, {} APs, {} packets per cell (train/val/test {}/{}/{}), S={} L={}",
        args.out.display(),
        m.n_cells,
        m.n_aps,
        args.packets,
        split[0],
        split[1],
        split[2],
        m.n_subcarriers,
        m.n_pairs()
    );
    Ok(())
}

fn cmd_train(args: &TrainCmd) -> Result<()> {
    let model = args.train.fit(&args.data)?;
    let path = prepare_output(&args.out, MODEL_FILE)?;
    write_json(&path, &model)?;
    println!(
        "model {}: method {}, views {:?}, beta {}",
        path.display(),
        model.config.method.name(),
        model.view_ids,
        model.beta_selected
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateCmd) -> Result<()> {
    let model: TrainedLocalizer = match &args.model {
        Some(p) => read_json(p)?,
        None => args.train.fit(&args.data)?,
    };
    let dataset = read_dataset(&args.data)?;
    let bank = FeatureBank::from_dataset(&dataset, model.config.phase_centering)?;
    let report = evaluate(&model, &bank, &dataset.manifest, args.test_packets)?;
    write_json(&prepare_output(&args.out, REPORT_FILE)?, &report)?;
    write_cdf_csv(&args.out.join(CDF_FILE), &report.scores.cdf)?;
    println!(
        "{} views {:?}: mean error {:.4} m, std {:.4} m, accuracy {:.4} over {} estimates",
        report.method,
        report.views,
        report.scores.mean_distance_error,
        report.scores.std_distance_error,
        report.scores.accuracy,
        report.scores.n_estimates
    );
    Ok(())
}

fn cmd_export(args: &ExportArgs) -> Result<()> {
    let dataset = read_dataset(&args.data)?;
    let cell_index = dataset
        .cell_ids()
        .iter()
        .position(|&c| c == args.cell)
        .with_context(|| format!("cell {} is not in the dataset", args.cell))?;
    if args.ap == 0 || args.ap as usize > dataset.n_aps() {
        bail!("AP {} not in 1..={}", args.ap, dataset.n_aps());
    }
    let trace = dataset.trace(cell_index, args.ap as usize - 1);
    let (image, tag) = match args.modality {
        ModalityArg::Amp => (amplitude_image(trace)?, "amp"),
        ModalityArg::Phase => {
            let m = &dataset.manifest;
            let layout = AntennaLayout::tx_major(m.n_tx, m.n_rx)?;
            (phase_difference_image(trace, &layout, PhaseCentering::default())?, "phase")
        }
        ModalityArg::Both => bail!("export one modality at a time (amp or phase)"),
    };
    let path = prepare_output(&args.out, &format!("features_cell{}_ap{}_{tag}.csv", args.cell, args.ap))?;
    write_matrix_csv(&path, &image.data)?;
    println!("{}: {}x{}", path.display(), image.data.nrows(), image.data.ncols());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::ExportFeatures(a) => cmd_export(a),
    }
}

/// The error chain on one line, skipping causes already quoted by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg.replace('\n', " ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("mudloc: error: {}", first.trim_start_matches("error: ").trim());
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mudloc: error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
