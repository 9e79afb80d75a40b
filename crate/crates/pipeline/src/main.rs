use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use partctx::combine::{fit_weights, MixingWeights, ScoredCandidate};
use partctx::config::RunConfig;
use partctx::context::{assign_supports, initial_scores, train_combiner, ContextCombinerParams};
use partctx::data::{
    apply_catalog, build_prior, load_dataset, preprocess_catalog, write_dataset, Dataset,
    PartClassCatalog, PriorModel,
};
use partctx::detect::{
    build_object_detections, compose_detections, rl_scores, write_rl_heatmap, ObjectDetectionSet,
    PartDetection,
};
use partctx::eval::{coverage, evaluate, part_gts_by_class, report_table, write_pr_csv};
use partctx::schema;
use partctx::synth::{generate, SynthConfig};
use partctx::train::{train_offset_regressor, TrainedOffsetRegressor};

const CONFIG_FILE: &str = "config.json";
const CATALOG_FILE: &str = "catalog.json";
const PRIORS_FILE: &str = "priors.json";
const REGRESSOR_FILE: &str = "regressor.json";
const COMBINER_FILE: &str = "combiner.json";
const INITIAL_SCORES_FILE: &str = "initial_scores.json";
const RL_SCORES_FILE: &str = "rl_scores.json";
const OBJECT_DETECTIONS_FILE: &str = "object_detections.json";
const MIX_WEIGHTS_FILE: &str = "mix_weights.json";
const DETECTIONS_FILE: &str = "detections.jsonl";
const EVAL_JSON_FILE: &str = "eval.json";
const EVAL_TABLE_FILE: &str = "eval.txt";
const COVERAGE_FILE: &str = "coverage.json";

#[derive(Parser)]
#[command(name = "partctx", about = "object-context part detection pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// run configuration file; defaults apply when absent
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    score_floor: Option<f64>,
    #[arg(long)]
    grid_step: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).context("loading run configuration")?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.regressor.seed = seed;
        }
        if let Some(v) = self.nms_iou {
            cfg.nms_iou = v;
        }
        if let Some(v) = self.score_floor {
            cfg.score_floor = v;
        }
        if let Some(v) = self.grid_step {
            cfg.grid_step = v;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark dataset
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        num_images: usize,
        /// appearance score noise level
        #[arg(long, default_value_t = 0.4)]
        sigma_app: f64,
        /// full generator configuration; overrides the flags above
        #[arg(long)]
        synth_config: Option<PathBuf>,
    },
    /// Resolve part-class merges and drop tiny or rare classes
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON object mapping raw class names to merge targets
        #[arg(long)]
        merges: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Build spatial priors and estimate mode counts per part class
    Priors {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the offset regressor
    TrainRegressor {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the context combiner for initial part scores
    TrainCombiner {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score part proposals: initial scores, object detections, location scores
    Score {
        #[arg(long)]
        data: PathBuf,
        /// directory holding the trained models
        #[arg(long)]
        run: PathBuf,
        /// where score artifacts land; defaults to the run directory
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Fit per-class mixing weights on scored training data
    FitMix {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// directory holding score artifacts; defaults to the run directory
        #[arg(long)]
        scores: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compose final part detections
    Detect {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate detections against ground truth
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// detections file; defaults to the run directory's
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// restrict ground truth to parts of occluded objects
        #[arg(long)]
        occluded_only: bool,
        /// also emit object-centric coverage metrics
        #[arg(long)]
        coverage: bool,
        /// write precision/recall curves as CSV
        #[arg(long)]
        pr_csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render a location-score heatmap for one image and part class as PGM
    Heatmap {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        image: u64,
        #[arg(long)]
        class: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn save_config(cfg: &RunConfig, dir: &Path) -> anyhow::Result<()> {
    ensure_dir(dir)?;
    cfg.save(&dir.join(CONFIG_FILE)).context("writing effective configuration")?;
    Ok(())
}

fn load_catalog(run: &Path) -> anyhow::Result<PartClassCatalog> {
    schema::read_json(&run.join(CATALOG_FILE)).context("loading part-class catalog")
}

fn load_priors(run: &Path) -> anyhow::Result<PriorModel> {
    schema::read_json(&run.join(PRIORS_FILE)).context("loading spatial priors")
}

fn score_artifacts(
    dir: &Path,
) -> anyhow::Result<(
    BTreeMap<u64, BTreeMap<String, f64>>,
    BTreeMap<u64, BTreeMap<String, f64>>,
    ObjectDetectionSet,
)> {
    let initial = schema::read_json(&dir.join(INITIAL_SCORES_FILE)).context("loading initial scores")?;
    let rl = schema::read_json(&dir.join(RL_SCORES_FILE)).context("loading location scores")?;
    let dets: Vec<partctx::detect::DetectedObject> =
        schema::read_json(&dir.join(OBJECT_DETECTIONS_FILE)).context("loading object detections")?;
    let features: BTreeMap<u64, Vec<f64>> =
        schema::read_json(&dir.join(OBJECT_DETECTIONS_FILE).with_extension("features.json"))
            .context("loading object detection features")?;
    let mut set = ObjectDetectionSet { features, ..Default::default() };
    for d in dets {
        set.by_image.entry(d.image_id).or_default().push(d);
    }
    Ok((initial, rl, set))
}

fn run_score(data: &Path, run: &Path, out: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let dataset = load_dataset(data)?;
    let catalog = load_catalog(run)?;
    let priors = load_priors(run)?;
    let combiner: ContextCombinerParams =
        schema::read_json(&run.join(COMBINER_FILE)).context("loading combiner")?;
    let net: TrainedOffsetRegressor =
        schema::read_json(&run.join(REGRESSOR_FILE)).context("loading offset regressor")?;

    let assignments = assign_supports(&dataset, cfg.containment);
    let initial = initial_scores(&dataset, &assignments, &combiner, &catalog);
    let detections = build_object_detections(&dataset, cfg.nms_iou, cfg.score_floor);
    let rl = rl_scores(&dataset, &detections, &net, &priors)?;

    ensure_dir(out)?;
    schema::write_json(&out.join(INITIAL_SCORES_FILE), &initial)?;
    schema::write_json(&out.join(RL_SCORES_FILE), &rl)?;
    let flat: Vec<&partctx::detect::DetectedObject> = detections.all().collect();
    schema::write_json(&out.join(OBJECT_DETECTIONS_FILE), &flat)?;
    schema::write_json(
        &out.join(OBJECT_DETECTIONS_FILE).with_extension("features.json"),
        &detections.features,
    )?;
    save_config(cfg, out)?;
    Ok(())
}

fn candidates_by_class(
    dataset: &Dataset,
    initial: &BTreeMap<u64, BTreeMap<String, f64>>,
    rl: &BTreeMap<u64, BTreeMap<String, f64>>,
) -> BTreeMap<String, Vec<ScoredCandidate>> {
    let mut out: BTreeMap<String, Vec<ScoredCandidate>> = BTreeMap::new();
    for proposal in &dataset.part_proposals {
        let Some(row) = initial.get(&proposal.id) else { continue };
        for (class, &init) in row {
            let rl_score = rl.get(&proposal.id).and_then(|r| r.get(class)).copied().unwrap_or(0.0);
            out.entry(class.clone()).or_default().push(ScoredCandidate {
                image_id: proposal.image_id,
                bbox: proposal.bbox,
                initial: init,
                rl: rl_score,
            });
        }
    }
    out
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::SynthGen { out, seed, num_images, sigma_app, synth_config } => {
            let config = match synth_config {
                Some(path) => schema::read_json(&path).context("loading generator configuration")?,
                None => SynthConfig::benchmark(seed, num_images, sigma_app),
            };
            let (dataset, manifest) = generate(&config)?;
            write_dataset(&out, &dataset)?;
            schema::write_jsonl(&out.join(schema::MANIFEST_FILE), &manifest)?;
            schema::write_json(&out.join("synth_config.json"), &config)?;
            println!("wrote {} images to {}", dataset.images.len(), out.display());
        }
        Command::Preprocess { data, out, merges, config } => {
            let cfg = config.resolve()?;
            let dataset = load_dataset(&data)?;
            let merge_table: BTreeMap<String, String> = match merges {
                Some(path) => schema::read_json(&path).context("loading merge table")?,
                None => BTreeMap::new(),
            };
            let catalog =
                preprocess_catalog(&dataset, &merge_table, cfg.min_part_size, cfg.min_part_count)?;
            let processed = apply_catalog(&dataset, &catalog);
            write_dataset(&out, &processed)?;
            schema::write_json(&out.join(CATALOG_FILE), &catalog)?;
            save_config(&cfg, &out)?;
            let kept = catalog.kept().count();
            println!("kept {kept} of {} part classes", catalog.entries.len());
        }
        Command::Priors { data, run, config } => {
            let cfg = config.resolve()?;
            let dataset = load_dataset(&data)?;
            let catalog = load_catalog(&run)?;
            let mut priors = PriorModel::default();
            for entry in catalog.kept() {
                priors.entries.push(build_prior(&dataset, &catalog, &entry.name, cfg.prior_grid, None)?);
            }
            ensure_dir(&run)?;
            schema::write_json(&run.join(PRIORS_FILE), &priors)?;
            save_config(&cfg, &run)?;
            for e in &priors.entries {
                println!("{}: {} modes over {} instances", e.part_class, e.mode_count, e.instance_count);
            }
        }
        Command::TrainRegressor { data, run, config } => {
            let cfg = config.resolve()?;
            let dataset = load_dataset(&data)?;
            let priors = load_priors(&run)?;
            let net = train_offset_regressor(&dataset, &priors, &cfg.regressor)?;
            schema::write_json(&run.join(REGRESSOR_FILE), &net)?;
            save_config(&cfg, &run)?;
            println!("trained offset regressor for {} part classes", net.class_names.len());
        }
        Command::TrainCombiner { data, run, config } => {
            let cfg = config.resolve()?;
            let dataset = load_dataset(&data)?;
            let catalog = load_catalog(&run)?;
            let assignments = assign_supports(&dataset, cfg.containment);
            let combiner = train_combiner(&dataset, &assignments, &catalog)?;
            schema::write_json(&run.join(COMBINER_FILE), &combiner)?;
            save_config(&cfg, &run)?;
            println!("trained combiner for {} part classes", combiner.classes.len());
        }
        Command::Score { data, run, out, config } => {
            let cfg = config.resolve()?;
            let out = out.unwrap_or_else(|| run.clone());
            run_score(&data, &run, &out, &cfg)?;
            println!("scores written to {}", out.display());
        }
        Command::FitMix { data, run, scores, config } => {
            let cfg = config.resolve()?;
            let scores_dir = scores.unwrap_or_else(|| run.clone());
            let dataset = load_dataset(&data)?;
            let (initial, rl, _) = score_artifacts(&scores_dir)?;
            let candidates = candidates_by_class(&dataset, &initial, &rl);
            let gts = part_gts_by_class(&dataset, false)?;
            let weights = fit_weights(&candidates, &gts, cfg.grid_step, cfg.nms_iou);
            schema::write_json(&run.join(MIX_WEIGHTS_FILE), &weights)?;
            save_config(&cfg, &run)?;
            for (class, alpha) in &weights.alphas {
                println!("{class}: location weight {alpha:.2}");
            }
        }
        Command::Detect { data, run, scores, out, config } => {
            let cfg = config.resolve()?;
            let scores_dir = scores.unwrap_or_else(|| run.clone());
            let out = out.unwrap_or_else(|| run.clone());
            let dataset = load_dataset(&data)?;
            let (initial, rl, detections) = score_artifacts(&scores_dir)?;
            let weights: MixingWeights =
                schema::read_json(&run.join(MIX_WEIGHTS_FILE)).context("loading mixing weights")?;
            let final_dets = compose_detections(
                &dataset,
                &initial,
                &rl,
                &weights,
                &detections,
                cfg.nms_iou,
                cfg.containment,
            );
            ensure_dir(&out)?;
            schema::write_jsonl(&out.join(DETECTIONS_FILE), &final_dets)?;
            save_config(&cfg, &out)?;
            println!("{} part detections written to {}", final_dets.len(), out.display());
        }
        Command::Eval { data, run, detections, out, occluded_only, coverage: want_coverage, pr_csv, config } => {
            let cfg = config.resolve()?;
            let out = out.unwrap_or_else(|| run.clone());
            let dataset = load_dataset(&data)?;
            let det_path = detections.unwrap_or_else(|| run.join(DETECTIONS_FILE));
            let dets: Vec<PartDetection> = schema::read_jsonl(&det_path)?;
            let gts = part_gts_by_class(&dataset, occluded_only)?;
            let report = evaluate(&dets, &gts, cfg.eval_iou);
            ensure_dir(&out)?;
            schema::write_json(&out.join(EVAL_JSON_FILE), &report)?;
            let table = report_table(&report);
            std::fs::write(out.join(EVAL_TABLE_FILE), &table)
                .with_context(|| format!("writing {}", out.join(EVAL_TABLE_FILE).display()))?;
            if let Some(path) = pr_csv {
                write_pr_csv(&path, &report)?;
            }
            if want_coverage {
                let priors = load_priors(&run)?;
                let (_, _, object_dets) = score_artifacts(&run)?;
                let cov = coverage(&dataset, &priors, &dets, &object_dets, cfg.eval_iou, occluded_only)?;
                schema::write_json(&out.join(COVERAGE_FILE), &cov)?;
            }
            print!("{table}");
        }
        Command::Heatmap { data, run, image, class, out, grid, config } => {
            let cfg = config.resolve()?;
            if grid == 0 {
                bail!("grid must be positive");
            }
            let dataset = load_dataset(&data)?;
            let priors = load_priors(&run)?;
            let net: TrainedOffsetRegressor =
                schema::read_json(&run.join(REGRESSOR_FILE)).context("loading offset regressor")?;
            let detections = build_object_detections(&dataset, cfg.nms_iou, cfg.score_floor);
            write_rl_heatmap(&out, &dataset, image, &class, &detections, &net, &priors, grid)?;
            println!("heatmap written to {}", out.display());
        }
    }
    Ok(())
}
