use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ahgc::data::{self, normalize_features, Dataset, SyntheticSpec};
use ahgc::decode::{assignment_from_csv, decode_graph};
use ahgc::error::{AhgcError, Result, StageContext};
use ahgc::hierarchy::{run_hierarchy, GatScorers};
use ahgc::knn::{build_knn_graph, AffinityGraph};
use ahgc::labeling::assign_labels;
use ahgc::metrics::{evaluate, scores_from_csv, scores_to_csv};
use ahgc::objectives::{ClassifierParams, InfoNceForm};
use ahgc::pipeline::{eval_samples, run_pipeline, score_dataset, write_training_artifacts, DataSource, PipelineConfig};
use ahgc::scorer::{forward, init_scorer, train_scorer, LinkageDensity};
use ahgc::seed;
use ahgc::training::run_training;

/// Hierarchical graph-cut pseudo-labeling and energy-based OOD scoring on
/// embedding vectors.
#[derive(Parser, Debug)]
#[command(name = "ahgc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark: dataset.csv, origin.csv, truth.csv.
    GenSynth {
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Build the level-0 cosine k-NN graph: graph.csv.
    BuildGraph {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Fit the level-0 linkage scorer on the labeled records:
    /// scorer.ckpt and scored_graph.csv.
    TrainScorer {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Cut a scored graph into subgraphs (`--graph`), or run the full
    /// hierarchy on a dataset (`--data` alone): partition.csv.
    Cut {
        /// Scored graph from `train-scorer`.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Dataset: maps node indices to record ids, or drives the hierarchy.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Assign pseudo-labels inside the subgraphs of a partition:
    /// labeled.csv and pseudo_labels.csv.
    AssignLabels {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long, default_value_t = 0)]
        epoch: usize,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Run the training loop: epochs.jsonl, pseudo_labels.csv, labeled.csv,
    /// hierarchy_trace.json, classifier.ckpt.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Energy scores of the unlabeled records: scores.csv.
    Score {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[command(flatten)]
        opts: Overrides,
    },
    /// Metric suite of a score file, printed as JSON.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        origin: PathBuf,
        /// Class of every ID record; enables CCR and accuracy.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Every stage end to end.
    Run {
        /// Generate the input instead of reading it. Only `default` is known.
        #[arg(long, conflicts_with = "data")]
        gen_synth: Option<String>,
        #[arg(long, required_unless_present = "gen_synth")]
        data: Option<PathBuf>,
        #[arg(long)]
        origin: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        opts: Overrides,
    },
}

#[derive(Args, Debug)]
struct OutDir {
    #[arg(long, env = "AHGC_OUT_DIR", default_value = "ahgc-out")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = SyntheticSpec::default().coarse_id_classes)]
    coarse_classes: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().fine_per_class)]
    fine_per_class: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().ood_clusters)]
    ood_clusters: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().points_per_cluster)]
    points_per_cluster: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::default().cluster_sep)]
    separation: f64,
    #[arg(long, default_value_t = SyntheticSpec::default().labeled_fraction)]
    labeled_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SynthArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            coarse_id_classes: self.coarse_classes,
            fine_per_class: self.fine_per_class,
            ood_clusters: self.ood_clusters,
            points_per_cluster: self.points_per_cluster,
            dim: self.dim,
            cluster_sep: self.separation,
            labeled_fraction: self.labeled_fraction,
            seed: self.seed,
        }
    }
}

/// Config file plus flag overrides. Flags win over the file.
#[derive(Args, Debug)]
struct Overrides {
    /// TOML file with `[training]` and `[scoring]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_target: Option<usize>,
    #[arg(long)]
    p_tau: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Derive the decision threshold from the labeled scores at this TPR.
    #[arg(long)]
    delta_tpr: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    max_levels: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    drop_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// `printed` or `split`.
    #[arg(long)]
    infonce_form: Option<InfoNceForm>,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        let t = &mut c.training;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(t.k, self.k);
        if self.k_target.is_some() {
            t.k_target = self.k_target;
        }
        set!(t.p_tau, self.p_tau);
        set!(t.rho, self.rho);
        set!(t.alpha, self.alpha);
        set!(t.beta, self.beta);
        set!(t.gamma, self.gamma);
        set!(t.max_levels, self.max_levels);
        set!(t.max_epochs, self.max_epochs);
        set!(t.lr, self.lr);
        set!(t.hidden_dim, self.hidden_dim);
        set!(t.noise_sigma, self.noise_sigma);
        set!(t.drop_prob, self.drop_prob);
        set!(t.seed, self.seed);
        set!(t.infonce_form, self.infonce_form);
        let s = &mut c.scoring;
        set!(s.temperature, self.temperature);
        set!(s.delta, self.delta);
        if self.delta_tpr.is_some() {
            s.delta_tpr = self.delta_tpr;
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self) -> Result<&Path> {
        create_dir(&self.out.out_dir)
    }
}

fn create_dir(dir: &Path) -> Result<&Path> {
    std::fs::create_dir_all(dir).map_err(|e| AhgcError::io(dir, e))?;
    Ok(dir)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| AhgcError::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AhgcError::io(path, e))
}

fn load_normalized(path: &Path) -> Result<Dataset> {
    normalize_features(&data::load_dataset(path)?)
}

fn ids(ds: &Dataset) -> Vec<u64> {
    ds.records.iter().map(|r| r.id).collect()
}

fn gen_synth(synth: &SynthArgs, out: &OutDir) -> Result<()> {
    let ds = data::gen_synthetic(&synth.spec())?;
    let dir = create_dir(&out.out_dir)?;
    data::save_dataset(&ds, &dir.join("dataset.csv"))?;
    data::save_origin(&ds, &dir.join("origin.csv"))?;
    data::save_truth(&ds, &dir.join("truth.csv"))
}

fn build_graph(data: &Path, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let ds = load_normalized(data).stage("data")?;
    let k = c.training.k.min(ds.len().saturating_sub(1));
    let graph = build_knn_graph(&ds.feature_matrix(), k).stage("graph")?;
    write(opts.out_dir()?.join("graph.csv"), &graph.to_csv(None))
}

fn train_scorer_cmd(data: &Path, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let ds = load_normalized(data).stage("data")?;
    let features = ds.feature_matrix();
    let t = &c.training;
    let graph = build_knn_graph(&features, t.k.min(ds.len().saturating_sub(1))).stage("graph")?;
    let init = init_scorer(ds.dim(), t.hidden_dim, seed::substream(t.seed, "scorer")).stage("scorer")?;
    let (params, _) = train_scorer(&init, &graph, &features, &ds.labels(), t.scorer_lr, t.scorer_steps).stage("scorer")?;
    let ld = forward(&params, &graph, &features).stage("scorer")?;
    let dir = opts.out_dir()?;
    params.to_tensor_file().save(&dir.join("scorer.ckpt"))?;
    write(dir.join("scored_graph.csv"), &graph.to_csv(Some(&ld.p)))
}

fn cut(graph: Option<&Path>, data: Option<&Path>, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let t = &c.training;
    let (partition, ids) = match (graph, data) {
        (Some(path), data) => {
            let (graph, p) = AffinityGraph::from_csv(&read(path)?, &path.display().to_string()).stage("graph")?;
            let p = p.ok_or_else(|| {
                AhgcError::Precondition(format!("{}: graph has no linkage column; run train-scorer first", path.display()))
            })?;
            let ids = match data {
                Some(d) => {
                    let ds = data::load_dataset(d).stage("data")?;
                    if ds.len() != graph.n {
                        return Err(AhgcError::DimensionMismatch {
                            expected: graph.n,
                            found: ds.len(),
                        });
                    }
                    Some(self::ids(&ds))
                }
                None => None,
            };
            let ld = LinkageDensity::from_linkage(&graph, p);
            (decode_graph(&graph, &ld, t.p_tau), ids)
        }
        (None, Some(d)) => {
            let ds = load_normalized(d).stage("data")?;
            let features = ds.feature_matrix();
            let mut scorers = GatScorers::new(
                init_scorer(ds.dim(), t.hidden_dim, seed::substream(t.seed, "scorer"))?,
                init_scorer(2 * ds.dim(), t.hidden_dim, seed::substream(t.seed, "scorer-lifted"))?,
                t.scorer_lr,
                t.scorer_steps,
                t.lifted_scorer_steps,
            );
            let result = run_hierarchy(&features, &ds.labels(), &t.hierarchy(ds.num_classes), &mut scorers)
                .stage("hierarchy")?;
            let mut trace = serde_json::to_string_pretty(&result.trace())?;
            trace.push('\n');
            write(opts.out_dir()?.join("hierarchy_trace.json"), &trace)?;
            (result.final_partition(), Some(self::ids(&ds)))
        }
        (None, None) => return Err(AhgcError::validation("graph", "give --graph or --data")),
    };
    write(opts.out_dir()?.join("partition.csv"), &partition.to_csv(ids.as_deref()))
}

fn assign(data: &Path, partition: &Path, epoch: usize, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let ds = data::load_dataset(data).stage("data")?;
    let map = assignment_from_csv(&read(partition)?, &partition.display().to_string()).stage("partition")?;
    let assignment = ds
        .records
        .iter()
        .map(|r| {
            map.get(&r.id)
                .copied()
                .ok_or_else(|| AhgcError::Precondition(format!("record {} missing from partition", r.id)))
        })
        .collect::<Result<Vec<usize>>>()?;
    let (labeled, _) = assign_labels(&assignment, &ds, c.training.rho, epoch).stage("labeling")?;
    let dir = opts.out_dir()?;
    data::save_dataset(&labeled, &dir.join("labeled.csv"))?;
    write(dir.join("pseudo_labels.csv"), &data::pseudo_labels_to_csv(&labeled))
}

fn train(data: &Path, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let ds = load_normalized(data).stage("data")?;
    let outcome = run_training(&ds, &c.training).stage("train")?;
    write_training_artifacts(&outcome, opts.out_dir()?).stage("train")
}

fn score(data: &Path, classifier: &Path, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let ds = load_normalized(data).stage("data")?;
    let params = ClassifierParams::from_tensor_file(&ahgc::checkpoint::TensorFile::load(classifier)?).stage("classifier")?;
    let scores = score_dataset(&params, &ds, &c.scoring).stage("score")?;
    write(opts.out_dir()?.join("scores.csv"), &scores_to_csv(&scores))
}

fn evaluate_cmd(scores: &Path, origin: &Path, truth: Option<&Path>) -> Result<()> {
    let rows = scores_from_csv(&read(scores)?, &scores.display().to_string()).stage("scores")?;
    let origin = data::load_origin(origin).stage("origin")?;
    let truth = truth.map(data::load_truth).transpose().stage("truth")?;
    let report = evaluate(&eval_samples(&rows, &origin, truth.as_ref())?).stage("evaluate")?;
    print!("{}", report.to_json());
    Ok(())
}

fn run(gen_synth: Option<&str>, data: Option<&Path>, origin: Option<&Path>, truth: Option<&Path>, opts: &Overrides) -> Result<()> {
    let c = opts.resolve().stage("config")?;
    let source = match (gen_synth, data) {
        (Some("default"), _) => DataSource::Synthetic(SyntheticSpec {
            seed: c.training.seed,
            ..SyntheticSpec::default()
        }),
        (Some(other), _) => {
            return Err(AhgcError::validation("gen_synth", format!("unknown preset `{other}`; expected `default`")))
        }
        (None, Some(d)) => DataSource::Files {
            data: d.to_path_buf(),
            origin: origin.map(Path::to_path_buf),
            truth: truth.map(Path::to_path_buf),
        },
        (None, None) => return Err(AhgcError::validation("data", "give --data or --gen-synth")),
    };
    let outcome = run_pipeline(&c, &source, &opts.out.out_dir)?;
    match &outcome.metrics {
        Some(m) => print!("{}", m.to_json()),
        None => eprintln!("no origin labels: metrics skipped"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth { synth, out } => gen_synth(synth, out).stage("gen-synth"),
        Command::BuildGraph { data, opts } => build_graph(data, opts),
        Command::TrainScorer { data, opts } => train_scorer_cmd(data, opts),
        Command::Cut { graph, data, opts } => cut(graph.as_deref(), data.as_deref(), opts),
        Command::AssignLabels {
            data,
            partition,
            epoch,
            opts,
        } => assign(data, partition, *epoch, opts),
        Command::Train { data, opts } => train(data, opts),
        Command::Score { data, classifier, opts } => score(data, classifier, opts),
        Command::Evaluate { scores, origin, truth } => evaluate_cmd(scores, origin, truth.as_deref()),
        Command::Run {
            gen_synth,
            data,
            origin,
            truth,
            opts,
        } => run(gen_synth.as_deref(), data.as_deref(), origin.as_deref(), truth.as_deref(), opts),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
