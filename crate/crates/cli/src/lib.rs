//! Command implementations behind the `prespeech` binary: dataset
//! synthesis, cross-validated training, DeepSHAP explanation and ANOVA
//! statistics. Every command is deterministic given its flags and seeds.

pub mod config_file;
pub mod heatmap;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use prespeech_core::checkpoint::{Checkpoint, TrainedClassifier, CHECKPOINT_VERSION};
use prespeech_core::dataset::{
    apply_normalization, fit_normalization, load_dataset, save_dataset_file, AUTrial, Paradigm,
};
use prespeech_core::error::{Error, Result};
use prespeech_core::explain::{
    positive_part, read_attribution_csv, write_attribution_csv, AttributionMap, AttributionTarget,
    Explainer, ReferenceSet,
};
use prespeech_core::forest::rf_cross_validate_with_plan;
use prespeech_core::metrics::MetricsReport;
use prespeech_core::model::{Architecture, ModelConfig};
use prespeech_core::report::{
    write_anova_csv, write_anova_summary, write_history_csv, write_metrics_csv, write_metrics_text,
};
use prespeech_core::split::stratified_split;
use prespeech_core::stats::{attribution_anova, AnovaRow, AuScope, Factor, GroupingSpec};
use prespeech_core::synth::{generate_synthetic, DatasetManifest, SynthConfig};
use prespeech_core::train::{cross_validate_with_plan, TrainConfig};

/// Companion manifest path for a dataset CSV.
pub fn manifest_path_for(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

fn dataset_tag_for(dataset: &Path, trials: &[AUTrial]) -> String {
    match std::fs::File::open(manifest_path_for(dataset)) {
        Ok(file) => match serde_json::from_reader::<_, DatasetManifest>(std::io::BufReader::new(file)) {
            Ok(m) => m.dataset_tag,
            Err(_) => format!("file-{}", trials.len()),
        },
        Err(_) => format!("file-{}", trials.len()),
    }
}

pub struct SynthOutputs {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub bayes_auc: f64,
    pub n_trials: usize,
}

/// Generates a synthetic dataset and writes the CSV plus its manifest.
pub fn cmd_synth(out: &Path, cfg: &SynthConfig) -> Result<SynthOutputs> {
    let (trials, oracle) = generate_synthetic(cfg)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    save_dataset_file(&trials, out)?;
    let manifest = DatasetManifest::new(cfg, &trials, &oracle);
    let manifest_path = manifest_path_for(out);
    let file = std::fs::File::create(&manifest_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
    Ok(SynthOutputs {
        dataset: out.to_path_buf(),
        manifest: manifest_path,
        bayes_auc: oracle.bayes_auc,
        n_trials: trials.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParadigmFilter {
    All,
    Cw,
    Wg,
}

impl ParadigmFilter {
    pub fn parse(s: &str) -> Option<ParadigmFilter> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Some(ParadigmFilter::All),
            "cw" => Some(ParadigmFilter::Cw),
            "wg" => Some(ParadigmFilter::Wg),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ParadigmFilter::All => "all",
            ParadigmFilter::Cw => "cw",
            ParadigmFilter::Wg => "wg",
        }
    }

    fn keeps(&self, paradigm: Paradigm) -> bool {
        match self {
            ParadigmFilter::All => true,
            ParadigmFilter::Cw => paradigm == Paradigm::Cw,
            ParadigmFilter::Wg => paradigm == Paradigm::Wg,
        }
    }
}

pub struct TrainArgs {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paradigm: ParadigmFilter,
}

pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub metrics_txt: PathBuf,
    pub report: MetricsReport,
}

/// Cross-validates the selected architecture on the (paradigm-filtered)
/// dataset, writes the metrics table and text report, per-fold training
/// histories for the CNNs, and persists the best-fold model as a
/// checkpoint.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutputs> {
    args.model.validate()?;
    args.train.validate()?;
    let all_trials = load_dataset(&args.dataset)?;
    let dataset_tag = dataset_tag_for(&args.dataset, &all_trials);

    let mut trials: Vec<AUTrial> = all_trials
        .into_iter()
        .filter(|t| args.paradigm.keeps(t.paradigm))
        .collect();
    if trials.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "paradigm filter '{}' matches no trials in {}",
            args.paradigm.as_str(),
            args.dataset.display()
        )));
    }

    let plan = stratified_split(&trials, &args.train)?;
    // Normalization statistics come from the non-test data only and are
    // applied identically everywhere.
    let non_test: Vec<AUTrial> = {
        let in_test: std::collections::HashSet<usize> = plan.test.iter().copied().collect();
        trials
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_test.contains(i))
            .map(|(_, t)| t.clone())
            .collect()
    };
    let normalization = fit_normalization(&non_test)?;
    apply_normalization(&mut trials, &normalization);

    std::fs::create_dir_all(&args.out_dir)?;
    let (report, classifier) = match args.model.architecture {
        Architecture::Rf => {
            let cv = rf_cross_validate_with_plan(&trials, &plan, &args.model)?;
            let best = cv.fold_forests.into_iter().nth(cv.best_fold).expect("best fold");
            (cv.report, TrainedClassifier::Forest(best))
        }
        _ => {
            let cv = cross_validate_with_plan(&trials, &plan, &args.model, &args.train)?;
            for (fold, history) in cv.histories.iter().enumerate() {
                let path = args.out_dir.join(format!("history_fold{fold}.csv"));
                write_history_csv(history, std::fs::File::create(path)?)?;
            }
            let best = cv.fold_models.into_iter().nth(cv.best_fold).expect("best fold");
            (cv.report, TrainedClassifier::Cnn(best))
        }
    };

    let metrics_csv = args.out_dir.join("metrics.csv");
    write_metrics_csv(&report, std::fs::File::create(&metrics_csv)?)?;
    let metrics_txt = args.out_dir.join("metrics.txt");
    write_metrics_text(&report, std::fs::File::create(&metrics_txt)?)?;

    let checkpoint_path = args.out_dir.join("checkpoint.json");
    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        classifier,
        normalization,
        dataset_tag,
        test_trial_ids: plan.test.iter().map(|&i| trials[i].trial_id).collect(),
    };
    checkpoint.save(&checkpoint_path)?;

    Ok(TrainOutputs {
        checkpoint: checkpoint_path,
        metrics_csv,
        metrics_txt,
        report,
    })
}

#[derive(Debug, Clone)]
pub enum TrialSelection {
    Ids(Vec<u64>),
    AllTest,
}

#[derive(Debug, Clone)]
pub enum RefSpec {
    Zeros,
    /// Seeded draws from the non-test trials.
    Train(usize),
}

pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub selection: TrialSelection,
    pub references: RefSpec,
    pub positive_only: bool,
    pub cell_size: usize,
    pub seed: u64,
}

pub struct ExplainOutputs {
    pub attribution_csvs: Vec<PathBuf>,
    pub heatmaps: Vec<PathBuf>,
}

/// Generates attribution CSVs and heatmaps for the selected trials.
pub fn cmd_explain(args: &ExplainArgs) -> Result<ExplainOutputs> {
    if args.cell_size == 0 {
        return Err(Error::InvalidArgument("cell size must be positive".into()));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut trials = load_dataset(&args.dataset)?;
    let tag = dataset_tag_for(&args.dataset, &trials);
    if tag != ckpt.dataset_tag {
        return Err(Error::InvalidArgument(format!(
            "dataset tag '{tag}' does not match the checkpoint's '{}'; the \
             normalization manifests would disagree",
            ckpt.dataset_tag
        )));
    }
    let TrainedClassifier::Cnn(model) = &ckpt.classifier else {
        return Err(Error::InvalidArgument(
            "attribution requires a CNN checkpoint; the forest baseline has no layer graph".into(),
        ));
    };
    apply_normalization(&mut trials, &ckpt.normalization);

    let test_ids: std::collections::HashSet<u64> = ckpt.test_trial_ids.iter().copied().collect();
    let selected: Vec<&AUTrial> = match &args.selection {
        TrialSelection::AllTest => {
            let picked: Vec<&AUTrial> =
                trials.iter().filter(|t| test_ids.contains(&t.trial_id)).collect();
            if picked.is_empty() {
                return Err(Error::InvalidArgument(
                    "checkpoint has no recorded test trials in this dataset".into(),
                ));
            }
            picked
        }
        TrialSelection::Ids(ids) => {
            let mut picked = Vec::with_capacity(ids.len());
            for id in ids {
                let t = trials.iter().find(|t| t.trial_id == *id).ok_or_else(|| {
                    Error::InvalidArgument(format!("trial {id} not present in the dataset"))
                })?;
                picked.push(t);
            }
            picked
        }
    };

    let refs = match args.references {
        RefSpec::Zeros => ReferenceSet::zeros(model.config.input_shape),
        RefSpec::Train(n) => {
            let train_pool: Vec<AUTrial> = trials
                .iter()
                .filter(|t| !test_ids.contains(&t.trial_id))
                .cloned()
                .collect();
            ReferenceSet::from_training(&train_pool, n, args.seed)?
        }
    };
    let explainer = Explainer::new(model, refs, AttributionTarget::Probability)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let maps: Vec<AttributionMap> = selected
        .par_iter()
        .map(|t| {
            let map = explainer.attribute(&t.matrix, t.trial_id)?;
            Ok(if args.positive_only { positive_part(&map) } else { map })
        })
        .collect::<Result<_>>()?;

    let mut attribution_csvs = Vec::with_capacity(maps.len());
    let mut heatmaps = Vec::with_capacity(maps.len());
    for map in &maps {
        let csv_path = args.out_dir.join(format!("attr_trial_{}.csv", map.trial_id));
        write_attribution_csv(map, std::fs::File::create(&csv_path)?)?;
        let ppm_path = args.out_dir.join(format!("heatmap_trial_{}.ppm", map.trial_id));
        std::fs::write(&ppm_path, heatmap::render_ppm(map, args.cell_size))?;
        attribution_csvs.push(csv_path);
        heatmaps.push(ppm_path);
    }
    Ok(ExplainOutputs {
        attribution_csvs,
        heatmaps,
    })
}

pub struct StatsArgs {
    pub attributions: PathBuf,
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub factor: Factor,
    pub scope: AuScope,
    pub positive_only: bool,
}

pub struct StatsOutputs {
    pub anova_csv: PathBuf,
    pub summary_txt: PathBuf,
    pub rows: Vec<AnovaRow>,
}

/// Loads an attribution database, groups by the requested factor and writes
/// the per-AU ANOVA table plus a significance summary.
pub fn cmd_stats(args: &StatsArgs) -> Result<StatsOutputs> {
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&args.attributions)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(id_text) = name.strip_prefix("attr_trial_").and_then(|n| n.strip_suffix(".csv")) {
            let id: u64 = id_text.parse().map_err(|_| {
                Error::Dataset(format!("attribution file {name} has a non-numeric trial id"))
            })?;
            entries.push((id, path));
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no attribution CSVs (attr_trial_*.csv) under {}",
            args.attributions.display()
        )));
    }
    entries.sort_by_key(|(id, _)| *id);

    let mut maps = Vec::with_capacity(entries.len());
    for (id, path) in &entries {
        let file = std::fs::File::open(path)?;
        let map = read_attribution_csv(std::io::BufReader::new(file), *id)?;
        maps.push(if args.positive_only { positive_part(&map) } else { map });
    }

    let trials = load_dataset(&args.dataset)?;
    let mut spec = GroupingSpec::new(args.factor);
    spec.scope = args.scope;
    let rows = attribution_anova(&maps, &trials, &spec)?;

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    write_anova_csv(&rows, std::fs::File::create(&args.out)?)?;
    let summary_txt = args.out.with_extension("summary.txt");
    write_anova_summary(&rows, std::fs::File::create(&summary_txt)?)?;
    Ok(StatsOutputs {
        anova_csv: args.out.clone(),
        summary_txt,
        rows,
    })
}
