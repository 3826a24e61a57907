use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use prespeech_cli::config_file::ConfigFile;
use prespeech_cli::{
    cmd_explain, cmd_stats, cmd_synth, cmd_train, ExplainArgs, ParadigmFilter, RefSpec, StatsArgs,
    TrainArgs, TrialSelection,
};
use prespeech_core::model::{Architecture, ModelConfig};
use prespeech_core::stats::{AuScope, Factor};
use prespeech_core::synth::SynthConfig;
use prespeech_core::train::TrainConfig;

#[derive(Parser)]
#[command(
    name = "prespeech",
    about = "Pre-speech facial action-unit pipeline: synthesize datasets, train classifiers, \
             explain predictions, analyze attribution significance",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic AU dataset with planted temporal signatures.
    Synth {
        /// Output dataset CSV; the manifest lands next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        stutter_fraction: Option<f64>,
        #[arg(long)]
        cw_fraction: Option<f64>,
        /// AR(1) coefficient of the baseline noise.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        noise_scale: Option<f64>,
        #[arg(long)]
        au6_amp: Option<f64>,
        #[arg(long)]
        au14_amp: Option<f64>,
        #[arg(long)]
        label_noise: Option<f64>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        subject_spread: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Key-value config file mirroring these flags.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validate a classifier and persist the best fold model.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Architecture: cnn-a, cnn-b or rf.
        #[arg(long)]
        arch: Option<String>,
        /// CNN-B square kernel edge (2, 4 or 6).
        #[arg(long)]
        kernel: Option<usize>,
        #[arg(long)]
        dropout: Option<f64>,
        /// Random-forest tree count.
        #[arg(long)]
        trees: Option<usize>,
        /// Random-forest depth cap.
        #[arg(long)]
        max_depth: Option<usize>,
        /// Train on all trials or one paradigm: all, cw, wg.
        #[arg(long)]
        paradigm: Option<String>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        early_stop_patience: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        lr_factor: Option<f64>,
        #[arg(long)]
        lr_patience: Option<usize>,
        #[arg(long)]
        lr_min: Option<f64>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Produce attribution CSVs and heatmaps from a trained checkpoint.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Comma-separated trial ids.
        #[arg(long, conflicts_with = "all_test")]
        trial_ids: Option<String>,
        /// Explain every hold-out test trial recorded in the checkpoint.
        #[arg(long)]
        all_test: bool,
        /// Reference set: "zeros" or "train:<count>".
        #[arg(long)]
        references: Option<String>,
        /// Zero out negative attributions before writing.
        #[arg(long)]
        positive_only: bool,
        /// Pixels per matrix cell in the rendered heatmap.
        #[arg(long)]
        cell_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run per-AU ANOVA over an attribution database.
    Stats {
        /// Directory of attr_trial_*.csv files.
        #[arg(long)]
        attributions: PathBuf,
        /// Dataset CSV supplying labels, paradigms and subjects.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grouping factor: label, paradigm, stutter-band or window.
        #[arg(long)]
        factor: Option<String>,
        /// AU scope: all, upper, lower, or one AU id.
        #[arg(long)]
        au: Option<String>,
        /// Analyze the positive attribution parts only.
        #[arg(long)]
        positive_only: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<ConfigFile> {
    Ok(match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    })
}

fn parse_references(text: &str) -> anyhow::Result<RefSpec> {
    if text == "zeros" {
        return Ok(RefSpec::Zeros);
    }
    if text == "train" {
        return Ok(RefSpec::Train(100));
    }
    if let Some(count) = text.strip_prefix("train:") {
        let count: usize = count
            .parse()
            .with_context(|| format!("bad reference count in '{text}'"))?;
        return Ok(RefSpec::Train(count));
    }
    bail!("references must be 'zeros' or 'train:<count>', got '{text}'");
}

fn run() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Synth {
            out,
            trials,
            stutter_fraction,
            cw_fraction,
            rho,
            noise_scale,
            au6_amp,
            au14_amp,
            label_noise,
            subjects,
            subject_spread,
            seed,
            config,
        } => {
            let file = load_config(&config)?;
            let defaults = SynthConfig::default();
            let cfg = SynthConfig {
                n_trials: file.resolve(&trials, "trials", defaults.n_trials)?,
                stutter_fraction: file.resolve(&stutter_fraction, "stutter_fraction", defaults.stutter_fraction)?,
                cw_fraction: file.resolve(&cw_fraction, "cw_fraction", defaults.cw_fraction)?,
                ar_rho: file.resolve(&rho, "rho", defaults.ar_rho)?,
                noise_scale: file.resolve(&noise_scale, "noise_scale", defaults.noise_scale)?,
                au6_amplitude: file.resolve(&au6_amp, "au6_amp", defaults.au6_amplitude)?,
                au14_amplitude: file.resolve(&au14_amp, "au14_amp", defaults.au14_amplitude)?,
                label_noise: file.resolve(&label_noise, "label_noise", defaults.label_noise)?,
                n_subjects: file.resolve(&subjects, "subjects", defaults.n_subjects)?,
                subject_spread: file.resolve(&subject_spread, "subject_spread", defaults.subject_spread)?,
                seed: file.resolve(&seed, "seed", defaults.seed)?,
            };
            let outputs = cmd_synth(&out, &cfg)?;
            println!(
                "wrote {} trials to {} (bayes auc {:.4}); manifest at {}",
                outputs.n_trials,
                outputs.dataset.display(),
                outputs.bayes_auc,
                outputs.manifest.display()
            );
        }
        Command::Train {
            dataset,
            out_dir,
            arch,
            kernel,
            dropout,
            trees,
            max_depth,
            paradigm,
            batch_size,
            epochs,
            early_stop_patience,
            lr,
            lr_factor,
            lr_patience,
            lr_min,
            folds,
            test_fraction,
            seed,
            config,
        } => {
            let file = load_config(&config)?;
            let arch_text = file.resolve(&arch, "arch", "cnn-a".to_string())?;
            let architecture = match arch_text.to_ascii_lowercase().as_str() {
                "cnn-a" => Architecture::CnnA,
                "cnn-b" => Architecture::CnnB,
                "rf" => Architecture::Rf,
                other => bail!("unknown architecture '{other}' (expected cnn-a, cnn-b or rf)"),
            };
            let paradigm_text = file.resolve(&paradigm, "paradigm", "all".to_string())?;
            let paradigm = ParadigmFilter::parse(&paradigm_text)
                .with_context(|| format!("unknown paradigm filter '{paradigm_text}'"))?;
            let seed = file.resolve(&seed, "seed", 0u64)?;

            let model_defaults = ModelConfig::new(architecture);
            let mut model = ModelConfig::new(architecture).with_seed(seed);
            model.cnn_b_kernel = file.resolve(&kernel, "kernel", model_defaults.cnn_b_kernel)?;
            model.dropout_rate = file.resolve(&dropout, "dropout", model_defaults.dropout_rate)?;
            model.rf_trees = file.resolve(&trees, "trees", model_defaults.rf_trees)?;
            model.rf_max_depth = file.resolve(&max_depth, "max_depth", model_defaults.rf_max_depth)?;

            let train_defaults = TrainConfig::default();
            let train = TrainConfig {
                batch_size: file.resolve(&batch_size, "batch_size", train_defaults.batch_size)?,
                max_epochs: file.resolve(&epochs, "epochs", train_defaults.max_epochs)?,
                early_stop_patience: file.resolve(
                    &early_stop_patience,
                    "early_stop_patience",
                    train_defaults.early_stop_patience,
                )?,
                lr0: file.resolve(&lr, "lr", train_defaults.lr0)?,
                lr_factor: file.resolve(&lr_factor, "lr_factor", train_defaults.lr_factor)?,
                lr_patience: file.resolve(&lr_patience, "lr_patience", train_defaults.lr_patience)?,
                lr_min: file.resolve(&lr_min, "lr_min", train_defaults.lr_min)?,
                folds: file.resolve(&folds, "folds", train_defaults.folds)?,
                test_fraction: file.resolve(&test_fraction, "test_fraction", train_defaults.test_fraction)?,
                seed,
            };
            let outputs = cmd_train(&TrainArgs {
                dataset,
                out_dir,
                model,
                train,
                paradigm,
            })?;
            println!(
                "cross-validation done: accuracy {:.4} +/- {:.4}, auc {:.4} +/- {:.4}, f1 {:.4} +/- {:.4}",
                outputs.report.mean_accuracy,
                outputs.report.std_accuracy,
                outputs.report.mean_auc,
                outputs.report.std_auc,
                outputs.report.mean_f1,
                outputs.report.std_f1
            );
            println!("checkpoint: {}", outputs.checkpoint.display());
            println!("metrics: {}", outputs.metrics_csv.display());
        }
        Command::Explain {
            checkpoint,
            dataset,
            out_dir,
            trial_ids,
            all_test,
            references,
            positive_only,
            cell_size,
            seed,
            config,
        } => {
            let file = load_config(&config)?;
            let selection = if all_test {
                TrialSelection::AllTest
            } else {
                let text = match (&trial_ids, file.raw("trial_ids")) {
                    (Some(t), _) => t.clone(),
                    (None, Some(t)) => t.to_string(),
                    (None, None) => bail!("pass --trial-ids or --all-test"),
                };
                let ids = text
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .with_context(|| format!("bad trial id list '{text}'"))?;
                TrialSelection::Ids(ids)
            };
            let ref_text = file.resolve(&references, "references", "train:100".to_string())?;
            let outputs = cmd_explain(&ExplainArgs {
                checkpoint,
                dataset,
                out_dir,
                selection,
                references: parse_references(&ref_text)?,
                positive_only,
                cell_size: file.resolve(&cell_size, "cell_size", 8)?,
                seed: file.resolve(&seed, "seed", 0u64)?,
            })?;
            println!(
                "wrote {} attribution CSVs and {} heatmaps",
                outputs.attribution_csvs.len(),
                outputs.heatmaps.len()
            );
        }
        Command::Stats {
            attributions,
            dataset,
            out,
            factor,
            au,
            positive_only,
            config,
        } => {
            let file = load_config(&config)?;
            let factor_text = file.resolve(&factor, "factor", "label".to_string())?;
            let factor = match factor_text.to_ascii_lowercase().as_str() {
                "label" => Factor::Label,
                "paradigm" => Factor::Paradigm,
                "stutter-band" | "stutter_band" => Factor::StutterBand,
                "window" => Factor::Window,
                other => bail!("unknown factor '{other}'"),
            };
            let au_text = file.resolve(&au, "au", "all".to_string())?;
            let scope = match au_text.to_ascii_lowercase().as_str() {
                "all" => AuScope::All,
                "upper" => AuScope::Upper,
                "lower" => AuScope::Lower,
                id => AuScope::Single(
                    id.parse::<u8>()
                        .with_context(|| format!("bad AU scope '{id}'"))?,
                ),
            };
            let outputs = cmd_stats(&StatsArgs {
                attributions,
                dataset,
                out,
                factor,
                scope,
                positive_only,
            })?;
            println!(
                "wrote {} ANOVA rows to {} (summary at {})",
                outputs.rows.len(),
                outputs.anova_csv.display(),
                outputs.summary_txt.display()
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
