//! Synthetic AU dataset generator with planted temporal signatures.
//!
//! Stuttered trials receive a Gaussian bump on AU6 (cheek raiser) centered
//! at 700 ms and a linear ramp on AU14 (dimpler) over 1100-1500 ms, on top
//! of smooth AR(1) noise. The generator also produces the exact posterior
//! P(stuttered | matrix) under its own Gaussian model, which upper-bounds
//! any classifier trained on the data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{au_row, AUTrial, Label, Paradigm, AU_ROWS, FRAMES, TRIAL_MS};
use crate::error::{Error, Result};
use crate::metrics::auc_roc;
use crate::seeds::rng_for;
use crate::tensor::Tensor;

/// Generator configuration. Defaults mirror the dataset statistics the
/// pipeline is sized for: 3704 trials, balanced classes, CW:WG close to
/// 1710:1992.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_trials: usize,
    pub stutter_fraction: f64,
    /// Fraction of trials assigned the CW paradigm.
    pub cw_fraction: f64,
    /// AR(1) coefficient of the per-AU baseline noise.
    pub ar_rho: f64,
    /// Innovation standard deviation of the AR(1) noise.
    pub noise_scale: f64,
    /// Peak amplitude of the AU6 bump added to stuttered trials.
    pub au6_amplitude: f64,
    /// Final amplitude of the AU14 ramp added to stuttered trials.
    pub au14_amplitude: f64,
    /// Probability that a trial's label is flipped from its latent class.
    pub label_noise: f64,
    pub n_subjects: usize,
    /// Half-width of the per-subject stutter-propensity spread around
    /// `stutter_fraction`; keeps the marginal fraction intact while giving
    /// subjects distinct stutter rates for the HSR/LSR analyses.
    pub subject_spread: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            n_trials: 3704,
            stutter_fraction: 0.5,
            cw_fraction: 1710.0 / 3702.0,
            ar_rho: 0.95,
            noise_scale: 0.02,
            au6_amplitude: 0.35,
            au14_amplitude: 0.30,
            label_noise: 0.15,
            n_subjects: 7,
            subject_spread: 0.25,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::InvalidConfig("n_trials must be positive".into()));
        }
        for (name, v) in [("stutter_fraction", self.stutter_fraction), ("cw_fraction", self.cw_fraction)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must be in (0,1); got {v}")));
            }
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::InvalidConfig(format!(
                "label_noise must be in [0, 0.5); got {}",
                self.label_noise
            )));
        }
        if !(0.0..1.0).contains(&self.ar_rho) {
            return Err(Error::InvalidConfig(format!("ar_rho must be in [0,1); got {}", self.ar_rho)));
        }
        if self.noise_scale <= 0.0 {
            return Err(Error::InvalidConfig("noise_scale must be positive".into()));
        }
        if self.au6_amplitude < 0.0 || self.au14_amplitude < 0.0 {
            return Err(Error::InvalidConfig("signal amplitudes must be non-negative".into()));
        }
        if self.n_subjects == 0 {
            return Err(Error::InvalidConfig("n_subjects must be positive".into()));
        }
        Ok(())
    }

    /// Per-subject latent stutter propensities, symmetric around
    /// `stutter_fraction` so the marginal stays put.
    pub fn subject_propensities(&self) -> Vec<f64> {
        let s = self.n_subjects;
        (0..s)
            .map(|i| {
                let offset = if s == 1 {
                    0.0
                } else {
                    self.subject_spread * (2.0 * i as f64 / (s - 1) as f64 - 1.0)
                };
                (self.stutter_fraction + offset).clamp(0.02, 0.98)
            })
            .collect()
    }
}

/// Resting intensity every AU row fluctuates around.
const BASELINE: f64 = 0.35;
const BUMP_CENTER_MS: f64 = 700.0;
const BUMP_SIGMA_MS: f64 = 150.0;
const RAMP_START_MS: f64 = 1100.0;

/// Center time of a frame in milliseconds.
fn frame_center_ms(frame: usize) -> f64 {
    (frame as f64 + 0.5) * (TRIAL_MS / FRAMES as f64)
}

/// Planted mean difference (stuttered minus fluent) for one AU row.
fn signal_profile(row: usize, cfg: &SynthConfig) -> Option<Vec<f64>> {
    let au6 = au_row(6).expect("AU6 in catalog");
    let au14 = au_row(14).expect("AU14 in catalog");
    if row == au6 {
        Some(
            (0..FRAMES)
                .map(|f| {
                    let t = frame_center_ms(f);
                    let z = (t - BUMP_CENTER_MS) / BUMP_SIGMA_MS;
                    cfg.au6_amplitude * (-0.5 * z * z).exp()
                })
                .collect(),
        )
    } else if row == au14 {
        Some(
            (0..FRAMES)
                .map(|f| {
                    let t = frame_center_ms(f);
                    if t <= RAMP_START_MS {
                        0.0
                    } else {
                        cfg.au14_amplitude * (t - RAMP_START_MS) / (TRIAL_MS - RAMP_START_MS)
                    }
                })
                .collect(),
        )
    } else {
        None
    }
}

/// Exact generator-side knowledge about each trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorOracle {
    /// P(latent class = stuttered | matrix) per trial, in trial order.
    pub posteriors: Vec<f64>,
    /// AUC of scoring every trial with the posterior against the released
    /// (noise-flipped) labels; an upper bound for matrix-based classifiers.
    pub bayes_auc: f64,
    /// Fraction of matrix cells clipped at the [0,1] boundary.
    pub clip_fraction: f64,
    /// Set when amplitudes push more than half of all values to the
    /// boundary, which invalidates the Gaussian posterior.
    pub clip_warning: bool,
}

/// Applies the stationary AR(1) precision to a vector: (Q s) / sigma^2 with
/// the standard tridiagonal form.
fn ar1_precision_apply(s: &[f64], rho: f64, sigma2: f64) -> Vec<f64> {
    let n = s.len();
    let mut out = vec![0.0; n];
    for t in 0..n {
        let mut v = if t == 0 || t == n - 1 { s[t] } else { (1.0 + rho * rho) * s[t] };
        if t > 0 {
            v -= rho * s[t - 1];
        }
        if t + 1 < n {
            v -= rho * s[t + 1];
        }
        out[t] = v / sigma2;
    }
    out
}

/// Generates the dataset plus its oracle. A pure function of the config:
/// the same seed yields a bit-identical dataset and oracle.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<AUTrial>, GeneratorOracle)> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, "synth");
    let n = cfg.n_trials;

    // Exact paradigm counts at the configured ratio, randomly placed.
    let n_cw = ((n as f64) * cfg.cw_fraction).round() as usize;
    let mut paradigms = vec![Paradigm::Cw; n_cw];
    paradigms.resize(n, Paradigm::Wg);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        paradigms.swap(i, j);
    }

    let propensities = cfg.subject_propensities();
    let sigma_innov = cfg.noise_scale;
    let sigma_stationary = sigma_innov / (1.0 - cfg.ar_rho * cfg.ar_rho).sqrt();

    let profiles: Vec<Option<Vec<f64>>> = (0..AU_ROWS).map(|r| signal_profile(r, cfg)).collect();
    // Precision-weighted signals for the likelihood ratio, per signal row.
    let sigma2 = sigma_innov * sigma_innov;
    let weighted: Vec<Option<Vec<f64>>> = profiles
        .iter()
        .map(|p| p.as_ref().map(|s| ar1_precision_apply(s, cfg.ar_rho, sigma2)))
        .collect();

    let prior = cfg.stutter_fraction;
    let prior_logit = (prior / (1.0 - prior)).ln();

    let mut trials = Vec::with_capacity(n);
    let mut posteriors = Vec::with_capacity(n);
    let mut labels_u8 = Vec::with_capacity(n);
    let mut clipped_cells = 0usize;

    for i in 0..n {
        let subject = (i % cfg.n_subjects) as u32;
        let session = ((i / cfg.n_subjects) % 4) as u32 + 1;
        let stuttered = rng.gen::<f64>() < propensities[subject as usize];
        let flipped = rng.gen::<f64>() < cfg.label_noise;
        let label = match stuttered ^ flipped {
            true => Label::Stuttered,
            false => Label::Fluent,
        };

        let mut matrix = Tensor::zeros(&[AU_ROWS, FRAMES]);
        for row in 0..AU_ROWS {
            let mut state: f64 = sigma_stationary * rng.sample::<f64, _>(StandardNormal);
            for frame in 0..FRAMES {
                if frame > 0 {
                    state = cfg.ar_rho * state + sigma_innov * rng.sample::<f64, _>(StandardNormal);
                }
                let mut v = BASELINE + state;
                if stuttered {
                    if let Some(profile) = &profiles[row] {
                        v += profile[frame];
                    }
                }
                let clipped = v.clamp(0.0, 1.0);
                if clipped != v {
                    clipped_cells += 1;
                }
                matrix.data_mut()[row * FRAMES + frame] = clipped;
            }
        }

        // Log-likelihood ratio over the two signal rows: (x - base - s/2)' Q s.
        let mut llr = 0.0;
        for row in 0..AU_ROWS {
            if let (Some(profile), Some(qs)) = (&profiles[row], &weighted[row]) {
                for frame in 0..FRAMES {
                    let centered = matrix.data()[row * FRAMES + frame] - BASELINE - 0.5 * profile[frame];
                    llr += centered * qs[frame];
                }
            }
        }
        posteriors.push(crate::kernels::sigmoid(llr + prior_logit));
        labels_u8.push(label.as_u8());

        trials.push(AUTrial {
            trial_id: i as u64,
            subject_id: subject,
            session_id: session,
            paradigm: paradigms[i],
            label,
            matrix,
        });
    }

    let bayes_auc = auc_roc(&posteriors, &labels_u8)?;
    let total_cells = n * AU_ROWS * FRAMES;
    let clip_fraction = clipped_cells as f64 / total_cells as f64;
    Ok((
        trials,
        GeneratorOracle {
            posteriors,
            bayes_auc,
            clip_fraction,
            clip_warning: clip_fraction > 0.5,
        },
    ))
}

/// Companion manifest written next to a generated dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: SynthConfig,
    pub n_trials: usize,
    pub bayes_auc: f64,
    pub clip_fraction: f64,
    pub clip_warning: bool,
    /// Per-AU min/max of the generated data (informational).
    pub au_min: Vec<f64>,
    pub au_max: Vec<f64>,
    /// Identity tag binding checkpoints to the dataset they trained on.
    pub dataset_tag: String,
    /// Wall-clock timestamp; the only non-deterministic field.
    pub generated_at: String,
}

impl DatasetManifest {
    pub fn new(cfg: &SynthConfig, trials: &[AUTrial], oracle: &GeneratorOracle) -> DatasetManifest {
        let mut au_min = vec![f64::INFINITY; AU_ROWS];
        let mut au_max = vec![f64::NEG_INFINITY; AU_ROWS];
        for trial in trials {
            for row in 0..AU_ROWS {
                for frame in 0..FRAMES {
                    let v = trial.value(row, frame);
                    au_min[row] = au_min[row].min(v);
                    au_max[row] = au_max[row].max(v);
                }
            }
        }
        DatasetManifest {
            version: 1,
            config: cfg.clone(),
            n_trials: trials.len(),
            bayes_auc: oracle.bayes_auc,
            clip_fraction: oracle.clip_fraction,
            clip_warning: oracle.clip_warning,
            au_min,
            au_max,
            dataset_tag: format!("synth-{}-{}", cfg.seed, trials.len()),
            generated_at: now_utc_string(),
        }
    }
}

/// Seconds since the epoch as a string; manifests are the only artifacts
/// carrying timestamps.
fn now_utc_string() -> String {
    match std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH) {
        Ok(d) => format!("{}", d.as_secs()),
        Err(_) => "0".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrices_are_in_range_and_shaped() {
        let cfg = SynthConfig { n_trials: 50, seed: 5, ..SynthConfig::default() };
        let (trials, _) = generate_synthetic(&cfg).unwrap();
        assert_eq!(trials.len(), 50);
        for t in &trials {
            assert_eq!(t.matrix.shape(), &[17, 87]);
            assert!(t.matrix.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn generation_is_pure_in_the_seed() {
        let cfg = SynthConfig { n_trials: 40, seed: 123, ..SynthConfig::default() };
        let (a, oa) = generate_synthetic(&cfg).unwrap();
        let (b, ob) = generate_synthetic(&cfg).unwrap();
        assert_eq!(oa.bayes_auc, ob.bayes_auc);
        assert_eq!(oa.posteriors, ob.posteriors);
        for (ta, tb) in a.iter().zip(b.iter()) {
            assert_eq!(ta.matrix.data(), tb.matrix.data());
            assert_eq!(ta.label, tb.label);
            assert_eq!(ta.paradigm, tb.paradigm);
        }
        let other = SynthConfig { seed: 124, ..cfg };
        let (c, _) = generate_synthetic(&other).unwrap();
        assert_ne!(a[0].matrix.data(), c[0].matrix.data());
    }

    #[test]
    fn zero_amplitude_gives_chance_bayes_auc() {
        let cfg = SynthConfig {
            n_trials: 400,
            au6_amplitude: 0.0,
            au14_amplitude: 0.0,
            label_noise: 0.25,
            seed: 9,
            ..SynthConfig::default()
        };
        let (_, oracle) = generate_synthetic(&cfg).unwrap();
        // Labels independent of the data: every posterior ties at the prior.
        assert_eq!(oracle.bayes_auc, 0.5);
    }

    #[test]
    fn clean_large_signal_is_nearly_separable() {
        let cfg = SynthConfig {
            n_trials: 400,
            au6_amplitude: 0.5,
            au14_amplitude: 0.4,
            label_noise: 0.0,
            noise_scale: 0.01,
            seed: 10,
            ..SynthConfig::default()
        };
        let (_, oracle) = generate_synthetic(&cfg).unwrap();
        assert!(oracle.bayes_auc > 0.99, "bayes auc {}", oracle.bayes_auc);
    }

    #[test]
    fn au6_class_conditional_mean_separates_at_700ms() {
        let cfg = SynthConfig { n_trials: 1200, seed: 4, ..SynthConfig::default() };
        let (trials, _) = generate_synthetic(&cfg).unwrap();
        let frame_700 = (700.0 * FRAMES as f64 / TRIAL_MS).floor() as usize;
        let row = au_row(6).unwrap();
        let (mut sum_s, mut n_s, mut sum_f, mut n_f) = (0.0, 0usize, 0.0, 0usize);
        for t in &trials {
            let v = t.value(row, frame_700);
            match t.label {
                Label::Stuttered => {
                    sum_s += v;
                    n_s += 1;
                }
                Label::Fluent => {
                    sum_f += v;
                    n_f += 1;
                }
            }
        }
        let margin = sum_s / n_s as f64 - sum_f / n_f as f64;
        assert!(
            margin >= cfg.au6_amplitude / 2.0,
            "margin {margin} vs amplitude {}",
            cfg.au6_amplitude
        );
    }

    #[test]
    fn marginal_label_frequency_tracks_fraction() {
        let cfg = SynthConfig { n_trials: 2000, seed: 8, ..SynthConfig::default() };
        let (trials, _) = generate_synthetic(&cfg).unwrap();
        let stutter = trials.iter().filter(|t| t.label == Label::Stuttered).count() as f64;
        let freq = stutter / trials.len() as f64;
        assert!((freq - cfg.stutter_fraction).abs() <= 0.02, "freq {freq}");

        let skew = SynthConfig {
            n_trials: 2000,
            stutter_fraction: 0.3,
            label_noise: 0.0,
            seed: 8,
            ..SynthConfig::default()
        };
        let (trials, _) = generate_synthetic(&skew).unwrap();
        let stutter = trials.iter().filter(|t| t.label == Label::Stuttered).count() as f64;
        let freq = stutter / trials.len() as f64;
        assert!((freq - 0.3).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn paradigm_counts_match_ratio() {
        let cfg = SynthConfig { n_trials: 3704, seed: 2, ..SynthConfig::default() };
        let (trials, _) = generate_synthetic(&cfg).unwrap();
        let cw = trials.iter().filter(|t| t.paradigm == Paradigm::Cw).count();
        assert_eq!(cw, ((3704.0 * cfg.cw_fraction) as f64).round() as usize);
    }

    #[test]
    fn subject_propensities_are_centered_and_spread() {
        let cfg = SynthConfig::default();
        let props = cfg.subject_propensities();
        assert_eq!(props.len(), 7);
        let mean: f64 = props.iter().sum::<f64>() / 7.0;
        assert!((mean - 0.5).abs() < 1e-12);
        assert!(props.iter().any(|&p| p < 0.4));
        assert!(props.iter().any(|&p| p > 0.6));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.label_noise = 0.5;
        assert!(generate_synthetic(&cfg).is_err());
        let mut cfg = SynthConfig::default();
        cfg.stutter_fraction = 1.5;
        assert!(generate_synthetic(&cfg).is_err());
    }
}
