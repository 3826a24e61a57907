//! One-way ANOVA over attribution values, with F-distribution p-values via
//! the regularized incomplete beta function.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{AUTrial, Label, Paradigm, Region, AU_CATALOG, TRIAL_MS};
use crate::error::{Error, Result};
use crate::explain::{window_mean, AttributionMap};

/// Result of one F-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaTable {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    /// Human-readable grouping descriptor.
    pub grouping: String,
}

// Lanczos approximation, g = 7, 9 coefficients.
const LANCZOS: [f64; 8] = [
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in LANCZOS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 500;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m_f = m as f64;
        let m2 = 2.0 * m_f;
        // Even step.
        let aa = m_f * (b - m_f) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m_f) * (qab + m_f) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Survival function of the F distribution: P(F(d1, d2) > f).
pub fn f_sf(f: f64, d1: usize, d2: usize) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    let (d1, d2) = (d1 as f64, d2 as f64);
    let x = d2 / (d2 + d1 * f);
    regularized_incomplete_beta(0.5 * d2, 0.5 * d1, x)
}

/// One-way ANOVA over k groups of samples.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaTable> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "anova needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "anova group {i} has {} samples; need at least 2",
                g.len()
            )));
        }
    }
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand: f64 = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean: f64 = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand) * (mean - grand);
        for v in g {
            ss_within += (v - mean) * (v - mean);
        }
    }
    let df_between = k - 1;
    let df_within = n - k;

    let (f_stat, p) = if ss_between == 0.0 {
        (0.0, 1.0)
    } else if ss_within == 0.0 {
        // Perfect group separation: report the largest finite surrogate.
        (f64::MAX, 0.0)
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_sf(f, df_between, df_within))
    };
    Ok(AnovaTable {
        f_stat,
        df_between,
        df_within,
        p,
        grouping: String::new(),
    })
}

/// Grouping factor for attribution ANOVA.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Factor {
    Label,
    Paradigm,
    StutterBand,
    Window,
}

impl Factor {
    pub fn as_str(&self) -> &'static str {
        match self {
            Factor::Label => "label",
            Factor::Paradigm => "paradigm",
            Factor::StutterBand => "stutter-band",
            Factor::Window => "window",
        }
    }
}

/// Which AU rows to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuScope {
    Single(u8),
    Upper,
    Lower,
    All,
}

impl AuScope {
    fn contains(&self, row: usize) -> bool {
        match self {
            AuScope::Single(id) => AU_CATALOG[row].id == *id,
            AuScope::Upper => AU_CATALOG[row].region == Region::Upper,
            AuScope::Lower => AU_CATALOG[row].region == Region::Lower,
            AuScope::All => true,
        }
    }
}

/// The three analysis windows, in milliseconds.
pub const ANALYSIS_WINDOWS: [(f64, f64); 3] = [(0.0, 500.0), (500.0, 800.0), (1100.0, 1500.0)];

/// Grouping specification for `attribution_anova`.
#[derive(Debug, Clone)]
pub struct GroupingSpec {
    pub factor: Factor,
    /// Subjects above this stutter-rate percentage form the HSR band.
    pub stutter_threshold_pct: f64,
    /// Windows analyzed when `factor == Window`.
    pub windows: Vec<(f64, f64)>,
    pub scope: AuScope,
}

impl GroupingSpec {
    pub fn new(factor: Factor) -> GroupingSpec {
        GroupingSpec {
            factor,
            stutter_threshold_pct: 40.0,
            windows: ANALYSIS_WINDOWS.to_vec(),
            scope: AuScope::All,
        }
    }
}

/// One output row: the per-AU (and per-window, for the window factor) F-test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaRow {
    pub factor: String,
    pub au_id: u8,
    pub region: String,
    /// Window the per-trial statistic was aggregated over, in ms.
    pub window: (f64, f64),
    pub table: AnovaTable,
    /// Bonferroni-adjusted p over the AUs in scope (reference column; the
    /// headline numbers stay uncorrected).
    pub p_bonferroni: f64,
}

/// Per-subject stutter rate: stuttered / (stuttered + fluent) across all of
/// the subject's trials, as a percentage.
pub fn subject_stutter_rates(trials: &[AUTrial]) -> HashMap<u32, f64> {
    let mut counts: HashMap<u32, (usize, usize)> = HashMap::new();
    for t in trials {
        let e = counts.entry(t.subject_id).or_insert((0, 0));
        if t.label == Label::Stuttered {
            e.0 += 1;
        }
        e.1 += 1;
    }
    counts
        .into_iter()
        .map(|(s, (stut, total))| (s, 100.0 * stut as f64 / total as f64))
        .collect()
}

fn group_key(
    trial: &AUTrial,
    factor: Factor,
    rates: &HashMap<u32, f64>,
    threshold: f64,
) -> (usize, &'static str) {
    match factor {
        Factor::Label => match trial.label {
            Label::Fluent => (0, "fluent"),
            Label::Stuttered => (1, "stuttered"),
        },
        Factor::Paradigm => match trial.paradigm {
            Paradigm::Cw => (0, "CW"),
            Paradigm::Wg => (1, "WG"),
        },
        Factor::StutterBand => {
            let rate = rates[&trial.subject_id];
            if rate > threshold {
                (1, "HSR")
            } else {
                (0, "LSR")
            }
        }
        Factor::Window => unreachable!("window factor handled separately"),
    }
}

/// Runs the per-AU ANOVA over attribution maps.
///
/// For the label, paradigm and stutter-band factors the per-trial statistic
/// is the full-range window mean and groups follow the factor: one row per
/// AU. For the window factor, fluent and stuttered attributions are compared
/// within each analysis window: one row per (AU, window), matching the
/// per-window F statistics the downstream reports quote. Rows are sorted by
/// F descending.
pub fn attribution_anova(
    maps: &[AttributionMap],
    trials: &[AUTrial],
    spec: &GroupingSpec,
) -> Result<Vec<AnovaRow>> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("no attribution maps given".into()));
    }
    let by_id: HashMap<u64, &AUTrial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let mut aligned: Vec<(&AttributionMap, &AUTrial)> = Vec::with_capacity(maps.len());
    for m in maps {
        let t = by_id.get(&m.trial_id).ok_or_else(|| {
            Error::InvalidArgument(format!("no metadata for trial {}", m.trial_id))
        })?;
        aligned.push((m, t));
    }
    let rates = subject_stutter_rates(trials);

    let rows_in_scope: Vec<usize> = (0..AU_CATALOG.len())
        .filter(|&r| spec.scope.contains(r))
        .collect();
    if rows_in_scope.is_empty() {
        return Err(Error::InvalidArgument("AU scope selects no rows".into()));
    }
    let n_tests = match spec.factor {
        Factor::Window => rows_in_scope.len() * spec.windows.len(),
        _ => rows_in_scope.len(),
    };

    let mut out = Vec::new();
    for &row in &rows_in_scope {
        let au = AU_CATALOG[row];
        match spec.factor {
            Factor::Window => {
                for &window in &spec.windows {
                    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); 2];
                    for (map, trial) in &aligned {
                        let stat = window_mean(map, window, au.id)?;
                        groups[trial.label.as_u8() as usize].push(stat);
                    }
                    for (gi, name) in [(0usize, "fluent"), (1, "stuttered")] {
                        if groups[gi].len() < 2 {
                            return Err(Error::InvalidArgument(format!(
                                "factor window: label level '{name}' has too few trials"
                            )));
                        }
                    }
                    let mut table = anova_oneway(&groups)?;
                    table.grouping = format!(
                        "label within {:.0}-{:.0} ms",
                        window.0, window.1
                    );
                    out.push(AnovaRow {
                        factor: spec.factor.as_str().to_string(),
                        au_id: au.id,
                        region: au.region.as_str().to_string(),
                        window,
                        table,
                        p_bonferroni: 0.0,
                    });
                }
            }
            factor => {
                let window = (0.0, TRIAL_MS);
                let mut groups: Vec<Vec<f64>> = vec![Vec::new(); 2];
                let mut names = ["", ""];
                for (map, trial) in &aligned {
                    let stat = window_mean(map, window, au.id)?;
                    let (gi, name) = group_key(trial, factor, &rates, spec.stutter_threshold_pct);
                    groups[gi].push(stat);
                    names[gi] = name;
                }
                for (gi, name) in names.iter().enumerate() {
                    if groups[gi].len() < 2 {
                        let level = if name.is_empty() {
                            default_level_name(factor, gi)
                        } else {
                            name
                        };
                        return Err(Error::InvalidArgument(format!(
                            "factor {}: level '{level}' has too few trials",
                            factor.as_str()
                        )));
                    }
                }
                let mut table = anova_oneway(&groups)?;
                table.grouping = format!("{} vs {}", names[0], names[1]);
                out.push(AnovaRow {
                    factor: spec.factor.as_str().to_string(),
                    au_id: au.id,
                    region: au.region.as_str().to_string(),
                    window,
                    table,
                    p_bonferroni: 0.0,
                });
            }
        }
    }
    for row in &mut out {
        row.p_bonferroni = (row.table.p * n_tests as f64).min(1.0);
    }
    out.sort_by(|a, b| b.table.f_stat.partial_cmp(&a.table.f_stat).expect("finite F"));
    Ok(out)
}

fn default_level_name(factor: Factor, index: usize) -> &'static str {
    match (factor, index) {
        (Factor::Label, 0) => "fluent",
        (Factor::Label, 1) => "stuttered",
        (Factor::Paradigm, 0) => "CW",
        (Factor::Paradigm, 1) => "WG",
        (Factor::StutterBand, 0) => "LSR",
        (Factor::StutterBand, 1) => "HSR",
        _ => "?",
    }
}
