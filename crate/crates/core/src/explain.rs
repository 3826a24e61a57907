//! DeepSHAP attribution: DeepLIFT rescale-rule multipliers propagated from
//! the classifier output back to the 17x87 input, averaged over a reference
//! set. Linear layers (conv, dense, pooling, frozen batch norm, flatten)
//! propagate multipliers through their exact Jacobians; the nonlinearities
//! (ELU, the sigmoid head) use finite-difference multipliers against the
//! reference with a derivative fallback near zero.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{au_row, AUTrial, AU_CATALOG, AU_ROWS, FRAMES, TRIAL_MS};
use crate::error::{Error, Result};
use crate::kernels::sigmoid;
use crate::layer::{ForwardOpts, Layer};
use crate::model::{ForwardTrace, Model};
use crate::seeds::rng_for;
use crate::tensor::Tensor;

/// Threshold below which the rescale rule falls back to the analytic
/// derivative at the midpoint.
const RESCALE_GUARD: f64 = 1e-9;

/// Signed 17x87 attribution map for one trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionMap {
    /// Same shape as the input matrix.
    pub values: Tensor,
    pub trial_id: u64,
    /// Class whose probability the attributions explain.
    pub target_class: String,
    /// Reference-set descriptor (provenance + size).
    pub reference: String,
}

/// Background inputs the attribution is averaged over.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub references: Vec<Tensor>,
    pub provenance: String,
}

impl ReferenceSet {
    /// The single all-zeros reference. Deterministic; used by test suites.
    pub fn zeros(input_shape: (usize, usize)) -> ReferenceSet {
        ReferenceSet {
            references: vec![Tensor::zeros(&[input_shape.0, input_shape.1])],
            provenance: "zeros".to_string(),
        }
    }

    /// Seeded draws (with replacement) from a training split.
    pub fn from_training(trials: &[AUTrial], count: usize, seed: u64) -> Result<ReferenceSet> {
        if trials.is_empty() || count == 0 {
            return Err(Error::InvalidArgument(
                "reference draws need a nonempty training split and count".into(),
            ));
        }
        let mut rng = rng_for(seed, "refs");
        let references = (0..count)
            .map(|_| trials[rng.gen_range(0..trials.len())].matrix.clone())
            .collect();
        Ok(ReferenceSet {
            references,
            provenance: format!("training-sample draw ({count})"),
        })
    }

    fn validate(&self, input_shape: (usize, usize)) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::InvalidArgument("reference set is empty".into()));
        }
        for r in &self.references {
            if r.shape() != [input_shape.0, input_shape.1] {
                return Err(Error::shape(
                    "reference",
                    &[input_shape.0, input_shape.1],
                    r.shape(),
                ));
            }
            if r.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(
                    "references must be normalized to [0, 1] like real inputs".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!("{} x{}", self.provenance, self.references.len())
    }
}

/// What the multipliers explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionTarget {
    /// Post-sigmoid probability of "stuttered" (the default).
    Probability,
    /// The raw logit; makes a linear model's attribution exactly linear.
    Logit,
}

fn elu_scalar(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

fn sigmoid_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Rescale multiplier for a scalar nonlinearity: delta-out over delta-in,
/// with the analytic derivative at the midpoint when the input delta
/// vanishes.
fn rescale_multiplier(
    x: f64,
    r: f64,
    f: impl Fn(f64) -> f64,
    fprime: impl Fn(f64) -> f64,
) -> f64 {
    let dx = x - r;
    if dx.abs() < RESCALE_GUARD {
        fprime(0.5 * (x + r))
    } else {
        (f(x) - f(r)) / dx
    }
}

/// Precomputed attribution engine for one trained model and reference set.
/// Reference activations are forwarded once and reused for every trial.
pub struct Explainer {
    model: Model,
    refs: ReferenceSet,
    ref_traces: Vec<ForwardTrace>,
    target: AttributionTarget,
}

impl Explainer {
    pub fn new(model: &Model, refs: ReferenceSet, target: AttributionTarget) -> Result<Explainer> {
        if !model.trained {
            return Err(Error::InvalidArgument(
                "attribution requires a trained model".into(),
            ));
        }
        refs.validate(model.config.input_shape)?;
        let (h, w) = model.config.input_shape;
        let mut work = model.clone();
        let ref_traces = refs
            .references
            .iter()
            .map(|r| {
                let batch = r.clone().reshaped(&[1, 1, h, w])?;
                work.forward_trace(&batch, ForwardOpts::INFER, None)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Explainer {
            model: model.clone(),
            refs,
            ref_traces,
            target,
        })
    }

    /// Attribution map for one `[17, 87]` input: the mean over references of
    /// multiplier x (input - reference).
    pub fn attribute(&self, input: &Tensor, trial_id: u64) -> Result<AttributionMap> {
        let (h, w) = self.model.config.input_shape;
        if input.shape() != [h, w] {
            return Err(Error::shape("attribution input", &[h, w], input.shape()));
        }
        let batch = input.clone().reshaped(&[1, 1, h, w])?;
        let mut work = self.model.clone();
        let trace_x = work.forward_trace(&batch, ForwardOpts::INFER, None)?;

        let mut mean = Tensor::zeros(&[h, w]);
        for (r, trace_r) in self.refs.references.iter().zip(self.ref_traces.iter()) {
            let single = self.single_reference_attribution(&trace_x, trace_r)?;
            let mut contrib = batch.clone().reshaped(&[h, w])?;
            for ((c, &m), &rv) in contrib
                .data_mut()
                .iter_mut()
                .zip(single.data())
                .zip(r.data())
            {
                *c = (*c - rv) * m;
            }
            mean.axpy(1.0, &contrib)?;
        }
        mean.scale(1.0 / self.refs.references.len() as f64);
        Ok(AttributionMap {
            values: mean,
            trial_id,
            target_class: "stuttered".to_string(),
            reference: self.refs.descriptor(),
        })
    }

    /// Propagates the multiplier from the target back to the input for one
    /// reference; returns the input-shaped multiplier tensor.
    fn single_reference_attribution(
        &self,
        trace_x: &ForwardTrace,
        trace_r: &ForwardTrace,
    ) -> Result<Tensor> {
        let logit_x = trace_x.logits.data()[0];
        let logit_r = trace_r.logits.data()[0];
        let head = match self.target {
            AttributionTarget::Probability => {
                rescale_multiplier(logit_x, logit_r, sigmoid, sigmoid_derivative)
            }
            AttributionTarget::Logit => 1.0,
        };
        let mut mult = Tensor::from_vec(&[1, 1], vec![head])?;
        for (i, layer) in self.model.layers.iter().enumerate().rev() {
            mult = match layer {
                Layer::Elu => {
                    let x_in = &trace_x.caches[i].input;
                    let r_in = &trace_r.caches[i].input;
                    let mut out = mult;
                    for ((m, &x), &r) in out.data_mut().iter_mut().zip(x_in.data()).zip(r_in.data())
                    {
                        *m *= rescale_multiplier(x, r, elu_scalar, elu_derivative);
                    }
                    out
                }
                // Inference-mode dropout is identity.
                Layer::Dropout { .. } => mult,
                // Every other layer is linear at inference time; its
                // input-gradient map is exactly the multiplier propagation.
                _ => layer.backward(&trace_x.caches[i], &mult, false)?.0,
            };
        }
        let (h, w) = self.model.config.input_shape;
        mult.reshaped(&[h, w])
    }
}

/// One-shot DeepSHAP attribution of a single trial.
pub fn deep_shap(
    model: &Model,
    input: &Tensor,
    refs: &ReferenceSet,
    target: AttributionTarget,
) -> Result<AttributionMap> {
    Explainer::new(model, refs.clone(), target)?.attribute(input, 0)
}

/// Frame index holding time `t` milliseconds; `t` must lie in [0, 1500].
/// 1500 maps to 87, the exclusive end frame.
pub fn ms_to_frame(t_ms: f64) -> Result<usize> {
    if !(0.0..=TRIAL_MS).contains(&t_ms) {
        return Err(Error::InvalidArgument(format!(
            "time {t_ms} ms outside [0, {TRIAL_MS}]"
        )));
    }
    Ok((t_ms * FRAMES as f64 / TRIAL_MS).floor() as usize)
}

/// Mean attribution of one AU row over the frames covering
/// `[t0_ms, t1_ms)`.
pub fn window_mean(map: &AttributionMap, window: (f64, f64), au_id: u8) -> Result<f64> {
    let (t0, t1) = window;
    if t0 >= t1 {
        return Err(Error::InvalidArgument(format!(
            "window ({t0}, {t1}) must satisfy t0 < t1"
        )));
    }
    let row = au_row(au_id)
        .ok_or_else(|| Error::InvalidArgument(format!("AU {au_id} not in catalog")))?;
    let f0 = ms_to_frame(t0)?;
    let f1 = ms_to_frame(t1)?;
    if f0 >= f1 {
        return Err(Error::InvalidArgument(format!(
            "window ({t0}, {t1}) covers no frames"
        )));
    }
    let slice = &map.values.data()[row * FRAMES + f0..row * FRAMES + f1];
    Ok(slice.iter().sum::<f64>() / slice.len() as f64)
}

/// Copy of the map with negative attributions zeroed (visualization aid).
pub fn positive_part(map: &AttributionMap) -> AttributionMap {
    let mut out = map.clone();
    for v in out.values.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Writes one attribution map as CSV with columns
/// (au_id, frame, t_start_ms, attribution).
pub fn write_attribution_csv<W: Write>(map: &AttributionMap, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["au_id", "frame", "t_start_ms", "attribution"])?;
    let frame_ms = TRIAL_MS / FRAMES as f64;
    for (row, au) in AU_CATALOG.iter().enumerate() {
        for frame in 0..FRAMES {
            out.write_record([
                au.id.to_string(),
                frame.to_string(),
                (frame as f64 * frame_ms).to_string(),
                map.values.data()[row * FRAMES + frame].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a map previously written by `write_attribution_csv`.
pub fn read_attribution_csv<R: std::io::Read>(reader: R, trial_id: u64) -> Result<AttributionMap> {
    let mut csv_reader = csv::Reader::from_reader(reader);
    let mut values = Tensor::zeros(&[AU_ROWS, FRAMES]);
    let mut seen = 0usize;
    for record in csv_reader.records() {
        let record = record?;
        let au_id: u8 = record[0]
            .parse()
            .map_err(|_| Error::Dataset(format!("bad au_id '{}'", &record[0])))?;
        let frame: usize = record[1]
            .parse()
            .map_err(|_| Error::Dataset(format!("bad frame '{}'", &record[1])))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| Error::Dataset(format!("bad attribution '{}'", &record[3])))?;
        let row = au_row(au_id)
            .ok_or_else(|| Error::Dataset(format!("AU {au_id} not in catalog")))?;
        if frame >= FRAMES {
            return Err(Error::Dataset(format!("frame {frame} out of range")));
        }
        values.data_mut()[row * FRAMES + frame] = value;
        seen += 1;
    }
    if seen != AU_ROWS * FRAMES {
        return Err(Error::Dataset(format!(
            "attribution csv has {seen} cells, expected {}",
            AU_ROWS * FRAMES
        )));
    }
    Ok(AttributionMap {
        values,
        trial_id,
        target_class: "stuttered".to_string(),
        reference: "loaded".to_string(),
    })
}
