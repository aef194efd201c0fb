use serde::{Deserialize, Serialize};

use super::encoder::{init_tensor, BatchOutputs, EncoderModel, LayerOutputs};
use crate::error::{Error, Result};
use crate::numeric::{Element, ParamId, Rng, Tape, Tensor, Var};

/// Which hidden layers feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerStrategy {
    /// One layer by index: 0 is the embedding output, `l` the output of block `l`.
    Single(usize),
    /// The topmost block.
    Top,
    /// Blocks 1..=4 (fewer when the model is shallower).
    First4,
    /// The last four blocks (fewer when the model is shallower).
    Last4,
    /// Every block, 1..=L.
    All,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    #[default]
    Concat,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSelection {
    pub strategy: LayerStrategy,
    #[serde(default)]
    pub combiner: Combiner,
}

impl Default for LayerSelection {
    fn default() -> Self {
        Self::top()
    }
}

impl LayerSelection {
    pub fn top() -> Self {
        Self {
            strategy: LayerStrategy::Top,
            combiner: Combiner::Concat,
        }
    }

    pub fn single(layer: usize) -> Self {
        Self {
            strategy: LayerStrategy::Single(layer),
            combiner: Combiner::Concat,
        }
    }

    pub fn new(strategy: LayerStrategy, combiner: Combiner) -> Self {
        Self { strategy, combiner }
    }

    /// Layer indices read, for a model with `layers` blocks.
    pub fn layers(&self, layers: usize) -> Result<Vec<usize>> {
        Ok(match self.strategy {
            LayerStrategy::Single(l) if l > layers => {
                return Err(Error::InvalidConfig(format!(
                    "layer {l} outside 0..={layers}"
                )))
            }
            LayerStrategy::Single(l) => vec![l],
            LayerStrategy::Top => vec![layers],
            LayerStrategy::First4 => (1..=layers.min(4)).collect(),
            LayerStrategy::Last4 => (layers.saturating_sub(4) + 1..=layers).collect(),
            LayerStrategy::All => (1..=layers).collect(),
        })
    }

    /// Feature width for hidden size `hidden`.
    pub fn width(&self, layers: usize, hidden: usize) -> Result<usize> {
        let n = self.layers(layers)?.len();
        Ok(match self.combiner {
            Combiner::Concat => n * hidden,
            Combiner::Mean | Combiner::Max => hidden,
        })
    }
}

/// Combines `[batch × hidden]` parts per the combiner.
fn combine_parts<T: Element>(tape: &mut Tape<T>, parts: &[Var], combiner: Combiner) -> Result<Var> {
    if parts.len() == 1 {
        return Ok(parts[0]);
    }
    match combiner {
        Combiner::Concat => tape.concat_cols(parts),
        Combiner::Max => tape.elem_max(parts),
        Combiner::Mean => {
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = tape.add(acc, p)?;
            }
            Ok(tape.scale(acc, 1.0 / parts.len() as f64))
        }
    }
}

/// [CLS] features `[batch × width]` from a batch forward pass.
pub fn select_features<T: Element>(
    tape: &mut Tape<T>,
    out: &BatchOutputs,
    sel: &LayerSelection,
) -> Result<Var> {
    let idx = sel.layers(out.layers.len() - 1)?;
    let rows = out.cls_rows();
    let mut parts = Vec::with_capacity(idx.len());
    for l in idx {
        parts.push(tape.select_rows(out.layers[l], &rows)?);
    }
    combine_parts(tape, &parts, sel.combiner)
}

/// [CLS] feature vector from materialized layer outputs of one sequence.
pub fn select_features_from<T: Element>(outputs: &LayerOutputs<T>, sel: &LayerSelection) -> Result<Vec<T>> {
    let idx = sel.layers(outputs.states.len() - 1)?;
    let mut tape = Tape::new();
    let mut parts = Vec::with_capacity(idx.len());
    for l in idx {
        let s = &outputs.states[l];
        parts.push(tape.constant(Tensor::new(vec![1, s.cols()], s.row(0).to_vec())?));
    }
    let v = combine_parts(&mut tape, &parts, sel.combiner)?;
    Ok(tape.value(v).data().to_vec())
}

/// Softmax classifier over a feature vector: `softmax(W·h + b)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassifierHead {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_width: usize,
    pub classes: usize,
}

impl ClassifierHead {
    pub fn weight_name(name: &str) -> String {
        format!("head.{name}.weight")
    }

    pub fn bias_name(name: &str) -> String {
        format!("head.{name}.bias")
    }

    /// Adds a fresh head to the model's parameter store.
    pub fn attach<T: Element>(
        model: &mut EncoderModel<T>,
        name: &str,
        in_width: usize,
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidConfig(format!("head `{name}` needs at least 2 classes")));
        }
        let weight = model
            .params
            .insert(Self::weight_name(name), init_tensor(&[in_width, classes], rng))?;
        let bias = model.params.insert(Self::bias_name(name), Tensor::zeros(&[classes]))?;
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_width,
            classes,
        })
    }

    /// Re-binds a head already present in the store (after loading a checkpoint).
    pub fn find<T: Element>(model: &EncoderModel<T>, name: &str) -> Result<Self> {
        let weight = model.params.expect_id(&Self::weight_name(name))?;
        let bias = model.params.expect_id(&Self::bias_name(name))?;
        let shape = model.params.value(weight).shape();
        Ok(Self {
            name: name.to_string(),
            weight,
            bias,
            in_width: shape[0],
            classes: shape[1],
        })
    }

    /// Logits `[batch × classes]`.
    pub fn logits<T: Element>(&self, tape: &mut Tape<T>, model: &EncoderModel<T>, features: Var) -> Result<Var> {
        let width = tape.value(features).cols();
        if width != self.in_width {
            return Err(Error::ShapeMismatch {
                op: "classify",
                lhs: tape.shape(features).to_vec(),
                rhs: vec![self.in_width, self.classes],
            });
        }
        let w = tape.param(&model.params, self.weight);
        let b = tape.param(&model.params, self.bias);
        let y = tape.matmul(features, w)?;
        tape.add_row(y, b)
    }

    /// Class probabilities for one feature vector.
    pub fn classify<T: Element>(&self, model: &EncoderModel<T>, features: &[T]) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let f = tape.constant(Tensor::new(vec![1, features.len()], features.to_vec())?);
        let logits = self.logits(&mut tape, model, f)?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).data().to_vec())
    }
}
