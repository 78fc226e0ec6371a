//! Small MLP classifier p(c | x), trained on clean samples and evaluated on
//! x̂0 estimates during guidance.

use crate::autodiff::{Tape, Var};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::optim::Optimizer;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const CLASSIFIER_HIDDEN_DEFAULT: &[usize] = &[64];

#[derive(Debug, Clone)]
pub struct Classifier {
    input_dim: usize,
    classes: usize,
    hidden: Vec<usize>,
    /// (weights, bias) per layer, ending in the K-way logit layer.
    layers: Vec<(Tensor, Tensor)>,
}

pub struct TapedClassifierParams {
    vars: Vec<Var>,
}

impl Classifier {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut c = Self::zeros(input_dim, hidden, classes)?;
        for (w, _) in &mut c.layers {
            let fan_in = w.shape()[0];
            *w = rng.gaussian(w.shape()).scaled(1.0 / (fan_in as f64).sqrt());
        }
        Ok(c)
    }

    /// Zero parameters: the uniform predictor (NLL = ln K for every class).
    pub fn zeros(input_dim: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "classifier needs at least 2 classes, got {classes}"
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let layers = dims
            .windows(2)
            .map(|w| (Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])))
            .collect();
        Ok(Classifier {
            input_dim,
            classes,
            hidden: hidden.to_vec(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|(w, b)| [w as &mut Tensor, b as &mut Tensor])
            .collect()
    }

    pub fn push_params(&self, tape: &mut Tape, requires_grad: bool) -> TapedClassifierParams {
        TapedClassifierParams {
            vars: self
                .params()
                .into_iter()
                .map(|p| tape.input(p.clone(), requires_grad))
                .collect(),
        }
    }

    /// Logits for a [B, d] batch.
    pub fn logits_taped(
        &self,
        tape: &mut Tape,
        params: &TapedClassifierParams,
        x: Var,
    ) -> Result<Var> {
        let (_, d) = tape.value(x).dims2("classifier input")?;
        if d != self.input_dim {
            return Err(Error::invalid(format!(
                "classifier input dim {d}, expected {}",
                self.input_dim
            )));
        }
        let mut h = x;
        let n_layers = self.layers.len();
        for li in 0..n_layers {
            let w = params.vars[2 * li];
            let b = params.vars[2 * li + 1];
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if li + 1 < n_layers {
                h = tape.silu(h)?;
            }
        }
        Ok(h)
    }

    /// Log-probabilities for a [B, d] batch (parameters pushed as constants).
    pub fn log_probs_taped(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let params = self.push_params(tape, false);
        let logits = self.logits_taped(tape, &params, x)?;
        tape.row_log_softmax(logits)
    }

    /// Log-probabilities of one flat sample.
    pub fn log_probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let row = x.reshaped(&[1, self.input_dim])?;
        let xv = tape.constant(row);
        let lp = self.log_probs_taped(&mut tape, xv)?;
        tape.value(lp).reshaped(&[self.classes])
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        let lp = self.log_probs(x)?;
        let mut best = 0;
        for i in 1..self.classes {
            if lp.data()[i] > lp.data()[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Mean NLL training loss over a labeled batch, on tape.
pub fn nll_loss(
    classifier: &Classifier,
    tape: &mut Tape,
    params: &TapedClassifierParams,
    x: &Tensor,
    labels: &[usize],
) -> Result<Var> {
    let batch = labels.len();
    let xv = tape.constant(x.clone());
    let logits = classifier.logits_taped(tape, params, xv)?;
    let logp = tape.row_log_softmax(logits)?;
    let mut pick = Tensor::zeros(&[batch, classifier.classes()]);
    for (i, &l) in labels.iter().enumerate() {
        pick.data_mut()[i * classifier.classes() + l] = -1.0 / batch as f64;
    }
    let pick = tape.constant(pick);
    let prod = tape.mul(logp, pick)?;
    tape.sum(prod)
}

/// Train on clean labeled samples; the last 20% (at least one sample) is
/// held out and the held-out accuracy is returned with the model.
pub fn train_classifier(
    data: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Classifier, f64)> {
    cfg.validate()?;
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid("classifier training needs labels"))?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::invalid(
            "classifier training needs at least 2 distinct classes".to_string(),
        ));
    }
    let n = data.data.shape()[0];
    let d = data.dim;
    let holdout = (n / 5).max(1);
    let n_train = n - holdout;
    if n_train == 0 {
        return Err(Error::invalid("dataset too small to split"));
    }

    let mut model = Classifier::new(d, hidden, classes, rng)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    for step in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.below(n_train)).collect();
        let mut rows = Vec::with_capacity(cfg.batch * d);
        let mut ls = Vec::with_capacity(cfg.batch);
        for &i in &idx {
            rows.extend_from_slice(&data.data.data()[i * d..(i + 1) * d]);
            ls.push(labels[i]);
        }
        let batch = Tensor::new(vec![cfg.batch, d], rows)?;
        let mut tape = Tape::new();
        let params = model.push_params(&mut tape, true);
        let loss = nll_loss(&model, &mut tape, &params, &batch, &ls)?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "classifier loss".into(),
            });
        }
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = params
            .vars
            .iter()
            .map(|v| grads.get_or_zero(&tape, *v))
            .collect();
        let mut prefs = model.params_mut();
        opt.step(&mut prefs, &gs)?;
    }

    let mut correct = 0usize;
    for i in n_train..n {
        let x = Tensor::new(
            vec![d],
            data.data.data()[i * d..(i + 1) * d].to_vec(),
        )?;
        if model.predict(&x)? == labels[i] {
            correct += 1;
        }
    }
    let acc = correct as f64 / holdout as f64;
    Ok((model, acc))
}
