//! MLP digit classifier used to label generated MNIST samples.

use std::sync::Arc;

use super::{EvalError, N_CLASSES};
use crate::autodiff::{Array2, Graph};
use crate::models::{build_mlp_with, forward_values, mlp_forward, Activation, Checkpoint, MlpParams, MlpSpec, OutputTransform, LEAKY_SLOPE};
use crate::sampler::{MnistData, Rng};
use crate::trainer::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Examples taken from the end of the training data for the accuracy estimate.
    pub holdout: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![512, 256],
            lr: 1e-3,
            batch: 128,
            epochs: 4,
            holdout: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub spec: MlpSpec,
    pub params: MlpParams,
    /// Accuracy on the held-out split; `None` until trained.
    pub held_out_accuracy: Option<f64>,
}

impl Classifier {
    pub fn untrained(input_dim: usize, cfg: &ClassifierConfig) -> Result<Self, EvalError> {
        let mut sizes = vec![input_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(N_CLASSES);
        let spec = MlpSpec::new(sizes, Activation::LeakyRelu(LEAKY_SLOPE), OutputTransform::Linear)?;
        let params = build_mlp_with(&spec, &mut Rng::new(cfg.seed));
        Ok(Self {
            spec,
            params,
            held_out_accuracy: None,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::default();
        ckpt.set_meta("classifier", self.spec.describe());
        if let Some(acc) = self.held_out_accuracy {
            ckpt.set_meta("held_out_accuracy", format!("{acc:.17e}"));
        }
        for (name, t) in MlpParams::tensor_names("classifier", self.spec.n_layers()).into_iter().zip(self.params.tensors()) {
            ckpt.push(name, t.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, EvalError> {
        let desc = ckpt
            .meta("classifier")
            .ok_or_else(|| EvalError::Contract("checkpoint has no classifier description".into()))?;
        let spec = MlpSpec::parse_description(desc)?;
        let mut params = MlpParams::zeros(&spec);
        for (name, slot) in MlpParams::tensor_names("classifier", spec.n_layers()).iter().zip(params.tensors_mut()) {
            match ckpt.tensor(name) {
                Some(t) if t.shape() == slot.shape() => *slot = t.clone(),
                _ => return Err(EvalError::Contract(format!("classifier tensor {name} missing or misshapen"))),
            }
        }
        let held_out_accuracy = match ckpt.meta("held_out_accuracy") {
            Some(v) => Some(v.parse::<f64>().map_err(|_| EvalError::Contract(format!("bad accuracy '{v}'")))?),
            None => None,
        };
        Ok(Self {
            spec,
            params,
            held_out_accuracy,
        })
    }

    fn predict(&self, images: &Array2) -> Result<Vec<u8>, EvalError> {
        if images.cols() != self.spec.input_dim() {
            return Err(EvalError::Columns {
                expected: self.spec.input_dim(),
                got: images.cols(),
            });
        }
        let mut labels = Vec::with_capacity(images.rows());
        // Chunked to bound the graph size.
        for start in (0..images.rows()).step_by(1000) {
            let idx: Vec<usize> = (start..(start + 1000).min(images.rows())).collect();
            let logits = forward_values(&self.spec, &self.params, &images.select_rows(&idx))?;
            for r in 0..logits.rows() {
                let row = logits.row(r);
                let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                labels.push(best as u8);
            }
        }
        Ok(labels)
    }
}

/// Arg-max class of every image. Fails for a classifier that was never trained.
pub fn classify_digits(classifier: &Classifier, images: &Array2) -> Result<Vec<u8>, EvalError> {
    if classifier.held_out_accuracy.is_none() {
        return Err(EvalError::Contract("classifier has not been trained".into()));
    }
    classifier.predict(images)
}

/// Cross-entropy training with Adam on all but the last `holdout` examples,
/// then accuracy on those.
pub fn train_classifier(data: &MnistData, cfg: &ClassifierConfig) -> Result<Classifier, EvalError> {
    if cfg.holdout == 0 || cfg.holdout >= data.len() || cfg.batch == 0 {
        return Err(EvalError::Contract(format!(
            "need 0 < holdout < {} and batch > 0, got holdout {} batch {}",
            data.len(),
            cfg.holdout,
            cfg.batch
        )));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l as usize >= N_CLASSES) {
        return Err(EvalError::BadLabel(bad));
    }
    let (train, held_out) = data.split_tail(cfg.holdout);
    let mut clf = Classifier::untrained(data.images.cols(), cfg)?;
    let mut rng = Rng::new(cfg.seed).jumped(1);
    let mut adam = AdamState::new(&clf.params.tensors());
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        for chunk in order.chunks(cfg.batch) {
            let x = train.images.select_rows(chunk);
            let targets: Arc<[(usize, usize)]> = chunk.iter().enumerate().map(|(r, &i)| (r, train.labels[i] as usize)).collect();
            let mut g = Graph::new();
            let p = clf.params.bind(&mut g, true);
            let xv = g.constant(x);
            let logits = mlp_forward(&mut g, &clf.spec, &p, xv)?;
            let logp = g.log_softmax_rows(logits)?;
            let picked = g.gather_entries(logp, targets)?;
            let mean = g.mean_all(picked)?;
            let loss = g.scale(mean, -1.0)?;
            let grads = g.backward(loss)?;
            adam_step(&mut adam, clf.params.tensors_mut(), &p.grads(&g, &grads), &adam_cfg)?;
        }
    }
    let predicted = clf.predict(&held_out.images)?;
    let correct = predicted.iter().zip(&held_out.labels).filter(|(a, b)| a == b).count();
    clf.held_out_accuracy = Some(correct as f64 / held_out.len() as f64);
    Ok(clf)
}
