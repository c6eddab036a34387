//! Two-layer MLP head: `linear -> ReLU -> dropout -> linear`, trained with
//! mean cross-entropy and Adam.
//!
//! Parameters live in one flat buffer laid out as `W1 (d x h)`, `b1 (h)`,
//! `W2 (h x K)`, `b2 (K)`, all row-major. Gradients and optimizer moments use
//! the same layout so the optimizer works on plain slices.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature_store::{parse_err, write_atomic, FeatureDataset};
use crate::oversampling::BalancedSampler;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network dimensions: input `d`, hidden `h`, classes `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl MlpShape {
    pub fn num_params(&self) -> usize {
        self.b2().end
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.input * self.hidden
    }

    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }

    pub fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.hidden * self.classes
    }

    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    shape: MlpShape,
    dropout: f64,
    labels: Vec<String>,
    params: Vec<T>,
}

/// Gradient of the mean batch loss, laid out like [`MlpModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub shape: MlpShape,
    pub loss: T,
    pub values: Vec<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn w1(&self) -> &[T] {
        &self.values[self.shape.w1()]
    }

    pub fn b1(&self) -> &[T] {
        &self.values[self.shape.b1()]
    }

    pub fn w2(&self) -> &[T] {
        &self.values[self.shape.w2()]
    }

    pub fn b2(&self) -> &[T] {
        &self.values[self.shape.b2()]
    }
}

struct Activations<T> {
    pre: Vec<T>,
    /// Post-ReLU, post-dropout hidden activations.
    hidden: Vec<T>,
    /// Dropout scale per hidden unit (0 or 1/(1-p)); empty when inactive.
    mask: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> MlpModel<T> {
    /// All-zero parameters.
    pub fn zeros(shape: MlpShape, dropout: f64, labels: Vec<String>) -> Result<Self> {
        if shape.input == 0 || shape.hidden == 0 || shape.classes == 0 {
            return Err(Error::Config(format!("invalid network shape {shape:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        if labels.len() != shape.classes {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: shape.classes,
            });
        }
        Ok(Self {
            shape,
            dropout,
            labels,
            params: vec![T::zero(); shape.num_params()],
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn init(shape: MlpShape, dropout: f64, labels: Vec<String>, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(shape, dropout, labels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (range, fan_in, fan_out) in [
            (shape.w1(), shape.input, shape.hidden),
            (shape.w2(), shape.hidden, shape.classes),
        ] {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut model.params[range] {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn from_params(shape: MlpShape, dropout: f64, labels: Vec<String>, params: Vec<T>) -> Result<Self> {
        let mut model = Self::zeros(shape, dropout, labels)?;
        if params.len() != shape.num_params() {
            return Err(Error::LengthMismatch {
                left: params.len(),
                right: shape.num_params(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("model parameters must be finite".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn w1(&self) -> &[T] {
        &self.params[self.shape.w1()]
    }

    pub fn b1(&self) -> &[T] {
        &self.params[self.shape.b1()]
    }

    pub fn w2(&self) -> &[T] {
        &self.params[self.shape.w2()]
    }

    pub fn b2(&self) -> &[T] {
        &self.params[self.shape.b2()]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.shape.input {
            return Err(Error::DimensionMismatch {
                expected: self.shape.input,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn draw_mask<R: Rng + ?Sized>(&self, mode: Mode, rng: &mut R) -> Vec<T> {
        if mode == Mode::Eval || self.dropout == 0.0 {
            return Vec::new();
        }
        let keep = 1.0 - self.dropout;
        let scale = T::lit(1.0 / keep);
        (0..self.shape.hidden)
            .map(|_| if rng.gen_bool(keep) { scale } else { T::zero() })
            .collect()
    }

    fn forward_with_mask(&self, x: &[T], mask: Vec<T>) -> Activations<T> {
        let MlpShape { hidden: h, classes: k, .. } = self.shape;
        let w1 = self.w1();
        let mut pre = self.b1().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            for (acc, &w) in pre.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                *acc += xi * w;
            }
        }
        let mut hidden: Vec<T> = pre.iter().map(|&z| z.max(T::zero())).collect();
        if !mask.is_empty() {
            for (a, &m) in hidden.iter_mut().zip(&mask) {
                *a *= m;
            }
        }
        let w2 = self.w2();
        let mut logits = self.b2().to_vec();
        for (j, &aj) in hidden.iter().enumerate() {
            if aj == T::zero() {
                continue;
            }
            for (acc, &w) in logits.iter_mut().zip(&w2[j * k..(j + 1) * k]) {
                *acc += aj * w;
            }
        }
        Activations {
            pre,
            hidden,
            mask,
            logits,
        }
    }

    /// Logits for one input. Dropout (inverted, scaled by `1/(1-p)`) is
    /// applied only in [`Mode::Train`]; eval mode never touches `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[T], mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mask = self.draw_mask(mode, rng);
        Ok(self.forward_with_mask(x, mask).logits)
    }

    /// Hidden-layer output after ReLU and (in train mode) dropout.
    pub fn hidden_activations<R: Rng + ?Sized>(&self, x: &[T], mode: Mode, rng: &mut R) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mask = self.draw_mask(mode, rng);
        Ok(self.forward_with_mask(x, mask).hidden)
    }

    /// Eval-mode logits.
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(self.forward_with_mask(x, Vec::new()).logits)
    }

    /// Argmax of eval-mode logits, ties to the lowest class index.
    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    pub fn predict_dataset(&self, dataset: &FeatureDataset<T>) -> Result<Vec<usize>> {
        dataset.rows().map(|(_, x)| self.predict(x)).collect()
    }

    /// Mean cross-entropy over `batch` and its gradient. One dropout mask is
    /// drawn per sample and reused for that sample's backward pass.
    pub fn backward<R: Rng + ?Sized>(&self, batch: &[(&[T], usize)], mode: Mode, rng: &mut R) -> Result<Gradients<T>> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let MlpShape {
            input: d,
            hidden: h,
            classes: k,
        } = self.shape;
        let mut grad = vec![T::zero(); self.shape.num_params()];
        let mut loss = T::zero();
        let w2 = self.w2();
        let (r_w1, r_b1, r_w2, r_b2) = (self.shape.w1(), self.shape.b1(), self.shape.w2(), self.shape.b2());

        for &(x, label) in batch {
            self.check_input(x)?;
            if label >= k {
                return Err(Error::ClassOutOfRange { index: label, classes: k });
            }
            let mask = self.draw_mask(mode, rng);
            let act = self.forward_with_mask(x, mask);
            loss += cross_entropy(&act.logits, label)?;

            let mut dlogits = softmax(&act.logits);
            dlogits[label] -= T::one();

            for (g, &dl) in grad[r_b2.clone()].iter_mut().zip(&dlogits) {
                *g += dl;
            }
            let gw2 = &mut grad[r_w2.clone()];
            for (j, &aj) in act.hidden.iter().enumerate() {
                if aj == T::zero() {
                    continue;
                }
                for (g, &dl) in gw2[j * k..(j + 1) * k].iter_mut().zip(&dlogits) {
                    *g += aj * dl;
                }
            }
            let dpre: Vec<T> = (0..h)
                .map(|j| {
                    if act.pre[j] <= T::zero() {
                        return T::zero();
                    }
                    let m = if act.mask.is_empty() { T::one() } else { act.mask[j] };
                    if m == T::zero() {
                        return T::zero();
                    }
                    let back: T = w2[j * k..(j + 1) * k].iter().zip(&dlogits).map(|(&w, &dl)| w * dl).sum();
                    back * m
                })
                .collect();
            for (g, &dz) in grad[r_b1.clone()].iter_mut().zip(&dpre) {
                *g += dz;
            }
            let gw1 = &mut grad[r_w1.clone()];
            for i in 0..d {
                let xi = x[i];
                if xi == T::zero() {
                    continue;
                }
                for (g, &dz) in gw1[i * h..(i + 1) * h].iter_mut().zip(&dpre) {
                    *g += xi * dz;
                }
            }
        }
        let n = T::from_usize_lossy(batch.len());
        for g in &mut grad {
            *g /= n;
        }
        Ok(Gradients {
            shape: self.shape,
            loss: loss / n,
            values: grad,
        })
    }

    pub fn adam_step(&mut self, grads: &Gradients<T>, state: &mut AdamState<T>, cfg: &TrainConfig) {
        assert_eq!(grads.shape, self.shape, "gradient shape does not match model");
        adam_update(&mut self.params, &grads.values, state, cfg);
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]`, via log-sum-exp with max subtraction.
pub fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<T> {
    if label >= logits.len() {
        return Err(Error::ClassOutOfRange {
            index: label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    Ok((max + sum.ln()) - logits[label])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden_size: usize,
    pub dropout: f64,
    /// Seeds mini-batch order and dropout masks.
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden_size: 256,
            dropout: 0.5,
            seed: 0,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return bad("adam epsilon must be positive".into());
        }
        if self.hidden_size < 1 {
            return bad("hidden_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update over flat parameter and gradient slices.
pub fn adam_update<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let t = state.t as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// How each epoch's sample sequence is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Every sample once per epoch; shuffled when `shuffle_each_epoch` is set.
    Epoch,
    /// `n` class-balanced draws with replacement per epoch.
    Balanced,
}

/// Result of a training run; `losses` holds the mean batch loss of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: MlpModel<T>,
    pub losses: Vec<T>,
}

pub fn train<T: Scalar>(dataset: &FeatureDataset<T>, model_init_seed: u64, cfg: &TrainConfig) -> Result<MlpModel<T>> {
    Ok(train_with(dataset, model_init_seed, cfg, Sampling::Epoch)?.model)
}

/// Runs `epochs x ceil(n / batch_size)` Adam steps. The final short batch is
/// kept.
pub fn train_with<T: Scalar>(
    dataset: &FeatureDataset<T>,
    model_init_seed: u64,
    cfg: &TrainConfig,
    sampling: Sampling,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.num_classes() < 2 {
        return Err(Error::Config("training needs at least two classes".into()));
    }
    let shape = MlpShape {
        input: dataset.dim(),
        hidden: cfg.hidden_size,
        classes: dataset.num_classes(),
    };
    let mut model = MlpModel::init(shape, cfg.dropout, dataset.classes().to_vec(), model_init_seed)?;
    let mut state = AdamState::new(shape.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler = match sampling {
        Sampling::Balanced => Some(BalancedSampler::new(dataset)?),
        Sampling::Epoch => None,
    };
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(cfg.epochs * n.div_ceil(cfg.batch_size));

    for _ in 0..cfg.epochs {
        match &sampler {
            Some(s) => order = s.draw(n, &mut rng),
            None if cfg.shuffle_each_epoch => order.shuffle(&mut rng),
            None => {}
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[T], usize)> = chunk.iter().map(|&i| (dataset.row(i), dataset.label(i))).collect();
            let grads = model.backward(&batch, Mode::Train, &mut rng)?;
            losses.push(grads.loss);
            model.adam_step(&grads, &mut state, cfg);
        }
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Config("training diverged: non-finite parameters".into()));
    }
    Ok(TrainOutcome { model, losses })
}

const CHECKPOINT_MAGIC: &str = "mlp-checkpoint v1";

fn write_matrix<T: Scalar>(out: &mut String, name: &str, values: &[T], rows: usize, cols: usize) {
    let _ = writeln!(out, "{name} {rows} {cols}");
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols].iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

/// Writes the model as text: a header with shapes and labels, then each
/// tensor as `name rows cols` followed by row-major values.
pub fn save_checkpoint<T: Scalar>(model: &MlpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let s = model.shape;
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "input {}", s.input);
    let _ = writeln!(out, "hidden {}", s.hidden);
    let _ = writeln!(out, "classes {}", s.classes);
    let _ = writeln!(out, "dropout {}", model.dropout);
    let _ = writeln!(out, "labels {}", model.labels.join(","));
    write_matrix(&mut out, "w1", model.w1(), s.input, s.hidden);
    write_matrix(&mut out, "b1", model.b1(), 1, s.hidden);
    write_matrix(&mut out, "w2", model.w2(), s.hidden, s.classes);
    write_matrix(&mut out, "b2", model.b2(), 1, s.classes);
    write_atomic(path.as_ref(), |w: &mut dyn Write| w.write_all(out.as_bytes()))
}

struct LineReader<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| parse_err(self.path, 0, format!("unexpected end of checkpoint, expected {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next(key)?;
        let rest = line
            .strip_prefix(key)
            .ok_or_else(|| parse_err(self.path, no, format!("expected `{key}`")))?;
        Ok((no, rest.trim()))
    }

    fn number<V: std::str::FromStr>(&mut self, key: &str) -> Result<V> {
        let (no, v) = self.field(key)?;
        v.parse()
            .map_err(|_| parse_err(self.path, no, format!("bad {key} value {v:?}")))
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<MlpModel<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = LineReader {
        path,
        lines: text.lines().enumerate(),
    };

    let (no, magic) = r.next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(parse_err(path, no, "not an mlp checkpoint"));
    }
    let input: usize = r.number("input")?;
    let hidden: usize = r.number("hidden")?;
    let classes: usize = r.number("classes")?;
    let dropout: f64 = r.number("dropout")?;
    let (_, labels) = r.field("labels")?;
    let labels: Vec<String> = labels.split(',').map(str::to_string).collect();
    let shape = MlpShape { input, hidden, classes };

    let mut params = Vec::with_capacity(shape.num_params());
    for (name, rows, cols) in [("w1", input, hidden), ("b1", 1, hidden), ("w2", hidden, classes), ("b2", 1, classes)] {
        let (no, header) = r.field(name)?;
        if header != format!("{rows} {cols}") {
            return Err(parse_err(path, no, format!("{name}: expected shape {rows} {cols}, got {header}")));
        }
        for _ in 0..rows {
            let (no, row) = r.next(name)?;
            let before = params.len();
            for tok in row.split_whitespace() {
                params.push(tok.parse::<T>().map_err(|_| parse_err(path, no, format!("bad number {tok:?}")))?);
            }
            if params.len() - before != cols {
                return Err(parse_err(path, no, format!("{name}: expected {cols} values")));
            }
        }
    }
    MlpModel::from_params(shape, dropout, labels, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    fn shape(d: usize, h: usize, k: usize) -> MlpShape {
        MlpShape {
            input: d,
            hidden: h,
            classes: k,
        }
    }

    fn random_model(seed: u64, s: MlpShape, dropout: f64) -> MlpModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..s.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        MlpModel::from_params(s, dropout, labels(s.classes), params).unwrap()
    }

    /// Loop-based reference forward pass, written independently of the
    /// optimized path.
    fn oracle_logits(m: &MlpModel<f64>, x: &[f64]) -> Vec<f64> {
        let s = m.shape();
        let mut hidden = vec![0.0; s.hidden];
        for j in 0..s.hidden {
            let mut z = m.b1()[j];
            for i in 0..s.input {
                z += x[i] * m.w1()[i * s.hidden + j];
            }
            hidden[j] = if z > 0.0 { z } else { 0.0 };
        }
        (0..s.classes)
            .map(|k| {
                let mut z = m.b2()[k];
                for j in 0..s.hidden {
                    z += hidden[j] * m.w2()[j * s.classes + k];
                }
                z
            })
            .collect()
    }

    #[test]
    fn zero_model_outputs_zero_and_predicts_first_class() {
        let m = MlpModel::<f64>::zeros(shape(3, 4, 5), 0.5, labels(5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.forward(&[1.0, -2.0, 3.0], Mode::Train, &mut rng).unwrap(), vec![0.0; 5]);
        assert_eq!(m.predict(&[9.0, 9.0, 9.0]).unwrap(), 0);
    }

    #[test]
    fn one_hot_bias_selects_class() {
        let mut m = MlpModel::<f64>::zeros(shape(2, 3, 4), 0.0, labels(4)).unwrap();
        let r = m.shape().b2();
        m.params_mut()[r.start + 2] = 1.0;
        assert_eq!(m.predict(&[0.3, 0.4]).unwrap(), 2);
    }

    #[test]
    fn no_dropout_train_equals_eval() {
        let m = random_model(1, shape(5, 7, 3), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = [0.1, -0.4, 2.0, 0.0, 1.5];
        assert_eq!(m.forward(&x, Mode::Train, &mut rng).unwrap(), m.logits(&x).unwrap());
    }

    #[test]
    fn eval_forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let m = random_model(seed, shape(6, 9, 4), 0.5);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for (a, b) in m.logits(&x).unwrap().iter().zip(oracle_logits(&m, &x)) {
                assert!((a - b).abs() < 1e-10);
            }
            assert_eq!(m.predict(&x).unwrap(), argmax(&oracle_logits(&m, &x)));
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = random_model(0, shape(3, 2, 2), 0.0);
        assert!(matches!(m.logits(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in 2..=10 {
            let l = vec![0.37; k];
            assert!((cross_entropy(&l, k - 1).unwrap() - (k as f64).ln()).abs() < 1e-12);
        }
        assert!((cross_entropy(&[0.0f64; 4], 0).unwrap() - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_are_stable() {
        let l = [0.0f64, 1000.0, 0.0];
        let loss = cross_entropy(&l, 1).unwrap();
        assert!(loss.is_finite() && loss >= 0.0 && loss < 1e-12);
        let wrong = cross_entropy(&[-1000.0f64, 1000.0], 0).unwrap();
        assert!((wrong - 2000.0).abs() < 1e-9);
        assert!(cross_entropy(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.gen_range(1..12);
            let l: Vec<f64> = (0..k).map(|_| rng.gen_range(-500.0..500.0)).collect();
            let s: f64 = softmax(&l).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_bias_gradient_by_hand() {
        // 2 classes, 1 sample, label 1: dL/db2 = softmax(0,0) - e1 = (0.5, -0.5)
        let m = MlpModel::<f64>::zeros(shape(2, 3, 2), 0.0, labels(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = m.backward(&[(&[1.0, -1.0][..], 1)], Mode::Eval, &mut rng).unwrap();
        assert_eq!(g.b2(), [0.5, -0.5]);
        assert!(g.w1().iter().chain(g.w2()).chain(g.b1()).all(|&v| v == 0.0));
        assert!((g.loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let m = random_model(7, shape(4, 6, 3), 0.0);
        let x1 = [0.5, -1.0, 2.0, 0.1];
        let x2 = [-0.2, 0.3, 0.0, 1.1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let single = m.backward(&[(&x1[..], 0), (&x2[..], 2)], Mode::Eval, &mut rng).unwrap();
        let double = m
            .backward(&[(&x1[..], 0), (&x2[..], 2), (&x1[..], 0), (&x2[..], 2)], Mode::Eval, &mut rng)
            .unwrap();
        for (a, b) in single.values.iter().zip(&double.values) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.3, -1.2, 4.0];
        let mut st = AdamState::new(3);
        adam_update(&mut p, &[0.0; 3], &mut st, &cfg);
        assert_eq!(p, vec![0.3, -1.2, 4.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        // m_hat = g, v_hat = g², so the step is lr * g / (|g| + eps)
        let cfg = TrainConfig::default();
        for g in [3.0, -0.02, 150.0] {
            let mut p = vec![1.0];
            let mut st = AdamState::new(1);
            adam_update(&mut p, &[g], &mut st, &cfg);
            let step: f64 = 1.0 - p[0];
            let expected = cfg.learning_rate * g / (f64::abs(g) + cfg.epsilon);
            assert!((step - expected).abs() < 1e-15, "{step} vs {expected}");
            assert!((step.abs() - cfg.learning_rate).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut w = vec![1.0f64];
        let mut st = AdamState::new(1);
        for _ in 0..1000 {
            let g = [2.0 * w[0]];
            adam_update(&mut w, &g, &mut st, &cfg);
        }
        assert!(w[0].abs() < 0.05, "{}", w[0]);
    }

    #[test]
    fn config_validation() {
        let ds = FeatureDataset::from_labeled_rows(1, &[("a", vec![0.0]), ("b", vec![1.0])]).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, 0, &cfg), Err(Error::Config(_))));
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        let empty = FeatureDataset::<f64>::empty(1, vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(train(&empty, 0, &TrainConfig::default()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn step_count_and_determinism() {
        let rows: Vec<(&str, Vec<f64>)> = (0..70)
            .map(|i| (if i % 3 == 0 { "a" } else { "b" }, vec![i as f64 / 70.0, 1.0 - i as f64 / 35.0]))
            .collect();
        let ds = FeatureDataset::from_labeled_rows(2, &rows).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 32,
            hidden_size: 8,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train_with(&ds, 9, &cfg, Sampling::Epoch).unwrap();
        let b = train_with(&ds, 9, &cfg, Sampling::Epoch).unwrap();
        assert_eq!(a.losses.len(), 3 * 3);
        assert_eq!(a, b);
        let c = train_with(&ds, 9, &cfg, Sampling::Balanced).unwrap();
        assert_eq!(c.losses.len(), 9);
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(11, shape(3, 5, 2), 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        save_checkpoint(&m, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("mlp-checkpoint v1\ninput 3\nhidden 5\nclasses 2\ndropout 0.25\nlabels c0,c1\nw1 3 5\n"));
        assert_eq!(load_checkpoint::<f64>(&p).unwrap(), m);

        fs::write(&p, text.replace("w2 5 2", "w2 5 3")).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&p), Err(Error::Parse { .. })));
    }
}
