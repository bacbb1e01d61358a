//! Small classifier standing in for a deep backbone: two-layer ReLU feature
//! extractor, linear classifier head, linear projection head with L2
//! normalization, analytic backward pass, and SGD with momentum.

use crate::error::{Error, Result};
use crate::numerics::{softmax, Matrix, ProbVector, RandomSource, PROB_CLAMP};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Projections with raw norm below this are replaced by e1 with zero gradient.
pub const PROJECTION_NORM_GUARD: f64 = 1e-8;

/// Checkpoint container magic bytes.
const CHECKPOINT_MAGIC: &[u8; 8] = b"ADSIMCK1";

/// Layer dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub num_known_classes: usize,
    pub projection_dim: usize,
}

impl ModelConfig {
    /// Default layer sizes with the given number of known classes.
    pub fn with_classes(num_known_classes: usize) -> Self {
        ModelConfig {
            input_dim: 32,
            hidden_dim: 64,
            feature_dim: 64,
            num_known_classes,
            projection_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.feature_dim == 0
            || self.projection_dim == 0
        {
            return Err(Error::InvalidInput("all model dimensions must be >= 1".into()));
        }
        if self.num_known_classes < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 known classes, got {}",
                self.num_known_classes
            )));
        }
        Ok(())
    }
}

/// One tensor per trainable parameter; biases are stored as 1-row matrices.
/// The same struct carries gradients and optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub wc: Matrix,
    pub bc: Matrix,
    pub wp: Matrix,
    pub bp: Matrix,
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Params {
            w1: Matrix::zeros(cfg.hidden_dim, cfg.input_dim),
            b1: Matrix::zeros(1, cfg.hidden_dim),
            w2: Matrix::zeros(cfg.feature_dim, cfg.hidden_dim),
            b2: Matrix::zeros(1, cfg.feature_dim),
            wc: Matrix::zeros(cfg.num_known_classes, cfg.feature_dim),
            bc: Matrix::zeros(1, cfg.num_known_classes),
            wp: Matrix::zeros(cfg.projection_dim, cfg.feature_dim),
            bp: Matrix::zeros(1, cfg.projection_dim),
        }
    }

    /// Fixed-order named view, used by the optimizer and the checkpoint format.
    pub fn named(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("wc", &self.wc),
            ("bc", &self.bc),
            ("wp", &self.wp),
            ("bp", &self.bp),
        ]
    }
}

/// Gradients share the parameter layout.
pub type Gradients = Params;

/// SGD hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.001,
            momentum: 0.9,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Model parameters plus per-tensor optimizer velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub params: Params,
    pub velocity: Params,
}

/// Everything cached by [`forward`] that [`backward`] needs.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub inputs: Matrix,
    pub preact1: Matrix,
    pub hidden: Matrix,
    pub features: Matrix,
    pub logits: Matrix,
    pub probs: Vec<ProbVector>,
    /// L2-normalized projections (or e1 where the guard triggered).
    pub projections: Matrix,
    /// Raw projection norms before normalization, for the backward guard.
    pub raw_norms: Vec<f64>,
}

/// Initialize weights from N(0, 1/fan_in); biases and velocities start at zero.
pub fn init_model(cfg: &ModelConfig, rng: &mut RandomSource) -> Result<ModelState> {
    cfg.validate()?;
    let mut params = Params::zeros(cfg);
    for (w, fan_in) in [
        (&mut params.w1, cfg.input_dim),
        (&mut params.w2, cfg.hidden_dim),
        (&mut params.wc, cfg.feature_dim),
        (&mut params.wp, cfg.feature_dim),
    ] {
        let std = 1.0 / (fan_in as f64).sqrt();
        for v in w.data_mut() {
            *v = rng.normal() * std;
        }
    }
    Ok(ModelState {
        config: *cfg,
        velocity: Params::zeros(cfg),
        params,
    })
}

/// Full forward pass over a batch (rows are samples).
pub fn forward(state: &ModelState, batch: &Matrix) -> Result<ForwardRecord> {
    let cfg = &state.config;
    if batch.cols() != cfg.input_dim {
        return Err(Error::Shape(format!(
            "batch has {} columns, model expects {}",
            batch.cols(),
            cfg.input_dim
        )));
    }
    let p = &state.params;
    let preact1 = batch.matmul_nt(&p.w1)?.add_row_broadcast(p.b1.row(0))?;
    let mut hidden = preact1.clone();
    for v in hidden.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let features = hidden.matmul_nt(&p.w2)?.add_row_broadcast(p.b2.row(0))?;
    let logits = features.matmul_nt(&p.wc)?.add_row_broadcast(p.bc.row(0))?;
    let mut probs = Vec::with_capacity(batch.rows());
    for i in 0..logits.rows() {
        probs.push(softmax(logits.row(i))?);
    }
    let mut projections = features.matmul_nt(&p.wp)?.add_row_broadcast(p.bp.row(0))?;
    let mut raw_norms = Vec::with_capacity(batch.rows());
    for i in 0..projections.rows() {
        let row = projections.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw_norms.push(norm);
        if norm < PROJECTION_NORM_GUARD {
            for v in row.iter_mut() {
                *v = 0.0;
            }
            row[0] = 1.0;
        } else {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    Ok(ForwardRecord {
        inputs: batch.clone(),
        preact1,
        hidden,
        features,
        logits,
        probs,
        projections,
        raw_norms,
    })
}

/// Backpropagate `grad_logits` and `grad_projections` (given w.r.t. the
/// normalized projections) to every parameter tensor. Classifier- and
/// projection-path contributions sum in the shared extractor.
pub fn backward(
    state: &ModelState,
    record: &ForwardRecord,
    grad_logits: &Matrix,
    grad_projections: &Matrix,
) -> Result<Gradients> {
    let p = &state.params;
    if grad_logits.rows() != record.logits.rows() || grad_logits.cols() != record.logits.cols() {
        return Err(Error::Shape(format!(
            "grad_logits is {}x{}, logits are {}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            record.logits.rows(),
            record.logits.cols()
        )));
    }
    if grad_projections.rows() != record.projections.rows()
        || grad_projections.cols() != record.projections.cols()
    {
        return Err(Error::Shape(format!(
            "grad_projections is {}x{}, projections are {}x{}",
            grad_projections.rows(),
            grad_projections.cols(),
            record.projections.rows(),
            record.projections.cols()
        )));
    }

    // Normalization Jacobian: g_raw = (g - (g·z) z) / ||raw||, zero when guarded.
    let mut grad_raw = grad_projections.clone();
    for i in 0..grad_raw.rows() {
        let norm = record.raw_norms[i];
        if norm < PROJECTION_NORM_GUARD {
            for v in grad_raw.row_mut(i) {
                *v = 0.0;
            }
        } else {
            let z = record.projections.row(i);
            let g = grad_projections.row(i);
            let dot: f64 = g.iter().zip(z).map(|(a, b)| a * b).sum();
            let zvals: Vec<f64> = z.to_vec();
            for (j, v) in grad_raw.row_mut(i).iter_mut().enumerate() {
                *v = (g[j] - dot * zvals[j]) / norm;
            }
        }
    }

    let d_wc = grad_logits.matmul_tn(&record.features)?;
    let d_bc = Matrix::from_vec(1, grad_logits.cols(), grad_logits.col_sums())?;
    let grad_feat_cls = grad_logits.matmul(&p.wc)?;

    let d_wp = grad_raw.matmul_tn(&record.features)?;
    let d_bp = Matrix::from_vec(1, grad_raw.cols(), grad_raw.col_sums())?;
    let grad_feat_proj = grad_raw.matmul(&p.wp)?;

    let grad_features = grad_feat_cls.add(&grad_feat_proj)?;
    let d_w2 = grad_features.matmul_tn(&record.hidden)?;
    let d_b2 = Matrix::from_vec(1, grad_features.cols(), grad_features.col_sums())?;

    let mut grad_hidden = grad_features.matmul(&p.w2)?;
    for (g, a) in grad_hidden.data_mut().iter_mut().zip(record.preact1.data()) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    let d_w1 = grad_hidden.matmul_tn(&record.inputs)?;
    let d_b1 = Matrix::from_vec(1, grad_hidden.cols(), grad_hidden.col_sums())?;

    Ok(Params {
        w1: d_w1,
        b1: d_b1,
        w2: d_w2,
        b2: d_b2,
        wc: d_wc,
        bc: d_bc,
        wp: d_wp,
        bp: d_bp,
    })
}

fn apply_update(
    name: &'static str,
    param: &mut Matrix,
    velocity: &mut Matrix,
    grad: &Matrix,
    optim: &OptimConfig,
) -> Result<()> {
    if param.rows() != grad.rows() || param.cols() != grad.cols() {
        return Err(Error::Shape(format!(
            "gradient for '{name}' is {}x{}, parameter is {}x{}",
            grad.rows(),
            grad.cols(),
            param.rows(),
            param.cols()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
        });
    }
    for ((p, v), g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut())
        .zip(grad.data())
    {
        *v = optim.momentum * *v + g;
        *p -= optim.learning_rate * *v;
    }
    Ok(())
}

/// Heavy-ball update: v <- momentum*v + g, theta <- theta - lr*v.
pub fn sgd_step(state: &mut ModelState, grads: &Gradients, optim: &OptimConfig) -> Result<()> {
    optim.validate()?;
    let ModelState {
        params, velocity, ..
    } = state;
    apply_update("w1", &mut params.w1, &mut velocity.w1, &grads.w1, optim)?;
    apply_update("b1", &mut params.b1, &mut velocity.b1, &grads.b1, optim)?;
    apply_update("w2", &mut params.w2, &mut velocity.w2, &grads.w2, optim)?;
    apply_update("b2", &mut params.b2, &mut velocity.b2, &grads.b2, optim)?;
    apply_update("wc", &mut params.wc, &mut velocity.wc, &grads.wc, optim)?;
    apply_update("bc", &mut params.bc, &mut velocity.bc, &grads.bc, optim)?;
    apply_update("wp", &mut params.wp, &mut velocity.wp, &grads.wp, optim)?;
    apply_update("bp", &mut params.bp, &mut velocity.bp, &grads.bp, optim)?;
    Ok(())
}

/// Supervised pretraining pass configuration.
#[derive(Debug, Clone, Copy)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 64,
        }
    }
}

/// Plain cross-entropy pretraining on labeled source features.
///
/// Labels index known classes. Returns the mean loss of the final epoch.
pub fn pretrain_source(
    state: &mut ModelState,
    features: &Matrix,
    labels: &[usize],
    optim: &OptimConfig,
    cfg: &PretrainConfig,
    rng: &mut RandomSource,
) -> Result<f64> {
    if features.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let num_classes = state.config.num_known_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {bad} outside the {num_classes} known classes"
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidInput("epochs and batch_size must be >= 1".into()));
    }

    let n = features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_epoch_loss = 0.0;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Matrix::zeros(chunk.len(), features.cols());
            for (bi, &si) in chunk.iter().enumerate() {
                batch.row_mut(bi).copy_from_slice(features.row(si));
            }
            let record = forward(state, &batch)?;
            let inv = 1.0 / chunk.len() as f64;
            let mut grad_logits = Matrix::zeros(chunk.len(), num_classes);
            for (bi, &si) in chunk.iter().enumerate() {
                let probs = record.probs[bi].as_slice();
                epoch_loss -= probs[labels[si]].max(PROB_CLAMP).ln();
                let g = grad_logits.row_mut(bi);
                for (c, &pc) in probs.iter().enumerate() {
                    g[c] = (pc - if c == labels[si] { 1.0 } else { 0.0 }) * inv;
                }
            }
            let grad_proj = Matrix::zeros(chunk.len(), state.config.projection_dim);
            let grads = backward(state, &record, &grad_logits, &grad_proj)?;
            sgd_step(state, &grads, optim)?;
        }
        final_epoch_loss = epoch_loss / n as f64;
    }
    Ok(final_epoch_loss)
}

fn write_u32(out: &mut impl Write, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Write a checkpoint. Layout (all integers little-endian u32):
///
/// ```text
/// magic "ADSIMCK1" (8 bytes)
/// input_dim, hidden_dim, feature_dim, num_known_classes, projection_dim
/// tensor_count (always 8)
/// per tensor, in the fixed order w1 b1 w2 b2 wc bc wp bp:
///   name_len, name bytes (UTF-8), rows, cols, rows*cols little-endian f32
/// ```
///
/// Values are stored as 32-bit floats; a load followed by a save reproduces
/// the file byte for byte.
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    let cfg = &state.config;
    for dim in [
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.feature_dim,
        cfg.num_known_classes,
        cfg.projection_dim,
    ] {
        write_u32(&mut out, dim as u32)?;
    }
    let tensors = state.params.named();
    write_u32(&mut out, tensors.len() as u32)?;
    for (name, tensor) in tensors {
        write_u32(&mut out, name.len() as u32)?;
        out.write_all(name.as_bytes())?;
        write_u32(&mut out, tensor.rows() as u32)?;
        write_u32(&mut out, tensor.cols() as u32)?;
        for &v in tensor.data() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`]. Velocities start at zero.
pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let cfg = ModelConfig {
        input_dim: read_u32(&mut input)? as usize,
        hidden_dim: read_u32(&mut input)? as usize,
        feature_dim: read_u32(&mut input)? as usize,
        num_known_classes: read_u32(&mut input)? as usize,
        projection_dim: read_u32(&mut input)? as usize,
    };
    cfg.validate()?;
    let count = read_u32(&mut input)? as usize;
    if count != 8 {
        return Err(Error::Format(format!("expected 8 tensors, found {count}")));
    }
    let mut params = Params::zeros(&cfg);
    {
        let expected: [(&str, &mut Matrix); 8] = [
            ("w1", &mut params.w1),
            ("b1", &mut params.b1),
            ("w2", &mut params.w2),
            ("b2", &mut params.b2),
            ("wc", &mut params.wc),
            ("bc", &mut params.bc),
            ("wp", &mut params.wp),
            ("bp", &mut params.bp),
        ];
        for (expected_name, tensor) in expected {
            let name_len = read_u32(&mut input)? as usize;
            let mut name_buf = vec![0u8; name_len];
            input.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            if name != expected_name {
                return Err(Error::Format(format!(
                    "expected tensor '{expected_name}', found '{name}'"
                )));
            }
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            if rows != tensor.rows() || cols != tensor.cols() {
                return Err(Error::Format(format!(
                    "tensor '{name}' is {rows}x{cols}, config implies {}x{}",
                    tensor.rows(),
                    tensor.cols()
                )));
            }
            let mut buf = [0u8; 4];
            for v in tensor.data_mut() {
                input.read_exact(&mut buf)?;
                *v = f32::from_le_bytes(buf) as f64;
            }
        }
    }
    Ok(ModelState {
        config: cfg,
        velocity: Params::zeros(&cfg),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            hidden_dim: 4,
            feature_dim: 3,
            num_known_classes: 3,
            projection_dim: 4,
        }
    }

    fn random_batch(rows: usize, cols: usize, rng: &mut RandomSource) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = small_config();
        let a = init_model(&cfg, &mut RandomSource::new(1)).unwrap();
        let b = init_model(&cfg, &mut RandomSource::new(1)).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.params.b1.data().iter().all(|&v| v == 0.0));
        assert!(a.params.bc.data().iter().all(|&v| v == 0.0));
        assert!(a.velocity.w1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_weight_variance_matches_fan_in() {
        let cfg = ModelConfig {
            input_dim: 64,
            hidden_dim: 64,
            feature_dim: 64,
            num_known_classes: 4,
            projection_dim: 8,
        };
        let state = init_model(&cfg, &mut RandomSource::new(21)).unwrap();
        let data = state.params.w1.data();
        let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
        let var: f64 = data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / data.len() as f64;
        let target = 1.0 / 64.0;
        assert!(
            (var - target).abs() < 0.2 * target,
            "sample variance {var} vs expected {target}"
        );
    }

    #[test]
    fn forward_zero_weights_gives_uniform_probs() {
        let cfg = small_config();
        let state = ModelState {
            config: cfg,
            params: Params::zeros(&cfg),
            velocity: Params::zeros(&cfg),
        };
        let batch = random_batch(4, cfg.input_dim, &mut RandomSource::new(2));
        let rec = forward(&state, &batch).unwrap();
        for p in &rec.probs {
            for &v in p.as_slice() {
                assert!((v - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rows_are_batch_independent() {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(3)).unwrap();
        let batch = random_batch(64, cfg.input_dim, &mut RandomSource::new(4));
        let full = forward(&state, &batch).unwrap();
        for i in [0usize, 17, 63] {
            let single = batch.slice_rows(i, i + 1);
            let one = forward(&state, &single).unwrap();
            for (a, b) in one.logits.row(0).iter().zip(full.logits.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in one.projections.row(0).iter().zip(full.projections.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_matches_scalar_reimplementation() {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(5)).unwrap();
        let batch = random_batch(3, cfg.input_dim, &mut RandomSource::new(6));
        let rec = forward(&state, &batch).unwrap();
        let p = &state.params;
        for s in 0..3 {
            let x = batch.row(s);
            let mut h = vec![0.0; cfg.hidden_dim];
            for (j, hj) in h.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &xk) in x.iter().enumerate() {
                    acc += xk * p.w1.get(j, k);
                }
                *hj = (acc + p.b1.get(0, j)).max(0.0);
            }
            let mut f = vec![0.0; cfg.feature_dim];
            for (j, fj) in f.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &hk) in h.iter().enumerate() {
                    acc += hk * p.w2.get(j, k);
                }
                *fj = acc + p.b2.get(0, j);
            }
            for c in 0..cfg.num_known_classes {
                let mut acc = 0.0;
                for (k, &fk) in f.iter().enumerate() {
                    acc += fk * p.wc.get(c, k);
                }
                acc += p.bc.get(0, c);
                assert!((rec.logits.get(s, c) - acc).abs() < 1e-10);
            }
            let mut raw = vec![0.0; cfg.projection_dim];
            for (j, rj) in raw.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &fk) in f.iter().enumerate() {
                    acc += fk * p.wp.get(j, k);
                }
                *rj = acc + p.bp.get(0, j);
            }
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (j, &rj) in raw.iter().enumerate() {
                assert!((rec.projections.get(s, j) - rj / norm).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projections_have_unit_norm() {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(7)).unwrap();
        let batch = random_batch(16, cfg.input_dim, &mut RandomSource::new(8));
        let rec = forward(&state, &batch).unwrap();
        for i in 0..16 {
            let norm: f64 = rec.projections.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn projection_guard_substitutes_e1_and_blocks_gradient() {
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(9)).unwrap();
        // Zero projection head: raw projection is exactly zero for any input.
        state.params.wp = Matrix::zeros(cfg.projection_dim, cfg.feature_dim);
        state.params.bp = Matrix::zeros(1, cfg.projection_dim);
        let batch = random_batch(2, cfg.input_dim, &mut RandomSource::new(10));
        let rec = forward(&state, &batch).unwrap();
        for i in 0..2 {
            assert_eq!(rec.projections.get(i, 0), 1.0);
            for j in 1..cfg.projection_dim {
                assert_eq!(rec.projections.get(i, j), 0.0);
            }
        }
        let grad_proj = Matrix::from_vec(2, cfg.projection_dim, vec![1.0; 2 * cfg.projection_dim]).unwrap();
        let grad_logits = Matrix::zeros(2, cfg.num_known_classes);
        let grads = backward(&state, &rec, &grad_logits, &grad_proj).unwrap();
        assert!(grads.wp.data().iter().all(|&v| v == 0.0));
        assert!(grads.w1.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_gradients() {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(11)).unwrap();
        let batch = random_batch(4, cfg.input_dim, &mut RandomSource::new(12));
        let rec = forward(&state, &batch).unwrap();
        let grads = backward(
            &state,
            &rec,
            &Matrix::zeros(4, cfg.num_known_classes),
            &Matrix::zeros(4, cfg.projection_dim),
        )
        .unwrap();
        for (_, g) in grads.named() {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    /// Central finite differences of a scalar functional of (logits, projections).
    fn finite_diff_check(seed: u64, use_projection_path: bool) {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(seed)).unwrap();
        let mut rng = RandomSource::new(seed + 1000);
        let batch = random_batch(3, cfg.input_dim, &mut rng);
        let coeff_logits = random_batch(3, cfg.num_known_classes, &mut rng);
        let coeff_proj = if use_projection_path {
            random_batch(3, cfg.projection_dim, &mut rng)
        } else {
            Matrix::zeros(3, cfg.projection_dim)
        };

        let scalar_loss = |s: &ModelState| -> f64 {
            let rec = forward(s, &batch).unwrap();
            let mut total = 0.0;
            for (l, c) in rec.logits.data().iter().zip(coeff_logits.data()) {
                total += l * c;
            }
            for (z, c) in rec.projections.data().iter().zip(coeff_proj.data()) {
                total += z * c;
            }
            total
        };

        let rec = forward(&state, &batch).unwrap();
        let analytic = backward(&state, &rec, &coeff_logits, &coeff_proj).unwrap();

        let h = 1e-4;
        let tensor_access: [(
            &str,
            &Matrix,
            fn(&mut ModelState) -> &mut Matrix,
        ); 8] = [
            ("w1", &analytic.w1, |s| &mut s.params.w1),
            ("b1", &analytic.b1, |s| &mut s.params.b1),
            ("w2", &analytic.w2, |s| &mut s.params.w2),
            ("b2", &analytic.b2, |s| &mut s.params.b2),
            ("wc", &analytic.wc, |s| &mut s.params.wc),
            ("bc", &analytic.bc, |s| &mut s.params.bc),
            ("wp", &analytic.wp, |s| &mut s.params.wp),
            ("bp", &analytic.bp, |s| &mut s.params.bp),
        ];
        for (name, grad, access) in tensor_access {
            for idx in 0..grad.data().len() {
                let mut plus = state.clone();
                access(&mut plus).data_mut()[idx] += h;
                let mut minus = state.clone();
                access(&mut minus).data_mut()[idx] -= h;
                let numeric = (scalar_loss(&plus) - scalar_loss(&minus)) / (2.0 * h);
                let a = grad.data()[idx];
                let denom = a.abs().max(numeric.abs());
                if denom < 1e-6 {
                    assert!(
                        (a - numeric).abs() < 1e-7,
                        "{name}[{idx}]: analytic {a} vs numeric {numeric}"
                    );
                } else {
                    assert!(
                        (a - numeric).abs() / denom < 1e-4,
                        "{name}[{idx}]: analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_classifier_path() {
        finite_diff_check(31, false);
    }

    #[test]
    fn gradients_match_finite_differences_combined_path() {
        finite_diff_check(32, true);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(13)).unwrap();
        let before = state.params.clone();
        let grads = Params::zeros(&cfg);
        sgd_step(&mut state, &grads, &OptimConfig::default()).unwrap();
        assert_eq!(state.params, before);
    }

    #[test]
    fn sgd_first_step_is_lr_times_gradient() {
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(14)).unwrap();
        let before = state.params.w1.clone();
        let mut grads = Params::zeros(&cfg);
        grads.w1.set(0, 0, 2.0);
        let optim = OptimConfig {
            learning_rate: 0.1,
            momentum: 0.9,
        };
        sgd_step(&mut state, &grads, &optim).unwrap();
        assert!((state.params.w1.get(0, 0) - (before.get(0, 0) - 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_constant_gradient() {
        // After two steps with constant g: total displacement = lr*g*(2 + momentum).
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(15)).unwrap();
        let before = state.params.w2.get(1, 1);
        let mut grads = Params::zeros(&cfg);
        grads.w2.set(1, 1, 1.5);
        let optim = OptimConfig {
            learning_rate: 0.01,
            momentum: 0.9,
        };
        sgd_step(&mut state, &grads, &optim).unwrap();
        sgd_step(&mut state, &grads, &optim).unwrap();
        let expected = before - 0.01 * 1.5 * (2.0 + 0.9);
        assert!((state.params.w2.get(1, 1) - expected).abs() < 1e-12);
    }

    #[test]
    fn sgd_momentum_zero_is_vanilla() {
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(16)).unwrap();
        let reference = state.clone();
        let mut grads = Params::zeros(&cfg);
        for (i, v) in grads.wc.data_mut().iter_mut().enumerate() {
            *v = 0.1 * (i as f64 + 1.0);
        }
        let optim = OptimConfig {
            learning_rate: 0.05,
            momentum: 0.0,
        };
        sgd_step(&mut state, &grads, &optim).unwrap();
        sgd_step(&mut state, &grads, &optim).unwrap();
        // Vanilla reference: theta -= lr*g, applied twice.
        for ((updated, g), orig) in state
            .params
            .wc
            .data()
            .iter()
            .zip(grads.wc.data())
            .zip(reference.params.wc.data())
        {
            assert!((updated - (orig - 2.0 * 0.05 * g)).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradient_with_tensor_name() {
        let cfg = small_config();
        let mut state = init_model(&cfg, &mut RandomSource::new(17)).unwrap();
        let mut grads = Params::zeros(&cfg);
        grads.wp.set(0, 0, f64::NAN);
        let err = sgd_step(&mut state, &grads, &OptimConfig::default()).unwrap_err();
        assert!(err.to_string().contains("wp"), "error was: {err}");
    }

    #[test]
    fn checkpoint_round_trips() {
        let cfg = small_config();
        let state = init_model(&cfg, &mut RandomSource::new(18)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&state, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config, cfg);
        // Values survive the f32 round trip within f32 precision.
        for ((_, a), (_, b)) in state.params.named().iter().zip(loaded.params.named().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-6);
                assert_eq!(*y, *y as f32 as f64);
            }
        }
        // Save-load-save reproduces identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&loaded, &path2).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn load_rejects_corrupt_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC0000").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn pretraining_reduces_loss_on_separable_data() {
        let cfg = ModelConfig {
            input_dim: 4,
            hidden_dim: 8,
            feature_dim: 8,
            num_known_classes: 3,
            projection_dim: 4,
        };
        let mut rng = RandomSource::new(19);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..3usize {
            for _ in 0..40 {
                let mut x = vec![0.0; 4];
                x[c] = 4.0;
                for v in &mut x {
                    *v += rng.normal() * 0.3;
                }
                rows.push(x);
                labels.push(c);
            }
        }
        let features = Matrix::from_rows(&rows).unwrap();
        let mut state = init_model(&cfg, &mut rng).unwrap();
        let optim = OptimConfig {
            learning_rate: 0.05,
            momentum: 0.9,
        };
        let loss = pretrain_source(
            &mut state,
            &features,
            &labels,
            &optim,
            &PretrainConfig {
                epochs: 30,
                batch_size: 16,
            },
            &mut rng,
        )
        .unwrap();
        assert!(loss < 0.2, "final epoch loss {loss}");
    }
}
