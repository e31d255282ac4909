use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamState, NetConfig, Normalization, Params, ResidualNet};
use crate::error::{Error, Result};
use crate::series::ResidualSeries;

/// `input = [ε_{t-L} .. ε_{t-1}]`, `target = ε_t`, in raw units.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Day index of the target.
    pub day: usize,
    pub input: Vec<f64>,
    pub target: f64,
}

/// Every window whose `L + 1` days are all present. Windows touching an
/// excluded stretch are skipped.
pub fn make_windows(residuals: &ResidualSeries, window: usize) -> Result<Vec<Window>> {
    let pts = residuals.points();
    if window == 0 {
        return Err(Error::Config("window length must be >= 1".into()));
    }
    if pts.len() < window + 1 {
        return Err(Error::InsufficientData(format!(
            "{} residuals cannot fill a window of {} plus a target",
            pts.len(),
            window
        )));
    }
    Ok((window..pts.len())
        .filter(|&j| pts[j].0 - pts[j - window].0 == window)
        .map(|j| Window {
            day: pts[j].0,
            input: pts[j - window..j].iter().map(|p| p.1).collect(),
            target: pts[j].1,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub train_windows: usize,
    pub val_windows: usize,
}

impl TrainingLog {
    /// `epoch,train_mse,val_mse` (empty validation cell when there is no
    /// held-out set).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_mse", "val_mse"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                r.train_mse.to_string(),
                r.val_mse.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn best_val_mse(&self) -> Option<f64> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch).and_then(|r| r.val_mse)
    }
}

/// Mean squared one-step error of `net` over `windows` (inference mode).
pub fn evaluate_mse(net: &ResidualNet, windows: &[Window]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let mut sse = 0.0;
    for w in windows {
        sse += (net.predict_one(&w.input)? - w.target).powi(2);
    }
    Ok(sse / windows.len() as f64)
}

/// Gradient sum and squared-error sum over `items`, each with its own
/// dropout stream.
fn batch_gradient(net: &ResidualNet, items: &[(&Window, u64)], scale: f64) -> Result<(Params, f64)> {
    let mut grad = Params::zeros(&net.config);
    let mut sse = 0.0;
    for (w, seed) in items {
        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
        let pass = net.forward(&w.input, Some(&mut rng))?;
        let err = pass.output - w.target;
        sse += err * err;
        net.backward_into(&pass, 2.0 * err * scale, &mut grad)?;
    }
    Ok((grad, sse))
}

/// Mini-batch MSE training with Adam and dropout, keeping the parameters of
/// the epoch with the lowest validation loss. The last
/// `validation_fraction` of the time-ordered windows is held out.
pub fn train(residuals: &ResidualSeries, config: &NetConfig) -> Result<(ResidualNet, TrainingLog)> {
    config.validate()?;
    let windows = make_windows(residuals, config.window)?;
    if windows.is_empty() {
        return Err(Error::InsufficientData(
            "no complete window: every candidate overlaps an excluded stretch".into(),
        ));
    }
    let values: Vec<f64> = residuals.values().collect();
    let normalization = Normalization::fit(&values)?;
    let n_val = (windows.len() as f64 * config.validation_fraction).floor() as usize;
    let n_train = windows.len() - n_val;
    if n_train == 0 {
        return Err(Error::InsufficientData("no training windows after the validation split".into()));
    }
    let (train_set, val_set) = windows.split_at(n_train);

    let mut net = ResidualNet::new(config.clone(), normalization)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // separate stream from the one used for initialisation
    rng.set_stream(1);
    let mut adam = AdamState::new(
        &net.params.shapes(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut log = TrainingLog {
        train_windows: n_train,
        val_windows: n_val,
        ..TrainingLog::default()
    };
    let mut best: Option<(f64, Params)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch in order.chunks(config.batch_size) {
            let items: Vec<(&Window, u64)> = batch.iter().map(|&i| (&train_set[i], rng.random::<u64>())).collect();
            let scale = 1.0 / items.len() as f64;
            let (grad, batch_sse) = if config.workers > 1 && items.len() > 1 {
                let chunk = items.len().div_ceil(config.workers);
                let net_ref = &net;
                let parts: Vec<Result<(Params, f64)>> = std::thread::scope(|s| {
                    let handles: Vec<_> = items
                        .chunks(chunk)
                        .map(|part| s.spawn(move || batch_gradient(net_ref, part, scale)))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
                });
                let mut total = Params::zeros(config);
                let mut total_sse = 0.0;
                for part in parts {
                    let (g, e) = part?;
                    total.add_assign(&g);
                    total_sse += e;
                }
                (total, total_sse)
            } else {
                batch_gradient(&net, &items, scale)?
            };
            if !batch_sse.is_finite() {
                return Err(Error::Divergence(format!("non-finite training loss in epoch {epoch}")));
            }
            sse += batch_sse;
            let grads = grad.tensors();
            let mut params = net.params_mut().tensors_mut();
            adam_step(&mut params, &grads, &mut adam)?;
        }
        let train_mse = sse / n_train as f64;
        let val_mse = if val_set.is_empty() {
            None
        } else {
            let v = evaluate_mse(&net, val_set)?;
            if !v.is_finite() {
                return Err(Error::Divergence(format!("non-finite validation loss in epoch {epoch}")));
            }
            Some(v)
        };
        let score = val_mse.unwrap_or(train_mse);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, net.params.clone()));
            log.best_epoch = epoch;
        }
        log.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
    }
    if let Some((_, params)) = best {
        net.set_params(params)?;
    }
    Ok((net, log))
}

/// Recursive multi-step forecast: each prediction is appended to the input
/// window for the next step.
pub fn predict_residuals(net: &ResidualNet, history: &ResidualSeries, horizon: usize) -> Result<Vec<f64>> {
    let l = net.config.window;
    let mut window = history.contiguous_tail(l).ok_or_else(|| {
        Error::InsufficientData(format!(
            "residual history needs {l} consecutive days at its end, has {} points",
            history.len()
        ))
    })?;
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let next = net.predict_one(&window)?;
        out.push(next);
        window.remove(0);
        window.push(next);
    }
    Ok(out)
}
