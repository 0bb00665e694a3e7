use alloc::vec;
use alloc::vec::Vec;

use super::aggregate::{
    aggregate_gradients, aggregate_weights, proportional_weights, uniform_weights,
};
use super::schedule::{cwt_visit_budgets, fedavg_local_steps, fedsgd_iterations, BatchStream};
use super::{Method, ProtocolConfig, RoundLog};
use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::evaluation::selection_metric;
use crate::nn::{backward, build_model, class_weights, CategoryWeights, ModelState};
use crate::skew::InstitutionShard;
use crate::tensor::Tensor;

/// Result of one protocol run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Global model of the round with the lowest validation metric.
    pub model: ModelState,
    /// Global model after the last round.
    pub final_model: ModelState,
    /// Each institution's view of the selected model: the global parameters
    /// with that institution's BN running statistics.
    pub institution_models: Vec<ModelState>,
    pub logs: Vec<RoundLog>,
    /// `None` when no round ran.
    pub selected_round: Option<usize>,
    /// Global parameters after every update, when tracing is enabled.
    pub trace: Vec<Vec<f64>>,
}

struct Selector {
    best: Option<(f64, usize, ModelState, Vec<ModelState>)>,
}

impl Selector {
    fn offer(
        &mut self,
        metric: f64,
        round: usize,
        model: &ModelState,
        institutions: impl FnOnce() -> Result<Vec<ModelState>>,
    ) -> Result<()> {
        let better = match &self.best {
            None => true,
            Some((m, ..)) => metric < *m,
        };
        if better {
            self.best = Some((metric, round, model.clone(), institutions()?));
        }
        Ok(())
    }

    fn finish(
        self,
        initial: ModelState,
        n: usize,
        final_model: ModelState,
        logs: Vec<RoundLog>,
        trace: Vec<Vec<f64>>,
    ) -> TrainOutcome {
        match self.best {
            Some((_, round, model, institution_models)) => TrainOutcome {
                model,
                final_model,
                institution_models,
                logs,
                selected_round: Some(round),
                trace,
            },
            None => TrainOutcome {
                institution_models: vec![initial.clone(); n],
                model: initial,
                final_model,
                logs,
                selected_round: None,
                trace,
            },
        }
    }
}

fn loss_weights(ds: &LabeledDataset, wl: bool) -> Result<CategoryWeights> {
    if wl {
        class_weights(&ds.histogram())
    } else {
        Ok(CategoryWeights::uniform(ds.num_categories()))
    }
}

/// One SGD step; the momentum-updated running statistics replace the old ones.
fn step(
    model: &ModelState,
    x: &Tensor,
    y: &[usize],
    weights: &CategoryWeights,
    lr: f64,
) -> Result<(ModelState, f64)> {
    let b = backward(model, x, y, weights)?;
    Ok((
        model
            .sgd_step(&b.gradient, lr)?
            .unflatten_buffers(&b.running)?,
        b.loss,
    ))
}

fn check_shards(shards: &[InstitutionShard], cfg: &ProtocolConfig, method: Method) -> Result<()> {
    cfg.validate()?;
    if cfg.method != method {
        return Err(invalid!(
            "configuration is for {}, not {}",
            cfg.method.name(),
            method.name()
        ));
    }
    if shards.is_empty() {
        return Err(invalid!("no institutions"));
    }
    if let Some(s) = shards.iter().find(|s| s.train.is_empty()) {
        return Err(invalid!(
            "institution {} has no training data",
            s.institution_id
        ));
    }
    Ok(())
}

fn val_sets(shards: &[InstitutionShard]) -> Vec<&LabeledDataset> {
    shards.iter().map(|s| &s.val).collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Dispatches on `cfg.method`. The baseline trains on the pooled shards.
pub fn run_protocol(shards: &[InstitutionShard], cfg: &ProtocolConfig) -> Result<TrainOutcome> {
    match cfg.method {
        Method::Fedsgd => run_fedsgd(shards, cfg),
        Method::Fedavg => run_fedavg(shards, cfg),
        Method::Cwt => run_cwt(shards, cfg),
        Method::Centralized => {
            if shards.is_empty() {
                return Err(invalid!("no institutions"));
            }
            let pooled =
                LabeledDataset::concat(&shards.iter().map(|s| &s.train).collect::<Vec<_>>())?;
            run_centralized(&pooled, &val_sets(shards), cfg)
        }
    }
}

/// Minibatch SGD on pooled data, one epoch per round.
pub fn run_centralized(
    train: &LabeledDataset,
    val: &[&LabeledDataset],
    cfg: &ProtocolConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.method != Method::Centralized {
        return Err(invalid!(
            "configuration is for {}, not centralized",
            cfg.method.name()
        ));
    }
    if train.is_empty() {
        return Err(invalid!("empty training set"));
    }
    let initial = build_model(&cfg.arch, cfg.model_seed)?;
    let weights = loss_weights(train, cfg.mitigations.wl)?;
    let steps = fedavg_local_steps(&[train.len()], cfg.batch_size)?[0];
    let mut stream = BatchStream::new(train, 0, cfg.data_seed, cfg.batch_size)?;
    let mut model = initial.clone();
    let mut selector = Selector { best: None };
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    for round in 0..cfg.epochs {
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (x, y) = stream.next_batch()?;
            let (next, loss) = step(&model, &x, &y, &weights, cfg.lr)?;
            model = next;
            losses.push(loss);
            if cfg.trace {
                trace.push(model.flatten_params());
            }
        }
        let metric = selection_metric(&model, val, cfg.mitigations.wl)?;
        logs.push(RoundLog {
            round,
            train_loss: vec![mean(&losses)],
            val_metric: metric,
            communication: 0,
        });
        selector.offer(metric, round, &model, || Ok(vec![model.clone()]))?;
    }
    Ok(selector.finish(initial, 1, model, logs, trace))
}

/// Per-iteration gradient exchange. Each iteration every institution
/// computes a gradient on its next minibatch; the server applies the
/// weighted mean (uniform, or `Q_i / Q` with WP) and broadcasts.
///
/// Institutions keep their own BN running statistics unless BN averaging
/// is on, in which case the per-iteration updates are averaged with the
/// same weights. The global model carries institution 0's statistics (or
/// the average).
pub fn run_fedsgd(shards: &[InstitutionShard], cfg: &ProtocolConfig) -> Result<TrainOutcome> {
    check_shards(shards, cfg, Method::Fedsgd)?;
    let n = shards.len();
    let sizes: Vec<usize> = shards.iter().map(|s| s.size()).collect();
    let agg = if cfg.mitigations.wp {
        proportional_weights(&sizes)
    } else {
        uniform_weights(n)
    };
    let iterations = fedsgd_iterations(&sizes, cfg.batch_size)?;
    let loss_w = shards
        .iter()
        .map(|s| loss_weights(&s.train, cfg.mitigations.wl))
        .collect::<Result<Vec<_>>>()?;
    let mut streams = shards
        .iter()
        .map(|s| BatchStream::new(&s.train, s.institution_id, cfg.data_seed, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let vals = val_sets(shards);

    let initial = build_model(&cfg.arch, cfg.model_seed)?;
    let mut global = initial.clone();
    let mut buffers: Vec<Vec<f64>> = vec![initial.flatten_buffers(); n];
    let mut selector = Selector { best: None };
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    for round in 0..cfg.epochs {
        let mut losses = vec![Vec::with_capacity(iterations); n];
        for _ in 0..iterations {
            let mut grads = Vec::with_capacity(n);
            let mut running = Vec::with_capacity(n);
            for (i, s) in streams.iter_mut().enumerate() {
                let (x, y) = s.next_batch()?;
                let b = backward(&global, &x, &y, &loss_w[i])?;
                losses[i].push(b.loss);
                grads.push(b.gradient);
                running.push(b.running);
            }
            let g = aggregate_gradients(&grads, &agg)?;
            if cfg.mitigations.bn_avg {
                let avg = aggregate_gradients(&running, &agg)?;
                buffers.iter_mut().for_each(|b| b.clone_from(&avg));
            } else {
                buffers = running;
            }
            global = global
                .sgd_step(&g, cfg.lr)?
                .unflatten_buffers(&buffers[0])?;
            if cfg.trace {
                trace.push(global.flatten_params());
            }
        }
        let metric = selection_metric(&global, &vals, cfg.mitigations.wl)?;
        logs.push(RoundLog {
            round,
            train_loss: losses.iter().map(|l| mean(l)).collect(),
            val_metric: metric,
            communication: 2 * n * iterations,
        });
        selector.offer(metric, round, &global, || {
            buffers
                .iter()
                .map(|b| global.unflatten_buffers(b))
                .collect()
        })?;
    }
    Ok(selector.finish(initial, n, global, logs, trace))
}

/// Per-round weight averaging. Each institution starts from the global
/// parameters (with its own BN statistics), trains `floor(Q_i / B)` local
/// steps, and the server averages parameters with `Q_i / Q` weights.
pub fn run_fedavg(shards: &[InstitutionShard], cfg: &ProtocolConfig) -> Result<TrainOutcome> {
    check_shards(shards, cfg, Method::Fedavg)?;
    let n = shards.len();
    let sizes: Vec<usize> = shards.iter().map(|s| s.size()).collect();
    let agg = if cfg.fedavg_uniform {
        uniform_weights(n)
    } else {
        proportional_weights(&sizes)
    };
    let steps = fedavg_local_steps(&sizes, cfg.batch_size)?;
    let loss_w = shards
        .iter()
        .map(|s| loss_weights(&s.train, cfg.mitigations.wl))
        .collect::<Result<Vec<_>>>()?;
    let mut streams = shards
        .iter()
        .map(|s| BatchStream::new(&s.train, s.institution_id, cfg.data_seed, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let vals = val_sets(shards);

    let initial = build_model(&cfg.arch, cfg.model_seed)?;
    let mut global = initial.clone();
    let mut buffers: Vec<Vec<f64>> = vec![initial.flatten_buffers(); n];
    let mut selector = Selector { best: None };
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    for round in 0..cfg.epochs {
        let mut locals = Vec::with_capacity(n);
        let mut losses = Vec::with_capacity(n);
        for (i, s) in streams.iter_mut().enumerate() {
            let mut local = global.unflatten_buffers(&buffers[i])?;
            let mut l = Vec::with_capacity(steps[i]);
            for _ in 0..steps[i] {
                let (x, y) = s.next_batch()?;
                let (next, loss) = step(&local, &x, &y, &loss_w[i], cfg.lr)?;
                local = next;
                l.push(loss);
            }
            losses.push(mean(&l));
            locals.push(local);
        }
        global = aggregate_weights(&locals, &agg, cfg.mitigations.bn_avg)?;
        if cfg.mitigations.bn_avg {
            let avg = global.flatten_buffers();
            buffers.iter_mut().for_each(|b| b.clone_from(&avg));
        } else {
            buffers = locals.iter().map(|m| m.flatten_buffers()).collect();
        }
        if cfg.trace {
            trace.push(global.flatten_params());
        }
        let metric = selection_metric(&global, &vals, cfg.mitigations.wl)?;
        logs.push(RoundLog {
            round,
            train_loss: losses,
            val_metric: metric,
            communication: 2 * n,
        });
        selector.offer(metric, round, &global, || {
            buffers
                .iter()
                .map(|b| global.unflatten_buffers(b))
                .collect()
        })?;
    }
    Ok(selector.finish(initial, n, global, logs, trace))
}

/// Cyclical weight transfer: the model visits institutions in a fixed
/// order, training `floor(Q / (B n))` steps at each (or `floor(Q_i / B)`
/// with WP). One full cycle is one round.
pub fn run_cwt(shards: &[InstitutionShard], cfg: &ProtocolConfig) -> Result<TrainOutcome> {
    check_shards(shards, cfg, Method::Cwt)?;
    let n = shards.len();
    let sizes: Vec<usize> = shards.iter().map(|s| s.size()).collect();
    let budgets = cwt_visit_budgets(&sizes, cfg.batch_size, cfg.mitigations.wp)?;
    let loss_w = shards
        .iter()
        .map(|s| loss_weights(&s.train, cfg.mitigations.wl))
        .collect::<Result<Vec<_>>>()?;
    let mut streams = shards
        .iter()
        .map(|s| BatchStream::new(&s.train, s.institution_id, cfg.data_seed, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let vals = val_sets(shards);

    let initial = build_model(&cfg.arch, cfg.model_seed)?;
    let mut model = initial.clone();
    let mut selector = Selector { best: None };
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut trace = Vec::new();
    for round in 0..cfg.epochs {
        let mut losses = Vec::with_capacity(n);
        for (i, s) in streams.iter_mut().enumerate() {
            let mut l = Vec::with_capacity(budgets[i]);
            for _ in 0..budgets[i] {
                let (x, y) = s.next_batch()?;
                let (next, loss) = step(&model, &x, &y, &loss_w[i], cfg.lr)?;
                model = next;
                l.push(loss);
                if cfg.trace {
                    trace.push(model.flatten_params());
                }
            }
            losses.push(mean(&l));
        }
        let metric = selection_metric(&model, &vals, cfg.mitigations.wl)?;
        logs.push(RoundLog {
            round,
            train_loss: losses,
            val_metric: metric,
            communication: n,
        });
        selector.offer(metric, round, &model, || Ok(vec![model.clone(); n]))?;
    }
    Ok(selector.finish(initial, n, model, logs, trace))
}
