use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ops::{evaluate, f1_detached, features_detached, generate_for_batch, mixup_baseline};
use super::{RunMetrics, Strategy, TrainConfig};
use crate::data::{images_to_tensor, make_triplet_batches, LabeledSample, TaskStream, UnlabeledPool};
use crate::error::{Error, Result};
use crate::losses::{distillation, generator_losses, task_objective, GeneratorLossTerms, TripletMaps};
use crate::memory::ExemplarMemory;
use crate::nets::{BackboneConfig, GeneratorBank, Network, SplitBackbone};
use crate::tensor::{clip_grad_norm, sgd_step, Scalar, Tape, Tensor, Var};

pub(crate) type Real = f32;

/// Where the learner is within the current task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Between tasks; the next call must be [`IncrementalLearner::begin_task`].
    AwaitingTask,
    Grown,
    TaskTrained,
    ExemplarsSelected,
    GeneratorsTrained,
    Snapshotted,
    Finished,
}

/// Independent RNG streams, one per purpose, so that enabling one
/// component never shifts the random draws of another.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Rngs {
    pub init: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub memory: ChaCha8Rng,
    pub unlabeled: ChaCha8Rng,
    pub gen_data: ChaCha8Rng,
    pub mixup: ChaCha8Rng,
}

impl Rngs {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self {
            init: stream(0),
            data: stream(1),
            memory: stream(2),
            unlabeled: stream(3),
            gen_data: stream(4),
            mixup: stream(5),
        }
    }

    pub fn all(&self) -> [&ChaCha8Rng; 6] {
        [&self.init, &self.data, &self.memory, &self.unlabeled, &self.gen_data, &self.mixup]
    }

    pub fn all_mut(&mut self) -> [&mut ChaCha8Rng; 6] {
        [
            &mut self.init,
            &mut self.data,
            &mut self.memory,
            &mut self.unlabeled,
            &mut self.gen_data,
            &mut self.mixup,
        ]
    }
}

/// Runs the incremental protocol task by task. The per-task phases must be
/// called in order: [`begin_task`](Self::begin_task),
/// [`train_task`](Self::train_task), [`select_exemplars`](Self::select_exemplars),
/// [`train_generators`](Self::train_generators), [`snapshot`](Self::snapshot),
/// [`evaluate_task`](Self::evaluate_task). The task dataset is dropped by
/// `evaluate_task`.
pub struct IncrementalLearner<'a> {
    pub(crate) stream: &'a TaskStream,
    pub(crate) pool: &'a UnlabeledPool,
    pub(crate) cfg: TrainConfig,
    pub(crate) net: Network<Real>,
    pub(crate) bank: GeneratorBank<Real>,
    pub(crate) memory: ExemplarMemory,
    pub(crate) old: Option<SplitBackbone<Real>>,
    pub(crate) rngs: Rngs,
    pub(crate) task: usize,
    pub(crate) phase: Phase,
    pub(crate) metrics: RunMetrics,
}

impl<'a> IncrementalLearner<'a> {
    pub fn new(
        stream: &'a TaskStream,
        pool: &'a UnlabeledPool,
        backbone: BackboneConfig,
        memory_budget: usize,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let shape = stream.shape();
        if backbone.in_channels != shape.channels || backbone.image_size != shape.size {
            return Err(Error::config(
                "model",
                format!(
                    "backbone expects {}×{}×{} images but the dataset has {}×{}×{}",
                    backbone.in_channels, backbone.image_size, backbone.image_size, shape.channels, shape.size, shape.size
                ),
            ));
        }
        let mut rngs = Rngs::new(cfg.seed);
        let net = Network::new(backbone, &mut rngs.init)?;
        let metrics = RunMetrics::new(cfg.seed, cfg.strategy);
        Ok(Self {
            stream,
            pool,
            net,
            bank: GeneratorBank::new(),
            memory: ExemplarMemory::new(memory_budget),
            old: None,
            rngs,
            task: 0,
            phase: Phase::AwaitingTask,
            metrics,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network<Real> {
        &self.net
    }

    pub fn bank(&self) -> &GeneratorBank<Real> {
        &self.bank
    }

    pub fn memory(&self) -> &ExemplarMemory {
        &self.memory
    }

    pub fn old_backbone(&self) -> Option<&SplitBackbone<Real>> {
        self.old.as_ref()
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Index of the task in progress, or of the next task between tasks.
    pub fn task_index(&self) -> usize {
        self.task
    }

    fn expect(&self, want: Phase, op: &str) -> Result<()> {
        if self.phase == want {
            return Ok(());
        }
        let detail = if op == "train_generators" && self.phase == Phase::AwaitingTask {
            "the task dataset has already been dropped".to_string()
        } else {
            format!("expected phase {want:?}, found {:?}", self.phase)
        };
        Err(Error::Protocol(format!("{op} on task {}: {detail}", self.task)))
    }

    /// Grows the classifier for the next task's classes.
    pub fn begin_task(&mut self) -> Result<()> {
        if self.task >= self.stream.num_tasks() {
            return Err(Error::Protocol("no tasks left in the stream".into()));
        }
        self.expect(Phase::AwaitingTask, "begin_task")?;
        let n = self.stream.task(self.task)?.classes.len();
        self.net.head.grow(n, &mut self.rngs.init)?;
        self.phase = Phase::Grown;
        Ok(())
    }

    /// Anti-forgetting training on the current task.
    pub fn train_task(&mut self) -> Result<()> {
        self.expect(Phase::Grown, "train_task")?;
        let task = self.stream.task(self.task)?;
        let exemplars: Vec<LabeledSample> = if self.cfg.strategy.uses_memory() {
            self.memory.iter().cloned().collect()
        } else {
            Vec::new()
        };
        if self.cfg.strategy == Strategy::ReplayGenerator && self.cfg.n_generated > 0 {
            if let Some(c) = self.memory.classes().find(|&c| !self.bank.contains(c)) {
                return Err(Error::contract(format!("memory class {c} has no generator")));
            }
        }
        for p in self.net.params_mut() {
            p.set_velocity(None);
        }
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        let mut curve = Vec::with_capacity(self.cfg.task_epochs);
        for epoch in 0..self.cfg.task_epochs {
            order.shuffle(&mut self.rngs.data);
            let lr = self.cfg.lr_at(epoch);
            let mut total = 0.0;
            let mut steps = 0;
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &task.train[i]).collect();
                let loss = self.task_step(&batch, &exemplars, lr).map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!(
                        "task {} epoch {epoch} step {steps} ({}): {m}",
                        self.task, self.cfg.strategy
                    )),
                    e => e,
                })?;
                total += loss;
                steps += 1;
            }
            curve.push(total / steps.max(1) as f64);
        }
        self.metrics.task_loss_curves.push(curve);
        self.phase = Phase::TaskTrained;
        Ok(())
    }

    fn task_step(&mut self, batch: &[&LabeledSample], exemplars: &[LabeledSample], lr: f64) -> Result<f64> {
        let cfg = &self.cfg;
        let shape = self.stream.shape();
        let w = cfg.task_loss.coefficients();
        let mut tape = Tape::<Real>::new();
        let x = tape.constant(images_to_tensor(shape, batch.iter().map(|s| s.image.as_slice()))?);
        let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
        let logits = self.net.logits(&mut tape, x)?;
        let cls = tape.softmax_cross_entropy(logits, &labels)?;

        let (mut cls_memory, mut cls_generated, mut distill) = (None, None, None);
        if cfg.strategy.uses_memory() && !exemplars.is_empty() {
            let k = cfg.exemplar_batch.min(exemplars.len());
            let picks = index::sample(&mut self.rngs.memory, exemplars.len(), k).into_vec();
            let ex: Vec<&LabeledSample> = picks.iter().map(|&i| &exemplars[i]).collect();
            let ex_labels: Vec<usize> = ex.iter().map(|s| s.label).collect();
            let ex_images = || ex.iter().map(|s| s.image.as_slice());

            let use_distill = w[3] != 0.0 && self.old.is_some();
            if w[1] != 0.0 || use_distill {
                let xm = tape.constant(images_to_tensor(shape, ex_images())?);
                let feats = self.net.backbone.forward(&mut tape, xm)?;
                if w[1] != 0.0 {
                    let z = self.net.head.forward(&mut tape, feats)?;
                    cls_memory = Some(tape.softmax_cross_entropy(z, &ex_labels)?);
                }
                if let (true, Some(old)) = (use_distill, &self.old) {
                    let f_old = features_detached(old, images_to_tensor(shape, ex_images())?)?;
                    let f_old = tape.constant(f_old);
                    distill = Some(distillation(&mut tape, f_old, feats, cfg.distill_reduction)?);
                }
            }

            let n = cfg.n_generated;
            if w[2] != 0.0 && n > 0 {
                let rep_labels: Vec<usize> = ex_labels.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
                match cfg.strategy {
                    Strategy::ReplayGenerator => {
                        let drawn = self.pool.sample_indices(k * n, &mut self.rngs.unlabeled)?;
                        let h = if cfg.detach_generated {
                            let h = generate_for_batch(&ex, &drawn, n, shape, &self.net.backbone, &self.bank, self.pool)?;
                            tape.constant(h)
                        } else {
                            let sem = images_to_tensor(shape, ex.iter().flat_map(|s| std::iter::repeat_n(s.image.as_slice(), n)))?;
                            let sty = images_to_tensor(shape, drawn.iter().map(|&i| self.pool.image(i)))?;
                            let sem = tape.constant(sem);
                            let sty = tape.constant(sty);
                            let h_m = self.net.backbone.forward_f1(&mut tape, sem)?;
                            let h_u = self.net.backbone.forward_f1(&mut tape, sty)?;
                            self.generate_on_tape(&mut tape, &rep_labels, h_m, h_u)?
                        };
                        let z = self.net.logits_from_map(&mut tape, h)?;
                        cls_generated = Some(tape.softmax_cross_entropy(z, &rep_labels)?);
                    }
                    Strategy::ReplayMixup => {
                        let drawn = self.pool.sample_indices(k * n, &mut self.rngs.unlabeled)?;
                        let src: Vec<&[f32]> = ex.iter().flat_map(|s| std::iter::repeat_n(s.image.as_slice(), n)).collect();
                        let unl: Vec<&[f32]> = drawn.iter().map(|&i| self.pool.image(i)).collect();
                        let (mixed, _) = mixup_baseline(&src, &unl, cfg.mixup_alpha, &mut self.rngs.mixup)?;
                        let xmix = tape.constant(images_to_tensor(shape, mixed.iter().map(Vec::as_slice))?);
                        let z = self.net.logits(&mut tape, xmix)?;
                        cls_generated = Some(tape.softmax_cross_entropy(z, &rep_labels)?);
                    }
                    _ => {}
                }
            }
        }

        let total = task_objective(&mut tape, cls, cls_memory, cls_generated, distill, &cfg.task_loss)?;
        let value = tape.value(total).item().as_f64();
        let grads = tape.backward(total)?;
        let mut params = self.net.params_mut();
        for p in params.iter_mut() {
            p.accumulate(&grads);
        }
        if let Some(c) = cfg.grad_clip {
            clip_grad_norm(&mut params, c);
        }
        sgd_step(&mut params, lr, cfg.momentum)?;
        Ok(value)
    }

    /// Runs each class's frozen generator on its rows of `h_m`/`h_u` and
    /// reassembles the outputs in input order.
    fn generate_on_tape(&self, tape: &mut Tape<Real>, labels: &[usize], h_m: Var, h_u: Var) -> Result<Var> {
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() == 1 {
            return self.bank.get(classes[0])?.generate(tape, h_m, h_u);
        }
        let mut parts = Vec::with_capacity(classes.len());
        let mut order = Vec::with_capacity(labels.len());
        for c in classes {
            let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let a = tape.select_rows(h_m, &rows)?;
            let b = tape.select_rows(h_u, &rows)?;
            parts.push(self.bank.get(c)?.generate(tape, a, b)?);
            order.extend(rows);
        }
        let stacked = tape.concat_rows(&parts)?;
        let mut inverse = vec![0; order.len()];
        for (pos, &row) in order.iter().enumerate() {
            inverse[row] = pos;
        }
        tape.select_rows(stacked, &inverse)
    }

    /// Herding selection for the current task's classes, then rebalancing of
    /// the whole memory to the new per-class quota.
    pub fn select_exemplars(&mut self) -> Result<()> {
        self.expect(Phase::TaskTrained, "select_exemplars")?;
        if self.cfg.strategy.uses_memory() {
            let task = self.stream.task(self.task)?;
            let seen = self.stream.seen_classes(self.task).len();
            let shape = self.stream.shape();
            let net = &self.net;
            self.memory.add_task_exemplars(&task.train, &task.classes, seen, |members| {
                let x = images_to_tensor::<Real, _>(shape, members.iter().map(|s| s.image.as_slice()))?;
                let f = features_detached(&net.backbone, x)?;
                Ok(normalized_rows(&f))
            })?;
        }
        self.phase = Phase::ExemplarsSelected;
        Ok(())
    }

    /// Creates and trains a generator for every new class that has
    /// exemplars. The backbone and classifier stay frozen; each generator is
    /// frozen once its phase ends.
    pub fn train_generators(&mut self) -> Result<()> {
        self.expect(Phase::ExemplarsSelected, "train_generators")?;
        let mut curves = BTreeMap::new();
        let mut term_curves = BTreeMap::new();
        if self.cfg.strategy == Strategy::ReplayGenerator {
            let task = self.stream.task(self.task)?;
            let classes: Vec<usize> = task
                .classes
                .iter()
                .copied()
                .filter(|&c| !self.memory.class(c).is_empty())
                .collect();
            let (channels, _, _) = self.net.backbone.f1_shape();
            self.bank
                .create_generators(&classes, channels, self.cfg.generator_depth, self.task, self.cfg.seed)?;
            self.net.set_frozen(true);
            let result = classes
                .iter()
                .try_for_each(|&c| {
                    self.train_generator(c, &task.train).map(|(curve, terms)| {
                        curves.insert(c, curve);
                        term_curves.insert(c, terms);
                    })
                });
            self.net.set_frozen(false);
            self.bank.freeze_all();
            result?;
        }
        self.metrics.generator_loss_curves.push(curves);
        self.metrics.generator_term_curves.push(term_curves);
        self.phase = Phase::GeneratorsTrained;
        Ok(())
    }

    fn train_generator(
        &mut self,
        class: usize,
        dataset: &[LabeledSample],
    ) -> Result<(Vec<f64>, Vec<GeneratorLossTerms>)> {
        let shape = self.stream.shape();
        let exemplars: Vec<&LabeledSample> = self.memory.class(class).iter().collect();
        self.bank.get_mut(class)?.set_frozen(false);
        for p in self.bank.get_mut(class)?.params_mut() {
            p.set_velocity(None);
        }
        let mut curve = Vec::with_capacity(self.cfg.gen_epochs);
        let mut term_curve = Vec::with_capacity(self.cfg.gen_epochs);
        for epoch in 0..self.cfg.gen_epochs {
            let mut terms = GeneratorLossTerms::default();
            let batches = make_triplet_batches(&exemplars, dataset, self.pool, self.cfg.gen_batch, &mut self.rngs.gen_data)?;
            let (mut total, mut count) = (0.0, 0usize);
            for batch in batches {
                let f1 = |imgs: Vec<&[f32]>| -> Result<Tensor<Real>> {
                    f1_detached(&self.net.backbone, images_to_tensor(shape, imgs)?)
                };
                let h_m = f1(batch.iter().map(|t| t.exemplar.image.as_slice()).collect())?;
                let h_u = f1(batch.iter().map(|t| self.pool.image(t.unlabeled)).collect())?;
                let h_k = f1(batch.iter().map(|t| t.reference.image.as_slice()).collect())?;
                let labels = vec![class; batch.len()];
                let mut tape = Tape::<Real>::new();
                let maps = TripletMaps {
                    h_m: tape.constant(h_m),
                    h_u: tape.constant(h_u),
                    h_k: tape.constant(h_k),
                };
                let generator = self.bank.get(class)?;
                let vars = generator_losses(
                    &mut tape,
                    generator,
                    &self.net,
                    maps,
                    &labels,
                    &self.cfg.generator_loss,
                    self.cfg.gram_normalize,
                )?;
                let loss = tape.mean(vars.total);
                let value = tape.value(loss).item().as_f64();
                for t in vars.terms(&tape) {
                    terms.ce += t.ce;
                    terms.sc += t.sc;
                    terms.sdc += t.sdc;
                    terms.sc_cyc += t.sc_cyc;
                    terms.sdc_cyc += t.sdc_cyc;
                }
                let grads = tape.backward(loss).map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!(
                        "generator for class {class}, epoch {epoch}: {m}"
                    )),
                    e => e,
                })?;
                let mut params = self.bank.get_mut(class)?.params_mut();
                for p in params.iter_mut() {
                    p.accumulate(&grads);
                }
                if let Some(c) = self.cfg.gen_grad_clip {
                    clip_grad_norm(&mut params, c);
                }
                sgd_step(&mut params, self.cfg.gen_lr, self.cfg.gen_momentum)?;
                total += value * batch.len() as f64;
                count += batch.len();
            }
            let k = count.max(1) as f64;
            curve.push(total / k);
            term_curve.push(GeneratorLossTerms {
                ce: terms.ce / k,
                sc: terms.sc / k,
                sdc: terms.sdc / k,
                sc_cyc: terms.sc_cyc / k,
                sdc_cyc: terms.sdc_cyc / k,
            });
        }
        Ok((curve, term_curve))
    }

    /// Keeps a frozen copy of the backbone for distillation in later tasks.
    pub fn snapshot(&mut self) -> Result<()> {
        self.expect(Phase::GeneratorsTrained, "snapshot")?;
        let mut old = self.net.backbone.clone();
        old.params_mut().into_iter().for_each(|p| {
            p.set_frozen(true);
            p.set_velocity(None);
        });
        self.old = Some(old);
        self.phase = Phase::Snapshotted;
        Ok(())
    }

    /// Accuracy on all seen classes and on each seen task's classes. Ends the
    /// task and drops its dataset.
    pub fn evaluate_task(&mut self) -> Result<f64> {
        self.expect(Phase::Snapshotted, "evaluate_task")?;
        let shape = self.stream.shape();
        let seen = self.stream.seen_classes(self.task);
        let acc = evaluate(&self.net, shape, &self.stream.test_for(&seen))?;
        let groups = (0..=self.task)
            .map(|j| evaluate(&self.net, shape, &self.stream.test_for(&self.stream.task(j)?.classes)))
            .collect::<Result<Vec<f64>>>()?;
        self.metrics.push_task(acc, groups);
        self.task += 1;
        self.phase = if self.task == self.stream.num_tasks() {
            self.metrics.completed = true;
            Phase::Finished
        } else {
            Phase::AwaitingTask
        };
        Ok(acc)
    }

    /// All phases of the next task in order.
    pub fn run_task(&mut self) -> Result<f64> {
        self.begin_task()?;
        self.train_task()?;
        self.select_exemplars()?;
        self.train_generators()?;
        self.snapshot()?;
        self.evaluate_task()
    }

    /// Runs the remaining tasks. Metrics gathered so far stay available
    /// through [`metrics`](Self::metrics) if a task fails.
    pub fn run(&mut self) -> Result<()> {
        let start = Instant::now();
        let result = (|| {
            while self.task < self.stream.num_tasks() {
                let acc = self.run_task()?;
                log::info!(
                    "seed {} {}: task {} accuracy {:.4}",
                    self.cfg.seed,
                    self.cfg.strategy,
                    self.task,
                    acc
                );
            }
            Ok(())
        })();
        self.metrics.wall_clock_secs += start.elapsed().as_secs_f64();
        result
    }

    pub fn into_metrics(self) -> RunMetrics {
        self.metrics
    }
}

fn normalized_rows<T: Scalar>(f: &Tensor<T>) -> Vec<Vec<f64>> {
    let d = f.shape()[1];
    f.data()
        .chunks(d)
        .map(|row| {
            let v: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm).collect()
            } else {
                v
            }
        })
        .collect()
}

/// Runs every task of `stream` and returns the metrics.
pub fn run_incremental(
    stream: &TaskStream,
    pool: &UnlabeledPool,
    backbone: BackboneConfig,
    memory_budget: usize,
    cfg: TrainConfig,
) -> Result<RunMetrics> {
    let mut learner = IncrementalLearner::new(stream, pool, backbone, memory_budget, cfg)?;
    learner.run()?;
    Ok(learner.into_metrics())
}

