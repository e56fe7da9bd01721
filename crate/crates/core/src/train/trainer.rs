//! The training loop shared by per-patch training and ECN fine-tuning.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::sgd::{lr_at, sgd_step};
use super::{ecn_loss, EcnConfig, SgdConfig};
use crate::error::{Error, Result};
use crate::net::{Checkpoint, Gradients, PatchNet, Phase, Velocity};
use crate::ops::{argmax, Mode};
use crate::sampler::{EnsembleDataset, PatchSet};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

/// Samples in a batch are split into this many contiguous chunks whose
/// gradients are reduced in chunk order, so results do not depend on the
/// thread count.
const GRAD_CHUNKS: usize = 8;

/// One training example: N patches sharing a label (N = 1 for per-patch training).
#[derive(Clone, Debug)]
pub struct Sample<'a, T> {
    pub patches: Vec<&'a Tensor<T>>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainStepReport {
    pub iteration: u64,
    /// Batch-mean loss.
    pub loss: f64,
    pub lr: f64,
    pub batch_accuracy: f64,
    /// Wall time since the trainer was created.
    pub seconds: f64,
}

/// Every patch of every set as a single-patch sample.
pub fn patch_samples<T>(sets: &[PatchSet<T>]) -> Vec<Sample<'_, T>> {
    sets.iter()
        .flat_map(|s| {
            s.patches.iter().map(move |p| Sample {
                patches: vec![p],
                label: s.label,
            })
        })
        .collect()
}

pub fn ecn_samples<'a, T>(sets: &'a [PatchSet<T>], ensemble: &'a EnsembleDataset) -> Vec<Sample<'a, T>> {
    ensemble
        .samples
        .iter()
        .map(|s| Sample {
            patches: s.patches(sets).collect(),
            label: s.label,
        })
        .collect()
}

pub struct Trainer<'a, T> {
    net: PatchNet<T>,
    velocity: Velocity<T>,
    cfg: SgdConfig,
    samples: &'a [Sample<'a, T>],
    n: usize,
    started: Instant,
    order: Option<(u64, Vec<usize>)>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// `n` is the number of patches every sample must carry.
    pub fn new(
        net: PatchNet<T>,
        velocity: Option<Velocity<T>>,
        samples: &'a [Sample<'a, T>],
        cfg: SgdConfig,
        n: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        if let Some(s) = samples.iter().find(|s| s.patches.len() != n) {
            return Err(Error::config(format!("expected {n} patches per sample, found {}", s.patches.len())));
        }
        let k = net.num_classes();
        if let Some(s) = samples.iter().find(|s| s.label >= k) {
            return Err(Error::input(format!("label {} out of range for {k} classes", s.label)));
        }
        let velocity = velocity.unwrap_or_else(|| Velocity::zeros_like(&net));
        Ok(Trainer {
            net,
            velocity,
            cfg,
            samples,
            n,
            started: Instant::now(),
            order: None,
        })
    }

    pub fn net(&self) -> &PatchNet<T> {
        &self.net
    }

    pub fn velocity(&self) -> &Velocity<T> {
        &self.velocity
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn into_parts(self) -> (PatchNet<T>, Velocity<T>) {
        (self.net, self.velocity)
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        if self.order.as_ref().map(|o| o.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.samples.len()).collect();
            let mut rng = seed::rng(seed::derive(self.cfg.seed, &[seed::hash_str("shuffle"), epoch]));
            perm.shuffle(&mut rng);
            self.order = Some((epoch, perm));
        }
        &self.order.as_ref().unwrap().1
    }

    /// Sample indices of batch `iteration`: positions `iteration·B .. (iteration+1)·B`
    /// of an endless stream of per-epoch permutations.
    pub fn batch_indices(&mut self, iteration: u64) -> Vec<usize> {
        let d = self.samples.len() as u64;
        let b = self.cfg.batch_size as u64;
        (iteration * b..(iteration + 1) * b)
            .map(|pos| self.epoch_order(pos / d)[(pos % d) as usize])
            .collect()
    }

    /// Loss, accuracy count and gradients of one contiguous chunk of the batch.
    fn chunk_pass(&self, iteration: u64, first: usize, idx: &[usize], scale: T) -> Result<(T, usize, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = T::zero();
        let mut correct = 0;
        for (off, &i) in idx.iter().enumerate() {
            let sample = &self.samples[i];
            let pos = (first + off) as u64;
            let traces = sample
                .patches
                .iter()
                .enumerate()
                .map(|(b, p)| {
                    let s = seed::derive(self.cfg.seed, &[seed::hash_str("dropout"), iteration, pos, b as u64]);
                    self.net.forward(p, Mode::Train { seed: s })
                })
                .collect::<Result<Vec<_>>>()?;
            let logits: Vec<&[T]> = traces.iter().map(|t| t.logits().data()).collect();
            let l = ecn_loss(&logits, sample.label, self.n)?;
            loss += l.loss;
            if argmax(&l.probs) == sample.label {
                correct += 1;
            }
            let g: Vec<T> = l.grad.iter().map(|v| *v * scale).collect();
            for t in &traces {
                self.net.backward(t, &g, &mut grads)?;
            }
        }
        Ok((loss, correct, grads))
    }

    /// One SGD step on batch `net.iteration`.
    pub fn step(&mut self) -> Result<TrainStepReport> {
        let it = self.net.iteration;
        let idx = self.batch_indices(it);
        let m = idx.len();
        let per = m.div_ceil(GRAD_CHUNKS);
        let scale = T::lit(1.0 / m as f64);
        let this = &*self;
        let parts = idx
            .par_chunks(per)
            .enumerate()
            .map(|(c, chunk)| this.chunk_pass(it, c * per, chunk, scale))
            .collect::<Result<Vec<_>>>()?;
        let mut parts = parts.into_iter();
        let (mut loss, mut correct, mut grads) = parts.next().expect("batch is non-empty");
        for (l, c, g) in parts {
            loss += l;
            correct += c;
            grads.add_assign(&g);
        }
        let loss = (loss * scale).widen();
        if !loss.is_finite() {
            return Err(Error::Numeric {
                iteration: it,
                layer: "loss".into(),
                message: format!("batch loss is {loss}"),
            });
        }
        sgd_step(&mut self.net, &grads, &mut self.velocity, &self.cfg, it)?;
        self.net.iteration += 1;
        Ok(TrainStepReport {
            iteration: it,
            loss,
            lr: lr_at(&self.cfg, it),
            batch_accuracy: correct as f64 / m as f64,
            seconds: self.started.elapsed().as_secs_f64(),
        })
    }

    /// Steps until `net.iteration == until`, calling `on_step` after each step.
    pub fn run_until<F>(&mut self, until: u64, mut on_step: F) -> Result<Vec<TrainStepReport>>
    where
        F: FnMut(&TrainStepReport, &Self) -> Result<()>,
    {
        let mut out = Vec::new();
        while self.net.iteration < until {
            let r = self.step()?;
            on_step(&r, self)?;
            out.push(r);
        }
        Ok(out)
    }
}

/// Share of individual patches whose test-mode prediction matches the label.
pub fn patch_accuracy<T: Scalar>(net: &PatchNet<T>, sets: &[PatchSet<T>]) -> Result<f64> {
    let counts = sets
        .par_iter()
        .map(|s| {
            let mut hit = 0usize;
            for p in &s.patches {
                if argmax(net.logits(p)?.data()) == s.label {
                    hit += 1;
                }
            }
            Ok((hit, s.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (hit, total) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(Error::input("no patches to evaluate"));
    }
    Ok(hit as f64 / total as f64)
}

/// Per-patch training for `cfg.max_iterations` steps (counted from the
/// network's current iteration, so a resumed run continues the same stream).
pub fn train_simple<'a, T: Scalar, F>(
    net: PatchNet<T>,
    velocity: Option<Velocity<T>>,
    samples: &'a [Sample<'a, T>],
    cfg: &SgdConfig,
    on_step: F,
) -> Result<(PatchNet<T>, Velocity<T>, Vec<TrainStepReport>)>
where
    F: FnMut(&TrainStepReport, &Trainer<'a, T>) -> Result<()>,
{
    if net.phase != Phase::Simple {
        return Err(Error::config("network is already in the ECN phase"));
    }
    let mut t = Trainer::new(net, velocity, samples, cfg.clone(), 1)?;
    let reports = t.run_until(cfg.max_iterations, on_step)?;
    let (net, vel) = t.into_parts();
    Ok((net, vel, reports))
}

/// Accepts a warm start whose patch accuracy lies in `[fraction·attainable, attainable)`.
pub fn check_warm_start(accuracy: Option<f64>, attainable: f64, fraction: f64) -> Result<()> {
    let acc = accuracy.ok_or_else(|| Error::config("warm checkpoint records no patch validation accuracy"))?;
    if !(attainable > 0.0 && attainable <= 1.0) {
        return Err(Error::config(format!("attainable accuracy {attainable} must lie in (0,1]")));
    }
    if acc >= attainable {
        return Err(Error::config(format!(
            "refusing to fine-tune: warm checkpoint patch accuracy {acc:.4} is not below the attainable {attainable:.4}. \
             Fine-tuning a converged patch classifier stalls in a local minimum of the whole-image task; \
             pick an earlier checkpoint near {:.4}",
            fraction * attainable
        )));
    }
    if acc < fraction * attainable {
        return Err(Error::config(format!(
            "refusing to fine-tune: warm checkpoint patch accuracy {acc:.4} is below {fraction} × attainable ({:.4}); \
             train the simple model longer",
            fraction * attainable
        )));
    }
    Ok(())
}

/// First entry of `(iteration, patch accuracy)` history that qualifies as a warm start.
pub fn select_warm_start(history: &[(u64, f64)], attainable: f64, fraction: f64) -> Option<usize> {
    history
        .iter()
        .position(|&(_, a)| check_warm_start(Some(a), attainable, fraction).is_ok())
}

/// ECN fine-tuning. A simple-phase checkpoint is checked against the
/// warm-start window and restarted at iteration 0 with fresh velocity; an
/// ECN-phase checkpoint resumes where it stopped.
pub fn finetune_ecn<'a, T: Scalar, F>(
    warm: Checkpoint<T>,
    samples: &'a [Sample<'a, T>],
    ecn: &EcnConfig,
    attainable: f64,
    on_step: F,
) -> Result<(PatchNet<T>, Velocity<T>, Vec<TrainStepReport>)>
where
    F: FnMut(&TrainStepReport, &Trainer<'a, T>) -> Result<()>,
{
    ecn.validate()?;
    let Checkpoint { mut net, velocity } = warm;
    let velocity = match net.phase {
        Phase::Ecn => velocity,
        Phase::Simple => {
            check_warm_start(net.val_accuracy, attainable, ecn.warm_fraction)?;
            net.phase = Phase::Ecn;
            net.iteration = 0;
            None
        }
    };
    let mut t = Trainer::new(net, velocity, samples, ecn.sgd.clone(), ecn.n)?;
    let reports = t.run_until(ecn.sgd.max_iterations, on_step)?;
    let (net, vel) = t.into_parts();
    Ok((net, vel, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_sets(k: usize, per: usize) -> Vec<PatchSet<f32>> {
        (0..k * 2)
            .map(|i| {
                let label = i % k;
                PatchSet {
                    patches: (0..per)
                        .map(|j| {
                            Tensor::from_fn(&[1, 32, 32], |p| {
                                let (y, x) = (p / 32, p % 32);
                                let on = (x / 4 + label).is_multiple_of(k) || (y + j).is_multiple_of(7);
                                if on { 0.4 } else { -0.1 }
                            })
                        })
                        .collect(),
                    origins: vec![],
                    label,
                    source_id: format!("s{i}"),
                    width: 40,
                }
            })
            .collect()
    }

    fn cfg(iters: u64) -> SgdConfig {
        SgdConfig {
            batch_size: 8,
            max_iterations: iters,
            seed: 5,
            ..SgdConfig::default()
        }
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let sets = toy_sets(2, 5);
        let samples = patch_samples(&sets);
        let net = PatchNet::<f32>::build("mini", 2, 1).unwrap();
        let mut t = Trainer::new(net, None, &samples, cfg(1), 1).unwrap();
        let mut seen: Vec<usize> = (0..5).flat_map(|it| t.batch_indices(it)).collect();
        assert_eq!(seen.len(), 40);
        let (first, second) = seen.split_at_mut(20);
        first.sort_unstable();
        second.sort_unstable();
        assert_eq!(first, (0..20).collect::<Vec<_>>());
        assert_eq!(second, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn empty_dataset_rejected() {
        let net = PatchNet::<f32>::build("mini", 2, 1).unwrap();
        let r = train_simple(net, None, &[], &cfg(1), |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn lr_in_reports_follows_schedule() {
        let sets = toy_sets(2, 3);
        let samples = patch_samples(&sets);
        let net = PatchNet::<f32>::build("mini", 2, 1).unwrap();
        let c = SgdConfig { lr_drop_every: 3, ..cfg(7) };
        let (_, _, reports) = train_simple(net, None, &samples, &c, |_, _| Ok(())).unwrap();
        assert_eq!(reports.len(), 7);
        for r in &reports {
            assert_eq!(r.lr, lr_at(&c, r.iteration));
        }
    }

    #[test]
    fn warm_start_window() {
        assert!(check_warm_start(Some(0.9), 0.95, 0.925).is_ok());
        let e = check_warm_start(Some(0.95), 0.95, 0.925).unwrap_err().to_string();
        assert!(e.contains("local minimum of the whole-image task"), "{e}");
        assert!(check_warm_start(Some(0.5), 0.95, 0.925).is_err());
        assert!(check_warm_start(None, 0.95, 0.925).is_err());
        let h = [(0, 0.3), (100, 0.85), (200, 0.89), (300, 0.95)];
        assert_eq!(select_warm_start(&h, 0.95, 0.925), Some(2));
    }

    #[test]
    fn converged_checkpoint_refused() {
        let sets = toy_sets(2, 3);
        let samples = patch_samples(&sets);
        let mut net = PatchNet::<f32>::build("mini", 2, 1).unwrap();
        net.val_accuracy = Some(0.99);
        let r = finetune_ecn(Checkpoint { net, velocity: None }, &samples, &EcnConfig { n: 1, ..EcnConfig::default() }, 0.97, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::Config(m)) if m.contains("local minimum")));
    }

    #[test]
    fn branch_count_mismatch_rejected() {
        let sets = toy_sets(2, 3);
        let samples = patch_samples(&sets);
        let net = PatchNet::<f32>::build("mini", 2, 1).unwrap();
        assert!(matches!(Trainer::new(net, None, &samples, cfg(1), 2), Err(Error::Config(_))));
    }
}
