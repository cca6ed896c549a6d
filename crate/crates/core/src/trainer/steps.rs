use evslab_autograd::{Adam, Graph, ParamSet, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{LossReport, MaskSource, Sample, TrainConfig};
use crate::binning::fuse_relaxed;
use crate::control::{
    cadence_gate, featurize_graph, gumbel_softmax_graph, one_hot, rollout_on_stacks, sample_gumbel, Controller, LearnedPolicy,
    Policy, RandomDirichletPolicy,
};
use crate::metrics::frame_loss_graph;
use crate::recon::{recon_input_graph, ReconNet};
use crate::{Error, Result, CADENCE};

fn zero_grads(p: &ParamSet) -> Vec<Tensor> {
    p.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

fn accumulate(acc: &mut [Tensor], g: &evslab_autograd::Grads, vars: &[Var], params: &ParamSet, weight: f64) -> Result<()> {
    for (k, (a, v)) in acc.iter_mut().zip(vars).enumerate() {
        if let Some(gr) = g.get(*v) {
            if !gr.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`", params.names()[k])));
            }
            for (x, y) in a.data_mut().iter_mut().zip(gr.data()) {
                *x += weight * y;
            }
        }
    }
    Ok(())
}

/// Hard per-bin column selection for a θ-step, from the configured source.
pub fn rollout_selection(
    source: MaskSource,
    controller: &Controller,
    sample: &Sample,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let use_controller = match source {
        MaskSource::Controller => true,
        MaskSource::Random => false,
        MaskSource::Mixed => rng.random::<bool>(),
    };
    let mut policy: Box<dyn Policy> = if use_controller {
        Box::new(LearnedPolicy::new(controller.clone(), rng.random::<f64>()))
    } else {
        Box::new(RandomDirichletPolicy::new(cfg.dirichlet_alpha, sample.num_thresholds())?)
    };
    Ok(rollout_on_stacks(policy.as_mut(), &sample.d, &sample.c, rng)?.selection)
}

/// Mean image loss of the reconstructor unrolled over a hard-fused sample.
fn recon_sequence_loss(g: &mut Graph, recon: &ReconNet, p: &[Var], sample: &Sample, selection: &[Vec<usize>]) -> Result<Var> {
    let nc = sample.num_thresholds();
    let mut hidden = None;
    let mut losses = Vec::with_capacity(sample.bins());
    for (t, sel) in selection.iter().enumerate() {
        let (d, _) = sample.fused_bin(t, sel);
        let vd = g.constant(d);
        let vm = g.constant(one_hot(sel, nc));
        let input = recon_input_graph(g, vd, vm)?;
        let (frame, h) = recon.forward_graph(g, p, input, hidden)?;
        hidden = Some(h);
        let gt = g.constant(sample.gt_frame(t));
        losses.push(frame_loss_graph(g, frame, gt)?);
    }
    let stacked = g.stack0(&losses)?;
    Ok(g.mean(stacked))
}

/// One Adam step on θ over hard-mask rollouts. Returns the mean image loss.
pub fn recon_step(
    recon: &mut ReconNet,
    opt: &mut Adam,
    controller: &Controller,
    batch: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut grads = zero_grads(recon.params());
    let mut total = 0.0;
    let weight = 1.0 / batch.len() as f64;
    for sample in batch {
        let selection = rollout_selection(cfg.mask_source, controller, sample, cfg, rng)?;
        let mut g = Graph::new();
        let p = recon.params().bind(&mut g, true);
        let loss = recon_sequence_loss(&mut g, recon, &p, sample, &selection)?;
        total += weight * g.value(loss).item();
        let gr = g.backward(loss)?;
        accumulate(&mut grads, &gr, &p, recon.params(), weight)?;
    }
    opt.step(recon.params_mut().tensors_mut(), &grads);
    Ok(total)
}

/// Graph nodes of the ψ-objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveParts {
    pub total: Var,
    pub image: Var,
    pub rate: Var,
}

/// Relaxed closed-loop objective `mean_t L + λ·λ_max·Σ_t B(C̃_t)` for one
/// sample. `noises` holds one `[N_c, W]` Gumbel draw per control window.
#[allow(clippy::too_many_arguments)]
pub fn control_objective(
    g: &mut Graph,
    controller: &Controller,
    cvars: &[Var],
    recon: &ReconNet,
    rvars: &[Var],
    sample: &Sample,
    lambda: f64,
    noises: &[Tensor],
    cfg: &TrainConfig,
) -> Result<ObjectiveParts> {
    let (bins, h, w, nc) = (sample.bins(), sample.height(), sample.width(), sample.num_thresholds());
    if noises.len() < bins.div_ceil(CADENCE) {
        return Err(Error::Contract(format!("{} Gumbel draws for {bins} bins", noises.len())));
    }
    let zeros = g.constant(Tensor::zeros(&[h, w]));
    let (mut d_prev, mut c_prev) = (zeros, zeros);
    let mut prev_mask = g.constant(Tensor::zeros(&[nc, w]));
    let mut mask = prev_mask;
    let (mut hc, mut hr) = (None, None);
    let mut losses = Vec::with_capacity(bins);
    let mut counts = Vec::with_capacity(bins);
    for t in 0..bins {
        if cadence_gate(t) {
            let pm = controller.config().prev_mask_features.then_some(prev_mask);
            let feats = featurize_graph(g, d_prev, c_prev, pm, lambda)?;
            let (logits, h_new) = controller.forward_graph(g, cvars, feats, hc)?;
            hc = Some(h_new);
            mask = gumbel_softmax_graph(g, logits, &noises[t / CADENCE], cfg.tau_sm)?;
        }
        let dj: Vec<Var> = sample.d.iter().map(|s| g.constant(s.index0(t))).collect();
        let cj: Vec<Var> = sample.c.iter().map(|s| g.constant(s.index0(t))).collect();
        let d_t = fuse_relaxed(g, &dj, mask)?;
        let c_t = fuse_relaxed(g, &cj, mask)?;
        let input = recon_input_graph(g, d_t, mask)?;
        let (frame, h_new) = recon.forward_graph(g, rvars, input, hr)?;
        hr = Some(h_new);
        let gt = g.constant(sample.gt_frame(t));
        losses.push(frame_loss_graph(g, frame, gt)?);
        counts.push(g.sum(c_t));
        d_prev = d_t;
        c_prev = c_t;
        prev_mask = mask;
    }
    let l = g.stack0(&losses)?;
    let image = g.mean(l);
    let c = g.stack0(&counts)?;
    let c = g.sum(c);
    let ref_total = sample.ref_total();
    // an empty reference stream has no rate to penalise
    let rate = g.scale(c, if ref_total > 0.0 { 1.0 / ref_total } else { 0.0 });
    let weighted = g.scale(rate, lambda * cfg.lambda_max);
    let total = g.add(image, weighted)?;
    Ok(ObjectiveParts { total, image, rate })
}

/// One Adam step on ψ with θ frozen. λ is drawn from U[0, 1] per sample.
pub fn control_step(
    controller: &mut Controller,
    recon: &ReconNet,
    opt: &mut Adam,
    batch: &[Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    let mut grads = zero_grads(controller.params());
    let mut report = LossReport::default();
    let weight = 1.0 / batch.len() as f64;
    for sample in batch {
        let lambda: f64 = rng.random();
        let windows = sample.bins().div_ceil(CADENCE);
        let noises: Vec<Tensor> = (0..windows)
            .map(|_| sample_gumbel(&[sample.num_thresholds(), sample.width()], rng))
            .collect();
        let mut g = Graph::new();
        let cv = controller.params().bind(&mut g, true);
        let rv = recon.params().bind(&mut g, false);
        let parts = control_objective(&mut g, controller, &cv, recon, &rv, sample, lambda, &noises, cfg)?;
        report.image_loss += weight * g.value(parts.image).item();
        report.rate_loss += weight * g.value(parts.rate).item();
        report.total += weight * g.value(parts.total).item();
        report.lambda += weight * lambda;
        let gr = g.backward(parts.total)?;
        accumulate(&mut grads, &gr, &cv, controller.params(), weight)?;
    }
    opt.step(controller.params_mut().tensors_mut(), &grads);
    Ok(report)
}
