//! Stochastic minimization of the integrated squared residual of `KV = V - U`.
//!
//! For `X_0 ~ h` and independent maps `f_1`, `f_{-1}`,
//!
//! ```text
//! 2 [Df_1(X_0) V(f_1(X_0)) - V(X_0) + U(X_0)] [Df_{-1}(X_0) V'(f_{-1}(X_0)) - V'(X_0)]
//! ```
//!
//! is an unbiased estimate of the gradient of
//! `l(theta) = E[(KV_theta(X_0) - V_theta(X_0) + U(X_0))^2]`, because the two
//! brackets are conditionally independent given `X_0`.

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::certifier::{certify, CertConfig, Certificate};
use crate::chain::{sample_transition_pair, Chain, InitialPoint, TransitionTriple};
use crate::error::{Error, Result};
use crate::net::{NetSpec, ValueNet};
use crate::rng::{purpose, Streams};
use crate::value::{UFunction, ValueFunction};

fn default_batch() -> usize {
    32
}
fn default_probe_maps() -> usize {
    200
}
fn default_probe_points() -> usize {
    64
}
fn default_patience() -> Option<usize> {
    Some(5)
}
fn default_loss_window() -> u64 {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Overridden by the experiment seed when loaded from a configuration.
    #[serde(default)]
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// 0 disables the residual probe until the final iteration.
    #[serde(default)]
    pub probe_every: u64,
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
    #[serde(default = "default_probe_maps")]
    pub probe_maps: usize,
    /// Stop once this many consecutive probes show a negative maximum residual.
    #[serde(default = "default_patience")]
    pub early_stop_patience: Option<usize>,
    #[serde(default = "default_loss_window")]
    pub loss_window: u64,
    #[serde(default)]
    pub initial: InitialPoint,
    #[serde(default)]
    pub optimizer: AdamConfig,
    /// Multiplies the step size by `lr_decay_factor` at each listed fraction
    /// of the run.
    #[serde(default)]
    pub lr_decay_at: Vec<f64>,
    #[serde(default = "one")]
    pub lr_decay_factor: f64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn new(iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            batch_size: default_batch(),
            seed,
            checkpoint_every: 0,
            probe_every: 0,
            probe_points: default_probe_points(),
            probe_maps: default_probe_maps(),
            early_stop_patience: default_patience(),
            loss_window: default_loss_window(),
            initial: InitialPoint::Reference,
            optimizer: AdamConfig::default(),
            lr_decay_at: vec![],
            lr_decay_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "iterations and batch size must be at least 1".into(),
            ));
        }
        if self.probe_maps < 100 {
            return Err(Error::InvalidParameter(format!(
                "probe needs at least 100 maps per point, got {}",
                self.probe_maps
            )));
        }
        if self.probe_points == 0 || self.loss_window == 0 {
            return Err(Error::InvalidParameter(
                "probe points and loss window must be positive".into(),
            ));
        }
        if self.lr_decay_at.iter().any(|f| !(0.0..=1.0).contains(f))
            || !(self.lr_decay_factor > 0.0)
        {
            return Err(Error::InvalidParameter(
                "learning-rate schedule out of range".into(),
            ));
        }
        Ok(())
    }
}

/// Residual statistics of one probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub iteration: u64,
    /// Max of `K^V - V + U` over the probe points.
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    /// Max of `|K^V - V + U|`.
    pub max_abs: f64,
}

/// Fixed probe points and maps used to monitor training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProbe {
    pub points: Vec<Vec<f64>>,
    pub maps_per_point: usize,
    pub history: Vec<ProbeRecord>,
    #[serde(skip)]
    streams: Option<Streams>,
}

impl ResidualProbe {
    /// Lattice of roughly `points` points over the chain's domain.
    pub fn lattice<C: Chain + ?Sized>(
        chain: &C,
        points: usize,
        maps_per_point: usize,
        streams: Streams,
    ) -> Self {
        let dom = chain.domain();
        Self {
            points: dom.lattice(dom.lattice_side(points)),
            maps_per_point,
            history: vec![],
            streams: Some(streams),
        }
    }

    /// Evaluates `K^V - V + U` at every probe point with the same maps each time.
    pub fn residuals<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
        &self,
        chain: &C,
        net: &V,
        u: &UFunction,
    ) -> Vec<f64> {
        let streams = self
            .streams
            .unwrap_or_else(|| Streams::new(0).child(purpose::PROBE));
        let mut y = vec![0.0; chain.dim()];
        self.points
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut rng = streams.child(i as u64).rng();
                let mut acc = 0.0;
                for _ in 0..self.maps_per_point {
                    let m = chain.sample_map(&mut rng);
                    let d = chain.lipschitz_at(&m, x);
                    if d != 0.0 {
                        chain.map_into(&m, x, &mut y);
                        acc += d * net.value(&y);
                    }
                }
                acc / self.maps_per_point as f64 - net.value(x) + u.value(x)
            })
            .collect()
    }

    pub fn record<C: Chain + ?Sized, V: ValueFunction + ?Sized>(
        &mut self,
        iteration: u64,
        chain: &C,
        net: &V,
        u: &UFunction,
    ) -> ProbeRecord {
        let r = self.residuals(chain, net, u);
        let (mean, std) = crate::stats::mean_std(&r);
        let rec = ProbeRecord {
            iteration,
            max: r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std,
            max_abs: r.iter().fold(0.0, |a, v| a.max(v.abs())),
        };
        self.history.push(rec);
        rec
    }

    pub fn last(&self) -> Option<&ProbeRecord> {
        self.history.last()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    /// Mean of the unbiased per-triple loss estimates over the last window.
    pub loss: f64,
    pub probe_max: Option<f64>,
    pub probe_mean: Option<f64>,
    pub probe_std: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub net: ValueNet,
    pub probe: ResidualProbe,
    pub log: Vec<LogRow>,
    pub iterations_run: u64,
    pub early_stopped: bool,
}

impl TrainReport {
    pub fn write_log_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut s = String::from("iteration,loss,probe_max,probe_mean,probe_std\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.log {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.iteration,
                r.loss,
                opt(r.probe_max),
                opt(r.probe_mean),
                opt(r.probe_std)
            );
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Adds `scale` times the gradient estimate for `triple` to `grad` and
/// returns the unbiased loss sample `r_1 r_{-1}`.
pub(crate) fn accumulate_estimate<C: Chain + ?Sized>(
    net: &ValueNet,
    chain: &C,
    u: &UFunction,
    triple: &TransitionTriple<C::Map>,
    scale: f64,
    grad: &mut [f64],
    y: &mut [f64],
) -> f64 {
    let x0 = &triple.x0;
    let u0 = u.value(x0);
    let v0 = net.value(x0);
    let d1 = chain.lipschitz_at(&triple.forward, x0);
    let kv1 = if d1 != 0.0 {
        chain.map_into(&triple.forward, x0, y);
        d1 * net.value(y)
    } else {
        0.0
    };
    let r1 = kv1 - v0 + u0;
    let coeff = 2.0 * r1 * scale;
    let d2 = chain.lipschitz_at(&triple.backward, x0);
    let kv2 = if d2 != 0.0 {
        chain.map_into(&triple.backward, x0, y);
        d2 * net.accumulate_grad(y, coeff * d2, grad)
    } else {
        0.0
    };
    net.accumulate_grad(x0, -coeff, grad);
    r1 * (kv2 - v0 + u0)
}

/// Single-triple estimate of `l'(theta)`.
pub fn loss_grad_estimate<C: Chain + ?Sized>(
    net: &ValueNet,
    chain: &C,
    u: &UFunction,
    triple: &TransitionTriple<C::Map>,
) -> Result<Vec<f64>> {
    chain.domain().check(&triple.x0)?;
    let mut g = vec![0.0; net.param_count()];
    let mut y = vec![0.0; chain.dim()];
    accumulate_estimate(net, chain, u, triple, 1.0, &mut g, &mut y);
    Ok(g)
}

/// Receives intermediate networks during training.
pub trait TrainObserver {
    fn checkpoint(&mut self, _iteration: u64, _net: &ValueNet) -> Result<()> {
        Ok(())
    }
    fn probe(&mut self, _record: &ProbeRecord) {}
}

impl TrainObserver for () {}

/// Runs the optimizer for `cfg.iterations` steps (or until early stop).
///
/// Iteration `t` draws its batch from the stream `(TRAIN, t)`, so the run
/// depends only on the seed and the batch size.
pub fn train<C: Chain + ?Sized>(
    mut net: ValueNet,
    chain: &C,
    u: &UFunction,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    if net.spec().input_dim != chain.dim() {
        return Err(Error::DimensionMismatch {
            expected: chain.dim(),
            got: net.spec().input_dim,
        });
    }
    let streams = Streams::new(cfg.seed);
    let train_streams = streams.child(purpose::TRAIN);
    let mut probe = ResidualProbe::lattice(
        chain,
        cfg.probe_points,
        cfg.probe_maps,
        streams.child(purpose::PROBE),
    );
    let mut adam = AdamState::new(cfg.optimizer, net.param_count())?;
    let mut grad = vec![0.0; net.param_count()];
    let mut y = vec![0.0; chain.dim()];
    let scale = 1.0 / cfg.batch_size as f64;
    let mut log = Vec::new();
    let mut window_sum = 0.0;
    let mut window_n = 0u64;
    let mut negative_streak = 0usize;
    let mut early_stopped = false;
    let mut iterations_run = 0;
    let mut decays: Vec<u64> = cfg
        .lr_decay_at
        .iter()
        .map(|f| (f * cfg.iterations as f64).round() as u64)
        .collect();
    decays.sort_unstable();
    let mut next_decay = 0;

    for t in 0..cfg.iterations {
        while next_decay < decays.len() && decays[next_decay] == t {
            adam.config.step_size *= cfg.lr_decay_factor;
            next_decay += 1;
        }
        let mut rng = train_streams.child(t).rng();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        let mut starts = Vec::new();
        for _ in 0..cfg.batch_size {
            let triple = sample_transition_pair(chain, &cfg.initial, &mut rng)?;
            batch_loss += accumulate_estimate(&net, chain, u, &triple, scale, &mut grad, &mut y);
            starts.push(triple.x0);
        }
        batch_loss *= scale;
        if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: t,
                reason: "non-finite loss or gradient".into(),
                theta_norm: net.param_norm(),
                last_batch: starts,
            });
        }
        adam.step(net.params_mut(), &grad)?;
        if !net.all_finite() {
            return Err(Error::Divergence {
                iteration: t,
                reason: "non-finite parameters".into(),
                theta_norm: net.param_norm(),
                last_batch: starts,
            });
        }
        iterations_run = t + 1;
        window_sum += batch_loss;
        window_n += 1;

        let done = t + 1 == cfg.iterations;
        let probe_now = (cfg.probe_every > 0 && (t + 1) % cfg.probe_every == 0) || done;
        let mut row_probe = None;
        if probe_now {
            let rec = probe.record(t + 1, chain, &net, u);
            observer.probe(&rec);
            log::debug!(
                "iter {} probe max {:.5} mean {:.5} std {:.5}",
                t + 1,
                rec.max,
                rec.mean,
                rec.std
            );
            row_probe = Some(rec);
            negative_streak = if rec.max < 0.0 {
                negative_streak + 1
            } else {
                0
            };
        }
        if window_n == cfg.loss_window.min(cfg.iterations) || probe_now {
            log.push(LogRow {
                iteration: t + 1,
                loss: window_sum / window_n as f64,
                probe_max: row_probe.map(|r| r.max),
                probe_mean: row_probe.map(|r| r.mean),
                probe_std: row_probe.map(|r| r.std),
            });
            window_sum = 0.0;
            window_n = 0;
        }
        if cfg.checkpoint_every > 0 && (t + 1) % cfg.checkpoint_every == 0 {
            observer.checkpoint(t + 1, &net)?;
        }
        if let Some(p) = cfg.early_stop_patience {
            if p > 0 && negative_streak >= p {
                early_stopped = true;
                break;
            }
        }
    }
    if probe.last().map(|r| r.iteration) != Some(iterations_run) {
        let rec = probe.record(iterations_run, chain, &net, u);
        observer.probe(&rec);
    }
    Ok(TrainReport {
        net,
        probe,
        log,
        iterations_run,
        early_stopped,
    })
}

/// Seed for stage `k` (1-based) of a sequence; stage 1 keeps the base seed.
pub fn stage_seed(seed: u64, k: usize) -> u64 {
    seed ^ ((k as u64 - 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Fresh network for a run with the given seed.
pub fn init_net(spec: NetSpec, seed: u64) -> Result<ValueNet> {
    ValueNet::init(spec, Streams::new(seed).child(purpose::INIT))
}

/// One solved equation of a sequence.
#[derive(Debug, Clone)]
pub struct SequenceStage {
    pub net: ValueNet,
    pub probe: ResidualProbe,
    pub log: Vec<LogRow>,
    /// Lower bound of the reward this stage was trained against.
    pub floor: f64,
    pub certificate: Certificate,
}

/// Solves `K V_1 = V_1 - V_0`, then `K V_k = V_k - max(V_{k-1}, floor_k)` for
/// `k = 2..m`, where `floor_k` is the certified infimum of `V_{k-1}` minus
/// the certificate's `eps`. Every stage is certified.
pub fn train_chain_sequence<C: Chain + ?Sized>(
    chain: &C,
    m: usize,
    v0: UFunction,
    spec: &NetSpec,
    train_cfg: &TrainConfig,
    cert_cfg: &CertConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<SequenceStage>> {
    if m < 1 {
        return Err(Error::InvalidParameter(
            "sequence length must be at least 1".into(),
        ));
    }
    let mut stages: Vec<SequenceStage> = Vec::with_capacity(m);
    let mut u = v0;
    for k in 1..=m {
        if let Some(prev) = stages.last() {
            let floor = prev.certificate.extrema.inf_v - prev.certificate.config.epsilon;
            if !(floor > 0.0) {
                return Err(Error::InvalidStage {
                    stage: k - 1,
                    reason: format!("certified infimum minus eps is {floor:.6}, not positive"),
                });
            }
            u = UFunction::clamped(prev.net.clone(), floor)?;
        }
        let mut tc = train_cfg.clone();
        tc.seed = stage_seed(train_cfg.seed, k);
        let net = init_net(spec.clone(), tc.seed)?;
        let rep = train(net, chain, &u, &tc, observer)?;
        let mut cc = cert_cfg.clone();
        cc.seed = stage_seed(cert_cfg.seed, k);
        let certificate = certify(&rep.net, chain, &u, &cc)?;
        log::info!(
            "stage {k}: max K^V - V + U = {:.5}, inf V = {:.5}, sup V = {:.5}",
            certificate.drift_with_u.max,
            certificate.extrema.inf_v,
            certificate.extrema.sup_v
        );
        stages.push(SequenceStage {
            net: rep.net,
            probe: rep.probe,
            log: rep.log,
            floor: u.inf_value(),
            certificate,
        });
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::testing::Identity;
    use crate::chain::QuadSgd1d;
    use crate::domain::DomainBox;
    use crate::net::NetSpec;

    #[test]
    fn identity_chain_gives_zero_estimate() {
        let chain = Identity {
            domain: DomainBox::cube(2, -1.0, 1.0).unwrap(),
        };
        let net = ValueNet::init(NetSpec::new(2, vec![6]), Streams::new(1)).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let triple = TransitionTriple {
            x0: vec![0.3, -0.2],
            forward: (),
            backward: (),
        };
        let g = loss_grad_estimate(&net, &chain, &u, &triple).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn constant_net_at_analytic_level_has_zero_factor() {
        // V = c through the output bias only: softplus(b) + 0.01 = u / alpha = 1.
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let mut net = ValueNet::zeros(NetSpec::new(1, vec![4])).unwrap();
        let target: f64 = 1.0 - 0.01;
        let b = net.output_bias_index();
        net.params_mut()[b] = target.exp_m1().ln();
        let c = net.forward(&[0.0]).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        let mut rng = Streams::new(2).rng();
        for _ in 0..10 {
            let t = sample_transition_pair(&chain, &InitialPoint::Reference, &mut rng).unwrap();
            let g = loss_grad_estimate(&net, &chain, &u, &t).unwrap();
            assert!(g.iter().all(|v| v.abs() < 1e-12));
        }
        // Away from the solution the scalar factor is u - alpha c.
        net.params_mut()[b] = (2.0f64 - 0.01).exp_m1().ln();
        let t = sample_transition_pair(&chain, &InitialPoint::Reference, &mut rng).unwrap();
        let g = loss_grad_estimate(&net, &chain, &u, &t).unwrap();
        // Output bias gradient: 2 (u - alpha c) (0.9 s - s) with s = sigma(z).
        let s = 1.0 - (-(2.0f64 - 0.01)).exp();
        let expect = 2.0 * (0.1 - 0.1 * 2.0) * (0.9 * s - s);
        assert!((g[b] - expect).abs() < 1e-12, "{} vs {expect}", g[b]);
    }

    #[test]
    fn estimate_rejects_points_outside_domain() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let net = ValueNet::init(NetSpec::new(1, vec![3]), Streams::new(1)).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let t = TransitionTriple {
            x0: vec![0.9],
            forward: 0.0,
            backward: 0.0,
        };
        assert!(loss_grad_estimate(&net, &chain, &u, &t).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(10, 1);
        assert!(c.validate().is_ok());
        c.probe_maps = 50;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(0, 1);
        assert!(c.validate().is_err());
        c.iterations = 1;
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_stage_sequence_is_plain_training() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let mut cfg = TrainConfig::new(300, 3);
        cfg.batch_size = 2;
        cfg.probe_maps = 100;
        cfg.probe_points = 8;
        let spec = NetSpec::new(1, vec![6]);
        let mut cc = CertConfig::new(16, 20, 4);
        cc.lipschitz_probes = 1000;
        let seq = train_chain_sequence(&chain, 1, u.clone(), &spec, &cfg, &cc, &mut ()).unwrap();
        let plain = train(init_net(spec, 3).unwrap(), &chain, &u, &cfg, &mut ()).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq[0].net.params(), plain.net.params());
        assert_eq!(seq[0].floor, 0.1);
        assert!(
            train_chain_sequence(&chain, 0, u, &NetSpec::new(1, vec![2]), &cfg, &cc, &mut ())
                .is_err()
        );
    }

    #[test]
    fn same_seed_same_trajectory() {
        let chain = QuadSgd1d::standard(0.1).unwrap();
        let u = UFunction::constant(0.1).unwrap();
        let mut cfg = TrainConfig::new(200, 5);
        cfg.batch_size = 4;
        cfg.probe_maps = 100;
        cfg.probe_points = 8;
        let run = || {
            let net = ValueNet::init(
                NetSpec::new(1, vec![8]),
                Streams::new(5).child(purpose::INIT),
            )
            .unwrap();
            train(net, &chain, &u, &cfg, &mut ()).unwrap().net
        };
        assert_eq!(run().params(), run().params());
    }
}
