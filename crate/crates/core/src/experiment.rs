//! Experiment configuration and the train, certify, bound pipeline.
//!
//! A run directory holds:
//!
//! ```text
//! config.toml          copy of the effective configuration
//! seed.txt
//! train_log.csv
//! checkpoint.json      final network
//! checkpoints/         intermediate networks
//! certificate.json
//! surface.csv          x, V, K_N V, K_N V - V on the certification points
//! bound.json, bound.txt, bound.csv
//! summary.json, summary.txt   (reproduce only)
//! stage_<k>/           per-stage files of a sequence run
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{
    bound_report, default_horizon, exponential_bound, polynomial_bound, Bound, BoundReport,
    DriftEvidence, InitialDistribution,
};
use crate::certifier::{certify, vstar_oracle, CertConfig, Certificate};
use crate::chain::{absorption_check, BuiltinChain, Chain, ChainSpec};
use crate::error::{Error, Result};
use crate::net::{Checkpoint, NetSpec, OutputTransform, ValueNet};
use crate::rng::{purpose, Streams};
use crate::trainer::{
    init_net, stage_seed, train, train_chain_sequence, ProbeRecord, ResidualProbe, TrainConfig,
    TrainObserver, TrainReport,
};
use crate::value::{ConstantValue, UFunction, ValueFunction};

fn default_reward() -> f64 {
    0.1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSection {
    pub widths: Vec<usize>,
    /// Map the chain's domain onto `[-1, 1]^d` before the first layer.
    #[serde(default = "yes")]
    pub normalize_inputs: bool,
    #[serde(default)]
    pub output: OutputTransform,
}

fn default_paths() -> usize {
    100_000
}
fn default_horizon_max() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    #[serde(default = "uniform")]
    pub initial: InitialDistribution,
    #[serde(default = "default_paths")]
    pub mc_paths: usize,
    #[serde(default = "default_horizon_max")]
    pub horizon_max: u64,
}

fn uniform() -> InitialDistribution {
    InitialDistribution::Uniform
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            initial: uniform(),
            mc_paths: default_paths(),
            horizon_max: default_horizon_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSection {
    /// Number of equations `m`.
    pub stages: usize,
}

/// Everything needed to run one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Constant `U` of the first equation.
    #[serde(default = "default_reward")]
    pub reward: f64,
    pub chain: ChainSpec,
    pub net: NetSection,
    pub train: TrainConfig,
    pub certify: CertConfig,
    #[serde(default)]
    pub bound: BoundConfig,
    #[serde(default)]
    pub sequence: Option<SequenceSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut c: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.set_seed(c.seed);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the run seed, which also seeds training and certification.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.certify.seed = seed;
    }

    /// SHA-256 of the configuration, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.reward > 0.0 && self.reward.is_finite()) {
            return Err(Error::Config(format!(
                "reward must be positive, got {}",
                self.reward
            )));
        }
        if self.net.widths.is_empty() || self.net.widths.contains(&0) {
            return Err(Error::Config(
                "net widths must be non-empty and positive".into(),
            ));
        }
        if let Some(s) = &self.sequence {
            if s.stages < 1 {
                return Err(Error::Config("sequence stages must be at least 1".into()));
            }
        }
        self.train
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.certify
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.bound.mc_paths < 2 {
            return Err(Error::Config("bound mc_paths must be at least 2".into()));
        }
        Ok(())
    }
}

/// Pass/fail against a reproduction target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub pass: bool,
}

impl Check {
    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("[{lo}, {hi}]"),
            pass: value >= lo && value <= hi,
        }
    }

    pub fn at_most(name: &str, value: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: format!("<= {hi}"),
            pass: value <= hi,
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            target: "true".into(),
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub experiment: String,
    pub chain: String,
    pub seed: u64,
    pub certificate_valid: bool,
    pub headline: Option<String>,
    pub checks: Vec<Check>,
}

impl ReproduceSummary {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "experiment {} ({}), seed {}",
            self.experiment, self.chain, self.seed
        );
        let _ = writeln!(s, "certificate valid: {}", self.certificate_valid);
        if let Some(h) = &self.headline {
            let _ = writeln!(s, "{h}");
        }
        for c in &self.checks {
            let _ = writeln!(
                s,
                "[{}] {}: {:.6} (target {})",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.target
            );
        }
        s
    }
}

/// Saves intermediate networks into `dir/checkpoints`.
struct CheckpointWriter<'a> {
    dir: PathBuf,
    seed: u64,
    config_hash: &'a str,
}

impl TrainObserver for CheckpointWriter<'_> {
    fn checkpoint(&mut self, iteration: u64, net: &ValueNet) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        Checkpoint::new(net, self.seed, self.config_hash, iteration)
            .save(&self.dir.join(format!("checkpoint_{iteration}.json")))
    }

    fn probe(&mut self, r: &ProbeRecord) {
        log::info!(
            "iteration {}: probe max {:.5}, mean {:.5}, std {:.5}",
            r.iteration,
            r.max,
            r.mean,
            r.std
        );
    }
}

/// A configured experiment with its chain instantiated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub chain: BuiltinChain,
    pub chain_hash: String,
    pub config_hash: String,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let chain = config.chain.build(Streams::new(config.seed))?;
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&config.chain)?.as_bytes());
        if let BuiltinChain::Logistic(l) = &chain {
            h.update(serde_json::to_string(l.data())?.as_bytes());
        }
        let chain_hash = hex::encode(h.finalize());
        let config_hash = config.hash();
        Ok(Self {
            config,
            chain,
            chain_hash,
            config_hash,
        })
    }

    pub fn net_spec(&self) -> NetSpec {
        let mut s = NetSpec::new(self.chain.dim(), self.config.net.widths.clone());
        s.output = self.config.net.output;
        if self.config.net.normalize_inputs {
            s = s.with_input_box(self.chain.domain().clone());
        }
        s
    }

    pub fn reward(&self) -> Result<UFunction> {
        UFunction::constant(self.config.reward)
    }

    pub fn default_out_dir(&self) -> PathBuf {
        self.config
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(&self.config.name))
    }

    pub fn is_sequence(&self) -> bool {
        self.config.sequence.is_some()
    }

    /// Creates `dir` and writes the configuration and seed.
    pub fn prepare_dir(&self, dir: &Path) -> Result<()> {
        mkdir(dir)?;
        write(&dir.join("config.toml"), &self.config.to_toml()?)?;
        write(&dir.join("seed.txt"), &format!("{}\n", self.config.seed))
    }

    fn save_train(&self, dir: &Path, rep: &TrainReport, seed: u64) -> Result<()> {
        Checkpoint::new(&rep.net, seed, self.config_hash.clone(), rep.iterations_run)
            .save(&dir.join("checkpoint.json"))?;
        rep.write_log_csv(&dir.join("train_log.csv"))
    }

    /// Trains a single equation and writes the checkpoint and log.
    pub fn run_train(&self, dir: &Path) -> Result<TrainReport> {
        self.prepare_dir(dir)?;
        let net = init_net(self.net_spec(), self.config.train.seed)?;
        let mut obs = CheckpointWriter {
            dir: dir.join("checkpoints"),
            seed: self.config.seed,
            config_hash: &self.config_hash,
        };
        let rep = train(
            net,
            &self.chain,
            &self.reward()?,
            &self.config.train,
            &mut obs,
        )?;
        self.save_train(dir, &rep, self.config.seed)?;
        Ok(rep)
    }

    /// Loads a checkpoint and checks that it matches this configuration's network.
    pub fn load_net(&self, path: &Path) -> Result<ValueNet> {
        let ck = Checkpoint::load(path)?;
        let net = ck.net()?;
        if net.spec() != &self.net_spec() {
            return Err(Error::Config(format!(
                "checkpoint {} has a different network specification",
                path.display()
            )));
        }
        Ok(net)
    }

    fn save_certificate(&self, dir: &Path, cert: &mut Certificate) -> Result<()> {
        cert.chain_hash = Some(self.chain_hash.clone());
        cert.save(&dir.join("certificate.json"))?;
        cert.write_surface_csv(&dir.join("surface.csv"))
    }

    /// Certifies `net` against the first equation's reward.
    pub fn run_certify(&self, net: &ValueNet, dir: &Path) -> Result<Certificate> {
        mkdir(dir)?;
        let mut cert = certify(net, &self.chain, &self.reward()?, &self.config.certify)?;
        self.save_certificate(dir, &mut cert)?;
        Ok(cert)
    }

    /// Refuses a certificate produced for another chain or network.
    pub fn check_hashes(&self, cert: &Certificate, net: &ValueNet) -> Result<()> {
        if cert.chain_hash.as_deref() != Some(self.chain_hash.as_str()) {
            return Err(Error::InvalidCertificate(
                "certificate chain hash does not match the configuration".into(),
            ));
        }
        if cert.net_hash != net.hash() {
            return Err(Error::InvalidCertificate(
                "certificate network hash does not match the checkpoint".into(),
            ));
        }
        Ok(())
    }

    fn finish_report(&self, bound: Bound, net: &ValueNet, dir: &Path) -> Result<BoundReport> {
        let mut rep = bound_report(bound, &default_horizon(self.config.bound.horizon_max));
        rep.chain_hash = Some(self.chain_hash.clone());
        rep.net_hash = Some(net.hash());
        mkdir(dir)?;
        rep.save(dir)?;
        Ok(rep)
    }

    /// Exponential bound from a valid certificate.
    pub fn run_bound(&self, cert: &Certificate, net: &ValueNet, dir: &Path) -> Result<BoundReport> {
        self.check_hashes(cert, net)?;
        let ev = DriftEvidence::from_certificate(cert)?;
        let b = exponential_bound(
            ev,
            &self.chain,
            net,
            &self.config.bound.initial,
            self.config.bound.mc_paths,
            Streams::new(self.config.seed).child(purpose::BOUND),
        )?;
        self.finish_report(Bound::Exponential(b), net, dir)
    }

    /// Trains and certifies every stage of a sequence under `dir/stage_<k>`.
    pub fn run_sequence_train(&self, dir: &Path) -> Result<Vec<(ValueNet, Certificate)>> {
        let m = self.config.sequence.as_ref().map_or(1, |s| s.stages);
        self.prepare_dir(dir)?;
        let mut obs = CheckpointWriter {
            dir: dir.join("checkpoints"),
            seed: self.config.seed,
            config_hash: &self.config_hash,
        };
        let stages = train_chain_sequence(
            &self.chain,
            m,
            self.reward()?,
            &self.net_spec(),
            &self.config.train,
            &self.config.certify,
            &mut obs,
        )?;
        let mut out = Vec::with_capacity(m);
        for (k, mut st) in stages.into_iter().enumerate() {
            let sd = dir.join(format!("stage_{}", k + 1));
            mkdir(&sd)?;
            let seed = stage_seed(self.config.train.seed, k + 1);
            let rep = TrainReport {
                net: st.net.clone(),
                probe: st.probe,
                log: st.log,
                iterations_run: 0,
                early_stopped: false,
            };
            self.save_train(&sd, &rep, seed)?;
            self.save_certificate(&sd, &mut st.certificate)?;
            out.push((st.net, st.certificate));
        }
        if let Some((net, cert)) = out.last() {
            self.save_train(
                dir,
                &TrainReport {
                    net: net.clone(),
                    probe: ResidualProbe::lattice(&self.chain, 1, 100, Streams::new(0)),
                    log: vec![],
                    iterations_run: 0,
                    early_stopped: false,
                },
                self.config.seed,
            )?;
            let mut c = cert.clone();
            self.save_certificate(dir, &mut c)?;
        }
        Ok(out)
    }

    /// Re-certifies every stage of a sequence run from its stage checkpoints.
    pub fn run_sequence_certify(&self, dir: &Path) -> Result<Vec<(ValueNet, Certificate)>> {
        let m = self.config.sequence.as_ref().map_or(1, |s| s.stages);
        let mut out: Vec<(ValueNet, Certificate)> = Vec::with_capacity(m);
        let mut u = self.reward()?;
        for k in 1..=m {
            if let Some((prev, c)) = out.last() {
                let floor = c.extrema.inf_v - c.config.epsilon;
                if !(floor > 0.0) {
                    return Err(Error::InvalidStage {
                        stage: k - 1,
                        reason: format!("certified infimum minus eps is {floor:.6}, not positive"),
                    });
                }
                u = UFunction::clamped(prev.clone(), floor)?;
            }
            let sd = dir.join(format!("stage_{k}"));
            let net = self.load_net(&sd.join("checkpoint.json"))?;
            let mut cc = self.config.certify.clone();
            cc.seed = stage_seed(self.config.certify.seed, k);
            let mut cert = certify(&net, &self.chain, &u, &cc)?;
            self.save_certificate(&sd, &mut cert)?;
            out.push((net, cert));
        }
        Ok(out)
    }

    /// Polynomial bound from per-stage certificates in `dir/stage_<k>`.
    pub fn run_polynomial_bound(
        &self,
        stages: &[(ValueNet, Certificate)],
        dir: &Path,
    ) -> Result<BoundReport> {
        for (k, (net, cert)) in stages.iter().enumerate() {
            self.check_hashes(cert, net)
                .map_err(|e| Error::InvalidStage {
                    stage: k + 1,
                    reason: e.to_string(),
                })?;
        }
        let certs: Vec<Certificate> = stages.iter().map(|s| s.1.clone()).collect();
        let (net_m, _) = stages
            .last()
            .ok_or_else(|| Error::Config("no stages".into()))?;
        let b = polynomial_bound(
            &certs,
            self.config.reward,
            net_m,
            &self.chain,
            &self.config.bound.initial,
            self.config.bound.mc_paths,
            Streams::new(self.config.seed).child(purpose::BOUND),
        )?;
        self.finish_report(Bound::Polynomial(b), net_m, dir)
    }

    /// Loads stage certificates and checkpoints written by a sequence run.
    pub fn load_sequence(&self, dir: &Path) -> Result<Vec<(ValueNet, Certificate)>> {
        let m = self.config.sequence.as_ref().map_or(1, |s| s.stages);
        (1..=m)
            .map(|k| {
                let sd = dir.join(format!("stage_{k}"));
                Ok((
                    self.load_net(&sd.join("checkpoint.json"))?,
                    Certificate::load(&sd.join("certificate.json"))?,
                ))
            })
            .collect()
    }

    /// Full pipeline plus the per-experiment reproduction checks.
    pub fn reproduce(&self, dir: &Path) -> Result<ReproduceSummary> {
        let mut checks = Vec::new();
        let (net, cert, report) = if self.is_sequence() {
            let stages = self.run_sequence_train(dir)?;
            checks.extend(sequence_checks(&stages));
            let all_valid = stages
                .iter()
                .all(|s| crate::bounds::stage_scale(&s.1) > 0.0);
            let report = if all_valid {
                Some(self.run_polynomial_bound(&stages, dir)?)
            } else {
                None
            };
            let (net, cert) = stages.last().cloned().expect("at least one stage");
            (net, cert, report)
        } else {
            let rep = self.run_train(dir)?;
            if let Some(ratio) = loss_ratio(&rep.log) {
                checks.push(Check::at_most("final / initial smoothed loss", ratio, 0.5));
            }
            let cert = self.run_certify(&rep.net, dir)?;
            let report = if cert.valid {
                Some(self.run_bound(&cert, &rep.net, dir)?)
            } else {
                None
            };
            (rep.net, cert, report)
        };
        checks.push(Check::flag("certificate valid", cert.valid));
        if !self.is_sequence() {
            checks.extend(self.chain_checks(&net, &cert, report.as_ref())?);
        }
        let summary = ReproduceSummary {
            experiment: self.config.name.clone(),
            chain: self.chain.name().to_string(),
            seed: self.config.seed,
            certificate_valid: cert.valid,
            headline: report.map(|r| r.headline),
            checks,
        };
        write(
            &dir.join("summary.json"),
            &serde_json::to_string_pretty(&summary)?,
        )?;
        write(&dir.join("summary.txt"), &summary.to_text())?;
        Ok(summary)
    }

    fn chain_checks(
        &self,
        net: &ValueNet,
        cert: &Certificate,
        report: Option<&BoundReport>,
    ) -> Result<Vec<Check>> {
        let mut checks = Vec::new();
        let exp = report.and_then(|r| match &r.bound {
            Bound::Exponential(b) => Some(b),
            _ => None,
        });
        match &self.chain {
            BuiltinChain::Quad(q) => {
                let alpha = q.alpha();
                let target = self.config.reward / alpha;
                let dom = self.chain.domain();
                let grid = dom.lattice(512);
                let dev = grid
                    .iter()
                    .map(|p| (net.value(p) - target).abs() / target)
                    .fold(0.0, f64::max);
                checks.push(Check::at_most(
                    "max relative deviation from u/alpha on 512 points",
                    dev,
                    0.1,
                ));
                let probe = ResidualProbe::lattice(
                    &self.chain,
                    512,
                    10_000,
                    Streams::new(self.config.seed).at(&[purpose::PROBE, 1]),
                );
                let r = probe.residuals(&self.chain, net, &self.reward()?);
                let sup = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                checks.push(Check::at_most(
                    "sup |K^V - V + U| (512 points, N = 1e4)",
                    sup,
                    0.02,
                ));

                let analytic = self.analytic_quad_bound()?;
                checks.push(Check {
                    name: "analytic rate equals 1 - alpha".into(),
                    value: analytic.rate,
                    target: format!("== {}", 1.0 - alpha),
                    pass: analytic.rate == 1.0 - alpha,
                });
                let (worst, _) = self.coupling_margin(analytic.c, analytic.rate, 100, 20_000)?;
                checks.push(Check::flag(
                    "C r^n dominates the coupling estimate for n <= 100",
                    worst >= 0.0,
                ));

                let oracle_streams = Streams::new(self.config.seed).child(purpose::ORACLE);
                let mut worst_gap: f64 = f64::NEG_INFINITY;
                for (i, p) in dom.lattice(16).iter().enumerate() {
                    let o = vstar_oracle(
                        &self.chain,
                        &self.reward()?,
                        p,
                        400,
                        200,
                        oracle_streams.child(i as u64),
                    )?;
                    let tol = (3.0 * o.std_error).max(0.05);
                    worst_gap = worst_gap.max((net.value(p) - o.value).abs() - tol);
                }
                checks.push(Check::at_most(
                    "oracle gap minus tolerance at 16 points",
                    worst_gap,
                    0.0,
                ));
            }
            BuiltinChain::Logistic(l) => {
                checks.push(Check::at_most("max K^V - V", cert.drift.max, -0.08));
                if let Some(b) = exp {
                    checks.push(Check::within("rate r", b.rate, 1.0 - 1.6e-3, 1.0 - 0.7e-3));
                    checks.push(Check::within("pre-multiplier C", b.c, 6.0, 11.0));
                    checks.push(Check::flag(
                        "interpolated points stay in the domain",
                        b.numerator.fallbacks == 0,
                    ));
                }
                let abs = absorption_check(
                    &self.chain,
                    100,
                    1_000_000,
                    Streams::new(self.config.seed).child(purpose::ABSORPTION),
                );
                checks.push(Check::flag(
                    "domain absorbing over 1e6 steps from the boundary",
                    abs.absorbing(),
                ));
                checks.push(Check::flag(
                    "domain contains the provable absorbing box",
                    l.domain_provably_absorbing(),
                ));
            }
            BuiltinChain::Tandem(_) => {
                if let Some(b) = exp {
                    checks.push(Check::within(
                        "contraction 1 - r",
                        1.0 - b.rate,
                        0.011,
                        0.023,
                    ));
                    checks.push(Check::within("pre-multiplier C", b.c, 4.2, 7.2));
                }
                let fit = plane_fit(&cert.points, &cert.values);
                checks.push(Check::at_most("plane fit relative L2 residual", fit, 0.15));
                checks.push(Check::at_most("residual std", cert.drift.std, 0.02));
                checks.push(Check::within(
                    "max K^V - V",
                    cert.drift.max,
                    -0.0968,
                    -0.0368,
                ));
                checks.push(Check::within("max V", cert.extrema.sup_v, 3.0, 4.6));
            }
            BuiltinChain::Walk(_) => {
                let s = surface_shape(net, &self.chain);
                checks.push(Check::within("max V", s.max, 0.7, 1.3));
                checks.push(Check::at_most("|argmax|", s.argmax[0].abs(), 0.15));
                checks.push(Check::at_most(
                    "symmetry defect / max V",
                    s.symmetry_defect / s.max,
                    0.1,
                ));
            }
        }
        Ok(checks)
    }

    /// Exponential bound for the quadratic chain with the exact solution `u / alpha`.
    pub fn analytic_quad_bound(&self) -> Result<crate::bounds::ExponentialBound> {
        let BuiltinChain::Quad(q) = &self.chain else {
            return Err(Error::Config(
                "the analytic solution exists only for quad_sgd_1d".into(),
            ));
        };
        let v = self.config.reward / q.alpha();
        exponential_bound(
            DriftEvidence::exact(self.config.reward, v, v)?,
            &self.chain,
            &ConstantValue(v),
            &self.config.bound.initial,
            self.config.bound.mc_paths,
            Streams::new(self.config.seed).at(&[purpose::BOUND, 1]),
        )
    }

    /// Smallest `C r^n - (W_n + 3 se)` over `n <= horizon`, where `W_n` is the
    /// synchronous-coupling estimate `(1 - alpha)^n E|X_0 - X_inf|`.
    pub fn coupling_margin(
        &self,
        c: f64,
        rate: f64,
        horizon: u64,
        paths: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let BuiltinChain::Quad(q) = &self.chain else {
            return Err(Error::Config(
                "the coupling check exists only for quad_sgd_1d".into(),
            ));
        };
        let alpha = q.alpha();
        let streams = Streams::new(self.config.seed).at(&[purpose::ORACLE, 2]);
        let burn = ((1e-16f64).ln() / (1.0 - alpha).ln()).ceil() as usize;
        let dists: Vec<f64> = (0..paths)
            .map(|p| {
                let mut rng = streams.child(p as u64).rng();
                let x0 = match &self.config.bound.initial {
                    InitialDistribution::Point { point } => point[0],
                    InitialDistribution::Uniform => self.chain.sample_reference(&mut rng)[0],
                };
                let mut s = self.chain.sample_reference(&mut rng);
                let mut y = [0.0];
                for _ in 0..burn {
                    let m = self.chain.sample_map(&mut rng);
                    self.chain.map_into(&m, &s, &mut y);
                    s[0] = y[0];
                }
                (x0 - s[0]).abs()
            })
            .collect();
        let (mean, se) = crate::stats::mean_se(&dists);
        let mut margins = Vec::with_capacity(horizon as usize + 1);
        for n in 0..=horizon {
            let f = (1.0 - alpha).powf(n as f64);
            margins.push(c * rate.powf(n as f64) - f * (mean + 3.0 * se));
        }
        let worst = margins.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok((worst, margins))
    }
}

fn sequence_checks(stages: &[(ValueNet, Certificate)]) -> Vec<Check> {
    let mut checks = Vec::new();
    for (k, (_, c)) in stages.iter().enumerate() {
        let s = crate::bounds::stage_scale(c);
        checks.push(Check {
            name: format!("stage {} scale after eps inflation", k + 1),
            value: s,
            target: "> 0".into(),
            pass: s > 0.0,
        });
        if k > 0 {
            let prev_inf = stages[k - 1].1.extrema.inf_v;
            checks.push(Check {
                name: format!("stage {} sup V exceeds stage {} inf V", k + 1, k),
                value: c.extrema.sup_v - prev_inf,
                target: "> 0".into(),
                pass: c.extrema.sup_v > prev_inf,
            });
        }
    }
    checks
}

/// Last over first windowed loss of a training log.
pub fn loss_ratio(log: &[crate::trainer::LogRow]) -> Option<f64> {
    match (log.first(), log.last()) {
        (Some(a), Some(b)) if log.len() > 1 && a.loss > 0.0 => Some(b.loss / a.loss),
        _ => None,
    }
}

/// `|V - P| / |V|` for the least-squares affine fit `P` of `values` over `points`.
pub fn plane_fit(points: &[Vec<f64>], values: &[f64]) -> f64 {
    let d = points.first().map_or(0, |p| p.len());
    let k = d + 1;
    // Normal equations for [1, x_1, ..., x_d].
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for (p, &v) in points.iter().zip(values) {
        let row: Vec<f64> = std::iter::once(1.0).chain(p.iter().cloned()).collect();
        for i in 0..k {
            b[i] += row[i] * v;
            for j in 0..k {
                a[i][j] += row[i] * row[j];
            }
        }
    }
    let coef = solve(a, b);
    let mut res = 0.0;
    let mut tot = 0.0;
    for (p, &v) in points.iter().zip(values) {
        let fit = coef[0] + p.iter().zip(&coef[1..]).map(|(x, c)| x * c).sum::<f64>();
        res += (v - fit).powi(2);
        tot += v * v;
    }
    (res / tot).sqrt()
}

/// Gaussian elimination with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Extremum and symmetry of a learned surface on a fine lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceShape {
    pub max: f64,
    pub argmax: Vec<f64>,
    pub min: f64,
    /// `max_x |V(x) - V(c - (x - c))|` about the domain center `c`.
    pub symmetry_defect: f64,
}

pub fn surface_shape<V: ValueFunction + ?Sized, C: Chain + ?Sized>(
    v: &V,
    chain: &C,
) -> SurfaceShape {
    let dom = chain.domain();
    let c = dom.center();
    let grid = dom.lattice(dom.lattice_side(2001));
    let mut best = (f64::NEG_INFINITY, vec![]);
    let mut min = f64::INFINITY;
    let mut sym: f64 = 0.0;
    for p in &grid {
        let val = v.value(p);
        if val > best.0 {
            best = (val, p.clone());
        }
        min = min.min(val);
        let q: Vec<f64> = p.iter().zip(&c).map(|(x, m)| 2.0 * m - x).collect();
        sym = sym.max((val - v.value(&q)).abs());
    }
    SurfaceShape {
        max: best.0,
        argmax: best.1,
        min,
        symmetry_defect: sym,
    }
}

/// Human-readable summary of a run directory.
pub fn report(dir: &Path) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "run directory {}", dir.display());
    let cert_path = dir.join("certificate.json");
    if cert_path.exists() {
        let c = Certificate::load(&cert_path)?;
        let _ = writeln!(
            s,
            "certificate: valid = {}, M = {}, N = {}, eps = {}, delta = {}",
            c.valid,
            c.points.len(),
            c.config.maps,
            c.config.epsilon,
            c.config.delta
        );
        let _ = writeln!(
            s,
            "  K^V - V:      max {:.6}, mean {:.6}, std {:.6}",
            c.drift.max, c.drift.mean, c.drift.std
        );
        let _ = writeln!(
            s,
            "  K^V - V + U:  max {:.6}, mean {:.6}, std {:.6}",
            c.drift_with_u.max, c.drift_with_u.mean, c.drift_with_u.std
        );
        let _ = writeln!(
            s,
            "  u~ = {:.6}; V in [{:.6}, {:.6}] (widened [{:.6}, {:.6}])",
            c.u_tilde,
            c.extrema.inf_v,
            c.extrema.sup_v,
            c.extrema.inf_v_widened,
            c.extrema.sup_v_widened
        );
        if let Some(cv) = &c.caveat {
            let _ = writeln!(s, "  caveat: {cv}");
        }
    } else {
        let _ = writeln!(s, "no certificate");
    }
    let bound_path = dir.join("bound.txt");
    if bound_path.exists() {
        let b = std::fs::read_to_string(&bound_path).map_err(|e| Error::io(&bound_path, e))?;
        let _ = writeln!(s, "{}", b.lines().next().unwrap_or_default());
    }
    let sum_path = dir.join("summary.txt");
    if sum_path.exists() {
        let t = std::fs::read_to_string(&sum_path).map_err(|e| Error::io(&sum_path, e))?;
        s.push_str(&t);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const QUAD: &str = r#"
name = "quad1d"
seed = 3

[chain]
name = "quad_sgd_1d"
alpha = 0.1
lower = -0.5
upper = 0.5
z = { kind = "uniform", low = -0.5, high = 0.5 }

[net]
widths = [8]

[train]
iterations = 50
batch_size = 2

[certify]
points = 32
maps = 20
lipschitz_probes = 1000

[bound]
initial = { kind = "point", point = [0.0] }
mc_paths = 100
"#;

    #[test]
    fn parses_and_propagates_seed() {
        let c = ExperimentConfig::from_toml(QUAD).unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.certify.seed, 3);
        assert_eq!(c.reward, 0.1);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_out_dir_but_not_seed() {
        let c = ExperimentConfig::from_toml(QUAD).unwrap();
        let mut d = c.clone();
        d.out_dir = Some("elsewhere".into());
        assert_eq!(c.hash(), d.hash());
        d.set_seed(4);
        assert_ne!(c.hash(), d.hash());
    }

    #[test]
    fn bad_configs_are_config_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("name = 1"),
            Err(Error::Config(_))
        ));
        let bad = QUAD.replace("widths = [8]", "widths = []");
        let c = ExperimentConfig::from_toml(&bad).unwrap();
        assert!(matches!(Experiment::new(c), Err(Error::Config(_))));
    }

    #[test]
    fn plane_fit_of_a_plane_is_exact() {
        let pts: Vec<Vec<f64>> = (0..5)
            .flat_map(|i| (0..5).map(move |j| vec![i as f64, j as f64]))
            .collect();
        let v: Vec<f64> = pts.iter().map(|p| 1.0 + 2.0 * p[0] - 0.5 * p[1]).collect();
        assert!(plane_fit(&pts, &v) < 1e-12);
        let w: Vec<f64> = pts.iter().map(|p| 1.0 + (p[0] - 2.0).powi(2)).collect();
        assert!(plane_fit(&pts, &w) > 0.1);
    }

    #[test]
    fn pipeline_writes_run_directory() {
        let exp = Experiment::new(ExperimentConfig::from_toml(QUAD).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let rep = exp.run_train(dir.path()).unwrap();
        for f in [
            "config.toml",
            "seed.txt",
            "checkpoint.json",
            "train_log.csv",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let net = exp.load_net(&dir.path().join("checkpoint.json")).unwrap();
        assert_eq!(net.params(), rep.net.params());
        let cert = exp.run_certify(&net, dir.path()).unwrap();
        assert_eq!(cert.chain_hash.as_deref(), Some(exp.chain_hash.as_str()));
        let mut other = net.clone();
        other.params_mut()[0] += 1.0;
        assert!(matches!(
            exp.check_hashes(&cert, &other),
            Err(Error::InvalidCertificate(_))
        ));
        let analytic = exp.analytic_quad_bound().unwrap();
        assert_eq!(analytic.rate, 0.9);
        assert!(report(dir.path()).unwrap().contains("certificate: valid"));
    }
}
