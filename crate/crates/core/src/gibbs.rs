//! Monte Carlo check of the conditional laws of large numbers.
//!
//! Empirical measures `L_n = (1/n) Σ δ_{Z_i}` (or `(1/n) Σ W_i δ_{z_i}` with
//! random weights on fixed sites) are conditioned on `(1/n) Σ θ ∈ C_δ`; the
//! conditioned law should concentrate on the (generalized) entropic
//! projection. Rare events are reached by exponential tilting and, when the
//! transform is not steep, by a mixture proposal in which one particle makes
//! the big jump that carries the singular part of the moment.
//!
//! Every trial owns the ChaCha stream `(seed, trial)`, and trials are
//! reduced in index order, so results are bit-identical whatever the
//! execution mode.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dual::DensityFn;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measures::{DensityFamily, Measure, Node, TestFunction};
use crate::relative::log_laplace;

/// Trials simulated between two reductions.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// `L_n = (1/n) Σ δ_{Z_i}` with `Z_i` iid `R`.
    #[default]
    IidEmpirical,
    /// `L_n = (1/n) Σ W_i δ_{z_i}` with fixed sites `z_i` whose empirical
    /// measure approximates `R` and iid weights `W_i`.
    WeightedEmpirical,
}

/// Law of the weights in weighted mode; its log-Laplace transform is the
/// `γ` of the matching entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    /// `γ(s) = e^s - 1`, relative entropy.
    #[default]
    Poisson1,
    /// `γ(s) = -log(1 - s)`
    Exponential1,
    /// `(δ₋₁ + δ₊₁)/2`, `γ(s) = log cosh s`
    TwoPoint,
    /// `γ(s) = s²/2`
    Normal01,
}

impl WeightLaw {
    /// `log E e^{sW}`
    pub fn log_laplace(&self, s: f64) -> f64 {
        match self {
            WeightLaw::Poisson1 => s.exp_m1(),
            WeightLaw::Exponential1 => {
                if s < 1.0 {
                    -(-s).ln_1p()
                } else {
                    f64::INFINITY
                }
            }
            WeightLaw::TwoPoint => {
                let a = s.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            WeightLaw::Normal01 => 0.5 * s * s,
        }
    }

    /// A draw from `e^{sw - log E e^{sW}} Law(W)(dw)`.
    fn sample_tilted<R: Rng>(&self, s: f64, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Poisson1 => Poisson::new(s.exp()).map_or(0.0, |p| p.sample(rng)),
            WeightLaw::Exponential1 => Exp::new(1.0 - s).map_or(f64::INFINITY, |e| e.sample(rng)),
            WeightLaw::TwoPoint => {
                // P(+1) = e^s / (e^s + e^{-s})
                let p_plus = 1.0 / (1.0 + (-2.0 * s).exp());
                if rng.random::<f64>() < p_plus {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightLaw::Normal01 => s + rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// How `C = [c, ∞)` is thickened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeltaVariant {
    /// `C_δ = [c - δ, ∞)`
    #[default]
    LowerTail,
    /// `C_δ = [c, c + δ]`
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Proposal {
    /// Draw from `R` and keep trials that meet the constraint.
    #[default]
    PlainRejection,
    /// Draw from `e^{yθ - Λ(y)} dR` and reweight.
    ExponentialTilt { y: f64 },
    /// As `ExponentialTilt`, except that with probability `jump_prob` one
    /// uniformly chosen particle is drawn from an exponential tail shifted to
    /// the level that meets the constraint. Needs `θ(z) = z` on `[0, ∞)`.
    Mixture { y: f64, jump_prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub mode: SimMode,
    pub n: usize,
    pub delta: f64,
    #[serde(default)]
    pub variant: DeltaVariant,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub proposal: Proposal,
    #[serde(default)]
    pub weight_law: WeightLaw,
    pub bins: Vec<f64>,
    #[serde(default)]
    pub top_k: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if self.bins.len() < 2 || self.bins.windows(2).any(|w| !(w[0] < w[1])) || self.bins.iter().any(|b| !b.is_finite()) {
            return bad("bins must be at least two finite, strictly increasing edges");
        }
        if self.top_k >= self.n {
            return bad("top_k must be below n");
        }
        if let Proposal::Mixture { jump_prob, .. } = self.proposal {
            if !(jump_prob > 0.0 && jump_prob < 1.0) {
                return bad("jump_prob must lie in (0, 1)");
            }
            if self.mode == SimMode::WeightedEmpirical {
                return bad("the mixture proposal is for iid mode only");
            }
        }
        Ok(())
    }

    /// `C_δ` for the target level `c`.
    pub fn window(&self, c: f64) -> (f64, f64) {
        match self.variant {
            DeltaVariant::LowerTail => (c - self.delta, f64::INFINITY),
            DeltaVariant::Window => (c, c + self.delta),
        }
    }

    fn tilt(&self) -> f64 {
        match self.proposal {
            Proposal::PlainRejection => 0.0,
            Proposal::ExponentialTilt { y } | Proposal::Mixture { y, .. } => y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub mean: f64,
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub mode: SimMode,
    pub n: usize,
    pub trials: usize,
    pub accepted: usize,
    /// Fraction of trials that met the constraint, before weighting.
    pub acceptance_rate: f64,
    /// Effective sample size of the accepted importance weights.
    pub ess: f64,
    /// Estimate of `P(L_n θ ∈ C_δ)`.
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub log_p_hat: f64,
    /// Relative standard error of `p̂`.
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub p_hat_rel_stderr: f64,
    /// `-(1/n) log p̂`
    pub rate: Estimate,
    /// Bin edges; the histograms carry one extra overflow bin collecting
    /// everything outside `[bins[0], bins[last])`.
    pub bins: Vec<f64>,
    pub conditioned_hist: Vec<f64>,
    pub conditioned_hist_stderr: Vec<f64>,
    pub bulk_hist: Vec<f64>,
    pub bulk_hist_stderr: Vec<f64>,
    pub target_hist: Option<Vec<f64>>,
    pub distance_to_target: Option<f64>,
    pub bulk_distance_to_target: Option<f64>,
    pub top_k: usize,
    /// `Σ_{top k} θ / n` (weighted mode: the top `k` contributions `W θ`).
    pub top_particle_over_n: Estimate,
    /// Mean of `θ` over the remaining `n - k` particles.
    pub bulk_mean: Estimate,
    /// `(1/n) Σ θ`
    pub mean_theta: Estimate,
    /// Bulk mean after excising the top `k` particles, `k = 0, 1, …`.
    pub bulk_mean_by_k: Vec<f64>,
}

/// Draws from `e^{sθ - Λ(s)} dR` for the cataloged families.
#[derive(Debug, Clone)]
enum Draw {
    Exp { rate: f64 },
    /// `∝ e^{s z}` on `[lo, hi]`.
    TruncExp { lo: f64, hi: f64, s: f64 },
    /// `∝ e^{-rate z}/(1 + z^b)` by rejection from `Exp(rate)`.
    CsiszarRejection { rate: f64, b: f64 },
    /// `∝ 1/(1 + z^b)` by rejection from `(b - 1)/(1 + z)^b`.
    CsiszarBoundary { b: f64 },
    Normal { mu: f64, sigma: f64 },
    Table { points: Vec<f64>, cdf: Vec<f64> },
}

impl Draw {
    fn sample<R: Rng>(&self, rng: &mut R) -> Node {
        // (0, 1]
        let mut u = || 1.0 - rng.random::<f64>();
        match self {
            Draw::Exp { rate } => Node::at(-u().ln() / rate),
            Draw::TruncExp { lo, hi, s } => {
                let w = hi - lo;
                let v = u();
                if *s == 0.0 {
                    Node::at(lo + w * (1.0 - v))
                } else if *s > 0.0 {
                    Node::at(hi + (v + (1.0 - v) * (-s * w).exp()).ln() / s)
                } else {
                    Node::at(lo + (v + (1.0 - v) * (s * w).exp()).ln() / s)
                }
            }
            Draw::CsiszarRejection { rate, b } => loop {
                let z = -u().ln() / rate;
                if u() * (1.0 + z.powf(*b)) <= 1.0 {
                    return Node::at(z);
                }
            },
            Draw::CsiszarBoundary { b } => loop {
                let z = u().powf(-1.0 / (b - 1.0)) - 1.0;
                // (1 + z)^b ≤ 2^{b-1} (1 + z^b)
                let ratio = (1.0 + z).powf(*b) / (2f64.powf(b - 1.0) * (1.0 + z.powf(*b)));
                if u() <= ratio {
                    return Node::at(z);
                }
            },
            Draw::Normal { mu, sigma } => {
                let g: f64 = rng.sample(StandardNormal);
                Node::at(mu + sigma * g)
            }
            Draw::Table { points, cdf } => {
                let v = rng.random::<f64>() * cdf[cdf.len() - 1];
                let j = cdf.partition_point(|&c| c <= v).min(points.len() - 1);
                Node { z: points[j], index: Some(j) }
            }
        }
    }
}

/// Sampler for the tilted law `e^{yθ - Λ(y)} dR`.
#[derive(Debug, Clone)]
pub struct TiltSampler {
    draw: Draw,
    theta: TestFunction,
    y: f64,
    log_norm: f64,
}

impl TiltSampler {
    pub fn new(r: &Measure, theta: &TestFunction, y: f64) -> Result<Self> {
        theta.check_against(r)?;
        let mut y = y;
        let draw = match r {
            Measure::Discrete(d) => {
                let ws = d.weights();
                let logs: Vec<f64> = d
                    .nodes()
                    .map(|(n, lr)| if y == 0.0 { lr } else { y * theta.eval(n) + lr })
                    .collect();
                let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut acc = 0.0;
                let cdf = logs
                    .iter()
                    .zip(ws)
                    .map(|(l, w)| {
                        acc += if *w > 0.0 { (l - top).exp() } else { 0.0 };
                        acc
                    })
                    .collect();
                Draw::Table { points: d.points().to_vec(), cdf }
            }
            Measure::Density(d) => {
                // slope of yθ in z
                let s = match theta {
                    _ if y == 0.0 => 0.0,
                    TestFunction::Identity => y,
                    TestFunction::Affine { a, .. } => y * a,
                    _ => return Err(Error::InvalidInput("tilted sampling of a density needs an affine θ".into())),
                };
                match d.family() {
                    DensityFamily::Exponential { rate } if rate - s > 0.0 => Draw::Exp { rate: rate - s },
                    DensityFamily::Uniform { lo, hi } => Draw::TruncExp { lo, hi, s },
                    DensityFamily::Gaussian { mu, sigma } => Draw::Normal { mu: mu + s * sigma * sigma, sigma },
                    DensityFamily::Csiszar { a, b } if (a - s).abs() <= 1e-9 * a => {
                        // snap onto the end of dom Λ
                        y *= a / s;
                        Draw::CsiszarBoundary { b }
                    }
                    DensityFamily::Csiszar { a, b } if a - s > 0.0 => Draw::CsiszarRejection { rate: a - s, b },
                    f => return Err(Error::InvalidInput(format!("tilt {y} leaves dom Λ for {f:?}"))),
                }
            }
        };
        let log_norm = if y == 0.0 { r.mass()?.ln() } else { log_laplace(r, std::slice::from_ref(theta), &[y])? };
        if !log_norm.is_finite() {
            return Err(Error::InvalidInput(format!("Λ({y}) is not finite")));
        }
        Ok(Self { draw, theta: theta.clone(), y, log_norm })
    }

    /// Tilt actually used, after snapping onto the end of `dom Λ`.
    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Node {
        self.draw.sample(rng)
    }

    /// `log dP_y/dR`
    pub fn log_ratio(&self, node: Node) -> f64 {
        if self.y == 0.0 {
            -self.log_norm
        } else {
            self.y * self.theta.eval(node) - self.log_norm
        }
    }
}

/// Per-trial statistics, laid out as
/// `[hist (m+1), bulk_hist (m+1), top_ratio, bulk_mean, mean_theta, bulk_mean_by_k…]`.
struct Outcome {
    log_w: f64,
    stats: Vec<f64>,
}

/// Running self-normalized importance-sampling sums, kept relative to the
/// largest log-weight seen so far.
#[derive(Debug, Clone)]
struct Accumulator {
    shift: f64,
    sw: f64,
    sw2: f64,
    swf: Vec<f64>,
    sw2f: Vec<f64>,
    sw2f2: Vec<f64>,
    accepted: usize,
    trials: usize,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            sw: 0.0,
            sw2: 0.0,
            swf: vec![0.0; dim],
            sw2f: vec![0.0; dim],
            sw2f2: vec![0.0; dim],
            accepted: 0,
            trials: 0,
        }
    }

    fn add(&mut self, o: &Outcome) {
        self.trials += 1;
        if o.log_w == f64::NEG_INFINITY {
            return;
        }
        self.accepted += 1;
        if o.log_w > self.shift {
            let s = (self.shift - o.log_w).exp();
            let s2 = s * s;
            self.sw *= s;
            self.sw2 *= s2;
            self.swf.iter_mut().for_each(|v| *v *= s);
            self.sw2f.iter_mut().for_each(|v| *v *= s2);
            self.sw2f2.iter_mut().for_each(|v| *v *= s2);
            self.shift = o.log_w;
        }
        let w = (o.log_w - self.shift).exp();
        let w2 = w * w;
        self.sw += w;
        self.sw2 += w2;
        for (k, f) in o.stats.iter().enumerate() {
            self.swf[k] += w * f;
            self.sw2f[k] += w2 * f;
            self.sw2f2[k] += w2 * f * f;
        }
    }

    fn estimate(&self, k: usize) -> Estimate {
        let mean = self.swf[k] / self.sw;
        let var = self.sw2f2[k] - 2.0 * mean * self.sw2f[k] + mean * mean * self.sw2;
        Estimate { mean, stderr: var.max(0.0).sqrt() / self.sw }
    }
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    theta: &'a TestFunction,
    lo: f64,
    hi: f64,
    sampler: TiltSampler,
    /// Lebesgue log density of `R`, the jump rate and the jump probability
    /// for the mixture proposal.
    jump: Option<(&'a crate::measures::Density1D, f64, f64)>,
    /// Weighted mode: sites and their tilts `yθ(z_i)`.
    sites: Vec<(Node, f64, f64)>,
    k_max: usize,
}

impl Engine<'_> {
    fn dim(&self) -> usize {
        2 * (self.cfg.bins.len()) + 3 + self.k_max + 1
    }

    fn bin(&self, z: f64) -> usize {
        let b = &self.cfg.bins;
        if z < b[0] || z >= b[b.len() - 1] || z.is_nan() {
            b.len() - 1
        } else {
            b.partition_point(|&e| e <= z) - 1
        }
    }

    fn trial(&self, index: usize) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64);
        match self.cfg.mode {
            SimMode::IidEmpirical => self.iid_trial(&mut rng),
            SimMode::WeightedEmpirical => self.weighted_trial(&mut rng),
        }
    }

    fn iid_trial(&self, rng: &mut ChaCha8Rng) -> Outcome {
        let n = self.cfg.n;
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        match self.jump {
            Some((_, rate, eps)) if rng.random::<f64>() < eps => {
                let j = rng.random_range(0..n);
                let mut rest = 0.0;
                for i in 0..n {
                    if i == j {
                        nodes.push(Node::at(0.0));
                    } else {
                        let nd = self.sampler.sample(rng);
                        rest += nd.z;
                        nodes.push(nd);
                    }
                }
                let t = (n as f64 * self.lo - rest).max(0.0);
                let e: f64 = rng.sample(Exp::new(rate).expect("positive rate"));
                nodes[j] = Node::at(t + e);
            }
            _ => nodes.extend((0..n).map(|_| self.sampler.sample(rng))),
        }
        let th: Vec<f64> = nodes.iter().map(|nd| self.theta.eval(*nd)).collect();
        let sum: f64 = th.iter().sum();
        let mean = sum / n as f64;
        if !(mean >= self.lo && mean <= self.hi) {
            return Outcome { log_w: f64::NEG_INFINITY, stats: Vec::new() };
        }
        let ell: Vec<f64> = nodes.iter().map(|nd| self.sampler.log_ratio(*nd)).collect();
        let big_l: f64 = ell.iter().sum();
        let log_w = match (&self.cfg.proposal, self.jump) {
            (Proposal::PlainRejection, _) => 0.0,
            (_, None) => -big_l,
            (_, Some((d, rate, eps))) => {
                // w = Π r / q with q the mixture density of the whole configuration
                let mut terms = vec![(1.0 - eps).ln() + big_l];
                let log_pick = (eps / n as f64).ln();
                for (i, nd) in nodes.iter().enumerate() {
                    let t = (n as f64 * self.lo - (sum - nd.z)).max(0.0);
                    if nd.z >= t {
                        let log_q = rate.ln() - rate * (nd.z - t);
                        terms.push(log_pick + big_l - ell[i] + log_q - d.log_density(nd.z));
                    }
                }
                -log_sum_exp(&terms)
            }
        };
        Outcome { log_w, stats: self.stats(&nodes, &th, &vec![1.0; n]) }
    }

    fn weighted_trial(&self, rng: &mut ChaCha8Rng) -> Outcome {
        let law = self.cfg.weight_law;
        let n = self.cfg.n as f64;
        let mut log_w = 0.0;
        let mut ws = Vec::with_capacity(self.sites.len());
        let mut contrib = Vec::with_capacity(self.sites.len());
        for (_, th, s) in &self.sites {
            let w = law.sample_tilted(*s, rng);
            if *s != 0.0 {
                log_w -= s * w - law.log_laplace(*s);
            }
            ws.push(w);
            contrib.push(w * th);
        }
        let mean = contrib.iter().sum::<f64>() / n;
        if !(mean >= self.lo && mean <= self.hi) {
            return Outcome { log_w: f64::NEG_INFINITY, stats: Vec::new() };
        }
        let nodes: Vec<Node> = self.sites.iter().map(|s| s.0).collect();
        Outcome { log_w, stats: self.stats(&nodes, &contrib, &ws) }
    }

    /// Histograms by position with masses `mass`, ranked by `score`.
    fn stats(&self, nodes: &[Node], score: &[f64], mass: &[f64]) -> Vec<f64> {
        let n = nodes.len();
        let m = self.cfg.bins.len();
        let k = self.cfg.top_k;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
        let mut out = vec![0.0; self.dim()];
        let total: f64 = mass.iter().sum();
        let bulk_total: f64 = order[k..].iter().map(|&i| mass[i]).sum();
        for (rank, &i) in order.iter().enumerate() {
            let b = self.bin(nodes[i].z);
            if total != 0.0 {
                out[b] += mass[i] / total;
            }
            if rank >= k && bulk_total != 0.0 {
                out[m + b] += mass[i] / bulk_total;
            }
        }
        let sum: f64 = score.iter().sum();
        let top: f64 = order[..k].iter().map(|&i| score[i]).sum();
        let base = 2 * m;
        out[base] = top / self.cfg.n as f64;
        out[base + 1] = (sum - top) / (n - k) as f64;
        out[base + 2] = sum / self.cfg.n as f64;
        let mut removed = 0.0;
        for kk in 0..=self.k_max {
            out[base + 3 + kk] = (sum - removed) / (n - kk) as f64;
            removed += score[order[kk]];
        }
        out
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let top = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + v.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

/// Sites `z_i` at the `(i + ½)/n` quantiles of a discrete `R`.
fn quantile_sites(r: &Measure, n: usize) -> Result<Vec<Node>> {
    let d = r
        .as_discrete()
        .ok_or_else(|| Error::InvalidInput("weighted mode needs a discrete reference measure".into()))?;
    let total: f64 = d.weights().iter().sum();
    let mut cdf = Vec::with_capacity(d.len());
    let mut acc = 0.0;
    for w in d.weights() {
        acc += w / total;
        cdf.push(acc);
    }
    Ok((0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            let j = cdf.partition_point(|&c| c < u).min(d.len() - 1);
            Node { z: d.points()[j], index: Some(j) }
        })
        .collect())
}

/// `target` (a density with respect to `R`) integrated over the bins, with
/// the overflow bin last, normalized to a probability vector.
pub fn bin_target(r: &Measure, target: &dyn DensityFn, bins: &[f64]) -> Result<Vec<f64>> {
    let m = bins.len();
    let mut out = vec![0.0; m];
    let f = |nd: Node, lr: f64| {
        let l = target.log_eval(nd) + lr;
        if l == f64::NEG_INFINITY {
            0.0
        } else {
            l.exp()
        }
    };
    match r {
        Measure::Discrete(d) => {
            for (nd, lr) in d.nodes() {
                let z = nd.z;
                let b = if z < bins[0] || z >= bins[m - 1] { m - 1 } else { bins.partition_point(|&e| e <= z) - 1 };
                out[b] += f(nd, lr);
            }
        }
        Measure::Density(d) => {
            let (lo, hi) = d.support();
            for k in 0..m - 1 {
                let (a, b) = (bins[k].max(lo), bins[k + 1].min(hi));
                if a < b {
                    out[k] = d.integrate_weighted_range(f, a, b)?;
                }
            }
            if lo < bins[0] {
                out[m - 1] += d.integrate_weighted_range(f, lo, bins[0].min(hi))?;
            }
            if hi > bins[m - 1] {
                out[m - 1] += d.integrate_weighted_range(f, bins[m - 1].max(lo), hi)?;
            }
        }
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInput("target has no mass on the bins".into()));
    }
    Ok(out.into_iter().map(|v| v / total).collect())
}

/// `½ Σ |p - q|`
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Simulates `cfg.trials` conditioned empirical measures. `target` is the
/// limiting density with respect to `R`, used for the binned distances.
pub fn run_conditional_sim(
    cfg: &SimConfig,
    r: &Measure,
    theta: &TestFunction,
    c: f64,
    target: Option<&dyn DensityFn>,
    exec: Execution,
) -> Result<SimResult> {
    cfg.validate()?;
    if !c.is_finite() {
        return Err(Error::InvalidInput("c must be finite".into()));
    }
    let (lo, hi) = cfg.window(c);
    let n = cfg.n;
    let (sampler, sites) = match cfg.mode {
        SimMode::IidEmpirical => (TiltSampler::new(r, theta, cfg.tilt())?, Vec::new()),
        SimMode::WeightedEmpirical => {
            let y = cfg.tilt();
            let sites = quantile_sites(r, n)?
                .into_iter()
                .map(|nd| {
                    let th = theta.eval(nd);
                    (nd, th, if y == 0.0 { 0.0 } else { y * th })
                })
                .collect();
            (TiltSampler::new(r, theta, 0.0)?, sites)
        }
    };
    let jump = match cfg.proposal {
        Proposal::Mixture { jump_prob, .. } => {
            let d = r
                .as_density()
                .filter(|d| d.support() == (0.0, f64::INFINITY))
                .ok_or_else(|| Error::InvalidInput("the mixture proposal needs a density on [0, ∞)".into()))?;
            if *theta != TestFunction::Identity {
                return Err(Error::InvalidInput("the mixture proposal needs θ(z) = z".into()));
            }
            Some((d, 1.0 / d.scale(), jump_prob))
        }
        _ => None,
    };
    let k_max = (n - 1).min(cfg.top_k.max(n / 4));
    let engine = Engine { cfg, theta, lo, hi, sampler, jump, sites, k_max };
    let mut acc = Accumulator::new(engine.dim());
    let mut start = 0;
    while start < cfg.trials {
        let idx: Vec<usize> = (start..(start + CHUNK).min(cfg.trials)).collect();
        for o in exec.map(&idx, |&i| engine.trial(i)) {
            acc.add(&o);
        }
        start += CHUNK;
    }
    if acc.accepted == 0 {
        return Err(Error::NoAcceptedTrials);
    }
    let m = cfg.bins.len();
    let est: Vec<Estimate> = (0..engine.dim()).map(|k| acc.estimate(k)).collect();
    let conditioned_hist: Vec<f64> = est[..m].iter().map(|e| e.mean).collect();
    let bulk_hist: Vec<f64> = est[m..2 * m].iter().map(|e| e.mean).collect();
    let target_hist = target.map(|t| bin_target(r, t, &cfg.bins)).transpose()?;
    let nt = acc.trials as f64;
    let log_p_hat = acc.shift + acc.sw.ln() - nt.ln();
    let p_hat_rel_stderr = if acc.trials > 1 { ((nt * acc.sw2 / (acc.sw * acc.sw) - 1.0).max(0.0) / (nt - 1.0)).sqrt() } else { f64::INFINITY };
    Ok(SimResult {
        mode: cfg.mode,
        n,
        trials: acc.trials,
        accepted: acc.accepted,
        acceptance_rate: acc.accepted as f64 / nt,
        ess: acc.sw * acc.sw / acc.sw2,
        log_p_hat,
        p_hat_rel_stderr,
        rate: Estimate { mean: -log_p_hat / n as f64, stderr: p_hat_rel_stderr / n as f64 },
        bins: cfg.bins.clone(),
        distance_to_target: target_hist.as_ref().map(|t| total_variation(&conditioned_hist, t)),
        bulk_distance_to_target: target_hist.as_ref().map(|t| total_variation(&bulk_hist, t)),
        conditioned_hist_stderr: est[..m].iter().map(|e| e.stderr).collect(),
        bulk_hist_stderr: est[m..2 * m].iter().map(|e| e.stderr).collect(),
        conditioned_hist,
        bulk_hist,
        target_hist,
        top_k: cfg.top_k,
        top_particle_over_n: est[2 * m],
        bulk_mean: est[2 * m + 1],
        mean_theta: est[2 * m + 2],
        bulk_mean_by_k: est[2 * m + 3..].iter().map(|e| e.mean).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularDiagnostic {
    pub top_k: usize,
    /// Mean of `Σ_{top k} θ / n` over accepted trials.
    pub topk_ratio_mean: Estimate,
    pub bulk_mean: Estimate,
    #[serde(serialize_with = "crate::ext_real::serialize")]
    pub x_star: f64,
    /// Smallest number of excised particles that brings the bulk mean
    /// within `δ` of `x_star`, if any.
    pub adequate_k: Option<usize>,
    pub k_over_n: Option<f64>,
}

impl SingularDiagnostic {
    pub fn from_result(res: &SimResult, x_star: f64, delta: f64) -> Self {
        let adequate_k = res.bulk_mean_by_k.iter().position(|b| (b - x_star).abs() <= delta);
        Self {
            top_k: res.top_k,
            topk_ratio_mean: res.top_particle_over_n,
            bulk_mean: res.bulk_mean,
            x_star,
            adequate_k,
            k_over_n: adequate_k.map(|k| k as f64 / res.n as f64),
        }
    }
}

/// Runs the simulation and summarizes how much of the moment the extreme
/// particles carry.
pub fn singular_diagnostic(
    cfg: &SimConfig,
    r: &Measure,
    theta: &TestFunction,
    c: f64,
    x_star: f64,
    exec: Execution,
) -> Result<SingularDiagnostic> {
    let res = run_conditional_sim(cfg, r, theta, c, None, exec)?;
    Ok(SingularDiagnostic::from_result(&res, x_star, cfg.delta))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRung {
    pub n: usize,
    pub rate: Option<Estimate>,
    pub accepted: usize,
    pub ess: f64,
    /// No trial was accepted at this rung.
    pub omitted: bool,
}

/// `-(1/n) log p̂_n` along a ladder of particle counts.
pub fn rate_estimate(
    cfg: &SimConfig,
    r: &Measure,
    theta: &TestFunction,
    c: f64,
    ns: &[usize],
    exec: Execution,
) -> Result<Vec<RateRung>> {
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        let rung_cfg = SimConfig { n, top_k: cfg.top_k.min(n.saturating_sub(1)), ..cfg.clone() };
        match run_conditional_sim(&rung_cfg, r, theta, c, None, exec) {
            Ok(res) => out.push(RateRung { n, rate: Some(res.rate), accepted: res.accepted, ess: res.ess, omitted: false }),
            Err(Error::NoAcceptedTrials) => out.push(RateRung { n, rate: None, accepted: 0, ess: 0.0, omitted: true }),
            Err(e) => return Err(e),
        }
    }
    if out.iter().all(|r| r.omitted) {
        return Err(Error::NoAcceptedTrials);
    }
    Ok(out)
}

/// Histogram rows `bin_lo,bin_hi,mass,target_mass`; the overflow bin is
/// written with `bin_lo = bins[last]` and `bin_hi = inf`.
pub fn write_hist_csv(path: &std::path::Path, bins: &[f64], mass: &[f64], target: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "mass", "target_mass"])?;
    let m = bins.len();
    for k in 0..m {
        let (a, b) = if k + 1 < m { (bins[k], bins[k + 1]) } else { (bins[m - 1], f64::INFINITY) };
        let t = target.map_or(String::new(), |t| t[k].to_string());
        w.write_record([a.to_string(), b.to_string(), mass[k].to_string(), t])?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Density1D, DiscreteMeasure};

    fn cfg(n: usize, trials: usize, proposal: Proposal) -> SimConfig {
        SimConfig {
            mode: SimMode::IidEmpirical,
            n,
            delta: 0.05,
            variant: DeltaVariant::LowerTail,
            trials,
            seed: 7,
            proposal,
            weight_law: WeightLaw::Poisson1,
            bins: (0..=10).map(|k| k as f64).collect(),
            top_k: 1,
        }
    }

    fn exp_r() -> Measure {
        Density1D::exponential(1.0).unwrap().into()
    }

    #[test]
    fn weight_law_transforms() {
        assert!((WeightLaw::Poisson1.log_laplace(0.3) - (0.3f64.exp() - 1.0)).abs() < 1e-15);
        assert!((WeightLaw::TwoPoint.log_laplace(0.7) - 0.7f64.cosh().ln()).abs() < 1e-15);
        assert!((WeightLaw::TwoPoint.log_laplace(-40.0) - 40f64.cosh().ln()).abs() < 1e-12);
        assert_eq!(WeightLaw::Exponential1.log_laplace(1.0), f64::INFINITY);
    }

    #[test]
    fn tilted_weight_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (law, s, mean) in [
            (WeightLaw::Poisson1, 0.5, 0.5f64.exp()),
            (WeightLaw::Exponential1, 0.5, 2.0),
            (WeightLaw::TwoPoint, 0.5, 0.5f64.tanh()),
            (WeightLaw::Normal01, 0.5, 0.5),
        ] {
            let k = 200_000;
            let m: f64 = (0..k).map(|_| law.sample_tilted(s, &mut rng)).sum::<f64>() / k as f64;
            assert!((m - mean).abs() < 0.02, "{law:?}: {m}");
        }
    }

    #[test]
    fn samplers_match_their_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = 200_000;
        let check = |r: Measure, y: f64, mean: f64, rng: &mut ChaCha8Rng| {
            let s = TiltSampler::new(&r, &TestFunction::Identity, y).unwrap();
            let m: f64 = (0..k).map(|_| s.sample(rng).z).sum::<f64>() / k as f64;
            assert!((m - mean).abs() < 0.02 * (1.0 + mean), "{r:?} y={y}: {m} vs {mean}");
        };
        check(exp_r(), 0.5, 2.0, &mut rng);
        check(Density1D::uniform(0.0, 1.0).unwrap().into(), 0.0, 0.5, &mut rng);
        // mean of ∝ e^{2z} on [0,1] is 1/(1 - e^{-2}) - 1/2
        check(Density1D::uniform(0.0, 1.0).unwrap().into(), 2.0, 1.0 / (1.0 - (-2f64).exp()) - 0.5, &mut rng);
        check(Density1D::gaussian(1.0, 2.0).unwrap().into(), 0.25, 2.0, &mut rng);
        let d = DiscreteMeasure::new(vec![0.0, 1.0, 2.0], vec![0.2, 0.3, 0.5]).unwrap();
        check(d.into(), 0.0, 1.3, &mut rng);
    }

    #[test]
    fn csiszar_boundary_sampler_quantiles() {
        // ∫_0^1 dz/(1+z³) = (1/3)ln 2 + π/(3√3), over a₁ = 2π/(3√3)
        let a1 = 2.0 * std::f64::consts::PI / (3.0 * 3f64.sqrt());
        let p = (2f64.ln() / 3.0 + std::f64::consts::PI / (3.0 * 3f64.sqrt())) / a1;
        let r: Measure = Density1D::csiszar(1.0, 3.0, true).unwrap().into();
        let s = TiltSampler::new(&r, &TestFunction::Identity, 1.0 - 1e-12).unwrap();
        assert_eq!(s.y(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = 400_000;
        let hits = (0..k).filter(|_| s.sample(&mut rng).z < 1.0).count();
        assert!((hits as f64 / k as f64 - p).abs() < 0.004);
    }

    #[test]
    fn always_satisfied_constraint() {
        let mut c = cfg(50, 300, Proposal::PlainRejection);
        c.variant = DeltaVariant::LowerTail;
        let res = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, -10.0, Some(&|_: Node| 1.0), Execution::Sequential).unwrap();
        assert_eq!(res.acceptance_rate, 1.0);
        assert!((res.conditioned_hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(res.distance_to_target.unwrap() < 0.05);
        assert!((res.mean_theta.mean - 1.0).abs() < 4.0 * res.mean_theta.stderr + 1e-3);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let c = cfg(100, 5000, Proposal::ExponentialTilt { y: 0.5 });
        let a = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 2.0, None, Execution::Sequential).unwrap();
        let b = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 2.0, None, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tilt_and_plain_agree_on_likely_events() {
        let mut c = cfg(10, 40_000, Proposal::PlainRejection);
        c.variant = DeltaVariant::Window;
        c.delta = 0.3;
        let plain = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 0.8, None, Execution::Parallel).unwrap();
        c.proposal = Proposal::ExponentialTilt { y: 0.2 };
        let tilt = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 0.8, None, Execution::Parallel).unwrap();
        let (p, q) = (plain.log_p_hat.exp(), tilt.log_p_hat.exp());
        let se = (p * plain.p_hat_rel_stderr).hypot(q * tilt.p_hat_rel_stderr);
        assert!((p - q).abs() < 3.0 * se, "{p} vs {q} ± {se}");
    }

    #[test]
    fn exponential_rate_against_gamma_tail() {
        // P(Gamma(n, 1) ≥ n c) = e^{-nc} Σ_{k<n} (nc)^k / k!
        let n = 10;
        let x = 2.0 * n as f64;
        let mut term = 1.0;
        let mut s = 1.0;
        for k in 1..n {
            term *= x / k as f64;
            s += term;
        }
        let exact = -x + s.ln();
        let mut c = cfg(n, 50_000, Proposal::ExponentialTilt { y: 0.5 });
        c.delta = 1e-9;
        let res = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 2.0 + 1e-9, None, Execution::Parallel).unwrap();
        assert!((res.log_p_hat - exact).abs() < 3.0 * res.p_hat_rel_stderr + 1e-6, "{} vs {exact}", res.log_p_hat);
    }

    #[test]
    fn no_accepted_trials() {
        let c = cfg(50, 10, Proposal::PlainRejection);
        let e = run_conditional_sim(&c, &exp_r(), &TestFunction::Identity, 30.0, None, Execution::Sequential);
        assert!(matches!(e, Err(Error::NoAcceptedTrials)));
    }

    #[test]
    fn config_is_validated() {
        let mut c = cfg(5, 10, Proposal::PlainRejection);
        c.bins = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = cfg(5, 10, Proposal::Mixture { y: 1.0, jump_prob: 1.5 });
        assert!(c.validate().is_err());
        c.proposal = Proposal::PlainRejection;
        c.top_k = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn weighted_mode_sites_follow_r() {
        let d = DiscreteMeasure::new(vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        let sites = quantile_sites(&d.into(), 8).unwrap();
        assert_eq!(sites.iter().filter(|s| s.z == 0.0).count(), 2);
    }

    #[test]
    fn histogram_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_hist_csv(&p, &[0.0, 1.0], &[0.75, 0.25], Some(&[0.5, 0.5])).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "bin_lo,bin_hi,mass,target_mass\n0,1,0.75,0.5\n1,inf,0.25,0.5\n");
    }
}
