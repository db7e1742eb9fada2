//! Coupled chains: the monotone grand coupling and coupling times, the
//! identity coupling of even-odd scans and how far it spreads disagreement,
//! component sizes of random vertex subsets, and the one-step rectangle-block
//! coupling on lattices.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    region_conditional, replica_rng, site_update, ordered_site_update, ChainState, Kernel,
};
use crate::error::{Error, Result};
use crate::graphs::{Graph, GridShape};
use crate::spin::{
    decode_into, encode, is_locally_monotone, is_monotone, Spin, SpinOrder, SpinSystem,
};

/// Default step budget before a replica counts as censored.
pub const DEFAULT_BUDGET: u64 = 100_000;

/// Largest state space on which monotonicity is checked over all up-sets;
/// above it, or when the up-sets overflow their cap, the single-site check
/// is used.
pub const FULL_MONOTONE_CHECK: u128 = 1 << 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrajectory {
    pub upper: ChainState,
    pub lower: ChainState,
    pub ordered: bool,
    pub hamming: usize,
}

impl CoupledTrajectory {
    pub fn new(upper: ChainState, lower: ChainState, order: &SpinOrder) -> Self {
        let mut t = Self {
            ordered: order.dominates(&upper.config, &lower.config),
            hamming: 0,
            upper,
            lower,
        };
        t.hamming = t.recount();
        t
    }

    /// All-top against all-bottom.
    pub fn extremes(sys: &SpinSystem, order: &SpinOrder) -> Result<Self> {
        Ok(Self::new(
            ChainState::extreme(sys, order, true)?,
            ChainState::extreme(sys, order, false)?,
            order,
        ))
    }

    fn recount(&self) -> usize {
        hamming(&self.upper.config, &self.lower.config)
    }

    pub fn coalesced(&self) -> bool {
        self.hamming == 0
    }
}

pub fn hamming(a: &[Spin], b: &[Spin]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// A system together with a spin order under which it has been checked to be
/// monotone.
#[derive(Clone, Debug)]
pub struct MonotoneCoupler<'a> {
    sys: &'a SpinSystem,
    order: SpinOrder,
}

impl<'a> MonotoneCoupler<'a> {
    /// Verifies monotonicity once: over all up-sets for small systems, by the
    /// single-site criterion otherwise.
    pub fn new(sys: &'a SpinSystem, order: SpinOrder) -> Result<Self> {
        let full = if sys.state_space_size() <= FULL_MONOTONE_CHECK {
            match is_monotone(sys, &order) {
                Err(Error::CapExceeded { .. }) => None,
                r => Some(r?),
            }
        } else {
            None
        };
        let ok = match full {
            Some(ok) => ok,
            None => is_locally_monotone(sys, &order)?,
        };
        if !ok {
            return Err(Error::NotMonotone);
        }
        Ok(Self { sys, order })
    }

    pub fn order(&self) -> &SpinOrder {
        &self.order
    }

    pub fn system(&self) -> &SpinSystem {
        self.sys
    }
}

/// Advances both chains by one kernel step with shared randomness: the same
/// site schedule and the same uniform at every heat-bath update, resolved by
/// inverse CDF in the declared spin order.
pub fn monotone_coupled_step(
    coupler: &MonotoneCoupler,
    pair: &mut CoupledTrajectory,
    kernel: &Kernel,
    rng: &mut impl Rng,
) -> Result<()> {
    let sys = coupler.sys;
    let seq = kernel.site_schedule(sys, rng).ok_or_else(|| {
        Error::Unsupported(format!("{} kernel has no single-site schedule", kernel.name()))
    })?;
    for v in seq {
        let u: f64 = rng.random();
        ordered_site_update(sys, &coupler.order, &mut pair.upper.config, v, u);
        ordered_site_update(sys, &coupler.order, &mut pair.lower.config, v, u);
    }
    pair.upper.steps += 1;
    pair.lower.steps += 1;
    pair.hamming = pair.recount();
    if pair.ordered && !coupler.order.dominates(&pair.upper.config, &pair.lower.config) {
        pair.ordered = false;
        return Err(Error::OrderViolated(pair.upper.steps as usize));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingTime {
    /// Coalescence step per replica; `None` when the budget ran out.
    pub times: Vec<Option<u64>>,
    pub quantile: f64,
    /// Smallest `t` with at least a `quantile` fraction coalesced by `t`.
    pub value: Option<u64>,
    /// Percentile bootstrap interval for `value` at 95%.
    pub interval: (Option<u64>, Option<u64>),
    pub censored: usize,
    pub budget: u64,
}

impl CouplingTime {
    /// Median over replicas, censored ones sorting last.
    pub fn median(&self) -> Option<u64> {
        quantile_of(&self.times, 0.5)
    }

    /// Grouped-data median: each integer `t` spreads over `[t - 1/2, t + 1/2)`
    /// and the empirical CDF is interpolated linearly inside the class that
    /// crosses one half. `None` if censoring reaches the median.
    pub fn grouped_median(&self) -> Option<f64> {
        let n = self.times.len() as f64;
        let mut t: Vec<u64> = self.times.iter().flatten().copied().collect();
        t.sort_unstable();
        let mut below = 0usize;
        let mut i = 0;
        while i < t.len() {
            let v = t[i];
            let j = t[i..].partition_point(|&x| x == v) + i;
            let (lo, hi) = (below as f64 / n, j as f64 / n);
            if hi >= 0.5 {
                return Some(v as f64 - 0.5 + (0.5 - lo) / (hi - lo));
            }
            below = j;
            i = j;
        }
        None
    }
}

/// Empirical `quantile` of possibly censored times.
pub fn quantile_of(times: &[Option<u64>], quantile: f64) -> Option<u64> {
    if times.is_empty() {
        return None;
    }
    let mut t: Vec<u64> = times.iter().map(|x| x.unwrap_or(u64::MAX)).collect();
    t.sort_unstable();
    let need = ((quantile * t.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let v = t[need.min(t.len()) - 1];
    (v != u64::MAX).then_some(v)
}

/// Coalescence times of the extreme-start monotone coupling across
/// `replicas` independent streams under `root`.
pub fn coupling_time(
    coupler: &MonotoneCoupler,
    kernel: &Kernel,
    replicas: usize,
    quantile: f64,
    budget: u64,
    root: u64,
) -> Result<CouplingTime> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::InvalidParameter(format!("quantile {quantile} outside (0, 1]")));
    }
    if replicas == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    kernel.validate(coupler.sys)?;
    let start = CoupledTrajectory::extremes(coupler.sys, &coupler.order)?;
    let times = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Option<u64>> {
            let mut rng = replica_rng(root, r as u64);
            let mut pair = start.clone();
            if pair.coalesced() {
                return Ok(Some(0));
            }
            for t in 1..=budget {
                monotone_coupled_step(coupler, &mut pair, kernel, &mut rng)?;
                if pair.coalesced() {
                    return Ok(Some(t));
                }
            }
            Ok(None)
        })
        .collect::<Result<Vec<_>>>()?;
    let value = quantile_of(&times, quantile);
    let mut boot_rng = replica_rng(root, u64::MAX);
    let mut boots: Vec<u64> = (0..1000)
        .map(|_| {
            let resample: Vec<Option<u64>> =
                (0..times.len()).map(|_| times[boot_rng.random_range(0..times.len())]).collect();
            quantile_of(&resample, quantile).unwrap_or(u64::MAX)
        })
        .collect();
    boots.sort_unstable();
    let pick = |p: f64| {
        let v = boots[((p * boots.len() as f64) as usize).min(boots.len() - 1)];
        (v != u64::MAX).then_some(v)
    };
    Ok(CouplingTime {
        censored: times.iter().filter(|t| t.is_none()).count(),
        interval: (pick(0.025), pick(0.975)),
        times,
        quantile,
        value,
        budget,
    })
}

/// Least-squares fit `y ≈ a + b·x` with Pearson correlation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub correlation: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("fit needs two equal-length series of length >= 2".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("x values are constant".into()));
    }
    let slope = sxy / sxx;
    let correlation = if syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    Ok(LinearFit {
        intercept: my - slope * mx,
        slope,
        correlation,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusReport {
    /// Largest distance from the seed vertex of any disagreement seen up to
    /// the end of step `t`, maximised over trials; entry `t-1` is step `t`.
    pub max_radius: Vec<usize>,
    pub trials: usize,
    /// Whether `max_radius[t-1] <= 3t` for every `t`.
    pub within_bound: bool,
}

/// Starts two even-odd chains that differ at one random vertex and drives
/// them with identical uniforms for `steps` steps, recording how far from that
/// vertex any disagreement reaches. The initial configuration is drawn by
/// running the chain for `burn_in` steps from the all-zero configuration.
pub fn disagreement_radius(
    sys: &SpinSystem,
    even: &[usize],
    odd: &[usize],
    steps: usize,
    trials: usize,
    burn_in: usize,
    root: u64,
) -> Result<RadiusReport> {
    let kernel = Kernel::even_odd_with(sys.graph(), even.to_vec(), odd.to_vec(), false)?;
    let free = sys.free_vertices();
    if free.is_empty() {
        return Err(Error::InvalidParameter("no free vertices".into()));
    }
    let init = first_valid(sys)?;
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|r| -> Result<Vec<usize>> {
            let mut rng = replica_rng(root, r as u64);
            let mut x = init.clone();
            for _ in 0..burn_in {
                kernel.step(sys, &mut x, &mut rng)?;
            }
            let mut x = x.config;
            // Seed disagreement: a free vertex with some alternative spin.
            let (v, y) = loop {
                let v = free[rng.random_range(0..free.len())];
                let alts: Vec<Spin> = (0..sys.q() as Spin)
                    .filter(|&s| s != x[v] && sys.local_log_weight(&x, v, s).is_some())
                    .collect();
                if !alts.is_empty() {
                    let mut y = x.clone();
                    y[v] = alts[rng.random_range(0..alts.len())];
                    break (v, y);
                }
            };
            let mut y = y;
            let dist = sys.graph().distances_from(v);
            let mut reach = 0usize;
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                let seq = kernel.site_schedule(sys, &mut rng).expect("even-odd has a schedule");
                for w in seq {
                    let u: f64 = rng.random();
                    site_update(sys, &mut x, w, u);
                    site_update(sys, &mut y, w, u);
                    if x[w] != y[w] {
                        reach = reach.max(dist[w].unwrap_or(usize::MAX));
                    }
                }
                out.push(reach);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut max_radius = vec![0; steps];
    for r in &per_trial {
        for (m, &x) in max_radius.iter_mut().zip(r) {
            *m = (*m).max(x);
        }
    }
    let within_bound = max_radius.iter().enumerate().all(|(t, &r)| r <= 3 * (t + 1));
    Ok(RadiusReport {
        max_radius,
        trials,
        within_bound,
    })
}

fn first_valid(sys: &SpinSystem) -> Result<ChainState> {
    for s in 0..sys.q() as Spin {
        if let Ok(c) = ChainState::uniform_fill(sys, s) {
            return Ok(c);
        }
    }
    Err(Error::EmptyConditional)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailHistogram {
    /// `counts[k]` trials with `|C_S(v)| = k`; `k = 0` means `v ∉ S`.
    pub counts: Vec<u64>,
    pub trials: u64,
    pub theta: f64,
    pub ell: usize,
    pub n: usize,
    pub max_degree: usize,
    /// `(ℓ/n)(2eΔθ)^{k-1}` per `k`.
    pub bound: Vec<f64>,
}

impl TailHistogram {
    pub fn frequency(&self, k: usize) -> f64 {
        self.counts.get(k).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    /// Binomial standard deviation of the frequency when the true
    /// probability sits at the bound.
    pub fn sigma(&self, k: usize) -> f64 {
        let b = self.bound[k].min(1.0);
        (b * (1.0 - b) / self.trials as f64).sqrt()
    }

    /// Sizes `k >= 1` whose frequency exceeds `bound + z·σ`.
    pub fn violations(&self, z: f64) -> Vec<usize> {
        (1..self.counts.len())
            .filter(|&k| self.frequency(k) > self.bound[k] + z * self.sigma(k))
            .collect()
    }
}

/// Size of the component of `v` in the subgraph induced by a uniform
/// `ℓ`-subset, `ℓ = ⌈θn⌉`.
pub fn component_tail(g: &Graph, theta: f64, v: usize, trials: u64, root: u64) -> Result<TailHistogram> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter(format!("θ = {theta} outside (0, 1]")));
    }
    let n = g.n();
    if v >= n {
        return Err(Error::VertexOutOfRange { vertex: v, n });
    }
    let ell = ((theta * n as f64) - 1e-9).ceil().max(1.0) as usize;
    const CHUNK: u64 = 4096;
    let chunks = trials.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = replica_rng(root, c);
            let mut counts = vec![0u64; ell + 1];
            let mut inside = vec![false; n];
            let mut seen = vec![false; n];
            let mut stack = Vec::new();
            let todo = CHUNK.min(trials - c * CHUNK);
            for _ in 0..todo {
                let s = sample(&mut rng, n, ell);
                for w in s.iter() {
                    inside[w] = true;
                }
                let mut size = 0;
                if inside[v] {
                    stack.push(v);
                    seen[v] = true;
                    let mut visited = vec![v];
                    while let Some(x) = stack.pop() {
                        size += 1;
                        for &y in g.neighbors(x) {
                            if inside[y] && !seen[y] {
                                seen[y] = true;
                                visited.push(y);
                                stack.push(y);
                            }
                        }
                    }
                    for x in visited {
                        seen[x] = false;
                    }
                }
                counts[size] += 1;
                for w in s.iter() {
                    inside[w] = false;
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; ell + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let delta = g.max_degree();
    let ratio = 2.0 * std::f64::consts::E * delta as f64 * theta;
    let lead = ell as f64 / n as f64;
    let bound = (0..=ell)
        .map(|k| lead * ratio.powi(k as i32 - 1))
        .collect();
    Ok(TailHistogram {
        counts,
        trials,
        theta,
        ell,
        n,
        max_degree: delta,
        bound,
    })
}

/// Outcome of the one-step rectangle-block coupling from single-site
/// disagreements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    /// Mean of `d(X_1, Y_1)`.
    pub mean: f64,
    pub std_err: f64,
    /// One-sided 95% upper confidence bound on the mean.
    pub upper95: f64,
    pub trials: u64,
    /// Trials where the disagreement was inside, next to, and away from the
    /// chosen block.
    pub inside: u64,
    pub boundary: u64,
    pub far: u64,
    /// Mean distance over boundary trials.
    pub boundary_mean: f64,
    pub radius: usize,
}

/// `r = max(1, round(½ (L/d)^{1/(2d)}))`.
pub fn default_distant_radius(block_radius: usize, dim: usize) -> usize {
    let r = 0.5 * (block_radius as f64 / dim as f64).powf(1.0 / (2.0 * dim as f64));
    (r.round() as usize).max(1)
}

/// Rectangle-block dynamics on a lattice: pick `v` uniformly, resample the
/// block `{w : d∞(w, v) < L}` from its conditional. Each trial takes `X_0`
/// from a running heat-bath scan chain (burned in once per replica), flips a
/// uniform vertex `u` to get `Y_0`, and couples one block step of each:
///
/// - `u` in the block: the boundaries agree, both draw the same sample.
/// - `u` not adjacent to the block: same conditional, same sample.
/// - `u` adjacent: the block vertices at graph distance `>= radius` from `u`
///   are coupled maximally, the rest completed independently.
pub fn rectangle_block_contraction(
    sys: &SpinSystem,
    shape: &GridShape,
    block_radius: usize,
    radius: Option<usize>,
    trials: u64,
    burn_in: usize,
    root: u64,
) -> Result<ContractionEstimate> {
    let g = sys.graph();
    if *g != shape.graph() {
        return Err(Error::Unsupported("rectangle blocks need a grid graph matching the shape".into()));
    }
    if !sys.boundary().is_empty() {
        return Err(Error::Unsupported("rectangle blocks need a system without boundary".into()));
    }
    if block_radius == 0 || block_radius > 3 {
        return Err(Error::InvalidParameter(format!("block radius {block_radius} outside 1..=3")));
    }
    let n = sys.n();
    let radius = radius.unwrap_or_else(|| default_distant_radius(block_radius, shape.dims.len()));
    let blocks: Vec<Vec<usize>> = (0..n)
        .map(|v| (0..n).filter(|&w| shape.linf_distance(v, w) < block_radius).collect())
        .collect();
    let scan = Kernel::scan(n);
    let replicas = rayon::current_num_threads().max(1) as u64 * 4;
    let per = trials.div_ceil(replicas);
    let init = first_valid(sys)?;
    #[derive(Default, Clone, Copy)]
    struct Acc {
        sum: f64,
        sq: f64,
        count: u64,
        inside: u64,
        boundary: u64,
        far: u64,
        bsum: f64,
    }
    let parts = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Acc> {
            let mut rng = replica_rng(root, r);
            let mut acc = Acc::default();
            let todo = per.min(trials.saturating_sub(r * per));
            if todo == 0 {
                return Ok(acc);
            }
            let mut x = init.clone();
            for _ in 0..burn_in {
                scan.step(sys, &mut x, &mut rng)?;
            }
            for _ in 0..todo {
                scan.step(sys, &mut x, &mut rng)?;
                let u = rng.random_range(0..n);
                let alts: Vec<Spin> = (0..sys.q() as Spin)
                    .filter(|&s| s != x.config[u] && sys.local_log_weight(&x.config, u, s).is_some())
                    .collect();
                if alts.is_empty() {
                    continue;
                }
                let mut y = x.config.clone();
                y[u] = alts[rng.random_range(0..alts.len())];
                let v = rng.random_range(0..n);
                let block = &blocks[v];
                let d = if block.contains(&u) {
                    acc.inside += 1;
                    0.0
                } else if !g.neighbors(u).iter().any(|w| block.contains(w)) {
                    acc.far += 1;
                    1.0
                } else {
                    acc.boundary += 1;
                    let d = 1.0 + boundary_disagreement(sys, &x.config, &y, block, u, radius, &mut rng)? as f64;
                    acc.bsum += d;
                    d
                };
                acc.sum += d;
                acc.sq += d * d;
                acc.count += 1;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Acc::default();
    for p in parts {
        t.sum += p.sum;
        t.sq += p.sq;
        t.count += p.count;
        t.inside += p.inside;
        t.boundary += p.boundary;
        t.far += p.far;
        t.bsum += p.bsum;
    }
    if t.count < 2 {
        return Err(Error::InvalidParameter("too few usable trials".into()));
    }
    let m = t.count as f64;
    let mean = t.sum / m;
    let var = ((t.sq - m * mean * mean) / (m - 1.0)).max(0.0);
    let std_err = (var / m).sqrt();
    Ok(ContractionEstimate {
        mean,
        std_err,
        upper95: mean + 1.6448536269514722 * std_err,
        trials: t.count,
        inside: t.inside,
        boundary: t.boundary,
        far: t.far,
        boundary_mean: if t.boundary > 0 { t.bsum / t.boundary as f64 } else { 0.0 },
        radius,
    })
}

/// Number of block vertices on which the coupled resamples disagree when the
/// two outside configurations differ only at `u`.
fn boundary_disagreement(
    sys: &SpinSystem,
    x: &[Spin],
    y: &[Spin],
    block: &[usize],
    u: usize,
    radius: usize,
    rng: &mut impl Rng,
) -> Result<usize> {
    let q = sys.q();
    let dist = sys.graph().distances_from(u);
    let far: Vec<usize> = block
        .iter()
        .copied()
        .filter(|&w| dist[w].is_some_and(|d| d >= radius))
        .collect();
    let (cx, px) = region_conditional(sys, x, block)?;
    let (cy, py) = region_conditional(sys, y, block)?;
    let mut work = x.to_vec();
    // Laws of the distant part, indexed by its own code.
    let far_size = q.pow(far.len() as u32);
    let marginal = |codes: &[u64], probs: &[f64], work: &mut Vec<Spin>| {
        let mut m = vec![0.0; far_size];
        let mut far_code = Vec::with_capacity(codes.len());
        for (&c, &p) in codes.iter().zip(probs) {
            decode_into(c, q, block, work);
            let f = encode(work, q, &far) as usize;
            m[f] += p;
            far_code.push(f);
        }
        (m, far_code)
    };
    let (mx, fx) = marginal(&cx, &px, &mut work);
    let (my, fy) = marginal(&cy, &py, &mut work);
    let overlap: Vec<f64> = mx.iter().zip(&my).map(|(a, b)| a.min(*b)).collect();
    let same: f64 = overlap.iter().sum();
    let draw = |w: &[f64], total: f64, rng: &mut dyn FnMut() -> f64| -> usize {
        let t = rng() * total;
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in w.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if t < acc {
                return i;
            }
        }
        last
    };
    let mut uni = || rng.random::<f64>();
    let (bx, by) = if uni() < same {
        let b = draw(&overlap, same, &mut uni);
        (b, b)
    } else {
        let rx: Vec<f64> = mx.iter().zip(&overlap).map(|(a, o)| (a - o).max(0.0)).collect();
        let ry: Vec<f64> = my.iter().zip(&overlap).map(|(a, o)| (a - o).max(0.0)).collect();
        let (sx, sy) = (rx.iter().sum(), ry.iter().sum());
        (draw(&rx, sx, &mut uni), draw(&ry, sy, &mut uni))
    };
    // Independent completion of the near part given the distant part.
    let complete = |codes: &[u64], probs: &[f64], fcodes: &[usize], b: usize, uni: &mut dyn FnMut() -> f64| {
        let w: Vec<f64> = probs
            .iter()
            .zip(fcodes)
            .map(|(&p, &f)| if f == b { p } else { 0.0 })
            .collect();
        let total: f64 = w.iter().sum();
        codes[draw(&w, total, uni)]
    };
    let kx = complete(&cx, &px, &fx, bx, &mut uni);
    let ky = complete(&cy, &py, &fy, by, &mut uni);
    let mut ax = x.to_vec();
    let mut ay = y.to_vec();
    decode_into(kx, q, block, &mut ax);
    decode_into(ky, q, block, &mut ay);
    Ok(block.iter().filter(|&&w| ax[w] != ay[w]).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{grid_graph, path_graph};
    use crate::spin::ising;
    use std::sync::Arc;

    #[test]
    fn identical_states_stay_identical() {
        let sys = ising(Arc::new(path_graph(4)), 0.6).unwrap();
        let order = SpinOrder::natural(4, 2);
        let c = MonotoneCoupler::new(&sys, order.clone()).unwrap();
        let s = ChainState::uniform_fill(&sys, 1).unwrap();
        let mut pair = CoupledTrajectory::new(s.clone(), s, &order);
        let mut rng = replica_rng(1, 0);
        for _ in 0..200 {
            monotone_coupled_step(&c, &mut pair, &Kernel::Glauber, &mut rng).unwrap();
            assert_eq!(pair.hamming, 0);
        }
    }

    #[test]
    fn zero_coupling_scan_coalesces_in_one_step() {
        let sys = ising(Arc::new(path_graph(5)), 0.0).unwrap();
        let order = SpinOrder::natural(5, 2);
        let c = MonotoneCoupler::new(&sys, order).unwrap();
        let ct = coupling_time(&c, &Kernel::scan(5), 50, 0.75, 10, 3).unwrap();
        assert!(ct.times.iter().all(|&t| t == Some(1)));
    }

    #[test]
    fn single_vertex_couples_at_once() {
        let sys = ising(Arc::new(path_graph(1)), 0.4).unwrap();
        let c = MonotoneCoupler::new(&sys, SpinOrder::natural(1, 2)).unwrap();
        for k in [Kernel::Glauber, Kernel::scan(1)] {
            assert_eq!(coupling_time(&c, &k, 20, 0.75, 10, 0).unwrap().value, Some(1));
        }
    }

    #[test]
    fn antiferromagnet_is_rejected() {
        let sys = ising(Arc::new(path_graph(3)), -0.5).unwrap();
        assert_eq!(
            MonotoneCoupler::new(&sys, SpinOrder::natural(3, 2)).unwrap_err(),
            Error::NotMonotone
        );
    }

    #[test]
    fn quantiles_with_censoring() {
        let t = [Some(3), None, Some(1), Some(2)];
        assert_eq!(quantile_of(&t, 0.5), Some(2));
        assert_eq!(quantile_of(&t, 0.75), Some(3));
        assert_eq!(quantile_of(&t, 1.0), None);
        let ct = CouplingTime {
            times: vec![Some(1), Some(1), Some(2), Some(2)],
            quantile: 0.75,
            value: Some(2),
            interval: (None, None),
            censored: 0,
            budget: 10,
        };
        assert!((ct.grouped_median().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!((f.correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radius_zero_without_interaction() {
        let g = grid_graph(&[4, 4]).unwrap();
        let (e, o) = g.bipartition().unwrap();
        let sys = ising(Arc::new(g), 0.0).unwrap();
        let r = disagreement_radius(&sys, &e, &o, 3, 200, 2, 5).unwrap();
        assert_eq!(r.max_radius, vec![0, 0, 0]);
    }

    #[test]
    fn full_subset_gives_whole_component() {
        let g = path_graph(6);
        let h = component_tail(&g, 1.0, 2, 100, 0).unwrap();
        assert_eq!(h.counts[6], 100);
        assert_eq!(h.counts.iter().sum::<u64>(), 100);
    }

    #[test]
    fn contraction_cases_are_exact_without_interaction() {
        let shape = GridShape::new(&[4, 4]).unwrap();
        let sys = ising(Arc::new(shape.graph()), 0.0).unwrap();
        let e = rectangle_block_contraction(&sys, &shape, 2, None, 4000, 5, 9).unwrap();
        // With no coupling the boundary case cannot create disagreement.
        assert!((e.boundary_mean - 1.0).abs() < 1e-12);
        let p_inside = e.inside as f64 / e.trials as f64;
        assert!((e.mean - (1.0 - p_inside)).abs() < 1e-12);
    }

    #[test]
    fn non_grid_rejected() {
        let shape = GridShape::new(&[3, 3]).unwrap();
        let sys = ising(Arc::new(path_graph(9)), 0.2).unwrap();
        assert!(rectangle_block_contraction(&sys, &shape, 2, None, 10, 0, 0).is_err());
    }
}
