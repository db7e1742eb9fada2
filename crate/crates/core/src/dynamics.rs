//! Seeded single-step samplers: Glauber, symmetrized and one-way systematic
//! scan, even-odd scan, heat-bath block dynamics, Swendsen–Wang and the two
//! Edwards–Sokal conditional resampling moves.
//!
//! Every kernel is a pure function of `(state, rng)`. Replicas get their own
//! ChaCha stream derived from a single root seed, so parallel and serial runs
//! produce identical trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{edge_components, greedy_independent_partition, Graph, IndependentPartition};
use crate::spin::{decode_into, Spin, SpinOrder, SpinSystem, DEFAULT_STATE_CAP};

/// Independent stream for replica `replica` under `root`.
pub fn replica_rng(root: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(replica);
    rng
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainState {
    pub config: Vec<Spin>,
    pub steps: u64,
}

impl ChainState {
    /// Starts at `config` after checking it against the system.
    pub fn new(sys: &SpinSystem, config: Vec<Spin>) -> Result<Self> {
        sys.check_config(&config)?;
        if sys.log_weight(&config).is_none() {
            return Err(Error::MalformedConfig(
                "initial configuration has zero weight".into(),
            ));
        }
        Ok(Self { config, steps: 0 })
    }

    /// Every free vertex at `fill`, boundary at its pinned spins.
    pub fn uniform_fill(sys: &SpinSystem, fill: Spin) -> Result<Self> {
        Self::new(sys, sys.template_config(fill))
    }

    /// Every free vertex at its top (or bottom) spin under `order`.
    pub fn extreme(sys: &SpinSystem, order: &SpinOrder, top: bool) -> Result<Self> {
        let mut c = sys.template_config(0);
        for v in sys.free_vertices() {
            c[v] = if top { order.top(v) } else { order.bottom(v) };
        }
        Self::new(sys, c)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanOrder {
    order: Vec<usize>,
}

impl ScanOrder {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &v in &order {
            if v >= order.len() || std::mem::replace(&mut seen[v], true) {
                return Err(Error::InvalidParameter(format!(
                    "scan order is not a permutation of 0..{}",
                    order.len()
                )));
            }
        }
        Ok(Self { order })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    /// One index per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut order = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            order.push(line.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("expected a vertex index, got `{line}`"),
            })?);
        }
        Self::new(order)
    }
}

/// Blocks `B_1..B_K` with selection probabilities `α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    blocks: Vec<Vec<usize>>,
    weights: Vec<f64>,
    alpha_min: f64,
}

impl BlockSpec {
    pub fn new(n: usize, blocks: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != weights.len() {
            return Err(Error::InvalidParameter(
                "need one weight per block and at least one block".into(),
            ));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("block weights must be >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "block weights sum to {total}, not 1"
            )));
        }
        let mut cover = vec![0.0; n];
        for (b, &w) in blocks.iter().zip(&weights) {
            let mut sorted = b.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != b.len() {
                return Err(Error::InvalidParameter("block repeats a vertex".into()));
            }
            for &v in b {
                if v >= n {
                    return Err(Error::VertexOutOfRange { vertex: v, n });
                }
                cover[v] += w;
            }
        }
        let alpha_min = cover.iter().copied().fold(f64::INFINITY, f64::min);
        if !(alpha_min > 0.0) {
            return Err(Error::InvalidParameter(
                "blocks with positive weight must cover every vertex".into(),
            ));
        }
        Ok(Self {
            blocks,
            weights,
            alpha_min,
        })
    }

    pub fn uniform(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let k = blocks.len().max(1);
        Self::new(n, blocks, vec![1.0 / k as f64; k])
    }

    /// Singleton blocks with uniform weights, i.e. Glauber dynamics.
    pub fn singletons(n: usize) -> Result<Self> {
        Self::uniform(n, (0..n).map(|v| vec![v]).collect())
    }

    pub fn whole(n: usize) -> Result<Self> {
        Self::uniform(n, vec![(0..n).collect()])
    }

    /// The classes of an independent-set partition, uniformly weighted.
    pub fn from_partition(n: usize, p: &IndependentPartition) -> Result<Self> {
        Self::uniform(n, p.classes.clone())
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `min_v Σ_{B ∋ v} α_B`.
    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    fn pick(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Blocks from a text file: one block per line as whitespace-separated
    /// vertices, optionally prefixed by `weight:`. Missing weights are uniform.
    pub fn parse(n: usize, text: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (w, rest) = match line.split_once(':') {
                Some((w, rest)) => (
                    Some(w.trim().parse::<f64>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad weight `{w}`"),
                    })?),
                    rest,
                ),
                None => (None, line),
            };
            let block = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Parse {
                        line: i + 1,
                        msg: format!("bad vertex `{t}`"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(block);
            weights.push(w);
        }
        if weights.iter().all(Option::is_none) {
            Self::uniform(n, blocks)
        } else if weights.iter().all(Option::is_some) {
            Self::new(n, blocks, weights.into_iter().flatten().collect())
        } else {
            Err(Error::Parse {
                line: 0,
                msg: "either every block or no block carries a weight".into(),
            })
        }
    }
}

/// Joint spin-edge configuration of the Edwards–Sokal measure. `edges[i]`
/// says whether edge `i` of the graph is retained.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub spins: Vec<Spin>,
    pub edges: Vec<bool>,
}

impl JointState {
    /// Every retained edge is monochromatic.
    pub fn is_consistent(&self, g: &Graph) -> bool {
        g.edges()
            .iter()
            .zip(&self.edges)
            .all(|(&(u, v), &kept)| !kept || self.spins[u] == self.spins[v])
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i]).collect()
    }
}

/// Markov kernels available to the samplers and to the exact analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// Heat-bath update at a uniformly random free vertex.
    Glauber,
    /// `P_φ(1) … P_φ(n) P_φ(n) … P_φ(1)`.
    Scan(ScanOrder),
    /// `P_φ(1) … P_φ(n)`, not reversible in general.
    OneWayScan(ScanOrder),
    /// Sweeps over the two sides of a bipartition: E, O, E, or E, O, O, E when
    /// `literal` is set.
    EvenOdd {
        even: Vec<usize>,
        odd: Vec<usize>,
        literal: bool,
    },
    Block(BlockSpec),
    SwendsenWang,
}

impl Kernel {
    pub fn scan(n: usize) -> Self {
        Kernel::Scan(ScanOrder::identity(n))
    }

    /// Even-odd scan on the bipartition found by breadth-first 2-colouring.
    pub fn even_odd(g: &Graph) -> Result<Self> {
        let (even, odd) = g
            .bipartition()
            .ok_or_else(|| Error::NotBipartition("graph is not bipartite".into()))?;
        Ok(Kernel::EvenOdd {
            even,
            odd,
            literal: false,
        })
    }

    /// Even-odd scan on explicitly supplied classes.
    pub fn even_odd_with(g: &Graph, even: Vec<usize>, odd: Vec<usize>, literal: bool) -> Result<Self> {
        validate_bipartition(g, &even, &odd)?;
        Ok(Kernel::EvenOdd { even, odd, literal })
    }

    /// Uniform block dynamics over the greedy independent-set classes.
    pub fn independent_sets(g: &Graph) -> Result<Self> {
        Ok(Kernel::Block(BlockSpec::from_partition(
            g.n(),
            &greedy_independent_partition(g),
        )?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Glauber => "glauber",
            Kernel::Scan(_) => "scan",
            Kernel::OneWayScan(_) => "oneway-scan",
            Kernel::EvenOdd { .. } => "evenodd",
            Kernel::Block(_) => "block",
            Kernel::SwendsenWang => "sw",
        }
    }

    /// Sequence of single-site heat-bath updates making up one step, when the
    /// kernel is a composition of them. Glauber and block kernels draw their
    /// random choice from `rng`. Block steps on non-independent blocks and SW
    /// return `None`.
    pub fn site_schedule(
        &self,
        sys: &SpinSystem,
        rng: &mut impl Rng,
    ) -> Option<Vec<usize>> {
        let free = |vs: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
            vs.filter(|&v| sys.is_free(v)).collect()
        };
        match self {
            Kernel::Glauber => {
                let fv = sys.free_vertices();
                if fv.is_empty() {
                    return Some(Vec::new());
                }
                Some(vec![fv[rng.random_range(0..fv.len())]])
            }
            Kernel::Scan(phi) => Some(free(
                &mut phi.as_slice().iter().chain(phi.as_slice().iter().rev()).copied(),
            )),
            Kernel::OneWayScan(phi) => Some(free(&mut phi.as_slice().iter().copied())),
            Kernel::EvenOdd { even, odd, literal } => {
                let mut seq: Vec<usize> = even.iter().chain(odd).copied().collect();
                if *literal {
                    seq.extend(odd);
                }
                seq.extend(even);
                Some(free(&mut seq.into_iter()))
            }
            Kernel::Block(spec) => {
                let b = &spec.blocks()[spec.pick(rng)];
                sys.graph()
                    .is_independent(b)
                    .then(|| free(&mut b.iter().copied()))
            }
            Kernel::SwendsenWang => None,
        }
    }

    /// Advances `state` by one step of the kernel.
    pub fn step(&self, sys: &SpinSystem, state: &mut ChainState, rng: &mut impl Rng) -> Result<()> {
        match self {
            Kernel::SwendsenWang => sw_step(sys, state, rng)?,
            Kernel::Block(spec) if !spec.blocks().iter().all(|b| sys.graph().is_independent(b)) => {
                let b = &spec.blocks()[spec.pick(rng)];
                heat_bath_update(sys, state, b, rng)?;
            }
            _ => {
                let seq = self
                    .site_schedule(sys, rng)
                    .expect("site kernels always have a schedule");
                for v in seq {
                    site_update(sys, &mut state.config, v, rng.random());
                }
                state.steps += 1;
            }
        }
        Ok(())
    }

    /// Checks kernel-specific preconditions against a system.
    pub fn validate(&self, sys: &SpinSystem) -> Result<()> {
        let n = sys.n();
        match self {
            Kernel::Glauber => Ok(()),
            Kernel::Scan(phi) | Kernel::OneWayScan(phi) => {
                if phi.as_slice().len() == n {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "scan order has length {}, graph has {n} vertices",
                        phi.as_slice().len()
                    )))
                }
            }
            Kernel::EvenOdd { even, odd, .. } => validate_bipartition(sys.graph(), even, odd),
            Kernel::Block(spec) => {
                if spec.blocks().iter().flatten().all(|&v| v < n) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("block vertex out of range".into()))
                }
            }
            Kernel::SwendsenWang => sys.potts_beta().map(|_| ()).ok_or_else(|| {
                Error::Unsupported("Swendsen-Wang needs a ferromagnetic Potts system without boundary".into())
            }),
        }
    }
}

pub fn validate_bipartition(g: &Graph, even: &[usize], odd: &[usize]) -> Result<()> {
    let mut seen = vec![false; g.n()];
    for &v in even.iter().chain(odd) {
        if v >= g.n() {
            return Err(Error::VertexOutOfRange { vertex: v, n: g.n() });
        }
        if std::mem::replace(&mut seen[v], true) {
            return Err(Error::NotBipartition(format!("vertex {v} in both classes")));
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(Error::NotBipartition(format!("vertex {v} in neither class")));
    }
    if !g.is_independent(even) || !g.is_independent(odd) {
        return Err(Error::NotBipartition("a class contains an edge".into()));
    }
    Ok(())
}

/// Conditional law of `σ_v` given the rest of `config`, indexed by spin.
/// All zeros if no spin is allowed.
pub fn site_conditional(sys: &SpinSystem, config: &[Spin], v: usize) -> Vec<f64> {
    let q = sys.q();
    let logw: Vec<Option<f64>> = (0..q as Spin)
        .map(|s| sys.local_log_weight(config, v, s))
        .collect();
    let max = logw.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; q];
    }
    let w: Vec<f64> = logw.iter().map(|l| l.map_or(0.0, |x| (x - max).exp())).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Heat-bath update at `v` driven by one uniform `u`, scanning spins in index
/// order. Pinned vertices are left alone.
pub fn site_update(sys: &SpinSystem, config: &mut [Spin], v: usize, u: f64) {
    if !sys.is_free(v) {
        return;
    }
    let p = site_conditional(sys, config, v);
    if let Some(s) = inverse_cdf((0..sys.q() as Spin).map(|s| (s, p[s as usize])), u) {
        config[v] = s;
    }
}

/// Heat-bath update at `v` that scans spins from lowest to highest under
/// `order`. Two configurations updated with the same `u` stay ordered when the
/// system is monotone.
pub fn ordered_site_update(
    sys: &SpinSystem,
    order: &SpinOrder,
    config: &mut [Spin],
    v: usize,
    u: f64,
) {
    if !sys.is_free(v) {
        return;
    }
    let p = site_conditional(sys, config, v);
    if let Some(s) = inverse_cdf(order.spins(v).iter().map(|&s| (s, p[s as usize])), u) {
        config[v] = s;
    }
}

fn inverse_cdf(weights: impl Iterator<Item = (Spin, f64)>, u: f64) -> Option<Spin> {
    let mut acc = 0.0;
    let mut last = None;
    for (s, p) in weights {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(s);
        if u < acc {
            return Some(s);
        }
    }
    // Rounding left u above the final partial sum.
    last
}

/// Resamples the free vertices of `region` from their joint conditional given
/// the rest of the configuration.
pub fn heat_bath_update(
    sys: &SpinSystem,
    state: &mut ChainState,
    region: &[usize],
    rng: &mut impl Rng,
) -> Result<()> {
    let region: Vec<usize> = region.iter().copied().filter(|&v| sys.is_free(v)).collect();
    match region.len() {
        0 => {}
        1 => site_update(sys, &mut state.config, region[0], rng.random()),
        _ => {
            let (codes, probs) = region_conditional(sys, &state.config, &region)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = *codes.last().expect("nonempty support");
            for (c, p) in codes.iter().zip(&probs) {
                acc += p;
                if u < acc {
                    pick = *c;
                    break;
                }
            }
            decode_into(pick, sys.q(), &region, &mut state.config);
        }
    }
    state.steps += 1;
    Ok(())
}

/// Joint conditional of `region` (all free) given the rest of `config`, as
/// parallel lists of mixed-radix codes and probabilities over the support.
pub fn region_conditional(
    sys: &SpinSystem,
    config: &[Spin],
    region: &[usize],
) -> Result<(Vec<u64>, Vec<f64>)> {
    let q = sys.q();
    let size = (q as u128).saturating_pow(region.len() as u32);
    if size > DEFAULT_STATE_CAP {
        return Err(Error::CapExceeded {
            size,
            cap: DEFAULT_STATE_CAP,
        });
    }
    let g = sys.graph();
    let mut inside = vec![false; sys.n()];
    for &v in region {
        inside[v] = true;
    }
    let mut work = config.to_vec();
    let mut codes = Vec::new();
    let mut logw = Vec::new();
    'outer: for code in 0..size as u64 {
        decode_into(code, q, region, &mut work);
        let mut acc = 0.0;
        for &v in region {
            let Some(f) = sys.field(v, work[v]).log_weight() else {
                continue 'outer;
            };
            acc += f;
            for &w in g.neighbors(v) {
                // Edges inside the region are counted from the smaller end.
                if inside[w] && w < v {
                    continue;
                }
                let Some(k) = sys.coupling(work[v], work[w]).log_weight() else {
                    continue 'outer;
                };
                acc += k;
            }
        }
        codes.push(code);
        logw.push(acc);
    }
    if codes.is_empty() {
        return Err(Error::EmptyConditional);
    }
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok((codes, w.iter().map(|x| x / total).collect()))
}

pub fn glauber_step(sys: &SpinSystem, state: &mut ChainState, rng: &mut impl Rng) -> Result<()> {
    Kernel::Glauber.step(sys, state, rng)
}

pub fn scan_step(
    sys: &SpinSystem,
    state: &mut ChainState,
    phi: &ScanOrder,
    rng: &mut impl Rng,
) -> Result<()> {
    for &v in phi.as_slice().iter().chain(phi.as_slice().iter().rev()) {
        site_update(sys, &mut state.config, v, rng.random());
    }
    state.steps += 1;
    Ok(())
}

pub fn even_odd_scan_step(
    sys: &SpinSystem,
    state: &mut ChainState,
    even: &[usize],
    odd: &[usize],
    literal: bool,
    rng: &mut impl Rng,
) -> Result<()> {
    validate_bipartition(sys.graph(), even, odd)?;
    Kernel::EvenOdd {
        even: even.to_vec(),
        odd: odd.to_vec(),
        literal,
    }
    .step(sys, state, rng)
}

pub fn block_step(
    sys: &SpinSystem,
    state: &mut ChainState,
    spec: &BlockSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    let b = &spec.blocks()[spec.pick(rng)];
    heat_bath_update(sys, state, b, rng)
}

fn require_potts(sys: &SpinSystem) -> Result<f64> {
    sys.potts_beta().ok_or_else(|| {
        Error::Unsupported(
            "needs a ferromagnetic Potts system (K = β·1(a=b), β >= 0) without fields or boundary"
                .into(),
        )
    })
}

/// `p = 1 - e^{-β}`.
pub fn percolation_probability(beta: f64) -> f64 {
    -(-beta).exp_m1()
}

/// One Swendsen–Wang step: percolate on monochromatic edges, recolour each
/// component uniformly.
pub fn sw_step(sys: &SpinSystem, state: &mut ChainState, rng: &mut impl Rng) -> Result<()> {
    let joint = es_sample_edges(sys, &state.config, rng)?;
    let next = es_sample_spins(sys, &joint.edges, rng)?;
    debug_assert!(JointState {
        spins: next.spins.clone(),
        edges: joint.edges.clone()
    }
    .is_consistent(sys.graph()));
    state.config = next.spins;
    state.steps += 1;
    Ok(())
}

/// Draws `A | σ`: each monochromatic edge kept independently with
/// probability `p`.
pub fn es_sample_edges(sys: &SpinSystem, spins: &[Spin], rng: &mut impl Rng) -> Result<JointState> {
    let p = percolation_probability(require_potts(sys)?);
    sys.check_config(spins)?;
    let edges = sys
        .graph()
        .edges()
        .iter()
        .map(|&(u, v)| {
            // Always consume a uniform so the stream layout is state independent.
            let x: f64 = rng.random();
            spins[u] == spins[v] && x < p
        })
        .collect();
    Ok(JointState {
        spins: spins.to_vec(),
        edges,
    })
}

/// Draws `σ | A`: one uniform colour per component of `(V, A)`.
pub fn es_sample_spins(sys: &SpinSystem, edges: &[bool], rng: &mut impl Rng) -> Result<JointState> {
    require_potts(sys)?;
    let g = sys.graph();
    if edges.len() != g.edge_count() {
        return Err(Error::InvalidParameter(format!(
            "edge mask has length {}, graph has {} edges",
            edges.len(),
            g.edge_count()
        )));
    }
    let kept: Vec<usize> = (0..edges.len()).filter(|&i| edges[i]).collect();
    let mut spins = vec![0; g.n()];
    for comp in edge_components(g, &kept) {
        let s = rng.random_range(0..sys.q()) as Spin;
        for v in comp {
            spins[v] = s;
        }
    }
    Ok(JointState {
        spins,
        edges: edges.to_vec(),
    })
}

/// Runs `replicas` independent chains for `steps` steps each from `init`,
/// replica `r` using `replica_rng(root, r)`.
pub fn run_replicas(
    sys: &SpinSystem,
    kernel: &Kernel,
    init: &ChainState,
    steps: u64,
    replicas: usize,
    root: u64,
) -> Result<Vec<ChainState>> {
    kernel.validate(sys)?;
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(root, r as u64);
            let mut state = init.clone();
            for _ in 0..steps {
                kernel.step(sys, &mut state, &mut rng)?;
            }
            Ok(state)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{path_graph, Graph};
    use crate::spin::{hardcore, ising, potts, Pinning};
    use std::sync::Arc;

    fn rng() -> ChaCha8Rng {
        replica_rng(7, 0)
    }

    #[test]
    fn empty_region_is_a_no_op() {
        let sys = ising(Arc::new(path_graph(3)), 0.5).unwrap();
        let mut s = ChainState::uniform_fill(&sys, 1).unwrap();
        heat_bath_update(&sys, &mut s, &[], &mut rng()).unwrap();
        assert_eq!(s.config, vec![1, 1, 1]);
    }

    #[test]
    fn site_conditional_pinned_neighbour() {
        let sys = ising(Arc::new(path_graph(2)), 3f64.ln()).unwrap();
        let p = site_conditional(&sys, &[1, 1], 1);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn hardcore_site_update_respects_support() {
        let sys = hardcore(Arc::new(path_graph(2)), 5.0).unwrap();
        let mut c = vec![1, 0];
        for i in 0..100 {
            site_update(&sys, &mut c, 1, i as f64 / 100.0);
            assert_eq!(c[1], 0);
        }
    }

    #[test]
    fn region_conditional_matches_exact_table() {
        let g = Arc::new(path_graph(4));
        let sys = potts(g, 3, 0.7).unwrap();
        let config = vec![2, 0, 0, 1];
        let (codes, probs) = region_conditional(&sys, &config, &[1, 2]).unwrap();
        let tau = Pinning::from_pairs([(0, 2), (3, 1)]).unwrap();
        let t = crate::spin::exact_gibbs(&sys.condition(&tau).unwrap()).unwrap();
        for (c, p) in codes.iter().zip(&probs) {
            let mut full = config.clone();
            decode_into(*c, 3, &[1, 2], &mut full);
            assert!((t.prob_of(&full) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn block_spec_validation() {
        assert!(BlockSpec::new(2, vec![vec![0]], vec![1.0]).is_err());
        assert!(BlockSpec::new(2, vec![vec![0, 1]], vec![0.5]).is_err());
        let s = BlockSpec::new(3, vec![vec![0, 1], vec![1, 2]], vec![0.25, 0.75]).unwrap();
        assert!((s.alpha_min() - 0.25).abs() < 1e-15);
        let p = BlockSpec::parse(3, "0.5: 0 1\n0.5: 2\n").unwrap();
        assert_eq!(p.blocks().len(), 2);
    }

    #[test]
    fn scan_order_validation() {
        assert!(ScanOrder::new(vec![0, 0]).is_err());
        assert!(ScanOrder::new(vec![1, 2]).is_err());
        assert_eq!(ScanOrder::parse("2\n0\n# c\n1\n").unwrap().as_slice(), &[2, 0, 1]);
    }

    #[test]
    fn even_odd_requires_bipartition() {
        let tri = crate::graphs::complete_graph(3);
        assert!(Kernel::even_odd(&tri).is_err());
        let p = path_graph(3);
        assert!(Kernel::even_odd_with(&p, vec![0, 1], vec![2], false).is_err());
        assert!(Kernel::even_odd_with(&p, vec![0, 2], vec![1], false).is_ok());
    }

    #[test]
    fn sw_rejects_non_potts() {
        let sys = hardcore(Arc::new(path_graph(2)), 1.0).unwrap();
        let mut s = ChainState::uniform_fill(&sys, 0).unwrap();
        assert!(sw_step(&sys, &mut s, &mut rng()).is_err());
    }

    #[test]
    fn es_edge_extremes() {
        let g = Arc::new(path_graph(4));
        let cold = ising(Arc::clone(&g), 0.0).unwrap();
        let j = es_sample_edges(&cold, &[1, 1, 1, 1], &mut rng()).unwrap();
        assert!(j.edges.iter().all(|&e| !e));
        // p is 1 to double precision for huge β.
        let hot = ising(g, 60.0).unwrap();
        let j = es_sample_edges(&hot, &[0, 0, 0, 0], &mut rng()).unwrap();
        assert!(j.edges.iter().all(|&e| e));
        let j = es_sample_edges(&hot, &[0, 1, 0, 1], &mut rng()).unwrap();
        assert!(j.edges.iter().all(|&e| !e));
    }

    #[test]
    fn es_spins_full_edge_set_is_constant() {
        let g = Arc::new(path_graph(5));
        let sys = potts(g, 3, 1.0).unwrap();
        let mut r = rng();
        for _ in 0..50 {
            let j = es_sample_spins(&sys, &[true; 4], &mut r).unwrap();
            assert!(j.spins.iter().all(|&s| s == j.spins[0]));
        }
    }

    #[test]
    fn single_vertex_glauber_is_exact() {
        let sys = ising(Arc::new(Graph::empty(1)), 0.0)
            .unwrap()
            .with_field(0, 1, crate::spin::Potential::Finite(2f64.ln()))
            .unwrap();
        let mut r = rng();
        let mut ones = 0;
        let trials = 40_000;
        for _ in 0..trials {
            let mut s = ChainState::uniform_fill(&sys, 0).unwrap();
            glauber_step(&sys, &mut s, &mut r).unwrap();
            ones += s.config[0] as usize;
        }
        let p = 2.0 / 3.0;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        assert!((ones as f64 - trials as f64 * p).abs() < 4.0 * sigma);
    }

    #[test]
    fn replicas_are_thread_count_independent() {
        let sys = ising(Arc::new(path_graph(6)), 0.4).unwrap();
        let init = ChainState::uniform_fill(&sys, 0).unwrap();
        let a = run_replicas(&sys, &Kernel::Glauber, &init, 50, 8, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| run_replicas(&sys, &Kernel::Glauber, &init, 50, 8, 11))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn boundary_vertices_never_move() {
        let sys = ising(Arc::new(path_graph(3)), 0.5)
            .unwrap()
            .with_boundary(Pinning::from_pairs([(1, 1)]).unwrap())
            .unwrap();
        let mut s = ChainState::uniform_fill(&sys, 0).unwrap();
        let mut r = rng();
        for _ in 0..200 {
            Kernel::scan(3).step(&sys, &mut s, &mut r).unwrap();
            assert_eq!(s.config[1], 1);
        }
    }
}
