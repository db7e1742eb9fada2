//! General spin systems, exact Gibbs tables and the structural predicates
//! (total connectivity, monotonicity, bounded marginals).
//!
//! A configuration weight is `exp(Σ_edges K(σ_u, σ_v) + Σ_v U_v(σ_v))`, i.e.
//! `exp(-H(σ))`. Hard constraints are the explicit [`Potential::Hard`]
//! sentinel; any configuration touching one has weight exactly zero.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::poset;

pub type Spin = u8;

/// Default cap on the number of enumerated configurations.
pub const DEFAULT_STATE_CAP: u128 = 1 << 20;

/// Default cap on the number of up-sets enumerated by order checks.
pub const DEFAULT_UPSET_CAP: usize = 1 << 20;

/// Edge or vertex potential. `Hard` forbids the spin combination outright.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Potential {
    Finite(f64),
    Hard,
}

impl Potential {
    pub const ZERO: Potential = Potential::Finite(0.0);

    /// Contribution to the log-weight, `None` for a hard constraint.
    #[inline]
    pub fn log_weight(self) -> Option<f64> {
        match self {
            Potential::Finite(x) => Some(x),
            Potential::Hard => None,
        }
    }

    #[inline]
    pub fn add(self, other: Potential) -> Potential {
        match (self, other) {
            (Potential::Finite(a), Potential::Finite(b)) => Potential::Finite(a + b),
            _ => Potential::Hard,
        }
    }
}

/// Fixed partial configuration on a vertex subset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pinning(BTreeMap<usize, Spin>);

impl Pinning {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, Spin)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (v, s) in pairs {
            if let Some(prev) = map.insert(v, s) {
                if prev != s {
                    return Err(Error::InconsistentPinning(format!(
                        "vertex {v} pinned to both {prev} and {s}"
                    )));
                }
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, v: usize) -> Option<Spin> {
        self.0.get(&v).copied()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Spin)> + '_ {
        self.0.iter().map(|(&v, &s)| (v, s))
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.0.keys().copied().collect()
    }

    /// Adds an assignment, failing if `v` is already pinned differently.
    pub fn insert(&mut self, v: usize, s: Spin) -> Result<()> {
        match self.0.insert(v, s) {
            Some(prev) if prev != s => Err(Error::InconsistentPinning(format!(
                "vertex {v} pinned to both {prev} and {s}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn with(&self, v: usize, s: Spin) -> Result<Self> {
        let mut p = self.clone();
        p.insert(v, s)?;
        Ok(p)
    }

    pub fn union(&self, other: &Pinning) -> Result<Self> {
        let mut p = self.clone();
        for (v, s) in other.iter() {
            p.insert(v, s)?;
        }
        Ok(p)
    }

    pub fn matches(&self, config: &[Spin]) -> bool {
        self.iter().all(|(v, s)| config[v] == s)
    }

    fn validate(&self, n: usize, q: usize) -> Result<()> {
        for (v, s) in self.iter() {
            if v >= n {
                return Err(Error::VertexOutOfRange { vertex: v, n });
            }
            if s as usize >= q {
                return Err(Error::InconsistentPinning(format!(
                    "spin {s} at vertex {v} outside [0, {q})"
                )));
            }
        }
        Ok(())
    }

    /// Parses `v:s` tokens separated by commas or whitespace.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for tok in text.split(|c: char| c == ',' || c.is_whitespace()) {
            if tok.is_empty() {
                continue;
            }
            let (v, s) = tok.split_once(':').ok_or_else(|| {
                Error::InvalidParameter(format!("pinning token `{tok}` is not `v:s`"))
            })?;
            let v = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad vertex in `{tok}`")))?;
            let s = s
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad spin in `{tok}`")))?;
            pairs.push((v, s));
        }
        Self::from_pairs(pairs)
    }
}

/// Model families with closed-form potentials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ising,
    Potts,
    Hardcore,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ising" => Ok(ModelKind::Ising),
            "potts" => Ok(ModelKind::Potts),
            "hardcore" | "hard-core" => Ok(ModelKind::Hardcore),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

/// Spin system on a graph: symmetric edge potential `K`, per-vertex spin
/// potentials `U_v` and a boundary pinning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    graph: Arc<Graph>,
    q: usize,
    coupling: Vec<Potential>,
    fields: Vec<Potential>,
    boundary: Pinning,
}

impl SpinSystem {
    pub fn new(
        graph: Arc<Graph>,
        q: usize,
        coupling: Vec<Potential>,
        fields: Vec<Potential>,
        boundary: Pinning,
    ) -> Result<Self> {
        if q < 2 || q > Spin::MAX as usize {
            return Err(Error::InvalidParameter(format!("q = {q} must be in [2, 255]")));
        }
        if coupling.len() != q * q {
            return Err(Error::InvalidParameter("coupling must be q x q".into()));
        }
        if fields.len() != graph.n() * q {
            return Err(Error::InvalidParameter("fields must be n x q".into()));
        }
        for a in 0..q {
            for b in 0..a {
                if coupling[a * q + b] != coupling[b * q + a] {
                    return Err(Error::InvalidParameter(format!(
                        "coupling not symmetric at ({a}, {b})"
                    )));
                }
            }
        }
        if coupling
            .iter()
            .chain(&fields)
            .any(|p| matches!(p, Potential::Finite(x) if !x.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "potentials must be finite or Hard".into(),
            ));
        }
        boundary.validate(graph.n(), q)?;
        Ok(Self {
            graph,
            q,
            coupling,
            fields,
            boundary,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn boundary(&self) -> &Pinning {
        &self.boundary
    }

    #[inline]
    pub fn coupling(&self, a: Spin, b: Spin) -> Potential {
        self.coupling[a as usize * self.q + b as usize]
    }

    #[inline]
    pub fn field(&self, v: usize, s: Spin) -> Potential {
        self.fields[v * self.q + s as usize]
    }

    /// Replaces the spin potential `U_v(s)`.
    pub fn with_field(mut self, v: usize, s: Spin, p: Potential) -> Result<Self> {
        if v >= self.n() || s as usize >= self.q {
            return Err(Error::InvalidParameter(format!("field ({v}, {s}) out of range")));
        }
        self.fields[v * self.q + s as usize] = p;
        Ok(self)
    }

    pub fn with_boundary(mut self, boundary: Pinning) -> Result<Self> {
        boundary.validate(self.n(), self.q)?;
        self.boundary = boundary;
        Ok(self)
    }

    /// Vertices not pinned by the boundary, in index order.
    pub fn free_vertices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&v| !self.boundary.contains(v)).collect()
    }

    pub fn is_free(&self, v: usize) -> bool {
        !self.boundary.contains(v)
    }

    /// Number of configurations of the free vertices, saturating.
    pub fn state_space_size(&self) -> u128 {
        let free = self.n() - self.boundary.len();
        (self.q as u128).checked_pow(free as u32).unwrap_or(u128::MAX)
    }

    /// `β` when the system is the ferromagnetic Potts model `K = β·1(a=b)`
    /// with no spin potentials and no boundary.
    pub fn potts_beta(&self) -> Option<f64> {
        if !self.boundary.is_empty() {
            return None;
        }
        let Potential::Finite(beta) = self.coupling(0, 0) else {
            return None;
        };
        for a in 0..self.q as Spin {
            for b in 0..self.q as Spin {
                let expect = if a == b { beta } else { 0.0 };
                if self.coupling(a, b) != Potential::Finite(expect) {
                    return None;
                }
            }
        }
        if self.fields.iter().any(|&f| f != Potential::ZERO) || beta < 0.0 {
            return None;
        }
        Some(beta)
    }

    /// A configuration with every boundary vertex set to its pinned spin and
    /// the free vertices set to `fill`.
    pub fn template_config(&self, fill: Spin) -> Vec<Spin> {
        let mut c = vec![fill; self.n()];
        for (v, s) in self.boundary.iter() {
            c[v] = s;
        }
        c
    }

    /// Log-weight of spin `s` at free vertex `v` given the spins of its
    /// neighbours in `config`: `U_v(s) + Σ_{w ~ v} K(s, σ_w)`.
    #[inline]
    pub fn local_log_weight(&self, config: &[Spin], v: usize, s: Spin) -> Option<f64> {
        let mut acc = self.field(v, s).log_weight()?;
        for &w in self.graph.neighbors(v) {
            acc += self.coupling(s, config[w]).log_weight()?;
        }
        Some(acc)
    }

    /// `-H(σ)` up to the constant boundary-only terms; `None` means weight zero.
    /// Boundary entries of `config` must hold their pinned spins.
    pub fn log_weight(&self, config: &[Spin]) -> Option<f64> {
        let mut acc = 0.0;
        for &(u, v) in self.graph.edges() {
            if self.boundary.contains(u) && self.boundary.contains(v) {
                continue;
            }
            acc += self.coupling(config[u], config[v]).log_weight()?;
        }
        for v in 0..self.n() {
            if self.is_free(v) {
                acc += self.field(v, config[v]).log_weight()?;
            }
        }
        Some(acc)
    }

    pub fn check_config(&self, config: &[Spin]) -> Result<()> {
        if config.len() != self.n() {
            return Err(Error::MalformedConfig(format!(
                "length {} != n = {}",
                config.len(),
                self.n()
            )));
        }
        if let Some((v, &s)) = config
            .iter()
            .enumerate()
            .find(|(_, &s)| s as usize >= self.q)
        {
            return Err(Error::MalformedConfig(format!("spin {s} at vertex {v} >= q")));
        }
        for (v, s) in self.boundary.iter() {
            if config[v] != s {
                return Err(Error::MalformedConfig(format!(
                    "boundary vertex {v} must hold spin {s}"
                )));
            }
        }
        Ok(())
    }

    /// The Hamiltonian `H(σ)`; `f64::INFINITY` is the hard-constraint sentinel.
    pub fn hamiltonian(&self, config: &[Spin]) -> Result<f64> {
        self.check_config(config)?;
        Ok(self.log_weight(config).map_or(f64::INFINITY, |w| -w))
    }

    /// Conditions on `tau`: the result pins `tau` on top of the existing
    /// boundary. Pinned spins act on their free neighbours through `K`, i.e.
    /// they are folded into the neighbours' spin potentials.
    pub fn condition(&self, tau: &Pinning) -> Result<SpinSystem> {
        tau.validate(self.n(), self.q)?;
        let boundary = self.boundary.union(tau)?;
        // Locally detectable emptiness: a pinned spin forbidden by its own
        // potential or by another pinned neighbour.
        for (v, s) in tau.iter() {
            if self.field(v, s) == Potential::Hard {
                return Err(Error::EmptyConditional);
            }
            for &w in self.graph.neighbors(v) {
                if let Some(t) = boundary.get(w) {
                    if self.coupling(s, t) == Potential::Hard {
                        return Err(Error::EmptyConditional);
                    }
                }
            }
        }
        let mut out = self.clone();
        out.boundary = boundary;
        for v in out.free_vertices() {
            let mut any = false;
            for s in 0..self.q as Spin {
                let mut p = self.field(v, s);
                for &w in self.graph.neighbors(v) {
                    if let Some(t) = out.boundary.get(w) {
                        p = p.add(self.coupling(s, t));
                    }
                }
                any |= p != Potential::Hard;
            }
            if !any {
                return Err(Error::EmptyConditional);
            }
        }
        Ok(out)
    }

    /// Equivalent system on the free vertices only (renumbered in index
    /// order) with every boundary spin folded into the spin potentials of its
    /// neighbours. Returns the system and the original index of each vertex.
    pub fn reduced(&self) -> Result<(SpinSystem, Vec<usize>)> {
        let free = self.free_vertices();
        let mut new_index = vec![usize::MAX; self.n()];
        for (i, &v) in free.iter().enumerate() {
            new_index[v] = i;
        }
        let edges: Vec<(usize, usize)> = self
            .graph
            .edges()
            .iter()
            .filter(|(u, v)| self.is_free(*u) && self.is_free(*v))
            .map(|&(u, v)| (new_index[u], new_index[v]))
            .collect();
        let graph = Arc::new(Graph::new(free.len(), &edges)?);
        let mut fields = Vec::with_capacity(free.len() * self.q);
        for &v in &free {
            for s in 0..self.q as Spin {
                let mut p = self.field(v, s);
                for &w in self.graph.neighbors(v) {
                    if let Some(t) = self.boundary.get(w) {
                        p = p.add(self.coupling(s, t));
                    }
                }
                fields.push(p);
            }
        }
        let sys = SpinSystem::new(graph, self.q, self.coupling.clone(), fields, Pinning::new())?;
        Ok((sys, free))
    }
}

/// Builds one of the named models. `param` is `β` for Ising/Potts and the
/// fugacity `λ` for hardcore. Ising and hardcore force `q = 2`.
pub fn make_model(kind: ModelKind, g: Arc<Graph>, param: f64, q: usize) -> Result<SpinSystem> {
    let n = g.n();
    match kind {
        ModelKind::Ising | ModelKind::Potts => {
            let q = if kind == ModelKind::Ising { 2 } else { q };
            if q < 2 {
                return Err(Error::InvalidParameter(format!("potts needs q >= 2, got {q}")));
            }
            if !param.is_finite() {
                return Err(Error::InvalidParameter("beta must be finite".into()));
            }
            let coupling = (0..q * q)
                .map(|i| Potential::Finite(if i / q == i % q { param } else { 0.0 }))
                .collect();
            SpinSystem::new(g, q, coupling, vec![Potential::ZERO; n * q], Pinning::new())
        }
        ModelKind::Hardcore => {
            if !(param > 0.0 && param.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "fugacity must be positive, got {param}"
                )));
            }
            let coupling = vec![
                Potential::ZERO,
                Potential::ZERO,
                Potential::ZERO,
                Potential::Hard,
            ];
            let fields = (0..n)
                .flat_map(|_| [Potential::ZERO, Potential::Finite(param.ln())])
                .collect();
            SpinSystem::new(g, 2, coupling, fields, Pinning::new())
        }
    }
}

pub fn ising(g: Arc<Graph>, beta: f64) -> Result<SpinSystem> {
    make_model(ModelKind::Ising, g, beta, 2)
}

pub fn potts(g: Arc<Graph>, q: usize, beta: f64) -> Result<SpinSystem> {
    make_model(ModelKind::Potts, g, beta, q)
}

pub fn hardcore(g: Arc<Graph>, lambda: f64) -> Result<SpinSystem> {
    make_model(ModelKind::Hardcore, g, lambda, 2)
}

/// Tree-uniqueness threshold on the Δ-regular tree.
pub fn uniqueness_threshold(kind: ModelKind, degree: usize) -> Result<f64> {
    if degree < 3 {
        return Err(Error::InvalidParameter(format!("need Δ >= 3, got {degree}")));
    }
    let d = degree as f64;
    match kind {
        ModelKind::Ising => Ok((d / (d - 2.0)).ln()),
        ModelKind::Hardcore => Ok((d - 1.0).powf(d - 1.0) / (d - 2.0).powf(d)),
        ModelKind::Potts => Err(Error::Unsupported(
            "Potts uniqueness threshold has no closed form".into(),
        )),
    }
}

/// Exact enumeration of the support of a spin system.
///
/// States are full-length configurations; boundary vertices always hold their
/// pinned spin. Only the free vertices vary.
#[derive(Clone, Debug)]
pub struct GibbsTable {
    n: usize,
    q: usize,
    free: Vec<usize>,
    states: Vec<Spin>,
    probs: Vec<f64>,
    log_z: f64,
    index: HashMap<u64, usize>,
}

pub fn exact_gibbs(sys: &SpinSystem) -> Result<GibbsTable> {
    GibbsTable::build(sys, DEFAULT_STATE_CAP)
}

impl GibbsTable {
    pub fn build(sys: &SpinSystem, cap: u128) -> Result<Self> {
        let size = sys.state_space_size();
        if size > cap || size > u64::MAX as u128 {
            return Err(Error::CapExceeded { size, cap });
        }
        let free = sys.free_vertices();
        let q = sys.q();
        let template = sys.template_config(0);
        let total = size as u64;
        let weighted: Vec<(u64, f64)> = (0..total)
            .into_par_iter()
            .filter_map(|code| {
                let mut config = template.clone();
                decode_into(code, q, &free, &mut config);
                sys.log_weight(&config).map(|w| (code, w))
            })
            .collect();
        if weighted.is_empty() {
            return Err(Error::EmptyConditional);
        }
        let max = weighted
            .iter()
            .map(|&(_, w)| w)
            .fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = weighted.iter().map(|&(_, w)| (w - max).exp()).collect();
        let sum: f64 = raw.iter().sum();
        let n = sys.n();
        let mut states = Vec::with_capacity(weighted.len() * n);
        let mut index = HashMap::with_capacity(weighted.len());
        for (i, &(code, _)) in weighted.iter().enumerate() {
            let mut config = template.clone();
            decode_into(code, q, &free, &mut config);
            states.extend_from_slice(&config);
            index.insert(code, i);
        }
        Ok(Self {
            n,
            q,
            free,
            states,
            probs: raw.iter().map(|r| r / sum).collect(),
            log_z: max + sum.ln(),
            index,
        })
    }

    /// Table built from explicit states and unnormalised probabilities.
    fn from_parts(
        n: usize,
        q: usize,
        free: Vec<usize>,
        states: Vec<Spin>,
        weights: Vec<f64>,
        log_z: f64,
    ) -> Self {
        let sum: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        let mut index = HashMap::with_capacity(probs.len());
        for i in 0..probs.len() {
            let code = encode(&states[i * n..(i + 1) * n], q, &free);
            index.insert(code, i);
        }
        Self {
            n,
            q,
            free,
            states,
            probs,
            log_z,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn free_vertices(&self) -> &[usize] {
        &self.free
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn state(&self, i: usize) -> &[Spin] {
        &self.states[i * self.n..(i + 1) * self.n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[Spin]> + '_ {
        self.states.chunks_exact(self.n.max(1)).take(self.len())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, i: usize) -> f64 {
        self.probs[i]
    }

    /// Index of `config` in the support, if present.
    pub fn index_of(&self, config: &[Spin]) -> Option<usize> {
        let i = *self.index.get(&encode(config, self.q, &self.free))?;
        (self.state(i) == config).then_some(i)
    }

    pub fn prob_of(&self, config: &[Spin]) -> f64 {
        self.index_of(config).map_or(0.0, |i| self.probs[i])
    }

    pub fn mu_min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Conditional table `μ(· | σ_Λ = τ)` by restriction of the support.
    pub fn condition(&self, tau: &Pinning) -> Result<GibbsTable> {
        let mut states = Vec::new();
        let mut weights = Vec::new();
        for i in 0..self.len() {
            let s = self.state(i);
            if tau.matches(s) {
                states.extend_from_slice(s);
                weights.push(self.probs[i]);
            }
        }
        if weights.is_empty() {
            return Err(Error::EmptyConditional);
        }
        let mass: f64 = weights.iter().sum();
        let free = self
            .free
            .iter()
            .copied()
            .filter(|&v| !tau.contains(v))
            .collect();
        Ok(Self::from_parts(
            self.n,
            self.q,
            free,
            states,
            weights,
            self.log_z + mass.ln(),
        ))
    }

    /// Exact projection onto `verts`, sorted by partial configuration.
    pub fn marginal(&self, verts: &[usize]) -> Vec<(Vec<Spin>, f64)> {
        let mut acc: BTreeMap<Vec<Spin>, f64> = BTreeMap::new();
        for (i, s) in self.states().enumerate() {
            let key: Vec<Spin> = verts.iter().map(|&v| s[v]).collect();
            *acc.entry(key).or_insert(0.0) += self.probs[i];
        }
        acc.into_iter().collect()
    }

    /// `marg[v][s] = μ(σ_v = s)` for every vertex.
    pub fn site_marginals(&self) -> Vec<Vec<f64>> {
        let mut marg = vec![vec![0.0; self.q]; self.n];
        for (i, s) in self.states().enumerate() {
            for v in 0..self.n {
                marg[v][s[v] as usize] += self.probs[i];
            }
        }
        marg
    }

    /// Consistent pinnings on `lambda`: the distinct projections of the
    /// support, in first-appearance order.
    pub fn pinnings_on(&self, lambda: &[usize]) -> Vec<Pinning> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for s in self.states() {
            let key: Vec<Spin> = lambda.iter().map(|&v| s[v]).collect();
            if seen.insert(key.clone()) {
                out.push(Pinning(lambda.iter().copied().zip(key).collect()));
            }
        }
        out
    }

    /// Groups support indices by their projection onto `verts`.
    pub fn group_by(&self, verts: &[usize]) -> Vec<Vec<usize>> {
        let mut groups: HashMap<u64, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for (i, s) in self.states().enumerate() {
            let key = encode(s, self.q, verts);
            let slot = *groups.entry(key).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(i);
        }
        out
    }

    /// Distribution as a map from configuration to probability.
    pub fn to_map(&self) -> HashMap<Vec<Spin>, f64> {
        self.states()
            .zip(&self.probs)
            .map(|(s, &p)| (s.to_vec(), p))
            .collect()
    }
}

/// Mixed-radix code of the spins of `verts` in `config`.
#[inline]
pub fn encode(config: &[Spin], q: usize, verts: &[usize]) -> u64 {
    verts
        .iter()
        .rev()
        .fold(0u64, |acc, &v| acc * q as u64 + config[v] as u64)
}

#[inline]
pub fn decode_into(mut code: u64, q: usize, verts: &[usize], config: &mut [Spin]) {
    for &v in verts {
        config[v] = (code % q as u64) as Spin;
        code /= q as u64;
    }
}

/// Vertex subsets of `free` as bit masks over positions in `free`.
fn subsets(free: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0u64..1 << free.len()).map(move |mask| {
        free.iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, &v)| v)
            .collect()
    })
}

/// Witness for the tight marginal lower bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalBound {
    pub b: f64,
    pub pinning: Pinning,
    pub vertex: usize,
    pub spin: Spin,
}

/// The tight `b`: minimum over every `Λ`, every consistent pinning on `Λ` and
/// every consistent vertex-spin pair of the conditional marginal.
pub fn marginal_lower_bound(sys: &SpinSystem) -> Result<MarginalBound> {
    let table = exact_gibbs(sys)?;
    marginal_lower_bound_of(&table)
}

pub fn marginal_lower_bound_of(table: &GibbsTable) -> Result<MarginalBound> {
    let free = table.free_vertices().to_vec();
    if free.len() > 24 {
        return Err(Error::CapExceeded {
            size: 1u128 << free.len(),
            cap: 1 << 24,
        });
    }
    let q = table.q();
    let per_mask: Vec<Option<MarginalBound>> = subsets(&free)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|lambda| {
            let rest: Vec<usize> = free.iter().copied().filter(|v| !lambda.contains(v)).collect();
            let mut best: Option<MarginalBound> = None;
            for group in table.group_by(&lambda) {
                let mass: f64 = group.iter().map(|&i| table.prob(i)).sum();
                let mut marg = vec![0.0; rest.len() * q];
                for &i in &group {
                    let s = table.state(i);
                    for (j, &v) in rest.iter().enumerate() {
                        marg[j * q + s[v] as usize] += table.prob(i);
                    }
                }
                for (j, &v) in rest.iter().enumerate() {
                    for s in 0..q {
                        let m = marg[j * q + s];
                        if m > 0.0 && best.as_ref().is_none_or(|b| m / mass < b.b) {
                            let tau = Pinning(
                                lambda.iter().map(|&u| (u, table.state(group[0])[u])).collect(),
                            );
                            best = Some(MarginalBound {
                                b: m / mass,
                                pinning: tau,
                                vertex: v,
                                spin: s as Spin,
                            });
                        }
                    }
                }
            }
            best
        })
        .collect();
    per_mask
        .into_iter()
        .flatten()
        .reduce(|a, b| if b.b < a.b { b } else { a })
        .ok_or_else(|| Error::InvalidParameter("no free vertices".into()))
}

/// True iff every conditional support is connected under single-site flips.
pub fn is_totally_connected(sys: &SpinSystem) -> Result<bool> {
    let table = exact_gibbs(sys)?;
    let free = table.free_vertices().to_vec();
    if free.len() > 24 {
        return Err(Error::CapExceeded {
            size: 1u128 << free.len(),
            cap: 1 << 24,
        });
    }
    let q = table.q();
    let masks: Vec<Vec<usize>> = subsets(&free).collect();
    let ok = masks.par_iter().all(|lambda| {
        let rest: Vec<usize> = free.iter().copied().filter(|v| !lambda.contains(v)).collect();
        table.group_by(lambda).iter().all(|group| {
            let members: HashSet<usize> = group.iter().copied().collect();
            let mut seen = HashSet::from([group[0]]);
            let mut queue = VecDeque::from([group[0]]);
            while let Some(i) = queue.pop_front() {
                let mut config = table.state(i).to_vec();
                for &v in &rest {
                    let orig = config[v];
                    for s in 0..q as Spin {
                        if s == orig {
                            continue;
                        }
                        config[v] = s;
                        if let Some(j) = table.index_of(&config) {
                            if members.contains(&j) && seen.insert(j) {
                                queue.push_back(j);
                            }
                        }
                    }
                    config[v] = orig;
                }
            }
            seen.len() == group.len()
        })
    });
    Ok(ok)
}

/// Per-vertex linear order of the spins; `order[v]` lists spins from lowest
/// to highest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpinOrder {
    order: Vec<Vec<Spin>>,
    rank: Vec<Vec<u8>>,
}

impl SpinOrder {
    pub fn new(order: Vec<Vec<Spin>>) -> Result<Self> {
        let mut rank = Vec::with_capacity(order.len());
        for (v, perm) in order.iter().enumerate() {
            let mut r = vec![u8::MAX; perm.len()];
            for (pos, &s) in perm.iter().enumerate() {
                if s as usize >= perm.len() || r[s as usize] != u8::MAX {
                    return Err(Error::InvalidParameter(format!(
                        "order at vertex {v} is not a permutation"
                    )));
                }
                r[s as usize] = pos as u8;
            }
            rank.push(r);
        }
        Ok(Self { order, rank })
    }

    /// `0 < 1 < … < q-1` at every vertex.
    pub fn natural(n: usize, q: usize) -> Self {
        Self::new(vec![(0..q as Spin).collect(); n]).expect("identity is a permutation")
    }

    /// Natural order, reversed at the listed vertices.
    pub fn flipped_on(n: usize, q: usize, flipped: &[usize]) -> Self {
        let mut order: Vec<Vec<Spin>> = vec![(0..q as Spin).collect(); n];
        for &v in flipped {
            order[v].reverse();
        }
        Self::new(order).expect("reversal is a permutation")
    }

    pub fn reversed(&self) -> Self {
        let order = self
            .order
            .iter()
            .map(|p| p.iter().rev().copied().collect())
            .collect();
        Self::new(order).expect("reversal is a permutation")
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    #[inline]
    pub fn rank(&self, v: usize, s: Spin) -> u8 {
        self.rank[v][s as usize]
    }

    /// Spins at `v` from lowest to highest.
    pub fn spins(&self, v: usize) -> &[Spin] {
        &self.order[v]
    }

    pub fn top(&self, v: usize) -> Spin {
        *self.order[v].last().expect("q >= 2")
    }

    pub fn bottom(&self, v: usize) -> Spin {
        self.order[v][0]
    }

    /// Coordinatewise `a ⪰ b`.
    pub fn dominates(&self, a: &[Spin], b: &[Spin]) -> bool {
        (0..a.len()).all(|v| self.rank(v, a[v]) >= self.rank(v, b[v]))
    }

    pub fn rank_sum(&self, config: &[Spin]) -> i64 {
        config
            .iter()
            .enumerate()
            .map(|(v, &s)| self.rank(v, s) as i64)
            .sum()
    }
}

/// True iff for every `Λ` and every comparable pair of consistent pinnings
/// `τ1 ⪰ τ2` on `Λ`, `μ(·|τ1)` stochastically dominates `μ(·|τ2)`. Dominance
/// is tested on every up-set of the product order over the unpinned sites.
pub fn is_monotone(sys: &SpinSystem, order: &SpinOrder) -> Result<bool> {
    is_monotone_capped(sys, order, DEFAULT_UPSET_CAP)
}

pub fn is_monotone_capped(sys: &SpinSystem, order: &SpinOrder, upset_cap: usize) -> Result<bool> {
    const TOL: f64 = 1e-12;
    let table = exact_gibbs(sys)?;
    let free = table.free_vertices().to_vec();
    let q = sys.q();
    if free.len() > 20 {
        return Err(Error::CapExceeded {
            size: 1u128 << free.len(),
            cap: 1 << 20,
        });
    }
    // Up-sets of the product space over m coordinates, keyed by the vertices
    // they live on (the order differs per vertex).
    let mut cache: HashMap<Vec<usize>, Vec<Vec<bool>>> = HashMap::new();
    for lambda in subsets(&free) {
        let rest: Vec<usize> = free.iter().copied().filter(|v| !lambda.contains(v)).collect();
        let pinnings = table.pinnings_on(&lambda);
        if pinnings.len() < 2 || rest.is_empty() {
            continue;
        }
        let space = (q as u64).pow(rest.len() as u32) as usize;
        if !cache.contains_key(&rest) {
            let decode = |code: usize| {
                let mut c = vec![0 as Spin; sys.n()];
                decode_into(code as u64, q, &rest, &mut c);
                c
            };
            let sets = poset::up_sets(
                space,
                |i| order.rank_sum(&decode(i)),
                |a, b| a != b && order.dominates(&decode(a), &decode(b)),
                upset_cap,
            )?;
            cache.insert(rest.clone(), sets);
        }
        let sets = &cache[&rest];
        let conditionals: Vec<Vec<f64>> = pinnings
            .iter()
            .map(|tau| {
                let mut dist = vec![0.0; space];
                let mut mass = 0.0;
                for (i, s) in table.states().enumerate() {
                    if tau.matches(s) {
                        dist[encode(s, q, &rest) as usize] += table.prob(i);
                        mass += table.prob(i);
                    }
                }
                dist.iter_mut().for_each(|x| *x /= mass);
                dist
            })
            .collect();
        let as_config = |tau: &Pinning| {
            let mut c = vec![0 as Spin; sys.n()];
            for (v, s) in tau.iter() {
                c[v] = s;
            }
            c
        };
        for (a, ta) in pinnings.iter().enumerate() {
            for (b, tb) in pinnings.iter().enumerate() {
                if a == b {
                    continue;
                }
                let (ca, cb) = (as_config(ta), as_config(tb));
                let comparable = lambda
                    .iter()
                    .all(|&v| order.rank(v, ca[v]) >= order.rank(v, cb[v]));
                if !comparable {
                    continue;
                }
                for set in sets {
                    let mass = |d: &[f64]| -> f64 {
                        d.iter().zip(set).filter(|(_, &m)| m).map(|(p, _)| p).sum()
                    };
                    if mass(&conditionals[a]) < mass(&conditionals[b]) - TOL {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// Single-site monotonicity: for every free vertex `v` and every pair of
/// neighbourhood configurations differing at one neighbour by one step up,
/// the heat-bath conditional at `v` moves up stochastically. This is exactly
/// what the inverse-CDF grand coupling needs to preserve order, and it only
/// enumerates `q^deg(v)` neighbourhoods per vertex.
pub fn is_locally_monotone(sys: &SpinSystem, order: &SpinOrder) -> Result<bool> {
    const TOL: f64 = 1e-12;
    let q = sys.q();
    for v in sys.free_vertices() {
        let nbrs = sys.graph().neighbors(v).to_vec();
        let free_nbrs: Vec<usize> = nbrs.iter().copied().filter(|&w| sys.is_free(w)).collect();
        let count = (q as u128).saturating_pow(free_nbrs.len() as u32);
        if count > DEFAULT_STATE_CAP {
            return Err(Error::CapExceeded {
                size: count,
                cap: DEFAULT_STATE_CAP,
            });
        }
        let mut config = sys.template_config(0);
        let cdf = |config: &[Spin]| -> Option<Vec<f64>> {
            let w: Vec<f64> = order
                .spins(v)
                .iter()
                .map(|&s| sys.local_log_weight(config, v, s).map_or(0.0, f64::exp))
                .collect();
            let total: f64 = w.iter().sum();
            (total > 0.0).then(|| {
                w.iter()
                    .scan(0.0, |acc, x| {
                        *acc += x / total;
                        Some(*acc)
                    })
                    .collect()
            })
        };
        for code in 0..count as u64 {
            decode_into(code, q, &free_nbrs, &mut config);
            let Some(low) = cdf(&config) else { continue };
            for &w in &free_nbrs {
                let orig = config[w];
                let r = order.rank(w, orig) as usize;
                if r + 1 >= q {
                    continue;
                }
                config[w] = order.spins(w)[r + 1];
                if let Some(high) = cdf(&config) {
                    // Upper CDF must lie below the lower one pointwise.
                    if high.iter().zip(&low).any(|(h, l)| *h > l + TOL) {
                        return Ok(false);
                    }
                }
                config[w] = orig;
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{complete_graph, path_graph, Graph};

    fn edge() -> Arc<Graph> {
        Arc::new(path_graph(2))
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn ising_beta_zero_is_uniform() {
        let t = exact_gibbs(&ising(Arc::new(path_graph(3)), 0.0).unwrap()).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.probs().iter().all(|&p| close(p, 0.125)));
    }

    #[test]
    fn hardcore_edge_weights() {
        let sys = hardcore(edge(), 1.0).unwrap();
        assert_eq!(sys.hamiltonian(&[1, 1]).unwrap(), f64::INFINITY);
        for c in [[0, 0], [0, 1], [1, 0]] {
            assert_eq!(sys.hamiltonian(&c).unwrap(), 0.0);
        }
        let t = exact_gibbs(&sys).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.probs().iter().all(|&p| close(p, 1.0 / 3.0)));
        assert_eq!(t.prob_of(&[1, 1]), 0.0);
    }

    #[test]
    fn potts_edge_weights() {
        let sys = potts(edge(), 3, 1.0).unwrap();
        assert!(close(sys.hamiltonian(&[2, 2]).unwrap(), -1.0));
        assert!(close(sys.hamiltonian(&[0, 2]).unwrap(), 0.0));
        let t = exact_gibbs(&sys).unwrap();
        let z = 3.0 * 1f64.exp() + 6.0;
        assert!(close(t.prob_of(&[1, 1]), 1f64.exp() / z));
        assert!(close(t.prob_of(&[1, 0]), 1.0 / z));
        assert!(close(t.log_z(), z.ln()));
    }

    #[test]
    fn hamiltonian_examples() {
        let empty = ising(Arc::new(Graph::empty(3)), 0.7).unwrap();
        assert_eq!(empty.hamiltonian(&[0, 1, 1]).unwrap(), 0.0);
        let e = ising(edge(), 0.4).unwrap();
        assert!(close(e.hamiltonian(&[1, 1]).unwrap(), -0.4));
        assert!(e.hamiltonian(&[1]).is_err());
        assert!(e.hamiltonian(&[1, 2]).is_err());
    }

    #[test]
    fn exact_gibbs_examples() {
        let t = exact_gibbs(&ising(edge(), 2f64.ln()).unwrap()).unwrap();
        assert!(close(t.prob_of(&[1, 1]), 1.0 / 3.0));
        assert!(close(t.prob_of(&[0, 0]), 1.0 / 3.0));
        assert!(close(t.prob_of(&[0, 1]), 1.0 / 6.0));
        let t = exact_gibbs(&potts(Arc::new(Graph::empty(2)), 3, 0.5).unwrap()).unwrap();
        assert!(t.probs().iter().all(|&p| close(p, 1.0 / 9.0)));
    }

    #[test]
    fn cap_is_an_error() {
        let sys = ising(Arc::new(Graph::empty(21)), 0.0).unwrap();
        assert!(matches!(exact_gibbs(&sys), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn condition_examples() {
        let beta = 0.9;
        let sys = ising(edge(), beta).unwrap();
        let same = exact_gibbs(&sys.condition(&Pinning::new()).unwrap()).unwrap();
        assert_eq!(same.to_map(), exact_gibbs(&sys).unwrap().to_map());

        let tau = Pinning::from_pairs([(0, 1)]).unwrap();
        let c = exact_gibbs(&sys.condition(&tau).unwrap()).unwrap();
        assert!(close(c.prob_of(&[1, 1]), beta.exp() / (beta.exp() + 1.0)));

        let hc = hardcore(edge(), 1.0).unwrap();
        let c = exact_gibbs(&hc.condition(&tau).unwrap()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.state(0), &[1, 0]);
        // Pinning both endpoints occupied is inconsistent.
        let both = Pinning::from_pairs([(0, 1), (1, 1)]).unwrap();
        assert_eq!(hc.condition(&both), Err(Error::EmptyConditional));
    }

    #[test]
    fn reduced_system_matches_conditional() {
        let g = Arc::new(path_graph(4));
        let sys = potts(g, 3, 0.8).unwrap();
        let tau = Pinning::from_pairs([(1, 2), (3, 0)]).unwrap();
        let cond = exact_gibbs(&sys.condition(&tau).unwrap()).unwrap();
        let (red, map) = sys.condition(&tau).unwrap().reduced().unwrap();
        assert_eq!(map, vec![0, 2]);
        let rt = exact_gibbs(&red).unwrap();
        for (i, s) in rt.states().enumerate() {
            let mut full = vec![0, 2, 0, 0];
            full[0] = s[0];
            full[2] = s[1];
            assert!(close(rt.prob(i), cond.prob_of(&full)));
        }
    }

    #[test]
    fn marginal_examples() {
        let beta = 3f64.ln();
        let t = exact_gibbs(&ising(edge(), beta).unwrap()).unwrap();
        let full = t.marginal(&[0, 1]);
        assert_eq!(full.len(), 4);
        let v = t.marginal(&[1]);
        assert!(close(v[1].1, 0.5));
        let c = t.condition(&Pinning::from_pairs([(0, 1)]).unwrap()).unwrap();
        assert!(close(c.marginal(&[1])[1].1, 0.75));
    }

    #[test]
    fn marginal_lower_bound_examples() {
        let single = ising(Arc::new(Graph::empty(1)), 0.0).unwrap();
        assert!(close(marginal_lower_bound(&single).unwrap().b, 0.5));
        let mb = marginal_lower_bound(&ising(edge(), 2f64.ln()).unwrap()).unwrap();
        assert!(close(mb.b, 1.0 / 3.0));
        assert_eq!(mb.pinning.len(), 1);
        // Re-check the witness.
        let t = exact_gibbs(&ising(edge(), 2f64.ln()).unwrap()).unwrap();
        let c = t.condition(&mb.pinning).unwrap();
        let m = c.marginal(&[mb.vertex]);
        let p = m.iter().find(|(k, _)| k[0] == mb.spin).unwrap().1;
        assert!(close(p, mb.b));
    }

    #[test]
    fn potts_marginal_bound_at_small_beta() {
        // β <= 2/Δ gives every consistent conditional at least 1/(q e^2).
        let g = Arc::new(complete_graph(4));
        let q = 3;
        let sys = potts(g, q, 2.0 / 3.0).unwrap();
        let b = marginal_lower_bound(&sys).unwrap().b;
        assert!(b >= 1.0 / (q as f64 * std::f64::consts::E.powi(2)));
    }

    #[test]
    fn total_connectivity_examples() {
        assert!(is_totally_connected(&ising(Arc::new(path_graph(3)), 0.5).unwrap()).unwrap());
        assert!(is_totally_connected(&hardcore(Arc::new(complete_graph(3)), 2.0).unwrap()).unwrap());
        let colouring = SpinSystem::new(
            edge(),
            2,
            vec![Potential::Hard, Potential::ZERO, Potential::ZERO, Potential::Hard],
            vec![Potential::ZERO; 4],
            Pinning::new(),
        )
        .unwrap();
        assert!(!is_totally_connected(&colouring).unwrap());
    }

    #[test]
    fn monotonicity_examples() {
        let order = SpinOrder::natural(3, 2);
        let ferro = ising(Arc::new(path_graph(3)), 0.6).unwrap();
        assert!(is_monotone(&ferro, &order).unwrap());
        assert!(is_locally_monotone(&ferro, &order).unwrap());
        let anti = ising(edge(), -0.6).unwrap();
        let o2 = SpinOrder::natural(2, 2);
        assert!(!is_monotone(&anti, &o2).unwrap());
        assert!(!is_locally_monotone(&anti, &o2).unwrap());
        // Hardcore on a bipartite graph with one side flipped.
        let g = Arc::new(crate::graphs::cycle_graph(4).unwrap());
        let hc = hardcore(g, 1.3).unwrap();
        let flipped = SpinOrder::flipped_on(4, 2, &[1, 3]);
        assert!(is_monotone(&hc, &flipped).unwrap());
        assert!(!is_monotone(&hc, &SpinOrder::natural(4, 2)).unwrap());
        assert!(is_monotone(&hc, &flipped.reversed()).unwrap());
    }

    #[test]
    fn uniqueness_thresholds() {
        assert!(close(uniqueness_threshold(ModelKind::Ising, 3).unwrap(), 3f64.ln()));
        assert!(close(uniqueness_threshold(ModelKind::Ising, 4).unwrap(), 2f64.ln()));
        assert!(close(uniqueness_threshold(ModelKind::Hardcore, 3).unwrap(), 4.0));
        assert!(uniqueness_threshold(ModelKind::Ising, 2).is_err());
    }

    #[test]
    fn invalid_models() {
        assert!(make_model(ModelKind::Potts, edge(), 1.0, 1).is_err());
        assert!(make_model(ModelKind::Hardcore, edge(), 0.0, 2).is_err());
        assert!(make_model(ModelKind::Hardcore, edge(), -1.0, 2).is_err());
    }

    #[test]
    fn pinning_parse() {
        let p = Pinning::parse("0:1, 3:0").unwrap();
        assert_eq!(p.vertices(), vec![0, 3]);
        assert!(Pinning::parse("0:1,0:0").is_err());
        assert!(Pinning::parse("x").is_err());
    }

    #[test]
    fn potts_beta_detection() {
        assert_eq!(potts(edge(), 3, 0.5).unwrap().potts_beta(), Some(0.5));
        assert_eq!(hardcore(edge(), 1.0).unwrap().potts_beta(), None);
        let pinned = ising(edge(), 0.5)
            .unwrap()
            .with_boundary(Pinning::from_pairs([(0, 1)]).unwrap())
            .unwrap();
        assert_eq!(pinned.potts_beta(), None);
    }
}
