//! Exact analysis on enumerated state spaces: induced transition matrices,
//! stationarity and detailed-balance residuals, spectral gaps, mixing times,
//! entropy functionals, MLSI estimates, entropy factorization checks and the
//! censoring order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{percolation_probability, region_conditional, site_conditional, BlockSpec, Kernel};
use crate::error::{Error, Result};
use crate::graphs::{IndependentPartition, UnionFind};
use crate::poset;
use crate::spin::{decode_into, exact_gibbs, GibbsTable, Spin, SpinOrder, SpinSystem};

/// Tolerance on the detailed-balance residual below which a matrix is treated
/// as reversible.
pub const REVERSIBILITY_TOL: f64 = 1e-9;

/// Largest edge count for the Swendsen–Wang matrix and the joint space.
pub const MAX_SW_EDGES: usize = 20;

/// Largest state space for the censoring check.
pub const MAX_CENSOR_STATES: usize = 256;

/// Row-stochastic matrix over an enumerated support with its stationary law.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    states: Vec<Vec<Spin>>,
    matrix: DMatrix<f64>,
    stationary: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(states: Vec<Vec<Spin>>, matrix: DMatrix<f64>, stationary: Vec<f64>) -> Result<Self> {
        let n = stationary.len();
        if matrix.nrows() != n || matrix.ncols() != n || states.len() != n {
            return Err(Error::InvalidParameter("matrix, states and stationary sizes differ".into()));
        }
        if matrix.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvariantViolated("negative or non-finite entry".into()));
        }
        for i in 0..n {
            let s: f64 = matrix.row(i).sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvariantViolated(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self {
            states,
            matrix,
            stationary,
        })
    }

    pub fn from_table(table: &GibbsTable, matrix: DMatrix<f64>) -> Result<Self> {
        Self::new(
            table.states().map(<[Spin]>::to_vec).collect(),
            matrix,
            table.probs().to_vec(),
        )
    }

    /// The identity kernel on the support of `table`.
    pub fn identity(table: &GibbsTable) -> Result<Self> {
        Self::from_table(table, DMatrix::identity(table.len(), table.len()))
    }

    /// Every row equal to the stationary law.
    pub fn independent(table: &GibbsTable) -> Result<Self> {
        let n = table.len();
        let mu = table.probs();
        Self::from_table(table, DMatrix::from_fn(n, n, |_, j| mu[j]))
    }

    pub fn len(&self) -> usize {
        self.stationary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stationary.is_empty()
    }

    pub fn states(&self) -> &[Vec<Spin>] {
        &self.states
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    /// `self` followed by `other`.
    pub fn then(&self, other: &TransitionMatrix) -> Result<TransitionMatrix> {
        same_stationary(self, other)?;
        Self::new(self.states.clone(), &self.matrix * &other.matrix, self.stationary.clone())
    }

    pub fn mu_min(&self) -> f64 {
        self.stationary.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn same_stationary(a: &TransitionMatrix, b: &TransitionMatrix) -> Result<()> {
    if a.len() != b.len() || a.states != b.states {
        return Err(Error::StationaryMismatch(f64::INFINITY));
    }
    let d = a
        .stationary
        .iter()
        .zip(&b.stationary)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    if d > 1e-12 {
        return Err(Error::StationaryMismatch(d));
    }
    Ok(())
}

/// Heat-bath update at a single vertex as a matrix on the support.
pub fn site_matrix(sys: &SpinSystem, table: &GibbsTable, v: usize) -> DMatrix<f64> {
    let n = table.len();
    let mut m = DMatrix::zeros(n, n);
    if !sys.is_free(v) {
        m.fill_with_identity();
        return m;
    }
    for i in 0..n {
        let mut c = table.state(i).to_vec();
        let p = site_conditional(sys, &c, v);
        for (s, &ps) in p.iter().enumerate() {
            if ps > 0.0 {
                c[v] = s as Spin;
                let j = table.index_of(&c).expect("heat-bath target lies in the support");
                m[(i, j)] += ps;
            }
        }
    }
    m
}

/// Heat-bath update of a whole region as a matrix on the support.
pub fn region_matrix(sys: &SpinSystem, table: &GibbsTable, region: &[usize]) -> Result<DMatrix<f64>> {
    let region: Vec<usize> = region.iter().copied().filter(|&v| sys.is_free(v)).collect();
    if region.len() == 1 {
        return Ok(site_matrix(sys, table, region[0]));
    }
    let n = table.len();
    let mut m = DMatrix::zeros(n, n);
    if region.is_empty() {
        m.fill_with_identity();
        return Ok(m);
    }
    for i in 0..n {
        let mut c = table.state(i).to_vec();
        let (codes, probs) = region_conditional(sys, &c, &region)?;
        for (code, p) in codes.iter().zip(&probs) {
            decode_into(*code, sys.q(), &region, &mut c);
            let j = table.index_of(&c).expect("block target lies in the support");
            m[(i, j)] += p;
        }
    }
    Ok(m)
}

fn sequence_matrix(sys: &SpinSystem, table: &GibbsTable, seq: &[usize]) -> DMatrix<f64> {
    let n = table.len();
    let mut cache: Vec<Option<DMatrix<f64>>> = vec![None; sys.n()];
    let mut acc = DMatrix::identity(n, n);
    for &v in seq {
        let m = cache[v].get_or_insert_with(|| site_matrix(sys, table, v));
        acc = &acc * &*m;
    }
    acc
}

/// Exact transition matrix of `kernel` on the support of `sys`.
pub fn induced_matrix(kernel: &Kernel, sys: &SpinSystem) -> Result<TransitionMatrix> {
    let table = exact_gibbs(sys)?;
    induced_matrix_on(kernel, sys, &table)
}

pub fn induced_matrix_on(kernel: &Kernel, sys: &SpinSystem, table: &GibbsTable) -> Result<TransitionMatrix> {
    kernel.validate(sys)?;
    let n = table.len();
    let m = match kernel {
        Kernel::Glauber => {
            let free = sys.free_vertices();
            if free.is_empty() {
                DMatrix::identity(n, n)
            } else {
                let parts: Vec<DMatrix<f64>> =
                    free.par_iter().map(|&v| site_matrix(sys, table, v)).collect();
                parts.into_iter().fold(DMatrix::zeros(n, n), |a, b| a + b) / free.len() as f64
            }
        }
        Kernel::Scan(phi) => {
            let seq: Vec<usize> = phi.as_slice().iter().chain(phi.as_slice().iter().rev()).copied().collect();
            sequence_matrix(sys, table, &seq)
        }
        Kernel::OneWayScan(phi) => sequence_matrix(sys, table, phi.as_slice()),
        Kernel::EvenOdd { even, odd, literal } => {
            let e = region_matrix(sys, table, even)?;
            let o = region_matrix(sys, table, odd)?;
            if *literal {
                &e * &o * &o * &e
            } else {
                &e * &o * &e
            }
        }
        Kernel::Block(spec) => block_matrix(sys, table, spec)?,
        Kernel::SwendsenWang => sw_matrix(sys, table)?,
    };
    TransitionMatrix::from_table(table, m)
}

fn block_matrix(sys: &SpinSystem, table: &GibbsTable, spec: &BlockSpec) -> Result<DMatrix<f64>> {
    let n = table.len();
    let parts = spec
        .blocks()
        .par_iter()
        .zip(spec.weights())
        .map(|(b, &w)| region_matrix(sys, table, b).map(|m| m * w))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(DMatrix::zeros(n, n), |a, b| a + b))
}

/// Swendsen–Wang matrix by summing over subsets of monochromatic edges.
fn sw_matrix(sys: &SpinSystem, table: &GibbsTable) -> Result<DMatrix<f64>> {
    let beta = sys.potts_beta().ok_or_else(|| Error::Unsupported("SW needs a Potts system".into()))?;
    let g = sys.graph();
    if g.edge_count() > MAX_SW_EDGES {
        return Err(Error::CapExceeded {
            size: 1u128 << g.edge_count(),
            cap: 1 << MAX_SW_EDGES,
        });
    }
    let p = percolation_probability(beta);
    let q = sys.q();
    let n = table.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = table.state(i);
            let mono: Vec<(usize, usize)> =
                g.edges().iter().copied().filter(|&(u, v)| s[u] == s[v]).collect();
            let mut row = Vec::new();
            for mask in 0u64..1 << mono.len() {
                let kept = mask.count_ones() as i32;
                let w = p.powi(kept) * (1.0 - p).powi(mono.len() as i32 - kept);
                if w == 0.0 {
                    continue;
                }
                let mut uf = UnionFind::new(g.n());
                for (k, &(u, v)) in mono.iter().enumerate() {
                    if mask >> k & 1 == 1 {
                        uf.union(u, v);
                    }
                }
                let (labels, comps) = uf.labels();
                let each = w / (q as f64).powi(comps as i32);
                let mut colours = vec![0 as Spin; comps];
                let reps: Vec<usize> = (0..comps).collect();
                let mut target = vec![0 as Spin; g.n()];
                for code in 0..(q as u64).pow(comps as u32) {
                    decode_into(code, q, &reps, &mut colours);
                    for v in 0..g.n() {
                        target[v] = colours[labels[v]];
                    }
                    let j = table.index_of(&target).expect("Potts support is everything");
                    row.push((j, each));
                }
            }
            row
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, w) in row {
            m[(i, j)] += w;
        }
    }
    Ok(m)
}

/// Edwards–Sokal joint space: consistent pairs `(σ, A)` with `ν` weights.
#[derive(Clone, Debug)]
pub struct JointTable {
    /// Index of `σ` in the spin table.
    pub spin_index: Vec<usize>,
    /// Retained edges as a bit mask over `g.edges()`.
    pub edge_mask: Vec<u64>,
    pub probs: Vec<f64>,
}

impl JointTable {
    pub fn build(sys: &SpinSystem, table: &GibbsTable) -> Result<Self> {
        let beta = sys.potts_beta().ok_or_else(|| Error::Unsupported("needs a Potts system".into()))?;
        let g = sys.graph();
        let m = g.edge_count();
        if m > MAX_SW_EDGES {
            return Err(Error::CapExceeded {
                size: 1u128 << m,
                cap: 1 << MAX_SW_EDGES,
            });
        }
        let p = percolation_probability(beta);
        let mut spin_index = Vec::new();
        let mut edge_mask = Vec::new();
        let mut weights = Vec::new();
        for (i, s) in table.states().enumerate() {
            let mono: u64 = g
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, &(u, v))| s[u] == s[v])
                .fold(0, |acc, (k, _)| acc | 1 << k);
            for mask in 0u64..1 << m {
                if mask & !mono != 0 {
                    continue;
                }
                let kept = mask.count_ones() as i32;
                let w = p.powi(kept) * (1.0 - p).powi(m as i32 - kept);
                if w > 0.0 {
                    spin_index.push(i);
                    edge_mask.push(mask);
                    weights.push(w);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            spin_index,
            edge_mask,
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Marginal of `ν` on spin configurations, indexed like the spin table.
    pub fn spin_marginal(&self, states: usize) -> Vec<f64> {
        let mut out = vec![0.0; states];
        for (i, &p) in self.spin_index.iter().zip(&self.probs) {
            out[*i] += p;
        }
        out
    }

    /// Kernel `Ω → Ω_J` drawing `A | σ`.
    pub fn edge_kernel(&self, states: usize) -> DMatrix<f64> {
        let marg = self.spin_marginal(states);
        let mut m = DMatrix::zeros(states, self.len());
        for (k, (&i, &p)) in self.spin_index.iter().zip(&self.probs).enumerate() {
            m[(i, k)] = p / marg[i];
        }
        m
    }

    /// Kernel `Ω_J → Ω` drawing `σ | A`.
    pub fn spin_kernel(&self, states: usize) -> DMatrix<f64> {
        let mut mass: std::collections::HashMap<u64, f64> = std::collections::HashMap::new();
        for (&a, &p) in self.edge_mask.iter().zip(&self.probs) {
            *mass.entry(a).or_insert(0.0) += p;
        }
        let mut m = DMatrix::zeros(self.len(), states);
        for k in 0..self.len() {
            let a = self.edge_mask[k];
            for (l, (&i, &p)) in self.spin_index.iter().zip(&self.probs).enumerate() {
                if self.edge_mask[l] == a {
                    m[(k, i)] += p / mass[&a];
                }
            }
        }
        m
    }
}

/// `max |μP − μ|`.
pub fn stationarity_residual(p: &TransitionMatrix) -> f64 {
    let mu = DVector::from_column_slice(&p.stationary);
    let moved = p.matrix.transpose() * &mu;
    (moved - mu).amax()
}

/// `max |μ(x)P(x,y) − μ(y)P(y,x)|`.
pub fn reversibility_residual(p: &TransitionMatrix) -> f64 {
    let n = p.len();
    let mu = &p.stationary;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((mu[i] * p.matrix[(i, j)] - mu[j] * p.matrix[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of a reversible `P` in descending order, through the
/// symmetric matrix `D^{1/2} P D^{-1/2}`.
pub fn eigenvalues(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let r = reversibility_residual(p);
    if r > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(r));
    }
    let n = p.len();
    let sq: Vec<f64> = p.stationary.iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| sq[i] * p.matrix[(i, j)] / sq[j]);
    let sym = (&s + s.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Absolute spectral gap `1 − max(|λ_2|, |λ_min|)`.
pub fn spectral_gap(p: &TransitionMatrix) -> Result<f64> {
    let ev = eigenvalues(p)?;
    if ev.len() < 2 {
        return Ok(1.0);
    }
    let lam = ev[1].abs().max(ev[ev.len() - 1].abs());
    Ok(1.0 - lam)
}

/// `1 − λ_2`.
pub fn relative_gap(p: &TransitionMatrix) -> Result<f64> {
    let ev = eigenvalues(p)?;
    Ok(if ev.len() < 2 { 1.0 } else { 1.0 - ev[1] })
}

/// Right eigenvector for `λ_2`, as a function on states.
pub fn second_eigenfunction(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let r = reversibility_residual(p);
    if r > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(r));
    }
    let n = p.len();
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let sq: Vec<f64> = p.stationary.iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| sq[i] * p.matrix[(i, j)] / sq[j]);
    let eig = SymmetricEigen::new((&s + s.transpose()) * 0.5);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let col = eig.eigenvectors.column(idx[1]);
    Ok((0..n).map(|i| col[i] / sq[i]).collect())
}

/// `max_x d_TV(P^t(x, ·), μ)`.
pub fn worst_tv(power: &DMatrix<f64>, mu: &[f64]) -> f64 {
    (0..power.nrows())
        .map(|i| 0.5 * (0..mu.len()).map(|j| (power[(i, j)] - mu[j]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Smallest `t ≥ 1` with `max_x d_TV(P^t(x,·), μ) ≤ ε`.
pub fn tv_mixing_time(p: &TransitionMatrix, eps: f64, max_steps: u64) -> Result<u64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    let mut power = p.matrix.clone();
    for t in 1..=max_steps {
        if worst_tv(&power, &p.stationary) <= eps {
            return Ok(t);
        }
        power = &power * &p.matrix;
    }
    Err(Error::NotConverged(max_steps as usize))
}

/// Nonnegative function on the support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionOnStates(Vec<f64>);

impl FunctionOnStates {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_nonnegative(&values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// Independent `Exp(1)` values, strictly positive.
    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        Self((0..len).map(|_| Exp1.sample(rng)).map(|x: f64| x.max(1e-300)).collect())
    }
}

fn check_nonnegative(f: &[f64]) -> Result<()> {
    if let Some(x) = f.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("function value {x} is not a finite nonnegative number")));
    }
    Ok(())
}

/// `(1+δ)log(1+δ) − δ`, accurate for small `δ`.
fn phi(delta: f64) -> f64 {
    if delta.abs() < 1e-3 {
        let d2 = delta * delta;
        d2 * (0.5 - delta / 6.0 + d2 / 12.0 - d2 * delta / 20.0 + d2 * d2 / 30.0)
    } else if delta <= -1.0 {
        1.0
    } else {
        (1.0 + delta) * delta.ln_1p() - delta
    }
}

/// `Σ_g Σ_{x∈g} p(x) f(x) log(f(x)/m_g)` with `m_g` the `p`-average of `f`
/// on group `g`: the `p`-expected entropy of `f` within groups.
pub fn grouped_entropy(p: &[f64], f: &[f64], groups: &[usize]) -> f64 {
    let k = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut mass = vec![0.0; k];
    let mut mean = vec![0.0; k];
    for ((&pi, &fi), &g) in p.iter().zip(f).zip(groups) {
        mass[g] += pi;
        mean[g] += pi * fi;
    }
    for g in 0..k {
        if mass[g] > 0.0 {
            mean[g] /= mass[g];
        }
    }
    p.iter()
        .zip(f)
        .zip(groups)
        .map(|((&pi, &fi), &g)| {
            let m = mean[g];
            if m <= 0.0 || pi == 0.0 {
                0.0
            } else {
                pi * m * phi(fi / m - 1.0)
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// `Ent_μ(f) = E_μ[f log(f / E_μ f)]`, with `0 log 0 = 0`.
pub fn entropy(f: &[f64], mu: &[f64]) -> Result<f64> {
    check_nonnegative(f)?;
    if f.len() != mu.len() {
        return Err(Error::InvalidParameter("f and μ have different lengths".into()));
    }
    Ok(grouped_entropy(mu, f, &vec![0; f.len()]))
}

/// `H(ν | μ) = Σ ν log(ν/μ)`.
pub fn relative_entropy(nu: &[f64], mu: &[f64]) -> Result<f64> {
    let mut acc = 0.0;
    for (&a, &b) in nu.iter().zip(mu) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::InvalidParameter("ν is not absolutely continuous w.r.t. μ".into()));
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc.max(0.0))
}

/// `(1/2) Σ μ(x)P(x,y)(f(x)−f(y))(g(x)−g(y))`.
pub fn dirichlet_form(p: &TransitionMatrix, f: &[f64], g: &[f64]) -> f64 {
    let n = p.len();
    let mu = &p.stationary;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = p.matrix[(i, j)];
            if w != 0.0 {
                acc += mu[i] * w * (f[i] - f[j]) * (g[i] - g[j]);
            }
        }
    }
    0.5 * acc
}

/// `⟨f, (I − P) g⟩_μ`.
pub fn dirichlet_form_inner(p: &TransitionMatrix, f: &[f64], g: &[f64]) -> f64 {
    let gv = DVector::from_column_slice(g);
    let pg = &p.matrix * &gv;
    (0..p.len())
        .map(|i| p.stationary[i] * f[i] * (g[i] - pg[i]))
        .sum()
}

/// `E_P(f, log f)` computed from log-ratios so that nearby values keep their
/// precision.
pub fn entropy_production(p: &TransitionMatrix, f: &[f64]) -> f64 {
    let n = p.len();
    let mu = &p.stationary;
    let mut acc = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let w = mu[i] * p.matrix[(i, j)];
            if w == 0.0 {
                continue;
            }
            let d = f[i] - f[j];
            if d == 0.0 {
                continue;
            }
            let lr = (d / f[j]).ln_1p();
            acc += w * d * lr;
        }
    }
    acc
}

/// `E_P(f, log f) / Ent_μ(f)`, `None` when the entropy vanishes.
pub fn mlsi_ratio(p: &TransitionMatrix, f: &[f64]) -> Option<f64> {
    let ent = grouped_entropy(&p.stationary, f, &vec![0; f.len()]);
    (ent > 0.0).then(|| entropy_production(p, f) / ent)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlsiEstimate {
    /// Smallest `E_P(f, log f)/Ent(f)` found; an upper bound on `ρ(P)`.
    pub witness: f64,
    pub gap: f64,
    pub mu_min: f64,
    /// Lower and upper ends of the gap-based bracket on `ρ(P)`.
    pub bracket: (f64, f64),
    pub witness_in_bracket: bool,
    pub trials: usize,
}

/// Lower factor `(1 − 2μ_min)/log(1/μ_min − 1)`, with its limit `1/2` at
/// `μ_min = 1/2`.
pub fn mlsi_lower_factor(mu_min: f64) -> f64 {
    if mu_min >= 0.5 - 1e-12 {
        0.5
    } else {
        (1.0 - 2.0 * mu_min) / (1.0 / mu_min - 1.0).ln()
    }
}

/// Chases the MLSI infimum: `trials` random `Exp(1)` functions, the
/// perturbations `1 ± εg` of the second eigenfunction, then a multiplicative
/// hill-climb from the best candidates.
pub fn mlsi_estimate(p: &TransitionMatrix, trials: usize, rng: &mut impl Rng) -> Result<MlsiEstimate> {
    let gap = spectral_gap(p)?;
    let mu_min = p.mu_min();
    let lower = mlsi_lower_factor(mu_min) * gap;
    let upper = 2.0 * gap;
    let n = p.len();
    if n < 2 {
        return Ok(MlsiEstimate {
            witness: upper,
            gap,
            mu_min,
            bracket: (lower, upper),
            witness_in_bracket: true,
            trials: 0,
        });
    }
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    let g = second_eigenfunction(p)?;
    let scale = g.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    for eps in [1e-5, 1e-3, 1e-1] {
        for sign in [1.0, -1.0] {
            let f: Vec<f64> = g.iter().map(|x| 1.0 + sign * eps * x / scale).collect();
            if let Some(r) = mlsi_ratio(p, &f) {
                candidates.push((r, f));
            }
        }
    }
    for _ in 0..trials {
        let f = FunctionOnStates::random(n, rng).0;
        if let Some(r) = mlsi_ratio(p, &f) {
            candidates.push((r, f));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut witness = candidates.first().map_or(upper, |c| c.0);
    for (_, f0) in candidates.iter().take(4) {
        let (r, _) = hill_climb(f0.clone(), 200, rng, |f| mlsi_ratio(p, f).map(|r| -r));
        witness = witness.min(-r);
    }
    Ok(MlsiEstimate {
        witness,
        gap,
        mu_min,
        bracket: (lower, upper),
        witness_in_bracket: witness >= lower - 1e-9 && witness <= upper + 1e-9,
        trials,
    })
}

/// Maximises `score` by random multiplicative moves on single coordinates.
fn hill_climb(
    mut f: Vec<f64>,
    steps: usize,
    rng: &mut impl Rng,
    score: impl Fn(&[f64]) -> Option<f64>,
) -> (f64, Vec<f64>) {
    let mut best = score(&f).unwrap_or(f64::NEG_INFINITY);
    let n = f.len();
    let mut step = 0.5;
    for k in 0..steps {
        let i = rng.random_range(0..n);
        let z: f64 = StandardNormal.sample(rng);
        let old = f[i];
        f[i] = (old * (step * z).exp()).max(1e-300);
        match score(&f) {
            Some(s) if s > best => best = s,
            _ => f[i] = old,
        }
        if k % 50 == 49 {
            step *= 0.7;
        }
    }
    (best, f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayCheck {
    pub before: f64,
    pub after: f64,
    pub rate: f64,
    pub holds: bool,
}

/// Tests `H(νP | μ) ≤ (1 − r) H(ν | μ)`.
pub fn entropy_decay_check(p: &TransitionMatrix, nu: &[f64], r: f64) -> Result<DecayCheck> {
    if nu.len() != p.len() {
        return Err(Error::InvalidParameter("ν has the wrong length".into()));
    }
    let before = relative_entropy(nu, &p.stationary)?;
    let moved = p.matrix.transpose() * DVector::from_column_slice(nu);
    let after = relative_entropy(moved.as_slice(), &p.stationary)?;
    Ok(DecayCheck {
        before,
        after,
        rate: r,
        holds: after <= (1.0 - r) * before + 1e-12,
    })
}

/// Expected restricted entropy `E[Ent(f̄) | σ_outer]` where `f̄` averages `f`
/// over everything outside `inner` and the entropy is taken within each
/// class of equal `σ_outer`. With `inner` covering every free vertex this is
/// `E_{τ ∼ μ_outer}[Ent^τ(f)]`.
pub fn restricted_entropy(table: &GibbsTable, f: &[f64], outer: &[usize], inner: &[usize]) -> f64 {
    let outer_ids = group_ids(table, outer);
    let inner_ids = group_ids(table, inner);
    let averaged = average_within(table.probs(), f, &inner_ids);
    grouped_entropy(table.probs(), &averaged, &outer_ids)
}

fn group_ids(table: &GibbsTable, verts: &[usize]) -> Vec<usize> {
    let mut ids = vec![0; table.len()];
    for (g, members) in table.group_by(verts).into_iter().enumerate() {
        for i in members {
            ids[i] = g;
        }
    }
    ids
}

fn average_within(p: &[f64], f: &[f64], ids: &[usize]) -> Vec<f64> {
    let k = ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut mass = vec![0.0; k];
    let mut sum = vec![0.0; k];
    for ((&pi, &fi), &g) in p.iter().zip(f).zip(ids) {
        mass[g] += pi;
        sum[g] += pi * fi;
    }
    ids.iter().map(|&g| if mass[g] > 0.0 { sum[g] / mass[g] } else { 0.0 }).collect()
}

/// Sides of the chain-rule identity for nested `Λ_1 ⊂ … ⊂ Λ_m ⊆ Λ`,
/// averaged over the pinning outside `Λ`.
pub fn chain_rule_sides(table: &GibbsTable, f: &[f64], lambda: &[usize], nested: &[Vec<usize>]) -> Result<(f64, f64)> {
    let free = table.free_vertices().to_vec();
    let in_set = |set: &[usize], v: usize| set.contains(&v);
    for w in nested.windows(2) {
        if !w[0].iter().all(|&v| in_set(&w[1], v)) {
            return Err(Error::InvalidParameter("subsets are not nested".into()));
        }
    }
    if let Some(last) = nested.last() {
        if !last.iter().all(|&v| in_set(lambda, v)) {
            return Err(Error::InvalidParameter("largest subset is not inside Λ".into()));
        }
    }
    let mut lhs = 0.0;
    let empty = Vec::new();
    for i in 0..nested.len() {
        let prev = if i == 0 { &empty } else { &nested[i - 1] };
        let cur = &nested[i];
        let outer: Vec<usize> = free.iter().copied().filter(|&v| !in_set(cur, v)).collect();
        let inner: Vec<usize> = free.iter().copied().filter(|&v| !in_set(prev, v)).collect();
        lhs += restricted_entropy(table, f, &outer, &inner);
    }
    let last = nested.last().unwrap_or(&empty);
    let outer: Vec<usize> = free.iter().copied().filter(|&v| !in_set(last, v)).collect();
    let rhs = restricted_entropy(table, f, &outer, &free);
    Ok((lhs, rhs))
}

/// Entropy factorization schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scheme {
    /// Approximate tensorization over single sites.
    Tensorization,
    /// Uniform block factorization over all `ℓ`-subsets.
    UniformBlock(usize),
    KPartite(IndependentPartition),
    GeneralBlock(BlockSpec),
    EdgeSpin,
}

impl Scheme {
    pub fn name(&self) -> String {
        match self {
            Scheme::Tensorization => "AT".into(),
            Scheme::UniformBlock(l) => format!("UBF({l})"),
            Scheme::KPartite(p) => format!("KPF({})", p.k()),
            Scheme::GeneralBlock(_) => "GBF".into(),
            Scheme::EdgeSpin => "edge-spin".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub scheme: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, absent when both sides vanish.
    pub ratio: Option<f64>,
    pub reference_constant: f64,
    pub holds: bool,
}

/// Precomputed grouping data for repeated evaluation of one scheme.
#[derive(Clone, Debug)]
pub struct Factorizer {
    scheme: Scheme,
    probs: Vec<f64>,
    lhs_scale: f64,
    /// `(weight, outer group ids)` for each term of the right-hand side.
    terms: Vec<(f64, Vec<usize>)>,
    reference_constant: f64,
}

impl Factorizer {
    pub fn new(scheme: Scheme, sys: &SpinSystem, reference_constant: f64) -> Result<Self> {
        let table = exact_gibbs(sys)?;
        Self::with_table(scheme, sys, &table, reference_constant)
    }

    pub fn with_table(scheme: Scheme, sys: &SpinSystem, table: &GibbsTable, reference_constant: f64) -> Result<Self> {
        let free = table.free_vertices().to_vec();
        let n = free.len();
        if n == 0 {
            return Err(Error::InvalidParameter("no free vertices".into()));
        }
        let complement = |block: &[usize]| -> Vec<usize> {
            free.iter().copied().filter(|v| !block.contains(v)).collect()
        };
        let blocks = |bs: Vec<(f64, Vec<usize>)>| -> Vec<(f64, Vec<usize>)> {
            bs.into_iter().map(|(w, b)| (w, group_ids(table, &complement(&b)))).collect()
        };
        let (lhs_scale, terms, probs) = match &scheme {
            Scheme::Tensorization => {
                let w = 1.0 / n as f64;
                (w, blocks(free.iter().map(|&v| (w, vec![v])).collect()), table.probs().to_vec())
            }
            Scheme::UniformBlock(l) => {
                if *l == 0 || *l > n {
                    return Err(Error::InvalidParameter(format!("ℓ = {l} outside [1, {n}]")));
                }
                let subsets = combinations(&free, *l);
                if subsets.len() > 1 << 16 {
                    return Err(Error::CapExceeded {
                        size: subsets.len() as u128,
                        cap: 1 << 16,
                    });
                }
                let w = 1.0 / subsets.len() as f64;
                (*l as f64 / n as f64, blocks(subsets.into_iter().map(|s| (w, s)).collect()), table.probs().to_vec())
            }
            Scheme::KPartite(p) => {
                p.validate(sys.graph())?;
                (1.0, blocks(p.classes.iter().map(|c| (1.0, c.clone())).collect()), table.probs().to_vec())
            }
            Scheme::GeneralBlock(spec) => (
                spec.alpha_min(),
                blocks(spec.blocks().iter().cloned().zip(spec.weights()).map(|(b, &w)| (w, b)).collect()),
                table.probs().to_vec(),
            ),
            Scheme::EdgeSpin => {
                let joint = JointTable::build(sys, table)?;
                let by_spin = joint.spin_index.clone();
                let mut masks: Vec<u64> = joint.edge_mask.clone();
                masks.sort_unstable();
                masks.dedup();
                let by_edges = joint
                    .edge_mask
                    .iter()
                    .map(|a| masks.binary_search(a).expect("mask present"))
                    .collect();
                (1.0, vec![(1.0, by_spin), (1.0, by_edges)], joint.probs)
            }
        };
        Ok(Self {
            scheme,
            probs,
            lhs_scale,
            terms,
            reference_constant,
        })
    }

    /// Number of entries a test function must have: support states, or
    /// joint states for the edge-spin scheme.
    pub fn domain_len(&self) -> usize {
        self.probs.len()
    }

    pub fn sides(&self, f: &[f64]) -> (f64, f64) {
        let ent = grouped_entropy(&self.probs, f, &vec![0; f.len()]);
        let rhs = self
            .terms
            .iter()
            .map(|(w, ids)| w * grouped_entropy(&self.probs, f, ids))
            .sum();
        (self.lhs_scale * ent, rhs)
    }

    pub fn evaluate(&self, f: &[f64]) -> Result<FactorizationReport> {
        check_nonnegative(f)?;
        if f.len() != self.domain_len() {
            return Err(Error::InvalidParameter(format!(
                "function has {} values, domain has {}",
                f.len(),
                self.domain_len()
            )));
        }
        let (lhs, rhs) = self.sides(f);
        let ratio = (rhs > 0.0).then(|| lhs / rhs);
        let holds = lhs <= self.reference_constant * rhs * (1.0 + 1e-9) + 1e-15;
        Ok(FactorizationReport {
            scheme: self.scheme.name(),
            lhs,
            rhs,
            ratio,
            reference_constant: self.reference_constant,
            holds,
        })
    }

    fn ratio(&self, f: &[f64]) -> Option<f64> {
        let (lhs, rhs) = self.sides(f);
        (rhs > 1e-300 && lhs > 1e-14).then(|| lhs / rhs)
    }

    /// Evaluates `trials` random functions, then hill-climbs from the best
    /// few to chase the largest ratio.
    pub fn chase(&self, trials: usize, climb_steps: usize, rng: &mut impl Rng) -> ChaseResult {
        let n = self.domain_len();
        let mut all_hold = true;
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(trials);
        for _ in 0..trials {
            let f = FunctionOnStates::random(n, rng).0;
            let (lhs, rhs) = self.sides(&f);
            all_hold &= lhs <= self.reference_constant * rhs * (1.0 + 1e-9) + 1e-15;
            if let Some(r) = self.ratio(&f) {
                scored.push((r, f));
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let random_max = scored.first().map_or(0.0, |s| s.0);
        let mut chased_max = random_max;
        for (_, f0) in scored.iter().take(3) {
            let (r, _) = hill_climb(f0.clone(), climb_steps, rng, |f| self.ratio(f));
            chased_max = chased_max.max(r);
        }
        ChaseResult {
            trials,
            random_max,
            chased_max,
            reference_constant: self.reference_constant,
            all_hold: all_hold && chased_max <= self.reference_constant * (1.0 + 1e-9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChaseResult {
    pub trials: usize,
    pub random_max: f64,
    pub chased_max: f64,
    pub reference_constant: f64,
    pub all_hold: bool,
}

pub fn factorization_check(scheme: Scheme, sys: &SpinSystem, f: &[f64], reference_constant: f64) -> Result<FactorizationReport> {
    Factorizer::new(scheme, sys, reference_constant)?.evaluate(f)
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(items: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, k, 0, &mut cur, &mut out);
    out
}

/// `K ⪯_μ L`: `⟨K 1_U, 1_W⟩_μ ≤ ⟨L 1_U, 1_W⟩_μ` for every pair of up-sets of
/// the product order on the support.
pub fn censoring_order_check(k: &TransitionMatrix, l: &TransitionMatrix, order: &SpinOrder) -> Result<bool> {
    same_stationary(k, l)?;
    let n = k.len();
    if n > MAX_CENSOR_STATES {
        return Err(Error::CapExceeded {
            size: n as u128,
            cap: MAX_CENSOR_STATES as u128,
        });
    }
    let states = &k.states;
    let sets = poset::up_sets(
        n,
        |i| order.rank_sum(&states[i]),
        |a, b| a != b && order.dominates(&states[a], &states[b]),
        crate::spin::DEFAULT_UPSET_CAP,
    )?;
    let diff = &l.matrix - &k.matrix;
    let mu = &k.stationary;
    let ok = sets.par_iter().all(|u| {
        let ind = DVector::from_iterator(n, u.iter().map(|&m| if m { 1.0 } else { 0.0 }));
        let v = &diff * ind;
        let weighted: Vec<f64> = (0..n).map(|i| mu[i] * v[i]).collect();
        sets.iter().all(|w| {
            let s: f64 = (0..n).filter(|&i| w[i]).map(|i| weighted[i]).sum();
            s >= -1e-12
        })
    });
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::replica_rng;
    use crate::graphs::{path_graph, Graph};
    use crate::spin::{ising, potts};
    use std::sync::Arc;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() < tol
    }

    #[test]
    fn single_vertex_glauber_rows_are_mu() {
        let sys = ising(Arc::new(Graph::empty(1)), 0.0).unwrap();
        let p = induced_matrix(&Kernel::Glauber, &sys).unwrap();
        assert!(close(p.entry(0, 0), 0.5, 1e-15) && close(p.entry(1, 0), 0.5, 1e-15));
        assert!(close(spectral_gap(&p).unwrap(), 1.0, 1e-12));
    }

    #[test]
    fn sw_at_zero_beta_is_uniform() {
        let sys = potts(Arc::new(path_graph(3)), 3, 0.0).unwrap();
        let p = induced_matrix(&Kernel::SwendsenWang, &sys).unwrap();
        assert!(p.matrix().iter().all(|&x| close(x, 1.0 / 27.0, 1e-14)));
    }

    #[test]
    fn sw_single_edge_row() {
        let sys = ising(Arc::new(path_graph(2)), 2f64.ln()).unwrap();
        let p = induced_matrix(&Kernel::SwendsenWang, &sys).unwrap();
        let t = exact_gibbs(&sys).unwrap();
        let from = t.index_of(&[1, 1]).unwrap();
        for (c, want) in [([1, 1], 3.0 / 8.0), ([0, 0], 3.0 / 8.0), ([0, 1], 1.0 / 8.0), ([1, 0], 1.0 / 8.0)] {
            assert!(close(p.entry(from, t.index_of(&c).unwrap()), want, 1e-14));
        }
    }

    #[test]
    fn glauber_gap_on_isolated_spins() {
        for n in 2..=5 {
            let sys = ising(Arc::new(Graph::empty(n)), 0.0).unwrap();
            let p = induced_matrix(&Kernel::Glauber, &sys).unwrap();
            assert!(close(spectral_gap(&p).unwrap(), 1.0 / n as f64, 1e-12));
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let sys = ising(Arc::new(path_graph(3)), 0.3).unwrap();
        let p = induced_matrix(&Kernel::Glauber, &sys).unwrap();
        let mut m = p.matrix().clone();
        m[(0, 1)] += 1e-3;
        let s: f64 = m.row(0).sum();
        for j in 0..m.ncols() {
            m[(0, j)] /= s;
        }
        let bad = TransitionMatrix::new(p.states().to_vec(), m, p.stationary().to_vec()).unwrap();
        assert!(stationarity_residual(&bad) >= 1e-4);
    }

    #[test]
    fn entropy_examples() {
        let mu = [0.2, 0.3, 0.5];
        assert_eq!(entropy(&[2.0, 2.0, 2.0], &mu).unwrap(), 0.0);
        let e = entropy(&[0.0, 1.0, 0.0], &mu).unwrap();
        assert!(close(e, 0.3 * (1.0f64 / 0.3).ln(), 1e-14));
        let f = [0.4, 1.3, 2.2];
        let g: Vec<f64> = f.iter().map(|x| 3.5 * x).collect();
        assert!(close(entropy(&g, &mu).unwrap(), 3.5 * entropy(&f, &mu).unwrap(), 1e-13));
        assert!(entropy(&[-1.0, 1.0, 1.0], &mu).is_err());
    }

    #[test]
    fn phi_matches_direct_formula() {
        for d in [-0.9, -0.2, -1e-2, 5e-4, -5e-4, 0.3, 4.0] {
            let direct = (1.0 + d) * (1.0 + d as f64).ln() - d;
            assert!(close(phi(d), direct, 1e-15 + 1e-12 * direct.abs()));
        }
    }

    #[test]
    fn dirichlet_forms_agree() {
        let sys = ising(Arc::new(path_graph(3)), 0.5).unwrap();
        let p = induced_matrix(&Kernel::Glauber, &sys).unwrap();
        let mut rng = replica_rng(3, 0);
        for _ in 0..20 {
            let f = FunctionOnStates::random(p.len(), &mut rng).0;
            let g = FunctionOnStates::random(p.len(), &mut rng).0;
            assert!(close(dirichlet_form(&p, &f, &g), dirichlet_form_inner(&p, &f, &g), 1e-12));
        }
        assert_eq!(dirichlet_form(&p, &vec![1.0; p.len()], &vec![1.0; p.len()]), 0.0);
    }

    #[test]
    fn decay_trivial_cases() {
        let sys = ising(Arc::new(path_graph(2)), 0.5).unwrap();
        let t = exact_gibbs(&sys).unwrap();
        let ind = TransitionMatrix::independent(&t).unwrap();
        let point = vec![1.0, 0.0, 0.0, 0.0];
        let d = entropy_decay_check(&ind, &point, 1.0).unwrap();
        assert!(d.holds && d.after.abs() < 1e-15);
        let d = entropy_decay_check(&ind, t.probs(), 0.7).unwrap();
        assert!(d.holds && d.before.abs() < 1e-15);
    }

    #[test]
    fn constant_function_factorizes_trivially() {
        let sys = ising(Arc::new(path_graph(2)), 2f64.ln()).unwrap();
        let fz = Factorizer::new(Scheme::Tensorization, &sys, 1.0).unwrap();
        let r = fz.evaluate(&vec![3.0; fz.domain_len()]).unwrap();
        assert_eq!((r.lhs, r.rhs, r.ratio), (0.0, 0.0, None));
        assert!(r.holds);
    }

    #[test]
    fn tensorization_with_unit_constant_on_products() {
        let sys = ising(Arc::new(Graph::empty(3)), 0.0).unwrap();
        let fz = Factorizer::new(Scheme::Tensorization, &sys, 1.0).unwrap();
        let mut rng = replica_rng(5, 0);
        let res = fz.chase(200, 300, &mut rng);
        assert!(res.all_hold, "{res:?}");
    }

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(&[0, 1, 2, 3, 4], 2).len(), 10);
        assert_eq!(combinations(&[0, 1, 2], 3), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn censoring_reflexive_and_heat_bath_below_identity() {
        let sys = ising(Arc::new(path_graph(2)), 0.6).unwrap();
        let t = exact_gibbs(&sys).unwrap();
        let order = SpinOrder::natural(2, 2);
        let glauber = induced_matrix_on(&Kernel::Glauber, &sys, &t).unwrap();
        assert!(censoring_order_check(&glauber, &glauber, &order).unwrap());
        let id = TransitionMatrix::identity(&t).unwrap();
        for v in 0..2 {
            let pv = TransitionMatrix::from_table(&t, site_matrix(&sys, &t, v)).unwrap();
            assert!(censoring_order_check(&pv, &id, &order).unwrap());
            assert!(!censoring_order_check(&id, &pv, &order).unwrap());
        }
    }
}
