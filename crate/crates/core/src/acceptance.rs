//! The acceptance suite: exact checks on a fixed testbed of small systems and
//! Monte Carlo checks on larger lattices, one `Check` per criterion.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{
    component_tail, coupling_time, disagreement_radius, linear_fit, monotone_coupled_step,
    rectangle_block_contraction, CoupledTrajectory, MonotoneCoupler,
};
use crate::dynamics::{replica_rng, BlockSpec, Kernel};
use crate::error::{Error, Result};
use crate::exact::{
    censoring_order_check, chain_rule_sides, induced_matrix_on, mlsi_estimate,
    reversibility_residual, site_matrix, spectral_gap, stationarity_residual, Factorizer,
    FunctionOnStates, Scheme, TransitionMatrix,
};
use crate::graphs::{
    complete_graph, cycle_graph, grid_graph, greedy_independent_partition, path_graph,
    random_gnp, Graph, GridShape,
};
use crate::report::{Check, RunReport};
use crate::spectral::{
    conductance_of, dobrushin_matrix, es_constant, eta_of, gap_lower_bound, gbf_constant,
    influence_matrix_of, kpf_from_gap, local_random_walk_of, reference_bounds, ubf_constant,
};
use crate::spin::{
    hardcore, ising, make_model, marginal_lower_bound_of, potts, GibbsTable, ModelKind,
    Potential, SpinOrder, SpinSystem, DEFAULT_STATE_CAP,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceOptions {
    pub seed: u64,
    /// Largest state space the exact checks may enumerate.
    pub cap_states: u128,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        Self {
            seed: 20240601,
            cap_states: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TestSystem {
    pub name: String,
    pub sys: SpinSystem,
}

fn testbed_graphs() -> Vec<(&'static str, Graph)> {
    vec![
        ("edge", path_graph(2)),
        ("path3", path_graph(3)),
        ("triangle", complete_graph(3)),
        ("cycle4", cycle_graph(4).expect("n >= 3")),
    ]
}

fn models_on(gname: &str, g: Graph) -> Vec<TestSystem> {
    let g = Arc::new(g);
    let ln2 = 2f64.ln();
    let mut out = Vec::new();
    for (label, beta) in [("0", 0.0), ("0.3", 0.3), ("ln2", ln2)] {
        out.push(TestSystem {
            name: format!("{gname}/ising(beta={label})"),
            sys: ising(g.clone(), beta).expect("valid ising"),
        });
    }
    out.push(TestSystem {
        name: format!("{gname}/potts(q=3,beta=0.5)"),
        sys: potts(g.clone(), 3, 0.5).expect("valid potts"),
    });
    out.push(TestSystem {
        name: format!("{gname}/hardcore(lambda=1)"),
        sys: hardcore(g, 1.0).expect("valid hardcore"),
    });
    out
}

/// Single edge, 3-path, triangle and 4-cycle, each under Ising at
/// `β ∈ {0, 0.3, ln 2}`, 3-state Potts at `β = 0.5`, and hardcore at `λ = 1`.
pub fn testbed() -> Vec<TestSystem> {
    testbed_graphs()
        .into_iter()
        .flat_map(|(name, g)| models_on(name, g))
        .collect()
}

/// The testbed plus the same five models on a 5-cycle, which brings the
/// number of pinnings with at least two unpinned vertices past 500.
pub fn extended_testbed() -> Vec<TestSystem> {
    let mut t = testbed();
    t.extend(models_on("cycle5", cycle_graph(5).expect("n >= 3")));
    t
}

const STATIONARY: &str = "mu P = mu and detailed balance for every kernel";
const IDENTITY: &str =
    "lambda_1(Psi^tau) = (n-k-1) lambda_2(local walk) for every pinning without a point-mass conditional";
const CONDUCTANCE: &str = "1 - lambda_2 >= Phi^2/2 and Phi >= 2 b^2/(n-k)^2 for the local walk";
const GAP_BOUND: &str = "Glauber gap >= (2b^4/((ceil(2 eta)+2)^4 n))^(1+ceil(2 eta))";
const MLSI: &str = "MLSI witness within [(1-2 mu_min)/log(1/mu_min-1) gap, 2 gap]";
const DOBRUSHIN: &str = "||A|| < 1 implies eta <= 2/(1-||A||)";
const FACTORIZATION: &str =
    "AT, UBF, KPF, GBF and edge-spin factorization with reference constants; KPF <= 3n log(1/b)/gap; chain rule";
const TAIL: &str = "Pr[|C_S(v)| = k] <= (l/n)(2 e Delta theta)^(k-1) for uniform l-subsets S";
const CENSORING: &str = "P_v below identity and scan below independent-set block dynamics in the censoring order";
const MONOTONE: &str = "grand coupling keeps order; even-odd coupling time grows like a + b log n";
const RADIUS: &str = "identity coupling of even-odd steps spreads disagreement at most 3 per step";
const CONTRACTION: &str = "rectangle-block coupling from one disagreement has E[d(X_1, Y_1)] < 1";

/// Names of the checks in the order `acceptance_suite` runs them.
pub const CRITERIA: [&str; 12] = [
    "stationarity-reversibility",
    "local-walk-identity",
    "conductance-sandwich",
    "glauber-gap-bound",
    "mlsi-bracket",
    "dobrushin-eta",
    "factorization",
    "component-tail",
    "censoring-order",
    "monotone-coupling",
    "disagreement-radius",
    "block-contraction",
];

/// Runs every criterion in order.
pub fn acceptance_suite(opts: &AcceptanceOptions) -> RunReport {
    let start = Instant::now();
    let mut report = RunReport::new(
        "accept",
        serde_json::to_value(opts).unwrap_or(serde_json::Value::Null),
    );
    report.checks.push(stationarity_check(opts));
    let (identity, conductance) = local_walk_checks(opts);
    report.checks.push(identity);
    report.checks.push(conductance);
    for run in [
        gap_bound_check,
        mlsi_check,
        dobrushin_check,
        factorization_check,
        tail_check,
        censoring_check,
        monotone_check,
        radius_check,
        contraction_check,
    ] {
        report.checks.push(run(opts));
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    report
}

/// Times a check body; an error becomes a failed check.
fn timed(name: &str, anchor: &str, body: impl FnOnce() -> Result<Check>) -> Check {
    let t = Instant::now();
    let mut c = body().unwrap_or_else(|e| Check::failed(name, anchor, e));
    c.seconds = t.elapsed().as_secs_f64();
    c
}

/// Tables for `systems`, or the skip reason when one exceeds the cap.
fn tables(systems: &[TestSystem], cap: u128) -> std::result::Result<Vec<GibbsTable>, String> {
    systems
        .iter()
        .map(|s| {
            let size = s.sys.state_space_size();
            if size > cap {
                return Err(format!("cap ({} has {size} states > {cap})", s.name));
            }
            GibbsTable::build(&s.sys, cap).map_err(|e| e.to_string())
        })
        .collect()
}

fn kernels_for(sys: &SpinSystem) -> Result<Vec<Kernel>> {
    let g = sys.graph();
    let n = sys.n();
    let mut ks = vec![Kernel::Glauber, Kernel::scan(n)];
    if g.bipartition().is_some() {
        ks.push(Kernel::even_odd(g)?);
    }
    // Every edge and every vertex as a block, uniformly.
    let mut blocks: Vec<Vec<usize>> = g.edges().iter().map(|&(u, v)| vec![u, v]).collect();
    blocks.extend((0..n).map(|v| vec![v]));
    ks.push(Kernel::Block(BlockSpec::uniform(n, blocks)?));
    if sys.potts_beta().is_some() {
        ks.push(Kernel::SwendsenWang);
    }
    Ok(ks)
}

fn stationarity_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[0];
    let systems = testbed();
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => return Check::skipped(name, STATIONARY, why),
    };
    let t0 = Instant::now();
    timed(name, STATIONARY, || {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for (s, table) in systems.iter().zip(&tabs) {
            for k in kernels_for(&s.sys)? {
                let p = induced_matrix_on(&k, &s.sys, table)?;
                worst = worst.max(stationarity_residual(&p)).max(reversibility_residual(&p));
                count += 1;
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        Ok(Check::new(name, STATIONARY, worst, 1e-10, worst < 1e-10 && secs < 30.0)
            .with_detail(format!("{count} kernel/system pairs")))
    })
}

/// The local-walk identity and the conductance sandwich share one pass over
/// every pinning of the extended testbed.
fn local_walk_checks(opts: &AcceptanceOptions) -> (Check, Check) {
    let (n1, n2) = (CRITERIA[1], CRITERIA[2]);
    let systems = extended_testbed();
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => {
            return (
                Check::skipped(n1, IDENTITY, why.clone()),
                Check::skipped(n2, CONDUCTANCE, why),
            )
        }
    };
    let t0 = Instant::now();
    struct Tally {
        pinnings: usize,
        degenerate: usize,
        identity: f64,
        cheeger: f64,
        lower: f64,
    }
    let per_system = systems
        .par_iter()
        .zip(&tabs)
        .map(|(_, table)| -> Result<Tally> {
            let b = marginal_lower_bound_of(table)?.b;
            let free = table.free_vertices().to_vec();
            let mut t = Tally {
                pinnings: 0,
                degenerate: 0,
                identity: 0.0,
                cheeger: f64::INFINITY,
                lower: f64::INFINITY,
            };
            let mut rng = replica_rng(opts.seed, 0);
            for mask in 0u64..1 << free.len() {
                let lambda: Vec<usize> =
                    (0..free.len()).filter(|i| mask >> i & 1 == 1).map(|i| free[i]).collect();
                let m = free.len() - lambda.len();
                if m < 2 {
                    continue;
                }
                for tau in table.pinnings_on(&lambda) {
                    let psi = influence_matrix_of(table, &tau)?;
                    let walk = local_random_walk_of(table, &tau)?;
                    let l1 = psi.lambda_max_general()?;
                    let l2 = walk.lambda2();
                    if walk.index.len() == m {
                        // Point-mass conditional: Ψ vanishes and the walk is
                        // uniform over the other m - 1 pairs.
                        t.degenerate += 1;
                        let err = l1.abs().max((l2 + 1.0 / (m - 1) as f64).abs());
                        t.identity = t.identity.max(err);
                    } else {
                        t.identity = t.identity.max((l1 - (m - 1) as f64 * l2).abs());
                    }
                    let phi = conductance_of(&walk.matrix, &walk.stationary, 0, &mut rng)?;
                    if !phi.exact {
                        return Err(Error::InvariantViolated("conductance not exact".into()));
                    }
                    // Margins: how far each inequality is from failing.
                    t.cheeger = t.cheeger.min((1.0 - l2) - phi.value.powi(2) / 2.0);
                    t.lower = t.lower.min(phi.value - 2.0 * b * b / (m * m) as f64);
                    t.pinnings += 1;
                }
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>();
    let secs = t0.elapsed().as_secs_f64();
    let tallies = match per_system {
        Ok(t) => t,
        Err(e) => return (Check::failed(n1, IDENTITY, &e), Check::failed(n2, CONDUCTANCE, e)),
    };
    let pinnings: usize = tallies.iter().map(|t| t.pinnings).sum();
    let degenerate: usize = tallies.iter().map(|t| t.degenerate).sum();
    let identity = tallies.iter().map(|t| t.identity).fold(0.0, f64::max);
    let cheeger = tallies.iter().map(|t| t.cheeger).fold(f64::INFINITY, f64::min);
    let lower = tallies.iter().map(|t| t.lower).fold(f64::INFINITY, f64::min);
    let mut c1 = Check::new(
        n1,
        IDENTITY,
        identity,
        1e-8,
        identity < 1e-8 && pinnings - degenerate >= 500 && secs < 60.0,
    )
    .with_detail(format!(
        "{pinnings} pinnings, {degenerate} with a point-mass conditional checked against lambda_2 = -1/(n-k-1)"
    ));
    let mut c2 = Check::new(n2, CONDUCTANCE, cheeger.min(lower), 0.0, cheeger >= -1e-12 && lower >= -1e-12)
        .with_detail(format!(
            "smallest margins: cheeger {cheeger:.3e}, lower bound {lower:.3e} over {pinnings} walks"
        ));
    c1.seconds = secs;
    c2.seconds = secs;
    (c1, c2)
}

/// `(η, b, n)` of a table, `n` counting free vertices.
fn eta_b(table: &GibbsTable) -> Result<(f64, f64, usize)> {
    let eta = eta_of(table, None)?.eta;
    let b = marginal_lower_bound_of(table)?.b;
    Ok((eta, b, table.free_vertices().len()))
}

fn gap_bound_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[3];
    let systems = testbed();
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => return Check::skipped(name, GAP_BOUND, why),
    };
    timed(name, GAP_BOUND, || {
        let mut worst = f64::INFINITY;
        let mut at = String::new();
        for (s, table) in systems.iter().zip(&tabs) {
            let p = induced_matrix_on(&Kernel::Glauber, &s.sys, table)?;
            let gap = spectral_gap(&p)?;
            let (eta, b, n) = eta_b(table)?;
            let bound = gap_lower_bound(eta, b, n);
            let ratio = gap / bound;
            if ratio < worst {
                worst = ratio;
                at = format!("{}: gap {gap:.4e} bound {bound:.4e}", s.name);
            }
        }
        Ok(Check::new(name, GAP_BOUND, worst, 1.0, worst >= 1.0)
            .with_detail(format!("smallest gap/bound at {at}")))
    })
}

fn mlsi_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[4];
    let systems = testbed();
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => return Check::skipped(name, MLSI, why),
    };
    timed(name, MLSI, || {
        let results = systems
            .par_iter()
            .zip(&tabs)
            .enumerate()
            .map(|(i, (s, table))| {
                let p = induced_matrix_on(&Kernel::Glauber, &s.sys, table)?;
                let mut rng = replica_rng(opts.seed, 100 + i as u64);
                let est = mlsi_estimate(&p, 500, &mut rng)?;
                Ok((s.name.clone(), est))
            })
            .collect::<Result<Vec<_>>>()?;
        // Position of the witness inside its bracket: 0 at the lower end, 1 at the upper.
        let mut outside = Vec::new();
        let mut lowest = f64::INFINITY;
        let mut highest = f64::NEG_INFINITY;
        for (name, e) in &results {
            let (lo, hi) = e.bracket;
            let pos = (e.witness - lo) / (hi - lo).max(1e-300);
            lowest = lowest.min(pos);
            highest = highest.max(pos);
            if !e.witness_in_bracket {
                outside.push(name.clone());
            }
        }
        Ok(Check::new(name, MLSI, lowest, 0.0, outside.is_empty()).with_detail(format!(
            "witness position in bracket from {lowest:.3} to {highest:.3}; outside: {outside:?}"
        )))
    })
}

/// A random small system: `G(n, 1/2)` with `n ∈ 3..=5` under Ising, 3-state
/// Potts or hardcore with random parameters, Ising and Potts also carrying
/// random external fields.
fn random_small_system(rng: &mut impl Rng) -> Result<SpinSystem> {
    let n = rng.random_range(3..=5);
    let g = Arc::new(random_gnp(n, 0.5, rng.random())?);
    let kind = [ModelKind::Ising, ModelKind::Potts, ModelKind::Hardcore][rng.random_range(0..3)];
    let (param, q) = match kind {
        ModelKind::Ising => (rng.random_range(-0.8..0.8), 2),
        ModelKind::Potts => (rng.random_range(-0.8..0.8), 3),
        ModelKind::Hardcore => (rng.random_range(0.1..2.0), 2),
    };
    let mut sys = make_model(kind, g, param, q)?;
    if kind != ModelKind::Hardcore {
        for v in 0..n {
            for s in 0..q as u8 {
                sys = sys.with_field(v, s, Potential::Finite(rng.random_range(-0.5..0.5)))?;
            }
        }
    }
    Ok(sys)
}

fn dobrushin_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[5];
    timed(name, DOBRUSHIN, || {
        let mut rng = replica_rng(opts.seed, 200);
        let mut kept = 0;
        let mut attempts = 0;
        let mut worst = f64::NEG_INFINITY;
        let mut tightest: f64 = 0.0;
        while kept < 50 {
            attempts += 1;
            if attempts > 5000 {
                return Err(Error::InvalidParameter("too few systems with ||A|| < 1".into()));
            }
            let sys = random_small_system(&mut rng)?;
            if sys.state_space_size() > opts.cap_states {
                continue;
            }
            let norm = dobrushin_matrix(&sys)?.spectral_norm();
            if norm >= 1.0 {
                continue;
            }
            let table = GibbsTable::build(&sys, opts.cap_states)?;
            let eta = eta_of(&table, None)?.eta;
            // Positive slack means the bound holds.
            worst = worst.max(eta - 2.0 / (1.0 - norm));
            tightest = tightest.max(eta * (1.0 - norm) / 2.0);
            kept += 1;
        }
        Ok(Check::new(name, DOBRUSHIN, worst, 1e-9, worst <= 1e-9)
            .with_detail(format!(
                "largest eta - 2/(1-||A||) over {kept} systems ({attempts} drawn); largest ratio {tightest:.4}"
            )))
    })
}

/// Random blocks: three blocks, each vertex joining each with probability
/// 1/2 and forced into a random one if it joined none; Dirichlet-like random
/// weights.
fn random_blocks(n: usize, rng: &mut impl Rng) -> Result<BlockSpec> {
    let k = 3;
    let mut blocks = vec![Vec::new(); k];
    for v in 0..n {
        let mut placed = false;
        for b in blocks.iter_mut() {
            if rng.random::<bool>() {
                b.push(v);
                placed = true;
            }
        }
        if !placed {
            blocks[rng.random_range(0..k)].push(v);
        }
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let (blocks, weights): (Vec<_>, Vec<_>) = blocks
        .into_iter()
        .zip(raw.iter().map(|w| w / total))
        .filter(|(b, _)| !b.is_empty())
        .unzip();
    let total: f64 = weights.iter().sum();
    BlockSpec::new(n, blocks, weights.iter().map(|w| w / total).collect())
}

fn factorization_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[6];
    let systems = testbed();
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => return Check::skipped(name, FACTORIZATION, why),
    };
    timed(name, FACTORIZATION, || {
        let results = systems
            .par_iter()
            .zip(&tabs)
            .enumerate()
            .map(|(i, (s, table))| -> Result<(Vec<String>, f64, f64)> {
                let mut rng = replica_rng(opts.seed, 300 + i as u64);
                let sys = &s.sys;
                let (eta, b, n) = eta_b(table)?;
                let g = sys.graph();
                let partition = greedy_independent_partition(g);
                let k = partition.k();
                let ell = n.div_ceil(2);
                let refs = reference_bounds(eta, b, g.max_degree().max(3), n, ell as f64 / n as f64)?;
                let c_kpf = refs.kpf;
                let mut schemes = vec![
                    (Scheme::Tensorization, ubf_constant(eta, b, 1.0 / n as f64)),
                    (Scheme::UniformBlock(ell), refs.c_ubf),
                    (Scheme::KPartite(partition.clone()), c_kpf),
                    (Scheme::GeneralBlock(random_blocks(n, &mut rng)?), gbf_constant(k, c_kpf)),
                ];
                if let Some(beta) = sys.potts_beta().filter(|&b| b > 0.0) {
                    schemes.push((Scheme::EdgeSpin, es_constant(beta, g.max_degree(), k, c_kpf)));
                }
                let mut failures = Vec::new();
                for (scheme, c) in schemes {
                    let label = scheme.name();
                    let fz = Factorizer::with_table(scheme, sys, table, c)?;
                    for _ in 0..200 {
                        let f = FunctionOnStates::random(fz.domain_len(), &mut rng);
                        if !fz.evaluate(f.values())?.holds {
                            failures.push(format!("{}:{label}", s.name));
                            break;
                        }
                    }
                }
                // Chased KPF ratio against the gap-based constant.
                let gap = spectral_gap(&induced_matrix_on(&Kernel::Glauber, sys, table)?)?;
                let from_gap = kpf_from_gap(n, b, gap);
                let fz = Factorizer::with_table(Scheme::KPartite(partition), sys, table, from_gap)?;
                let chase = fz.chase(200, 300, &mut rng);
                if !chase.all_hold {
                    failures.push(format!("{}:KPF-chase {:.4} > {from_gap:.4}", s.name, chase.chased_max));
                }
                // Chain rule along a random nested sequence.
                let mut order = table.free_vertices().to_vec();
                for i in (1..order.len()).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                let nested: Vec<Vec<usize>> = (1..=order.len()).map(|i| order[..i].to_vec()).collect();
                let f = FunctionOnStates::random(table.len(), &mut rng);
                let (lhs, rhs) = chain_rule_sides(table, f.values(), &order, &nested)?;
                Ok((failures, (lhs - rhs).abs(), chase.chased_max / from_gap))
            })
            .collect::<Result<Vec<_>>>()?;
        let failures: Vec<String> = results.iter().flat_map(|r| r.0.clone()).collect();
        let residual = results.iter().map(|r| r.1).fold(0.0, f64::max);
        let chase = results.iter().map(|r| r.2).fold(0.0, f64::max);
        Ok(Check::new(name, FACTORIZATION, residual, 1e-10, failures.is_empty() && residual < 1e-10)
            .with_detail(format!(
                "chain-rule residual {residual:.2e}; largest chased KPF ratio / gap constant {chase:.4}; failures: {failures:?}"
            )))
    })
}

fn tail_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[7];
    timed(name, TAIL, || {
        let t0 = Instant::now();
        let mut graphs = vec![("path64".to_string(), path_graph(64))];
        for s in 3..=8 {
            graphs.push((format!("grid{s}x{s}"), grid_graph(&[s, s])?));
        }
        graphs.push(("gnp(64,3/64)".into(), random_gnp(64, 3.0 / 64.0, opts.seed)?));
        let mut bad = Vec::new();
        let mut worst_z = f64::NEG_INFINITY;
        let mut runs = 0;
        for (i, (gname, g)) in graphs.iter().enumerate() {
            let v = (0..g.n()).max_by_key(|&v| (g.degree(v), std::cmp::Reverse(v))).unwrap_or(0);
            for (j, theta) in [1.0 / 16.0, 1.0 / 8.0].into_iter().enumerate() {
                let h = component_tail(g, theta, v, 100_000, opts.seed ^ ((i * 2 + j) as u64) << 32)?;
                for k in 1..h.counts.len() {
                    let sigma = h.sigma(k);
                    if sigma > 0.0 {
                        worst_z = worst_z.max((h.frequency(k) - h.bound[k]) / sigma);
                    }
                }
                if !h.violations(4.0).is_empty() {
                    bad.push(format!("{gname} theta={theta} k={:?}", h.violations(4.0)));
                }
                runs += 1;
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        Ok(Check::new(name, TAIL, worst_z, 4.0, bad.is_empty() && secs < 120.0).with_detail(format!(
            "largest (freq - bound)/sigma over {runs} runs of 1e5 trials; violations: {bad:?}"
        )))
    })
}

fn censoring_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[8];
    let mut systems = Vec::new();
    for (gname, g) in [("path3", path_graph(3)), ("grid2x2", grid_graph(&[2, 2]).expect("grid"))] {
        let g = Arc::new(g);
        for beta in [0.3, 2f64.ln()] {
            systems.push(TestSystem {
                name: format!("{gname}/ising(beta={beta:.3})"),
                sys: ising(g.clone(), beta).expect("valid ising"),
            });
        }
    }
    let tabs = match tables(&systems, opts.cap_states) {
        Ok(t) => t,
        Err(why) => return Check::skipped(name, CENSORING, why),
    };
    timed(name, CENSORING, || {
        let mut failures = Vec::new();
        let mut pairs = 0;
        for (s, table) in systems.iter().zip(&tabs) {
            let sys = &s.sys;
            let order = SpinOrder::natural(sys.n(), sys.q());
            let id = TransitionMatrix::identity(table)?;
            for v in sys.free_vertices() {
                let pv = TransitionMatrix::from_table(table, site_matrix(sys, table, v))?;
                pairs += 1;
                if !censoring_order_check(&pv, &id, &order)? {
                    failures.push(format!("{}: P_{v} vs I", s.name));
                }
            }
            let scan = induced_matrix_on(&Kernel::scan(sys.n()), sys, table)?;
            let block = induced_matrix_on(&Kernel::independent_sets(sys.graph())?, sys, table)?;
            pairs += 1;
            if !censoring_order_check(&scan, &block, &order)? {
                failures.push(format!("{}: scan vs block", s.name));
            }
        }
        Ok(Check::new(name, CENSORING, failures.len() as f64, 0.0, failures.is_empty())
            .with_detail(format!("{pairs} comparisons; failures: {failures:?}")))
    })
}

fn monotone_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[9];
    timed(name, MONOTONE, || {
        // Ordering over 10^4 scan steps on a 4x4 grid, restarting from the
        // extremes whenever the pair coalesces.
        let shape_graph = Arc::new(grid_graph(&[4, 4])?);
        let mut restarts = 0;
        for (i, beta) in [0.2, 0.5, 1.0].into_iter().enumerate() {
            let sys = ising(shape_graph.clone(), beta)?;
            let order = SpinOrder::natural(16, 2);
            let coupler = MonotoneCoupler::new(&sys, order.clone())?;
            let kernel = Kernel::scan(16);
            let mut rng = replica_rng(opts.seed, 400 + i as u64);
            let mut pair = CoupledTrajectory::extremes(&sys, &order)?;
            for _ in 0..10_000 {
                monotone_coupled_step(&coupler, &mut pair, &kernel, &mut rng)?;
                if !pair.ordered {
                    return Ok(Check::new(name, MONOTONE, 0.0, 0.9, false)
                        .with_detail(format!("order broken at beta={beta}")));
                }
                if pair.coalesced() {
                    pair = CoupledTrajectory::extremes(&sys, &order)?;
                    restarts += 1;
                }
            }
        }
        // Growth of the even-odd coupling time on paths.
        let sizes = [8usize, 16, 32, 64, 128];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let g = path_graph(n);
            let sys = ising(Arc::new(g.clone()), 0.2)?;
            let coupler = MonotoneCoupler::new(&sys, SpinOrder::natural(n, 2))?;
            let ct = coupling_time(&coupler, &Kernel::even_odd(&g)?, 4000, 0.75, 100_000, opts.seed ^ (500 + i as u64))?;
            let m = ct
                .grouped_median()
                .ok_or(Error::NotConverged(ct.budget as usize))?;
            xs.push((n as f64).ln());
            ys.push(m);
        }
        let fit = linear_fit(&xs, &ys)?;
        let pass = fit.slope > 0.0 && fit.correlation >= 0.9;
        Ok(Check::new(name, MONOTONE, fit.correlation, 0.9, pass).with_detail(format!(
            "order kept over 3x10^4 steps ({restarts} restarts); medians {ys:.3?} fit a={:.3} b={:.3}",
            fit.intercept, fit.slope
        )))
    })
}

fn radius_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[10];
    timed(name, RADIUS, || {
        let g = grid_graph(&[8, 8])?;
        let (even, odd) = g.bipartition().ok_or_else(|| Error::NotBipartition("grid".into()))?;
        let sys = ising(Arc::new(g), 0.3)?;
        let r = disagreement_radius(&sys, &even, &odd, 5, 10_000, 10, opts.seed ^ 600)?;
        let excess = r
            .max_radius
            .iter()
            .enumerate()
            .map(|(t, &x)| x as f64 - 3.0 * (t + 1) as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Check::new(name, RADIUS, r.max_radius.last().copied().unwrap_or(0) as f64, 15.0, r.within_bound)
            .with_detail(format!("max radius by step {:?}; largest radius - 3t = {excess}", r.max_radius)))
    })
}

fn contraction_check(opts: &AcceptanceOptions) -> Check {
    let name = CRITERIA[11];
    timed(name, CONTRACTION, || {
        let shape = GridShape::new(&[8, 8])?;
        let sys = ising(Arc::new(shape.graph()), 0.2)?;
        let e = rectangle_block_contraction(&sys, &shape, 2, None, 100_000, 50, opts.seed ^ 700)?;
        Ok(Check::new(name, CONTRACTION, e.upper95, 1.0, e.upper95 < 1.0).with_detail(format!(
            "mean {:.4} +- {:.4}; cases inside/boundary/far {}/{}/{}; boundary mean {:.4}",
            e.mean, e.std_err, e.inside, e.boundary, e.far, e.boundary_mean
        )))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn testbed_shape() {
        let t = testbed();
        assert_eq!(t.len(), 20);
        assert!(t.iter().all(|s| s.sys.state_space_size() <= 81));
        assert_eq!(extended_testbed().len(), 25);
    }

    #[test]
    fn low_cap_skips() {
        let opts = AcceptanceOptions {
            seed: 1,
            cap_states: 8,
        };
        let c = stationarity_check(&opts);
        assert!(!c.passed());
        assert!(c.to_string().contains("skipped: cap"));
    }

    #[test]
    fn random_blocks_cover() {
        let mut rng = replica_rng(3, 0);
        for _ in 0..50 {
            let b = random_blocks(5, &mut rng).unwrap();
            assert!(b.alpha_min() > 0.0);
        }
    }
}
