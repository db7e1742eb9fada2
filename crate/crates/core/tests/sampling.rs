use std::sync::Arc;

use spinmix::dynamics::{run_replicas, ChainState, Kernel};
use spinmix::graphs::{cycle_graph, path_graph};
use spinmix::spin::{exact_gibbs, hardcore, ising, potts, SpinSystem};

/// Pearson statistic of the replica end states against the exact law, with
/// the degrees of freedom.
fn chi_square(sys: &SpinSystem, kernel: &Kernel, steps: u64, replicas: usize, seed: u64) -> (f64, usize) {
    let t = exact_gibbs(sys).unwrap();
    let init = ChainState::uniform_fill(sys, 0).unwrap();
    let finals = run_replicas(sys, kernel, &init, steps, replicas, seed).unwrap();
    let mut counts = vec![0usize; t.len()];
    for s in &finals {
        counts[t.index_of(&s.config).unwrap()] += 1;
    }
    let stat = counts
        .iter()
        .zip(t.probs())
        .map(|(&c, &p)| {
            let e = p * replicas as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    (stat, t.len() - 1)
}

/// Loose upper quantile: mean plus five standard deviations.
fn accept(stat: f64, df: usize) {
    let limit = df as f64 + 5.0 * (2.0 * df as f64).sqrt();
    assert!(stat < limit, "chi2 {stat:.1} with {df} dof exceeds {limit:.1}");
}

#[test]
fn glauber_matches_ising() {
    let sys = ising(Arc::new(cycle_graph(4).unwrap()), 0.4).unwrap();
    let (s, df) = chi_square(&sys, &Kernel::Glauber, 200, 20_000, 11);
    accept(s, df);
}

#[test]
fn scan_matches_hardcore() {
    let sys = hardcore(Arc::new(path_graph(5)), 1.5).unwrap();
    let (s, df) = chi_square(&sys, &Kernel::scan(5), 30, 20_000, 12);
    accept(s, df);
}

#[test]
fn even_odd_matches_potts() {
    let sys = potts(Arc::new(path_graph(4)), 3, 0.6).unwrap();
    let k = Kernel::even_odd(sys.graph()).unwrap();
    let (s, df) = chi_square(&sys, &k, 40, 30_000, 13);
    accept(s, df);
}

#[test]
fn swendsen_wang_matches_potts() {
    let sys = potts(Arc::new(cycle_graph(4).unwrap()), 3, 0.8).unwrap();
    let (s, df) = chi_square(&sys, &Kernel::SwendsenWang, 40, 30_000, 14);
    accept(s, df);
}

#[test]
fn block_dynamics_matches_ising() {
    let sys = ising(Arc::new(path_graph(5)), -0.5).unwrap();
    let k = Kernel::independent_sets(sys.graph()).unwrap();
    let (s, df) = chi_square(&sys, &k, 60, 20_000, 15);
    accept(s, df);
}
