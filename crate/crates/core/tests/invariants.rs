use std::sync::Arc;

use proptest::prelude::*;
use spinmix::couplings::{monotone_coupled_step, CoupledTrajectory, MonotoneCoupler};
use spinmix::dynamics::{replica_rng, ChainState, Kernel};
use spinmix::exact::{induced_matrix, reversibility_residual, spectral_gap, stationarity_residual};
use spinmix::graphs::{random_gnp, Graph};
use spinmix::spectral::{eta, influence_matrix};
use spinmix::spin::{exact_gibbs, hardcore, ising, potts, Pinning, SpinOrder, SpinSystem};

fn system(kind: u8, g: Arc<Graph>, param: f64) -> SpinSystem {
    match kind % 3 {
        0 => ising(g, param).unwrap(),
        1 => potts(g, 3, param.abs()).unwrap(),
        _ => hardcore(g, param.abs() + 0.1).unwrap(),
    }
}

fn small_system() -> impl Strategy<Value = SpinSystem> {
    (2usize..=5, 0.2f64..0.9, any::<u64>(), 0u8..3, -1.0f64..1.5)
        .prop_map(|(n, p, seed, kind, param)| {
            let g = Arc::new(random_gnp(n, p, seed).unwrap());
            system(kind, g, param)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gibbs_weights_form_a_distribution(sys in small_system()) {
        let t = exact_gibbs(&sys).unwrap();
        let total: f64 = t.probs().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(t.probs().iter().all(|&p| p > 0.0));
        for (x, &p) in t.states().zip(t.probs()) {
            let w = sys.log_weight(x).unwrap();
            prop_assert!((w - t.log_z() - p.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn kernels_keep_gibbs_stationary(sys in small_system()) {
        let mut kernels = vec![Kernel::Glauber, Kernel::scan(sys.n()), Kernel::independent_sets(sys.graph()).unwrap()];
        if let Ok(k) = Kernel::even_odd(sys.graph()) {
            kernels.push(k);
        }
        for k in &kernels {
            let p = induced_matrix(k, &sys).unwrap();
            prop_assert!(stationarity_residual(&p) < 1e-10, "{}", k.name());
            prop_assert!(reversibility_residual(&p) < 1e-10, "{}", k.name());
            let gap = spectral_gap(&p).unwrap();
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&gap));
        }
    }

    #[test]
    fn influence_rows_sum_to_zero_per_block(sys in small_system()) {
        let psi = influence_matrix(&sys, &Pinning::new()).unwrap();
        prop_assert!(psi.block_row_sum_residual() < 1e-10);
        let e = eta(&sys).unwrap();
        prop_assert!(e.eta >= psi.lambda_max() - 1e-9);
    }

    #[test]
    fn coalesced_pair_stays_coalesced(n in 2usize..7, beta in 0.0f64..1.5, seed: u64) {
        let sys = ising(Arc::new(spinmix::graphs::path_graph(n)), beta).unwrap();
        let order = SpinOrder::natural(n, 2);
        let coupler = MonotoneCoupler::new(&sys, order.clone()).unwrap();
        let x = ChainState::uniform_fill(&sys, (seed % 2) as u8).unwrap();
        let mut pair = CoupledTrajectory::new(x.clone(), x, &order);
        let mut rng = replica_rng(seed, 0);
        for _ in 0..20 {
            monotone_coupled_step(&coupler, &mut pair, &Kernel::Glauber, &mut rng).unwrap();
            prop_assert!(pair.coalesced());
        }
    }

    #[test]
    fn ferromagnetic_extremes_stay_ordered(n in 2usize..7, beta in 0.0f64..1.5, seed: u64, scan: bool) {
        let sys = ising(Arc::new(spinmix::graphs::cycle_graph(n.max(3)).unwrap()), beta).unwrap();
        let order = SpinOrder::natural(sys.n(), 2);
        let coupler = MonotoneCoupler::new(&sys, order.clone()).unwrap();
        let mut pair = CoupledTrajectory::extremes(&sys, &order).unwrap();
        let kernel = if scan { Kernel::scan(sys.n()) } else { Kernel::Glauber };
        let mut rng = replica_rng(seed, 1);
        for _ in 0..50 {
            prop_assert!(monotone_coupled_step(&coupler, &mut pair, &kernel, &mut rng).is_ok());
            prop_assert!(order.dominates(&pair.upper.config, &pair.lower.config));
        }
    }

    #[test]
    fn chain_moves_stay_in_support(sys in small_system(), seed: u64) {
        let init = (0..sys.q() as u8).find_map(|s| ChainState::uniform_fill(&sys, s).ok()).unwrap();
        let mut state = init;
        let mut rng = replica_rng(seed, 2);
        for _ in 0..30 {
            Kernel::Glauber.step(&sys, &mut state, &mut rng).unwrap();
            prop_assert!(sys.log_weight(&state.config).is_some());
        }
    }
}
