//! Distributional properties of the Monte Carlo test statistic.

mod common;

use common::{mean, spearman, two_sample_ks};
use kscore::inference::{test_statistic, test_statistic_with, PsiSource};
use kscore::posterior::PriorConfig;
use kscore::rng::{child_seed, stream_rng};
use kscore::score_model::{
    eigenvalues, pair_count, simulate_partitioned_scores, ModelParams,
};
use nalgebra::DVector;

#[test]
fn estimator_identity_against_longer_run() {
    // With fixed parameters, h estimates an exact tail probability; an
    // independent run with 10x the draws must agree within 3 combined
    // standard errors.
    let params = ModelParams::new(1.0, 0.5, 0.2).unwrap();
    let mut rng = stream_rng(301, 0);
    let (s_m, s_n) = simulate_partitioned_scores(&params, 5, 3, &mut rng);
    let short = test_statistic_with(&s_m, &s_n, 5, 3, PsiSource::Fixed(params), 2000, 11).unwrap();
    let long = test_statistic_with(&s_m, &s_n, 5, 3, PsiSource::Fixed(params), 20_000, 12).unwrap();
    let combined = (short.mc_std_err * short.mc_std_err + long.mc_std_err * long.mc_std_err).sqrt();
    assert!(
        (short.h - long.h).abs() <= 3.0 * combined.max(1e-4),
        "h {} vs {} (combined se {})",
        short.h,
        long.h,
        combined
    );
}

#[test]
fn anchoring_relabeling_controls_leaves_h_distribution_unchanged() {
    // Relabeling control objects induces a consistent permutation of both
    // score blocks. h is not bitwise invariant (the Monte Carlo draws flow
    // through permuted factors), but its distribution over seeds must be
    // unchanged: 2-sample KS at level 0.01 over 500 seed-matched runs.
    let params = ModelParams::new(1.0, 0.4, 0.2).unwrap();
    let n_controls = 5usize;
    let m_traces = 2usize;
    let runs = 500;
    let k_inner = 400;

    // New label of control k (local indices).
    let relabel = [2usize, 0, 4, 1, 3];
    let total = n_controls + m_traces;
    let map = |obj: usize| -> usize {
        if obj < m_traces {
            obj
        } else {
            m_traces + relabel[obj - m_traces]
        }
    };

    // Global pair enumeration (traces first): positions within each block.
    let mut mixed_pairs = Vec::new();
    let mut control_pairs = Vec::new();
    for i in 0..total {
        for j in (i + 1)..total {
            if i < m_traces {
                mixed_pairs.push((i, j));
            } else {
                control_pairs.push((i, j));
            }
        }
    }
    let position = |pairs: &[(usize, usize)], a: usize, b: usize| -> usize {
        let key = (a.min(b), a.max(b));
        pairs.iter().position(|&p| p == key).unwrap()
    };

    let mut h_original = Vec::with_capacity(runs);
    let mut h_relabeled = Vec::with_capacity(runs);
    for run in 0..runs as u64 {
        let mut rng = stream_rng(302, run);
        let (s_m, s_n) = simulate_partitioned_scores(&params, n_controls, m_traces, &mut rng);
        let mut s_m_perm = DVector::zeros(s_m.len());
        for (pos, &(i, j)) in mixed_pairs.iter().enumerate() {
            s_m_perm[position(&mixed_pairs, map(i), map(j))] = s_m[pos];
        }
        let mut s_n_perm = DVector::zeros(s_n.len());
        for (pos, &(i, j)) in control_pairs.iter().enumerate() {
            s_n_perm[position(&control_pairs, map(i), map(j))] = s_n[pos];
        }
        let prior = PriorConfig::default_for(&s_n, n_controls).unwrap();
        let seed_a = child_seed(9000, run);
        let seed_b = child_seed(9001, run);
        h_original.push(
            test_statistic(&s_m, &s_n, n_controls, m_traces, &prior, k_inner, seed_a)
                .unwrap()
                .h,
        );
        h_relabeled.push(
            test_statistic(&s_m_perm, &s_n_perm, n_controls, m_traces, &prior, k_inner, seed_b)
                .unwrap()
                .h,
        );
    }
    let dist = two_sample_ks(&h_original, &h_relabeled);
    // Critical value at level 0.01 for two samples of 500.
    let critical = 1.628 * ((runs + runs) as f64 / (runs * runs) as f64).sqrt();
    assert!(dist < critical, "KS {dist} >= {critical}");
}

#[test]
fn left_tail_offset_drives_h_down() {
    // Shifting every trace score upward (away from the within-source mean)
    // must push h down on average: Spearman correlation of (offset, mean h)
    // at most -0.9.
    let params = ModelParams::new(1.0, 0.4, 0.2).unwrap();
    let lambda1 = eigenvalues(&params, 5).lambda1;
    let offsets: Vec<f64> = vec![0.0, 0.4, 0.8, 1.2, 1.6, 2.0];
    let seeds = 100u64;
    let mut mean_h = Vec::with_capacity(offsets.len());
    for (oi, &offset) in offsets.iter().enumerate() {
        let mut hs = Vec::with_capacity(seeds as usize);
        for run in 0..seeds {
            let mut rng = stream_rng(303, run);
            let (s_m, s_n) = simulate_partitioned_scores(&params, 5, 3, &mut rng);
            let shifted = &s_m + DVector::from_element(s_m.len(), offset * lambda1.sqrt());
            let prior = PriorConfig::default_for(&s_n, 5).unwrap();
            let h = test_statistic(
                &shifted,
                &s_n,
                5,
                3,
                &prior,
                400,
                child_seed(304 + oi as u64, run),
            )
            .unwrap()
            .h;
            hs.push(h);
        }
        mean_h.push(mean(&hs));
    }
    let rho = spearman(&offsets, &mean_h);
    assert!(rho <= -0.9, "Spearman {rho}, mean h per offset {mean_h:?}");
}

#[test]
fn pit_under_known_parameters_is_near_uniform_small() {
    // Smaller-scale version of the probability-integral-transform check
    // (the acceptance suite runs the full-size one): with known parameters
    // and same-source data, h is approximately Uniform(0,1).
    let params = ModelParams::new(1.0, 0.4, 0.2).unwrap();
    let replicates = 300;
    let hs: Vec<f64> = (0..replicates as u64)
        .map(|rep| {
            let mut rng = stream_rng(305, rep);
            let (s_m, s_n) = simulate_partitioned_scores(&params, 5, 3, &mut rng);
            test_statistic_with(
                &s_m,
                &s_n,
                5,
                3,
                PsiSource::Fixed(params),
                500,
                child_seed(306, rep),
            )
            .unwrap()
            .h
        })
        .collect();
    let dist = common::ks_distance(&hs, |x| x.clamp(0.0, 1.0));
    assert!(dist < 0.12, "KS vs uniform {dist}");
}
