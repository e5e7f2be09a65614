use nwfpp::nwgraph::{candidate_pairs, generate, EdgeKind, GraphConfig};
use nwfpp::stats;
use rayon::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};

#[test]
fn structural_invariants() {
    for n in [3, 4, 5, 17, 1000] {
        for seed in 0..20 {
            let g = generate(&GraphConfig::new(n, 3.0, seed)).unwrap();
            let cycle: Vec<_> = g.edges().iter().filter(|e| e.kind == EdgeKind::Cycle).collect();
            assert_eq!(cycle.len(), n);
            for (i, e) in cycle.iter().enumerate() {
                assert_eq!((e.u, e.v), (i, (i + 1) % n));
            }
            let mut seen = std::collections::HashSet::new();
            for e in g.edges() {
                assert!(e.weight > 0.0);
                if e.kind == EdgeKind::Shortcut {
                    let d = (e.u + n - e.v) % n;
                    assert!(e.u != e.v && d != 1 && d != n - 1, "n {n}: {e:?}");
                    assert!(seen.insert((e.u.min(e.v), e.u.max(e.v))));
                }
            }
            if n == 3 {
                assert_eq!(g.shortcut_count(), 0);
            }
        }
    }
}

#[test]
fn generation_is_reproducible() {
    let a = generate(&GraphConfig::new(5000, 2.0, 77)).unwrap();
    let b = generate(&GraphConfig::new(5000, 2.0, 77)).unwrap();
    assert_eq!(a.edges(), b.edges());
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn shortcut_mean_count() {
    let (n, rho) = (10_000, 2.0);
    let counts: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|s| generate(&GraphConfig::new(n, rho, s)).unwrap().shortcut_count() as f64)
        .collect();
    let want = rho * (n as f64 - 3.0) / 2.0;
    let se = stats::std_error(&counts);
    assert!((stats::mean(&counts) - want).abs() < 3.0 * se, "{} vs {want}", stats::mean(&counts));
}

#[test]
fn shortcut_count_is_binomial() {
    let (n, rho, reps) = (100usize, 2.0, 10_000u64);
    let trials = candidate_pairs(n);
    let bin = Binomial::new(rho / n as f64, trials).unwrap();
    let counts: Vec<u64> = (0..reps)
        .into_par_iter()
        .map(|s| generate(&GraphConfig::new(n, rho, s)).unwrap().shortcut_count() as u64)
        .collect();
    // Bins [lo, hi] with expected count at least 20, tails merged.
    let mut edges = Vec::new();
    let mut lo = 0u64;
    let mut acc = 0.0;
    for k in 0..=trials {
        let p_upto = bin.cdf(k);
        if (p_upto - acc) * reps as f64 >= 20.0 && (1.0 - p_upto) * reps as f64 >= 20.0 {
            edges.push((lo, k, p_upto - acc));
            acc = p_upto;
            lo = k + 1;
        }
    }
    edges.push((lo, trials, 1.0 - acc));
    let observed: Vec<u64> = edges
        .iter()
        .map(|&(a, b, _)| counts.iter().filter(|&&c| c >= a && c <= b).count() as u64)
        .collect();
    let probs: Vec<f64> = edges.iter().map(|e| e.2).collect();
    let r = stats::chi_square_gof(&observed, &probs).unwrap();
    assert!(r.p_value > 0.01, "p {} over {} bins", r.p_value, probs.len());
}

#[test]
fn weights_are_exponential() {
    let mut w = Vec::new();
    let mut seed = 0;
    while w.len() < 100_000 {
        let g = generate(&GraphConfig::new(20_000, 2.0, seed)).unwrap();
        w.extend(g.edges().iter().map(|e| e.weight));
        seed += 1;
    }
    w.truncate(100_000);
    let ks = stats::ks_one_sample(&w, |x| 1.0 - (-x).exp()).unwrap();
    assert!(ks.statistic < 1.36 / (1e5f64).sqrt(), "{}", ks.statistic);
}
