use rand::Rng;
use rand_chacha::ChaCha8Rng;

use slicebf::baselines::ks_two_sample;
use slicebf::bf::Hyperparams;
use slicebf::permutation::{replicate_rng, PermutationPlan};
use slicebf::selection::{max_bf_null, screen, select, Conditioning, CovariateSet, SelectionConfig};
use slicebf::simulation::normal;

fn coin(rng: &mut ChaCha8Rng) -> u32 {
    rng.random_bool(0.5) as u32
}

fn noise_markers(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Vec<Vec<u32>> {
    (0..m).map(|_| (0..n).map(|_| coin(rng)).collect()).collect()
}

fn config(seed: u64) -> SelectionConfig {
    SelectionConfig { permutations: 199, seed, ..SelectionConfig::default() }
}

#[test]
fn null_covariates_rarely_pass_screening() {
    let (n, m, runs) = (400, 10, 100);
    let empty = (0..runs)
        .filter(|&r| {
            let mut rng = replicate_rng(11, r);
            let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let set = CovariateSet::from_codes(&y, &noise_markers(&mut rng, m, n)).unwrap();
            screen(&set, &config(r)).unwrap().screened.is_empty()
        })
        .count();
    assert!(empty >= 95, "screened set empty in {empty} of {runs} null runs");
}

#[test]
fn mean_shift_covariate_passes_screening() {
    let (n, runs) = (400, 100);
    let kept = (0..runs)
        .filter(|&r| {
            let mut rng = replicate_rng(12, r);
            let x: Vec<u32> = (0..n).map(|_| coin(&mut rng)).collect();
            let y: Vec<f64> = x.iter().map(|&v| normal(&mut rng) + if v == 1 { 1.0 } else { -1.0 }).collect();
            let mut cov = noise_markers(&mut rng, 4, n);
            cov.insert(0, x);
            let set = CovariateSet::from_codes(&y, &cov).unwrap();
            screen(&set, &config(r)).unwrap().screened.contains(&0)
        })
        .count();
    assert!(kept >= 99, "effect covariate screened in {kept} of {runs} runs");
}

#[test]
fn additive_pair_selected_in_two_steps() {
    let (n, runs) = (400, 50);
    let hits = (0..runs)
        .filter(|&r| {
            let mut rng = replicate_rng(13, r);
            let z: Vec<u32> = (0..n).map(|_| coin(&mut rng)).collect();
            let x: Vec<u32> = (0..n).map(|_| coin(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|i| (z[i] + x[i]) as f64 + normal(&mut rng)).collect();
            let set = CovariateSet::from_codes(&y, &[z, x]).unwrap();
            let trace = select(&set, &config(r)).unwrap();
            let first_two: Vec<usize> = trace.final_set.iter().take(2).copied().collect();
            first_two.len() == 2 && first_two.contains(&0) && first_two.contains(&1)
        })
        .count();
    assert!(hits >= 45, "both causal covariates selected within two steps in {hits} of {runs} runs");
}

#[test]
fn interaction_pair_selected_before_noise() {
    let (n, runs) = (400, 50);
    let hits = (0..runs)
        .filter(|&r| {
            let mut rng = replicate_rng(14, r);
            let z: Vec<u32> = (0..n).map(|_| coin(&mut rng)).collect();
            let x: Vec<u32> = (0..n).map(|_| coin(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|i| 1.5 * (z[i] * x[i]) as f64 + normal(&mut rng)).collect();
            let mut cov = noise_markers(&mut rng, 8, n);
            // causal markers sit in the middle so index order cannot help
            cov.insert(3, x);
            cov.insert(6, z);
            let set = CovariateSet::from_codes(&y, &cov).unwrap();
            let trace = select(&set, &config(r)).unwrap();
            let f = &trace.final_set;
            f.len() >= 2 && f[..2].contains(&3) && f[..2].contains(&6)
        })
        .count();
    assert!(hits >= 40, "interaction pair selected first in {hits} of {runs} runs");
}

#[test]
fn max_bf_null_is_exchangeable_across_seeds() {
    let n = 300;
    let mut rng = replicate_rng(15, 0);
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let set = CovariateSet::from_codes(&y, &noise_markers(&mut rng, 4, n)).unwrap();
    let z = Conditioning { codes: (0..n).map(|i| (i % 2) as u32).collect(), levels: 2 };
    let h = Hyperparams::default();
    let draw = |seed| max_bf_null(&set, &[0, 1, 2, 3], &z, &h, &PermutationPlan::new(1000, seed).unwrap()).unwrap();
    let (a, b) = (draw(1), draw(2));
    assert_ne!(a, b);
    let ks = ks_two_sample(&a, &b).unwrap();
    assert!(ks.p_value > 0.01, "KS p {} between seeds", ks.p_value);
}
