use dyadica::alpert::AlpertSystem;
use dyadica::constants::Pair;
use dyadica::corona::cz_stopping;
use dyadica::forms::{is_good, random_wavelet, FormParams, Forms};
use dyadica::grid::{deeply_embedded, CubeId, GridSpec};
use dyadica::kernel::KernelSpec;
use dyadica::measure::{generate, MeasureKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cascade(n: usize, depth: u32, seed: u64) -> dyadica::measure::AtomicMeasure {
    generate(&MeasureKind::Cascade { n, depth, beta: 0.3, seed }).unwrap()
}

#[test]
fn levels_tile_the_domain() {
    for n in 1..=3 {
        let g = GridSpec::new(n, 3).unwrap();
        for level in 0..=3 {
            let cubes = g.cubes_at(level);
            let vol: f64 = cubes.iter().map(|c| c.volume()).sum();
            assert!((vol - 1.0).abs() < 1e-15);
            for (a, b) in cubes.iter().zip(cubes.iter().skip(1)) {
                assert!(a.disjoint(b));
            }
        }
    }
}

#[test]
fn deep_embedding_implies_containment() {
    let g = GridSpec::new(1, 6).unwrap();
    let all = g.all_cubes(6);
    for i in &all {
        for j in &all {
            for rho in 0..3 {
                for eps in [0.25, 0.5, 0.75] {
                    if deeply_embedded(j, i, rho, eps) {
                        assert!(i.contains(j) && j.level() >= i.level() + rho, "{j} in {i}");
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parent_of_child_is_self(level in 0u32..6, c0 in 0u32..64, c1 in 0u32..64) {
        let m = 1u32 << level;
        let i = CubeId::new(level, &[c0 % m, c1 % m]).unwrap();
        for k in i.children_unchecked() {
            prop_assert_eq!(k.parent().unwrap(), i);
        }
    }

    #[test]
    fn cube_mass_is_additive(seed in 0u64..1000, level in 0u32..5) {
        let mu = cascade(2, 5, seed);
        let g = GridSpec::new(2, 5).unwrap();
        for q in g.cubes_at(level) {
            let s: f64 = q.children_unchecked().iter().map(|k| mu.cube_mass(k)).sum();
            prop_assert!((s - mu.cube_mass(&q)).abs() <= 1e-14 * mu.cube_mass(&q).max(1e-300));
        }
    }

    #[test]
    fn differences_are_orthogonal(seed in 0u64..1000, kappa in 1u32..=3) {
        let mu = cascade(1, 6, seed);
        let sys = AlpertSystem::new(&mu, kappa, 6, CubeId::root(1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..mu.len()).map(|k| ((k * 7 + seed as usize) % 13) as f64).collect();
        let g = random_wavelet(&sys, &mut rng, |_| true);
        let cubes: Vec<CubeId> = sys.cubes().iter().filter(|c| c.level() < 6).copied().collect();
        let df: Vec<_> = cubes.iter().map(|c| sys.difference(c, &f)).collect();
        let dg: Vec<_> = cubes.iter().map(|c| sys.difference(c, &g)).collect();
        for (a, x) in df.iter().enumerate() {
            for (b, y) in dg.iter().enumerate() {
                if a == b {
                    continue;
                }
                let ip: f64 = x.range().map(|k| mu.mass(k) * x.get(k) * y.get(k)).sum();
                prop_assert!(ip.abs() < 1e-9 * (1.0 + sys.l2_norm(&f) * sys.l2_norm(&g)));
            }
        }
    }
}

#[test]
fn ledger_is_linear_in_f() {
    let depth = 4;
    let s = cascade(1, depth, 3);
    let w = cascade(1, depth, 4);
    let pair = Pair::new(KernelSpec::hilbert(1.0 / 64.0, 1.0), s, w, GridSpec::new(1, depth).unwrap());
    let root = CubeId::root(1);
    let sa = AlpertSystem::new(&pair.sigma, 2, depth, root).unwrap();
    let oa = AlpertSystem::new(&pair.omega, 2, depth, root).unwrap();
    let params = FormParams { rho: 3, eps: 0.9, tau: 2, gamma: 2.0, kappa: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let good = |c: &CubeId| is_good(c, &root, 3, 0.9);
    let f1 = random_wavelet(&sa, &mut rng, good);
    let f2 = random_wavelet(&sa, &mut rng, good);
    let g = random_wavelet(&oa, &mut rng, good);
    let mix: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    // One stopping tree for all three so the canonical parts stay comparable.
    let d = cz_stopping(&pair.sigma, &f1, 2.0, root, depth).unwrap();
    let l1 = Forms::new(&pair, &sa, &oa, params, &f1, &g).ledger(&d).unwrap();
    let l2 = Forms::new(&pair, &sa, &oa, params, &f2, &g).ledger(&d).unwrap();
    let lm = Forms::new(&pair, &sa, &oa, params, &mix, &g).ledger(&d).unwrap();
    for (k, v) in &lm.parts {
        let want = 2.0 * l1.part(k) - 0.5 * l2.part(k);
        assert!((v - want).abs() <= 1e-10 * (1.0 + lm.scale), "{k}: {v} vs {want}");
    }
}
