use proptest::prelude::*;
use ttadc::data::{augment, class_counts, generate, resample, AugmentationSpec, Dataset, GeneratorSpec};
use ttadc::ordinal::{dominating_distribution, DominatingSpec, LabelDistribution};
use ttadc::rng::seeded;

fn spec(dist: LabelDistribution, n: usize, seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        classes: dist.classes(),
        dim: 8,
        separation: 1.0,
        noise: 1.25,
        offset: 2.0,
        distribution: dist,
        n,
        seed,
    }
}

fn class_means(data: &Dataset) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; data.dim()]; data.classes()];
    let counts = data.class_counts();
    for i in 0..data.len() {
        let c = data.labels()[i] - 1;
        for (s, x) in sums[c].iter_mut().zip(data.row(i)) {
            *s += x;
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
        .collect()
}

#[test]
fn class_means_converge_to_specified_means() {
    let s = spec(LabelDistribution::uniform(5).unwrap(), 10_000, 3);
    let data = generate(&s).unwrap();
    let se = s.noise / (2000f64).sqrt();
    for (c, mean) in class_means(&data).iter().enumerate() {
        for (got, want) in mean.iter().zip(s.class_mean(c + 1)) {
            assert!((got - want).abs() < 5.0 * se, "class {}: {got} vs {want}", c + 1);
        }
    }
}

#[test]
fn class_conditionals_do_not_depend_on_the_label_distribution() {
    let skewed = LabelDistribution::new(vec![0.4, 0.25, 0.15, 0.12, 0.08]).unwrap();
    let dominated = dominating_distribution(&DominatingSpec::new(5, 2.0, 5).unwrap());
    let a = generate(&spec(skewed, 10_000, 4)).unwrap();
    let b = generate(&spec(dominated, 10_000, 5)).unwrap();
    let (ca, cb) = (a.class_counts(), b.class_counts());
    for (c, (ma, mb)) in class_means(&a).iter().zip(class_means(&b)).enumerate() {
        let se = 1.25 * (1.0 / ca[c] as f64 + 1.0 / cb[c] as f64).sqrt();
        for (x, y) in ma.iter().zip(&mb) {
            assert!((x - y).abs() < 5.0 * se, "class {}: {x} vs {y}", c + 1);
        }
    }
}

#[test]
fn resampling_keeps_class_conditionals() {
    let pool = generate(&spec(LabelDistribution::uniform(5).unwrap(), 10_000, 6)).unwrap();
    let target = dominating_distribution(&DominatingSpec::new(2, 4.0, 5).unwrap());
    let shifted = resample(&pool, &target, 4000, 7).unwrap();
    let (cp, cs) = (pool.class_counts(), shifted.class_counts());
    for (c, (mp, ms)) in class_means(&pool).iter().zip(class_means(&shifted)).enumerate() {
        let se = 1.25 * (1.0 / cp[c] as f64 + 1.0 / cs[c] as f64).sqrt();
        for (x, y) in mp.iter().zip(&ms) {
            assert!((x - y).abs() < 5.0 * se);
        }
    }
}

#[test]
fn gaussian_augmentation_moments() {
    let aug = AugmentationSpec {
        noise: 0.7,
        jitter: 0.0,
        dropout: 0.0,
        seed: 0,
    };
    let x = vec![1.5, -2.0, 0.0, 3.25];
    let mut rng = seeded(8);
    let draws = 20_000;
    let mut sum = vec![0.0; x.len()];
    let mut sq = vec![0.0; x.len()];
    for _ in 0..draws {
        for (i, v) in augment(&x, &aug, &mut rng).iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..x.len() {
        let mean = sum[i] / draws as f64;
        let var = sq[i] / draws as f64 - mean * mean;
        assert!((mean - x[i]).abs() < 5.0 * 0.7 / (draws as f64).sqrt());
        assert!((var - 0.49).abs() < 0.49 * 0.05, "variance {var}");
    }
}

#[test]
fn independent_views_differ() {
    let aug = AugmentationSpec::default();
    let mut rng = seeded(9);
    let x = vec![0.3; 8];
    assert_ne!(augment(&x, &aug, &mut rng), augment(&x, &aug, &mut rng));
}

proptest! {
    #[test]
    fn resampled_counts_track_the_target(weights in prop::collection::vec(0.05f64..1.0, 2..7), n in 10usize..400, seed in 0u64..1000) {
        let target = LabelDistribution::from_weights(&weights).unwrap();
        let k = target.classes();
        let mut s = spec(LabelDistribution::uniform(k).unwrap(), 30 * k, seed);
        s.dim = 3;
        let pool = generate(&s).unwrap();
        let out = resample(&pool, &target, n, seed + 1).unwrap();
        prop_assert_eq!(out.len(), n);
        prop_assert_eq!(out.dim(), 3);
        let counts = out.class_counts();
        prop_assert_eq!(&counts, &class_counts(&target, n));
        for (c, &count) in counts.iter().enumerate() {
            prop_assert!((count as f64 / n as f64 - target.prob(c + 1)).abs() <= 1.0 / n as f64 + 1e-12);
        }
        prop_assert!(out.labels().iter().all(|&y| (1..=k).contains(&y)));
    }
}
