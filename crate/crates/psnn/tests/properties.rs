//! Standalone property suite: combinatorial oracles for the numeric kernels
//! (assignment, k-means, silhouette, set distance), range bounds for the
//! scaled sigmoid, and seed-determinism of every pipeline stage.

use proptest::prelude::*;

use psnn::dataset::{
    build_training_set, generate_observations, mask_incomplete, DatasetSpec, SamplingPlan, Split,
};
use psnn::evaluate::kernel_check;
use psnn::locate::{
    cluster_points, kmeans, meanshift_locate, set_distance, silhouette, ClusterParams,
    MeanShiftParams,
};
use psnn::network::{scaled_sigmoid, scaled_sigmoid_derivative, PsnnSpec};
use psnn::numerics::{assignment, min_assignment_cost, DenseMatrix, RandomSource};
use psnn::system::gray_scott;
use psnn::target::{Channel, DeviationConfig};
use psnn::training::{init_model, train, TrainConfig};

fn tiny_spec() -> PsnnSpec {
    PsnnSpec {
        theta_dim: 2,
        u_dim: 2,
        inner_dim: 3,
        pnn_depth: 2,
        pnn_width: 8,
        snn_depth: 2,
        snn_width: 6,
    }
}

fn small_set() -> psnn::dataset::ObservationSet {
    generate_observations(
        &DatasetSpec { train_count: 24, search_count: 6, test_count: 8, ..DatasetSpec::complete() },
        9,
    )
}

// ---------------------------------------------------------------------------
// Assignment against permutation enumeration.

fn for_each_permutation(n: usize, visit: &mut dyn FnMut(&[usize])) {
    fn recurse(slots: &mut Vec<usize>, used: &mut Vec<bool>, visit: &mut dyn FnMut(&[usize])) {
        let n = used.len();
        if slots.len() == n {
            visit(slots);
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                slots.push(i);
                recurse(slots, used, visit);
                slots.pop();
                used[i] = false;
            }
        }
    }
    recurse(&mut Vec::with_capacity(n), &mut vec![false; n], visit);
}

fn brute_force_assignment_cost(cost: &DenseMatrix) -> f64 {
    let n = cost.rows();
    let mut best = f64::INFINITY;
    for_each_permutation(n, &mut |perm| {
        let total: f64 = perm.iter().enumerate().map(|(r, &c)| cost.get(r, c)).sum();
        if total < best {
            best = total;
        }
    });
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn assignment_matches_permutation_enumeration(
        entries in prop::collection::vec(0.0f64..10.0, 1..=25),
    ) {
        let n = (entries.len() as f64).sqrt().floor() as usize;
        prop_assume!(n >= 1);
        let cost = DenseMatrix::from_vec(n, n, entries[..n * n].to_vec()).unwrap();
        let oracle = brute_force_assignment_cost(&cost);
        let (perm, total) = assignment(&cost).unwrap();
        prop_assert!((total - oracle).abs() < 1e-9, "total {total} vs oracle {oracle}");
        prop_assert!((min_assignment_cost(&cost).unwrap() - oracle).abs() < 1e-9);
        let mut seen = vec![false; n];
        let mut replay = 0.0;
        for (r, &c) in perm.iter().enumerate() {
            prop_assert!(!seen[c], "column {c} assigned twice");
            seen[c] = true;
            replay += cost.get(r, c);
        }
        prop_assert!((replay - total).abs() < 1e-9);
    }
}

// ---------------------------------------------------------------------------
// K-means against exhaustive partition enumeration. Deterministic seeds keep
// the restarted heuristic reproducible while still covering many geometries.

fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> Option<f64> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, &x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    if counts.iter().any(|&c| c == 0) {
        return None;
    }
    let mut sse = 0.0;
    for (p, &l) in points.iter().zip(labels) {
        for (s, &x) in sums[l].iter().zip(p) {
            let d = x - s / counts[l] as f64;
            sse += d * d;
        }
    }
    Some(sse)
}

fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        if let Some(sse) = partition_sse(points, &labels, k) {
            if sse < best {
                best = sse;
            }
        }
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

#[test]
fn restarted_kmeans_finds_the_exhaustive_optimum_on_tiny_sets() {
    for case in 0..150u64 {
        let mut rng = RandomSource::from_seed(1000 + case);
        let n = 2 + (case as usize) % 7;
        let k = if n >= 6 && case % 2 == 0 { 3 } else { 2 };
        let points: Vec<Vec<f64>> =
            (0..n).map(|_| vec![rng.unit(), rng.unit()]).collect();
        let params = ClusterParams {
            restarts: 24,
            max_iterations: 200,
            tolerance: 1e-12,
            ..ClusterParams::new(7 * case + 1)
        };
        let run = kmeans(&points, k, &params).unwrap();
        let oracle = brute_force_kmeans(&points, k);
        assert!(
            (run.inertia - oracle).abs() <= 1e-9 * oracle.max(1.0),
            "case {case}: inertia {} vs exhaustive {oracle}",
            run.inertia
        );
    }
}

// ---------------------------------------------------------------------------
// Silhouette against a direct quadratic recomputation.

fn naive_silhouette(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = points.len();
    let k = labels.iter().max().unwrap() + 1;
    let counts = {
        let mut c = vec![0usize; k];
        for &l in labels {
            c[l] += 1;
        }
        c
    };
    let dist = |i: usize, j: usize| -> f64 {
        points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        if counts[labels[i]] == 1 {
            continue;
        }
        let mean_to = |c: usize| -> f64 {
            let mut sum = 0.0;
            for j in 0..n {
                if j != i && labels[j] == c {
                    sum += dist(i, j);
                }
            }
            let denom = if c == labels[i] { counts[c] - 1 } else { counts[c] };
            sum / denom as f64
        };
        let a = mean_to(labels[i]);
        let b = (0..k).filter(|&c| c != labels[i]).map(mean_to).fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn silhouette_matches_direct_recomputation(
        coords in prop::collection::vec(0.0f64..1.0, 8..=24),
        raw_labels in prop::collection::vec(0usize..3, 12),
        k in 2usize..=3,
    ) {
        let n = coords.len() / 2;
        let points: Vec<Vec<f64>> =
            (0..n).map(|i| vec![coords[2 * i], coords[2 * i + 1]]).collect();
        // Pin the first k labels so every cluster is nonempty.
        let labels: Vec<usize> =
            (0..n).map(|i| if i < k { i } else { raw_labels[i % 12] % k }).collect();
        let lib = silhouette(&points, &labels).unwrap();
        let naive = naive_silhouette(&points, &labels);
        prop_assert!((lib - naive).abs() < 1e-12, "lib {lib} vs naive {naive}");
        prop_assert!((-1.0..=1.0).contains(&lib));
    }
}

// ---------------------------------------------------------------------------
// Set distance is a pseudometric on equal-size point sets.

fn point_set(size: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, 2), size)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn set_distance_is_a_pseudometric(
        size in 1usize..=4,
        seed_sets in (1usize..=4).prop_flat_map(|m| (point_set(m), point_set(m), point_set(m))),
    ) {
        let _ = size;
        let (a, b, c) = seed_sets;
        let domain = gray_scott().domain;
        let dab = set_distance(&a, &b, &domain).unwrap();
        let dba = set_distance(&b, &a, &domain).unwrap();
        let dac = set_distance(&a, &c, &domain).unwrap();
        let dbc = set_distance(&b, &c, &domain).unwrap();
        prop_assert!(set_distance(&a, &a, &domain).unwrap().abs() <= 1e-12);
        prop_assert!(dab >= 0.0);
        prop_assert!((dab - dba).abs() <= 1e-12, "symmetry: {dab} vs {dba}");
        prop_assert!(dac <= dab + dbc + 1e-9, "triangle: {dac} > {dab} + {dbc}");
        let mut reversed = b.clone();
        reversed.reverse();
        let drev = set_distance(&a, &reversed, &domain).unwrap();
        prop_assert!((dab - drev).abs() <= 1e-12, "order dependence: {dab} vs {drev}");
    }
}

// ---------------------------------------------------------------------------
// Scaled sigmoid stays inside its advertised range and is monotone.

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn scaled_sigmoid_respects_range_and_monotonicity(
        t1 in -1e6f64..1e6,
        t2 in -1e6f64..1e6,
        eta in 0.05f64..5.0,
    ) {
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let (slo, shi) = (scaled_sigmoid(lo, eta), scaled_sigmoid(hi, eta));
        // Saturated inputs land on the endpoints, which the rearranged
        // arithmetic inside the library may place one ulp past -eta or 1+eta.
        let slack = 4.0 * f64::EPSILON * (1.0 + eta);
        for s in [slo, shi] {
            prop_assert!(
                s >= -eta - slack && s <= 1.0 + eta + slack,
                "sigma {s} outside [{}, {}]", -eta, 1.0 + eta
            );
        }
        prop_assert!(slo <= shi, "not monotone: sigma({lo}) = {slo} > sigma({hi}) = {shi}");
        if lo.abs() < 30.0 {
            prop_assert!(slo > -eta && slo < 1.0 + eta);
            prop_assert!(scaled_sigmoid_derivative(lo, eta) >= 0.0);
        }
        prop_assert!((scaled_sigmoid(0.0, eta) - 0.5).abs() < 1e-15);
    }
}

// ---------------------------------------------------------------------------
// Every seeded pipeline stage reproduces itself bit for bit.

fn records_json(set: &psnn::dataset::ObservationSet) -> String {
    set.records.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>().join("\n")
}

#[test]
fn generation_and_masking_are_seed_deterministic() {
    let a = small_set();
    let b = small_set();
    assert_eq!(records_json(&a), records_json(&b));
    let (m1, r1) = mask_incomplete(&a, 4, 11).unwrap();
    let (m2, r2) = mask_incomplete(&b, 4, 11).unwrap();
    assert_eq!(records_json(&m1), records_json(&m2));
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
}

#[test]
fn sample_assembly_is_seed_deterministic() {
    let set = small_set();
    let plan = SamplingPlan::uniform(17);
    let dev = DeviationConfig::default_for(&set.domain);
    let flat = |seed: u64| {
        let (ts, _) =
            build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, seed).unwrap();
        ts.flatten()
    };
    let (a, b) = (flat(13), flat(13));
    assert_eq!(a.thetas.as_slice(), b.thetas.as_slice());
    assert_eq!(a.points.as_slice(), b.points.as_slice());
    assert_eq!(a.targets, b.targets);
    let c = flat(14);
    assert_ne!(a.points.as_slice(), c.points.as_slice());
}

#[test]
fn initialization_and_training_are_seed_deterministic() {
    let set = small_set();
    let plan = SamplingPlan::uniform(17);
    let dev = DeviationConfig::default_for(&set.domain);
    let (ts, _) =
        build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, 13).unwrap();
    let flat = ts.flatten();
    let run = |seed: u64| {
        let mut model = init_model(tiny_spec(), Channel::Solution, seed).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 64,
            ..TrainConfig::defaults(Channel::Solution, seed)
        };
        let report = train(&mut model, &flat, None, &cfg).unwrap();
        (model, report.epoch_losses)
    };
    let (m1, l1) = run(17);
    let (m2, l2) = run(17);
    assert_eq!(l1, l2);
    for (a, b) in m1.pnn.layers.iter().zip(&m2.pnn.layers) {
        assert_eq!(a.weight.as_slice(), b.weight.as_slice());
        assert_eq!(a.bias, b.bias);
    }
    for (a, b) in m1.snn.layers.iter().zip(&m2.snn.layers) {
        assert_eq!(a.weight.as_slice(), b.weight.as_slice());
        assert_eq!(a.bias, b.bias);
    }
    let (_, l3) = run(18);
    assert_ne!(l1, l3);
}

#[test]
fn clustering_and_meanshift_are_seed_deterministic() {
    let mut rng = RandomSource::from_seed(77);
    let points: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let cx = if i % 2 == 0 { 0.3 } else { 0.7 };
            vec![cx + 0.02 * rng.normal(), 0.5 + 0.02 * rng.normal()]
        })
        .collect();
    let o1 = cluster_points(&points, &ClusterParams::new(23)).unwrap();
    let o2 = cluster_points(&points, &ClusterParams::new(23)).unwrap();
    assert_eq!(o1.centers, o2.centers);
    assert_eq!(o1.silhouette, o2.silhouette);

    let set = generate_observations(
        &DatasetSpec {
            train_count: 200,
            search_count: 2,
            test_count: 2,
            ..DatasetSpec::complete()
        },
        9,
    );
    let plan = SamplingPlan::concentrated(20);
    let dev = DeviationConfig::default_for(&set.domain);
    let (training, _) =
        build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, 13).unwrap();
    let theta = vec![0.1, 0.05];
    let ms = MeanShiftParams::default_for(&set.omega, &set.domain, 29);
    let run = || {
        meanshift_locate(&training, &theta, &set.domain, 0.3, &ms, &ClusterParams::new(31)).unwrap()
    };
    let (r1, r2) = (run(), run());
    assert_eq!(r1.centers, r2.centers);
    assert_eq!(r1.n_collected, r2.n_collected);
}

#[test]
fn kernel_decomposition_is_deterministic() {
    let sys = gray_scott();
    let field = psnn::evaluate::gray_scott_field(&sys.domain);
    let run = || {
        kernel_check(&field, &sys.domain, &[9, 9], &sys.parameter_box, &[7, 7], &[1, 2]).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.eigenvalues, b.eigenvalues);
    assert_eq!(a.rank, b.rank);
    for (x, y) in a.truncations.iter().zip(&b.truncations) {
        assert_eq!(x.err_sq, y.err_sq);
        assert_eq!(x.tail, y.tail);
    }
}
