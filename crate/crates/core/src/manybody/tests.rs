use ndarray::{array, Array3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::divergence::Alpha;
use crate::models::{ComponentSpec, CpComponent, MixtureModel};
use crate::tensor::{build_empirical, DenseTensor, EmpiricalTensor, MultiIndex, Shape};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn shape(d: &[usize]) -> Shape {
    Shape::new(d.to_vec()).unwrap()
}

fn random_data(s: &Shape, n: usize, seed: u64) -> EmpiricalTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<MultiIndex> = (0..n)
        .map(|_| MultiIndex(s.dims().iter().map(|&k| rng.random_range(0..k)).collect()))
        .collect();
    build_empirical(&samples, s).unwrap()
}

fn random_dense(dims: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = shape(dims);
    let n = s.cardinality().unwrap();
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.01).collect();
    let total: f64 = v.iter().sum();
    DenseTensor::new(s, v.into_iter().map(|x| x / total).collect()).unwrap()
}

fn rank_dims(spec: &ComponentSpec) -> Vec<usize> {
    spec.ranks.clone()
}

/// Dense responsibility tensor of component `k`, `w_i η_k Q_ir`, over the
/// observed support only.
fn dense_responsibilities(t: &EmpiricalTensor, m: &MixtureModel, w: &[f64], k: usize) -> DenseTensor {
    let comp = &m.components()[k];
    let spec = comp.spec();
    let dims: Vec<usize> = t.shape().dims().iter().copied().chain(rank_dims(&spec)).collect();
    let full = shape(&dims);
    let d = t.shape().ndim();
    let mut values = vec![0.0; full.cardinality().unwrap()];
    for (flat, v) in values.iter_mut().enumerate() {
        let idx = full.unflatten(flat);
        let i = &idx[..d];
        let pos = t.indices().iter().position(|s| s.0 == i);
        if let Some(p) = pos {
            *v = w[p] * m.weights()[k] * component_term(comp, i, &idx[d..]);
        }
    }
    DenseTensor::new(full, values).unwrap()
}

fn assert_stats_close(a: &ComponentStats, b: &ComponentStats, tol: f64) {
    let pairs: Vec<(f64, f64)> = match (a, b) {
        (ComponentStats::Cp(x), ComponentStats::Cp(y)) => x
            .modes
            .iter()
            .zip(&y.modes)
            .flat_map(|(p, q)| p.iter().copied().zip(q.iter().copied()).collect::<Vec<_>>())
            .chain(x.rank_mass.iter().copied().zip(y.rank_mass.iter().copied()))
            .chain([(x.total, y.total)])
            .collect(),
        (ComponentStats::Tucker(x), ComponentStats::Tucker(y)) => x
            .modes
            .iter()
            .zip(&y.modes)
            .flat_map(|(p, q)| p.iter().copied().zip(q.iter().copied()).collect::<Vec<_>>())
            .chain(x.core.iter().copied().zip(y.core.iter().copied()))
            .chain([(x.total, y.total)])
            .collect(),
        (ComponentStats::Tt(x), ComponentStats::Tt(y)) => x
            .numerators
            .iter()
            .zip(&y.numerators)
            .flat_map(|(p, q)| p.iter().copied().zip(q.iter().copied()).collect::<Vec<_>>())
            .chain([(x.total, y.total)])
            .collect(),
        (ComponentStats::Background { total: x }, ComponentStats::Background { total: y }) => vec![(*x, *y)],
        _ => panic!("statistics of different structures"),
    };
    for (p, q) in pairs {
        assert!(close(p, q, tol), "{p} vs {q}");
    }
}

fn closed_form(stats: &ComponentStats) -> Component {
    match stats {
        ComponentStats::Cp(s) => Component::Cp(mstep_cp(s).unwrap()),
        ComponentStats::Tucker(s) => Component::Tucker(mstep_tucker(s).unwrap()),
        ComponentStats::Tt(s) => Component::Tt(mstep_tt(s).unwrap()),
        ComponentStats::Background { .. } => panic!("background has no M-step"),
    }
}

#[test]
fn kl_weights_are_ratios() {
    let s = shape(&[3, 2]);
    let t = random_data(&s, 40, 1);
    let m = MixtureModel::init(&s, &[ComponentSpec::cp(2), ComponentSpec::background()], 4).unwrap();
    let (sc, _) = compute_responsibilities(&t, &m, Alpha::KL).unwrap();
    for ((w, p), tv) in sc.w.iter().zip(&sc.model_values).zip(t.weights()) {
        assert!(close(*w, tv / p, 1e-12 * w.abs()));
    }
    assert_eq!(sc.log_z, 0.0);
}

#[test]
fn background_only_takes_all_mass() {
    let s = shape(&[4, 4]);
    let t = random_data(&s, 30, 2);
    let m = MixtureModel::init(&s, &[ComponentSpec::background()], 0).unwrap();
    for a in [0.2, 0.5, 1.0] {
        let (sc, stats) = compute_responsibilities(&t, &m, Alpha::new(a).unwrap()).unwrap();
        assert!(close(stats.masses()[0], 1.0, 1e-12));
        assert!(close(sc.responsibility_mass(), 1.0, 1e-12));
    }
}

#[test]
fn zero_model_mass_is_domain_error() {
    let s = shape(&[2]);
    let t = random_data(&s, 10, 0);
    let cp = CpComponent::from_factors(vec![array![[1.0], [0.0]]]).unwrap();
    let m = MixtureModel::new(s, vec![Component::Cp(cp)], vec![1.0]).unwrap();
    let err = compute_responsibilities(&t, &m, Alpha::KL).unwrap_err();
    assert!(!err.is_internal());
}

#[test]
fn cp_two_by_two_marginals() {
    let m = DenseTensor::new(shape(&[2, 2, 1]), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let stats = ComponentStats::from_dense(&ComponentSpec::cp(1), &shape(&[2, 2]), &m).unwrap();
    let ComponentStats::Cp(s) = stats else { unreachable!() };
    let cp = mstep_cp(&s).unwrap();
    let a = &cp.factors()[0];
    let b = &cp.factors()[1];
    assert!(close(a[[0, 0]], 0.3, 1e-15) && close(a[[1, 0]], 0.7, 1e-15));
    assert!(close(b[[0, 0]], 0.4, 1e-15) && close(b[[1, 0]], 0.6, 1e-15));
}

#[test]
fn tt_rank_one_gives_marginals() {
    let m = DenseTensor::new(shape(&[2, 3, 1]), vec![0.1, 0.2, 0.1, 0.3, 0.2, 0.1]).unwrap();
    let stats = ComponentStats::from_dense(&ComponentSpec::tt(vec![1]), &shape(&[2, 3]), &m).unwrap();
    let ComponentStats::Tt(s) = stats else { unreachable!() };
    let tt = mstep_tt(&s).unwrap();
    let rows = [0.4, 0.6];
    let cols = [0.4, 0.4, 0.2];
    for i in 0..2 {
        for j in 0..3 {
            assert!(close(tt.eval(&[i, j]), rows[i] * cols[j], 1e-15));
        }
    }
}

#[test]
fn tucker_one_mode_and_uniform() {
    let m = DenseTensor::new(shape(&[3, 2]), vec![0.1, 0.2, 0.05, 0.25, 0.3, 0.1]).unwrap();
    let stats = ComponentStats::from_dense(&ComponentSpec::tucker(vec![2]), &shape(&[3]), &m).unwrap();
    let q = closed_form(&stats);
    // with one mode the best Tucker model is the marginal itself
    for (i, expect) in [0.3, 0.3, 0.4].iter().enumerate() {
        assert!(close(q.eval(&[i]), *expect, 1e-15));
    }

    let u = DenseTensor::new(shape(&[2, 3, 2, 2]), vec![1.0 / 24.0; 24]).unwrap();
    let stats = ComponentStats::from_dense(&ComponentSpec::tucker(vec![2, 2]), &shape(&[2, 3]), &u).unwrap();
    let q = closed_form(&stats);
    for i in 0..2 {
        for j in 0..3 {
            assert!(close(q.eval(&[i, j]), 1.0 / 6.0, 1e-15));
        }
    }
}

#[test]
fn weight_update_examples() {
    assert_eq!(update_weights(&[0.3, 0.7]).unwrap(), vec![0.3, 0.7]);
    assert_eq!(update_weights(&[0.42]).unwrap(), vec![1.0]);
    assert_eq!(update_weights(&[1e-20, 1.0]).unwrap(), vec![0.0, 1.0]);
    assert_eq!(update_weights_keeping(&[1e-20, 1.0], &[true, false]).unwrap(), vec![1e-20 / (1.0 + 1e-20), 1.0]);
    let e = update_weights(&[0.0, 0.0]).unwrap_err();
    assert!(e.is_internal());
}

#[test]
fn oracle_rank_one_two_by_two() {
    let m = DenseTensor::new(shape(&[2, 2, 1]), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let res = manybody_oracle(&m, &ComponentSpec::cp(1), &shape(&[2, 2])).unwrap();
    let expect = [[0.12, 0.18], [0.28, 0.42]];
    for i in 0..2 {
        for j in 0..2 {
            assert!(close(res.component.eval(&[i, j]), expect[i][j], 1e-8));
        }
    }
    let u = DenseTensor::new(shape(&[3, 3, 2]), vec![1.0 / 18.0; 18]).unwrap();
    let res = manybody_oracle(&u, &ComponentSpec::cp(2), &shape(&[3, 3])).unwrap();
    for idx in shape(&[3, 3]).indices() {
        assert!(close(res.component.eval(&idx), 1.0 / 9.0, 1e-10));
    }
}

#[test]
fn closed_forms_match_oracle() {
    let base = shape(&[3, 2, 2]);
    let specs = [
        ComponentSpec::cp(2),
        ComponentSpec::tucker(vec![2, 2, 1]),
        ComponentSpec::tt(vec![2, 2]),
    ];
    for (k, spec) in specs.iter().enumerate() {
        for seed in 0..4 {
            let dims: Vec<usize> = base.dims().iter().copied().chain(spec.ranks.clone()).collect();
            let m = random_dense(&dims, 100 * k as u64 + seed);
            let stats = ComponentStats::from_dense(spec, &base, &m).unwrap();
            let q = closed_form(&stats);
            let h = many_body_cross_entropy(&m, &q, 3);
            let oracle = manybody_oracle(&m, spec, &base).unwrap();
            assert!(h <= oracle.cross_entropy + 1e-8, "{spec}: {h} vs {}", oracle.cross_entropy);
            assert!(close(h, oracle.cross_entropy, 1e-6), "{spec}: {h} vs {}", oracle.cross_entropy);
        }
    }
}

#[test]
fn sparse_statistics_match_dense() {
    let s = shape(&[3, 2, 4]);
    let t = random_data(&s, 25, 9);
    let specs = [
        ComponentSpec::cp(3),
        ComponentSpec::tucker(vec![2, 2, 3]),
        ComponentSpec::tt(vec![2, 3]),
        ComponentSpec::background(),
    ];
    let m = MixtureModel::init(&s, &specs, 17).unwrap();
    for a in [0.3, 1.0] {
        let (sc, stats) = compute_responsibilities(&t, &m, Alpha::new(a).unwrap()).unwrap();
        for (k, spec) in specs.iter().enumerate() {
            let dense = dense_responsibilities(&t, &m, &sc.w, k);
            let expect = ComponentStats::from_dense(spec, &s, &dense).unwrap();
            assert_stats_close(&stats.components[k], &expect, 1e-12);
        }
        assert!(close(stats.masses().iter().sum::<f64>(), 1.0, 1e-12));
    }
}

#[test]
fn tt_cumulant_stats_match_brute_force() {
    let s = shape(&[3, 4, 2, 3]);
    let t = random_data(&s, 50, 5);
    let m = MixtureModel::init(&s, &[ComponentSpec::tt(vec![2, 3, 2]), ComponentSpec::cp(2)], 8).unwrap();
    let alpha = Alpha::new(0.6).unwrap();
    let values = m.eval_support(&t);
    let (_, fast) = compute_responsibilities_with(&t, &m, alpha, values.clone(), TtStatsMode::Cumulant).unwrap();
    let (_, slow) = compute_responsibilities_with(&t, &m, alpha, values, TtStatsMode::BruteForce).unwrap();
    assert_stats_close(&fast.components[0], &slow.components[0], 1e-10);
}

#[test]
fn cp_and_tt_are_fixed_points() {
    // when M equals the component itself the closed form returns it
    let s = shape(&[3, 2, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in [ComponentSpec::cp(2), ComponentSpec::tt(vec![2, 2])] {
        let comp = crate::models::init_component(&spec, &s, &mut rng).unwrap();
        let dims: Vec<usize> = s.dims().iter().copied().chain(spec.ranks.clone()).collect();
        let full = shape(&dims);
        let values: Vec<f64> = full
            .indices()
            .map(|idx| component_term(&comp, &idx[..3], &idx[3..]))
            .collect();
        let m = DenseTensor::new(full, values).unwrap();
        let q = closed_form(&ComponentStats::from_dense(&spec, &s, &m).unwrap());
        for idx in s.indices() {
            assert!(close(q.eval(&idx), comp.eval(&idx), 1e-14));
        }
    }
}

#[test]
fn mstep_skips_dead_components() {
    let s = shape(&[3, 3]);
    let t = random_data(&s, 20, 4);
    let m = MixtureModel::init(&s, &[ComponentSpec::cp(2), ComponentSpec::tt(vec![2])], 1).unwrap();
    let cp = m.components()[0].clone();
    let tt = m.components()[1].clone();
    let m = MixtureModel::new(s, vec![cp.clone(), tt], vec![0.0, 1.0]).unwrap();
    let (_, stats) = compute_responsibilities(&t, &m, Alpha::KL).unwrap();
    assert_eq!(stats.masses()[0], 0.0);
    let next = mstep(&m, &stats).unwrap();
    assert_eq!(next.weights(), &[0.0, 1.0]);
    match (&next.components()[0], &cp) {
        (Component::Cp(a), Component::Cp(b)) => assert_eq!(a, b),
        _ => unreachable!(),
    }
}

#[test]
fn dead_tt_slice_is_reinitialized() {
    let num = vec![
        Array3::from_shape_vec((1, 2, 2), vec![0.5, 0.0, 0.5, 0.0]).unwrap(),
        Array3::from_shape_vec((2, 2, 1), vec![0.4, 0.6, 0.0, 0.0]).unwrap(),
    ];
    let tt = mstep_tt(&TtStats { numerators: num, total: 1.0 }).unwrap();
    assert!(close(tt.total_mass(), 1.0, 1e-12));
    assert!(close(tt.eval(&[0, 0]), 0.2, 1e-12));
}

proptest! {
    #[test]
    fn responsibility_mass_is_one(seed in 0u64..1000, a in 0.05f64..=1.0) {
        let s = shape(&[3, 3, 2]);
        let t = random_data(&s, 30, seed);
        let specs = [ComponentSpec::cp(2), ComponentSpec::tt(vec![2, 2]), ComponentSpec::background()];
        let m = MixtureModel::init(&s, &specs, seed).unwrap();
        let (sc, stats) = compute_responsibilities(&t, &m, Alpha::new(a).unwrap()).unwrap();
        prop_assert!(close(sc.responsibility_mass(), 1.0, 1e-12));
        prop_assert!(close(stats.masses().iter().sum::<f64>(), 1.0, 1e-12));
    }
}
