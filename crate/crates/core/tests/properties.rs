//! Property tests over randomly drawn built-in models.

use std::sync::OnceLock;

use proptest::prelude::*;
use weakkam::dynamics::{aubry_candidates, integrate, DynamicsOptions, PhasePoint};
use weakkam::model::{evaluate_jet, legendre, Hamiltonian, HamiltonianModel, PotentialSpec};
use weakkam::orbit_hessian::hessian_curve;
use weakkam::stochastic::{simulate_paths, DriftSource, SdeConfig};
use weakkam::variational::critical::{compose_period, karp_min_mean};
use weakkam::variational::{
    anchored_barrier, build_kernels, critical_value, ActionKernelSet, BarrierField, BarrierOptions, GridAnchor, GridSpec,
    KernelOptions,
};
use weakkam::vv_analysis::{inviscid_analysis, represent, AnalysisOptions, InviscidData};
use weakkam::Model;

fn terms(max_freq: i32, step: i32) -> impl Strategy<Value = Vec<(i32, f64, f64)>> {
    prop::collection::vec((1..=max_freq, -0.5..0.5f64, -0.5..0.5f64), 1..=3)
        .prop_map(move |v| v.into_iter().map(|(f, c, s)| (f * step, c, s)).collect())
}

fn model() -> impl Strategy<Value = Model> {
    prop_oneof![
        terms(3, 1).prop_map(|t| HamiltonianModel::mechanical(PotentialSpec::from_terms(&t))),
        (terms(2, 1), -1.0..1.0f64, prop::collection::vec((1..=2i32, 0..=2i32, -0.4..0.4f64, -0.4..0.4f64), 0..=2))
            .prop_map(|(t, shift, tt)| {
                let mut all: Vec<(i32, i32, f64, f64)> = t.into_iter().map(|(f, c, s)| (f, 0, c, s)).collect();
                all.extend(tt);
                HamiltonianModel::shifted_kinetic(PotentialSpec::from_terms_t(&all), shift)
            }),
        (1..=3u32).prop_flat_map(|k| terms(2, k as i32)
            .prop_map(move |t| HamiltonianModel::traveling_wave(PotentialSpec::from_terms(&t), k))),
    ]
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jet_matches_central_differences(m in model(), x in 0.0..1.0f64, p in -3.0..3.0f64, t in 0.0..1.0f64) {
        let d = 1e-5;
        let j = evaluate_jet(&m, x, p, t);
        let h = |x: f64, p: f64, t: f64| m.value(x, p, t);
        let fd_p = (h(x, p + d, t) - h(x, p - d, t)) / (2.0 * d);
        let fd_x = (h(x + d, p, t) - h(x - d, p, t)) / (2.0 * d);
        let fd_t = (h(x, p, t + d) - h(x, p, t - d)) / (2.0 * d);
        let jp = |x, p| evaluate_jet(&m, x, p, t).h_p;
        let jx = |x, p| evaluate_jet(&m, x, p, t).h_x;
        let fd_pp = (jp(x, p + d) - jp(x, p - d)) / (2.0 * d);
        let fd_xp = (jp(x + d, p) - jp(x - d, p)) / (2.0 * d);
        let fd_xx = (jx(x + d, p) - jx(x - d, p)) / (2.0 * d);
        prop_assert!(close(j.h_p, fd_p, 1e-6), "h_p {} vs {}", j.h_p, fd_p);
        prop_assert!(close(j.h_x, fd_x, 1e-6), "h_x {} vs {}", j.h_x, fd_x);
        prop_assert!(close(j.h_t, fd_t, 1e-6), "h_t {} vs {}", j.h_t, fd_t);
        prop_assert!(close(j.h_pp, fd_pp, 1e-6));
        prop_assert!(close(j.h_xp, fd_xp, 1e-6));
        prop_assert!(close(j.h_xx, fd_xx, 1e-6), "h_xx {} vs {}", j.h_xx, fd_xx);
    }

    #[test]
    fn fenchel_equality(m in model(), x in 0.0..1.0f64, v in -4.0..4.0f64, t in 0.0..1.0f64) {
        let (l, p) = legendre(&m, x, v, t);
        prop_assert!((l + m.value(x, p, t) - p * v).abs() <= 1e-12 * (1.0 + v * v));
        prop_assert!((m.jet(x, p, t).h_p - v).abs() <= 1e-12 * (1.0 + v.abs()));
        // Young: p' v ≤ L + H(p') for any other momentum.
        for q in [-2.0, -0.3, 0.0, 0.8, 2.5] {
            prop_assert!(q * v <= l + m.value(x, q, t) + 1e-12);
        }
    }

    #[test]
    fn periodic_in_space_and_time(m in model(), i in 0u32..1 << 20, j in 0u32..1 << 20, p in -3.0..3.0f64,
                                  x in 0.0..1.0f64, t in 0.0..1.0f64) {
        // Dyadic points survive the shift by one exactly.
        let (xd, td) = (i as f64 / (1u32 << 20) as f64, j as f64 / (1u32 << 20) as f64);
        let h = m.value(xd, p, td);
        prop_assert_eq!(h, m.value(xd + 1.0, p, td));
        prop_assert_eq!(h, m.value(xd, p, td + 1.0));
        prop_assert_eq!(h, m.value(xd - 1.0, p, td - 1.0));
        let h = m.value(x, p, t);
        prop_assert!((h - m.value(x + 1.0, p, t + 1.0)).abs() <= 1e-12);
    }

    #[test]
    fn forward_then_backward_returns(m in model(), x in 0.0..1.0f64, p in -1.5..1.5f64, t in 0.0..1.0f64) {
        // Roundoff grows like exp(rate · T) with rate ≤ √max|V''|; keep that
        // factor near e^10 so the check sees the integrator, not the chaos.
        let curvature: f64 = m
            .potential
            .terms
            .iter()
            .map(|t| (std::f64::consts::TAU * t.freq_x as f64).powi(2) * t.cos.hypot(t.sin))
            .sum();
        let horizon = (10.0 / curvature.sqrt().max(1.0)).min(1.0);
        let start = PhasePoint::new(x, p, t);
        let fwd = integrate(&m, start, horizon, 1024, false).unwrap();
        let back = integrate(&m, fwd.last(), -horizon, 1024, false).unwrap();
        let end = back.last();
        prop_assert!((end.x - x).abs() <= 1e-8 && (end.p - p).abs() <= 1e-8, "{:?}", end);
    }

    #[test]
    fn simulation_is_bit_reproducible(seed in any::<u64>(), eps in 0.001..0.1f64, v in -1.0..1.0f64) {
        let m = HamiltonianModel::mechanical(PotentialSpec::benchmark());
        let cfg = SdeConfig { n_paths: 16, dt: 0.01, seed, t_cap: 0.5, start_x: 0.5, start_t: 0.0 };
        let a = simulate_paths(&m, &DriftSource::Constant(v), eps, &cfg, None, true).unwrap();
        let b = simulate_paths(&m, &DriftSource::Constant(v), eps, &cfg, None, true).unwrap();
        prop_assert_eq!(a, b);
    }
}

const GRID: GridSpec = GridSpec { nx: 32, nt: 8 };

// A window shorter than the minimizing cycle never settles; take the first
// one that does.
fn settled_barrier(k: &ActionKernelSet<f64>, c: f64, anchor: GridAnchor<f64>) -> Option<(usize, BarrierField<f64>)> {
    [1usize, 2, 3, 4, 6]
        .into_iter()
        .find_map(|w| anchored_barrier(k, c, anchor, w, &BarrierOptions::default()).ok().map(|f| (w, f)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn shifted_kernels_have_no_negative_cycle(m in model()) {
        let k = build_kernels(&m, GRID, &KernelOptions::default()).unwrap();
        let c = critical_value(&k).unwrap().c;
        let shifted = k.shifted(c);
        let mean = karp_min_mean(GRID.nx, &compose_period(&shifted)).unwrap();
        prop_assert!(mean >= -1e-6, "min cycle mean {mean}");
    }

    #[test]
    fn constant_in_potential_shifts_c(m in model(), a in -2.0..2.0f64) {
        let mut lifted = m.clone();
        lifted.potential.terms.push(vec![0.0, a, 0.0].try_into().unwrap());
        let c0 = critical_value(&build_kernels(&m, GRID, &KernelOptions::default()).unwrap()).unwrap().c;
        let c1 = critical_value(&build_kernels(&lifted, GRID, &KernelOptions::default()).unwrap()).unwrap().c;
        prop_assert!((c1 - c0 - a).abs() <= 1e-9, "{c0} + {a} vs {c1}");
    }

    #[test]
    fn potential_below_barrier_and_lipschitz(m in model(), node in 0usize..32, layer in 0usize..8) {
        let opts = KernelOptions::default();
        let k = build_kernels(&m, GRID, &opts).unwrap();
        let c = critical_value(&k).unwrap().c;
        let f = settled_barrier(&k, c, GridAnchor::node(GRID, node, layer));
        prop_assume!(f.is_some());
        let (_, f) = f.unwrap();
        for (phi, h) in f.phi_pot.iter().zip(&f.h) {
            prop_assert!(*phi <= *h + 0.01, "Φ {phi} > h {h}");
        }
        // |L_v| = |v - s| with s the kinetic offset, over |v| ≤ vmax.
        let s = m.lagrangian(0.0, 0.0, 0.0).1.abs();
        let bound = opts.vmax + s;
        prop_assert!(f.lipschitz_x() <= bound * 1.05, "lip h {} > {}", f.lipschitz_x(), bound);
        prop_assert!(f.potential_lipschitz_x() <= bound * 1.05, "lip Φ {} > {}", f.potential_lipschitz_x(), bound);
    }

    #[test]
    fn longer_window_never_raises_barrier(m in model(), node in 0usize..32) {
        let k = build_kernels(&m, GRID, &KernelOptions::default()).unwrap();
        let c = critical_value(&k).unwrap().c;
        let anchor = GridAnchor::node(GRID, node, 0);
        let base = settled_barrier(&k, c, anchor);
        prop_assume!(base.is_some());
        let (w, short) = base.unwrap();
        let long = anchored_barrier(&k, c, anchor, 2 * w, &BarrierOptions::default()).unwrap();
        for (a, b) in long.h.iter().zip(&short.h) {
            prop_assert!(*a <= *b + 1e-8, "window {} gives {a} above window {w} {b}", 2 * w);
        }
    }

    #[test]
    fn hyperbolic_orbits_have_positive_lambda(t in terms(3, 1)) {
        let m: Model = HamiltonianModel::mechanical(PotentialSpec::from_terms(&t));
        if let Ok(orbits) = aubry_candidates(&m, &DynamicsOptions::default()) {
            for o in orbits.iter().filter(|o| o.hyperbolic) {
                prop_assert!((o.monodromy_det - 1.0).abs() <= 1e-8);
                let curve = hessian_curve(&m, o).unwrap();
                prop_assert!(curve.lambda > 0.0, "λ = {} at {}", curve.lambda, o.anchor.x);
            }
        }
    }
}

fn benchmark_data() -> &'static InviscidData<f64> {
    static DATA: OnceLock<InviscidData<f64>> = OnceLock::new();
    DATA.get_or_init(|| {
        let m = HamiltonianModel::mechanical(PotentialSpec::benchmark());
        let opts = AnalysisOptions::default();
        let k = build_kernels(&m, GridSpec::new(64, 16), &opts.kernel).unwrap();
        inviscid_analysis(&m, &k, &opts).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn representation_is_a_fixed_point(a in -2.0..2.0f64, b in -2.0..2.0f64) {
        let data = benchmark_data();
        prop_assume!(data.fields.len() == 2);
        let all = [0, 1];
        let u: Vec<f64> = represent(&[a, b], &data.fields, &all);
        let nx = data.grid.nx;
        let at: Vec<f64> = data.fields.iter().map(|f| u[f.anchor.layer * nx + f.anchor.node]).collect();
        let again = represent(&at, &data.fields, &all);
        for (x, y) in u.iter().zip(&again) {
            prop_assert!((x - y).abs() <= 0.01, "{x} vs {y}");
        }
    }
}
