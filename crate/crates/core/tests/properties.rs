use std::sync::Arc;

use proptest::prelude::*;

use ultranet::calculus::galerkin::prolong;
use ultranet::calculus::{inner, pairing_values, restrict, DiffOp, GridFunction, TestFunction};
use ultranet::grid::{build_level, Domain, GridLevel, NodeSet};
use ultranet::io::{read_grid_function_binary, read_grid_function_csv, write_grid_function_binary, grid_function_table};
use ultranet::measure::{density, gauss_check, RegionDescriptor};
use ultranet::net::{classify, ClassifyOptions, Kind, Net};
use ultranet::problems::{sign_perturbed_spec, BubbleInitializer};
use ultranet::solver::{split, SplitOptions};

fn level(dim: usize, n: u32) -> Arc<GridLevel> {
    build_level(&Domain::unit(dim).unwrap(), n).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn field(l: &Arc<GridLevel>, v: Vec<f64>) -> GridFunction {
    GridFunction::new(l.clone(), v).unwrap()
}

/// A grid level together with `k` random nodal vectors on it.
fn level_with(k: usize) -> impl Strategy<Value = (Arc<GridLevel>, Vec<Vec<f64>>)> {
    (1usize..=3, 1u32..=3).prop_flat_map(move |(dim, n)| {
        let l = level(dim, n);
        let len = l.node_count();
        (Just(l), prop::collection::vec(values(len), k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summation_by_parts((l, f) in level_with(2)) {
        let op = DiffOp::new(&l);
        let n = l.node_count();
        for axis in 0..l.dim() {
            let (mut du, mut dv) = (vec![0.0; n], vec![0.0; n]);
            op.apply(axis, &f[0], &mut du);
            op.apply(axis, &f[1], &mut dv);
            let mut lhs = 0.0;
            let mut scale = 0.0;
            for a in 0..n {
                lhs += l.weight(a) * (du[a] * f[1][a] + f[0][a] * dv[a]);
                scale += l.weight(a) * ((du[a] * f[1][a]).abs() + (f[0][a] * dv[a]).abs());
            }
            let rhs = op.boundary_form(axis, &f[0], &f[1]);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn transpose_is_adjoint((l, f) in level_with(2)) {
        let op = DiffOp::new(&l);
        let n = l.node_count();
        let (mut du, mut dtv) = (vec![0.0; n], vec![0.0; n]);
        op.apply(0, &f[0], &mut du);
        op.apply_transpose(0, &f[1], &mut dtv);
        let a: f64 = du.iter().zip(&f[1]).map(|(x, y)| x * y).sum();
        let b: f64 = f[0].iter().zip(&dtv).map(|(x, y)| x * y).sum();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn gauss_identity_on_random_masks((l, f) in level_with(3), bits in prop::collection::vec(any::<bool>(), 125)) {
        let dim = l.dim();
        let mask = NodeSet::from_predicate(&l, |a| bits[a % bits.len()]);
        let phi: Vec<GridFunction> = (0..dim).map(|k| field(&l, f[k].clone())).collect();
        let g = gauss_check(&phi, &RegionDescriptor::Mask(mask)).unwrap();
        let scale = g.lhs.abs() + g.rhs.abs() + g.boundary_flux.abs() + 1e-300;
        prop_assert!(g.defect() <= 1e-12 * scale.max(1e-3), "{} vs {}", g.defect(), scale);
    }

    #[test]
    fn density_lies_in_unit_interval(dim in 1usize..=3, c in prop::collection::vec(0.0f64..1.0, 3), r in 0.01f64..0.8) {
        let l = level(dim, 3);
        let ball = RegionDescriptor::Ball { center: c[..dim].to_vec(), radius: r };
        let theta = density(&ball, &l, 1.0).unwrap();
        prop_assert!(theta.values().iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn classification_is_affine_equivariant(
        limit in -5.0f64..5.0,
        amp in 0.1f64..3.0,
        p in 1.0f64..3.0,
        alpha in prop::sample::select(vec![-4.0, 0.5, 2.0, 1e3]),
        shift in -10.0f64..10.0,
    ) {
        let entries: Vec<(u32, f64, f64)> = (2..=9u32)
            .map(|n| { let h = 0.5f64.powi(n as i32); (n, h, limit + amp * h.powf(p)) })
            .collect();
        let net = Net::new(entries.clone()).unwrap();
        let opts = ClassifyOptions::default();
        let base = classify(&net, &opts).unwrap();
        let Kind::Standard(x) = base.kind else { return Err(TestCaseError::fail(format!("{base:?}"))) };
        prop_assert!((x - limit).abs() <= 1e-6 * (1.0 + limit.abs()));

        let scaled = Net::new(entries.iter().map(|&(n, h, v)| (n, h, alpha * v)).collect()).unwrap();
        let s = classify(&scaled, &opts.scaled(alpha)).unwrap();
        prop_assert_eq!(s.kind_name(), "standard");
        prop_assert!((s.standard_value().unwrap() - alpha * x).abs() <= 1e-9 * (1.0 + (alpha * x).abs()));

        let shifted = Net::new(entries.iter().map(|&(n, h, v)| (n, h, v + shift)).collect()).unwrap();
        let t = classify(&shifted, &opts).unwrap();
        // a shift moves the relative Cauchy test, so agreement is only to the tolerance
        prop_assert!((t.standard_value().unwrap() - (limit + shift)).abs() <= 1e-5 * (1.0 + (limit + shift).abs()));
    }

    #[test]
    fn divergent_nets_keep_their_sign(amp in 0.5f64..5.0, q in 0.5f64..2.0, sign in prop::sample::select(vec![-1.0, 1.0])) {
        let entries: Vec<(u32, f64, f64)> = (2..=12u32)
            .map(|n| { let h = 0.5f64.powi(n as i32); (n, h, sign * amp * h.powf(-q) * 1e3) })
            .collect();
        let c = classify(&Net::new(entries).unwrap(), &ClassifyOptions::default()).unwrap();
        let expected = if sign > 0.0 { Kind::InfinitePlus } else { Kind::InfiniteMinus };
        prop_assert_eq!(c.kind, expected);
    }

    #[test]
    fn splitting_reconstructs_the_net(a in -2.0f64..2.0, b in -2.0f64..2.0, wiggle in 0.0f64..1.0) {
        let d = Domain::unit(1).unwrap();
        let entries: Vec<(u32, f64, GridFunction)> = (2..=6u32)
            .map(|n| {
                let l = build_level(&d, n).unwrap();
                let h = l.h();
                let u = restrict(|x| a * x[0] + b * x[0] * x[0] + wiggle * h * (40.0 * x[0]).sin(), &l).unwrap();
                (n, h, u)
            })
            .collect();
        let net = Net::new(entries).unwrap();
        let s = split(&net, &SplitOptions::for_domain(&d)).unwrap();
        let scale = net.payloads().map(|u| u.max_abs()).fold(1.0, f64::max);
        prop_assert!(s.reconstruction_error <= 1e-14 * scale);
        prop_assert!(s.singular.is_empty());
        // the standard part of a convergent polynomial net is the polynomial
        let err = (0..s.w.values().len())
            .map(|i| (s.w.get(i) - (a * s.w.level().coord(i, 0) + b * s.w.level().coord(i, 0).powi(2))).abs())
            .fold(0.0, f64::max);
        prop_assert!(err <= 1e-5, "{err}");
        for (_, _, psi) in s.psi.iter() {
            let w_n = prolong(&s.w, psi.level()).unwrap();
            prop_assert_eq!(w_n.level().node_count(), psi.level().node_count());
        }
    }

    #[test]
    fn pairing_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, c in 0.3f64..0.7, r in 0.1f64..0.25) {
        let d = Domain::unit(2).unwrap();
        let phi = TestFunction::bump(vec![c, 0.5], r);
        let mk = |f: &dyn Fn(&[f64]) -> f64| {
            Net::new((2..=4u32).map(|n| { let l = build_level(&d, n).unwrap(); (n, l.h(), restrict(f, &l).unwrap()) }).collect()).unwrap()
        };
        let u = mk(&|x| x[0].sin());
        let v = mk(&|x| x[1] * x[0]);
        let uv = mk(&|x| alpha * x[0].sin() + beta * x[1] * x[0]);
        let (pu, pv, puv) = (pairing_values(&u, &phi).unwrap(), pairing_values(&v, &phi).unwrap(), pairing_values(&uv, &phi).unwrap());
        for ((a, b), c) in pu.values().iter().zip(pv.values()).zip(puv.values()) {
            prop_assert!((alpha * a + beta * b - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn quotient_is_scale_invariant(seed_vals in values(125), t in prop::sample::select(vec![1e-3, 0.5, 3.0, 1e4])) {
        let d = Domain::unit(3).unwrap();
        let start = BubbleInitializer { epsilon: 0.1, delta: 0.25, theta: 2.0, center: vec![0.5; 3] };
        let spec = sign_perturbed_spec(None, d.clone(), start).unwrap();
        let l = build_level(&d, 2).unwrap();
        let u: Vec<f64> = (0..l.node_count())
            .map(|a| if l.is_boundary(a) { 0.0 } else { 1.0 + seed_vals[a].abs() })
            .collect();
        let f = spec.functional.at_level(&l).unwrap();
        let q = f.value(&u).unwrap();
        let qt = f.value(&u.iter().map(|v| v * t).collect::<Vec<_>>()).unwrap();
        prop_assert!((q - qt).abs() <= 1e-11 * q);
    }

    #[test]
    fn grid_invariants(dim in 1usize..=3, n in 0u32..4, lo in prop::collection::vec(-2.0f64..0.0, 3)) {
        let upper: Vec<f64> = lo[..dim].iter().map(|v| v + 1.0).collect();
        let d = Domain::new(lo[..dim].to_vec(), upper).unwrap();
        let coarse = build_level(&d, n).unwrap();
        let fine = build_level(&d, n + 1).unwrap();
        let total: f64 = coarse.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!((coarse.h() - 2.0 * fine.h()).abs() <= 1e-15);
        for a in 0..coarse.node_count() {
            let b = coarse.embed(a, &fine).unwrap();
            prop_assert_eq!(coarse.point(a), fine.point(b));
            prop_assert_eq!(coarse.is_boundary(a), fine.is_boundary(b));
            let m = coarse.neighborhood(a, 1);
            prop_assert!(m.contains(&a) && m.len() <= 3usize.pow(dim as u32));
        }
    }

    #[test]
    fn dumps_round_trip((l, f) in level_with(1)) {
        let u = field(&l, f[0].iter().map(|v| v * 1e5f64.powf(*v)).collect());
        let mut bin = Vec::new();
        write_grid_function_binary(&u, &mut bin).unwrap();
        prop_assert_eq!(read_grid_function_binary(&l, bin.as_slice()).unwrap().into_values(), u.values().to_vec());
        let text = grid_function_table(&u).to_csv_string().unwrap();
        prop_assert_eq!(read_grid_function_csv(&l, text.as_bytes()).unwrap().into_values(), u.values().to_vec());
        prop_assert!((inner(&u, &u).unwrap() - ultranet::calculus::norm(&u).powi(2)).abs() <= 1e-12 * inner(&u, &u).unwrap().max(1e-300));
    }
}
