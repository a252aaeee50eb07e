use fastslow::analysis::{attraction_bound_with, basin_census, find_equilibria, EquilibriumOptions};
use fastslow::expr::{parse_expr, VarContext};
use fastslow::model::{BoxRegion, FastSlowSystem, RegionSet, SimConfig};
use fastslow::reduction::ReducedSystem;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn polynomial_field() -> impl Strategy<Value = ReducedSystem> {
    (1usize..=2).prop_flat_map(|n| {
        prop::collection::vec((prop::collection::vec(-2.0f64..2.0, n), -1.0f64..1.0, 0.2f64..1.0), n).prop_map(move |rows| {
            let ctx = VarContext::slow_only(n);
            let field = rows
                .iter()
                .enumerate()
                .map(|(i, (c, b, cube))| {
                    let mut s = format!("{b:.4} - {cube:.4}*x{}^3", i + 1);
                    for (j, cj) in c.iter().enumerate() {
                        s.push_str(&format!(" + {cj:.4}*tanh(x{})", j + 1));
                    }
                    parse_expr(&s, ctx).unwrap()
                })
                .collect();
            ReducedSystem::from_field(field)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn equilibria_are_polished_and_interior(rs in polynomial_field()) {
        let region = BoxRegion::cube(rs.n(), -3.0, 3.0).unwrap();
        let set = find_equilibria(&rs, &region, &EquilibriumOptions::default()).unwrap();
        for e in &set.points {
            let r: f64 = rs.eval_field(&e.x).unwrap().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(r < 1e-9, "residual {r:e} at {:?}", e.x);
            prop_assert!(region.contains_open(&e.x));
        }
        for (i, a) in set.points.iter().enumerate() {
            for b in &set.points[i + 1..] {
                let d: f64 = a.x.iter().zip(&b.x).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                prop_assert!(d > set.dedup_radius);
            }
        }
    }

    #[test]
    fn attraction_bound_is_monotone(
        c in 1.0f64..5.0, beta in -5.0f64..-0.05, delta in 0.01f64..2.0, m in 0.1f64..50.0, factor in 1.01f64..3.0,
    ) {
        let base = attraction_bound_with(c, beta, m, delta, 1.0).unwrap();
        prop_assert!(base.eps_max > 0.0 && base.t0_prime >= 0.0);
        prop_assert!(attraction_bound_with(c * factor, beta, m, delta, 1.0).unwrap().eps_max < base.eps_max);
        prop_assert!(attraction_bound_with(c, beta * factor, m, delta, 1.0).unwrap().eps_max > base.eps_max);
        prop_assert!(attraction_bound_with(c, beta, m * factor, delta, 1.0).unwrap().eps_max < base.eps_max);
        prop_assert!(attraction_bound_with(c, beta, m, delta * factor, 1.0).unwrap().eps_max > base.eps_max);
    }

    #[test]
    fn entry_time_vanishes_inside_the_quarter_band(c in 1.0f64..5.0, beta in -5.0f64..-0.05, delta in 0.01f64..2.0, u in 0.0f64..=1.0) {
        let z = u * delta / (4.0 * c);
        prop_assert_eq!(attraction_bound_with(c, beta, 1.0, delta, z).unwrap().t0_prime, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn census_does_not_depend_on_worker_count(seed in any::<u64>(), jobs in 2usize..=6, k in 0.5f64..2.0) {
        let sys = FastSlowSystem::new(
            vec![parse_expr(&format!("-{k:.3}*x1 - y1"), VarContext::new(1, 1)).unwrap()],
            DMatrix::from_element(1, 1, -1.0),
            vec![parse_expr("x1", VarContext::slow_only(1)).unwrap()],
        )
        .unwrap();
        let regions = RegionSet::new(BoxRegion::cube(1, -1.0, 1.0).unwrap(), BoxRegion::cube(1, -1.5, 1.5).unwrap(), BoxRegion::cube(1, -2.0, 2.0).unwrap()).unwrap();
        let cfg = SimConfig { t_max: 10.0, ..SimConfig::default() };
        let serial = basin_census(&sys, &regions, 0.2, 16, seed, &cfg, 1).unwrap();
        let parallel = basin_census(&sys, &regions, 0.2, 16, seed, &cfg, jobs).unwrap();
        prop_assert_eq!(&serial, &parallel);
        let o = &serial.outcomes;
        prop_assert_eq!(o.converged.total + o.limit_cycle + o.escaped + o.undecided, 16);
    }
}
