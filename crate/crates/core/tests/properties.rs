use std::f64::consts::PI;

use proptest::prelude::*;

use fbcsf::config::RunConfig;
use fbcsf::geometry::SupportArc;
use fbcsf::io::{fmt, read_checkpoint, write_checkpoint};
use fbcsf::oracle::{hausdorff, respace, Polyline};
use fbcsf::solver::FlowState;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn printed_floats_read_back_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(
        t in 0.0f64..1.0,
        lo in 0.0f64..0.5,
        width in 1.0f64..3.0,
        coeffs in proptest::collection::vec(-0.05f64..0.05, 1..5),
        n in 16usize..80,
    ) {
        let arc = SupportArc::from_fn(lo, lo + width, n, |th| {
            1.0 + coeffs.iter().enumerate().map(|(j, c)| c * (j as f64 * th).cos()).sum::<f64>()
        }).unwrap();
        let state = FlowState { t, arc };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        write_checkpoint(&path, &state).unwrap();
        let back = read_checkpoint(&path).unwrap();
        prop_assert_eq!(back.t.to_bits(), state.t.to_bits());
        prop_assert_eq!(back.arc.theta_lo.to_bits(), state.arc.theta_lo.to_bits());
        prop_assert_eq!(back.arc.theta_hi.to_bits(), state.arc.theta_hi.to_bits());
        prop_assert_eq!(back.arc.sigma, state.arc.sigma);
    }

    #[test]
    fn canonical_config_text_is_a_fixed_point(
        n in 16usize..2048,
        r0 in 0.05f64..0.6,
        pert in proptest::collection::vec(-0.02f64..0.02, 0..6),
        seed in any::<u64>(),
        lo in 0.05f64..0.5,
    ) {
        let list = pert.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(", ");
        let text = format!(
            "domain.kind = disk\ndomain.params = 1\ninitial.r0 = {r0}\ninitial.perturbation = {list}\n\
             solver.n = {n}\nseed = {seed}\nanalysis.window = {lo}, 0.95\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let canonical = c.to_text();
        let again = RunConfig::parse(&canonical).unwrap();
        prop_assert_eq!(&again, &c);
        prop_assert_eq!(again.to_text(), canonical);
        prop_assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hausdorff_is_a_symmetric_translation_distance(
        r in 0.2f64..2.0,
        dx in -0.5f64..0.5,
        dy in -0.5f64..0.5,
        m in 16usize..200,
    ) {
        let a = Polyline::circle([0.0, 0.0], r, m).points;
        let b: Vec<_> = a.iter().map(|p| [p[0] + dx, p[1] + dy]).collect();
        let d = hausdorff(&a, &b);
        prop_assert!((d - hausdorff(&b, &a)).abs() <= 1e-15);
        // vertices of a translated copy are at most the shift away
        prop_assert!(d <= (dx * dx + dy * dy).sqrt() + 1e-12);
        prop_assert_eq!(hausdorff(&a, &a), 0.0);
    }

    #[test]
    fn respacing_keeps_points_on_a_circle(r in 0.2f64..2.0, m in 24usize..200, k in 24usize..300) {
        // a regular polygon re-spaced by chord length stays close to its circle
        let a = Polyline::circle([0.1, -0.2], r, m).points;
        let b = respace(&a, k, true);
        prop_assert_eq!(b.len(), k);
        let h = 2.0 * PI * r / m as f64;
        for p in &b {
            let dist = ((p[0] - 0.1).powi(2) + (p[1] + 0.2).powi(2)).sqrt();
            prop_assert!((dist - r).abs() <= h * h / r, "{} vs {}", dist, r);
        }
    }
}
