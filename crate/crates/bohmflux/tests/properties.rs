//! Property-based invariants for the pure building blocks.

use bohmflux::expr::Expr;
use bohmflux::oracles::QuadraticPairOracle as Qp;
use bohmflux::output::fmt_f64;
use bohmflux::state::{gaussian_product, GaussianParams, SpinPreset};
use bohmflux::Grid;
use proptest::prelude::*;

proptest! {
    // the flow decomposition of the quadratic-pair oracle closes exactly
    #[test]
    fn qp_flow_terms_close(
        t in 0.0..4.0f64,
        y in -3.0..3.0f64,
        ydot in -2.0..2.0f64,
    ) {
        let total = Qp::du(t, y, ydot);
        let sum = Qp::du_int(t, y) + Qp::du_ent(t, y, ydot);
        prop_assert!((total - sum).abs() <= 1e-12 * (1.0 + total.abs()));
    }

    // cumulative terms vanish at t = 0 and the mean identity holds per point
    #[test]
    fn qp_cumulative_starts_at_zero(x0 in -2.0..2.0f64, y0 in -2.0..2.0f64) {
        prop_assert!(Qp::cum_int(0.0, x0, y0).abs() < 1e-12);
        prop_assert!(Qp::cum_ent(0.0, x0, y0).abs() < 1e-12);
    }

    // expression display round-trips through the parser
    #[test]
    fn expr_display_roundtrip(a in -3.0..3.0f64, b in -3.0..3.0f64, c in 1.0..3.0f64) {
        let src = format!("{a}*x^2 + {b}*sin(t*{c}) - exp(-y*y/{c})");
        let e = Expr::parse(&src).unwrap();
        let rt = Expr::parse(&e.to_string()).unwrap();
        for &(x, y, t) in &[(0.3, -1.1, 0.7), (1.9, 0.2, 2.4)] {
            prop_assert_eq!(e.eval(x, y, t), rt.eval(x, y, t));
        }
    }

    // the symbolic time derivative agrees with finite differences
    #[test]
    fn expr_time_derivative_matches_fd(a in -2.0..2.0f64, w in 0.5..2.0f64) {
        let src = format!("{a}*cos({w}*t)*x^2 + t^2/{w}");
        let e = Expr::parse(&src).unwrap();
        let d = e.d_dt().unwrap();
        let (x, y) = (1.3, -0.4);
        for &t in &[0.0, 0.8, 2.2] {
            let h = 1e-5;
            let fd = (e.eval(x, y, t + h) - e.eval(x, y, t - h)) / (2.0 * h);
            prop_assert!((d.eval(x, y, t) - fd).abs() < 1e-7 * (1.0 + fd.abs()));
        }
    }

    // 17-significant-digit formatting round-trips any finite double
    #[test]
    fn float_format_roundtrips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    // interpolation is exact on grid nodes and bounded between them
    #[test]
    fn interpolation_stays_near_data(ox in -0.45..0.45f64, oy in -0.45..0.45f64) {
        let grid = Grid::square(64, 8.0).unwrap();
        let psi = gaussian_product(
            grid,
            GaussianParams::centered(1.0, 1.0, 0.0),
            SpinPreset::Scalar,
        )
        .unwrap();
        let (x, y) = (0.5 + ox * grid.dx(), -0.25 + oy * grid.dy());
        let v = psi.interpolate(x, y).unwrap()[0];
        // stays within the local data range up to the cubic overshoot bound
        let peak = psi.amplitudes[0][(36, 31)].norm();
        prop_assert!(v.norm() <= 1.2 * peak.max(1.0));
        prop_assert!(v.im.abs() < 1e-12);
    }
}
