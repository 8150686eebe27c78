use robust_growth::inputs::{linspace, solve_u_1d, u_pointwise, UField};
use robust_growth::pairs::{Example, Family};

fn u_of(field: &UField, z: &[f64]) -> f64 {
    let UField::ClosedForm(u) = field else { panic!("closed form expected") };
    let mut out = [0.0];
    u(z, &mut out);
    out[0]
}

/// Closed-form u against cumulative quadrature, both anchored at the grid's left end.
fn u_gap(family: &Family, y: f64, xs: &[f64]) -> f64 {
    let inputs = family.inputs().unwrap();
    let field = family.u_field();
    let u = |z: &[f64]| u_of(&field, z);
    let cum = solve_u_1d(&inputs, &[y], xs).unwrap();
    let u0 = u(&[xs[0], y]);
    let scale = xs.iter().map(|x| u(&[*x, y]).abs()).fold(1e-300, f64::max);
    xs.iter().zip(&cum).map(|(x, c)| (u(&[*x, y]) - u0 - c).abs()).fold(0.0, f64::max) / scale.max(1.0)
}

#[test]
fn tdist_u_matches_cumulative_quadrature() {
    let f = Family::default_for(Example::Tdist).unwrap();
    for y in [-1.0, 0.1, 2.0] {
        assert!(u_gap(&f, y, &linspace(-3.0, 3.0, 61)) < 1e-8);
    }
}

#[test]
fn stochvol_u_matches_cumulative_quadrature() {
    let f = Family::default_for(Example::Stochvol).unwrap();
    for y in [0.025, 0.04, 0.055] {
        assert!(u_gap(&f, y, &linspace(-1.0, 1.0, 41)) < 1e-8);
    }
}

#[test]
fn pointwise_u_matches_closed_form_for_tdist() {
    let f = Family::default_for(Example::Tdist).unwrap();
    let inputs = f.inputs().unwrap();
    let field = f.u_field();
    let u = |z: &[f64]| u_of(&field, z);
    for z in [[0.2, 0.1], [-1.5, 0.7], [2.5, -2.0]] {
        let q = u_pointwise(&inputs, &z).unwrap();
        assert!((q - u(&z)).abs() < 1e-9, "{z:?}: {q} vs {}", u(&z));
    }
}

#[test]
fn slice_tables_are_finite_for_every_family() {
    for example in Example::ALL {
        let f = Family::default_for(example).unwrap();
        let t = robust_growth::pairs::slice_table(&f, &f.default_x_grid(), &f.default_y_values()).unwrap();
        assert_eq!(t.theta_star.len(), 11);
        assert!(t.theta_hat.iter().all(|v| v.is_finite()));
        assert_eq!(t.to_csv().lines().filter(|l| !l.starts_with('#')).count(), f.default_x_grid().len() + 1);
    }
}
