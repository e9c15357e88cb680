use hermfunc::energy::{Evaluator, Mode};
use hermfunc::exact::{parse_rational, rational_string, Rational};
use hermfunc::harness::{parse_modes, JobConfig};
use hermfunc::scenarios::{
    default_grid, minimal_resolution, nonkaehler_metric, random_complex_field, random_potential, real_constant,
};
use hermfunc::spectral::{Form, Grid};
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid2() -> Grid {
    default_grid(2, minimal_resolution(2, 1)).unwrap()
}

fn one_form(grid: &Grid, rng: &mut ChaCha8Rng, holomorphic: bool) -> Form {
    let mut f = Form::zero(grid, holomorphic as usize, (!holomorphic) as usize);
    for j in 0..grid.n() {
        let c = random_complex_field(grid, rng).unwrap();
        let m = if holomorphic { Form::monomial(c, &[j], &[]) } else { Form::monomial(c, &[], &[j]) };
        f = f.add(&m).unwrap();
    }
    f
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rational_strings_round_trip(num in any::<i64>(), den in 1i64..1_000_000) {
        let r = Rational::new(BigInt::from(num), BigInt::from(den));
        prop_assert_eq!(parse_rational(&rational_string(&r)), Some(r));
    }

    #[test]
    fn rational_parser_never_panics(s in "\\PC{0,24}") {
        let _ = parse_rational(&s);
    }

    #[test]
    fn mode_parser_never_panics(s in "[-+0-9,;=ie. ]{0,40}") {
        let _ = parse_modes(&s);
    }

    #[test]
    fn config_parser_never_panics(s in "\\PC{0,80}") {
        let _ = JobConfig::from_toml_str(&s);
    }

    #[test]
    fn modes_round_trip(k in prop::collection::vec(-3i64..=3, 4), re in -1e3f64..1e3, im in -1e3f64..1e3) {
        let text = format!("{} = {re}{im:+}i", k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","));
        let m = parse_modes(&text).unwrap();
        prop_assert_eq!(m.len(), 1);
        prop_assert_eq!(&m[0].k, &k);
        prop_assert_eq!((m[0].amp.re, m[0].amp.im), (re, im));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn one_forms_anticommute(seed in any::<u64>()) {
        let g = grid2();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = one_form(&g, &mut rng, true);
        let b = one_form(&g, &mut rng, false);
        let ab = a.wedge(&b).unwrap();
        let ba = b.wedge(&a).unwrap();
        prop_assert!(ab.add(&ba).unwrap().max_abs() <= 1e-12 * (1.0 + ab.max_abs()));
        prop_assert!(a.wedge(&a).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn i_and_j_ignore_constant_shifts(seed in 0u64..1000, c in -2.0f64..2.0) {
        let g = grid2();
        let sc = nonkaehler_metric(&g, 0.3, seed).unwrap();
        let ev = Evaluator::new(&sc).unwrap();
        let phi = random_potential(&sc, seed + 1).unwrap().phi;
        let shifted = phi.add(&real_constant(&g, c)).unwrap();
        for mode in [Mode::Direct, Mode::Gradient] {
            let (a, b) = (ev.i_ay(&phi, mode).unwrap(), ev.i_ay(&shifted, mode).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs() + c.abs()));
            let (a, b) = (ev.j_ay(&phi, mode).unwrap(), ev.j_ay(&shifted, mode).unwrap());
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs() + c.abs()));
        }
    }
}
