use num_rational::Rational64;
use proptest::prelude::*;

use orthofield::cli::parse_config;
use orthofield::conditional::{
    projection_in, verify_omd_at, Arithmetic, FootprintFunctional, QuadrantSigma, Site, Tabulated,
    VerifyOptions, DEFAULT_CUTOFF,
};
use orthofield::lattice::{increment, scaled_path, IndexVec, PrefixSumTable, Rect};
use orthofield::models::{FieldModel, InnovationSpec, Kernel, Support};
use orthofield::scalar::{Exact, Scalar, TableValues};

fn rademacher() -> Support {
    Support {
        values: vec![-1.0, 1.0],
        probs: vec![0.5, 0.5],
    }
}

/// A window `[lo, lo + shape)` with integer values.
fn int_field(dim: usize) -> impl Strategy<Value = (Rect, Vec<f64>)> {
    (
        prop::collection::vec(-3i64..3, dim),
        prop::collection::vec(1usize..6, dim),
    )
        .prop_flat_map(|(lo, shape)| {
            let volume = shape.iter().product::<usize>();
            let hi: Vec<i64> = lo.iter().zip(&shape).map(|(l, s)| l + *s as i64).collect();
            let rect = Rect::new(lo, hi).unwrap();
            (Just(rect), prop::collection::vec((-50i32..50).prop_map(f64::from), volume))
        })
}

fn naive_sum(window: &Rect, values: &[f64], r: &Rect) -> f64 {
    window
        .points()
        .zip(values)
        .filter(|(p, _)| r.contains(p))
        .map(|(_, v)| *v)
        .sum()
}

/// A sub-rectangle of `window`, possibly degenerate.
fn sub_rect(window: &Rect, cuts: &[(u8, u8)]) -> Rect {
    let d = window.dim();
    let mut lo = Vec::with_capacity(d);
    let mut hi = Vec::with_capacity(d);
    for a in 0..d {
        let (l, h) = (window.lo().get(a), window.hi().get(a));
        let span = (h - l + 1) as u8;
        let x = l + (cuts[a].0 % span) as i64;
        let y = l + (cuts[a].1 % span) as i64;
        lo.push(x.min(y));
        hi.push(x.max(y));
    }
    Rect::new(lo, hi).unwrap()
}

/// A functional on up to four fair-sign sites with dyadic values, so sums
/// and averages stay exact in floating point as well.
fn dyadic_functional(dim: usize) -> impl Strategy<Value = FootprintFunctional> {
    prop::collection::btree_set(prop::collection::vec(-1i64..=1, dim), 1..=4).prop_flat_map(|sites| {
        let sites: Vec<Site> = sites.into_iter().map(|at| Site::new(0, at)).collect();
        let n = 1usize << sites.len();
        prop::collection::vec((-64i32..64).prop_map(|k| k as f64 / 8.0), n).prop_map(move |values| {
            let supports = vec![rademacher(); sites.len()];
            FootprintFunctional::from_table(sites.clone(), supports, TableValues::Float(values)).unwrap()
        })
    })
}

fn anchor(dim: usize) -> impl Strategy<Value = IndexVec> {
    prop::collection::vec(-2i64..=1, dim).prop_map(IndexVec::new)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rect_sum_matches_naive_sum(
        (window, values) in (1usize..=3).prop_flat_map(int_field),
        cuts in prop::collection::vec((any::<u8>(), any::<u8>()), 3),
    ) {
        let table = PrefixSumTable::from_row_major(&window, &values).unwrap();
        let r = sub_rect(&window, &cuts);
        prop_assert_eq!(table.rect_sum(&r).unwrap(), naive_sum(&window, &values, &r));
    }

    #[test]
    fn rect_sum_is_close_on_real_values(
        (window, ints) in (1usize..=3).prop_flat_map(int_field),
        cuts in prop::collection::vec((any::<u8>(), any::<u8>()), 3),
    ) {
        let values: Vec<f64> = ints.iter().map(|v| v * 0.137 + 1e-3).collect();
        let table = PrefixSumTable::from_row_major(&window, &values).unwrap();
        let r = sub_rect(&window, &cuts);
        let naive = naive_sum(&window, &values, &r);
        let scale = values.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!((table.rect_sum(&r).unwrap() - naive).abs() <= 1e-9 * scale);
    }

    #[test]
    fn degenerate_rectangle_sums_to_zero(
        (window, values) in (1usize..=3).prop_flat_map(int_field),
        cuts in prop::collection::vec((any::<u8>(), any::<u8>()), 3),
        axis in 0usize..3,
    ) {
        let table = PrefixSumTable::from_row_major(&window, &values).unwrap();
        let r = sub_rect(&window, &cuts);
        let axis = axis % window.dim();
        let mut hi = r.hi().clone();
        hi.set(axis, r.lo().get(axis));
        let flat = Rect::new(r.lo().clone(), hi).unwrap();
        prop_assert_eq!(table.rect_sum(&flat).unwrap(), 0.0);
    }

    #[test]
    fn increment_is_additive_over_adjacent_rectangles(
        (window, ints) in (1usize..=3).prop_flat_map(int_field),
        cuts in prop::collection::vec((any::<u8>(), any::<u8>()), 3),
        axis in 0usize..3,
        at in any::<u8>(),
    ) {
        let values: Vec<f64> = ints.iter().map(|v| v / 7.0).collect();
        let table = PrefixSumTable::from_row_major(&window, &values).unwrap();
        let r = sub_rect(&window, &cuts);
        let axis = axis % window.dim();
        let (l, h) = (r.lo().get(axis), r.hi().get(axis));
        let mid = l + (at as i64) % (h - l + 1);
        let mut a_hi = r.hi().clone();
        a_hi.set(axis, mid);
        let mut b_lo = r.lo().clone();
        b_lo.set(axis, mid);
        let a = Rect::new(r.lo().clone(), a_hi).unwrap();
        let b = Rect::new(b_lo, r.hi().clone()).unwrap();
        let whole = increment(&table, &r, 3.0).unwrap();
        let parts = increment(&table, &a, 3.0).unwrap() + increment(&table, &b, 3.0).unwrap();
        prop_assert!((whole - parts).abs() <= 1e-12 * (1.0 + whole.abs()));
    }

    #[test]
    fn refined_grid_keeps_shared_values(
        (window, values) in (1usize..=2).prop_flat_map(|d| int_field(d).prop_filter("origin window", |(w, _)| {
            w.lo().coords().iter().all(|&c| c <= 0)
        })),
        coarse in 1i64..4,
        factor in 2i64..4,
    ) {
        let table = PrefixSumTable::from_row_major(&window, &values).unwrap();
        let sizes: Vec<usize> = window.hi().coords().iter().map(|&h| h.max(1) as usize).collect();
        prop_assume!(window.hi().coords().iter().all(|&h| h >= 1));
        let grid = |den: i64| -> Vec<Vec<Rational64>> {
            let ticks: Vec<Rational64> = (1..=den).map(|k| Rational64::new(k, den)).collect();
            let mut out = vec![Vec::new()];
            for _ in 0..sizes.len() {
                out = out.into_iter().flat_map(|p: Vec<Rational64>| ticks.iter().map(move |t| {
                    let mut p = p.clone();
                    p.push(*t);
                    p
                })).collect();
            }
            out
        };
        let c = scaled_path(&table, &sizes, &grid(coarse)).unwrap();
        let f = scaled_path(&table, &sizes, &grid(coarse * factor)).unwrap();
        for (p, v) in c.points.iter().zip(&c.values) {
            prop_assert_eq!(f.value_at(p), Some(*v));
        }
    }

    #[test]
    fn causal_linear_fields_read_only_the_past(
        terms in prop::collection::btree_map(prop::collection::vec(0i64..3, 2), -2.0f64..2.0, 1..5),
    ) {
        let kernel = Kernel::new(2, terms.into_iter().map(|(k, a)| (IndexVec::new(k), a))).unwrap();
        let model = FieldModel::linear(InnovationSpec::Rademacher, kernel);
        prop_assert!(model.is_causal());
        let compiled = model.compile().unwrap();
        prop_assert!(compiled.sites.iter().all(|s| s.offset.is_nonnegative()));
    }

    #[test]
    fn linear_second_moment_is_the_kernel_norm(
        terms in prop::collection::btree_map(prop::collection::vec(0i64..3, 2), (-8i32..8).prop_map(|k| k as f64 / 4.0), 1..5),
    ) {
        let kernel = Kernel::new(2, terms.into_iter().map(|(k, a)| (IndexVec::new(k), a))).unwrap();
        let expected = kernel.sum_sq();
        let model = FieldModel::linear(InnovationSpec::Rademacher, kernel);
        let x0 = FootprintFunctional::from_model(&model, &IndexVec::zeros(2)).unwrap();
        let t = Tabulated::<Exact>::tabulate(&x0, DEFAULT_CUTOFF).unwrap();
        let second = t.map(|v| v.clone() * v.clone()).mean();
        prop_assert_eq!(second, Exact::from_f64(expected));
    }

    #[test]
    fn tower_property_holds_exactly(f in dyadic_functional(2), u in anchor(2), lift in prop::collection::vec(0i64..2, 2)) {
        let a = u.add(&IndexVec::new(lift));
        let t = Tabulated::<Exact>::tabulate(&f, DEFAULT_CUTOFF).unwrap();
        let direct = t.conditional(&QuadrantSigma::new(u.clone()));
        let nested = t.conditional(&QuadrantSigma::new(a)).conditional(&QuadrantSigma::new(u));
        prop_assert_eq!(direct.values, nested.values);
    }

    #[test]
    fn filtration_commutes(f in dyadic_functional(3), u in anchor(3), a in anchor(3)) {
        let t = Tabulated::<f64>::tabulate(&f, DEFAULT_CUTOFF).unwrap();
        let both = t.conditional(&QuadrantSigma::new(a.clone())).conditional(&QuadrantSigma::new(u.clone()));
        let meet = t.conditional(&QuadrantSigma::new(u.meet(&a)));
        for (x, y) in both.values.iter().zip(&meet.values) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn conditioning_is_a_contraction(f in dyadic_functional(2), u in anchor(2)) {
        let t = Tabulated::<f64>::tabulate(&f, DEFAULT_CUTOFF).unwrap();
        let bound = t.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let c = t.conditional(&QuadrantSigma::new(u));
        prop_assert!(c.values.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn projections_are_orthomartingale_differences(f in dyadic_functional(2), u in anchor(2)) {
        let p = projection_in(&f, &u, Arithmetic::Float).unwrap();
        let opts = VerifyOptions { arithmetic: Arithmetic::Float, ..VerifyOptions::default() };
        prop_assert!(verify_omd_at(&p, &u, &opts).unwrap().pass);
    }

    #[test]
    fn canonical_config_round_trips(
        replicates in 1usize..100_000,
        base in 0u64..=i64::MAX as u64,
        pasts in prop::collection::vec(0u64..50, 0..4),
        n in 1usize..512,
        v in 1usize..512,
        threads in 1usize..16,
    ) {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("iid.toml"), FieldModel::iid(2, InnovationSpec::Rademacher).to_toml_string().unwrap()).unwrap();
        let text = format!(
            "experiment = \"clt-quenched\"\nmodel = \"iid.toml\"\nsizes = [[{n}, {v}]]\nreplicates = {replicates}\nthreads = {threads}\n\n[seeds]\nbase = {base}\nfrozen_pasts = {pasts:?}\n"
        );
        let first = parse_config(&text, Some(dir.path())).unwrap();
        let second = parse_config(&first.to_canonical().unwrap(), None).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first.to_canonical().unwrap(), second.to_canonical().unwrap());
    }
}
