use jetconn::exprlang::parse;
use jetconn::jet::JetDims;
use jetconn::smooth::{ScalarField, TaylorScalar};
use proptest::prelude::*;

fn dims() -> JetDims {
    JetDims::new(2, 2)
}

/// Source text of a random well-formed expression, with arbitrary
/// redundant parentheses.
fn source() -> impl Strategy<Value = String> {
    let leaf = prop::sample::select(vec![
        "t1", "t2", "x1", "x2", "v11", "v21", "v_1_2", "v22", "pi", "2", "0.5", "1.5e-3", "3E2", "7",
    ])
    .prop_map(str::to_string);
    leaf.prop_recursive(5, 40, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]), inner.clone())
                .prop_map(|(a, op, b)| format!("{a} {op} {b}")),
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}){op}({b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("({a})")),
            (prop::sample::select(vec!["sin", "cos", "tan", "exp", "log", "sqrt", "abs"]), inner)
                .prop_map(|(f, a)| format!("{f}({a})")),
        ]
    })
}

/// Length of the token prefix ending at the insertion point: a word run,
/// including the sign of a number's exponent.
fn token_prefix(before: &str) -> usize {
    let b = before.as_bytes();
    let mut k = b.len();
    while k > 0 {
        let c = b[k - 1];
        let exponent_sign = (c == b'+' || c == b'-')
            && k >= 3
            && matches!(b[k - 2], b'e' | b'E')
            && (b[k - 3].is_ascii_digit() || b[k - 3] == b'.');
        if c.is_ascii_alphanumeric() || c == b'.' || c == b'_' || exponent_sign {
            k -= 1;
        } else {
            break;
        }
    }
    b.len() - k
}

fn values(src: &str, at: &[f64]) -> Option<f64> {
    let args: Vec<TaylorScalar> = at.iter().map(|&c| TaylorScalar::constant(c)).collect();
    parse(src, dims()).unwrap().eval(&args).ok().map(|v| v.value())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printing_round_trips(src in source(), at in prop::collection::vec(0.1..0.9f64, 8)) {
        let first = parse(&src, dims()).unwrap();
        let printed = first.to_string();
        let second = parse(&printed, dims()).unwrap();
        prop_assert_eq!(first.root(), second.root());
        prop_assert_eq!(second.to_string(), printed.clone());
        let (a, b) = (values(&src, &at), values(&printed, &at));
        prop_assert!(a == b || a.zip(b).is_some_and(|(x, y)| x.is_nan() && y.is_nan()));
    }

    #[test]
    fn stray_character_is_located(src in source(), pos in any::<prop::sample::Index>(), bad in prop::sample::select(vec!['$', '#', '!', '@'])) {
        let k = pos.index(src.len() + 1);
        let mut broken = src.clone();
        broken.insert(k, bad);
        let word = token_prefix(&broken[..k]);
        let e = parse(&broken, dims()).unwrap_err();
        prop_assert!((k - word..=k).contains(&e.offset()), "offset {} outside {}..={}", e.offset(), k - word, k);
    }

    #[test]
    fn dangling_operator_points_at_end(src in source(), op in prop::sample::select(vec!["+", "*", "^", "/"])) {
        let broken = format!("{src} {op}");
        prop_assert_eq!(parse(&broken, dims()).unwrap_err().offset(), broken.len());
    }

    #[test]
    fn unmatched_close_is_located(src in source()) {
        let broken = format!("{src})");
        prop_assert_eq!(parse(&broken, dims()).unwrap_err().offset(), src.len());
    }

    #[test]
    fn out_of_range_index_is_located(src in source(), var in prop::sample::select(vec!["x3", "t7", "v31", "v13"])) {
        let broken = format!("{src} + {var}");
        prop_assert_eq!(parse(&broken, dims()).unwrap_err().offset(), src.len() + 3);
    }
}
