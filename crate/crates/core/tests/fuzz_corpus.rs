use fastslow::expr::{parse_expr, VarContext};
use fastslow::model::parse_system;
use std::path::PathBuf;

fn corpus(target: &str) -> Vec<String> {
    let dir: PathBuf = [env!("CARGO_MANIFEST_DIR"), "fuzz", "corpus", target].iter().collect();
    let mut out: Vec<String> = std::fs::read_dir(dir).unwrap().map(|e| std::fs::read_to_string(e.unwrap().path()).unwrap()).collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

#[test]
fn expression_seeds_round_trip() {
    let ctx = VarContext::new(3, 3);
    for text in corpus("parse_expr") {
        if let Ok(e) = parse_expr(&text, ctx) {
            let printed = e.to_string();
            let again = parse_expr(&printed, ctx).unwrap_or_else(|err| panic!("{printed:?} does not reparse: {err}"));
            assert_eq!(printed, again.to_string());
        }
    }
}

#[test]
fn system_seeds_parse() {
    for text in corpus("parse_system") {
        parse_system(&text).unwrap();
    }
}

proptest::proptest! {
    #[test]
    fn arbitrary_text_never_panics(text in "[-+*/^()., 0-9a-z_=\\[\\]\"\n#]{0,80}") {
        let ctx = VarContext::new(3, 3);
        if let Ok(e) = parse_expr(&text, ctx) {
            let printed = e.to_string();
            proptest::prop_assert!(parse_expr(&printed, ctx).is_ok(), "{:?} -> {:?}", text, printed);
        }
        let _ = parse_system(&text);
    }
}
