#![no_main]

use fastslow::expr::{parse_expr, VarContext};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let ctx = VarContext::new(3, 3);
    if let Ok(e) = parse_expr(text, ctx) {
        let printed = e.to_string();
        let again = parse_expr(&printed, ctx).unwrap_or_else(|err| panic!("{printed:?} does not reparse: {err}"));
        assert_eq!(printed, again.to_string());
    }
});
