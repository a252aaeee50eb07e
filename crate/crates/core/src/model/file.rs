//! Sectioned plain-text system files.
//!
//! ```text
//! [dims]
//! n = 1, m = 1
//! [slow]
//! f1 = "-x1 - y1"
//! [fast]
//! A = [[-1]]; h1 = "x1"
//! [regions]
//! K = [-1, 1]
//! Ktilde = [-1.5, 1.5]
//! L = [-2, 2]
//! [config]
//! epsilon = 0.1, seed = 7, tmax = 200
//! ```
//!
//! Statements are `key = value`, separated by newlines, `,` or `;` outside
//! brackets and quotes. `#` starts a comment. Boxes are intervals joined by
//! `x`, `×` or `*`, optionally raised to a power (`[-5, 5]^2`). Bracketed
//! values may span several lines.

use super::{BoxRegion, FastSlowSystem, ModelError, RegionSet, SimConfig};
use crate::expr::{parse_expr, Expr, VarContext};
use nalgebra::DMatrix;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {source}")]
    Invalid { line: usize, source: ModelError },
    #[error("line {line}: in `{key}`: {source}")]
    Expr { line: usize, key: String, source: crate::expr::ParseError },
}

fn syntax(line: usize, message: impl Into<String>) -> LoadError {
    LoadError::Syntax { line, message: message.into() }
}

#[derive(Debug, Clone)]
pub struct SystemFile {
    pub system: FastSlowSystem,
    pub regions: RegionSet,
    pub config: SimConfig,
}

pub fn load_system(path: impl AsRef<Path>) -> Result<SystemFile, LoadError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    parse_system(&text)
}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
}

const SECTIONS: [&str; 5] = ["dims", "slow", "fast", "regions", "config"];

/// Splits a logical line at top-level `,` and `;`.
fn split_statements(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut quoted, mut start) = (0i32, false, 0);
    for (i, c) in text.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '[' | '(' if !quoted => depth += 1,
            ']' | ')' if !quoted => depth -= 1,
            ',' | ';' if !quoted && depth == 0 => {
                out.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&text[start..]);
    out
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn bracket_balance(s: &str) -> i32 {
    let mut quoted = false;
    let mut depth = 0;
    for c in s.chars() {
        match c {
            '"' => quoted = !quoted,
            '[' | '(' if !quoted => depth += 1,
            ']' | ')' if !quoted => depth -= 1,
            _ => {}
        }
    }
    depth
}

fn read_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, Entry>>, LoadError> {
    let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let line_no = idx + 1;
        let mut logical = strip_comment(raw).trim().to_string();
        if logical.is_empty() {
            continue;
        }
        if logical.starts_with('[') && logical.ends_with(']') && !logical.contains('=') {
            let name = logical[1..logical.len() - 1].trim().to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(syntax(line_no, format!("unknown section [{name}]")));
            }
            if sections.contains_key(&name) {
                return Err(syntax(line_no, format!("duplicate section [{name}]")));
            }
            sections.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        while bracket_balance(&logical) > 0 {
            match lines.next() {
                Some((_, more)) => {
                    logical.push(' ');
                    logical.push_str(strip_comment(more).trim());
                }
                None => return Err(syntax(line_no, "unterminated bracket")),
            }
        }
        if bracket_balance(&logical) < 0 {
            return Err(syntax(line_no, "unbalanced closing bracket"));
        }
        if logical.matches('"').count() % 2 == 1 {
            return Err(syntax(line_no, "unterminated string"));
        }
        let Some(section) = current.as_ref() else {
            return Err(syntax(line_no, "statement outside of any section"));
        };
        for stmt in split_statements(&logical) {
            let stmt = stmt.trim();
            if stmt.is_empty() {
                continue;
            }
            let Some((key, value)) = stmt.split_once('=') else {
                return Err(syntax(line_no, format!("expected `key = value`, found `{stmt}`")));
            };
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(syntax(line_no, format!("invalid key `{key}`")));
            }
            let table = sections.get_mut(section).expect("section exists");
            if table.contains_key(key) {
                return Err(syntax(line_no, format!("duplicate key `{key}` in [{section}]")));
            }
            table.insert(key.to_string(), Entry { value: value.trim().to_string(), line: line_no });
        }
    }
    Ok(sections)
}

fn number(s: &str, line: usize) -> Result<f64, LoadError> {
    let t = s.trim().replace('\u{2212}', "-");
    let v: f64 = t.parse().map_err(|_| syntax(line, format!("expected a number, found `{}`", s.trim())))?;
    if !v.is_finite() {
        return Err(syntax(line, format!("number `{}` is not finite", s.trim())));
    }
    Ok(v)
}

fn integer(e: &Entry) -> Result<u64, LoadError> {
    e.value.trim().parse().map_err(|_| syntax(e.line, format!("expected a non-negative integer, found `{}`", e.value)))
}

fn quoted(e: &Entry) -> Result<&str, LoadError> {
    let v = e.value.trim();
    if v.len() >= 2 && v.starts_with('"') && v.ends_with('"') {
        Ok(&v[1..v.len() - 1])
    } else {
        Err(syntax(e.line, format!("expected a quoted expression, found `{v}`")))
    }
}

/// `[a, b, c]` into its comma-separated items, without the brackets.
fn bracket_items(s: &str, line: usize) -> Result<Vec<&str>, LoadError> {
    let s = s.trim();
    if !(s.starts_with('[') && s.ends_with(']')) {
        return Err(syntax(line, format!("expected a bracketed list, found `{s}`")));
    }
    let inner = &s[1..s.len() - 1];
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(split_statements(inner).into_iter().map(str::trim).collect())
}

fn matrix(e: &Entry, m: usize) -> Result<DMatrix<f64>, LoadError> {
    let items = bracket_items(&e.value, e.line)?;
    let nested = items.first().is_some_and(|s| s.starts_with('['));
    let rows: Vec<Vec<f64>> = if nested {
        items
            .iter()
            .map(|row| bracket_items(row, e.line)?.iter().map(|v| number(v, e.line)).collect())
            .collect::<Result<_, _>>()?
    } else if m == 1 && items.len() == 1 {
        vec![vec![number(items[0], e.line)?]]
    } else {
        return Err(syntax(e.line, "matrix must be written as a list of rows, e.g. [[-1, 0], [0, -2]]"));
    };
    if rows.len() != m || rows.iter().any(|r| r.len() != m) {
        let cols = rows.first().map_or(0, Vec::len);
        return Err(LoadError::Invalid { line: e.line, source: ModelError::MatrixShape { m, rows: rows.len(), cols } });
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

fn boxed(e: &Entry, dim: usize) -> Result<BoxRegion, LoadError> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let text = e.value.replace('\u{00d7}', " x ");
    let mut rest = text.trim();
    loop {
        if !rest.starts_with('[') {
            return Err(syntax(e.line, format!("expected an interval `[lo, hi]`, found `{rest}`")));
        }
        let close = rest.find(']').ok_or_else(|| syntax(e.line, "unterminated interval"))?;
        let items = bracket_items(&rest[..=close], e.line)?;
        if items.len() != 2 {
            return Err(syntax(e.line, format!("interval needs two bounds, found {}", items.len())));
        }
        let (a, b) = (number(items[0], e.line)?, number(items[1], e.line)?);
        rest = rest[close + 1..].trim_start();
        let mut reps = 1;
        if let Some(p) = rest.strip_prefix('^') {
            let digits: String = p.trim_start().chars().take_while(char::is_ascii_digit).collect();
            reps = digits.parse().map_err(|_| syntax(e.line, "expected a repeat count after `^`"))?;
            rest = p.trim_start()[digits.len()..].trim_start();
        }
        for _ in 0..reps {
            lo.push(a);
            hi.push(b);
        }
        if rest.is_empty() {
            break;
        }
        match rest.chars().next() {
            Some('x' | 'X' | '*') => rest = rest[1..].trim_start(),
            _ => return Err(syntax(e.line, format!("unexpected `{rest}` after interval"))),
        }
    }
    if lo.len() != dim {
        return Err(syntax(e.line, format!("box has {} axes, expected {dim}", lo.len())));
    }
    BoxRegion::new(lo, hi).map_err(|source| LoadError::Invalid { line: e.line, source })
}

fn take<'a>(table: &'a BTreeMap<String, Entry>, key: &str, section: &str, line: usize) -> Result<&'a Entry, LoadError> {
    table.get(key).ok_or_else(|| syntax(line, format!("missing `{key}` in [{section}]")))
}

/// Parses and validates the text of a system file.
pub fn parse_system(text: &str) -> Result<SystemFile, LoadError> {
    let sections = read_sections(text)?;
    let last_line = text.lines().count().max(1);
    let section = |name: &str| {
        sections.get(name).ok_or_else(|| syntax(last_line, format!("missing section [{name}]")))
    };

    let dims = section("dims")?;
    let n = integer(take(dims, "n", "dims", last_line)?)? as usize;
    let m = integer(take(dims, "m", "dims", last_line)?)? as usize;
    if let Some((k, e)) = dims.iter().find(|(k, _)| *k != "n" && *k != "m") {
        return Err(syntax(e.line, format!("unknown key `{k}` in [dims]")));
    }
    if n == 0 || m == 0 || n > 64 || m > 64 {
        return Err(syntax(dims["n"].line, format!("dimensions must satisfy 1 <= n, m <= 64 (got n={n}, m={m})")));
    }

    let parse_vec = |table: &BTreeMap<String, Entry>, prefix: &str, count: usize, ctx: VarContext, sname: &str| {
        let mut out: Vec<Expr> = Vec::with_capacity(count);
        for i in 1..=count {
            let key = format!("{prefix}{i}");
            let e = take(table, &key, sname, last_line)?;
            let src = quoted(e)?;
            out.push(parse_expr(src, ctx).map_err(|source| LoadError::Expr { line: e.line, key: key.clone(), source })?);
        }
        Ok::<_, LoadError>(out)
    };

    let slow = section("slow")?;
    if let Some((k, e)) = slow.iter().find(|(k, _)| !is_indexed(k, "f", n)) {
        return Err(syntax(e.line, format!("unknown key `{k}` in [slow]")));
    }
    let f = parse_vec(slow, "f", n, VarContext::new(n, m), "slow")?;

    let fast = section("fast")?;
    if let Some((k, e)) = fast.iter().find(|(k, _)| *k != "A" && !is_indexed(k, "h", m)) {
        return Err(syntax(e.line, format!("unknown key `{k}` in [fast]")));
    }
    let a_entry = take(fast, "A", "fast", last_line)?;
    let a = matrix(a_entry, m)?;
    let h = parse_vec(fast, "h", m, VarContext::slow_only(n), "fast")?;
    let system = FastSlowSystem::new(f, a, h).map_err(|source| LoadError::Invalid { line: a_entry.line, source })?;

    let regions_t = section("regions")?;
    if let Some((k, e)) = regions_t.iter().find(|(k, _)| !matches!(k.as_str(), "K" | "Ktilde" | "L")) {
        return Err(syntax(e.line, format!("unknown key `{k}` in [regions]")));
    }
    let k_entry = take(regions_t, "K", "regions", last_line)?;
    let k = boxed(k_entry, n)?;
    let k_tilde = boxed(take(regions_t, "Ktilde", "regions", last_line)?, n)?;
    let l = boxed(take(regions_t, "L", "regions", last_line)?, m)?;
    let regions = RegionSet::new(k, k_tilde, l).map_err(|source| LoadError::Invalid { line: k_entry.line, source })?;

    let mut config = SimConfig::default();
    if let Some(cfg) = sections.get("config") {
        for (key, e) in cfg {
            match key.as_str() {
                "epsilon" => config.epsilon = number(&e.value, e.line)?,
                "seed" => config.seed = integer(e)?,
                "tmax" => config.t_max = number(&e.value, e.line)?,
                "atol" | "tol_abs" => config.atol = number(&e.value, e.line)?,
                "rtol" | "tol_rel" => config.rtol = number(&e.value, e.line)?,
                "sample_dt" => config.sample_dt = number(&e.value, e.line)?,
                "conv_tol" => config.conv_tol = number(&e.value, e.line)?,
                "cycle_tol" => config.cycle_tol = number(&e.value, e.line)?,
                "transient_fraction" => config.transient_fraction = number(&e.value, e.line)?,
                "stiff_threshold" => config.stiff_threshold = number(&e.value, e.line)?,
                "samples" => config.samples = integer(e)? as usize,
                _ => return Err(syntax(e.line, format!("unknown key `{key}` in [config]"))),
            }
        }
        if let Err(source) = config.validate() {
            let line = cfg.values().map(|e| e.line).min().unwrap_or(last_line);
            return Err(LoadError::Invalid { line, source });
        }
    }
    Ok(SystemFile { system, regions, config })
}

fn is_indexed(key: &str, prefix: &str, count: usize) -> bool {
    key.strip_prefix(prefix)
        .and_then(|d| if d.starts_with('0') { None } else { d.parse::<usize>().ok() })
        .is_some_and(|i| (1..=count).contains(&i))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INTRO: &str = r#"
# linear toy system
[dims]
n = 1, m = 1
[slow]
f1 = "-x1 - y1"
[fast]
A = [[-1]]; h1 = "x1"
[regions]
K = [-1, 1]
Ktilde = [-1.5, 1.5]
L = [-2, 2]
[config]
epsilon = 0.1, seed = 7, tmax = 50
"#;

    #[test]
    fn intro_file_loads() {
        let sf = parse_system(INTRO).unwrap();
        assert_eq!((sf.system.n(), sf.system.m()), (1, 1));
        assert_eq!(sf.config.epsilon, 0.1);
        assert_eq!(sf.config.seed, 7);
        assert_eq!(sf.config.t_max, 50.0);
        assert_eq!(sf.regions.l.lo(), &[-2.0]);
    }

    #[test]
    fn multi_axis_boxes_and_multiline_matrix() {
        let text = r#"
[dims]
n = 2
m = 2
[slow]
f1 = "y2 - x1 + 3*tanh(x2)"
f2 = "y1 - x2 + 3*tanh(x1)"
[fast]
A = [[-1, 0],
     [0, -1]]
h1 = "-tanh(x1)"; h2 = "-tanh(x2)"
[regions]
K = [-5, 5] × [-5, 5]
Ktilde = [-6, 6]^2
L = [-1.25, 1.25] x [-1.25, 1.25]
"#;
        let sf = parse_system(text).unwrap();
        assert_eq!(sf.regions.k_tilde.lo(), &[-6.0, -6.0]);
        assert_eq!(sf.system.a()[(1, 1)], -1.0);
        assert_eq!(sf.config, SimConfig::default());
    }

    fn err_line(text: &str) -> (usize, String) {
        match parse_system(text).unwrap_err() {
            LoadError::Syntax { line, message } => (line, message),
            LoadError::Invalid { line, source } => (line, source.to_string()),
            LoadError::Expr { line, source, .. } => (line, source.to_string()),
            LoadError::Io { .. } => unreachable!(),
        }
    }

    #[test]
    fn unstable_matrix_rejected_with_line() {
        let text = INTRO.replace("A = [[-1]]", "A = [[1]]");
        let (line, msg) = err_line(&text);
        assert_eq!(line, 8);
        assert!(msg.contains("not Hurwitz"), "{msg}");
    }

    #[test]
    fn bad_expression_reports_line() {
        let text = INTRO.replace("\"-x1 - y1\"", "\"-x1 - z1\"");
        let (line, msg) = err_line(&text);
        assert_eq!(line, 6);
        assert!(msg.contains("unknown identifier"), "{msg}");
        let text = INTRO.replace("h1 = \"x1\"", "h1 = \"y1\"");
        assert_eq!(err_line(&text).0, 8);
    }

    #[test]
    fn structural_errors() {
        assert!(err_line("n = 1").1.contains("outside of any section"));
        assert!(err_line("[bogus]").1.contains("unknown section"));
        assert!(err_line(&INTRO.replace("K = [-1, 1]", "K = [-1, 1")).1.contains("unterminated"));
        assert!(err_line(&INTRO.replace("Ktilde = [-1.5, 1.5]", "Ktilde = [-1, 1.5]")).1.contains("strictly inside"));
        assert!(err_line(&INTRO.replace("seed = 7", "seed = 7, speed = 3")).1.contains("unknown key"));
        assert!(err_line(&INTRO.replace("epsilon = 0.1", "epsilon = -0.1")).1.contains("epsilon"));
        assert!(err_line(&INTRO.replace("[config]", "[config]\n[config]")).1.contains("duplicate section"));
        assert!(err_line(&INTRO.replace("f1 = ", "f2 = ")).1.contains("unknown key"));
        assert!(err_line(&INTRO.replace("L = [-2, 2]", "L = [-2, 2] x [0, 1]")).1.contains("axes"));
    }

    #[test]
    fn missing_sections_and_keys() {
        let text = INTRO.replace("[regions]\nK = [-1, 1]\nKtilde = [-1.5, 1.5]\nL = [-2, 2]\n", "");
        assert!(err_line(&text).1.contains("missing section [regions]"));
        let text = INTRO.replace("; h1 = \"x1\"", "");
        assert!(err_line(&text).1.contains("missing `h1`"));
    }
}
