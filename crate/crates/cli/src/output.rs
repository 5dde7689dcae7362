//! Deterministic result emission: JSON with insertion-ordered keys and
//! floats printed at 17 significant digits, plus flat CSV tables keyed
//! by node words. Identical inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use lattice_bsde::bsde::Solution;
use lattice_bsde::{AdaptedField, Measure, PredictableField, ScenarioTree};

/// JSON value with deterministic serialization. Objects keep insertion
/// order; floats are rendered with 17 significant digits so equal runs
/// are byte-identical and values round-trip exactly.
#[derive(Debug, Clone)]
pub enum Json {
    Bool(bool),
    UInt(u64),
    Float(f64),
    Str(String),
    Array(Vec<Json>),
    Object(Vec<(String, Json)>),
}

impl Json {
    pub fn object() -> Json {
        Json::Object(Vec::new())
    }

    pub fn push(&mut self, key: &str, value: Json) {
        match self {
            Json::Object(entries) => entries.push((key.to_string(), value)),
            _ => panic!("push on non-object"),
        }
    }

    fn render_into(&self, out: &mut String) {
        match self {
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::UInt(u) => {
                let _ = write!(out, "{u}");
            }
            Json::Float(x) => out.push_str(&fmt_f64(*x)),
            Json::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        '\r' => out.push_str("\\r"),
                        c if (c as u32) < 0x20 => {
                            let _ = write!(out, "\\u{:04x}", c as u32);
                        }
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Array(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.render_into(out);
                }
                out.push(']');
            }
            Json::Object(entries) => {
                out.push('{');
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    Json::Str(k.clone()).render_into(out);
                    out.push(':');
                    v.render_into(out);
                }
                out.push('}');
            }
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s.push('\n');
        s
    }
}

/// 17 significant digits; enough to reconstruct the exact f64.
pub fn fmt_f64(x: f64) -> String {
    debug_assert!(x.is_finite(), "non-finite value in output");
    format!("{x:.16e}")
}

pub fn float_array(values: impl IntoIterator<Item = f64>) -> Json {
    Json::Array(values.into_iter().map(Json::Float).collect())
}

/// Word of a node as a dash-separated letter string; the root is "".
pub fn word_string(tree: &ScenarioTree, depth: usize, node: usize) -> String {
    tree.word(depth, node)
        .iter()
        .map(|j| j.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

fn parse_word(s: &str) -> Vec<usize> {
    if s.is_empty() {
        return Vec::new();
    }
    s.split('-').map(|t| t.parse().unwrap_or(0)).collect()
}

/// Solution CSV: one row per node of every depth; depth-n rows carry
/// the slope Zₙ attached at the parent (the slope in force over the
/// step into the node). The depth-0 row has empty slope columns.
pub fn solution_csv(tree: &ScenarioTree, solution: &Solution) -> String {
    let d = tree.dim();
    let mut out = String::from("time,node,y");
    for i in 1..=d {
        let _ = write!(out, ",z_{i}");
    }
    out.push('\n');
    let _ = write!(out, "0,,{}", fmt_f64(solution.y.at(0, 0)));
    for _ in 0..d {
        out.push(',');
    }
    out.push('\n');
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n) {
            let parent = tree.parent(node);
            let _ = write!(
                out,
                "{n},{},{}",
                word_string(tree, n, node),
                fmt_f64(solution.y.at(n, node))
            );
            for zi in solution.z.get(n, parent) {
                let _ = write!(out, ",{}", fmt_f64(*zi));
            }
            out.push('\n');
        }
    }
    out
}

/// Rebuilds a Solution from its CSV export.
pub fn solution_from_csv(tree: &ScenarioTree, text: &str) -> Result<Solution, String> {
    let d = tree.dim();
    let mut y_slices: Vec<Vec<f64>> = (0..=tree.horizon())
        .map(|n| vec![f64::NAN; tree.num_nodes(n)])
        .collect();
    let mut z_slices: Vec<Vec<Vec<f64>>> = (1..=tree.horizon())
        .map(|n| vec![vec![f64::NAN; d]; tree.num_nodes(n - 1)])
        .collect();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + d {
            return Err(format!("line {}: wrong column count", lineno + 1));
        }
        let time: usize = fields[0].parse().map_err(|_| "bad time")?;
        let word = parse_word(fields[1]);
        if word.len() != time {
            return Err(format!("line {}: word length mismatch", lineno + 1));
        }
        let node = tree.node_of_word(&word);
        let y: f64 = fields[2].parse().map_err(|_| "bad y value")?;
        y_slices[time][node] = y;
        if time >= 1 {
            let parent = tree.parent(node);
            for i in 0..d {
                let z: f64 = fields[3 + i].parse().map_err(|_| "bad z value")?;
                z_slices[time - 1][parent][i] = z;
            }
        }
    }
    let y = AdaptedField::from_slices(tree, y_slices).map_err(|e| e.to_string())?;
    let z = PredictableField::from_slices(tree, z_slices).map_err(|e| e.to_string())?;
    Ok(Solution { y, z })
}

/// Kernel measure as CSV: time, parent word, kernel weights.
pub fn measure_csv(tree: &ScenarioTree, measure: &Measure) -> String {
    let mut out = String::from("time,node");
    for j in 0..tree.arity() {
        let _ = write!(out, ",p_{j}");
    }
    out.push('\n');
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            let _ = write!(out, "{n},{}", word_string(tree, n - 1, node));
            for p in measure.kernel(n, node) {
                let _ = write!(out, ",{}", fmt_f64(*p));
            }
            out.push('\n');
        }
    }
    out
}

/// Per-time strategy table with the decomposition columns.
pub fn strategies_csv(
    tree: &ScenarioTree,
    pi: &PredictableField<Vec<f64>>,
    z_dagger: &PredictableField<Vec<f64>>,
    z_hedge: &PredictableField<Vec<f64>>,
    z_g: &PredictableField<Vec<f64>>,
) -> String {
    let d = tree.dim();
    let mut out = String::from("time,node");
    for (name, _) in [("pi", 0), ("z_dagger", 0), ("z_hedge", 0), ("z_g", 0)] {
        for i in 1..=d {
            let _ = write!(out, ",{name}_{i}");
        }
    }
    out.push('\n');
    for n in 1..=tree.horizon() {
        for node in 0..tree.num_nodes(n - 1) {
            let _ = write!(out, "{n},{}", word_string(tree, n - 1, node));
            for field in [pi, z_dagger, z_hedge, z_g] {
                for x in field.get(n, node) {
                    let _ = write!(out, ",{}", fmt_f64(*x));
                }
            }
            out.push('\n');
        }
    }
    out
}

/// Adapted field as flat (node word, value) rows.
pub fn adapted_csv(tree: &ScenarioTree, field: &AdaptedField) -> String {
    let mut out = String::from("time,node,value\n");
    for n in 0..=tree.horizon() {
        for node in 0..tree.num_nodes(n) {
            let _ = write!(
                out,
                "{n},{},{}\n",
                word_string(tree, n, node),
                fmt_f64(field.at(n, node))
            );
        }
    }
    out
}

/// Rebuilds a kernel measure from its CSV export.
pub fn measure_from_csv(tree: &ScenarioTree, text: &str) -> Result<Measure, String> {
    let arity = tree.arity();
    let mut slices: Vec<Vec<Vec<f64>>> = (1..=tree.horizon())
        .map(|n| vec![vec![f64::NAN; arity]; tree.num_nodes(n - 1)])
        .collect();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + arity {
            return Err(format!("line {}: wrong column count", lineno + 1));
        }
        let time: usize = fields[0].parse().map_err(|_| "bad time")?;
        let word = parse_word(fields[1]);
        let node = tree.node_of_word(&word);
        for j in 0..arity {
            slices[time - 1][node][j] = fields[2 + j].parse().map_err(|_| "bad weight")?;
        }
    }
    let field = PredictableField::from_slices(tree, slices).map_err(|e| e.to_string())?;
    Measure::from_kernel_field(tree, field).map_err(|e| e.to_string())
}

/// Rebuilds an adapted field from its flat CSV export.
pub fn adapted_from_csv(tree: &ScenarioTree, text: &str) -> Result<AdaptedField, String> {
    let mut slices: Vec<Vec<f64>> = (0..=tree.horizon())
        .map(|n| vec![f64::NAN; tree.num_nodes(n)])
        .collect();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(format!("line {}: wrong column count", lineno + 1));
        }
        let time: usize = fields[0].parse().map_err(|_| "bad time")?;
        let word = parse_word(fields[1]);
        let value: f64 = fields[2].parse().map_err(|_| "bad value")?;
        slices[time][tree.node_of_word(&word)] = value;
    }
    AdaptedField::from_slices(tree, slices).map_err(|e| e.to_string())
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}
