//! Training-set generators (bars and stripes, labeled shifter, random) and
//! the plain-text dataset format.
//!
//! File format: optional `# key=value` header lines (`name`, `n_visible`,
//! `generator`), then one state per line as a string of `0`/`1` characters.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{RbmError, Result};
use crate::model::{BinaryState, RngStream};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    states: Vec<BinaryState>,
    n_visible: usize,
    pub name: String,
    /// Family plus parameters; [`Dataset::from_generator_spec`] regenerates it.
    pub generator_spec: String,
}

impl Dataset {
    /// Validates widths and rejects duplicates.
    pub fn new(name: impl Into<String>, n_visible: usize, states: Vec<BinaryState>, generator_spec: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(states.len());
        for s in &states {
            if s.len() != n_visible {
                return Err(RbmError::DimensionMismatch { expected: n_visible, got: s.len() });
            }
            if !seen.insert(s.key()) {
                return Err(RbmError::InvalidArgument(format!("duplicate state {s}")));
            }
        }
        Ok(Self { states, n_visible, name: name.into(), generator_spec: generator_spec.into() })
    }

    pub fn states(&self) -> &[BinaryState] {
        &self.states
    }

    pub fn n_visible(&self) -> usize {
        self.n_visible
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn contains(&self, s: &BinaryState) -> bool {
        self.states.contains(s)
    }

    /// Regenerates a dataset from a spec produced by one of the generators.
    pub fn from_generator_spec(spec: &str) -> Result<Self> {
        let mut parts = spec.split(':');
        let family = parts.next().unwrap_or_default();
        let mut kv = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| RbmError::Config(format!("malformed generator parameter {p:?}")))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> Result<u64> {
            kv.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| RbmError::Config(format!("generator {family:?} needs numeric {k}")))
        };
        match family {
            "bars_and_stripes" => Ok(gen_bars_and_stripes()),
            "labeled_shifter" => {
                let edge = match kv.get("edge").copied().unwrap_or("circular") {
                    "circular" => ShiftEdge::Circular,
                    "zero" => ShiftEdge::ZeroFill,
                    other => return Err(RbmError::Config(format!("unknown shifter edge {other:?}"))),
                };
                Ok(gen_labeled_shifter_with(edge))
            }
            "random" => gen_random(num("n")? as usize, num("seed")?),
            other => Err(RbmError::Config(format!("unknown dataset family {other:?}"))),
        }
    }
}

/// Every 4×4 image whose rows are each uniform, or whose columns are each
/// uniform; blank and full images appear once. Pixel `(r, c)` is bit `4r + c`.
pub fn gen_bars_and_stripes() -> Dataset {
    let mut states = Vec::with_capacity(30);
    let mut seen = HashSet::new();
    for pattern in 0u64..16 {
        let mut rows = 0u64;
        for r in 0..4 {
            if pattern >> r & 1 == 1 {
                rows |= 0xF << (4 * r);
            }
        }
        if seen.insert(rows) {
            states.push(BinaryState::from_key(rows, 16));
        }
    }
    for pattern in 0u64..16 {
        let mut cols = 0u64;
        for c in 0..4 {
            if pattern >> c & 1 == 1 {
                cols |= 0x1111 << c;
            }
        }
        if seen.insert(cols) {
            states.push(BinaryState::from_key(cols, 16));
        }
    }
    Dataset::new("BS", 16, states, "bars_and_stripes").expect("distinct by construction")
}

/// Edge handling of the shifter's one-position shifts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftEdge {
    Circular,
    ZeroFill,
}

/// Labeled shifter with circular shifts.
pub fn gen_labeled_shifter() -> Dataset {
    gen_labeled_shifter_with(ShiftEdge::Circular)
}

/// 19-bit states: bits 0–7 an 8-bit pattern (bit 0 leftmost), bits 8–10 a
/// code (`001`, `010`, `100`), bits 11–18 the pattern shifted left, copied,
/// or shifted right respectively.
pub fn gen_labeled_shifter_with(edge: ShiftEdge) -> Dataset {
    const CODES: [[bool; 3]; 3] = [[false, false, true], [false, true, false], [true, false, false]];
    let mut states = Vec::with_capacity(768);
    for pattern in 0u64..256 {
        for (k, code) in CODES.iter().enumerate() {
            let bit = |p: isize| -> bool {
                match edge {
                    ShiftEdge::Circular => pattern >> p.rem_euclid(8) & 1 == 1,
                    ShiftEdge::ZeroFill => (0..8).contains(&p) && pattern >> p & 1 == 1,
                }
            };
            let mut s = BinaryState::from_key(pattern, 19);
            for (c, &on) in code.iter().enumerate() {
                s.set(8 + c, on);
            }
            for pos in 0..8isize {
                // Shifting left moves every bit one place toward position 0.
                let src = match k {
                    0 => pos + 1,
                    1 => pos,
                    _ => pos - 1,
                };
                s.set(11 + pos as usize, bit(src));
            }
            states.push(s);
        }
    }
    let spec = match edge {
        ShiftEdge::Circular => "labeled_shifter:edge=circular",
        ShiftEdge::ZeroFill => "labeled_shifter:edge=zero",
    };
    Dataset::new("LSE", 19, states, spec).expect("distinct by construction")
}

/// `2^(n_visible/2)` distinct states drawn uniformly by rejection.
pub fn gen_random(n_visible: usize, seed: u64) -> Result<Dataset> {
    if n_visible == 0 || !n_visible.is_multiple_of(2) || n_visible > 62 {
        return Err(RbmError::InvalidArgument(format!(
            "random datasets need an even width in 2..=62, got {n_visible}"
        )));
    }
    let target = 1usize << (n_visible / 2);
    let mut rng = RngStream::new(seed);
    let mut seen = HashSet::with_capacity(target);
    let mut states = Vec::with_capacity(target);
    while states.len() < target {
        let key = rng.below(1u64 << n_visible);
        if seen.insert(key) {
            states.push(BinaryState::from_key(key, n_visible));
        }
    }
    Dataset::new(format!("RAN{n_visible}"), n_visible, states, format!("random:n={n_visible}:seed={seed}"))
}

/// Serializes `dataset` in the text format.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# name={}", dataset.name);
    let _ = writeln!(out, "# n_visible={}", dataset.n_visible);
    let _ = writeln!(out, "# generator={}", dataset.generator_spec);
    for s in dataset.states() {
        let _ = writeln!(out, "{s}");
    }
    out
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_string(dataset))?;
    Ok(())
}

/// Header values and state lines with their (1-based) line numbers.
pub(crate) struct ParsedStates {
    pub headers: Vec<(String, String)>,
    pub states: Vec<(usize, BinaryState)>,
    pub n_visible: Option<usize>,
}

impl ParsedStates {
    pub fn header(&self, key: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Shared line parser for dataset and neighborhood files.
pub(crate) fn parse_state_lines(text: &str) -> Result<ParsedStates> {
    let mut headers = Vec::new();
    let mut states = Vec::new();
    let mut n_visible: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some((k, v)) = rest.trim().split_once('=') {
                let (k, v) = (k.trim().to_string(), v.trim().to_string());
                if k == "n_visible" {
                    let n = v.parse().map_err(|_| RbmError::Parse { line: line_no, msg: format!("bad n_visible {v:?}") })?;
                    n_visible = Some(n);
                }
                headers.push((k, v));
            }
            continue;
        }
        let state: BinaryState = line.parse().map_err(|e: RbmError| RbmError::Parse { line: line_no, msg: e.to_string() })?;
        match n_visible {
            Some(n) if n != state.len() => {
                return Err(RbmError::Parse {
                    line: line_no,
                    msg: format!("expected {n} bits, found {}", state.len()),
                })
            }
            None => n_visible = Some(state.len()),
            _ => {}
        }
        states.push((line_no, state));
    }
    Ok(ParsedStates { headers, states, n_visible })
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let parsed = parse_state_lines(text)?;
    if parsed.states.is_empty() {
        return Err(RbmError::Parse { line: 0, msg: "no states".into() });
    }
    let n_visible = parsed.n_visible.expect("set by first state");
    let mut seen = HashSet::new();
    for (line, s) in &parsed.states {
        if !seen.insert(s.key()) {
            return Err(RbmError::Parse { line: *line, msg: format!("duplicate state {s}") });
        }
    }
    let name = parsed.header("name").unwrap_or("dataset").to_string();
    let generator = parsed.header("generator").unwrap_or("file").to_string();
    Dataset::new(name, n_visible, parsed.states.into_iter().map(|(_, s)| s).collect(), generator)
}

/// States of a file in the dataset format, duplicates allowed (sample lists).
pub fn parse_states_file(text: &str) -> Result<Vec<BinaryState>> {
    let parsed = parse_state_lines(text)?;
    if parsed.states.is_empty() {
        return Err(RbmError::Parse { line: 0, msg: "no states".into() });
    }
    Ok(parsed.states.into_iter().map(|(_, s)| s).collect())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&std::fs::read_to_string(path)?)
}
