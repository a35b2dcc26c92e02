//! Line-oriented text formats for tensors, membership matrices, trees and
//! fitted models.
//!
//! Floats are written in shortest round-trip scientific notation, so a model
//! read back compares bit-for-bit equal to the one written.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::als::{CpModel, FitWarning};
use crate::coupled::{JointLambdas, JointModel, MembershipMatrix};
use crate::error::{Error, Result};
use crate::tensor::{FactorMatrix, SparseTensor4, ORDER};
use crate::tree::{HierarchyTree, NodeKind, NodeSpec};

/// Provenance lines stored alongside a model.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModelMeta {
    /// Hash of the snapshot manifest the model was fitted on.
    pub manifest_hash: Option<String>,
    /// Effective run configuration, as JSON.
    pub config: Option<String>,
}

struct Lines<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Lines { lines, pos: 0 }
    }

    fn last_line(&self) -> usize {
        self.lines.last().map_or(1, |l| l.0)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self.lines.get(self.pos).copied().ok_or_else(|| {
            Error::format(
                self.last_line(),
                format!("unexpected end of input, expected {what}"),
            )
        })?;
        self.pos += 1;
        Ok(line)
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).map(|l| l.1)
    }

    fn rest(&mut self) -> impl Iterator<Item = (usize, &'a str)> + '_ {
        let start = self.pos;
        self.pos = self.lines.len();
        self.lines[start..].iter().copied()
    }

    /// Next line, which must start with `keyword`; returns the remaining
    /// fields.
    fn keyword(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        let (n, line) = self.next(keyword)?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(keyword) {
            return Err(Error::format(
                n,
                format!("expected `{keyword}`, found {line:?}"),
            ));
        }
        Ok((n, fields.collect()))
    }
}

fn parse<T: FromStr>(line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::format(line, format!("cannot parse {field:?}")))
}

fn parse_all<T: FromStr>(line: usize, fields: &[&str]) -> Result<Vec<T>> {
    fields.iter().map(|f| parse(line, f)).collect()
}

fn exact<T: FromStr>(line: usize, fields: &[&str], n: usize) -> Result<Vec<T>> {
    if fields.len() != n {
        return Err(Error::format(
            line,
            format!("expected {n} fields, found {}", fields.len()),
        ));
    }
    parse_all(line, fields)
}

fn push_floats(out: &mut String, label: &str, values: &[f64]) {
    out.push_str(label);
    for v in values {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

pub fn write_tensor(x: &SparseTensor4) -> String {
    let [i, j, k, l] = x.dims();
    let mut out = format!("dims {i} {j} {k} {l}\n");
    for (idx, v) in x.entries() {
        let _ = writeln!(out, "{} {} {} {} {v:e}", idx[0], idx[1], idx[2], idx[3]);
    }
    out
}

pub fn read_tensor(text: &str) -> Result<SparseTensor4> {
    let mut lines = Lines::new(text);
    let (n, fields) = lines.keyword("dims")?;
    let d: Vec<usize> = exact(n, &fields, ORDER)?;
    let mut entries = Vec::new();
    for (n, line) in lines.rest() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != ORDER + 1 {
            return Err(Error::format(
                n,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let idx: Vec<usize> = parse_all(n, &fields[..ORDER])?;
        let v: f64 = parse(n, fields[ORDER])?;
        entries.push(([idx[0], idx[1], idx[2], idx[3]], v));
    }
    SparseTensor4::new([d[0], d[1], d[2], d[3]], entries)
}

pub fn write_membership(m: &MembershipMatrix) -> String {
    let mut out = format!("{} {}\n", m.rows(), m.cols());
    for &(r, c) in m.entries() {
        let _ = writeln!(out, "{r} {c}");
    }
    out
}

pub fn read_membership(text: &str) -> Result<MembershipMatrix> {
    let mut lines = Lines::new(text);
    let (n, header) = lines.next("`rows cols` header")?;
    let dims: Vec<usize> = exact(n, &header.split_whitespace().collect::<Vec<_>>(), 2)?;
    let mut entries = Vec::new();
    for (n, line) in lines.rest() {
        let rc: Vec<usize> = exact(n, &line.split_whitespace().collect::<Vec<_>>(), 2)?;
        entries.push((rc[0], rc[1]));
    }
    MembershipMatrix::new(dims[0], dims[1], entries)
}

/// One node per line in depth-first preorder, indented two spaces per level:
/// `level id parent s g` for internal nodes and `level id parent leaf row`
/// for leaves, with `-` as the root's parent.
pub fn write_tree(tree: &HierarchyTree) -> String {
    let mut out = String::new();
    let mut stack = vec![tree.root()];
    while let Some(id) = stack.pop() {
        let node = tree.node(id);
        let parent = node.parent.map_or("-".to_string(), |p| p.to_string());
        let indent = "  ".repeat(node.level);
        match node.kind {
            NodeKind::Internal { s, g } => {
                let _ = writeln!(out, "{indent}{} {id} {parent} {s:e} {g:e}", node.level);
            }
            NodeKind::Leaf { row } => {
                let _ = writeln!(out, "{indent}{} {id} {parent} leaf {row}", node.level);
            }
        }
        stack.extend(node.children.iter().rev());
    }
    out
}

pub fn read_tree(text: &str) -> Result<HierarchyTree> {
    let mut specs = Vec::new();
    for (n, line) in Lines::new(text).rest() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 5 {
            return Err(Error::format(
                n,
                format!("expected 5 fields, found {}", f.len()),
            ));
        }
        let parent = match f[2] {
            "-" => None,
            p => Some(parse(n, p)?),
        };
        let kind = if f[3] == "leaf" {
            NodeKind::Leaf {
                row: parse(n, f[4])?,
            }
        } else {
            NodeKind::Internal {
                s: parse(n, f[3])?,
                g: parse(n, f[4])?,
            }
        };
        specs.push(NodeSpec {
            level: parse(n, f[0])?,
            id: parse(n, f[1])?,
            parent,
            kind,
        });
    }
    HierarchyTree::from_specs(specs)
}

fn write_matrix(out: &mut String, m: &FactorMatrix) {
    for i in 0..m.rows() {
        push_floats(out, "row", m.row(i));
    }
}

fn read_matrix(lines: &mut Lines<'_>, rows: usize, rank: usize) -> Result<FactorMatrix> {
    let mut data = Vec::with_capacity(rows * rank);
    for _ in 0..rows {
        let (n, fields) = lines.keyword("row")?;
        data.extend(exact::<f64>(n, &fields, rank)?);
    }
    FactorMatrix::from_row_major(rows, rank, data)
}

fn write_cp_body(out: &mut String, model: &CpModel) {
    let [i, j, k, l] = model.dims();
    let _ = writeln!(out, "cp-model rank {} dims {i} {j} {k} {l}", model.rank());
    for (mode, (f, s)) in model.factors().iter().zip(model.scales()).enumerate() {
        let _ = writeln!(out, "mode {mode}");
        push_floats(out, "scales", s);
        write_matrix(out, f);
    }
    push_floats(out, "norms", model.norms());
    push_floats(out, "fit_history", &model.fit_history);
    push_floats(out, "objective_history", &model.objective_history);
    for w in &model.warnings {
        let FitWarning::RankExceedsDimension { mode, size, rank } = w;
        let _ = writeln!(out, "warning rank_exceeds_dimension {mode} {size} {rank}");
    }
}

fn read_cp_body(lines: &mut Lines<'_>) -> Result<CpModel> {
    let (n, header) = lines.keyword("cp-model")?;
    if header.len() != 7 || header[0] != "rank" || header[2] != "dims" {
        return Err(Error::format(n, "expected `cp-model rank R dims I J K L`"));
    }
    let rank: usize = parse(n, header[1])?;
    let dims: Vec<usize> = parse_all(n, &header[3..])?;
    let mut factors: Vec<FactorMatrix> = Vec::with_capacity(ORDER);
    let mut scales: [Vec<f64>; ORDER] = Default::default();
    for (mode, scale) in scales.iter_mut().enumerate() {
        let (n, f) = lines.keyword("mode")?;
        if f != [mode.to_string().as_str()] {
            return Err(Error::format(n, format!("expected `mode {mode}`")));
        }
        let (n, f) = lines.keyword("scales")?;
        *scale = exact(n, &f, rank)?;
        factors.push(read_matrix(lines, dims[mode], rank)?);
    }
    let (n, f) = lines.keyword("norms")?;
    let norms = exact(n, &f, rank)?;
    let factors: [FactorMatrix; ORDER] = factors.try_into().expect("four modes read");
    let mut model =
        CpModel::from_parts(factors, norms, scales).map_err(|e| Error::format(n, e.to_string()))?;
    let (n, f) = lines.keyword("fit_history")?;
    model.fit_history = parse_all(n, &f)?;
    let (n, f) = lines.keyword("objective_history")?;
    model.objective_history = parse_all(n, &f)?;
    while lines.peek().is_some_and(|l| l.starts_with("warning ")) {
        let (n, f) = lines.keyword("warning")?;
        if f.first() != Some(&"rank_exceeds_dimension") {
            return Err(Error::format(n, "unknown warning"));
        }
        let v: Vec<usize> = exact(n, &f[1..], 3)?;
        model.warnings.push(FitWarning::RankExceedsDimension {
            mode: v[0],
            size: v[1],
            rank: v[2],
        });
    }
    Ok(model)
}

fn write_meta(out: &mut String, meta: &ModelMeta) {
    if let Some(h) = &meta.manifest_hash {
        let _ = writeln!(out, "meta manifest {h}");
    }
    if let Some(c) = &meta.config {
        let _ = writeln!(out, "meta config {}", c.replace('\n', " "));
    }
}

fn read_meta(lines: &mut Lines<'_>) -> Result<ModelMeta> {
    let mut meta = ModelMeta::default();
    for (n, line) in lines.rest() {
        let rest = line
            .strip_prefix("meta ")
            .ok_or_else(|| Error::format(n, format!("unexpected line {line:?}")))?;
        if let Some(h) = rest.strip_prefix("manifest ") {
            meta.manifest_hash = Some(h.trim().to_owned());
        } else if let Some(c) = rest.strip_prefix("config ") {
            meta.config = Some(c.to_owned());
        } else {
            return Err(Error::format(n, format!("unknown meta line {line:?}")));
        }
    }
    Ok(meta)
}

pub fn write_cp_model(model: &CpModel, meta: &ModelMeta) -> String {
    let mut out = String::new();
    write_cp_body(&mut out, model);
    write_meta(&mut out, meta);
    out
}

pub fn read_cp_model(text: &str) -> Result<(CpModel, ModelMeta)> {
    let mut lines = Lines::new(text);
    let model = read_cp_body(&mut lines)?;
    Ok((model, read_meta(&mut lines)?))
}

/// The CP model followed by `lambdas`, the `S`, `A`, `T` blocks and the
/// joint objective history.
pub fn write_joint_model(model: &JointModel, meta: &ModelMeta) -> String {
    let mut out = String::from("joint-model\n");
    write_cp_body(&mut out, &model.cp);
    let l = &model.lambdas;
    push_floats(&mut out, "lambdas", &[l.x, l.w, l.s, l.t, l.site]);
    for (name, m) in [("S", &model.s), ("A", &model.a), ("T", &model.t)] {
        let _ = writeln!(out, "{name} {}", m.rows());
        write_matrix(&mut out, m);
    }
    push_floats(&mut out, "joint_history", &model.objective_history);
    write_meta(&mut out, meta);
    out
}

pub fn read_joint_model(text: &str) -> Result<(JointModel, ModelMeta)> {
    let mut lines = Lines::new(text);
    let (n, f) = lines.keyword("joint-model")?;
    if !f.is_empty() {
        return Err(Error::format(n, "trailing fields after `joint-model`"));
    }
    let cp = read_cp_body(&mut lines)?;
    let rank = cp.rank();
    let (n, f) = lines.keyword("lambdas")?;
    let l: Vec<f64> = exact(n, &f, 5)?;
    let lambdas = JointLambdas {
        x: l[0],
        w: l[1],
        s: l[2],
        t: l[3],
        site: l[4],
    };
    let mut blocks = Vec::with_capacity(3);
    for name in ["S", "A", "T"] {
        let (n, f) = lines.keyword(name)?;
        let rows: Vec<usize> = exact(n, &f, 1)?;
        blocks.push(read_matrix(&mut lines, rows[0], rank)?);
    }
    let (n, f) = lines.keyword("joint_history")?;
    let objective_history = parse_all(n, &f)?;
    let meta = read_meta(&mut lines)?;
    let t = blocks.pop().expect("three blocks");
    let a = blocks.pop().expect("three blocks");
    let s = blocks.pop().expect("three blocks");
    Ok((
        JointModel {
            cp,
            s,
            a,
            t,
            lambdas,
            objective_history,
        },
        meta,
    ))
}
