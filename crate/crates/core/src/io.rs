//! Text file formats: models, partitions, Cauchy data, geometry, field
//! exports and iteration logs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;

use crate::acquisition::{CauchyDataSet, Provenance, ReceiverArray, SourceRole, SourceSet};
use crate::error::{FwiError, Result};
use crate::grid::{Grid, NodalField};
use crate::helmholtz::ComplexField;
use crate::inversion::IterationRecord;
use crate::misfit::ReciprocityGapMatrix;
use crate::model::{PiecewiseLinearModel, SpeedBounds};
use crate::partition::Partition;

/// Lines of a text file with the byte offset at which each starts.
struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines { text, pos: 0 }
    }

    /// Next non-empty line and its offset.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        while self.pos < self.text.len() {
            let start = self.pos;
            let rest = &self.text[start..];
            let (line, adv) = match rest.find('\n') {
                Some(k) => (&rest[..k], k + 1),
                None => (rest, rest.len()),
            };
            self.pos += adv;
            let line = line.trim_end_matches('\r');
            if !line.trim().is_empty() {
                return Some((start, line));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_line().ok_or_else(|| FwiError::Parse {
            offset: self.text.len(),
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> FwiError {
    FwiError::Parse {
        offset,
        message: message.into(),
    }
}

fn parse_f64(offset: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(offset, format!("invalid number '{}'", tok.trim())))?;
    if !v.is_finite() {
        return Err(parse_err(offset, format!("non-finite value '{}'", tok.trim())));
    }
    Ok(v)
}

fn parse_usize(offset: usize, tok: &str) -> Result<usize> {
    tok.trim()
        .parse()
        .map_err(|_| parse_err(offset, format!("invalid integer '{}'", tok.trim())))
}

/// `key value` header line.
fn header_value<'a>(lines: &mut Lines<'a>, key: &str) -> Result<(usize, &'a str)> {
    let (off, line) = lines.expect(&format!("'{key}' header"))?;
    let mut it = line.splitn(2, char::is_whitespace);
    if it.next() != Some(key) {
        return Err(parse_err(off, format!("expected '{key}' header, found '{line}'")));
    }
    Ok((off, it.next().unwrap_or("").trim()))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

// ---------------------------------------------------------------- models

pub fn format_model(model: &PiecewiseLinearModel) -> String {
    let p = model.partition();
    let dim = p.grid().dim();
    let mut out = format!("plmodel {dim} {}\n", p.len());
    for j in 0..p.len() {
        let (a, slope) = model.subdomain_coefficients(j);
        let _ = write!(out, "{j} {}", fmt_f64(a));
        for s in slope {
            let _ = write!(out, " {}", fmt_f64(*s));
        }
        let _ = writeln!(out, " {}", u8::from(p.subdomain(j).frozen));
    }
    out
}

/// Reads coefficients and frozen flags; returns them for a partition
/// whose node map is known separately.
pub fn parse_model_coefficients(text: &str) -> Result<(usize, Vec<f64>, Vec<bool>)> {
    let mut lines = Lines::new(text);
    let (off, header) = lines.expect("model header")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 3 || tok[0] != "plmodel" {
        return Err(parse_err(off, "expected 'plmodel <dim> <N>'"));
    }
    let dim = parse_usize(off, tok[1])?;
    let n = parse_usize(off, tok[2])?;
    if !(dim == 2 || dim == 3) {
        return Err(parse_err(off, format!("dimension {dim} not supported")));
    }
    let mut coeffs = vec![0.0; n * (1 + dim)];
    let mut frozen = vec![false; n];
    for j in 0..n {
        let (off, line) = lines.expect(&format!("subdomain {j}"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != dim + 3 {
            return Err(parse_err(off, format!("expected {} fields, found {}", dim + 3, tok.len())));
        }
        if parse_usize(off, tok[0])? != j {
            return Err(parse_err(off, format!("expected subdomain index {j}")));
        }
        for k in 0..=dim {
            coeffs[j * (1 + dim) + k] = parse_f64(off, tok[1 + k])?;
        }
        frozen[j] = match tok[dim + 2] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(off, format!("frozen flag must be 0 or 1, got '{other}'"))),
        };
    }
    if let Some((off, _)) = lines.next_line() {
        return Err(parse_err(off, "trailing content after the last subdomain"));
    }
    Ok((dim, coeffs, frozen))
}

pub fn write_model(model: &PiecewiseLinearModel, path: &Path) -> Result<()> {
    fs::write(path, format_model(model))?;
    Ok(())
}

/// Reads a model defined on `partition`; frozen flags must agree.
pub fn read_model(path: &Path, partition: Arc<Partition>, bounds: SpeedBounds) -> Result<PiecewiseLinearModel> {
    let text = fs::read_to_string(path)?;
    let (dim, coeffs, frozen) = parse_model_coefficients(&text)?;
    if dim != partition.grid().dim() || frozen.len() != partition.len() {
        return Err(FwiError::Load(format!(
            "model has dim {dim} and {} subdomains, partition has dim {} and {}",
            frozen.len(),
            partition.grid().dim(),
            partition.len()
        )));
    }
    if frozen != partition.frozen_flags() {
        return Err(FwiError::Load("frozen flags differ from the partition".into()));
    }
    PiecewiseLinearModel::new(partition, coeffs, bounds)
}

/// Reads a model together with the node map of its partition.
pub fn read_model_and_partition(
    model_path: &Path,
    partition_path: &Path,
    grid: &Grid,
    bounds: SpeedBounds,
) -> Result<PiecewiseLinearModel> {
    let text = fs::read_to_string(model_path)?;
    let (_, coeffs, frozen) = parse_model_coefficients(&text)?;
    let owner = parse_partition_map(&fs::read_to_string(partition_path)?, grid)?;
    let partition = Arc::new(Partition::from_owner_map(grid, owner, &frozen)?);
    PiecewiseLinearModel::new(partition, coeffs, bounds)
}

// ------------------------------------------------------------ partitions

pub fn format_partition(partition: &Partition) -> String {
    let g = partition.grid();
    let dims: Vec<String> = g.nodes().iter().map(|n| n.to_string()).collect();
    let mut out = format!("partition {} {}\n", g.dim(), dims.join(" "));
    let nx = g.nodes()[0];
    for row in partition.owner_map().chunks(nx) {
        let r: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&r.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_partition(partition: &Partition, path: &Path) -> Result<()> {
    fs::write(path, format_partition(partition))?;
    Ok(())
}

pub fn parse_partition_map(text: &str, grid: &Grid) -> Result<Vec<usize>> {
    let mut lines = Lines::new(text);
    let (off, header) = lines.expect("partition header")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.first() != Some(&"partition") || tok.len() < 2 {
        return Err(parse_err(off, "expected 'partition <dim> <nx> [ny] [nz]'"));
    }
    let dim = parse_usize(off, tok[1])?;
    let counts = tok[2..]
        .iter()
        .map(|t| parse_usize(off, t))
        .collect::<Result<Vec<_>>>()?;
    if dim != grid.dim() || counts != grid.nodes() {
        return Err(FwiError::Load(format!(
            "partition grid {dim}d {counts:?} does not match {}",
            grid.describe()
        )));
    }
    let mut owner = Vec::with_capacity(grid.n_nodes());
    while let Some((off, line)) = lines.next_line() {
        for t in line.split_whitespace() {
            owner.push(parse_usize(off, t)?);
        }
    }
    if owner.len() != grid.n_nodes() {
        return Err(parse_err(
            text.len(),
            format!("expected {} node entries, found {}", grid.n_nodes(), owner.len()),
        ));
    }
    Ok(owner)
}

// ------------------------------------------------------------ Cauchy data

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Receiver geometry next to a data file.
pub fn receivers_path(data_path: &Path) -> PathBuf {
    sidecar(data_path, ".receivers.csv")
}

/// Observation-source geometry next to a data file.
pub fn sources_path(data_path: &Path) -> PathBuf {
    sidecar(data_path, ".sources.csv")
}

pub fn format_data(data: &CauchyDataSet) -> String {
    let snr = if data.provenance.snr_db.is_infinite() {
        "inf".to_string()
    } else {
        fmt_f64(data.provenance.snr_db)
    };
    let mut out = String::new();
    let _ = writeln!(out, "cauchy v1");
    let _ = writeln!(out, "freq {}", fmt_f64(data.freq_hz));
    let _ = writeln!(out, "nsrc {}", data.n_sources());
    let _ = writeln!(out, "nrcv {}", data.n_receivers());
    let _ = writeln!(out, "snr {snr}");
    let _ = writeln!(out, "seed {}", data.provenance.seed);
    let _ = writeln!(out, "grid {}", data.provenance.grid);
    let m = data.n_receivers();
    for z in 0..data.n_sources() {
        for i in 0..m {
            let (g, dg) = (data.g_obs[z * m + i], data.dg_obs[z * m + i]);
            let _ = writeln!(
                out,
                "{z}, {i}, {}, {}, {}, {}",
                fmt_f64(g.re),
                fmt_f64(g.im),
                fmt_f64(dg.re),
                fmt_f64(dg.im)
            );
        }
    }
    out
}

/// Parsed body of a data file, before geometry is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct DataBody {
    pub freq_hz: f64,
    pub n_src: usize,
    pub n_rcv: usize,
    pub provenance: Provenance,
    pub g_obs: Vec<Complex64>,
    pub dg_obs: Vec<Complex64>,
}

pub fn parse_data(text: &str) -> Result<DataBody> {
    let mut lines = Lines::new(text);
    let (off, magic) = lines.expect("'cauchy v1'")?;
    if magic.trim() != "cauchy v1" {
        return Err(parse_err(off, format!("expected 'cauchy v1', found '{magic}'")));
    }
    let (off, v) = header_value(&mut lines, "freq")?;
    let freq_hz = parse_f64(off, v)?;
    let (off, v) = header_value(&mut lines, "nsrc")?;
    let n_src = parse_usize(off, v)?;
    let (off, v) = header_value(&mut lines, "nrcv")?;
    let n_rcv = parse_usize(off, v)?;
    let (off, v) = header_value(&mut lines, "snr")?;
    let snr_db = if v == "inf" { f64::INFINITY } else { parse_f64(off, v)? };
    let (off, v) = header_value(&mut lines, "seed")?;
    let seed: u64 = v
        .parse()
        .map_err(|_| parse_err(off, format!("invalid seed '{v}'")))?;

    let n = n_src * n_rcv;
    let mut g_obs = vec![Complex64::new(0.0, 0.0); n];
    let mut dg_obs = vec![Complex64::new(0.0, 0.0); n];
    let mut grid = String::new();
    let mut first = lines.next_line();
    if let Some((_, line)) = first {
        if let Some(rest) = line.strip_prefix("grid ") {
            grid = rest.trim().to_string();
            first = lines.next_line();
        }
    }
    let mut pending = first;
    for k in 0..n {
        let (off, line) = match pending.take() {
            Some(l) => l,
            None => {
                return Err(parse_err(
                    text.len(),
                    format!("unexpected end of file after {k} of {n} data rows"),
                ))
            }
        };
        let tok: Vec<&str> = line.split(',').collect();
        if tok.len() != 6 {
            return Err(parse_err(off, format!("expected 6 fields, found {}", tok.len())));
        }
        let z = parse_usize(off, tok[0])?;
        let i = parse_usize(off, tok[1])?;
        if z != k / n_rcv || i != k % n_rcv {
            return Err(parse_err(off, format!("expected row ({}, {}), found ({z}, {i})", k / n_rcv, k % n_rcv)));
        }
        g_obs[k] = Complex64::new(parse_f64(off, tok[2])?, parse_f64(off, tok[3])?);
        dg_obs[k] = Complex64::new(parse_f64(off, tok[4])?, parse_f64(off, tok[5])?);
        pending = lines.next_line();
    }
    if let Some((off, _)) = pending {
        return Err(parse_err(off, "more data rows than nsrc × nrcv"));
    }
    Ok(DataBody {
        freq_hz,
        n_src,
        n_rcv,
        provenance: Provenance { grid, seed, snr_db },
        g_obs,
        dg_obs,
    })
}

pub fn format_points(dim: usize, positions: &[[f64; 3]], weights: &[f64]) -> String {
    let axes = if dim == 2 { "x, z" } else { "x, y, z" };
    let mut out = format!("id, {axes}, weight\n");
    for (k, (p, w)) in positions.iter().zip(weights).enumerate() {
        let _ = write!(out, "{k}");
        for v in &p[..dim] {
            let _ = write!(out, ", {}", fmt_f64(*v));
        }
        let _ = writeln!(out, ", {}", fmt_f64(*w));
    }
    out
}

pub fn parse_points(text: &str) -> Result<(usize, Vec<[f64; 3]>, Vec<f64>)> {
    let mut lines = Lines::new(text);
    let (off, header) = lines.expect("geometry header")?;
    let cols: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let dim = match cols.as_slice() {
        ["id", "x", "z", "weight"] => 2,
        ["id", "x", "y", "z", "weight"] => 3,
        _ => return Err(parse_err(off, format!("unexpected geometry header '{header}'"))),
    };
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    while let Some((off, line)) = lines.next_line() {
        let tok: Vec<&str> = line.split(',').collect();
        if tok.len() != dim + 2 {
            return Err(parse_err(off, format!("expected {} fields, found {}", dim + 2, tok.len())));
        }
        if parse_usize(off, tok[0])? != positions.len() {
            return Err(parse_err(off, "geometry ids must be consecutive from 0"));
        }
        let mut p = [0.0; 3];
        for d in 0..dim {
            p[d] = parse_f64(off, tok[1 + d])?;
        }
        positions.push(p);
        weights.push(parse_f64(off, tok[dim + 1])?);
    }
    Ok((dim, positions, weights))
}

/// Writes the data file and its two geometry side files.
pub fn write_data(data: &CauchyDataSet, path: &Path) -> Result<()> {
    fs::write(path, format_data(data))?;
    fs::write(
        receivers_path(path),
        format_points(data.receivers.dim(), data.receivers.positions(), data.receivers.weights()),
    )?;
    fs::write(
        sources_path(path),
        format_points(data.sources.dim(), data.sources.positions(), data.sources.weights()),
    )?;
    Ok(())
}

pub fn read_data(path: &Path) -> Result<CauchyDataSet> {
    let body = parse_data(&fs::read_to_string(path)?)?;
    let (rdim, rpos, rw) = parse_points(&fs::read_to_string(receivers_path(path))?)?;
    let (sdim, spos, sw) = parse_points(&fs::read_to_string(sources_path(path))?)?;
    if rdim != sdim {
        return Err(FwiError::Load("receiver and source files disagree on dimension".into()));
    }
    if rpos.len() != body.n_rcv || spos.len() != body.n_src {
        return Err(FwiError::Load(format!(
            "header declares {} sources × {} receivers, geometry files hold {} × {}",
            body.n_src,
            body.n_rcv,
            spos.len(),
            rpos.len()
        )));
    }
    let receivers = ReceiverArray::new(rdim, rpos, rw)?;
    let sources = SourceSet::new(sdim, spos, sw, SourceRole::Observation)?;
    CauchyDataSet::new(receivers, sources, body.g_obs, body.dg_obs, body.freq_hz, body.provenance)
}

/// Reads data and checks the recording frequency.
pub fn read_data_checked(path: &Path, freq_hz: f64) -> Result<CauchyDataSet> {
    let d = read_data(path)?;
    d.check_frequency(freq_hz)?;
    Ok(d)
}

// ---------------------------------------------------------------- fields

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldFormat {
    /// Legacy VTK structured points, ASCII.
    StructuredPoints,
    Csv,
}

impl std::str::FromStr for FieldFormat {
    type Err = FwiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vtk" | "structured-points" => Ok(FieldFormat::StructuredPoints),
            "csv" => Ok(FieldFormat::Csv),
            other => Err(FwiError::UnsupportedFormat(format!(
                "'{other}' (expected 'vtk' or 'csv')"
            ))),
        }
    }
}

fn vtk_header(grid: &Grid, title: &str) -> String {
    let mut dims = [1usize; 3];
    let mut sp = [1.0; 3];
    dims[..grid.dim()].copy_from_slice(grid.nodes());
    sp[..grid.dim()].copy_from_slice(grid.spacing());
    format!(
        "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET STRUCTURED_POINTS\n\
         DIMENSIONS {} {} {}\nORIGIN 0 0 0\nSPACING {} {} {}\nPOINT_DATA {}\n",
        dims[0],
        dims[1],
        dims[2],
        sp[0],
        sp[1],
        sp[2],
        grid.n_nodes()
    )
}

fn csv_index(grid: &Grid, i: usize) -> String {
    let m = grid.multi_index(i);
    let idx: Vec<String> = m[..grid.dim()].iter().map(|v| v.to_string()).collect();
    idx.join(", ")
}

pub fn format_real_field(field: &NodalField, format: FieldFormat) -> String {
    let g = &field.grid;
    match format {
        FieldFormat::StructuredPoints => {
            let mut out = vtk_header(g, &format!("field [{}]", field.unit));
            out.push_str("SCALARS value double 1\nLOOKUP_TABLE default\n");
            for v in &field.values {
                let _ = writeln!(out, "{}", fmt_f64(*v));
            }
            out
        }
        FieldFormat::Csv => {
            let axes = if g.dim() == 2 { "i, j" } else { "i, j, k" };
            let mut out = format!("{axes}, re, im\n");
            for (i, v) in field.values.iter().enumerate() {
                let _ = writeln!(out, "{}, {}, 0", csv_index(g, i), fmt_f64(*v));
            }
            out
        }
    }
}

pub fn format_complex_field(field: &ComplexField, format: FieldFormat) -> String {
    let g = &field.grid;
    match format {
        FieldFormat::StructuredPoints => {
            let mut out = vtk_header(g, "complex field");
            out.push_str("SCALARS re double 1\nLOOKUP_TABLE default\n");
            for v in &field.values {
                let _ = writeln!(out, "{}", fmt_f64(v.re));
            }
            out.push_str("SCALARS im double 1\nLOOKUP_TABLE default\n");
            for v in &field.values {
                let _ = writeln!(out, "{}", fmt_f64(v.im));
            }
            out
        }
        FieldFormat::Csv => {
            let axes = if g.dim() == 2 { "i, j" } else { "i, j, k" };
            let mut out = format!("{axes}, re, im\n");
            for (i, v) in field.values.iter().enumerate() {
                let _ = writeln!(out, "{}, {}, {}", csv_index(g, i), fmt_f64(v.re), fmt_f64(v.im));
            }
            out
        }
    }
}

// ------------------------------------------------------------------ logs

pub const ITERATION_LOG_HEADER: &str = "iter, J, grad_norm, alpha, solves";

pub fn format_iteration_row(r: &IterationRecord) -> String {
    format!(
        "{}, {}, {}, {}, {}",
        r.iteration,
        fmt_f64(r.j),
        fmt_f64(r.grad_norm),
        fmt_f64(r.alpha),
        r.solves
    )
}

pub fn format_iteration_log(records: &[IterationRecord]) -> String {
    let mut out = format!("{ITERATION_LOG_HEADER}\n");
    for r in records {
        out.push_str(&format_iteration_row(r));
        out.push('\n');
    }
    out
}

/// `|S[y, z]|²` as a CSV matrix, one row per simulation source.
pub fn format_pair_table(gap: &ReciprocityGapMatrix) -> String {
    let table = gap.pair_table();
    let mut out = String::new();
    for row in table.chunks(gap.n_obs) {
        let r: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&r.join(", "));
        out.push('\n');
    }
    out
}
