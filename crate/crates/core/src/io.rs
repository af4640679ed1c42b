//! CSV and JSON readers and writers for datasets, chains, draws, surfaces
//! and point patterns. Numbers use the shortest representation that parses
//! back to the same `f64`; lines starting with `#` are comments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::gradient::GradientDraw;
use crate::grid::{GridSpec, SurfaceGrid, Window};
use crate::kernel::Location;
use crate::lgcp::{LgcpChain, LgcpSample, PointPattern};
use crate::model::{CovariateChain, CovariateSample, Dataset, PosteriorChain, ThetaSample};

/// Shortest round-trip text for `v`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

/// Writes `# comment` lines, a header and rows.
fn write_table(path: &Path, comments: &[String], header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut out = create(path)?;
    for c in comments {
        writeln!(out, "# {c}").map_err(|e| io_err(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| parse_err(path, e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a table, checking the header names the required columns. Returns
/// rows as strings plus the column index of each required name.
fn read_table(path: &Path, required: &[&str]) -> Result<(Vec<csv::StringRecord>, Vec<usize>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(open(path)?);
    let header = r.headers().map_err(|e| parse_err(path, e.to_string()))?.clone();
    let idx = required
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| parse_err(path, format!("missing column `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = r
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err(path, e.to_string()))?;
    Ok((rows, idx))
}

fn field(path: &Path, row: &csv::StringRecord, line: usize, col: usize) -> Result<f64> {
    let s = row.get(col).unwrap_or("");
    s.parse::<f64>()
        .map_err(|_| parse_err(path, format!("row {line}: `{s}` is not a number")))
}

fn opt_field(path: &Path, row: &csv::StringRecord, line: usize, col: usize) -> Result<Option<f64>> {
    match row.get(col).unwrap_or("") {
        "" | "NA" => Ok(None),
        _ => field(path, row, line, col).map(Some),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| parse_err(path, e.to_string()))?;
    writeln!(out).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(BufReader::new(open(path)?)).map_err(|e| parse_err(path, e.to_string()))
}

/// Sidecar path `foo.csv` → `foo.json`.
pub fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let rows = data
        .locations()
        .iter()
        .zip(data.x().iter().zip(data.y()))
        .map(|(s, (x, y))| vec![fmt_f64(s.s1()), fmt_f64(s.s2()), fmt_f64(*x), fmt_f64(*y)]);
    write_table(path, &[], &["s1", "s2", "x", "y"], rows)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (rows, c) = read_table(path, &["s1", "s2", "x", "y"])?;
    let mut locs = Vec::with_capacity(rows.len());
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        locs.push(Location::new(field(path, r, i + 1, c[0])?, field(path, r, i + 1, c[1])?)?);
        x.push(field(path, r, i + 1, c[2])?);
        y.push(field(path, r, i + 1, c[3])?);
    }
    Dataset::new(locs, x, y)
}

/// Covariate-only observations `s1,s2,x`.
pub fn read_covariate(path: &Path) -> Result<(Vec<Location>, Vec<f64>)> {
    let (rows, c) = read_table(path, &["s1", "s2", "x"])?;
    let mut locs = Vec::with_capacity(rows.len());
    let mut x = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        locs.push(Location::new(field(path, r, i + 1, c[0])?, field(path, r, i + 1, c[1])?)?);
        x.push(field(path, r, i + 1, c[2])?);
    }
    Ok((locs, x))
}

pub fn write_covariate(path: &Path, locations: &[Location], x: &[f64]) -> Result<()> {
    let rows = locations
        .iter()
        .zip(x)
        .map(|(s, v)| vec![fmt_f64(s.s1()), fmt_f64(s.s2()), fmt_f64(*v)]);
    write_table(path, &[], &["s1", "s2", "x"], rows)
}

fn iteration_of(burn_in: usize, thin: usize, k: usize) -> usize {
    burn_in + (k + 1) * thin - 1
}

/// Chain CSV plus a JSON sidecar holding the configuration, priors and
/// acceptance rates.
pub fn write_chain(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let (b, t) = (chain.config.burn_in, chain.config.thin);
    let rows = chain.samples.iter().enumerate().map(|(k, s)| {
        let mut row = vec![iteration_of(b, t, k).to_string()];
        row.extend(s.to_array().iter().map(|v| fmt_f64(*v)));
        row
    });
    let mut header = vec!["iter"];
    header.extend(ThetaSample::NAMES);
    write_table(path, &[], &header, rows)?;
    let meta = PosteriorChain {
        samples: Vec::new(),
        ..chain.clone()
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_chain(path: &Path) -> Result<PosteriorChain> {
    let (rows, c) = read_table(path, &ThetaSample::NAMES)?;
    let mut samples = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let mut a = [0.0; 7];
        for (k, col) in c.iter().enumerate() {
            a[k] = field(path, r, i + 1, *col)?;
        }
        samples.push(ThetaSample::from_array(a));
    }
    let mut chain: PosteriorChain = read_json(&sidecar_path(path))?;
    chain.samples = samples;
    Ok(chain)
}

pub fn write_covariate_chain(path: &Path, chain: &CovariateChain) -> Result<()> {
    let (b, t) = (chain.config.burn_in, chain.config.thin);
    let rows = chain.samples.iter().enumerate().map(|(k, s)| {
        vec![
            iteration_of(b, t, k).to_string(),
            fmt_f64(s.alpha0),
            fmt_f64(s.sigma2_x),
            fmt_f64(s.phi_x),
        ]
    });
    write_table(path, &[], &["iter", "alpha0", "sigma2_x", "phi_x"], rows)?;
    let meta = CovariateChain {
        samples: Vec::new(),
        ..chain.clone()
    };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_covariate_chain(path: &Path) -> Result<CovariateChain> {
    let (rows, c) = read_table(path, &["alpha0", "sigma2_x", "phi_x"])?;
    let mut samples = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        samples.push(CovariateSample {
            alpha0: field(path, r, i + 1, c[0])?,
            sigma2_x: field(path, r, i + 1, c[1])?,
            phi_x: field(path, r, i + 1, c[2])?,
        });
    }
    let mut chain: CovariateChain = read_json(&sidecar_path(path))?;
    chain.samples = samples;
    Ok(chain)
}

/// One row per (draw, target); absent quantities are written as `NA`.
pub fn write_gradient_draws(path: &Path, draws: &[GradientDraw]) -> Result<()> {
    let rows = draws.iter().flat_map(|d| {
        d.targets.iter().map(move |t| {
            let gy = t.grad_y.map(|g| (Some(g[0]), Some(g[1]))).unwrap_or((None, None));
            let gx = t.grad_x.map(|g| (Some(g[0]), Some(g[1]))).unwrap_or((None, None));
            vec![
                d.theta_index.to_string(),
                fmt_f64(t.location.s1()),
                fmt_f64(t.location.s2()),
                opt(t.y),
                opt(t.x),
                opt(gy.0),
                opt(gy.1),
                opt(gx.0),
                opt(gx.1),
            ]
        })
    });
    write_table(
        path,
        &[],
        &["theta_index", "s1", "s2", "y", "x", "dy1", "dy2", "dx1", "dx2"],
        rows,
    )
}

pub fn read_gradient_draws(path: &Path) -> Result<Vec<GradientDraw>> {
    use crate::gradient::TargetDraw;
    let names = ["theta_index", "s1", "s2", "y", "x", "dy1", "dy2", "dx1", "dx2"];
    let (rows, c) = read_table(path, &names)?;
    let mut out: Vec<GradientDraw> = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let line = i + 1;
        let idx: usize = r
            .get(c[0])
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(path, format!("row {line}: bad theta_index")))?;
        let pair = |a: usize, b: usize| -> Result<Option<[f64; 2]>> {
            match (opt_field(path, r, line, c[a])?, opt_field(path, r, line, c[b])?) {
                (Some(p), Some(q)) => Ok(Some([p, q])),
                _ => Ok(None),
            }
        };
        let t = TargetDraw {
            location: Location::new(field(path, r, line, c[1])?, field(path, r, line, c[2])?)?,
            y: opt_field(path, r, line, c[3])?,
            x: opt_field(path, r, line, c[4])?,
            grad_y: pair(5, 6)?,
            grad_x: pair(7, 8)?,
        };
        match out.last_mut() {
            Some(d) if d.theta_index == idx => d.targets.push(t),
            _ => out.push(GradientDraw {
                theta_index: idx,
                targets: vec![t],
            }),
        }
    }
    Ok(out)
}

const GRID_KEYS: [&str; 7] = ["label", "s1_min", "s1_max", "s2_min", "s2_max", "nx", "ny"];

/// Surface CSV `s1,s2,value` (centroids, missing as `NA`) behind a `#`
/// header describing the grid.
pub fn write_surface(path: &Path, surface: &SurfaceGrid) -> Result<()> {
    let g = &surface.grid;
    let w = &g.window;
    let comments = vec![
        format!("label = {}", surface.label),
        format!("s1_min = {}", fmt_f64(w.s1_min)),
        format!("s1_max = {}", fmt_f64(w.s1_max)),
        format!("s2_min = {}", fmt_f64(w.s2_min)),
        format!("s2_max = {}", fmt_f64(w.s2_max)),
        format!("nx = {}", g.nx),
        format!("ny = {}", g.ny),
        format!("excluded = {}", surface.excluded.iter().sum::<usize>()),
    ];
    let rows = (0..g.len()).map(|c| {
        let s = g.centroid(c);
        vec![fmt_f64(s.s1()), fmt_f64(s.s2()), opt(surface.values[c])]
    });
    write_table(path, &comments, &["s1", "s2", "value"], rows)
}

pub fn read_surface(path: &Path) -> Result<SurfaceGrid> {
    let mut meta = std::collections::HashMap::new();
    for line in BufReader::new(open(path)?).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| parse_err(path, format!("missing `# {k} = …` header")))
    };
    for k in GRID_KEYS {
        get(k)?;
    }
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| parse_err(path, format!("header `{k}` is not a number")))
    };
    let count = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| parse_err(path, format!("header `{k}` is not a count")))
    };
    let grid = GridSpec::new(
        Window::new(num("s1_min")?, num("s1_max")?, num("s2_min")?, num("s2_max")?)?,
        count("nx")?,
        count("ny")?,
    )?;
    let (rows, c) = read_table(path, &["s1", "s2", "value"])?;
    if rows.len() != grid.len() {
        return Err(parse_err(path, format!("{} rows for {} cells", rows.len(), grid.len())));
    }
    let mut values = vec![None; grid.len()];
    for (i, r) in rows.iter().enumerate() {
        let s = Location::new(field(path, r, i + 1, c[0])?, field(path, r, i + 1, c[1])?)?;
        let cell = grid
            .cell_of(&s)
            .ok_or_else(|| parse_err(path, format!("row {}: point outside the grid", i + 1)))?;
        values[cell] = opt_field(path, r, i + 1, c[2])?;
    }
    SurfaceGrid::new(grid, values, get("label")?)
}

pub fn write_pattern(path: &Path, pattern: &PointPattern) -> Result<()> {
    let rows = pattern
        .events()
        .iter()
        .map(|s| vec![fmt_f64(s.s1()), fmt_f64(s.s2())]);
    write_table(path, &[], &["s1", "s2"], rows)
}

pub fn read_pattern(path: &Path, window: Window) -> Result<PointPattern> {
    let (rows, c) = read_table(path, &["s1", "s2"])?;
    let events = rows
        .iter()
        .enumerate()
        .map(|(i, r)| Location::new(field(path, r, i + 1, c[0])?, field(path, r, i + 1, c[1])?))
        .collect::<Result<Vec<_>>>()?;
    PointPattern::new(events, window)
}

/// LGCP chain as `iter,beta0,beta1,sigma2_z`, the latent field as
/// `iter,cell,w` (every `field_thin`-th retained draw) and a JSON sidecar.
pub fn write_lgcp_chain(path: &Path, field_path: &Path, chain: &LgcpChain, field_thin: usize) -> Result<()> {
    let (b, t) = (chain.config.burn_in, chain.config.thin);
    let rows = chain.samples.iter().enumerate().map(|(k, s)| {
        vec![
            iteration_of(b, t, k).to_string(),
            fmt_f64(s.beta0),
            fmt_f64(s.beta1),
            fmt_f64(s.sigma2_z),
        ]
    });
    write_table(path, &[], &["iter", "beta0", "beta1", "sigma2_z"], rows)?;
    let thin = field_thin.max(1);
    let field_rows = chain
        .samples
        .iter()
        .enumerate()
        .filter(|(k, _)| k % thin == 0)
        .flat_map(|(k, s)| {
            let it = iteration_of(b, t, k).to_string();
            s.w.iter()
                .enumerate()
                .map(move |(c, w)| vec![it.clone(), c.to_string(), fmt_f64(*w)])
        });
    write_table(field_path, &[], &["iter", "cell", "w"], field_rows)?;
    let meta = LgcpChain {
        samples: Vec::new(),
        ..chain.clone()
    };
    write_json(&sidecar_path(path), &meta)
}

/// Reads a chain and its field dump. With a thinned dump only the draws
/// whose field was written are returned.
pub fn read_lgcp_chain(path: &Path, field_path: &Path) -> Result<LgcpChain> {
    let mut chain: LgcpChain = read_json(&sidecar_path(path))?;
    let (rows, c) = read_table(path, &["iter", "beta0", "beta1", "sigma2_z"])?;
    let mut iters = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        iters.push(r.get(c[0]).unwrap_or("").to_string());
        chain.samples.push(LgcpSample {
            beta0: field(path, r, i + 1, c[1])?,
            beta1: field(path, r, i + 1, c[2])?,
            sigma2_z: field(path, r, i + 1, c[3])?,
            w: Vec::with_capacity(chain.grid.len()),
        });
    }
    let (frows, fc) = read_table(field_path, &["iter", "cell", "w"])?;
    let mut k = 0;
    for (i, r) in frows.iter().enumerate() {
        let it = r.get(fc[0]).unwrap_or("");
        while k < iters.len() && iters[k] != it {
            k += 1;
        }
        let s = chain
            .samples
            .get_mut(k)
            .ok_or_else(|| parse_err(field_path, format!("row {}: iteration {it} not in chain", i + 1)))?;
        s.w.push(field(field_path, r, i + 1, fc[2])?);
    }
    chain.samples.retain(|s| !s.w.is_empty());
    if chain.samples.is_empty() {
        return Err(parse_err(field_path, "latent field dump is empty"));
    }
    if chain.samples.iter().any(|s| s.w.len() != chain.grid.len()) {
        return Err(parse_err(field_path, "latent field dump is incomplete"));
    }
    Ok(chain)
}
