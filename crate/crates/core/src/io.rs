//! Plain-text file formats.
//!
//! | content          | layout                                                  |
//! |------------------|---------------------------------------------------------|
//! | edge list        | `i j [weight]` per line, `#` comments, 0- or 1-based     |
//! | dense matrix     | one row per line, whitespace or comma separated         |
//! | covariates `X`   | CSV with a header row of column names                   |
//! | outcomes `y`     | one `0`/`1` per line                                    |
//! | draws            | CSV `iteration,beta0..,rho1..,sigma2,loglike`, one file per chain |

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::mcmc::{ChainDraws, DrawsStore};
use crate::netmat::AdjacencyGraph;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then_some((i + 1, l))
    })
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty())
}

/// Reads an edge list. With `n = None` the node count is one past the largest index.
pub fn read_edge_list(path: &Path, n: Option<usize>, directed: bool, one_based: bool) -> Result<AdjacencyGraph> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    for (line, l) in content_lines(&text) {
        let f: Vec<&str> = fields(l).collect();
        if !(2..=3).contains(&f.len()) {
            return Err(parse_err(path, line, format!("expected `i j [weight]`, got {} fields", f.len())));
        }
        let index = |s: &str| -> Result<usize> {
            let v: usize = s
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad node index `{s}`")))?;
            if one_based {
                v.checked_sub(1)
                    .ok_or_else(|| parse_err(path, line, "index 0 in a 1-based edge list"))
            } else {
                Ok(v)
            }
        };
        let (i, j) = (index(f[0])?, index(f[1])?);
        let w = match f.get(2) {
            Some(s) => s
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("bad weight `{s}`")))?,
            None => 1.0,
        };
        edges.push((line, i, j, w));
    }
    let n = n.unwrap_or_else(|| edges.iter().map(|&(_, i, j, _)| i.max(j) + 1).max().unwrap_or(0));
    let mut g = AdjacencyGraph::new(n, directed);
    for (line, i, j, w) in edges {
        g.add_edge(i, j, w).map_err(|e| parse_err(path, line, e.to_string()))?;
    }
    Ok(g)
}

pub fn write_edge_list(path: &Path, g: &AdjacencyGraph) -> Result<()> {
    let mut out = String::new();
    let a = g.adjacency();
    for i in 0..g.n() {
        let start = if g.is_directed() { 0 } else { i + 1 };
        for j in start..g.n() {
            if a[(i, j)] != 0.0 {
                out.push_str(&format!("{i} {j} {}\n", a[(i, j)]));
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a dense rectangular matrix.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in content_lines(&text) {
        let row = fields(l)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    line,
                    format!("row has {} entries, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads the covariate matrix and its column names.
pub fn read_covariates(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != names.len() {
            return Err(parse_err(path, line, format!("{} fields for {} columns", rec.len(), names.len())));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    let m = DMatrix::from_fn(rows.len(), names.len(), |i, j| rows[i][j]);
    Ok((names, m))
}

pub fn write_covariates(path: &Path, names: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for i in 0..x.nrows() {
        w.write_record(x.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads binary outcomes, one `0` or `1` per line.
pub fn read_outcomes(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    content_lines(&text)
        .map(|(line, l)| match l {
            "1" => Ok(true),
            "0" => Ok(false),
            other => Err(parse_err(path, line, format!("outcome must be 0 or 1, got `{other}`"))),
        })
        .collect()
}

pub fn write_outcomes(path: &Path, y: &[bool]) -> Result<()> {
    let mut out = String::with_capacity(2 * y.len());
    for &v in y {
        out.push_str(if v { "1\n" } else { "0\n" });
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the columns of a table with a header; all columns must have equal length.
pub fn write_columns(path: &Path, names: &[&str], columns: &[&[f64]]) -> Result<()> {
    let len = columns.first().map_or(0, |c| c.len());
    if names.len() != columns.len() || columns.iter().any(|c| c.len() != len) {
        return Err(Error::Dimension("ragged table".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(names)?;
    for r in 0..len {
        w.write_record(columns.iter().map(|c| format!("{:?}", c[r])))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one chain as CSV.
pub fn write_chain_draws(path: &Path, names: &[String], chain: &ChainDraws) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(names.iter().cloned());
    header.push("loglike".into());
    w.write_record(&header)?;
    for t in 0..chain.len() {
        let mut rec = vec![chain.iterations[t].to_string()];
        rec.extend(chain.columns.iter().map(|c| format!("{:?}", c[t])));
        rec.push(format!("{:?}", chain.loglike[t]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one chain file written by [`write_chain_draws`]; returns the parameter names too.
pub fn read_chain_draws(path: &Path, chain: usize) -> Result<(Vec<String>, ChainDraws)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "iteration" || header[header.len() - 1] != "loglike" {
        return Err(parse_err(path, 1, "expected header `iteration,<parameters>,loglike`"));
    }
    let names = header[1..header.len() - 1].to_vec();
    let mut draws = ChainDraws {
        chain,
        iterations: Vec::new(),
        columns: vec![Vec::new(); names.len()],
        loglike: Vec::new(),
        acceptance_rates: Vec::new(),
        proposal_sd: Vec::new(),
    };
    for (r, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("{} fields, expected {}", rec.len(), header.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("bad number `{s}`")))
        };
        draws.iterations.push(
            rec[0]
                .parse()
                .map_err(|_| parse_err(path, line, format!("bad iteration `{}`", &rec[0])))?,
        );
        for (p, col) in draws.columns.iter_mut().enumerate() {
            col.push(num(&rec[p + 1])?);
        }
        draws.loglike.push(num(&rec[header.len() - 1])?);
    }
    Ok((names, draws))
}

/// Reads several chain files (chain ids in argument order) into one store.
pub fn read_draws(paths: &[&Path]) -> Result<DrawsStore> {
    let mut names: Option<Vec<String>> = None;
    let mut chains = Vec::with_capacity(paths.len());
    for (c, p) in paths.iter().enumerate() {
        let (n, d) = read_chain_draws(p, c)?;
        match &names {
            Some(existing) if *existing != n => {
                return Err(parse_err(p, 1, "parameter columns differ from the first file"))
            }
            None => names = Some(n),
            _ => {}
        }
        chains.push(d);
    }
    let names = names.ok_or_else(|| Error::InsufficientData("no draw files given".into()))?;
    DrawsStore::new(names, chains)
}

/// Creates `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Writes `text` to `path`.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
