//! Dataset CSV files and ground-truth sidecars.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KDnf, Literal, Sample, Term};
use crate::synth::GroundTruth;

fn csv_error(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Writes `x1..xn,y1..yd,z` with `0`/`1` attributes and shortest
/// round-trip floats.
pub fn write_dataset<W: Write>(samples: &[Sample], out: W) -> Result<()> {
    let (n, d) = samples.first().map_or((0, 0), |s| (s.n(), s.d()));
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<String> = (1..=n).map(|a| format!("x{a}")).collect();
    header.extend((1..=d).map(|a| format!("y{a}")));
    header.push("z".into());
    w.write_record(&header).map_err(csv_error)?;
    for (i, s) in samples.iter().enumerate() {
        if s.n() != n || s.d() != d {
            return Err(Error::Input(format!("sample {i} has a different shape from sample 0")));
        }
        let mut row: Vec<String> = s.x.iter().map(|&b| if b { "1" } else { "0" }.to_string()).collect();
        row.extend(s.y.iter().map(|v| v.to_string()));
        row.push(s.z.to_string());
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, usize)> {
    let cols: Vec<&str> = header.iter().collect();
    let n = cols.iter().take_while(|c| c.starts_with('x')).count();
    let d = cols[n..].iter().take_while(|c| c.starts_with('y')).count();
    let expected: Vec<String> = (1..=n)
        .map(|a| format!("x{a}"))
        .chain((1..=d).map(|a| format!("y{a}")))
        .chain(std::iter::once("z".to_string()))
        .collect();
    if cols != expected {
        return Err(Error::Input(format!(
            "bad header {:?}; expected x1..xn,y1..yd,z",
            cols.join(",")
        )));
    }
    Ok((n, d))
}

pub fn read_dataset<R: Read>(input: R) -> Result<Vec<Sample>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let (n, d) = parse_header(r.headers().map_err(csv_error)?)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i + 2;
        let x = (0..n)
            .map(|a| match &rec[a] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::Input(format!("line {line}: attribute x{} is {other:?}, not 0/1", a + 1))),
            })
            .collect::<Result<Vec<bool>>>()?;
        let num = |c: usize| -> Result<f64> {
            let v: f64 = rec[c]
                .parse()
                .map_err(|_| Error::Input(format!("line {line}: column {} is not a number", c + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Input(format!("line {line}: column {} is not finite", c + 1)))
            }
        };
        let y = (n..n + d).map(num).collect::<Result<Vec<f64>>>()?;
        out.push(Sample::new(x, y, num(n + d)?));
    }
    Ok(out)
}

pub fn write_dataset_file(samples: &[Sample], path: &Path) -> Result<()> {
    write_dataset(samples, std::io::BufWriter::new(File::create(path)?))
}

pub fn read_dataset_file(path: &Path) -> Result<Vec<Sample>> {
    let f = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(f))
}

/// The on-disk ground truth: enough to score a run, nothing generator
/// specific.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub v_star: Vec<f64>,
    /// Each term as a list of `[attr, polarity]` literals.
    pub c_star: Vec<Vec<(usize, bool)>>,
    pub r: usize,
    pub inlier_ids: Vec<usize>,
    pub noise_sigma: f64,
}

impl Sidecar {
    pub fn from_truth(gt: &GroundTruth) -> Self {
        Self {
            v_star: gt.v_star.clone(),
            c_star: gt
                .c_star
                .terms
                .iter()
                .map(|t| t.literals.iter().map(|l| (l.attr, l.value)).collect())
                .collect(),
            r: gt.r,
            inlier_ids: gt.inlier_ids.clone(),
            noise_sigma: gt.noise_sigma,
        }
    }

    pub fn condition(&self) -> Result<KDnf> {
        let terms = self
            .c_star
            .iter()
            .map(|lits| Term::new(lits.iter().map(|&(a, v)| Literal::new(a, v)).collect()))
            .collect::<Result<Vec<Term>>>()?;
        Ok(KDnf::new(terms))
    }
}

/// `data.csv` pairs with `data.truth.json`.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("truth.json")
}

pub fn write_sidecar(s: &Sidecar, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, s)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let f = File::open(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}
