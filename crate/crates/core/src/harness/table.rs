use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;

use crate::engine::DiagnosticsTrace;
use crate::error::{Error, Result};
use crate::rng::{stable_hash, RandomSource};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// One replicate of one design.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dgp: String,
    pub design: String,
    pub t: usize,
    pub replicate: usize,
    pub tau_hat: f64,
    /// Final reservoir size `n_R(T)`.
    pub n_reservoir: usize,
    /// Mean distance between matched partners; `None` when nothing was paired.
    pub mean_pair_distance: Option<f64>,
    pub seed: u64,
    pub data_checksum: u64,
}

const HEADER: [&str; 9] = [
    "dgp",
    "design",
    "T",
    "replicate",
    "tau_hat",
    "n_reservoir",
    "mean_pair_distance",
    "seed",
    "data_checksum",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

/// Sample mean and unbiased sample variance of `tau_hat` in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub dgp: String,
    pub design: String,
    pub t: usize,
    pub replicates: usize,
    pub mean: f64,
    pub variance: f64,
}

impl CellSummary {
    pub fn std_error(&self) -> f64 {
        (self.variance / self.replicates as f64).sqrt()
    }
}

pub(crate) fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

impl ResultTable {
    /// `tau_hat` values of one cell, in replicate order.
    pub fn tau_hats(&self, dgp: &str, design: &str, t: usize) -> Vec<f64> {
        let mut rows: Vec<&ResultRow> = self
            .rows
            .iter()
            .filter(|r| r.dgp == dgp && r.design == design && r.t == t)
            .collect();
        rows.sort_by_key(|r| r.replicate);
        rows.iter().map(|r| r.tau_hat).collect()
    }

    /// Distinct `(dgp, design, T)` keys in order of first appearance.
    pub fn cell_keys(&self) -> Vec<(String, String, usize)> {
        let mut keys: Vec<(String, String, usize)> = Vec::new();
        for r in &self.rows {
            if !keys
                .iter()
                .any(|(g, d, t)| *g == r.dgp && *d == r.design && *t == r.t)
            {
                keys.push((r.dgp.clone(), r.design.clone(), r.t));
            }
        }
        keys
    }

    pub fn cells(&self) -> Vec<CellSummary> {
        self.cell_keys()
            .into_iter()
            .map(|(dgp, design, t)| {
                let xs = self.tau_hats(&dgp, &design, t);
                let (mean, variance) = mean_and_variance(&xs);
                CellSummary {
                    dgp,
                    design,
                    t,
                    replicates: xs.len(),
                    mean,
                    variance,
                }
            })
            .collect()
    }

    pub fn cell(&self, dgp: &str, design: &str, t: usize) -> Option<CellSummary> {
        self.cells()
            .into_iter()
            .find(|c| c.dgp == dgp && c.design == design && c.t == t)
    }
}

/// Bootstrap standard error of `stat(a*, b*)` where `a*` and `b*` are
/// resampled with the same replicate indices (the designs share data).
pub fn paired_bootstrap_se<F>(a: &[f64], b: &[f64], resamples: usize, seed: u64, stat: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::input(format!(
            "paired bootstrap needs two equal samples of size ≥ 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    let mut rng = RandomSource::new(seed, 0);
    let mut ra = vec![0.0; n];
    let mut rb = vec![0.0; n];
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for k in 0..n {
                let i = rng.rng().random_range(0..n);
                ra[k] = a[i];
                rb[k] = b[i];
            }
            stat(&ra, &rb)
        })
        .collect();
    Ok(mean_and_variance(&stats).1.sqrt())
}

/// Variance of one design normalized by IID's on the same replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub dgp: String,
    pub t: usize,
    pub design: String,
    pub replicates: usize,
    pub variance: f64,
    pub ratio: f64,
    /// Paired-bootstrap standard error of `ratio`.
    pub ratio_se: f64,
}

/// For every `(dgp, T)` with an IID cell: each design's sample variance,
/// its ratio to IID's and a paired-bootstrap standard error of the ratio.
pub fn compare_designs(table: &ResultTable, resamples: usize, seed: u64) -> Result<Vec<Comparison>> {
    let mut out = Vec::new();
    let mut groups: Vec<(String, usize)> = Vec::new();
    for (g, _, t) in table.cell_keys() {
        if !groups.contains(&(g.clone(), t)) {
            groups.push((g, t));
        }
    }
    for (dgp, t) in groups {
        let iid = table.tau_hats(&dgp, "iid", t);
        if iid.is_empty() {
            return Err(Error::Config(format!("no IID cell for {dgp} at T = {t}")));
        }
        let iid_var = mean_and_variance(&iid).1;
        for (g, design, tt) in table.cell_keys() {
            if g != dgp || tt != t {
                continue;
            }
            let xs = table.tau_hats(&dgp, &design, t);
            if xs.len() != iid.len() {
                return Err(Error::Data(format!(
                    "{design} has {} replicates at T = {t}, IID has {}",
                    xs.len(),
                    iid.len()
                )));
            }
            let variance = mean_and_variance(&xs).1;
            let boot_seed = stable_hash(&[
                &seed.to_le_bytes(),
                dgp.as_bytes(),
                &(t as u64).to_le_bytes(),
                design.as_bytes(),
            ]);
            let ratio_se = paired_bootstrap_se(&xs, &iid, resamples, boot_seed, |a, b| {
                mean_and_variance(a).1 / mean_and_variance(b).1
            })?;
            out.push(Comparison {
                dgp: dgp.clone(),
                t,
                design,
                replicates: xs.len(),
                variance,
                ratio: variance / iid_var,
                ratio_se,
            });
        }
    }
    Ok(out)
}

/// Floats carry 17 significant digits, enough to round-trip exactly.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file =
        File::create(path).map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.dgp.clone(),
            r.design.clone(),
            r.t.to_string(),
            r.replicate.to_string(),
            num(r.tau_hat),
            r.n_reservoir.to_string(),
            r.mean_pair_distance.map_or_else(String::new, num),
            r.seed.to_string(),
            format!("{:016x}", r.data_checksum),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    write_csv(table, create(path)?)
}

pub fn parse_csv(path: &Path) -> Result<ResultTable> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().ne(HEADER) {
        return Err(Error::Data(format!("{}: unexpected header", path.display())));
    }
    let bad =
        |field: &str, line: usize| Error::Data(format!("{}: bad {field} on record {line}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        rows.push(ResultRow {
            dgp: f(0).to_string(),
            design: f(1).to_string(),
            t: f(2).parse().map_err(|_| bad("T", i + 1))?,
            replicate: f(3).parse().map_err(|_| bad("replicate", i + 1))?,
            tau_hat: f(4).parse().map_err(|_| bad("tau_hat", i + 1))?,
            n_reservoir: f(5).parse().map_err(|_| bad("n_reservoir", i + 1))?,
            mean_pair_distance: match f(6) {
                "" => None,
                v => Some(v.parse().map_err(|_| bad("mean_pair_distance", i + 1))?),
            },
            seed: f(7).parse().map_err(|_| bad("seed", i + 1))?,
            data_checksum: u64::from_str_radix(f(8), 16).map_err(|_| bad("data_checksum", i + 1))?,
        });
    }
    Ok(ResultTable { rows })
}

/// Reservoir size and running mean intra-pair distance per step, one block
/// per design.
pub fn write_fig1<W: Write>(traces: &[(String, DiagnosticsTrace)], out: W) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["design", "t", "n_reservoir", "mean_pair_distance"])?;
    for (design, trace) in traces {
        for (i, (n_r, dist)) in trace
            .n_reservoir
            .iter()
            .zip(&trace.mean_pair_distance)
            .enumerate()
        {
            w.write_record([
                design.clone(),
                (i + 1).to_string(),
                n_r.to_string(),
                num(dist.unwrap_or(f64::NAN)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn emit_fig1(traces: &[(String, DiagnosticsTrace)], path: &Path) -> Result<()> {
    write_fig1(traces, create(path)?)
}

/// Sample variance of `tau_hat` against `T` for each design.
pub fn emit_fig2(table: &ResultTable, path: &Path) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    w.write_record(["dgp", "design", "T", "replicates", "mean", "variance"])?;
    for c in table.cells() {
        w.write_record([
            c.dgp,
            c.design,
            c.t.to_string(),
            c.replicates.to_string(),
            num(c.mean),
            num(c.variance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Raw and IID-normalized variances.
pub fn emit_fig3(comparisons: &[Comparison], path: &Path) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    w.write_record([
        "dgp",
        "T",
        "design",
        "replicates",
        "variance",
        "ratio",
        "ratio_se",
    ])?;
    for c in comparisons {
        w.write_record([
            c.dgp.clone(),
            c.t.to_string(),
            c.design.clone(),
            c.replicates.to_string(),
            num(c.variance),
            num(c.ratio),
            num(c.ratio_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(design: &str, replicate: usize, tau_hat: f64) -> ResultRow {
        ResultRow {
            dgp: "setting1".into(),
            design: design.into(),
            t: 10,
            replicate,
            tau_hat,
            n_reservoir: 3,
            mean_pair_distance: Some(0.1 + tau_hat / 3.0),
            seed: 12345678901234567890,
            data_checksum: 0xdead_beef_0000_0001,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        emit_csv(&ResultTable::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, HEADER.join(",") + "\n");
        assert_eq!(parse_csv(&path).unwrap(), ResultTable::default());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rows: Vec<ResultRow> = (0..20).map(|i| row("iid", i, (i as f64).sqrt() / 7.0)).collect();
        rows[3].mean_pair_distance = None;
        rows[4].tau_hat = -1e-300;
        let table = ResultTable { rows };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(&table, &path).unwrap();
        let back = parse_csv(&path).unwrap();
        assert_eq!(back.rows.len(), 20);
        for (a, b) in table.rows.iter().zip(&back.rows) {
            assert_eq!(a.tau_hat.to_bits(), b.tau_hat.to_bits());
            assert_eq!(
                a.mean_pair_distance.map(f64::to_bits),
                b.mean_pair_distance.map(f64::to_bits)
            );
            assert_eq!((a.seed, a.data_checksum), (b.seed, b.data_checksum));
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains('\r'));
    }

    #[test]
    fn aggregates_match_textbook_variance() {
        let xs = [1.0, 2.0, 4.0, 7.0];
        let table = ResultTable {
            rows: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| row("packing", i, x))
                .collect(),
        };
        let c = table.cell("setting1", "packing", 10).unwrap();
        assert_eq!(c.replicates, 4);
        assert!((c.mean - 3.5).abs() < 1e-12);
        assert!((c.variance - 7.0).abs() < 1e-12);
    }

    #[test]
    fn iid_alone_has_unit_ratio() {
        let table = ResultTable {
            rows: (0..50).map(|i| row("iid", i, (i as f64 * 0.37).sin())).collect(),
        };
        let cmp = compare_designs(&table, 200, 1).unwrap();
        assert_eq!(cmp.len(), 1);
        assert_eq!(cmp[0].ratio, 1.0);
        assert!(cmp[0].ratio_se.abs() < 1e-12);
    }

    #[test]
    fn missing_iid_is_an_error() {
        let table = ResultTable {
            rows: (0..5).map(|i| row("packing", i, i as f64)).collect(),
        };
        assert!(matches!(compare_designs(&table, 10, 1), Err(Error::Config(_))));
    }

    #[test]
    fn fig1_hand_trace() {
        let trace = DiagnosticsTrace {
            n_reservoir: vec![1, 2, 1, 2],
            mean_pair_distance: vec![None, None, Some(0.5), Some(0.5)],
            mean_decision_distance: vec![None, None, Some(0.5), Some(0.5)],
            final_matches: 1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig1.csv");
        emit_fig1(&[("packing".into(), trace)], &path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let n_r: Vec<usize> = r.records().map(|rec| rec.unwrap()[2].parse().unwrap()).collect();
        assert_eq!(n_r, [1, 2, 1, 2]);
    }

    #[test]
    fn unwritable_path() {
        let path = Path::new("/nonexistent-dir/x.csv");
        assert!(emit_csv(&ResultTable::default(), path).is_err());
        assert!(emit_fig2(&ResultTable::default(), path).is_err());
    }
}
