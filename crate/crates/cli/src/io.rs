use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mpnode::models::MlpSpec;
use mpnode::ode::Trajectory;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const TRAJECTORY_MAGIC: &str = "MPNODE-TRAJ";
pub const TRAJECTORY_VERSION: &str = "v1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Csv,
    Binary,
}

fn format_err(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?))
}

/// Header block, then one `t, q_0 … q_{d−1}` row per sample.
pub fn save_trajectory(path: &Path, traj: &Trajectory, encoding: Encoding) -> Result<(), CliError> {
    let mut w = create(path)?;
    let t = traj.times();
    let dt = if t.len() > 1 { t[1] - t[0] } else { 0.0 };
    let enc = match encoding {
        Encoding::Csv => "csv",
        Encoding::Binary => "binary",
    };
    let io = |e| CliError::io(path, e);
    write!(
        w,
        "{TRAJECTORY_MAGIC} {TRAJECTORY_VERSION}\nstate_dim={}\nnum_samples={}\ndt_sample={:.16e}\nencoding={enc}\nend_header\n",
        traj.state_dim(),
        traj.len(),
        dt
    )
    .map_err(io)?;
    for (i, &ti) in t.iter().enumerate() {
        let row = traj.state(i);
        match encoding {
            Encoding::Csv => {
                let mut line = format!("{ti:.16e}");
                for x in row.iter() {
                    line.push_str(&format!(",{x:.16e}"));
                }
                line.push('\n');
                w.write_all(line.as_bytes()).map_err(io)?;
            }
            Encoding::Binary => {
                w.write_all(&ti.to_le_bytes()).map_err(io)?;
                for x in row.iter() {
                    w.write_all(&x.to_le_bytes()).map_err(io)?;
                }
            }
        }
    }
    w.flush().map_err(io)
}

fn header_value<'a>(path: &Path, line: &'a str, key: &str) -> Result<&'a str, CliError> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .map(str::trim)
        .ok_or_else(|| format_err(path, format!("expected `{key}=` in header, found `{line}`")))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = BufReader::new(file);
    let read_line = |r: &mut BufReader<File>| -> Result<String, CliError> {
        let mut s = String::new();
        let n = r.read_line(&mut s).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            return Err(format_err(path, "unexpected end of header"));
        }
        Ok(s.trim_end_matches(['\n', '\r']).to_string())
    };
    let magic = read_line(&mut r)?;
    match magic.split_once(' ') {
        Some((TRAJECTORY_MAGIC, TRAJECTORY_VERSION)) => {}
        Some((TRAJECTORY_MAGIC, v)) => {
            return Err(CliError::Version {
                path: path.display().to_string(),
                found: v.to_string(),
            })
        }
        _ => return Err(format_err(path, "not a trajectory file")),
    }
    let parse_usize = |s: &str, key: &str| s.parse::<usize>().map_err(|_| format_err(path, format!("bad {key}")));
    let dim = parse_usize(header_value(path, &read_line(&mut r)?, "state_dim")?, "state_dim")?;
    let n = parse_usize(header_value(path, &read_line(&mut r)?, "num_samples")?, "num_samples")?;
    header_value(path, &read_line(&mut r)?, "dt_sample")?
        .parse::<f64>()
        .map_err(|_| format_err(path, "bad dt_sample"))?;
    let encoding = match header_value(path, &read_line(&mut r)?, "encoding")? {
        "csv" => Encoding::Csv,
        "binary" => Encoding::Binary,
        other => return Err(format_err(path, format!("unknown encoding `{other}`"))),
    };
    if read_line(&mut r)? != "end_header" {
        return Err(format_err(path, "missing end_header"));
    }
    if dim == 0 {
        return Err(format_err(path, "state_dim must be positive"));
    }
    let mut times = Vec::with_capacity(n);
    let mut states = Array2::zeros((n, dim));
    match encoding {
        Encoding::Csv => {
            let mut rows = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
            let mut count = 0;
            for rec in rows.records() {
                let rec = rec.map_err(|e| format_err(path, e.to_string()))?;
                if count >= n {
                    return Err(format_err(path, format!("more than {n} rows")));
                }
                if rec.len() != dim + 1 {
                    return Err(format_err(
                        path,
                        format!("row {count} has {} fields, expected {}", rec.len(), dim + 1),
                    ));
                }
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| format_err(path, format!("bad number `{s}` in row {count}")))
                };
                times.push(num(&rec[0])?);
                for j in 0..dim {
                    states[(count, j)] = num(&rec[j + 1])?;
                }
                count += 1;
            }
            if count != n {
                return Err(format_err(path, format!("truncated: {count} of {n} rows")));
            }
        }
        Encoding::Binary => {
            let mut buf = Vec::new();
            r.read_to_end(&mut buf).map_err(|e| CliError::io(path, e))?;
            let expect = n * (dim + 1) * 8;
            if buf.len() != expect {
                return Err(format_err(
                    path,
                    format!("expected {expect} data bytes, found {}", buf.len()),
                ));
            }
            let mut vals = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
            for i in 0..n {
                times.push(vals.next().expect("sized"));
                for j in 0..dim {
                    states[(i, j)] = vals.next().expect("sized");
                }
            }
        }
    }
    Trajectory::new(times, states).map_err(|e| format_err(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Absent for control problems, whose parameters are the control itself.
    pub mlp_spec: Option<MlpSpec>,
    pub param_values: Vec<f64>,
    pub training_step: usize,
    pub mu: f64,
    /// Hex-encoded random stream position.
    pub rng_state: String,
}

impl Checkpoint {
    pub fn new(
        mlp_spec: Option<MlpSpec>,
        param_values: Vec<f64>,
        training_step: usize,
        mu: f64,
        rng_word_pos: u128,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            mlp_spec,
            param_values,
            training_step,
            mu,
            rng_state: hex::encode(rng_word_pos.to_le_bytes()),
        }
    }

    pub fn rng_word_pos(&self) -> Option<u128> {
        let bytes: [u8; 16] = hex::decode(&self.rng_state).ok()?.try_into().ok()?;
        Some(u128::from_le_bytes(bytes))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(ckpt).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    match v.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(x) if x == u64::from(CHECKPOINT_VERSION) => {}
        Some(x) => {
            return Err(CliError::Version {
                path: path.display().to_string(),
                found: x.to_string(),
            })
        }
        None => return Err(format_err(path, "missing format_version")),
    }
    let ckpt: Checkpoint = serde_json::from_value(v).map_err(|e| format_err(path, e.to_string()))?;
    if let Some(spec) = &ckpt.mlp_spec {
        if spec.param_count() != ckpt.param_values.len() {
            return Err(format_err(
                path,
                format!(
                    "{} parameters for a network with {}",
                    ckpt.param_values.len(),
                    spec.param_count()
                ),
            ));
        }
    }
    Ok(ckpt)
}

/// Numeric table writer that remembers whether any value was non-finite.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
    pub nonfinite: bool,
}

pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}
impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}
impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Real)
    }
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_writer(create(path)?);
        writer
            .write_record(header)
            .map_err(|e| format_err(path, e.to_string()))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
            nonfinite: false,
        })
    }

    pub fn row(&mut self, cells: Vec<Cell>) -> Result<(), CliError> {
        let fields: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Real(x) => {
                    if !x.is_finite() {
                        self.nonfinite = true;
                    }
                    format!("{x:.16e}")
                }
                Cell::Text(s) => s,
                Cell::Empty => String::new(),
            })
            .collect();
        self.writer
            .write_record(&fields)
            .map_err(|e| format_err(&self.path, e.to_string()))
    }

    /// Flushes and reports whether every value was finite.
    pub fn finish(mut self) -> Result<bool, CliError> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))?;
        Ok(!self.nonfinite)
    }
}

pub fn write_history(path: &Path, rows: &[mpnode::mp::HistoryRow]) -> Result<bool, CliError> {
    let mut t = Table::create(
        path,
        &[
            "step",
            "total",
            "l_gt",
            "l_p",
            "mu",
            "grad_norm_theta",
            "grad_norm_qk",
            "max_jump",
            "objective",
        ],
    )?;
    for r in rows {
        t.row(vec![
            r.step.into(),
            r.total.into(),
            r.l_gt.into(),
            r.l_p.into(),
            r.mu.into(),
            r.grad_norm_theta.into(),
            r.grad_norm_qk.into(),
            r.max_jump.into(),
            r.objective.into(),
        ])?;
    }
    t.finish()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let states = Array2::from_shape_fn((5, 3), |(i, j)| {
            (i as f64 + 0.1).powf(j as f64 + 0.5) * std::f64::consts::PI
        });
        Trajectory::new((0..5).map(|i| i as f64 * 0.25).collect(), states).unwrap()
    }

    #[test]
    fn round_trips_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for enc in [Encoding::Csv, Encoding::Binary] {
            let p = dir.path().join("t.traj");
            save_trajectory(&p, &t, enc).unwrap();
            let back = load_trajectory(&p).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn truncation_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let t = sample();
        for enc in [Encoding::Csv, Encoding::Binary] {
            let p = dir.path().join("t.traj");
            save_trajectory(&p, &t, enc).unwrap();
            let bytes = std::fs::read(&p).unwrap();
            std::fs::write(&p, &bytes[..bytes.len() - 30]).unwrap();
            assert!(matches!(load_trajectory(&p), Err(CliError::Format { .. })));
        }
    }

    #[test]
    fn header_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.traj");
        std::fs::write(&p, "MPNODE-TRAJ v9\n").unwrap();
        assert!(matches!(load_trajectory(&p), Err(CliError::Version { .. })));
        std::fs::write(&p, "hello\n").unwrap();
        assert!(matches!(load_trajectory(&p), Err(CliError::Format { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        let spec = MlpSpec::new(2, &[3], mpnode::models::Activation::Tanh, false);
        let vals: Vec<f64> = (0..spec.param_count()).map(|i| (i as f64).sin() / 3.0).collect();
        let c = Checkpoint::new(Some(spec), vals, 12, 1e-3, 987_654_321);
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.rng_word_pos(), Some(987_654_321));
        let text = std::fs::read_to_string(&p)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(CliError::Version { .. })));
    }
}
