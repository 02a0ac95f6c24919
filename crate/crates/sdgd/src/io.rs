//! Binary dataset and parameter files, JSON sidecars and tidy CSV output.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sdgd_core::approx::{Mlp, NetSpec, Params};
use sdgd_core::env::{EnvId, Episode};

pub const DATASET_MAGIC: &[u8; 8] = b"SDGDDS01";
pub const PARAMS_MAGIC: &[u8; 8] = b"SDGDNN01";
pub const DTYPE: &str = "f32le";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

fn format_err(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env_id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_len: usize,
    pub n_episodes: usize,
    pub gamma: f64,
    pub gamma_c: f64,
    pub dtype: String,
}

impl DatasetHeader {
    fn payload_floats(&self) -> usize {
        let row = self.state_dim + self.action_dim + 2;
        self.n_episodes * (self.episode_len * row + self.state_dim)
    }
}

fn push_f32(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&(v as f32).to_le_bytes());
}

/// Serialize episodes. Values are stored as `f32`; every episode must have
/// `header.episode_len` steps.
pub fn encode_dataset(header: &DatasetHeader, episodes: &[Episode]) -> Result<Vec<u8>, IoError> {
    if header.n_episodes != episodes.len() {
        return Err(format_err(format!("header says {} episodes, got {}", header.n_episodes, episodes.len())));
    }
    let mut buf = Vec::with_capacity(8 + 256 + 4 * header.payload_floats());
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(serde_json::to_string(header).expect("header serializes").as_bytes());
    buf.push(b'\n');
    for ep in episodes {
        if ep.len() != header.episode_len || ep.state_dim != header.state_dim || ep.action_dim != header.action_dim {
            return Err(format_err("episode shape does not match the dataset header"));
        }
        for t in 0..ep.len() {
            ep.state(t).iter().for_each(|v| push_f32(&mut buf, *v));
            ep.action(t).iter().for_each(|v| push_f32(&mut buf, *v));
            push_f32(&mut buf, ep.rewards[t]);
            push_f32(&mut buf, ep.costs[t]);
        }
        ep.state(ep.len()).iter().for_each(|v| push_f32(&mut buf, *v));
    }
    Ok(buf)
}

/// Read the magic and the JSON header line, leaving `reader` at the payload.
fn read_header<R: BufRead>(reader: &mut R, magic: &[u8; 8], what: &str) -> Result<String, IoError> {
    let mut found = [0u8; 8];
    reader.read_exact(&mut found).map_err(|_| format_err(format!("{what}: file too short for magic")))?;
    if &found != magic {
        return Err(format_err(format!(
            "{what}: bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line).map_err(|e| format_err(format!("{what}: {e}")))?;
    if line.pop() != Some(b'\n') {
        return Err(format_err(format!("{what}: header line is not newline-terminated")));
    }
    String::from_utf8(line).map_err(|_| format_err(format!("{what}: header is not UTF-8")))
}

fn read_f32_payload<R: Read>(reader: &mut R, expected: usize, what: &str) -> Result<Vec<f64>, IoError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| format_err(format!("{what}: {e}")))?;
    if bytes.len() != 4 * expected {
        return Err(format_err(format!("{what}: payload has {} bytes, expected {}", bytes.len(), 4 * expected)));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<(DatasetHeader, Vec<Episode>), IoError> {
    let mut reader = BufReader::new(bytes);
    let line = read_header(&mut reader, DATASET_MAGIC, "dataset")?;
    let header: DatasetHeader = serde_json::from_str(&line).map_err(|e| format_err(format!("dataset header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(format_err(format!("dataset dtype {:?} is not supported", header.dtype)));
    }
    if header.episode_len == 0 || header.state_dim == 0 || header.action_dim == 0 {
        return Err(format_err("dataset header has a zero dimension"));
    }
    let values = read_f32_payload(&mut reader, header.payload_floats(), "dataset")?;
    let (sd, ad) = (header.state_dim, header.action_dim);
    let mut it = values.into_iter();
    let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
    let mut episodes = Vec::with_capacity(header.n_episodes);
    for _ in 0..header.n_episodes {
        let mut ep = Episode { state_dim: sd, action_dim: ad, states: Vec::new(), actions: Vec::new(), rewards: Vec::new(), costs: Vec::new() };
        for _ in 0..header.episode_len {
            ep.states.extend(take(sd));
            ep.actions.extend(take(ad));
            let rc = take(2);
            ep.rewards.push(rc[0]);
            ep.costs.push(rc[1]);
        }
        ep.states.extend(take(sd));
        episodes.push(ep);
    }
    Ok((header, episodes))
}

pub fn save_dataset(path: &Path, header: &DatasetHeader, episodes: &[Episode]) -> Result<(), IoError> {
    write_bytes(path, &encode_dataset(header, episodes)?)
}

pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Episode>), IoError> {
    decode_dataset(&fs::read(path).map_err(fs_err(path))?)
}

/// Round every stored quantity to `f32`, matching what a save/load cycle yields.
pub fn round_episode(ep: &mut Episode) {
    for v in ep.states.iter_mut().chain(&mut ep.actions).chain(&mut ep.rewards).chain(&mut ep.costs) {
        *v = *v as f32 as f64;
    }
}

pub fn encode_params(net: &Mlp) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 128 + 4 * net.params.len());
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(serde_json::to_string(&net.spec).expect("spec serializes").as_bytes());
    buf.push(b'\n');
    net.params.values.iter().for_each(|v| push_f32(&mut buf, *v));
    buf
}

pub fn decode_params(bytes: &[u8]) -> Result<Mlp, IoError> {
    let mut reader = BufReader::new(bytes);
    let line = read_header(&mut reader, PARAMS_MAGIC, "params")?;
    let spec: NetSpec = serde_json::from_str(&line).map_err(|e| format_err(format!("params spec: {e}")))?;
    spec.validate().map_err(|e| format_err(format!("params spec: {e}")))?;
    let values = read_f32_payload(&mut reader, spec.param_count(), "params")?;
    Mlp::from_params(spec, Params { values }).map_err(|e| format_err(format!("params: {e}")))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(fs_err(dir))?;
    }
    fs::write(path, bytes).map_err(fs_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(fs_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

/// One JSON document per line.
pub fn write_json_lines<T: Serialize>(path: &Path, values: &[T]) -> Result<(), IoError> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).expect("value serializes");
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

/// A tidy table held in memory until written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<Table, IoError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(format!("{}: {e}", path.display())))?;
    let header = r.headers().map_err(|e| format_err(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| format_err(e.to_string()))?.iter().map(String::from).collect());
    }
    Ok(Table { header, rows })
}

/// Render a float for CSV output (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
