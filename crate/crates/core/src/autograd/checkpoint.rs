//! Plain-text parameter checkpoints.
//!
//! ```text
//! wavecast-checkpoint 1
//! seed <u64>
//! hyper <key> <value>            (zero or more, order preserved)
//! param <name> <rank> <dim>...   (one line per parameter, followed by
//! <v0> <v1> ...                   a line of row-major values)
//! adam <step>                    (optional optimizer state, then one
//! m <v0> <v1> ...                 m line and one v line per parameter
//! v <v0> <v1> ...                 in parameter order)
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

use super::{AdamState, ParamStore, Tensor};

const MAGIC: &str = "wavecast-checkpoint 1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub hyper: Vec<(String, String)>,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    pub fn hyper(&self, key: &str) -> Option<&str> {
        self.hyper.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "seed {}", self.seed)?;
        for (k, v) in &self.hyper {
            writeln!(w, "hyper {k} {v}")?;
        }
        for p in self.params.iter() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            writeln!(w, "param {} {} {}", p.name, dims.len(), dims.join(" "))?;
            writeln!(w, "{}", join(p.value.data()))?;
        }
        if let Some(state) = &self.optimizer {
            writeln!(w, "adam {}", state.step)?;
            for (m, v) in state.m.iter().zip(&state.v) {
                writeln!(w, "m {}", join(m))?;
                writeln!(w, "v {}", join(v))?;
            }
        }
        writeln!(w, "end")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self, CheckpointError> {
        let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| -> Result<(usize, String), CheckpointError> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(CheckpointError::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let err = |line: usize, msg: String| CheckpointError::Parse { line, msg };
        let floats = |line: usize, s: &str| -> Result<Vec<f64>, CheckpointError> {
            s.split_ascii_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| err(line, format!("bad number {t:?}"))))
                .collect()
        };

        let (n, l) = next("header")?;
        if l.trim() != MAGIC {
            return Err(err(n, format!("expected {MAGIC:?}")));
        }
        let (n, l) = next("seed")?;
        let seed = l
            .strip_prefix("seed ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(n, "expected `seed <u64>`".into()))?;

        let mut hyper = Vec::new();
        let mut params = ParamStore::new();
        let mut optimizer = None;
        loop {
            let (n, l) = next("`end`")?;
            let mut parts = l.split_ascii_whitespace();
            match parts.next() {
                Some("hyper") => {
                    let k = parts.next().ok_or_else(|| err(n, "hyper without key".into()))?;
                    let v = parts.collect::<Vec<_>>().join(" ");
                    hyper.push((k.to_string(), v));
                }
                Some("param") => {
                    let name = parts.next().ok_or_else(|| err(n, "param without name".into()))?;
                    let nums: Vec<usize> = parts
                        .map(|t| t.parse().map_err(|_| err(n, format!("bad dimension {t:?}"))))
                        .collect::<Result<_, _>>()?;
                    let (&rank, dims) = nums.split_first().ok_or_else(|| err(n, "missing rank".into()))?;
                    if dims.len() != rank {
                        return Err(err(n, format!("rank {rank} but {} dims", dims.len())));
                    }
                    let (vn, vl) = next("parameter values")?;
                    let data = floats(vn, &vl)?;
                    let t = Tensor::new(dims, data).map_err(|e| err(vn, e.to_string()))?;
                    params.add(name, t);
                }
                Some("adam") => {
                    let step = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| err(n, "expected `adam <step>`".into()))?;
                    let mut state = AdamState {
                        step,
                        m: Vec::new(),
                        v: Vec::new(),
                    };
                    for p in params.iter() {
                        for (tag, dst) in [("m ", &mut state.m), ("v ", &mut state.v)] {
                            let (ln, line) = next("optimizer moments")?;
                            let body = line
                                .strip_prefix(tag)
                                .ok_or_else(|| err(ln, format!("expected `{}` line", tag.trim())))?;
                            let vals = floats(ln, body)?;
                            if vals.len() != p.value.len() {
                                return Err(err(ln, format!("moment length mismatch for {}", p.name)));
                            }
                            dst.push(vals);
                        }
                    }
                    optimizer = Some(state);
                }
                Some("end") => break,
                Some(other) => return Err(err(n, format!("unknown record {other:?}"))),
                None => {}
            }
        }
        Ok(Self {
            seed,
            hyper,
            params,
            optimizer,
        })
    }
}
