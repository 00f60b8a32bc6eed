//! Trajectory files and run manifests.
//!
//! A trajectory is a CSV table in long format: one row per trait per
//! observation time, with header
//! `time,trait_id,rank,b,d,mass` (plus `genotype` for diploid chains).
//! Floats are written in shortest round-trip form, so identical runs produce
//! byte-identical files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::analysis::{Direction, ProbeSpec};
use crate::diploid::GstJump;
use crate::equilibria::TstJump;
use crate::error::{Error, Result};
use crate::microsim::GridSampler;
use crate::odelimit::DenseTrajectory;
use crate::traitspace::OrderedTraitSpace;

const HEADER: [&str; 6] = ["time", "trait_id", "rank", "b", "d", "mass"];

fn csv_err(e: csv::Error) -> Error {
    Error::Trajectory(e.to_string())
}

/// Streams observation blocks to CSV.
pub struct TrajectoryWriter<W: Write> {
    w: csv::Writer<W>,
    diploid: bool,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(inner: W, diploid: bool) -> Result<Self> {
        let mut w = csv::Writer::from_writer(inner);
        let mut header: Vec<&str> = HEADER.to_vec();
        if diploid {
            header.push("genotype");
        }
        w.write_record(&header).map_err(csv_err)?;
        Ok(TrajectoryWriter { w, diploid })
    }

    /// One row per trait of `chain`; `masses` is indexed by rank.
    pub fn write_block(&mut self, t: f64, chain: &OrderedTraitSpace, masses: &[f64]) -> Result<()> {
        for (r, (tr, m)) in chain.traits().iter().zip(masses).enumerate() {
            let mut rec = vec![
                t.to_string(),
                tr.id.to_string(),
                r.to_string(),
                tr.b.to_string(),
                tr.d.to_string(),
                m.to_string(),
            ];
            if self.diploid {
                rec.push(tr.genotype.map(|g| g.to_string()).unwrap_or_default());
            }
            self.w.write_record(&rec).map_err(csv_err)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.w.flush().map_err(|e| Error::Trajectory(e.to_string()))?;
        self.w.into_inner().map_err(|e| Error::Trajectory(e.to_string()))
    }
}

fn is_diploid(chain: &OrderedTraitSpace) -> bool {
    chain.traits().iter().any(|t| t.genotype.is_some())
}

/// Writes the grid snapshots of a microscopic run.
pub fn write_micro<W: Write>(out: W, grid: &GridSampler, k: u64) -> Result<W> {
    let diploid = grid.chains.iter().any(is_diploid);
    let mut w = TrajectoryWriter::new(out, diploid)?;
    for s in &grid.snapshots {
        let masses: Vec<f64> = s.counts.iter().map(|&c| c as f64 / k as f64).collect();
        w.write_block(s.t, grid.chain_of(s), &masses)?;
    }
    w.finish()
}

/// Writes a deterministic trajectory at the given times.
pub fn write_ode<W: Write>(out: W, traj: &DenseTrajectory, chain: &OrderedTraitSpace, times: &[f64]) -> Result<W> {
    let mut w = TrajectoryWriter::new(out, is_diploid(chain))?;
    for &t in times {
        w.write_block(t, chain, &traj.at(t))?;
    }
    w.finish()
}

/// Writes a TST path, one block per record (initial state and each jump).
pub fn write_tst<W: Write>(out: W, path: &[TstJump]) -> Result<W> {
    let diploid = path.iter().any(|j| is_diploid(&j.state.space));
    let mut w = TrajectoryWriter::new(out, diploid)?;
    for j in path {
        let masses: Vec<f64> = j.state.space.traits().iter().map(|t| j.state.config.mass(&t.id)).collect();
        w.write_block(j.time, &j.state.space, &masses)?;
    }
    w.finish()
}

/// Writes a GST path with genotype labels.
pub fn write_gst<W: Write>(out: W, path: &[GstJump]) -> Result<W> {
    let mut w = TrajectoryWriter::new(out, true)?;
    for j in path {
        let chain = &j.state.space.chain;
        let masses: Vec<f64> = chain.traits().iter().map(|t| j.state.config.mass(&t.id)).collect();
        w.write_block(j.time, chain, &masses)?;
    }
    w.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub time: f64,
    pub trait_id: String,
    pub rank: usize,
    pub b: f64,
    pub d: f64,
    pub mass: f64,
    #[serde(default)]
    pub genotype: Option<String>,
}

/// Rows sharing one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub t: f64,
    pub rows: Vec<Row>,
}

impl Block {
    pub fn mass_of(&self, id: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.trait_id == id).map(|r| r.mass)
    }

    pub fn masses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mass).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub diploid: bool,
    pub blocks: Vec<Block>,
}

/// Reads a trajectory, checking the header.
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let diploid = match header.len() {
        6 => false,
        7 if header[6] == "genotype" => true,
        _ => return Err(Error::Trajectory(format!("unexpected header {header:?}"))),
    };
    if header[..6] != HEADER {
        return Err(Error::Trajectory(format!("unexpected header {header:?}")));
    }
    let mut blocks: Vec<Block> = Vec::new();
    for rec in rd.deserialize::<Row>() {
        let row = rec.map_err(csv_err)?;
        match blocks.last_mut() {
            Some(b) if b.t == row.time && row.rank == b.rows.len() => b.rows.push(row),
            Some(b) if row.time < b.t => {
                return Err(Error::Trajectory(format!("time decreases at t = {}", row.time)));
            }
            _ => {
                if row.rank != 0 {
                    return Err(Error::Trajectory(format!("block at t = {} does not start at rank 0", row.time)));
                }
                blocks.push(Block {
                    t: row.time,
                    rows: vec![row],
                })
            }
        }
    }
    Ok(Trajectory { diploid, blocks })
}

/// First crossing of each probe on a stored trajectory. Between two
/// observations the mass is interpolated linearly, so the result is exact for
/// piecewise-linear data and grid-accurate otherwise.
pub fn trajectory_probe_times(traj: &Trajectory, probes: &[ProbeSpec]) -> Vec<Option<f64>> {
    let mut times: Vec<Option<f64>> = Vec::with_capacity(probes.len());
    for p in probes {
        let mut from = f64::NEG_INFINITY;
        let mut armed = true;
        for &a in &p.armed_by {
            match times.get(a).copied().flatten() {
                Some(t) => from = from.max(t),
                None => armed = false,
            }
        }
        if !armed {
            times.push(None);
            continue;
        }
        let id = p.trait_id.as_str();
        let hit = |m: f64| match p.direction {
            Direction::Up => m >= p.level,
            Direction::Down => m <= p.level,
        };
        let mut found = None;
        let mut prev: Option<(f64, f64)> = None;
        for b in &traj.blocks {
            let m = b.mass_of(id).unwrap_or(0.0);
            if b.t >= from && hit(m) {
                found = Some(match prev {
                    Some((t0, m0)) if t0 >= from && m != m0 => {
                        let s = ((p.level - m0) / (m - m0)).clamp(0.0, 1.0);
                        t0 + s * (b.t - t0)
                    }
                    _ => b.t,
                });
                break;
            }
            prev = Some((b.t, m));
        }
        times.push(found);
    }
    times
}

/// Metadata written next to the trajectories of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// `ssa`, `ode`, `tst` or `gst`.
    pub kind: String,
    pub deterministic: bool,
    /// Canonical scenario TOML; feeding it back reproduces the run.
    pub scenario: String,
    pub resolved: ResolvedParams,
    pub files: Vec<String>,
    pub advisories: Vec<String>,
    pub wall_time_s: f64,
    #[serde(default)]
    pub replicas: Vec<ReplicaRecord>,
    /// Kind-specific results, e.g. phase predictions for a deterministic run.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    #[serde(rename = "K")]
    pub k: u64,
    pub epsilon: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub eta: f64,
    pub mode: String,
    pub seed: u64,
    pub replicas: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub index: u64,
    pub file: String,
    pub end_time: f64,
    #[serde(default)]
    pub events: u64,
    #[serde(default)]
    pub absorbed: bool,
    #[serde(default)]
    pub probes: Vec<Option<f64>>,
    /// Path hit the jump cap before the horizon.
    #[serde(default)]
    pub exploded: bool,
}
