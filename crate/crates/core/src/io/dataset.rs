//! `L2DS` scan archives: JSON header with the sensor, the generation job and
//! the trajectory layout, then ranges (f32, NaN for invalid beams) and
//! poses (3 x f32).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::{expect_eof, read_f32s, read_header, write_f32s, write_header};
use crate::error::{Error, Result};
use crate::world::{Dataset, DatasetJob, SensorSpec};

const MAGIC: &[u8; 4] = b"L2DS";
pub const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    sensor: SensorSpec,
    job: Option<DatasetJob>,
    scans: usize,
    trajectory_lengths: Vec<u32>,
}

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    let total: usize = ds.trajectory_lengths.iter().map(|l| *l as usize).sum();
    if total != ds.len() || ds.ranges.len() != ds.len() * ds.beam_count() {
        return Err(Error::Format("dataset layout is inconsistent".into()));
    }
    let header = Header {
        sensor: ds.sensor.clone(),
        job: ds.job.clone(),
        scans: ds.len(),
        trajectory_lengths: ds.trajectory_lengths.clone(),
    };
    write_header(w, MAGIC, VERSION, &serde_json::to_value(&header)?)?;
    write_f32s(w, &ds.ranges)?;
    let poses: Vec<f32> = ds.poses.iter().flatten().copied().collect();
    write_f32s(w, &poses)?;
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let header: Header = serde_json::from_value(read_header(r, MAGIC, VERSION)?)?;
    let lengths = header.trajectory_lengths;
    if lengths.iter().map(|l| *l as usize).sum::<usize>() != header.scans {
        return Err(Error::Format("trajectory lengths do not add up to the scan count".into()));
    }
    let ranges = read_f32s(r, header.scans * header.sensor.beam_count)?;
    let poses = read_f32s(r, 3 * header.scans)?;
    expect_eof(r)?;
    Ok(Dataset {
        sensor: header.sensor,
        job: header.job,
        trajectory_lengths: lengths,
        ranges,
        poses: poses.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}
