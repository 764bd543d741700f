//! Bundles a trained model with its sensor, preprocessing, and voting
//! configuration, and persists the bundle as a checkpoint file.
//!
//! The checkpoint is a magic + version header, a JSON metadata block, and the
//! raw little-endian f32 parameter and batch-norm statistic blobs. Embedding
//! the configurations keeps inference from ever running with a window layout
//! different from the one trained on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::dataio::Annotation;
use crate::error::Error;
use crate::eval::FramePredictions;
use crate::geometry::{Scan, SensorConfig};
use crate::nn::{Model, ModelSpec, Prediction};
use crate::preprocess::{self, PreprocessConfig, Window};
use crate::vote::{self, Detection, VoteConfig};

const MAGIC: &[u8; 4] = b"LDET";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelSpec,
    sensor: SensorConfig,
    preprocess: PreprocessConfig,
    vote: VoteConfig,
    num_params: u64,
    num_stats: u64,
}

/// A complete, runnable detector.
pub struct Detector {
    pub model: Model<f32>,
    pub sensor: SensorConfig,
    pub preprocess: PreprocessConfig,
    pub vote: VoteConfig,
}

impl Detector {
    pub fn new(
        model: Model<f32>,
        sensor: SensorConfig,
        preprocess: PreprocessConfig,
        vote: VoteConfig,
    ) -> Self {
        Detector {
            model,
            sensor,
            preprocess,
            vote,
        }
    }

    fn check_scan(&self, scan: &Scan) -> Result<(), Error> {
        if scan.ranges.len() != self.sensor.num_beams {
            return Err(Error::InvalidConfig(format!(
                "scan has {} ranges, expected {}",
                scan.ranges.len(),
                self.sensor.num_beams
            )));
        }
        Ok(())
    }

    /// Windows and network predictions for one scan; the scan is sanitized
    /// first.
    pub fn predict_scan(&mut self, scan: &Scan) -> Result<(Vec<Window>, Vec<Prediction>), Error> {
        self.check_scan(scan)?;
        let mut scan = scan.clone();
        scan.sanitize(&self.sensor);
        let windows = preprocess::cut_all_windows(&scan, &self.sensor, &self.preprocess);
        let n = self.preprocess.n;
        let mut input = ndarray::Array2::<f32>::zeros((windows.len(), n));
        for (i, w) in windows.iter().enumerate() {
            for (j, &s) in w.samples.iter().enumerate() {
                input[[i, j]] = s as f32;
            }
        }
        let predictions = self.model.predict(&input)?;
        Ok((windows, predictions))
    }

    /// Full pipeline for one scan: windows, forward pass, voting, NMS.
    pub fn detect_scan(&mut self, scan: &Scan) -> Result<Vec<Detection>, Error> {
        let (windows, predictions) = self.predict_scan(scan)?;
        Ok(vote::detect(&windows, &predictions, &self.vote))
    }

    /// Cache one annotated frame for threshold sweeps.
    pub fn frame_predictions(
        &mut self,
        scan: &Scan,
        annotations: &[Annotation],
    ) -> Result<FramePredictions, Error> {
        let (windows, predictions) = self.predict_scan(scan)?;
        Ok(FramePredictions {
            windows,
            predictions,
            annotations: annotations.to_vec(),
        })
    }

    pub fn save(&mut self, path: &Path) -> Result<(), Error> {
        let mut params: Vec<f32> = Vec::new();
        self.model.visit_params(|_, p, _| params.extend_from_slice(p));
        let mut stats: Vec<f32> = Vec::new();
        self.model.visit_running_stats(|_, s| stats.extend_from_slice(s));

        let meta = CheckpointMeta {
            model: self.model.spec().clone(),
            sensor: self.sensor,
            preprocess: self.preprocess,
            vote: self.vote,
            num_params: params.len() as u64,
            num_stats: stats.len() as u64,
        };
        let meta_bytes = serde_json::to_vec(&meta)?;

        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(meta_bytes.len() as u64)?;
        w.write_all(&meta_bytes)?;
        for v in params.iter().chain(stats.iter()) {
            w.write_f32::<LittleEndian>(*v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic", path.display()
            )));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported version {version}",
                path.display()
            )));
        }
        let meta_len = r.read_u64::<LittleEndian>()? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;

        let mut model = Model::<f32>::init(&meta.model, 0)?;
        let mut expected = 0usize;
        model.visit_params(|_, p, _| expected += p.len());
        if expected as u64 != meta.num_params {
            return Err(Error::Checkpoint(format!(
                "{}: parameter count {} does not match spec ({expected})",
                path.display(),
                meta.num_params
            )));
        }
        let mut params = vec![0f32; meta.num_params as usize];
        r.read_f32_into::<LittleEndian>(&mut params)?;
        let mut stats = vec![0f32; meta.num_stats as usize];
        r.read_f32_into::<LittleEndian>(&mut stats)?;

        let mut off = 0;
        model.visit_params(|_, p, _| {
            p.copy_from_slice(&params[off..off + p.len()]);
            off += p.len();
        });
        let mut off = 0;
        model.visit_running_stats(|_, s| {
            s.copy_from_slice(&stats[off..off + s.len()]);
            off += s.len();
        });
        if off as u64 != meta.num_stats {
            return Err(Error::Checkpoint(format!(
                "{}: statistic count {} does not match spec ({off})",
                path.display(),
                meta.num_stats
            )));
        }

        Ok(Detector {
            model,
            sensor: meta.sensor,
            preprocess: meta.preprocess,
            vote: meta.vote,
        })
    }
}
