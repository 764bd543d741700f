//! Scan/annotation file formats, train/valid/test splitting, and synthetic
//! scene generation.
//!
//! On-disk layout: scans as CSV lines `seq,timestamp,r0,...,rN-1` (`.csv`),
//! annotations per class in sibling files with one line `seq,[[x,y],...]` per
//! annotated scan (`.wc` wheelchairs, `.wa` walkers). Coordinates are meters in
//! the sensor frame. One file is one sequence; splitting works on whole
//! sequences, never single frames.

pub mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::geometry::{Scan, SensorConfig};

/// Object classes annotated with center points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Wheelchair,
    Walker,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Wheelchair, ObjectClass::Walker];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectClass::Wheelchair => "wheelchair",
            ObjectClass::Walker => "walker",
        }
    }
}

/// A single annotated object center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub klass: ObjectClass,
    /// Center position in the sensor frame, meters.
    pub position: (f64, f64),
}

/// One scan with its annotations (possibly none).
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub scan: Scan,
    pub annotations: Vec<Annotation>,
}

/// A sequence of frames recorded together; the unit of dataset splitting.
pub type Sequence = Vec<AnnotatedFrame>;

const MIN_SAME_CLASS_SEPARATION: f64 = 0.1;

/// Load one sequence from a scan file plus per-class annotation files.
///
/// Scans without an annotation line for a class get no annotations of that
/// class. Ranges outside the sensor's valid interval are replaced by
/// `range_max` at ingest.
pub fn load_sequence(
    scan_path: &Path,
    annotation_paths: &[(ObjectClass, &Path)],
    cfg: &SensorConfig,
) -> Result<Sequence, Error> {
    let mut frames = Vec::new();
    let scan_text = fs::read_to_string(scan_path)?;
    for (lineno, line) in scan_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scan = parse_scan_line(line, scan_path, lineno + 1, cfg)?;
        frames.push(AnnotatedFrame {
            scan,
            annotations: Vec::new(),
        });
    }

    for (klass, path) in annotation_paths {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (seq, positions) = parse_annotation_line(line, path, lineno + 1)?;
            let frame = frames
                .iter_mut()
                .find(|f| f.scan.seq_id == seq)
                .ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    column: 1,
                    message: format!("annotation for unknown scan seq {seq}"),
                })?;
            for &position in &positions {
                let norm = (position.0 * position.0 + position.1 * position.1).sqrt();
                if norm < cfg.range_min || norm > cfg.range_max {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        column: 1,
                        message: format!(
                            "annotation at distance {norm:.3} m outside sensor range \
                             [{}, {}]",
                            cfg.range_min, cfg.range_max
                        ),
                    });
                }
                frame.annotations.push(Annotation {
                    klass: *klass,
                    position,
                });
            }
            // Same-class centers closer than 0.1 m are annotation mistakes.
            for i in 0..positions.len() {
                for j in i + 1..positions.len() {
                    let d = dist(positions[i], positions[j]);
                    if d < MIN_SAME_CLASS_SEPARATION {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: lineno + 1,
                            column: 1,
                            message: format!(
                                "two {} annotations only {d:.3} m apart",
                                klass.name()
                            ),
                        });
                    }
                }
            }
        }
    }
    Ok(frames)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn parse_scan_line(
    line: &str,
    path: &Path,
    lineno: usize,
    cfg: &SensorConfig,
) -> Result<Scan, Error> {
    let mut col = 1usize;
    let mut fields = Vec::with_capacity(cfg.num_beams + 2);
    for field in line.split(',') {
        fields.push((col, field));
        col += field.len() + 1;
    }
    if fields.len() != cfg.num_beams + 2 {
        return Err(Error::BeamCountMismatch {
            path: path.display().to_string(),
            line: lineno,
            expected: cfg.num_beams,
            found: fields.len().saturating_sub(2),
        });
    }
    let parse_num = |idx: usize, what: &str| -> Result<f64, Error> {
        let (column, text) = fields[idx];
        text.trim().parse::<f64>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            column,
            message: format!("invalid {what}: {text:?}"),
        })
    };
    let seq_id = {
        let (column, text) = fields[0];
        text.trim().parse::<u64>().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: lineno,
            column,
            message: format!("invalid sequence id: {text:?}"),
        })?
    };
    let timestamp = parse_num(1, "timestamp")?;
    let mut ranges = Vec::with_capacity(cfg.num_beams);
    for i in 0..cfg.num_beams {
        ranges.push(parse_num(i + 2, "range")?);
    }
    let mut scan = Scan {
        ranges,
        seq_id,
        timestamp,
    };
    scan.sanitize(cfg);
    Ok(scan)
}

fn parse_annotation_line(
    line: &str,
    path: &Path,
    lineno: usize,
) -> Result<(u64, Vec<(f64, f64)>), Error> {
    let err = |column: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line: lineno,
        column,
        message,
    };
    let comma = line
        .find(',')
        .ok_or_else(|| err(1, "expected `seq,[[x,y],...]`".into()))?;
    let seq = line[..comma]
        .trim()
        .parse::<u64>()
        .map_err(|_| err(1, format!("invalid sequence id: {:?}", &line[..comma])))?;
    let body = line[comma + 1..].trim();
    let offset = comma + 2;
    if !(body.starts_with('[') && body.ends_with(']')) {
        return Err(err(offset, "expected a bracketed list of [x,y] pairs".into()));
    }
    let inner = body[1..body.len() - 1].trim();
    let mut positions = Vec::new();
    if !inner.is_empty() {
        let mut rest = inner;
        loop {
            let rest_col = offset + (body.len() - 1 - rest.len());
            if !rest.starts_with('[') {
                return Err(err(rest_col, "expected `[` starting a pair".into()));
            }
            let close = rest
                .find(']')
                .ok_or_else(|| err(rest_col, "unterminated pair".into()))?;
            let pair = &rest[1..close];
            let parts: Vec<&str> = pair.split(',').collect();
            if parts.len() != 2 {
                return Err(err(rest_col, format!("expected `x,y` in pair, got {pair:?}")));
            }
            let x = parts[0]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(rest_col, format!("invalid x coordinate: {:?}", parts[0])))?;
            let y = parts[1]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(rest_col, format!("invalid y coordinate: {:?}", parts[1])))?;
            positions.push((x, y));
            rest = rest[close + 1..].trim_start();
            if rest.is_empty() {
                break;
            }
            rest = rest
                .strip_prefix(',')
                .ok_or_else(|| err(rest_col, "expected `,` between pairs".into()))?
                .trim_start();
        }
    }
    Ok((seq, positions))
}

/// Write one sequence: the scan file plus one annotation file per class.
/// Ranges are written with 1e-4 m precision.
pub fn save_sequence(
    frames: &[AnnotatedFrame],
    scan_path: &Path,
    annotation_paths: &[(ObjectClass, &Path)],
) -> Result<(), Error> {
    let mut scan_text = String::new();
    for f in frames {
        write!(scan_text, "{},{}", f.scan.seq_id, f.scan.timestamp).unwrap();
        for r in &f.scan.ranges {
            write!(scan_text, ",{r:.4}").unwrap();
        }
        scan_text.push('\n');
    }
    fs::write(scan_path, scan_text)?;

    for (klass, path) in annotation_paths {
        let mut text = String::new();
        for f in frames {
            let positions: Vec<String> = f
                .annotations
                .iter()
                .filter(|a| a.klass == *klass)
                .map(|a| format!("[{:.4},{:.4}]", a.position.0, a.position.1))
                .collect();
            writeln!(text, "{},[{}]", f.scan.seq_id, positions.join(",")).unwrap();
        }
        fs::write(path, text)?;
    }
    Ok(())
}

/// Split sequences into train/validation/test. The split unit is the whole
/// sequence; fractions must sum to 1.
pub fn split(
    sequences: Vec<Sequence>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<Sequence>, Vec<Sequence>, Vec<Sequence>), Error> {
    let (ft, fv, fe) = fractions;
    if (ft + fv + fe - 1.0).abs() > 1e-9 || ft < 0.0 || fv < 0.0 || fe < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let n = sequences.len();
    let nonzero_parts = [ft, fv, fe].iter().filter(|&&f| f > 0.0).count();
    if n < nonzero_parts {
        return Err(Error::InvalidConfig(format!(
            "{n} sequences cannot cover {nonzero_parts} nonzero split parts"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    // Largest-remainder apportionment, guaranteeing every nonzero part gets
    // at least one sequence.
    let mut counts = [
        (ft * n as f64).floor() as usize,
        (fv * n as f64).floor() as usize,
        (fe * n as f64).floor() as usize,
    ];
    let fracs = [ft, fv, fe];
    while counts.iter().sum::<usize>() < n {
        let rema = |i: usize| fracs[i] * n as f64 - counts[i] as f64;
        let i = (0..3)
            .max_by(|&a, &b| rema(a).partial_cmp(&rema(b)).unwrap())
            .unwrap();
        counts[i] += 1;
    }
    for i in 0..3 {
        if fracs[i] > 0.0 && counts[i] == 0 {
            let j = (0..3).max_by_key(|&j| counts[j]).unwrap();
            counts[j] -= 1;
            counts[i] += 1;
        }
    }

    let mut seqs: Vec<Option<Sequence>> = sequences.into_iter().map(Some).collect();
    let mut take = |idxs: &[usize]| -> Vec<Sequence> {
        idxs.iter().map(|&i| seqs[i].take().unwrap()).collect()
    };
    let train = take(&order[..counts[0]]);
    let valid = take(&order[counts[0]..counts[0] + counts[1]]);
    let test = take(&order[counts[0] + counts[1]..]);
    Ok((train, valid, test))
}
