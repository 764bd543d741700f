//! Dataset directory layout: one sequence per index as
//! `seqNNN.scans.csv` plus `seqNNN.wheelchairs.csv` / `seqNNN.walkers.csv`.

use std::path::Path;

use anyhow::{Context, Result};
use scandet::dataio::{self, ObjectClass, Sequence};
use scandet::geometry::SensorConfig;

pub fn save_dataset(dir: &Path, sequences: &[Sequence]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, seq) in sequences.iter().enumerate() {
        let base = format!("seq{i:03}");
        dataio::save_sequence(
            seq,
            &dir.join(format!("{base}.scans.csv")),
            &[
                (
                    ObjectClass::Wheelchair,
                    &dir.join(format!("{base}.wheelchairs.csv")),
                ),
                (
                    ObjectClass::Walker,
                    &dir.join(format!("{base}.walkers.csv")),
                ),
            ],
        )?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path, sensor: &SensorConfig) -> Result<Vec<Sequence>> {
    let mut scan_files: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading dataset directory {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".scans.csv"))
        })
        .collect();
    scan_files.sort();
    anyhow::ensure!(
        !scan_files.is_empty(),
        "no *.scans.csv files in {}",
        dir.display()
    );
    let mut sequences = Vec::new();
    for scan_path in scan_files {
        let base = scan_path
            .to_str()
            .unwrap()
            .trim_end_matches(".scans.csv")
            .to_string();
        let wc = format!("{base}.wheelchairs.csv");
        let wa = format!("{base}.walkers.csv");
        let mut anns: Vec<(ObjectClass, &Path)> = Vec::new();
        let (wc, wa) = (Path::new(&wc).to_path_buf(), Path::new(&wa).to_path_buf());
        if wc.exists() {
            anns.push((ObjectClass::Wheelchair, &wc));
        }
        if wa.exists() {
            anns.push((ObjectClass::Walker, &wa));
        }
        sequences.push(dataio::load_sequence(&scan_path, &anns, sensor)?);
    }
    Ok(sequences)
}
