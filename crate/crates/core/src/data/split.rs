use std::io::{BufRead, Write};

use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::seeding::{stream_rng, Stream};

/// Disjoint labelled/unlabelled partition of scene ids `0..N`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub fraction: (u32, u32),
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.labeled.binary_search(&id).is_ok()
    }
}

/// Uniformly samples `round(N · num/den)` (at least one) labelled ids.
pub fn make_split(n: usize, fraction: (u32, u32), seed: u64) -> Result<DatasetSplit> {
    let (num, den) = fraction;
    if n == 0 {
        bail!(Argument, "cannot split an empty dataset");
    }
    if num == 0 || den == 0 || num > den {
        bail!(Argument, "label fraction {num}/{den} outside (0, 1]");
    }
    let k = ((n as f64 * num as f64 / den as f64).round() as usize).clamp(1, n);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut stream_rng(seed, Stream::Split, 0));
    let mut labeled = ids[..k].to_vec();
    let mut unlabeled = ids[k..].to_vec();
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        fraction,
        seed,
    })
}

/// One line of the dataset manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: usize,
    pub seed: u64,
    pub labeled: bool,
}

/// Writes `id,seed,labeled` lines after a header.
pub fn write_manifest<W: Write>(mut w: W, records: &[ManifestRecord]) -> Result<()> {
    writeln!(w, "id,seed,labeled")?;
    for r in records {
        writeln!(w, "{},{},{}", r.id, r.seed, r.labeled as u8)?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        let parsed = (|| -> Option<ManifestRecord> {
            if f.len() != 3 {
                return None;
            }
            Some(ManifestRecord {
                id: f[0].parse().ok()?,
                seed: f[1].parse().ok()?,
                labeled: match f[2] {
                    "1" => true,
                    "0" => false,
                    _ => return None,
                },
            })
        })();
        match parsed {
            Some(r) => out.push(r),
            None => bail!(Format, "manifest line {}: {line:?}", i + 1),
        }
    }
    Ok(out)
}
