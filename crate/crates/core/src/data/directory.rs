//! Dataset directories.
//!
//! ```text
//! DIR/manifest.json    task, split and one entry per sample
//! DIR/images/ID.png    16-bit grayscale image
//! DIR/labels/ID.png    8-bit class indices (segmentation)
//! DIR/dots/ID.csv      x,y dot annotations (counting)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::density::{read_dots_csv, write_dots_csv};
use crate::data::image_io::{load_image, load_labels, save_gray16, save_labels};
use crate::data::{Annotation, Record, Split, Task};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    task: Task,
    split: Split,
    samples: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    id: String,
    image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dots: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub records: Vec<Record>,
    pub split: Split,
}

impl Dataset {
    /// Records of the named split, in split order.
    pub fn part(&self, name: &str) -> Result<Vec<&Record>> {
        Ok(self.split.part(name)?.iter().map(|&i| &self.records[i]).collect())
    }
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for sub in ["images", "labels", "dots"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut samples = Vec::new();
    for rec in &data.records {
        if rec.task() != data.task {
            return Err(Error::data(format!("record {} does not match task {:?}", rec.id, data.task)));
        }
        let image = PathBuf::from(format!("images/{}.png", rec.id));
        save_gray16(&dir.join(&image), &rec.image)?;
        let mut entry = Entry { id: rec.id.clone(), image, labels: None, dots: None };
        match &rec.annotation {
            Annotation::Labels(l) => {
                let p = PathBuf::from(format!("labels/{}.png", rec.id));
                save_labels(&dir.join(&p), l, 1)?;
                entry.labels = Some(p);
            }
            Annotation::Dots(d) => {
                let p = PathBuf::from(format!("dots/{}.csv", rec.id));
                write_dots_csv(&dir.join(&p), d)?;
                entry.dots = Some(p);
            }
        }
        samples.push(entry);
    }
    let manifest = Manifest { task: data.task, split: data.split.clone(), samples };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join("manifest.json"), json + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Input { path: path.clone(), message: e.to_string() })?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Input { path: path.clone(), message: e.to_string() })?;
    let mut records = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let image = load_image::<f32>(&dir.join(&entry.image))?;
        let annotation = match (manifest.task, &entry.labels, &entry.dots) {
            (Task::Segment, Some(p), _) => Annotation::Labels(load_labels(&dir.join(p))?),
            (Task::Count, _, Some(p)) => Annotation::Dots(read_dots_csv(&dir.join(p))?),
            _ => {
                return Err(Error::Input {
                    path: path.clone(),
                    message: format!("sample {} lacks a {:?} annotation", entry.id, manifest.task),
                })
            }
        };
        if image.shape().c != 1 {
            // Ground truth and network input are single-channel throughout.
            return Err(Error::Input { path: dir.join(&entry.image), message: "expected a grayscale image".into() });
        }
        let record = Record { id: entry.id.clone(), image, annotation };
        // Validates matching extents and in-bounds dots.
        record.to_sample::<f32>(1.0).map_err(|e| Error::Input { path: path.clone(), message: e.to_string() })?;
        records.push(record);
    }
    let len = records.len();
    let split = manifest.split;
    let mut seen = vec![false; len];
    for &i in split.train.iter().chain(&split.val).chain(&split.test) {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Input { path, message: format!("split index {i} out of range or repeated") });
        }
    }
    Ok(Dataset { task: manifest.task, records, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_counting_set, synth_segmentation_set, CountingSynth, SegmentationSynth};
    use crate::data::SplitSpec;
    use crate::rng::RngState;

    #[test]
    fn round_trip_both_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let rng = RngState::new(9);
        let count = synth_counting_set(5, &CountingSynth::default(), &rng).unwrap();
        let seg = synth_segmentation_set(3, &SegmentationSynth::default(), &rng).unwrap();
        for (task, records, sub) in [(Task::Count, count, "c"), (Task::Segment, seg, "s")] {
            let split = SplitSpec::counting_protocol(records.len()).apply(records.len()).unwrap();
            let data = Dataset { task, records, split };
            let path = dir.path().join(sub);
            write_dataset(&path, &data).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(back.split, data.split);
            for (a, b) in back.records.iter().zip(&data.records) {
                assert_eq!(a.annotation, b.annotation);
                assert!(a.image.max_abs_diff(&b.image).unwrap() <= 1.0 / 65535.0);
            }
        }
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let data = Dataset { task: Task::Count, records: vec![], split: Split::default() };
        write_dataset(dir.path(), &data).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
    }

    #[test]
    fn overlapping_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let records = synth_counting_set(2, &CountingSynth::default(), &RngState::new(1)).unwrap();
        let split = Split { train: vec![0], val: vec![0], test: vec![] };
        write_dataset(dir.path(), &Dataset { task: Task::Count, records, split }).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Input { .. })));
    }
}
