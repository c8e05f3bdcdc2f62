//! XYZ text files ("x y z" per line) and the dataset manifest
//! ("relative_path class_id split" per line).

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use pointrank_core::data::{LabeledDataset, PointCloud};
use pointrank_core::tensor::Tensor2;

/// Parse an XYZ file. Malformed lines report their 1-based line number;
/// an empty file is an error.
pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut data = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            bail!(
                "{}: parse error at line {}: expected 3 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            );
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| {
                anyhow!(
                    "{}: parse error at line {}: {:?} is not a number",
                    path.display(),
                    lineno + 1,
                    f
                )
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        bail!("{}: empty point cloud file", path.display());
    }
    let points = Tensor2::from_vec(rows, 3, data).expect("rows x 3");
    PointCloud::new(points).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Write an XYZ file with 12 decimal places (round-trips within 1e-9).
pub fn save_xyz(cloud: &PointCloud, path: &Path) -> Result<()> {
    let pts = cloud.points();
    let mut out = String::with_capacity(pts.rows() * 48);
    for i in 0..pts.rows() {
        let r = pts.row(i);
        out.push_str(&format!("{:.12} {:.12} {:.12}\n", r[0], r[1], r[2]));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub relative_path: String,
    pub class_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Write clouds as numbered XYZ files plus `manifest.txt` into `dir`.
pub fn write_dataset(
    dir: &Path,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::new();
    let mut index = 0usize;
    for (split, data) in [(Split::Train, train), (Split::Test, test)] {
        for (cloud, &label) in data.clouds.iter().zip(&data.labels) {
            let name = format!("cloud_{index:05}.xyz");
            save_xyz(cloud, &dir.join(&name))?;
            entries.push(ManifestEntry { relative_path: name, class_id: label, split });
            index += 1;
        }
    }
    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&format!("{} {} {}\n", e.relative_path, e.class_id, e.split.as_str()));
    }
    fs::write(dir.join("manifest.txt"), manifest)
        .with_context(|| format!("writing {}", dir.join("manifest.txt").display()))?;
    Ok(entries)
}

/// Load the split of a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let mut out = LabeledDataset::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            bail!(
                "{}: line {}: expected \"path class_id split\"",
                manifest_path.display(),
                lineno + 1
            );
        }
        let class_id: usize = fields[1].parse().map_err(|_| {
            anyhow!("{}: line {}: bad class id {:?}", manifest_path.display(), lineno + 1, fields[1])
        })?;
        let entry_split = match fields[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => bail!(
                "{}: line {}: bad split {:?}",
                manifest_path.display(),
                lineno + 1,
                other
            ),
        };
        if entry_split == split {
            let cloud = load_xyz(&dir.join(fields[0]))?;
            out.push(cloud, class_id);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pointrank_core::data::{gen_synthetic, ShapeClass};

    #[test]
    fn xyz_round_trip_is_within_1e9() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        let cloud = gen_synthetic(ShapeClass::Torus, 64, 3).unwrap();
        save_xyz(&cloud, &path).unwrap();
        let loaded = load_xyz(&path).unwrap();
        assert_eq!(loaded.len(), 64);
        for (a, b) in cloud.points().data().iter().zip(loaded.points().data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_hand_written_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.xyz");
        std::fs::write(&path, "0 0 0\n1 0 0\n").unwrap();
        let cloud = load_xyz(&path).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.point(1), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "a b c\n").unwrap();
        let err = load_xyz(&path).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");

        std::fs::write(&path, "0 0 0\n1 2\n").unwrap();
        let err = load_xyz(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.xyz");
        std::fs::write(&path, "").unwrap();
        assert!(load_xyz(&path).is_err());
    }

    #[test]
    fn dataset_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = LabeledDataset::default();
        let mut test = LabeledDataset::default();
        train.push(gen_synthetic(ShapeClass::Sphere, 16, 1).unwrap(), 0);
        train.push(gen_synthetic(ShapeClass::Cube, 16, 2).unwrap(), 1);
        test.push(gen_synthetic(ShapeClass::Cone, 16, 3).unwrap(), 4);

        write_dataset(dir.path(), &train, &test).unwrap();
        let train_back = load_dataset(dir.path(), Split::Train).unwrap();
        let test_back = load_dataset(dir.path(), Split::Test).unwrap();
        assert_eq!(train_back.len(), 2);
        assert_eq!(train_back.labels, vec![0, 1]);
        assert_eq!(test_back.len(), 1);
        assert_eq!(test_back.labels, vec![4]);
    }
}
