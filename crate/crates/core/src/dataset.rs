//! On-disk dataset layout: a bundler reconstruction, the bundler camera
//! list naming its cameras, a directory of keyfiles (`<stem>.key` per image)
//! and a query list of `name width height [focal_px]` lines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{bundler_to_internal, Pose};
use crate::sfm::{
    attach_mean_descriptors, parse_bundle, parse_image_list, parse_keyfile, split_golden, Feature, ListEntry,
    QueryImage, SfmError, SfmModel,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: SfmError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: query `{name}` needs `width height [focal]` after its name", path.display())]
    MissingDimensions { path: PathBuf, name: String },
    #[error(transparent)]
    Split(SfmError),
}

/// Paths of a dataset on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPaths {
    pub model: PathBuf,
    pub cameras: PathBuf,
    pub keys: PathBuf,
    pub queries: PathBuf,
}

impl DatasetPaths {
    /// Conventional layout under `dir`: `bundle.out`, `list.txt`, `keys/`
    /// and `queries.txt`.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            model: dir.join("bundle.out"),
            cameras: dir.join("list.txt"),
            keys: dir.join("keys"),
            queries: dir.join("queries.txt"),
        }
    }
}

/// A loaded dataset with query cameras removed from the model.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: SfmModel,
    pub queries: Vec<QueryImage>,
    pub golden: BTreeMap<String, Pose>,
    pub dropped_points: usize,
    pub load_seconds: f64,
}

/// Key file of an image: its file stem with a `.key` extension.
pub fn keyfile_name(image_name: &str) -> String {
    let stem = Path::new(image_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image_name.to_string());
    format!("{stem}.key")
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path).map(BufReader::new).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<SfmModel, DatasetError> {
    parse_bundle(open(path)?).map_err(|source| DatasetError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_list(path: &Path) -> Result<Vec<ListEntry>, DatasetError> {
    parse_image_list(open(path)?).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_keyfile(path: &Path) -> Result<Vec<Feature>, DatasetError> {
    parse_keyfile(open(path)?).map_err(|source| DatasetError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

/// A query list entry: `(name, width, height, focal)`.
pub type QueryEntry = (String, u32, u32, Option<f64>);

pub fn load_query_list(path: &Path) -> Result<Vec<QueryEntry>, DatasetError> {
    load_list(path)?
        .into_iter()
        .map(|e| {
            let (w, h, f) = e.query_dims().ok_or_else(|| DatasetError::MissingDimensions {
                path: path.to_path_buf(),
                name: e.name.clone(),
            })?;
            Ok((e.name, w, h, f))
        })
        .collect()
}

/// Loads everything, hides the query cameras and averages the remaining
/// tracks' descriptors. `selected` restricts the loaded queries; the split
/// still removes every listed query from the model.
pub fn load_dataset(paths: &DatasetPaths, selected: Option<&[String]>) -> Result<Dataset, DatasetError> {
    let start = Instant::now();
    let full = load_model(&paths.model)?;
    let camera_names: Vec<String> = load_list(&paths.cameras)?.into_iter().map(|e| e.name).collect();
    let query_list = load_query_list(&paths.queries)?;
    let query_names: Vec<String> = query_list.iter().map(|q| q.0.clone()).collect();
    log::info!(
        "loaded {} cameras, {} points, {} queries",
        full.cameras.len(),
        full.points.len(),
        query_names.len()
    );

    let split = split_golden(&full, &query_names, &camera_names).map_err(DatasetError::Split)?;
    drop(full);
    let mut model = split.info;

    let keyfiles: Vec<Vec<Feature>> = split
        .kept_cameras
        .par_iter()
        .map(|&c| load_keyfile(&paths.keys.join(keyfile_name(&camera_names[c]))))
        .collect::<Result<_, _>>()?;
    attach_mean_descriptors(&mut model, &keyfiles).map_err(|source| DatasetError::Parse {
        path: paths.keys.clone(),
        source,
    })?;
    drop(keyfiles);

    let wanted = |name: &str| selected.is_none_or(|s| s.iter().any(|n| n == name));
    let queries: Vec<QueryImage> = query_list
        .par_iter()
        .filter(|q| wanted(&q.0))
        .map(|(name, width, height, focal)| {
            Ok(QueryImage {
                name: name.clone(),
                width: *width,
                height: *height,
                features: load_keyfile(&paths.keys.join(keyfile_name(name)))?,
                exif_focal_px: *focal,
            })
        })
        .collect::<Result<_, DatasetError>>()?;

    let golden = split
        .golden
        .iter()
        .filter(|(n, _)| wanted(n))
        .map(|(n, rec)| (n.clone(), bundler_to_internal(rec)))
        .collect();

    Ok(Dataset {
        model,
        queries,
        golden,
        dropped_points: split.dropped_points,
        load_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{generate_synthetic_scene, write_dataset, SceneParams};

    #[test]
    fn key_names() {
        assert_eq!(keyfile_name("images/IMG_01.jpg"), "IMG_01.key");
        assert_eq!(keyfile_name("plain"), "plain.key");
    }

    #[test]
    fn synthetic_round_trip() {
        let scene = generate_synthetic_scene(&SceneParams {
            n_points: 300,
            n_cameras: 8,
            n_queries: 3,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&scene, dir.path()).unwrap();
        let ds = load_dataset(&DatasetPaths::in_dir(dir.path()), None).unwrap();

        assert_eq!(ds.model.cameras.len(), scene.model.cameras.len());
        assert_eq!(ds.model.points.len(), scene.model.points.len());
        for (a, b) in ds.model.points.iter().zip(&scene.model.points) {
            assert_eq!(a.visibility, b.visibility);
            assert_eq!(a.mean_descriptor, b.mean_descriptor);
            assert!((a.position - b.position).norm() < 1e-6);
        }
        assert_eq!(ds.queries.len(), 3);
        for q in &scene.queries {
            let g = ds.golden[&q.image.name];
            assert!((g.center - q.golden.center).norm() < 1e-6);
            assert!((g.rotation - q.golden.rotation).norm() < 1e-6);
            let loaded = ds.queries.iter().find(|l| l.name == q.image.name).unwrap();
            assert_eq!(loaded.features.len(), q.image.features.len());
        }

        let one = vec![scene.queries[1].image.name.clone()];
        let ds = load_dataset(&DatasetPaths::in_dir(dir.path()), Some(&one)).unwrap();
        assert_eq!(ds.queries.len(), 1);
        assert_eq!(ds.golden.len(), 1);
        assert_eq!(ds.model.cameras.len(), scene.model.cameras.len());
    }

    #[test]
    fn missing_files_and_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(dir.path());
        assert!(matches!(load_dataset(&paths, None), Err(DatasetError::Io { .. })));
        std::fs::write(&paths.queries, "a.jpg\n").unwrap();
        assert!(matches!(
            load_query_list(&paths.queries),
            Err(DatasetError::MissingDimensions { .. })
        ));
    }
}
