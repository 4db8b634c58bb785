use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::API_VERSION;
use crate::error::{Error, Result};
use crate::image::{decode_micrograph, encode_png, ImageKind, KindHint, Micrograph, Region};
use crate::metrics::{border_contiguity, InpaintMethod, InpaintResult};
use crate::models::{load_bundle, save_bundle, Method, ModelBundle};

const IMAGE_FILE: &str = "image.bin";
const META_FILE: &str = "session.json";

/// Which inpainting method a region was drawn for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMethod {
    Gopt,
    Zopt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEntry {
    pub method: RegionMethod,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub id: String,
    pub method: Method,
    pub partial: bool,
    pub iterations: usize,
    pub digest: String,
    pub job_id: Option<String>,
}

/// Metadata of a stored inpainting, also the JSON export sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultInfo {
    pub id: String,
    pub method: InpaintMethod,
    pub bundle_id: Option<String>,
    pub region: Region,
    pub seed_digest: Option<String>,
    pub rng_seed: Option<u64>,
    pub warning: Option<String>,
    /// Border contiguity KS p-value against the original image.
    pub contiguity_p: Option<f64>,
    pub contiguity_statistic: Option<f64>,
}

/// Persisted state of a session (`session.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub v: u32,
    pub id: String,
    pub kind_hint: Option<KindHint>,
    pub kind: ImageKind,
    pub width: usize,
    pub height: usize,
    pub source_hash: String,
    pub region: Option<RegionEntry>,
    pub bundles: BTreeMap<String, BundleInfo>,
    pub results: BTreeMap<String, ResultInfo>,
}

pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    pub image: Arc<Micrograph>,
    pub meta: Mutex<SessionMeta>,
    bundles: Mutex<HashMap<String, Arc<ModelBundle>>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn new_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

impl Session {
    /// Decode an upload and persist it under `root/{id}`.
    pub fn create(root: &Path, bytes: &[u8], hint: Option<KindHint>) -> Result<Session> {
        let image = decode_micrograph(bytes, hint)?;
        let id = new_id();
        let dir = root.join(&id);
        create_dir(&dir.join("bundles"))?;
        create_dir(&dir.join("results"))?;
        write_atomic(&dir.join(IMAGE_FILE), bytes)?;
        let meta = SessionMeta {
            v: API_VERSION,
            id: id.clone(),
            kind_hint: hint,
            kind: image.kind(),
            width: image.width(),
            height: image.height(),
            source_hash: image.source_hash().to_string(),
            region: None,
            bundles: BTreeMap::new(),
            results: BTreeMap::new(),
        };
        let s = Session { id, dir, image: Arc::new(image), meta: Mutex::new(meta), bundles: Mutex::new(HashMap::new()) };
        s.persist()?;
        Ok(s)
    }

    /// Reload a persisted session, verifying every bundle against its
    /// recorded digest. Bundles that fail verification are dropped.
    pub fn open(dir: &Path) -> Result<Session> {
        let meta_path = dir.join(META_FILE);
        let raw = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut meta: SessionMeta =
            serde_json::from_slice(&raw).map_err(|e| Error::Other(format!("{}: {e}", meta_path.display())))?;
        let img_path = dir.join(IMAGE_FILE);
        let bytes = std::fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
        let image = decode_micrograph(&bytes, meta.kind_hint)?;
        if image.source_hash() != meta.source_hash {
            return Err(Error::Other(format!("session {} image digest changed on disk", meta.id)));
        }
        let mut bundles = HashMap::new();
        meta.bundles.retain(|id, info| match load_bundle(dir.join("bundles").join(format!("{id}.mipb"))) {
            Ok(b) if b.digest() == info.digest => {
                bundles.insert(id.clone(), Arc::new(b));
                true
            }
            Ok(_) => {
                log::warn!("bundle {id} digest mismatch; dropped");
                false
            }
            Err(e) => {
                log::warn!("bundle {id} unreadable: {e}");
                false
            }
        });
        Ok(Session {
            id: meta.id.clone(),
            dir: dir.to_path_buf(),
            image: Arc::new(image),
            meta: Mutex::new(meta),
            bundles: Mutex::new(bundles),
        })
    }

    pub fn persist(&self) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(&*self.meta.lock().expect("session lock")).expect("meta serialises");
        write_atomic(&self.dir.join(META_FILE), &bytes)
    }

    pub fn meta(&self) -> SessionMeta {
        self.meta.lock().expect("session lock").clone()
    }

    pub fn bundle(&self, id: &str) -> Option<Arc<ModelBundle>> {
        self.bundles.lock().expect("bundle lock").get(id).cloned()
    }

    pub fn bundle_path(&self, id: &str) -> PathBuf {
        self.dir.join("bundles").join(format!("{id}.mipb"))
    }

    pub fn result_path(&self, id: &str, ext: &str) -> PathBuf {
        self.dir.join("results").join(format!("{id}.{ext}"))
    }

    pub fn add_bundle(&self, bundle: ModelBundle, job_id: Option<String>) -> Result<BundleInfo> {
        let id = new_id();
        save_bundle(&bundle, self.bundle_path(&id))?;
        let info = BundleInfo {
            id: id.clone(),
            method: bundle.method,
            partial: bundle.partial,
            iterations: bundle.iterations,
            digest: bundle.digest(),
            job_id,
        };
        self.bundles.lock().expect("bundle lock").insert(id.clone(), Arc::new(bundle));
        self.meta.lock().expect("session lock").bundles.insert(id, info.clone());
        self.persist()?;
        Ok(info)
    }

    /// Store an inpainting as PNG plus JSON sidecar, scoring its border.
    pub fn add_result(&self, result: &InpaintResult, bundle_id: Option<String>, rng_seed: Option<u64>) -> Result<ResultInfo> {
        let id = new_id();
        let contiguity = border_contiguity(result, &self.image)
            .map_err(|e| log::warn!("contiguity not computed: {e}"))
            .ok();
        let info = ResultInfo {
            id: id.clone(),
            method: result.method,
            bundle_id,
            region: result.region.clone(),
            seed_digest: result.seed_digest.clone(),
            rng_seed,
            warning: result.warning.clone(),
            contiguity_p: contiguity.as_ref().map(|c| c.p_value),
            contiguity_statistic: contiguity.as_ref().map(|c| c.ks_statistic),
        };
        write_atomic(&self.result_path(&id, "png"), &encode_png(&result.image)?)?;
        write_atomic(&self.result_path(&id, "json"), &serde_json::to_vec_pretty(&info).expect("info serialises"))?;
        self.meta.lock().expect("session lock").results.insert(id, info.clone());
        self.persist()?;
        Ok(info)
    }
}
