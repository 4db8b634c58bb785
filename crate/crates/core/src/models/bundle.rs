use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{ImageKind, Micrograph, Region};
use crate::models::{ArchConfig, CriticNet, GeneratorNet, SeedTensor};
use crate::train::TrainingConfig;

pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MIPB";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Generator trained with a fixed seed and boundary content loss.
    Gopt,
    /// Plain adversarial generator for post-hoc seed optimisation.
    Wgan,
}

/// Everything needed to re-evaluate a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub method: Method,
    pub kind: ImageKind,
    pub arch: ArchConfig,
    pub config: TrainingConfig,
    pub generator: GeneratorNet<f32>,
    pub critic: CriticNet<f32>,
    pub fixed_seed: Option<SeedTensor>,
    pub region: Option<Region>,
    pub source_hash: String,
    /// Training stopped before `i_max`.
    pub partial: bool,
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    v: u32,
    method: Method,
    kind: ImageKind,
    arch: ArchConfig,
    config: TrainingConfig,
    region: Option<Region>,
    source_hash: String,
    partial: bool,
    iterations: usize,
    blocks: Vec<BlockInfo>,
    fixed_seed: Option<SeedShape>,
}

#[derive(Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct SeedShape {
    depth: usize,
    s_x: usize,
    s_y: usize,
}

impl ModelBundle {
    /// Fresh networks for an image kind.
    pub fn init(
        method: Method,
        kind: ImageKind,
        arch: ArchConfig,
        config: TrainingConfig,
        region: Option<Region>,
        source_hash: String,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let generator = GeneratorNet::new(&arch, kind.channels(), kind.activation(), rng);
        let critic = CriticNet::new(&arch, kind.channels(), rng);
        Self {
            method,
            kind,
            arch,
            config,
            generator,
            critic,
            fixed_seed: None,
            region,
            source_hash,
            partial: false,
            iterations: 0,
        }
    }

    /// Error unless `img` has the kind this bundle was trained on.
    pub fn check_image(&self, img: &Micrograph) -> Result<()> {
        if img.kind() != self.kind {
            return Err(Error::Bundle(format!(
                "bundle was trained on {:?} images, got {:?}",
                self.kind,
                img.kind()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut names: Vec<String> = GeneratorNet::<f32>::param_names().iter().map(|s| s.to_string()).collect();
        for l in 0..self.critic.convs.len() {
            names.push(format!("critic.{l}.weight"));
            names.push(format!("critic.{l}.bias"));
        }
        let mut blocks: Vec<&[f32]> = self.generator.params();
        blocks.extend(self.critic.params());
        if let Some(z) = &self.fixed_seed {
            names.push("fixed_seed".into());
            blocks.push(&z.values);
        }
        let manifest = Manifest {
            v: BUNDLE_VERSION,
            method: self.method,
            kind: self.kind,
            arch: self.arch.clone(),
            config: self.config.clone(),
            region: self.region.clone(),
            source_hash: self.source_hash.clone(),
            partial: self.partial,
            iterations: self.iterations,
            blocks: names.into_iter().zip(&blocks).map(|(name, b)| BlockInfo { name, len: b.len() }).collect(),
            fixed_seed: self.fixed_seed.as_ref().map(|z| SeedShape { depth: z.depth, s_x: z.s_x, s_y: z.s_y }),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in blocks {
            for v in b {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Bundle("not a model bundle".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != BUNDLE_VERSION {
            return Err(Error::Bundle(format!("bundle version {version}, expected {BUNDLE_VERSION}")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Bundle("digest mismatch; bundle is corrupted".into()));
        }
        let json_len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body.get(16..16 + json_len).ok_or_else(|| Error::Bundle("truncated manifest".into()))?;
        let m: Manifest = serde_json::from_slice(json).map_err(|e| Error::Bundle(format!("manifest: {e}")))?;
        if m.v != version {
            return Err(Error::Bundle("manifest version disagrees with header".into()));
        }
        let mut data = &body[16 + json_len..];
        let total: usize = m.blocks.iter().map(|b| b.len).sum();
        if data.len() != total * 4 {
            return Err(Error::Bundle(format!("{} parameter bytes, manifest lists {}", data.len(), total * 4)));
        }
        let mut take = |len: usize| -> Vec<f32> {
            let (head, rest) = data.split_at(len * 4);
            data = rest;
            head.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect()
        };

        // shapes come from the architecture; values are overwritten below
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bundle = ModelBundle::init(
            m.method,
            m.kind,
            m.arch,
            m.config,
            m.region,
            m.source_hash,
            &mut rng,
        );
        bundle.partial = m.partial;
        bundle.iterations = m.iterations;
        let mut infos = m.blocks.iter();
        let targets = bundle.generator.params_mut().into_iter().chain(bundle.critic.params_mut());
        for target in targets {
            let info = infos.next().ok_or_else(|| Error::Bundle("missing parameter block".into()))?;
            if info.len != target.len() {
                return Err(Error::Bundle(format!(
                    "block {} has {} values, architecture needs {}",
                    info.name,
                    info.len,
                    target.len()
                )));
            }
            target.copy_from_slice(&take(info.len));
        }
        bundle.fixed_seed = match (m.fixed_seed, infos.next()) {
            (Some(shape), Some(info)) => Some(SeedTensor::new(shape.depth, shape.s_x, shape.s_y, take(info.len))?),
            (None, None) => None,
            _ => return Err(Error::Bundle("fixed seed block does not match manifest".into())),
        };
        Ok(bundle)
    }

    /// Hex SHA-256 of the serialised bundle.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Hex SHA-256 of the generator parameters only.
    pub fn generator_digest(&self) -> String {
        let mut h = Sha256::new();
        for p in self.generator.params() {
            for v in p {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn save_bundle(b: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, b.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}
