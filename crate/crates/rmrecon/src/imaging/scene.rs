use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{load_mask, load_pfm, Camera, ImageF, MaskImage};
use crate::error::{Error, Result};

/// Axis-aligned reconstruction volume.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VolumeBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl VolumeBox {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// One posed view: HDR image, silhouette mask, camera.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub image: ImageF,
    pub mask: MaskImage,
    pub camera: Camera,
}

/// A reconstruction scene: posed views plus the volume the object lives in.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub views: Vec<SceneView>,
    pub volume: VolumeBox,
    pub grid_res: usize,
    /// Optional ground-truth artifact paths carried through from synthesis.
    pub ground_truth: Option<GroundTruthPaths>,
}

/// Paths to ground-truth artifacts, relative to the scene file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthPaths {
    pub mesh: PathBuf,
    pub reflectance_maps: Vec<PathBuf>,
    pub normal_maps: Vec<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ViewFile {
    image: PathBuf,
    mask: PathBuf,
    /// [fx, fy, cx, cy]
    #[serde(rename = "K")]
    k: [f64; 4],
    /// 3x3 row-major world-to-camera rotation.
    #[serde(rename = "R")]
    r: Vec<f64>,
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    views: Vec<ViewFile>,
    volume: VolumeBox,
    grid_res: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<GroundTruthPaths>,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::InvalidScene(format!(
                "need at least 2 views, got {}",
                self.views.len()
            )));
        }
        let ext = self.volume.extent();
        if ext.x <= 0.0 || ext.y <= 0.0 || ext.z <= 0.0 {
            return Err(Error::InvalidScene("volume extent must be positive".into()));
        }
        if self.grid_res < 4 {
            return Err(Error::InvalidScene(format!(
                "grid_res must be >= 4, got {}",
                self.grid_res
            )));
        }
        for (i, view) in self.views.iter().enumerate() {
            if view.image.width != view.mask.width || view.image.height != view.mask.height {
                return Err(Error::InvalidScene(format!(
                    "view {i}: image {}x{} and mask {}x{} differ",
                    view.image.width, view.image.height, view.mask.width, view.mask.height
                )));
            }
        }
        Ok(())
    }

    /// Per-view unit viewing directions (scene center toward camera, world frame).
    pub fn omega_o_world(&self, view: usize) -> Vector3<f64> {
        self.views[view].camera.omega_o_world(&self.volume.center())
    }
}

/// Loads a scene JSON plus every referenced image and mask. Relative paths
/// resolve against the scene file's directory.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: SceneFile = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut views = Vec::with_capacity(file.views.len());
    for (i, vf) in file.views.iter().enumerate() {
        if vf.r.len() != 9 {
            return Err(Error::InvalidScene(format!(
                "view {i}: R must have 9 entries, got {}",
                vf.r.len()
            )));
        }
        let rotation = Matrix3::from_row_slice(&vf.r);
        let image = load_pfm(base.join(&vf.image))?;
        image.validate_radiance()?;
        let mask = load_mask(base.join(&vf.mask))?;
        let camera = Camera::new(
            vf.k[0],
            vf.k[1],
            vf.k[2],
            vf.k[3],
            rotation,
            Vector3::from(vf.t),
            image.width,
            image.height,
        )?;
        views.push(SceneView {
            image,
            mask,
            camera,
        });
    }

    let scene = SceneConfig {
        views,
        volume: file.volume,
        grid_res: file.grid_res,
        ground_truth: file.ground_truth,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes the scene JSON. Image and mask paths are recorded as given;
/// callers are responsible for writing those files.
pub fn save_scene(
    path: impl AsRef<Path>,
    views: &[(PathBuf, PathBuf, &Camera)],
    volume: VolumeBox,
    grid_res: usize,
    ground_truth: Option<&GroundTruthPaths>,
) -> Result<()> {
    let path = path.as_ref();
    let file = SceneFile {
        views: views
            .iter()
            .map(|(image, mask, cam)| ViewFile {
                image: image.clone(),
                mask: mask.clone(),
                k: [cam.fx, cam.fy, cam.cx, cam.cy],
                r: cam.rotation.transpose().as_slice().to_vec(),
                t: [cam.translation.x, cam.translation.y, cam.translation.z],
            })
            .collect(),
        volume,
        grid_res,
        ground_truth: ground_truth.cloned(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
