//! The printable billboard texture and its on-disk form: an 8-bit PNG plus a
//! JSON sidecar (`<name>.json` next to `<name>.png`) carrying the printable
//! palette it was projected onto, the seed, the config hash, and the tail of
//! the objective trace.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::gamut::{nps_texture, Gamut};
use crate::image_io;
use crate::real::Real;
use crate::tensor::Tensor;

/// A printable perturbation: the texture plus the gamut it is printable in
/// and provenance metadata.
#[derive(Debug, Clone)]
pub struct Perturbation<R: Real> {
    /// `[3,Hb,Wb]`, values in `[0,1]`, every texel a gamut member.
    pub texture: Tensor<R>,
    pub gamut_name: String,
    /// The printable palette, as hex strings (the gamut snapshot).
    pub palette: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    /// Last objective values of the generating run (newest last).
    pub trace_tail: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarDoc {
    version: String,
    gamut_name: String,
    palette: Vec<String>,
    seed: u64,
    config_hash: String,
    trace_tail: Vec<f64>,
}

fn sidecar_path(texture_path: &Path) -> PathBuf {
    texture_path.with_extension("json")
}

impl<R: Real> Perturbation<R> {
    pub fn new(texture: Tensor<R>, gamut: &Gamut<R>) -> Result<Self> {
        let shape = texture.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Shape(format!(
                "perturbation texture must be [3,H,W], got {shape:?}"
            )));
        }
        Ok(Perturbation {
            texture,
            gamut_name: gamut.name().to_string(),
            palette: gamut.colors().iter().map(|c| c.to_hex()).collect(),
            seed: 0,
            config_hash: String::new(),
            trace_tail: Vec::new(),
        })
    }

    /// Rebuild the gamut this perturbation was projected onto.
    pub fn gamut(&self) -> Result<Gamut<R>> {
        let colors = self
            .palette
            .iter()
            .map(|h| Rgb::parse_hex(h))
            .collect::<Result<Vec<_>>>()?;
        Gamut::new(self.gamut_name.clone(), colors)
    }

    /// Billboard dimensions `(Hb, Wb)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.texture.shape()[1], self.texture.shape()[2])
    }

    /// Write the texture PNG and its JSON sidecar.
    pub fn save(&self, texture_path: &Path) -> Result<()> {
        image_io::save_image(&self.texture, texture_path)?;
        let doc = SidecarDoc {
            version: crate::scene::MANIFEST_VERSION.to_string(),
            gamut_name: self.gamut_name.clone(),
            palette: self.palette.clone(),
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            trace_tail: self.trace_tail.clone(),
        };
        let side = sidecar_path(texture_path);
        let mut text = serde_json::to_string_pretty(&doc)
            .map_err(|e| Error::Format(format!("sidecar encode: {e}")))?;
        text.push('\n');
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    /// Load a texture + sidecar pair and verify every texel is printable
    /// (zero non-printability score against the sidecar's palette).
    pub fn load(texture_path: &Path) -> Result<Self> {
        let texture: Tensor<R> = image_io::load_image(texture_path)?;
        let side = sidecar_path(texture_path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let doc: SidecarDoc = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", side.display())))?;
        let perturbation = Perturbation {
            texture,
            gamut_name: doc.gamut_name,
            palette: doc.palette,
            seed: doc.seed,
            config_hash: doc.config_hash,
            trace_tail: doc.trace_tail,
        };
        let gamut = perturbation.gamut()?;
        let nps = nps_texture(&perturbation.texture, &gamut)?;
        if nps > R::zero() {
            return Err(Error::GamutViolation(format!(
                "{}: texture has NPS {} > 0 against palette {:?}",
                texture_path.display(),
                nps,
                perturbation.gamut_name
            )));
        }
        Ok(perturbation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gamut::project_to_gamut;

    #[test]
    fn save_load_round_trip_preserves_texture_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pert.png");
        let gamut = Gamut::<f64>::default_palette();
        let noisy = Tensor::new(
            vec![3, 4, 6],
            (0..72).map(|i| (i as f64 * 0.137).fract()).collect(),
        )
        .unwrap();
        let texture = project_to_gamut(&noisy, &gamut).unwrap();
        let mut p = Perturbation::new(texture.clone(), &gamut).unwrap();
        p.seed = 1234;
        p.config_hash = "abc".into();
        p.trace_tail = vec![0.5, 1.5];
        p.save(&path).unwrap();

        let back: Perturbation<f64> = Perturbation::load(&path).unwrap();
        assert_eq!(back.seed, 1234);
        assert_eq!(back.config_hash, "abc");
        assert_eq!(back.trace_tail, vec![0.5, 1.5]);
        assert!(back.texture.max_abs_diff(&texture).unwrap() < 1e-12);
    }

    #[test]
    fn out_of_gamut_texture_is_reported_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        let gamut = Gamut::<f64>::default_palette();
        // 0.4 is not a palette color (codes 0, 64, 128, 192, 255 only).
        let texture = Tensor::full(vec![3, 2, 2], 0.4);
        let p = Perturbation::new(texture, &gamut).unwrap();
        p.save(&path).unwrap();
        let err = Perturbation::<f64>::load(&path).unwrap_err();
        assert!(matches!(err, Error::GamutViolation(_)), "{err}");
    }

    #[test]
    fn missing_sidecar_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("orphan.png");
        let texture = Tensor::<f64>::zeros(vec![3, 2, 2]);
        image_io::save_image(&texture, &path).unwrap();
        let err = Perturbation::<f64>::load(&path).unwrap_err();
        assert!(err.is_io());
    }
}
