//! Printability: the finite set of printer-reproducible colors, the
//! non-printability score, and nearest-member projection.

use std::path::Path;

use crate::color::Rgb;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Finite set of printable RGB triples.
#[derive(Debug, Clone)]
pub struct Gamut<R: Real> {
    name: String,
    colors: Vec<Rgb<R>>,
}

impl<R: Real> Gamut<R> {
    pub fn new(name: impl Into<String>, colors: Vec<Rgb<R>>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Argument("gamut must be non-empty".into()));
        }
        for (i, c) in colors.iter().enumerate() {
            if !c.in_unit_range() {
                return Err(Error::Argument(format!(
                    "gamut color {i} {:?} outside [0,1]^3",
                    c.to_f64()
                )));
            }
            for other in &colors[..i] {
                if c == other {
                    return Err(Error::Argument(format!(
                        "duplicate gamut color {}",
                        c.to_hex()
                    )));
                }
            }
        }
        Ok(Gamut {
            name: name.into(),
            colors,
        })
    }

    /// The built-in palette: the 8 RGB cube corners plus a 3-level gray ramp,
    /// all on the 8-bit grid so they survive PNG round-trips exactly.
    pub fn default_palette() -> Self {
        let mut colors = Vec::new();
        for r8 in [0u8, 255] {
            for g8 in [0u8, 255] {
                for b8 in [0u8, 255] {
                    colors.push(Rgb::from_u8(r8, g8, b8));
                }
            }
        }
        for gray in [64u8, 128, 192] {
            colors.push(Rgb::from_u8(gray, gray, gray));
        }
        Gamut::new("default-11", colors).expect("static palette is valid")
    }

    /// Load a palette file: UTF-8, one `#RRGGBB` per line. Lines whose first
    /// token is not a color are comments when they start with `#`; an inline
    /// `#`-comment may follow a color.
    pub fn load_palette(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut colors = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let token = trimmed.split_whitespace().next().unwrap_or("");
            if let Ok(color) = Rgb::parse_hex(token) {
                let rest = trimmed[token.len()..].trim();
                if !rest.is_empty() && !rest.starts_with('#') {
                    return Err(Error::Format(format!(
                        "{}:{}: trailing content after color",
                        path.display(),
                        lineno + 1
                    )));
                }
                colors.push(color);
            } else if trimmed.starts_with('#') {
                continue; // comment line
            } else {
                return Err(Error::Format(format!(
                    "{}:{}: expected #RRGGBB or a # comment",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "palette".into());
        Gamut::new(name, colors)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn colors(&self) -> &[Rgb<R>] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Index of the nearest member (Euclidean), lowest index on ties.
    pub fn nearest(&self, color: &Rgb<R>) -> usize {
        let mut best = 0usize;
        let mut best_d = self.colors[0].distance(color);
        for (i, c) in self.colors.iter().enumerate().skip(1) {
            let d = c.distance(color);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Non-printability score of one pixel: the product over all gamut members
/// of the Euclidean distance to that member. Zero iff the pixel is a member.
pub fn nps_pixel<R: Real>(color: &Rgb<R>, gamut: &Gamut<R>) -> R {
    gamut
        .colors()
        .iter()
        .map(|c| c.distance(color))
        .fold(R::one(), |acc, d| acc * d)
}

fn texel<R: Real>(t: &Tensor<R>, y: usize, x: usize) -> Rgb<R> {
    Rgb::new(t.at3(0, y, x), t.at3(1, y, x), t.at3(2, y, x))
}

/// Sum of per-texel NPS values over a `[3,H,W]` texture.
pub fn nps_texture<R: Real>(t: &Tensor<R>, gamut: &Gamut<R>) -> Result<R> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "nps_texture expects [3,H,W], got {shape:?}"
        )));
    }
    let mut total = R::zero();
    for y in 0..shape[1] {
        for x in 0..shape[2] {
            total += nps_pixel(&texel(t, y, x), gamut);
        }
    }
    Ok(total)
}

/// Replace every texel with its nearest gamut member. The result always has
/// `nps_texture == 0`, and projecting twice changes nothing.
pub fn project_to_gamut<R: Real>(t: &Tensor<R>, gamut: &Gamut<R>) -> Result<Tensor<R>> {
    let shape = t.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "project_to_gamut expects [3,H,W], got {shape:?}"
        )));
    }
    let mut out = t.clone();
    for y in 0..shape[1] {
        for x in 0..shape[2] {
            let nearest = gamut.colors()[gamut.nearest(&texel(t, y, x))];
            *out.at3_mut(0, y, x) = nearest.r;
            *out.at3_mut(1, y, x) = nearest.g;
            *out.at3_mut(2, y, x) = nearest.b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::r;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bw_gamut() -> Gamut<f64> {
        Gamut::new(
            "bw",
            vec![Rgb::new(0.0, 0.0, 0.0), Rgb::new(1.0, 1.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn member_pixel_scores_zero() {
        let g = Gamut::<f64>::default_palette();
        for c in g.colors() {
            assert_eq!(nps_pixel(c, &g), 0.0);
        }
    }

    #[test]
    fn mid_gray_between_black_and_white() {
        let g = bw_gamut();
        let mid = Rgb::new(0.5, 0.5, 0.5);
        // sqrt(0.75) * sqrt(0.75) = 0.75
        assert!((nps_pixel(&mid, &g) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn nps_matches_loop_oracle() {
        let g = Gamut::new(
            "four",
            vec![
                Rgb::new(0.0, 0.0, 0.0),
                Rgb::new(1.0, 0.0, 0.0),
                Rgb::new(0.0, 1.0, 0.5),
                Rgb::new(0.9, 0.9, 0.9),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..32 {
            let p = Rgb::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            // Directly coded product-of-distances loop.
            let mut expect = 1.0;
            for c in g.colors() {
                let d = ((p.r - c.r).powi(2) + (p.g - c.g).powi(2) + (p.b - c.b).powi(2)).sqrt();
                expect *= d;
            }
            assert!((nps_pixel(&p, &g) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn texture_nps_is_additive() {
        let g = bw_gamut();
        // 2x2 all-black texture: zero.
        let mut t = Tensor::<f64>::zeros(vec![3, 2, 2]);
        assert_eq!(nps_texture(&t, &g).unwrap(), 0.0);
        // Make one texel mid-gray: the texture score equals that pixel's.
        for c in 0..3 {
            *t.at3_mut(c, 0, 1) = 0.5;
        }
        let single = nps_pixel(&Rgb::new(0.5, 0.5, 0.5), &g);
        assert!((nps_texture(&t, &g).unwrap() - single).abs() < 1e-12);
    }

    #[test]
    fn texture_nps_matches_loop_oracle() {
        let g = Gamut::<f64>::default_palette();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::new(
            vec![3, 3, 4],
            (0..36).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let mut expect = 0.0;
        for y in 0..3 {
            for x in 0..4 {
                let p = Rgb::new(t.at3(0, y, x), t.at3(1, y, x), t.at3(2, y, x));
                let mut prod = 1.0;
                for c in g.colors() {
                    prod *= c.distance(&p);
                }
                expect += prod;
            }
        }
        assert!((nps_texture(&t, &g).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn projection_snaps_to_nearest_and_is_idempotent() {
        let g = bw_gamut();
        let t = Tensor::full(vec![3, 1, 1], 0.4);
        let p = project_to_gamut(&t, &g).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0), "0.4-gray snaps to black");

        let member = Tensor::full(vec![3, 1, 1], 1.0);
        let q = project_to_gamut(&member, &g).unwrap();
        assert_eq!(q.data(), member.data());

        let twice = project_to_gamut(&p, &g).unwrap();
        assert_eq!(twice.data(), p.data());
    }

    #[test]
    fn projection_zeroes_nps_and_is_nearest_neighbor_optimal() {
        let g = Gamut::<f64>::default_palette();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::new(
            vec![3, 4, 4],
            (0..48).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap();
        let p = project_to_gamut(&t, &g).unwrap();
        assert_eq!(nps_texture(&p, &g).unwrap(), 0.0);
        // Brute force: no other gamut member is strictly closer to the
        // original texel than the chosen one.
        for y in 0..4 {
            for x in 0..4 {
                let orig = Rgb::new(t.at3(0, y, x), t.at3(1, y, x), t.at3(2, y, x));
                let chosen = Rgb::new(p.at3(0, y, x), p.at3(1, y, x), p.at3(2, y, x));
                let chosen_d = chosen.distance(&orig);
                for c in g.colors() {
                    assert!(c.distance(&orig) >= chosen_d - 1e-12);
                }
            }
        }
    }

    #[test]
    fn tie_breaks_by_lowest_index() {
        let g = Gamut::new(
            "tie",
            vec![Rgb::new(0.0, 0.0, 0.0), Rgb::new(1.0, 0.0, 0.0)],
        )
        .unwrap();
        // Exactly halfway between the two members along r.
        assert_eq!(g.nearest(&Rgb::new(0.5, 0.0, 0.0)), 0);
    }

    #[test]
    fn palette_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        std::fs::write(
            &path,
            "# printable set\n#FF0000\n#00FF00  # green\n\n#0000FF\n",
        )
        .unwrap();
        let g = Gamut::<f64>::load_palette(&path).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.colors()[1], Rgb::from_u8(0, 255, 0));

        std::fs::write(&path, "#FF0000\nnot-a-color\n").unwrap();
        assert!(Gamut::<f64>::load_palette(&path).is_err());

        std::fs::write(&path, "#FF0000\n#FF0000\n").unwrap();
        assert!(matches!(
            Gamut::<f64>::load_palette(&path),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn default_palette_has_eleven_entries_on_8bit_grid() {
        let g = Gamut::<f64>::default_palette();
        assert_eq!(g.len(), 11);
        for c in g.colors() {
            for ch in c.channels() {
                let scaled = ch * 255.0;
                assert!((scaled - scaled.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn f32_lane_smoke() {
        let g = Gamut::<f32>::default_palette();
        let t = Tensor::<f32>::full(vec![3, 2, 2], r(0.3));
        let p = project_to_gamut(&t, &g).unwrap();
        assert_eq!(nps_texture(&p, &g).unwrap(), 0.0);
    }
}
