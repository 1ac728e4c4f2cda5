//! Glyph-world stand-in for real state-pair footage.
//!
//! A scene is a small grid of household objects and one agent. Sampling one
//! applicable action and applying it gives the (current, target) pair, the
//! scene graphs of both states come from the same rule table that defines
//! the action effects, and the caption comes from a paraphrase template.

mod action;
mod caption;
mod render;
mod scene;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{write_records, Split, SplitRatios, StatePairSample, Viewpoint};
use crate::error::{Error, Result};

pub use action::{apply_action, candidate_actions, ActionSpec, Verb};
pub use caption::{caption_action, caption_verb, lexicon, lexicon_map, templates};
pub use render::render;
pub use scene::{
    class_index, generate_scene, Agent, Cell, Contact, Location, ObjectClass, Scene, SceneObject,
    CATALOG, COLORS, PERSON, ZONES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub grid_width: usize,
    pub grid_height: usize,
    /// Image side in pixels; must be a multiple of both grid dimensions.
    pub resolution: u32,
    /// Subset of the built-in object catalog; empty means all of it.
    pub object_classes: Vec<String>,
    pub verbs: Vec<Verb>,
    pub min_objects: usize,
    pub max_objects: usize,
    pub count: usize,
    pub seed: u64,
    pub split: SplitRatios,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            grid_width: 8,
            grid_height: 8,
            resolution: 64,
            object_classes: Vec::new(),
            verbs: Verb::ALL.to_vec(),
            min_objects: 4,
            max_objects: 8,
            count: 1000,
            seed: 1,
            split: SplitRatios::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("generator config serialises")
    }

    pub fn class_indices(&self) -> Result<Vec<usize>> {
        if self.object_classes.is_empty() {
            return Ok((0..CATALOG.len()).collect());
        }
        self.object_classes
            .iter()
            .map(|n| class_index(n).ok_or_else(|| Error::config(format!("unknown object class `{n}`"))))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_width == 0 || self.grid_height == 0 {
            return Err(Error::config("grid must be non-empty"));
        }
        if self.resolution % self.grid_width as u32 != 0 || self.resolution % self.grid_height as u32 != 0 {
            return Err(Error::config("resolution must be a multiple of the grid size"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::config("min_objects exceeds max_objects"));
        }
        let capacity = self.grid_width * self.grid_height - 1;
        if self.max_objects > capacity {
            return Err(Error::config(format!(
                "max_objects {} exceeds grid capacity {capacity}",
                self.max_objects
            )));
        }
        let classes = self.class_indices()?;
        if self.max_objects > classes.len() {
            return Err(Error::config("max_objects exceeds the number of object classes"));
        }
        if self.verbs.is_empty() {
            return Err(Error::config("verb set is empty"));
        }
        self.split.validate()
    }
}

/// Per-sample seed; serial and parallel generation agree on it.
pub fn sample_seed(global: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(global) ^ index)
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub record: StatePairSample,
    pub scene_a: Scene,
    pub scene_b: Scene,
    pub action: ActionSpec,
    pub image_a: image::RgbImage,
    pub image_b: image::RgbImage,
}

/// Builds sample `index` of a dataset: a scene, one applicable action, both
/// renders, both scene graphs and a caption.
pub fn generate_sample(config: &GeneratorConfig, index: usize) -> Result<GeneratedSample> {
    let seed = sample_seed(config.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..1000 {
        let scene = generate_scene(rng.random(), config)?;
        let options: Vec<Vec<ActionSpec>> = config
            .verbs
            .iter()
            .map(|&v| candidate_actions(&scene, v))
            .filter(|c| !c.is_empty())
            .collect();
        if options.is_empty() {
            continue;
        }
        let group = &options[rng.random_range(0..options.len())];
        let action = group[rng.random_range(0..group.len())].clone();
        let after = apply_action(&scene, &action)?;
        let caption = caption_action(&action, rng.random());
        let viewpoint = if rng.random_bool(0.5) {
            Viewpoint::FirstPerson
        } else {
            Viewpoint::ThirdPerson
        };
        let id = format!("s{index:06}");
        let record = StatePairSample {
            image_a: format!("images/{id}_a.png"),
            image_b: format!("images/{id}_b.png"),
            id,
            viewpoint,
            object_hint: action.object.clone(),
            caption,
            graphs_a: scene.scene_graph(),
            graphs_b: after.scene_graph(),
        };
        return Ok(GeneratedSample {
            image_a: render(&scene, config.resolution)?,
            image_b: render(&after, config.resolution)?,
            record,
            scene_a: scene,
            scene_b: after,
            action,
        });
    }
    Err(Error::config("no applicable action found in 1000 scenes; widen the config"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    /// (relative path, hex SHA-256) for every written file, sorted by path.
    pub files: Vec<(String, String)>,
    pub checksum: String,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (p, h) in &self.files {
            s.push_str(&format!("{h}  {p}\n"));
        }
        s.push_str(&format!("checksum {}\n", self.checksum));
        s
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn png_bytes(img: &image::RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: PathBuf::from("<memory>"),
            message: e.to_string(),
        })?;
    Ok(buf.into_inner())
}

/// Writes a full dataset under `out`: images, one record file per split,
/// the POS lexicon, the config echo and a manifest with checksums.
pub fn generate_dataset(config: &GeneratorConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    fs::create_dir_all(out.join("images"))?;
    let generated: Vec<(StatePairSample, Vec<u8>, Vec<u8>)> = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let g = generate_sample(config, i)?;
            Ok((g.record, png_bytes(&g.image_a)?, png_bytes(&g.image_b)?))
        })
        .collect::<Result<_>>()?;

    let mut files: Vec<(String, String)> = Vec::new();
    let mut records = Vec::with_capacity(generated.len());
    for (rec, a, b) in generated {
        for (rel, bytes) in [(&rec.image_a, a), (&rec.image_b, b)] {
            fs::write(out.join(rel), &bytes)?;
            files.push((rel.clone(), sha256_hex(&bytes)));
        }
        records.push(rec);
    }

    let sizes = config.split.sizes(records.len());
    let mut start = 0;
    for (split, n) in Split::ALL.into_iter().zip(sizes) {
        let path = out.join(split.file_name());
        write_records(&path, &records[start..start + n])?;
        files.push((split.file_name().to_string(), sha256_hex(&fs::read(&path)?)));
        start += n;
    }

    let mut lex = String::new();
    for (tok, tag) in lexicon() {
        lex.push_str(&format!("{tok}\t{}\n", tag.as_str()));
    }
    fs::write(out.join("lexicon.tsv"), &lex)?;
    files.push(("lexicon.tsv".into(), sha256_hex(lex.as_bytes())));
    let echo = config.to_toml();
    fs::write(out.join("generator.toml"), &echo)?;
    files.push(("generator.toml".into(), sha256_hex(echo.as_bytes())));

    files.sort();
    let mut h = Sha256::new();
    for (p, d) in &files {
        h.update(format!("{d}  {p}\n").as_bytes());
    }
    let manifest = Manifest {
        files,
        checksum: hex::encode(h.finalize()),
    };
    let mut f = fs::File::create(out.join("manifest.txt"))?;
    f.write_all(manifest.render().as_bytes())?;
    Ok(manifest)
}
