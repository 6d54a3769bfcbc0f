//! Dataset handling: unpaired folder loading, load/crop preprocessing and
//! the synthetic paired corruption generator used for desk-scale
//! validation.
//!
//! Directory layout: `root/{trainA,trainB,testA,testB}` with domain A the
//! degraded one. Synthetic paired sets add `pairs.csv`
//! (pair_id, clean_path, degraded_path) and a `dataset_meta.json`.

use std::path::{Path, PathBuf};

use candle_core::Device;
use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn subdir(domain: Domain, split: Split) -> &'static str {
    match (split, domain) {
        (Split::Train, Domain::A) => "trainA",
        (Split::Train, Domain::B) => "trainB",
        (Split::Test, Domain::A) => "testA",
        (Split::Test, Domain::B) => "testB",
    }
}

/// Ordered, validated listing of one domain folder. Carries no pairing
/// information; training stays unsupervised.
#[derive(Debug)]
pub struct UnpairedDataset {
    pub root: PathBuf,
    pub domain: Domain,
    items: Vec<PathBuf>,
}

impl UnpairedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.items
    }

    pub fn load(&self, index: usize) -> Result<RgbImage> {
        load_image(&self.items[index])
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset(format!("cannot decode {}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

/// Lists and validates a domain folder; every item must decode to an RGB
/// image. Listing order is lexicographic, so repeated loads agree.
pub fn load_unpaired_dataset(root: impl AsRef<Path>, domain: Domain, split: Split) -> Result<UnpairedDataset> {
    let root = root.as_ref().to_path_buf();
    let dir = root.join(subdir(domain, split));
    list_validated(root, dir, domain)
}

/// Same validation as [`load_unpaired_dataset`] but over a bare folder of
/// images with no trainA/trainB layout.
pub fn load_unpaired_flat(dir: impl AsRef<Path>, domain: Domain) -> Result<UnpairedDataset> {
    let dir = dir.as_ref().to_path_buf();
    list_validated(dir.clone(), dir, domain)
}

fn list_validated(root: PathBuf, dir: PathBuf, domain: Domain) -> Result<UnpairedDataset> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing dataset folder {}", dir.display())));
    }
    let mut items: Vec<PathBuf> = std::fs::read_dir(&dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
            )
        })
        .collect();
    items.sort();
    if items.is_empty() {
        return Err(Error::Dataset(format!("no decodable images in {}", dir.display())));
    }
    for path in &items {
        load_image(path)?;
    }
    Ok(UnpairedDataset { root, domain, items })
}

/// RGB u8 image -> channel-major tensor in [-1, 1].
pub fn image_to_tensor(img: &RgbImage, device: &Device) -> Result<ImageTensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px.0[c] as f32 / 127.5 - 1.0;
        }
    }
    ImageTensor::from_chw_vec(data, 3, h, w, device)
}

/// Channel-major tensor in [-1, 1] -> RGB u8 image (clamped).
pub fn tensor_to_image(img: &ImageTensor) -> Result<RgbImage> {
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let data = img.tensor().detach().flatten_all()?.to_vec1::<f32>()?;
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |ch: usize| {
                let v = data[(ch.min(c - 1) * h + y) * w + x];
                (((v + 1.0) * 127.5).round().clamp(0.0, 255.0)) as u8
            };
            out.put_pixel(x as u32, y as u32, Rgb([px(0), px(1), px(2)]));
        }
    }
    Ok(out)
}

/// Resize to `load_size`, take a uniform random crop of `crop_size`,
/// scale to [-1,1] and flip horizontally with probability one half when
/// `flip` is allowed. Sizes are (width, height).
pub fn preprocess(
    img: &RgbImage,
    load_size: (usize, usize),
    crop_size: (usize, usize),
    rng: &mut ChaCha8Rng,
    flip: bool,
    device: &Device,
) -> Result<ImageTensor> {
    if crop_size.0 > load_size.0 || crop_size.1 > load_size.1 {
        return Err(Error::Dataset(format!(
            "crop {}x{} exceeds load size {}x{}",
            crop_size.0, crop_size.1, load_size.0, load_size.1
        )));
    }
    let resized = imageops::resize(
        img,
        load_size.0 as u32,
        load_size.1 as u32,
        imageops::FilterType::Triangle,
    );
    let max_x = load_size.0 - crop_size.0;
    let max_y = load_size.1 - crop_size.1;
    let off_x = if max_x == 0 { 0 } else { rng.gen_range(0..=max_x) };
    let off_y = if max_y == 0 { 0 } else { rng.gen_range(0..=max_y) };
    let mut cropped = imageops::crop_imm(
        &resized,
        off_x as u32,
        off_y as u32,
        crop_size.0 as u32,
        crop_size.1 as u32,
    )
    .to_image();
    if flip && rng.gen_bool(0.5) {
        cropped = imageops::flip_horizontal(&cropped);
    }
    image_to_tensor(&cropped, device)
}

/// Draws items from one domain without replacement, reshuffling once the
/// domain is exhausted. Deterministic given the seed; `advance` replays
/// draws so a resumed run continues where the original left off.
pub struct DomainSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl DomainSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut s = DomainSampler {
            order: (0..len).collect(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        // Fisher-Yates with the sampler's own stream.
        for i in (1..self.order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos >= self.order.len() {
            self.shuffle();
        }
        let idx = self.order[self.pos];
        self.pos += 1;
        idx
    }

    pub fn advance(&mut self, draws: usize) {
        for _ in 0..draws {
            self.next_index();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionKind {
    Fog,
    Night,
    Rain,
}

impl CorruptionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CorruptionKind::Fog => "fog",
            CorruptionKind::Night => "night",
            CorruptionKind::Rain => "rain",
        }
    }
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fog" => Ok(CorruptionKind::Fog),
            "night" => Ok(CorruptionKind::Night),
            "rain" => Ok(CorruptionKind::Rain),
            other => Err(Error::Dataset(format!("unknown corruption kind `{other}`"))),
        }
    }
}

/// Deterministic degradation applied to a clean image.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::InvalidValue(format!(
                "corruption severity must lie in [0,1], got {}",
                self.severity
            )));
        }
        Ok(())
    }
}

fn per_image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    // splitmix-style spread so neighbouring indices decorrelate.
    let mut z = seed ^ index.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Applies the corruption to one clean image. Severity 0 is the identity.
pub fn apply_corruption(clean: &RgbImage, spec: &CorruptionSpec, index: u64) -> Result<RgbImage> {
    spec.validate()?;
    let (w, h) = (clean.width(), clean.height());
    let s = spec.severity;
    let mut rng = per_image_rng(spec.seed, index);
    let mut out = clean.clone();
    match spec.kind {
        CorruptionKind::Fog => {
            // Alpha-blend toward white with a vertical depth proxy: the
            // top of the frame is the farthest and fogs out first.
            for y in 0..h {
                let depth = if h > 1 { 1.0 - y as f64 / (h - 1) as f64 } else { 1.0 };
                let alpha = s * depth;
                for x in 0..w {
                    let px = out.get_pixel_mut(x, y);
                    for c in 0..3 {
                        let v = px.0[c] as f64;
                        px.0[c] = ((1.0 - alpha) * v + alpha * 255.0).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
        CorruptionKind::Night => {
            // Collapse toward single-channel, gamma-darken, add noise.
            let gamma = 1.0 + 2.0 * s;
            for y in 0..h {
                for x in 0..w {
                    let px = out.get_pixel_mut(x, y);
                    let luma = 0.299 * px.0[0] as f64 + 0.587 * px.0[1] as f64 + 0.114 * px.0[2] as f64;
                    for c in 0..3 {
                        let v = px.0[c] as f64 / 255.0;
                        let collapsed = (1.0 - s) * v + s * (luma / 255.0);
                        let dark = collapsed.powf(gamma);
                        let noise = if s > 0.0 { rng.gen_range(-0.08..0.08) * s } else { 0.0 };
                        px.0[c] = ((dark + noise).clamp(0.0, 1.0) * 255.0).round() as u8;
                    }
                }
            }
        }
        CorruptionKind::Rain => {
            // Bright pseudo-random streak segments, count and length
            // scaled by severity. Zero severity draws nothing.
            let count = (s * 30.0).round() as usize;
            for _ in 0..count {
                let x0 = rng.gen_range(0.0..w as f64);
                let y0 = rng.gen_range(0.0..h as f64);
                let len = rng.gen_range(0.15..0.35) * h as f64 * (0.5 + 0.5 * s);
                let angle = std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.25..0.25);
                let brightness = rng.gen_range(140.0..220.0);
                let steps = len.ceil() as usize;
                for t in 0..steps {
                    let x = x0 + angle.cos() * t as f64 * 0.35;
                    let y = y0 + angle.sin() * t as f64;
                    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                        break;
                    }
                    let px = out.get_pixel_mut(x as u32, y as u32);
                    for c in 0..3 {
                        let v = px.0[c] as f64 + brightness * s;
                        px.0[c] = v.clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Procedural scene generator: gradient sky plus random box/disc shapes,
/// enough structure for edge losses to have a signal.
pub fn procedural_base_images(seed: u64, count: usize, side: u32) -> Vec<RgbImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut img = RgbImage::new(side, side);
            let sky_top = [rng.gen_range(110u8..170), rng.gen_range(140u8..200), rng.gen_range(190u8..255)];
            let ground = [rng.gen_range(40u8..100), rng.gen_range(60u8..130), rng.gen_range(30u8..90)];
            let horizon = rng.gen_range(side / 3..2 * side / 3);
            for y in 0..side {
                for x in 0..side {
                    let px = if y < horizon {
                        let t = y as f64 / horizon.max(1) as f64;
                        [
                            (sky_top[0] as f64 * (1.0 - 0.3 * t)) as u8,
                            (sky_top[1] as f64 * (1.0 - 0.2 * t)) as u8,
                            sky_top[2],
                        ]
                    } else {
                        ground
                    };
                    img.put_pixel(x, y, Rgb(px));
                }
            }
            // Buildings and blobs.
            for _ in 0..rng.gen_range(3..8) {
                let bw = rng.gen_range(side / 10..side / 3);
                let bh = rng.gen_range(side / 8..side / 2);
                let bx = rng.gen_range(0..side.saturating_sub(bw).max(1));
                let by = horizon.saturating_sub(rng.gen_range(0..bh / 2 + 1));
                let color = [rng.gen_range(60u8..220), rng.gen_range(60u8..220), rng.gen_range(60u8..220)];
                for y in by..(by + bh).min(side) {
                    for x in bx..(bx + bw).min(side) {
                        img.put_pixel(x, y, Rgb(color));
                    }
                }
            }
            for _ in 0..rng.gen_range(1..4) {
                let r = rng.gen_range(side / 16..side / 6) as i64;
                let cx = rng.gen_range(0..side) as i64;
                let cy = rng.gen_range(0..side) as i64;
                let color = [rng.gen_range(120u8..255), rng.gen_range(120u8..255), rng.gen_range(120u8..255)];
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy <= r * r {
                            let (x, y) = (cx + dx, cy + dy);
                            if x >= 0 && y >= 0 && (x as u32) < side && (y as u32) < side {
                                img.put_pixel(x as u32, y as u32, Rgb(color));
                            }
                        }
                    }
                }
            }
            img
        })
        .collect()
}

#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub corruption: CorruptionSpec,
    pub n_train: usize,
    pub n_test: usize,
}

/// One evaluation pair: id plus paths to the clean reference and its
/// degraded twin.
#[derive(Debug, Clone)]
pub struct TestPair {
    pub pair_id: String,
    pub clean: PathBuf,
    pub degraded: PathBuf,
}

pub struct PairedTestset {
    pub pairs: Vec<TestPair>,
}

/// Writes a paired synthetic dataset: degraded twins in domain A, clean
/// originals in domain B, the last `n_test` pairs held out with pair ids
/// in `pairs.csv`. Training folders carry no pairing information.
pub fn synthesize_desk_dataset(
    out_root: impl AsRef<Path>,
    base_images: &[RgbImage],
    spec: &CorruptionSpec,
    n_test: usize,
) -> Result<DatasetMeta> {
    spec.validate()?;
    if base_images.len() < 8 {
        return Err(Error::Dataset(format!(
            "need at least 8 base images, got {}",
            base_images.len()
        )));
    }
    if n_test >= base_images.len() {
        return Err(Error::Dataset("test split would leave no training images".into()));
    }
    let root = out_root.as_ref();
    for sub in ["trainA", "trainB", "testA", "testB"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    let n_train = base_images.len() - n_test;
    let mut pairs_csv = String::from("pair_id,clean_path,degraded_path\n");
    for (i, clean) in base_images.iter().enumerate() {
        let degraded = apply_corruption(clean, spec, i as u64)?;
        let name = format!("{i:05}.png");
        if i < n_train {
            clean.save(root.join("trainB").join(&name)).map_err(|e| Error::Io(e.to_string()))?;
            degraded.save(root.join("trainA").join(&name)).map_err(|e| Error::Io(e.to_string()))?;
        } else {
            let clean_rel = format!("testB/{name}");
            let degraded_rel = format!("testA/{name}");
            clean.save(root.join(&clean_rel)).map_err(|e| Error::Io(e.to_string()))?;
            degraded.save(root.join(&degraded_rel)).map_err(|e| Error::Io(e.to_string()))?;
            pairs_csv.push_str(&format!("{i:05},{clean_rel},{degraded_rel}\n"));
        }
    }
    std::fs::write(root.join("pairs.csv"), pairs_csv)?;
    let meta = DatasetMeta { corruption: *spec, n_train, n_test };
    std::fs::write(root.join("dataset_meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;
    Ok(meta)
}

/// Reads `pairs.csv`; evaluation refuses to run without pair ids.
pub fn load_paired_testset(root: impl AsRef<Path>) -> Result<PairedTestset> {
    let root = root.as_ref();
    let path = root.join("pairs.csv");
    if !path.is_file() {
        return Err(Error::Dataset(format!(
            "{} has no pairs.csv; evaluation requires paired data",
            root.display()
        )));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Dataset(format!("pairs.csv line {}: expected 3 fields", i + 1)));
        }
        pairs.push(TestPair {
            pair_id: fields[0].trim().to_string(),
            clean: root.join(fields[1].trim()),
            degraded: root.join(fields[2].trim()),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset("pairs.csv lists no pairs".into()));
    }
    pairs.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
    Ok(PairedTestset { pairs })
}

/// Horizontal flips are a safe augmentation except when streak direction
/// is a domain cue (rain).
pub fn flips_allowed(root: impl AsRef<Path>) -> bool {
    let path = root.as_ref().join("dataset_meta.json");
    if let Ok(text) = std::fs::read_to_string(path) {
        if let Ok(meta) = serde_json::from_str::<DatasetMeta>(&text) {
            return meta.corruption.kind != CorruptionKind::Rain;
        }
    }
    true
}
