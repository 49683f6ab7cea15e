//! Deterministic synthetic video segments.
//!
//! Each segment shows one object (disc, square or triangle) on a plain
//! background. Four binary attributes are rendered: integrity (whole or cut
//! into two separated halves), aperture (closed outline or an outline with a
//! gap on top), color (raw or cooked fill hue) and location (left or right
//! half of the image). The verb's transition rule flips one attribute: shape,
//! aperture and location switch at frame `floor(T/2)`, color ramps linearly
//! across the whole segment. The other attributes are drawn once per segment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::fsutil::{self, put_u32, Reader};
use crate::ledger::{ActionLabel, Ledger, TransitionRule};

pub const SEGMENT_MAGIC: &[u8; 4] = b"SSEG";
pub const SEGMENT_VERSION: u32 = 1;

/// State names of each attribute axis, `(false, true)`.
pub const AXES: [(&str, &str); 4] = [
    ("whole", "halved"),
    ("closed", "opened"),
    ("raw", "cooked"),
    ("left", "right"),
];
const COLOR_AXIS: usize = 2;

const BACKGROUND: [f64; 3] = [0.92, 0.92, 0.92];
const OUTLINE: [f64; 3] = [0.08, 0.08, 0.08];
const RAW: [f64; 3] = [0.25, 0.70, 0.30];
const COOKED: [f64; 3] = [0.55, 0.30, 0.12];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Disc,
    Square,
    Triangle,
}

impl Shape {
    pub fn from_noun(name: &str) -> Option<Shape> {
        match name {
            "disc" => Some(Shape::Disc),
            "square" => Some(Shape::Square),
            "triangle" => Some(Shape::Triangle),
            _ => None,
        }
    }

    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Disc => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= 0.85 * r && dy.abs() <= 0.85 * r,
            Shape::Triangle => dy >= -r && dy <= r && dx.abs() <= 0.5 * (dy + r),
        }
    }
}

/// Everything needed to draw one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectConfig {
    pub shape: Shape,
    pub halved: bool,
    pub opened: bool,
    pub right: bool,
    /// 0 is the raw hue, 1 the cooked hue.
    pub color_blend: f64,
    /// Per-frame jitter in pixels.
    pub offset: (i32, i32),
}

impl ObjectConfig {
    /// Value of an attribute axis; color counts as cooked from a blend of 0.5.
    pub fn axis_value(&self, axis: usize) -> bool {
        match axis {
            0 => self.halved,
            1 => self.opened,
            2 => self.color_blend >= 0.5,
            _ => self.right,
        }
    }

    fn set_axis(&mut self, axis: usize, value: bool) {
        match axis {
            0 => self.halved = value,
            1 => self.opened = value,
            2 => self.color_blend = if value { 1.0 } else { 0.0 },
            _ => self.right = value,
        }
    }
}

/// Draws `object` into a `3×S×S` image with values in [0, 1].
pub fn render_frame(object: &ObjectConfig, image_size: usize, noise_sigma: f64, rng_seed: u64) -> Result<Tensor<f32>> {
    if image_size < 16 {
        return Err(Error::BadSize(image_size));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidValue {
            key: "noise_sigma".into(),
            msg: format!("{noise_sigma} is not a finite non-negative number"),
        });
    }
    let s = image_size as f64;
    let r = 0.19 * s;
    let gap = (s / 16.0).max(1.0);
    let rim = (s / 24.0).max(1.0);
    let cx = if object.right { 0.75 } else { 0.25 } * s + object.offset.0 as f64;
    let cy = 0.5 * s + object.offset.1 as f64;
    let blend = object.color_blend.clamp(0.0, 1.0);
    let fill: [f64; 3] = std::array::from_fn(|c| RAW[c] + blend * (COOKED[c] - RAW[c]));

    // Membership in object coordinates; a halved object is split at dx = 0
    // and each half pushed `gap` pixels outward.
    let inside = |dx: f64, dy: f64| -> bool {
        if !object.halved {
            return object.shape.contains(dx, dy, r);
        }
        if dx < 0.0 {
            let q = dx + gap;
            q < 0.0 && object.shape.contains(q, dy, r)
        } else {
            let q = dx - gap;
            q >= 0.0 && object.shape.contains(q, dy, r)
        }
    };

    let plane = image_size * image_size;
    let mut data = vec![0f32; 3 * plane];
    let normal = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for y in 0..image_size {
        for x in 0..image_size {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let color = if inside(dx, dy) {
                let on_rim = !(inside(dx - rim, dy)
                    && inside(dx + rim, dy)
                    && inside(dx, dy - rim)
                    && inside(dx, dy + rim));
                if !on_rim {
                    fill
                } else if object.opened && dy < -r / 3.0 {
                    BACKGROUND
                } else {
                    OUTLINE
                }
            } else {
                BACKGROUND
            };
            for c in 0..3 {
                let mut v = color[c];
                if let Some(n) = &normal {
                    v += n.sample(&mut rng);
                }
                data[c * plane + y * image_size + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Tensor::new(&[3, image_size, image_size], data)
}

/// A generated segment.
#[derive(Debug, Clone)]
pub struct SegmentRecord {
    /// T×3×H×W, values in [0, 1].
    pub frames: Tensor<f32>,
    pub label: ActionLabel,
    pub rule: TransitionRule,
    pub static_states: BTreeSet<usize>,
    pub segment_len: usize,
    /// Object configuration of every frame.
    pub trajectory: Vec<ObjectConfig>,
}

/// Attribute axis and value of each named state of the synthetic domain.
fn state_axis(ledger: &Ledger, state: usize) -> Result<(usize, bool)> {
    let name = ledger.states.name(state).unwrap_or("");
    AXES.iter()
        .enumerate()
        .find_map(|(i, (off, on))| {
            if name == *off {
                Some((i, false))
            } else if name == *on {
                Some((i, true))
            } else {
                None
            }
        })
        .ok_or_else(|| Error::Label(format!("state `{name}` has no visual rendering")))
}

fn state_id(ledger: &Ledger, axis: usize, value: bool) -> Result<usize> {
    let name = if value { AXES[axis].1 } else { AXES[axis].0 };
    ledger.states.lookup(name).ok_or(Error::UnknownSymbol {
        table: "state",
        name: name.to_string(),
    })
}

/// Renders a segment of `segment_len` frames for `label`.
pub fn gen_segment(
    ledger: &Ledger,
    label: &ActionLabel,
    segment_len: usize,
    image_size: usize,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<SegmentRecord> {
    if segment_len < 2 {
        return Err(Error::InvalidValue {
            key: "segment_len".into(),
            msg: format!("segments need at least 2 frames, got {segment_len}"),
        });
    }
    let noun = label.primary_noun();
    let rule = ledger.lookup_transition(label.verb, noun)?;
    let (axis, pre) = state_axis(ledger, rule.pre_state)?;
    let (post_axis, post) = state_axis(ledger, rule.post_state)?;
    if axis != post_axis || pre == post {
        return Err(Error::Label(format!(
            "rule for verb {} does not flip a single attribute",
            label.verb
        )));
    }
    let noun_name = ledger.nouns.name(noun).unwrap_or("");
    let shape = Shape::from_noun(noun_name)
        .ok_or_else(|| Error::Label(format!("noun `{noun_name}` has no visual rendering")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut base = ObjectConfig {
        shape,
        halved: false,
        opened: false,
        right: false,
        color_blend: 0.0,
        offset: (0, 0),
    };
    let mut static_states = BTreeSet::new();
    for a in (0..AXES.len()).filter(|&a| a != axis) {
        let v: bool = rng.random();
        base.set_axis(a, v);
        static_states.insert(state_id(ledger, a, v)?);
    }

    let switch = segment_len / 2;
    let plane = 3 * image_size * image_size;
    let mut data = Vec::with_capacity(segment_len * plane);
    let mut trajectory = Vec::with_capacity(segment_len);
    for t in 0..segment_len {
        let mut obj = base;
        if axis == COLOR_AXIS {
            let ramp = t as f64 / (segment_len - 1) as f64;
            obj.color_blend = if post { ramp } else { 1.0 - ramp };
        } else {
            obj.set_axis(axis, if t < switch { pre } else { post });
        }
        obj.offset = (rng.random_range(-2..=2), rng.random_range(-2..=2));
        let frame = render_frame(&obj, image_size, noise_sigma, rng.random())?;
        data.extend_from_slice(frame.data());
        trajectory.push(obj);
    }
    Ok(SegmentRecord {
        frames: Tensor::new(&[segment_len, 3, image_size, image_size], data)?,
        label: label.clone(),
        rule,
        static_states,
        segment_len,
        trajectory,
    })
}

/// A segment as stored on disk: 8-bit pixels plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSegment {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub label: ActionLabel,
    pub pre_state: usize,
    pub post_state: usize,
    pub static_states: BTreeSet<usize>,
    /// T·C·H·W bytes, `round(255·pixel)`.
    pub pixels: Vec<u8>,
}

impl StoredSegment {
    pub fn from_record(rec: &SegmentRecord) -> Self {
        let s = rec.frames.shape();
        StoredSegment {
            frames: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            label: rec.label.clone(),
            pre_state: rec.rule.pre_state,
            post_state: rec.rule.post_state,
            static_states: rec.static_states.clone(),
            pixels: rec
                .frames
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.pixels.len());
        out.extend_from_slice(SEGMENT_MAGIC);
        put_u32(&mut out, SEGMENT_VERSION);
        for v in [self.frames, self.height, self.width, self.channels] {
            put_u32(&mut out, v as u32);
        }
        put_u32(&mut out, self.label.verb as u32);
        put_u32(&mut out, self.label.nouns.len() as u32);
        for &n in &self.label.nouns {
            put_u32(&mut out, n as u32);
        }
        put_u32(&mut out, self.label.action as u32);
        put_u32(&mut out, self.pre_state as u32);
        put_u32(&mut out, self.post_state as u32);
        put_u32(&mut out, self.static_states.len() as u32);
        for &s in &self.static_states {
            put_u32(&mut out, s as u32);
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "segment file");
        if r.take(4)? != SEGMENT_MAGIC {
            return Err(Error::Format("not a segment file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SEGMENT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SEGMENT_VERSION,
            });
        }
        let frames = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let verb = r.u32()? as usize;
        let n_nouns = r.u32()? as usize;
        let nouns = (0..n_nouns).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let action = r.u32()? as usize;
        let pre_state = r.u32()? as usize;
        let post_state = r.u32()? as usize;
        let n_static = r.u32()? as usize;
        let static_states = (0..n_static)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<BTreeSet<_>>>()?;
        let n = frames
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(height))
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::Format("segment dimensions overflow".into()))?;
        let pixels = r.take(n)?.to_vec();
        if !r.is_at_end() {
            return Err(Error::Format("trailing bytes after segment pixels".into()));
        }
        if nouns.is_empty() || frames == 0 {
            return Err(Error::Format("segment without frames or nouns".into()));
        }
        Ok(StoredSegment {
            frames,
            channels,
            height,
            width,
            label: ActionLabel { verb, nouns, action },
            pre_state,
            post_state,
            static_states,
            pixels,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        StoredSegment::from_bytes(&fsutil::read(path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes())
    }

    pub fn rule(&self) -> TransitionRule {
        TransitionRule {
            verb: self.label.verb,
            noun: crate::ledger::NounPattern::Noun(self.label.primary_noun()),
            pre_state: self.pre_state,
            post_state: self.post_state,
        }
    }

    /// Stacks the given frames into a `k×C×H×W` tensor scaled to [0, 1].
    pub fn clip(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let plane = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(indices.len() * plane);
        for &t in indices {
            if t >= self.frames {
                return Err(Error::OutOfRange {
                    pos: t,
                    len: self.frames,
                });
            }
            data.extend(self.pixels[t * plane..(t + 1) * plane].iter().map(|&b| b as f32 / 255.0));
        }
        Tensor::new(&[indices.len(), self.channels, self.height, self.width], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub action: usize,
    pub verb: usize,
    pub nouns: Vec<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub ledger: PathBuf,
    /// Extra `key = value` provenance lines.
    pub settings: Vec<(String, String)>,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const LEDGER_FILE: &str = "ledger.txt";

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# seed={}\n# ledger={}\n", self.seed, self.ledger.display());
        for (k, v) in &self.settings {
            let _ = writeln!(out, "# {k} = {v}");
        }
        for e in &self.entries {
            let nouns = e.nouns.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.path.display(),
                e.action,
                e.verb,
                nouns,
                e.split.as_str()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut seed = None;
        let mut ledger = None;
        let mut settings = Vec::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let perr = |msg: String| Error::Parse { line: line_no, msg };
            if let Some(c) = line.strip_prefix('#') {
                let c = c.trim();
                if let Some(v) = c.strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| perr(format!("bad seed `{v}`")))?);
                } else if let Some(v) = c.strip_prefix("ledger=") {
                    ledger = Some(PathBuf::from(v));
                } else if let Some((k, v)) = c.split_once('=') {
                    settings.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(perr(format!("expected 5 tab-separated fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| perr(format!("bad number `{s}`")));
            entries.push(ManifestEntry {
                path: PathBuf::from(f[0]),
                action: num(f[1])?,
                verb: num(f[2])?,
                nouns: f[3].split(',').map(num).collect::<Result<_>>()?,
                split: Split::parse(f[4]).ok_or_else(|| perr(format!("bad split `{}`", f[4])))?,
            });
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                return Err(Error::Format(format!("duplicate manifest path {}", e.path.display())));
            }
        }
        Ok(DatasetManifest {
            entries,
            seed: seed.ok_or_else(|| Error::Format("manifest lacks `# seed=` line".into()))?,
            ledger: ledger.ok_or_else(|| Error::Format("manifest lacks `# ledger=` line".into()))?,
            settings,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::parse(&text)
    }
}

/// Counts and rendering settings for a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub train: usize,
    pub test: usize,
    pub segment_len: usize,
    pub image_size: usize,
    pub noise_sigma: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            train: 2000,
            test: 400,
            segment_len: 30,
            image_size: 32,
            noise_sigma: 0.02,
        }
    }
}

/// SplitMix64 finalizer over `(a, b)`.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn split_code(split: Split) -> u64 {
    match split {
        Split::Train => 1,
        Split::Test => 2,
    }
}

/// Seed of segment `index` in `split`; independent of generation order.
pub fn segment_seed(master_seed: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(master_seed, split_code(split)), index as u64)
}

/// Stratified action assignment: every action `floor(n/A)` or one more
/// times, in seeded random order.
pub fn stratified_actions(n: usize, n_actions: usize, seed: u64) -> Vec<usize> {
    let mut actions: Vec<usize> = (0..n).map(|i| i % n_actions).collect();
    actions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    actions
}

/// Generates both splits into `out_dir`: the ledger, one file per segment
/// and finally the manifest.
pub fn gen_dataset(
    ledger: &Ledger,
    spec: &GenSpec,
    master_seed: u64,
    out_dir: &Path,
    settings: Vec<(String, String)>,
) -> Result<DatasetManifest> {
    if spec.train == 0 || spec.test == 0 {
        return Err(Error::InvalidValue {
            key: "train/test".into(),
            msg: "both splits need at least one segment".into(),
        });
    }
    if ledger.actions.is_empty() {
        return Err(Error::InvalidLedger("no actions".into()));
    }
    let labels = (0..ledger.actions.len())
        .map(|a| ledger.label_for_action(a))
        .collect::<Result<Vec<_>>>()?;

    fsutil::write_atomic(&out_dir.join(LEDGER_FILE), ledger.to_text().as_bytes())?;
    let mut entries = Vec::with_capacity(spec.train + spec.test);
    for (split, count) in [(Split::Train, spec.train), (Split::Test, spec.test)] {
        let actions = stratified_actions(count, labels.len(), mix_seed(master_seed, 100 + split_code(split)));
        let rel: Vec<PathBuf> = (0..count)
            .map(|i| PathBuf::from(format!("segments/{}_{i:05}.sseg", split.as_str())))
            .collect();
        (0..count).into_par_iter().try_for_each(|i| -> Result<()> {
            let rec = gen_segment(
                ledger,
                &labels[actions[i]],
                spec.segment_len,
                spec.image_size,
                spec.noise_sigma,
                segment_seed(master_seed, split, i),
            )?;
            StoredSegment::from_record(&rec).save(&out_dir.join(&rel[i]))
        })?;
        for (i, path) in rel.into_iter().enumerate() {
            let label = &labels[actions[i]];
            entries.push(ManifestEntry {
                path,
                action: label.action,
                verb: label.verb,
                nouns: label.nouns.clone(),
                split,
            });
        }
    }
    let manifest = DatasetManifest {
        entries,
        seed: master_seed,
        ledger: PathBuf::from(LEDGER_FILE),
        settings,
    };
    fsutil::write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// A dataset directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub ledger: Ledger,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
        let ledger_path = if manifest.ledger.is_absolute() {
            manifest.ledger.clone()
        } else {
            root.join(&manifest.ledger)
        };
        let ledger = Ledger::load(&ledger_path)?;
        Ok(Dataset {
            root: root.to_path_buf(),
            manifest,
            ledger,
        })
    }

    /// Loads every segment of `split`, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<StoredSegment>> {
        let entries: Vec<&ManifestEntry> = self.manifest.split(split).collect();
        entries
            .par_iter()
            .map(|e| StoredSegment::load(&self.root.join(&e.path)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obj() -> ObjectConfig {
        ObjectConfig {
            shape: Shape::Square,
            halved: false,
            opened: false,
            right: false,
            color_blend: 0.0,
            offset: (0, 0),
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded() {
        let a = render_frame(&obj(), 32, 0.2, 7).unwrap();
        let b = render_frame(&obj(), 32, 0.2, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(render_frame(&obj(), 15, 0.0, 0), Err(Error::BadSize(15))));
    }

    #[test]
    fn location_is_a_horizontal_translation() {
        let left = render_frame(&obj(), 32, 0.0, 0).unwrap();
        let right = render_frame(&ObjectConfig { right: true, ..obj() }, 32, 0.0, 0).unwrap();
        for (c, bg) in BACKGROUND.iter().enumerate() {
            for y in 0..32 {
                for x in 0..32 {
                    let r = right.data()[c * 1024 + y * 32 + x];
                    let expected = if x >= 16 {
                        left.data()[c * 1024 + y * 32 + x - 16]
                    } else {
                        *bg as f32
                    };
                    assert_eq!(r, expected, "c={c} y={y} x={x}");
                }
            }
        }
    }

    #[test]
    fn half_blend_is_the_midpoint_of_raw_and_cooked() {
        let raw = render_frame(&obj(), 32, 0.0, 0).unwrap();
        let cooked = render_frame(&ObjectConfig { color_blend: 1.0, ..obj() }, 32, 0.0, 0).unwrap();
        let mid = render_frame(&ObjectConfig { color_blend: 0.5, ..obj() }, 32, 0.0, 0).unwrap();
        let mut fill_pixels = 0;
        for i in 0..raw.len() {
            let (a, b, m) = (raw.data()[i], cooked.data()[i], mid.data()[i]);
            assert!((m - 0.5 * (a + b)).abs() < 1e-6);
            if a != b {
                fill_pixels += 1;
            }
        }
        assert!(fill_pixels > 0);
    }

    #[test]
    fn attributes_change_the_image() {
        let base = render_frame(&obj(), 32, 0.0, 0).unwrap();
        for other in [
            ObjectConfig { halved: true, ..obj() },
            ObjectConfig { opened: true, ..obj() },
            ObjectConfig { shape: Shape::Disc, ..obj() },
            ObjectConfig { shape: Shape::Triangle, ..obj() },
        ] {
            assert_ne!(render_frame(&other, 32, 0.0, 0).unwrap(), base, "{other:?}");
        }
    }

    #[test]
    fn segment_switches_at_half() {
        let l = Ledger::synthetic();
        let cut = l.verbs.lookup("cut").unwrap();
        let disc = l.nouns.lookup("disc").unwrap();
        let label = l.action_label(cut, &[disc]).unwrap();
        let rec = gen_segment(&l, &label, 30, 32, 0.02, 3).unwrap();
        assert_eq!(rec.frames.shape(), &[30, 3, 32, 32]);
        for (t, o) in rec.trajectory.iter().enumerate() {
            assert_eq!(o.halved, t >= 15, "frame {t}");
            assert!(o.offset.0.abs() <= 2 && o.offset.1.abs() <= 2);
        }
        assert_eq!(rec.static_states.len(), 3);
        assert_eq!(l.lookup_transition(cut, disc).unwrap(), rec.rule);
    }

    #[test]
    fn cook_ramps_color() {
        let l = Ledger::synthetic();
        let label = l
            .action_label(l.verbs.lookup("cook").unwrap(), &[l.nouns.lookup("square").unwrap()])
            .unwrap();
        let rec = gen_segment(&l, &label, 30, 32, 0.0, 5).unwrap();
        for (t, o) in rec.trajectory.iter().enumerate() {
            assert!((o.color_blend - t as f64 / 29.0).abs() < 1e-12);
        }
    }

    #[test]
    fn move_right_centroid_crosses_midline() {
        let l = Ledger::synthetic();
        let label = l
            .action_label(l.verbs.lookup("move_right").unwrap(), &[l.nouns.lookup("triangle").unwrap()])
            .unwrap();
        let rec = gen_segment(&l, &label, 31, 32, 0.0, 9).unwrap();
        for t in 0..31 {
            let frame = &rec.frames.data()[t * 3072..(t + 1) * 3072];
            let (mut sum, mut n) = (0.0, 0.0);
            for y in 0..32 {
                for x in 0..32 {
                    let idx = y * 32 + x;
                    let bg = (0..3).all(|c| frame[c * 1024 + idx] == BACKGROUND[c] as f32);
                    if !bg {
                        sum += x as f64 + 0.5;
                        n += 1.0;
                    }
                }
            }
            let centroid = sum / n;
            if t < 15 {
                assert!(centroid < 16.0, "frame {t}: {centroid}");
            } else {
                assert!(centroid > 16.0, "frame {t}: {centroid}");
            }
        }
    }

    #[test]
    fn non_state_changing_verb_propagates() {
        let mut l = Ledger::synthetic();
        l.groups[0] = crate::ledger::EffectGroup::NonStateChanging;
        let label = l.action_label(0, &[0]).unwrap();
        assert!(matches!(gen_segment(&l, &label, 30, 32, 0.0, 0), Err(Error::NonStateChangingVerb(_))));
    }

    #[test]
    fn segment_file_round_trip_and_errors() {
        let l = Ledger::synthetic();
        let rec = gen_segment(&l, &l.label_for_action(4).unwrap(), 4, 16, 0.02, 1).unwrap();
        let stored = StoredSegment::from_record(&rec);
        let bytes = stored.to_bytes();
        assert_eq!(&bytes[..4], b"SSEG");
        assert_eq!(StoredSegment::from_bytes(&bytes).unwrap(), stored);
        assert!(matches!(
            StoredSegment::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            StoredSegment::from_bytes(&v2),
            Err(Error::Version { found: 2, expected: 1 })
        ));
        let clip = stored.clip(&[0, 3]).unwrap();
        assert_eq!(clip.shape(), &[2, 3, 16, 16]);
        for (a, b) in clip.data()[..768].iter().zip(&rec.frames.data()[..768]) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn stratified_counts() {
        let a = stratified_actions(2000, 18, 1);
        let mut counts = [0usize; 18];
        for x in a {
            counts[x] += 1;
        }
        assert!(counts.iter().all(|&c| c == 111 || c == 112));
        let mut counts = [0usize; 18];
        for x in stratified_actions(18, 18, 2) {
            counts[x] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = DatasetManifest {
            entries: vec![ManifestEntry {
                path: "segments/train_00000.sseg".into(),
                action: 3,
                verb: 1,
                nouns: vec![0, 2],
                split: Split::Train,
            }],
            seed: 42,
            ledger: "ledger.txt".into(),
            settings: vec![("k".into(), "5".into())],
        };
        let text = m.to_text();
        assert!(text.starts_with("# seed=42\n# ledger=ledger.txt\n"));
        assert_eq!(DatasetManifest::parse(&text).unwrap(), m);
    }
}
