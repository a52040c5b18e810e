//! Deterministic simulated world and the seven tools that read it: web-style
//! fact search, local crop, zoom, edge-anomaly screening, face boxes, video
//! frame extraction, and an oracle segmenter driven by box/point prompts.
//!
//! A world is generated entirely from a seed. Tools are pure functions of
//! `(world, params)`, so identical seeds and call sequences produce
//! bit-identical observations; parameter problems surface as
//! `Observation::Error` values rather than panics, matching the inference
//! protocol where the agent keeps going after a bad call.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{box_to_mask, PixelMask, Rect};
use crate::types::{GroundTruth, Label, Raster, TaskKind};

/// Geometry and size knobs for world generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub image_width: u32,
    pub image_height: u32,
    /// Tile grid used by edge-anomaly screening; must divide both image dims.
    pub tile_grid: u32,
    pub tamper_min: u32,
    pub tamper_max: u32,
    pub video_frames: u32,
    pub frame_size: u32,
    pub doc_len: u32,
    pub fact_count: u32,
    pub face_count_max: u32,
    pub edge_z_threshold: f64,
    pub grad_threshold: i32,
    pub search_top_k: usize,
    /// Upper bound on pixels in a single observation raster (zoom output).
    pub max_obs_pixels: u32,
    /// Plant a low-contrast patch that edge screening cannot see; used to
    /// construct hard tasks.
    pub subtle_tamper: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            image_width: 64,
            image_height: 64,
            tile_grid: 8,
            tamper_min: 8,
            tamper_max: 20,
            video_frames: 16,
            frame_size: 8,
            doc_len: 120,
            fact_count: 12,
            face_count_max: 3,
            edge_z_threshold: 2.0,
            grad_threshold: 24,
            search_top_k: 3,
            max_obs_pixels: 16384,
            subtle_tamper: false,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        if self.tile_grid == 0
            || self.image_width % self.tile_grid != 0
            || self.image_height % self.tile_grid != 0
        {
            return Err("tile grid must divide both image dimensions".into());
        }
        if self.video_frames < 2 {
            return Err("need at least two video frames".into());
        }
        if self.tamper_min == 0 || self.tamper_min > self.tamper_max {
            return Err("bad tamper size range".into());
        }
        if self.fact_count == 0 || self.doc_len < 32 {
            return Err("fact count and document length too small".into());
        }
        Ok(())
    }
}

/// Which substrates of a world carry manipulations, and whether the planted
/// real-time claim is true.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldTamper {
    pub image: bool,
    pub video: bool,
    pub text: bool,
    pub claim_true: bool,
}

impl Default for WorldTamper {
    fn default() -> Self {
        WorldTamper {
            image: true,
            video: true,
            text: true,
            claim_true: false,
        }
    }
}

/// A dated fact record in the synthetic web index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactRecord {
    pub id: u32,
    pub keywords: Vec<String>,
    pub date: String,
    pub statement: String,
}

/// A candidate region produced by edge-anomaly screening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredRegion {
    pub region: [f64; 4],
    pub score: f64,
}

/// One extracted video frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: u32,
    pub raster: Raster,
}

/// What a tool returns. Every variant serializes into the `<obs>` grammar
/// payload; errors are data, never control flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Observation {
    Search { results: Vec<FactRecord> },
    Crop { raster: Raster },
    Zoom { raster: Raster },
    Candidates { regions: Vec<ScoredRegion> },
    Faces { boxes: Vec<[f64; 4]> },
    Frames { frames: Vec<Frame> },
    Mask { mask: PixelMask },
    Error { message: String },
}

impl Observation {
    pub fn is_error(&self) -> bool {
        matches!(self, Observation::Error { .. })
    }
}

/// The seeded synthetic scene all tools read.
#[derive(Clone, Debug)]
pub struct ToolWorld {
    pub seed: u64,
    pub cfg: WorldConfig,
    pub tamper: WorldTamper,
    pub image: Raster,
    /// Normalized tamper box, present when the image is manipulated.
    pub image_tamper_box: Option<[f64; 4]>,
    pub image_tamper_mask: Option<PixelMask>,
    pub frames: Vec<Raster>,
    /// Inclusive tampered frame index range.
    pub video_tamper_range: Option<(u32, u32)>,
    pub document: String,
    /// Half-open manipulated character range.
    pub doc_manipulated: Option<(u32, u32)>,
    pub facts: Vec<FactRecord>,
    pub claim: String,
    pub claim_true: bool,
    pub face_boxes: Vec<[f64; 4]>,
}

const SUBJECTS: [&str; 12] = [
    "the city council",
    "mayor adams",
    "club atlas",
    "the red team",
    "acme corp",
    "the province",
    "the university",
    "minister bell",
    "the museum",
    "the port authority",
    "the league",
    "studio nova",
];

const ACTIONS: [&str; 10] = [
    "approved the budget",
    "won the final",
    "opened a new plant",
    "signed the accord",
    "launched the probe",
    "banned the additive",
    "released the report",
    "cut the tariff",
    "restored the bridge",
    "halted the project",
];

const PLACES: [&str; 8] = [
    "in dover", "in lima", "in oslo", "in quito", "in accra", "in hanoi", "in turin", "in cairo",
];

fn sub_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt))
}

fn smooth_raster(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Raster {
    // Bilinear ramp between four corner intensities plus two soft blobs,
    // kept away from 0/255 so small shifts cannot saturate.
    let corners: [f64; 4] = [
        rng.gen_range(70.0..180.0),
        rng.gen_range(70.0..180.0),
        rng.gen_range(70.0..180.0),
        rng.gen_range(70.0..180.0),
    ];
    let blobs: Vec<(f64, f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.1..0.3),
                rng.gen_range(-30.0..30.0),
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / (w - 1).max(1) as f64;
            let fy = y as f64 / (h - 1).max(1) as f64;
            let mut v = corners[0] * (1.0 - fx) * (1.0 - fy)
                + corners[1] * fx * (1.0 - fy)
                + corners[2] * (1.0 - fx) * fy
                + corners[3] * fx * fy;
            for (bx, by, r, amp) in &blobs {
                let d2 = (fx - bx).powi(2) + (fy - by).powi(2);
                v += amp * (-d2 / (2.0 * r * r)).exp();
            }
            pixels.push(v.clamp(20.0, 235.0) as u8);
        }
    }
    Raster::new(w, h, pixels)
}

impl ToolWorld {
    pub fn generate(seed: u64, cfg: &WorldConfig, tamper: &WorldTamper) -> ToolWorld {
        let (w, h) = (cfg.image_width, cfg.image_height);

        let mut img_rng = sub_rng(seed, 1);
        let mut image = smooth_raster(&mut img_rng, w, h);
        let mut image_tamper_box = None;
        let mut image_tamper_mask = None;
        if tamper.image {
            let tw = img_rng.gen_range(cfg.tamper_min..=cfg.tamper_max.min(w - 4));
            let th = img_rng.gen_range(cfg.tamper_min..=cfg.tamper_max.min(h - 4));
            let x0 = img_rng.gen_range(2..=(w - tw - 2));
            let y0 = img_rng.gen_range(2..=(h - th - 2));
            let mut mask = PixelMask::empty(w, h);
            for y in y0..y0 + th {
                for x in x0..x0 + tw {
                    let v = if cfg.subtle_tamper {
                        let base = image.get(x, y) as i32;
                        (base + img_rng.gen_range(-5..=5)).clamp(0, 255) as u8
                    } else {
                        img_rng.gen_range(0..=255u8)
                    };
                    image.set(x, y, v);
                    mask.set(x, y, true);
                }
            }
            image_tamper_box = Some([
                x0 as f64 / w as f64,
                y0 as f64 / h as f64,
                (x0 + tw) as f64 / w as f64,
                (y0 + th) as f64 / h as f64,
            ]);
            image_tamper_mask = Some(mask);
        }

        let mut vid_rng = sub_rng(seed, 2);
        let f = cfg.video_frames;
        let s = cfg.frame_size;
        let mut video_tamper_range = None;
        let tampered_idx = if tamper.video {
            let i0 = vid_rng.gen_range(1..f - 2);
            let len = vid_rng.gen_range(2..=(f / 2).max(2));
            let i1 = (i0 + len - 1).min(f - 2);
            video_tamper_range = Some((i0, i1));
            Some((i0, i1))
        } else {
            None
        };
        let mut frames = Vec::with_capacity(f as usize);
        for i in 0..f {
            let mut frame = smooth_raster(&mut vid_rng, s, s);
            if let Some((i0, i1)) = tampered_idx {
                if i >= i0 && i <= i1 {
                    for p in frame.pixels.iter_mut() {
                        *p = vid_rng.gen_range(0..=255u8);
                    }
                }
            }
            frames.push(frame);
        }

        let mut doc_rng = sub_rng(seed, 3);
        let mut document = String::new();
        while document.len() < cfg.doc_len as usize {
            if !document.is_empty() {
                document.push(' ');
            }
            let wl = doc_rng.gen_range(3..=8usize);
            for _ in 0..wl {
                document.push((b'a' + doc_rng.gen_range(0..26u8)) as char);
            }
        }
        document.truncate(cfg.doc_len as usize);
        let mut doc_manipulated = None;
        if tamper.text {
            let len = doc_rng.gen_range(8..=20u32).min(cfg.doc_len / 2);
            let s0 = doc_rng.gen_range(0..cfg.doc_len - len);
            let mut chars: Vec<char> = document.chars().collect();
            for c in chars.iter_mut().skip(s0 as usize).take(len as usize) {
                *c = (b'0' + doc_rng.gen_range(0..10u8)) as char;
            }
            document = chars.into_iter().collect();
            doc_manipulated = Some((s0, s0 + len));
        }

        let mut fact_rng = sub_rng(seed, 4);
        let mut facts = Vec::new();
        for id in 0..cfg.fact_count {
            let subject = SUBJECTS[fact_rng.gen_range(0..SUBJECTS.len())];
            let action = ACTIONS[fact_rng.gen_range(0..ACTIONS.len())];
            let place = PLACES[fact_rng.gen_range(0..PLACES.len())];
            let year = if fact_rng.gen_bool(0.7) { 2025 } else { 2026 };
            let month = fact_rng.gen_range(1..=12u32);
            let day = fact_rng.gen_range(1..=28u32);
            let date = format!("{year}-{month:02}-{day:02}");
            let statement = format!("{subject} {action} {place} on {date}");
            let mut keywords: Vec<String> = subject
                .split_whitespace()
                .chain(action.split_whitespace())
                .chain(place.split_whitespace())
                .filter(|t| !matches!(*t, "the" | "a" | "in" | "new"))
                .map(str::to_string)
                .collect();
            keywords.dedup();
            facts.push(FactRecord {
                id,
                keywords,
                date,
                statement,
            });
        }
        let claim_record = fact_rng.gen_range(0..facts.len());
        let claim = if tamper.claim_true {
            facts[claim_record].statement.clone()
        } else {
            // A deceptive claim keeps the subject but swaps the action.
            let rec = &facts[claim_record];
            let orig_action = ACTIONS
                .iter()
                .position(|a| rec.statement.contains(a))
                .unwrap_or(0);
            let other = (orig_action + 1 + fact_rng.gen_range(0..ACTIONS.len() - 1)) % ACTIONS.len();
            let subject_place: Vec<&str> = rec.statement.splitn(2, ACTIONS[orig_action]).collect();
            format!(
                "{}{}{}",
                subject_place[0],
                ACTIONS[other],
                subject_place.get(1).copied().unwrap_or("")
            )
        };

        let mut face_rng = sub_rng(seed, 5);
        let face_count = face_rng.gen_range(0..=cfg.face_count_max);
        let mut face_boxes = Vec::new();
        for _ in 0..face_count {
            let fw: f64 = face_rng.gen_range(0.08..0.25);
            let fh: f64 = face_rng.gen_range(0.08..0.25);
            let fx: f64 = face_rng.gen_range(0.0..1.0 - fw);
            let fy: f64 = face_rng.gen_range(0.0..1.0 - fh);
            face_boxes.push([fx, fy, fx + fw, fy + fh]);
        }

        ToolWorld {
            seed,
            cfg: cfg.clone(),
            tamper: *tamper,
            image,
            image_tamper_box,
            image_tamper_mask,
            frames,
            video_tamper_range,
            document,
            doc_manipulated,
            facts,
            claim,
            claim_true: tamper.claim_true,
            face_boxes,
        }
    }

    /// Ground-truth segment endpoints expressed on the frame-index grid,
    /// so derived interval tests are exact.
    pub fn video_tamper_segment(&self) -> Option<[f64; 2]> {
        let (i0, i1) = self.video_tamper_range?;
        let d = (self.cfg.video_frames - 1) as f64;
        Some([i0 as f64 / d, i1 as f64 / d])
    }

    pub fn frame_is_tampered(&self, index: u32) -> bool {
        match self.video_tamper_range {
            Some((i0, i1)) => index >= i0 && index <= i1,
            None => false,
        }
    }

    /// The label a perfect detector would assign for a classification kind.
    pub fn true_label(&self, kind: TaskKind) -> Label {
        match kind {
            TaskKind::ClsText => bool_label(self.tamper.text),
            TaskKind::ClsImage => bool_label(self.tamper.image),
            TaskKind::ClsVideo => bool_label(self.tamper.video),
            TaskKind::ClsTextImage => bool_label(self.tamper.image || self.tamper.text),
            TaskKind::ClsTextVideo => bool_label(self.tamper.video || self.tamper.text),
            TaskKind::ClsRealfact => {
                if self.claim_true {
                    Label::True
                } else {
                    Label::False
                }
            }
            _ => panic!("true_label only defined for classification kinds"),
        }
    }

    /// Annotation for a task of the given kind, if this world supports it.
    pub fn ground_truth_for(&self, kind: TaskKind) -> Option<GroundTruth> {
        match kind {
            k if k.is_classification() => Some(GroundTruth::Label(self.true_label(k))),
            TaskKind::LocImage => self.image_tamper_box.map(GroundTruth::Box),
            TaskKind::LocText => self
                .doc_manipulated
                .map(|(s, e)| GroundTruth::Spans(vec![[s, e]])),
            TaskKind::LocVideo => self.video_tamper_segment().map(GroundTruth::Segment),
            TaskKind::Segmentation => self.image_tamper_mask.clone().map(GroundTruth::Mask),
            _ => None,
        }
    }

    /// The textual input shown to the policy for a task of the given kind.
    pub fn question_for(&self, kind: TaskKind) -> String {
        match kind {
            TaskKind::ClsText | TaskKind::LocText => self.document.clone(),
            TaskKind::ClsImage => "inspect the image and decide real or fake".into(),
            TaskKind::ClsVideo => "inspect the video and decide real or fake".into(),
            TaskKind::ClsTextImage => {
                format!("judge text and image: {}", &self.document[..40.min(self.document.len())])
            }
            TaskKind::ClsTextVideo => {
                format!("judge text and video: {}", &self.document[..40.min(self.document.len())])
            }
            TaskKind::ClsRealfact => self.claim.clone(),
            TaskKind::LocImage => "locate the manipulated image region".into(),
            TaskKind::LocVideo => "locate the tampered video segment".into(),
            TaskKind::Segmentation => "segment the manipulated image region".into(),
        }
    }
}

fn bool_label(tampered: bool) -> Label {
    if tampered {
        Label::Fake
    } else {
        Label::Real
    }
}

fn err(message: impl Into<String>) -> Observation {
    Observation::Error {
        message: message.into(),
    }
}

/// Index range `[start, start+len)` of pixels whose centers fall in
/// `[v1, v2)` along an axis of length `n`.
pub fn pixel_range(v1: f64, v2: f64, n: u32) -> Option<(u32, u32)> {
    let mut start = None;
    let mut end = 0;
    for i in 0..n {
        let c = (i as f64 + 0.5) / n as f64;
        if c >= v1 && c < v2 {
            if start.is_none() {
                start = Some(i);
            }
            end = i + 1;
        }
    }
    start.map(|s| (s, end - s))
}

fn checked_region(region: &[f64; 4]) -> Result<Rect, String> {
    Rect::from_array(*region).map_err(|e| e.to_string())
}

/// Keyword search over the fact index, ranked by overlap count, then
/// recency, then id.
pub fn tool_search(world: &ToolWorld, query: &str) -> Observation {
    let tokens: Vec<&str> = query.split_whitespace().collect();
    if tokens.is_empty() {
        return err("empty query");
    }
    let mut scored: Vec<(usize, &FactRecord)> = world
        .facts
        .iter()
        .map(|f| {
            let overlap = f
                .keywords
                .iter()
                .filter(|k| tokens.contains(&k.as_str()))
                .count();
            (overlap, f)
        })
        .filter(|(o, _)| *o > 0)
        .collect();
    scored.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.date.cmp(&a.1.date))
            .then(a.1.id.cmp(&b.1.id))
    });
    Observation::Search {
        results: scored
            .into_iter()
            .take(world.cfg.search_top_k)
            .map(|(_, f)| f.clone())
            .collect(),
    }
}

fn crop_raster(world: &ToolWorld, region: &[f64; 4]) -> Result<Raster, String> {
    let rect = checked_region(region)?;
    let (w, h) = (world.image.width, world.image.height);
    let xs = pixel_range(rect.x1, rect.x2, w).ok_or("crop selects no pixels")?;
    let ys = pixel_range(rect.y1, rect.y2, h).ok_or("crop selects no pixels")?;
    let mut pixels = Vec::with_capacity((xs.1 * ys.1) as usize);
    for y in ys.0..ys.0 + ys.1 {
        for x in xs.0..xs.0 + xs.1 {
            pixels.push(world.image.get(x, y));
        }
    }
    Ok(Raster::new(xs.1, ys.1, pixels))
}

/// Pixel-exact sub-raster of the scene image.
pub fn tool_crop(world: &ToolWorld, region: &[f64; 4]) -> Observation {
    match crop_raster(world, region) {
        Ok(raster) => Observation::Crop { raster },
        Err(m) => err(format!("invalid crop: {m}")),
    }
}

/// Crop followed by nearest-neighbor upscaling.
pub fn tool_zoom(world: &ToolWorld, region: &[f64; 4], factor: u32) -> Observation {
    if !(1..=8).contains(&factor) {
        return err(format!("zoom factor {factor} outside 1..=8"));
    }
    let base = match crop_raster(world, region) {
        Ok(r) => r,
        Err(m) => return err(format!("invalid zoom: {m}")),
    };
    let (zw, zh) = (base.width * factor, base.height * factor);
    if zw * zh > world.cfg.max_obs_pixels {
        return err(format!(
            "zoom output {zw}x{zh} exceeds the {} pixel observation limit",
            world.cfg.max_obs_pixels
        ));
    }
    let mut pixels = Vec::with_capacity((zw * zh) as usize);
    for y in 0..zh {
        for x in 0..zw {
            pixels.push(base.get(x / factor, y / factor));
        }
    }
    Observation::Zoom {
        raster: Raster::new(zw, zh, pixels),
    }
}

/// Per-tile anomaly scores: z-scored edge density plus Laplacian energy plus
/// neighborhood discrepancy, over a `grid x grid` tiling.
pub fn edge_anomaly_scores(image: &Raster, grid: u32, grad_threshold: i32) -> Vec<f64> {
    let (w, h) = (image.width, image.height);
    let (tw, th) = (w / grid, h / grid);
    let n = (grid * grid) as usize;
    let mut density = vec![0.0f64; n];
    let mut energy = vec![0.0f64; n];
    let mut means = vec![0.0f64; n];

    for ty in 0..grid {
        for tx in 0..grid {
            let ti = (ty * grid + tx) as usize;
            let mut edge_count = 0u32;
            let mut lap = 0.0f64;
            let mut sum = 0.0f64;
            for y in ty * th..(ty + 1) * th {
                for x in tx * tw..(tx + 1) * tw {
                    let p = image.get(x, y) as i32;
                    sum += p as f64;
                    let gx = if x + 1 < w {
                        (image.get(x + 1, y) as i32 - p).abs()
                    } else {
                        0
                    };
                    let gy = if y + 1 < h {
                        (image.get(x, y + 1) as i32 - p).abs()
                    } else {
                        0
                    };
                    if gx + gy > grad_threshold {
                        edge_count += 1;
                    }
                    if x > 0 && x + 1 < w && y > 0 && y + 1 < h {
                        let l = 4 * p
                            - image.get(x - 1, y) as i32
                            - image.get(x + 1, y) as i32
                            - image.get(x, y - 1) as i32
                            - image.get(x, y + 1) as i32;
                        lap += (l as f64).powi(2);
                    }
                }
            }
            let px = (tw * th) as f64;
            density[ti] = edge_count as f64 / px;
            energy[ti] = lap / px;
            means[ti] = sum / px;
        }
    }

    let mut discrepancy = vec![0.0f64; n];
    for ty in 0..grid as i64 {
        for tx in 0..grid as i64 {
            let ti = (ty * grid as i64 + tx) as usize;
            let mut neigh = Vec::new();
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (tx + dx, ty + dy);
                    if nx >= 0 && ny >= 0 && nx < grid as i64 && ny < grid as i64 {
                        neigh.push(means[(ny * grid as i64 + nx) as usize]);
                    }
                }
            }
            let nm = neigh.iter().sum::<f64>() / neigh.len() as f64;
            discrepancy[ti] = (means[ti] - nm).abs();
        }
    }

    let z = |v: &[f64]| -> Vec<f64> {
        let mu = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
        let sd = var.sqrt();
        if sd < 1e-12 {
            vec![0.0; v.len()]
        } else {
            v.iter().map(|x| (x - mu) / sd).collect()
        }
    };
    let (zd, ze, zn) = (z(&density), z(&energy), z(&discrepancy));
    (0..n).map(|i| zd[i] + ze[i] + zn[i]).collect()
}

/// Tiles whose anomaly score clears the z threshold, ranked by score.
pub fn tool_edge_anomaly(world: &ToolWorld) -> Observation {
    let grid = world.cfg.tile_grid;
    let scores = edge_anomaly_scores(&world.image, grid, world.cfg.grad_threshold);
    let mut hits: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, s)| *s > world.cfg.edge_z_threshold)
        .collect();
    hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let g = grid as f64;
    Observation::Candidates {
        regions: hits
            .into_iter()
            .take(8)
            .map(|(ti, score)| {
                let tx = (ti as u32 % grid) as f64;
                let ty = (ti as u32 / grid) as f64;
                ScoredRegion {
                    region: [tx / g, ty / g, (tx + 1.0) / g, (ty + 1.0) / g],
                    score,
                }
            })
            .collect(),
    }
}

/// Planted face boxes, verbatim.
pub fn tool_faces(world: &ToolWorld) -> Observation {
    Observation::Faces {
        boxes: world.face_boxes.clone(),
    }
}

/// `count` frames uniformly spaced over the normalized segment; a single
/// frame comes from the segment midpoint.
pub fn tool_frames(world: &ToolWorld, span: &[f64; 2], count: u32) -> Observation {
    let seg = match crate::metrics::Segment::from_array(*span) {
        Ok(s) => s,
        Err(e) => return err(format!("invalid segment: {e}")),
    };
    let f = world.cfg.video_frames;
    if count == 0 || count > f {
        return err(format!("frame count {count} outside 1..={f}"));
    }
    let d = (f - 1) as f64;
    let times: Vec<f64> = if count == 1 {
        vec![(seg.t1 + seg.t2) / 2.0]
    } else {
        (0..count)
            .map(|j| seg.t1 + (seg.t2 - seg.t1) * j as f64 / (count - 1) as f64)
            .collect()
    };
    Observation::Frames {
        frames: times
            .into_iter()
            .map(|t| {
                let index = ((t * d).round() as u32).min(f - 1);
                Frame {
                    index,
                    raster: world.frames[index as usize].clone(),
                }
            })
            .collect(),
    }
}

/// Oracle segmenter. Returns the planted tamper region intersected with the
/// prompt box when at least one positive point lies inside the region and no
/// negative point does; otherwise falls back to the box interior.
pub fn tool_segment(
    world: &ToolWorld,
    region: &[f64; 4],
    positive: &[[f64; 2]],
    negative: &[[f64; 2]],
) -> Observation {
    if positive.is_empty() {
        return err("segmentation needs at least one positive point");
    }
    let rect = match checked_region(region) {
        Ok(r) => r,
        Err(m) => return err(format!("invalid segment box: {m}")),
    };
    let (w, h) = (world.image.width, world.image.height);
    let box_mask = box_to_mask(&rect, w, h);
    let oracle = match &world.image_tamper_mask {
        Some(gt) => {
            let pos_inside = positive.iter().any(|p| gt.contains_point(p[0], p[1]));
            let neg_inside = negative.iter().any(|p| gt.contains_point(p[0], p[1]));
            if pos_inside && !neg_inside {
                let mut m = PixelMask::empty(w, h);
                for i in 0..m.bits.len() {
                    m.bits[i] = gt.bits[i] && box_mask.bits[i];
                }
                Some(m)
            } else {
                None
            }
        }
        None => None,
    };
    Observation::Mask {
        mask: oracle.unwrap_or(box_mask),
    }
}

/// Write a world out as PGM rasters plus JSON metadata for inspection.
pub fn export_world(world: &ToolWorld, dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_pgm(&world.image, &dir.join("image.pgm"))?;
    for (i, frame) in world.frames.iter().enumerate() {
        write_pgm(frame, &dir.join(format!("frame_{i:02}.pgm")))?;
    }
    let meta = serde_json::json!({
        "seed": world.seed,
        "tamper": world.tamper,
        "image_tamper_box": world.image_tamper_box,
        "video_tamper_range": world.video_tamper_range,
        "video_tamper_segment": world.video_tamper_segment(),
        "document": world.document,
        "doc_manipulated": world.doc_manipulated,
        "claim": world.claim,
        "claim_true": world.claim_true,
        "facts": world.facts,
        "face_boxes": world.face_boxes,
    });
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )
}

fn write_pgm(r: &Raster, path: &std::path::Path) -> std::io::Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", r.width, r.height);
    for y in 0..r.height {
        let row: Vec<String> = (0..r.width).map(|x| r.get(x, y).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(seed: u64) -> ToolWorld {
        ToolWorld::generate(seed, &WorldConfig::default(), &WorldTamper::default())
    }

    #[test]
    fn generation_is_deterministic() {
        let a = world(7);
        let b = world(7);
        assert_eq!(a.image.pixels, b.image.pixels);
        assert_eq!(a.document, b.document);
        assert_eq!(a.facts, b.facts);
        assert_eq!(a.claim, b.claim);
        let qa = tool_search(&a, "adams");
        let qb = tool_search(&b, "adams");
        assert_eq!(qa, qb);
    }

    #[test]
    fn search_ranks_by_overlap_then_recency() {
        let w = world(3);
        // Brute-force oracle over the raw index.
        let query = "atlas won final";
        let tokens: Vec<&str> = query.split_whitespace().collect();
        let mut expect: Vec<(usize, u32, String)> = w
            .facts
            .iter()
            .map(|f| {
                (
                    f.keywords
                        .iter()
                        .filter(|k| tokens.contains(&k.as_str()))
                        .count(),
                    f.id,
                    f.date.clone(),
                )
            })
            .filter(|(o, _, _)| *o > 0)
            .collect();
        expect.sort_by(|a, b| b.0.cmp(&a.0).then(b.2.cmp(&a.2)).then(a.1.cmp(&b.1)));
        match tool_search(&w, query) {
            Observation::Search { results } => {
                let got: Vec<u32> = results.iter().map(|r| r.id).collect();
                let want: Vec<u32> = expect
                    .iter()
                    .take(w.cfg.search_top_k)
                    .map(|(_, id, _)| *id)
                    .collect();
                assert_eq!(got, want);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        assert!(tool_search(&w, "").is_error());
        match tool_search(&w, "zzzqqq") {
            Observation::Search { results } => assert!(results.is_empty()),
            other => panic!("unexpected observation {other:?}"),
        }
    }

    #[test]
    fn crop_full_box_is_identity() {
        let w = world(5);
        match tool_crop(&w, &[0.0, 0.0, 1.0, 1.0]) {
            Observation::Crop { raster } => assert_eq!(raster, w.image),
            other => panic!("unexpected observation {other:?}"),
        }
    }

    #[test]
    fn crop_rejects_reversed_box() {
        let w = world(5);
        assert!(tool_crop(&w, &[0.5, 0.5, 0.4, 0.9]).is_error());
    }

    #[test]
    fn crop_of_crop_matches_composed_box() {
        let w = world(9);
        let seeds: Vec<(f64, f64, f64, f64)> = vec![
            (0.1, 0.2, 0.8, 0.9),
            (0.0, 0.0, 0.55, 0.65),
            (0.25, 0.05, 0.95, 0.5),
        ];
        for (x1, y1, x2, y2) in seeds {
            let outer = [x1, y1, x2, y2];
            let or = match tool_crop(&w, &outer) {
                Observation::Crop { raster } => raster,
                other => panic!("unexpected observation {other:?}"),
            };
            // Inner box relative to the snapped outer pixel window.
            let inner_rel = [0.25, 0.25, 0.75, 0.75];
            let (ox, ow) = pixel_range(x1, x2, w.image.width).unwrap();
            let (oy, oh) = pixel_range(y1, y2, w.image.height).unwrap();
            let composed = [
                (ox as f64 + inner_rel[0] * ow as f64) / w.image.width as f64,
                (oy as f64 + inner_rel[1] * oh as f64) / w.image.height as f64,
                (ox as f64 + inner_rel[2] * ow as f64) / w.image.width as f64,
                (oy as f64 + inner_rel[3] * oh as f64) / w.image.height as f64,
            ];
            let direct = match tool_crop(&w, &composed) {
                Observation::Crop { raster } => raster,
                other => panic!("unexpected observation {other:?}"),
            };
            // Crop the sub-raster through a scratch world sharing the image.
            let mut sub_world = w.clone();
            sub_world.image = or;
            let nested = match tool_crop(&sub_world, &inner_rel) {
                Observation::Crop { raster } => raster,
                other => panic!("unexpected observation {other:?}"),
            };
            assert_eq!(nested, direct);
        }
    }

    #[test]
    fn zoom_factor_one_equals_crop_and_two_duplicates() {
        let w = world(4);
        let region = [0.25, 0.25, 0.40625, 0.40625]; // 10x10 on a 64 grid
        let crop = match tool_crop(&w, &region) {
            Observation::Crop { raster } => raster,
            other => panic!("unexpected observation {other:?}"),
        };
        match tool_zoom(&w, &region, 1) {
            Observation::Zoom { raster } => assert_eq!(raster, crop),
            other => panic!("unexpected observation {other:?}"),
        }
        match tool_zoom(&w, &region, 2) {
            Observation::Zoom { raster } => {
                assert_eq!(raster.width, crop.width * 2);
                assert_eq!(raster.height, crop.height * 2);
                for y in 0..raster.height {
                    for x in 0..raster.width {
                        assert_eq!(raster.get(x, y), crop.get(x / 2, y / 2));
                    }
                }
                assert!((raster.mean() - crop.mean()).abs() < 1e-9);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        assert!(tool_zoom(&w, &[0.0, 0.0, 1.0, 1.0], 8).is_error());
    }

    #[test]
    fn edge_anomaly_finds_planted_patch() {
        let mut found = 0;
        let total = 100;
        for seed in 0..total {
            let w = world(seed);
            let gt = Rect::from_array(w.image_tamper_box.unwrap()).unwrap();
            if let Observation::Candidates { regions } = tool_edge_anomaly(&w) {
                if let Some(top) = regions.first() {
                    let cand = Rect::from_array(top.region).unwrap();
                    if crate::metrics::iou(&cand, &gt) > 0.0 {
                        found += 1;
                    }
                }
            }
        }
        assert!(found >= 95, "top candidate overlapped gt in only {found}/{total} worlds");
    }

    #[test]
    fn edge_anomaly_recall_over_candidate_list() {
        // Over 200 seeded worlds, some gt-overlapping tile appears in the
        // candidate list in at least 95% of them.
        let mut hit = 0;
        let total = 200;
        for seed in 1000..1000 + total {
            let w = world(seed);
            let gt = Rect::from_array(w.image_tamper_box.unwrap()).unwrap();
            if let Observation::Candidates { regions } = tool_edge_anomaly(&w) {
                if regions.iter().any(|r| {
                    crate::metrics::iou(&Rect::from_array(r.region).unwrap(), &gt) > 0.0
                }) {
                    hit += 1;
                }
            }
        }
        assert!(hit * 100 >= total * 95, "recall {hit}/{total}");
    }

    #[test]
    fn edge_anomaly_uniform_image_yields_nothing() {
        let mut w = world(2);
        w.image = Raster::filled(64, 64, 128);
        match tool_edge_anomaly(&w) {
            Observation::Candidates { regions } => assert!(regions.is_empty()),
            other => panic!("unexpected observation {other:?}"),
        }
    }

    #[test]
    fn edge_anomaly_invariant_to_intensity_shift() {
        let w = world(6);
        let shifted = Raster::new(
            w.image.width,
            w.image.height,
            w.image.pixels.iter().map(|p| p.saturating_add(10).max(*p)).collect(),
        );
        // Regenerate without saturation: base is kept in [20,235] but the
        // tamper patch may reach 255, so shift down instead.
        let down = Raster::new(
            w.image.width,
            w.image.height,
            w.image.pixels.iter().map(|p| p.saturating_sub(10)).collect(),
        );
        let can_shift_down = w.image.pixels.iter().all(|p| *p >= 10);
        if can_shift_down {
            let a = edge_anomaly_scores(&w.image, 8, 24);
            let b = edge_anomaly_scores(&down, 8, 24);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        } else {
            let _ = shifted; // fall back: nothing to assert for this seed
        }
    }

    #[test]
    fn faces_verbatim() {
        for seed in 0..20 {
            let w = world(seed);
            match tool_faces(&w) {
                Observation::Faces { boxes } => assert_eq!(boxes, w.face_boxes),
                other => panic!("unexpected observation {other:?}"),
            }
        }
    }

    #[test]
    fn frames_full_span_returns_all() {
        let w = world(8);
        let f = w.cfg.video_frames;
        match tool_frames(&w, &[0.0, 1.0], f) {
            Observation::Frames { frames } => {
                let idx: Vec<u32> = frames.iter().map(|fr| fr.index).collect();
                assert_eq!(idx, (0..f).collect::<Vec<_>>());
            }
            other => panic!("unexpected observation {other:?}"),
        }
        // Midpoint rule for a single frame.
        match tool_frames(&w, &[0.0, 1.0], 1) {
            Observation::Frames { frames } => {
                assert_eq!(frames[0].index, ((0.5 * (f - 1) as f64).round()) as u32);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        assert!(tool_frames(&w, &[0.6, 0.2], 2).is_error());
        assert!(tool_frames(&w, &[0.0, 1.0], 0).is_error());
    }

    #[test]
    fn frames_inside_tampered_interval_carry_marker() {
        for seed in 0..50 {
            let w = world(seed);
            let seg = w.video_tamper_segment().unwrap();
            match tool_frames(&w, &seg, 4) {
                Observation::Frames { frames } => {
                    for fr in frames {
                        assert!(
                            w.frame_is_tampered(fr.index),
                            "seed {seed} frame {} outside tamper range {:?}",
                            fr.index,
                            w.video_tamper_range
                        );
                    }
                }
                other => panic!("unexpected observation {other:?}"),
            }
        }
    }

    #[test]
    fn segment_oracle_contract() {
        let w = world(12);
        let gtb = w.image_tamper_box.unwrap();
        let gt_mask = w.image_tamper_mask.clone().unwrap();
        let inside = [(gtb[0] + gtb[2]) / 2.0, (gtb[1] + gtb[3]) / 2.0];
        // Enclosing box + positive point inside: exact gt mask within box.
        match tool_segment(&w, &[0.0, 0.0, 1.0, 1.0], &[inside], &[]) {
            Observation::Mask { mask } => {
                assert_eq!(crate::metrics::dice(&mask, &gt_mask).unwrap(), 1.0);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        // Positive point outside the tamper region: fallback box mask.
        let outside = [0.01, 0.01];
        match tool_segment(&w, &[0.0, 0.0, 0.5, 0.5], &[outside], &[]) {
            Observation::Mask { mask } => {
                let fb = box_to_mask(&Rect::new(0.0, 0.0, 0.5, 0.5).unwrap(), 64, 64);
                assert_eq!(mask, fb);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        // Negative point inside the tamper region: fallback box mask.
        match tool_segment(&w, &[0.0, 0.0, 1.0, 1.0], &[inside], &[inside]) {
            Observation::Mask { mask } => {
                let fb = box_to_mask(&Rect::new(0.0, 0.0, 1.0, 1.0).unwrap(), 64, 64);
                assert_eq!(mask, fb);
            }
            other => panic!("unexpected observation {other:?}"),
        }
        assert!(tool_segment(&w, &[0.0, 0.0, 1.0, 1.0], &[], &[]).is_error());
    }

    #[test]
    fn observations_serde_round_trip() {
        let w = world(1);
        let obs = vec![
            tool_search(&w, "adams"),
            tool_crop(&w, &[0.1, 0.1, 0.4, 0.4]),
            tool_zoom(&w, &[0.1, 0.1, 0.3, 0.3], 2),
            tool_edge_anomaly(&w),
            tool_faces(&w),
            tool_frames(&w, &[0.2, 0.8], 3),
            tool_segment(&w, &[0.0, 0.0, 1.0, 1.0], &[[0.5, 0.5]], &[]),
            Observation::Error {
                message: "empty query".into(),
            },
        ];
        for o in obs {
            let json = serde_json::to_string(&o).unwrap();
            let back: Observation = serde_json::from_str(&json).unwrap();
            assert_eq!(back, o);
        }
    }

    #[test]
    fn export_writes_layout() {
        let dir = tempfile::tempdir().unwrap();
        let w = world(2);
        export_world(&w, dir.path()).unwrap();
        assert!(dir.path().join("image.pgm").exists());
        assert!(dir.path().join("meta.json").exists());
        assert!(dir.path().join("frame_00.pgm").exists());
    }
}
