//! Deterministic scene generator: coloured glyphs on a cell grid, edited by
//! add/remove/modify operations with templated captions.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GridStore, TripletRecord};
use crate::error::{Error, Result};
use crate::model::ImageGrid;
use crate::text::{noun_phrases, Lexicon};

/// Pixels per cell side when rendering.
pub const CELL_PX: usize = 8;
pub const MAX_OBJECTS: usize = 5;
pub const MIN_OBJECTS: usize = 2;
pub const DISTRACTORS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Glyph {
    Ball,
    Box,
    Ring,
    Bar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Black,
    White,
}

const GLYPHS: [Glyph; 4] = [Glyph::Ball, Glyph::Box, Glyph::Ring, Glyph::Bar];
const COLORS: [Color; 6] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Magenta,
    Color::Cyan,
];
const SIZES: [Size; 2] = [Size::Small, Size::Large];

impl Glyph {
    pub fn word(self) -> &'static str {
        match self {
            Glyph::Ball => "ball",
            Glyph::Box => "box",
            Glyph::Ring => "ring",
            Glyph::Bar => "bar",
        }
    }

    /// Whether pixel `(x, y)` of a cell is covered. Coverage counts differ
    /// for all eight glyph/size pairs so histograms tell them apart.
    fn covers(self, size: Size, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 - 3.5, y as f64 - 3.5);
        let r2 = dx * dx + dy * dy;
        match (self, size) {
            (Glyph::Ball, Size::Small) => r2 <= 2.0 * 2.0,
            (Glyph::Ball, Size::Large) => r2 <= 3.6 * 3.6,
            (Glyph::Ring, Size::Small) => r2 > 1.6 * 1.6 && r2 <= 3.2 * 3.2,
            (Glyph::Ring, Size::Large) => r2 > 1.6 * 1.6 && r2 <= 3.6 * 3.6,
            (Glyph::Box, Size::Small) => (2..6).contains(&x) && (2..6).contains(&y),
            (Glyph::Box, Size::Large) => (1..7).contains(&x) && (1..7).contains(&y),
            (Glyph::Bar, Size::Small) => y == 4,
            (Glyph::Bar, Size::Large) => (3..6).contains(&y),
        }
    }
}

impl Color {
    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [230, 30, 40],
            Color::Green => [30, 200, 60],
            Color::Blue => [40, 60, 220],
            Color::Yellow => [240, 220, 30],
            Color::Magenta => [220, 40, 210],
            Color::Cyan => [30, 210, 220],
        }
    }
}

impl Size {
    pub fn word(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }
}

impl Background {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Background::Black => [10, 10, 10],
            Background::White => [245, 245, 245],
        }
    }
}

/// Row and column names used in captions for a `p×p` grid.
pub fn cell_words(p: usize) -> Result<(&'static [&'static str], &'static [&'static str])> {
    match p {
        2 => Ok((&["top", "bottom"], &["left", "right"])),
        3 => Ok((&["top", "middle", "bottom"], &["left", "center", "right"])),
        4 => Ok((
            &["top", "upper", "lower", "bottom"],
            &["left", "midleft", "midright", "right"],
        )),
        _ => Err(Error::Config(format!(
            "synthetic scenes support grid sides 2–4, got {p}"
        ))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub glyph: Glyph,
    pub color: Color,
    pub size: Size,
    /// `(row, col)` cell.
    pub cell: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub p: usize,
    pub background: Background,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn object_at(&self, cell: (usize, usize)) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.cell == cell)
    }

    fn empty_cells(&self) -> Vec<(usize, usize)> {
        (0..self.p * self.p)
            .map(|i| (i / self.p, i % self.p))
            .filter(|&c| self.object_at(c).is_none())
            .collect()
    }

    /// Objects in row-major cell order, so equal scenes compare equal.
    fn normalized(mut self) -> Self {
        self.objects.sort_by_key(|o| o.cell.0 * self.p + o.cell.1);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.objects.iter().enumerate() {
            if o.cell.0 >= self.p || o.cell.1 >= self.p {
                return Err(Error::Data(format!(
                    "object at {:?} outside the {}×{} grid",
                    o.cell, self.p, self.p
                )));
            }
            if self.objects[..i].iter().any(|other| other.cell == o.cell) {
                return Err(Error::Data(format!("two objects share cell {:?}", o.cell)));
            }
        }
        Ok(())
    }

    pub fn sample(rng: &mut impl Rng, p: usize) -> Self {
        let background = if rng.random_bool(0.5) {
            Background::Black
        } else {
            Background::White
        };
        let n = rng.random_range(MIN_OBJECTS..=MAX_OBJECTS.min(p * p));
        let mut cells: Vec<(usize, usize)> = (0..p * p).map(|i| (i / p, i % p)).collect();
        let mut objects = Vec::with_capacity(n);
        for _ in 0..n {
            let c = cells.swap_remove(rng.random_range(0..cells.len()));
            objects.push(random_object(rng, c));
        }
        Self {
            p,
            background,
            objects,
            seed: rng.random(),
        }
        .normalized()
    }

    /// `p·8 × p·8` RGB raster.
    pub fn render_rgb(&self) -> (usize, usize, Vec<u8>) {
        let side = self.p * CELL_PX;
        let bg = self.background.rgb();
        let mut px: Vec<u8> = std::iter::repeat_n(bg, side * side).flatten().collect();
        for o in &self.objects {
            let col = o.color.rgb();
            for y in 0..CELL_PX {
                for x in 0..CELL_PX {
                    if o.glyph.covers(o.size, x, y) {
                        let (gy, gx) = (o.cell.0 * CELL_PX + y, o.cell.1 * CELL_PX + x);
                        let k = (gy * side + gx) * 3;
                        px[k..k + 3].copy_from_slice(&col);
                    }
                }
            }
        }
        (side, side, px)
    }

    pub fn render(&self, id: impl Into<String>) -> Result<ImageGrid> {
        let (w, h, px) = self.render_rgb();
        ImageGrid::from_rgb(id, w, h, &px, self.p)
    }
}

fn random_object(rng: &mut impl Rng, cell: (usize, usize)) -> SceneObject {
    SceneObject {
        glyph: *GLYPHS.choose(rng).expect("glyphs"),
        color: *COLORS.choose(rng).expect("colors"),
        size: *SIZES.choose(rng).expect("sizes"),
        cell,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrDelta {
    Color(Color),
    Size(Size),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    Add {
        object: SceneObject,
        template: u8,
    },
    Remove {
        cell: (usize, usize),
        template: u8,
    },
    Modify {
        cell: (usize, usize),
        delta: AttrDelta,
        template: u8,
    },
}

impl EditOp {
    pub fn cell(&self) -> (usize, usize) {
        match *self {
            EditOp::Add { object, .. } => object.cell,
            EditOp::Remove { cell, .. } | EditOp::Modify { cell, .. } => cell,
        }
    }

    pub fn apply(&self, scene: &SceneSpec) -> Result<SceneSpec> {
        let mut s = scene.clone();
        match *self {
            EditOp::Add { object, .. } => {
                if s.object_at(object.cell).is_some() {
                    return Err(Error::Data(format!("cell {:?} already occupied", object.cell)));
                }
                s.objects.push(object);
            }
            EditOp::Remove { cell, .. } => {
                let before = s.objects.len();
                s.objects.retain(|o| o.cell != cell);
                if s.objects.len() == before {
                    return Err(Error::Data(format!("nothing to remove at {cell:?}")));
                }
            }
            EditOp::Modify { cell, delta, .. } => {
                let o = s
                    .objects
                    .iter_mut()
                    .find(|o| o.cell == cell)
                    .ok_or_else(|| Error::Data(format!("nothing to modify at {cell:?}")))?;
                match delta {
                    AttrDelta::Color(c) if c != o.color => o.color = c,
                    AttrDelta::Size(z) if z != o.size => o.size = z,
                    _ => return Err(Error::Data("modification does not change the object".into())),
                }
            }
        }
        Ok(s.normalized())
    }

    /// Caption of this edit applied to `scene` (the scene before the edit).
    pub fn caption(&self, scene: &SceneSpec) -> Result<String> {
        let (rows, cols) = cell_words(scene.p)?;
        let (r, c) = self.cell();
        let place = format!("in the {} {}", rows[r], cols[c]);
        let obj = |cell| {
            scene
                .object_at(cell)
                .copied()
                .ok_or_else(|| Error::Data(format!("no object at {cell:?}")))
        };
        Ok(match *self {
            EditOp::Add { object: o, template } => {
                let verb = if template % 2 == 0 { "add" } else { "put" };
                format!(
                    "{verb} a {} {} {} {place}",
                    o.size.word(),
                    o.color.word(),
                    o.glyph.word()
                )
            }
            EditOp::Remove { cell, template } => {
                let o = obj(cell)?;
                if template % 2 == 0 {
                    format!("remove the {} {} {place}", o.color.word(), o.glyph.word())
                } else {
                    format!(
                        "remove the {} {} {} {place}",
                        o.size.word(),
                        o.color.word(),
                        o.glyph.word()
                    )
                }
            }
            EditOp::Modify { cell, delta, template } => {
                let o = obj(cell)?;
                let word = match delta {
                    AttrDelta::Color(c) => c.word(),
                    AttrDelta::Size(z) => z.word(),
                };
                if template % 2 == 0 {
                    format!("make the {} {place} {word}", o.glyph.word())
                } else {
                    format!("change the {} {place} to {word}", o.glyph.word())
                }
            }
        })
    }
}

/// A random edit of `scene` touching a cell outside `used`, or `None` when
/// no such edit exists.
fn random_op(rng: &mut impl Rng, scene: &SceneSpec, used: &[(usize, usize)]) -> Option<EditOp> {
    let empty: Vec<_> = scene.empty_cells().into_iter().filter(|c| !used.contains(c)).collect();
    let occupied: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| !used.contains(&o.cell))
        .copied()
        .collect();
    let mut kinds = Vec::new();
    if !empty.is_empty() {
        kinds.push(0);
    }
    if !occupied.is_empty() && scene.objects.len() >= 2 {
        kinds.push(1);
    }
    if !occupied.is_empty() {
        kinds.push(2);
    }
    let template = rng.random_range(0..2u8);
    Some(match *kinds.choose(rng)? {
        0 => {
            let cell = *empty.choose(rng)?;
            EditOp::Add {
                object: random_object(rng, cell),
                template,
            }
        }
        1 => EditOp::Remove {
            cell: occupied.choose(rng)?.cell,
            template,
        },
        _ => {
            let o = occupied.choose(rng)?;
            let delta = if rng.random_bool(0.7) {
                let others: Vec<Color> = COLORS.iter().copied().filter(|&c| c != o.color).collect();
                AttrDelta::Color(*others.choose(rng)?)
            } else {
                AttrDelta::Size(if o.size == Size::Small {
                    Size::Large
                } else {
                    Size::Small
                })
            };
            EditOp::Modify {
                cell: o.cell,
                delta,
                template,
            }
        }
    })
}

/// Applies `ops` in order; returns the final scene and the joined caption.
pub fn apply_ops(scene: &SceneSpec, ops: &[EditOp]) -> Result<(SceneSpec, String)> {
    let mut cur = scene.clone();
    let mut clauses = Vec::with_capacity(ops.len());
    for op in ops {
        clauses.push(op.caption(&cur)?);
        cur = op.apply(&cur)?;
    }
    Ok((cur, clauses.join(" and ")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub ops_min: usize,
    pub ops_max: usize,
    pub seed: u64,
    pub grid: usize,
    /// Additional unedited scenes stored alongside, to pad a gallery.
    pub extra_images: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            ops_min: 1,
            ops_max: 1,
            seed: 0,
            grid: 4,
            extra_images: 0,
        }
    }
}

/// Scenes and edits behind one generated triplet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTriplet {
    pub query_id: String,
    pub query: SceneSpec,
    pub ops: Vec<EditOp>,
    pub target_id: String,
    pub distractors: Vec<(String, Vec<EditOp>)>,
}

#[derive(Clone, Debug)]
pub struct SyntheticSet {
    pub dataset: Dataset,
    pub provenance: Vec<SynthTriplet>,
}

pub const SCENES_FILE: &str = "scenes.jsonl";

impl SyntheticSet {
    /// Writes the dataset plus `scenes.jsonl`, one provenance record per triplet.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.dataset.save(dir)?;
        let path = dir.join(SCENES_FILE);
        let mut out = String::new();
        for p in &self.provenance {
            out.push_str(&serde_json::to_string(p).expect("provenance serializes"));
            out.push('\n');
        }
        std::fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }
}

/// Reads `scenes.jsonl` back.
pub fn load_provenance(dir: &Path) -> Result<Vec<SynthTriplet>> {
    let path = dir.join(SCENES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

fn triplet_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i + 1);
    rng
}

pub fn gen_synthetic(cfg: &SynthConfig, lexicon: &Lexicon) -> Result<SyntheticSet> {
    if cfg.n == 0 {
        return Err(Error::Config("need at least one triplet".into()));
    }
    if cfg.ops_min == 0 || cfg.ops_max < cfg.ops_min || cfg.ops_max > 3 {
        return Err(Error::Config(format!(
            "ops range {}..={} must lie within 1..=3",
            cfg.ops_min, cfg.ops_max
        )));
    }
    cell_words(cfg.grid)?;
    let mut grids = GridStore::new();
    let mut records = Vec::with_capacity(cfg.n);
    let mut provenance = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = triplet_rng(cfg.seed, i as u64);
        let base = format!("syn{}_{i:05}", cfg.seed);
        let (query, ops, target, text) = loop {
            let query = SceneSpec::sample(&mut rng, cfg.grid);
            let k = rng.random_range(cfg.ops_min..=cfg.ops_max);
            if let Some(ops) = sample_ops(&mut rng, &query, k) {
                let (target, text) = apply_ops(&query, &ops)?;
                break (query, ops, target, text);
            }
        };
        let mut seen = vec![query.clone(), target.clone()];
        let mut distractors = Vec::with_capacity(DISTRACTORS);
        let mut attempts = 0;
        while distractors.len() < DISTRACTORS {
            attempts += 1;
            if attempts > 1000 {
                return Err(Error::Data(format!("could not find distractors for triplet {i}")));
            }
            let j = rng.random_range(0..ops.len());
            let mut alt = ops.clone();
            let mut prefix = query.clone();
            for op in &ops[..j] {
                prefix = op.apply(&prefix)?;
            }
            let used: Vec<_> = ops
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, o)| o.cell())
                .collect();
            let Some(op) = random_op(&mut rng, &prefix, &used) else {
                continue;
            };
            alt[j] = op;
            let Ok((scene, _)) = apply_ops(&query, &alt) else {
                continue;
            };
            if seen.contains(&scene) {
                continue;
            }
            seen.push(scene.clone());
            distractors.push((format!("{base}_d{}", distractors.len()), alt, scene));
        }

        let (q_id, t_id) = (format!("{base}_q"), format!("{base}_t"));
        grids.insert(query.render(&q_id)?)?;
        grids.insert(target.render(&t_id)?)?;
        for (id, _, scene) in &distractors {
            grids.insert(scene.render(id)?)?;
        }
        let (_, np_spans) = noun_phrases(&text, lexicon, usize::MAX, false);
        if np_spans.is_empty() {
            return Err(Error::Data(format!("caption {text:?} has no noun phrase")));
        }
        let mut subset_ids = vec![t_id.clone()];
        subset_ids.extend(distractors.iter().map(|(id, _, _)| id.clone()));
        records.push(TripletRecord {
            query_id: q_id.clone(),
            target_id: t_id.clone(),
            text,
            subset_ids,
            gt_ids: vec![t_id.clone()],
            np_spans,
        });
        provenance.push(SynthTriplet {
            query_id: q_id,
            query,
            ops,
            target_id: t_id,
            distractors: distractors.into_iter().map(|(id, alt, _)| (id, alt)).collect(),
        });
    }
    for x in 0..cfg.extra_images {
        let mut rng = triplet_rng(cfg.seed ^ 0x5EED_0F_E27A, x as u64);
        let scene = SceneSpec::sample(&mut rng, cfg.grid);
        grids.insert(scene.render(format!("syn{}_x{x:05}", cfg.seed))?)?;
    }
    let dataset = Dataset { records, grids };
    dataset.validate()?;
    Ok(SyntheticSet { dataset, provenance })
}

/// `k` edits on distinct cells, or `None` if the scene runs out of options.
fn sample_ops(rng: &mut impl Rng, query: &SceneSpec, k: usize) -> Option<Vec<EditOp>> {
    let mut ops = Vec::with_capacity(k);
    let mut cur = query.clone();
    let mut used = Vec::with_capacity(k);
    for _ in 0..k {
        let op = random_op(rng, &cur, &used)?;
        used.push(op.cell());
        cur = op.apply(&cur).ok()?;
        ops.push(op);
    }
    Some(ops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{color_bin, HIST_BINS};

    #[test]
    fn glyph_coverages_are_distinct() {
        let mut counts: Vec<usize> = GLYPHS
            .iter()
            .flat_map(|&g| SIZES.iter().map(move |&s| (g, s)))
            .map(|(g, s)| (0..64).filter(|&k| g.covers(s, k % 8, k / 8)).count())
            .collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![8, 12, 16, 20, 24, 32, 36, 44]);
    }

    #[test]
    fn colours_fall_in_distinct_bins_from_backgrounds() {
        let mut bins: Vec<usize> = COLORS.iter().map(|c| color_bin(c.rgb())).collect();
        bins.push(color_bin(Background::Black.rgb()));
        bins.push(color_bin(Background::White.rgb()));
        let mut d = bins.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), HIST_BINS);
    }

    #[test]
    fn add_red_ball_caption_and_render() {
        let q = SceneSpec {
            p: 4,
            background: Background::White,
            objects: vec![],
            seed: 0,
        };
        let op = EditOp::Add {
            object: SceneObject {
                glyph: Glyph::Ball,
                color: Color::Red,
                size: Size::Large,
                cell: (0, 3),
            },
            template: 0,
        };
        let (t, cap) = apply_ops(&q, &[op]).unwrap();
        assert_eq!(cap, "add a large red ball in the top right");
        let (qg, tg) = (q.render("q").unwrap(), t.render("t").unwrap());
        for cell in 0..16 {
            if cell == 3 {
                assert!((tg.patch(cell)[color_bin(Color::Red.rgb())] - 44.0 / 64.0).abs() < 1e-12);
            } else {
                assert_eq!(qg.patch(cell), tg.patch(cell));
            }
        }
    }

    #[test]
    fn invalid_edits_rejected() {
        let q = SceneSpec::sample(&mut ChaCha8Rng::seed_from_u64(3), 4);
        let o = q.objects[0];
        assert!(EditOp::Add { object: o, template: 0 }.apply(&q).is_err());
        let empty = q.empty_cells()[0];
        assert!(EditOp::Remove {
            cell: empty,
            template: 0
        }
        .apply(&q)
        .is_err());
        let same = EditOp::Modify {
            cell: o.cell,
            delta: AttrDelta::Color(o.color),
            template: 0,
        };
        assert!(same.apply(&q).is_err());
    }

    #[test]
    fn unsupported_grid_rejected() {
        let cfg = SynthConfig {
            n: 1,
            grid: 5,
            ..SynthConfig::default()
        };
        assert!(matches!(gen_synthetic(&cfg, Lexicon::builtin()), Err(Error::Config(_))));
    }
}
