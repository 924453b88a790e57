//! Regenerates `fixtures/good4cir` from the authored replies below by
//! running the pipeline through a recording transport. Rerun after any
//! prompt change: `cargo run -p cir-core --example record_good4cir_fixtures`.

use std::path::PathBuf;

use cir_core::data::{GridStore, GRIDS_FILE};
use cir_core::datagen::good4cir::*;
use cir_core::datagen::synthetic::{AttrDelta, Background, Color, EditOp, Glyph, SceneObject, SceneSpec, Size};
use cir_core::error::Result;
use cir_core::text::Lexicon;

struct Scripted([&'static str; 3]);

impl Transport for Scripted {
    fn complete(&self, req: &LlmRequest) -> Result<String> {
        Ok(self.0[req.stage as usize - 1].to_string())
    }
}

const QUERY: &str = r#"{"objects": [
  {"name": "bed", "descriptors": ["double", "wooden headboard", "centered against the back wall"]},
  {"name": "bedspread", "descriptors": ["white", "cotton", "neatly folded at the foot"]},
  {"name": "nightstand", "descriptors": ["dark wood", "left of the bed", "two drawers"]},
  {"name": "window", "descriptors": ["large", "floor-to-ceiling", "sheer curtains"]},
  {"name": "armchair", "descriptors": ["grey", "upholstered", "by the window"]},
  {"name": "painting", "descriptors": ["framed", "abstract", "above the headboard"]},
  {"name": "desk", "descriptors": ["oak", "against the right wall", "with a chair"]}
]}"#;

fn adopted(except: &[&str]) -> Vec<String> {
    let q: serde_json::Value = serde_json::from_str(QUERY).unwrap();
    q["objects"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|o| !except.contains(&o["name"].as_str().unwrap()))
        .map(|o| {
            format!(
                r#"{{"name": {}, "descriptors": {}, "status": "adopted"}}"#,
                o["name"], o["descriptors"]
            )
        })
        .collect()
}

fn target(except: &[&str], extra: &[&str]) -> &'static str {
    let mut items = adopted(except);
    items.extend(extra.iter().map(|s| s.to_string()));
    Box::leak(format!("{{\"objects\": [{}]}}", items.join(", ")).into_boxed_str())
}

const LAMP: &str = r#"{"name": "lamp", "descriptors": ["brass", "on the nightstand", "lit"], "status": "new"}"#;
const RED_SPREAD: &str =
    r#"{"name": "bedspread", "descriptors": ["red", "velvet", "spread over the whole bed"], "status": "re-described"}"#;
// The model restates the desk descriptors out of order; validation restores them.
const DESK_REORDERED: &str =
    r#"{"name": "desk", "descriptors": ["with a chair", "oak", "against the right wall"], "status": "adopted"}"#;

const CAP_LAMP: &str = r#"{"object": "lamp", "edit": "add", "text": "add a brass lamp on the nightstand"}"#;
const CAP_SPREAD: &str =
    r#"{"object": "bedspread", "edit": "modify", "text": "change the white bedspread to a red velvet bedspread"}"#;
const CAP_CHAIR: &str = r#"{"object": "armchair", "edit": "remove", "text": "remove the grey armchair by the window"}"#;

fn captions(c: &[&str]) -> &'static str {
    Box::leak(format!("{{\"captions\": [{}]}}", c.join(", ")).into_boxed_str())
}

fn obj(glyph: Glyph, color: Color, size: Size, cell: (usize, usize)) -> SceneObject {
    SceneObject {
        glyph,
        color,
        size,
        cell,
    }
}

fn main() -> Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/good4cir");
    let _ = std::fs::remove_dir_all(dir.join("responses"));
    let rows: Vec<(&str, &str, [&'static str; 3])> = vec![
        ("same", "hotel_room_01b", [QUERY, target(&[], &[]), "{}"]),
        (
            "lamp",
            "hotel_room_02",
            [QUERY, target(&[], &[LAMP]), captions(&[CAP_LAMP])],
        ),
        (
            "bedspread",
            "hotel_room_03",
            [QUERY, target(&["bedspread"], &[RED_SPREAD]), captions(&[CAP_SPREAD])],
        ),
        (
            "lamp_bedspread",
            "hotel_room_04",
            [
                QUERY,
                target(&["bedspread"], &[RED_SPREAD, LAMP]),
                captions(&[CAP_LAMP, CAP_SPREAD]),
            ],
        ),
        (
            "three_edits",
            "hotel_room_05",
            [
                QUERY,
                target(&["bedspread", "armchair", "desk"], &[RED_SPREAD, LAMP, DESK_REORDERED]),
                captions(&[CAP_LAMP, CAP_SPREAD, CAP_CHAIR]),
            ],
        ),
    ];
    let lex = Lexicon::builtin();
    let cfg = PipelineConfig::default();
    let mut pairs = Vec::new();
    for (suffix, tgt, script) in rows {
        let pair = PairSpec {
            pair_id: format!("hotel_room_01__{suffix}"),
            query_image: "hotel_room_01".into(),
            target_image: tgt.into(),
        };
        let rec = RecordingTransport::new(Scripted(script), &dir)?;
        let out = run_pair(&pair, &rec, lex, &cfg)?;
        println!(
            "{}: {} captions, {} texts",
            pair.pair_id,
            out.captions.len(),
            out.texts.len()
        );
        pairs.push(pair);
    }
    std::fs::write(
        dir.join(PAIRS_FILE),
        serde_json::to_string_pretty(&pairs).unwrap() + "\n",
    )
    .unwrap();

    // Stand-in grids: the room as a scene, each target with the matching edits.
    let room = SceneSpec {
        p: 4,
        background: Background::White,
        objects: vec![
            obj(Glyph::Box, Color::Blue, Size::Large, (1, 1)),
            obj(Glyph::Bar, Color::Cyan, Size::Small, (2, 1)),
            obj(Glyph::Box, Color::Yellow, Size::Small, (1, 0)),
            obj(Glyph::Bar, Color::Blue, Size::Large, (0, 3)),
            obj(Glyph::Ring, Color::Green, Size::Large, (1, 3)),
            obj(Glyph::Ring, Color::Magenta, Size::Small, (0, 1)),
            obj(Glyph::Box, Color::Yellow, Size::Large, (2, 3)),
        ],
        seed: 1,
    };
    let lamp = EditOp::Add {
        object: obj(Glyph::Ball, Color::Yellow, Size::Small, (0, 0)),
        template: 0,
    };
    let spread = EditOp::Modify {
        cell: (2, 1),
        delta: AttrDelta::Color(Color::Red),
        template: 0,
    };
    let chair = EditOp::Remove {
        cell: (1, 3),
        template: 0,
    };
    let mut grids = GridStore::new();
    let mut put = |id: &str, ops: &[EditOp]| -> Result<()> {
        let mut s = room.clone();
        for op in ops {
            s = op.apply(&s)?;
        }
        grids.insert(s.render(id)?)
    };
    put("hotel_room_01", &[])?;
    // Same room photographed again: one cell differs only by size.
    put(
        "hotel_room_01b",
        &[EditOp::Modify {
            cell: (0, 1),
            delta: AttrDelta::Size(Size::Large),
            template: 0,
        }],
    )?;
    put("hotel_room_02", &[lamp])?;
    put("hotel_room_03", &[spread])?;
    put("hotel_room_04", &[lamp, spread])?;
    put("hotel_room_05", &[lamp, spread, chair])?;
    grids.write(&dir.join(GRIDS_FILE))
}
