//! Four-stage LLM triplet synthesis: query objects, consistency-checked
//! target objects, single-edit difference captions, multi-edit composition.

mod transport;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use transport::{
    FixtureTransport, GatewayTransport, LlmRequest, RecordingTransport, Retry, Transport, ENV_MODEL, ENV_TOKEN, ENV_URL,
};

use crate::data::{Dataset, GridStore, TripletRecord, GRIDS_FILE};
use crate::error::{Error, Result};
use crate::text::{noun_phrases, Lexicon};

pub const PAIRS_FILE: &str = "pairs.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDesc {
    pub name: String,
    pub descriptors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectList {
    pub objects: Vec<ObjectDesc>,
}

impl ObjectList {
    pub fn get(&self, name: &str) -> Option<&ObjectDesc> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectTag {
    New,
    Adopted,
    ReDescribed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetObject {
    pub name: String,
    pub descriptors: Vec<String>,
    pub status: ObjectTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetList {
    pub objects: Vec<TargetObject>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Add,
    Remove,
    Modify,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffCaption {
    pub object: String,
    pub edit: EditKind,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionReply {
    captions: Vec<DiffCaption>,
}

/// A validated value plus the warnings raised while repairing it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checked<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

fn schema<T>(reason: impl Into<String>, raw: &str) -> Result<T> {
    Err(Error::Schema {
        reason: reason.into(),
        raw: raw.to_string(),
    })
}

fn parse_json<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T> {
    if raw.trim().is_empty() {
        return schema("empty response", raw);
    }
    serde_json::from_str(raw).or_else(|e| schema(format!("not the expected JSON object: {e}"), raw))
}

fn check_strings<'a>(items: impl IntoIterator<Item = &'a String>, what: &str, raw: &str) -> Result<()> {
    for s in items {
        if s.trim().is_empty() {
            return schema(format!("empty {what}"), raw);
        }
    }
    Ok(())
}

/// Renames repeated names to `name (2)`, `name (3)`, … in order.
fn dedupe_names<'a>(names: impl Iterator<Item = &'a mut String>, warnings: &mut Vec<String>) {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut taken: HashSet<String> = HashSet::new();
    let names: Vec<&mut String> = names.collect();
    for n in &names {
        taken.insert((*n).clone());
    }
    for n in names {
        let c = seen.entry(n.clone()).or_insert(0);
        *c += 1;
        if *c > 1 {
            let mut k = *c;
            let mut fresh = format!("{n} ({k})");
            while taken.contains(&fresh) {
                k += 1;
                fresh = format!("{n} ({k})");
            }
            let msg = format!("duplicate object name {n:?} renamed to {fresh:?}");
            log::warn!("{msg}");
            warnings.push(msg);
            taken.insert(fresh.clone());
            *n = fresh;
        }
    }
}

pub fn parse_object_list(raw: &str) -> Result<Checked<ObjectList>> {
    let mut list: ObjectList = parse_json(raw)?;
    if list.objects.is_empty() {
        return schema("no objects listed", raw);
    }
    for o in &list.objects {
        check_strings([&o.name], "object name", raw)?;
        if o.descriptors.is_empty() {
            return schema(format!("object {:?} has no descriptors", o.name), raw);
        }
        check_strings(&o.descriptors, "descriptor", raw)?;
    }
    let mut warnings = Vec::new();
    dedupe_names(list.objects.iter_mut().map(|o| &mut o.name), &mut warnings);
    Ok(Checked { value: list, warnings })
}

/// Validates a stage-2 reply against the query list. Adopted objects take
/// the query descriptors verbatim; a re-description identical to the query
/// is re-tagged as adopted.
pub fn parse_target_list(raw: &str, query: &ObjectList) -> Result<Checked<TargetList>> {
    let mut list: TargetList = parse_json(raw)?;
    if list.objects.is_empty() {
        return schema("no objects listed", raw);
    }
    let mut warnings = Vec::new();
    dedupe_names(list.objects.iter_mut().map(|o| &mut o.name), &mut warnings);
    for o in &mut list.objects {
        check_strings([&o.name], "object name", raw)?;
        let q = query.get(&o.name);
        match (o.status, q) {
            (ObjectTag::Adopted | ObjectTag::ReDescribed, None) => {
                return schema(format!("object {:?} is not in the query list", o.name), raw);
            }
            (ObjectTag::Adopted, Some(q)) => {
                if o.descriptors != q.descriptors {
                    let msg = format!(
                        "adopted object {:?} restated its descriptors; using the query list",
                        o.name
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                o.descriptors = q.descriptors.clone();
            }
            (ObjectTag::ReDescribed, Some(q)) => {
                if o.descriptors.is_empty() {
                    return schema(format!("object {:?} has no descriptors", o.name), raw);
                }
                if o.descriptors == q.descriptors {
                    let msg = format!(
                        "object {:?} re-described with identical descriptors; tagged adopted",
                        o.name
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                    o.status = ObjectTag::Adopted;
                }
            }
            (ObjectTag::New, _) => {
                if o.descriptors.is_empty() {
                    return schema(format!("object {:?} has no descriptors", o.name), raw);
                }
            }
        }
        check_strings(&o.descriptors, "descriptor", raw)?;
    }
    Ok(Checked { value: list, warnings })
}

/// Objects that changed between the lists, with the edit each needs.
pub fn changed_objects(query: &ObjectList, target: &TargetList) -> BTreeMap<String, EditKind> {
    let mut out = BTreeMap::new();
    for o in &target.objects {
        match o.status {
            ObjectTag::New => {
                out.insert(o.name.clone(), EditKind::Add);
            }
            ObjectTag::ReDescribed => {
                out.insert(o.name.clone(), EditKind::Modify);
            }
            ObjectTag::Adopted => {}
        }
    }
    for q in &query.objects {
        if !target.objects.iter().any(|t| t.name == q.name) {
            out.insert(q.name.clone(), EditKind::Remove);
        }
    }
    out
}

/// Validates a stage-3 reply: every caption names one changed object with
/// the matching edit, and every changed object is covered.
pub fn parse_captions(raw: &str, changed: &BTreeMap<String, EditKind>) -> Result<Vec<DiffCaption>> {
    let reply: CaptionReply = parse_json(raw)?;
    for c in &reply.captions {
        check_strings([&c.text], "caption", raw)?;
        match changed.get(&c.object) {
            None => {
                return schema(
                    format!("caption refers to unchanged or unknown object {:?}", c.object),
                    raw,
                )
            }
            Some(k) if *k != c.edit => {
                return schema(
                    format!("caption for {:?} is a {:?}, expected {:?}", c.object, c.edit, k),
                    raw,
                )
            }
            _ => {}
        }
    }
    for name in changed.keys() {
        if !reply.captions.iter().any(|c| &c.object == name) {
            return schema(format!("no caption for changed object {name:?}"), raw);
        }
    }
    Ok(reply.captions)
}

pub fn stage1_prompt() -> String {
    "List every distinct object visible in the image. For each object give a short name and an ordered list of \
     descriptors (color, material, size, position, state). Reply as {\"objects\": [{\"name\": string, \
     \"descriptors\": [string, ...]}]}."
        .to_string()
}

pub fn stage2_prompt(query: &ObjectList) -> String {
    let q = serde_json::to_string(query).expect("list serializes");
    format!(
        "These objects were found in a reference image: {q}\n\
         List every object in this second image. If an object from the reference list appears unchanged, \
         use its exact name, adopt the exact set of descriptors to ensure consistency, and mark it \"adopted\". \
         If it appears but looks different, keep its name, generate a new set of descriptors for the given object, \
         and mark it \"re-described\". If a new object is introduced in the target image, describe it and mark it \
         \"new\". Omit reference objects that are gone. Reply as {{\"objects\": [{{\"name\": string, \
         \"descriptors\": [string, ...], \"status\": \"adopted\" | \"re-described\" | \"new\"}}]}}."
    )
}

pub fn stage3_prompt(query: &ObjectList, target: &TargetList, changed: &BTreeMap<String, EditKind>) -> String {
    let q = serde_json::to_string(query).expect("list serializes");
    let t = serde_json::to_string(target).expect("list serializes");
    let c = serde_json::to_string(changed).expect("map serializes");
    format!(
        "Reference objects: {q}\nTarget objects: {t}\nChanged objects: {c}\n\
         Write a set of difference captions, each describing a single removal, addition, or modification of \
         exactly one changed object, phrased as an instruction that turns the reference image into the target. \
         Reply as {{\"captions\": [{{\"object\": string, \"edit\": \"add\" | \"remove\" | \"modify\", \
         \"text\": string}}]}}."
    )
}

pub fn stage1_query_objects(image: &str, transport: &dyn Transport) -> Result<Checked<ObjectList>> {
    let req = LlmRequest {
        stage: 1,
        prompt: stage1_prompt(),
        image: Some(image.to_string()),
    };
    parse_object_list(&transport.complete(&req)?)
}

pub fn stage2_target_objects(
    image: &str,
    query: &ObjectList,
    transport: &dyn Transport,
) -> Result<Checked<TargetList>> {
    let req = LlmRequest {
        stage: 2,
        prompt: stage2_prompt(query),
        image: Some(image.to_string()),
    };
    parse_target_list(&transport.complete(&req)?, query)
}

/// No request is made when nothing changed.
pub fn stage3_diff_captions(
    query: &ObjectList,
    target: &TargetList,
    transport: &dyn Transport,
) -> Result<Vec<DiffCaption>> {
    let changed = changed_objects(query, target);
    if changed.is_empty() {
        return Ok(Vec::new());
    }
    let req = LlmRequest {
        stage: 3,
        prompt: stage3_prompt(query, target, &changed),
        image: None,
    };
    parse_captions(&transport.complete(&req)?, &changed)
}

fn clause(s: &str, first: bool) -> String {
    let s = s.trim().trim_end_matches('.');
    if first {
        return s.to_string();
    }
    let mut c = s.chars();
    match c.next() {
        Some(h) => h.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn combinations(n: usize, r: usize, out: &mut Vec<Vec<usize>>) {
    fn go(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    go(0, n, r, &mut Vec::with_capacity(r), out);
}

/// All combinations of 1..=`arity` captions in lexicographic order: singles
/// verbatim, pairs as "a and b", longer ones as "a, b and c". At most `cap`
/// texts are returned.
pub fn stage4_compose(captions: &[String], arity: usize, cap: Option<usize>) -> Vec<String> {
    let mut out = Vec::new();
    let limit = cap.unwrap_or(usize::MAX);
    for r in 1..=arity.min(captions.len()) {
        let mut combos = Vec::new();
        combinations(captions.len(), r, &mut combos);
        for c in combos {
            if out.len() >= limit {
                return out;
            }
            if r == 1 {
                out.push(captions[c[0]].clone());
                continue;
            }
            let parts: Vec<String> = c
                .iter()
                .enumerate()
                .map(|(j, &i)| clause(&captions[i], j == 0))
                .collect();
            let (last, head) = parts.split_last().expect("r ≥ 2");
            out.push(format!("{} and {last}", head.join(", ")));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub pair_id: String,
    pub query_image: String,
    pub target_image: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub arity: usize,
    pub max_texts_per_pair: Option<usize>,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            arity: 2,
            max_texts_per_pair: Some(16),
            workers: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutput {
    pub pair: PairSpec,
    pub query: ObjectList,
    pub target: TargetList,
    pub captions: Vec<DiffCaption>,
    pub texts: Vec<String>,
    pub warnings: Vec<String>,
}

/// Runs all four stages on one pair. Captions and texts without a noun
/// phrase are dropped with a warning.
pub fn run_pair(
    pair: &PairSpec,
    transport: &dyn Transport,
    lexicon: &Lexicon,
    cfg: &PipelineConfig,
) -> Result<PairOutput> {
    let q = stage1_query_objects(&pair.query_image, transport)?;
    let t = stage2_target_objects(&pair.target_image, &q.value, transport)?;
    let mut warnings = q.warnings;
    warnings.extend(t.warnings);
    let mut captions = stage3_diff_captions(&q.value, &t.value, transport)?;
    let has_np = |s: &str| !noun_phrases(s, lexicon, 1, false).1.is_empty();
    captions.retain(|c| {
        let keep = has_np(&c.text);
        if !keep {
            let msg = format!("{}: caption {:?} has no noun phrase, dropped", pair.pair_id, c.text);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        keep
    });
    let singles: Vec<String> = captions.iter().map(|c| c.text.clone()).collect();
    let texts = stage4_compose(&singles, cfg.arity, cfg.max_texts_per_pair)
        .into_iter()
        .filter(|s| has_np(s))
        .collect();
    Ok(PairOutput {
        pair: pair.clone(),
        query: q.value,
        target: t.value,
        captions,
        texts,
        warnings,
    })
}

/// Processes pairs on a pool of `cfg.workers` threads; output order is the
/// input order.
pub fn run_pipeline(
    pairs: &[PairSpec],
    transport: &dyn Transport,
    lexicon: &Lexicon,
    cfg: &PipelineConfig,
) -> Result<Vec<PairOutput>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| pairs.par_iter().map(|p| run_pair(p, transport, lexicon, cfg)).collect())
}

pub fn load_pairs(dir: &Path) -> Result<Vec<PairSpec>> {
    let p = dir.join(PAIRS_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let pairs: Vec<PairSpec> =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
    let mut ids = HashSet::new();
    for pr in &pairs {
        if !ids.insert(&pr.pair_id) {
            return Err(Error::Data(format!("duplicate pair id {}", pr.pair_id)));
        }
        if pr.query_image == pr.target_image {
            return Err(Error::Data(format!("pair {} uses one image twice", pr.pair_id)));
        }
    }
    Ok(pairs)
}

/// One triplet per composed text, with the target as the only ground truth.
pub fn to_dataset(outputs: &[PairOutput], grids: &GridStore, lexicon: &Lexicon) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut store = GridStore::new();
    for o in outputs {
        for id in [&o.pair.query_image, &o.pair.target_image] {
            if !store.contains(id) {
                store.insert(grids.require(id)?.clone())?;
            }
        }
        for text in &o.texts {
            let (_, np_spans) = noun_phrases(text, lexicon, usize::MAX, false);
            records.push(TripletRecord {
                query_id: o.pair.query_image.clone(),
                target_id: o.pair.target_image.clone(),
                text: text.clone(),
                subset_ids: Vec::new(),
                gt_ids: vec![o.pair.target_image.clone()],
                np_spans,
            });
        }
    }
    let ds = Dataset { records, grids: store };
    ds.validate()?;
    Ok(ds)
}

/// Replays the fixture corpus in `dir` and builds the dataset from its
/// `grids.bin`.
pub fn dataset_from_fixtures(
    dir: &Path,
    lexicon: &Lexicon,
    cfg: &PipelineConfig,
) -> Result<(Dataset, Vec<PairOutput>)> {
    let pairs = load_pairs(dir)?;
    let transport = FixtureTransport::new(dir)?;
    let outputs = run_pipeline(&pairs, &transport, lexicon, cfg)?;
    let grids = GridStore::read(&dir.join(GRIDS_FILE))?;
    Ok((to_dataset(&outputs, &grids, lexicon)?, outputs))
}
