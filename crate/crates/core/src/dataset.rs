//! Dataset manifest, the four unseen-evaluation partitions and triplet
//! sampling.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::glyph::{Charcode, GlyphImage};
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Language {
    Zh,
    Ja,
    Ko,
    En,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::Zh, Language::Ja, Language::Ko, Language::En];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::Ja => "ja",
            Language::Ko => "ko",
            Language::En => "en",
        }
    }

    /// Script guess from the code point; CJK ideographs count as Chinese.
    pub fn of(c: Charcode) -> Language {
        match c.0 {
            0x3040..=0x30FF | 0x31F0..=0x31FF => Language::Ja,
            0x1100..=0x11FF | 0x3130..=0x318F | 0xAC00..=0xD7AF => Language::Ko,
            0x2E80..=0x2FDF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF => Language::Zh,
            _ => Language::En,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Language::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Data(format!("unknown language `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Pretrain,
    Train,
    Val,
    TestSS,
    TestSC,
    TestCS,
    TestCC,
}

impl Split {
    pub const ALL: [Split; 7] = [
        Split::Pretrain,
        Split::Train,
        Split::Val,
        Split::TestSS,
        Split::TestSC,
        Split::TestCS,
        Split::TestCC,
    ];
    pub const TESTS: [Split; 4] = [Split::TestSS, Split::TestSC, Split::TestCS, Split::TestCC];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Pretrain => "pretrain",
            Split::Train => "train",
            Split::Val => "val",
            Split::TestSS => "test_SS",
            Split::TestSC => "test_SC",
            Split::TestCS => "test_CS",
            Split::TestCC => "test_CC",
        }
    }

    pub fn is_test(self) -> bool {
        Split::TESTS.contains(&self)
    }

    /// Short row label for reports: `SS`, `SC`, `CS`, `CC`.
    pub fn partition_label(self) -> Option<&'static str> {
        match self {
            Split::TestSS => Some("SS"),
            Split::TestSC => Some("SC"),
            Split::TestCS => Some("CS"),
            Split::TestCC => Some("CC"),
            _ => None,
        }
    }

    pub fn from_partition_label(s: &str) -> Option<Split> {
        Split::TESTS.into_iter().find(|p| p.partition_label() == Some(s))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .or_else(|| Split::from_partition_label(s))
            .ok_or_else(|| Error::Data(format!("unknown split `{s}`")))
    }
}

/// Whether a font supplies content glyphs or target styles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum FontRole {
    Content,
    #[default]
    Style,
}

impl FontRole {
    pub fn as_str(self) -> &'static str {
        match self {
            FontRole::Content => "content",
            FontRole::Style => "style",
        }
    }
}

impl FromStr for FontRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(FontRole::Content),
            "style" => Ok(FontRole::Style),
            _ => Err(Error::Data(format!("unknown font role `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GlyphKey {
    pub style_id: String,
    pub charcode: Charcode,
}

impl GlyphKey {
    pub fn new(style_id: impl Into<String>, charcode: Charcode) -> Self {
        Self {
            style_id: style_id.into(),
            charcode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub charcode: Charcode,
    pub style_id: String,
    pub language: Language,
    pub split: Option<Split>,
    pub path: String,
    pub role: FontRole,
}

impl Entry {
    pub fn new(charcode: Charcode, style_id: impl Into<String>, path: impl Into<String>) -> Self {
        Self {
            charcode,
            style_id: style_id.into(),
            language: Language::of(charcode),
            split: None,
            path: path.into(),
            role: FontRole::Style,
        }
    }

    pub fn key(&self) -> GlyphKey {
        GlyphKey::new(self.style_id.clone(), self.charcode)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    /// Rejects duplicate (style, charcode) keys.
    pub fn new(entries: Vec<Entry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.key()) {
                return Err(Error::Data(format!("duplicate entry {} in `{}`", e.charcode, e.style_id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn styles(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.style_id.as_str()).collect()
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.in_split(split).count()
    }

    pub fn find(&self, style_id: &str, charcode: Charcode) -> Option<&Entry> {
        self.entries.iter().find(|e| e.style_id == style_id && e.charcode == charcode)
    }

    pub fn role_of(&self, style_id: &str) -> Option<FontRole> {
        self.entries.iter().find(|e| e.style_id == style_id).map(|e| e.role)
    }

    /// Entries used for masked-autoencoder pretraining: the pretrain split if
    /// one was carved out, otherwise train; Korean is always skipped.
    pub fn pretrain_entries(&self) -> Vec<&Entry> {
        let split = if self.count(Split::Pretrain) > 0 { Split::Pretrain } else { Split::Train };
        self.in_split(split).filter(|e| e.language != Language::Ko).collect()
    }
}

/// Mass proportions of SS : SC : CS : CC.
pub const PARTITION_WEIGHTS: [(Split, usize); 4] = [(Split::TestSS, 80), (Split::TestSC, 35), (Split::TestCS, 20), (Split::TestCC, 50)];

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Fraction of the non-test, non-Korean seen mass reserved for
    /// pretraining only.
    pub pretrain: f64,
    pub seed: u64,
    /// Fonts that supply content glyphs. Derived from the seed when `None`.
    pub content_fonts: Option<Vec<String>>,
    /// Per-font reference characters; fonts not listed get seeded picks.
    pub reference_chars: BTreeMap<String, Vec<Charcode>>,
    pub allow_empty_test: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            pretrain: 0.0,
            seed: 0,
            content_fonts: None,
            reference_chars: BTreeMap::new(),
            allow_empty_test: false,
        }
    }
}

impl SplitConfig {
    pub fn with_fractions(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            train,
            val,
            test,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test, self.pretrain];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::InvalidConfig("split fractions must lie in [0, 1]".into()));
        }
        if libm::fabs(self.train + self.val + self.test - 1.0) > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "train + val + test = {} instead of 1",
                self.train + self.val + self.test
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` over integer weights.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return alloc::vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights.iter().enumerate().map(|(i, w)| (total * w % sum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        out[i] += 1;
    }
    out
}

fn round_usize(x: f64) -> usize {
    libm::floor(x + 0.5) as usize
}

/// Assigns every entry a role and a split.
///
/// Test mass is apportioned 80:35:20:50 over SS:SC:CS:CC. SS and CS take whole
/// held-out fonts (style and content respectively) until their target mass is
/// reached; SC and CC take the reference characters of the remaining seen
/// fonts. Whatever is left is shared between train and val.
pub fn build_splits(manifest: &DatasetManifest, cfg: &SplitConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    if manifest.is_empty() {
        return Err(Error::InsufficientData("manifest has no entries".into()));
    }
    let mut out = DatasetManifest::new(manifest.entries.clone())?;
    let mut rng = SeededRng::new(cfg.seed);

    let mut fonts: Vec<String> = out.styles().into_iter().map(|s| s.to_string()).collect();
    rng.shuffle(&mut fonts);
    let content: BTreeSet<String> = match &cfg.content_fonts {
        Some(list) => {
            for f in list {
                if !fonts.contains(f) {
                    return Err(Error::InvalidConfig(format!("content font `{f}` has no entries")));
                }
            }
            list.iter().cloned().collect()
        }
        None => {
            let n = (fonts.len() / 5).max(2).min(fonts.len());
            fonts.iter().take(n).cloned().collect()
        }
    };
    for e in &mut out.entries {
        e.role = if content.contains(&e.style_id) { FontRole::Content } else { FontRole::Style };
    }
    let content_order: Vec<String> = fonts.iter().filter(|f| content.contains(*f)).cloned().collect();
    let style_order: Vec<String> = fonts.iter().filter(|f| !content.contains(*f)).cloned().collect();

    let mut by_font: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in out.entries.iter().enumerate() {
        by_font.entry(e.style_id.clone()).or_default().push(i);
    }

    let n_test = round_usize(cfg.test * out.len() as f64);
    let weights: Vec<usize> = PARTITION_WEIGHTS.iter().map(|(_, w)| *w).collect();
    let targets = apportion(n_test, &weights);
    let (t_ss, t_sc, t_cs, t_cc) = (targets[0], targets[1], targets[2], targets[3]);

    let mut assigned: Vec<Option<Split>> = alloc::vec![None; out.len()];

    // whole held-out fonts, keeping at least one seen font per role
    let hold_fonts = |order: &[String], target: usize, split: Split, assigned: &mut Vec<Option<Split>>| -> Vec<String> {
        let mut taken = 0;
        let mut seen = Vec::new();
        for (k, f) in order.iter().enumerate() {
            let remaining = order.len() - k;
            if taken < target && remaining > 1 {
                for &i in &by_font[f] {
                    assigned[i] = Some(split);
                }
                taken += by_font[f].len();
            } else {
                seen.push(f.clone());
            }
        }
        seen
    };
    let seen_style = hold_fonts(&style_order, t_ss, Split::TestSS, &mut assigned);
    let seen_content = hold_fonts(&content_order, t_cs, Split::TestCS, &mut assigned);

    // reference characters of seen fonts
    let withhold = |seen: &[String], target: usize, split: Split, rng: &mut SeededRng, assigned: &mut Vec<Option<Split>>| {
        if target == 0 {
            return;
        }
        let mut queues: Vec<Vec<usize>> = Vec::new();
        for f in seen {
            let idx = &by_font[f];
            if let Some(chars) = cfg.reference_chars.get(f) {
                for &i in idx {
                    if chars.contains(&out.entries[i].charcode) {
                        assigned[i] = Some(split);
                    }
                }
                queues.push(Vec::new());
            } else {
                let mut q = idx.clone();
                rng.shuffle(&mut q);
                // keep at least one glyph of every seen font for training
                q.truncate(q.len().saturating_sub(1));
                q.reverse();
                queues.push(q);
            }
        }
        let mut taken = assigned.iter().filter(|s| **s == Some(split)).count();
        while taken < target && queues.iter().any(|q| !q.is_empty()) {
            for q in queues.iter_mut() {
                if taken >= target {
                    break;
                }
                if let Some(i) = q.pop() {
                    assigned[i] = Some(split);
                    taken += 1;
                }
            }
        }
    };
    withhold(&seen_style, t_sc, Split::TestSC, &mut rng, &mut assigned);
    withhold(&seen_content, t_cc, Split::TestCC, &mut rng, &mut assigned);

    if n_test > 0 || !cfg.allow_empty_test {
        for (split, _) in PARTITION_WEIGHTS {
            if !assigned.contains(&Some(split)) {
                return Err(Error::InsufficientData(format!(
                    "partition {split} would be empty ({} fonts, {} entries)",
                    fonts.len(),
                    out.len()
                )));
            }
        }
    }

    let mut rest: Vec<usize> = (0..out.len()).filter(|&i| assigned[i].is_none()).collect();
    rng.shuffle(&mut rest);
    if cfg.pretrain > 0.0 {
        let eligible: Vec<usize> = rest.iter().copied().filter(|&i| out.entries[i].language != Language::Ko).collect();
        let n = round_usize(cfg.pretrain * eligible.len() as f64);
        for &i in eligible.iter().take(n) {
            assigned[i] = Some(Split::Pretrain);
        }
        rest.retain(|&i| assigned[i].is_none());
    }
    let denom = cfg.train + cfg.val;
    let n_val = if denom > 0.0 { round_usize(cfg.val / denom * rest.len() as f64) } else { 0 };
    for (k, &i) in rest.iter().enumerate() {
        assigned[i] = Some(if k < n_val { Split::Val } else { Split::Train });
    }
    for (e, s) in out.entries.iter_mut().zip(assigned) {
        e.split = s;
    }
    Ok(out)
}

/// Loads glyph images for manifest entries.
pub trait GlyphSource {
    fn load(&self, entry: &Entry) -> Result<GlyphImage>;
}

/// In-memory glyph store keyed by (style, charcode).
#[derive(Clone, Debug, Default)]
pub struct MemorySource {
    glyphs: BTreeMap<GlyphKey, GlyphImage>,
}

impl MemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: GlyphImage) {
        self.glyphs.insert(GlyphKey::new(image.style_id.clone(), image.charcode), image);
    }

    pub fn get(&self, key: &GlyphKey) -> Option<&GlyphImage> {
        self.glyphs.get(key)
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }
}

impl FromIterator<GlyphImage> for MemorySource {
    fn from_iter<T: IntoIterator<Item = GlyphImage>>(iter: T) -> Self {
        let mut s = Self::new();
        for img in iter {
            s.insert(img);
        }
        s
    }
}

impl GlyphSource for MemorySource {
    fn load(&self, entry: &Entry) -> Result<GlyphImage> {
        self.glyphs.get(&entry.key()).cloned().ok_or_else(|| Error::MissingReferenceImage {
            style_id: entry.style_id.clone(),
            charcode: entry.charcode,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub content: GlyphImage,
    pub style_ref: GlyphImage,
    pub target: GlyphImage,
}

/// Manifest positions of a sampled triplet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TripletIds {
    pub content: usize,
    pub style_ref: usize,
    pub target: usize,
}

impl TripletIds {
    pub fn load(&self, manifest: &DatasetManifest, source: &dyn GlyphSource) -> Result<Triplet> {
        Ok(Triplet {
            content: source.load(&manifest.entries[self.content])?,
            style_ref: source.load(&manifest.entries[self.style_ref])?,
            target: source.load(&manifest.entries[self.target])?,
        })
    }
}

/// Which splits feed each role of a triplet drawn for a given split.
struct Pools {
    content: &'static [Split],
    target: &'static [Split],
    /// `None` means the reference comes from the target's own split.
    reference: Option<&'static [Split]>,
}

const SEEN: &[Split] = &[Split::Train, Split::Val];

fn pools(split: Split) -> Result<Pools> {
    Ok(match split {
        Split::Train => Pools {
            content: &[Split::Train],
            target: &[Split::Train],
            reference: Some(&[Split::Train]),
        },
        Split::Val => Pools {
            content: SEEN,
            target: &[Split::Val],
            reference: Some(SEEN),
        },
        Split::TestSS => Pools {
            content: SEEN,
            target: &[Split::TestSS],
            reference: None,
        },
        Split::TestSC => Pools {
            content: SEEN,
            target: &[Split::TestSC],
            reference: Some(SEEN),
        },
        Split::TestCS => Pools {
            content: &[Split::TestCS],
            target: SEEN,
            reference: Some(SEEN),
        },
        Split::TestCC => Pools {
            content: &[Split::TestCC],
            target: SEEN,
            reference: Some(SEEN),
        },
        Split::Pretrain => return Err(Error::InvalidConfig("the pretrain split has no triplets".into())),
    })
}

fn in_pool(e: &Entry, pool: &[Split]) -> bool {
    e.split.is_some_and(|s| pool.contains(&s))
}

/// Precomputed candidate sets for drawing triplets from one split.
#[derive(Clone, Debug)]
pub struct TripletPlan {
    pub split: Split,
    /// Target entry with its matching content entries.
    targets: Vec<(usize, Vec<usize>)>,
    /// Reference candidates per style, in manifest order.
    references: BTreeMap<String, Vec<usize>>,
}

impl TripletPlan {
    pub fn new(manifest: &DatasetManifest, split: Split) -> Result<Self> {
        let p = pools(split)?;
        let mut content_by_char: BTreeMap<Charcode, Vec<usize>> = BTreeMap::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            if e.role == FontRole::Content && in_pool(e, p.content) {
                content_by_char.entry(e.charcode).or_default().push(i);
            }
        }
        let mut references: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut targets = Vec::new();
        for (i, e) in manifest.entries.iter().enumerate() {
            if e.role != FontRole::Style {
                continue;
            }
            let ref_pool = p.reference.unwrap_or(p.target);
            if in_pool(e, ref_pool) {
                references.entry(e.style_id.clone()).or_default().push(i);
            }
            if in_pool(e, p.target) {
                if let Some(c) = content_by_char.get(&e.charcode) {
                    targets.push((i, c.clone()));
                }
            }
        }
        targets.retain(|(t, _)| references.contains_key(&manifest.entries[*t].style_id));
        if targets.is_empty() {
            return Err(Error::Exhausted(format!("split {split} has no (content, style) pair")));
        }
        Ok(Self {
            split,
            targets,
            references,
        })
    }

    pub fn target_count(&self) -> usize {
        self.targets.len()
    }

    /// Reference candidates of `style_id` in this split's reference pool.
    pub fn reference_candidates(&self, style_id: &str) -> &[usize] {
        self.references.get(style_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Draws one triplet. With probability `p_ref_drop` the reference must
    /// show a different character than the target.
    pub fn sample(&self, manifest: &DatasetManifest, p_ref_drop: f64, rng: &mut SeededRng) -> Result<TripletIds> {
        let drop = rng.bernoulli(p_ref_drop);
        let refs_for = |t: usize| -> Vec<usize> {
            let e = &manifest.entries[t];
            self.reference_candidates(&e.style_id)
                .iter()
                .copied()
                .filter(|&r| !drop || manifest.entries[r].charcode != e.charcode)
                .collect()
        };
        let (target, contents) = &self.targets[rng.below(self.targets.len())];
        let mut chosen = (*target, contents, refs_for(*target));
        if chosen.2.is_empty() {
            let viable: Vec<&(usize, Vec<usize>)> = self.targets.iter().filter(|(t, _)| !refs_for(*t).is_empty()).collect();
            if viable.is_empty() {
                return Err(Error::Exhausted(format!(
                    "split {} has no reference differing from its targets",
                    self.split
                )));
            }
            let (t, c) = viable[rng.below(viable.len())];
            chosen = (*t, c, refs_for(*t));
        }
        let (target, contents, refs) = chosen;
        Ok(TripletIds {
            content: contents[rng.below(contents.len())],
            style_ref: refs[rng.below(refs.len())],
            target,
        })
    }
}

/// One-shot convenience around [`TripletPlan`].
pub fn sample_triplet(
    manifest: &DatasetManifest,
    split: Split,
    p_ref_drop: f64,
    source: &dyn GlyphSource,
    rng: &mut SeededRng,
) -> Result<Triplet> {
    let plan = TripletPlan::new(manifest, split)?;
    plan.sample(manifest, p_ref_drop, rng)?.load(manifest, source)
}

/// A deterministic evaluation case: content and target plus the pool the
/// reference may be picked from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalCase {
    pub content: usize,
    pub target: usize,
    /// Reference candidates with the target character already removed.
    pub references: Vec<usize>,
}

impl EvalCase {
    /// The reference used without retrieval: lowest code point available.
    pub fn fixed_reference(&self, manifest: &DatasetManifest) -> usize {
        *self
            .references
            .iter()
            .min_by_key(|&&r| manifest.entries[r].charcode)
            .expect("eval cases always carry references")
    }
}

/// Enumerates evaluation cases for a test partition. SS/SC iterate over the
/// held-out targets; CS/CC iterate over the held-out content glyphs and pair
/// each with a seen style font in rotation.
pub fn partition_cases(manifest: &DatasetManifest, partition: Split) -> Result<Vec<EvalCase>> {
    if !partition.is_test() {
        return Err(Error::InvalidConfig(format!("{partition} is not a test partition")));
    }
    let p = pools(partition)?;
    let ref_pool = p.reference.unwrap_or(p.target);
    let mut refs: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut targets_by_char: BTreeMap<Charcode, Vec<usize>> = BTreeMap::new();
    let mut content_by_char: BTreeMap<Charcode, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        match e.role {
            FontRole::Style => {
                if in_pool(e, ref_pool) {
                    refs.entry(&e.style_id).or_default().push(i);
                }
                if in_pool(e, p.target) {
                    targets_by_char.entry(e.charcode).or_default().push(i);
                }
            }
            FontRole::Content => {
                if in_pool(e, p.content) {
                    content_by_char.entry(e.charcode).or_default().push(i);
                }
            }
        }
    }
    let make = |content: usize, target: usize| -> Option<EvalCase> {
        let t = &manifest.entries[target];
        let references: Vec<usize> = refs
            .get(t.style_id.as_str())?
            .iter()
            .copied()
            .filter(|&r| manifest.entries[r].charcode != t.charcode)
            .collect();
        (!references.is_empty()).then_some(EvalCase {
            content,
            target,
            references,
        })
    };
    let mut cases = Vec::new();
    match partition {
        Split::TestSS | Split::TestSC => {
            for (i, e) in manifest.entries.iter().enumerate() {
                if e.split == Some(partition) && e.role == FontRole::Style {
                    if let Some(&c) = content_by_char.get(&e.charcode).and_then(|v| v.first()) {
                        cases.extend(make(c, i));
                    }
                }
            }
        }
        _ => {
            let mut turn = 0usize;
            for (i, e) in manifest.entries.iter().enumerate() {
                if e.split == Some(partition) && e.role == FontRole::Content {
                    if let Some(ts) = targets_by_char.get(&e.charcode) {
                        let t = ts[turn % ts.len()];
                        turn += 1;
                        cases.extend(make(i, t));
                    }
                }
            }
        }
    }
    if cases.is_empty() {
        return Err(Error::EmptyPartition(partition.partition_label().unwrap_or("?").to_string()));
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(fonts: usize, chars: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for f in 0..fonts {
            for c in 0..chars {
                let cc = Charcode(0x4E00 + c as u32);
                entries.push(Entry::new(cc, format!("font{f:02}"), format!("font{f:02}/{}.png", cc.hex())));
            }
        }
        DatasetManifest::new(entries).unwrap()
    }

    #[test]
    fn apportion_sums_to_total() {
        assert_eq!(apportion(100, &[80, 35, 20, 50]), alloc::vec![43, 19, 11, 27]);
        assert_eq!(apportion(7, &[1, 1, 1]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn every_partition_is_populated() {
        let m = build_splits(&grid(10, 100), &SplitConfig::with_fractions(0.8, 0.1, 0.1, 7)).unwrap();
        for s in Split::TESTS {
            assert!(m.count(s) > 0, "{s}");
        }
        assert!(m.entries.iter().all(|e| e.split.is_some()));
    }

    #[test]
    fn train_only_needs_flag() {
        let cfg = SplitConfig::with_fractions(1.0, 0.0, 0.0, 1);
        assert!(matches!(build_splits(&grid(4, 5), &cfg), Err(Error::InsufficientData(_))));
        let cfg = SplitConfig {
            allow_empty_test: true,
            ..cfg
        };
        let m = build_splits(&grid(4, 5), &cfg).unwrap();
        assert_eq!(m.count(Split::Train), 20);
    }

    #[test]
    fn pretrain_split_never_holds_korean() {
        let mut m = grid(6, 20);
        for e in m.entries.iter_mut().step_by(3) {
            e.language = Language::Ko;
        }
        let cfg = SplitConfig {
            pretrain: 0.5,
            ..SplitConfig::with_fractions(0.8, 0.1, 0.1, 3)
        };
        let m = build_splits(&m, &cfg).unwrap();
        assert!(m.count(Split::Pretrain) > 0);
        assert!(m.in_split(Split::Pretrain).all(|e| e.language != Language::Ko));
    }
}
