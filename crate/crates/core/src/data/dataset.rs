//! Story CSV ingestion and train/dev/test splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Commenting,
    Ogling,
    Groping,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Commenting, Category::Ogling, Category::Groping];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Commenting => "commenting",
            Category::Ogling => "ogling",
            Category::Groping => "groping",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "commenting" | "comment" => Ok(Category::Commenting),
            "ogling" | "staring" | "ogling/staring" => Ok(Category::Ogling),
            "groping" | "touching" | "groping/touching" => Ok(Category::Groping),
            other => Err(Error::InvalidInput(format!(
                "unknown category {other:?} (expected commenting, ogling or groping)"
            ))),
        }
    }
}

/// Subset of the three categories, one bit per [`Category`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelSet(u8);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    pub const ALL: LabelSet = LabelSet(0b111);

    pub fn from_bits(bits: u8) -> Self {
        LabelSet(bits & 0b111)
    }

    pub fn from_flags(flags: [bool; 3]) -> Self {
        let mut s = LabelSet::EMPTY;
        for (c, on) in Category::ALL.iter().zip(flags) {
            if on {
                s.insert(*c);
            }
        }
        s
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn contains(self, c: Category) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn insert(&mut self, c: Category) {
        self.0 |= 1 << c.index();
    }

    pub fn flags(self) -> [bool; 3] {
        Category::ALL.map(|c| self.contains(c))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Size of the symmetric difference.
    pub fn hamming_distance(self, other: LabelSet) -> usize {
        (self.0 ^ other.0).count_ones() as usize
    }
}

/// Single-label (one category vs. the rest) or multi-label classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "category")]
pub enum Task {
    Single(Category),
    Multi,
}

impl Task {
    pub fn num_outputs(self) -> usize {
        match self {
            Task::Single(_) => 2,
            Task::Multi => 3,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Single(c) => write!(f, "single:{c}"),
            Task::Multi => f.write_str("multi"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Story {
    /// Zero-based data-row index in the source file.
    pub id: usize,
    pub text: String,
    pub location: Option<String>,
    pub labels: LabelSet,
}

impl Story {
    pub fn new(id: usize, text: impl Into<String>, labels: LabelSet) -> Self {
        Story {
            id,
            text: text.into(),
            location: None,
            labels,
        }
    }

    /// Binary class for a single-label task: 1 when the story carries `category`.
    pub fn class(&self, category: Category) -> usize {
        usize::from(self.labels.contains(category))
    }
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub stories: Vec<Story>,
    /// Rows dropped because their description was blank.
    pub skipped: usize,
}

struct Columns {
    description: usize,
    labels: [usize; 3],
    location: Option<usize>,
}

fn find_columns(path: &Path, headers: &csv::StringRecord) -> Result<Columns> {
    let lookup: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase(), i))
        .collect();
    let need = |name: &str| {
        lookup.get(name).copied().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            message: format!("missing required column {name:?}"),
        })
    };
    Ok(Columns {
        description: need("description")?,
        labels: [need("commenting")?, need("ogling")?, need("groping")?],
        location: lookup.get("location").copied(),
    })
}

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim() {
        "0" | "0.0" => Some(false),
        "1" | "1.0" => Some(true),
        _ => None,
    }
}

/// Reads a UTF-8 CSV with a `description,commenting,ogling,groping[,location]` header.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<LoadedDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
    let headers = reader.headers()?.clone();
    let cols = find_columns(path, &headers)?;
    let mut stories = Vec::new();
    let mut skipped = 0;
    for (id, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let text = record.get(cols.description).unwrap_or("");
        if text.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let mut flags = [false; 3];
        for (flag, &col) in flags.iter_mut().zip(&cols.labels) {
            let raw = record.get(col).unwrap_or("");
            *flag = parse_label(raw).ok_or_else(|| Error::Row {
                path: path.to_path_buf(),
                line,
                message: format!("unparseable label value {raw:?} in column {:?}", &headers[col]),
            })?;
        }
        let location = cols
            .location
            .and_then(|c| record.get(c))
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from);
        stories.push(Story {
            id,
            text: text.to_string(),
            location,
            labels: LabelSet::from_flags(flags),
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} rows with empty descriptions", path.display());
    }
    Ok(LoadedDataset { stories, skipped })
}

/// Writes stories in the same CSV layout [`load_dataset`] reads.
pub fn write_dataset(path: impl AsRef<Path>, stories: &[Story]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["description", "commenting", "ogling", "groping", "location"])?;
    for s in stories {
        let f = s.labels.flags().map(|b| if b { "1" } else { "0" });
        w.write_record([s.text.as_str(), f[0], f[1], f[2], s.location.as_deref().unwrap_or("")])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<Story>,
    pub dev: Vec<Story>,
    pub test: Vec<Story>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "dev" => Ok(SplitName::Dev),
            "test" => Ok(SplitName::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[Story] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }
}

/// Seeded 80/10/10 split, stratified by the full label combination.
pub fn stratified_split(stories: &[Story], seed: u64) -> Splits {
    let mut strata: BTreeMap<u8, Vec<&Story>> = BTreeMap::new();
    for s in stories {
        strata.entry(s.labels.bits()).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits = Splits::default();
    for (_, mut members) in strata {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_dev = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        let n_train = n - n_dev - n_test;
        for (i, s) in members.into_iter().enumerate() {
            let target = if i < n_train {
                &mut splits.train
            } else if i < n_train + n_dev {
                &mut splits.dev
            } else {
                &mut splits.test
            };
            target.push(s.clone());
        }
    }
    for part in [&mut splits.train, &mut splits.dev, &mut splits.test] {
        part.sort_by_key(|s| s.id);
    }
    splits
}

fn read_indices(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse::<usize>().map_err(|_| Error::Row {
                path: path.to_path_buf(),
                line: n as u64 + 1,
                message: format!("expected a story index, got {l:?}"),
            })
        })
        .collect()
}

/// Applies split files `train.txt`, `dev.txt`, `test.txt` (one story index per line).
pub fn apply_index_splits(stories: &[Story], dir: impl AsRef<Path>) -> Result<Splits> {
    let dir = dir.as_ref();
    let by_id: HashMap<usize, &Story> = stories.iter().map(|s| (s.id, s)).collect();
    let pick = |name: &str| -> Result<Vec<Story>> {
        let path = dir.join(name);
        read_indices(&path)?
            .into_iter()
            .map(|i| {
                by_id.get(&i).map(|s| (*s).clone()).ok_or_else(|| Error::Format {
                    path: path.clone(),
                    message: format!("story index {i} does not name a loaded story"),
                })
            })
            .collect()
    };
    Ok(Splits {
        train: pick("train.txt")?,
        dev: pick("dev.txt")?,
        test: pick("test.txt")?,
    })
}

/// How the splits of a run were obtained.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSource {
    /// `train.csv`, `dev.csv`, `test.csv` in one directory.
    SplitFiles(PathBuf),
    /// Index files applied to a single CSV.
    IndexFiles(PathBuf),
    Stratified { seed: u64 },
}

/// Resolves the train/dev/test splits for `data`.
///
/// `data` may be a directory holding `train.csv`/`dev.csv`/`test.csv`, or a single CSV.
/// For a single CSV, index files in `split_dir` (or in a `splits/` directory next to
/// the CSV) are used verbatim when present; otherwise a seeded stratified split is made.
pub fn resolve_splits(data: impl AsRef<Path>, split_dir: Option<&Path>, seed: u64) -> Result<(Splits, SplitSource)> {
    let data = data.as_ref();
    if !data.exists() {
        return Err(Error::io(data, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    if data.is_dir() {
        let load = |name: &str| load_dataset(data.join(name)).map(|d| d.stories);
        let splits = Splits {
            train: load("train.csv")?,
            dev: load("dev.csv")?,
            test: load("test.csv")?,
        };
        return Ok((splits, SplitSource::SplitFiles(data.to_path_buf())));
    }
    let stories = load_dataset(data)?.stories;
    let sibling = data.parent().map(|p| p.join("splits"));
    let dir = split_dir
        .map(Path::to_path_buf)
        .or_else(|| sibling.filter(|p| p.join("train.txt").exists()));
    match dir {
        Some(dir) => {
            let splits = apply_index_splits(&stories, &dir)?;
            Ok((splits, SplitSource::IndexFiles(dir)))
        }
        None => Ok((stratified_split(&stories, seed), SplitSource::Stratified { seed })),
    }
}
