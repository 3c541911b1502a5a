//! Interaction logs: loading, k-core filtering, chronological splits.
//!
//! Raw user/item ids are arbitrary strings; they are remapped to dense
//! 0-based ids in first-appearance order as soon as a file is loaded and the
//! mapping is kept so outputs can be translated back.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
}

/// Bidirectional raw-label <-> dense-id map, dense ids assigned in
/// first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct IdMap {
    index: HashMap<String, u32>,
    labels: Vec<String>,
}

impl IdMap {
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.index.insert(raw.to_string(), id);
        self.labels.push(raw.to_string());
        id
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// In file order; duplicates are preserved.
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Build a dataset from already-ordered (user, item, timestamp) rows.
    pub fn from_raw_rows<S: AsRef<str>>(rows: &[(S, S, i64)]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::Data("dataset contains no interactions".into()));
        }
        let mut users = IdMap::default();
        let mut items = IdMap::default();
        let interactions = rows
            .iter()
            .map(|(u, i, t)| Interaction {
                user: users.intern(u.as_ref()),
                item: items.intern(i.as_ref()),
                timestamp: *t,
            })
            .collect();
        Ok(Dataset {
            interactions,
            users,
            items,
        })
    }
}

/// Column order of the input file. The rating column, where present, is
/// always ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnLayout {
    /// user, item, timestamp [, rating]
    UserItemTime,
    /// user, item, rating, timestamp (MovieLens u.data order)
    UserItemRatingTime,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct InputFormat {
    pub delimiter: char,
    pub layout: ColumnLayout,
}

impl Default for InputFormat {
    fn default() -> Self {
        InputFormat {
            delimiter: '\t',
            layout: ColumnLayout::UserItemTime,
        }
    }
}

/// Load an interaction log. Blank lines are skipped; any other row that does
/// not parse is an error naming the 1-based line number.
pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Dataset> {
    let text = crate::error::read_file(path)?;
    let path_str = path.display().to_string();
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let mut interactions = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(format.delimiter).map(|f| f.trim()).collect();
        let (user_raw, item_raw, ts_raw) = match format.layout {
            ColumnLayout::UserItemTime => {
                if fields.len() < 3 {
                    return Err(parse_err(&path_str, idx, "expected at least 3 columns"));
                }
                (fields[0], fields[1], fields[2])
            }
            ColumnLayout::UserItemRatingTime => {
                if fields.len() < 4 {
                    return Err(parse_err(&path_str, idx, "expected at least 4 columns"));
                }
                (fields[0], fields[1], fields[3])
            }
        };
        if user_raw.is_empty() || item_raw.is_empty() {
            return Err(parse_err(&path_str, idx, "empty user or item id"));
        }
        let timestamp: i64 = ts_raw
            .parse()
            .map_err(|_| parse_err(&path_str, idx, &format!("bad timestamp {ts_raw:?}")))?;
        interactions.push(Interaction {
            user: users.intern(user_raw),
            item: items.intern(item_raw),
            timestamp,
        });
    }

    if interactions.is_empty() {
        return Err(Error::Data(format!("{path_str}: no interactions found")));
    }
    Ok(Dataset {
        interactions,
        users,
        items,
    })
}

fn parse_err(path: &str, line_idx: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        line: line_idx + 1,
        msg: msg.to_string(),
    }
}

/// Iteratively drop interactions of users with fewer than `min_user`
/// interactions and items with fewer than `min_item`, until a fixed point.
/// Surviving users/items are re-mapped to dense ids (first-appearance order);
/// the operation is idempotent.
pub fn filter_kcore(dataset: &Dataset, min_user: usize, min_item: usize) -> Result<Dataset> {
    if min_user == 0 || min_item == 0 {
        return Err(Error::Config(
            "k-core thresholds must be at least 1".into(),
        ));
    }
    let mut current: Vec<&Interaction> = dataset.interactions.iter().collect();
    loop {
        let mut user_counts: HashMap<UserId, usize> = HashMap::new();
        let mut item_counts: HashMap<ItemId, usize> = HashMap::new();
        for it in &current {
            *user_counts.entry(it.user).or_default() += 1;
            *item_counts.entry(it.item).or_default() += 1;
        }
        let next: Vec<&Interaction> = current
            .iter()
            .copied()
            .filter(|it| user_counts[&it.user] >= min_user && item_counts[&it.item] >= min_item)
            .collect();
        if next.is_empty() {
            return Err(Error::Data(format!(
                "k-core filtering (min_user={min_user}, min_item={min_item}) eliminated all interactions"
            )));
        }
        let done = next.len() == current.len();
        current = next;
        if done {
            break;
        }
    }

    // compact ids over the survivors, preserving raw labels
    let mut users = IdMap::default();
    let mut items = IdMap::default();
    let interactions = current
        .into_iter()
        .map(|it| Interaction {
            user: users.intern(dataset.users.label(it.user)),
            item: items.intern(dataset.items.label(it.item)),
            timestamp: it.timestamp,
        })
        .collect();
    Ok(Dataset {
        interactions,
        users,
        items,
    })
}

/// One user's chronological split: everything before the test window is
/// training history, the last `n` before the target form the black-box input,
/// and the final interaction is the prediction target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub train: Vec<ItemId>,
    pub input: Vec<ItemId>,
    pub target: ItemId,
}

#[derive(Debug, Clone)]
pub struct SplitDataset {
    /// Input sequence length (test_len - 1).
    pub n: usize,
    /// Size of the dense user id space (including dropped users).
    pub n_users: usize,
    /// Size of the dense item id space.
    pub n_items: usize,
    /// Retained users only, keyed by dense user id.
    pub splits: BTreeMap<UserId, UserSplit>,
    /// Users with fewer than test_len + 1 interactions.
    pub dropped_users: Vec<UserId>,
    pub user_labels: Vec<String>,
    pub item_labels: Vec<String>,
}

impl SplitDataset {
    /// Chronological training sequences (user, items) sorted by user id.
    pub fn train_sequences(&self) -> Vec<(UserId, Vec<ItemId>)> {
        self.splits
            .iter()
            .map(|(&u, s)| (u, s.train.clone()))
            .collect()
    }

    pub fn retained_users(&self) -> usize {
        self.splits.len()
    }
}

/// Sort each user's interactions by timestamp (stable, so ties keep file
/// order), reserve the last `test_len` as input + target and the rest as
/// training history. Users without at least one training interaction are
/// dropped.
pub fn chronological_split(dataset: &Dataset, test_len: usize, n: usize) -> Result<SplitDataset> {
    if n == 0 {
        return Err(Error::Config("input length n must be at least 1".into()));
    }
    if test_len != n + 1 {
        return Err(Error::Config(format!(
            "test_len ({test_len}) must equal n + 1 ({})",
            n + 1
        )));
    }

    let mut per_user: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for it in &dataset.interactions {
        per_user
            .entry(it.user)
            .or_default()
            .push((it.timestamp, it.item));
    }

    let mut splits = BTreeMap::new();
    let mut dropped_users = Vec::new();
    for (user, mut events) in per_user {
        if events.len() < test_len + 1 {
            dropped_users.push(user);
            continue;
        }
        events.sort_by_key(|&(ts, _)| ts); // stable: ties keep file order
        let items: Vec<ItemId> = events.into_iter().map(|(_, i)| i).collect();
        let cut = items.len() - test_len;
        splits.insert(
            user,
            UserSplit {
                train: items[..cut].to_vec(),
                input: items[cut..cut + n].to_vec(),
                target: items[cut + n],
            },
        );
    }
    if splits.is_empty() {
        return Err(Error::Data(format!(
            "no user has at least {} interactions; nothing to split",
            test_len + 1
        )));
    }

    Ok(SplitDataset {
        n,
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        splits,
        dropped_users,
        user_labels: dataset.users.labels().to_vec(),
        item_labels: dataset.items.labels().to_vec(),
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SplitManifest {
    n: usize,
    n_users: usize,
    n_items: usize,
    retained_users: usize,
    dropped_users: Vec<UserId>,
    train_interactions: usize,
    test_interactions: usize,
}

impl SplitDataset {
    /// Persist as manifest.json + splits.tsv + users.tsv + items.tsv.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = SplitManifest {
            n: self.n,
            n_users: self.n_users,
            n_items: self.n_items,
            retained_users: self.splits.len(),
            dropped_users: self.dropped_users.clone(),
            train_interactions: self.splits.values().map(|s| s.train.len()).sum(),
            test_interactions: self.splits.len() * (self.n + 1),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;

        let mut out = Vec::new();
        for (user, split) in &self.splits {
            for &item in &split.train {
                writeln!(out, "{user}\t{item}\ttrain").unwrap();
            }
            for &item in &split.input {
                writeln!(out, "{user}\t{item}\tinput").unwrap();
            }
            writeln!(out, "{user}\t{}\ttarget", split.target).unwrap();
        }
        fs::write(dir.join("splits.tsv"), out)?;

        write_labels(&dir.join("users.tsv"), &self.user_labels)?;
        write_labels(&dir.join("items.tsv"), &self.item_labels)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<SplitDataset> {
        let manifest: SplitManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let path = dir.join("splits.tsv");
        let text = fs::read_to_string(&path)?;
        let path_str = path.display().to_string();

        let mut splits: BTreeMap<UserId, UserSplit> = BTreeMap::new();
        #[allow(clippy::type_complexity)] // per-user (train, input, target) accumulator
        let mut raw: BTreeMap<UserId, (Vec<ItemId>, Vec<ItemId>, Option<ItemId>)> =
            BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(&path_str, idx, "expected 3 columns"));
            }
            let user: UserId = fields[0]
                .parse()
                .map_err(|_| parse_err(&path_str, idx, "bad user id"))?;
            let item: ItemId = fields[1]
                .parse()
                .map_err(|_| parse_err(&path_str, idx, "bad item id"))?;
            let entry = raw.entry(user).or_default();
            match fields[2] {
                "train" => entry.0.push(item),
                "input" => entry.1.push(item),
                "target" => entry.2 = Some(item),
                other => {
                    return Err(parse_err(&path_str, idx, &format!("bad role {other:?}")));
                }
            }
        }
        for (user, (train, input, target)) in raw {
            let target = target
                .ok_or_else(|| Error::Data(format!("user {user} has no target row")))?;
            if input.len() != manifest.n {
                return Err(Error::Data(format!(
                    "user {user} input length {} != n {}",
                    input.len(),
                    manifest.n
                )));
            }
            splits.insert(
                user,
                UserSplit {
                    train,
                    input,
                    target,
                },
            );
        }

        Ok(SplitDataset {
            n: manifest.n,
            n_users: manifest.n_users,
            n_items: manifest.n_items,
            splits,
            dropped_users: manifest.dropped_users,
            user_labels: read_labels(&dir.join("users.tsv"))?,
            item_labels: read_labels(&dir.join("items.tsv"))?,
        })
    }
}

fn write_labels(path: &Path, labels: &[String]) -> Result<()> {
    let mut out = Vec::new();
    for (id, label) in labels.iter().enumerate() {
        writeln!(out, "{id}\t{label}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_labels(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(&path.display().to_string(), idx, "expected 2 columns"))?;
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(&path.display().to_string(), idx, "bad id"))?;
        if id != labels.len() {
            return Err(Error::Data(format!(
                "{}: ids out of order at line {}",
                path.display(),
                idx + 1
            )));
        }
        labels.push(label.to_string());
    }
    Ok(labels)
}
