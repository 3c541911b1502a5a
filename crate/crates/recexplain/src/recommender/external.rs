//! External black box: a precomputed lookup table mapping input sequences to
//! recommendations, for explaining models that live outside this process.
//!
//! File format: one row per sequence, `<comma-joined item ids>\t<item id>`,
//! using the dense ids from the exported split. A row whose key is `*` is an
//! optional fallback for sequences missing from the table.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::recommender::BlackBox;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExternalModel {
    pub entries: HashMap<String, ItemId>,
    pub fallback: Option<ItemId>,
    pub source: String,
}

pub fn external_model(path: &Path) -> Result<ExternalModel> {
    let text = crate::error::read_file(path)?;
    let source = path.display().to_string();
    let mut entries = HashMap::new();
    let mut fallback = None;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: &str| Error::Parse {
            path: source.clone(),
            line: idx + 1,
            msg: msg.to_string(),
        };
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected 2 tab-separated columns"))?;
        let item: ItemId = value
            .trim()
            .parse()
            .map_err(|_| parse_err(&format!("bad item id {value:?}")))?;
        let key = key.trim();
        if key == "*" {
            fallback = Some(item);
            continue;
        }
        for part in key.split(',') {
            part.trim()
                .parse::<ItemId>()
                .map_err(|_| parse_err(&format!("bad history item {part:?}")))?;
        }
        entries.insert(normalize_key(key), item);
    }
    if entries.is_empty() && fallback.is_none() {
        return Err(Error::Data(format!("{source}: empty lookup table")));
    }
    Ok(ExternalModel {
        entries,
        fallback,
        source,
    })
}

fn normalize_key(key: &str) -> String {
    key.split(',')
        .map(|p| p.trim())
        .collect::<Vec<_>>()
        .join(",")
}

impl BlackBox for ExternalModel {
    fn recommend(&self, _user: UserId, history: &[ItemId]) -> Result<ItemId> {
        let key = history
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",");
        if let Some(&item) = self.entries.get(&key) {
            return Ok(item);
        }
        self.fallback.ok_or_else(|| {
            Error::Model(format!(
                "external model {} has no entry for history [{key}]",
                self.source
            ))
        })
    }

    fn name(&self) -> &'static str {
        "external"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_table(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), content).unwrap();
        f
    }

    #[test]
    fn looks_up_exact_sequences() {
        let f = tmp_table("0,1,2\t7\n2, 1, 0\t5\n");
        let m = external_model(f.path()).unwrap();
        assert_eq!(m.recommend(0, &[0, 1, 2]).unwrap(), 7);
        // keys are normalized, so padded spaces in the file still match
        assert_eq!(m.recommend(3, &[2, 1, 0]).unwrap(), 5);
    }

    #[test]
    fn missing_history_errors_with_the_sequence() {
        let f = tmp_table("0,1\t3\n");
        let m = external_model(f.path()).unwrap();
        let err = m.recommend(0, &[9, 9]).unwrap_err();
        assert!(err.to_string().contains("[9,9]"), "got: {err}");
    }

    #[test]
    fn wildcard_row_is_a_fallback() {
        let f = tmp_table("0,1\t3\n*\t2\n");
        let m = external_model(f.path()).unwrap();
        assert_eq!(m.recommend(0, &[0, 1]).unwrap(), 3);
        assert_eq!(m.recommend(0, &[5, 5]).unwrap(), 2);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let f = tmp_table("0,1\t3\nnot-a-key\t4\n");
        match external_model(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
    }
}
