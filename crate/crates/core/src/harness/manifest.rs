use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::probe::{LabeledSet, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One dataset item. `embedding_ref` names the vector in the embedding set
/// and defaults to `clip_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub clip_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl ManifestItem {
    pub fn new(clip_id: impl Into<String>, labels: &[&str]) -> Self {
        Self {
            clip_id: clip_id.into(),
            embedding_ref: None,
            audio_ref: None,
            labels: labels.iter().map(|l| l.to_string()).collect(),
            fold: None,
            split: None,
        }
    }

    pub fn with_fold(mut self, fold: u32) -> Self {
        self.fold = Some(fold);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = Some(split);
        self
    }

    pub fn embedding_key(&self) -> &str {
        self.embedding_ref.as_deref().unwrap_or(&self.clip_id)
    }
}

/// First line of a manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub task: TaskKind,
    pub class_names: Vec<String>,
    /// Carve this many validation items out of the training portion when the
    /// dataset has no validation split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carve_val: Option<usize>,
}

/// A labeled dataset description: a JSON header line followed by one JSON
/// item per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub items: Vec<ManifestItem>,
    class_index: HashMap<String, usize>,
}

impl DatasetManifest {
    pub fn new(header: ManifestHeader, items: Vec<ManifestItem>) -> Result<Self> {
        let mut class_index = HashMap::new();
        for (i, name) in header.class_names.iter().enumerate() {
            if name.is_empty() || class_index.insert(name.clone(), i).is_some() {
                return Err(Error::ManifestError(format!("class name `{name}` is empty or repeated")));
            }
        }
        let mut seen = HashSet::new();
        for item in &items {
            if !seen.insert(item.clip_id.as_str()) {
                return Err(Error::ManifestError(format!("duplicate clip id `{}`", item.clip_id)));
            }
            if let Some(l) = item.labels.iter().find(|l| !class_index.contains_key(*l)) {
                return Err(Error::ManifestError(format!(
                    "`{}` has unknown label `{l}`",
                    item.clip_id
                )));
            }
            let distinct: HashSet<_> = item.labels.iter().collect();
            if distinct.len() != item.labels.len() {
                return Err(Error::ManifestError(format!("`{}` repeats a label", item.clip_id)));
            }
            if header.task == TaskKind::Multiclass && item.labels.len() != 1 {
                return Err(Error::ManifestError(format!(
                    "multiclass item `{}` has {} labels",
                    item.clip_id,
                    item.labels.len()
                )));
            }
        }
        Ok(Self {
            header,
            items,
            class_index,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::ManifestError("manifest is empty".into()))?;
        let header: ManifestHeader = serde_json::from_str(first)
            .map_err(|e| Error::ManifestError(format!("header: {e}")))?;
        let items = lines
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|e| Error::ManifestError(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<_>>()?;
        Self::new(header, items)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ManifestError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for item in &self.items {
            out.push_str(&serde_json::to_string(item)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn task(&self) -> TaskKind {
        self.header.task
    }

    pub fn class_names(&self) -> &[String] {
        &self.header.class_names
    }

    pub fn label_indices(&self, item: &ManifestItem) -> Vec<usize> {
        item.labels.iter().map(|l| self.class_index[l]).collect()
    }

    pub fn fold_ids(&self) -> BTreeSet<u32> {
        self.items.iter().filter_map(|i| i.fold).collect()
    }

    /// Gathers embeddings for `items`, renamed to their manifest clip ids.
    pub fn labeled_set(&self, items: &[&ManifestItem], embeddings: &EmbeddingSet) -> Result<LabeledSet> {
        let mut set = EmbeddingSet::new(embeddings.dim());
        let mut labels = Vec::with_capacity(items.len());
        for item in items {
            let e = embeddings.get(item.embedding_key()).ok_or_else(|| {
                Error::ManifestError(format!("no embedding `{}` for `{}`", item.embedding_key(), item.clip_id))
            })?;
            set.push(Embedding {
                vector: e.vector.clone(),
                clip_id: item.clip_id.clone(),
                source_tag: e.source_tag.clone(),
            })?;
            labels.push(self.label_indices(item));
        }
        LabeledSet::new(set, labels)
    }
}
