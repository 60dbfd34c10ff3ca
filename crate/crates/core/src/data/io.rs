//! TSV dataset files.
//!
//! * `interactions.tsv`: `user_id<TAB>item_id`
//! * `social.tsv`: `user_id<TAB>user_id`
//! * `user_features.tsv` / `item_features.tsv`: `id<TAB>f1,f2,...`
//! * `id_map.tsv`: `user|item<TAB>original_id<TAB>dense_id`
//!
//! Lines starting with `#` and blank lines are ignored. Ids are arbitrary
//! tokens; they are densified in numeric order when every id is an unsigned
//! integer and in lexicographic order otherwise.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::Array2;
use sha2::{Digest, Sha256};

use super::{Features, InteractionGraph, SocialGraph};
use crate::error::{LsirError, Result};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const SOCIAL_FILE: &str = "social.tsv";
pub const USER_FEATURES_FILE: &str = "user_features.tsv";
pub const ITEM_FEATURES_FILE: &str = "item_features.tsv";
pub const ID_MAP_FILE: &str = "id_map.tsv";

#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub interactions: PathBuf,
    pub social: Option<PathBuf>,
    pub user_features: Option<PathBuf>,
    pub item_features: Option<PathBuf>,
}

impl DatasetPaths {
    /// Standard file names inside `dir`; optional files are used only when
    /// they exist.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        DatasetPaths {
            interactions: dir.join(INTERACTIONS_FILE),
            social: opt(SOCIAL_FILE),
            user_features: opt(USER_FEATURES_FILE),
            item_features: opt(ITEM_FEATURES_FILE),
        }
    }
}

/// Dense id <-> original token mapping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IdMap {
    pub fn identity(num_users: usize, num_items: usize) -> Self {
        IdMap {
            users: (0..num_users).map(|u| u.to_string()).collect(),
            items: (0..num_items).map(|i| i.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub duplicate_interactions: usize,
    pub duplicate_social_edges: usize,
    pub self_loops: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub graph: InteractionGraph,
    pub social: SocialGraph,
    pub id_map: IdMap,
    pub stats: LoadStats,
}

struct Line<'a> {
    no: usize,
    fields: Vec<&'a str>,
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LsirError::io(path, e))
}

fn data_lines<'a>(path: &Path, text: &'a str, arity: usize) -> Result<Vec<Line<'a>>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != arity || fields.iter().any(|f| f.is_empty()) {
            return Err(LsirError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: format!("expected {arity} tab-separated fields, found `{line}`"),
            });
        }
        out.push(Line { no: idx + 1, fields });
    }
    Ok(out)
}

fn densify(ids: impl IntoIterator<Item = String>) -> (Vec<String>, HashMap<String, usize>) {
    let mut ids: Vec<String> = ids.into_iter().collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    }
    let index = ids
        .iter()
        .enumerate()
        .map(|(k, s)| (s.clone(), k))
        .collect();
    (ids, index)
}

struct FeatureRows {
    path: PathBuf,
    rows: Vec<(usize, String, Vec<f64>)>,
}

fn parse_features(path: &Path) -> Result<FeatureRows> {
    let text = read_file(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for line in data_lines(path, &text, 2)? {
        let values: std::result::Result<Vec<f64>, _> =
            line.fields[1].split(',').map(|v| v.trim().parse::<f64>()).collect();
        let values = values.map_err(|e| LsirError::Parse {
            path: path.to_path_buf(),
            line: line.no,
            msg: format!("bad feature value: {e}"),
        })?;
        if *width.get_or_insert(values.len()) != values.len() {
            return Err(LsirError::Parse {
                path: path.to_path_buf(),
                line: line.no,
                msg: format!(
                    "feature row has {} values, earlier rows have {}",
                    values.len(),
                    width.unwrap()
                ),
            });
        }
        rows.push((line.no, line.fields[0].to_string(), values));
    }
    Ok(FeatureRows {
        path: path.to_path_buf(),
        rows,
    })
}

fn assemble_features(
    rows: Option<&FeatureRows>,
    ids: &[String],
    index: &HashMap<String, usize>,
) -> Result<Features> {
    let Some(rows) = rows else {
        return Ok(Features::Identity(ids.len()));
    };
    let width = rows.rows.first().map_or(0, |r| r.2.len());
    let mut x = Array2::zeros((ids.len(), width));
    let mut seen = vec![false; ids.len()];
    for (line, id, values) in &rows.rows {
        let k = index[id];
        if seen[k] {
            return Err(LsirError::Parse {
                path: rows.path.clone(),
                line: *line,
                msg: format!("duplicate feature row for `{id}`"),
            });
        }
        seen[k] = true;
        for (j, v) in values.iter().enumerate() {
            x[[k, j]] = *v;
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(LsirError::Input(format!(
            "{}: no feature row for id `{}`",
            rows.path.display(),
            ids[k]
        )));
    }
    Ok(Features::Dense(x))
}

/// Loads a dataset, densifying ids. Users and items are the ids found in the
/// interactions file together with those listed in the feature files.
pub fn load_dataset(paths: &DatasetPaths) -> Result<LoadedDataset> {
    let text = read_file(&paths.interactions)?;
    let inter = data_lines(&paths.interactions, &text, 2)?;

    let user_rows = paths.user_features.as_deref().map(parse_features).transpose()?;
    let item_rows = paths.item_features.as_deref().map(parse_features).transpose()?;

    let user_tokens = inter
        .iter()
        .map(|l| l.fields[0].to_string())
        .chain(user_rows.iter().flat_map(|r| r.rows.iter().map(|x| x.1.clone())));
    let item_tokens = inter
        .iter()
        .map(|l| l.fields[1].to_string())
        .chain(item_rows.iter().flat_map(|r| r.rows.iter().map(|x| x.1.clone())));
    let (users, user_index) = densify(user_tokens);
    let (items, item_index) = densify(item_tokens);

    let user_features = assemble_features(user_rows.as_ref(), &users, &user_index)?;
    let item_features = assemble_features(item_rows.as_ref(), &items, &item_index)?;

    let pairs = inter
        .iter()
        .map(|l| (user_index[l.fields[0]], item_index[l.fields[1]]));
    let (graph, duplicate_interactions) =
        InteractionGraph::from_pairs(users.len(), items.len(), pairs, user_features, item_features)?;
    if duplicate_interactions > 0 {
        info!(
            "{}: dropped {duplicate_interactions} duplicate interaction lines",
            paths.interactions.display()
        );
    }

    let mut stats = LoadStats {
        duplicate_interactions,
        ..LoadStats::default()
    };
    let social = match &paths.social {
        None => SocialGraph::empty(users.len()),
        Some(path) => {
            let text = read_file(path)?;
            let mut edges = Vec::new();
            for line in data_lines(path, &text, 2)? {
                let mut ends = [0usize; 2];
                for (slot, tok) in ends.iter_mut().zip(&line.fields) {
                    *slot = *user_index.get(*tok).ok_or_else(|| LsirError::Reference {
                        path: path.clone(),
                        line: line.no,
                        id: tok.to_string(),
                    })?;
                }
                if ends[0] == ends[1] {
                    stats.self_loops += 1;
                    continue;
                }
                edges.push((ends[0].min(ends[1]), ends[0].max(ends[1])));
            }
            let raw = edges.len();
            let social = SocialGraph::from_edges(users.len(), edges, true)?;
            stats.duplicate_social_edges = raw - social.num_edges();
            if stats.duplicate_social_edges > 0 {
                info!(
                    "{}: dropped {} duplicate social edges",
                    path.display(),
                    stats.duplicate_social_edges
                );
            }
            if stats.self_loops > 0 {
                warn!("{}: ignored {} self-loops", path.display(), stats.self_loops);
            }
            social
        }
    };

    Ok(LoadedDataset {
        graph,
        social,
        id_map: IdMap { users, items },
        stats,
    })
}

pub fn write_id_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut out = String::from("# kind\toriginal_id\tdense_id\n");
    for (k, id) in map.users.iter().enumerate() {
        let _ = writeln!(out, "user\t{id}\t{k}");
    }
    for (k, id) in map.items.iter().enumerate() {
        let _ = writeln!(out, "item\t{id}\t{k}");
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_id_map(path: &Path) -> Result<IdMap> {
    let text = read_file(path)?;
    let mut map = IdMap::default();
    for line in data_lines(path, &text, 3)? {
        let bad = |msg: &str| LsirError::Parse {
            path: path.to_path_buf(),
            line: line.no,
            msg: msg.to_string(),
        };
        let dense: usize = line.fields[2].parse().map_err(|_| bad("dense id is not an integer"))?;
        let list = match line.fields[0] {
            "user" => &mut map.users,
            "item" => &mut map.items,
            _ => return Err(bad("kind must be `user` or `item`")),
        };
        if dense != list.len() {
            return Err(bad("dense ids must be listed in order"));
        }
        list.push(line.fields[1].to_string());
    }
    Ok(map)
}

fn features_tsv(x: &Array2<f64>, ids: &[String]) -> String {
    let mut out = String::new();
    for (row, id) in x.rows().into_iter().zip(ids) {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{id}\t{}", vals.join(","));
    }
    out
}

/// Writes a dataset in the TSV layout `load_dataset` reads. Identity features
/// are not written (a missing file means one-hot features).
pub fn write_dataset(
    dir: &Path,
    graph: &InteractionGraph,
    social: &SocialGraph,
    id_map: &IdMap,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LsirError::io(dir, e))?;
    let mut inter = String::new();
    for (u, i) in graph.pairs() {
        let _ = writeln!(inter, "{}\t{}", id_map.users[u], id_map.items[i]);
    }
    write_atomic(&dir.join(INTERACTIONS_FILE), inter.as_bytes())?;

    let mut soc = String::new();
    for (u, v) in social.edges() {
        let _ = writeln!(soc, "{}\t{}", id_map.users[u], id_map.users[v]);
    }
    write_atomic(&dir.join(SOCIAL_FILE), soc.as_bytes())?;

    if let Features::Dense(x) = &graph.user_features {
        write_atomic(&dir.join(USER_FEATURES_FILE), features_tsv(x, &id_map.users).as_bytes())?;
    }
    if let Features::Dense(x) = &graph.item_features {
        write_atomic(&dir.join(ITEM_FEATURES_FILE), features_tsv(x, &id_map.items).as_bytes())?;
    }
    Ok(())
}

/// SHA-256 over the dataset files (names and bytes), hex encoded.
pub fn dataset_hash(paths: &DatasetPaths) -> Result<String> {
    let mut hasher = Sha256::new();
    let files = [
        ("interactions", Some(&paths.interactions)),
        ("social", paths.social.as_ref()),
        ("user_features", paths.user_features.as_ref()),
        ("item_features", paths.item_features.as_ref()),
    ];
    for (name, path) in files {
        hasher.update(name.as_bytes());
        match path {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| LsirError::io(p, e))?;
                hasher.update((bytes.len() as u64).to_le_bytes());
                hasher.update(&bytes);
            }
            None => hasher.update(b"<none>"),
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Writes via a temporary sibling file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LsirError::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| LsirError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LsirError::io(path, e))
}
