//! Interaction ingestion, ID mapping and reproducible train/valid/test splits.
//!
//! Input files are UTF-8 delimited text with at least a user column and an
//! item column; any further columns (ratings, timestamps) are ignored because
//! the interaction signal is binary. Duplicate (user, item) pairs collapse to
//! their first occurrence before splitting, and vocabularies are built over
//! the full deduplicated set so every index appears in exactly one split.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

/// One raw (user, item) interaction as read from an input file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawInteraction {
    pub user_id: String,
    pub item_id: String,
}

/// Input file format. Both are line-oriented; only the delimiter differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tsv,
    Csv,
}

impl FileFormat {
    fn delimiter(self) -> char {
        match self {
            FileFormat::Tsv => '\t',
            FileFormat::Csv => ',',
        }
    }
}

/// ID-mapped interactions with disjoint train/valid/test splits.
///
/// Edge lists hold `(user_index, item_index)` pairs. Token vectors are the
/// index-to-token side of the vocabulary; `user_index`/`item_index` maps go
/// the other way.
#[derive(Debug, Clone)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    pub train_edges: Vec<(u32, u32)>,
    pub valid_edges: Vec<(u32, u32)>,
    pub test_edges: Vec<(u32, u32)>,
    pub user_tokens: Vec<String>,
    pub item_tokens: Vec<String>,
    pub user_index: HashMap<String, u32>,
    pub item_index: HashMap<String, u32>,
}

/// Reads deduplicated interactions in file order.
///
/// Rows need at least two delimited columns; extra columns are dropped.
/// Malformed rows (fewer than two columns, or an empty user/item field)
/// abort with the 1-based line number. Blank lines are skipped.
pub fn load_interactions(
    path: &Path,
    format: FileFormat,
    has_header: bool,
) -> Result<Vec<RawInteraction>> {
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let delim = format.delimiter();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if has_header && idx == 0 {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(delim);
        let user = fields.next().map(str::trim).unwrap_or("");
        let item = fields.next().map(str::trim);
        let item = match item {
            Some(it) => it,
            None => {
                return Err(Error::ParseRow {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("expected at least 2 columns, found 1: {line:?}"),
                })
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::ParseRow {
                path: path.to_path_buf(),
                line: idx + 1,
                msg: "empty user or item field".to_string(),
            });
        }
        let pair = RawInteraction {
            user_id: user.to_string(),
            item_id: item.to_string(),
        };
        if seen.insert((pair.user_id.clone(), pair.item_id.clone())) {
            out.push(pair);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Iteratively drops users and items with fewer than `k` interactions until
/// every remaining node has degree >= k. Order of survivors is preserved.
pub fn k_core_filter(interactions: &[RawInteraction], k: usize) -> Vec<RawInteraction> {
    if k <= 1 {
        return interactions.to_vec();
    }
    let mut kept: Vec<&RawInteraction> = interactions.iter().collect();
    loop {
        let mut udeg: HashMap<&str, usize> = HashMap::new();
        let mut ideg: HashMap<&str, usize> = HashMap::new();
        for r in &kept {
            *udeg.entry(r.user_id.as_str()).or_insert(0) += 1;
            *ideg.entry(r.item_id.as_str()).or_insert(0) += 1;
        }
        let before = kept.len();
        kept.retain(|r| udeg[r.user_id.as_str()] >= k && ideg[r.item_id.as_str()] >= k);
        if kept.len() == before {
            break;
        }
    }
    kept.into_iter().cloned().collect()
}

/// How interactions are assigned to splits.
#[derive(Debug, Clone, Copy, Default)]
pub struct SplitOptions {
    /// When true, split each user's interactions separately so that every
    /// user keeps roughly the requested fractions. Default is a global
    /// per-interaction draw.
    pub per_user: bool,
}

/// Global per-interaction split with a seeded uniform draw per interaction.
pub fn split_dataset(
    interactions: &[RawInteraction],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<InteractionDataset> {
    split_dataset_with(interactions, ratios, seed, SplitOptions::default())
}

pub fn split_dataset_with(
    interactions: &[RawInteraction],
    ratios: (f64, f64, f64),
    seed: u64,
    options: SplitOptions,
) -> Result<InteractionDataset> {
    if interactions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (rt, rv, rs) = ratios;
    let sum = rt + rv + rs;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadRatios { sum });
    }

    // Vocabulary over the full set, first-occurrence order.
    let mut user_tokens = Vec::new();
    let mut item_tokens = Vec::new();
    let mut user_index: HashMap<String, u32> = HashMap::new();
    let mut item_index: HashMap<String, u32> = HashMap::new();
    let mut edges: Vec<(u32, u32)> = Vec::with_capacity(interactions.len());
    for r in interactions {
        let u = *user_index.entry(r.user_id.clone()).or_insert_with(|| {
            user_tokens.push(r.user_id.clone());
            (user_tokens.len() - 1) as u32
        });
        let i = *item_index.entry(r.item_id.clone()).or_insert_with(|| {
            item_tokens.push(r.item_id.clone());
            (item_tokens.len() - 1) as u32
        });
        edges.push((u, i));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_edges = Vec::new();
    let mut valid_edges = Vec::new();
    let mut test_edges = Vec::new();
    if !options.per_user {
        for &e in &edges {
            let x: f64 = rng.random();
            if x < rt {
                train_edges.push(e);
            } else if x < rt + rv {
                valid_edges.push(e);
            } else {
                test_edges.push(e);
            }
        }
    } else {
        // Users processed in index order; each user's edges shuffled, then
        // cut at rounded ratio boundaries.
        let mut per_user: Vec<Vec<(u32, u32)>> = vec![Vec::new(); user_tokens.len()];
        for &e in &edges {
            per_user[e.0 as usize].push(e);
        }
        for list in per_user.iter_mut() {
            list.shuffle(&mut rng);
            let n = list.len();
            let b1 = ((rt * n as f64).round() as usize).min(n);
            let b2 = (((rt + rv) * n as f64).round() as usize).clamp(b1, n);
            train_edges.extend_from_slice(&list[..b1]);
            valid_edges.extend_from_slice(&list[b1..b2]);
            test_edges.extend_from_slice(&list[b2..]);
        }
    }

    Ok(InteractionDataset {
        n_users: user_tokens.len(),
        n_items: item_tokens.len(),
        train_edges,
        valid_edges,
        test_edges,
        user_tokens,
        item_tokens,
        user_index,
        item_index,
    })
}

impl InteractionDataset {
    /// Digest of both vocabularies, stored in checkpoints so that a model is
    /// only ever loaded against the index space it was trained on.
    pub fn vocab_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"graphau-vocab-v1");
        h.update((self.n_users as u64).to_le_bytes());
        h.update((self.n_items as u64).to_le_bytes());
        for t in &self.user_tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.update([1u8]);
        for t in &self.item_tokens {
            h.update(t.as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }

    pub fn edges_of(&self, split: Split) -> &[(u32, u32)] {
        match split {
            Split::Train => &self.train_edges,
            Split::Valid => &self.valid_edges,
            Split::Test => &self.test_edges,
        }
    }

    /// Writes the split manifest: `users.tsv` and `items.tsv` map dense
    /// indices to tokens (one `index<TAB>token` line each), and
    /// `train.tsv`/`valid.tsv`/`test.tsv` hold one `user<TAB>item` index
    /// pair per line.
    pub fn save_splits(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            f.write_all(body.as_bytes()).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })
        };
        let vocab_body = |tokens: &[String]| {
            let mut s = String::new();
            for (i, t) in tokens.iter().enumerate() {
                s.push_str(&format!("{i}\t{t}\n"));
            }
            s
        };
        let edge_body = |edges: &[(u32, u32)]| {
            let mut s = String::new();
            for (u, i) in edges {
                s.push_str(&format!("{u}\t{i}\n"));
            }
            s
        };
        write("users.tsv", vocab_body(&self.user_tokens))?;
        write("items.tsv", vocab_body(&self.item_tokens))?;
        write("train.tsv", edge_body(&self.train_edges))?;
        write("valid.tsv", edge_body(&self.valid_edges))?;
        write("test.tsv", edge_body(&self.test_edges))?;
        Ok(())
    }

    /// Reads a manifest written by [`InteractionDataset::save_splits`] and
    /// re-checks the structural invariants (dense indices, in-range edges,
    /// pairwise-disjoint splits).
    pub fn load_splits(dir: &Path) -> Result<InteractionDataset> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| Error::Io { path, source })
        };
        let parse_vocab = |name: &str, body: &str| -> Result<Vec<String>> {
            let mut tokens = Vec::new();
            for (ln, line) in body.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let (idx, tok) = line.split_once('\t').ok_or_else(|| Error::ParseRow {
                    path: dir.join(name),
                    line: ln + 1,
                    msg: "expected index<TAB>token".to_string(),
                })?;
                let idx: usize = idx.parse().map_err(|_| Error::ParseRow {
                    path: dir.join(name),
                    line: ln + 1,
                    msg: format!("bad index {idx:?}"),
                })?;
                if idx != tokens.len() {
                    return Err(Error::ParseRow {
                        path: dir.join(name),
                        line: ln + 1,
                        msg: format!("indices must be dense, expected {}", tokens.len()),
                    });
                }
                tokens.push(tok.to_string());
            }
            Ok(tokens)
        };
        let user_tokens = parse_vocab("users.tsv", &read("users.tsv")?)?;
        let item_tokens = parse_vocab("items.tsv", &read("items.tsv")?)?;
        let n_users = user_tokens.len();
        let n_items = item_tokens.len();
        let parse_edges = |name: &str, body: &str| -> Result<Vec<(u32, u32)>> {
            let mut edges = Vec::new();
            for (ln, line) in body.lines().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let bad = || Error::ParseRow {
                    path: dir.join(name),
                    line: ln + 1,
                    msg: format!("expected user<TAB>item indices: {line:?}"),
                };
                let (u, i) = line.split_once('\t').ok_or_else(bad)?;
                let u: u32 = u.parse().map_err(|_| bad())?;
                let i: u32 = i.parse().map_err(|_| bad())?;
                if (u as usize) >= n_users || (i as usize) >= n_items {
                    return Err(Error::ParseRow {
                        path: dir.join(name),
                        line: ln + 1,
                        msg: format!("edge ({u},{i}) out of range {n_users}x{n_items}"),
                    });
                }
                edges.push((u, i));
            }
            Ok(edges)
        };
        let train_edges = parse_edges("train.tsv", &read("train.tsv")?)?;
        let valid_edges = parse_edges("valid.tsv", &read("valid.tsv")?)?;
        let test_edges = parse_edges("test.tsv", &read("test.tsv")?)?;

        let mut all = HashSet::new();
        for (name, edges) in [
            ("train.tsv", &train_edges),
            ("valid.tsv", &valid_edges),
            ("test.tsv", &test_edges),
        ] {
            for &e in edges {
                if !all.insert(e) {
                    return Err(Error::ParseRow {
                        path: dir.join(name),
                        line: 0,
                        msg: format!("edge {e:?} appears in more than one split or twice"),
                    });
                }
            }
        }

        let user_index = user_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let item_index = item_tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(InteractionDataset {
            n_users,
            n_items,
            train_edges,
            valid_edges,
            test_edges,
            user_tokens,
            item_tokens,
            user_index,
            item_index,
        })
    }
}

/// Which split to read or evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(pairs: &[(&str, &str)]) -> Vec<RawInteraction> {
        pairs
            .iter()
            .map(|(u, i)| RawInteraction {
                user_id: u.to_string(),
                item_id: i.to_string(),
            })
            .collect()
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn duplicates_collapse_to_first_occurrence() {
        let f = write_temp("a\tx\na\tx\nb\ty\n");
        let got = load_interactions(f.path(), FileFormat::Tsv, false).unwrap();
        assert_eq!(got, raw(&[("a", "x"), ("b", "y")]));
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        match load_interactions(f.path(), FileFormat::Tsv, false) {
            Err(Error::EmptyDataset) => {}
            other => panic!("expected EmptyDataset, got {other:?}"),
        }
    }

    #[test]
    fn one_column_row_reports_its_line() {
        let f = write_temp("a\tx\njustone\nb\ty\n");
        match load_interactions(f.path(), FileFormat::Tsv, false) {
            Err(Error::ParseRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ParseRow, got {other:?}"),
        }
    }

    #[test]
    fn empty_field_reports_its_line() {
        let f = write_temp("a,x\n,y\n");
        match load_interactions(f.path(), FileFormat::Csv, false) {
            Err(Error::ParseRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ParseRow, got {other:?}"),
        }
    }

    #[test]
    fn csv_with_header_and_extra_columns() {
        let f = write_temp("user,item,rating,ts\na,x,5,123\nb,y,1,456\n");
        let got = load_interactions(f.path(), FileFormat::Csv, true).unwrap();
        assert_eq!(got, raw(&[("a", "x"), ("b", "y")]));
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let inter: Vec<RawInteraction> = (0..10)
            .map(|k| RawInteraction {
                user_id: format!("u{}", k % 4),
                item_id: format!("i{k}"),
            })
            .collect();
        let a = split_dataset(&inter, (0.6, 0.2, 0.2), 7).unwrap();
        let b = split_dataset(&inter, (0.6, 0.2, 0.2), 7).unwrap();
        assert_eq!(
            a.train_edges.len() + a.valid_edges.len() + a.test_edges.len(),
            10
        );
        assert_eq!(a.train_edges, b.train_edges);
        assert_eq!(a.valid_edges, b.valid_edges);
        assert_eq!(a.test_edges, b.test_edges);
        // Dense index space.
        assert_eq!(a.n_users, 4);
        assert_eq!(a.n_items, 10);
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let inter = raw(&[("a", "x")]);
        assert!(matches!(
            split_dataset(&inter, (0.6, 0.2, 0.1), 0),
            Err(Error::BadRatios { .. })
        ));
        assert!(matches!(
            split_dataset(&inter, (1.0, 0.0, 0.0), 0),
            Err(Error::BadRatios { .. })
        ));
    }

    // Monte-Carlo check of the splitter's expectation: over 100 seeds the
    // mean train fraction of 1000 interactions must sit near 0.6.
    #[test]
    fn split_fraction_matches_expectation() {
        let inter: Vec<RawInteraction> = (0..1000)
            .map(|k| RawInteraction {
                user_id: format!("u{}", k % 50),
                item_id: format!("i{}", k / 2),
            })
            .collect();
        let mut mean = 0.0;
        for seed in 0..100u64 {
            let ds = split_dataset(&inter, (0.6, 0.2, 0.2), seed).unwrap();
            mean += ds.train_edges.len() as f64 / 1000.0;
        }
        mean /= 100.0;
        assert!((mean - 0.6).abs() < 0.05, "mean train fraction {mean}");
    }

    #[test]
    fn per_user_split_keeps_fractions_per_user() {
        let mut pairs = Vec::new();
        for u in 0..20 {
            for i in 0..10 {
                pairs.push(RawInteraction {
                    user_id: format!("u{u}"),
                    item_id: format!("i{u}_{i}"),
                });
            }
        }
        let ds = split_dataset_with(&pairs, (0.6, 0.2, 0.2), 3, SplitOptions { per_user: true })
            .unwrap();
        let mut train_per_user = vec![0usize; ds.n_users];
        for &(u, _) in &ds.train_edges {
            train_per_user[u as usize] += 1;
        }
        assert!(train_per_user.iter().all(|&c| c == 6));
    }

    #[test]
    fn index_density() {
        let inter = raw(&[("a", "x"), ("b", "y"), ("c", "x")]);
        let ds = split_dataset(&inter, (0.6, 0.2, 0.2), 1).unwrap();
        let max_u = ds
            .train_edges
            .iter()
            .chain(&ds.valid_edges)
            .chain(&ds.test_edges)
            .map(|&(u, _)| u)
            .max()
            .unwrap() as usize;
        assert_eq!(max_u, ds.n_users - 1);
    }

    #[test]
    fn splits_roundtrip_through_manifest() {
        let inter: Vec<RawInteraction> = (0..40)
            .map(|k| RawInteraction {
                user_id: format!("user-{}", k % 7),
                item_id: format!("item {}", k % 11),
            })
            .collect();
        let ds = split_dataset(&inter, (0.6, 0.2, 0.2), 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save_splits(dir.path()).unwrap();
        let back = InteractionDataset::load_splits(dir.path()).unwrap();
        assert_eq!(back.n_users, ds.n_users);
        assert_eq!(back.n_items, ds.n_items);
        assert_eq!(back.train_edges, ds.train_edges);
        assert_eq!(back.valid_edges, ds.valid_edges);
        assert_eq!(back.test_edges, ds.test_edges);
        assert_eq!(back.vocab_hash(), ds.vocab_hash());
    }

    #[test]
    fn k_core_drops_low_degree_nodes() {
        // u0 has 2 interactions but i2 only 1, so (u0,i2) goes, which drops
        // u0 to degree 1 and removes it entirely.
        let inter = raw(&[
            ("u0", "i0"),
            ("u0", "i2"),
            ("u1", "i0"),
            ("u1", "i1"),
            ("u2", "i0"),
            ("u2", "i1"),
        ]);
        let kept = k_core_filter(&inter, 2);
        assert_eq!(
            kept,
            raw(&[("u1", "i0"), ("u1", "i1"), ("u2", "i0"), ("u2", "i1")])
        );
    }
}
